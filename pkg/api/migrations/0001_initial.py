import uuid

from django.db import migrations, models
import django.db.models.deletion


class Migration(migrations.Migration):

    initial = True

    dependencies = []

    operations = [
        migrations.CreateModel(
            name="Experiment",
            fields=[
                ("id", models.UUIDField(default=uuid.uuid4, editable=False, primary_key=True, serialize=False)),
                ("label", models.CharField(blank=True, db_index=True, max_length=100)),
                (
                    "strategy",
                    models.CharField(
                        choices=[
                            ("ecrt", "Error correction and retransmission"),
                            ("naive", "Naive erroneous"),
                            ("approximate", "Approximate"),
                            ("ideal", "Error-free"),
                        ],
                        max_length=20,
                    ),
                ),
                ("modulation", models.CharField(max_length=10)),
                ("snr_db", models.FloatField()),
                ("seed", models.PositiveIntegerField(default=0)),
                ("target_accuracy", models.FloatField(default=0.8)),
                ("config", models.JSONField(default=dict)),
                (
                    "status",
                    models.CharField(
                        choices=[("running", "Running"), ("completed", "Completed"), ("failed", "Failed")],
                        default="running",
                        max_length=20,
                    ),
                ),
                ("error", models.TextField(blank=True)),
                ("rounds_completed", models.PositiveIntegerField(default=0)),
                ("created_at", models.DateTimeField(auto_now_add=True)),
                ("completed_at", models.DateTimeField(blank=True, null=True)),
            ],
            options={
                "ordering": ("-created_at",),
            },
        ),
        migrations.CreateModel(
            name="RoundRecord",
            fields=[
                ("id", models.BigAutoField(auto_created=True, primary_key=True, serialize=False, verbose_name="ID")),
                ("round", models.PositiveIntegerField()),
                ("accuracy", models.FloatField()),
                ("loss", models.FloatField(blank=True, null=True)),
                ("symbols_used", models.BigIntegerField()),
                ("cumulative_airtime", models.BigIntegerField()),
                ("retransmissions", models.PositiveIntegerField(default=0)),
                ("raw_bit_errors", models.BigIntegerField(default=0)),
                ("residual_bit_errors", models.BigIntegerField(default=0)),
                ("in_unit_fraction", models.FloatField(default=0.0)),
                ("client_stats", models.JSONField(default=list)),
                (
                    "experiment",
                    models.ForeignKey(
                        on_delete=django.db.models.deletion.CASCADE,
                        related_name="rounds",
                        to="api.experiment",
                    ),
                ),
            ],
            options={
                "ordering": ("round",),
                "constraints": [
                    models.UniqueConstraint(fields=("experiment", "round"), name="unique_round_per_experiment"),
                ],
            },
        ),
    ]
