import math
import uuid

from django.db import models, transaction
from django.utils import timezone


def _finite_or_none(value):
    if value is None:
        return None
    value = float(value)
    return value if math.isfinite(value) else None


class ExperimentManager(models.Manager):
    def start(self, config, strategy):
        return self.create(
            label=config.label,
            strategy=strategy,
            modulation=config.modulation,
            snr_db=config.channel.snr_db,
            seed=config.seed,
            target_accuracy=config.target_accuracy,
            config=config.to_dict(),
        )


class Experiment(models.Model):
    STATUS_RUNNING = "running"
    STATUS_COMPLETED = "completed"
    STATUS_FAILED = "failed"

    STATUS_CHOICES = [
        (STATUS_RUNNING, "Running"),
        (STATUS_COMPLETED, "Completed"),
        (STATUS_FAILED, "Failed"),
    ]

    STRATEGY_CHOICES = [
        ("ecrt", "Error correction and retransmission"),
        ("naive", "Naive erroneous"),
        ("approximate", "Approximate"),
        ("ideal", "Error-free"),
    ]

    id = models.UUIDField(primary_key=True, default=uuid.uuid4, editable=False)
    label = models.CharField(max_length=100, blank=True, db_index=True)
    strategy = models.CharField(max_length=20, choices=STRATEGY_CHOICES)
    modulation = models.CharField(max_length=10)
    snr_db = models.FloatField()
    seed = models.PositiveIntegerField(default=0)
    target_accuracy = models.FloatField(default=0.8)
    config = models.JSONField(default=dict)
    status = models.CharField(max_length=20, choices=STATUS_CHOICES, default=STATUS_RUNNING)
    error = models.TextField(blank=True)
    rounds_completed = models.PositiveIntegerField(default=0)
    created_at = models.DateTimeField(auto_now_add=True)
    completed_at = models.DateTimeField(null=True, blank=True)

    objects = ExperimentManager()

    class Meta:
        ordering = ("-created_at",)

    def __str__(self):
        return f"{self.label or self.id} [{self.strategy}, {self.modulation} @ {self.snr_db:g} dB]"

    def append_reports(self, reports):
        records = [
            RoundRecord(
                experiment=self,
                round=report.round,
                accuracy=report.accuracy,
                loss=_finite_or_none(report.loss),
                symbols_used=report.symbols_used,
                cumulative_airtime=report.cumulative_airtime,
                retransmissions=report.retransmissions,
                raw_bit_errors=report.raw_bit_errors,
                residual_bit_errors=report.residual_bit_errors,
                in_unit_fraction=report.in_unit_fraction,
                client_stats=[
                    {
                        "client_id": client.client_id,
                        "raw_bit_errors": client.raw_bit_errors,
                        "residual_bit_errors": client.residual_bit_errors,
                        "symbols_used": client.symbols_used,
                        "retransmissions": client.retransmissions,
                    }
                    for client in report.clients
                ],
            )
            for report in reports
        ]
        if not records:
            return
        with transaction.atomic():
            RoundRecord.objects.bulk_create(records)
            self.rounds_completed = max(record.round for record in records)
            self.save(update_fields=["rounds_completed"])

    def mark_completed(self):
        self.status = self.STATUS_COMPLETED
        self.completed_at = timezone.now()
        self.save(update_fields=["status", "completed_at"])

    def mark_failed(self, error):
        self.status = self.STATUS_FAILED
        self.error = str(error)
        self.completed_at = timezone.now()
        self.save(update_fields=["status", "error", "completed_at"])

    def time_to_target(self):
        record = (
            self.rounds.filter(accuracy__gte=self.target_accuracy)
            .order_by("round")
            .values_list("cumulative_airtime", flat=True)
            .first()
        )
        return record


class RoundRecord(models.Model):
    experiment = models.ForeignKey(Experiment, on_delete=models.CASCADE, related_name="rounds")
    round = models.PositiveIntegerField()
    accuracy = models.FloatField()
    loss = models.FloatField(null=True, blank=True)
    symbols_used = models.BigIntegerField()
    cumulative_airtime = models.BigIntegerField()
    retransmissions = models.PositiveIntegerField(default=0)
    raw_bit_errors = models.BigIntegerField(default=0)
    residual_bit_errors = models.BigIntegerField(default=0)
    in_unit_fraction = models.FloatField(default=0.0)
    client_stats = models.JSONField(default=list)

    class Meta:
        ordering = ("round",)
        constraints = [
            models.UniqueConstraint(fields=("experiment", "round"), name="unique_round_per_experiment"),
        ]

    def __str__(self):
        return f"{self.experiment_id} round {self.round}"
