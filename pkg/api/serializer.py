from rest_framework import serializers

from simulator.modem import MODULATIONS

from .models import Experiment, RoundRecord


class SnrListField(serializers.Field):
    default_error_messages = {"invalid": "Expected a comma-separated list of SNR values in dB."}

    def to_internal_value(self, data):
        try:
            values = [float(item) for item in str(data).split(",") if item.strip()]
        except ValueError:
            self.fail("invalid")
        if not values:
            self.fail("invalid")
        return values

    def to_representation(self, value):
        return list(value)


class BerQuerySerializer(serializers.Serializer):
    mod = serializers.ChoiceField(choices=tuple(MODULATIONS), default="qpsk")
    snr_db = SnrListField(default=[10.0])
    seed = serializers.IntegerField(min_value=0, default=0)


class CodecQuerySerializer(serializers.Serializer):
    value = serializers.FloatField()


class BoundsQuerySerializer(serializers.Serializer):
    model = serializers.ChoiceField(choices=("mlp", "cnn"), default="mlp")
    seed = serializers.IntegerField(min_value=0, default=0)
    weight_bound = serializers.FloatField(min_value=0.0, default=1.0)


class RoundRecordSerializer(serializers.ModelSerializer):
    class Meta:
        model = RoundRecord
        fields = (
            "round",
            "accuracy",
            "loss",
            "symbols_used",
            "cumulative_airtime",
            "retransmissions",
            "raw_bit_errors",
            "residual_bit_errors",
            "in_unit_fraction",
            "client_stats",
        )


class ExperimentSerializer(serializers.ModelSerializer):
    class Meta:
        model = Experiment
        fields = (
            "id",
            "label",
            "strategy",
            "modulation",
            "snr_db",
            "seed",
            "status",
            "rounds_completed",
            "created_at",
            "completed_at",
        )


class ExperimentSummarySerializer(serializers.ModelSerializer):
    time_to_target = serializers.SerializerMethodField()

    class Meta:
        model = Experiment
        fields = ExperimentSerializer.Meta.fields + (
            "target_accuracy",
            "time_to_target",
            "config",
            "error",
        )

    def get_time_to_target(self, obj):
        return obj.time_to_target()
