"""Experiment configuration files and their validation.

Files are INI-like: `[section]` headers, `key = value` lines, `#`/`;`
comments, optional quotes, and dotted keys (`fl.clients = 10`) outside
sections. The parsed mapping is validated by DRF serializers.
"""

from dataclasses import asdict, dataclass, field, replace
from fractions import Fraction
import logging
from pathlib import Path

from django.conf import settings
from rest_framework import serializers

from .channel import ChannelConfig
from .datasets import DATASETS
from .exceptions import ConfigError
from .flcore import ACTIVATIONS, ARCHITECTURES, PADDINGS, ModelSpec
from .link import KINDS, LinkStrategy
from .modem import MODULATIONS

logger = logging.getLogger(__name__)


def _strip_quotes(value: str) -> str:
    if len(value) >= 2 and value[0] == value[-1] and value[0] in {"'", '"'}:
        return value[1:-1]
    return value


def parse_config_text(text: str) -> dict:
    sections: dict = {}
    current = None
    for number, raw_line in enumerate(text.splitlines(), start=1):
        line = raw_line.strip()
        if not line or line[0] in "#;":
            continue
        if line.startswith("[") and line.endswith("]"):
            current = line[1:-1].strip().lower()
            if not current:
                raise ConfigError(f"Line {number}: empty section name.")
            sections.setdefault(current, {})
            continue
        if "=" not in line:
            raise ConfigError(f"Line {number}: expected 'key = value'.")
        key, value = line.split("=", 1)
        key = key.strip().lower()
        if not key:
            raise ConfigError(f"Line {number}: missing key.")
        section = current
        if "." in key:
            section, key = key.split(".", 1)
        if section is None:
            raise ConfigError(f"Line {number}: key '{key}' is outside any section.")
        sections.setdefault(section, {})[key] = _strip_quotes(value.strip())
    return sections


def load_config_file(path) -> dict:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"Cannot read config file '{path}': {exc}") from exc
    return parse_config_text(text)


class IntegerListField(serializers.Field):
    default_error_messages = {"invalid": "Expected a comma-separated list of positive integers."}

    def to_internal_value(self, data):
        items = data.split(",") if isinstance(data, str) else data
        try:
            values = tuple(int(str(item).strip()) for item in items if str(item).strip())
        except (TypeError, ValueError):
            self.fail("invalid")
        if any(value < 1 for value in values):
            self.fail("invalid")
        return values

    def to_representation(self, value):
        return list(value)


class FractionField(serializers.Field):
    default_error_messages = {"invalid": "Expected a fraction such as 1/2 or 0.5."}

    def to_internal_value(self, data):
        try:
            return Fraction(str(data).strip()).limit_denominator(10_000)
        except (ValueError, ZeroDivisionError):
            self.fail("invalid")

    def to_representation(self, value):
        return str(value)


class StrictSerializer(serializers.Serializer):
    def to_internal_value(self, data):
        if isinstance(data, dict):
            unknown = sorted(set(data) - set(self.fields))
            if unknown:
                raise serializers.ValidationError({key: "Unknown key." for key in unknown})
        return super().to_internal_value(data)


class FLSerializer(StrictSerializer):
    clients = serializers.IntegerField(min_value=1, default=10)
    rounds = serializers.IntegerField(min_value=1, default=200)
    lr = serializers.FloatField(min_value=0.0, default=0.01)
    model = serializers.ChoiceField(choices=ARCHITECTURES, default="cnn")
    activation = serializers.ChoiceField(choices=ACTIVATIONS, default="relu")
    shards_per_client = serializers.IntegerField(min_value=1, default=2)
    seed = serializers.IntegerField(min_value=0, default=0)
    dataset = serializers.ChoiceField(choices=DATASETS, default="digits")
    batch_size = serializers.IntegerField(min_value=0, default=0)
    partition = serializers.ChoiceField(choices=("noniid", "iid"), default="noniid")
    test_fraction = serializers.FloatField(min_value=0.05, max_value=0.9, default=0.2)
    idx_train_images = serializers.CharField(required=False, allow_blank=True, default="")
    idx_train_labels = serializers.CharField(required=False, allow_blank=True, default="")
    hidden = IntegerListField(default=(32,))
    conv_channels = IntegerListField(default=(8, 16))
    kernel_size = serializers.IntegerField(min_value=1, default=3)
    padding = serializers.ChoiceField(choices=PADDINGS, default="same")

    def validate_lr(self, value):
        if value <= 0:
            raise serializers.ValidationError("Learning rate must be positive.")
        return value

    def validate(self, attrs):
        if attrs["dataset"] == "idx" and not (attrs["idx_train_images"] and attrs["idx_train_labels"]):
            raise serializers.ValidationError("The idx dataset needs idx_train_images and idx_train_labels.")
        return attrs


class ChannelSerializer(StrictSerializer):
    alpha = serializers.FloatField(default=3.0)
    distance_m = serializers.FloatField(default=10.0)
    tx_power = serializers.FloatField(default=1.0)
    snr_db = serializers.FloatField(default=10.0)
    block_len_bits = serializers.IntegerField(min_value=1, default=648)

    def validate(self, attrs):
        for key in ("alpha", "distance_m", "tx_power"):
            if attrs[key] <= 0:
                raise serializers.ValidationError({key: "Must be positive."})
        return attrs


class LinkSerializer(StrictSerializer):
    strategy = serializers.CharField(default="approximate")
    code_rate = FractionField(default=Fraction(1, 2))
    codeword_len = serializers.IntegerField(min_value=1, default=648)
    correct_capability = serializers.IntegerField(min_value=0, default=7)
    max_retries = serializers.IntegerField(min_value=0, default=100)
    interleaver_depth = serializers.IntegerField(min_value=1, default=32)

    def validate_strategy(self, value):
        kinds = tuple(dict.fromkeys(item.strip().lower() for item in value.split(",") if item.strip()))
        if not kinds:
            raise serializers.ValidationError("Name at least one strategy.")
        unknown = [kind for kind in kinds if kind not in KINDS]
        if unknown:
            raise serializers.ValidationError(f"Unknown strategy: {', '.join(unknown)}.")
        return kinds

    def validate(self, attrs):
        rate = attrs["code_rate"]
        if not 0 < rate <= 1:
            raise serializers.ValidationError({"code_rate": "Must be in (0, 1]."})
        if (attrs["codeword_len"] * rate).denominator != 1:
            raise serializers.ValidationError(
                {"code_rate": "codeword_len x code_rate must be a whole number of bits."}
            )
        return attrs


class ModemSerializer(StrictSerializer):
    modulation = serializers.ChoiceField(choices=tuple(MODULATIONS), default="qpsk")


class ExperimentSectionSerializer(StrictSerializer):
    target_accuracy = serializers.FloatField(min_value=0.0, max_value=1.0, default=0.80)
    symbol_rate_hz = serializers.FloatField(required=False, allow_null=True, default=None)
    label = serializers.CharField(required=False, allow_blank=True, max_length=100, default="")
    output_dir = serializers.CharField(required=False, allow_blank=True, default="")


class ExperimentConfigSerializer(StrictSerializer):
    fl = FLSerializer()
    channel = ChannelSerializer()
    link = LinkSerializer()
    modem = ModemSerializer()
    experiment = ExperimentSectionSerializer()

    def to_internal_value(self, data):
        data = dict(data or {})
        for section in self.fields:
            data[section] = data.get(section) or {}
        return super().to_internal_value(data)


@dataclass(frozen=True)
class FLConfig:
    clients: int = 10
    rounds: int = 200
    lr: float = 0.01
    model: str = "cnn"
    activation: str = "relu"
    shards_per_client: int = 2
    seed: int = 0
    dataset: str = "digits"
    batch_size: int = 0
    partition: str = "noniid"
    test_fraction: float = 0.2
    idx_train_images: str = ""
    idx_train_labels: str = ""
    hidden: tuple = (32,)
    conv_channels: tuple = (8, 16)
    kernel_size: int = 3
    padding: str = "same"

    def model_spec(self, input_shape, n_classes) -> ModelSpec:
        return ModelSpec(
            architecture=self.model,
            input_shape=tuple(input_shape),
            n_classes=n_classes,
            hidden=self.hidden,
            activation=self.activation,
            conv_channels=self.conv_channels,
            kernel_size=self.kernel_size,
            padding=self.padding,
        )


@dataclass(frozen=True)
class ExperimentConfig:
    fl: FLConfig = field(default_factory=FLConfig)
    channel: ChannelConfig = field(default_factory=ChannelConfig)
    link: LinkStrategy = field(default_factory=LinkStrategy)
    strategies: tuple = ("approximate",)
    modulation: str = "qpsk"
    target_accuracy: float = 0.80
    symbol_rate_hz: float | None = None
    label: str = ""
    output_dir: str = ""

    @property
    def seed(self) -> int:
        return self.fl.seed

    @property
    def rounds(self) -> int:
        return self.fl.rounds

    def strategy(self, kind: str) -> LinkStrategy:
        return replace(self.link, kind=kind)

    def with_overrides(self, *, strategies=None, seed=None, rounds=None, snr_db=None, modulation=None, label=None):
        fl = self.fl
        if seed is not None:
            fl = replace(fl, seed=int(seed))
        if rounds is not None:
            fl = replace(fl, rounds=int(rounds))
        channel = self.channel if snr_db is None else self.channel.with_snr(snr_db)
        return replace(
            self,
            fl=fl,
            channel=channel,
            strategies=tuple(strategies) if strategies else self.strategies,
            modulation=modulation or self.modulation,
            label=self.label if label is None else label,
        )

    def to_dict(self) -> dict:
        link = asdict(self.link)
        link.pop("kind")
        link["code_rate"] = str(self.link.code_rate)
        link["strategy"] = ",".join(self.strategies)
        fl = asdict(self.fl)
        fl["hidden"] = list(self.fl.hidden)
        fl["conv_channels"] = list(self.fl.conv_channels)
        return {
            "fl": fl,
            "channel": asdict(self.channel),
            "link": link,
            "modem": {"modulation": self.modulation},
            "experiment": {
                "target_accuracy": self.target_accuracy,
                "symbol_rate_hz": self.symbol_rate_hz,
                "label": self.label,
                "output_dir": self.output_dir,
            },
        }


def build_config(data) -> ExperimentConfig:
    serializer = ExperimentConfigSerializer(data=data)
    if not serializer.is_valid():
        raise ConfigError(serializer.errors)
    values = serializer.validated_data
    link = dict(values["link"])
    strategies = link.pop("strategy")
    experiment = values["experiment"]
    return ExperimentConfig(
        fl=FLConfig(**values["fl"]),
        channel=ChannelConfig(**values["channel"]),
        link=LinkStrategy(kind=strategies[0], **link),
        strategies=strategies,
        modulation=values["modem"]["modulation"],
        target_accuracy=experiment["target_accuracy"],
        symbol_rate_hz=experiment["symbol_rate_hz"],
        label=experiment["label"],
        output_dir=experiment["output_dir"] or str(settings.APPROXFL_OUTPUT_DIR),
    )


def load_experiment_config(path=None) -> ExperimentConfig:
    path = Path(path or settings.APPROXFL_DEFAULT_CONFIG)
    config = build_config(load_config_file(path))
    logger.debug("Loaded experiment config from %s.", path)
    return config
