"""Randomised checks of the bounded-gradient argument for sigmoid networks.

With a softmax/cross-entropy head the output error p - y lies in (-1, 1).
Going one layer down multiplies by at most (fan-out * max|w| * max sigma'),
i.e. n_{l+1} * 1 * 0.25, and weight gradients multiply by an activation in
[0, 1]. The product of these factors is the bound reported per layer. The
looser count "sum of the neurons after the layer" is reported beside it.
"""

from dataclasses import dataclass, field
import logging
import math

import numpy as np

from .exceptions import AssumptionViolation, SpecError
from .flcore import ModelParams, ModelSpec, backprop_cnn, backprop_fc, one_hot
from .seeding import STREAM_BOUNDS, derive_rng

logger = logging.getLogger(__name__)

SIGMOID_SLOPE_MAX = 0.25
HEAD_TOLERANCE = 1e-6
PRODUCT_FORMULA = "D_L = 1; D_l = 0.25 * n_(l+1) * D_(l+1); |dC/dw^l| <= D_l * max|a^(l-1)|, max|a| = 1"
SUM_FORMULA = "S_l = max(1, sum of widths of the layers after l)"
CNN_FORMULA = (
    "head: |dC/dw| < 1; conv: 0.25 * n_classes * pooled_positions * max|x| "
    "(literal count bound: n_classes)"
)


@dataclass(frozen=True)
class LayerBound:
    layer: str
    param: str
    product_bound: float
    sum_bound: float


@dataclass(frozen=True)
class BoundRow:
    layer: str
    param: str
    observed_max: float
    product_bound: float
    sum_bound: float

    @property
    def within_product(self) -> bool:
        return self.observed_max <= self.product_bound

    @property
    def within_sum(self) -> bool:
        return self.observed_max <= self.sum_bound


@dataclass
class BoundReport:
    architecture: str
    formula: str
    rows: list = field(default_factory=list)
    delta_min: float = math.inf
    delta_max: float = -math.inf
    unit_fraction: float = 0.0
    n_trials: int = 0
    violations: int = 0
    flags: dict = field(default_factory=dict)

    @property
    def valid(self) -> bool:
        return all(self.flags.values())

    @property
    def delta_in_unit(self) -> bool:
        return -1.0 < self.delta_min and self.delta_max < 1.0

    @property
    def holds(self) -> bool:
        return self.valid and self.violations == 0 and self.delta_in_unit

    def as_dict(self) -> dict:
        return {
            "architecture": self.architecture,
            "formula": self.formula,
            "n_trials": self.n_trials,
            "valid": self.valid,
            "holds": self.holds,
            "flags": dict(self.flags),
            "delta_range": [self.delta_min, self.delta_max],
            "unit_fraction": self.unit_fraction,
            "violations": self.violations,
            "rows": bound_rows(self),
        }


def bound_rows(report: BoundReport) -> list:
    return [
        {
            "layer": row.layer,
            "param": row.param,
            "observed_max": row.observed_max,
            "product_bound": row.product_bound,
            "sum_bound": row.sum_bound,
            "within_product": row.within_product,
            "within_sum": row.within_sum,
        }
        for row in report.rows
    ]


def _fc_bounds(spec: ModelSpec) -> list:
    widths = [int(np.prod(spec.input_shape))] + list(spec.hidden) + [spec.n_classes]
    layers = len(widths) - 1
    delta_bound = [0.0] * (layers + 1)
    delta_bound[layers] = 1.0
    for layer in range(layers - 1, 0, -1):
        delta_bound[layer] = SIGMOID_SLOPE_MAX * widths[layer + 1] * delta_bound[layer + 1]
    bounds = []
    for layer in range(1, layers + 1):
        after = float(max(1, sum(widths[layer + 1:])))
        for param in ("w", "b"):
            bounds.append(
                LayerBound(
                    layer=f"fc{layer}",
                    param=param,
                    product_bound=delta_bound[layer],
                    sum_bound=after,
                )
            )
    return bounds


def compute_bound_fc(spec: ModelSpec) -> list:
    if spec.architecture != "mlp":
        raise SpecError("compute_bound_fc needs an mlp model.")
    if spec.hidden and spec.activation != "sigmoid":
        raise AssumptionViolation(
            f"Gradient bounds assume sigmoid hidden layers, got {spec.activation}."
        )
    return _fc_bounds(spec)


def _cnn_bounds(spec: ModelSpec) -> list:
    _channels, height, width = spec.conv_output_shape()
    pooled = height * width
    conv = SIGMOID_SLOPE_MAX * spec.n_classes * pooled
    literal = float(spec.n_classes)
    return [
        LayerBound("conv1", "w", conv, literal),
        LayerBound("conv1", "b", conv, literal),
        LayerBound("fc1", "w", 1.0, 1.0),
        LayerBound("fc1", "b", 1.0, 1.0),
    ]


def compute_bound_cnn(spec: ModelSpec) -> list:
    if spec.architecture != "cnn" or len(spec.conv_channels) != 1 or spec.hidden:
        raise SpecError("The convolutional bound covers one conv layer, one pool and a softmax head.")
    if spec.activation != "sigmoid":
        raise AssumptionViolation(f"Gradient bounds assume a sigmoid conv layer, got {spec.activation}.")
    return _cnn_bounds(spec)


def _random_params(spec, rng, weight_bound):
    arrays = {
        name: rng.uniform(-weight_bound, weight_bound, size=shape)
        for name, shape in spec.layer_shapes()
    }
    return ModelParams(spec=spec, arrays=arrays)


def _draw_inputs(spec, rng, batch_size, inputs):
    if inputs is None:
        return rng.random((batch_size,) + spec.input_shape)
    picked = rng.integers(0, len(inputs), size=batch_size)
    return np.asarray(inputs, dtype=np.float64)[picked].reshape((batch_size,) + spec.input_shape)


def _is_softmax_error(output_delta, y) -> bool:
    """p - y with p a probability row: p in [0, 1] and summing to one."""
    p = output_delta + y
    return bool(np.all((p >= 0) & (p <= 1)) and np.allclose(p.sum(axis=1), 1.0, atol=HEAD_TOLERANCE))


def _run_trials(spec, bounds, backprop, n_trials, seed, weight_bound, batch_size, flags, inputs=None):
    observed = {(bound.layer, bound.param): 0.0 for bound in bounds}
    limits = {(bound.layer, bound.param): bound.product_bound for bound in bounds}
    report = BoundReport(architecture=spec.architecture, formula="", n_trials=int(n_trials))
    in_unit = total = 0
    largest_weight = 0.0
    inputs_in_unit = softmax_head = True
    for trial in range(int(n_trials)):
        rng = derive_rng(seed, STREAM_BOUNDS, trial)
        params = _random_params(spec, rng, weight_bound)
        x = _draw_inputs(spec, rng, batch_size, inputs)
        y = one_hot(rng.integers(0, spec.n_classes, size=batch_size), spec.n_classes, dtype=np.float64)
        result = backprop(params, (x, y))
        inputs_in_unit &= bool(np.all((x >= 0) & (x <= 1)))
        softmax_head &= _is_softmax_error(result.output_delta, y)

        largest_weight = max(largest_weight, max(float(np.abs(a).max()) for a in params.arrays.values()))
        report.delta_min = min(report.delta_min, float(result.output_delta.min()))
        report.delta_max = max(report.delta_max, float(result.output_delta.max()))
        violated = False
        for name, grad in result.grads.items():
            layer, param = name.split(".")
            peak = float(np.abs(grad).max())
            observed[(layer, param)] = max(observed[(layer, param)], peak)
            violated |= peak > limits[(layer, param)]
            in_unit += int(np.count_nonzero(np.abs(grad) < 1.0))
            total += grad.size
        report.violations += int(violated)

    flags["weights_in_unit"] = largest_weight < 1.0
    flags["inputs_in_unit"] = inputs_in_unit
    flags["softmax_cross_entropy_head"] = softmax_head
    report.flags = flags
    report.unit_fraction = in_unit / total if total else 0.0
    report.rows = [
        BoundRow(
            layer=bound.layer,
            param=bound.param,
            observed_max=observed[(bound.layer, bound.param)],
            product_bound=bound.product_bound,
            sum_bound=bound.sum_bound,
        )
        for bound in bounds
    ]
    if report.valid and report.violations:
        logger.warning("%d of %d trials exceeded the product bound.", report.violations, n_trials)
    for row in report.rows:
        if not row.within_sum:
            logger.info("%s.%s exceeds the neuron-count bound (%.4g > %.4g).",
                        row.layer, row.param, row.observed_max, row.sum_bound)
    if not report.valid:
        failed = sorted(name for name, ok in flags.items() if not ok)
        logger.warning("Bound assumptions do not hold: %s.", ", ".join(failed))
    return report


def check_empirical(
    spec: ModelSpec, n_trials: int, seed: int, *, weight_bound=1.0, batch_size=1, inputs=None
) -> BoundReport:
    """Random weights in (-b, b) against the fc bounds.

    Trial inputs are uniform in [0, 1) unless `inputs` supplies samples to draw
    from. Assumption violations are recorded in the report flags instead of
    raised.
    """
    if spec.architecture != "mlp":
        raise SpecError("check_empirical needs an mlp model.")
    flags = {"sigmoid_hidden": not spec.hidden or spec.activation == "sigmoid"}
    report = _run_trials(
        spec, _fc_bounds(spec), backprop_fc, n_trials, seed, weight_bound, batch_size, flags, inputs
    )
    report.formula = f"{PRODUCT_FORMULA}; {SUM_FORMULA}"
    return report


def check_cnn_bound(
    spec: ModelSpec, n_trials: int, seed: int, *, weight_bound=1.0, batch_size=1, inputs=None
) -> BoundReport:
    if spec.architecture != "cnn" or len(spec.conv_channels) != 1 or spec.hidden:
        raise SpecError("The convolutional bound covers one conv layer, one pool and a softmax head.")
    flags = {"sigmoid_hidden": spec.activation == "sigmoid"}
    report = _run_trials(
        spec, _cnn_bounds(spec), backprop_cnn, n_trials, seed, weight_bound, batch_size, flags, inputs
    )
    report.formula = CNN_FORMULA
    return report


def default_spec(model: str, *, hidden=(16, 16)) -> ModelSpec:
    if model == "cnn":
        return ModelSpec(
            architecture="cnn",
            input_shape=(1, 8, 8),
            hidden=(),
            activation="sigmoid",
            conv_channels=(1,),
            kernel_size=3,
            padding="valid",
        )
    return ModelSpec(architecture="mlp", input_shape=(1, 8, 8), hidden=tuple(hidden), activation="sigmoid")
