"""FedSGD with hand-written forward/backward passes.

Every client computes a single gradient step on its local data; the server
aggregates the (possibly corrupted) gradients with weights |D_m|/|D| and
applies one SGD update. The passes are written against numpy directly so the
exact backpropagation recursions (output error p - y, the per-layer delta
recursion, max-pool routing to the window argmax, kernel gradients as
correlations with the input) are visible and testable.
"""

from dataclasses import dataclass, field
import logging
import math

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.special import expit, log_softmax

from .exceptions import ConfigError, SpecError
from .seeding import STREAM_BATCH, STREAM_INIT, STREAM_PARTITION, derive_rng

logger = logging.getLogger(__name__)

ARCHITECTURES = ("mlp", "cnn")
ACTIVATIONS = ("relu", "sigmoid")
PADDINGS = ("same", "valid")
POOL_SIZE = 2
DEFAULT_LEARNING_RATE = 0.01
WEIGHT_SUM_TOLERANCE = 1e-9


@dataclass(frozen=True)
class GradientTensor:
    values: np.ndarray
    client_id: int | None = None
    round: int | None = None

    def __post_init__(self):
        values = np.asarray(self.values)
        if values.dtype not in (np.float32, np.float64):
            values = values.astype(np.float32)
        object.__setattr__(self, "values", values.ravel())

    def __len__(self):
        return int(self.values.size)


@dataclass(frozen=True)
class ModelSpec:
    architecture: str = "mlp"
    input_shape: tuple = (1, 8, 8)
    n_classes: int = 10
    hidden: tuple = (32,)
    activation: str = "relu"
    conv_channels: tuple = (8, 16)
    kernel_size: int = 3
    padding: str = "same"

    def __post_init__(self):
        if self.architecture not in ARCHITECTURES:
            raise SpecError(f"Unknown architecture '{self.architecture}'.")
        if self.activation not in ACTIVATIONS:
            raise SpecError(f"Unknown activation '{self.activation}'.")
        if self.padding not in PADDINGS:
            raise SpecError(f"Unknown padding '{self.padding}'.")
        if self.n_classes < 2:
            raise SpecError("A classifier needs at least two classes.")
        if len(self.input_shape) != 3:
            raise SpecError("input_shape must be (channels, height, width).")
        object.__setattr__(self, "input_shape", tuple(int(v) for v in self.input_shape))
        object.__setattr__(self, "hidden", tuple(int(v) for v in self.hidden))
        object.__setattr__(self, "conv_channels", tuple(int(v) for v in self.conv_channels))
        if any(v < 1 for v in self.hidden + self.conv_channels):
            raise SpecError("Layer widths must be positive.")
        if self.architecture == "cnn" and not self.conv_channels:
            raise SpecError("A cnn needs at least one convolutional layer.")
        # Walk the shapes once so bad geometry fails at construction.
        self.layer_shapes()

    @property
    def conv_padding(self) -> int:
        return self.kernel_size // 2 if self.padding == "same" else 0

    def conv_output_shape(self) -> tuple:
        channels, height, width = self.input_shape
        pad = self.conv_padding
        for out_channels in self.conv_channels:
            height = height + 2 * pad - self.kernel_size + 1
            width = width + 2 * pad - self.kernel_size + 1
            if height < POOL_SIZE or width < POOL_SIZE:
                raise SpecError("Input is too small for the convolution stack.")
            if height % POOL_SIZE or width % POOL_SIZE:
                raise SpecError(
                    f"Feature map {height}x{width} is not divisible by the pool size {POOL_SIZE}."
                )
            channels, height, width = out_channels, height // POOL_SIZE, width // POOL_SIZE
        return channels, height, width

    def layer_shapes(self) -> list:
        shapes = []
        if self.architecture == "cnn":
            in_channels = self.input_shape[0]
            for index, out_channels in enumerate(self.conv_channels, start=1):
                kernel = (out_channels, in_channels, self.kernel_size, self.kernel_size)
                shapes.append((f"conv{index}.w", kernel))
                shapes.append((f"conv{index}.b", (out_channels,)))
                in_channels = out_channels
            fan_in = int(np.prod(self.conv_output_shape()))
        else:
            fan_in = int(np.prod(self.input_shape))
        widths = list(self.hidden) + [self.n_classes]
        for index, width in enumerate(widths, start=1):
            shapes.append((f"fc{index}.w", (width, fan_in)))
            shapes.append((f"fc{index}.b", (width,)))
            fan_in = width
        return shapes

    @property
    def n_params(self) -> int:
        return sum(int(np.prod(shape)) for _name, shape in self.layer_shapes())


@dataclass(frozen=True)
class ModelParams:
    spec: ModelSpec
    arrays: dict

    def __post_init__(self):
        for name, shape in self.spec.layer_shapes():
            array = self.arrays.get(name)
            if array is None or tuple(array.shape) != tuple(shape):
                raise SpecError(f"Parameter '{name}' must have shape {shape}.")

    def __getitem__(self, name):
        return self.arrays[name]

    @property
    def dtype(self):
        return next(iter(self.arrays.values())).dtype

    def flatten(self) -> np.ndarray:
        return np.concatenate([self.arrays[name].ravel() for name, _ in self.spec.layer_shapes()])

    @classmethod
    def from_flat(cls, spec: ModelSpec, vector, dtype=np.float32):
        vector = np.asarray(vector, dtype=dtype).ravel()
        if vector.size != spec.n_params:
            raise SpecError(f"Expected {spec.n_params} parameters, got {vector.size}.")
        arrays, offset = {}, 0
        for name, shape in spec.layer_shapes():
            size = int(np.prod(shape))
            arrays[name] = vector[offset:offset + size].reshape(shape).copy()
            offset += size
        return cls(spec=spec, arrays=arrays)

    def astype(self, dtype):
        return ModelParams(
            spec=self.spec,
            arrays={name: array.astype(dtype) for name, array in self.arrays.items()},
        )


@dataclass(frozen=True)
class Dataset:
    x: np.ndarray
    y: np.ndarray
    n_classes: int = 10

    def __len__(self):
        return int(self.y.size)


@dataclass(frozen=True)
class ClientDataset(Dataset):
    client_id: int = 0
    weight: float = 1.0
    classes: tuple = field(default_factory=tuple)


@dataclass(frozen=True)
class Backprop:
    loss: float
    grads: dict
    output_delta: np.ndarray


def one_hot(labels, n_classes, dtype=np.float32) -> np.ndarray:
    labels = np.asarray(labels, dtype=int).ravel()
    encoded = np.zeros((labels.size, n_classes), dtype=dtype)
    encoded[np.arange(labels.size), labels] = 1
    return encoded


def init_params(spec: ModelSpec, seed: int, *, dtype=np.float32, weight_bound=None) -> ModelParams:
    """Glorot-uniform weights and zero biases, or uniform(-b, b) for everything."""
    rng = derive_rng(seed, STREAM_INIT)
    arrays = {}
    for name, shape in spec.layer_shapes():
        if weight_bound is not None:
            arrays[name] = rng.uniform(-weight_bound, weight_bound, size=shape).astype(dtype)
            continue
        if name.endswith(".b"):
            arrays[name] = np.zeros(shape, dtype=dtype)
            continue
        receptive = int(np.prod(shape[2:])) if len(shape) == 4 else 1
        fan_in, fan_out = shape[1] * receptive, shape[0] * receptive
        limit = math.sqrt(6.0 / (fan_in + fan_out))
        arrays[name] = rng.uniform(-limit, limit, size=shape).astype(dtype)
    return ModelParams(spec=spec, arrays=arrays)


def _activate(z, activation):
    if activation == "sigmoid":
        return expit(z)
    return np.maximum(z, 0)


def _activation_slope(z, a, activation):
    if activation == "sigmoid":
        return a * (1 - a)
    return (z > 0).astype(z.dtype)


def _check_batch(params: ModelParams, batch):
    x, y = batch
    spec = params.spec
    x = np.asarray(x, dtype=params.dtype)
    if x.shape[0] == 0:
        raise SpecError("Batch is empty.")
    if x.size != x.shape[0] * int(np.prod(spec.input_shape)):
        raise SpecError(
            f"Batch samples of shape {x.shape[1:]} do not match model input {spec.input_shape}."
        )
    y = np.asarray(y)
    if y.ndim == 1:
        y = one_hot(y, spec.n_classes, dtype=params.dtype)
    if y.shape != (x.shape[0], spec.n_classes):
        raise SpecError(f"Labels of shape {y.shape} do not match {spec.n_classes} classes.")
    return x.reshape((x.shape[0],) + spec.input_shape), y.astype(params.dtype)


def _dense_forward(params, a, first_index, activation):
    spec = params.spec
    inputs, pre_activations = [], []
    layers = len(spec.hidden) + 1
    for index in range(first_index, first_index + layers):
        inputs.append(a)
        z = a @ params[f"fc{index}.w"].T + params[f"fc{index}.b"]
        pre_activations.append(z)
        last = index == first_index + layers - 1
        a = z if last else _activate(z, activation)
    return a, inputs, pre_activations


def _dense_backward(params, delta, inputs, pre_activations, first_index, activation, grads):
    layers = len(inputs)
    for offset in reversed(range(layers)):
        index = first_index + offset
        weights = params[f"fc{index}.w"]
        grads[f"fc{index}.w"] = delta.T @ inputs[offset]
        grads[f"fc{index}.b"] = delta.sum(axis=0)
        delta = delta @ weights
        if offset > 0:
            z = pre_activations[offset - 1]
            delta = delta * _activation_slope(z, inputs[offset], activation)
    return delta


def _softmax_head(logits, y):
    log_p = log_softmax(logits, axis=1)
    loss = float(-(y * log_p).sum(axis=1).mean())
    return loss, np.exp(log_p) - y


def _conv_forward(x, weights, bias, pad):
    k = weights.shape[-1]
    padded = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else x
    windows = sliding_window_view(padded, (k, k), axis=(2, 3))
    z = np.einsum("nchwpq,ocpq->nohw", windows, weights, optimize=True)
    return z + bias[None, :, None, None], padded


def _conv_backward(dz, padded, weights, pad):
    k = weights.shape[-1]
    windows = sliding_window_view(padded, (k, k), axis=(2, 3))
    dw = np.einsum("nohw,nchwpq->ocpq", dz, windows, optimize=True)
    db = dz.sum(axis=(0, 2, 3))
    # Full correlation of the output error with the flipped kernel.
    dz_padded = np.pad(dz, ((0, 0), (0, 0), (k - 1, k - 1), (k - 1, k - 1)))
    dz_windows = sliding_window_view(dz_padded, (k, k), axis=(2, 3))
    dx = np.einsum("nohwpq,ocpq->nchw", dz_windows, weights[:, :, ::-1, ::-1], optimize=True)
    if pad:
        dx = dx[:, :, pad:-pad, pad:-pad]
    return dw, db, dx


def max_pool(a):
    n, c, h, w = a.shape
    if h % POOL_SIZE or w % POOL_SIZE:
        raise SpecError(f"Feature map {h}x{w} is not divisible by the pool size {POOL_SIZE}.")
    windows = (
        a.reshape(n, c, h // 2, 2, w // 2, 2)
        .transpose(0, 1, 2, 4, 3, 5)
        .reshape(n, c, h // 2, w // 2, 4)
    )
    argmax = windows.argmax(axis=-1)
    pooled = np.take_along_axis(windows, argmax[..., None], axis=-1)[..., 0]
    return pooled, argmax


def max_pool_backward(d_pooled, argmax, shape):
    """Route each pooled error to the argmax cell of its window only."""
    n, c, h, w = shape
    routed = np.zeros((n, c, h // 2, w // 2, 4), dtype=d_pooled.dtype)
    np.put_along_axis(routed, argmax[..., None], d_pooled[..., None], axis=-1)
    return routed.reshape(n, c, h // 2, w // 2, 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(shape)


def backprop_fc(params: ModelParams, batch) -> Backprop:
    if params.spec.architecture != "mlp":
        raise SpecError("backprop_fc needs an mlp model.")
    x, y = _check_batch(params, batch)
    activation = params.spec.activation
    with np.errstate(over="ignore", invalid="ignore"):
        logits, inputs, pre = _dense_forward(params, x.reshape(x.shape[0], -1), 1, activation)
        loss, output_delta = _softmax_head(logits, y)
        grads = {}
        _dense_backward(params, output_delta / x.shape[0], inputs, pre, 1, activation, grads)
    return Backprop(loss=loss, grads=grads, output_delta=output_delta)


def backprop_cnn(params: ModelParams, batch) -> Backprop:
    spec = params.spec
    if spec.architecture != "cnn":
        raise SpecError("backprop_cnn needs a cnn model.")
    x, y = _check_batch(params, batch)
    n = x.shape[0]
    pad = spec.conv_padding
    activation = spec.activation
    grads, caches = {}, []
    with np.errstate(over="ignore", invalid="ignore"):
        a = x
        for index in range(1, len(spec.conv_channels) + 1):
            z, padded = _conv_forward(a, params[f"conv{index}.w"], params[f"conv{index}.b"], pad)
            activated = _activate(z, activation)
            a, argmax = max_pool(activated)
            caches.append((padded, z, activated, argmax))
        pooled_shape = a.shape
        first_fc = 1
        logits, inputs, pre = _dense_forward(params, a.reshape(n, -1), first_fc, activation)
        loss, output_delta = _softmax_head(logits, y)
        delta = _dense_backward(params, output_delta / n, inputs, pre, first_fc, activation, grads)
        delta = delta.reshape(pooled_shape)
        for index in reversed(range(1, len(spec.conv_channels) + 1)):
            padded, z, activated, argmax = caches[index - 1]
            routed = max_pool_backward(delta, argmax, activated.shape)
            dz = routed * _activation_slope(z, activated, activation)
            dw, db, delta = _conv_backward(dz, padded, params[f"conv{index}.w"], pad)
            grads[f"conv{index}.w"] = dw
            grads[f"conv{index}.b"] = db
    return Backprop(loss=loss, grads=grads, output_delta=output_delta)


def _as_gradient(params: ModelParams, result: Backprop) -> GradientTensor:
    flat = np.concatenate([result.grads[name].ravel() for name, _ in params.spec.layer_shapes()])
    return GradientTensor(values=flat.astype(params.dtype, copy=False))


def forward_backward_fc(params: ModelParams, batch):
    result = backprop_fc(params, batch)
    return result.loss, _as_gradient(params, result)


def forward_backward_cnn(params: ModelParams, batch):
    result = backprop_cnn(params, batch)
    return result.loss, _as_gradient(params, result)


def forward_backward(params: ModelParams, batch):
    if params.spec.architecture == "cnn":
        return forward_backward_cnn(params, batch)
    return forward_backward_fc(params, batch)


def predict(params: ModelParams, x) -> np.ndarray:
    spec = params.spec
    x = np.asarray(x, dtype=params.dtype).reshape((-1,) + spec.input_shape)
    with np.errstate(over="ignore", invalid="ignore"):
        a = x
        if spec.architecture == "cnn":
            for index in range(1, len(spec.conv_channels) + 1):
                z, _padded = _conv_forward(
                    a, params[f"conv{index}.w"], params[f"conv{index}.b"], spec.conv_padding
                )
                a, _argmax = max_pool(_activate(z, spec.activation))
        logits, _inputs, _pre = _dense_forward(params, a.reshape(a.shape[0], -1), 1, spec.activation)
    return logits


def evaluate(params: ModelParams, x, y) -> float:
    labels = np.asarray(y, dtype=int).ravel()
    if labels.size == 0:
        return 0.0
    predictions = predict(params, x).argmax(axis=1)
    return float(np.mean(predictions == labels))


def finite_gradient(gradient: GradientTensor):
    """Replace NaN with 0 and +/-Inf with the largest finite float32."""
    values = gradient.values
    bad = ~np.isfinite(values)
    replaced = int(np.count_nonzero(bad))
    if replaced:
        limit = np.finfo(np.float32).max
        values = np.nan_to_num(values.astype(np.float32), nan=0.0, posinf=limit, neginf=-limit)
    return (
        GradientTensor(values=values, client_id=gradient.client_id, round=gradient.round),
        replaced,
    )


def aggregate(gradients, weights, *, round=None) -> GradientTensor:
    if not gradients:
        raise ConfigError("Nothing to aggregate.")
    weights = np.asarray(weights, dtype=np.float64).ravel()
    if weights.size != len(gradients):
        raise ConfigError(f"Got {weights.size} weights for {len(gradients)} gradients.")
    if abs(weights.sum() - 1.0) > WEIGHT_SUM_TOLERANCE:
        raise ConfigError(f"Aggregation weights sum to {weights.sum():.12f}, not 1.")
    length = len(gradients[0])
    if any(len(gradient) != length for gradient in gradients):
        raise SpecError("All gradients must have the same length.")

    dtype = np.result_type(*(gradient.values.dtype for gradient in gradients))
    total = np.zeros(length, dtype=np.float64)
    for gradient, weight in zip(gradients, weights):
        values = gradient.values.astype(np.float64)
        values[~np.isfinite(values)] = 0.0
        total += weight * values
    limit = float(np.finfo(dtype).max)
    np.clip(total, -limit, limit, out=total)
    return GradientTensor(values=total.astype(dtype), round=round)


def global_update(params: ModelParams, gradient: GradientTensor, lr=DEFAULT_LEARNING_RATE) -> ModelParams:
    values = np.asarray(gradient.values, dtype=np.float64)
    if values.size != params.spec.n_params:
        raise SpecError(f"Gradient has {values.size} entries, model has {params.spec.n_params}.")
    limit = float(np.finfo(params.dtype).max)
    updated = params.flatten().astype(np.float64) - lr * values
    np.clip(updated, -limit, limit, out=updated)
    return ModelParams.from_flat(params.spec, updated, dtype=params.dtype)


def partition_noniid(dataset: Dataset, n_clients: int, shards_per_client: int, seed: int) -> list:
    """Give each client exactly `shards_per_client` label classes.

    Clients take consecutive slots of a seeded class permutation; every class
    is then split evenly among the clients holding it.
    """
    if n_clients < 1 or shards_per_client < 1:
        raise ConfigError("Need at least one client and one shard per client.")
    total = len(dataset)
    if n_clients == 1:
        return [
            ClientDataset(
                x=dataset.x,
                y=dataset.y,
                n_classes=dataset.n_classes,
                client_id=0,
                weight=1.0,
                classes=tuple(int(c) for c in np.unique(dataset.y)),
            )
        ]

    classes = np.unique(dataset.y)
    if shards_per_client > classes.size:
        raise ConfigError(
            f"Cannot give {shards_per_client} classes per client with {classes.size} classes."
        )
    if n_clients * shards_per_client < classes.size:
        raise ConfigError(
            f"{n_clients} clients x {shards_per_client} classes leaves some of the "
            f"{classes.size} classes unassigned."
        )

    rng = derive_rng(seed, STREAM_PARTITION)
    class_order = rng.permutation(classes)
    holders = {int(label): [] for label in classes}
    client_classes = []
    for client_id in range(n_clients):
        picked = [
            int(class_order[(client_id * shards_per_client + slot) % classes.size])
            for slot in range(shards_per_client)
        ]
        client_classes.append(tuple(sorted(picked)))
        for label in picked:
            holders[label].append(client_id)

    assigned = {client_id: [] for client_id in range(n_clients)}
    for label in sorted(holders):
        indices = np.flatnonzero(dataset.y == label)
        rng.shuffle(indices)
        for client_id, part in zip(holders[label], np.array_split(indices, len(holders[label]))):
            if part.size == 0:
                raise ConfigError(f"Class {label} has too few samples for its {len(holders[label])} clients.")
            assigned[client_id].append(part)

    clients = []
    for client_id in range(n_clients):
        indices = np.sort(np.concatenate(assigned[client_id]))
        clients.append(
            ClientDataset(
                x=dataset.x[indices],
                y=dataset.y[indices],
                n_classes=dataset.n_classes,
                client_id=client_id,
                weight=indices.size / total,
                classes=client_classes[client_id],
            )
        )
    return clients


def partition_iid(dataset: Dataset, n_clients: int, seed: int) -> list:
    if n_clients < 1 or n_clients > len(dataset):
        raise ConfigError(f"Cannot split {len(dataset)} samples among {n_clients} clients.")
    rng = derive_rng(seed, STREAM_PARTITION)
    order = rng.permutation(len(dataset))
    clients = []
    for client_id, part in enumerate(np.array_split(order, n_clients)):
        indices = np.sort(part)
        clients.append(
            ClientDataset(
                x=dataset.x[indices],
                y=dataset.y[indices],
                n_classes=dataset.n_classes,
                client_id=client_id,
                weight=indices.size / len(dataset),
                classes=tuple(int(c) for c in np.unique(dataset.y[indices])),
            )
        )
    return clients


def select_batch(client: ClientDataset, batch_size: int, seed: int, round: int):
    if batch_size <= 0 or batch_size >= len(client):
        return client.x, client.y
    rng = derive_rng(seed, STREAM_BATCH, client.client_id, round)
    picked = np.sort(rng.choice(len(client), size=batch_size, replace=False))
    return client.x[picked], client.y[picked]
