"""Small feed-forward classifier with hand-written gradients.

The architecture family is fixed: a chain of affine layers with ReLU on all
hidden layers and either a plain affine (fc) or a scaled cosine-similarity
head. Parameters flatten to a single float64 vector (layer by layer, weight
rows first, then bias) so the projection rules can treat the whole model as
one gradient vector. Per-layer freeze masks zero out gradient entries and
block updates, mimicking frozen components during finetuning.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, replace
from enum import Enum
from pathlib import Path

import numpy as np

from .errors import ConfigError, DataError, NumericError
from .rng import Xoshiro256StarStar

CHECKPOINT_FORMAT_VERSION = 1
FINITE_DIFF_MAX_PARAMS = 10_000
_COSINE_NORM_FLOOR = 1e-12


class HeadKind(str, Enum):
    FC = "fc"
    COSINE = "cosine"


@dataclass(frozen=True)
class ModelConfig:
    """Layer sizes as the full chain [input, *hidden, classes]."""

    dims: tuple[int, ...]
    head_kind: HeadKind = HeadKind.FC
    cosine_scale: float = 10.0

    def __post_init__(self):
        object.__setattr__(self, "dims", tuple(int(d) for d in self.dims))
        object.__setattr__(self, "head_kind", HeadKind(self.head_kind))
        if len(self.dims) < 2:
            raise ConfigError(f"need at least input and class dims, got {self.dims}")
        if any(d <= 0 for d in self.dims):
            raise ConfigError(f"zero-size layer in dims {self.dims}")
        if self.dims[-1] < 2:
            raise ConfigError(f"class count must be >= 2, got {self.dims[-1]}")
        if self.cosine_scale <= 0:
            raise ConfigError(f"cosine_scale must be positive, got {self.cosine_scale}")

    @property
    def class_count(self) -> int:
        return self.dims[-1]


@dataclass(frozen=True, eq=False)
class Layer:
    weight: np.ndarray  # (fan_out, fan_in)
    bias: np.ndarray  # (fan_out,)
    relu: bool


@dataclass(frozen=True, eq=False)
class ModelParams:
    layers: tuple[Layer, ...]
    head_kind: HeadKind
    cosine_scale: float
    freeze_mask: tuple[bool, ...]  # per layer, True = frozen

    @property
    def class_count(self) -> int:
        return self.layers[-1].weight.shape[0]

    @property
    def input_dim(self) -> int:
        return self.layers[0].weight.shape[1]


@dataclass(frozen=True, eq=False)
class Batch:
    features: np.ndarray  # (n_samples, feature_dim)
    labels: np.ndarray  # (n_samples,) int class ids

    def __post_init__(self):
        object.__setattr__(self, "features", np.asarray(self.features, dtype=np.float64))
        object.__setattr__(self, "labels", np.asarray(self.labels, dtype=np.int64))
        if self.features.ndim != 2 or len(self.features) == 0:
            raise ValueError("batch must be a non-empty (n, d) feature matrix")
        if self.labels.shape != (len(self.features),):
            raise ValueError("labels must align with features")

    def __len__(self) -> int:
        return len(self.features)


def init_model(config: ModelConfig, rng: Xoshiro256StarStar) -> ModelParams:
    """Uniform(-s, s) weights with s = sqrt(6 / (fan_in + fan_out)), zero biases.

    Draw order is fixed (layer by layer, weight entries row-major) so the
    same seed always yields bit-identical parameters.
    """
    layers = []
    n_affine = len(config.dims) - 1
    for i in range(n_affine):
        fan_in, fan_out = config.dims[i], config.dims[i + 1]
        s = np.sqrt(6.0 / (fan_in + fan_out))
        w = np.array(
            [rng.uniform(-s, s) for _ in range(fan_out * fan_in)], dtype=np.float64
        ).reshape(fan_out, fan_in)
        b = np.zeros(fan_out, dtype=np.float64)
        layers.append(Layer(weight=w, bias=b, relu=i < n_affine - 1))
    return ModelParams(
        layers=tuple(layers),
        head_kind=config.head_kind,
        cosine_scale=config.cosine_scale,
        freeze_mask=tuple(False for _ in layers),
    )


def set_freeze_mask(params: ModelParams, mask) -> ModelParams:
    mask = tuple(bool(m) for m in mask)
    if len(mask) != len(params.layers):
        raise ValueError(f"freeze mask needs {len(params.layers)} entries, got {len(mask)}")
    return replace(params, freeze_mask=mask)


def freeze_mask_for_groups(
    n_layers: int, backbone: bool = False, intermediate: bool = False, head: bool = False
) -> tuple[bool, ...]:
    """Map the three component groups onto per-layer flags.

    Layer 0 is the backbone analog, the last layer the head analog, and any
    middle layers the intermediate group (empty for two-layer models).
    """
    if n_layers < 1:
        raise ValueError("model needs at least one layer")
    mask = [intermediate] * n_layers
    mask[-1] = head
    if n_layers >= 2:
        mask[0] = backbone
    return tuple(mask)


def param_count(params: ModelParams) -> int:
    return sum(layer.weight.size + layer.bias.size for layer in params.layers)


def flatten_params(params: ModelParams) -> np.ndarray:
    chunks = []
    for layer in params.layers:
        chunks.append(layer.weight.ravel())
        chunks.append(layer.bias)
    return np.concatenate(chunks)


def unflatten_params(params: ModelParams, flat: np.ndarray) -> ModelParams:
    """Rebuild a ModelParams value with the same structure from a flat vector."""
    flat = np.asarray(flat, dtype=np.float64)
    if flat.shape != (param_count(params),):
        raise ValueError(f"expected {param_count(params)} entries, got {flat.shape}")
    layers = []
    offset = 0
    for layer in params.layers:
        w_size = layer.weight.size
        w = flat[offset : offset + w_size].reshape(layer.weight.shape).copy()
        offset += w_size
        b = flat[offset : offset + layer.bias.size].copy()
        offset += layer.bias.size
        layers.append(Layer(weight=w, bias=b, relu=layer.relu))
    return replace(params, layers=tuple(layers))


def frozen_coordinates(params: ModelParams) -> np.ndarray:
    """Flat boolean mask, True where the coordinate belongs to a frozen layer."""
    chunks = []
    for layer, frozen in zip(params.layers, params.freeze_mask):
        chunks.append(np.full(layer.weight.size + layer.bias.size, frozen))
    return np.concatenate(chunks)


def _check_batch(params: ModelParams, batch: Batch) -> None:
    if batch.features.shape[1] != params.input_dim:
        raise ValueError(
            f"feature dim {batch.features.shape[1]} does not match input dim {params.input_dim}"
        )
    labels = np.asarray(batch.labels)
    if labels.min() < 0 or labels.max() >= params.class_count:
        raise ValueError("labels out of range for this model")


def _normalize_rows(x: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    norms = np.linalg.norm(x, axis=1)
    denom = np.maximum(norms, _COSINE_NORM_FLOOR)
    return x / denom[:, None], norms, denom


def _forward(params: ModelParams, features: np.ndarray):
    """Run the network, keeping the per-layer activations for backprop."""
    h = np.asarray(features, dtype=np.float64)
    pre_activations = []
    activations = [h]
    for layer in params.layers[:-1]:
        z = h @ layer.weight.T + layer.bias
        pre_activations.append(z)
        h = np.maximum(z, 0.0)
        activations.append(h)
    head = params.layers[-1]
    if params.head_kind is HeadKind.FC:
        logits = h @ head.weight.T + head.bias
    else:
        h_hat, _, _ = _normalize_rows(h)
        w_hat, _, _ = _normalize_rows(head.weight)
        logits = params.cosine_scale * (h_hat @ w_hat.T)
    return logits, pre_activations, activations


def forward_logits(params: ModelParams, features: np.ndarray) -> np.ndarray:
    logits, _, _ = _forward(params, features)
    return logits


def forward_loss(params: ModelParams, batch: Batch) -> tuple[float, np.ndarray]:
    """Mean softmax cross-entropy over the batch, plus the logits."""
    _check_batch(params, batch)
    logits, _, _ = _forward(params, batch.features)
    if not np.all(np.isfinite(logits)):
        raise NumericError("non-finite logits in forward pass")
    shifted = logits - logits.max(axis=1, keepdims=True)
    log_z = np.log(np.exp(shifted).sum(axis=1))
    per_sample = log_z - shifted[np.arange(len(batch)), batch.labels]
    return float(per_sample.mean()), logits


def loss_and_grad(params: ModelParams, batch: Batch) -> tuple[float, np.ndarray]:
    """Loss plus the flattened analytic gradient of the mean loss.

    Gradients of frozen layers are computed and then zeroed, so the
    projection geometry only ever sees trainable coordinates.
    """
    _check_batch(params, batch)
    n = len(batch)
    logits, pre_activations, activations = _forward(params, batch.features)
    if not np.all(np.isfinite(logits)):
        raise NumericError("non-finite logits in forward pass")

    shifted = logits - logits.max(axis=1, keepdims=True)
    exp = np.exp(shifted)
    probs = exp / exp.sum(axis=1, keepdims=True)
    log_z = np.log(exp.sum(axis=1))
    loss = float((log_z - shifted[np.arange(n), batch.labels]).mean())

    d_logits = probs.copy()
    d_logits[np.arange(n), batch.labels] -= 1.0
    d_logits /= n

    grads = [None] * len(params.layers)
    head = params.layers[-1]
    h = activations[-1]
    if params.head_kind is HeadKind.FC:
        d_w = d_logits.T @ h
        d_b = d_logits.sum(axis=0)
        d_h = d_logits @ head.weight
    else:
        s = params.cosine_scale
        h_hat, h_norms, h_denom = _normalize_rows(h)
        w_hat, w_norms, w_denom = _normalize_rows(head.weight)
        # logits = s * h_hat @ w_hat.T; differentiate through both normalizations
        d_w_hat = s * (d_logits.T @ h_hat)
        d_h_hat = s * (d_logits @ w_hat)
        # rows at the norm floor see a constant denominator (clamp active)
        w_clamped = w_norms < _COSINE_NORM_FLOOR
        proj_w = d_w_hat - (d_w_hat * w_hat).sum(axis=1, keepdims=True) * w_hat
        d_w = np.where(w_clamped[:, None], d_w_hat, proj_w) / w_denom[:, None]
        h_clamped = h_norms < _COSINE_NORM_FLOOR
        proj_h = d_h_hat - (d_h_hat * h_hat).sum(axis=1, keepdims=True) * h_hat
        d_h = np.where(h_clamped[:, None], d_h_hat, proj_h) / h_denom[:, None]
        d_b = np.zeros_like(head.bias)
    grads[-1] = (d_w, d_b)

    for i in range(len(params.layers) - 2, -1, -1):
        layer = params.layers[i]
        d_z = d_h * (pre_activations[i] > 0.0)
        grads[i] = (d_z.T @ activations[i], d_z.sum(axis=0))
        if i > 0:
            d_h = d_z @ layer.weight

    chunks = []
    for (d_w, d_b), frozen in zip(grads, params.freeze_mask):
        if frozen:
            chunks.append(np.zeros(d_w.size + d_b.size))
        else:
            chunks.append(np.concatenate([d_w.ravel(), d_b]))
    return loss, np.concatenate(chunks)


def backward(params: ModelParams, batch: Batch) -> np.ndarray:
    """Flattened analytic gradient of the mean loss over the batch."""
    return loss_and_grad(params, batch)[1]


def central_difference(f, theta: np.ndarray, eps: float = 1e-5) -> np.ndarray:
    """Central-difference gradient of a scalar function of a flat vector."""
    theta = np.asarray(theta, dtype=np.float64)
    grad = np.zeros_like(theta)
    for i in range(theta.size):
        bumped = theta.copy()
        bumped[i] = theta[i] + eps
        up = f(bumped)
        bumped[i] = theta[i] - eps
        down = f(bumped)
        grad[i] = (up - down) / (2.0 * eps)
    return grad


def finite_diff_grad(params: ModelParams, batch: Batch, eps: float = 1e-5) -> np.ndarray:
    """Finite-difference gradient oracle; frozen coordinates are zero.

    Test-scale only: refuses models above 10^4 parameters.
    """
    if param_count(params) > FINITE_DIFF_MAX_PARAMS:
        raise ValueError(
            f"finite differences limited to {FINITE_DIFF_MAX_PARAMS} parameters"
        )
    theta = flatten_params(params)
    frozen = frozen_coordinates(params)

    def loss_at(flat):
        return forward_loss(unflatten_params(params, flat), batch)[0]

    grad = np.zeros_like(theta)
    for i in range(theta.size):
        if frozen[i]:
            continue
        bumped = theta.copy()
        bumped[i] = theta[i] + eps
        up = loss_at(bumped)
        bumped[i] = theta[i] - eps
        down = loss_at(bumped)
        grad[i] = (up - down) / (2.0 * eps)
    return grad


def apply_update(params: ModelParams, update: np.ndarray, lr: float) -> ModelParams:
    """theta' = theta - lr * update on unfrozen coordinates; frozen unchanged."""
    if lr < 0:
        raise ValueError(f"learning rate must be non-negative, got {lr}")
    update = np.asarray(update, dtype=np.float64)
    flat = flatten_params(params)
    if update.shape != flat.shape:
        raise ValueError(f"update has {update.shape}, expected {flat.shape}")
    frozen = frozen_coordinates(params)
    new_flat = np.where(frozen, flat, flat - lr * update)
    return unflatten_params(params, new_flat)


def reinit_head_rows(
    params: ModelParams, class_ids, rng: Xoshiro256StarStar
) -> ModelParams:
    """Fresh random head rows (same init law) for the given classes.

    Used at finetune start so novel classes begin from scratch while base
    rows carry over. Row biases are reset to zero.
    """
    head = params.layers[-1]
    fan_out, fan_in = head.weight.shape
    s = np.sqrt(6.0 / (fan_in + fan_out))
    w = head.weight.copy()
    b = head.bias.copy()
    for c in class_ids:
        if not 0 <= c < fan_out:
            raise ValueError(f"class id {c} out of range for head with {fan_out} rows")
        w[c] = [rng.uniform(-s, s) for _ in range(fan_in)]
        b[c] = 0.0
    layers = params.layers[:-1] + (Layer(weight=w, bias=b, relu=head.relu),)
    return replace(params, layers=layers)


def save_checkpoint(params: ModelParams, path) -> None:
    """Serialize to a flat JSON document (shape manifest + row-major arrays)."""
    doc = {
        "format_version": CHECKPOINT_FORMAT_VERSION,
        "head_kind": params.head_kind.value,
        "cosine_scale": params.cosine_scale,
        "freeze_mask": list(params.freeze_mask),
        "layers": [
            {
                "shape": list(layer.weight.shape),
                "relu": layer.relu,
                "weight": layer.weight.ravel().tolist(),
                "bias": layer.bias.tolist(),
            }
            for layer in params.layers
        ],
    }
    Path(path).write_text(json.dumps(doc), encoding="utf-8")


def load_checkpoint(path) -> ModelParams:
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    version = doc.get("format_version")
    if version != CHECKPOINT_FORMAT_VERSION:
        raise ConfigError(f"unsupported checkpoint format_version: {version!r}")
    layers = []
    for entry in doc["layers"]:
        fan_out, fan_in = entry["shape"]
        w = np.asarray(entry["weight"], dtype=np.float64).reshape(fan_out, fan_in)
        b = np.asarray(entry["bias"], dtype=np.float64)
        if b.shape != (fan_out,):
            raise DataError("bias length does not match weight shape")
        layers.append(Layer(weight=w, bias=b, relu=bool(entry["relu"])))
    return ModelParams(
        layers=tuple(layers),
        head_kind=HeadKind(doc["head_kind"]),
        cosine_scale=float(doc["cosine_scale"]),
        freeze_mask=tuple(bool(m) for m in doc["freeze_mask"]),
    )
