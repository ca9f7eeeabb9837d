"""Coupling-flow density model.

The model is a chain of affine couplings with alternating even/odd
coordinate masks, preceded by a fixed per-coordinate standardization and
followed by a standard normal prior. The change-of-variable identity
gives the exact log-density:

    log p(x) = log N(z; 0, I) + log|det dz/dx|

where z is the chained forward transform of the standardized input and
the determinant term accumulates each coupling's log-determinant plus the
constant standardization correction.
"""

from __future__ import annotations

import struct

import numpy as np

from ..errors import FormatError, NumericalError, ValidationError
from ..feature_store import FeatureMap, atomic_write_bytes
from .coupling import AffineCoupling

MODEL_MAGIC = b"NVPF"
MODEL_VERSION = 1

LOG_TWO_PI = np.log(2.0 * np.pi)


def coupling_mask(dim: int, layer_index: int) -> np.ndarray:
    """Alternating coordinate mask: even layers keep even coordinates."""
    even = np.arange(dim) % 2 == 0
    return even if layer_index % 2 == 0 else ~even


class FlowModel:
    """Chain of affine couplings with a standard-normal prior."""

    def __init__(self, dim: int, layers: list[AffineCoupling], hidden: int,
                 mean: np.ndarray | None = None, std: np.ndarray | None = None):
        if dim < 2:
            raise ValidationError("flow dimension must be >= 2 (coupling needs a split)")
        if not layers:
            raise ValidationError("chain length must be >= 1")
        self.dim = dim
        self.hidden = hidden
        self.layers = layers
        self.mean = np.zeros(dim) if mean is None else np.asarray(mean, dtype=np.float64)
        self.std = np.ones(dim) if std is None else np.asarray(std, dtype=np.float64)
        if self.mean.shape != (dim,) or self.std.shape != (dim,):
            raise ValidationError("standardization vectors must have length dim")
        if (self.std <= 0).any():
            raise ValidationError("standardization std must be positive")

    @property
    def n_layers(self) -> int:
        return len(self.layers)

    def set_standardization(self, mean: np.ndarray, std: np.ndarray) -> None:
        mean = np.asarray(mean, dtype=np.float64)
        std = np.asarray(std, dtype=np.float64)
        if mean.shape != (self.dim,) or std.shape != (self.dim,):
            raise ValidationError("standardization vectors must have length dim")
        if (std <= 0).any():
            raise ValidationError("standardization std must be positive")
        self.mean = mean
        self.std = std

    def _as_batch(self, x: np.ndarray) -> tuple[np.ndarray, bool]:
        x = np.asarray(x, dtype=np.float64)
        single = x.ndim == 1
        if single:
            x = x[None, :]
        if x.ndim != 2 or x.shape[1] != self.dim:
            raise ValidationError(f"expected vectors of dimension {self.dim}, got shape {x.shape}")
        return x, single

    def forward(self, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Standardize then apply the chain; returns (z, log|det dz/dx|)."""
        batch, single = self._as_batch(x)
        z = (batch - self.mean) / self.std
        logdet = np.full(batch.shape[0], -np.log(self.std).sum())
        for layer in self.layers:
            z, step, _ = layer.forward(z)
            logdet = logdet + step
        if single:
            return z[0], logdet[0]
        return z, logdet

    def inverse(self, z: np.ndarray) -> np.ndarray:
        """Invert the chain and undo standardization."""
        batch, single = self._as_batch(z)
        x = batch
        for layer in reversed(self.layers):
            x = layer.inverse(x)
        x = x * self.std + self.mean
        return x[0] if single else x

    def inverse_with_logdet(self, z: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Inverse map plus log|det dx/dz|, accumulated layer by layer.

        At corresponding points this is exactly the negation of the forward
        log-determinant.
        """
        batch, single = self._as_batch(z)
        x = batch
        logdet = np.zeros(batch.shape[0])
        for layer in reversed(self.layers):
            kept = x[:, layer.keep_idx]
            log_scale, _, _, _, _ = layer._scale_shift(kept)
            logdet = logdet - log_scale.sum(axis=1)
            x = layer.inverse(x)
        x = x * self.std + self.mean
        logdet = logdet + np.log(self.std).sum()
        if single:
            return x[0], logdet[0]
        return x, logdet

    def log_prob(self, x: np.ndarray) -> np.ndarray | float:
        """Exact log-density under the flow (natural log)."""
        batch, single = self._as_batch(x)
        z, logdet = self.forward(batch)
        log_prior = -0.5 * (z**2).sum(axis=1) - 0.5 * self.dim * LOG_TWO_PI
        out = log_prior + logdet
        if not np.isfinite(out).all():
            raise NumericalError("non-finite log-density")
        return float(out[0]) if single else out

    def nll(self, x: np.ndarray) -> float:
        """Mean negative log-likelihood of a batch, in nats."""
        batch, _ = self._as_batch(x)
        if batch.shape[0] == 0:
            raise ValidationError("empty batch")
        return float(-np.mean(self.log_prob(batch)))

    def score_map(self, fmap: FeatureMap) -> np.ndarray:
        """Per-cell negative log-density grid for a feature map."""
        if fmap.dim != self.dim:
            raise ValidationError(f"feature dimension {fmap.dim} does not match model dimension {self.dim}")
        flat = fmap.values.reshape(-1, self.dim).astype(np.float64)
        return (-self.log_prob(flat)).reshape(fmap.grid_h, fmap.grid_w)

    def params(self) -> list[np.ndarray]:
        out: list[np.ndarray] = []
        for layer in self.layers:
            out.extend(layer.params())
        return out

    def copy_params(self) -> list[np.ndarray]:
        return [p.copy() for p in self.params()]

    def set_params(self, values: list[np.ndarray]) -> None:
        own = self.params()
        if len(own) != len(values):
            raise ValidationError(f"expected {len(own)} parameter arrays, got {len(values)}")
        for target, value in zip(own, values):
            if target.shape != value.shape:
                raise ValidationError(f"parameter shape mismatch: {target.shape} vs {value.shape}")
            target[...] = value


def init_model(dim: int, n_layers: int, hidden: int, seed: int) -> FlowModel:
    """Deterministically initialized flow that starts as the identity map.

    Hidden weights come from a seeded scaled-uniform scheme; every coupling
    perceptron's output layer starts at zero, so the whole chain is the
    identity with zero log-determinant until trained.
    """
    if dim < 2:
        raise ValidationError("flow dimension must be >= 2 (coupling needs a split)")
    if n_layers < 1:
        raise ValidationError("chain length must be >= 1")
    rng = np.random.default_rng(seed)
    layers = [
        AffineCoupling(coupling_mask(dim, i), hidden, rng, index=i)
        for i in range(n_layers)
    ]
    return FlowModel(dim=dim, layers=layers, hidden=hidden)


def gradients(batch: np.ndarray, model: FlowModel) -> list[np.ndarray]:
    """Exact gradient of the mean NLL w.r.t. every model parameter.

    Returned arrays mirror ``model.params()`` in order and shape.
    """
    batch = np.asarray(batch, dtype=np.float64)
    if batch.ndim != 2 or batch.shape[0] == 0:
        raise ValidationError("gradient batch must be a non-empty (n, dim) array")
    if batch.shape[1] != model.dim:
        raise ValidationError(f"batch dimension {batch.shape[1]} does not match model dimension {model.dim}")
    n = batch.shape[0]

    z = (batch - model.mean) / model.std
    caches = []
    for layer in model.layers:
        z, _, cache = layer.forward(z)
        caches.append(cache)

    # Mean NLL = mean(0.5*|z|^2 + const - logdet); standardization terms are
    # parameter-free, so only the chain sees gradients.
    grad_z = z / n
    grad_logdet = np.full(n, -1.0 / n)
    per_layer_grads: list[list[np.ndarray]] = []
    for layer, cache in zip(reversed(model.layers), reversed(caches)):
        grad_z, layer_grads = layer.backward(cache, grad_z, grad_logdet)
        per_layer_grads.append(layer_grads)
    out: list[np.ndarray] = []
    for layer_grads in reversed(per_layer_grads):
        out.extend(layer_grads)
    return out


def save_model(model: FlowModel, path: str) -> None:
    """Serialize to the NVPF layout: header, standardization, then parameters.

    Parameters are written in layer order, each layer as scale perceptron
    (w1, b1, w2, b2, w3, b3), shift perceptron likewise, then the log-cap
    vector, all float64 little-endian.
    """
    header = struct.pack(
        "<4sIIII", MODEL_MAGIC, MODEL_VERSION, model.dim, model.n_layers, model.hidden
    )
    blobs = [header, model.mean.astype("<f8").tobytes(), model.std.astype("<f8").tobytes()]
    for param in model.params():
        blobs.append(param.astype("<f8", copy=False).tobytes(order="C"))
    atomic_write_bytes(path, b"".join(blobs))


def load_model(path: str) -> FlowModel:
    """Parse an NVPF file back into a flow; masks are derived from layer order."""
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:4] != MODEL_MAGIC:
        raise FormatError(f"{path}: bad magic {data[:4]!r}, expected {MODEL_MAGIC!r}")
    if len(data) < 20:
        raise FormatError(f"{path}: truncated header")
    version, dim, n_layers, hidden = struct.unpack("<IIII", data[4:20])
    if version != MODEL_VERSION:
        raise FormatError(f"{path}: unsupported model version {version}")
    offset = 20

    def take(count: int, shape: tuple[int, ...]) -> np.ndarray:
        nonlocal offset
        nbytes = 8 * count
        if offset + nbytes > len(data):
            raise FormatError(f"{path}: truncated parameter payload")
        arr = np.frombuffer(data[offset : offset + nbytes], dtype="<f8").reshape(shape).copy()
        offset += nbytes
        return arr

    mean = take(dim, (dim,))
    std = take(dim, (dim,))
    model = init_model(dim, n_layers, hidden, seed=0)
    values: list[np.ndarray] = []
    for param in model.params():
        values.append(take(param.size, param.shape))
    if offset != len(data):
        raise FormatError(f"{path}: trailing bytes after declared parameters")
    model.set_params(values)
    model.set_standardization(mean, std)
    return model
