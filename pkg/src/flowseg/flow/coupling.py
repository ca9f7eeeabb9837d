"""Affine coupling transform.

A coupling keeps one subset of coordinates fixed and applies
``y = x * exp(s) + t`` to the rest, where s and t are perceptron outputs
of the kept subset. The Jacobian is triangular, so the log-determinant is
just the sum of s over the changed coordinates. The raw scale output is
squashed through tanh and multiplied by a learned positive cap so exp(s)
stays bounded whatever the parameters.
"""

from __future__ import annotations

import numpy as np

from ..errors import NumericalError, ValidationError
from .nets import Mlp

INITIAL_SCALE_CAP = 2.0


class AffineCoupling:
    """One coupling step over flat feature vectors."""

    def __init__(self, keep_mask: np.ndarray, hidden: int, rng: np.random.Generator, index: int = 0):
        keep_mask = np.asarray(keep_mask, dtype=bool)
        if keep_mask.ndim != 1:
            raise ValidationError("keep_mask must be a flat binary vector")
        if keep_mask.all() or not keep_mask.any():
            raise ValidationError("keep_mask needs at least one kept and one changed coordinate")
        self.keep_mask = keep_mask
        self.keep_idx = np.flatnonzero(keep_mask)
        self.change_idx = np.flatnonzero(~keep_mask)
        self.index = index
        n_keep = self.keep_idx.size
        n_change = self.change_idx.size
        self.scale_net = Mlp(n_keep, hidden, n_change, rng)
        self.shift_net = Mlp(n_keep, hidden, n_change, rng)
        # Learned per-coordinate positive cap on |s|, stored as its log.
        self.log_cap = np.full(n_change, np.log(INITIAL_SCALE_CAP))

    @property
    def dim(self) -> int:
        return self.keep_mask.size

    def _scale_shift(self, kept: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray, tuple, tuple]:
        raw, scale_cache = self.scale_net.forward(kept)
        shift, shift_cache = self.shift_net.forward(kept)
        squashed = np.tanh(raw)
        log_scale = squashed * np.exp(self.log_cap)
        return log_scale, squashed, shift, scale_cache, shift_cache

    def forward(self, x: np.ndarray) -> tuple[np.ndarray, np.ndarray, tuple]:
        """Map (batch, f) inputs forward; returns (y, logdet, cache)."""
        kept = x[:, self.keep_idx]
        changed = x[:, self.change_idx]
        log_scale, squashed, shift, scale_cache, shift_cache = self._scale_shift(kept)
        with np.errstate(over="ignore"):  # overflow becomes NumericalError below
            scaled = changed * np.exp(log_scale) + shift
        y = np.empty_like(x)
        y[:, self.keep_idx] = kept
        y[:, self.change_idx] = scaled
        logdet = log_scale.sum(axis=1)
        if not (np.isfinite(y).all() and np.isfinite(logdet).all()):
            raise NumericalError(f"coupling layer {self.index}: non-finite forward intermediate")
        cache = (changed, log_scale, squashed, scale_cache, shift_cache)
        return y, logdet, cache

    def inverse(self, y: np.ndarray) -> np.ndarray:
        """Invert the forward map; kept coordinates pass through unchanged."""
        kept = y[:, self.keep_idx]
        scaled = y[:, self.change_idx]
        log_scale, _, shift, _, _ = self._scale_shift(kept)
        x = np.empty_like(y)
        x[:, self.keep_idx] = kept
        with np.errstate(over="ignore"):  # overflow becomes NumericalError below
            x[:, self.change_idx] = (scaled - shift) * np.exp(-log_scale)
        if not np.isfinite(x).all():
            raise NumericalError(f"coupling layer {self.index}: non-finite inverse intermediate")
        return x

    def backward(
        self, cache: tuple, grad_y: np.ndarray, grad_logdet: np.ndarray
    ) -> tuple[np.ndarray, list[np.ndarray]]:
        """Reverse-mode step given gradients w.r.t. y and w.r.t. logdet.

        Returns the gradient w.r.t. x and parameter gradients in
        ``params()`` order.
        """
        changed, log_scale, squashed, scale_cache, shift_cache = cache
        cap = np.exp(self.log_cap)
        grad_kept_direct = grad_y[:, self.keep_idx]
        grad_scaled = grad_y[:, self.change_idx]

        exp_s = np.exp(log_scale)
        grad_s = grad_scaled * changed * exp_s + grad_logdet[:, None]
        grad_shift = grad_scaled
        grad_changed = grad_scaled * exp_s

        grad_raw = grad_s * (1.0 - squashed**2) * cap
        grad_log_cap = (grad_s * squashed).sum(axis=0) * cap

        grad_kept_scale, scale_grads = self.scale_net.backward(scale_cache, grad_raw)
        grad_kept_shift, shift_grads = self.shift_net.backward(shift_cache, grad_shift)

        grad_x = np.empty_like(grad_y)
        grad_x[:, self.keep_idx] = grad_kept_direct + grad_kept_scale + grad_kept_shift
        grad_x[:, self.change_idx] = grad_changed
        return grad_x, scale_grads + shift_grads + [grad_log_cap]

    def params(self) -> list[np.ndarray]:
        return self.scale_net.params() + self.shift_net.params() + [self.log_cap]
