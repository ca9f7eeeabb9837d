"""Small perceptrons used inside coupling transforms.

All parameters are float64; gradients are computed by hand (reverse mode)
so the training loop carries no autodiff dependency.
"""

from __future__ import annotations

import numpy as np

from ..errors import ValidationError


class Mlp:
    """Two-hidden-layer perceptron with ReLU activations.

    The output layer starts at zero so a fresh network is the constant-zero
    function; hidden layers use a uniform fan-in/fan-out scaled init.
    """

    def __init__(self, dim_in: int, dim_hidden: int, dim_out: int, rng: np.random.Generator):
        if min(dim_in, dim_hidden, dim_out) < 1:
            raise ValidationError("all perceptron dimensions must be >= 1")

        def scaled_uniform(fan_in: int, fan_out: int) -> np.ndarray:
            limit = np.sqrt(6.0 / (fan_in + fan_out))
            return rng.uniform(-limit, limit, size=(fan_in, fan_out))

        self.w1 = scaled_uniform(dim_in, dim_hidden)
        self.b1 = np.zeros(dim_hidden)
        self.w2 = scaled_uniform(dim_hidden, dim_hidden)
        self.b2 = np.zeros(dim_hidden)
        self.w3 = np.zeros((dim_hidden, dim_out))
        self.b3 = np.zeros(dim_out)

    def forward(self, x: np.ndarray) -> tuple[np.ndarray, tuple]:
        """Evaluate on a (batch, dim_in) array, returning output and cache."""
        z1 = x @ self.w1 + self.b1
        a1 = np.maximum(z1, 0.0)
        z2 = a1 @ self.w2 + self.b2
        a2 = np.maximum(z2, 0.0)
        out = a2 @ self.w3 + self.b3
        return out, (x, z1, a1, z2, a2)

    def __call__(self, x: np.ndarray) -> np.ndarray:
        return self.forward(x)[0]

    def backward(self, cache: tuple, grad_out: np.ndarray) -> tuple[np.ndarray, list[np.ndarray]]:
        """Backpropagate grad_out through the cached forward pass.

        Returns the gradient w.r.t. the input batch and the parameter
        gradients in ``params()`` order.
        """
        x, z1, a1, z2, a2 = cache
        gw3 = a2.T @ grad_out
        gb3 = grad_out.sum(axis=0)
        ga2 = grad_out @ self.w3.T
        gz2 = ga2 * (z2 > 0.0)
        gw2 = a1.T @ gz2
        gb2 = gz2.sum(axis=0)
        ga1 = gz2 @ self.w2.T
        gz1 = ga1 * (z1 > 0.0)
        gw1 = x.T @ gz1
        gb1 = gz1.sum(axis=0)
        grad_in = gz1 @ self.w1.T
        return grad_in, [gw1, gb1, gw2, gb2, gw3, gb3]

    def params(self) -> list[np.ndarray]:
        """Parameter arrays in canonical (serialization) order."""
        return [self.w1, self.b1, self.w2, self.b2, self.w3, self.b3]

    def set_params(self, values: list[np.ndarray]) -> None:
        for target, value in zip(self.params(), values):
            if target.shape != value.shape:
                raise ValidationError(f"parameter shape mismatch: {target.shape} vs {value.shape}")
            target[...] = value
