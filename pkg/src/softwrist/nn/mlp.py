"""Fully connected network with tanh hidden layers."""

from __future__ import annotations

import math

import numpy as np

from .base import check_width, orthogonal


class Mlp:
    """Dense layers ``sizes[0] -> ... -> sizes[-1]``; tanh between layers, linear output.

    ``params`` maps ``W{i}`` (n_in, n_out) and ``b{i}`` (n_out,) to arrays.
    """

    def __init__(self, sizes: list[int], rng: np.random.Generator | None = None, out_gain: float = 1.0):
        if len(sizes) < 2:
            raise ValueError("an MLP needs at least input and output sizes")
        self.sizes = [int(s) for s in sizes]
        rng = rng if rng is not None else np.random.default_rng(0)
        self.params: dict[str, np.ndarray] = {}
        for i, (a, b) in enumerate(zip(self.sizes[:-1], self.sizes[1:])):
            last = i == len(self.sizes) - 2
            self.params[f"W{i}"] = orthogonal(rng, a, b, out_gain if last else math.sqrt(2.0))
            self.params[f"b{i}"] = np.zeros(b)

    @property
    def n_layers(self) -> int:
        return len(self.sizes) - 1

    def forward(self, x: np.ndarray) -> tuple[np.ndarray, list[np.ndarray]]:
        x = np.asarray(x, dtype=float)
        check_width(x, self.sizes[0], "mlp input")
        acts = [x]
        h = x
        for i in range(self.n_layers):
            h = h @ self.params[f"W{i}"] + self.params[f"b{i}"]
            if i < self.n_layers - 1:
                h = np.tanh(h)
            acts.append(h)
        return h, acts

    def __call__(self, x: np.ndarray) -> np.ndarray:
        return self.forward(x)[0]

    def backward(self, acts: list[np.ndarray], d_out: np.ndarray) -> dict[str, np.ndarray]:
        """Gradients of sum(d_out * output) with respect to every parameter."""
        grads = {}
        g = np.asarray(d_out, dtype=float)
        for i in reversed(range(self.n_layers)):
            if i < self.n_layers - 1:
                g = g * (1.0 - acts[i + 1] ** 2)
            a_in = acts[i]
            grads[f"W{i}"] = a_in.reshape(-1, a_in.shape[-1]).T @ g.reshape(-1, g.shape[-1])
            grads[f"b{i}"] = g.reshape(-1, g.shape[-1]).sum(axis=0)
            g = g @ self.params[f"W{i}"].T
        return grads
