"""Temporal convolutional network: residual blocks of dilated causal convolutions."""

from __future__ import annotations

import math

import numpy as np

from .base import ShapeMismatch, check_width, orthogonal


def receptive_field(kernel: int, dilations, convs_per_block: int = 2) -> int:
    return 1 + convs_per_block * (kernel - 1) * int(sum(dilations))


def _shifted(x: np.ndarray, kernel: int, dilation: int) -> np.ndarray:
    """Stack causal taps: out[b, t, k*C + c] = x[b, t - (kernel-1-k)*dilation, c] (zero before t=0)."""
    B, T, C = x.shape
    out = np.zeros((B, T, kernel * C))
    for k in range(kernel):
        s = (kernel - 1 - k) * dilation
        if s < T:
            out[:, s:, k * C:(k + 1) * C] = x[:, : T - s, :]
    return out


def _unshift(g: np.ndarray, kernel: int, dilation: int, channels: int) -> np.ndarray:
    """Adjoint of _shifted."""
    B, T, _ = g.shape
    out = np.zeros((B, T, channels))
    for k in range(kernel):
        s = (kernel - 1 - k) * dilation
        if s < T:
            out[:, : T - s, :] += g[:, s:, k * channels:(k + 1) * channels]
    return out


class TcnNet:
    """Causal TCN over (batch, time, features) with linear heads read at every step.

    Each residual block is relu(conv2(relu(conv1(x)))) + skip(x) followed by relu,
    where skip is a 1x1 convolution when the channel count changes.
    """

    def __init__(self, in_dim: int, heads: dict[str, int], channels: int = 32, kernel: int = 3,
                 dilations=(1, 2, 4), rng: np.random.Generator | None = None):
        self.in_dim = int(in_dim)
        self.heads = {str(k): int(v) for k, v in heads.items()}
        self.channels = int(channels)
        self.kernel = int(kernel)
        self.dilations = tuple(int(d) for d in dilations)
        rng = rng if rng is not None else np.random.default_rng(0)
        p: dict[str, np.ndarray] = {}
        c_in = self.in_dim
        for i, _ in enumerate(self.dilations):
            for j in (1, 2):
                fan_in = (c_in if j == 1 else channels) * kernel
                p[f"block{i}.conv{j}.W"] = orthogonal(rng, fan_in, channels, math.sqrt(2.0))
                p[f"block{i}.conv{j}.b"] = np.zeros(channels)
            if c_in != channels:
                p[f"block{i}.skip.W"] = orthogonal(rng, c_in, channels, 1.0)
                p[f"block{i}.skip.b"] = np.zeros(channels)
            c_in = channels
        for name, width in self.heads.items():
            p[f"head.{name}.W"] = orthogonal(rng, channels, width, 0.1)
            p[f"head.{name}.b"] = np.zeros(width)
        self.params = p

    @property
    def receptive_field(self) -> int:
        return receptive_field(self.kernel, self.dilations)

    def forward_sequence(self, x: np.ndarray) -> tuple[dict[str, np.ndarray], dict]:
        """Head outputs at every time step: {name: (B, T, width)}."""
        x = np.asarray(x, dtype=float)
        if x.ndim == 2:
            x = x[None]
        if x.ndim != 3:
            raise ShapeMismatch(f"tcn input must be (batch, time, features), got {x.shape}")
        check_width(x, self.in_dim, "tcn input")
        p = self.params
        cache = {"blocks": []}
        h = x
        for i, d in enumerate(self.dilations):
            c_in = h.shape[-1]
            s1 = _shifted(h, self.kernel, d)
            a1 = np.maximum(s1 @ p[f"block{i}.conv1.W"] + p[f"block{i}.conv1.b"], 0.0)
            s2 = _shifted(a1, self.kernel, d)
            a2 = np.maximum(s2 @ p[f"block{i}.conv2.W"] + p[f"block{i}.conv2.b"], 0.0)
            skip = h @ p[f"block{i}.skip.W"] + p[f"block{i}.skip.b"] if f"block{i}.skip.W" in p else h
            out = np.maximum(a2 + skip, 0.0)
            cache["blocks"].append((h, s1, a1, s2, a2, out, c_in))
            h = out
        cache["features"] = h
        outs = {name: h @ p[f"head.{name}.W"] + p[f"head.{name}.b"] for name in self.heads}
        return outs, cache

    def forward(self, x: np.ndarray) -> tuple[dict[str, np.ndarray], dict]:
        """Head outputs at the final time step: {name: (B, width)}."""
        seq, cache = self.forward_sequence(x)
        return {k: v[:, -1, :] for k, v in seq.items()}, cache

    def __call__(self, x: np.ndarray) -> dict[str, np.ndarray]:
        return self.forward(x)[0]

    def backward(self, cache: dict, d_heads: dict[str, np.ndarray], last_only: bool = True) -> dict[str, np.ndarray]:
        """Gradients of sum_k sum(d_heads[k] * heads[k]) for every parameter.

        With ``last_only`` the head gradients are (B, width) and refer to the final step.
        """
        p = self.params
        feats = cache["features"]
        B, T, C = feats.shape
        grads: dict[str, np.ndarray] = {}
        g = np.zeros_like(feats)
        for name in self.heads:
            dh = np.asarray(d_heads.get(name, np.zeros((B, self.heads[name]))), dtype=float)
            if last_only:
                f_last = feats[:, -1, :]
                grads[f"head.{name}.W"] = f_last.T @ dh
                grads[f"head.{name}.b"] = dh.sum(axis=0)
                g[:, -1, :] += dh @ p[f"head.{name}.W"].T
            else:
                grads[f"head.{name}.W"] = feats.reshape(-1, C).T @ dh.reshape(-1, dh.shape[-1])
                grads[f"head.{name}.b"] = dh.reshape(-1, dh.shape[-1]).sum(axis=0)
                g += dh @ p[f"head.{name}.W"].T
        for i in reversed(range(len(self.dilations))):
            d = self.dilations[i]
            h, s1, a1, s2, a2, out, c_in = cache["blocks"][i]
            g = g * (out > 0)
            # skip path
            if f"block{i}.skip.W" in p:
                grads[f"block{i}.skip.W"] = h.reshape(-1, c_in).T @ g.reshape(-1, C)
                grads[f"block{i}.skip.b"] = g.reshape(-1, C).sum(axis=0)
                g_in = g @ p[f"block{i}.skip.W"].T
            else:
                g_in = g.copy()
            # conv2
            g2 = g * (a2 > 0)
            grads[f"block{i}.conv2.W"] = s2.reshape(-1, s2.shape[-1]).T @ g2.reshape(-1, C)
            grads[f"block{i}.conv2.b"] = g2.reshape(-1, C).sum(axis=0)
            ga1 = _unshift(g2 @ p[f"block{i}.conv2.W"].T, self.kernel, d, C)
            # conv1
            g1 = ga1 * (a1 > 0)
            grads[f"block{i}.conv1.W"] = s1.reshape(-1, s1.shape[-1]).T @ g1.reshape(-1, C)
            grads[f"block{i}.conv1.b"] = g1.reshape(-1, C).sum(axis=0)
            g_in += _unshift(g1 @ p[f"block{i}.conv1.W"].T, self.kernel, d, c_in)
            g = g_in
        return grads
