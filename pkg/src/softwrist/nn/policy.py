"""Actor-critic Gaussian policies and the privileged-state encoder."""

from __future__ import annotations

import math

import numpy as np

from .losses import gaussian_entropy, gaussian_log_prob, sigmoid
from .mlp import Mlp
from .tcn import TcnNet

POSE_DIM = 9


class _TcnOut:
    """Adapts a single-head TcnNet to the (forward, backward) interface of Mlp."""

    def __init__(self, net: TcnNet, head: str):
        self.net = net
        self.head = head
        self.params = net.params

    def forward(self, x):
        outs, cache = self.net.forward(x)
        return outs[self.head], cache

    def backward(self, cache, d_out):
        return self.net.backward(cache, {self.head: d_out})


class ActorCritic:
    """Diagonal Gaussian actor with state-independent log-std and a separate critic."""

    def __init__(self, kind: str, arch: dict, rng: np.random.Generator | None = None):
        rng = rng if rng is not None else np.random.default_rng(0)
        self.kind = kind
        self.arch = dict(arch)
        act_dim = int(arch.get("act_dim", 3))
        if kind == "mlp_policy":
            hidden = list(arch.get("hidden", [256, 256]))
            self.actor = Mlp([arch["in_dim"], *hidden, act_dim], rng, out_gain=0.01)
            self.critic = Mlp([arch["in_dim"], *hidden, 1], rng, out_gain=1.0)
        elif kind == "tcn_policy":
            tcn_kw = dict(channels=arch.get("channels", 32), kernel=arch.get("kernel", 3),
                          dilations=tuple(arch.get("dilations", (1, 2, 4))))
            self.actor = _TcnOut(TcnNet(arch["in_dim"], {"mean": act_dim}, rng=rng, **tcn_kw), "mean")
            self.critic = _TcnOut(TcnNet(arch["in_dim"], {"value": 1}, rng=rng, **tcn_kw), "value")
        else:
            raise ValueError(f"unknown policy kind {kind!r}")
        self.log_std = np.full(act_dim, math.log(arch.get("init_std", 0.5)))
        self.params = {}
        self._sync()

    def _sync(self):
        self.params = {"log_std": self.log_std}
        self.params.update({f"actor.{k}": v for k, v in self.actor.params.items()})
        self.params.update({f"critic.{k}": v for k, v in self.critic.params.items()})

    def load_params(self, params: dict[str, np.ndarray]) -> None:
        if set(params) != set(self.params):
            raise ValueError("parameter names do not match the policy architecture")
        for k, v in params.items():
            if self.params[k].shape != v.shape:
                raise ValueError(f"parameter {k}: shape {v.shape} != {self.params[k].shape}")
            self.params[k][...] = v

    @property
    def in_dim(self) -> int:
        return int(self.arch["in_dim"])

    def mean(self, x) -> np.ndarray:
        return self.actor.forward(x)[0]

    def value(self, x) -> np.ndarray:
        return self.critic.forward(x)[0][..., 0]

    def act(self, x, rng: np.random.Generator | None = None, deterministic: bool = False):
        """Returns (action, log_prob, value) for a batch of inputs."""
        mean = self.mean(x)
        value = self.value(x)
        if deterministic:
            a = mean
        else:
            a = mean + np.exp(self.log_std) * rng.normal(size=mean.shape)
        return a, gaussian_log_prob(a, mean, self.log_std), value

    def entropy(self) -> float:
        return gaussian_entropy(self.log_std)

    def forward_train(self, x):
        mean, a_cache = self.actor.forward(x)
        value, c_cache = self.critic.forward(x)
        return mean, value[..., 0], (a_cache, c_cache)

    def backward(self, caches, d_mean, d_value, d_log_std) -> dict[str, np.ndarray]:
        a_cache, c_cache = caches
        grads = {"log_std": np.asarray(d_log_std, dtype=float)}
        grads.update({f"actor.{k}": v for k, v in self.actor.backward(a_cache, d_mean).items()})
        grads.update({f"critic.{k}": v for k, v in self.critic.backward(c_cache, d_value[:, None]).items()})
        return grads


class Encoder:
    """TCN mapping a (T, 6) sensor history to the 9-d pose estimate and an alignment logit."""

    kind = "tcn_encoder"

    def __init__(self, arch: dict, rng: np.random.Generator | None = None):
        self.arch = dict(arch)
        self.include_alignment = bool(arch.get("include_alignment", True))
        heads = {"pose": POSE_DIM}
        if self.include_alignment:
            heads["align"] = 1
        self.net = TcnNet(arch.get("in_dim", 6), heads, channels=arch.get("channels", 32),
                          kernel=arch.get("kernel", 3), dilations=tuple(arch.get("dilations", (1, 2, 4))), rng=rng)
        self.params = self.net.params

    @property
    def history(self) -> int:
        return int(self.arch.get("history", 20))

    def load_params(self, params: dict[str, np.ndarray]) -> None:
        if set(params) != set(self.params):
            raise ValueError("parameter names do not match the encoder architecture")
        for k, v in params.items():
            self.params[k][...] = v

    def predict(self, history) -> tuple[np.ndarray, np.ndarray | None]:
        """Batch of histories (B, T, 6) -> (pose (B, 9), align logit (B,) or None)."""
        outs, _ = self.net.forward(history)
        logit = outs["align"][:, 0] if self.include_alignment else None
        return outs["pose"], logit

    def privileged_estimate(self, history, threshold_alignment: bool = False) -> np.ndarray:
        """Estimated privileged vector(s) in the teacher's input layout."""
        pose, logit = self.predict(history)
        if logit is None:
            return pose
        prob = sigmoid(logit)
        if threshold_alignment:
            prob = (prob > 0.5).astype(float)
        return np.concatenate([pose, prob[:, None]], axis=1)
