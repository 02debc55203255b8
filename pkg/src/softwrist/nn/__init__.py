"""Small numpy network engine with hand-written backward passes."""

from .base import ShapeMismatch, clip_by_global_norm, global_norm
from .checkpoint import (
    Checkpoint,
    CheckpointError,
    CheckpointIoError,
    CheckpointMismatch,
    Corrupt,
    VersionMismatch,
    load_checkpoint,
    save_checkpoint,
)
from .losses import bce_with_logits, gaussian_entropy, gaussian_log_prob, sigmoid, student_loss
from .mlp import Mlp
from .optim import Adam
from .policy import ActorCritic, Encoder
from .tcn import TcnNet, receptive_field

__all__ = [
    "ActorCritic", "Adam", "Checkpoint", "CheckpointError", "CheckpointIoError", "CheckpointMismatch", "Corrupt", "Encoder", "Mlp",
    "ShapeMismatch", "TcnNet", "VersionMismatch", "bce_with_logits", "clip_by_global_norm", "gaussian_entropy",
    "gaussian_log_prob", "global_norm", "load_checkpoint", "receptive_field", "save_checkpoint", "sigmoid",
    "student_loss",
]


def policy_checkpoint(policy: ActorCritic, normalization: dict | None = None, metadata: dict | None = None) -> Checkpoint:
    return Checkpoint(policy.kind, {k: v.copy() for k, v in policy.params.items()}, dict(policy.arch),
                      normalization or {}, metadata or {})


def encoder_checkpoint(encoder: Encoder, normalization: dict | None = None, metadata: dict | None = None) -> Checkpoint:
    return Checkpoint(encoder.kind, {k: v.copy() for k, v in encoder.params.items()}, dict(encoder.arch),
                      normalization or {}, metadata or {})


def network_from_checkpoint(ckpt: Checkpoint):
    """Rebuild the policy or encoder stored in ``ckpt``."""
    if ckpt.kind == "tcn_encoder":
        net = Encoder(ckpt.arch)
    else:
        net = ActorCritic(ckpt.kind, ckpt.arch)
    net.load_params(ckpt.tensors)
    return net
