"""Learning a state embedding whose pairwise norm tracks action distances.

Training regresses the embedded distance of observed state pairs onto their
trajectory step gap d, weighting each sample by 1 / d**alpha, plus a hinge
penalty of the same weight whenever the embedded distance exceeds d (the gap
is only an upper bound on the true distance, so overshooting it is punished
while undershooting is merely regression error). With alpha = 2 each sample
loss lands in [0, 1]; smaller alpha shifts weight toward long-gap pairs.
"""

from __future__ import annotations

import json
import logging
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from . import kernels, neural
from .errors import DatasetParseError, ValidationError
from .trajdata import PairBatch, PairSample, PrioritizedBuffer

log = logging.getLogger(__name__)

NORM_P = {"l1": 1, "l2": 2}


@dataclass
class EmbedConfig:
    embed_dim: int = 64
    hidden: tuple = (128, 128)
    norm: str = "l1"
    alpha_exponent: float = 2.0
    penalty_enabled: bool = True
    batch_size: int = 512
    lr: float = 5e-4
    train_steps: int = 100_000
    weight_decay: float = 0.0
    max_gap: int | None = None
    per_alpha: float = 0.6
    per_epsilon: float = 0.1
    priority_source: str = "penalty"  # or "loss"
    seed: int = 0
    log_every: int = 100

    def __post_init__(self):
        if self.embed_dim < 1:
            raise ValidationError("embed_dim must be >= 1")
        if self.alpha_exponent < 0:
            raise ValidationError("alpha_exponent must be >= 0")
        if self.norm not in NORM_P:
            raise ValidationError(f"norm must be one of {sorted(NORM_P)}")
        if self.priority_source not in ("penalty", "loss"):
            raise ValidationError("priority_source must be 'penalty' or 'loss'")


class EmbeddingModel:
    """A frozen-after-training map from states to R^embed_dim."""

    def __init__(self, net: neural.Mlp, config: EmbedConfig):
        self.net = net
        self.config = config
        self.history: list[dict] = []

    @property
    def norm_p(self) -> int:
        return NORM_P[self.config.norm]

    def embed(self, states) -> np.ndarray:
        return neural.forward(self.net, states)

    def dist(self, s, s_prime) -> float:
        z = self.embed(np.stack([np.asarray(s), np.asarray(s_prime)]))
        return float(kernels.dist_rows(z[:1], z[1:], self.norm_p)[0])

    def distances(self, s, s_prime) -> np.ndarray:
        """Rowwise embedded distances for (B, d) state arrays."""
        z = self.embed(s)
        zp = self.embed(s_prime)
        return kernels.dist_rows(z, zp, self.norm_p)

    def latent_distances(self, z, z_goal) -> np.ndarray:
        z = np.atleast_2d(z)
        zg = np.broadcast_to(np.asarray(z_goal, dtype=np.float64), z.shape)
        return kernels.dist_rows(z, zg, self.norm_p)

    def save(self, path) -> None:
        cfg = asdict(self.config)
        cfg["hidden"] = list(self.config.hidden)
        with open(path, "w") as fh:
            json.dump({"kind": "embedding", "config": cfg, "net": neural.mlp_to_dict(self.net)}, fh)

    @classmethod
    def load(cls, path) -> "EmbeddingModel":
        try:
            with open(path) as fh:
                blob = json.load(fh)
            if blob.get("kind") != "embedding":
                raise DatasetParseError(f"{path} is not an embedding checkpoint")
            cfg = blob["config"]
            cfg["hidden"] = tuple(cfg["hidden"])
            return cls(neural.mlp_from_dict(blob["net"]), EmbedConfig(**cfg))
        except (json.JSONDecodeError, KeyError, TypeError) as exc:
            raise DatasetParseError(f"corrupt checkpoint {path}: {exc}") from exc


def _batch_arrays(batch):
    if isinstance(batch, PairBatch):
        return batch.s, batch.s_prime, batch.d_td
    if isinstance(batch, tuple) and len(batch) == 3 and isinstance(batch[0], np.ndarray):
        return batch[0], batch[1], np.asarray(batch[2], dtype=np.float64)
    if isinstance(batch, (list, tuple)) and batch and isinstance(batch[0], PairSample):
        return (
            np.stack([p.s for p in batch]),
            np.stack([p.s_prime for p in batch]),
            np.array([p.d_td for p in batch], dtype=np.float64),
        )
    raise ValidationError("batch must be a PairBatch, (s, s_prime, d_td) arrays, "
                          "or a non-empty list of PairSample")


def loss_batch(model: EmbeddingModel, batch):
    """Loss, per-sample hinge penalties and parameter gradients for a batch.

    The penalty vector is what the replay buffer uses as priorities.
    """
    s, sp, d = _batch_arrays(batch)
    if np.any(d < 1):
        raise ValidationError("pair gaps must be >= 1")
    cfg = model.config
    x = np.concatenate([s, sp])
    z, cache = neural.forward_cached(model.net, x)
    half = len(s)
    total, per_loss, per_penalty, _, dz = kernels.pair_loss(
        z[:half], z[half:], d, cfg.alpha_exponent, cfg.penalty_enabled, NORM_P[cfg.norm]
    )
    upstream = np.concatenate([dz, -dz])
    grads, _ = neural.backward(model.net, cache, upstream)
    return total, per_penalty, grads, per_loss


def train_embedding(trajs, cfg: EmbedConfig, buffer: PrioritizedBuffer | None = None) -> EmbeddingModel:
    """Fit an embedding from trajectories with prioritized pair replay.

    Each step samples a batch, applies one AdamW update and writes the
    per-sample penalties back as replay priorities.
    """
    if buffer is None:
        buffer = PrioritizedBuffer.from_trajectories(
            trajs, max_gap=cfg.max_gap, alpha=cfg.per_alpha, epsilon=cfg.per_epsilon
        )
    if len(buffer) == 0:
        raise ValidationError("no trainable pairs: dataset is empty or single-state")

    rng = np.random.default_rng(cfg.seed)
    state_dim = buffer.s.shape[1]
    net = neural.init_mlp([state_dim, *cfg.hidden, cfg.embed_dim], rng)
    model = EmbeddingModel(net, cfg)
    names, params = neural.parameters(net)
    opt = neural.AdamW(params, names, lr=cfg.lr, weight_decay=cfg.weight_decay)

    t0 = time.perf_counter()
    for step in range(1, cfg.train_steps + 1):
        batch = buffer.sample(cfg.batch_size, rng)
        total, per_penalty, grads, per_loss = loss_batch(model, batch)
        opt.step(neural.flatten_grads(grads))
        priorities = per_penalty if cfg.priority_source == "penalty" else per_loss
        buffer.update_priorities(batch.indices, priorities)
        if step % cfg.log_every == 0 or step == cfg.train_steps:
            violation = float(np.mean(per_penalty > 0))
            model.history.append(
                {"step": step, "loss": total, "batch_violation_rate": violation}
            )
            log.info(
                "embed step %d/%d loss %.4f violation %.3f (%.1fs)",
                step, cfg.train_steps, total, violation, time.perf_counter() - t0,
            )
    return model
