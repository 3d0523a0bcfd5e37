"""Latent transition model and random-shooting MPC in embedding space.

The transition model maps (embedded state, one-hot action) to the next
embedding; it is trained on (s, a, s') triples with the embedding frozen.
The planner samples N uniform action sequences of length H, scores each by
the cumulative negative embedded distance to the goal along a latent
rollout (the current state's distance included), and executes the first
action of the best sequence.
"""

from __future__ import annotations

import json
import logging
import time
from dataclasses import asdict, dataclass

import numpy as np

from . import neural
from .embed import EmbeddingModel
from .envs import GRID_ENVS, Env, EnvSpec, num_actions
from .errors import DatasetParseError, ValidationError
from .trajdata import Trajectory

log = logging.getLogger(__name__)


@dataclass
class DynConfig:
    hidden: tuple = (128, 128)
    batch_size: int = 512
    lr: float = 5e-4
    train_steps: int = 10_000
    weight_decay: float = 0.0
    seed: int = 0
    log_every: int = 100


@dataclass
class PlanConfig:
    horizon: int = 5
    num_sequences: int = 20
    goal_eps: float | None = None
    max_env_steps: int | None = None
    seed: int = 0

    def __post_init__(self):
        if self.horizon < 1 or self.num_sequences < 1:
            raise ValidationError("horizon and num_sequences must be >= 1")


class LatentDynamics:
    """Two 128-unit branches for the embedding and the one-hot action,
    merged by a joint head back to embedding size."""

    def __init__(self, state_net, action_net, joint_net, num_actions_):
        self.state_net = state_net
        self.action_net = action_net
        self.joint_net = joint_net
        self.num_actions = num_actions_
        self.history: list[dict] = []

    @property
    def embed_dim(self) -> int:
        return self.joint_net.output_dim

    def one_hot(self, actions) -> np.ndarray:
        a = np.atleast_1d(np.asarray(actions, dtype=np.int64))
        if np.any(a < 0) or np.any(a >= self.num_actions):
            raise ValidationError("action index out of range")
        out = np.zeros((len(a), self.num_actions))
        out[np.arange(len(a)), a] = 1.0
        return out

    def predict(self, z, actions) -> np.ndarray:
        """Next embeddings for a (B, embed_dim) batch and integer actions."""
        z = np.atleast_2d(np.asarray(z, dtype=np.float64))
        zf = neural.forward(self.state_net, z)
        af = neural.forward(self.action_net, self.one_hot(actions))
        if af.shape[0] == 1 and zf.shape[0] > 1:
            af = np.broadcast_to(af, (zf.shape[0], af.shape[1]))
        return neural.forward(self.joint_net, np.concatenate([zf, af], axis=1))

    def _forward_cached(self, z, a_onehot):
        zf, zc = neural.forward_cached(self.state_net, z)
        af, ac = neural.forward_cached(self.action_net, a_onehot)
        out, jc = neural.forward_cached(self.joint_net, np.concatenate([zf, af], axis=1))
        return out, (zc, ac, jc, zf.shape[1])

    def _backward(self, caches, upstream):
        zc, ac, jc, split = caches
        jg, dh = neural.backward(self.joint_net, jc, upstream)
        zg, _ = neural.backward(self.state_net, zc, dh[:, :split])
        ag, _ = neural.backward(self.action_net, ac, dh[:, split:])
        return zg, ag, jg

    def parameters(self):
        names, params = [], []
        for prefix, net in (("state.", self.state_net), ("action.", self.action_net), ("joint.", self.joint_net)):
            n, p = neural.parameters(net, prefix)
            names += n
            params += p
        return names, params

    def save(self, path) -> None:
        blob = {
            "kind": "dynamics",
            "num_actions": self.num_actions,
            "state_net": neural.mlp_to_dict(self.state_net),
            "action_net": neural.mlp_to_dict(self.action_net),
            "joint_net": neural.mlp_to_dict(self.joint_net),
        }
        with open(path, "w") as fh:
            json.dump(blob, fh)

    @classmethod
    def load(cls, path) -> "LatentDynamics":
        try:
            with open(path) as fh:
                blob = json.load(fh)
            if blob.get("kind") != "dynamics":
                raise DatasetParseError(f"{path} is not a dynamics checkpoint")
            return cls(
                neural.mlp_from_dict(blob["state_net"]),
                neural.mlp_from_dict(blob["action_net"]),
                neural.mlp_from_dict(blob["joint_net"]),
                int(blob["num_actions"]),
            )
        except (json.JSONDecodeError, KeyError, TypeError) as exc:
            raise DatasetParseError(f"corrupt checkpoint {path}: {exc}") from exc


def transition_triples(trajs):
    """All (s, a, s') triples from the dataset, stacked."""
    s = np.concatenate([t.states[:-1] for t in trajs])
    a = np.concatenate([t.actions for t in trajs])
    sp = np.concatenate([t.states[1:] for t in trajs])
    return s, a, sp


def train_dynamics(trajs, embedding: EmbeddingModel, cfg: DynConfig, n_actions: int | None = None) -> LatentDynamics:
    """Minimize the squared next-embedding error over dataset triples.

    The embedding is used as a fixed feature map; its parameters are never
    touched here.
    """
    s, a, sp = transition_triples(trajs)
    if len(a) == 0:
        raise ValidationError("no transition triples in the dataset")
    if n_actions is None:
        n_actions = int(a.max()) + 1
    dim = embedding.config.embed_dim
    rng = np.random.default_rng(cfg.seed)
    dyn = LatentDynamics(
        neural.init_mlp([dim, *cfg.hidden], rng, activate_output=True),
        neural.init_mlp([n_actions, *cfg.hidden], rng, activate_output=True),
        neural.init_mlp([2 * cfg.hidden[-1], *cfg.hidden, dim], rng),
        n_actions,
    )
    z_all = embedding.embed(s)
    zp_all = embedding.embed(sp)
    onehot_all = dyn.one_hot(a)

    names, params = dyn.parameters()
    opt = neural.AdamW(params, names, lr=cfg.lr, weight_decay=cfg.weight_decay)
    t0 = time.perf_counter()
    for step in range(1, cfg.train_steps + 1):
        idx = rng.integers(len(a), size=cfg.batch_size)
        pred, caches = dyn._forward_cached(z_all[idx], onehot_all[idx])
        diff = pred - zp_all[idx]
        loss = float((diff * diff).sum())
        zg, ag, jg = dyn._backward(caches, 2.0 * diff)
        opt.step(neural.flatten_grads(zg) + neural.flatten_grads(ag) + neural.flatten_grads(jg))
        if step % cfg.log_every == 0 or step == cfg.train_steps:
            dyn.history.append({"step": step, "loss": loss})
            log.info(
                "dyn step %d/%d loss %.4f (%.1fs)",
                step, cfg.train_steps, loss, time.perf_counter() - t0,
            )
    return dyn


def one_step_latent_error(dyn: LatentDynamics, embedding: EmbeddingModel, trajs) -> float:
    """Mean embedded-space distance between predicted and actual next state."""
    s, a, sp = transition_triples(trajs)
    diff = dyn.predict(embedding.embed(s), a) - embedding.embed(sp)
    if embedding.norm_p == 1:
        per = np.abs(diff).sum(axis=1)
    else:
        per = np.sqrt((diff * diff).sum(axis=1))
    return float(per.mean())


def rollout(dyn: LatentDynamics, z0, actions) -> np.ndarray:
    """Latent states [z_1 .. z_H] from recursively applying the model."""
    z = np.atleast_2d(np.asarray(z0, dtype=np.float64))
    out = np.empty((len(actions), dyn.embed_dim))
    for t, a in enumerate(actions):
        z = dyn.predict(z, a)
        out[t] = z[0]
    return out


def _score_sequences(dyn, embedding, z0, z_goal, action_seqs) -> np.ndarray:
    """Cumulative negative latent goal distance per sequence, batched.

    Column t of action_seqs is the action all sequences take at step t.
    """
    n = action_seqs.shape[0]
    z = np.repeat(np.atleast_2d(z0), n, axis=0)
    scores = np.full(n, -float(embedding.latent_distances(z0, z_goal)[0]))
    for t in range(action_seqs.shape[1]):
        z = dyn.predict(z, action_seqs[:, t])
        scores -= embedding.latent_distances(z, z_goal)
    return scores


def score_sequence(dyn: LatentDynamics, embedding: EmbeddingModel, s, goal, actions) -> float:
    """Score one action sequence from state s toward goal (<= 0)."""
    z0 = embedding.embed(np.asarray(s, dtype=np.float64))
    zg = embedding.embed(np.asarray(goal, dtype=np.float64))
    seq = np.asarray(actions, dtype=np.int64)[None, :]
    if seq.shape[1] == 0:
        return -float(embedding.latent_distances(z0, zg)[0])
    return float(_score_sequences(dyn, embedding, z0, zg, seq)[0])


def default_goal_eps(embedding: EmbeddingModel, trajs) -> float:
    """Half the mean embedded distance between adjacent dataset states."""
    s, _, sp = transition_triples(trajs)
    return 0.5 * float(np.mean(embedding.distances(s, sp)))


def plan_dist_episode(spec: EnvSpec, embedding: EmbeddingModel, dyn: LatentDynamics,
                      goal, cfg: PlanConfig, rng=None, start=None):
    """Run one planned episode toward the goal.

    Returns (trajectory, success, final_embedded_distance). The goal test
    uses exact cell equality on grids and the embedded-distance tolerance
    cfg.goal_eps otherwise; the check runs before each action, so starting
    at the goal succeeds in zero steps.
    """
    rng = np.random.default_rng(cfg.seed if rng is None else rng)
    budget = cfg.max_env_steps or spec.max_episode_steps
    env = Env(spec, goal=goal)
    s = env.reset(rng)
    if start is not None:
        env.state = np.asarray(start, dtype=np.float64)
        s = env.state
    zg = embedding.embed(np.asarray(goal, dtype=np.float64))
    n_act = num_actions(spec)

    def reached(state):
        # grids: exact cell equality; continuous: env success or eps-ball
        if spec.env_id in GRID_ENVS or cfg.goal_eps is None:
            return env.at_goal(state)
        return env.at_goal(state) or float(
            embedding.latent_distances(embedding.embed(state), zg)[0]
        ) <= cfg.goal_eps

    states, actions = [s], []
    success = reached(s)
    while not success and len(actions) < budget:
        seqs = rng.integers(n_act, size=(cfg.num_sequences, cfg.horizon))
        scores = _score_sequences(dyn, embedding, embedding.embed(s), zg, seqs)
        best = int(np.argmax(scores))  # ties: first sampled wins
        s, _, _ = env.step(int(seqs[best, 0]))
        states.append(s)
        actions.append(int(seqs[best, 0]))
        success = reached(s)
    final_dist = float(embedding.latent_distances(embedding.embed(s), zg)[0])
    return Trajectory(np.array(states), np.array(actions, dtype=np.int64)), success, final_dist
