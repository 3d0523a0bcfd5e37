"""Potential-based reward shaping from the learned distance, a tabular
Q-learning consumer, and a goal-conditioned behavioral-cloning baseline.

The shaping potential of a state is the negative embedded distance to the
goal, so the shaping term F = gamma * phi(s') - phi(s) rewards steps that
move closer to the goal in embedding space while provably preserving the
optimal policy. The baseline clones actions from relabeled sub-trajectories
(every later state of a trajectory serves as a goal for every earlier one),
optionally conditioned on the normalized remaining horizon.
"""

from __future__ import annotations

import json
import logging
import time
from dataclasses import dataclass, field

import numpy as np

from . import neural
from .embed import EmbeddingModel
from .envs import (GRID_ENVS, Env, EnvSpec, enumerate_states, env_spec_from_dict,
                   num_actions, spec_to_dict, state_key)
from .errors import DatasetParseError, UnsupportedEnvError, ValidationError
from .trajdata import Trajectory

log = logging.getLogger(__name__)


# ---------------------------------------------------------------------------
# reward shaping
# ---------------------------------------------------------------------------


class ShapedReward:
    """Potential shaping with phi(s) = -d(phi_net(s), phi_net(goal))."""

    def __init__(self, embedding: EmbeddingModel, goal, gamma: float = 1.0):
        if not 0.0 < gamma <= 1.0:
            raise ValidationError(f"gamma must lie in (0, 1], got {gamma}")
        self.embedding = embedding
        self.goal = np.asarray(goal, dtype=np.float64)
        self.gamma = gamma
        self._z_goal = embedding.embed(self.goal)
        self._cache: dict = {}

    def potential(self, s) -> float:
        z = self.embedding.embed(np.asarray(s, dtype=np.float64))
        return -float(self.embedding.latent_distances(z, self._z_goal)[0])

    def cached_potential(self, key, s) -> float:
        """Potential memoized by hashable state key (tabular consumers)."""
        if key not in self._cache:
            self._cache[key] = self.potential(s)
        return self._cache[key]

    def shaping_term(self, s, s_prime) -> float:
        return self.gamma * self.potential(s_prime) - self.potential(s)

    def __call__(self, s, r: float, s_prime) -> float:
        return shaped_reward(self, s, r, s_prime)


def shaped_reward(sr: ShapedReward, s, r: float, s_prime) -> float:
    """Original reward plus the potential difference gamma*phi(s')-phi(s)."""
    return r + sr.shaping_term(s, s_prime)


# ---------------------------------------------------------------------------
# tabular Q-learning
# ---------------------------------------------------------------------------


@dataclass
class QConfig:
    learning_rate: float = 0.1
    gamma: float = 1.0
    epsilon_start: float = 1.0
    epsilon_end: float = 0.05
    decay_fraction: float = 0.5     # linear decay finishes after this share of episodes
    seed: int = 0
    eval_every: int = 0             # 0 disables periodic greedy evaluation

    def __post_init__(self):
        if not 0.0 < self.gamma <= 1.0:
            raise ValidationError(f"gamma must lie in (0, 1], got {self.gamma}")
        if not 0.0 < self.decay_fraction <= 1.0:
            raise ValidationError("decay_fraction must lie in (0, 1]")


class QTable:
    """Action values over the enumerable state set of one env."""

    def __init__(self, spec: EnvSpec, learning_rate: float, gamma: float):
        if spec.env_id not in GRID_ENVS:
            raise UnsupportedEnvError("tabular learning needs an enumerable env")
        self.spec = spec
        self.learning_rate = learning_rate
        self.gamma = gamma
        self.states = enumerate_states(spec)
        self.keys = [state_key(spec, s) for s in self.states]
        self.index = {k: i for i, k in enumerate(self.keys)}
        self.values = np.zeros((len(self.keys), num_actions(spec)))

    def row_of(self, state) -> int:
        key = state_key(self.spec, np.asarray(state, dtype=np.float64))
        try:
            return self.index[key]
        except KeyError:
            raise ValidationError(f"state {key} is outside the table") from None

    def value(self, state, action: int) -> float:
        return float(self.values[self.row_of(state), action])

    def greedy(self, state) -> int:
        """Best action; ties resolve to the lowest index."""
        return int(np.argmax(self.values[self.row_of(state)]))


def _epsilon(cfg: QConfig, episode: int, episodes: int) -> float:
    horizon = max(1.0, cfg.decay_fraction * episodes)
    frac = min(1.0, episode / horizon)
    return cfg.epsilon_start + (cfg.epsilon_end - cfg.epsilon_start) * frac


def greedy_success_rate(spec: EnvSpec, q: QTable, goal, budget: int | None = None) -> float:
    """Fraction of enumerable start states the greedy policy drives to the goal."""
    env = Env(spec, goal=goal)
    budget = budget or spec.max_episode_steps
    wins = 0
    for s0 in q.states:
        env.state, env.steps = s0, 0
        s = s0
        for _ in range(budget):
            if env.at_goal(s):
                break
            s, _, _ = env.step(q.greedy(s))
        wins += env.at_goal(s)
    return wins / len(q.states)


def q_learn(spec: EnvSpec, goal, episodes: int, cfg: QConfig,
            sr: ShapedReward | None = None):
    """Epsilon-greedy tabular Q-learning toward a fixed goal.

    When a ShapedReward is given its shaping term is added to every update
    target; the returned learning curve always logs the ORIGINAL per-episode
    return, so shaped and unshaped runs are directly comparable. Reaching
    the goal is absorbing (no bootstrap); running out of budget is a timeout
    and still bootstraps.
    """
    q = QTable(spec, cfg.learning_rate, cfg.gamma)
    rng = np.random.default_rng(cfg.seed)
    env = Env(spec, goal=goal)
    n_act = num_actions(spec)
    curve: list[dict] = []
    for ep in range(episodes):
        eps = _epsilon(cfg, ep, episodes)
        s = env.reset(rng)
        ep_return, steps, reached = 0.0, 0, env.at_goal(s)
        while not reached and steps < spec.max_episode_steps:
            i = q.row_of(s)
            if rng.random() < eps:
                a = int(rng.integers(n_act))
            else:
                a = int(np.argmax(q.values[i]))
            s_next, r, _ = env.step(a)
            ep_return += r
            steps += 1
            reached = env.at_goal(s_next)
            r_eff = r
            if sr is not None:
                phi_next = sr.cached_potential(state_key(spec, s_next), s_next)
                phi_here = sr.cached_potential(q.keys[i], s)
                r_eff = r + sr.gamma * phi_next - phi_here
            target = r_eff if reached else r_eff + cfg.gamma * float(np.max(q.values[q.row_of(s_next)]))
            q.values[i, a] += cfg.learning_rate * (target - q.values[i, a])
            s = s_next
        record = {"episode": ep, "return": ep_return, "steps": steps, "epsilon": eps}
        if cfg.eval_every and (ep + 1) % cfg.eval_every == 0:
            record["greedy_success"] = greedy_success_rate(spec, q, goal)
        curve.append(record)
    return q, curve


def save_qtable(q: QTable, path) -> None:
    blob = {
        "kind": "qtable",
        "spec": spec_to_dict(q.spec),
        "learning_rate": q.learning_rate,
        "gamma": q.gamma,
        "values": q.values.tolist(),
    }
    with open(path, "w") as fh:
        json.dump(blob, fh)


def load_qtable(path) -> QTable:
    try:
        with open(path) as fh:
            blob = json.load(fh)
        if blob.get("kind") != "qtable":
            raise DatasetParseError(f"{path} is not a value-table checkpoint")
        spec = env_spec_from_dict(blob["spec"])
        q = QTable(spec, float(blob["learning_rate"]), float(blob["gamma"]))
        values = np.array([[float(v) for v in row] for row in blob["values"]])
        if values.shape != q.values.shape:
            raise DatasetParseError(f"{path}: value table shape {values.shape} "
                                    f"does not match the env ({q.values.shape})")
        q.values = values
        return q
    except (json.JSONDecodeError, KeyError, TypeError) as exc:
        raise DatasetParseError(f"corrupt checkpoint {path}: {exc}") from exc


def collect_greedy_trajectories(q: QTable, n_traj: int, seed: int) -> list[Trajectory]:
    """Roll the greedy table policy from random starts to the step budget."""
    children = np.random.SeedSequence(seed).spawn(n_traj)
    env = Env(q.spec)
    out = []
    for child in children:
        rng = np.random.default_rng(child)
        s = env.reset(rng)
        states, actions = [s], []
        done = False
        while not done:
            a = q.greedy(s)
            s, _, done = env.step(a)
            states.append(s)
            actions.append(a)
        out.append(Trajectory(np.array(states), np.array(actions, dtype=np.int64)))
    return out


def save_curve(curve: list[dict], path) -> None:
    """Plot-ready text: header line, then one space-separated row per episode."""
    cols = ["episode", "return", "steps", "epsilon", "greedy_success"]

    def cell(rec, c):
        if c not in rec:
            return "nan"
        v = rec[c]
        return str(v) if isinstance(v, int) else repr(float(v))

    with open(path, "w") as fh:
        fh.write(" ".join(cols) + "\n")
        for rec in curve:
            fh.write(" ".join(cell(rec, c) for c in cols) + "\n")


# ---------------------------------------------------------------------------
# goal-conditioned behavioral cloning
# ---------------------------------------------------------------------------


@dataclass
class GcslConfig:
    hidden: tuple = (128, 128)
    batch_size: int = 256
    lr: float = 5e-4
    train_steps: int = 5_000
    weight_decay: float = 0.0
    horizon_conditioned: bool = True
    max_gap: int | None = None
    max_horizon: int = 50           # normalizes the horizon input to [0, 1]
    seed: int = 0
    log_every: int = 100

    def __post_init__(self):
        if self.batch_size < 1 or self.train_steps < 1 or self.max_horizon < 1:
            raise ValidationError("batch_size, train_steps and max_horizon must be >= 1")
        if self.max_gap is not None and self.max_gap < 1:
            raise ValidationError("max_gap must be >= 1 when set")


class GcslPolicy:
    """Logit net over actions, conditioned on (state, goal[, horizon])."""

    def __init__(self, net, num_actions_: int, horizon_conditioned: bool, max_horizon: int):
        self.net = net
        self.num_actions = num_actions_
        self.horizon_conditioned = horizon_conditioned
        self.max_horizon = max_horizon
        self.history: list[dict] = []

    def inputs(self, s, g, h) -> np.ndarray:
        s = np.atleast_2d(np.asarray(s, dtype=np.float64))
        g = np.atleast_2d(np.asarray(g, dtype=np.float64))
        if not self.horizon_conditioned:
            return np.concatenate([s, g], axis=1)
        h = np.atleast_1d(np.asarray(h, dtype=np.float64))
        h_norm = np.clip(h / self.max_horizon, 0.0, 1.0)
        return np.concatenate([s, g, h_norm[:, None]], axis=1)

    def logits(self, s, g, h=0) -> np.ndarray:
        return np.atleast_2d(neural.forward(self.net, self.inputs(s, g, h)))

    def save(self, path) -> None:
        blob = {
            "kind": "gcsl",
            "num_actions": self.num_actions,
            "horizon_conditioned": self.horizon_conditioned,
            "max_horizon": self.max_horizon,
            "net": neural.mlp_to_dict(self.net),
        }
        with open(path, "w") as fh:
            json.dump(blob, fh)

    @classmethod
    def load(cls, path) -> "GcslPolicy":
        try:
            with open(path) as fh:
                blob = json.load(fh)
            if blob.get("kind") != "gcsl":
                raise DatasetParseError(f"{path} is not a policy checkpoint")
            return cls(neural.mlp_from_dict(blob["net"]), int(blob["num_actions"]),
                       bool(blob["horizon_conditioned"]), int(blob["max_horizon"]))
        except (json.JSONDecodeError, KeyError, TypeError) as exc:
            raise DatasetParseError(f"corrupt checkpoint {path}: {exc}") from exc


def gcsl_act(policy: GcslPolicy, s, g, h_remaining: int = 0) -> int:
    """Deterministic evaluation action: argmax logit, ties to lowest index."""
    return int(np.argmax(policy.logits(s, g, h_remaining)[0]))


def relabeled_tuples(trajs, max_gap: int | None = None):
    """Hindsight dataset: (s_i, a_i, g=s_j, h=j-i) for every i < j pair.

    A length-n trajectory yields n(n+1)/2 tuples when gaps are unbounded.
    """
    s_parts, g_parts, a_parts, h_parts = [], [], [], []
    for traj in trajs:
        n = len(traj)
        top = n if max_gap is None else min(n, max_gap)
        for gap in range(1, top + 1):
            s_parts.append(traj.states[: n - gap + 1])
            g_parts.append(traj.states[gap:])
            a_parts.append(traj.actions[: n - gap + 1])
            h_parts.append(np.full(n - gap + 1, gap, dtype=np.float64))
    if not s_parts:
        raise ValidationError("no sub-trajectories to relabel")
    return (np.concatenate(s_parts), np.concatenate(a_parts),
            np.concatenate(g_parts), np.concatenate(h_parts))


def _softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def gcsl_train(trajs, cfg: GcslConfig, num_actions_: int | None = None) -> GcslPolicy:
    """Cross-entropy cloning of actions from relabeled sub-trajectories."""
    s, a, g, h = relabeled_tuples(trajs, cfg.max_gap)
    if num_actions_ is None:
        num_actions_ = int(a.max()) + 1
    rng = np.random.default_rng(cfg.seed)
    in_dim = 2 * s.shape[1] + (1 if cfg.horizon_conditioned else 0)
    net = neural.init_mlp([in_dim, *cfg.hidden, num_actions_], rng)
    policy = GcslPolicy(net, num_actions_, cfg.horizon_conditioned, cfg.max_horizon)
    x_all = policy.inputs(s, g, h)

    names, params = neural.parameters(net)
    opt = neural.AdamW(params, names, lr=cfg.lr, weight_decay=cfg.weight_decay)
    t0 = time.perf_counter()
    for step in range(1, cfg.train_steps + 1):
        idx = rng.integers(len(a), size=cfg.batch_size)
        logits, cache = neural.forward_cached(net, x_all[idx])
        probs = _softmax(logits)
        picked = np.clip(probs[np.arange(len(idx)), a[idx]], 1e-12, None)
        loss = float(-np.log(picked).mean())
        upstream = probs
        upstream[np.arange(len(idx)), a[idx]] -= 1.0
        grads, _ = neural.backward(net, cache, upstream / len(idx))
        opt.step(neural.flatten_grads(grads))
        if step % cfg.log_every == 0 or step == cfg.train_steps:
            policy.history.append({"step": step, "loss": loss})
            log.info("gcsl step %d/%d ce %.4f (%.1fs)",
                     step, cfg.train_steps, loss, time.perf_counter() - t0)
    return policy


def gcsl_episode(spec: EnvSpec, policy: GcslPolicy, goal, budget: int | None = None,
                 rng=None, start=None):
    """Run the cloned policy greedily toward a goal; mirrors the planner loop."""
    rng = np.random.default_rng(rng)
    budget = budget or spec.max_episode_steps
    env = Env(spec, goal=goal)
    s = env.reset(rng)
    if start is not None:
        env.state = np.asarray(start, dtype=np.float64)
        s = env.state
    states, actions = [s], []
    success = env.at_goal(s)
    while not success and len(actions) < budget:
        a = gcsl_act(policy, s, goal, budget - len(actions))
        s, _, _ = env.step(a)
        states.append(s)
        actions.append(a)
        success = env.at_goal(s)
    return Trajectory(np.array(states), np.array(actions, dtype=np.int64)), success
