"""Trajectory storage, state-pair extraction and the prioritized pair buffer.

A pair (s_i, s_j, j - i) taken from one trajectory gives the number of
decision steps actually used to get from s_i to s_j, which upper-bounds the
minimum action distance between them; those gaps are the regression targets
for the embedding. The buffer replays pairs with probability proportional to
(priority + eps) ** alpha, priorities being the current upper-bound penalty
of each pair.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .envs import Env, EnvSpec, enumerate_states, num_actions, state_key
from .errors import DatasetParseError, EmptyBufferError, ValidationError

PER_ALPHA = 0.6
PER_EPSILON = 0.1


@dataclass
class Trajectory:
    states: np.ndarray  # (n+1, d) float64
    actions: np.ndarray  # (n,) int64

    def __post_init__(self):
        self.states = np.asarray(self.states, dtype=np.float64)
        self.actions = np.asarray(self.actions, dtype=np.int64)
        if self.states.ndim != 2 or len(self.states) != len(self.actions) + 1:
            raise ValidationError(
                f"need |states| = |actions| + 1, got {self.states.shape} / {self.actions.shape}"
            )
        if not np.all(np.isfinite(self.states)):
            raise ValidationError("non-finite state features")

    def __len__(self):
        return len(self.actions)


@dataclass
class PairSample:
    s: np.ndarray
    s_prime: np.ndarray
    d_td: int


@dataclass
class PairBatch:
    """A stacked batch of pair samples plus their buffer indices."""

    s: np.ndarray        # (B, d)
    s_prime: np.ndarray  # (B, d)
    d_td: np.ndarray     # (B,) float64
    indices: np.ndarray | None = None

    def __len__(self):
        return len(self.d_td)


def extract_pairs(traj: Trajectory, max_gap: int | None = None) -> list[PairSample]:
    """All (s_i, s_j, j - i) with i < j and gap <= max_gap, gap-major order."""
    s, sp, d = extract_pair_arrays([traj], max_gap)
    return [PairSample(s[k], sp[k], int(d[k])) for k in range(len(d))]


def extract_pair_arrays(trajs, max_gap: int | None = None):
    """Vectorized pair extraction over many trajectories.

    Returns (s, s_prime, d_td) arrays; same enumeration order as
    extract_pairs per trajectory.
    """
    chunks_s, chunks_sp, chunks_d = [], [], []
    for traj in trajs:
        n = len(traj)
        top = n if max_gap is None else min(n, int(max_gap))
        for gap in range(1, top + 1):
            chunks_s.append(traj.states[:-gap])
            chunks_sp.append(traj.states[gap:])
            chunks_d.append(np.full(n - gap + 1, gap, dtype=np.float64))
    if not chunks_s:
        dim = trajs[0].states.shape[1] if len(list(trajs)) else 0
        return np.empty((0, dim)), np.empty((0, dim)), np.empty(0)
    return (
        np.concatenate(chunks_s),
        np.concatenate(chunks_sp),
        np.concatenate(chunks_d),
    )


class PrioritizedBuffer:
    """Pair replay with sampling probability ~ (priority + eps) ** alpha.

    Linear-scan sampler; fine at desk scale. New samples enter with the
    maximal current priority so each gets replayed at least once.
    """

    def __init__(self, alpha: float = PER_ALPHA, epsilon: float = PER_EPSILON):
        if not 0.0 <= alpha <= 1.0 or epsilon <= 0.0:
            raise ValidationError("need 0 <= alpha <= 1 and epsilon > 0")
        self.alpha = float(alpha)
        self.epsilon = float(epsilon)
        self.s = None
        self.s_prime = None
        self.d_td = None
        self.priorities = np.empty(0)
        self._powered = np.empty(0)

    def __len__(self):
        return 0 if self.d_td is None else len(self.d_td)

    def add_pairs(self, s, sp, d) -> None:
        s = np.asarray(s, dtype=np.float64)
        sp = np.asarray(sp, dtype=np.float64)
        d = np.asarray(d, dtype=np.float64)
        if np.any(d < 1):
            raise ValidationError("pair gaps must be >= 1")
        init = max(1.0, self.priorities.max()) if len(self) else 1.0
        prios = np.full(len(d), init)
        if self.d_td is None:
            self.s, self.s_prime, self.d_td = s, sp, d
            self.priorities = prios
        else:
            self.s = np.concatenate([self.s, s])
            self.s_prime = np.concatenate([self.s_prime, sp])
            self.d_td = np.concatenate([self.d_td, d])
            self.priorities = np.concatenate([self.priorities, prios])
        self._powered = (self.priorities + self.epsilon) ** self.alpha

    @classmethod
    def from_trajectories(cls, trajs, max_gap=None, alpha=PER_ALPHA, epsilon=PER_EPSILON):
        buf = cls(alpha=alpha, epsilon=epsilon)
        s, sp, d = extract_pair_arrays(trajs, max_gap)
        if len(d):
            buf.add_pairs(s, sp, d)
        return buf

    def sample(self, batch_size: int, rng: np.random.Generator) -> PairBatch:
        """batch_size draws with replacement following the priority law."""
        if len(self) == 0:
            raise EmptyBufferError("cannot sample from an empty buffer")
        probs = self._powered / self._powered.sum()
        idx = rng.choice(len(self), size=int(batch_size), replace=True, p=probs)
        return PairBatch(self.s[idx], self.s_prime[idx], self.d_td[idx], idx)

    def update_priorities(self, indices, new_priorities) -> None:
        indices = np.asarray(indices)
        new_priorities = np.asarray(new_priorities, dtype=np.float64)
        if len(indices) != len(new_priorities):
            raise ValidationError("indices and priorities differ in length")
        if np.any(indices < 0) or np.any(indices >= len(self)):
            raise IndexError("priority index out of range")
        if np.any(new_priorities < 0) or not np.all(np.isfinite(new_priorities)):
            raise ValidationError("priorities must be finite and non-negative")
        self.priorities[indices] = new_priorities
        self._powered[indices] = (new_priorities + self.epsilon) ** self.alpha


# ---------------------------------------------------------------------------
# dataset files: one JSON record per line
# ---------------------------------------------------------------------------


def save_dataset(trajs, path) -> None:
    with open(path, "w") as fh:
        for traj in trajs:
            rec = {"states": traj.states.tolist(), "actions": traj.actions.tolist()}
            fh.write(json.dumps(rec) + "\n")


def load_dataset(path) -> list[Trajectory]:
    trajs = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                trajs.append(Trajectory(np.array(rec["states"]), np.array(rec["actions"])))
            except (json.JSONDecodeError, KeyError, ValidationError, ValueError) as exc:
                raise DatasetParseError(f"{path}: bad record at line {lineno}: {exc}") from exc
    return trajs


# ---------------------------------------------------------------------------
# collection
# ---------------------------------------------------------------------------


def collect_random_trajectories(spec: EnvSpec, n_traj: int, seed: int) -> list[Trajectory]:
    """Random-walk episodes run to the step budget (or an intrinsic terminal)."""
    children = np.random.SeedSequence(seed).spawn(n_traj)
    env = Env(spec)
    out = []
    for child in children:
        rng = np.random.default_rng(child)
        s = env.reset(rng)
        states, actions = [s], []
        done = False
        while not done:
            a = int(rng.integers(num_actions(spec)))
            s, _, done = env.step(a)
            states.append(s)
            actions.append(a)
        out.append(Trajectory(np.array(states), np.array(actions)))
    return out


def state_coverage(spec: EnvSpec, trajs) -> float:
    """Fraction of enumerable states visited by the dataset."""
    all_keys = {state_key(spec, s) for s in enumerate_states(spec)}
    seen = set()
    for traj in trajs:
        for s in traj.states:
            seen.add(state_key(spec, s))
    return len(seen & all_keys) / len(all_keys)
