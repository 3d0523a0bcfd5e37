"""Exact minimum-action distances by breadth-first search, plus the
evaluation metrics the rest of the toolkit is judged against.

The oracle enumerates every reachable state of a deterministic grid env,
runs BFS from each one over the single-step transition graph, and audits
the resulting table (Bellman one-step consistency, triangle inequality)
before handing it out. Evaluation compares learned embedded distances to
the symmetrized table and summarizes planner episodes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, fields

import numpy as np
from scipy import stats

from . import envs
from .embed import EmbeddingModel
from .envs import EnvSpec, num_actions, state_key
from .errors import DatasetParseError, ValidationError

UNREACHABLE = -1

# -1 is the storage sentinel; audits and symmetrization swap it for a
# value no real path length can reach.
_INF = np.iinfo(np.int64).max // 4


@dataclass
class MadTable:
    """Directed minimum-action distances over an enumerated state set."""

    spec: EnvSpec
    states: np.ndarray              # (n, d), enumeration order
    keys: list                      # hashable key per row
    dist: np.ndarray                # (n, n) int64, UNREACHABLE where no path
    index: dict = field(init=False, repr=False)

    def __post_init__(self):
        self.index = {k: i for i, k in enumerate(self.keys)}

    def __len__(self) -> int:
        return len(self.keys)

    def row_of(self, state) -> int:
        """Row index for a state vector or an already-computed state key."""
        if isinstance(state, tuple):
            key = state
        else:
            key = state_key(self.spec, np.asarray(state, dtype=np.float64))
        try:
            return self.index[key]
        except KeyError:
            raise ValidationError(f"state {key} is not in the oracle table") from None

    def lookup(self, s, s_prime) -> int:
        """Directed distance; UNREACHABLE when no action path exists."""
        return int(self.dist[self.row_of(s), self.row_of(s_prime)])

    def symmetric(self) -> np.ndarray:
        """min(d(s,s'), d(s',s)) per pair, UNREACHABLE when neither is finite."""
        d = np.where(self.dist < 0, _INF, self.dist)
        sym = np.minimum(d, d.T)
        return np.where(sym >= _INF, UNREACHABLE, sym)

    def sym_lookup(self, s, s_prime) -> int:
        return int(self.symmetric()[self.row_of(s), self.row_of(s_prime)])


def _next_index(spec: EnvSpec, states: np.ndarray, index: dict) -> np.ndarray:
    """(n, |A|) successor rows under the deterministic step function."""
    n_act = num_actions(spec)
    nxt = np.empty((len(states), n_act), dtype=np.int64)
    for i, s in enumerate(states):
        for a in range(n_act):
            key = state_key(spec, envs.transition(spec, s, a))
            if key not in index:
                raise ValidationError(f"transition left the enumerated set at {key}")
            nxt[i, a] = index[key]
    return nxt


def _bfs_all_pairs(next_idx: np.ndarray) -> np.ndarray:
    """Level-synchronized BFS from every source over successor rows."""
    n = next_idx.shape[0]
    dist = np.full((n, n), UNREACHABLE, dtype=np.int64)
    for src in range(n):
        row = dist[src]
        row[src] = 0
        frontier = np.array([src])
        level = 0
        while frontier.size:
            level += 1
            nxt = np.unique(next_idx[frontier].ravel())
            nxt = nxt[row[nxt] < 0]
            row[nxt] = level
            frontier = nxt
    return dist


def audit_one_step(dist: np.ndarray, next_idx: np.ndarray) -> None:
    """Bellman certificate: d(s,u) = 1 + min_a d(next(s,a), u) off-diagonal.

    Together with zeros on the diagonal this pins dist as THE shortest-path
    table of the graph, so it doubles as a full correctness check.
    """
    n = dist.shape[0]
    d = np.where(dist < 0, _INF, dist)
    best = np.full((n, n), _INF, dtype=np.int64)
    for a in range(next_idx.shape[1]):
        np.minimum(best, d[next_idx[:, a]], out=best)
    expected = np.minimum(best + 1, _INF)
    np.fill_diagonal(expected, 0)
    if not np.array_equal(np.where(d >= _INF, _INF, d), expected):
        raise ValidationError("distance table fails one-step Bellman consistency")


def audit_triangle(dist: np.ndarray, rng=None, max_triples: int = 200_000) -> None:
    """d(s,u) <= d(s,v) + d(v,u); exhaustive when small, sampled otherwise."""
    n = dist.shape[0]
    d = np.where(dist < 0, _INF, dist).astype(np.float64)
    if n <= 120:
        via = d[:, :, None] + d[None, :, :]            # (s, v, u)
        if np.any(d[:, None, :] > via + 1e-9):
            raise ValidationError("distance table violates the triangle inequality")
        return
    rng = np.random.default_rng(0 if rng is None else rng)
    s, v, u = (rng.integers(n, size=max_triples) for _ in range(3))
    if np.any(d[s, u] > d[s, v] + d[v, u] + 1e-9):
        raise ValidationError("distance table violates the triangle inequality")


def compute_mad(spec: EnvSpec) -> MadTable:
    """BFS shortest action counts between every pair of reachable states."""
    states = envs.enumerate_states(spec)
    keys = [state_key(spec, s) for s in states]
    index = {k: i for i, k in enumerate(keys)}
    next_idx = _next_index(spec, states, index)
    dist = _bfs_all_pairs(next_idx)
    audit_one_step(dist, next_idx)
    audit_triangle(dist)
    return MadTable(spec, states, keys, dist)


# ---------------------------------------------------------------------------
# evaluation
# ---------------------------------------------------------------------------


@dataclass
class EvalReport:
    """Flat metric bundle; fields not produced by a given evaluation stay None."""

    mae: float | None = None
    spearman: float | None = None
    violation_rate: float | None = None
    success_rate: float | None = None
    mean_path_ratio: float | None = None

    def __post_init__(self):
        for f in fields(self):
            v = getattr(self, f.name)
            if v is None:
                continue
            v = float(v)
            if not math.isfinite(v):
                raise ValidationError(f"{f.name} must be finite, got {v}")
            if f.name in ("violation_rate", "success_rate") and not 0.0 <= v <= 1.0:
                raise ValidationError(f"{f.name} must lie in [0, 1], got {v}")
            if f.name == "spearman" and not -1.0 <= v <= 1.0 + 1e-12:
                raise ValidationError(f"spearman must lie in [-1, 1], got {v}")
            setattr(self, f.name, v)


@dataclass
class PlanEpisode:
    """One planner episode summary, enough to score against the oracle."""

    start: np.ndarray
    goal: np.ndarray
    steps: int
    success: bool
    final_distance: float = 0.0


def finite_pair_indices(table: MadTable) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Unordered distinct state pairs with a finite symmetric distance."""
    sym = table.symmetric()
    iu, ju = np.triu_indices(len(table), k=1)
    ok = sym[iu, ju] >= 0
    return iu[ok], ju[ok], sym[iu[ok], ju[ok]]


def violation_rate(embedding: EmbeddingModel, pairs, margin: float = 0.5) -> float:
    """Fraction of training pairs whose embedded distance exceeds d_TD + margin."""
    from .embed import _batch_arrays

    s, sp, d_td = _batch_arrays(pairs)
    pred = embedding.distances(s, sp)
    return float(np.mean(pred > d_td + margin))


def evaluate_embedding(embedding: EmbeddingModel, table: MadTable,
                       max_pairs: int | None = None, train_pairs=None,
                       margin: float = 0.5, seed: int = 0) -> EvalReport:
    """MAE and Spearman of embedded vs oracle distance over finite pairs.

    max_pairs subsamples the pair set without replacement; train_pairs, when
    given, additionally yields the upper-bound violation rate at the margin.
    """
    iu, ju, target = finite_pair_indices(table)
    if len(iu) == 0:
        raise ValidationError("no finite state pairs to evaluate")
    if max_pairs is not None and max_pairs < len(iu):
        pick = np.random.default_rng(seed).choice(len(iu), size=max_pairs, replace=False)
        iu, ju, target = iu[pick], ju[pick], target[pick]
    pred = embedding.distances(table.states[iu], table.states[ju])
    mae = float(np.mean(np.abs(pred - target)))
    if np.ptp(target) == 0 or np.ptp(pred) == 0:
        spearman = 0.0  # rank correlation undefined on a constant vector
    else:
        spearman = float(stats.spearmanr(pred, target).statistic)
    viol = None if train_pairs is None else violation_rate(embedding, train_pairs, margin)
    return EvalReport(mae=mae, spearman=spearman, violation_rate=viol)


def evaluate_planner(episodes: list[PlanEpisode], table: MadTable) -> EvalReport:
    """Success rate plus mean realized-steps / oracle-distance over successes.

    Episodes that start at their goal (oracle distance 0) are excluded from
    the ratio; a run with no ratio-eligible successes reports the ratio as
    undefined (None).
    """
    if not episodes:
        raise ValidationError("no planner episodes to evaluate")
    succ = sum(e.success for e in episodes)
    ratios = []
    for e in episodes:
        if not e.success:
            continue
        mad = table.lookup(e.start, e.goal)
        if mad > 0:
            ratios.append(e.steps / mad)
        elif mad == UNREACHABLE:
            raise ValidationError("successful episode on an unreachable goal")
    return EvalReport(
        success_rate=succ / len(episodes),
        mean_path_ratio=float(np.mean(ratios)) if ratios else None,
    )


# ---------------------------------------------------------------------------
# report files
# ---------------------------------------------------------------------------


def save_report(report: EvalReport, path) -> None:
    """One `name value` line per field; undefined fields say so explicitly."""
    lines = []
    for f in fields(report):
        v = getattr(report, f.name)
        lines.append(f"{f.name} {'undefined' if v is None else repr(v)}")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def load_report(path) -> EvalReport:
    values = {}
    names = {f.name for f in fields(EvalReport)}
    with open(path) as fh:
        for ln, raw in enumerate(fh, start=1):
            if not raw.strip():
                continue
            parts = raw.split()
            if len(parts) != 2 or parts[0] not in names:
                raise DatasetParseError(f"{path}:{ln}: malformed report line {raw!r}")
            values[parts[0]] = None if parts[1] == "undefined" else float(parts[1])
    return EvalReport(**values)
