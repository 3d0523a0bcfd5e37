"""Independent oracles the tests trust instead of the package's own math.

Gradient checks use central finite differences; shortest action distances
come from networkx BFS; optimal tabular values come from a standalone value
iteration. None of these share code with the package implementations they
judge.
"""

from __future__ import annotations

import numpy as np

from madnav import envs


def finite_diff_grads(f, arrays, h: float = 1e-4):
    """Central-difference gradient of the scalar f() w.r.t. each array.

    f is re-evaluated with entries of the arrays perturbed in place, so it
    must read the arrays afresh on every call.
    """
    grads = []
    for arr in arrays:
        flat = arr.ravel()
        g = np.zeros_like(flat)
        for i in range(flat.size):
            keep = flat[i]
            flat[i] = keep + h
            fp = f()
            flat[i] = keep - h
            fm = f()
            flat[i] = keep
            g[i] = (fp - fm) / (2.0 * h)
        grads.append(g.reshape(arr.shape))
    return grads


def rel_err(a: np.ndarray, b: np.ndarray) -> float:
    """Worst-case elementwise relative error with an absolute floor."""
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    denom = np.maximum(np.maximum(np.abs(a), np.abs(b)), 1e-6)
    return float(np.max(np.abs(a - b) / denom)) if a.size else 0.0


def nx_shortest_lengths(spec):
    """All-pairs shortest path lengths of the one-step graph via networkx."""
    import networkx as nx

    graph = nx.DiGraph()
    states = envs.enumerate_states(spec)
    keys = [envs.state_key(spec, s) for s in states]
    for s, k in zip(states, keys):
        graph.add_node(k)
        for a in range(envs.num_actions(spec)):
            graph.add_edge(k, envs.state_key(spec, envs.transition(spec, s, a)))
    return keys, dict(nx.all_pairs_shortest_path_length(graph))


def value_iteration(spec, goal, gamma: float = 1.0, phi=None,
                    tol: float = 1e-13, max_sweeps: int = 100_000):
    """Exact optimal action values for -1-per-step dynamics with an
    absorbing goal, optionally under additive shaping gamma*phi(s')-phi(s).

    Returns (keys, Q) where rows follow enumerate_states order. The goal row
    is identically zero by the absorbing convention. With gamma = 1 the
    iteration reaches its fixed point exactly.
    """
    states = envs.enumerate_states(spec)
    keys = [envs.state_key(spec, s) for s in states]
    idx = {k: i for i, k in enumerate(keys)}
    n, n_act = len(keys), envs.num_actions(spec)
    goal_i = idx[envs.state_key(spec, np.asarray(goal, dtype=np.float64))]

    nxt = np.empty((n, n_act), dtype=np.int64)
    for i, s in enumerate(states):
        for a in range(n_act):
            nxt[i, a] = idx[envs.state_key(spec, envs.transition(spec, s, a))]

    pot = np.zeros(n)
    if phi is not None:
        pot = np.array([float(phi(s)) for s in states])

    q = np.zeros((n, n_act))
    for _ in range(max_sweeps):
        v = q.max(axis=1)
        v[goal_i] = 0.0
        new_q = np.empty_like(q)
        for a in range(n_act):
            j = nxt[:, a]
            new_q[:, a] = -1.0 + gamma * pot[j] - pot + gamma * v[j]
        new_q[goal_i, :] = 0.0
        if np.max(np.abs(new_q - q)) <= tol:
            q = new_q
            break
        q = new_q
    else:
        raise AssertionError("value iteration did not converge")
    return keys, q


def sign_test_p(wins: int, trials: int) -> float:
    """One-sided exact binomial p-value for wins out of trials at p0 = 1/2."""
    from scipy.stats import binomtest

    return float(binomtest(wins, trials, 0.5, alternative="greater").pvalue)
