"""Timing harness for the two kernel backends.

Runs each hot kernel, and one full embedding-training loop, under both the
compiled and the pure-numpy implementations, then prints a comparison
table. The compiled backend pays a one-time JIT cost which the warmup
absorbs, so the numbers reflect steady-state throughput.

Usage:
    python3 benchmarks/bench_backends.py [--batch 512] [--dim 64] [--repeats 30]
"""

import argparse
import time

import numpy as np

from madnav import kernels
from madnav.embed import EmbedConfig, train_embedding
from madnav.envs import EnvSpec
from madnav.trajdata import collect_random_trajectories


def time_call(fn, repeats: int) -> float:
    """Median wall seconds over `repeats` calls, after one warmup."""
    fn()
    out = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        out.append(time.perf_counter() - t0)
    return float(np.median(out))


def kernel_cases(batch: int, dim: int):
    rng = np.random.default_rng(0)
    x = rng.standard_normal((batch, dim))
    up = rng.standard_normal((batch, dim))
    z = rng.standard_normal((batch, dim))
    zp = rng.standard_normal((batch, dim))
    d = rng.integers(1, 20, size=batch).astype(np.float64)
    a = rng.standard_normal((200, dim))
    b = rng.standard_normal((300, dim))
    p = rng.standard_normal(batch * dim)
    g = rng.standard_normal(batch * dim)
    m = np.zeros_like(p)
    v = np.zeros_like(p)

    return {
        f"selu {batch}x{dim}": lambda: kernels.selu(x),
        f"selu_backward {batch}x{dim}": lambda: kernels.selu_backward(x, up),
        f"pair_loss l1 {batch}x{dim}": lambda: kernels.pair_loss(z, zp, d, 2.0, True, 1),
        f"pair_loss l2 {batch}x{dim}": lambda: kernels.pair_loss(z, zp, d, 2.0, True, 2),
        f"cdist l1 200x300x{dim}": lambda: kernels.cdist(a, b, 1),
        f"adamw {p.size} params": lambda: kernels.adamw_update(
            p.copy(), g, m.copy(), v.copy(), 1, 5e-4, 0.9, 0.999, 1e-8, 0.0),
    }


def train_case(steps: int):
    spec = EnvSpec(env_id="open_grid", width=8, height=8, max_episode_steps=40)
    trajs = collect_random_trajectories(spec, n_traj=30, seed=0)
    cfg = EmbedConfig(embed_dim=32, hidden=(64, 64), batch_size=256,
                      train_steps=steps, max_gap=3, seed=0)

    def run():
        train_embedding(trajs, cfg)

    return f"train_embedding {steps} steps", run


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--batch", type=int, default=512)
    ap.add_argument("--dim", type=int, default=64)
    ap.add_argument("--repeats", type=int, default=30)
    ap.add_argument("--train-steps", type=int, default=200)
    args = ap.parse_args()

    backends = ["numpy"]
    if kernels.HAVE_NUMBA:
        backends.append("numba")
    else:
        print("compiled backend unavailable, timing numpy only")

    rows = []
    cases = kernel_cases(args.batch, args.dim)
    name, fn = train_case(args.train_steps)
    cases[name] = fn
    for case, call in cases.items():
        timings = {}
        for backend in backends:
            kernels.set_backend(backend)
            reps = max(3, args.repeats // 10) if case.startswith("train") else args.repeats
            timings[backend] = time_call(call, reps)
        rows.append((case, timings))

    width = max(len(r[0]) for r in rows)
    header = f"{'case':<{width}}  " + "  ".join(f"{b:>12}" for b in backends)
    if len(backends) == 2:
        header += f"  {'speedup':>8}"
    print(header)
    for case, timings in rows:
        line = f"{case:<{width}}  " + "  ".join(f"{timings[b] * 1e3:>10.3f}ms" for b in backends)
        if len(backends) == 2:
            line += f"  {timings['numpy'] / timings['numba']:>7.2f}x"
        print(line)
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
