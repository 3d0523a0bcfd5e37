"""Command-line entry point: collect data, train models, plan, shape, evaluate.

Every artifact-producing command drops a `<artifact>.manifest.json` beside
its outputs recording flags, seed and content hashes, so pipeline reruns can
prove freshness and skip work.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import time

import numpy as np

from . import latent, oracle_eval, pipeline, shaping_rl, trajdata
from .embed import EmbedConfig, EmbeddingModel, train_embedding
from .envs import GRID_ENVS, grid_state, load_env_spec
from .errors import ConfigError, MadnavError
from .latent import DynConfig, LatentDynamics, PlanConfig
from .shaping_rl import GcslConfig, QConfig, ShapedReward

log = logging.getLogger(__name__)


def _parse_goal(spec, text: str) -> np.ndarray:
    parts = [p.strip() for p in text.split(",")]
    try:
        nums = [int(p) for p in parts]
    except ValueError:
        raise ConfigError(f"goal must be comma-separated integers, got {text!r}") from None
    if spec.env_id == "keydoor_grid":
        if len(nums) == 2:
            nums.append(1)  # reaching a cell behind the door implies the key
        if len(nums) != 3:
            raise ConfigError("keydoor goals are 'x,y' or 'x,y,has_key'")
        return grid_state(spec, nums[0], nums[1], has_key=nums[2])
    if spec.env_id in GRID_ENVS:
        if len(nums) != 2:
            raise ConfigError("grid goals are 'x,y'")
        return grid_state(spec, nums[0], nums[1])
    raise ConfigError(f"{spec.env_id} does not take cell goals")


def _record(args, command: str, inputs: dict, outputs: dict, t0: float) -> None:
    flags = {k: v for k, v in vars(args).items() if k != "func" and v is not None}
    pipeline.write_manifests(command, flags, getattr(args, "seed", None),
                             inputs, outputs, time.perf_counter() - t0)


def _write_episode_report(path, records: list[dict]) -> None:
    with open(path, "w") as fh:
        for rec in records:
            fh.write(json.dumps(rec) + "\n")


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------


def cmd_collect(args) -> int:
    t0 = time.perf_counter()
    spec = load_env_spec(args.env)
    inputs = {"env": args.env}
    if args.policy == "random":
        trajs = trajdata.collect_random_trajectories(spec, args.n_traj, args.seed)
    else:
        q = shaping_rl.load_qtable(args.policy)
        trajs = shaping_rl.collect_greedy_trajectories(q, args.n_traj, args.seed)
        inputs["policy"] = args.policy
    trajdata.save_dataset(trajs, args.out)
    if spec.env_id in GRID_ENVS:
        log.info("state coverage: %.3f", trajdata.state_coverage(spec, trajs))
    _record(args, "collect", inputs, {"dataset": args.out}, t0)
    print(f"wrote {len(trajs)} trajectories to {args.out}")
    return 0


def cmd_train_embed(args) -> int:
    t0 = time.perf_counter()
    trajs = trajdata.load_dataset(args.dataset)
    cfg = EmbedConfig(
        embed_dim=args.dim, norm=args.norm, alpha_exponent=args.alpha,
        penalty_enabled=not args.no_penalty, batch_size=args.batch, lr=args.lr,
        train_steps=args.steps, weight_decay=args.weight_decay,
        max_gap=args.max_gap, seed=args.seed,
    )
    model = train_embedding(trajs, cfg)
    model.save(args.out)
    _record(args, "train-embed", {"dataset": args.dataset}, {"embedding": args.out}, t0)
    print(f"wrote embedding to {args.out} (final loss {model.history[-1]['loss']:.4f})")
    return 0


def cmd_train_dyn(args) -> int:
    t0 = time.perf_counter()
    trajs = trajdata.load_dataset(args.dataset)
    embedding = EmbeddingModel.load(args.embed)
    cfg = DynConfig(batch_size=args.batch, lr=args.lr, train_steps=args.steps,
                    weight_decay=args.weight_decay, seed=args.seed)
    dyn = latent.train_dynamics(trajs, embedding, cfg)
    dyn.save(args.out)
    _record(args, "train-dyn", {"dataset": args.dataset, "embedding": args.embed},
            {"dynamics": args.out}, t0)
    print(f"wrote dynamics to {args.out} (final loss {dyn.history[-1]['loss']:.4f})")
    return 0


def cmd_plan(args) -> int:
    t0 = time.perf_counter()
    spec = load_env_spec(args.env)
    embedding = EmbeddingModel.load(args.embed)
    dyn = LatentDynamics.load(args.dyn)
    cfg = PlanConfig(horizon=args.horizon, num_sequences=args.samples,
                     max_env_steps=args.budget, seed=args.seed)
    rng = np.random.default_rng(args.seed)
    episodes = pipeline.run_plan_episodes(spec, embedding, dyn, args.goals, cfg, rng)
    records = [
        {"goal": e.goal.tolist(), "start": e.start.tolist(), "steps": e.steps,
         "success": bool(e.success), "final_distance": e.final_distance}
        for e in episodes
    ]
    _write_episode_report(args.report, records)
    _record(args, "plan", {"env": args.env, "embedding": args.embed, "dynamics": args.dyn},
            {"report": args.report}, t0)
    rate = float(np.mean([e.success for e in episodes]))
    print(f"planned {len(episodes)} episodes, success rate {rate:.2f}, report at {args.report}")
    return 0


def cmd_shape_train(args) -> int:
    t0 = time.perf_counter()
    spec = load_env_spec(args.env)
    goal = _parse_goal(spec, args.goal)
    sr = None
    inputs = {"env": args.env}
    if args.shaped:
        if not args.embed:
            raise ConfigError("--shaped requires --embed <checkpoint>")
        sr = ShapedReward(EmbeddingModel.load(args.embed), goal, gamma=args.gamma)
        inputs["embedding"] = args.embed
    cfg = QConfig(learning_rate=args.lr, gamma=args.gamma, seed=args.seed,
                  eval_every=args.eval_every)
    q, curve = shaping_rl.q_learn(spec, goal, args.episodes, cfg, sr=sr)
    shaping_rl.save_curve(curve, args.curve)
    outputs = {"curve": args.curve}
    if args.out:
        shaping_rl.save_qtable(q, args.out)
        outputs["qtable"] = args.out
    _record(args, "shape-train", inputs, outputs, t0)
    rate = shaping_rl.greedy_success_rate(spec, q, goal)
    mode = "shaped" if args.shaped else "unshaped"
    print(f"{mode} training done; greedy success rate {rate:.2f}, curve at {args.curve}")
    return 0


def cmd_gcsl_train(args) -> int:
    t0 = time.perf_counter()
    trajs = trajdata.load_dataset(args.dataset)
    cfg = GcslConfig(batch_size=args.batch, lr=args.lr, train_steps=args.steps,
                     horizon_conditioned=not args.no_horizon, max_gap=args.max_gap,
                     max_horizon=args.max_horizon, seed=args.seed)
    policy = shaping_rl.gcsl_train(trajs, cfg)
    policy.save(args.out)
    _record(args, "gcsl-train", {"dataset": args.dataset}, {"policy": args.out}, t0)
    print(f"wrote policy to {args.out} (final ce {policy.history[-1]['loss']:.4f})")
    return 0


def cmd_gcsl_eval(args) -> int:
    t0 = time.perf_counter()
    spec = load_env_spec(args.env)
    policy = shaping_rl.GcslPolicy.load(args.policy)
    rng = np.random.default_rng(args.seed)
    records = []
    for _ in range(args.goals):
        goal = pipeline._draw_goal(spec, rng)
        traj, ok = shaping_rl.gcsl_episode(spec, policy, goal, budget=args.budget, rng=rng)
        records.append({"goal": goal.tolist(), "start": traj.states[0].tolist(),
                        "steps": len(traj), "success": bool(ok)})
    _write_episode_report(args.report, records)
    _record(args, "gcsl-eval", {"env": args.env, "policy": args.policy},
            {"report": args.report}, t0)
    rate = float(np.mean([r["success"] for r in records]))
    print(f"evaluated {len(records)} episodes, success rate {rate:.2f}, report at {args.report}")
    return 0


def cmd_eval(args) -> int:
    t0 = time.perf_counter()
    spec = load_env_spec(args.env)
    embedding = EmbeddingModel.load(args.embed)
    dyn = LatentDynamics.load(args.dyn) if args.dyn else None
    dataset = trajdata.load_dataset(args.dataset) if args.dataset else None
    report = pipeline.run_eval(
        spec, embedding, dyn, dataset=dataset, goals=args.goals, budget=args.budget,
        horizon=args.horizon, samples=args.samples, max_pairs=args.max_pairs,
        seed=args.seed,
    )
    oracle_eval.save_report(report, args.out)
    inputs = {"env": args.env, "embedding": args.embed}
    if args.dyn:
        inputs["dynamics"] = args.dyn
    if args.dataset:
        inputs["dataset"] = args.dataset
    _record(args, "eval", inputs, {"report": args.out}, t0)
    with open(args.out) as fh:
        print(fh.read(), end="")
    return 0


def cmd_pipeline(args) -> int:
    result = pipeline.run_pipeline(args.config, force=args.force)
    for stage, what in result["status"].items():
        print(f"{stage}: {what}")
    print(f"report: {result['paths']['report']}")
    return 0


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="madnav",
        description="Learn action-count distances from offline trajectories; "
                    "plan, shape rewards and evaluate with them.",
    )
    parser.add_argument("-q", "--quiet", action="store_true", help="warnings only")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("collect", help="roll out a data policy and store trajectories")
    p.add_argument("--env", required=True, help="env config (TOML)")
    p.add_argument("--out", required=True, help="dataset path (JSONL)")
    p.add_argument("--policy", default="random",
                   help="'random' or a value-table checkpoint to follow greedily")
    p.add_argument("--n-traj", type=int, default=100)
    p.add_argument("--seed", type=int, required=True)
    p.set_defaults(func=cmd_collect)

    p = sub.add_parser("train-embed", help="fit the distance embedding")
    p.add_argument("--dataset", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--dim", type=int, default=64)
    p.add_argument("--norm", choices=("l1", "l2"), default="l1")
    p.add_argument("--alpha", type=float, default=2.0,
                   help="pair weight exponent: weight = 1 / gap**alpha")
    p.add_argument("--steps", type=int, default=100_000)
    p.add_argument("--batch", type=int, default=512)
    p.add_argument("--lr", type=float, default=5e-4)
    p.add_argument("--weight-decay", type=float, default=0.0)
    p.add_argument("--max-gap", type=int, default=None,
                   help="largest pair index gap extracted (default unbounded)")
    p.add_argument("--no-penalty", action="store_true",
                   help="drop the upper-bound hinge term from the loss")
    p.add_argument("--seed", type=int, required=True)
    p.set_defaults(func=cmd_train_embed)

    p = sub.add_parser("train-dyn", help="fit the latent transition model")
    p.add_argument("--dataset", required=True)
    p.add_argument("--embed", required=True, help="embedding checkpoint")
    p.add_argument("--out", required=True)
    p.add_argument("--steps", type=int, default=10_000)
    p.add_argument("--batch", type=int, default=512)
    p.add_argument("--lr", type=float, default=5e-4)
    p.add_argument("--weight-decay", type=float, default=0.0)
    p.add_argument("--seed", type=int, required=True)
    p.set_defaults(func=cmd_train_dyn)

    p = sub.add_parser("plan", help="shoot random action sequences toward goals")
    p.add_argument("--env", required=True)
    p.add_argument("--embed", required=True)
    p.add_argument("--dyn", required=True)
    p.add_argument("--goals", type=int, default=100)
    p.add_argument("--horizon", type=int, default=5)
    p.add_argument("--samples", type=int, default=20)
    p.add_argument("--budget", type=int, default=50)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--report", required=True, help="per-episode JSONL output")
    p.set_defaults(func=cmd_plan)

    p = sub.add_parser("shape-train", help="tabular Q-learning, optionally reward-shaped")
    p.add_argument("--env", required=True)
    p.add_argument("--embed", help="embedding checkpoint (needed with --shaped)")
    p.add_argument("--goal", required=True, help="goal cell 'x,y'")
    p.add_argument("--episodes", type=int, required=True)
    mode = p.add_mutually_exclusive_group(required=True)
    mode.add_argument("--shaped", action="store_true")
    mode.add_argument("--unshaped", action="store_true")
    p.add_argument("--lr", type=float, default=0.1)
    p.add_argument("--gamma", type=float, default=1.0)
    p.add_argument("--eval-every", type=int, default=0,
                   help="greedy success evaluation period in episodes (0 = off)")
    p.add_argument("--curve", required=True, help="per-episode text output")
    p.add_argument("--out", help="optional value-table checkpoint")
    p.add_argument("--seed", type=int, required=True)
    p.set_defaults(func=cmd_shape_train)

    p = sub.add_parser("gcsl-train", help="clone actions from relabeled sub-trajectories")
    p.add_argument("--dataset", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--steps", type=int, default=5_000)
    p.add_argument("--batch", type=int, default=256)
    p.add_argument("--lr", type=float, default=5e-4)
    p.add_argument("--max-gap", type=int, default=None)
    p.add_argument("--max-horizon", type=int, default=50)
    p.add_argument("--no-horizon", action="store_true",
                   help="train the horizon-less policy variant")
    p.add_argument("--seed", type=int, required=True)
    p.set_defaults(func=cmd_gcsl_train)

    p = sub.add_parser("gcsl-eval", help="run the cloned policy against random goals")
    p.add_argument("--env", required=True)
    p.add_argument("--policy", required=True, help="policy checkpoint")
    p.add_argument("--goals", type=int, default=100)
    p.add_argument("--budget", type=int, default=50)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--report", required=True, help="per-episode JSONL output")
    p.set_defaults(func=cmd_gcsl_eval)

    p = sub.add_parser("eval", help="score an embedding (and planner) against the oracle")
    p.add_argument("--env", required=True)
    p.add_argument("--embed", required=True)
    p.add_argument("--dyn", help="dynamics checkpoint; enables planner metrics")
    p.add_argument("--dataset", help="dataset for the pair violation rate")
    p.add_argument("--goals", type=int, default=100)
    p.add_argument("--budget", type=int, default=50)
    p.add_argument("--horizon", type=int, default=5)
    p.add_argument("--samples", type=int, default=20)
    p.add_argument("--max-pairs", type=int, default=None,
                   help="subsample the oracle pair set (default: all pairs)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="report path")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("pipeline", help="collect, train and evaluate from one config")
    p.add_argument("--config", required=True, help="pipeline config (TOML)")
    p.add_argument("--force", action="store_true", help="rerun even if outputs are current")
    p.set_defaults(func=cmd_pipeline)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.WARNING if args.quiet else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return args.func(args)
    except MadnavError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
