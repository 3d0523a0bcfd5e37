"""End-to-end run orchestration with content-addressed stage skipping.

Every artifact-producing command records a manifest next to each artifact
(`<artifact>.manifest.json`) holding the command, its flags, the seed, and
sha256 hashes of all inputs and outputs. A pipeline stage is skipped when
its manifest still matches the hashes on disk, so reruns with unchanged
inputs are no-ops.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import sys
import time
from dataclasses import asdict, dataclass, field

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

import numpy as np

from . import latent, oracle_eval, trajdata
from .embed import EmbedConfig, EmbeddingModel, train_embedding
from .envs import GRID_ENVS, enumerate_states, env_spec_from_dict
from .errors import ConfigError
from .latent import DynConfig, LatentDynamics, PlanConfig
from .oracle_eval import EvalReport, PlanEpisode

log = logging.getLogger(__name__)

PIPELINE_STAGES = ("collect", "embed", "dyn", "eval")


def sha256_of(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


@dataclass
class RunManifest:
    """Provenance record for one command invocation."""

    command: str
    flags: dict
    seed: int | None
    inputs: dict = field(default_factory=dict)    # name -> {path, sha256}
    outputs: dict = field(default_factory=dict)   # name -> {path, sha256}
    duration_s: float = 0.0


def manifest_path_for(artifact_path) -> str:
    return f"{artifact_path}.manifest.json"


def write_manifests(command: str, flags: dict, seed, inputs: dict,
                    outputs: dict, duration_s: float) -> RunManifest:
    """Hash all files and drop one manifest copy next to every output."""
    man = RunManifest(
        command=command,
        flags={k: v for k, v in sorted(flags.items())},
        seed=seed,
        inputs={n: {"path": str(p), "sha256": sha256_of(p)} for n, p in inputs.items()},
        outputs={n: {"path": str(p), "sha256": sha256_of(p)} for n, p in outputs.items()},
        duration_s=duration_s,
    )
    for path in outputs.values():
        with open(manifest_path_for(path), "w") as fh:
            json.dump(asdict(man), fh, indent=2)
    return man


def stage_is_current(primary_output, inputs: dict, outputs: dict) -> bool:
    """True when the recorded hashes still match every file on disk."""
    try:
        with open(manifest_path_for(primary_output)) as fh:
            man = json.load(fh)
        for group, paths in (("inputs", inputs), ("outputs", outputs)):
            recorded = man[group]
            if set(recorded) != set(paths):
                return False
            for name, path in paths.items():
                if recorded[name]["sha256"] != sha256_of(path):
                    return False
        return True
    except (OSError, json.JSONDecodeError, KeyError):
        return False


# ---------------------------------------------------------------------------
# evaluation driver shared by the eval command and the pipeline
# ---------------------------------------------------------------------------


def run_eval(spec, embedding: EmbeddingModel, dyn: LatentDynamics | None = None,
             dataset=None, goals: int = 100, budget: int | None = None,
             horizon: int = 5, samples: int = 20, max_pairs: int | None = None,
             seed: int = 0) -> EvalReport:
    """Embedding metrics against the exact-distance oracle, planner metrics
    over random (start, goal) episodes when a dynamics model is given."""
    enumerable = spec.env_id in GRID_ENVS
    mae = spearman = viol = success = ratio = None
    table = oracle_eval.compute_mad(spec) if enumerable else None
    if table is not None:
        partial = oracle_eval.evaluate_embedding(embedding, table, max_pairs=max_pairs, seed=seed)
        mae, spearman = partial.mae, partial.spearman
    if dataset:
        viol = oracle_eval.violation_rate(embedding, trajdata.extract_pair_arrays(dataset))
    if dyn is not None:
        rng = np.random.default_rng(seed)
        cfg = PlanConfig(horizon=horizon, num_sequences=samples,
                         max_env_steps=budget, seed=seed)
        if dataset and spec.env_id not in GRID_ENVS:
            cfg.goal_eps = latent.default_goal_eps(embedding, dataset)
        episodes = run_plan_episodes(spec, embedding, dyn, goals, cfg, rng)
        if table is not None:
            planned = oracle_eval.evaluate_planner(episodes, table)
            success, ratio = planned.success_rate, planned.mean_path_ratio
        else:
            success = float(np.mean([e.success for e in episodes]))
    return EvalReport(mae=mae, spearman=spearman, violation_rate=viol,
                      success_rate=success, mean_path_ratio=ratio)


def _draw_goal(spec, rng) -> np.ndarray:
    if spec.env_id in GRID_ENVS:
        states = enumerate_states(spec)
        return states[int(rng.integers(len(states)))]
    return np.array([0.5, 0.0])  # hill: any state past the crest counts


def run_plan_episodes(spec, embedding, dyn, goals: int, cfg: PlanConfig, rng) -> list[PlanEpisode]:
    """Plan toward `goals` randomly drawn goal states; one shared rng stream."""
    episodes = []
    for _ in range(goals):
        goal = _draw_goal(spec, rng)
        traj, ok, final = latent.plan_dist_episode(spec, embedding, dyn, goal, cfg, rng=rng)
        episodes.append(PlanEpisode(start=traj.states[0], goal=goal,
                                    steps=len(traj), success=ok, final_distance=final))
    return episodes


# ---------------------------------------------------------------------------
# pipeline
# ---------------------------------------------------------------------------


def load_pipeline_config(path) -> dict:
    with open(path, "rb") as fh:
        try:
            cfg = tomllib.load(fh)
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"cannot parse {path}: {exc}") from exc
    missing = [s for s in PIPELINE_STAGES if s not in cfg]
    if "env" not in cfg:
        missing.insert(0, "env")
    if missing:
        raise ConfigError(f"pipeline config must name sections: {', '.join(missing)}")
    if "workdir" not in cfg:
        raise ConfigError("pipeline config needs a 'workdir' key")
    return cfg


def run_pipeline(config_path, force: bool = False) -> dict:
    """Execute collect -> embed -> dyn -> eval, skipping up-to-date stages.

    Returns a summary dict {stage: "ran" | "skipped"} plus artifact paths;
    any stage failure propagates with the stage named.
    """
    cfg = load_pipeline_config(config_path)
    spec = env_spec_from_dict(cfg["env"])
    seed = int(cfg.get("seed", 0))
    workdir = cfg["workdir"]
    os.makedirs(workdir, exist_ok=True)

    paths = {
        "dataset": os.path.join(workdir, "dataset.jsonl"),
        "embed": os.path.join(workdir, "embedding.json"),
        "dyn": os.path.join(workdir, "dynamics.json"),
        "report": os.path.join(workdir, "report.txt"),
    }
    status = {}

    def run_stage(name, inputs, outputs, fn):
        primary = next(iter(outputs.values()))
        if not force and all(os.path.exists(p) for p in outputs.values()) \
                and stage_is_current(primary, inputs, outputs):
            log.info("stage %s: up to date, skipping", name)
            status[name] = "skipped"
            return
        log.info("stage %s: running", name)
        t0 = time.perf_counter()
        try:
            fn()
        except Exception as exc:
            raise RuntimeError(f"stage {name} failed: {exc}") from exc
        write_manifests(f"pipeline:{name}", _stage_flags(cfg, name), seed,
                        inputs, outputs, time.perf_counter() - t0)
        status[name] = "ran"

    c = cfg["collect"]

    def do_collect():
        trajs = trajdata.collect_random_trajectories(spec, int(c.get("n_traj", 100)), seed)
        trajdata.save_dataset(trajs, paths["dataset"])
        cov = trajdata.state_coverage(spec, trajs) if spec.env_id in GRID_ENVS else None
        if cov is not None:
            log.info("collected %d trajectories, state coverage %.3f", len(trajs), cov)

    run_stage("collect", {}, {"dataset": paths["dataset"]}, do_collect)

    e = cfg["embed"]

    def do_embed():
        trajs = trajdata.load_dataset(paths["dataset"])
        econf = EmbedConfig(
            embed_dim=int(e.get("dim", 64)),
            norm=e.get("norm", "l1"),
            alpha_exponent=float(e.get("alpha", 2.0)),
            penalty_enabled=bool(e.get("penalty", True)),
            batch_size=int(e.get("batch", 512)),
            lr=float(e.get("lr", 5e-4)),
            train_steps=int(e.get("steps", 100_000)),
            max_gap=int(e["max_gap"]) if "max_gap" in e else None,
            seed=seed + 1,
        )
        train_embedding(trajs, econf).save(paths["embed"])

    run_stage("embed", {"dataset": paths["dataset"]}, {"embed": paths["embed"]}, do_embed)

    d = cfg["dyn"]

    def do_dyn():
        trajs = trajdata.load_dataset(paths["dataset"])
        emb = EmbeddingModel.load(paths["embed"])
        dconf = DynConfig(
            batch_size=int(d.get("batch", 512)),
            lr=float(d.get("lr", 5e-4)),
            train_steps=int(d.get("steps", 10_000)),
            seed=seed + 2,
        )
        latent.train_dynamics(trajs, emb, dconf).save(paths["dyn"])

    run_stage("dyn", {"dataset": paths["dataset"], "embed": paths["embed"]},
              {"dyn": paths["dyn"]}, do_dyn)

    v = cfg["eval"]

    def do_eval():
        emb = EmbeddingModel.load(paths["embed"])
        dyn = LatentDynamics.load(paths["dyn"])
        trajs = trajdata.load_dataset(paths["dataset"])
        report = run_eval(
            spec, emb, dyn, dataset=trajs,
            goals=int(v.get("goals", 100)),
            budget=int(v.get("budget", spec.max_episode_steps)),
            horizon=int(v.get("horizon", 5)),
            samples=int(v.get("samples", 20)),
            max_pairs=int(v["max_pairs"]) if "max_pairs" in v else None,
            seed=seed + 3,
        )
        oracle_eval.save_report(report, paths["report"])

    run_stage("eval", {"dataset": paths["dataset"], "embed": paths["embed"], "dyn": paths["dyn"]},
              {"report": paths["report"]}, do_eval)

    return {"status": status, "paths": paths}


def _stage_flags(cfg: dict, stage: str) -> dict:
    flags = dict(cfg.get(stage, {}))
    flags["env"] = dict(cfg["env"])
    return flags
