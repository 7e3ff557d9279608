"""Run directories: config snapshots, append-only JSONL logs, checkpoints,
and the stage-training orchestration behind the CLI.

A run directory has a single writer, guarded by a lock file. Every
artifact inside is traceable to the run id (directory name) and the
config hash recorded in the snapshot sidecar.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass

from filelock import FileLock

from . import config as config_mod
from . import evaluation, learning, nets, perception, sim
from .util import int_seed

CHECKPOINT_DIRNAME = "checkpoints"
LOG_DIRNAME = "logs"
SCENES_DIRNAME = "scenes"
PLOTS_DIRNAME = "plots"


class RunStoreError(RuntimeError):
    pass


@dataclass
class RunDirectory:
    path: str

    @property
    def run_id(self) -> str:
        return os.path.basename(os.path.normpath(self.path))

    def subdir(self, name: str) -> str:
        out = os.path.join(self.path, name)
        os.makedirs(out, exist_ok=True)
        return out

    def snapshot_path(self) -> str:
        return os.path.join(self.path, "config.snapshot")

    def lock(self) -> FileLock:
        return FileLock(os.path.join(self.path, "run.lock"), timeout=1.0)

    def log_path(self, name: str = "actions") -> str:
        return os.path.join(self.subdir(LOG_DIRNAME), f"{name}.jsonl")

    def append_log(self, record: dict, name: str = "actions"):
        with open(self.log_path(name), "a") as fh:
            fh.write(json.dumps(record, sort_keys=True) + "\n")

    def read_log(self, name: str = "actions"):
        path = self.log_path(name)
        if not os.path.exists(path):
            return []
        records = []
        with open(path) as fh:
            for line in fh:
                line = line.strip()
                if line:
                    records.append(json.loads(line))
        return records

    def checkpoint_path(self, stage: str, episode: int) -> str:
        return os.path.join(self.subdir(CHECKPOINT_DIRNAME),
                            f"{stage}_ep{episode:05d}.pt")

    def checkpoints(self):
        ckdir = os.path.join(self.path, CHECKPOINT_DIRNAME)
        if not os.path.isdir(ckdir):
            return []
        return sorted(os.path.join(ckdir, f) for f in os.listdir(ckdir)
                      if f.endswith(".pt"))

    def latest_checkpoint(self) -> str | None:
        found = None
        best = (-1.0,)
        for path in self.checkpoints():
            meta_path = path + ".json"
            if not os.path.exists(meta_path):
                continue
            with open(meta_path) as fh:
                meta = json.load(fh)
            key = (os.path.getmtime(path), meta.get("episode", -1))
            if key > best:
                best = key
                found = path
        return found


def create_run_dir(path: str, cfg: config_mod.RunConfig, resume: bool = False) -> RunDirectory:
    run = RunDirectory(path)
    snapshot = run.snapshot_path()
    if os.path.exists(snapshot):
        existing = config_mod.load_snapshot(snapshot)
        if existing.hash() != cfg.hash():
            raise RunStoreError(
                f"run directory {path} was created with config hash {existing.hash()} "
                f"but the current effective config hashes to {cfg.hash()}; "
                "refusing to mix configurations"
                + ("" if resume else " (pass --resume with the original config)"))
    else:
        if resume:
            raise RunStoreError(f"cannot resume: {path} has no config snapshot")
        os.makedirs(path, exist_ok=True)
        config_mod.save_snapshot(cfg, snapshot)
    return run


STAGE_PREREQUISITES = {
    "grasp_agnostic": None,
    "grasp_explore": None,
    "push_training": "a grasp-stage checkpoint (train grasp_agnostic and "
                     "grasp_explore first, then pass --init-from)",
    "alternating": "a push-stage checkpoint (finish push_training first, "
                   "then pass --init-from)",
}


def stage_env_factory(stage: str, cfg: config_mod.RunConfig):
    learn_cfg = cfg.learn
    sim_cfg = cfg.sim

    def sparse(episode: int) -> sim.Scene:
        return sim.spawn_sparse_scene(learn_cfg.sparse_objects,
                                      int_seed(cfg.seed, stage, episode), sim_cfg)

    def packed(episode: int) -> sim.Scene:
        return sim.spawn_packed_scene(learn_cfg.push_objects,
                                      int_seed(cfg.seed, stage, episode), sim_cfg)

    def pile(episode: int) -> sim.Scene:
        return sim.spawn_pile_scene(learn_cfg.alternating_objects,
                                    int_seed(cfg.seed, stage, episode), sim_cfg)

    return {"grasp_agnostic": sparse, "grasp_explore": sparse,
            "push_training": packed, "alternating": pile}[stage]


def train_stage(run: RunDirectory, cfg: config_mod.RunConfig, stage: str,
                init_from: str | None = None, resume: bool = False,
                quiet: bool = False) -> learning.StageReport:
    """Runs one curriculum stage inside the run directory, persisting
    per-action JSONL records and periodic checkpoints."""
    if stage not in learning.STAGES:
        raise RunStoreError(f"unknown stage {stage!r}")

    plan = learning.default_stage_plan(stage, cfg.learn)
    start_episode = 0
    schedule = nets.ExplorationSchedule(cfg.learn.epsilon_initial,
                                        cfg.learn.epsilon_decay,
                                        cfg.learn.epsilon_floor)

    resume_ck = run.latest_checkpoint() if resume else None
    if resume and resume_ck is None:
        raise RunStoreError(f"cannot resume: no checkpoint in {run.path}")

    if resume_ck is not None:
        grasp, push, meta, opt_states = nets.load_checkpoint(resume_ck)
        if meta.get("config_hash") not in (None, cfg.hash()):
            raise RunStoreError(
                f"checkpoint {resume_ck} was written under config hash "
                f"{meta.get('config_hash')}, current is {cfg.hash()}")
        if meta.get("stage") != stage:
            raise RunStoreError(
                f"latest checkpoint belongs to stage {meta.get('stage')!r}, "
                f"not {stage!r}")
        start_episode = int(meta.get("episode", -1)) + 1
        schedule.actions = int(meta.get("epsilon_actions", 0))
    elif init_from is not None:
        grasp, push, meta, opt_states = nets.load_checkpoint(init_from)
        opt_states = {}
    else:
        prereq = STAGE_PREREQUISITES[stage]
        if prereq is not None:
            raise RunStoreError(f"stage {stage} requires {prereq}")
        grasp, push = nets.build_models(cfg.net, seed=cfg.seed)
        opt_states = {}

    trainer = learning.Trainer(grasp, push, cfg.learn)
    for name, state in (opt_states or {}).items():
        if name in trainer.optimizers and state:
            trainer.optimizers[name].load_state_dict(state)

    buffer = learning.ReplayBuffer(cfg.learn.replay_capacity)
    factory = stage_env_factory(stage, cfg)

    def log(record: dict):
        run.append_log({"run_id": run.run_id} | record)

    def save(episode: int, sched):
        metadata = {
            "stage": stage,
            "step": sched.actions,
            "episode": episode,
            "config_hash": cfg.hash(),
            "epsilon_actions": sched.actions,
        }
        nets.save_checkpoint(run.checkpoint_path(stage, episode), trainer.grasp,
                             trainer.push, metadata, trainer.optimizers)

    def on_episode(episode: int, sched):
        if (episode + 1) % cfg.learn.checkpoint_every == 0:
            save(episode, sched)
        if not quiet and (episode + 1) % 25 == 0:
            print(f"[{stage}] episode {episode + 1}/{plan.episode_budget}")

    with run.lock():
        report = learning.run_stage(
            plan, factory, trainer, buffer, cfg.sim, cfg.perception,
            grasp_threshold=cfg.net.grasp_threshold, run_seed=cfg.seed,
            log=log, start_episode=start_episode, episode_callback=on_episode,
            schedule=schedule)
        save(plan.episode_budget - 1, schedule)
        run.append_log({
            "run_id": run.run_id, "stage": stage,
            "episodes": report.episodes, "grasp_successes": report.grasp_successes,
            "grasp_attempts": report.grasp_attempts, "push_count": report.push_count,
            "quarantined": report.quarantined,
            "final_epsilon": report.final_epsilon,
        }, name="stages")
    return report


def eval_benchmark(run_out: str, cfg: config_mod.RunConfig, checkpoint: str | None,
                   scenario: str, n_objects: int, n_scenes: int, base_seed: int,
                   agent_kind: str = "net"):
    if agent_kind == "net":
        if checkpoint is None:
            raise RunStoreError("eval with the net agent needs --checkpoint")
        grasp, push, _, _ = nets.load_checkpoint(checkpoint)
        agent = evaluation.NetAgent(grasp, push, cfg.net.grasp_threshold)
        approach = "net"
    elif agent_kind == "random":
        agent = evaluation.RandomAgent()
        approach = "random"
    else:
        raise RunStoreError(f"unknown agent kind {agent_kind!r}")

    report, records = evaluation.run_benchmark(
        agent, scenario, n_objects, n_scenes, base_seed, cfg.eval, cfg.sim,
        cfg.perception, approach=approach, out_dir=run_out)
    if run_out is not None and checkpoint is not None:
        summary_path = os.path.join(run_out, "summary.json")
        with open(summary_path) as fh:
            summary = json.load(fh)
        summary["checkpoint"] = os.path.abspath(checkpoint)
        with open(summary_path, "w") as fh:
            json.dump(summary, fh, indent=1, sort_keys=True)
            fh.write("\n")
    return report, records


def generate_scene_corpus(out_dir: str, scenario: str, n_objects: int,
                          count: int, seed: int, cfg: config_mod.RunConfig):
    os.makedirs(out_dir, exist_ok=True)
    paths = []
    for index in range(count):
        scene_seed = int_seed(seed, scenario, n_objects, index)
        if scenario == "packed":
            scene = sim.spawn_packed_scene(n_objects, scene_seed, cfg.sim)
            certificate = n_objects >= 5
        elif scenario == "pile":
            scene = sim.spawn_pile_scene(n_objects, scene_seed, cfg.sim)
            certificate = None
        elif scenario == "sparse":
            scene = sim.spawn_sparse_scene(n_objects, scene_seed, cfg.sim)
            certificate = None
        else:
            raise RunStoreError(f"unknown scenario {scenario!r}")
        path = os.path.join(out_dir, f"scene_{index:04d}.json")
        sim.save_scene(scene, path, packed_certificate=certificate)
        paths.append(path)
    return paths


def replay_episode(records_file: str, index: int, cfg: config_mod.RunConfig):
    """Re-executes a recorded episode from its seed and reports the first
    divergent step (None when the re-run reproduces the record)."""
    records = []
    with open(records_file) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                records.append(json.loads(line))
            except json.JSONDecodeError as exc:
                raise RunStoreError(
                    f"{records_file}:{lineno}: cannot parse record: {exc}") from exc
    if not 0 <= index < len(records):
        raise RunStoreError(f"record index {index} out of range (file has {len(records)})")
    record = evaluation.EpisodeRecord.from_dict(records[index])

    summary_path = os.path.join(os.path.dirname(os.path.abspath(records_file)),
                                "summary.json")
    if not os.path.exists(summary_path):
        raise RunStoreError(f"no summary.json next to {records_file}")
    with open(summary_path) as fh:
        summary = json.load(fh)

    if summary["approach"] == "net":
        checkpoint = summary.get("checkpoint")
        if not checkpoint:
            raise RunStoreError("summary lacks the checkpoint path")
        grasp, push, _, _ = nets.load_checkpoint(checkpoint)
        agent = evaluation.NetAgent(grasp, push, cfg.net.grasp_threshold)
    else:
        agent = evaluation.RandomAgent()

    if record.scenario == "packed":
        scene = sim.spawn_packed_scene(record.n_objects, record.seed, cfg.sim)
    elif record.scenario == "pile":
        scene = sim.spawn_pile_scene(record.n_objects, record.seed, cfg.sim)
    else:
        raise RunStoreError(f"cannot regenerate scenario {record.scenario!r}")

    agent.reset(int_seed(summary["base_seed"], "agent", index))
    rerun = evaluation.run_episode(scene, agent, cfg.eval, cfg.sim, cfg.perception)

    divergence = None
    for i, (a, b) in enumerate(zip(record.actions, rerun.actions)):
        if a != b:
            divergence = {"step": i, "recorded": a, "replayed": b}
            break
    if divergence is None and len(record.actions) != len(rerun.actions):
        divergence = {"step": min(len(record.actions), len(rerun.actions)),
                      "recorded": f"{len(record.actions)} actions",
                      "replayed": f"{len(rerun.actions)} actions"}
    return divergence, record, rerun
