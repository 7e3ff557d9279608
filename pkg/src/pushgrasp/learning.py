"""Rewards, TD targets, hindsight relabeling, replay, and the staged
training loop.

Grasp reward is binary and terminal. Push reward follows the improvement
rule: +0.5 when the goal's best grasp Q rose by more than the improvement
threshold, -0.5 when the push changed nothing around the goal, 0
otherwise ("corrected" semantics; the "literal" variant that rewards
improvement only *without* a scene change is kept behind a flag). TD
targets bootstrap push transitions through the goal-masked max of the
grasp net on the next observation.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import torch
import torch.nn.functional as F

from . import nets, perception, sim
from .nets import ActionSpec, ExplorationSchedule, QMapStack
from .perception import Observation
from .util import rng_for

STAGES = ("grasp_agnostic", "grasp_explore", "push_training", "alternating")


class NonFiniteLossError(RuntimeError):
    pass


@dataclass
class LearnConfig:
    q_improvement_threshold: float = 0.1
    push_reward_positive: float = 0.5
    push_reward_negative: float = -0.5
    reward_semantics: str = "corrected"
    discount: float = 0.5
    grasp_terminal: bool = True
    huber_delta: float = 1.0
    learning_rate: float = 1e-4
    weight_decay: float = 2e-4
    replay_capacity: int = 5000
    batch_size: int = 4
    epsilon_initial: float = 0.5
    epsilon_decay: float = 0.9998
    epsilon_floor: float = 0.1
    max_pushes_per_episode: int = 5
    episodes_grasp_agnostic: int = 400
    episodes_grasp_explore: int = 400
    episodes_push_training: int = 200
    episodes_alternating: int = 200
    sparse_objects: int = 5
    push_objects: int = 5
    alternating_objects: int = 10
    checkpoint_every: int = 50


@dataclass
class RewardComputer:
    q_improvement_threshold: float = 0.1
    push_reward_positive: float = 0.5
    push_reward_negative: float = -0.5
    semantics: str = "corrected"

    def grasp_reward(self, result: sim.GraspResult, goal_id: int, relabeling: bool):
        """Binary grasp reward; with relabeling any successful grasp counts
        and the effective goal becomes the grasped object."""
        if relabeling and result.success:
            return 1.0, result.object_id
        if result.success and result.object_id == goal_id:
            return 1.0, goal_id
        return 0.0, goal_id

    def push_reward(self, q_improved: float, change: sim.SceneChangeReport) -> float:
        improved = q_improved > self.q_improvement_threshold
        if self.semantics == "literal":
            # rows as printed, first match wins
            if improved and not change.changed:
                return self.push_reward_positive
            if not change.changed:
                return self.push_reward_negative
            return 0.0
        if improved and change.changed:
            return self.push_reward_positive
        if not change.changed:
            return self.push_reward_negative
        return 0.0


def q_improved(q_pre: float, q_post: float) -> float:
    return q_post - q_pre


@dataclass
class TDConfig:
    discount: float = 0.5
    grasp_terminal: bool = True
    huber_delta: float = 1.0


@dataclass
class Transition:
    observation: Observation
    goal_id: int
    action: ActionSpec
    reward: float
    next_observation: Observation
    terminal: bool
    stage_tag: str
    grasped_id: int | None = None
    scene_changed: bool | None = None
    q_improved: float | None = None
    next_grasp_q_max: float = 0.0  # cached rollout value; exact while the grasp net is frozen
    relabeled: bool = False


def td_target(transition: Transition, next_grasp_q_max: float, cfg: TDConfig) -> float:
    if transition.terminal:
        return transition.reward
    return transition.reward + cfg.discount * next_grasp_q_max


class ReplayBuffer:
    """FIFO ring of transitions with uniform sampling."""

    def __init__(self, capacity: int = 5000):
        self.capacity = capacity
        self._items: list[Transition] = []

    def __len__(self):
        return len(self._items)

    def add(self, transition: Transition):
        self._items.append(transition)
        if len(self._items) > self.capacity:
            del self._items[0]

    def items(self):
        return list(self._items)

    def remove(self, transition: Transition):
        try:
            self._items.remove(transition)
        except ValueError:
            pass

    def sample(self, rng, n: int, primitive: str | None = None):
        pool = self._items if primitive is None else \
            [t for t in self._items if t.action.primitive == primitive]
        if not pool:
            return []
        idx = rng.integers(len(pool), size=min(n, len(pool)))
        return [pool[int(i)] for i in idx]


@dataclass
class StagePlan:
    stage: str
    n_objects: int
    episode_budget: int
    relabeling: bool
    grasp_net_frozen: bool
    max_pushes_per_episode: int = 5

    def validate(self):
        if self.stage not in STAGES:
            raise ValueError(f"unknown stage {self.stage!r}")
        if self.relabeling and self.stage != "grasp_agnostic":
            raise ValueError("relabeling is only valid in grasp_agnostic")
        if self.grasp_net_frozen and self.stage != "push_training":
            raise ValueError("the grasp net is only frozen in push_training")


def default_stage_plan(stage: str, cfg: LearnConfig) -> StagePlan:
    budgets = {
        "grasp_agnostic": (cfg.episodes_grasp_agnostic, cfg.sparse_objects),
        "grasp_explore": (cfg.episodes_grasp_explore, cfg.sparse_objects),
        "push_training": (cfg.episodes_push_training, cfg.push_objects),
        "alternating": (cfg.episodes_alternating, cfg.alternating_objects),
    }
    if stage not in budgets:
        raise ValueError(f"unknown stage {stage!r}")
    budget, n_objects = budgets[stage]
    return StagePlan(
        stage=stage,
        n_objects=n_objects,
        episode_budget=budget,
        relabeling=stage == "grasp_agnostic",
        grasp_net_frozen=stage == "push_training",
        max_pushes_per_episode=cfg.max_pushes_per_episode,
    )


class Trainer:
    """Owns the two nets, their optimizers, and the single-writer training
    step; evaluation snapshots should use copies of the checkpoints."""

    def __init__(self, grasp: nets.PixelQNetwork, push: nets.PixelQNetwork,
                 cfg: LearnConfig):
        self.grasp = grasp
        self.push = push
        self.cfg = cfg
        self.td = TDConfig(discount=cfg.discount, grasp_terminal=cfg.grasp_terminal,
                           huber_delta=cfg.huber_delta)
        self.rewards = RewardComputer(
            q_improvement_threshold=cfg.q_improvement_threshold,
            push_reward_positive=cfg.push_reward_positive,
            push_reward_negative=cfg.push_reward_negative,
            semantics=cfg.reward_semantics,
        )
        self.optimizers = {
            "grasp": torch.optim.Adam(grasp.parameters(), lr=cfg.learning_rate,
                                      weight_decay=cfg.weight_decay),
            "push": torch.optim.Adam(push.parameters(), lr=cfg.learning_rate,
                                     weight_decay=cfg.weight_decay),
        }

    def net(self, primitive: str) -> nets.PixelQNetwork:
        return self.grasp if primitive == "grasp" else self.push

    def next_grasp_q_max(self, transition: Transition, frozen: bool) -> float:
        if transition.terminal:
            return 0.0
        if frozen:
            return transition.next_grasp_q_max
        stack = perception.build_rotated_stack(transition.next_observation)
        qg = nets.forward_qmaps(self.grasp, stack, "grasp")
        value, _ = nets.masked_max(qg, stack.goal_mask)
        return value if value is not None else 0.0


def train_step(model: nets.PixelQNetwork, optimizer, transition: Transition,
               target: float, cfg: LearnConfig) -> float:
    """One Huber step on the executed pixel only; all other pixels carry no
    gradient. Non-finite losses reject the step and raise."""
    dtype = next(model.parameters()).dtype
    k, (u, v) = transition.action.k, transition.action.pixel
    view = _rotated_view_tensors(transition.observation, k, dtype)
    model.train()
    q = model(*view)[0, u, v]
    loss = F.huber_loss(q, torch.tensor(target, dtype=dtype), delta=cfg.huber_delta)
    if not torch.isfinite(loss):
        raise NonFiniteLossError(
            f"non-finite loss at action ({k}, {u}, {v}); step rejected")
    optimizer.zero_grad()
    loss.backward()
    optimizer.step()
    return float(loss.detach())


def executed_pixel_loss(model: nets.PixelQNetwork, transition: Transition,
                        target: float, cfg: LearnConfig):
    """Loss tensor without the optimizer step; used by gradient checks."""
    dtype = next(model.parameters()).dtype
    k, (u, v) = transition.action.k, transition.action.pixel
    view = _rotated_view_tensors(transition.observation, k, dtype)
    q = model(*view)[0, u, v]
    return F.huber_loss(q, torch.tensor(target, dtype=dtype), delta=cfg.huber_delta)


def _rotated_view_tensors(obs: Observation, k: int, dtype):
    color = perception.rotate_image(obs.color, k)
    depth = perception.rotate_image(obs.depth, k)
    goal = perception.rotate_image(obs.goal_mask, k, binary=True)
    color_t = torch.as_tensor(color, dtype=dtype).permute(2, 0, 1)[None]
    depth_t = torch.as_tensor(depth, dtype=dtype)[None, None].repeat(1, 3, 1, 1)
    mask_t = torch.as_tensor(goal.astype(np.float32), dtype=dtype)[None, None].repeat(1, 3, 1, 1)
    return color_t, depth_t, mask_t


@dataclass
class StageReport:
    stage: str
    episodes: int
    grasp_successes: int
    grasp_attempts: int
    push_count: int
    quarantined: int
    success_curve: list = field(default_factory=list)
    final_epsilon: float = 0.0

    def success_rate(self) -> float:
        return self.grasp_successes / max(1, self.grasp_attempts)


def run_stage(plan: StagePlan, env_factory, trainer: Trainer, buffer: ReplayBuffer,
              sim_cfg: sim.SimConfig, perception_cfg: perception.PerceptionConfig,
              grasp_threshold: float, run_seed: int = 0, log=None,
              start_episode: int = 0, episode_callback=None,
              schedule: ExplorationSchedule | None = None) -> StageReport:
    """Runs one curriculum stage. Grasp stages are single-attempt episodes;
    push stages run up to max_pushes then a concluding grasp, grasping
    early once the goal-masked grasp Q exceeds the threshold."""
    plan.validate()
    if schedule is None:
        schedule = ExplorationSchedule(trainer.cfg.epsilon_initial,
                                       trainer.cfg.epsilon_decay,
                                       trainer.cfg.epsilon_floor)
    report = StageReport(stage=plan.stage, episodes=0, grasp_successes=0,
                         grasp_attempts=0, push_count=0, quarantined=0)
    log = log or (lambda record: None)
    for episode in range(start_episode, plan.episode_budget):
        scene = env_factory(episode)
        if plan.stage in ("grasp_agnostic", "grasp_explore"):
            _grasp_episode(plan, scene, trainer, buffer, sim_cfg, perception_cfg,
                           run_seed, episode, schedule, log, report)
        else:
            _push_episode(plan, scene, trainer, buffer, sim_cfg, perception_cfg,
                          grasp_threshold, run_seed, episode, schedule, log, report)
        report.episodes += 1
        if episode_callback is not None:
            episode_callback(episode, schedule)
    report.final_epsilon = schedule.epsilon()
    return report


def _render(scene, sim_cfg, perception_cfg):
    return perception.render(scene, perception_cfg.resolution, sim_cfg.max_object_height,
                             perception_cfg.color_tolerance)


def _goal_q_max(qg: QMapStack, stack) -> float:
    value, _ = nets.masked_max(qg, stack.goal_mask)
    return value if value is not None else 0.0


def _grasp_episode(plan, scene, trainer, buffer, sim_cfg, perception_cfg,
                   run_seed, episode, schedule, log, report):
    obs = _render(scene, sim_cfg, perception_cfg)
    stack = perception.build_rotated_stack(obs)
    qg = nets.forward_qmaps(trainer.grasp, stack, "grasp")
    rng = rng_for(run_seed, plan.stage, episode, "act")
    explore_mask = "all" if plan.relabeling else "goal"
    action = nets.select_grasp_action(qg, stack, "train", schedule, rng, explore_mask)
    epsilon = schedule.epsilon()
    schedule.advance()
    goal_id = scene.goal().id
    cmd = sim.grasp_command(sim_cfg, action.decoded_pose[:2], action.k)
    next_scene, result = sim.step_grasp(scene, cmd, sim_cfg)
    next_obs = _render(next_scene, sim_cfg, perception_cfg)

    reward, _ = trainer.rewards.grasp_reward(result, goal_id, relabeling=False)
    transition = Transition(
        observation=obs, goal_id=goal_id, action=action, reward=reward,
        next_observation=next_obs, terminal=True, stage_tag=plan.stage,
        grasped_id=result.object_id, relabeled=False)
    buffer.add(transition)
    newest = transition
    if plan.relabeling and result.success and result.object_id != goal_id:
        relabeled_obs = obs.replace_goal_mask(
            _object_visible_mask(scene, result.object_id, obs.resolution))
        relabeled = Transition(
            observation=relabeled_obs, goal_id=result.object_id, action=action,
            reward=1.0, next_observation=next_obs, terminal=True,
            stage_tag=plan.stage, grasped_id=result.object_id, relabeled=True)
        buffer.add(relabeled)
        newest = relabeled

    success = result.success if plan.stage == "grasp_agnostic" \
        else (result.success and result.object_id == goal_id)
    report.grasp_attempts += 1
    report.grasp_successes += int(success)
    report.success_curve.append(int(success))
    log({"stage": plan.stage, "episode": episode, "step": 0,
         "primitive": "grasp", "k": action.k, "u": action.pixel[0], "v": action.pixel[1],
         "q_value": action.q_value, "reward": reward, "epsilon": epsilon,
         "grasp_success": bool(success), "scene_seed": scene.rng_seed})

    _updates(trainer, buffer, ["grasp"], newest, run_seed, plan, episode, 0,
             report, frozen_grasp=False, log=log)


def _object_visible_mask(scene, object_id, resolution):
    _, top = sim.render_depth(scene, resolution, 1.0)
    return top == object_id


def _push_episode(plan, scene, trainer, buffer, sim_cfg, perception_cfg,
                  grasp_threshold, run_seed, episode, schedule, log, report):
    obs = _render(scene, sim_cfg, perception_cfg)
    stack = perception.build_rotated_stack(obs)
    qg = nets.forward_qmaps(trainer.grasp, stack, "grasp")
    q_pre = _goal_q_max(qg, stack)
    goal_id = scene.goal().id
    nets_to_train = ["push"] if plan.grasp_net_frozen else ["grasp", "push"]

    step = 0
    pushes = 0
    while pushes < plan.max_pushes_per_episode and q_pre <= grasp_threshold:
        qp = nets.forward_qmaps(trainer.push, stack, "push")
        rng = rng_for(run_seed, plan.stage, episode, step, "act")
        action = _select_push(qp, stack, schedule, rng)
        epsilon = schedule.epsilon()
        schedule.advance()
        cmd = sim.PushCommand(start=action.decoded_pose[:2],
                              direction_index=action.k,
                              distance=sim_cfg.push_distance)
        next_scene, change = sim.step_push(scene, cmd, sim_cfg, perception_cfg.resolution)
        next_obs = _render(next_scene, sim_cfg, perception_cfg)
        next_stack = perception.build_rotated_stack(next_obs)
        next_qg = nets.forward_qmaps(trainer.grasp, next_stack, "grasp")
        q_post = _goal_q_max(next_qg, next_stack)
        qi = q_improved(q_pre, q_post)
        reward = trainer.rewards.push_reward(qi, change)
        transition = Transition(
            observation=obs, goal_id=goal_id, action=action, reward=reward,
            next_observation=next_obs, terminal=False, stage_tag=plan.stage,
            scene_changed=change.changed, q_improved=qi, next_grasp_q_max=q_post)
        buffer.add(transition)
        report.push_count += 1
        log({"stage": plan.stage, "episode": episode, "step": step,
             "primitive": "push", "k": action.k, "u": action.pixel[0], "v": action.pixel[1],
             "q_value": action.q_value, "reward": reward, "epsilon": epsilon,
             "grasp_success": False, "scene_seed": scene.rng_seed})
        _updates(trainer, buffer, nets_to_train, transition, run_seed, plan,
                 episode, step, report, frozen_grasp=plan.grasp_net_frozen, log=log)
        scene, obs, stack, qg, q_pre = next_scene, next_obs, next_stack, next_qg, q_post
        step += 1
        pushes += 1

    # concluding grasp (early when the threshold was exceeded, otherwise
    # after the push budget); goal-masked argmax of the grasp net
    if plan.grasp_net_frozen:
        action = nets.select_grasp_action(qg, stack, "test")
    else:
        rng = rng_for(run_seed, plan.stage, episode, step, "act")
        action = nets.select_grasp_action(qg, stack, "train", schedule, rng, "goal")
        schedule.advance()
    epsilon = schedule.epsilon()
    if action is None:
        log({"stage": plan.stage, "episode": episode, "step": step,
             "primitive": "grasp", "k": -1, "u": -1, "v": -1, "q_value": 0.0,
             "reward": 0.0, "epsilon": epsilon, "grasp_success": False,
             "scene_seed": scene.rng_seed, "event": "no-action"})
        report.grasp_attempts += 1
        report.success_curve.append(0)
        return
    cmd = sim.grasp_command(sim_cfg, action.decoded_pose[:2], action.k)
    next_scene, result = sim.step_grasp(scene, cmd, sim_cfg)
    next_obs = _render(next_scene, sim_cfg, perception_cfg)
    reward, _ = trainer.rewards.grasp_reward(result, goal_id, relabeling=False)
    transition = Transition(
        observation=obs, goal_id=goal_id, action=action, reward=reward,
        next_observation=next_obs, terminal=True, stage_tag=plan.stage,
        grasped_id=result.object_id)
    buffer.add(transition)
    success = result.success and result.object_id == goal_id
    report.grasp_attempts += 1
    report.grasp_successes += int(success)
    report.success_curve.append(int(success))
    log({"stage": plan.stage, "episode": episode, "step": step,
         "primitive": "grasp", "k": action.k, "u": action.pixel[0], "v": action.pixel[1],
         "q_value": action.q_value, "reward": reward, "epsilon": epsilon,
         "grasp_success": bool(success), "scene_seed": scene.rng_seed})
    _updates(trainer, buffer, nets_to_train, transition, run_seed, plan,
             episode, step, report, frozen_grasp=plan.grasp_net_frozen, log=log)


def _select_push(qp: QMapStack, stack, schedule, rng) -> ActionSpec:
    value, arg = nets._unmasked_argmax(qp)
    if rng.random() < schedule.epsilon():
        drawn = nets._uniform_mask_draw(stack.all_mask, rng)
        if drawn is not None:
            arg = drawn
            value = float(qp.values[arg])
    resolution = qp.values.shape[-1]
    return nets._spec("push", *arg, value, resolution)


def _updates(trainer, buffer, primitives, newest, run_seed, plan, episode, step,
             report, frozen_grasp, log):
    for primitive in primitives:
        if primitive == "grasp" and frozen_grasp:
            continue
        rng = rng_for(run_seed, plan.stage, episode, step, "replay", primitive)
        batch = buffer.sample(rng, trainer.cfg.batch_size, primitive)
        if newest is not None and newest.action.primitive == primitive:
            batch.append(newest)
        losses = []
        for transition in batch:
            next_q = trainer.next_grasp_q_max(transition, frozen_grasp)
            target = td_target(transition, next_q, trainer.td)
            try:
                losses.append(train_step(trainer.net(primitive),
                                         trainer.optimizers[primitive],
                                         transition, target, trainer.cfg))
            except NonFiniteLossError as exc:
                buffer.remove(transition)
                report.quarantined += 1
                log({"stage": plan.stage, "episode": episode, "step": step,
                     "event": "quarantined", "primitive": primitive,
                     "detail": str(exc)})
        if losses:
            log({"stage": plan.stage, "episode": episode, "step": step,
                 "event": "update", "net": primitive, "count": len(losses),
                 "mean_loss": float(np.mean(losses))})
