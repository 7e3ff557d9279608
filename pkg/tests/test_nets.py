import numpy as np
import pytest
import torch

from pushgrasp import nets, perception, sim
from pushgrasp.util import rng_for


def make_stack(scene, sim_cfg, resolution=64):
    obs = perception.render(scene, resolution, sim_cfg.max_object_height)
    return obs, perception.build_rotated_stack(obs)


def synthetic_stack(rng, resolution=32):
    goal = np.zeros((16, resolution, resolution), dtype=bool)
    allm = np.zeros((16, resolution, resolution), dtype=bool)
    for k in range(16):
        gu, gv = rng.integers(4, resolution - 4, size=2)
        goal[k, gu:gu + 3, gv:gv + 3] = True
        allm[k] = goal[k]
        au, av = rng.integers(4, resolution - 4, size=2)
        allm[k, au:au + 5, av:av + 5] = True
    color = rng.random((16, resolution, resolution, 3))
    depth = rng.random((16, resolution, resolution))
    return perception.RotatedStack(color=color, depth=depth, goal_mask=goal,
                                   all_mask=allm)


def q_stack(rng, resolution=32, network_id="grasp"):
    return nets.QMapStack(values=rng.normal(size=(16, resolution, resolution)).astype(np.float32),
                          network_id=network_id)


# --- config ---

def test_config_validation():
    with pytest.raises(nets.ConfigurationError):
        nets.NetworkConfig(rotations=8).validate()
    with pytest.raises(nets.ConfigurationError):
        nets.NetworkConfig(tower_depth=3, tower_width=(8, 8)).validate()
    with pytest.raises(nets.ConfigurationError):
        nets.NetworkConfig(tower_depth=8, tower_width=(4,) * 8, resolution=64).validate()
    with pytest.raises(nets.ConfigurationError):
        nets.NetworkConfig(pretrained_backbone=True).validate()


# --- forward ---

def test_output_shape_and_determinism(small_net_cfg, sim_cfg):
    grasp, _ = nets.build_models(small_net_cfg, 0)
    scene = sim.spawn_packed_scene(5, 1, sim_cfg)
    _, stack = make_stack(scene, sim_cfg)
    q1 = nets.forward_qmaps(grasp, stack, "grasp")
    assert q1.values.shape == (16, 64, 64)
    assert np.isfinite(q1.values).all()
    q2 = nets.forward_qmaps(grasp, stack, "grasp")
    assert np.array_equal(q1.values, q2.values)


def test_rotation_rows_independent(small_net_cfg, sim_cfg):
    grasp, _ = nets.build_models(small_net_cfg, 0)
    scene = sim.spawn_packed_scene(5, 2, sim_cfg)
    _, stack = make_stack(scene, sim_cfg)
    base = nets.forward_qmaps(grasp, stack, "grasp")
    perm = np.random.default_rng(3).permutation(16)
    permuted = perception.RotatedStack(color=stack.color[perm], depth=stack.depth[perm],
                                       goal_mask=stack.goal_mask[perm],
                                       all_mask=stack.all_mask[perm])
    out = nets.forward_qmaps(grasp, permuted, "grasp")
    assert np.array_equal(out.values, base.values[perm])


# --- selection ---

def test_masked_selection_property():
    rng = rng_for(11)
    for _ in range(200):
        stack = synthetic_stack(rng)
        gq, pq = q_stack(rng), q_stack(rng, network_id="push")
        action = nets.select_action(gq, pq, stack, "test", threshold=1.8)
        assert action is not None
        if action.primitive == "grasp":
            assert stack.goal_mask[action.k, action.pixel[0], action.pixel[1]]
        else:
            assert stack.all_mask[action.k, action.pixel[0], action.pixel[1]]


def test_threshold_boundary_selects_push():
    rng = rng_for(5)
    stack = synthetic_stack(rng)
    gq, pq = q_stack(rng), q_stack(rng, network_id="push")
    gq.values[stack.goal_mask] = 0.0
    k, u, v = np.argwhere(stack.goal_mask)[0]
    gq.values[k, u, v] = 1.8  # exactly the threshold: boundary goes to push
    action = nets.select_action(gq, pq, stack, "test", threshold=1.8)
    assert action.primitive == "push"
    gq.values[k, u, v] = 1.8000001
    action = nets.select_action(gq, pq, stack, "test", threshold=1.8)
    assert action.primitive == "grasp"
    assert action.pixel == (int(u), int(v)) and action.k == int(k)


def test_grasp_over_threshold_examples():
    rng = rng_for(6)
    stack = synthetic_stack(rng)
    gq, pq = q_stack(rng), q_stack(rng, network_id="push")
    gq.values[:] = 0.0
    k, u, v = np.argwhere(stack.goal_mask)[7]
    gq.values[k, u, v] = 2.0
    action = nets.select_action(gq, pq, stack, "test", threshold=1.8)
    assert action.primitive == "grasp"
    assert (action.k, *action.pixel) == (int(k), int(u), int(v))
    # below threshold everywhere: push at the push argmax
    gq.values[k, u, v] = 1.7
    action = nets.select_action(gq, pq, stack, "test", threshold=1.8)
    assert action.primitive == "push"
    masked = np.where(stack.all_mask, pq.values, -np.inf)
    assert action.q_value == pytest.approx(masked.max())


def test_empty_goal_mask_forces_push():
    rng = rng_for(8)
    stack = synthetic_stack(rng)
    stack.goal_mask[:] = False
    gq, pq = q_stack(rng), q_stack(rng, network_id="push")
    action = nets.select_action(gq, pq, stack, "test", threshold=-10.0)
    assert action is not None and action.primitive == "push"


def test_empty_support_no_action():
    rng = rng_for(9)
    stack = synthetic_stack(rng)
    stack.goal_mask[:] = False
    stack.all_mask[:] = False
    gq, pq = q_stack(rng), q_stack(rng, network_id="push")
    assert nets.select_action(gq, pq, stack, "test", threshold=1.8) is None


def test_train_mode_threshold_uses_goal_masked_max():
    rng = rng_for(10)
    stack = synthetic_stack(rng)
    gq, pq = q_stack(rng), q_stack(rng, network_id="push")
    gq.values[:] = 0.0
    # unmasked max above threshold but off the goal mask must not trigger a grasp
    off = np.argwhere(~stack.goal_mask)[0]
    gq.values[off[0], off[1], off[2]] = 5.0
    action = nets.select_action(gq, pq, stack, "train", threshold=1.8)
    assert action.primitive == "push"


def test_epsilon_schedule_closed_form():
    sched = nets.ExplorationSchedule(epsilon_initial=0.5, decay=0.9998, floor=0.1)
    for n in (0, 1, 10, 500, 5000, 50000):
        sched.actions = n
        assert sched.epsilon() == max(0.1, 0.5 * 0.9998 ** n)


def test_action_q_value_matches_stack():
    rng = rng_for(12)
    stack = synthetic_stack(rng)
    gq, pq = q_stack(rng), q_stack(rng, network_id="push")
    for _ in range(50):
        action = nets.select_action(gq, pq, stack, "train", threshold=10.0,
                                    schedule=nets.ExplorationSchedule(1.0, 1.0, 1.0),
                                    rng=rng)
        qmap = gq if action.primitive == "grasp" else pq
        assert action.q_value == qmap.values[action.k, action.pixel[0], action.pixel[1]]


# --- checkpoints ---

def test_checkpoint_round_trip(tmp_path, small_net_cfg, sim_cfg):
    grasp, push = nets.build_models(small_net_cfg, 3)
    scene = sim.spawn_packed_scene(5, 4, sim_cfg)
    _, stack = make_stack(scene, sim_cfg)
    before = nets.forward_qmaps(grasp, stack, "grasp")
    path = tmp_path / "ck.pt"
    nets.save_checkpoint(path, grasp, push, {"stage": "grasp_agnostic", "step": 10,
                                             "config_hash": "abc"})
    g2, p2, meta, _ = nets.load_checkpoint(path)
    after = nets.forward_qmaps(g2, stack, "grasp")
    assert np.array_equal(before.values, after.values)
    assert meta["stage"] == "grasp_agnostic"
    assert meta["step"] == 10
    assert meta["config_hash"] == "abc"


def test_checkpoint_truncated_rejected(tmp_path, small_net_cfg):
    grasp, push = nets.build_models(small_net_cfg, 0)
    path = tmp_path / "ck.pt"
    nets.save_checkpoint(path, grasp, push, {"stage": "x", "step": 0})
    with open(path, "r+b") as fh:
        fh.truncate(64)
    with pytest.raises(nets.CheckpointError):
        nets.load_checkpoint(path)


def test_checkpoint_version_mismatch(tmp_path, small_net_cfg):
    grasp, push = nets.build_models(small_net_cfg, 0)
    path = tmp_path / "ck.pt"
    blob = {"version": 99, "net_config": {}, "grasp_state": {}, "push_state": {}}
    torch.save(blob, path)
    with pytest.raises(nets.CheckpointError) as err:
        nets.load_checkpoint(path)
    assert "version" in str(err.value)
