import numpy as np
import pytest
import torch

from pushgrasp import nets, perception, sim

torch.set_num_threads(2)


@pytest.fixture(scope="session")
def sim_cfg():
    return sim.SimConfig()


@pytest.fixture(scope="session")
def perception_cfg():
    return perception.PerceptionConfig()


@pytest.fixture(scope="session")
def small_net_cfg():
    return nets.NetworkConfig(tower_depth=2, tower_width=(12, 24), head_channels=24,
                              grasp_threshold=1.8)


@pytest.fixture(scope="session")
def mini_net_cfg():
    return nets.NetworkConfig(tower_depth=2, tower_width=(4, 4), head_channels=8,
                              resolution=16, grasp_threshold=1.8)


@pytest.fixture()
def isolated_square_scene():
    body = sim.ObjectBody(id=0, shape="square", half_extents=(0.035, 0.035),
                          height=0.04, pose=(0.5, 0.5, 0.0), color_id=sim.GOAL_COLOR_ID,
                          is_goal=True)
    return sim.Scene(objects=[body], rng_seed=0)


def observation_for(scene, sim_cfg, resolution=64):
    return perception.render(scene, resolution, sim_cfg.max_object_height)


@pytest.fixture(scope="session")
def rng():
    return np.random.default_rng(1234)
