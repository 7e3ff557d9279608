#!/usr/bin/env python3
"""Measures goal-masked grasp-Q distributions on blocked (packed) vs free
(isolated-goal sparse) scenes for a checkpoint; used to calibrate the
desk-scale grasp threshold."""

import sys

import numpy as np
import torch

from pushgrasp import config, nets, perception, sim
from pushgrasp.util import int_seed

torch.set_num_threads(2)


def main(checkpoint, n=60):
    cfg = config.build_config()
    grasp, _, _, _ = nets.load_checkpoint(checkpoint)

    def goal_q(scene):
        obs = perception.render(scene, 64, cfg.sim.max_object_height)
        stack = perception.build_rotated_stack(obs)
        qg = nets.forward_qmaps(grasp, stack, "grasp")
        value, _ = nets.masked_max(qg, stack.goal_mask)
        return value if value is not None else 0.0

    blocked = [goal_q(sim.spawn_packed_scene(5, int_seed(5150, "thr", i), cfg.sim))
               for i in range(n)]
    free = [goal_q(sim.spawn_sparse_scene(1, int_seed(5151, "thr", i), cfg.sim))
            for i in range(n)]
    for name, vals in (("blocked(packed)", blocked), ("free(isolated)", free)):
        arr = np.array(vals)
        print(f"{name:18s} mean {arr.mean():.3f}  p10 {np.percentile(arr, 10):.3f} "
              f"p50 {np.percentile(arr, 50):.3f}  p90 {np.percentile(arr, 90):.3f}")
    b90 = np.percentile(blocked, 90)
    f10 = np.percentile(free, 10)
    print(f"suggested threshold (midpoint p90-blocked..p10-free): {(b90 + f10) / 2:.3f}")


if __name__ == "__main__":
    main(sys.argv[1], int(sys.argv[2]) if len(sys.argv) > 2 else 60)
