"""PickPlace1D: move blocks into target regions along a line.

Obstructors sit on top of target regions and are not visible to any
predicate, so a target can look free symbolically while being blocked.
"""

from __future__ import annotations

from typing import Dict, List, Optional, Tuple

import numpy as np

from nsrtlab.envs.base import Env, StepResult, Task, TaskSplit
from nsrtlab.relcore import Object, ObjType, Predicate, State


class PickPlace1D(Env):
    name = "pickplace1d"
    action_dim = 2
    constants = {
        "axis": [0.0, 1.0],
        "pick_tol": 0.05,
        "collision_tol": 0.01,
        "target_width": [0.05, 0.07],
        "block_clearance": 0.02,
        "obstructor_width_ratio": [0.6, 1.3],
        "removed_dist": 1.0,
        "removed_threshold": 0.5,
        "prior_pick_noise": 0.02,
        "prior_place_margin": 0.005,
        "prior_away_place": [1.1, 1.2],
    }

    def _make_types(self):
        self.block_type = ObjType("block", ("pose",))
        self.target_type = ObjType("target", ("start", "end"))
        self.obstructor_type = ObjType("obstructor", ("start", "end", "dist"))
        return (self.block_type, self.target_type, self.obstructor_type)

    def _make_predicates(self):
        return (
            Predicate("On", (self.block_type, self.target_type), self._on),
            Predicate("InFreeSpace", (self.block_type,), self._in_free_space),
            Predicate("IsRemoved", (self.obstructor_type,), self._is_removed),
        )

    def _make_splits(self):
        return {
            "train": TaskSplit("train", {"blocks": (2, 5), "targets": (5, 10),
                                         "obstructors": (0, 1)}, 10),
            "test_easy": TaskSplit("test_easy", {"blocks": (2,), "targets": (5,),
                                                 "obstructors": (0, 1)}, 25),
            "test_hard": TaskSplit("test_hard", {"blocks": (4,), "targets": (12,),
                                                 "obstructors": (2,)}, 25),
        }

    # Predicates.
    @staticmethod
    def _on(state: State, objs) -> bool:
        block, target = objs
        pose = state[block][0]
        start, end = state[target]
        return start <= pose <= end

    def _in_free_space(self, state: State, objs) -> bool:
        pose = state[objs[0]][0]
        for obj, vec in state.data.items():
            if obj.type is self.target_type or obj.type == self.target_type:
                if vec[0] <= pose <= vec[1]:
                    return False
        return True

    def _is_removed(self, state: State, objs) -> bool:
        return state[objs[0]][2] > self.constants["removed_threshold"]

    # Dynamics.
    def _pickable(self, state: State) -> List[Tuple[Object, float]]:
        out = []
        for obj, vec in state.data.items():
            if obj.type == self.block_type:
                out.append((obj, vec[0]))
            elif (obj.type == self.obstructor_type
                  and vec[2] <= self.constants["removed_threshold"]):
                out.append((obj, 0.5 * (vec[0] + vec[1])))
        return out

    def _picked(self, state: State, pick: float) -> Optional[Object]:
        best, best_dist = None, self.constants["pick_tol"]
        for obj, pose in sorted(self._pickable(state), key=lambda t: t[0]):
            dist = abs(pose - pick)
            if dist < best_dist:
                best, best_dist = obj, dist
        return best

    def _colliding(self, state: State, place: float) -> List[Object]:
        tol = self.constants["collision_tol"]
        hits = []
        for obj in state.objects_of_type(self.obstructor_type):
            start, end, dist = state[obj]
            if dist <= self.constants["removed_threshold"] and \
                    start - tol <= place <= end + tol:
                hits.append(obj)
        return hits

    def _transition(self, state: State, action: np.ndarray) -> StepResult:
        pick, place = float(action[0]), float(action[1])
        obj = self._picked(state, pick)
        if obj is None:
            return StepResult(state.copy())
        nxt = state.copy()
        if obj.type == self.obstructor_type:
            nxt[obj][2] = self.constants["removed_dist"]
            return StepResult(nxt)
        hits = self._colliding(state, place)
        if hits:
            return StepResult(None, frozenset([obj, *hits]))
        nxt[obj][0] = place
        return StepResult(nxt)

    # Behavior prior.
    def sample_prior(self, state: State, rng: np.random.Generator) -> np.ndarray:
        blocks = state.objects_of_type(self.block_type)
        obstructors = [o for o in state.objects_of_type(self.obstructor_type)
                       if state[o][2] <= self.constants["removed_threshold"]]
        targets = state.objects_of_type(self.target_type)
        noise = self.constants["prior_pick_noise"]
        lo, hi = self.constants["axis"]
        # Uniform over every pickable object, obstructors and blocks alike.
        if obstructors and rng.integers(len(obstructors) + len(blocks)) < len(obstructors):
            obs = obstructors[rng.integers(len(obstructors))]
            pick = 0.5 * (state[obs][0] + state[obs][1]) + rng.uniform(-noise, noise)
            # Removed obstructors go "away": a place pose past the end of the axis.
            return np.array([pick, rng.uniform(*self.constants["prior_away_place"])])
        if not blocks:
            return np.array([rng.uniform(lo, hi), rng.uniform(lo, hi)])
        block = blocks[rng.integers(len(blocks))]
        pick = state[block][0] + rng.uniform(-noise, noise)
        if not targets:
            return np.array([pick, rng.uniform(lo, hi)])
        target = targets[rng.integers(len(targets))]
        margin = self.constants["prior_place_margin"]
        start, end = state[target]
        return np.array([pick, rng.uniform(start + margin, end - margin)])

    # Task generation.
    def _layout(self, n_targets: int, n_blocks: int, rng: np.random.Generator
                ) -> Tuple[List[Tuple[float, float]], List[float]]:
        lo, hi = self.constants["axis"]
        wlo, whi = self.constants["target_width"]
        clear = self.constants["block_clearance"]
        widths = rng.uniform(wlo, whi, size=n_targets)
        kinds = ["t"] * n_targets + ["b"] * n_blocks
        rng.shuffle(kinds)
        sizes = []
        ti = 0
        for kind in kinds:
            if kind == "t":
                sizes.append(widths[ti])
                ti += 1
            else:
                sizes.append(2 * clear)
        free = (hi - lo) - sum(sizes)
        if free <= 0:
            raise ValueError("too many objects for the axis")
        gaps = rng.dirichlet(np.ones(len(kinds) + 1)) * free
        targets, blocks = [], []
        pos = lo + gaps[0]
        for kind, size, gap in zip(kinds, sizes, gaps[1:]):
            if kind == "t":
                targets.append((pos, pos + size))
            else:
                blocks.append(pos + size / 2)
            pos += size + gap
        return targets, blocks

    def _sample_task(self, split: TaskSplit, rng: np.random.Generator) -> Task:
        n_blocks = int(rng.choice(split.counts["blocks"]))
        n_targets = int(rng.choice(split.counts["targets"]))
        n_obs = int(rng.choice(split.counts["obstructors"]))
        target_spans, block_poses = self._layout(n_targets, n_blocks, rng)
        data: Dict[Object, np.ndarray] = {}
        blocks = [Object(f"block{i}", self.block_type) for i in range(n_blocks)]
        targets = [Object(f"target{i}", self.target_type) for i in range(n_targets)]
        for obj, pose in zip(blocks, block_poses):
            data[obj] = np.array([pose])
        for obj, span in zip(targets, target_spans):
            data[obj] = np.array(span)
        rlo, rhi = self.constants["obstructor_width_ratio"]
        obstructed = rng.choice(n_targets, size=n_obs, replace=False)
        for i, ti in enumerate(obstructed):
            start, end = target_spans[ti]
            width = (end - start) * rng.uniform(rlo, rhi)
            center = rng.uniform(start + (end - start) / 4, end - (end - start) / 4)
            data[Object(f"obstructor{i}", self.obstructor_type)] = np.array(
                [center - width / 2, center + width / 2, 0.0])
        goal_targets = rng.choice(n_targets, size=n_blocks, replace=False)
        on = self.pred("On")
        goal = frozenset(on([b, targets[t]]) for b, t in zip(blocks, goal_targets))
        return Task(State(data), goal, split.horizon)
