"""Blocks: stack blocks on a table to build towers."""

from __future__ import annotations

from typing import Dict, List, Optional

import numpy as np

from nsrtlab.envs.base import Env, StepResult, Task, TaskSplit
from nsrtlab.relcore import Object, ObjType, Predicate, State

X, Y, Z, HELD, CLEAR = range(5)


class Blocks(Env):
    name = "blocks"
    action_dim = 4
    constants = {
        "block_size": 0.1,
        "table_z": 0.0,
        "held_z": 0.5,
        "table_x": [0.0, 1.0],
        "table_y": [0.0, 1.0],
        "reach_tol": 0.03,
        "table_clearance": 0.01,
        "gripper_open": 0.5,
        "on_xy_tol": 0.05,
        "on_z_tol": 0.05,
        "prior_pick_noise": 0.01,
        "prior_place_noise": 0.01,
    }

    def _make_types(self):
        self.block_type = ObjType("block", ("x", "y", "z", "held", "clear"))
        self.robot_type = ObjType("robot", ("gripper",))
        return (self.block_type, self.robot_type)

    def _make_predicates(self):
        block, robot = self.block_type, self.robot_type
        c = self.constants
        size = c["block_size"]

        def on(state, objs):
            top, bottom = state[objs[0]], state[objs[1]]
            if top[HELD] > 0.5 or bottom[HELD] > 0.5:
                return False
            return (np.hypot(top[X] - bottom[X], top[Y] - bottom[Y]) < c["on_xy_tol"]
                    and abs(top[Z] - bottom[Z] - size) < c["on_z_tol"])

        def on_table(state, objs):
            vec = state[objs[0]]
            return vec[HELD] < 0.5 and abs(vec[Z] - c["table_z"]) < c["on_z_tol"]

        return (
            Predicate("On", (block, block), on),
            Predicate("OnTable", (block,), on_table),
            Predicate("GripperOpen", (robot,),
                      lambda s, o: s[o[0]][0] > c["gripper_open"]),
            Predicate("Holding", (block,), lambda s, o: s[o[0]][HELD] > 0.5),
            Predicate("Clear", (block,),
                      lambda s, o: s[o[0]][CLEAR] > 0.5 and s[o[0]][HELD] < 0.5),
        )

    def _make_splits(self):
        return {
            "train": TaskSplit("train", {"blocks": (3, 4)}, 20),
            "test_easy": TaskSplit("test_easy", {"blocks": (3,)}, 25),
            "test_hard": TaskSplit("test_hard", {"blocks": (5, 6)}, 35),
        }

    def _held(self, state: State) -> Optional[Object]:
        for obj in state.objects_of_type(self.block_type):
            if state[obj][HELD] > 0.5:
                return obj
        return None

    def _nearest(self, state: State, target: np.ndarray, clear_only: bool
                 ) -> Optional[Object]:
        best, best_dist = None, self.constants["reach_tol"]
        for obj in state.objects_of_type(self.block_type):
            vec = state[obj]
            if vec[HELD] > 0.5 or (clear_only and vec[CLEAR] < 0.5):
                continue
            dist = float(np.linalg.norm(vec[:3] - target))
            if dist < best_dist:
                best, best_dist = obj, dist
        return best

    def _below(self, state: State, block: Object) -> Optional[Object]:
        on = self.pred("On")
        for other in state.objects_of_type(self.block_type):
            if other != block and on.holds(state, (block, other)):
                return other
        return None

    def _transition(self, state: State, action: np.ndarray) -> StepResult:
        c = self.constants
        size = c["block_size"]
        target, grip = action[:3], action[3]
        robot = state.objects_of_type(self.robot_type)[0]
        held = self._held(state)
        nxt = state.copy()
        if held is None:
            if grip <= c["gripper_open"]:
                return StepResult(nxt)
            block = self._nearest(state, target, clear_only=False)
            if block is None or state[block][CLEAR] < 0.5:
                return StepResult(nxt)
            below = self._below(state, block)
            if below is not None:
                nxt[below][CLEAR] = 1.0
            nxt[block][Z] = c["held_z"]
            nxt[block][HELD] = 1.0
            nxt[robot][0] = 0.0
            return StepResult(nxt)
        # Stacking on a clear block.
        for other in state.objects_of_type(self.block_type):
            vec = state[other]
            if other == held or vec[CLEAR] < 0.5:
                continue
            spot = vec[:3] + np.array([0.0, 0.0, size])
            if np.linalg.norm(spot - target) < c["reach_tol"]:
                nxt[held][:3] = spot
                nxt[held][HELD] = 0.0
                nxt[other][CLEAR] = 0.0
                nxt[robot][0] = 1.0
                return StepResult(nxt)
        # Placing on a free spot of the table.
        xlo, xhi = c["table_x"]
        ylo, yhi = c["table_y"]
        if (abs(target[Z] - c["table_z"]) < c["reach_tol"]
                and xlo <= target[X] <= xhi and ylo <= target[Y] <= yhi
                and self._table_spot_free(state, held, target)):
            nxt[held][:3] = [target[X], target[Y], c["table_z"]]
            nxt[held][HELD] = 0.0
            nxt[robot][0] = 1.0
        return StepResult(nxt)

    def _table_spot_free(self, state: State, held: Object, target: np.ndarray) -> bool:
        reach = self.constants["block_size"] + self.constants["table_clearance"]
        for obj in state.objects_of_type(self.block_type):
            if obj == held:
                continue
            vec = state[obj]
            if max(abs(vec[X] - target[X]), abs(vec[Y] - target[Y])) < reach:
                return False
        return True

    def sample_prior(self, state: State, rng: np.random.Generator) -> np.ndarray:
        c = self.constants
        blocks = state.objects_of_type(self.block_type)
        held = self._held(state)
        if held is None:
            if not blocks:
                return np.array([rng.uniform(), rng.uniform(), 0.0, 1.0])
            block = blocks[rng.integers(len(blocks))]
            noise = c["prior_pick_noise"]
            xyz = state[block][:3] + rng.uniform(-noise, noise, size=3)
            return np.array([*xyz, rng.uniform(c["gripper_open"], 1.0)])
        noise = c["prior_place_noise"]
        others = [b for b in blocks if b != held]
        if not others or rng.random() < 0.5:
            xlo, xhi = c["table_x"]
            ylo, yhi = c["table_y"]
            return np.array([rng.uniform(xlo, xhi), rng.uniform(ylo, yhi),
                             c["table_z"] + rng.uniform(-noise, noise), 0.0])
        other = others[rng.integers(len(others))]
        spot = state[other][:3] + np.array([0.0, 0.0, c["block_size"]])
        return np.array([*(spot + rng.uniform(-noise, noise, size=3)), 0.0])

    def _sample_task(self, split: TaskSplit, rng: np.random.Generator) -> Task:
        n = int(rng.choice(split.counts["blocks"]))
        blocks = [Object(f"block{i}", self.block_type) for i in range(n)]
        data: Dict[Object, np.ndarray] = {}
        for pile in _random_piles(n, rng):
            x, y = self._free_table_xy(data, rng)
            for level, i in enumerate(pile):
                clear = 1.0 if level == len(pile) - 1 else 0.0
                data[blocks[i]] = np.array(
                    [x, y, level * self.constants["block_size"], 0.0, clear])
        data[Object("robot", self.robot_type)] = np.array([1.0])
        on = self.pred("On")
        goal = set()
        for pile in _random_piles(n, rng):
            for lower, upper in zip(pile, pile[1:]):
                goal.add(on([blocks[upper], blocks[lower]]))
        if not goal:
            perm = rng.permutation(n)
            goal.add(on([blocks[perm[0]], blocks[perm[1]]]))
        return Task(State(data), frozenset(goal), split.horizon)

    def _free_table_xy(self, data, rng: np.random.Generator):
        c = self.constants
        sep = 2 * c["block_size"]
        while True:
            x = rng.uniform(c["table_x"][0] + 0.1, c["table_x"][1] - 0.1)
            y = rng.uniform(c["table_y"][0] + 0.1, c["table_y"][1] - 0.1)
            if all(max(abs(v[X] - x), abs(v[Y] - y)) >= sep
                   for o, v in data.items() if o.type == self.block_type):
                return x, y


def _random_piles(n: int, rng: np.random.Generator) -> List[List[int]]:
    """Split a random permutation of ``range(n)`` into bottom-to-top piles."""
    order = [int(i) for i in rng.permutation(n)]
    piles: List[List[int]] = [[order[0]]] if n else []
    for i in order[1:]:
        if rng.random() < 0.5:
            piles[-1].append(i)
        else:
            piles.append([i])
    return piles
