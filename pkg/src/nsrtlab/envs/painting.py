"""Painting: wash, dry, paint and place widgets into a box or onto a shelf.

Box placements need a top grasp and shelf placements a side grasp. A
partially closed lid covers the near end of the box; placements under it
are blocked, and no predicate describes the lid.
"""

from __future__ import annotations

from typing import Dict, List, Optional

import numpy as np

from nsrtlab.envs.base import Env, StepResult, Task, TaskSplit
from nsrtlab.relcore import Object, ObjType, Predicate, State

# Widget attribute layout.
X, Y, Z, COLOR, WET, DIRT, HELD = range(7)
# Robot attribute layout.
ROT, GRIP = range(2)


class Painting(Env):
    name = "painting"
    action_dim = 8
    constants = {
        "table_x": [0.0, 0.6],
        "box_x": [0.65, 0.8],
        "shelf_x": [0.85, 1.0],
        "y_range": [0.0, 1.0],
        "lid_pose": [0.72, 0.5, 0.3],
        "lid_span": 0.15,
        "lid_open_range": [0.5, 1.0],
        "box_color_range": [0.26, 0.34],
        "shelf_color_range": [0.66, 0.74],
        "pick_tol": 0.05,
        "grasp_tol": 0.25,
        "grip_closed": 0.2,
        "grip_open": 0.8,
        "level_threshold": 0.5,
        "paint_tol": 0.05,
        "color_tol": 0.05,
        "blank_tol": 0.05,
        "widget_separation": 0.1,
        "prior_pick_noise": 0.01,
        "prior_rot_noise": 0.1,
        "prior_paint_noise": 0.04,
        "neutral_pose": -1.0,
    }

    def _make_types(self):
        self.widget_type = ObjType("widget", ("x", "y", "z", "color", "wetness",
                                              "dirtiness", "held"))
        self.box_type = ObjType("box", ("color",))
        self.lid_type = ObjType("lid", ("open",))
        self.shelf_type = ObjType("shelf", ("color",))
        self.robot_type = ObjType("robot", ("rotation", "gripper"))
        return (self.widget_type, self.box_type, self.lid_type, self.shelf_type,
                self.robot_type)

    def _make_predicates(self):
        w, c = self.widget_type, self.constants

        def region(bounds):
            lo, hi = bounds

            def holds(state, objs):
                vec = state[objs[0]]
                return vec[HELD] < 0.5 and lo <= vec[X] <= hi
            return holds

        def holding_with(side: bool):
            def holds(state, objs):
                if state[objs[0]][HELD] < 0.5:
                    return False
                return (self._robot_vec(state)[ROT] >= 0.5) == side
            return holds

        def color_of(kind: ObjType):
            def holds(state, objs):
                ref = state[state.objects_of_type(kind)[0]][0]
                return abs(state[objs[0]][COLOR] - ref) < c["color_tol"]
            return holds

        return (
            Predicate("OnTable", (w,), region(c["table_x"])),
            Predicate("InBox", (w,), region(c["box_x"])),
            Predicate("InShelf", (w,), region(c["shelf_x"])),
            Predicate("Holding", (w,), lambda s, o: s[o[0]][HELD] > 0.5),
            Predicate("HoldingTop", (w,), holding_with(False)),
            Predicate("HoldingSide", (w,), holding_with(True)),
            Predicate("IsDirty", (w,), lambda s, o: s[o[0]][DIRT] > 0.5),
            Predicate("IsClean", (w,), lambda s, o: s[o[0]][DIRT] <= 0.5),
            Predicate("IsWet", (w,), lambda s, o: s[o[0]][WET] > 0.5),
            Predicate("IsDry", (w,), lambda s, o: s[o[0]][WET] <= 0.5),
            Predicate("IsBlank", (w,),
                      lambda s, o: s[o[0]][COLOR] < c["blank_tol"]),
            Predicate("IsShelfColor", (w,), color_of(self.shelf_type)),
            Predicate("IsBoxColor", (w,), color_of(self.box_type)),
            Predicate("GripperOpen", (self.robot_type,),
                      lambda s, o: s[o[0]][GRIP] > 0.5),
        )

    def _make_splits(self):
        return {
            "train": TaskSplit("train", {"widgets": (2, 3)}, 18),
            "test_easy": TaskSplit("test_easy", {"widgets": (1,)}, 6),
            "test_hard": TaskSplit("test_hard", {"widgets": (10,)}, 60),
        }

    def _robot_vec(self, state: State) -> np.ndarray:
        return state[state.objects_of_type(self.robot_type)[0]]

    def _held(self, state: State) -> Optional[Object]:
        for obj in state.objects_of_type(self.widget_type):
            if state[obj][HELD] > 0.5:
                return obj
        return None

    def _single(self, state: State, kind: ObjType) -> Object:
        return state.objects_of_type(kind)[0]

    def _transition(self, state: State, action: np.ndarray) -> StepResult:
        c = self.constants
        xyz, rot, grip = action[:3], action[3], action[4]
        water, heat, color = action[5], action[6], action[7]
        held = self._held(state)
        robot = self._single(state, self.robot_type)
        nxt = state.copy()
        if held is not None:
            vec = nxt[held]
            if water > c["level_threshold"]:
                vec[DIRT] = 0.0
                vec[WET] = 1.0
                return StepResult(nxt)
            if heat > c["level_threshold"]:
                vec[WET] = 0.0
                return StepResult(nxt)
            refs = (state[self._single(state, self.box_type)][0],
                    state[self._single(state, self.shelf_type)][0])
            if any(abs(color - ref) < c["paint_tol"] for ref in refs):
                if vec[DIRT] <= 0.5 and vec[WET] <= 0.5:
                    vec[COLOR] = color
                return StepResult(nxt)
            if grip > c["grip_open"] and self._can_place(state, xyz):
                vec[[X, Y, Z]] = xyz
                vec[HELD] = 0.0
                nxt[robot][GRIP] = grip
            return StepResult(nxt)
        if grip >= c["grip_closed"]:
            return StepResult(nxt)
        lid = self._single(state, self.lid_type)
        if np.linalg.norm(np.asarray(c["lid_pose"]) - xyz) < c["pick_tol"]:
            nxt[lid][0] = 1.0
            return StepResult(nxt)
        target = self._nearest_widget(state, xyz)
        tol = c["grasp_tol"]
        if target is not None and (abs(rot) < tol or abs(rot - 1.0) < tol):
            nxt[target][HELD] = 1.0
            nxt[robot][ROT] = rot
            nxt[robot][GRIP] = grip
        return StepResult(nxt)

    def _nearest_widget(self, state: State, xyz: np.ndarray) -> Optional[Object]:
        best, best_dist = None, self.constants["pick_tol"]
        for obj in state.objects_of_type(self.widget_type):
            dist = float(np.linalg.norm(state[obj][:3] - xyz))
            if dist < best_dist:
                best, best_dist = obj, dist
        return best

    def _can_place(self, state: State, xyz: np.ndarray) -> bool:
        c = self.constants
        x = xyz[0]
        ylo, yhi = c["y_range"]
        if not ylo <= xyz[1] <= yhi:
            return False
        side = self._robot_vec(state)[ROT] >= 0.5
        if c["table_x"][0] <= x <= c["table_x"][1]:
            return True
        if c["box_x"][0] <= x <= c["box_x"][1]:
            lid_open = state[self._single(state, self.lid_type)][0]
            lid_edge = c["box_x"][0] + (1.0 - lid_open) * c["lid_span"]
            return not side and x >= lid_edge
        if c["shelf_x"][0] <= x <= c["shelf_x"][1]:
            return side
        return False

    def sample_prior(self, state: State, rng: np.random.Generator) -> np.ndarray:
        c = self.constants
        null = c["neutral_pose"]
        held = self._held(state)
        if held is None:
            widgets = state.objects_of_type(self.widget_type)
            choice = rng.integers(len(widgets) + 1)
            if choice == len(widgets):
                xyz = np.asarray(c["lid_pose"], dtype=np.float64)
            else:
                xyz = state[widgets[choice]][:3]
            xyz = xyz + rng.uniform(-c["prior_pick_noise"], c["prior_pick_noise"], 3)
            rot = float(rng.integers(2)) + rng.uniform(-c["prior_rot_noise"],
                                                       c["prior_rot_noise"])
            return np.array([*xyz, rot, rng.uniform(0.0, 0.1), 0.0, 0.0, 0.0])
        kind = rng.integers(4)
        action = np.array([null, null, null, 0.0, 0.5, 0.0, 0.0, 0.0])
        if kind == 0:
            action[5] = rng.uniform(0.6, 1.0)
        elif kind == 1:
            action[6] = rng.uniform(0.6, 1.0)
        elif kind == 2:
            ref_type = self.box_type if rng.random() < 0.5 else self.shelf_type
            ref = state[self._single(state, ref_type)][0]
            noise = c["prior_paint_noise"]
            action[7] = ref + rng.uniform(-noise, noise)
        else:
            bounds = (c["table_x"], c["box_x"], c["shelf_x"])[rng.integers(3)]
            action[0] = rng.uniform(*bounds)
            action[1] = rng.uniform(*c["y_range"])
            action[2] = 0.0
            action[4] = rng.uniform(0.9, 1.0)
        return action

    def _sample_task(self, split: TaskSplit, rng: np.random.Generator) -> Task:
        c = self.constants
        n = int(rng.choice(split.counts["widgets"]))
        data: Dict[Object, np.ndarray] = {}
        poses: List[np.ndarray] = []
        lo, hi = c["table_x"]
        ylo, yhi = c["y_range"]
        while len(poses) < n:
            p = np.array([rng.uniform(lo + 0.05, hi - 0.05),
                          rng.uniform(ylo + 0.05, yhi - 0.05)])
            if all(np.linalg.norm(p - q) >= c["widget_separation"] for q in poses):
                poses.append(p)
        widgets = [Object(f"widget{i}", self.widget_type) for i in range(n)]
        for obj, p in zip(widgets, poses):
            wet = float(rng.random() < 0.5)
            dirt = float(rng.random() < 0.5)
            data[obj] = np.array([p[0], p[1], 0.0, 0.0, wet, dirt, 0.0])
        data[Object("box", self.box_type)] = np.array(
            [rng.uniform(*c["box_color_range"])])
        data[Object("lid", self.lid_type)] = np.array(
            [rng.uniform(*c["lid_open_range"])])
        data[Object("shelf", self.shelf_type)] = np.array(
            [rng.uniform(*c["shelf_color_range"])])
        data[Object("robot", self.robot_type)] = np.array([0.0, 1.0])
        goal = set()
        for obj in widgets:
            if rng.random() < 0.5:
                goal |= {self.pred("IsBoxColor")([obj]), self.pred("InBox")([obj])}
            else:
                goal |= {self.pred("IsShelfColor")([obj]), self.pred("InShelf")([obj])}
        return Task(State(data), frozenset(goal), split.horizon)
