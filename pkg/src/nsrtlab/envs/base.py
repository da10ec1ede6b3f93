"""Shared environment interface."""

from __future__ import annotations

import abc
import json
from dataclasses import dataclass, field
from typing import Any, Dict, FrozenSet, List, Optional, Sequence, Tuple

import numpy as np

from nsrtlab.relcore import GroundAtom, Object, ObjType, Predicate, State, abstract

SPLITS = ("train", "test_easy", "test_hard")
CONSTANTS_VERSION = 1


class InvalidAction(ValueError):
    """Raised for actions of the wrong shape or with non-finite entries."""


@dataclass(frozen=True)
class StepResult:
    """Outcome of one environment step: a next state or a failure."""
    state: Optional[State]
    failure_objects: FrozenSet[Object] = frozenset()

    def __post_init__(self) -> None:
        if (self.state is None) != bool(self.failure_objects):
            raise ValueError("failure_objects must be nonempty iff the step failed")

    @property
    def failed(self) -> bool:
        return self.state is None


@dataclass(frozen=True)
class Task:
    init: State
    goal: FrozenSet[GroundAtom]
    horizon: int

    @property
    def objects(self) -> List[Object]:
        return self.init.objects


@dataclass(frozen=True)
class TaskSplit:
    """Object-count choices and horizon for one split of an environment."""
    name: str
    counts: Dict[str, Tuple[int, ...]]
    horizon: int


@dataclass
class Episode:
    states: List[State] = field(default_factory=list)
    actions: List[np.ndarray] = field(default_factory=list)
    solved: bool = False
    failed: bool = False
    failure_objects: FrozenSet[Object] = frozenset()


class Env(abc.ABC):
    """A deterministic object-oriented environment with a behavior prior."""

    name: str = ""
    action_dim: int = 0
    constants: Dict[str, Any] = {}

    def __init__(self) -> None:
        self.types: Tuple[ObjType, ...] = self._make_types()
        self.predicates: Tuple[Predicate, ...] = self._make_predicates()
        self.splits: Dict[str, TaskSplit] = self._make_splits()
        self._pred_by_name = {p.name: p for p in self.predicates}
        self._type_by_name = {t.name: t for t in self.types}

    # Subclass hooks.
    @abc.abstractmethod
    def _make_types(self) -> Tuple[ObjType, ...]:
        ...

    @abc.abstractmethod
    def _make_predicates(self) -> Tuple[Predicate, ...]:
        ...

    @abc.abstractmethod
    def _make_splits(self) -> Dict[str, TaskSplit]:
        ...

    @abc.abstractmethod
    def _transition(self, state: State, action: np.ndarray) -> StepResult:
        ...

    @abc.abstractmethod
    def sample_prior(self, state: State, rng: np.random.Generator) -> np.ndarray:
        """Draw an action from the behavior prior."""

    @abc.abstractmethod
    def _sample_task(self, split: TaskSplit, rng: np.random.Generator) -> Task:
        ...

    def pred(self, name: str) -> Predicate:
        return self._pred_by_name[name]

    def type(self, name: str) -> ObjType:
        return self._type_by_name[name]

    def step(self, state: State, action: Sequence[float]) -> StepResult:
        action = np.asarray(action, dtype=np.float64)
        if action.shape != (self.action_dim,):
            raise InvalidAction(f"{self.name} actions have {self.action_dim} "
                                f"dims, got shape {action.shape}")
        if not np.all(np.isfinite(action)):
            raise InvalidAction(f"non-finite action {action}")
        return self._transition(state, action)

    def abstract(self, state: State) -> frozenset:
        return abstract(state, self.predicates)

    def goal_holds(self, state: State, goal) -> bool:
        return goal_holds(state, goal, self.predicates)

    def generate_task(self, split: str, rng: np.random.Generator,
                      max_resamples: int = 1000) -> Task:
        """Sample a task whose goal does not already hold initially."""
        if split not in self.splits:
            raise ValueError(f"unknown split {split!r}; expected one of {SPLITS}")
        spec = self.splits[split]
        for _ in range(max_resamples):
            task = self._sample_task(spec, rng)
            if not self.goal_holds(task.init, task.goal):
                return task
        raise RuntimeError(f"{self.name}: could not sample an unsolved task")

    def run_episode(self, task: Task, policy, rng: np.random.Generator) -> Episode:
        """Run ``policy(state, rng)`` until solve, failure, or the horizon."""
        return self._rollout(task, lambda state: policy(state, rng))

    def execute_plan(self, task: Task, actions: Sequence[np.ndarray]) -> Episode:
        """Execute ``actions`` open-loop; stops early on solve or failure."""
        queue = list(actions)
        return self._rollout(task, lambda state: queue.pop(0) if queue else None)

    def _rollout(self, task: Task, next_action) -> Episode:
        ep = Episode(states=[task.init])
        state = task.init
        if self.goal_holds(state, task.goal):
            ep.solved = True
            return ep
        for _ in range(task.horizon):
            action = next_action(state)
            if action is None:
                break
            ep.actions.append(np.asarray(action, dtype=np.float64))
            result = self.step(state, action)
            if result.failed:
                ep.failed = True
                ep.failure_objects = result.failure_objects
                break
            state = result.state
            ep.states.append(state)
            if self.goal_holds(state, task.goal):
                ep.solved = True
                break
        return ep

    def constants_config(self) -> str:
        """The pinned dynamics constants as a versioned JSON document."""
        return json.dumps({"env": self.name, "version": CONSTANTS_VERSION,
                           "action_dim": self.action_dim,
                           "constants": self.constants,
                           "splits": {k: {"counts": v.counts, "horizon": v.horizon}
                                      for k, v in self.splits.items()}},
                          indent=2, sort_keys=True)



def goal_holds(state: State, goal, predicates=None) -> bool:
    """True iff every goal atom holds in ``state``."""
    del predicates  # atoms carry their own predicate
    return all(atom.holds(state) for atom in goal)
