"""Environment registry."""

from __future__ import annotations

from typing import Dict, Type

from nsrtlab.envs.base import (SPLITS, Env, Episode, InvalidAction, StepResult,
                               Task, TaskSplit, goal_holds)
from nsrtlab.envs.blocks import Blocks
from nsrtlab.envs.kitchen import Kitchen
from nsrtlab.envs.painting import Painting
from nsrtlab.envs.pickplace1d import PickPlace1D

ENVS: Dict[str, Type[Env]] = {
    "pickplace1d": PickPlace1D,
    "kitchen": Kitchen,
    "blocks": Blocks,
    "painting": Painting,
}


def make_env(name: str) -> Env:
    try:
        return ENVS[name]()
    except KeyError:
        raise ValueError(f"unknown environment {name!r}; "
                         f"expected one of {sorted(ENVS)}") from None


__all__ = ["ENVS", "SPLITS", "Env", "Episode", "InvalidAction", "StepResult",
           "Task", "TaskSplit", "goal_holds", "make_env", "Blocks", "Kitchen",
           "Painting", "PickPlace1D"]
