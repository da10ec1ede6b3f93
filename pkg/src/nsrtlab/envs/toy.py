"""A tiny hand-encoded blocks vocabulary used to check symbolic learning.

States carry one attribute per unary predicate plus an ``id``/``below``
pair that encodes ``On``. No dynamics are defined; transitions are written
out by hand.
"""

from __future__ import annotations

from typing import Dict, Iterable, List, Tuple

import numpy as np

from nsrtlab.relcore import Object, ObjType, Predicate, State

UNARY = ("Holding", "OnTable", "IsClean", "IsDirty", "IsWet", "IsDry")
TOY_TYPE = ObjType("obj", ("id", "below") + tuple(u.lower() for u in UNARY))


def _unary(index: int):
    return lambda state, objs: state[objs[0]][index] > 0.5


def _on(state: State, objs) -> bool:
    top, bottom = state[objs[0]], state[objs[1]]
    return top[1] > 0 and top[1] == bottom[0]


TOY_PREDICATES: Tuple[Predicate, ...] = (
    Predicate("On", (TOY_TYPE, TOY_TYPE), _on),
    *(Predicate(name, (TOY_TYPE,), _unary(2 + i)) for i, name in enumerate(UNARY)),
)


def toy_object(index: int) -> Object:
    return Object(f"o{index}", TOY_TYPE)


def toy_state(objects: Iterable[int], on: Iterable[Tuple[int, int]] = (),
              **unary: Iterable[int]) -> State:
    """Build a state over ``o<i>`` objects where exactly the given atoms hold.

    ``unary`` maps predicate names to the object indices they hold for.
    """
    data: Dict[Object, np.ndarray] = {}
    for i in objects:
        vec = np.zeros(TOY_TYPE.dim)
        vec[0] = i
        data[toy_object(i)] = vec
    for top, bottom in on:
        data[toy_object(top)][1] = bottom
    for name, indices in unary.items():
        slot = 2 + UNARY.index(name)
        for i in indices:
            data[toy_object(i)][slot] = 1.0
    return State(data)


def toy_transitions() -> List[Tuple[State, np.ndarray, State]]:
    """Four transitions: two unstack-style picks and two table placements."""
    no_op = np.zeros(1)
    return [
        (toy_state([1, 2, 3], on=[(1, 2), (2, 3)]), no_op,
         toy_state([1, 2, 3], on=[(2, 3)], Holding=[1])),
        (toy_state([6, 7, 12, 13], on=[(6, 7), (12, 13)], IsClean=[6]), no_op,
         toy_state([6, 7, 12, 13], on=[(12, 13)], Holding=[6], IsClean=[6])),
        (toy_state([3, 7], Holding=[7], IsClean=[3], IsWet=[7]), no_op,
         toy_state([3, 7], OnTable=[7], IsClean=[3], IsWet=[7])),
        (toy_state([1, 4], Holding=[4], IsDirty=[1], IsDry=[4]), no_op,
         toy_state([1, 4], OnTable=[4], IsDirty=[1], IsDry=[4])),
    ]
