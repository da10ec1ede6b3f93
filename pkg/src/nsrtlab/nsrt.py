"""NSRTs: lifted operators with neural transition, sampler and classifier."""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import FrozenSet, Iterable, Iterator, Optional, Sequence, Tuple

import numpy as np

from nsrtlab import nn
from nsrtlab.relcore import (GroundAtom, LiftedAtom, Object, State, Substitution,
                             Variable, abstract, atoms_str, substitute)


@dataclass(frozen=True, eq=False)
class Transition:
    """An environment transition; ``next_state`` is None for a failure."""
    state: State
    action: np.ndarray
    next_state: Optional[State]
    failure_objects: FrozenSet[Object] = frozenset()

    @property
    def failed(self) -> bool:
        return self.next_state is None


def context(state: State, objects: Sequence[Object]) -> np.ndarray:
    """Concatenated attribute vectors of ``objects`` in order."""
    try:
        parts = [state[o] for o in objects]
    except KeyError as err:
        raise KeyError(f"object {err.args[0]} is not in the state") from None
    if not parts:
        return np.zeros(0)
    return np.concatenate(parts)


def scatter(state: State, objects: Sequence[Object], vec: np.ndarray) -> State:
    """Copy of ``state`` with ``vec`` written back over ``objects``."""
    out = state.copy()
    offset = 0
    for obj in objects:
        d = obj.type.dim
        out[obj][:] = vec[offset:offset + d]
        offset += d
    return out


# Neural components. Fitting lives in ``learn``; these only predict.

@dataclass(eq=False)
class TransitionModel:
    """Predicts next values of the changed context entries."""
    net: nn.Mlp
    x_norm: nn.Normalizer
    y_norm: nn.Normalizer

    def predict(self, ctx: np.ndarray, action: np.ndarray) -> np.ndarray:
        x = np.concatenate([ctx, action])[None, :]
        return self.y_norm.invert(self.net(self.x_norm(x)))[0]


@dataclass(eq=False)
class ActionSampler:
    """Diagonal Gaussian over actions conditioned on the context."""
    net: nn.Mlp
    x_norm: nn.Normalizer
    a_norm: nn.Normalizer

    def distribution(self, ctx: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        """Mean and variance in normalized action space."""
        out = self.net(self.x_norm(ctx[None, :]))[0]
        d = len(out) // 2
        return out[:d], nn.variance_from_raw(out[d:])

    def sample(self, ctx: np.ndarray, rng: np.random.Generator, n: int = 1,
               clip_std: Optional[float] = 1.0) -> np.ndarray:
        mean, var = self.distribution(ctx)
        draws = nn.gaussian_sample(np.tile(mean, (n, 1)), np.tile(var, (n, 1)),
                                   rng, clip_std)
        return self.a_norm.invert(draws)


@dataclass(eq=False)
class ApplicabilityClassifier:
    net: nn.Mlp
    x_norm: nn.Normalizer

    def proba(self, ctx: np.ndarray, actions: np.ndarray) -> np.ndarray:
        actions = np.atleast_2d(actions)
        x = np.concatenate([np.tile(ctx, (len(actions), 1)), actions], axis=1)
        return nn.sigmoid(self.net(self.x_norm(x))[:, 0])


@dataclass(eq=False)
class NSRT:
    name: str
    parameters: Tuple[Variable, ...]
    preconditions: FrozenSet[LiftedAtom]
    add_effects: FrozenSet[LiftedAtom]
    delete_effects: FrozenSet[LiftedAtom]
    action_dim: int = 0
    changed_mask: Optional[np.ndarray] = None
    transition_model: Optional[TransitionModel] = None
    sampler: Optional[ActionSampler] = None
    classifier: Optional[ApplicabilityClassifier] = None

    def __post_init__(self) -> None:
        params = set(self.parameters)
        if len(params) != len(self.parameters):
            raise ValueError(f"{self.name}: repeated parameter")
        for atom in self.preconditions | self.add_effects | self.delete_effects:
            if not set(atom.args) <= params:
                raise ValueError(f"{self.name}: {atom} uses a non-parameter")
        if self.add_effects & self.delete_effects:
            raise ValueError(f"{self.name}: an atom is both added and deleted")
        if self.changed_mask is None:
            self.changed_mask = np.zeros(self.context_dim, dtype=bool)

    @property
    def context_dim(self) -> int:
        return sum(p.type.dim for p in self.parameters)

    def ground(self, objects: Sequence[Object]) -> "GroundNSRT":
        objects = tuple(objects)
        if len(objects) != len(self.parameters):
            raise ValueError(f"{self.name} takes {len(self.parameters)} objects")
        if len(set(objects)) != len(objects):
            raise ValueError(f"{self.name}: groundings must use distinct objects")
        for param, obj in zip(self.parameters, objects):
            if param.type != obj.type:
                raise ValueError(f"{self.name}: {obj} is not a {param.type}")
        return GroundNSRT(self, objects)

    def all_groundings(self, objects: Iterable[Object]) -> Iterator["GroundNSRT"]:
        by_type = {}
        for obj in sorted(objects):
            by_type.setdefault(obj.type, []).append(obj)
        choices = [by_type.get(p.type, []) for p in self.parameters]
        for combo in itertools.product(*choices):
            if len(set(combo)) == len(combo):
                yield GroundNSRT(self, combo)

    def describe(self) -> str:
        params = ", ".join(f"{p.name}:{p.type.name}" for p in self.parameters)
        return (f"{self.name}({params})\n"
                f"  pre: {atoms_str(self.preconditions)}\n"
                f"  add: {atoms_str(self.add_effects)}\n"
                f"  del: {atoms_str(self.delete_effects)}")


class GroundNSRT:
    """An NSRT with its parameters bound to distinct objects."""

    __slots__ = ("parent", "objects", "sigma", "preconditions", "add_effects",
                 "delete_effects", "_hash")

    def __init__(self, parent: NSRT, objects: Tuple[Object, ...]) -> None:
        self.parent = parent
        self.objects = tuple(objects)
        self.sigma: Substitution = dict(zip(parent.parameters, self.objects))
        self.preconditions = _ground(parent.preconditions, self.sigma)
        self.add_effects = _ground(parent.add_effects, self.sigma)
        self.delete_effects = _ground(parent.delete_effects, self.sigma)
        self._hash = hash((parent.name, self.objects))

    @property
    def name(self) -> str:
        return self.parent.name

    def __hash__(self) -> int:
        return self._hash

    def __eq__(self, other) -> bool:
        return (isinstance(other, GroundNSRT) and other.parent is self.parent
                and other.objects == self.objects)

    def __str__(self) -> str:
        return f"{self.parent.name}({','.join(o.name for o in self.objects)})"

    __repr__ = __str__


def _ground(atoms: FrozenSet[LiftedAtom], sigma: Substitution) -> FrozenSet[GroundAtom]:
    return frozenset(substitute(atoms, sigma)) if atoms else frozenset()


def applicable(g: GroundNSRT, s_abs: FrozenSet[GroundAtom]) -> bool:
    return g.preconditions <= s_abs


def abstract_step(s_abs: FrozenSet[GroundAtom], g: GroundNSRT) -> FrozenSet[GroundAtom]:
    """(s \\ E-) | E+ for an applicable ground NSRT."""
    if not applicable(g, s_abs):
        raise ValueError(f"{g} is not applicable")
    return (s_abs - g.delete_effects) | g.add_effects


def covers(g: GroundNSRT, tau: Transition, predicates) -> bool:
    if tau.failed:
        raise ValueError("failure transitions cannot be covered")
    before = abstract(tau.state, predicates)
    after = abstract(tau.next_state, predicates)
    return (applicable(g, before) and g.add_effects == after - before
            and g.delete_effects == before - after)


def predict_next(state: State, g: GroundNSRT, action: np.ndarray) -> State:
    """Imagined next state: changed attributes come from the transition model."""
    mask = g.parent.changed_mask
    model = g.parent.transition_model
    if model is None or not mask.any():
        return state.copy()
    ctx = context(state, g.objects)
    nxt = ctx.copy()
    nxt[mask] = model.predict(ctx, np.asarray(action, dtype=np.float64))
    return scatter(state, g.objects, nxt)
