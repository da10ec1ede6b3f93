"""Relational vocabulary: types, objects, predicates, atoms, states.

Everything here is immutable after construction except ``State``, whose
attribute arrays are owned by the state and copied on ``State.copy``.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import (Callable, Dict, FrozenSet, Iterable, Iterator, List,
                    Mapping, Optional, Sequence, Set, Tuple, Union)

import numpy as np


@dataclass(frozen=True, order=True)
class ObjType:
    """An object type with named real-valued attributes."""
    name: str
    feature_names: Tuple[str, ...] = field(default=())

    @property
    def dim(self) -> int:
        return len(self.feature_names)

    def __str__(self) -> str:
        return self.name

    def __repr__(self) -> str:
        return f"ObjType({self.name})"


class Object:
    """A typed object. Variables are objects whose name starts with '?'."""

    __slots__ = ("name", "type", "_hash")

    def __init__(self, name: str, type: ObjType) -> None:  # pylint: disable=redefined-builtin
        object.__setattr__(self, "name", name)
        object.__setattr__(self, "type", type)
        object.__setattr__(self, "_hash", hash((name, type.name)))

    def __setattr__(self, key, value):
        raise AttributeError("Object is immutable")

    def __hash__(self) -> int:
        return self._hash

    def __eq__(self, other) -> bool:
        if self is other:
            return True
        return (isinstance(other, Object) and self.name == other.name
                and self.type == other.type)

    def __lt__(self, other: "Object") -> bool:
        return (self.name, self.type.name) < (other.name, other.type.name)

    def __reduce__(self):
        return (type(self), (self.name, self.type))

    @property
    def is_variable(self) -> bool:
        return self.name.startswith("?")

    def __str__(self) -> str:
        return self.name

    def __repr__(self) -> str:
        return f"{self.name}:{self.type.name}"


class Variable(Object):
    """A typed placeholder, e.g. ``?x:block``."""

    __slots__ = ()

    def __init__(self, name: str, type: ObjType) -> None:  # pylint: disable=redefined-builtin
        if not name.startswith("?"):
            raise ValueError(f"variable names start with '?': {name}")
        super().__init__(name, type)


@dataclass(frozen=True, eq=False)
class Predicate:
    """A named boolean relation over typed arguments."""
    name: str
    types: Tuple[ObjType, ...]
    holds: Callable[["State", Sequence[Object]], bool] = field(repr=False)

    def __post_init__(self) -> None:
        object.__setattr__(self, "_key", (self.name, self.types))
        object.__setattr__(self, "_hash", hash(self._key))

    @property
    def arity(self) -> int:
        return len(self.types)

    def __hash__(self) -> int:
        return self._hash  # type: ignore[attr-defined]

    def __eq__(self, other) -> bool:
        return (isinstance(other, Predicate)
                and self._key == other._key)  # type: ignore[attr-defined]

    def __lt__(self, other: "Predicate") -> bool:
        return (self.name, [t.name for t in self.types]) < \
            (other.name, [t.name for t in other.types])

    def __call__(self, args: Sequence[Object]) -> "_Atom":
        if all(isinstance(a, Variable) for a in args) and args:
            return LiftedAtom(self, args)
        return GroundAtom(self, args)

    def evaluate(self, state: "State", objects: Sequence[Object]) -> bool:
        return bool(self.holds(state, objects))

    def __str__(self) -> str:
        return self.name

    def __repr__(self) -> str:
        return f"Predicate({self.name})"


class _Atom:
    __slots__ = ("predicate", "args", "_hash", "_key")

    def __init__(self, predicate: Predicate, args: Sequence[Object]) -> None:
        args = tuple(args)
        if len(args) != predicate.arity:
            raise ValueError(
                f"{predicate.name} expects {predicate.arity} args, got {len(args)}")
        for arg, typ in zip(args, predicate.types):
            if arg.type != typ:
                raise TypeError(f"{predicate.name}: {arg!r} is not a {typ.name}")
        object.__setattr__(self, "predicate", predicate)
        object.__setattr__(self, "args", args)
        key = (predicate.name, tuple(a.name for a in args))
        object.__setattr__(self, "_key", key)
        object.__setattr__(self, "_hash", hash((type(self).__name__, key)))

    def __setattr__(self, key, value):
        raise AttributeError("atoms are immutable")

    def __hash__(self) -> int:
        return self._hash

    def __eq__(self, other) -> bool:
        return (type(self) is type(other) and self._key == other._key
                and self.predicate == other.predicate)

    def __lt__(self, other: "_Atom") -> bool:
        return self._key < other._key

    def __reduce__(self):
        return (type(self), (self.predicate, self.args))

    def __str__(self) -> str:
        return f"{self.predicate.name}({','.join(a.name for a in self.args)})"

    __repr__ = __str__

    @property
    def objects(self) -> Tuple[Object, ...]:
        return self.args


class LiftedAtom(_Atom):
    """A predicate applied to variables."""
    __slots__ = ()

    @property
    def variables(self) -> Tuple[Object, ...]:
        return self.args

    def ground(self, sub: Mapping[Object, Object]) -> "GroundAtom":
        return GroundAtom(self.predicate, [sub[v] for v in self.args])


class GroundAtom(_Atom):
    """A predicate applied to objects."""
    __slots__ = ()

    def holds(self, state: "State") -> bool:
        return self.predicate.evaluate(state, self.args)

    def lift(self, sub: Mapping[Object, Object]) -> LiftedAtom:
        return LiftedAtom(self.predicate, [sub[o] for o in self.args])


Atom = Union[LiftedAtom, GroundAtom]
Substitution = Dict[Object, Object]
EffectPair = Tuple[FrozenSet[GroundAtom], FrozenSet[GroundAtom]]


class State:
    """Mapping from objects to attribute vectors."""

    __slots__ = ("data",)

    def __init__(self, data: Mapping[Object, Union[Sequence[float], np.ndarray]]) -> None:
        self.data: Dict[Object, np.ndarray] = {}
        for obj, vec in data.items():
            arr = np.array(vec, dtype=np.float64).reshape(-1)
            if arr.shape[0] != obj.type.dim:
                raise ValueError(f"{obj!r}: expected {obj.type.dim} attributes, "
                                 f"got {arr.shape[0]}")
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"{obj!r}: non-finite attribute values")
            self.data[obj] = arr

    def __getitem__(self, obj: Object) -> np.ndarray:
        return self.data[obj]

    def __contains__(self, obj: Object) -> bool:
        return obj in self.data

    def __iter__(self) -> Iterator[Object]:
        return iter(sorted(self.data))

    def __len__(self) -> int:
        return len(self.data)

    def get(self, obj: Object, feature: str) -> float:
        return float(self.data[obj][obj.type.feature_names.index(feature)])

    def set(self, obj: Object, feature: str, value: float) -> None:
        self.data[obj][obj.type.feature_names.index(feature)] = value

    @property
    def objects(self) -> List[Object]:
        return sorted(self.data)

    def objects_of_type(self, typ: ObjType) -> List[Object]:
        return sorted(o for o in self.data if o.type == typ)

    def copy(self) -> "State":
        new = State.__new__(State)
        new.data = {o: v.copy() for o, v in self.data.items()}
        return new

    def allclose(self, other: "State", atol: float = 1e-9) -> bool:
        if set(self.data) != set(other.data):
            return False
        return all(np.allclose(self.data[o], other.data[o], atol=atol, rtol=0)
                   for o in self.data)

    def __eq__(self, other) -> bool:
        if not isinstance(other, State) or set(self.data) != set(other.data):
            return False
        return all(np.array_equal(self.data[o], other.data[o]) for o in self.data)

    def __repr__(self) -> str:
        body = ", ".join(f"{o.name}: {np.round(self.data[o], 4).tolist()}"
                         for o in self.objects)
        return f"State({body})"

    def renamed(self, mapping: Mapping[Object, Object]) -> "State":
        """Return a copy with objects renamed through ``mapping``."""
        return State({mapping.get(o, o): v.copy() for o, v in self.data.items()})


def typed_tuples(objects: Sequence[Object], types: Sequence[ObjType]
                 ) -> Iterator[Tuple[Object, ...]]:
    """All tuples of objects matching ``types`` positionally (repeats allowed)."""
    by_type: Dict[ObjType, List[Object]] = {}
    for obj in sorted(objects):
        by_type.setdefault(obj.type, []).append(obj)
    return itertools.product(*[by_type.get(t, []) for t in types])


def abstract(state: State, predicates: Iterable[Predicate]) -> FrozenSet[GroundAtom]:
    """Return every ground atom that holds in ``state``."""
    atoms: Set[GroundAtom] = set()
    objects = state.objects
    for pred in predicates:
        for args in typed_tuples(objects, pred.types):
            if pred.holds(state, args):
                atoms.add(GroundAtom(pred, args))
    return frozenset(atoms)


def sorted_atoms(atoms: Iterable[_Atom]) -> List[_Atom]:
    return sorted(atoms, key=lambda a: a._key)  # pylint: disable=protected-access


def atoms_str(atoms: Iterable[_Atom]) -> str:
    return "{" + ", ".join(str(a) for a in sorted_atoms(atoms)) + "}"


def substitute(atoms: Iterable[_Atom], sigma: Mapping[Object, Object]) -> FrozenSet[_Atom]:
    """Replace every argument through ``sigma``.

    Results are ground atoms when every image is a non-variable object and
    lifted atoms when every image is a variable.
    """
    out = set()
    for atom in atoms:
        try:
            args = [sigma[a] for a in atom.args]
        except KeyError as err:
            raise ValueError(f"substitution does not cover {err.args[0]!r} "
                             f"in {atom}") from None
        if args and all(isinstance(a, Variable) for a in args):
            out.add(LiftedAtom(atom.predicate, args))
        else:
            out.add(GroundAtom(atom.predicate, args))
    return frozenset(out)


def invert(sigma: Mapping[Object, Object]) -> Substitution:
    inv = {v: k for k, v in sigma.items()}
    if len(inv) != len(sigma):
        raise ValueError("substitution is not injective")
    return inv


def effect_objects(effects: Tuple[Iterable[_Atom], Iterable[_Atom]]) -> List[Object]:
    """Objects of an (add, delete) pair in canonical first-appearance order.

    Add atoms come first, then delete atoms, each sorted canonically.
    """
    seen: Dict[Object, None] = {}
    for group in effects:
        for atom in sorted_atoms(group):
            for obj in atom.args:
                seen.setdefault(obj, None)
    return list(seen)


def _signature(atoms: Iterable[_Atom]) -> List[Tuple[str, Tuple[str, ...]]]:
    return sorted((a.predicate.name, tuple(t.name for t in a.predicate.types))
                  for a in atoms)


def unify(effects_a: Tuple[Iterable[_Atom], Iterable[_Atom]],
          effects_b: Tuple[Iterable[_Atom], Iterable[_Atom]]
          ) -> Optional[Substitution]:
    """Find a type-preserving bijection mapping ``effects_a`` onto ``effects_b``.

    Returns a dict from objects of ``effects_a`` to objects of ``effects_b``
    with ``substitute(add_a) == add_b`` and ``substitute(del_a) == del_b``,
    or None. Objects are bound in canonical first-appearance order, and
    candidates are tried in sorted order, so the first unifier found is
    deterministic.
    """
    add_a, del_a = frozenset(effects_a[0]), frozenset(effects_a[1])
    add_b, del_b = frozenset(effects_b[0]), frozenset(effects_b[1])
    if len(add_a) != len(add_b) or len(del_a) != len(del_b):
        return None
    if _signature(add_a) != _signature(add_b) or _signature(del_a) != _signature(del_b):
        return None
    objs_a = effect_objects((add_a, del_a))
    objs_b = effect_objects((add_b, del_b))
    if len(objs_a) != len(objs_b):
        return None
    if sorted(o.type.name for o in objs_a) != sorted(o.type.name for o in objs_b):
        return None

    # Index target atoms by (group, predicate, position, object) for pruning.
    groups_a = ((0, add_a), (1, del_a))
    target_sets = (add_b, del_b)
    allowed: Dict[Object, Set[Object]] = {}
    for obj in objs_a:
        allowed[obj] = {o for o in objs_b if o.type == obj.type}
    for gi, atoms in groups_a:
        for atom in atoms:
            for pos, obj in enumerate(atom.args):
                cands = {b.args[pos] for b in target_sets[gi]
                         if b.predicate == atom.predicate}
                allowed[obj] &= cands
    if any(not c for c in allowed.values()):
        return None

    # Atoms become checkable once all of their arguments are bound.
    order = {o: i for i, o in enumerate(objs_a)}
    checks: Dict[Object, List[Tuple[int, _Atom]]] = {o: [] for o in objs_a}
    for gi, atoms in groups_a:
        for atom in atoms:
            if atom.args:
                last = max(atom.args, key=lambda o: order[o])
                checks[last].append((gi, atom))
            elif atom not in target_sets[gi]:
                return None
    sigma: Substitution = {}
    used: Set[Object] = set()

    def search(i: int) -> bool:
        if i == len(objs_a):
            return True
        obj = objs_a[i]
        for cand in sorted(allowed[obj]):
            if cand in used:
                continue
            sigma[obj] = cand
            ok = all(type(atom)(atom.predicate, [sigma[x] for x in atom.args])
                     in target_sets[gi] for gi, atom in checks[obj])
            if ok:
                used.add(cand)
                if search(i + 1):
                    return True
                used.discard(cand)
            del sigma[obj]
        return False

    if search(0):
        return dict(sigma)
    return None


def parse_atom(text: str, predicates: Mapping[str, Sequence[Predicate]],
               objects: Mapping[str, Object]) -> _Atom:
    """Parse the canonical ``Pred(a,b)`` syntax."""
    text = text.strip()
    name, _, rest = text.partition("(")
    if not rest.endswith(")"):
        raise ValueError(f"malformed atom: {text!r}")
    arg_names = [a.strip() for a in rest[:-1].split(",") if a.strip()]
    args = [objects[a] for a in arg_names]
    types = tuple(a.type for a in args)
    for pred in predicates.get(name, ()):
        if pred.types == types:
            return pred(args) if args else GroundAtom(pred, args)
    raise ValueError(f"no predicate {name} over {[t.name for t in types]}")
