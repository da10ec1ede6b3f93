import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from nsrtlab.relcore import (GroundAtom, Object, ObjType, Predicate, State, Variable,
                             abstract, atoms_str, effect_objects, invert, parse_atom,
                             substitute, unify)

A = ObjType("a", ("v",))
B = ObjType("b", ("v",))
P = Predicate("P", (A,), lambda s, o: s[o[0]][0] > 0)
Q = Predicate("Q", (A, B), lambda s, o: s[o[0]][0] > s[o[1]][0])
R = Predicate("R", (B,), lambda s, o: s[o[0]][0] > 0)


def _objs(n, typ, prefix):
    return [Object(f"{prefix}{i}", typ) for i in range(n)]


def test_object_identity_and_order():
    x, y = Object("x", A), Object("x", A)
    assert x == y and hash(x) == hash(y)
    assert Object("x", B) != x
    assert Variable("?x", A).is_variable and not x.is_variable
    with pytest.raises(ValueError):
        Variable("x", A)


def test_state_copy_is_deep():
    o = Object("o", A)
    s = State({o: [1.0]})
    c = s.copy()
    c[o][0] = 2.0
    assert s[o][0] == 1.0
    assert s != c and s == State({o: [1.0]})


def test_abstract_and_atoms_str():
    a0, b0 = Object("a0", A), Object("b0", B)
    s = State({a0: [2.0], b0: [1.0]})
    atoms = abstract(s, [P, Q, R])
    assert atoms == {P([a0]), Q([a0, b0]), R([b0])}
    assert atoms_str(atoms) == "{P(a0), Q(a0,b0), R(b0)}"


def test_parse_atom_round_trip():
    a0, b0 = Object("a0", A), Object("b0", B)
    atom = Q([a0, b0])
    preds = {"Q": [Q], "P": [P]}
    assert parse_atom(str(atom), preds, {"a0": a0, "b0": b0}) == atom
    with pytest.raises(ValueError):
        parse_atom("Q(b0,a0)", preds, {"a0": a0, "b0": b0})


def test_substitute_lifts_and_grounds():
    x, y = Variable("?x", A), Variable("?y", B)
    a0, b0 = Object("a0", A), Object("b0", B)
    lifted = {Q([x, y])}
    ground = substitute(lifted, {x: a0, y: b0})
    assert ground == {Q([a0, b0])}
    assert all(isinstance(g, GroundAtom) for g in ground)
    assert substitute(ground, invert({x: a0, y: b0})) == frozenset(lifted)


def test_unify_worked_mapping():
    toy = ObjType("obj", ("v",))
    on = Predicate("On", (toy, toy), lambda s, o: True)
    holding = Predicate("Holding", (toy,), lambda s, o: True)
    o1, o2, o6, o7 = (Object(n, toy) for n in ("o1", "o2", "o6", "o7"))
    sigma = unify(({holding([o1])}, {on([o1, o2])}), ({holding([o6])}, {on([o6, o7])}))
    assert sigma == {o1: o6, o2: o7}


def test_unify_rejects_type_mismatch_and_shape():
    a0 = Object("a0", A)
    b0 = Object("b0", B)
    assert unify(({P([a0])}, set()), ({R([b0])}, set())) is None
    assert unify(({P([a0])}, set()), (set(), {P([a0])})) is None


# Random effect pairs over a small vocabulary.

@st.composite
def effect_pairs(draw):
    a_objs = _objs(draw(st.integers(1, 3)), A, "a")
    b_objs = _objs(draw(st.integers(1, 3)), B, "b")
    pool = [P([o]) for o in a_objs] + [R([o]) for o in b_objs] + \
        [Q([x, y]) for x in a_objs for y in b_objs]
    chosen = draw(st.lists(st.sampled_from(pool), unique=True, max_size=5))
    split = draw(st.integers(0, len(chosen)))
    return frozenset(chosen[:split]), frozenset(chosen[split:])


def _rename(effects, perm_seed):
    objs = effect_objects(effects)
    rng = np.random.default_rng(perm_seed)
    by_type = {}
    for o in objs:
        by_type.setdefault(o.type, []).append(o)
    mapping = {}
    for typ, group in by_type.items():
        fresh = [Object(f"z{typ.name}{i}", typ) for i in rng.permutation(len(group) + 2)]
        mapping.update(zip(group, fresh))
    return (frozenset(substitute(effects[0], mapping)),
            frozenset(substitute(effects[1], mapping))), mapping


@settings(max_examples=200, deadline=None)
@given(effect_pairs())
def test_unify_identity(effects):
    sigma = unify(effects, effects)
    assert sigma is not None
    assert substitute(effects[0], sigma) == effects[0]
    assert substitute(effects[1], sigma) == effects[1]


@settings(max_examples=200, deadline=None)
@given(effect_pairs(), st.integers(0, 1000))
def test_unify_symmetry_under_renaming(effects, perm_seed):
    renamed, _ = _rename(effects, perm_seed)
    fwd = unify(effects, renamed)
    back = unify(renamed, effects)
    assert fwd is not None and back is not None
    assert substitute(effects[0], fwd) == renamed[0]
    assert substitute(effects[1], fwd) == renamed[1]
    assert substitute(renamed[0], back) == effects[0]
    assert substitute(renamed[1], back) == effects[1]


@settings(max_examples=200, deadline=None)
@given(effect_pairs(), effect_pairs())
def test_unify_is_symmetric_in_existence(e1, e2):
    assert (unify(e1, e2) is None) == (unify(e2, e1) is None)
