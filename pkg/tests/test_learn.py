import numpy as np
import pytest

from nsrtlab import harness
from nsrtlab.envs import make_env
from nsrtlab.envs.toy import TOY_PREDICATES, UNARY, toy_object, toy_state, toy_transitions
from nsrtlab.learn import (LearnConfig, VariableNamer, build_negatives,
                           build_regression_set, changed_mask, eff, learn_nsrts,
                           learn_symbolic, partition_data, project, ref, sample_action)
from nsrtlab.nsrt import NSRT, Transition, abstract_step, context, covers, scatter
from nsrtlab.relcore import abstract, atoms_str, unify

PRED = {p.name: p for p in TOY_PREDICATES}


def o(i):
    return toy_object(i)


def on(a, b):
    return PRED["On"]([o(a), o(b)])


def unary(name, i):
    return PRED[name]([o(i)])


@pytest.fixture
def toy_data():
    return [Transition(s, a, s2) for s, a, s2 in toy_transitions()]


def test_eff_on_toy_data(toy_data):
    assert eff(toy_data[0], TOY_PREDICATES) == ({unary("Holding", 1)}, {on(1, 2)})
    assert eff(toy_data[2], TOY_PREDICATES) == ({unary("OnTable", 7)},
                                                {unary("Holding", 7)})
    same = Transition(toy_data[0].state, toy_data[0].action, toy_data[0].state)
    assert eff(same, TOY_PREDICATES) == (frozenset(), frozenset())


def test_ref_and_project(toy_data):
    assert ref(eff(toy_data[0], TOY_PREDICATES)) == {o(1), o(2)}
    assert ref(eff(toy_data[3], TOY_PREDICATES)) == {o(4)}
    before = abstract(toy_data[1].state, TOY_PREDICATES)
    assert project(before, {o(6), o(7)}) == {on(6, 7), unary("IsClean", 6)}
    assert project(before, set()) == frozenset()
    assert project(before, {o(i) for i in (6, 7, 12, 13)}) == before


def test_toy_data_partitions_and_operators(toy_data):
    parts = partition_data(toy_data, TOY_PREDICATES)
    assert [len(p.members) for p in parts] == [2, 2]
    namer = VariableNamer()
    described = [NSRT("Op", *learn_symbolic(p, namer)).describe() for p in parts]
    assert described[0] == ("Op(?x:obj, ?y:obj)\n  pre: {On(?x,?y)}\n"
                            "  add: {Holding(?x)}\n  del: {On(?x,?y)}")
    assert described[1] == ("Op(?z:obj)\n  pre: {Holding(?z)}\n"
                            "  add: {OnTable(?z)}\n  del: {Holding(?z)}")


def test_partition_edge_cases(toy_data):
    assert partition_data([], TOY_PREDICATES) == []
    with pytest.raises(ValueError):
        partition_data([Transition(toy_data[0].state, np.zeros(1), None)],
                       TOY_PREDICATES)
    # Distinct predicates never unify: three singleton partitions.
    flips = [Transition(toy_state([1]), np.zeros(1), toy_state([1], **{name: [1]}))
             for name in ("IsClean", "IsWet", "IsDry")]
    assert [len(p.members) for p in partition_data(flips, TOY_PREDICATES)] == [1, 1, 1]


def test_singleton_partition_preconditions_are_projected_state(toy_data):
    part = partition_data(toy_data[:1], TOY_PREDICATES)[0]
    params, pre, _, _ = learn_symbolic(part)
    x, y = params
    assert atoms_str(pre) == "{On(?x,?y)}"


def _random_toy_state(rng, ids):
    perm = list(rng.permutation(ids))
    on_pairs = [(perm[i], perm[i + 1]) for i in range(len(perm) - 1) if rng.random() < 0.4]
    flags = {name: [i for i in ids if rng.random() < 0.3] for name in UNARY}
    return toy_state(ids, on=on_pairs, **flags)


def test_partition_equivalence_classes():
    rng = np.random.default_rng(7)
    data = []
    for _ in range(1000):
        ids = [int(i) for i in rng.choice(np.arange(1, 9), size=3, replace=False)]
        before = _random_toy_state(rng, ids)
        after = before.copy()
        # Flip one or two unary attributes so the effects stay small.
        for _ in range(int(rng.integers(1, 3))):
            obj = o(ids[rng.integers(3)])
            slot = 2 + int(rng.integers(len(UNARY)))
            after[obj][slot] = 1.0 - after[obj][slot]
        data.append(Transition(before, np.zeros(1), after))
    parts = partition_data(data, TOY_PREDICATES)
    assert sum(len(p.members) for p in parts) == len(data)
    label = {}
    for pi, part in enumerate(parts):
        for m in part.members:
            assert unify(part.key, eff(m.transition, TOY_PREDICATES)) is not None
            label[id(m.transition)] = pi
    for i, p in enumerate(parts):
        for q in parts[i + 1:]:
            assert unify(p.key, q.key) is None
    pairs = rng.integers(len(data), size=(3000, 2))
    for i, j in pairs:
        same = label[id(data[i])] == label[id(data[j])]
        unifiable = unify(eff(data[i], TOY_PREDICATES), eff(data[j], TOY_PREDICATES))
        assert same == (unifiable is not None)


@pytest.fixture(scope="module", params=["pickplace1d", "blocks", "kitchen", "painting"])
def symbolic_data(request):
    env = make_env(request.param)
    data = harness.collect_data(env, 30, seed=3)
    nsrts, parts = learn_nsrts(data.transitions, env.predicates, env.action_dim,
                               LearnConfig(), np.random.default_rng(0), train_nets=False)
    return env, data, nsrts, parts


def test_coverage_exclusivity_and_abstract_consistency(symbolic_data):
    env, data, nsrts, parts = symbolic_data
    effect_parts = [p for p in parts if not p.is_empty_effect]
    assert len(effect_parts) == len(nsrts)
    for nsrt, part in zip(nsrts, effect_parts):
        for member in part.members:
            tau = member.transition
            g = nsrt.ground([member.sigma[p] for p in nsrt.parameters])
            assert covers(g, tau, env.predicates)
            before = abstract(tau.state, env.predicates)
            assert abstract_step(before, g) == abstract(tau.next_state, env.predicates)
            after = abstract(tau.next_state, env.predicates)
            matching = {n.name for n in nsrts for h in n.all_groundings(tau.state.objects)
                        if h.preconditions <= before
                        and h.add_effects == after - before
                        and h.delete_effects == before - after}
            assert matching == {nsrt.name}


def test_changed_mask_and_regression_set(symbolic_data):
    env, data, nsrts, parts = symbolic_data
    effect_parts = [p for p in parts if not p.is_empty_effect]
    for nsrt, part in zip(nsrts, effect_parts):
        X, A, Y = build_regression_set(part, nsrt.parameters)
        assert len(X) == len(part.members) == len(A) == len(Y)
        assert X.shape[1] == nsrt.context_dim
        mask = changed_mask(part, nsrt.parameters)
        assert np.allclose(X[:, ~mask], Y[:, ~mask])
        # Gathered next contexts scattered back reproduce the next state.
        for m, y in zip(part.members, Y):
            objs = [m.sigma[p] for p in nsrt.parameters]
            back = scatter(m.transition.state, objs, y)
            for obj in objs:
                assert np.array_equal(back[obj], m.transition.next_state[obj])


def test_negatives_are_context_action_rows(symbolic_data):
    env, data, nsrts, parts = symbolic_data
    learned = iter(nsrts)
    params_list = [() if p.is_empty_effect else next(learned).parameters for p in parts]
    index = next(i for i, p in enumerate(parts) if not p.is_empty_effect)
    rows = build_negatives(index, parts, params_list, np.random.default_rng(0), 20)
    width = sum(v.type.dim for v in params_list[index]) + env.action_dim
    assert rows.shape == (20, width)


def test_sample_action_without_classifier_returns_first_draw():
    env = make_env("pickplace1d")
    data = harness.collect_data(env, 5, seed=0)
    config = LearnConfig(epoch_scale=0.002, transition_epoch_scale=0.002)
    nsrts, _ = learn_nsrts(data.transitions, env.predicates, env.action_dim, config,
                           np.random.default_rng(0))
    nsrt = nsrts[0]
    nsrt.classifier = None
    ctx = np.zeros(nsrt.context_dim)
    first = nsrt.sampler.sample(ctx, np.random.default_rng(5), n=10)[0]
    got = sample_action(nsrt, ctx, np.random.default_rng(5))
    assert np.array_equal(first, got)


def test_context_rejects_missing_object():
    s = toy_state([1])
    with pytest.raises(KeyError):
        context(s, [o(2)])
