"""Bilevel planning with NSRTs, plus the baseline planners.

Outer loop: A* over ground NSRTs guided by h_add. Inner loop: sample
actions and imagine their outcomes with the learned networks, abandoning a
skeleton as soon as the imagined abstract state leaves the expected one.
Planners return an action list or None and never touch the real
environment, except for the baselines that are defined by doing so.
"""

from __future__ import annotations

import copy
import heapq
import itertools
import time
from dataclasses import dataclass
from typing import (Callable, Dict, FrozenSet, Iterator, List, Optional, Sequence,
                    Set)

import numpy as np

from nsrtlab.envs.base import Env, Task
from nsrtlab.learn import FailurePredictor, sample_action
from nsrtlab.nsrt import NSRT, GroundNSRT, context, predict_next
from nsrtlab.relcore import GroundAtom, Object, ObjType, Predicate, State, abstract

INF = float("inf")
_BIG = 1e12   # finite stand-in for infinity inside the array heuristic

METHODS = ("ours", "b1", "b2", "b3", "b5", "b6", "b7")


@dataclass
class PlannerConfig:
    n_trials: int = 1
    timeout: float = 3.0
    max_shooting_iters: int = 1000
    max_hillclimb_iters: int = 1000
    prior_tries: int = 30


class Timeout(Exception):
    pass


# NotCausesFailure predicates: never true in a real state.

_NCF: Dict[ObjType, Predicate] = {}


def ncf_predicate(typ: ObjType) -> Predicate:
    if typ not in _NCF:
        _NCF[typ] = Predicate("NotCausesFailure", (typ,), lambda state, objs: False)
    return _NCF[typ]


def ncf_atom(obj: Object) -> GroundAtom:
    return GroundAtom(ncf_predicate(obj.type), [obj])


def is_ncf(atom: GroundAtom) -> bool:
    return atom.predicate.name == "NotCausesFailure"


# Integer-indexed ground model.

class GroundModel:
    """Ground operators over integer atom ids for one task.

    ``extra_pre`` holds failure-driven preconditions per ground NSRT. Objects
    named by any of them ("suspects") get a NotCausesFailure add effect from
    every operator that takes them as a parameter; for other objects such
    atoms could never matter, so they are left out.
    """

    def __init__(self, ground_nsrts: Sequence[GroundNSRT], init: FrozenSet[GroundAtom],
                 goal: FrozenSet[GroundAtom],
                 extra_pre: Optional[Dict[GroundNSRT, FrozenSet[GroundAtom]]] = None
                 ) -> None:
        self.ops = list(ground_nsrts)
        self.op_index = {g: i for i, g in enumerate(self.ops)}
        self.atoms: List[GroundAtom] = []
        self.atom_id: Dict[GroundAtom, int] = {}
        self._base_pre = [self.ids(g.preconditions) for g in self.ops]
        self._base_add = [self.ids(g.add_effects) for g in self.ops]
        self.delete = [self.ids(g.delete_effects) for g in self.ops]
        self.init = self.ids(init)
        self.goal = self.ids(goal)
        self._apply(extra_pre or {})

    def with_extra_pre(self, extra_pre: Dict[GroundNSRT, FrozenSet[GroundAtom]]
                       ) -> "GroundModel":
        """Same task, different failure-driven preconditions."""
        out = copy.copy(self)
        out.atoms, out.atom_id = list(self.atoms), dict(self.atom_id)
        out._apply(extra_pre)
        return out

    def _apply(self, extra_pre: Dict[GroundNSRT, FrozenSet[GroundAtom]]) -> None:
        suspects: Set[Object] = {a.args[0] for atoms in extra_pre.values() for a in atoms}
        suspect_ids = {o: self.ids([ncf_atom(o)]) for o in sorted(suspects)}
        self.pre = list(self._base_pre)
        for g, atoms in extra_pre.items():
            i = self.op_index[g]
            self.pre[i] = self.pre[i] | self.ids(atoms)
        self.add = list(self._base_add)
        if suspect_ids:
            for i, g in enumerate(self.ops):
                extra = [suspect_ids[o] for o in g.objects if o in suspect_ids]
                if extra:
                    self.add[i] = self.add[i].union(*extra)
        n = len(self.atoms)
        self.pre_of: List[List[int]] = [[] for _ in range(n)]
        self.no_pre: List[int] = []
        for i, pre in enumerate(self.pre):
            for a in pre:
                self.pre_of[a].append(i)
            if not pre:
                self.no_pre.append(i)
        self.n_pre = [len(p) for p in self.pre]
        self._build_arrays()

    def _build_arrays(self) -> None:
        # Flat index arrays for the batched fixed-point heuristic.
        with_pre = [i for i, p in enumerate(self.pre) if p]
        self._pre_ops = np.array(with_pre, dtype=np.int64)
        pre_atoms, pre_starts = [], []
        for i in with_pre:
            pre_starts.append(len(pre_atoms))
            pre_atoms.extend(sorted(self.pre[i]))
        self._pre_atoms = np.array(pre_atoms, dtype=np.int64)
        self._pre_starts = np.array(pre_starts, dtype=np.int64)
        achievers: Dict[int, List[int]] = {}
        for i, add in enumerate(self.add):
            for a in add:
                achievers.setdefault(a, []).append(i)
        self._ach_atoms = np.array(sorted(achievers), dtype=np.int64)
        ach_ops, ach_starts = [], []
        for a in self._ach_atoms:
            ach_starts.append(len(ach_ops))
            ach_ops.extend(achievers[int(a)])
        self._ach_ops = np.array(ach_ops, dtype=np.int64)
        self._ach_starts = np.array(ach_starts, dtype=np.int64)
        self._goal_arr = np.array(sorted(self.goal), dtype=np.int64)

    def ids(self, atoms) -> FrozenSet[int]:
        out = []
        for atom in atoms:
            i = self.atom_id.get(atom)
            if i is None:
                i = self.atom_id[atom] = len(self.atoms)
                self.atoms.append(atom)
            out.append(i)
        return frozenset(out)

    def decode(self, state: FrozenSet[int]) -> FrozenSet[GroundAtom]:
        return frozenset(self.atoms[i] for i in state)

    def applicable(self, state: FrozenSet[int]) -> Iterator[int]:
        for i, pre in enumerate(self.pre):
            if pre <= state:
                yield i

    def successor(self, state: FrozenSet[int], op: int) -> FrozenSet[int]:
        return (state - self.delete[op]) | self.add[op]

    def h_add(self, state: FrozenSet[int], goal: Optional[FrozenSet[int]] = None) -> float:
        """Additive delete-relaxation heuristic with unit operator costs."""
        goal = self.goal if goal is None else goal
        if goal <= state:
            return 0.0
        cost = [INF] * len(self.atoms)
        heap = []
        for a in state:
            cost[a] = 0
            heap.append((0, a))
        unsat = list(self.n_pre)
        acc = [0] * len(self.ops)
        done = [False] * len(self.atoms)

        def fire(op: int, base: float) -> None:
            c = base + 1
            for b in self.add[op]:
                if c < cost[b]:
                    cost[b] = c
                    heapq.heappush(heap, (c, b))

        heapq.heapify(heap)
        for op in self.no_pre:
            fire(op, 0)
        remaining = set(goal) - set(state)
        while heap and remaining:
            c, a = heapq.heappop(heap)
            if done[a]:
                continue
            done[a] = True
            remaining.discard(a)
            for op in self.pre_of[a]:
                acc[op] += c
                unsat[op] -= 1
                if unsat[op] == 0:
                    fire(op, acc[op])
        total = 0.0
        for g in goal:
            total += cost[g]
        return total


    def h_add_many(self, states: Sequence[FrozenSet[int]]) -> np.ndarray:
        """``h_add`` for several states at once by synchronous fixed-point sweeps.

        Atom costs start at 0 in the state and infinity elsewhere, and every
        sweep relaxes all operators together; costs only decrease, so the sweep
        stops at the same least fixed point the Dijkstra version reaches.
        """
        n_states, n_atoms = len(states), len(self.atoms)
        if n_states == 0:
            return np.zeros(0)
        cost = np.full((n_states, n_atoms), _BIG)
        for row, state in enumerate(states):
            cost[row, list(state)] = 0.0
        op_cost = np.ones((n_states, len(self.ops)))
        if len(self._ach_atoms):
            while True:
                if len(self._pre_ops):
                    sums = np.add.reduceat(cost[:, self._pre_atoms], self._pre_starts, axis=1)
                    op_cost[:, self._pre_ops] = np.minimum(sums + 1.0, _BIG)
                best = np.minimum.reduceat(op_cost[:, self._ach_ops], self._ach_starts,
                                           axis=1)
                current = cost[:, self._ach_atoms]
                improved = best < current
                if not improved.any():
                    break
                cost[:, self._ach_atoms] = np.where(improved, best, current)
        h = cost[:, self._goal_arr].sum(axis=1)
        return np.where(h >= _BIG, INF, h)


@dataclass
class Skeleton:
    ops: List[GroundNSRT]
    expected: List[FrozenSet[GroundAtom]]   # abstract states, len(ops) + 1


def astar(model: GroundModel, horizon: int, deadline: float = INF,
          stats: Optional[dict] = None, heuristic: Optional[Callable] = None
          ) -> Iterator[Skeleton]:
    """Yield goal-reaching skeletons in nondecreasing f order.

    Interior states are closed on expansion. Goal nodes are never expanded
    or closed, so a goal state reached along several parents yields several
    skeletons. Ties break on lower h, then insertion order.
    """
    if heuristic is None:
        batch_h = model.h_add_many
    else:
        def batch_h(states):
            return [heuristic(st) for st in states]
    counter = itertools.count()
    h0 = float(batch_h([model.init])[0])
    if h0 == INF:
        return
    # Node: (state, g, parent node, op index)
    root = (model.init, 0, None, None)
    open_list = [(h0, h0, next(counter), root)]
    closed: Set[FrozenSet[int]] = set()
    while open_list:
        if time.perf_counter() > deadline:
            raise Timeout()
        f, h, _, node = heapq.heappop(open_list)
        state, g, _, _ = node
        if model.goal <= state:
            yield _skeleton(model, node)
            continue
        if state in closed or g >= horizon:
            continue
        closed.add(state)
        if stats is not None:
            stats["expansions"] = stats.get("expansions", 0) + 1
        children = []
        for op in model.applicable(state):
            nxt = model.successor(state, op)
            if nxt not in closed:
                children.append((op, nxt))
        for (op, nxt), h_next in zip(children, batch_h([c[1] for c in children])):
            h_next = float(h_next)
            if h_next == INF:
                continue
            heapq.heappush(open_list, (g + 1 + h_next, h_next, next(counter),
                                       (nxt, g + 1, node, op)))


def _skeleton(model: GroundModel, node) -> Skeleton:
    ops, states = [], []
    while node is not None:
        state, _, parent, op = node
        states.append(model.decode(state))
        if op is not None:
            ops.append(model.ops[op])
        node = parent
    ops.reverse()
    states.reverse()
    return Skeleton(ops, states)


def ground_all(nsrts: Sequence[NSRT], objects: Sequence[Object]) -> List[GroundNSRT]:
    return [g for n in nsrts for g in n.all_groundings(objects)]


# Refinement.

SampleFn = Callable[[GroundNSRT, State, np.random.Generator], Optional[np.ndarray]]


def learned_sampler(stats: Optional[dict] = None) -> SampleFn:
    def sample(g: GroundNSRT, state: State, rng: np.random.Generator):
        return sample_action(g.parent, context(state, g.objects), rng, stats=stats)
    return sample


def prior_sampler(env: Env, tries: int) -> SampleFn:
    """Prior draws filtered by the operator's classifier, then a raw draw."""
    def sample(g: GroundNSRT, state: State, rng: np.random.Generator):
        clf = g.parent.classifier
        ctx = context(state, g.objects)
        for _ in range(tries):
            action = env.sample_prior(state, rng)
            if clf is None or clf.proba(ctx, action)[0] > 0.5:
                return action
        return env.sample_prior(state, rng)
    return sample


@dataclass
class RefineResult:
    actions: Optional[List[np.ndarray]] = None
    failure_step: Optional[int] = None
    failure_objects: FrozenSet[Object] = frozenset()


def refine(skeleton: Skeleton, s0: State, goal: FrozenSet[GroundAtom],
           predicates: Sequence[Predicate], sample: SampleFn, rng: np.random.Generator,
           n_trials: int = 1, failure_model: Optional[FailurePredictor] = None,
           deadline: float = INF, stats: Optional[dict] = None) -> RefineResult:
    """Try to turn a skeleton into actions using imagined rollouts."""
    expected = [frozenset(a for a in s if not is_ncf(a)) for s in skeleton.expected]
    for _ in range(n_trials):
        if stats is not None:
            stats["refinements"] = stats.get("refinements", 0) + 1
        state, atoms = s0, expected[0]
        actions: List[np.ndarray] = []
        ok = True
        for i, g in enumerate(skeleton.ops):
            if time.perf_counter() > deadline:
                raise Timeout()
            action = sample(g, state, rng)
            if action is None:
                ok = False
                break
            if failure_model is not None:
                culprits = failure_model.predict(state, atoms, action)
                if culprits:
                    return RefineResult(failure_step=i, failure_objects=culprits)
            state = predict_next(state, g, action)
            atoms = abstract(state, predicates)
            actions.append(action)
            if atoms != expected[i + 1]:
                ok = False
                break
        if ok and goal <= atoms:
            return RefineResult(actions=actions)
    return RefineResult()


def plan_bilevel(task: Task, nsrts: Sequence[NSRT], predicates: Sequence[Predicate],
                 config: PlannerConfig, rng: np.random.Generator,
                 failure_model: Optional[FailurePredictor] = None,
                 sample: Optional[SampleFn] = None, stats: Optional[dict] = None
                 ) -> Optional[List[np.ndarray]]:
    stats = stats if stats is not None else {}
    deadline = time.perf_counter() + config.timeout
    sample = sample or learned_sampler(stats)
    init = abstract(task.init, predicates)
    if task.goal <= init:
        return []
    ground = ground_all(nsrts, task.objects)
    extra_pre: Dict[GroundNSRT, FrozenSet[GroundAtom]] = {}
    try:
        base = GroundModel(ground, init, task.goal)
        while True:
            model = base.with_extra_pre(extra_pre)
            restarted = False
            for skeleton in astar(model, task.horizon, deadline, stats):
                result = refine(skeleton, task.init, task.goal, predicates, sample, rng,
                                config.n_trials, failure_model, deadline, stats)
                if result.actions is not None:
                    return result.actions
                if result.failure_step is not None:
                    g = skeleton.ops[result.failure_step]
                    atoms = frozenset(ncf_atom(o) for o in result.failure_objects)
                    old = extra_pre.get(g, frozenset())
                    if not atoms <= old:
                        extra_pre[g] = old | atoms
                        stats["augmentations"] = stats.get("augmentations", 0) + 1
                        restarted = True
                        break
            if not restarted:
                return None
    except Timeout:
        stats["timed_out"] = True
        return None


def baseline_b1_symbolic_only(task: Task, nsrts: Sequence[NSRT], env: Env,
                              config: PlannerConfig, rng: np.random.Generator,
                              stats: Optional[dict] = None
                              ) -> Optional[List[np.ndarray]]:
    """First symbolic plan, refined once by sampling on the real states."""
    stats = stats if stats is not None else {}
    deadline = time.perf_counter() + config.timeout
    init = env.abstract(task.init)
    if task.goal <= init:
        return []
    model = GroundModel(ground_all(nsrts, task.objects), init, task.goal)
    try:
        skeleton = next(astar(model, task.horizon, deadline, stats), None)
    except Timeout:
        stats["timed_out"] = True
        return None
    if skeleton is None:
        return None
    state, actions = task.init, []
    for g in skeleton.ops:
        nsrt = g.parent
        ctx = context(state, g.objects)
        action = sample_action(nsrt, ctx, rng)
        if action is None:
            # Nothing passed the classifier; keep a raw draw.
            action = nsrt.sampler.sample(ctx, rng)[0]
        actions.append(action)
        result = env.step(state, action)
        if result.failed:
            break
        state = result.state
    return actions


def _random_ground(ground: Sequence[GroundNSRT], nsrts: Sequence[NSRT],
                   rng: np.random.Generator) -> Optional[GroundNSRT]:
    by_parent: Dict[str, List[GroundNSRT]] = {}
    for g in ground:
        by_parent.setdefault(g.parent.name, []).append(g)
    names = [n.name for n in nsrts if n.name in by_parent]
    if not names:
        return None
    pool = by_parent[names[rng.integers(len(names))]]
    return pool[rng.integers(len(pool))]


def _shooting(task: Task, nsrts: Sequence[NSRT], predicates: Sequence[Predicate],
              config: PlannerConfig, rng: np.random.Generator, sample: SampleFn,
              stats: dict) -> Optional[List[np.ndarray]]:
    deadline = time.perf_counter() + config.timeout
    if task.goal <= abstract(task.init, predicates):
        return []
    ground = ground_all(nsrts, task.objects)
    by_parent: Dict[str, List[GroundNSRT]] = {}
    for g in ground:
        by_parent.setdefault(g.parent.name, []).append(g)
    names = [n.name for n in nsrts if n.name in by_parent]
    if not names:
        return None
    for it in range(config.max_shooting_iters):
        stats["iterations"] = it + 1
        state, actions = task.init, []
        for _ in range(task.horizon):
            if time.perf_counter() > deadline:
                stats["timed_out"] = True
                return None
            pool = by_parent[names[rng.integers(len(names))]]
            g = pool[rng.integers(len(pool))]
            action = sample(g, state, rng)
            if action is None:
                break
            state = predict_next(state, g, action)
            actions.append(action)
            if task.goal <= abstract(state, predicates):
                return actions
    return None


def baseline_b2_shooting(task, nsrts, predicates, config, rng, stats=None):
    """Random ground-NSRT sequences rolled out with the learned networks."""
    stats = stats if stats is not None else {}
    return _shooting(task, nsrts, predicates, config, rng, learned_sampler(), stats)


def baseline_b7_shooting_prior(task, nsrts, predicates, env, config, rng, stats=None):
    """Shooting with prior draws filtered by the classifiers."""
    stats = stats if stats is not None else {}
    return _shooting(task, nsrts, predicates, config, rng,
                     prior_sampler(env, config.prior_tries), stats)


def baseline_b3_hillclimb(task: Task, nsrts: Sequence[NSRT],
                          predicates: Sequence[Predicate], config: PlannerConfig,
                          rng: np.random.Generator, stats: Optional[dict] = None
                          ) -> Optional[List[np.ndarray]]:
    """Local search over full-length plans scored by goal atoms achieved."""
    stats = stats if stats is not None else {}
    deadline = time.perf_counter() + config.timeout
    if task.goal <= abstract(task.init, predicates):
        return []
    ground = ground_all(nsrts, task.objects)
    sample = learned_sampler()
    steps = [_random_ground(ground, nsrts, rng) for _ in range(task.horizon)]
    if any(s is None for s in steps):
        return None

    def rollout(ops, old_actions, start):
        """Resample actions from ``start`` on; returns (score, actions, solved_at)."""
        state, actions, atoms = task.init, [], frozenset()
        for i, g in enumerate(ops):
            action = old_actions[i] if i < start else sample(g, state, rng)
            if action is None:
                action = g.parent.sampler.sample(context(state, g.objects), rng)[0]
            actions.append(action)
            state = predict_next(state, g, action)
            atoms = abstract(state, predicates)
            if task.goal <= atoms:
                return len(task.goal), actions, i + 1
        return len(task.goal & atoms), actions, None

    try:
        score, actions, solved = rollout(steps, [], 0)
        for it in range(config.max_hillclimb_iters):
            stats["iterations"] = it + 1
            if solved is not None:
                return actions[:solved]
            if time.perf_counter() > deadline:
                stats["timed_out"] = True
                return None
            i = int(rng.integers(len(steps)))
            cand = list(steps)
            cand[i] = _random_ground(ground, nsrts, rng)
            c_score, c_actions, c_solved = rollout(cand, actions, i)
            if c_score > score:
                steps, score, actions, solved = cand, c_score, c_actions, c_solved
        return actions[:solved] if solved is not None else None
    except Timeout:
        return None


def baseline_b5_prior(task: Task, env: Env, rng: np.random.Generator,
                      stats: Optional[dict] = None) -> List[np.ndarray]:
    """Run the behavior prior in the environment; returns the actions taken."""
    episode = env.run_episode(task, env.sample_prior, rng)
    return episode.actions


def baseline_b6_bilevel_prior(task, nsrts, predicates, env, config, rng,
                              failure_model=None, stats=None):
    """Bilevel planning with classifier-filtered prior draws as the sampler."""
    return plan_bilevel(task, nsrts, predicates, config, rng, failure_model,
                        sample=prior_sampler(env, config.prior_tries), stats=stats)
