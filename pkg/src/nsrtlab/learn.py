"""Learning NSRTs from transitions.

Pipeline: group transitions whose symbolic effects unify, lift each group to
an operator (parameters, preconditions, effects), then fit the three
networks per operator. A separate graph network learns which objects take
part in failures.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Dict, FrozenSet, Iterable, List, Optional, Sequence, Set, Tuple

import numpy as np

from nsrtlab import nn
from nsrtlab.nsrt import (NSRT, ActionSampler, ApplicabilityClassifier,
                          Transition, TransitionModel, context)
from nsrtlab.relcore import (EffectPair, GroundAtom, LiftedAtom, Object, ObjType,
                             Predicate, State, Substitution, Variable, abstract,
                             effect_objects, substitute, unify)

log = logging.getLogger(__name__)

MAX_SAMPLER_DRAWS = 10
CLASSIFIER_THRESHOLD = 0.5
FAILURE_THRESHOLD = 0.5


@dataclass
class LearnConfig:
    """Network sizes and training lengths.

    Sampler and classifier epochs are the reference counts multiplied by
    ``epoch_scale``. Transition nets use ``transition_epoch_scale`` instead:
    imagined rollouts chain their predictions, so small errors compound,
    and they are the cheapest nets to train. The graph net count is used
    as given.
    """
    hidden: Tuple[int, ...] = (32, 32)
    lr: float = 1e-3
    sampler_epochs: int = 35000
    transition_epochs: int = 10000
    classifier_epochs: int = 50000
    epoch_scale: float = 0.1
    transition_epoch_scale: float = 1.0
    gnn_epochs: int = 300
    gnn_batch: int = 128
    gnn_width: int = 16
    gnn_rounds: int = 3
    gnn_negative_ratio: float = 30.0
    gnn_positive_repeat: int = 4

    def epochs(self, kind: str) -> int:
        base = {"sampler": self.sampler_epochs, "transition": self.transition_epochs,
                "classifier": self.classifier_epochs}[kind]
        scale = self.transition_epoch_scale if kind == "transition" else self.epoch_scale
        return max(1, int(round(base * scale)))


@dataclass(frozen=True)
class FailureSample:
    state: State
    action: np.ndarray
    fail_objects: FrozenSet[Object]

    def __post_init__(self) -> None:
        if not self.fail_objects:
            raise ValueError("a failure sample needs at least one object")


@dataclass(eq=False)
class Member:
    """A transition in a partition with its cached abstract states."""
    transition: Transition
    sigma: Substitution   # key objects (later: parameters) -> transition objects
    before: FrozenSet[GroundAtom]
    after: FrozenSet[GroundAtom]


@dataclass(eq=False)
class Partition:
    key: EffectPair
    members: List[Member] = field(default_factory=list)

    @property
    def is_empty_effect(self) -> bool:
        return not self.key[0] and not self.key[1]


def eff(tau: Transition, predicates: Iterable[Predicate],
        before: Optional[FrozenSet[GroundAtom]] = None,
        after: Optional[FrozenSet[GroundAtom]] = None) -> EffectPair:
    if tau.failed:
        raise ValueError("failure transitions have no effects")
    predicates = tuple(predicates)
    before = abstract(tau.state, predicates) if before is None else before
    after = abstract(tau.next_state, predicates) if after is None else after
    return frozenset(after - before), frozenset(before - after)


def ref(effects: EffectPair) -> Set[Object]:
    return set(effect_objects(effects))


def project(atoms: Iterable[GroundAtom], refset: Set[Object]) -> FrozenSet[GroundAtom]:
    return frozenset(a for a in atoms if set(a.args) <= refset)


def partition_data(dataset: Sequence[Transition], predicates: Iterable[Predicate]
                   ) -> List[Partition]:
    """Group transitions by unifiable effects, keys in first-seen order."""
    predicates = tuple(predicates)
    partitions: List[Partition] = []
    by_signature: Dict[tuple, List[Partition]] = {}
    for tau in dataset:
        if tau.failed:
            raise ValueError("filter failure transitions before partitioning")
        before = abstract(tau.state, predicates)
        after = abstract(tau.next_state, predicates)
        effects = eff(tau, predicates, before, after)
        sig = _signature(effects)
        for part in by_signature.get(sig, ()):
            sigma = unify(part.key, effects)
            if sigma is not None:
                part.members.append(Member(tau, sigma, before, after))
                break
        else:
            part = Partition(effects)
            part.members.append(Member(tau, {o: o for o in ref(effects)}, before, after))
            partitions.append(part)
            by_signature.setdefault(sig, []).append(part)
    return partitions


def _signature(effects: EffectPair) -> tuple:
    # Necessary condition for unification, used only to skip hopeless keys.
    return tuple(tuple(sorted((a.predicate.name, len(a.args)) for a in group))
                 for group in effects)


VARIABLE_LETTERS = "xyzabcdefghijklmnopqrstuvw"


class VariableNamer:
    """Hands out ?x, ?y, ?z, ?a, ... across all learned operators."""

    def __init__(self) -> None:
        self.count = 0

    def __call__(self, typ: ObjType) -> Variable:
        i = self.count
        self.count += 1
        letter = VARIABLE_LETTERS[i % len(VARIABLE_LETTERS)]
        suffix = "" if i < len(VARIABLE_LETTERS) else str(i // len(VARIABLE_LETTERS))
        return Variable(f"?{letter}{suffix}", typ)


def learn_symbolic(partition: Partition, namer: Optional[VariableNamer] = None
                   ) -> Tuple[Tuple[Variable, ...], FrozenSet[LiftedAtom],
                              FrozenSet[LiftedAtom], FrozenSet[LiftedAtom]]:
    """Parameters, preconditions, add and delete effects for a partition.

    Rewrites every member's ``sigma`` to map parameters to its objects.
    """
    if not partition.members:
        raise ValueError("cannot learn from an empty partition")
    namer = namer or VariableNamer()
    key_objects = effect_objects(partition.key)
    params = tuple(namer(o.type) for o in key_objects)
    lift = dict(zip(key_objects, params))
    add = frozenset(substitute(partition.key[0], lift))
    delete = frozenset(substitute(partition.key[1], lift))
    pre: Optional[FrozenSet] = None
    for member in partition.members:
        sigma = {p: member.sigma[o] for p, o in zip(params, key_objects)}
        member.sigma = sigma
        inverse = {o: p for p, o in sigma.items()}
        lifted = frozenset(substitute(project(member.before, set(inverse)), inverse))
        pre = lifted if pre is None else pre & lifted
    return params, pre, add, delete


def changed_mask(partition: Partition, params: Sequence[Variable], tol: float = 1e-9
                 ) -> np.ndarray:
    dim = sum(p.type.dim for p in params)
    mask = np.zeros(dim, dtype=bool)
    for member in partition.members:
        objs = [member.sigma[p] for p in params]
        tau = member.transition
        mask |= np.abs(context(tau.next_state, objs) - context(tau.state, objs)) > tol
    return mask


def build_regression_set(partition: Partition, params: Sequence[Variable]
                         ) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Stacked (context, action, next context) rows, one per member."""
    xs, acts, ys = [], [], []
    for member in partition.members:
        objs = [member.sigma[p] for p in params]
        tau = member.transition
        xs.append(context(tau.state, objs))
        acts.append(np.asarray(tau.action, dtype=np.float64))
        ys.append(context(tau.next_state, objs))
    dim = sum(p.type.dim for p in params)
    if not xs:
        return np.zeros((0, dim)), np.zeros((0, 0)), np.zeros((0, dim))
    return np.array(xs).reshape(len(xs), dim), np.array(acts), \
        np.array(ys).reshape(len(ys), dim)


def _random_grounding(params: Sequence[Variable], objects: Sequence[Object],
                      rng: np.random.Generator) -> Optional[List[Object]]:
    chosen: List[Object] = []
    for p in params:
        pool = [o for o in objects if o.type == p.type and o not in chosen]
        if not pool:
            return None
        chosen.append(pool[rng.integers(len(pool))])
    return chosen


def build_negatives(index: int, partitions: Sequence[Partition],
                    params_list: Sequence[Sequence[Variable]],
                    rng: np.random.Generator, n: int,
                    max_tries_factor: int = 20) -> np.ndarray:
    """(context, action) rows on which operator ``index`` should not apply.

    Draws a transition uniformly from all partitions. Those from other
    partitions get a random grounding; those from this partition get a
    re-mapped grounding whose effects differ from the observed ones.
    """
    params = params_list[index]
    own = partitions[index]
    pool = [(pi, mi) for pi, part in enumerate(partitions)
            for mi in range(len(part.members))]
    rows = []
    if not pool:
        return np.zeros((0, 0))
    for _ in range(n * max_tries_factor):
        if len(rows) >= n:
            break
        pi, mi = pool[rng.integers(len(pool))]
        member = partitions[pi].members[mi]
        tau = member.transition
        objs = _random_grounding(params, tau.state.objects, rng)
        if objs is None:
            continue
        if pi == index:
            sigma = dict(zip(params, objs))
            if sigma == member.sigma:
                continue
            effects = (frozenset(substitute(own_add(own, params), sigma)),
                       frozenset(substitute(own_del(own, params), sigma)))
            true_effects = eff(tau, (), member.before, member.after)
            if effects == true_effects:
                continue
        rows.append(np.concatenate([context(tau.state, objs), tau.action]))
    return np.array(rows) if rows else np.zeros((0, 0))


def own_add(part: Partition, params: Sequence[Variable]):
    lift = dict(zip(effect_objects(part.key), params))
    return substitute(part.key[0], lift)


def own_del(part: Partition, params: Sequence[Variable]):
    lift = dict(zip(effect_objects(part.key), params))
    return substitute(part.key[1], lift)


@dataclass
class TrainReport:
    transition_loss: Tuple[float, float] = (float("nan"), float("nan"))
    sampler_nll: Tuple[float, float] = (float("nan"), float("nan"))
    classifier_loss: Tuple[float, float] = (float("nan"), float("nan"))


def train_nsrt_nets(regression_set: Tuple[np.ndarray, np.ndarray, np.ndarray],
                    mask: np.ndarray, negatives: np.ndarray, config: LearnConfig,
                    rng: np.random.Generator):
    """Fit the transition model, sampler and applicability classifier.

    Returns (transition model or None, sampler, classifier, report). The
    transition model is None when no attribute ever changes.
    """
    X, A, Y = regression_set
    if len(X) == 0:
        raise ValueError("empty regression set")
    report = TrainReport()
    hidden = config.hidden
    transition = None
    if mask.any():
        xin = np.concatenate([X, A], axis=1)
        target = Y[:, mask]
        x_norm, y_norm = nn.Normalizer.fit(xin), nn.Normalizer.fit(target)
        net = nn.Mlp(xin.shape[1], target.shape[1], hidden, rng)
        hist = nn.train_full_batch(net, x_norm(xin), y_norm(target), "mse",
                                   config.epochs("transition"), config.lr)
        report.transition_loss = (hist[0], hist[-1])
        transition = TransitionModel(net, x_norm, y_norm)

    x_norm, a_norm = nn.Normalizer.fit(X), nn.Normalizer.fit(A)
    net = nn.Mlp(X.shape[1], 2 * A.shape[1], hidden, rng)
    hist = nn.train_full_batch(net, x_norm(X), a_norm(A), "gaussian_nll",
                               config.epochs("sampler"), config.lr)
    report.sampler_nll = (hist[0], hist[-1])
    sampler = ActionSampler(net, x_norm, a_norm)

    pos = np.concatenate([X, A], axis=1)
    neg = negatives if len(negatives) else np.zeros((0, pos.shape[1]))
    xin = np.concatenate([pos, neg], axis=0)
    labels = np.concatenate([np.ones(len(pos)), np.zeros(len(neg))])[:, None]
    c_norm = nn.Normalizer.fit(xin)
    net = nn.Mlp(xin.shape[1], 1, hidden, rng)
    hist = nn.train_full_batch(net, c_norm(xin), labels, "bce",
                               config.epochs("classifier"), config.lr)
    report.classifier_loss = (hist[0], hist[-1])
    classifier = ApplicabilityClassifier(net, c_norm)
    return transition, sampler, classifier, report


def sample_action(nsrt: NSRT, ctx: np.ndarray, rng: np.random.Generator,
                  max_draws: int = MAX_SAMPLER_DRAWS,
                  stats: Optional[dict] = None) -> Optional[np.ndarray]:
    """Rejection-sample the Gaussian until the classifier accepts a draw."""
    draws = nsrt.sampler.sample(ctx, rng, n=max_draws)
    if nsrt.classifier is None:
        accepted = np.ones(max_draws, dtype=bool)
    else:
        accepted = nsrt.classifier.proba(ctx, draws) > CLASSIFIER_THRESHOLD
    hits = np.flatnonzero(accepted)
    if stats is not None:
        stats["draws"] = stats.get("draws", 0) + (hits[0] + 1 if len(hits) else max_draws)
    if not len(hits):
        return None
    return draws[hits[0]]


def learn_nsrts(dataset: Sequence[Transition], predicates: Sequence[Predicate],
                action_dim: int, config: LearnConfig, rng: np.random.Generator,
                train_nets: bool = True) -> Tuple[List[NSRT], List[Partition]]:
    """Partition, lift, and (optionally) train networks for every operator.

    Operators with empty effects are not returned since they can never make
    progress, but their data still supplies classifier negatives.
    """
    partitions = partition_data([t for t in dataset if not t.failed], predicates)
    namer = VariableNamer()
    symbolic = []
    for part in partitions:
        if part.is_empty_effect:
            for member in part.members:
                member.sigma = {}
            symbolic.append(((), frozenset(), frozenset(), frozenset()))
        else:
            symbolic.append(learn_symbolic(part, namer))
    params_list = [s[0] for s in symbolic]
    nsrts: List[NSRT] = []
    op_index = 0
    for i, (part, (params, pre, add, delete)) in enumerate(zip(partitions, symbolic)):
        if part.is_empty_effect:
            continue
        if len(part.members) < 2:
            log.info("partition %d has a single member", i)
        nsrt = NSRT(f"Op{op_index}", params, pre, add, delete, action_dim,
                    changed_mask(part, params))
        op_index += 1
        if train_nets:
            reg = build_regression_set(part, params)
            negatives = build_negatives(i, partitions, params_list, rng, len(reg[0]))
            model, sampler, classifier, report = train_nsrt_nets(
                reg, nsrt.changed_mask, negatives, config, rng)
            nsrt.transition_model, nsrt.sampler, nsrt.classifier = \
                model, sampler, classifier
            log.info("%s: %d members, losses %s", nsrt.name, len(part.members), report)
        nsrts.append(nsrt)
    return nsrts, partitions


# Failure prediction.

@dataclass(eq=False)
class GraphFeaturizer:
    """Turns (state, abstract state, action) into a graph for the failure net."""
    types: Tuple[ObjType, ...]
    unary: Tuple[Predicate, ...]
    binary: Tuple[Predicate, ...]
    action_dim: int

    @classmethod
    def build(cls, types: Sequence[ObjType], predicates: Sequence[Predicate],
              action_dim: int) -> "GraphFeaturizer":
        types = tuple(sorted(types))
        unary = tuple(sorted((p for p in predicates if p.arity == 1), key=lambda p: p.name))
        binary = tuple(sorted((p for p in predicates if p.arity == 2), key=lambda p: p.name))
        return cls(types, unary, binary, action_dim)

    @property
    def node_dim(self) -> int:
        return (len(self.types) + sum(t.dim for t in self.types) + len(self.unary)
                + self.action_dim)

    @property
    def edge_dim(self) -> int:
        return len(self.binary)

    def slot_types(self) -> np.ndarray:
        """Per node column: index of the type owning it, or -1 if shared."""
        owner = np.full(self.node_dim, -1)
        off = len(self.types)
        for ti, t in enumerate(self.types):
            owner[off:off + t.dim] = ti
            off += t.dim
        return owner

    def fit_node_norm(self, nodes: np.ndarray) -> nn.Normalizer:
        """Standardize attribute slots over nodes of the owning type only."""
        norm = nn.Normalizer.fit(nodes)
        owner = self.slot_types()
        kinds = nodes[:, :len(self.types)].argmax(axis=1)
        for ti in range(len(self.types)):
            rows = kinds == ti
            cols = owner == ti
            if rows.any() and cols.any():
                sub = nn.Normalizer.fit(nodes[np.ix_(rows, cols)])
                norm.mean[cols], norm.std[cols] = sub.mean, sub.std
        return norm

    def graph(self, state: State, atoms: FrozenSet[GroundAtom], action: np.ndarray
              ) -> Tuple[nn.Graph, List[Object]]:
        objects = state.objects
        index = {o: i for i, o in enumerate(objects)}
        nodes = np.zeros((len(objects), self.node_dim))
        offsets, off = {}, len(self.types)
        for t in self.types:
            offsets[t] = off
            off += t.dim
        unary_slot = {p: off + i for i, p in enumerate(self.unary)}
        binary_slot = {p: i for i, p in enumerate(self.binary)}
        action = np.asarray(action, dtype=np.float64)
        for i, obj in enumerate(objects):
            nodes[i, self.types.index(obj.type)] = 1.0
            nodes[i, offsets[obj.type]:offsets[obj.type] + obj.type.dim] = state[obj]
        # Every node also sees the action, so per-object comparisons with it
        # are available from the first layer.
        if self.action_dim:
            nodes[:, -self.action_dim:] = action
        edges, snd, rcv = [], [], []
        for atom in atoms:
            if atom.predicate in unary_slot and atom.args[0] in index:
                nodes[index[atom.args[0]], unary_slot[atom.predicate]] = 1.0
            elif atom.predicate in binary_slot:
                feat = np.zeros(self.edge_dim)
                feat[binary_slot[atom.predicate]] = 1.0
                edges.append(feat)
                snd.append(index[atom.args[0]])
                rcv.append(index[atom.args[1]])
        edge_arr = np.array(edges) if edges else np.zeros((0, self.edge_dim))
        graph = nn.Graph(nodes, edge_arr, np.array(snd, dtype=np.int64),
                         np.array(rcv, dtype=np.int64), action)
        return graph, objects


@dataclass(eq=False)
class FailurePredictor:
    featurizer: GraphFeaturizer
    net: nn.GraphNet
    node_norm: nn.Normalizer
    global_norm: nn.Normalizer

    def _normalized(self, graph: nn.Graph) -> nn.Graph:
        return nn.Graph(self.node_norm(graph.nodes), graph.edges, graph.senders,
                        graph.receivers, self.global_norm(graph.globals))

    def scores(self, state: State, atoms: FrozenSet[GroundAtom], action: np.ndarray
               ) -> Dict[Object, float]:
        graph, objects = self.featurizer.graph(state, atoms, action)
        out = self.net.scores(nn.batch_graphs([self._normalized(graph)]))
        return dict(zip(objects, out.tolist()))

    def predict(self, state: State, atoms: FrozenSet[GroundAtom], action: np.ndarray
                ) -> FrozenSet[Object]:
        return frozenset(o for o, s in self.scores(state, atoms, action).items()
                         if s > FAILURE_THRESHOLD)


def learn_failure_predictor(samples: Sequence[FailureSample],
                            predicates: Sequence[Predicate], types: Sequence[ObjType],
                            action_dim: int, config: LearnConfig,
                            rng: np.random.Generator,
                            non_failures: Sequence[Transition] = ()
                            ) -> FailurePredictor:
    """Fit the per-object failure scorer.

    ``non_failures`` supply all-negative graphs; without them every object a
    failure ever mentions would look dangerous in every state.
    """
    if not samples:
        raise ValueError("no failure samples")
    featurizer = GraphFeaturizer.build(types, predicates, action_dim)
    graphs, labels = [], []
    for sample in samples:
        g, objs = featurizer.graph(sample.state, abstract(sample.state, predicates),
                                   sample.action)
        y = np.array([1.0 if o in sample.fail_objects else 0.0 for o in objs])
        graphs.extend([g] * config.gnn_positive_repeat)
        labels.extend([y] * config.gnn_positive_repeat)
    n_neg = min(len(non_failures), int(round(config.gnn_negative_ratio * len(samples))))
    if n_neg:
        for i in rng.choice(len(non_failures), size=n_neg, replace=False):
            tau = non_failures[i]
            g, objs = featurizer.graph(tau.state, abstract(tau.state, predicates),
                                       tau.action)
            graphs.append(g)
            labels.append(np.zeros(len(objs)))
    node_norm = featurizer.fit_node_norm(np.concatenate([g.nodes for g in graphs]))
    global_norm = nn.Normalizer.fit(np.stack([g.globals for g in graphs]))
    net = nn.GraphNet(featurizer.node_dim, featurizer.edge_dim, action_dim, rng,
                      width=config.gnn_width, rounds=config.gnn_rounds)
    predictor = FailurePredictor(featurizer, net, node_norm, global_norm)
    normalized = [predictor._normalized(g) for g in graphs]
    history = net.fit(normalized, labels, config.gnn_epochs, rng,
                      batch_size=config.gnn_batch, lr=config.lr)
    log.info("failure predictor: %d graphs, loss %.4f -> %.4f", len(graphs),
             history[0], history[-1])
    return predictor
