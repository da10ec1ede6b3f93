"""Experiment orchestration: data, training, bundles, evaluation, sweeps."""

from __future__ import annotations

import csv
import dataclasses
import hashlib
import json
import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np

from nsrtlab import nn
from nsrtlab.envs import Env, make_env
from nsrtlab.learn import (FailurePredictor, FailureSample, GraphFeaturizer,
                           LearnConfig, learn_failure_predictor, learn_nsrts)
from nsrtlab.nsrt import (NSRT, ActionSampler, ApplicabilityClassifier, Transition,
                          TransitionModel)
from nsrtlab.plan import (METHODS, PlannerConfig, baseline_b1_symbolic_only,
                          baseline_b2_shooting, baseline_b3_hillclimb,
                          baseline_b5_prior, baseline_b6_bilevel_prior,
                          baseline_b7_shooting_prior, plan_bilevel)
from nsrtlab.learn import sample_action
from nsrtlab.nsrt import context
from nsrtlab.relcore import Object, State, Variable, abstract, parse_atom, sorted_atoms

log = logging.getLogger(__name__)

BUNDLE_VERSION = "nsrtlab-bundle/1"
DATASET_VERSION = "nsrtlab-dataset/1"
CSV_COLUMNS = ("env", "method", "seed", "train_episodes", "split", "solve_rate",
               "mean_wall_s", "mean_plan_len")

# Independent random streams derived from one master seed.
STREAMS = {"train_tasks": 0, "prior": 1, "init": 2, "planner": 3, "test_tasks": 4,
           "heldout": 5}


def stream(seed: int, name: str) -> np.random.Generator:
    return np.random.default_rng([seed, STREAMS[name]])


# Data collection.

@dataclass
class Dataset:
    env: str
    transitions: List[Transition] = field(default_factory=list)
    failures: List[FailureSample] = field(default_factory=list)
    episodes: int = 0


def collect_data(env: Env, n_episodes: int, seed: int) -> Dataset:
    """Run the behavior prior on training tasks and log every transition."""
    if n_episodes < 1:
        raise ValueError("need at least one episode")
    task_rng, prior_rng = stream(seed, "train_tasks"), stream(seed, "prior")
    data = Dataset(env.name, episodes=n_episodes)
    for _ in range(n_episodes):
        task = env.generate_task("train", task_rng)
        ep = env.run_episode(task, env.sample_prior, prior_rng)
        for s, a, s2 in zip(ep.states, ep.actions, ep.states[1:]):
            data.transitions.append(Transition(s, a, s2))
        if ep.failed:
            data.failures.append(FailureSample(ep.states[-1], ep.actions[-1],
                                               ep.failure_objects))
    return data


def _state_json(state: State) -> Dict[str, Any]:
    return {o.name: [o.type.name, state[o].tolist()] for o in state.objects}


def _state_from_json(env: Env, raw: Dict[str, Any]) -> State:
    return State({Object(name, env.type(t)): np.array(v, dtype=np.float64)
                  for name, (t, v) in raw.items()})


def save_dataset(data: Dataset, path: Path) -> None:
    with open(path, "w") as fh:
        fh.write(json.dumps({"version": DATASET_VERSION, "env": data.env,
                             "episodes": data.episodes}) + "\n")
        for t in data.transitions:
            fh.write(json.dumps({"state": _state_json(t.state),
                                 "action": t.action.tolist(),
                                 "next_state": _state_json(t.next_state)}) + "\n")
        for f in data.failures:
            fh.write(json.dumps({"state": _state_json(f.state),
                                 "action": f.action.tolist(), "next_state": None,
                                 "failure_objects": sorted(o.name for o in f.fail_objects)})
                     + "\n")


def load_dataset(path: Path) -> Dataset:
    with open(path) as fh:
        header = json.loads(fh.readline())
        if header.get("version") != DATASET_VERSION:
            raise ValueError(f"unsupported dataset version {header.get('version')}")
        env = make_env(header["env"])
        data = Dataset(env.name, episodes=header["episodes"])
        for line in fh:
            row = json.loads(line)
            state = _state_from_json(env, row["state"])
            action = np.array(row["action"], dtype=np.float64)
            if row["next_state"] is None:
                by_name = {o.name: o for o in state.objects}
                data.failures.append(FailureSample(
                    state, action, frozenset(by_name[n] for n in row["failure_objects"])))
            else:
                data.transitions.append(Transition(
                    state, action, _state_from_json(env, row["next_state"])))
    return data


def dataset_fingerprint(data: Dataset) -> str:
    h = hashlib.sha256()
    for t in data.transitions:
        h.update(json.dumps([_state_json(t.state), t.action.tolist(),
                             _state_json(t.next_state)]).encode())
    for f in data.failures:
        h.update(json.dumps([_state_json(f.state), f.action.tolist(),
                             sorted(o.name for o in f.fail_objects)]).encode())
    return h.hexdigest()


# Model bundles.

@dataclass
class ModelBundle:
    env: str
    nsrts: List[NSRT]
    failure_model: Optional[FailurePredictor]
    dataset_fingerprint: str
    config_fingerprint: str
    timings: Dict[str, float] = field(default_factory=dict)

    def to_json(self) -> str:
        doc = {
            "version": BUNDLE_VERSION,
            "env": self.env,
            "dataset_fingerprint": self.dataset_fingerprint,
            "config_fingerprint": self.config_fingerprint,
            "nsrts": [_nsrt_json(n) for n in self.nsrts],
            "failure_model": (None if self.failure_model is None
                              else _failure_json(self.failure_model)),
        }
        return json.dumps(doc, indent=1, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "ModelBundle":
        doc = json.loads(text)
        if doc.get("version") != BUNDLE_VERSION:
            raise ValueError(f"unsupported bundle version {doc.get('version')}")
        env = make_env(doc["env"])
        nsrts = [_nsrt_from_json(env, d) for d in doc["nsrts"]]
        fm = doc["failure_model"]
        return cls(env.name, nsrts, None if fm is None else _failure_from_json(env, fm),
                   doc["dataset_fingerprint"], doc["config_fingerprint"])

    def save(self, path: Path) -> None:
        Path(path).write_text(self.to_json())

    @classmethod
    def load(cls, path: Path) -> "ModelBundle":
        return cls.from_json(Path(path).read_text())


def _array_json(a: np.ndarray) -> Dict[str, Any]:
    return {"shape": list(a.shape), "data": a.ravel().tolist()}


def _array_from_json(d: Dict[str, Any], dtype=np.float64) -> np.ndarray:
    return np.array(d["data"], dtype=dtype).reshape(d["shape"])


def _mlp_json(net: nn.Mlp) -> Dict[str, Any]:
    return {"input_dim": net.input_dim, "output_dim": net.output_dim,
            "hidden": net.hidden, "layer_norm": net.layer_norm,
            "params": [_array_json(p) for p in net.params]}


def _mlp_from_json(d: Dict[str, Any]) -> nn.Mlp:
    net = nn.Mlp(d["input_dim"], d["output_dim"], d["hidden"], layer_norm=d["layer_norm"])
    net.params[:] = [_array_from_json(p) for p in d["params"]]
    return net


def _norm_json(n: nn.Normalizer) -> Dict[str, Any]:
    return {"mean": _array_json(n.mean), "std": _array_json(n.std)}


def _norm_from_json(d: Dict[str, Any]) -> nn.Normalizer:
    return nn.Normalizer(_array_from_json(d["mean"]), _array_from_json(d["std"]))


def _atoms_text(atoms) -> List[str]:
    return [str(a) for a in sorted_atoms(atoms)]


def _nsrt_json(n: NSRT) -> Dict[str, Any]:
    out: Dict[str, Any] = {
        "name": n.name,
        "parameters": [[p.name, p.type.name] for p in n.parameters],
        "preconditions": _atoms_text(n.preconditions),
        "add_effects": _atoms_text(n.add_effects),
        "delete_effects": _atoms_text(n.delete_effects),
        "action_dim": n.action_dim,
        "changed_mask": [bool(b) for b in n.changed_mask],
        "transition_model": None, "sampler": None, "classifier": None,
    }
    if n.transition_model is not None:
        m = n.transition_model
        out["transition_model"] = {"net": _mlp_json(m.net), "x_norm": _norm_json(m.x_norm),
                                   "y_norm": _norm_json(m.y_norm)}
    if n.sampler is not None:
        s = n.sampler
        out["sampler"] = {"net": _mlp_json(s.net), "x_norm": _norm_json(s.x_norm),
                          "a_norm": _norm_json(s.a_norm)}
    if n.classifier is not None:
        c = n.classifier
        out["classifier"] = {"net": _mlp_json(c.net), "x_norm": _norm_json(c.x_norm)}
    return out


def _nsrt_from_json(env: Env, d: Dict[str, Any]) -> NSRT:
    params = tuple(Variable(name, env.type(t)) for name, t in d["parameters"])
    by_name = {p.name: p for p in params}
    preds: Dict[str, list] = {}
    for p in env.predicates:
        preds.setdefault(p.name, []).append(p)

    def atoms(key):
        return frozenset(parse_atom(t, preds, by_name) for t in d[key])

    n = NSRT(d["name"], params, atoms("preconditions"), atoms("add_effects"),
             atoms("delete_effects"), d["action_dim"],
             np.array(d["changed_mask"], dtype=bool))
    if d["transition_model"] is not None:
        m = d["transition_model"]
        n.transition_model = TransitionModel(_mlp_from_json(m["net"]),
                                             _norm_from_json(m["x_norm"]),
                                             _norm_from_json(m["y_norm"]))
    if d["sampler"] is not None:
        s = d["sampler"]
        n.sampler = ActionSampler(_mlp_from_json(s["net"]), _norm_from_json(s["x_norm"]),
                                  _norm_from_json(s["a_norm"]))
    if d["classifier"] is not None:
        c = d["classifier"]
        n.classifier = ApplicabilityClassifier(_mlp_from_json(c["net"]),
                                               _norm_from_json(c["x_norm"]))
    return n


def _failure_json(fm: FailurePredictor) -> Dict[str, Any]:
    net = fm.net
    return {"dims": list(net.dims), "width": net.width, "rounds": net.rounds,
            "blocks": [_mlp_json(b) for b in net.blocks],
            "node_norm": _norm_json(fm.node_norm), "global_norm": _norm_json(fm.global_norm)}


def _failure_from_json(env: Env, d: Dict[str, Any]) -> FailurePredictor:
    net = nn.GraphNet(*d["dims"], width=d["width"], rounds=d["rounds"])
    for block, raw in zip(net.blocks, d["blocks"]):
        block.params[:] = [_array_from_json(p) for p in raw["params"]]
    featurizer = GraphFeaturizer.build(env.types, env.predicates, env.action_dim)
    return FailurePredictor(featurizer, net, _norm_from_json(d["node_norm"]),
                            _norm_from_json(d["global_norm"]))


def config_fingerprint(*configs) -> str:
    doc = [dataclasses.asdict(c) for c in configs]
    return hashlib.sha256(json.dumps(doc, sort_keys=True).encode()).hexdigest()


def train_pipeline(env: Env, data: Dataset, config: LearnConfig, seed: int
                   ) -> ModelBundle:
    """Partition, lift, train per-operator nets, then the failure predictor."""
    rng = stream(seed, "init")
    timings: Dict[str, float] = {}
    if not data.transitions:
        log.warning("empty dataset: returning an empty bundle")
    t0 = time.perf_counter()
    nsrts, _ = learn_nsrts(data.transitions, env.predicates, env.action_dim, config, rng)
    timings["nsrts"] = time.perf_counter() - t0
    failure_model = None
    if data.failures:
        t0 = time.perf_counter()
        failure_model = learn_failure_predictor(
            data.failures, env.predicates, env.types, env.action_dim, config, rng,
            non_failures=data.transitions)
        timings["failure_model"] = time.perf_counter() - t0
    return ModelBundle(env.name, nsrts, failure_model, dataset_fingerprint(data),
                       config_fingerprint(config), timings)


# Evaluation.

@dataclass
class ResultRow:
    env: str
    method: str
    seed: int
    train_episodes: int
    split: str
    solve_rate: float
    mean_wall_s: float
    mean_plan_len: float

    def as_csv(self) -> List[str]:
        return [self.env, self.method, str(self.seed), str(self.train_episodes),
                self.split, f"{self.solve_rate:.1f}", f"{self.mean_wall_s:.4f}",
                "nan" if math.isnan(self.mean_plan_len) else f"{self.mean_plan_len:.2f}"]


def run_method(method: str, task, env: Env, bundle: Optional[ModelBundle],
               config: PlannerConfig, rng: np.random.Generator,
               stats: Optional[dict] = None):
    if method not in METHODS:
        raise ValueError(f"unknown method {method!r}; expected one of {METHODS}")
    if method == "b5":
        return baseline_b5_prior(task, env, rng, stats)
    if bundle is None:
        raise ValueError(f"method {method} needs a trained bundle")
    nsrts, preds = bundle.nsrts, env.predicates
    if method == "ours":
        return plan_bilevel(task, nsrts, preds, config, rng, bundle.failure_model,
                            stats=stats)
    if method == "b1":
        return baseline_b1_symbolic_only(task, nsrts, env, config, rng, stats)
    if method == "b2":
        return baseline_b2_shooting(task, nsrts, preds, config, rng, stats)
    if method == "b3":
        return baseline_b3_hillclimb(task, nsrts, preds, config, rng, stats)
    if method == "b6":
        return baseline_b6_bilevel_prior(task, nsrts, preds, env, config, rng,
                                         bundle.failure_model, stats)
    return baseline_b7_shooting_prior(task, nsrts, preds, env, config, rng, stats)


def evaluate(bundle: Optional[ModelBundle], env: Env, split: str, n_tasks: int,
             method: str, config: PlannerConfig, seed: int, train_episodes: int = 0
             ) -> ResultRow:
    """Plan for ``n_tasks`` test tasks and execute each plan open-loop."""
    task_rng = stream(seed, "test_tasks")
    plan_rng = stream(seed, "planner")
    solved, walls, lengths = 0, [], []
    for i in range(n_tasks):
        task = env.generate_task(split, task_rng)
        stats: Dict[str, Any] = {}
        start = time.perf_counter()
        actions = run_method(method, task, env, bundle, config, plan_rng, stats)
        wall = time.perf_counter() - start
        walls.append(wall)
        ok = False
        if actions is not None:
            ok = env.execute_plan(task, actions).solved
            if ok:
                lengths.append(len(actions))
        solved += ok
        log.debug(json.dumps({"env": env.name, "method": method, "split": split,
                              "task": i, "solved": bool(ok), "wall_s": round(wall, 4),
                              "plan_len": None if actions is None else len(actions),
                              **{k: v for k, v in stats.items()
                                 if isinstance(v, (int, float, bool))}}))
    return ResultRow(env.name, method, seed, train_episodes, split,
                     100.0 * solved / max(n_tasks, 1),
                     float(np.mean(walls)) if walls else 0.0,
                     float(np.mean(lengths)) if lengths else float("nan"))


def sampler_success(env: Env, nsrts: Sequence[NSRT], n_states: int, seed: int
                    ) -> Tuple[float, int]:
    """Fraction of held-out states where a sampled action achieves the effects.

    States come from fresh prior episodes on training tasks. For each state
    with at least one applicable grounding of ``nsrts``, one grounding is
    drawn, its sampler proposes an action, and the real environment decides
    whether the ground add and delete effects occurred. Returns the rate and
    the number of states actually used.
    """
    task_rng, prior_rng = stream(seed, "heldout"), stream(seed + 1, "heldout")
    pick_rng = stream(seed, "planner")
    hits = used = 0
    while used < n_states:
        task = env.generate_task("train", task_rng)
        ep = env.run_episode(task, env.sample_prior, prior_rng)
        for state in ep.states:
            if used >= n_states:
                break
            atoms = abstract(state, env.predicates)
            options = [g for n in nsrts for g in n.all_groundings(task.objects)
                       if g.preconditions <= atoms]
            if not options:
                continue
            g = options[int(pick_rng.integers(len(options)))]
            used += 1
            action = sample_action(g.parent, context(state, g.objects), pick_rng)
            if action is None:
                continue
            result = env.step(state, action)
            if result.failed:
                continue
            after = abstract(result.state, env.predicates)
            hits += g.add_effects <= after and not (g.delete_effects & after)
    return hits / max(used, 1), used


# Learning-curve sweeps.

@dataclass
class ExperimentConfig:
    env: str = "pickplace1d"
    seeds: Tuple[int, ...] = tuple(range(8))
    train_episodes: Tuple[int, ...] = (50, 100, 200, 500)
    n_test_tasks: int = 100
    splits: Tuple[str, ...] = ("test_easy", "test_hard")
    methods: Tuple[str, ...] = METHODS
    timeout: float = 3.0
    epoch_scale: float = 0.1
    workers: int = 1
    bundle_dir: Optional[str] = None   # keep each trained bundle here if set

    def __post_init__(self) -> None:
        if len(set(self.seeds)) != len(self.seeds):
            raise ValueError("seeds must be distinct")
        if min(self.train_episodes, default=1) < 1 or self.n_test_tasks < 1:
            raise ValueError("episode and task counts must be positive")

    @classmethod
    def from_dict(cls, raw: Dict[str, Any]) -> "ExperimentConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(raw) - known
        if unknown:
            raise ValueError(f"unknown config keys {sorted(unknown)}")
        raw = {k: tuple(v) if isinstance(v, list) else v for k, v in raw.items()}
        return cls(**raw)


def bundle_name(env: str, seed: int, episodes: int) -> str:
    return f"{env}_s{seed}_e{episodes}.bundle.json"


def run_cell(config: ExperimentConfig, seed: int, episodes: int) -> List[ResultRow]:
    """Collect, train and evaluate every method and split for one seed."""
    env = make_env(config.env)
    learn_config = LearnConfig(epoch_scale=config.epoch_scale)
    planner_config = PlannerConfig(timeout=config.timeout)
    bundle = None
    if any(m != "b5" for m in config.methods):
        data = collect_data(env, episodes, seed)
        bundle = train_pipeline(env, data, learn_config, seed)
        if config.bundle_dir is not None:
            out = Path(config.bundle_dir)
            out.mkdir(parents=True, exist_ok=True)
            bundle.save(out / bundle_name(config.env, seed, episodes))
    rows = []
    for method in config.methods:
        for split in config.splits:
            rows.append(evaluate(bundle, env, split, config.n_test_tasks, method,
                                 planner_config, seed, episodes))
    return rows


def learning_curve(config: ExperimentConfig, out: Path) -> List[ResultRow]:
    """Sweep episodes x seeds; rows are appended to ``out`` as cells finish."""
    cells = [(seed, n) for n in config.train_episodes for seed in config.seeds]
    rows: List[ResultRow] = []
    with open(out, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(CSV_COLUMNS)
        fh.flush()

        def emit(cell_rows):
            for row in cell_rows:
                writer.writerow(row.as_csv())
                rows.append(row)
            fh.flush()

        if config.workers <= 1:
            for seed, n in cells:
                emit(run_cell(config, seed, n))
        else:
            with ProcessPoolExecutor(max_workers=config.workers) as pool:
                futures = [pool.submit(run_cell, config, seed, n) for seed, n in cells]
                for fut in futures:
                    emit(fut.result())
    return rows
