import csv
import json
import math

import numpy as np
import pytest

from nsrtlab import cli, harness
from nsrtlab.envs import make_env
from nsrtlab.learn import LearnConfig
from nsrtlab.plan import PlannerConfig

TINY = LearnConfig(epoch_scale=0.002, transition_epoch_scale=0.002, gnn_epochs=3)


@pytest.fixture(scope="module")
def pp_data():
    env = make_env("pickplace1d")
    data = harness.collect_data(env, 40, seed=0)
    assert data.failures, "need failures to exercise the graph net"
    return env, data


@pytest.fixture(scope="module")
def pp_bundle(pp_data):
    env, data = pp_data
    return harness.train_pipeline(env, data, TINY, seed=0)


def test_streams_are_independent_and_reproducible():
    a = harness.stream(0, "prior").random(4)
    assert np.array_equal(a, harness.stream(0, "prior").random(4))
    assert not np.array_equal(a, harness.stream(0, "planner").random(4))
    assert not np.array_equal(a, harness.stream(1, "prior").random(4))


def test_dataset_round_trip(pp_data, tmp_path):
    env, data = pp_data
    path = tmp_path / "data.jsonl"
    harness.save_dataset(data, path)
    back = harness.load_dataset(path)
    assert back.env == data.env and back.episodes == data.episodes
    assert harness.dataset_fingerprint(back) == harness.dataset_fingerprint(data)
    assert len(back.transitions) == len(data.transitions)
    assert all(a.state == b.state and a.next_state == b.next_state
               and np.array_equal(a.action, b.action)
               for a, b in zip(data.transitions, back.transitions))
    assert [f.fail_objects for f in back.failures] == [f.fail_objects for f in data.failures]


def test_dataset_version_is_checked(tmp_path):
    path = tmp_path / "bad.jsonl"
    path.write_text(json.dumps({"version": "other", "env": "blocks", "episodes": 0}) + "\n")
    with pytest.raises(ValueError):
        harness.load_dataset(path)


def test_bundle_round_trip_identity(pp_bundle, tmp_path):
    text = pp_bundle.to_json()
    again = harness.ModelBundle.from_json(text)
    assert again.to_json() == text
    path = tmp_path / "bundle.json"
    pp_bundle.save(path)
    loaded = harness.ModelBundle.load(path)
    assert loaded.to_json() == text
    assert json.loads(text)["version"] == harness.BUNDLE_VERSION
    # Loaded nets predict exactly what the originals do.
    env = make_env("pickplace1d")
    task = env.generate_task("test_easy", np.random.default_rng(0))
    for a, b in zip(pp_bundle.nsrts, loaded.nsrts):
        assert a.describe() == b.describe()
        ctx = np.linspace(0, 1, a.context_dim)
        assert np.array_equal(a.sampler.distribution(ctx)[0], b.sampler.distribution(ctx)[0])
    action = np.array([0.3, 0.6])
    atoms = env.abstract(task.init)
    assert pp_bundle.failure_model.predict(task.init, atoms, action) == \
        loaded.failure_model.predict(task.init, atoms, action)


def test_bundle_version_is_checked(pp_bundle):
    doc = json.loads(pp_bundle.to_json())
    doc["version"] = "nsrtlab-bundle/0"
    with pytest.raises(ValueError):
        harness.ModelBundle.from_json(json.dumps(doc))


def test_train_pipeline_is_bitwise_deterministic(pp_data, pp_bundle):
    env, data = pp_data
    again = harness.train_pipeline(env, data, TINY, seed=0)
    assert again.to_json() == pp_bundle.to_json()
    other = harness.train_pipeline(env, data, TINY, seed=1)
    assert other.to_json() != pp_bundle.to_json()


def test_collect_data_is_deterministic():
    env = make_env("blocks")
    a, b = harness.collect_data(env, 5, 3), harness.collect_data(env, 5, 3)
    assert harness.dataset_fingerprint(a) == harness.dataset_fingerprint(b)
    with pytest.raises(ValueError):
        harness.collect_data(env, 0, 3)


def test_empty_dataset_gives_empty_bundle():
    env = make_env("blocks")
    bundle = harness.train_pipeline(env, harness.Dataset("blocks"), TINY, seed=0)
    assert bundle.nsrts == [] and bundle.failure_model is None


def test_evaluate_row_and_csv():
    env = make_env("pickplace1d")
    row = harness.evaluate(None, env, "test_easy", 3, "b5", PlannerConfig(timeout=0.2), 0)
    assert 0.0 <= row.solve_rate <= 100.0
    cells = row.as_csv()
    assert len(cells) == len(harness.CSV_COLUMNS)
    assert cells[:2] == ["pickplace1d", "b5"]
    with pytest.raises(ValueError):
        harness.run_method("b4", None, env, None, PlannerConfig(), np.random.default_rng(0))


def test_nan_plan_length_when_nothing_solves():
    row = harness.ResultRow("e", "m", 0, 0, "s", 0.0, 0.1, math.nan)
    assert row.as_csv()[-1] == "nan"


def test_experiment_config_validation():
    cfg = harness.ExperimentConfig.from_dict({"env": "blocks", "seeds": [0, 1]})
    assert cfg.seeds == (0, 1)
    with pytest.raises(ValueError):
        harness.ExperimentConfig.from_dict({"env": "blocks", "speed": 3})
    with pytest.raises(ValueError):
        harness.ExperimentConfig(seeds=(0, 0))
    with pytest.raises(ValueError):
        harness.ExperimentConfig(n_test_tasks=0)


def test_learning_curve_streams_rows(tmp_path):
    cfg = harness.ExperimentConfig(env="pickplace1d", seeds=(0,), train_episodes=(5,),
                                   n_test_tasks=2, splits=("test_easy",),
                                   methods=("b5",), timeout=0.2)
    out = tmp_path / "curve.csv"
    rows = harness.learning_curve(cfg, out)
    with open(out) as fh:
        table = list(csv.reader(fh))
    assert table[0] == list(harness.CSV_COLUMNS)
    assert len(table) == 1 + len(rows) == 2


def test_sampler_success_counts_states(pp_bundle):
    env = make_env("pickplace1d")
    rate, used = harness.sampler_success(env, pp_bundle.nsrts[:1], 20, seed=0)
    assert used == 20 and 0.0 <= rate <= 1.0


def test_cli_end_to_end(tmp_path, capsys):
    data = tmp_path / "d.jsonl"
    bundle = tmp_path / "b.json"
    out = tmp_path / "r.csv"
    assert cli.main(["collect", "--env", "blocks", "--episodes", "3", "--out", str(data)]) == 0
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"learn": {"epoch_scale": 0.002,
                                         "transition_epoch_scale": 0.002}}))
    assert cli.main(["train", "--env", "blocks", "--data", str(data), "--out", str(bundle),
                     "--config", str(cfg)]) == 0
    assert cli.main(["evaluate", "--env", "blocks", "--bundle", str(bundle), "--tasks", "2",
                     "--timeout", "0.5", "--out", str(out)]) == 0
    with open(out) as fh:
        table = list(csv.reader(fh))
    assert table[0] == list(harness.CSV_COLUMNS) and len(table) == 2
    assert cli.main(["constants", "--env", "painting"]) == 0
    assert '"action_dim": 8' in capsys.readouterr().out


def test_cli_rejects_mismatched_bundle(pp_bundle, tmp_path):
    path = tmp_path / "pp.json"
    pp_bundle.save(path)
    with pytest.raises(SystemExit):
        cli.main(["evaluate", "--env", "blocks", "--bundle", str(path), "--tasks", "1"])
