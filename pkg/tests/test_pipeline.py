import json
import warnings

import numpy as np
import pytest
from sklearn.base import clone

from infoseek import StagedPolicyNetwork
from infoseek.agents import sample_population, simulate_population
from infoseek.game import Task
from infoseek.model import dataset_nll
from infoseek.pipeline import (
    CheckpointError,
    NumericalError,
    SampleComplexityConfig,
    SplitSpec,
    TrainConfig,
    checkpoint_from_dict,
    checkpoint_to_dict,
    dumps_checkpoint,
    load,
    sample_complexity,
    save,
    split,
    train,
)


@pytest.fixture(scope="module")
def data():
    profs = sample_population(np.random.default_rng(0), 40)
    return simulate_population(profs, [Task.MAX], 14, seed=0)


@pytest.fixture(scope="module")
def fitted(data):
    tr, st, va = split(data, seed=1)
    return train(tr, st, TrainConfig(variant="subj", max_epochs=4, seed=2)), va


def test_split_counts(data):
    tr, st, va = split(data, seed=0)
    # 14 trials: ceil(8.4) = 9 to training, of which round(0.9) = 1 stops
    assert (len(tr), len(st), len(va)) == (40 * 8, 40 * 1, 40 * 5)
    ids = lambda rs: {(r.subject_id, r.trial_id) for r in rs}  # noqa: E731
    assert not ids(tr) & ids(va) and not ids(st) & ids(va) and not ids(tr) & ids(st)
    assert split(data, seed=0) == (tr, st, va)


def test_split_drops_small_groups(data):
    few = [r for r in data if r.subject_id == data[0].subject_id][:4]
    with pytest.warns(RuntimeWarning):
        tr, st, va = split(few + data[14:28])
    assert {r.subject_id for r in tr + st + va} == {data[14].subject_id}
    with pytest.raises(ValueError):
        SplitSpec(train_fraction=1.0)


def test_training_improves_and_logs(fitted):
    ck, va = fitted
    log = ck.log
    assert log[0]["epoch"] == 0 and len(log) <= 5
    assert min(e["stopping_nll"] for e in log) == log[ck.best_epoch]["stopping_nll"]
    assert log[-1]["train_nll"] < log[0]["train_nll"]


def test_training_is_deterministic(data, fitted):
    ck, _ = fitted
    tr, st, _ = split(data, seed=1)
    again = train(tr, st, TrainConfig(variant="subj", max_epochs=4, seed=2))
    assert dumps_checkpoint(again) == dumps_checkpoint(ck)


def test_restores_best_weights(data):
    tr, st, _ = split(data, seed=1)
    # a huge learning rate makes the stopping loss worse after epoch 0
    ck = train(tr, st, TrainConfig(variant="pop", lr=5.0, max_epochs=6, patience=2, seed=0))
    best = ck.log[ck.best_epoch]["stopping_nll"]
    assert dataset_nll(ck.model, st) == pytest.approx(best, rel=1e-12)
    assert len(ck.log) <= 1 + ck.best_epoch + 2


def test_non_finite_gradient_raises(data, monkeypatch):
    import infoseek.pipeline as pl

    def bad(model, arr, rows, normalizer=None):
        grads = {k: np.full_like(v, np.nan) for k, v in model.params().items()}
        return 1.0, 1, grads

    monkeypatch.setattr(pl, "loss_and_grads", bad)
    with pytest.raises(NumericalError):
        train(data[:50], (), TrainConfig(variant="pop", max_epochs=1))


def test_checkpoint_round_trip(tmp_path, fitted):
    ck, va = fitted
    path = tmp_path / "ck.json"
    save(ck, path)
    back = load(path)
    assert dataset_nll(back.model, va) == dataset_nll(ck.model, va)
    assert dumps_checkpoint(back) == path.read_text()
    np.testing.assert_array_equal(back.model.embeddings, ck.model.embeddings)


def test_checkpoint_rejects_tampering(fitted):
    ck, _ = fitted
    doc = json.loads(dumps_checkpoint(ck))
    doc["payload"]["best_epoch"] += 1
    with pytest.raises(CheckpointError, match="checksum"):
        checkpoint_from_dict(doc)
    doc = checkpoint_to_dict(ck)
    doc["version"] = 99
    with pytest.raises(CheckpointError, match="version"):
        checkpoint_from_dict(doc)
    with pytest.raises(CheckpointError):
        checkpoint_from_dict({"format": "other"})


def test_sample_complexity_small(data):
    run = SampleComplexityConfig(pool_sizes=(0, 10), n_test_subjects=10, n_repeats=2, n_rollouts=5, seed=0)
    per_run, summary = sample_complexity(data, run, TrainConfig(variant="subj", max_epochs=2))
    assert len(per_run.rows) == 2 * 2 * 3
    assert summary.columns == ["pool_size", "metric", "mean_r", "sem_r", "n_runs"]
    assert {r["pool_size"] for r in summary.records()} == {0, 10}
    with pytest.raises(ValueError):
        sample_complexity(data, SampleComplexityConfig(pool_sizes=(0, 100), n_test_subjects=10, n_repeats=1))
    with pytest.raises(ValueError):
        SampleComplexityConfig(pool_sizes=(10, 5))


def test_estimator_api(data):
    est = StagedPolicyNetwork(variant="subj", max_epochs=2, random_state=3)
    assert clone(est).get_params()["max_epochs"] == 2
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        est.fit(data[:280])
    assert est.score(data[280:]) == pytest.approx(-est.nll(data[280:]))
    sid = data[0].subject_id
    assert est.embed(sid).shape == (2,)
    m = est.rollout(sid, data[0].config, n_rollouts=10)
    assert 1.0 <= m["n_moves"] <= 4.0
    with pytest.raises(Exception):
        StagedPolicyNetwork().nll(data)
