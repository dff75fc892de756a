import numpy as np
import pytest

from infoseek.agents import sample_population, simulate_population
from infoseek.encode import encode_records
from infoseek.game import Action, Task, generate_trial, initial_state, step
from infoseek.model import (
    BehaviorModel,
    chain_probabilities,
    dataset_nll,
    decision_masks,
    loss_and_grads,
    policy,
    record_nll,
    rollout_metrics,
    simulate_records,
)


@pytest.fixture(scope="module")
def records():
    profs = sample_population(np.random.default_rng(0), 6)
    return simulate_population(profs, [Task.MAX, Task.MIN], 5, seed=0)


def _zero(model):
    for v in model.params().values():
        v[...] = 0.0
    model.mark_updated()


@pytest.mark.parametrize("n,terms", [(1, 2), (2, 3), (3, 4), (4, 4)])
def test_term_count(n, terms):
    faced, guessed, row_at = decision_masks(np.array([n]))
    assert faced.sum() + row_at.sum() == terms == min(n, 3) + 1


@pytest.mark.parametrize("variant", ["pop", "subj", "multi"])
def test_loss_gradient_finite_differences(records, variant):
    recs = records if variant == "multi" else [r for r in records if r.config.task is Task.MAX]
    rng = np.random.default_rng(1)
    ids = sorted({r.subject_id for r in recs})
    model = BehaviorModel.initialize(variant, [Task.MAX, Task.MIN] if variant == "multi" else [Task.MAX], ids, rng)
    if model.embeddings is not None:
        model.embeddings[...] = rng.normal(scale=0.5, size=model.embeddings.shape)
    arr = encode_records(recs)
    rows = model.subject_rows(arr.subject_ids)
    _, n_terms, grads = loss_and_grads(model, arr, rows)
    params = model.params()
    h = 1e-6
    for name, p in params.items():
        for _ in range(3):
            idx = tuple(int(rng.integers(s)) for s in p.shape)
            old = p[idx]
            p[idx] = old + h
            model.mark_updated()
            fp = loss_and_grads(model, arr, rows)[0]
            p[idx] = old - h
            model.mark_updated()
            fm = loss_and_grads(model, arr, rows)[0]
            p[idx] = old
            model.mark_updated()
            num = (fp - fm) / (2 * h) / n_terms
            assert grads[name][idx] == pytest.approx(num, rel=1e-5, abs=1e-8), name


def test_zero_network_is_uniform(records):
    recs = [r for r in records if r.config.task is Task.MAX]
    model = BehaviorModel.initialize("subj", [Task.MAX], sorted({r.subject_id for r in recs}), np.random.default_rng(0))
    _zero(model)
    nll, n = record_nll(model, recs)
    np.testing.assert_allclose(nll, n * np.log(2))
    assert dataset_nll(model, recs) == pytest.approx(np.log(2))
    p_n, p_a = chain_probabilities(np.zeros((1, 3)), np.zeros((1, 4)))
    np.testing.assert_allclose(p_n, [[0.5, 0.25, 0.125, 0.125]])


def test_uniform_rollout_closed_form():
    model = BehaviorModel.initialize("pop", [Task.MAX], [], np.random.default_rng(0))
    _zero(model)
    rng = np.random.default_rng(2)
    configs = [generate_trial(rng, Task.MAX) for _ in range(50)]
    m = rollout_metrics(model, ["x"] * 50, configs, np.random.default_rng(3), 2000)
    # E[n_moves] = 1/2 + 2/4 + 3/8 + 4/8
    assert m["n_moves"].mean() == pytest.approx(1.875, abs=0.01)
    assert m["correct"].mean() == pytest.approx(0.5, abs=0.1)


def test_policy_is_a_distribution(records):
    model = BehaviorModel.initialize("multi", [Task.MAX, Task.MIN], ["a", "b"], np.random.default_rng(4))
    state = initial_state(records[0].config)
    for k in range(1, 5):
        dist = policy(model, "a", state.config.task, state)
        assert sum(dist.values()) == pytest.approx(1.0)
        assert (Action.SAMPLE in dist) == (k <= 3)
        if k < 4:
            state = step(state, Action.SAMPLE)


def test_unknown_subject_uses_zero_embedding():
    model = BehaviorModel.initialize("subj", [Task.MAX], ["a"], np.random.default_rng(5))
    assert model.subject_rows(["a", "zz"]).tolist() == [0, -1]
    np.testing.assert_array_equal(model.embedding_matrix(np.array([-1])), [[0.0, 0.0]])
    with pytest.raises(KeyError):
        model.embed("zz")


def test_missing_task_network(records):
    model = BehaviorModel.initialize("subj", [Task.MAX], ["a"], np.random.default_rng(5))
    with pytest.raises(ValueError):
        dataset_nll(model, [r for r in records if r.config.task is Task.MIN])


def test_variant_constraints():
    with pytest.raises(ValueError):
        BehaviorModel.initialize("multi", [Task.MAX], [], np.random.default_rng(0))
    with pytest.raises(ValueError):
        BehaviorModel.initialize("deep", [Task.MAX], [], np.random.default_rng(0))
    pop = BehaviorModel.initialize("pop", [Task.MAX], ["a"], np.random.default_rng(0))
    assert pop.embeddings is None and "embeddings" not in pop.params()


def test_simulated_records_replay(records):
    model = BehaviorModel.initialize("multi", [Task.MAX, Task.MIN], ["a"], np.random.default_rng(6))
    sims = simulate_records(model, ["a"] * len(records), [r.config for r in records], np.random.default_rng(7))
    assert len(sims) == len(records)
    assert all(1 <= s.n_moves <= 4 for s in sims)
