import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from infoseek.analysis import (
    AnalysisTable,
    approach_excess,
    approach_heatmap,
    bucket_separation,
    categorical_buckets,
    embedding_buckets,
    format_cell,
    framing_effect,
    median_split,
    pearson,
    reject_unsampled,
    subject_metrics,
)
from infoseek.game import Layout, Task, TrialConfig, make_record


def rec(sid, values, order, task, actions, i=0):
    return make_record(sid, f"t{i}", TrialConfig(Layout(values), order, task), actions)


def test_pearson_by_hand():
    r = pearson([1, 2, 3, 4], [1, 3, 2, 4])
    assert r.pearson_r == pytest.approx(0.8)
    # t = r sqrt(df / (1 - r^2)) = 0.8 * sqrt(2 / 0.36)
    t = 0.8 * math.sqrt(2 / 0.36)
    assert r.p_value == pytest.approx(2 * stats.t.sf(t, 2), rel=1e-12)


def test_pearson_matches_scipy():
    rng = np.random.default_rng(0)
    for n in (5, 20, 300):
        x = rng.normal(size=n)
        y = 0.3 * x + rng.normal(size=n)
        ref = stats.pearsonr(x, y)
        r = pearson(x, y)
        assert r.pearson_r == pytest.approx(ref.statistic, abs=1e-12)
        assert r.p_value == pytest.approx(ref.pvalue, rel=1e-8, abs=1e-300)


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(-1e3, 1e3), min_size=3, max_size=30), st.floats(0.1, 10), st.floats(-5, 5), st.integers(0, 10**6))
def test_pearson_properties(xs, scale, shift, seed):
    x = np.array(xs)
    y = np.random.default_rng(seed).normal(size=len(x))
    if np.ptp(x) < 1e-6:
        with pytest.raises(ValueError):
            pearson(x, np.zeros(len(x)) + 1)
        return
    a = pearson(x, y).pearson_r
    assert -1.0 <= a <= 1.0
    assert pearson(y, x).pearson_r == pytest.approx(a, abs=1e-9)
    assert pearson(scale * x + shift, y).pearson_r == pytest.approx(a, abs=1e-6)


def test_pearson_errors():
    with pytest.raises(ValueError):
        pearson([1, 2], [2, 1])
    with pytest.raises(ValueError):
        pearson([1, 1, 1], [1, 2, 3])


def test_format_cell():
    assert format_cell(None) == "" and format_cell(float("nan")) == ""
    assert format_cell(0.1) == "0.10000000000000001"
    assert format_cell(3) == "3" and format_cell(True) == "1"


def test_framing_effect_by_hand():
    order = ("A1", "B1", "A2", "B2")
    recs = [
        rec("s", (7, 1, 1, 1), order, Task.MAX, ["GA"], 0),
        rec("s", (7, 1, 1, 1), order, Task.MAX, ["S", "GA"], 1),
        rec("s", (7, 1, 1, 1), order, Task.MIN, ["S", "GA"], 2),
    ]
    tab = {r["first_card_value"]: r for r in framing_effect(recs).records()}
    assert tab[7]["p_guess_max"] == 0.5 and tab[7]["p_guess_min"] == 0.0
    assert tab[7]["diff"] == 0.5 and tab[7]["n_max"] == 2 and tab[7]["n_min"] == 1
    assert tab[3]["p_guess_max"] is None and tab[3]["n_max"] == 0


def test_approach_heatmap_and_excess_by_hand():
    # A1 = 9, B1 = 2 seen; DP2 offer in A (favored under MaxProd)
    fav = rec("s", (9, 5, 2, 5), ("A1", "B1", "A2", "B2"), Task.MAX, ["S", "S", "GA"])
    # offer in B (unfavored), declined
    unf = rec("s", (9, 5, 2, 5), ("A1", "B1", "B2", "A2"), Task.MAX, ["S", "GA"])
    tab = {(r["offered_row_value"], r["other_row_value"]): r for r in approach_heatmap([fav, unf], Task.MAX).records()}
    assert tab[(9, 2)]["p_accept"] == 1.0 and tab[(9, 2)]["n"] == 1
    assert tab[(2, 9)]["p_accept"] == 0.0
    assert sum(r["n"] for r in tab.values()) == 2
    ex = approach_excess([fav, unf], Task.MAX)
    assert ex["p_favored"] == 1.0 and ex["p_unfavored"] == 0.0 and ex["n_favored"] == 1


def test_reject_unsampled_by_hand():
    same = rec("s", (8, 1, 1, 1), ("A1", "A2", "B1", "B2"), Task.MAX, ["GB"])
    other = rec("s", (8, 1, 1, 1), ("A1", "B1", "A2", "B2"), Task.MAX, ["GA"])
    tab = {r["first_card_value"]: r for r in reject_unsampled([same, other], Task.MAX).records()}
    assert tab[8]["p_ref_same_row_offer"] == 0.0 and tab[8]["p_ref_other_row_offer"] == 1.0
    assert tab[8]["diff"] == -1.0
    assert tab[2]["n_same"] == 0 and tab[2]["diff"] is None


def test_subject_metrics():
    order = ("A1", "A2", "B1", "B2")
    recs = [rec("a", (9, 9, 1, 1), order, Task.MAX, ["GA"], 0), rec("a", (9, 9, 1, 1), order, Task.MAX, ["S", "GB"], 1)]
    row = subject_metrics(recs).records()[0]
    assert row["mean_n_moves"] == 1.5 and row["accuracy"] == 0.5 and row["mean_score"] == (50 - 70) / 2


def test_embedding_buckets_partition_and_trend():
    ids = [f"s{i:03d}" for i in range(95)]
    stat = {s: float(i % 17) for i, s in enumerate(ids)}
    emb = {s: np.array([stat[s], -stat[s]]) for s in ids}
    tab = embedding_buckets(emb, stat, 10)
    assert sum(tab.column("n")) == 95
    m1 = tab.column("mean_dim1")
    assert all(b >= a for a, b in zip(m1, m1[1:]))
    assert embedding_buckets(emb, stat, 10).rows == tab.rows
    with pytest.raises(ValueError):
        embedding_buckets(emb, {ids[0]: 1.0}, 10)


def test_median_split():
    ids = [f"s{i}" for i in range(40)]
    param = {s: float(i) for i, s in enumerate(ids)}
    emb = {s: np.array([param[s] / 40.0, 0.0]) for s in ids}
    tab = median_split(emb, param)
    diff, pooled = bucket_separation(tab, 1)
    assert diff > 2 * pooled
    assert [r["n"] for r in tab.records()] == [20, 20]
    with pytest.raises(ValueError):
        median_split(emb, {s: 1.0 for s in ids})


def test_categorical_buckets():
    emb = {"a": np.array([1.0, 0.0]), "b": np.array([3.0, 0.0]), "c": np.array([0.0, 0.0])}
    tab = categorical_buckets(emb, {"a": "x", "b": "x", "c": "y"})
    assert tab.records()[0]["mean_dim1"] == 2.0
    assert categorical_buckets(emb, {"a": None}).rows == []


def test_table_validation():
    with pytest.raises(ValueError):
        AnalysisTable("t", ["a", "b"], [[1]])
