import itertools
from fractions import Fraction

import numpy as np
import pytest

from infoseek.game import Action, Layout, Task, TrialConfig, generate_trial, initial_state, step
from infoseek.oracle import ev_guess, optimal_action, posterior, posterior_b_table, posterior_mc, posterior_table


def _brute_posterior(vis, task):
    """Exact (P(A correct-only) + half ties, P(tie)) by enumerating hidden values."""
    hidden = [i for i in range(4) if vis[i] == 0]
    win = tie = 0
    total = 0
    for fill in itertools.product(range(1, 11), repeat=len(hidden)):
        v = list(vis)
        for i, x in zip(hidden, fill):
            v[i] = x
        pa, pb = v[0] * v[1], v[2] * v[3]
        a_best = pa > pb if task is Task.MAX else pa < pb
        win += Fraction(1) if a_best else (Fraction(1, 2) if pa == pb else 0)
        tie += pa == pb
        total += 1
    return win / total, Fraction(tie, total)


def _brute_value(vis, offer, task, k):
    """Independent expectimax over explicit card draws and offers."""
    p, t = _brute_posterior(vis, task)
    g = float(ev_guess(float(max(p, 1 - p) + t / 2)))
    if k >= 4:
        return g
    costs = (0, 10, 15, 20)
    acc = 0.0
    for v in range(1, 11):
        nxt = list(vis)
        nxt[offer] = v
        hidden = [i for i in range(4) if nxt[i] == 0]
        if hidden:
            acc += np.mean([_brute_value(tuple(nxt), o, task, k + 1) for o in hidden])
        else:
            acc += _brute_value(tuple(nxt), None, task, k + 1)
    return max(g, -costs[k] + acc / 10)


def _state(values, order, task, k):
    s = initial_state(TrialConfig(Layout(values), order, task))
    for _ in range(k - 1):
        s = step(s, Action.SAMPLE)
    return s


def test_posterior_fully_revealed_is_exact():
    s = _state((2, 5, 3, 3), ("A1", "A2", "B1", "B2"), Task.MAX, 4)
    assert posterior(s).p_row_a == 1.0 and posterior(s).p_tie == 0.0
    s = _state((2, 3, 1, 6), ("A1", "A2", "B1", "B2"), Task.MIN, 4)
    assert posterior(s).p_row_a == 0.5 and posterior(s).p_tie == 1.0
    assert posterior(s).p_correct_best == 1.0


def test_table_matches_enumeration_on_random_patterns():
    rng = np.random.default_rng(0)
    post = posterior_table()
    for _ in range(300):
        vis = tuple(int(x) for x in rng.integers(1, 11, 4))
        mask = rng.integers(0, 2, 4)
        vis = tuple(v if m else 0 for v, m in zip(vis, mask))
        for t, task in enumerate(Task):
            p, _ = _brute_posterior(vis, task)
            assert post[(t,) + vis] == pytest.approx(float(p), abs=1e-15)


def test_framing_symmetry_all_patterns():
    # P(A correct | MaxProd) == P(B correct | MinProd), bit for bit
    np.testing.assert_array_equal(posterior_table()[0], posterior_b_table()[1])
    np.testing.assert_array_equal(posterior_b_table()[0], posterior_table()[1])


def test_row_probabilities_complement():
    np.testing.assert_allclose(posterior_table() + posterior_b_table(), 1.0, atol=1e-15)


def test_monte_carlo_probe():
    s = _state((10, 1, 1, 1), ("A1", "A2", "B1", "B2"), Task.MAX, 1)
    exact = posterior(s).p_row_a
    mc = posterior_mc(s, np.random.default_rng(1), 100_000)
    assert abs(mc - exact) < 3 * 0.5 / np.sqrt(100_000)


def test_high_known_row_beats_any_single_card():
    # A = (10, 10) seen, B hidden: no single extra B card can make the guess better
    s = _state((10, 10, 5, 5), ("A1", "A2", "B1", "B2"), Task.MAX, 3)
    est = optimal_action(s)
    assert est.best_action is Action.GUESS_A
    assert est.ev_sample <= est.ev_guess
    assert est.ev_guess == pytest.approx(_brute_value(s.visible(), s.offer.index, Task.MAX, 3))


@pytest.mark.parametrize("k", [1, 2, 3])
def test_backward_induction_matches_brute_tree(k):
    rng = np.random.default_rng(10 + k)
    n = 4 if k == 1 else 25
    for _ in range(n):
        task = Task.MAX if rng.random() < 0.5 else Task.MIN
        cfg = generate_trial(rng, task)
        s = initial_state(cfg)
        for _ in range(k - 1):
            s = step(s, Action.SAMPLE)
        est = optimal_action(s)
        brute = _brute_value(s.visible(), s.offer.index, task, k)
        assert max(est.ev_guess, est.ev_sample) == pytest.approx(brute, abs=1e-9)
        assert est.ev_sample <= max(est.ev_guess, est.ev_sample)


def test_guess_on_even_tie_and_a_on_even_posterior():
    # nothing informative: guess EV exactly equals a coin flip with ties
    s = _state((5, 5, 5, 5), ("A1", "B1", "A2", "B2"), Task.MAX, 4)
    est = optimal_action(s)
    assert est.best_action is Action.GUESS_A and est.ev_sample is None


def test_ev_guess_formula():
    assert ev_guess(1.0) == 50 and ev_guess(0.0) == -60 and ev_guess(0.5) == pytest.approx(-5.0)
