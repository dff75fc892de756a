"""Exact Bayesian ground truth for the card game.

Unseen cards are i.i.d. uniform on 1..10, so every posterior quantity is an
average over at most 10**3 completions. Both are tabulated once for all
2 x 11**4 visibility patterns (value 0 marks a hidden card), which makes
lookups O(1) and vectorizable over arrays of states.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from typing import Optional

import numpy as np

from .game import (
    COSTS,
    REWARD_CORRECT,
    REWARD_WRONG,
    Action,
    GameState,
    Task,
)

__all__ = [
    "Posterior",
    "ValueEstimate",
    "posterior",
    "posterior_table",
    "tie_table",
    "posterior_b_table",
    "posterior_mc",
    "optimal_action",
    "ev_guess",
    "task_index",
]


@dataclass(frozen=True)
class Posterior:
    p_row_a: float
    p_tie: float = 0.0
    p_row_b: Optional[float] = None  # tabulated directly; None means 1 - p_row_a

    def __post_init__(self):
        if self.p_row_b is None:
            object.__setattr__(self, "p_row_b", 1.0 - self.p_row_a)

    @property
    def p_correct_best(self) -> float:
        """Probability that the better guess is judged correct (ties count as correct)."""
        return max(self.p_row_a, self.p_row_b) + 0.5 * self.p_tie


@dataclass(frozen=True)
class ValueEstimate:
    ev_guess: float
    ev_sample: Optional[float]
    best_action: Action
    p_correct_best: float


def task_index(task) -> int:
    return 0 if Task(task) is Task.MAX else 1


@lru_cache(maxsize=1)
def _tables():
    v = np.arange(1, 11)
    prod = np.multiply.outer(v, v)  # prod[x, y] = x * y
    pa = prod[:, :, None, None]
    pb = prod[None, None, :, :]
    tie = (pa == pb).astype(float)
    a_max = (pa > pb) + 0.5 * tie
    a_min = (pa < pb) + 0.5 * tie
    # B's probabilities are averaged from their own indicators rather than
    # taken as 1 - p_A, so that p_A under MaxProd and p_B under MinProd are
    # bit-identical floats.
    wins = {0: (a_max, a_min), 1: (a_min, a_max)}

    post = np.zeros((2, 11, 11, 11, 11))
    post_b = np.zeros((2, 11, 11, 11, 11))
    ties = np.zeros((2, 11, 11, 11, 11))
    for mask in range(16):
        hidden = tuple(i for i in range(4) if mask >> i & 1)
        dst = tuple(slice(0, 1) if i in hidden else slice(1, 11) for i in range(4))

        def avg(x):
            return x.mean(axis=hidden, keepdims=True) if hidden else x

        for t in (0, 1):
            win_a, win_b = wins[t]
            post[(t,) + dst] = avg(win_a)
            post_b[(t,) + dst] = avg(win_b)
            ties[(t,) + dst] = avg(tie)
    for arr in (post, post_b, ties):
        arr.setflags(write=False)
    return post, ties, post_b


def posterior_table() -> np.ndarray:
    """P(row A is the answer) indexed [task, a1, a2, b1, b2]; 0 marks a hidden card."""
    return _tables()[0]


def tie_table() -> np.ndarray:
    return _tables()[1]


def posterior_b_table() -> np.ndarray:
    """P(row B is the answer), tabulated like :func:`posterior_table`."""
    return _tables()[2]


def posterior(state: GameState) -> Posterior:
    key = (task_index(state.config.task),) + state.visible()
    post, ties, post_b = _tables()
    return Posterior(float(post[key]), float(ties[key]), float(post_b[key]))


def ev_guess(p_correct: float) -> float:
    return REWARD_CORRECT * p_correct + REWARD_WRONG * (1.0 - p_correct)


def posterior_mc(state: GameState, rng: np.random.Generator, n_samples: int) -> float:
    """Monte Carlo estimate of ``posterior(state).p_row_a`` (standard error <= 0.5/sqrt(n))."""
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    vis = np.array(state.visible())
    draws = np.tile(vis, (n_samples, 1))
    hidden = vis == 0
    draws[:, hidden] = rng.integers(1, 11, size=(n_samples, int(hidden.sum())))
    pa = draws[:, 0] * draws[:, 1]
    pb = draws[:, 2] * draws[:, 3]
    if Task(state.config.task) is Task.MAX:
        win = (pa > pb) + 0.5 * (pa == pb)
    else:
        win = (pa < pb) + 0.5 * (pa == pb)
    return float(win.mean())


def _guess_value(t: int, vis: tuple) -> float:
    post, ties, post_b = _tables()
    key = (t,) + vis
    return ev_guess(max(post[key], post_b[key]) + 0.5 * ties[key])


@lru_cache(maxsize=None)
def _continuation(t: int, vis: tuple) -> float:
    """Optimal value on arriving at a decision point whose offer is not yet known."""
    hidden = [i for i in range(4) if vis[i] == 0]
    if not hidden:
        return _guess_value(t, vis)
    return float(np.mean([_state_value(t, vis, o) for o in hidden]))


@lru_cache(maxsize=None)
def _sample_value(t: int, vis: tuple, offer: int) -> float:
    k = sum(1 for x in vis if x)  # current decision point
    total = 0.0
    for v in range(1, 11):
        nxt = list(vis)
        nxt[offer] = v
        total += _continuation(t, tuple(nxt))
    return -COSTS[k] + total / 10.0


@lru_cache(maxsize=None)
def _state_value(t: int, vis: tuple, offer: int) -> float:
    return max(_guess_value(t, vis), _sample_value(t, vis, offer))


def optimal_action(state: GameState) -> ValueEstimate:
    """Reward-maximizing action by backward induction (sunk costs ignored).

    Future offers are modelled as uniform over the still-hidden cards. Ties
    between guessing and sampling resolve to guessing; an exactly even row
    posterior resolves to row A.
    """
    t = task_index(state.config.task)
    vis = state.visible()
    post = posterior(state)
    g = ev_guess(post.p_correct_best)
    guess = Action.GUESS_A if post.p_row_a >= post.p_row_b else Action.GUESS_B
    if state.decision_point >= 4:
        return ValueEstimate(g, None, guess, post.p_correct_best)
    s = _sample_value(t, vis, state.offer.index)
    return ValueEstimate(g, s, guess if g >= s else Action.SAMPLE, post.p_correct_best)


def lookup_posterior(task_idx: np.ndarray, visible: np.ndarray) -> np.ndarray:
    """Vectorized posterior for arrays of (task index, visible values (n, 4))."""
    post = posterior_table()
    visible = np.asarray(visible)
    return post[task_idx, visible[:, 0], visible[:, 1], visible[:, 2], visible[:, 3]]

