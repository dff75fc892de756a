"""Parametric agents: a biased-softmax generator for synthetic populations,
the reward-optimal reference agent, and the pooled softmax baseline."""

from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass, field
from typing import Callable, Dict, Iterable, List, Optional, Sequence

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .encode import TrialArrays, encode_records
from .game import (
    COSTS,
    Action,
    AgentParams,
    GameState,
    SubjectProfile,
    Task,
    TrialConfig,
    TrialRecord,
    generate_trial,
    initial_state,
    make_record,
    step,
)
from .oracle import optimal_action, posterior
from .rng import substream
from .validation import check_records

log = logging.getLogger(__name__)

LOGIT_CLIP = 20.0
COEF_BOUND = 20.0

# One entry per AgentParams field: (family, location, scale). ``b`` is drawn
# once per subject and shared by the three decision points.
DEFAULT_DISTRIBUTIONS: Dict[str, tuple] = {
    "tau": ("lognormal", 0.0, 0.25),
    "w_conf": ("normal", 2.0, 0.5),
    "w_cost": ("normal", -1.0, 0.3),
    "b": ("normal", -2.0, 1.0),
    "delta_frame": ("normal", 0.4, 0.2),
    "alpha": ("normal", 0.8, 0.6),
    "rho": ("normal", 0.8, 0.3),
}

# Strong between-subject spread of the guess intercept: per-subject behavior
# is dominated by the subject rather than by the trial layout.
HETEROGENEOUS_DISTRIBUTIONS: Dict[str, tuple] = dict(DEFAULT_DISTRIBUTIONS, b=("normal", -2.0, 3.0))

PRESETS = {"default": DEFAULT_DISTRIBUTIONS, "heterogeneous": HETEROGENEOUS_DISTRIBUTIONS}


def _sigmoid(x: float) -> float:
    if x >= 0:
        return 1.0 / (1.0 + math.exp(-x))
    z = math.exp(x)
    return z / (1.0 + z)


def _logit(p: float) -> float:
    p = min(max(p, 1e-12), 1.0 - 1e-12)
    return max(-LOGIT_CLIP, min(LOGIT_CLIP, math.log(p / (1.0 - p))))


def agent_policy(params: AgentParams, state: GameState) -> Dict[Action, float]:
    """Action distribution of the biased-softmax generator at ``state``.

    The guess propensity grows with confidence |logit p(A)|, shifts with the
    next card's cost and the task framing, and drops when the offered card
    lies in the currently favored row; the row choice is a tempered softmax on
    the evidence, pushed away from the row whose card was offered.
    """
    if state.terminated:
        raise ValueError("policy queried on a terminated state")
    e = _logit(posterior(state).p_row_a)
    k = state.decision_point
    offer = state.offer
    o = offer.row_sign if offer is not None else 0

    if k <= 3:
        favored = 1 if e > 0 else (-1 if e < 0 else 0)
        z = (
            params.w_conf * abs(e)
            + params.w_cost * COSTS[k] / 20.0
            + params.b[k - 1]
            + params.delta_frame * (state.config.task is Task.MAX)
            - params.alpha * (favored != 0 and o == favored)
        )
        p_guess = _sigmoid(z)
    else:
        p_guess = 1.0

    z_row = e / params.tau - params.rho * o
    p_a = _sigmoid(max(-700.0, min(700.0, z_row)))
    dist = {Action.GUESS_A: p_guess * p_a, Action.GUESS_B: p_guess * (1.0 - p_a)}
    if k <= 3:
        dist[Action.SAMPLE] = 1.0 - p_guess
    return dist


def optimal_policy(state: GameState) -> Dict[Action, float]:
    """Reward-optimal agent; an exactly even row posterior is split 50/50."""
    est = optimal_action(state)
    if est.best_action is Action.SAMPLE:
        return {Action.SAMPLE: 1.0, Action.GUESS_A: 0.0, Action.GUESS_B: 0.0}
    p_a = posterior(state).p_row_a
    if p_a == 0.5:
        dist = {Action.GUESS_A: 0.5, Action.GUESS_B: 0.5}
    else:
        dist = {est.best_action: 1.0, (Action.GUESS_B if est.best_action is Action.GUESS_A else Action.GUESS_A): 0.0}
    if state.decision_point <= 3:
        dist[Action.SAMPLE] = 0.0
    return dist


_ACTION_ORDER = (Action.SAMPLE, Action.GUESS_A, Action.GUESS_B)


def play(policy: Callable[[GameState], Dict[Action, float]], config: TrialConfig, rng: np.random.Generator) -> tuple:
    """Roll one trial under ``policy``; returns the action sequence."""
    state = initial_state(config)
    actions = []
    while not state.terminated:
        dist = policy(state)
        u = rng.random()
        acc = 0.0
        chosen = None
        for a in _ACTION_ORDER:
            p = dist.get(a, 0.0)
            if p <= 0.0:
                continue
            acc += p
            chosen = a
            if u < acc:
                break
        actions.append(chosen)
        state = step(state, chosen)
    return tuple(actions)


def _draw(rng: np.random.Generator, spec: tuple) -> float:
    family, loc, scale = spec
    if family == "normal":
        return float(rng.normal(loc, scale)) if scale > 0 else float(loc)
    if family == "lognormal":
        return float(math.exp(rng.normal(loc, scale) if scale > 0 else loc))
    if family == "constant":
        return float(loc)
    raise ValueError(f"unknown distribution family {family!r}")


def sample_population(rng: np.random.Generator, n_subjects: int, param_distributions: Optional[dict] = None,
                      prefix: str = "s") -> List[SubjectProfile]:
    """Draw ``n_subjects`` synthetic subjects with known generator parameters.

    ``param_distributions`` is a preset name or a partial mapping overriding
    :data:`DEFAULT_DISTRIBUTIONS`.

    The generator's ``alpha`` and ``rho`` double as the subject's extrinsic
    "approach" and "avoid" parameters.
    """
    if n_subjects < 1:
        raise ValueError("n_subjects must be >= 1")
    dists = dict(DEFAULT_DISTRIBUTIONS)
    if isinstance(param_distributions, str):
        if param_distributions not in PRESETS:
            raise ValueError(f"unknown preset {param_distributions!r}; choose from {sorted(PRESETS)}")
        param_distributions = PRESETS[param_distributions]
    if param_distributions:
        unknown = set(param_distributions) - set(dists)
        if unknown:
            raise ValueError(f"unknown generator parameters: {sorted(unknown)}")
        dists.update({k: tuple(v) for k, v in param_distributions.items()})
    width = max(4, len(str(n_subjects - 1)))
    out = []
    for i in range(n_subjects):
        vals = {name: _draw(rng, dists[name]) for name in ("tau", "w_conf", "w_cost", "b", "delta_frame", "alpha", "rho")}
        b = vals.pop("b")
        params = AgentParams(b=(b, b, b), **vals)
        out.append(SubjectProfile(
            subject_id=f"{prefix}{i:0{width}d}",
            approach_param=params.alpha,
            avoid_param=params.rho,
            generator_params=params,
        ))
    return out


def simulate_subject(profile: SubjectProfile, task: Task, n_trials: int, rng: np.random.Generator,
                     policy: Optional[Callable] = None, trial_offset: int = 0) -> List[TrialRecord]:
    """Generate ``n_trials`` engine-legal records for one subject on one task."""
    if n_trials < 1:
        raise ValueError("n_trials must be >= 1")
    if policy is None:
        if profile.generator_params is None:
            raise ValueError(f"subject {profile.subject_id} has no generator parameters")
        params = profile.generator_params
        policy = lambda s: agent_policy(params, s)  # noqa: E731
    task = Task(task)
    records = []
    for i in range(n_trials):
        config = generate_trial(rng, task)
        actions = play(policy, config, rng)
        records.append(make_record(profile.subject_id, f"{task.value}-{trial_offset + i:03d}", config, actions))
    return records


def simulate_population(profiles: Sequence[SubjectProfile], tasks: Iterable[Task], n_trials: int,
                        seed: int, policy: Optional[Callable] = None) -> List[TrialRecord]:
    """Simulate every subject on every task; one random stream per (subject, task)."""
    records = []
    for prof in profiles:
        for task in tasks:
            rng = substream(seed, "simulate", prof.subject_id, Task(task).value)
            records.extend(simulate_subject(prof, task, n_trials, rng, policy=policy))
    return records


def simulate_optimal(task: Task, n_trials: int, seed: int, subject_id: str = "optimal") -> List[TrialRecord]:
    rng = substream(seed, "optimal", Task(task).value)
    prof = SubjectProfile(subject_id)
    return simulate_subject(prof, task, n_trials, rng, policy=optimal_policy)


# ---------------------------------------------------------------------------
# pooled softmax baseline


@dataclass
class LogitFit:
    coef: np.ndarray
    se: np.ndarray
    nll: float
    n_iter: int
    converged: bool
    degenerate: bool
    nll_trace: List[float] = field(default_factory=list)


def _softplus(z):
    return np.logaddexp(0.0, z)


def fit_logistic(X: np.ndarray, y: np.ndarray, bound: float = COEF_BOUND, tol: float = 1e-6,
                 max_iter: int = 200) -> LogitFit:
    """Maximum-likelihood logistic regression inside the box |coef| <= bound.

    Projected Newton steps with Armijo backtracking, so the summed NLL never
    increases; stops when the projected gradient norm drops below ``tol``.
    Coefficients pinned at the bound flag a separable / single-class cell.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    n, d = X.shape

    def nll_of(b):
        z = X @ b
        return float(np.sum(_softplus(z) - y * z))

    beta = np.zeros(d)
    f = nll_of(beta)
    trace = [f]
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        z = X @ beta
        p = 1.0 / (1.0 + np.exp(-z))
        g = X.T @ (p - y)
        at_hi = (beta >= bound) & (g < 0)
        at_lo = (beta <= -bound) & (g > 0)
        free = ~(at_hi | at_lo)
        if np.linalg.norm(g[free]) < tol:
            converged = True
            it -= 1
            break
        w = p * (1.0 - p)
        H = (X * w[:, None]).T @ X
        direction = np.zeros(d)
        Hf = H[np.ix_(free, free)] + 1e-10 * np.eye(int(free.sum()))
        try:
            direction[free] = -np.linalg.solve(Hf, g[free])
        except np.linalg.LinAlgError:
            direction[free] = -g[free]
        if direction @ g >= 0:
            direction = -g * free
        t = 1.0
        improved = False
        for _ in range(60):
            cand = np.clip(beta + t * direction, -bound, bound)
            fc = nll_of(cand)
            if fc <= f + 1e-4 * (g @ (cand - beta)) or fc < f:
                improved = fc <= f
                break
            t *= 0.5
        if not improved:
            break
        beta, f = cand, fc
        trace.append(f)
    single_class = n == 0 or bool(np.all(y == y[0]))
    degenerate = single_class or bool(np.any(np.abs(beta) >= bound - 1e-9))
    z = X @ beta
    p = 1.0 / (1.0 + np.exp(-z))
    H = (X * (p * (1 - p))[:, None]).T @ X
    try:
        se = np.sqrt(np.clip(np.diag(np.linalg.inv(H)), 0.0, None))
    except np.linalg.LinAlgError:
        se = np.full(d, np.inf)
    return LogitFit(beta, se, f, it, converged, degenerate, trace)


def guess_features(arr: TrialArrays, k: int) -> np.ndarray:
    """Guess-vs-sample regressors at DP k: revealed values - 5.5 (reveal order),
    offer-in-favored-row, offer row (+1 A / -1 B), intercept."""
    post = arr.posterior(k)
    favored = np.sign(post - 0.5)
    offer = arr.offer_row(k)
    cols = [arr.values[:, j] - 5.5 for j in range(k)]
    cols += [((favored != 0) & (offer == favored)).astype(float), offer.astype(float), np.ones(len(arr))]
    return np.column_stack(cols)


def row_features(arr: TrialArrays, k: np.ndarray) -> np.ndarray:
    """Row-choice regressors at per-trial DP ``k``: summed centred evidence A - B,
    offer row, intercept."""
    evidence = np.zeros(len(arr))
    for j in range(4):
        seen = j < k
        sign = np.where(arr.order[:, j] < 2, 1.0, -1.0)
        evidence += seen * sign * (arr.values[:, j] - 5.5)
    offer = np.zeros(len(arr))
    live = k <= 3
    idx = np.where(live)[0]
    offer[idx] = np.where(arr.order[idx, k[idx]] < 2, 1.0, -1.0)
    return np.column_stack([evidence, offer, np.ones(len(arr))])


@dataclass
class BaselineFit:
    guess: Dict[tuple, LogitFit]  # (task index, DP) -> fit
    row: Dict[int, LogitFit]  # task index -> fit
    warnings: List[str] = field(default_factory=list)

    @property
    def nll(self) -> float:
        return sum(f.nll for f in self.guess.values()) + sum(f.nll for f in self.row.values())


def fit_baseline(records: Sequence[TrialRecord]) -> BaselineFit:
    arr = encode_records(check_records(records))
    fit = BaselineFit({}, {})
    for t in np.unique(arr.task):
        sub = _subset(arr, arr.task == t)
        for k in (1, 2, 3):
            reach = sub.n_moves >= k
            if not reach.any():
                raise ValueError(f"no decisions at DP{k} for task index {t}")
            cell = _subset(sub, reach)
            fit.guess[(int(t), k)] = _fit_cell(guess_features(cell, k), cell.n_moves == k, f"task {t} DP{k}", fit)
        fit.row[int(t)] = _fit_cell(row_features(sub, sub.n_moves), sub.guess_a, f"task {t} row", fit)
    return fit


def _fit_cell(X, y, name, fit: BaselineFit) -> LogitFit:
    res = fit_logistic(X, y)
    if res.degenerate:
        msg = f"{name}: separable or single-class cell, coefficients clamped to |b| <= {COEF_BOUND:g}"
        fit.warnings.append(msg)
        warnings.warn(msg, RuntimeWarning, stacklevel=3)
    return res


def _subset(arr: TrialArrays, mask) -> TrialArrays:
    return TrialArrays(**{k: v[mask] for k, v in vars(arr).items()})


def baseline_decision_logprobs(fit: BaselineFit, records: Sequence[TrialRecord]) -> tuple:
    """(sum of log-probabilities of the observed choices, number of decisions)."""
    arr = encode_records(records)
    total, count = 0.0, 0
    for t in np.unique(arr.task):
        sub = _subset(arr, arr.task == t)
        for k in (1, 2, 3):
            cell = _subset(sub, sub.n_moves >= k)
            if not len(cell):
                continue
            z = guess_features(cell, k) @ fit.guess[(int(t), k)].coef
            y = (cell.n_moves == k).astype(float)
            total -= float(np.sum(_softplus(z) - y * z))
            count += len(cell)
        z = row_features(sub, sub.n_moves) @ fit.row[int(t)].coef
        total -= float(np.sum(_softplus(z) - sub.guess_a * z))
        count += len(sub)
    return total, count


def baseline_nll(fit: BaselineFit, records: Sequence[TrialRecord]) -> float:
    """Mean negative log-likelihood per recorded decision."""
    total, count = baseline_decision_logprobs(fit, records)
    if count == 0:
        raise ValueError("empty dataset")
    return -total / count


class SoftmaxBaseline(BaseEstimator):
    """Population-level softmax choice model, one logistic fit per task and stage.

    ``fit`` takes a sequence of :class:`TrialRecord`; ``score`` returns the
    negative mean NLL per decision so that larger is better.
    """

    def fit(self, X, y=None):
        self.fit_ = fit_baseline(X)
        return self

    def nll(self, X) -> float:
        check_is_fitted(self, "fit_")
        return baseline_nll(self.fit_, check_records(X))

    def score(self, X, y=None) -> float:
        return -self.nll(X)
