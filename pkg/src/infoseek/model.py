"""Staged multi-task policy network with per-subject embeddings.

One task network has a stage per decision point. Stage k reads the card
revealed at k (normalized value, row, column), the row of the card offered
next, and either the subject embedding (k = 1) or the previous stage's hidden
state. Two tanh layers of width ``hidden_dim`` produce the stage's hidden
state; two linear heads read [h_k; h_{k-1}] and give the guess-vs-sample
logit and the guess-row-A logit. Stage 4 forces a guess, so it has no guess
head and no offer input.

Variants: ``pop`` (embedding fixed at zero), ``subj`` (learned embeddings,
one task) and ``multi`` (two task networks sharing one embedding table).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .encode import TrialArrays, correct_if_guess, encode_configs, encode_records
from .game import COSTS, Action, GameState, Task, TrialConfig, TrialRecord, make_record
from .nn import DenseLayer, Graph, IDENTITY, Node, TANH
from .oracle import task_index

VARIANTS = ("pop", "subj", "multi")
TASKS = (Task.MAX, Task.MIN)
CUM_COST = np.cumsum(COSTS)  # total cost after revealing k cards, index k-1


def normalize_value(v):
    return (np.asarray(v, dtype=float) - 5.5) / 4.5


def build_task_graph(rng: np.random.Generator, hidden_dim: int = 10, embedding_dim: int = 2) -> Graph:
    inputs = {"emb": embedding_dim, "x1": 4, "x2": 4, "x3": 4, "x4": 3}
    nodes = []
    prev = None
    for k in (1, 2, 3, 4):
        first = ("x1", "emb") if k == 1 else (f"x{k}", prev)
        n_first = sum(inputs[s] if s in inputs else hidden_dim for s in first)
        nodes.append(Node(f"s{k}.l1", first, DenseLayer.glorot(rng, n_first, hidden_dim, TANH)))
        nodes.append(Node(f"s{k}.h", (f"s{k}.l1",), DenseLayer.glorot(rng, hidden_dim, hidden_dim, TANH)))
        head_src = (f"s{k}.h",) if k == 1 else (f"s{k}.h", prev)
        n_head = hidden_dim * len(head_src)
        if k <= 3:
            nodes.append(Node(f"s{k}.guess", head_src, DenseLayer.glorot(rng, n_head, 1, IDENTITY)))
        nodes.append(Node(f"s{k}.row", head_src, DenseLayer.glorot(rng, n_head, 1, IDENTITY)))
        prev = f"s{k}.h"
    outputs = [f"s{k}.guess" for k in (1, 2, 3)] + [f"s{k}.row" for k in (1, 2, 3, 4)]
    return Graph(inputs, nodes, outputs)


@dataclass
class BehaviorModel:
    variant: str
    tasks: Tuple[Task, ...]
    nets: Dict[Task, Graph]
    subject_ids: List[str] = field(default_factory=list)
    embeddings: Optional[np.ndarray] = None  # (n_subjects, embedding_dim); None for pop
    hidden_dim: int = 10
    embedding_dim: int = 2

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"variant must be one of {VARIANTS}, got {self.variant!r}")
        self.tasks = tuple(Task(t) for t in self.tasks)
        if self.variant == "multi" and set(self.tasks) != set(TASKS):
            raise ValueError("multi variant needs both tasks")
        if self.variant != "multi" and len(self.tasks) != 1:
            raise ValueError(f"{self.variant} variant models exactly one task")
        self._index = {s: i for i, s in enumerate(self.subject_ids)}

    @classmethod
    def initialize(cls, variant: str, tasks, subject_ids: Sequence[str], rng: np.random.Generator,
                   hidden_dim: int = 10, embedding_dim: int = 2) -> "BehaviorModel":
        tasks = tuple(Task(t) for t in tasks)
        nets = {t: build_task_graph(rng, hidden_dim, embedding_dim) for t in tasks}
        emb = None
        ids = list(subject_ids)
        if variant != "pop":
            emb = rng.normal(0.0, 0.1, size=(len(ids), embedding_dim))
        return cls(variant, tasks, nets, ids, emb, hidden_dim, embedding_dim)

    # parameters --------------------------------------------------------

    def params(self) -> Dict[str, np.ndarray]:
        out = {}
        for t in self.tasks:
            for k, v in self.nets[t].params().items():
                out[f"{t.value}/{k}"] = v
        if self.embeddings is not None:
            out["embeddings"] = self.embeddings
        return out

    def mark_updated(self):
        for g in self.nets.values():
            g.mark_updated()

    def copy_params(self) -> Dict[str, np.ndarray]:
        return {k: v.copy() for k, v in self.params().items()}

    def load_params(self, values: Dict[str, np.ndarray]):
        params = self.params()
        if set(values) != set(params):
            raise ValueError("parameter sets differ")
        for k, v in values.items():
            params[k][...] = v
        self.mark_updated()

    # embeddings ----------------------------------------------------------

    def subject_rows(self, subject_ids) -> np.ndarray:
        """Row index per subject; -1 for unknown subjects (cold start)."""
        return np.array([self._index.get(s, -1) for s in subject_ids], dtype=np.int64)

    def embedding_matrix(self, rows: np.ndarray) -> np.ndarray:
        out = np.zeros((len(rows), self.embedding_dim))
        if self.embeddings is not None:
            known = rows >= 0
            out[known] = self.embeddings[rows[known]]
        return out

    def embed(self, subject_id: str) -> np.ndarray:
        if self.embeddings is None:
            return np.zeros(self.embedding_dim)
        if subject_id not in self._index:
            raise KeyError(f"unknown subject {subject_id!r}")
        return self.embeddings[self._index[subject_id]].copy()

    def net(self, task) -> Graph:
        task = Task(task)
        if task not in self.nets:
            raise ValueError(f"model has no {task.label} network (tasks: {[t.label for t in self.tasks]})")
        return self.nets[task]


def stage_inputs(arr: TrialArrays, emb: np.ndarray) -> Dict[str, np.ndarray]:
    vnorm = normalize_value(arr.values)
    out = {"emb": emb}
    for k in (1, 2, 3, 4):
        cols = [vnorm[:, k - 1], arr.card_row(k), arr.card_col(k)]
        if k <= 3:
            cols.append(arr.offer_row(k))
        out[f"x{k}"] = np.column_stack(cols).astype(float)
    return out


def _sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def _softplus(z):
    return np.logaddexp(0.0, z)


def _split_by_task(model: BehaviorModel, arr: TrialArrays):
    for t in model.tasks:
        ti = task_index(t)
        idx = np.nonzero(arr.task == ti)[0]
        if len(idx):
            yield t, idx
    stray = ~np.isin(arr.task, [task_index(t) for t in model.tasks])
    if stray.any():
        missing = Task.MAX if arr.task[np.argmax(stray)] == 0 else Task.MIN
        model.net(missing)  # raises with a clear message


def logits(model: BehaviorModel, arr: TrialArrays, rows: np.ndarray):
    """Guess logits (N, 3) and row-A logits (N, 4) for every stage."""
    g = np.zeros((len(arr), 3))
    r = np.zeros((len(arr), 4))
    for t, idx in _split_by_task(model, arr):
        sub = _take(arr, idx)
        out, _ = model.net(t).forward(stage_inputs(sub, model.embedding_matrix(rows[idx])))
        for k in (1, 2, 3):
            g[idx, k - 1] = out[f"s{k}.guess"][:, 0]
        for k in (1, 2, 3, 4):
            r[idx, k - 1] = out[f"s{k}.row"][:, 0]
    return g, r


def _take(arr: TrialArrays, idx) -> TrialArrays:
    return TrialArrays(**{k: v[idx] for k, v in vars(arr).items()})


def decision_masks(n_moves: np.ndarray):
    """Per-stage masks: guess decision faced (N, 3), guessed there (N, 3), row decision at stage (N, 4)."""
    k = np.arange(1, 5)
    faced = (n_moves[:, None] >= k[None, :3])
    guessed = (n_moves[:, None] == k[None, :3])
    row_at = (n_moves[:, None] == k[None, :])
    return faced, guessed, row_at


def loss_terms(g: np.ndarray, r: np.ndarray, n_moves: np.ndarray, guess_a: np.ndarray):
    """Per-record masked NLL, term counts and d(NLL)/d(logits)."""
    faced, guessed, row_at = decision_masks(n_moves)
    ya = guess_a[:, None].astype(float)
    nll_g = np.where(guessed, _softplus(-g), _softplus(g)) * faced
    nll_r = (ya * _softplus(-r) + (1 - ya) * _softplus(r)) * row_at
    dg = (_sigmoid(g) - guessed) * faced
    dr = (_sigmoid(r) - ya) * row_at
    nll = nll_g.sum(axis=1) + nll_r.sum(axis=1)
    n_terms = faced.sum(axis=1) + 1
    return nll, n_terms, dg, dr


def loss_and_grads(model: BehaviorModel, arr: TrialArrays, rows: np.ndarray, normalizer: Optional[float] = None):
    """Summed masked NLL over ``arr`` and gradients of NLL / normalizer.

    ``normalizer`` defaults to the number of decision terms, giving the mean
    NLL per decision.
    """
    total_nll = 0.0
    total_terms = int((np.minimum(arr.n_moves, 3) + 1).sum())
    scale = 1.0 / (total_terms if normalizer is None else normalizer)
    grads = {k: np.zeros_like(v) for k, v in model.params().items()}
    for t, idx in _split_by_task(model, arr):
        sub = _take(arr, idx)
        net = model.net(t)
        emb = model.embedding_matrix(rows[idx])
        out, cache = net.forward(stage_inputs(sub, emb))
        g = np.column_stack([out[f"s{k}.guess"][:, 0] for k in (1, 2, 3)])
        r = np.column_stack([out[f"s{k}.row"][:, 0] for k in (1, 2, 3, 4)])
        nll, _, dg, dr = loss_terms(g, r, sub.n_moves, sub.guess_a)
        total_nll += float(nll.sum())
        ograds = {f"s{k}.guess": dg[:, k - 1:k] * scale for k in (1, 2, 3)}
        ograds.update({f"s{k}.row": dr[:, k - 1:k] * scale for k in (1, 2, 3, 4)})
        pg, ig = net.backward(cache, ograds)
        for k, v in pg.items():
            grads[f"{t.value}/{k}"] += v
        if model.embeddings is not None:
            known = rows[idx] >= 0
            np.add.at(grads["embeddings"], rows[idx][known], ig["emb"][known])
    return total_nll, total_terms, grads


def chain_probabilities(g: np.ndarray, r: np.ndarray):
    """P(n_moves = k) for k = 1..4 and P(guess A | guess at k)."""
    pg = _sigmoid(g)
    p_n = np.zeros((len(g), 4))
    alive = np.ones(len(g))
    for k in range(3):
        p_n[:, k] = alive * pg[:, k]
        alive = alive * (1.0 - pg[:, k])
    p_n[:, 3] = alive
    return p_n, _sigmoid(r)


# public operations ----------------------------------------------------------


def policy(model: BehaviorModel, subject_id: str, task, state: GameState) -> Dict[Action, float]:
    """Distribution over legal actions at ``state`` for ``subject_id``."""
    task = Task(task)
    model.net(task)
    if state.terminated:
        raise ValueError("policy queried on a terminated state")
    if state.config.task is not task:
        raise ValueError("state belongs to a different task")
    arr = encode_configs([state.config], [subject_id])
    g, r = logits(model, arr, model.subject_rows([subject_id]))
    k = state.decision_point
    p_a = float(_sigmoid(r[0, k - 1]))
    if k >= 4:
        return {Action.GUESS_A: p_a, Action.GUESS_B: 1.0 - p_a}
    p_guess = float(_sigmoid(g[0, k - 1]))
    return {Action.SAMPLE: 1.0 - p_guess, Action.GUESS_A: p_guess * p_a, Action.GUESS_B: p_guess * (1.0 - p_a)}


def record_nll(model: BehaviorModel, records: Sequence[TrialRecord]):
    """Per-record (nll_sum, n_terms) arrays."""
    arr = encode_records(records)
    g, r = logits(model, arr, model.subject_rows(arr.subject_ids))
    nll, n_terms, _, _ = loss_terms(g, r, arr.n_moves, arr.guess_a)
    return nll, n_terms


def trial_nll(model: BehaviorModel, record: TrialRecord) -> Tuple[float, int]:
    nll, n = record_nll(model, [record])
    return float(nll[0]), int(n[0])


def dataset_nll(model: BehaviorModel, records: Sequence[TrialRecord]) -> float:
    """Mean NLL per decision term."""
    if len(records) == 0:
        raise ValueError("empty dataset")
    nll, n = record_nll(model, records)
    return float(nll.sum() / n.sum())


def sample_actions(model: BehaviorModel, arr: TrialArrays, rows: np.ndarray, rng: np.random.Generator,
                   n_rollouts: int = 1):
    """Sampled (n_moves, guess_a) arrays of shape (N, n_rollouts)."""
    g, r = logits(model, arr, rows)
    p_n, p_a = chain_probabilities(g, r)
    cdf = np.cumsum(p_n, axis=1)
    cdf[:, -1] = 1.0
    u = rng.random((len(arr), n_rollouts))
    n_moves = 1 + (u[:, :, None] >= cdf[:, None, :]).sum(axis=2)
    n_moves = np.minimum(n_moves, 4)
    pa = np.take_along_axis(p_a, n_moves - 1, axis=1)
    guess_a = rng.random((len(arr), n_rollouts)) < pa
    return n_moves, guess_a


def rollout_metrics(model: BehaviorModel, subject_ids, configs: Sequence[TrialConfig], rng: np.random.Generator,
                    n_rollouts: int = 1) -> Dict[str, np.ndarray]:
    """Per-trial rollout averages of n_moves, correct and score."""
    if n_rollouts < 1:
        raise ValueError("n_rollouts must be >= 1")
    arr = encode_configs(configs, list(subject_ids))
    n_moves, guess_a = sample_actions(model, arr, model.subject_rows(arr.subject_ids), rng, n_rollouts)
    ok_a, ok_b = correct_if_guess(arr)
    correct = np.where(guess_a, ok_a[:, None], ok_b[:, None])
    score = np.where(correct, 50, -60) - CUM_COST[n_moves - 1]
    return {
        "n_moves": n_moves.mean(axis=1),
        "correct": correct.mean(axis=1),
        "score": score.mean(axis=1),
    }


def rollout(model: BehaviorModel, subject_id: str, config: TrialConfig, rng: np.random.Generator,
            n_rollouts: int) -> Dict[str, float]:
    m = rollout_metrics(model, [subject_id], [config], rng, n_rollouts)
    return {k: float(v[0]) for k, v in m.items()}


def simulate_records(model: BehaviorModel, subject_ids, configs: Sequence[TrialConfig],
                     rng: np.random.Generator) -> List[TrialRecord]:
    """One sampled behavioral record per (subject, config)."""
    arr = encode_configs(configs, list(subject_ids))
    n_moves, guess_a = sample_actions(model, arr, model.subject_rows(arr.subject_ids), rng, 1)
    out = []
    for i, (sid, cfg) in enumerate(zip(subject_ids, configs)):
        n = int(n_moves[i, 0])
        actions = [Action.SAMPLE] * (n - 1) + [Action.GUESS_A if guess_a[i, 0] else Action.GUESS_B]
        out.append(make_record(sid, f"sim-{i:06d}", cfg, actions))
    return out
