"""Per-subject splits, the training loop, checkpoint persistence and the
sample-complexity experiment."""

from __future__ import annotations

import dataclasses
import hashlib
import json
import logging
import math
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from . import __version__
from .analysis import AnalysisTable, pearson
from .encode import encode_records
from .game import Task, TrialRecord
from .model import BehaviorModel, dataset_nll, loss_and_grads, rollout_metrics
from .nn import AdamState, DenseLayer, Graph, NonFiniteError, adam_step
from .rng import child_seed, substream
from .validation import check_records, group_by_subject

log = logging.getLogger(__name__)

CHECKPOINT_FORMAT = "infoseek-checkpoint"
CHECKPOINT_VERSION = 1


class NumericalError(FloatingPointError):
    pass


class CheckpointError(ValueError):
    pass


@dataclass(frozen=True)
class SplitSpec:
    train_fraction: float = 0.6
    stopping_fraction: float = 0.1
    min_trials: int = 5

    def __post_init__(self):
        for name in ("train_fraction", "stopping_fraction"):
            v = getattr(self, name)
            if not 0.0 < v < 1.0:
                raise ValueError(f"{name} must lie in (0, 1), got {v}")


def split(records: Sequence[TrialRecord], spec: SplitSpec = SplitSpec(), rng: Optional[np.random.Generator] = None,
          seed: int = 0) -> Tuple[List[TrialRecord], List[TrialRecord], List[TrialRecord]]:
    """Per-(subject, task) shuffle into (train, stopping, validation).

    ceil(train_fraction * n) trials go to training, of which
    max(1, round(stopping_fraction * n_train)) are carved off for early
    stopping; the rest are validation. Groups below ``min_trials`` are dropped
    with a warning.
    """
    records = check_records(records)
    groups: Dict[tuple, List[TrialRecord]] = {}
    for r in records:
        groups.setdefault((r.subject_id, r.config.task.value), []).append(r)
    train, stop, val = [], [], []
    dropped = []
    for key in sorted(groups):
        recs = groups[key]
        n = len(recs)
        if n < spec.min_trials:
            dropped.append(key)
            continue
        g = rng if rng is not None else substream(seed, "split", *key)
        perm = g.permutation(n)
        n_train = math.ceil(spec.train_fraction * n - 1e-9)
        n_stop = max(1, int(round(spec.stopping_fraction * n_train)))
        shuffled = [recs[i] for i in perm]
        stop += shuffled[:n_stop]
        train += shuffled[n_stop:n_train]
        val += shuffled[n_train:]
    if dropped:
        warnings.warn(f"excluded {len(dropped)} subject/task groups with fewer than {spec.min_trials} trials",
                      RuntimeWarning, stacklevel=2)
    return train, stop, val


@dataclass(frozen=True)
class TrainConfig:
    variant: str = "subj"
    lr: float = 0.003
    batch_size: int = 256
    max_epochs: int = 30
    patience: int = 3
    min_delta: float = 1e-4
    hidden_dim: int = 10
    embedding_dim: int = 2
    seed: int = 0

    def __post_init__(self):
        for name in ("lr", "batch_size", "max_epochs", "patience", "hidden_dim", "embedding_dim"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.min_delta < 0:
            raise ValueError("min_delta must be >= 0")


@dataclass
class ModelCheckpoint:
    config: TrainConfig
    model: BehaviorModel
    log: List[dict] = field(default_factory=list)
    best_epoch: int = 0
    version: int = CHECKPOINT_VERSION

    @property
    def seed(self) -> int:
        return self.config.seed


def _infer_tasks(variant: str, records) -> Tuple[Task, ...]:
    present = sorted({r.config.task for r in records}, key=lambda t: t.value)
    if variant == "multi":
        return (Task.MAX, Task.MIN)
    if len(present) != 1:
        raise ValueError(f"{variant} variant trains on one task; data contains {[t.label for t in present]}")
    return tuple(present)


def train(train_records: Sequence[TrialRecord], stopping_records: Sequence[TrialRecord] = (),
          config: TrainConfig = TrainConfig(), tasks=None) -> ModelCheckpoint:
    """Minimize the mean masked NLL per decision with Adam.

    After every epoch the stopping-set NLL is evaluated; training halts after
    ``patience`` epochs without an improvement of at least ``min_delta``
    nats, and the weights with the lowest stopping NLL seen are restored.
    """
    train_records = check_records(train_records)
    stopping_records = check_records(stopping_records, allow_empty=True)
    tasks = tuple(Task(t) for t in tasks) if tasks else _infer_tasks(config.variant, train_records)
    subjects = sorted({r.subject_id for r in train_records} | {r.subject_id for r in stopping_records})
    model = BehaviorModel.initialize(config.variant, tasks, subjects, substream(config.seed, "init"),
                                     config.hidden_dim, config.embedding_dim)
    arr = encode_records(train_records)
    rows = model.subject_rows(arr.subject_ids)
    monitor = stopping_records if stopping_records else train_records
    adam = AdamState(lr=config.lr)

    def evaluate():
        return dataset_nll(model, train_records), dataset_nll(model, monitor)

    tr, st = evaluate()
    history = [{"epoch": 0, "train_nll": tr, "stopping_nll": st}]
    best_nll, best_epoch, best_params = st, 0, model.copy_params()
    patience_ref, bad = st, 0
    params = model.params()
    n = len(arr)
    for epoch in range(1, config.max_epochs + 1):
        perm = substream(config.seed, "shuffle", epoch).permutation(n)
        for b, start in enumerate(range(0, n, config.batch_size)):
            idx = perm[start:start + config.batch_size]
            sub = _take(arr, idx)
            loss, terms, grads = loss_and_grads(model, sub, rows[idx])
            if not math.isfinite(loss):
                raise NumericalError(f"non-finite loss at epoch {epoch}, batch {b}")
            try:
                adam_step(adam, params, grads)
            except NonFiniteError as exc:
                raise NumericalError(f"epoch {epoch}, batch {b}: {exc}") from None
            model.mark_updated()
        tr, st = evaluate()
        if not (math.isfinite(tr) and math.isfinite(st)):
            raise NumericalError(f"non-finite evaluation NLL after epoch {epoch}")
        history.append({"epoch": epoch, "train_nll": tr, "stopping_nll": st})
        log.debug("epoch %d train %.5f stop %.5f", epoch, tr, st)
        if st < best_nll:
            best_nll, best_epoch, best_params = st, epoch, model.copy_params()
        if st < patience_ref - config.min_delta:
            patience_ref, bad = st, 0
        else:
            bad += 1
            if bad >= config.patience:
                break
    model.load_params(best_params)
    return ModelCheckpoint(config, model, history, best_epoch)


def _take(arr, idx):
    from .model import _take as take

    return take(arr, idx)


# ---------------------------------------------------------------------------
# checkpoint persistence


def _graph_to_dict(g: Graph) -> dict:
    return {
        "inputs": g.inputs,
        "outputs": list(g.outputs),
        "nodes": [
            {"name": n.name, "sources": list(n.sources), "activation": n.layer.activation,
             "weights": n.layer.weights.tolist(), "bias": n.layer.bias.tolist()}
            for n in g.nodes
        ],
    }


def _graph_from_dict(d: dict) -> Graph:
    from .nn import Node

    nodes = [Node(n["name"], tuple(n["sources"]), DenseLayer(np.array(n["weights"], dtype=float).reshape(len(n["bias"]), -1),
                                                             np.array(n["bias"], dtype=float), n["activation"]))
             for n in d["nodes"]]
    return Graph(d["inputs"], nodes, d["outputs"])


def checkpoint_to_dict(ck: ModelCheckpoint) -> dict:
    m = ck.model
    payload = {
        "tool_version": __version__,
        "config": dataclasses.asdict(ck.config),
        "variant": m.variant,
        "tasks": [t.value for t in m.tasks],
        "hidden_dim": m.hidden_dim,
        "embedding_dim": m.embedding_dim,
        "nets": {t.value: _graph_to_dict(m.nets[t]) for t in m.tasks},
        "embeddings": {s: m.embeddings[i].tolist() for i, s in enumerate(m.subject_ids)} if m.embeddings is not None else None,
        "subject_ids": list(m.subject_ids),
        "log": ck.log,
        "best_epoch": ck.best_epoch,
        "master_seed": ck.config.seed,
    }
    body = _canonical(payload)
    return {"format": CHECKPOINT_FORMAT, "version": ck.version,
            "sha256": hashlib.sha256(body.encode("utf-8")).hexdigest(), "payload": payload}


def _canonical(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), allow_nan=False)


def checkpoint_from_dict(doc: dict) -> ModelCheckpoint:
    if not isinstance(doc, dict) or doc.get("format") != CHECKPOINT_FORMAT:
        raise CheckpointError("not an infoseek checkpoint")
    if doc.get("version") != CHECKPOINT_VERSION:
        raise CheckpointError(f"checkpoint format version {doc.get('version')!r} is incompatible with "
                              f"this tool (expects {CHECKPOINT_VERSION})")
    payload = doc.get("payload")
    if payload is None or hashlib.sha256(_canonical(payload).encode("utf-8")).hexdigest() != doc.get("sha256"):
        raise CheckpointError("checksum mismatch: checkpoint is corrupted or was edited")
    try:
        tasks = tuple(Task(t) for t in payload["tasks"])
        nets = {Task(t): _graph_from_dict(g) for t, g in payload["nets"].items()}
        ids = list(payload["subject_ids"])
        emb = None
        if payload["embeddings"] is not None:
            emb = np.array([payload["embeddings"][s] for s in ids], dtype=float).reshape(len(ids), payload["embedding_dim"])
        model = BehaviorModel(payload["variant"], tasks, nets, ids, emb, payload["hidden_dim"], payload["embedding_dim"])
        config = TrainConfig(**payload["config"])
    except (KeyError, TypeError, ValueError) as exc:
        raise CheckpointError(f"malformed checkpoint: {exc}") from None
    return ModelCheckpoint(config, model, payload["log"], payload["best_epoch"], doc["version"])


def dumps_checkpoint(ck: ModelCheckpoint) -> str:
    return json.dumps(checkpoint_to_dict(ck), indent=1, allow_nan=False) + "\n"


def save(ck: ModelCheckpoint, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(dumps_checkpoint(ck))


def load(path) -> ModelCheckpoint:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as exc:
        raise CheckpointError(f"malformed checkpoint file {path}: {exc}") from None
    return checkpoint_from_dict(doc)


# ---------------------------------------------------------------------------
# sample complexity


@dataclass(frozen=True)
class SampleComplexityConfig:
    pool_sizes: Tuple[int, ...] = (200, 500, 1000, 2000)
    n_test_subjects: int = 100
    n_repeats: int = 50
    n_rollouts: int = 20
    task: str = "max"
    seed: int = 0
    n_jobs: int = 1

    def __post_init__(self):
        sizes = tuple(int(s) for s in self.pool_sizes)
        if any(b <= a for a, b in zip(sizes, sizes[1:])):
            raise ValueError("pool sizes must be strictly ascending")
        if sizes and sizes[0] < 0:
            raise ValueError("pool sizes must be >= 0")
        object.__setattr__(self, "pool_sizes", sizes)


METRICS = ("n_moves", "correct", "score")


def subject_rollout_correlations(model: BehaviorModel, validation: Sequence[TrialRecord], rng, n_rollouts: int,
                                 subjects: Optional[Sequence[str]] = None) -> Dict[str, object]:
    """Pearson reports between rolled-out and observed per-subject metric means."""
    by_subj = group_by_subject(validation)
    ids = sorted(by_subj) if subjects is None else [s for s in subjects if s in by_subj]
    recs = [r for s in ids for r in by_subj[s]]
    sim = rollout_metrics(model, [r.subject_id for r in recs], [r.config for r in recs], rng, n_rollouts)
    observed = {"n_moves": np.array([r.n_moves for r in recs], float),
                "correct": np.array([r.correct for r in recs], float),
                "score": np.array([r.score for r in recs], float)}
    owner = np.array([r.subject_id for r in recs])
    out = {}
    for m in METRICS:
        xs = np.array([sim[m][owner == s].mean() for s in ids])
        ys = np.array([observed[m][owner == s].mean() for s in ids])
        try:
            out[m] = pearson(xs, ys, m)
        except ValueError:
            out[m] = None
    return out


def _sc_run(args):
    (train_recs, stop_recs, val_recs, test_ids, train_cfg, n_rollouts, seed, key) = args
    ck = train(train_recs, stop_recs, train_cfg)
    rng = substream(seed, "sc-rollout", *key)
    reps = subject_rollout_correlations(ck.model, val_recs, rng, n_rollouts, test_ids)
    return key, {m: (reps[m].pearson_r if reps[m] is not None else float("nan")) for m in METRICS}


def sample_complexity(records: Sequence[TrialRecord], run: SampleComplexityConfig = SampleComplexityConfig(),
                      train_config: TrainConfig = TrainConfig(variant="subj")) -> Tuple[AnalysisTable, AnalysisTable]:
    """Fit quality for a fixed test cohort as extra subjects join the training pool.

    Returns the per-run table (pool_size, repeat, metric, r) and the summary
    (pool_size, metric, mean r, SEM, runs). Pool size counts the extra
    subjects added to the test cohort.
    """
    task = Task(run.task)
    records = check_records(records, task=task)
    tr, st, va = split(records, seed=run.seed)
    subjects = sorted({r.subject_id for r in tr})
    need = run.n_test_subjects + (run.pool_sizes[-1] if run.pool_sizes else 0)
    if need > len(subjects):
        raise ValueError(f"largest pool needs {need} subjects, dataset has {len(subjects)}")
    perm = substream(run.seed, "sc-test").permutation(len(subjects))
    test_ids = sorted(subjects[i] for i in perm[:run.n_test_subjects])
    test_set = set(test_ids)
    others = [s for s in subjects if s not in test_set]
    by = {name: group_by_subject(recs) for name, recs in (("tr", tr), ("st", st), ("va", va))}
    val_recs = [r for s in test_ids for r in by["va"].get(s, [])]

    jobs = []
    for rep in range(run.n_repeats):
        order = substream(run.seed, "sc-pool", rep).permutation(len(others))
        for size in run.pool_sizes:
            pool = test_ids + [others[i] for i in order[:size]]
            t_recs = [r for s in pool for r in by["tr"].get(s, [])]
            s_recs = [r for s in pool for r in by["st"].get(s, [])]
            cfg = dataclasses.replace(train_config, seed=child_seed(run.seed, "sc-train", rep, size))
            jobs.append((t_recs, s_recs, val_recs, test_ids, cfg, run.n_rollouts, run.seed, (size, rep)))

    if run.n_jobs > 1:
        with ProcessPoolExecutor(max_workers=run.n_jobs) as ex:
            results = dict(ex.map(_sc_run, jobs))
    else:
        results = dict(map(_sc_run, jobs))

    per_run = AnalysisTable("sample_complexity_runs", ["pool_size", "repeat", "metric", "pearson_r"])
    summary = AnalysisTable("sample_complexity", ["pool_size", "metric", "mean_r", "sem_r", "n_runs"])
    for size in run.pool_sizes:
        for m in METRICS:
            rs = []
            for rep in range(run.n_repeats):
                r = results[(size, rep)][m]
                per_run.rows.append([size, rep, m, r])
                if not math.isnan(r):
                    rs.append(r)
            rs = np.array(rs)
            sem = float(rs.std(ddof=1) / math.sqrt(len(rs))) if len(rs) > 1 else None
            summary.rows.append([size, m, float(rs.mean()) if len(rs) else None, sem, len(rs)])
    return per_run, summary
