"""Tabular bias metrics, per-subject behavior summaries, correlations and
embedding bucket analyses."""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from typing import List, Mapping, Optional, Sequence

import numpy as np
from scipy import special

from .encode import ROW_SIGN, encode_records
from .game import Task, TrialRecord
from .validation import group_by_subject


def format_cell(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return "1" if v else "0"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        if math.isnan(v):
            return ""
        return format(float(v), ".17g")
    return str(v)


@dataclass
class AnalysisTable:
    """Rectangular table; probability cells come with their sample count and
    are ``None`` when the count is zero."""

    name: str
    columns: List[str]
    rows: List[list] = field(default_factory=list)

    def __post_init__(self):
        for r in self.rows:
            if len(r) != len(self.columns):
                raise ValueError(f"{self.name}: row of length {len(r)} for {len(self.columns)} columns")

    def column(self, name: str) -> list:
        j = self.columns.index(name)
        return [r[j] for r in self.rows]

    def records(self) -> List[dict]:
        return [dict(zip(self.columns, r)) for r in self.rows]

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(self.columns)
        for r in self.rows:
            w.writerow([format_cell(v) for v in r])
        return buf.getvalue()

    def write_csv(self, path):
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write(self.to_csv())

    def to_json(self) -> str:
        def clean(v):
            if isinstance(v, (np.integer,)):
                return int(v)
            if isinstance(v, (float, np.floating)):
                return None if math.isnan(v) else float(v)
            if isinstance(v, np.bool_):
                return bool(v)
            return v

        return json.dumps({"name": self.name, "columns": self.columns,
                           "rows": [[clean(v) for v in r] for r in self.rows]}, indent=1)


def _rate(hits: int, n: int) -> Optional[float]:
    return hits / n if n else None


def _diff_se(p1, n1, p2, n2):
    if not n1 or not n2:
        return None, None
    se = math.sqrt(p1 * (1 - p1) / n1 + p2 * (1 - p2) / n2)
    return p1 - p2, se


# ---------------------------------------------------------------------------
# bias metrics


def framing_effect(records: Sequence[TrialRecord]) -> AnalysisTable:
    """Probability of guessing right after the first card, by its value and task."""
    arr = encode_records(records)
    first = arr.values[:, 0]
    dp1 = arr.n_moves == 1
    rows = []
    for v in range(1, 11):
        cells = []
        for t in (0, 1):
            m = (first == v) & (arr.task == t)
            n = int(m.sum())
            cells.append((_rate(int((dp1 & m).sum()), n), n))
        (pmax, nmax), (pmin, nmin) = cells
        diff, se = _diff_se(pmax, nmax, pmin, nmin)
        rows.append([v, pmax, pmin, diff, se, nmax, nmin])
    return AnalysisTable("framing", ["first_card_value", "p_guess_max", "p_guess_min", "diff", "se_diff", "n_max", "n_min"], rows)


def _dp2_cross_row(records, task):
    arr = encode_records([r for r in records if r.config.task is Task(task)])
    rs = ROW_SIGN[arr.order]
    keep = (arr.n_moves >= 2) & (rs[:, 0] != rs[:, 1])
    return arr, rs, keep


def approach_heatmap(records: Sequence[TrialRecord], task) -> AnalysisTable:
    """P(accept the DP2 offer) after one card in each row, keyed by
    (value in the offered row, value in the other row)."""
    arr, rs, keep = _dp2_cross_row(records, task)
    offer_row = rs[:, 2]
    offered_val = np.where(rs[:, 0] == offer_row, arr.values[:, 0], arr.values[:, 1])
    other_val = np.where(rs[:, 0] == offer_row, arr.values[:, 1], arr.values[:, 0])
    accept = arr.n_moves >= 3
    rows = []
    for x in range(1, 11):
        for y in range(1, 11):
            m = keep & (offered_val == x) & (other_val == y)
            n = int(m.sum())
            rows.append([x, y, _rate(int((accept & m).sum()), n), n])
    return AnalysisTable(f"approach_{Task(task).value}", ["offered_row_value", "other_row_value", "p_accept", "n"], rows)


def approach_excess(records: Sequence[TrialRecord], task=None) -> dict:
    """Acceptance of the DP2 offer when it lies in the evidence-favored row vs
    the other row, after one card in each row (ties in evidence excluded)."""
    tasks = [Task(task)] if task is not None else [Task.MAX, Task.MIN]
    hits = {True: [0, 0], False: [0, 0]}
    for t in tasks:
        arr, rs, keep = _dp2_cross_row(records, t)
        if not len(arr):
            continue
        post = arr.posterior(2)
        offer_row = rs[:, 2]
        p_offer = np.where(offer_row == 1, post, 1.0 - post)
        accept = arr.n_moves >= 3
        for fav, m in ((True, keep & (p_offer > 0.5)), (False, keep & (p_offer < 0.5))):
            hits[fav][0] += int((accept & m).sum())
            hits[fav][1] += int(m.sum())
    p_fav, n_fav = _rate(*hits[True]), hits[True][1]
    p_unf, n_unf = _rate(*hits[False]), hits[False][1]
    diff, se = _diff_se(p_fav, n_fav, p_unf, n_unf)
    z = diff / se if diff is not None and se else None
    return {"p_favored": p_fav, "n_favored": n_fav, "p_unfavored": p_unf, "n_unfavored": n_unf,
            "diff": diff, "se": se, "z": z}


def reject_unsampled(records: Sequence[TrialRecord], task) -> AnalysisTable:
    """For trials guessed at DP1: P(guess the first card's row) by its value,
    split by whether the declined offer was in that row."""
    arr = encode_records([r for r in records if r.config.task is Task(task) and r.n_moves == 1])
    rows = []
    if len(arr):
        rs = ROW_SIGN[arr.order]
        ref = rs[:, 0]
        same = rs[:, 1] == ref
        chose_ref = np.where(ref == 1, arr.guess_a == 1, arr.guess_a == 0)
        first = arr.values[:, 0]
    for v in range(1, 11):
        if not len(arr):
            break
        m_same = (first == v) & same
        m_other = (first == v) & ~same
        ns, no = int(m_same.sum()), int(m_other.sum())
        ps, po = _rate(int((chose_ref & m_same).sum()), ns), _rate(int((chose_ref & m_other).sum()), no)
        diff, se = _diff_se(ps, ns, po, no)
        rows.append([v, ps, ns, po, no, diff, se])
    return AnalysisTable(f"reject_{Task(task).value}",
                         ["first_card_value", "p_ref_same_row_offer", "n_same", "p_ref_other_row_offer", "n_other", "diff", "se_diff"],
                         rows)


# ---------------------------------------------------------------------------
# per-subject summaries and correlations


def subject_metrics(records: Sequence[TrialRecord]) -> AnalysisTable:
    rows = []
    for sid, recs in group_by_subject(records).items():
        dts = [r.decision_time_ms for r in recs if r.decision_time_ms is not None]
        rows.append([
            sid,
            float(np.mean([r.n_moves for r in recs])),
            float(np.mean([r.correct for r in recs])),
            float(np.mean([r.score for r in recs])),
            len(recs),
            float(np.mean(np.log(dts))) if dts else None,
        ])
    return AnalysisTable("subject_metrics", ["subject_id", "mean_n_moves", "accuracy", "mean_score", "n_trials", "mean_log_decision_time"], rows)


@dataclass(frozen=True)
class CorrelationReport:
    metric: str
    n: int
    pearson_r: float
    p_value: float
    mean_x: float
    sd_x: float
    mean_y: float
    sd_y: float


def pearson(x, y, metric: str = "") -> CorrelationReport:
    """Sample Pearson r with a two-sided p-value from Student's t.

    The t tail uses the regularized incomplete beta function:
    p = I_{df/(df+t^2)}(df/2, 1/2) with df = n - 2.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape != y.shape or x.ndim != 1:
        raise ValueError("x and y must be 1-d series of equal length")
    n = len(x)
    if n < 3:
        raise ValueError(f"need n >= 3, got {n}")
    dx = x - x.mean()
    dy = y - y.mean()
    sxx, syy = float(dx @ dx), float(dy @ dy)
    if sxx == 0.0 or syy == 0.0:
        raise ValueError("correlation undefined for a constant series")
    r = float(dx @ dy) / math.sqrt(sxx * syy)
    r = max(-1.0, min(1.0, r))
    df = n - 2
    if abs(r) >= 1.0:
        p = 0.0
    else:
        t2 = r * r * df / (1.0 - r * r)
        p = float(special.betainc(0.5 * df, 0.5, df / (df + t2)))
    return CorrelationReport(metric, n, r, p, float(x.mean()), float(x.std(ddof=1)), float(y.mean()), float(y.std(ddof=1)))


def correlation_table(reports: Sequence[CorrelationReport], name: str = "metrics_correlation") -> AnalysisTable:
    rows = [[c.metric, c.n, c.pearson_r, c.p_value, c.mean_x, c.sd_x, c.mean_y, c.sd_y] for c in reports]
    return AnalysisTable(name, ["metric", "n", "pearson_r", "p_value", "mean_model", "sd_model", "mean_observed", "sd_observed"], rows)


# ---------------------------------------------------------------------------
# embedding analyses


def _sem(x: np.ndarray) -> float:
    return float(x.std(ddof=1) / math.sqrt(len(x))) if len(x) > 1 else 0.0


def _group_rows(label_col, labels, groups, emb, dim):
    rows = []
    for label, idx in zip(labels, groups):
        vals = emb[idx]
        row = [label, len(idx)]
        for d in range(dim):
            row += [float(vals[:, d].mean()) if len(idx) else None, _sem(vals[:, d]) if len(idx) else None]
        rows.append(row)
    cols = [label_col, "n"]
    for d in range(dim):
        cols += [f"mean_dim{d + 1}", f"sem_dim{d + 1}"]
    return cols, rows


def _as_matrix(embeddings: Mapping[str, np.ndarray], ids):
    return np.array([np.asarray(embeddings[s], dtype=float) for s in ids]).reshape(len(ids), -1)


def embedding_buckets(embeddings: Mapping[str, np.ndarray], statistic: Mapping[str, float], n_buckets: int = 10,
                      name: str = "embedding_buckets") -> AnalysisTable:
    """Quantile buckets of a per-subject statistic with mean +/- SEM of each
    embedding dimension. Ties are ordered by subject id."""
    ids = [s for s in statistic if s in embeddings]
    if len(ids) < n_buckets:
        raise ValueError(f"{len(ids)} subjects cannot fill {n_buckets} buckets")
    ids.sort(key=lambda s: (statistic[s], s))
    emb = _as_matrix(embeddings, ids)
    groups = np.array_split(np.arange(len(ids)), n_buckets)
    cols, rows = _group_rows("bucket", list(range(1, n_buckets + 1)), groups, emb, emb.shape[1])
    stat = np.array([statistic[s] for s in ids])
    for row, idx in zip(rows, groups):
        row.insert(2, float(stat[idx].mean()))
    cols.insert(2, "mean_statistic")
    return AnalysisTable(name, cols, rows)


def median_split(embeddings: Mapping[str, np.ndarray], param: Mapping[str, Optional[float]],
                 name: str = "median_split") -> AnalysisTable:
    """Low (<= median) vs high (> median) buckets of an extrinsic parameter."""
    ids = sorted(s for s, v in param.items() if v is not None and s in embeddings and not math.isnan(v))
    if len(ids) < 4:
        raise ValueError(f"need the parameter for at least 4 subjects, got {len(ids)}")
    vals = np.array([param[s] for s in ids], dtype=float)
    if np.all(vals == vals[0]):
        raise ValueError("parameter is constant across subjects; median split undefined")
    med = float(np.median(vals))
    emb = _as_matrix(embeddings, ids)
    groups = [np.nonzero(vals <= med)[0], np.nonzero(vals > med)[0]]
    cols, rows = _group_rows("bucket", ["low", "high"], groups, emb, emb.shape[1])
    return AnalysisTable(name, cols, rows)


def categorical_buckets(embeddings: Mapping[str, np.ndarray], field_values: Mapping[str, Optional[str]],
                        name: str = "categorical_buckets") -> AnalysisTable:
    ids = sorted(s for s, v in field_values.items() if v not in (None, "") and s in embeddings)
    if not ids:
        return AnalysisTable(name, ["category", "n"], [])
    emb = _as_matrix(embeddings, ids)
    cats = sorted({field_values[s] for s in ids})
    groups = [np.array([i for i, s in enumerate(ids) if field_values[s] == c]) for c in cats]
    cols, rows = _group_rows("category", cats, groups, emb, emb.shape[1])
    return AnalysisTable(name, cols, rows)


def bucket_separation(table: AnalysisTable, dim: int = 1, low="low", high="high") -> tuple:
    """(high mean - low mean, pooled SEM) for one embedding dimension."""
    rec = {r["bucket"]: r for r in table.records()}
    a, b = rec[low], rec[high]
    diff = b[f"mean_dim{dim}"] - a[f"mean_dim{dim}"]
    pooled = math.sqrt(a[f"sem_dim{dim}"] ** 2 + b[f"sem_dim{dim}"] ** 2)
    return diff, pooled
