"""Canonical CSV formats for trials and subjects, the mapping-driven importer
and run configuration."""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Mapping, Optional, Sequence, Tuple

import yaml

from . import __version__
from .game import AgentParams, GameError, Layout, RecordError, SubjectProfile, Task, TrialConfig, TrialRecord

TRIAL_COLUMNS = ["subject_id", "task", "trial_id", "a1", "a2", "b1", "b2", "reveal_order", "actions", "decision_time_ms"]
REQUIRED_TRIAL_COLUMNS = TRIAL_COLUMNS[:-1]
GENERATOR_COLUMNS = ["generator_tau", "generator_w_conf", "generator_w_cost", "generator_b1", "generator_b2",
                     "generator_b3", "generator_delta_frame", "generator_alpha", "generator_rho"]
SUBJECT_COLUMNS = ["subject_id", "age_bucket", "gender", "education", "approach_param", "avoid_param"] + GENERATOR_COLUMNS


class ValidationError(ValueError):
    """Input file or configuration failed validation."""

    def __init__(self, message: str, problems: Sequence[Tuple[int, str, str]] = ()):
        self.problems = list(problems)
        if self.problems:
            detail = "; ".join(f"line {ln}, column {col}: {msg}" for ln, col, msg in self.problems[:10])
            message = f"{message}: {detail}"
        super().__init__(message)


def fmt_real(v: Optional[float]) -> str:
    if v is None:
        return ""
    return format(float(v), ".17g")


def _write_csv(rows: List[list], columns: List[str]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    w.writerows(rows)
    return buf.getvalue()


def _write_text(path, text: str):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(text)


# ---------------------------------------------------------------------------
# trials


def trial_row(r: TrialRecord) -> list:
    a1, a2, b1, b2 = r.config.layout.values
    return [r.subject_id, r.config.task.value, r.trial_id, a1, a2, b1, b2,
            ";".join(p.value for p in r.config.reveal_order), ";".join(a.value for a in r.actions),
            fmt_real(r.decision_time_ms)]


def trials_to_csv(records: Sequence[TrialRecord]) -> str:
    return _write_csv([trial_row(r) for r in records], TRIAL_COLUMNS)


def write_trials(path, records: Sequence[TrialRecord]) -> None:
    _write_text(path, trials_to_csv(records))


def _parse_int(row, col, problems, line):
    raw = row.get(col, "")
    try:
        v = int(raw)
    except (TypeError, ValueError):
        problems.append((line, col, f"expected an integer, got {raw!r}"))
        return None
    if not 1 <= v <= 10:
        problems.append((line, col, f"card value {v} outside [1, 10]"))
        return None
    return v


def parse_trial_row(row: Mapping[str, str], line: int) -> Tuple[Optional[TrialRecord], List[Tuple[int, str, str]]]:
    problems: List[Tuple[int, str, str]] = []
    vals = [_parse_int(row, c, problems, line) for c in ("a1", "a2", "b1", "b2")]
    try:
        task = Task(row.get("task", ""))
    except ValueError:
        problems.append((line, "task", f"expected 'max' or 'min', got {row.get('task')!r}"))
        task = None
    sid = row.get("subject_id", "")
    if not sid:
        problems.append((line, "subject_id", "missing"))
    dt_raw = (row.get("decision_time_ms") or "").strip()
    dt = None
    if dt_raw:
        try:
            dt = float(dt_raw)
            if not (dt > 0 and math.isfinite(dt)):
                raise ValueError
        except ValueError:
            problems.append((line, "decision_time_ms", f"expected a positive number, got {dt_raw!r}"))
    if problems:
        return None, problems
    try:
        config = TrialConfig(Layout(tuple(vals)), tuple(row["reveal_order"].split(";")), task)
    except (GameError, ValueError) as exc:
        return None, [(line, "reveal_order", str(exc))]
    try:
        actions = tuple(row["actions"].split(";"))
        rec = TrialRecord(sid, row.get("trial_id", ""), config, actions, dt)
    except RecordError as exc:
        return None, [(line, "actions" if exc.field_name == "actions" else exc.field_name, str(exc))]
    except ValueError as exc:
        return None, [(line, "actions", str(exc))]
    return rec, []


@dataclass
class ReadReport:
    rows_read: int = 0
    rows_kept: int = 0
    problems: List[Tuple[int, str, str]] = field(default_factory=list)

    @property
    def rows_skipped(self) -> int:
        return self.rows_read - self.rows_kept


def read_trials_text(text: str, strict: bool = True, source: str = "<trials>") -> Tuple[List[TrialRecord], ReadReport]:
    reader = csv.DictReader(io.StringIO(text))
    missing = [c for c in REQUIRED_TRIAL_COLUMNS if c not in (reader.fieldnames or [])]
    if missing:
        raise ValidationError(f"{source}: missing required columns {missing}")
    report = ReadReport()
    out = []
    for i, row in enumerate(reader):
        line = i + 2  # header is line 1
        report.rows_read += 1
        rec, problems = parse_trial_row(row, line)
        if problems:
            if strict:
                raise ValidationError(f"{source}: invalid row", problems)
            report.problems.extend(problems)
            continue
        out.append(rec)
        report.rows_kept += 1
    return out, report


def read_trials(path, strict: bool = True) -> Tuple[List[TrialRecord], ReadReport]:
    """Parse and replay-validate a trials CSV; lenient mode skips bad rows."""
    with open(path, "r", encoding="utf-8", newline="") as fh:
        return read_trials_text(fh.read(), strict, str(path))


# ---------------------------------------------------------------------------
# subjects


def subject_row(p: SubjectProfile) -> list:
    g = p.generator_params
    gen = [""] * len(GENERATOR_COLUMNS)
    if g is not None:
        gen = [fmt_real(x) for x in (g.tau, g.w_conf, g.w_cost, *g.b, g.delta_frame, g.alpha, g.rho)]
    return [p.subject_id, p.age_bucket or "", p.gender or "", p.education or "",
            fmt_real(p.approach_param), fmt_real(p.avoid_param)] + gen


def write_subjects(path, profiles: Sequence[SubjectProfile]) -> None:
    _write_text(path, _write_csv([subject_row(p) for p in profiles], SUBJECT_COLUMNS))


def read_subjects(path) -> List[SubjectProfile]:
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh)
        if "subject_id" not in (reader.fieldnames or []):
            raise ValidationError(f"{path}: missing subject_id column")
        out, seen = [], set()
        for i, row in enumerate(reader):
            line = i + 2
            sid = row["subject_id"]
            if sid in seen:
                raise ValidationError(f"{path}: duplicate subject", [(line, "subject_id", sid)])
            seen.add(sid)

            def real(col):
                raw = (row.get(col) or "").strip()
                if not raw:
                    return None
                try:
                    return float(raw)
                except ValueError:
                    raise ValidationError(f"{path}: invalid number", [(line, col, raw)]) from None

            gen_vals = [real(c) for c in GENERATOR_COLUMNS]
            gen = None
            if all(v is not None for v in gen_vals):
                tau, wc, wcost, b1, b2, b3, df, al, rho = gen_vals
                gen = AgentParams(tau, wc, wcost, (b1, b2, b3), df, al, rho)
            out.append(SubjectProfile(sid, row.get("age_bucket") or None, row.get("gender") or None,
                                      row.get("education") or None, real("approach_param"), real("avoid_param"), gen))
    return out


def check_subject_coverage(records: Sequence[TrialRecord], profiles: Sequence[SubjectProfile]) -> None:
    known = {p.subject_id for p in profiles}
    missing = sorted({r.subject_id for r in records} - known)
    if missing:
        raise ValidationError(f"{len(missing)} trial subjects absent from the subjects file (e.g. {missing[:3]})")


# ---------------------------------------------------------------------------
# external import


@dataclass
class ImportReport:
    rows_read: int = 0
    rows_written: int = 0
    dropped: List[Tuple[int, str, str]] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {"rows_read": self.rows_read, "rows_written": self.rows_written,
                "rows_dropped": len(self.dropped),
                "dropped": [{"line": ln, "column": c, "reason": m} for ln, c, m in self.dropped]}


def load_mapping(path) -> dict:
    with open(path, "r", encoding="utf-8") as fh:
        doc = yaml.safe_load(fh) or {}
    return doc


def import_external(src_path, mapping: Mapping, out_path) -> ImportReport:
    """Rename and recode an external trial log into the canonical trials CSV.

    ``mapping`` has ``columns`` (canonical name -> source column) and optional
    ``values`` (canonical column -> {source value: canonical value}), e.g. to
    turn "MaxProd" into "max" or per-step codes into S/GA/GB. Canonical
    columns absent from ``columns`` are assumed to carry the same name in the
    source. Rows that fail validation are dropped and reported.
    """
    unknown = set(mapping) - {"columns", "values"}
    if unknown:
        raise ValidationError(f"unknown mapping keys {sorted(unknown)}")
    colmap = {c: c for c in TRIAL_COLUMNS}
    colmap.update(mapping.get("columns") or {})
    bad = set(colmap) - set(TRIAL_COLUMNS)
    if bad:
        raise ValidationError(f"mapping names non-canonical columns {sorted(bad)}")
    valmap = mapping.get("values") or {}
    with open(src_path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh)
        fields = reader.fieldnames or []
        missing = [c for c in REQUIRED_TRIAL_COLUMNS if colmap[c] not in fields]
        if missing:
            raise ValidationError(f"{src_path}: unmapped required columns {missing} "
                                  f"(looked for source columns {[colmap[c] for c in missing]})")
        report = ImportReport()
        kept = []
        for i, src in enumerate(reader):
            line = i + 2
            report.rows_read += 1
            row = {}
            for c in TRIAL_COLUMNS:
                v = src.get(colmap[c], "") if colmap[c] in fields else ""
                v = "" if v is None else v.strip()
                if c in valmap:
                    if c == "actions" or c == "reveal_order":
                        v = ";".join(str(valmap[c].get(part, part)) for part in v.split(";")) if v else v
                    else:
                        v = str(valmap[c].get(v, v))
                row[c] = v
            rec, problems = parse_trial_row(row, line)
            if problems:
                report.dropped.extend(problems)
                continue
            kept.append(rec)
            report.rows_written += 1
    write_trials(out_path, kept)
    return report


# ---------------------------------------------------------------------------
# run configuration

_TRAIN_KEYS = {"lr", "batch_size", "max_epochs", "patience", "min_delta", "hidden_dim", "embedding_dim"}

DEFAULT_CONFIG: dict = {
    "seed": 0,
    "variant": "subj",
    "task": "max",
    "train": {"lr": 0.003, "batch_size": 256, "max_epochs": 30, "patience": 3, "min_delta": 1e-4,
              "hidden_dim": 10, "embedding_dim": 2},
    "generator": {"n_subjects": 500, "trials_per_task": 14, "tasks": ["max", "min"], "preset": "default",
                  "distributions": {}},
    "split": {"train_fraction": 0.6, "stopping_fraction": 0.1, "min_trials": 5},
    "sample_complexity": {"pool_sizes": [200, 500, 1000, 2000], "n_test_subjects": 100, "n_repeats": 50,
                          "n_rollouts": 20, "n_jobs": 1},
    "analysis": {"figures": ["framing", "approach", "reject", "metrics-correlation", "embedding-buckets",
                             "median-split"], "n_rollouts": 20, "n_buckets": 10},
    "out_dir": "out",
}


def _merge(base: dict, override: Mapping, path: str = "") -> dict:
    out = dict(base)
    for k, v in override.items():
        where = f"{path}{k}"
        if k not in base:
            raise ValidationError(f"unknown configuration key {where!r}")
        if isinstance(base[k], dict) and k != "distributions":
            if not isinstance(v, Mapping):
                raise ValidationError(f"configuration key {where!r} must be a mapping")
            out[k] = _merge(base[k], v, where + ".")
        else:
            out[k] = v
    return out


def load_config(path=None, overrides: Optional[Mapping] = None) -> dict:
    """Effective run configuration: defaults, then the YAML/JSON file, then overrides."""
    cfg = json.loads(json.dumps(DEFAULT_CONFIG))
    if path is not None:
        with open(path, "r", encoding="utf-8") as fh:
            try:
                doc = yaml.safe_load(fh) or {}
            except yaml.YAMLError as exc:
                raise ValidationError(f"{path}: not valid YAML/JSON ({exc})") from None
        if not isinstance(doc, Mapping):
            raise ValidationError(f"{path}: top level must be a mapping")
        cfg = _merge(cfg, doc)
    if overrides:
        cfg = _merge(cfg, overrides)
    unknown = set(cfg["train"]) - _TRAIN_KEYS
    if unknown:
        raise ValidationError(f"unknown train keys {sorted(unknown)}")
    return cfg


def echo_config(cfg: Mapping, out_dir) -> Path:
    """Write the effective config and tool version into ``out_dir``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    path = out / "effective_config.json"
    _write_text(path, json.dumps({"tool_version": __version__, "config": cfg}, indent=1, sort_keys=True) + "\n")
    return path
