"""Input validation helpers for the estimators and pipeline entry points."""

from __future__ import annotations

from typing import List, Sequence

from .game import TrialRecord, Task


def check_records(records, *, allow_empty: bool = False, task=None) -> List[TrialRecord]:
    """Return ``records`` as a list after checking element types (and task, if given)."""
    if isinstance(records, TrialRecord):
        raise TypeError("expected a sequence of TrialRecord, got a single record")
    out = list(records)
    if not out and not allow_empty:
        raise ValueError("empty dataset")
    for i, r in enumerate(out):
        if not isinstance(r, TrialRecord):
            raise TypeError(f"element {i} is {type(r).__name__}, not TrialRecord")
    if task is not None:
        task = Task(task)
        bad = sum(r.config.task is not task for r in out)
        if bad:
            raise ValueError(f"{bad} records are not {task.label} trials")
    return out


def check_positive(name: str, value, *, integer: bool = False):
    if integer and int(value) != value:
        raise ValueError(f"{name} must be an integer, got {value!r}")
    if not value > 0:
        raise ValueError(f"{name} must be positive, got {value!r}")
    return value


def group_by_subject(records: Sequence[TrialRecord]) -> dict:
    """subject_id -> list of records, preserving first-seen order."""
    out: dict = {}
    for r in records:
        out.setdefault(r.subject_id, []).append(r)
    return out
