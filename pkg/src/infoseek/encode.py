"""Array views of trial records shared by the baseline, the network and the analyses."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .game import TrialConfig, TrialRecord, Task
from .oracle import lookup_posterior, task_index

ROW_SIGN = np.array([1, 1, -1, -1])  # A1, A2, B1, B2
COL_SIGN = np.array([1, -1, 1, -1])


@dataclass
class TrialArrays:
    """Column-oriented encoding of N trial configs (and actions, when known).

    ``order[i, j]`` is the position index of the j-th revealed card and
    ``values[i, j]`` its value. ``n_moves``/``guess_a`` are -1 for bare configs.
    """

    task: np.ndarray  # 0 = MaxProd, 1 = MinProd
    order: np.ndarray  # (N, 4) position indices
    values: np.ndarray  # (N, 4) values in reveal order
    layout: np.ndarray  # (N, 4) values indexed A1, A2, B1, B2
    n_moves: np.ndarray
    guess_a: np.ndarray  # 1 if the final guess was row A
    subject_ids: np.ndarray  # object array of str

    def __len__(self):
        return len(self.task)

    def visible(self, k: int) -> np.ndarray:
        """Layout values visible at decision point ``k`` (hidden cards as 0)."""
        vis = np.zeros_like(self.layout)
        rows = np.arange(len(self))
        for j in range(k):
            vis[rows, self.order[:, j]] = self.values[:, j]
        return vis

    def posterior(self, k: int) -> np.ndarray:
        return lookup_posterior(self.task, self.visible(k))

    def offer_row(self, k: int) -> np.ndarray:
        """+1/-1 for the row of the card offered at DP k; 0 at DP4."""
        if k >= 4:
            return np.zeros(len(self), dtype=int)
        return ROW_SIGN[self.order[:, k]]

    def card_row(self, k: int) -> np.ndarray:
        return ROW_SIGN[self.order[:, k - 1]]

    def card_col(self, k: int) -> np.ndarray:
        return COL_SIGN[self.order[:, k - 1]]


def encode_configs(configs: Sequence[TrialConfig], subject_ids=None) -> TrialArrays:
    n = len(configs)
    task = np.fromiter((task_index(c.task) for c in configs), dtype=np.int64, count=n)
    order = np.array([[p.index for p in c.reveal_order] for c in configs], dtype=np.int64).reshape(n, 4)
    layout = np.array([c.layout.values for c in configs], dtype=np.int64).reshape(n, 4)
    values = np.take_along_axis(layout, order, axis=1)
    if subject_ids is None:
        subject_ids = [""] * n
    return TrialArrays(
        task=task,
        order=order,
        values=values,
        layout=layout,
        n_moves=np.full(n, -1, dtype=np.int64),
        guess_a=np.full(n, -1, dtype=np.int64),
        subject_ids=np.array(subject_ids, dtype=object),
    )


def encode_records(records: Sequence[TrialRecord]) -> TrialArrays:
    arr = encode_configs([r.config for r in records], [r.subject_id for r in records])
    arr.n_moves = np.fromiter((r.n_moves for r in records), dtype=np.int64, count=len(records))
    arr.guess_a = np.fromiter((r.guess_row == "A" for r in records), dtype=np.int64, count=len(records))
    return arr


def correct_if_guess(arr: TrialArrays) -> tuple:
    """Boolean arrays: would guessing A (resp. B) be judged correct."""
    pa = arr.layout[:, 0] * arr.layout[:, 1]
    pb = arr.layout[:, 2] * arr.layout[:, 3]
    tie = pa == pb
    a_best = np.where(arr.task == 0, pa > pb, pa < pb)
    return a_best | tie, ~a_best | tie


__all__ = ["TrialArrays", "encode_configs", "encode_records", "correct_if_guess", "ROW_SIGN", "COL_SIGN", "Task"]
