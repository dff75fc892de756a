"""Card game engine: domain types, transitions, scoring and trial generation.

Four cards with values 1..10 lie face down in two rows (A, B) of two columns.
The first card of a trial is revealed for free; at each later decision point
the player either accepts the offered card (at an increasing cost) or guesses
the row with the extreme product.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np

__all__ = [
    "Task",
    "Pos",
    "Action",
    "Layout",
    "TrialConfig",
    "GameState",
    "TrialRecord",
    "SubjectProfile",
    "GameError",
    "RecordError",
    "COSTS",
    "REWARD_CORRECT",
    "REWARD_WRONG",
    "sampling_cost",
    "initial_state",
    "step",
    "judge",
    "score",
    "generate_trial",
    "replay",
    "make_record",
]

COSTS = (0, 10, 15, 20)
REWARD_CORRECT = 50
REWARD_WRONG = -60
MIN_CARD, MAX_CARD = 1, 10


class GameError(ValueError):
    """Illegal transition or malformed game object."""


class RecordError(ValueError):
    """A trial record is inconsistent with what the engine reproduces."""

    def __init__(self, field_name: str, message: str):
        super().__init__(f"{field_name}: {message}")
        self.field_name = field_name


class Task(str, enum.Enum):
    MAX = "max"
    MIN = "min"

    @property
    def label(self) -> str:
        return "MaxProd" if self is Task.MAX else "MinProd"


class Pos(str, enum.Enum):
    """Card position; the integer index orders positions A1, A2, B1, B2."""

    A1 = "A1"
    A2 = "A2"
    B1 = "B1"
    B2 = "B2"

    @property
    def index(self) -> int:
        return _POS_INDEX[self]

    @property
    def row(self) -> str:
        return self.value[0]

    @property
    def col(self) -> int:
        return int(self.value[1])

    @property
    def row_sign(self) -> int:
        return 1 if self.row == "A" else -1

    @property
    def col_sign(self) -> int:
        return 1 if self.col == 1 else -1


POSITIONS = (Pos.A1, Pos.A2, Pos.B1, Pos.B2)
_POS_INDEX = {p: i for i, p in enumerate(POSITIONS)}


class Action(str, enum.Enum):
    SAMPLE = "S"
    GUESS_A = "GA"
    GUESS_B = "GB"

    @property
    def is_guess(self) -> bool:
        return self is not Action.SAMPLE

    @property
    def row(self) -> Optional[str]:
        return {"GA": "A", "GB": "B"}.get(self.value)


@dataclass(frozen=True)
class Layout:
    """Card values indexed A1, A2, B1, B2."""

    values: tuple

    def __post_init__(self):
        vals = tuple(int(v) for v in self.values)
        if len(vals) != 4:
            raise GameError(f"layout needs 4 values, got {len(vals)}")
        for p, v in zip(POSITIONS, vals):
            if not MIN_CARD <= v <= MAX_CARD:
                raise GameError(f"card {p.value}={v} outside [1, 10]")
        object.__setattr__(self, "values", vals)

    @classmethod
    def from_rows(cls, row_a: Sequence[int], row_b: Sequence[int]) -> "Layout":
        return cls((row_a[0], row_a[1], row_b[0], row_b[1]))

    def __getitem__(self, pos: Pos) -> int:
        return self.values[Pos(pos).index]

    def product(self, row: str) -> int:
        a1, a2, b1, b2 = self.values
        return a1 * a2 if row == "A" else b1 * b2

    def swapped(self) -> "Layout":
        a1, a2, b1, b2 = self.values
        return Layout((b1, b2, a1, a2))


@dataclass(frozen=True)
class TrialConfig:
    layout: Layout
    reveal_order: tuple
    task: Task

    def __post_init__(self):
        order = tuple(Pos(p) for p in self.reveal_order)
        if sorted(p.index for p in order) != [0, 1, 2, 3]:
            raise GameError(f"reveal_order {[p.value for p in order]} is not a permutation of the four positions")
        object.__setattr__(self, "reveal_order", order)
        object.__setattr__(self, "task", Task(self.task))

    def offer(self, decision_point: int) -> Optional[Pos]:
        """Card offered at a decision point (None at DP4)."""
        return self.reveal_order[decision_point] if decision_point <= 3 else None


def sampling_cost(decision_point: int) -> int:
    """Cost of the k-th revealed card (k = 1..4)."""
    if not isinstance(decision_point, (int, np.integer)) or not 1 <= decision_point <= 4:
        raise GameError(f"decision point must be in [1, 4], got {decision_point!r}")
    return COSTS[decision_point - 1]


def judge(layout: Layout, task: Task, guess: str) -> bool:
    """True iff ``guess`` attains the task's extreme row product; ties count for both rows."""
    pa, pb = layout.product("A"), layout.product("B")
    if pa == pb:
        return True
    a_wins = pa > pb if Task(task) is Task.MAX else pa < pb
    return a_wins == (guess == "A")


def score(n_moves: int, correct: bool) -> int:
    reward = REWARD_CORRECT if correct else REWARD_WRONG
    return reward - sum(sampling_cost(k) for k in range(1, n_moves + 1))


@dataclass(frozen=True)
class GameState:
    config: TrialConfig
    decision_point: int = 1
    terminated: bool = False
    final_guess: Optional[str] = None

    @property
    def revealed(self) -> tuple:
        return self.config.reveal_order[: self.decision_point]

    @property
    def sunk_cost(self) -> int:
        return sum(COSTS[: self.decision_point])

    @property
    def offer(self) -> Optional[Pos]:
        return self.config.offer(self.decision_point)

    def visible(self) -> tuple:
        """Layout values with hidden cards as 0, indexed A1, A2, B1, B2."""
        out = [0, 0, 0, 0]
        for p in self.revealed:
            out[p.index] = self.config.layout.values[p.index]
        return tuple(out)

    @property
    def n_moves(self) -> int:
        return self.decision_point

    @property
    def correct(self) -> Optional[bool]:
        if not self.terminated:
            return None
        return judge(self.config.layout, self.config.task, self.final_guess)

    @property
    def score(self) -> Optional[int]:
        if not self.terminated:
            return None
        return score(self.decision_point, self.correct)

    def legal_actions(self) -> tuple:
        if self.terminated:
            return ()
        if self.decision_point <= 3:
            return (Action.SAMPLE, Action.GUESS_A, Action.GUESS_B)
        return (Action.GUESS_A, Action.GUESS_B)


def initial_state(config: TrialConfig) -> GameState:
    return GameState(config=config)


def step(state: GameState, action: Action) -> GameState:
    action = Action(action)
    if state.terminated:
        raise GameError("no transitions allowed after the trial terminated")
    if action is Action.SAMPLE:
        if state.decision_point >= 4:
            raise GameError("sampling is illegal at decision point 4")
        return replace(state, decision_point=state.decision_point + 1)
    return replace(state, terminated=True, final_guess=action.row)


def generate_trial(rng: np.random.Generator, task: Task) -> TrialConfig:
    values = rng.integers(MIN_CARD, MAX_CARD + 1, size=4)
    order = rng.permutation(4)
    return TrialConfig(
        layout=Layout(tuple(int(v) for v in values)),
        reveal_order=tuple(POSITIONS[i] for i in order),
        task=Task(task),
    )


@dataclass(frozen=True)
class AgentParams:
    """Biased-softmax generator parameters (see ``agents.agent_policy``)."""

    tau: float = 1.0
    w_conf: float = 2.0
    w_cost: float = -1.0
    b: tuple = (-2.0, -2.0, -2.0)
    delta_frame: float = 0.4
    alpha: float = 0.8
    rho: float = 0.8

    def __post_init__(self):
        object.__setattr__(self, "b", tuple(float(x) for x in self.b))
        if len(self.b) != 3:
            raise ValueError("b needs one intercept per decision point 1..3")
        if not self.tau > 0:
            raise ValueError(f"tau must be positive, got {self.tau}")
        for name in ("w_conf", "w_cost", "delta_frame", "alpha", "rho"):
            if not np.isfinite(getattr(self, name)):
                raise ValueError(f"{name} must be finite")


@dataclass(frozen=True)
class TrialRecord:
    subject_id: str
    trial_id: str
    config: TrialConfig
    actions: tuple
    decision_time_ms: Optional[float] = None
    n_moves: int = field(init=False)
    correct: bool = field(init=False)
    score: int = field(init=False)

    def __post_init__(self):
        object.__setattr__(self, "actions", tuple(Action(a) for a in self.actions))
        final = replay_actions(self.config, self.actions)
        object.__setattr__(self, "n_moves", final.n_moves)
        object.__setattr__(self, "correct", final.correct)
        object.__setattr__(self, "score", final.score)
        if self.decision_time_ms is not None and not self.decision_time_ms > 0:
            raise RecordError("decision_time_ms", f"must be positive, got {self.decision_time_ms}")

    @property
    def task(self) -> Task:
        return self.config.task

    @property
    def guess_row(self) -> str:
        return self.actions[-1].row


@dataclass(frozen=True)
class SubjectProfile:
    subject_id: str
    age_bucket: Optional[str] = None
    gender: Optional[str] = None
    education: Optional[str] = None
    approach_param: Optional[float] = None
    avoid_param: Optional[float] = None
    generator_params: Optional[AgentParams] = None


def replay_actions(config: TrialConfig, actions: Sequence[Action]) -> GameState:
    """Run ``actions`` through the engine; raises RecordError on illegal sequences."""
    if not 1 <= len(actions) <= 4:
        raise RecordError("actions", f"expected 1..4 actions, got {len(actions)}")
    state = initial_state(config)
    for i, a in enumerate(actions):
        try:
            state = step(state, a)
        except GameError as exc:
            raise RecordError("actions", f"action {i + 1} ({Action(a).value}): {exc}") from None
    if not state.terminated:
        raise RecordError("actions", "last action must be a guess")
    return state


def replay(record: TrialRecord, *, n_moves=None, correct=None, score=None) -> GameState:
    """Replay a record and check claimed outcome fields against the engine.

    ``n_moves``/``correct``/``score`` are claims to verify (e.g. parsed from an
    external log); omitted claims are taken from the record itself.
    """
    final = replay_actions(record.config, record.actions)
    claims = {
        "n_moves": record.n_moves if n_moves is None else n_moves,
        "correct": record.correct if correct is None else correct,
        "score": record.score if score is None else score,
    }
    for name, claimed in claims.items():
        actual = getattr(final, name)
        if claimed != actual:
            raise RecordError(name, f"record claims {claimed!r} but replay gives {actual!r}")
    return final


def make_record(subject_id, trial_id, config, actions, decision_time_ms=None) -> TrialRecord:
    return TrialRecord(str(subject_id), str(trial_id), config, tuple(actions), decision_time_ms)
