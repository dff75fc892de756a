"""Simulation, model-agnostic policy fitting and bias analyses for the
MaxProd/MinProd information-sampling card game."""

__version__ = "0.1.0"

from .agents import SoftmaxBaseline, sample_population, simulate_optimal, simulate_population  # noqa: E402
from .estimators import StagedPolicyNetwork  # noqa: E402
from .game import Action, AgentParams, Layout, Pos, SubjectProfile, Task, TrialConfig, TrialRecord  # noqa: E402
from .oracle import optimal_action, posterior  # noqa: E402

__all__ = [
    "Action", "AgentParams", "Layout", "Pos", "SoftmaxBaseline", "StagedPolicyNetwork", "SubjectProfile",
    "Task", "TrialConfig", "TrialRecord", "optimal_action", "posterior", "sample_population",
    "simulate_optimal", "simulate_population",
]
