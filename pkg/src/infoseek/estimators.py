"""Estimator-style wrapper around the staged behavior network."""

from __future__ import annotations

from typing import Dict, Optional, Sequence

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .game import Action, GameState, TrialConfig, TrialRecord
from .model import dataset_nll, policy, rollout
from .pipeline import SplitSpec, TrainConfig, split, train
from .validation import check_records


class StagedPolicyNetwork(BaseEstimator):
    """Staged per-decision network fit to trial records.

    ``variant`` is "pop" (no subject information), "subj" (a learned embedding
    per subject) or "multi" (both tasks sharing one embedding table).
    ``fit`` holds out a per-subject early-stopping slice of ``X`` unless
    ``stopping_records`` is given explicitly.
    """

    def __init__(self, variant="subj", lr=0.003, batch_size=256, max_epochs=30, patience=3, min_delta=1e-4,
                 hidden_dim=10, embedding_dim=2, stopping_fraction=0.1, random_state=0):
        self.variant = variant
        self.lr = lr
        self.batch_size = batch_size
        self.max_epochs = max_epochs
        self.patience = patience
        self.min_delta = min_delta
        self.hidden_dim = hidden_dim
        self.embedding_dim = embedding_dim
        self.stopping_fraction = stopping_fraction
        self.random_state = random_state

    def _train_config(self) -> TrainConfig:
        return TrainConfig(self.variant, self.lr, self.batch_size, self.max_epochs, self.patience, self.min_delta,
                           self.hidden_dim, self.embedding_dim, int(self.random_state or 0))

    def fit(self, X: Sequence[TrialRecord], y=None, stopping_records: Optional[Sequence[TrialRecord]] = None):
        records = check_records(X)
        cfg = self._train_config()
        if stopping_records is None:
            # train_fraction just under 1 puts every trial of a group in the training share
            spec = SplitSpec(train_fraction=1 - 1e-12, stopping_fraction=self.stopping_fraction, min_trials=2)
            tr, st, _ = split(records, spec, seed=cfg.seed)
        else:
            tr, st = records, check_records(stopping_records, allow_empty=True)
        self.checkpoint_ = train(tr, st, cfg)
        self.model_ = self.checkpoint_.model
        self.history_ = self.checkpoint_.log
        return self

    def nll(self, X: Sequence[TrialRecord]) -> float:
        """Mean negative log-likelihood per recorded decision."""
        check_is_fitted(self, "model_")
        return dataset_nll(self.model_, check_records(X))

    def score(self, X, y=None) -> float:
        return -self.nll(X)

    def policy(self, subject_id: str, state: GameState) -> Dict[Action, float]:
        check_is_fitted(self, "model_")
        return policy(self.model_, subject_id, state.config.task, state)

    def rollout(self, subject_id: str, config: TrialConfig, n_rollouts: int = 20, rng=None) -> Dict[str, float]:
        check_is_fitted(self, "model_")
        rng = rng if rng is not None else np.random.default_rng(self.random_state)
        return rollout(self.model_, subject_id, config, rng, n_rollouts)

    def embed(self, subject_id: str) -> np.ndarray:
        check_is_fitted(self, "model_")
        return self.model_.embed(subject_id)
