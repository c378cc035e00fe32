"""Iterative self-training label refinement.

Each step refits the predictor under cross-validation, picks the most
confident samples whose out-of-fold prediction disagrees with their current
label, and relabels them only if the model's own cross-validated agreement
does not drop. Everything else keeps its label.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Protocol

import numpy as np

from .numerics import ContractError


class Predictor(Protocol):
    def fit(self, X: np.ndarray, labels: np.ndarray) -> None: ...

    def cross_val_predict(self, X: np.ndarray, labels: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Out-of-fold predicted ids and their confidence (top score)."""
        ...

    def predict(self, X: np.ndarray) -> np.ndarray: ...


class SelfTrainError(RuntimeError):
    pass


@dataclass(frozen=True)
class StepRecord:
    iteration: int
    changed: tuple[int, ...]
    agreement: float
    attempts: int

    def to_dict(self) -> dict:
        return {
            "iteration": self.iteration,
            "changed": list(self.changed),
            "agreement": self.agreement,
            "attempts": self.attempts,
        }


@dataclass
class LabelState:
    labels: np.ndarray
    iteration: int = 0
    history: list[StepRecord] = field(default_factory=list)
    # out-of-fold (predictions, confidence) for the current labels, if known
    cv_cache: tuple[np.ndarray, np.ndarray] | None = field(default=None, repr=False)

    @property
    def n_distinct(self) -> int:
        return int(np.unique(self.labels).size)


def init_labels(n: int) -> LabelState:
    """Every sample starts in its own class: label i for sample i."""
    if n < 1:
        raise ContractError(f"init_labels: N must be >= 1, got {n}")
    return LabelState(labels=np.arange(n, dtype=int))


def change_budget(n: int, fraction: float = 0.1) -> int:
    return max(1, math.ceil(fraction * n - 1e-9))


def _agreement(pred: np.ndarray, labels: np.ndarray) -> float:
    return float(np.mean(pred == labels))


def _cv(predictor: Predictor, X, labels, iteration: int):
    try:
        pred, conf = predictor.cross_val_predict(X, labels)
    except Exception as exc:
        raise SelfTrainError(f"predictor failed at iteration {iteration}: {exc}") from exc
    return np.asarray(pred), np.asarray(conf, dtype=float)


def step(state: LabelState, predictor: Predictor, X, fraction: float = 0.1) -> LabelState:
    t = state.iteration + 1
    labels = state.labels
    if state.cv_cache is not None:
        pred, conf = state.cv_cache
    else:
        pred, conf = _cv(predictor, X, labels, t)
    before = _agreement(pred, labels)
    mismatched = np.flatnonzero(pred != labels)
    # highest confidence first; stable sort keeps index order on ties
    ranked = mismatched[np.argsort(-conf[mismatched], kind="stable")]
    batch = ranked[: change_budget(len(labels), fraction)]

    accepted = None
    attempts = 0
    while batch.size and attempts < 2:
        attempts += 1
        candidate = labels.copy()
        candidate[batch] = pred[batch]
        new_pred, new_conf = _cv(predictor, X, candidate, t)
        after = _agreement(new_pred, candidate)
        if after >= before:
            accepted = (batch, candidate, (new_pred, new_conf), after)
            break
        batch = batch[: math.ceil(batch.size / 2)]

    if accepted is None:
        record = StepRecord(t, (), before, attempts)
        return LabelState(labels.copy(), t, [*state.history, record], (pred, conf))

    batch, candidate, cache, after = accepted
    try:
        predictor.fit(X, candidate)
    except Exception as exc:
        raise SelfTrainError(f"predictor fit failed at iteration {t}: {exc}") from exc
    record = StepRecord(t, tuple(int(i) for i in np.sort(batch)), after, attempts)
    return LabelState(candidate, t, [*state.history, record], cache)


def run(state: LabelState, predictor: Predictor, X, n_maxit: int = 20, fraction: float = 0.1,
        callback=None) -> LabelState:
    """Step until ``n_maxit`` iterations or the first step that changes nothing.

    The predictor is left fitted on the returned labels.
    """
    if n_maxit < 1:
        raise ContractError(f"run: n_maxit must be >= 1, got {n_maxit}")
    fitted = False
    while state.iteration < n_maxit:
        state = step(state, predictor, X, fraction)
        last = state.history[-1]
        if callback is not None:
            callback(state)
        if not last.changed:
            break
        fitted = True
    if not fitted:
        predictor.fit(X, state.labels)
    return state
