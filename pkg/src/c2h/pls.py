"""PLS2 regression (NIPALS) with k-fold cross-validated prediction."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import one_hot
from .numerics import ContractError, SeededRng

MAX_INNER_ITER = 500
INNER_TOL = 1e-10
SCORE_FLOOR = 1e-12


@dataclass(frozen=True)
class PlsModel:
    n_components: int
    x_weights: np.ndarray  # d x c
    x_loadings: np.ndarray  # d x c
    y_loadings: np.ndarray  # L x c
    x_mean: np.ndarray
    y_mean: np.ndarray
    x_scores: np.ndarray  # N x c, training scores

    @property
    def coef(self) -> np.ndarray:
        """Regression matrix B (d x L) such that Yhat = (X - x_mean) B + y_mean."""
        if self.x_weights.shape[1] == 0:
            return np.zeros((self.x_mean.shape[0], self.y_mean.shape[0]))
        w, p, q = self.x_weights, self.x_loadings, self.y_loadings
        return w @ np.linalg.solve(p.T @ w, q.T)


@dataclass(frozen=True)
class CvPlan:
    k: int
    folds: np.ndarray  # fold id per sample
    seed: int

    @classmethod
    def make(cls, n: int, k: int, seed: int) -> "CvPlan":
        if k < 2:
            raise ContractError(f"CvPlan: k must be >= 2, got {k}")
        if k > n:
            raise ContractError(f"CvPlan: k={k} folds for only {n} samples")
        order = SeededRng(seed).permutation(n)
        folds = np.empty(n, dtype=int)
        folds[order] = np.arange(n) % k
        return cls(k=k, folds=folds, seed=seed)

    def split(self, fold: int) -> tuple[np.ndarray, np.ndarray]:
        test = np.flatnonzero(self.folds == fold)
        train = np.flatnonzero(self.folds != fold)
        return train, test


def pls_fit(X, Y, c: int) -> PlsModel:
    X = np.asarray(X, dtype=float)
    Y = np.asarray(Y, dtype=float)
    if Y.ndim == 1:
        Y = Y[:, None]
    n, d = X.shape
    if c < 1 or c > min(d, n - 1):
        raise ContractError(f"pls_fit: n_components={c} outside [1, {min(d, n - 1)}]")
    if not (np.all(np.isfinite(X)) and np.all(np.isfinite(Y))):
        raise ContractError("pls_fit: non-finite input")
    x_mean = X.mean(axis=0)
    y_mean = Y.mean(axis=0)
    E = X - x_mean
    F = Y - y_mean
    W, P, Q, T = [], [], [], []
    for _ in range(c):
        col_var = np.sum(F**2, axis=0)
        u = F[:, int(np.argmax(col_var))].copy()
        if np.dot(u, u) < SCORE_FLOOR**2:
            break
        w = np.zeros(d)
        for _ in range(MAX_INNER_ITER):
            w_new = E.T @ u
            norm = np.linalg.norm(w_new)
            if norm < SCORE_FLOOR:
                break
            w_new /= norm
            t = E @ w_new
            q = F.T @ t / np.dot(t, t)
            u = F @ q / np.dot(q, q)
            done = np.linalg.norm(w_new - w) < INNER_TOL
            w = w_new
            if done:
                break
        t = E @ w
        tt = np.dot(t, t)
        if np.sqrt(tt) < SCORE_FLOOR:
            break
        p = E.T @ t / tt
        q = F.T @ t / tt
        E = E - np.outer(t, p)
        F = F - np.outer(t, q)
        W.append(w)
        P.append(p)
        Q.append(q)
        T.append(t)
    L = Y.shape[1]

    def stack(vs, rows):
        return np.column_stack(vs) if vs else np.zeros((rows, 0))

    return PlsModel(
        n_components=c,
        x_weights=stack(W, d),
        x_loadings=stack(P, d),
        y_loadings=stack(Q, L),
        x_mean=x_mean,
        y_mean=y_mean,
        x_scores=stack(T, n),
    )


def pls_predict(model: PlsModel, X) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    if X.ndim != 2 or X.shape[1] != model.x_mean.shape[0]:
        raise ContractError(
            f"pls_predict: expected {model.x_mean.shape[0]} columns, got shape {X.shape}"
        )
    return (X - model.x_mean) @ model.coef + model.y_mean


def decode(scores, vocabulary) -> np.ndarray:
    """Row argmax to label ids; np.argmax already resolves ties to the first column."""
    vocab = np.asarray(vocabulary)
    return vocab[np.argmax(scores, axis=1)]


def cross_val_scores(X, Y, plan: CvPlan, c: int) -> np.ndarray:
    """Out-of-fold score matrix: row i comes from the model that never saw fold(i)."""
    X = np.asarray(X, dtype=float)
    Y = np.asarray(Y, dtype=float)
    out = np.empty((X.shape[0], Y.shape[1]))
    for fold in range(plan.k):
        train, test = plan.split(fold)
        if test.size == 0:
            raise ContractError(f"cross_val_predict: fold {fold} is empty")
        model = pls_fit(X[train], Y[train], min(c, train.size - 1, X.shape[1]))
        out[test] = pls_predict(model, X[test])
    return out


def cross_val_predict(X, labels, plan: CvPlan, c: int, vocabulary=None) -> np.ndarray:
    vocab = np.unique(labels) if vocabulary is None else np.asarray(vocabulary)
    scores = cross_val_scores(X, one_hot(labels, vocab), plan, c)
    return decode(scores, vocab)


class PlsPredictor:
    """Self-training predictor backed by PLS on one-hot targets."""

    def __init__(self, n_components: int = 2, n_folds: int = 5, seed: int = 0) -> None:
        self.n_components = n_components
        self.n_folds = n_folds
        self.seed = seed
        self.model: PlsModel | None = None
        self.vocabulary: np.ndarray | None = None

    def _plan(self, n: int) -> CvPlan:
        return CvPlan.make(n, self.n_folds, self.seed)

    def fit(self, X, labels) -> None:
        self.vocabulary = np.unique(labels)
        Y = one_hot(labels, self.vocabulary)
        c = min(self.n_components, X.shape[1], X.shape[0] - 1)
        self.model = pls_fit(X, Y, c)

    def cross_val_predict(self, X, labels) -> tuple[np.ndarray, np.ndarray]:
        vocab = np.unique(labels)
        scores = cross_val_scores(X, one_hot(labels, vocab), self._plan(len(labels)), self.n_components)
        return decode(scores, vocab), scores.max(axis=1)

    def predict(self, X) -> np.ndarray:
        if self.model is None:
            raise RuntimeError("PlsPredictor.predict called before fit")
        return decode(pls_predict(self.model, X), self.vocabulary)
