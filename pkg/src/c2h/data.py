"""Iris loading, standardization, PCA and label encoding."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import numpy as np

from .numerics import ContractError, sym_eigen

IRIS_HEADER = ("sepal_length", "sepal_width", "petal_length", "petal_width", "species")


class DataLoadError(ValueError):
    pass


@dataclass(frozen=True)
class Dataset:
    features: np.ndarray
    true_labels: np.ndarray
    feature_names: tuple[str, ...]
    class_names: tuple[str, ...]

    @property
    def n_samples(self) -> int:
        return self.features.shape[0]

    def subset(self, rows) -> "Dataset":
        rows = np.asarray(rows, dtype=int)
        return Dataset(self.features[rows], self.true_labels[rows], self.feature_names, self.class_names)


@dataclass(frozen=True)
class PcaModel:
    mean: np.ndarray
    components: np.ndarray  # k x d, rows are principal axes
    eigenvalues: np.ndarray

    @property
    def k(self) -> int:
        return self.components.shape[0]


def bundled_iris_path() -> Path:
    return Path(str(resources.files("c2h") / "datasets" / "iris.csv"))


def load_iris(path: str | Path | None = None) -> Dataset:
    """Read a 4-feature + species CSV. Species ids follow first appearance."""
    path = Path(path) if path is not None else bundled_iris_path()
    if not path.is_file():
        raise DataLoadError(f"dataset file not found: {path}")
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataLoadError(f"{path}: empty file") from None
        if len(header) != 5:
            raise DataLoadError(f"{path}: expected 5 columns, header has {len(header)}")
        rows: list[list[float]] = []
        species: list[str] = []
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not cell.strip() for cell in row):
                continue
            if len(row) != 5:
                raise DataLoadError(f"{path}:{lineno}: expected 5 columns, got {len(row)}")
            values = []
            for col, cell in enumerate(row[:4]):
                try:
                    values.append(float(cell))
                except ValueError:
                    raise DataLoadError(
                        f"{path}:{lineno}: non-numeric value {cell!r} in column {header[col]!r}"
                    ) from None
            if not np.all(np.isfinite(values)):
                raise DataLoadError(f"{path}:{lineno}: non-finite feature value")
            rows.append(values)
            species.append(row[4].strip())
    if not rows:
        raise DataLoadError(f"{path}: no data rows")
    class_names = tuple(dict.fromkeys(species))
    ids = {name: i for i, name in enumerate(class_names)}
    return Dataset(
        features=np.array(rows, dtype=float),
        true_labels=np.array([ids[s] for s in species], dtype=int),
        feature_names=tuple(h.strip() for h in header[:4]),
        class_names=class_names,
    )


def standardize(features) -> np.ndarray:
    """Zero mean, unit population standard deviation per column."""
    x = np.asarray(features, dtype=float)
    mean = x.mean(axis=0)
    std = x.std(axis=0)
    flat = np.flatnonzero(std < 1e-12)
    if flat.size:
        raise ContractError(f"standardize: column {int(flat[0])} has zero variance")
    return (x - mean) / std


def pca_fit(features, k: int) -> PcaModel:
    x = np.asarray(features, dtype=float)
    d = x.shape[1]
    if not 1 <= k <= d:
        raise ContractError(f"pca_fit: k={k} must be in [1, {d}]")
    mean = x.mean(axis=0)
    xc = x - mean
    cov = xc.T @ xc / (x.shape[0] - 1)
    vals, vecs = sym_eigen(cov)
    comps = vecs[:, :k].T.copy()
    for row in comps:
        if row[np.argmax(np.abs(row))] < 0:
            row *= -1.0
    return PcaModel(mean=mean, components=comps, eigenvalues=np.clip(vals[:k], 0.0, None))


def pca_transform(model: PcaModel, features) -> np.ndarray:
    x = np.asarray(features, dtype=float)
    if x.shape[1] != model.mean.shape[0]:
        raise ContractError(f"pca_transform: expected {model.mean.shape[0]} columns, got {x.shape[1]}")
    return (x - model.mean) @ model.components.T


def one_hot(labels, vocabulary) -> np.ndarray:
    labels = np.asarray(labels)
    vocab = list(vocabulary)
    index = {v: i for i, v in enumerate(vocab)}
    out = np.zeros((labels.shape[0], len(vocab)))
    for row, lab in enumerate(labels.tolist()):
        try:
            out[row, index[lab]] = 1.0
        except KeyError:
            raise ContractError(f"one_hot: label {lab!r} not in vocabulary") from None
    return out


def span_scale(features) -> np.ndarray:
    """Shift each column to start at 0 and divide all by the widest column range.

    Output lies in [0, 1] with relative spreads preserved, so the leading
    principal component fills the unit interval and weaker ones use less of it.
    """
    x = np.asarray(features, dtype=float)
    low = x.min(axis=0)
    width = float(np.max(x.max(axis=0) - low))
    if width == 0.0:
        raise ContractError("span_scale: all columns are constant")
    return (x - low) / width
