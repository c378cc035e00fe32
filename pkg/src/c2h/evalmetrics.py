"""Agreement metrics between a learned labeling and ground truth."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .numerics import ContractError, hungarian


@dataclass(frozen=True)
class EvaluationReport:
    a_internal: float
    accuracy: float
    ari: float
    nmi: float
    contingency: list[list[int]]
    learned_ids: list[int]
    mapping: dict[int, int]

    def to_dict(self) -> dict:
        return {
            "a_internal": self.a_internal,
            "accuracy": self.accuracy,
            "ari": self.ari,
            "nmi": self.nmi,
            "contingency": self.contingency,
            "learned_ids": self.learned_ids,
            "mapping": {str(k): v for k, v in self.mapping.items()},
            "nmi_normalization": "arithmetic",
            "mapping_rule": "one-to-one hungarian",
        }


def _check(a, b) -> tuple[np.ndarray, np.ndarray]:
    a = np.asarray(a)
    b = np.asarray(b)
    if a.shape != b.shape or a.ndim != 1:
        raise ContractError(f"label vectors differ in shape: {a.shape} vs {b.shape}")
    return a, b


def contingency(a, b) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Count table with rows = distinct ids of ``a`` and columns = ids of ``b``."""
    a, b = _check(a, b)
    ra, ia = np.unique(a, return_inverse=True)
    rb, ib = np.unique(b, return_inverse=True)
    table = np.zeros((ra.size, rb.size), dtype=np.int64)
    np.add.at(table, (ia, ib), 1)
    return table, ra, rb


def _comb2(x):
    x = np.asarray(x, dtype=float)
    return x * (x - 1) / 2.0


def ari(a, b) -> float:
    table, _, _ = contingency(a, b)
    n = table.sum()
    sum_ij = _comb2(table).sum()
    sum_a = _comb2(table.sum(axis=1)).sum()
    sum_b = _comb2(table.sum(axis=0)).sum()
    total = _comb2(n)
    if total == 0:
        return 1.0
    expected = sum_a * sum_b / total
    max_index = 0.5 * (sum_a + sum_b)
    if max_index == expected:
        # both partitions trivial in the same way (all singletons or one block)
        return 1.0 if sum_a == sum_b else 0.0
    return float((sum_ij - expected) / (max_index - expected))


def _entropy(counts: np.ndarray) -> float:
    p = counts[counts > 0] / counts.sum()
    return float(-np.sum(p * np.log(p)))


def nmi(a, b) -> float:
    """Mutual information normalized by the arithmetic mean of the two entropies."""
    table, _, _ = contingency(a, b)
    n = table.sum()
    ha = _entropy(table.sum(axis=1))
    hb = _entropy(table.sum(axis=0))
    nz = table > 0
    pij = table[nz] / n
    pa = (table.sum(axis=1, keepdims=True) / n * np.ones_like(table))[nz]
    pb = (table.sum(axis=0, keepdims=True) / n * np.ones_like(table))[nz]
    mi = float(np.sum(pij * np.log(pij / (pa * pb))))
    denom = 0.5 * (ha + hb)
    if denom == 0.0:
        return 0.0  # both partitions are one block: 0/0 taken as 0
    return float(min(1.0, max(0.0, mi / denom)))


def mapped_accuracy(learned, truth) -> tuple[float, dict[int, int]]:
    """One-to-one best matching of learned ids to true classes.

    Samples whose learned id stays unmatched count as errors.
    """
    table, ra, rb = contingency(learned, truth)
    assignment, _ = hungarian(-table.astype(float))
    hits = sum(int(table[r, c]) for r, c in assignment.items())
    mapping = {int(ra[r]): int(rb[c]) for r, c in assignment.items()}
    return hits / table.sum(), mapping


def internal_consistency(labels, predictions) -> float:
    labels, predictions = _check(labels, predictions)
    return float(np.mean(labels == predictions))


def evaluate(labels, truth, predictions) -> EvaluationReport:
    table, ra, _ = contingency(labels, truth)
    acc, mapping = mapped_accuracy(labels, truth)
    return EvaluationReport(
        a_internal=internal_consistency(labels, predictions),
        accuracy=acc,
        ari=ari(labels, truth),
        nmi=nmi(labels, truth),
        contingency=table.tolist(),
        learned_ids=[int(v) for v in ra],
        mapping=mapping,
    )
