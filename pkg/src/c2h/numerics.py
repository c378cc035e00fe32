"""Small numerical kernel: seeded RNG, Jacobi eigensolver, Hungarian assignment."""

from __future__ import annotations

import math

import numpy as np


class ContractError(ValueError):
    """Raised when an operation is called outside its documented preconditions."""


class SeededRng:
    """Deterministic random stream on top of numpy's PCG64 bit generator.

    Gaussian draws use Box-Muller on the uniform stream (not numpy's ziggurat),
    so a seed pins every sample independent of the numpy sampling internals.
    """

    algorithm = "PCG64"

    def __init__(self, seed: int) -> None:
        self.seed = int(seed)
        self._gen = np.random.Generator(np.random.PCG64(self.seed))
        self._spare: float | None = None

    def uniform(self, size=None, low: float = 0.0, high: float = 1.0):
        u = self._gen.random(size)
        return low + (high - low) * u

    def gaussian(self) -> float:
        if self._spare is not None:
            z, self._spare = self._spare, None
            return z
        u1 = 1.0 - self._gen.random()  # (0, 1], safe for log
        u2 = self._gen.random()
        r = math.sqrt(-2.0 * math.log(u1))
        self._spare = r * math.sin(2.0 * math.pi * u2)
        return r * math.cos(2.0 * math.pi * u2)

    def normal(self, size) -> np.ndarray:
        """Array of standard normal draws (Box-Muller, pairs consumed in order)."""
        n = int(np.prod(size))
        m = (n + 1) // 2
        u1 = 1.0 - self._gen.random(m)
        u2 = self._gen.random(m)
        r = np.sqrt(-2.0 * np.log(u1))
        z = np.empty(2 * m)
        z[0::2] = r * np.cos(2.0 * np.pi * u2)
        z[1::2] = r * np.sin(2.0 * np.pi * u2)
        return z[:n].reshape(size)

    def permutation(self, n: int) -> np.ndarray:
        return self._gen.permutation(n)

    def child(self) -> "SeededRng":
        """Independent generator seeded from this stream (advances it by one draw)."""
        return SeededRng(int(self._gen.integers(0, 2**63 - 1)))


def rng_gaussian(rng: SeededRng) -> float:
    return rng.gaussian()


def sym_eigen(
    m, tol: float = 1e-12, max_sweeps: int = 100
) -> tuple[np.ndarray, np.ndarray]:
    """Eigen-decomposition of a real symmetric matrix by cyclic Jacobi rotations.

    Returns eigenvalues in descending order (ties keep their diagonal order) and
    the matching orthonormal eigenvectors as columns.
    """
    a = np.array(m, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ContractError(f"sym_eigen needs a square matrix, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ContractError("sym_eigen: non-finite entries")
    if np.max(np.abs(a - a.T), initial=0.0) > 1e-10:
        raise ContractError("sym_eigen: matrix is not symmetric within 1e-10")
    n = a.shape[0]
    a = 0.5 * (a + a.T)
    v = np.eye(n)
    scale = max(1.0, float(np.linalg.norm(a)))
    for _ in range(max_sweeps):
        off = float(np.linalg.norm(a - np.diag(np.diag(a))))
        if off < tol * scale:
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = a[p, q]
                if apq == 0.0:
                    continue
                theta = (a[q, q] - a[p, p]) / (2.0 * apq)
                t = math.copysign(1.0, theta) / (abs(theta) + math.sqrt(theta * theta + 1.0))
                c = 1.0 / math.sqrt(t * t + 1.0)
                s = t * c
                # A <- J^T A J with J the (p, q) rotation
                ap = a[:, p].copy()
                aq = a[:, q].copy()
                a[:, p] = c * ap - s * aq
                a[:, q] = s * ap + c * aq
                ap = a[p, :].copy()
                aq = a[q, :].copy()
                a[p, :] = c * ap - s * aq
                a[q, :] = s * ap + c * aq
                a[p, q] = a[q, p] = 0.0
                vp = v[:, p].copy()
                vq = v[:, q].copy()
                v[:, p] = c * vp - s * vq
                v[:, q] = s * vp + c * vq
    vals = np.diag(a).copy()
    order = np.argsort(-vals, kind="stable")
    return vals[order], v[:, order]


def hungarian(cost) -> tuple[dict[int, int], float]:
    """Minimum-cost assignment of rows to columns.

    Rectangular inputs are allowed. When there are more rows than columns the
    problem is solved on the transpose, so only ``cols`` rows get a partner.
    Returns ``(row -> column mapping, total cost)``.
    """
    c = np.asarray(cost, dtype=float)
    if c.ndim != 2 or c.size == 0:
        raise ContractError("hungarian: empty or non-2D cost matrix")
    if not np.all(np.isfinite(c)):
        raise ContractError("hungarian: non-finite cost entries")
    if c.shape[0] > c.shape[1]:
        cols_to_rows, total = _hungarian_wide(c.T)
        return {r: col for col, r in cols_to_rows.items()}, total
    return _hungarian_wide(c)


def _hungarian_wide(c: np.ndarray) -> tuple[dict[int, int], float]:
    # Shortest augmenting path with potentials, n <= m, 1-based bookkeeping.
    n, m = c.shape
    inf = math.inf
    u = np.zeros(n + 1)
    v = np.zeros(m + 1)
    p = np.zeros(m + 1, dtype=int)  # p[j]: row matched to column j
    way = np.zeros(m + 1, dtype=int)
    for i in range(1, n + 1):
        p[0] = i
        j0 = 0
        minv = np.full(m + 1, inf)
        used = np.zeros(m + 1, dtype=bool)
        while True:
            used[j0] = True
            i0 = p[j0]
            free = ~used[1:]
            cur = c[i0 - 1, :] - u[i0] - v[1:]
            better = free & (cur < minv[1:])
            minv[1:][better] = cur[better]
            way[1:][better] = j0
            cand = np.where(free, minv[1:], inf)
            j1 = int(np.argmin(cand)) + 1
            delta = cand[j1 - 1]
            u[p[used]] += delta
            v[used] -= delta
            minv[1:][free] -= delta
            j0 = j1
            if p[j0] == 0:
                break
        while True:
            j1 = way[j0]
            p[j0] = p[j1]
            j0 = j1
            if j0 == 0:
                break
    mapping = {int(p[j]) - 1: j - 1 for j in range(1, m + 1) if p[j] != 0}
    total = float(sum(c[r, col] for r, col in mapping.items()))
    return dict(sorted(mapping.items())), total
