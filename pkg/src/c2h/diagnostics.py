"""Training and representation diagnostics for hybrid runs.

Seven scalar readings, each with a documented formula (see FORMULAS):

tsi    share of epoch transitions where the loss did not rise by more than 0.1%
qgn    mean per-epoch L2 norm of the quantum-parameter gradient
bpi    variance over random initialisations of d<ZZ>/d theta_0 at a fixed input
edqfs  participation ratio of the quantum-feature covariance spectrum
qos    between-class over within-class scatter of the quantum features
eee    mean von Neumann entropy (bits) of qubit 0
qmi    mean mutual information (bits) between the two qubits
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .hybrid import THETA_INIT, HybridModel, TrainingTrace, quantum_features
from .numerics import ContractError, SeededRng, sym_eigen
from .qsim import CircuitSpec, Observable, entanglement_entropy, mutual_information, param_shift_grad

TSI_TOLERANCE = 1e-3
QOS_CAP = 1e6
EIG_FLOOR = 1e-12
BPI_DRAWS = 32

FORMULAS = {
    "tsi": "#{t : L[t+1] <= L[t] * (1 + 1e-3)} / (T - 1)",
    "qgn": "mean_t ||dL/dtheta||_2",
    "bpi": "Var_r[ d<ZZ>/d theta_0 ] over R random theta ~ U(-pi/8, pi/8), fixed input, untrained circuit",
    "edqfs": "(sum lambda)^2 / sum lambda^2, lambda = eigenvalues of cov(quantum features), lambda < 1e-12 -> 0",
    "qos": "tr(S_between) / tr(S_within) over current labels; 1e6 when tr(S_within) < 1e-12",
    "eee": "mean_x S(rho_q0(x)), S in bits",
    "qmi": "mean_x [S(q0) + S(q1) - S(q0 q1)], pure states so S(q0 q1) = 0",
}


@dataclass
class DiagnosticsReport:
    tsi: float
    qgn: float
    bpi: float
    edqfs: float
    qos: float
    eee: float
    qmi: float

    def to_dict(self, with_formulas: bool = False) -> dict:
        d = {k: float(v) for k, v in asdict(self).items()}
        if with_formulas:
            d["formulas"] = dict(FORMULAS)
        return d


def tsi(trace: TrainingTrace | list) -> float:
    loss = np.asarray(trace.loss if isinstance(trace, TrainingTrace) else trace, dtype=float)
    if loss.size < 2:
        raise ContractError(f"tsi needs at least 2 epochs, got {loss.size}")
    ok = loss[1:] <= loss[:-1] * (1.0 + TSI_TOLERANCE)
    return float(ok.mean())


def qgn(trace: TrainingTrace | list) -> float:
    norms = np.asarray(trace.quantum_grad_norm if isinstance(trace, TrainingTrace) else trace, dtype=float)
    if norms.size == 0:
        raise ContractError("qgn needs a non-empty trace")
    return float(norms.mean())


def bpi(circuit: CircuitSpec, x, n_draws: int = BPI_DRAWS, seed: int = 0, index: int = 0) -> float:
    """Gradient variance of <ZZ> with respect to one parameter over random draws of theta."""
    if n_draws < 2:
        raise ContractError("bpi needs at least 2 draws")
    if circuit.n_params == 0:
        return 0.0
    rng = SeededRng(seed)
    zz = Observable((("ZZ", 1.0),))
    grads = np.empty(n_draws)
    for r in range(n_draws):
        theta = rng.uniform(circuit.n_params, -THETA_INIT, THETA_INIT)
        grads[r] = param_shift_grad(circuit, x, theta, zz, index)
    return float(grads.var())


def edqfs(features) -> float:
    q = np.asarray(features, dtype=float)
    if q.ndim != 2 or q.shape[0] < 2:
        raise ContractError("edqfs needs a 2-d feature matrix with at least 2 rows")
    c = q - q.mean(axis=0)
    cov = c.T @ c / (q.shape[0] - 1)
    lam, _ = sym_eigen(cov)
    lam = np.where(lam < EIG_FLOOR, 0.0, lam)
    if lam.sum() == 0.0:
        return 1.0
    return float(lam.sum() ** 2 / np.sum(lam**2))


def qos(features, labels) -> float:
    q = np.asarray(features, dtype=float)
    labels = np.asarray(labels)
    if len(labels) != len(q):
        raise ContractError("qos: features and labels differ in length")
    classes = np.unique(labels)
    if classes.size < 2:
        raise ContractError("qos needs at least 2 classes")
    mu = q.mean(axis=0)
    between = within = 0.0
    for k in classes:
        block = q[labels == k]
        mk = block.mean(axis=0)
        between += len(block) * float(np.sum((mk - mu) ** 2))
        within += float(np.sum((block - mk) ** 2))
    if within < EIG_FLOOR:
        return QOS_CAP
    return min(between / within, QOS_CAP)


def eee(model: HybridModel, X) -> float:
    return float(np.mean(entanglement_entropy(model.states(X), 0)))


def qmi(model: HybridModel, X) -> float:
    return float(np.mean(mutual_information(model.states(X), (0, 1))))


def diagnose(model: HybridModel | None, X, labels, trace: TrainingTrace | None,
             initial: HybridModel | None = None, n_draws: int = BPI_DRAWS, seed: int = 0) -> DiagnosticsReport:
    """All seven diagnostics for a finished run.

    ``initial`` is the untrained model; its circuit input for the first sample
    is the fixed point at which BPI is measured. Defaults to ``model``.
    A run that collapsed to a single label has no between-class scatter, so
    its QOS is reported as 0 rather than raising.
    """
    missing = [name for name, v in (("model", model), ("features", X), ("labels", labels), ("trace", trace)) if v is None]
    if missing:
        raise ContractError(f"cannot diagnose: missing {', '.join(missing)}")
    X = np.asarray(X, dtype=float)
    start = initial if initial is not None else model
    q = quantum_features(model, X)
    return DiagnosticsReport(
        tsi=tsi(trace),
        qgn=qgn(trace),
        bpi=bpi(start.circuit, start.circuit_input(X[:1])[0], n_draws, seed),
        edqfs=edqfs(q),
        qos=qos(q, labels) if np.unique(labels).size > 1 else 0.0,
        eee=eee(model, X),
        qmi=qmi(model, X),
    )
