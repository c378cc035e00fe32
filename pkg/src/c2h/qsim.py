"""Exact statevector simulation for a handful of qubits.

States are plain complex arrays of shape ``(..., 2**n)``; every leading axis
is a batch axis, so one call can evaluate a circuit for all samples and all
parameter-shift offsets at once. Qubit 0 is the most significant bit of the
basis index and the leftmost character of a Pauli string.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .numerics import ContractError

ROTATIONS = ("RY", "RZ")
SHIFT = math.pi / 2


@dataclass(frozen=True)
class Gate:
    kind: str
    targets: tuple[int, ...]
    source: str = "const"  # "feature" | "param" | "const"
    index: int = 0
    value: float = 0.0

    def to_dict(self) -> dict:
        out = {"kind": self.kind, "targets": list(self.targets)}
        if self.kind in ROTATIONS:
            out["slot"] = {"source": self.source, "index": self.index}
            if self.source == "const":
                out["slot"]["value"] = self.value
        return out


@dataclass(frozen=True)
class CircuitSpec:
    n_qubits: int
    gates: tuple[Gate, ...]
    n_features: int
    n_params: int
    reps: int = 0
    entanglement: str = "linear"
    feature_scale: float = math.pi
    name: str = ""

    def __post_init__(self):
        if not 1 <= self.n_qubits <= 4:
            raise ContractError(f"CircuitSpec: n_qubits={self.n_qubits} outside [1, 4]")
        for g in self.gates:
            if g.kind == "CX":
                c, t = g.targets
                if c == t:
                    raise ContractError("CircuitSpec: CX control equals target")
            elif g.kind in ROTATIONS:
                if len(g.targets) != 1:
                    raise ContractError(f"CircuitSpec: {g.kind} takes one target")
                if g.source == "feature" and not 0 <= g.index < self.n_features:
                    raise ContractError(f"CircuitSpec: feature slot {g.index} out of range")
                if g.source == "param" and not 0 <= g.index < self.n_params:
                    raise ContractError(f"CircuitSpec: parameter slot {g.index} out of range")
            else:
                raise ContractError(f"CircuitSpec: unsupported gate {g.kind!r}")
            if any(not 0 <= q < self.n_qubits for q in g.targets):
                raise ContractError(f"CircuitSpec: qubit index out of range in {g}")

    @property
    def n_cx(self) -> int:
        return sum(g.kind == "CX" for g in self.gates)

    def gates_for(self, source: str, index: int) -> list[int]:
        return [k for k, g in enumerate(self.gates) if g.kind in ROTATIONS and g.source == source and g.index == index]

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "n_qubits": self.n_qubits,
            "n_features": self.n_features,
            "n_params": self.n_params,
            "reps": self.reps,
            "entanglement": self.entanglement,
            "feature_scale": self.feature_scale,
            "gates": [g.to_dict() for g in self.gates],
        }


@dataclass(frozen=True)
class Observable:
    terms: tuple[tuple[str, float], ...]
    _diag: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if not self.terms:
            raise ContractError("Observable needs at least one term")
        n = len(self.terms[0][0])
        diag = np.zeros(2**n)
        for pauli, coeff in self.terms:
            if len(pauli) != n or set(pauli) - {"I", "Z"}:
                raise ContractError(f"Observable: bad Pauli string {pauli!r}")
            term = np.ones(1)
            for ch in pauli:
                term = np.kron(term, [1.0, -1.0] if ch == "Z" else [1.0, 1.0])
            diag += coeff * term
        object.__setattr__(self, "_diag", diag)

    @property
    def n_qubits(self) -> int:
        return len(self.terms[0][0])

    @property
    def diagonal(self) -> np.ndarray:
        return self._diag

    def norm_bound(self) -> float:
        return sum(abs(c) for _, c in self.terms)


# readout used by the hybrid models: local Z on each qubit plus their correlation
READOUT = (Observable((("ZI", 1.0),)), Observable((("IZ", 1.0),)), Observable((("ZZ", 1.0),)))


def zero_state(n_qubits: int, batch_shape=()) -> np.ndarray:
    psi = np.zeros(tuple(batch_shape) + (2**n_qubits,), dtype=complex)
    psi[..., 0] = 1.0
    return psi


def _slices(n: int, q: int):
    tail = (slice(None),) * (n - 1 - q)
    return (Ellipsis, 0) + tail, (Ellipsis, 1) + tail


def _expand(a: np.ndarray, n: int) -> np.ndarray:
    return a.reshape(a.shape + (1,) * (n - 1))


def apply_ry(psi: np.ndarray, n: int, q: int, angle) -> np.ndarray:
    """In-place RY on qubit ``q`` of a tensor-shaped state ``(..., 2, ..., 2)``."""
    half = np.asarray(angle, dtype=float) / 2
    c = _expand(np.cos(half), n)
    s = _expand(np.sin(half), n)
    i0, i1 = _slices(n, q)
    a0 = psi[i0].copy()
    a1 = psi[i1]
    psi[i0] = c * a0 - s * a1
    psi[i1] = s * a0 + c * a1
    return psi


def apply_rz(psi: np.ndarray, n: int, q: int, angle) -> np.ndarray:
    half = _expand(np.asarray(angle, dtype=float) / 2, n)
    i0, i1 = _slices(n, q)
    psi[i0] = psi[i0] * np.exp(-1j * half)
    psi[i1] = psi[i1] * np.exp(1j * half)
    return psi


def apply_cx(psi: np.ndarray, n: int, control: int, target: int) -> np.ndarray:
    idx = [slice(None)] * n
    idx[control] = 1
    idx = (Ellipsis, *idx)
    # target axis inside the control=1 slice, counted from the end
    t_axis = target - n + (0 if target > control else 1)
    psi[idx] = np.flip(psi[idx], axis=t_axis).copy()
    return psi


def gate_angles(spec: CircuitSpec, features, params):
    """Angle of every rotation gate, broadcast over leading axes (None for CX)."""
    out = []
    for g in spec.gates:
        if g.kind not in ROTATIONS:
            out.append(None)
        elif g.source == "feature":
            out.append(spec.feature_scale * features[..., g.index])
        elif g.source == "param":
            out.append(params[..., g.index])
        else:
            out.append(np.asarray(g.value, dtype=float))
    return out


def run_circuit(spec: CircuitSpec, features=None, params=None, offsets=None, initial=None) -> np.ndarray:
    """Simulate ``spec`` from |0...0> (or from ``initial``, shape ``(..., 2**n)``).

    ``features`` has shape ``(..., n_features)``, ``params`` ``(..., n_params)``
    and the optional ``offsets`` ``(..., n_gates)`` adds a per-gate angle shift
    (used for parameter-shift gradients). Leading axes broadcast together.
    """
    n = spec.n_qubits
    features = np.zeros(spec.n_features) if features is None else np.asarray(features, dtype=float)
    params = np.zeros(spec.n_params) if params is None else np.asarray(params, dtype=float)
    if features.shape[-1:] != (spec.n_features,) and spec.n_features:
        raise ContractError(f"run_circuit: expected {spec.n_features} features, got shape {features.shape}")
    if params.shape[-1:] != (spec.n_params,) and spec.n_params:
        raise ContractError(f"run_circuit: expected {spec.n_params} parameters, got shape {params.shape}")
    shapes = [features.shape[:-1], params.shape[:-1]]
    if offsets is not None:
        offsets = np.asarray(offsets, dtype=float)
        if offsets.shape[-1] != len(spec.gates):
            raise ContractError("run_circuit: offsets must have one entry per gate")
        shapes.append(offsets.shape[:-1])
    if initial is not None:
        initial = np.asarray(initial, dtype=complex)
        shapes.append(initial.shape[:-1])
    batch = np.broadcast_shapes(*shapes)
    if initial is None:
        psi = zero_state(n, batch)
    else:
        psi = np.broadcast_to(initial, batch + (2**n,)).copy()
    psi = psi.reshape(batch + (2,) * n)
    angles = gate_angles(spec, features, params)
    for k, (g, ang) in enumerate(zip(spec.gates, angles)):
        if g.kind == "CX":
            apply_cx(psi, n, *g.targets)
            continue
        if offsets is not None:
            ang = ang + offsets[..., k]
        ang = np.broadcast_to(ang, batch)
        if g.kind == "RY":
            apply_ry(psi, n, g.targets[0], ang)
        else:
            apply_rz(psi, n, g.targets[0], ang)
    return psi.reshape(batch + (2**n,))


def probabilities(state) -> np.ndarray:
    return np.abs(np.asarray(state)) ** 2


def expectation(state, obs: Observable) -> np.ndarray:
    state = np.asarray(state)
    if state.shape[-1] != obs.diagonal.shape[0]:
        raise ContractError(
            f"expectation: state dimension {state.shape[-1]} does not match observable {obs.diagonal.shape[0]}"
        )
    return probabilities(state) @ obs.diagonal


def expectations(state, observables=READOUT) -> np.ndarray:
    """Stack of expectations, last axis indexes the observables."""
    diag = np.column_stack([o.diagonal for o in observables])
    return probabilities(state) @ diag


def shift_derivatives(spec: CircuitSpec, features, params, gate_ids, observables=READOUT):
    """d<O>/d(angle of gate g) for each requested rotation gate, by the two-term shift rule.

    Returns ``(values, derivs)`` with ``values`` of shape ``batch + (n_obs,)`` and
    ``derivs`` of shape ``(len(gate_ids),) + batch + (n_obs,)``. All shifted
    circuits are simulated in one batched call.
    """
    gate_ids = list(gate_ids)
    features = np.asarray(features, dtype=float)
    params = np.asarray(params, dtype=float)
    split = _encoder_split(spec)
    if split is not None and params.ndim == 1:
        return _split_shift_derivatives(spec, split, features, params, gate_ids, observables)
    G = len(spec.gates)
    offsets = np.zeros((2 * len(gate_ids) + 1, G))
    for r, g in enumerate(gate_ids):
        offsets[1 + 2 * r, g] = SHIFT
        offsets[2 + 2 * r, g] = -SHIFT
    extra = max(features.ndim - 1, params.ndim - 1)
    off = offsets.reshape((offsets.shape[0],) + (1,) * extra + (G,))
    vals = expectations(run_circuit(spec, features, params, off), observables)
    plus = vals[1::2]
    minus = vals[2::2]
    return vals[0], (plus - minus) / 2.0


def _encoder_split(spec: CircuitSpec) -> int | None:
    """Index where the feature-dependent prefix ends, if every later gate is data-free."""
    last_feature = max((k for k, g in enumerate(spec.gates) if g.kind in ROTATIONS and g.source == "feature"),
                       default=-1)
    if any(g.source == "param" for g in spec.gates[: last_feature + 1] if g.kind in ROTATIONS):
        return None
    return last_feature + 1


def _split_shift_derivatives(spec, split, features, params, gate_ids, observables):
    # Shifted circuits factor as (ansatz unitary) x (encoded state). The
    # sample-independent ansatz is built once per shift as a 2^n x 2^n matrix.
    n, dim, G = spec.n_qubits, 2**spec.n_qubits, len(spec.gates)
    prefix = replace(spec, gates=spec.gates[:split])
    suffix = replace(spec, gates=spec.gates[split:])
    enc_ids = [g for g in gate_ids if g < split]
    ans_ids = [g - split for g in gate_ids if g >= split]

    enc_off = np.zeros((2 * len(enc_ids) + 1, split))
    for r, g in enumerate(enc_ids):
        enc_off[1 + 2 * r, g] = SHIFT
        enc_off[2 + 2 * r, g] = -SHIFT
    extra = features.ndim - 1
    encoded = run_circuit(prefix, features, params,
                          enc_off.reshape((enc_off.shape[0],) + (1,) * extra + (split,)))

    ans_off = np.zeros((2 * len(ans_ids) + 1, G - split))
    for r, g in enumerate(ans_ids):
        ans_off[1 + 2 * r, g] = SHIFT
        ans_off[2 + 2 * r, g] = -SHIFT
    # columns[s, b] = U_s |b>
    columns = run_circuit(suffix, None, params, ans_off[:, None, :], initial=np.eye(dim))
    diag = np.column_stack([o.diagonal for o in observables])

    # unshifted ansatz applied to every shifted encoding, then shifted ansatz to the plain encoding
    enc_states = np.einsum("...b,bk->...k", encoded, columns[0])
    ans_states = np.einsum("...b,sbk->s...k", encoded[0], columns[1:])
    enc_vals = (np.abs(enc_states) ** 2) @ diag
    ans_vals = (np.abs(ans_states) ** 2) @ diag

    values = enc_vals[0]
    derivs = np.empty((len(gate_ids),) + values.shape)
    ei = ai = 0
    for r, g in enumerate(gate_ids):
        if g < split:
            derivs[r] = (enc_vals[1 + 2 * ei] - enc_vals[2 + 2 * ei]) / 2.0
            ei += 1
        else:
            derivs[r] = (ans_vals[2 * ai] - ans_vals[2 * ai + 1]) / 2.0
            ai += 1
    return values, derivs


def param_shift_grad(spec: CircuitSpec, features, params, obs: Observable, j: int) -> float:
    """Parameter-shift derivative of <obs> with respect to parameter slot ``j``."""
    if not 0 <= j < spec.n_params:
        raise ContractError(f"param_shift_grad: parameter index {j} out of range")
    gates = spec.gates_for("param", j)
    if not gates:
        return 0.0
    _, d = shift_derivatives(spec, features, params, gates, (obs,))
    return float(np.sum(d[..., 0], axis=0))


def reduced_density(state, keep: int) -> np.ndarray:
    """Single-qubit reduced density matrix ``(..., 2, 2)`` of qubit ``keep``."""
    state = np.asarray(state)
    n = int(round(math.log2(state.shape[-1])))
    if 2**n != state.shape[-1]:
        raise ContractError("reduced_density: state length is not a power of two")
    if not 0 <= keep < n:
        raise ContractError(f"reduced_density: qubit {keep} out of range for {n} qubits")
    batch = state.shape[:-1]
    psi = state.reshape(batch + (2,) * n)
    psi = np.moveaxis(psi, len(batch) + keep, -1).reshape(batch + (2 ** (n - 1), 2))
    return np.einsum("...ca,...cb->...ab", psi, psi.conj())


def von_neumann_entropy(rho) -> np.ndarray:
    """Entropy in bits of 2x2 density matrices (closed-form eigenvalues)."""
    rho = np.asarray(rho)
    if rho.shape[-2:] != (2, 2):
        raise ContractError("von_neumann_entropy: only 2x2 density matrices are supported")
    a = rho[..., 0, 0].real
    d = rho[..., 1, 1].real
    b = rho[..., 0, 1]
    tr = a + d
    r = np.sqrt((a - d) ** 2 + 4.0 * np.abs(b) ** 2)
    lam = np.clip(np.stack([(tr + r) / 2, (tr - r) / 2], axis=-1), 0.0, 1.0)
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(lam > 0.0, -lam * np.log2(np.where(lam > 0.0, lam, 1.0)), 0.0)
    return terms.sum(axis=-1)


def entanglement_entropy(state, qubit: int = 0) -> np.ndarray:
    return von_neumann_entropy(reduced_density(state, qubit))


def mutual_information(state, bipartition=(0, 1)) -> np.ndarray:
    """I(A:B) = S(A) + S(B) - S(AB) in bits for a pure two-qubit state (S(AB) = 0)."""
    state = np.asarray(state)
    if state.shape[-1] != 4:
        raise ContractError("mutual_information: only pure two-qubit states are supported")
    a, b = bipartition
    return entanglement_entropy(state, a) + entanglement_entropy(state, b)


def _feature_map(n_features: int = 4) -> list[Gate]:
    return [
        Gate("RY", (0,), "feature", 0),
        Gate("RZ", (0,), "feature", 1),
        Gate("RY", (1,), "feature", 2),
        Gate("RZ", (1,), "feature", 3),
    ]


def build_minimal_circuit() -> CircuitSpec:
    """Angle feature map plus one RY-CX-RY block: 4 parameters, 1 CX."""
    gates = _feature_map() + [
        Gate("RY", (0,), "param", 0),
        Gate("RY", (1,), "param", 1),
        Gate("CX", (0, 1)),
        Gate("RY", (0,), "param", 2),
        Gate("RY", (1,), "param", 3),
    ]
    return CircuitSpec(2, tuple(gates), n_features=4, n_params=4, reps=1, entanglement="linear", name="minimal")


def build_refined_circuit(reps: int = 3) -> CircuitSpec:
    """Same feature map, then ``reps`` circularly entangling blocks and a final RY layer.

    Each block: RY, RZ on both qubits, then CX(0->1) RZ(q1) CX(1->0) RZ(q0), i.e.
    six parameters and two CX. Total parameters: 6 * reps + 2.
    """
    if reps < 1:
        raise ContractError(f"build_refined_circuit: reps must be >= 1, got {reps}")
    gates = _feature_map()
    j = 0

    def p(kind, q):
        nonlocal j
        gate = Gate(kind, (q,), "param", j)
        j += 1
        return gate

    for _ in range(reps):
        gates += [p("RY", 0), p("RZ", 0), p("RY", 1), p("RZ", 1)]
        gates += [Gate("CX", (0, 1)), p("RZ", 1), Gate("CX", (1, 0)), p("RZ", 0)]
    gates += [p("RY", 0), p("RY", 1)]
    return CircuitSpec(2, tuple(gates), n_features=4, n_params=j, reps=reps, entanglement="circular", name="refined")


def circuit_from_dict(d: dict) -> CircuitSpec:
    gates = []
    for g in d["gates"]:
        slot = g.get("slot", {})
        gates.append(Gate(g["kind"], tuple(g["targets"]), slot.get("source", "const"),
                          slot.get("index", 0), slot.get("value", 0.0)))
    return CircuitSpec(d["n_qubits"], tuple(gates), d["n_features"], d["n_params"], d.get("reps", 0),
                       d.get("entanglement", "linear"), d.get("feature_scale", math.pi), d.get("name", ""))
