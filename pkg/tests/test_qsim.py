import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from c2h.numerics import ContractError
from c2h.qsim import (
    READOUT,
    CircuitSpec,
    Gate,
    Observable,
    build_minimal_circuit,
    build_refined_circuit,
    circuit_from_dict,
    entanglement_entropy,
    expectation,
    expectations,
    mutual_information,
    param_shift_grad,
    reduced_density,
    run_circuit,
    shift_derivatives,
    von_neumann_entropy,
)

I2 = np.eye(2)
Z = np.diag([1.0, -1.0])
P0 = np.diag([1.0, 0.0])
P1 = np.diag([0.0, 1.0])
X = np.array([[0.0, 1.0], [1.0, 0.0]])


def ry(a):
    c, s = math.cos(a / 2), math.sin(a / 2)
    return np.array([[c, -s], [s, c]])


def rz(a):
    return np.diag([np.exp(-0.5j * a), np.exp(0.5j * a)])


def on(n, q, m):
    out = np.ones((1, 1))
    for k in range(n):
        out = np.kron(out, m if k == q else I2)
    return out


def cx(n, c, t):
    return on(n, c, P0) + on(n, c, P1) @ on(n, t, X)


def dense_run(spec, features, params):
    """Dense unitary-product oracle, independent of the tensor-slicing simulator."""
    n = spec.n_qubits
    psi = np.zeros(2**n, dtype=complex)
    psi[0] = 1.0
    for g in spec.gates:
        if g.kind == "CX":
            psi = cx(n, *g.targets) @ psi
            continue
        if g.source == "feature":
            a = spec.feature_scale * features[g.index]
        elif g.source == "param":
            a = params[g.index]
        else:
            a = g.value
        psi = on(n, g.targets[0], ry(a) if g.kind == "RY" else rz(a)) @ psi
    return psi


def pauli_matrix(s):
    out = np.ones((1, 1))
    for ch in s:
        out = np.kron(out, Z if ch == "Z" else I2)
    return out


def random_circuit(rng, n=2, n_gates=12, n_params=5):
    gates = []
    for _ in range(n_gates):
        kind = rng.choice(["RY", "RZ", "CX"])
        if kind == "CX":
            c, t = rng.choice(n, 2, replace=False)
            gates.append(Gate("CX", (int(c), int(t))))
        else:
            src = rng.choice(["param", "feature", "const"])
            idx = int(rng.integers(n_params if src == "param" else 2))
            gates.append(Gate(str(kind), (int(rng.integers(n)),), str(src), idx, float(rng.uniform(-3, 3))))
    return CircuitSpec(n, tuple(gates), n_features=2, n_params=n_params)


def test_empty_circuit_is_ground_state():
    spec = CircuitSpec(2, (), 0, 0)
    assert np.allclose(run_circuit(spec), [1, 0, 0, 0])


def test_bit_flip_and_bell():
    flip = CircuitSpec(1, (Gate("RY", (0,), "const", value=math.pi),), 0, 0)
    assert np.allclose(np.abs(run_circuit(flip)), [0, 1], atol=1e-15)
    bell = CircuitSpec(2, (Gate("RY", (0,), "const", value=math.pi / 2), Gate("CX", (0, 1))), 0, 0)
    psi = run_circuit(bell)
    assert np.allclose(psi, [1 / math.sqrt(2), 0, 0, 1 / math.sqrt(2)], atol=1e-15)
    assert entanglement_entropy(psi, 0) == pytest.approx(1.0, abs=1e-12)
    assert mutual_information(psi) == pytest.approx(2.0, abs=1e-12)


def test_product_state_entropy_zero():
    psi = np.array([0, 1, 0, 0], dtype=complex)  # |01>
    assert entanglement_entropy(psi, 0) == 0.0
    assert mutual_information(psi) == 0.0


def test_expectation_examples():
    psi = np.array([1, 0, 0, 0], dtype=complex)
    assert expectation(psi, Observable((("ZI", 1.0),))) == 1.0
    spec = CircuitSpec(1, (Gate("RY", (0,), "param", 0),), 0, 1)
    assert expectation(run_circuit(spec, params=[math.pi / 2]), Observable((("Z", 1.0),))) == pytest.approx(0, abs=1e-15)
    with pytest.raises(ContractError):
        expectation(psi, Observable((("Z", 1.0),)))


@pytest.mark.parametrize("seed", range(5))
def test_matches_dense_oracle(seed):
    rng = np.random.default_rng(seed)
    spec = random_circuit(rng, n=int(rng.integers(1, 4)) or 1, n_gates=15)
    if spec.n_qubits == 1:
        spec = CircuitSpec(1, tuple(g for g in spec.gates if g.kind != "CX"), 2, spec.n_params)
    f, p = rng.uniform(-1, 1, 2), rng.uniform(-3, 3, spec.n_params)
    psi = run_circuit(spec, f, p)
    assert np.allclose(psi, dense_run(spec, f, p), atol=1e-12)
    v = rng.normal(size=2**spec.n_qubits) + 1j * rng.normal(size=2**spec.n_qubits)
    v /= np.linalg.norm(v)
    s = "Z" * spec.n_qubits
    obs = Observable(((s, 0.7),))
    assert expectation(v, obs) == pytest.approx(0.7 * np.real(v.conj() @ pauli_matrix(s) @ v), abs=1e-12)


def test_batched_matches_loop():
    spec = build_refined_circuit(2)
    rng = np.random.default_rng(1)
    F = rng.uniform(-1, 1, (7, 4))
    p = rng.uniform(-1, 1, spec.n_params)
    batched = run_circuit(spec, F, p)
    for i in range(7):
        assert np.allclose(batched[i], dense_run(spec, F[i], p), atol=1e-12)


def test_norm_drift_thousand_gates():
    rng = np.random.default_rng(0)
    gates = []
    for _ in range(1000):
        k = rng.integers(3)
        if k == 2:
            gates.append(Gate("CX", tuple(int(q) for q in rng.choice(3, 2, replace=False))))
        else:
            gates.append(Gate(("RY", "RZ")[k], (int(rng.integers(3)),), "const", value=float(rng.uniform(-7, 7))))
    psi = run_circuit(CircuitSpec(3, tuple(gates), 0, 0))
    assert abs(np.linalg.norm(psi) - 1.0) < 1e-12


def test_gate_inverse_roundtrip():
    rng = np.random.default_rng(5)
    gates = [Gate(k, (int(rng.integers(2)),), "const", value=float(rng.uniform(-3, 3))) for k in ["RY", "RZ"] * 5]
    gates.insert(3, Gate("CX", (1, 0)))
    fwd = CircuitSpec(2, tuple(gates), 0, 0)
    inv = CircuitSpec(2, tuple(g if g.kind == "CX" else Gate(g.kind, g.targets, "const", value=-g.value)
                               for g in reversed(gates)), 0, 0)
    start = rng.normal(size=4) + 1j * rng.normal(size=4)
    start /= np.linalg.norm(start)
    back = run_circuit(inv, initial=run_circuit(fwd, initial=start))
    assert np.max(np.abs(back - start)) < 1e-12


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**31 - 1), st.integers(2, 3))
def test_reduced_density_properties(seed, n):
    rng = np.random.default_rng(seed)
    v = rng.normal(size=2**n) + 1j * rng.normal(size=2**n)
    v /= np.linalg.norm(v)
    for q in range(n):
        rho = reduced_density(v, q)
        assert np.max(np.abs(rho - rho.conj().T)) < 1e-12
        assert abs(np.trace(rho) - 1) < 1e-12
        assert np.linalg.eigvalsh(rho).min() > -1e-12
        s = von_neumann_entropy(rho)
        assert -1e-12 <= s <= 1 + 1e-12
    if n == 2:
        assert mutual_information(v) == pytest.approx(2 * entanglement_entropy(v, 0), abs=1e-12)
        assert entanglement_entropy(v, 0) == pytest.approx(entanglement_entropy(v, 1), abs=1e-12)


def test_entropy_eigen_oracle():
    rng = np.random.default_rng(2)
    for _ in range(20):
        v = rng.normal(size=4) + 1j * rng.normal(size=4)
        v /= np.linalg.norm(v)
        lam = np.clip(np.linalg.eigvalsh(reduced_density(v, 0)), 1e-300, 1)
        assert von_neumann_entropy(reduced_density(v, 0)) == pytest.approx(-np.sum(lam * np.log2(lam)), abs=1e-12)


def test_reduced_density_errors():
    with pytest.raises(ContractError):
        reduced_density(np.ones(4) / 2, 2)
    with pytest.raises(ContractError):
        reduced_density(np.ones(3), 0)


def test_param_shift_analytic():
    spec = CircuitSpec(1, (Gate("RY", (0,), "param", 0),), 0, 1)
    z = Observable((("Z", 1.0),))
    assert param_shift_grad(spec, None, [math.pi / 2], z, 0) == pytest.approx(-1.0, abs=1e-14)
    assert param_shift_grad(spec, None, [0.0], z, 0) == pytest.approx(0.0, abs=1e-14)
    with pytest.raises(ContractError):
        param_shift_grad(spec, None, [0.0], z, 1)


def _fd(spec, f, p, obs, j, h=1e-5):
    e = np.zeros_like(p)
    e[j] = h
    return (expectation(run_circuit(spec, f, p + e), obs) - expectation(run_circuit(spec, f, p - e), obs)) / (2 * h)


@pytest.mark.parametrize("seed", range(5))
def test_param_shift_vs_finite_difference(seed):
    rng = np.random.default_rng(100 + seed)
    obs = Observable((("ZI", 0.3), ("IZ", -1.2), ("ZZ", 0.8)))
    for spec in (random_circuit(rng), build_minimal_circuit(), build_refined_circuit(3)):
        f = rng.uniform(-1, 1, spec.n_features)
        p = rng.uniform(-math.pi, math.pi, spec.n_params)
        for j in range(spec.n_params):
            assert abs(param_shift_grad(spec, f, p, obs, j) - _fd(spec, f, p, obs, j)) < 1e-6


@pytest.mark.parametrize("build", [build_minimal_circuit, lambda: build_refined_circuit(2)])
def test_fast_shift_path_matches_general_path(build):
    spec = build()
    rng = np.random.default_rng(3)
    F = rng.uniform(-1, 1, (6, 4))
    p = rng.uniform(-2, 2, spec.n_params)
    ids = [k for k, g in enumerate(spec.gates) if g.kind != "CX"]
    vals, d = shift_derivatives(spec, F, p, ids)
    # per-sample broadcast of params disables the encoder/ansatz split
    vals2, d2 = shift_derivatives(spec, F, np.broadcast_to(p, (6, spec.n_params)).copy(), ids)
    assert np.allclose(vals, vals2, atol=1e-12)
    assert np.allclose(d, d2, atol=1e-12)
    assert np.allclose(vals, expectations(run_circuit(spec, F, p)), atol=1e-12)


def test_circuit_counts():
    m = build_minimal_circuit()
    assert (m.n_params, m.n_cx) == (4, 1)
    r = build_refined_circuit(3)
    assert (r.n_params, r.n_cx) == (20, 6)
    assert r.entanglement == "circular"
    for reps in (1, 2, 5):
        assert build_refined_circuit(reps).n_params == 6 * reps + 2
    with pytest.raises(ContractError):
        build_refined_circuit(0)


def test_circuit_roundtrip():
    for spec in (build_minimal_circuit(), build_refined_circuit(2)):
        assert circuit_from_dict(spec.to_dict()) == spec


def test_spec_validation():
    with pytest.raises(ContractError):
        CircuitSpec(2, (Gate("CX", (1, 1)),), 0, 0)
    with pytest.raises(ContractError):
        CircuitSpec(2, (Gate("RY", (0,), "param", 3),), 0, 2)
    with pytest.raises(ContractError):
        run_circuit(build_minimal_circuit(), np.zeros(3), np.zeros(4))


def test_refined_entangles_more_than_minimal():
    # Monte-Carlo comparison over 64 random parameter draws and inputs
    gap = []
    for seed in range(64):
        rng = np.random.default_rng(seed)
        f = rng.uniform(-1, 1, (16, 4))
        m, r = build_minimal_circuit(), build_refined_circuit(3)
        em = entanglement_entropy(run_circuit(m, f, rng.uniform(-math.pi, math.pi, m.n_params)), 0).mean()
        er = entanglement_entropy(run_circuit(r, f, rng.uniform(-math.pi, math.pi, r.n_params)), 0).mean()
        gap.append(er - em)
    assert np.mean(gap) > 0


def test_readout_zero_angles():
    psi = run_circuit(build_minimal_circuit(), np.zeros(4), np.zeros(4))
    assert np.allclose(expectations(psi, READOUT), [1, 1, 1])
