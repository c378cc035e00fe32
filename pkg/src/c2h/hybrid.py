"""Hybrid quantum-classical classifiers and their training loop.

``minimal``:  probs = head(circuit(x))
``refined``:  probs = head(circuit(adapter(x)))

The circuit output is the vector of READOUT expectations. Quantum gradients
(and, for the refined model, gradients with respect to the circuit inputs)
come from the two-term shift rule; the classical layers are differentiated
by hand-written backpropagation.
"""

from __future__ import annotations

import copy
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .numerics import ContractError, SeededRng
from .pls import CvPlan
from .qsim import (
    READOUT,
    CircuitSpec,
    build_minimal_circuit,
    build_refined_circuit,
    circuit_from_dict,
    expectations,
    run_circuit,
    shift_derivatives,
)

N_QFEATURES = len(READOUT)
THETA_INIT = math.pi / 8


class TrainingError(RuntimeError):
    pass


@dataclass
class AdapterParams:
    weights: np.ndarray  # in x out
    bias: np.ndarray
    activation: str = "tanh"  # "identity" exists only as a test hook

    def apply(self, x: np.ndarray) -> np.ndarray:
        pre = x @ self.weights + self.bias
        return np.tanh(pre) if self.activation == "tanh" else pre


@dataclass
class HeadParams:
    w_hidden: np.ndarray  # 3 x H
    b_hidden: np.ndarray
    w_out: np.ndarray  # H x L
    b_out: np.ndarray

    @property
    def width(self) -> int:
        return self.w_hidden.shape[1]

    @property
    def n_outputs(self) -> int:
        return self.w_out.shape[1]


@dataclass
class TrainConfig:
    lr_quantum: float = 0.05
    lr_classical: float = 0.01
    betas: tuple[float, float] = (0.9, 0.999)
    epochs: int = 60
    patience: int = 10
    clip: float = 1.0
    l2_adapter: float = 1e-3
    min_delta: float = 1e-5

    def __post_init__(self):
        for name in ("lr_quantum", "lr_classical", "epochs", "patience", "clip"):
            if not getattr(self, name) > 0:
                raise ContractError(f"TrainConfig.{name} must be positive")
        if self.l2_adapter < 0:
            raise ContractError("TrainConfig.l2_adapter must be non-negative")
        if self.patience > self.epochs:
            raise ContractError("TrainConfig.patience must not exceed epochs")


@dataclass
class TrainingTrace:
    loss: list[float] = field(default_factory=list)
    quantum_grad_norm: list[float] = field(default_factory=list)
    classical_grad_norm: list[float] = field(default_factory=list)
    stopped_early: bool = False

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class HybridModel:
    variant: str
    circuit: CircuitSpec
    theta: np.ndarray
    head: HeadParams
    vocabulary: np.ndarray
    adapter: AdapterParams | None = None
    seed: int = 0
    rng: SeededRng | None = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        if self.variant not in ("minimal", "refined"):
            raise ContractError(f"unknown hybrid variant {self.variant!r}")
        if self.variant == "minimal" and self.adapter is not None:
            raise ContractError("minimal variant has no adapter")
        if self.theta.shape != (self.circuit.n_params,):
            raise ContractError(
                f"theta has {self.theta.shape} entries, circuit expects {self.circuit.n_params}"
            )

    @property
    def n_inputs(self) -> int:
        return self.circuit.n_features

    def circuit_input(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        if X.shape[-1] != self.n_inputs:
            raise ContractError(f"hybrid model expects {self.n_inputs} inputs, got {X.shape[-1]}")
        return self.adapter.apply(X) if self.adapter is not None else X

    def states(self, X) -> np.ndarray:
        return run_circuit(self.circuit, self.circuit_input(X), self.theta)

    def to_dict(self) -> dict:
        out = {
            "variant": self.variant,
            "seed": self.seed,
            "circuit": self.circuit.to_dict(),
            "theta": self.theta.tolist(),
            "head": {k: v.tolist() for k, v in asdict(self.head).items()},
            "vocabulary": [int(v) for v in self.vocabulary],
            "adapter": None,
        }
        if self.adapter is not None:
            out["adapter"] = {
                "weights": self.adapter.weights.tolist(),
                "bias": self.adapter.bias.tolist(),
                "activation": self.adapter.activation,
            }
        return out

    @classmethod
    def from_dict(cls, d: dict) -> "HybridModel":
        head = HeadParams(**{k: np.array(v, dtype=float) for k, v in d["head"].items()})
        adapter = None
        if d.get("adapter") is not None:
            a = d["adapter"]
            adapter = AdapterParams(np.array(a["weights"]), np.array(a["bias"]), a.get("activation", "tanh"))
        return cls(
            variant=d["variant"],
            circuit=circuit_from_dict(d["circuit"]),
            theta=np.array(d["theta"], dtype=float),
            head=head,
            vocabulary=np.array(d["vocabulary"], dtype=int),
            adapter=adapter,
            seed=d.get("seed", 0),
        )


def init_head(rng: SeededRng, width: int, n_outputs: int, n_in: int = N_QFEATURES) -> HeadParams:
    return HeadParams(
        w_hidden=rng.normal((n_in, width)) / math.sqrt(n_in),
        b_hidden=np.zeros(width),
        w_out=rng.normal((width, n_outputs)) / math.sqrt(width),
        b_out=np.zeros(n_outputs),
    )


def init_adapter(rng: SeededRng, n: int = 4) -> AdapterParams:
    return AdapterParams(weights=rng.normal((n, n)) / math.sqrt(n), bias=np.zeros(n))


def build_model(
    variant: str,
    vocabulary,
    seed: int,
    head_width: int | None = None,
    reps: int = 3,
    adapter: bool | None = None,
    circuit: CircuitSpec | None = None,
    adapter_init: str = "identity",
) -> HybridModel:
    """Fresh model. ``refined`` defaults to reps=3, an adapter and a 16-wide head.

    ``adapter_init="identity"`` starts the adapter at W = I, b = 0 (the random
    draw is still consumed so the head does not depend on this choice).
    """
    rng = SeededRng(seed)
    if variant == "minimal":
        circuit = circuit or build_minimal_circuit()
        width = head_width or 8
        use_adapter = False if adapter is None else adapter
    else:
        circuit = circuit or build_refined_circuit(reps)
        width = head_width or 16
        use_adapter = True if adapter is None else adapter
    theta = rng.uniform(circuit.n_params, -THETA_INIT, THETA_INIT)
    ad = init_adapter(rng, circuit.n_features) if use_adapter else None
    if ad is not None and adapter_init == "identity":
        ad.weights = np.eye(circuit.n_features)
    elif adapter_init not in ("identity", "random"):
        raise ContractError(f"unknown adapter_init {adapter_init!r}")
    vocab = np.asarray(vocabulary, dtype=int)
    head = init_head(rng, width, vocab.size)
    return HybridModel(variant, circuit, theta, head, vocab, ad, seed, rng)


def _softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def quantum_features(model: HybridModel, X) -> np.ndarray:
    """Readout expectations <ZI>, <IZ>, <ZZ> per sample."""
    return expectations(model.states(X))


def head_forward(head: HeadParams, q: np.ndarray):
    hidden = np.tanh(q @ head.w_hidden + head.b_hidden)
    return hidden, _softmax(hidden @ head.w_out + head.b_out)


def forward(model: HybridModel, X) -> np.ndarray:
    """Class probabilities over ``model.vocabulary``; accepts one sample or a batch."""
    _, probs = head_forward(model.head, quantum_features(model, X))
    return probs


def predict(model: HybridModel, X) -> np.ndarray:
    return model.vocabulary[np.argmax(forward(model, X), axis=-1)]


# parameter packing --------------------------------------------------------

def classical_arrays(model: HybridModel) -> list[np.ndarray]:
    arrays = [model.head.w_hidden, model.head.b_hidden, model.head.w_out, model.head.b_out]
    if model.adapter is not None:
        arrays += [model.adapter.weights, model.adapter.bias]
    return arrays


def loss_and_grads(model: HybridModel, X, targets: np.ndarray, l2: float = 0.0):
    """Mean cross-entropy (+ l2 * ||adapter weights||^2) and exact gradients.

    Returns ``(loss, grad_theta, [grads matching classical_arrays(model)])``.
    """
    X = np.asarray(X, dtype=float)
    n = X.shape[0]
    circuit = model.circuit
    z = model.circuit_input(X)
    param_gates = [k for k, g in enumerate(circuit.gates) if g.kind != "CX" and g.source == "param"]
    feat_gates = (
        [k for k, g in enumerate(circuit.gates) if g.kind != "CX" and g.source == "feature"]
        if model.adapter is not None
        else []
    )
    q, dq_dangle = shift_derivatives(circuit, z, model.theta, param_gates + feat_gates)

    head = model.head
    hidden, probs = head_forward(head, q)
    loss = -np.sum(targets * np.log(np.clip(probs, 1e-300, None))) / n
    if model.adapter is not None and l2 > 0:
        loss += l2 * float(np.sum(model.adapter.weights**2))

    d_logits = (probs - targets) / n
    g_w_out = hidden.T @ d_logits
    g_b_out = d_logits.sum(axis=0)
    d_pre = (d_logits @ head.w_out.T) * (1.0 - hidden**2)
    g_w_hidden = q.T @ d_pre
    g_b_hidden = d_pre.sum(axis=0)
    d_q = d_pre @ head.w_hidden.T  # n x 3

    # contract the per-gate derivative stack with the upstream gradient
    per_gate = np.einsum("gno,no->gn", dq_dangle, d_q)
    g_theta = np.zeros(circuit.n_params)
    for r, k in enumerate(param_gates):
        g_theta[circuit.gates[k].index] += per_gate[r].sum()
    grads = [g_w_hidden, g_b_hidden, g_w_out, g_b_out]

    if model.adapter is not None:
        d_z = np.zeros_like(z)
        for r, k in enumerate(feat_gates, start=len(param_gates)):
            d_z[:, circuit.gates[k].index] += circuit.feature_scale * per_gate[r]
        if model.adapter.activation == "tanh":
            d_z = d_z * (1.0 - z**2)
        g_wa = X.T @ d_z + 2.0 * l2 * model.adapter.weights
        g_ba = d_z.sum(axis=0)
        grads += [g_wa, g_ba]
    return float(loss), g_theta, grads


def clip_gradients(grads: list[np.ndarray], threshold: float) -> tuple[list[np.ndarray], float]:
    """Scale all gradients together so their global L2 norm is at most ``threshold``."""
    norm = math.sqrt(sum(float(np.sum(g**2)) for g in grads))
    if norm > threshold:
        factor = threshold / norm
        grads = [g * factor for g in grads]
    return grads, norm


class _Adam:
    def __init__(self, arrays, lrs, betas):
        self.lrs = lrs
        self.b1, self.b2 = betas
        self.m = [np.zeros_like(a) for a in arrays]
        self.v = [np.zeros_like(a) for a in arrays]
        self.t = 0

    def update(self, arrays, grads):
        self.t += 1
        c1 = 1 - self.b1**self.t
        c2 = 1 - self.b2**self.t
        for a, g, m, v, lr in zip(arrays, grads, self.m, self.v, self.lrs):
            m *= self.b1
            m += (1 - self.b1) * g
            v *= self.b2
            v += (1 - self.b2) * g * g
            a -= lr * (m / c1) / (np.sqrt(v / c2) + 1e-8)


def encode_targets(model: HybridModel, labels) -> np.ndarray:
    labels = np.asarray(labels)
    index = {int(v): i for i, v in enumerate(model.vocabulary)}
    try:
        cols = np.array([index[int(v)] for v in labels])
    except KeyError as exc:
        raise ContractError(f"label {exc.args[0]} not in model vocabulary") from None
    targets = np.zeros((labels.size, model.vocabulary.size))
    targets[np.arange(labels.size), cols] = 1.0
    return targets


def train(model: HybridModel, X, labels, cfg: TrainConfig) -> tuple[HybridModel, TrainingTrace]:
    """Full-batch Adam with global-norm clipping and early stopping.

    The model is updated in place and also returned; its parameters end at the
    best-loss epoch seen.
    """
    X = np.asarray(X, dtype=float)
    targets = encode_targets(model, labels)
    arrays = [model.theta] + classical_arrays(model)
    lrs = [cfg.lr_quantum] + [cfg.lr_classical] * (len(arrays) - 1)
    opt = _Adam(arrays, lrs, cfg.betas)
    trace = TrainingTrace()
    best = math.inf
    best_params = [a.copy() for a in arrays]
    wait = 0
    for epoch in range(cfg.epochs):
        loss, g_theta, g_cls = loss_and_grads(model, X, targets, cfg.l2_adapter)
        if not math.isfinite(loss):
            raise TrainingError(f"non-finite loss at epoch {epoch}")
        trace.loss.append(loss)
        trace.quantum_grad_norm.append(float(np.linalg.norm(g_theta)))
        trace.classical_grad_norm.append(math.sqrt(sum(float(np.sum(g**2)) for g in g_cls)))
        if loss < best - cfg.min_delta:
            best = loss
            best_params = [a.copy() for a in arrays]
            wait = 0
        else:
            wait += 1
            if wait >= cfg.patience:
                trace.stopped_early = True
                break
        grads, _ = clip_gradients([g_theta] + g_cls, cfg.clip)
        opt.update(arrays, grads)
    for a, b in zip(arrays, best_params):
        a[...] = b
    return model, trace


class HybridPredictor:
    """Self-training predictor around a hybrid model.

    Every training run, out-of-fold or full-data, starts from the same
    anchor: the untrained model's theta and adapter plus a head whose output
    column for label id k is drawn once and reused. Two label vectors are then
    compared by the labels alone, not by where earlier fits happened to land.

    With ``persist=True`` full-data fits instead continue from the previous
    fit (theta and adapter carry over; the head is redrawn from the model's
    seed stream when the vocabulary changes).
    """

    def __init__(self, model: HybridModel, cfg: TrainConfig, n_folds: int = 5, seed: int = 0,
                 fixed_vocabulary=None, persist: bool = False) -> None:
        self.anchor = _clone(model)
        self.model = model
        self.cfg = cfg
        self.n_folds = n_folds
        self.seed = seed
        self.persist = persist
        self.fixed_vocabulary = None if fixed_vocabulary is None else np.asarray(fixed_vocabulary, dtype=int)
        self.rng = model.rng if model.rng is not None else SeededRng(model.seed)
        self.head_seed = SeededRng(seed).child().seed
        self._template: HeadParams | None = None
        self.last_trace: TrainingTrace | None = None

    def _vocab(self, labels) -> np.ndarray:
        return self.fixed_vocabulary if self.fixed_vocabulary is not None else np.unique(labels)

    def _head(self, vocab: np.ndarray) -> HeadParams:
        width = self.anchor.head.width
        need = int(vocab.max()) + 1
        t = self._template
        if t is None or t.n_outputs < need:
            t = self._template = init_head(SeededRng(self.head_seed), width, max(need, self.anchor.vocabulary.size))
        return HeadParams(t.w_hidden.copy(), t.b_hidden.copy(), t.w_out[:, vocab].copy(), t.b_out[vocab].copy())

    def _start(self, vocab: np.ndarray) -> HybridModel:
        m = _clone(self.anchor)
        m.head = self._head(vocab)
        m.vocabulary = vocab
        return m

    def fit(self, X, labels) -> None:
        vocab = self._vocab(labels)
        if self.persist:
            if not np.array_equal(self.model.vocabulary, vocab):
                self.model.head = init_head(self.rng, self.model.head.width, vocab.size)
                self.model.vocabulary = vocab
            _, self.last_trace = train(self.model, X, labels, self.cfg)
            return
        fitted, self.last_trace = train(self._start(vocab), X, labels, self.cfg)
        self.model.theta = fitted.theta
        self.model.adapter = fitted.adapter
        self.model.head = fitted.head
        self.model.vocabulary = fitted.vocabulary

    def cross_val_predict(self, X, labels) -> tuple[np.ndarray, np.ndarray]:
        X = np.asarray(X, dtype=float)
        labels = np.asarray(labels)
        vocab = self._vocab(labels)
        plan = CvPlan.make(len(labels), self.n_folds, self.seed)
        start = self._start(vocab)
        pred = np.empty(len(labels), dtype=int)
        conf = np.empty(len(labels))
        for fold in range(plan.k):
            tr, te = plan.split(fold)
            m, _ = train(_clone(start), X[tr], labels[tr], self.cfg)
            probs = forward(m, X[te])
            pred[te] = vocab[np.argmax(probs, axis=1)]
            conf[te] = probs.max(axis=1)
        return pred, conf

    def predict(self, X) -> np.ndarray:
        return predict(self.model, X)


def _clone(model: HybridModel) -> HybridModel:
    rng = model.rng
    model.rng = None
    try:
        out = copy.deepcopy(model)
    finally:
        model.rng = rng
    return out


def as_predictor(model: HybridModel, cfg: TrainConfig, n_folds: int = 5, seed: int = 0, **kw) -> HybridPredictor:
    return HybridPredictor(model, cfg, n_folds, seed, **kw)
