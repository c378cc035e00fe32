"""Stage runners and the diagnose/modify refinement loop.

A round of the loop runs the classical baseline, the minimal hybrid model,
diagnoses it, turns the readings into architecture changes through a small
rule table, and trains the modified hybrid model. Later rounds diagnose the
latest hybrid model and try again with a fresh parameter draw until the
result is satisfactory or the round budget runs out.

The rule table is a mechanisation of what is otherwise a judgement call;
its thresholds are configuration, not physics.
"""

from __future__ import annotations

import json
import operator
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from . import selftrain
from .data import Dataset, load_iris, pca_fit, pca_transform, span_scale, standardize
from .diagnostics import DiagnosticsReport, diagnose
from .evalmetrics import EvaluationReport, evaluate
from .hybrid import HybridModel, TrainConfig, as_predictor, build_model
from .numerics import ContractError, SeededRng
from .pls import PlsPredictor
from .qsim import build_minimal_circuit, build_refined_circuit

STAGES = ("classical", "quantum-fast", "hybrid-plus")

# ---------------------------------------------------------------------------
# configuration

DEFAULTS: dict[str, object] = {
    "seed": 0,
    "data.path": None,
    "data.pca_components": 4,
    "pls.n_components": 2,
    "pls.n_folds": 5,
    "selftrain.n_maxit": 20,
    "selftrain.fraction": 0.1,
    "selftrain.inherit_labels": False,
    "hybrid.lr_quantum": 0.05,
    "hybrid.lr_classical": 0.05,
    "hybrid.beta1": 0.9,
    "hybrid.beta2": 0.999,
    "hybrid.epochs": 60,
    "hybrid.patience": 10,
    "hybrid.clip": 1.0,
    "hybrid.min_delta": 1e-5,
    "hybrid.n_folds": 5,
    "hybrid.vocabulary": "tracking",
    "hybrid.adapter_init": "identity",
    "hybrid.persist_parameters": False,
    "hybrid.minimal.head_width": 8,
    "hybrid.refined.reps": 3,
    "hybrid.refined.head_width": 16,
    "hybrid.refined.l2_adapter": 1e-3,
    "hybrid.refined.lr_classical": 0.02,
    "diagnostics.bpi_draws": 32,
    "workflow.max_rounds": 3,
    "workflow.target_accuracy": 0.8,
    "workflow.use_ground_truth": True,
    "workflow.rule.eee_below": 0.3,
    "workflow.rule.edqfs_above": 1.2,
    "workflow.rule.qos_below": 10.0,
    "workflow.change.reps": 3,
    "workflow.change.l2_adapter": 1e-3,
    "workflow.change.head_width": 16,
}

_CHOICES = {"hybrid.vocabulary": ("tracking", "fixed"), "hybrid.adapter_init": ("identity", "random")}


class ConfigError(ValueError):
    pass


def _coerce(key: str, value):
    default = DEFAULTS[key]
    if key == "data.path":
        if value is not None and not isinstance(value, str):
            raise ConfigError(f"{key}: expected a path string or null")
        return value
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(f"{key}: expected true/false, got {value!r}")
        return value
    if isinstance(default, int):
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{key}: expected an integer, got {value!r}")
        return value
    if isinstance(default, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)) or not np.isfinite(value):
            raise ConfigError(f"{key}: expected a finite number, got {value!r}")
        return float(value)
    if not isinstance(value, str) or value not in _CHOICES.get(key, (value,)):
        raise ConfigError(f"{key}: expected one of {_CHOICES.get(key)}, got {value!r}")
    return value


def make_config(overrides: dict | None = None) -> dict:
    """Defaults merged with ``overrides``; unknown keys and bad types raise ConfigError."""
    cfg = dict(DEFAULTS)
    for key, value in (overrides or {}).items():
        if key not in DEFAULTS:
            raise ConfigError(f"unknown config key {key!r}")
        cfg[key] = _coerce(key, value)
    for key in ("selftrain.n_maxit", "pls.n_components", "hybrid.refined.reps", "workflow.max_rounds",
                "data.pca_components", "diagnostics.bpi_draws"):
        if cfg[key] < 1:
            raise ConfigError(f"{key} must be >= 1")
    for key in ("pls.n_folds", "hybrid.n_folds"):
        if cfg[key] < 2:
            raise ConfigError(f"{key} must be >= 2")
    if not 0 < cfg["selftrain.fraction"] <= 1:
        raise ConfigError("selftrain.fraction must lie in (0, 1]")
    try:
        train_config(cfg)
        train_config(cfg, variant="refined")
    except ContractError as exc:
        raise ConfigError(str(exc)) from None
    return cfg


def load_config_file(path) -> dict:
    try:
        raw = json.loads(Path(path).read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file {path} is not valid JSON: {exc}") from None
    if not isinstance(raw, dict):
        raise ConfigError(f"config file {path} must hold a flat JSON object")
    return raw


def train_config(cfg: dict, l2_adapter: float = 0.0, variant: str = "minimal") -> TrainConfig:
    """Optimiser settings; the refined variant has its own (smaller) classical learning rate."""
    lr_key = "hybrid.refined.lr_classical" if variant == "refined" else "hybrid.lr_classical"
    return TrainConfig(
        lr_quantum=cfg["hybrid.lr_quantum"],
        lr_classical=cfg[lr_key],
        betas=(cfg["hybrid.beta1"], cfg["hybrid.beta2"]),
        epochs=cfg["hybrid.epochs"],
        patience=cfg["hybrid.patience"],
        clip=cfg["hybrid.clip"],
        l2_adapter=l2_adapter,
        min_delta=cfg["hybrid.min_delta"],
    )


def derive_seed(seed: int, round_index: int) -> int:
    """Round 1 uses ``seed`` itself; later rounds step a child stream."""
    rng = SeededRng(seed)
    out = seed
    for _ in range(round_index - 1):
        out = rng.child().seed
    return out


# ---------------------------------------------------------------------------
# architectures and rules

@dataclass(frozen=True)
class ModelSpec:
    """Declarative hybrid architecture; ``entanglement == "linear"`` means the minimal circuit."""

    reps: int = 1
    entanglement: str = "linear"
    adapter: bool = False
    l2_adapter: float = 0.0
    head_width: int = 8

    @property
    def variant(self) -> str:
        return "minimal" if self.entanglement == "linear" and not self.adapter else "refined"

    def circuit(self):
        return build_minimal_circuit() if self.entanglement == "linear" else build_refined_circuit(self.reps)

    def build(self, vocabulary, seed: int, adapter_init: str = "identity") -> HybridModel:
        return build_model(self.variant, vocabulary, seed, head_width=self.head_width, adapter=self.adapter,
                           circuit=self.circuit(), adapter_init=adapter_init)

    def to_dict(self) -> dict:
        return asdict(self)


def minimal_spec(cfg: dict | None = None) -> ModelSpec:
    cfg = cfg or DEFAULTS
    return ModelSpec(head_width=cfg["hybrid.minimal.head_width"])


def refined_spec(cfg: dict | None = None) -> ModelSpec:
    cfg = cfg or DEFAULTS
    return ModelSpec(cfg["hybrid.refined.reps"], "circular", True, cfg["hybrid.refined.l2_adapter"],
                     cfg["hybrid.refined.head_width"])


@dataclass(frozen=True)
class Change:
    kind: str  # "reps" | "adapter" | "head_width"
    value: float

    def describe(self) -> str:
        return {
            "reps": f"set entangling reps to {int(self.value)} with circular entanglement",
            "adapter": f"enable adapter with lambda = {self.value:g}",
            "head_width": f"set head width to {int(self.value)}",
        }[self.kind]


@dataclass(frozen=True)
class RefinementRule:
    metric: str
    comparator: str  # "<" | ">"
    threshold: float
    change: Change

    def __post_init__(self):
        if self.comparator not in ("<", ">"):
            raise ContractError(f"rule comparator must be '<' or '>', got {self.comparator!r}")
        if not np.isfinite(self.threshold):
            raise ContractError("rule threshold must be finite")
        if self.change.kind not in ("reps", "adapter", "head_width"):
            raise ContractError(f"unknown change kind {self.change.kind!r}")

    def fires(self, report: DiagnosticsReport) -> bool:
        op = operator.lt if self.comparator == "<" else operator.gt
        return bool(op(getattr(report, self.metric), self.threshold))

    def to_dict(self) -> dict:
        return {"metric": self.metric, "comparator": self.comparator, "threshold": self.threshold,
                "change": {"kind": self.change.kind, "value": self.change.value}}


def default_rules(cfg: dict | None = None) -> tuple[RefinementRule, ...]:
    cfg = cfg or DEFAULTS
    return (
        RefinementRule("eee", "<", cfg["workflow.rule.eee_below"], Change("reps", cfg["workflow.change.reps"])),
        RefinementRule("edqfs", ">", cfg["workflow.rule.edqfs_above"],
                       Change("adapter", cfg["workflow.change.l2_adapter"])),
        RefinementRule("qos", "<", cfg["workflow.rule.qos_below"],
                       Change("head_width", cfg["workflow.change.head_width"])),
    )


def evaluate_rules(report: DiagnosticsReport, rules) -> dict[str, Change]:
    """Changes of every firing rule keyed by kind; a later rule overrides an earlier one."""
    out: dict[str, Change] = {}
    for rule in rules:
        if rule.fires(report):
            out[rule.change.kind] = rule.change
    return out


def apply_changes(spec: ModelSpec, changes: dict[str, Change]) -> ModelSpec:
    for kind, ch in changes.items():
        if kind == "reps":
            spec = replace(spec, reps=int(ch.value), entanglement="circular")
        elif kind == "adapter":
            spec = replace(spec, adapter=True, l2_adapter=float(ch.value))
        elif kind == "head_width":
            spec = replace(spec, head_width=int(ch.value))
        else:
            raise ContractError(f"unknown change kind {kind!r}")
    return spec


# ---------------------------------------------------------------------------
# stage execution

@dataclass
class Inputs:
    dataset: Dataset
    standardized: np.ndarray
    pca: np.ndarray  # principal-component coordinates of the standardized data
    circuit_inputs: np.ndarray  # span-scaled PCA coordinates, fed to the hybrid models


def prepare(cfg: dict) -> Inputs:
    ds = load_iris(cfg["data.path"])
    z = standardize(ds.features)
    k = min(cfg["data.pca_components"], z.shape[1])
    p = pca_transform(pca_fit(z, k), z)
    if p.shape[1] != 4:
        raise ConfigError("hybrid models need exactly 4 PCA components (data.pca_components = 4)")
    return Inputs(ds, z, p, span_scale(p))


@dataclass
class StageResult:
    stage: str
    seed: int
    labels: np.ndarray
    predictions: np.ndarray
    evaluation: EvaluationReport
    history: list
    model: dict
    spec: dict | None = None
    training: dict | None = None
    diagnostics: DiagnosticsReport | None = None

    def trace_dict(self) -> dict:
        out = {"selftrain": [h.to_dict() for h in self.history]}
        if self.training is not None:
            out["training"] = self.training
        return out

    def summary(self) -> dict:
        out = {"stage": self.stage, "seed": self.seed, "evaluation": _scalars(self.evaluation.to_dict()),
               "iterations": len(self.history), "n_labels": int(np.unique(self.labels).size)}
        if self.spec is not None:
            out["spec"] = self.spec
        if self.diagnostics is not None:
            out["diagnostics"] = self.diagnostics.to_dict()
        return out


def _scalars(d: dict) -> dict:
    return {k: d[k] for k in ("a_internal", "accuracy", "ari", "nmi")}


def run_classical(inputs: Inputs, cfg: dict, seed: int) -> StageResult:
    X = inputs.standardized
    predictor = PlsPredictor(cfg["pls.n_components"], cfg["pls.n_folds"], seed)
    state = selftrain.run(selftrain.init_labels(len(X)), predictor, X, cfg["selftrain.n_maxit"],
                          cfg["selftrain.fraction"])
    preds = predictor.predict(X)
    m = predictor.model
    model = {
        "kind": "pls",
        "n_components": m.n_components,
        "vocabulary": [int(v) for v in predictor.vocabulary],
        "x_weights": m.x_weights.tolist(),
        "x_loadings": m.x_loadings.tolist(),
        "y_loadings": m.y_loadings.tolist(),
        "x_mean": m.x_mean.tolist(),
        "y_mean": m.y_mean.tolist(),
    }
    return StageResult("classical", seed, state.labels, preds,
                       evaluate(state.labels, inputs.dataset.true_labels, preds), state.history, model)


def run_hybrid(inputs: Inputs, cfg: dict, spec: ModelSpec, seed: int, stage: str,
               start_labels=None) -> StageResult:
    """Self-train a hybrid model; ``start_labels`` replaces the index labels when inheriting."""
    X = inputs.circuit_inputs
    n = len(X)
    model = spec.build(np.arange(n), seed, cfg["hybrid.adapter_init"])
    initial = HybridModel.from_dict(model.to_dict())
    fixed = np.arange(n) if cfg["hybrid.vocabulary"] == "fixed" else None
    predictor = as_predictor(model, train_config(cfg, spec.l2_adapter, spec.variant), cfg["hybrid.n_folds"], seed,
                             fixed_vocabulary=fixed, persist=cfg["hybrid.persist_parameters"])
    start = selftrain.init_labels(n)
    if start_labels is not None:
        start = selftrain.LabelState(labels=np.asarray(start_labels, dtype=int).copy())
    state = selftrain.run(start, predictor, X, cfg["selftrain.n_maxit"], cfg["selftrain.fraction"])
    preds = predictor.predict(X)
    trace = predictor.last_trace
    report = diagnose(model, X, state.labels, trace, initial=initial, n_draws=cfg["diagnostics.bpi_draws"],
                      seed=seed)
    return StageResult(stage, seed, state.labels, preds, evaluate(state.labels, inputs.dataset.true_labels, preds),
                       state.history, model.to_dict(), spec.to_dict(), trace.to_dict(), report)


def run_stage(stage: str, cfg: dict, seed: int | None = None, inputs: Inputs | None = None) -> StageResult:
    seed = cfg["seed"] if seed is None else seed
    inputs = inputs or prepare(cfg)
    if stage == "classical":
        return run_classical(inputs, cfg, seed)
    specs = {"quantum-fast": minimal_spec, "hybrid-plus": refined_spec}
    if stage in specs:
        start = run_classical(inputs, cfg, seed).labels if cfg["selftrain.inherit_labels"] else None
        return run_hybrid(inputs, cfg, specs[stage](cfg), seed, stage, start)
    raise ContractError(f"unknown stage {stage!r}; expected one of {', '.join(STAGES)}")


# ---------------------------------------------------------------------------
# persistence

def dump_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def write_stage(result: StageResult, out: Path, truth=None, cfg: dict | None = None, meta: dict | None = None) -> None:
    """Write the run-directory artifacts; ``run.json`` (with ``meta``) only when ``cfg`` is given."""
    out.mkdir(parents=True, exist_ok=True)
    if cfg is not None:
        info = {"stage": result.stage, "seed": result.seed, "spec": result.spec, "config": cfg}
        if meta is not None:
            info = {"meta": meta, **info}
        dump_json(out / "run.json", info)
    dump_json(out / "model.json", result.model)
    dump_json(out / "trace.json", result.trace_dict())
    dump_json(out / "evaluation.json", result.evaluation.to_dict())
    if result.diagnostics is not None:
        dump_json(out / "diagnostics.json", result.diagnostics.to_dict(with_formulas=True))
    rows = ["index,label,prediction" + (",true_label" if truth is not None else "")]
    for i, (lab, pred) in enumerate(zip(result.labels, result.predictions)):
        rows.append(f"{i},{lab},{pred}" + (f",{truth[i]}" if truth is not None else ""))
    (out / "labels.csv").write_text("\n".join(rows) + "\n", encoding="utf-8")


# ---------------------------------------------------------------------------
# the refinement loop

@dataclass
class RoundRecord:
    index: int
    seed: int
    spec: ModelSpec
    changes: list[Change]
    stages: list[StageResult]
    satisfied: bool

    def to_dict(self) -> dict:
        return {
            "round": self.index,
            "seed": self.seed,
            "spec": self.spec.to_dict(),
            "changes": [{"kind": c.kind, "value": c.value, "description": c.describe()} for c in self.changes],
            "stages": [s.summary() for s in self.stages],
            "satisfied": self.satisfied,
        }


@dataclass
class WorkflowState:
    config: dict
    rounds: list[RoundRecord] = field(default_factory=list)
    satisfied: bool = False

    @property
    def final(self) -> StageResult | None:
        return self.rounds[-1].stages[-1] if self.rounds else None

    def to_dict(self) -> dict:
        return {
            "config": self.config,
            "rules": [r.to_dict() for r in default_rules(self.config)],
            "max_rounds": self.config["workflow.max_rounds"],
            "rounds": [r.to_dict() for r in self.rounds],
            "satisfied": self.satisfied,
            "final": self.final.summary() if self.final is not None else None,
        }


def is_satisfied(result: StageResult, changes: dict, cfg: dict) -> bool:
    score = result.evaluation.accuracy if cfg["workflow.use_ground_truth"] else result.evaluation.a_internal
    return bool(score >= cfg["workflow.target_accuracy"]) and not changes


def run_workflow(cfg: dict, out: Path | None = None, log=None, meta: dict | None = None) -> WorkflowState:
    """Classical -> minimal hybrid -> diagnose -> modify -> refined hybrid, then repeat diagnose/modify."""
    inputs = prepare(cfg)
    rules = default_rules(cfg)
    state = WorkflowState(cfg)
    truth = inputs.dataset.true_labels
    spec = minimal_spec(cfg)
    previous = inherited = None
    for r in range(1, cfg["workflow.max_rounds"] + 1):
        seed = derive_seed(cfg["seed"], r)
        stages = []
        try:
            if r == 1:
                stages.append(run_stage("classical", cfg, seed, inputs))
                if cfg["selftrain.inherit_labels"]:
                    inherited = stages[0].labels
                previous = run_hybrid(inputs, cfg, spec, seed, "quantum-fast", inherited)
                stages.append(previous)
            changes = evaluate_rules(previous.diagnostics, rules)
            spec = apply_changes(spec, changes)
            result = run_hybrid(inputs, cfg, spec, seed, "hybrid-plus", inherited)
        except Exception as exc:
            stage = ("classical", "quantum-fast", "hybrid-plus")[len(stages)] if r == 1 else "hybrid-plus"
            raise RuntimeError(f"workflow round {r}, stage {stage}: {exc}") from exc
        stages.append(result)
        ok = is_satisfied(result, evaluate_rules(result.diagnostics, rules), cfg)
        rec = RoundRecord(r, seed, spec, list(changes.values()), stages, ok)
        state.rounds.append(rec)
        if out is not None:
            rdir = Path(out) / f"round_{r}"
            write_stage(result, rdir, truth, cfg, meta)
            for s in stages[:-1]:
                write_stage(s, rdir / s.stage, truth, cfg, meta)
        if log is not None:
            ev = result.evaluation
            log(f"round {r}: {spec.variant} reps={spec.reps} adapter={spec.adapter} head={spec.head_width} "
                f"accuracy={ev.accuracy:.4f} ari={ev.ari:.4f} nmi={ev.nmi:.4f} satisfied={ok}")
        previous = result
        if ok:
            state.satisfied = True
            break
    return state
