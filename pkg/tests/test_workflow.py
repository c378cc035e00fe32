import json

import numpy as np
import pytest

from c2h.diagnostics import DiagnosticsReport
from c2h.workflow import (
    STAGES,
    Change,
    ConfigError,
    ModelSpec,
    RefinementRule,
    apply_changes,
    default_rules,
    derive_seed,
    evaluate_rules,
    make_config,
    minimal_spec,
    refined_spec,
    run_workflow,
)

TINY = {"selftrain.n_maxit": 2, "hybrid.epochs": 4, "hybrid.patience": 4, "diagnostics.bpi_draws": 4}


def _report(**kw):
    base = dict(tsi=1.0, qgn=0.1, bpi=1e-3, edqfs=1.0, qos=50.0, eee=0.9, qmi=1.8)
    base.update(kw)
    return DiagnosticsReport(**base)


def test_rules_fire_on_reference_readings():
    rules = default_rules()
    assert set(evaluate_rules(_report(eee=0.175), rules)) == {"reps"}
    assert evaluate_rules(_report(eee=0.175), rules)["reps"].value == 3
    assert set(evaluate_rules(_report(edqfs=1.3), rules)) == {"adapter"}
    assert evaluate_rules(_report(edqfs=1.3), rules)["adapter"].value == pytest.approx(1e-3)
    assert set(evaluate_rules(_report(qos=5.38), rules)) == {"head_width"}
    assert evaluate_rules(_report(), rules) == {}
    everything = evaluate_rules(_report(eee=0.175, edqfs=1.2952, qos=5.38), rules)
    assert set(everything) == {"reps", "adapter", "head_width"}


def test_rule_dedup_last_wins():
    rules = (
        RefinementRule("eee", "<", 0.5, Change("reps", 2)),
        RefinementRule("qos", "<", 100, Change("reps", 4)),
    )
    assert evaluate_rules(_report(eee=0.1, qos=1), rules)["reps"].value == 4


def test_rule_validation():
    with pytest.raises(ValueError):
        RefinementRule("eee", "<=", 0.3, Change("reps", 3))
    with pytest.raises(ValueError):
        RefinementRule("eee", "<", float("nan"), Change("reps", 3))
    with pytest.raises(ValueError):
        RefinementRule("eee", "<", 0.3, Change("depth", 3))


def test_apply_changes_builds_refined():
    changes = evaluate_rules(_report(eee=0.175, edqfs=1.2952, qos=5.38), default_rules())
    spec = apply_changes(minimal_spec(), changes)
    assert spec == refined_spec()
    assert spec.variant == "refined"
    assert apply_changes(spec, changes) == spec  # idempotent
    assert apply_changes(minimal_spec(), {}) == minimal_spec()
    reps_only = apply_changes(minimal_spec(), {"reps": Change("reps", 3)})
    assert reps_only.circuit().n_params == 6 * 3 + 2
    assert reps_only.build(np.arange(3), 0).theta.size == 20


def test_spec_build_variants():
    m = minimal_spec().build(np.arange(4), 0)
    assert m.variant == "minimal" and m.adapter is None and m.head.width == 8
    r = refined_spec().build(np.arange(4), 0)
    assert r.variant == "refined" and r.adapter is not None and r.head.width == 16
    assert np.array_equal(r.adapter.weights, np.eye(4))
    adapter_only = ModelSpec(adapter=True, l2_adapter=1e-3).build(np.arange(4), 0)
    assert adapter_only.circuit.n_params == 4 and adapter_only.adapter is not None


def test_config_validation():
    cfg = make_config({"hybrid.lr_quantum": 0.1, "seed": 3})
    assert cfg["hybrid.lr_quantum"] == 0.1 and cfg["seed"] == 3
    for bad in ({"hybrid.lr_qantum": 0.1}, {"seed": "x"}, {"hybrid.epochs": 1.5}, {"hybrid.patience": 100},
                {"hybrid.vocabulary": "other"}, {"workflow.use_ground_truth": 1}, {"pls.n_folds": 1}):
        with pytest.raises(ConfigError):
            make_config(bad)


def test_derive_seed():
    assert derive_seed(7, 1) == 7
    assert derive_seed(7, 2) != 7
    assert derive_seed(7, 3) == derive_seed(7, 3)
    assert len({derive_seed(7, r) for r in range(1, 5)}) == 4


def test_workflow_round_bound_unsatisfied(tmp_path):
    cfg = make_config({**TINY, "workflow.max_rounds": 1, "workflow.target_accuracy": 1.0})
    state = run_workflow(cfg, tmp_path)
    assert len(state.rounds) == 1 and not state.satisfied
    assert [s.stage for s in state.rounds[0].stages] == list(STAGES)
    rdir = tmp_path / "round_1"
    for name in ("model.json", "trace.json", "diagnostics.json", "evaluation.json"):
        assert (rdir / name).is_file()
    assert (rdir / "classical" / "evaluation.json").is_file()
    assert (rdir / "quantum-fast" / "diagnostics.json").is_file()


def test_workflow_satisfied_exits_after_first_round():
    cfg = make_config({**TINY, "workflow.target_accuracy": 0.0, "workflow.rule.eee_below": -1.0,
                       "workflow.rule.edqfs_above": 10.0, "workflow.rule.qos_below": -1.0})
    state = run_workflow(cfg)
    assert state.satisfied and len(state.rounds) == 1
    # no rule fired, so the "refined" stage keeps the minimal architecture
    assert state.rounds[0].spec == minimal_spec(cfg)


def test_workflow_history_bounded_and_deterministic():
    cfg = make_config({**TINY, "workflow.max_rounds": 2, "workflow.target_accuracy": 1.0})
    a = run_workflow(cfg).to_dict()
    b = run_workflow(cfg).to_dict()
    assert json.dumps(a, sort_keys=True) == json.dumps(b, sort_keys=True)
    assert len(a["rounds"]) == 2
    assert [s["stage"] for s in a["rounds"][1]["stages"]] == ["hybrid-plus"]
    assert a["rounds"][0]["seed"] != a["rounds"][1]["seed"]


def test_inherit_labels_starts_from_classical():
    from c2h.workflow import run_stage

    cfg = make_config({**TINY, "selftrain.inherit_labels": True})
    classical = run_stage("classical", cfg)
    hybrid = run_stage("quantum-fast", cfg)
    # tracking vocabulary: the hybrid can only move labels within the inherited label set
    assert set(hybrid.labels.tolist()) <= set(classical.labels.tolist())
    plain = run_stage("quantum-fast", make_config(TINY))
    assert not np.array_equal(plain.labels, hybrid.labels)


def test_train_config_per_variant_learning_rate():
    from c2h.workflow import train_config

    cfg = make_config({"hybrid.lr_classical": 0.04, "hybrid.refined.lr_classical": 0.015})
    assert train_config(cfg).lr_classical == 0.04
    assert train_config(cfg, 1e-3, "refined").lr_classical == 0.015
    assert train_config(cfg, 1e-3, "refined").l2_adapter == 1e-3
    with pytest.raises(ConfigError):
        make_config({"hybrid.refined.lr_classical": 0.0})
