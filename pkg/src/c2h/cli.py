"""Command-line entry point: ``c2h run|workflow|diagnose|report|data inspect``.

Exit codes: 0 success, 1 usage or configuration error, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import csv
import datetime as _dt
import io
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .data import DataLoadError, load_iris
from .diagnostics import diagnose
from .hybrid import HybridModel, TrainingTrace
from .numerics import ContractError
from .workflow import (
    STAGES,
    ConfigError,
    ModelSpec,
    dump_json,
    load_config_file,
    make_config,
    prepare,
    run_stage,
    run_workflow,
    write_stage,
)

REPORT_KEYS = ("a_internal", "accuracy", "ari", "nmi")
DIAG_KEYS = ("tsi", "qgn", "bpi", "edqfs", "qos", "eee", "qmi")
PALETTE = ("#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def _meta(command: str) -> dict:
    return {
        "created": _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds"),
        "tool": "c2h",
        "version": __version__,
        "command": command,
    }


def _resolve_config(args) -> dict:
    overrides = load_config_file(args.config) if getattr(args, "config", None) else {}
    if getattr(args, "seed", None) is not None:
        overrides["seed"] = args.seed
    elif "seed" not in overrides and os.environ.get("C2H_SEED"):
        try:
            overrides["seed"] = int(os.environ["C2H_SEED"])
        except ValueError:
            raise ConfigError(f"C2H_SEED must be an integer, got {os.environ['C2H_SEED']!r}") from None
    if getattr(args, "data", None):
        overrides["data.path"] = args.data
    if getattr(args, "max_rounds", None) is not None:
        overrides["workflow.max_rounds"] = args.max_rounds
    return make_config(overrides)


def cmd_run(args) -> int:
    cfg = _resolve_config(args)
    out = Path(args.out or f"runs/{args.model}-seed{cfg['seed']}")
    inputs = prepare(cfg)
    result = run_stage(args.model, cfg, inputs=inputs)
    write_stage(result, out, inputs.dataset.true_labels, cfg, _meta("run"))
    ev = result.evaluation
    print(f"{args.model} seed={cfg['seed']}: accuracy={ev.accuracy:.4f} ari={ev.ari:.4f} nmi={ev.nmi:.4f} "
          f"a_internal={ev.a_internal:.4f} labels={len(set(result.labels.tolist()))} -> {out}")
    return 0


def cmd_workflow(args) -> int:
    cfg = _resolve_config(args)
    out = Path(args.out or f"runs/workflow-seed{cfg['seed']}")
    out.mkdir(parents=True, exist_ok=True)
    state = run_workflow(cfg, out, log=print, meta=_meta("workflow"))
    dump_json(out / "workflow.json", {"meta": _meta("workflow"), **state.to_dict()})
    print(f"satisfied={state.satisfied} rounds={len(state.rounds)} -> {out}")
    return 0


def _read_json(path: Path):
    if not path.is_file():
        raise FileNotFoundError(f"missing run artifact: {path}")
    return json.loads(path.read_text(encoding="utf-8"))


def _read_labels(path: Path) -> dict[str, np.ndarray]:
    if not path.is_file():
        raise FileNotFoundError(f"missing run artifact: {path}")
    with path.open(encoding="utf-8", newline="") as fh:
        rows = list(csv.DictReader(fh))
    return {k: np.array([int(r[k]) for r in rows]) for k in rows[0]} if rows else {}


def cmd_diagnose(args) -> int:
    run = Path(args.run)
    info = _read_json(run / "run.json")
    if info.get("stage") == "classical":
        raise RuntimeError(f"{run}: diagnostics apply to hybrid stages only")
    cfg = make_config(info["config"])
    model = HybridModel.from_dict(_read_json(run / "model.json"))
    training = _read_json(run / "trace.json").get("training")
    if training is None:
        raise FileNotFoundError(f"missing run artifact: training trace in {run / 'trace.json'}")
    labels = _read_labels(run / "labels.csv")["label"]
    inputs = prepare(cfg)
    if not info.get("spec"):
        raise FileNotFoundError(f"missing run artifact: architecture spec in {run / 'run.json'}")
    initial = ModelSpec(**info["spec"]).build(np.arange(len(labels)), info["seed"], cfg["hybrid.adapter_init"])
    report = diagnose(model, inputs.circuit_inputs, labels, TrainingTrace(**training), initial=initial,
                      n_draws=cfg["diagnostics.bpi_draws"], seed=info["seed"])
    dump_json(run / "diagnostics.json", report.to_dict(with_formulas=True))
    print(" ".join(f"{k}={v:.6g}" for k, v in report.to_dict().items()))
    return 0


def _svg_scatter(xy: np.ndarray, labels: np.ndarray, title: str, size: int = 360) -> str:
    """Self-contained scatter plot; colours follow cluster size (largest first)."""
    ids, counts = np.unique(labels, return_counts=True)
    order = ids[np.argsort(-counts, kind="stable")]
    colour = {int(v): PALETTE[i] if i < len(PALETTE) else "#999999" for i, v in enumerate(order)}
    pad = 30
    lo, hi = xy.min(axis=0), xy.max(axis=0)
    span = np.where(hi > lo, hi - lo, 1.0)
    pts = pad + (xy - lo) / span * (size - 2 * pad)
    buf = io.StringIO()
    buf.write(f'<svg xmlns="http://www.w3.org/2000/svg" width="{size}" height="{size}" '
              f'viewBox="0 0 {size} {size}">\n')
    buf.write(f'<rect width="{size}" height="{size}" fill="#ffffff"/>\n')
    buf.write(f'<text x="{size / 2:.1f}" y="18" text-anchor="middle" '
              f'style="font-family:sans-serif;font-size:13px">{title}</text>\n')
    buf.write(f'<text x="{size / 2:.1f}" y="{size - 6}" text-anchor="middle" '
              f'style="font-family:sans-serif;font-size:11px">PC1</text>\n')
    buf.write(f'<text x="10" y="{size / 2:.1f}" text-anchor="middle" transform="rotate(-90 10 {size / 2:.1f})" '
              f'style="font-family:sans-serif;font-size:11px">PC2</text>\n')
    for (x, y), lab in zip(pts, labels):
        buf.write(f'<circle cx="{x:.2f}" cy="{size - y:.2f}" r="3" '
                  f'style="fill:{colour[int(lab)]};fill-opacity:0.8;stroke:none"/>\n')
    buf.write("</svg>\n")
    return buf.getvalue()


def cmd_report(args) -> int:
    runs = [Path(p) for p in args.runs.split(",") if p.strip()]
    if not runs:
        raise UsageError("report: --runs needs at least one run directory")
    out = Path(args.out)
    rows = []
    truth = pca = None
    panels = []
    for k, run in enumerate(runs):
        info = _read_json(run / "run.json")
        ev = _read_json(run / "evaluation.json")
        diag = _read_json(run / "diagnostics.json") if (run / "diagnostics.json").is_file() else {}
        row = {"run": run.name, "stage": info.get("stage", ""), "seed": info.get("seed", "")}
        row.update({key: ev[key] for key in REPORT_KEYS})
        row.update({key: diag.get(key, "") for key in DIAG_KEYS})
        rows.append(row)
        if args.svg:
            labels = _read_labels(run / "labels.csv")
            if pca is None:
                pca = prepare(make_config(info["config"])).pca[:, :2]
                truth = labels.get("true_label")
            panels.append((f"{k + 1:02d}_{run.name}.svg", labels["label"], f"{info.get('stage', run.name)} "
                           f"(seed {info.get('seed', '?')})"))
    out.mkdir(parents=True, exist_ok=True)
    fields = ["run", "stage", "seed", *REPORT_KEYS, *DIAG_KEYS]
    with (out / "comparison.csv").open("w", encoding="utf-8", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=fields, lineterminator="\n")
        w.writeheader()
        w.writerows(rows)
    dump_json(out / "comparison.json", {"runs": rows})
    for name, labels, title in panels:
        (out / name).write_text(_svg_scatter(pca, labels, title), encoding="utf-8")
    if args.svg and truth is not None:
        (out / "ground_truth.svg").write_text(_svg_scatter(pca, truth, "ground truth"), encoding="utf-8")
    print(f"report for {len(rows)} run(s) -> {out}")
    return 0


def cmd_data_inspect(args) -> int:
    ds = load_iris(args.data)
    counts = np.bincount(ds.true_labels)
    print(f"samples: {ds.n_samples}")
    print(f"features: {', '.join(ds.feature_names)}")
    for name, col in zip(ds.feature_names, ds.features.T):
        print(f"  {name}: min={col.min():.3f} max={col.max():.3f} mean={col.mean():.3f} std={col.std():.3f}")
    print("classes: " + ", ".join(f"{n} ({c})" for n, c in zip(ds.class_names, counts)))
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="c2h", description="Classical and hybrid self-training clustering on Iris.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(sp):
        sp.add_argument("--config", help="flat JSON config file with namespaced keys")
        sp.add_argument("--seed", type=int, help="seed (falls back to the config file, then $C2H_SEED)")
        sp.add_argument("--out", help="output run directory")
        sp.add_argument("--data", help="CSV dataset (defaults to the bundled Iris copy)")

    r = sub.add_parser("run", help="run one stage end to end")
    r.add_argument("--model", required=True, choices=STAGES)
    common(r)
    r.set_defaults(func=cmd_run)

    w = sub.add_parser("workflow", help="run the diagnose/modify refinement loop")
    common(w)
    w.add_argument("--max-rounds", type=int, dest="max_rounds")
    w.set_defaults(func=cmd_workflow)

    d = sub.add_parser("diagnose", help="recompute diagnostics for an existing hybrid run")
    d.add_argument("--run", required=True)
    d.set_defaults(func=cmd_diagnose)

    rp = sub.add_parser("report", help="compare runs; optionally emit SVG scatter plots")
    rp.add_argument("--runs", required=True, help="comma-separated run directories")
    rp.add_argument("--out", required=True)
    rp.add_argument("--svg", action="store_true")
    rp.set_defaults(func=cmd_report)

    data = sub.add_parser("data", help="dataset utilities")
    dsub = data.add_subparsers(dest="data_command", required=True, parser_class=_Parser)
    ins = dsub.add_parser("inspect", help="summarise the dataset")
    ins.add_argument("--data")
    ins.set_defaults(func=cmd_data_inspect)
    return p


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return 1
    try:
        return args.func(args)
    except (UsageError, ConfigError) as exc:
        print(f"c2h: error: {exc}", file=sys.stderr)
        return 1
    except (ContractError, DataLoadError, FileNotFoundError, RuntimeError, KeyError, ValueError) as exc:
        print(f"c2h: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
