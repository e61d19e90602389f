"""Command line entry point: ``homkit <command> [options]``."""

from __future__ import annotations

import argparse
import csv
import json
import sys
import warnings
from pathlib import Path

import yaml

from homkit.dataset import load_dataset, save_dataset, synth_dataset
from homkit.protocol import (
    COVEST_COLUMNS,
    METHOD_PRESETS,
    ProtocolConfig,
    TunedConfig,
    rows_to_csv,
    run_covest,
    run_test,
    run_training,
    run_uncertainty,
    sweep_csv,
)
from homkit.synth import SceneConfig, ValidationConfig, validate_homography
from homkit.uncert import write_report

DEFAULT_METHODS = ("lsq", "ransac", "msac", "lo-ransac", "prosac")


def load_config(path):
    if path is None:
        return {}
    with open(path) as f:
        cfg = yaml.safe_load(f) or {}
    if not isinstance(cfg, dict):
        raise ValueError(f"{path}: config must be a mapping")
    return cfg


def _protocol(cfg, args):
    d = dict(cfg.get("protocol", {}))
    if args.seed is not None:
        d["seed"] = args.seed
    if args.jobs is not None:
        d["jobs"] = args.jobs
    return ProtocolConfig.from_dict(d)


def _methods(cfg, args):
    if args.methods:
        methods = [m.strip() for m in args.methods.split(",") if m.strip()]
    else:
        methods = list(cfg.get("methods", DEFAULT_METHODS))
    bad = [m for m in methods if m not in METHOD_PRESETS]
    if bad:
        raise ValueError(f"unknown methods {bad}; known: {sorted(METHOD_PRESETS)}")
    return methods


def _out(args, default):
    out = Path(args.out or default)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _need_dataset(args):
    if not args.dataset:
        raise ValueError("--dataset is required")
    return args.dataset


def _write_json(path, obj):
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True))


def cmd_synth(cfg, args):
    sc = dict(cfg.get("synth", {}))
    scene = SceneConfig(**{k: tuple(v) if isinstance(v, list) else v for k, v in sc.pop("scene", {}).items()})
    seed = args.seed if args.seed is not None else sc.pop("seed", 0)
    sc.pop("seed", None)
    ds = synth_dataset(scene_config=scene, seed=seed, **sc)
    out = _out(args, "out")
    path = save_dataset(ds, out / "dataset.json", sidecar=bool(cfg.get("sidecar", False)))
    return {"dataset": str(path), "scenes": len(ds.scenes), "cases": ds.n_cases}


def cmd_validate(cfg, args):
    vcfg = ValidationConfig(**cfg.get("validation", {}))
    ds = load_dataset(_need_dataset(args), validate=False)
    rejected = []
    for s in ds.scenes:
        for c in s.cases:
            r = validate_homography(c, vcfg)
            if not r.accepted:
                rejected.append({"scene": s.name, "case": c.case_id, "reason": r.reason})
    return {"cases": ds.n_cases, "rejected": rejected}


def cmd_train(cfg, args):
    ds = load_dataset(_need_dataset(args))
    tuned, table = run_training(ds, _methods(cfg, args), _protocol(cfg, args))
    out = _out(args, "out")
    _write_json(out / "tuned.json", {m: t.to_dict() for m, t in tuned.items()})
    cols = sorted({k for r in table for k in r}, key=lambda k: (k != "method", k == "combined_mAA", k))
    (out / "grid.csv").write_text(rows_to_csv(table, cols))
    return {"tuned": {m: dict(t.params) for m, t in tuned.items()}}


def cmd_test(cfg, args):
    ds = load_dataset(_need_dataset(args))
    out = _out(args, "out")
    tuned_path = Path(args.tuned) if args.tuned else out / "tuned.json"
    tuned = {m: TunedConfig.from_dict(d) for m, d in json.loads(tuned_path.read_text()).items()}
    if args.methods:
        tuned = {m: tuned[m] for m in _methods(cfg, args)}
    rows = run_test(ds, tuned, _protocol(cfg, args))
    (out / "sweep.csv").write_text(sweep_csv(rows))
    _write_json(out / "sweep.json", rows)
    return {"rows": len(rows), "csv": str(out / "sweep.csv")}


def cmd_uncert(cfg, args):
    ds = load_dataset(_need_dataset(args))
    uc = cfg.get("uncert", {})
    rep = run_uncertainty(ds, uc.get("cond_max", 1.5), tuple(uc.get("r_ref_range", (0.5, 2.0))))
    out = _out(args, "out")
    write_report(rep["global"], out)
    _write_json(out / "uncert_scenes.json", rep["scenes"])
    st = rep["global"]["stats"]
    return {
        "n_kept": rep["global"]["n_kept"],
        "angular_std_deg": st["delta_alpha_direct"]["std"],
        "rho_std": st["rho"]["std"],
        "eps_x_rms_px": rep["global"]["eps_x_rms"],
    }


def cmd_covest(cfg, args):
    ds = load_dataset(_need_dataset(args))
    rows, mean_row, max_row = run_covest(ds, cfg.get("covest", {}).get("sigma", 1.0))
    out = _out(args, "out")
    table = rows + [{"scene": "", "case": "mean", **mean_row}, {"scene": "", "case": "max", **max_row}]
    (out / "covest.csv").write_text(rows_to_csv(table, [c for c in COVEST_COLUMNS if c in table[0]]))
    _write_json(out / "covest.json", {"rows": rows, "mean": mean_row, "max": max_row})
    return {"cases": len(rows), "mean": mean_row}


def cmd_report(cfg, args):
    out = Path(args.out or "out")
    sweep = out / "sweep.csv"
    if not sweep.exists():
        raise FileNotFoundError(f"{sweep} not found; run `homkit test` first")
    with open(sweep) as f:
        rows = list(csv.DictReader(f))
    lines = ["| method | max_iter | combined mAA | rot mAA | trans mAA | median time [s] |", "|---|---|---|---|---|---|"]
    for r in rows:
        lines.append(
            f"| {r['method']} | {r['max_iter']} | {float(r['combined_mAA']):.3f} | {float(r['rot_mAA']):.3f} "
            f"| {float(r['trans_mAA']):.3f} | {float(r['median_time_s']):.4f} |"
        )
    (out / "report.md").write_text("\n".join(lines) + "\n")
    return {"report": str(out / "report.md"), "rows": len(rows)}


COMMANDS = {
    "synth": (cmd_synth, "generate a synthetic dataset"),
    "validate": (cmd_validate, "check ground-truth homographies of a dataset"),
    "train": (cmd_train, "grid search on the train split"),
    "test": (cmd_test, "iteration sweep on the test split"),
    "uncert": (cmd_uncert, "keypoint uncertainty statistics"),
    "covest": (cmd_covest, "algebraic vs ML estimation comparison"),
    "report": (cmd_report, "markdown summary of a sweep"),
}


def build_parser():
    p = argparse.ArgumentParser(prog="homkit", description="Homography estimation benchmark toolkit")
    sub = p.add_subparsers(dest="command", required=True)
    for name, (_, help_) in COMMANDS.items():
        s = sub.add_parser(name, help=help_)
        s.add_argument("--dataset", help="dataset JSON file")
        s.add_argument("--config", help="YAML configuration file")
        s.add_argument("--out", help="output directory")
        s.add_argument("--seed", type=int)
        s.add_argument("--jobs", type=int)
        s.add_argument("--methods", help="comma-separated method names")
        if name == "test":
            s.add_argument("--tuned", help="tuned.json from `train` (default: <out>/tuned.json)")
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config)
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always")
            result = COMMANDS[args.command][0](cfg, args)
        for w in caught:
            print(json.dumps({"warning": str(w.message)}), file=sys.stderr)
    except Exception as exc:  # reported as JSON for machine consumption
        print(json.dumps({"error": type(exc).__name__, "message": str(exc), "command": args.command}), file=sys.stderr)
        return 1
    print(json.dumps(result, sort_keys=True, default=str))
    return 0


if __name__ == "__main__":
    sys.exit(main())
