"""Command-line entry point: transform, train, search, probe, report.

Exit codes: 0 success, 2 configuration/parameter error, 3 data-format
error, 4 diverged training.  All state flows through flags and the JSON
run-config file (schema-validated, unknown keys rejected); CLI flags
override file keys.
"""

import argparse
import csv
import importlib.resources
import json
import os
import sys

import numpy as np

from .augment import AugmentPolicy
from .curriculum import (
    CurriculumSchedule,
    LRConfig,
    Stage,
    baseline_schedule,
    default_et,
    default_etpp,
)
from .errors import (
    CheckpointError,
    ConfigError,
    CostModelError,
    DivergedError,
    FormatError,
    FreqTrainError,
    LinearityError,
    ParameterError,
    SizeError,
    SpecError,
)
from .model import NetworkSpec, OptimizerConfig, checkpoint_load, evaluate
from .pipeline import open_dataset
from .rten import read_rten, write_rten
from .search import (
    DeskSearchTrainer,
    SearchConfig,
    greedy_search,
    sequential_search,
)
from .spectral import (
    FilterSpec,
    ImageTensor,
    apply_filter,
    downsample,
    low_freq_crop,
)
from .train_loop import RunSettings, run_training

_CONFIG_EXIT = 2
_FORMAT_EXIT = 3
_DIVERGED_EXIT = 4


def load_schema(name):
    ref = importlib.resources.files("freqtrain") / "schemas" / name
    return json.loads(ref.read_text())


def load_config(path, overrides=None):
    """Parse, override and schema-validate a run configuration."""
    import jsonschema

    try:
        with open(path) as f:
            cfg = json.load(f)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path} is not valid JSON: {exc}") from exc
    for key, value in (overrides or {}).items():
        if value is not None:
            cfg[key] = value
    try:
        jsonschema.validate(cfg, load_schema("run_config.schema.json"))
    except jsonschema.ValidationError as exc:
        raise ConfigError(f"config rejected: {exc.message} "
                          f"(at {'/'.join(str(p) for p in exc.absolute_path)})")
    return cfg


def build_schedule(block):
    kind = block["kind"]
    final = block["final_size"]
    budget = block["budget"]
    m0 = block.get("m0", 9.0)
    if kind == "baseline":
        return baseline_schedule(final, budget, m0=m0), block.get("m_ramp", False)
    if kind == "etpp":
        sched = default_etpp(final, budget, m0=m0,
                             n_stages=block.get("n_stages", 3),
                             batch_scales=tuple(block["batch_scales"])
                             if "batch_scales" in block else None)
        return sched, block.get("m_ramp", True)
    if kind == "et":
        return default_et(int(budget), final, m0=m0), block.get("m_ramp", True)
    stages = tuple(
        Stage(s["start"], s["end"], s["bandwidth"], s.get("batch_scale", 1))
        for s in block.get("stages", ()))
    if not stages:
        raise ConfigError("custom curriculum needs a stages list")
    sched = CurriculumSchedule(stages, final, m0, float(budget),
                               block.get("progress_basis", "compute"))
    return sched, block.get("m_ramp", True)


def build_settings(cfg):
    schedule, m_ramp = build_schedule(cfg["curriculum"])
    model = cfg.get("model", {})
    if "widths" in model:
        model = dict(model, widths=tuple(model["widths"]))
    aug = cfg.get("augment", {})
    replay = cfg.get("replay", {})
    workers = 1 if cfg.get("deterministic") else cfg.get("workers", 1)
    return RunSettings(
        schedule=schedule,
        net_spec=NetworkSpec(**model),
        opt=OptimizerConfig(**cfg.get("optimizer", {})),
        lr=LRConfig(**cfg.get("lr", {"base_lr": 3e-3, "min_lr": 3e-6,
                                     "warmup_frac": 20.0 / 300.0})),
        policy=AugmentPolicy(ops=tuple(aug["ops"]) if "ops" in aug
                             else AugmentPolicy.__dataclass_fields__["ops"].default,
                             n=aug.get("n", 2), p=aug.get("p", 0.5),
                             m_max=aug.get("m_max", 10.0)),
        batch_size=cfg.get("batch_size", 64),
        seed=cfg["seed"],
        label_smoothing=cfg.get("label_smoothing", 0.1),
        mixup_alpha=aug.get("mixup_alpha", 0.0),
        m_ramp=m_ramp,
        rrc=aug.get("rrc", True),
        n_buffer=replay.get("n_buffer", 0),
        replay_capacity=replay.get("capacity", 8),
        workers=workers,
        queue_depth=cfg.get("queue_depth", 4),
        sinc_lobes=cfg.get("sinc_lobes", 3),
        eval_every_frac=cfg.get("eval_every_frac", 0.0),
        checkpoint_fracs=tuple(cfg.get("checkpoint_fracs", ())),
    )


def open_datasets(cfg):
    d = cfg["dataset"]
    kw = {}
    if "class_count" in d:
        kw["class_count"] = d["class_count"]
    train_kw = dict(kw)
    val_kw = dict(kw)
    if d["format"] == "IDX":
        if "train_labels_path" in d:
            train_kw["labels_path"] = d["train_labels_path"]
        if "val_labels_path" in d:
            val_kw["labels_path"] = d["val_labels_path"]
    train = open_dataset(d["train_path"], d["format"], split="train", **train_kw)
    val = open_dataset(d["val_path"], d["format"], split="val", **val_kw)
    return train, val


def _write_resolved(cfg, out_dir):
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, "resolved_config.json"), "w") as f:
        json.dump(cfg, f, indent=2, sort_keys=True)


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------

def cmd_train(args):
    cfg = load_config(args.config, {"out_dir": args.out_dir, "seed": args.seed,
                                    "deterministic": args.deterministic or None})
    out_dir = cfg.get("out_dir")
    if not out_dir:
        raise ConfigError("train needs out_dir (flag or config key)")
    _write_resolved(cfg, out_dir)
    settings = build_settings(cfg)
    train_ds, val_ds = open_datasets(cfg)
    _, summary = run_training(settings, train_ds, val_ds, out_dir=out_dir)
    print(f"final accuracy {summary['final_accuracy']:.4f} after "
          f"{summary['eq_epochs']:.2f} equivalent epochs -> {out_dir}")
    return 0


def cmd_search(args):
    cfg = load_config(args.config, {"out_dir": args.out_dir, "seed": args.seed,
                                    "deterministic": args.deterministic or None})
    if "search" not in cfg:
        raise ConfigError("search needs a search block in the config")
    out_dir = cfg.get("out_dir")
    if not out_dir:
        raise ConfigError("search needs out_dir (flag or config key)")
    _write_resolved(cfg, out_dir)
    block = cfg["search"]
    settings = build_settings(cfg)
    scfg = SearchConfig(
        n_stages=block["n_stages"],
        candidates=tuple(block["candidates"]),
        final_size=cfg["curriculum"]["final_size"],
        seed=cfg["seed"],
        total_epochs=block.get("total_epochs", 0.0),
        baseline_accuracy=block.get("baseline_accuracy"),
        beta=block.get("beta", 2.0 / 3.0),
        t0=block.get("t0", 0.0),
        t_ft=block.get("t_ft", 1.0),
        tol_points=block.get("tol_points", 0.15),
    )
    train_ds, val_ds = open_datasets(cfg)
    trainer = DeskSearchTrainer(train_ds, val_ds, settings, scfg,
                                ckpt_dir=os.path.join(out_dir, "checkpoints"))
    if block["algorithm"] == "greedy":
        report = greedy_search(trainer, scfg)
    else:
        report = sequential_search(trainer, scfg)
    with open(os.path.join(out_dir, "report.json"), "w") as f:
        f.write(report.canonical_json())
    with open(os.path.join(out_dir, "trials.csv"), "w") as f:
        f.write(report.trials_csv())
    with open(os.path.join(out_dir, "meta.json"), "w") as f:
        json.dump({"wall_time_s": report.wall_time_s}, f)
    print(f"chosen bandwidths {report.chosen_bandwidths} "
          f"(cost {report.search_cost_eq_epochs:.2f} eq epochs) -> {out_dir}")
    return 0


def _probe_radius(radius, mode, side):
    if mode == "proportional":
        return radius * side / 2.0
    return float(radius)


def cmd_probe(args):
    cfg = load_config(args.config, {"out_dir": args.out_dir, "seed": args.seed,
                                    "deterministic": args.deterministic or None})
    if "probe" not in cfg:
        raise ConfigError("probe needs a probe block in the config")
    out_dir = cfg.get("out_dir")
    if not out_dir:
        raise ConfigError("probe needs out_dir (flag or config key)")
    _write_resolved(cfg, out_dir)
    block = cfg["probe"]
    fracs = sorted(set(block.get("checkpoint_fracs", [0.1])) | {1.0})
    cfg_ckpts = sorted(set(cfg.get("checkpoint_fracs", ())) |
                       (set(fracs) - {1.0}))
    cfg["checkpoint_fracs"] = cfg_ckpts
    settings = build_settings(cfg)
    train_ds, val_ds = open_datasets(cfg)
    run_training(settings, train_ds, val_ds, out_dir=out_dir)
    side = val_ds.side
    shape = block.get("filter_shape", "circular")
    mode = block.get("radius_mode", "absolute")
    radii = [
        _probe_radius(r, mode, side) for r in block["radii"]]
    tol = block.get("calibration_tolerance_points", 2.0) / 100.0
    result = probe_matrix(out_dir, settings.net_spec, val_ds, fracs, shape,
                          radii, tol)
    with open(os.path.join(out_dir, "probe_summary.json"), "w") as f:
        json.dump(result, f, indent=2, sort_keys=True)
    flag = "calibrated" if result["calibrated"] else "CALIBRATION FAILED"
    print(f"probe matrix written ({flag}) -> {out_dir}")
    return 0


def probe_matrix(run_dir, net_spec, val_ds, fracs, shape, radii, tol):
    """Evaluate saved checkpoints under a low/high-pass radius grid.

    Writes probe_matrix.csv (one row per checkpoint fraction) and returns
    the calibration summary: the radius pair whose final accuracies are
    closest, flagged if they differ by more than the tolerance.
    """
    states = {}
    for frac in fracs:
        name = "final.ftck" if frac >= 1.0 else f"ck_{frac:.2f}.ftck"
        path = os.path.join(run_dir, "checkpoints", name)
        states[frac] = checkpoint_load(path, expect_spec=net_spec)
    columns = [("none", None)]
    for r in radii:
        columns.append((f"low_{r:g}", FilterSpec(shape, "low", bandwidth=int(r),
                                                 radius=r)))
    for r in radii:
        columns.append((f"high_{r:g}", FilterSpec(shape, "high", bandwidth=int(r),
                                                  radius=r)))
    acc = {}
    for frac, state in states.items():
        for name, filt in columns:
            acc[(frac, name)] = evaluate(state, val_ds, transform=filt)
    with open(os.path.join(run_dir, "probe_matrix.csv"), "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["checkpoint_frac"] + [name for name, _ in columns])
        for frac in fracs:
            writer.writerow([f"{frac:g}"] +
                            [f"{acc[(frac, name)]:.6f}" for name, _ in columns])
    return calibrate_pair(acc, radii, fracs, tol)


def calibrate_pair(acc, radii, fracs, tol):
    """Pick the low/high radius pair with the closest final accuracies.

    acc maps (frac, column_name) to accuracy.  The pair is flagged
    uncalibrated when even the best final-accuracy gap exceeds tol.
    """
    final = max(fracs)
    best = None
    for rl in radii:
        for rh in radii:
            gap = abs(acc[(final, f"low_{rl:g}")] - acc[(final, f"high_{rh:g}")])
            if best is None or gap < best[0]:
                best = (gap, rl, rh)
    gap, rl, rh = best
    early = min(fracs)
    return {
        "calibrated": bool(gap <= tol),
        "final_gap": gap,
        "low_radius": rl,
        "high_radius": rh,
        "final_low": acc[(final, f"low_{rl:g}")],
        "final_high": acc[(final, f"high_{rh:g}")],
        "early_frac": early,
        "early_low": acc[(early, f"low_{rl:g}")],
        "early_high": acc[(early, f"high_{rh:g}")],
    }


def cmd_report(args):
    if not args.run_dirs:
        raise ConfigError("report needs at least one run directory")
    runs = []
    warnings = []
    for d in args.run_dirs:
        summary_path = os.path.join(d, "summary.json")
        if not os.path.exists(summary_path):
            warnings.append(d)
            continue
        with open(summary_path) as f:
            summary = json.load(f)
        curve = []
        log_path = os.path.join(d, "log.jsonl")
        if os.path.exists(log_path):
            with open(log_path) as f:
                for line in f:
                    row = json.loads(line)
                    if row.get("type") == "eval":
                        curve.append((row["eq_epochs"], row["wall_s"],
                                      row["accuracy"]))
        runs.append((d, summary, curve))
    out = args.out_dir or "."
    os.makedirs(out, exist_ok=True)
    with open(os.path.join(out, "curves.csv"), "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["run", "eq_epochs", "wall_s", "accuracy"])
        for d, _, curve in runs:
            for eq, wall, accuracy in curve:
                writer.writerow([d, f"{eq:.4f}", f"{wall:.2f}", f"{accuracy:.6f}"])
        for d in warnings:
            writer.writerow([d, "", "", "missing summary.json"])
    with open(os.path.join(out, "comparison.csv"), "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["run", "final_accuracy", "eq_epochs", "wall_time_s",
                         "speedup_vs_first_at_matched_accuracy"])
        base_curve = runs[0][2] if runs else []
        for idx, (d, summary, _) in enumerate(runs):
            speedup = ""
            if idx > 0 and summary["final_accuracy"] is not None:
                cost = _cost_at_accuracy(base_curve, summary["final_accuracy"])
                if cost is not None and summary["eq_epochs"] > 0:
                    speedup = f"{cost / summary['eq_epochs']:.3f}"
                else:
                    speedup = "unreached"
            writer.writerow([d, summary["final_accuracy"], summary["eq_epochs"],
                             summary["wall_time_s"], speedup])
    print(f"report tables -> {out}")
    return 0


def _cost_at_accuracy(curve, target):
    """Smallest logged cost reaching the target accuracy, linearly
    interpolated on the cost axis; None when the curve never reaches it."""
    prev_eq, prev_acc = None, None
    for eq, _, accuracy in curve:
        if accuracy >= target:
            if prev_acc is None or accuracy == prev_acc:
                return eq
            frac = (target - prev_acc) / (accuracy - prev_acc)
            return prev_eq + frac * (eq - prev_eq)
        prev_eq, prev_acc = eq, accuracy
    return None


def _load_input_sample(args):
    if args.input.endswith(".rten"):
        return read_rten(args.input)
    if args.index is None:
        raise ConfigError("IDX input needs --index")
    ds = open_dataset(args.input, "IDX", split="val")
    return ds.image(args.index).astype(np.float64)


def cmd_transform(args):
    data = _load_input_sample(args)
    img = ImageTensor(np.ascontiguousarray(data.astype(
        np.float64 if data.dtype == np.float64 else np.float32)))
    meta = {"op": args.op, "input": args.input,
            "input_shape": list(img.data.shape)}
    if args.op == "identity":
        out = img
    elif args.op == "low_freq_crop":
        if args.bandwidth is None:
            raise ConfigError("low_freq_crop needs --bandwidth")
        out = low_freq_crop(img, args.bandwidth)
        meta["bandwidth"] = args.bandwidth
    elif args.op == "filter":
        filt = FilterSpec(args.shape, args.mode,
                          bandwidth=args.bandwidth or 0,
                          radius=args.radius or 0.0)
        out = apply_filter(img, filt)
        meta.update({"shape": args.shape, "mode": args.mode,
                     "bandwidth": args.bandwidth, "radius": args.radius})
    elif args.op == "downsample":
        if args.out_side is None:
            raise ConfigError("downsample needs --out-side")
        out = downsample(img, args.out_side, args.method)
        meta.update({"out_side": args.out_side, "method": args.method})
    else:
        raise ConfigError(f"unknown op {args.op!r}")
    write_rten(args.output, out.data)
    meta["output_shape"] = list(out.data.shape)
    with open(args.output + ".json", "w") as f:
        json.dump(meta, f, indent=2, sort_keys=True)
    print(f"{args.op} -> {args.output}")
    return 0


# ---------------------------------------------------------------------------
# Argument parsing and exit-code mapping
# ---------------------------------------------------------------------------

def build_parser():
    parser = argparse.ArgumentParser(
        prog="freqtrain",
        description="Frequency-domain curriculum training engine")
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p):
        p.add_argument("--config", required=True, help="JSON run config")
        p.add_argument("--out-dir", help="output directory (overrides config)")
        p.add_argument("--seed", type=int, help="seed (overrides config)")
        p.add_argument("--deterministic", action="store_true",
                       help="force single-worker preprocessing")

    p = sub.add_parser("train", help="execute a curriculum end to end")
    add_common(p)
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("search", help="run a curriculum search")
    add_common(p)
    p.set_defaults(fn=cmd_search)

    p = sub.add_parser("probe", help="frequency-probe experiment driver")
    add_common(p)
    p.set_defaults(fn=cmd_probe)

    p = sub.add_parser("report", help="comparison tables over run directories")
    p.add_argument("run_dirs", nargs="*", help="run directories")
    p.add_argument("--out-dir", help="where to write the CSVs")
    p.set_defaults(fn=cmd_report)

    p = sub.add_parser("transform", help="apply a spectral op to one sample")
    p.add_argument("--input", required=True, help=".rten file or IDX images file")
    p.add_argument("--index", type=int, help="sample index for IDX inputs")
    p.add_argument("--output", required=True, help="output .rten path")
    p.add_argument("--op", required=True,
                   choices=["identity", "low_freq_crop", "filter", "downsample"])
    p.add_argument("--bandwidth", type=int)
    p.add_argument("--radius", type=float)
    p.add_argument("--shape", choices=["square", "circular"], default="square")
    p.add_argument("--mode", choices=["low", "high"], default="low")
    p.add_argument("--out-side", type=int)
    p.add_argument("--method", choices=["nearest", "bilinear", "box"],
                   default="box")
    p.set_defaults(fn=cmd_transform)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except (ConfigError, ParameterError, SizeError, SpecError, CostModelError,
            LinearityError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return _CONFIG_EXIT
    except (FormatError, CheckpointError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return _FORMAT_EXIT
    except DivergedError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return _DIVERGED_EXIT


if __name__ == "__main__":
    sys.exit(main())
