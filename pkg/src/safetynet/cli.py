"""Command-line entry point: ``safetynet {train,eval,numeric,mc-oracle,compare,presets}``."""

from __future__ import annotations

import os
import sys


def _pin_threads(argv) -> None:
    # BLAS thread pools are sized when numpy loads, so this runs before it is imported
    n = "1" if "--deterministic" in argv else os.environ.get("SAFETYNET_THREADS")
    if n:
        for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
            os.environ[var] = n


_pin_threads(sys.argv)

import argparse  # noqa: E402
import json  # noqa: E402
import logging  # noqa: E402
from pathlib import Path  # noqa: E402

import numpy as np  # noqa: E402

from .config import ConfigError, ExperimentConfig, preset_config, preset_names  # noqa: E402
from .network import CheckpointError, forward, load_checkpoint, save_checkpoint  # noqa: E402
from .pde import SliceSpec, extract_roa, lattice_points  # noqa: E402
from .results import (compare_estimates, membership_estimate, read_roa, write_loss_history,  # noqa: E402
                      write_manifest, write_roa)

log = logging.getLogger("safetynet")


class CliError(RuntimeError):
    pass


def _times(text: str | None) -> list[float]:
    if not text:
        return []
    return sorted({float(t) for t in text.split(",") if t.strip()})


def _run_dir(cfg: ExperimentConfig, out: str | None, sub: str) -> Path:
    d = Path(out) if out else Path(cfg.raw["output_dir"]) / cfg.name / sub
    d.mkdir(parents=True, exist_ok=True)
    return d


def _tag(t: float) -> str:
    return f"{t:g}".replace(".", "p").replace("-", "m")


def _slice(cfg: ExperimentConfig, text: str | None) -> SliceSpec:
    return SliceSpec.parse(text if text is not None else cfg.raw["eval"]["slice"], cfg.system.d_s)


def network_field(model):
    def provider(X, t):
        S = np.column_stack([X, np.full(len(X), float(t))])
        return forward(model, S)
    return provider


# -- commands ------------------------------------------------------------------------

def cmd_train(args) -> int:
    from .training import TrainingError, train

    cfg = ExperimentConfig.load(args.config)
    if args.seed is not None:
        cfg = cfg.with_updates(seed=args.seed)
    if args.epochs is not None:
        cfg = cfg.with_updates(training={"epochs": args.epochs})
    out = _run_dir(cfg, args.out, "train")
    sets = cfg.training_sets()
    inputs = {}
    if args.warm_start:
        ckpt = load_checkpoint(args.warm_start, cfg.layer_sizes)
        model = ckpt.model
        inputs["warm_start"] = args.warm_start
    else:
        model = cfg.init_model()
    meta = {"config_hash": cfg.content_hash(), "layer_sizes": cfg.layer_sizes}
    tc = cfg.training_config(checkpoint_dir=out / "checkpoints", log_every=cfg.raw["training"]["eval_every"])
    (out / "config.json").write_text(cfg.to_json())
    history = []

    status = 0
    try:
        result = train(cfg.problem, sets, tc, model, meta=meta, progress=lambda e, r: history.append((e, r)))
        final = save_checkpoint(result.model, dict(meta, epoch=result.epochs_run), out / "model.bin")
    except TrainingError as exc:
        print(f"error: training aborted: {exc}", file=sys.stderr)
        final, status = None, 3
    loss_csv = write_loss_history(history, out / "loss_history.csv")
    outputs = [p for p in (loss_csv, final, out / "config.json") if p is not None]
    write_manifest(out / "manifest.json", "train", cfg.raw, inputs, outputs,
                   extra={"deterministic": bool(args.deterministic), "status": status})
    return status


def cmd_eval(args) -> int:
    cfg = ExperimentConfig.load(args.config)
    ckpt = load_checkpoint(args.checkpoint)
    if ckpt.model.d != cfg.domain.d:
        raise CliError(f"checkpoint input dimension {ckpt.model.d} does not match the config ({cfg.domain.d})")
    out = _run_dir(cfg, args.out, "eval")
    spec = _slice(cfg, args.slice)
    res = args.grid or cfg.raw["eval"]["resolution"]
    times = sorted({0.0, cfg.domain.t_max, *_times(args.times), *cfg.raw["eval"]["times"]})
    outputs = []
    for t in times:
        est = extract_roa(network_field(ckpt.model), cfg.domain, t, spec, res, source="network")
        outputs.append(write_roa(est, out / f"roa_t{_tag(t)}.json"))
    write_manifest(out / "manifest.json", "eval", cfg.raw, {"checkpoint": args.checkpoint},
                   outputs + [p.with_suffix(".csv") for p in outputs])
    return 0


def cmd_numeric(args) -> int:
    from .numeric import solve_numeric

    cfg = ExperimentConfig.load(args.config)
    sys_ = cfg.system
    if sys_.d_s > 3:
        raise CliError(f"dense-grid oracle is limited to 3 state dimensions (got {sys_.d_s}); "
                       "use `safetynet mc-oracle` instead")
    n = cfg.raw["numeric"]
    res = args.resolution or n["resolution"]
    snaps = sorted({*_times(args.snapshots), *n["snapshots"]})
    sol = solve_numeric(sys_, cfg.domain.spatial_bounds, cfg.ic, cfg.domain.t_max, res, snaps,
                        eps=n["eps"], cfl=n["cfl"])
    out = _run_dir(cfg, args.out, "numeric")
    spec = _slice(cfg, args.slice)
    outputs = []
    for snap in sol.snapshots:
        if sys_.d_s <= 2 and not args.slice:
            est = grid_estimate(snap, source="numeric")
        else:
            interp = snap.interpolator()
            est = extract_roa(lambda X, t: interp(X), cfg.domain, snap.t, spec,
                              cfg.raw["eval"]["resolution"], source="numeric")
        outputs.append(write_roa(est, out / f"numeric_t{_tag(snap.t)}.json"))
    write_manifest(out / "manifest.json", "numeric", cfg.raw, {}, outputs + [p.with_suffix(".csv") for p in outputs],
                   extra={"dt": sol.dt, "steps": sol.steps, "max_increase": sol.max_increase})
    return 0


def grid_estimate(snap, source="numeric"):
    from .contours import marching_squares
    from .pde import RoaEstimate, _zero_crossings_1d

    axes = tuple(range(len(snap.axes)))
    if len(axes) == 2:
        contours = marching_squares(snap.axes[0], snap.axes[1], snap.values)
    else:
        contours = _zero_crossings_1d(snap.axes[0], snap.values)
    return RoaEstimate(axes, list(snap.axes), snap.values, snap.t, contours, {}, source=source)


def oracle_estimate(cfg: ExperimentConfig, spec: SliceSpec, resolution: int):
    """Trajectory-oracle membership on a lattice over the slice axes, plus status counts."""
    from .dynamics import classify_stability

    grids, X = lattice_points(cfg.domain.spatial_bounds, spec, resolution, cfg.system.d_s)
    status = classify_stability(cfg.system, X, cfg.stability_config)
    counts = {name: int(np.count_nonzero(status == code)) for code, name in enumerate(("converged", "escaped", "undecided"))}
    return membership_estimate(grids, status, spec.axes, spec.fixed, source="mc-oracle"), counts


def cmd_mc_oracle(args) -> int:
    cfg = ExperimentConfig.load(args.config)
    if args.samples is not None and args.samples < 1:
        raise CliError("--samples must be >= 1")
    spec = _slice(cfg, args.slice)
    if args.samples:
        res = max(2, int(round(args.samples ** (1.0 / len(spec.axes)))))
    else:
        res = cfg.raw["oracle"]["resolution"]
    est, counts = oracle_estimate(cfg, spec, res)
    out = _run_dir(cfg, args.out, "mc_oracle")
    path = write_roa(est, out / "mc_oracle.json")
    write_manifest(out / "manifest.json", "mc-oracle", cfg.raw, {}, [path, path.with_suffix(".csv")], extra=counts)
    return 0


def cmd_compare(args) -> int:
    a, b = read_roa(args.roa_a), read_roa(args.roa_b)
    try:
        report = compare_estimates(a, b, args.band)
    except ValueError as exc:
        raise CliError(str(exc)) from exc
    text = json.dumps(report, indent=2, sort_keys=True)
    if args.out:
        Path(args.out).parent.mkdir(parents=True, exist_ok=True)
        Path(args.out).write_text(text + "\n")
    print(text)
    return 0


def cmd_presets(args) -> int:
    if args.write:
        d = Path(args.write)
        d.mkdir(parents=True, exist_ok=True)
        for name in preset_names():
            (d / f"{name}.json").write_text(json.dumps(preset_config(name), indent=2) + "\n")
    for name in preset_names():
        print(name)
    return 0


# -- parser ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="safetynet", description=__doc__)
    p.add_argument("--deterministic", action="store_true",
                   help="single-threaded BLAS for bit-reproducible outputs")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="train a safety network")
    t.add_argument("config", help="config JSON path or preset:<name>")
    t.add_argument("--warm-start", metavar="CHECKPOINT")
    t.add_argument("--seed", type=int)
    t.add_argument("--epochs", type=int)
    t.add_argument("--out")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="sample a trained network into ROA estimates")
    e.add_argument("checkpoint")
    e.add_argument("config")
    e.add_argument("--grid", type=int, help="lattice nodes per plotted axis")
    e.add_argument("--slice", help='e.g. "axes=2,3;x0=0;x1=0"')
    e.add_argument("--times", help="extra snapshot times, comma separated")
    e.add_argument("--out")
    e.set_defaults(func=cmd_eval)

    n = sub.add_parser("numeric", help="grid solution with WENO5 / TVD-RK3")
    n.add_argument("config")
    n.add_argument("--snapshots", help="snapshot times, comma separated")
    n.add_argument("--resolution", type=int)
    n.add_argument("--slice")
    n.add_argument("--out")
    n.set_defaults(func=cmd_numeric)

    m = sub.add_parser("mc-oracle", help="classify lattice states by simulation")
    m.add_argument("config")
    m.add_argument("--samples", type=int)
    m.add_argument("--slice")
    m.add_argument("--out")
    m.set_defaults(func=cmd_mc_oracle)

    c = sub.add_parser("compare", help="membership agreement of two ROA estimates")
    c.add_argument("roa_a")
    c.add_argument("roa_b")
    c.add_argument("--band", type=int, default=2, help="excluded cells around either boundary")
    c.add_argument("--out")
    c.set_defaults(func=cmd_compare)

    s = sub.add_parser("presets", help="list (and optionally write) preset configs")
    s.add_argument("--write", metavar="DIR")
    s.set_defaults(func=cmd_presets)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.func(args)
    except (ConfigError, CliError, CheckpointError, ValueError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
