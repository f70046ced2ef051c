"""Command line entry point: ``vsagp <subcommand>``.

Every subcommand writes its outputs plus a ``config.yaml`` snapshot into the
output directory. On failure a single JSON line ``{"error": ..., "message": ...}``
goes to stderr and the exit code is nonzero.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import config as cfgmod
from . import control, evaluation, gp, testbench
from .dataset import DataError, read_dataset_csv, write_dataset_csv

logger = logging.getLogger("vsagp")

CONFIG_SNAPSHOT = "config.yaml"


class SelfCheckError(RuntimeError):
    pass


def _prepare(args):
    cfg = cfgmod.load(args.config, args.set or ())
    out = Path(args.out or cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    cfgmod.save(cfg, out / CONFIG_SNAPSHOT)
    return cfg, out


def _self_check(out: Path, produced):
    missing = [name for name in (CONFIG_SNAPSHOT, *produced) if not (out / name).is_file()]
    if missing:
        raise SelfCheckError(f"missing outputs in {out}: {', '.join(missing)}")


def _dump_json(obj, path: Path):
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _progress(label):
    def report(done, total):
        logger.info("%s: %d/%d", label, done, total)
    return report


def cmd_init_config(args):
    text = cfgmod.render(cfgmod.load(None, args.set or ()))
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)


def cmd_generate_data(args):
    cfg, out = _prepare(args)
    params = cfg.plant_params()
    t0 = time.perf_counter()
    d = testbench.generate_dataset(params, cfg.grid, seed=cfg.seed,
                                   progress=_progress("generate-data"))
    wall = time.perf_counter() - t0
    write_dataset_csv(d, out / "dataset.csv")
    _dump_json({
        "seed": cfg.seed,
        "n_records": len(d),
        "plant": asdict(params),
        "grid": asdict(cfg.grid),
        "wall_time_s": wall,
    }, out / "dataset.meta.json")
    _self_check(out, ["dataset.csv", "dataset.meta.json"])
    print(f"wrote {len(d)} records to {out / 'dataset.csv'}")


def cmd_train(args):
    cfg, out = _prepare(args)
    d = read_dataset_csv(args.dataset)
    opts = cfg.gp_options()
    summary = {}
    for ch in ("I", "II"):
        g = gp.fit(d, ch, opts)
        gp.save(g, out / f"model_{ch}.json")
        h = g.hyperparams.as_dict()
        summary[ch] = {**h, "log_marginal_likelihood": g.log_marginal_likelihood,
                       "n_train": g.n}
        print(f"model {ch}: signal_variance={h['signal_variance']:.6g} "
              f"length_scale={h['length_scale']:.6g} noise_variance={h['noise_variance']:.6g} "
              f"lml={g.log_marginal_likelihood:.6g}")
    _dump_json(summary, out / "train_summary.json")
    _self_check(out, ["model_I.json", "model_II.json", "train_summary.json"])


def cmd_cross_validate(args):
    cfg, out = _prepare(args)
    d = read_dataset_csv(args.dataset)
    report = evaluation.cross_validate(d, cfg.cv_config(), cfg.gp_options(),
                                       n_jobs=args.jobs, progress=_progress("cross-validate"))
    (out / "cv_entries.csv").write_text(report.to_csv())
    (out / "cv_summary.json").write_text(report.summary_json())
    _self_check(out, ["cv_entries.csv", "cv_summary.json"])
    print(f"{len(report.entries)} folds, grand-mean MAE {report.grand_mean:.6g} bar "
          f"({100 * report.grand_mean_fraction:.3g}% of range), "
          f"pooled {report.pooled_mean:.6g} bar")


def cmd_track(args):
    cfg, out = _prepare(args)
    models = Path(args.models)
    g1 = gp.load(models / "model_I.json")
    g2 = gp.load(models / "model_II.json")
    sched = cfg.schedule
    measure = sched.measure_stiffness and not args.no_stiffness_checks
    log = control.run_tracking_experiment(
        cfg.plant_params(), g1, g2, sched.setpoints(), cfg.controller,
        measure_stiffness=measure, steady_window=sched.steady_window, seed=cfg.seed)
    (out / "tracking_log.csv").write_text(log.to_csv())
    (out / "stiffness_checks.csv").write_text(log.checks_to_csv())
    (out / "tracking_summary.json").write_text(log.summary_json())
    _self_check(out, ["tracking_log.csv", "stiffness_checks.csv", "tracking_summary.json"])
    s = log.summary()
    mode = " (pure feedforward)" if s["pure_feedforward"] else ""
    print(f"steady-state angle MAE {s['steady_state_mae_deg']:.4g} deg{mode}; "
          f"stiffness within 10% in {s['stiffness_within_10pct']}/{s['n_stiffness_checks']}")


def cmd_measure_stiffness(args):
    cfg = cfgmod.load(args.config, args.set or ())
    params = cfg.plant_params()
    rng = np.random.default_rng(cfg.seed)
    m = testbench.measure_stiffness(params, (args.p1, args.p2), rng=rng)
    result = {"p1_bar": args.p1, "p2_bar": args.p2, "steady_angle_deg": m.steady_angle,
              "slope_up": m.slope_up, "slope_down": m.slope_down, "stiffness": m.stiffness}
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        cfgmod.save(cfg, out / CONFIG_SNAPSHOT)
        _dump_json(result, out / "stiffness_measurement.json")
        rows = np.column_stack([m.samples_angle, m.samples_torque])
        np.savetxt(out / "stiffness_samples.csv", rows, fmt="%.9g", delimiter=",",
                   header="q_rel_deg,tau_nm", comments="")
        _self_check(out, ["stiffness_measurement.json", "stiffness_samples.csv"])
    print(json.dumps(result))


def _common(p, needs_out=True):
    p.add_argument("--config", help="YAML run configuration (defaults if omitted)")
    p.add_argument("--set", action="append", metavar="SECTION.KEY=VALUE",
                   help="override one config value; repeatable")
    if needs_out:
        p.add_argument("--out", help="output directory (default: output_dir from config)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="vsagp",
        description="GP-based position and stiffness control of a simulated "
                    "antagonistic pneumatic joint")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("init-config", help="print the commented default configuration")
    p.add_argument("--set", action="append", metavar="SECTION.KEY=VALUE")
    p.add_argument("--out", help="write to this file instead of stdout")
    p.set_defaults(func=cmd_init_config)

    p = sub.add_parser("generate-data", help="record the full-factorial training dataset")
    _common(p)
    p.set_defaults(func=cmd_generate_data)

    p = sub.add_parser("train", help="fit both pressure GPs on a dataset")
    p.add_argument("--dataset", required=True)
    _common(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("cross-validate", help="repeated k-fold CV of the pressure GPs")
    p.add_argument("--dataset", required=True)
    p.add_argument("--jobs", type=int, default=1, help="parallel fold workers")
    _common(p)
    p.set_defaults(func=cmd_cross_validate)

    p = sub.add_parser("track", help="closed-loop angle/stiffness tracking experiment")
    p.add_argument("--models", required=True, help="directory holding model_I/II.json")
    p.add_argument("--no-stiffness-checks", action="store_true")
    _common(p)
    p.set_defaults(func=cmd_track)

    p = sub.add_parser("measure-stiffness", help="probe stiffness at one pressure pair")
    p.add_argument("--p1", type=float, required=True, help="bar")
    p.add_argument("--p2", type=float, required=True, help="bar")
    _common(p)
    p.set_defaults(func=cmd_measure_stiffness)
    return parser


_HANDLED = (cfgmod.ConfigError, DataError, gp.FitFailure, gp.CholeskyFailure,
            gp.NonFiniteInput, testbench.NotSettled, testbench.InsufficientSamples,
            testbench.MeasurementError, evaluation.InvalidFoldCount, SelfCheckError,
            OSError, ValueError)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except _HANDLED as exc:
        sys.stderr.write(json.dumps({"error": type(exc).__name__, "message": str(exc)}) + "\n")
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
