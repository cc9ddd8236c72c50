"""Command-line entry point: ``pollnet <subcommand> ...``.

Exit codes: 0 success, 2 bad input (parse or lookup), 3 every run diverged,
4 model / normalizer / schema mismatch.
"""

from __future__ import annotations

import argparse
import csv
import logging
import secrets
import sys
from dataclasses import fields, replace
from pathlib import Path

from . import bench, dataset, ipps
from .network import ModelFormatError, NetworkSpec, Recurrence, Topology, Transfer, load_model, save_model
from .trainer import DEFAULT_SEED, TrainConfig, multi_restart_train

log = logging.getLogger("pollnet")

EXIT_OK, EXIT_INPUT, EXIT_DIVERGED, EXIT_MODEL = 0, 2, 3, 4

SWEEP_KEYS = {"topologies", "hidden_range", "nodes_per_hidden", "memory_depth", "n_centers",
              "recurrence", "output_transfer", "split", "include_year"}


def _resolve_seed(raw: str | None, config: dict) -> int:
    value = raw if raw is not None else config.get("seed")
    if value is None:
        return DEFAULT_SEED
    if str(value).lower() == "random":
        return secrets.randbelow(2**31)
    return int(value)


def _read_config(path: str | None) -> dict[str, str]:
    return ipps.read_kv(path) if path else {}


def _bool(raw: str) -> bool:
    return str(raw).strip().lower() in ("1", "true", "yes", "on")


def _data_options(args, cfg):
    split_mode = args.split or cfg.get("split", "random")
    include_year = args.include_year if args.include_year is not None else _bool(cfg.get("include_year", "1"))
    return split_mode, include_year


def _train_config(cfg: dict, seed: int) -> TrainConfig:
    known = {f.name for f in fields(TrainConfig)}
    unknown = set(cfg) - known - SWEEP_KEYS
    for key in sorted(unknown):
        log.warning("ignoring unknown config key %r", key)
    tc = TrainConfig.from_kv({k: v for k, v in cfg.items() if k in known})
    return replace(tc, seed=seed)


def _prepared(path, seed, split_mode, include_year):
    rows = dataset.load_rows(path)
    return rows, dataset.prepare(rows, seed=seed, mode=split_mode, include_year=include_year)


def cmd_estimate(args) -> int:
    table = ipps.read_intensity_table(args.intensity_csv, args.config)
    records = ipps.read_activity(args.activity_csv)
    log.info("resolved: basis=%s scale=%r records=%d", table.basis.value, table.scale, len(records))
    loads = ipps.estimate_all(table, records)
    out = Path(args.out or "loads.csv")
    n = ipps.write_loads(out, loads)
    totals = ipps.aggregate_by_medium(loads)
    summary = out.with_name(out.stem + "_by_medium.csv")
    with open(summary, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["medium", "load_ton_per_yr"])
        for medium, total in totals.items():
            w.writerow([medium.value, repr(total)])
    print(f"wrote {n} loads to {out}; " + ", ".join(f"{m.value}={t:.6g}" for m, t in totals.items()))
    return EXIT_OK


def cmd_prepare(args) -> int:
    cfg = _read_config(args.config)
    seed = _resolve_seed(args.seed, cfg)
    split_mode, include_year = _data_options(args, cfg)
    log.info("resolved: seed=%d split=%s include_year=%s", seed, split_mode, include_year)
    rows, data = _prepared(args.data_csv, seed, split_mode, include_year)
    out = Path(args.out or "prepared")
    out.mkdir(parents=True, exist_ok=True)
    data.normalizer.save(out / "normalizer.txt")
    with open(out / "split.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["sector", "year", "role"])
        for r, role in zip(rows, data.roles):
            w.writerow([r.sector.value, r.year, dataset.Role(role).name])
    counts = [int((data.roles == r).sum()) for r in dataset.Role]
    print(f"{len(rows)} rows: train={counts[0]} cv={counts[1]} test={counts[2]}; clamped={sum(data.clamped.values())}")
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = _read_config(args.config)
    seed = _resolve_seed(args.seed, cfg)
    split_mode, include_year = _data_options(args, cfg)
    tc = _train_config(cfg, seed)
    rows, data = _prepared(args.data_csv, seed, split_mode, include_year)
    sweep = _sweep_spec(cfg, tc, seed, 1)
    spec = sweep.network_spec(Topology(args.topology.upper()), args.hidden, data)
    log.info("resolved: %s seed=%d network=%s", tc.to_kv(), seed, spec.to_dict())
    results = multi_restart_train(spec, data, tc)
    out = Path(args.out or "trained")
    out.mkdir(parents=True, exist_ok=True)
    best = results.best
    best.curve.write_csv(out / "curve.csv")
    save_model(out / "model.model", best.state, {"normalizer": data.normalizer.to_lines()})
    if all(r.diverged for r in results.runs):
        print("every restart diverged", file=sys.stderr)
        return EXIT_DIVERGED
    print(f"best restart {results.best_index} (seed {results.seeds[results.best_index]}): "
          f"cv_mse={best.best_cv_mse:.6g} at epoch {best.best_epoch}, stop={best.stop_reason.value}")
    return EXIT_OK


def _sweep_spec(cfg: dict, tc: TrainConfig, seed: int, jobs: int) -> bench.SweepSpec:
    kw = {}
    if "topologies" in cfg:
        kw["topologies"] = tuple(Topology(t.strip().upper()) for t in cfg["topologies"].split(",") if t.strip())
    if "hidden_range" in cfg:
        kw["hidden_range"] = tuple(int(h) for h in cfg["hidden_range"].split(",") if h.strip())
    for key in ("nodes_per_hidden", "memory_depth", "n_centers"):
        if key in cfg:
            kw[key] = int(cfg[key])
    if "recurrence" in cfg:
        kw["recurrence"] = Recurrence(cfg["recurrence"].upper())
    if "output_transfer" in cfg:
        kw["output_transfer"] = Transfer(cfg["output_transfer"].upper())
    return bench.SweepSpec(restarts=tc.restarts, config=tc, trajectory_length=tc.trajectory_length,
                           master_seed=seed, jobs=jobs, **kw)


def cmd_sweep(args) -> int:
    cfg = _read_config(args.config)
    seed = _resolve_seed(args.seed, cfg)
    split_mode, include_year = _data_options(args, cfg)
    tc = _train_config(cfg, seed)
    spec = _sweep_spec(cfg, tc, seed, args.jobs)
    log.info("resolved: %s topologies=%s hidden=%s seed=%d split=%s include_year=%s",
             tc.to_kv(), [t.value for t in spec.topologies], spec.hidden_range, seed, split_mode, include_year)
    _, data = _prepared(args.data_csv, seed, split_mode, include_year)
    report = bench.run_sweep(spec, data)
    out = bench.write_archive(report, args.out or "sweep", data.normalizer)
    if report.champion is None:
        print("every run diverged; no champion", file=sys.stderr)
        return EXIT_DIVERGED
    c = report.champion
    print(f"champion {c.topology.value} hidden={c.hidden_layers} restart={c.restart} "
          f"test_mse={c.test.mse:.6g} r={c.test.r_mean:.4g} -> {out / 'champion.model'}")
    return EXIT_OK


def cmd_predict(args) -> int:
    try:
        state, meta = load_model(args.model)
        if "normalizer" not in meta:
            raise ModelFormatError(f"{args.model}: no normalizer stored with the model")
        norm = dataset.NormalizationParams.from_lines(meta["normalizer"])
    except (ModelFormatError, ipps.ParseError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_MODEL
    try:
        rows = dataset.load_rows(args.rows_csv)
    except ipps.ParseError as exc:
        print(f"error: {args.rows_csv}: {exc}", file=sys.stderr)
        return EXIT_MODEL
    try:
        lines, mean = bench.holdout_predict(state, norm, rows)
    except bench.CompatibilityError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_MODEL
    out = Path(args.out or "holdout.csv")
    bench.write_holdout(out, lines)
    print(f"wrote {len(lines)} pollutant rows to {out}; mean trend {mean:.2f}%")
    return EXIT_OK


def cmd_report(args) -> int:
    report = bench.read_archive(args.sweep_dir)
    text = bench.emit_report(report, args.format, timing=not args.no_timing)
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", help="integer master seed, or 'random' (default %d)" % DEFAULT_SEED)
    common.add_argument("--config", help="plain key=value config file")
    common.add_argument("--out", help="output file or directory")
    common.add_argument("-v", "--verbose", action="count", default=0)

    data_opts = argparse.ArgumentParser(add_help=False)
    data_opts.add_argument("--split", choices=["random", "chrono"])
    data_opts.add_argument("--include-year", dest="include_year", action="store_true", default=None)
    data_opts.add_argument("--no-include-year", dest="include_year", action="store_false")

    p = argparse.ArgumentParser(prog="pollnet", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("estimate", parents=[common], help="IPPS loads from intensities and activity")
    s.add_argument("intensity_csv")
    s.add_argument("activity_csv")
    s.set_defaults(func=cmd_estimate)

    s = sub.add_parser("prepare", parents=[common, data_opts], help="split and fit the normalizer")
    s.add_argument("data_csv")
    s.set_defaults(func=cmd_prepare)

    s = sub.add_parser("train", parents=[common, data_opts], help="multi-restart training of one network")
    s.add_argument("data_csv")
    s.add_argument("--topology", default="TLRN", type=str.upper, choices=[t.value for t in Topology])
    s.add_argument("--hidden", type=int, default=1)
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("sweep", parents=[common, data_opts], help="full topology x depth x restart grid")
    s.add_argument("data_csv")
    s.add_argument("--jobs", type=int, default=1)
    s.set_defaults(func=cmd_sweep)

    s = sub.add_parser("predict", parents=[common], help="holdout prediction with trend accuracy")
    s.add_argument("model")
    s.add_argument("rows_csv")
    s.set_defaults(func=cmd_predict)

    s = sub.add_parser("report", parents=[common], help="re-render a sweep archive")
    s.add_argument("sweep_dir")
    s.add_argument("--format", choices=["csv", "text"], default="text")
    s.add_argument("--no-timing", action="store_true")
    s.set_defaults(func=cmd_report)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    level = logging.DEBUG if args.verbose else logging.INFO
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    log.info("command %s with %s", args.command, {k: v for k, v in vars(args).items() if k != "func"})
    try:
        return args.func(args)
    except (ipps.ParseError, ipps.LookupFailure) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except (ValueError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
