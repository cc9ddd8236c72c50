"""Topology x hidden-depth x restart sweeps and their benchmark report."""

from __future__ import annotations

import csv
import hashlib
import io
import json
import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .dataset import (EncodedDataset, NormalizationParams, RawRow, Role, decode_targets, encode)
from .ipps import POLLUTANTS
from .metrics import EvalReport, evaluate, trend_accuracy
from .network import NetworkSpec, NetworkState, Recurrence, Topology, Transfer, build, save_model
from .trainer import LearningCurve, StopReason, TrainConfig, predict, train

log = logging.getLogger(__name__)

ROW_LABELS = [
    ("time", "Modelling time (sec)"),
    ("epoch", "EPOCH"),
    ("mse", "MEAN SQUARED ERROR (MSE)"),
    ("nmse", "NORMALIZED MEAN SQUARED ERROR (NMSE)"),
    ("mae", "MEAN ABSOLUTE ERROR (MAE)"),
    ("min_abs", "MIN ABSOLUTE ERROR"),
    ("max_abs", "MAX ABSOLUTE ERROR"),
    ("r", "LINEAR CORRELATION COEFFICIENT (R)"),
]
REPORT_ORDER = (Topology.TLRN, Topology.RN, Topology.MLP, Topology.GFFN, Topology.RBF)


class SelectionError(RuntimeError):
    pass


class CompatibilityError(ValueError):
    pass


@dataclass
class SweepSpec:
    topologies: tuple[Topology, ...] = REPORT_ORDER
    hidden_range: tuple[int, ...] = (0, 1, 2, 3, 4)
    restarts: int = 5
    config: TrainConfig = field(default_factory=TrainConfig)
    nodes_per_hidden: int = 14
    memory_depth: int = 10
    trajectory_length: int = 10
    n_centers: int = 80
    recurrence: Recurrence = Recurrence.PARTIAL
    output_transfer: Transfer = Transfer.LINEAR
    master_seed: int = 20100
    jobs: int = 1

    def __post_init__(self):
        self.topologies = tuple(Topology(t) for t in self.topologies)
        self.hidden_range = tuple(int(h) for h in self.hidden_range)
        if not self.topologies:
            raise ValueError("sweep needs at least one topology")
        if not self.hidden_range or any(not 0 <= h <= 4 for h in self.hidden_range):
            raise ValueError("hidden_range must be a nonempty subset of 0..4")
        if self.restarts < 1:
            raise ValueError("restarts must be >= 1")

    def network_spec(self, topology: Topology, depth: int, data: EncodedDataset) -> NetworkSpec:
        n_train = int(np.sum(data.mask(Role.TRAIN)))
        centers = self.n_centers
        if topology is Topology.RBF and centers > n_train:
            log.warning("RBF: capping %d centers at %d training rows", centers, n_train)
            centers = n_train
        return NetworkSpec.make(topology, data.n_inputs, data.n_outputs, depth, self.nodes_per_hidden,
                                memory_depth=self.memory_depth, trajectory_length=self.trajectory_length,
                                n_centers=centers, recurrence=self.recurrence,
                                output_transfer=self.output_transfer)

    def cell_seed(self, topology: Topology, depth: int) -> int:
        ss = np.random.SeedSequence([self.master_seed, list(Topology).index(topology), depth])
        return int(ss.generate_state(1)[0] % (2**31 - 1024))


@dataclass
class RunResult:
    topology: Topology
    hidden_layers: int
    restart: int
    seed: int
    wall_time_s: float
    final_epoch: int
    best_epoch: int
    stop_reason: StopReason
    cv_mse: float
    test: EvalReport
    curve: LearningCurve | None = field(default=None, repr=False, compare=False)
    state: NetworkState | None = field(default=None, repr=False, compare=False)

    @property
    def key(self) -> tuple[int, int, int]:
        return (list(Topology).index(self.topology), self.hidden_layers, self.restart)

    @property
    def diverged(self) -> bool:
        return self.stop_reason is StopReason.DIVERGED

    @property
    def name(self) -> str:
        return f"{self.topology.value}_h{self.hidden_layers}_r{self.restart}"

    def to_dict(self, timing: bool = True) -> dict:
        d = {
            "topology": self.topology.value, "hidden_layers": self.hidden_layers,
            "restart": self.restart, "seed": self.seed, "final_epoch": self.final_epoch,
            "best_epoch": self.best_epoch, "stop_reason": self.stop_reason.value,
            "cv_mse": self.cv_mse, "test": self.test.to_dict(),
        }
        if timing:
            d["wall_time_s"] = self.wall_time_s
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "RunResult":
        return cls(Topology(d["topology"]), d["hidden_layers"], d["restart"], d["seed"],
                   d.get("wall_time_s", float("nan")), d["final_epoch"], d["best_epoch"],
                   StopReason(d["stop_reason"]), d["cv_mse"], EvalReport.from_dict(d["test"]))


@dataclass
class BenchReport:
    topologies: tuple[Topology, ...]
    hidden_range: tuple[int, ...]
    cells: dict[tuple[Topology, int], RunResult]
    runs: list[RunResult]
    champion: RunResult | None
    provenance: dict

    def to_json(self, timing: bool = True) -> str:
        return json.dumps({
            "topologies": [t.value for t in self.topologies],
            "hidden_range": list(self.hidden_range),
            "provenance": self.provenance,
            "runs": [r.to_dict(timing) for r in self.runs],
            "champion": None if self.champion is None else self.champion.name,
        }, indent=1, sort_keys=True, allow_nan=True)

    @classmethod
    def from_json(cls, text: str, timings: dict[str, float] | None = None) -> "BenchReport":
        d = json.loads(text)
        runs = [RunResult.from_dict(r) for r in d["runs"]]
        if timings:
            for r in runs:
                r.wall_time_s = timings.get(r.name, r.wall_time_s)
        topos = tuple(Topology(t) for t in d["topologies"])
        cells = _best_per_cell(runs)
        champion = next((r for r in runs if r.name == d["champion"]), None)
        return cls(topos, tuple(d["hidden_range"]), cells, runs, champion, d["provenance"])


def dataset_digest(data: EncodedDataset) -> str:
    h = hashlib.sha256()
    for arr in (data.inputs, data.targets, data.roles):
        h.update(np.ascontiguousarray(arr).tobytes())
    for seq in data.sequences:
        h.update(np.asarray(seq, dtype=np.int64).tobytes())
    return h.hexdigest()


def config_hash(spec: SweepSpec, data: EncodedDataset) -> str:
    payload = {
        "config": spec.config.to_kv(),
        "topologies": [t.value for t in spec.topologies],
        "hidden_range": list(spec.hidden_range),
        "restarts": spec.restarts,
        "nodes_per_hidden": spec.nodes_per_hidden,
        "memory_depth": spec.memory_depth,
        "trajectory_length": spec.trajectory_length,
        "n_centers": spec.n_centers,
        "recurrence": spec.recurrence.value,
        "output_transfer": spec.output_transfer.value,
        "master_seed": spec.master_seed,
        "data": dataset_digest(data),
    }
    return hashlib.sha256(json.dumps(payload, sort_keys=True).encode()).hexdigest()


def _run_one(task) -> RunResult:
    net_spec, data, config, topology, depth, restart, seed = task
    state = build(net_spec, seed, freeze_gamma=config.freeze_gamma)
    t0 = time.perf_counter()
    res = train(state, data, replace(config, seed=seed, trajectory_length=net_spec.trajectory_length))
    elapsed = round(time.perf_counter() - t0, 3)
    out = predict(res.state, data)
    m = data.mask(Role.TEST)
    test = evaluate(data.targets[m], out[m])
    return RunResult(topology, depth, restart, seed, elapsed, res.epochs_run, res.best_epoch,
                     res.stop_reason, res.best_cv_mse, test, res.curve, res.state)


def _best_per_cell(runs: Sequence[RunResult]) -> dict:
    cells: dict = {}
    for r in sorted(runs, key=lambda r: r.key):
        cells.setdefault((r.topology, r.hidden_layers), []).append(r)
    out = {}
    for key, group in cells.items():
        pool = [r for r in group if not r.diverged] or group
        out[key] = min(pool, key=lambda r: (_finite(r.test.mse), r.restart))
    return out


def _finite(v: float) -> float:
    return v if math.isfinite(v) else math.inf


def run_sweep(spec: SweepSpec, data: EncodedDataset) -> BenchReport:
    """Train every (topology, depth, restart) combination and collect the grid.

    Restart ``i`` of a cell uses seed ``cell_seed + i``. Results are merged in
    key order, so the worker count never changes the report.
    """
    tasks = []
    for topo in spec.topologies:
        for depth in spec.hidden_range:
            net_spec = spec.network_spec(topo, depth, data)
            base = spec.cell_seed(topo, depth)
            for i in range(spec.restarts):
                tasks.append((net_spec, data, spec.config, topo, depth, i, base + i))
    log.info("sweep: %d runs on %d worker(s)", len(tasks), spec.jobs)
    if spec.jobs > 1:
        with ProcessPoolExecutor(max_workers=spec.jobs) as pool:
            runs = list(pool.map(_run_one, tasks))
    else:
        runs = [_run_one(t) for t in tasks]
    runs.sort(key=lambda r: r.key)
    cells = _best_per_cell(runs)
    report = BenchReport(spec.topologies, spec.hidden_range, cells, runs, None,
                         {"master_seed": spec.master_seed, "config_hash": config_hash(spec, data),
                          "n_runs": len(runs)})
    try:
        report.champion = select_best(report)
    except SelectionError:
        log.error("every run diverged; no champion")
    return report


DEFAULT_CRITERIA = ("mse", "r", "time")
_TOLERANCE = {"mse": 1e-6, "r": 1e-6, "time": 0.0}


def _criterion(run: RunResult, name: str) -> float:
    # smaller is better for every returned value
    if name == "mse":
        return _finite(run.test.mse)
    if name == "r":
        return -run.test.r_mean if math.isfinite(run.test.r_mean) else math.inf
    if name == "time":
        return _finite(run.wall_time_s)
    raise ValueError(f"unknown selection criterion {name!r}")


def select_best(report: BenchReport | Sequence[RunResult], criteria=DEFAULT_CRITERIA) -> RunResult:
    """Lexicographic choice: lowest test MSE, then highest mean R, then fastest.

    Values within the criterion tolerance count as tied and pass to the next
    criterion; a remaining tie goes to the first run in key order.
    """
    runs = list(report.cells.values()) if isinstance(report, BenchReport) else list(report)
    pool = sorted((r for r in runs if not r.diverged), key=lambda r: r.key)
    if not pool:
        raise SelectionError("no non-diverged runs to choose from")
    for name in criteria:
        best = min(_criterion(r, name) for r in pool)
        tol = _TOLERANCE.get(name, 0.0)
        pool = [r for r in pool if _criterion(r, name) <= best + tol]
    return pool[0]


# --- holdout prediction ------------------------------------------------------------

@dataclass(frozen=True)
class HoldoutLine:
    pollutant: str
    desired: float
    actual: float
    trend_pct: float


def holdout_predict(state: NetworkState, normalizer: NormalizationParams,
                    rows: Sequence[RawRow]) -> tuple[list[HoldoutLine], float]:
    """Per-pollutant totals over ``rows``: IPPS load vs network prediction.

    Predictions are denormalised into load units. Temporal networks see each
    sector's rows in year order from a fresh context. A nonpositive
    prediction scores a trend of 0 %.
    """
    if normalizer.input_width != state.spec.n_inputs:
        raise CompatibilityError(
            f"normalizer produces {normalizer.input_width} inputs, model expects {state.spec.n_inputs}")
    if state.spec.n_outputs != len(POLLUTANTS):
        raise CompatibilityError(f"model has {state.spec.n_outputs} outputs, expected {len(POLLUTANTS)}")
    if not rows:
        raise ValueError("no rows to predict")
    samples = [encode(r, normalizer) for r in rows]
    order: dict = {}
    for i, r in enumerate(rows):
        order.setdefault(r.sector, []).append(i)
    seqs = [np.array(sorted(v, key=lambda i: rows[i].year)) for v in order.values()]
    data = EncodedDataset(np.stack([s.input for s in samples]), np.stack([s.target for s in samples]),
                          np.zeros(len(rows), dtype=int), seqs)
    actual = decode_targets(normalizer, predict(state, data)).sum(axis=0)
    desired = np.array([r.targets for r in rows]).sum(axis=0)
    lines = []
    for j, p in enumerate(POLLUTANTS):
        if desired[j] > 0 and actual[j] > 0:
            trend = float(trend_accuracy([desired[j]], [actual[j]])[0][0])
        else:
            trend = 0.0
        lines.append(HoldoutLine(p.value, float(desired[j]), float(actual[j]), trend))
    return lines, float(np.mean([l.trend_pct for l in lines]))


def write_holdout(path, lines: Sequence[HoldoutLine]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["pollutant", "desired", "actual", "trend_pct"])
        for l in lines:
            w.writerow([l.pollutant, f"{l.desired:.6f}", f"{l.actual:.6f}", f"{l.trend_pct:.4f}"])


# --- rendering ---------------------------------------------------------------------

def _fmt(v: float) -> str:
    if v is None or (isinstance(v, float) and math.isnan(v)):
        return "UNDEF"
    return f"{v:.6g}"


def _cell_values(run: RunResult, timing: bool) -> list[str]:
    t = run.test
    if run.diverged:
        vals = ["DIV"] * len(ROW_LABELS)
        vals[0] = f"{run.wall_time_s:.3f}" if timing else "-"
        vals[1] = str(run.final_epoch)
        return vals
    return [
        f"{run.wall_time_s:.3f}" if timing else "-",
        str(run.final_epoch),
        _fmt(t.mse), _fmt(t.nmse), _fmt(t.mae_abs), _fmt(t.min_abs_err), _fmt(t.max_abs_err),
        _fmt(t.r_mean),
    ]


def _grid(report: BenchReport, timing: bool):
    columns = [(topo, d) for topo in report.topologies for d in report.hidden_range
               if (topo, d) in report.cells]
    header = ["PERFORMANCE MEASURE"] + [f"{t.value}/{d}" for t, d in columns]
    values = [_cell_values(report.cells[c], timing) for c in columns]
    rows = []
    if columns:
        for i, (_, label) in enumerate(ROW_LABELS):
            rows.append([label] + [v[i] for v in values])
    return header, rows


def emit_report(report: BenchReport, fmt: str = "csv", timing: bool = True) -> str:
    """Benchmark grid: one row per measure, one column per (topology, depth).

    ``timing=False`` blanks the wall-clock row so the document depends only
    on seeds and data.
    """
    header, rows = _grid(report, timing)
    if fmt == "csv":
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)
        return buf.getvalue()
    if fmt == "text":
        table = [header] + rows
        widths = [max(len(r[i]) for r in table) for i in range(len(header))]
        lines = ["  ".join(c.ljust(widths[i]) if i == 0 else c.rjust(widths[i]) for i, c in enumerate(r))
                 for r in table]
        if report.champion is not None:
            c = report.champion
            lines.append("")
            lines.append(f"champion: {c.topology.value} with {c.hidden_layers} hidden layer(s), "
                         f"restart {c.restart}, test MSE {_fmt(c.test.mse)}, R {_fmt(c.test.r_mean)}")
        return "\n".join(lines) + "\n"
    raise ValueError(f"unknown report format {fmt!r}")


def write_archive(report: BenchReport, out_dir: str | Path, normalizer: NormalizationParams | None = None) -> Path:
    """bench.csv, bench.txt, runs.json, timing.csv, runs/ and champion.model.

    Everything except bench.txt and timing.csv is byte-identical across reruns.
    """
    out = Path(out_dir)
    (out / "runs").mkdir(parents=True, exist_ok=True)
    meta = {"normalizer": normalizer.to_lines()} if normalizer is not None else {}
    (out / "bench.csv").write_text(emit_report(report, "csv", timing=False))
    (out / "bench.txt").write_text(emit_report(report, "text", timing=True))
    (out / "runs.json").write_text(report.to_json(timing=False))
    with open(out / "timing.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["run", "wall_time_s"])
        for r in report.runs:
            w.writerow([r.name, f"{r.wall_time_s:.3f}"])
    for r in report.runs:
        if r.curve is not None:
            r.curve.write_csv(out / "runs" / f"{r.name}.csv")
        if r.state is not None:
            save_model(out / "runs" / f"{r.name}.model", r.state, meta)
    if report.champion is not None and report.champion.state is not None:
        save_model(out / "champion.model", report.champion.state, meta)
    return out


def read_archive(out_dir: str | Path) -> BenchReport:
    out = Path(out_dir)
    timings = {}
    tpath = out / "timing.csv"
    if tpath.exists():
        with open(tpath, newline="") as fh:
            for row in csv.DictReader(fh):
                timings[row["run"]] = float(row["wall_time_s"])
    return BenchReport.from_json((out / "runs.json").read_text(), timings)
