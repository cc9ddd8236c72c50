"""Row ingestion, encoding, normalisation and splitting.

Input CSV columns (fixed order)::

    sector,year,employment,output_value,
    pi_so2 ... pi_bod      (13 intensities, TSS excluded)
    load_so2 ... load_tss  (14 loads)

Intensity and load columns follow the survey's variable order, which lists
TMWATER before TMLAND. In memory every pollutant vector uses the canonical
order of :data:`pollnet.ipps.POLLUTANTS`.
"""

from __future__ import annotations

import csv
import logging
import math
from collections import Counter
from dataclasses import dataclass, field
from enum import IntEnum
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .ipps import POLLUTANTS, SECTORS, ParseError, PollutantCode, SectorCode

log = logging.getLogger(__name__)

PI_POLLUTANTS: tuple[PollutantCode, ...] = tuple(p for p in POLLUTANTS if p is not PollutantCode.TSS)
_FILE_ORDER = ["SO2", "NO2", "CO", "VOC", "FP", "TSP", "TCAIR", "TCLAND", "TCWATER",
               "TMAIR", "TMWATER", "TMLAND", "BOD", "TSS"]
PI_COLUMNS = [f"pi_{p.lower()}" for p in _FILE_ORDER[:-1]]
LOAD_COLUMNS = [f"load_{p.lower()}" for p in _FILE_ORDER]
HEADER = ["sector", "year", "employment", "output_value", *PI_COLUMNS, *LOAD_COLUMNS]


class Role(IntEnum):
    TRAIN = 0
    CROSS_VALIDATION = 1
    TEST = 2


@dataclass(frozen=True)
class RawRow:
    sector: SectorCode
    year: int
    employment: float
    output_value: float
    pi: tuple[float, ...]       # 13 values, order PI_POLLUTANTS
    targets: tuple[float, ...]  # 14 values, order POLLUTANTS

    def __post_init__(self):
        if len(self.pi) != len(PI_POLLUTANTS) or len(self.targets) != len(POLLUTANTS):
            raise ValueError("RawRow needs 13 intensities and 14 targets")

    def continuous(self) -> dict[str, float]:
        out = {"year": float(self.year), "employment": self.employment,
               "output_value": self.output_value}
        out.update({f"pi_{p.value.lower()}": v for p, v in zip(PI_POLLUTANTS, self.pi)})
        out.update({f"load_{p.value.lower()}": v for p, v in zip(POLLUTANTS, self.targets)})
        return out


def load_rows(csv_path: str | Path) -> list[RawRow]:
    rows = []
    with open(csv_path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            head = [h.strip().lower() for h in next(reader)]
        except StopIteration:
            raise ParseError("missing header", 1) from None
        if head != HEADER:
            raise ParseError(f"header does not match the {len(HEADER)}-column schema", 1)
        for lineno, rec in enumerate(reader, 2):
            if not rec or all(not c.strip() for c in rec):
                continue
            if len(rec) != len(HEADER):
                raise ParseError(f"expected {len(HEADER)} fields, got {len(rec)}", lineno)
            rows.append(_parse_row(rec, lineno))
    log.info("loaded %d rows from %s", len(rows), csv_path)
    return rows


def _parse_row(rec: list[str], lineno: int) -> RawRow:
    try:
        sector = SectorCode.parse(rec[0])
    except ValueError as exc:
        raise ParseError(str(exc), lineno) from None
    values = {}
    for name, cell in zip(HEADER[1:], rec[1:]):
        cell = cell.strip()
        if not cell:
            raise ParseError(f"blank value in column {name}", lineno)
        try:
            v = float(cell)
        except ValueError:
            raise ParseError(f"non-numeric value {cell!r} in column {name}", lineno) from None
        if not math.isfinite(v):
            raise ParseError(f"non-finite value in column {name}", lineno)
        values[name] = v
    year = values["year"]
    if year != int(year) or not 1000 <= year <= 9999:
        raise ParseError(f"year must be a 4-digit integer, got {rec[1]!r}", lineno)
    pi = tuple(values[f"pi_{p.value.lower()}"] for p in PI_POLLUTANTS)
    targets = tuple(values[f"load_{p.value.lower()}"] for p in POLLUTANTS)
    return RawRow(sector, int(year), values["employment"], values["output_value"], pi, targets)


def write_rows(path: str | Path, rows: Iterable[RawRow]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(HEADER)
        for r in rows:
            cont = r.continuous()
            w.writerow([r.sector.value, r.year] + [repr(float(cont[c])) for c in HEADER[2:]])


# --- normalisation -------------------------------------------------------------

def input_columns(include_year: bool = True) -> list[str]:
    return (["year"] if include_year else []) + ["employment", "output_value"] + \
        [f"pi_{p.value.lower()}" for p in PI_POLLUTANTS]


TARGET_COLUMNS = [f"load_{p.value.lower()}" for p in POLLUTANTS]


@dataclass(frozen=True)
class NormalizationParams:
    """Per-column (min, max) fitted on training rows. Constant columns map to 0.5."""

    ranges: dict[str, tuple[float, float]]
    include_year: bool = True

    def __post_init__(self):
        for col, (lo, hi) in self.ranges.items():
            if hi < lo:
                raise ValueError(f"column {col}: max < min")

    @property
    def input_width(self) -> int:
        return len(SECTORS) + len(input_columns(self.include_year))

    def is_constant(self, col: str) -> bool:
        lo, hi = self.ranges[col]
        return hi == lo

    def normalize(self, col: str, x, clamp_log: Counter | None = None):
        lo, hi = self.ranges[col]
        x = np.asarray(x, dtype=float)
        if hi == lo:
            z = np.full_like(x, 0.5)
        else:
            z = (x - lo) / (hi - lo)
        out_of_range = (z < 0.0) | (z > 1.0)
        if np.any(out_of_range):
            if clamp_log is not None:
                clamp_log[col] += int(np.sum(out_of_range))
            z = np.clip(z, 0.0, 1.0)
        return z if z.ndim else float(z)

    def denormalize(self, col: str, z):
        lo, hi = self.ranges[col]
        z = np.asarray(z, dtype=float)
        x = np.full_like(z, lo) if hi == lo else lo + z * (hi - lo)
        return x if x.ndim else float(x)

    def save(self, path: str | Path) -> None:
        with open(path, "w") as fh:
            fh.write(f"include_year={int(self.include_year)}\n")
            for col, (lo, hi) in self.ranges.items():
                fh.write(f"{col}={lo!r},{hi!r}\n")

    @classmethod
    def load(cls, path: str | Path) -> "NormalizationParams":
        with open(path) as fh:
            return cls.from_lines(fh.read().splitlines())

    def to_lines(self) -> list[str]:
        return [f"include_year={int(self.include_year)}"] + \
            [f"{c}={lo!r},{hi!r}" for c, (lo, hi) in self.ranges.items()]

    @classmethod
    def from_lines(cls, lines: Sequence[str]) -> "NormalizationParams":
        ranges = {}
        include_year = True
        for lineno, line in enumerate(lines, 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            key, sep, value = line.partition("=")
            if not sep:
                raise ParseError(f"expected column=min,max, got {line!r}", lineno)
            key = key.strip()
            if key == "include_year":
                include_year = bool(int(value))
                continue
            try:
                lo, hi = (float(v) for v in value.split(","))
            except ValueError:
                raise ParseError(f"bad range for {key}: {value!r}", lineno) from None
            ranges[key] = (lo, hi)
        missing = [c for c in input_columns(include_year) + TARGET_COLUMNS if c not in ranges]
        if missing:
            raise ParseError(f"normalizer lacks columns: {', '.join(missing)}")
        return cls(ranges, include_year)


def fit_normalizer(rows: Sequence[RawRow], include_year: bool = True) -> NormalizationParams:
    if not rows:
        raise ValueError("cannot fit a normalizer on zero rows")
    cols = input_columns(include_year) + TARGET_COLUMNS
    data = [r.continuous() for r in rows]
    ranges = {}
    for c in cols:
        vals = [d[c] for d in data]
        ranges[c] = (min(vals), max(vals))
        if ranges[c][0] == ranges[c][1]:
            log.debug("column %s is constant on the fitting rows", c)
    return NormalizationParams(ranges, include_year)


# --- encoding ------------------------------------------------------------------

@dataclass(frozen=True)
class EncodedSample:
    sector: SectorCode
    year: int
    input: np.ndarray
    target: np.ndarray


def encode(row: RawRow, norm: NormalizationParams, clamp_log: Counter | None = None) -> EncodedSample:
    """Input layout: one-hot sector (10), then ``input_columns`` min-max scaled."""
    onehot = np.zeros(len(SECTORS))
    onehot[row.sector.index] = 1.0
    cont = row.continuous()
    before = sum(clamp_log.values()) if clamp_log is not None else 0
    scaled = [norm.normalize(c, cont[c], clamp_log) for c in input_columns(norm.include_year)]
    target = [norm.normalize(c, cont[c], clamp_log) for c in TARGET_COLUMNS]
    if clamp_log is not None and sum(clamp_log.values()) > before:
        log.warning("row %s/%d clamped into the fitted range", row.sector.value, row.year)
    return EncodedSample(row.sector, row.year, np.concatenate([onehot, scaled]), np.asarray(target))


def decode_targets(norm: NormalizationParams, z) -> np.ndarray:
    """Back to load units; ``z`` is samples x 14 in canonical order."""
    z = np.atleast_2d(np.asarray(z, dtype=float))
    return np.column_stack([norm.denormalize(c, z[:, j]) for j, c in enumerate(TARGET_COLUMNS)])


# --- splitting -----------------------------------------------------------------

DEFAULT_FRACTIONS = (0.60, 0.25, 0.15)


@dataclass(frozen=True)
class SplitAssignment:
    roles: tuple[Role, ...]
    fractions: tuple[float, float, float]
    seed: int
    mode: str = "random"

    def indices(self, role: Role) -> list[int]:
        return [i for i, r in enumerate(self.roles) if r == role]

    def counts(self) -> tuple[int, int, int]:
        c = Counter(self.roles)
        return c[Role.TRAIN], c[Role.CROSS_VALIDATION], c[Role.TEST]


def _target_counts(n, fractions):
    n_train = int(round(n * fractions[0]))
    n_cv = int(round(n * fractions[1]))
    n_train = max(1, min(n_train, n - 2))
    n_cv = max(1, min(n_cv, n - n_train - 1))
    return n_train, n_cv, n - n_train - n_cv


def split(rows: Sequence, fractions=DEFAULT_FRACTIONS, seed: int = 0, mode: str = "random",
          groups: Sequence | None = None, order: Sequence | None = None) -> SplitAssignment:
    """Assign TRAIN / CROSS_VALIDATION / TEST roles.

    ``random`` mode deals rows out sector by sector in a seeded round robin,
    so the first few TRAIN slots go to one row of every sector. ``chrono``
    mode puts the earliest years in TRAIN and the latest in TEST.

    ``groups`` and ``order`` default to each row's sector and year.
    """
    fractions = tuple(float(f) for f in fractions)
    if len(fractions) != 3 or any(f < 0 for f in fractions) or abs(sum(fractions) - 1.0) > 1e-9:
        raise ValueError(f"fractions must be three nonnegative numbers summing to 1, got {fractions}")
    n = len(rows)
    if n < 3:
        raise ValueError(f"need at least 3 rows to split, got {n}")
    groups = list(groups) if groups is not None else [r.sector for r in rows]
    order = list(order) if order is not None else [r.year for r in rows]
    n_train, n_cv, _ = _target_counts(n, fractions)
    rng = np.random.default_rng(seed)

    if mode == "random":
        by_group: dict = {}
        for i, g in enumerate(groups):
            by_group.setdefault(g, []).append(i)
        keys = sorted(by_group, key=str)
        queues = [list(rng.permutation(by_group[k])) for k in keys]
        queues = [queues[i] for i in rng.permutation(len(queues))]
        sequence = []
        while any(queues):
            for q in queues:
                if q:
                    sequence.append(int(q.pop()))
        if n_train < len(keys):
            log.warning("only %d TRAIN slots for %d groups; some groups miss TRAIN", n_train, len(keys))
        # keep the first round (one row per group) in TRAIN, shuffle the rest
        head, tail = sequence[:len(keys)], sequence[len(keys):]
        tail = [tail[i] for i in rng.permutation(len(tail))]
        sequence = head + tail
    elif mode == "chrono":
        sequence = sorted(range(n), key=lambda i: (order[i], str(groups[i])))
    else:
        raise ValueError(f"unknown split mode {mode!r}")

    roles = [Role.TEST] * n
    for pos, i in enumerate(sequence):
        roles[i] = Role.TRAIN if pos < n_train else Role.CROSS_VALIDATION if pos < n_train + n_cv else Role.TEST
    return SplitAssignment(tuple(roles), fractions, int(seed), mode)


# --- sequences and the encoded dataset -------------------------------------------

@dataclass(frozen=True)
class SequenceView:
    """Per-group sample indices, ascending in time."""

    sequences: dict
    roles: tuple[Role, ...]


def make_sequences(samples: Sequence[EncodedSample], assignment: SplitAssignment | None = None) -> SequenceView:
    seen: dict = {}
    dups = []
    for i, s in enumerate(samples):
        key = (s.sector, s.year)
        if key in seen:
            dups.append(f"{s.sector.value}/{s.year}")
        seen[key] = i
    if dups:
        raise ValueError(f"duplicate (sector, year) entries: {', '.join(dups)}")
    by_sector: dict = {}
    for i, s in enumerate(samples):
        by_sector.setdefault(s.sector, []).append(i)
    seqs = {k: sorted(v, key=lambda i: samples[i].year) for k, v in sorted(by_sector.items(), key=lambda kv: kv[0].index)}
    roles = assignment.roles if assignment is not None else tuple(Role.TRAIN for _ in samples)
    return SequenceView(seqs, tuple(roles))


@dataclass
class EncodedDataset:
    """Normalised matrices plus roles and temporal grouping.

    ``sequences`` lists row-index arrays, each one group in time order.
    Static models ignore the grouping; temporal ones run each group as a
    separate sequence from a fresh context.
    """

    inputs: np.ndarray
    targets: np.ndarray
    roles: np.ndarray
    sequences: list[np.ndarray]
    normalizer: NormalizationParams | None = None
    clamped: Counter = field(default_factory=Counter)
    labels: list = field(default_factory=list)

    def __post_init__(self):
        self.inputs = np.asarray(self.inputs, dtype=float)
        self.targets = np.asarray(self.targets, dtype=float)
        self.roles = np.asarray(self.roles, dtype=int)
        if self.targets.ndim == 1:
            self.targets = self.targets[:, None]
        if not (len(self.inputs) == len(self.targets) == len(self.roles)):
            raise ValueError("inputs, targets and roles must have the same length")
        covered = np.sort(np.concatenate(self.sequences)) if self.sequences else np.array([], int)
        if not np.array_equal(covered, np.arange(len(self.inputs))):
            raise ValueError("sequences must cover each row exactly once")

    @property
    def n_inputs(self) -> int:
        return self.inputs.shape[1]

    @property
    def n_outputs(self) -> int:
        return self.targets.shape[1]

    def mask(self, role: Role) -> np.ndarray:
        return self.roles == int(role)

    def select(self, role: Role) -> tuple[np.ndarray, np.ndarray]:
        m = self.mask(role)
        return self.inputs[m], self.targets[m]

    @classmethod
    def single_series(cls, inputs, targets, roles) -> "EncodedDataset":
        n = len(inputs)
        return cls(inputs, targets, roles, [np.arange(n)])


def prepare(rows: Sequence[RawRow], fractions=DEFAULT_FRACTIONS, seed: int = 0, mode: str = "random",
            include_year: bool = True) -> EncodedDataset:
    """Split, fit the normaliser on TRAIN rows only, encode, and group by sector."""
    assignment = split(rows, fractions, seed, mode)
    train_rows = [rows[i] for i in assignment.indices(Role.TRAIN)]
    norm = fit_normalizer(train_rows, include_year)
    clamp_log: Counter = Counter()
    samples = [encode(r, norm, clamp_log) for r in rows]
    if clamp_log:
        log.warning("clamped %d out-of-range values in CV/TEST rows", sum(clamp_log.values()))
    view = make_sequences(samples, assignment)
    return EncodedDataset(
        inputs=np.stack([s.input for s in samples]),
        targets=np.stack([s.target for s in samples]),
        roles=np.array([int(r) for r in assignment.roles]),
        sequences=[np.array(v) for v in view.sequences.values()],
        normalizer=norm,
        clamped=clamp_log,
        labels=[(r.sector.value, r.year) for r in rows],
    )
