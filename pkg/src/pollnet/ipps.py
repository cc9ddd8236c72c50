"""Sectoral pollution-load estimation from IPPS-style intensity tables.

A load is ``intensity * activity * scale`` where the activity measure is
either sector employment or total value of output, and ``scale`` converts
the product into ton/yr.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from types import MappingProxyType
from typing import Iterable, Mapping


class ParseError(ValueError):
    """Malformed input file. Carries the offending line number when known."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class LookupFailure(KeyError):
    def __str__(self) -> str:
        return str(self.args[0]) if self.args else "lookup failed"


class SectorCode(str, Enum):
    FBT = "FBT"
    TWA = "TWA"
    WWP = "WWP"
    PPP = "PPP"
    CPH = "CPH"
    NMP = "NMP"
    DIP = "DIP"
    EES = "EES"
    BM = "BM"
    MVM = "MVM"

    @classmethod
    def parse(cls, token: str) -> "SectorCode":
        try:
            return cls(token.strip().upper())
        except ValueError:
            raise ValueError(f"unknown sector token {token!r}") from None

    @property
    def index(self) -> int:
        return SECTORS.index(self)


class Medium(str, Enum):
    AIR = "AIR"
    WATER = "WATER"
    LAND = "LAND"


class PollutantCode(str, Enum):
    SO2 = "SO2"
    NO2 = "NO2"
    CO = "CO"
    VOC = "VOC"
    FP = "FP"
    TSP = "TSP"
    TCAIR = "TCAIR"
    TCLAND = "TCLAND"
    TCWATER = "TCWATER"
    TMAIR = "TMAIR"
    TMLAND = "TMLAND"
    TMWATER = "TMWATER"
    BOD = "BOD"
    TSS = "TSS"

    @classmethod
    def parse(cls, token: str) -> "PollutantCode":
        try:
            return cls(token.strip().upper())
        except ValueError:
            raise ValueError(f"unknown pollutant token {token!r}") from None

    @property
    def medium(self) -> Medium:
        return _MEDIUM[self]


SECTORS: tuple[SectorCode, ...] = tuple(SectorCode)
# canonical column order for every report
POLLUTANTS: tuple[PollutantCode, ...] = tuple(PollutantCode)

_MEDIUM = {
    PollutantCode(code): medium
    for medium, codes in [
        (Medium.AIR, ("SO2", "NO2", "CO", "VOC", "FP", "TSP", "TCAIR", "TMAIR")),
        (Medium.WATER, ("TCWATER", "TMWATER", "BOD", "TSS")),
        (Medium.LAND, ("TCLAND", "TMLAND")),
    ]
    for code in codes
}


class ActivityBasis(str, Enum):
    EMPLOYMENT = "EMPLOYMENT"
    OUTPUT_VALUE = "OUTPUT_VALUE"


def _check_finite_nonneg(name: str, value: float) -> None:
    if not math.isfinite(value) or value < 0:
        raise ValueError(f"{name} must be finite and >= 0, got {value!r}")


@dataclass(frozen=True)
class IntensityTable:
    """Sector x pollutant intensities sharing one activity basis and unit scale.

    A missing (sector, pollutant) pair is absent: :meth:`get` returns None and
    the pair produces no load, which is different from an intensity of 0.
    """

    basis: ActivityBasis
    scale: float
    entries: Mapping[tuple[SectorCode, PollutantCode], float] = field(default_factory=dict)

    def __post_init__(self):
        if not (math.isfinite(self.scale) and self.scale > 0):
            raise ValueError(f"scale must be finite and > 0, got {self.scale!r}")
        clean = {}
        for (sector, pollutant), value in self.entries.items():
            value = float(value)
            _check_finite_nonneg(f"intensity[{sector.value},{pollutant.value}]", value)
            clean[(SectorCode(sector), PollutantCode(pollutant))] = value
        object.__setattr__(self, "entries", MappingProxyType(clean))

    def get(self, sector: SectorCode, pollutant: PollutantCode) -> float | None:
        return self.entries.get((sector, pollutant))

    def pollutants_for(self, sector: SectorCode) -> list[PollutantCode]:
        return [p for p in POLLUTANTS if (sector, p) in self.entries]

    @property
    def sectors(self) -> list[SectorCode]:
        present = {s for s, _ in self.entries}
        return [s for s in SECTORS if s in present]


@dataclass(frozen=True)
class ActivityRecord:
    sector: SectorCode
    year: int
    employment: int
    output_value: float

    def __post_init__(self):
        if not 1000 <= int(self.year) <= 9999:
            raise ValueError(f"year must be a 4-digit integer, got {self.year!r}")
        _check_finite_nonneg("employment", float(self.employment))
        _check_finite_nonneg("output_value", float(self.output_value))

    def activity(self, basis: ActivityBasis) -> float:
        if basis is ActivityBasis.EMPLOYMENT:
            return float(self.employment)
        return float(self.output_value)


@dataclass(frozen=True)
class LoadEstimate:
    sector: SectorCode
    year: int
    pollutant: PollutantCode
    load: float

    @property
    def medium(self) -> Medium:
        return self.pollutant.medium


def estimate_load(intensity: float, activity: float, scale: float) -> float:
    """Pollution load in ton/yr: ``intensity * activity * scale``."""
    _check_finite_nonneg("intensity", intensity)
    _check_finite_nonneg("activity", activity)
    if not (math.isfinite(scale) and scale > 0):
        raise ValueError(f"scale must be finite and > 0, got {scale!r}")
    load = intensity * activity * scale
    if not math.isfinite(load):
        raise ValueError("load overflowed")
    return load


def estimate_sector_year(table: IntensityTable, record: ActivityRecord) -> list[LoadEstimate]:
    pollutants = table.pollutants_for(record.sector)
    if not pollutants:
        raise LookupFailure(f"sector {record.sector.value} is absent from the intensity table")
    activity = record.activity(table.basis)
    return [
        LoadEstimate(record.sector, record.year, p,
                     estimate_load(table.entries[(record.sector, p)], activity, table.scale))
        for p in pollutants
    ]


def estimate_all(table: IntensityTable, records: Iterable[ActivityRecord]) -> list[LoadEstimate]:
    out: list[LoadEstimate] = []
    for rec in records:
        out.extend(estimate_sector_year(table, rec))
    return out


def rank_sectors(loads: Iterable[LoadEstimate],
                 pollutant: PollutantCode) -> list[tuple[SectorCode, float]]:
    """Sectors ordered by descending load for one pollutant.

    Loads of the same sector (several years) are summed first. Ties go to the
    lexicographically smaller sector code. An empty list means the pollutant
    had no loads at all.
    """
    totals: dict[SectorCode, float] = {}
    for est in loads:
        if est.pollutant is pollutant:
            totals[est.sector] = totals.get(est.sector, 0.0) + est.load
    return sorted(totals.items(), key=lambda kv: (-kv[1], kv[0].value))


def aggregate_by_medium(loads: Iterable[LoadEstimate]) -> dict[Medium, float]:
    totals = {m: 0.0 for m in Medium}
    for est in loads:
        totals[est.medium] += est.load
    return totals


# --- CSV / sidecar I/O -------------------------------------------------------

INTENSITY_HEADER = ["sector", "pollutant", "intensity"]
ACTIVITY_HEADER = ["sector", "year", "employment", "output_value"]
LOAD_HEADER = ["sector", "year", "pollutant", "medium", "load_ton_per_yr"]


def read_kv(path: str | Path) -> dict[str, str]:
    """Parse a plain ``key = value`` file. ``#`` starts a comment."""
    out = {}
    with open(path) as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ParseError(f"expected key=value, got {line!r}", lineno)
            key, value = line.split("=", 1)
            out[key.strip()] = value.strip()
    return out


def _float(token: str, what: str, lineno: int) -> float:
    try:
        value = float(token)
    except ValueError:
        raise ParseError(f"non-numeric {what} {token!r}", lineno) from None
    return value


def _read_rows(path, header):
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            first = next(reader)
        except StopIteration:
            raise ParseError("missing header", 1) from None
        if [h.strip().lower() for h in first] != header:
            raise ParseError(f"header must be {','.join(header)}", 1)
        for lineno, row in enumerate(reader, 2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(header):
                raise ParseError(f"expected {len(header)} fields, got {len(row)}", lineno)
            yield lineno, [c.strip() for c in row]


def read_intensity_table(csv_path, sidecar_path=None, *, basis=None, scale=None) -> IntensityTable:
    """Load an intensity CSV; basis and scale come from the sidecar or kwargs."""
    meta = read_kv(sidecar_path) if sidecar_path else {}
    basis = ActivityBasis(str(basis or meta.get("basis", "EMPLOYMENT")).upper())
    scale = float(scale if scale is not None else meta.get("scale", 1.0))
    entries = {}
    for lineno, (sec, pol, val) in _read_rows(csv_path, INTENSITY_HEADER):
        try:
            key = (SectorCode.parse(sec), PollutantCode.parse(pol))
        except ValueError as exc:
            raise ParseError(str(exc), lineno) from None
        if key in entries:
            raise ParseError(f"duplicate pair {sec},{pol}", lineno)
        value = _float(val, "intensity", lineno)
        if not math.isfinite(value) or value < 0:
            raise ParseError(f"intensity must be finite and >= 0, got {val!r}", lineno)
        entries[key] = value
    return IntensityTable(basis, scale, entries)


def read_activity(csv_path) -> list[ActivityRecord]:
    records = []
    for lineno, (sec, year, emp, out) in _read_rows(csv_path, ACTIVITY_HEADER):
        try:
            sector = SectorCode.parse(sec)
        except ValueError as exc:
            raise ParseError(str(exc), lineno) from None
        try:
            year_i = int(year)
        except ValueError:
            raise ParseError(f"non-integer year {year!r}", lineno) from None
        emp_f = _float(emp, "employment", lineno)
        if emp_f != int(emp_f):
            raise ParseError(f"employment must be an integer, got {emp!r}", lineno)
        try:
            records.append(ActivityRecord(sector, year_i, int(emp_f), _float(out, "output_value", lineno)))
        except ValueError as exc:
            raise ParseError(str(exc), lineno) from None
    return records


def write_loads(path, loads: Iterable[LoadEstimate]) -> int:
    n = 0
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(LOAD_HEADER)
        for est in loads:
            w.writerow([est.sector.value, est.year, est.pollutant.value, est.medium.value, repr(est.load)])
            n += 1
    return n
