"""Synthetic stand-ins for the full survey panel, which is not available.

``ipps_rows`` builds a sector x year panel shaped like the real data (same
columns, loads = intensity x employment x scale with multiplicative noise).
The other two generators are the reference tasks used by the acceptance
suite: a noisy XOR regression and a lagged linear series.
"""

from __future__ import annotations

import numpy as np

from .dataset import DEFAULT_FRACTIONS, EncodedDataset, PI_POLLUTANTS, RawRow, split
from .ipps import POLLUTANTS, SECTORS

# intensities for the sectors listed in the training sample, first 8 pollutants
SAMPLE_INTENSITIES = {
    "BM": (11363715, 2403689, 9001620, 2214652, 894782, 10518, 1711757, 3070992),
    "WWP": (324752, 396905, 347260, 1039161, 136324, 8446, 218457, 25617),
    "DIP": (13680464, 3766768, 551943, 3318529, 11101, 1231, 1867319, 1397019),
    "PPP": (6344752, 34287663, 7066002, 1155022, 349944, 5084, 1210727, 483003),
    "EES": (515941, 173935, 307709, 317396, 1760, 364, 1711757, 3070992),
    "TWA": (309169, 496163, 150850, 305642, 20120, 3157, 1999955, 2383466),
    "NMP": (27354929, 15576253, 2382725, 497374, 23003045, 92290, 192218, 200535),
}

LOAD_SCALE = 1e-6


def sector_intensities(seed: int = 0) -> dict:
    """Intensity vector (14 pollutants, canonical order) for every sector.

    Uses the sample intensities where they exist; the rest are drawn
    log-uniformly over the same range.
    """
    rng = np.random.default_rng(seed)
    out = {}
    for sector in SECTORS:
        drawn = 10 ** rng.uniform(2.5, 7.5, size=len(POLLUTANTS))
        known = SAMPLE_INTENSITIES.get(sector.value)
        if known is not None:
            drawn[:len(known)] = known
        out[sector] = drawn
    return out


def ipps_rows(years=range(1997, 2006), sectors=SECTORS, seed: int = 0, noise: float = 0.05) -> list[RawRow]:
    rng = np.random.default_rng(seed)
    intensities = sector_intensities(seed)
    rows = []
    for sector in sectors:
        base = 10 ** rng.uniform(2.0, 4.8)
        growth = rng.uniform(-0.05, 0.12)
        productivity = 10 ** rng.uniform(5.0, 6.5)
        for k, year in enumerate(years):
            employment = float(round(base * (1 + growth) ** k * rng.uniform(0.9, 1.1)))
            output_value = employment * productivity * rng.uniform(0.8, 1.2)
            pi = intensities[sector]
            loads = pi * employment * LOAD_SCALE * np.exp(rng.normal(0.0, noise, size=len(POLLUTANTS)))
            rows.append(RawRow(sector, int(year), employment, float(output_value),
                               tuple(float(pi[POLLUTANTS.index(p)]) for p in PI_POLLUTANTS),
                               tuple(float(v) for v in loads)))
    return rows


def xor_dataset(n: int = 40, seed: int = 0, jitter: float = 0.1, fractions=DEFAULT_FRACTIONS) -> EncodedDataset:
    """Points jittered around the unit-square corners; target ``a + b - 2ab``.

    The best affine fit has MSE close to 0.25, while one small hidden layer
    can fit it almost exactly.
    """
    rng = np.random.default_rng(seed)
    corners = np.array([[0, 0], [0, 1], [1, 0], [1, 1]], dtype=float)
    x = corners[np.arange(n) % 4] + rng.uniform(-jitter, jitter, size=(n, 2))
    y = x[:, 0] + x[:, 1] - 2 * x[:, 0] * x[:, 1]
    groups = list(np.arange(n) % 4)
    assign = split(list(range(n)), fractions, seed, groups=groups, order=list(range(n)))
    roles = np.array([int(r) for r in assign.roles])
    return EncodedDataset(x, y[:, None], roles, [np.arange(n)])


def lagged_series(n: int = 500, seed: int = 0, noise: float = 0.01, lags=((2, 0.6), (5, -0.3)),
                  fractions=DEFAULT_FRACTIONS) -> EncodedDataset:
    """``y(t) = sum(coef * x(t - lag)) + uniform noise`` with ``x`` uniform on [0, 1].

    Returned as one sequence; roles are assigned by a seeded random split.
    """
    rng = np.random.default_rng(seed)
    max_lag = max(lag for lag, _ in lags)
    x = rng.uniform(0.0, 1.0, size=n + max_lag)
    y = sum(c * x[max_lag - lag:max_lag - lag + n] for lag, c in lags)
    y = y + rng.uniform(-noise, noise, size=n)
    x = x[max_lag:]
    assign = split(list(range(n)), fractions, seed, groups=[0] * n, order=list(range(n)))
    roles = np.array([int(r) for r in assign.roles])
    return EncodedDataset.single_series(x[:, None], y[:, None], roles)
