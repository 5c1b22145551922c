"""Population sources: synthetic generator and CSV ingestion.

The synthetic population draws one parameter set per user (sinusoid
amplitude/frequency/phase, linear trend slope, noise level), so records
within a user are correlated while users stay distinct. That per-user
structure is what makes user-level membership inference meaningful.

CSV long format (also produced by ``tsmia synth``)::

    user_id,t,v1,...,vM

with ``t`` consecutive integers per user (any start, step exactly 1) and
finite decimal values.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .rng import rng_for
from .series import SeriesError, UserSeries


class CsvFormatError(SeriesError):
    """Malformed population CSV."""


@dataclass(frozen=True)
class SyntheticPopulationConfig:
    users: int = 60
    length: int = 1200
    variables: int = 1
    amplitude: tuple[float, float] = (0.6, 1.8)
    frequency: tuple[float, float] = (0.02, 0.25)  # cycles per time step
    phase: tuple[float, float] = (0.0, 2.0 * np.pi)
    trend: tuple[float, float] = (-0.002, 0.002)  # slope per time step
    noise: tuple[float, float] = (0.02, 0.10)  # stddev of i.i.d. Gaussian noise
    seed: int = 0

    def __post_init__(self):
        if self.users < 1 or self.length < 1 or self.variables < 1:
            raise SeriesError("synthetic config: users, length, variables must be >= 1")
        for name in ("amplitude", "frequency", "phase", "trend", "noise"):
            lo, hi = getattr(self, name)
            if hi < lo:
                raise SeriesError(f"synthetic config: empty {name} range")
        if self.noise[0] < 0:
            raise SeriesError("synthetic config: noise stddev must be >= 0")


def generate_population(cfg: SyntheticPopulationConfig) -> list[UserSeries]:
    """Generate ``cfg.users`` series, deterministic per (seed, user index).

    Each variable of user u is  A*sin(2*pi*f*t + phi) + slope*t + eps_t
    with per-user, per-variable parameters drawn once from the configured
    ranges and eps i.i.d. Gaussian.
    """
    t = np.arange(cfg.length, dtype=np.float64)
    width = max(4, len(str(cfg.users - 1)))
    population = []
    for u in range(cfg.users):
        rng = rng_for(cfg.seed, "population-user", u)
        m = cfg.variables
        amp = rng.uniform(*cfg.amplitude, size=m)
        freq = rng.uniform(*cfg.frequency, size=m)
        phase = rng.uniform(*cfg.phase, size=m)
        slope = rng.uniform(*cfg.trend, size=m)
        sigma = rng.uniform(*cfg.noise, size=m)
        base = amp[:, None] * np.sin(2.0 * np.pi * freq[:, None] * t + phase[:, None])
        drift = slope[:, None] * t
        noise = rng.standard_normal((m, cfg.length)) * sigma[:, None]
        population.append(UserSeries(f"u{u:0{width}d}", base + drift + noise))
    return population


def write_csv(population: list[UserSeries], path) -> None:
    """Write a population in the long CSV format, lossless for float64."""
    if not population:
        raise SeriesError("csv: empty population")
    m = population[0].num_variables
    if any(s.num_variables != m for s in population):
        raise SeriesError("csv: inconsistent variable counts")
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["user_id", "t"] + [f"v{j + 1}" for j in range(m)])
        for series in population:
            for t in range(series.length):
                writer.writerow(
                    [series.user_id, t] + [repr(float(v)) for v in series.values[:, t]]
                )


def ingest_csv(path) -> list[UserSeries]:
    """Read a population from the long CSV format.

    Rejects malformed rows, duplicate or gapped time indices, and
    inconsistent variable counts. Returns one UserSeries per user, in
    first-appearance order, rows ordered by time index.
    """
    per_user: dict[str, list[tuple[int, list[float]]]] = {}
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise CsvFormatError("csv: empty file") from None
        if len(header) < 3 or header[:2] != ["user_id", "t"]:
            raise CsvFormatError("csv: header must be user_id,t,v1,...,vM")
        m = len(header) - 2
        if header[2:] != [f"v{j + 1}" for j in range(m)]:
            raise CsvFormatError("csv: value columns must be named v1..vM")
        for lineno, row in enumerate(reader, start=2):
            if len(row) != m + 2:
                raise CsvFormatError(f"csv line {lineno}: expected {m + 2} fields, got {len(row)}")
            user = row[0]
            try:
                t = int(row[1])
                values = [float(v) for v in row[2:]]
            except ValueError:
                raise CsvFormatError(f"csv line {lineno}: malformed row") from None
            if not all(np.isfinite(values)):
                raise CsvFormatError(f"csv line {lineno}: non-finite value")
            per_user.setdefault(user, []).append((t, values))
    if not per_user:
        raise CsvFormatError("csv: no data rows")
    population = []
    for user, rows in per_user.items():
        times = [t for t, _ in rows]
        for prev, cur in zip(times, times[1:]):
            if cur == prev:
                raise CsvFormatError(f"csv: duplicate time index {cur} for user {user!r}")
            if cur < prev:
                raise CsvFormatError(f"csv: non-increasing time index for user {user!r}")
            if cur != prev + 1:
                raise CsvFormatError(f"csv: gap in time index for user {user!r} at t={cur}")
        values = np.array([v for _, v in rows], dtype=np.float64).T
        population.append(UserSeries(user, values))
    return population
