"""Seeded Monte Carlo risk sweeps with common random numbers.

Replication ``r`` at grid index ``i`` always uses Philox block ``r`` of the
stream keyed ``(seed, i)``; with ``crn`` off each estimator gets its own
stream ``(seed, i, j + 1)``.  Replications are processed in fixed-size
chunks whose partial statistics are merged in chunk order, so a sweep is a
pure function of its configuration whatever the thread count.
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import NamedTuple

import numpy as np

from .estimators import ALL_ESTIMATORS, FIGURE_ESTIMATORS, EstimatorId, estimate
from .model import (
    ParameterPoint,
    TrialDesign,
    sample_observations,
    selected_mean,
    stream_key,
)

CHUNK = 1 << 16
THREADS_ENV = "DLD_THREADS"

TABLE1_THETAS = (0.0, 0.05, 0.1, 0.2, 0.3, 0.5, 1.0, 1.5, 2.0, 2.5, 3.0)
TABLE1_DESIGNS = ((5, 5), (10, 5), (10, 10), (10, 15))
FIGURE_THETAS = tuple(round(0.1 * k, 10) for k in range(31))
FIGURE_DESIGNS = ((5, 5), (10, 10), (5, 10), (10, 15), (10, 5), (15, 10))


def default_threads() -> int:
    raw = os.environ.get(THREADS_ENV, "")
    try:
        return max(1, int(raw))
    except ValueError:
        return 1


@dataclass(frozen=True)
class SweepConfig:
    design: TrialDesign
    theta_grid: tuple[float, ...]
    replications: int = 1_000_000
    seed: int = 0
    estimator_set: tuple[EstimatorId, ...] = ALL_ESTIMATORS
    crn: bool = True

    def __post_init__(self):
        grid = tuple(float(t) for t in self.theta_grid)
        if not grid:
            raise ValueError("theta grid is empty")
        if any(not math.isfinite(t) or t < 0 for t in grid):
            raise ValueError("theta values must be finite and nonnegative")
        if any(b < a for a, b in zip(grid, grid[1:])):
            raise ValueError("theta grid must be sorted")
        if int(self.replications) != self.replications or self.replications < 1000:
            raise ValueError("replications must be an integer >= 1000")
        tags = tuple(EstimatorId.parse(t) if isinstance(t, str) else EstimatorId(t)
                     for t in self.estimator_set)
        if not tags:
            raise ValueError("estimator set is empty")
        object.__setattr__(self, "theta_grid", grid)
        object.__setattr__(self, "estimator_set", tags)
        object.__setattr__(self, "seed", int(self.seed))


class _Moments(NamedTuple):
    """Count, mean and centred sum of squares of a sample."""

    n: int
    mean: float
    m2: float

    @classmethod
    def of(cls, v: np.ndarray) -> "_Moments":
        mean = float(np.mean(v))
        return cls(v.size, mean, float(np.sum((v - mean) ** 2)))

    def merge(self, other: "_Moments") -> "_Moments":
        n = self.n + other.n
        delta = other.mean - self.mean
        mean = self.mean + delta * other.n / n
        return _Moments(n, mean, self.m2 + other.m2 + delta * delta * self.n * other.n / n)

    @property
    def se(self) -> float:
        return math.sqrt(self.m2 / (self.n - 1) / self.n)


def _merge_all(parts):
    out = parts[0]
    for p in parts[1:]:
        out = out.merge(p)
    return out


def _errors(config: SweepConfig, i_theta: int, start: int, count: int) -> dict:
    truth = ParameterPoint(0.0, config.theta_grid[i_theta])
    out = {}
    if config.crn:
        obs = sample_observations(config.design, truth, stream_key(config.seed, i_theta),
                                  start, count)
        target = selected_mean(truth, obs)
        for tag in config.estimator_set:
            out[tag] = np.asarray(estimate(tag, config.design, obs)) - target
        return out
    for j, tag in enumerate(config.estimator_set):
        obs = sample_observations(config.design, truth,
                                  stream_key(config.seed, i_theta, j + 1), start, count)
        out[tag] = np.asarray(estimate(tag, config.design, obs)) - selected_mean(truth, obs)
    return out


def _chunked(config: SweepConfig, i_theta: int, reducer, threads: int | None):
    """Apply ``reducer(errors) -> tuple of _Moments`` to every chunk and
    merge the results in chunk order."""
    starts = range(0, config.replications, CHUNK)

    def work(start):
        return reducer(_errors(config, i_theta, start, min(CHUNK, config.replications - start)))

    threads = threads or default_threads()
    if threads > 1 and len(starts) > 1:
        with ThreadPoolExecutor(threads) as pool:
            parts = list(pool.map(work, starts))
    else:
        parts = [work(s) for s in starts]
    return [_merge_all([p[k] for p in parts]) for k in range(len(parts[0]))]


@dataclass(frozen=True)
class RiskCurve:
    """Monte Carlo risk and bias on a theta grid.

    Arrays are indexed ``[theta, estimator]``; ``mc_standard_error`` is the
    standard error of the MSE and ``bias_standard_error`` that of the bias.
    """

    design: TrialDesign
    theta_grid: tuple[float, ...]
    estimators: tuple[EstimatorId, ...]
    replications: int
    seed: int
    crn: bool
    mse: np.ndarray = field(repr=False)
    bias: np.ndarray = field(repr=False)
    mc_standard_error: np.ndarray = field(repr=False)
    bias_standard_error: np.ndarray = field(repr=False)

    def column(self, tag) -> int:
        return self.estimators.index(EstimatorId(tag))

    def rows(self):
        d = self.design
        for i, theta in enumerate(self.theta_grid):
            for j, tag in enumerate(self.estimators):
                yield FigureRow(d.n1, d.n2, d.sigma, theta, tag.value, "mse",
                                float(self.mse[i, j]), float(self.mc_standard_error[i, j]))
                yield FigureRow(d.n1, d.n2, d.sigma, theta, tag.value, "bias",
                                float(self.bias[i, j]), float(self.bias_standard_error[i, j]))


class FigureRow(NamedTuple):
    n1: int
    n2: int
    sigma: float
    theta: float
    estimator: str
    metric: str
    value: float
    se: float


def run_sweep(config: SweepConfig, threads: int | None = None) -> RiskCurve:
    tags = config.estimator_set
    shape = (len(config.theta_grid), len(tags))
    mse, bias, se_mse, se_bias = (np.empty(shape) for _ in range(4))

    def reducer(err):
        out = []
        for tag in tags:
            e = err[tag]
            out += [_Moments.of(e), _Moments.of(e * e)]
        return tuple(out)

    for i in range(len(config.theta_grid)):
        stats = _chunked(config, i, reducer, threads)
        for j in range(len(tags)):
            first, second = stats[2 * j], stats[2 * j + 1]
            bias[i, j], se_bias[i, j] = first.mean, first.se
            mse[i, j], se_mse[i, j] = second.mean, second.se
    return RiskCurve(config.design, config.theta_grid, tags, config.replications,
                     config.seed, config.crn, mse, bias, se_mse, se_bias)


def mse_difference(config: SweepConfig, base, other,
                   threads: int | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Estimated mse(base) - mse(other) per theta, with standard errors.

    Under ``crn`` the two squared errors come from the same draws and the
    difference is paired; otherwise the streams are independent.
    """
    base, other = EstimatorId(base), EstimatorId(other)
    config = replace(config, estimator_set=(base, other))

    def reducer(err):
        return (_Moments.of(err[base] ** 2 - err[other] ** 2),)

    diff, se = [], []
    for i in range(len(config.theta_grid)):
        (m,) = _chunked(config, i, reducer, threads)
        diff.append(m.mean)
        se.append(m.se)
    return np.array(diff), np.array(se)


@dataclass(frozen=True)
class ImprovementTable:
    """Percentage risk improvement of ``improved`` over ``base``.

    ``values[i, j]`` belongs to ``theta_grid[i]`` and ``designs[j]``.  With
    ``relative_to="improved"`` (the default) the risk reduction is divided
    by the improved estimator's risk, otherwise by the base estimator's.
    """

    base: EstimatorId
    improved: EstimatorId
    designs: tuple[tuple[int, int], ...]
    theta_grid: tuple[float, ...]
    values: np.ndarray
    relative_to: str
    replications: int
    seed: int

    def cell(self, theta: float, design: tuple[int, int]) -> float:
        return float(self.values[self.theta_grid.index(theta), self.designs.index(tuple(design))])


def improvement_table(base=EstimatorId.SINGLE_STAGE,
                      improved=EstimatorId.SINGLE_STAGE_IMPROVED,
                      designs=TABLE1_DESIGNS, theta_grid=TABLE1_THETAS,
                      replications: int = 1_000_000, seed: int = 0,
                      sigma: float = 1.0, relative_to: str = "improved",
                      threads: int | None = None) -> ImprovementTable:
    if relative_to not in ("improved", "base"):
        raise ValueError("relative_to must be 'improved' or 'base'")
    base, improved = EstimatorId(base), EstimatorId(improved)
    designs = tuple(tuple(int(v) for v in d) for d in designs)
    grid = tuple(float(t) for t in theta_grid)
    values = np.empty((len(grid), len(designs)))
    for j, (n1, n2) in enumerate(designs):
        curve = run_sweep(SweepConfig(TrialDesign(n1, n2, sigma), grid, replications, seed,
                                      (base, improved), True), threads)
        m0, m1 = curve.mse[:, 0], curve.mse[:, 1]
        values[:, j] = 100.0 * (m0 - m1) / (m1 if relative_to == "improved" else m0)
    return ImprovementTable(base, improved, designs, grid, values, relative_to,
                            replications, seed)


def figure_data(config: SweepConfig, designs=FIGURE_DESIGNS,
                threads: int | None = None) -> list[FigureRow]:
    """Long-format MSE and bias rows for every design, using ``config`` as
    the template for everything but (n1, n2)."""
    rows = []
    for n1, n2 in designs:
        cfg = replace(config, design=TrialDesign(n1, n2, config.design.sigma))
        rows.extend(run_sweep(cfg, threads).rows())
    return rows


def figure_config(replications: int = 1_000_000, seed: int = 0,
                  sigma: float = 1.0) -> SweepConfig:
    """The sweep behind the risk and bias figures for design (5, 5)."""
    return SweepConfig(TrialDesign(5, 5, sigma), FIGURE_THETAS, replications, seed,
                       FIGURE_ESTIMATORS, True)
