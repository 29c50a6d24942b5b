"""Two-arm drop-the-losers design: configuration, observations, reduction.

Observation and statistics containers accept numpy arrays in every numeric
field so that the estimators, the quadrature oracles and the Monte Carlo
engine all run through one code path.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import special


@dataclass(frozen=True)
class TrialDesign:
    n1: int
    n2: int
    sigma: float = 1.0

    def __post_init__(self):
        for name in ("n1", "n2"):
            v = getattr(self, name)
            if int(v) != v or v < 1:
                raise ValueError(f"{name} must be a positive integer, got {v!r}")
        if not (math.isfinite(self.sigma) and self.sigma > 0):
            raise ValueError(f"sigma must be positive, got {self.sigma!r}")

    @property
    def w(self) -> float:
        """Weight of the stage-1 mean in the pooled selected-arm mean."""
        return self.n1 / (self.n1 + self.n2)

    @property
    def kappa(self) -> float:
        return math.sqrt(self.n1 / (self.n2 * (self.n1 + self.n2)))

    @property
    def sigma1(self) -> float:
        """Conditional sd of the winner's stage-1 mean given T1."""
        return self.sigma * math.sqrt(self.n2 / (self.n1 * (self.n1 + self.n2)))


@dataclass(frozen=True)
class ParameterPoint:
    mu1: float
    mu2: float

    @property
    def theta1(self) -> float:
        return min(self.mu1, self.mu2)

    @property
    def theta2(self) -> float:
        return max(self.mu1, self.mu2)

    @property
    def theta(self) -> float:
        return self.theta2 - self.theta1

    @classmethod
    def from_gap(cls, theta: float, location: float = 0.0) -> "ParameterPoint":
        if theta < 0:
            raise ValueError("theta must be nonnegative")
        return cls(location, location + theta)


def select_arm(xbar1, xbar2):
    """Index of the arm carried into stage 2; ties go to arm 1."""
    x1 = np.asarray(xbar1, dtype=float)
    x2 = np.asarray(xbar2, dtype=float)
    if not (np.all(np.isfinite(x1)) and np.all(np.isfinite(x2))):
        raise ValueError("stage-1 means must be finite")
    s = np.where(x1 >= x2, 1, 2)
    return int(s) if s.ndim == 0 else s


@dataclass(frozen=True)
class TwoStageObservation:
    xbar1: float
    xbar2: float
    selected: int
    ybar: float

    @classmethod
    def from_means(cls, xbar1, xbar2, ybar) -> "TwoStageObservation":
        return cls(xbar1, xbar2, select_arm(xbar1, xbar2), ybar)

    def swapped(self) -> "TwoStageObservation":
        """Same data with the arm labels exchanged."""
        return TwoStageObservation.from_means(self.xbar2, self.xbar1, self.ybar)

    def shifted(self, b) -> "TwoStageObservation":
        return TwoStageObservation(
            np.add(self.xbar1, b), np.add(self.xbar2, b), self.selected, np.add(self.ybar, b)
        )


@dataclass(frozen=True)
class SufficientStatistics:
    xbar_s: float
    xbar_loser: float
    d1: float
    d2: float
    t1: float
    t2: float
    q: float
    w: float


def reduce(design: TrialDesign, obs: TwoStageObservation) -> SufficientStatistics:
    x1 = np.asarray(obs.xbar1, dtype=float)
    x2 = np.asarray(obs.xbar2, dtype=float)
    expected = np.where(x1 >= x2, 1, 2)
    if np.any(np.asarray(obs.selected) != expected):
        raise ValueError("selected index is inconsistent with the stage-1 means")
    n1, n2 = design.n1, design.n2
    xs = np.maximum(x1, x2)
    xl = np.minimum(x1, x2)
    y = np.asarray(obs.ybar, dtype=float)
    d1 = xl - xs
    d2 = y - xs
    t1 = (n1 * xs + n2 * y) / (n1 + n2)
    q = design.kappa * (n2 * d2 - (n1 + n2) * d1) / design.sigma
    return SufficientStatistics(
        _o(xs), _o(xl), _o(d1), _o(d2), _o(t1), _o(xl), _o(q), design.w
    )


def _o(x):
    return x[()] if x.ndim == 0 else x


# --- random streams -------------------------------------------------------
#
# Every replication owns one Philox block (four 64-bit words) addressed by
# its index, so a replication's draws do not depend on how the replication
# range is partitioned.  Word 0 drives arm 1, word 1 arm 2, word 2 the
# stage-2 mean; word 3 is unused.

WORDS_PER_REPLICATION = 4


def stream_key(seed: int, *path: int) -> np.ndarray:
    return np.random.SeedSequence([int(seed) & (2**64 - 1), *map(int, path)]).generate_state(
        2, np.uint64
    )


def standard_normal_block(key: np.ndarray, start: int, count: int) -> np.ndarray:
    """Normals for replications [start, start + count), shape (count, 3)."""
    gen = np.random.Philox(key=key, counter=int(start))
    raw = gen.random_raw(WORDS_PER_REPLICATION * count).reshape(count, WORDS_PER_REPLICATION)
    u = ((raw[:, :3] >> np.uint64(11)).astype(float) + 0.5) * 2.0**-53
    return special.ndtri(u)


def observations_from_normals(design: TrialDesign, truth: ParameterPoint,
                              z: np.ndarray) -> TwoStageObservation:
    tau = design.sigma / math.sqrt(design.n1)
    x1 = truth.mu1 + tau * z[..., 0]
    x2 = truth.mu2 + tau * z[..., 1]
    s = select_arm(x1, x2)
    mu_s = np.where(np.asarray(s) == 1, truth.mu1, truth.mu2)
    y = mu_s + design.sigma / math.sqrt(design.n2) * z[..., 2]
    return TwoStageObservation(_o(np.asarray(x1)), _o(np.asarray(x2)), s, _o(np.asarray(y)))


def sample_observation(design: TrialDesign, truth: ParameterPoint,
                       key: np.ndarray, index: int = 0) -> TwoStageObservation:
    """Draw replication ``index`` of the stream identified by ``key``."""
    z = standard_normal_block(key, index, 1)[0]
    return observations_from_normals(design, truth, z)


def sample_observations(design: TrialDesign, truth: ParameterPoint,
                        key: np.ndarray, start: int, count: int) -> TwoStageObservation:
    return observations_from_normals(design, truth, standard_normal_block(key, start, count))


def selected_mean(truth: ParameterPoint, obs: TwoStageObservation):
    return np.where(np.asarray(obs.selected) == 1, truth.mu1, truth.mu2)
