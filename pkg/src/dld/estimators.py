"""Estimators of the selected arm's mean.

Every estimator here is location and permutation equivariant, i.e. of the
form ``t1 + psi(d1, d2)``.  Functions accept scalar or array-valued
observations.
"""

from __future__ import annotations

import enum
from typing import Callable

import numpy as np
from scipy import special

from .kernel import SQRT_2PI, inverse_mills
from .model import SufficientStatistics, TrialDesign, TwoStageObservation, reduce

EquivariantShift = Callable[[np.ndarray, np.ndarray], np.ndarray]


class EstimatorId(str, enum.Enum):
    MLE = "MLE"
    UMVCUE = "UMVCUE"
    UMVCUE_IMPROVED = "UMVCUE_IMPROVED"
    SINGLE_STAGE = "SINGLE_STAGE"
    SINGLE_STAGE_IMPROVED = "SINGLE_STAGE_IMPROVED"
    SINGLE_STAGE_RB = "SINGLE_STAGE_RB"
    DELTA1 = "DELTA1"

    @classmethod
    def parse(cls, tag: str) -> "EstimatorId":
        try:
            return cls(tag.strip().upper())
        except ValueError:
            raise ValueError(f"unknown estimator tag {tag!r}") from None


ALL_ESTIMATORS = tuple(EstimatorId)
FIGURE_ESTIMATORS = (
    EstimatorId.MLE,
    EstimatorId.UMVCUE,
    EstimatorId.UMVCUE_IMPROVED,
    EstimatorId.SINGLE_STAGE_RB,
    EstimatorId.DELTA1,
)

# Conventional symbols, for reports.
SYMBOLS = {
    EstimatorId.MLE: "delta_M",
    EstimatorId.UMVCUE: "delta_BG",
    EstimatorId.UMVCUE_IMPROVED: "delta_BG^I",
    EstimatorId.SINGLE_STAGE: "delta_0",
    EstimatorId.SINGLE_STAGE_IMPROVED: "delta_0^I",
    EstimatorId.SINGLE_STAGE_RB: "delta_0^RB",
    EstimatorId.DELTA1: "delta_1",
}


def _a(x):
    return np.asarray(x, dtype=float)


def _o(x):
    x = np.asarray(x)
    return x[()] if x.ndim == 0 else x


def psi_bg(design: TrialDesign) -> EquivariantShift:
    """Shift of the conditionally unbiased estimator."""
    n1, n2, s, k = design.n1, design.n2, design.sigma, design.kappa

    def psi(d1, d2):
        q = k * (n2 * _a(d2) - (n1 + n2) * _a(d1)) / s
        return -s * k * inverse_mills(q)

    return psi


def psi_single_stage(design: TrialDesign) -> EquivariantShift:
    """Shift that turns t1 back into the winner's stage-1 mean."""
    n1, n2 = design.n1, design.n2

    def psi(d1, d2):
        return -n2 * _a(d2) / (n1 + n2)

    return psi


def mle(stats: SufficientStatistics):
    return stats.t1


def umvcue(design: TrialDesign, stats: SufficientStatistics):
    return _o(_a(stats.t1) - design.sigma * design.kappa * inverse_mills(stats.q))


def pooled_mean(design: TrialDesign, obs: TwoStageObservation):
    n1, n2 = design.n1, design.n2
    return _o((n1 * (_a(obs.xbar1) + _a(obs.xbar2)) + n2 * _a(obs.ybar)) / (2 * n1 + n2))


def _pooling_shift(design: TrialDesign, stats: SufficientStatistics):
    """The shift under which t1 + shift is the pooled three-sample mean."""
    n1, n2 = design.n1, design.n2
    return n1 / (2 * n1 + n2) * (_a(stats.t2) - _a(stats.t1))


def improve_equivariant(delta: EquivariantShift, design: TrialDesign,
                        obs: TwoStageObservation):
    """Replace ``t1 + psi`` by the pooled mean wherever psi lies strictly
    beyond the pooling shift on the far side of zero."""
    stats = reduce(design, obs)
    psi = _a(delta(stats.d1, stats.d2))
    c = _pooling_shift(design, stats)
    swap = ((psi < c) & (c <= 0)) | ((0 <= c) & (c < psi))
    return _o(np.where(swap, pooled_mean(design, obs), _a(stats.t1) + psi))


def umvcue_improved(design: TrialDesign, obs: TwoStageObservation):
    """Conditionally unbiased estimator, pooled inside its improvement band.

    The band is  t2 <= t1 and (2 n1 + n2) sigma M(q) / sqrt(n1 n2 (n1+n2)) > t1 - t2
    with M the inverse Mills ratio.
    """
    n1, n2, s = design.n1, design.n2, design.sigma
    stats = reduce(design, obs)
    t1, t2 = _a(stats.t1), _a(stats.t2)
    psi = psi_bg(design)(stats.d1, stats.d2)
    width = -psi * (2 * n1 + n2) / n1
    band = (t2 <= t1) & (t1 - t2 < width)
    return _o(np.where(band, pooled_mean(design, obs), t1 + psi))


def single_stage(stats: SufficientStatistics):
    return stats.xbar_s


def single_stage_improved(design: TrialDesign, obs: TwoStageObservation):
    n1, n2 = design.n1, design.n2
    stats = reduce(design, obs)
    t1 = _a(stats.t1)
    psi = -n2 * _a(stats.d2) / (n1 + n2)
    c = n1 / (2 * n1 + n2) * (_a(stats.xbar_loser) - t1)
    swap = ((psi < c) & (c <= 0)) | ((0 <= c) & (c < psi))
    return _o(np.where(swap, pooled_mean(design, obs), t1 + psi))


def single_stage_rb(design: TrialDesign, stats: SufficientStatistics):
    """E[winner's stage-1 mean | t1, t2, S]: a normal centred at t1 with sd
    sigma1, truncated below at t2."""
    s1 = design.sigma1
    z = (_a(stats.t1) - _a(stats.t2)) / s1
    return _o(_a(stats.t1) + s1 * inverse_mills(z))


def delta1(design: TrialDesign, stats: SufficientStatistics):
    """E[single_stage_improved | t1, t2, S].

    For t1 > t2 with z = (t1 - t2)/sigma1 and a = n1 z / (2 n1 + n2) this is

        t1 + c (Phi(z) - Phi(a)) / Phi(z) + sigma1 phi(a) / Phi(z),

    c the pooling shift; otherwise the pooled mean.  Phi(z) >= 1/2 on that
    branch, so no tail ratio needs special handling.
    """
    n1, n2, s1 = design.n1, design.n2, design.sigma1
    t1, t2 = _a(stats.t1), _a(stats.t2)
    c = n1 / (2 * n1 + n2) * (t2 - t1)
    z = np.maximum(t1 - t2, 0.0) / s1
    a = n1 * z / (2 * n1 + n2)
    cdf_z = special.ndtr(z)
    # Phi(z) - Phi(a) via upper tails avoids cancellation for large z.
    gap = special.ndtr(-a) - special.ndtr(-z)
    upper = t1 + c * gap / cdf_z + s1 * np.exp(-0.5 * a * a) / SQRT_2PI / cdf_z
    return _o(np.where(t1 > t2, upper, t1 + c))


def estimate(tag: EstimatorId | str, design: TrialDesign, obs: TwoStageObservation):
    tag = EstimatorId.parse(tag) if isinstance(tag, str) else tag
    if not isinstance(tag, EstimatorId):
        raise ValueError(f"unknown estimator {tag!r}")
    stats = reduce(design, obs)
    if tag is EstimatorId.MLE:
        return mle(stats)
    if tag is EstimatorId.UMVCUE:
        return umvcue(design, stats)
    if tag is EstimatorId.UMVCUE_IMPROVED:
        return umvcue_improved(design, obs)
    if tag is EstimatorId.SINGLE_STAGE:
        return single_stage(stats)
    if tag is EstimatorId.SINGLE_STAGE_IMPROVED:
        return single_stage_improved(design, obs)
    if tag is EstimatorId.SINGLE_STAGE_RB:
        return single_stage_rb(design, stats)
    return delta1(design, stats)


def estimate_all(design: TrialDesign, obs: TwoStageObservation,
                 tags=ALL_ESTIMATORS) -> dict[EstimatorId, np.ndarray]:
    return {EstimatorId(t): estimate(t, design, obs) for t in tags}
