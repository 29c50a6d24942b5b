"""Closed-form distribution theory and deterministic risk oracles.

The risk and bias oracles integrate over the raw stage-1 and stage-2
means.  Each selection region is integrated separately, and inside a region
the stage-2 axis is split at every point where one of the estimators
jumps, so all seven estimators are integrated piecewise-smoothly with
Gauss-Legendre rules.  A plain tensor Gauss-Hermite rule cannot reach
1e-7 on integrands with these discontinuities.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy import integrate, optimize, special

from .estimators import ALL_ESTIMATORS, EstimatorId, estimate
from .kernel import (
    QuadratureSpec,
    inverse_mills,
    legendre_rule,
    std_normal_cdf,
    std_normal_pdf,
)
from .model import SufficientStatistics, TrialDesign, TwoStageObservation

CONVERGENCE_TOL = 1e-7
# Per-piece Gauss-Legendre nodes for the risk oracles; doubling moves every
# risk and bias by less than 1e-11 on the test grids.
RISK_SPEC = QuadratureSpec(48)


class QuadratureConvergenceError(RuntimeError):
    """Doubling the node count moved a quadrature result by more than the
    convergence tolerance."""


@dataclass(frozen=True)
class TheoryContext:
    design: TrialDesign
    theta: float

    def __post_init__(self):
        if not self.theta >= 0:
            raise ValueError("theta must be nonnegative")

    @property
    def sigma_star_sq(self) -> float:
        d = self.design
        return d.sigma**2 / (d.n1 + d.n2)

    @property
    def rho(self) -> float:
        d = self.design
        return d.n2 / (d.n1 + d.n2)


@dataclass(frozen=True)
class BayesPrior:
    m: float

    def __post_init__(self):
        if not self.m > 0:
            raise ValueError("prior scale m must be positive")


# --- densities and conditional moments ------------------------------------

def density_U(ctx: TheoryContext, u):
    """Density of U = t1 - mu_S."""
    d = ctx.design
    s_star = math.sqrt(ctx.sigma_star_sq)
    scale = math.sqrt(d.n1) / (d.sigma * math.sqrt(1 + ctx.rho))
    u = np.asarray(u, dtype=float)
    g = std_normal_cdf(scale * (u + ctx.theta)) + std_normal_cdf(scale * (u - ctx.theta))
    return g * std_normal_pdf(u / s_star) / s_star


def second_moment_U(ctx: TheoryContext) -> float:
    return ctx.sigma_star_sq


def _mixture(ctx: TheoryContext, d1, d2):
    """Weights, means and common sd of the two-component law of S1 | (d1, d2).

    S1 is the winner's stage-1 mean minus its true mean.
    """
    d = ctx.design
    n1, n2, s = d.n1, d.n2, d.sigma
    d1 = np.asarray(d1, dtype=float)
    d2 = np.asarray(d2, dtype=float)
    if np.any(d1 > 0):
        raise ValueError("d1 must be nonpositive")
    m = 2 * n1 + n2
    k = n1 * ctx.theta * ((n1 + n2) * d1 - n2 * d2) / (m * s * s)
    w_plus = special.expit(2 * k)
    mean_plus = -(n1 * d1 + n2 * d2 - n1 * ctx.theta) / m
    mean_minus = -(n1 * d1 + n2 * d2 + n1 * ctx.theta) / m
    return w_plus, mean_plus, mean_minus, s / math.sqrt(m), k


def cond_density_S1(ctx: TheoryContext, d1, d2, s):
    w_plus, mp, mm, sd, _ = _mixture(ctx, d1, d2)
    s = np.asarray(s, dtype=float)
    return (w_plus * std_normal_pdf((s - mp) / sd) + (1 - w_plus) * std_normal_pdf((s - mm) / sd)) / sd


def _s1_kernel(ctx: TheoryContext, d1: float, d2: float):
    """Unnormalised joint density of (S1, D1, D2) as a function of S1, with
    an integration window and break points."""
    d = ctx.design
    a1 = math.sqrt(d.n1) / d.sigma
    a2 = math.sqrt(d.n2) / d.sigma
    th = ctx.theta

    def kernel(t):
        t = np.asarray(t, dtype=float)
        loser = std_normal_pdf(a1 * (t + d1 - th)) + std_normal_pdf(a1 * (t + d1 + th))
        return loser * std_normal_pdf(a2 * (t + d2)) * std_normal_pdf(a1 * t)

    centre = -(d.n1 * d1 + d.n2 * d2) / (2 * d.n1 + d.n2)
    spread = 12 * d.sigma / math.sqrt(d.n1) + th
    return kernel, centre - spread, centre + spread, [centre - th, centre, centre + th]


def _quad(f, lo, hi, pts):
    return integrate.quad(f, lo, hi, points=pts, epsabs=0, epsrel=1e-12, limit=200)[0]


def cond_density_S1_direct(ctx: TheoryContext, d1: float, d2: float, s):
    """The same conditional density from the unnormalised joint density,
    normalised by adaptive quadrature.  Independent of the mixture form."""
    kernel, lo, hi, pts = _s1_kernel(ctx, d1, d2)
    return kernel(s) / _quad(kernel, lo, hi, pts)


def cond_moments_S1_direct(ctx: TheoryContext, d1: float, d2: float) -> tuple[float, float]:
    """(mean, variance) of S1 | (d1, d2) by quadrature of the unnormalised
    joint density."""
    kernel, lo, hi, pts = _s1_kernel(ctx, d1, d2)
    mass = _quad(kernel, lo, hi, pts)
    mean = _quad(lambda t: t * kernel(t), lo, hi, pts) / mass
    var = _quad(lambda t: (t - mean) ** 2 * kernel(t), lo, hi, pts) / mass
    return mean, var


def cond_expect_S1(ctx: TheoryContext, d1, d2):
    d = ctx.design
    _, _, _, _, k = _mixture(ctx, d1, d2)
    m = 2 * d.n1 + d.n2
    return d.n1 * ctx.theta / m * np.tanh(k) - (d.n1 * np.asarray(d1) + d.n2 * np.asarray(d2)) / m


def cond_var_S1(ctx: TheoryContext, d1, d2):
    d = ctx.design
    _, _, _, sd, k = _mixture(ctx, d1, d2)
    half_gap = d.n1 * ctx.theta / (2 * d.n1 + d.n2)
    e = np.exp(-2 * np.abs(k))
    return sd * sd + half_gap**2 * 4 * e / (1 + e) ** 2


def psi_theta(ctx: TheoryContext, d1, d2):
    """The shift minimising the conditional risk given (d1, d2) at this theta."""
    d = ctx.design
    return -cond_expect_S1(ctx, d1, d2) - d.n2 * np.asarray(d2) / (d.n1 + d.n2)


def pooling_bound(design: TrialDesign, d1, d2):
    n1, n2 = design.n1, design.n2
    return n1 * ((n1 + n2) * np.asarray(d1) - n2 * np.asarray(d2)) / ((n1 + n2) * (2 * n1 + n2))


def psi_bounds(design: TrialDesign, d1: float, d2: float) -> tuple[float, float]:
    """(inf, sup) of psi_theta(d1, d2) over theta >= 0."""
    if d1 > 0:
        raise ValueError("d1 must be nonpositive")
    b = float(pooling_bound(design, d1, d2))
    if d1 <= design.n2 * d2 / (design.n1 + design.n2):
        return b, math.inf
    return -math.inf, b


def conditional_risk_R1(ctx: TheoryContext, d1, d2, c):
    """E[(t1 + c - mu_S)^2 | (D1, D2) = (d1, d2)]."""
    d = ctx.design
    mean_u = cond_expect_S1(ctx, d1, d2) + d.n2 * np.asarray(d2) / (d.n1 + d.n2)
    return cond_var_S1(ctx, d1, d2) + (mean_u + np.asarray(c)) ** 2


def bayes_estimate(prior: BayesPrior, design: TrialDesign, stats: SufficientStatistics):
    n1, n2 = design.n1, design.n2
    ybar = np.asarray(stats.xbar_s) + np.asarray(stats.d2)
    return (n1 * np.asarray(stats.xbar_s) + n2 * ybar) / ((n1 + n2) + design.sigma**2 / prior.m**2)


def bayes_risk(prior: BayesPrior, design: TrialDesign) -> float:
    return 1.0 / ((design.n1 + design.n2) / design.sigma**2 + 1.0 / prior.m**2)


@lru_cache(maxsize=None)
def umvcue_pooling_threshold(n1: int, n2: int) -> float:
    """q* > 0 solving M(q) = n2 q / (2 n1 + n2), M the inverse Mills ratio.

    The improved conditionally unbiased estimator pools exactly when
    0 <= q < q*.
    """
    r = n2 / (2 * n1 + n2)
    return optimize.brentq(lambda q: float(inverse_mills(q)) - r * q, 0.0, 60.0, xtol=1e-15, rtol=1e-15)


# --- piecewise quadrature over the raw means -----------------------------

def _mapped(rule, lo, hi):
    t, w = rule
    half = 0.5 * (hi - lo)
    return half * t + 0.5 * (hi + lo), half * w


def _region_integrals(design: TrialDesign, mu_w: float, mu_l: float,
                      integrand, spec: QuadratureSpec, chunk: int = 8) -> np.ndarray:
    """Integrate ``integrand(obs)`` over the event that the arm with mean
    ``mu_w`` wins stage 1.

    ``integrand`` maps a vector of observations to a sequence of equally
    long arrays; one integral is returned per array.  The winner's arm is
    passed as arm 1.
    """
    n1, n2, sigma = design.n1, design.n2, design.sigma
    L = spec.truncation_halfwidth
    rule = legendre_rule(spec.node_count)
    tau = sigma / math.sqrt(n1)
    tau_y = sigma / math.sqrt(n2)
    gap = (mu_w - mu_l) / tau
    y_star = umvcue_pooling_threshold(n1, n2) * sigma / (design.kappa * n2)

    z1_all, w1_all = _mapped(rule, -L, L)
    totals = None
    for start in range(0, len(z1_all), chunk):
        z1 = z1_all[start:start + chunk, None]
        w1 = w1_all[start:start + chunk, None]
        hi = np.clip(z1 + gap, -L, L)
        z2, w2 = _mapped(rule, -L, hi)          # (c, n)
        x_w = mu_w + tau * z1
        x_l = mu_l + tau * z2
        y0 = ((n1 + n2) * x_l - n1 * x_w) / n2
        cuts = np.stack(np.broadcast_arrays(y0, y0 + y_star, ((n1 + n2) * x_w - n1 * x_l) / n2), -1)
        cuts = np.clip(np.sort((cuts - mu_w) / tau_y, axis=-1), -L, L)
        edges = np.concatenate([np.full(cuts.shape[:-1] + (1,), -L), cuts,
                                np.full(cuts.shape[:-1] + (1,), L)], -1)
        z3, w3 = _mapped(rule, edges[..., :-1, None], edges[..., 1:, None])  # (c, n, 4, n)
        weight = (w1 * std_normal_pdf(z1))[..., None, None] * (w2 * std_normal_pdf(z2))[..., None, None] \
            * w3 * std_normal_pdf(z3)
        shape = z3.shape
        xw = np.broadcast_to(x_w[..., None, None], shape).ravel()
        xl = np.broadcast_to(x_l[..., None, None], shape).ravel()
        y = (mu_w + tau_y * z3).ravel()
        obs = TwoStageObservation.from_means(xw, xl, y)
        part = np.asarray([np.sum(weight.ravel() * v) for v in integrand(obs)])
        totals = part if totals is None else totals + part
    return totals


def _moments_at(design, mu1, mu2, tags, spec):
    tags = [EstimatorId(t) for t in tags]
    out = {t: [0.0, 0.0] for t in tags}
    for mu_w, mu_l in ((mu1, mu2), (mu2, mu1)):
        def errors(obs, mu_w=mu_w):
            out = []
            for t in tags:
                e = estimate(t, design, obs) - mu_w
                out += [e, e * e]
            return out

        vals = _region_integrals(design, mu_w, mu_l, errors, spec)
        for i, t in enumerate(tags):
            out[t][0] += vals[2 * i]
            out[t][1] += vals[2 * i + 1]
    return {t: (m2, m1) for t, (m1, m2) in out.items()}


def risk_quadrature_at(design: TrialDesign, mu1: float, mu2: float, tags=ALL_ESTIMATORS,
                       spec: QuadratureSpec | None = None, check: bool = False):
    """{tag: (mse, bias)} at the parameter point (mu1, mu2)."""
    spec = spec or RISK_SPEC
    res = _moments_at(design, mu1, mu2, tags, spec)
    if check:
        fine = _moments_at(design, mu1, mu2, tags, spec.doubled())
        for t in res:
            shift = max(abs(a - b) for a, b in zip(res[t], fine[t]))
            if shift > CONVERGENCE_TOL:
                raise QuadratureConvergenceError(
                    f"{t.value}: doubling nodes moved the result by {shift:.3g}")
    return res


def risk_quadrature_all(design: TrialDesign, theta: float, tags=ALL_ESTIMATORS,
                        spec: QuadratureSpec | None = None, check: bool = False):
    """{tag: (mse, bias)} at mu = (0, theta)."""
    if not theta >= 0:
        raise ValueError("theta must be nonnegative")
    return risk_quadrature_at(design, 0.0, float(theta), tags, spec, check)


def risk_quadrature(design: TrialDesign, theta: float, tag: EstimatorId | str,
                    spec: QuadratureSpec | None = None, check: bool = False) -> tuple[float, float]:
    tag = EstimatorId.parse(tag) if isinstance(tag, str) else tag
    return risk_quadrature_all(design, theta, (tag,), spec, check)[tag]


def selection_probability(design: TrialDesign, mu1: float, mu2: float, arm: int) -> float:
    tau = design.sigma / math.sqrt(design.n1)
    diff = (mu1 - mu2) if arm == 1 else (mu2 - mu1)
    return float(std_normal_cdf(diff / (tau * math.sqrt(2))))


def conditional_bias_quadrature(design: TrialDesign, mu1: float, mu2: float,
                                tag: EstimatorId | str, arm: int,
                                spec: QuadratureSpec | None = None) -> float:
    """E[estimate | S = arm] - mu_arm."""
    if arm not in (1, 2):
        raise ValueError("arm must be 1 or 2")
    tag = EstimatorId.parse(tag) if isinstance(tag, str) else tag
    spec = spec or RISK_SPEC
    p = selection_probability(design, mu1, mu2, arm)
    if p <= 1e-12:
        raise ValueError(f"selection probability of arm {arm} vanishes ({p:.3g})")
    mu_w, mu_l = (mu1, mu2) if arm == 1 else (mu2, mu1)
    (val,) = _region_integrals(design, mu_w, mu_l,
                               lambda obs: [estimate(tag, design, obs) - mu_w], spec)
    return val / p


def pooling_region_probability(design: TrialDesign, theta: float, tag: EstimatorId | str,
                               spec: QuadratureSpec | None = None) -> float:
    """Probability that an improved estimator replaces its base by the pooled mean."""
    from .estimators import pooled_mean

    tag = EstimatorId.parse(tag) if isinstance(tag, str) else tag
    if tag not in (EstimatorId.UMVCUE_IMPROVED, EstimatorId.SINGLE_STAGE_IMPROVED):
        raise ValueError("only the two improved estimators have a pooling region")
    spec = spec or RISK_SPEC

    def indicator(obs):
        return (estimate(tag, design, obs) == pooled_mean(design, obs)).astype(float)

    total = 0.0
    for mu_w, mu_l in ((0.0, theta), (theta, 0.0)):
        total += _region_integrals(design, mu_w, mu_l, lambda obs: [indicator(obs)], spec)[0]
    return total
