"""Standard-normal primitives and deterministic Gaussian quadrature.

Everything here is vectorised over numpy arrays and returns numpy scalars
for scalar input.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy import special

SQRT_2PI = math.sqrt(2.0 * math.pi)
SQRT_2_OVER_PI = math.sqrt(2.0 / math.pi)

# Below this point the Mills ratio is evaluated through erfcx instead of
# phi/Phi, which underflows to 0/0 near z = -38.
_TAIL_SWITCH = -6.0


def _finite(z, name="z"):
    z = np.asarray(z, dtype=float)
    if not np.all(np.isfinite(z)):
        raise ValueError(f"{name} must be finite")
    return z


def _out(x):
    return x[()] if isinstance(x, np.ndarray) and x.ndim == 0 else x


def std_normal_pdf(z):
    z = _finite(z)
    return _out(np.exp(-0.5 * z * z) / SQRT_2PI)


def std_normal_cdf(z):
    """Phi(z), accurate to full relative precision in the lower tail."""
    z = _finite(z)
    return _out(special.ndtr(z))


def std_normal_logcdf(z):
    z = _finite(z)
    return _out(special.log_ndtr(z))


def inverse_mills(z):
    """phi(z) / Phi(z), stable for every finite z.

    For z below the tail switch the ratio is rewritten as
    sqrt(2/pi) / erfcx(-z/sqrt(2)), which cancels the common Gaussian factor
    analytically.
    """
    z = _finite(z)
    out = np.empty_like(z)
    tail = z < _TAIL_SWITCH
    body = ~tail
    zb = z[body]
    out[body] = np.exp(-0.5 * zb * zb) / SQRT_2PI / special.ndtr(zb)
    out[tail] = SQRT_2_OVER_PI / special.erfcx(-z[tail] / math.sqrt(2.0))
    return _out(out)


@dataclass(frozen=True)
class IdentityTriple:
    i0: float
    i1: float
    i2: float


def phi_phi_moments(a: float, b: float) -> IdentityTriple:
    """Closed forms of the three Gaussian integrals

    i0 = E[Phi(aZ + b)], i1 = E[Z phi(aZ + b)], i2 = E[Z^2 Phi(aZ + b)]

    for Z ~ N(0, 1).
    """
    a = float(_finite(a, "a"))
    b = float(_finite(b, "b"))
    s = math.sqrt(1.0 + a * a)
    h = b / s
    cdf = float(special.ndtr(h))
    pdf = math.exp(-0.5 * h * h) / SQRT_2PI
    i1 = -a * b / s**3 * pdf
    i2 = cdf - a * a * b / s**3 * pdf
    return IdentityTriple(cdf, i1, i2)


@dataclass(frozen=True)
class QuadratureSpec:
    """Node budget for the deterministic quadrature rules.

    ``node_count`` is the number of nodes per axis (per piece for the
    piecewise Gauss-Legendre rules); ``truncation_halfwidth`` is where
    standard-normal axes are cut off, in standard deviations.
    """

    node_count: int = 80
    truncation_halfwidth: float = 8.0

    def __post_init__(self):
        if int(self.node_count) != self.node_count or self.node_count < 16:
            raise ValueError("node_count must be an integer >= 16")
        if not self.truncation_halfwidth >= 8:
            raise ValueError("truncation_halfwidth must be >= 8")

    def doubled(self) -> "QuadratureSpec":
        return QuadratureSpec(2 * self.node_count, self.truncation_halfwidth)


def hermite_rule(n: int) -> tuple[np.ndarray, np.ndarray]:
    """Nodes and weights for E[f(Z)], Z ~ N(0, 1)."""
    t, w = np.polynomial.hermite.hermgauss(n)
    return math.sqrt(2.0) * t, w / math.sqrt(math.pi)


def legendre_rule(n: int) -> tuple[np.ndarray, np.ndarray]:
    return np.polynomial.legendre.leggauss(n)


def gauss_hermite_expect(f: Callable[..., np.ndarray], k: int,
                         spec: QuadratureSpec | None = None) -> float:
    """E[f(Z1, ..., Zk)] for independent standard normals, k in {1, 2, 3}.

    ``f`` is called once with k broadcastable arrays and must be vectorised.
    """
    if k not in (1, 2, 3):
        raise ValueError(f"dimension must be 1, 2 or 3, got {k}")
    spec = spec or QuadratureSpec()
    x, w = hermite_rule(spec.node_count)
    axes = []
    weight = np.ones((1,) * k)
    for i in range(k):
        shape = [1] * k
        shape[i] = -1
        axes.append(x.reshape(shape))
        weight = weight * w.reshape(shape)
    vals = np.broadcast_to(f(*axes), weight.shape)
    return float(np.sum(weight * vals))
