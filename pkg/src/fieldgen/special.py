"""Special-function helpers shared by the spectral and covariance layers.

Everything here is deterministic and pure: Legendre polynomials by the
three-term recurrence, Bessel J zeros by bracketed root refinement, real
spherical harmonics, and a machine-accurate evaluation of the lacunary
cosine series sum_{k>=1} (1 - cos(k*theta)) / k^s that circle covariances
reduce to.
"""

from __future__ import annotations

from functools import lru_cache
from math import factorial, pi

import numpy as np
from scipy.optimize import brentq
from scipy.special import gamma, gammaln, jv, lpmv, zeta

__all__ = [
    "legendre_p",
    "bessel_zeros",
    "one_minus_cos_series",
    "cos_power_series",
    "real_sph_harm",
    "sph_harm_block",
]


def legendre_p(k: int, x):
    """Legendre polynomial P_k evaluated by the three-term recurrence.

    Parameters
    ----------
    k : int
        Degree, k >= 0.
    x : float or ndarray
        Abscissae in [-1, 1] (a 1e-12 round-off overhang is clipped).
    """
    if k < 0:
        raise ValueError("legendre_p: degree must be nonnegative")
    x = np.asarray(x, dtype=float)
    if np.any(np.abs(x) > 1.0 + 1e-12):
        raise ValueError("legendre_p: abscissa outside [-1, 1]")
    x = np.clip(x, -1.0, 1.0)
    if k == 0:
        return np.ones_like(x) if x.ndim else 1.0
    pk_minus = np.ones_like(x)
    pk = x.copy()
    for n in range(1, k):
        pk, pk_minus = ((2 * n + 1) * x * pk - n * pk_minus) / (n + 1), pk
    return pk if x.ndim else float(pk)


def bessel_zeros(order: int, count: int, rtol: float = 1e-12) -> np.ndarray:
    """First `count` positive zeros of J_order, ascending.

    Brackets are found by scanning J for sign changes starting just above
    the order (the first zero of J_k lies in (k, k + 2k^{1/3} + 3)), then
    refined with brentq until the residual satisfies |J(x)| <= rtol * scale.
    """
    if order < 0 or count < 1:
        raise ValueError("bessel_zeros: need order >= 0 and count >= 1")
    zeros = []
    # step must stay below the minimal zero spacing, which is > pi/2 for all orders
    step = 1.0
    x = max(order, 1e-6)
    f_prev = jv(order, x)
    while len(zeros) < count:
        x_next = x + step
        f_next = jv(order, x_next)
        if f_prev == 0.0:
            zeros.append(x)
        elif f_prev * f_next < 0.0:
            root = brentq(lambda u: jv(order, u), x, x_next, xtol=1e-14, rtol=8.9e-16)
            zeros.append(root)
        x, f_prev = x_next, f_next
    out = np.array(zeros[:count])
    # envelope of J decays like sqrt(2/(pi x)); residual measured against it
    scale = np.sqrt(2.0 / (pi * out))
    if np.any(np.abs(jv(order, out)) > rtol * scale):
        raise RuntimeError("bessel_zeros: refinement failed to meet residual target")
    if np.any(np.diff(out) <= 0):
        raise RuntimeError("bessel_zeros: zeros not strictly increasing")
    return out


@lru_cache(maxsize=64)
def _jonquiere_coeffs(s: float, terms: int = 26) -> tuple[float, tuple[float, ...]]:
    """Prefactor and Taylor coefficients of the periodic-zeta expansion at s."""
    # A(s) = Gamma(1-s) sin(pi s / 2) written pole-free on (1, 3)
    a = pi / (2.0 * np.cos(pi * s / 2.0) * gamma(s))
    coeffs = tuple(
        -((-1.0) ** m) * float(zeta(s - 2 * m)) / factorial(2 * m)
        for m in range(1, terms + 1)
    )
    return float(a), coeffs


def one_minus_cos_series(s: float, theta):
    """sum_{k>=1} (1 - cos(k*theta)) / k**s for s in (1, 3), any real theta.

    Evaluated through the Jonquiere expansion of Re Li_s(e^{i theta}), which
    is exact for |theta| <= pi; the angle is wrapped first. The expansion is
    pole-free across s = 2 because Gamma(1-s) sin(pi s/2) = pi/(2 cos(pi s/2)
    Gamma(s)).
    """
    if not 1.0 < s < 3.0:
        raise ValueError("one_minus_cos_series: exponent must lie in (1, 3)")
    th = np.abs(np.mod(np.asarray(theta, dtype=float) + pi, 2.0 * pi) - pi)
    a, coeffs = _jonquiere_coeffs(float(s))
    out = -a * th ** (s - 1.0)
    th2 = th * th
    p = np.ones_like(th)
    for c in coeffs:
        p = p * th2
        out = out + c * p
    return out if out.ndim else float(out)


def cos_power_series(s: float, theta):
    """sum_{k>=1} cos(k*theta) / k**s = zeta(s) - one_minus_cos_series(s, theta)."""
    return float(zeta(s)) - one_minus_cos_series(s, theta)


def _sph_norm(degree: int, order: int) -> float:
    # sqrt((2k+1)/(4pi) * (k-m)!/(k+m)!) via gammaln for large degrees
    return float(
        np.sqrt(
            (2 * degree + 1)
            / (4.0 * pi)
            * np.exp(gammaln(degree - order + 1) - gammaln(degree + order + 1))
        )
    )


def real_sph_harm(degree: int, order: int, unit_xyz: np.ndarray) -> np.ndarray:
    """Real orthonormal spherical harmonic on the unit sphere.

    order 0 is the zonal harmonic, positive orders carry cos(m*phi), negative
    orders sin(|m|*phi). Orthonormal w.r.t. the unit-sphere area measure.
    """
    if abs(order) > degree:
        raise ValueError("real_sph_harm: |order| exceeds degree")
    xyz = np.atleast_2d(np.asarray(unit_xyz, dtype=float))
    ct = np.clip(xyz[:, 2], -1.0, 1.0)
    phi = np.arctan2(xyz[:, 1], xyz[:, 0])
    m = abs(order)
    p = lpmv(m, degree, ct)
    n = _sph_norm(degree, m)
    if order == 0:
        vals = n * p
    elif order > 0:
        vals = np.sqrt(2.0) * n * p * np.cos(m * phi)
    else:
        vals = np.sqrt(2.0) * n * p * np.sin(m * phi)
    return vals if np.asarray(unit_xyz).ndim > 1 else float(vals[0])


def sph_harm_block(degree: int, unit_xyz: np.ndarray) -> np.ndarray:
    """All 2*degree+1 real harmonics of one degree, shape (2k+1, n).

    Row order is m = -degree .. degree.
    """
    xyz = np.atleast_2d(np.asarray(unit_xyz, dtype=float))
    return np.vstack(
        [real_sph_harm(degree, m, xyz) for m in range(-degree, degree + 1)]
    )
