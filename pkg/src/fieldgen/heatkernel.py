"""Laplace-Beltrami spectra and heat kernels for the supported geometries.

Spectra are explicit: trigonometric modes on the circle and torus, real
spherical harmonics on the sphere, and Dirichlet Bessel modes on the disk.
Heat kernels are evaluated by whichever route is accurate at the requested
time: eigenfunction sums for moderate and large t, wrapped-Gaussian images on
the circle (and a boundary-image form on the disk) for small t, the exact
Gaussian on Euclidean space, factor products on the torus and cylinder, and
the hyperbolic-plane integral with the square-root denominator and the
s = rho + u^2 substitution that removes the endpoint singularity.

Kernel values report the method used, the number of terms, and an honest
bound on what was dropped. Values are strictly positive up to float
underflow at extreme separations.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from math import ceil, pi, sqrt

import numpy as np
from scipy.special import jv

from .manifolds import (
    Circle,
    Cylinder,
    Euclidean,
    FlatTorus,
    HyperbolicPlane,
    Manifold,
    Sphere2,
    UnitDisk,
    _arc_gap,
)
from .special import bessel_zeros, legendre_p, real_sph_harm

__all__ = [
    "SpectrumSlice",
    "KernelValue",
    "TruncationError",
    "UnsupportedOperation",
    "ComparisonGuardError",
    "spectrum",
    "spectrum_grouped",
    "heat_kernel",
    "heat_kernel_many",
    "kernel_profile",
    "small_time_ratio",
    "volume_quadrature",
    "legendre_p",
    "bessel_zeros",
]

TWO_PI = 2.0 * pi
K_MAX = 10**6
# spectral term with exponent below this is invisible at double precision
_EXP_CUTOFF = 42.0
# circle: switch to the image sum below this multiple of r^2
_CIRCLE_CROSSOVER = 0.05
# unit disk: spectral sum above, boundary-image Gaussian below (unit scale)
_DISK_CROSSOVER = 5e-3
_DISK_LAMBDA_MAX = _EXP_CUTOFF / _DISK_CROSSOVER

_GL20 = np.polynomial.legendre.leggauss(20)
_GL40 = np.polynomial.legendre.leggauss(40)


class TruncationError(RuntimeError):
    """Requested accuracy unreachable within the term budget."""

    def __init__(self, msg: str, bound: float):
        super().__init__(msg)
        self.bound = bound


class UnsupportedOperation(ValueError):
    """Operation undefined for this manifold kind (e.g. spectrum of R^d)."""


class ComparisonGuardError(ValueError):
    """Points exceed the guard distance for the Euclidean-comparison ratio."""


# ---------------------------------------------------------------------------
# spectra


@dataclass(frozen=True)
class SpectrumSlice:
    """First K Laplace-Beltrami modes of a compact kind, ascending.

    modes is a per-kind integer/float table, one row per eigenfunction:
      circle:     (frequency m, trig code)          code 0 const, 1 cos, 2 sin
      sphere2:    (degree l, order m)
      flat_torus: (m, n, code1, code2)
      unit_disk:  rows (order k, trig code) with the zero j_{k,l} in zeros
    group_ids marks eigenvalue-degeneracy groups; truncations that respect
    them keep every isometry argument exact at finite K.
    """

    manifold: Manifold
    eigenvalues: np.ndarray
    group_ids: np.ndarray
    modes: np.ndarray
    zeros: np.ndarray | None = None

    @property
    def K(self) -> int:
        return int(self.eigenvalues.size)

    def eigenfunction(self, k: int, x) -> float:
        if not 0 <= k < self.K:
            raise IndexError("eigenfunction index out of range")
        return float(self.eval_matrix(np.atleast_2d(np.asarray(x, float))[:1])[k, 0])

    def eval_matrix(self, points) -> np.ndarray:
        """Values phi_k(x_i) as a (K, n) array."""
        m = self.manifold
        pts = m.as_points(points)
        n = pts.shape[0]
        out = np.empty((self.K, n))
        if m.kind == "circle":
            theta = pts[:, 0]
            r = m.radius
            for row, (freq, code) in enumerate(self.modes):
                if code == 0:
                    out[row] = 1.0 / sqrt(TWO_PI * r)
                elif code == 1:
                    out[row] = np.cos(freq * theta) / sqrt(pi * r)
                else:
                    out[row] = np.sin(freq * theta) / sqrt(pi * r)
        elif m.kind == "sphere2":
            r = m.radius
            row = 0
            while row < self.K:
                deg = int(self.modes[row, 0])
                block = row
                while block < self.K and int(self.modes[block, 0]) == deg:
                    block += 1
                for rr in range(row, block):
                    order = int(self.modes[rr, 1])
                    out[rr] = real_sph_harm(deg, order, pts) / r
                row = block
        elif m.kind == "flat_torus":
            factors = ((m.r1, pts[:, 0]), (m.r2, pts[:, 1]))
            for row, (m1, m2, c1, c2) in enumerate(self.modes):
                vals = np.ones(n)
                for (freq, code), (rad, theta) in zip(((m1, c1), (m2, c2)), factors):
                    if code == 0:
                        vals = vals / sqrt(TWO_PI * rad)
                    elif code == 1:
                        vals = vals * np.cos(freq * theta) / sqrt(pi * rad)
                    else:
                        vals = vals * np.sin(freq * theta) / sqrt(pi * rad)
                out[row] = vals
        elif m.kind == "unit_disk":
            rho, theta = pts[:, 0], pts[:, 1]
            s = m.scale
            for row, (order, code) in enumerate(self.modes):
                j = self.zeros[row]
                order = int(order)
                radial = jv(order, j * rho)
                if order == 0:
                    norm = 1.0 / (sqrt(pi) * abs(jv(1, j)))
                    out[row] = norm * radial / s
                else:
                    norm = sqrt(2.0 / pi) / abs(jv(order + 1, j))
                    trig = np.cos(order * theta) if code == 1 else np.sin(order * theta)
                    out[row] = norm * radial * trig / s
        else:
            raise UnsupportedOperation(f"eval_matrix: unsupported kind {m.kind}")
        return out


def _group_by_value(lam: np.ndarray) -> np.ndarray:
    gid = np.zeros(lam.size, dtype=int)
    for i in range(1, lam.size):
        same = abs(lam[i] - lam[i - 1]) <= 1e-12 * (1.0 + abs(lam[i]))
        gid[i] = gid[i - 1] if same else gid[i - 1] + 1
    return gid


def _circle_table(m: Circle, count: int):
    rows = [(0.0, 0, 0)]
    freq = 1
    while len(rows) < count:
        lam = (freq / m.radius) ** 2
        rows.append((lam, freq, 1))
        rows.append((lam, freq, 2))
        freq += 1
    lam = np.array([r[0] for r in rows])
    modes = np.array([(r[1], r[2]) for r in rows], dtype=float)
    return lam, modes, None


def _sphere_table(m: Sphere2, count: int):
    lam_list, mode_list = [], []
    deg = 0
    while len(lam_list) < count:
        lam = deg * (deg + 1) / m.radius**2
        for order in range(-deg, deg + 1):
            lam_list.append(lam)
            mode_list.append((deg, order))
        deg += 1
    return np.array(lam_list), np.array(mode_list, dtype=float), None


def _torus_table(m: FlatTorus, count: int):
    lam_cap = (count / (pi * m.r1 * m.r2) + 4.0) * 1.6
    while True:
        rows = []
        m1_max = int(ceil(m.r1 * sqrt(lam_cap)))
        m2_max = int(ceil(m.r2 * sqrt(lam_cap)))
        for m1 in range(m1_max + 1):
            for m2 in range(m2_max + 1):
                lam = (m1 / m.r1) ** 2 + (m2 / m.r2) ** 2
                if lam > lam_cap:
                    continue
                c1s = (0,) if m1 == 0 else (1, 2)
                c2s = (0,) if m2 == 0 else (1, 2)
                for c1 in c1s:
                    for c2 in c2s:
                        rows.append((lam, m1, m2, c1, c2))
        if len(rows) >= count:
            rows.sort(key=lambda r: (r[0], r[1], r[2], r[3], r[4]))
            lam = np.array([r[0] for r in rows])
            modes = np.array([r[1:] for r in rows], dtype=float)
            return lam, modes, None
        lam_cap *= 1.6


def _disk_table(m: UnitDisk, count: int):
    lam_cap = (4.0 * count + 40.0) * 1.3   # Weyl: N(lam) ~ lam/4 on the unit disk
    while True:
        rows = []
        order = 0
        while True:
            # j_{k,1} >= k, so orders beyond sqrt(lam_cap) cannot contribute
            if order > sqrt(lam_cap) + 1:
                break
            est = max(1, int((sqrt(lam_cap) - order) / pi) + 2)
            zs = bessel_zeros(order, est)
            zs = zs[zs**2 <= lam_cap]
            if zs.size == 0 and order > 0:
                break
            for j in zs:
                if order == 0:
                    rows.append((float(j) ** 2, order, 0, float(j)))
                else:
                    rows.append((float(j) ** 2, order, 1, float(j)))
                    rows.append((float(j) ** 2, order, 2, float(j)))
            order += 1
        if len(rows) >= count:
            rows.sort(key=lambda r: (r[0], r[1], r[2]))
            lam = np.array([r[0] for r in rows]) / m.scale**2
            modes = np.array([(r[1], r[2]) for r in rows], dtype=float)
            zeros = np.array([r[3] for r in rows])
            return lam, modes, zeros
        lam_cap *= 1.5


@lru_cache(maxsize=32)
def _full_table(m: Manifold, count: int) -> SpectrumSlice:
    """Complete mode table with at least `count` rows (never truncated)."""
    if m.kind == "circle":
        lam, modes, zeros = _circle_table(m, count)
    elif m.kind == "sphere2":
        lam, modes, zeros = _sphere_table(m, count)
    elif m.kind == "flat_torus":
        lam, modes, zeros = _torus_table(m, count)
    elif m.kind == "unit_disk":
        lam, modes, zeros = _disk_table(m, count)
    else:
        raise UnsupportedOperation(
            f"spectrum: {m.kind} has no discrete Laplace-Beltrami spectrum here"
        )
    return SpectrumSlice(
        manifold=m,
        eigenvalues=lam,
        group_ids=_group_by_value(lam),
        modes=modes,
        zeros=zeros,
    )


def _slice_to(full: SpectrumSlice, K: int) -> SpectrumSlice:
    return SpectrumSlice(
        manifold=full.manifold,
        eigenvalues=full.eigenvalues[:K],
        group_ids=full.group_ids[:K],
        modes=full.modes[:K],
        zeros=None if full.zeros is None else full.zeros[:K],
    )


def spectrum(m: Manifold, K: int) -> SpectrumSlice:
    """First K modes, eigenvalues ascending with multiplicity."""
    if K < 1:
        raise ValueError("spectrum: K must be at least 1")
    if K > K_MAX:
        raise ValueError(f"spectrum: K exceeds the term cap {K_MAX}")
    return _slice_to(_full_table(m, K), K)


def spectrum_grouped(m: Manifold, K_min: int) -> SpectrumSlice:
    """Smallest slice with at least K_min modes ending on a degeneracy-group
    boundary, so truncated sums stay exactly isometry-equivariant."""
    full = _full_table(m, K_min)
    gid = full.group_ids
    K = K_min
    while K < gid.size and gid[K] == gid[K - 1]:
        K += 1
    return _slice_to(full, K)


# ---------------------------------------------------------------------------
# heat kernels


@dataclass(frozen=True)
class KernelValue:
    value: float
    method: str           # "closed-form" | "spectral" | "integral"
    K_used: int
    tail_bound: float

    def __float__(self):
        return self.value


def _circle_kernel(radius: float, dtheta, ts):
    """Vectorized circle kernel; returns (values, method, K_used, tail)."""
    ts = np.asarray(ts, float)
    dtheta = np.asarray(dtheta, float)
    gap = _arc_gap(dtheta, 0.0)
    out = np.zeros(np.broadcast(ts, gap).shape)
    small = np.broadcast_to(ts < _CIRCLE_CROSSOVER * radius**2, out.shape)
    meta = []
    if np.any(small):
        t = np.broadcast_to(ts, out.shape)[small]
        ds = np.broadcast_to(radius * gap, out.shape)[small]
        acc = np.zeros_like(t)
        for img in range(-3, 4):
            acc += np.exp(-((ds + TWO_PI * radius * img) ** 2) / (4.0 * t))
        out[small] = acc / np.sqrt(4.0 * pi * t)
        meta.append(("closed-form", 7, 0.0))
    if np.any(~small):
        t = np.broadcast_to(ts, out.shape)[~small]
        dth = np.broadcast_to(gap, out.shape)[~small]
        tau = t / radius**2
        kcount = int(ceil(sqrt(_EXP_CUTOFF / float(np.min(tau))))) + 2
        k = np.arange(1, kcount + 1)
        terms = np.exp(-np.outer(tau, k**2)) * np.cos(np.outer(dth, k))
        vals = (1.0 + 2.0 * terms.sum(axis=1)) / (TWO_PI * radius)
        out[~small] = vals
        tau_min = float(np.min(tau))
        tail = (
            np.exp(-((kcount + 1) ** 2) * tau_min)
            / max(1.0 - np.exp(-(2 * kcount + 3) * tau_min), 1e-300)
            / (pi * radius)
        )
        meta.append(("spectral", 2 * kcount + 1, tail))
    method = meta[0][0] if len(meta) == 1 else "spectral"
    k_used = max(x[1] for x in meta)
    tail = max(x[2] for x in meta)
    return out, method, k_used, tail


def _line_kernel(dx, ts):
    ts = np.asarray(ts, float)
    return np.exp(-np.asarray(dx, float) ** 2 / (4.0 * ts)) / np.sqrt(4.0 * pi * ts)


def _sphere_kernel(radius: float, cos_gamma: float, ts):
    """Grouped Legendre sum; cos_gamma scalar, ts vector."""
    ts = np.asarray(ts, float)
    tau = ts / radius**2
    tau_min = float(np.min(tau))
    # smallest degree L with L(L+1) tau_min beyond the double-precision cutoff
    L = int(ceil(0.5 * (-1.0 + sqrt(1.0 + 4.0 * _EXP_CUTOFF / tau_min)))) + 2
    L = min(L, 999)
    degrees = np.arange(L + 1)
    pvals = np.empty(L + 1)
    pvals[0] = 1.0
    if L >= 1:
        pvals[1] = cos_gamma
    for deg in range(1, L):
        pvals[deg + 1] = (
            (2 * deg + 1) * cos_gamma * pvals[deg] - deg * pvals[deg - 1]
        ) / (deg + 1)
    weights = (2.0 * degrees + 1.0) * np.exp(-np.outer(tau, degrees * (degrees + 1)))
    vals = weights @ pvals / (4.0 * pi * radius**2)
    a_next = (2 * L + 3) * np.exp(-(L + 1) * (L + 2) * tau_min)
    ratio = (2 * L + 5) / (2 * L + 3) * np.exp(-2.0 * (L + 2) * tau_min)
    tail = a_next / max(1.0 - ratio, 1e-16) / (4.0 * pi * radius**2)
    return vals, (L + 1) ** 2, tail


_DISK_SLICE: dict[str, SpectrumSlice] = {}


def _disk_unit_slice() -> SpectrumSlice:
    if "slice" not in _DISK_SLICE:
        count = int(_DISK_LAMBDA_MAX / 4.0 * 1.1) + 40
        base = UnitDisk()
        sl = _full_table(base, count)
        keep = int(np.searchsorted(sl.eigenvalues, _DISK_LAMBDA_MAX, side="right"))
        keep = max(keep, 1)
        _DISK_SLICE["slice"] = SpectrumSlice(
            manifold=base,
            eigenvalues=sl.eigenvalues[:keep],
            group_ids=sl.group_ids[:keep],
            modes=sl.modes[:keep],
            zeros=sl.zeros[:keep],
        )
    return _DISK_SLICE["slice"]


def _disk_image_unit(x, y, ts):
    """Flat-mirror image kernel on the unit disk, valid for small t.

    Returns (values, boundary-layer bound); the bound is the envelope of the
    curvature error of the straight-mirror reflection and explodes only when
    both points sit near the boundary at times close to the crossover.
    """
    ts = np.asarray(ts, float)
    xx = UnitDisk.chart_to_xy(x)[0]
    yy = UnitDisk.chart_to_xy(y)[0]
    direct = float(np.linalg.norm(xx - yy))
    image = _disk_mirror_distance(xx, yy)
    vals = (np.exp(-(direct**2) / (4 * ts)) - np.exp(-(image**2) / (4 * ts))) / (
        4.0 * pi * ts
    )
    dx_b = 1.0 - float(np.hypot(*xx))
    dy_b = 1.0 - float(np.hypot(*yy))
    tmax = float(np.max(ts)) if ts.size else _DISK_CROSSOVER
    bl = np.exp(-((dx_b + dy_b) ** 2) / (4.0 * tmax)) / (4.0 * pi * tmax)
    return np.maximum(vals, 0.0), float(bl)


def _disk_mirror_distance(xx, yy):
    """Symmetrized straight-mirror image separation for two xy points.

    Reflecting y and reflecting x give slightly different flat-mirror
    distances; the true absorbing kernel is symmetric, so the quadratic mean
    is used (it keeps the exponent exact to the same boundary-layer order and
    makes pinned combinations cancel identically).
    """

    def reflected(a, b):
        rho = float(np.hypot(*b))
        mb = b * ((2.0 - rho) / rho) if rho > 0 else np.array([2.0, 0.0])
        return float(np.sum((a - mb) ** 2))

    return sqrt(0.5 * (reflected(xx, yy) + reflected(yy, xx)))


def _disk_kernel_unit(x, y, ts):
    """Unit-scale disk kernel for chart points x, y; vectorized over ts."""
    ts = np.asarray(ts, float)
    out = np.zeros_like(ts)
    small = ts < _DISK_CROSSOVER
    meta = []
    if np.any(small):
        vals, bl = _disk_image_unit(x, y, ts[small])
        out[small] = vals
        meta.append(("closed-form", 2, bl))
    if np.any(~small):
        sl = _disk_unit_slice()
        t = ts[~small]
        phi = sl.eval_matrix(np.stack([np.atleast_1d(np.asarray(x, float)).ravel(),
                                       np.atleast_1d(np.asarray(y, float)).ravel()]))
        pair = phi[:, 0] * phi[:, 1]
        out[~small] = np.exp(-np.outer(t, sl.eigenvalues)) @ pair
        lam_top = float(sl.eigenvalues[-1])
        tmin = float(np.min(t))
        tail = np.exp(-lam_top * tmin) * (
            sqrt(lam_top) / (4.0 * tmin) + 1.0 / (8.0 * tmin**1.5)
        )
        meta.append(("spectral", sl.K, float(tail)))
    method = meta[-1][0]
    k_used = max(x[1] for x in meta)
    tail = max(x[2] for x in meta)
    return out, method, k_used, tail


def _mckean_kernel(rho: float, ts):
    """Hyperbolic-plane kernel at unit scale via the u = sqrt(s - rho) grid.

    Integrand after s = rho + u^2: 2 s e^{-s^2/4t} sqrt(q(u) / sinh(rho + u^2/2))
    with q = (u^2/2)/sinh(u^2/2); the substitution absorbs the inverse
    square-root endpoint singularity. Error is estimated by comparing nested
    quadrature rules on the same grid.
    """
    ts = np.asarray(ts, float)
    tmax = float(np.max(ts))
    u_max = sqrt(max(sqrt(2980.0 * tmax) - rho, 0.0)) + 6.0 * tmax**0.25

    def integrand(u):
        u = np.asarray(u, float)
        s = rho + u**2
        half = np.maximum(u**2 / 2.0, 1e-300)
        # sinh(h)/h -> 1 holds to full precision directly for tiny h
        q = half / np.sinh(np.minimum(half, 700.0))
        den = np.sinh(np.minimum(rho + half, 700.0))
        root = np.sqrt(q / den)
        # exp(s^2/4t) under/overflow: keep as matrix over (t, u)
        expo = np.exp(-np.outer(1.0 / (4.0 * ts), s**2))
        return (2.0 * s * root) * expo

    x20, w20 = _GL20
    x40, w40 = _GL40
    edges = np.linspace(0.0, u_max, 7)
    acc40 = np.zeros_like(ts)
    acc20 = np.zeros_like(ts)
    nodes = 0
    for a, b in zip(edges[:-1], edges[1:]):
        half = 0.5 * (b - a)
        mid = 0.5 * (a + b)
        acc20 += half * (integrand(mid + half * x20) @ w20)
        acc40 += half * (integrand(mid + half * x40) @ w40)
        nodes += 60
    pref = sqrt(2.0) * np.exp(-ts / 4.0) / (4.0 * pi * ts) ** 1.5
    vals = pref * acc40
    err = float(np.max(np.abs(pref * (acc40 - acc20))))
    return vals, nodes, err


def kernel_profile(m: Manifold, x, y):
    """Vectorized map ts -> H_t(x, y) for a fixed point pair.

    The covariance quadrature calls this inside its panels; metadata is
    dropped for speed (heat_kernel reports it for scalar queries).
    """
    if m.kind == "euclidean":
        rho = float(m.distance(x, y))
        d = m.dim

        def f(ts):
            ts = np.asarray(ts, float)
            return np.exp(-(rho**2) / (4.0 * ts)) / (4.0 * pi * ts) ** (d / 2.0)

        return f
    if m.kind == "circle":
        dth = float(np.atleast_1d(np.asarray(x, float)).ravel()[0]
                    - np.atleast_1d(np.asarray(y, float)).ravel()[0])

        def f(ts):
            return _circle_kernel(m.radius, dth, ts)[0]

        return f
    if m.kind == "sphere2":
        xs = m.as_points(x)[0]
        ys = m.as_points(y)[0]
        cg = float(np.clip(np.dot(xs, ys), -1.0, 1.0))

        def f(ts):
            return _sphere_kernel(m.radius, cg, ts)[0]

        return f
    if m.kind == "flat_torus":
        xs, ys = m.as_points(x)[0], m.as_points(y)[0]
        d1, d2 = float(xs[0] - ys[0]), float(xs[1] - ys[1])

        def f(ts):
            return (
                _circle_kernel(m.r1, d1, ts)[0] * _circle_kernel(m.r2, d2, ts)[0]
            )

        return f
    if m.kind == "cylinder":
        xs, ys = m.as_points(x)[0], m.as_points(y)[0]
        dth, dx = float(xs[0] - ys[0]), float(xs[1] - ys[1])
        s2 = m.scale**2

        def f(ts):
            tp = np.asarray(ts, float) / s2
            return _circle_kernel(m.radius, dth, tp)[0] * _line_kernel(dx, tp) / s2

        return f
    if m.kind == "unit_disk":
        xs, ys = m.as_points(x)[0], m.as_points(y)[0]
        s2 = m.scale**2

        def f(ts):
            tp = np.asarray(ts, float) / s2
            return _disk_kernel_unit(xs, ys, tp)[0] / s2

        return f
    if m.kind == "hyperbolic_plane":
        rho = float(m.distance(x, y)) / m.scale
        s2 = m.scale**2

        def f(ts):
            tp = np.asarray(ts, float) / s2
            return _mckean_kernel(rho, tp)[0] / s2

        return f
    raise UnsupportedOperation(f"heat kernel: unsupported kind {m.kind}")


def heat_kernel(m: Manifold, t: float, x, y) -> KernelValue:
    """H_t(x, y) with method and truncation metadata."""
    if not t > 0:
        raise ValueError("heat_kernel: t must be positive")
    ts = np.array([float(t)])
    if m.kind == "euclidean":
        rho = float(m.distance(x, y))
        val = float(np.exp(-(rho**2) / (4.0 * t)) / (4.0 * pi * t) ** (m.dim / 2.0))
        return KernelValue(val, "closed-form", 0, 0.0)
    if m.kind == "circle":
        dth = float(np.atleast_1d(np.asarray(x, float)).ravel()[0]
                    - np.atleast_1d(np.asarray(y, float)).ravel()[0])
        vals, method, k, tail = _circle_kernel(m.radius, dth, ts)
        return _finish_kernel(float(vals[0]), method, k, tail)
    if m.kind == "sphere2":
        xs, ys = m.as_points(x)[0], m.as_points(y)[0]
        cg = float(np.clip(np.dot(xs, ys), -1.0, 1.0))
        vals, k, tail = _sphere_kernel(m.radius, cg, ts)
        return _finish_kernel(float(vals[0]), "spectral", k, tail)
    if m.kind == "flat_torus":
        xs, ys = m.as_points(x)[0], m.as_points(y)[0]
        v1, me1, k1, tb1 = _circle_kernel(m.r1, float(xs[0] - ys[0]), ts)
        v2, me2, k2, tb2 = _circle_kernel(m.r2, float(xs[1] - ys[1]), ts)
        val = float(v1[0] * v2[0])
        tail = abs(v1[0]) * tb2 + abs(v2[0]) * tb1 + tb1 * tb2
        method = "closed-form" if me1 == me2 == "closed-form" else "spectral"
        return _finish_kernel(val, method, k1 + k2, tail)
    if m.kind == "cylinder":
        xs, ys = m.as_points(x)[0], m.as_points(y)[0]
        tp = ts / m.scale**2
        v1, method, k1, tb1 = _circle_kernel(m.radius, float(xs[0] - ys[0]), tp)
        v2 = _line_kernel(float(xs[1] - ys[1]), tp)
        val = float(v1[0] * v2[0]) / m.scale**2
        return _finish_kernel(val, method, k1 + 1, float(abs(v2[0]) * tb1) / m.scale**2)
    if m.kind == "unit_disk":
        xs, ys = m.as_points(x)[0], m.as_points(y)[0]
        tp = ts / m.scale**2
        vals, method, k, tail = _disk_kernel_unit(xs, ys, tp)
        return _finish_kernel(float(vals[0]) / m.scale**2, method, k, tail / m.scale**2)
    if m.kind == "hyperbolic_plane":
        rho = float(m.distance(x, y)) / m.scale
        tp = ts / m.scale**2
        vals, nodes, err = _mckean_kernel(rho, tp)
        return _finish_kernel(float(vals[0]) / m.scale**2, "integral", nodes, err / m.scale**2)
    raise UnsupportedOperation(f"heat kernel: unsupported kind {m.kind}")


def _finish_kernel(value: float, method: str, k: int, tail: float) -> KernelValue:
    if k > K_MAX:
        raise TruncationError("heat kernel: term budget exceeded", tail)
    if tail > max(1e-9 * abs(value), 1e-280):
        raise TruncationError(
            f"heat kernel: truncation bound {tail:.3e} too large for value {value:.3e}",
            tail,
        )
    return KernelValue(value, method, k, tail)


def heat_kernel_many(m: Manifold, t: float, x, ys) -> np.ndarray:
    """H_t(x, y_i) over a batch of second arguments (volume integrals use it)."""
    if not t > 0:
        raise ValueError("heat_kernel_many: t must be positive")
    ts = np.array([float(t)])
    pts = m.as_points(ys)
    if m.kind == "circle":
        x0 = float(np.atleast_1d(np.asarray(x, float)).ravel()[0])
        return _circle_kernel(m.radius, x0 - pts[:, 0], ts)[0]
    if m.kind == "sphere2":
        xs = m.as_points(x)[0]
        cg = np.clip(pts @ xs, -1.0, 1.0)
        tau = float(t) / m.radius**2
        L = int(ceil(0.5 * (-1.0 + sqrt(1.0 + 4.0 * _EXP_CUTOFF / tau)))) + 2
        L = min(L, 999)
        prev = np.ones_like(cg)
        cur = cg.copy()
        acc = prev + 3.0 * np.exp(-2.0 * tau) * cur
        for deg in range(1, L):
            nxt = ((2 * deg + 1) * cg * cur - deg * prev) / (deg + 1)
            acc += (2 * deg + 3) * np.exp(-(deg + 1) * (deg + 2) * tau) * nxt
            prev, cur = cur, nxt
        return acc / (4.0 * pi * m.radius**2)
    if m.kind == "flat_torus":
        xs = m.as_points(x)[0]
        v1 = _circle_kernel(m.r1, xs[0] - pts[:, 0], ts)[0]
        v2 = _circle_kernel(m.r2, xs[1] - pts[:, 1], ts)[0]
        return v1 * v2
    if m.kind == "unit_disk":
        xs = m.as_points(x)[0]
        tp = float(t) / m.scale**2
        if tp >= _DISK_CROSSOVER:
            sl = _disk_unit_slice()
            # unit-scale eigenfunctions; two 1/scale factors total
            phi_x = sl.eval_matrix(xs[None, :])[:, 0]
            phi_y = sl.eval_matrix(pts)
            w = np.exp(-tp * sl.eigenvalues)
            return ((w * phi_x) @ phi_y) / m.scale**2
        out = np.empty(pts.shape[0])
        for i in range(pts.shape[0]):
            out[i] = _disk_kernel_unit(xs, pts[i], np.array([tp]))[0][0] / m.scale**2
        return out
    raise UnsupportedOperation(f"heat_kernel_many: unsupported kind {m.kind}")


def small_time_ratio(m: Manifold, t: float, x, y) -> float:
    """Ratio of H_t(x,y) to the Euclidean comparison Gaussian at distance d(x,y)."""
    if not t > 0:
        raise ValueError("small_time_ratio: t must be positive")
    dist = float(m.distance(x, y))
    guard = float(m.comparison_guard(x, y))
    if dist > guard:
        raise ComparisonGuardError(
            f"small_time_ratio: distance {dist:.4g} exceeds guard {guard:.4g}"
        )
    euclid = np.exp(-(dist**2) / (4.0 * t)) / (4.0 * pi * t) ** (m.dim / 2.0)
    return float(heat_kernel(m, t, x, y).value / euclid)


# ---------------------------------------------------------------------------
# deterministic volume lattices (semigroup / completeness checks)


def volume_quadrature(m: Manifold, resolution: int):
    """Lattice (points, weights) integrating smooth functions over dV."""
    if resolution < 2:
        raise ValueError("volume_quadrature: resolution too small")
    if m.kind == "circle":
        theta = TWO_PI * np.arange(resolution) / resolution
        w = np.full(resolution, m.volume / resolution)
        return theta[:, None], w
    if m.kind == "sphere2":
        zs, zw = np.polynomial.legendre.leggauss(resolution)
        phis = TWO_PI * np.arange(2 * resolution) / (2 * resolution)
        z, ph = np.meshgrid(zs, phis, indexing="ij")
        sin = np.sqrt(np.maximum(1.0 - z**2, 0.0))
        pts = np.stack([sin * np.cos(ph), sin * np.sin(ph), z], axis=-1).reshape(-1, 3)
        w = (np.outer(zw, np.full(2 * resolution, TWO_PI / (2 * resolution)))
             * m.radius**2).ravel()
        return pts, w
    if m.kind == "flat_torus":
        a = TWO_PI * np.arange(resolution) / resolution
        t1, t2 = np.meshgrid(a, a, indexing="ij")
        pts = np.stack([t1, t2], axis=-1).reshape(-1, 2)
        w = np.full(pts.shape[0], m.volume / pts.shape[0])
        return pts, w
    if m.kind == "unit_disk":
        rs, rw = np.polynomial.legendre.leggauss(resolution)
        rho = 0.5 * (rs + 1.0)
        thetas = TWO_PI * np.arange(2 * resolution) / (2 * resolution)
        rr, tt = np.meshgrid(rho, thetas, indexing="ij")
        pts = np.stack([rr, tt], axis=-1).reshape(-1, 2)
        w = (np.outer(0.5 * rw * rho, np.full(2 * resolution, TWO_PI / (2 * resolution)))
             * m.scale**2).ravel()
        return pts, w
    raise UnsupportedOperation(f"volume_quadrature: unsupported kind {m.kind}")
