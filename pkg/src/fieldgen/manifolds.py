"""Supported manifolds: charts, geodesic distances, isometries, scaling, sampling.

Seven kinds are supported. Chart conventions are fixed here once and used by
every other layer:

    euclidean         d real coordinates
    circle            angle in [0, 2pi), radius r
    sphere2           unit 3-vector (radius r enters through distances)
    flat_torus        two angles in [0, 2pi), radii r1, r2
    cylinder          (angle, real line coordinate), circle radius r
    unit_disk         polar (rho in [0, 1), angle), flat metric, Dirichlet boundary
    hyperbolic_plane  upper half-plane (x, y), y > 0, curvature -1

Kinds without an intrinsic size parameter (euclidean, cylinder, unit_disk,
hyperbolic_plane) carry a metric scale factor so that g -> c^2 g is
representable; the radius kinds absorb scaling into their radii.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from math import pi

import numpy as np

from .streams import rng_stream

__all__ = [
    "Euclidean",
    "Circle",
    "Sphere2",
    "FlatTorus",
    "Cylinder",
    "UnitDisk",
    "HyperbolicPlane",
    "EuclideanMotion",
    "CircleShift",
    "SphereRotation",
    "TorusShift",
    "CylinderMotion",
    "DiskRotation",
    "MoebiusMap",
    "geodesic_distance",
    "pairwise_distances",
    "apply_isometry",
    "scale_metric",
    "sample_points",
    "manifold_from_config",
]

TWO_PI = 2.0 * pi


def _wrap_angle(theta):
    """Wrap to [0, 2pi)."""
    return np.mod(theta, TWO_PI)


def _arc_gap(a, b):
    """Shorter angular separation |a - b| on the circle, in [0, pi]."""
    d = np.abs(np.mod(a - b + pi, TWO_PI) - pi)
    return d


class Manifold:
    """Base for all manifold kinds. Instances are immutable values."""

    kind = "?"
    dim = 0
    chart_dim = 0
    compactness = "?"

    # -- points ---------------------------------------------------------

    def as_points(self, pts) -> np.ndarray:
        """Normalize input to a validated (n, chart_dim) float array."""
        a = np.asarray(pts, dtype=float)
        if self.chart_dim == 1 and a.ndim <= 1:
            a = np.atleast_1d(a).reshape(-1, 1)
        elif a.ndim == 1:
            a = a.reshape(1, -1)
        if a.ndim != 2 or a.shape[1] != self.chart_dim:
            raise ValueError(
                f"{self.kind}: points must have {self.chart_dim} chart coordinates"
            )
        if not np.all(np.isfinite(a)):
            raise ValueError(f"{self.kind}: non-finite point coordinates")
        return self._validate(a)

    def _validate(self, a: np.ndarray) -> np.ndarray:
        return a

    # -- geometry -------------------------------------------------------

    def distance(self, x, y):
        """Geodesic distance; broadcasts over leading axes of (n, chart_dim) arrays."""
        raise NotImplementedError

    def comparison_guard(self, x, y) -> float:
        """Largest separation at which the Gaussian small-time comparison is valid."""
        return np.inf

    @property
    def volume(self) -> float:
        return np.inf

    def scaled(self, c: float) -> "Manifold":
        raise NotImplementedError

    def sample(self, n: int, seed: int, stratified: bool = False) -> np.ndarray:
        raise NotImplementedError

    def to_config(self) -> dict:
        raise NotImplementedError


def _check_scale(c) -> float:
    c = float(c)
    if not c > 0:
        raise ValueError("metric scale factor must be positive")
    return c


@dataclass(frozen=True)
class Euclidean(Manifold):
    dim: int = 2
    scale: float = 1.0

    kind = "euclidean"
    compactness = "non_compact"

    def __post_init__(self):
        if int(self.dim) < 1:
            raise ValueError("euclidean: dim must be >= 1")
        object.__setattr__(self, "dim", int(self.dim))
        _check_scale(self.scale)

    @property
    def chart_dim(self):
        return self.dim

    def distance(self, x, y):
        x, y = np.asarray(x, float), np.asarray(y, float)
        return self.scale * np.linalg.norm(np.atleast_2d(x - y), axis=-1).squeeze()

    def scaled(self, c):
        return replace(self, scale=self.scale * _check_scale(c))

    def sample(self, n, seed, stratified=False):
        # uniform in the unit ball of the chart (documented window)
        rng = rng_stream(seed, 0)
        v = rng.standard_normal((n, self.dim))
        v /= np.maximum(np.linalg.norm(v, axis=1, keepdims=True), 1e-300)
        radii = rng.random(n) ** (1.0 / self.dim)
        return v * radii[:, None]

    def to_config(self):
        cfg = {"kind": self.kind, "dim": self.dim}
        if self.scale != 1.0:
            cfg["scale"] = self.scale
        return cfg


@dataclass(frozen=True)
class Circle(Manifold):
    radius: float = 1.0

    kind = "circle"
    dim = 1
    chart_dim = 1
    compactness = "compact"

    def __post_init__(self):
        if not self.radius > 0:
            raise ValueError("circle: radius must be positive")

    def _validate(self, a):
        return _wrap_angle(a)

    def distance(self, x, y):
        x, y = np.asarray(x, float), np.asarray(y, float)
        return (self.radius * _arc_gap(x[..., 0] if x.ndim > 1 else x,
                                       y[..., 0] if y.ndim > 1 else y)).squeeze()

    def comparison_guard(self, x, y):
        return 0.5 * pi * self.radius

    @property
    def volume(self):
        return TWO_PI * self.radius

    def scaled(self, c):
        return Circle(radius=self.radius * _check_scale(c))

    def sample(self, n, seed, stratified=False):
        if stratified:
            return (TWO_PI * np.arange(n) / max(n, 1)).reshape(-1, 1)
        rng = rng_stream(seed, 0)
        return (TWO_PI * rng.random(n)).reshape(-1, 1)

    def to_config(self):
        return {"kind": self.kind, "radius": self.radius}


@dataclass(frozen=True)
class Sphere2(Manifold):
    radius: float = 1.0

    kind = "sphere2"
    dim = 2
    chart_dim = 3
    compactness = "compact"

    def __post_init__(self):
        if not self.radius > 0:
            raise ValueError("sphere2: radius must be positive")

    def _validate(self, a):
        norms = np.linalg.norm(a, axis=1)
        if np.any(np.abs(norms - 1.0) > 1e-6):
            raise ValueError("sphere2: points must be unit 3-vectors")
        return a / norms[:, None]

    def distance(self, x, y):
        x, y = np.asarray(x, float), np.asarray(y, float)
        dots = np.clip(np.sum(x * y, axis=-1), -1.0, 1.0)
        return (self.radius * np.arccos(dots)).squeeze()

    def comparison_guard(self, x, y):
        return 0.5 * pi * self.radius

    @property
    def volume(self):
        return 4.0 * pi * self.radius**2

    def scaled(self, c):
        return Sphere2(radius=self.radius * _check_scale(c))

    def sample(self, n, seed, stratified=False):
        rng = rng_stream(seed, 0)
        v = rng.standard_normal((n, 3))
        return v / np.linalg.norm(v, axis=1, keepdims=True)

    def to_config(self):
        return {"kind": self.kind, "radius": self.radius}


@dataclass(frozen=True)
class FlatTorus(Manifold):
    r1: float = 1.0
    r2: float = 1.0

    kind = "flat_torus"
    dim = 2
    chart_dim = 2
    compactness = "compact"

    def __post_init__(self):
        if not (self.r1 > 0 and self.r2 > 0):
            raise ValueError("flat_torus: radii must be positive")

    def _validate(self, a):
        return _wrap_angle(a)

    def distance(self, x, y):
        x, y = np.atleast_2d(np.asarray(x, float)), np.atleast_2d(np.asarray(y, float))
        d1 = self.r1 * _arc_gap(x[..., 0], y[..., 0])
        d2 = self.r2 * _arc_gap(x[..., 1], y[..., 1])
        return np.hypot(d1, d2).squeeze()

    def comparison_guard(self, x, y):
        return 0.5 * pi * min(self.r1, self.r2)

    @property
    def volume(self):
        return TWO_PI**2 * self.r1 * self.r2

    def scaled(self, c):
        c = _check_scale(c)
        return FlatTorus(r1=self.r1 * c, r2=self.r2 * c)

    def sample(self, n, seed, stratified=False):
        rng = rng_stream(seed, 0)
        return TWO_PI * rng.random((n, 2))

    def to_config(self):
        return {"kind": self.kind, "r1": self.r1, "r2": self.r2}


@dataclass(frozen=True)
class Cylinder(Manifold):
    radius: float = 1.0
    scale: float = 1.0

    kind = "cylinder"
    dim = 2
    chart_dim = 2
    compactness = "non_compact"

    def __post_init__(self):
        if not self.radius > 0:
            raise ValueError("cylinder: radius must be positive")
        _check_scale(self.scale)

    def _validate(self, a):
        out = a.copy()
        out[:, 0] = _wrap_angle(out[:, 0])
        return out

    def distance(self, x, y):
        x, y = np.atleast_2d(np.asarray(x, float)), np.atleast_2d(np.asarray(y, float))
        darc = self.radius * _arc_gap(x[..., 0], y[..., 0])
        dlin = x[..., 1] - y[..., 1]
        return (self.scale * np.hypot(darc, dlin)).squeeze()

    def comparison_guard(self, x, y):
        return 0.5 * pi * self.radius * self.scale

    def scaled(self, c):
        return replace(self, scale=self.scale * _check_scale(c))

    def sample(self, n, seed, stratified=False):
        # window: full circle x line segment |x| <= 1 (chart units)
        rng = rng_stream(seed, 0)
        out = np.empty((n, 2))
        out[:, 0] = TWO_PI * rng.random(n)
        out[:, 1] = 2.0 * rng.random(n) - 1.0
        return out

    def to_config(self):
        cfg = {"kind": self.kind, "radius": self.radius}
        if self.scale != 1.0:
            cfg["scale"] = self.scale
        return cfg


@dataclass(frozen=True)
class UnitDisk(Manifold):
    scale: float = 1.0

    kind = "unit_disk"
    dim = 2
    chart_dim = 2
    compactness = "regular_domain"

    def __post_init__(self):
        _check_scale(self.scale)

    def _validate(self, a):
        if np.any(a[:, 0] < 0) or np.any(a[:, 0] >= 1.0):
            raise ValueError("unit_disk: radial coordinate must lie in [0, 1)")
        out = a.copy()
        out[:, 1] = _wrap_angle(out[:, 1])
        return out

    @staticmethod
    def chart_to_xy(pts):
        pts = np.atleast_2d(np.asarray(pts, float))
        return np.stack(
            [pts[..., 0] * np.cos(pts[..., 1]), pts[..., 0] * np.sin(pts[..., 1])],
            axis=-1,
        )

    def distance(self, x, y):
        xx, yy = self.chart_to_xy(x), self.chart_to_xy(y)
        return (self.scale * np.linalg.norm(xx - yy, axis=-1)).squeeze()

    def comparison_guard(self, x, y):
        # Gaussian comparison holds while the boundary is farther than the pair gap
        rx = np.max(np.atleast_2d(np.asarray(x, float))[:, 0])
        ry = np.max(np.atleast_2d(np.asarray(y, float))[:, 0])
        return self.scale * max(1.0 - max(rx, ry), 0.0)

    @property
    def volume(self):
        return pi * self.scale**2

    def scaled(self, c):
        return replace(self, scale=self.scale * _check_scale(c))

    def sample(self, n, seed, stratified=False):
        rng = rng_stream(seed, 0)
        out = np.empty((n, 2))
        out[:, 0] = np.sqrt(rng.random(n))
        out[:, 1] = TWO_PI * rng.random(n)
        return out

    def to_config(self):
        cfg = {"kind": self.kind}
        if self.scale != 1.0:
            cfg["scale"] = self.scale
        return cfg


@dataclass(frozen=True)
class HyperbolicPlane(Manifold):
    scale: float = 1.0

    kind = "hyperbolic_plane"
    dim = 2
    chart_dim = 2
    compactness = "non_compact"

    def __post_init__(self):
        _check_scale(self.scale)

    def _validate(self, a):
        if np.any(a[:, 1] <= 0):
            raise ValueError("hyperbolic_plane: points need y > 0")
        return a

    def distance(self, x, y):
        x, y = np.atleast_2d(np.asarray(x, float)), np.atleast_2d(np.asarray(y, float))
        num = (x[..., 0] - y[..., 0]) ** 2 + (x[..., 1] - y[..., 1]) ** 2
        arg = 1.0 + num / (2.0 * x[..., 1] * y[..., 1])
        return (self.scale * np.arccosh(np.maximum(arg, 1.0))).squeeze()

    def scaled(self, c):
        return replace(self, scale=self.scale * _check_scale(c))

    def sample(self, n, seed, stratified=False):
        # window: [-1, 1] x [1/2, 2], weighted by the hyperbolic area dx dy / y^2
        rng = rng_stream(seed, 0)
        out = np.empty((n, 2))
        out[:, 0] = 2.0 * rng.random(n) - 1.0
        out[:, 1] = 1.0 / (2.0 - 1.5 * rng.random(n))
        return out

    def to_config(self):
        cfg = {"kind": self.kind}
        if self.scale != 1.0:
            cfg["scale"] = self.scale
        return cfg


# ---------------------------------------------------------------------------
# isometries


@dataclass(frozen=True)
class EuclideanMotion:
    matrix: tuple
    shift: tuple

    target_kind = "euclidean"

    def __post_init__(self):
        q = np.asarray(self.matrix, float)
        b = np.asarray(self.shift, float)
        if q.ndim != 2 or q.shape[0] != q.shape[1] or b.shape != (q.shape[0],):
            raise ValueError("euclidean motion: matrix/shift shapes inconsistent")
        if np.max(np.abs(q.T @ q - np.eye(q.shape[0]))) > 1e-10:
            raise ValueError("euclidean motion: matrix is not orthogonal")
        object.__setattr__(self, "matrix", tuple(map(tuple, q)))
        object.__setattr__(self, "shift", tuple(b))

    def apply(self, pts):
        q = np.asarray(self.matrix, float)
        return pts @ q.T + np.asarray(self.shift, float)


@dataclass(frozen=True)
class CircleShift:
    angle: float = 0.0
    reflect: bool = False

    target_kind = "circle"

    def apply(self, pts):
        th = -pts[:, 0] if self.reflect else pts[:, 0]
        return _wrap_angle(th + self.angle).reshape(-1, 1)


@dataclass(frozen=True)
class SphereRotation:
    matrix: tuple

    target_kind = "sphere2"

    def __post_init__(self):
        q = np.asarray(self.matrix, float)
        if q.shape != (3, 3) or np.max(np.abs(q.T @ q - np.eye(3))) > 1e-10:
            raise ValueError("sphere rotation: need a 3x3 orthogonal matrix")
        object.__setattr__(self, "matrix", tuple(map(tuple, q)))

    def apply(self, pts):
        return pts @ np.asarray(self.matrix, float).T

    @staticmethod
    def about_z(angle: float) -> "SphereRotation":
        c, s = np.cos(angle), np.sin(angle)
        return SphereRotation(((c, -s, 0.0), (s, c, 0.0), (0.0, 0.0, 1.0)))


@dataclass(frozen=True)
class TorusShift:
    shift1: float = 0.0
    shift2: float = 0.0
    reflect1: bool = False
    reflect2: bool = False

    target_kind = "flat_torus"

    def apply(self, pts):
        a = -pts[:, 0] if self.reflect1 else pts[:, 0]
        b = -pts[:, 1] if self.reflect2 else pts[:, 1]
        return np.stack([_wrap_angle(a + self.shift1), _wrap_angle(b + self.shift2)], axis=1)


@dataclass(frozen=True)
class CylinderMotion:
    angle: float = 0.0
    shift: float = 0.0

    target_kind = "cylinder"

    def apply(self, pts):
        return np.stack([_wrap_angle(pts[:, 0] + self.angle), pts[:, 1] + self.shift], axis=1)


@dataclass(frozen=True)
class DiskRotation:
    angle: float = 0.0

    target_kind = "unit_disk"

    def apply(self, pts):
        return np.stack([pts[:, 0], _wrap_angle(pts[:, 1] + self.angle)], axis=1)


@dataclass(frozen=True)
class MoebiusMap:
    a: float
    b: float
    c: float
    d: float

    target_kind = "hyperbolic_plane"

    def __post_init__(self):
        if abs(self.a * self.d - self.b * self.c - 1.0) > 1e-12:
            raise ValueError("moebius map: determinant must equal 1")

    def apply(self, pts):
        z = pts[:, 0] + 1j * pts[:, 1]
        w = (self.a * z + self.b) / (self.c * z + self.d)
        return np.stack([w.real, w.imag], axis=1)


# ---------------------------------------------------------------------------
# module-level operations


def geodesic_distance(m: Manifold, x, y) -> float:
    """Distance between two single points."""
    xs = m.as_points(x)
    ys = m.as_points(y)
    return float(m.distance(xs[0], ys[0]))


def pairwise_distances(m: Manifold, pts) -> np.ndarray:
    pts = m.as_points(pts)
    n = len(pts)
    out = np.zeros((n, n))
    for i in range(n):
        out[i] = np.atleast_1d(m.distance(pts[i][None, :], pts))
    return out


def apply_isometry(m: Manifold, iso, pts) -> np.ndarray:
    if iso.target_kind != m.kind:
        raise ValueError(f"isometry for {iso.target_kind} applied to {m.kind}")
    moved = iso.apply(m.as_points(pts))
    return m.as_points(moved)


def scale_metric(m: Manifold, c: float) -> Manifold:
    return m.scaled(c)


def sample_points(m: Manifold, n: int, seed: int, stratified: bool = False) -> np.ndarray:
    if n < 0:
        raise ValueError("sample_points: n must be nonnegative")
    if n == 0:
        return np.zeros((0, m.chart_dim))
    return m.as_points(m.sample(n, seed, stratified=stratified))


_KINDS = {
    "euclidean": Euclidean,
    "circle": Circle,
    "sphere2": Sphere2,
    "flat_torus": FlatTorus,
    "cylinder": Cylinder,
    "unit_disk": UnitDisk,
    "hyperbolic_plane": HyperbolicPlane,
}

_CONFIG_KEYS = {
    "euclidean": {"dim", "scale"},
    "circle": {"radius"},
    "sphere2": {"radius"},
    "flat_torus": {"r1", "r2"},
    "cylinder": {"radius", "scale"},
    "unit_disk": {"scale"},
    "hyperbolic_plane": {"scale"},
}


def manifold_from_config(cfg: dict) -> Manifold:
    """Build a manifold from its serialized form, rejecting unknown keys."""
    if not isinstance(cfg, dict) or "kind" not in cfg:
        raise ValueError("manifold config must be an object with a 'kind' field")
    kind = cfg["kind"]
    if kind not in _KINDS:
        raise ValueError(f"unknown manifold kind {kind!r}")
    allowed = _CONFIG_KEYS[kind]
    extra = set(cfg) - allowed - {"kind"}
    if extra:
        raise ValueError(f"unknown manifold config keys for {kind}: {sorted(extra)}")
    kwargs = {k: cfg[k] for k in cfg if k != "kind"}
    return _KINDS[kind](**kwargs)
