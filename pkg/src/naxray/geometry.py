"""Euclidean unit-ball geometry: boundary directions, straight-line geodesics,
exit times, the scattering relation, uniform boundary sampling, convex
foliations and layer stratification.

The manifold is fixed to the closed unit ball in R^d (geodesics are chords).
A thin backend seam is kept: everything chord-related goes through
:class:`UnitBall`, so a numerically integrated metric could be swapped in
later; only the ball backend ships.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

BOUNDARY_TOL = 1e-12


class DomainError(ValueError):
    """Input outside an operation's stated domain."""


def _unit(x):
    x = np.asarray(x, dtype=float)
    n = np.linalg.norm(x)
    if n == 0:
        raise DomainError("zero vector cannot be normalised")
    return x / n


@dataclass(frozen=True)
class BoundaryDirection:
    """A point of the inward boundary bundle: x on the unit sphere, v an
    inward (or tangent) unit direction, i.e. <x, v> <= 0."""

    x: np.ndarray
    v: np.ndarray

    def __post_init__(self):
        x = np.asarray(self.x, dtype=float)
        v = np.asarray(self.v, dtype=float)
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "v", v)
        if abs(np.linalg.norm(x) - 1.0) > BOUNDARY_TOL:
            raise DomainError("boundary point must lie on the unit sphere")
        if abs(np.linalg.norm(v) - 1.0) > BOUNDARY_TOL:
            raise DomainError("direction must be a unit vector")
        if float(x @ v) > BOUNDARY_TOL:
            raise DomainError("direction must point inward or tangent (<x,v> <= 0)")

    @property
    def d(self):
        return self.x.shape[0]


@dataclass(frozen=True)
class GeodesicSegment:
    """A chord segment: origin + t*direction for t in [0, t_exit], discretised
    with n_steps intervals (n_steps is even so composite Simpson applies)."""

    origin: np.ndarray
    direction: np.ndarray
    t_exit: float
    n_steps: int

    def __post_init__(self):
        object.__setattr__(self, "origin", np.asarray(self.origin, dtype=float))
        object.__setattr__(self, "direction", np.asarray(self.direction, dtype=float))
        if self.t_exit < 0:
            raise DomainError("t_exit must be nonnegative")
        if self.n_steps < 2 or self.n_steps % 2:
            raise DomainError("n_steps must be a positive even integer")

    def times(self):
        return np.linspace(0.0, self.t_exit, self.n_steps + 1)

    def points(self, t=None):
        t = self.times() if t is None else np.asarray(t, dtype=float)
        return self.origin[None, :] + t[:, None] * self.direction[None, :]


class UnitBall:
    """Chord geometry of the ball of radius `radius` (default the unit ball)."""

    def __init__(self, d, radius=1.0):
        if d < 2:
            raise DomainError("dimension must be >= 2")
        self.d = int(d)
        self.radius = float(radius)

    def exit_time(self, x, v):
        """First t >= 0 with |x + t v| = radius; for |x| = 1, <x,v> <= 0 and
        the unit ball this is the chord length -2<x,v>."""
        x = np.asarray(x, dtype=float)
        v = np.asarray(v, dtype=float)
        r2 = self.radius ** 2
        xx = float(x @ x)
        if xx > r2 + 1e-9:
            raise DomainError("point lies outside the ball")
        xv = float(x @ v)
        vv = float(v @ v)
        disc = xv * xv + vv * (r2 - xx)
        if disc < 0.0:
            disc = 0.0
        t = (-xv + math.sqrt(disc)) / vv
        return max(t, 0.0)

    def exit_time_batch(self, xs, vs):
        xs = np.asarray(xs, dtype=float)
        vs = np.asarray(vs, dtype=float)
        xv = np.einsum("ij,ij->i", xs, vs)
        xx = np.einsum("ij,ij->i", xs, xs)
        disc = np.maximum(xv * xv + self.radius ** 2 - xx, 0.0)
        return np.maximum(-xv + np.sqrt(disc), 0.0)

    def scattering_relation(self, bd):
        """Exit point and direction of the chord entering at bd."""
        tau = self.exit_time(bd.x, bd.v)
        return bd.x + tau * bd.v, bd.v.copy()

    def sample_boundary_uniform(self, n, rng):
        """n independent draws of (x, v): x uniform on the sphere, v uniform
        on the inward hemisphere at x.  Deterministic given the generator."""
        if n < 1:
            raise DomainError("need n >= 1 draws")
        x = rng.standard_normal((n, self.d))
        x /= np.linalg.norm(x, axis=1, keepdims=True)
        v = rng.standard_normal((n, self.d))
        v /= np.linalg.norm(v, axis=1, keepdims=True)
        dot = np.einsum("ij,ij->i", x, v)
        out = dot > 0
        v[out] -= 2.0 * dot[out, None] * x[out]
        return [BoundaryDirection(xi, vi) for xi, vi in zip(x, v)]

    def segment(self, bd, steps_per_unit_length=256, min_steps=16):
        """Chord segment with an even interval count matched to the solver
        resolution (at least min_steps intervals even for near-tangent chords)."""
        tau = self.exit_time(bd.x, bd.v)
        n = max(min_steps, math.ceil(steps_per_unit_length * max(tau, 1e-12)))
        n += n % 2
        return GeodesicSegment(bd.x, bd.v, tau, n)


def exit_time(x, v, d=None):
    """Module-level unit-ball exit time (see UnitBall.exit_time)."""
    x = np.asarray(x, dtype=float)
    return UnitBall(x.shape[0] if d is None else d).exit_time(x, v)


def scattering_relation(bd):
    return UnitBall(bd.d).scattering_relation(bd)


def sample_boundary_uniform(n, rng, d=3):
    return UnitBall(d).sample_boundary_uniform(n, rng)


def inward_dot_cdf(t, d):
    """CDF of <x, v> under uniform boundary sampling: on [-1, 0] the density
    is proportional to (1 - t^2)^((d-3)/2), i.e. T^2 ~ Beta(1/2, (d-1)/2)."""
    from scipy.special import betainc

    t = np.clip(np.asarray(t, dtype=float), -1.0, 0.0)
    return 1.0 - betainc(0.5, (d - 1) / 2.0, t * t)


# ---------------------------------------------------------------------------
# Foliation functions (strictly convex exhaustions) and regions
# ---------------------------------------------------------------------------


class RadialSquared:
    """rho(x) = |x|^2, the default strictly convex exhaustion of the ball."""

    def __call__(self, pts):
        pts = np.asarray(pts, dtype=float)
        return np.einsum("...i,...i->...", pts, pts)

    def grad(self, pts):
        return 2.0 * np.asarray(pts, dtype=float)

    def hessian_min_eig(self, pts):
        pts = np.asarray(pts, dtype=float)
        return np.full(pts.shape[:-1], 2.0)

    def to_json(self):
        return {"form": "radial-squared"}


class QuadraticForm:
    """rho(x) = x.A x + b.x + c for symmetric positive definite A."""

    def __init__(self, A, b=None, c=0.0):
        self.A = np.asarray(A, dtype=float)
        d = self.A.shape[0]
        self.b = np.zeros(d) if b is None else np.asarray(b, dtype=float)
        self.c = float(c)

    def __call__(self, pts):
        pts = np.asarray(pts, dtype=float)
        return np.einsum("...i,ij,...j->...", pts, self.A, pts) + pts @ self.b + self.c

    def grad(self, pts):
        pts = np.asarray(pts, dtype=float)
        return 2.0 * pts @ self.A + self.b

    def hessian_min_eig(self, pts):
        pts = np.asarray(pts, dtype=float)
        lam = np.linalg.eigvalsh(2.0 * self.A).min()
        return np.full(pts.shape[:-1], lam)

    def to_json(self):
        return {"form": "quadratic", "A": self.A.tolist(), "b": self.b.tolist(), "c": self.c}


def rho_from_json(obj):
    if obj["form"] == "radial-squared":
        return RadialSquared()
    return QuadraticForm(np.array(obj["A"]), np.array(obj["b"]), obj["c"])


@dataclass(frozen=True)
class RegionSpec:
    """An open region of the ball: the full ball, a superlevel set of a
    convex function, or a boundary cap O = {<x,p> - 1 > -c} (nonempty iff c > 0)."""

    kind: str
    rho: object = None
    c: float = 0.0
    p: np.ndarray = None

    KINDS = ("full-ball", "superlevel", "boundary-cap")

    def __post_init__(self):
        if self.kind not in self.KINDS:
            raise DomainError(f"unknown region kind {self.kind!r}")
        if self.kind == "superlevel" and self.rho is None:
            raise DomainError("superlevel region needs a rho handle")
        if self.kind == "boundary-cap":
            if self.p is None:
                raise DomainError("boundary cap needs an apex point p")
            object.__setattr__(self, "p", _unit(self.p))
            if not self.c > 0:
                raise DomainError("boundary cap is nonempty only for c > 0")

    def contains(self, pts, ball_radius=1.0, tol=1e-12):
        """Membership mask for an array of points (..., d)."""
        pts = np.asarray(pts, dtype=float)
        in_ball = np.einsum("...i,...i->...", pts, pts) <= ball_radius ** 2 + tol
        if self.kind == "full-ball":
            return in_ball
        if self.kind == "superlevel":
            return in_ball & (self.rho(pts) >= self.c - tol)
        return in_ball & (pts @ self.p - 1.0 > -self.c - tol)

    def to_json(self):
        params = {}
        if self.kind == "superlevel":
            params = {"rho": self.rho.to_json(), "c": self.c}
        elif self.kind == "boundary-cap":
            params = {"p": self.p.tolist(), "c": self.c}
        return {"kind": self.kind, "params": params}


def geodesics_in_region(region, bds, steps_per_unit_length=256):
    """Boolean mask: True iff every sampled point of the chord lies in the
    region (membership in the set of region-local geodesics, tested on the
    segment's discretisation)."""
    mask = np.zeros(len(bds), dtype=bool)
    if not len(bds):
        return mask
    ball = UnitBall(bds[0].d)
    for i, bd in enumerate(bds):
        seg = ball.segment(bd, steps_per_unit_length)
        mask[i] = bool(np.all(region.contains(seg.points())))
    return mask


# ---------------------------------------------------------------------------
# Stratification into layers (convex-exhaustion covers)
# ---------------------------------------------------------------------------


def _circle_cover(radius, covering_radius):
    """Equally spaced points on the circle |x| = radius in R^2 with covering
    radius at most `covering_radius`."""
    if radius <= 0:
        return np.zeros((1, 2))
    n = max(4, math.ceil(math.pi * radius / covering_radius) + 1)
    th = 2.0 * math.pi * np.arange(n) / n
    return radius * np.stack([np.cos(th), np.sin(th)], axis=1)


def _fibonacci_sphere(n):
    k = np.arange(n) + 0.5
    phi = math.pi * (1.0 + math.sqrt(5.0)) * k
    z = 1.0 - 2.0 * k / n
    r = np.sqrt(np.maximum(1.0 - z * z, 0.0))
    return np.stack([r * np.cos(phi), r * np.sin(phi), z], axis=1)


def _sphere_cover(radius, covering_radius, d):
    """Deterministic cover of the sphere |x| = radius in R^d by balls of
    radius `covering_radius`; the count grows until an audit grid passes."""
    if radius <= 0:
        return np.zeros((1, d))
    if d == 2:
        return _circle_cover(radius, covering_radius)
    if d != 3:
        raise DomainError("sphere covers implemented for d in {2, 3}")
    n = max(8, math.ceil(10.0 * (radius / covering_radius) ** 2))
    while True:
        pts = _fibonacci_sphere(n) * radius
        audit = _fibonacci_sphere(4 * n + 17) * radius
        dist2 = ((audit[:, None, :] - pts[None, :, :]) ** 2).sum(-1)
        if np.sqrt(dist2.min(axis=1)).max() <= 0.98 * covering_radius:
            return pts
        n = int(n * 1.5) + 1


@dataclass
class Foliation:
    """Levels and cover centers stratifying a compact K along a strictly
    convex exhaustion rho.

    levels[i] = c_0 - i*r/2 with c_0 = sup_K rho and 2*ceil((sup-inf)/r)
    descents; the exhaustion floor inf_K rho is kept separately (the last
    level may undershoot it by less than r).  centers[0] are boundary points
    (an (h/2)-cover of the boundary sphere within K); centers[i >= 1] lie on
    the level set {rho = levels[i]} ((r/2)-covers).
    """

    rho: object
    h: float
    r: float
    levels: np.ndarray
    floor: float
    centers: list = field(default_factory=list)

    @property
    def n_layers(self):
        return len(self.levels) - 1

    def to_json(self):
        return {
            "kind": "foliation",
            "params": {"rho": self.rho.to_json(), "floor": self.floor},
            "levels": [float(c) for c in self.levels],
            "centers": [np.asarray(c).tolist() for c in self.centers],
            "h": self.h,
            "r": self.r,
        }

    @staticmethod
    def from_json(obj, rho=None):
        params = obj["params"]
        if rho is None:
            rho = rho_from_json(params["rho"])
        return Foliation(
            rho=rho,
            h=obj["h"],
            r=obj["r"],
            levels=np.array(obj["levels"], dtype=float),
            floor=params["floor"],
            centers=[np.array(c, dtype=float) for c in obj["centers"]],
        )


def _range_on_region(rho, region, d, n_grid=49):
    """sup/inf of rho over the region, by a deterministic dense grid (odd
    count, so the center is sampled) plus a boundary shell (the boundary
    sphere belongs to every shipped region kind)."""
    axes = [np.linspace(-1.0, 1.0, n_grid)] * d
    grid = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, d)
    inside = region.contains(grid)
    shell = _fibonacci_sphere(2048) if d == 3 else _circle_cover(1.0, 2e-3)
    shell = shell[region.contains(shell, tol=1e-9)]
    vals = rho(grid[inside])
    if shell.size:
        vals = np.concatenate([vals, rho(shell)])
    if vals.size == 0:
        raise DomainError("region contains no sample points")
    if not np.all(np.isfinite(vals)):
        raise DomainError("rho takes non-finite values on the region")
    return float(vals.max()), float(vals.min())


def _level_radius(rho, level, d):
    """Radius of the sphere {rho = level} for a radial rho handle (bisection)."""
    e1 = np.zeros(d)
    e1[0] = 1.0
    lo, hi = 0.0, 1.0
    if float(rho(lo * e1)) - level > 0:
        return 0.0
    if float(rho(hi * e1)) - level < 0:
        return 1.0
    for _ in range(80):
        mid = 0.5 * (lo + hi)
        if float(rho(mid * e1)) - level <= 0:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def stratify(K, rho, h, r=None, d=3, check_convexity=True):
    """Foliation of the compact region K: levels spaced r/2 from sup_K rho
    downwards, plus boundary/level cover centers with radii h and r.

    r defaults to its maximal admissible value h.  rho must be strictly
    convex on K (sampled Hessian positivity is checked for closed-form
    handles).  Raises DomainError on non-finite rho values.
    """
    if h <= 0:
        raise DomainError("depth h must be positive")
    r = h if r is None else float(r)
    if not 0 < r <= h:
        raise DomainError("cover radius must satisfy 0 < r <= h")
    if hasattr(rho, "A"):
        d = rho.A.shape[0]
    sup, inf = _range_on_region(rho, K, d)
    if check_convexity and hasattr(rho, "hessian_min_eig"):
        probe = np.zeros((4, d))
        probe[1:, 0] = (0.3, 0.6, 0.9)
        if not np.all(rho.hessian_min_eig(probe) > 0):
            raise DomainError("rho is not strictly convex")
    # ceil with slack: roundoff in the sampled sup/inf must not add layers
    n_layers = 2 * math.ceil((sup - inf) / r - 1e-9) if sup - inf > 1e-12 else 0
    levels = sup - 0.5 * r * np.arange(n_layers + 1)

    boundary = _sphere_cover(1.0, h / 2.0, d)
    keep = K.contains(boundary, tol=1e-9)
    centers = [boundary[keep] if keep.any() else boundary]
    for c in levels[1:]:
        centers.append(_sphere_cover(_level_radius(rho, c, d), r / 2.0, d))
    return Foliation(rho=rho, h=h, r=r, levels=levels, floor=inf, centers=centers)


def region_to_json(obj):
    return json.dumps(obj.to_json(), sort_keys=True)
