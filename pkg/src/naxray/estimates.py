"""Empirical checks of the quantitative estimates: boundary L2/H1 norms,
sup-norm transport bounds, forward ratios, the layer error-bound identity,
cap-local stability ratios and Hoelder stability-modulus fitting.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np

from . import fields as F
from . import transport as T
from .geometry import DomainError, UnitBall

log = logging.getLogger(__name__)


# ---------------------------------------------------------------------------
# Boundary charts and Sobolev norms
# ---------------------------------------------------------------------------


@dataclass
class BoundaryGrid:
    """Product chart over (boundary-point parameters) x (direction
    parameters) with quadrature weights, chord endpoints and an optional
    membership mask (the chart excludes the glancing set by a margin)."""

    axes: tuple
    X: np.ndarray
    V: np.ndarray
    weights: np.ndarray
    periodic: tuple
    values: np.ndarray = None
    mask: np.ndarray = None

    @property
    def shape(self):
        return tuple(len(a) for a in self.axes)

    def spacings(self):
        return tuple(float(a[1] - a[0]) for a in self.axes)

    def with_values(self, values):
        return BoundaryGrid(self.axes, self.X, self.V, self.weights,
                            self.periodic, np.asarray(values), self.mask)


def _orthonormal_frame(p):
    p = np.asarray(p, dtype=float)
    a = np.zeros(3)
    a[int(np.argmin(np.abs(p)))] = 1.0
    e1 = np.cross(p, a)
    e1 /= np.linalg.norm(e1)
    e2 = np.cross(p, e1)
    return e1, e2


def _chart_points(p, theta_b, phi_b, theta_v, phi_v):
    """Boundary point/direction arrays for chart angles (broadcast over a
    product grid).  Boundary points rotate around p; directions use spherical
    angles relative to the inward normal -x."""
    e1, e2 = _orthonormal_frame(p)
    tb, pb, tv, pv = np.meshgrid(theta_b, phi_b, theta_v, phi_v, indexing="ij")
    X = (np.cos(tb)[..., None] * p + np.sin(tb)[..., None]
         * (np.cos(pb)[..., None] * e1 + np.sin(pb)[..., None] * e2))
    t1 = (-np.sin(tb)[..., None] * p + np.cos(tb)[..., None]
          * (np.cos(pb)[..., None] * e1 + np.sin(pb)[..., None] * e2))
    t2 = -np.sin(pb)[..., None] * e1 + np.cos(pb)[..., None] * e2
    V = (-np.cos(tv)[..., None] * X
         + np.sin(tv)[..., None] * (np.cos(pv)[..., None] * t1 + np.sin(pv)[..., None] * t2))
    return X, V


def full_boundary_grid(n_per_axis, d=3, eps_g=0.0):
    """Chart of the whole inward boundary bundle of the unit ball (d = 3)
    with cell-centered nodes and weights normalised to total mass 1 (the
    uniform probability measure), so grid quadrature is comparable with
    Monte-Carlo record averages."""
    if d != 3:
        raise DomainError("boundary charts are implemented for d = 3")
    n = int(n_per_axis)
    tb = (np.arange(n) + 0.5) * (math.pi / n)
    pb = (np.arange(n) + 0.5) * (2.0 * math.pi / n)
    tv_max = math.pi / 2.0 - eps_g
    tv = (np.arange(n) + 0.5) * (tv_max / n)
    pv = (np.arange(n) + 0.5) * (2.0 * math.pi / n)
    X, V = _chart_points(np.array([0.0, 0.0, 1.0]), tb, pb, tv, pv)
    w = (np.sin(tb)[:, None, None, None] * np.sin(tv)[None, None, :, None]
         * np.ones((n, n, n, n)))
    w /= w.sum()
    return BoundaryGrid(axes=(tb, pb, tv, pv), X=X, V=V, weights=w,
                        periodic=(False, True, False, True))


def cap_boundary_grid(p, c, n_per_axis=10, eps_g=0.05):
    """Chart of the cap-local chord set for O = {<x,p> - 1 > -c}: boundary
    points within the cap, directions away from glancing by eps_g, Lebesgue
    cell weights on the chart box, and a mask selecting chords whose exit
    point stays in the cap."""
    if not 0 < c < 1:
        raise DomainError("cap depth must satisfy 0 < c < 1")
    p = np.asarray(p, dtype=float)
    p = p / np.linalg.norm(p)
    n = int(n_per_axis)
    tb_max = math.acos(1.0 - c)
    tv_max = math.pi / 2.0 - eps_g
    tb = (np.arange(n) + 0.5) * (tb_max / n)
    pb = (np.arange(n) + 0.5) * (2.0 * math.pi / n)
    tv = (np.arange(n) + 0.5) * (tv_max / n)
    pv = (np.arange(n) + 0.5) * (2.0 * math.pi / n)
    X, V = _chart_points(p, tb, pb, tv, pv)
    w = np.full((n, n, n, n),
                (tb_max / n) * (2 * math.pi / n) * (tv_max / n) * (2 * math.pi / n))
    ball = UnitBall(3)
    Xf = X.reshape(-1, 3)
    Vf = V.reshape(-1, 3)
    taus = ball.exit_time_batch(Xf, Vf)
    exits = Xf + taus[:, None] * Vf
    # a chord stays in the cap iff both endpoints do (half-space cut)
    mask = (exits @ p - 1.0 > -c).reshape(X.shape[:-1])
    return BoundaryGrid(axes=(tb, pb, tv, pv), X=X, V=V, weights=w,
                        periodic=(False, True, False, True), mask=mask)


def _pointwise_fro2(grid):
    v = np.asarray(grid.values)
    extra = v.ndim - len(grid.shape)
    if extra == 0:
        return np.abs(v) ** 2
    return (np.abs(v) ** 2).sum(axis=tuple(range(-extra, 0)))


def boundary_l2_norm(obj):
    """L2 norm of scattering-type data: for a record sequence, the
    Monte-Carlo mean of the squared Frobenius norm under the normalised
    volume (RMS over records); for a BoundaryGrid, quadrature."""
    if isinstance(obj, BoundaryGrid):
        f2 = _pointwise_fro2(obj)
        w = obj.weights if obj.mask is None else obj.weights * obj.mask
        return float(np.sqrt((f2 * w).sum()))
    records = list(obj)
    if not records:
        raise DomainError("empty record sequence")
    vals = np.stack([np.asarray(r.value) for r in records])
    return float(np.sqrt((np.abs(vals) ** 2).sum(axis=(-2, -1)).mean()))


def boundary_h1_norm(grid):
    """Chart H1 norm: L2 plus central-difference first derivatives along
    each chart axis (any smooth chart gives an equivalent norm).  Requires
    at least 8 nodes per axis."""
    if min(grid.shape) < 8:
        raise DomainError("H1 norm needs grid resolution >= 8 per axis")
    f2 = _pointwise_fro2(grid)
    mask = np.ones(grid.shape, dtype=bool) if grid.mask is None else grid.mask
    w = grid.weights * mask
    total = (f2 * w).sum()
    vals = np.asarray(grid.values)
    extra = vals.ndim - len(grid.shape)
    vwork = vals.reshape(grid.shape + (-1,)) if extra else vals[..., None]
    if grid.mask is not None:
        vwork = np.where(mask[..., None], vwork, 0.0)
    for ax, (h, per) in enumerate(zip(grid.spacings(), grid.periodic)):
        if per:
            dv = (np.roll(vwork, -1, axis=ax) - np.roll(vwork, 1, axis=ax)) / (2 * h)
        else:
            dv = np.gradient(vwork, h, axis=ax, edge_order=2)
        ok = mask.copy()
        if grid.mask is not None:
            up = np.roll(mask, -1, axis=ax)
            dn = np.roll(mask, 1, axis=ax)
            if not per:
                sl = [slice(None)] * mask.ndim
                sl[ax] = -1
                up[tuple(sl)] = False
                sl[ax] = 0
                dn[tuple(sl)] = False
            ok = ok & up & dn
        d2 = (np.abs(dv) ** 2).sum(axis=-1)
        total = total + (d2 * grid.weights * ok).sum()
    return float(np.sqrt(total))


# ---------------------------------------------------------------------------
# Batched chord quadrature of W f (no ODE solve)
# ---------------------------------------------------------------------------


def _apply_weight(W, vals, pts, v):
    if W is None:
        return vals
    if hasattr(W, "apply"):
        return W.apply(vals, pts, v)
    if callable(W):
        return np.matmul(W(pts, v), vals)
    return np.matmul(np.asarray(W), vals)


def xray_values_batch(W, f, Xf, Vf, cfg=T.SolverConfig()):
    """I_W f over many chords (Xf, Vf): composite Simpson on a shared step
    count with per-chord spacing.  W restricted to None or a constant matrix
    (what the batched callers need)."""
    ball = UnitBall(f.d)
    taus = ball.exit_time_batch(Xf, Vf)
    n = max(cfg.min_steps, math.ceil(cfg.steps_per_unit_length * max(float(taus.max()), 1e-9)))
    n += n % 2
    dts = taus / n
    xi = f.xi()
    coeff = f.flat_coeffs().reshape(1, -1, f.m * f.m)
    out = np.empty((Xf.shape[0], f.m, f.m), dtype=complex)
    sw = np.ones(n + 1)
    sw[1:-1:2] = 4.0
    sw[2:-1:2] = 2.0
    Wm = None if W is None else np.asarray(W)
    chunk = max(1, int(4e6 // ((n + 1) * max(xi.shape[0], 1))))
    for i in range(0, Xf.shape[0], chunk):
        sl = slice(i, min(i + chunk, Xf.shape[0]))
        vals = F.line_values_uniform_batch(coeff, xi, Xf[sl], Vf[sl],
                                           np.zeros(sl.stop - sl.start), dts[sl],
                                           n + 1, f.m, cutoff_delta=f.cutoff_delta)
        if Wm is not None:
            vals = np.matmul(Wm, vals)
        out[sl] = np.einsum("p,bpij,b->bij", sw / 3.0, vals, dts[sl])
    return out


# ---------------------------------------------------------------------------
# Transport sup-norm bound
# ---------------------------------------------------------------------------


def check_linf_bound(att, n_dirs=50, cfg=T.SolverConfig(), rng=None):
    """Margin of the Gronwall sup bound: sqrt(m) exp(2 |A|_inf) minus the
    largest Frobenius norm met along solved paths (tau_inf = 2 on the unit
    ball).  Must be >= -1e-8; violations indicate solver error."""
    att = T._as_attenuation(att)
    rng = np.random.default_rng(0) if rng is None else rng
    ball = UnitBall(att.d)
    bds = ball.sample_boundary_uniform(n_dirs, rng)
    anorm = att.linf_norm()
    max_u = 0.0
    for bd in bds:
        seg = ball.segment(bd, cfg.steps_per_unit_length, cfg.min_steps)
        field_eff = att.along_direction(bd.v)
        dt = seg.t_exit / seg.n_steps
        A_half = F.line_values_uniform(field_eff, seg.origin, seg.direction,
                                       0.0, dt / 2.0, 2 * seg.n_steps + 1)
        anorm = max(anorm, float(np.sqrt((np.abs(A_half) ** 2).sum(axis=(-2, -1))).max()))
        path = T.rk4_backward(A_half[None], np.array([dt]), keep_path=True)[0]
        max_u = max(max_u, float(np.sqrt((np.abs(path) ** 2).sum(axis=(-2, -1))).max()))
    bound = math.sqrt(att.m) * math.exp(2.0 * anorm)
    return bound - max_u


def max_path_norm_defect(att, n_dirs=50, cfg=T.SolverConfig(), rng=None):
    """max over paths and nodes of | |U(t)|_F - sqrt(m) |; identically ~0 for
    skew-valued attenuations, where the solution stays orthogonal."""
    att = T._as_attenuation(att)
    rng = np.random.default_rng(0) if rng is None else rng
    ball = UnitBall(att.d)
    bds = ball.sample_boundary_uniform(n_dirs, rng)
    worst = 0.0
    for bd in bds:
        seg = ball.segment(bd, cfg.steps_per_unit_length, cfg.min_steps)
        path = T.solve_transport(att, seg, cfg)
        fro = np.sqrt((np.abs(path.values) ** 2).sum(axis=(-2, -1)))
        worst = max(worst, float(np.abs(fro - math.sqrt(att.m)).max()))
    return worst


# ---------------------------------------------------------------------------
# Forward ratio
# ---------------------------------------------------------------------------


def forward_ratio(phi, psi, n_dirs=200, cfg=T.SolverConfig(), rng=None):
    """Boundary L2 data distance over interior L2 potential distance (the
    k = 0 forward bound's empirical constant)."""
    rng = np.random.default_rng(0) if rng is None else rng
    pot = F.l2_norm_on_ball(phi - psi)
    if pot == 0.0:
        raise DomainError("potentials coincide: zero denominator")
    ball = UnitBall(phi.d)
    bds = ball.sample_boundary_uniform(n_dirs, rng)
    Cp = T.scattering_matrices(phi, bds, cfg)
    Cq = T.scattering_matrices(psi, bds, cfg)
    data = float(np.sqrt((np.abs(Cp - Cq) ** 2).sum(axis=(-2, -1)).mean()))
    return data / pot


# ---------------------------------------------------------------------------
# Layer error-bound identity
# ---------------------------------------------------------------------------


def _sublevel_exit(rho, x, v, c, t_hint):
    """Largest t with rho(x + s v) <= c for s in [0, t]; the sublevel portion
    is a single interval (rho is convex along lines), refined by bisection."""
    probe = np.linspace(0.0, t_hint, 4097)
    vals = rho(x[None, :] + probe[:, None] * v[None, :])
    above = np.nonzero(vals > c + 1e-14)[0]
    if len(above) == 0:
        return t_hint
    k = above[0]
    if k == 0:
        return 0.0
    lo, hi = probe[k - 1], probe[k]
    for _ in range(60):
        mid = 0.5 * (lo + hi)
        if float(rho(x + mid * v)) <= c:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def layer_identity_residual(W, f, c, rho, bd_c, cfg=T.SolverConfig()):
    """| I^c_W f(x,v) - I_W(1_{M_c} f)(beta_c(x,v)) |_F: the sub-manifold
    transform against the full transform of the sharply truncated field from
    the extended chord start.  The sharp mask limits convergence to first
    order in the step."""
    x, v = np.asarray(bd_c[0], dtype=float), np.asarray(bd_c[1], dtype=float)
    if abs(float(rho(x)) - c) > 1e-9:
        raise DomainError("base point does not lie on the level set rho = c")
    if float(rho.grad(x) @ v) > 1e-12:
        raise DomainError("direction must enter the sublevel region (d rho(v) <= 0)")
    ball = UnitBall(x.shape[0])
    tau_ball = ball.exit_time(x, v)
    t_c = _sublevel_exit(rho, x, v, c, tau_ball)
    # sub-manifold transform on its own grid over [0, t_c]
    n1 = max(cfg.min_steps, math.ceil(cfg.steps_per_unit_length * max(t_c, 1e-9)))
    n1 += n1 % 2
    t1 = np.linspace(0.0, t_c, n1 + 1)
    pts1 = x[None, :] + t1[:, None] * v[None, :]
    vals1 = _apply_weight(W, F.evaluate(f, pts1), pts1, v)
    lhs = np.tensordot(T.simpson_weights(n1, t1[1] - t1[0]), vals1, axes=(0, 0))
    # full transform of the masked field from the extended start beta_c(x, v)
    s_back = ball.exit_time(x, -v)
    x0 = x - s_back * v
    x0 = x0 / np.linalg.norm(x0)
    tau_full = ball.exit_time(x0, v)
    n2 = max(cfg.min_steps, math.ceil(cfg.steps_per_unit_length * max(tau_full, 1e-9)))
    n2 += n2 % 2
    t2 = np.linspace(0.0, tau_full, n2 + 1)
    pts2 = x0[None, :] + t2[:, None] * v[None, :]
    vals2 = _apply_weight(W, F.evaluate(f, pts2), pts2, v)
    mask = (rho(pts2) <= c + 1e-14).astype(float)
    vals2 = vals2 * mask[:, None, None]
    rhs = np.tensordot(T.simpson_weights(n2, t2[1] - t2[0]), vals2, axes=(0, 0))
    return float(np.linalg.norm(lhs - rhs))


# ---------------------------------------------------------------------------
# Cap-local stability ratio
# ---------------------------------------------------------------------------


def l2_norm_on_small_ball(f, center, radius, n_gauss=24):
    """Frobenius L2 norm of the field over B(center, radius), intersected
    with the unit ball."""
    center = np.asarray(center, dtype=float)
    gx, gw = np.polynomial.legendre.leggauss(n_gauss)
    axes = [center[i] + radius * gx for i in range(f.d)]
    vals = F.evaluate_on_axes(f, axes)
    grid = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)
    diff = grid - center
    mask = (np.einsum("...i,...i->...", diff, diff) <= radius ** 2) \
        & (np.einsum("...i,...i->...", grid, grid) <= 1.0)
    wprod = np.ones((n_gauss,) * f.d)
    for ax in range(f.d):
        sh = [1] * f.d
        sh[ax] = -1
        wprod = wprod * (radius * gw).reshape(sh)
    dens = (np.abs(vals) ** 2).sum(axis=(-2, -1))
    return float(np.sqrt((dens * wprod * mask).sum()))


def local_stability_ratio(W, f, p, c, cfg=T.SolverConfig(), n_grid=10, eps_g=0.05):
    """||f||_{L2(B(p, c/2))} / ||I_W f||_{H1(M_O)} for the cap O of depth c.
    Returns +inf (with a diagnostic) when the transform is numerically zero.
    """
    if float(np.abs(f.flat_coeffs()).max()) == 0.0:
        raise DomainError("f must be nonzero")
    p = np.asarray(p, dtype=float)
    grid = cap_boundary_grid(p, c, n_grid, eps_g)
    Xf = grid.X.reshape(-1, 3)
    Vf = grid.V.reshape(-1, 3)
    sel = grid.mask.reshape(-1)
    vals = np.zeros((Xf.shape[0], f.m, f.m), dtype=complex)
    Wm = None if W is None else np.asarray(W)
    vals[sel] = xray_values_batch(Wm, f, Xf[sel], Vf[sel], cfg)
    grid = grid.with_values(vals.reshape(grid.shape + (f.m, f.m)))
    denom = boundary_h1_norm(grid)
    numer = l2_norm_on_small_ball(f, p, c / 2.0)
    if denom <= 1e-14 * max(numer, 1.0):
        log.warning("I_W f is numerically zero on the cap chart; "
                    "returning +inf sentinel")
        return math.inf
    return numer / denom


# ---------------------------------------------------------------------------
# Hoelder stability fit
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class StabilityFit:
    """Power-law fit pot_dist ~ c_hat * data_dist^mu_hat with regression
    quality and the upper-envelope variant."""

    pairs: tuple
    mu_hat: float
    c_hat: float
    r2: float
    envelope_mu: float
    envelope_c: float

    def __post_init__(self):
        if not math.isfinite(self.mu_hat):
            raise DomainError("fitted exponent must be finite")


def hoelder_fit(pairs, mu_grid=None):
    """Least squares on log(pot) = log(c) + mu*log(data), plus the smallest
    envelope constant over a mu grid (all pairs below C * data^mu)."""
    pairs = [(float(a), float(b)) for a, b in pairs]
    if len(pairs) < 3:
        raise DomainError("need at least 3 (data, potential) pairs")
    data = np.array([a for a, _ in pairs])
    pot = np.array([b for _, b in pairs])
    if np.any(data <= 0) or np.any(pot <= 0):
        raise DomainError("distances must be positive")
    lx = np.log(data)
    ly = np.log(pot)
    A = np.stack([lx, np.ones_like(lx)], axis=1)
    (mu, logc), *_ = np.linalg.lstsq(A, ly, rcond=None)
    pred = A @ np.array([mu, logc])
    ss_res = float(((ly - pred) ** 2).sum())
    ss_tot = float(((ly - ly.mean()) ** 2).sum())
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else 1.0
    if mu_grid is None:
        mu_grid = np.linspace(0.05, 1.5, 59)
    cs = np.array([float(np.exp(np.max(ly - m * lx))) for m in mu_grid])
    k = int(np.argmin(cs))
    return StabilityFit(pairs=tuple(pairs), mu_hat=float(mu), c_hat=float(np.exp(logc)),
                        r2=r2, envelope_mu=float(mu_grid[k]), envelope_c=float(cs[k]))


def spearman(xs, ys):
    from scipy.stats import spearmanr

    return float(spearmanr(xs, ys).statistic)


def stability_sweep(field_pairs, n_dirs=200, cfg=T.SolverConfig(), rng=None, ck_order=2):
    """Distance pairs for a sweep of (phi, psi) potentials: rows with the
    CSV schema (pair_id, ck_norm_phi, ck_norm_psi, data_dist, pot_dist)."""
    rng = np.random.default_rng(0) if rng is None else rng
    rows = []
    for i, (phi, psi) in enumerate(field_pairs):
        ball = UnitBall(phi.d)
        bds = ball.sample_boundary_uniform(n_dirs, rng)
        Cp = T.scattering_matrices(phi, bds, cfg)
        Cq = T.scattering_matrices(psi, bds, cfg)
        data = float(np.sqrt((np.abs(Cp - Cq) ** 2).sum(axis=(-2, -1)).mean()))
        pot = F.l2_norm_on_ball(phi - psi)
        rows.append({
            "pair_id": i,
            "ck_norm_phi": max(F.ck_seminorm(phi, j) for j in range(ck_order + 1)),
            "ck_norm_psi": max(F.ck_seminorm(psi, j) for j in range(ck_order + 1)),
            "data_dist": data,
            "pot_dist": pot,
        })
    return rows
