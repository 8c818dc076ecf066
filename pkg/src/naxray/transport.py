"""Matrix transport along chords: scattering data, integrating factors, the
weighted linear X-ray transform and the pseudo-linearisation residual.

The transport equation U' + A(gamma(t)) U = 0 is integrated backward from the
terminal condition U(tau) = id with fixed-step RK4.  All chord quantities
(scattering solves, integrating-factor paths, Simpson quadratures) share one
node grid per chord so that discretisation bias cancels in residual checks;
the step count is the single resolution knob.
"""

from __future__ import annotations

import json
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import fields as F
from .geometry import BoundaryDirection, DomainError, GeodesicSegment, UnitBall

_MAX_WORKERS = 1


def set_max_workers(n):
    """Worker count for the ordered batch map (results are identical for any
    value; this only affects wall time)."""
    global _MAX_WORKERS
    _MAX_WORKERS = max(1, int(n))


class NumericError(RuntimeError):
    """Non-finite values or singular matrices met during a solve."""


@dataclass(frozen=True)
class SolverConfig:
    """Fixed-step RK4 resolution: steps per unit chord length (>= 16), with an
    optional step-halving (Richardson) error estimate."""

    steps_per_unit_length: int = 256
    method: str = "RK4"
    richardson: bool = False
    min_steps: int = 16

    def __post_init__(self):
        if self.steps_per_unit_length < 16:
            raise DomainError("steps_per_unit_length must be >= 16")
        if self.method != "RK4":
            raise DomainError("only the fixed RK4 method ships")

    def halved(self):
        return SolverConfig(2 * self.steps_per_unit_length, self.method,
                            False, 2 * self.min_steps)


@dataclass(frozen=True)
class MatrixPath:
    """Solution values along one chord; times increase to the exit where the
    terminal condition U = id holds exactly."""

    times: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        t = np.asarray(self.times, dtype=float)
        v = np.asarray(self.values)
        object.__setattr__(self, "times", t)
        object.__setattr__(self, "values", v)
        if t.ndim != 1 or v.shape[0] != t.shape[0]:
            raise DomainError("times and values must align")
        m = v.shape[-1]
        if not np.array_equal(v[-1], np.eye(m, dtype=v.dtype)):
            raise DomainError("terminal value must be the identity exactly")

    @property
    def m(self):
        return self.values.shape[-1]


@dataclass(frozen=True)
class ScatteringRecord:
    """One boundary direction paired with its matrix datum C(x, v)."""

    bd: BoundaryDirection
    value: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "value", np.asarray(self.value))


# ---------------------------------------------------------------------------
# RK4 core
# ---------------------------------------------------------------------------


def rk4_backward(A_half, dts, keep_path=False):
    """Integrate U' = -A(t) U backward from U(t_n) = id.

    A_half: (B, 2n+1, m, m) attenuation on the half-step lattice of each
    chord (t_j = j*dt/2); dts: (B,) node spacing.  Returns U at t_0 (B, m, m),
    or the whole node path (B, n+1, m, m) when keep_path is set.
    """
    A_half = np.asarray(A_half)
    B, P, m, _ = A_half.shape
    n = (P - 1) // 2
    if not np.all(np.isfinite(A_half)):
        bad = np.argwhere(~np.isfinite(A_half))[0]
        raise NumericError(f"non-finite attenuation value at chord {bad[0]}, "
                           f"lattice index {bad[1]}")
    h = -np.asarray(dts, dtype=float)[:, None, None]
    U = np.broadcast_to(np.eye(m, dtype=A_half.dtype), (B, m, m)).copy()
    if keep_path:
        path = np.empty((B, n + 1, m, m), dtype=A_half.dtype)
        path[:, n] = U
    for k in range(n, 0, -1):
        A1 = A_half[:, 2 * k]
        Am = A_half[:, 2 * k - 1]
        A0 = A_half[:, 2 * k - 2]
        k1 = -np.matmul(A1, U)
        k2 = -np.matmul(Am, U + 0.5 * h * k1)
        k3 = -np.matmul(Am, U + 0.5 * h * k2)
        k4 = -np.matmul(A0, U + h * k3)
        U = U + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        if keep_path:
            path[:, k - 1] = U
    return path if keep_path else U


def _half_lattice_values(att, origin, direction, t0, dt, n_pts):
    field_eff = att.along_direction(direction) if isinstance(att, F.Attenuation) else att
    return F.line_values_uniform(field_eff, origin, direction, t0, dt, n_pts)


def _as_attenuation(phi_or_att):
    return phi_or_att if isinstance(phi_or_att, F.Attenuation) else F.Attenuation(phi_or_att)


def solve_transport(att, seg, cfg=SolverConfig()):
    """Path of U' + A U = 0, U(t_exit) = id, on the segment's node grid."""
    att = _as_attenuation(att)
    n = seg.n_steps
    dt = seg.t_exit / n if n else 0.0
    A_half = _half_lattice_values(att, seg.origin, seg.direction, 0.0, dt / 2.0, 2 * n + 1)
    path = rk4_backward(A_half[None], np.array([dt]), keep_path=True)[0]
    return MatrixPath(times=seg.times(), values=path)


def transport_residual(path, att, seg):
    """Max Frobenius residual of U' + A U = 0 on the returned path, measured
    with 5-point central finite differences on interior nodes.

    The value scales like 10 * dt^4 * S with S a magnitude factor built from
    sup|A| along the path and the solution's fifth-derivative scale; it is a
    consistency check, not a certified bound (the closed-form oracles are).
    """
    att = _as_attenuation(att)
    t = path.times
    U = path.values
    if len(t) < 5:
        raise DomainError("need at least 5 nodes for the residual stencil")
    dt = t[1] - t[0]
    pts = seg.points(t)
    A = F.evaluate(att.along_direction(seg.direction), pts)
    dU = (-U[4:] + 8.0 * U[3:-1] - 8.0 * U[1:-3] + U[:-4]) / (12.0 * dt)
    res = dU + np.matmul(A[2:-2], U[2:-2])
    return float(np.sqrt((np.abs(res) ** 2).sum(axis=(-2, -1))).max())


def solve_companion(att, seg, cfg=SolverConfig()):
    """Path of the inverse's equation V' = V A with V(t_exit) = id; V should
    reproduce the matrix inverses of the primal path to solver tolerance."""
    att = _as_attenuation(att)
    n = seg.n_steps
    dt = seg.t_exit / n
    A_half = _half_lattice_values(att, seg.origin, seg.direction, 0.0, dt / 2.0, 2 * n + 1)
    m = att.m
    h = -dt
    V = np.eye(m, dtype=complex)
    vals = np.empty((n + 1, m, m), dtype=complex)
    vals[n] = V
    for k in range(n, 0, -1):
        A1, Am, A0 = A_half[2 * k], A_half[2 * k - 1], A_half[2 * k - 2]
        k1 = V @ A1
        k2 = (V + 0.5 * h * k1) @ Am
        k3 = (V + 0.5 * h * k2) @ Am
        k4 = (V + h * k3) @ A0
        V = V + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
        vals[k - 1] = V
    return MatrixPath(times=seg.times(), values=vals)


def solve_with_source(att, seg, source, cfg=SolverConfig()):
    """Path of G' + A G = -S with G(t_exit) = 0, for a matrix source field S
    (the transport representation check uses this)."""
    att = _as_attenuation(att)
    n = seg.n_steps
    dt = seg.t_exit / n
    A_half = _half_lattice_values(att, seg.origin, seg.direction, 0.0, dt / 2.0, 2 * n + 1)
    S_half = F.line_values_uniform(source, seg.origin, seg.direction, 0.0, dt / 2.0, 2 * n + 1)
    m = att.m
    h = -dt
    G = np.zeros((m, m), dtype=complex)
    vals = np.empty((n + 1, m, m), dtype=complex)
    vals[n] = G
    for k in range(n, 0, -1):
        A1, Am, A0 = A_half[2 * k], A_half[2 * k - 1], A_half[2 * k - 2]
        S1, Sm, S0 = S_half[2 * k], S_half[2 * k - 1], S_half[2 * k - 2]
        k1 = -(A1 @ G) - S1
        k2 = -(Am @ (G + 0.5 * h * k1)) - Sm
        k3 = -(Am @ (G + 0.5 * h * k2)) - Sm
        k4 = -(A0 @ (G + h * k3)) - S0
        G = G + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
        vals[k - 1] = G
    times = seg.times()
    return times, vals


# ---------------------------------------------------------------------------
# Scattering data
# ---------------------------------------------------------------------------


def _chord_arrays(bds):
    xs = np.stack([bd.x for bd in bds])
    vs = np.stack([bd.v for bd in bds])
    return xs, vs


def scattering_matrices(phi_or_att, bds, cfg=SolverConfig()):
    """U(0) for a batch of boundary directions, shape (B, m, m).  Chords are
    bucketed by step count and solved in lockstep; the per-direction result
    is identical to solve_transport."""
    att = _as_attenuation(phi_or_att)
    ball = UnitBall(att.d)
    xs, vs = _chord_arrays(bds)
    taus = ball.exit_time_batch(xs, vs)
    spl = cfg.steps_per_unit_length
    ns = np.maximum(cfg.min_steps, np.ceil(spl * np.maximum(taus, 1e-12)).astype(int))
    ns += ns % 2
    out = np.empty((len(bds), att.m, att.m), dtype=complex)
    xi = att.phi.xi()
    delta = att.phi.cutoff_delta

    def run_bucket(n):
        idx = np.nonzero(ns == n)[0]
        dts = taus[idx] / n
        if att.one_form is None:
            coeff = att.phi.flat_coeffs().reshape(1, xi.shape[0], -1)
        else:
            coeff = np.stack([
                att.along_direction(vs[i]).flat_coeffs().reshape(xi.shape[0], -1)
                for i in idx])
        A_half = F.line_values_uniform_batch(
            coeff, xi, xs[idx], vs[idx], np.zeros(len(idx)), dts / 2.0,
            2 * n + 1, att.m, cutoff_delta=delta)
        return idx, rk4_backward(A_half, dts)

    buckets = sorted(set(ns.tolist()))
    if _MAX_WORKERS > 1 and len(buckets) > 1:
        with ThreadPoolExecutor(max_workers=_MAX_WORKERS) as ex:
            for idx, vals in ex.map(run_bucket, buckets):
                out[idx] = vals
    else:
        for n in buckets:
            idx, vals = run_bucket(n)
            out[idx] = vals
    return out


def scattering_data(phi_or_att, bds, cfg=SolverConfig()):
    """Scattering records (one per direction)."""
    values = scattering_matrices(phi_or_att, bds, cfg)
    return [ScatteringRecord(bd, val) for bd, val in zip(bds, values)]


def validate_records(records, structure=None):
    """Record invariants: invertibility always; orthogonality and det ~ +1
    for skew-valued potentials.  Returns the measured worst cases."""
    vals = np.stack([r.value for r in records])
    dets = np.linalg.det(vals)
    report = {"min_abs_det": float(np.abs(dets).min())}
    if report["min_abs_det"] == 0.0:
        raise NumericError("scattering value is singular")
    if structure == "skew-symmetric":
        m = vals.shape[-1]
        gram = np.matmul(np.swapaxes(vals, -1, -2), vals)
        report["max_orth_defect"] = float(
            np.sqrt((np.abs(gram - np.eye(m)) ** 2).sum(axis=(-2, -1))).max())
        report["max_det_defect"] = float(np.abs(dets - 1.0).max())
    return report


# ---------------------------------------------------------------------------
# Integrating factors
# ---------------------------------------------------------------------------


def _extended_attenuation(att, delta):
    phi1 = F.extend_with_cutoff(att.phi, delta)
    one1 = None
    if att.one_form is not None:
        one1 = tuple(F.extend_with_cutoff(a, delta) for a in att.one_form)
    return F.Attenuation(phi1, one1)


def integrating_factor(phi_or_att, x, v, delta=0.25, cfg=SolverConfig()):
    """R(x, v) for |x| <= 1: the transport solution on the enlarged ball of
    radius 1 + delta with terminal identity at its exit, evaluated at (x, v).
    The extension vanishes near the enlarged boundary, so R is smooth across
    the glancing set of the unit ball."""
    if delta <= 0:
        raise DomainError("delta must be positive")
    att = _as_attenuation(phi_or_att)
    x = np.asarray(x, dtype=float)
    v = np.asarray(v, dtype=float)
    if float(x @ x) > 1.0 + 1e-12:
        raise DomainError("integrating factor requested outside the unit ball")
    att1 = _extended_attenuation(att, delta)
    ball1 = UnitBall(att.d, radius=1.0 + delta)
    tau1 = ball1.exit_time(x, v)
    n = max(cfg.min_steps, math.ceil(cfg.steps_per_unit_length * max(tau1, 1e-12)))
    n += n % 2
    dt = tau1 / n
    A_half = _half_lattice_values(att1, x, v, 0.0, dt / 2.0, 2 * n + 1)
    U = rk4_backward(A_half[None], np.array([dt]))[0]
    if not np.all(np.isfinite(U)):
        raise NumericError("integrating factor solve produced non-finite values")
    return U


def integrating_factor_path(phi_or_att, bd, delta=0.25, cfg=SolverConfig(), seg=None):
    """R along the chord of bd, returned on the chord's node grid [0, tau].

    The solve starts from the identity at the enlarged ball's exit, marches
    through the extension stretch on its own grid, then continues through the
    chord on exactly the chord grid (so downstream quadratures align)."""
    if delta <= 0:
        raise DomainError("delta must be positive")
    att = _as_attenuation(phi_or_att)
    att1 = _extended_attenuation(att, delta)
    ball = UnitBall(att.d)
    ball1 = UnitBall(att.d, radius=1.0 + delta)
    seg = ball.segment(bd, cfg.steps_per_unit_length, cfg.min_steps) if seg is None else seg
    tau = seg.t_exit
    tau1 = ball1.exit_time(bd.x, bd.v)
    ext = tau1 - tau
    m = att.m
    field_eff = att1.along_direction(bd.v)
    # extension stretch [tau, tau1]: march identity back to the chord exit
    n_ext = max(cfg.min_steps, math.ceil(cfg.steps_per_unit_length * max(ext, 1e-12)))
    n_ext += n_ext % 2
    dt_ext = ext / n_ext
    A_half = F.line_values_uniform(field_eff, bd.x, bd.v, tau, dt_ext / 2.0, 2 * n_ext + 1)
    U_exit = rk4_backward(A_half[None], np.array([dt_ext]))[0]
    # chord stretch [0, tau] on the chord grid
    n = seg.n_steps
    dt = tau / n
    A_half = F.line_values_uniform(field_eff, bd.x, bd.v, 0.0, dt / 2.0, 2 * n + 1)
    vals = np.empty((n + 1, m, m), dtype=complex)
    vals[n] = U_exit
    U = U_exit
    hh = -dt
    for k in range(n, 0, -1):
        A1, Am, A0 = A_half[2 * k], A_half[2 * k - 1], A_half[2 * k - 2]
        k1 = -(A1 @ U)
        k2 = -(Am @ (U + 0.5 * hh * k1))
        k3 = -(Am @ (U + 0.5 * hh * k2))
        k4 = -(A0 @ (U + hh * k3))
        U = U + (hh / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
        vals[k - 1] = U
    if not np.all(np.isfinite(vals)):
        raise NumericError("integrating factor solve produced non-finite values")
    return seg, vals


# ---------------------------------------------------------------------------
# Weighted X-ray transform
# ---------------------------------------------------------------------------


def simpson_weights(n, dt):
    """Composite Simpson weights for n (even) intervals of width dt."""
    if n % 2 or n < 2:
        raise DomainError("Simpson rule needs an even interval count")
    w = np.ones(n + 1)
    w[1:-1:2] = 4.0
    w[2:-1:2] = 2.0
    return w * (dt / 3.0)


class EndomorphismWeight:
    """Weight acting on matrix values pointwise, A -> lhs(t) A rhs(t); the
    pseudo-linearisation weight is the special case lhs = R_phi^-1,
    rhs = R_psi."""

    def __init__(self, lhs, rhs):
        self.lhs = np.asarray(lhs)
        self.rhs = np.asarray(rhs)

    def apply(self, values, pts, v):
        return np.matmul(self.lhs, np.matmul(values, self.rhs))


def weighted_xray(W, f, bd, cfg=SolverConfig(), seg=None):
    """Composite-Simpson quadrature of W f along the chord on the solver
    node grid.  W may be None (identity), a constant matrix, a callable
    W(points, v) -> (P, m, m), or an object with .apply(values, points, v)."""
    ball = UnitBall(f.d)
    seg = ball.segment(bd, cfg.steps_per_unit_length, cfg.min_steps) if seg is None else seg
    t = seg.times()
    pts = seg.points(t)
    vals = F.evaluate(f, pts)
    if W is None:
        integrand = vals
    elif hasattr(W, "apply"):
        integrand = W.apply(vals, pts, bd.v)
    elif callable(W):
        integrand = np.matmul(W(pts, bd.v), vals)
    else:
        integrand = np.matmul(np.asarray(W), vals)
    w = simpson_weights(seg.n_steps, t[1] - t[0])
    return np.tensordot(w, integrand, axes=(0, 0))


# ---------------------------------------------------------------------------
# Pseudo-linearisation
# ---------------------------------------------------------------------------


def pseudolin_sides(phi, psi, bd, delta=0.25, cfg=SolverConfig()):
    """Both sides of the pseudo-linearisation identity at one boundary
    direction, each computed independently on the shared chord grid:
    the left side from two scattering solves, the right side from
    integrating-factor paths and the weighted transform, with the exit-pulled
    inverse factor evaluated at the scattering relation."""
    if (phi.d, phi.m) != (psi.d, psi.m):
        raise DomainError("potentials must share (d, m)")
    ball = UnitBall(phi.d)
    seg = ball.segment(bd, cfg.steps_per_unit_length, cfg.min_steps)
    C_phi = solve_transport(phi, seg, cfg).values[0]
    C_psi = solve_transport(psi, seg, cfg).values[0]
    lhs = C_phi - C_psi

    _, R_phi = integrating_factor_path(phi, bd, delta, cfg, seg=seg)
    _, R_psi = integrating_factor_path(psi, bd, delta, cfg, seg=seg)
    try:
        R_phi_inv = np.linalg.inv(R_phi)
        R_psi_exit_inv = np.linalg.inv(R_psi[-1])
    except np.linalg.LinAlgError as exc:
        raise NumericError("singular integrating factor") from exc
    t = seg.times()
    diff = F.evaluate(phi - psi, seg.points(t))
    integrand = np.matmul(R_phi_inv, np.matmul(diff, R_psi))
    w = simpson_weights(seg.n_steps, t[1] - t[0])
    I = np.tensordot(w, integrand, axes=(0, 0))
    rhs = R_phi[0] @ I @ R_psi_exit_inv
    return lhs, rhs


def pseudolin_residual(phi, psi, bd, delta=0.25, cfg=SolverConfig()):
    """Frobenius norm of (C_phi - C_psi) minus its weighted-transform
    representation; an exact identity, so the residual is pure
    discretisation error."""
    lhs, rhs = pseudolin_sides(phi, psi, bd, delta, cfg)
    return float(np.linalg.norm(lhs - rhs))


# ---------------------------------------------------------------------------
# Scattering dataset files (JSON-lines)
# ---------------------------------------------------------------------------


def _matrix_to_wire(mat):
    flat = np.asarray(mat, dtype=complex).reshape(-1)
    out = np.empty(2 * flat.size)
    out[0::2] = flat.real
    out[1::2] = flat.imag
    return out.tolist()


def _matrix_from_wire(wire, m):
    arr = np.asarray(wire, dtype=float)
    return (arr[0::2] + 1j * arr[1::2]).reshape(m, m)


def records_to_jsonl(records, path, extra_columns=None, float_format="%.17g"):
    """One record per line: x, v, value (row-major re/im pairs); optional
    extra columns are merged into each record object."""
    def fmt(x):
        return float(float_format % x)

    with open(path, "w") as fh:
        for i, rec in enumerate(records):
            obj = {
                "x": [fmt(c) for c in rec.bd.x],
                "v": [fmt(c) for c in rec.bd.v],
                "value": [fmt(c) for c in _matrix_to_wire(rec.value)],
            }
            if extra_columns:
                for key, col in extra_columns.items():
                    obj[key] = col[i]
            fh.write(json.dumps(obj, sort_keys=True))
            fh.write("\n")


def records_from_jsonl(path):
    records = []
    with open(path) as fh:
        for line in fh:
            if not line.strip():
                continue
            obj = json.loads(line)
            m = int(round(math.sqrt(len(obj["value"]) // 2)))
            records.append(ScatteringRecord(
                BoundaryDirection(np.array(obj["x"]), np.array(obj["v"])),
                _matrix_from_wire(obj["value"], m)))
    return records
