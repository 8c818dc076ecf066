"""Quadrature evaluation of the localized normal operator's boundary symbol
and its ellipticity margin.

With the Gaussian localiser the symbol at a fixed boundary point reduces to

    S(xi, eta) = <xi>^-1 * integral over the tangential sphere of
                 (W*W)(omega) * exp(-|eta.omega / <xi>|^2 / (2 alpha))

with <xi> = sqrt(1 + xi^2) and alpha > 0 the (constant-model) curvature
coefficient.  The symbol depends on (xi, eta) only through <xi> and the
reduced variable u = eta/<xi>, and the <(xi,eta)>-weighted symbol equals
sqrt(1 + |u|^2) times the reduced integral, which keeps large-frequency
grids finite.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from .geometry import DomainError


class DegenerateWeightError(ValueError):
    """Singular weight samples (unbounded W^-1)."""


@dataclass(frozen=True)
class SymbolQuery:
    """Frequency point (xi, eta) and curvature coefficient alpha > 0 at a
    fixed boundary base point (the tangential label y is carried along for
    bookkeeping only; the constant-curvature model is y-independent)."""

    xi: float
    eta: np.ndarray
    alpha_curv: float = 1.0
    y: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "eta", np.asarray(self.eta, dtype=float))
        if not self.alpha_curv > 0:
            raise DomainError("curvature coefficient must be positive")
        if not (math.isfinite(self.xi) and np.all(np.isfinite(self.eta))):
            raise DomainError("frequency must be finite")


@dataclass(frozen=True)
class WeightBoundaryData:
    """Samples of W*W on a quadrature grid of the tangential sphere S^{d-2}
    (Hermitian PSD within 1e-10 each) plus the sup of |W^-1| over the set."""

    omegas: np.ndarray      # (n, d-1) unit tangential directions
    samples: np.ndarray     # (n, m, m) W*W values
    quad_weights: np.ndarray
    winv_linf: float

    def __post_init__(self):
        om = np.asarray(self.omegas, dtype=float)
        sa = np.asarray(self.samples, dtype=complex)
        qw = np.asarray(self.quad_weights, dtype=float)
        object.__setattr__(self, "omegas", om)
        object.__setattr__(self, "samples", sa)
        object.__setattr__(self, "quad_weights", qw)
        if sa.shape[0] != om.shape[0] or qw.shape[0] != om.shape[0]:
            raise DomainError("sample/grid shapes do not align")
        herm = np.abs(sa - np.conj(np.swapaxes(sa, -1, -2))).max()
        if herm > 1e-10:
            raise DomainError("weight samples must be Hermitian within 1e-10")
        eigs = np.linalg.eigvalsh(0.5 * (sa + np.conj(np.swapaxes(sa, -1, -2))))
        if eigs.min() < -1e-10:
            raise DomainError("weight samples must be PSD within 1e-10")

    @property
    def m(self):
        return self.samples.shape[-1]

    def scaled(self, t):
        """Data for the weight t*W: samples scale by t^2, |W^-1| by 1/t."""
        return WeightBoundaryData(self.omegas, (t * t) * self.samples,
                                  self.quad_weights, self.winv_linf / t)


def tangential_sphere_grid(d, n):
    """Quadrature grid of S^{d-2} in the tangential R^{d-1}: trapezoid on the
    circle for d = 3; product Gauss-Legendre (colatitude) x trapezoid
    (azimuth) for d = 4."""
    if d == 3:
        th = 2.0 * math.pi * np.arange(n) / n
        om = np.stack([np.cos(th), np.sin(th)], axis=1)
        w = np.full(n, 2.0 * math.pi / n)
        return om, w
    if d == 4:
        ng = max(4, int(math.sqrt(n)))
        x, gw = np.polynomial.legendre.leggauss(ng)
        th = np.arccos(x)
        ph = 2.0 * math.pi * np.arange(2 * ng) / (2 * ng)
        TH, PH = np.meshgrid(th, ph, indexing="ij")
        om = np.stack([np.sin(TH) * np.cos(PH), np.sin(TH) * np.sin(PH),
                       np.cos(TH)], axis=-1).reshape(-1, 3)
        w = (gw[:, None] * np.full((ng, 2 * ng), math.pi / ng)).reshape(-1)
        return om, w
    raise DomainError("tangential sphere grids ship for d in {3, 4}")


def make_weight_data(weight_fn, d=3, n=64, m=1):
    """Sample W*W = W^H W on the tangential sphere grid for a weight function
    omega -> W(omega) (m x m)."""
    om, w = tangential_sphere_grid(d, n)
    samples = np.empty((om.shape[0], m, m), dtype=complex)
    smin = np.empty(om.shape[0])
    for i, o in enumerate(om):
        Wm = np.asarray(weight_fn(o), dtype=complex).reshape(m, m)
        samples[i] = Wm.conj().T @ Wm
        s = np.linalg.svd(Wm, compute_uv=False)
        smin[i] = s.min()
    winv = math.inf if smin.min() <= 0 else float(1.0 / smin.min())
    return WeightBoundaryData(om, samples, w, winv)


def identity_weight_data(d=3, n=64, m=1):
    return make_weight_data(lambda o: np.eye(m), d, n, m)


def symbol_matrix(wdata, q):
    """Hermitian m x m boundary symbol at the query frequency: <xi>^-1 times
    the Gaussian-localised spherical quadrature of W*W (symmetrised to kill
    roundoff)."""
    if wdata.omegas.shape[0] == 0:
        raise DomainError("weight data is empty")
    bra = math.sqrt(1.0 + q.xi * q.xi)
    proj = wdata.omegas @ (q.eta / bra)
    gauss = np.exp(-(proj ** 2) / (2.0 * q.alpha_curv))
    acc = np.einsum("n,n,nij->ij", wdata.quad_weights, gauss, wdata.samples)
    S = acc / bra
    return 0.5 * (S + S.conj().T)


def weighted_symbol_min_eig(wdata, q):
    """Smallest eigenvalue of <(xi, eta)> * symbol_matrix; in the reduced
    variable u = eta/<xi> the frequency weight is <xi> sqrt(1 + |u|^2)."""
    S = symbol_matrix(wdata, q)
    bra_full = math.sqrt(1.0 + q.xi * q.xi + float(q.eta @ q.eta))
    return float(np.linalg.eigvalsh(bra_full * S).min())


def reduced_query_grid(d=3, n_u_mag=25, n_u_dir=20, n_xi=5, u_max=1e3, alpha=1.0):
    """Frequency grid in reduced variables: |u| log-spaced from 0 up to u_max
    (covering |(xi, eta)| up to 10^3 together with the limit points u fixed),
    u directions on S^{d-2}, and a few xi values per u (the symbol depends on
    (xi, eta) only through <xi> and u, so this sweeps the full frequency
    space)."""
    mags = np.concatenate([[0.0], np.geomspace(1e-2, u_max, n_u_mag - 1)])
    dirs, _ = tangential_sphere_grid(d, n_u_dir)
    xis = np.linspace(0.0, 3.0, n_xi)
    queries = []
    for um in mags:
        if um == 0.0:
            for xi in xis:
                queries.append(SymbolQuery(xi=xi, eta=np.zeros(d - 1), alpha_curv=alpha))
            continue
        for ud in dirs:
            for xi in xis:
                bra = math.sqrt(1.0 + xi * xi)
                queries.append(SymbolQuery(xi=xi, eta=um * bra * ud, alpha_curv=alpha))
    return queries


def ellipticity_margin(wdata, queries, lambda0_probe=0.0):
    """(min over the grid of the smallest eigenvalue of the weighted symbol,
    margin against lambda0_probe * |W^-1|^-2, argmin query)."""
    if not queries:
        raise DomainError("frequency grid is empty")
    if not math.isfinite(wdata.winv_linf) or wdata.winv_linf <= 0:
        raise DegenerateWeightError("weight has singular samples (|W^-1| unbounded)")
    eigs = np.array([weighted_symbol_min_eig(wdata, q) for q in queries])
    k = int(np.argmin(eigs))
    min_eig = float(eigs[k])
    margin = min_eig - lambda0_probe * wdata.winv_linf ** (-2.0)
    return min_eig, margin, queries[k]


def calibrate_lambda0(wdata_family, queries, tol=1e-6):
    """Largest probe with nonnegative margin across the family, by bisection
    to the given tolerance.  The margin is affine in the probe, so the limit
    is min over the family of min_eig * |W^-1|^2."""
    family = list(wdata_family)
    if not family:
        raise DomainError("empty weight family")
    caps = []
    for wd in family:
        min_eig, _, _ = ellipticity_margin(wd, queries)
        caps.append(min_eig * wd.winv_linf ** 2)
    hi = max(caps) + 1.0
    lo = 0.0

    def ok(probe):
        return all(cap - probe >= 0.0 for cap in caps)

    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if ok(mid):
            lo = mid
        else:
            hi = mid
    return lo


def margin_report(wdata, queries, lambda0_probe, grid_spec=None):
    """JSON-ready margin report: grid spec, min eigenvalue, argmin point and
    the calibrated probe margin."""
    min_eig, margin, argmin = ellipticity_margin(wdata, queries, lambda0_probe)
    return {
        "grid": grid_spec or {"n_queries": len(queries)},
        "min_eig": min_eig,
        "argmin": {"xi": argmin.xi, "eta": argmin.eta.tolist(),
                   "alpha": argmin.alpha_curv},
        "lambda0_probe": lambda0_probe,
        "winv_linf": wdata.winv_linf,
        "margin": margin,
    }


def report_to_json(report):
    return json.dumps(report, sort_keys=True, indent=1)
