"""The statistical pipeline: experiment simulation under additive Gaussian
noise, spectral-density priors with sample-size-dependent scaling, the
Gaussian likelihood, preconditioned Crank-Nicolson posterior sampling,
posterior means, Hellinger distances and consistency sweeps.

Noise convention: data live in coordinates of the fixed orthonormal basis of
g (gl_m(R): matrix units row-major, dim m^2; so(m): (E_ij - E_ji)/sqrt(2)
for i < j lexicographic, dim m(m-1)/2); each observation is the g-coordinate
vector of the scattering matrix plus independent standard normal noise per
component with sigma = 1.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import fields as F
from . import transport as T
from .geometry import BoundaryDirection, DomainError, UnitBall

LOG_2PI = math.log(2.0 * math.pi)


@dataclass(frozen=True)
class PriorSpec:
    """Stationary Gaussian field prior of regularity alpha: independent
    complex coefficients with standard deviation base_amplitude * <xi>^-alpha
    per retained torus frequency, one independent draw per g-component."""

    alpha: float
    modes: int = 5
    L: float = 2.0
    base_amplitude: float = 1.0
    structure: str = "skew-symmetric"
    d: int = 3
    m: int = 3

    def __post_init__(self):
        if not self.alpha > self.d / 2.0:
            raise DomainError("prior regularity must exceed d/2 for continuous paths")

    def sigma_per_mode(self):
        """Per-frequency standard deviations (modes^d,), with unpaired edge
        frequencies zeroed (they cannot appear in a real field)."""
        ks = [F.freq_indices(self.modes)] * self.d
        grid = np.stack(np.meshgrid(*ks, indexing="ij"), axis=-1).reshape(-1, self.d)
        xi2 = ((math.pi / self.L) ** 2) * np.einsum("ij,ij->i", grid, grid)
        sig = self.base_amplitude * (1.0 + xi2) ** (-self.alpha / 2.0)
        edge = F._edge_mask((self.modes,) * self.d).reshape(-1)
        sig[edge] = 0.0
        return sig

    def pointwise_variance(self):
        """Truncated spectral sum: the variance of one g-coordinate of a draw
        at any point."""
        return float((self.sigma_per_mode() ** 2).sum())


def _sample_scalar_coeffs(spec, rng):
    """Hermitian-symmetric complex coefficient tensor of one scalar component
    with pointwise variance spec.pointwise_variance()."""
    shape = (spec.modes,) * spec.d
    sig = spec.sigma_per_mode().reshape(shape)
    g = sig * (rng.standard_normal(shape) + 1j * rng.standard_normal(shape))
    # Hermitian halves have variance sigma^2/2 per part; the k/-k pairing in
    # the series restores the factor 2, so the pointwise variance is the
    # plain spectral sum of sigma^2
    return 0.5 * (g + np.conj(F._minus_k(g, spec.d)))


def sample_prior(spec, rng):
    """One draw: independent scalar components in the g basis."""
    dim = F.g_dim(spec.m, spec.structure)
    comps = np.stack([_sample_scalar_coeffs(spec, rng) for _ in range(dim)])
    return F.field_from_component_coeffs(comps, spec.m, spec.d, spec.L, spec.structure)


def scaling_factor(spec, n):
    """Draw-scaling factor n^(-d/(4 alpha + 2 d)) of the sample-size-adapted
    prior."""
    if n < 1:
        raise DomainError("sample size must be >= 1")
    return float(n) ** (-spec.d / (4.0 * spec.alpha + 2.0 * spec.d))


def scale_for_n(spec, n):
    """Prior for sample size n: draws are scaled by scaling_factor(spec, n)."""
    return replace(spec, base_amplitude=spec.base_amplitude * scaling_factor(spec, n))


# ---------------------------------------------------------------------------
# Datasets
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Dataset:
    """Sample of n records (x_i, v_i, y_i) with y in g-coordinates and unit
    noise; xs/vs/ys are stacked arrays."""

    xs: np.ndarray
    vs: np.ndarray
    ys: np.ndarray
    structure: str
    m: int
    noise_sigma: float = 1.0
    truth_id: str = ""

    def __post_init__(self):
        for name in ("xs", "vs", "ys"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=float))
        if not (len(self.xs) == len(self.vs) == len(self.ys)):
            raise DomainError("record arrays must align")
        if self.ys.shape[1] != F.g_dim(self.m, self.structure):
            raise DomainError("y dimension does not match dim g")

    @property
    def n(self):
        return len(self.xs)

    def boundary_directions(self):
        return [BoundaryDirection(x, v) for x, v in zip(self.xs, self.vs)]


def simulate_dataset(phi0, n, rng, cfg=T.SolverConfig(), truth_id=""):
    """Y_i = g-coords of C(X_i, V_i) plus standard normal noise per
    component, directions uniform on the inward boundary bundle."""
    if phi0.structure not in ("general-real", "skew-symmetric"):
        raise DomainError("experiment potentials take values in gl_m(R) or so(m)")
    ball = UnitBall(phi0.d)
    bds = ball.sample_boundary_uniform(n, rng)
    C = T.scattering_matrices(phi0, bds, cfg)
    coords = F.matrix_to_coords(C, phi0.structure)
    ys = coords + rng.standard_normal(coords.shape)
    return Dataset(xs=np.stack([bd.x for bd in bds]),
                   vs=np.stack([bd.v for bd in bds]),
                   ys=ys, structure=phi0.structure, m=phi0.m, truth_id=truth_id)


def dataset_to_jsonl(ds, path, float_format="%.17g"):
    import json

    def fmt(val):
        return [float(float_format % x) for x in val]

    with open(path, "w") as fh:
        fh.write(json.dumps({"structure": ds.structure, "m": ds.m,
                             "noise_sigma": ds.noise_sigma,
                             "truth_id": ds.truth_id}, sort_keys=True))
        fh.write("\n")
        for x, v, y in zip(ds.xs, ds.vs, ds.ys):
            fh.write(json.dumps({"x": fmt(x), "v": fmt(v), "y": fmt(y)},
                                sort_keys=True))
            fh.write("\n")


def dataset_from_jsonl(path):
    import json

    with open(path) as fh:
        header = json.loads(fh.readline())
        xs, vs, ys = [], [], []
        for line in fh:
            if not line.strip():
                continue
            obj = json.loads(line)
            xs.append(obj["x"])
            vs.append(obj["v"])
            ys.append(obj["y"])
    return Dataset(xs=np.array(xs), vs=np.array(vs), ys=np.array(ys),
                   structure=header["structure"], m=int(header["m"]),
                   noise_sigma=float(header.get("noise_sigma", 1.0)),
                   truth_id=header.get("truth_id", ""))


# ---------------------------------------------------------------------------
# Likelihood (with a per-dataset phase cache)
# ---------------------------------------------------------------------------


class ScatteringModel:
    """Scattering forward map restricted to a fixed direction set, with the
    chord phase geometry precomputed once; evaluating a new field is then a
    single batched contraction (BLAS) plus the RK4 sweep.

    All chords share one (even) step count so the sweep runs in lockstep;
    per-chord spacing keeps the grid exact.  The field-independent phase
    tensor is cached whole when it fits the memory budget (it dominates the
    per-call cost otherwise).
    """

    def __init__(self, xs, vs, d, m, L, modes, cfg=T.SolverConfig(),
                 phase_budget_mb=600):
        ball = UnitBall(d)
        self.xs = np.asarray(xs, dtype=float)
        self.vs = np.asarray(vs, dtype=float)
        self.taus = ball.exit_time_batch(self.xs, self.vs)
        self.m = m
        n = max(cfg.min_steps,
                math.ceil(cfg.steps_per_unit_length * max(float(self.taus.max()), 1e-9)))
        n += n % 2
        self.n_steps = n
        self.dts = self.taus / n
        self.xi = F.zero_field(d, m, modes, L).xi()
        # base and per-half-step phases are field-independent
        om = self.xi @ self.vs.T
        self._base = np.exp(1j * (self.xi @ self.xs.T))
        self._step = np.exp(1j * om * (self.dts / 2.0)[None, :])
        P = 2 * n + 1
        nbytes = 16 * self.xi.shape[0] * self.n * P
        self._E = self._build_phases() if nbytes <= phase_budget_mb * 1e6 else None

    @property
    def n(self):
        return self.xs.shape[0]

    def _build_phases(self):
        P = 2 * self.n_steps + 1
        E = np.broadcast_to(self._step[:, :, None],
                            (self.xi.shape[0], self.n, P)).copy()
        E[:, :, 0] = self._base
        np.multiply.accumulate(E, axis=2, out=E)
        return E

    def scattering(self, field):
        """C(x_i, v_i) for the given potential, (n, m, m)."""
        K = self.xi.shape[0]
        flat = field.flat_coeffs().reshape(K, -1)
        P = 2 * self.n_steps + 1
        E = self._E if self._E is not None else self._build_phases()
        A_half = (flat.T @ E.reshape(K, self.n * P)).reshape(-1, self.n, P)
        A_half = np.moveaxis(A_half, 0, 2).reshape(self.n, P, self.m, self.m)
        return T.rk4_backward(A_half, self.dts)

    def log_likelihood(self, field, ys):
        coords = F.matrix_to_coords(self.scattering(field), field.structure)
        dim = ys.shape[1]
        return float(-0.5 * ((coords - ys) ** 2).sum() - self.n * dim / 2.0 * LOG_2PI)


def log_likelihood(phi, ds, cfg=T.SolverConfig(), model=None):
    """Sum over records of -|coords(C(x,v)) - y|^2/2 - (dim g/2) log(2 pi);
    additive over concatenated datasets."""
    if ds.n == 0:
        return 0.0
    if ds.structure != phi.structure or ds.m != phi.m:
        raise DomainError("dataset and potential structures do not match")
    if model is None:
        model = ScatteringModel(ds.xs, ds.vs, phi.d, phi.m, phi.L, phi.modes, cfg)
    return model.log_likelihood(phi, ds.ys)


# ---------------------------------------------------------------------------
# pCN sampling
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ChainConfig:
    beta: float = 0.15
    n_iter: int = 600
    burn_in: int = 150
    thin: int = 5
    seed: int = 0

    def __post_init__(self):
        if not 0.0 < self.beta <= 1.0:
            raise DomainError("pCN step must satisfy 0 < beta <= 1")
        if not 0 <= self.burn_in < self.n_iter:
            raise DomainError("burn-in must be shorter than the chain")
        if self.thin < 1:
            raise DomainError("thinning must be >= 1")


@dataclass
class ChainState:
    """pCN sampler state (for checkpointing)."""

    coeffs: np.ndarray
    loglik: float
    iteration: int
    n_accept: int


@dataclass
class ChainResult:
    samples: list
    acceptance_rate: float
    logliks: np.ndarray
    state: ChainState = field(default=None)


def pcn_chain(cfg, spec, ds, rng, cfg_solver=T.SolverConfig(), init=None):
    """Preconditioned Crank-Nicolson chain targeting the posterior for the
    Gaussian prior `spec` (already scaled for n): proposals
    phi' = sqrt(1-beta^2) phi + beta Xi with Xi a fresh prior draw, accepted
    with probability min(1, exp(loglik' - loglik)).  Emits thinned
    post-burn-in samples."""
    has_data = ds is not None and ds.n > 0
    model = None
    if has_data:
        model = ScatteringModel(ds.xs, ds.vs, spec.d, spec.m, spec.L, spec.modes,
                                cfg_solver)
    if init is None:
        phi = F.zero_field(spec.d, spec.m, spec.modes, spec.L, spec.structure)
    else:
        phi = init
    loglik = model.log_likelihood(phi, ds.ys) if has_data else 0.0
    root = math.sqrt(1.0 - cfg.beta ** 2)
    samples = []
    logliks = np.empty(cfg.n_iter)
    n_accept = 0
    for it in range(cfg.n_iter):
        xi_draw = sample_prior(spec, rng)
        prop = root * phi + cfg.beta * xi_draw
        loglik_prop = model.log_likelihood(prop, ds.ys) if has_data else 0.0
        if math.log(rng.uniform()) < loglik_prop - loglik:
            phi, loglik = prop, loglik_prop
            n_accept += 1
        logliks[it] = loglik
        if it >= cfg.burn_in and (it - cfg.burn_in) % cfg.thin == 0:
            samples.append(phi)
    state = ChainState(coeffs=phi.coeffs.copy(), loglik=loglik,
                       iteration=cfg.n_iter, n_accept=n_accept)
    return ChainResult(samples=samples, acceptance_rate=n_accept / cfg.n_iter,
                       logliks=logliks, state=state)


# ---------------------------------------------------------------------------
# Posterior summaries
# ---------------------------------------------------------------------------


@dataclass
class PosteriorSummary:
    mean_field: object
    l2_error_vs_truth: float
    acceptance_rate: float
    ess_proxy: float

    def __post_init__(self):
        if not (math.isnan(self.acceptance_rate) or 0.0 <= self.acceptance_rate <= 1.0):
            raise DomainError("acceptance rate must lie in [0, 1]")


def _ess_proxy(series):
    """Initial-positive-sequence effective sample size of a scalar series."""
    x = np.asarray(series, dtype=float)
    n = len(x)
    if n < 4 or np.var(x) == 0:
        return float(n)
    x = x - x.mean()
    acf = np.correlate(x, x, mode="full")[n - 1:] / (np.arange(n, 0, -1) * x.var())
    s = 0.0
    for k in range(1, n):
        if acf[k] <= 0:
            break
        s += acf[k]
    return float(n / (1.0 + 2.0 * s))


def posterior_mean(samples, truth=None, acceptance_rate=float("nan")):
    """Coefficientwise average of the samples; L2 error on the ball against a
    supplied truth."""
    if not samples:
        raise DomainError("need at least one posterior sample")
    acc = samples[0].coeffs.copy()
    for s in samples[1:]:
        acc = acc + s.coeffs
    mean = replace(samples[0], coeffs=acc / len(samples))
    err = float("nan")
    if truth is not None:
        err = F.l2_norm_on_ball(mean - truth)
    probe_idx = samples[0].coeffs.size // 2
    series = [float(np.real(s.coeffs.reshape(-1)[probe_idx])) for s in samples]
    return PosteriorSummary(mean_field=mean, l2_error_vs_truth=err,
                            acceptance_rate=acceptance_rate,
                            ess_proxy=_ess_proxy(series))


# ---------------------------------------------------------------------------
# Hellinger distance
# ---------------------------------------------------------------------------


def hellinger(phi, psi, n_mc=400, rng=None, cfg=T.SolverConfig()):
    """Monte-Carlo Hellinger distance between the single-observation laws:
    sqrt(1 - mean exp(-|C_phi - C_psi|_F^2 / 8)) over uniformly sampled
    directions (the Gaussian location family has this closed form per
    direction)."""
    if n_mc < 100:
        raise DomainError("need n_mc >= 100 directions")
    rng = np.random.default_rng(0) if rng is None else rng
    ball = UnitBall(phi.d)
    bds = ball.sample_boundary_uniform(n_mc, rng)
    Cp = T.scattering_matrices(phi, bds, cfg)
    Cq = T.scattering_matrices(psi, bds, cfg)
    gap2 = (np.abs(Cp - Cq) ** 2).sum(axis=(-2, -1))
    return float(np.sqrt(max(0.0, 1.0 - np.exp(-gap2 / 8.0).mean())))


# ---------------------------------------------------------------------------
# Consistency sweep
# ---------------------------------------------------------------------------


def tuned_chain_config(n, base=None):
    """Per-sample-size pCN tuning: the step shrinks like n^-1/2 (posterior
    concentration) and the chain grows with n; anchored at n = 250."""
    base = ChainConfig() if base is None else base
    beta = min(0.3, max(0.08, base.beta * math.sqrt(250.0 / n)))
    n_iter = int(base.n_iter + n // 4)
    return replace(base, beta=beta, n_iter=n_iter, burn_in=n_iter // 3)


def consistency_sweep(phi0, n_grid, seeds, spec, chain_cfg, cfg=T.SolverConfig(),
                      tune=None):
    """For each (n, seed): simulate a dataset from phi0, run the pCN chain
    under the n-scaled prior and record the posterior-mean L2 error.  Row
    schema: n, seed, alpha, beta, accept_rate, l2_error.  `tune` optionally
    maps n to a ChainConfig (tuned_chain_config is the stock rule)."""
    if list(n_grid) != sorted(n_grid):
        raise DomainError("n grid must be increasing")
    rows = []
    for n in n_grid:
        spec_n = scale_for_n(spec, n)
        ccfg = chain_cfg if tune is None else tune(n)
        for seed in seeds:
            rng = np.random.default_rng(np.random.SeedSequence([int(seed), int(n)]))
            ds = simulate_dataset(phi0, n, rng, cfg, truth_id="sweep-truth")
            res = pcn_chain(ccfg, spec_n, ds, rng, cfg_solver=cfg)
            summ = posterior_mean(res.samples, truth=phi0,
                                  acceptance_rate=res.acceptance_rate)
            rows.append({
                "n": n,
                "seed": int(seed),
                "alpha": spec.alpha,
                "beta": ccfg.beta,
                "accept_rate": res.acceptance_rate,
                "l2_error": summ.l2_error_vs_truth,
            })
    return rows
