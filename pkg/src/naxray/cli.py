"""Command-line entry point: forward runs, residual/margin/identity checks,
stability fits, symbol margins, experiment simulation, reconstruction and
consistency sweeps.

Conventions shared by every subcommand:
  * flat INI config (key = value under [section] headers), section named
    after the subcommand;
  * all randomness derives from one global seed (--seed beats the config)
    through numpy SeedSequence spawning in a fixed documented order;
  * floating-point output is printed with 17 significant digits, writes are
    atomic (temp file + rename), and a rerun with identical config and seed
    produces byte-identical files;
  * exit codes: 0 pass, 1 tolerance/assertion failure, 2 input/usage error.
"""

from __future__ import annotations

import argparse
import configparser
import json
import math
import os
import sys
import tempfile

import numpy as np

from . import bayes as B
from . import estimates as E
from . import fields as F
from . import normalop as N
from . import transport as T
from .geometry import BoundaryDirection, DomainError, RadialSquared, UnitBall

FLOAT_FMT = "%.17g"


class UsageError(Exception):
    """Bad config, malformed input file or invalid combination (exit 2)."""


class ToleranceFailure(Exception):
    """A configured tolerance or assertion was violated (exit 1)."""


# ---------------------------------------------------------------------------
# Small IO helpers
# ---------------------------------------------------------------------------


def _fmt(x):
    if isinstance(x, float):
        return FLOAT_FMT % x
    return str(x)


def _atomic_write(path, text):
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=os.path.dirname(os.path.abspath(path)))
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_csv(path, header, rows):
    lines = [",".join(header)]
    for row in rows:
        lines.append(",".join(_fmt(row[h]) for h in header))
    _atomic_write(path, "\n".join(lines) + "\n")


def _round17(obj):
    if isinstance(obj, float):
        return float(FLOAT_FMT % obj)
    if isinstance(obj, dict):
        return {k: _round17(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_round17(v) for v in obj]
    return obj


def write_json(path, obj):
    _atomic_write(path, json.dumps(_round17(obj), sort_keys=True, indent=1) + "\n")


class Section:
    """Typed access to one config section with usage-error reporting."""

    def __init__(self, parser, name):
        if not parser.has_section(name):
            raise UsageError(f"config is missing the [{name}] section")
        self.name = name
        self.sec = parser[name]

    def has(self, key):
        return key in self.sec

    def get(self, key, default=None):
        if key not in self.sec:
            if default is None:
                raise UsageError(f"[{self.name}] is missing key {key!r}")
            return default
        return self.sec[key].strip()

    def getint(self, key, default=None):
        try:
            return int(self.get(key, None if default is None else str(default)))
        except ValueError as exc:
            raise UsageError(f"[{self.name}] {key} must be an integer") from exc

    def getfloat(self, key, default=None):
        try:
            return float(self.get(key, None if default is None else str(default)))
        except ValueError as exc:
            raise UsageError(f"[{self.name}] {key} must be a number") from exc

    def getbool(self, key, default=False):
        val = self.get(key, str(default)).lower()
        if val in ("1", "true", "yes", "on"):
            return True
        if val in ("0", "false", "no", "off"):
            return False
        raise UsageError(f"[{self.name}] {key} must be a boolean")

    def getlist(self, key, cast=str, default=None):
        raw = self.get(key, default)
        if raw == "":
            return []
        try:
            return [cast(tok.strip()) for tok in raw.split(",") if tok.strip() != ""]
        except ValueError as exc:
            raise UsageError(f"[{self.name}] {key} has a malformed list") from exc


def _load_config(path):
    parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    try:
        with open(path) as fh:
            parser.read_file(fh)
    except OSError as exc:
        raise UsageError(f"cannot read config {path}: {exc}") from exc
    except configparser.Error as exc:
        raise UsageError(f"malformed config {path}: {exc}") from exc
    return parser


def _out_path(out_dir, name):
    return os.path.join(out_dir, name)


def _load_field(path):
    try:
        return F.load_field(path)
    except F.FieldFormatError as exc:
        raise UsageError(str(exc)) from exc


def _solver_cfg(sec):
    return T.SolverConfig(steps_per_unit_length=sec.getint("steps_per_unit_length", 256))


def _spawn_rngs(seed, n):
    """Documented stream splitting: child i of SeedSequence(seed) drives the
    i-th randomised stage of a command."""
    children = np.random.SeedSequence(seed).spawn(n)
    return [np.random.default_rng(c) for c in children]


def _builtin_field(name):
    """Fixed built-in demo fields (documented in the README); independent of
    the command seed so 'builtin:' names always denote the same artifact."""
    rng = np.random.default_rng(np.random.SeedSequence([1234, 77]))
    if name == "demo-skew3":
        # spectral decay matched to the default prior regularity, so the
        # demo truth is plausible under the experiment's prior
        f = F.random_field(3, 3, 5, rng, structure="skew-symmetric", decay=4.5)
        return F.scale_to_linf(f, 0.9)
    if name == "demo-scalar":
        f = F.random_field(3, 1, 6, rng, structure="general-real", decay=2.0)
        return F.scale_to_linf(f, 0.8)
    if name == "zero-scalar":
        return F.zero_field(3, 1, 6)
    raise UsageError(f"unknown builtin field {name!r}")


def _field_from_spec(sec, key):
    spec = sec.get(key)
    if spec.startswith("builtin:"):
        return _builtin_field(spec.split(":", 1)[1])
    return _load_field(spec)


# ---------------------------------------------------------------------------
# forward
# ---------------------------------------------------------------------------


def _directions(sec, rng, d):
    if sec.has("directions_file"):
        path = sec.get("directions_file")
        try:
            bds = []
            with open(path) as fh:
                for line in fh:
                    if line.strip():
                        obj = json.loads(line)
                        bds.append(BoundaryDirection(np.array(obj["x"]),
                                                     np.array(obj["v"])))
        except (OSError, ValueError, KeyError, DomainError) as exc:
            raise UsageError(f"bad directions file {path}: {exc}") from exc
        if not bds:
            raise UsageError("directions file is empty")
        return bds
    n = sec.getint("n_directions")
    if n < 1:
        raise UsageError("n_directions must be >= 1")
    return UnitBall(d).sample_boundary_uniform(n, rng)


def cmd_forward(cfgp, seed, out_dir):
    sec = Section(cfgp, "forward")
    cfg = _solver_cfg(sec)
    (rng,) = _spawn_rngs(seed, 1)
    field = _field_from_spec(sec, "field")
    bds = _directions(sec, rng, field.d)
    records = T.scattering_data(field, bds, cfg)
    extra = None
    if field.m == 1:
        # abelian check columns: log of the datum against the chord quadrature
        ball = UnitBall(field.d)
        logs, quads = [], []
        for bd, rec in zip(bds, records):
            seg = ball.segment(bd, cfg.steps_per_unit_length, cfg.min_steps)
            val = T.weighted_xray(None, field, bd, cfg, seg=seg)[0, 0]
            quads.append(float(FLOAT_FMT % float(val.real)))
            logs.append(float(FLOAT_FMT % float(np.log(rec.value[0, 0]).real)))
        extra = {"log_value": logs, "xray_phi": quads}
    os.makedirs(out_dir, exist_ok=True)
    out = _out_path(out_dir, sec.get("output", "scattering.jsonl"))
    T.records_to_jsonl(records, out, extra_columns=extra)
    return 0


# ---------------------------------------------------------------------------
# pseudolin-check
# ---------------------------------------------------------------------------


def _random_pair(d, m, modes, amplitude, structure, rng):
    phi = F.scale_to_linf(F.random_field(d, m, modes, rng, structure=structure), amplitude)
    psi = F.scale_to_linf(F.random_field(d, m, modes, rng, structure=structure), amplitude)
    return phi, psi


def cmd_pseudolin_check(cfgp, seed, out_dir):
    sec = Section(cfgp, "pseudolin-check")
    cfg = _solver_cfg(sec)
    tol = sec.getfloat("tolerance", 1e-5)
    min_order = sec.getfloat("min_order", 2.0)
    delta = sec.getfloat("delta", 0.25)
    rng_fields, rng_dirs = _spawn_rngs(seed, 2)
    if sec.has("field_pairs"):
        spec = sec.getlist("field_pairs")
        if not spec:
            raise UsageError("field_pairs list is empty")
        pairs = []
        for tok in spec:
            try:
                a, b = tok.split(":")
            except ValueError as exc:
                raise UsageError("field_pairs entries must be 'phi.json:psi.json'") from exc
            pairs.append((_load_field(a.strip()), _load_field(b.strip())))
    else:
        n_pairs = sec.getint("n_pairs", 20)
        if n_pairs < 1:
            raise UsageError("n_pairs must be >= 1")
        d = sec.getint("d", 3)
        m = sec.getint("m", 2)
        modes = sec.getint("modes", 6)
        amp = sec.getfloat("amplitude", 1.0)
        structure = sec.get("structure", "general-real")
        pairs = [_random_pair(d, m, modes, amp, structure, rng_fields)
                 for _ in range(n_pairs)]
    n_dirs = sec.getint("n_dirs_per_pair", 3)
    rows = []
    worst = 0.0
    worst_order = math.inf
    for i, (phi, psi) in enumerate(pairs):
        bds = UnitBall(phi.d).sample_boundary_uniform(n_dirs, rng_dirs)
        for j, bd in enumerate(bds):
            r1 = T.pseudolin_residual(phi, psi, bd, delta, cfg)
            r2 = T.pseudolin_residual(phi, psi, bd, delta, cfg.halved())
            order = math.log2(r1 / r2) if r2 > 0 else math.inf
            rows.append({"pair_id": i, "dir_id": j, "residual_coarse": r1,
                         "residual_fine": r2, "order": order})
            worst = max(worst, r1)
            worst_order = min(worst_order, order)
    os.makedirs(out_dir, exist_ok=True)
    write_csv(_out_path(out_dir, "pseudolin_residuals.csv"),
              ["pair_id", "dir_id", "residual_coarse", "residual_fine", "order"], rows)
    passed = worst <= tol and worst_order >= min_order
    write_json(_out_path(out_dir, "pseudolin_summary.json"), {
        "max_residual": worst, "min_order": worst_order,
        "tolerance": tol, "required_order": min_order, "pass": bool(passed),
    })
    if not passed:
        raise ToleranceFailure(
            f"pseudolin residual {worst:.3e} (tol {tol:.3e}) or order "
            f"{worst_order:.2f} (required {min_order})")
    return 0


# ---------------------------------------------------------------------------
# bounds-check
# ---------------------------------------------------------------------------


def cmd_bounds_check(cfgp, seed, out_dir):
    sec = Section(cfgp, "bounds-check")
    cfg = _solver_cfg(sec)
    margin_floor = sec.getfloat("margin_floor", -1e-8)
    skew_tol = sec.getfloat("skew_norm_tolerance", 1e-9)
    rng_fields, rng_dirs = _spawn_rngs(seed, 2)
    atts = []
    if sec.has("fields"):
        paths = sec.getlist("fields")
        if not paths:
            raise UsageError("fields list is empty")
        atts = [(os.path.basename(p), F.Attenuation(_load_field(p))) for p in paths]
    else:
        n_att = sec.getint("n_attenuations", 50)
        if n_att < 1:
            raise UsageError("n_attenuations must be >= 1")
        d = sec.getint("d", 3)
        m = sec.getint("m", 2)
        modes = sec.getint("modes", 5)
        amp = sec.getfloat("amplitude", 1.0)
        with_one_forms = sec.getbool("include_one_forms", True)
        for i in range(n_att):
            kind = i % 3
            if kind == 0:
                phi = F.scale_to_linf(F.random_field(
                    d, m, modes, rng_fields, structure="general-real"), amp)
                atts.append((f"potential-{i}", F.Attenuation(phi)))
            elif kind == 1:
                phi = F.scale_to_linf(F.random_field(
                    d, m, modes, rng_fields, structure="skew-symmetric"), amp)
                atts.append((f"skew-{i}", F.Attenuation(phi)))
            elif with_one_forms:
                phi = F.scale_to_linf(F.random_field(
                    d, m, modes, rng_fields, structure="general-real"), amp)
                one = tuple(
                    F.scale_to_linf(F.random_field(
                        d, m, modes, rng_fields, structure="general-real"), amp / d)
                    for _ in range(d))
                atts.append((f"one-form-{i}", F.Attenuation(phi, one)))
            else:
                phi = F.scale_to_linf(F.random_field(
                    d, m, modes, rng_fields, structure="general-real"), amp)
                atts.append((f"potential-{i}", F.Attenuation(phi)))
    n_dirs = sec.getint("n_dirs", 20)
    rows = []
    worst_margin = math.inf
    worst_defect = 0.0
    for name, att in atts:
        margin = E.check_linf_bound(att, n_dirs, cfg, rng_dirs)
        row = {"attenuation": name, "margin": margin, "skew_norm_defect": ""}
        if att.phi.structure == "skew-symmetric" and att.one_form is None:
            defect = E.max_path_norm_defect(att, min(n_dirs, 10), cfg, rng_dirs)
            row["skew_norm_defect"] = defect
            worst_defect = max(worst_defect, defect)
        rows.append(row)
        worst_margin = min(worst_margin, margin)
    os.makedirs(out_dir, exist_ok=True)
    write_csv(_out_path(out_dir, "bounds_margins.csv"),
              ["attenuation", "margin", "skew_norm_defect"], rows)
    passed = worst_margin >= margin_floor and worst_defect <= skew_tol
    write_json(_out_path(out_dir, "bounds_summary.json"), {
        "min_margin": worst_margin, "margin_floor": margin_floor,
        "max_skew_norm_defect": worst_defect, "skew_norm_tolerance": skew_tol,
        "pass": bool(passed),
    })
    if not passed:
        raise ToleranceFailure(f"bound margin {worst_margin:.3e} below floor "
                               f"{margin_floor:.3e} or skew defect {worst_defect:.3e}")
    return 0


# ---------------------------------------------------------------------------
# layer-check
# ---------------------------------------------------------------------------


def cmd_layer_check(cfgp, seed, out_dir):
    sec = Section(cfgp, "layer-check")
    base_spl = sec.getint("steps_per_unit_length", 64)
    n_trials = sec.getint("n_trials", 10)
    if n_trials < 1:
        raise UsageError("n_trials must be >= 1")
    min_order = sec.getfloat("min_order", 1.0)
    modes = sec.getint("modes", 6)
    d = sec.getint("d", 3)
    rng_fields, rng_geo = _spawn_rngs(seed, 2)
    rho = RadialSquared()
    rows = []
    level_sums = np.zeros(3)
    for trial in range(n_trials):
        f = F.scale_to_linf(F.random_field(d, 1, modes, rng_fields,
                                           structure="general-real"), 1.0)
        c = float(rng_geo.uniform(0.35, 0.85))
        x = rng_geo.standard_normal(d)
        x *= math.sqrt(c) / np.linalg.norm(x)
        v = rng_geo.standard_normal(d)
        v /= np.linalg.norm(v)
        if float(rho.grad(x) @ v) > 0:
            v = -v
        res = []
        for lvl in range(3):
            cfg_l = T.SolverConfig(base_spl * 2 ** lvl)
            res.append(E.layer_identity_residual(None, f, c, rho, (x, v), cfg_l))
        level_sums += np.array(res)
        order = math.log2(res[0] / res[2]) / 2.0 if res[2] > 0 else math.inf
        rows.append({"trial": trial, "c": c, "residual_l0": res[0],
                     "residual_l1": res[1], "residual_l2": res[2], "order": order})
    # the sharp-mask error oscillates with node alignment per chord, so the
    # convergence order is measured on the mean residual across trials
    mean_order = math.log2(level_sums[0] / level_sums[2]) / 2.0 \
        if level_sums[2] > 0 else math.inf
    os.makedirs(out_dir, exist_ok=True)
    write_csv(_out_path(out_dir, "layer_residuals.csv"),
              ["trial", "c", "residual_l0", "residual_l1", "residual_l2", "order"],
              rows)
    passed = mean_order >= min_order
    write_json(_out_path(out_dir, "layer_summary.json"), {
        "mean_order": mean_order, "required_order": min_order, "pass": bool(passed),
        "mean_residuals": [s / n_trials for s in level_sums.tolist()],
    })
    if not passed:
        raise ToleranceFailure(f"layer identity order {mean_order:.2f} "
                               f"below {min_order}")
    return 0


# ---------------------------------------------------------------------------
# stability-fit
# ---------------------------------------------------------------------------


def _read_pairs_csv(path):
    try:
        with open(path) as fh:
            header = fh.readline().strip().split(",")
            di = header.index("data_dist")
            pi = header.index("pot_dist")
            pairs = []
            for line in fh:
                if line.strip():
                    toks = line.strip().split(",")
                    pairs.append((float(toks[di]), float(toks[pi])))
    except (OSError, ValueError) as exc:
        raise UsageError(f"bad pairs file {path}: {exc}") from exc
    if not pairs:
        raise UsageError("pairs file has no rows")
    return pairs


def cmd_stability_fit(cfgp, seed, out_dir):
    sec = Section(cfgp, "stability-fit")
    os.makedirs(out_dir, exist_ok=True)
    if sec.has("pairs_file"):
        pairs = _read_pairs_csv(sec.get("pairs_file"))
        rows = [{"pair_id": i, "ck_norm_phi": "", "ck_norm_psi": "",
                 "data_dist": a, "pot_dist": b} for i, (a, b) in enumerate(pairs)]
    else:
        cfg = _solver_cfg(sec)
        n_base = sec.getint("n_base_pairs", 9)
        d = sec.getint("d", 3)
        m = sec.getint("m", 3)
        modes = sec.getint("modes", 5)
        ck_radius = sec.getfloat("ck_ball_radius", 2.0)
        n_dirs = sec.getint("n_dirs", 150)
        scales = sec.getlist("scales", float, "1,0.5,0.25,0.125,0.0625,0.03125")
        rng_fields, rng_dirs = _spawn_rngs(seed, 2)
        field_pairs = []
        for _ in range(n_base):
            phi = F.scale_to_ck(F.random_field(d, m, modes, rng_fields,
                                               structure="skew-symmetric"), 2, ck_radius)
            delta_f = F.scale_to_ck(F.random_field(d, m, modes, rng_fields,
                                                   structure="skew-symmetric"), 2,
                                    ck_radius / 2.0)
            for t in scales:
                field_pairs.append((phi, phi + float(t) * delta_f))
        rows = E.stability_sweep(field_pairs, n_dirs, cfg, rng_dirs)
        pairs = [(r["data_dist"], r["pot_dist"]) for r in rows]
    write_csv(_out_path(out_dir, "stability_pairs.csv"),
              ["pair_id", "ck_norm_phi", "ck_norm_psi", "data_dist", "pot_dist"], rows)
    fit = E.hoelder_fit(pairs)
    rho = E.spearman([a for a, _ in pairs], [b for _, b in pairs])
    write_json(_out_path(out_dir, "stability_fit.json"), {
        "mu_hat": fit.mu_hat, "c_hat": fit.c_hat, "r2": fit.r2,
        "envelope_mu": fit.envelope_mu, "envelope_c": fit.envelope_c,
        "spearman": rho, "n_pairs": len(pairs),
    })
    return 0


# ---------------------------------------------------------------------------
# symbol-check
# ---------------------------------------------------------------------------


def cmd_symbol_check(cfgp, seed, out_dir):
    sec = Section(cfgp, "symbol-check")
    d = sec.getint("d", 3)
    m = sec.getint("m", 1)
    n_sphere = sec.getint("n_sphere", 64)
    n_u_mag = sec.getint("n_u_mag", 25)
    n_u_dir = sec.getint("n_u_dir", 20)
    n_xi = sec.getint("n_xi", 5)
    alpha = sec.getfloat("alpha_curv", 1.0)
    family_size = sec.getint("family_size", 8)
    (rng,) = _spawn_rngs(seed, 1)
    queries = N.reduced_query_grid(d, n_u_mag, n_u_dir, n_xi, alpha=alpha)
    wd = N.identity_weight_data(d, n_sphere, m)
    min_eig, _, _ = N.ellipticity_margin(wd, queries)
    t = sec.getfloat("homogeneity_scale", 1.7)
    min_eig_t, _, _ = N.ellipticity_margin(wd.scaled(t), queries)
    hom_defect = abs(min_eig_t - t * t * min_eig) / (t * t * min_eig)
    family = []
    for _ in range(family_size):
        diag = rng.uniform(0.5, 2.0, m)
        Q = np.linalg.qr(rng.standard_normal((m, m))
                         + 1j * rng.standard_normal((m, m)))[0]
        Wm = Q @ np.diag(diag) @ Q.conj().T
        family.append(N.make_weight_data(lambda o, Wm=Wm: Wm, d, n_sphere, m))
    lam0 = N.calibrate_lambda0(family, queries)
    report = N.margin_report(wd, queries, lam0, grid_spec={
        "n_queries": len(queries), "n_sphere": n_sphere,
        "n_u_mag": n_u_mag, "n_u_dir": n_u_dir, "n_xi": n_xi})
    report["homogeneity_defect"] = hom_defect
    report["calibrated_lambda0"] = lam0
    os.makedirs(out_dir, exist_ok=True)
    write_json(_out_path(out_dir, "symbol_margin.json"), report)
    if min_eig <= 0 or hom_defect > sec.getfloat("homogeneity_tolerance", 1e-12):
        raise ToleranceFailure(f"symbol min eigenvalue {min_eig:.3e} or "
                               f"homogeneity defect {hom_defect:.3e}")
    return 0


# ---------------------------------------------------------------------------
# simulate / reconstruct / sweep
# ---------------------------------------------------------------------------


def cmd_simulate(cfgp, seed, out_dir):
    sec = Section(cfgp, "simulate")
    cfg = _solver_cfg(sec)
    n = sec.getint("n", 500)
    if n < 1:
        raise UsageError("n must be >= 1")
    (rng,) = _spawn_rngs(seed, 1)
    truth = _field_from_spec(sec, "truth_field")
    ds = B.simulate_dataset(truth, n, rng, cfg, truth_id=sec.get("truth_id", "truth"))
    os.makedirs(out_dir, exist_ok=True)
    B.dataset_to_jsonl(ds, _out_path(out_dir, sec.get("output", "dataset.jsonl")))
    return 0


def _chain_cfg(sec):
    return B.ChainConfig(
        beta=sec.getfloat("beta", 0.15),
        n_iter=sec.getint("n_iter", 600),
        burn_in=sec.getint("burn_in", 150),
        thin=sec.getint("thin", 5),
        seed=0,
    )


def cmd_reconstruct(cfgp, seed, out_dir):
    sec = Section(cfgp, "reconstruct")
    cfg = _solver_cfg(sec)
    try:
        ds = B.dataset_from_jsonl(sec.get("dataset"))
    except (OSError, ValueError, KeyError) as exc:
        raise UsageError(f"bad dataset file: {exc}") from exc
    spec = B.PriorSpec(
        alpha=sec.getfloat("alpha", 4.5),
        modes=sec.getint("modes", 5),
        L=sec.getfloat("box_half_width", 2.0),
        base_amplitude=sec.getfloat("base_amplitude", 1.0),
        structure=ds.structure, d=sec.getint("d", 3), m=ds.m)
    spec_n = B.scale_for_n(spec, ds.n)
    chain_cfg = _chain_cfg(sec)
    (rng,) = _spawn_rngs(seed, 1)
    res = B.pcn_chain(chain_cfg, spec_n, ds, rng, cfg_solver=cfg)
    truth = None
    if sec.has("truth_field"):
        truth = _field_from_spec(sec, "truth_field")
    summ = B.posterior_mean(res.samples, truth=truth,
                            acceptance_rate=res.acceptance_rate)
    os.makedirs(out_dir, exist_ok=True)
    F.save_field(summ.mean_field, _out_path(out_dir, "posterior_mean"))
    last = F.PotentialField(spec.d, spec.m, spec.L, spec.structure, res.state.coeffs)
    F.save_field(last, _out_path(out_dir, "chain_last"))
    write_json(_out_path(out_dir, "chain_state.json"), {
        "iteration": res.state.iteration,
        "n_accept": res.state.n_accept,
        "loglik": res.state.loglik,
        "beta": chain_cfg.beta, "thin": chain_cfg.thin,
        "burn_in": chain_cfg.burn_in, "seed": seed,
    })
    write_json(_out_path(out_dir, "reconstruct_summary.json"), {
        "n": ds.n, "alpha": spec.alpha, "beta": chain_cfg.beta,
        "n_iter": chain_cfg.n_iter, "n_samples": len(res.samples),
        "acceptance_rate": summ.acceptance_rate,
        "ess_proxy": summ.ess_proxy,
        "l2_error_vs_truth": summ.l2_error_vs_truth,
    })
    return 0


def cmd_sweep(cfgp, seed, out_dir):
    sec = Section(cfgp, "sweep")
    cfg = _solver_cfg(sec)
    truth = _field_from_spec(sec, "truth_field")
    n_grid = sec.getlist("n_grid", int, "250,500,1000,2000")
    seeds = sec.getlist("seeds", int, "0,1,2,3,4")
    if not n_grid or not seeds:
        raise UsageError("sweep needs nonempty n_grid and seeds")
    spec = B.PriorSpec(
        alpha=sec.getfloat("alpha", 4.5),
        modes=sec.getint("modes", 5),
        L=sec.getfloat("box_half_width", 2.0),
        base_amplitude=sec.getfloat("base_amplitude", 1.0),
        structure=truth.structure, d=truth.d, m=truth.m)
    chain_cfg = _chain_cfg(sec)
    tune = None
    if sec.getbool("tuned", True):
        tune = lambda n: B.tuned_chain_config(n, chain_cfg)  # noqa: E731
    rows = B.consistency_sweep(truth, n_grid, seeds, spec, chain_cfg, cfg, tune=tune)
    os.makedirs(out_dir, exist_ok=True)
    write_csv(_out_path(out_dir, "sweep.csv"),
              ["n", "seed", "alpha", "beta", "accept_rate", "l2_error"], rows)
    medians = {}
    for n in n_grid:
        errs = sorted(r["l2_error"] for r in rows if r["n"] == n)
        medians[str(n)] = errs[len(errs) // 2] if len(errs) % 2 else \
            0.5 * (errs[len(errs) // 2 - 1] + errs[len(errs) // 2])
    write_json(_out_path(out_dir, "sweep_summary.json"), {
        "median_l2_error": medians, "n_grid": list(n_grid), "seeds": list(seeds),
    })
    return 0


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------


COMMANDS = {
    "forward": cmd_forward,
    "pseudolin-check": cmd_pseudolin_check,
    "bounds-check": cmd_bounds_check,
    "layer-check": cmd_layer_check,
    "stability-fit": cmd_stability_fit,
    "symbol-check": cmd_symbol_check,
    "simulate": cmd_simulate,
    "reconstruct": cmd_reconstruct,
    "sweep": cmd_sweep,
}


def main(argv=None):
    parser = argparse.ArgumentParser(
        prog="naxray",
        description="Non-abelian X-ray transform laboratory on the unit ball")
    parser.add_argument("command", choices=sorted(COMMANDS))
    parser.add_argument("--config", required=True, help="INI config path")
    parser.add_argument("--seed", type=int, default=None,
                        help="global seed (beats the config's)")
    parser.add_argument("--out", default=".", help="output directory")
    parser.add_argument("--threads", type=int, default=None,
                        help="worker cap (NAXRAY_THREADS is the fallback)")
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 0 if exc.code == 0 else 2
    threads = args.threads
    if threads is None:
        try:
            threads = int(os.environ.get("NAXRAY_THREADS", "1") or "1")
        except ValueError:
            threads = 1
    T.set_max_workers(threads)
    try:
        cfgp = _load_config(args.config)
        seed = args.seed
        if seed is None:
            if cfgp.has_section("common") and "seed" in cfgp["common"]:
                seed = int(cfgp["common"]["seed"])
            else:
                seed = 0
        if not 0 <= seed < 2 ** 64:
            raise UsageError("seed must be a 64-bit unsigned value")
        return COMMANDS[args.command](cfgp, seed, args.out)
    except UsageError as exc:
        print(f"naxray: error: {exc}", file=sys.stderr)
        return 2
    except ToleranceFailure as exc:
        print(f"naxray: tolerance failure: {exc}", file=sys.stderr)
        return 1
    except DomainError as exc:
        print(f"naxray: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
