"""CLI contract: exit codes, determinism, file formats and golden runs."""

import json
import math
import os

import numpy as np
import pytest

from naxray import cli
from naxray import fields as F


def run(args):
    return cli.main(args)


def write_cfg(path, text):
    path.write_text(text)
    return str(path)


@pytest.fixture()
def zero_field_file(tmp_path):
    F.save_field(F.zero_field(3, 1, 5), tmp_path / "zero")
    return str(tmp_path / "zero.json")


@pytest.fixture()
def scalar_field_file(tmp_path):
    rng = np.random.default_rng(42)
    f = F.scale_to_linf(F.random_field(3, 1, 5, rng, structure="general-real"), 0.7)
    F.save_field(f, tmp_path / "phi")
    return str(tmp_path / "phi.json")


class TestForward:
    def test_zero_field_identity_records(self, tmp_path, zero_field_file):
        cfg = write_cfg(tmp_path / "f.ini", f"""
[forward]
field = {zero_field_file}
n_directions = 10
steps_per_unit_length = 64
""")
        assert run(["forward", "--config", cfg, "--seed", "3",
                    "--out", str(tmp_path)]) == 0
        lines = (tmp_path / "scattering.jsonl").read_text().splitlines()
        assert len(lines) == 10
        for line in lines:
            obj = json.loads(line)
            assert obj["value"] == [1.0, 0.0]

    def test_abelian_check_columns(self, tmp_path, scalar_field_file):
        cfg = write_cfg(tmp_path / "f.ini", f"""
[forward]
field = {scalar_field_file}
n_directions = 8
""")
        assert run(["forward", "--config", cfg, "--seed", "1",
                    "--out", str(tmp_path)]) == 0
        for line in (tmp_path / "scattering.jsonl").read_text().splitlines():
            obj = json.loads(line)
            assert abs(obj["log_value"] - obj["xray_phi"]) < 1e-7

    def test_byte_identical_rerun(self, tmp_path, scalar_field_file):
        cfg = write_cfg(tmp_path / "f.ini", f"""
[forward]
field = {scalar_field_file}
n_directions = 6
steps_per_unit_length = 64
""")
        args = ["forward", "--config", cfg, "--seed", "9", "--out", str(tmp_path)]
        assert run(args) == 0
        first = (tmp_path / "scattering.jsonl").read_bytes()
        assert run(args) == 0
        assert (tmp_path / "scattering.jsonl").read_bytes() == first

    def test_malformed_sidecar_exit_2(self, tmp_path):
        bad = tmp_path / "bad.json"
        bad.write_text("{\"d\": 3, \"m\": 1}")
        cfg = write_cfg(tmp_path / "f.ini", f"""
[forward]
field = {bad}
n_directions = 3
""")
        assert run(["forward", "--config", cfg, "--out", str(tmp_path)]) == 2

    def test_missing_section_exit_2(self, tmp_path):
        cfg = write_cfg(tmp_path / "f.ini", "[other]\nx = 1\n")
        assert run(["forward", "--config", cfg, "--out", str(tmp_path)]) == 2


class TestCheckCommands:
    def test_pseudolin_pass_and_forced_failure(self, tmp_path):
        base = """
[pseudolin-check]
n_pairs = 2
n_dirs_per_pair = 2
m = 2
modes = 5
steps_per_unit_length = 64
"""
        cfg = write_cfg(tmp_path / "p.ini", base)
        assert run(["pseudolin-check", "--config", cfg, "--seed", "7",
                    "--out", str(tmp_path)]) == 0
        summary = json.loads((tmp_path / "pseudolin_summary.json").read_text())
        assert summary["pass"] is True
        cfg = write_cfg(tmp_path / "p0.ini", base + "tolerance = 0\n")
        assert run(["pseudolin-check", "--config", cfg, "--seed", "7",
                    "--out", str(tmp_path)]) == 1

    def test_empty_field_list_exit_2(self, tmp_path):
        cfg = write_cfg(tmp_path / "p.ini", "[pseudolin-check]\nfield_pairs =\n")
        assert run(["pseudolin-check", "--config", cfg, "--out", str(tmp_path)]) == 2
        cfg = write_cfg(tmp_path / "b.ini", "[bounds-check]\nfields =\n")
        assert run(["bounds-check", "--config", cfg, "--out", str(tmp_path)]) == 2

    def test_bounds_check_small_sweep(self, tmp_path):
        cfg = write_cfg(tmp_path / "b.ini", """
[bounds-check]
n_attenuations = 6
n_dirs = 5
m = 2
modes = 4
steps_per_unit_length = 64
""")
        assert run(["bounds-check", "--config", cfg, "--seed", "2",
                    "--out", str(tmp_path)]) == 0
        rows = (tmp_path / "bounds_margins.csv").read_text().splitlines()
        assert len(rows) == 7  # header + 6 attenuations

    def test_layer_check(self, tmp_path):
        cfg = write_cfg(tmp_path / "l.ini", """
[layer-check]
n_trials = 4
modes = 5
steps_per_unit_length = 48
""")
        assert run(["layer-check", "--config", cfg, "--seed", "4",
                    "--out", str(tmp_path)]) == 0
        summary = json.loads((tmp_path / "layer_summary.json").read_text())
        assert summary["pass"] is True and summary["mean_order"] >= 1.0


class TestStabilityFit:
    def test_recovers_planted_power_law(self, tmp_path):
        pairs = tmp_path / "pairs.csv"
        xs = np.geomspace(1e-3, 1.0, 10)
        lines = ["pair_id,data_dist,pot_dist"]
        lines += [f"{i},{x:.17g},{2.0 * x ** 0.5:.17g}" for i, x in enumerate(xs)]
        pairs.write_text("\n".join(lines) + "\n")
        cfg = write_cfg(tmp_path / "s.ini", f"""
[stability-fit]
pairs_file = {pairs}
""")
        assert run(["stability-fit", "--config", cfg, "--out", str(tmp_path)]) == 0
        fit = json.loads((tmp_path / "stability_fit.json").read_text())
        assert abs(fit["mu_hat"] - 0.5) < 1e-9
        assert abs(fit["c_hat"] - 2.0) < 1e-9

    def test_missing_pairs_file_exit_2(self, tmp_path):
        cfg = write_cfg(tmp_path / "s.ini", """
[stability-fit]
pairs_file = /nonexistent/pairs.csv
""")
        assert run(["stability-fit", "--config", cfg, "--out", str(tmp_path)]) == 2


class TestSymbolCheck:
    def test_golden_run(self, tmp_path):
        cfg = write_cfg(tmp_path / "sym.ini", """
[symbol-check]
n_sphere = 48
n_u_mag = 8
n_u_dir = 6
n_xi = 3
family_size = 4
""")
        assert run(["symbol-check", "--config", cfg, "--seed", "5",
                    "--out", str(tmp_path)]) == 0
        rep = json.loads((tmp_path / "symbol_margin.json").read_text())
        assert rep["min_eig"] > 0
        assert rep["homogeneity_defect"] <= 1e-12
        assert rep["calibrated_lambda0"] > 0


class TestExperimentCommands:
    def test_simulate_reconstruct_and_null_comparison(self, tmp_path):
        sim = write_cfg(tmp_path / "sim.ini", """
[simulate]
truth_field = builtin:demo-skew3
n = 500
steps_per_unit_length = 16
output = demo.jsonl
""")
        assert run(["simulate", "--config", sim, "--seed", "21",
                    "--out", str(tmp_path)]) == 0
        rec = write_cfg(tmp_path / "rec.ini", f"""
[reconstruct]
dataset = {tmp_path}/demo.jsonl
truth_field = builtin:demo-skew3
steps_per_unit_length = 16
alpha = 4.5
modes = 5
beta = 0.2
n_iter = 450
burn_in = 150
thin = 4
""")
        assert run(["reconstruct", "--config", rec, "--seed", "22",
                    "--out", str(tmp_path)]) == 0
        summ = json.loads((tmp_path / "reconstruct_summary.json").read_text())
        from naxray.cli import _builtin_field

        null_error = F.l2_norm_on_ball(_builtin_field("demo-skew3"))
        assert summ["l2_error_vs_truth"] < null_error
        assert (tmp_path / "posterior_mean.bin").exists()
        assert (tmp_path / "chain_state.json").exists()

    def test_sweep_row_cardinality(self, tmp_path):
        cfg = write_cfg(tmp_path / "sw.ini", """
[sweep]
truth_field = builtin:demo-skew3
n_grid = 20, 40
seeds = 0, 1
steps_per_unit_length = 16
n_iter = 30
burn_in = 10
thin = 2
tuned = false
""")
        assert run(["sweep", "--config", cfg, "--seed", "1",
                    "--out", str(tmp_path)]) == 0
        rows = (tmp_path / "sweep.csv").read_text().splitlines()
        assert rows[0] == "n,seed,alpha,beta,accept_rate,l2_error"
        assert len(rows) == 5  # header + 2 n values x 2 seeds

    def test_sweep_byte_identical(self, tmp_path):
        cfg = write_cfg(tmp_path / "sw.ini", """
[sweep]
truth_field = builtin:demo-skew3
n_grid = 15
seeds = 3
steps_per_unit_length = 16
n_iter = 20
burn_in = 5
thin = 2
tuned = false
""")
        args = ["sweep", "--config", cfg, "--seed", "8", "--out", str(tmp_path)]
        assert run(args) == 0
        first = (tmp_path / "sweep.csv").read_bytes()
        assert run(args) == 0
        assert (tmp_path / "sweep.csv").read_bytes() == first


class TestEntryPoint:
    def test_unknown_command_exit_2(self, tmp_path):
        assert run(["frobnicate", "--config", "x.ini"]) == 2

    def test_missing_config_exit_2(self):
        assert run(["forward", "--config", "/nonexistent.ini"]) == 2

    def test_config_seed_fallback(self, tmp_path, zero_field_file):
        cfg = write_cfg(tmp_path / "f.ini", f"""
[common]
seed = 12

[forward]
field = {zero_field_file}
n_directions = 2
steps_per_unit_length = 64
""")
        assert run(["forward", "--config", cfg, "--out", str(tmp_path)]) == 0
        first = (tmp_path / "scattering.jsonl").read_bytes()
        assert run(["forward", "--config", cfg, "--seed", "12",
                    "--out", str(tmp_path)]) == 0
        assert (tmp_path / "scattering.jsonl").read_bytes() == first

    def test_threads_env_fallback(self, tmp_path, zero_field_file, monkeypatch):
        monkeypatch.setenv("NAXRAY_THREADS", "2")
        cfg = write_cfg(tmp_path / "f.ini", f"""
[forward]
field = {zero_field_file}
n_directions = 4
steps_per_unit_length = 64
""")
        assert run(["forward", "--config", cfg, "--out", str(tmp_path)]) == 0
