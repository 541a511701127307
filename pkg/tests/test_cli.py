"""End-to-end command-line contract: configs, files, exit codes, determinism."""

import csv
import json

import pytest

from shelab.cli_harness import load_config, main, write_csv
from shelab.errors import ConfigurationError

BASE = {
    "grids": {"n_mu": 2, "n_phi": 4, "n_x": 16, "n_y": 4, "n_z": 2,
              "n_eps": 6, "eps_max": 6.0},
    "physics": {"magnetic_field": "1.0", "eps": 0.5, "alphas": "0.5, 0.35, 0.25"},
    "run": {"t_final": 0.05, "seed": 3, "n_particles": 2000},
    "output": {},
}


def make_config(tmp_path, name="run.ini", **overrides):
    sections = {sec: dict(keys) for sec, keys in BASE.items()}
    for sec, keys in overrides.items():
        sections.setdefault(sec, {}).update(keys)
    sections["output"].setdefault("directory", str(tmp_path / "out"))
    lines = []
    for sec, keys in sections.items():
        lines.append(f"[{sec}]")
        lines.extend(f"{k} = {v}" for k, v in keys.items())
        lines.append("")
    path = tmp_path / name
    path.write_text("\n".join(lines))
    return path


def read_header(path):
    with open(path, newline="") as fh:
        return next(csv.reader(fh))


def load_json(path):
    with open(path) as fh:
        return json.load(fh)


# ---------------------------------------------------------------- config


def test_unknown_section_is_named(tmp_path, capsys):
    cfg = make_config(tmp_path, grid={"n_mu": 2})
    assert main(["check-kernel", "--config", str(cfg)]) == 2
    assert "unknown config section [grid]" in capsys.readouterr().err


def test_unknown_key_is_named(tmp_path, capsys):
    cfg = make_config(tmp_path, grids={"n_muu": 2})
    assert main(["check-kernel", "--config", str(cfg)]) == 2
    assert "grids.n_muu" in capsys.readouterr().err


def test_alpha_window_is_enforced(tmp_path, capsys):
    cfg = make_config(tmp_path, physics={"alphas": "0.4, 1.5"})
    assert main(["kinetic", "--config", str(cfg)]) == 2
    assert "outside (0, 1]" in capsys.readouterr().err


def test_defaults_fill_missing_keys(tmp_path):
    cfg = load_config(make_config(tmp_path))
    assert cfg.kernel == "isotropic"
    assert cfg.cfl_safety == 0.9
    assert cfg.workers == 1
    with pytest.raises(ConfigurationError):
        load_config(tmp_path / "missing.ini")


def test_csv_floats_round_trip(tmp_path):
    vals = [0.1, 1.0 / 3.0, 2.5e-17, 7.0]
    path = tmp_path / "t.csv"
    write_csv(path, ["v"], [(v,) for v in vals])
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        back = [float(row["v"]) for row in reader]
    assert back == vals


# ---------------------------------------------------------------- smokes


def test_check_kernel_writes_report(tmp_path):
    cfg = make_config(tmp_path)
    assert main(["check-kernel", "--config", str(cfg)]) == 0
    report = load_json(tmp_path / "out" / "kernel_report.json")
    assert report["flux_defect"] < 1e-12
    assert report["null_dim"] == 1
    assert report["command"] == "check-kernel"


def test_aux_writes_solution_and_report(tmp_path):
    cfg = make_config(tmp_path, grids={"n_x": 32})
    assert main(["aux", "--config", str(cfg)]) == 0
    assert read_header(tmp_path / "out" / "aux_chi.csv") == [
        "x", "mu", "phi", "sigma", "chi_y", "chi_z"]
    report = load_json(tmp_path / "out" / "aux_report.json")
    assert report["chi_y"]["residual_norm"] < 1e-8
    assert abs(report["chi_y"]["mean"]) < 1e-12


def test_tensor_writes_one_table_per_field(tmp_path):
    cfg = make_config(tmp_path, physics={"magnetic_field": "0.5, 2.0"})
    assert main(["tensor", "--config", str(cfg)]) == 0
    for name in ("tensor_table_b0.csv", "tensor_table_b1.csv"):
        header = read_header(tmp_path / "out" / name)
        assert header[:4] == ["xi_y", "xi_z", "epsilon", "D_yy"]
    summary = load_json(tmp_path / "out" / "tensor_summary.json")
    assert len(summary["tables"]) == 2
    assert all(t["lambda_min"] > 0.0 for t in summary["tables"])


def test_she_run_conserves_mass(tmp_path):
    cfg = make_config(tmp_path, run={"field_mode": "self-consistent"})
    assert main(["she", "--config", str(cfg)]) == 0
    report = load_json(tmp_path / "out" / "she_report.json")
    assert report["mass_drift_rel"] < 1e-12
    assert read_header(tmp_path / "out" / "she_snapshots.csv") == [
        "t", "y", "z", "epsilon", "F", "J_y", "J_z", "J_eps", "phi"]
    assert read_header(tmp_path / "out" / "she_field.csv") == [
        "y", "z", "phi", "E_y", "E_z"]


def test_she_rejects_oversized_step(tmp_path):
    cfg = make_config(tmp_path, run={"dt": 1.0})
    assert main(["she", "--config", str(cfg)]) == 3


def test_kinetic_mc_smoke(tmp_path):
    cfg = make_config(tmp_path)
    assert main(["kinetic", "--config", str(cfg)]) == 0
    header = read_header(tmp_path / "out" / "kinetic_moments.csv")
    assert header == ["t", "y", "z", "epsilon", "F", "J_y", "J_z", "J_eps",
                      "phi", "F_stderr", "J_y_stderr", "J_z_stderr"]
    report = load_json(tmp_path / "out" / "kinetic_report.json")
    assert report["energy_drift_rel"] == 0.0
    assert report["n_outside_energy_window"] == 0
    assert report["n_bounces"] > 0


def test_kinetic_reduced_smoke(tmp_path):
    cfg = make_config(tmp_path, run={"t_final": 0.3, "modulation": 0.5},
                      grids={"n_x": 24})
    assert main(["kinetic", "--mode", "reduced", "--config", str(cfg)]) == 0
    report = load_json(tmp_path / "out" / "kinetic_report.json")
    weak = report["weak_estimates"]
    assert all(v["sup_bounded_by_initial"] for v in weak["weak1"].values())
    assert "loglog_slope" in weak["weak23"]
    for run in report["runs"].values():
        assert run["balance_defect"] < 1e-10


def test_kinetic_selfconsistent_smoke(tmp_path):
    cfg = make_config(tmp_path, run={"t_final": 0.02, "n_particles": 1000,
                                     "mode": "mc-selfconsistent"})
    assert main(["kinetic", "--config", str(cfg)]) == 0
    report = load_json(tmp_path / "out" / "kinetic_report.json")
    assert report["mode"] == "mc-selfconsistent"
    assert report["poisson_residual"] < 1e-10


def test_report_merges_artifacts(tmp_path):
    cfg = make_config(tmp_path)
    assert main(["check-kernel", "--config", str(cfg)]) == 0
    assert main(["she", "--config", str(cfg)]) == 0
    assert main(["report", "--config", str(cfg)]) == 0
    merged = load_json(tmp_path / "out" / "run_report.json")
    assert set(merged["sections"]) == {"kernel", "she"}

    empty = make_config(tmp_path, name="empty.ini",
                        output={"directory": str(tmp_path / "nothing")})
    assert main(["report", "--config", str(empty)]) == 2


def test_out_flag_overrides_directory(tmp_path):
    cfg = make_config(tmp_path)
    other = tmp_path / "elsewhere"
    assert main(["check-kernel", "--config", str(cfg), "--out", str(other)]) == 0
    assert (other / "kernel_report.json").is_file()


def test_converge_needs_three_alphas(tmp_path):
    cfg = make_config(tmp_path, physics={"alphas": "0.4, 0.2"})
    assert main(["converge", "--config", str(cfg)]) == 2


# ---------------------------------------------------------------- determinism


def converge_config(tmp_path, name, outdir, workers=1):
    return make_config(
        tmp_path, name=name,
        physics={"alphas": "0.5, 0.35, 0.25", "field_amplitude": 0.6},
        run={"t_final": 0.1, "seed": 21, "n_particles": 3000,
             "field_mode": "frozen", "workers": workers},
        output={"directory": str(outdir)})


def test_reruns_are_byte_identical(tmp_path):
    runs = {}
    for tag, workers in (("a", 1), ("b", 1), ("w", 4)):
        outdir = tmp_path / tag
        cfg = converge_config(tmp_path, f"{tag}.ini", outdir, workers=workers)
        rc = main(["converge", "--config", str(cfg)])
        assert rc in (0, 4)
        runs[tag] = {
            "rc": rc,
            "conv": (outdir / "convergence.csv").read_bytes(),
            "ref": (outdir / "she_reference.csv").read_bytes(),
        }
    assert runs["a"] == runs["b"]
    # worker count is interface-only: results never depend on it
    assert runs["a"] == runs["w"]
