import builtins
import csv
import io
from pathlib import Path

import numpy as np
import pytest

from tdcgl.cli import main
from tdcgl.io import RunConfig, read_key_values, read_snapshot, write_snapshot

SMALL = "grid_n = 65\n"


@pytest.fixture(scope="module")
def small_sim(tmp_path_factory):
    root = tmp_path_factory.mktemp("sim")
    (root / "config.in").write_text(SMALL)
    assert main(["simulate", "--config", str(root / "config.in"), "--out", str(root / "sim")]) == 0
    return root


def _intensity_args(sim):
    return [str(sim / f"intensity_z{k}.snap") for k in (0, 2, 4)]


def test_simulate_writes_three_of_each(small_sim):
    sim = small_sim / "sim"
    names = sorted(p.name for p in sim.iterdir())
    assert names == sorted(["config.txt", "manifest.txt"]
                           + [f"{kind}_z{k}.snap" for kind in ("intensity", "phase")
                              for k in (0, 2, 4)])
    manifest = read_key_values(sim / "manifest.txt")
    assert float(manifest["dz_plane"]) == pytest.approx(1e-5)
    assert manifest["snapshots"] == "z0,z2,z4"
    assert RunConfig.load(sim / "config.txt").grid_n == 65


def test_simulate_single_snapshot(tmp_path):
    (tmp_path / "c.txt").write_text("grid_n = 17\nn_steps = 100\nsnapshot_every = 100\n")
    assert main(["simulate", "--config", str(tmp_path / "c.txt"), "--out", str(tmp_path / "o")]) == 0
    assert len(list((tmp_path / "o").glob("intensity_*.snap"))) == 1


def test_corrupt_config_key_names_key(tmp_path, capsys):
    (tmp_path / "c.txt").write_text("grid_n = 17\nbogus_key = 1\n")
    assert main(["simulate", "--config", str(tmp_path / "c.txt"), "--out", str(tmp_path / "o")]) == 4
    assert "bogus_key" in capsys.readouterr().err


def test_blowup_exit_code(tmp_path):
    (tmp_path / "c.txt").write_text("grid_n = 17\ng = power:-1e9:0\n")
    assert main(["simulate", "--config", str(tmp_path / "c.txt"), "--out", str(tmp_path / "o")]) == 3


def test_infer_outputs_and_ground_truth_isolation(small_sim, monkeypatch, tmp_path):
    opened = []
    real_open, real_io_open = builtins.open, io.open

    def spy(opener):
        def wrapped(file, *args, **kwargs):
            opened.append(str(file))
            return opener(file, *args, **kwargs)
        return wrapped

    monkeypatch.setattr(builtins, "open", spy(real_open))
    monkeypatch.setattr(io, "open", spy(real_io_open))
    sim = small_sim / "sim"
    out = tmp_path / "inf"
    code = main(["infer", "--intensity", *_intensity_args(sim), "--config",
                 str(small_sim / "config.in"), "--out", str(out)])
    monkeypatch.undo()
    assert code == 0
    read_from_sim = [p for p in opened if Path(p).parent == sim]
    assert read_from_sim and not any(Path(p).name.startswith("phase") for p in read_from_sim)
    assert not any("phase_z0" in p or "phase_z2" in p or "phase_z4" in p for p in opened)

    for name in ("phase_z1.snap", "phase_z3.snap", "trace_up.csv", "trace_down.csv",
                 "alpha_histogram.csv", "seed_histogram.csv", "f_table.csv", "estimates.txt"):
        assert (out / name).exists(), name
    with open(out / "trace_up.csv") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["k", "eta_over_alpha", "eta", "alpha", "alpha_fwhm", "N", "X", "inner_iters"]
    assert [int(r[0]) for r in rows[1:]] == list(range(1, len(rows)))
    with open(out / "alpha_histogram.csv") as fh:
        assert next(csv.reader(fh)) == ["bin_lo", "bin_hi", "center", "count"]
    with open(out / "f_table.csv") as fh:
        assert next(csv.reader(fh)) == ["I", "f", "count"]
    est = read_key_values(out / "estimates.txt")
    assert abs(float(est["eta_hat"]) - 2.0) < 0.2
    assert read_snapshot(out / "phase_z1.snap").values.shape == (65, 65)


def test_infer_is_deterministic(small_sim, tmp_path):
    sim = small_sim / "sim"
    for name in ("a", "b"):
        assert main(["infer", "--intensity", *_intensity_args(sim), "--config",
                     str(small_sim / "config.in"), "--out", str(tmp_path / name)]) == 0
    for f in sorted((tmp_path / "a").iterdir()):
        assert f.read_bytes() == (tmp_path / "b" / f.name).read_bytes(), f.name


def test_infer_grid_mismatch_names_both_files(small_sim, tmp_path, capsys):
    other = tmp_path / "small.snap"
    write_snapshot(other, np.ones((33, 33)), 2e-5)
    args = _intensity_args(small_sim / "sim")
    args[1] = str(other)
    assert main(["infer", "--intensity", *args, "--out", str(tmp_path / "o")]) == 4
    err = capsys.readouterr().err
    assert args[0] in err and str(other) in err


def test_infer_rejects_phase_file_and_uneven_spacing(small_sim, tmp_path):
    sim = small_sim / "sim"
    args = _intensity_args(sim)
    bad = tmp_path / "p.snap"
    write_snapshot(bad, np.ones((65, 65)), 2e-5, kind=1)
    assert main(["infer", "--intensity", args[0], str(bad), args[2], "--out", str(tmp_path / "o")]) == 4
    assert main(["infer", "--intensity", args[0], args[2], args[1], "--out", str(tmp_path / "o")]) == 4
    assert main(["infer", "--intensity", args[0], args[1], str(tmp_path / "missing.snap"),
                 "--out", str(tmp_path / "o")]) == 4


def test_measure_g_and_infer_with_table(small_sim, tmp_path):
    cfg = small_sim / "g.in"
    cfg.write_text(SMALL + "g_table_levels = 64\n")
    table = tmp_path / "g.csv"
    assert main(["measure-g", "--config", str(cfg), "--out", str(table)]) == 0
    with open(table) as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["I", "g_over_alpha", "count"]
    I, g = float(rows[10][0]), float(rows[10][1])
    assert g == pytest.approx(3 * I * I, rel=1e-3)
    assert main(["infer", "--intensity", *_intensity_args(small_sim / "sim"), "--g-table",
                 str(table), "--config", str(cfg), "--out", str(tmp_path / "inf")]) == 0


def test_sweep_writes_convergence_map(tmp_path):
    (tmp_path / "c.txt").write_text(SMALL)
    code = main(["sweep", "--config", str(tmp_path / "c.txt"), "--param", "A_phi",
                 "--values", "0.2,0.5", "--out", str(tmp_path / "o")])
    assert code == 0
    with open(tmp_path / "o" / "convergence_map.csv") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["A_phi", "status", "iterations", "sigma_phi", "sigma_grad", "mean_grad_phi"]
    assert [r[1] for r in rows[1:]] == ["converged", "converged"]
    assert main(["sweep", "--param", "nonsense", "--out", str(tmp_path / "p")]) == 4


def test_roundtrip_small_grid_runs(tmp_path):
    (tmp_path / "c.txt").write_text(SMALL)
    code = main(["roundtrip", "--config", str(tmp_path / "c.txt"), "--out", str(tmp_path / "o")])
    report = read_key_values(tmp_path / "o" / "report.txt")
    assert report["status"] == "converged"
    assert code == (0 if report["pass"] == "True" else 1)
    assert {"eta_rel_error", "alpha_rel_error", "sigma_phi_disk", "sigma_grad_disk",
            "f_fit_amplitude", "f_fit_offset"} <= set(report)


@pytest.mark.slow
def test_roundtrip_trivial_model_passes(tmp_path):
    (tmp_path / "c.txt").write_text("f = zero\ng = zero\nA_phi = 0.0\n")
    code = main(["roundtrip", "--config", str(tmp_path / "c.txt"), "--out", str(tmp_path / "o")])
    report = read_key_values(tmp_path / "o" / "report.txt")
    print({k: report[k] for k in ("eta_rel_error", "alpha_rel_error", "sigma_phi_disk",
                                  "sigma_grad_disk")})
    assert code == 0 and report["pass"] == "True"


@pytest.mark.slow
def test_roundtrip_large_phase_is_non_converged(tmp_path):
    (tmp_path / "c.txt").write_text("A_phi = 2.0\n")
    code = main(["roundtrip", "--config", str(tmp_path / "c.txt"), "--out", str(tmp_path / "o")])
    report = read_key_values(tmp_path / "o" / "report.txt")
    assert code == 2 and report["status"] == "non-converged"
