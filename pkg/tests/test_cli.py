import subprocess
import sys

import numpy as np
import pytest

from thermies import __version__, cli
from thermies.matio import data_path
from thermies.sampler import SampleBatch

EX2 = str(data_path("2d_example.mat"))


def run(argv, capsys=None):
    code = cli.run(argv)
    if capsys is None:
        return code
    out = capsys.readouterr()
    return code, out.out, out.err


def test_weights_stdout(capsys):
    code, out, _ = run(["weights", "--matrix", "2d_example.mat", "--epsilon", "1"], capsys)
    assert code == 0
    lines = out.splitlines()
    assert lines[0].startswith(f"# thermies {__version__} command=weights")
    assert "epsilon=1.0" in lines[0]
    assert lines[1] == "index,bits,weight,s_0_0,s_0_1,s_1_1"
    weights = [float(r.split(",")[2]) for r in lines[2:]]
    assert weights == pytest.approx([0.14, 0.14, 0.06, 0.06, 0.21, 0.21, 0.09, 0.09], abs=1e-12)


def test_residual(capsys):
    code, out, _ = run(["residual", "--matrix", EX2, "--epsilon", "1"], capsys)
    assert code == 0
    rows = [r.split(",") for r in out.splitlines()[2:]]
    assert [float(r[4]) for r in rows] == pytest.approx([0.6, 0.3, 0.5])


def test_no_command_and_unknown_flag(capsys):
    assert run([], capsys)[0] == 2
    code, _, err = run(["weights", "--matrix", EX2, "--bogus"], capsys)
    assert code == 2 and "usage" in err


def test_sample_zero_is_usage_error(capsys):
    code, _, err = run(["sample", "--matrix", EX2, "--epsilon", "1", "--n", "0", "--seed", "1"], capsys)
    assert code == 2 and "usage" in err


def test_seed_required_and_env_fallback(capsys, monkeypatch):
    argv = ["sample", "--matrix", EX2, "--epsilon", "1", "--n", "5"]
    monkeypatch.delenv("THERMIES_SEED", raising=False)
    assert run(argv, capsys)[0] == 2
    monkeypatch.setenv("THERMIES_SEED", "17")
    code, out_env, _ = run(argv, capsys)
    assert code == 0 and "seed=17" in out_env.splitlines()[0]
    monkeypatch.delenv("THERMIES_SEED")
    _, out_flag, _ = run(argv + ["--seed", "17"], capsys)
    assert out_flag == out_env
    monkeypatch.setenv("THERMIES_SEED", "abc")
    assert run(argv, capsys)[0] == 2


def test_missing_and_malformed_matrix(tmp_path, capsys):
    assert run(["weights", "--matrix", str(tmp_path / "none.mat"), "--epsilon", "1"], capsys)[0] == 2
    bad = tmp_path / "bad.mat"
    bad.write_text("2\n1 2\n2.0001 1\n")
    code, _, err = run(["weights", "--matrix", str(bad), "--epsilon", "1"], capsys)
    assert code == 2 and "(0,1)" in err
    bad.write_text("2\n1 x\n")
    assert run(["weights", "--matrix", str(bad), "--epsilon", "1"], capsys)[0] == 2


def test_runtime_error_names_operation(tmp_path, capsys):
    m = tmp_path / "indef.mat"
    m.write_text("2\n1 2\n2 1\n")
    code, _, err = run(["weights", "--matrix", str(m), "--epsilon", "1"], capsys)
    assert code == 1 and "error in symcore." in err
    code, _, err = run(["weights", "--matrix", EX2, "--quant-mode", "grid",
                        "--diag-values", "1,2", "--offdiag-values", "0,1"], capsys)
    assert code == 1 and "error in quantgrid." in err


def test_uniform_needs_epsilon(capsys):
    assert run(["weights", "--matrix", EX2], capsys)[0] == 2


def test_config_file(tmp_path, capsys):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("# run config\nquant.mode = uniform\nquant.epsilon = 1\nmatrix = 2d_example.mat\n")
    code, out, _ = run(["weights", "--config", str(cfg)], capsys)
    assert code == 0 and len(out.splitlines()) == 10
    # explicit flags override the file
    code, out, _ = run(["weights", "--config", str(cfg), "--epsilon", "0.5"], capsys)
    assert "epsilon=0.5" in out.splitlines()[0]
    cfg.write_text("nonsense-key = 3\n")
    assert run(["weights", "--config", str(cfg), "--matrix", EX2], capsys)[0] == 2
    cfg.write_text("just words\n")
    assert run(["weights", "--config", str(cfg), "--matrix", EX2], capsys)[0] == 2


def test_config_grid_lists(tmp_path, capsys):
    m = tmp_path / "hw.mat"
    m.write_text("2\n3.6 0.3\n0.3 3.5\n")
    cfg = tmp_path / "hw.cfg"
    cfg.write_text("quant.mode = grid\nquant.diag_values = 1.0,3.2,4.3,6.5\n"
                   "quant.offdiag_values = -0.47,0,0.47\n")
    code, out, _ = run(["weights", "--config", str(cfg), "--matrix", str(m)], capsys)
    assert code == 0
    rows = [r.split(",") for r in out.splitlines()[2:]]
    assert len(rows) == 8
    assert {float(r[3]) for r in rows} == {3.2, 4.3}
    assert {float(r[4]) for r in rows} == {0.0, 0.47}
    assert sum(float(r[2]) for r in rows) == pytest.approx(1.0)


def test_grid_out_of_range_is_runtime_error(capsys):
    code, _, err = run(["weights", "--matrix", EX2, "--quant-mode", "grid"], capsys)
    assert code == 1 and "rescale" in err


def test_missing_required(capsys):
    assert run(["weights", "--epsilon", "1"], capsys)[0] == 2
    code, _, err = run(["sample", "--matrix", EX2, "--epsilon", "1", "--seed", "1"], capsys)
    assert code == 2 and "--n" in err


def test_sample_formats(tmp_path, capsys):
    base = ["sample", "--matrix", EX2, "--epsilon", "1", "--n", "50", "--seed", "2"]
    code, out, _ = run(base, capsys)
    assert code == 0
    lines = out.splitlines()
    assert lines[1] == "x0,x1,neighbor_index" and len(lines) == 52
    path = tmp_path / "s.bin"
    assert run(base + ["--format", "bin", "-o", str(path)]) == 0
    batch = SampleBatch.from_bytes(path.read_bytes())
    assert batch.count == 50 and batch.dim == 2
    csv_vals = np.array([[float(v) for v in ln.split(",")[:2]] for ln in lines[2:]])
    np.testing.assert_array_equal(batch.data, csv_vals)


@pytest.mark.parametrize(
    "extra",
    [["--method", "repetition", "--ensemble-draws", "5"],
     ["--method", "repetition", "--ensemble-draws", "5", "--samples-per-draw", "10"],
     ["--method", "device"],
     ["--method", "exact"],
     ["--backend", "langevin", "--dt", "0.1", "--burn-in", "50", "--thin", "2", "--method", "device"]],
)
def test_sample_methods(extra, capsys):
    code, out, _ = run(["sample", "--matrix", EX2, "--epsilon", "1", "--n", "50", "--seed", "3"] + extra, capsys)
    assert code == 0 and len(out.splitlines()) == 52


def test_sample_repetition_bad_split(capsys):
    base = ["sample", "--matrix", EX2, "--epsilon", "1", "--n", "50", "--seed", "3", "--method", "repetition"]
    assert run(base, capsys)[0] == 2
    assert run(base + ["--ensemble-draws", "7"], capsys)[0] == 2
    assert run(base + ["--ensemble-draws", "5", "--samples-per-draw", "3"], capsys)[0] == 2


def test_device_strict_precision_error(capsys):
    code, _, err = run(["sample", "--matrix", EX2, "--epsilon", "1", "--n", "5", "--seed", "1",
                        "--method", "device", "--device-mode", "strict"], capsys)
    assert code == 1 and "error in quantgrid.check_strict" in err


def test_feasibility(capsys):
    code, out, _ = run(["feasibility", "--d-max", "4", "--bit-depths", "8"], capsys)
    assert code == 0
    rows = [r.split(",") for r in out.splitlines()[2:]]
    assert [float(r[2]) for r in rows] == [126.0, 126 / 2**1.5, 126 / 3**1.5, 15.75]
    assert run(["feasibility", "--bit-depths", "2"], capsys)[0] == 2


def test_sweep_eps_small(capsys):
    code, out, _ = run(["sweep-eps", "--dims", "1,2", "--epsilons", "0.05,0.1,0.2", "--seed", "7"], capsys)
    assert code == 0
    lines = out.splitlines()
    assert lines[1] == "dim,epsilon,mitigated,linf" and len(lines) == 2 + 2 * 3 * 2
    rows = [ln.split(",") for ln in lines[2:]]
    for mit, unmit in zip(rows[::2], rows[1::2]):
        assert mit[2] == "1" and unmit[2] == "0" and float(mit[3]) < float(unmit[3])


def test_sweep_eps_twice_identical(tmp_path):
    outs = []
    for k in range(2):
        p = tmp_path / f"{k}.csv"
        assert run(["sweep-eps", "--dims", "1,2", "--seed", "7", "-o", str(p)]) == 0
        outs.append(p.read_bytes())
    assert outs[0] == outs[1]


def test_sweep_m_small(capsys):
    code, out, _ = run(["sweep-m", "--dims", "4", "--m-values", "1,4,16", "--seeds", "2", "--seed", "1"], capsys)
    assert code == 0
    assert out.splitlines()[1] == "dim,M,mean_rms,std_rms" and len(out.splitlines()) == 5


def test_invert_with_summary(tmp_path):
    out, summ = tmp_path / "c.csv", tmp_path / "s.csv"
    code = run(["invert", "--seed", "1", "--total-samples", "1000", "--repetitions", "2",
                "--checkpoints", "100,1000", "-o", str(out), "--summary", str(summ)])
    assert code == 0
    lines = out.read_text().splitlines()
    assert lines[0].startswith("# thermies") and lines[1] == "rep,checkpoint,mitigated,error"
    assert len(lines) == 2 + 2 * 2 * 2
    slines = summ.read_text().splitlines()
    assert slines[1] == "checkpoint,mitigated,mean_error,std_error" and len(slines) == 6
    assert "summary" not in lines[0]
    assert run(["invert", "--seed", "1", "--fixture", "42"]) == 2


def test_bounds(capsys):
    code, out, _ = run(["bounds", "--matrix", EX2, "--epsilon", "1", "--ensemble-draws", "100",
                        "--total-samples", "10000", "--delta", "0.3", "--seed", "4"], capsys)
    assert code == 0
    lines = out.splitlines()
    assert lines[1].split(",")[:3] == ["i", "j", "delta"]
    rows = [dict(zip(lines[1].split(","), ln.split(","))) for ln in lines[2:]]
    assert len(rows) == 3
    for r in rows:
        assert 0 <= float(r["combined_lower"]) <= 1
        assert float(r["hoeffding_prob"]) == pytest.approx(2 * np.exp(-2 * 100 * 0.09))


def test_provenance_excludes_output_and_workers(tmp_path):
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    base = ["sweep-m", "--dims", "4", "--m-values", "1,2,4", "--seeds", "2", "--seed", "1"]
    assert run(base + ["-o", str(a), "--workers", "1"]) == 0
    assert run(base + ["-o", str(b), "--workers", "3"]) == 0
    assert a.read_bytes() == b.read_bytes()
    head = a.read_text().splitlines()[0]
    assert "seed=1" in head and "dims=4" in head and "workers" not in head


def test_module_entry_point():
    proc = subprocess.run([sys.executable, "-m", "thermies", "feasibility", "--d-max", "1"],
                          capture_output=True, text=True, check=False)
    assert proc.returncode == 0
    assert proc.stdout.splitlines()[1] == "d,xi,kappa_max"
    proc = subprocess.run([sys.executable, "-m", "thermies", "--version"],
                          capture_output=True, text=True, check=False)
    assert proc.returncode == 0 and __version__ in proc.stdout
