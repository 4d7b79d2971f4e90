import numpy as np
import pytest

from thermies.analyze import loglog_slope
from thermies.appinv import (
    ErrorCurve,
    InversionConfig,
    curves_to_csv,
    encode_precision,
    inversion_experiment,
    random_fixture,
    scale_to_grid,
    summary_to_csv,
    thermo_invert,
)
from thermies.errors import ConfigurationError, GridRangeError, InfeasibleError
from thermies.matio import data_path, load_matrix
from thermies.quantgrid import QuantSpec, is_representable
from thermies.symcore import CovMatrix

HW = QuantSpec.hardware()


def test_config_validation():
    A = CovMatrix(np.eye(2))
    with pytest.raises(ConfigurationError):
        InversionConfig(A, HW, checkpoints=(100, 50), total_samples=200)
    with pytest.raises(ConfigurationError):
        InversionConfig(A, HW, checkpoints=(100, 300), total_samples=200)
    with pytest.raises(ConfigurationError):
        InversionConfig(A, HW, M=0)
    with pytest.raises(ConfigurationError):
        InversionConfig(A, HW, metric="max")
    cfg = InversionConfig(A, HW, total_samples=5000)
    assert cfg.checkpoints[-1] == 5000 and list(cfg.checkpoints) == sorted(cfg.checkpoints)


def test_error_curve_stats():
    c = ErrorCurve((10, 20), np.array([[1.0, 0.5], [3.0, 0.5]]), True)
    np.testing.assert_allclose(c.mean_error, [2.0, 0.5])
    np.testing.assert_allclose(c.std_error, [1.0, 0.0])
    assert c.final_mean == 0.5
    with pytest.raises(ValueError):
        ErrorCurve((10,), np.zeros((1, 2)), True)


def test_scale_to_grid():
    fits = CovMatrix([[4.0, 0.2], [0.2, 5.0]])
    assert scale_to_grid(fits, HW) == 1.0
    big = CovMatrix([[13.0, 0.2], [0.2, 10.0]])
    s = scale_to_grid(big, HW)
    assert s == pytest.approx(0.5)
    scaled, s2 = encode_precision(big, HW)
    assert s2 == s and np.max(np.diag(scaled.values)) <= 6.5
    with pytest.raises(GridRangeError):
        scale_to_grid(CovMatrix([[1.0, 0.9], [0.9, 6.0]]), HW)


def test_fixtures_fit_hardware_grid():
    for k in range(10):
        A = load_matrix(data_path(f"inv8_{k:02d}.mat"))
        assert A == random_fixture(k)
        assert A.dim == 8
        assert scale_to_grid(A, HW) == 1.0
        assert A.lambda_min > 0


def test_representable_paths_identical():
    A = CovMatrix(np.eye(3))
    spec = QuantSpec.uniform(1.0)
    assert is_representable(encode_precision(A, spec)[0], spec)[0]
    cps = (100, 1000, 10_000)
    mit = thermo_invert(A, spec, True, 4, 10_000, cps, 0)
    unmit = thermo_invert(A, spec, False, 4, 10_000, cps, 0)
    assert mit.runs.shape == (1, 3)
    # both draw N(0, P^-1) from one stream; only the interleaving order differs
    assert abs(mit.runs[0, -1] - unmit.runs[0, -1]) < 0.02


def test_representable_error_rate():
    A = CovMatrix([[4.3, 0.47], [0.47, 3.2]])
    assert is_representable(A, HW)[0]
    cps = tuple(int(c) for c in np.geomspace(1000, 200_000, 6))
    errs = np.mean([thermo_invert(A, HW, False, 1, 200_000, cps, s).runs[0] for s in range(8)], axis=0)
    assert loglog_slope(cps, errs) == pytest.approx(-0.5, abs=0.1)


def test_mitigation_helps_on_fixture():
    cfg = InversionConfig(random_fixture(0), HW, M=4, total_samples=50_000, repetitions=4, seed=1)
    mit, unmit = inversion_experiment(cfg)
    assert mit.final_mean < unmit.final_mean
    assert mit.runs.shape == (4, len(cfg.checkpoints))


def test_single_repetition_zero_std():
    cfg = InversionConfig(random_fixture(1), HW, total_samples=2000, repetitions=1, seed=3)
    mit, unmit = inversion_experiment(cfg)
    assert np.all(mit.std_error == 0) and np.all(unmit.std_error == 0)


def test_experiment_deterministic_across_workers():
    cfg = InversionConfig(random_fixture(2), HW, total_samples=3000, repetitions=3, seed=5,
                          checkpoints=(100, 3000))
    a = inversion_experiment(cfg, workers=1)
    b = inversion_experiment(cfg, workers=3)
    assert curves_to_csv(*a) == curves_to_csv(*b)
    assert summary_to_csv(*a) == summary_to_csv(*b)


def test_csv_layout():
    cfg = InversionConfig(random_fixture(3), HW, total_samples=500, repetitions=2, seed=0,
                          checkpoints=(100, 500))
    mit, unmit = inversion_experiment(cfg)
    lines = curves_to_csv(mit, unmit).splitlines()
    assert lines[0] == "rep,checkpoint,mitigated,error"
    assert len(lines) == 1 + 2 * 2 * 2
    assert lines[1].startswith("0,100,1,")
    summary = summary_to_csv(mit, unmit).splitlines()
    assert summary[0] == "checkpoint,mitigated,mean_error,std_error" and len(summary) == 5


def test_absolute_metric_scales_with_norm():
    A = random_fixture(4)
    rel = thermo_invert(A, HW, False, 1, 1000, (1000,), 0, metric="relative").runs[0, 0]
    ab = thermo_invert(A, HW, False, 1, 1000, (1000,), 0, metric="absolute").runs[0, 0]
    assert ab == pytest.approx(rel * np.linalg.norm(np.linalg.inv(A.values), "fro"))


def test_singular_rejected():
    with pytest.raises(InfeasibleError):
        thermo_invert(CovMatrix([[1.0, 1.0], [1.0, 1.0]]), HW, False, 1, 100, (100,), 0)


def test_uniform_grid_inverse_bias_scaling():
    # the exact-enumeration form of the mitigated inverse has second-order bias
    from thermies.experiments import inverse_error_pair, sweep_base

    base, r = sweep_base(3, 0, eps_max=0.1)
    eps = np.geomspace(0.01, 0.1, 6)
    pairs = [inverse_error_pair(base, r, e) for e in eps]
    assert loglog_slope(eps, [p[0] for p in pairs]) == pytest.approx(2.0, abs=0.3)
    assert loglog_slope(eps, [p[1] for p in pairs]) == pytest.approx(1.0, abs=0.3)
