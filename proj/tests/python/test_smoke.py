import json
import math

import numpy as np
import pytest

import sllab


def test_catalog_and_sampling():
    assert set(sllab.measure_keys()) >= {"gaussian", "exponential", "cube"}
    m = sllab.make_measure("cube", 3)
    x = m.sample(7)
    assert len(x) == 3 and all(abs(v) <= math.sqrt(3) for v in x)
    assert m.sample(7) == x
    with pytest.raises(sllab.LabError):
        sllab.make_measure("nope", 2)


def test_assist_function_vectorized():
    fn = sllab.build_assist_fn(10.0, 2.5)
    assert 1 / 20 <= fn.b <= 1 / 5
    r = np.linspace(fn.knots[0], fn.r0, 50)
    f = fn(r)
    assert f.shape == (50,) and np.all(np.diff(f) > 0)
    assert fn(fn.knots[0], "d1") == pytest.approx(10.0 / math.e)
    assert fn.validate()["ok"]


def test_schedule_regression():
    s = sllab.build_schedule(500.0)
    assert s.k0 == 2
    assert s.log_t[1] == pytest.approx(-8011.09, abs=0.01)


def test_gaussian_moments_match_closed_form():
    out = sllab.ensemble_moments("gaussian", 2, [0.0, 0.5, 1.0], paths=2000, seed=3)
    t = out["t"]
    assert np.allclose(out["tr_A_sq"], 2 / (1 + t) ** 2)
    expect = t * 2 / (1 + t)
    assert np.all(np.abs(out["a_norm_sq"] - expect) <= 4 * out["a_norm_sq_se"] + 1e-12)


def test_heatflow_and_spectral():
    r = sllab.variance_identity("gaussian", 3, 0.5)
    assert r["passed"] and r["lhs"] == pytest.approx(2 * 1.5**2 * 3)
    ev = sllab.generator_eigenvalues("gaussian", 4000, 4)
    assert np.allclose(ev, [0, 1, 2, 3, 4], atol=1e-3)
    sigma_sq, bound, ok = sllab.thin_shell("gaussian")
    assert ok and sigma_sq == pytest.approx(2.0) and bound == pytest.approx(4.0, rel=1e-3)


def test_dyadic_bound():
    h = np.exp(-np.linspace(0.0, 8.0, 8 * 64 + 1))
    lhs, rhs, ok = sllab.dyadic_bound(h.tolist(), 3)
    assert ok and lhs < rhs == pytest.approx(2.0)


def test_run_and_report(tmp_path):
    out = tmp_path / "sched"
    man = sllab.run(experiment="schedule", log_log_n=50, out_dir=out)
    assert man["pass"] and man["checks"]
    text, ok = sllab.report_text([str(out / "manifest.json")])
    assert ok and "tk" in text
    with pytest.raises(sllab.LabError, match="log_log_n"):
        sllab.run(experiment="schedule", log_log_n=-1, out_dir=tmp_path / "bad")
    assert json.loads((out / "manifest.json").read_text())["version"] == sllab.__version__
