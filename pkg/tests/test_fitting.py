import numpy as np
import pytest

from spinreadout.fitting import Param, least_squares_fit


def _exp(x, a, k):
    return a * np.exp(-k * x)


def test_noiseless_recovery():
    x = np.linspace(0, 5, 30)
    y = _exp(x, 3.0, 0.7)
    res = least_squares_fit(_exp, x, y, [Param("a", (0.1, 100)), Param("k", (1e-3, 1e2))])
    assert res.converged
    assert res["a"] == pytest.approx(3.0, rel=1e-9)
    assert res["k"] == pytest.approx(0.7, rel=1e-9)


def test_far_start_found_by_grid():
    x = np.linspace(0, 1e-4, 40)
    y = _exp(x, 1.0, 4.5e4)
    res = least_squares_fit(_exp, x, y, [Param("a", (1e-3, 1e3)), Param("k", (1.0, 1e9))])
    assert res["k"] == pytest.approx(4.5e4, rel=1e-8)


def test_uncertainties_scale_with_noise():
    rng = np.random.default_rng(1)
    x = np.linspace(0, 5, 200)
    errs = []
    for s in (0.01, 0.04):
        y = _exp(x, 2.0, 1.0) + rng.normal(0, s, x.size)
        errs.append(least_squares_fit(_exp, x, y, [Param("a", (0.1, 10)), Param("k", (0.1, 10))]).sigma("k"))
    assert errs[1] / errs[0] == pytest.approx(4.0, rel=0.3)


def test_bias_below_one_sigma():
    rng = np.random.default_rng(7)
    x = np.linspace(0, 4, 40)
    est, sig = [], []
    for _ in range(100):
        y = _exp(x, 2.0, 1.3) + rng.normal(0, 0.05, x.size)
        r = least_squares_fit(_exp, x, y, [Param("a", (0.1, 10)), Param("k", (0.1, 10))])
        est.append(r["k"])
        sig.append(r.sigma("k"))
    assert abs(np.mean(est) - 1.3) < np.mean(sig)
    assert np.std(est) == pytest.approx(np.mean(sig), rel=0.25)
