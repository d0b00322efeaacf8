import math
import warnings

import pytest
from hypothesis import assume, given, settings, strategies as st

from spinreadout.cqed import (
    CavityParams,
    DegenerateProbeError,
    ModelValidityWarning,
    cavity_field,
    dispersive_counts,
    dispersive_dephasing,
    dispersive_efficiency,
    f_factor,
    fields,
    model_slopes,
    post_measurement_coherence,
    transmission_curve,
)


def test_field_values():
    c = CavityParams(kappa=1.0, chi=2.0, epsilon=1.0, delta=-2.0)
    assert cavity_field(c, "down") == pytest.approx(2.0)
    assert cavity_field(c, "up") == pytest.approx(1 / math.sqrt(16.25))


def test_coherence_limits():
    assert post_measurement_coherence(1.0, 1.0) == 0.5
    assert post_measurement_coherence(0.0, 10.0) < 1e-20


def test_dephasing_and_counts():
    assert dispersive_dephasing(2.0, 1.0, 0.0) == pytest.approx(1.0)
    n_b, n_d = dispersive_counts(0.5, 2.0, 100.0, 1.0, 2.0)
    assert (n_b, n_d) == pytest.approx((400.0, 100.0))


def test_short_window_warns():
    with pytest.warns(ModelValidityWarning):
        dispersive_counts(0.5, 1.0, 1.0, 1.0, 0.5)


def test_degenerate_midpoint():
    with pytest.raises(DegenerateProbeError):
        f_factor(CavityParams(kappa=1.0, chi=2.0, epsilon=1.0, delta=0.0))


def test_f_tends_to_one_for_narrow_cavity():
    c = CavityParams(kappa=1e-3, chi=1.0, epsilon=1.0, delta=-1.0)
    assert f_factor(c) == pytest.approx(1.0, abs=1e-3)


def test_zero_shift_gives_identical_lorentzians():
    rows = transmission_curve(CavityParams(kappa=1.0, chi=0.0, epsilon=1.0), [-2.0, 0.0, 1.0])
    assert all(r["abs2_down"] == r["abs2_up"] for r in rows)
    assert rows[1]["abs2_down"] == pytest.approx(4.0)


pos = st.floats(1e-3, 1e3)


@settings(max_examples=200, deadline=None)
@given(kappa=pos, chi=pos, delta=st.floats(-1e3, 1e3), eps=pos, eta=st.floats(1e-4, 1.0))
def test_efficiency_recovered(kappa, chi, delta, eps, eta):
    c = CavityParams(kappa, chi, eps, delta)
    a, b = fields(c)
    assume(abs(a * a - b * b) > 1e-6 * max(a * a, b * b))
    tau = 100.0 / kappa
    A, B = model_slopes(c, eta, tau)
    assert dispersive_efficiency(A, B, tau, c) == pytest.approx(eta, rel=1e-9)
    assert f_factor(c) > 0


@settings(max_examples=200, deadline=None)
@given(a=st.complex_numbers(max_magnitude=50), b=st.complex_numbers(max_magnitude=50))
def test_coherence_bounds(a, b):
    c = post_measurement_coherence(a, b)
    assert 0.0 <= c <= 0.5
