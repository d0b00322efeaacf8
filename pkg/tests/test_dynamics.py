import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.integrate import solve_ivp

from spinreadout.core import EmitterParams, FitError
from spinreadout.dynamics import (
    DriveParams,
    check_density_matrix,
    dephasing_rate,
    evolve_three_level,
    evolve_two_level,
    extract_rates_from_trajectory,
    omega_from_power,
    polarization_rate,
    power_from_omega,
    projector,
    pump_rate,
    simulate_and_extract,
    superposition,
    three_level_trajectory,
    trajectory_csv,
    TRAJECTORY_COLUMNS,
)

from conftest import GAMMA

G = 2.222e8


def _params(**kw):
    base = dict(gamma=G, lambda_cyc=2244.0, p_sat=313.0, eta=1e-3)
    base.update(kw)
    return EmitterParams(**base)


# rate identities


def test_pump_rate_on_resonance_half_saturation():
    p = _params()
    assert pump_rate(313.0, p) == pytest.approx(G / 4)


def test_pump_rate_high_power_limit():
    assert pump_rate(1e12, _params()) == pytest.approx(G / 2, rel=1e-8)


def test_polarization_rate_without_cyclicity():
    assert polarization_rate(3.0e7, 0.0) == 3.0e7


def test_dephasing_is_half_pump_rate():
    R = pump_rate(500.0, _params())
    assert dephasing_rate(R) == pytest.approx(R / 2)


def test_detuning_lowers_pump_rate():
    on = pump_rate(313.0, _params())
    off = pump_rate(313.0, _params(delta=G))
    # (delta/(gamma/2))^2 = 4 adds to the denominator 1 + s = 2
    assert off == pytest.approx(on * 2 / 6)


def test_negative_power_rejected():
    with pytest.raises(ValueError):
        pump_rate(-1.0, _params())


def test_power_omega_mapping_round_trip():
    p = _params()
    om = omega_from_power(626.0, p)
    assert om == pytest.approx(G)  # p/psat = 2 Omega^2/gamma^2
    assert power_from_omega(om, G, 313.0) == pytest.approx(626.0)


# two-level analytic solution


@settings(max_examples=60, deadline=None)
@given(theta=st.floats(0, math.pi), phi=st.floats(0, 2 * math.pi),
       R=st.floats(0, 1e9), lam=st.floats(0, 1e4), t=st.floats(0, 1e-3))
def test_two_level_state_is_physical(theta, phi, R, lam, t):
    a, b = math.cos(theta / 2), math.sin(theta / 2) * complex(math.cos(phi), math.sin(phi))
    rho = evolve_two_level(a, b, R, lam, t)
    assert np.trace(rho).real == pytest.approx(1.0)
    assert np.allclose(rho, rho.conj().T)
    assert np.linalg.eigvalsh(rho).min() > -1e-12


def test_two_level_closed_form():
    R, lam = 2e7, 99.0
    t = np.array([0.0, 1e-7, 1e-6])
    rho = evolve_two_level(0.6, 0.8j, R, lam, t)
    assert np.allclose(rho[:, 0, 0].real, 0.36 * np.exp(-R / 100 * t))
    assert np.allclose(rho[:, 0, 1], 0.6 * -0.8j * np.exp(-R / 2 * t))


def test_two_level_rejects_unnormalized():
    with pytest.raises(ValueError):
        evolve_two_level(1.0, 1.0, 1e7, 10.0, 0.0)


# three-level master equation


def _lindblad_rhs(drive):
    from spinreadout.dynamics import hamiltonian, jump_operators

    H = hamiltonian(drive)
    Ls = jump_operators(drive)

    def f(t, y):
        rho = y.reshape(3, 3)
        d = -1j * (H @ rho - rho @ H)
        for L in Ls:
            Ld = L.conj().T
            d += L @ rho @ Ld - 0.5 * (Ld @ L @ rho + rho @ Ld @ L)
        return d.reshape(-1)

    return f


@pytest.mark.parametrize("omega,delta,lam", [(G / 4, 0.0, 10.0), (G, G, 100.0), (5 * G, 3 * G, 2244.0)])
def test_three_level_matches_independent_integrator(omega, delta, lam):
    drive = DriveParams(omega, delta, lam, G)
    times = np.linspace(0, 40 / G, 9)
    rho0 = superposition(0.8, 0.6)
    ours = three_level_trajectory(drive, rho0, times, tol=1e-9)
    ref = solve_ivp(_lindblad_rhs(drive), (0, times[-1]), rho0.reshape(-1).astype(complex),
                    t_eval=times, rtol=1e-10, atol=1e-12, method="DOP853")
    assert np.allclose(ours, ref.y.T.reshape(-1, 3, 3), atol=1e-7)


def test_three_level_trajectory_physical():
    drive = DriveParams(G, 0.5 * G, 100.0, G)
    times = np.linspace(0, 2e-6, 200)
    rhos = three_level_trajectory(drive, superposition(), times)
    for r in rhos:
        check_density_matrix(r, herm_tol=1e-12, trace_tol=1e-6, pos_tol=1e-6)


def test_three_level_undriven_is_static():
    drive = DriveParams(0.0, 0.0, 100.0, G)
    rho0 = superposition(0.6, 0.8)
    rho = evolve_three_level(drive, rho0, 1e-6)
    assert np.allclose(rho, rho0, atol=1e-9)


def test_three_level_pumps_into_dark_state():
    drive = DriveParams(G, 0.0, 10.0, G)
    rho = evolve_three_level(drive, projector(0), 5e-6)
    assert rho[1, 1].real == pytest.approx(1.0, abs=1e-6)


def test_dark_state_untouched():
    drive = DriveParams(5 * G, 0.0, 100.0, G)
    rho = evolve_three_level(drive, projector(1), 1e-6)
    assert np.allclose(rho, projector(1), atol=1e-9)


def test_polarization_rate_agrees_in_weak_drive():
    # away from strong coherent driving the population decay follows R/(Lambda+1)
    drive = DriveParams(G / 4, G, 2244.0, G)
    fit, _, _ = simulate_and_extract(drive)
    _, gp, _ = drive.two_level_rates()
    assert fit["gamma_p"] == pytest.approx(gp, rel=0.02)


@pytest.mark.xfail(strict=True, reason="two-level reduction deviates from the full model at Omega ~ gamma")
def test_rates_agree_to_one_percent_at_omega_gamma():
    drive = DriveParams(G, 0.0, 100.0, G)
    fit, _, _ = simulate_and_extract(drive)
    _, gp, gphi = drive.two_level_rates()
    assert fit["gamma_p"] == pytest.approx(gp, rel=0.01)
    assert fit["gamma_phi"] == pytest.approx(gphi, rel=0.01)


def test_extraction_exact_on_two_level_data():
    t = np.linspace(0, 5e-5, 400)
    rhos = evolve_two_level(2 ** -0.5, 2 ** -0.5, 1e7, 99.0, t)
    fit = extract_rates_from_trajectory(t, rhos, skip=0.0)
    assert fit["gamma_p"] == pytest.approx(1e5, rel=1e-9)
    assert fit["gamma_phi"] == pytest.approx(5e6, rel=1e-9)


def test_extraction_rejects_non_decaying():
    t = np.linspace(0, 1e-5, 50)
    rhos = evolve_two_level(2 ** -0.5, 2 ** -0.5, 0.0, 99.0, t)
    with pytest.raises(FitError):
        extract_rates_from_trajectory(t, rhos, skip=0.0)


def test_trajectory_csv_columns():
    drive = DriveParams(G, 0.0, 10.0, G)
    t = np.linspace(0, 1e-8, 3)
    text = trajectory_csv(t, three_level_trajectory(drive, superposition(), t))
    lines = text.strip().splitlines()
    assert lines[0].split(",") == TRAJECTORY_COLUMNS
    assert len(lines) == 4
    assert len(TRAJECTORY_COLUMNS) == 13


def test_gamma_constant_matches_lifetime():
    assert GAMMA == pytest.approx(2.222e8, rel=1e-3)
