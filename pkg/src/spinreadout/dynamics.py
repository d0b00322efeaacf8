"""
Driven Lambda-system dynamics.

Closed-form pumping, polarization and dephasing rates of the two-level
reduction, plus a fixed-step RK4 integrator of the full three-level
master equation in the basis (down, up, A). The integrator is the
cross-check oracle for the closed forms; the Monte Carlo engine only uses
the closed forms.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from typing import Iterable

import numpy as np
from scipy.signal import find_peaks

from .core import EmitterParams, FitError, FitResult

DOWN, UP, EXC = 0, 1, 2


class StepUnderflowError(RuntimeError):
    """The Richardson check kept failing down to the minimum step size."""


# ---------------------------------------------------------------------------
# closed forms


def saturation_parameter(p, p_sat):
    return np.asarray(p, dtype=float) / p_sat


def pump_rate(p, params: EmitterParams):
    """Effective optical pumping rate R(p) in s^-1.

    R = (gamma/2) s / (1 + s + (delta/(gamma/2))^2) with s = p/p_sat.
    Accepts scalar or array ``p``.
    """
    p = np.asarray(p, dtype=float)
    if np.any(p < 0):
        raise ValueError("power must be >= 0")
    s = p / params.p_sat
    hw = params.gamma / 2
    r = hw * s / (1 + s + (params.delta / hw) ** 2)
    return float(r) if r.ndim == 0 else r


def polarization_rate(R, lambda_cyc: float):
    """Gamma_p = R / (Lambda + 1)."""
    if lambda_cyc < 0:
        raise ValueError("lambda_cyc must be >= 0")
    return R / (lambda_cyc + 1.0)


def dephasing_rate(R):
    """Gamma_phi = R / 2."""
    if np.any(np.asarray(R) < 0):
        raise ValueError("R must be >= 0")
    return R / 2.0


def rates_at_power(p, params: EmitterParams):
    """(R, Gamma_p, Gamma_phi) at power ``p``."""
    R = pump_rate(p, params)
    return R, polarization_rate(R, params.lambda_cyc), dephasing_rate(R)


def evolve_two_level(alpha: complex, beta: complex, R: float, lambda_cyc: float, t) -> np.ndarray:
    """Analytic state of the two-level reduction at time(s) ``t``.

    Returns a (2, 2) matrix in the basis (down, up), or (n, 2, 2) for an
    array of times.
    """
    norm = abs(alpha) ** 2 + abs(beta) ** 2
    if abs(norm - 1) > 1e-9:
        raise ValueError(f"amplitudes not normalized: |alpha|^2+|beta|^2 = {norm}")
    t = np.asarray(t, dtype=float)
    if np.any(t < 0):
        raise ValueError("t must be >= 0")
    gp = polarization_rate(R, lambda_cyc)
    gphi = dephasing_rate(R)
    a2 = abs(alpha) ** 2
    decay = np.exp(-gp * t)
    rho = np.empty(t.shape + (2, 2), dtype=complex)
    rho[..., 0, 0] = a2 * decay
    rho[..., 1, 1] = 1.0 - rho[..., 0, 0].real
    c = alpha * np.conj(beta) * np.exp(-gphi * t)
    rho[..., 0, 1] = c
    rho[..., 1, 0] = np.conj(c)
    return rho


def omega_from_power(p, params: EmitterParams):
    """Rabi frequency matching p/p_sat = 2 Omega^2 / gamma^2."""
    return params.gamma * np.sqrt(np.asarray(p, dtype=float) / params.p_sat / 2.0)


def power_from_omega(omega, gamma: float, p_sat: float = 1.0):
    return 2.0 * (np.asarray(omega, dtype=float) / gamma) ** 2 * p_sat


# ---------------------------------------------------------------------------
# three-level master equation


@dataclass(frozen=True)
class DriveParams:
    omega: float
    delta: float
    lambda_cyc: float
    gamma: float

    def __post_init__(self):
        if self.gamma <= 0:
            raise ValueError("gamma must be > 0")
        if self.lambda_cyc <= 0:
            raise ValueError("lambda_cyc must be > 0")
        if self.omega < 0:
            raise ValueError("omega must be >= 0")

    @property
    def gamma_down(self) -> float:
        return self.gamma * self.lambda_cyc / (1 + self.lambda_cyc)

    @property
    def gamma_up(self) -> float:
        return self.gamma / (1 + self.lambda_cyc)

    def equivalent_power_ratio(self) -> float:
        return 2 * (self.omega / self.gamma) ** 2

    def two_level_rates(self) -> tuple[float, float, float]:
        """(R, Gamma_p, Gamma_phi) of the two-level reduction at this drive."""
        s = self.equivalent_power_ratio()
        hw = self.gamma / 2
        R = hw * s / (1 + s + (self.delta / hw) ** 2)
        return R, R / (self.lambda_cyc + 1), R / 2


def hamiltonian(drive: DriveParams) -> np.ndarray:
    H = np.zeros((3, 3), dtype=complex)
    H[DOWN, EXC] = H[EXC, DOWN] = drive.omega / 2
    H[DOWN, DOWN] = drive.delta / 2
    H[EXC, EXC] = -drive.delta / 2
    return H


def jump_operators(drive: DriveParams) -> list[np.ndarray]:
    L1 = np.zeros((3, 3), dtype=complex)
    L1[DOWN, EXC] = np.sqrt(drive.gamma_down)
    L2 = np.zeros((3, 3), dtype=complex)
    L2[UP, EXC] = np.sqrt(drive.gamma_up)
    return [L1, L2]


def liouvillian(drive: DriveParams) -> np.ndarray:
    """Superoperator acting on row-major vec(rho), vec(A X B) = (A kron B^T) vec(X)."""
    H = hamiltonian(drive)
    eye = np.eye(3)
    L = -1j * (np.kron(H, eye) - np.kron(eye, H.T))
    for J in jump_operators(drive):
        JdJ = J.conj().T @ J
        L += np.kron(J, J.conj()) - 0.5 * (np.kron(JdJ, eye) + np.kron(eye, JdJ.T))
    return L


# Real coordinates: 3 diagonal entries, then (re, im) of the (0,1), (0,2), (1,2)
# elements. Hermiticity is exact by construction in these coordinates.
_PAIRS = ((0, 1), (0, 2), (1, 2))


def _real_basis() -> np.ndarray:
    T = np.zeros((9, 9), dtype=complex)
    for k in range(3):
        T[4 * k, k] = 1.0
    for n, (i, j) in enumerate(_PAIRS):
        T[3 * i + j, 3 + 2 * n] = 1.0
        T[3 * j + i, 3 + 2 * n] = 1.0
        T[3 * i + j, 4 + 2 * n] = 1j
        T[3 * j + i, 4 + 2 * n] = -1j
    return T


_T = _real_basis()
_TINV = np.linalg.inv(_T)


def to_real(rho: np.ndarray) -> np.ndarray:
    return (_TINV @ np.asarray(rho, dtype=complex).reshape(-1)).real


def from_real(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    return (x @ _T.T).reshape(x.shape[:-1] + (3, 3))


def real_generator(drive: DriveParams) -> np.ndarray:
    G = _TINV @ liouvillian(drive) @ _T
    return G.real


def rk4_step_matrix(G: np.ndarray, h: float) -> np.ndarray:
    """One classical RK4 step for the linear system dx/dt = G x."""
    A = h * G
    A2 = A @ A
    A3 = A2 @ A
    return np.eye(len(G)) + A + A2 / 2 + A3 / 6 + A3 @ A / 24


def default_step(drive: DriveParams) -> float:
    scales = [drive.gamma]
    if drive.omega > 0:
        scales.append(drive.omega)
    if drive.delta != 0:
        scales.append(abs(drive.delta))
    return 1.0 / (50.0 * max(scales))


def check_density_matrix(rho: np.ndarray, herm_tol=1e-12, trace_tol=1e-9, pos_tol=1e-9) -> None:
    rho = np.asarray(rho)
    if rho.shape[-2:] != (3, 3):
        raise ValueError("expected 3x3 density matrices")
    if np.max(np.abs(rho - np.conj(np.swapaxes(rho, -1, -2)))) > herm_tol:
        raise ValueError("density matrix not Hermitian")
    tr = np.trace(rho, axis1=-2, axis2=-1)
    if np.max(np.abs(tr - 1)) > trace_tol:
        raise ValueError("density matrix trace differs from 1")
    ev = np.linalg.eigvalsh(0.5 * (rho + np.conj(np.swapaxes(rho, -1, -2))))
    if np.min(ev) < -pos_tol:
        raise ValueError(f"density matrix not positive (min eigenvalue {np.min(ev):.3g})")


def _propagate(G: np.ndarray, x0: np.ndarray, times: np.ndarray, h_max: float) -> np.ndarray:
    out = np.empty((len(times), 9))
    x = x0.copy()
    t_prev = 0.0
    cache: dict[float, np.ndarray] = {}
    for k, t in enumerate(times):
        dt = t - t_prev
        if dt > 0:
            key = float(f"{dt:.12e}")
            P = cache.get(key)
            if P is None:
                n = int(np.ceil(dt / h_max * (1 - 1e-12)))
                P = np.linalg.matrix_power(rk4_step_matrix(G, dt / n), n)
                cache[key] = P
            x = P @ x
        out[k] = x
        t_prev = t
    return out


def three_level_trajectory(
    drive: DriveParams,
    rho0: np.ndarray,
    times: Iterable[float],
    tol: float = 1e-6,
    h: float | None = None,
    max_halvings: int = 8,
) -> np.ndarray:
    """Integrate the three-level master equation and sample it at ``times``.

    Fixed-step RK4 with step ``h`` (default min(1/(50 gamma), 1/(50 Omega))),
    applied as the constant one-step propagator raised to the number of
    steps. A Richardson check compares against step h/2; the step is halved
    until the two agree to ``tol``.

    Returns
    -------
    ndarray, shape (n, 3, 3)
    """
    check_density_matrix(rho0)
    times = np.asarray(list(times), dtype=float)
    if times.ndim != 1 or np.any(times < 0) or np.any(np.diff(times) < 0):
        raise ValueError("times must be a non-decreasing sequence of t >= 0")
    if tol <= 0:
        raise ValueError("tol must be > 0")
    G = real_generator(drive)
    x0 = to_real(rho0)
    h = default_step(drive) if h is None else h
    coarse = _propagate(G, x0, times, h)
    for _ in range(max_halvings):
        fine = _propagate(G, x0, times, h / 2)
        err = np.max(np.abs(fine - coarse)) if len(times) else 0.0
        if err <= tol:
            break
        h /= 2
        coarse = fine
    else:
        raise StepUnderflowError(f"Richardson check failed down to step {h:.3g} s (error {err:.3g})")
    rho = from_real(fine)
    drift = np.max(np.abs(np.trace(rho, axis1=1, axis2=2) - 1)) if len(times) else 0.0
    if drift > tol:
        raise StepUnderflowError(f"trace drift {drift:.3g} exceeds tol")
    return rho


def evolve_three_level(drive: DriveParams, rho0: np.ndarray, t: float, tol: float = 1e-6) -> np.ndarray:
    """State of the three-level system at time ``t``."""
    if t < 0:
        raise ValueError("t must be >= 0")
    return three_level_trajectory(drive, rho0, [t], tol=tol)[0]


def projector(state: int) -> np.ndarray:
    rho = np.zeros((3, 3), dtype=complex)
    rho[state, state] = 1.0
    return rho


def superposition(alpha: complex = 2 ** -0.5, beta: complex = 2 ** -0.5) -> np.ndarray:
    psi = np.array([alpha, beta, 0.0], dtype=complex)
    return np.outer(psi, psi.conj())


# ---------------------------------------------------------------------------
# rate extraction


def _log_slope(t: np.ndarray, y: np.ndarray) -> tuple[float, float, float]:
    """Least-squares line through (t, log y): returns (-slope, sigma, rss)."""
    A = np.vstack([t, np.ones_like(t)]).T
    ly = np.log(y)
    coef, res, *_ = np.linalg.lstsq(A, ly, rcond=None)
    rss = float(np.sum((A @ coef - ly) ** 2))
    dof = max(len(t) - 2, 1)
    cov = np.linalg.inv(A.T @ A) * rss / dof
    return -coef[0], float(np.sqrt(max(cov[0, 0], 0.0))), rss


def extract_rates_from_trajectory(
    times,
    rhos,
    gamma: float | None = None,
    skip: float | None = None,
    floor: float = 1e-12,
) -> FitResult:
    """Exponential-envelope fits of rho_dd(t) and |rho_du(t)|.

    Parameters
    ----------
    times : array, shape (n,)
    rhos : array, shape (n, d, d)
        Density matrices with basis order (down, up, ...); d is 2 or 3.
    gamma : float, optional
        Optical decay rate; the first ``5/gamma`` is skipped by default so
        coherent transients do not bias the envelope.
    skip : float, optional
        Explicit transient cut, overrides the gamma-based default.

    Returns
    -------
    FitResult with parameters ``gamma_p`` and ``gamma_phi``.
    """
    t = np.asarray(times, dtype=float)
    rhos = np.asarray(rhos)
    if skip is None:
        skip = 5.0 / gamma if gamma else 0.0
    pop = rhos[:, DOWN, DOWN].real
    coh = np.abs(rhos[:, DOWN, UP])

    # population: late part of the trajectory, where fast transients are gone
    t_end = t[-1]
    m = (t >= max(skip, 0.1 * t_end)) & (pop > floor)
    if m.sum() < 3:
        raise FitError("too few population samples after the transient cut")
    if pop[m][-1] > 0.1 * pop[m][0] and pop[m][-1] >= pop[m][0]:
        raise FitError("population does not decay; trajectory rejected")
    gp, gp_err, rss_p = _log_slope(t[m], pop[m])
    if not gp > 0:
        raise FitError("population does not decay; trajectory rejected")

    # coherence: envelope through local maxima when it oscillates
    m = (t >= skip) & (coh > floor * max(coh.max(), floor))
    if m.sum() < 3:
        raise FitError("too few coherence samples after the transient cut")
    tc, cc = t[m], coh[m]
    peaks, _ = find_peaks(cc)
    if len(peaks) >= 3:
        tc, cc = tc[peaks], cc[peaks]
    gphi, gphi_err, rss_c = _log_slope(tc, cc)
    if not gphi > 0:
        raise FitError("coherence does not decay; trajectory rejected")
    return FitResult(
        names=("gamma_p", "gamma_phi"),
        values=(float(gp), float(gphi)),
        errors=(gp_err, gphi_err),
        rss=rss_p + rss_c,
        iterations=1,
        converged=True,
        model="log-linear envelope",
    )


def simulate_and_extract(drive: DriveParams, n_fast: int = 4000, n_slow: int = 400, tol: float = 1e-6):
    """Run a three-level trajectory from an equal superposition and extract
    (Gamma_p, Gamma_phi).

    The time grid is dense over the coherence decay and sparse over the
    slower polarization decay; both windows are sized from the two-level
    prediction.
    """
    _, gp2, gphi2 = drive.two_level_rates()
    t_coh = min(12.0 / gphi2, 2.3 / gp2) + 10.0 / drive.gamma
    t_pop = 2.5 / gp2 + 10.0 / drive.gamma
    fast = np.linspace(0.0, t_coh, n_fast)
    slow = np.linspace(t_coh, max(t_pop, t_coh * 1.01), n_slow + 1)[1:]
    times = np.concatenate([fast, slow])
    rhos = three_level_trajectory(drive, superposition(), times, tol=tol)
    return extract_rates_from_trajectory(times, rhos, gamma=drive.gamma), times, rhos


# ---------------------------------------------------------------------------
# trajectory dump

TRAJECTORY_COLUMNS = ["t_s"] + [
    f"{part}_{name}"
    for name in ("dd", "uu", "aa", "du", "da", "ua")
    for part in ("re", "im")
]
_ENTRIES = ((0, 0), (1, 1), (2, 2), (0, 1), (0, 2), (1, 2))


def trajectory_csv(times, rhos, stream: io.TextIOBase | None = None) -> str | None:
    """Write a trajectory as CSV (t_s plus re/im of the six independent entries).

    Returns the text when ``stream`` is None.
    """
    own = stream is None
    buf = io.StringIO() if own else stream
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(TRAJECTORY_COLUMNS)
    for t, rho in zip(times, rhos):
        row = [repr(float(t))]
        for i, j in _ENTRIES:
            z = rho[i, j] if rho.shape[0] > max(i, j) else 0.0
            row += [repr(float(np.real(z))), repr(float(np.imag(z)))]
        w.writerow(row)
    return buf.getvalue() if own else None
