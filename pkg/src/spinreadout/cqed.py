"""
Dispersive cavity readout.

A spin-dependent cavity shift +/-chi makes the steady-state probe field
depend on the spin. Emission (counts) and measurement backaction
(dephasing) both scale with the probe power, and their ratio gives the
measurement efficiency up to the factor f computed here.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, replace

import numpy as np


class DegenerateProbeError(ValueError):
    """|alpha_down| == |alpha_up|, so the count signal vanishes."""


class ModelValidityWarning(UserWarning):
    pass


@dataclass(frozen=True)
class CavityParams:
    """Cavity linewidth, dispersive shift, drive and probe detuning (s^-1)."""

    kappa: float
    chi: float
    epsilon: float
    delta: float = 0.0

    def __post_init__(self):
        if not self.kappa > 0:
            raise ValueError("kappa must be > 0")

    def at_power(self, p: float, c: float = 1.0) -> "CavityParams":
        """Drive set by epsilon^2 = c p."""
        if p < 0 or c <= 0:
            raise ValueError("need p >= 0 and c > 0")
        return replace(self, epsilon=math.sqrt(c * p))


def cavity_field(params: CavityParams, spin: str):
    """Steady-state intracavity amplitude epsilon / sqrt((kappa/2)^2 + (delta +/- chi)^2).

    "+" applies to the down spin, "-" to the up spin.
    """
    if spin in ("down", 0):
        d = params.delta + params.chi
    elif spin in ("up", 1):
        d = params.delta - params.chi
    else:
        raise ValueError("spin must be 'down' or 'up'")
    return params.epsilon / np.sqrt((params.kappa / 2) ** 2 + d ** 2)


def fields(params: CavityParams) -> tuple[float, float]:
    return float(cavity_field(params, "down")), float(cavity_field(params, "up"))


def post_measurement_coherence(alpha_down, alpha_up) -> float:
    """|rho'_du| = (1/2) |<alpha_down|alpha_up>| = (1/2) exp(-|alpha_down - alpha_up|^2 / 2)."""
    d = abs(complex(alpha_down) - complex(alpha_up))
    return 0.5 * math.exp(-0.5 * d * d)


def dispersive_counts(eta: float, kappa: float, tau: float, alpha_down, alpha_up) -> tuple[float, float]:
    """Mean counts (n_b, n_d) = eta kappa tau |alpha|^2 for the brighter and
    dimmer spin branch."""
    if tau * kappa < 10:
        warnings.warn("tau is not long compared to 1/kappa; the steady-state field model may not hold",
                      ModelValidityWarning, stacklevel=2)
    n = [eta * kappa * tau * abs(a) ** 2 for a in (alpha_down, alpha_up)]
    return max(n), min(n)


def dispersive_dephasing(kappa: float, alpha_down, alpha_up) -> float:
    """Measurement-induced dephasing rate (1/2) |alpha_down - alpha_up|^2 kappa."""
    d = abs(complex(alpha_down) - complex(alpha_up))
    return 0.5 * d * d * kappa


def f_factor(params: CavityParams) -> float:
    """f = |alpha_d - alpha_u|^2 / | |alpha_d|^2 - |alpha_u|^2 |; independent of epsilon."""
    unit = replace(params, epsilon=1.0)
    a, b = fields(unit)
    den = abs(a * a - b * b)
    if den <= 1e-12 * max(a * a, b * b):
        raise DegenerateProbeError("probe detuning gives equal field magnitudes for both spins")
    return (a - b) ** 2 / den


def dispersive_efficiency(A_slope: float, B_slope: float, tau: float, params: CavityParams) -> float:
    """Efficiency (A / (2 B tau)) f from the count slope A and dephasing slope B."""
    if B_slope <= 0 or tau <= 0:
        raise ValueError("B and tau must be > 0")
    return A_slope / (2.0 * B_slope * tau) * f_factor(params)


def model_slopes(params: CavityParams, eta: float, tau: float, c: float = 1.0) -> tuple[float, float]:
    """Exact slopes (A, B) of n_b - n_d and Gamma_phi versus probe power p,
    with epsilon^2 = c p."""
    unit = params.at_power(1.0, c)
    a, b = fields(unit)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", ModelValidityWarning)
        n_b, n_d = dispersive_counts(eta, unit.kappa, tau, a, b)
    return n_b - n_d, dispersive_dephasing(unit.kappa, a, b)


def transmission_curve(params: CavityParams, detunings) -> list[dict]:
    """Rows (delta, |alpha_down|^2, |alpha_up|^2) over probe detunings."""
    rows = []
    for d in detunings:
        a, b = fields(replace(params, delta=float(d)))
        rows.append({"delta": float(d), "abs2_down": a * a, "abs2_up": b * b})
    return rows
