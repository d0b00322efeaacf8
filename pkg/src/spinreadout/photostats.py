"""
Closed-form photon-count and readout-fidelity models.

Outcome convention: a readout returns "1" (spin up, dark) when the counts
fall below the threshold N_r and "0" (spin down, bright) otherwise.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np
from scipy.special import gammaincc, gammaln, xlogy

from .core import CountHistogram, EmitterParams
from .dynamics import polarization_rate, pump_rate

BRIGHT, DARK = "bright", "dark"


@dataclass(frozen=True)
class ReadoutModelInputs:
    n_d: float
    n_b: float
    N_r: int = 1
    f0: float = 1.0

    def __post_init__(self):
        if not (0 <= self.n_d <= self.n_b):
            raise ValueError("need 0 <= n_d <= n_b")
        if int(self.N_r) != self.N_r or self.N_r < 1:
            raise ValueError("N_r must be an integer >= 1")
        if not 0 < self.f0 <= 1:
            raise ValueError("f0 must be in (0, 1]")


def emission_rate(t, alpha2: float, R: float, gamma_p: float):
    """Photon scattering rate alpha2 * R * exp(-Gamma_p t) of a spin that
    starts with down-population ``alpha2``."""
    if not 0 <= alpha2 <= 1:
        raise ValueError("alpha2 must be in [0, 1]")
    t = np.asarray(t, dtype=float)
    if np.any(t < 0):
        raise ValueError("t must be >= 0")
    out = alpha2 * R * np.exp(-gamma_p * t)
    return float(out) if out.ndim == 0 else out


def signal_counts(params: EmitterParams, p, tau, simplified: bool = False):
    """Mean signal clicks eta (Lambda+1)(1 - exp(-Gamma_p tau)) for a bright
    start. ``simplified=True`` uses Lambda in place of Lambda+1."""
    R = pump_rate(p, params)
    gp = polarization_rate(R, params.lambda_cyc)
    n_emit = params.lambda_cyc if simplified else params.lambda_cyc + 1
    return params.eta * n_emit * -np.expm1(-gp * np.asarray(tau, dtype=float))


def expected_counts(params: EmitterParams, p, tau, prep: str = BRIGHT, simplified: bool = False):
    """Mean counts in a readout window of length ``tau`` at power ``p``.

    Dark: n_d = (a + b p) tau. Bright: n_b = n_d + eta (Lambda+1)(1 - e^{-Gamma_p tau}).
    """
    if np.any(np.asarray(tau) < 0):
        raise ValueError("tau must be >= 0")
    n_d = (params.noise_a + params.noise_b * np.asarray(p, dtype=float)) * tau
    if prep == DARK:
        out = n_d
    elif prep == BRIGHT:
        out = n_d + signal_counts(params, p, tau, simplified)
    else:
        raise ValueError(f"prep must be {BRIGHT!r} or {DARK!r}")
    return float(out) if np.ndim(out) == 0 else out


def poisson_pmf(k, n):
    """Poisson probability n^k e^{-n} / k!, evaluated in log space."""
    k = np.asarray(k)
    n = np.asarray(n, dtype=float)
    if np.any(k < 0) or np.any(n < 0):
        raise ValueError("need k >= 0 and n >= 0")
    out = np.exp(xlogy(k, n) - n - gammaln(k + 1.0))
    return float(out) if out.ndim == 0 else out


def prob_below(N_r: int, n):
    """P(Poisson(n) < N_r), the regularized upper incomplete gamma Q(N_r, n)."""
    return gammaincc(N_r, n)


def error_probabilities(n_d: float, n_b: float, N_r: int = 1, eps0: float = 0.0, eps1: float = 0.0):
    """(P(1|down), P(0|up)) including state-preparation errors."""
    q_d = prob_below(N_r, n_d)
    q_b = prob_below(N_r, n_b)
    p1_down = (1 - eps0) * q_b + eps0 * q_d
    p0_up = (1 - eps1) * (1 - q_d) + eps1 * (1 - q_b)
    return float(p1_down), float(p0_up)


def fidelity_model(inputs: ReadoutModelInputs) -> float:
    """Predicted readout fidelity 1/2 + (f0/2)(Q(N_r, n_d) - Q(N_r, n_b)).

    At N_r = 1 this is 1/2 + (f0/2)(e^{-n_d} - e^{-n_b}).
    """
    if inputs.N_r == 1:
        return 0.5 + 0.5 * inputs.f0 * (math.exp(-inputs.n_d) - math.exp(-inputs.n_b))
    q_d = prob_below(inputs.N_r, inputs.n_d)
    q_b = prob_below(inputs.N_r, inputs.n_b)
    return float(0.5 + 0.5 * inputs.f0 * (q_d - q_b))


def best_model_threshold(n_d: float, n_b: float, f0: float = 1.0, n_max: int | None = None):
    """Scan N_r for the fidelity-maximizing threshold of the closed form."""
    if n_max is None:
        n_max = int(n_b + 10 * math.sqrt(n_b + 1) + 10)
    best = (1, -1.0)
    for N in range(1, n_max + 1):
        F = fidelity_model(ReadoutModelInputs(n_d, n_b, N, f0))
        if F > best[1] + 1e-15:
            best = (N, F)
    return best


def empirical_fidelity(hist_down: CountHistogram, hist_up: CountHistogram, N_r: int) -> float:
    """F_r = 1 - P(1|down)/2 - P(0|up)/2 from measured count histograms."""
    if hist_down.total == 0 or hist_up.total == 0:
        raise ValueError("empty histogram")
    p1_down = hist_down.fraction_below(N_r)
    p0_up = 1.0 - hist_up.fraction_below(N_r)
    return 1.0 - 0.5 * p1_down - 0.5 * p0_up


def empirical_fidelity_sigma(hist_down: CountHistogram, hist_up: CountHistogram, N_r: int) -> float:
    """Binomial 1-sigma error of :func:`empirical_fidelity`."""
    p1 = hist_down.fraction_below(N_r)
    p0 = 1.0 - hist_up.fraction_below(N_r)
    return 0.5 * math.sqrt(p1 * (1 - p1) / hist_down.total + p0 * (1 - p0) / hist_up.total)


def _table(joint) -> np.ndarray:
    t = np.asarray(joint, dtype=float)
    if t.shape != (2, 2):
        raise ValueError("joint table must be 2x2, indexed [first][second]")
    if np.any(t < 0):
        raise ValueError("joint counts must be >= 0")
    return t


def conditional_fidelity(joint) -> float | None:
    """Fraction of anticorrelated outcome pairs that have the dominant order.

    ``joint[i][j]`` counts cycles with first result i and second result j.
    F_c = max(N01, N10) / (N01 + N10). Returns None (undefined) when no
    anticorrelated pair was observed. Invariant under swapping labels.
    """
    t = _table(joint)
    den = t[0, 1] + t[1, 0]
    if den == 0:
        return None
    return float(max(t[0, 1], t[1, 0]) / den)


def qnd_fidelity(joint) -> float:
    """Probability that two consecutive results are anticorrelated as
    expected: (N01 + N10) / N."""
    t = _table(joint)
    total = t.sum()
    if total == 0:
        raise ValueError("empty joint table")
    return float((t[0, 1] + t[1, 0]) / total)


def joint_probabilities(p_first_down: float, p1_down: float, p0_up: float, flip: float) -> np.ndarray:
    """Joint outcome probabilities of two readouts.

    The spin is down with probability ``p_first_down`` before the first
    readout and is flipped between readouts with probability ``flip``.
    Useful as a closed-form oracle when the first readout does not alter
    the spin.
    """
    out = np.zeros((2, 2))
    for s1, w in ((0, p_first_down), (1, 1 - p_first_down)):
        r1 = np.array([1 - p1_down, p1_down]) if s1 == 0 else np.array([p0_up, 1 - p0_up])
        for s2, w2 in ((1 - s1, flip), (s1, 1 - flip)):
            r2 = np.array([1 - p1_down, p1_down]) if s2 == 0 else np.array([p0_up, 1 - p0_up])
            out += w * w2 * np.outer(r1, r2)
    return out


def polarization_fidelity(a: float, b: float) -> float:
    """F_pol = 1 - b/(2a) from the peak (a) and floor (b) count rates."""
    if not a > 0:
        raise ValueError("peak rate a must be > 0")
    if b < 0 or b > 2 * a:
        raise ValueError("floor rate b must be in [0, 2a]")
    return 1.0 - b / (2.0 * a)


def loss_budget(factors: Mapping[str, float] | Sequence[float]) -> float:
    """Total efficiency as the product of independent loss factors."""
    vals = list(factors.values()) if isinstance(factors, Mapping) else list(factors)
    for v in vals:
        if not 0 <= v <= 1:
            raise ValueError(f"efficiency factor {v} outside [0, 1]")
    return float(np.prod(vals)) if vals else 1.0


# ---------------------------------------------------------------------------
# model curves


def readout_curve(params: EmitterParams, powers, tau: float, N_r: int = 1) -> list[dict]:
    """Rows (p_nW, n_b, n_d, F_r_pred) along a power axis."""
    rows = []
    for p in powers:
        n_b = expected_counts(params, p, tau, BRIGHT)
        n_d = expected_counts(params, p, tau, DARK)
        F = fidelity_model(ReadoutModelInputs(n_d, n_b, N_r, params.f0))
        rows.append({"p_nW": float(p), "n_b": n_b, "n_d": n_d, "F_r_pred": F})
    return rows


def fidelity_map(params: EmitterParams, powers, etas, tau: float, optimize_threshold: bool = True) -> list[dict]:
    """Predicted fidelity over a (power, efficiency) grid."""
    rows = []
    for eta in etas:
        pe = EmitterParams(**{**params.__dict__, "eta": float(eta)})
        for p in powers:
            n_b = expected_counts(pe, p, tau, BRIGHT)
            n_d = expected_counts(pe, p, tau, DARK)
            if optimize_threshold:
                N_r, F = best_model_threshold(n_d, n_b, pe.f0)
            else:
                N_r, F = 1, fidelity_model(ReadoutModelInputs(n_d, n_b, 1, pe.f0))
            rows.append({
                "p_nW": float(p), "eta": float(eta), "n_b": n_b, "n_d": n_d,
                "N_r": N_r, "F_r_pred": F, "infidelity": 1.0 - F,
            })
    return rows


def rows_to_csv(rows: list[dict], stream=None) -> str | None:
    own = stream is None
    buf = io.StringIO() if own else stream
    if rows:
        names = list(dict.fromkeys(k for r in rows for k in r))
        w = csv.DictWriter(buf, fieldnames=names, restval="", lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in r.items()})
    return buf.getvalue() if own else None
