"""
Closed-form model curves emitted as CSV rows.

Each curve takes a flat mapping of numeric parameters; unknown names are
rejected so typos do not silently fall back to defaults. Times are in s,
powers in nW, rates in s^-1.
"""

from __future__ import annotations

from typing import Callable, Mapping

import numpy as np

from .core import EmitterParams
from .cqed import CavityParams, transmission_curve
from .dynamics import dephasing_rate, polarization_rate, pump_rate
from .photostats import expected_counts, fidelity_map

GAMMA_DEFAULT = 1.0 / 4.5e-9


class CurveError(ValueError):
    """Unknown curve name or bad curve parameter."""


def _axis(lo, hi, n, log=True):
    n = int(n)
    if n < 1 or lo < 0 or hi < lo:
        raise CurveError("axis needs n >= 1 and 0 <= min <= max")
    if log and lo > 0:
        return np.geomspace(lo, hi, n)
    return np.linspace(lo, hi, n)


def _emitter(k: Mapping[str, float]) -> EmitterParams:
    return EmitterParams(
        gamma=k["gamma"], lambda_cyc=k["lambda_cyc"], p_sat=k["p_sat"], delta=k.get("delta", 0.0),
        eta=k["eta"], noise_a=k["noise_a"], noise_b=k["noise_b"], eps0=k.get("eps0", 0.0),
        eps1=k.get("eps1", 0.0),
    )


def saturation_curve(k: Mapping[str, float]) -> list[dict]:
    """Mean bright/dark counts and their difference versus power."""
    e = _emitter(k)
    rows = []
    for p in _axis(k["p_min"], k["p_max"], k["n"]):
        n_b = expected_counts(e, p, k["tau"], "bright")
        n_d = expected_counts(e, p, k["tau"], "dark")
        rows.append({"p_nW": float(p), "n_b": n_b, "n_d": n_d, "signal": n_b - n_d})
    return rows


def fidelity_map_curve(k: Mapping[str, float]) -> list[dict]:
    """Predicted readout fidelity on a (power, efficiency) grid."""
    e = _emitter(k)
    powers = _axis(k["p_min"], k["p_max"], k["n"])
    etas = _axis(k["eta_min"], k["eta_max"], k["n_eta"])
    return fidelity_map(e, powers, etas, k["tau"], optimize_threshold=bool(k.get("optimize", 1)))


def dephasing_curve(k: Mapping[str, float]) -> list[dict]:
    """Pump, polarization and measurement-induced dephasing rates versus power."""
    e = _emitter(k)
    rows = []
    for p in _axis(k["p_min"], k["p_max"], k["n"]):
        R = float(pump_rate(p, e))
        rows.append({"p_nW": float(p), "R": R, "gamma_p": float(polarization_rate(R, e.lambda_cyc)),
                     "gamma_phi": float(dephasing_rate(R))})
    return rows


def dispersive_transmission_curve(k: Mapping[str, float]) -> list[dict]:
    """Intracavity |alpha|^2 for both spin states versus probe detuning."""
    c = CavityParams(kappa=k["kappa"], chi=k["chi"], epsilon=k["epsilon"])
    span = k.get("span", 4.0 * (abs(k["chi"]) + k["kappa"]))
    return transmission_curve(c, np.linspace(-span, span, int(k["n"])))


_EMITTER_DEFAULTS = {
    "gamma": GAMMA_DEFAULT, "lambda_cyc": 2244.0, "p_sat": 313.0, "delta": 0.0, "eta": 0.992e-3,
    "noise_a": 0.0, "noise_b": 0.0, "eps0": 0.0, "eps1": 0.0, "tau": 50e-6,
}

CURVES: dict[str, tuple[Callable, dict[str, float]]] = {
    "saturation": (saturation_curve, {**_EMITTER_DEFAULTS, "p_min": 1.0, "p_max": 1e5, "n": 121}),
    "fidelity_map": (fidelity_map_curve, {
        **_EMITTER_DEFAULTS, "lambda_cyc": 2200.0, "noise_a": 4000.0, "p_min": 10.0, "p_max": 1e5, "n": 41,
        "eta_min": 1e-4, "eta_max": 1e-1, "n_eta": 31, "optimize": 1.0,
    }),
    "dephasing": (dephasing_curve, {**_EMITTER_DEFAULTS, "p_sat": 1436.0, "p_min": 1.0, "p_max": 1e5, "n": 121}),
    "dispersive_transmission": (dispersive_transmission_curve, {
        "kappa": 1.0, "chi": 2.0, "epsilon": 1.0, "n": 401,
    }),
}


def model_curve(name: str, overrides: Mapping[str, float] | None = None) -> list[dict]:
    """Evaluate a named curve with default parameters updated by ``overrides``."""
    if name not in CURVES:
        raise CurveError(f"unknown model {name!r}; expected one of {sorted(CURVES)}")
    fn, defaults = CURVES[name]
    kw = dict(defaults)
    for key, v in (overrides or {}).items():
        if key not in defaults and not (name == "dispersive_transmission" and key == "span"):
            raise CurveError(f"unknown parameter {key!r} for model {name!r}; known: {sorted(defaults)}")
        kw[key] = float(v)
    try:
        return fn(kw)
    except (ValueError, KeyError) as exc:
        if isinstance(exc, CurveError):
            raise
        raise CurveError(str(exc)) from exc
