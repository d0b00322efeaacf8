"""
Histogramming, thresholds, post-selection and the nonlinear fits used to
recover physical parameters from click data.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .core import AnalysisError, CountHistogram, FitError, FitResult
from .dataset import PointData, SweepPoint
from .fitting import Param, least_squares_fit
from .photostats import empirical_fidelity

SELECTIONS = ("first", "second", "both", "none")


# ---------------------------------------------------------------------------
# histograms and thresholds


def _data(point) -> PointData:
    return point.data if isinstance(point, SweepPoint) else point


def window_counts(point, label: str) -> np.ndarray:
    d = _data(point)
    if label not in d.counts:
        raise AnalysisError(f"unknown window label {label!r}; collected windows are {d.labels}")
    return d.counts[label]


def histogram_window(point, label: str, selection: np.ndarray | None = None,
                     description: str = "all") -> CountHistogram:
    """Count histogram of one window over the selected cycles."""
    c = window_counts(point, label)
    if selection is not None:
        c = c[np.asarray(selection, dtype=bool)]
    return CountHistogram.from_counts(c, description)


def optimize_threshold(hist_down: CountHistogram, hist_up: CountHistogram) -> tuple[int, float]:
    """Threshold maximizing the empirical readout fidelity.

    Scans N_r from 1 to max_count + 1; ties go to the smaller N_r.
    """
    if hist_down.total == 0 or hist_up.total == 0:
        raise AnalysisError("cannot optimize the threshold on an empty histogram")
    top = max(hist_down.max_count, hist_up.max_count) + 1
    down = np.cumsum(hist_down.as_array(top + 1)) / hist_down.total  # P(count <= k)
    up = np.cumsum(hist_up.as_array(top + 1)) / hist_up.total
    best_n, best_f = 1, -1.0
    for n in range(1, top + 1):
        p1_down = down[n - 1]
        p0_up = 1.0 - up[n - 1]
        f = 1.0 - 0.5 * p1_down - 0.5 * p0_up
        if f > best_f + 1e-12:
            best_n, best_f = n, f
    # exact value through the public definition
    return best_n, empirical_fidelity(hist_down, hist_up, best_n)


def outcomes(counts: np.ndarray, N_r: int) -> np.ndarray:
    """Readout results: 1 (dark/up) when counts < N_r, else 0."""
    return (np.asarray(counts) < N_r).astype(np.int64)


def joint_table(point, first: str, second: str, N_r: int | tuple[int, int] = 1,
                selection: np.ndarray | None = None) -> np.ndarray:
    """2x2 table of (first result, second result) over selected cycles."""
    n1, n2 = (N_r, N_r) if np.isscalar(N_r) else N_r
    a = outcomes(window_counts(point, first), n1)
    b = outcomes(window_counts(point, second), n2)
    if selection is not None:
        m = np.asarray(selection, dtype=bool)
        a, b = a[m], b[m]
    t = np.zeros((2, 2), dtype=np.int64)
    np.add.at(t, (a, b), 1)
    return t


# ---------------------------------------------------------------------------
# charge resonance checks


@dataclass(frozen=True)
class CrcStats:
    threshold: int
    which: str
    n_cycles: int
    pass_first: float
    pass_second: float | None
    pass_both: float | None
    second_given_first: float | None
    selected: int

    def as_dict(self) -> dict:
        return dict(self.__dict__)


def crc_labels(point: SweepPoint) -> list[str]:
    return [w.label for w in point.program if w.kind == "crc" and w.collect]


def crc_postselect(point: SweepPoint, N_c: int, which: str = "both") -> tuple[np.ndarray, CrcStats]:
    """Mask of cycles whose CRC(s) collected at least ``N_c`` counts.

    ``which`` picks the first, the second or both checks; "none" keeps
    every cycle but still reports pass statistics.
    """
    if which not in SELECTIONS:
        raise ValueError(f"which must be one of {SELECTIONS}")
    labels = crc_labels(point)
    if not labels:
        raise AnalysisError("dataset has no collected CRC windows")
    n = _data(point).n_cycles
    p1 = window_counts(point, labels[0]) >= N_c
    p2 = window_counts(point, labels[1]) >= N_c if len(labels) > 1 else None
    if which in ("second", "both") and p2 is None:
        raise AnalysisError("selection needs a second CRC window")
    if which == "first":
        mask = p1
    elif which == "second":
        mask = p2
    elif which == "both":
        mask = p1 & p2
    else:
        mask = np.ones(n, dtype=bool)

    def frac(m):
        return float(m.mean()) if n else float("nan")

    stats = CrcStats(
        threshold=int(N_c),
        which=which,
        n_cycles=n,
        pass_first=frac(p1),
        pass_second=frac(p2) if p2 is not None else None,
        pass_both=frac(p1 & p2) if p2 is not None else None,
        second_given_first=(float((p1 & p2).sum() / p1.sum()) if p2 is not None and p1.sum() else None),
        selected=int(mask.sum()),
    )
    return mask, stats


def pass_runs(passes: Sequence[bool]) -> np.ndarray:
    """Number of consecutive passes immediately before each fail."""
    runs, n = [], 0
    for ok in passes:
        if ok:
            n += 1
        else:
            runs.append(n)
            n = 0
    return np.asarray(runs, dtype=np.int64)


def consecutive_pass_fit(passes: Sequence[bool], method: str = "mle") -> FitResult:
    """Timescale N_pass of P(n consecutive passes) ~ exp(-n/N_pass).

    ``mle``: for independent checks with pass probability q, the maximum
    likelihood estimate is q = S/(S+F) over S passes and F fails, and
    N_pass = -1/ln q. ``histogram``: weighted log-linear fit of the
    run-length distribution.
    """
    passes = np.asarray(passes, dtype=bool)
    F = int((~passes).sum())
    S = int(passes.sum())
    if F == 0:
        raise FitError("no fail event; N_pass is unbounded")
    if S == 0:
        return FitResult(("N_pass", "q"), (0.0, 0.0), (0.0, 0.0), 0.0, 1, True, "geometric-mle")
    if method == "mle":
        q = S / (S + F)
        sq = math.sqrt(q * (1 - q) / (S + F))
        lq = math.log(q)
        N = -1.0 / lq
        sN = sq / (q * lq * lq)
        return FitResult(("N_pass", "q"), (N, q), (sN, sq), 0.0, 1, True, "geometric-mle",
                         info={"passes": S, "fails": F})
    if method != "histogram":
        raise ValueError("method must be 'mle' or 'histogram'")
    runs = pass_runs(passes)
    occ = np.bincount(runs)
    k = np.nonzero(occ)[0]
    if len(k) < 2:
        raise FitError("need at least two distinct run lengths")
    y = occ[k].astype(float)
    w = np.sqrt(y)
    A = np.vstack([k, np.ones_like(k)]).T * w[:, None]
    coef, *_ = np.linalg.lstsq(A, np.log(y) * w, rcond=None)
    cov = np.linalg.inv(A.T @ A)
    slope = coef[0]
    if slope >= 0:
        raise FitError("run-length distribution does not decay")
    N = -1.0 / slope
    return FitResult(("N_pass",), (N,), (math.sqrt(cov[0, 0]) / slope ** 2,), 0.0, 1, True,
                     "run-length log-linear")


# ---------------------------------------------------------------------------
# polarization decay


def bin_times(times_ns: np.ndarray, width: float, duration: float) -> tuple[np.ndarray, np.ndarray]:
    """Histogram click times (ns) into bins of ``width`` seconds.

    Returns bin centres in s and counts per bin.
    """
    nb = int(math.floor(duration / width + 1e-9))
    if nb < 1:
        raise AnalysisError("bin wider than the window")
    idx = (np.asarray(times_ns) * 1e-9 / width).astype(np.int64)
    idx = idx[idx < nb]
    counts = np.bincount(idx, minlength=nb)
    centres = (np.arange(nb) + 0.5) * width
    return centres, counts


def polarization_model(t, a, b, gp):
    return (a - b) * np.exp(-gp * t) + b


def fit_polarization_decay(t, counts, sigma=None) -> FitResult:
    """Fit (a - b) exp(-Gamma_p t) + b to binned counts.

    Without ``sigma`` Poisson weights 1/max(n, 1) are used.
    """
    t = np.asarray(t, dtype=float)
    y = np.asarray(counts, dtype=float)
    if len(t) < 3:
        raise FitError("need at least 3 bins")
    span = t.max() - t.min()
    if sigma is None:
        sigma = np.sqrt(np.maximum(y, 1.0))
    res = least_squares_fit(
        polarization_model, t, y,
        [Param("a", float(y[0]), positive=False),
         Param("b", float(y[-1]), positive=False),
         Param("gamma_p", (0.05 / span, 200.0 / span))],
        sigma=sigma, absolute_sigma=False, model_name="(a-b)exp(-gamma_p t)+b",
    )
    if not res.converged:
        raise FitError("polarization-decay fit did not converge")
    if res["gamma_p"] * span < 2.0:
        res.info["warning"] = "bins span less than 2/gamma_p"
    return res


def cyclicity_from_rate(R: float, gamma_p: float, sigma_gp: float = 0.0) -> tuple[float, float]:
    """Lambda = R/Gamma_p - 1 and its propagated error."""
    lam = R / gamma_p - 1.0
    return lam, R * sigma_gp / gamma_p ** 2


# ---------------------------------------------------------------------------
# saturation


def saturation_model(gamma: float, tau: float, delta: float = 0.0):
    """Signal counts eta (Lambda+1)(1 - exp(-Gamma_p(p) tau)) as a function of
    (p, p_sat, eta, Lambda)."""
    hw = gamma / 2.0

    def f(p, p_sat, eta, lam):
        s = p / p_sat
        R = hw * s / (1.0 + s + (delta / hw) ** 2)
        return eta * (lam + 1.0) * -np.expm1(-R * tau / (lam + 1.0))

    return f


def fit_saturation(p, signal, tau: float, gamma: float, lambda_cyc: float | None = None,
                   delta: float = 0.0, sigma=None) -> FitResult:
    """Fit n_b - n_d versus power.

    Parameters
    ----------
    p, signal : array_like
        Powers (nW) and background-subtracted mean counts.
    tau : float
        Integration window, s.
    gamma : float
        Optical decay rate, s^-1.
    lambda_cyc : float or None
        Fixed cyclicity, or None to fit it.
    sigma : array_like, optional
        Errors of ``signal``; Poisson-style weights 1/max(n, 1) otherwise.
    """
    p = np.asarray(p, dtype=float)
    y = np.asarray(signal, dtype=float)
    npar = 2 if lambda_cyc is not None else 3
    if len(p) < npar:
        raise FitError(f"need at least {npar} powers")
    f = saturation_model(gamma, tau, delta)
    lo, hi = p[p > 0].min(), p.max()
    psat_rng = (lo / 30.0, hi * 30.0)
    ymax = max(float(np.max(y)), 1e-12)
    if sigma is None:
        sigma = np.sqrt(np.maximum(np.abs(y), 1.0))
        absolute = False
    else:
        absolute = True
    if lambda_cyc is not None:
        model = lambda x, ps, eta: f(x, ps, eta, lambda_cyc)
        pars = [Param("p_sat", psat_rng), Param("eta", (ymax / (lambda_cyc + 1) / 10, ymax / (lambda_cyc + 1) * 1e3))]
        name = "saturation, fixed cyclicity"
    else:
        model = f
        pars = [Param("p_sat", psat_rng), Param("eta", (1e-7, 1.0)), Param("lambda_cyc", (1.0, 1e6))]
        name = "saturation, free cyclicity"
    res = least_squares_fit(model, p, y, pars, sigma=sigma, absolute_sigma=absolute, model_name=name)
    if lambda_cyc is None and hi < res["p_sat"]:
        raise FitError("degenerate design: no power above saturation while fitting the cyclicity")
    return res


# ---------------------------------------------------------------------------
# dephasing


def coherence_from_means(m_signal, m_bright, m_dark):
    """Coherence r from the mean signal counts and bright/dark references.

    The echo maps r onto P(down) = (1 + r)/2, so
    r = 2 (m - m_d)/(m_b - m_d) - 1.
    """
    return 2.0 * (np.asarray(m_signal) - m_dark) / (m_bright - m_dark) - 1.0


def fit_contrast_decay(durations, r) -> FitResult:
    """Fit r = exp(-Gamma_phi tau) (r(0) = 1 by construction), unweighted."""
    tau = np.asarray(durations, dtype=float)
    r = np.asarray(r, dtype=float)
    if len(tau) < 3:
        raise FitError("need at least 3 durations per curve")
    if not np.all(np.isfinite(r)):
        raise FitError("non-finite contrast values")
    order = np.argsort(tau)
    if r[order][-1] >= r[order][0]:
        raise FitError("contrast curve does not decay")
    res = least_squares_fit(
        lambda t, g: np.exp(-g * t), tau, r,
        [Param("gamma_phi", (0.01 / tau.max(), 100.0 / tau[tau > 0].min()))],
        model_name="exp(-gamma_phi tau)",
    )
    if res["gamma_phi"] * tau.max() < 1e-3:
        raise FitError("contrast curve does not decay")
    return res


def dephasing_model(delta: float = 0.0):
    def f(p, p_sat, gamma):
        s = p / p_sat
        hw = gamma / 2.0
        return 0.5 * hw * s / (1.0 + s + (delta / hw) ** 2)

    return f


@dataclass
class DephasingFit:
    powers: np.ndarray
    gamma_phi: np.ndarray
    gamma_phi_sigma: np.ndarray
    per_power: list[FitResult]
    saturation: FitResult

    @property
    def plateau(self) -> tuple[float, float]:
        """High-power limit gamma/4 of the fitted curve."""
        return self.saturation["gamma"] / 4.0, self.saturation.sigma("gamma") / 4.0


def fit_dephasing(curves, gamma: float | None = None, delta: float = 0.0) -> DephasingFit:
    """Per-power exponential fits of r(tau), then Gamma_phi(p) = R(p)/2.

    Parameters
    ----------
    curves : sequence of (power, durations, r)
    gamma : float, optional
        Fix the optical decay rate; by default it is fitted together with
        p_sat so the plateau gamma/4 is a measured quantity.
    """
    per, P, G, S = [], [], [], []
    for p, tau, r in curves:
        fr = fit_contrast_decay(tau, r)
        per.append(fr)
        P.append(float(p))
        G.append(fr["gamma_phi"])
        S.append(fr.sigma("gamma_phi"))
    P, G, S = np.array(P), np.array(G), np.array(S)
    if len(P) < (1 if gamma is not None else 2):
        raise FitError("too few powers for the saturation fit")
    S = np.where(S > 0, S, np.max(S) if np.any(S > 0) else 1.0)
    f = dephasing_model(delta)
    lo, hi = P[P > 0].min(), P.max()
    if gamma is None:
        pars = [Param("p_sat", (lo / 30, hi * 30)), Param("gamma", (2.0 * G.max(), 400.0 * G.max()))]
        model = f
    else:
        pars = [Param("p_sat", (lo / 30, hi * 30))]
        model = lambda x, ps: f(x, ps, gamma)
    sat = least_squares_fit(model, P, G, pars, sigma=S, absolute_sigma=False,
                            model_name="gamma_phi = R(p)/2")
    if gamma is not None:
        sat = FitResult(sat.names + ("gamma",), sat.values + (gamma,), sat.errors + (0.0,),
                        sat.rss, sat.iterations, sat.converged, sat.model, sat.info)
    return DephasingFit(P, G, S, per, sat)


# ---------------------------------------------------------------------------
# low-power slopes and efficiency


@dataclass(frozen=True)
class Slope:
    value: float
    sigma: float
    n_points: int
    window: float


def low_power_slope(p, y, p_sat: float, sigma=None, order: int = 3, window: float = 1 / 3) -> Slope:
    """Initial slope dy/dp at p -> 0 from points with p < window * p_sat.

    The default ``order=3`` fits y = A p + c2 p^2 + c3 p^3 through the
    origin so the curvature of the response (saturation, and for counts
    also the polarization within the window) does not bias A. ``order=1``
    is a plain proportional fit.
    """
    p = np.asarray(p, dtype=float)
    y = np.asarray(y, dtype=float)
    m = (p > 0) & (p < window * p_sat)
    need = max(2, order)
    if m.sum() < need:
        raise AnalysisError(f"fewer than {need} points below {window:.3g} p_sat")
    x, yy = p[m], y[m]
    X = np.vstack([x ** k for k in range(1, order + 1)]).T
    if sigma is not None:
        w = 1.0 / np.asarray(sigma, dtype=float)[m]
    else:
        w = np.ones_like(yy)
    Xw, yw = X * w[:, None], yy * w
    coef, *_ = np.linalg.lstsq(Xw, yw, rcond=None)
    cov = np.linalg.pinv(Xw.T @ Xw)
    dof = len(yy) - order
    if sigma is None:
        resid = yw - Xw @ coef
        cov = cov * (resid @ resid / dof if dof > 0 else 0.0)
    return Slope(float(coef[0]), float(math.sqrt(max(cov[0, 0], 0.0))), int(m.sum()), window * p_sat)


def low_power_slopes(emission, dephasing, p_sat_emission: float, p_sat_dephasing: float | None = None,
                     order: int = 3) -> tuple[Slope, Slope]:
    """(A, B): initial slopes of n_b - n_d and Gamma_phi versus power.

    ``emission`` and ``dephasing`` are (p, y) or (p, y, sigma) tuples.
    """
    if p_sat_dephasing is None:
        p_sat_dephasing = p_sat_emission
    A = low_power_slope(*emission[:2], p_sat_emission, *(emission[2:3] or [None]), order=order)
    B = low_power_slope(*dephasing[:2], p_sat_dephasing, *(dephasing[2:3] or [None]), order=order)
    return A, B


def efficiency_from_slopes(A: float, B: float, tau: float, sigma_A: float = 0.0,
                           sigma_B: float = 0.0) -> tuple[float, float]:
    """eta = A / (2 B tau) with first-order error propagation."""
    if B <= 0 or tau <= 0:
        raise ValueError("B and tau must be > 0")
    eta = A / (2.0 * B * tau)
    rel = math.hypot(sigma_A / A if A else 0.0, sigma_B / B)
    return eta, abs(eta) * rel


# ---------------------------------------------------------------------------
# coherence decay


def stretched_exponential(t, tau, xi):
    return np.exp(-((np.asarray(t) / tau) ** xi))


def fit_stretched_exponential(t, signal, sigma=None) -> FitResult:
    """Fit exp(-(t/tau)^xi)."""
    t = np.asarray(t, dtype=float)
    y = np.asarray(signal, dtype=float)
    if len(t) < 5:
        raise FitError("need at least 5 points")
    order = np.argsort(t)
    if y[order][-1] >= y[order][0]:
        raise FitError("signal does not decay")
    tp = t[t > 0]
    res = least_squares_fit(
        stretched_exponential, t, y,
        [Param("tau", (tp.min() / 10, tp.max() * 10)), Param("xi", (0.2, 5.0))],
        sigma=sigma, absolute_sigma=sigma is not None, model_name="exp(-(t/tau)^xi)",
    )
    if not res.converged:
        raise FitError("stretched-exponential fit did not converge")
    return res


# ---------------------------------------------------------------------------
# quantum jumps


def assign_jump_states(trace, N_r: int = 1) -> np.ndarray:
    """Per-bin spin labels: 0 (bright/down) if counts >= N_r else 1."""
    trace = np.asarray(trace)
    if trace.size < 1:
        raise ValueError("trace must have at least one bin")
    return np.where(trace >= N_r, 0, 1)


def dwell_lengths(states, label: int = 0, drop_edges: bool = True) -> np.ndarray:
    """Lengths (in bins) of maximal runs of ``label``."""
    s = np.asarray(states) == label
    if not s.any():
        return np.empty(0, dtype=np.int64)
    d = np.diff(np.concatenate([[0], s.astype(np.int8), [0]]))
    starts = np.nonzero(d == 1)[0]
    ends = np.nonzero(d == -1)[0]
    lengths = ends - starts
    if drop_edges:
        keep = (starts > 0) & (ends < len(s))
        lengths = lengths[keep]
    return lengths


def fit_dwell_rate(lengths, bin: float) -> FitResult:
    """Exit rate of a state from geometric run lengths measured in bins.

    P(L = l) = (1 - pi) pi^(l-1) with pi = exp(-rate * bin).
    """
    L = np.asarray(lengths, dtype=float)
    if len(L) == 0:
        raise FitError("no complete dwell segment")
    mean = L.mean()
    if mean <= 1.0:
        raise FitError("dwell segments are all one bin long; bin too coarse")
    pi = 1.0 - 1.0 / mean
    rate = -math.log(pi) / bin
    s_mean = L.std(ddof=1) / math.sqrt(len(L)) if len(L) > 1 else float("inf")
    # d rate / d mean = 1 / (bin * mean^2 * pi)
    s_rate = s_mean / (bin * mean * mean * pi)
    return FitResult(("rate",), (rate,), (s_rate,), 0.0, 1, True, "geometric dwell",
                     info={"segments": int(len(L)), "mean_bins": mean})
