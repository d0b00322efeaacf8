"""
Analysis pipeline over one or more datasets.

``analyze`` turns datasets into a JSON-serializable report and a set of
CSV tables. Every reported number carries its uncertainty and the
provenance of the estimate (model, windows, selection). The report holds
no timing or file-system paths, so reruns of the same config produce
byte-identical output.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from . import __version__, analysis as an
from .core import AnalysisError, CountHistogram, FitError, FitResult
from .dataset import Dataset, DatasetIOError, SweepPoint
from .dynamics import pump_rate, polarization_rate
from .photostats import (
    ReadoutModelInputs,
    conditional_fidelity,
    empirical_fidelity,
    empirical_fidelity_sigma,
    expected_counts,
    fidelity_model,
    polarization_fidelity,
    qnd_fidelity,
    rows_to_csv,
)

READOUT_PRESETS = ("readout_wfmA", "readout_wfmB", "crc_statistics")
REPORT_FILE = "report.json"


@dataclass(frozen=True)
class AnalysisOptions:
    """User choices for :func:`analyze`.

    crc_threshold, select : CRC post-selection. Giving either one counts
        as requesting CRC analysis; datasets without CRC windows then fail.
    threshold : fixed readout threshold N_r; optimized when None.
    pass_threshold : CRC threshold of the consecutive-pass statistics.
    polarization_bins : number of time bins of the polarization decay.
    slope_order : polynomial order of the low-power slope fits.
    """

    crc_threshold: int | None = None
    threshold: int | None = None
    select: str | None = None
    pass_threshold: int = 6
    polarization_bins: int = 100
    slope_order: int = 3

    def __post_init__(self):
        if self.select is not None and self.select not in an.SELECTIONS:
            raise ValueError(f"select must be one of {an.SELECTIONS}")
        if self.threshold is not None and self.threshold < 1:
            raise ValueError("threshold must be >= 1")
        if self.crc_threshold is not None and self.crc_threshold < 0:
            raise ValueError("crc_threshold must be >= 0")

    @property
    def crc_requested(self) -> bool:
        return self.crc_threshold is not None or self.select not in (None, "none")


def _num(x):
    if x is None:
        return None
    x = float(x)
    return x if math.isfinite(x) else None


def _q(value, sigma=None, **prov) -> dict:
    out = {"value": _num(value), "sigma": _num(sigma)}
    if prov:
        out["provenance"] = prov
    return out


def _fit(res: FitResult, **prov) -> dict:
    d = res.as_dict()
    d["params"] = {k: {"value": _num(v["value"]), "sigma": _num(v["sigma"])} for k, v in d["params"].items()}
    d["rss"] = _num(d["rss"])
    d["provenance"] = prov
    return d


def _mean_sem(c: np.ndarray) -> tuple[float, float]:
    n = len(c)
    if n == 0:
        return float("nan"), float("nan")
    return float(c.mean()), float(c.std(ddof=1) / math.sqrt(n)) if n > 1 else float("nan")


class _Ctx:
    def __init__(self, datasets: Sequence[Dataset], opts: AnalysisOptions):
        self.datasets = list(datasets)
        self.opts = opts
        self.ids = [f"{i}:{ds.preset}" for i, ds in enumerate(self.datasets)]
        self.tables: dict[str, list[dict]] = {}
        self.masks: dict[tuple[int, int], np.ndarray | None] = {}
        self.selection_text = "all cycles"

    def add_rows(self, name: str, rows: list[dict]):
        self.tables.setdefault(name, []).extend(rows)

    def mask(self, k: int, point: SweepPoint) -> np.ndarray | None:
        key = (k, point.index)
        if key not in self.masks:
            o = self.opts
            if not an.crc_labels(point):
                if o.crc_requested:
                    raise AnalysisError(f"dataset {self.ids[k]} has no CRC windows but CRC selection was requested")
                self.masks[key] = None
            elif o.crc_requested:
                which = o.select or "both"
                N_c = o.crc_threshold if o.crc_threshold is not None else 0
                if which in ("both", "second") and len(an.crc_labels(point)) < 2:
                    raise AnalysisError(f"dataset {self.ids[k]} has a single CRC window; select 'first' or 'none'")
                m, _ = an.crc_postselect(point, N_c, which)
                self.masks[key] = m
                self.selection_text = f"CRC {which} >= {N_c}"
            else:
                self.masks[key] = None
        return self.masks[key]


# ---------------------------------------------------------------------------
# readout fidelities


def _readout_candidates(ctx: _Ctx):
    """(label, expected, dataset index, point, histogram) for collected readouts."""
    out = []
    for k, ds in enumerate(ctx.datasets):
        if ds.preset not in READOUT_PRESETS:
            continue
        pt = ds.points[0]
        m = ctx.mask(k, pt)
        for w in pt.program:
            if w.kind == "readout" and w.collect and pt.expected[w.label] in ("down", "up"):
                h = an.histogram_window(pt, w.label, m, ctx.selection_text)
                out.append((w.label, pt.expected[w.label], k, pt, h))
    return out


def _pairings(cands):
    """Pair down/up histograms of the same window label across datasets,
    falling back to pairs within one dataset."""
    pairs = []
    labels = []
    for c in cands:
        if c[0] not in labels:
            labels.append(c[0])
    for label in labels:
        down = [c for c in cands if c[0] == label and c[1] == "down"]
        up = [c for c in cands if c[0] == label and c[1] == "up"]
        if down and up:
            pairs.append((down[0], up[0], "same window across waveforms"))
    if pairs:
        return pairs
    ks = sorted({c[2] for c in cands})
    for k in ks:
        down = [c for c in cands if c[2] == k and c[1] == "down"]
        up = [c for c in cands if c[2] == k and c[1] == "up"]
        if down and up:
            pairs.append((down[0], up[0], "within one waveform"))
    return pairs


def _model_fidelity(ctx: _Ctx, cand, N_r: int):
    label, _, k, pt, _ = cand
    ds = ctx.datasets[k]
    if ds.params is None:
        return None
    w = pt.program.window(label)
    n_b = expected_counts(ds.params, w.power, w.duration, "bright")
    n_d = expected_counts(ds.params, w.power, w.duration, "dark")
    F = fidelity_model(ReadoutModelInputs(n_d, n_b, N_r, ds.params.f0))
    return {"F_r": _num(F), "n_b": _num(n_b), "n_d": _num(n_d), "f0": _num(ds.params.f0), "N_r": N_r}


def _readout_section(ctx: _Ctx) -> dict | None:
    cands = _readout_candidates(ctx)
    if not cands:
        return None
    rows = []
    for label, exp, k, pt, h in cands:
        for c, n in sorted(h.bins.items()):
            rows.append({"dataset": ctx.ids[k], "window": label, "expected_state": exp,
                         "selection": h.selection, "count": c, "occurrences": n})
    ctx.add_rows("count_histograms", rows)

    fids = []
    for down, up, how in _pairings(cands):
        hd, hu = down[4], up[4]
        if hd.total == 0 or hu.total == 0:
            raise AnalysisError(f"no cycles left after selection for window {down[0]}")
        if ctx.opts.threshold is not None:
            N_r = int(ctx.opts.threshold)
            F = empirical_fidelity(hd, hu, N_r)
            how_n = "fixed by user"
        else:
            N_r, F = an.optimize_threshold(hd, hu)
            how_n = "maximizes empirical F_r"
        fids.append({
            "window": down[0],
            "pairing": how,
            "down_dataset": ctx.ids[down[2]],
            "up_dataset": ctx.ids[up[2]],
            "N_r": N_r,
            "threshold_choice": how_n,
            "F_r": _q(F, empirical_fidelity_sigma(hd, hu, N_r), model="1 - P(1|down)/2 - P(0|up)/2",
                      window=down[0], selection=hd.selection),
            "mean_down": _q(*_mean_sem(_hist_values(down))),
            "mean_up": _q(*_mean_sem(_hist_values(up))),
            "cycles_down": hd.total,
            "cycles_up": hu.total,
            "model": _model_fidelity(ctx, down, N_r),
        })
    out = {"fidelities": fids}
    N_r = fids[0]["N_r"] if fids else (ctx.opts.threshold or 1)
    out["threshold"] = N_r

    joint = []
    jrows = []
    for k, ds in enumerate(ctx.datasets):
        if ds.preset not in READOUT_PRESETS:
            continue
        pt = ds.points[0]
        ro = [w.label for w in pt.program if w.kind == "readout" and w.collect]
        if len(ro) < 2:
            continue
        m = ctx.mask(k, pt)
        t = an.joint_table(pt, ro[0], ro[1], N_r, m)
        n = int(t.sum())
        entry = {
            "dataset": ctx.ids[k],
            "windows": [ro[0], ro[1]],
            "N_r": N_r,
            "table": t.tolist(),
            "cycles": n,
            "F_c": None,
            "F_q": None,
        }
        if n:
            fc = conditional_fidelity(t)
            anti = int(t[0, 1] + t[1, 0])
            entry["F_c"] = (_q(fc, math.sqrt(fc * (1 - fc) / anti), model="max(N01, N10)/(N01 + N10)",
                               selection=ctx.selection_text) if fc is not None else None)
            fq = qnd_fidelity(t)
            entry["F_q"] = _q(fq, math.sqrt(fq * (1 - fq) / n), model="(N01 + N10)/N",
                              selection=ctx.selection_text)
        joint.append(entry)
        for i in (0, 1):
            for j in (0, 1):
                jrows.append({"dataset": ctx.ids[k], "first": i, "second": j, "occurrences": int(t[i, j])})
    ctx.add_rows("joint_outcomes", jrows)
    out["joint"] = joint
    return out


def _hist_values(cand) -> np.ndarray:
    h: CountHistogram = cand[4]
    return np.repeat(np.array(list(h.bins.keys()), dtype=float), list(h.bins.values()))


# ---------------------------------------------------------------------------
# CRC statistics


def _crc_section(ctx: _Ctx) -> dict | None:
    o = ctx.opts
    out = []
    for k, ds in enumerate(ctx.datasets):
        for pt in ds.points:
            labels = an.crc_labels(pt)
            if not labels:
                ctx.mask(k, pt)  # raises when CRC analysis was requested
                continue
            N_c = o.crc_threshold if o.crc_threshold is not None else o.pass_threshold
            which = o.select or ("both" if len(labels) > 1 else "first")
            if which in ("both", "second") and len(labels) < 2:
                which = "first"
            _, stats = an.crc_postselect(pt, N_c, which)
            entry = {"dataset": ctx.ids[k], "point": pt.index, "stats": stats.as_dict(), "N_pass": {}}
            for label in labels:
                c = an.window_counts(pt, label)
                occ = np.bincount(c) if len(c) else np.zeros(1, dtype=np.int64)
                ctx.add_rows("crc_counts", [
                    {"dataset": ctx.ids[k], "point": pt.index, "window": label, "count": i, "occurrences": int(v)}
                    for i, v in enumerate(occ) if v
                ])
                passes = c >= o.pass_threshold
                prov = {"model": "P(n) ~ exp(-n/N_pass)", "window": label,
                        "selection": f"pass = counts >= {o.pass_threshold}"}
                try:
                    fit = an.consecutive_pass_fit(passes)
                except FitError as exc:
                    entry["N_pass"][label] = {"error": str(exc), "provenance": prov}
                    continue
                entry["N_pass"][label] = _q(fit["N_pass"], fit.sigma("N_pass"), **prov)
                runs = an.pass_runs(passes)
                occ_r = np.bincount(runs) if len(runs) else np.zeros(0, dtype=np.int64)
                q = fit["q"] if "q" in fit.names else math.exp(-1 / fit["N_pass"])
                ctx.add_rows("consecutive_passes", [
                    {"dataset": ctx.ids[k], "point": pt.index, "window": label, "n": n,
                     "occurrences": int(v), "model": len(runs) * (1 - q) * q ** n}
                    for n, v in enumerate(occ_r)
                ])
            out.append(entry)
    return {"checks": out} if out else None


# ---------------------------------------------------------------------------
# polarization decay


def _polarization_section(ctx: _Ctx) -> list[dict]:
    out = []
    for k, ds in enumerate(ctx.datasets):
        if ds.preset != "polarization_decay":
            continue
        for pt in ds.points:
            label = [w.label for w in pt.program if w.kind == "readout" and w.collect][0]
            w = pt.program.window(label)
            m = ctx.mask(k, pt)
            width = w.duration / ctx.opts.polarization_bins
            t, n = an.bin_times(pt.data.all_times(label, m), width, w.duration)
            prov = {"model": "(a-b)exp(-gamma_p t)+b", "window": label, "selection": ctx.selection_text,
                    "bin_s": width}
            entry = {"dataset": ctx.ids[k], "point": pt.index}
            try:
                fit = an.fit_polarization_decay(t, n)
            except FitError as exc:
                entry["error"] = str(exc)
                out.append(entry)
                continue
            entry["fit"] = _fit(fit, **prov)
            gp, sgp = fit["gamma_p"], fit.sigma("gamma_p")
            entry["gamma_p"] = _q(gp, sgp, **prov)
            entry["lifetime_s"] = _q(1 / gp, sgp / gp ** 2, **prov)
            if ds.params is not None:
                R = float(pump_rate(w.power, ds.params))
                lam, slam = an.cyclicity_from_rate(R, gp, sgp)
                entry["lambda_cyc"] = _q(lam, slam, model="R/gamma_p - 1", R=R)
                entry["gamma_p_config"] = _num(polarization_rate(R, ds.params.lambda_cyc))
            try:
                entry["F_pol"] = _q(polarization_fidelity(fit["a"], fit["b"]), None, model="1 - b/(2a)")
            except ValueError as exc:
                entry["F_pol"] = {"error": str(exc)}
            model = an.polarization_model(t, fit["a"], fit["b"], gp)
            ctx.add_rows("polarization_decay", [
                {"dataset": ctx.ids[k], "t_s": float(a), "counts": int(b), "fit": float(c)}
                for a, b, c in zip(t, n, model)
            ])
            out.append(entry)
    return out


# ---------------------------------------------------------------------------
# power and dephasing sweeps


def _power_section(ctx: _Ctx) -> list[dict]:
    out = []
    for k, ds in enumerate(ctx.datasets):
        if ds.preset != "power_sweep":
            continue
        P, Y, S, rows = [], [], [], []
        tau = None
        for pt in ds.points:
            wb = pt.program.window("readout_bright")
            tau = wb.duration
            m = ctx.mask(k, pt)
            cb = an.window_counts(pt, "readout_bright")
            cd = an.window_counts(pt, "readout_dark")
            if m is not None:
                cb, cd = cb[m], cd[m]
            if len(cb) < 2:
                raise AnalysisError(f"too few cycles at power {wb.power}")
            mb, sb = _mean_sem(cb)
            md, sd = _mean_sem(cd)
            P.append(wb.power)
            Y.append(mb - md)
            S.append(math.hypot(sb, sd))
            rows.append({"dataset": ctx.ids[k], "p_nW": wb.power, "mean_bright": mb, "mean_dark": md,
                         "signal": mb - md, "sigma": math.hypot(sb, sd)})
        P, Y, S = np.array(P), np.array(Y), np.array(S)
        S = np.where(S > 0, S, 1.0 / math.sqrt(max(pt.data.n_cycles, 1)))
        entry = {"dataset": ctx.ids[k], "tau_s": tau, "powers": len(P)}
        prov = {"window": "readout_bright - readout_dark", "selection": ctx.selection_text}
        gamma = ds.params.gamma
        fixed = None
        try:
            fixed = an.fit_saturation(P, Y, tau, gamma, ds.params.lambda_cyc, ds.params.delta, sigma=S)
            entry["saturation_fixed_lambda"] = _fit(fixed, lambda_cyc=ds.params.lambda_cyc, **prov)
        except FitError as exc:
            entry["saturation_fixed_lambda"] = {"error": str(exc)}
        try:
            free = an.fit_saturation(P, Y, tau, gamma, None, ds.params.delta, sigma=S)
            entry["saturation_free_lambda"] = _fit(free, **prov)
        except FitError as exc:
            entry["saturation_free_lambda"] = {"error": str(exc)}
        if fixed is not None:
            entry["p_sat"] = _q(fixed["p_sat"], fixed.sigma("p_sat"), model=fixed.model, **prov)
            entry["eta"] = _q(fixed["eta"], fixed.sigma("eta"), model=fixed.model, **prov)
            f = an.saturation_model(gamma, tau, ds.params.delta)
            for r in rows:
                r["fit"] = float(f(r["p_nW"], fixed["p_sat"], fixed["eta"], ds.params.lambda_cyc))
            try:
                A = an.low_power_slope(P, Y, fixed["p_sat"], S, order=ctx.opts.slope_order)
                entry["slope_A"] = _q(A.value, A.sigma, model=f"n_b - n_d = A p + O(p^2..p^{ctx.opts.slope_order})",
                                      window=f"p < {A.window:.6g} nW", points=A.n_points)
            except AnalysisError as exc:
                entry["slope_A"] = {"error": str(exc)}
        ctx.add_rows("emission_vs_power", rows)
        out.append(entry)
    return out


def _dephasing_section(ctx: _Ctx) -> list[dict]:
    out = []
    for k, ds in enumerate(ctx.datasets):
        if ds.preset != "dephasing_sweep":
            continue
        refs_b, refs_d = [], []
        for pt in ds.points:
            m = ctx.mask(k, pt)
            cb, cd = an.window_counts(pt, "ref_bright"), an.window_counts(pt, "ref_dark")
            refs_b.append(cb if m is None else cb[m])
            refs_d.append(cd if m is None else cd[m])
        mb = float(np.concatenate(refs_b).mean())
        md = float(np.concatenate(refs_d).mean())
        if not mb > md:
            raise AnalysisError("bright reference is not brighter than the dark reference")
        by_power: dict[float, list] = {}
        rows = []
        for pt in ds.points:
            m = ctx.mask(k, pt)
            w = pt.program.window(pt.program.labels(kind="weak_measure")[0])
            c = an.window_counts(pt, "signal")
            c = c if m is None else c[m]
            ms, ss = _mean_sem(c)
            r = float(an.coherence_from_means(ms, mb, md))
            sr = 2 * ss / (mb - md)
            by_power.setdefault(w.power, []).append((w.duration, r))
            rows.append({"dataset": ctx.ids[k], "p_nW": w.power, "duration_s": w.duration, "r": r, "sigma": sr})
        ctx.add_rows("contrast_vs_duration", rows)
        curves = []
        for p in sorted(by_power):
            d = sorted(by_power[p])
            curves.append((p, [a for a, _ in d], [b for _, b in d]))
        entry = {"dataset": ctx.ids[k], "reference_bright": mb, "reference_dark": md}
        prov = {"window": "signal", "selection": ctx.selection_text, "references": "pooled over points"}
        try:
            fit = an.fit_dephasing(curves, delta=ds.params.delta)
        except FitError as exc:
            entry["error"] = str(exc)
            out.append(entry)
            continue
        entry["per_power"] = [
            {"p_nW": float(p), "gamma_phi": _q(g, s, model="r = exp(-gamma_phi tau)", **prov)}
            for p, g, s in zip(fit.powers, fit.gamma_phi, fit.gamma_phi_sigma)
        ]
        entry["saturation"] = _fit(fit.saturation, **prov)
        entry["p_sat"] = _q(fit.saturation["p_sat"], fit.saturation.sigma("p_sat"), model=fit.saturation.model)
        entry["plateau"] = _q(*fit.plateau, model="gamma/4")
        model = an.dephasing_model(ds.params.delta)
        ctx.add_rows("dephasing_vs_power", [
            {"dataset": ctx.ids[k], "p_nW": float(p), "gamma_phi": float(g), "sigma": float(s),
             "fit": float(model(p, fit.saturation["p_sat"], fit.saturation["gamma"]))}
            for p, g, s in zip(fit.powers, fit.gamma_phi, fit.gamma_phi_sigma)
        ])
        try:
            B = an.low_power_slope(fit.powers, fit.gamma_phi, fit.saturation["p_sat"], fit.gamma_phi_sigma,
                                   order=ctx.opts.slope_order)
            entry["slope_B"] = _q(B.value, B.sigma, model=f"gamma_phi = B p + O(p^2..p^{ctx.opts.slope_order})",
                                  window=f"p < {B.window:.6g} nW", points=B.n_points)
        except AnalysisError as exc:
            entry["slope_B"] = {"error": str(exc)}
        out.append(entry)
    return out


def _efficiency(power: list[dict], deph: list[dict]) -> dict | None:
    a = next((e for e in power if "slope_A" in e and "value" in e["slope_A"]), None)
    b = next((e for e in deph if "slope_B" in e and "value" in e["slope_B"]), None)
    if a is None or b is None:
        return None
    A, B = a["slope_A"], b["slope_B"]
    eta, s = an.efficiency_from_slopes(A["value"], B["value"], a["tau_s"], A["sigma"] or 0.0, B["sigma"] or 0.0)
    return _q(eta, s, model="A/(2 B tau)", emission=a["dataset"], dephasing=b["dataset"], tau_s=a["tau_s"])


# ---------------------------------------------------------------------------
# quantum jumps


def _jumps_section(ctx: _Ctx) -> list[dict]:
    out = []
    for k, ds in enumerate(ctx.datasets):
        if ds.preset != "quantum_jumps":
            continue
        pt = ds.points[0]
        w = pt.program.window("jumps")
        width = ds.run.jump_bin if ds.run is not None else w.duration / 100
        N_r = ctx.opts.threshold or 1
        m = ctx.mask(k, pt)
        cycles = range(pt.data.n_cycles) if m is None else np.nonzero(m)[0]
        lengths = []
        first = None
        for i in cycles:
            t, n = an.bin_times(pt.data.times("jumps", int(i)), width, w.duration)
            s = an.assign_jump_states(n, N_r)
            if first is None:
                first = (t, n, s)
            lengths.append(an.dwell_lengths(s, 0))
        L = np.concatenate(lengths) if lengths else np.empty(0)
        entry = {"dataset": ctx.ids[k], "bin_s": width, "N_r": N_r}
        prov = {"model": "geometric dwell of bright bins", "window": "jumps", "selection": ctx.selection_text}
        try:
            fit = an.fit_dwell_rate(L, width)
            entry["bright_exit_rate"] = _q(fit["rate"], fit.sigma("rate"), segments=fit.info["segments"], **prov)
        except FitError as exc:
            entry["bright_exit_rate"] = {"error": str(exc)}
        if ds.params is not None:
            R = float(pump_rate(w.power, ds.params))
            entry["gamma_p_config"] = _num(polarization_rate(R, ds.params.lambda_cyc))
        if first is not None:
            ctx.add_rows("jump_trace", [
                {"dataset": ctx.ids[k], "t_s": float(a), "counts": int(b), "state": int(c)}
                for a, b, c in zip(*first)
            ])
        out.append(entry)
    return out


# ---------------------------------------------------------------------------
# entry points


def analyze(datasets: Sequence[Dataset], options: AnalysisOptions | None = None) -> tuple[dict, dict[str, list[dict]]]:
    """Run every analysis that applies to the given datasets.

    Returns
    -------
    report : dict
    tables : dict of table name -> list of row dicts
    """
    if not datasets:
        raise AnalysisError("no dataset given")
    opts = options or AnalysisOptions()
    ctx = _Ctx(datasets, opts)
    report: dict = {
        "tool": "spinreadout",
        "version": __version__,
        "options": {k: getattr(opts, k) for k in opts.__dataclass_fields__},
        "datasets": [
            {"id": ctx.ids[i], "preset": ds.preset, "points": len(ds.points),
             "cycles": ds.points[0].data.n_cycles if ds.points else 0,
             "config_sha256": (ds.manifest or {}).get("config_sha256")}
            for i, ds in enumerate(ctx.datasets)
        ],
    }
    ro = _readout_section(ctx)
    if ro is not None:
        report["readout"] = ro
    crc = _crc_section(ctx)
    if crc is not None:
        report["crc"] = crc
    pol = _polarization_section(ctx)
    if pol:
        report["polarization"] = pol
    pw = _power_section(ctx)
    if pw:
        report["saturation"] = pw
    de = _dephasing_section(ctx)
    if de:
        report["dephasing"] = de
    eta = _efficiency(pw, de)
    if eta is not None:
        report["efficiency"] = eta
    qj = _jumps_section(ctx)
    if qj:
        report["quantum_jumps"] = qj
    report["selection"] = ctx.selection_text
    return report, ctx.tables


def report_bytes(report: dict) -> bytes:
    return (json.dumps(report, sort_keys=True, indent=1, allow_nan=False) + "\n").encode()


def write_report(report: dict, tables: dict[str, list[dict]], out_dir) -> list[str]:
    """Write ``report.json`` and one CSV per table; returns the file names."""
    out = Path(out_dir)
    names = [REPORT_FILE]
    try:
        out.mkdir(parents=True, exist_ok=True)
        (out / REPORT_FILE).write_bytes(report_bytes(report))
        for name in sorted(tables):
            (out / f"{name}.csv").write_text(rows_to_csv(tables[name]))
            names.append(f"{name}.csv")
    except OSError as exc:
        raise DatasetIOError(f"cannot write report to {out}: {exc}") from exc
    return names
