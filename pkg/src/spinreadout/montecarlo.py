"""
Monte Carlo generation of time-tagged click data.

Each cycle owns a numpy generator seeded with ``derive_cycle_seed``, so a
dataset depends only on the config and never on the execution schedule.

Spin and emission model
-----------------------
The spin is a classical two-state variable (0 = down/bright, 1 = up/dark)
except inside the weak-measurement sequence, where a coherence ``r`` is
tracked analytically. During a readout of a bright spin, clicks form an
inhomogeneous Poisson process of rate eta R exp(-Gamma_p t) (sampled by
thinning against the t=0 rate) plus noise a + b p; the spin leaves the
bright state at an independent Exp(Gamma_p) time. Both choices reproduce
the mean-field emission law and Poisson bright counts. A charge state
(blinking) can switch off while the emitter is driven; emission stops
from that moment until a successful repump.
"""

from __future__ import annotations

import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Mapping

import numpy as np

from .core import (
    OPTICAL_KINDS,
    BlinkModel,
    ConfigError,
    CycleRecord,
    EmitterParams,
    PulseProgram,
    RunSettings,
    derive_cycle_seed,
    validate_config,
)
from .dataset import Dataset, PointData, SweepPoint, write_dataset
from .dynamics import dephasing_rate, polarization_rate, pump_rate

DOWN, UP = 0, 1
STAMP_DECIMALS = 3  # timestamps kept at 1 ps resolution (ns units)
_STAMP_SCALE = 1e9 * 10 ** STAMP_DECIMALS
_POINT_SALT = 0x5EED_0F_5EED


@dataclass(frozen=True)
class ExperimentPreset:
    """Preset semantics that are not part of the pulse program itself."""

    name: str
    pi_error: float = 0.0
    crc_rate_factor: float = 2.0
    mixing_rate: float = 0.0
    bidirectional_mixing: bool = True
    superposition_before_weak: bool = False

    def __post_init__(self):
        if not 0 <= self.pi_error <= 1:
            raise ValueError("pi_error must be in [0, 1]")
        if self.crc_rate_factor < 0 or self.mixing_rate < 0:
            raise ValueError("rates must be >= 0")

    @classmethod
    def from_run(cls, run: RunSettings) -> "ExperimentPreset":
        return cls(
            name=run.preset,
            pi_error=run.pi_error,
            crc_rate_factor=run.crc_rate_factor,
            mixing_rate=run.mixing_rate if run.preset == "quantum_jumps" else 0.0,
            superposition_before_weak=run.preset == "dephasing_sweep",
        )


# ---------------------------------------------------------------------------
# default programs


def default_program(run: RunSettings) -> PulseProgram:
    """Pulse program of a preset, built from the run's timing and power fields."""
    ro = dict(kind="readout", duration=run.readout_duration, power=run.readout_power, collect=True)
    tail = dict(kind="readout", duration=run.readout_tail, power=run.readout_power, collect=False)
    crc = dict(kind="crc", duration=run.crc_duration, power=run.crc_power, collect=True)
    rep = dict(kind="repump", label="repump", duration=run.repump_duration)

    def init(target, label="init"):
        return dict(kind="init", label=label, duration=run.init_duration, power=run.init_power, target=target)

    def readout(label):
        return [dict(ro, label=label), dict(tail, label=label + "_tail")]

    name = run.preset
    if name in ("readout_wfmA", "crc_statistics"):
        specs = [rep, dict(crc, label="crc1"), init("up"), *readout("readout1"),
                 dict(kind="microwave_pi", label="pi", duration=80e-9),
                 *readout("readout2"), dict(crc, label="crc2")]
    elif name == "readout_wfmB":
        specs = [rep, dict(crc, label="crc1"), init("down"), *readout("readout1"),
                 *readout("readout2"), dict(crc, label="crc2")]
    elif name == "polarization_decay":
        specs = [rep, dict(ro, label="polarization")]
    elif name == "power_sweep":
        specs = [rep, dict(crc, label="crc1"), init("down", "init_bright"), *readout("readout_bright"),
                 init("up", "init_dark"), *readout("readout_dark")]
    elif name == "dephasing_sweep":
        specs = [rep, init("down", "init_bright"), *readout("ref_bright"),
                 init("up", "init_dark"), *readout("ref_dark"),
                 init("up", "init_signal"),
                 dict(kind="weak_measure", label="weak", duration=run.weak_duration, power=run.weak_power),
                 *readout("signal")]
    elif name == "quantum_jumps":
        specs = [rep, dict(crc, label="crc1"), init("up"), dict(ro, label="jumps"), dict(crc, label="crc2")]
    else:  # pragma: no cover - RunSettings validates the name
        raise ValueError(name)
    return PulseProgram.sequential(specs)


def expected_states(program: PulseProgram, preset: ExperimentPreset) -> dict[str, str]:
    """Intended spin state entering each window: "down", "up", "mixed" or
    "superposition"."""
    state = "mixed"
    out = {}
    for w in program:
        out[w.label] = state
        if w.kind in ("repump", "crc"):
            state = "mixed"
        elif w.kind == "init":
            state = w.target
        elif w.kind == "microwave_pi":
            state = {"down": "up", "up": "down"}.get(state, state)
        elif w.kind == "weak_measure" and preset.superposition_before_weak:
            state = "superposition"
        elif w.kind == "readout":
            state = "up" if state in ("down", "up") else "mixed"
    return out


def sweep_points(run: RunSettings, params: EmitterParams, program: PulseProgram) -> list[tuple[dict, PulseProgram]]:
    """Expand the run's sweep axes into (coordinates, program) pairs."""
    powers = run.axis("power")
    durations = run.axis("duration")
    if run.preset == "power_sweep":
        if durations is not None:
            raise ConfigError("run.sweep.duration", "power_sweep only sweeps 'power'")
        out = []
        for p in powers or (None,):
            prog = program
            if p is not None:
                for label in program.labels(kind="readout"):
                    prog = prog.with_window(label, power=p)
            out.append(({"power": p} if p is not None else {}, prog))
        return out
    if run.preset == "dephasing_sweep":
        weak = program.labels(kind="weak_measure")
        if not weak:
            raise ConfigError("program.windows", "dephasing_sweep program needs a weak_measure window")
        label = weak[0]
        base = program.window(label)
        out = []
        for p in powers or (base.power,):
            for d in durations or (base.duration,):
                dur = d
                if run.duration_units == "dephasing_time":
                    gphi = dephasing_rate(pump_rate(p, params))
                    if gphi <= 0:
                        raise ConfigError("run.sweep.power", "duration in dephasing times needs a nonzero weak power")
                    dur = d / gphi
                prog = program.with_window(label, power=p, duration=dur)
                out.append(({"power": p, "duration": dur}, prog))
        return out
    if run.sweep:
        raise ConfigError("run.sweep", f"preset {run.preset} has no sweep axes")
    return [({}, program)]


# ---------------------------------------------------------------------------
# cycle engine


@dataclass(frozen=True)
class _Step:
    kind: str
    label: str
    duration: float
    collect: bool
    target: int
    noise: float  # counts/s
    sig: float  # peak signal click rate, counts/s
    gp: float
    gphi: float
    emit_rate: float  # photon rate R for telegraph readout


def compile_program(preset: ExperimentPreset, params: EmitterParams, program: PulseProgram) -> list[_Step]:
    steps = []
    for w in program:
        R = pump_rate(w.power, params) if w.kind in OPTICAL_KINDS else 0.0
        sig = params.eta * R
        if w.kind == "crc":
            sig *= preset.crc_rate_factor
        steps.append(
            _Step(
                kind=w.kind,
                label=w.label,
                duration=w.duration,
                collect=w.collect,
                target=DOWN if w.target == "down" else UP,
                noise=params.noise_a + params.noise_b * w.power,
                sig=sig,
                gp=polarization_rate(R, params.lambda_cyc),
                gphi=dephasing_rate(R),
                emit_rate=R,
            )
        )
    return steps


def _clicks(rng, T, noise, sig, gp, t_sig, decaying=True) -> np.ndarray:
    """Noise clicks on [0, T) and signal clicks on [0, t_sig), in s."""
    parts = []
    if noise > 0:
        n = rng.poisson(noise * T)
        if n:
            parts.append(rng.random(n) * T)
    if sig > 0 and t_sig > 0:
        m = rng.poisson(sig * t_sig)
        if m:
            c = rng.random(m) * t_sig
            if decaying and gp > 0:
                c = c[rng.random(m) < np.exp(-gp * c)]
            parts.append(c)
    if not parts:
        return _EMPTY
    t = np.concatenate(parts) if len(parts) > 1 else parts[0]
    t.sort()
    return t


_EMPTY = np.empty(0)


def _telegraph(rng, T, spin, k_mix, gp, bidirectional, t_on):
    """Bright-state intervals of a spin flipped by a weak microwave drive
    (up->down at k_mix, down->up at k_mix if bidirectional) and optically
    pumped down->up at gp, while the emitter is on for t < t_on.

    Returns (list of (start, end) bright intervals, final spin)."""
    t = 0.0
    intervals = []
    while True:
        if spin == DOWN:
            rate = gp * (t < t_on) + (k_mix if bidirectional else 0.0)
        else:
            rate = k_mix
        dwell = rng.exponential(1.0 / rate) if rate > 0 else math.inf
        end = min(t + dwell, T)
        if spin == DOWN and end > t:
            intervals.append((t, min(end, t_on)) if t < t_on else (t, t))
        if t + dwell >= T:
            return [(a, b) for a, b in intervals if b > a], spin
        t += dwell
        spin = 1 - spin


def _telegraph_clicks(rng, T, noise, sig, intervals):
    parts = []
    if noise > 0:
        n = rng.poisson(noise * T)
        if n:
            parts.append(rng.random(n) * T)
    for a, b in intervals:
        m = rng.poisson(sig * (b - a))
        if m:
            parts.append(a + rng.random(m) * (b - a))
    if not parts:
        return _EMPTY
    t = np.concatenate(parts)
    t.sort()
    return t


def _run_cycle(steps: list[_Step], preset: ExperimentPreset, params: EmitterParams,
               blink: BlinkModel, seed: int, index: int) -> CycleRecord:
    rng = np.random.default_rng(seed)
    spin = UP
    coh = None  # analytic coherence r when a superposition is tracked
    charge_on = True
    budget = math.inf  # driven time left before the off-switch
    counts: dict[str, int] = {}
    stamps: dict[str, np.ndarray] = {}
    charge: dict[str, bool] = {}

    for st in steps:
        kind = st.kind
        T = st.duration
        t_on = 0.0
        if kind in OPTICAL_KINDS and charge_on:
            if budget < T:
                t_on = budget
                charge_on = False
                budget = 0.0
            else:
                t_on = T
                budget -= T

        clicks = None
        if kind == "repump":
            charge_on = blink.k_on_repump >= 1.0 or rng.random() < blink.k_on_repump
            budget = rng.exponential(1.0 / blink.k_off) if blink.k_off > 0 else math.inf
            spin = DOWN if rng.random() < 0.5 else UP
            coh = None
        elif kind == "init":
            err = params.eps0 if st.target == DOWN else params.eps1
            spin = st.target if (err == 0.0 or rng.random() >= err) else 1 - st.target
            coh = None
        elif kind == "microwave_pi":
            if coh is None and (preset.pi_error == 0.0 or rng.random() >= preset.pi_error):
                spin = 1 - spin
        elif kind == "weak_measure":
            if preset.superposition_before_weak and coh is None:
                coh = 1.0
            if coh is not None:
                coh *= math.exp(-st.gphi * t_on)
                alpha2 = 0.5
            else:
                alpha2 = 1.0 if spin == DOWN else 0.0
                if spin == DOWN and t_on > 0 and st.gp > 0 and rng.exponential(1.0 / st.gp) < t_on:
                    spin = UP
            if st.collect:
                clicks = _clicks(rng, T, st.noise, st.sig * alpha2, st.gp, t_on)
        elif kind == "readout":
            if coh is not None:
                spin = DOWN if rng.random() < 0.5 * (1.0 + coh) else UP
                coh = None
            if preset.mixing_rate > 0:
                intervals, spin = _telegraph(rng, T, spin, preset.mixing_rate, st.gp,
                                             preset.bidirectional_mixing, t_on)
                if st.collect:
                    clicks = _telegraph_clicks(rng, T, st.noise, st.sig, intervals)
            else:
                bright = spin == DOWN and t_on > 0
                if bright and st.gp > 0 and rng.exponential(1.0 / st.gp) < t_on:
                    spin = UP
                if st.collect:
                    clicks = _clicks(rng, T, st.noise, st.sig if bright else 0.0, st.gp, t_on)
        elif kind == "crc":
            if st.collect:
                clicks = _clicks(rng, T, st.noise, st.sig, 0.0, t_on, decaying=False)
            spin = DOWN if rng.random() < 0.5 else UP
            coh = None

        if st.collect:
            if clicks is None:
                clicks = _clicks(rng, T, st.noise, 0.0, 0.0, 0.0)
            ns = np.rint(clicks * _STAMP_SCALE) / 10 ** STAMP_DECIMALS
            counts[st.label] = len(ns)
            stamps[st.label] = ns
        charge[st.label] = charge_on
    return CycleRecord(index, counts, stamps, charge, seed)


def simulate_cycle(preset: ExperimentPreset, params: EmitterParams, blink: BlinkModel,
                   program: PulseProgram, seed: int, cycle_index: int = 0) -> CycleRecord:
    """Simulate one cycle of ``program`` from generator seed ``seed``."""
    return _run_cycle(compile_program(preset, params, program), preset, params, blink, seed, cycle_index)


def _simulate_block(args) -> PointData:
    steps, preset, params, blink, point_seed, start, stop, labels = args
    builder = PointData.builder(labels)
    for i in range(start, stop):
        builder.add(_run_cycle(steps, preset, params, blink, derive_cycle_seed(point_seed, i), i))
    return builder.build()


def point_seed(master_seed: int, point_index: int) -> int:
    return derive_cycle_seed(master_seed ^ _POINT_SALT, point_index)


def simulate_point(preset, params, blink, program, seed, cycles, workers=1) -> PointData:
    steps = compile_program(preset, params, program)
    labels = program.labels(collect=True)
    if workers <= 1 or cycles < 2 * workers:
        return _simulate_block((steps, preset, params, blink, seed, 0, cycles, labels))
    bounds = np.linspace(0, cycles, workers + 1).astype(int)
    jobs = [(steps, preset, params, blink, seed, int(a), int(b), labels)
            for a, b in zip(bounds[:-1], bounds[1:])]
    with ProcessPoolExecutor(max_workers=workers) as ex:
        parts = list(ex.map(_simulate_block, jobs))
    return PointData.concatenate(parts)


def run_experiment(config: Mapping[str, Any] | tuple, out_dir: str | os.PathLike | None = None,
                   cycles: int | None = None, seed: int | None = None,
                   workers: int | None = None, config_bytes: bytes | None = None) -> Dataset:
    """Simulate every sweep point of a config.

    Parameters
    ----------
    config : mapping or (EmitterParams, PulseProgram | None, RunSettings)
    out_dir : path, optional
        When given, the dataset files, config echo and manifest are written
        there.
    cycles, seed : int, optional
        Override ``run.cycles`` / ``run.master_seed``.
    """
    t0 = time.perf_counter()
    if isinstance(config, tuple):
        params, program, run = config
    else:
        params, program, run = validate_config(config)
    if cycles is not None or seed is not None or workers is not None:
        from dataclasses import replace
        run = replace(
            run,
            cycles=run.cycles if cycles is None else int(cycles),
            master_seed=run.master_seed if seed is None else int(seed),
            workers=run.workers if workers is None else int(workers),
        )
    preset = ExperimentPreset.from_run(run)
    base = program if program is not None else default_program(run)
    points = []
    for k, (coords, prog) in enumerate(sweep_points(run, params, base)):
        s = point_seed(run.master_seed, k)
        data = simulate_point(preset, params, run.blink, prog, s, run.cycles, run.workers)
        points.append(SweepPoint(index=k, coords=coords, seed=s, program=prog,
                                 expected=expected_states(prog, preset), data=data))
    ds = Dataset(params=params, program=program, run=run, points=points)
    ds.timing = {"simulate_s": time.perf_counter() - t0}
    if out_dir is not None:
        write_dataset(ds, out_dir, config_bytes=config_bytes)
    return ds


# ---------------------------------------------------------------------------
# quantum jumps


def simulate_quantum_jumps(params: EmitterParams, mixing_rate: float, duration: float, bin: float,
                           seed: int, power: float | None = None, bidirectional: bool = True,
                           start: str = "up", return_truth: bool = False):
    """Binned counts of a continuous readout with weak microwave mixing.

    The spin starts in ``start`` ("up" is the initialized dark state).
    While bright it emits at eta R and is pumped dark at Gamma_p; the
    microwave drive flips dark->bright at ``mixing_rate`` (and
    bright->dark too when ``bidirectional``).

    Returns
    -------
    counts : ndarray of int, one entry per bin
    intervals : list of (start, end), only with ``return_truth``
    """
    if bin <= 0 or duration <= bin:
        raise ValueError("need 0 < bin < duration")
    p = 10 * params.p_sat if power is None else power
    R = pump_rate(p, params)
    gp = polarization_rate(R, params.lambda_cyc)
    rng = np.random.default_rng(seed)
    spin = DOWN if start == "down" else UP
    intervals, _ = _telegraph(rng, duration, spin, mixing_rate, gp, bidirectional, duration)
    t = _telegraph_clicks(rng, duration, params.noise_rate(p), params.eta * R, intervals)
    nbins = int(math.floor(duration / bin + 1e-9))
    counts = np.bincount(np.minimum((t / bin).astype(int), nbins - 1), minlength=nbins)[:nbins]
    if return_truth:
        return counts, intervals
    return counts


def calibrate_blink(n_pass_first: float, n_pass_second: float, crc_mean_on: float,
                    driven_between: float, threshold: int = 6) -> BlinkModel:
    """Blink rates reproducing consecutive-pass timescales of two CRCs.

    With independent cycles the first check passes with probability
    q1 = k_on P(X >= threshold), X ~ Poisson(crc_mean_on), and the second
    with q2 = q1 exp(-k_off * driven_between). Each N_pass = -1/ln q.
    """
    from scipy.stats import poisson

    q1 = math.exp(-1.0 / n_pass_first)
    q2 = math.exp(-1.0 / n_pass_second)
    p_on = float(poisson.sf(threshold - 1, crc_mean_on))
    k_on = q1 / p_on
    if k_on > 1:
        raise ValueError("CRC mean too low to reach the first-check pass rate")
    k_off = math.log(q1 / q2) / driven_between if q2 < q1 else 0.0
    return BlinkModel(k_off=k_off, k_on_repump=k_on)
