"""
Shared domain types, config validation and seed derivation.

Internal units are seconds, s^-1 and nW. Config documents use ns for
times, nW for powers and s^-1 for rates; conversion happens once in
:func:`validate_config`.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, fields, replace
from typing import Any, Mapping, Sequence

import numpy as np

NS = 1e-9
PER_NS = 1e9
LAMBDA_CAP = 1e9

WINDOW_KINDS = ("repump", "init", "microwave_pi", "weak_measure", "readout", "crc")
OPTICAL_KINDS = ("init", "weak_measure", "readout", "crc")
PRESETS = (
    "readout_wfmA",
    "readout_wfmB",
    "polarization_decay",
    "power_sweep",
    "dephasing_sweep",
    "quantum_jumps",
    "crc_statistics",
)

_MASK64 = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15


class ConfigError(ValueError):
    """Invalid configuration; ``path`` names the offending field."""

    def __init__(self, path: str, message: str):
        super().__init__(f"{path}: {message}")
        self.path = path
        self.message = message


class AnalysisError(RuntimeError):
    """An analysis precondition is not met (missing window, empty data)."""


class FitError(RuntimeError):
    """A fit could not be set up or did not produce a usable estimate."""


# ---------------------------------------------------------------------------
# seeds


def _mix64(z: int) -> int:
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9 & _MASK64
    z = (z ^ (z >> 27)) * 0x94D049BB133111EB & _MASK64
    return z ^ (z >> 31)


def derive_cycle_seed(master_seed: int, cycle_index: int) -> int:
    """Counter-based 64-bit seed for one cycle.

    The splitmix64 finalizer is applied to ``master + golden * (index + 1)``.
    Both steps are bijections on 64-bit words, so for a fixed master seed
    distinct indices below 2**64 never collide, and for a fixed index
    distinct master seeds never collide.
    """
    if cycle_index < 0:
        raise ValueError("cycle_index must be non-negative")
    z = (int(master_seed) + _GOLDEN * (int(cycle_index) + 1)) & _MASK64
    return _mix64(z)


def cycle_rng(seed: int) -> np.random.Generator:
    return np.random.default_rng(seed)


# ---------------------------------------------------------------------------
# domain types


@dataclass(frozen=True)
class EmitterParams:
    """Rates and efficiencies of the emitter and detection chain.

    Attributes
    ----------
    gamma : float
        Optical decay rate (e-folding), s^-1.
    lambda_cyc : float
        Cyclicity, ratio of spin-preserving to spin-flipping decay.
    p_sat : float
        On-resonance saturation power, nW.
    delta : float
        Drive detuning, s^-1 (angular).
    eta : float
        Overall measurement efficiency.
    noise_a, noise_b : float
        Background rate a (counts/s) and power-proportional rate b
        (counts/(s nW)).
    eps0, eps1 : float
        State-preparation error probabilities.
    """

    gamma: float
    lambda_cyc: float
    p_sat: float
    delta: float = 0.0
    eta: float = 1e-3
    noise_a: float = 0.0
    noise_b: float = 0.0
    eps0: float = 0.0
    eps1: float = 0.0

    def __post_init__(self):
        _check_emitter(self, "emitter")

    @property
    def f0(self) -> float:
        return 1.0 - self.eps0 - self.eps1

    def noise_rate(self, p: float) -> float:
        return self.noise_a + self.noise_b * p


def _check_emitter(e: EmitterParams, root: str) -> None:
    def bad(name, msg):
        raise ConfigError(f"{root}.{name}", msg)

    for name in ("gamma", "lambda_cyc", "p_sat", "delta", "eta", "noise_a", "noise_b", "eps0", "eps1"):
        if not math.isfinite(getattr(e, name)):
            bad(name, "must be finite")
    if e.gamma <= 0:
        bad("gamma", "must be > 0")
    if not 0 < e.lambda_cyc <= LAMBDA_CAP:
        bad("lambda_cyc", f"must be in (0, {LAMBDA_CAP:g}]")
    if e.p_sat <= 0:
        bad("p_sat", "must be > 0")
    if not 0 <= e.eta <= 1:
        bad("eta", "must be in [0, 1]")
    if e.noise_a < 0:
        bad("noise_a", "must be >= 0")
    if e.noise_b < 0:
        bad("noise_b", "must be >= 0")
    for name in ("eps0", "eps1"):
        if not 0 <= getattr(e, name) <= 1:
            bad(name, "must be in [0, 1]")
    if e.eps0 + e.eps1 >= 1:
        bad("eps1", "eps0 + eps1 must be < 1")


@dataclass(frozen=True)
class Window:
    """One timed segment of a pulse program (times in s, power in nW).

    ``target`` only matters for init windows and selects the prepared
    spin state ("up" is the dark state, "down" the bright one).
    """

    kind: str
    label: str
    start: float
    duration: float
    power: float = 0.0
    collect: bool = False
    target: str = "up"

    @property
    def end(self) -> float:
        return self.start + self.duration


@dataclass(frozen=True)
class PulseProgram:
    windows: tuple[Window, ...]

    def __post_init__(self):
        _check_program(self, "program")

    def __iter__(self):
        return iter(self.windows)

    def __len__(self):
        return len(self.windows)

    def labels(self, kind: str | None = None, collect: bool | None = None) -> list[str]:
        return [
            w.label
            for w in self.windows
            if (kind is None or w.kind == kind) and (collect is None or w.collect == collect)
        ]

    def window(self, label: str) -> Window:
        for w in self.windows:
            if w.label == label:
                return w
        raise KeyError(label)

    @classmethod
    def sequential(cls, specs: Sequence[Mapping[str, Any]], gap: float = 1e-6) -> "PulseProgram":
        """Lay windows out back to back, separated by ``gap`` seconds."""
        t = 0.0
        out = []
        for s in specs:
            s = dict(s)
            dur = s.pop("duration")
            out.append(Window(start=t, duration=dur, **s))
            t += dur + gap
        return cls(tuple(out))

    def with_window(self, label: str, **changes) -> "PulseProgram":
        """Return a copy with one window modified; later windows shift in time
        by any change of its duration."""
        out = []
        shift = 0.0
        for w in self.windows:
            if shift:
                w = replace(w, start=w.start + shift)
            if w.label == label:
                new = replace(w, **changes)
                shift += new.duration - w.duration
                w = new
            out.append(w)
        return PulseProgram(tuple(out))


def _check_program(prog: PulseProgram, root: str) -> None:
    seen = set()
    prev = None
    for i, w in enumerate(prog.windows):
        path = f"{root}.windows[{i}]"
        if w.kind not in WINDOW_KINDS:
            raise ConfigError(f"{path}.kind", f"unknown window kind {w.kind!r}")
        if not w.label:
            raise ConfigError(f"{path}.label", "must be non-empty")
        if w.label in seen:
            raise ConfigError(f"{path}.label", f"duplicate label {w.label!r}")
        seen.add(w.label)
        if not (math.isfinite(w.duration) and w.duration > 0):
            raise ConfigError(f"{path}.duration", "must be > 0")
        if not (math.isfinite(w.start) and w.start >= 0):
            raise ConfigError(f"{path}.start", "must be >= 0")
        if not (math.isfinite(w.power) and w.power >= 0):
            raise ConfigError(f"{path}.power", "must be >= 0")
        if w.target not in ("up", "down"):
            raise ConfigError(f"{path}.target", "must be 'up' or 'down'")
        if prev is not None:
            # tolerate float round-off from ns -> s conversion
            if w.start < prev.end - 1e-15:
                raise ConfigError(
                    f"{path}.start",
                    f"window {w.label!r} overlaps or precedes {prev.label!r}",
                )
        prev = w


@dataclass(frozen=True)
class BlinkModel:
    """Charge-state blinking: one-way off-switch at rate ``k_off`` while the
    emitter is optically driven; a repump restores the on-state with
    probability ``k_on_repump``."""

    k_off: float = 0.0
    k_on_repump: float = 1.0

    def __post_init__(self):
        if not (math.isfinite(self.k_off) and self.k_off >= 0):
            raise ConfigError("run.blink.k_off", "must be >= 0")
        if not 0 <= self.k_on_repump <= 1:
            raise ConfigError("run.blink.k_on_repump", "must be in [0, 1]")


@dataclass(frozen=True)
class RunSettings:
    """Run-level options. Times in s, powers in nW, rates in s^-1.

    The timing and power fields are used to build the preset's default
    program when the config does not give one explicitly.
    """

    preset: str
    cycles: int = 1000
    master_seed: int = 0
    sweep: tuple[tuple[str, tuple[float, ...]], ...] = ()
    duration_units: str = "absolute"
    pi_error: float = 0.0
    blink: BlinkModel = field(default_factory=BlinkModel)
    crc_rate_factor: float = 2.0
    mixing_rate: float = 0.0
    readout_power: float = 3130.0
    readout_duration: float = 50e-6
    readout_tail: float = 50e-6
    init_power: float = 3130.0
    init_duration: float = 100e-6
    crc_power: float = 3130.0
    crc_duration: float = 50e-6
    repump_duration: float = 100e-6
    weak_power: float = 1000.0
    weak_duration: float = 1e-6
    jump_bin: float = 5e-6
    workers: int = 1

    def __post_init__(self):
        if self.preset not in PRESETS:
            raise ConfigError("run.preset", f"unknown preset {self.preset!r}; expected one of {PRESETS}")
        if self.cycles < 0:
            raise ConfigError("run.cycles", "must be >= 0")
        if not 0 <= self.master_seed <= _MASK64:
            raise ConfigError("run.master_seed", "must be a 64-bit unsigned integer")
        if not 0 <= self.pi_error <= 1:
            raise ConfigError("run.pi_error", "must be in [0, 1]")
        if self.duration_units not in ("absolute", "dephasing_time"):
            raise ConfigError("run.duration_units", "must be 'absolute' or 'dephasing_time'")
        for name, values in self.sweep:
            if name not in ("power", "duration"):
                raise ConfigError(f"run.sweep.{name}", "unknown sweep axis")
            if len(values) == 0:
                raise ConfigError(f"run.sweep.{name}", "grid must be non-empty")
            if any(not (math.isfinite(v) and v >= 0) for v in values):
                raise ConfigError(f"run.sweep.{name}", "values must be finite and >= 0")
            if name == "duration" and any(v <= 0 for v in values):
                raise ConfigError(f"run.sweep.{name}", "durations must be > 0")
        for name in (
            "crc_rate_factor", "mixing_rate", "readout_power", "init_power", "crc_power", "weak_power",
        ):
            v = getattr(self, name)
            if not (math.isfinite(v) and v >= 0):
                raise ConfigError(f"run.{name}", "must be >= 0")
        for name in (
            "readout_duration", "readout_tail", "init_duration", "crc_duration",
            "repump_duration", "weak_duration", "jump_bin",
        ):
            v = getattr(self, name)
            if not (math.isfinite(v) and v > 0):
                raise ConfigError(f"run.{name}", "must be > 0")
        if self.workers < 1:
            raise ConfigError("run.workers", "must be >= 1")

    def axis(self, name: str) -> tuple[float, ...] | None:
        for k, v in self.sweep:
            if k == name:
                return v
        return None


# ---------------------------------------------------------------------------
# records and results


@dataclass
class CycleRecord:
    """Clicks of one simulated cycle, keyed by window label.

    Timestamps are in ns relative to the window start.
    """

    cycle_index: int
    counts: dict[str, int]
    timestamps: dict[str, np.ndarray]
    charge_ok: dict[str, bool]
    seed_used: int


@dataclass(frozen=True)
class CountHistogram:
    """Occurrences of each integer count over a set of selected cycles."""

    bins: dict[int, int]
    total: int
    selection: str = "all"

    @classmethod
    def from_counts(cls, counts, selection: str = "all") -> "CountHistogram":
        counts = np.asarray(counts, dtype=np.int64)
        if counts.size and counts.min() < 0:
            raise ValueError("counts must be non-negative")
        if counts.size == 0:
            return cls({}, 0, selection)
        occ = np.bincount(counts)
        bins = {int(k): int(v) for k, v in enumerate(occ) if v}
        return cls(bins, int(counts.size), selection)

    @property
    def max_count(self) -> int:
        return max(self.bins) if self.bins else 0

    def as_array(self, length: int | None = None) -> np.ndarray:
        n = self.max_count + 1 if length is None else length
        out = np.zeros(n, dtype=np.int64)
        for k, v in self.bins.items():
            if k < n:
                out[k] = v
        return out

    def mean(self) -> float:
        if self.total == 0:
            return float("nan")
        return sum(k * v for k, v in self.bins.items()) / self.total

    def fraction_below(self, n: int) -> float:
        """Fraction of cycles with counts < n."""
        if self.total == 0:
            raise ValueError("empty histogram")
        return sum(v for k, v in self.bins.items() if k < n) / self.total


@dataclass(frozen=True)
class FitResult:
    """Least-squares estimates with 1-sigma errors.

    ``usable`` is False whenever the optimizer did not converge; callers
    should not report such estimates as measurements.
    """

    names: tuple[str, ...]
    values: tuple[float, ...]
    errors: tuple[float, ...]
    rss: float
    iterations: int
    converged: bool
    model: str = ""
    info: dict = field(default_factory=dict)

    def __post_init__(self):
        if any(not (e >= 0) and not math.isnan(e) for e in self.errors):
            raise ValueError("uncertainties must be >= 0")

    @property
    def usable(self) -> bool:
        return self.converged

    def __getitem__(self, name: str) -> float:
        return self.values[self.names.index(name)]

    def sigma(self, name: str) -> float:
        return self.errors[self.names.index(name)]

    def as_dict(self) -> dict:
        return {
            "model": self.model,
            "params": {
                n: {"value": v, "sigma": e} for n, v, e in zip(self.names, self.values, self.errors)
            },
            "rss": self.rss,
            "iterations": self.iterations,
            "converged": self.converged,
            "usable": self.usable,
            **({"info": self.info} if self.info else {}),
        }


# ---------------------------------------------------------------------------
# config schema

_EMITTER_KEYS = {
    "gamma", "lifetime", "lambda_cyc", "p_sat", "delta", "eta", "noise_a", "noise_b", "eps0", "eps1",
}
_WINDOW_KEYS = {"kind", "label", "start", "duration", "power", "collect", "target"}
_RUN_TIME_KEYS = {
    "readout_duration", "readout_tail", "init_duration", "crc_duration",
    "repump_duration", "weak_duration", "jump_bin",
}
_RUN_KEYS = {
    "cycles", "master_seed", "preset", "sweep", "duration_units", "pi_error", "blink",
    "crc_rate_factor", "mixing_rate", "readout_power", "init_power", "crc_power",
    "weak_power", "workers",
} | _RUN_TIME_KEYS


def _number(doc: Mapping, key: str, path: str, default=None, integer=False):
    if key not in doc:
        if default is None:
            raise ConfigError(f"{path}.{key}", "missing required field")
        return default
    v = doc[key]
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ConfigError(f"{path}.{key}", f"expected a number, got {type(v).__name__}")
    if integer and not float(v).is_integer():
        raise ConfigError(f"{path}.{key}", "expected an integer")
    if not math.isfinite(v):
        raise ConfigError(f"{path}.{key}", "must be finite")
    return int(v) if integer else float(v)


def _unknown(doc: Mapping, allowed: set, path: str) -> None:
    for k in doc:
        if k not in allowed:
            raise ConfigError(f"{path}.{k}", "unknown field")


def _section(raw: Mapping, name: str, required: bool = True) -> Mapping:
    if name not in raw:
        if required:
            raise ConfigError(name, "missing required section")
        return {}
    sec = raw[name]
    if not isinstance(sec, Mapping):
        raise ConfigError(name, "must be an object")
    return sec


def parse_emitter(doc: Mapping, path: str = "emitter") -> EmitterParams:
    _unknown(doc, _EMITTER_KEYS, path)
    if "gamma" in doc and "lifetime" in doc:
        raise ConfigError(f"{path}.gamma", "give either gamma or lifetime, not both")
    if "lifetime" in doc:
        lifetime = _number(doc, "lifetime", path)
        if lifetime <= 0:
            raise ConfigError(f"{path}.lifetime", "must be > 0")
        gamma = PER_NS / lifetime
    else:
        gamma = _number(doc, "gamma", path)
    kw = dict(
        gamma=gamma,
        lambda_cyc=_number(doc, "lambda_cyc", path),
        p_sat=_number(doc, "p_sat", path),
        delta=_number(doc, "delta", path, 0.0),
        eta=_number(doc, "eta", path),
        noise_a=_number(doc, "noise_a", path, 0.0),
        noise_b=_number(doc, "noise_b", path, 0.0),
        eps0=_number(doc, "eps0", path, 0.0),
        eps1=_number(doc, "eps1", path, 0.0),
    )
    return EmitterParams(**kw)


def parse_program(doc: Mapping, path: str = "program") -> PulseProgram | None:
    """Parse an explicit program; an empty section means "use the preset default"."""
    if not doc:
        return None
    _unknown(doc, {"windows"}, path)
    wins = doc.get("windows")
    if not isinstance(wins, list) or not wins:
        raise ConfigError(f"{path}.windows", "must be a non-empty list")
    out = []
    for i, w in enumerate(wins):
        wp = f"{path}.windows[{i}]"
        if not isinstance(w, Mapping):
            raise ConfigError(wp, "must be an object")
        _unknown(w, _WINDOW_KEYS, wp)
        for key in ("kind", "label"):
            if key not in w:
                raise ConfigError(f"{wp}.{key}", "missing required field")
            if not isinstance(w[key], str):
                raise ConfigError(f"{wp}.{key}", "expected a string")
        collect = w.get("collect", False)
        if not isinstance(collect, bool):
            raise ConfigError(f"{wp}.collect", "expected a boolean")
        out.append(
            Window(
                kind=w["kind"],
                label=w["label"],
                start=_number(w, "start", wp) / PER_NS,
                duration=_number(w, "duration", wp) / PER_NS,
                power=_number(w, "power", wp, 0.0),
                collect=collect,
                target=w.get("target", "up"),
            )
        )
    return PulseProgram(tuple(out))


def parse_run(doc: Mapping, path: str = "run") -> RunSettings:
    _unknown(doc, _RUN_KEYS, path)
    if "preset" not in doc:
        raise ConfigError(f"{path}.preset", "missing required field")
    kw: dict[str, Any] = {"preset": doc["preset"]}
    if "cycles" in doc:
        kw["cycles"] = _number(doc, "cycles", path, integer=True)
    if "master_seed" in doc:
        kw["master_seed"] = _number(doc, "master_seed", path, integer=True)
    units = doc.get("duration_units", "ns")
    if units not in ("ns", "dephasing_time"):
        raise ConfigError(f"{path}.duration_units", "must be 'ns' or 'dephasing_time'")
    kw["duration_units"] = "absolute" if units == "ns" else units
    if "sweep" in doc:
        sw = doc["sweep"]
        if not isinstance(sw, Mapping):
            raise ConfigError(f"{path}.sweep", "must be an object")
        axes = []
        for name in sorted(sw):
            vals = sw[name]
            if not isinstance(vals, list) or not vals:
                raise ConfigError(f"{path}.sweep.{name}", "grid must be a non-empty list")
            for j, v in enumerate(vals):
                if isinstance(v, bool) or not isinstance(v, (int, float)):
                    raise ConfigError(f"{path}.sweep.{name}[{j}]", "expected a number")
            ns = name == "duration" and units == "ns"
            axes.append((name, tuple(float(v) / PER_NS if ns else float(v) for v in vals)))
        kw["sweep"] = tuple(axes)
    for key in ("pi_error", "crc_rate_factor", "mixing_rate", "readout_power", "init_power",
                "crc_power", "weak_power"):
        if key in doc:
            kw[key] = _number(doc, key, path)
    for key in _RUN_TIME_KEYS:
        if key in doc:
            kw[key] = _number(doc, key, path) / PER_NS
    if "workers" in doc:
        kw["workers"] = _number(doc, "workers", path, integer=True)
    if "blink" in doc:
        b = doc["blink"]
        if not isinstance(b, Mapping):
            raise ConfigError(f"{path}.blink", "must be an object")
        _unknown(b, {"k_off", "k_on_repump"}, f"{path}.blink")
        kw["blink"] = BlinkModel(
            k_off=_number(b, "k_off", f"{path}.blink", 0.0),
            k_on_repump=_number(b, "k_on_repump", f"{path}.blink", 1.0),
        )
    return RunSettings(**kw)


def validate_config(raw: Mapping | str) -> tuple[EmitterParams, PulseProgram | None, RunSettings]:
    """Validate a config document and normalize units.

    Parameters
    ----------
    raw : mapping or str
        Parsed JSON object, or JSON text.

    Returns
    -------
    (EmitterParams, PulseProgram or None, RunSettings)
        The program is None when the config relies on the preset default.

    Raises
    ------
    ConfigError
        With ``path`` naming the offending field.
    """
    if isinstance(raw, (str, bytes)):
        try:
            raw = json.loads(raw)
        except json.JSONDecodeError as exc:
            raise ConfigError("$", f"invalid JSON: {exc.msg} (line {exc.lineno})") from None
    if not isinstance(raw, Mapping):
        raise ConfigError("$", "config must be a JSON object")
    _unknown(raw, {"emitter", "program", "run"}, "$")
    emitter = parse_emitter(_section(raw, "emitter"))
    program = parse_program(_section(raw, "program", required=False))
    run = parse_run(_section(raw, "run"))
    return emitter, program, run


def config_to_dict(emitter: EmitterParams, program: PulseProgram | None, run: RunSettings) -> dict:
    """Serialize normalized parameters back to the external (ns, nW) schema."""
    em = {f.name: getattr(emitter, f.name) for f in fields(EmitterParams)}
    doc: dict[str, Any] = {"emitter": em}
    if program is not None:
        doc["program"] = {
            "windows": [
                {
                    "kind": w.kind,
                    "label": w.label,
                    "start": w.start * PER_NS,
                    "duration": w.duration * PER_NS,
                    "power": w.power,
                    "collect": w.collect,
                    "target": w.target,
                }
                for w in program.windows
            ]
        }
    r: dict[str, Any] = {"preset": run.preset, "cycles": run.cycles, "master_seed": run.master_seed}
    units = "ns" if run.duration_units == "absolute" else run.duration_units
    r["duration_units"] = units
    if run.sweep:
        r["sweep"] = {
            name: [v * PER_NS if (name == "duration" and units == "ns") else v for v in vals]
            for name, vals in run.sweep
        }
    for key in ("pi_error", "crc_rate_factor", "mixing_rate", "readout_power", "init_power",
                "crc_power", "weak_power", "workers"):
        r[key] = getattr(run, key)
    for key in sorted(_RUN_TIME_KEYS):
        r[key] = getattr(run, key) * PER_NS
    r["blink"] = {"k_off": run.blink.k_off, "k_on_repump": run.blink.k_on_repump}
    doc["run"] = r
    return doc
