import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from spinreadout.core import (
    ConfigError,
    CountHistogram,
    EmitterParams,
    PulseProgram,
    Window,
    config_to_dict,
    cycle_rng,
    derive_cycle_seed,
    validate_config,
)

MINIMAL = {
    "emitter": {"lifetime": 4.5, "lambda_cyc": 2244, "p_sat": 313, "eta": 1e-3},
    "run": {"preset": "readout_wfmA"},
}


def _cfg(**changes):
    doc = json.loads(json.dumps(MINIMAL))
    for path, value in changes.items():
        sec, key = path.split("__")
        doc[sec][key] = value
    return doc


# seeds


@given(st.integers(0, 2**64 - 1), st.integers(0, 2**32))
def test_cycle_seed_is_deterministic_64bit(master, i):
    s = derive_cycle_seed(master, i)
    assert s == derive_cycle_seed(master, i)
    assert 0 <= s < 2**64


@given(st.integers(0, 2**64 - 1), st.lists(st.integers(0, 10**6), min_size=2, max_size=50, unique=True))
def test_cycle_seeds_distinct_within_run(master, idx):
    seeds = {derive_cycle_seed(master, i) for i in idx}
    assert len(seeds) == len(idx)


def test_cycle_rng_streams_reproduce():
    a = cycle_rng(derive_cycle_seed(5, 3)).random(4)
    b = cycle_rng(derive_cycle_seed(5, 3)).random(4)
    c = cycle_rng(derive_cycle_seed(5, 4)).random(4)
    assert np.array_equal(a, b)
    assert not np.array_equal(a, c)


# config validation


def test_minimal_config_units():
    e, prog, run = validate_config(MINIMAL)
    assert e.gamma == pytest.approx(1 / 4.5e-9)
    assert prog is None
    assert run.readout_duration == pytest.approx(50e-6)


@pytest.mark.parametrize("path,value,field", [
    ("emitter__eta", 1.5, "emitter.eta"),
    ("emitter__eps0", -0.1, "emitter.eps0"),
    ("emitter__lambda_cyc", 0, "emitter.lambda_cyc"),
    ("emitter__p_sat", "x", "emitter.p_sat"),
    ("run__preset", "nope", "run.preset"),
    ("run__cycles", -1, "run.cycles"),
    ("run__bogus", 1, "run.bogus"),
])
def test_invalid_config_names_field(path, value, field):
    with pytest.raises(ConfigError) as exc:
        validate_config(_cfg(**{path: value}))
    assert exc.value.path == field


def test_invalid_json_text():
    with pytest.raises(ConfigError) as exc:
        validate_config("{not json")
    assert exc.value.path == "$"


def test_overlapping_windows_rejected():
    doc = _cfg()
    doc["program"] = {"windows": [
        {"kind": "readout", "label": "a", "start": 0, "duration": 100, "power": 1, "collect": True},
        {"kind": "readout", "label": "b", "start": 50, "duration": 100, "power": 1, "collect": True},
    ]}
    with pytest.raises(ConfigError) as exc:
        validate_config(doc)
    assert exc.value.path.startswith("program.windows")


def test_duplicate_labels_rejected():
    w = Window("readout", "a", 0.0, 1e-6, 1.0, True)
    with pytest.raises(ConfigError):
        PulseProgram((w, Window("readout", "a", 2e-6, 1e-6, 1.0, True)))


def test_with_window_shifts_later_windows():
    prog = PulseProgram.sequential([
        dict(kind="init", label="i", duration=1e-6, power=1.0),
        dict(kind="weak_measure", label="w", duration=1e-6, power=1.0),
        dict(kind="readout", label="r", duration=1e-6, power=1.0, collect=True),
    ])
    longer = prog.with_window("w", duration=5e-6)
    assert longer.window("r").start - longer.window("w").end == pytest.approx(
        prog.window("r").start - prog.window("w").end)


finite = st.floats(0.0, 0.49, allow_nan=False)  # eps0 + eps1 must stay below 1


@settings(max_examples=40, deadline=None)
@given(
    eta=st.floats(1e-6, 1.0), eps0=finite, eps1=finite, lam=st.floats(0.1, 1e6),
    psat=st.floats(1e-2, 1e5), cycles=st.integers(0, 10**6), seed=st.integers(0, 2**64 - 1),
    powers=st.lists(st.floats(0, 1e5), min_size=1, max_size=5),
)
def test_config_round_trip(eta, eps0, eps1, lam, psat, cycles, seed, powers):
    doc = {
        "emitter": {"gamma": 2.2e8, "lambda_cyc": lam, "p_sat": psat, "eta": eta, "eps0": eps0, "eps1": eps1},
        "run": {"preset": "power_sweep", "cycles": cycles, "master_seed": seed, "sweep": {"power": powers}},
    }
    parsed = validate_config(doc)
    again = validate_config(json.loads(json.dumps(config_to_dict(*parsed))))
    assert again == parsed


# histograms


def test_empty_histogram():
    h = CountHistogram.from_counts([])
    assert h.total == 0 and h.bins == {}


def test_histogram_fraction_below():
    h = CountHistogram.from_counts([0, 0, 1, 3])
    assert h.fraction_below(1) == 0.5
    assert h.fraction_below(4) == 1.0
    assert h.mean() == 1.0


def test_emitter_validation():
    with pytest.raises(ConfigError):
        EmitterParams(gamma=-1, lambda_cyc=1, p_sat=1, eta=0.1)
