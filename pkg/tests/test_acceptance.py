"""End-to-end acceptance checks. Each test prints one PASS/FAIL line."""

import json
import math
import subprocess
import sys
import time
from pathlib import Path

import numpy as np
import pytest

from spinreadout.analysis import consecutive_pass_fit, crc_postselect
from spinreadout.core import validate_config
from spinreadout.cqed import (CavityParams, dispersive_efficiency, f_factor, fields, model_slopes,
                              post_measurement_coherence)
from spinreadout.dynamics import DriveParams, polarization_rate, pump_rate, simulate_and_extract
from spinreadout.montecarlo import calibrate_blink, default_program, run_experiment
from spinreadout.report import analyze

CONFIGS = Path(__file__).resolve().parents[1] / "configs"
GAMMA = 1 / 4.5e-9


def _report(capsys, n, ok, detail):
    with capsys.disabled():
        print(f"\ncriterion {n}: {'PASS' if ok else 'FAIL'} {detail}")
    assert ok, detail


def _cli(*args):
    r = subprocess.run([sys.executable, "-m", "spinreadout", *args], capture_output=True, text=True)
    assert r.returncode == 0, r.stderr
    return json.loads(r.stdout)


def _readout_run(root: Path):
    t0 = time.perf_counter()
    dirs = []
    for name in ("readout_wfmA", "readout_wfmB"):
        d = root / name
        _cli("simulate", "--config", str(CONFIGS / f"{name}.json"), "--out", str(d))
        dirs.append(str(d))
    out = root / "analysis"
    _cli("analyze", "--data", *dirs, "--threshold", "1", "--out", str(out))
    return root, json.loads((out / "report.json").read_text()), time.perf_counter() - t0


@pytest.fixture(scope="module")
def readout(tmp_path_factory):
    return _readout_run(tmp_path_factory.mktemp("readout"))


def test_criterion_1_rate_identities(capsys):
    t0 = time.perf_counter()
    gamma, lam = 2.222e8, 2244
    R = gamma / 2  # high-power limit of the pump rate
    gp = float(polarization_rate(R, lam))
    e, _, _ = validate_config({"emitter": {"gamma": gamma, "lambda_cyc": lam, "p_sat": 313, "eta": 1e-3},
                               "run": {"preset": "readout_wfmA"}})
    gp_hi = float(polarization_rate(pump_rate(1e12, e), lam))
    t_us = 1e6 / gp
    dt = time.perf_counter() - t0
    ok = (abs(gp - 4.95e4) / 4.95e4 < 1e-3 and abs(gp_hi / gp - 1) < 1e-6
          and 20.4 - 0.3 <= t_us <= 20.4 + 0.3 and dt < 1)
    _report(capsys, 1, ok, f"gamma_p={gp:.5g} s^-1, 1/gamma_p={t_us:.3f} us, {dt:.2f} s")


def test_criterion_2_model_cross_validation(capsys):
    t0 = time.perf_counter()
    g = 2.222e8
    worst = (0.0, None)
    for lam in (10, 100, 2244):
        for om in (0.25, 1, 5):
            for d in (0, 1, 3):
                drive = DriveParams(om * g, d * g, lam, g)
                fit, _, _ = simulate_and_extract(drive)
                _, gp, gphi = drive.two_level_rates()
                for name, ref in (("gamma_p", gp), ("gamma_phi", gphi)):
                    err = abs(fit[name] / ref - 1)
                    if err > worst[0]:
                        worst = (err, f"{name} at Lambda={lam}, Omega={om}g, delta={d}g")
    dt = time.perf_counter() - t0
    ok = worst[0] < 0.02 and dt < 60
    _report(capsys, 2, ok, f"worst deviation {worst[0]:.1%} ({worst[1]}), {dt:.1f} s")


def test_criterion_3_readout_fidelity(readout, capsys):
    _, rep, dt = readout
    fid = rep["readout"]["fidelities"][0]
    F, s = fid["F_r"]["value"], fid["F_r"]["sigma"]
    m = fid["model"]
    ok = (fid["N_r"] == 1 and abs(m["n_d"] - 0.2) < 0.01 and abs(m["n_b"] - 4) < 0.05
          and abs(m["F_r"] - 0.874) < 1e-3 and abs(F - 0.874) <= 0.005
          and fid["cycles_down"] == fid["cycles_up"] == 100000 and dt < 60)
    _report(capsys, 3, ok, f"F_r={F:.4f}+/-{s:.4f} (model {m['F_r']:.4f}, n_b={m['n_b']:.3f}, "
                           f"n_d={m['n_d']:.3f}), {dt:.1f} s")


def test_criterion_4_conditional_and_qnd(readout, capsys):
    _, rep, dt = readout
    joint = rep["readout"]["joint"]
    fc = [j["F_c"]["value"] for j in joint]
    fq = [j["F_q"]["value"] for j in joint]
    ok = (len(joint) == 2 and all(abs(v - 0.985) <= 0.01 for v in fc)
          and all(0.74 <= v <= 0.80 for v in fq) and dt < 60)
    _report(capsys, 4, ok, "F_c=" + ",".join(f"{v:.4f}" for v in fc) + " F_q="
            + ",".join(f"{v:.4f}" for v in fq) + f", {dt:.1f} s")


def test_criterion_5_saturation_fit(capsys):
    t0 = time.perf_counter()
    cfg = json.loads((CONFIGS / "power_sweep.json").read_text())
    ds = run_experiment(cfg)
    rep, _ = analyze([ds])
    s = rep["saturation"][0]
    dp = s["p_sat"]["value"] / 313 - 1
    de = s["eta"]["value"] / 0.992e-3 - 1
    dt = time.perf_counter() - t0
    ok = len(ds.points) == 12 and ds.run.cycles == 10000 and abs(dp) < 0.05 and abs(de) < 0.05 and dt < 120
    _report(capsys, 5, ok, f"p_sat={s['p_sat']['value']:.1f} nW ({dp:+.1%}), eta={s['eta']['value']:.4g} "
                           f"({de:+.1%}), {dt:.1f} s")


DEPHASING_POWERS = [40, 80, 120, 160, 200, 240, 320, 400, 1436, 5000, 20000, 50000, 200000]


def _dephasing_config(seed, powers=DEPHASING_POWERS, noise=0.0):
    return {"emitter": {"lifetime": 4.5, "lambda_cyc": 2244, "p_sat": 1436, "eta": 4.2e-3, "noise_a": noise},
            "run": {"preset": "dephasing_sweep", "cycles": 8000, "master_seed": seed,
                    "duration_units": "dephasing_time",
                    "sweep": {"power": powers, "duration": [0.3, 0.7, 1.2, 2.0]}}}


def test_criterion_6_dephasing_pipeline(capsys):
    t0 = time.perf_counter()
    rep, _ = analyze([run_experiment(_dephasing_config(5))])
    d = rep["dephasing"][0]
    B0 = GAMMA / (4 * 1436)
    dB = d["slope_B"]["value"] / B0 - 1
    dpl = d["plateau"]["value"] / (GAMMA / 4) - 1
    dt = time.perf_counter() - t0
    ok = abs(dB) < 0.05 and abs(dpl) < 0.03 and dt < 120
    _report(capsys, 6, ok, f"B={d['slope_B']['value']:.4g} ({dB:+.1%}), plateau={d['plateau']['value']:.4g} "
                           f"({dpl:+.1%}), {dt:.1f} s")


def test_criterion_7_efficiency_closure(capsys):
    t0 = time.perf_counter()
    em = {"lifetime": 4.5, "lambda_cyc": 2244, "p_sat": 1436, "eta": 4.2e-3, "noise_a": 4000}
    ps = run_experiment({"emitter": em, "run": {
        "preset": "power_sweep", "cycles": 10000, "master_seed": 11,
        "sweep": {"power": [20, 40, 60, 80, 120, 160, 240, 360, 700, 1436, 3000, 6000, 15000, 40000]}}})
    dp = run_experiment(_dephasing_config(111, [60, 120, 180, 240, 360, 1436, 5000, 20000, 50000, 100000, 200000],
                                          noise=4000))
    rep, _ = analyze([ps, dp])
    eta = rep["efficiency"]["value"]
    dev = eta / 4.2e-3 - 1
    dt = time.perf_counter() - t0
    ok = abs(dev) < 0.05 and dt < 120
    _report(capsys, 7, ok, f"eta={eta:.4%} +/- {rep['efficiency']['sigma']:.4%} ({dev:+.1%}), {dt:.1f} s")


def test_criterion_8_crc_statistics(capsys):
    t0 = time.perf_counter()
    em = {"lifetime": 4.5, "lambda_cyc": 2244, "p_sat": 313, "eta": 1.892e-3, "noise_a": 4000,
          "eps0": 0.03274, "eps1": 0.03274}
    e, _, r = validate_config({"emitter": em, "run": {"preset": "crc_statistics"}})
    crc_mean = 28.0
    w_crc = default_program(r).window("crc1")
    bright = e.eta * float(pump_rate(w_crc.power, e)) * w_crc.duration
    factor = (crc_mean - e.noise_a * w_crc.duration) / bright
    prog = default_program(r)
    w1, w2 = prog.window("crc1"), prog.window("crc2")
    driven = sum(w.duration for w in prog
                 if w.kind in ("init", "readout", "crc", "weak_measure") and w1.start <= w.start < w2.start)
    blink = calibrate_blink(2.27, 1.72, crc_mean, driven)
    ds = run_experiment({"emitter": em, "run": {
        "preset": "crc_statistics", "cycles": 100000, "master_seed": 1, "pi_error": 0.04,
        "crc_rate_factor": factor, "blink": {"k_off": blink.k_off, "k_on_repump": blink.k_on_repump}}})
    pt = ds.points[0]
    _, st = crc_postselect(pt, 30, "both")
    fit = consecutive_pass_fit(pt.data.counts["crc1"] >= 6)
    dt = time.perf_counter() - t0
    ok = abs(fit["N_pass"] - 2.27) <= 0.1 and 0.05 <= st.pass_both <= 0.10 and dt < 60
    _report(capsys, 8, ok, f"N_pass={fit['N_pass']:.3f}+/-{fit.sigma('N_pass'):.3f}, "
                           f"both-pass at N_c=30 {st.pass_both:.2%}, {dt:.1f} s")


def test_criterion_9_cqed_properties(capsys):
    t0 = time.perf_counter()
    eta, tau = 3.7e-3, 50e-6
    n, worst = 0, 0.0
    for kappa in (0.5, 1.0, 2.0, 5.0, 10.0):
        for chi in (0.3, 1.0, 3.0):
            for delta in (-2.0, -0.5, 0.7, 1.5):
                c = CavityParams(kappa, chi, 1.0, delta)
                A, B = model_slopes(c, eta, tau)
                worst = max(worst, abs(dispersive_efficiency(A, B, tau, c) / eta - 1))
                n += 1
    f = f_factor(CavityParams(1e-3, 1.0, 1.0, -1.0))
    coh_ok = True
    for a in np.linspace(0, 5, 21):
        for b in np.linspace(0, 5, 21):
            v = post_measurement_coherence(a, b)
            coh_ok &= 0 < v <= 0.5 and (a != b or v == 0.5)
    for kappa, chi in ((1.0, 0.5), (0.2, 2.0)):
        a, b = fields(CavityParams(kappa, chi, 3.0))
        coh_ok &= post_measurement_coherence(a, b) <= 0.5
    dt = time.perf_counter() - t0
    ok = n >= 50 and worst < 1e-9 and abs(f - 1) < 1e-3 and coh_ok and dt < 10
    _report(capsys, 9, ok, f"{n} points, max rel error {worst:.1e}, f={f:.6f} at kappa/chi=1e-3, "
                           f"coherence bounds {'hold' if coh_ok else 'violated'}, {dt:.2f} s")


def _tree(root: Path) -> dict:
    out = {}
    for p in sorted(root.rglob("*")):
        if not p.is_file():
            continue
        if p.name == "manifest.json":
            doc = json.loads(p.read_text())
            doc.pop("timing", None)
            out[str(p.relative_to(root))] = json.dumps(doc, sort_keys=True).encode()
        else:
            out[str(p.relative_to(root))] = p.read_bytes()
    return out


def test_criterion_10_determinism(readout, tmp_path, capsys):
    first, _, _ = readout
    t0 = time.perf_counter()
    second, _, _ = _readout_run(tmp_path)
    dt = time.perf_counter() - t0
    a, b = _tree(first), _tree(second)
    reports = sorted(k for k in a if k.startswith("analysis"))
    same_reports = all(a[k] == b.get(k) for k in reports)
    diff = sorted(k for k in set(a) | set(b) if a.get(k) != b.get(k))
    ok = bool(reports) and same_reports and not diff and dt < 120
    _report(capsys, 10, ok, f"{len(reports)} report files and {len(a) - len(reports)} dataset files compared, "
                            f"differences: {diff or 'none'}, rerun {dt:.1f} s")
