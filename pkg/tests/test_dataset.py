import json

import numpy as np
import pytest

from spinreadout.core import AnalysisError
from spinreadout.dataset import DatasetIOError, format_point, parse_point, read_dataset
from spinreadout.montecarlo import run_experiment

CFG = {
    "emitter": {"lifetime": 4.5, "lambda_cyc": 2244, "p_sat": 313, "eta": 2e-3, "noise_a": 4000},
    "run": {"preset": "power_sweep", "cycles": 50, "master_seed": 3, "sweep": {"power": [100, 1000, 5000]}},
}


@pytest.fixture
def written(tmp_path):
    ds = run_experiment(CFG, out_dir=tmp_path / "d")
    return ds, tmp_path / "d"


def test_one_file_per_sweep_point(written):
    ds, path = written
    man = json.loads((path / "manifest.json").read_text())
    names = [f["file"] for f in man["files"]]
    assert names == ["config.json", "point_000.csv", "point_001.csv", "point_002.csv"]
    assert [p["coords"]["power"] for p in man["points"]] == [100, 1000, 5000]
    assert len({p["seed"] for p in man["points"]}) == 3


def test_round_trip(written):
    ds, path = written
    back = read_dataset(path)
    assert back.preset == "power_sweep"
    for a, b in zip(ds.points, back.points):
        assert a.program == b.program
        assert a.expected == b.expected
        for l in a.data.labels:
            assert np.array_equal(a.data.counts[l], b.data.counts[l])
            assert np.allclose(a.data.stamps[l][0], b.data.stamps[l][0], atol=5e-4)


def test_manifest_stable_across_reruns(tmp_path):
    run_experiment(CFG, out_dir=tmp_path / "a")
    run_experiment(CFG, out_dir=tmp_path / "b")
    ma = json.loads((tmp_path / "a" / "manifest.json").read_text())
    mb = json.loads((tmp_path / "b" / "manifest.json").read_text())
    ma.pop("timing"), mb.pop("timing")
    assert ma == mb
    for f in ma["files"]:
        assert (tmp_path / "a" / f["file"]).read_bytes() == (tmp_path / "b" / f["file"]).read_bytes()


def test_corruption_detected(written):
    _, path = written
    p = path / "point_001.csv"
    p.write_text(p.read_text().replace(",", ";", 1))
    with pytest.raises(DatasetIOError):
        read_dataset(path)


def test_missing_manifest(tmp_path):
    with pytest.raises(AnalysisError):
        read_dataset(tmp_path)


def test_parse_rejects_count_mismatch():
    with pytest.raises(DatasetIOError):
        parse_point("0,r,2,1.000\n", ["r"], 1)


def test_format_parse_inverse(written):
    ds, _ = written
    d = ds.points[0].data
    back = parse_point(format_point(d), d.labels, d.n_cycles)
    for l in d.labels:
        assert np.array_equal(back.counts[l], d.counts[l])
