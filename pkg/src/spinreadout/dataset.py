"""
Dataset containers and the on-disk format.

A dataset directory holds ``config.json`` (normalized config echo), one
``point_NNN.csv`` per sweep point and ``manifest.json``. Each CSV line is

    cycle,window_label,count,t1;t2;...

with click times in ns relative to the window start. Only windows with
``collect=true`` are written.
"""

from __future__ import annotations

import hashlib
import json
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np

from . import __version__
from .core import (
    NS,
    PER_NS,
    AnalysisError,
    CycleRecord,
    EmitterParams,
    PulseProgram,
    RunSettings,
    Window,
    config_to_dict,
)

MANIFEST = "manifest.json"
CONFIG = "config.json"


class DatasetIOError(OSError):
    """Reading or writing a dataset failed."""


@dataclass
class PointData:
    """Counts and click times of every collected window over all cycles.

    ``stamps[label]`` is a pair (flat times in ns, offsets) so that the
    clicks of cycle i are ``flat[offsets[i]:offsets[i+1]]``.
    """

    labels: list[str]
    counts: dict[str, np.ndarray]
    stamps: dict[str, tuple[np.ndarray, np.ndarray]]
    charge: dict[str, np.ndarray] | None = None

    @property
    def n_cycles(self) -> int:
        return len(next(iter(self.counts.values()))) if self.counts else 0

    def times(self, label: str, cycle: int) -> np.ndarray:
        flat, off = self.stamps[label]
        return flat[off[cycle] : off[cycle + 1]]

    def all_times(self, label: str, mask: np.ndarray | None = None) -> np.ndarray:
        flat, off = self.stamps[label]
        if mask is None:
            return flat
        owner = np.repeat(np.arange(len(off) - 1), np.diff(off))
        return flat[mask[owner]]

    @staticmethod
    def builder(labels: list[str]) -> "_Builder":
        return _Builder(list(labels))

    @classmethod
    def concatenate(cls, parts: list["PointData"]) -> "PointData":
        labels = parts[0].labels
        counts = {l: np.concatenate([p.counts[l] for p in parts]) for l in labels}
        stamps = {}
        for l in labels:
            flats, offs, base = [], [np.zeros(1, dtype=np.int64)], 0
            for p in parts:
                f, o = p.stamps[l]
                flats.append(f)
                offs.append(o[1:] + base)
                base += len(f)
            stamps[l] = (np.concatenate(flats), np.concatenate(offs))
        charge = None
        if all(p.charge is not None for p in parts):
            charge = {k: np.concatenate([p.charge[k] for p in parts]) for k in parts[0].charge}
        return cls(labels, counts, stamps, charge)


class _Builder:
    def __init__(self, labels):
        self.labels = labels
        self.counts = {l: [] for l in labels}
        self.flat = {l: [] for l in labels}
        self.charge: dict[str, list[bool]] = {}

    def add(self, rec: CycleRecord):
        for l in self.labels:
            self.counts[l].append(rec.counts[l])
            self.flat[l].append(rec.timestamps[l])
        for k, v in rec.charge_ok.items():
            self.charge.setdefault(k, []).append(v)

    def build(self) -> PointData:
        counts = {l: np.asarray(self.counts[l], dtype=np.int64) for l in self.labels}
        stamps = {}
        for l in self.labels:
            off = np.zeros(len(self.counts[l]) + 1, dtype=np.int64)
            np.cumsum(counts[l], out=off[1:])
            flat = np.concatenate(self.flat[l]) if self.flat[l] else np.empty(0)
            stamps[l] = (flat.astype(float), off)
        charge = {k: np.asarray(v, dtype=bool) for k, v in self.charge.items()}
        return PointData(self.labels, counts, stamps, charge)


@dataclass
class SweepPoint:
    index: int
    coords: dict
    seed: int
    program: PulseProgram
    expected: dict[str, str]
    data: PointData
    file: str | None = None
    digest: str | None = None


@dataclass
class Dataset:
    params: EmitterParams | None
    program: PulseProgram | None
    run: RunSettings | None
    points: list[SweepPoint]
    manifest: dict | None = None
    timing: dict = field(default_factory=dict)
    source: str | None = None

    @property
    def preset(self) -> str:
        if self.run is not None:
            return self.run.preset
        return self.manifest["preset"]

    @property
    def name(self) -> str:
        return self.source or self.preset


# ---------------------------------------------------------------------------
# serialization


def format_point(data: PointData) -> str:
    lines = []
    labels = data.labels
    for i in range(data.n_cycles):
        for l in labels:
            t = data.times(l, i)
            ts = ";".join(f"{x:.3f}" for x in t)
            lines.append(f"{i},{l},{len(t)},{ts}")
    return "\n".join(lines) + ("\n" if lines else "")


def parse_point(text: str, labels: list[str], n_cycles: int, source: str = "") -> PointData:
    counts = {l: np.zeros(n_cycles, dtype=np.int64) for l in labels}
    flat: dict[str, list[list[float]]] = {l: [[] for _ in range(n_cycles)] for l in labels}
    seen = 0
    for lineno, line in enumerate(text.splitlines(), 1):
        if not line:
            continue
        parts = line.split(",", 3)
        if len(parts) != 4:
            raise DatasetIOError(f"{source}:{lineno}: expected 4 fields")
        try:
            i = int(parts[0])
            n = int(parts[2])
            ts = [float(x) for x in parts[3].split(";")] if parts[3] else []
        except ValueError as exc:
            raise DatasetIOError(f"{source}:{lineno}: {exc}") from None
        l = parts[1]
        if l not in counts or not 0 <= i < n_cycles:
            raise DatasetIOError(f"{source}:{lineno}: unexpected cycle/label {i},{l}")
        if n != len(ts):
            raise DatasetIOError(f"{source}:{lineno}: count {n} != {len(ts)} timestamps")
        counts[l][i] = n
        flat[l][i] = ts
        seen += 1
    if seen != n_cycles * len(labels):
        raise DatasetIOError(f"{source}: expected {n_cycles * len(labels)} records, found {seen}")
    stamps = {}
    for l in labels:
        off = np.zeros(n_cycles + 1, dtype=np.int64)
        np.cumsum(counts[l], out=off[1:])
        f = np.fromiter((x for row in flat[l] for x in row), dtype=float, count=int(off[-1]))
        stamps[l] = (f, off)
    return PointData(list(labels), counts, stamps)


def _sha256(b: bytes) -> str:
    return hashlib.sha256(b).hexdigest()


def canonical_json(obj: Any) -> bytes:
    return (json.dumps(obj, sort_keys=True, indent=1) + "\n").encode()


def _window_doc(w: Window, expected: str) -> dict:
    return {
        "label": w.label, "kind": w.kind, "start": w.start * PER_NS, "duration": w.duration * PER_NS,
        "power": w.power, "collect": w.collect, "target": w.target, "expected_state": expected,
    }


def write_dataset(ds: Dataset, out_dir, config_bytes: bytes | None = None) -> dict:
    """Write point files, config echo and manifest; returns the manifest."""
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
        cfg = config_bytes if config_bytes is not None else canonical_json(
            config_to_dict(ds.params, ds.program, ds.run))
        (out / CONFIG).write_bytes(cfg)
        files = [{"file": CONFIG, "sha256": _sha256(cfg)}]
        pts = []
        for pt in ds.points:
            name = f"point_{pt.index:03d}.csv"
            body = format_point(pt.data).encode()
            (out / name).write_bytes(body)
            pt.file, pt.digest = name, _sha256(body)
            files.append({"file": name, "sha256": pt.digest})
            pts.append({
                "index": pt.index,
                "file": name,
                "sha256": pt.digest,
                "seed": pt.seed,
                "cycles": pt.data.n_cycles,
                "coords": pt.coords,
                "windows": [_window_doc(w, pt.expected[w.label]) for w in pt.program],
            })
        manifest = {
            "tool": "spinreadout",
            "version": __version__,
            "preset": ds.run.preset,
            "master_seed": ds.run.master_seed,
            "cycles": ds.run.cycles,
            "config_file": CONFIG,
            "config_sha256": _sha256(cfg),
            "emitter": {k: getattr(ds.params, k) for k in ds.params.__dataclass_fields__},
            "points": pts,
            "files": files,
            "timing": {k: round(v, 3) for k, v in ds.timing.items()},
        }
        (out / MANIFEST).write_bytes(canonical_json(manifest))
    except OSError as exc:
        raise DatasetIOError(f"cannot write dataset to {out}: {exc}") from exc
    ds.manifest = manifest
    ds.source = str(out)
    return manifest


def read_dataset(path, verify: bool = True) -> Dataset:
    """Load a dataset directory written by :func:`write_dataset`."""
    root = Path(path)
    try:
        manifest = json.loads((root / MANIFEST).read_text())
    except FileNotFoundError:
        raise AnalysisError(f"{root}: no {MANIFEST} found") from None
    except (OSError, json.JSONDecodeError) as exc:
        raise DatasetIOError(f"{root / MANIFEST}: {exc}") from exc
    from .core import validate_config

    try:
        cfg_bytes = (root / manifest["config_file"]).read_bytes()
    except OSError as exc:
        raise DatasetIOError(f"{root}: {exc}") from exc
    if verify and _sha256(cfg_bytes) != manifest["config_sha256"]:
        raise DatasetIOError(f"{root}: config digest mismatch")
    params, program, run = validate_config(cfg_bytes.decode())
    points = []
    for p in manifest["points"]:
        try:
            body = (root / p["file"]).read_bytes()
        except OSError as exc:
            raise DatasetIOError(f"{root}: {exc}") from exc
        if verify and _sha256(body) != p["sha256"]:
            raise DatasetIOError(f"{root / p['file']}: digest mismatch")
        wins = tuple(
            Window(kind=w["kind"], label=w["label"], start=w["start"] / PER_NS,
                   duration=w["duration"] / PER_NS, power=w["power"], collect=w["collect"],
                   target=w["target"])
            for w in p["windows"]
        )
        prog = PulseProgram(wins)
        expected = {w["label"]: w["expected_state"] for w in p["windows"]}
        data = parse_point(body.decode(), prog.labels(collect=True), p["cycles"], str(root / p["file"]))
        points.append(SweepPoint(p["index"], p["coords"], p["seed"], prog, expected, data, p["file"], p["sha256"]))
    return Dataset(params, program, run, points, manifest=manifest, source=str(root))
