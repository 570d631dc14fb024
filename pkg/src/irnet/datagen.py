"""Speed storage, CSV ingestion, window sampling, splits, min-max scaling and
a synthetic causal road network used for desk-scale experiments."""

from __future__ import annotations

import csv
import json
import math
import struct
from dataclasses import dataclass, field
from datetime import datetime, timedelta
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import (
    BadFractions,
    BadSpec,
    DegenerateRange,
    MalformedRow,
    MissingTimestamp,
    NonPositiveSpeed,
    RangeTooShort,
    VersionMismatch,
    WindowOutOfRange,
)
from .reconstruct import OrderedRoadSet, ReconstructionPlan
from .roadnet import DUMB, RoadNetwork, build_network

STORE_FORMAT = "irnet-speedstore"
STORE_VERSION = 1


@dataclass
class SpeedStore:
    """Per-road average speeds (mph) on one shared clock."""

    series: dict[int, np.ndarray]
    interval: timedelta = timedelta(hours=1)
    start: datetime | None = None

    def __post_init__(self):
        lengths = {len(s) for s in self.series.values()}
        if len(lengths) > 1:
            raise MissingTimestamp("all roads must share one clock (series lengths differ)")
        for road, s in self.series.items():
            s = np.asarray(s, dtype=np.float64)
            if not np.isfinite(s).all():
                raise ValueError(f"road {road} has non-finite speeds")
            if (s <= 0).any():
                raise NonPositiveSpeed(f"road {road} has a non-positive speed")
            self.series[road] = s

    @property
    def length(self) -> int:
        return len(next(iter(self.series.values()))) if self.series else 0

    def roads(self) -> list[int]:
        return sorted(self.series)

    def window(self, road: int, t: int, h: int) -> np.ndarray:
        if h < 1 or t - h + 1 < 0 or t >= self.length:
            raise WindowOutOfRange(f"window of length {h} ending at t={t} is outside [0, {self.length})")
        return self.series[road][t - h + 1 : t + 1]

    def features(self, stop: int | None = None) -> dict[int, np.ndarray]:
        """Feature vectors for DTW: each road's series truncated to ``[0, stop)``."""
        return {r: s[:stop] for r, s in self.series.items()}


def _parse_time(value: str, lineno: int) -> datetime:
    try:
        return datetime.fromisoformat(value.strip())
    except ValueError:
        raise MalformedRow(f"bad timestamp {value!r}", lineno) from None


def ingest_sensor_csv(path, interval: timedelta = timedelta(hours=1), forward_fill: bool = False) -> SpeedStore:
    """Load speeds from CSV, averaging over all sensors on a road.

    Accepts either ``sensor_id,road_id,timestamp_iso8601,speed_mph`` rows or
    pre-aggregated ``road_id,timestamp_iso8601,speed_mph`` rows; the header
    row decides which. Opposite lanes must already carry distinct road ids.
    """
    sums: dict[tuple[int, datetime], float] = {}
    counts: dict[tuple[int, datetime], int] = {}
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise MalformedRow("empty file", 1)
        header = [h.strip() for h in header]
        if header[:1] == ["sensor_id"] and len(header) == 4:
            has_sensor = True
        elif header[:1] == ["road_id"] and len(header) == 3:
            has_sensor = False
        else:
            raise MalformedRow(f"unrecognised header {','.join(header)!r}", 1)
        width = len(header)
        for lineno, row in enumerate(reader, start=2):
            if not row or (len(row) == 1 and not row[0].strip()):
                continue
            if len(row) != width:
                raise MalformedRow(f"expected {width} fields, got {len(row)}", lineno)
            fields = row[1:] if has_sensor else row
            try:
                road = int(fields[0])
                speed = float(fields[2])
            except ValueError:
                raise MalformedRow("non-numeric road id or speed", lineno) from None
            if road < 0:
                raise MalformedRow(f"negative road id {road}", lineno)
            if not math.isfinite(speed):
                raise MalformedRow("non-finite speed", lineno)
            if speed <= 0:
                raise NonPositiveSpeed(f"speed {speed} is not positive", lineno)
            key = (road, _parse_time(fields[1], lineno))
            sums[key] = sums.get(key, 0.0) + speed
            counts[key] = counts.get(key, 0) + 1

    if not sums:
        raise MalformedRow("no data rows", 2)
    times = sorted({t for _, t in sums})
    t0, t1 = times[0], times[-1]
    step = interval.total_seconds()
    n = int(round((t1 - t0).total_seconds() / step)) + 1
    for t in times:
        offset = (t - t0).total_seconds() / step
        if abs(offset - round(offset)) > 1e-9:
            raise MissingTimestamp(f"timestamp {t.isoformat()} is off the {interval} grid")

    series: dict[int, np.ndarray] = {}
    for road in sorted({r for r, _ in sums}):
        values = np.full(n, np.nan)
        for i in range(n):
            key = (road, t0 + i * interval)
            if key in sums:
                values[i] = sums[key] / counts[key]
        missing = np.flatnonzero(np.isnan(values))
        if missing.size:
            if not forward_fill or missing[0] == 0:
                when = (t0 + int(missing[0]) * interval).isoformat()
                raise MissingTimestamp(f"road {road} has no speed at {when}")
            for i in missing:
                values[i] = values[i - 1]
        series[road] = values
    return SpeedStore(series, interval, t0)


def save_store(store: SpeedStore, path) -> None:
    doc = {
        "format": STORE_FORMAT,
        "version": STORE_VERSION,
        "interval_seconds": store.interval.total_seconds(),
        "start": store.start.isoformat() if store.start else None,
        "series": {str(r): store.series[r].tolist() for r in store.roads()},
    }
    Path(path).write_text(json.dumps(doc) + "\n", encoding="utf-8")


def load_store(path) -> SpeedStore:
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    if doc.get("format") != STORE_FORMAT:
        raise MalformedRow(f"{path} is not a speed store", None)
    if doc.get("version") != STORE_VERSION:
        raise VersionMismatch(f"store version {doc.get('version')} is not supported")
    start = datetime.fromisoformat(doc["start"]) if doc.get("start") else None
    series = {int(r): np.asarray(v, dtype=np.float64) for r, v in doc["series"].items()}
    return SpeedStore(series, timedelta(seconds=doc["interval_seconds"]), start)


def write_speed_csv(store: SpeedStore, path) -> None:
    """Write the pre-aggregated ``road_id,timestamp_iso8601,speed_mph`` form."""
    start = store.start or datetime(2020, 1, 1)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        out = csv.writer(fh, lineterminator="\n")
        out.writerow(["road_id", "timestamp_iso8601", "speed_mph"])
        for road in store.roads():
            for i, v in enumerate(store.series[road]):
                out.writerow([road, (start + i * store.interval).isoformat(), repr(float(v))])


@dataclass
class Normalizer:
    """Per-road min-max scaling. Roads without fitted statistics (e.g. an
    unseen road at transfer time) use the pooled range of the fitted roads."""

    stats: dict[int, tuple[float, float]]
    fallback: tuple[float, float] = field(default=(0.0, 1.0))

    @classmethod
    def fit(cls, store: SpeedStore, roads: Iterable[int], start: int, stop: int) -> "Normalizer":
        stats = {}
        for r in sorted(set(roads)):
            if r == DUMB:
                continue
            chunk = store.series[r][start:stop]
            lo, hi = float(chunk.min()), float(chunk.max())
            if not hi > lo:
                raise DegenerateRange(f"road {r} is constant on the training range")
            stats[r] = (lo, hi)
        if not stats:
            raise DegenerateRange("no roads to fit")
        fallback = (min(lo for lo, _ in stats.values()), max(hi for _, hi in stats.values()))
        return cls(stats, fallback)

    def range_of(self, road: int) -> tuple[float, float]:
        return self.stats.get(road, self.fallback)

    def apply(self, road: int, x):
        lo, hi = self.range_of(road)
        return (np.asarray(x, dtype=np.float64) - lo) / (hi - lo)

    def invert(self, road: int, z):
        lo, hi = self.range_of(road)
        return np.asarray(z, dtype=np.float64) * (hi - lo) + lo


def fit_normalizer(train: Sequence["Sample"], store: SpeedStore, roads: Iterable[int], h: int, P: int) -> Normalizer:
    """Fit on the time span covered by the training samples only."""
    if not train:
        raise DegenerateRange("cannot fit a normalizer on an empty training split")
    start = min(s.t for s in train) - h + 1
    stop = max(s.t for s in train) + P + 1
    return Normalizer.fit(store, roads, start, stop)


def set_to_matrix(
    slots: OrderedRoadSet | Sequence[int],
    store: SpeedStore,
    t: int,
    h: int,
    dumb_fill: float = 0.0,
    normalizer: Normalizer | None = None,
) -> np.ndarray:
    """Stack the length-``h`` windows ending at ``t`` in slot order."""
    ids = slots.slots if isinstance(slots, OrderedRoadSet) else slots
    if h < 1 or t - h + 1 < 0 or t >= store.length:
        raise WindowOutOfRange(f"window of length {h} ending at t={t} is outside [0, {store.length})")
    M = np.full((len(ids), h), float(dumb_fill))
    for z, road in enumerate(ids):
        if road == DUMB:
            continue
        row = store.window(road, t, h)
        M[z] = normalizer.apply(road, row) if normalizer is not None else row
    return M


@dataclass
class Sample:
    t: int
    s_tar: np.ndarray
    um: list[np.ndarray]
    dm: list[np.ndarray]
    labels: np.ndarray  # raw mph at t+1 .. t+P


def build_inputs(plan: ReconstructionPlan, store: SpeedStore, t: int, h: int, normalizer=None, dumb_fill=0.0):
    s_tar = store.window(plan.target, t, h)
    if normalizer is not None:
        s_tar = normalizer.apply(plan.target, s_tar)
    um = [set_to_matrix(s, store, t, h, dumb_fill, normalizer) for s in plan.upstream_sets]
    dm = [set_to_matrix(s, store, t, h, dumb_fill, normalizer) for s in plan.downstream_sets]
    return np.array(s_tar, dtype=np.float64), um, dm


def make_dataset(
    plan: ReconstructionPlan,
    store: SpeedStore,
    h: int,
    P: int,
    start: int = 0,
    stop: int | None = None,
    normalizer: Normalizer | None = None,
    dumb_fill: float = 0.0,
) -> list[Sample]:
    """One sample per admissible window end ``t`` inside ``[start, stop)``.

    A window needs ``h`` history steps ending at ``t`` and ``P`` label steps
    after it, all inside the range. Inputs are scaled when a normalizer is
    given; labels always stay in raw mph.
    """
    stop = store.length if stop is None else stop
    if h < 1 or P < 1:
        raise RangeTooShort("h and P must be positive")
    first, last = start + h - 1, stop - P - 1
    if last < first:
        raise RangeTooShort(f"range of {stop - start} steps cannot hold h={h} history plus P={P} labels")
    target = store.series[plan.target]
    samples = []
    for t in range(first, last + 1):
        s_tar, um, dm = build_inputs(plan, store, t, h, normalizer, dumb_fill)
        samples.append(Sample(t, s_tar, um, dm, target[t + 1 : t + P + 1].copy()))
    return samples


def split_sizes(n: int, fractions=(0.6, 0.2, 0.2)) -> tuple[int, int, int]:
    if len(fractions) != 3 or any(f < 0 for f in fractions) or abs(sum(fractions) - 1.0) > 1e-9:
        raise BadFractions(f"fractions {tuple(fractions)} must be three non-negative values summing to 1")
    n_val = math.floor(n * fractions[1] + 1e-9)
    n_test = math.floor(n * fractions[2] + 1e-9)
    return n - n_val - n_test, n_val, n_test


def chrono_split(samples: Sequence, fractions=(0.6, 0.2, 0.2)):
    """Contiguous train/val/test split, earliest samples first."""
    n_train, n_val, _ = split_sizes(len(samples), fractions)
    return (
        list(samples[:n_train]),
        list(samples[n_train : n_train + n_val]),
        list(samples[n_train + n_val :]),
    )


# Dataset cache: b"IRDS", u16 version, u32 h, P, k, w, sample count, then per
# sample the little-endian f64 block [t, s_tar, um_1..um_w, dm_1..dm_w, labels]
# with every matrix row-major.
DATASET_MAGIC = b"IRDS"
DATASET_VERSION = 1


def save_dataset(samples: Sequence[Sample], path, h: int, P: int, k: int, w: int) -> None:
    with open(path, "wb") as fh:
        fh.write(DATASET_MAGIC)
        fh.write(struct.pack("<H5I", DATASET_VERSION, h, P, k, w, len(samples)))
        for s in samples:
            parts = [np.array([s.t], dtype="<f8"), s.s_tar, *s.um, *s.dm, s.labels]
            fh.write(b"".join(np.ascontiguousarray(p, dtype="<f8").tobytes() for p in parts))


def load_dataset(path) -> tuple[list[Sample], dict]:
    blob = Path(path).read_bytes()
    if blob[:4] != DATASET_MAGIC:
        raise MalformedRow(f"{path} is not a dataset cache", None)
    version, h, P, k, w, count = struct.unpack_from("<H5I", blob, 4)
    if version != DATASET_VERSION:
        raise VersionMismatch(f"dataset cache version {version} is not supported")
    shapes = [(1,), (h,)] + [(k**d, h) for d in range(1, w + 1)] * 2 + [(P,)]
    per = sum(int(np.prod(s)) for s in shapes)
    data = np.frombuffer(blob, dtype="<f8", offset=4 + struct.calcsize("<H5I"))
    if data.size != per * count:
        raise MalformedRow(f"{path} is truncated", None)
    samples = []
    for block in data.reshape(count, per):
        pieces, pos = [], 0
        for shp in shapes:
            size = int(np.prod(shp))
            pieces.append(block[pos : pos + size].reshape(shp).astype(np.float64))
            pos += size
        samples.append(Sample(int(pieces[0][0]), pieces[1], pieces[2 : 2 + w], pieces[2 + w : 2 + 2 * w], pieces[-1]))
    return samples, {"h": h, "P": P, "k": k, "w": w}


@dataclass
class SynthSpec:
    """Knobs for the synthetic network.

    Roads ``0 .. n_sources-1`` are sources driven by a daily cycle plus an
    AR(1) deviation. Every later road picks 1..``max_upstream`` earlier roads
    as parents, and its speed at ``t+1`` is its own daily base plus
    ``coupling`` times the mean parent deviation at ``t`` plus noise clipped
    to ``±3*noise``. ``scale`` multiplies chosen roads' final series.
    """

    n_roads: int = 15
    steps: int = 400
    noise: float = 2.0
    seed: int = 0
    n_sources: int = 3
    max_upstream: int = 3
    period: int = 24
    base_speed: float = 60.0
    amplitude: float = 8.0
    coupling: float = 0.9
    source_ar: float = 0.8
    source_std: float = 4.0
    extra_edges: int = 0
    scale: dict[int, float] = field(default_factory=dict)


def synth_network(spec: SynthSpec) -> tuple[RoadNetwork, SpeedStore]:
    if spec.n_roads < 2 or spec.steps < 2 or spec.noise < 0 or not 1 <= spec.n_sources < spec.n_roads:
        raise BadSpec(f"invalid synthetic spec {spec}")
    if spec.max_upstream < 1 or spec.period < 1:
        raise BadSpec("max_upstream and period must be positive")
    if not 0 <= spec.extra_edges <= spec.n_roads * (spec.n_roads - 1) // 2:
        raise BadSpec("too many extra edges for the road count")
    rng = np.random.default_rng(spec.seed)
    n, T = spec.n_roads, spec.steps

    parents: dict[int, list[int]] = {r: [] for r in range(n)}
    for r in range(spec.n_sources, n):
        count = int(rng.integers(1, min(spec.max_upstream, r) + 1))
        parents[r] = sorted(int(p) for p in rng.choice(r, size=count, replace=False))
    edges = {(p, r) for r, ps in parents.items() for p in ps}
    # Optional feedback edges (later -> earlier) that carry no causal signal.
    while len(edges) < sum(len(p) for p in parents.values()) + spec.extra_edges:
        a, b = (int(x) for x in rng.integers(0, n, size=2))
        if a > b:
            edges.add((a, b))

    phase = rng.uniform(0, 2 * np.pi, size=n)
    level = spec.base_speed + rng.uniform(-5, 5, size=n)
    tt = np.arange(T)
    base = level[:, None] + spec.amplitude * np.sin(2 * np.pi * tt[None, :] / spec.period + phase[:, None])

    dev = np.zeros((n, T))
    for r in range(spec.n_sources):
        shocks = rng.normal(0.0, spec.source_std, size=T)
        for t in range(1, T):
            dev[r, t] = spec.source_ar * dev[r, t - 1] + shocks[t]
    noise = np.clip(rng.normal(0.0, 1.0, size=(n, T)) * spec.noise, -3 * spec.noise, 3 * spec.noise)
    for t in range(1, T):
        for r in range(spec.n_sources, n):
            dev[r, t] = spec.coupling * dev[parents[r], t - 1].mean() + noise[r, t]

    speeds = np.maximum(base + dev, 1.0)
    series = {}
    for r in range(n):
        series[r] = speeds[r] * spec.scale.get(r, 1.0)
    net = build_network(range(n), sorted(edges))
    return net, SpeedStore(series, timedelta(hours=1), datetime(2020, 1, 1))
