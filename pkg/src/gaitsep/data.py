"""Recordings to labeled windows: resampling, annotation labeling, windowing,
splits, CSV ingestion, the ``GWIN`` window cache and a synthetic generator.

Windows are held column-wise in a ``WindowSet`` (one ``(N, 60, 3)`` array
plus per-window metadata) because every consumer works on whole batches.
"""

from __future__ import annotations

import csv
import os
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

TARGET_RATE_HZ = 30.0
NOMINAL_RATE_HZ = 31.25
WINDOW = 60
STEP = 15
N_AXES = 3

SENSORS = ("ch", "ll", "rl", "lh", "rh")
SENSOR_NAMES = {"ch": "Chest", "lh": "Left arm", "rh": "Right arm", "ll": "Left leg", "rl": "Right leg"}
NON_GAIT, GAIT = 0, 1
LABEL_NAMES = {GAIT: "gait", NON_GAIT: "non_gait"}

PAPER_SUBJECTS = ("6", "10", "12", "13", "15", "17", "23", "24", "25", "33", "35", "36", "40", "42", "44", "63")
DEFAULT_GAIT_ACTIVITIES = ("Timed Up and Go", "10 Meter Walk", "Gait", "Tandem Walking")
DEFAULT_EXCLUDED_ACTIVITIES = ("Retropulsion Pull Test",)

CACHE_MAGIC = b"GWIN"
CACHE_VERSION = 1


class DataError(ValueError):
    """Input data violates a pipeline contract."""


def subject_sort_key(subject: str):
    """Numeric ids sort numerically, everything else after them lexically."""
    return (0, int(subject), "") if str(subject).isdigit() else (1, 0, str(subject))


@dataclass
class Recording:
    subject_id: str
    sensor: str
    timestamps_ms: np.ndarray  # (N,), strictly increasing
    samples: np.ndarray  # (N, 3) in g
    sample_rate: float = NOMINAL_RATE_HZ

    def __post_init__(self):
        self.timestamps_ms = np.asarray(self.timestamps_ms, dtype=np.float64)
        self.samples = np.asarray(self.samples, dtype=np.float64).reshape(-1, N_AXES)
        if len(self.timestamps_ms) != len(self.samples):
            raise DataError(f"{len(self.timestamps_ms)} timestamps for {len(self.samples)} samples")
        if np.any(np.diff(self.timestamps_ms) <= 0):
            raise DataError(f"timestamps of {self.subject_id}/{self.sensor} are not strictly increasing")
        if not np.all(np.isfinite(self.samples)):
            raise DataError(f"non-finite samples in {self.subject_id}/{self.sensor}")


@dataclass(frozen=True)
class AnnotationEvent:
    start_ms: float
    stop_ms: float
    activity_name: str
    label: str = "non_gait"  # "gait" | "non_gait" | "excluded"


@dataclass
class Window:
    data: np.ndarray
    label: int
    subject_id: str
    sensor: str


@dataclass
class WindowSet:
    """Column-wise window collection.

    ``origin`` holds ``(interval_index, offset)`` per window: which labeled
    interval it came from and its first sample inside that interval.
    ``offsets`` optionally keeps the per-axis means removed by centering.
    """

    data: np.ndarray  # (N, 60, 3) float64
    labels: np.ndarray  # (N,) int8
    subjects: np.ndarray  # (N,) str
    sensors: np.ndarray  # (N,) str
    origin: Optional[np.ndarray] = None  # (N, 2) int64
    offsets: Optional[np.ndarray] = None  # (N, 3)

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.float64).reshape(-1, WINDOW, N_AXES)
        n = len(self.data)
        self.labels = np.asarray(self.labels, dtype=np.int8).reshape(n)
        self.subjects = np.asarray(self.subjects, dtype=str).reshape(n)
        self.sensors = np.asarray(self.sensors, dtype=str).reshape(n)
        if self.origin is None:
            self.origin = np.stack([np.zeros(n, dtype=np.int64), np.arange(n, dtype=np.int64)], axis=1)
        self.origin = np.asarray(self.origin, dtype=np.int64).reshape(n, 2)

    def __len__(self):
        return len(self.data)

    def __getitem__(self, i) -> Window:
        return Window(self.data[i], int(self.labels[i]), str(self.subjects[i]), str(self.sensors[i]))

    def subset(self, idx) -> "WindowSet":
        idx = np.asarray(idx)
        return WindowSet(
            self.data[idx], self.labels[idx], self.subjects[idx], self.sensors[idx], self.origin[idx],
            None if self.offsets is None else self.offsets[idx],
        )

    def select(self, subjects=None, sensors=None) -> "WindowSet":
        mask = np.ones(len(self), dtype=bool)
        if subjects is not None:
            mask &= np.isin(self.subjects, [str(s) for s in subjects])
        if sensors is not None:
            mask &= np.isin(self.sensors, list(sensors))
        return self.subset(np.flatnonzero(mask))

    def class_counts(self) -> tuple:
        n1 = int(np.sum(self.labels == GAIT))
        return len(self) - n1, n1

    @staticmethod
    def empty() -> "WindowSet":
        return WindowSet(np.zeros((0, WINDOW, N_AXES)), np.zeros(0), np.zeros(0, dtype=str), np.zeros(0, dtype=str))

    @staticmethod
    def concat(sets: Sequence["WindowSet"]) -> "WindowSet":
        sets = [s for s in sets if len(s)]
        if not sets:
            return WindowSet.empty()
        offsets = None
        if all(s.offsets is not None for s in sets):
            offsets = np.concatenate([s.offsets for s in sets])
        return WindowSet(
            np.concatenate([s.data for s in sets]),
            np.concatenate([s.labels for s in sets]),
            np.concatenate([s.subjects for s in sets]),
            np.concatenate([s.sensors for s in sets]),
            np.concatenate([s.origin for s in sets]),
            offsets,
        )


def canonical_order(ws: WindowSet) -> np.ndarray:
    """Order by (subject, sensor, interval, offset), ties broken by content.

    Splits shuffle this order, which makes them independent of how the
    input happened to be arranged.
    """
    sensor_rank = {s: i for i, s in enumerate(SENSORS)}
    keys = [
        (subject_sort_key(ws.subjects[i]), sensor_rank.get(ws.sensors[i], len(SENSORS)), ws.sensors[i],
         int(ws.origin[i, 0]), int(ws.origin[i, 1]), int(ws.labels[i]), ws.data[i].tobytes())
        for i in range(len(ws))
    ]
    return np.array(sorted(range(len(ws)), key=keys.__getitem__), dtype=np.int64)


def resample_to_30hz(recording: Recording, rate_hz: float = TARGET_RATE_HZ) -> Recording:
    """Linear interpolation onto a uniform grid starting at the first timestamp.

    The grid stops at the last grid point not after the final input sample.
    """
    t = recording.timestamps_ms
    if len(t) < 2:
        raise DataError("resampling needs at least two samples")
    period = 1000.0 / rate_hz
    n = int(np.floor((t[-1] - t[0]) / period + 1e-9)) + 1
    grid = t[0] + np.arange(n) * period
    out = np.column_stack([np.interp(grid, t, recording.samples[:, a]) for a in range(N_AXES)])
    return Recording(recording.subject_id, recording.sensor, grid, out, rate_hz)


def _matches(name: str, patterns) -> bool:
    low = name.lower()
    return any(p.lower() in low for p in patterns)


def label_intervals(annotations, gait_activities=DEFAULT_GAIT_ACTIVITIES,
                    excluded_activities=DEFAULT_EXCLUDED_ACTIVITIES) -> list:
    """Map each annotation to gait / non_gait / excluded by case-insensitive substring.

    ``annotations`` holds AnnotationEvent objects or ``(start_ms, stop_ms,
    activity)`` tuples. Exclusion is checked first. Overlapping gait and
    non-gait intervals raise ``DataError`` naming every collision.
    """
    events = []
    for a in annotations:
        if isinstance(a, AnnotationEvent):
            start, stop, name = a.start_ms, a.stop_ms, a.activity_name
        else:
            start, stop, name = a
        start, stop = float(start), float(stop)
        if not start < stop:
            raise DataError(f"annotation {name!r} has start {start} >= stop {stop}")
        if _matches(name, excluded_activities):
            label = "excluded"
        elif _matches(name, gait_activities):
            label = "gait"
        else:
            label = "non_gait"
        events.append(AnnotationEvent(start, stop, name, label))
    gait = sorted((e for e in events if e.label == "gait"), key=lambda e: e.start_ms)
    other = sorted((e for e in events if e.label == "non_gait"), key=lambda e: e.start_ms)
    collisions = [
        (g.activity_name, g.start_ms, g.stop_ms, o.activity_name, o.start_ms, o.stop_ms)
        for g in gait for o in other
        if g.start_ms < o.stop_ms and o.start_ms < g.stop_ms
    ]
    if collisions:
        desc = "; ".join(f"{a!r} [{s1:g}, {e1:g}) overlaps {b!r} [{s2:g}, {e2:g})"
                         for a, s1, e1, b, s2, e2 in collisions)
        raise DataError(f"gait and non-gait intervals overlap: {desc}")
    return events


def center(windows: np.ndarray):
    """Subtract each window's per-axis mean; returns ``(centered, means)``."""
    means = windows.mean(axis=-2, keepdims=True)
    return windows - means, means[..., 0, :]


def extract_windows(recording: Recording, events, window: int = WINDOW, step: int = STEP) -> WindowSet:
    """Slide a 60-sample window with step 15 inside each labeled interval.

    Every interval restarts at offset 0 and windows never cross its
    boundary; excluded events yield nothing.
    """
    t = recording.timestamps_ms
    chunks, labels, origin = [], [], []
    for k, ev in enumerate(events):
        if ev.label == "excluded":
            continue
        lo = int(np.searchsorted(t, ev.start_ms, side="left"))
        hi = int(np.searchsorted(t, ev.stop_ms, side="left"))
        seg = recording.samples[lo:hi]
        if len(seg) < window:
            continue
        starts = np.arange(0, len(seg) - window + 1, step)
        chunks.append(np.stack([seg[s : s + window] for s in starts]))
        labels.extend([GAIT if ev.label == "gait" else NON_GAIT] * len(starts))
        origin.extend((k, int(s)) for s in starts)
    if not chunks:
        return WindowSet.empty()
    data, means = center(np.concatenate(chunks))
    n = len(data)
    return WindowSet(data, labels, [recording.subject_id] * n, [recording.sensor] * n, origin, means)


def n_windows(interval_length: int, window: int = WINDOW, step: int = STEP) -> int:
    return 0 if interval_length < window else (interval_length - window) // step + 1


def _split_counts(n, fractions):
    counts = [int(np.floor(f * n + 0.5)) for f in fractions[:-1]]
    counts.append(n - sum(counts))
    return counts


@dataclass
class SplitSet:
    train: WindowSet
    validation: WindowSet
    test: WindowSet
    split_kind: str
    subject: Optional[str] = None
    fold_index: int = 0


def _stratified_partition(ws: WindowSet, idx, fractions, rng, min_per_class):
    parts = [[] for _ in fractions]
    for cls in (NON_GAIT, GAIT):
        members = idx[ws.labels[idx] == cls]
        if len(members) < min_per_class:
            raise DataError(f"class {LABEL_NAMES[cls]} has {len(members)} windows; at least {min_per_class} needed")
        members = members[rng.permutation(len(members))]
        pos = 0
        for p, c in zip(parts, _split_counts(len(members), fractions)):
            p.append(members[pos : pos + c])
            pos += c
    return [np.sort(np.concatenate(p)) for p in parts]


def stratified_split(windows: WindowSet, seed: int, fractions=(0.6, 0.2, 0.2)) -> SplitSet:
    """Per-class seeded shuffle, then a 60/20/20 cut within each class."""
    order = canonical_order(windows)
    ws = windows.subset(order)
    rng = np.random.default_rng(seed)
    train, val, test = _stratified_partition(ws, np.arange(len(ws)), fractions, rng, min_per_class=5)
    return SplitSet(ws.subset(train), ws.subset(val), ws.subset(test), "stratified_60_20_20")


def loso_folds(windows: WindowSet, subject_ids=PAPER_SUBJECTS, seed: int = 12,
               sensor: Optional[str] = "ch", val_fraction: float = 0.3) -> list:
    """One fold per subject: that subject is the test set; the rest split
    70/30 into train/validation, stratified by label."""
    ws = windows if sensor is None else windows.select(sensors=[sensor])
    subject_ids = [str(s) for s in subject_ids]
    ws = ws.select(subjects=subject_ids)
    ws = ws.subset(canonical_order(ws))
    folds = []
    for f, subject in enumerate(sorted(subject_ids, key=subject_sort_key)):
        held = ws.subjects == subject
        if not held.any():
            raise DataError(f"subject {subject} has no windows")
        rest = np.flatnonzero(~held)
        rng = np.random.default_rng([seed, f])
        train, val = _stratified_partition(ws, rest, (1.0 - val_fraction, val_fraction), rng, min_per_class=2)
        folds.append(SplitSet(ws.subset(train), ws.subset(val), ws.subset(np.flatnonzero(held)),
                              f"loso_fold({subject})", subject, f))
    return folds


# --- CSV ingestion -----------------------------------------------------------

SENSOR_COLUMNS = ("t_ms", "ax_g", "ay_g", "az_g")
ANNOTATION_COLUMNS = ("start_ms", "stop_ms", "activity")


def read_sensor_csv(path, subject_id: str, sensor: str, columns: Optional[dict] = None) -> Recording:
    """Read ``t_ms,ax_g,ay_g,az_g``; ``columns`` maps those names to other headers."""
    columns = columns or {}
    names = [columns.get(c, c) for c in SENSOR_COLUMNS]
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        missing = [n for n in names if n not in (reader.fieldnames or [])]
        if missing:
            raise DataError(f"{path}: missing columns {missing}")
        try:
            rows = [[float(r[n]) for n in names] for r in reader]
        except (TypeError, ValueError) as exc:
            raise DataError(f"{path}: line {reader.line_num}: {exc}") from None
    arr = np.asarray(rows, dtype=np.float64).reshape(-1, 4)
    return Recording(str(subject_id), sensor, arr[:, 0], arr[:, 1:])


def read_annotations_csv(path, columns: Optional[dict] = None) -> list:
    columns = columns or {}
    names = [columns.get(c, c) for c in ANNOTATION_COLUMNS]
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        missing = [n for n in names if n not in (reader.fieldnames or [])]
        if missing:
            raise DataError(f"{path}: missing columns {missing}")
        try:
            return [(float(r[names[0]]), float(r[names[1]]), r[names[2]]) for r in reader]
        except (TypeError, ValueError) as exc:
            raise DataError(f"{path}: line {reader.line_num}: {exc}") from None


def prepare_subject(csv_dir, subject: str, sensors=("ch",), gait_activities=DEFAULT_GAIT_ACTIVITIES,
                    excluded_activities=DEFAULT_EXCLUDED_ACTIVITIES, columns=None) -> WindowSet:
    """Resample, label and window every configured sensor of one subject."""
    csv_dir = Path(csv_dir)
    ann_path = csv_dir / f"{subject}_annotations.csv"
    if not ann_path.exists():
        raise FileNotFoundError(ann_path)
    events = label_intervals(read_annotations_csv(ann_path, columns), gait_activities, excluded_activities)
    sets = []
    for sensor in sensors:
        path = csv_dir / f"{subject}_{sensor}.csv"
        if not path.exists():
            raise FileNotFoundError(path)
        rec = resample_to_30hz(read_sensor_csv(path, subject, sensor, columns))
        sets.append(extract_windows(rec, events))
    return WindowSet.concat(sets)


# --- GWIN cache ----------------------------------------------------------------

_HEADER = struct.Struct("<4sHI")


def encode_cache(ws: WindowSet) -> bytes:
    """Little-endian container: header, then per window id, sensor, label, 180 float32."""
    parts = [_HEADER.pack(CACHE_MAGIC, CACHE_VERSION, len(ws))]
    sensor_code = {s: i for i, s in enumerate(SENSORS)}
    values = ws.data.astype("<f4")
    for i in range(len(ws)):
        sid = str(ws.subjects[i]).encode("utf-8")
        parts.append(struct.pack("<H", len(sid)))
        parts.append(sid)
        parts.append(struct.pack("<BB", sensor_code[str(ws.sensors[i])], int(ws.labels[i])))
        parts.append(values[i].tobytes())
    return b"".join(parts)


def decode_cache(buf: bytes) -> WindowSet:
    """Parse a ``GWIN`` container; windows are re-centred in float64 after the float32 read."""
    if len(buf) < _HEADER.size:
        raise DataError("window cache truncated in header")
    magic, version, count = _HEADER.unpack_from(buf, 0)
    if magic != CACHE_MAGIC:
        raise DataError(f"not a window cache (magic {magic!r})")
    if version != CACHE_VERSION:
        raise DataError(f"window cache version {version}, expected {CACHE_VERSION}")
    pos = _HEADER.size
    nbytes = WINDOW * N_AXES * 4
    data = np.empty((count, WINDOW, N_AXES))
    labels = np.empty(count, dtype=np.int8)
    subjects, sensors = [], []
    try:
        for i in range(count):
            (n,) = struct.unpack_from("<H", buf, pos)
            pos += 2
            subjects.append(buf[pos : pos + n].decode("utf-8"))
            pos += n
            code, label = struct.unpack_from("<BB", buf, pos)
            pos += 2
            if pos + nbytes > len(buf):
                raise DataError("window cache truncated")
            sensors.append(SENSORS[code])
            labels[i] = label
            data[i] = np.frombuffer(buf, dtype="<f4", count=WINDOW * N_AXES, offset=pos).reshape(WINDOW, N_AXES)
            pos += nbytes
    except struct.error:
        raise DataError("window cache truncated") from None
    if pos != len(buf):
        raise DataError(f"window cache has {len(buf) - pos} trailing bytes")
    data, _ = center(data)
    return WindowSet(data, labels, subjects, sensors)


def write_cache(path, ws: WindowSet) -> None:
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(encode_cache(ws))
    os.replace(tmp, path)


def read_cache(path) -> WindowSet:
    return decode_cache(Path(path).read_bytes())


# --- synthetic data ----------------------------------------------------------------


@dataclass(frozen=True)
class SensorProfile:
    gait_gain: float = 1.0
    noise_gain: float = 1.0
    arm_motion_prob: float = 0.0  # chance a non-gait window holds an oscillating arm movement
    arm_motion_gain: float = 0.0


SENSOR_PROFILES = {
    "ch": SensorProfile(),
    "ll": SensorProfile(gait_gain=1.3, noise_gain=1.1),
    "rl": SensorProfile(gait_gain=1.3, noise_gain=1.2),
    "lh": SensorProfile(gait_gain=0.9, noise_gain=1.8, arm_motion_prob=0.45, arm_motion_gain=1.0),
    "rh": SensorProfile(gait_gain=0.9, noise_gain=1.8, arm_motion_prob=0.45, arm_motion_gain=1.0),
}


@dataclass(frozen=True)
class SynthConfig:
    n_subjects: int = 16
    windows_per_class: int = 400
    gait_freq_range_hz: tuple = (0.8, 2.0)
    noise_std: float = 0.03
    seed: int = 12
    gait_amplitude: float = 0.25
    sensors: tuple = ("ch",)
    label_noise: float = 0.03  # fraction of windows per class carrying the other class's motion

    def validate(self):
        lo, hi = self.gait_freq_range_hz
        if not (0.5 < lo <= hi < 3.0):
            raise DataError(f"gait_freq_range_hz must lie within (0.5, 3.0), got {self.gait_freq_range_hz}")
        if self.n_subjects < 1 or self.windows_per_class < 1:
            raise DataError("n_subjects and windows_per_class must be positive")
        if self.noise_std < 0 or self.gait_amplitude <= 0:
            raise DataError("noise_std must be >= 0 and gait_amplitude > 0")
        if not 0.0 <= self.label_noise < 0.5:
            raise DataError(f"label_noise must lie in [0, 0.5), got {self.label_noise}")
        unknown = set(self.sensors) - set(SENSORS)
        if unknown:
            raise DataError(f"unknown sensors {sorted(unknown)}")


def synth_subject_ids(n: int) -> list:
    ids = list(PAPER_SUBJECTS[:n])
    extra = 100
    while len(ids) < n:
        ids.append(str(extra))
        extra += 1
    return ids


def _unit(rng):
    v = rng.standard_normal(N_AXES)
    return v / np.linalg.norm(v)


def _tilted(rng, axis, spread=0.3):
    v = spread * rng.standard_normal(N_AXES)
    v[axis] += 1.0
    return v / np.linalg.norm(v)


def synth_generate(config: SynthConfig = SynthConfig()) -> WindowSet:
    """Desk-scale stand-in for clinical recordings.

    Gait windows are a subject-specific cadence with a second harmonic and
    noise; non-gait windows are noise, slow postural sway and sporadic
    non-periodic transients. Amplitudes, cadence, noise and transient
    rates are drawn per subject, so a single magnitude cut-off transfers
    poorly between subjects while periodicity stays informative. A small
    ``label_noise`` fraction mimics windows at annotation boundaries.
    """
    config.validate()
    t = np.arange(WINDOW) / TARGET_RATE_HZ
    idx = np.arange(WINDOW)
    sets = []
    for si, subject in enumerate(synth_subject_ids(config.n_subjects)):
        srng = np.random.default_rng([config.seed, si])
        cadence = srng.uniform(*config.gait_freq_range_hz)
        amp = config.gait_amplitude * srng.uniform(0.75, 1.3)
        # sensor mounting: fundamental near vertical, harmonic near anterior-posterior
        axis1 = _tilted(srng, 2)
        axis2 = _tilted(srng, 0)
        h2 = srng.uniform(0.2, 0.7)
        noise = config.noise_std * srng.uniform(0.6, 1.4)
        transient_rate = srng.uniform(0.3, 3.0)
        transient_amp = amp * srng.uniform(1.0, 2.5)
        sway_amp = amp * srng.uniform(0.05, 0.25)
        for sensor in config.sensors:
            prof = SENSOR_PROFILES[sensor]
            rng = np.random.default_rng([config.seed, si, SENSORS.index(sensor) + 1])
            n = config.windows_per_class
            sig_noise = noise * prof.noise_gain
            # gait
            f = cadence * (1.0 + 0.05 * rng.standard_normal(n))
            a = amp * prof.gait_gain * np.clip(1.0 + 0.15 * rng.standard_normal(n), 0.3, None)
            ph1 = rng.uniform(0, 2 * np.pi, n)
            ph2 = rng.uniform(0, 2 * np.pi, n)
            base = np.sin(2 * np.pi * f[:, None] * t + ph1[:, None])
            harm = h2 * np.sin(4 * np.pi * f[:, None] * t + ph2[:, None])
            gait = a[:, None, None] * (base[:, :, None] * axis1 + harm[:, :, None] * axis2)
            gait += sig_noise * rng.standard_normal((n, WINDOW, N_AXES))
            # non-gait
            non = sig_noise * rng.standard_normal((n, WINDOW, N_AXES))
            sway_f = rng.uniform(0.1, 0.4, n)
            sway = np.sin(2 * np.pi * sway_f[:, None] * t + rng.uniform(0, 2 * np.pi, n)[:, None])
            non += sway_amp * sway[:, :, None] * axis1
            n_bumps = rng.poisson(transient_rate, n)
            for w in range(n):
                for _ in range(n_bumps[w]):
                    centre = rng.uniform(0, WINDOW)
                    width = rng.uniform(0.8, 2.5)
                    height = transient_amp * rng.uniform(0.5, 1.5)
                    non[w] += height * np.exp(-0.5 * ((idx - centre) / width) ** 2)[:, None] * _unit(rng)
                if prof.arm_motion_prob and rng.random() < prof.arm_motion_prob:
                    span = int(rng.integers(20, 45))
                    start = int(rng.integers(0, WINDOW - span + 1))
                    env = np.zeros(WINDOW)
                    env[start : start + span] = np.hanning(span)
                    fa = rng.uniform(1.0, 3.0)
                    osc = np.sin(2 * np.pi * fa * t + rng.uniform(0, 2 * np.pi))
                    non[w] += prof.arm_motion_gain * amp * rng.uniform(0.6, 1.4) * (env * osc)[:, None] * _unit(rng)
            # boundary windows: content of the other class under this label
            k = int(np.floor(config.label_noise * n + 0.5))
            if k:
                gi = rng.choice(n, k, replace=False)
                ni = rng.choice(n, k, replace=False)
                gait[gi], non[ni] = non[ni].copy(), gait[gi].copy()
            for cls, block in ((GAIT, gait), (NON_GAIT, non)):
                data, means = center(block)
                origin = np.stack([np.full(n, cls), np.arange(n)], axis=1)
                sets.append(WindowSet(data, np.full(n, cls), [subject] * n, [sensor] * n, origin, means))
    return WindowSet.concat(sets)
