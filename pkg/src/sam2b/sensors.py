"""Sensor rendering, controllable degradation and labelled dataset assembly.

Modalities are always handled in the fixed order ``MODALITIES``:
image, GPS, height/distance, posture.  Each carries a 3-entry quality cue
``(noise scale estimate, staleness in steps, validity flag)`` and a 3-entry
degradation truth ``(noise multiplier, staleness, occlusion fraction)``.

Per-sample random streams are derived as ``default_rng([seed, purpose, i])``
so any sample can be regenerated in isolation.
"""

from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass, field

import numpy as np

from .channel import (ChannelConfig, TrajectoryConfig, UAVState, make_codebook,
                      oracle_beam, sample_trajectory, synth_channel)
from .errors import ConfigError

MODALITIES = ("img", "gps", "hd", "pos")
CUE_ARITY = 3

# nominal (multiplier = 1) sensor noise
GPS_STD_M = 1.0
HD_STD_M = 0.5
POSTURE_STD_RAD = 0.02
PIXEL_STD = 0.02
BBOX_STD = 0.004  # normalized frame units
CUE_REL_NOISE = 0.2
OCCLUSION_CUE_GAIN = 10.0  # occluded fraction expressed in noise-multiplier units

PURPOSE_TRAJECTORY = 0
PURPOSE_CHANNEL = 1
PURPOSE_SCENE = 2
PURPOSE_DEGRADE = 3


@dataclass(frozen=True)
class CameraConfig:
    width: int = 32
    height: int = 32
    channels: int = 3
    hfov_deg: float = 120.0
    tilt_deg: float = 20.0  # optical axis pitched up from +x
    blob_radius_m: float = 3.0
    min_blob_sigma_px: float = 0.5
    blob_color: tuple = (1.0, 0.95, 0.6)
    n_clutter: int = 6
    n_distractors: int = 0

    @property
    def focal_px(self) -> float:
        return (self.width / 2.0) / math.tan(math.radians(self.hfov_deg) / 2.0)


@dataclass
class Sample:
    frame: np.ndarray  # (H, W, C) float32 in [0, 1]
    bbox: np.ndarray | None  # (x_c, y_c, w, h) normalized
    gps: np.ndarray  # (x, y) local planar meters
    hd: np.ndarray  # (height, horizontal distance) meters
    posture: np.ndarray  # (roll, pitch, yaw) radians
    quality: np.ndarray  # (4, 3) cues, rows in MODALITIES order
    degradation_truth: np.ndarray  # (4, 3) injected levels, evaluation only
    label: int
    time: float

    def copy(self) -> "Sample":
        return Sample(
            frame=self.frame.copy(),
            bbox=None if self.bbox is None else self.bbox.copy(),
            gps=self.gps.copy(), hd=self.hd.copy(), posture=self.posture.copy(),
            quality=self.quality.copy(), degradation_truth=self.degradation_truth.copy(),
            label=self.label, time=self.time,
        )


@dataclass(frozen=True)
class ModalityDegradation:
    noise: float = 0.0  # std multiplier on the nominal sensor noise
    dropout: float = 0.0  # reading missing: last value held, validity 0
    occlusion: float = 0.0  # image only: occluded area fraction
    stale: float = 0.0  # reading delayed: last value held, validity 1

    def validate(self) -> "ModalityDegradation":
        if self.noise < 0 or not (0 <= self.occlusion <= 1):
            raise ConfigError(f"bad degradation levels {self}")
        if not (0 <= self.dropout <= 1 and 0 <= self.stale <= 1):
            raise ConfigError(f"probabilities must lie in [0, 1]: {self}")
        return self


@dataclass(frozen=True)
class DegradationProfile:
    img: ModalityDegradation = ModalityDegradation()
    gps: ModalityDegradation = ModalityDegradation()
    hd: ModalityDegradation = ModalityDegradation()
    pos: ModalityDegradation = ModalityDegradation()

    def __getitem__(self, name: str) -> ModalityDegradation:
        return getattr(self, name)

    @classmethod
    def zero(cls) -> "DegradationProfile":
        return cls()

    @classmethod
    def nominal(cls) -> "DegradationProfile":
        return cls.uniform(noise=1.0)

    @classmethod
    def uniform(cls, **levels) -> "DegradationProfile":
        m = ModalityDegradation(**levels)
        return cls(img=m, gps=m, hd=m, pos=m)

    def replace(self, **per_modality) -> "DegradationProfile":
        return dataclasses.replace(self, **per_modality)

    def validate(self) -> "DegradationProfile":
        for name in MODALITIES:
            self[name].validate()
        return self

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "DegradationProfile":
        return cls(**{k: ModalityDegradation(**v) for k, v in d.items()})


@dataclass
class DegradationSchedule:
    """Piecewise-constant profiles over the dataset index.

    ``segments`` are ``(start_fraction, profile)`` pairs.  An optional
    ``cycle`` of profiles in blocks of ``cycle_block`` steps overrides the
    segments for indices below ``cycle_until * N``.
    """

    segments: list = field(default_factory=lambda: [(0.0, DegradationProfile.zero())])
    cycle: list = field(default_factory=list)
    cycle_block: int = 25
    cycle_until: float = 0.0

    @classmethod
    def constant(cls, profile: DegradationProfile) -> "DegradationSchedule":
        return cls(segments=[(0.0, profile)])

    def profile_for(self, i: int, n: int) -> DegradationProfile:
        if self.cycle and i < math.floor(self.cycle_until * n):
            return self.cycle[(i // self.cycle_block) % len(self.cycle)]
        chosen = self.segments[0][1]
        for start, prof in sorted(self.segments, key=lambda s: s[0]):
            if i >= math.floor(start * n):
                chosen = prof
        return chosen

    def validate(self) -> "DegradationSchedule":
        if not self.segments:
            raise ConfigError("degradation schedule needs at least one segment")
        if self.cycle_block < 1:
            raise ConfigError("cycle_block must be >= 1")
        for _, p in self.segments:
            p.validate()
        for p in self.cycle:
            p.validate()
        return self

    def to_dict(self) -> dict:
        return {
            "segments": [[s, p.to_dict()] for s, p in self.segments],
            "cycle": [p.to_dict() for p in self.cycle],
            "cycle_block": self.cycle_block,
            "cycle_until": self.cycle_until,
        }


# ---------------------------------------------------------------- rendering


def _camera_axes(tilt: float):
    forward = np.array([math.cos(tilt), 0.0, math.sin(tilt)])
    up = np.array([-math.sin(tilt), 0.0, math.cos(tilt)])
    right = np.cross(forward, up)
    return forward, right, up


def project(position, camera: CameraConfig):
    """Pinhole projection -> (col, row, depth) in pixels; None if behind the camera."""
    forward, right, up = _camera_axes(math.radians(camera.tilt_deg))
    p = np.asarray(position, dtype=np.float64)
    depth = float(p @ forward)
    if depth <= 0:
        return None
    f = camera.focal_px
    col = camera.width / 2.0 + f * float(p @ right) / depth
    row = camera.height / 2.0 - f * float(p @ up) / depth
    return col, row, depth


def _background(camera: CameraConfig, clutter_seed) -> np.ndarray:
    rng = np.random.default_rng(clutter_seed)
    h, w, c = camera.height, camera.width, camera.channels
    rows = np.linspace(0.0, 1.0, h)[:, None, None]
    sky = np.array([0.45, 0.6, 0.8][:c]) if c >= 3 else np.full(c, 0.6)
    img = np.broadcast_to(sky * (0.8 + 0.2 * (1 - rows)), (h, w, c)).copy()
    for _ in range(camera.n_clutter):
        bw = rng.integers(2, max(3, w // 3))
        bh = rng.integers(2, max(3, h // 2))
        x0 = rng.integers(0, w - bw + 1)
        y0 = h - bh - rng.integers(0, max(1, h // 4))
        img[y0:y0 + bh, x0:x0 + bw, :] = rng.uniform(0.1, 0.6, size=c)
    yy, xx = np.mgrid[0:h, 0:w] + 0.5
    for _ in range(camera.n_distractors):
        cx, cy = rng.uniform(0, w), rng.uniform(0, h)
        s = rng.uniform(0.6, 1.5)
        blob = np.exp(-((xx - cx) ** 2 + (yy - cy) ** 2) / (2 * s * s))
        img += blob[:, :, None] * np.asarray(camera.blob_color[:c]) * rng.uniform(0.5, 1.0)
    return img


def render_frame(state: UAVState, camera: CameraConfig, clutter_seed=0):
    """Render the BS camera view; returns ``(frame, bbox)`` with bbox None when undetected."""
    img = _background(camera, clutter_seed)
    proj = project(state.position, camera)
    bbox = None
    if proj is not None:
        col, row, depth = proj
        sigma = max(camera.focal_px * camera.blob_radius_m / depth, camera.min_blob_sigma_px)
        h, w = camera.height, camera.width
        yy, xx = np.mgrid[0:h, 0:w] + 0.5
        blob = np.exp(-((xx - col) ** 2 + (yy - row) ** 2) / (2 * sigma * sigma))
        img += blob[:, :, None] * np.asarray(camera.blob_color[:camera.channels])
        if 0.0 <= col <= w and 0.0 <= row <= h:
            x0, x1 = max(0.0, col - 3 * sigma), min(float(w), col + 3 * sigma)
            y0, y1 = max(0.0, row - 3 * sigma), min(float(h), row + 3 * sigma)
            bbox = np.array([(x0 + x1) / (2 * w), (y0 + y1) / (2 * h), (x1 - x0) / w, (y1 - y0) / h])
    return np.clip(img, 0.0, 1.0).astype(np.float32), bbox


def clean_sample(state: UAVState, label: int, camera: CameraConfig, clutter_seed=0) -> Sample:
    frame, bbox = render_frame(state, camera, clutter_seed)
    x, y, z = (float(v) for v in state.position)
    quality = np.zeros((len(MODALITIES), CUE_ARITY))
    quality[:, 2] = 1.0
    if bbox is None:
        quality[0, 2] = 0.0
    return Sample(
        frame=frame, bbox=bbox,
        gps=np.array([x, y]), hd=np.array([z, math.sqrt(x * x + y * y)]),
        posture=np.asarray(state.posture, dtype=np.float64).copy(),
        quality=quality, degradation_truth=np.zeros((len(MODALITIES), CUE_ARITY)),
        label=int(label), time=float(state.time),
    )


# ---------------------------------------------------------------- degradation


@dataclass
class DegradeMemory:
    """Last delivered reading and staleness counter per modality."""

    last: dict = field(default_factory=dict)
    staleness: dict = field(default_factory=lambda: {m: 0 for m in MODALITIES})


def _occlude(frame: np.ndarray, level: float, rng: np.random.Generator) -> None:
    h, w, _ = frame.shape
    aspect = rng.uniform(0.5, 2.0)
    area = level * h * w
    rh = int(round(min(h, max(1.0, math.sqrt(area / aspect)))))
    rw = int(round(min(w, max(1.0, area / max(rh, 1)))))
    y0 = rng.integers(0, h - rh + 1)
    x0 = rng.integers(0, w - rw + 1)
    frame[y0:y0 + rh, x0:x0 + rw, :] = 0.3


def degrade(sample: Sample, profile: DegradationProfile, rng: np.random.Generator,
            memory: DegradeMemory | None = None) -> Sample:
    """Return a degraded copy of ``sample``; the label is never touched.

    The number of random draws is independent of the profile so that two
    schedules differing only in later segments stay paired sample-for-sample.
    """
    memory = memory if memory is not None else DegradeMemory()
    out = sample.copy()
    h, w, c = out.frame.shape

    # fixed draw layout
    z_img = rng.standard_normal((h, w, c))
    z_box = rng.standard_normal(2)
    z_vec = {"gps": rng.standard_normal(2), "hd": rng.standard_normal(2), "pos": rng.standard_normal(3)}
    u_drop = rng.random(len(MODALITIES))
    u_stale = rng.random(len(MODALITIES))
    z_cue = rng.standard_normal(len(MODALITIES))
    occ_rng = np.random.default_rng(rng.integers(0, 2**63))

    std = {"gps": GPS_STD_M, "hd": HD_STD_M, "pos": POSTURE_STD_RAD}
    attr = {"gps": "gps", "hd": "hd", "pos": "posture"}
    for k, name in enumerate(MODALITIES):
        lv = profile[name]
        if name == "img":
            frame = out.frame.astype(np.float64)
            if lv.noise > 0:
                frame = frame + PIXEL_STD * lv.noise * z_img
            if lv.occlusion > 0:
                _occlude(frame, lv.occlusion, occ_rng)
            out.frame = np.clip(frame, 0.0, 1.0).astype(np.float32)
            if out.bbox is not None and lv.noise > 0:
                b = out.bbox.copy()
                b[:2] = b[:2] + BBOX_STD * lv.noise * z_box
                b[0] = np.clip(b[0], b[2] / 2, 1 - b[2] / 2)
                b[1] = np.clip(b[1], b[3] / 2, 1 - b[3] / 2)
                out.bbox = b
            value = (out.frame, out.bbox)
        else:
            v = getattr(out, attr[name]) + std[name] * lv.noise * z_vec[name]
            setattr(out, attr[name], v)
            value = v

        dropped = u_drop[k] < lv.dropout
        delayed = u_stale[k] < lv.stale
        valid = 1.0
        if dropped or delayed:
            memory.staleness[name] += 1
            held = memory.last.get(name)
            if held is not None:
                if name == "img":
                    out.frame, out.bbox = held[0].copy(), None if held[1] is None else held[1].copy()
                else:
                    setattr(out, attr[name], held.copy())
            if dropped:
                valid = 0.0
        else:
            memory.staleness[name] = 0
            memory.last[name] = (value[0].copy(), None if value[1] is None else value[1].copy()) \
                if name == "img" else value.copy()
        if name == "img" and out.bbox is None:
            valid = 0.0

        level = lv.noise + (OCCLUSION_CUE_GAIN * lv.occlusion if name == "img" else 0.0)
        out.quality[k] = (max(0.0, level * (1.0 + CUE_REL_NOISE * z_cue[k])),
                          float(memory.staleness[name]), valid)
        out.degradation_truth[k] = (lv.noise, float(memory.staleness[name]),
                                    lv.occlusion if name == "img" else 0.0)
    return out


# ---------------------------------------------------------------- datasets


SCHEMA_VERSION = 1


def _jsonable(obj):
    return json.loads(json.dumps(obj, sort_keys=True))


def record_dtype(frame_shape) -> np.dtype:
    h, w, c = frame_shape
    return np.dtype([
        ("frame", "<f4", (h * w * c,)),
        ("has_bbox", "u1"),
        ("bbox", "<f8", (4,)),
        ("gps", "<f8", (2,)),
        ("hd", "<f8", (2,)),
        ("posture", "<f8", (3,)),
        ("cues", "<f8", (len(MODALITIES) * CUE_ARITY,)),
        ("degradation", "<f8", (len(MODALITIES) * CUE_ARITY,)),
        ("label", "<u2"),
        ("time", "<f8"),
    ], align=False)


class Dataset:
    """Ordered samples backed by one packed record array plus a manifest."""

    def __init__(self, records: np.ndarray, manifest: dict, frame_shape):
        self.records = records
        self.manifest = manifest
        self.frame_shape = tuple(frame_shape)

    @classmethod
    def from_samples(cls, samples, manifest: dict) -> "Dataset":
        if not samples:
            raise ConfigError("dataset needs at least one sample")
        shape = samples[0].frame.shape
        rec = np.zeros(len(samples), dtype=record_dtype(shape))
        for i, s in enumerate(samples):
            r = rec[i]
            r["frame"] = s.frame.reshape(-1)
            r["has_bbox"] = s.bbox is not None
            r["bbox"] = s.bbox if s.bbox is not None else 0.0
            r["gps"], r["hd"], r["posture"] = s.gps, s.hd, s.posture
            r["cues"] = s.quality.reshape(-1)
            r["degradation"] = s.degradation_truth.reshape(-1)
            r["label"], r["time"] = s.label, s.time
        return cls(rec, _jsonable(manifest), shape)

    def __len__(self) -> int:
        return len(self.records)

    def __getitem__(self, i: int) -> Sample:
        r = self.records[i]
        a = len(MODALITIES)
        return Sample(
            frame=r["frame"].reshape(self.frame_shape).copy(),
            bbox=r["bbox"].copy() if r["has_bbox"] else None,
            gps=r["gps"].copy(), hd=r["hd"].copy(), posture=r["posture"].copy(),
            quality=r["cues"].reshape(a, CUE_ARITY).copy(),
            degradation_truth=r["degradation"].reshape(a, CUE_ARITY).copy(),
            label=int(r["label"]), time=float(r["time"]),
        )

    def __iter__(self):
        return (self[i] for i in range(len(self)))

    def __eq__(self, other) -> bool:
        if not isinstance(other, Dataset):
            return NotImplemented
        return (self.frame_shape == other.frame_shape and self.manifest == other.manifest
                and self.records.tobytes() == other.records.tobytes())

    def subset(self, start: int, stop: int) -> "Dataset":
        return Dataset(self.records[start:stop].copy(), self.manifest, self.frame_shape)

    @property
    def labels(self) -> np.ndarray:
        return self.records["label"].astype(np.int64)

    @property
    def split_index(self) -> int:
        return int(self.manifest.get("split_index", math.floor(0.7 * len(self))))


def build_dataset(tcfg: TrajectoryConfig, ccfg: ChannelConfig, schedule: DegradationSchedule,
                  seed: int, camera: CameraConfig = CameraConfig(), split_fraction: float = 0.7) -> Dataset:
    """Trajectory -> channel -> oracle label -> rendered sensors -> degradation."""
    tcfg.validate()
    ccfg.validate()
    schedule.validate()
    if not 0 < split_fraction < 1:
        raise ConfigError("split_fraction must lie in (0, 1)")
    states = sample_trajectory(tcfg, np.random.default_rng([seed, PURPOSE_TRAJECTORY]))
    if not states:
        raise ConfigError("trajectory produced no states")
    cb = make_codebook(ccfg.M, ccfg.Q, ccfg.antenna_spacing)
    n = len(states)
    memory = DegradeMemory()
    samples = []
    for i, st in enumerate(states):
        ch = synth_channel(st, ccfg, np.random.default_rng([seed, PURPOSE_CHANNEL, i]))
        label = oracle_beam(ch, cb, ccfg.P, ccfg.sigma2)
        s = clean_sample(st, label, camera, clutter_seed=[seed, PURPOSE_SCENE])
        s = degrade(s, schedule.profile_for(i, n), np.random.default_rng([seed, PURPOSE_DEGRADE, i]), memory)
        samples.append(s)
    labels = np.array([s.label for s in samples])
    manifest = {
        "schema_version": SCHEMA_VERSION,
        "seed": int(seed),
        "count": n,
        "split_fraction": split_fraction,
        "split_index": int(math.floor(n * split_fraction)),
        "channel": dataclasses.asdict(ccfg),
        "trajectory": dataclasses.asdict(tcfg),
        "camera": dataclasses.asdict(camera),
        "schedule": schedule.to_dict(),
        "label_histogram": np.bincount(labels, minlength=ccfg.Q).tolist(),
    }
    return Dataset.from_samples(samples, manifest)
