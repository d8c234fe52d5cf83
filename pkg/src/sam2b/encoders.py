"""Modality encoders mapping raw sensor fields into the shared embedding space."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ArityError, DimensionError
from .params import ModelParams
from .sensors import MODALITIES, Dataset, Sample

VECTOR_FIELDS = {"gps": 2, "hd": 2, "pos": 3}
MIN_ROI_PX = 1.0


def roi_crop(frame: np.ndarray, bbox, out=(16, 16)):
    """Bilinear RoIAlign with one sample per output cell.

    ``bbox`` is normalized ``(x_c, y_c, w, h)``.  Returns ``(patch, meta)``
    where ``meta["clamped"]`` reports boxes widened to the 1-pixel minimum.
    """
    frame = np.asarray(frame, dtype=np.float64)
    h, w = frame.shape[:2]
    out_w, out_h = out
    xc, yc, bw, bh = (float(v) for v in bbox)
    bw_px, bh_px = bw * w, bh * h
    clamped = bw_px < MIN_ROI_PX or bh_px < MIN_ROI_PX
    bw_px, bh_px = max(bw_px, MIN_ROI_PX), max(bh_px, MIN_ROI_PX)
    x0 = xc * w - bw_px / 2.0
    y0 = yc * h - bh_px / 2.0
    # sample points in continuous pixel coordinates; pixel i has its centre at i + 0.5
    xs = x0 + (np.arange(out_w) + 0.5) * bw_px / out_w - 0.5
    ys = y0 + (np.arange(out_h) + 0.5) * bh_px / out_h - 0.5
    xs = np.clip(xs, 0.0, w - 1.0)
    ys = np.clip(ys, 0.0, h - 1.0)
    xi0 = np.floor(xs).astype(int)
    yi0 = np.floor(ys).astype(int)
    xi1 = np.minimum(xi0 + 1, w - 1)
    yi1 = np.minimum(yi0 + 1, h - 1)
    fx = (xs - xi0)[None, :, None]
    fy = (ys - yi0)[:, None, None]
    top = frame[yi0][:, xi0] * (1 - fx) + frame[yi0][:, xi1] * fx
    bot = frame[yi1][:, xi0] * (1 - fx) + frame[yi1][:, xi1] * fx
    patch = top * (1 - fy) + bot * fy
    return np.clip(patch, 0.0, 1.0), {"clamped": clamped}


@dataclass
class Batch:
    """Column-wise model inputs for a set of samples (raw, unnormalized)."""

    patches: np.ndarray  # (B, P, P, C) ROI crops, zeros where no bbox
    frame_means: np.ndarray  # (B, C) global average pool of the full frame
    bbox: np.ndarray  # (B, 4)
    has_bbox: np.ndarray  # (B,) bool
    gps: np.ndarray
    hd: np.ndarray
    pos: np.ndarray
    cues: np.ndarray  # (B, 4, 3)
    degradation: np.ndarray  # (B, 4, 3)
    labels: np.ndarray
    times: np.ndarray

    def __len__(self) -> int:
        return len(self.labels)

    def take(self, idx) -> "Batch":
        return Batch(**{k: v[idx] for k, v in self.__dict__.items()})

    def field(self, name: str) -> np.ndarray:
        return {"gps": self.gps, "hd": self.hd, "pos": self.pos}[name]


def make_batch(samples, patch_size: int = 16) -> Batch:
    if isinstance(samples, Dataset):
        return _batch_from_records(samples, patch_size)
    samples = list(samples)
    frames = np.stack([s.frame for s in samples]).astype(np.float64)
    has = np.array([s.bbox is not None for s in samples])
    bbox = np.array([s.bbox if s.bbox is not None else np.zeros(4) for s in samples], dtype=np.float64)
    return _assemble(frames, has, bbox,
                     np.array([s.gps for s in samples]), np.array([s.hd for s in samples]),
                     np.array([s.posture for s in samples]), np.array([s.quality for s in samples]),
                     np.array([s.degradation_truth for s in samples]),
                     np.array([s.label for s in samples]), np.array([s.time for s in samples]), patch_size)


def _batch_from_records(ds: Dataset, patch_size: int) -> Batch:
    r = ds.records
    n, a = len(ds), len(MODALITIES)
    frames = r["frame"].reshape((n,) + ds.frame_shape).astype(np.float64)
    return _assemble(frames, r["has_bbox"].astype(bool), r["bbox"].astype(np.float64),
                     r["gps"].copy(), r["hd"].copy(), r["posture"].copy(),
                     r["cues"].reshape(n, a, -1).copy(), r["degradation"].reshape(n, a, -1).copy(),
                     r["label"].astype(np.int64), r["time"].copy(), patch_size)


def _assemble(frames, has, bbox, gps, hd, pos, cues, degr, labels, times, patch_size) -> Batch:
    n, c = frames.shape[0], frames.shape[-1]
    patches = np.zeros((n, patch_size, patch_size, c))
    for i in np.flatnonzero(has):
        patches[i] = roi_crop(frames[i], bbox[i], (patch_size, patch_size))[0]
    return Batch(patches=patches, frame_means=frames.mean(axis=(1, 2)), bbox=bbox, has_bbox=has,
                 gps=np.asarray(gps, dtype=np.float64), hd=np.asarray(hd, dtype=np.float64),
                 pos=np.asarray(pos, dtype=np.float64), cues=np.asarray(cues, dtype=np.float64),
                 degradation=np.asarray(degr, dtype=np.float64),
                 labels=np.asarray(labels, dtype=np.int64), times=np.asarray(times, dtype=np.float64))


def _mean_std(x: np.ndarray):
    mu = x.mean(axis=0)
    sd = x.std(axis=0)
    return mu, np.where(sd > 1e-12, sd, 1.0)


def fit_stats(train: Batch) -> dict:
    """Z-score statistics from the training split only."""
    stats = {}
    for name in VECTOR_FIELDS:
        stats[f"{name}.mean"], stats[f"{name}.std"] = _mean_std(train.field(name))
    boxed = train.has_bbox
    if boxed.any():
        stats["bbox.mean"], stats["bbox.std"] = _mean_std(train.bbox[boxed])
        px = train.patches[boxed].reshape(-1, train.patches.shape[-1])
        stats["pixel.mean"], stats["pixel.std"] = _mean_std(px)
    else:
        stats["bbox.mean"], stats["bbox.std"] = np.zeros(4), np.ones(4)
        c = train.patches.shape[-1]
        stats["pixel.mean"], stats["pixel.std"] = np.zeros(c), np.ones(c)
    stats["gap.mean"], stats["gap.std"] = _mean_std(train.frame_means)
    return stats


def cue_features(cues: np.ndarray) -> np.ndarray:
    """Compress cue ranges: (log1p noise scale, log1p staleness, validity)."""
    out = np.array(cues, dtype=np.float64, copy=True)
    out[..., 0] = np.log1p(np.maximum(out[..., 0], 0.0))
    out[..., 1] = np.log1p(np.maximum(out[..., 1], 0.0))
    return out


def _zscore(x: np.ndarray, params: ModelParams, name: str) -> np.ndarray:
    return (x - params.stat(f"{name}.mean")) / params.stat(f"{name}.std")


def mlp2(x: Tensor, params: ModelParams, name1: str, name2: str) -> Tensor:
    """Linear -> relu -> linear; works on any leading shape."""
    hdn = ad.relu(ad.add_bias(x @ params[f"{name1}.w"], params[f"{name1}.b"]))
    return ad.add_bias(hdn @ params[f"{name2}.w"], params[f"{name2}.b"])


def _conv(x: Tensor, params: ModelParams, name: str) -> Tensor:
    cols = ad.im2col(x, k=3, stride=2, pad=1)
    return ad.relu(ad.add_bias(cols @ params[f"{name}.w"], params[f"{name}.b"]))


def encode_roi(patches: np.ndarray, bbox: np.ndarray, params: ModelParams) -> Tensor:
    cfg = params.config
    p = cfg.patch_size
    if patches.shape[1:3] != (p, p):
        raise DimensionError(f"ROI patch must be {p}x{p}, got {patches.shape[1:3]}")
    x = Tensor(_zscore(patches, params, "pixel"))
    h = _conv(_conv(x, params, "img.conv1"), params, "img.conv2")
    flat = ad.reshape(h, (h.shape[0], -1))
    geo = Tensor(_zscore(bbox, params, "bbox"))
    return mlp2(ad.concat([flat, geo], axis=1), params, "img.fc1", "img.fc2")


def encode_pooled(frame_means: np.ndarray, params: ModelParams) -> Tensor:
    if frame_means.shape[-1] != params.config.frame_channels:
        raise DimensionError(f"expected {params.config.frame_channels} channels, got {frame_means.shape[-1]}")
    return mlp2(Tensor(_zscore(frame_means, params, "gap")), params, "img.gap1", "img.gap2")


def encode_image(batch: Batch, params: ModelParams) -> Tensor:
    """ROI conv path where a bbox exists, full-frame average pooling otherwise."""
    use = batch.has_bbox & params.config.spec.use_bbox
    if not use.any():
        return encode_pooled(batch.frame_means, params)
    roi = encode_roi(batch.patches, batch.bbox, params)
    if use.all():
        return roi
    return ad.where(use[:, None], roi, encode_pooled(batch.frame_means, params))


def encode_vector(field: str, x, params: ModelParams) -> Tensor:
    if field not in VECTOR_FIELDS:
        raise ValueError(f"unknown vector field {field!r}")
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    if x.shape[-1] != VECTOR_FIELDS[field]:
        raise ArityError(f"{field} expects arity {VECTOR_FIELDS[field]}, got {x.shape[-1]}")
    return mlp2(Tensor(_zscore(x, params, field)), params, f"{field}.fc1", f"{field}.fc2")


@dataclass
class EmbeddingSet:
    order: tuple  # active modalities, canonical order
    raw: dict  # name -> Tensor (B, E)
    normed: dict  # name -> Tensor (B, E), unit rows

    def stacked(self) -> Tensor:
        return ad.stack([self.normed[m] for m in self.order], axis=1)


def embed(batch: Batch, params: ModelParams, order=None) -> EmbeddingSet:
    active = params.config.spec.modalities
    if order is not None and tuple(order) != active:
        raise ValueError(f"modality order is fixed to {active}, got {tuple(order)}")
    raw = {}
    for m in active:
        raw[m] = encode_image(batch, params) if m == "img" else encode_vector(m, batch.field(m), params)
    normed = {m: ad.l2_normalize_rows(raw[m], eps=1e-12) for m in active}
    return EmbeddingSet(order=active, raw=raw, normed=normed)


def embed_sample(sample: Sample, params: ModelParams, order=None) -> EmbeddingSet:
    return embed(make_batch([sample], params.config.patch_size), params, order)
