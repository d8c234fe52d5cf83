"""Optimization loop, chronological split, Top-k evaluation and checkpoints."""

from __future__ import annotations

import dataclasses
import json
import logging
import math
import struct
import zlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .autodiff import Tensor, no_grad
from .encoders import Batch, fit_stats, make_batch
from .errors import (ChecksumError, ConfigError, FileFormatError, TrainingError,
                     TruncatedFileError, VariantMismatchError, VersionMismatchError)
from .fusion import forward
from .losses import LossConfig, alignment_loss, task_loss, total_loss
from .params import ModelConfig, ModelParams, init_params
from .sensors import Dataset

log = logging.getLogger(__name__)

CHECKPOINT_MAGIC = b"S2MC"
CHECKPOINT_VERSION = 1
EVAL_CHUNK = 512


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 30
    batch_size: int = 32
    learning_rate: float = 1e-3
    betas: tuple = (0.9, 0.999)
    eps: float = 1e-8
    weight_decay: float = 0.0  # decoupled, applied to weight matrices only
    seed: int = 0
    split_fraction: float = 0.7
    lr_schedule: str = "cosine"  # or "constant"
    lr_floor: float = 0.02  # final lr as a fraction of learning_rate under "cosine"
    loss: LossConfig = LossConfig()
    model: ModelConfig = ModelConfig()

    def validate(self) -> "TrainConfig":
        if not 0 < self.split_fraction < 1:
            raise ConfigError("split_fraction must lie in (0, 1)")
        if self.batch_size < 2:
            raise ConfigError("batch_size must be >= 2 (the alignment loss needs negatives)")
        if self.epochs < 1 or self.learning_rate <= 0:
            raise ConfigError("epochs must be >= 1 and learning_rate > 0")
        if self.lr_schedule not in ("cosine", "constant"):
            raise ConfigError(f"lr_schedule must be 'cosine' or 'constant', got {self.lr_schedule!r}")
        self.loss.validate()
        self.model.validate()
        return self

    @property
    def variant(self) -> str:
        return self.model.variant

    def replace(self, **changes) -> "TrainConfig":
        return dataclasses.replace(self, **changes)


class Adam:
    """Adam with optional decoupled weight decay on tensors of rank >= 2."""

    def __init__(self, tensors, lr=1e-3, betas=(0.9, 0.999), eps=1e-8, weight_decay=0.0):
        self.tensors = list(tensors)
        self.lr, self.eps = lr, eps
        self.weight_decay = weight_decay
        self.b1, self.b2 = betas
        self.t = 0
        self.m = [np.zeros_like(p.data) for p in self.tensors]
        self.v = [np.zeros_like(p.data) for p in self.tensors]

    def zero_grad(self) -> None:
        for p in self.tensors:
            p.grad = None

    def step(self) -> None:
        self.t += 1
        c1 = 1.0 - self.b1 ** self.t
        c2 = 1.0 - self.b2 ** self.t
        for p, m, v in zip(self.tensors, self.m, self.v):
            if p.grad is None:
                continue
            g = p.grad
            m *= self.b1
            m += (1.0 - self.b1) * g
            v *= self.b2
            v += (1.0 - self.b2) * g * g
            if self.weight_decay and p.data.ndim >= 2:
                p.data -= self.lr * self.weight_decay * p.data
            p.data -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


# ---------------------------------------------------------------- splitting


def split(ds: Dataset, fraction: float = 0.7):
    """Chronological split at floor(N * fraction); both sides must be non-empty."""
    if len(ds) == 0:
        raise ConfigError("cannot split an empty dataset")
    if not 0 < fraction < 1:
        raise ConfigError("split fraction must lie in (0, 1)")
    cut = int(math.floor(len(ds) * fraction))
    if cut < 1 or cut >= len(ds):
        raise ConfigError(f"split of {len(ds)} samples at {fraction} leaves an empty side")
    return ds.subset(0, cut), ds.subset(cut, len(ds))


# ---------------------------------------------------------------- metrics


def label_ranks(logits: np.ndarray, labels) -> np.ndarray:
    """Rank of each label among its logits (0 = best); ties favour the lower index."""
    logits = np.asarray(logits)
    labels = np.asarray(labels, dtype=np.int64)
    own = logits[np.arange(len(labels)), labels][:, None]
    idx = np.arange(logits.shape[1])[None, :]
    better = (logits > own) | ((logits == own) & (idx < labels[:, None]))
    return better.sum(axis=1)


def topk_accuracy(logits, labels, k: int) -> float:
    if len(labels) == 0:
        return float("nan")
    return float(np.mean(label_ranks(logits, labels) < k))


def degraded_mask(degradation: np.ndarray, nominal_noise: float = 1.0) -> np.ndarray:
    """Samples whose injected levels exceed nominal noise, or that are stale/occluded."""
    d = np.asarray(degradation)
    return ((d[..., 0] > nominal_noise + 1e-9) | (d[..., 1] > 0) | (d[..., 2] > 0)).any(axis=1)


@dataclass
class Metrics:
    top1: float
    top2: float
    top3: float
    n: int = 0
    clean_topk: tuple = (math.nan, math.nan, math.nan)
    degraded_topk: tuple = (math.nan, math.nan, math.nan)
    n_clean: int = 0
    n_degraded: int = 0
    weights_clean: dict = field(default_factory=dict)
    weights_degraded: dict = field(default_factory=dict)
    loss_curve: list = field(default_factory=list)

    def as_dict(self) -> dict:
        return dataclasses.asdict(self)


@dataclass
class Predictions:
    logits: np.ndarray
    weights: np.ndarray  # (N, A)
    similarity: np.ndarray  # (N, A, A)
    modalities: tuple


def predict(params: ModelParams, batch: Batch) -> Predictions:
    logits, weights, sims = [], [], []
    with no_grad():
        for s in range(0, len(batch), EVAL_CHUNK):
            out = forward(batch.take(slice(s, s + EVAL_CHUNK)), params)
            logits.append(out.logits.data)
            weights.append(out.weights.data)
            sims.append(out.similarity.data)
    return Predictions(np.concatenate(logits), np.concatenate(weights), np.concatenate(sims),
                       params.config.spec.modalities)


def evaluate(params: ModelParams, test, variant: str | None = None) -> Metrics:
    if variant is not None and variant != params.config.variant:
        raise VariantMismatchError(f"parameters are for {params.config.variant!r}, not {variant!r}")
    batch = test if isinstance(test, Batch) else make_batch(test, params.config.patch_size)
    pred = predict(params, batch)
    labels = batch.labels
    deg = degraded_mask(batch.degradation)

    def topk(mask):
        if not mask.any():
            return (math.nan, math.nan, math.nan)
        return tuple(topk_accuracy(pred.logits[mask], labels[mask], k) for k in (1, 2, 3))

    def mean_w(mask):
        if not mask.any():
            return {}
        return {m: float(pred.weights[mask, i].mean()) for i, m in enumerate(pred.modalities)}

    t1, t2, t3 = topk(np.ones(len(labels), dtype=bool))
    return Metrics(top1=t1, top2=t2, top3=t3, n=len(labels),
                   clean_topk=topk(~deg), degraded_topk=topk(deg),
                   n_clean=int((~deg).sum()), n_degraded=int(deg.sum()),
                   weights_clean=mean_w(~deg), weights_degraded=mean_w(deg))


# ---------------------------------------------------------------- training


def _batches(n: int, size: int, rng: np.random.Generator):
    order = rng.permutation(n)
    chunks = [order[i:i + size] for i in range(0, n, size)]
    if len(chunks) > 1 and len(chunks[-1]) < 2:
        tail = chunks.pop()
        chunks[-1] = np.concatenate([chunks[-1], tail])
    return chunks


def learning_rate(cfg: TrainConfig, epoch: int) -> float:
    if cfg.lr_schedule == "constant" or cfg.epochs == 1:
        return cfg.learning_rate
    frac = epoch / (cfg.epochs - 1)
    floor = cfg.lr_floor
    return cfg.learning_rate * (floor + (1.0 - floor) * 0.5 * (1.0 + math.cos(math.pi * frac)))


def fit(params: ModelParams, train_batch: Batch, cfg: TrainConfig, eval_batch: Batch | None = None):
    """Adam on the combined objective; returns the per-epoch log."""
    if len(train_batch) < 2:
        raise ConfigError("training needs at least 2 samples")
    opt = Adam(params.trainable(), cfg.learning_rate, cfg.betas, cfg.eps, cfg.weight_decay)
    history = []
    for epoch in range(cfg.epochs):
        rng = np.random.default_rng([cfg.seed, 101, epoch])
        opt.lr = learning_rate(cfg, epoch)
        total, seen = 0.0, 0
        for idx in _batches(len(train_batch), cfg.batch_size, rng):
            b = train_batch.take(idx)
            out = forward(b, params)
            loss = task_loss(out.logits, b.labels)
            if cfg.loss.beta > 0:
                align = alignment_loss([out.embeddings.normed[m] for m in out.embeddings.order], cfg.loss.theta)
                loss = total_loss(loss, align, cfg.loss)
            value = loss.item()
            if not math.isfinite(value):
                raise TrainingError(f"loss became {value} in epoch {epoch}", epoch=epoch)
            opt.zero_grad()
            loss.backward()
            opt.step()
            total += value * len(idx)
            seen += len(idx)
        row = {"epoch": epoch, "loss": total / seen}
        probe = eval_batch if eval_batch is not None else train_batch
        row["top1"] = topk_accuracy(predict(params, probe).logits, probe.labels, 1)
        history.append(row)
        log.debug("epoch %d loss %.5f top1 %.4f", epoch, row["loss"], row["top1"])
    return history


@dataclass
class TrainResult:
    params: ModelParams
    metrics: Metrics
    log: list


def prepare_model(train_batch: Batch, cfg: TrainConfig, Q: int | None = None) -> ModelParams:
    model_cfg = cfg.model if Q is None else dataclasses.replace(cfg.model, Q=Q)
    model_cfg = dataclasses.replace(model_cfg, frame_channels=train_batch.patches.shape[-1])
    params = init_params(model_cfg, seed=cfg.seed)
    params.stats = fit_stats(train_batch)
    return params


def train(ds: Dataset, cfg: TrainConfig) -> TrainResult:
    """Split chronologically, fit stats on the training side, train, evaluate on the rest."""
    cfg.validate()
    train_ds, test_ds = split(ds, cfg.split_fraction)
    p = cfg.model.patch_size
    train_batch, test_batch = make_batch(train_ds, p), make_batch(test_ds, p)
    Q = ds.manifest.get("channel", {}).get("Q")
    params = prepare_model(train_batch, cfg, Q)
    history = fit(params, train_batch, cfg, test_batch)
    metrics = evaluate(params, test_batch)
    metrics.loss_curve = [row["loss"] for row in history]
    return TrainResult(params, metrics, history)


# ---------------------------------------------------------------- checkpoints


def _config_dict(cfg: ModelConfig) -> dict:
    return json.loads(json.dumps(dataclasses.asdict(cfg)))


def encode_checkpoint(params: ModelParams) -> bytes:
    entries, chunks = [], []
    for kind, items in (("tensor", {k: v.data for k, v in params.tensors.items()}), ("stat", params.stats)):
        for name in sorted(items):
            arr = np.ascontiguousarray(items[name], dtype="<f8")
            entries.append({"kind": kind, "name": name, "shape": list(arr.shape)})
            chunks.append(arr.tobytes())
    header = json.dumps({"variant": params.config.variant, "config": _config_dict(params.config),
                         "entries": entries}, sort_keys=True).encode("utf-8")
    payload = b"".join(chunks)
    crc = zlib.crc32(payload, zlib.crc32(header))
    return b"".join([CHECKPOINT_MAGIC, struct.pack("<II", CHECKPOINT_VERSION, len(header)), header,
                     struct.pack("<QI", len(payload), crc), payload])


def decode_checkpoint(raw: bytes, variant: str | None = None) -> ModelParams:
    if len(raw) < 12:
        raise TruncatedFileError("checkpoint header truncated")
    if raw[:4] != CHECKPOINT_MAGIC:
        raise FileFormatError(f"bad checkpoint magic {raw[:4]!r}")
    version, hlen = struct.unpack_from("<II", raw, 4)
    if version != CHECKPOINT_VERSION:
        raise VersionMismatchError(f"checkpoint version {version}, expected {CHECKPOINT_VERSION}")
    if len(raw) < 12 + hlen + 12:
        raise TruncatedFileError("checkpoint header truncated")
    header = raw[12:12 + hlen]
    plen, crc = struct.unpack_from("<QI", raw, 12 + hlen)
    payload = raw[12 + hlen + 12:]
    if len(payload) != plen:
        raise TruncatedFileError(f"expected {plen} payload bytes, found {len(payload)}")
    if zlib.crc32(payload, zlib.crc32(header)) != crc:
        raise ChecksumError("checkpoint CRC32 mismatch")
    meta = json.loads(header.decode("utf-8"))
    if variant is not None and meta["variant"] != variant:
        raise VariantMismatchError(f"checkpoint holds variant {meta['variant']!r}, expected {variant!r}")
    cfgd = meta["config"]
    cfgd["conv_filters"] = tuple(cfgd["conv_filters"])
    params = ModelParams(config=ModelConfig(**cfgd).validate())
    off = 0
    for e in meta["entries"]:
        n = int(np.prod(e["shape"], dtype=np.int64)) * 8
        arr = np.frombuffer(payload, dtype="<f8", count=n // 8, offset=off).reshape(e["shape"]).astype(np.float64)
        off += n
        if e["kind"] == "tensor":
            params.tensors[e["name"]] = Tensor(arr, requires_grad=True)
        else:
            params.stats[e["name"]] = arr
    return params


def save_checkpoint(params: ModelParams, path) -> Path:
    path = Path(path)
    path.write_bytes(encode_checkpoint(params))
    return path


def load_checkpoint(path, variant: str | None = None) -> ModelParams:
    return decode_checkpoint(Path(path).read_bytes(), variant)
