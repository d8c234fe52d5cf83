"""Fixtures and oracles shared by the unit tests and the acceptance suite."""

from __future__ import annotations

import math

import numpy as np

from sam2b import autodiff as ad
from sam2b.autodiff import Tensor
from sam2b.channel import UAVState
from sam2b.encoders import Batch, fit_stats, make_batch
from sam2b.params import ModelConfig, init_params
from sam2b.sensors import MODALITIES, CameraConfig, clean_sample


def _away_from_zero(rng, shape, margin=0.05):
    z = rng.standard_normal(shape)
    return np.sign(z) * (margin + np.abs(z))


def _proj(out: Tensor, rng) -> Tensor:
    """Scalar <out, R> for a fixed random R, so every output coordinate matters."""
    r = Tensor(rng.standard_normal(out.shape))
    return ad.sum(ad.mul(out, r))


def _case_unary(op, shape=(3, 4), init=None):
    def build(rng):
        x = Tensor(init(rng, shape) if init else rng.standard_normal(shape))
        r = rng.standard_normal(op(x).shape)
        return (lambda t: ad.sum(ad.mul(op(t), Tensor(r)))), [x]
    return build


def _case_binary(op, sa, sb):
    def build(rng):
        a, b = Tensor(rng.standard_normal(sa)), Tensor(rng.standard_normal(sb))
        r = rng.standard_normal(op(a, b).shape)
        return (lambda u, v: ad.sum(ad.mul(op(u, v), Tensor(r)))), [a, b]
    return build


def _case_ce(rng):
    logits = Tensor(rng.standard_normal((5, 6)) * 2.0)
    labels = rng.integers(0, 6, size=5)
    return (lambda t: ad.log_softmax_cross_entropy(t, labels)), [logits]


def _case_where(rng):
    mask = rng.random((4, 3)) < 0.5
    a, b = Tensor(rng.standard_normal((4, 3))), Tensor(rng.standard_normal((4, 3)))
    r = Tensor(rng.standard_normal((4, 3)))
    return (lambda u, v: ad.sum(ad.mul(ad.where(mask, u, v), r))), [a, b]


def _case_concat(rng):
    xs = [Tensor(rng.standard_normal((3, n))) for n in (2, 4, 1)]
    r = Tensor(rng.standard_normal((3, 7)))
    return (lambda *t: ad.sum(ad.mul(ad.concat(t, axis=1), r))), xs


def _case_stack(rng):
    xs = [Tensor(rng.standard_normal((2, 5))) for _ in range(3)]
    r = Tensor(rng.standard_normal((2, 3, 5)))
    return (lambda *t: ad.sum(ad.mul(ad.stack(t, axis=1), r))), xs


def _case_im2col(rng):
    x = Tensor(rng.standard_normal((2, 6, 6, 2)))
    r = Tensor(rng.standard_normal((2, 3, 3, 18)))
    return (lambda t: ad.sum(ad.mul(ad.im2col(t, k=3, stride=2, pad=1), r))), [x]


def _case_scalar_broadcast(op):
    def build(rng):
        a, s = Tensor(rng.standard_normal((3, 4))), Tensor(rng.standard_normal((1,)))
        r = Tensor(rng.standard_normal((3, 4)))
        return (lambda u, v: ad.sum(ad.mul(op(v, u), r))), [a, s]
    return build


GRAD_CASES = {
    "add": _case_binary(ad.add, (3, 4), (3, 4)),
    "sub": _case_binary(ad.sub, (3, 4), (3, 4)),
    "mul": _case_binary(ad.mul, (3, 4), (3, 4)),
    "mul_scalar_broadcast": _case_scalar_broadcast(ad.mul),
    "sub_scalar_broadcast": _case_scalar_broadcast(ad.sub),
    "scale": _case_unary(lambda t: ad.scale(t, -1.7)),
    "relu": _case_unary(ad.relu, init=_away_from_zero),
    "sigmoid": _case_unary(ad.sigmoid),
    "where": _case_where,
    "matmul_2d": _case_binary(ad.matmul, (3, 4), (4, 5)),
    "matmul_stack_shared": _case_binary(ad.matmul, (2, 3, 4), (4, 5)),
    "matmul_batched": _case_binary(ad.matmul, (2, 3, 3, 4), (2, 3, 4, 2)),
    "add_bias": _case_binary(ad.add_bias, (2, 3, 4), (4,)),
    "reshape": _case_unary(lambda t: ad.reshape(t, (2, 6))),
    "transpose": _case_unary(lambda t: ad.transpose(t, (2, 0, 1)), shape=(2, 3, 4)),
    "getitem": _case_unary(lambda t: ad.getitem(t, (slice(1, 3), 2)), shape=(4, 5)),
    "concat": _case_concat,
    "stack": _case_stack,
    "sum_axis": _case_unary(lambda t: ad.sum(t, axis=1), shape=(3, 4, 2)),
    "mean": _case_unary(lambda t: ad.mean(t, axis=0)),
    "row_softmax": _case_unary(ad.row_softmax, shape=(2, 3, 5)),
    "l2_normalize_rows": _case_unary(ad.l2_normalize_rows, shape=(4, 6)),
    "standardize_rows": _case_unary(ad.standardize_rows, shape=(3, 4)),
    "cross_entropy": _case_ce,
    "im2col": _case_im2col,
}


# ---------------------------------------------------------------- model fixtures


def tiny_config(**overrides) -> ModelConfig:
    """E = 8, Q = 4 model small enough for exhaustive finite differences."""
    base = dict(Q=4, embed_dim=8, heads=2, patch_size=8, conv_filters=(2, 3), img_hidden=6,
                vec_hidden=5, score_hidden=4)
    base.update(overrides)
    return ModelConfig(**base).validate()


def two_sample_batch(seed: int = 0, patch_size: int = 8) -> Batch:
    """Two rendered samples with distinct positions, cues and labels."""
    rng = np.random.default_rng(seed)
    cam = CameraConfig(width=16, height=16)
    samples = []
    for i, pos in enumerate(([60.0, -10.0, 30.0], [45.0, 25.0, 20.0])):
        st = UAVState(position=np.array(pos), velocity=np.zeros(3),
                      posture=rng.uniform(-0.2, 0.2, 3), time=float(i))
        s = clean_sample(st, label=i % 4, camera=cam)
        s.frame = np.clip(s.frame + 0.05 * rng.standard_normal(s.frame.shape), 0, 1).astype(np.float32)
        s.gps = s.gps + rng.standard_normal(2)
        s.hd = s.hd + rng.standard_normal(2)
        s.quality = np.column_stack([rng.uniform(0.5, 4.0, 4), rng.integers(0, 3, 4), np.ones(4)])
        samples.append(s)
    return make_batch(samples, patch_size)


def tiny_model(seed: int = 0, **overrides):
    cfg = tiny_config(**overrides)
    batch = two_sample_batch(seed, cfg.patch_size)
    params = init_params(cfg, seed=seed)
    params.stats = fit_stats(batch)
    rng = np.random.default_rng([seed, 1])
    for t in params.tensors.values():  # non-zero biases exercise every path
        if t.ndim == 1:
            t.data = 0.1 * rng.standard_normal(t.shape)
    return params, batch


def random_batch(rng: np.random.Generator, n: int, patch_size: int = 16, channels: int = 3) -> Batch:
    """Batch with arbitrary raw fields, including missing boxes and wild cues."""
    has = rng.random(n) < 0.7
    cues = np.stack([rng.exponential(3.0, (n, len(MODALITIES))),
                     rng.integers(0, 20, (n, len(MODALITIES))).astype(float),
                     (rng.random((n, len(MODALITIES))) < 0.8).astype(float)], axis=-1)
    return Batch(
        patches=rng.random((n, patch_size, patch_size, channels)) * has[:, None, None, None],
        frame_means=rng.random((n, channels)),
        bbox=np.column_stack([rng.uniform(0.2, 0.8, (n, 2)), rng.uniform(0.02, 0.3, (n, 2))]) * has[:, None],
        has_bbox=has,
        gps=rng.normal(0, 80, (n, 2)), hd=np.abs(rng.normal(60, 30, (n, 2))),
        pos=rng.normal(0, 0.5, (n, 3)), cues=cues,
        degradation=np.zeros((n, len(MODALITIES), 3)),
        labels=rng.integers(0, 32, n), times=np.arange(n, dtype=float),
    )


# ---------------------------------------------------------------- statistics


def sign_test_greater(successes: int, trials: int) -> float:
    """One-sided exact binomial p-value P(X >= successes), X ~ Bin(trials, 1/2)."""
    if trials == 0:
        return 1.0
    tail = sum(math.comb(trials, k) for k in range(successes, trials + 1))
    return tail / 2.0 ** trials


def topk_by_full_sort(logits: np.ndarray, labels: np.ndarray, k: int) -> float:
    """Independent Top-k oracle: stable descending sort keeps the lower index first on ties."""
    order = np.argsort(-logits, axis=1, kind="stable")
    return float(np.mean([labels[i] in order[i, :k] for i in range(len(labels))]))
