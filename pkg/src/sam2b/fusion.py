"""Cross-modal similarity, self-attention, reliability-aware weighting and prediction."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .encoders import Batch, EmbeddingSet, cue_features, embed, mlp2
from .errors import DimensionError
from .params import ModelParams
from .sensors import MODALITIES


def similarity_matrix(F: Tensor) -> Tensor:
    """Pairwise cosine similarities of unit rows: (B, A, E) -> (B, A, A)."""
    if isinstance(F, EmbeddingSet):
        F = F.stacked()
    return F @ ad.transpose(F, (0, 2, 1))


def self_attention(F: Tensor, params: ModelParams) -> Tensor:
    """Multi-head scaled dot-product attention over the modality rows of F."""
    cfg = params.config
    if F.ndim != 3 or F.shape[2] != cfg.embed_dim:
        raise DimensionError(f"attention expects (B, A, {cfg.embed_dim}), got {F.shape}")
    b, a, e = F.shape
    h = cfg.heads
    dh = e // h

    def heads(t: Tensor) -> Tensor:
        return ad.transpose(ad.reshape(t, (b, a, h, dh)), (0, 2, 1, 3))

    q = heads(F @ params["att.wq"])
    k = heads(F @ params["att.wk"])
    v = heads(F @ params["att.wv"])
    scores = ad.scale(q @ ad.transpose(k, (0, 1, 3, 2)), 1.0 / math.sqrt(dh))
    ctx = ad.row_softmax(scores) @ v  # (B, H, A, dh)
    merged = ad.reshape(ad.transpose(ctx, (0, 2, 1, 3)), (b, a, e))
    out = merged @ params["att.wo"]
    return ad.add(out, F) if cfg.residual else out


def attention_probs(F: Tensor, params: ModelParams) -> np.ndarray:
    """Per-head attention matrices (B, H, A, A), for inspection."""
    cfg = params.config
    b, a, e = F.shape
    dh = e // cfg.heads
    q = (F.data @ params["att.wq"].data).reshape(b, a, cfg.heads, dh).transpose(0, 2, 1, 3)
    k = (F.data @ params["att.wk"].data).reshape(b, a, cfg.heads, dh).transpose(0, 2, 1, 3)
    s = q @ k.transpose(0, 1, 3, 2) / math.sqrt(dh)
    s = np.exp(s - s.max(axis=-1, keepdims=True))
    return s / s.sum(axis=-1, keepdims=True)


def _alpha(params: ModelParams):
    if "alpha.raw" in params:
        return ad.sigmoid(params["alpha.raw"])
    return float(params.config.alpha)


def alpha_value(params: ModelParams) -> float:
    a = _alpha(params)
    return a.item() if isinstance(a, Tensor) else a


def _per_modality(V: Tensor, params: ModelParams, net: str, inputs: Tensor) -> Tensor:
    cfg = params.config
    b, a = V.shape[:2]
    if cfg.shared_score_nets:
        return ad.reshape(mlp2(inputs, params, f"{net}.fc1", f"{net}.fc2"), (b, a))
    cols = [mlp2(inputs[:, i, :], params, f"{net}.{m}.fc1", f"{net}.{m}.fc2")
            for i, m in enumerate(cfg.spec.modalities)]
    return ad.concat(cols, axis=1)


def reliability_weights(V: Tensor, cues, params: ModelParams) -> Tensor:
    """Blend attention scores with standardized reliability scores, softmax to the simplex.

    ``cues`` are raw quality cues (B, A, 3) for the active modalities.
    Returns (B, A) weights.
    """
    cues = np.asarray(cues, dtype=np.float64)
    if cues.shape[:2] != V.shape[:2]:
        raise DimensionError(f"cues {cues.shape} do not match rows {V.shape}")
    f = _per_modality(V, params, "score", V)
    c = _per_modality(V, params, "rel", Tensor(cue_features(cues)))
    phi = ad.standardize_rows(c, eps=params.config.phi_eps)
    alpha = _alpha(params)
    if isinstance(alpha, Tensor):
        mixed = ad.add(ad.mul(alpha, f), ad.mul(ad.sub(Tensor(1.0), alpha), phi))
    else:
        mixed = ad.add(ad.scale(f, alpha), ad.scale(phi, 1.0 - alpha))
    return ad.row_softmax(mixed)


def fuse_and_predict(V: Tensor, w, params: ModelParams):
    """Return (Z, logits, q_hat) from modality rows V (B, A, E) and weights w (B, A)."""
    w = w if isinstance(w, Tensor) else Tensor(w)
    b, a, e = V.shape
    if w.shape != (b, a):
        raise DimensionError(f"weights {w.shape} do not match rows {V.shape}")
    pooled = ad.reshape(ad.reshape(w, (b, 1, a)) @ V, (b, e))
    z = mlp2(pooled, params, "ffn.fc1", "ffn.fc2")
    logits = ad.add_bias(z @ params["head.w"], params["head.b"])
    q_hat = np.argmax(logits.data, axis=1)  # first maximum wins ties
    return z, logits, q_hat


@dataclass
class ForwardOutput:
    logits: Tensor
    weights: Tensor
    similarity: Tensor
    embeddings: EmbeddingSet
    fused: Tensor
    q_hat: np.ndarray


def active_cues(batch: Batch, params: ModelParams) -> np.ndarray:
    idx = [MODALITIES.index(m) for m in params.config.spec.modalities]
    return batch.cues[:, idx, :]


def forward(batch: Batch, params: ModelParams) -> ForwardOutput:
    embs = embed(batch, params)
    F = embs.stacked()
    sim = similarity_matrix(F)
    V = self_attention(F, params)
    b, a = V.shape[:2]
    if params.config.spec.dynamic:
        w = reliability_weights(V, active_cues(batch, params), params)
    else:
        w = Tensor(np.full((b, a), 1.0 / a))
    z, logits, q_hat = fuse_and_predict(V, w, params)
    return ForwardOutput(logits=logits, weights=w, similarity=sim, embeddings=embs, fused=z, q_hat=q_hat)
