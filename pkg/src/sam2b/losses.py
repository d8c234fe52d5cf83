"""Beam classification loss, cross-modal contrastive alignment and their blend."""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ConfigError, InsufficientBatchError


@dataclass(frozen=True)
class LossConfig:
    beta: float = 0.5
    theta: float = 0.5

    def validate(self) -> "LossConfig":
        if self.beta < 0:
            raise ConfigError("beta must be >= 0")
        if self.theta <= 0:
            raise ConfigError("theta must be > 0")
        return self


def task_loss(logits: Tensor, labels) -> Tensor:
    return ad.log_softmax_cross_entropy(logits, labels)


def alignment_loss(embeddings, theta: float) -> Tensor:
    """In-batch InfoNCE averaged over all ordered modality pairs.

    ``embeddings`` is a sequence of (B, E) unit-norm tensors, one per
    modality.  For the pair (g1, g2) the logits are ``X_g1 X_g2^T / theta``
    and row i must pick column i.  The sum over ordered pairs is divided by
    ``A (A - 1)``; with fewer than two modalities the loss is zero.
    """
    if theta <= 0:
        raise ConfigError("theta must be > 0")
    embeddings = list(embeddings.values()) if isinstance(embeddings, dict) else list(embeddings)
    a = len(embeddings)
    b = embeddings[0].shape[0] if embeddings else 0
    if b < 2:
        raise InsufficientBatchError(f"alignment loss needs a batch of at least 2, got {b}")
    if a < 2:
        return Tensor(0.0)
    diag = np.arange(b)
    total = None
    for i, j in itertools.permutations(range(a), 2):
        s = ad.scale(embeddings[i] @ ad.transpose(embeddings[j]), 1.0 / theta)
        term = ad.log_softmax_cross_entropy(s, diag)
        total = term if total is None else ad.add(total, term)
    return ad.scale(total, 1.0 / (a * (a - 1)))


def total_loss(task: Tensor, align: Tensor, cfg: LossConfig) -> Tensor:
    if cfg.beta == 0:
        return task
    return ad.add(task, ad.scale(align, cfg.beta))
