"""Model configuration, variants and the trainable parameter container."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field

import numpy as np

from .autodiff import Tensor
from .errors import ConfigError, NotFittedError
from .sensors import CUE_ARITY, MODALITIES


@dataclass(frozen=True)
class VariantSpec:
    modalities: tuple
    dynamic: bool = True  # reliability-aware weights; False -> uniform fixed weights
    use_bbox: bool = True  # False forces the full-frame pooling path


VARIANTS = {
    "sam2b": VariantSpec(MODALITIES),
    "fixed_weight": VariantSpec(MODALITIES, dynamic=False),
    "no_bbox": VariantSpec(MODALITIES, use_bbox=False),
    "mm_aid": VariantSpec(("img", "gps")),
    "geometry_only": VariantSpec(("gps", "hd")),
    "single_img": VariantSpec(("img",)),
    "single_gps": VariantSpec(("gps",)),
    "single_hd": VariantSpec(("hd",)),
    "single_pos": VariantSpec(("pos",)),
}


def variant_spec(name: str) -> VariantSpec:
    try:
        return VARIANTS[name]
    except KeyError:
        raise ConfigError(f"unknown variant {name!r}; choose from {sorted(VARIANTS)}") from None


@dataclass(frozen=True)
class ModelConfig:
    Q: int = 32
    embed_dim: int = 64
    heads: int = 4
    variant: str = "sam2b"
    alpha_mode: str = "learnable"  # or "fixed"
    alpha: float = 0.5
    residual: bool = True
    shared_score_nets: bool = True
    patch_size: int = 16
    frame_channels: int = 3
    conv_filters: tuple = (8, 16)
    img_hidden: int = 64
    vec_hidden: int = 32
    score_hidden: int = 16
    phi_eps: float = 1e-6

    def validate(self) -> "ModelConfig":
        variant_spec(self.variant)
        if self.embed_dim % self.heads:
            raise ConfigError(f"heads={self.heads} must divide embed_dim={self.embed_dim}")
        if self.alpha_mode not in ("learnable", "fixed"):
            raise ConfigError(f"alpha_mode must be 'learnable' or 'fixed', got {self.alpha_mode!r}")
        if not 0.0 <= self.alpha <= 1.0:
            raise ConfigError("alpha must lie in [0, 1]")
        if self.patch_size % 4:
            raise ConfigError("patch_size must be divisible by 4 (two stride-2 convs)")
        return self

    @property
    def spec(self) -> VariantSpec:
        return variant_spec(self.variant)

    @property
    def vec_arity(self) -> dict:
        return {"gps": 2, "hd": 2, "pos": 3}


@dataclass
class ModelParams:
    config: ModelConfig
    tensors: dict = field(default_factory=dict)  # name -> Tensor
    stats: dict = field(default_factory=dict)  # name -> np.ndarray, frozen after fit

    def __getitem__(self, name: str) -> Tensor:
        return self.tensors[name]

    def __contains__(self, name: str) -> bool:
        return name in self.tensors

    @property
    def fitted(self) -> bool:
        return bool(self.stats)

    def stat(self, name: str) -> np.ndarray:
        if name not in self.stats:
            raise NotFittedError(f"normalization statistic {name!r} missing; fit on a training split first")
        return self.stats[name]

    def trainable(self) -> list:
        return [self.tensors[k] for k in sorted(self.tensors)]

    def n_params(self) -> int:
        return int(sum(t.size for t in self.tensors.values()))

    def copy(self) -> "ModelParams":
        return ModelParams(
            config=self.config,
            tensors={k: Tensor(v.data.copy(), requires_grad=v.requires_grad) for k, v in self.tensors.items()},
            stats={k: v.copy() for k, v in self.stats.items()},
        )

    def with_config(self, **changes) -> "ModelParams":
        out = self.copy()
        out.config = dataclasses.replace(self.config, **changes).validate()
        return out


def _dense(t: dict, rng, name: str, n_in: int, n_out: int, gain: float = 2.0) -> None:
    t[f"{name}.w"] = Tensor(rng.standard_normal((n_in, n_out)) * np.sqrt(gain / n_in), requires_grad=True)
    t[f"{name}.b"] = Tensor(np.zeros(n_out), requires_grad=True)


def init_params(cfg: ModelConfig, seed: int = 0) -> ModelParams:
    """He-initialized weights, zero biases; only the variant's active parts are created."""
    cfg.validate()
    rng = np.random.default_rng([seed, 7919])
    spec = cfg.spec
    e, t = cfg.embed_dim, {}
    c = cfg.frame_channels
    if "img" in spec.modalities:
        f1, f2 = cfg.conv_filters
        if spec.use_bbox:
            _dense(t, rng, "img.conv1", 9 * c, f1)
            _dense(t, rng, "img.conv2", 9 * f1, f2)
            flat = (cfg.patch_size // 4) ** 2 * f2 + 4  # conv features + bbox geometry
            _dense(t, rng, "img.fc1", flat, cfg.img_hidden)
            _dense(t, rng, "img.fc2", cfg.img_hidden, e, gain=1.0)
        _dense(t, rng, "img.gap1", c, cfg.vec_hidden)
        _dense(t, rng, "img.gap2", cfg.vec_hidden, e, gain=1.0)
    for m, arity in cfg.vec_arity.items():
        if m in spec.modalities:
            _dense(t, rng, f"{m}.fc1", arity, cfg.vec_hidden)
            _dense(t, rng, f"{m}.fc2", cfg.vec_hidden, e, gain=1.0)
    for k in ("wq", "wk", "wv", "wo"):
        t[f"att.{k}"] = Tensor(rng.standard_normal((e, e)) * np.sqrt(1.0 / e), requires_grad=True)
    if spec.dynamic:
        groups = [""] if cfg.shared_score_nets else [f".{m}" for m in spec.modalities]
        for g in groups:
            _dense(t, rng, f"score{g}.fc1", e, cfg.score_hidden)
            _dense(t, rng, f"score{g}.fc2", cfg.score_hidden, 1, gain=1.0)
            _dense(t, rng, f"rel{g}.fc1", CUE_ARITY, cfg.score_hidden)
            _dense(t, rng, f"rel{g}.fc2", cfg.score_hidden, 1, gain=1.0)
        if cfg.alpha_mode == "learnable":
            a = min(max(cfg.alpha, 1e-6), 1 - 1e-6)
            t["alpha.raw"] = Tensor([np.log(a / (1 - a))], requires_grad=True)
    _dense(t, rng, "ffn.fc1", e, 2 * e)
    _dense(t, rng, "ffn.fc2", 2 * e, e, gain=1.0)
    _dense(t, rng, "head", e, cfg.Q, gain=1.0)
    return ModelParams(config=cfg, tensors=t)
