"""Plain-text experiment configuration (INI sections of key = value pairs).

Sections::

    [experiment]   seed, variants, out
    [channel]      ChannelConfig fields
    [trajectory]   TrajectoryConfig fields, plus ``samples`` (sets duration = samples * step)
    [camera]       CameraConfig fields
    [train]        TrainConfig scalars, beta1/beta2 for Adam, beta/theta for the loss
    [model]        ModelConfig fields (Q comes from [channel])
    [profile.X]    degradation profile X, keys ``<modality>.<level>`` and optional ``base``
    [schedule]     segments = "0.0 a, 0.7 b"; cycle = "a, b"; cycle_block; cycle_until

Unknown sections or keys raise :class:`ConfigError`.  Profiles ``zero`` and
``nominal`` are predefined.  :func:`dump_config` writes the fully resolved
configuration in the same format; parsing it back yields an equal object.
"""

from __future__ import annotations

import configparser
import dataclasses
import io
import math
from dataclasses import dataclass, field
from pathlib import Path

from .channel import ChannelConfig, TrajectoryConfig
from .errors import ConfigError
from .losses import LossConfig
from .params import ModelConfig, variant_spec
from .sensors import MODALITIES, CameraConfig, DegradationProfile, DegradationSchedule, ModalityDegradation
from .trainer import TrainConfig

BUILTIN_PROFILES = {"zero": DegradationProfile.zero(), "nominal": DegradationProfile.nominal()}
_LEVELS = tuple(f.name for f in dataclasses.fields(ModalityDegradation))


@dataclass
class ExperimentConfig:
    seed: int = 0
    variants: tuple = ("sam2b",)
    out: str = "runs"
    channel: ChannelConfig = ChannelConfig()
    trajectory: TrajectoryConfig = TrajectoryConfig()
    camera: CameraConfig = CameraConfig()
    train: TrainConfig = TrainConfig()
    profiles: dict = field(default_factory=lambda: dict(BUILTIN_PROFILES))
    schedule_spec: dict = field(default_factory=lambda: {
        "segments": [(0.0, "zero")], "cycle": [], "cycle_block": 25, "cycle_until": 0.0})

    @property
    def schedule(self) -> DegradationSchedule:
        s = self.schedule_spec
        return DegradationSchedule(
            segments=[(start, self.profile(name)) for start, name in s["segments"]],
            cycle=[self.profile(name) for name in s["cycle"]],
            cycle_block=s["cycle_block"], cycle_until=s["cycle_until"]).validate()

    def profile(self, name: str) -> DegradationProfile:
        try:
            return self.profiles[name]
        except KeyError:
            raise ConfigError(f"unknown degradation profile {name!r}") from None

    def train_config(self, variant: str | None = None) -> TrainConfig:
        cfg = self.train
        model = dataclasses.replace(cfg.model, Q=self.channel.Q,
                                    variant=variant if variant is not None else cfg.model.variant)
        return cfg.replace(model=model).validate()

    def with_seed(self, seed: int) -> "ExperimentConfig":
        return dataclasses.replace(self, seed=int(seed), train=self.train.replace(seed=int(seed)))

    def validate(self) -> "ExperimentConfig":
        self.channel.validate()
        self.trajectory.validate()
        for v in self.variants:
            variant_spec(v)
        _ = self.schedule
        self.train_config()
        return self


# ---------------------------------------------------------------- value coercion


def _float(text: str) -> float:
    t = text.strip().lower()
    if t in ("inf", "+inf", "infinity"):
        return math.inf
    if t in ("-inf", "-infinity"):
        return -math.inf
    return float(t)


def _bool(text: str) -> bool:
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _list(text: str, sep: str = ",") -> list:
    return [p.strip() for p in text.split(sep) if p.strip()]


def _coerce(text: str, like, key: str):
    """Parse ``text`` to the type of the default value ``like``."""
    try:
        if isinstance(like, bool):
            return _bool(text)
        if isinstance(like, int):
            return int(text)
        if isinstance(like, float):
            return _float(text)
        if isinstance(like, tuple):
            items = _list(text)
            if like and all(isinstance(v, int) for v in like):
                return tuple(int(v) for v in items)
            return tuple(_float(v) for v in items)
        return text.strip()
    except ValueError as exc:
        raise ConfigError(f"{key}: {exc}") from None


def _point(text: str) -> tuple:
    vals = tuple(_float(v) for v in _list(text))
    if len(vals) != 3:
        raise ConfigError(f"expected x, y, z, got {text!r}")
    return vals


def _update_dataclass(obj, items: dict, section: str, special: dict | None = None):
    special = special or {}
    names = {f.name for f in dataclasses.fields(obj)}
    changes = {}
    for key, text in items.items():
        if key in special:
            changes[key] = special[key](text)
        elif key in names:
            changes[key] = _coerce(text, getattr(obj, key), f"[{section}] {key}")
        else:
            raise ConfigError(f"unknown key {key!r} in [{section}]")
    return dataclasses.replace(obj, **changes)


# ---------------------------------------------------------------- sections


def _parse_trajectory(items: dict) -> TrajectoryConfig:
    items = dict(items)
    samples = items.pop("samples", None)
    special = {
        "start": lambda t: None if t.strip().lower() == "none" else _point(t),
        "waypoints": lambda t: None if t.strip().lower() == "none" else tuple(_point(p) for p in _list(t, ";")),
    }
    tcfg = _update_dataclass(TrajectoryConfig(), items, "trajectory", special)
    if samples is not None:
        n = _coerce(samples, 0, "[trajectory] samples")
        if n < 1:
            raise ConfigError("[trajectory] samples must be >= 1")
        tcfg = dataclasses.replace(tcfg, duration=n * tcfg.step)
    return tcfg


def _parse_train(items: dict, model_items: dict) -> TrainConfig:
    items = dict(items)
    loss = LossConfig()
    for key in ("beta", "theta"):
        if key in items:
            loss = dataclasses.replace(loss, **{key: _coerce(items.pop(key), 0.0, f"[train] {key}")})
    betas = list(TrainConfig().betas)
    for i, key in enumerate(("beta1", "beta2")):
        if key in items:
            betas[i] = _coerce(items.pop(key), 0.0, f"[train] {key}")
    for key in ("loss", "model", "betas"):
        if key in items:
            raise ConfigError(f"unknown key {key!r} in [train]")
    if "Q" in model_items or "q" in model_items:
        raise ConfigError("[model] Q is taken from [channel] Q")
    model = _update_dataclass(ModelConfig(), model_items, "model")
    cfg = _update_dataclass(TrainConfig(), items, "train")
    return dataclasses.replace(cfg, betas=tuple(betas), loss=loss.validate(), model=model)


def _parse_profile(name: str, items: dict, known: dict) -> DegradationProfile:
    items = dict(items)
    base = known.get("zero")
    if "base" in items:
        base_name = items.pop("base").strip()
        if base_name not in known:
            raise ConfigError(f"[profile.{name}] base {base_name!r} is not defined above it")
        base = known[base_name]
    per = {m: base[m] for m in MODALITIES}
    for key, text in items.items():
        mod, _, level = key.partition(".")
        if mod == "all" and level in _LEVELS:
            targets = MODALITIES
        elif mod in MODALITIES and level in _LEVELS:
            targets = (mod,)
        else:
            raise ConfigError(f"unknown key {key!r} in [profile.{name}]")
        value = _coerce(text, 0.0, f"[profile.{name}] {key}")
        for m in targets:
            per[m] = dataclasses.replace(per[m], **{level: value})
    return DegradationProfile(**per).validate()


def _parse_schedule(items: dict) -> dict:
    spec = {"segments": [(0.0, "zero")], "cycle": [], "cycle_block": 25, "cycle_until": 0.0}
    for key, text in items.items():
        if key == "segments":
            segs = []
            for part in _list(text):
                bits = part.split()
                if len(bits) != 2:
                    raise ConfigError(f"[schedule] segment {part!r} must be '<start_fraction> <profile>'")
                segs.append((_coerce(bits[0], 0.0, "[schedule] segments"), bits[1]))
            if not segs:
                raise ConfigError("[schedule] segments is empty")
            spec["segments"] = segs
        elif key == "cycle":
            spec["cycle"] = _list(text)
        elif key == "cycle_block":
            spec["cycle_block"] = _coerce(text, 0, "[schedule] cycle_block")
        elif key == "cycle_until":
            spec["cycle_until"] = _coerce(text, 0.0, "[schedule] cycle_until")
        else:
            raise ConfigError(f"unknown key {key!r} in [schedule]")
    return spec


def _parser() -> configparser.ConfigParser:
    cp = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    cp.optionxform = str  # keys are case-sensitive (rician_K_dB, M, Q)
    return cp


def parse_config(text: str) -> ExperimentConfig:
    cp = _parser()
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"malformed configuration: {exc}") from None
    sections = {s: dict(cp.items(s)) for s in cp.sections()}
    allowed = {"experiment", "channel", "trajectory", "camera", "train", "model", "schedule"}
    for s in sections:
        if s not in allowed and not s.startswith("profile."):
            raise ConfigError(f"unknown section [{s}]")

    exp = dict(sections.get("experiment", {}))
    cfg = ExperimentConfig()
    for key, text_value in exp.items():
        if key == "seed":
            cfg.seed = _coerce(text_value, 0, "[experiment] seed")
        elif key == "variants":
            cfg.variants = tuple(_list(text_value))
        elif key == "out":
            cfg.out = text_value.strip()
        else:
            raise ConfigError(f"unknown key {key!r} in [experiment]")
    if not cfg.variants:
        raise ConfigError("[experiment] variants is empty")

    cfg.channel = _update_dataclass(ChannelConfig(), sections.get("channel", {}), "channel")
    cfg.trajectory = _parse_trajectory(sections.get("trajectory", {}))
    cfg.camera = _update_dataclass(CameraConfig(), sections.get("camera", {}), "camera")
    train_items = dict(sections.get("train", {}))
    if "seed" not in train_items:
        train_items["seed"] = str(cfg.seed)
    model_items = dict(sections.get("model", {}))
    model_items.setdefault("variant", cfg.variants[0])
    cfg.train = _parse_train(train_items, model_items)

    profiles = dict(BUILTIN_PROFILES)
    for s in sections:  # file order, so a profile may build on an earlier one
        if s.startswith("profile."):
            name = s[len("profile."):]
            if not name or name in BUILTIN_PROFILES:
                raise ConfigError(f"profile name {name!r} is empty or reserved")
            profiles[name] = _parse_profile(name, sections[s], profiles)
    cfg.profiles = profiles
    cfg.schedule_spec = _parse_schedule(sections.get("schedule", {}))
    return cfg.validate()


def load_config(path) -> ExperimentConfig:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except UnicodeDecodeError as exc:
        raise ConfigError(f"{path}: not UTF-8 text ({exc})") from None
    return parse_config(text)


# ---------------------------------------------------------------- dumping


def _fmt(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        if math.isinf(value):
            return "inf" if value > 0 else "-inf"
        return repr(value)
    if isinstance(value, (tuple, list)):
        return ", ".join(_fmt(v) for v in value)
    if value is None:
        return "none"
    return str(value)


def dump_config(cfg: ExperimentConfig) -> str:
    """Fully resolved configuration text; ``parse_config(dump_config(c))`` reproduces ``c``."""
    out = io.StringIO()

    def section(name, pairs):
        out.write(f"[{name}]\n")
        for k, v in pairs:
            out.write(f"{k} = {v}\n")
        out.write("\n")

    section("experiment", [("seed", cfg.seed), ("variants", ", ".join(cfg.variants)), ("out", cfg.out)])
    section("channel", [(f.name, _fmt(getattr(cfg.channel, f.name))) for f in dataclasses.fields(cfg.channel)])
    traj = []
    for f in dataclasses.fields(cfg.trajectory):
        v = getattr(cfg.trajectory, f.name)
        if f.name == "waypoints" and v is not None:
            traj.append((f.name, "; ".join(_fmt(p) for p in v)))
        else:
            traj.append((f.name, _fmt(v)))
    section("trajectory", traj)
    section("camera", [(f.name, _fmt(getattr(cfg.camera, f.name))) for f in dataclasses.fields(cfg.camera)])
    t = cfg.train
    skip = {"betas", "loss", "model"}
    section("train", [(f.name, _fmt(getattr(t, f.name))) for f in dataclasses.fields(t) if f.name not in skip]
            + [("beta1", _fmt(t.betas[0])), ("beta2", _fmt(t.betas[1])),
               ("beta", _fmt(t.loss.beta)), ("theta", _fmt(t.loss.theta))])
    section("model", [(f.name, _fmt(getattr(t.model, f.name)))
                      for f in dataclasses.fields(t.model) if f.name != "Q"])
    for name, prof in cfg.profiles.items():
        if name in BUILTIN_PROFILES:
            continue
        section(f"profile.{name}", [(f"{m}.{lv}", _fmt(getattr(prof[m], lv))) for m in MODALITIES for lv in _LEVELS])
    s = cfg.schedule_spec
    section("schedule", [("segments", ", ".join(f"{_fmt(float(a))} {b}" for a, b in s["segments"])),
                         ("cycle", ", ".join(s["cycle"])), ("cycle_block", s["cycle_block"]),
                         ("cycle_until", _fmt(float(s["cycle_until"])))])
    return out.getvalue()
