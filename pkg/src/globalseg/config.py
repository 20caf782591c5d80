"""Flat ``section.key=value`` run configuration.

Example::

    preset=desk
    synth.seed=0
    train.epochs_stage1=30
    loss.cyclic_term_enabled=true
    decode.n_pseudo_activities=3
    eval.tau=0.75

Blank lines and ``#`` comments are ignored. Unknown sections or keys are
rejected so typos cannot silently fall back to defaults.
"""

from __future__ import annotations

import dataclasses
import types
import typing
from dataclasses import dataclass, field
from pathlib import Path

from .dataio import PRESETS, SynthConfig, preset
from .losses import LossConfig
from .metrics import EvalSettings
from .training import TrainConfig

ABLATIONS = ("no-cyclic", "no-kmeans", "no-video", "no-activity", "global-only")


class ConfigError(ValueError):
    pass


@dataclass
class DecodeConfig:
    n_pseudo_activities: int = 3
    n_actions: int = 4
    vocab_size: int = 50
    # None uses the dataset's ground-truth background share when available, else 0
    background_fraction: float | None = None
    n_init: int = 3
    seed: int = 0

    def __post_init__(self):
        if self.n_pseudo_activities < 1 or self.n_actions < 1:
            raise ConfigError("decode.n_pseudo_activities and decode.n_actions must be positive")
        if self.vocab_size < self.n_pseudo_activities:
            raise ConfigError("decode.vocab_size must be >= decode.n_pseudo_activities")
        if self.background_fraction is not None and not 0 <= self.background_fraction < 1:
            raise ConfigError("decode.background_fraction must lie in [0, 1)")


# per-preset departures from the library defaults; see README
PRESET_TRAIN = {"desk": {"embed_dim": 32}}
PRESET_LOSS = {"desk": {"use_clamped_mse": True}}

PRESET_DECODE = {
    "desk": {"n_pseudo_activities": 3, "n_actions": 4},
    "bf-like": {"n_pseudo_activities": 10, "n_actions": 5},
    "yti-like": {"n_pseudo_activities": 5, "n_actions": 9},
}


@dataclass
class RunConfig:
    preset: str | None = "desk"
    synth: SynthConfig = field(default_factory=SynthConfig)
    train: TrainConfig = field(default_factory=lambda: TrainConfig(**PRESET_TRAIN["desk"]))
    loss: LossConfig = field(default_factory=lambda: LossConfig(**PRESET_LOSS["desk"]))
    decode: DecodeConfig = field(default_factory=DecodeConfig)
    eval: EvalSettings = field(default_factory=EvalSettings)
    ablations: tuple[str, ...] = ()

    def __post_init__(self):
        self.ablations = tuple(self.ablations)
        for name in self.ablations:
            if name not in ABLATIONS:
                raise ConfigError(f"unknown ablation {name!r}; choose from {', '.join(ABLATIONS)}")
        self.synth.validate()
        self.train.loss = self.loss

    @classmethod
    def for_preset(cls, name: str, **sections) -> "RunConfig":
        if name not in PRESETS:
            raise ConfigError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}")
        loss = LossConfig(**PRESET_LOSS.get(name, {}))
        train = TrainConfig(**PRESET_TRAIN.get(name, {}), loss=loss)
        train.n_clusters = PRESET_DECODE[name]["n_pseudo_activities"] * PRESET_DECODE[name]["n_actions"]
        defaults = dict(
            preset=name,
            synth=preset(name),
            train=train,
            loss=loss,
            decode=DecodeConfig(**PRESET_DECODE[name]),
        )
        defaults.update(sections)
        return cls(**defaults)

    def reseeded(self, seed: int) -> "RunConfig":
        """Copy with the data, training and decoding seeds all set to ``seed``."""
        return RunConfig.parse(self.dumps(), {f"{s}.seed": str(seed) for s in ("synth", "train", "decode")})

    def effective_train_config(self) -> TrainConfig:
        """Training settings with the requested ablations applied."""
        loss = dataclasses.replace(self.loss)
        train = dataclasses.replace(self.train, loss=loss)
        for name in self.ablations:
            if name == "no-cyclic":
                loss.cyclic_term_enabled = False
            elif name == "no-kmeans":
                train.kmeans_init = False
            elif name == "no-video":
                loss.video_term_enabled = False
            elif name == "no-activity":
                loss.activity_term_enabled = False
            elif name == "global-only":
                loss.video_term_enabled = False
                loss.activity_term_enabled = False
        return train

    def dumps(self) -> str:
        lines = [f"preset={_format(self.preset)}", f"ablations={_format(self.ablations)}"]
        for section in SECTIONS:
            obj = getattr(self, section)
            for f in dataclasses.fields(obj):
                if section == "train" and f.name == "loss":
                    continue
                lines.append(f"{section}.{f.name}={_format(getattr(obj, f.name))}")
        return "\n".join(lines) + "\n"

    def write(self, path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(self.dumps())
        return path

    @classmethod
    def parse(cls, text: str, overrides: dict[str, str] | None = None) -> "RunConfig":
        values = _parse_lines(text)
        values.update(overrides or {})
        name = values.pop("preset", "desk")
        name = None if name.lower() == "none" else name
        config = cls.for_preset(name) if name is not None else cls(preset=None)
        sections = {s: dataclasses.asdict(getattr(config, s)) for s in SECTIONS}
        sections["train"].pop("loss")
        ablations = config.ablations
        for key, raw in values.items():
            if key == "ablations":
                ablations = _convert(raw, tuple[str, ...], key)
                continue
            section, _, name_ = key.partition(".")
            if section not in SECTIONS or not name_:
                raise ConfigError(f"unknown config key {key!r}")
            hints = typing.get_type_hints(SECTIONS[section])
            if name_ not in sections[section]:
                raise ConfigError(f"unknown config key {key!r}")
            sections[section][name_] = _convert(raw, hints[name_], key)
        try:
            synth = SynthConfig(**sections["synth"])
            loss = LossConfig(**sections["loss"])
            train = TrainConfig(**sections["train"], loss=loss)
            return cls(
                preset=config.preset,
                synth=synth,
                train=train,
                loss=loss,
                decode=DecodeConfig(**sections["decode"]),
                eval=EvalSettings(**sections["eval"]),
                ablations=ablations,
            )
        except (TypeError, ValueError) as exc:
            if isinstance(exc, ConfigError):
                raise
            raise ConfigError(str(exc)) from exc

    @classmethod
    def load(cls, path, overrides=None) -> "RunConfig":
        path = Path(path)
        if not path.is_file():
            raise FileNotFoundError(f"config file not found: {path}")
        return cls.parse(path.read_text(), overrides)

    def __eq__(self, other):
        return isinstance(other, RunConfig) and self.dumps() == other.dumps()


SECTIONS = {
    "synth": SynthConfig,
    "train": TrainConfig,
    "loss": LossConfig,
    "decode": DecodeConfig,
    "eval": EvalSettings,
}


def _parse_lines(text: str) -> dict[str, str]:
    values = {}
    for n, line in enumerate(text.splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise ConfigError(f"line {n}: expected key=value, got {line!r}")
        values[key.strip()] = value.strip()
    return values


def _format(value) -> str:
    if value is None:
        return "none"
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return ",".join(_format(v) for v in value)
    return repr(value) if isinstance(value, float) else str(value)


def _convert(raw: str, hint, key: str):
    origin = typing.get_origin(hint)
    args = typing.get_args(hint)
    if origin in (typing.Union, types.UnionType):
        if raw.lower() == "none" and type(None) in args:
            return None
        (hint,) = [a for a in args if a is not type(None)]
        return _convert(raw, hint, key)
    try:
        if origin is tuple:
            items = [s.strip() for s in raw.split(",") if s.strip()]
            item_type = args[0]
            return tuple(_convert(s, item_type, key) for s in items)
        if hint is bool:
            if raw.lower() in ("true", "1", "yes"):
                return True
            if raw.lower() in ("false", "0", "no"):
                return False
            raise ValueError(raw)
        if hint in (int, float, str):
            return hint(raw)
    except ValueError:
        raise ConfigError(f"{key}: cannot parse {raw!r} as {getattr(hint, '__name__', hint)}") from None
    raise ConfigError(f"{key}: unsupported type {hint}")
