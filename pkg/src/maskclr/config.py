"""Run configuration: ``[section]`` headers with ``key = value`` lines.

Grammar (one item per line)::

    # comment            ; also a comment
    [train]
    batch_size = 32
    mode = hybrid

Sections are ``audio``, ``model``, ``train`` and ``probe``. Keys not listed in
the dataclasses below are rejected. Booleans accept true/false, on/off,
yes/no, 1/0. Command-line overrides use ``section.key=value``.
"""
import configparser
import dataclasses
from dataclasses import dataclass, field, fields

from maskclr.audio import AudioConfig
from maskclr.errors import ConfigError
from maskclr.objectives import ObjectiveConfig
from maskclr.vit import ModelConfig

MODES = {"square": ("square",), "vertical": ("vertical",), "hybrid": ("square", "vertical")}


@dataclass(frozen=True)
class ModelSection:
    dim: int = 128
    depth: int = 4
    heads: int = 4
    mlp_ratio: int = 4
    proj_dim: int = 128
    decoder_depth: int = 2
    decoder_dim: int = 0


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 32
    mask_ratio: float = 0.9
    lr: float = 3e-4
    weight_decay: float = 1e-5
    tau: float = 0.1
    steps: int = 300
    seed: int = 0
    mode: str = "square"
    symmetrize: bool = True
    denominator_includes_positive: bool = False
    checkpoint_every: int = 0

    def validate(self):
        if self.batch_size < 2:
            raise ConfigError(f"train.batch_size must be >= 2, got {self.batch_size}")
        if not 0.0 <= self.mask_ratio < 1.0:
            raise ConfigError(f"train.mask_ratio must lie in [0, 1), got {self.mask_ratio}")
        if not self.lr > 0:
            raise ConfigError(f"train.lr must be positive, got {self.lr}")
        if not self.tau > 0:
            raise ConfigError(f"train.tau must be positive, got {self.tau}")
        if self.weight_decay < 0:
            raise ConfigError("train.weight_decay must be >= 0")
        if self.steps < 0:
            raise ConfigError("train.steps must be >= 0")
        if self.mode not in MODES:
            raise ConfigError(f"train.mode must be one of {sorted(MODES)}, got {self.mode!r}")

    @property
    def objective(self):
        return ObjectiveConfig(self.tau, self.symmetrize, self.denominator_includes_positive)


@dataclass(frozen=True)
class ProbeSettings:
    kind: str = "multiclass"
    grid: str = "full"
    max_epochs: int = 200
    patience: int = 10
    representation: str = "auto"
    seed: int = 0

    def validate(self):
        if self.kind not in ("multilabel", "multiclass", "key", "regression"):
            raise ConfigError(f"probe.kind {self.kind!r} is not a known task kind")
        if self.grid not in ("full", "quick"):
            raise ConfigError(f"probe.grid must be 'full' or 'quick', got {self.grid!r}")
        if self.representation not in ("auto", "square", "vertical", "concat"):
            raise ConfigError(f"probe.representation {self.representation!r} is not recognised")
        if self.max_epochs < 1 or self.patience < 1:
            raise ConfigError("probe.max_epochs and probe.patience must be >= 1")


SECTIONS = {"audio": AudioConfig, "model": ModelSection, "train": TrainConfig, "probe": ProbeSettings}


def _parse_value(text, typ, where):
    text = text.strip()
    try:
        if typ is bool:
            low = text.lower()
            if low in ("true", "on", "yes", "1"):
                return True
            if low in ("false", "off", "no", "0"):
                return False
            raise ValueError(text)
        if typ is int:
            return int(text)
        if typ is float:
            return float(text)
        return text
    except ValueError:
        raise ConfigError(f"{where}: cannot parse {text!r} as {typ.__name__}") from None


def _format_value(v):
    if isinstance(v, bool):
        return "true" if v else "false"
    return repr(v) if isinstance(v, float) else str(v)


@dataclass(frozen=True)
class RunConfig:
    audio: AudioConfig = field(default_factory=AudioConfig)
    model: ModelSection = field(default_factory=ModelSection)
    train: TrainConfig = field(default_factory=TrainConfig)
    probe: ProbeSettings = field(default_factory=ProbeSettings)

    def validate(self):
        self.train.validate()
        self.probe.validate()
        try:
            self.model_config()
        except ConfigError as exc:
            raise ConfigError(f"model: {exc}") from None
        a = self.audio
        if a.sample_rate <= 0 or a.hop <= 0 or a.n_fft <= 0 or a.n_mels <= 0 or a.frames <= 0:
            raise ConfigError("audio: rates and sizes must be positive")
        if a.fmax > a.sample_rate / 2 or a.fmin < 0 or a.fmin >= a.fmax:
            raise ConfigError("audio: need 0 <= fmin < fmax <= sample_rate/2")
        if a.segment_samples // a.hop + 1 < a.frames:
            raise ConfigError("audio: segment too short for the requested frame count")
        return self

    def model_config(self, mode=None):
        mode = mode or self.train.mode
        return ModelConfig(patches=MODES[mode], **dataclasses.asdict(self.model))

    def to_text(self):
        lines = []
        for name, cls in SECTIONS.items():
            section = getattr(self, name)
            lines.append(f"[{name}]")
            lines += [f"{f.name} = {_format_value(getattr(section, f.name))}" for f in fields(cls)]
            lines.append("")
        return "\n".join(lines)

    def replace(self, **sections):
        return dataclasses.replace(self, **sections)

    def with_overrides(self, overrides):
        """Apply ``section.key=value`` strings; returns a new validated config."""
        values = {name: dataclasses.asdict(getattr(self, name)) for name in SECTIONS}
        for item in overrides:
            key, sep, raw = item.partition("=")
            section, dot, attr = key.strip().partition(".")
            if not sep or not dot:
                raise ConfigError(f"override {item!r} must look like section.key=value")
            _assign(values, section, attr, raw, f"--set {item}")
        return _build(values)

    @classmethod
    def from_text(cls, text, source="<config>"):
        parser = configparser.ConfigParser(
            interpolation=None, comment_prefixes=("#", ";"), inline_comment_prefixes=None,
            default_section="\0none")
        parser.optionxform = str
        try:
            parser.read_string(text, source=source)
        except configparser.Error as exc:
            raise ConfigError(f"{source}: {exc}") from None
        values = {name: dataclasses.asdict(c()) for name, c in SECTIONS.items()}
        for section in parser.sections():
            for key, raw in parser.items(section):
                _assign(values, section, key, raw, f"{source} [{section}] {key}")
        return _build(values)

    @classmethod
    def load(cls, path):
        with open(path) as fh:
            return cls.from_text(fh.read(), source=str(path))


def _assign(values, section, key, raw, where):
    if section not in SECTIONS:
        raise ConfigError(f"{where}: unknown section {section!r}")
    types = {f.name: f.type for f in fields(SECTIONS[section])}
    if key not in types:
        raise ConfigError(f"{where}: unknown key {section}.{key}")
    values[section][key] = _parse_value(raw, types[key], where)


def _build(values):
    return RunConfig(**{name: SECTIONS[name](**v) for name, v in values.items()}).validate()
