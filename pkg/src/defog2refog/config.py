"""Training configuration: dataclass defaults, YAML loading, validation."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import yaml

from .losses import GAN_MODES, LossWeights, PerceptualExtractor
from .networks import UPSAMPLE_MODES

AIRLIGHT_SOURCES = ("input_image", "cycle_origin")
ENHANCER_TARGETS = ("input", "enhanced_input")


class ConfigError(ValueError):
    def __init__(self, problems: list[str]):
        super().__init__("invalid configuration:\n  " + "\n  ".join(problems))
        self.problems = problems


@dataclass(frozen=True)
class TrainConfig:
    foggy_dir: str | None = None
    clear_dir: str | None = None
    out_dir: str = "runs/default"
    image_size: int = 512
    learning_rate: float = 2e-4
    adam_betas: tuple[float, float] = (0.5, 0.999)
    batch_size: int = 1
    iterations: int = 2000
    weights: LossWeights = field(default_factory=LossWeights)
    seed: int = 0
    checkpoint_every: int = 500
    gan_mode: str = "least_squares"
    airlight_source: str = "input_image"
    airlight_scalar: bool = False
    upsample: str = "deconv"
    enhancer_target: str = "input"
    perceptual_backend: str = "seeded_random_stack"
    perceptual_layer: int | None = None
    perceptual_weights: str | None = None
    history_size: int = 1000
    keep_checkpoints: int = 0  # numbered checkpoints to retain; 0 keeps all

    def problems(self, check_paths: bool = False) -> list[str]:
        out = []
        if not isinstance(self.image_size, int) or self.image_size < 32 or self.image_size % 8:
            out.append(f"image_size must be an integer >= 32 divisible by 8, got {self.image_size!r}")
        if not self.learning_rate >= 0:
            out.append(f"learning_rate must be >= 0, got {self.learning_rate!r}")
        b1, b2 = self.adam_betas
        if not (0 <= b1 < 1 and 0 <= b2 < 1):
            out.append(f"adam_betas must lie in [0, 1), got {self.adam_betas!r}")
        if not isinstance(self.batch_size, int) or self.batch_size < 1:
            out.append(f"batch_size must be a positive integer, got {self.batch_size!r}")
        if not isinstance(self.iterations, int) or self.iterations < 1:
            out.append(f"iterations must be a positive integer, got {self.iterations!r}")
        if not isinstance(self.checkpoint_every, int) or self.checkpoint_every < 1:
            out.append(f"checkpoint_every must be a positive integer, got {self.checkpoint_every!r}")
        if self.gan_mode not in GAN_MODES:
            out.append(f"gan_mode must be one of {GAN_MODES}, got {self.gan_mode!r}")
        if self.airlight_source not in AIRLIGHT_SOURCES:
            out.append(f"airlight_source must be one of {AIRLIGHT_SOURCES}, got {self.airlight_source!r}")
        if self.upsample not in UPSAMPLE_MODES:
            out.append(f"upsample must be one of {UPSAMPLE_MODES}, got {self.upsample!r}")
        if self.enhancer_target not in ENHANCER_TARGETS:
            out.append(f"enhancer_target must be one of {ENHANCER_TARGETS}, got {self.enhancer_target!r}")
        if self.perceptual_backend not in PerceptualExtractor.BACKENDS:
            out.append(f"perceptual_backend must be one of {PerceptualExtractor.BACKENDS}")
        if self.perceptual_backend == "pretrained_16layer" and not self.perceptual_weights:
            out.append("perceptual_weights is required for the pretrained_16layer backend")
        if not isinstance(self.history_size, int) or self.history_size < 1:
            out.append("history_size must be a positive integer")
        if not isinstance(self.keep_checkpoints, int) or self.keep_checkpoints < 0:
            out.append("keep_checkpoints must be a non-negative integer")
        if check_paths:
            for name in ("foggy_dir", "clear_dir"):
                value = getattr(self, name)
                if value is None:
                    out.append(f"{name} is required")
                elif not Path(value).is_dir():
                    out.append(f"{name} does not exist: {value}")
            if self.perceptual_weights and not Path(self.perceptual_weights).is_file():
                out.append(f"perceptual_weights file does not exist: {self.perceptual_weights}")
        return out

    def validate(self, check_paths: bool = False) -> TrainConfig:
        problems = self.problems(check_paths)
        if problems:
            raise ConfigError(problems)
        return self

    def to_dict(self) -> dict:
        d = asdict(self)
        d["adam_betas"] = list(self.adam_betas)
        return d

    @classmethod
    def from_dict(cls, raw: dict) -> TrainConfig:
        cfg, problems = cls._parse(raw)
        problems += cfg.problems()
        if problems:
            raise ConfigError(problems)
        return cfg

    @classmethod
    def _parse(cls, raw: dict) -> tuple[TrainConfig, list[str]]:
        known = {f.name for f in fields(cls)}
        problems = [f"unknown config key {k!r}" for k in sorted(set(raw) - known)]
        raw = {k: v for k, v in raw.items() if k in known}
        if "weights" in raw:
            w = raw.pop("weights")
            if isinstance(w, LossWeights):
                raw["weights"] = w
            elif isinstance(w, dict):
                try:
                    raw["weights"] = LossWeights(**w)
                except (TypeError, ValueError) as exc:
                    problems.append(f"weights: {exc}")
            else:
                problems.append("weights must be a mapping of gamma1..gamma5")
        if "adam_betas" in raw:
            betas = raw.pop("adam_betas")
            if isinstance(betas, (list, tuple)) and len(betas) == 2:
                raw["adam_betas"] = tuple(float(b) for b in betas)
            else:
                problems.append("adam_betas must be a pair of numbers")
        return cls(**raw), problems

    def with_overrides(self, **overrides) -> TrainConfig:
        overrides = {k: v for k, v in overrides.items() if v is not None}
        return replace(self, **overrides)


def load_config(path: str | Path, **overrides) -> TrainConfig:
    """Read a YAML config, apply non-None overrides, and validate (paths included)."""
    path = Path(path)
    if not path.is_file():
        raise ConfigError([f"config file does not exist: {path}"])
    raw = yaml.safe_load(path.read_text()) or {}
    if not isinstance(raw, dict):
        raise ConfigError([f"{path}: top level must be a mapping"])
    cfg, problems = TrainConfig._parse(raw)
    cfg = cfg.with_overrides(**overrides)
    problems += cfg.problems(check_paths=True)
    if problems:
        raise ConfigError(problems)
    return cfg
