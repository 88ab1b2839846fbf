"""Run configuration: sectioned key=value (INI) or JSON files, plus presets.

Every field defaults to the standard preset values, so an empty config is a
complete run. A serialized config plus its seeds reproduces a run bit for
bit.
"""

from __future__ import annotations

import configparser
import json
from dataclasses import asdict, dataclass, field

from .discriminator import AugmentConfig
from .guidance import GuidanceConfig
from .schedule import NoiseSchedule
from .score import TrainConfig


class ConfigError(ValueError):
    """Invalid or unparseable run configuration."""


@dataclass
class DatasetConfig:
    kind: str = "two_moons"           # two_moons | gaussian_mixture
    n: int = 2000
    noise_std: float = 0.1            # two-moons jitter
    n_classes: int = 2
    means: list = field(default_factory=lambda: [[-2.0, 0.0], [2.0, 0.0]])
    cov: float = 0.09                 # isotropic variance for mixtures
    weights: list = None              # per-component priors, uniform when None


@dataclass
class NoiseConfig:
    kind: str = "symmetric"           # none | symmetric | asymmetric | instance_dependent
    rate: float = 0.5
    flip_map: dict = None             # class -> class, asymmetric only


@dataclass
class ModelConfig:
    hidden: list = field(default_factory=lambda: [128, 128])
    sigma_data: float = 0.7


@dataclass
class DetectorConfig:
    kind: str = "oracle_with_errors"  # confidence | oracle_with_errors
    epochs: int = 40
    quantile: float = None            # confidence: fixed quantile; valley when None
    clean_contamination: float = 1.0 / 3.0
    corrupt_contamination: float = 1.0 / 3.0
    train_fraction: float = 0.5       # share of the dataset the discriminator sees


@dataclass
class SamplingConfig:
    n_samples: int = 2000
    dump_chains: int = 4              # per-chain trajectory CSVs to write


@dataclass
class RunConfig:
    dataset: DatasetConfig = field(default_factory=DatasetConfig)
    noise: NoiseConfig = field(default_factory=NoiseConfig)
    schedule: NoiseSchedule = field(default_factory=NoiseSchedule)
    score_model: ModelConfig = field(default_factory=ModelConfig)
    disc_model: ModelConfig = field(
        default_factory=lambda: ModelConfig(hidden=[256, 256, 256]))
    train_score: TrainConfig = field(
        default_factory=lambda: TrainConfig(steps=6000, batch_size=256, lr=2e-3,
                                            lr_decay=0.02, ema_decay=0.999))
    train_disc: TrainConfig = field(
        default_factory=lambda: TrainConfig(steps=2000, batch_size=128, lr=1e-3,
                                            lr_decay=0.05, ema_decay=0.999))
    detector: DetectorConfig = field(default_factory=DetectorConfig)
    augment: AugmentConfig = field(default_factory=AugmentConfig)
    guidance: GuidanceConfig = field(
        default_factory=lambda: GuidanceConfig(gamma=1.5, s_clip_min=0.0,
                                               s_clip_max=80.0))
    sampling: SamplingConfig = field(default_factory=SamplingConfig)
    seed: int = 0
    jobs: int = 0                     # 0 = leave thread count alone
    metrics_k: int = 5

    def to_dict(self):
        d = {
            "dataset": asdict(self.dataset),
            "noise": asdict(self.noise),
            "schedule": self.schedule.to_dict(),
            "score_model": asdict(self.score_model),
            "disc_model": asdict(self.disc_model),
            "train_score": asdict(self.train_score),
            "train_disc": asdict(self.train_disc),
            "detector": asdict(self.detector),
            "augment": self.augment.to_dict(),
            "guidance": {**self.guidance.to_dict(),
                         "predictor_only": self.guidance.predictor_only},
            "sampling": asdict(self.sampling),
            "run": {"seed": self.seed, "jobs": self.jobs, "metrics_k": self.metrics_k},
        }
        return d


# -- presets -------------------------------------------------------------------

def preset_toy_moons_50sym():
    """Two moons with symmetric label noise and full-range gamma=1.5 guidance."""
    return RunConfig()


def preset_gauss2_analytic():
    """Two-mode Gaussian testbed with analytic densities for ratio checks."""
    cfg = RunConfig()
    cfg.dataset = DatasetConfig(kind="gaussian_mixture", n=4000, n_classes=2,
                                means=[[-2.0, 0.0], [2.0, 0.0]], cov=0.09,
                                weights=[0.65, 0.35])
    cfg.noise = NoiseConfig(kind="symmetric", rate=1.0)
    cfg.score_model = ModelConfig(hidden=[128, 128], sigma_data=1.5)
    cfg.disc_model = ModelConfig(hidden=[128, 128], sigma_data=1.5)
    cfg.train_score = TrainConfig(steps=8000, batch_size=256, lr=2e-3,
                                  lr_decay=0.02, ema_decay=0.999)
    cfg.detector = DetectorConfig(kind="oracle_with_errors",
                                  clean_contamination=0.0,
                                  corrupt_contamination=0.0,
                                  train_fraction=1.0)
    cfg.guidance = GuidanceConfig(gamma=0.9, s_clip_min=1.5, s_clip_max=50.0)
    return cfg


def preset_idn_40():
    """Instance-dependent noise at 40% with the confidence detector."""
    cfg = RunConfig()
    cfg.noise = NoiseConfig(kind="instance_dependent", rate=0.4)
    cfg.detector = DetectorConfig(kind="confidence", epochs=40, quantile=None,
                                  train_fraction=1.0)
    cfg.guidance = GuidanceConfig(gamma=0.9, s_clip_min=1.5, s_clip_max=50.0)
    return cfg


PRESETS = {
    "toy-moons-50sym": preset_toy_moons_50sym,
    "gauss2-analytic": preset_gauss2_analytic,
    "idn-40": preset_idn_40,
}


# -- parsing ---------------------------------------------------------------------

def _coerce(value, current):
    if isinstance(current, bool):
        if str(value).lower() in ("1", "true", "yes", "on"):
            return True
        if str(value).lower() in ("0", "false", "no", "off"):
            return False
        raise ConfigError(f"expected a boolean, got {value!r}")
    if isinstance(current, int) and not isinstance(current, bool):
        return int(value)
    if isinstance(current, float):
        return float(value)
    if isinstance(current, (list, dict)) or current is None:
        return json.loads(value) if isinstance(value, str) else value
    return str(value)


_SECTION_FIELDS = {
    "dataset": ("dataset", DatasetConfig),
    "noise": ("noise", NoiseConfig),
    "schedule": ("schedule", NoiseSchedule),
    "score_model": ("score_model", ModelConfig),
    "disc_model": ("disc_model", ModelConfig),
    "train_score": ("train_score", TrainConfig),
    "train_disc": ("train_disc", TrainConfig),
    "detector": ("detector", DetectorConfig),
    "augment": ("augment", AugmentConfig),
    "guidance": ("guidance", GuidanceConfig),
    "sampling": ("sampling", SamplingConfig),
}


def _apply_section(cfg, section, items):
    if section == "run":
        for key, value in items:
            if key == "seed":
                cfg.seed = int(value)
            elif key == "jobs":
                cfg.jobs = int(value)
            elif key == "metrics_k":
                cfg.metrics_k = int(value)
            else:
                raise ConfigError(f"unknown key {key!r} in section [run]")
        return
    if section not in _SECTION_FIELDS:
        raise ConfigError(
            f"unknown section [{section}]; expected one of "
            f"{sorted([*_SECTION_FIELDS, 'run'])}")
    attr, _ = _SECTION_FIELDS[section]
    target = getattr(cfg, attr)
    for key, value in items:
        if key == "flip_map" and section == "noise":
            raw = json.loads(value) if isinstance(value, str) else value
            target.flip_map = {int(k): int(v) for k, v in raw.items()}
            continue
        if not hasattr(target, key):
            raise ConfigError(f"unknown key {key!r} in section [{section}]")
        try:
            setattr(target, key, _coerce(value, getattr(target, key)))
        except (ValueError, json.JSONDecodeError) as err:
            raise ConfigError(f"bad value for [{section}] {key}: {value!r}") from err


def load_config(source=None, preset=None):
    """Build a RunConfig from a preset name and/or a config file path.

    ``source`` may be an INI-style path, a JSON path, or a preset name. File
    values override the preset baseline.
    """
    if preset is not None:
        if preset not in PRESETS:
            raise ConfigError(f"unknown preset {preset!r}; choose from {sorted(PRESETS)}")
        cfg = PRESETS[preset]()
    else:
        cfg = preset_toy_moons_50sym()
    if source is None:
        return _validate(cfg)
    if str(source) in PRESETS:
        return _validate(PRESETS[str(source)]())
    text = open(source).read()
    if text.lstrip().startswith("{"):
        doc = json.loads(text)
        for section, payload in doc.items():
            _apply_section(cfg, section, list(payload.items()))
    else:
        parser = configparser.ConfigParser()
        try:
            parser.read_string(text)
        except configparser.Error as err:
            raise ConfigError(f"cannot parse config {source}: {err}") from err
        for section in parser.sections():
            _apply_section(cfg, section, parser.items(section))
    return _validate(cfg)


def _validate(cfg):
    from .data import NOISE_KINDS

    if cfg.noise.kind not in NOISE_KINDS:
        raise ConfigError(
            f"unknown noise kind {cfg.noise.kind!r}; expected one of {NOISE_KINDS}")
    if cfg.dataset.kind not in ("two_moons", "gaussian_mixture"):
        raise ConfigError(f"unknown dataset kind {cfg.dataset.kind!r}")
    if cfg.detector.kind not in ("confidence", "oracle_with_errors"):
        raise ConfigError(f"unknown detector kind {cfg.detector.kind!r}")
    if not 0.0 < cfg.detector.train_fraction <= 1.0:
        raise ConfigError("detector train_fraction must lie in (0, 1]")
    return cfg
