"""Experiment configuration: one JSON document, dotted-path overrides.

``ExperimentConfig.validate`` cross-checks every shape relation (token
counts, widths, stride/sample-rate divisibility) before any compute
starts. The master ``seed`` drives all derived per-stage seeds; the
CATD_SEED environment variable overrides it at load time.
"""

from __future__ import annotations

import dataclasses
import json
import os
from dataclasses import dataclass, field
from pathlib import Path

from ..denoiser import DenoiserConfig
from ..diffusion import DiffusionTrainConfig, SamplerConfig
from ..eeg_cond import BAND_ORDER, BandSpec
from ..synthgen import SynthConfig
from ..bold_latent import VAETrainConfig
from ..errors import ConfigurationError

ABLATION_BANDS = list(BAND_ORDER) + ["full"]

# Deterministic per-stage seed offsets from the master seed.
SEED_OFFSETS = {
    "synth_train": 0,
    "synth_holdout": 1,
    "vae": 2,
    "diffusion": 3,
    "generate": 4,
    "superres_session": 5,
    "superres_sample": 6,
    "classify": 7,
}


@dataclass
class DTFSConfig:
    window_s: float = 6.0
    stride_s: float | None = None  # defaults to the BOLD repetition interval
    band: str = "full"
    frame_len: int | None = None  # defaults to one second of samples
    hop: int | None = None  # defaults to frame_len // 2
    stft_window: str = "hann"


@dataclass
class ScheduleConfig:
    T: int = 200
    beta_start: float = 1e-4
    beta_end: float = 0.02


@dataclass
class ExperimentConfig:
    synth: SynthConfig = field(default_factory=SynthConfig)
    dtfs: DTFSConfig = field(default_factory=DTFSConfig)
    vae: VAETrainConfig = field(default_factory=VAETrainConfig)
    patch_size: int = 2
    denoiser: DenoiserConfig = field(default_factory=DenoiserConfig)
    schedule: ScheduleConfig = field(default_factory=ScheduleConfig)
    trainer: DiffusionTrainConfig = field(default_factory=DiffusionTrainConfig)
    sampler: SamplerConfig = field(default_factory=SamplerConfig)
    output_dir: str = "out"
    seed: int = 0

    # ----- derived quantities -----

    def stride_s(self) -> float:
        return self.synth.tr_s if self.dtfs.stride_s is None else self.dtfs.stride_s

    def frame_len(self) -> int:
        if self.dtfs.frame_len is not None:
            return self.dtfs.frame_len
        return int(round(self.synth.sample_rate_hz))

    def hop(self) -> int:
        return self.frame_len() // 2 if self.dtfs.hop is None else self.dtfs.hop

    def stage_seed(self, stage: str) -> int:
        return self.seed + SEED_OFFSETS[stage]

    def latent_shape(self) -> tuple[int, int, int]:
        f = self.vae.downsample_factor
        return (
            self.synth.map_height // f,
            self.synth.map_width // f,
            self.vae.latent_channels,
        )

    # ----- validation -----

    def validate(self) -> None:
        self.synth.validate()
        self.denoiser.validate()
        self.sampler.validate()
        if self.patch_size < 1:
            raise ConfigurationError("patch_size must be >= 1")
        if self.schedule.T < 1:
            raise ConfigurationError("schedule.T must be >= 1")
        if not (0 < self.schedule.beta_start <= self.schedule.beta_end < 1):
            raise ConfigurationError("schedule betas must satisfy 0 < start <= end < 1")
        if self.schedule.T != self.denoiser.max_timestep:
            raise ConfigurationError(
                f"schedule.T={self.schedule.T} must equal "
                f"denoiser.max_timestep={self.denoiser.max_timestep}"
            )

        fs = self.synth.sample_rate_hz
        f = self.vae.downsample_factor
        if self.synth.map_height % f or self.synth.map_width % f:
            raise ConfigurationError("map dims must be divisible by the VAE factor")
        lh, lw, lc = self.latent_shape()
        if lh % self.patch_size or lw % self.patch_size:
            raise ConfigurationError(
                f"latent grid ({lh}, {lw}) not divisible by patch {self.patch_size}"
            )
        token_count = (lh // self.patch_size) * (lw // self.patch_size)
        token_width = self.patch_size**2 * lc
        if self.denoiser.token_count != token_count:
            raise ConfigurationError(
                f"denoiser.token_count={self.denoiser.token_count} but the "
                f"latent patch grid yields {token_count} tokens"
            )
        if self.denoiser.token_width != token_width:
            raise ConfigurationError(
                f"denoiser.token_width={self.denoiser.token_width} but patches "
                f"are {token_width} wide"
            )
        if lh * lw * lc >= self.synth.map_height * self.synth.map_width:
            raise ConfigurationError("VAE latent must be smaller than the frame")

        cond_dim = self.synth.n_channels * len(BAND_ORDER)
        if self.denoiser.cond_feature_dim != cond_dim:
            raise ConfigurationError(
                f"denoiser.cond_feature_dim={self.denoiser.cond_feature_dim} but "
                f"{self.synth.n_channels} channels x {len(BAND_ORDER)} bands "
                f"gives {cond_dim}"
            )

        if self.dtfs.band not in ABLATION_BANDS:
            raise ConfigurationError(
                f"dtfs.band must be one of {ABLATION_BANDS}, got {self.dtfs.band!r}"
            )
        BandSpec.from_name(self.dtfs.band).validate_against(fs)
        win_n = self.dtfs.window_s * fs
        if abs(win_n - round(win_n)) > 1e-9:
            raise ConfigurationError("dtfs.window_s must be whole EEG samples")
        stride_n = self.stride_s() * fs
        if abs(stride_n - round(stride_n)) > 1e-9:
            raise ConfigurationError(
                "DTFS stride times the sample rate must be an integer"
            )
        if self.frame_len() > int(round(win_n)):
            raise ConfigurationError("STFT frame_len exceeds the DTFS window")
        if not (0 < self.hop() <= self.frame_len()):
            raise ConfigurationError("need 0 < hop <= frame_len")
        if self.synth.duration_s < self.dtfs.window_s + self.synth.tr_s:
            raise ConfigurationError(
                "session too short for one full EEG window plus a paired frame"
            )
        superres_stride = self.synth.tr_s / self.sampler.group_size * fs
        if abs(superres_stride - round(superres_stride)) > 1e-9:
            raise ConfigurationError(
                "tr_s / sampler.group_size must be whole EEG samples "
                "(needed by the super-resolution stride)"
            )


def default_config() -> ExperimentConfig:
    """Desk-scale defaults: every mechanism exercised at minimum size."""
    return ExperimentConfig()


# ----- JSON (de)serialization and dotted overrides -----


def _to_jsonable(obj):
    if dataclasses.is_dataclass(obj) and not isinstance(obj, type):
        return {f.name: _to_jsonable(getattr(obj, f.name)) for f in dataclasses.fields(obj)}
    if isinstance(obj, dict):
        return {k: _to_jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_to_jsonable(v) for v in obj]
    return obj


def config_to_dict(cfg: ExperimentConfig) -> dict:
    return _to_jsonable(cfg)


def config_from_dict(data: dict) -> ExperimentConfig:
    def build(cls, section):
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(section) - known
        if unknown:
            raise ConfigurationError(
                f"unknown {cls.__name__} fields: {sorted(unknown)}"
            )
        return cls(**section)

    data = dict(data)
    kwargs = {}
    sections = {
        "synth": SynthConfig,
        "dtfs": DTFSConfig,
        "vae": VAETrainConfig,
        "denoiser": DenoiserConfig,
        "schedule": ScheduleConfig,
        "trainer": DiffusionTrainConfig,
        "sampler": SamplerConfig,
    }
    for name, cls in sections.items():
        if name in data:
            kwargs[name] = build(cls, data.pop(name))
    for name in ("patch_size", "output_dir", "seed"):
        if name in data:
            kwargs[name] = data.pop(name)
    if data:
        raise ConfigurationError(f"unknown config sections: {sorted(data)}")
    return ExperimentConfig(**kwargs)


def apply_override(cfg: ExperimentConfig, dotted: str, raw_value: str) -> None:
    """Set a config field by dotted path; value parsed as JSON when possible."""
    try:
        value = json.loads(raw_value)
    except json.JSONDecodeError:
        value = raw_value
    parts = dotted.split(".")
    target = cfg
    for part in parts[:-1]:
        if not hasattr(target, part):
            raise ConfigurationError(f"unknown config path {dotted!r}")
        target = getattr(target, part)
    leaf = parts[-1]
    if isinstance(target, dict):
        target[leaf] = value
        return
    if not hasattr(target, leaf):
        raise ConfigurationError(f"unknown config path {dotted!r}")
    setattr(target, leaf, value)


def load_config(path: str | None, overrides: list[str] | None = None) -> ExperimentConfig:
    """Load (or default) a config, apply --set overrides and CATD_SEED."""
    if path is None:
        cfg = default_config()
    else:
        p = Path(path)
        if not p.is_file():
            raise ConfigurationError(f"config file not found: {path}")
        cfg = config_from_dict(json.loads(p.read_text()))
    for item in overrides or []:
        if "=" not in item:
            raise ConfigurationError(f"--set expects key=value, got {item!r}")
        key, _, value = item.partition("=")
        apply_override(cfg, key.strip(), value.strip())
    env_seed = os.environ.get("CATD_SEED")
    if env_seed is not None:
        try:
            cfg.seed = int(env_seed)
        except ValueError as exc:
            raise ConfigurationError(f"CATD_SEED must be an integer: {env_seed!r}") from exc
    return cfg
