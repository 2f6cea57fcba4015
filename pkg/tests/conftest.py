import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).parent))

from catd.denoiser import DenoiserConfig
from catd.harness.config import ExperimentConfig, ScheduleConfig
from catd.synthgen import SynthConfig


def micro_config(output_dir, seed=0) -> ExperimentConfig:
    """Smallest config that exercises the full pipeline in seconds."""
    cfg = ExperimentConfig(output_dir=str(output_dir), seed=seed)
    cfg.synth = SynthConfig(
        n_channels=4,
        duration_s=80.0,
        map_height=16,
        map_width=16,
        seed=seed,
    )
    cfg.vae.hidden = 8
    cfg.vae.epochs = 3
    cfg.denoiser = DenoiserConfig(
        depth=1,
        model_width=16,
        n_heads=2,
        token_count=4,
        token_width=16,
        max_timestep=5,
        cond_feature_dim=20,
    )
    cfg.schedule = ScheduleConfig(T=5, beta_start=1e-3, beta_end=0.05)
    cfg.trainer.steps = 3
    cfg.trainer.batch_size = 4
    return cfg
