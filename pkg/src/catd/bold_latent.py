"""BOLD frame handling: session normalization, VAE reduction, patch tokens.

The VAE shrinks each cortical map by a power-of-two factor; its mean
latent is patchified row-major into the token sequence the diffusion
model denoises. patchify/unpatchify are exact inverses.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import torch
from torch import nn

from .errors import ConfigurationError, InputError


@dataclass
class BOLDFrameSequence:
    """Frames shaped (frame count, height, width) at repetition interval tr_s."""

    frames: np.ndarray
    tr_s: float
    t0_s: float = 0.0

    def __post_init__(self):
        self.frames = np.asarray(self.frames, dtype=np.float64)
        if self.frames.ndim != 3:
            raise InputError("BOLD frames must be (frames, height, width)")
        if not np.all(np.isfinite(self.frames)):
            raise InputError("BOLD frames contain non-finite values")
        if self.tr_s <= 0:
            raise ConfigurationError("tr_s must be positive")

    @property
    def n_frames(self) -> int:
        return self.frames.shape[0]

    @property
    def map_shape(self) -> tuple[int, int]:
        return self.frames.shape[1], self.frames.shape[2]


@dataclass
class LatentGrid:
    """VAE latent, ``values`` shaped (latent height, latent width, channels)."""

    values: np.ndarray


@dataclass
class LatentTokens:
    """Patchified latent: (token count, patch**2 * channels) tokens."""

    tokens: np.ndarray
    patch_size: int
    latent_shape: tuple[int, int, int]  # (h, w, c) needed to invert


def normalize_frames(frames: np.ndarray) -> tuple[np.ndarray, float, float]:
    """Session-level z-score; returns (normalized, mean, std)."""
    frames = np.asarray(frames, dtype=np.float64)
    mean = float(frames.mean())
    std = float(frames.std())
    if std == 0.0:
        std = 1.0
    return (frames - mean) / std, mean, std


def patchify(latent: LatentGrid, patch: int) -> LatentTokens:
    h, w, c = latent.values.shape
    if h % patch or w % patch:
        raise ConfigurationError(
            f"latent dims ({h}, {w}) not divisible by patch {patch}"
        )
    gh, gw = h // patch, w // patch
    v = latent.values.reshape(gh, patch, gw, patch, c)
    tokens = v.transpose(0, 2, 1, 3, 4).reshape(gh * gw, patch * patch * c)
    return LatentTokens(tokens, patch, (h, w, c))


def unpatchify(tokens: LatentTokens) -> LatentGrid:
    h, w, c = tokens.latent_shape
    p = tokens.patch_size
    gh, gw = h // p, w // p
    v = tokens.tokens.reshape(gh, gw, p, p, c)
    return LatentGrid(v.transpose(0, 2, 1, 3, 4).reshape(h, w, c))


class BoldVAE(nn.Module):
    """Small strided conv encoder/decoder for one-channel cortical maps."""

    def __init__(
        self,
        map_height: int,
        map_width: int,
        downsample_factor: int = 4,
        latent_channels: int = 4,
        hidden: int = 32,
    ):
        super().__init__()
        stages = math.log2(downsample_factor)
        if stages != int(stages) or downsample_factor < 2:
            raise ConfigurationError("downsample_factor must be a power of 2, >= 2")
        stages = int(stages)
        if map_height % downsample_factor or map_width % downsample_factor:
            raise ConfigurationError(
                "map dims must be divisible by the downsample factor"
            )
        self.map_height = map_height
        self.map_width = map_width
        self.downsample_factor = downsample_factor
        self.latent_channels = latent_channels

        enc, ch = [], 1
        for s in range(stages):
            out = hidden * (2**s)
            enc += [nn.Conv2d(ch, out, 3, stride=2, padding=1), nn.SiLU()]
            ch = out
        enc.append(nn.Conv2d(ch, 2 * latent_channels, 3, padding=1))
        self.encoder = nn.Sequential(*enc)

        dec = [nn.Conv2d(latent_channels, ch, 3, padding=1), nn.SiLU()]
        for s in reversed(range(stages)):
            out = hidden * (2 ** (s - 1)) if s > 0 else hidden
            dec += [nn.ConvTranspose2d(ch, out, 4, stride=2, padding=1), nn.SiLU()]
            ch = out
        dec.append(nn.Conv2d(ch, 1, 3, padding=1))
        self.decoder = nn.Sequential(*dec)

    @property
    def latent_shape(self) -> tuple[int, int, int]:
        f = self.downsample_factor
        return self.map_height // f, self.map_width // f, self.latent_channels

    def encode(self, x: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        mean, logvar = torch.chunk(self.encoder(x), 2, dim=1)
        return mean, logvar

    def decode(self, z: torch.Tensor) -> torch.Tensor:
        return self.decoder(z)


def _check_frame_shape(vae: BoldVAE, frame: np.ndarray) -> None:
    if frame.shape != (vae.map_height, vae.map_width):
        raise ConfigurationError(
            f"frame shape {frame.shape} does not match configured map "
            f"({vae.map_height}, {vae.map_width})"
        )


def vae_encode(vae: BoldVAE, frame: np.ndarray) -> tuple[LatentGrid, LatentGrid]:
    """Encode one frame to (mean, logvar) latent grids, HWC layout."""
    frame = np.asarray(frame, dtype=np.float64)
    _check_frame_shape(vae, frame)
    dtype = next(vae.parameters()).dtype
    with torch.no_grad():
        x = torch.from_numpy(frame).to(dtype)[None, None]
        mean, logvar = vae.encode(x)
    to_grid = lambda t: LatentGrid(t[0].permute(1, 2, 0).numpy().astype(np.float64))
    return to_grid(mean), to_grid(logvar)


def vae_decode(vae: BoldVAE, latent: LatentGrid) -> np.ndarray:
    """Decode a latent grid back to a (height, width) frame."""
    if latent.values.shape != vae.latent_shape:
        raise ConfigurationError(
            f"latent shape {latent.values.shape} does not match configured "
            f"{vae.latent_shape}"
        )
    dtype = next(vae.parameters()).dtype
    with torch.no_grad():
        z = torch.from_numpy(np.ascontiguousarray(latent.values)).to(dtype)
        z = z.permute(2, 0, 1)[None]
        frame = vae.decode(z)
    return frame[0, 0].numpy().astype(np.float64)


def sample_latent(
    mean: LatentGrid, logvar: LatentGrid, rng: np.random.Generator
) -> LatentGrid:
    """Reparameterized draw: mean + exp(logvar / 2) * xi."""
    xi = rng.standard_normal(mean.values.shape)
    return LatentGrid(mean.values + np.exp(0.5 * logvar.values) * xi)


def kl_standard_normal(mean: torch.Tensor, logvar: torch.Tensor) -> torch.Tensor:
    """Per-element KL(N(mean, exp(logvar)) || N(0, 1)), summed."""
    return 0.5 * torch.sum(mean**2 + torch.exp(logvar) - 1.0 - logvar)


def vae_elbo_loss(
    vae: BoldVAE,
    frames: torch.Tensor,
    kl_weight: float = 1e-3,
    noise: torch.Tensor | None = None,
) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
    """Reconstruction MSE + kl_weight * mean per-frame KL.

    ``noise`` enables the reparameterized draw; when omitted the mean
    latent is reconstructed, keeping the loss deterministic.
    """
    if frames.ndim != 4 or frames.shape[1] != 1:
        raise ConfigurationError("frames must be (batch, 1, height, width)")
    mean, logvar = vae.encode(frames)
    z = mean if noise is None else mean + torch.exp(0.5 * logvar) * noise
    recon = torch.mean((vae.decode(z) - frames) ** 2)
    kl = kl_standard_normal(mean, logvar) / frames.shape[0]
    return recon + kl_weight * kl, recon, kl


@dataclass
class VAETrainConfig:
    downsample_factor: int = 4
    latent_channels: int = 4
    hidden: int = 32
    lr: float = 2e-3
    batch_size: int = 16
    epochs: int = 60
    kl_weight: float = 1e-3
    seed: int = 0


def train_vae(
    frames: np.ndarray, cfg: VAETrainConfig
) -> tuple[BoldVAE, np.ndarray]:
    """Train on normalized frames (N, H, W); returns (model, per-epoch loss)."""
    frames = np.asarray(frames, dtype=np.float32)
    if frames.ndim != 3 or frames.shape[0] == 0:
        raise InputError("need a non-empty (N, H, W) frame stack")
    n, h, w = frames.shape
    torch.manual_seed(cfg.seed)
    vae = BoldVAE(h, w, cfg.downsample_factor, cfg.latent_channels, cfg.hidden)
    opt = torch.optim.Adam(vae.parameters(), lr=cfg.lr)
    gen = torch.Generator().manual_seed(cfg.seed)
    data = torch.from_numpy(frames)[:, None]

    history = []
    for _ in range(cfg.epochs):
        perm = torch.randperm(n, generator=gen)
        epoch_losses = []
        for start in range(0, n, cfg.batch_size):
            batch = data[perm[start : start + cfg.batch_size]]
            noise = torch.randn(
                (batch.shape[0], cfg.latent_channels) + tuple(vae.latent_shape[:2]),
                generator=gen,
            )
            loss, _, _ = vae_elbo_loss(vae, batch, cfg.kl_weight, noise=noise)
            opt.zero_grad()
            loss.backward()
            opt.step()
            epoch_losses.append(float(loss.detach()))
        history.append(float(np.mean(epoch_losses)))
    vae.eval()
    return vae, np.asarray(history)


def reconstruction_mse(vae: BoldVAE, frames: np.ndarray) -> float:
    """Mean squared error of decode(mean-encode(x)) over a frame stack."""
    frames = np.asarray(frames, dtype=np.float64)
    errs = []
    for frame in frames:
        mean, _ = vae_encode(vae, frame)
        errs.append(np.mean((vae_decode(vae, mean) - frame) ** 2))
    return float(np.mean(errs))


def encode_frames_to_tokens(
    vae: BoldVAE, frames: np.ndarray, patch: int
) -> np.ndarray:
    """Mean-latent tokens for a (N, H, W) stack -> (N, tokens, width)."""
    out = []
    for frame in np.asarray(frames, dtype=np.float64):
        mean, _ = vae_encode(vae, frame)
        out.append(patchify(mean, patch).tokens)
    return np.stack(out, axis=0)


def decode_tokens_to_frames(
    vae: BoldVAE, tokens: np.ndarray, patch: int
) -> np.ndarray:
    """Invert encode_frames_to_tokens for a (N, tokens, width) stack."""
    h, w, c = vae.latent_shape
    out = []
    for tok in tokens:
        grid = unpatchify(LatentTokens(np.asarray(tok, np.float64), patch, (h, w, c)))
        out.append(vae_decode(vae, grid))
    return np.stack(out, axis=0)
