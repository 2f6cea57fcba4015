import numpy as np
import pytest
import torch
from dataclasses import replace

from catd.bold_latent import (
    BOLDFrameSequence,
    BoldVAE,
    LatentGrid,
    VAETrainConfig,
    kl_standard_normal,
    normalize_frames,
    patchify,
    reconstruction_mse,
    sample_latent,
    train_vae,
    unpatchify,
    vae_decode,
    vae_elbo_loss,
    vae_encode,
)
from catd.errors import ConfigurationError, InputError
from catd.synthgen import SynthConfig, generate_paired_session

from fd_oracle import check_gradients


class TestPatchify:
    def test_token_arithmetic(self):
        latent = LatentGrid(np.arange(8 * 8 * 4, dtype=np.float64).reshape(8, 8, 4))
        tokens = patchify(latent, 2)
        assert tokens.tokens.shape == (16, 16)

    def test_round_trip_bit_exact(self):
        rng = np.random.default_rng(0)
        latent = LatentGrid(rng.standard_normal((8, 8, 4)))
        back = unpatchify(patchify(latent, 2))
        assert np.array_equal(back.values, latent.values)

    def test_patch_one_degenerates_to_cells(self):
        latent = LatentGrid(np.arange(4 * 4 * 3, dtype=np.float64).reshape(4, 4, 3))
        tokens = patchify(latent, 1)
        assert tokens.tokens.shape == (16, 3)
        assert np.array_equal(tokens.tokens[0], latent.values[0, 0])

    def test_row_major_patch_order(self):
        latent = LatentGrid(np.arange(4 * 4 * 1, dtype=np.float64).reshape(4, 4, 1))
        tokens = patchify(latent, 2)
        # first token is the top-left 2x2 patch, row-major
        assert np.array_equal(tokens.tokens[0], [0.0, 1.0, 4.0, 5.0])
        # second token is the top-right patch
        assert np.array_equal(tokens.tokens[1], [2.0, 3.0, 6.0, 7.0])

    def test_non_divisible_rejected(self):
        with pytest.raises(ConfigurationError):
            patchify(LatentGrid(np.zeros((5, 4, 2))), 2)


@pytest.fixture(scope="module")
def small_vae():
    torch.manual_seed(0)
    return BoldVAE(16, 16, downsample_factor=4, latent_channels=4, hidden=8).eval()


class TestVAEBasics:
    def test_encode_shapes(self, small_vae):
        frame = np.random.default_rng(0).standard_normal((16, 16))
        mean, logvar = vae_encode(small_vae, frame)
        assert mean.values.shape == (4, 4, 4)
        assert logvar.values.shape == (4, 4, 4)

    def test_encode_deterministic(self, small_vae):
        frame = np.random.default_rng(1).standard_normal((16, 16))
        m1, lv1 = vae_encode(small_vae, frame)
        m2, lv2 = vae_encode(small_vae, frame)
        assert np.array_equal(m1.values, m2.values)
        assert np.array_equal(lv1.values, lv2.values)

    def test_decode_shape_and_determinism(self, small_vae):
        latent = LatentGrid(np.random.default_rng(2).standard_normal((4, 4, 4)))
        f1 = vae_decode(small_vae, latent)
        f2 = vae_decode(small_vae, latent)
        assert f1.shape == (16, 16)
        assert np.array_equal(f1, f2)
        assert np.all(np.isfinite(f1))

    def test_latent_strictly_smaller_than_frame(self, small_vae):
        h, w, c = small_vae.latent_shape
        assert h * w * c < small_vae.map_height * small_vae.map_width

    def test_shape_mismatch_rejected(self, small_vae):
        with pytest.raises(ConfigurationError):
            vae_encode(small_vae, np.zeros((8, 8)))
        with pytest.raises(ConfigurationError):
            vae_decode(small_vae, LatentGrid(np.zeros((2, 2, 4))))

    def test_reparameterized_sample_spread(self, small_vae):
        mean = LatentGrid(np.zeros((4, 4, 4)))
        logvar = LatentGrid(np.zeros((4, 4, 4)))
        rng = np.random.default_rng(3)
        draws = np.stack(
            [sample_latent(mean, logvar, rng).values for _ in range(200)]
        )
        assert abs(draws.mean()) < 0.05
        assert abs(draws.std() - 1.0) < 0.05


class TestElboLoss:
    def test_kl_zero_for_standard_normal_posterior(self):
        mean = torch.zeros(3, 4)
        logvar = torch.zeros(3, 4)
        assert float(kl_standard_normal(mean, logvar)) == 0.0

    def test_kl_scalar_golden_value(self):
        # 0.5 * (mu^2 + sigma^2 - 1 - log sigma^2) with mu=1, logvar=0
        assert float(kl_standard_normal(torch.ones(1), torch.zeros(1))) == pytest.approx(0.5)

    def test_loss_nonnegative(self, small_vae):
        frames = torch.randn(2, 1, 16, 16, generator=torch.Generator().manual_seed(0))
        with torch.no_grad():
            loss, recon, kl = vae_elbo_loss(small_vae, frames, kl_weight=1e-3)
        assert float(loss) >= 0.0
        assert float(recon) >= 0.0
        assert float(kl) >= 0.0

    def test_bad_shape_rejected(self, small_vae):
        with pytest.raises(ConfigurationError):
            vae_elbo_loss(small_vae, torch.zeros(2, 16, 16))

    def test_gradient_matches_finite_differences(self):
        torch.manual_seed(1)
        vae = BoldVAE(8, 8, downsample_factor=2, latent_channels=2, hidden=4).double()
        frames = torch.randn(2, 1, 8, 8, generator=torch.Generator().manual_seed(2), dtype=torch.float64)
        noise = torch.randn(2, 2, 4, 4, generator=torch.Generator().manual_seed(3), dtype=torch.float64)
        check_gradients(
            vae,
            lambda: vae_elbo_loss(vae, frames, kl_weight=1e-2, noise=noise)[0],
            n_params=20,
        )


@pytest.fixture(scope="module")
def trained():
    cfg = SynthConfig(duration_s=160.0, map_height=16, map_width=16, seed=11)
    frames, _, _ = normalize_frames(generate_paired_session(cfg).bold.frames)
    holdout_cfg = replace(cfg, seed=12)
    holdout, _, _ = normalize_frames(
        generate_paired_session(holdout_cfg).bold.frames
    )
    vae, history = train_vae(frames, VAETrainConfig(hidden=16, epochs=50, seed=0))
    return vae, history, holdout


class TestTrainVae:
    def test_holdout_round_trip_error(self, trained):
        vae, _, holdout = trained
        assert reconstruction_mse(vae, holdout) < 0.05 * holdout.var()

    def test_smoothed_loss_non_increasing(self, trained):
        _, history, _ = trained
        smooth = np.convolve(history, np.ones(10) / 10.0, mode="valid")
        assert np.all(np.diff(smooth) <= 0.02 * smooth[:-1])
        assert smooth[-1] < smooth[0]

    def test_empty_dataset_rejected(self):
        with pytest.raises(InputError):
            train_vae(np.zeros((0, 16, 16)), VAETrainConfig(epochs=1))

    def test_seeded_determinism(self):
        rng = np.random.default_rng(0)
        frames = rng.standard_normal((8, 16, 16))
        cfg = VAETrainConfig(hidden=4, epochs=2, seed=9)
        _, h1 = train_vae(frames, cfg)
        _, h2 = train_vae(frames, cfg)
        assert np.array_equal(h1, h2)


class TestNormalizeFrames:
    def test_zero_mean_unit_variance(self):
        frames = np.random.default_rng(4).standard_normal((5, 6, 6)) * 3 + 2
        out, mean, std = normalize_frames(frames)
        assert out.mean() == pytest.approx(0.0, abs=1e-12)
        assert out.std() == pytest.approx(1.0)
        assert np.allclose(out * std + mean, frames)

    def test_constant_frames_no_divide_by_zero(self):
        out, mean, std = normalize_frames(np.full((3, 4, 4), 7.0))
        assert std == 1.0
        assert np.all(out == 0.0)

    def test_non_finite_frames_rejected(self):
        with pytest.raises(InputError):
            BOLDFrameSequence(np.full((2, 4, 4), np.nan), 2.0)
