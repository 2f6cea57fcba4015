import hashlib
import json
import os
from pathlib import Path

import numpy as np
import pytest

from catd.errors import (
    ConfigurationError,
    CorruptContainerError,
    InputError,
    MissingPrerequisiteError,
)
from catd.harness.cli import main as cli_main
from catd.harness.config import (
    apply_override,
    config_from_dict,
    config_to_dict,
    default_config,
    load_config,
)
from catd.harness.container import (
    container_content_hash,
    git_blob_sha1,
    load_container,
    save_container,
)
from catd.harness.pipeline import (
    cmd_band_ablation,
    cmd_evaluate,
    cmd_synth,
    cmd_train_vae,
    dataset_dir,
    frame_offset,
    run_pipeline,
)
from catd.harness.report import emit_report
from catd.bold_latent import normalize_frames

from conftest import micro_config


class TestContainer:
    def test_round_trip_bit_exact(self, tmp_path):
        rng = np.random.default_rng(0)
        arrays = {
            "a32": rng.standard_normal((3, 4)).astype(np.float32),
            "b64": rng.standard_normal((2, 2, 2)),
        }
        meta = {"note": "x", "n": 3}
        save_container(tmp_path / "c", arrays, meta)
        loaded, loaded_meta = load_container(tmp_path / "c")
        for k in arrays:
            assert loaded[k].tobytes() == arrays[k].tobytes()
            assert loaded[k].dtype == arrays[k].dtype
        assert loaded_meta == meta

    def test_payload_is_headerless_little_endian(self, tmp_path):
        arr = np.arange(6, dtype=np.float32).reshape(2, 3)
        save_container(tmp_path / "c", {"x": arr})
        payload = (tmp_path / "c" / "x.bin").read_bytes()
        assert len(payload) == 24
        assert payload == arr.astype("<f4").tobytes()

    def test_missing_payload_names_array(self, tmp_path):
        save_container(tmp_path / "c", {"gone": np.zeros(3, dtype=np.float32)})
        (tmp_path / "c" / "gone.bin").unlink()
        with pytest.raises(CorruptContainerError, match="gone"):
            load_container(tmp_path / "c")

    def test_checksum_mismatch_detected(self, tmp_path):
        save_container(tmp_path / "c", {"x": np.zeros(4, dtype=np.float32)})
        p = tmp_path / "c" / "x.bin"
        raw = bytearray(p.read_bytes())
        raw[0] ^= 0xFF
        p.write_bytes(bytes(raw))
        with pytest.raises(CorruptContainerError, match="x"):
            load_container(tmp_path / "c")

    def test_wrong_length_detected(self, tmp_path):
        save_container(tmp_path / "c", {"x": np.zeros(4, dtype=np.float32)})
        p = tmp_path / "c" / "x.bin"
        p.write_bytes(p.read_bytes()[:-4])
        with pytest.raises(CorruptContainerError, match="x"):
            load_container(tmp_path / "c")

    def test_non_float_rejected(self, tmp_path):
        with pytest.raises(InputError):
            save_container(tmp_path / "c", {"x": np.zeros(3, dtype=np.int64)})

    def test_non_finite_rejected(self, tmp_path):
        with pytest.raises(InputError):
            save_container(tmp_path / "c", {"x": np.array([np.nan])})

    def test_bad_name_rejected(self, tmp_path):
        with pytest.raises(InputError):
            save_container(tmp_path / "c", {"a/b": np.zeros(1)})

    def test_git_blob_hash_matches_git_convention(self, tmp_path):
        p = tmp_path / "f.txt"
        p.write_bytes(b"hello\n")
        # sha1('blob 6\0hello\n') is a well-known git test vector
        assert git_blob_sha1(p) == "ce013625030ba8dba906f756967f9e9ca394464a"


class TestConfig:
    def test_default_config_validates(self):
        default_config().validate()

    def test_token_count_mismatch_rejected(self):
        cfg = default_config()
        cfg.denoiser.token_count = 15
        with pytest.raises(ConfigurationError, match="token_count"):
            cfg.validate()

    def test_token_width_mismatch_rejected(self):
        cfg = default_config()
        cfg.denoiser.token_width = 12
        with pytest.raises(ConfigurationError, match="token_width"):
            cfg.validate()

    def test_cond_dim_mismatch_rejected(self):
        cfg = default_config()
        cfg.synth.n_channels = 6
        with pytest.raises(ConfigurationError, match="cond_feature_dim"):
            cfg.validate()

    def test_schedule_denoiser_T_consistency(self):
        cfg = default_config()
        cfg.schedule.T = 100
        with pytest.raises(ConfigurationError, match="max_timestep"):
            cfg.validate()

    def test_json_round_trip(self):
        cfg = default_config()
        cfg.trainer.steps = 99
        clone = config_from_dict(json.loads(json.dumps(config_to_dict(cfg))))
        assert config_to_dict(clone) == config_to_dict(cfg)

    def test_overrides_parse_json_values(self):
        cfg = default_config()
        apply_override(cfg, "trainer.steps", "250")
        apply_override(cfg, "dtfs.band", "beta")
        apply_override(cfg, "sampler.lowres_lambda", "0.7")
        apply_override(cfg, "denoiser.use_cab", "false")
        assert cfg.trainer.steps == 250
        assert cfg.dtfs.band == "beta"
        assert cfg.sampler.lowres_lambda == 0.7
        assert cfg.denoiser.use_cab is False

    def test_unknown_override_path_rejected(self):
        with pytest.raises(ConfigurationError):
            apply_override(default_config(), "trainer.warp", "1")

    def test_env_seed_override(self, monkeypatch, tmp_path):
        monkeypatch.setenv("CATD_SEED", "77")
        cfg = load_config(None, [])
        assert cfg.seed == 77

    def test_bad_env_seed_rejected(self, monkeypatch):
        monkeypatch.setenv("CATD_SEED", "abc")
        with pytest.raises(ConfigurationError):
            load_config(None, [])

    def test_missing_config_file_rejected(self):
        with pytest.raises(ConfigurationError):
            load_config("/nonexistent/cfg.json", [])

    def test_unknown_section_rejected(self):
        with pytest.raises(ConfigurationError):
            config_from_dict({"warp": {}})


class TestPipelineIdentity:
    def test_synth_then_evaluate_identical_copies(self, tmp_path):
        cfg = micro_config(tmp_path / "out", seed=1)
        cmd_synth(cfg)
        arrays, meta = load_container(dataset_dir(cfg))
        offset = frame_offset(cfg)
        truth, _, _ = normalize_frames(arrays["holdout_bold"])
        n = truth.shape[0] - offset
        frames = truth[offset : offset + n].astype(np.float32)
        save_container(
            Path(cfg.output_dir) / "generated",
            {"frames": frames, "tokens": np.zeros((n, 4, 16), dtype=np.float32)},
            {"frame_offset": offset, "n_frames": n, "seed": 0, "mode": "paper-mean", "band": "full"},
        )
        out = cmd_evaluate(cfg)
        doc = json.loads(Path(out).read_text())
        assert doc["metrics"]["rmse"] == 0.0
        assert doc["metrics"]["ssim"] == pytest.approx(1.0, abs=1e-9)
        assert doc["metrics"]["ccc"] == pytest.approx(1.0, abs=1e-9)
        assert doc["metrics"]["cosine_similarity"] == pytest.approx(1.0, abs=1e-9)
        assert doc["metrics"]["snr_db_real"] == doc["metrics"]["snr_db_synthetic"]

    def test_missing_prerequisites_reported(self, tmp_path):
        cfg = micro_config(tmp_path / "out", seed=2)
        with pytest.raises(MissingPrerequisiteError, match="synth"):
            cmd_train_vae(cfg)
        cmd_synth(cfg)
        with pytest.raises(MissingPrerequisiteError, match="train-vae"):
            run_pipeline(cfg, "train-diffusion")
        cmd_train_vae(cfg)
        with pytest.raises(MissingPrerequisiteError, match="train-diffusion"):
            run_pipeline(cfg, "generate")

    def test_unknown_command_rejected(self, tmp_path):
        with pytest.raises(ConfigurationError):
            run_pipeline(micro_config(tmp_path), "transmogrify")


class TestBandAblation:
    def test_emits_six_rows(self, tmp_path):
        cfg = micro_config(tmp_path / "out", seed=3)
        cmd_synth(cfg)
        cmd_train_vae(cfg)
        out = cmd_band_ablation(cfg)
        doc = json.loads(Path(out).read_text())
        bands = [row["band"] for row in doc["rows"]]
        assert bands == ["delta", "theta", "alpha", "beta", "gamma", "full"]
        for row in doc["rows"]:
            for key in ("acc", "f1", "cosine_similarity", "ccc", "rmse"):
                assert np.isfinite(row[key])


class TestEmitReport:
    def test_empty_results(self, tmp_path):
        emit_report({}, tmp_path / "report")
        doc = json.loads((tmp_path / "report" / "metrics.json").read_text())
        assert doc["rows"] == [] and doc["band_rows"] == []
        assert not (tmp_path / "report" / "plots").exists()

    def test_deterministic_bytes(self, tmp_path):
        results = {
            "provenance": {"config": {"seed": 1}, "inputs": {}},
            "rows": [{"name": "evaluation", "rmse": 0.5, "acc": 0.75}],
            "band_rows": [
                {"band": b, "acc": 0.5 + i / 10.0, "cosine_similarity": 0.6, "ccc": 0.4}
                for i, b in enumerate(["delta", "beta"])
            ],
            "loss_curves": {"diffusion": [3.0, 2.0, 1.0]},
        }
        emit_report(results, tmp_path / "r1")
        emit_report(results, tmp_path / "r2")
        for name in ("metrics.json", "metrics.csv", "plots/losses.svg", "plots/band_metrics.svg"):
            b1 = (tmp_path / "r1" / name).read_bytes()
            b2 = (tmp_path / "r2" / name).read_bytes()
            assert b1 == b2, name

    def test_provenance_embedded_everywhere(self, tmp_path):
        results = {
            "provenance": {"config": {"seed": 9}, "inputs": {"dataset": "abc123"}},
            "rows": [{"name": "evaluation", "rmse": 0.5}],
            "loss_curves": {"vae": [1.0, 0.5]},
        }
        emit_report(results, tmp_path / "r")
        assert "abc123" in (tmp_path / "r" / "metrics.json").read_text()
        assert "abc123" in (tmp_path / "r" / "metrics.csv").read_text()
        assert "abc123" in (tmp_path / "r" / "plots" / "losses.svg").read_text()

    def test_superres_overlay_plot_contract(self, tmp_path):
        results = {
            "superres_overlay": [
                {
                    "label": "(8,3)",
                    "lowres_t": [0.0, 2.0, 4.0],
                    "lowres_y": [0.1, 0.5, 0.3],
                    "highres_t": [0.0, 2.0 / 3, 4.0 / 3, 2.0, 8.0 / 3, 10.0 / 3, 4.0, 14.0 / 3, 16.0 / 3],
                    "highres_y": [0.1, 0.2, 0.4, 0.5, 0.45, 0.4, 0.3, 0.2, 0.1],
                    "truth_t": [0.0, 2.0 / 3, 4.0 / 3, 2.0, 8.0 / 3, 10.0 / 3, 4.0, 14.0 / 3, 16.0 / 3],
                    "truth_y": [0.12, 0.22, 0.42, 0.52, 0.44, 0.38, 0.28, 0.22, 0.12],
                }
            ]
        }
        emit_report(results, tmp_path / "r")
        svg = (tmp_path / "r" / "plots" / "superres_cell0.svg").read_text()
        assert svg.count("<circle") == 3  # low-res points
        assert svg.count("<polyline") == 2  # generated + truth curves
        assert "</svg>" in svg


def _tree_digest(root: Path) -> dict[str, str]:
    out = {}
    for p in sorted(root.rglob("*")):
        if p.is_file():
            out[str(p.relative_to(root))] = hashlib.sha256(p.read_bytes()).hexdigest()
    return out


class TestCli:
    def test_synth_exit_zero_and_deterministic(self, tmp_path):
        cfg_path = tmp_path / "cfg.json"
        cfg = micro_config(tmp_path / "o1", seed=4)
        cfg_path.write_text(json.dumps(config_to_dict(cfg)))
        assert cli_main(["synth", "--config", str(cfg_path)]) == 0
        assert (
            cli_main(
                ["synth", "--config", str(cfg_path), "--set", f"output_dir={tmp_path / 'o2'}"]
            )
            == 0
        )
        d1 = _tree_digest(tmp_path / "o1" / "dataset")
        d2 = _tree_digest(tmp_path / "o2" / "dataset")
        # manifests carry a config echo differing in output_dir; payloads must match
        assert {k: v for k, v in d1.items() if k.endswith(".bin")} == {
            k: v for k, v in d2.items() if k.endswith(".bin")
        }

    def test_validation_error_exit_code(self, tmp_path):
        cfg_path = tmp_path / "cfg.json"
        cfg = micro_config(tmp_path / "o", seed=5)
        cfg.denoiser.token_count = 3
        cfg_path.write_text(json.dumps(config_to_dict(cfg)))
        assert cli_main(["synth", "--config", str(cfg_path)]) == 2

    def test_missing_prerequisite_exit_code(self, tmp_path):
        cfg_path = tmp_path / "cfg.json"
        cfg = micro_config(tmp_path / "o", seed=6)
        cfg_path.write_text(json.dumps(config_to_dict(cfg)))
        assert cli_main(["generate", "--config", str(cfg_path)]) == 3

    def test_bad_override_exit_code(self, tmp_path):
        assert cli_main(["synth", "--set", "nope.nope=1"]) == 2

    def test_env_seed_changes_dataset(self, tmp_path, monkeypatch):
        cfg_path = tmp_path / "cfg.json"
        cfg = micro_config(tmp_path / "oa", seed=7)
        cfg_path.write_text(json.dumps(config_to_dict(cfg)))
        cli_main(["synth", "--config", str(cfg_path)])
        monkeypatch.setenv("CATD_SEED", "1234")
        cli_main(
            ["synth", "--config", str(cfg_path), "--set", f"output_dir={tmp_path / 'ob'}"]
        )
        a = (tmp_path / "oa" / "dataset" / "train_eeg.bin").read_bytes()
        b = (tmp_path / "ob" / "dataset" / "train_eeg.bin").read_bytes()
        assert a != b


class TestProvenance:
    def test_artifacts_embed_config_and_hashes(self, tmp_path):
        cfg = micro_config(tmp_path / "out", seed=8)
        cmd_synth(cfg)
        _, meta = load_container(dataset_dir(cfg))
        prov = meta["provenance"]
        assert prov["config"]["seed"] == 8
        assert prov["config"]["synth"]["duration_s"] == 80.0
        cmd_train_vae(cfg)
        _, vmeta = load_container(Path(cfg.output_dir) / "vae_ckpt")
        assert vmeta["provenance"]["inputs"]["dataset"] == container_content_hash(
            dataset_dir(cfg)
        )
