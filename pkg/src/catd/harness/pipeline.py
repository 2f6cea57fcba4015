"""Experiment orchestration: the command implementations behind the CLI.

Commands communicate through containers under the config's output
directory:

    dataset/                train + holdout paired sessions
    vae_ckpt/               trained VAE weights and normalization stats
    diffusion_ckpt/         denoiser weights, Adam state, schedule, scales
    diffusion_ckpt_no_cab/  same, CAB bypassed
    band_ckpt_<band>/       per-band ablation checkpoints
    generated/              decoded holdout frames from the trained model
    evaluation/             MetricReport + CVResult JSON
    superres/               constrained 3x temporal super-resolution run
    band_ablation.json      one metrics row per band
    report/                 metrics.json + metrics.csv + plots/*.svg
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import replace
from pathlib import Path

import numpy as np
import torch

from ..bold_latent import (
    BoldVAE,
    decode_tokens_to_frames,
    encode_frames_to_tokens,
    normalize_frames,
    reconstruction_mse,
    train_vae,
)
from ..denoiser import CATDenoiser, DenoiserConfig
from ..diffusion import (
    make_schedule,
    sample,
    sample_superres,
    train,
)
from ..eeg_cond import BandSpec, EEGRecording, bandpass_filter, condition_features, slide_sample
from ..errors import ConfigurationError, MissingPrerequisiteError
from ..metrics import (
    MetricReport,
    ccc,
    classify_kfold,
    cosine_similarity_ts,
    pearson,
    rmse,
    snr_db,
    ssim,
)
from ..synthgen import generate_paired_session
from .config import ABLATION_BANDS, ExperimentConfig, config_to_dict
from .container import container_content_hash, load_container, save_container


# ----- paths and provenance -----


def dataset_dir(cfg) -> Path:
    return Path(cfg.output_dir) / "dataset"


def vae_ckpt_dir(cfg) -> Path:
    return Path(cfg.output_dir) / "vae_ckpt"


def diffusion_ckpt_dir(cfg, use_cab: bool = True, band: str | None = None) -> Path:
    root = Path(cfg.output_dir)
    if band is not None:
        return root / f"band_ckpt_{band}"
    return root / ("diffusion_ckpt" if use_cab else "diffusion_ckpt_no_cab")


def _require(path: Path, what: str, producing_command: str) -> Path:
    if not (path / "manifest.json").is_file() and not path.is_file():
        raise MissingPrerequisiteError(
            f"{what} not found at {path}; run `catd {producing_command}` first"
        )
    return path


def _provenance(cfg: ExperimentConfig, inputs: dict[str, Path]) -> dict:
    return {
        "config": config_to_dict(cfg),
        "inputs": {name: container_content_hash(p) for name, p in inputs.items()},
    }


def _write_json(path: Path, payload: dict) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(payload, indent=2, sort_keys=True))
    return path


# ----- synth -----


def cmd_synth(cfg: ExperimentConfig) -> Path:
    cfg.validate()
    out = dataset_dir(cfg)
    arrays: dict[str, np.ndarray] = {}
    meta: dict = {
        "sample_rate_hz": cfg.synth.sample_rate_hz,
        "tr_s": cfg.synth.tr_s,
        "duration_s": cfg.synth.duration_s,
        "bands": cfg.synth.bands,
    }
    for prefix, stage in (("train", "synth_train"), ("holdout", "synth_holdout")):
        session = generate_paired_session(
            replace(cfg.synth, seed=cfg.stage_seed(stage))
        )
        arrays[f"{prefix}_eeg"] = session.eeg.samples.astype(np.float32)
        arrays[f"{prefix}_bold"] = session.bold.frames.astype(np.float32)
        for band, env in session.truth_envelopes.items():
            arrays[f"{prefix}_envelope_{band}"] = env.astype(np.float64)
        meta[f"{prefix}_labels"] = session.frame_labels
        if prefix == "train":
            for band, w in session.spatial_weights.items():
                arrays[f"weights_{band}"] = w.astype(np.float64)
    meta["provenance"] = _provenance(cfg, {})
    return save_container(out, arrays, meta)


# ----- VAE -----


def cmd_train_vae(cfg: ExperimentConfig) -> Path:
    cfg.validate()
    ds_path = _require(dataset_dir(cfg), "dataset", "synth")
    arrays, ds_meta = load_container(ds_path)
    train_frames, mean, std = normalize_frames(arrays["train_bold"])
    holdout_frames, h_mean, h_std = normalize_frames(arrays["holdout_bold"])

    vae_cfg = replace(cfg.vae, seed=cfg.stage_seed("vae"))
    vae, history = train_vae(train_frames, vae_cfg)
    holdout_mse = reconstruction_mse(vae, holdout_frames)
    holdout_var = float(holdout_frames.var())

    ckpt_arrays = {
        f"param.{k}": v.detach().numpy() for k, v in vae.state_dict().items()
    }
    ckpt_arrays["epoch_loss"] = history.astype(np.float64)
    meta = {
        "map_height": vae.map_height,
        "map_width": vae.map_width,
        "downsample_factor": vae.downsample_factor,
        "latent_channels": vae.latent_channels,
        "hidden": cfg.vae.hidden,
        "train_norm_mean": mean,
        "train_norm_std": std,
        "holdout_norm_mean": h_mean,
        "holdout_norm_std": h_std,
        "holdout_recon_mse": holdout_mse,
        "holdout_frame_var": holdout_var,
        "seed": vae_cfg.seed,
        "provenance": _provenance(cfg, {"dataset": ds_path}),
    }
    return save_container(vae_ckpt_dir(cfg), ckpt_arrays, meta)


def load_vae(path: Path) -> tuple[BoldVAE, dict]:
    arrays, meta = load_container(path)
    vae = BoldVAE(
        meta["map_height"],
        meta["map_width"],
        meta["downsample_factor"],
        meta["latent_channels"],
        meta["hidden"],
    )
    state = {
        k[len("param.") :]: torch.from_numpy(v)
        for k, v in arrays.items()
        if k.startswith("param.")
    }
    vae.load_state_dict(state)
    vae.eval()
    return vae, meta


# ----- conditions -----


def build_condition_features(
    cfg: ExperimentConfig, eeg_samples: np.ndarray, band: str, stride_s: float
) -> np.ndarray:
    """Filter, window, and featurize one session's EEG -> (windows, tokens, dim)."""
    rec = EEGRecording(eeg_samples, cfg.synth.sample_rate_hz)
    rec = bandpass_filter(rec, BandSpec.from_name(band))
    wins = slide_sample(rec, stride_s=stride_s, window_s=cfg.dtfs.window_s)
    feats = [
        condition_features(
            w,
            cfg.frame_len(),
            cfg.hop(),
            cfg.denoiser.token_count,
            window=cfg.dtfs.stft_window,
        )
        for w in wins
    ]
    return np.stack(feats, axis=0)


def frame_offset(cfg: ExperimentConfig) -> int:
    """Index of the first BOLD frame with a full EEG window of history."""
    return int(round(cfg.dtfs.window_s / cfg.synth.tr_s))


# ----- diffusion training -----


def cmd_train_diffusion(
    cfg: ExperimentConfig,
    use_cab: bool = True,
    band: str | None = None,
    ckpt_path: Path | None = None,
) -> Path:
    cfg.validate()
    band = band if band is not None else cfg.dtfs.band
    ds_path = _require(dataset_dir(cfg), "dataset", "synth")
    vae_path = _require(vae_ckpt_dir(cfg), "VAE checkpoint", "train-vae")
    arrays, _ = load_container(ds_path)
    vae, vae_meta = load_vae(vae_path)

    frames = (arrays["train_bold"] - vae_meta["train_norm_mean"]) / vae_meta[
        "train_norm_std"
    ]
    x0_all = encode_frames_to_tokens(vae, frames, cfg.patch_size)
    token_scale = float(x0_all.std()) or 1.0
    cond_all = build_condition_features(
        cfg, arrays["train_eeg"], band, stride_s=cfg.stride_s()
    )
    offset = frame_offset(cfg)
    n_pairs = min(cond_all.shape[0], x0_all.shape[0] - offset)
    if n_pairs < 1:
        raise ConfigurationError("no aligned (window, frame) training pairs")
    x0 = x0_all[offset : offset + n_pairs] / token_scale
    cond = cond_all[:n_pairs]
    cond_mean = cond.mean(axis=(0, 1))
    cond_std = cond.std(axis=(0, 1))
    cond_std[cond_std == 0] = 1.0
    cond = (cond - cond_mean) / cond_std

    sched = make_schedule(
        cfg.schedule.T, cfg.schedule.beta_start, cfg.schedule.beta_end
    )
    trainer = replace(cfg.trainer, seed=cfg.stage_seed("diffusion"))
    torch.manual_seed(trainer.seed)  # weight init
    model = CATDenoiser(replace(cfg.denoiser, use_cab=use_cab))
    state = train(
        x0.astype(np.float32), cond.astype(np.float32), model, sched, trainer
    )

    ckpt_arrays = {
        f"param.{k}": v.detach().numpy() for k, v in model.state_dict().items()
    }
    opt_state = state.optimizer.state_dict()["state"]
    for idx, slots in opt_state.items():
        for slot in ("exp_avg", "exp_avg_sq", "step"):
            ckpt_arrays[f"adam.{idx}.{slot}"] = (
                slots[slot].detach().numpy().astype(np.float32)
            )
    ckpt_arrays["loss_history"] = np.asarray(state.loss_history, dtype=np.float64)
    ckpt_arrays["cond_mean"] = cond_mean.astype(np.float64)
    ckpt_arrays["cond_std"] = cond_std.astype(np.float64)
    meta = {
        "denoiser": dataclasses.asdict(replace(cfg.denoiser, use_cab=use_cab)),
        "schedule": dataclasses.asdict(cfg.schedule),
        "band": band,
        "token_scale": token_scale,
        "patch_size": cfg.patch_size,
        "step": state.step,
        "seed": trainer.seed,
        "provenance": _provenance(cfg, {"dataset": ds_path, "vae_ckpt": vae_path}),
    }
    out = ckpt_path or diffusion_ckpt_dir(cfg, use_cab=use_cab)
    return save_container(out, ckpt_arrays, meta)


def load_diffusion(path: Path):
    """Returns (model, schedule, metadata, cond stats)."""
    arrays, meta = load_container(path)
    model = CATDenoiser(DenoiserConfig(**meta["denoiser"]))
    state = {
        k[len("param.") :]: torch.from_numpy(v)
        for k, v in arrays.items()
        if k.startswith("param.")
    }
    model.load_state_dict(state)
    model.eval()
    sched = make_schedule(
        meta["schedule"]["T"],
        meta["schedule"]["beta_start"],
        meta["schedule"]["beta_end"],
    )
    return model, sched, meta, (arrays["cond_mean"], arrays["cond_std"])


# ----- generation -----


def cmd_generate(
    cfg: ExperimentConfig,
    ckpt_path: Path | None = None,
    out_name: str = "generated",
) -> Path:
    cfg.validate()
    ds_path = _require(dataset_dir(cfg), "dataset", "synth")
    vae_path = _require(vae_ckpt_dir(cfg), "VAE checkpoint", "train-vae")
    ckpt = ckpt_path or diffusion_ckpt_dir(cfg)
    _require(ckpt, "diffusion checkpoint", "train-diffusion")

    arrays, ds_meta = load_container(ds_path)
    vae, vae_meta = load_vae(vae_path)
    model, sched, diff_meta, (cond_mean, cond_std) = load_diffusion(ckpt)

    cond_all = build_condition_features(
        cfg, arrays["holdout_eeg"], diff_meta["band"], stride_s=cfg.stride_s()
    )
    offset = frame_offset(cfg)
    n = min(cond_all.shape[0], arrays["holdout_bold"].shape[0] - offset)
    cond = (cond_all[:n] - cond_mean) / cond_std

    tokens = sample(
        cond.astype(np.float32),
        model,
        sched,
        cfg.sampler,
        seed=cfg.stage_seed("generate"),
    )
    tokens = tokens * diff_meta["token_scale"]
    frames = decode_tokens_to_frames(vae, tokens, diff_meta["patch_size"])

    out = Path(cfg.output_dir) / out_name
    meta = {
        "frame_offset": offset,
        "n_frames": int(n),
        "seed": cfg.stage_seed("generate"),
        "mode": cfg.sampler.mode,
        "band": diff_meta["band"],
        "provenance": _provenance(
            cfg, {"dataset": ds_path, "vae_ckpt": vae_path, "diffusion_ckpt": ckpt}
        ),
    }
    return save_container(
        out,
        {
            "frames": frames.astype(np.float32),
            "tokens": tokens.astype(np.float32),
        },
        meta,
    )


# ----- evaluation -----


def _driven_mask(arrays: dict) -> np.ndarray:
    mask = None
    for name, arr in arrays.items():
        if name.startswith("weights_"):
            mask = (arr > 0) if mask is None else (mask | (arr > 0))
    if mask is None:
        raise MissingPrerequisiteError("dataset has no spatial weight maps")
    return mask


def evaluate_frames(
    truth: np.ndarray,
    generated: np.ndarray,
    driven_mask: np.ndarray,
    labels,
    classify_seed: int,
) -> tuple[MetricReport, dict]:
    """MetricReport + CVResult for aligned (frames, H, W) stacks."""
    if truth.shape != generated.shape:
        raise ConfigurationError(
            f"truth {truth.shape} and generated {generated.shape} disagree"
        )
    n = truth.shape[0]
    ts_truth = truth.reshape(n, -1).T  # (cells, time)
    ts_gen = generated.reshape(n, -1).T
    driven = driven_mask.ravel()

    snr_real = [snr_db(s) for s in ts_truth[driven]]
    snr_gen = [snr_db(s) for s in ts_gen[driven]]
    report = MetricReport(
        rmse=rmse(generated, truth),
        ssim=float(np.mean([ssim(g, t) for g, t in zip(generated, truth)])),
        cosine_similarity=cosine_similarity_ts(ts_gen, ts_truth),
        ccc=ccc(ts_gen, ts_truth),
        snr_db_real=float(np.mean([e.db for e in snr_real])),
        snr_db_synthetic=float(np.mean([e.db for e in snr_gen])),
        snr_real_capped=any(e.capped for e in snr_real),
        snr_synthetic_capped=any(e.capped for e in snr_gen),
    )
    cv = classify_kfold(generated.reshape(n, -1), labels, k=5, seed=classify_seed)
    return report, cv.to_dict()


def cmd_evaluate(
    cfg: ExperimentConfig,
    generated_name: str = "generated",
    out_name: str = "evaluation",
) -> Path:
    cfg.validate()
    ds_path = _require(dataset_dir(cfg), "dataset", "synth")
    gen_path = _require(Path(cfg.output_dir) / generated_name, "generated frames", "generate")
    arrays, ds_meta = load_container(ds_path)
    gen_arrays, gen_meta = load_container(gen_path)

    offset = gen_meta["frame_offset"]
    n = gen_meta["n_frames"]
    truth, _, _ = normalize_frames(arrays["holdout_bold"])
    # Compare at float32 resolution, the container precision.
    truth = truth[offset : offset + n].astype(np.float32).astype(np.float64)
    generated = gen_arrays["frames"].astype(np.float64)
    labels = ds_meta["holdout_labels"][offset : offset + n]

    report, cv = evaluate_frames(
        truth, generated, _driven_mask(arrays), labels, cfg.stage_seed("classify")
    )
    payload = {
        "metrics": report.to_dict(),
        "classification": cv,
        "provenance": _provenance(cfg, {"dataset": ds_path, "generated": gen_path}),
    }
    return _write_json(Path(cfg.output_dir) / out_name / "metrics.json", payload)


# ----- temporal super-resolution -----


def cmd_superres(cfg: ExperimentConfig) -> Path:
    cfg.validate()
    ds_path = _require(dataset_dir(cfg), "dataset", "synth")
    vae_path = _require(vae_ckpt_dir(cfg), "VAE checkpoint", "train-vae")
    ckpt = _require(diffusion_ckpt_dir(cfg), "diffusion checkpoint", "train-diffusion")
    arrays, _ = load_container(ds_path)
    vae, vae_meta = load_vae(vae_path)
    model, sched, diff_meta, (cond_mean, cond_std) = load_diffusion(ckpt)

    g = cfg.sampler.group_size
    tr = cfg.synth.tr_s
    fine_cfg = replace(
        cfg.synth, tr_s=tr / g, seed=cfg.stage_seed("superres_session")
    )
    fine = generate_paired_session(fine_cfg)
    # The hidden target is the underlying fine-grained signal, i.e. the
    # same session without observation noise on the BOLD side.
    clean = generate_paired_session(replace(fine_cfg, noise_std_bold=0.0))

    # Observed low-res session: every g-th fine frame.
    lowres_raw = fine.bold.frames[::g]
    lowres, lo_mean, lo_std = normalize_frames(lowres_raw)
    truth_fine = (clean.bold.frames - lo_mean) / lo_std

    lowres_tokens = (
        encode_frames_to_tokens(vae, lowres, cfg.patch_size)
        / diff_meta["token_scale"]
    )
    cond_all = build_condition_features(
        cfg, fine.eeg.samples, diff_meta["band"], stride_s=tr / g
    )
    offset_lo = frame_offset(cfg)  # low-res frames skipped for EEG history
    offset_fine = int(round(cfg.dtfs.window_s / (tr / g)))
    n_groups = min(cond_all.shape[0] // g, lowres_tokens.shape[0] - offset_lo)
    if n_groups < 1:
        raise ConfigurationError("session too short for any super-res group")
    cond = (cond_all[: g * n_groups] - cond_mean) / cond_std
    anchors = lowres_tokens[offset_lo : offset_lo + n_groups]

    tokens = sample_superres(
        cond.astype(np.float32),
        anchors,
        model,
        sched,
        cfg.sampler,
        seed=cfg.stage_seed("superres_sample"),
    )
    tokens = tokens * diff_meta["token_scale"]
    frames_hi = decode_tokens_to_frames(vae, tokens, diff_meta["patch_size"])

    hidden = truth_fine[offset_fine : offset_fine + g * n_groups]
    observed = lowres[offset_lo : offset_lo + n_groups]
    nearest = np.repeat(observed, g, axis=0)

    driven = _driven_mask(arrays).ravel()
    flat = lambda f: f.reshape(f.shape[0], -1)[:, driven]
    corr_gen = pearson(flat(frames_hi), flat(hidden))
    corr_nearest = pearson(flat(nearest), flat(hidden))

    out = Path(cfg.output_dir) / "superres"
    meta = {
        "group_size": g,
        "n_groups": int(n_groups),
        "n_output_frames": int(g * n_groups),
        "frame_offset_lowres": offset_lo,
        "frame_offset_fine": offset_fine,
        "pearson_generated": corr_gen,
        "pearson_nearest": corr_nearest,
        "seed": cfg.stage_seed("superres_sample"),
        "provenance": _provenance(
            cfg, {"dataset": ds_path, "vae_ckpt": vae_path, "diffusion_ckpt": ckpt}
        ),
    }
    return save_container(
        out,
        {
            "highres_frames": frames_hi.astype(np.float32),
            "lowres_frames": observed.astype(np.float32),
            "hidden_truth_frames": hidden.astype(np.float32),
        },
        meta,
    )


# ----- ablations -----


def cmd_cab_ablation(cfg: ExperimentConfig) -> Path:
    ckpt = cmd_train_diffusion(cfg, use_cab=False)
    cmd_generate(cfg, ckpt_path=ckpt, out_name="generated_no_cab")
    return cmd_evaluate(
        cfg, generated_name="generated_no_cab", out_name="evaluation_no_cab"
    )


def cmd_band_ablation(cfg: ExperimentConfig) -> Path:
    cfg.validate()
    ds_path = _require(dataset_dir(cfg), "dataset", "synth")
    _require(vae_ckpt_dir(cfg), "VAE checkpoint", "train-vae")
    rows = []
    for band in ABLATION_BANDS:
        ckpt = cmd_train_diffusion(
            cfg, band=band, ckpt_path=diffusion_ckpt_dir(cfg, band=band)
        )
        gen_path = cmd_generate(cfg, ckpt_path=ckpt, out_name=f"band_generated_{band}")
        eval_path = cmd_evaluate(
            cfg,
            generated_name=f"band_generated_{band}",
            out_name=f"band_evaluation_{band}",
        )
        result = json.loads(eval_path.read_text())
        rows.append(
            {
                "band": band,
                "acc": result["classification"]["acc"],
                "f1": result["classification"]["f1"],
                "cosine_similarity": result["metrics"]["cosine_similarity"],
                "ccc": result["metrics"]["ccc"],
                "rmse": result["metrics"]["rmse"],
            }
        )
    payload = {
        "rows": rows,
        "provenance": _provenance(cfg, {"dataset": ds_path}),
    }
    return _write_json(Path(cfg.output_dir) / "band_ablation.json", payload)


# ----- report -----


def cmd_report(cfg: ExperimentConfig) -> Path:
    from .report import emit_report

    cfg.validate()
    root = Path(cfg.output_dir)
    results: dict = {"rows": [], "band_rows": [], "loss_curves": {}, "superres_overlay": []}
    inputs: dict[str, Path] = {}

    for name in ("evaluation", "evaluation_no_cab"):
        p = root / name / "metrics.json"
        if p.is_file():
            doc = json.loads(p.read_text())
            row = {"name": name}
            row.update(doc["metrics"])
            row.update({k: doc["classification"][k] for k in ("acc", "pre", "sen", "f1")})
            results["rows"].append(row)

    band_path = root / "band_ablation.json"
    if band_path.is_file():
        results["band_rows"] = json.loads(band_path.read_text())["rows"]

    vae_path = vae_ckpt_dir(cfg)
    if (vae_path / "manifest.json").is_file():
        arrays, _ = load_container(vae_path)
        results["loss_curves"]["vae"] = arrays["epoch_loss"].tolist()
        inputs["vae_ckpt"] = vae_path
    for label, use_cab in (("diffusion", True), ("diffusion_no_cab", False)):
        p = diffusion_ckpt_dir(cfg, use_cab=use_cab)
        if (p / "manifest.json").is_file():
            arrays, _ = load_container(p)
            results["loss_curves"][label] = arrays["loss_history"].tolist()
            inputs[label + "_ckpt"] = p

    sr_path = root / "superres"
    if (sr_path / "manifest.json").is_file():
        arrays, meta = load_container(sr_path)
        inputs["superres"] = sr_path
        g = meta["group_size"]
        tr = cfg.synth.tr_s
        t_lo = meta["frame_offset_lowres"] * tr + tr * np.arange(meta["n_groups"])
        t_hi = meta["frame_offset_fine"] * tr / g + (tr / g) * np.arange(
            meta["n_output_frames"]
        )
        hw = arrays["highres_frames"].shape[1:]
        cells = _overlay_cells(cfg, hw)
        for r, c in cells:
            results["superres_overlay"].append(
                {
                    "label": f"({r},{c})",
                    "lowres_t": t_lo.tolist(),
                    "lowres_y": arrays["lowres_frames"][:, r, c].tolist(),
                    "highres_t": t_hi.tolist(),
                    "highres_y": arrays["highres_frames"][:, r, c].tolist(),
                    "truth_t": t_hi.tolist(),
                    "truth_y": arrays["hidden_truth_frames"][:, r, c].tolist(),
                }
            )

    results["provenance"] = _provenance(cfg, inputs)
    out = root / "report"
    emit_report(results, out)
    return out


def _overlay_cells(cfg: ExperimentConfig, hw: tuple[int, int]) -> list[tuple[int, int]]:
    # One representative cell per state-coupled band region.
    from ..synthgen import band_region

    cells = []
    for band in ("beta", "gamma"):
        w = band_region(band, hw[0], hw[1])
        rows, cols = np.nonzero(w)
        if len(rows):
            cells.append((int(rows[len(rows) // 2]), int(cols[len(cols) // 2])))
    return cells


# ----- dispatch -----


COMMANDS = {
    "synth": cmd_synth,
    "train-vae": cmd_train_vae,
    "train-diffusion": cmd_train_diffusion,
    "generate": cmd_generate,
    "superres": cmd_superres,
    "band-ablation": cmd_band_ablation,
    "cab-ablation": cmd_cab_ablation,
    "evaluate": cmd_evaluate,
    "report": cmd_report,
}


def run_pipeline(cfg: ExperimentConfig, command: str):
    """Execute one named command; returns the primary artifact path."""
    if command not in COMMANDS:
        raise ConfigurationError(
            f"unknown command {command!r}; expected one of {sorted(COMMANDS)}"
        )
    return COMMANDS[command](cfg)
