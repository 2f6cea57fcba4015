"""Synthetic paired EEG/BOLD sessions with a known cross-modal coupling.

EEG is a sum of band-limited oscillations whose amplitudes follow an
alternating rest/task block schedule; BOLD at each driven grid cell is
the band-power envelope convolved with a double-gamma hemodynamic
response, sampled at the repetition interval. Everything is a pure
function of the config, so runs are bit-reproducible.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .bold_latent import BOLDFrameSequence
from .eeg_cond import BAND_EDGES, BAND_ORDER, EEGRecording
from .errors import ConfigurationError, InputError

REST, TASK = "rest", "task"

# Fixed oscillation frequency per band: the arithmetic band midpoint.
BAND_CENTERS_HZ = {name: (lo + hi) / 2.0 for name, (lo, hi) in BAND_EDGES.items()}

HRF_KERNEL_LEN_S = 32.0


def _default_band_powers() -> dict[str, dict[str, float]]:
    # beta desynchronizes during task, gamma rises; the three slow bands
    # are state-independent distractors.
    return {
        REST: {"delta": 0.6, "theta": 0.6, "alpha": 0.8, "beta": 1.0, "gamma": 0.3},
        TASK: {"delta": 0.6, "theta": 0.6, "alpha": 0.8, "beta": 0.35, "gamma": 1.0},
    }


@dataclass
class SynthConfig:
    n_channels: int = 8
    sample_rate_hz: float = 126.0
    duration_s: float = 320.0
    tr_s: float = 2.0
    map_height: int = 32
    map_width: int = 32
    band_powers_per_state: dict[str, dict[str, float]] = field(
        default_factory=_default_band_powers
    )
    hrf_peak_s: float = 6.0
    noise_std_eeg: float = 0.1
    noise_std_bold: float = 0.05
    block_len_s: float = 20.0
    seed: int = 0

    def validate(self) -> None:
        if self.n_channels < 1:
            raise ConfigurationError("need at least one EEG channel")
        for name, mult in (("tr_s", self.tr_s), ("block_len_s", self.block_len_s)):
            if mult <= 0:
                raise ConfigurationError(f"{name} must be positive")
            ratio = self.duration_s / mult
            if abs(ratio - round(ratio)) > 1e-9:
                raise ConfigurationError(
                    f"duration_s must be an integer multiple of {name}"
                )
        for t in (self.tr_s, self.block_len_s):
            n = t * self.sample_rate_hz
            if abs(n - round(n)) > 1e-9:
                raise ConfigurationError(
                    "tr_s and block_len_s must be whole numbers of EEG samples"
                )
        if self.noise_std_eeg < 0 or self.noise_std_bold < 0:
            raise ConfigurationError("noise std values must be >= 0")
        if self.hrf_peak_s <= 0:
            raise ConfigurationError("hrf_peak_s must be positive")
        states = set(self.band_powers_per_state)
        if states != {REST, TASK}:
            raise ConfigurationError(
                f"band_powers_per_state must define exactly {{{REST!r}, {TASK!r}}}"
            )
        hi_edges = [
            BAND_EDGES[band][1]
            for powers in self.band_powers_per_state.values()
            for band in powers
        ]
        if hi_edges and self.sample_rate_hz < 2.0 * max(hi_edges):
            raise ConfigurationError(
                f"sample_rate_hz {self.sample_rate_hz} violates Nyquist for the "
                f"highest band edge {max(hi_edges)} Hz"
            )

    @property
    def bands(self) -> list[str]:
        used = set()
        for powers in self.band_powers_per_state.values():
            used.update(powers)
        return [b for b in BAND_ORDER if b in used]


@dataclass
class PairedSession:
    eeg: EEGRecording
    bold: BOLDFrameSequence
    frame_labels: list[str]
    truth_envelopes: dict[str, np.ndarray]  # per-band power at EEG rate
    spatial_weights: dict[str, np.ndarray]  # per-band (H, W) weight map


def canonical_hrf(t, peak_s: float = 6.0):
    """Double-gamma hemodynamic response, peaking at ``peak_s`` seconds.

    Shape parameters 6 and 16 with a 1/6 undershoot ratio; the time
    scale is stretched so the positive lobe peaks at peak_s. Zero at the
    origin, decays toward zero after the undershoot.
    """
    if peak_s <= 0:
        raise ConfigurationError("peak_s must be positive")
    t = np.asarray(t, dtype=np.float64)
    if np.any(t < 0):
        raise InputError("canonical_hrf is defined for t >= 0 only")
    a1, a2, undershoot = 6.0, 16.0, 1.0 / 6.0
    b = peak_s / a1  # common time scale; peaks land at a*b
    d1, d2 = a1 * b, a2 * b
    with np.errstate(divide="ignore", invalid="ignore"):
        lobe = np.where(t > 0, (t / d1) ** a1 * np.exp((d1 - t) / b), 0.0)
        dip = np.where(t > 0, (t / d2) ** a2 * np.exp((d2 - t) / b), 0.0)
    out = lobe - undershoot * dip
    return out if out.ndim else float(out)


def block_schedule(duration_s: float, block_len_s: float, tr_s: float) -> list[str]:
    """Alternating rest/task labels, one per BOLD frame, starting at rest."""
    if block_len_s <= 0 or tr_s <= 0:
        raise ConfigurationError("block_len_s and tr_s must be positive")
    n_blocks = duration_s / block_len_s
    if abs(n_blocks - round(n_blocks)) > 1e-9:
        raise ConfigurationError(
            "duration_s must be an integer multiple of block_len_s"
        )
    frames_per_block = block_len_s / tr_s
    if abs(frames_per_block - round(frames_per_block)) > 1e-9:
        raise ConfigurationError(
            "block_len_s must be an integer multiple of tr_s"
        )
    labels = []
    for b in range(int(round(n_blocks))):
        labels += [REST if b % 2 == 0 else TASK] * int(round(frames_per_block))
    return labels


def _hrf_kernel(peak_s: float, fs: float) -> np.ndarray:
    # Unit-area kernel so driven BOLD stays on the envelope's scale.
    t = np.arange(0.0, HRF_KERNEL_LEN_S, 1.0 / fs)
    h = canonical_hrf(t, peak_s)
    return h / (np.abs(h.sum()) / fs)


def band_region(band: str, map_height: int, map_width: int) -> np.ndarray:
    """Weight map for one band: a vertical strip of the middle rows."""
    idx = BAND_ORDER.index(band)
    w = np.zeros((map_height, map_width))
    r0, r1 = map_height // 4, (3 * map_height) // 4
    c0 = (idx * map_width) // len(BAND_ORDER)
    c1 = ((idx + 1) * map_width) // len(BAND_ORDER)
    w[r0:r1, c0:c1] = 1.0
    return w


def generate_paired_session(cfg: SynthConfig) -> PairedSession:
    """Deterministically synthesize one paired EEG/BOLD session."""
    cfg.validate()
    rng = np.random.default_rng(cfg.seed)
    fs = cfg.sample_rate_hz
    n_samples = int(round(cfg.duration_s * fs))
    n_frames = int(round(cfg.duration_s / cfg.tr_s))
    tr_n = int(round(cfg.tr_s * fs))
    labels = block_schedule(cfg.duration_s, cfg.block_len_s, cfg.tr_s)

    # State per EEG sample, from the block schedule.
    block_n = int(round(cfg.block_len_s * fs))
    sample_states = np.array(
        [(i // block_n) % 2 for i in range(n_samples)]
    )  # 0 rest, 1 task

    bands = cfg.bands
    t = np.arange(n_samples) / fs
    phases = rng.uniform(0.0, 2.0 * np.pi, size=(len(bands), cfg.n_channels))

    eeg = np.zeros((cfg.n_channels, n_samples))
    envelopes: dict[str, np.ndarray] = {}
    weights: dict[str, np.ndarray] = {}
    kernel = _hrf_kernel(cfg.hrf_peak_s, fs)
    bold = np.zeros((n_frames, cfg.map_height, cfg.map_width))

    for bi, band in enumerate(bands):
        amp_rest = cfg.band_powers_per_state[REST].get(band, 0.0)
        amp_task = cfg.band_powers_per_state[TASK].get(band, 0.0)
        amp = np.where(sample_states == 0, amp_rest, amp_task)
        carrier = np.sin(
            2.0 * np.pi * BAND_CENTERS_HZ[band] * t[None, :] + phases[bi][:, None]
        )
        eeg += amp[None, :] * carrier

        power = amp**2
        envelopes[band] = power
        weights[band] = band_region(band, cfg.map_height, cfg.map_width)
        drive = np.convolve(power, kernel)[:n_samples] / fs
        series = drive[np.arange(n_frames) * tr_n]
        bold += weights[band][None, :, :] * series[:, None, None]

    if cfg.noise_std_eeg > 0:
        eeg += cfg.noise_std_eeg * rng.standard_normal(eeg.shape)
    if cfg.noise_std_bold > 0:
        bold += cfg.noise_std_bold * rng.standard_normal(bold.shape)

    return PairedSession(
        eeg=EEGRecording(eeg, fs),
        bold=BOLDFrameSequence(bold, cfg.tr_s),
        frame_labels=labels,
        truth_envelopes=envelopes,
        spatial_weights=weights,
    )
