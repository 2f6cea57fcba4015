"""EEG conditioning pipeline.

Turns a raw multichannel recording into condition tokens: band-pass
filtering, sliding 6-second window extraction, STFT magnitude features,
per-band pooling, and an affine embedding that matches the latent BOLD
tokens in count and width.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import signal as sps

from .errors import ConfigurationError, InputError

# Conventional clinical band edges in Hz.
BAND_EDGES = {
    "delta": (0.5, 4.0),
    "theta": (4.0, 8.0),
    "alpha": (8.0, 13.0),
    "beta": (13.0, 30.0),
    "gamma": (30.0, 50.0),
}
BAND_ORDER = ("delta", "theta", "alpha", "beta", "gamma")
FULL_BAND = (0.5, 50.0)

WINDOW_S = 6.0  # EEG history length preceding each BOLD frame


@dataclass
class EEGRecording:
    """Multichannel time series, ``samples`` shaped (channels, time)."""

    samples: np.ndarray
    sample_rate_hz: float
    t0_s: float = 0.0

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.samples.ndim != 2:
            raise InputError("EEG samples must be a (channels, time) matrix")
        if self.sample_rate_hz <= 0:
            raise ConfigurationError("sample_rate_hz must be positive")
        if not np.all(np.isfinite(self.samples)):
            raise InputError("EEG samples contain non-finite values")

    @property
    def n_channels(self) -> int:
        return self.samples.shape[0]

    @property
    def n_samples(self) -> int:
        return self.samples.shape[1]

    @property
    def duration_s(self) -> float:
        return self.n_samples / self.sample_rate_hz


@dataclass(frozen=True)
class BandSpec:
    name: str
    lo_hz: float
    hi_hz: float

    @classmethod
    def from_name(cls, name: str) -> "BandSpec":
        if name == "full":
            return cls("full", *FULL_BAND)
        if name not in BAND_EDGES:
            raise ConfigurationError(
                f"unknown band {name!r}; expected one of "
                f"{', '.join(BAND_ORDER)} or 'full'"
            )
        return cls(name, *BAND_EDGES[name])

    def validate_against(self, sample_rate_hz: float) -> None:
        nyquist = sample_rate_hz / 2.0
        if not (0 <= self.lo_hz < self.hi_hz):
            raise ConfigurationError(
                f"band {self.name}: need 0 <= lo < hi, got ({self.lo_hz}, {self.hi_hz})"
            )
        if self.hi_hz >= nyquist:
            raise ConfigurationError(
                f"band {self.name}: upper edge {self.hi_hz} Hz >= Nyquist {nyquist} Hz"
            )


@dataclass
class EEGWindow:
    """One 6-second slice of EEG, ``samples`` shaped (channels, window)."""

    samples: np.ndarray
    onset_s: float
    stride_index: int
    sample_rate_hz: float


@dataclass
class TimeFreqFeatures:
    """Per-channel magnitude spectrogram (channels, freq bins, time bins)."""

    magnitudes: np.ndarray
    bin_freqs_hz: np.ndarray
    bin_times_s: np.ndarray


@dataclass
class ConditionTokens:
    """Embedded EEG tokens, one row per latent BOLD token."""

    tokens: np.ndarray

    @property
    def token_count(self) -> int:
        return self.tokens.shape[0]

    @property
    def width(self) -> int:
        return self.tokens.shape[1]


def bandpass_filter(rec: EEGRecording, band: BandSpec) -> EEGRecording:
    """Zero-phase Butterworth band-pass, applied forward-backward.

    4th-order design; the bidirectional pass squares the magnitude
    response, so effective attenuation doubles in dB.
    """
    band.validate_against(rec.sample_rate_hz)
    sos = sps.butter(
        4,
        [band.lo_hz, band.hi_hz],
        btype="bandpass",
        fs=rec.sample_rate_hz,
        output="sos",
    )
    filtered = sps.sosfiltfilt(sos, rec.samples, axis=1)
    return EEGRecording(filtered, rec.sample_rate_hz, rec.t0_s)


def slide_sample(
    rec: EEGRecording, stride_s: float, window_s: float = WINDOW_S
) -> list[EEGWindow]:
    """Extract windows at onsets 0, stride, 2*stride, ...

    Each window covers [onset, onset + window_s) and is the EEG history
    for the BOLD frame whose onset coincides with the window end.
    """
    fs = rec.sample_rate_hz
    if stride_s <= 0:
        raise ConfigurationError("stride_s must be positive")
    stride_n = stride_s * fs
    if abs(stride_n - round(stride_n)) > 1e-9:
        raise ConfigurationError(
            f"stride_s * sample_rate_hz must be an integer, got {stride_n}"
        )
    stride_n = int(round(stride_n))
    win_n = window_s * fs
    if abs(win_n - round(win_n)) > 1e-9:
        raise ConfigurationError(
            f"window_s * sample_rate_hz must be an integer, got {win_n}"
        )
    win_n = int(round(win_n))
    if rec.n_samples < win_n:
        raise InputError(
            f"recording of {rec.duration_s:.3f} s is shorter than one "
            f"{window_s:.3f} s window"
        )
    n_windows = (rec.n_samples - win_n) // stride_n + 1
    windows = []
    for k in range(n_windows):
        start = k * stride_n
        windows.append(
            EEGWindow(
                samples=rec.samples[:, start : start + win_n],
                onset_s=rec.t0_s + start / fs,
                stride_index=k,
                sample_rate_hz=fs,
            )
        )
    return windows


def stft_features(
    win: EEGWindow, frame_len: int, hop: int, window: str = "hann"
) -> TimeFreqFeatures:
    """Magnitude spectrogram per channel.

    Frames start at multiples of ``hop``; time-bin count is
    floor((window length - frame_len) / hop) + 1. One-sided (rfft) bins.
    """
    n = win.samples.shape[1]
    if frame_len > n:
        raise ConfigurationError(
            f"frame_len {frame_len} exceeds window length {n}"
        )
    if not (0 < hop <= frame_len):
        raise ConfigurationError("need 0 < hop <= frame_len")
    if window == "hann":
        taper = np.hanning(frame_len)
    elif window in ("rect", "boxcar"):
        taper = np.ones(frame_len)
    else:
        raise ConfigurationError(f"unknown analysis window {window!r}")

    n_frames = (n - frame_len) // hop + 1
    starts = np.arange(n_frames) * hop
    # (channels, frames, frame_len)
    idx = starts[:, None] + np.arange(frame_len)[None, :]
    frames = win.samples[:, idx] * taper
    spec = np.fft.rfft(frames, axis=2)
    magnitudes = np.abs(spec).transpose(0, 2, 1)  # (C, F, T)
    bin_freqs = np.fft.rfftfreq(frame_len, d=1.0 / win.sample_rate_hz)
    bin_times = win.onset_s + (starts + frame_len / 2.0) / win.sample_rate_hz
    return TimeFreqFeatures(magnitudes, bin_freqs, bin_times)


def band_pool(feat: TimeFreqFeatures, bands=BAND_ORDER) -> np.ndarray:
    """Mean magnitude per band per channel per time bin -> (C, bands, T)."""
    pools = []
    for name in bands:
        lo, hi = BAND_EDGES[name]
        mask = (feat.bin_freqs_hz >= lo) & (feat.bin_freqs_hz < hi)
        if not mask.any():
            raise ConfigurationError(
                f"band {name}: no STFT bins fall in [{lo}, {hi}) Hz"
            )
        pools.append(feat.magnitudes[:, mask, :].mean(axis=1))
    return np.stack(pools, axis=1)


def _group_bounds(n_bins: int, token_count: int) -> list[tuple[int, int]]:
    # Contiguous partition of the time axis; when token_count exceeds
    # the number of bins, groups repeat single bins.
    bounds = []
    for i in range(token_count):
        lo = (i * n_bins) // token_count
        hi = ((i + 1) * n_bins) // token_count
        if hi <= lo:
            hi = lo + 1
        bounds.append((lo, hi))
    return bounds


def group_time_bins(pooled: np.ndarray, token_count: int) -> np.ndarray:
    """Partition pooled features along time into token_count groups.

    Returns (token_count, channels * bands); each row is the mean over
    its time-bin group, flattened channel-major.
    """
    if token_count < 1:
        raise ConfigurationError("token_count must be >= 1")
    n_bins = pooled.shape[2]
    rows = []
    for lo, hi in _group_bounds(n_bins, token_count):
        rows.append(pooled[:, :, lo:hi].mean(axis=2).ravel())
    return np.stack(rows, axis=0)


def condition_features(
    win: EEGWindow,
    frame_len: int,
    hop: int,
    token_count: int,
    window: str = "hann",
) -> np.ndarray:
    """Full DTFS feature path for one window -> (token_count, C * 5)."""
    feat = stft_features(win, frame_len, hop, window=window)
    return group_time_bins(band_pool(feat), token_count)


@dataclass
class CondEmbedParams:
    """Affine embedding weights; rows of ``weight`` are output dims."""

    weight: np.ndarray  # (model_width, feature_dim)
    bias: np.ndarray  # (model_width,)
    token_count: int


def embed_condition(feat: TimeFreqFeatures, params: CondEmbedParams) -> ConditionTokens:
    """Band-pool, group to token_count, and project to model width."""
    grouped = group_time_bins(band_pool(feat), params.token_count)
    if grouped.shape[1] != params.weight.shape[1]:
        raise ConfigurationError(
            f"feature dim {grouped.shape[1]} does not match embedding "
            f"weight dim {params.weight.shape[1]}"
        )
    tokens = grouped @ params.weight.T + params.bias
    return ConditionTokens(tokens)
