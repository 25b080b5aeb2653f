"""STFT-based spectral features: Hanning periodograms, log band power, differential entropy.

Each segment is cut into 1-second Hanning windows with 50% overlap,
giving L = floor(2*T - 1) windows for a T-second segment. Per window and
channel two features are computed on the periodogram of each frequency
sub-band: the natural log of the in-band power, and the differential
entropy 0.5*ln(2*pi*e*var) of a Gaussian signal whose variance is that
same in-band power. Powers are floored at 1e-10 before the log so silent
channels stay finite.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .filters import BandSpec, EegSegment

HALF_LN_2PI_E = 0.5 * math.log(2.0 * math.pi * math.e)
POWER_FLOOR = 1e-10


@dataclass
class StftPlan:
    """Framing plan for 1-second Hanning windows at 50% overlap."""

    window: np.ndarray  # Hanning weights, length = round(fs)
    hop: int
    n_windows: int  # L
    fs: float

    @property
    def window_length(self) -> int:
        return len(self.window)


@dataclass
class FeatureSequence:
    """L x F feature matrix: per window, DE block then log-PSD block.

    F = 2 * n_bands * n_channels. Within each block the order is
    band-major: (band 1, ch 1..N), (band 2, ch 1..N), ...
    """

    values: np.ndarray
    n_bands: int
    n_channels: int
    label: float | int | None = None

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 2:
            raise ValueError(f"feature values must be 2-D, got shape {self.values.shape}")
        if self.values.shape[1] != 2 * self.n_bands * self.n_channels:
            raise ValueError(
                f"feature width {self.values.shape[1]} does not match "
                f"2 * {self.n_bands} bands * {self.n_channels} channels"
            )
        if not np.all(np.isfinite(self.values)):
            raise ValueError("feature values contain non-finite entries")

    @property
    def n_windows(self) -> int:
        return self.values.shape[0]


def hann_window(length: int) -> np.ndarray:
    """Periodic Hanning window (DFT-even form)."""
    n = np.arange(length)
    return 0.5 * (1.0 - np.cos(2.0 * np.pi * n / length))


def plan_stft(t_seconds: float, fs: float) -> StftPlan:
    """Plan 1-second Hanning windows with 50% overlap over a T-second segment."""
    if t_seconds < 1.0:
        raise ValueError(f"segment of {t_seconds} s is shorter than the 1 s analysis window")
    window_length = int(round(fs))
    hop = window_length // 2
    n_windows = int(math.floor(2.0 * t_seconds - 1.0))
    n_samples = int(round(t_seconds * fs))
    if hop * (n_windows - 1) + window_length > n_samples:
        raise ValueError(
            f"{n_windows} windows of {window_length} samples at hop {hop} do not fit "
            f"in {n_samples} samples"
        )
    return StftPlan(window=hann_window(window_length), hop=hop, n_windows=n_windows, fs=fs)


def frame_signal(x: np.ndarray, plan: StftPlan) -> np.ndarray:
    """Cut one channel into the planned windows, shape (L, window_length)."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1:
        raise ValueError(f"frame_signal expects one channel (1-D), got shape {x.shape}")
    needed = plan.hop * (plan.n_windows - 1) + plan.window_length
    if x.shape[0] < needed:
        raise ValueError(f"signal of {x.shape[0]} samples is shorter than the plan ({needed})")
    starts = plan.hop * np.arange(plan.n_windows)
    return np.stack([x[s:s + plan.window_length] for s in starts])


def periodogram(samples: np.ndarray, fs: float, window: np.ndarray | None = None):
    """One-sided power spectral density of one frame.

    The supplied window (Hanning by default) is applied before the
    transform. Scaling is window-energy compensated density: the sum of
    the PSD over bins times the bin width equals the windowed signal's
    mean power divided by the window's mean-square value.

    Returns
    -------
    (freqs, psd)
        Frequencies in Hz and nonnegative PSD values per bin.
    """
    samples = np.asarray(samples, dtype=np.float64)
    if samples.ndim != 1:
        raise ValueError(f"periodogram expects a 1-D frame, got shape {samples.shape}")
    n = samples.shape[0]
    if window is None:
        window = hann_window(n)
    window = np.asarray(window, dtype=np.float64)
    if window.shape != samples.shape:
        raise ValueError(f"window shape {window.shape} does not match frame shape {samples.shape}")
    spectrum = np.fft.rfft(samples * window)
    scale = 1.0 / (fs * np.sum(window ** 2))
    psd = scale * np.abs(spectrum) ** 2
    # One-sided: double everything except DC and (for even n) Nyquist.
    psd[1:] *= 2.0
    if n % 2 == 0:
        psd[-1] /= 2.0
    freqs = np.fft.rfftfreq(n, d=1.0 / fs)
    return freqs, psd


def band_power(freqs: np.ndarray, psd: np.ndarray, low_hz: float, high_hz: float) -> float:
    """Integral of the PSD over [low_hz, high_hz] (sum of bins times bin width)."""
    mask = (freqs >= low_hz) & (freqs <= high_hz)
    if not np.any(mask):
        raise ValueError(f"no PSD bins inside band ({low_hz}, {high_hz}) Hz")
    df = freqs[1] - freqs[0]
    return float(np.sum(psd[mask]) * df)


def _band_edges(band) -> tuple[float, float]:
    if isinstance(band, BandSpec):
        return band.low_hz, band.high_hz
    low, high = band[0], band[1]
    return float(low), float(high)


def _window_band_powers(segment: EegSegment, plan: StftPlan, band) -> np.ndarray:
    """In-band periodogram power per window per channel, shape (L, N)."""
    low, high = _band_edges(band)
    powers = np.empty((plan.n_windows, segment.n_channels))
    for ch in range(segment.n_channels):
        frames = frame_signal(segment.samples[ch], plan)
        for w, frame in enumerate(frames):
            freqs, psd = periodogram(frame, plan.fs, plan.window)
            powers[w, ch] = band_power(freqs, psd, low, high)
    return powers


def log_psd_feature(segment: EegSegment, plan: StftPlan, band) -> np.ndarray:
    """Natural log of in-band power per window per channel, shape (L, N)."""
    powers = _window_band_powers(segment, plan, band)
    return np.log(np.maximum(powers, POWER_FLOOR))


def de_feature(segment: EegSegment, plan: StftPlan, band, estimator: str = "periodogram") -> np.ndarray:
    """Differential entropy 0.5*ln(2*pi*e*var) per window per channel, shape (L, N).

    With the default estimator the variance is the in-band power from the
    Hanning periodogram; ``estimator="time"`` uses the plain sample
    variance of each window instead (ablation aid).
    """
    if estimator == "periodogram":
        variances = _window_band_powers(segment, plan, band)
    elif estimator == "time":
        variances = np.empty((plan.n_windows, segment.n_channels))
        for ch in range(segment.n_channels):
            frames = frame_signal(segment.samples[ch], plan)
            variances[:, ch] = frames.var(axis=1)
    else:
        raise ValueError(f"unknown variance estimator {estimator!r}")
    return HALF_LN_2PI_E + 0.5 * np.log(np.maximum(variances, POWER_FLOOR))


def build_feature_sequence(
    band_segments: list[EegSegment],
    bands,
    plan: StftPlan,
    de_estimator: str = "periodogram",
) -> FeatureSequence:
    """Assemble the L x (2*H*N) feature matrix from band-limited segments.

    Per window the layout is [DE(band 1, ch 1..N), ..., DE(band H, ch 1..N),
    logPSD(band 1, ch 1..N), ..., logPSD(band H, ch 1..N)].
    """
    if len(band_segments) != len(bands):
        raise ValueError(
            f"{len(band_segments)} band segments do not match {len(bands)} band specs"
        )
    if not band_segments:
        raise ValueError("need at least one band")
    n_channels = band_segments[0].n_channels
    label = band_segments[0].label
    de_blocks = []
    psd_blocks = []
    for seg, band in zip(band_segments, bands):
        if seg.n_channels != n_channels:
            raise ValueError("band segments disagree on channel count")
        powers = _window_band_powers(seg, plan, band)
        floored = np.maximum(powers, POWER_FLOOR)
        log_power = np.log(floored)
        psd_blocks.append(log_power)
        if de_estimator == "periodogram":
            de_blocks.append(HALF_LN_2PI_E + 0.5 * log_power)
        else:
            de_blocks.append(de_feature(seg, plan, band, estimator=de_estimator))
    values = np.concatenate(de_blocks + psd_blocks, axis=1)
    return FeatureSequence(
        values=values, n_bands=len(bands), n_channels=n_channels, label=label
    )
