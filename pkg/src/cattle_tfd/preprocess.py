"""Windowing, min-max normalisation and Butterworth bandpass filtering."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path

import numpy as np
from scipy import signal as sps

from cattle_tfd.dataset import (
    ACC_ONLY,
    CHANNEL_NAMES,
    SAMPLE_RATE,
    IMURecording,
    ModalitySet,
)
from cattle_tfd.errors import DegenerateChannelError, EmptyDatasetError, ValidationError

WINDOW_SIZES_S = (5, 10, 15)
OVERLAPS = (0.0, 0.4, 0.8)


@dataclass(frozen=True)
class WindowSpec:
    """Window length ``delta_T`` (s) and fractional overlap; stride is ``delta_T * (1 - overlap)``."""

    delta_T: float = 10.0
    overlap: float = 0.8

    def __post_init__(self):
        if not 0.0 <= self.overlap < 1.0:
            raise ValidationError(f"overlap must be in [0, 1), got {self.overlap}")
        if self.delta_T <= 0:
            raise ValidationError("delta_T must be positive")
        # Exact rational arithmetic so 10 s at 80 % gives exactly 100 samples.
        length = Fraction(str(self.delta_T)) * int(SAMPLE_RATE)
        stride = length * (1 - Fraction(str(self.overlap)))
        if length.denominator != 1 or stride.denominator != 1 or stride <= 0:
            raise ValidationError(
                f"delta_T={self.delta_T}, overlap={self.overlap} do not give whole-sample window/stride"
            )

    @property
    def length(self) -> int:
        """Window length in samples."""
        return int(Fraction(str(self.delta_T)) * int(SAMPLE_RATE))

    @property
    def stride(self) -> int:
        """Stride in samples."""
        return int(self.length * (1 - Fraction(str(self.overlap))))

    @property
    def delta_t(self) -> float:
        return self.stride / SAMPLE_RATE


@dataclass
class LabeledWindow:
    animal_id: str
    channels: np.ndarray  # (n_selected_channels, length)
    label: int
    start_index: int
    channel_names: tuple[str, ...] = CHANNEL_NAMES[:3]


def window_label(labels: np.ndarray) -> int:
    """Majority label; ties go to the label that occurs first in the window."""
    values, first, counts = np.unique(labels, return_index=True, return_counts=True)
    best = counts.max()
    tied = first[counts == best]
    return int(labels[tied.min()])


def segment(recording: IMURecording, spec: WindowSpec, modalities: ModalitySet = ACC_ONLY):
    """Cut a recording into labelled windows starting at multiples of the stride.

    Returns ``floor((N - L) / S) + 1`` windows, or an empty list if the recording
    is shorter than one window.
    """
    n = len(recording)
    length, stride = spec.length, spec.stride
    if n < length:
        return []
    idx = list(modalities.channel_indices)
    names = modalities.channel_names
    out = []
    for start in range(0, n - length + 1, stride):
        stop = start + length
        out.append(
            LabeledWindow(
                animal_id=recording.animal_id,
                channels=recording.channels[idx, start:stop],
                label=window_label(recording.labels[start:stop]),
                start_index=start,
                channel_names=names,
            )
        )
    return out


def window_count(n: int, spec: WindowSpec) -> int:
    if n < spec.length:
        return 0
    return (n - spec.length) // spec.stride + 1


@dataclass
class NormalizationParams:
    """Per-channel ``(min, max)`` fitted on a training split."""

    channel_names: tuple[str, ...]
    mins: np.ndarray
    maxs: np.ndarray

    def to_dict(self) -> dict:
        return {
            "channels": list(self.channel_names),
            "min": [float(v) for v in self.mins],
            "max": [float(v) for v in self.maxs],
        }

    @classmethod
    def from_dict(cls, data: dict) -> "NormalizationParams":
        return cls(tuple(data["channels"]), np.asarray(data["min"]), np.asarray(data["max"]))


def fit_minmax_array(data: np.ndarray, channel_names) -> NormalizationParams:
    """Fit on an array shaped (n_windows, n_channels, ...); reduces over all but axis 1."""
    data = np.asarray(data)
    if data.shape[0] == 0:
        raise EmptyDatasetError("cannot fit normalisation on an empty training set")
    axes = tuple(i for i in range(data.ndim) if i != 1)
    mins = data.min(axis=axes)
    maxs = data.max(axis=axes)
    for name, lo, hi in zip(channel_names, mins, maxs):
        if hi == lo:
            raise DegenerateChannelError(name)
    return NormalizationParams(tuple(channel_names), mins.astype(np.float64), maxs.astype(np.float64))


def fit_minmax(windows) -> NormalizationParams:
    windows = list(windows)
    if not windows:
        raise EmptyDatasetError("cannot fit normalisation on an empty training set")
    names = windows[0].channel_names
    stacked = np.stack([w.channels for w in windows])
    return fit_minmax_array(stacked, names)


def apply_minmax_array(data: np.ndarray, params: NormalizationParams) -> np.ndarray:
    """Scale axis 1 of ``data`` channel-wise. Values outside the fitted range are not clipped."""
    shape = (1, -1) + (1,) * (data.ndim - 2)
    lo = params.mins.reshape(shape)
    span = (params.maxs - params.mins).reshape(shape)
    return (data - lo) / span


def apply_minmax(window: LabeledWindow, params: NormalizationParams) -> LabeledWindow:
    lookup = {name: i for i, name in enumerate(params.channel_names)}
    missing = [c for c in window.channel_names if c not in lookup]
    if missing:
        raise ValidationError(f"normalisation params lack channel(s) {missing}")
    order = [lookup[c] for c in window.channel_names]
    lo = params.mins[order][:, None]
    span = (params.maxs[order] - params.mins[order])[:, None]
    return LabeledWindow(
        animal_id=window.animal_id,
        channels=(window.channels - lo) / span,
        label=window.label,
        start_index=window.start_index,
        channel_names=window.channel_names,
    )


@dataclass(frozen=True)
class BandpassFilter:
    """Digital Butterworth bandpass as a cascade of biquads.

    ``sos`` rows are ``[b0, b1, b2, a0, a1, a2]`` with ``a0 == 1``.
    """

    order: int
    f_low: float
    f_high: float
    sample_rate: float
    sos: np.ndarray

    @property
    def poles(self) -> np.ndarray:
        return np.concatenate([np.roots(row[3:]) for row in self.sos])

    def response(self, freqs_hz) -> np.ndarray:
        """Complex frequency response at the given frequencies."""
        z = np.exp(2j * np.pi * np.asarray(freqs_hz, dtype=np.float64) / self.sample_rate)
        h = np.ones_like(z)
        for b0, b1, b2, a0, a1, a2 in self.sos:
            h *= (b0 * z**2 + b1 * z + b2) / (a0 * z**2 + a1 * z + a2)
        return h

    def to_csv(self, path) -> None:
        with Path(path).open("w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["b0", "b1", "b2", "a0", "a1", "a2"])
            for row in self.sos:
                writer.writerow([repr(float(v)) for v in row])


def design_bandpass(order: int = 3, f_low: float = 2.0, f_high: float = 20.0, fs: float = SAMPLE_RATE):
    """Butterworth bandpass from the analog prototype via prewarped bilinear transform.

    The analog lowpass prototype poles are shifted to a bandpass around the
    prewarped band edges; each prototype pole yields two bandpass poles, and
    ``order`` zeros land at each of s=0 and s=inf (z=1 and z=-1 after mapping).
    """
    if order < 1:
        raise ValidationError("order must be >= 1")
    if not 0 < f_low < f_high < fs / 2:
        raise ValidationError(f"need 0 < f_low < f_high < fs/2, got {f_low}, {f_high}, fs={fs}")

    k = np.arange(1, order + 1)
    proto = np.exp(1j * np.pi * (2 * k + order - 1) / (2 * order))

    two_fs = 2.0 * fs
    w_lo = two_fs * np.tan(np.pi * f_low / fs)
    w_hi = two_fs * np.tan(np.pi * f_high / fs)
    bw = w_hi - w_lo
    w0_sq = w_lo * w_hi

    half = proto * bw / 2.0
    disc = np.sqrt(half**2 - w0_sq + 0j)
    analog_poles = np.concatenate([half + disc, half - disc])
    gain = bw**order

    z_poles = (two_fs + analog_poles) / (two_fs - analog_poles)
    # Zeros at s=0 contribute (2fs - 0) each; zeros at infinity contribute none.
    gain = np.real(gain * two_fs**order / np.prod(two_fs - analog_poles))

    sections = []
    for pair in _pair_poles(z_poles):
        den = np.real(np.poly(pair))
        sections.append([1.0, 0.0, -1.0, *den])
    sos = np.array(sections, dtype=np.float64)
    sos[0, :3] *= gain
    return BandpassFilter(order, float(f_low), float(f_high), float(fs), sos)


def _pair_poles(poles, tol=1e-9):
    """Group poles into conjugate pairs, or pairs of real poles, for biquad sections."""
    poles = list(poles)
    real = sorted((p.real for p in poles if abs(p.imag) <= tol), key=abs)
    upper = sorted((p for p in poles if p.imag > tol), key=lambda p: -abs(p))
    pairs = [(p, np.conj(p)) for p in upper]
    if len(real) % 2:
        raise ValidationError("odd number of real poles cannot be paired")
    # Pair real poles closest to the unit circle together.
    real = real[::-1]
    pairs += [(real[i], real[i + 1]) for i in range(0, len(real), 2)]
    return pairs


def apply_bandpass(filt: BandpassFilter, x) -> np.ndarray:
    """Causal single-pass filtering from zero initial state; output length equals input length."""
    x = np.asarray(x, dtype=np.float64)
    if x.size == 0:
        raise ValidationError("signal must be non-empty")
    return sps.sosfilt(filt.sos, x, axis=-1)


def filter_recording(recording: IMURecording, filt: BandpassFilter) -> IMURecording:
    """Return a copy with accelerometer channels bandpassed; other channels untouched."""
    chans = recording.channels.copy()
    chans[:3] = apply_bandpass(filt, chans[:3])
    return IMURecording(recording.animal_id, chans, recording.labels.copy())
