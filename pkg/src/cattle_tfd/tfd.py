"""Spectrogram features: Hamming-windowed STFT, energy density, bicubic resizing, channel fusion."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from cattle_tfd.dataset import CHANNEL_NAMES, SAMPLE_RATE, ModalitySet
from cattle_tfd.errors import ValidationError

RESOLUTIONS = (100, 50, 20, 10)


@dataclass(frozen=True)
class StftParams:
    """Frame length, hop and FFT size, all in samples. The taper is always Hamming."""

    segment_len: int = 200
    hop: int = 2
    fft_len: int = 200
    sample_rate: float = SAMPLE_RATE

    def __post_init__(self):
        if self.hop < 1:
            raise ValidationError("hop must be >= 1")
        if self.segment_len < 2:
            raise ValidationError("segment_len must be >= 2")
        if self.fft_len < self.segment_len:
            raise ValidationError("fft_len must be >= segment_len")

    @property
    def freq_bins(self) -> int:
        return self.fft_len // 2 + 1

    def frames(self, n: int) -> int:
        if n < self.segment_len:
            raise ValidationError(f"signal of {n} samples is shorter than one segment ({self.segment_len})")
        return (n - self.segment_len) // self.hop + 1

    def plane_shape(self, n: int) -> tuple[int, int]:
        return self.freq_bins, self.frames(n)

    def frequencies(self) -> np.ndarray:
        return np.arange(self.freq_bins) * self.sample_rate / self.fft_len


# Segment/hop/FFT sizes that give 129 x 123 planes for a 10 s window.
WIDE_STFT = StftParams(segment_len=256, hop=2, fft_len=256)


def hamming_window(n: int) -> np.ndarray:
    """Symmetric Hamming taper ``0.54 - 0.46 cos(2 pi k / (n - 1))``."""
    if n < 2:
        raise ValidationError("Hamming window needs n >= 2")
    k = np.arange(n)
    return 0.54 - 0.46 * np.cos(2.0 * np.pi * k / (n - 1))


def _frames(x: np.ndarray, params: StftParams) -> np.ndarray:
    n = x.shape[-1]
    params.frames(n)
    view = sliding_window_view(x, params.segment_len, axis=-1)
    return view[..., :: params.hop, :]


def stft(x, params: StftParams = StftParams()) -> np.ndarray:
    """One-sided STFT; returns complex array shaped (..., freq_bins, frames).

    Leading axes are treated as a batch. Frames are not detrended.
    """
    x = np.asarray(x, dtype=np.float64)
    w = hamming_window(params.segment_len)
    spec = np.fft.rfft(_frames(x, params) * w, n=params.fft_len, axis=-1)
    return np.swapaxes(spec, -1, -2)


def density_scale(params: StftParams) -> float:
    w = hamming_window(params.segment_len)
    return 1.0 / (params.sample_rate * np.sum(w * w))


def spectrogram(x, params: StftParams = StftParams()) -> np.ndarray:
    """Energy density ``|STFT|^2 / (fs * sum(w^2))``, shaped (..., freq_bins, frames)."""
    z = stft(x, params)
    return (z.real**2 + z.imag**2) * density_scale(params)


@dataclass(frozen=True)
class Resolution:
    percent: int = 100

    def __post_init__(self):
        if not 0 < self.percent <= 100:
            raise ValidationError(f"resolution percent must be in (0, 100], got {self.percent}")

    @property
    def scale(self) -> float:
        return self.percent / 100.0

    def resized(self, dim: int) -> int:
        """``max(1, round(dim * scale))`` with halves rounded up, computed exactly."""
        if self.percent == 100:
            return dim
        return max(1, (2 * dim * self.percent + 100) // 200)

    def shape(self, shape: tuple[int, int]) -> tuple[int, int]:
        return self.resized(shape[0]), self.resized(shape[1])


def cubic_kernel(x, a: float = -0.5) -> np.ndarray:
    """Keys cubic convolution kernel; ``a = -0.5`` is Catmull-Rom."""
    x = np.abs(np.asarray(x, dtype=np.float64))
    x2, x3 = x * x, x * x * x
    near = (a + 2) * x3 - (a + 3) * x2 + 1
    far = a * x3 - 5 * a * x2 + 8 * a * x - 4 * a
    return np.where(x <= 1, near, np.where(x < 2, far, 0.0))


def _resize_matrix(n_in: int, n_out: int) -> np.ndarray:
    """(n_out, n_in) interpolation matrix, half-pixel-centre mapping, borders clamped."""
    m = np.zeros((n_out, n_in))
    src = (np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5
    base = np.floor(src).astype(int)
    frac = src - base
    for offset in (-1, 0, 1, 2):
        weight = cubic_kernel(offset - frac)
        col = np.clip(base + offset, 0, n_in - 1)
        np.add.at(m, (np.arange(n_out), col), weight)
    return m


def resize_bicubic(plane, resolution: Resolution | int = 100) -> np.ndarray:
    """Bicubic resize of the last two axes to ``resolution`` percent per axis."""
    if not isinstance(resolution, Resolution):
        resolution = Resolution(int(resolution))
    plane = np.asarray(plane, dtype=np.float64)
    if resolution.percent == 100:
        return plane.copy()
    rows, cols = plane.shape[-2:]
    if rows < 4 or cols < 4:
        raise ValidationError(f"plane {rows}x{cols} too small to resize (need >= 4x4)")
    out_rows, out_cols = resolution.shape((rows, cols))
    wr = _resize_matrix(rows, out_rows)
    wc = _resize_matrix(cols, out_cols)
    return wr @ plane @ wc.T


def fuse(planes, modalities: ModalitySet | None = None, channel_names=CHANNEL_NAMES) -> np.ndarray:
    """Flatten (channels, rows, cols) planes row-major and concatenate in channel order.

    ``planes`` is indexed by ``channel_names``; ``modalities`` picks the subset.
    """
    planes = np.asarray(planes)
    if modalities is None:
        return planes.reshape(-1)
    lookup = {name: i for i, name in enumerate(channel_names)}
    try:
        idx = [lookup[name] for name in modalities.channel_names]
    except KeyError as exc:
        raise ValidationError(f"channel {exc.args[0]} missing from spectrogram tensor") from None
    return planes[idx].reshape(-1)


def unfuse(vector, n_channels: int, shape: tuple[int, int]) -> np.ndarray:
    vector = np.asarray(vector)
    if vector.size != n_channels * shape[0] * shape[1]:
        raise ValidationError("vector length does not match channels x plane shape")
    return vector.reshape(n_channels, *shape)


def write_plane_csv(plane, path) -> None:
    with Path(path).open("w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        for row in np.asarray(plane):
            writer.writerow([repr(float(v)) for v in row])


def write_pgm(plane, path) -> None:
    """8-bit binary PGM, low frequencies at the bottom, min-max scaled to 0..255."""
    plane = np.asarray(plane, dtype=np.float64)[::-1]
    lo, hi = plane.min(), plane.max()
    if hi > lo:
        img = np.round(255.0 * (plane - lo) / (hi - lo))
    else:
        img = np.zeros_like(plane)
    rows, cols = img.shape
    with Path(path).open("wb") as fh:
        fh.write(f"P5\n{cols} {rows}\n255\n".encode("ascii"))
        fh.write(img.astype(np.uint8).tobytes())
