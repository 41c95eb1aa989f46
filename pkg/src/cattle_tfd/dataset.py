"""Data model, CSV ingestion and a seeded synthetic recording generator.

A recording is one animal's contiguous 9-channel stream sampled at 50 Hz with
one activity label per sample. Channel order is fixed everywhere in the
package: accelerometer x/y/z, magnetometer x/y/z, gyroscope x/y/z.
"""

from __future__ import annotations

import csv
import enum
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from cattle_tfd.errors import EmptyDatasetError, ParseError, ValidationError

SAMPLE_RATE = 50.0

CHANNEL_NAMES = ("ax", "ay", "az", "mx", "my", "mz", "gx", "gy", "gz")
CSV_HEADER = ("animal_id", "t_index", *CHANNEL_NAMES, "label")


class ActivityClass(enum.IntEnum):
    GRAZING = 1
    WALKING = 2
    RUMINATING_STANDING = 3
    RUMINATING_LYING = 4
    STANDING = 5
    LYING = 6
    DRINKING = 7
    GROOMING = 8
    OTHER = 9

    @property
    def label(self) -> str:
        return _DISPLAY_NAMES[self]


_DISPLAY_NAMES = {
    ActivityClass.GRAZING: "Grazing",
    ActivityClass.WALKING: "Walking",
    ActivityClass.RUMINATING_STANDING: "RuminatingStanding",
    ActivityClass.RUMINATING_LYING: "RuminatingLying",
    ActivityClass.STANDING: "Standing",
    ActivityClass.LYING: "Lying",
    ActivityClass.DRINKING: "Drinking",
    ActivityClass.GROOMING: "Grooming",
    ActivityClass.OTHER: "Other",
}

N_CLASSES = len(ActivityClass)

# Seconds of labelled data per class in the reference herd dataset.
REFERENCE_DURATIONS_S = {
    ActivityClass.GRAZING: 36701,
    ActivityClass.WALKING: 514,
    ActivityClass.RUMINATING_STANDING: 3392,
    ActivityClass.RUMINATING_LYING: 9851,
    ActivityClass.STANDING: 11471,
    ActivityClass.LYING: 5426,
    ActivityClass.DRINKING: 611,
    ActivityClass.GROOMING: 530,
    ActivityClass.OTHER: 654,
}

_total = sum(REFERENCE_DURATIONS_S.values())
REFERENCE_DISTRIBUTION = tuple(REFERENCE_DURATIONS_S[c] / _total for c in ActivityClass)
del _total


@dataclass(frozen=True)
class ModalitySet:
    """Which sensors feed the classifier. The accelerometer is always on."""

    magnetometer: bool = False
    gyroscope: bool = False
    accelerometer: bool = field(default=True, init=False)

    @classmethod
    def parse(cls, text: str) -> "ModalitySet":
        """Parse strings like ``"acc"``, ``"acc+mag"``, ``"acc+mag+gyro"`` or ``"all"``."""
        text = text.strip().lower()
        if text == "all":
            return cls(magnetometer=True, gyroscope=True)
        parts = {p.strip() for p in text.replace(",", "+").split("+") if p.strip()}
        known = {"acc", "mag", "gyro"}
        if not parts <= known:
            raise ValidationError(f"unknown modality in {text!r}; expected acc, mag, gyro")
        if "acc" not in parts:
            raise ValidationError("the accelerometer must always be selected")
        return cls(magnetometer="mag" in parts, gyroscope="gyro" in parts)

    @property
    def channel_indices(self) -> tuple[int, ...]:
        idx = [0, 1, 2]
        if self.magnetometer:
            idx += [3, 4, 5]
        if self.gyroscope:
            idx += [6, 7, 8]
        return tuple(idx)

    @property
    def channel_names(self) -> tuple[str, ...]:
        return tuple(CHANNEL_NAMES[i] for i in self.channel_indices)

    def __str__(self) -> str:
        parts = ["acc"]
        if self.magnetometer:
            parts.append("mag")
        if self.gyroscope:
            parts.append("gyro")
        return "+".join(parts)


ACC_ONLY = ModalitySet()
ALL_MODALITIES = ModalitySet(magnetometer=True, gyroscope=True)


@dataclass
class IMURecording:
    """One animal's contiguous stream: ``channels`` is (9, N), ``labels`` is (N,)."""

    animal_id: str
    channels: np.ndarray
    labels: np.ndarray
    sample_rate: float = SAMPLE_RATE

    def __post_init__(self):
        self.channels = np.asarray(self.channels, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.sample_rate != SAMPLE_RATE:
            raise ValidationError(f"sample_rate must be {SAMPLE_RATE} Hz, got {self.sample_rate}")
        if self.channels.ndim != 2 or self.channels.shape[0] != len(CHANNEL_NAMES):
            raise ValidationError(f"channels must have shape (9, N), got {self.channels.shape}")
        if self.labels.ndim != 1 or self.labels.shape[0] != self.channels.shape[1]:
            raise ValidationError(
                f"label count {self.labels.shape} does not match channel length {self.channels.shape[1]}"
            )
        if self.labels.size and (self.labels.min() < 1 or self.labels.max() > N_CLASSES):
            raise ValidationError("labels must lie in 1..9")

    def __len__(self) -> int:
        return self.labels.shape[0]

    @property
    def duration_s(self) -> float:
        return len(self) / self.sample_rate


def load_csv(path) -> list[IMURecording]:
    """Read recordings from a CSV with header ``animal_id,t_index,ax,...,gz,label``.

    Rows are grouped by ``animal_id`` in order of first appearance; within an
    animal the file order is kept as the sample order.
    """
    path = Path(path)
    columns: dict[str, list[list[float]]] = {}
    labels: dict[str, list[int]] = {}
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise ParseError("empty file, header row required", line=1)
        if tuple(h.strip() for h in header) != CSV_HEADER:
            raise ParseError(f"header must be {','.join(CSV_HEADER)}", line=1)
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(CSV_HEADER):
                raise ValidationError(
                    f"line {lineno}: expected {len(CSV_HEADER)} fields, got {len(row)}"
                )
            animal = row[0].strip()
            if not animal:
                raise ParseError("empty animal_id", line=lineno)
            try:
                int(row[1])
                values = [float(v) for v in row[2:11]]
                label = int(row[11])
            except ValueError as exc:
                raise ParseError(str(exc), line=lineno) from None
            if not all(math.isfinite(v) for v in values):
                raise ParseError("non-finite sensor value", line=lineno)
            if not 1 <= label <= N_CLASSES:
                raise ValidationError(f"line {lineno}: label {label} outside 1..9")
            columns.setdefault(animal, []).append(values)
            labels.setdefault(animal, []).append(label)

    return [
        IMURecording(animal, np.array(rows, dtype=np.float64).T, np.array(labels[animal]))
        for animal, rows in columns.items()
    ]


def write_csv(recordings, path) -> None:
    """Write recordings in the ``load_csv`` schema. Floats use shortest round-trip repr."""
    path = Path(path)
    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(CSV_HEADER)
        for rec in recordings:
            chans = rec.channels.T.tolist()
            for t, (vals, lab) in enumerate(zip(chans, rec.labels.tolist())):
                writer.writerow([rec.animal_id, t, *map(repr, vals), lab])


def class_distribution(recordings) -> dict[ActivityClass, tuple[float, float]]:
    """Per-class ``(duration_s, percent)`` over all samples of all recordings."""
    recordings = list(recordings)
    counts = np.zeros(N_CLASSES + 1, dtype=np.int64)
    for rec in recordings:
        counts += np.bincount(rec.labels, minlength=N_CLASSES + 1)
    total = counts.sum()
    if not recordings or total == 0:
        raise EmptyDatasetError("no samples to summarise")
    return {
        c: (counts[c] / SAMPLE_RATE, 100.0 * counts[c] / total) for c in ActivityClass
    }


# Per-class generating signature: (carrier Hz, amplitude-modulation Hz, amplitude in g).
# Carriers sit 2 Hz apart inside the 2-20 Hz passband.
CLASS_SIGNATURES = {
    ActivityClass.GRAZING: (3.0, 0.50, 0.30),
    ActivityClass.WALKING: (5.0, 1.00, 0.40),
    ActivityClass.RUMINATING_STANDING: (7.0, 0.25, 0.25),
    ActivityClass.RUMINATING_LYING: (9.0, 0.30, 0.25),
    ActivityClass.STANDING: (11.0, 0.10, 0.25),
    ActivityClass.LYING: (13.0, 0.05, 0.25),
    ActivityClass.DRINKING: (15.0, 0.70, 0.30),
    ActivityClass.GROOMING: (17.0, 1.20, 0.35),
    ActivityClass.OTHER: (18.5, 0.80, 0.30),
}

# Each class also carries band-limited noise within +/- TEXTURE_HALF_BW_HZ of its
# carrier, so its energy is spread over a band rather than a single line.
TEXTURE_HALF_BW_HZ = 0.8
TEXTURE_GAIN = 0.6

_AXIS_GAIN = np.array([0.6, 0.8, 1.0])
_GRAVITY = np.array([0.05, -0.1, 1.0])


@dataclass(frozen=True)
class SynthConfig:
    """Settings for :func:`synth_generate`.

    ``duration_s`` is the length of each animal's recording; class shares of it
    follow ``class_distribution``. Activities are laid out as bouts of at most
    ``bout_s`` seconds in seeded random order.
    """

    seed: int = 0
    duration_s: float = 600.0
    class_distribution: tuple[float, ...] = REFERENCE_DISTRIBUTION
    noise_std: float = 0.1
    animals: int = 3
    bout_s: float = 60.0

    def __post_init__(self):
        dist = tuple(float(w) for w in self.class_distribution)
        object.__setattr__(self, "class_distribution", dist)
        if len(dist) != N_CLASSES:
            raise ValidationError("class_distribution needs exactly 9 weights")
        if any(w < 0 for w in dist) or abs(sum(dist) - 1.0) > 1e-9:
            raise ValidationError("class_distribution weights must be non-negative and sum to 1")
        if not self.duration_s > 0:
            raise ValidationError("duration_s must be positive")
        if self.seed < 0:
            raise ValidationError("seed must be non-negative")
        if self.noise_std < 0:
            raise ValidationError("noise_std must be non-negative")
        if self.animals < 1:
            raise ValidationError("animals must be at least 1")
        if not self.bout_s > 0:
            raise ValidationError("bout_s must be positive")


def _band_noise(carrier, n, rng, rows):
    """Unit-variance Gaussian noise restricted to carrier +/- TEXTURE_HALF_BW_HZ."""
    spec = np.fft.rfft(rng.normal(size=(rows, n)), axis=-1)
    freqs = np.fft.rfftfreq(n, d=1.0 / SAMPLE_RATE)
    spec[:, np.abs(freqs - carrier) > TEXTURE_HALF_BW_HZ] = 0.0
    out = np.fft.irfft(spec, n=n, axis=-1)
    std = out.std(axis=-1, keepdims=True)
    return np.divide(out, std, out=np.zeros_like(out), where=std > 0)


def _bout_signals(cls, n, rng, noise_std):
    carrier, am_rate, amp = CLASS_SIGNATURES[cls]
    t = np.arange(n) / SAMPLE_RATE
    envelope = amp * (1.0 + 0.5 * np.sin(2 * np.pi * am_rate * t + rng.uniform(0, 2 * np.pi)))
    phases = rng.uniform(0, 2 * np.pi, size=(3, 1))
    osc = np.sin(2 * np.pi * carrier * t + phases)
    texture = TEXTURE_GAIN * amp * _band_noise(carrier, n, rng, 3)
    acc = _AXIS_GAIN[:, None] * (envelope * osc + texture) + _GRAVITY[:, None]
    acc += rng.normal(0.0, noise_std, size=(3, n))

    # Magnetometer and gyroscope see the same motion at lower SNR.
    heading = rng.uniform(-1, 1, size=(3, 1))
    mag = heading + 0.3 * envelope * np.sin(2 * np.pi * carrier * t + phases[::-1])
    mag += rng.normal(0.0, 2 * noise_std, size=(3, n))
    gyro = 0.5 * envelope * np.cos(2 * np.pi * carrier * t + phases)
    gyro += rng.normal(0.0, 2 * noise_std, size=(3, n))
    return np.vstack([acc, mag, gyro])


def synth_generate(config: SynthConfig) -> list[IMURecording]:
    """Generate one labelled recording per animal, fully determined by ``config``."""
    rng = np.random.default_rng(config.seed)
    per_animal = int(round(config.duration_s * SAMPLE_RATE))
    bout_len = max(1, int(round(config.bout_s * SAMPLE_RATE)))
    class_samples = [int(round(w * per_animal)) for w in config.class_distribution]
    if sum(class_samples) == 0:
        raise ValidationError("configuration yields zero total duration")

    recordings = []
    for a in range(config.animals):
        bouts = []
        for cls, n in zip(ActivityClass, class_samples):
            full, rest = divmod(n, bout_len)
            bouts += [(cls, bout_len)] * full
            if rest:
                bouts.append((cls, rest))
        order = rng.permutation(len(bouts))
        chans, labs = [], []
        for i in order:
            cls, n = bouts[i]
            chans.append(_bout_signals(cls, n, rng, config.noise_std))
            labs.append(np.full(n, int(cls), dtype=np.int64))
        recordings.append(
            IMURecording(f"cow{a + 1:02d}", np.concatenate(chans, axis=1), np.concatenate(labs))
        )
    return recordings
