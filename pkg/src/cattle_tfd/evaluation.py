"""Cross-validation protocols, confusion matrices, F1 metrics and the experiment driver."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from cattle_tfd.dataset import (
    ACC_ONLY,
    N_CLASSES,
    ActivityClass,
    IMURecording,
    ModalitySet,
)
from cattle_tfd.errors import DegenerateChannelError, EmptyDatasetError, ValidationError
from cattle_tfd.mlp import (
    MlpModel,
    TrainConfig,
    init_model,
    param_count,
    predict,
    train,
)
from cattle_tfd.preprocess import (
    BandpassFilter,
    NormalizationParams,
    WindowSpec,
    design_bandpass,
    filter_recording,
    window_label,
)
from cattle_tfd.tfd import Resolution, StftParams, resize_bicubic, spectrogram

SCHEMES = ("stratified", "loso")
REPRESENTATIONS = ("time", "tfd")

THREE_CLASS_NAMES = ("Grazing", "Ruminating", "Standing")
_THREE_CLASS_MAP = {1: 1, 3: 2, 4: 2, 5: 3}


def class_names(n_classes: int) -> tuple[str, ...]:
    if n_classes == N_CLASSES:
        return tuple(c.label for c in ActivityClass)
    if n_classes == 3:
        return THREE_CLASS_NAMES
    return tuple(str(i) for i in range(1, n_classes + 1))


# ---------------------------------------------------------------- folds


@dataclass
class FoldPlan:
    scheme: str
    test_folds: list[np.ndarray]
    n_samples: int

    @property
    def k(self) -> int:
        return len(self.test_folds)

    def train_indices(self, i: int) -> np.ndarray:
        mask = np.ones(self.n_samples, dtype=bool)
        mask[self.test_folds[i]] = False
        return np.flatnonzero(mask)

    def splits(self):
        for i, test in enumerate(self.test_folds):
            yield self.train_indices(i), test


def stratified_folds(labels, k: int = 10, seed: int = 0) -> FoldPlan:
    """Shuffle each class with a seeded generator, then deal its samples round-robin.

    The dealing position carries over from one class to the next so that fold
    sizes stay balanced even when classes are smaller than ``k``.
    """
    if k < 2:
        raise ValidationError("k must be >= 2")
    labels = np.asarray(labels)
    if labels.size == 0:
        raise EmptyDatasetError("no samples to split")
    rng = np.random.default_rng(seed)
    buckets: list[list[int]] = [[] for _ in range(k)]
    pos = 0
    for cls in np.unique(labels):
        members = rng.permutation(np.flatnonzero(labels == cls))
        for j, idx in enumerate(members):
            buckets[(pos + j) % k].append(int(idx))
        pos = (pos + len(members)) % k
    folds = [np.sort(np.array(b, dtype=np.int64)) for b in buckets]
    return FoldPlan("stratified", folds, labels.size)


def loso_folds(animal_ids) -> FoldPlan:
    """One fold per animal (in order of first appearance); that animal's samples form the test set."""
    animal_ids = np.asarray(animal_ids)
    _, first = np.unique(animal_ids, return_index=True)
    order = animal_ids[np.sort(first)]
    if len(order) < 2:
        raise ValidationError("leave-one-subject-out needs at least two animals")
    folds = [np.flatnonzero(animal_ids == a) for a in order]
    return FoldPlan("loso", folds, animal_ids.size)


# ---------------------------------------------------------------- metrics


@dataclass
class ConfusionMatrix:
    """Counts with rows = predicted class and columns = true class (1-based ids)."""

    counts: np.ndarray

    @property
    def n_classes(self) -> int:
        return self.counts.shape[0]

    def column_percent(self) -> np.ndarray:
        """Each column as a percentage of that true class's total (zero columns stay zero)."""
        totals = self.counts.sum(axis=0, keepdims=True)
        with np.errstate(divide="ignore", invalid="ignore"):
            pct = np.where(totals > 0, 100.0 * self.counts / totals, 0.0)
        return pct

    def __add__(self, other: "ConfusionMatrix") -> "ConfusionMatrix":
        return ConfusionMatrix(self.counts + other.counts)


def confusion(preds, truths, n_classes: int = N_CLASSES) -> ConfusionMatrix:
    preds = np.asarray(preds, dtype=np.int64)
    truths = np.asarray(truths, dtype=np.int64)
    if preds.shape != truths.shape:
        raise ValidationError(f"{preds.size} predictions vs {truths.size} truths")
    for arr in (preds, truths):
        if arr.size and (arr.min() < 1 or arr.max() > n_classes):
            raise ValidationError(f"class ids must lie in 1..{n_classes}")
    counts = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(counts, (preds - 1, truths - 1), 1)
    return ConfusionMatrix(counts)


@dataclass
class F1Report:
    precision: np.ndarray
    recall: np.ndarray
    f1: np.ndarray
    support: np.ndarray
    weighted_f1: float


def _safe_ratio(num, den):
    num = np.asarray(num, dtype=np.float64)
    den = np.asarray(den, dtype=np.float64)
    out = np.zeros_like(num)
    np.divide(num, den, out=out, where=den > 0)
    return out


def f1_scores(cm: ConfusionMatrix) -> F1Report:
    """Per-class precision/recall/F1 and the support-weighted mean F1.

    Zero denominators give 0, so a class never predicted correctly scores F1 = 0.
    """
    counts = np.asarray(cm.counts)
    total = counts.sum()
    if total <= 0:
        raise EmptyDatasetError("confusion matrix is empty")
    diag = np.diag(counts).astype(np.float64)
    predicted = counts.sum(axis=1)
    support = counts.sum(axis=0)
    precision = _safe_ratio(diag, predicted)
    recall = _safe_ratio(diag, support)
    f1 = _safe_ratio(2 * precision * recall, precision + recall)
    weighted = float(np.sum(f1 * support) / support.sum())
    return F1Report(precision, recall, f1, support, weighted)


# ---------------------------------------------------------------- data shaping


def reduce_to_3_classes(recordings) -> list[IMURecording]:
    """Keep Grazing, Ruminating (standing + lying merged) and Standing as ids 1, 2, 3.

    Dropping the other classes leaves gaps, so each contiguous kept run becomes
    its own recording (same ``animal_id``) and no window straddles a gap.
    """
    out = []
    for rec in recordings:
        keep = np.isin(rec.labels, list(_THREE_CLASS_MAP))
        if not keep.any():
            continue
        edges = np.flatnonzero(np.diff(np.concatenate([[0], keep.astype(np.int8), [0]])))
        for start, stop in zip(edges[::2], edges[1::2]):
            labels = np.array([_THREE_CLASS_MAP[int(v)] for v in rec.labels[start:stop]])
            out.append(IMURecording(rec.animal_id, rec.channels[:, start:stop], labels))
    return out


@dataclass
class WindowSet:
    """Windows stacked as ``data`` shaped (n_windows, n_channels, length)."""

    data: np.ndarray
    labels: np.ndarray
    animal_ids: np.ndarray
    starts: np.ndarray
    channel_names: tuple[str, ...]

    def __len__(self) -> int:
        return self.labels.shape[0]


def prepare_windows(
    recordings,
    window_spec: WindowSpec = WindowSpec(),
    modalities: ModalitySet = ACC_ONLY,
    bandpass: BandpassFilter | None = None,
) -> WindowSet:
    """Bandpass the accelerometer over each full recording, then cut windows."""
    bandpass = bandpass or design_bandpass()
    idx = list(modalities.channel_indices)
    length, stride = window_spec.length, window_spec.stride
    data, labels, animals, starts = [], [], [], []
    for rec in recordings:
        if len(rec) < length:
            continue
        filtered = filter_recording(rec, bandpass).channels[idx]
        for start in range(0, len(rec) - length + 1, stride):
            data.append(filtered[:, start : start + length])
            labels.append(window_label(rec.labels[start : start + length]))
            animals.append(rec.animal_id)
            starts.append(start)
    if not data:
        raise EmptyDatasetError("no recording is long enough for one window")
    return WindowSet(
        np.stack(data),
        np.array(labels, dtype=np.int64),
        np.array(animals),
        np.array(starts, dtype=np.int64),
        modalities.channel_names,
    )


def featurize(
    windows: WindowSet,
    representation: str = "tfd",
    stft_params: StftParams = StftParams(),
    resolution: Resolution | int = 100,
    chunk: int = 64,
) -> np.ndarray:
    """Per-channel feature blocks shaped (n_windows, n_channels, block_len), stored float32.

    ``time`` keeps the raw filtered samples; ``tfd`` uses row-major flattened,
    resized spectrogram planes. Concatenating blocks along axis 1 gives the
    fused classifier input.
    """
    if representation not in REPRESENTATIONS:
        raise ValidationError(f"representation must be one of {REPRESENTATIONS}")
    if not isinstance(resolution, Resolution):
        resolution = Resolution(int(resolution))
    n, c, length = windows.data.shape
    if representation == "time":
        if resolution.percent != 100:
            raise ValidationError("resolution applies to the tfd representation only")
        return windows.data.astype(np.float32)
    rows, cols = resolution.shape(stft_params.plane_shape(length))
    out = np.empty((n, c, rows * cols), dtype=np.float32)
    for s in range(0, n, chunk):
        planes = resize_bicubic(spectrogram(windows.data[s : s + chunk], stft_params), resolution)
        out[s : s + chunk] = planes.reshape(planes.shape[0], c, -1)
    return out


def _fit_block_minmax(features: np.ndarray, rows: np.ndarray, channel_names, chunk: int = 256):
    lo = np.full(features.shape[1], np.inf)
    hi = np.full(features.shape[1], -np.inf)
    for s in range(0, rows.size, chunk):
        block = features[rows[s : s + chunk]]
        lo = np.minimum(lo, block.min(axis=(0, 2)))
        hi = np.maximum(hi, block.max(axis=(0, 2)))
    for name, a, b in zip(channel_names, lo, hi):
        if a == b:
            raise DegenerateChannelError(name)
    return NormalizationParams(tuple(channel_names), lo, hi)


class ScaledFeatures:
    """Lazy view of rows of ``features`` min-max scaled and flattened to float64."""

    def __init__(self, features: np.ndarray, rows: np.ndarray, params: NormalizationParams):
        self.features = features
        self.rows = rows
        self.lo = params.mins[None, :, None]
        self.span = (params.maxs - params.mins)[None, :, None]

    def __len__(self) -> int:
        return self.rows.size

    @property
    def shape(self):
        return (self.rows.size, self.features.shape[1] * self.features.shape[2])

    def __getitem__(self, idx) -> np.ndarray:
        block = self.features[self.rows[idx]].astype(np.float64)
        block -= self.lo
        block /= self.span
        return block.reshape(block.shape[0], -1)


def fold_seeds(seed: int, fold: int) -> tuple[int, int]:
    """Independent (init, shuffle) seeds for one fold, derived from the global seed."""
    state = np.random.SeedSequence([seed, fold]).generate_state(2)
    return int(state[0]), int(state[1])


# ---------------------------------------------------------------- reports


@dataclass
class FoldResult:
    index: int
    test_size: int
    confusion: ConfusionMatrix
    weighted_f1: float
    loss_history: list[float]
    test_animals: list[str]


@dataclass
class EvalReport:
    scheme: str
    representation: str
    modalities: str
    window: dict
    resolution: int
    stft: dict | None
    n_classes: int
    input_dim: int
    param_count: int
    train: dict
    seed: int
    folds: list[FoldResult]
    aggregate: ConfusionMatrix
    metrics: F1Report
    weighted_f1: float
    artifacts: dict = field(default_factory=dict, repr=False)

    def to_dict(self) -> dict:
        names = class_names(self.n_classes)
        return {
            "scheme": self.scheme,
            "representation": self.representation,
            "modalities": self.modalities,
            "window": self.window,
            "resolution": self.resolution,
            "stft": self.stft,
            "n_classes": self.n_classes,
            "class_names": list(names),
            "input_dim": self.input_dim,
            "param_count": self.param_count,
            "train": self.train,
            "seed": self.seed,
            "weighted_f1": self.weighted_f1,
            "pooled_weighted_f1": self.metrics.weighted_f1,
            "per_class": {
                name: {
                    "precision": float(p),
                    "recall": float(r),
                    "f1": float(f),
                    "support": int(s),
                }
                for name, p, r, f, s in zip(
                    names,
                    self.metrics.precision,
                    self.metrics.recall,
                    self.metrics.f1,
                    self.metrics.support,
                )
            },
            "aggregate_confusion": self.aggregate.counts.tolist(),
            "folds": [
                {
                    "index": f.index,
                    "test_size": f.test_size,
                    "test_animals": f.test_animals,
                    "weighted_f1": f.weighted_f1,
                    "loss_history": f.loss_history,
                    "confusion": f.confusion.counts.tolist(),
                }
                for f in self.folds
            ],
        }

    def write_json(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")

    def write_confusion_csv(self, path) -> None:
        names = class_names(self.n_classes)
        with Path(path).open("w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["predicted\\true", *names])
            for name, row in zip(names, self.aggregate.counts.tolist()):
                writer.writerow([name, *row])

    def plot_row(self) -> dict:
        return {
            "representation": self.representation,
            "modalities": self.modalities,
            "delta_T": self.window["delta_T"],
            "overlap": self.window["overlap"],
            "resolution": self.resolution,
            "scheme": self.scheme,
            "weighted_f1": self.weighted_f1,
        }


PLOT_COLUMNS = ("representation", "modalities", "delta_T", "overlap", "resolution", "scheme", "weighted_f1")


def write_plot_csv(reports, path) -> None:
    with Path(path).open("w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=PLOT_COLUMNS, lineterminator="\n")
        writer.writeheader()
        for rep in reports:
            writer.writerow(rep.plot_row())


# ---------------------------------------------------------------- driver


def cross_validate(
    features: np.ndarray,
    labels: np.ndarray,
    plan: FoldPlan,
    channel_names,
    train_config: TrainConfig = TrainConfig(),
    seed: int = 0,
    n_classes: int = N_CLASSES,
    animal_ids=None,
):
    """Per fold: fit min-max on train rows, train a fresh model, score the test rows."""
    results = []
    model = None
    scaled_test = None
    for i, (train_rows, test_rows) in enumerate(plan.splits()):
        params = _fit_block_minmax(features, train_rows, channel_names)
        init_seed, shuffle_seed = fold_seeds(seed, i)
        scaled_train = ScaledFeatures(features, train_rows, params)
        model = init_model(scaled_train.shape[1], seed=init_seed, n_classes=n_classes)
        cfg = TrainConfig(train_config.epochs, train_config.batch_size, shuffle_seed)
        result = train(model, scaled_train, labels[train_rows], cfg)
        scaled_test = ScaledFeatures(features, test_rows, params)
        preds = np.concatenate(
            [predict(model, scaled_test[s : s + 256]) for s in range(0, len(scaled_test), 256)]
        )
        cm = confusion(preds, labels[test_rows], n_classes)
        animals = [] if animal_ids is None else sorted(set(np.asarray(animal_ids)[test_rows].tolist()))
        results.append(
            FoldResult(i, int(test_rows.size), cm, f1_scores(cm).weighted_f1, result.loss_history, animals)
        )
    return results, model, scaled_test


def run_experiment(
    recordings,
    window_spec: WindowSpec = WindowSpec(),
    modalities: ModalitySet = ACC_ONLY,
    representation: str = "tfd",
    resolution: Resolution | int = 100,
    scheme: str = "stratified",
    train_config: TrainConfig = TrainConfig(),
    stft_params: StftParams = StftParams(),
    seed: int = 0,
    k: int = 10,
    three_class: bool = False,
    windows: WindowSet | None = None,
    features: np.ndarray | None = None,
) -> EvalReport:
    """Cross-validated evaluation of one pipeline configuration.

    The headline ``weighted_f1`` is the mean of per-fold weighted F1 scores,
    weighted by test-set size. ``windows``/``features`` may be passed in to
    reuse work across calls; they must match the other arguments.
    """
    if scheme not in SCHEMES:
        raise ValidationError(f"scheme must be one of {SCHEMES}")
    if not isinstance(resolution, Resolution):
        resolution = Resolution(int(resolution))
    n_classes = 3 if three_class else N_CLASSES
    if windows is None:
        recordings = list(recordings)
        if three_class:
            recordings = reduce_to_3_classes(recordings)
        windows = prepare_windows(recordings, window_spec, modalities)
    if features is None:
        features = featurize(windows, representation, stft_params, resolution)

    if scheme == "stratified":
        plan = stratified_folds(windows.labels, k, seed)
    else:
        plan = loso_folds(windows.animal_ids)

    folds, model, scaled_test = cross_validate(
        features, windows.labels, plan, windows.channel_names, train_config, seed, n_classes, windows.animal_ids
    )
    aggregate = folds[0].confusion
    for f in folds[1:]:
        aggregate = aggregate + f.confusion
    sizes = np.array([f.test_size for f in folds], dtype=np.float64)
    scores = np.array([f.weighted_f1 for f in folds])
    weighted = float(np.sum(sizes * scores) / sizes.sum())

    input_dim = features.shape[1] * features.shape[2]
    return EvalReport(
        scheme=scheme,
        representation=representation,
        modalities=str(modalities),
        window={"delta_T": window_spec.delta_T, "overlap": window_spec.overlap},
        resolution=resolution.percent,
        stft=None
        if representation == "time"
        else {
            "segment_len": stft_params.segment_len,
            "hop": stft_params.hop,
            "fft_len": stft_params.fft_len,
        },
        n_classes=n_classes,
        input_dim=int(input_dim),
        param_count=param_count(model),
        train={"epochs": train_config.epochs, "batch_size": train_config.batch_size},
        seed=seed,
        folds=folds,
        aggregate=aggregate,
        metrics=f1_scores(aggregate),
        weighted_f1=weighted,
        artifacts={"model": model, "test_inputs": scaled_test},
    )
