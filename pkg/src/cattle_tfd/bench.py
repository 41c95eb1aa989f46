"""Single-inference latency measurement and the spectrogram-resolution sweep."""

from __future__ import annotations

import csv
import os
import platform
import time
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from cattle_tfd.dataset import ACC_ONLY, ModalitySet
from cattle_tfd.errors import ValidationError
from cattle_tfd.evaluation import (
    WindowSet,
    featurize,
    prepare_windows,
    reduce_to_3_classes,
    run_experiment,
)
from cattle_tfd.mlp import MlpModel, TrainConfig, closed_form_param_count, forward, param_count
from cattle_tfd.preprocess import WindowSpec
from cattle_tfd.tfd import RESOLUTIONS, Resolution, StftParams

MIN_ITERATIONS = 100
WARMUP = 10

SWEEP_COLUMNS = ("resolution", "mean_us", "median_us", "p95_us", "iterations", "params", "weighted_f1", "hardware")


@dataclass
class TimingStats:
    mean_us: float
    median_us: float
    p95_us: float
    std_us: float
    iterations: int

    @property
    def stderr_us(self) -> float:
        return self.std_us / np.sqrt(self.iterations)


@dataclass
class BenchRecord:
    resolution: int
    mean_us: float
    median_us: float
    p95_us: float
    iterations: int
    params: int
    weighted_f1: float
    hardware: str


def hardware_descriptor(dtype=np.float64) -> str:
    cpu = platform.processor() or platform.machine()
    return f"{cpu}; {os.cpu_count()} cpu; {platform.system()}; numpy {np.__version__}; {np.dtype(dtype).name}"


def measure_inference(model: MlpModel, inputs, iterations: int = 1000, warmup: int = WARMUP, fn=forward) -> TimingStats:
    """Wall-clock time of ``fn(model, x)`` per call, cycling through ``inputs``.

    Inputs are converted to the model's dtype before timing, so only the
    forward pass is inside the timed region. ``warmup`` untimed calls run first.
    """
    if iterations < MIN_ITERATIONS:
        raise ValidationError(f"iterations must be >= {MIN_ITERATIONS}")
    if warmup < WARMUP:
        raise ValidationError(f"warmup must be >= {WARMUP}")
    dtype = model.weights[0].dtype
    xs = [np.ascontiguousarray(x, dtype=dtype) for x in inputs]
    if not xs:
        raise ValidationError("no inputs to time")
    for i in range(warmup):
        fn(model, xs[i % len(xs)])
    times = np.empty(iterations)
    clock = time.perf_counter_ns
    for i in range(iterations):
        x = xs[i % len(xs)]
        t0 = clock()
        fn(model, x)
        times[i] = clock() - t0
    times /= 1000.0
    return TimingStats(
        mean_us=float(times.mean()),
        median_us=float(np.median(times)),
        p95_us=float(np.percentile(times, 95)),
        std_us=float(times.std(ddof=1)),
        iterations=iterations,
    )


def check_resolutions(resolutions, allow_any: bool = False) -> tuple[int, ...]:
    res = tuple(int(r) for r in resolutions)
    if not res:
        raise ValidationError("at least one resolution is required")
    if not allow_any:
        bad = [r for r in res if r not in RESOLUTIONS]
        if bad:
            raise ValidationError(f"resolutions {bad} not in {RESOLUTIONS}; pass the override to allow them")
    for r in res:
        Resolution(r)
    return res


def resolution_sweep(
    recordings=None,
    window_spec: WindowSpec = WindowSpec(),
    resolutions=RESOLUTIONS,
    modalities: ModalitySet = ACC_ONLY,
    stft_params: StftParams = StftParams(),
    train_config: TrainConfig = TrainConfig(),
    scheme: str = "stratified",
    seed: int = 0,
    iterations: int = 1000,
    dtype=np.float64,
    windows: WindowSet | None = None,
    allow_any: bool = False,
    three_class: bool = False,
):
    """Evaluate, count and time the TFD classifier at each resolution.

    All training happens first; timing then runs serially so the timed phase
    is not disturbed by training work. Returns ``(records, reports)``.
    """
    resolutions = check_resolutions(resolutions, allow_any)
    if windows is None:
        if three_class:
            recordings = reduce_to_3_classes(recordings)
        windows = prepare_windows(recordings, window_spec, modalities)

    reports = []
    for res in resolutions:
        feats = featurize(windows, "tfd", stft_params, res)
        reports.append(
            run_experiment(
                None,
                window_spec,
                modalities,
                "tfd",
                res,
                scheme,
                train_config,
                stft_params,
                seed,
                three_class=three_class,
                windows=windows,
                features=feats,
            )
        )
        del feats

    hardware = hardware_descriptor(dtype)
    records = []
    for res, rep in zip(resolutions, reports):
        model = rep.artifacts["model"].astype(dtype)
        test = rep.artifacts["test_inputs"]
        inputs = test[np.arange(min(len(test), 64))]
        stats = measure_inference(model, inputs, iterations)
        n_params = param_count(model)
        if n_params != closed_form_param_count(model.input_dim, model.n_classes):
            raise AssertionError("parameter count disagrees with the closed form")
        records.append(
            BenchRecord(
                resolution=res,
                mean_us=stats.mean_us,
                median_us=stats.median_us,
                p95_us=stats.p95_us,
                iterations=stats.iterations,
                params=n_params,
                weighted_f1=rep.weighted_f1,
                hardware=hardware,
            )
        )
    return records, reports


def write_sweep_csv(records, path) -> None:
    with Path(path).open("w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=SWEEP_COLUMNS, lineterminator="\n")
        writer.writeheader()
        for rec in records:
            writer.writerow(asdict(rec))
