"""Command-line entry point: ``cattle-tfd {synth,train,eval,bench,spectrogram}``.

Exit codes: 0 success, 1 invalid configuration or input, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from cattle_tfd.bench import resolution_sweep, write_sweep_csv
from cattle_tfd.config import RunConfig
from cattle_tfd.dataset import load_csv, synth_generate, write_csv
from cattle_tfd.errors import ValidationError
from cattle_tfd.evaluation import (
    ScaledFeatures,
    _fit_block_minmax,
    featurize,
    prepare_windows,
    reduce_to_3_classes,
    run_experiment,
    write_plot_csv,
)
from cattle_tfd.mlp import N_OUTPUTS, init_model, param_count, save_model, train
from cattle_tfd.preprocess import design_bandpass, filter_recording
from cattle_tfd.tfd import Resolution, resize_bicubic, spectrogram, write_pgm, write_plane_csv

log = logging.getLogger("cattle_tfd")

DATASET_FILE = "dataset.csv"
MODEL_FILE = "model.bin"
MODEL_SIDECAR = "model.json"
REPORT_FILE = "report.json"
CONFUSION_FILE = "confusion.csv"
PLOT_FILE = "plot.csv"
SWEEP_FILE = "sweep.csv"
CONFIG_COPY = "run.ini"


def _add_common(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("run")
    g.add_argument("--config", help="INI run-configuration file; explicit flags override it")
    g.add_argument("--out", help="output directory")
    g.add_argument("--seed", type=int, help="global seed for data, folds, init and shuffling")
    g.add_argument("--force", action="store_true", help="overwrite existing outputs")

    d = p.add_argument_group("data")
    d.add_argument("--csv", help="read recordings from this CSV instead of synthesising")
    d.add_argument("--duration", dest="duration_s", type=float, help="synthetic seconds per animal")
    d.add_argument("--animals", type=int, help="synthetic animal count")
    d.add_argument("--noise-std", type=float)
    d.add_argument("--bout", dest="bout_s", type=float, help="max synthetic bout length (s)")
    d.add_argument("--distribution", help="'reference' or 9 comma-separated class weights")

    w = p.add_argument_group("windowing and features")
    w.add_argument("--window", dest="delta_T", type=float, help="window length in seconds")
    w.add_argument("--overlap", type=float, help="window overlap fraction, e.g. 0.8")
    w.add_argument("--modalities", help="acc, acc+mag, acc+gyro, acc+mag+gyro or all")
    w.add_argument("--representation", choices=("time", "tfd"))
    w.add_argument("--segment-len", type=int)
    w.add_argument("--hop", type=int)
    w.add_argument("--fft-len", type=int)
    w.add_argument("--resolution", type=int, help="spectrogram resolution percent")

    t = p.add_argument_group("training and evaluation")
    t.add_argument("--epochs", type=int)
    t.add_argument("--batch-size", type=int)
    t.add_argument("--scheme", help="stratified (scv) or loso (loocv)")
    t.add_argument("-k", dest="k", type=int, help="folds for stratified CV")
    t.add_argument("--three-class", action="store_const", const=True, default=None)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cattle-tfd", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    for name, help_text in [
        ("synth", "write a seeded synthetic dataset CSV"),
        ("train", "train one model on all windows and save it"),
        ("eval", "cross-validate a configuration and write a report"),
        ("bench", "resolution sweep: F1, parameter count and inference latency"),
        ("spectrogram", "export one window's spectrogram as CSV and PGM"),
    ]:
        p = sub.add_parser(name, help=help_text)
        _add_common(p)
        if name == "bench":
            p.add_argument("--resolutions", help="comma-separated percents, default 100,50,20,10")
            p.add_argument("--iterations", type=int)
            p.add_argument("--allow-any-resolution", action="store_const", const=True, default=None)
            p.add_argument("--float32", action="store_const", const=True, default=None)
        if name == "spectrogram":
            p.add_argument("--channel", default="az")
            p.add_argument("--window-index", type=int, default=0)
    return parser


_CONFIG_KEYS = (
    "out", "seed", "duration_s", "animals", "noise_std", "bout_s", "distribution", "delta_T",
    "overlap", "modalities", "representation", "segment_len", "hop", "fft_len", "resolution",
    "epochs", "batch_size", "scheme", "k", "three_class", "resolutions", "iterations",
    "allow_any_resolution", "float32",
)  # fmt: skip


def resolve_config(args) -> RunConfig:
    cfg = RunConfig.load(args.config) if args.config else RunConfig()
    overrides = {key: getattr(args, key, None) for key in _CONFIG_KEYS}
    if args.csv:
        overrides.update(source="csv", csv=args.csv)
    return cfg.override(**overrides).validate()


def _claim(paths, force: bool) -> None:
    existing = [str(p) for p in paths if p.exists()]
    if existing and not force:
        raise ValidationError(f"refusing to overwrite {', '.join(existing)} (use --force)")


def _load_recordings(cfg: RunConfig):
    if cfg.source == "csv":
        return load_csv(cfg.csv)
    return synth_generate(cfg.synth_config())


def _write_config(cfg: RunConfig, out: Path) -> None:
    (out / CONFIG_COPY).write_text(cfg.to_ini(), encoding="utf-8")


def cmd_synth(cfg: RunConfig, force: bool = False) -> Path:
    if cfg.source != "synth":
        raise ValidationError("synth does not take a --csv source")
    out = Path(cfg.out)
    target = out / DATASET_FILE
    _claim([target], force)
    out.mkdir(parents=True, exist_ok=True)
    write_csv(synth_generate(cfg.synth_config()), target)
    _write_config(cfg, out)
    return target


def cmd_train(cfg: RunConfig, force: bool = False) -> Path:
    out = Path(cfg.out)
    _claim([out / MODEL_FILE, out / MODEL_SIDECAR], force)
    recs = _load_recordings(cfg)
    if cfg.three_class:
        recs = reduce_to_3_classes(recs)
    windows = prepare_windows(recs, cfg.window_spec(), cfg.modality_set())
    feats = featurize(windows, cfg.representation, cfg.stft_params(), cfg.resolution)
    rows = np.arange(len(windows))
    params = _fit_block_minmax(feats, rows, windows.channel_names)
    scaled = ScaledFeatures(feats, rows, params)
    n_classes = 3 if cfg.three_class else N_OUTPUTS
    model = init_model(scaled.shape[1], seed=cfg.seed, n_classes=n_classes)
    result = train(model, scaled, windows.labels, cfg.train_config())

    out.mkdir(parents=True, exist_ok=True)
    save_model(model, out / MODEL_FILE)
    sidecar = {
        "input_dim": model.input_dim,
        "dims": list(model.dims),
        "param_count": param_count(model),
        "feature_block_shape": list(feats.shape[1:]),
        "normalization": params.to_dict(),
        "loss_history": result.loss_history,
        "n_windows": len(windows),
        "config": cfg.to_ini(),
    }
    (out / MODEL_SIDECAR).write_text(json.dumps(sidecar, indent=2, sort_keys=True) + "\n")
    _write_config(cfg, out)
    return out / MODEL_FILE


def cmd_eval(cfg: RunConfig, force: bool = False):
    out = Path(cfg.out)
    _claim([out / REPORT_FILE, out / CONFUSION_FILE, out / PLOT_FILE], force)
    recs = _load_recordings(cfg)
    report = run_experiment(
        recs,
        cfg.window_spec(),
        cfg.modality_set(),
        cfg.representation,
        cfg.resolution,
        cfg.scheme,
        cfg.train_config(),
        cfg.stft_params(),
        seed=cfg.seed,
        k=cfg.k,
        three_class=cfg.three_class,
    )
    out.mkdir(parents=True, exist_ok=True)
    report.write_json(out / REPORT_FILE)
    report.write_confusion_csv(out / CONFUSION_FILE)
    write_plot_csv([report], out / PLOT_FILE)
    _write_config(cfg, out)
    return report


def cmd_bench(cfg: RunConfig, force: bool = False):
    out = Path(cfg.out)
    resolutions = cfg.resolution_list()
    model_files = [out / f"model_r{r}.bin" for r in resolutions]
    _claim([out / SWEEP_FILE, *model_files], force)
    recs = _load_recordings(cfg)
    if cfg.three_class:
        recs = reduce_to_3_classes(recs)
    windows = prepare_windows(recs, cfg.window_spec(), cfg.modality_set())
    records, reports = resolution_sweep(
        window_spec=cfg.window_spec(),
        resolutions=resolutions,
        modalities=cfg.modality_set(),
        stft_params=cfg.stft_params(),
        train_config=cfg.train_config(),
        scheme=cfg.scheme,
        seed=cfg.seed,
        iterations=cfg.iterations,
        dtype=np.float32 if cfg.float32 else np.float64,
        windows=windows,
        allow_any=cfg.allow_any_resolution,
        three_class=cfg.three_class,
    )
    out.mkdir(parents=True, exist_ok=True)
    for path, rep in zip(model_files, reports):
        save_model(rep.artifacts["model"], path)
    write_sweep_csv(records, out / SWEEP_FILE)
    _write_config(cfg, out)
    return records


def cmd_spectrogram(cfg: RunConfig, channel: str = "az", window_index: int = 0, force: bool = False):
    modalities = cfg.modality_set()
    if channel not in modalities.channel_names:
        raise ValidationError(f"channel {channel!r} not in selected modalities {modalities.channel_names}")
    out = Path(cfg.out)
    stem = f"spectrogram_{channel}_w{window_index}_r{cfg.resolution}"
    targets = [out / f"{stem}.csv", out / f"{stem}.pgm"]
    _claim(targets, force)
    recs = _load_recordings(cfg)
    windows = prepare_windows(recs, cfg.window_spec(), modalities, bandpass=design_bandpass())
    if not 0 <= window_index < len(windows):
        raise ValidationError(f"window index {window_index} outside 0..{len(windows) - 1}")
    sig = windows.data[window_index, modalities.channel_names.index(channel)]
    plane = resize_bicubic(spectrogram(sig, cfg.stft_params()), Resolution(cfg.resolution))
    out.mkdir(parents=True, exist_ok=True)
    write_plane_csv(plane, targets[0])
    write_pgm(plane, targets[1])
    return plane


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        cfg = resolve_config(args)
        if args.command == "synth":
            path = cmd_synth(cfg, args.force)
            print(path)
        elif args.command == "train":
            path = cmd_train(cfg, args.force)
            print(path)
        elif args.command == "eval":
            report = cmd_eval(cfg, args.force)
            print(f"weighted F1 {report.weighted_f1:.4f} over {len(report.folds)} folds")
        elif args.command == "bench":
            for rec in cmd_bench(cfg, args.force):
                print(
                    f"{rec.resolution:>3}%  params {rec.params:>9}  mean {rec.mean_us:9.1f} us  "
                    f"F1 {rec.weighted_f1:.4f}"
                )
        elif args.command == "spectrogram":
            plane = cmd_spectrogram(cfg, args.channel, args.window_index, args.force)
            print(f"{plane.shape[0]}x{plane.shape[1]} plane written to {cfg.out}")
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # noqa: BLE001
        log.debug("runtime failure", exc_info=True)
        print(f"runtime error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
