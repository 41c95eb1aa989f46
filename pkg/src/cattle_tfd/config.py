"""Run configuration: INI-style sections of flat keys, with validation and round-trip."""

from __future__ import annotations

import configparser
import io
from dataclasses import dataclass, fields, replace
from pathlib import Path

from cattle_tfd.dataset import REFERENCE_DISTRIBUTION, ModalitySet, SynthConfig
from cattle_tfd.errors import ValidationError
from cattle_tfd.evaluation import REPRESENTATIONS
from cattle_tfd.mlp import TrainConfig
from cattle_tfd.preprocess import WindowSpec
from cattle_tfd.tfd import RESOLUTIONS, Resolution, StftParams

SCHEME_ALIASES = {"scv": "stratified", "stratified": "stratified", "loocv": "loso", "loso": "loso"}

# key -> (section, type)
_LAYOUT = {
    "source": ("data", str),
    "csv": ("data", str),
    "duration_s": ("data", float),
    "animals": ("data", int),
    "noise_std": ("data", float),
    "bout_s": ("data", float),
    "distribution": ("data", str),
    "delta_T": ("window", float),
    "overlap": ("window", float),
    "modalities": ("features", str),
    "representation": ("features", str),
    "segment_len": ("features", int),
    "hop": ("features", int),
    "fft_len": ("features", int),
    "resolution": ("features", int),
    "epochs": ("train", int),
    "batch_size": ("train", int),
    "scheme": ("eval", str),
    "k": ("eval", int),
    "three_class": ("eval", bool),
    "resolutions": ("bench", str),
    "iterations": ("bench", int),
    "allow_any_resolution": ("bench", bool),
    "float32": ("bench", bool),
    "seed": ("run", int),
    "out": ("run", str),
}


@dataclass
class RunConfig:
    source: str = "synth"
    csv: str = ""
    duration_s: float = 600.0
    animals: int = 3
    noise_std: float = 0.1
    bout_s: float = 60.0
    distribution: str = "reference"
    delta_T: float = 10.0
    overlap: float = 0.8
    modalities: str = "acc"
    representation: str = "tfd"
    segment_len: int = StftParams.segment_len
    hop: int = StftParams.hop
    fft_len: int = StftParams.fft_len
    resolution: int = 100
    epochs: int = 5
    batch_size: int = 32
    scheme: str = "stratified"
    k: int = 10
    three_class: bool = False
    resolutions: str = ",".join(str(r) for r in RESOLUTIONS)
    iterations: int = 1000
    allow_any_resolution: bool = False
    float32: bool = False
    seed: int = 0
    out: str = "out"

    # ---- construction

    @classmethod
    def from_ini(cls, text: str) -> "RunConfig":
        parser = configparser.ConfigParser()
        parser.optionxform = str
        try:
            parser.read_string(text)
        except configparser.Error as exc:
            raise ValidationError(f"config parse error: {exc}") from None
        values = {}
        for section in parser.sections():
            for key, raw in parser.items(section):
                if key not in _LAYOUT:
                    raise ValidationError(f"unknown config key [{section}] {key}")
                expected, typ = _LAYOUT[key]
                if section != expected:
                    raise ValidationError(f"key {key} belongs in [{expected}], found in [{section}]")
                values[key] = _coerce(key, raw, typ)
        return cls(**values)

    @classmethod
    def load(cls, path) -> "RunConfig":
        path = Path(path)
        if not path.is_file():
            raise ValidationError(f"config file {path} does not exist")
        return cls.from_ini(path.read_text(encoding="utf-8"))

    def override(self, **values) -> "RunConfig":
        return replace(self, **{k: v for k, v in values.items() if v is not None})

    def to_ini(self) -> str:
        parser = configparser.ConfigParser()
        parser.optionxform = str
        for f in fields(self):
            section, typ = _LAYOUT[f.name]
            if not parser.has_section(section):
                parser.add_section(section)
            value = getattr(self, f.name)
            parser.set(section, f.name, _format(value, typ))
        buf = io.StringIO()
        parser.write(buf)
        return buf.getvalue()

    # ---- derived objects

    def validate(self) -> "RunConfig":
        """Check every field; returns a copy with aliases normalised."""
        if self.source not in ("synth", "csv"):
            raise ValidationError("source must be 'synth' or 'csv'")
        if self.source == "csv":
            if not self.csv:
                raise ValidationError("source=csv needs a csv path")
            if not Path(self.csv).is_file():
                raise ValidationError(f"csv file {self.csv} does not exist")
        if self.representation not in REPRESENTATIONS:
            raise ValidationError(f"representation must be one of {REPRESENTATIONS}")
        if self.scheme not in SCHEME_ALIASES:
            raise ValidationError(f"scheme must be one of {sorted(SCHEME_ALIASES)}")
        if self.k < 2:
            raise ValidationError("k must be >= 2")
        if self.iterations < 100:
            raise ValidationError("iterations must be >= 100")
        if self.representation == "time" and self.resolution != 100:
            raise ValidationError("resolution applies to the tfd representation only")
        if self.seed < 0:
            raise ValidationError("seed must be non-negative")
        cfg = replace(self, scheme=SCHEME_ALIASES[self.scheme])
        # Constructing these runs their own checks.
        cfg.window_spec()
        cfg.modality_set()
        cfg.stft_params()
        cfg.train_config()
        Resolution(cfg.resolution)
        cfg.resolution_list()
        if cfg.source == "synth":
            cfg.synth_config()
        if cfg.representation == "tfd":
            cfg.stft_params().frames(cfg.window_spec().length)
        return cfg

    def window_spec(self) -> WindowSpec:
        return WindowSpec(self.delta_T, self.overlap)

    def modality_set(self) -> ModalitySet:
        return ModalitySet.parse(self.modalities)

    def stft_params(self) -> StftParams:
        return StftParams(self.segment_len, self.hop, self.fft_len)

    def train_config(self) -> TrainConfig:
        return TrainConfig(self.epochs, self.batch_size, self.seed)

    def resolution_list(self) -> tuple[int, ...]:
        try:
            res = tuple(int(r) for r in self.resolutions.split(",") if r.strip())
        except ValueError:
            raise ValidationError(f"bad resolutions list {self.resolutions!r}") from None
        if not res:
            raise ValidationError("resolutions list is empty")
        if not self.allow_any_resolution and any(r not in RESOLUTIONS for r in res):
            raise ValidationError(
                f"resolutions must be drawn from {RESOLUTIONS}; set allow_any_resolution to override"
            )
        for r in res:
            Resolution(r)
        return res

    def synth_config(self) -> SynthConfig:
        if self.distribution == "reference":
            dist = REFERENCE_DISTRIBUTION
        else:
            try:
                dist = tuple(float(v) for v in self.distribution.split(","))
            except ValueError:
                raise ValidationError(f"bad distribution {self.distribution!r}") from None
        return SynthConfig(
            seed=self.seed,
            duration_s=self.duration_s,
            class_distribution=dist,
            noise_std=self.noise_std,
            animals=self.animals,
            bout_s=self.bout_s,
        )


def _coerce(key, raw: str, typ):
    raw = raw.strip()
    try:
        if typ is bool:
            lowered = raw.lower()
            if lowered in ("1", "true", "yes", "on"):
                return True
            if lowered in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        return typ(raw)
    except ValueError:
        raise ValidationError(f"config key {key}: cannot parse {raw!r} as {typ.__name__}") from None


def _format(value, typ) -> str:
    if typ is bool:
        return "true" if value else "false"
    if typ is float:
        return repr(float(value))
    return str(value)
