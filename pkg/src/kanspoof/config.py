"""Experiment configuration: one JSON document drives every command.

Example::

    {
      "schema_version": 1,
      "seed": 0,
      "model": {"model_dim": 32, "kan_projection": true},
      "train": {"max_epochs": 50},
      "data": {"source": "synthetic", "t_fix": 200,
               "synthetic": {"n_per_class": 200, "T": 200, "D": 16}},
      "metrics": {"c_fa": 10.0}
    }

Missing sections take their defaults.  Unknown keys anywhere are errors.
The top-level ``seed`` is the only source of randomness: it seeds data
generation, the split, model initialisation and batch order.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

from .data import SyntheticGenConfig
from .kanformer import ModelConfig
from .metrics import TdcfParams
from .numerics import ConfigurationError
from .train import TrainConfig

SCHEMA_VERSION = 1
DATA_SOURCES = ("synthetic", "files")
FILE_KEYS = ("feature_dir", "train_manifest", "dev_manifest", "eval_manifest")


def _reject_unknown(section: str, d: dict, allowed) -> None:
    unknown = set(d) - set(allowed)
    if unknown:
        raise ConfigurationError(f"unknown keys in {section}: {sorted(unknown)}")


@dataclass(frozen=True)
class DataConfig:
    source: str = "synthetic"
    t_fix: int = 200
    synthetic: SyntheticGenConfig = field(default_factory=SyntheticGenConfig)
    files: dict = field(default_factory=dict)

    @classmethod
    def from_dict(cls, d: dict) -> "DataConfig":
        _reject_unknown("data", d, ("source", "t_fix", "synthetic", "files"))
        syn = dict(d.get("synthetic", {}))
        allowed = {f.name for f in fields(SyntheticGenConfig)} - {"seed"}
        _reject_unknown("data.synthetic", syn, allowed)
        if "freq_range" in syn:
            syn["freq_range"] = tuple(syn["freq_range"])
        files = dict(d.get("files", {}))
        _reject_unknown("data.files", files, FILE_KEYS)
        return cls(
            source=d.get("source", "synthetic"),
            t_fix=d.get("t_fix", 200),
            synthetic=SyntheticGenConfig(**syn),
            files=files,
        )

    def to_dict(self) -> dict:
        syn = asdict(self.synthetic)
        syn.pop("seed")
        syn["freq_range"] = list(syn["freq_range"])
        return {"source": self.source, "t_fix": self.t_fix, "synthetic": syn, "files": dict(self.files)}

    def validate(self, base: Path | None = None) -> "DataConfig":
        if self.source not in DATA_SOURCES:
            raise ConfigurationError(f"data.source must be one of {DATA_SOURCES}, got {self.source!r}")
        if not isinstance(self.t_fix, int) or self.t_fix < 1:
            raise ConfigurationError("data.t_fix must be a positive integer")
        s = self.synthetic
        bad = [n for n in ("n_per_class", "T", "D") if not isinstance(getattr(s, n), int) or getattr(s, n) < 1]
        if not 0.0 < s.channel_fraction <= 1.0:
            bad.append("channel_fraction")
        if len(s.freq_range) != 2 or not s.freq_range[0] <= s.freq_range[1]:
            bad.append("freq_range")
        if not abs(s.ar_coeff) < 1.0:
            bad.append("ar_coeff")
        if bad:
            raise ConfigurationError(f"invalid data.synthetic fields: {', '.join(bad)}")
        if self.source == "files":
            missing = [k for k in FILE_KEYS if k not in self.files]
            if missing:
                raise ConfigurationError(f"data.files is missing {missing}")
            for key in FILE_KEYS:
                if not self.resolve(key, base).exists():
                    raise ConfigurationError(f"data.files.{key} does not exist: {self.resolve(key, base)}")
        return self

    def resolve(self, key: str, base: Path | None = None) -> Path:
        """Path from ``files`` made absolute against the config file's directory."""
        p = Path(self.files[key])
        return p if p.is_absolute() or base is None else base / p


@dataclass(frozen=True)
class ExperimentConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    data: DataConfig = field(default_factory=DataConfig)
    metrics: TdcfParams = field(default_factory=TdcfParams)
    seed: int = 0
    schema_version: int = SCHEMA_VERSION
    base_dir: Path | None = field(default=None, compare=False)

    @classmethod
    def from_dict(cls, d: dict, base_dir: Path | None = None) -> "ExperimentConfig":
        if not isinstance(d, dict):
            raise ConfigurationError("config must be a JSON object")
        _reject_unknown("config", d, ("schema_version", "seed", "model", "train", "data", "metrics"))
        version = d.get("schema_version", SCHEMA_VERSION)
        if version != SCHEMA_VERSION:
            raise ConfigurationError(f"unsupported schema_version {version}, expected {SCHEMA_VERSION}")
        train = dict(d.get("train", {}))
        if "seed" in train:
            raise ConfigurationError("unknown keys in train: ['seed'] (use the top-level seed)")
        metrics = dict(d.get("metrics", {}))
        _reject_unknown("metrics", metrics, {f.name for f in fields(TdcfParams)})
        try:
            return cls(
                model=ModelConfig.from_dict(dict(d.get("model", {}))),
                train=TrainConfig.from_dict(train),
                data=DataConfig.from_dict(dict(d.get("data", {}))),
                metrics=TdcfParams(**metrics),
                seed=d.get("seed", 0),
                schema_version=version,
                base_dir=base_dir,
            )
        except TypeError as exc:
            raise ConfigurationError(str(exc)) from None

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        path = Path(path)
        try:
            raw = json.loads(path.read_text())
        except FileNotFoundError:
            raise ConfigurationError(f"config file not found: {path}") from None
        except json.JSONDecodeError as exc:
            raise ConfigurationError(f"{path}: invalid JSON ({exc})") from None
        return cls.from_dict(raw, base_dir=path.parent)

    def to_dict(self) -> dict:
        train = asdict(self.train)
        train.pop("seed")
        return {
            "schema_version": self.schema_version,
            "seed": self.seed,
            "model": asdict(self.model),
            "train": train,
            "data": self.data.to_dict(),
            "metrics": asdict(self.metrics),
        }

    def with_seed(self, seed: int) -> "ExperimentConfig":
        return replace(self, seed=seed)

    def validate(self) -> "ExperimentConfig":
        if not isinstance(self.seed, int) or self.seed < 0:
            raise ConfigurationError("seed must be a non-negative integer")
        self.model.validate()
        self.train_config().validate()
        self.data.validate(self.base_dir)
        try:
            self.metrics.validate()
        except ValueError as exc:
            raise ConfigurationError(f"invalid metrics: {exc}") from None
        if self.data.source == "synthetic" and self.data.synthetic.D != self.model.feature_dim:
            raise ConfigurationError(
                f"data.synthetic.D ({self.data.synthetic.D}) must equal model.feature_dim ({self.model.feature_dim})"
            )
        return self

    # seeded views of the sections

    def train_config(self) -> TrainConfig:
        return replace(self.train, seed=self.seed)

    def synthetic_config(self) -> SyntheticGenConfig:
        return replace(self.data.synthetic, seed=self.seed)
