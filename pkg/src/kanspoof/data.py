"""Feature files, label manifests, length standardisation and the toy task."""

from __future__ import annotations

import csv
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

LABELS = ("bonafide", "spoof")
KFT_MAGIC = b"KFT1"


class FormatError(ValueError):
    """A binary or text file does not match its declared format."""


@dataclass
class UtteranceRecord:
    id: str
    features: np.ndarray  # T x D
    label: str = "unlabeled"


@dataclass
class DatasetSplit:
    records: list[UtteranceRecord]
    role: str = "train"
    t_fix: int | None = None

    def __len__(self) -> int:
        return len(self.records)

    def arrays(self, t_fix: int | None = None) -> tuple[np.ndarray, np.ndarray]:
        """Stack features (length-standardised to ``t_fix``) and integer labels."""
        t_fix = t_fix or self.t_fix
        if t_fix is None:
            raise ValueError("t_fix is required to stack a split")
        x = np.stack([crop_or_pad(r.features, t_fix) for r in self.records])
        y = np.array([LABELS.index(r.label) for r in self.records], dtype=np.int64)
        return x, y


# -- KFT1 feature files -------------------------------------------------------------


def write_features(path, features: np.ndarray) -> None:
    arr = np.ascontiguousarray(features, dtype="<f4")
    header = KFT_MAGIC + struct.pack(f"<I{arr.ndim}I", arr.ndim, *arr.shape)
    Path(path).write_bytes(header + arr.tobytes())


def read_features(path) -> np.ndarray:
    """Load a KFT1 file as a float64 array of the declared shape."""
    raw = Path(path).read_bytes()
    if raw[:4] != KFT_MAGIC:
        raise FormatError(f"{path}: bad magic {raw[:4]!r} at offset 0")
    if len(raw) < 8:
        raise FormatError(f"{path}: truncated header at offset 4")
    (ndim,) = struct.unpack_from("<I", raw, 4)
    end = 8 + 4 * ndim
    if len(raw) < end:
        raise FormatError(f"{path}: truncated extents at offset 8")
    shape = struct.unpack_from(f"<{ndim}I", raw, 8)
    n = int(np.prod(shape)) if ndim else 1
    payload = len(raw) - end
    if payload != 4 * n:
        raise FormatError(
            f"{path}: payload at offset {end} holds {payload} bytes, shape {shape} needs {4 * n}"
        )
    return np.frombuffer(raw, dtype="<f4", offset=end).reshape(shape).astype(np.float64)


# -- label manifests ---------------------------------------------------------------


def write_manifest(path, rows: list[tuple[str, str]]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["utt_id", "label"])
        w.writerows(rows)


def read_manifest(path) -> list[tuple[str, str]]:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != ["utt_id", "label"]:
            raise FormatError(f"{path}: expected header 'utt_id,label', got {header}")
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if len(row) != 2 or row[1] not in LABELS:
                raise FormatError(f"{path}:{lineno}: bad manifest row {row}")
            rows.append((row[0], row[1]))
    return rows


def load_split(manifest, feature_dir, role: str, t_fix: int | None = None) -> DatasetSplit:
    feature_dir = Path(feature_dir)
    records = [
        UtteranceRecord(utt, read_features(feature_dir / f"{utt}.kft"), label)
        for utt, label in read_manifest(manifest)
    ]
    return DatasetSplit(records, role, t_fix)


# -- length standardisation --------------------------------------------------------


def crop_or_pad(x: np.ndarray, t_fix: int) -> np.ndarray:
    """Keep the first ``t_fix`` frames, or tile a short sequence up to ``t_fix``."""
    t = x.shape[0]
    if t < 1:
        raise ValueError("sequence needs at least one frame")
    if t >= t_fix:
        return x[:t_fix]
    reps = -(-t_fix // t)
    return np.tile(x, (reps,) + (1,) * (x.ndim - 1))[:t_fix]


# -- synthetic toy task ---------------------------------------------------------------


@dataclass(frozen=True)
class SyntheticGenConfig:
    n_per_class: int = 200
    T: int = 200
    D: int = 16
    seed: int = 0
    ar_coeff: float = 0.9
    amplitude: float = 0.5
    freq_range: tuple[float, float] = field(default=(0.1 * np.pi, 0.9 * np.pi))
    channel_fraction: float = 0.25


def _ar1(rng: np.random.Generator, t: int, d: int, a: float) -> np.ndarray:
    x = np.empty((t, d))
    x[0] = rng.normal(0.0, 1.0 / np.sqrt(1.0 - a * a), d)
    noise = rng.normal(0.0, 1.0, (t - 1, d))
    for i in range(1, t):
        x[i] = a * x[i - 1] + noise[i - 1]
    return x


def synth_generate(cfg: SyntheticGenConfig) -> DatasetSplit:
    """Bonafide: per-channel stationary AR(1).  Spoof: the same process plus one
    sinusoid (random frequency and phase) added to a random subset of channels."""
    rng = np.random.default_rng(cfg.seed)
    n_art = max(1, int(round(cfg.channel_fraction * cfg.D)))
    records = []
    for i in range(2 * cfg.n_per_class):
        label = "bonafide" if i < cfg.n_per_class else "spoof"
        x = _ar1(rng, cfg.T, cfg.D, cfg.ar_coeff)
        if label == "spoof":
            omega = rng.uniform(*cfg.freq_range)
            phase = rng.uniform(0.0, 2.0 * np.pi)
            chans = rng.choice(cfg.D, n_art, replace=False)
            x[:, chans] += cfg.amplitude * np.sin(omega * np.arange(cfg.T) + phase)[:, None]
        records.append(UtteranceRecord(f"utt{i:05d}", x, label))
    return DatasetSplit(records, "all", cfg.T)


def split_sizes(n: int) -> tuple[int, int, int]:
    """70/15/15 with floor for train and dev, remainder to eval."""
    n_train = (70 * n) // 100
    n_dev = (15 * n) // 100
    return n_train, n_dev, n - n_train - n_dev


def split_records(data: DatasetSplit, seed: int) -> dict[str, DatasetSplit]:
    order = np.random.default_rng(seed).permutation(len(data.records))
    n_train, n_dev, _ = split_sizes(len(order))
    parts = {
        "train": order[:n_train],
        "dev": order[n_train : n_train + n_dev],
        "eval": order[n_train + n_dev :],
    }
    return {
        role: DatasetSplit([data.records[i] for i in sorted(idx)], role, data.t_fix)
        for role, idx in parts.items()
    }
