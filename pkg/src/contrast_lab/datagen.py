"""Synthetic labeled hypersphere data, two-view augmentation and CIFAR-10 binary ingestion."""

from __future__ import annotations

import math
import os
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .core import InvalidConfig, LabelOutOfRange, MalformedRecord, make_unit_batch

# fixed purpose ids so every RNG stream is addressable by (seed, purpose)
STREAMS = {"data": 0, "init": 1, "shuffle": 2, "augment": 3, "queue": 4, "eval": 5}


def stream(seed: int, purpose: str, *extra: int) -> np.random.Generator:
    """Counter-based generator for one named purpose of a run."""
    key = (STREAMS[purpose],) + tuple(int(e) for e in extra)
    ss = np.random.SeedSequence(int(seed) % 2**64, spawn_key=key)
    return np.random.Generator(np.random.Philox(ss))


@dataclass(frozen=True, eq=False)
class LabeledDataset:
    points: np.ndarray
    labels: np.ndarray
    C: int

    def __post_init__(self):
        points = np.array(self.points, dtype=np.float64)
        labels = np.array(self.labels, dtype=np.int64).reshape(-1)
        if points.ndim != 2 or points.shape[0] != labels.shape[0] or points.shape[0] < 1:
            raise InvalidConfig(f"points {points.shape} and labels {labels.shape} do not match")
        if self.C < 2:
            raise InvalidConfig(f"need at least two classes, got C={self.C}")
        if labels.min() < 0 or labels.max() >= self.C:
            raise LabelOutOfRange(f"labels must lie in [0, {self.C})")
        points.setflags(write=False)
        labels.setflags(write=False)
        object.__setattr__(self, "points", points)
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "C", int(self.C))

    @property
    def n(self) -> int:
        return self.points.shape[0]

    @property
    def d(self) -> int:
        return self.points.shape[1]


@dataclass(frozen=True)
class AugmentConfig:
    noise_sigma: float = 0.1
    dropout_prob: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if not (math.isfinite(self.noise_sigma) and self.noise_sigma >= 0):
            raise InvalidConfig(f"noise_sigma must be finite and >= 0, got {self.noise_sigma}")
        if not 0.0 <= self.dropout_prob < 1.0:
            raise InvalidConfig(f"dropout_prob must lie in [0, 1), got {self.dropout_prob}")


def synthetic_dataset(C: int, per_class: int, d: int, spread_sigma: float, seed: int) -> LabeledDataset:
    """Class centers uniform on S^{d-1}; each point is its normalized center plus Gaussian noise."""
    if C < 2 or per_class < 1 or d < 2 or not spread_sigma >= 0:
        raise InvalidConfig(f"invalid synthetic config C={C} per_class={per_class} d={d} sigma={spread_sigma}")
    rng = stream(seed, "data")
    centers = make_unit_batch(rng.standard_normal((C, d))).data
    labels = np.repeat(np.arange(C), per_class)
    raw = centers[labels] + spread_sigma * rng.standard_normal((C * per_class, d))
    return LabeledDataset(make_unit_batch(raw).data, labels, C)


def _one_view(x: np.ndarray, cfg: AugmentConfig, rng: np.random.Generator) -> np.ndarray:
    out = x + cfg.noise_sigma * rng.standard_normal(x.shape)
    if cfg.dropout_prob > 0:
        keep = rng.random(x.shape) >= cfg.dropout_prob
        out = out * keep / (1.0 - cfg.dropout_prob)
    return out


def augment_views(points, cfg: AugmentConfig, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Two independently augmented, row-normalized views of every row of ``points``."""
    x = np.atleast_2d(np.asarray(points, dtype=np.float64))
    a = _one_view(x, cfg, rng)
    b = _one_view(x, cfg, rng)
    return make_unit_batch(a).data, make_unit_batch(b).data


def two_view_augment(point, cfg: AugmentConfig, draw: int) -> tuple[np.ndarray, np.ndarray]:
    """Views of a single point; reproducible from ``(cfg.seed, draw)``."""
    a, b = augment_views(np.asarray(point)[None, :], cfg, stream(cfg.seed, "augment", draw))
    return a[0], b[0]


CIFAR_RECORD = 1 + 3072
CIFAR_CLASSES = 10


def _read_cifar_file(path) -> np.ndarray:
    raw = np.fromfile(path, dtype=np.uint8)
    if raw.size == 0 or raw.size % CIFAR_RECORD:
        raise MalformedRecord(f"{path}: length {raw.size} is not a multiple of {CIFAR_RECORD}")
    return raw.reshape(-1, CIFAR_RECORD)


def cifar_load(path, indices: Sequence[int] | None = None) -> LabeledDataset:
    """Load CIFAR-10 binary batch file(s).

    ``path`` is one file or a list of files, concatenated in order. Pixels are
    scaled to [0, 1] and then standardized per feature over the loaded subset.
    """
    paths = [path] if isinstance(path, (str, os.PathLike)) else list(path)
    for p in paths:
        if not Path(p).is_file():
            raise FileNotFoundError(p)
    records = np.concatenate([_read_cifar_file(p) for p in paths])
    if indices is not None:
        idx = np.asarray(indices, dtype=np.int64).reshape(-1)
        if idx.size == 0 or idx.min() < 0 or idx.max() >= records.shape[0]:
            raise InvalidConfig(f"indices must lie in [0, {records.shape[0]})")
        records = records[np.sort(idx)]
    labels = records[:, 0].astype(np.int64)
    if labels.max() >= CIFAR_CLASSES:
        raise LabelOutOfRange(f"label {int(labels.max())} >= {CIFAR_CLASSES}")
    pixels = records[:, 1:].astype(np.float64) / 255.0
    std = pixels.std(axis=0)
    std[std == 0] = 1.0
    points = (pixels - pixels.mean(axis=0)) / std
    return LabeledDataset(points, labels, CIFAR_CLASSES)


_CACHE_MAGIC = b"CLDS"


def save_dataset_cache(ds: LabeledDataset, path) -> None:
    """Flat little-endian cache: 16-byte header (magic, n, d, C) then points and labels as float64."""
    header = _CACHE_MAGIC + struct.pack("<III", ds.n, ds.d, ds.C)
    body = ds.points.astype("<f8").tobytes() + ds.labels.astype("<f8").tobytes()
    Path(path).write_bytes(header + body)


def load_dataset_cache(path) -> LabeledDataset:
    blob = Path(path).read_bytes()
    if len(blob) < 16 or blob[:4] != _CACHE_MAGIC:
        raise MalformedRecord(f"{path}: not a dataset cache")
    n, d, C = struct.unpack("<III", blob[4:16])
    expected = 16 + 8 * (n * d + n)
    if len(blob) != expected:
        raise MalformedRecord(f"{path}: expected {expected} bytes, found {len(blob)}")
    values = np.frombuffer(blob, dtype="<f8", offset=16)
    return LabeledDataset(values[: n * d].reshape(n, d), values[n * d :].astype(np.int64), C)
