"""Embedding containers, run configuration, and file I/O.

The on-disk embedding format (CEF) is little-endian:

    bytes 0-3    magic "CEF1"
    bytes 4-7    u32 n  (sample count)
    bytes 8-11   u32 d  (embedding dimension)
    byte  12     u8 has_labels (0 or 1)
    then         n*d  f32, row-major
    then         n    u32 labels, iff has_labels == 1

A CSV fallback is accepted for files ending in ".csv": a required header
row, d float columns per sample, and an optional final integer column
whose header is exactly "label".
"""

from __future__ import annotations

import csv
import json
import struct
from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np

CEF_MAGIC = b"CEF1"
CEF_HEADER_LEN = 13

# A row norm may deviate from 1 by at most this much and still be considered
# normalized; rows further out are renormalized on ingestion, keeping the
# save/load round trip bit-exact for already-valid sets.
NORM_TOL = 1e-4
# Below this norm a row is treated as zero and rejected.
ZERO_NORM_TOL = 1e-6

ADAPTER_KINDS = ("none", "linear-residual")


class FormatError(ValueError):
    """Malformed embedding file (bad magic, truncation, bad rows/labels)."""


class ConfigError(ValueError):
    """Invalid configuration file, key, or value."""


def _row_norms(x: np.ndarray) -> np.ndarray:
    x64 = x.astype(np.float64, copy=False)
    return np.sqrt(np.einsum("ij,ij->i", x64, x64))


@dataclass(frozen=True)
class EmbeddingSet:
    """An n x d matrix of unit-norm float32 rows with optional integer labels."""

    vectors: np.ndarray
    labels: np.ndarray | None = None

    def __post_init__(self):
        v = np.ascontiguousarray(self.vectors, dtype=np.float32)
        if v.ndim != 2:
            raise ValueError(f"vectors must be 2-D, got shape {v.shape}")
        if v.shape[1] < 1:
            raise ValueError("embedding dimension must be >= 1")
        norms = _row_norms(v)
        if v.shape[0]:
            worst = int(np.argmax(np.abs(norms - 1.0)))
            if abs(norms[worst] - 1.0) > NORM_TOL:
                raise ValueError(
                    f"row {worst} has L2 norm {norms[worst]:.6g}, expected 1 +/- {NORM_TOL}"
                )
        object.__setattr__(self, "vectors", v)
        if self.labels is not None:
            lab = np.ascontiguousarray(self.labels, dtype=np.int64)
            if lab.shape != (v.shape[0],):
                raise ValueError(
                    f"labels shape {lab.shape} does not match sample count {v.shape[0]}"
                )
            if lab.size and lab.min() < 0:
                raise ValueError(f"negative label at row {int(np.argmin(lab))}")
            object.__setattr__(self, "labels", lab)

    @property
    def count(self) -> int:
        return self.vectors.shape[0]

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]

    @classmethod
    def from_raw(cls, vectors: np.ndarray, labels=None) -> "EmbeddingSet":
        """Build a set from possibly-unnormalized rows.

        Rows whose norm is off by more than NORM_TOL are renormalized;
        rows with (near-)zero norm are rejected.
        """
        v = np.asarray(vectors, dtype=np.float64)
        if v.ndim != 2:
            raise ValueError(f"vectors must be 2-D, got shape {v.shape}")
        norms = _row_norms(v)
        if v.shape[0]:
            if norms.min() < ZERO_NORM_TOL:
                raise FormatError(f"zero-norm row {int(np.argmin(norms))}")
            off = np.abs(norms - 1.0) > NORM_TOL
            if off.any():
                v = v.copy()
                v[off] /= norms[off, None]
        return cls(v.astype(np.float32), labels)


def save_embeddings(eset: EmbeddingSet, path) -> None:
    """Write a CEF file. load_embeddings(save_embeddings(s)) is bit-exact."""
    path = Path(path)
    has_labels = eset.labels is not None
    if has_labels and eset.labels.size and eset.labels.max() >= 2**32:
        bad = int(np.argmax(eset.labels))
        raise FormatError(f"label out of u32 range at row {bad}")
    header = CEF_MAGIC + struct.pack("<IIB", eset.count, eset.dim, int(has_labels))
    payload = eset.vectors.astype("<f4", copy=False).tobytes(order="C")
    if has_labels:
        payload += eset.labels.astype("<u4").tobytes()
    path.write_bytes(header + payload)


def _load_cef(path: Path) -> EmbeddingSet:
    raw = path.read_bytes()
    if len(raw) < CEF_HEADER_LEN:
        raise FormatError(f"truncated header: {len(raw)} bytes, need {CEF_HEADER_LEN}")
    if raw[:4] != CEF_MAGIC:
        raise FormatError("bad magic at byte 0")
    n, d, has_labels = struct.unpack("<IIB", raw[4:CEF_HEADER_LEN])
    if d < 1:
        raise FormatError("dimension 0 in header at byte 8")
    if has_labels not in (0, 1):
        raise FormatError(f"bad has_labels flag {has_labels} at byte 12")
    expected = CEF_HEADER_LEN + 4 * n * d + (4 * n if has_labels else 0)
    if len(raw) < expected:
        raise FormatError(f"truncated payload: expected {expected} bytes, got {len(raw)}")
    if len(raw) > expected:
        raise FormatError(f"trailing data at byte {expected}")
    vecs = np.frombuffer(raw, dtype="<f4", count=n * d, offset=CEF_HEADER_LEN)
    vecs = vecs.reshape(n, d)
    labels = None
    if has_labels:
        labels = np.frombuffer(
            raw, dtype="<u4", count=n, offset=CEF_HEADER_LEN + 4 * n * d
        ).astype(np.int64)
    return EmbeddingSet.from_raw(vecs, labels)


def _load_csv(path: Path) -> EmbeddingSet:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise FormatError("empty CSV: header row required") from None
        if not header:
            raise FormatError("empty CSV header row")
        has_labels = header[-1].strip().lower() == "label"
        dim = len(header) - (1 if has_labels else 0)
        if dim < 1:
            raise FormatError("CSV has no feature columns")
        rows, labels = [], []
        for i, row in enumerate(reader):
            if len(row) != len(header):
                raise FormatError(f"row {i}: expected {len(header)} columns, got {len(row)}")
            try:
                rows.append([float(c) for c in row[:dim]])
            except ValueError as exc:
                raise FormatError(f"row {i}: {exc}") from None
            if has_labels:
                try:
                    lab = int(row[-1])
                except ValueError:
                    raise FormatError(f"row {i}: label {row[-1]!r} is not an integer") from None
                if not 0 <= lab < 2**32:
                    raise FormatError(f"label out of u32 range at row {i}")
                labels.append(lab)
    vecs = np.asarray(rows, dtype=np.float64).reshape(len(rows), dim)
    return EmbeddingSet.from_raw(vecs, np.asarray(labels, dtype=np.int64) if has_labels else None)


def load_embeddings(path) -> EmbeddingSet:
    """Load a CEF file, or the CSV fallback for paths ending in .csv."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(path)
    if path.suffix.lower() == ".csv":
        return _load_csv(path)
    return _load_cef(path)


@dataclass(frozen=True)
class ClassCatalog:
    """Class-count bookkeeping for a discovery run."""

    seen_count: int
    target_count: int | None = None

    def __post_init__(self):
        if self.seen_count < 1:
            raise ValueError("seen_count must be >= 1")

    @property
    def novel_count(self) -> int | None:
        if self.target_count is None:
            return None
        # Partial-set splits allow target_count < seen_count.
        return max(self.target_count - self.seen_count, 0)


@dataclass(frozen=True)
class PredictionSet:
    """Per-sample class assignments (ids >= seen_count are discovered classes)."""

    assignments: np.ndarray
    confidences: np.ndarray

    def __post_init__(self):
        a = np.ascontiguousarray(self.assignments, dtype=np.int64)
        c = np.ascontiguousarray(self.confidences, dtype=np.float64)
        if a.shape != c.shape or a.ndim != 1:
            raise ValueError("assignments and confidences must be equal-length 1-D arrays")
        if c.size and (c.min() < 0.0 or c.max() > 1.0):
            raise ValueError("confidences must lie in [0, 1]")
        object.__setattr__(self, "assignments", a)
        object.__setattr__(self, "confidences", c)

    @property
    def count(self) -> int:
        return self.assignments.shape[0]


@dataclass(frozen=True)
class DiscoveryConfig:
    """Hyperparameters for the discovery pipeline.

    JSON key "lambda" maps to the `lam` attribute.
    """

    tau: float = 0.3
    lam: float = 0.1
    temperature: float = 0.1
    iterations: int = 1000
    batch_size: int = 32
    lr_head: float = 0.001
    lr_adapter: float = 0.0001
    seed: int = 0
    kmeans_max_iter: int = 300
    kmeans_tol: float = 1e-6
    adapter_kind: str = "linear-residual"

    def __post_init__(self):
        if not 0.0 < self.tau < 1.0:
            raise ConfigError(f"tau must be in (0, 1), got {self.tau}")
        if self.lam < 0.0:
            raise ConfigError(f"lambda must be >= 0, got {self.lam}")
        if self.temperature <= 0.0:
            raise ConfigError(f"temperature must be > 0, got {self.temperature}")
        if self.iterations < 0:
            raise ConfigError(f"iterations must be >= 0, got {self.iterations}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.lr_head < 0.0 or self.lr_adapter < 0.0:
            raise ConfigError("learning rates must be >= 0")
        if not 0 <= self.seed < 2**64:
            raise ConfigError(f"seed must fit in u64, got {self.seed}")
        if self.kmeans_max_iter < 1:
            raise ConfigError(f"kmeans_max_iter must be >= 1, got {self.kmeans_max_iter}")
        if self.kmeans_tol < 0.0:
            raise ConfigError(f"kmeans_tol must be >= 0, got {self.kmeans_tol}")
        if self.adapter_kind not in ADAPTER_KINDS:
            raise ConfigError(
                f"adapter_kind must be one of {ADAPTER_KINDS}, got {self.adapter_kind!r}"
            )

    def to_json_dict(self) -> dict:
        out = {}
        for f in fields(self):
            key = "lambda" if f.name == "lam" else f.name
            out[key] = getattr(self, f.name)
        return out


_CONFIG_KEYS = {
    ("lambda" if f.name == "lam" else f.name): f.name for f in fields(DiscoveryConfig)
}


def load_config(path=None, cli_overrides: dict | None = None) -> DiscoveryConfig:
    """Merge defaults < JSON file < CLI overrides; unknown keys rejected."""
    merged: dict = {}
    if path is not None:
        try:
            raw = json.loads(Path(path).read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config is not valid JSON: {exc}") from None
        if not isinstance(raw, dict):
            raise ConfigError("config JSON must be an object")
        for key, value in raw.items():
            if key not in _CONFIG_KEYS:
                raise ConfigError(f"unknown config key {key!r}")
            merged[_CONFIG_KEYS[key]] = value
    for key, value in (cli_overrides or {}).items():
        if value is None:
            continue
        if key not in _CONFIG_KEYS:
            raise ConfigError(f"unknown config override {key!r}")
        merged[_CONFIG_KEYS[key]] = value
    return DiscoveryConfig(**merged)
