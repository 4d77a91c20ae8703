"""Deterministic generator of categorical-shift + domain-shift scenarios.

Class means are sampled on the unit sphere with rejection until pairwise
separations exceed a minimum angle. The domain shift is a rigid rotation of
all class means by a fixed angle inside a seeded random 2-plane (plus an
optional noise-scale change), which preserves norms and mimics the geometric
drift between two embedding domains. Declared bimodal classes draw from two
sub-means; declared overlap pairs share nearly identical means.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass

import numpy as np

from .data import EmbeddingSet

MAX_REJECTION_ATTEMPTS = 10_000

# Angular offsets used for the structured constructs, in degrees.
BIMODAL_HALF_ANGLE = 15.0
OVERLAP_ANGLE = 3.0


@dataclass(frozen=True)
class Scenario:
    """Defaults encode the primary benchmark scenario (s1)."""

    dim: int = 64
    seen_count: int = 10
    novel_count: int = 5
    samples_per_class: int = 200
    noise_sigma: float = 0.05
    shift_angle_degrees: float = 10.0
    bimodal_classes: tuple[int, ...] = ()
    overlap_pairs: tuple[tuple[int, int], ...] = ()
    seed: int = 7
    min_angle_degrees: float = 25.0
    source_private_count: int = 0
    target_noise_sigma: float | None = None

    def __post_init__(self):
        if self.seen_count < 2:
            raise ValueError("seen_count must be >= 2")
        if self.novel_count < 0 or self.samples_per_class < 1 or self.dim < 2:
            raise ValueError("invalid scenario sizes")
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be >= 0")
        if not 0 <= self.source_private_count < self.seen_count:
            raise ValueError("source_private_count must be in [0, seen_count)")
        for c in self.bimodal_classes:
            if not 0 <= c < self.seen_count:
                raise ValueError(f"bimodal class {c} is not a seen class")
        flat = [c for pair in self.overlap_pairs for c in pair]
        if len(set(flat)) != len(flat):
            raise ValueError("overlap_pairs must be disjoint")
        for a, b in self.overlap_pairs:
            if not (0 <= a < self.seen_count and 0 <= b < self.seen_count and a != b):
                raise ValueError(f"overlap pair ({a}, {b}) must name two distinct seen classes")

    @property
    def total_classes(self) -> int:
        return self.seen_count + self.novel_count

    @property
    def target_class_ids(self) -> tuple[int, ...]:
        shared = range(self.seen_count - self.source_private_count)
        novel = range(self.seen_count, self.total_classes)
        return tuple(shared) + tuple(novel)

    def to_json_dict(self) -> dict:
        out = dataclasses.asdict(self)
        out["bimodal_classes"] = list(self.bimodal_classes)
        out["overlap_pairs"] = [list(p) for p in self.overlap_pairs]
        return out


PRESETS: dict[str, Scenario] = {
    "s1": Scenario(),
    "s2": Scenario(noise_sigma=0.15, shift_angle_degrees=25.0, seed=11),
    "s1-closed": Scenario(novel_count=0),
    "s1-partial": Scenario(novel_count=0, source_private_count=3),
    "s1-open-partial": Scenario(source_private_count=3, seed=11),
}


def _random_unit(rng: np.random.Generator, dim: int) -> np.ndarray:
    while True:
        v = rng.standard_normal(dim)
        n = np.linalg.norm(v)
        if n > 1e-12:
            return v / n


def _unit_orthogonal(rng: np.random.Generator, base: np.ndarray) -> np.ndarray:
    while True:
        v = rng.standard_normal(base.shape[0])
        v -= (v @ base) * base
        n = np.linalg.norm(v)
        if n > 1e-8:
            return v / n


def _tilt(rng: np.random.Generator, base: np.ndarray, degrees: float) -> np.ndarray:
    """Rotate `base` by the given angle toward a random orthogonal direction."""
    rad = np.radians(degrees)
    return np.cos(rad) * base + np.sin(rad) * _unit_orthogonal(rng, base)


def _rotation_in_random_plane(rng: np.random.Generator, dim: int, degrees: float) -> np.ndarray:
    e1 = _random_unit(rng, dim)
    e2 = _unit_orthogonal(rng, e1)
    rad = np.radians(degrees)
    eye = np.eye(dim)
    return (
        eye
        + (np.cos(rad) - 1.0) * (np.outer(e1, e1) + np.outer(e2, e2))
        + np.sin(rad) * (np.outer(e2, e1) - np.outer(e1, e2))
    )


def _sample_means(scenario: Scenario, rng: np.random.Generator) -> np.ndarray:
    """Pairwise-separated class means; overlap partners are tilted copies."""
    overlap_partner = {b: a for a, b in scenario.overlap_pairs}
    min_cos = np.cos(np.radians(scenario.min_angle_degrees))
    means = np.zeros((scenario.total_classes, scenario.dim))
    placed: list[int] = []
    for c in range(scenario.total_classes):
        if c in overlap_partner:
            base = overlap_partner[c]
            if base >= c:
                raise ValueError(f"overlap pair ({base}, {c}) must list the lower id first")
            means[c] = _tilt(rng, means[base], OVERLAP_ANGLE)
            continue
        for attempt in range(MAX_REJECTION_ATTEMPTS):
            cand = _random_unit(rng, scenario.dim)
            if all(cand @ means[p] < min_cos for p in placed):
                means[c] = cand
                break
        else:
            raise RuntimeError(
                f"could not separate {scenario.total_classes} means by "
                f"{scenario.min_angle_degrees} degrees in dimension {scenario.dim}"
            )
        placed.append(c)
    return means


def _class_modes(scenario, means, rng) -> dict[int, np.ndarray]:
    """Per-class generating directions: one mean, or two for bimodal classes."""
    modes = {}
    for c in range(scenario.total_classes):
        if c in scenario.bimodal_classes:
            axis = _unit_orthogonal(rng, means[c])
            rad = np.radians(BIMODAL_HALF_ANGLE)
            modes[c] = np.stack(
                [
                    np.cos(rad) * means[c] + np.sin(rad) * axis,
                    np.cos(rad) * means[c] - np.sin(rad) * axis,
                ]
            )
        else:
            modes[c] = means[c][None, :]
    return modes


def _draw_class(modes: np.ndarray, count: int, sigma: float, rng) -> np.ndarray:
    """Draw `count` samples split evenly over the class's generating modes."""
    per = np.full(len(modes), count // len(modes))
    per[: count % len(modes)] += 1
    chunks = []
    for mode, m_count in zip(modes, per):
        base = np.broadcast_to(mode, (m_count, mode.shape[0]))
        if sigma > 0:
            chunks.append(base + sigma * rng.standard_normal((m_count, mode.shape[0])))
        else:
            chunks.append(base.copy())
    return np.vstack(chunks)


def generate(scenario: Scenario) -> tuple[EmbeddingSet, EmbeddingSet, np.ndarray]:
    """Produce (labeled source, unlabeled target, target truth labels)."""
    rng = np.random.default_rng(scenario.seed)
    means = _sample_means(scenario, rng)
    modes = _class_modes(scenario, means, rng)
    rotation = _rotation_in_random_plane(rng, scenario.dim, scenario.shift_angle_degrees)

    src_chunks, src_labels = [], []
    for c in range(scenario.seen_count):
        src_chunks.append(_draw_class(modes[c], scenario.samples_per_class, scenario.noise_sigma, rng))
        src_labels.append(np.full(scenario.samples_per_class, c, dtype=np.int64))

    sigma_t = (
        scenario.noise_sigma if scenario.target_noise_sigma is None else scenario.target_noise_sigma
    )
    tgt_chunks, tgt_labels = [], []
    for c in scenario.target_class_ids:
        rotated = modes[c] @ rotation.T
        tgt_chunks.append(_draw_class(rotated, scenario.samples_per_class, sigma_t, rng))
        tgt_labels.append(np.full(scenario.samples_per_class, c, dtype=np.int64))

    source = EmbeddingSet.from_raw(np.vstack(src_chunks), np.concatenate(src_labels))
    target = EmbeddingSet.from_raw(np.vstack(tgt_chunks))
    return source, target, np.concatenate(tgt_labels)


def write_scenario(scenario: Scenario, directory) -> None:
    """Emit source.cef, target.cef, truth.csv, and scenario.json."""
    from pathlib import Path

    from .data import save_embeddings

    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    source, target, truth = generate(scenario)
    save_embeddings(source, directory / "source.cef")
    save_embeddings(target, directory / "target.cef")
    lines = ["sample_index,label"]
    lines += [f"{i},{int(lab)}" for i, lab in enumerate(truth)]
    (directory / "truth.csv").write_text("\n".join(lines) + "\n")
    (directory / "scenario.json").write_text(json.dumps(scenario.to_json_dict(), indent=2) + "\n")
