"""Seeded synthetic data with multimodal class-conditional distributions.

Each class draws from a mixture of isotropic Gaussian modes whose centers are
placed (deterministically from the seed) at a guaranteed minimum pairwise
distance. An optional held-out class supports the anomaly-detection protocol:
it never appears in training and shows up only in a 50/50 normal/anomaly test
split.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class LabeledSet:
    """Flat (sample, label) pairs; optionally tiled as an h x w grid."""

    samples: np.ndarray  # (N, in_dim) float64
    labels: np.ndarray  # (N,) int64
    grid_shape: tuple[int, int] | None = None

    def __post_init__(self):
        samples = np.asarray(self.samples, dtype=np.float64)
        labels = np.asarray(self.labels, dtype=np.int64)
        if samples.ndim != 2:
            raise ValueError("samples must be (N, in_dim)")
        if labels.ndim != 1 or labels.shape[0] != samples.shape[0]:
            raise ValueError("labels must be (N,) aligned with samples")
        if self.grid_shape is not None:
            h, w = self.grid_shape
            if h * w != samples.shape[0]:
                raise ValueError(
                    f"grid {h}x{w} does not tile {samples.shape[0]} samples"
                )
        object.__setattr__(self, "samples", samples)
        object.__setattr__(self, "labels", labels)

    def __len__(self) -> int:
        return self.samples.shape[0]

    @property
    def in_dim(self) -> int:
        return self.samples.shape[1]


@dataclass(frozen=True)
class SynthSpec:
    """Generator settings for the synthetic classification task.

    The defaults give the desk-scale task: 4 classes, 2 modes each in an
    8-dimensional input space, mode centers at least 6 noise standard
    deviations apart. ood_holdout names a class that is excluded from
    train/test and used as the anomaly source.
    """

    n_classes: int = 4
    modes_per_class: int = 2
    in_dim: int = 8
    noise: float = 1.0
    separation: float = 6.0
    n_train: int = 1600
    n_test: int = 800
    ood_holdout: int | None = None
    seed: int = 0

    def __post_init__(self):
        if self.n_classes < 1 or self.modes_per_class < 1 or self.in_dim < 1:
            raise ValueError("counts must be positive")
        if self.n_train < 0 or self.n_test < 0:
            raise ValueError("split sizes must be nonnegative")
        if self.noise <= 0.0 or self.separation <= 0.0:
            raise ValueError("noise and separation must be positive")
        if self.ood_holdout is not None and not 0 <= self.ood_holdout < self.n_classes:
            raise ValueError("ood_holdout must name an existing class")
        if self.ood_holdout is not None and self.n_classes < 2:
            raise ValueError("holding out a class requires at least 2 classes")


def _place_mode_means(
    rng: np.random.Generator,
    n_modes: int,
    dim: int,
    min_distance: float,
    max_attempts: int = 10_000,
) -> np.ndarray:
    """Rejection-sample mode centers with pairwise distance >= min_distance.

    The sampling scale is chosen so that typical pairwise distances sit just
    above the minimum: the separation is the characteristic spacing of the
    task, not a loose lower bound.
    """
    scale = 0.3 * min_distance * max(1.0, n_modes ** (1.0 / dim))
    means = np.empty((n_modes, dim))
    for i in range(n_modes):
        for attempt in range(max_attempts):
            candidate = rng.normal(0.0, scale, size=dim)
            if i == 0 or np.min(
                np.linalg.norm(means[:i] - candidate, axis=1)
            ) >= min_distance:
                means[i] = candidate
                break
        else:
            raise ValueError(
                f"could not place {n_modes} modes at separation {min_distance} "
                f"in {dim} dimensions after {max_attempts} attempts"
            )
    return means


def _group_modes_by_dispersion(centers: np.ndarray, n_classes: int, k: int) -> np.ndarray:
    """Assign centers to classes so same-class modes lie far apart.

    Greedy: each class starts from the lowest-index unassigned center and
    repeatedly grabs the unassigned center maximizing the minimum distance to
    the class's current modes. Spreading a class across distant regions keeps
    its distribution genuinely multimodal (a single blob cannot cover it
    without also covering other classes' territory).
    """
    n = centers.shape[0]
    dist = np.linalg.norm(centers[:, None, :] - centers[None, :, :], axis=2)
    unassigned = list(range(n))
    order = np.empty(n, dtype=np.int64)
    for c in range(n_classes):
        group = [unassigned.pop(0)]
        while len(group) < k:
            best = max(
                range(len(unassigned)),
                key=lambda j: min(dist[unassigned[j], g] for g in group),
            )
            group.append(unassigned.pop(best))
        order[c * k:(c + 1) * k] = group
    return centers[order]


def _draw(
    rng: np.random.Generator,
    n: int,
    class_ids: np.ndarray,
    mode_means: np.ndarray,
    modes_per_class: int,
    noise: float,
) -> LabeledSet:
    """n samples with labels drawn uniformly from class_ids."""
    dim = mode_means.shape[1]
    if n == 0:
        return LabeledSet(np.empty((0, dim)), np.empty(0, dtype=np.int64))
    labels = class_ids[rng.integers(0, len(class_ids), size=n)]
    modes = rng.integers(0, modes_per_class, size=n)
    centers = mode_means[labels * modes_per_class + modes]
    samples = centers + rng.normal(0.0, noise, size=(n, dim))
    return LabeledSet(samples, labels)


def generate(spec: SynthSpec) -> tuple[LabeledSet, LabeledSet, LabeledSet | None]:
    """Build (train, test, ood_test) splits from a SynthSpec.

    All randomness flows from spec.seed, so identical specs give byte
    identical splits. When ood_holdout is set, train/test contain only the
    remaining classes relabeled to a contiguous [0, C-1) range, and ood_test
    holds a 50/50 mix of in-distribution samples (label 0) and held-out-class
    samples (label 1), shuffled.
    """
    rng = np.random.default_rng(spec.seed)
    total_modes = spec.n_classes * spec.modes_per_class
    mode_means = _place_mode_means(rng, total_modes, spec.in_dim, spec.separation)
    mode_means = _group_modes_by_dispersion(
        mode_means, spec.n_classes, spec.modes_per_class
    )

    if spec.ood_holdout is None:
        keep = np.arange(spec.n_classes)
        train = _draw(rng, spec.n_train, keep, mode_means, spec.modes_per_class, spec.noise)
        test = _draw(rng, spec.n_test, keep, mode_means, spec.modes_per_class, spec.noise)
        return train, test, None

    keep = np.array([c for c in range(spec.n_classes) if c != spec.ood_holdout])
    train_raw = _draw(rng, spec.n_train, keep, mode_means, spec.modes_per_class, spec.noise)
    test_raw = _draw(rng, spec.n_test, keep, mode_means, spec.modes_per_class, spec.noise)

    # Relabel surviving classes to a contiguous range for the trainer.
    remap = np.full(spec.n_classes, -1, dtype=np.int64)
    remap[keep] = np.arange(len(keep))
    train = LabeledSet(train_raw.samples, remap[train_raw.labels])
    test = LabeledSet(test_raw.samples, remap[test_raw.labels])

    n_normal = spec.n_test // 2
    n_anomaly = spec.n_test - n_normal
    normal = _draw(rng, n_normal, keep, mode_means, spec.modes_per_class, spec.noise)
    anomaly = _draw(
        rng,
        n_anomaly,
        np.array([spec.ood_holdout]),
        mode_means,
        spec.modes_per_class,
        spec.noise,
    )
    samples = np.concatenate([normal.samples, anomaly.samples], axis=0)
    flags = np.concatenate(
        [np.zeros(n_normal, dtype=np.int64), np.ones(n_anomaly, dtype=np.int64)]
    )
    order = rng.permutation(samples.shape[0])
    ood = LabeledSet(samples[order], flags[order])
    return train, test, ood


def save_dataset(dataset: LabeledSet, path) -> None:
    """Write the versioned text format: header, then one sample per line."""
    header = f"# gmmclass-dataset v1 inDim={dataset.in_dim} C={_n_classes(dataset)}"
    if dataset.grid_shape is not None:
        header += f" grid={dataset.grid_shape[0]}x{dataset.grid_shape[1]}"
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(header + "\n")
        for row, label in zip(dataset.samples, dataset.labels):
            fh.write(",".join(repr(float(v)) for v in row) + f",{int(label)}\n")


def _n_classes(dataset: LabeledSet) -> int:
    return int(dataset.labels.max()) + 1 if len(dataset) else 0


class DatasetParseError(ValueError):
    def __init__(self, path, line_no: int, message: str):
        super().__init__(f"{path}:{line_no}: {message}")
        self.line_no = line_no


def load_dataset(path) -> LabeledSet:
    """Parse the text format written by save_dataset; lossless round-trip."""
    with open(path, "r", encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    if not lines:
        raise DatasetParseError(path, 1, "empty file")
    header = lines[0]
    if not header.startswith("# gmmclass-dataset v1 "):
        raise DatasetParseError(path, 1, f"bad header {header!r}")
    fields = dict(
        part.split("=", 1) for part in header.split()[2:] if "=" in part
    )
    try:
        in_dim = int(fields["inDim"])
    except (KeyError, ValueError):
        raise DatasetParseError(path, 1, "header missing a valid inDim")
    grid = None
    if "grid" in fields:
        try:
            h, w = fields["grid"].split("x")
            grid = (int(h), int(w))
        except ValueError:
            raise DatasetParseError(path, 1, f"bad grid spec {fields['grid']!r}")

    samples, labels = [], []
    for line_no, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        parts = line.split(",")
        if len(parts) != in_dim + 1:
            raise DatasetParseError(
                path, line_no, f"expected {in_dim + 1} fields, got {len(parts)}"
            )
        try:
            samples.append([float(v) for v in parts[:-1]])
            labels.append(int(parts[-1]))
        except ValueError as exc:
            raise DatasetParseError(path, line_no, str(exc))
    arr = (
        np.array(samples, dtype=np.float64)
        if samples
        else np.empty((0, in_dim))
    )
    return LabeledSet(arr, np.array(labels, dtype=np.int64), grid_shape=grid)
