"""FIFO feature store backing large-scale EM across training iterations.

One queue per (class, component) pair, each a fixed-capacity ring buffer of
feature vectors. Stored features are detached values: nothing here
participates in gradient computation, and the whole store is throwaway state
once training ends.
"""

from __future__ import annotations

import struct

import numpy as np

MAGIC = b"GMEM"
FORMAT_VERSION = 1

DEFAULT_CAPACITY = 2048
DEFAULT_SAMPLES_PER_CLASS = 100


class _RingBuffer:
    """Fixed-capacity FIFO of D-vectors; oldest entries evicted first."""

    def __init__(self, capacity: int, dim: int):
        self.capacity = capacity
        self.buf = np.empty((capacity, dim))
        self.head = 0  # next write position
        self.count = 0

    def push(self, rows: np.ndarray) -> None:
        k = rows.shape[0]
        if k == 0 or self.capacity == 0:
            return
        if k >= self.capacity:
            self.buf[:] = rows[-self.capacity:]
            self.head = 0
            self.count = self.capacity
            return
        first = min(k, self.capacity - self.head)
        self.buf[self.head:self.head + first] = rows[:first]
        if k > first:
            self.buf[:k - first] = rows[first:]
        self.head = (self.head + k) % self.capacity
        self.count = min(self.count + k, self.capacity)

    def contents(self) -> np.ndarray:
        """Rows in insertion order (oldest first)."""
        if self.count < self.capacity:
            return self.buf[:self.count].copy()
        return np.concatenate([self.buf[self.head:], self.buf[:self.head]])


class FeatureMemory:
    """C x M FIFO queues of feature vectors with per-class sparse sampling."""

    def __init__(
        self,
        n_classes: int,
        n_components: int,
        dim: int,
        capacity_per_queue: int = DEFAULT_CAPACITY,
        samples_per_class: int = DEFAULT_SAMPLES_PER_CLASS,
    ):
        if n_classes < 1 or n_components < 1 or dim < 1:
            raise ValueError("n_classes, n_components and dim must be >= 1")
        if capacity_per_queue < 0:
            raise ValueError("capacity_per_queue must be >= 0")
        self.n_classes = n_classes
        self.n_components = n_components
        self.dim = dim
        self.capacity_per_queue = capacity_per_queue
        self.samples_per_class = samples_per_class
        self._queues = [
            [_RingBuffer(capacity_per_queue, dim) for _ in range(n_components)]
            for _ in range(n_classes)
        ]

    def _check_ids(self, class_id: int, component_id: int) -> None:
        if not 0 <= class_id < self.n_classes:
            raise ValueError(f"class id {class_id} out of range [0, {self.n_classes})")
        if not 0 <= component_id < self.n_components:
            raise ValueError(
                f"component id {component_id} out of range [0, {self.n_components})"
            )

    def push(self, class_id: int, component_id: int, features) -> None:
        """Append feature vectors to one queue, evicting oldest past capacity."""
        self._check_ids(class_id, component_id)
        rows = np.asarray(features, dtype=np.float64)
        if rows.size == 0:
            return
        if rows.ndim == 1:
            rows = rows[None, :]
        if rows.ndim != 2 or rows.shape[1] != self.dim:
            raise ValueError(f"expected vectors of dimension {self.dim}")
        self._queues[class_id][component_id].push(rows)

    def queue_length(self, class_id: int, component_id: int) -> int:
        self._check_ids(class_id, component_id)
        return self._queues[class_id][component_id].count

    def class_size(self, class_id: int) -> int:
        if not 0 <= class_id < self.n_classes:
            raise ValueError(f"class id {class_id} out of range [0, {self.n_classes})")
        return sum(q.count for q in self._queues[class_id])

    def snapshot(self, class_id: int) -> np.ndarray:
        """All stored vectors of one class, queue-major in insertion order."""
        if not 0 <= class_id < self.n_classes:
            raise ValueError(f"class id {class_id} out of range [0, {self.n_classes})")
        parts = [q.contents() for q in self._queues[class_id] if q.count > 0]
        if not parts:
            return np.empty((0, self.dim))
        return np.concatenate(parts, axis=0)

    def dump(self, path) -> None:
        """Binary serialization: GMEM header then length-prefixed queues."""
        with open(path, "wb") as fh:
            fh.write(MAGIC)
            fh.write(
                struct.pack(
                    "<5I",
                    FORMAT_VERSION,
                    self.n_classes,
                    self.n_components,
                    self.dim,
                    self.capacity_per_queue,
                )
            )
            for c in range(self.n_classes):
                for m in range(self.n_components):
                    rows = self._queues[c][m].contents()
                    fh.write(struct.pack("<I", rows.shape[0]))
                    fh.write(rows.astype("<f8").tobytes())

    @classmethod
    def restore(cls, path, samples_per_class: int = DEFAULT_SAMPLES_PER_CLASS):
        with open(path, "rb") as fh:
            magic = fh.read(4)
            if magic != MAGIC:
                raise ValueError(f"bad magic {magic!r}, expected {MAGIC!r}")
            version, n_classes, n_components, dim, capacity = struct.unpack(
                "<5I", fh.read(20)
            )
            if version != FORMAT_VERSION:
                raise ValueError(f"unsupported memory format version {version}")
            mem = cls(
                n_classes,
                n_components,
                dim,
                capacity_per_queue=capacity,
                samples_per_class=samples_per_class,
            )
            for c in range(n_classes):
                for m in range(n_components):
                    (length,) = struct.unpack("<I", fh.read(4))
                    if length:
                        raw = fh.read(length * dim * 8)
                        if len(raw) != length * dim * 8:
                            raise ValueError("truncated memory dump")
                        rows = np.frombuffer(raw, dtype="<f8").reshape(length, dim)
                        mem.push(c, m, rows)
        return mem


def sparse_sample(
    features: np.ndarray,
    labels: np.ndarray,
    routing: dict[int, np.ndarray],
    k: int,
    rng: np.random.Generator,
) -> dict[tuple[int, int], np.ndarray]:
    """Pick up to k features per class and route each to one component queue.

    For every class present in the batch, min(k, available) rows are chosen
    uniformly without replacement; each chosen row goes to the component with
    the largest responsibility in routing[class] (rows aligned with that
    class's batch order). Absent classes simply yield nothing.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    features = np.asarray(features, dtype=np.float64)
    labels = np.asarray(labels)
    out: dict[tuple[int, int], np.ndarray] = {}
    for c in sorted(int(c) for c in np.unique(labels)):
        rows = np.nonzero(labels == c)[0]
        q = routing.get(c)
        if q is None:
            raise ValueError(f"no routing responsibilities for class {c}")
        q = np.asarray(q)
        if q.shape[0] != rows.shape[0]:
            raise ValueError(
                f"routing rows for class {c} ({q.shape[0]}) != class samples ({rows.shape[0]})"
            )
        take = min(k, rows.shape[0])
        chosen = rng.choice(rows.shape[0], size=take, replace=False)
        comp = np.argmax(q[chosen], axis=1)
        for m in sorted(int(m) for m in np.unique(comp)):
            out[(c, int(m))] = features[rows[chosen[comp == m]]]
    return out
