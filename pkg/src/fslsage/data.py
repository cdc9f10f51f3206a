"""Synthetic classification data, Dirichlet label-skew partitioning, batch streams."""
from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .numcore import ConfigurationError

MAX_PARTITION_RETRIES = 100


@dataclass(frozen=True, eq=False)
class Dataset:
    inputs: np.ndarray
    labels: np.ndarray
    n_classes: int

    def __post_init__(self):
        x = np.ascontiguousarray(self.inputs, dtype=np.float64)
        y = np.ascontiguousarray(self.labels, dtype=np.int64).reshape(-1)
        if x.ndim != 2 or x.shape[0] != y.size:
            raise ConfigurationError("inputs must be (n, d) with one label per row")
        if y.size and (y.min() < 0 or y.max() >= self.n_classes):
            raise ConfigurationError("labels must lie in [0, n_classes)")
        x.setflags(write=False)
        y.setflags(write=False)
        object.__setattr__(self, "inputs", x)
        object.__setattr__(self, "labels", y)

    @property
    def n(self) -> int:
        return self.inputs.shape[0]

    @property
    def d(self) -> int:
        return self.inputs.shape[1]

    def subset(self, idx) -> "Dataset":
        idx = np.asarray(idx)
        return Dataset(self.inputs[idx], self.labels[idx], self.n_classes)


@dataclass(frozen=True, eq=False)
class Shard:
    indices: np.ndarray
    client_id: int

    def __len__(self):
        return self.indices.size


def gen_gaussian_mixture(n: int, d: int, C: int, separation: float, seed: int) -> Dataset:
    """Unit-variance Gaussian classes whose means lie on a sphere of radius ``separation``.

    Class sizes differ by at most one; sample order is shuffled.
    """
    if C < 1 or d < 1 or n < C:
        raise ConfigurationError(f"invalid mixture sizes n={n}, d={d}, C={C}")
    if separation <= 0:
        raise ConfigurationError("separation must be positive")
    rng = np.random.default_rng(seed)
    means = rng.normal(size=(C, d))
    means *= separation / np.linalg.norm(means, axis=1, keepdims=True)
    labels = np.arange(n) % C
    rng.shuffle(labels)
    x = means[labels] + rng.normal(size=(n, d))
    return Dataset(x, labels, C)


def iid_partition(n: int, m: int, seed: int) -> list[Shard]:
    if m < 1 or m > n:
        raise ConfigurationError(f"cannot split {n} samples over {m} clients")
    perm = np.random.default_rng(seed).permutation(n)
    return [Shard(np.sort(p), i) for i, p in enumerate(np.array_split(perm, m))]


def dirichlet_partition(labels, m: int, alpha: float, seed: int) -> list[Shard]:
    """Per class, split its samples over clients by a Dirichlet(alpha) draw.

    Proportions are redrawn (up to ``MAX_PARTITION_RETRIES`` times) until every
    client owns at least one sample.
    """
    labels = np.asarray(labels).reshape(-1)
    n = labels.size
    if m < 1:
        raise ConfigurationError("need at least one client")
    if m > n:
        raise ConfigurationError(f"more clients ({m}) than samples ({n})")
    if not alpha > 0:
        raise ConfigurationError("dirichlet alpha must be positive")
    rng = np.random.default_rng(seed)
    classes = np.unique(labels)
    for _ in range(MAX_PARTITION_RETRIES):
        buckets = [[] for _ in range(m)]
        for c in classes:
            idx = np.flatnonzero(labels == c)
            rng.shuffle(idx)
            g = rng.standard_gamma(alpha, size=m)
            total = g.sum()
            # tiny alphas can underflow every gamma draw to zero
            props = g / total if total > 0 else np.eye(m)[rng.integers(m)]
            cuts = (np.cumsum(props)[:-1] * idx.size).astype(int)
            for i, part in enumerate(np.split(idx, cuts)):
                buckets[i].append(part)
        shards = [Shard(np.sort(np.concatenate(b)), i) for i, b in enumerate(buckets)]
        if all(len(s) > 0 for s in shards):
            return shards
    raise ConfigurationError(
        f"could not draw a partition with every client nonempty in {MAX_PARTITION_RETRIES} tries")


def class_proportions(shard: Shard, labels, n_classes: int) -> np.ndarray:
    counts = np.bincount(np.asarray(labels)[shard.indices], minlength=n_classes)
    return counts / max(counts.sum(), 1)


def client_stream(seed: int, client_id: int) -> np.random.Generator:
    """Independent RNG stream for one client."""
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(client_id,)))


class BatchSampler:
    """Epoch-wise sampling without replacement from a single shard.

    Each epoch is a fresh permutation drawn from the sampler's own RNG; a batch
    never straddles two epochs (the short tail of an epoch is dropped when it
    cannot fill a batch).
    """

    def __init__(self, shard: Shard, dataset: Dataset, batch_size: int, rng: np.random.Generator):
        if batch_size < 1 or batch_size > len(shard):
            raise ConfigurationError(
                f"batch size {batch_size} does not fit shard of size {len(shard)}")
        self.shard = shard
        self.dataset = dataset
        self.batch_size = batch_size
        self.rng = rng
        self._order = np.empty(0, dtype=np.int64)
        self._pos = 0

    def next_indices(self) -> np.ndarray:
        if self._pos + self.batch_size > self._order.size:
            self._order = self.shard.indices[self.rng.permutation(len(self.shard))]
            self._pos = 0
        idx = self._order[self._pos:self._pos + self.batch_size]
        self._pos += self.batch_size
        return idx

    def next_batch(self):
        idx = self.next_indices()
        return self.dataset.inputs[idx], self.dataset.labels[idx]


def sample_batch(shard: Shard, dataset: Dataset, batch_size: int, sampler_state: BatchSampler):
    """Functional spelling of ``sampler_state.next_batch()``."""
    if sampler_state.shard is not shard or sampler_state.batch_size != batch_size:
        raise ConfigurationError("sampler state belongs to a different shard or batch size")
    return sampler_state.next_batch()


def save_dataset(dataset: Dataset, path) -> None:
    """Header of three little-endian uint64 (n, d, C), float64 rows, uint64 labels."""
    with open(Path(path), "wb") as fh:
        fh.write(struct.pack("<3Q", dataset.n, dataset.d, dataset.n_classes))
        fh.write(dataset.inputs.astype("<f8").tobytes())
        fh.write(dataset.labels.astype("<u8").tobytes())


def load_dataset(path) -> Dataset:
    raw = Path(path).read_bytes()
    if len(raw) < 24:
        raise ConfigurationError("dataset file too short for its header")
    n, d, C = struct.unpack_from("<3Q", raw, 0)
    expected = 24 + 8 * n * d + 8 * n
    if len(raw) != expected:
        raise ConfigurationError(f"dataset file has {len(raw)} bytes, header implies {expected}")
    x = np.frombuffer(raw, dtype="<f8", count=n * d, offset=24).reshape(n, d)
    y = np.frombuffer(raw, dtype="<u8", count=n, offset=24 + 8 * n * d)
    return Dataset(x.astype(np.float64), y.astype(np.int64), int(C))
