"""Synthetic classification tasks and federated partitioning."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError
from .model import Dataset


def generate_dataset(classes: int, dims: int, samples: int, seed: int, *,
                     separation: float = 4.0, modes_per_class: int = 2,
                     noise: float = 1.0) -> Dataset:
    """Gaussian mixture task with balanced labels.

    Each class owns modes_per_class cluster centers on a sphere of radius
    `separation`. Two or more modes per class keeps the task linearly
    non-separable in general while staying easy for a small MLP. Labels are
    assigned round-robin before shuffling, so every class appears whenever
    samples >= classes.
    """
    if classes < 2:
        raise ConfigError("need at least two classes")
    if dims < 1 or samples < 1:
        raise ConfigError("dims and samples must be positive")
    if modes_per_class < 1:
        raise ConfigError("modes_per_class must be positive")
    if separation < 0 or noise < 0:
        raise ConfigError("separation and noise must be non-negative")
    rng = np.random.default_rng(seed)
    centers = rng.normal(size=(classes * modes_per_class, dims))
    norms = np.linalg.norm(centers, axis=1, keepdims=True)
    centers = centers / norms * separation
    labels = np.arange(samples, dtype=np.int64) % classes
    modes = rng.integers(0, modes_per_class, size=samples)
    feats = centers[labels * modes_per_class + modes]
    feats = feats + noise * rng.normal(size=(samples, dims))
    perm = rng.permutation(samples)
    return Dataset(feats[perm], labels[perm], classes)


@dataclass
class PartitionSpec:
    """How to split one dataset across clients."""

    mode: str = "iid"            # "iid" or "label-skew"
    skew_alpha: float = 0.5      # concentration; small = strong skew
    seed: int = 0

    def __post_init__(self):
        if self.mode not in ("iid", "label-skew"):
            raise ConfigError(f"unknown partition mode {self.mode!r}")
        if self.skew_alpha <= 0:
            raise ConfigError("skew_alpha must be positive")


def partition(data: Dataset, num_clients: int, spec: PartitionSpec) -> list[Dataset]:
    """Disjoint cover of `data` across clients.

    iid shuffles and deals near-equal shares. label-skew draws each class's
    client proportions from Dirichlet(skew_alpha): small alpha concentrates a
    class on few clients, large alpha converges back to equal shares. Every
    client ends up with at least one sample.
    """
    n = len(data)
    if num_clients < 1:
        raise ConfigError("need at least one client")
    if num_clients > n:
        raise ConfigError(f"cannot split {n} samples across {num_clients} clients")
    rng = np.random.default_rng(spec.seed)
    if spec.mode == "iid":
        perm = rng.permutation(n)
        parts = [np.asarray(p) for p in np.array_split(perm, num_clients)]
    else:
        buckets: list[list[np.ndarray]] = [[] for _ in range(num_clients)]
        for c in range(data.num_classes):
            idx = np.flatnonzero(data.labels == c)
            rng.shuffle(idx)
            props = rng.dirichlet([spec.skew_alpha] * num_clients)
            cuts = (np.cumsum(props)[:-1] * idx.size).astype(int)
            for k, chunk in enumerate(np.split(idx, cuts)):
                buckets[k].append(chunk)
        parts = [np.concatenate(b) if b else np.empty(0, dtype=np.int64)
                 for b in buckets]
    # training needs data everywhere: top up empty clients from the largest
    sizes = [p.size for p in parts]
    while min(sizes) == 0:
        donor = int(np.argmax(sizes))
        taker = sizes.index(0)
        parts[taker] = parts[donor][-1:]
        parts[donor] = parts[donor][:-1]
        sizes = [p.size for p in parts]
    return [data.subset(np.sort(p)) for p in parts]
