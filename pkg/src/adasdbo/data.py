"""Datasets: synthetic generation, IDX parsing and agent partitioning."""
import csv
import gzip
import hashlib
import struct
from dataclasses import dataclass

import numpy as np

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801


class IdxParseError(ValueError):
    """Malformed IDX file; ``offset`` is the byte position of the problem."""

    def __init__(self, path, offset, message):
        super().__init__(f"{path}: byte {offset}: {message}")
        self.path = str(path)
        self.offset = offset


@dataclass(frozen=True)
class Dataset:
    features: np.ndarray
    labels: np.ndarray
    split: str = "train"

    def __post_init__(self):
        if self.split not in ("train", "validation", "test"):
            raise ValueError(f"unknown split tag {self.split!r}")
        feats = np.asarray(self.features, dtype=np.float64)
        if feats.ndim != 2:
            raise ValueError("features must be a 2-D array")
        labels = np.asarray(self.labels)
        if labels.shape != (feats.shape[0],):
            raise ValueError(
                f"{feats.shape[0]} feature rows but labels have shape {labels.shape}")
        if labels.dtype.kind in "iu" and labels.size and labels.min() < 0:
            raise ValueError("class labels must be non-negative")
        object.__setattr__(self, "features", feats)
        object.__setattr__(self, "labels", labels)

    def __len__(self):
        return self.features.shape[0]

    def subset(self, index, split=None):
        return Dataset(self.features[index], self.labels[index], split or self.split)


@dataclass(frozen=True)
class RngSpec:
    """Seed plus stream name; equal specs give identical draws everywhere."""

    seed: int
    stream: str = "default"

    def generator(self, *substream):
        key = "/".join((self.stream,) + tuple(str(s) for s in substream))
        digest = hashlib.sha256(key.encode()).digest()
        words = np.frombuffer(digest[:16], dtype="<u4").tolist()
        ss = np.random.SeedSequence([self.seed & 0xFFFFFFFFFFFFFFFF] + words)
        return np.random.Generator(np.random.PCG64(ss))


def synthetic_ground_truth(p, rng):
    """Ground-truth model ``omega* ~ N(0, I_p)`` shared by all agents."""
    return rng.generator("omega_star").standard_normal(p)


def generate_synthetic(n, p, samples_per_agent_train, samples_per_agent_val, r, rng):
    """Per-agent heterogeneous regression-labelled data.

    Agent ``i`` (1-based) draws features i.i.d. from ``N(0, (i r)^2)`` and
    labels ``y = x^T omega* + 0.1 z`` with ``z ~ N(0, 1)``.

    Returns
    -------
    list of (Dataset, Dataset)
        ``(train, validation)`` for each agent.
    """
    for name, val in (("n", n), ("p", p), ("samples_per_agent_train", samples_per_agent_train),
                      ("samples_per_agent_val", samples_per_agent_val)):
        if int(val) != val or val < 1:
            raise ValueError(f"{name} must be a positive integer, got {val!r}")
    if not r > 0:
        raise ValueError(f"heterogeneity r must be positive, got {r!r}")
    omega = synthetic_ground_truth(p, rng)
    shards = []
    for i in range(1, n + 1):
        pair = []
        for split, count in (("train", samples_per_agent_train),
                             ("validation", samples_per_agent_val)):
            g = rng.generator("agent", i, split)
            X = (i * r) * g.standard_normal((count, p))
            y = X @ omega + 0.1 * g.standard_normal(count)
            pair.append(Dataset(X, y, split))
        shards.append(tuple(pair))
    return shards


def export_csv(dataset, path):
    """Write feature columns followed by the label column."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        p = dataset.features.shape[1]
        w.writerow([f"x{j}" for j in range(p)] + ["label"])
        for row, lab in zip(dataset.features, dataset.labels):
            w.writerow([repr(float(v)) for v in row] + [repr(lab.item())])


def _read_bytes(path):
    path = str(path)
    opener = gzip.open if path.endswith(".gz") else open
    with opener(path, "rb") as fh:
        return fh.read()


def _parse_header(buf, path, magic, ndims):
    need = 4 * (1 + ndims)
    if len(buf) < need:
        raise IdxParseError(path, len(buf), f"truncated header, need {need} bytes")
    got = struct.unpack_from(">I", buf, 0)[0]
    if got != magic:
        raise IdxParseError(path, 0, f"bad magic 0x{got:08x}, expected 0x{magic:08x}")
    return struct.unpack_from(f">{ndims}I", buf, 4), need


def load_idx(images_path, labels_path, split="train"):
    """Read an IDX image file and its label file.

    Pixels are flattened row-major and divided by 255.  Gzipped files are
    accepted when the name ends in ``.gz``.
    """
    ibuf = _read_bytes(images_path)
    lbuf = _read_bytes(labels_path)
    (count, rows, cols), ioff = _parse_header(ibuf, images_path, IDX_IMAGES_MAGIC, 3)
    (nlab,), loff = _parse_header(lbuf, labels_path, IDX_LABELS_MAGIC, 1)
    if nlab != count:
        raise IdxParseError(labels_path, 4, f"label count {nlab} != image count {count}")
    size = rows * cols
    if len(ibuf) < ioff + count * size:
        raise IdxParseError(images_path, len(ibuf),
                            f"truncated payload, expected {ioff + count * size} bytes")
    if len(lbuf) < loff + count:
        raise IdxParseError(labels_path, len(lbuf),
                            f"truncated payload, expected {loff + count} bytes")
    pixels = np.frombuffer(ibuf, dtype=np.uint8, count=count * size, offset=ioff)
    feats = pixels.reshape(count, size).astype(np.float64) / 255.0
    labels = np.frombuffer(lbuf, dtype=np.uint8, count=count, offset=loff).astype(np.int64)
    return Dataset(feats, labels, split)


def partition(dataset, n, policy="equal", rng=None, fraction=0.3):
    """Split ``dataset`` into ``n`` disjoint shards.

    ``policy="equal"`` shuffles and deals out near-equal shards, the first
    ``N mod n`` shards getting one extra sample.  ``policy="by_class_skew"``
    gives agent ``k mod n`` the leading ``fraction`` of class ``k`` (after
    shuffling) and spreads the remainder round-robin over all agents.
    """
    N = len(dataset)
    if int(n) != n or n < 1 or n > N:
        raise ValueError(f"cannot split {N} samples into {n} shards")
    gen = (rng or RngSpec(0, "partition")).generator("partition", policy)
    if policy == "equal":
        order = gen.permutation(N)
        base, extra = divmod(N, n)
        bounds = np.cumsum([0] + [base + (1 if k < extra else 0) for k in range(n)])
        return [dataset.subset(np.sort(order[bounds[k]:bounds[k + 1]])) for k in range(n)]
    if policy == "by_class_skew":
        if not 0.0 <= fraction <= 1.0:
            raise ValueError(f"fraction must lie in [0, 1], got {fraction!r}")
        labels = np.asarray(dataset.labels)
        if labels.dtype.kind not in "iu":
            raise ValueError("by_class_skew needs integer class labels")
        owned = [[] for _ in range(n)]
        rest = []
        for k in np.unique(labels):
            idx = gen.permutation(np.flatnonzero(labels == k))
            head = int(np.ceil(fraction * idx.size))
            owned[int(k) % n].extend(idx[:head].tolist())
            rest.extend(idx[head:].tolist())
        rest = gen.permutation(np.asarray(rest, dtype=np.int64))
        for j, s in enumerate(rest.tolist()):
            owned[j % n].append(s)
        return [dataset.subset(np.sort(np.asarray(o, dtype=np.int64))) for o in owned]
    raise ValueError(f"unknown partition policy {policy!r}")
