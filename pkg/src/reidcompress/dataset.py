"""Synthetic multi-view identity data, query/gallery splits and triplet sampling.

Each identity owns a latent code in a low-dimensional subspace of the input
space; every view of it is that code plus isotropic Gaussian noise. The
subspace dimension is the ground-truth number of dimensions that carry
identity information.
"""

from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError
from .store import QuantizedStore, dequantize, read_store


@dataclass(frozen=True)
class Dataset:
    features: np.ndarray  # float32 (N, feature_dim)
    labels: np.ndarray  # int64 (N,)
    views: np.ndarray  # int64 (N,)
    num_identities: int
    num_views: int

    def __post_init__(self):
        n = len(self.features)
        if self.features.ndim != 2 or self.labels.shape != (n,) or self.views.shape != (n,):
            raise ConfigurationError("features, labels and views disagree in length")
        if self.num_identities < 2:
            raise ConfigurationError("a dataset needs at least 2 identities")
        counts = np.bincount(self.labels, minlength=self.num_identities)
        if len(counts) > self.num_identities or counts.min() < 2:
            raise ConfigurationError("every identity needs at least 2 samples")
        if self.views.size and self.views.max() >= self.num_views:
            raise ConfigurationError("view index out of range")

    @property
    def feature_dim(self):
        return self.features.shape[1]

    def __len__(self):
        return len(self.features)

    @classmethod
    def from_arrays(cls, features, labels):
        """Build a dataset from features and labels, numbering views by order of appearance."""
        features = np.asarray(features, dtype=np.float32)
        labels = np.asarray(labels, dtype=np.int64)
        _, dense = np.unique(labels, return_inverse=True)
        dense = dense.astype(np.int64)
        views = np.zeros(len(dense), dtype=np.int64)
        seen = {}
        for i, lab in enumerate(dense):
            views[i] = seen.get(lab, 0)
            seen[lab] = views[i] + 1
        num_views = int(views.max()) + 1 if len(views) else 0
        return cls(features, dense, views, int(dense.max()) + 1 if len(dense) else 0, num_views)


@dataclass(frozen=True)
class QueryGallerySplit:
    query_indices: np.ndarray
    gallery_indices: np.ndarray


@dataclass(frozen=True)
class TripletBatch:
    anchors: np.ndarray
    positives: np.ndarray
    negatives: np.ndarray
    anchor_labels: np.ndarray

    def __len__(self):
        return len(self.anchors)


def generate_synthetic(num_identities, views_per_identity, feature_dim, intrinsic_dim,
                       view_noise, seed):
    if num_identities < 2:
        raise ConfigurationError("num_identities must be >= 2")
    if views_per_identity < 2:
        raise ConfigurationError("views_per_identity must be >= 2")
    if not 1 <= intrinsic_dim <= feature_dim:
        raise ConfigurationError("need 1 <= intrinsic_dim <= feature_dim")
    if view_noise < 0:
        raise ConfigurationError("view_noise must be >= 0")
    rng = np.random.default_rng(seed)
    # orthonormal columns: embedding the codes preserves their distances
    basis, _ = np.linalg.qr(rng.standard_normal((feature_dim, intrinsic_dim)))
    codes = rng.standard_normal((num_identities, intrinsic_dim))
    noise = rng.standard_normal((num_identities, views_per_identity, feature_dim))
    clean = codes @ basis.T
    feats = clean[:, None, :] + view_noise * noise
    labels = np.repeat(np.arange(num_identities), views_per_identity)
    views = np.tile(np.arange(views_per_identity), num_identities)
    return Dataset(feats.reshape(-1, feature_dim).astype(np.float32), labels, views,
                   num_identities, views_per_identity)


def subset(ds, indices):
    """Dataset restricted to ``indices`` with identities renumbered densely."""
    indices = np.asarray(indices, dtype=np.int64)
    ids, dense = np.unique(ds.labels[indices], return_inverse=True)
    return Dataset(ds.features[indices], dense.astype(np.int64), ds.views[indices],
                   len(ids), ds.num_views)


def split_identities(ds, train_fraction=0.5, seed=0):
    """Partition identities into disjoint train and held-out datasets."""
    if not 0 < train_fraction < 1:
        raise ConfigurationError("train_fraction must be in (0, 1)")
    rng = np.random.default_rng(seed)
    order = rng.permutation(ds.num_identities)
    n_train = int(round(train_fraction * ds.num_identities))
    if n_train < 2 or ds.num_identities - n_train < 2:
        raise ConfigurationError("both sides of the identity split need >= 2 identities")
    train_ids = np.sort(order[:n_train])
    in_train = np.isin(ds.labels, train_ids)
    return subset(ds, np.flatnonzero(in_train)), subset(ds, np.flatnonzero(~in_train))


def split_query_gallery(ds, queries_per_identity, seed):
    """Per identity, send ``queries_per_identity`` samples to the query set and the rest to the gallery."""
    counts = np.bincount(ds.labels, minlength=ds.num_identities)
    if queries_per_identity < 1 or queries_per_identity >= counts.min():
        raise ConfigurationError(
            f"queries_per_identity={queries_per_identity} needs 1 <= q < {counts.min()}")
    rng = np.random.default_rng(seed)
    queries, gallery = [], []
    for ident in range(ds.num_identities):
        members = np.flatnonzero(ds.labels == ident)
        members = members[rng.permutation(len(members))]
        queries.append(np.sort(members[:queries_per_identity]))
        gallery.append(np.sort(members[queries_per_identity:]))
    return QueryGallerySplit(np.concatenate(queries), np.concatenate(gallery))


def sample_triplets(ds, batch_size, rng_state):
    """Uniform anchors, uniform positives among the anchor's other samples, uniform negatives."""
    if batch_size < 1:
        raise ConfigurationError("batch_size must be >= 1")
    rng = np.random.default_rng(rng_state)
    n = len(ds)
    order = np.argsort(ds.labels, kind="stable")
    counts = np.bincount(ds.labels, minlength=ds.num_identities)
    starts = np.concatenate([[0], np.cumsum(counts)[:-1]])
    rank_in_group = np.empty(n, dtype=np.int64)
    rank_in_group[order] = np.arange(n) - starts[ds.labels[order]]

    anchors = rng.integers(0, n, size=batch_size)
    lab = ds.labels[anchors]
    # skip the anchor's own slot within its identity group
    r = rng.integers(0, counts[lab] - 1)
    r = r + (r >= rank_in_group[anchors])
    positives = order[starts[lab] + r]
    # skip the anchor's whole identity block in label-sorted order
    r = rng.integers(0, n - counts[lab])
    r = r + counts[lab] * (r >= starts[lab])
    negatives = order[r]
    return TripletBatch(anchors, positives, negatives, lab)


def load_embeddings(path):
    """Read an EMB1 store as ``(float32 matrix, labels)``; int8 stores are dequantized."""
    data, labels = read_store(path)
    if isinstance(data, QuantizedStore):
        data = dequantize(data)
    if labels is None:
        labels = np.zeros(0, dtype=np.int64)
    return data, labels
