"""Encoder, ID classifier and the embedding heads (full, slice, low-rank, pruned).

The encoder is a 2-layer MLP whose output plays the role of a transformer's
cls token. Parameters are kept in float64 so gradient checks are meaningful;
embeddings handed to retrieval are cast to float32.

Every function accepts a single vector or a batch of row vectors.
"""

from dataclasses import dataclass, replace
from typing import Optional

import numpy as np

from .errors import ConfigurationError, DimensionError

FULL = "full"
SLICE = "slice"
LOWRANK = "lowrank"
PRUNED = "pruned"


@dataclass
class EncoderParams:
    W1: np.ndarray  # (F, H)
    b1: np.ndarray  # (H,)
    W2: np.ndarray  # (H, D)
    b2: np.ndarray  # (D,)

    @property
    def embed_dim(self):
        return self.W2.shape[1]

    def copy(self):
        return EncoderParams(*(a.copy() for a in (self.W1, self.b1, self.W2, self.b2)))


@dataclass
class ClassifierParams:
    Wc: np.ndarray  # (D_cls, C)
    bc: np.ndarray  # (C,)

    def copy(self):
        return ClassifierParams(self.Wc.copy(), self.bc.copy())


@dataclass
class LowRankHead:
    A: np.ndarray  # (D, k) down-projection
    B: np.ndarray  # (k, D) up-projection

    def __post_init__(self):
        d, k = self.A.shape
        if self.B.shape != (k, d) or not 1 <= k <= d:
            raise DimensionError(f"inconsistent low-rank head: A {self.A.shape}, B {self.B.shape}")

    @property
    def k(self):
        return self.A.shape[1]

    def copy(self):
        return LowRankHead(self.A.copy(), self.B.copy())

    @classmethod
    def prefix_identity(cls, embed_dim, k):
        """Head whose projection keeps the first k coordinates, i.e. a slice."""
        A = np.zeros((embed_dim, k))
        A[:k, :] = np.eye(k)
        return cls(A, A.T.copy())


@dataclass(frozen=True)
class DimSelection:
    kept: tuple

    def __post_init__(self):
        kept = tuple(int(i) for i in self.kept)
        if not kept:
            raise ConfigurationError("a selection must keep at least one dimension")
        if any(b <= a for a, b in zip(kept, kept[1:])) or kept[0] < 0:
            raise ConfigurationError("kept indices must be strictly increasing and >= 0")
        object.__setattr__(self, "kept", kept)

    def __len__(self):
        return len(self.kept)

    @classmethod
    def prefix(cls, k):
        return cls(tuple(range(k)))


@dataclass(frozen=True)
class CompressionMode:
    kind: str = FULL
    k: Optional[int] = None
    selection: Optional[DimSelection] = None
    quantize: bool = False

    @classmethod
    def full(cls, quantize=False):
        return cls(FULL, quantize=quantize)

    @classmethod
    def slice(cls, k, quantize=False):
        return cls(SLICE, k=k, quantize=quantize)

    @classmethod
    def lowrank(cls, k, quantize=False):
        return cls(LOWRANK, k=k, quantize=quantize)

    @classmethod
    def pruned(cls, selection, quantize=False):
        if not isinstance(selection, DimSelection):
            selection = DimSelection(tuple(selection))
        return cls(PRUNED, k=len(selection), selection=selection, quantize=quantize)

    def with_quantize(self, quantize):
        return replace(self, quantize=quantize)

    def validate(self, embed_dim):
        if self.kind == FULL:
            return
        if self.kind not in (SLICE, LOWRANK, PRUNED):
            raise ConfigurationError(f"unknown compression mode {self.kind!r}")
        if self.k is None or not 1 <= self.k <= embed_dim:
            raise ConfigurationError(f"{self.kind} dim {self.k} outside [1, {embed_dim}]")
        if self.kind == PRUNED:
            if self.selection is None or len(self.selection) != self.k:
                raise ConfigurationError("pruned mode needs a selection of size k")
            if self.selection.kept[-1] >= embed_dim:
                raise ConfigurationError("selection index beyond the embedding dim")

    def retrieval_dim(self, embed_dim):
        """Length of the embedding that gets stored and compared."""
        return embed_dim if self.kind == FULL else self.k

    def classifier_dim(self, embed_dim):
        # low-rank expands back to D before the classifier
        return embed_dim if self.kind in (FULL, LOWRANK) else self.k

    def label(self):
        return self.kind if self.kind == FULL else f"{self.kind}({self.k})"


def _uniform(rng, fan_in, shape):
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


def init_params(feature_dim, hidden, embed_dim, num_classes, mode, seed):
    """Seeded uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) init.

    Returns ``(encoder, classifier, head)``; ``head`` is None unless ``mode``
    is low-rank.
    """
    for name, v in [("feature_dim", feature_dim), ("hidden", hidden),
                    ("embed_dim", embed_dim), ("num_classes", num_classes)]:
        if v < 1:
            raise ConfigurationError(f"{name} must be >= 1")
    mode.validate(embed_dim)
    rng = np.random.default_rng(seed)
    enc = EncoderParams(_uniform(rng, feature_dim, (feature_dim, hidden)),
                        _uniform(rng, feature_dim, hidden),
                        _uniform(rng, hidden, (hidden, embed_dim)),
                        _uniform(rng, hidden, embed_dim))
    d_cls = mode.classifier_dim(embed_dim)
    cls = ClassifierParams(_uniform(rng, d_cls, (d_cls, num_classes)),
                           _uniform(rng, d_cls, num_classes))
    head = None
    if mode.kind == LOWRANK:
        head = LowRankHead(_uniform(rng, embed_dim, (embed_dim, mode.k)),
                           _uniform(rng, mode.k, (mode.k, embed_dim)))
    return enc, cls, head


def _check_last(x, n, what):
    if x.shape[-1] != n:
        raise DimensionError(f"{what}: expected last dimension {n}, got shape {x.shape}")


def encoder_forward(p, x):
    """Returns ``(pre_activation, hidden, output)`` for the backward pass."""
    x = np.asarray(x, dtype=np.float64)
    _check_last(x, p.W1.shape[0], "encode")
    pre = x @ p.W1 + p.b1
    h = np.maximum(pre, 0.0)
    return pre, h, h @ p.W2 + p.b2


def encode(p, x):
    return encoder_forward(p, x)[2]


def slice_embedding(y, k):
    y = np.asarray(y)
    if not 1 <= k <= y.shape[-1]:
        raise DimensionError(f"slice size {k} outside [1, {y.shape[-1]}]")
    return y[..., :k]


def select_dims(y, sel):
    y = np.asarray(y)
    if sel.kept[-1] >= y.shape[-1]:
        raise DimensionError(f"selection index {sel.kept[-1]} beyond length {y.shape[-1]}")
    return y[..., list(sel.kept)]


def low_rank_project(h, y):
    y = np.asarray(y, dtype=np.float64)
    _check_last(y, h.A.shape[0], "low_rank_project")
    return y @ h.A


def low_rank_expand(h, z):
    z = np.asarray(z, dtype=np.float64)
    _check_last(z, h.k, "low_rank_expand")
    return z @ h.B


def classify(c, e):
    e = np.asarray(e, dtype=np.float64)
    _check_last(e, c.Wc.shape[0], "classify")
    return e @ c.Wc + c.bc


def compress(y, mode, head=None):
    """Map encoder output to the mode's retrieval embedding."""
    if mode.kind == FULL:
        return y
    if mode.kind == SLICE:
        return slice_embedding(y, mode.k)
    if mode.kind == PRUNED:
        return select_dims(y, mode.selection)
    if mode.kind == LOWRANK:
        if head is None:
            raise ConfigurationError("low-rank mode needs a LowRankHead")
        if head.k != mode.k:
            raise ConfigurationError(f"head rank {head.k} does not match mode rank {mode.k}")
        return low_rank_project(head, y)
    raise ConfigurationError(f"unknown compression mode {mode.kind!r}")


def embed_for_retrieval(enc, head, mode, x):
    """Float32 embedding used for gallery matching; the classifier is not involved."""
    mode.validate(enc.embed_dim)
    if mode.kind != LOWRANK and head is not None:
        raise ConfigurationError(f"{mode.kind} mode does not take a low-rank head")
    return np.asarray(compress(encode(enc, x), mode, head), dtype=np.float32)
