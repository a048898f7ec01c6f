"""Losses with hand-derived gradients, SGD training, QAT and iterative pruning."""

import csv
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional

import numpy as np

from . import model as M
from .dataset import sample_triplets
from .errors import ConfigurationError, DimensionError, TrainingDivergedError
from .numerics import column_l2_norms
from .store import QMAX, round_half_away


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 40
    batch_size: int = 32
    learning_rate: float = 0.05
    triplet_margin: float = 0.3
    seed: int = 0
    mode: M.CompressionMode = field(default_factory=M.CompressionMode.full)
    qat: bool = False
    retrain_fraction: float = 0.2
    prune_rounds: int = 5
    hidden: int = 128
    embed_dim: int = 96
    triplet_weight: float = 1.0
    classifier_weight: float = 1.0
    qat_ema_decay: float = 0.9

    def __post_init__(self):
        if self.epochs < 0:
            raise ConfigurationError("epochs must be >= 0")
        if self.batch_size < 1:
            raise ConfigurationError("batch_size must be >= 1")
        if not self.learning_rate > 0:
            raise ConfigurationError("learning_rate must be > 0")
        if self.triplet_margin < 0:
            raise ConfigurationError("triplet_margin must be >= 0")
        if not 0 < self.retrain_fraction <= 1:
            raise ConfigurationError("retrain_fraction must be in (0, 1]")
        if self.prune_rounds < 1:
            raise ConfigurationError("prune_rounds must be >= 1")
        if not 0 <= self.qat_ema_decay < 1:
            raise ConfigurationError("qat_ema_decay must be in [0, 1)")

    @property
    def retrain_epochs(self):
        return math.ceil(self.retrain_fraction * self.epochs)


@dataclass(frozen=True)
class LossValue:
    triplet: float
    classifier: float
    total: float


@dataclass(frozen=True)
class QatParams:
    scale: float
    bits: int = 8
    symmetric: bool = True

    def __post_init__(self):
        if not (np.isfinite(self.scale) and self.scale > 0):
            raise ConfigurationError(f"QAT scale must be finite and positive, got {self.scale}")
        if self.bits != 8 or not self.symmetric:
            raise ConfigurationError("only symmetric int8 quantization is supported")


@dataclass
class TrainedModel:
    encoder: M.EncoderParams
    classifier: M.ClassifierParams
    head: Optional[M.LowRankHead]
    mode: M.CompressionMode
    qat_scale: Optional[float] = None
    history: list = field(default_factory=list)
    selections: list = field(default_factory=list)

    @property
    def epochs_run(self):
        return len(self.history)

    @property
    def embed_dim(self):
        return self.encoder.embed_dim

    def embed(self, x, mode=None):
        mode = self.mode if mode is None else mode
        head = self.head if mode.kind == M.LOWRANK else None
        return M.embed_for_retrieval(self.encoder, head, mode, x)


# -- elementary losses -------------------------------------------------------

def _unit(diff):
    """diff / ||diff|| along the last axis, zero where the norm is zero."""
    d = np.sqrt(np.sum(diff * diff, axis=-1, keepdims=True))
    safe = np.where(d > 0, d, 1.0)
    return np.where(d > 0, diff / safe, 0.0), d[..., 0]


def triplet_loss(a, p, n, margin):
    """Hinge ``max(0, d(a,p) - d(a,n) + margin)`` and its gradients w.r.t. a, p, n."""
    a, p, n = (np.asarray(v, dtype=np.float64) for v in (a, p, n))
    if not a.shape == p.shape == n.shape:
        raise DimensionError(f"triplet shapes differ: {a.shape}, {p.shape}, {n.shape}")
    if margin < 0:
        raise ValueError("margin must be >= 0")
    u_ap, d_ap = _unit(a - p)
    u_an, d_an = _unit(a - n)
    raw = d_ap - d_an + margin
    loss = np.maximum(raw, 0.0)
    on = (raw > 0)[..., None]
    ga = np.where(on, u_ap - u_an, 0.0)
    gp = np.where(on, -u_ap, 0.0)
    gn = np.where(on, u_an, 0.0)
    if loss.ndim == 0:
        loss = float(loss)
    return loss, (ga, gp, gn)


def _log_softmax(logits):
    shifted = logits - logits.max(axis=-1, keepdims=True)
    return shifted - np.log(np.sum(np.exp(shifted), axis=-1, keepdims=True))


def cross_entropy_loss(logits, label):
    """Softmax cross-entropy and its gradient w.r.t. the logits.

    Works on one logit vector with an integer label, or on a batch of rows
    with an array of labels (losses are then returned per row).
    """
    logits = np.asarray(logits, dtype=np.float64)
    label = np.asarray(label)
    c = logits.shape[-1]
    if np.any(label < 0) or np.any(label >= c):
        raise ValueError(f"label {label} out of range for {c} classes")
    logp = _log_softmax(logits)
    onehot = np.zeros_like(logits)
    np.put_along_axis(onehot, label[..., None], 1.0, axis=-1)
    loss = -np.sum(logp * onehot, axis=-1)
    grad = np.exp(logp) - onehot
    if loss.ndim == 0:
        loss = float(loss)
    return loss, grad


def qat_fake_quantize(y, q):
    """Quantize-dequantize on the int8 grid of ``q.scale``."""
    codes = np.clip(round_half_away(np.asarray(y, dtype=np.float64) / q.scale), -QMAX, QMAX)
    return codes * q.scale


def qat_backward_rule(upstream_grad, y, q):
    """Straight-through estimator: pass the gradient where |y/scale| <= 127, zero elsewhere."""
    upstream_grad = np.asarray(upstream_grad, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if upstream_grad.shape != y.shape:
        raise DimensionError(f"gradient shape {upstream_grad.shape} != input shape {y.shape}")
    return np.where(np.abs(y / q.scale) <= QMAX, upstream_grad, 0.0)


# -- composed model ----------------------------------------------------------

def batch_loss_and_grads(enc, cls, head, mode, xa, xp, xn, la, lp, ln, margin,
                         qat=None, triplet_weight=1.0, classifier_weight=1.0,
                         fake_quant=qat_fake_quantize):
    """Mean loss over a batch of triplets and gradients for every parameter.

    Triplet loss acts on the retrieval embedding (after fake quantization when
    ``qat`` is given); cross-entropy acts on the mode's classifier input for
    the anchor, positive and negative alike. Returns ``(LossValue, grads)``
    with ``grads`` keyed by parameter name.
    """
    b = len(xa)
    x = np.concatenate([xa, xp, xn]).astype(np.float64)
    labels = np.concatenate([la, lp, ln])
    pre, h, y = M.encoder_forward(enc, x)
    r = M.compress(y, mode, head)
    rq = fake_quant(r, qat) if qat is not None else r

    t_loss, (ga, gp, gn) = triplet_loss(rq[:b], rq[b:2 * b], rq[2 * b:], margin)
    g_rq = np.concatenate([ga, gp, gn]) * (triplet_weight / b)

    c_in = M.low_rank_expand(head, rq) if mode.kind == M.LOWRANK else rq
    ce, g_logits = cross_entropy_loss(M.classify(cls, c_in), labels)
    g_logits *= classifier_weight / (3 * b)
    grads = {"Wc": c_in.T @ g_logits, "bc": g_logits.sum(axis=0)}
    g_cin = g_logits @ cls.Wc.T
    if mode.kind == M.LOWRANK:
        grads["B"] = rq.T @ g_cin
        g_rq = g_rq + g_cin @ head.B.T
    else:
        g_rq = g_rq + g_cin

    g_r = qat_backward_rule(g_rq, r, qat) if qat is not None else g_rq
    if mode.kind == M.FULL:
        g_y = g_r
    elif mode.kind == M.LOWRANK:
        grads["A"] = y.T @ g_r
        g_y = g_r @ head.A.T
    else:
        g_y = np.zeros_like(y)
        idx = list(range(mode.k)) if mode.kind == M.SLICE else list(mode.selection.kept)
        g_y[:, idx] = g_r
    grads["W2"] = h.T @ g_y
    grads["b2"] = g_y.sum(axis=0)
    g_pre = (g_y @ enc.W2.T) * (pre > 0)
    grads["W1"] = x.T @ g_pre
    grads["b1"] = g_pre.sum(axis=0)

    triplet = float(np.mean(t_loss))
    classifier = float(np.mean(ce))
    loss = LossValue(triplet, classifier, triplet_weight * triplet + classifier_weight * classifier)
    return loss, grads


def _param_slots(enc, cls, head):
    slots = {"W1": enc, "b1": enc, "W2": enc, "b2": enc, "Wc": cls, "bc": cls}
    if head is not None:
        slots.update(A=head, B=head)
    return slots


def _sgd_step(enc, cls, head, grads, lr):
    for name, owner in _param_slots(enc, cls, head).items():
        setattr(owner, name, getattr(owner, name) - lr * grads[name])


def _batch_max(enc, head, mode, x):
    return float(np.abs(M.compress(M.encode(enc, x), mode, head)).max())


def _run_epochs(tm, ds, cfg, epochs, rng, first_epoch, log_rows):
    """Train ``tm`` in place for ``epochs`` epochs of plain SGD."""
    n_batches = math.ceil(len(ds) / cfg.batch_size)
    ema = None if tm.qat_scale is None else tm.qat_scale * QMAX
    for epoch in range(first_epoch, first_epoch + epochs):
        tot = np.zeros(3)
        for _ in range(n_batches):
            batch = sample_triplets(ds, cfg.batch_size, int(rng.integers(2**63 - 1)))
            xa, xp, xn = (ds.features[i] for i in (batch.anchors, batch.positives, batch.negatives))
            qat = None
            if cfg.qat:
                peak = _batch_max(tm.encoder, tm.head, tm.mode,
                                  np.concatenate([xa, xp, xn]))
                ema = peak if ema is None else cfg.qat_ema_decay * ema + (1 - cfg.qat_ema_decay) * peak
                qat = QatParams(ema / QMAX if ema > 0 else 1.0)
            loss, grads = batch_loss_and_grads(
                tm.encoder, tm.classifier, tm.head, tm.mode, xa, xp, xn,
                ds.labels[batch.anchors], ds.labels[batch.positives], ds.labels[batch.negatives],
                cfg.triplet_margin, qat, cfg.triplet_weight, cfg.classifier_weight)
            if not np.isfinite(loss.total):
                raise TrainingDivergedError(epoch)
            _sgd_step(tm.encoder, tm.classifier, tm.head, grads, cfg.learning_rate)
            tot += (loss.triplet, loss.classifier, loss.total)
        tot /= n_batches
        tm.history.append(LossValue(*map(float, tot)))
        log_rows.append((epoch, *tot, tm.mode.label()))
        if cfg.qat:
            tm.qat_scale = ema / QMAX if ema > 0 else 1.0


def write_train_log(rows, path):
    """One CSV line per epoch: epoch, triplet, classifier, total, mode."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["epoch", "triplet", "classifier", "total", "mode"])
        for epoch, t, c, tot, mode in rows:
            w.writerow([epoch, f"{t:.8f}", f"{c:.8f}", f"{tot:.8f}", mode])


def _initial_model(ds, cfg):
    enc, cls, head = M.init_params(ds.feature_dim, cfg.hidden, cfg.embed_dim,
                                   ds.num_identities, cfg.mode, cfg.seed)
    return TrainedModel(enc, cls, head, cfg.mode)


def train(ds, cfg, init=None, log_path=None):
    """Train encoder and classifier for ``cfg.epochs`` epochs.

    ``init`` optionally supplies the starting TrainedModel (it is copied, not
    modified). Deterministic given the dataset and ``cfg``.
    """
    if init is None:
        tm = _initial_model(ds, cfg)
    else:
        tm = TrainedModel(init.encoder.copy(), init.classifier.copy(),
                          None if init.head is None else init.head.copy(),
                          init.mode, init.qat_scale, list(init.history), list(init.selections))
    tm.mode.validate(tm.embed_dim)
    if tm.mode.kind == M.PRUNED and not tm.selections:
        tm.selections.append(tm.mode.selection)
    rng = np.random.default_rng([cfg.seed, 1])
    rows = []
    _run_epochs(tm, ds, cfg, cfg.epochs, rng, len(tm.history), rows)
    if log_path is not None:
        write_train_log(rows, log_path)
    return tm


# -- pruning -----------------------------------------------------------------

def select_prune_dims(train_embeddings, keep):
    """Keep the ``keep`` columns with the largest L2 norm over the training set.

    Ties go to the lower index; the result is in increasing index order.
    """
    m = np.asarray(train_embeddings)
    if m.ndim != 2 or not 1 <= keep <= m.shape[1]:
        raise ValueError(f"keep={keep} outside [1, {m.shape[-1]}]")
    norms = column_l2_norms(m)
    order = np.argsort(-norms, kind="stable")
    return M.DimSelection(tuple(sorted(order[:keep].tolist())))


def prune_schedule(embed_dim, target_dim, rounds):
    """Geometric schedule round(D * (target/D) ** (r/rounds)), r = 1..rounds."""
    if not 1 <= target_dim < embed_dim:
        raise ValueError(f"target_dim {target_dim} must be in [1, {embed_dim})")
    ks = []
    prev = embed_dim
    for r in range(1, rounds + 1):
        k = int(round_half_away(embed_dim * (target_dim / embed_dim) ** (r / rounds)))
        k = min(max(k, target_dim), prev)
        ks.append(k)
        prev = k
    ks[-1] = target_dim
    return ks


def iterative_prune_train(ds, cfg, target_dim, pretrained=None, log_path=None):
    """Train at full width, then alternately prune and retrain down to ``target_dim``.

    Each round drops the dimensions with the smallest norm over the training
    embeddings and retrains for ``ceil(retrain_fraction * epochs)`` epochs.
    ``pretrained`` may supply the result of the initial full-width run (a
    model trained with ``cfg`` in full mode) to skip recomputing it.
    """
    if not 1 <= target_dim < cfg.embed_dim:
        raise ValueError(f"target_dim {target_dim} must be in [1, {cfg.embed_dim})")
    full_cfg = replace(cfg, mode=M.CompressionMode.full())
    rng = np.random.default_rng([cfg.seed, 1])
    rows = []
    if pretrained is None:
        tm = _initial_model(ds, full_cfg)
        _run_epochs(tm, ds, full_cfg, cfg.epochs, rng, 0, rows)
    else:
        if pretrained.mode.kind != M.FULL or pretrained.epochs_run != cfg.epochs:
            raise ConfigurationError("pretrained model must be a full-mode run of cfg.epochs epochs")
        tm = train(ds, replace(full_cfg, epochs=0), init=pretrained)
        rows = [(i, h.triplet, h.classifier, h.total, M.FULL) for i, h in enumerate(tm.history)]
        # resume the sampler exactly where the full run left it
        n_batches = math.ceil(len(ds) / cfg.batch_size)
        rng.integers(2**63 - 1, size=cfg.epochs * n_batches)

    kept = np.arange(cfg.embed_dim)
    for k in prune_schedule(cfg.embed_dim, target_dim, cfg.prune_rounds):
        current = M.compress(M.encode(tm.encoder, ds.features), tm.mode, tm.head)
        local = select_prune_dims(current, k)
        positions = list(local.kept)
        kept = kept[positions]
        sel = M.DimSelection(tuple(kept.tolist()))
        tm.classifier = M.ClassifierParams(tm.classifier.Wc[positions].copy(), tm.classifier.bc.copy())
        tm.mode = M.CompressionMode.pruned(sel)
        tm.selections.append(sel)
        _run_epochs(tm, ds, cfg, cfg.retrain_epochs, rng, len(tm.history), rows)
    if log_path is not None:
        write_train_log(rows, log_path)
    return tm


# -- checkpoints -------------------------------------------------------------

def save_model(tm, path, **meta):
    """Write a TrainedModel to an ``.npz`` archive; ``meta`` must be JSON-serialisable."""
    import json

    arrays = {"W1": tm.encoder.W1, "b1": tm.encoder.b1, "W2": tm.encoder.W2,
              "b2": tm.encoder.b2, "Wc": tm.classifier.Wc, "bc": tm.classifier.bc}
    if tm.head is not None:
        arrays.update(A=tm.head.A, B=tm.head.B)
    info = {
        "mode": tm.mode.kind,
        "k": tm.mode.k,
        "kept": list(tm.mode.selection.kept) if tm.mode.selection else None,
        "qat_scale": tm.qat_scale,
        "history": [[h.triplet, h.classifier, h.total] for h in tm.history],
        "selections": [list(s.kept) for s in tm.selections],
        "meta": meta,
    }
    with open(path, "wb") as fh:
        np.savez(fh, info=np.frombuffer(json.dumps(info).encode(), dtype=np.uint8), **arrays)


def load_model(path):
    """Inverse of save_model; returns ``(TrainedModel, meta)``."""
    import json

    with np.load(path) as z:
        info = json.loads(bytes(z["info"]).decode())
        enc = M.EncoderParams(z["W1"], z["b1"], z["W2"], z["b2"])
        cls = M.ClassifierParams(z["Wc"], z["bc"])
        head = M.LowRankHead(z["A"], z["B"]) if "A" in z.files else None
    if info["mode"] == M.PRUNED:
        mode = M.CompressionMode.pruned(info["kept"])
    else:
        mode = M.CompressionMode(info["mode"], k=info["k"])
    tm = TrainedModel(enc, cls, head, mode, info["qat_scale"],
                      [LossValue(*h) for h in info["history"]],
                      [M.DimSelection(tuple(s)) for s in info["selections"]])
    return tm, info["meta"]
