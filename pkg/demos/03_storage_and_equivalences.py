"""
Storing compressed embeddings and two structural identities
===========================================================

1. int8 storage: per-store symmetric scale, error at most half a step.
2. A low-rank head whose down-projection is ``[I_k; 0]`` is exactly slicing.
3. Pruning keeps the dimensions with the largest norm over the training set.
"""

import os
import tempfile

import numpy as np

from reidcompress import model as M
from reidcompress.dataset import generate_synthetic
from reidcompress.store import dequantize, quantize_uniform, read_store, size_report, write_store
from reidcompress.training import TrainConfig, select_prune_dims, train

ds = generate_synthetic(60, 6, 16, 4, 0.1, seed=1)
tm = train(ds, TrainConfig(epochs=10, hidden=32, embed_dim=32, seed=1))
emb = tm.embed(ds.features, M.CompressionMode.slice(8))

q = quantize_uniform(emb, ds.labels)
err = np.abs(dequantize(q) - emb).max()
print(f"scale {q.scale:.5f}; worst reconstruction error {err:.5f} (half step {q.scale / 2:.5f})")

with tempfile.TemporaryDirectory() as tmp:
    f32 = write_store(os.path.join(tmp, "f32.emb"), emb, ds.labels)
    i8 = write_store(os.path.join(tmp, "i8.emb"), q)
    back, labels = read_store(os.path.join(tmp, "i8.emb"))
    print(f"file sizes: float32 {f32} bytes, int8 {i8} bytes; codes equal: "
          f"{np.array_equal(back.codes, q.codes)}")

print("32 -> 8 dims in int8:", size_report(32, 32, 8, 8).ratio, "x")
print("768 -> 32 dims in int8:", size_report(768, 32, 32, 8).ratio, "x")

###############################################################################
# Slicing is the special case of the low-rank head with a prefix identity.

head = M.LowRankHead.prefix_identity(32, 8)
lowrank = M.embed_for_retrieval(tm.encoder, head, M.CompressionMode.lowrank(8), ds.features)
print("prefix low-rank == slice:", lowrank.tobytes() == emb.tobytes())

###############################################################################
# Pruning criterion on the full training embeddings.

full = tm.embed(ds.features)
sel = select_prune_dims(full, 8)
norms = np.linalg.norm(full.astype(np.float64), axis=0)
print("kept dims:", sel.kept)
print("smallest kept norm %.3f >= largest dropped norm %.3f" % (
    norms[list(sel.kept)].min(), np.delete(norms, sel.kept).max()))
