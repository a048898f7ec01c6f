import numpy as np
import pytest

from reidcompress import model as M
from reidcompress.errors import ConfigurationError, DimensionError

from oracles import loop_matvec

RNG = np.random.default_rng(7)


def _params(F=6, H=5, D=8, C=3, mode=None, seed=0):
    return M.init_params(F, H, D, C, mode or M.CompressionMode.full(), seed)


def test_init_determinism_and_shapes():
    a = _params(seed=3)
    b = _params(seed=3)
    for x, y in zip(a[0].__dict__.values(), b[0].__dict__.values()):
        np.testing.assert_array_equal(x, y)
    enc, cls, head = a
    assert head is None
    assert enc.W1.shape == (6, 5) and enc.W2.shape == (5, 8) and cls.Wc.shape == (8, 3)
    assert np.abs(enc.W1).max() <= 1 / np.sqrt(6) and np.abs(enc.W2).max() <= 1 / np.sqrt(5)


def test_init_lowrank_head_shapes():
    enc, cls, head = M.init_params(10, 16, 64, 4, M.CompressionMode.lowrank(8), 0)
    assert head.A.shape == (64, 8) and head.B.shape == (8, 64)
    assert cls.Wc.shape == (64, 4)  # classifier sees the expanded embedding


@pytest.mark.parametrize("mode,d_cls", [
    (M.CompressionMode.slice(3), 3),
    (M.CompressionMode.pruned([0, 4, 7]), 3),
    (M.CompressionMode.full(), 8),
])
def test_classifier_input_dim(mode, d_cls):
    _, cls, _ = _params(mode=mode)
    assert cls.Wc.shape[0] == d_cls


def test_encode_zero_and_identity():
    z = M.EncoderParams(np.zeros((4, 4)), np.zeros(4), np.zeros((4, 4)), np.zeros(4))
    np.testing.assert_array_equal(M.encode(z, RNG.standard_normal(4)), 0)
    # identity-like weights pad or truncate a non-negative input
    enc = M.EncoderParams(np.eye(3, 5), np.zeros(5), np.eye(5, 2), np.zeros(2))
    np.testing.assert_array_equal(M.encode(enc, [1.0, 2.0, 3.0]), [1.0, 2.0])
    enc = M.EncoderParams(np.eye(3, 5), np.zeros(5), np.eye(5, 6), np.zeros(6))
    np.testing.assert_array_equal(M.encode(enc, [1.0, 2.0, 3.0]), [1, 2, 3, 0, 0, 0])


def test_encode_matches_scalar_loop():
    for seed in range(5):
        enc, _, _ = _params(seed=seed)
        x = RNG.standard_normal(6)
        h = np.maximum(loop_matvec(x, enc.W1) + enc.b1, 0)
        expected = loop_matvec(h, enc.W2) + enc.b2
        np.testing.assert_allclose(M.encode(enc, x), expected, rtol=1e-6, atol=1e-12)


def test_encode_shape_error():
    enc, _, _ = _params()
    with pytest.raises(DimensionError):
        M.encode(enc, np.ones(5))


def test_slice_embedding():
    y = np.array([5.0, 6, 7, 8])
    np.testing.assert_array_equal(M.slice_embedding(y, 4), y)
    np.testing.assert_array_equal(M.slice_embedding(y, 2), [5, 6])
    np.testing.assert_array_equal(M.slice_embedding(M.slice_embedding(y, 3), 2), M.slice_embedding(y, 2))
    for k in (0, 5):
        with pytest.raises(DimensionError):
            M.slice_embedding(y, k)


def test_select_dims():
    y = np.array([9.0, 8, 7])
    np.testing.assert_array_equal(M.select_dims(y, M.DimSelection((0, 1, 2))), y)
    np.testing.assert_array_equal(M.select_dims(y, M.DimSelection((0, 2))), [9, 7])
    v = RNG.standard_normal(10)
    np.testing.assert_array_equal(M.select_dims(v, M.DimSelection.prefix(4)), M.slice_embedding(v, 4))
    with pytest.raises(DimensionError):
        M.select_dims(y, M.DimSelection((1, 3)))


@pytest.mark.parametrize("kept", [(), (2, 1), (1, 1), (-1, 2)])
def test_dim_selection_validation(kept):
    with pytest.raises(ConfigurationError):
        M.DimSelection(kept)


def test_prefix_identity_head_reproduces_slice():
    head = M.LowRankHead.prefix_identity(10, 4)
    y = RNG.standard_normal((3, 10))
    np.testing.assert_array_equal(M.low_rank_project(head, y), y[:, :4])
    z = RNG.standard_normal(4)
    e = M.low_rank_expand(head, z)
    np.testing.assert_array_equal(e[:4], z)
    np.testing.assert_array_equal(e[4:], 0)


def test_low_rank_zero_and_loop():
    zero = M.LowRankHead(np.zeros((6, 2)), np.zeros((2, 6)))
    np.testing.assert_array_equal(M.low_rank_project(zero, RNG.standard_normal(6)), 0)
    np.testing.assert_array_equal(M.low_rank_expand(zero, np.zeros(2)), 0)
    head = M.LowRankHead(RNG.standard_normal((6, 2)), RNG.standard_normal((2, 6)))
    y, z = RNG.standard_normal(6), RNG.standard_normal(2)
    np.testing.assert_allclose(M.low_rank_project(head, y), loop_matvec(y, head.A), rtol=1e-6)
    np.testing.assert_allclose(M.low_rank_expand(head, z), loop_matvec(z, head.B), rtol=1e-6)
    with pytest.raises(DimensionError):
        M.low_rank_project(head, np.ones(5))
    with pytest.raises(DimensionError):
        M.low_rank_expand(head, np.ones(3))


def test_classify():
    zero = M.ClassifierParams(np.zeros((3, 2)), np.zeros(2))
    np.testing.assert_array_equal(M.classify(zero, [1.0, 2, 3]), [0, 0])
    pick = M.ClassifierParams(np.array([[1.0, 0], [0, 0], [0, 0]]), np.zeros(2))
    np.testing.assert_array_equal(M.classify(pick, [4.0, 2, 3]), [4, 0])
    c = M.ClassifierParams(RNG.standard_normal((3, 4)), RNG.standard_normal(4))
    e = RNG.standard_normal(3)
    np.testing.assert_allclose(M.classify(c, e), loop_matvec(e, c.Wc) + c.bc, rtol=1e-6)
    with pytest.raises(DimensionError):
        M.classify(c, np.ones(4))


def test_embed_for_retrieval_modes():
    enc, _, _ = _params(D=8)
    x = RNG.standard_normal((4, 6))
    full = M.embed_for_retrieval(enc, None, M.CompressionMode.full(), x)
    assert full.dtype == np.float32
    np.testing.assert_array_equal(full, M.encode(enc, x).astype(np.float32))
    sl = M.embed_for_retrieval(enc, None, M.CompressionMode.slice(3), x)
    lr = M.embed_for_retrieval(enc, M.LowRankHead.prefix_identity(8, 3), M.CompressionMode.lowrank(3), x)
    pr = M.embed_for_retrieval(enc, None, M.CompressionMode.pruned(M.DimSelection.prefix(3)), x)
    assert sl.tobytes() == lr.tobytes() == pr.tobytes()
    for mode in [M.CompressionMode.full(), M.CompressionMode.slice(5), M.CompressionMode.lowrank(2),
                 M.CompressionMode.pruned([1, 6])]:
        head = M.LowRankHead.prefix_identity(8, mode.k) if mode.kind == M.LOWRANK else None
        assert M.embed_for_retrieval(enc, head, mode, x).shape[-1] == mode.retrieval_dim(8)


def test_embed_for_retrieval_config_errors():
    enc, _, _ = _params(D=8)
    x = np.ones(6)
    with pytest.raises(ConfigurationError):
        M.embed_for_retrieval(enc, None, M.CompressionMode.lowrank(3), x)
    with pytest.raises(ConfigurationError):
        M.embed_for_retrieval(enc, M.LowRankHead.prefix_identity(8, 3), M.CompressionMode.slice(3), x)
    with pytest.raises(ConfigurationError):
        M.embed_for_retrieval(enc, M.LowRankHead.prefix_identity(8, 2), M.CompressionMode.lowrank(3), x)
    with pytest.raises(ConfigurationError):
        M.embed_for_retrieval(enc, None, M.CompressionMode.slice(9), x)
