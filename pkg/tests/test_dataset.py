import numpy as np
import pytest

from reidcompress.dataset import (Dataset, generate_synthetic, load_embeddings, sample_triplets,
                                  split_identities, split_query_gallery)
from reidcompress.errors import ConfigurationError, StoreFormatError
from reidcompress.store import write_store



def _within_between(ds):
    within, between = [], []
    x = ds.features.astype(np.float64)
    for i in range(len(ds)):
        for j in range(i + 1, len(ds)):
            d = np.sqrt(np.sum((x[i] - x[j]) ** 2))
            (within if ds.labels[i] == ds.labels[j] else between).append(d)
    return np.mean(within), np.mean(between)


def test_zero_noise_views_are_identical():
    ds = generate_synthetic(2, 2, 4, 2, 0.0, 7)
    assert len(ds) == 4 and ds.feature_dim == 4
    for ident in range(2):
        a, b = ds.features[ds.labels == ident]
        np.testing.assert_array_equal(a, b)


def test_generator_determinism():
    a = generate_synthetic(2, 2, 4, 2, 0.1, 7)
    b = generate_synthetic(2, 2, 4, 2, 0.1, 7)
    c = generate_synthetic(2, 2, 4, 2, 0.1, 8)
    assert a.features.tobytes() == b.features.tobytes()
    np.testing.assert_array_equal(a.labels, b.labels)
    assert a.features.tobytes() != c.features.tobytes()


def test_identity_structure_is_planted():
    ds = generate_synthetic(50, 10, 32, 8, 0.05, 3)
    within, between = _within_between(ds)
    assert within < between


def test_codes_live_in_intrinsic_subspace():
    ds = generate_synthetic(30, 2, 16, 3, 0.0, 0)
    assert np.linalg.matrix_rank(ds.features.astype(np.float64), tol=1e-4) == 3


def test_within_distance_grows_with_noise():
    means = []
    for noise in (0.01, 0.1, 0.5):
        ds = generate_synthetic(10, 5, 12, 4, noise, 11)
        means.append(_within_between(ds)[0])
    assert means[0] <= means[1] <= means[2]


@pytest.mark.parametrize("kwargs", [
    dict(num_identities=1), dict(views_per_identity=1), dict(intrinsic_dim=9), dict(view_noise=-0.1),
])
def test_generator_rejects_bad_config(kwargs):
    args = dict(num_identities=4, views_per_identity=3, feature_dim=8, intrinsic_dim=2,
                view_noise=0.1, seed=0)
    args.update(kwargs)
    with pytest.raises(ConfigurationError):
        generate_synthetic(**args)


def test_dataset_rejects_singleton_identity():
    with pytest.raises(ConfigurationError):
        Dataset(np.zeros((3, 2), np.float32), np.array([0, 0, 1]), np.array([0, 1, 0]), 2, 2)


def test_split_forced_and_counts():
    ds = generate_synthetic(5, 2, 4, 2, 0.1, 0)
    sp = split_query_gallery(ds, 1, 0)
    assert np.bincount(ds.labels[sp.gallery_indices]).tolist() == [1] * 5
    big = generate_synthetic(50, 10, 8, 2, 0.1, 0)
    sp = split_query_gallery(big, 2, 4)
    assert len(sp.query_indices) == 100 and len(sp.gallery_indices) == 400
    assert not set(sp.query_indices) & set(sp.gallery_indices)
    assert set(big.labels[sp.query_indices]) <= set(big.labels[sp.gallery_indices])
    sp2 = split_query_gallery(big, 2, 4)
    np.testing.assert_array_equal(sp.query_indices, sp2.query_indices)


def test_split_needs_enough_views():
    ds = generate_synthetic(5, 2, 4, 2, 0.1, 0)
    with pytest.raises(ConfigurationError):
        split_query_gallery(ds, 2, 0)


def test_split_identities_is_disjoint():
    ds = generate_synthetic(20, 3, 6, 2, 0.1, 0)
    tr, te = split_identities(ds, 0.5, 1)
    assert tr.num_identities == 10 and te.num_identities == 10
    tr_rows = {r.tobytes() for r in tr.features}
    assert not tr_rows & {r.tobytes() for r in te.features}


def _check_batch(ds, b):
    lab = ds.labels
    assert np.all(lab[b.anchors] == lab[b.positives])
    assert np.all(lab[b.anchors] != lab[b.negatives])
    assert np.all(b.anchors != b.positives)
    np.testing.assert_array_equal(b.anchor_labels, lab[b.anchors])


def test_triplets_minimal_dataset():
    ds = generate_synthetic(2, 2, 4, 2, 0.1, 0)
    b = sample_triplets(ds, 1, 5)
    _check_batch(ds, b)
    b2 = sample_triplets(ds, 1, 5)
    assert (b.anchors, b.positives, b.negatives) == (b2.anchors, b2.positives, b2.negatives)


def test_triplets_valid_over_many_batches():
    ds = generate_synthetic(7, 3, 4, 2, 0.1, 0)
    for state in range(50):
        _check_batch(ds, sample_triplets(ds, 64, state))


def test_triplet_anchor_identities_are_uniform():
    ds = generate_synthetic(50, 10, 4, 2, 0.1, 0)
    b = sample_triplets(ds, 1000, 123)
    counts = np.bincount(b.anchor_labels, minlength=50)
    p = 1 / 50
    sigma = np.sqrt(1000 * p * (1 - p))
    assert np.all(np.abs(counts - 1000 * p) <= 3 * sigma)
    # positives are uniform over the anchor's other views
    pos_views = ds.views[b.positives]
    assert set(pos_views.tolist()) == set(range(10))


def test_load_embeddings_round_trip(tmp_path):
    rng = np.random.default_rng(0)
    m = rng.standard_normal((6, 8)).astype(np.float32)
    labels = np.arange(6)
    write_store(tmp_path / "e.emb", m, labels)
    got, got_labels = load_embeddings(tmp_path / "e.emb")
    assert got.tobytes() == m.tobytes()
    np.testing.assert_array_equal(got_labels, labels)


def test_load_embeddings_empty_and_bad_magic(tmp_path):
    write_store(tmp_path / "z.emb", np.zeros((0, 8), np.float32), np.zeros(0, np.int64))
    m, labels = load_embeddings(tmp_path / "z.emb")
    assert m.shape == (0, 8) and len(labels) == 0
    raw = bytearray((tmp_path / "z.emb").read_bytes())
    raw[:4] = b"NOPE"
    (tmp_path / "bad.emb").write_bytes(bytes(raw))
    with pytest.raises(StoreFormatError, match="magic"):
        load_embeddings(tmp_path / "bad.emb")


def test_from_arrays_numbers_views():
    ds = Dataset.from_arrays(np.zeros((5, 2)), [3, 3, 9, 9, 3])
    assert ds.labels.tolist() == [0, 0, 1, 1, 0]
    assert ds.views.tolist() == [0, 1, 0, 1, 2]
    assert ds.num_views == 3
