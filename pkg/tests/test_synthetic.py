import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cape.errors import SpecError
from cape.synthetic import SyntheticSpec, generate_synthetic


def stores_equal(a, b):
    return (a.table == b.table and a.features == b.features
            and np.array_equal(a.embeddings.state_vecs, b.embeddings.state_vecs)
            and np.array_equal(a.embeddings.object_vecs, b.embeddings.object_vecs))


def test_same_seed_same_dataset():
    spec = SyntheticSpec(seed=3, samples_per_pair=4)
    assert stores_equal(generate_synthetic(spec), generate_synthetic(spec))


def test_different_seed_differs():
    a = generate_synthetic(SyntheticSpec(seed=1, samples_per_pair=4))
    b = generate_synthetic(SyntheticSpec(seed=2, samples_per_pair=4))
    assert not stores_equal(a, b)


def test_noiseless_samples_identical():
    ds = generate_synthetic(SyntheticSpec(noise_sigma=0.0, samples_per_pair=2))
    f = ds.features
    idx = f.partition("train")
    first = idx[f.composition_ids[idx] == f.composition_ids[idx[0]]]
    assert len(first) == 2
    assert np.array_equal(f.features[first[0]], f.features[first[1]])


@settings(max_examples=15, deadline=None)
@given(st.integers(1, 6), st.integers(0, 1000), st.integers(3, 6), st.integers(3, 6))
def test_train_count_and_split_invariants(k, seed, ns, no):
    n_seen = max(ns, no) + 1
    spec = SyntheticSpec(n_states=ns, n_objects=no, n_seen=n_seen, samples_per_pair=k,
                         eval_samples_per_pair=1, seed=seed, feature_dim=4, embedding_dim=3)
    ds = generate_synthetic(spec)
    t = ds.table
    assert len(ds.features.partition("train")) == k * t.seen_count
    assert set(t.ids("seen")).isdisjoint(t.ids("unseen_val", "unseen_test"))
    train_labels = ds.features.composition_ids[ds.features.partition("train")]
    assert all(t.is_seen(int(c)) for c in train_labels)
    seen_pairs = [t.pairs[i] for i in t.seen_ids]
    assert {s for s, _ in seen_pairs} == set(range(ns))
    assert {o for _, o in seen_pairs} == set(range(no))


def test_zero_unseen_is_spec_error():
    with pytest.raises(SpecError):
        generate_synthetic(SyntheticSpec(n_states=3, n_objects=3, n_seen=9))


def test_too_few_seen_for_cover_is_spec_error():
    with pytest.raises(SpecError):
        generate_synthetic(SyntheticSpec(n_states=5, n_objects=5, n_seen=3))


def least_squares_probe_accuracy(ds):
    idx = ds.features.partition("train")
    X = ds.features.features[idx].astype(np.float64)
    X = np.hstack([X, np.ones((len(X), 1))])
    labels = ds.features.composition_ids[idx].astype(int)
    classes = np.unique(labels)
    Y = (labels[:, None] == classes[None, :]).astype(float)
    W, *_ = np.linalg.lstsq(X, Y, rcond=None)
    pred = classes[np.argmax(X @ W, axis=1)]
    return float(np.mean(pred == labels))


def test_linear_probe_separates_seen_pairs():
    ds = generate_synthetic(SyntheticSpec(n_states=5, n_objects=5, noise_sigma=0.01,
                                          feature_dim=32))
    assert least_squares_probe_accuracy(ds) > 0.95
