import struct

import numpy as np
import pytest
from hypothesis import given, strategies as st
from sklearn.covariance import ledoit_wolf as sk_ledoit_wolf

from upcall.errors import DataError, NumericalError
from upcall.evaluation import LabeledSample
from upcall.lda import (LdaClassifier, fit_classifier, fit_lda, fit_pca, ledoit_wolf_cov, lda_score, load_lda,
                        save_lda, select_pca_dim, train_lda)


def blobs(rng, n=500, d=5, sep=10.0):
    mu = np.zeros(d)
    mu[0] = sep
    X = np.vstack([rng.standard_normal((n, d)), rng.standard_normal((n, d)) + mu])
    return X, np.repeat([0, 1], n)


# ---- PCA

def test_pca_recovers_exact_subspace(rng):
    basis = np.linalg.qr(rng.standard_normal((10, 2)))[0].T
    X = rng.standard_normal((40, 2)) @ basis + 3.0
    pca = fit_pca(X, 2)
    assert np.linalg.norm(X - pca.inverse_transform(pca.transform(X))) < 1e-8
    np.testing.assert_allclose(pca.components @ pca.components.T, np.eye(2), atol=1e-8)


def test_pca_full_rank_explains_everything(rng):
    X = rng.standard_normal((12, 30))
    pca = fit_pca(X, 11)
    assert pca.explained_variance.sum() == pytest.approx(pca.total_variance, abs=1e-8)


def test_pca_wide_matrix_against_gram_eigenvalues(rng):
    X = rng.standard_normal((100, 12126))
    pca = fit_pca(X, 20)
    assert np.all(np.diff(pca.explained_variance) <= 1e-9)
    Xc = X - X.mean(axis=0)
    gram_eigs = np.sort(np.linalg.eigvalsh(Xc @ Xc.T))[::-1][:20] / 99
    np.testing.assert_allclose(pca.explained_variance, gram_eigs, rtol=1e-8)
    Z = pca.transform(X)
    np.testing.assert_allclose(Z.var(axis=0, ddof=1), pca.explained_variance, rtol=1e-8)


def test_pca_sign_convention(rng):
    pca = fit_pca(rng.standard_normal((30, 8)), 5)
    for row in pca.components:
        assert row[np.argmax(np.abs(row))] > 0


def test_pca_errors(rng):
    with pytest.raises(DataError):
        fit_pca(rng.standard_normal((5, 3)), 4)
    with pytest.raises(DataError):
        fit_pca(rng.standard_normal((5, 3)), 0)
    with pytest.raises(DataError):
        fit_pca(np.ones((6, 4)), 1)


@given(st.integers(0, 10 ** 6), st.integers(1, 6))
def test_pca_preserves_distances_at_full_rank(seed, rank):
    rng = np.random.default_rng(seed)
    X = rng.standard_normal((15, rank)) @ rng.standard_normal((rank, 20))
    Z = fit_pca(X, rank).transform(X)
    dx = np.linalg.norm(X[:, None] - X[None], axis=-1)
    dz = np.linalg.norm(Z[:, None] - Z[None], axis=-1)
    np.testing.assert_allclose(dz, dx, rtol=1e-6, atol=1e-9)


# ---- Ledoit-Wolf

@pytest.mark.parametrize("n,d", [(5, 50), (40, 10), (300, 7), (3, 2)])
def test_ledoit_wolf_matches_reference(rng, n, d):
    X = rng.standard_normal((n, d)) @ rng.standard_normal((d, d))
    Xc = X - X.mean(axis=0)
    cov, lam = ledoit_wolf_cov(Xc)
    ref_cov, ref_lam = sk_ledoit_wolf(Xc, assume_centered=True)
    assert lam == pytest.approx(ref_lam, abs=1e-10)
    np.testing.assert_allclose(cov, ref_cov, rtol=1e-9, atol=1e-12)


def test_shrinkage_beats_sample_covariance_when_n_small(rng):
    wins = 0
    for _ in range(100):
        X = rng.standard_normal((5, 50))
        Xc = X - X.mean(axis=0)
        cov, _ = ledoit_wolf_cov(Xc)
        S = Xc.T @ Xc / 5
        wins += np.linalg.norm(cov - np.eye(50)) < np.linalg.norm(S - np.eye(50))
    assert wins >= 95


def test_little_shrinkage_when_n_large(rng):
    # anisotropic: for a spherical truth the identity target is exact and full shrinkage is right
    X = rng.standard_normal((10000, 5)) * np.array([1.0, 2.0, 3.0, 4.0, 5.0])
    assert ledoit_wolf_cov(X - X.mean(axis=0))[1] < 0.05


def test_zero_covariance_is_degenerate():
    X = np.tile(np.arange(4.0), (6, 1))
    with pytest.raises(NumericalError):
        ledoit_wolf_cov(X - X.mean(axis=0))


@given(st.integers(0, 10 ** 6), st.integers(2, 30), st.integers(1, 12))
def test_shrinkage_bounds(seed, n, d):
    rng = np.random.default_rng(seed)
    X = rng.standard_normal((n, d)) * rng.uniform(0.1, 10, size=d)
    Xc = X - X.mean(axis=0)
    cov, lam = ledoit_wolf_cov(Xc)
    assert 0.0 <= lam <= 1.0
    np.testing.assert_allclose(cov, cov.T)
    S = Xc.T @ Xc / n
    floor = lam * np.trace(S) / d
    assert np.linalg.eigvalsh(cov).min() >= floor - 1e-9 * max(1.0, np.trace(S))


# ---- LDA

def test_separated_gaussians_train_accuracy(rng):
    X, y = blobs(rng)
    model = fit_lda(X, y)
    assert np.mean((model.decision(X) >= 0) == y) >= 0.99
    assert 0 <= model.shrinkage <= 1


def test_identical_means_give_zero_weights(rng):
    Z = rng.standard_normal((50, 4))
    model = fit_lda(np.vstack([Z, Z]), np.repeat([0, 1], 50))
    assert np.max(np.abs(model.weights)) < 1e-12
    np.testing.assert_allclose(model.score(rng.standard_normal((10, 4))), 0.5, atol=1e-12)


def test_label_swap_negates_weights(rng):
    X, y = blobs(rng, n=60, sep=3.0)
    a, b = fit_lda(X, y), fit_lda(X, 1 - y)
    np.testing.assert_allclose(a.weights, -b.weights, atol=1e-8)


def test_single_class_rejected(rng):
    with pytest.raises(DataError):
        fit_lda(rng.standard_normal((10, 3)), np.zeros(10))


def test_prior_enters_bias(rng):
    X, y = blobs(rng, n=50, sep=4.0)
    keep = np.r_[np.arange(50), np.arange(50, 70)]
    model = fit_lda(X[keep], y[keep])
    mid = model.class_means.mean(axis=0)
    assert model.decision(mid)[0] == pytest.approx(np.log(20 / 50))


# ---- scoring on spectrogram-shaped input

def _toy_classifier(rng, shape=(6, 7), n=80):
    X, y = blobs(rng, n=n, d=shape[0] * shape[1], sep=6.0)
    return fit_classifier(X.reshape(-1, *shape), y, 4, shape), X.reshape(-1, *shape), y


def test_midpoint_scores_half_and_mirror_sums_to_one(rng):
    clf, X, y = _toy_classifier(rng)
    mu0, mu1 = clf.lda.class_means
    mid_z = (mu0 + mu1) / 2
    mid_x = clf.pca.inverse_transform(mid_z).reshape(clf.input_shape)
    assert lda_score(clf, mid_x) == pytest.approx(0.5, abs=1e-9)
    w = clf.lda.weights
    for x in X[:20]:
        z = clf.pca.transform(x.ravel())[0]
        mirrored_z = z - 2 * (w @ z + clf.lda.bias) / (w @ w) * w
        mirrored = clf.pca.inverse_transform(mirrored_z).reshape(clf.input_shape)
        assert lda_score(clf, x) + lda_score(clf, mirrored) == pytest.approx(1.0, abs=1e-6)


def test_far_positive_scores_high(rng):
    clf, X, y = _toy_classifier(rng)
    far = X[y == 1][np.argmax(clf.decision(X[y == 1]))]
    assert lda_score(clf, far) > 0.9


def test_shape_mismatch(rng):
    clf, _, _ = _toy_classifier(rng)
    with pytest.raises(DataError):
        clf(np.zeros((2, 5, 5)))


def test_offset_invariance_of_decisions(rng):
    clf, X, y = _toy_classifier(rng)
    shifted = fit_classifier(X + 37.0, y, 4, clf.input_shape)
    test = rng.standard_normal((100, *clf.input_shape)) * 3
    np.testing.assert_array_equal(clf(test) >= 0.5, shifted(test + 37.0) >= 0.5)


def test_flat_length_for_full_spectrograms(rng):
    samples = [LabeledSample(rng.standard_normal((94, 129)) + 3 * (i % 2), i % 2, float(i)) for i in range(30)]
    clf = train_lda(samples, (4, 8))
    assert clf.pca.mean.size == 12126 and clf.pca.components.shape[1] == 12126


# ---- dimensionality selection

def test_select_single_candidate(rng):
    X, y = blobs(rng, n=20)
    assert select_pca_dim((X, y), [3]) == 3


def test_select_ties_go_smallest(rng):
    X, y = blobs(rng, n=100, d=10, sep=30.0)
    assert select_pca_dim((X, y), [8, 2, 5]) == 2


def test_select_empty_rejected(rng):
    with pytest.raises(DataError):
        select_pca_dim(blobs(rng, n=10), [])


def test_select_finds_two_signal_components():
    hits = 0
    for seed in range(100):
        rng = np.random.default_rng(seed)
        n = 200
        y = np.repeat([0, 1], n // 2)
        X = rng.standard_normal((n, 60))
        X[:, 0] *= 10.0                      # loud, uninformative
        X[:, 1] += np.where(y == 1, 4.0, -4.0)  # informative, second by variance
        hits += select_pca_dim((X, y), [1, 2, 50], seed=seed) == 2
    assert hits >= 90


def test_select_is_reproducible(rng):
    X, y = blobs(rng, n=60, d=12, sep=1.0)
    assert select_pca_dim((X, y), [1, 3, 6, 12], seed=5) == select_pca_dim((X, y), [1, 3, 6, 12], seed=5)


# ---- persistence

def test_save_load_round_trip(tmp_path, rng):
    clf, X, _ = _toy_classifier(rng)
    save_lda(tmp_path / "m.bin", clf)
    raw = (tmp_path / "m.bin").read_bytes()
    assert raw[:4] == b"LDA1"
    assert struct.unpack_from("<IIII", raw, 4) == (6, 7, 42, 4)
    back = load_lda(tmp_path / "m.bin")
    assert isinstance(back, LdaClassifier)
    np.testing.assert_array_equal(back(X), clf(X))


def test_load_rejects_garbage(tmp_path):
    (tmp_path / "x.bin").write_bytes(b"LDA1" + b"\x01" * 10)
    with pytest.raises(DataError):
        load_lda(tmp_path / "x.bin")
    (tmp_path / "y.bin").write_bytes(b"RNET")
    with pytest.raises(DataError):
        load_lda(tmp_path / "y.bin")
