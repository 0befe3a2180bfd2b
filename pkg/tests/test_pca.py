"""Tangent PCA tests.

The Gram-matrix route is checked against a brute-force eigendecomposition
of the empirical covariance of the weighted, vectorised log fields, and
against an exact commuting mirror-pair construction where the mean,
eigenvalue and scores have closed forms.
"""

import numpy as np
import pytest

from bwflow import pca
from bwflow.exceptions import (
    GridMismatchError,
    KOutOfRangeError,
    KTooLargeError,
    LambdaTooLargeError,
)
from bwflow.flow import Flow, FlowSet, trapezoid_weights

from test_linalg import rand_psd


def rand_flowset(rng, n, m, d, complex_kind=False):
    grid = np.linspace(0, 1, m)
    mats = np.stack(
        [np.stack([rand_psd(rng, d, complex_kind=complex_kind) for _ in range(m)])
         for _ in range(n)]
    )
    return FlowSet(grid, mats)


def mirror_pair():
    """Two commuting flows symmetric about a known mean flow."""
    m, d = 5, 3
    grid = np.linspace(0, 1, m)
    mean = np.stack([np.diag([1.0 + t, 2.0, 3.0 - t]) for t in grid])
    psi = np.stack(
        [np.diag([0.2 * np.sin(1 + t), -0.1, 0.15 * t]) for t in grid]
    )
    lo = np.stack([(np.eye(d) - psi[j]) @ mean[j] @ (np.eye(d) - psi[j]) for j in range(m)])
    hi = np.stack([(np.eye(d) + psi[j]) @ mean[j] @ (np.eye(d) + psi[j]) for j in range(m)])
    fs = FlowSet(grid, np.stack([lo, hi]))
    return fs, Flow(grid, mean), psi


def test_mirror_pair_closed_form():
    fs, mean, psi = mirror_pair()
    model = pca.tangent_pca(fs)
    # the two-point mean is the geodesic midpoint, here the known flow
    assert np.allclose(model.mean_flow.mats, mean.mats, atol=1e-7)
    # fields are -+ psi m^{1/2}: rank one with eigenvalue g and scores -+sqrt(g)
    w = trapezoid_weights(mean.grid)
    emb = psi @ np.sqrt(mean.mats)
    g = float(np.sum(w * np.sum(emb * emb, axis=(-2, -1))))
    assert model.n_components == 1
    assert np.isclose(model.eigenvalues[0], g, rtol=1e-6)
    assert np.allclose(np.sort(model.scores[:, 0]), [-np.sqrt(g), np.sqrt(g)], rtol=1e-6)
    assert np.isclose(model.total_variance, g, rtol=1e-6)
    assert np.isclose(model.variance_fractions[0], 1.0, rtol=1e-9)


def test_gram_matches_brute_force_covariance():
    rng = np.random.default_rng(0)
    for complex_kind in (False, True):
        fs = rand_flowset(rng, 6, 4, 3, complex_kind=complex_kind)
        model = pca.tangent_pca(fs)
        mats = pca.log_field_mats(fs, model.mean_flow)
        w = trapezoid_weights(fs.grid)
        x = (mats * np.sqrt(w)[None, :, None, None]).reshape(len(fs), -1)
        if complex_kind:
            x = np.concatenate([x.real, x.imag], axis=1)
        cov = x.T @ x / len(fs)
        brute = np.linalg.eigvalsh(cov)[::-1]
        k = model.n_components
        assert np.allclose(model.eigenvalues, brute[:k], atol=1e-10)
        # logs at the mean sum to zero, so the rank drops below n
        assert k <= len(fs) - 1
        # scores are uncorrelated with variances equal to the eigenvalues
        sc = model.scores.T @ model.scores / len(fs)
        assert np.allclose(sc, np.diag(model.eigenvalues), atol=1e-10)
        assert np.isclose(model.total_variance, np.trace(cov), rtol=1e-10)


def test_component_fields_orthonormal():
    rng = np.random.default_rng(1)
    fs = rand_flowset(rng, 5, 4, 3)
    model = pca.tangent_pca(fs)
    w = trapezoid_weights(fs.grid)
    k = model.n_components
    gram = np.empty((k, k))
    for a in range(k):
        for b in range(k):
            prod = np.sum(
                model.components[a].mats * np.conjugate(model.components[b].mats),
                axis=(-2, -1),
            ).real
            gram[a, b] = np.sum(w * prod)
    assert np.allclose(gram, np.eye(k), atol=1e-9)


def test_degenerate_sample_yields_empty_model():
    rng = np.random.default_rng(2)
    f = np.stack([rand_psd(rng, 3) for _ in range(4)])
    fs = FlowSet(np.linspace(0, 1, 4), np.repeat(f[None], 3, axis=0))
    model = pca.tangent_pca(fs)
    assert model.n_components == 0
    assert model.scores.shape == (3, 0)
    assert np.allclose(model.variance_fractions, np.zeros(0))
    with pytest.raises(KOutOfRangeError):
        pca.unembedded_component(model, 0)


def test_score_sign_determinism():
    rng = np.random.default_rng(3)
    fs = rand_flowset(rng, 6, 3, 3)
    model = pca.tangent_pca(fs)
    for k in range(model.n_components):
        col = model.scores[:, k]
        assert col[np.argmax(np.abs(col))] > 0


def test_project_scores_reproduces_training_rows():
    rng = np.random.default_rng(4)
    fs = rand_flowset(rng, 5, 4, 3)
    model = pca.tangent_pca(fs)
    for i in range(len(fs)):
        out = pca.project_scores(fs[i], model)
        assert np.allclose(out, model.scores[i], atol=1e-8)
    other = Flow(np.linspace(0, 1, 7), np.stack([np.eye(3)] * 7))
    with pytest.raises(GridMismatchError):
        pca.project_scores(other, model)


def test_n_components_cap_and_validation():
    rng = np.random.default_rng(5)
    fs = rand_flowset(rng, 5, 3, 3)
    model = pca.tangent_pca(fs, n_components=2)
    assert model.n_components == 2
    with pytest.raises(KTooLargeError):
        pca.tangent_pca(fs, n_components=6)
    with pytest.raises(KTooLargeError):
        pca.tangent_pca(fs, n_components=0)


def test_mode_of_variation_bounds_and_direction():
    fs, mean, psi = mirror_pair()
    model = pca.tangent_pca(fs)
    # zero amplitude returns the mean flow
    mode0 = pca.mode_of_variation(model, 0, 0.0)
    assert np.allclose(mode0.mats, model.mean_flow.mats, atol=1e-12)
    # the unembedded direction is proportional to the construction's psi
    direction = pca.unembedded_component(model, 0)
    ratio = direction[2][0, 0] / psi[2][0, 0]
    assert np.allclose(direction, ratio * psi, atol=1e-7)
    bound = pca.max_mode_amplitude(model, 0)
    mode = pca.mode_of_variation(model, 0, 0.9 * bound)
    assert np.all(np.linalg.eigvalsh(mode.mats) > -1e-10)
    with pytest.raises(LambdaTooLargeError):
        pca.mode_of_variation(model, 0, 1.1 * bound)


def test_mode_matches_exp_along_component():
    fs, mean, psi = mirror_pair()
    model = pca.tangent_pca(fs)
    lam = 0.5 * pca.max_mode_amplitude(model, 0)
    direction = pca.unembedded_component(model, 0)
    mode = pca.mode_of_variation(model, 0, lam)
    m = model.mean_flow.mats
    s = lam * direction + np.eye(3)
    expect = s @ m @ s
    assert np.allclose(mode.mats, expect, atol=1e-9)


def test_estimator_fit_transform():
    rng = np.random.default_rng(6)
    fs = rand_flowset(rng, 5, 3, 3)
    est = pca.TangentPCA(n_components=2).fit(fs)
    assert est.scores_.shape == (5, 2)
    assert est.eigenvalues_.shape == (2,)
    assert np.all(np.diff(est.eigenvalues_) <= 0)
    assert np.allclose(est.transform(fs), est.scores_, atol=1e-8)
    single = est.transform(fs[0])
    assert single.shape == (1, 2)
    assert np.allclose(single[0], est.scores_[0], atol=1e-8)
    assert np.isclose(
        est.explained_variance_ratio_.sum(),
        est.eigenvalues_.sum() / est.total_variance_,
    )
