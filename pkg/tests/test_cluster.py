"""Flow k-means tests.

Degenerate cases have exact answers: one cluster must return the global
Frechet mean flow with its total dispersion, n clusters must drive the
inertia to zero, and well-separated groups must be recovered exactly in
both dissimilarity modes.
"""

import numpy as np
import pytest

from bwflow import barycenter as bc
from bwflow import cluster as cl
from bwflow.exceptions import ValidationError
from bwflow.flow import Flow, FlowSet, flow_distance

from test_linalg import rand_psd


def jittered_group(rng, base, n, m, amp=0.05):
    d = base.shape[0]
    mats = np.empty((n, m, d, d))
    for i in range(n):
        s = np.eye(d) + amp * rng.uniform(-1, 1) * np.eye(d)
        mats[i] = np.repeat((s @ base @ s)[None], m, axis=0)
    return mats


def two_group_flowset(rng, n_per=6, m=5, d=3, gap=9.0):
    grid = np.linspace(0, 1, m)
    base = rand_psd(rng, d) + np.eye(d)
    mats = np.concatenate(
        [jittered_group(rng, base, n_per, m), jittered_group(rng, gap * base, n_per, m)]
    )
    truth = np.repeat([0, 1], n_per)
    perm = rng.permutation(2 * n_per)
    return FlowSet(grid, mats[perm]), truth[perm]


def same_partition(a, b):
    a, b = np.asarray(a), np.asarray(b)
    return np.array_equal(a, b) or np.array_equal(a, 1 - b)


def test_pairwise_distances_match_flow_distance():
    rng = np.random.default_rng(0)
    grid = np.linspace(0, 1, 4)
    mats = np.stack(
        [np.stack([rand_psd(rng, 3) for _ in range(4)]) for _ in range(5)]
    )
    fs = FlowSet(grid, mats)
    out = cl.pairwise_flow_distances(fs)
    assert np.allclose(out, out.T)
    assert np.allclose(np.diag(out), 0.0)
    for i in range(5):
        for j in range(i + 1, 5):
            assert np.isclose(out[i, j], flow_distance(fs[i], fs[j]), atol=1e-10)
    sq = cl.pairwise_flow_distances(fs, squared=True)
    assert np.allclose(sq, out**2, atol=1e-12)


def test_single_cluster_is_global_mean():
    rng = np.random.default_rng(1)
    fs, _ = two_group_flowset(rng, n_per=4)
    res = cl.kmeans_flows(fs, 1, "raw", n_init=1)
    mean, _ = bc.frechet_mean_flow(fs)
    assert np.allclose(res.centers.mats[0], mean.mats, atol=1e-6)
    total = sum(
        flow_distance(fs[i], mean, squared=True) for i in range(fs.n_flows)
    )
    assert np.isclose(res.inertia, total, rtol=1e-6)
    assert np.all(res.labels == 0)
    assert np.isclose(res.distortion, res.inertia / fs.n_flows)


def test_n_clusters_equal_n_zero_inertia():
    rng = np.random.default_rng(2)
    fs, _ = two_group_flowset(rng, n_per=3)
    res = cl.kmeans_flows(fs, fs.n_flows, "raw", n_init=1, seed=3)
    assert res.inertia < 1e-12
    assert len(set(res.labels.tolist())) == fs.n_flows


def test_lloyd_inertia_monotone():
    rng = np.random.default_rng(3)
    fs, _ = two_group_flowset(rng, n_per=6, gap=2.0)
    for mode in ("raw", "scores"):
        res = cl.kmeans_flows(fs, 3, mode, n_init=2, seed=1)
        assert np.all(np.diff(res.per_iter_inertia) <= 1e-10)
        assert res.n_iter == len(res.per_iter_inertia)


def test_separated_groups_recovered_both_modes():
    rng = np.random.default_rng(4)
    fs, truth = two_group_flowset(rng)
    raw = cl.kmeans_flows(fs, 2, "raw", n_init=5)
    assert same_partition(raw.labels, truth)
    scores = cl.kmeans_flows(fs, 2, "scores", n_init=5)
    assert same_partition(scores.labels, truth)
    assert scores.pca_model is not None
    assert scores.center_scores.shape[0] == 2


def test_predict_reproduces_training_labels():
    rng = np.random.default_rng(5)
    fs, truth = two_group_flowset(rng)
    for mode in ("raw", "scores"):
        res = cl.kmeans_flows(fs, 2, mode, n_init=5)
        assert np.array_equal(res.predict(fs), res.labels)


def test_seeded_reproducibility():
    rng = np.random.default_rng(6)
    fs, _ = two_group_flowset(rng, gap=1.5)
    a = cl.kmeans_flows(fs, 3, "raw", n_init=3, seed=9)
    b = cl.kmeans_flows(fs, 3, "raw", n_init=3, seed=9)
    assert np.array_equal(a.labels, b.labels)
    assert a.inertia == b.inertia
    assert a.best_restart == b.best_restart


def test_elbow_scores_decrease_for_separated_data():
    rng = np.random.default_rng(7)
    fs, _ = two_group_flowset(rng)
    ks, inertias = cl.elbow_scores(fs, [1, 2, 4], "scores", n_init=4)
    assert np.array_equal(ks, [1, 2, 4])
    assert np.all(np.diff(inertias) <= 1e-10)
    # two well-separated groups: the elbow drop at k=2 dominates
    assert inertias[1] < 0.1 * inertias[0]


def test_validation_errors():
    rng = np.random.default_rng(8)
    fs, _ = two_group_flowset(rng, n_per=2)
    with pytest.raises(ValidationError):
        cl.kmeans_flows(fs, 2, "fuzzy")
    with pytest.raises(ValidationError):
        cl.kmeans_flows(fs, 0, "raw")
    with pytest.raises(ValidationError):
        cl.kmeans_flows(fs, 5, "raw")


def test_estimator_interface():
    rng = np.random.default_rng(9)
    fs, truth = two_group_flowset(rng)
    est = cl.FlowKMeans(n_clusters=2, mode="scores", n_init=4).fit(fs)
    assert same_partition(est.labels_, truth)
    assert est.inertia_ >= 0
    assert np.array_equal(est.predict(fs), est.labels_)
    est_raw = cl.FlowKMeans(n_clusters=2, mode="raw", n_init=4).fit(fs)
    assert isinstance(est_raw.cluster_centers_, FlowSet)
