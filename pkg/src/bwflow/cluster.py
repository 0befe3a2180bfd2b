"""K-means clustering of covariance flows.

Two dissimilarity modes are supported.  In ``"raw"`` mode points are the
flows themselves, assignment uses the integrated metric and centroids
are pointwise Frechet mean flows of the cluster members.  In
``"scores"`` mode flows are first reduced to tangent principal
component scores and standard Euclidean k-means runs on the score
vectors.  Both share plus-plus seeding on a precomputed distance matrix
and a Lloyd loop with farthest-point reseeding of emptied clusters.
"""

from dataclasses import dataclass
from typing import Optional

import numpy as np
from sklearn.base import BaseEstimator, ClusterMixin

from .barycenter import GdConfig, frechet_mean_flow
from .exceptions import ValidationError
from .flow import FlowSet, trapezoid_weights, validate_flowset
from .geometry import bw_distance
from .pca import PcaModel, project_scores, tangent_pca


def _flow_sq_dists(mats, grid, center):
    """Squared integrated distances from each flow in ``mats`` to ``center``."""
    sq = bw_distance(mats, center, check=False, squared=True)
    return sq @ trapezoid_weights(grid)


def pairwise_flow_distances(flows, squared=False):
    """Symmetric matrix of integrated distances between all flow pairs."""
    diag = validate_flowset(flows)
    if not diag.ok:
        raise ValidationError("; ".join(diag.structural) or "flows fail validation")
    n = flows.n_flows
    w = trapezoid_weights(flows.grid)
    out = np.zeros((n, n))
    for i in range(n - 1):
        sq = bw_distance(flows.mats[i + 1:], flows.mats[i], check=False, squared=True)
        out[i, i + 1:] = out[i + 1:, i] = sq @ w
    return out if squared else np.sqrt(np.maximum(out, 0.0))


def _plus_plus_seed(pair_sq, n_clusters, rng):
    """Plus-plus seeding indices from a squared pairwise distance matrix."""
    n = pair_sq.shape[0]
    chosen = [int(rng.integers(n))]
    while len(chosen) < n_clusters:
        d2 = pair_sq[:, chosen].min(axis=1)
        total = d2.sum()
        if total <= 0.0:
            remaining = [i for i in range(n) if i not in chosen]
            chosen.append(int(rng.choice(remaining)))
            continue
        chosen.append(int(rng.choice(n, p=d2 / total)))
    return chosen


def _lloyd(n_points, n_clusters, init_idx, center_of_point, sq_dists, make_center,
           max_iter):
    """Generic Lloyd loop; representation details live in the callables."""
    centers = [center_of_point(i) for i in init_idx]
    labels = np.full(n_points, -1)
    per_iter = []
    for it in range(max_iter):
        d2 = np.stack([sq_dists(c) for c in centers], axis=1)
        new_labels = d2.argmin(axis=1)
        point_d2 = d2[np.arange(n_points), new_labels]
        for j in range(n_clusters):
            if not np.any(new_labels == j):
                far = int(point_d2.argmax())
                new_labels[far] = j
                centers[j] = center_of_point(far)
                point_d2[far] = 0.0
        per_iter.append(float(point_d2.sum()))
        if np.array_equal(new_labels, labels):
            labels = new_labels
            break
        labels = new_labels
        for j in range(n_clusters):
            centers[j] = make_center(np.flatnonzero(labels == j))
    return labels, centers, per_iter


@dataclass
class KMeansResult:
    """Outcome of a flow k-means run (best restart)."""

    labels: np.ndarray
    inertia: float
    per_iter_inertia: list
    mode: str
    n_iter: int
    best_restart: int
    centers: Optional[FlowSet] = None
    center_scores: Optional[np.ndarray] = None
    pca_model: Optional[PcaModel] = None

    @property
    def distortion(self):
        """Average squared distance of a point to its centroid."""
        return self.inertia / self.labels.size

    def predict(self, flows):
        """Nearest-centroid labels for new flows on the same grid."""
        if self.mode == "raw":
            d2 = np.stack(
                [_flow_sq_dists(flows.mats, flows.grid, c) for c in self.centers.mats],
                axis=1,
            )
            return d2.argmin(axis=1)
        scores = np.stack(
            [project_scores(flows[i], self.pca_model) for i in range(flows.n_flows)]
        )
        d2 = ((scores[:, None, :] - self.center_scores[None]) ** 2).sum(axis=2)
        return d2.argmin(axis=1)


def kmeans_flows(flows, n_clusters, mode, n_init=20, max_iter=50, seed=0,
                 gd_config=None, n_components=None):
    """Cluster a FlowSet by k-means.

    Parameters
    ----------
    mode : {"raw", "scores"}
        Required.  "raw" clusters in flow space with Frechet mean
        centroids; "scores" clusters tangent PCA score vectors.
    n_init : int
        Restarts with different seedings; the lowest-inertia run wins.
    """
    if mode not in ("raw", "scores"):
        raise ValidationError(f"mode must be 'raw' or 'scores', got {mode!r}")
    if not 1 <= n_clusters <= flows.n_flows:
        raise ValidationError(
            f"n_clusters must lie in [1, {flows.n_flows}], got {n_clusters}"
        )
    gd_config = gd_config or GdConfig()
    pca_model = None
    if mode == "raw":
        pair_sq = pairwise_flow_distances(flows, squared=True)
        mats, grid = flows.mats, flows.grid

        def center_of_point(i):
            return mats[i].copy()

        def sq_dists(center):
            return _flow_sq_dists(mats, grid, center)

        def make_center(idx):
            subset = FlowSet(grid, mats[idx])
            return frechet_mean_flow(subset, gd_config=gd_config)[0].mats
    else:
        pca_model = tangent_pca(flows, n_components=n_components,
                                gd_config=gd_config)
        pts = pca_model.scores
        diff = pts[:, None, :] - pts[None, :, :]
        pair_sq = (diff ** 2).sum(axis=2)

        def center_of_point(i):
            return pts[i].copy()

        def sq_dists(center):
            return ((pts - center) ** 2).sum(axis=1)

        def make_center(idx):
            return pts[idx].mean(axis=0)

    best = None
    streams = np.random.SeedSequence(seed).spawn(n_init)
    for r in range(n_init):
        rng = np.random.default_rng(streams[r])
        init_idx = _plus_plus_seed(pair_sq, n_clusters, rng)
        labels, centers, per_iter = _lloyd(
            flows.n_flows, n_clusters, init_idx, center_of_point, sq_dists,
            make_center, max_iter,
        )
        if best is None or per_iter[-1] < best[2][-1]:
            best = (labels, centers, per_iter, r)
    labels, centers, per_iter, restart = best
    result = KMeansResult(
        labels=labels,
        inertia=per_iter[-1],
        per_iter_inertia=per_iter,
        mode=mode,
        n_iter=len(per_iter),
        best_restart=restart,
        pca_model=pca_model,
    )
    if mode == "raw":
        result.centers = FlowSet(flows.grid, np.stack(centers))
    else:
        result.center_scores = np.stack(centers)
    return result


def elbow_scores(flows, k_values, mode, **kwargs):
    """Inertia for each candidate cluster count, for elbow diagnostics."""
    ks = [int(k) for k in k_values]
    inertias = [kmeans_flows(flows, k, mode, **kwargs).inertia for k in ks]
    return np.array(ks), np.array(inertias)


class FlowKMeans(BaseEstimator, ClusterMixin):
    """K-means over covariance flows with the scikit-learn interface.

    Parameters
    ----------
    n_clusters : int
    mode : {"raw", "scores"}
    n_init : int
        Seeding restarts.
    max_iter : int
        Lloyd iterations per restart.
    n_components : int or None
        Score dimension in "scores" mode; None keeps the full rank.
    seed : int
    """

    def __init__(self, n_clusters=2, mode="raw", n_init=10, max_iter=50,
                 n_components=None, seed=0):
        self.n_clusters = n_clusters
        self.mode = mode
        self.n_init = n_init
        self.max_iter = max_iter
        self.n_components = n_components
        self.seed = seed

    def fit(self, X, y=None):
        result = kmeans_flows(
            X, self.n_clusters, self.mode, n_init=self.n_init,
            max_iter=self.max_iter, seed=self.seed,
            n_components=self.n_components,
        )
        self.result_ = result
        self.labels_ = result.labels
        self.inertia_ = result.inertia
        self.cluster_centers_ = (
            result.centers if self.mode == "raw" else result.center_scores
        )
        return self

    def predict(self, X):
        return self.result_.predict(X)
