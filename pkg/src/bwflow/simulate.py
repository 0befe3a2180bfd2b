"""Synthetic flow generators used for calibration and testing.

A template flow (a geodesic between two kernel covariances, by default
Brownian motion to Brownian bridge) is deformed by random PSD maps

    T_i(t) = sum_k lambda_k(t) psi_k(. - theta(t)) (x) psi_k(. - theta(t))

built on the discrete trigonometric basis of d uniform points of (0, 1]:
the constant vector, then per frequency ``j`` a (sine, cosine) pair, and
for even ``d`` the alternating Nyquist cosine last.  The basis is exactly
orthonormal on the grid, so with all ``d`` harmonics the unshifted sum of
projectors is exactly the identity, and phase shifts act as rotations
inside each frequency plane (the trigonometric angle-addition identities;
the Nyquist leg, which has no grid sine partner, is left fixed).

Eigenvalue curves default to ``lambda_k(t) = c W_k(t) / nu`` with one
chi-square(nu) draw ``c`` per flow and independent positive mean-one
curves ``W_k``, making ``E T_i(t)`` the projector onto the harmonic span
(the identity at full truncation) and the template the population
Frechet mean of the sampled flows ``T_i M T_i``.
"""

from dataclasses import dataclass, field
from typing import Callable, Union

import numpy as np
from scipy.special import gamma as gamma_fn
from scipy.special import kv

from .exceptions import ValidationError
from .flow import Flow, FlowSet, resample_flow
from .geometry import geodesic
from .linalg import ct


def space_points(dim):
    """The d uniform points of (0, 1] carrying the discretised kernels."""
    return np.arange(1, dim + 1) / dim


def bm_covariance(dim):
    """Brownian-motion covariance ``min(x, y)`` on the grid, scaled by 1/d."""
    x = space_points(dim)
    return np.minimum.outer(x, x) / dim


def bb_covariance(dim):
    """Brownian-bridge covariance ``min(x, y) - x y`` on the grid, scaled by 1/d."""
    x = space_points(dim)
    return (np.minimum.outer(x, x) - np.outer(x, x)) / dim


def matern_covariance(dim, smoothness, lengthscale=1.0, variance=1.0):
    """Matern kernel matrix on the grid, scaled by 1/d."""
    if smoothness <= 0 or lengthscale <= 0 or variance <= 0:
        raise ValidationError("Matern parameters must be positive")
    x = space_points(dim)
    r = np.abs(x[:, None] - x[None, :])
    arg = np.sqrt(2.0 * smoothness) * r / lengthscale
    out = np.empty_like(r)
    zero = arg == 0.0
    a = arg[~zero]
    out[~zero] = (
        variance * (2.0 ** (1.0 - smoothness) / gamma_fn(smoothness))
        * a ** smoothness * kv(smoothness, a)
    )
    out[zero] = variance
    out = 0.5 * (out + out.T)
    return out / dim


@dataclass
class SimConfig:
    """Settings for the synthetic generators."""

    dim: int = 10
    n_times: int = 21
    n_flows: int = 50
    nu: float = 20.0
    truncation: int = 50
    seed: int = 0
    template: Union[str, Flow] = "bm_bb_geodesic"
    matern_smoothness: tuple = (0.25, 2.5)
    matern_lengthscale: float = 1.0
    matern_variance: float = 1.0

    def time_grid(self):
        if self.n_times == 1:
            return np.array([0.0])
        return np.linspace(0.0, 1.0, self.n_times)


def template_flow(cfg):
    """Template: geodesic between two kernel covariances on the time grid."""
    grid = cfg.time_grid()
    if isinstance(cfg.template, Flow):
        if cfg.template.dim != cfg.dim:
            raise ValidationError(
                f"template flow has dimension {cfg.template.dim}, expected {cfg.dim}"
            )
        return resample_flow(cfg.template, grid)
    if cfg.template == "bm_bb_geodesic":
        f0, f1 = bm_covariance(cfg.dim), bb_covariance(cfg.dim)
    elif cfg.template == "matern_pair":
        nu1, nu2 = cfg.matern_smoothness
        f0 = matern_covariance(cfg.dim, nu1, cfg.matern_lengthscale, cfg.matern_variance)
        f1 = matern_covariance(cfg.dim, nu2, cfg.matern_lengthscale, cfg.matern_variance)
    else:
        raise ValidationError(f"unknown template {cfg.template!r}")
    return Flow(grid, geodesic(f0, f1, grid, check=False))


def harmonic_basis(dim):
    """Complete orthonormal trigonometric basis on the spatial grid.

    Returns
    -------
    basis : ndarray, shape (dim, dim)
        Rows are unit vectors: constant, then (sin_j, cos_j) per
        frequency, with the Nyquist cosine last for even ``dim``.
    pairs : list of (sin_row, cos_row, frequency)
        Row pairs rotated into each other by phase shifts.
    """
    x = space_points(dim)
    rows = [np.full(dim, 1.0 / np.sqrt(dim))]
    pairs = []
    j_max = (dim - 1) // 2
    for j in range(1, j_max + 1):
        pairs.append((len(rows), len(rows) + 1, j))
        rows.append(np.sqrt(2.0 / dim) * np.sin(2.0 * np.pi * j * x))
        rows.append(np.sqrt(2.0 / dim) * np.cos(2.0 * np.pi * j * x))
    if dim % 2 == 0:
        rows.append(np.cos(np.pi * np.arange(1, dim + 1)) / np.sqrt(dim))
    return np.stack(rows), pairs


def shifted_harmonics(basis, pairs, theta):
    """Phase-shifted basis rows ``psi_k(. - theta)`` per time point.

    ``theta`` has shape (m,); returns shape (m, dim, dim).  Shifts rotate
    each (sine, cosine) pair by ``2 pi j theta`` exactly; the constant
    and Nyquist rows are fixed.
    """
    theta = np.atleast_1d(np.asarray(theta, dtype=float))
    out = np.broadcast_to(basis, (theta.size,) + basis.shape).copy()
    for ps, pc, j in pairs:
        phi = 2.0 * np.pi * j * theta
        cphi, sphi = np.cos(phi)[:, None], np.sin(phi)[:, None]
        out[:, ps] = cphi * basis[ps] - sphi * basis[pc]
        out[:, pc] = sphi * basis[ps] + cphi * basis[pc]
    return out


@dataclass
class PerturbationLaw:
    """Random ingredients of the deformation maps.

    ``weight_curves(rng, grid, k)`` draws k positive mean-one curves of
    shape (k, m); ``phase_curve(rng, grid)`` draws the shared phase
    trajectory; ``concentration(rng, nu)`` draws the per-flow scalar
    (chi-square(nu) by default).
    """

    weight_curves: Callable
    phase_curve: Callable
    concentration: Callable = field(
        default=lambda rng, nu: float(rng.chisquare(nu))
    )


def _smooth_gaussian_curves(rng, grid, k, n_harmonics=3):
    """k stationary Gaussian curves with unit marginal variance."""
    t = np.asarray(grid)
    j = np.arange(1, n_harmonics + 1)
    a = rng.standard_normal((k, n_harmonics)) / np.sqrt(n_harmonics)
    b = rng.standard_normal((k, n_harmonics)) / np.sqrt(n_harmonics)
    ang = 2.0 * np.pi * np.outer(j, t)
    return a @ np.cos(ang) + b @ np.sin(ang)


def default_perturbation_law(sigma=0.3):
    """Log-Gaussian weight curves and a logistic-squashed Gaussian phase."""

    def weights(rng, grid, k):
        z = sigma * _smooth_gaussian_curves(rng, grid, k)
        return np.exp(z - 0.5 * sigma * sigma)

    def phase(rng, grid):
        z = _smooth_gaussian_curves(rng, grid, 1)[0]
        return 2.0 * np.pi / (1.0 + np.exp(-z))

    return PerturbationLaw(weights, phase)


def degenerate_perturbation_law():
    """W = 1, theta = 0 and the concentration pinned at nu."""
    return PerturbationLaw(
        weight_curves=lambda rng, grid, k: np.ones((k, np.asarray(grid).size)),
        phase_curve=lambda rng, grid: np.zeros(np.asarray(grid).size),
        concentration=lambda rng, nu: float(nu),
    )


def effective_truncation(cfg):
    """Number of harmonics actually used: at most the spatial dimension."""
    if cfg.truncation < 1:
        raise ValidationError("truncation must be at least 1")
    return min(cfg.truncation, cfg.dim)


def sample_perturbation(cfg, law, rng):
    """One random PSD deformation flow ``T(t)`` on the configured grid."""
    grid = cfg.time_grid()
    k = effective_truncation(cfg)
    basis, pairs = harmonic_basis(cfg.dim)
    c = law.concentration(rng, cfg.nu)
    w = np.asarray(law.weight_curves(rng, grid, k), dtype=float)
    if w.shape != (k, grid.size) or np.any(w <= 0.0):
        raise ValidationError("weight curves must be positive with shape (k, m)")
    theta = np.asarray(law.phase_curve(rng, grid), dtype=float)
    lam = (c / cfg.nu) * w.T                       # (m, k)
    shifted = shifted_harmonics(basis, pairs, theta)[:, :k]  # (m, k, d)
    mats = np.einsum("tk,tka,tkb->tab", lam, shifted, shifted)
    return Flow(grid, 0.5 * (mats + ct(mats)))


def sample_flows(cfg, law=None):
    """FlowSet of deformed templates ``T_i(t) M(t) T_i(t)``.

    Per-flow RNG streams are pre-split from the seed, so individual
    flows are reproducible regardless of generation order.
    """
    law = law or default_perturbation_law()
    template = template_flow(cfg)
    streams = np.random.SeedSequence(cfg.seed).spawn(cfg.n_flows)
    out = np.empty((cfg.n_flows, cfg.n_times, cfg.dim, cfg.dim))
    for i in range(cfg.n_flows):
        t_i = sample_perturbation(cfg, law, np.random.default_rng(streams[i])).mats
        mats = t_i @ template.mats @ t_i
        out[i] = 0.5 * (mats + ct(mats))
    return FlowSet(template.grid, out)


def _bump_curves(rng, grid, hi=0.95):
    """Two complementary smooth bump curves with values in [0, hi].

    One bump sits in the early part of [0, 1] and one in the late part,
    with seeded random centres and widths.  Keeping their supports
    mostly disjoint makes the two modulation directions of
    :func:`bimodal_dataset` nearly orthogonal, so the group contrast is
    not hidden by a shared scale direction.
    """
    t = np.asarray(grid)
    c1, c2 = rng.uniform(0.15, 0.35), rng.uniform(0.65, 0.85)
    w1, w2 = rng.uniform(0.12, 0.2), rng.uniform(0.12, 0.2)
    g1 = hi * np.exp(-0.5 * ((t - c1) / w1) ** 2)
    g2 = hi * np.exp(-0.5 * ((t - c2) / w2) ** 2)
    return g1, g2


def bimodal_dataset(cfg):
    """Two-population dataset with a shared template.

    Deformations are ``T_i(t) = W_i(t) sum_k w_k (c_ik / nu)
    psi_k(.-theta_i) (x) psi_k(.-theta_i)`` with harmonic weights
    ``w_0 = 1`` and ``w_k = 1/k``, i.i.d. chi-square(nu) scalars
    ``c_ik``, a constant uniform phase ``theta_i`` and the modulation
    ``W_i(t) = 1 + a1 g1(t) + a2 g2(t)``.  With probability 1/2 the pair
    ``(a1, a2)`` is uniform on (0,1) x (-1,0), else on (-1,0) x (0,1);
    the branch is the label.  The fixed curves ``g1, g2`` are
    complementary smooth bumps inside [0, 1) derived deterministically
    from the seed; larger ``nu`` concentrates the harmonic scalars and
    sharpens the separation between the two populations.

    Returns
    -------
    flows : FlowSet
    labels : ndarray of 0/1
    """
    template = template_flow(cfg)
    grid = template.grid
    k = effective_truncation(cfg)
    basis, pairs = harmonic_basis(cfg.dim)
    root = np.random.SeedSequence(cfg.seed)
    curve_stream, *flow_streams = root.spawn(cfg.n_flows + 1)
    g1, g2 = _bump_curves(np.random.default_rng(curve_stream), grid)
    wk = np.ones(k)
    wk[1:] = 1.0 / np.arange(1, k)
    out = np.empty((cfg.n_flows, cfg.n_times, cfg.dim, cfg.dim))
    labels = np.empty(cfg.n_flows, dtype=int)
    for i in range(cfg.n_flows):
        rng = np.random.default_rng(flow_streams[i])
        labels[i] = int(rng.random() < 0.5)
        if labels[i] == 0:
            a1, a2 = rng.uniform(0.0, 1.0), rng.uniform(-1.0, 0.0)
        else:
            a1, a2 = rng.uniform(-1.0, 0.0), rng.uniform(0.0, 1.0)
        wcurve = 1.0 + a1 * g1 + a2 * g2
        c = rng.chisquare(cfg.nu, size=k) / cfg.nu
        theta = rng.uniform(0.0, 2.0 * np.pi)
        shifted = shifted_harmonics(basis, pairs, np.array([theta]))[0, :k]
        core = np.einsum("k,ka,kb->ab", wk * c, shifted, shifted)
        t_i = wcurve[:, None, None] * core[None]
        mats = t_i @ template.mats @ t_i
        out[i] = 0.5 * (mats + ct(mats))
    return FlowSet(grid, out), labels
