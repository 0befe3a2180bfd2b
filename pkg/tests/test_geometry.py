"""Metric, transport, geodesic and tangent-space tests.

The distance is checked against closed forms and against an independent
Monte-Carlo oracle: the squared distance between centred Gaussian
distributions equals the expected squared displacement of the optimal
transport map.
"""

import numpy as np
import pytest

from bwflow import geometry, linalg
from bwflow.exceptions import KernelNestingError, LambdaOutOfRangeError

from test_linalg import rand_psd


def test_distance_closed_form_2x2():
    f = np.array([[2.0, 1.0], [1.0, 2.0]])
    g = np.eye(2)
    # tr F + tr G - 2 tr(F^{1/2}) = 6 - 2(sqrt(3) + 1) = (sqrt(3) - 1)^2
    assert np.isclose(geometry.bw_distance(f, g), np.sqrt(3.0) - 1.0, atol=1e-12)


def test_distance_commuting_diagonals():
    f = np.diag([1.0, 4.0, 9.0])
    g = np.diag([4.0, 1.0, 25.0])
    expect = np.sqrt((1 - 2) ** 2 + (2 - 1) ** 2 + (3 - 5) ** 2)
    assert np.isclose(geometry.bw_distance(f, g), expect, atol=1e-12)


def test_distance_monte_carlo_transport_cost():
    # squared distance = E || X - T X ||^2 for X ~ N(0, F)
    rng = np.random.default_rng(42)
    f = rand_psd(rng, 3)
    g = rand_psd(rng, 3)
    t = geometry.transport_map(f, g)
    x = rng.multivariate_normal(np.zeros(3), f, size=1_000_000)
    disp = x - x @ t.T
    mc = np.mean(np.sum(disp * disp, axis=1))
    assert np.isclose(mc, geometry.bw_distance(f, g, squared=True), rtol=5e-3)


def test_distance_axioms_random():
    rng = np.random.default_rng(0)
    for k in range(30):
        d = int(rng.integers(1, 6))
        cm = bool(k % 3 == 2)
        f = rand_psd(rng, d, rank=int(rng.integers(1, d + 1)), complex_kind=cm)
        g = rand_psd(rng, d, rank=int(rng.integers(1, d + 1)), complex_kind=cm)
        h = rand_psd(rng, d, complex_kind=cm)
        dfg = geometry.bw_distance(f, g)
        assert dfg >= 0
        # self distance is exact up to sqrt(eps) cancellation in the trace
        assert geometry.bw_distance(f, f) <= 1e-6 * (1.0 + np.trace(f).real)
        assert np.isclose(dfg, geometry.bw_distance(g, f), atol=1e-10)
        assert dfg <= geometry.bw_distance(f, h) + geometry.bw_distance(h, g) + 1e-9


def test_distance_batched_matches_loop():
    rng = np.random.default_rng(1)
    fs = np.stack([rand_psd(rng, 4) for _ in range(6)])
    g = rand_psd(rng, 4)
    batch = geometry.bw_distance(fs, g)
    loop = [geometry.bw_distance(fs[i], g) for i in range(6)]
    assert np.allclose(batch, loop)


def test_transport_pushforward_exact():
    rng = np.random.default_rng(2)
    for k in range(10):
        d = int(rng.integers(2, 7))
        f = rand_psd(rng, d, complex_kind=bool(k % 2))
        g = rand_psd(rng, d, complex_kind=bool(k % 2))
        t = geometry.transport_map(f, g)
        assert np.allclose(t, linalg.ct(t), atol=1e-10)
        assert np.allclose(t @ f @ t, g, atol=1e-8 * max(1, np.abs(g).max()))


def test_transport_identity():
    rng = np.random.default_rng(3)
    f = rand_psd(rng, 4)
    assert np.allclose(geometry.transport_map(f, f), np.eye(4), atol=1e-8)


def test_transport_scalar_oracle():
    # for scalars the map is sqrt(g / f)
    t = geometry.transport_map(np.array([[4.0]]), np.array([[9.0]]))
    assert np.isclose(t[0, 0], 1.5)


def test_transport_requires_kernel_nesting():
    f = np.diag([1.0, 0.0])
    g = np.diag([0.0, 1.0])
    with pytest.raises(KernelNestingError):
        geometry.transport_map(f, g)


def test_transport_singular_source_into_larger_range():
    # ker F contains ker G: transport exists and pushes F onto G
    f = np.diag([2.0, 0.0])
    g = np.diag([3.0, 0.0])
    t = geometry.transport_map(f, g)
    assert np.allclose(t @ f @ t, g, atol=1e-10)


def test_geodesic_endpoints_and_constant_speed():
    rng = np.random.default_rng(4)
    f0 = rand_psd(rng, 5)
    f1 = rand_psd(rng, 5)
    lams = np.linspace(0, 1, 9)
    path = geometry.geodesic(f0, f1, lams)
    assert np.allclose(path[0], f0, atol=1e-10)
    assert np.allclose(path[-1], f1, atol=1e-8)
    total = geometry.bw_distance(f0, f1)
    for j in range(8):
        step = geometry.bw_distance(path[j], path[j + 1])
        assert np.isclose(step, total / 8, rtol=1e-6)


def test_geodesic_lambda_range():
    f = np.eye(2)
    with pytest.raises(LambdaOutOfRangeError):
        geometry.geodesic(f, f, 1.5)


def test_exp_log_roundtrip():
    rng = np.random.default_rng(5)
    for k in range(10):
        d = int(rng.integers(2, 6))
        f = rand_psd(rng, d)
        g = rand_psd(rng, d)
        gamma = geometry.log_map(f, g)
        assert np.allclose(geometry.exp_map(f, gamma), g, atol=1e-8)


def test_log_map_distance_consistency():
    # || log_F(G) ||_F equals the distance
    rng = np.random.default_rng(6)
    f = rand_psd(rng, 4)
    g = rand_psd(rng, 4)
    gamma = geometry.log_map(f, g)
    norm = geometry.tangent_norm(f, gamma)
    assert np.isclose(norm, geometry.bw_distance(f, g), rtol=1e-8)


def test_tangent_inner_scalar_oracle():
    # <U, V>_F = Re tr(U F V) = 2 * 3 * 5 = 30 for scalars
    val = geometry.tangent_inner(
        np.array([[3.0]]), np.array([[2.0]]), np.array([[5.0]])
    )
    assert np.isclose(val, 30.0)


def test_embed_scalar_oracle():
    # embedding multiplies by F^{1/2}: 3 * sqrt(4) = 6
    out = geometry.embed(np.array([[4.0]]), np.array([[3.0]]))
    assert np.isclose(out[0, 0], 6.0)


def test_embedding_isometry():
    rng = np.random.default_rng(7)
    for k in range(10):
        d = int(rng.integers(2, 6))
        f = rand_psd(rng, d, complex_kind=bool(k % 2))
        u = rng.standard_normal((d, d))
        v = rng.standard_normal((d, d))
        u = u + linalg.ct(u)
        v = v + linalg.ct(v)
        lhs = geometry.tangent_inner(f, u, v)
        rhs = geometry.hs_inner(geometry.embed(f, u), geometry.embed(f, v))
        assert np.isclose(lhs, rhs, atol=1e-10 * max(1, abs(lhs)))


def test_unembed_inverts_embed_on_range():
    rng = np.random.default_rng(8)
    f = rand_psd(rng, 4)
    u = rng.standard_normal((4, 4))
    u = u + u.T
    assert np.allclose(geometry.unembed(f, geometry.embed(f, u)), u, atol=1e-9)


def test_squared_flag():
    rng = np.random.default_rng(9)
    f, g = rand_psd(rng, 3), rand_psd(rng, 3)
    assert np.isclose(
        geometry.bw_distance(f, g, squared=True), geometry.bw_distance(f, g) ** 2
    )
