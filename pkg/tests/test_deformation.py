import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from straintomo.deformation import (DeformationField, DislocationSpec, PhantomSpec,
                                    beam_average_truth, cross_matrix, decompose,
                                    dislocation_coefficients, dislocation_displacement,
                                    dislocation_field, dislocation_gradient, layer_slices,
                                    mean_unit_norm, reassemble, sample_layer_tensors,
                                    sample_layered_phantom, skew_vector)
from straintomo.errors import NoSupportError, SingularityError
from straintomo.grid import Grid


def test_grid_centres_and_refine():
    g = Grid((2, 3, 4), (1.0, 2.0, 0.5))
    np.testing.assert_allclose(g.centre, 0, atol=1e-15)
    c = g.centres()
    np.testing.assert_allclose(c[0, 0, 0], g.origin + 0.5 * g.voxel_size)
    assert c.shape == (2, 3, 4, 3)


def test_field_neutral_off_support():
    g = Grid((2, 2, 2), 1.0)
    sup = np.zeros(g.shape, bool)
    sup[0, 0, 0] = True
    A = np.full(g.shape + (3, 3), 2.0)
    f = DeformationField(g, A, np.ones(g.shape + (3,)), sup)
    np.testing.assert_array_equal(f.A[1, 1, 1], np.eye(3))
    np.testing.assert_array_equal(f.b[1, 1, 1], 0)
    np.testing.assert_array_equal(f.A[0, 0, 0], 2.0)


def test_field_rejects_nonfinite():
    g = Grid((1, 1, 1), 1.0)
    with pytest.raises(ValueError):
        DeformationField(g, np.full((1, 1, 1, 3, 3), np.nan))


def test_sigma_zero_identity():
    f = sample_layered_phantom(PhantomSpec(1, 1, 0.0, 3), Grid((2, 2, 4), 1.0))
    np.testing.assert_array_equal(f.A, np.broadcast_to(np.eye(3), f.A.shape))


@pytest.mark.parametrize("d", [1, 2, 3])
def test_three_layers_constant_per_slab(d):
    g = Grid((3, 3, 9), 1.0)
    f = sample_layered_phantom(PhantomSpec(3, d, 0.02, 7), g)
    uniq = np.unique(f.A.reshape(-1, 9).round(15), axis=0)
    assert len(uniq) == 3
    for sl in layer_slices(9, 3):
        blk = f.A[:, :, sl]
        assert np.all(blk == blk[0, 0, 0])


def test_rank_patterns():
    P1 = sample_layer_tensors(PhantomSpec(5, 1, 0.01, 1))
    for P in P1:
        np.testing.assert_allclose(P, P[0, 0] * np.eye(3))
    P2 = sample_layer_tensors(PhantomSpec(5, 2, 0.01, 1))
    for P in P2:
        # isotropic part plus an in-plane block: no out-of-plane coupling
        assert P[2, 0] == P[2, 1] == P[0, 2] == P[1, 2] == 0
        assert P[2, 2] != 0


def test_layered_deterministic():
    g = Grid((2, 2, 6), 1.0)
    a = sample_layered_phantom(PhantomSpec(3, 3, 0.01, 11), g)
    b = sample_layered_phantom(PhantomSpec(3, 3, 0.01, 11), g)
    np.testing.assert_array_equal(a.A, b.A)
    np.testing.assert_array_equal(a.b, b.b)


@pytest.mark.parametrize("d", [1, 2, 3])
def test_mean_spectral_norm_monte_carlo(d):
    # 10^4 seeds: mean spectral norm within 3 standard errors of sigma
    sigma = 0.01
    norms = np.array([np.linalg.norm(sample_layer_tensors(PhantomSpec(1, d, sigma, s))[0], 2)
                      for s in range(10_000)])
    se = norms.std(ddof=1) / np.sqrt(len(norms))
    assert abs(norms.mean() - sigma) <= 3 * se + 2e-3 * sigma  # + MC error of the scale


def test_mean_unit_norm_d1_exact():
    assert mean_unit_norm(1) == 0.5


def test_continuity_shift_on_axis():
    g = Grid((3, 3, 12), (2.0, 2.0, 1.0))
    f = sample_layered_phantom(PhantomSpec(3, 3, 0.05, 2), g)
    z0, dz = g.origin[2], g.voxel_size[2]
    for sl_a, sl_b in zip(layer_slices(12, 3)[:-1], layer_slices(12, 3)[1:]):
        x = np.array([0.0, 0.0, z0 + sl_b.start * dz])
        ua = (f.A[0, 0, sl_a.start] - np.eye(3)) @ x + f.b[0, 0, sl_a.start]
        ub = (f.A[0, 0, sl_b.start] - np.eye(3)) @ x + f.b[0, 0, sl_b.start]
        np.testing.assert_allclose(ua, ub, atol=1e-15)


def test_dislocation_coefficients_at_phi_zero():
    spec = DislocationSpec(poisson=0.3)
    cb, cu = dislocation_coefficients(spec, 1.0, 0.0)
    assert cb == 0.0
    assert np.isclose(cu, 1 / (8 * np.pi * 0.7), rtol=1e-15)


def test_dislocation_displacement_basis_components():
    spec = DislocationSpec(poisson=0.3)
    E = spec.frame()
    x = E[0] * 1.0  # r = 1, phi = 0
    R = dislocation_displacement(spec, x)
    ub = np.cross(np.asarray(spec.line) / np.linalg.norm(spec.line), spec.burgers)
    np.testing.assert_allclose(R, ub / (8 * np.pi * 0.7), atol=1e-15)


def test_dislocation_singular_core():
    spec = DislocationSpec()
    with pytest.raises(SingularityError):
        dislocation_displacement(spec, np.zeros(3))
    with pytest.raises(SingularityError):
        dislocation_gradient(spec, np.zeros((1, 3)), 0.1)


def test_dislocation_gradient_second_order():
    # central differences converge at O(h^2): Richardson oracle with h/2
    spec = DislocationSpec()
    x = np.array([[7.0, 3.0, 11.0], [-5.0, 8.0, 2.0]])
    h = 0.2
    g1 = dislocation_gradient(spec, x, h)
    g2 = dislocation_gradient(spec, x, h / 2)
    rich = (4 * g2 - g1) / 3
    e1 = np.abs(g1 - rich).max()
    e2 = np.abs(g2 - rich).max()
    assert e2 < e1 / 3.5  # ratio ~ 4 for second order


def test_dislocation_curl_consistency():
    # d/dx_k (dR_i/dx_j) = d/dx_j (dR_i/dx_k), stencils away from the cut
    spec = DislocationSpec()
    E = spec.frame()
    h = 1e-3
    for phi, r in [(0.3, 9.0), (-1.2, 14.0), (2.0, 6.0)]:
        x = spec.centre + r * (np.cos(phi) * E[0] + np.sin(phi) * E[1]) + 2.0 * E[2]
        H = np.empty((3, 3, 3))
        for k in range(3):
            e = np.zeros(3)
            e[k] = h
            H[..., k] = (dislocation_gradient(spec, (x + e)[None], h)[0]
                         - dislocation_gradient(spec, (x - e)[None], h)[0]) / (2 * h)
        np.testing.assert_allclose(H, np.swapaxes(H, 1, 2), atol=1e-4)


def test_dislocation_field_core_mask():
    g = Grid((9, 9, 4), 2.0)
    spec = DislocationSpec(line=(0.0, 0.0, 1.0), burgers=(1.0, 0.0, 0.0), core_radius=3.0)
    f = dislocation_field(spec, g)
    r = np.hypot(g.centres()[..., 0], g.centres()[..., 1])
    np.testing.assert_array_equal(f.support, r >= 3.0)
    assert (~f.support).sum() == 4 * np.sum(r[:, :, 0] < 3.0)
    n_off = int((~f.support).sum())
    np.testing.assert_array_equal(f.A[~f.support], np.broadcast_to(np.eye(3), (n_off, 3, 3)))


def test_decompose_examples():
    s, v = decompose(np.zeros((3, 3)))
    assert np.all(s == 0) and np.all(v == 0)
    s, v = decompose(cross_matrix(np.array([1.0, 2.0, 3.0])))
    np.testing.assert_allclose(s, 0, atol=0)
    np.testing.assert_allclose(v, [1, 2, 3])
    g = Grid((1, 1, 1), 1.0)
    s, v = decompose(DeformationField(g, np.eye(3)[None, None, None]))
    assert np.all(s == 0) and np.all(v == 0)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2 ** 31 - 1))
def test_reassemble_round_trip(seed):
    F = np.random.default_rng(seed).normal(size=(4, 3, 3))
    np.testing.assert_allclose(reassemble(*decompose(F)), F, atol=1e-15)
    np.testing.assert_allclose(skew_vector(cross_matrix(skew_vector(F))), skew_vector(F),
                               atol=1e-15)


def test_beam_average_examples():
    g = Grid((1, 1, 2), 1.0)
    p = np.array([1.0, 2.0, 0.5])
    f = DeformationField.identity(g)
    np.testing.assert_allclose(beam_average_truth(f, (0, 0), p), p[:2])
    r = np.random.default_rng(0)
    A = np.eye(3) + 0.01 * r.normal(size=(1, 1, 2, 3, 3))
    f = DeformationField(g, A)
    mid = 0.5 * (A[0, 0, 0].T @ p + A[0, 0, 1].T @ p)[:2]
    np.testing.assert_allclose(beam_average_truth(f, (0, 0), p), mid, atol=1e-15)


def test_beam_average_layered_brute_force():
    g = Grid((2, 2, 15), 1.0)
    f = sample_layered_phantom(PhantomSpec(3, 3, 0.01, 4), g)
    p = np.array([1.1, -0.3, 0.0])
    oracle = sum(f.A[1, 0, k].T @ p for k in range(15)) / 15
    np.testing.assert_allclose(beam_average_truth(f, (1, 0), p), oracle[:2], atol=1e-14)


def test_beam_average_empty_column():
    g = Grid((1, 1, 2), 1.0)
    f = DeformationField(g, np.broadcast_to(np.eye(3), (1, 1, 2, 3, 3)),
                         support=np.zeros((1, 1, 2), bool))
    with pytest.raises(NoSupportError):
        beam_average_truth(f, (0, 0), np.ones(3))
