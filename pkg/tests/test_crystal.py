import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from straintomo import crystal as xt
from straintomo.errors import DegenerateLatticeError, ResourceLimitError


def brute_force_peaks(B, cutoff, n=6):
    r = np.arange(-n, n + 1)
    hkl = np.stack(np.meshgrid(r, r, r, indexing="ij"), -1).reshape(-1, 3)
    p = hkl @ B
    return p[np.linalg.norm(p, axis=1) <= cutoff + 1e-12]


def test_cubic_reciprocal_is_two_pi_identity():
    rec = xt.reciprocal_from_direct(xt.DirectLattice(np.eye(3)))
    np.testing.assert_allclose(rec.basis, 2 * np.pi * np.eye(3), atol=1e-15)


def test_two_pi_identity_round_trip():
    d = xt.direct_from_reciprocal(xt.ReciprocalLattice(2 * np.pi * np.eye(3)))
    np.testing.assert_allclose(d.basis, np.eye(3), atol=1e-15)


def test_silicon_reciprocal_length():
    a = xt.SILICON_A
    rec = xt.reciprocal_from_direct(xt.DirectLattice(a * np.eye(3)))
    # oracle: 2 pi (b x c) / V
    b, c = np.array([0, a, 0.0]), np.array([0, 0, a])
    oracle = 2 * np.pi * np.cross(b, c) / a ** 3
    np.testing.assert_allclose(rec.a_star, oracle, rtol=1e-14)
    assert np.isclose(np.linalg.norm(rec.a_star), 2 * np.pi / a, rtol=1e-14)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2 ** 31 - 1))
def test_duality_and_round_trip(seed):
    r = np.random.default_rng(seed)
    B = r.normal(size=(3, 3)) + 2 * np.eye(3)
    if abs(np.linalg.det(B)) < 0.1:
        return
    direct = xt.DirectLattice(B)
    rec = xt.reciprocal_from_direct(direct)
    scale = np.abs(B).max() * np.abs(rec.basis).max()
    np.testing.assert_allclose(B @ rec.basis.T, 2 * np.pi * np.eye(3), atol=1e-12 * scale)
    back = xt.direct_from_reciprocal(rec)
    np.testing.assert_allclose(back.basis, B, atol=1e-12 * np.abs(B).max())


def test_degenerate_lattice_raises():
    with pytest.raises(DegenerateLatticeError):
        xt.DirectLattice(np.array([[1.0, 0, 0], [0, 1, 0], [1, 1, 0]]))
    with pytest.raises(DegenerateLatticeError):
        xt.reciprocal_from_direct(xt.DirectLattice(np.diag([1.0, 1.0, 1e-300])))


def test_enumerate_cubic_19_peaks():
    rec = xt.ReciprocalLattice(2 * np.pi * np.eye(3))
    c = xt.enumerate_peaks(rec, 2 * np.pi * 1.5, xt.UnitWeights())
    assert len(c) == 19
    n = np.sort(np.linalg.norm(c.peaks, axis=1))
    np.testing.assert_allclose(n[0], 0)
    np.testing.assert_allclose(n[1:7], 2 * np.pi)
    np.testing.assert_allclose(n[7:], 2 * np.pi * np.sqrt(2))


def test_small_cutoff_only_origin():
    rec = xt.ReciprocalLattice(2 * np.pi * np.eye(3))
    c = xt.enumerate_peaks(rec, 1.0)
    assert len(c) == 1 and np.all(c.peaks == 0)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2 ** 31 - 1), st.floats(1.0, 4.0))
def test_enumeration_matches_brute_force(seed, cutoff):
    r = np.random.default_rng(seed)
    B = 2 * np.pi / 2.5 * (np.eye(3) + 0.3 * r.uniform(-1, 1, (3, 3)))
    if abs(np.linalg.det(B)) < 1:
        return
    c = xt.enumerate_peaks(xt.ReciprocalLattice(B), cutoff, xt.UnitWeights())
    oracle = brute_force_peaks(B, cutoff, n=12)
    assert len(c) == len(oracle)
    key = lambda P: sorted(map(tuple, np.round(P, 9)))
    assert key(c.peaks) == key(oracle)
    # integer combinations of the basis, symmetric under p -> -p
    np.testing.assert_allclose(c.hkl @ B, c.peaks, atol=1e-12)
    assert key(-c.peaks) == key(c.peaks)


def test_silicon_unit_weights_rings():
    # first ring is (100)-type for the conventional cell; (110) ring present
    si = xt.silicon("001", cutoff=2.5, weights="unit")
    n = np.linalg.norm(si.peaks, axis=1)
    ring = np.unique(np.round(n[n > 0], 9))
    assert np.isclose(ring[0], 2 * np.pi / xt.SILICON_A)
    assert np.any(np.isclose(ring, 2 * np.pi * np.sqrt(2) / xt.SILICON_A))


def test_silicon_diamond_inner_rings():
    si = xt.silicon("001", cutoff=4.0)
    nz = si.subset(np.flatnonzero(np.abs(si.weights) > 0))
    inplane = nz.peaks[np.abs(nz.peaks[:, 2]) < 1e-9]
    n = np.linalg.norm(inplane, axis=1)
    assert np.isclose(n[n > 0].min(), 2 * np.pi * np.sqrt(8) / xt.SILICON_A)  # (220)
    si011 = xt.silicon("011", cutoff=4.0)
    p = si011.peaks[(np.abs(si011.weights) > 0) & (np.abs(si011.peaks[:, 2]) < 1e-9)]
    n = np.linalg.norm(p, axis=1)
    assert np.isclose(n[n > 0].min(), 2 * np.pi * np.sqrt(3) / xt.SILICON_A)  # (111)


@pytest.mark.parametrize("model", [xt.UnitWeights(), xt.GaussianWeights(2.0),
                                   xt.DiamondWeights(3.0), xt.DiamondWeights()])
def test_weights_conjugate_symmetric(model):
    c = xt.enumerate_peaks(xt.reciprocal_from_direct(xt.DirectLattice(5.431 * np.eye(3))),
                           5.0, model)
    for i in range(len(c)):
        j = c.find(-c.hkl[i])
        assert np.isclose(c.weights[j], np.conj(c.weights[i]), atol=1e-15)


def test_gaussian_weight_formula():
    w = xt.GaussianWeights(2.0)
    p = np.array([[1.0, 2.0, 0.5]])
    np.testing.assert_allclose(w(p, None), np.exp(-np.sum(p ** 2) / 8.0))


def test_table_weights_require_conjugate_symmetry():
    with pytest.raises(ValueError):
        xt.TableWeights({(1, 0, 0): 1j, (-1, 0, 0): 1j})
    t = xt.TableWeights({(1, 0, 0): 1 + 1j, (-1, 0, 0): 1 - 1j}, default=0.0)
    np.testing.assert_allclose(t(np.zeros((2, 3)), np.array([[1, 0, 0], [2, 0, 0]])), [1 + 1j, 0])


def test_diamond_structure_factor_extinctions():
    f = xt.diamond_structure_factor(np.array([[2, 0, 0], [1, 1, 1], [2, 2, 0], [1, 0, 0],
                                              [2, 1, 0], [4, 0, 0]]))
    assert f[0] == 0 and f[3] == 0 and f[4] == 0  # (200) forbidden, mixed parity forbidden
    assert abs(f[1]) > 0 and abs(f[2]) > 0 and abs(f[5]) > 0


def test_resource_limit():
    rec = xt.ReciprocalLattice(0.1 * np.eye(3))
    with pytest.raises(ResourceLimitError):
        xt.enumerate_peaks(rec, 10.0, max_peaks=1000)


def test_orientation_puts_zone_axis_on_z():
    si = xt.silicon("011", cutoff=3.0, weights="unit")
    d = np.array([0, 1, 1]) @ si.direct.basis
    np.testing.assert_allclose(d / np.linalg.norm(d), [0, 0, 1], atol=1e-14)
