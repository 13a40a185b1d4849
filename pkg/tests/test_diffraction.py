import warnings

import numpy as np
import pytest

from straintomo import crystal as xt
from straintomo.diffraction import (Column, DetectorGrid, PrecessionConfig, Probe, box_ft,
                                    column_from_field, disk_spot, ewald_kz, merge_runs,
                                    precession_rotation, simulate_high_energy, simulate_pattern,
                                    simulate_precessed, spot_shape)
from straintomo.deformation import PhantomSpec, sample_layered_phantom
from straintomo.errors import OutsideSphereError, PreconditionError
from straintomo.grid import Grid

PROBE = Probe.from_mrad(0.02, 2.0)


def slab(T=100.0, A=None, b=None, width=100.0):
    A = np.eye(3) if A is None else A
    b = np.zeros(3) if b is None else b
    return Column(A[None], b[None], np.zeros(1), np.array([T]), width)


def single_peak_crystal(p, w=1.0):
    rec = xt.ReciprocalLattice(np.eye(3))
    return xt.IdealCrystal(rec, np.atleast_2d(p).astype(float), np.array([w], complex),
                           np.zeros((1, 3), int), 10.0)


def test_ewald_kz_examples():
    assert ewald_kz(0.0, 0.02) == 0
    lam = 0.02
    small = lam * 25 / (4 * np.pi)
    assert np.isclose(ewald_kz(5.0, lam), small, rtol=1e-3)
    assert np.isclose(ewald_kz(5.0, lam), 0.0398, atol=5e-5)
    R = 2 * np.pi / lam
    assert np.isclose(ewald_kz(R, lam), R)
    with pytest.raises(OutsideSphereError):
        ewald_kz(1.01 * R, lam)


def test_ewald_kz_monotone():
    k = np.linspace(0, 50, 200)
    assert np.all(np.diff(ewald_kz(k[:, None], 0.02)) > 0)


def test_box_ft():
    assert box_ft(0.0, 3.0) == 3.0
    assert abs(box_ft(2 * np.pi / 3.0, 3.0)) < 1e-15  # first zero at kappa = 2 pi / T


@pytest.mark.parametrize("scale", [1e3, 1e4])
def test_spot_shape_large_column_limit(scale):
    # Parseval: ||f - F[Psi]||^2 / ||F[Psi]||^2 is the probe energy outside the
    # column, 1 - (enclosed energy) = J0(r R)^2 + J1(r R)^2 for an Airy probe
    from scipy.special import j0, j1
    r = PROBE.aperture
    rho = scale / r
    f = spot_shape(PROBE, rho, n_table=4096)
    k = np.linspace(0, f.support, 20001)
    ref = PROBE.ft(k[:, None])
    wk = k  # radial measure
    rel = np.sqrt(np.sum(wk * (f.radial(k) - ref) ** 2) / np.sum(wk * ref ** 2))
    oracle = np.sqrt(j0(r * rho / 2) ** 2 + j1(r * rho / 2) ** 2)
    assert abs(rel - oracle) <= 0.05 * oracle
    if scale == 1e4:
        assert rel <= 0.012


def test_spot_shape_even_and_supported():
    f = spot_shape(PROBE, 100.0)
    rng = np.random.default_rng(0)
    k = rng.normal(size=(1000, 2))
    assert np.max(np.abs(f(k) - f(-k))) == 0
    far = np.array([[f.support * 1.0001, 0.0], [0.0, -2 * f.support]])
    np.testing.assert_array_equal(f(far), 0)
    assert np.isclose(f.support, PROBE.aperture + 4 * np.pi / 100.0)


def test_zero_crystal_gives_zero_pattern():
    si = xt.silicon("001", cutoff=3.0)
    empty = si.subset(np.array([], int))
    grid = DetectorGrid(64, 2.0)
    pat = simulate_pattern(empty, None, slab(), PROBE, grid)
    assert np.all(pat.intensity == 0)


def test_single_peak_closed_form():
    grid = DetectorGrid(128, 3.0)
    q = np.array([grid.axis[90], grid.axis[64]])
    T, w = 120.0, 0.7
    f = spot_shape(PROBE, 100.0)
    pat = simulate_pattern(single_peak_crystal([q[0], q[1], 0.0], w), None, slab(T), PROBE,
                           grid, spot=f)
    kz = ewald_kz(q, PROBE.wavelength)
    expect = abs(w * box_ft(kz, T) * f.radial(0.0)) ** 2
    assert np.isclose(pat.intensity[90, 64], expect, rtol=1e-12)


def test_probe_wider_than_column_rejected():
    grid = DetectorGrid(64, 2.0)
    with pytest.raises(PreconditionError):
        simulate_pattern(single_peak_crystal([0, 0, 0]), None, slab(width=PROBE.radius * 0.9),
                         PROBE, grid)


def test_truncation_warning():
    grid = DetectorGrid(64, 1.4)
    c = single_peak_crystal([0.5, 0.0, 0.0])
    A = np.diag([1.5, 1.0, 1.0])
    with pytest.warns(RuntimeWarning):
        simulate_pattern(c, None, slab(A=A), PROBE, grid)


def test_silicon_001_four_fold():
    si = xt.silicon("001", cutoff=4.0)
    grid = DetectorGrid(256, 4.0)
    pat = simulate_pattern(si, None, slab(250.0), PROBE, grid, z_window=0.5)
    I = pat.intensity
    assert I.max() > 0
    np.testing.assert_allclose(np.rot90(I), I, rtol=1e-10, atol=1e-12 * I.max())


def test_alpha_zero_is_unprecessed():
    si = xt.silicon("001", cutoff=4.0)
    grid = DetectorGrid(128, 4.0)
    fld = sample_layered_phantom(PhantomSpec(3, 3, 0.01, 2), Grid((1, 1, 6), (100.0, 100.0, 40.0)))
    a = simulate_pattern(si, fld, (0, 0), PROBE, grid, z_window=0.5)
    for n_t in (1, 8):
        b = simulate_precessed(si, fld, (0, 0), PROBE, grid, PrecessionConfig(0.0, n_t),
                               z_window=0.5)
        np.testing.assert_array_equal(a.intensity, b.intensity)


def test_precession_rotation():
    alpha = np.radians(2.0)
    for t in np.linspace(0, 2 * np.pi, 7):
        R = precession_rotation(alpha, t)
        np.testing.assert_allclose(R @ R.T, np.eye(3), atol=1e-15)
        assert np.isclose(np.arccos(R[2, 2]), alpha)
    with pytest.raises(ValueError):
        PrecessionConfig(0.1, 12)


def test_precession_evens_disk_intensities():
    # integrated intensity of the disks within |q| < 3.5 is more uniform when precessed
    si = xt.silicon("011", cutoff=4.0)
    grid = DetectorGrid(256, 4.0)
    col = slab(250.0)
    I0 = simulate_precessed(si, None, col, PROBE, grid, PrecessionConfig(0.0, 1), z_window=0.5)
    I2 = simulate_precessed(si, None, col, PROBE, grid, PrecessionConfig.degrees(2.0, 32),
                            z_window=0.5)
    vis = (np.abs(si.weights) > 0) & (np.abs(si.peaks[:, 2]) < 1e-9)
    q = si.peaks[vis, :2]
    q = q[(np.linalg.norm(q, axis=1) > 0) & (np.linalg.norm(q, axis=1) < 3.5)]
    K = grid.coordinates()

    def disk_mass(I):
        return np.array([I.intensity[np.linalg.norm(K - c, axis=-1) < 0.5].sum() for c in q])

    m0, m2 = disk_mass(I0), disk_mass(I2)
    cv = lambda m: m.std() / m.mean()
    assert cv(m2) < cv(m0)


def test_rotation_equivariance():
    # rotating crystal, deformation and detector together by 90 degrees about z
    si = xt.silicon("011", cutoff=4.0)
    grid = DetectorGrid(128, 4.0)
    rng = np.random.default_rng(3)
    A = np.eye(3) + 0.01 * rng.normal(size=(3, 3))
    b = rng.normal(size=3)
    Q = np.array([[0.0, -1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 1.0]])
    rot = xt.IdealCrystal(si.reciprocal, si.peaks @ Q.T, si.weights, si.hkl, si.cutoff)
    p1 = simulate_pattern(si, None, slab(200.0, A, b), PROBE, grid, z_window=0.5)
    p2 = simulate_pattern(rot, None, slab(200.0, Q @ A @ Q.T, Q @ b), PROBE, grid, z_window=0.5)
    np.testing.assert_allclose(np.rot90(p1.intensity), p2.intensity, rtol=1e-9,
                               atol=1e-12 * p1.intensity.max())


def test_merge_runs_exact():
    si = xt.silicon("001", cutoff=4.0)
    grid = DetectorGrid(128, 4.0)
    fld = sample_layered_phantom(PhantomSpec(3, 3, 0.01, 5), Grid((1, 1, 9), (100.0, 100.0, 25.0)))
    full = column_from_field(fld, (0, 0), merge=False)
    merged = merge_runs(full)
    assert len(merged) == 3 and np.isclose(merged.thickness.sum(), 225.0)
    a = simulate_pattern(si, None, full, PROBE, grid, z_window=0.5)
    b = simulate_pattern(si, None, merged, PROBE, grid, z_window=0.5)
    np.testing.assert_allclose(a.intensity, b.intensity, rtol=1e-9, atol=1e-12 * a.intensity.max())


def test_high_energy_single_peak_is_disk():
    grid = DetectorGrid(128, 2.0)
    q = np.array([0.5, -0.25])
    T, w = 80.0, 1.3
    pat = simulate_high_energy(single_peak_crystal([q[0], q[1], 0.0], w), None, slab(T), PROBE,
                               grid)
    K = grid.coordinates()
    inside = np.linalg.norm(K - q, axis=-1) < PROBE.aperture
    expect = np.where(inside, (w * T / PROBE.aperture ** 2) ** 2, 0.0)
    edge = np.abs(np.linalg.norm(K - q, axis=-1) - PROBE.aperture) < 1e-9
    np.testing.assert_allclose(pat.intensity[~edge], expect[~edge], rtol=1e-12)


def test_high_energy_sinc_damping():
    grid = DetectorGrid(128, 2.0)
    q = np.array([0.5, -0.25])
    T = 80.0
    in_plane = single_peak_crystal([q[0], q[1], 0.0])
    a = simulate_high_energy(in_plane, None, slab(T), PROBE, grid)
    b = simulate_high_energy(in_plane, None, slab(T), PROBE, grid, damping="sinc")
    np.testing.assert_allclose(b.intensity, a.intensity, rtol=1e-12, atol=0)
    # an out-of-plane stretch damps the disk by box_ft(p_z)^2 / T^2 instead of removing it
    A = np.diag([1.0, 1.0, 1.0 + 0.01])
    tilted = single_peak_crystal([q[0], q[1], 2.0])
    cut = simulate_high_energy(tilted, None, slab(T, A), PROBE, grid)
    damp = simulate_high_energy(tilted, None, slab(T, A), PROBE, grid, damping="sinc")
    assert cut.intensity.max() == 0
    ratio = damp.intensity.max() / a.intensity.max()
    assert np.isclose(ratio, (box_ft(2.02, T) / T) ** 2, rtol=1e-12)
    with pytest.raises(ValueError):
        simulate_high_energy(in_plane, None, slab(T), PROBE, grid, damping="gauss")


def test_high_energy_limit_sweep():
    si = xt.silicon("001", cutoff=4.0)
    zolz = si.subset(np.flatnonzero((np.abs(si.peaks[:, 2]) < 1e-9) & (np.abs(si.weights) > 0)))
    grid = DetectorGrid(128, 4.0)
    spot = disk_spot(PROBE)
    gaps = []
    for lam in (0.05, 0.02, 0.01, 0.005):
        probe = Probe(lam, PROBE.aperture)
        col = slab(200.0)
        a = simulate_pattern(zolz, None, col, probe, grid, spot=spot)
        b = simulate_high_energy(zolz, None, col, probe, grid, spot=spot)
        gaps.append(np.linalg.norm(a.intensity - b.intensity) / np.linalg.norm(b.intensity))
    assert np.all(np.diff(gaps) < 0)
