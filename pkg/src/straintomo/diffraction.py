"""Kinematical diffraction from deformed crystals.

Within a beam column of voxels ``j`` with affine maps ``u(A_j x + b_j)``, the
pattern on the detector is

    D(k) = | sum_{i,j} w_i T_j sinc(T_j kappa_ij / 2) e^{-i z_j kappa_ij}
                     e^{i <b_j, p_i>} f(k - gamma^T A_j^T p_i) |^2,

    kappa_ij(k) = k_z(k) - (A_j^T p_i)_z,

where ``T_j`` and ``z_j`` are the thickness and depth centre of voxel ``j``
and ``f`` is the spot shape.  Precessed patterns average intensities over
sample rotations ``A_j -> A_j R_t``.
"""
import warnings
from dataclasses import dataclass

import numpy as np
from scipy import special

from .errors import OutsideSphereError, PreconditionError
from .deformation import GAMMA

J1_ZERO = 3.8317059702075125


# ---------------------------------------------------------------------------
# optics and detector

@dataclass(frozen=True)
class Probe:
    """Aberration-free probe from a circular aperture.

    Attributes
    ----------
    wavelength : float, Angstrom
    aperture : float, 1/Angstrom
        Radius of the disk ``F[Psi_p] = 1/aperture^2`` on ``|k| < aperture``.
    radius : float, Angstrom
        Real-space probe radius used for the narrow-probe check; defaults
        to the first zero of the Airy pattern, ``3.8317 / aperture``.
    """
    wavelength: float = 0.02
    aperture: float = 2 * np.pi * 0.002 / 0.02
    radius: float = None

    def __post_init__(self):
        if not self.wavelength > 0 or not self.aperture > 0:
            raise ValueError("wavelength and aperture must be positive")
        if self.radius is None:
            object.__setattr__(self, "radius", J1_ZERO / self.aperture)

    @classmethod
    def from_mrad(cls, wavelength, semi_angle_mrad, radius=None):
        """Probe with a convergence semi-angle given in mrad."""
        return cls(wavelength, 2 * np.pi * semi_angle_mrad * 1e-3 / wavelength, radius)

    def ft(self, k):
        """``F[Psi_p](k)`` for (..., 2) arrays ``k``."""
        k2 = np.sum(np.asarray(k, float) ** 2, axis=-1)
        return np.where(k2 < self.aperture ** 2, 1.0 / self.aperture ** 2, 0.0)


@dataclass(frozen=True)
class DetectorGrid:
    """Square detector sampled at pixel centres ``-k_max + (i + 1/2) pitch``.

    The first array axis is ``k_x``, the second ``k_y``.
    """
    npix: int = 512
    k_max: float = 5.9

    def __post_init__(self):
        if int(self.npix) < 2 or not self.k_max > 0:
            raise ValueError("detector needs npix >= 2 and k_max > 0")
        object.__setattr__(self, "npix", int(self.npix))

    @property
    def pitch(self):
        return 2 * self.k_max / self.npix

    @property
    def axis(self):
        return -self.k_max + (np.arange(self.npix) + 0.5) * self.pitch

    def coordinates(self):
        kx, ky = np.meshgrid(self.axis, self.axis, indexing="ij")
        return np.stack([kx, ky], axis=-1)

    def index_of(self, k):
        """Fractional pixel index of detector coordinate ``k``."""
        return (np.asarray(k, float) + self.k_max) / self.pitch - 0.5


@dataclass(frozen=True)
class PrecessionConfig:
    """Precession semi-angle ``alpha`` (radians) and number of azimuths ``n_t``."""
    alpha: float = 0.0
    n_t: int = 32

    def __post_init__(self):
        if not self.alpha >= 0:
            raise ValueError("precession angle must be non-negative")
        n = int(self.n_t)
        if n < 1 or n & (n - 1):
            raise ValueError("n_t must be a power of two")
        object.__setattr__(self, "n_t", n)

    @classmethod
    def degrees(cls, alpha_deg, n_t=32):
        return cls(np.radians(alpha_deg), n_t)

    def rotations(self):
        """The ``n_t`` matrices ``R_t`` for ``t = 2 pi m / n_t``."""
        return np.array([precession_rotation(self.alpha, t)
                         for t in 2 * np.pi * np.arange(self.n_t) / self.n_t])


def precession_rotation(alpha, t):
    """``R_t = Rz(t)^T Rx(alpha) Rz(t)`` in the convention of the rocking model."""
    c, s = np.cos(t), np.sin(t)
    ca, sa = np.cos(alpha), np.sin(alpha)
    Zt = np.array([[c, s, 0], [-s, c, 0], [0, 0, 1.0]])
    X = np.array([[1.0, 0, 0], [0, ca, sa], [0, -sa, ca]])
    return Zt @ X @ Zt.T


@dataclass
class DiffractionPattern:
    """Intensity sampled on a :class:`DetectorGrid`; ``intensity[ix, iy]``."""
    grid: DetectorGrid
    intensity: np.ndarray

    def __post_init__(self):
        self.intensity = np.asarray(self.intensity, float)
        n = self.grid.npix
        if self.intensity.shape != (n, n):
            raise ValueError("intensity must be %dx%d" % (n, n))
        if not np.all(np.isfinite(self.intensity)) or np.any(self.intensity < 0):
            raise ValueError("intensity must be finite and non-negative")

    @property
    def total(self):
        return float(self.intensity.sum() * self.grid.pitch ** 2)


def ewald_kz(k, wavelength):
    """Sag of the Ewald sphere ``2pi/lam - sqrt(4pi^2/lam^2 - |k|^2)``.

    ``k`` is (..., 2) or a scalar magnitude.
    """
    k = np.asarray(k, float)
    k2 = k * k if k.ndim == 0 else np.sum(k * k, axis=-1)
    R = 2 * np.pi / wavelength
    if np.any(k2 > R * R * (1 + 1e-15)):
        raise OutsideSphereError("|k| exceeds the Ewald sphere radius 2pi/lambda")
    # k2 / (R + sqrt(R^2 - k2)) avoids cancellation for small |k|
    return k2 / (R + np.sqrt(np.maximum(R * R - k2, 0.0)))


def box_ft(kappa, T):
    """Fourier transform of a centred box of width ``T``: ``T sinc(T kappa / 2)``."""
    return T * np.sinc(np.asarray(kappa) * T / (2 * np.pi))


# ---------------------------------------------------------------------------
# spot shape

class SpotShape:
    """Radially tabulated, even spot profile ``f(|k|)``; zero beyond ``support``."""

    def __init__(self, k, values, support):
        self.k = np.asarray(k, float)
        self.values = np.asarray(values, float)
        self.support = float(support)

    def __call__(self, k):
        """Evaluate at (..., 2) detector offsets."""
        r = np.sqrt(np.sum(np.asarray(k, float) ** 2, axis=-1))
        return self.radial(r)

    def radial(self, r):
        return np.interp(r, self.k, self.values, right=0.0)


def disk_spot(probe, n_table=4096):
    """Hard-edged ``F[Psi_p]`` as a :class:`SpotShape` (infinite column)."""
    k = np.linspace(0, probe.aperture, n_table)
    # np.interp is linear; keep the edge sharp by ending exactly at the aperture
    vals = np.full(n_table, 1.0 / probe.aperture ** 2)
    k = np.r_[k, np.nextafter(probe.aperture, np.inf)]
    vals = np.r_[vals, 0.0]
    return SpotShape(k, vals, probe.aperture)


def spot_shape(probe, rho, n_table=1024, support_factor=4 * np.pi, samples_per_period=24):
    """Spot profile of the probe truncated to a circular column of diameter ``rho``.

    ``f(k) = FT2[Psi_p 1_{|x| < rho/2}](k) = (1/r) int_0^{rho/2} J1(r s) J0(k s) ds``

    with ``r`` the aperture radius, normalized so that ``f -> F[Psi_p]`` as
    ``rho -> inf``.  The table covers ``|k| <= r + support_factor / rho``
    and ``f`` is set to zero beyond.

    Parameters
    ----------
    probe : Probe
    rho : float
        Lateral column width in Angstrom.
    n_table : int
        Number of radial table entries.
    """
    if not rho > 0:
        raise ValueError("column width must be positive")
    r = probe.aperture
    support = r + support_factor / rho
    k = np.linspace(0, support, n_table)
    S = rho / 2
    ds = 2 * np.pi / (r + support) / samples_per_period
    n_s = int(np.ceil(S / ds)) + 1
    s = np.linspace(0, S, n_s)
    wts = np.full(n_s, s[1] - s[0])
    wts[[0, -1]] *= 0.5
    g = special.j1(r * s) * wts / r
    vals = np.empty(n_table)
    chunk = max(1, 2_000_000 // n_s)
    for i in range(0, n_table, chunk):
        vals[i:i + chunk] = special.j0(np.outer(k[i:i + chunk], s)) @ g
    vals[-1] = 0.0
    return SpotShape(k, vals, support)


# ---------------------------------------------------------------------------
# beam columns

@dataclass
class Column:
    """Voxels met by the beam, in the beam frame (beam along ``e3``).

    A : (J, 3, 3); b : (J, 3) shifts relative to the beam axis;
    z : (J,) depth centres; thickness : (J,); width : lateral voxel size.
    """
    A: np.ndarray
    b: np.ndarray
    z: np.ndarray
    thickness: np.ndarray
    width: float

    def __len__(self):
        return len(self.z)


def merge_runs(column):
    """Merge consecutive voxels with identical ``(A, b)`` into single slabs.

    Exact: the sum of adjacent box transforms ``T sinc e^{-i z kappa}`` is
    the transform of the union.
    """
    if len(column) < 2:
        return column
    same = np.all(column.A[1:] == column.A[:-1], axis=(1, 2)) & np.all(
        column.b[1:] == column.b[:-1], axis=1)
    contiguous = np.isclose(column.z[1:] - column.thickness[1:] / 2,
                            column.z[:-1] + column.thickness[:-1] / 2)
    starts = np.r_[0, np.flatnonzero(~(same & contiguous)) + 1]
    ends = np.r_[starts[1:], len(column)]
    lo = column.z[starts] - column.thickness[starts] / 2
    hi = column.z[ends - 1] + column.thickness[ends - 1] / 2
    return Column(column.A[starts], column.b[starts], (lo + hi) / 2, hi - lo, column.width)


def column_from_field(field, column, merge=True):
    """Extract the supported voxels of column ``(ix, iy)`` of a field.

    Shifts are re-expressed relative to the beam axis through the column
    centre, ``b' = b + (A - id) x_beam``, so the lateral voxel position drops
    out of the phase.
    """
    ix, iy = column
    grid = field.grid
    mask = field.support[ix, iy]
    xb = np.array([grid.axis(0)[ix], grid.axis(1)[iy], 0.0])
    A = field.A[ix, iy][mask]
    b = field.b[ix, iy][mask] + (A - np.eye(3)) @ xb
    z = grid.axis(2)[mask]
    T = np.full(len(z), grid.voxel_size[2])
    col = Column(A, b, z, T, float(min(grid.voxel_size[:2])))
    return merge_runs(col) if merge else col


def rotate_crystal(crystal, Q):
    """Crystal expressed in a frame with orthonormal axes ``Q`` (columns).

    Peaks ``p`` become ``Q^T p``; with ``Q = [e_u, e_v, xi]`` the beam
    direction ``xi`` becomes ``e3``.
    """
    from .crystal import IdealCrystal, ReciprocalLattice
    Q = np.asarray(Q, float)
    return IdealCrystal(ReciprocalLattice(crystal.reciprocal.basis @ Q), crystal.peaks @ Q,
                        crystal.weights, crystal.hkl, crystal.cutoff)


def column_along_ray(field, start, frame, xi, step=None, merge=True):
    """Beam-frame column for a tilted ray (nearest-voxel sampling).

    Samples the field at ``start + t xi`` with spacing ``step`` (default
    the smallest voxel edge), keeps supported samples and rotates each
    affine map into the beam frame ``Q = [e_u, e_v, xi]``:
    ``A -> Q^T A Q``, ``b -> Q^T b``.
    """
    grid = field.grid
    step = float(grid.voxel_size.min() if step is None else step)
    Q = np.column_stack([frame[0], frame[1], xi])
    half = 0.5 * np.linalg.norm(grid.extent) + step
    t = np.arange(-half, half + step / 2, step)
    pts = np.asarray(start, float) + t[:, None] * np.asarray(xi, float)
    idx = np.floor((pts - grid.origin) / grid.voxel_size).astype(int)
    inside = np.all((idx >= 0) & (idx < np.array(grid.shape)), axis=1)
    idx, pts, t = idx[inside], pts[inside], t[inside]
    sup = field.support[idx[:, 0], idx[:, 1], idx[:, 2]]
    idx, pts, t = idx[sup], pts[sup], t[sup]
    A = field.A[idx[:, 0], idx[:, 1], idx[:, 2]]
    b = field.b[idx[:, 0], idx[:, 1], idx[:, 2]]
    # shift relative to the ray: x -> x + start
    b = b + (A - np.eye(3)) @ np.asarray(start, float)
    A_beam = np.einsum("ki,nkl,lj->nij", Q, A, Q)
    b_beam = b @ Q
    col = Column(A_beam, b_beam, t, np.full(len(t), step), float(grid.voxel_size.min()))
    return merge_runs(col) if merge else col


# ---------------------------------------------------------------------------
# simulation

def _check_probe(probe, column):
    if probe.radius >= column.width:
        raise PreconditionError("probe radius %.3g A is not smaller than the column width %.3g A"
                                % (probe.radius, column.width))


def _visible_peaks(crystal, grid, spot, peaks, z_window):
    if peaks is None:
        q = crystal.peaks[:, :2]
        keep = np.all(np.abs(q) <= grid.k_max + spot.support, axis=1)
        keep &= np.abs(crystal.weights) > 0
        if z_window is not None:
            keep &= np.abs(crystal.peaks[:, 2]) <= z_window
        peaks = np.flatnonzero(keep)
    return np.asarray(peaks, dtype=int)


def _subpixel_offsets(pitch, supersample):
    s = int(supersample)
    if not 1 <= s <= 4:
        raise ValueError("supersampling factor must be between 1 and 4")
    o = (np.arange(s) + 0.5) / s - 0.5
    ox, oy = np.meshgrid(o * pitch, o * pitch, indexing="ij")
    return np.stack([ox.ravel(), oy.ravel()], axis=1)


def _amplitude(crystal, column, probe, grid, spot, peaks, rotation, kz_fn, high_energy,
               z_tol, offset):
    """Complex amplitude image for one sample rotation and subpixel offset."""
    n = grid.npix
    pitch = grid.pitch
    amp = np.zeros((n, n), dtype=complex)
    M = np.swapaxes(column.A @ rotation, -1, -2)  # (A_j R_t)^T
    for i in peaks:
        p = crystal.peaks[i]
        g = M @ p  # (J, 3)
        c = g[:, :2]
        zc = g[:, 2]
        phase = np.exp(1j * (column.b @ p)) * crystal.weights[i]
        if high_energy:
            keep = np.abs(zc) <= z_tol
            if not np.any(keep):
                continue
            c, zc, phase = c[keep], zc[keep], phase[keep] * column.thickness[keep]
        lo = grid.index_of(c.min(axis=0) - spot.support - offset)
        hi = grid.index_of(c.max(axis=0) + spot.support - offset)
        i0 = np.maximum(np.floor(lo).astype(int), 0)
        i1 = np.minimum(np.ceil(hi).astype(int) + 1, n)
        if np.any(i1 <= i0):
            continue
        kx = grid.axis[i0[0]:i1[0]] + offset[0]
        ky = grid.axis[i0[1]:i1[1]] + offset[1]
        K = np.stack(np.meshgrid(kx, ky, indexing="ij"), axis=-1)  # (Px, Py, 2)
        d = K[None] - c[:, None, None, :]
        fvals = spot.radial(np.sqrt(np.sum(d * d, axis=-1)))  # (J, Px, Py)
        if high_energy:
            patch = np.tensordot(phase, fvals, axes=1)
        else:
            kappa = kz_fn(K)[None] - zc[:, None, None]
            T = column.thickness[:, None, None]
            wz = box_ft(kappa, T) * np.exp(-1j * column.z[:, None, None] * kappa)
            patch = np.sum(phase[:, None, None] * wz * fvals, axis=0)
        amp[i0[0]:i1[0], i0[1]:i1[1]] += patch
    return amp


def _simulate(crystal, column, probe, grid, spot, rotations, peaks, z_window, supersample,
              high_energy=False, z_tol=1e-6, flat=False):
    if isinstance(column, Column):
        col = column
    else:
        raise TypeError("column must be a Column")
    _check_probe(probe, col)
    if spot is None:
        spot = disk_spot(probe) if high_energy else spot_shape(probe, col.width)
    peaks = _visible_peaks(crystal, grid, spot, peaks, z_window)
    kz_cache = {}

    def kz_fn(K):
        if flat:
            return np.zeros(K.shape[:-1])
        key = (K.shape, float(K[0, 0, 0]), float(K[0, 0, 1]))
        if key not in kz_cache:
            kz_cache[key] = ewald_kz(K, probe.wavelength)
        return kz_cache[key]

    offsets = _subpixel_offsets(grid.pitch, supersample)
    out = np.zeros((grid.npix, grid.npix))
    for R in rotations:
        for off in offsets:
            a = _amplitude(crystal, col, probe, grid, spot, peaks, R, kz_fn, high_energy,
                           z_tol, off)
            out += a.real ** 2 + a.imag ** 2
    out /= len(rotations) * len(offsets)
    _truncation_check(crystal, col, grid, spot, peaks, rotations)
    return DiffractionPattern(grid, out)


def _truncation_check(crystal, col, grid, spot, peaks, rotations):
    if len(peaks) == 0 or len(col) == 0:
        return
    inside = np.all(np.abs(crystal.peaks[peaks, :2]) + spot.support <= grid.k_max, axis=1)
    if not np.any(inside):
        return
    M = np.swapaxes(col.A[None] @ rotations[:, None], -1, -2)
    c = np.einsum("tjab,pb->tjpa", M, crystal.peaks[peaks[inside]])[..., :2]
    if np.abs(c).max() + spot.support > grid.k_max:
        warnings.warn("detector k_max too small to contain displaced disks", RuntimeWarning)


def _as_column(field, column):
    if isinstance(column, Column):
        return column
    return column_from_field(field, column)


def simulate_pattern(crystal, field, column, probe, grid, spot=None, peaks=None, z_window=None,
                     supersample=1):
    """Unprecessed kinematical pattern of one beam column.

    Parameters
    ----------
    crystal : IdealCrystal
    field : DeformationField or None
        Ignored if ``column`` is already a :class:`Column`.
    column : (ix, iy) or Column
    probe : Probe
    grid : DetectorGrid
    spot : SpotShape, optional
        Defaults to :func:`spot_shape` for the column width.
    peaks : index array, optional
        Restrict the coherent sum to these peaks (exact away from their
        disks when disks do not overlap).
    z_window : float, optional
        Drop peaks with ``|p_z| > z_window``.
    supersample : int
        Evaluate on an ``s x s`` sub-grid per pixel and average.
    """
    col = _as_column(field, column)
    return _simulate(crystal, col, probe, grid, spot, np.eye(3)[None], peaks, z_window,
                     supersample)


def simulate_precessed(crystal, field, column, probe, grid, prec, spot=None, peaks=None,
                       z_window=None, supersample=1):
    """Precessed pattern: mean over ``n_t`` azimuths of patterns with ``A_j -> A_j R_t``."""
    col = _as_column(field, column)
    rotations = np.eye(3)[None] if prec.alpha == 0 else prec.rotations()
    return _simulate(crystal, col, probe, grid, spot, rotations, peaks, z_window, supersample)


def simulate_high_energy(crystal, field, column, probe, grid, z_tol=1e-6, spot=None, peaks=None,
                         supersample=1, damping="cutoff"):
    """Flat-Ewald limit of the kinematical pattern.

    With ``damping="cutoff"`` this is the coherent sum of ``F[Psi_p]`` disks
    for ``|(A^T p)_z| <= z_tol``, each voxel weighted by its thickness.
    With ``damping="sinc"`` only the wavelength limit is taken: every voxel
    keeps its finite-thickness factor evaluated on the flat sphere
    ``k_z = 0``, so out-of-plane strain damps a disk instead of removing it
    (``z_tol`` is then unused).
    """
    col = _as_column(field, column)
    if damping == "sinc":
        if spot is None:
            spot = disk_spot(probe)
        return _simulate(crystal, col, probe, grid, spot, np.eye(3)[None], peaks, None,
                         supersample, flat=True)
    if damping != "cutoff":
        raise ValueError("damping must be 'cutoff' or 'sinc'")
    return _simulate(crystal, col, probe, grid, spot, np.eye(3)[None], peaks, None, supersample,
                     high_energy=True, z_tol=z_tol)


# ---------------------------------------------------------------------------
# Fourier transform of an affinely deformed function

def deformed_ft(ft, A, b, K):
    """Fourier transform of ``u(A x + b)`` from that of ``u``.

    ``F[u(A. + b)](K) = det(A)^-1 e^{i <b, A^-T K>} F[u](A^-T K)``, using
    the convention ``F[u](K) = int u(x) e^{-i <K, x>} dx``.

    Parameters
    ----------
    ft : callable
        ``ft(K)`` for (..., 3) frequency arrays.
    A : (3, 3); b : (3,); K : (..., 3)
    """
    A = np.asarray(A, float)
    Ait = np.linalg.inv(A).T
    Kp = np.asarray(K, float) @ Ait.T
    return np.exp(1j * (Kp @ np.asarray(b, float))) * ft(Kp) / abs(np.linalg.det(A))
