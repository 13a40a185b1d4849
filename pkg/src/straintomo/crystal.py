"""Ideal crystals in direct and reciprocal space.

A crystal is described by its reciprocal lattice and a finite list of Bragg
peaks ``p_i`` with complex weights ``w_i``.  Lattice vectors are stored as
the *rows* of a 3x3 array, i.e. ``basis[0]`` is ``a`` (or ``a*``).
"""
from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateLatticeError, ResourceLimitError

TWO_PI = 2.0 * np.pi
SILICON_A = 5.431  # Angstrom

DEFAULT_MAX_PEAKS = 200_000


def _as_basis(basis):
    basis = np.asarray(basis, dtype=float)
    if basis.shape != (3, 3):
        raise ValueError("lattice basis must be a 3x3 array of row vectors")
    if not np.all(np.isfinite(basis)):
        raise DegenerateLatticeError("lattice basis contains non-finite entries")
    return basis


def _check_volume(basis):
    vol = np.linalg.det(basis)
    scale = np.prod(np.linalg.norm(basis, axis=1))
    if scale == 0 or abs(vol) <= 1e-12 * scale:
        raise DegenerateLatticeError(
            "lattice basis is (numerically) singular: det=%g" % vol)
    return vol


@dataclass(frozen=True)
class DirectLattice:
    """Direct lattice with basis vectors ``a, b, c`` (rows, Angstrom)."""
    basis: np.ndarray

    def __post_init__(self):
        basis = _as_basis(self.basis)
        _check_volume(basis)
        object.__setattr__(self, "basis", basis)

    @classmethod
    def from_vectors(cls, a, b, c):
        return cls(np.array([a, b, c], dtype=float))

    @property
    def a(self):
        return self.basis[0]

    @property
    def b(self):
        return self.basis[1]

    @property
    def c(self):
        return self.basis[2]

    @property
    def volume(self):
        return float(np.linalg.det(self.basis))


@dataclass(frozen=True)
class ReciprocalLattice:
    """Reciprocal lattice with basis ``a*, b*, c*`` (rows, 1/Angstrom)."""
    basis: np.ndarray

    def __post_init__(self):
        basis = _as_basis(self.basis)
        _check_volume(basis)
        object.__setattr__(self, "basis", basis)

    @classmethod
    def from_vectors(cls, a_star, b_star, c_star):
        return cls(np.array([a_star, b_star, c_star], dtype=float))

    @property
    def a_star(self):
        return self.basis[0]

    @property
    def b_star(self):
        return self.basis[1]

    @property
    def c_star(self):
        return self.basis[2]

    @property
    def volume(self):
        return float(np.linalg.det(self.basis))


def _dual(basis):
    # x_i = 2pi/V * (y_j x y_k), cyclic
    vol = _check_volume(basis)
    y0, y1, y2 = basis
    return TWO_PI / vol * np.array([np.cross(y1, y2), np.cross(y2, y0), np.cross(y0, y1)])


def reciprocal_from_direct(lat):
    """Reciprocal basis satisfying ``<a_i, a*_j> = 2 pi delta_ij``."""
    return ReciprocalLattice(_dual(lat.basis))


def direct_from_reciprocal(rec):
    """Direct basis ``a = 2 pi / V  b* x c*`` (and cyclic)."""
    return DirectLattice(_dual(rec.basis))


# ---------------------------------------------------------------------------
# weight models

class UnitWeights:
    """``w = 1`` for every peak."""

    def __call__(self, p, hkl):
        return np.ones(len(p), dtype=complex)

    def __repr__(self):
        return "UnitWeights()"


class GaussianWeights:
    """Isotropic decay ``w(p) = exp(-|p|^2 / (2 s^2))``.

    Parameters
    ----------
    s : float
        Decay length in 1/Angstrom.
    """

    def __init__(self, s=3.0):
        if s <= 0:
            raise ValueError("Gaussian weight width must be positive")
        self.s = float(s)

    def __call__(self, p, hkl):
        p2 = np.sum(np.asarray(p) ** 2, axis=-1)
        return np.exp(-p2 / (2 * self.s ** 2)).astype(complex)

    def __repr__(self):
        return "GaussianWeights(s=%g)" % self.s


class TableWeights:
    """Weights looked up by integer index ``(h, k, l)``.

    Missing entries take ``default``.  The table should satisfy
    ``w(-h,-k,-l) = conj(w(h,k,l))``; this is checked on construction.
    """

    def __init__(self, table, default=0.0):
        self.table = {tuple(int(v) for v in key): complex(val) for key, val in table.items()}
        self.default = complex(default)
        if self.default.imag != 0:
            raise ValueError("default weight must be real to keep conjugate symmetry")
        for key, val in self.table.items():
            neg = tuple(-v for v in key)
            other = self.table.get(neg, self.default)
            if abs(other - np.conj(val)) > 1e-12 * max(1.0, abs(val)):
                raise ValueError("weight table violates w(-hkl) = conj(w(hkl)) at %s" % (key,))

    def __call__(self, p, hkl):
        return np.array([self.table.get(tuple(int(v) for v in row), self.default) for row in hkl],
                        dtype=complex)

    def __repr__(self):
        return "TableWeights(%d entries)" % len(self.table)


def diamond_structure_factor(hkl):
    """Diamond-cubic structure factor (conventional cell) normalized to 1 at 000.

    ``S = (1 + i^(h+k+l)) (1 + (-1)^(h+k) + (-1)^(k+l) + (-1)^(h+l)) / 8``.
    """
    hkl = np.asarray(hkl, dtype=int).reshape(-1, 3)
    h, k, l = hkl.T
    fcc = (1 + (-1.0) ** (h + k) + (-1.0) ** (k + l) + (-1.0) ** (h + l)) / 4
    basis = (1 + 1j ** ((h + k + l) % 4)) / 2
    return fcc * basis


def diamond_table(max_index, envelope=None):
    """:class:`TableWeights` for a diamond-cubic crystal.

    Parameters
    ----------
    max_index : int
        Table covers ``|h|, |k|, |l| <= max_index``.
    envelope : callable, optional
        Extra radial factor as a function of ``|hkl|`` (integer units).
    """
    r = np.arange(-max_index, max_index + 1)
    hkl = np.stack(np.meshgrid(r, r, r, indexing="ij"), -1).reshape(-1, 3)
    s = diamond_structure_factor(hkl)
    if envelope is not None:
        s = s * envelope(np.linalg.norm(hkl, axis=1))
    keep = np.abs(s) > 0
    return TableWeights({tuple(v): w for v, w in zip(hkl[keep], s[keep])})


class DiamondWeights:
    """Diamond structure factor times an optional Gaussian envelope in ``|p|``.

    Equivalent to a :class:`TableWeights` built by :func:`diamond_table`
    but without a finite index range.
    """

    def __init__(self, s=None):
        self.envelope = None if s is None else GaussianWeights(s)

    def __call__(self, p, hkl):
        w = diamond_structure_factor(hkl)
        if self.envelope is not None:
            w = w * self.envelope(p, hkl)
        return w

    def __repr__(self):
        return "DiamondWeights(envelope=%r)" % (self.envelope,)


# ---------------------------------------------------------------------------
# crystals

@dataclass(frozen=True)
class IdealCrystal:
    """Reciprocal lattice plus enumerated Bragg peaks.

    Attributes
    ----------
    reciprocal : ReciprocalLattice
    peaks : (n, 3) array
        Peak positions ``p_i`` in 1/Angstrom (single flat index ``i``).
    weights : (n,) complex array
    hkl : (n, 3) int array
        Integer indices of each peak, kept as metadata.
    cutoff : float
    """
    reciprocal: ReciprocalLattice
    peaks: np.ndarray
    weights: np.ndarray
    hkl: np.ndarray
    cutoff: float
    direct: DirectLattice = field(default=None)

    def __post_init__(self):
        if self.direct is None:
            object.__setattr__(self, "direct", direct_from_reciprocal(self.reciprocal))

    def __len__(self):
        return len(self.peaks)

    def subset(self, index):
        """Crystal restricted to the peaks selected by ``index``."""
        index = np.asarray(index)
        return IdealCrystal(self.reciprocal, self.peaks[index], self.weights[index],
                            self.hkl[index], self.cutoff, self.direct)

    def nonzero(self, tol=0.0):
        """Drop peaks whose weight magnitude is ``<= tol``."""
        return self.subset(np.flatnonzero(np.abs(self.weights) > tol))

    def find(self, hkl):
        """Flat index of the peak with integer index ``hkl``."""
        hit = np.flatnonzero(np.all(self.hkl == np.asarray(hkl, dtype=int), axis=1))
        if len(hit) == 0:
            raise KeyError("peak %s not in crystal" % (tuple(hkl),))
        return int(hit[0])


def enumerate_peaks(rec, cutoff, weight_model=None, max_peaks=DEFAULT_MAX_PEAKS):
    """All reciprocal lattice points ``h a* + k b* + l c*`` with ``|p| <= cutoff``.

    Parameters
    ----------
    rec : ReciprocalLattice
    cutoff : float
        Radius in 1/Angstrom.
    weight_model : callable, optional
        ``weight_model(p, hkl) -> complex weights``.  Defaults to
        :class:`GaussianWeights`.
    max_peaks : int
        Raise :class:`ResourceLimitError` if the enumeration would exceed this.

    Returns
    -------
    IdealCrystal
    """
    if not cutoff > 0:
        raise ValueError("cutoff must be positive")
    if weight_model is None:
        weight_model = GaussianWeights()
    B = rec.basis
    # |h| <= cutoff * |row of inv(B)^T| bounds each index exactly
    inv = np.linalg.inv(B)
    bounds = np.floor(cutoff * np.linalg.norm(inv, axis=0) + 1e-9).astype(int)
    n_box = np.prod(2 * bounds.astype(float) + 1)
    est = 4.0 / 3.0 * np.pi * cutoff ** 3 / abs(np.linalg.det(B))
    if min(n_box, est) > max_peaks:
        raise ResourceLimitError("cutoff %g gives ~%d peaks > limit %d" % (cutoff, est, max_peaks))

    hkl_rows, p_rows = [], []
    hr = np.arange(-bounds[0], bounds[0] + 1)
    kr = np.arange(-bounds[1], bounds[1] + 1)
    for l in range(-bounds[2], bounds[2] + 1):
        h, k = np.meshgrid(hr, kr, indexing="ij")
        idx = np.stack([h.ravel(), k.ravel(), np.full(h.size, l)], axis=1)
        p = idx @ B
        keep = np.linalg.norm(p, axis=1) <= cutoff * (1 + 1e-12)
        hkl_rows.append(idx[keep])
        p_rows.append(p[keep])
    hkl = np.concatenate(hkl_rows)
    if len(hkl) > max_peaks:
        raise ResourceLimitError("%d peaks exceed limit %d" % (len(hkl), max_peaks))
    p = np.concatenate(p_rows)
    # deterministic order: by |p|, then hkl lexicographically
    order = np.lexsort((hkl[:, 2], hkl[:, 1], hkl[:, 0], np.round(np.linalg.norm(p, axis=1), 10)))
    hkl, p = hkl[order], p[order]
    w = np.asarray(weight_model(p, hkl), dtype=complex)
    return IdealCrystal(rec, p, w, hkl, float(cutoff))


def rotation_to_z(direction):
    """Rotation matrix ``R`` (3x3) with ``R @ direction/|direction| = e3``.

    The rotation is about the axis ``direction x e3``; for ``direction``
    already parallel to ``+-e3`` a fixed rotation about ``e1`` is used.
    """
    d = np.asarray(direction, dtype=float)
    d = d / np.linalg.norm(d)
    z = np.array([0.0, 0.0, 1.0])
    axis = np.cross(d, z)
    s = np.linalg.norm(axis)
    c = float(d @ z)
    if s < 1e-14:
        return np.eye(3) if c > 0 else np.diag([1.0, -1.0, -1.0])
    axis /= s
    K = np.array([[0, -axis[2], axis[1]], [axis[2], 0, -axis[0]], [-axis[1], axis[0], 0]])
    return np.eye(3) + s * K + (1 - c) * K @ K


def cubic_lattice(a, orientation=(0, 0, 1)):
    """Simple cubic direct lattice with ``[uvw] = orientation`` along ``e3``."""
    R = rotation_to_z(orientation)
    return DirectLattice(a * np.eye(3) @ R.T)


def silicon(orientation="001", cutoff=6.0, weights="diamond", s=3.0, max_peaks=DEFAULT_MAX_PEAKS):
    """Silicon preset viewed down ``[001]`` or ``[011]``.

    The conventional cubic cell (``a = 5.431`` Angstrom) is rotated so the
    zone axis is along the beam (``e3``).  Peaks use conventional ``hkl``.

    Parameters
    ----------
    orientation : {"001", "011"} or 3-sequence
    cutoff : float
        Peak cutoff radius in 1/Angstrom.
    weights : {"diamond", "gaussian", "unit"} or callable
        ``"diamond"`` multiplies the diamond structure factor with a
        Gaussian envelope of width ``s``.
    """
    if isinstance(orientation, str):
        orientation = tuple(int(ch) for ch in orientation)
    if isinstance(weights, str):
        weights = {"diamond": lambda: DiamondWeights(s),
                   "gaussian": lambda: GaussianWeights(s),
                   "unit": UnitWeights}[weights]()
    rec = reciprocal_from_direct(cubic_lattice(SILICON_A, orientation))
    return enumerate_peaks(rec, cutoff, weights, max_peaks=max_peaks)
