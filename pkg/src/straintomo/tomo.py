"""Transverse and longitudinal ray transforms on voxel tensor fields.

The transverse ray transform (TRT) of a tensor field ``F`` is

    JF(xi, x) = Pi_xi  int F(x + t xi) dt  Pi_xi,   Pi_xi = id - xi xi^T,

and the longitudinal ray transform (LRT) of a vector field ``f`` is
``int <f(x + t xi), xi> dt``.  Both are discretized with trilinear
interpolation at uniform steps, and the adjoint is the exact transpose of
the same quadrature.
"""
from dataclasses import dataclass, field
from itertools import product
from math import gcd

import numpy as np

from . import _raykernels as rk
from .deformation import cross_matrix
from .grid import Grid


# ---------------------------------------------------------------------------
# containers

@dataclass
class TensorVolume:
    """3x3 tensor per voxel: ``data`` has shape (nx, ny, nz, 3, 3)."""
    grid: Grid
    data: np.ndarray

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=float)
        if self.data.shape != self.grid.shape + (3, 3):
            raise ValueError("tensor volume shape %s does not match grid %s"
                             % (self.data.shape, self.grid.shape))

    def transpose(self):
        return TensorVolume(self.grid, np.swapaxes(self.data, -1, -2).copy())


@dataclass
class VectorVolume:
    """3-vector per voxel: ``data`` has shape (nx, ny, nz, 3)."""
    grid: Grid
    data: np.ndarray

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=float)
        if self.data.shape != self.grid.shape + (3,):
            raise ValueError("vector volume shape %s does not match grid %s"
                             % (self.data.shape, self.grid.shape))


def in_plane_frame(xi):
    """Deterministic orthonormal ``(e_u, e_v)`` orthogonal to ``xi``.

    Gram-Schmidt of ``e1`` against ``xi`` (``e2`` if ``xi`` is too close to
    ``e1``); ``e_v = xi x e_u`` so ``(e_u, e_v, xi)`` is right-handed.
    ``xi = e3`` gives ``(e1, e2)``.
    """
    xi = np.asarray(xi, float)
    xi = xi / np.linalg.norm(xi)
    for e in np.eye(3)[:2]:
        eu = e - (e @ xi) * xi
        n = np.linalg.norm(eu)
        if n > 1e-6:
            eu = eu / n
            break
    ev = np.cross(xi, eu)
    return np.array([eu, ev])


def projector(xi):
    """``Pi_xi = id - xi xi^T / |xi|^2`` (broadcasts over leading axes)."""
    xi = np.asarray(xi, float)
    n2 = np.sum(xi * xi, axis=-1)[..., None, None]
    return np.eye(3) - xi[..., :, None] * xi[..., None, :] / n2


@dataclass
class AcquisitionGeometry:
    """Tilt directions with in-plane frames and a scan grid per tilt.

    Ray ``(t, iu, iv)`` passes through
    ``centre + u_iu e_u + v_iv e_v`` with direction ``xi_t`` where
    ``u_i = (i - (n_u - 1)/2) * pitch``.

    Attributes
    ----------
    directions : (T, 3) unit vectors
    frames : (T, 2, 3) rows ``e_u, e_v``
    n_u, n_v : int
    pitch : float, Angstrom
    tilt_limit : float, radians
    centre : (3,) array
    hkl : (T, 3) int array or None
        Zone-axis indices when built from a crystal.
    """
    directions: np.ndarray
    frames: np.ndarray
    n_u: int
    n_v: int
    pitch: float
    tilt_limit: float = np.pi / 2
    centre: np.ndarray = None
    hkl: np.ndarray = None

    def __post_init__(self):
        self.directions = np.atleast_2d(np.asarray(self.directions, float))
        self.frames = np.asarray(self.frames, float).reshape(-1, 2, 3)
        if len(self.frames) != len(self.directions):
            raise ValueError("one frame per direction required")
        self.centre = np.zeros(3) if self.centre is None else np.asarray(self.centre, float)
        self.n_u, self.n_v = int(self.n_u), int(self.n_v)
        if not np.allclose(np.linalg.norm(self.directions, axis=1), 1, atol=1e-12):
            raise ValueError("tilt directions must be unit vectors")
        for xi, fr in zip(self.directions, self.frames):
            Q = np.vstack([fr, xi])
            if not np.allclose(Q @ Q.T, np.eye(3), atol=1e-10):
                raise ValueError("tilt frame is not orthonormal and orthogonal to xi")
        cosang = np.clip(self.directions[:, 2], -1, 1)
        if np.any(np.arccos(np.abs(cosang)) > self.tilt_limit + 1e-9):
            raise ValueError("a tilt lies outside the tilt limit")

    @classmethod
    def from_directions(cls, directions, n_u, n_v, pitch, tilt_limit=np.pi / 2, centre=None,
                        hkl=None):
        directions = np.atleast_2d(np.asarray(directions, float))
        directions = directions / np.linalg.norm(directions, axis=1, keepdims=True)
        frames = np.array([in_plane_frame(x) for x in directions])
        return cls(directions, frames, n_u, n_v, pitch, tilt_limit, centre, hkl)

    @property
    def n_tilts(self):
        return len(self.directions)

    @property
    def sino_shape(self):
        return (self.n_tilts, self.n_u, self.n_v)

    def scan_offsets(self):
        u = (np.arange(self.n_u) - (self.n_u - 1) / 2) * self.pitch
        v = (np.arange(self.n_v) - (self.n_v - 1) / 2) * self.pitch
        return u, v

    def rays(self):
        """Ray start points and directions, each (T * n_u * n_v, 3)."""
        u, v = self.scan_offsets()
        U, V = np.meshgrid(u, v, indexing="ij")
        starts = (self.centre + U[None, :, :, None] * self.frames[:, None, None, 0]
                  + V[None, :, :, None] * self.frames[:, None, None, 1])
        dirs = np.broadcast_to(self.directions[:, None, None, :], starts.shape)
        return starts.reshape(-1, 3).copy(), dirs.reshape(-1, 3).copy()

    def projectors(self):
        return projector(self.directions)

    def stereographic(self):
        return stereographic(self.directions)


@dataclass
class TensorSinogram:
    """Per-ray 3x3 measurements with a missing-data mask.

    data : (T, n_u, n_v, 3, 3); mask : (T, n_u, n_v) bool, True = observed;
    directions : (T, 3)
    """
    data: np.ndarray
    mask: np.ndarray = None
    directions: np.ndarray = None

    def __post_init__(self):
        self.data = np.asarray(self.data, float)
        if self.data.ndim != 5 or self.data.shape[-2:] != (3, 3):
            raise ValueError("sinogram data must have shape (T, n_u, n_v, 3, 3)")
        self.mask = (np.ones(self.data.shape[:3], bool) if self.mask is None
                     else np.asarray(self.mask, bool))
        if self.mask.shape != self.data.shape[:3]:
            raise ValueError("mask shape does not match sinogram")
        if self.directions is not None:
            self.directions = np.asarray(self.directions, float).reshape(-1, 3)
            if len(self.directions) != self.data.shape[0]:
                raise ValueError("one direction per tilt required")

    @property
    def shape(self):
        return self.data.shape[:3]

    def range_residual(self):
        """Largest ``|m xi|`` or ``|xi^T m|`` over all entries."""
        xi = self.directions
        right = np.einsum("tuvij,tj->tuvi", self.data, xi)
        left = np.einsum("ti,tuvij->tuvj", xi, self.data)
        return float(max(np.abs(right).max(initial=0), np.abs(left).max(initial=0)))

    def copy(self):
        return TensorSinogram(self.data.copy(), self.mask.copy(),
                              None if self.directions is None else self.directions.copy())


# ---------------------------------------------------------------------------
# operators

class RayTransform:
    """Trilinear line-integral operator for a grid and acquisition geometry.

    Parameters
    ----------
    grid : Grid
    geom : AcquisitionGeometry
    step : float, optional
        Quadrature step along rays; default half the smallest voxel edge.
        Sample points sit at ``(k + 1/2) step`` from each ray's start point.
    """

    def __init__(self, grid, geom, step=None):
        self.grid = grid
        self.geom = geom
        self.step = float(grid.voxel_size.min() / 2 if step is None else step)
        self.starts, self.dirs = geom.rays()
        self.P = geom.projectors()
        self._args = (np.ascontiguousarray(grid.origin), np.ascontiguousarray(grid.voxel_size))

    # scalar / multi-component line integrals
    def integrate(self, vol):
        """``vol`` (nx, ny, nz, ...) -> (T, n_u, n_v, ...) line integrals."""
        vol = np.asarray(vol, float)
        tail = vol.shape[3:]
        flat = np.ascontiguousarray(vol.reshape(self.grid.shape + (-1,)))
        out = rk.ray_integrate(flat, *self._args, self.starts, self.dirs, self.step)
        return out.reshape(self.geom.sino_shape + tail)

    def backproject(self, data):
        """Exact transpose of :meth:`integrate`."""
        data = np.asarray(data, float)
        if data.shape[:3] != self.geom.sino_shape:
            raise ValueError("data shape %s does not match geometry %s"
                             % (data.shape[:3], self.geom.sino_shape))
        tail = data.shape[3:]
        flat = np.ascontiguousarray(data.reshape(len(self.starts), -1))
        shape = np.array(self.grid.shape, dtype=np.int64)
        out = rk.ray_backproject(flat, shape, *self._args, self.starts, self.dirs, self.step)
        return out.reshape(self.grid.shape + tail)

    # TRT
    def forward(self, F):
        """TRT of a (nx, ny, nz, 3, 3) array -> (T, n_u, n_v, 3, 3)."""
        G = self.integrate(F)
        return np.einsum("tij,tuvjk,tkl->tuvil", self.P, G, self.P, optimize=True)

    def adjoint(self, d):
        """Adjoint TRT of a (T, n_u, n_v, 3, 3) array."""
        PdP = np.einsum("tij,tuvjk,tkl->tuvil", self.P, np.asarray(d, float), self.P,
                        optimize=True)
        return self.backproject(PdP)

    def lrt(self, f):
        """LRT of a (nx, ny, nz, 3) array -> (T, n_u, n_v)."""
        g = self.integrate(f)
        return np.einsum("tuvi,ti->tuv", g, self.geom.directions)

    def norm_estimate(self, n_iter=30, seed=0):
        """Operator norm of the TRT by power iteration."""
        rng = np.random.default_rng(seed)
        x = rng.standard_normal(self.grid.shape + (3, 3))
        x /= np.linalg.norm(x)
        s = 0.0
        for _ in range(n_iter):
            y = self.adjoint(self.forward(x))
            s = np.linalg.norm(y)
            if s == 0:
                return 0.0
            x = y / s
        return float(np.sqrt(s))


def trt_forward(F, geom, step=None):
    """Transverse ray transform of a :class:`TensorVolume`.

    Returns
    -------
    TensorSinogram
    """
    op = RayTransform(F.grid, geom, step)
    return TensorSinogram(op.forward(F.data), None, geom.directions)


def trt_adjoint(d, geom, grid, step=None):
    """Exact adjoint of :func:`trt_forward`; returns a :class:`TensorVolume`."""
    op = RayTransform(grid, geom, step)
    data = np.where(d.mask[..., None, None], d.data, 0.0) if isinstance(d, TensorSinogram) else d
    return TensorVolume(grid, op.adjoint(data))


def lrt_forward(f, geom, step=None):
    """Longitudinal ray transform of a :class:`VectorVolume`, shape (T, n_u, n_v)."""
    return RayTransform(f.grid, geom, step).lrt(f.data)


def gauge_field(phi, voxel_size):
    """``[grad phi]_x`` with central differences (one-sided at the boundary).

    Parameters
    ----------
    phi : (nx, ny, nz) array
    voxel_size : float or 3-sequence

    Returns
    -------
    (nx, ny, nz, 3, 3) array
    """
    vs = np.broadcast_to(np.asarray(voxel_size, float), (3,))
    g = np.stack(np.gradient(np.asarray(phi, float), *vs), axis=-1)
    return cross_matrix(g)


def chord_lengths(support, grid, geom, step=None):
    """Ray integrals of the support indicator, (T, n_u, n_v)."""
    return RayTransform(grid, geom, step).integrate(np.asarray(support, float))


def thickness_rescale(avg, thickness):
    """Convert beam-averaged tensors to line integrals.

    Parameters
    ----------
    avg : TensorSinogram
    thickness : (T, n_u, n_v) array
        Chord length of each ray through the specimen.

    Returns
    -------
    TensorSinogram
        ``thickness * avg``; rays with zero thickness are flagged missing.
    """
    thickness = np.asarray(thickness, float)
    if thickness.shape != avg.shape:
        raise ValueError("thickness map shape does not match sinogram")
    if np.any(thickness < 0):
        raise ValueError("thickness must be non-negative")
    mask = avg.mask & (thickness > 0)
    data = np.where(mask[..., None, None], avg.data * thickness[..., None, None], 0.0)
    return TensorSinogram(data, mask, avg.directions)


# ---------------------------------------------------------------------------
# acquisition geometries

def stereographic(directions):
    """Pole-figure coordinates of tilt directions.

    A tilt direction is a line, so each is first replaced by its
    representative with ``z <= 0`` and then mapped by
    ``(x/(1-z), y/(1-z))``; ``+-e3`` maps to the origin and a tilt of
    angle ``theta`` lands at radius ``tan(theta/2)``.
    """
    d = np.atleast_2d(np.asarray(directions, float))
    d = d / np.linalg.norm(d, axis=1, keepdims=True)
    d = np.where(d[:, 2:3] > 0, -d, d)
    return d[:, :2] / (1 - d[:, 2:3])


def _canonical_sign(v):
    # lines through the origin: make z positive (or first non-zero entry)
    for c in (v[2], v[1], v[0]):
        if abs(c) > 1e-12:
            return v if c > 0 else -v
    return v


def zolz_peaks(crystal, xi, tol=1e-9):
    """Nonzero, nonvanishing-weight peaks orthogonal to ``xi``."""
    p = crystal.peaks
    n = np.linalg.norm(p, axis=1)
    keep = (n > 0) & (np.abs(p @ xi) <= tol * np.maximum(n, 1)) & (np.abs(crystal.weights) > 0)
    return p[keep]


def has_two_noncolinear(points, tol=1e-9):
    if len(points) < 2:
        return False
    q = points / np.linalg.norm(points, axis=1, keepdims=True)
    return bool(np.linalg.matrix_rank(q, tol=tol) >= 2)


def zone_axes(direct_basis, tilt_limit, max_index, norm="max"):
    """Zone-axis directions ``[uvw]`` within ``tilt_limit`` of ``e3``.

    Parameters
    ----------
    direct_basis : (3, 3) rows ``a, b, c``
    tilt_limit : radians
    max_index : int
        Bound on the integer indices.
    norm : {"max", "l1", "l2"}
        Norm used for the index bound ``||(u, v, w)|| <= max_index``.

    Returns
    -------
    directions : (n, 3) unit vectors, sorted by tilt then azimuth
    hkl : (n, 3) primitive integer indices
    """
    r = range(-max_index, max_index + 1)
    seen = {}
    for uvw in product(r, r, r):
        if uvw == (0, 0, 0) or gcd(gcd(abs(uvw[0]), abs(uvw[1])), abs(uvw[2])) != 1:
            continue
        idx = np.array(uvw)
        size = {"max": np.abs(idx).max(), "l1": np.abs(idx).sum(),
                "l2": np.sqrt((idx ** 2).sum())}[norm]
        if size > max_index + 1e-12:
            continue
        v = idx @ direct_basis
        v = v / np.linalg.norm(v)
        if np.arccos(np.clip(abs(v[2]), -1, 1)) > tilt_limit + 1e-9:
            continue
        v = _canonical_sign(v)
        key = tuple(np.round(v, 9))
        if key not in seen:
            seen[key] = (v, tuple(int(c) for c in (idx if (idx @ direct_basis) @ v > 0 else -idx)))
    if not seen:
        return np.zeros((0, 3)), np.zeros((0, 3), int)
    vals = list(seen.values())
    dirs = np.array([v for v, _ in vals])
    hkl = np.array([h for _, h in vals])
    tilt = np.round(np.arccos(np.clip(dirs[:, 2], -1, 1)), 9)
    azim = np.round(np.mod(np.arctan2(dirs[:, 1], dirs[:, 0]), 2 * np.pi), 9)
    order = np.lexsort((azim, tilt))
    return dirs[order], hkl[order]


def zone_axis_geometry(crystal, tilt_limit, max_index, scan, norm="max", require_disks=True):
    """Acquisition geometry of zone axes reachable within ``tilt_limit``.

    Parameters
    ----------
    crystal : IdealCrystal
    tilt_limit : float, radians (<= pi/2)
    max_index : int
    scan : (n_u, n_v, pitch) or (n_u, n_v, pitch, centre)
    norm : index-bound norm, see :func:`zone_axes`
    require_disks : bool
        Keep only axes whose zero-order Laue zone contains at least two
        non-colinear peaks of ``crystal`` (needed to recover a 2x2 tensor).
    """
    if not 0 <= tilt_limit <= np.pi / 2 + 1e-12:
        raise ValueError("tilt limit must lie in [0, pi/2]")
    dirs, hkl = zone_axes(crystal.direct.basis, tilt_limit, max_index, norm)
    if require_disks and len(dirs):
        keep = np.array([has_two_noncolinear(zolz_peaks(crystal, x)) for x in dirs])
        dirs, hkl = dirs[keep], hkl[keep]
    n_u, n_v, pitch = scan[:3]
    centre = scan[3] if len(scan) > 3 else None
    return AcquisitionGeometry.from_directions(dirs, n_u, n_v, pitch, tilt_limit, centre, hkl)


def sphere_directions(n, hemisphere=True):
    """Near-uniform Fibonacci directions (upper hemisphere by default)."""
    k = np.arange(n) + 0.5
    z = 1 - k / n if hemisphere else 1 - 2 * k / n
    phi = np.pi * (1 + 5 ** 0.5) * k
    s = np.sqrt(np.clip(1 - z * z, 0, None))
    return np.stack([s * np.cos(phi), s * np.sin(phi), z], axis=1)


def sphere_geometry(n, n_u, n_v, pitch, centre=None):
    """Dense full-sphere (as lines) geometry for null-space studies."""
    return AcquisitionGeometry.from_directions(sphere_directions(n), n_u, n_v, pitch,
                                               np.pi / 2, centre)
