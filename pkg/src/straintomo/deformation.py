"""Displacement-gradient fields: layered phantoms, dislocations, decompositions.

A deformed crystal is ``u'(x) = u(x + R(x))``; inside voxel ``j`` this is
approximated by the affine map ``u(A_j x + b_j)`` with ``A_j = id + grad R``.
"""
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from .errors import NoSupportError, SingularityError
from .grid import Grid

GAMMA = np.array([[1.0, 0.0], [0.0, 1.0], [0.0, 0.0]])  # 3x2, projects onto the detector plane


@dataclass
class DeformationField:
    """Per-voxel affine maps ``x -> A_j x + b_j`` on a voxel grid.

    Attributes
    ----------
    grid : Grid
    A : (nx, ny, nz, 3, 3) array
    b : (nx, ny, nz, 3) array
        Angstrom.
    support : (nx, ny, nz) bool array
    """
    grid: Grid
    A: np.ndarray
    b: np.ndarray = None
    support: np.ndarray = None

    def __post_init__(self):
        shape = self.grid.shape
        self.A = np.array(self.A, dtype=float)
        if self.A.shape != shape + (3, 3):
            raise ValueError("A must have shape %s" % (shape + (3, 3),))
        self.b = np.zeros(shape + (3,)) if self.b is None else np.array(self.b, dtype=float)
        if self.b.shape != shape + (3,):
            raise ValueError("b must have shape %s" % (shape + (3,),))
        self.support = (np.ones(shape, dtype=bool) if self.support is None
                        else np.array(self.support, dtype=bool))
        if self.support.shape != shape:
            raise ValueError("support mask must have shape %s" % (shape,))
        if not (np.all(np.isfinite(self.A)) and np.all(np.isfinite(self.b))):
            raise ValueError("deformation field must be finite")
        # outside the support the crystal is absent: store the neutral map
        self.A[~self.support] = np.eye(3)
        self.b[~self.support] = 0.0

    @property
    def shape(self):
        return self.grid.shape

    @property
    def positions(self):
        """Voxel centres ``beta_j`` (nx, ny, nz, 3)."""
        return self.grid.centres()

    @property
    def gradient(self):
        """``A - id`` per voxel, zero off-support."""
        return self.A - np.eye(3)

    @classmethod
    def identity(cls, grid, support=None):
        A = np.broadcast_to(np.eye(3), grid.shape + (3, 3)).copy()
        return cls(grid, A, None, support)


# ---------------------------------------------------------------------------
# layered phantoms

@dataclass(frozen=True)
class PhantomSpec:
    """Random layered phantom parameters.

    L : number of layers stacked along z
    d : deformation rank (1 isotropic scaling, 2 adds in-plane
        rotation/shear, 3 generic)
    sigma : ensemble-mean spectral norm of ``A - id``
    seed : RNG seed
    """
    L: int = 1
    d: int = 3
    sigma: float = 0.01
    seed: int = 0

    def __post_init__(self):
        if int(self.L) < 1:
            raise ValueError("L must be at least 1")
        if self.d not in (1, 2, 3):
            raise ValueError("d must be 1, 2 or 3")
        if not self.sigma >= 0:
            raise ValueError("sigma must be non-negative")


def _unit_perturbation(rng, d, n=None):
    """Draw rank-``d`` patterned perturbations with i.i.d. U(-1,1) entries."""
    size = () if n is None else (n,)
    P = np.zeros(size + (3, 3))
    if d == 1:
        P[...] = rng.uniform(-1, 1, size)[..., None, None] * np.eye(3)
    elif d == 2:
        s = rng.uniform(-1, 1, size)
        P[...] = s[..., None, None] * np.eye(3)
        P[..., :2, :2] += rng.uniform(-1, 1, size + (2, 2))
    else:
        P[...] = rng.uniform(-1, 1, size + (3, 3))
    return P


@lru_cache(maxsize=None)
def mean_unit_norm(d, n_samples=400_000):
    """Ensemble mean of ``||P||_2`` for the unit-scale rank-``d`` pattern.

    ``d = 1`` is exact (``E|U(-1,1)| = 1/2``); otherwise a fixed-seed Monte
    Carlo estimate with relative error around ``1e-3``.
    """
    if d == 1:
        return 0.5
    rng = np.random.default_rng(12345 + d)
    P = _unit_perturbation(rng, d, n_samples)
    return float(np.mean(np.linalg.norm(P, ord=2, axis=(-2, -1))))


def layer_slices(nz, L):
    """Split ``range(nz)`` into ``L`` near-equal contiguous slabs."""
    if L > nz:
        raise ValueError("cannot split %d z-voxels into %d layers" % (nz, L))
    edges = np.linspace(0, nz, L + 1).round().astype(int)
    return [slice(edges[i], edges[i + 1]) for i in range(L)]


def sample_layer_tensors(spec):
    """The ``L`` random matrices ``A_l - id`` of a phantom, shape (L, 3, 3)."""
    rng = np.random.default_rng(spec.seed)
    P = _unit_perturbation(rng, spec.d, spec.L)
    return P * (spec.sigma / mean_unit_norm(spec.d))


def sample_layered_phantom(spec, grid, shift="continuity", support=None):
    """Random piecewise-affine phantom with layers stacked along z.

    Parameters
    ----------
    spec : PhantomSpec
    grid : Grid
    shift : {"continuity", "zero"}
        ``"zero"`` sets every ``b_j = 0``.  ``"continuity"`` chooses ``b``
        per layer so the displacement ``(A - id) x + b`` is continuous
        across layer interfaces along the grid's central z-axis, with zero
        displacement at the centre of the first layer.
    support : bool array, optional

    Returns
    -------
    DeformationField
    """
    if shift not in ("continuity", "zero"):
        raise ValueError("shift must be 'continuity' or 'zero'")
    P = sample_layer_tensors(spec)
    slabs = layer_slices(grid.shape[2], spec.L)
    A = np.empty(grid.shape + (3, 3))
    b = np.zeros(grid.shape + (3,))
    axis_xy = grid.centre[:2]
    z0 = grid.origin[2]
    dz = grid.voxel_size[2]
    prev = None
    for l, sl in enumerate(slabs):
        A[:, :, sl] = np.eye(3) + P[l]
        if shift == "continuity":
            if prev is None:
                anchor = np.r_[axis_xy, z0 + 0.5 * (sl.start + sl.stop) * dz]
                bl = -P[l] @ anchor
            else:
                anchor = np.r_[axis_xy, z0 + sl.start * dz]
                bl = (P[l - 1] - P[l]) @ anchor + prev
            b[:, :, sl] = bl
            prev = bl
    return DeformationField(grid, A, b, support)


# ---------------------------------------------------------------------------
# dislocation phantom

@dataclass(frozen=True)
class DislocationSpec:
    """Straight dislocation.

    burgers : Burgers vector (Angstrom)
    line : line direction
    poisson : Poisson ratio in [0, 0.5)
    core_radius : voxels closer than this to the line are excluded
    centre : a point on the dislocation line
    literal : include the ``-x`` term of the displacement formula as
        written, so that ``R(x) + x`` is the elastic displacement.
    """
    burgers: tuple = tuple(np.array([1.0, 1.0, 1.0]) * 5.431 / 2)
    line: tuple = (1.0, -1.0, 0.0)
    poisson: float = 0.3
    core_radius: float = 5.0
    centre: tuple = (0.0, 0.0, 0.0)
    literal: bool = False

    def __post_init__(self):
        b = np.asarray(self.burgers, float)
        u = np.asarray(self.line, float)
        if np.linalg.norm(np.cross(u, b)) <= 1e-12 * np.linalg.norm(u) * np.linalg.norm(b):
            raise ValueError("line and Burgers vector must not be parallel")
        if not 0 <= self.poisson < 0.5:
            raise ValueError("Poisson ratio must lie in [0, 0.5)")
        if self.core_radius < 0:
            raise ValueError("core radius must be non-negative")

    def frame(self):
        """Orthonormal rows ``(e_r0, e_r90, e_line)`` of the cylindrical basis.

        Built from ``u x b``, ``(u x b) x u`` and ``u``.
        """
        b = np.asarray(self.burgers, float)
        u = np.asarray(self.line, float)
        u = u / np.linalg.norm(u)
        e1 = np.cross(u, b)
        e1 /= np.linalg.norm(e1)
        e2 = np.cross(e1, u)
        return np.array([e1, e2, u])


def _cylindrical(spec, x):
    E = spec.frame()
    y = (np.asarray(x, float) - np.asarray(spec.centre, float)) @ E.T
    r = np.hypot(y[..., 0], y[..., 1])
    phi = np.arctan2(y[..., 1], y[..., 0])  # branch cut at phi = pi
    return r, phi


def _displacement_from(spec, r, phi, x):
    nu = spec.poisson
    b = np.asarray(spec.burgers, float)
    ub = np.cross(np.asarray(spec.line, float) / np.linalg.norm(spec.line), b)
    c = 8 * np.pi * (1 - nu)
    with np.errstate(divide="ignore"):
        logr = np.log(r)
    cb = (4 * (1 - nu) * phi + np.sin(2 * phi)) / c
    cu = (2 * (1 - 2 * nu) * logr + np.cos(2 * phi)) / c
    R = cb[..., None] * b + cu[..., None] * ub
    if spec.literal:
        R = R - np.asarray(x, float)
    return R


def dislocation_coefficients(spec, r, phi):
    """Scalar coefficients of ``b`` and ``u x b`` in the displacement."""
    nu = spec.poisson
    c = 8 * np.pi * (1 - nu)
    return ((4 * (1 - nu) * phi + np.sin(2 * phi)) / c,
            (2 * (1 - 2 * nu) * np.log(r) + np.cos(2 * phi)) / c)


def dislocation_displacement(spec, x):
    """Displacement ``R(x)`` (..., 3); raises at the core line ``r = 0``."""
    x = np.asarray(x, float)
    r, phi = _cylindrical(spec, x)
    if np.any(r == 0):
        raise SingularityError("displacement evaluated on the dislocation line")
    return _displacement_from(spec, r, phi, x)


def dislocation_gradient(spec, x, h):
    """``grad R`` at points ``x`` by central differences with step ``h``.

    ``out[..., i, j] = dR_i / dx_j``.  The angle at each stencil point is
    unwrapped relative to the centre point so stencils straddling the
    branch cut see a continuous displacement.
    """
    if not h > 0:
        raise ValueError("finite-difference step must be positive")
    x = np.asarray(x, float)
    r0, phi0 = _cylindrical(spec, x)
    if np.any(r0 == 0):
        raise SingularityError("gradient evaluated on the dislocation line")
    out = np.empty(x.shape[:-1] + (3, 3))
    for j in range(3):
        e = np.zeros(3)
        e[j] = h
        vals = []
        for sgn in (1, -1):
            xs = x + sgn * e
            r, phi = _cylindrical(spec, xs)
            if np.any(r == 0):
                raise SingularityError("finite-difference stencil touches the dislocation line")
            phi = phi0 + np.angle(np.exp(1j * (phi - phi0)))
            vals.append(_displacement_from(spec, r, phi, xs))
        out[..., :, j] = (vals[0] - vals[1]) / (2 * h)
    return out


def dislocation_field(spec, grid, h=None):
    """Deformation field ``A = id + grad R`` of a straight dislocation.

    Parameters
    ----------
    spec : DislocationSpec
    grid : Grid
    h : float, optional
        Central-difference step; default is one hundredth of the smallest
        voxel edge.
    """
    if h is None:
        h = grid.voxel_size.min() / 100
    x = grid.centres()
    r, _ = _cylindrical(spec, x)
    support = r >= max(spec.core_radius, 0.0)
    support &= r > 2 * h  # stencil must stay off the singular line
    A = np.broadcast_to(np.eye(3), grid.shape + (3, 3)).copy()
    if np.any(support):
        A[support] += dislocation_gradient(spec, x[support], h)
    return DeformationField(grid, A, None, support)


# ---------------------------------------------------------------------------
# tensor algebra

def cross_matrix(v):
    """``[v]_x`` such that ``[v]_x w = v x w`` (broadcasts over leading axes)."""
    v = np.asarray(v, float)
    out = np.zeros(v.shape[:-1] + (3, 3))
    out[..., 0, 1] = -v[..., 2]
    out[..., 0, 2] = v[..., 1]
    out[..., 1, 0] = v[..., 2]
    out[..., 1, 2] = -v[..., 0]
    out[..., 2, 0] = -v[..., 1]
    out[..., 2, 1] = v[..., 0]
    return out


def skew_vector(M):
    """Vector ``f`` of the skew part: ``((M32-M23)/2, (M13-M31)/2, (M21-M12)/2)``."""
    M = np.asarray(M, float)
    return 0.5 * np.stack([M[..., 2, 1] - M[..., 1, 2],
                           M[..., 0, 2] - M[..., 2, 0],
                           M[..., 1, 0] - M[..., 0, 1]], axis=-1)


def sym(M):
    M = np.asarray(M, float)
    return 0.5 * (M + np.swapaxes(M, -1, -2))


def decompose(field_or_tensor):
    """Split ``F`` (or ``A - id`` for a field) into ``Sym(F)`` and ``f``.

    ``F = Sym(F) + [f]_x``.
    """
    if isinstance(field_or_tensor, DeformationField):
        F = field_or_tensor.gradient
    else:
        F = np.asarray(field_or_tensor, float)
    return sym(F), skew_vector(F)


def reassemble(sym_part, skew_vec):
    return np.asarray(sym_part) + cross_matrix(skew_vec)


# ---------------------------------------------------------------------------
# ground truth centres

def beam_average_truth(field, column, p):
    """Average projected peak position ``E_j gamma^T A_j^T p`` down a column.

    Parameters
    ----------
    field : DeformationField
    column : (ix, iy)
    p : 3-vector

    Returns
    -------
    (2,) array, 1/Angstrom
    """
    ix, iy = column
    mask = field.support[ix, iy]
    if not np.any(mask):
        raise NoSupportError("beam column (%d, %d) misses the support" % (ix, iy))
    At = np.swapaxes(field.A[ix, iy][mask], -1, -2)
    return (At @ np.asarray(p, float)).mean(axis=0)[:2]


def continuum_beam_average(spec, centre_xy, p, thickness, footprint=30.0, n_xy=12, n_z=64,
                           z0=0.0, h=None):
    """Beam-footprint average of ``gamma^T (id + grad R)^T p`` for a dislocation.

    Midpoint quadrature over the square ``|x - cx|, |y - cy| <= footprint/2``
    and depth ``z0 <= z <= z0 + thickness``.  Points inside the core
    exclusion radius are dropped from the average.
    """
    if h is None:
        h = 0.01
    hx = footprint / n_xy
    hz = thickness / n_z
    xs = centre_xy[0] - footprint / 2 + (np.arange(n_xy) + 0.5) * hx
    ys = centre_xy[1] - footprint / 2 + (np.arange(n_xy) + 0.5) * hx
    zs = z0 + (np.arange(n_z) + 0.5) * hz
    X = np.stack(np.meshgrid(xs, ys, zs, indexing="ij"), -1).reshape(-1, 3)
    r, _ = _cylindrical(spec, X)
    X = X[r >= max(spec.core_radius, 2 * h)]
    if len(X) == 0:
        raise NoSupportError("beam footprint lies inside the dislocation core")
    G = dislocation_gradient(spec, X, h)
    At = np.swapaxes(np.eye(3) + G, -1, -2)
    return (At @ np.asarray(p, float)).mean(axis=0)[:2]
