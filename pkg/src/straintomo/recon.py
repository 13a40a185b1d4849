"""TV-regularized reconstruction of displacement-gradient tensor fields.

Solves

    min_F  1/2 sum_rays a |J F - d|^2  +  beta sum_voxels h^3 |grad_h F|_Frobenius

on the specimen box rescaled to ``[-1, 1]^3`` (longest edge), where ``a`` is
the scan-pitch area element of a ray and ``h`` the voxel size, both in
normalized units.  The Frobenius norm couples the forward-difference
gradients of all nine components.  Unknowns outside the support are pinned
to zero.  The solver is the first-order primal-dual (Chambolle-Pock)
iteration with step sizes from a power-iteration estimate of the joint
operator norm.
"""
import warnings
from dataclasses import dataclass, field

import numpy as np

from .deformation import sym
from .errors import NumericalError
from .tomo import RayTransform, TensorSinogram, TensorVolume, projector


@dataclass(frozen=True)
class ReconConfig:
    """Reconstruction settings.

    beta : TV weight
    max_iters : iteration cap
    tolerance : stop when ``||x_k+1 - x_k|| <= tolerance ||x_k+1||``
    noise_seed, noise_level : used by pipelines that add noise to data
    log_every : objective evaluation interval
    """
    beta: float = 5e-5
    max_iters: int = 2000
    tolerance: float = 1e-6
    noise_seed: int = 0
    noise_level: float = 0.0
    log_every: int = 10

    def __post_init__(self):
        if not self.beta >= 0:
            raise ValueError("beta must be non-negative")
        if int(self.max_iters) < 1:
            raise ValueError("max_iters must be positive")
        if not self.tolerance >= 0 or not self.noise_level >= 0:
            raise ValueError("tolerance and noise level must be non-negative")


def add_noise(d, level, seed, thickness=None):
    """Add ``Pi_xi eta Pi_xi`` with i.i.d. Gaussian ``eta``.

    By default the standard deviation is ``level`` times the RMS entry of
    the observed clean data.  With a per-ray ``thickness`` (chord length,
    shape (T, n_u, n_v)) the noise is ``level`` in absolute deformation
    units on the beam-averaged tensor, i.e. standard deviation
    ``level * thickness`` on the line integral, so ``level = 0.01`` on a
    2 % phantom is a signal-to-noise ratio of 2.  Missing entries stay zero.
    """
    if level < 0:
        raise ValueError("noise level must be non-negative")
    out = d.copy()
    if level == 0:
        return out
    obs = d.mask
    if thickness is None:
        rms = np.sqrt(np.mean(d.data[obs] ** 2)) if np.any(obs) else 0.0
        scale = np.full(d.shape, level * rms)
    else:
        thickness = np.asarray(thickness, float)
        if thickness.shape != d.shape:
            raise ValueError("thickness map shape does not match sinogram")
        scale = level * thickness
    rng = np.random.default_rng(seed)
    eta = rng.standard_normal(d.data.shape) * scale[..., None, None]
    P = projector(d.directions)
    eta = np.einsum("tij,tuvjk,tkl->tuvil", P, eta, P, optimize=True)
    out.data = np.where(obs[..., None, None], d.data + eta, 0.0)
    return out


# ---------------------------------------------------------------------------
# discrete gradient

def grad(x, h):
    """Forward differences with Neumann boundary; (..., 3, 3) -> (3, ..., 3, 3)."""
    g = np.zeros((3,) + x.shape)
    for a in range(3):
        sl_hi = [slice(None)] * x.ndim
        sl_lo = [slice(None)] * x.ndim
        sl_hi[a] = slice(1, None)
        sl_lo[a] = slice(None, -1)
        g[a][tuple(sl_lo)] = (x[tuple(sl_hi)] - x[tuple(sl_lo)]) / h[a]
    return g


def grad_adjoint(g, h):
    """Exact adjoint of :func:`grad` (minus the divergence)."""
    x = np.zeros(g.shape[1:])
    for a in range(3):
        sl_hi = [slice(None)] * x.ndim
        sl_lo = [slice(None)] * x.ndim
        sl_hi[a] = slice(1, None)
        sl_lo[a] = slice(None, -1)
        ga = g[a] / h[a]
        x[tuple(sl_lo)] -= ga[tuple(sl_lo)]
        x[tuple(sl_hi)] += ga[tuple(sl_lo)]
    return x


def tv(x, h):
    """``sum_voxels prod(h) |grad x|_F``."""
    g = grad(x, h)
    return float(np.prod(h) * np.sqrt(np.sum(g ** 2, axis=(0, -2, -1))).sum())


# ---------------------------------------------------------------------------
# solver

@dataclass
class ReconResult:
    volume: TensorVolume
    iterations: int
    converged: bool
    history: dict = field(default_factory=dict)

    @property
    def warning(self):
        return not self.converged


class TVProblem:
    """Normalized TV least-squares problem for a sinogram and geometry."""

    def __init__(self, d, op, beta, support=None):
        self.op = op
        grid = op.grid
        self.scale = 2.0 / grid.extent.max()
        self.h = grid.voxel_size * self.scale
        self.area = (op.geom.pitch * self.scale) ** 2
        self.sqrt_a = np.sqrt(self.area)
        self.mask = d.mask[..., None, None]
        self.dw = np.where(self.mask, d.data, 0.0) * self.scale * self.sqrt_a
        self.beta = float(beta)
        self.support = (np.ones(grid.shape, bool) if support is None
                        else np.asarray(support, bool))
        self.cell = float(np.prod(self.h))

    def J(self, x):
        return np.where(self.mask, self.op.forward(x), 0.0) * (self.scale * self.sqrt_a)

    def Jt(self, y):
        x = self.op.adjoint(np.where(self.mask, y, 0.0)) * (self.scale * self.sqrt_a)
        x[~self.support] = 0.0
        return x

    def objective(self, x):
        r = self.J(x) - self.dw
        return 0.5 * float(np.sum(r ** 2)) + self.beta * tv(x, self.h)

    def residual(self, x):
        """Relative data misfit on observed entries."""
        nd = np.linalg.norm(self.dw)
        return float(np.linalg.norm(self.J(x) - self.dw) / (nd if nd > 0 else 1.0))


def _power_norm(apply, adjoint, shape, support, n_iter=40, seed=0):
    rng = np.random.default_rng(seed)
    x = rng.standard_normal(shape)
    x[~support] = 0
    x /= np.linalg.norm(x)
    s = 0.0
    for _ in range(n_iter):
        y = adjoint(apply(x))
        s = np.linalg.norm(y)
        if s == 0:
            return 0.0
        x = y / s
    return float(np.sqrt(s))


def reconstruct_tv(d, geom, grid, cfg=ReconConfig(), support=None, x0=None, op=None,
                   callback=None):
    """TV-regularized least-squares reconstruction.

    Parameters
    ----------
    d : TensorSinogram
    geom : AcquisitionGeometry
    grid : Grid
    cfg : ReconConfig
    support : bool array, optional
        Voxels allowed to be non-zero.
    x0 : array, optional
        Initial tensor field; default zero.
    op : RayTransform, optional
        Reused operator (must match ``grid`` and ``geom``).

    Returns
    -------
    ReconResult
        ``history`` holds ``iteration``, ``objective``, ``residual`` and
        ``change`` lists sampled every ``cfg.log_every`` iterations.
        ``converged`` is False (and a warning is issued) if the tolerance
        was not reached within ``cfg.max_iters``.
    """
    op = RayTransform(grid, geom) if op is None else op
    prob = TVProblem(d, op, cfg.beta, support)
    shape = grid.shape + (3, 3)
    x = np.zeros(shape) if x0 is None else np.array(x0, float)
    x[~prob.support] = 0.0
    hist = {"iteration": [], "objective": [], "residual": [], "change": []}

    nJ = _power_norm(prob.J, prob.Jt, shape, prob.support)
    use_tv = cfg.beta > 0
    if nJ == 0:
        return ReconResult(TensorVolume(grid, x), 0, True, hist)
    if use_tv:
        # balance the two blocks; ||grad|| <= 2 sqrt(sum 1/h^2)
        s = nJ / (2 * np.sqrt(np.sum(1 / prob.h ** 2)))
        mu = cfg.beta * prob.cell / s

        def K(v):
            return prob.J(v), s * grad(v, prob.h)

        def Kt(y1, y2):
            out = prob.Jt(y1) + s * grad_adjoint(y2, prob.h)
            out[~prob.support] = 0.0
            return out

        nK = _power_norm(lambda v: K(v),
                         lambda y: Kt(*y), shape, prob.support)
    else:
        nK = nJ
    tau = sigma = 0.99 / nK

    y1 = np.zeros_like(prob.dw)
    y2 = np.zeros((3,) + shape) if use_tv else None
    xbar = x.copy()
    converged = False
    k = 0
    for k in range(1, cfg.max_iters + 1):
        y1 = (y1 + sigma * (prob.J(xbar) - prob.dw)) / (1 + sigma)
        y1 = np.where(prob.mask, y1, 0.0)
        if use_tv:
            y2 = y2 + sigma * s * grad(xbar, prob.h)
            nrm = np.sqrt(np.sum(y2 ** 2, axis=(0, -2, -1)))
            y2 /= np.maximum(1.0, nrm / mu)[None, ..., None, None]
            step = prob.Jt(y1) + s * grad_adjoint(y2, prob.h)
        else:
            step = prob.Jt(y1)
        x_new = x - tau * step
        x_new[~prob.support] = 0.0
        xbar = 2 * x_new - x
        nx = np.linalg.norm(x_new)
        change = np.linalg.norm(x_new - x) / (nx if nx > 0 else 1.0)
        x = x_new
        if not np.isfinite(change):
            raise NumericalError("reconstruction diverged (non-finite iterate)")
        done = change <= cfg.tolerance or nx == 0
        if k % cfg.log_every == 0 or done or k == cfg.max_iters:
            hist["iteration"].append(k)
            hist["objective"].append(prob.objective(x))
            hist["residual"].append(prob.residual(x))
            hist["change"].append(float(change))
            if callback is not None:
                callback(k, x)
        if done:
            converged = True
            break
    if not converged:
        warnings.warn("TV reconstruction stopped at max_iters=%d before reaching tolerance %g"
                      % (cfg.max_iters, cfg.tolerance), RuntimeWarning)
    return ReconResult(TensorVolume(grid, x), k, converged, hist)


# ---------------------------------------------------------------------------
# strain and error analysis

def extract_strain(F, convention="arithmetic"):
    """Symmetric strain from a displacement-gradient field.

    ``arithmetic``: ``(F + F^T)/2``.  ``geometric``: the Biot strain
    ``sqrt((id + F)^T (id + F)) - id``, which agrees with the arithmetic
    strain to first order and vanishes for rigid rotations.

    Parameters
    ----------
    F : TensorVolume or (..., 3, 3) array
    """
    data = F.data if isinstance(F, TensorVolume) else np.asarray(F, float)
    if convention == "arithmetic":
        out = sym(data)
    elif convention == "geometric":
        G = np.eye(3) + data
        det = np.linalg.det(G)
        if np.any(np.abs(det) <= 1e-12):
            raise NumericalError("id + F is singular; geometric strain undefined")
        C = np.swapaxes(G, -1, -2) @ G
        w, V = np.linalg.eigh(C)
        U = (V * np.sqrt(np.clip(w, 0, None))[..., None, :]) @ np.swapaxes(V, -1, -2)
        out = sym(U) - np.eye(3)
    else:
        raise ValueError("convention must be 'arithmetic' or 'geometric'")
    return TensorVolume(F.grid, out) if isinstance(F, TensorVolume) else out


SYM_INDEX = ((0, 0), (1, 1), (2, 2), (0, 1), (0, 2), (1, 2))
SYM_NAMES = ("xx", "yy", "zz", "xy", "xz", "yz")
FULL_NAMES = tuple(a + b for a in "xyz" for b in "xyz")
PERCENTILES = (50, 99, 100)


@dataclass
class ErrorReport:
    """Absolute reconstruction errors.

    Attributes
    ----------
    full : (nx, ny, nz, 3, 3) absolute error of every component
    sym : (nx, ny, nz, 6) absolute error of the symmetric part (xx, yy, zz, xy, xz, yz)
    percentiles : dict ``{"full": (3, 9), "sym": (3, 6)}`` for the 50th, 99th
        percentiles and maximum over the mask
    z_profile : dict of (3, nz, 9) / (3, nz, 6) per-slice percentiles
    projection : (nx, nz) max over components, mean over y
    mask : voxels included in the statistics
    """
    full: np.ndarray
    sym: np.ndarray
    percentiles: dict
    z_profile: dict
    projection: np.ndarray
    mask: np.ndarray


def _pct(values, mask):
    v = values[mask]
    if v.size == 0:
        return np.zeros((len(PERCENTILES), values.shape[-1]))
    return np.percentile(v, PERCENTILES, axis=0)


def error_report(recon, truth, mask=None):
    """Per-component error maps, percentile tables and projections."""
    r = recon.data if isinstance(recon, TensorVolume) else np.asarray(recon)
    t = truth.data if isinstance(truth, TensorVolume) else np.asarray(truth)
    if r.shape != t.shape:
        raise ValueError("reconstruction and truth shapes differ")
    full = np.abs(r - t)
    S = sym(r - t)
    sym_err = np.abs(np.stack([S[..., i, j] for i, j in SYM_INDEX], axis=-1))
    mask = np.ones(r.shape[:3], bool) if mask is None else np.asarray(mask, bool)
    flat = full.reshape(full.shape[:3] + (9,))
    pct = {"full": _pct(flat, mask), "sym": _pct(sym_err, mask)}
    nz = r.shape[2]
    prof = {"full": np.zeros((len(PERCENTILES), nz, 9)),
            "sym": np.zeros((len(PERCENTILES), nz, 6))}
    for k in range(nz):
        prof["full"][:, k] = _pct(flat[:, :, k], mask[:, :, k])
        prof["sym"][:, k] = _pct(sym_err[:, :, k], mask[:, :, k])
    proj = flat.max(axis=-1).mean(axis=1)
    return ErrorReport(full, sym_err, pct, prof, proj, mask)
