"""Bragg-disk centre detection and conversion to projected deformation tensors."""
from dataclasses import dataclass

import numpy as np
from scipy import signal

from .errors import EmptyDiskError, NoDiskError, RankDeficiencyError


@dataclass
class DiskSet:
    """Detection windows around reference disk centres.

    Attributes
    ----------
    centres : (n, 2) array
        Reference centres ``q_i = gamma^T p_i`` in 1/Angstrom.
    radius : float
        Window radius ``r_bar``.
    index : (n,) int array
        Flat peak indices into the crystal.
    peaks : (n, 3) array
        The 3D peaks ``p_i``.
    """
    centres: np.ndarray
    radius: float
    index: np.ndarray = None
    peaks: np.ndarray = None

    def __post_init__(self):
        self.centres = np.atleast_2d(np.asarray(self.centres, float))
        if self.index is None:
            self.index = np.arange(len(self.centres))
        if self.peaks is None:
            self.peaks = np.column_stack([self.centres, np.zeros(len(self.centres))])
        if not self.radius > 0:
            raise ValueError("window radius must be positive")
        if len(self.centres) > 1:
            d = np.linalg.norm(self.centres[:, None] - self.centres[None], axis=-1)
            d[np.diag_indices_from(d)] = np.inf
            if d.min() <= 2 * self.radius * (1 - 1e-12):
                raise ValueError("detection windows overlap: separation %.4g <= 2 r_bar = %.4g"
                                 % (d.min(), 2 * self.radius))

    def __len__(self):
        return len(self.centres)


def inner_ring(crystal, tol=1e-9):
    """Flat indices of the smallest non-zero in-plane peaks with non-zero weight."""
    p = crystal.peaks
    n = np.linalg.norm(p, axis=1)
    cand = (n > 0) & (np.abs(p[:, 2]) <= tol * np.maximum(n, 1)) & (np.abs(crystal.weights) > 0)
    if not np.any(cand):
        raise RankDeficiencyError("crystal has no in-plane peaks")
    rmin = n[cand].min()
    idx = np.flatnonzero(cand & (n <= rmin * (1 + 1e-9)))
    ang = np.arctan2(p[idx, 1], p[idx, 0])
    return idx[np.argsort(np.round(np.mod(ang, 2 * np.pi), 12))]


def disk_set(crystal, index=None, radius=None, spot_radius=None, z_window=None):
    """Detection windows for selected peaks of ``crystal``.

    Parameters
    ----------
    crystal : IdealCrystal
    index : int array, optional
        Peaks to detect; default :func:`inner_ring`.
    radius : float, optional
        Window radius.  Default: half the minimum separation between the
        selected centres, capped so a window cannot reach the disk (radius
        ``spot_radius``) of any other visible peak.
    spot_radius : float, optional
        Disk support radius used for the cap.
    z_window : float, optional
        Only peaks with ``|p_z| <= z_window`` count as visible for the cap.
    """
    index = inner_ring(crystal) if index is None else np.asarray(index, int)
    p = crystal.peaks[index]
    q = p[:, :2]
    if radius is None:
        if len(q) > 1:
            d = np.linalg.norm(q[:, None] - q[None], axis=-1)
            d[np.diag_indices_from(d)] = np.inf
            radius = 0.5 * d.min()
        else:
            radius = np.inf
        if spot_radius is not None:
            vis = np.abs(crystal.weights) > 0
            if z_window is not None:
                vis &= np.abs(crystal.peaks[:, 2]) <= z_window
            vis[index] = False
            others = crystal.peaks[vis, :2]
            if len(others):
                dmin = np.linalg.norm(q[:, None] - others[None], axis=-1).min()
                radius = min(radius, dmin - spot_radius)
        if not np.isfinite(radius) or radius <= 0:
            raise ValueError("cannot choose a window radius; pass one explicitly")
    return DiskSet(q, float(radius), index, p)


@dataclass
class CentreMeasurement:
    """Detected centres, one row per disk.

    centres : (n, 2); mass : (n,) integrated window intensity;
    method : "com" or "registered"
    """
    centres: np.ndarray
    method: str
    mass: np.ndarray

    def __len__(self):
        return len(self.centres)


def _window(grid, centre, radius):
    """Pixel slices of the bounding box and boolean window mask."""
    lo = np.floor(grid.index_of(centre - radius)).astype(int)
    hi = np.ceil(grid.index_of(centre + radius)).astype(int) + 1
    if np.any(lo < 0) or np.any(hi > grid.npix):
        raise ValueError("detection window extends beyond the detector")
    sx, sy = slice(lo[0], hi[0]), slice(lo[1], hi[1])
    kx, ky = grid.axis[sx], grid.axis[sy]
    K = np.stack(np.meshgrid(kx, ky, indexing="ij"), axis=-1)
    mask = np.sum((K - centre) ** 2, axis=-1) < radius ** 2
    return sx, sy, K, mask


def detect_com(pattern, disks):
    """Centre of mass of the intensity inside each window ``|k - q_i| < r_bar``."""
    grid = pattern.grid
    out = np.empty((len(disks), 2))
    mass = np.empty(len(disks))
    for n, q in enumerate(disks.centres):
        sx, sy, K, mask = _window(grid, q, disks.radius)
        D = pattern.intensity[sx, sy] * mask
        m = D.sum()
        if not m > 0:
            raise EmptyDiskError("no intensity in the window around %s" % (q,))
        out[n] = np.tensordot(D, K, axes=([0, 1], [0, 1])) / m
        mass[n] = m * grid.pitch ** 2
    return CentreMeasurement(out, "com", mass)


def _loss_at(D, mask, ref_pad, pad, sx, sy, s):
    # sum over window of (D(k) - D0(k - s))^2, reference padded by `pad`
    ax, ay = sx.start + pad - s[0], sy.start + pad - s[1]
    R = ref_pad[ax:ax + D.shape[0], ay:ay + D.shape[1]]
    return float(np.sum(mask * (D - R) ** 2))


def detect_registered(pattern, reference, disks, search=None):
    """Least-squares registration of each disk against an unstrained reference.

    For each disk the integer pixel shift ``s`` minimizing
    ``sum_{|k - q_i| < r_bar} |D(k) - D0(k - s)|^2`` is found (FFT-based
    correlation over ``|s_x|, |s_y| <= search``, ties to the lowest
    lexicographic shift), then refined by a separable quadratic fit of the
    loss on its 3x3 neighbourhood.  The centre is ``q_i + s * pitch``.

    Parameters
    ----------
    pattern, reference : DiffractionPattern
        Same detector grid.
    disks : DiskSet
    search : float, optional
        Search half-width in 1/Angstrom, default ``r_bar``.
    """
    grid = pattern.grid
    if reference.grid != grid:
        raise ValueError("pattern and reference use different detector grids")
    S = int(np.ceil((disks.radius if search is None else search) / grid.pitch))
    pad = S + 1
    ref_pad = np.pad(reference.intensity, pad)
    ref2_pad = ref_pad ** 2
    out = np.empty((len(disks), 2))
    mass = np.empty(len(disks))
    for n, q in enumerate(disks.centres):
        sx, sy, K, mask = _window(grid, q, disks.radius)
        D = pattern.intensity[sx, sy]
        Dw = D * mask
        if not Dw.sum() > 0:
            raise NoDiskError("no intensity in the window around %s" % (q,))
        # reference region covering every shift in [-S, S]^2
        ax0, ay0 = sx.start + pad - S, sy.start + pad - S
        R = ref_pad[ax0:ax0 + D.shape[0] + 2 * S, ay0:ay0 + D.shape[1] + 2 * S]
        R2 = ref2_pad[ax0:ax0 + D.shape[0] + 2 * S, ay0:ay0 + D.shape[1] + 2 * S]
        cross = signal.correlate(R, Dw, mode="valid", method="fft")
        energy = signal.correlate(R2, mask.astype(float), mode="valid", method="fft")
        loss = np.sum(Dw * D) - 2 * cross + energy  # index o = S - s
        loss = loss[::-1, ::-1]  # index S + s, ascending shifts
        if np.ptp(loss) <= 1e-14 * max(abs(loss).max(), 1e-300):
            raise NoDiskError("flat registration loss around %s" % (q,))
        flat = int(np.argmin(loss))
        s = np.array(np.unravel_index(flat, loss.shape)) - S
        L0 = _loss_at(D, mask, ref_pad, pad, sx, sy, s)
        shift = s.astype(float)
        if L0 > 1e-13 * np.sum(Dw * D):
            for a in range(2):
                e = np.zeros(2, int)
                e[a] = 1
                Lm = _loss_at(D, mask, ref_pad, pad, sx, sy, s - e)
                Lp = _loss_at(D, mask, ref_pad, pad, sx, sy, s + e)
                curv = Lm - 2 * L0 + Lp
                if curv > 0:
                    shift[a] += float(np.clip(0.5 * (Lm - Lp) / curv, -0.5, 0.5))
        out[n] = q + shift * grid.pitch
        mass[n] = Dw.sum() * grid.pitch ** 2
    return CentreMeasurement(out, "registered", mass)


def detect(pattern, disks, method, reference=None, calibrate=True):
    """Detect centres with ``method`` in {"com", "registered"}.

    With ``calibrate`` (the default) centre-of-mass results are reported
    relative to the same detector applied to ``reference``:
    ``q_i + c(D) - c(D0)``.  Registration is relative by construction.
    """
    if method == "com":
        m = detect_com(pattern, disks)
        if calibrate and reference is not None:
            m0 = detect_com(reference, disks)
            m.centres = disks.centres + m.centres - m0.centres
        return m
    if method == "registered":
        if reference is None:
            raise ValueError("registration requires a reference pattern")
        return detect_registered(pattern, reference, disks)
    raise ValueError("unknown detection method %r" % (method,))


def centres_to_tensor(measurement, disks, rcond=1e-8):
    """Least-squares 2x2 ``M`` with ``c_i ~ M q_i`` over all disks.

    For exact centres ``c_i = E gamma^T A^T p_i`` of in-plane peaks this is
    ``E gamma^T A^T gamma``.

    Raises
    ------
    RankDeficiencyError
        If the reference centres do not span the plane.
    """
    C = np.asarray(getattr(measurement, "centres", measurement), float)
    Q = disks.centres
    if len(Q) < 2:
        raise RankDeficiencyError("need at least two disks")
    sv = np.linalg.svd(Q, compute_uv=False)
    if sv[-1] <= rcond * sv[0]:
        raise RankDeficiencyError("reference disks are colinear")
    # solve Q M^T = C
    Mt, *_ = np.linalg.lstsq(Q, C, rcond=None)
    return Mt.T


def embed_projection(t2, xi, frame, atol=1e-10):
    """Lift a 2x2 in-frame tensor to the 3x3 lab tensor ``E^T t2 E``.

    ``frame`` rows ``(e_u, e_v)`` must be orthonormal and orthogonal to
    ``xi``; the result then annihilates ``xi`` on both sides.
    """
    E = np.asarray(frame, float).reshape(2, 3)
    xi = np.asarray(xi, float)
    Q = np.vstack([E, xi / np.linalg.norm(xi)])
    if not np.allclose(Q @ Q.T, np.eye(3), atol=atol):
        raise ValueError("frame must be orthonormal and orthogonal to xi")
    return E.T @ np.asarray(t2, float) @ E


def recommend_alpha(sigma, wavelength, P):
    """Precession angle ``acos(1 - sigma^2/2) + asin(lambda P / 4 pi)`` in radians."""
    x = 1 - sigma ** 2 / 2
    y = wavelength * P / (4 * np.pi)
    if not (-1 <= x <= 1) or not (-1 <= y <= 1):
        raise ValueError("precession rule arguments out of range")
    return float(np.arccos(x) + np.arcsin(y))


def relative_error(c_true, c):
    """Percentage error ``100 |c_true - c| / |c_true|`` (broadcasts over rows)."""
    c_true = np.asarray(c_true, float)
    n = np.linalg.norm(c_true, axis=-1)
    if np.any(n == 0):
        raise ValueError("reference centre is zero")
    return 100 * np.linalg.norm(c_true - np.asarray(c, float), axis=-1) / n
