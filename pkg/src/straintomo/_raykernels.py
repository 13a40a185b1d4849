"""Numba kernels for trilinear ray integration and its exact transpose."""
import os

os.environ.setdefault("NUMBA_THREADING_LAYER", "omp")

import numpy as np  # noqa: E402
from numba import njit, prange  # noqa: E402

# The adjoint accumulates into this many partial volumes regardless of the
# thread count, then sums them in a fixed order, so results do not depend on
# how many threads numba uses.
N_CHUNKS = 8


@njit(cache=True)
def _t_range(x0, d, lo, hi, step):
    # sample indices k with t_k = (k + 1/2) step inside the open box (lo, hi)
    tmin = -1e300
    tmax = 1e300
    for a in range(3):
        if abs(d[a]) < 1e-300:
            if x0[a] <= lo[a] or x0[a] >= hi[a]:
                return 0, -1
        else:
            t1 = (lo[a] - x0[a]) / d[a]
            t2 = (hi[a] - x0[a]) / d[a]
            if t1 > t2:
                t1, t2 = t2, t1
            if t1 > tmin:
                tmin = t1
            if t2 < tmax:
                tmax = t2
    if tmax <= tmin:
        return 0, -1
    k0 = int(np.ceil(tmin / step - 0.5))
    k1 = int(np.floor(tmax / step - 0.5))
    return k0, k1


@njit(cache=True)
def _corner(g, n):
    i = int(np.floor(g))
    return i, g - i


@njit(parallel=True, cache=True)
def ray_integrate(vol, origin, vs, starts, dirs, step):
    """Line integrals of every component of ``vol`` along rays.

    vol : (nx, ny, nz, C); origin, vs : (3,); starts, dirs : (R, 3)
    Returns (R, C).
    """
    nx, ny, nz, C = vol.shape
    R = starts.shape[0]
    out = np.zeros((R, C))
    lo = origin - 0.5 * vs
    hi = origin + (np.array([nx, ny, nz]) + 0.5) * vs
    for r in prange(R):
        x0 = starts[r]
        d = dirs[r]
        k0, k1 = _t_range(x0, d, lo, hi, step)
        acc = np.zeros(C)
        for k in range(k0, k1 + 1):
            t = (k + 0.5) * step
            gx = (x0[0] + t * d[0] - origin[0]) / vs[0] - 0.5
            gy = (x0[1] + t * d[1] - origin[1]) / vs[1] - 0.5
            gz = (x0[2] + t * d[2] - origin[2]) / vs[2] - 0.5
            ix, fx = _corner(gx, nx)
            iy, fy = _corner(gy, ny)
            iz, fz = _corner(gz, nz)
            for cx in range(2):
                jx = ix + cx
                if jx < 0 or jx >= nx:
                    continue
                wx = fx if cx else 1.0 - fx
                for cy in range(2):
                    jy = iy + cy
                    if jy < 0 or jy >= ny:
                        continue
                    wy = fy if cy else 1.0 - fy
                    for cz in range(2):
                        jz = iz + cz
                        if jz < 0 or jz >= nz:
                            continue
                        w = wx * wy * (fz if cz else 1.0 - fz)
                        for c in range(C):
                            acc[c] += w * vol[jx, jy, jz, c]
        for c in range(C):
            out[r, c] = step * acc[c]
    return out


@njit(cache=True)
def _backproject_range(out, data, origin, vs, starts, dirs, step, r0, r1):
    nx, ny, nz, C = out.shape
    lo = origin - 0.5 * vs
    hi = origin + (np.array([nx, ny, nz]) + 0.5) * vs
    for r in range(r0, r1):
        x0 = starts[r]
        d = dirs[r]
        k0, k1 = _t_range(x0, d, lo, hi, step)
        for k in range(k0, k1 + 1):
            t = (k + 0.5) * step
            gx = (x0[0] + t * d[0] - origin[0]) / vs[0] - 0.5
            gy = (x0[1] + t * d[1] - origin[1]) / vs[1] - 0.5
            gz = (x0[2] + t * d[2] - origin[2]) / vs[2] - 0.5
            ix, fx = _corner(gx, nx)
            iy, fy = _corner(gy, ny)
            iz, fz = _corner(gz, nz)
            for cx in range(2):
                jx = ix + cx
                if jx < 0 or jx >= nx:
                    continue
                wx = fx if cx else 1.0 - fx
                for cy in range(2):
                    jy = iy + cy
                    if jy < 0 or jy >= ny:
                        continue
                    wy = fy if cy else 1.0 - fy
                    for cz in range(2):
                        jz = iz + cz
                        if jz < 0 or jz >= nz:
                            continue
                        w = step * wx * wy * (fz if cz else 1.0 - fz)
                        for c in range(C):
                            out[jx, jy, jz, c] += w * data[r, c]


@njit(parallel=True, cache=True)
def ray_backproject(data, shape, origin, vs, starts, dirs, step):
    """Exact transpose of :func:`ray_integrate`; data (R, C) -> (nx, ny, nz, C)."""
    R, C = data.shape
    nchunk = N_CHUNKS
    partial = np.zeros((nchunk, shape[0], shape[1], shape[2], C))
    bounds = np.linspace(0, R, nchunk + 1)
    for ch in prange(nchunk):
        r0 = int(bounds[ch] + 0.5)
        r1 = int(bounds[ch + 1] + 0.5)
        _backproject_range(partial[ch], data, origin, vs, starts, dirs, step, r0, r1)
    out = np.zeros((shape[0], shape[1], shape[2], C))
    for ch in range(nchunk):
        out += partial[ch]
    return out
