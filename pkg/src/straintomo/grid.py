"""Regular voxel grids shared by deformation fields and tensor volumes."""
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class Grid:
    """Axis-aligned voxel grid.

    Voxel ``(i, j, k)`` has centre ``origin + (idx + 1/2) * voxel_size``.
    ``voxel_size`` may be anisotropic (thin layered phantoms use tall
    columns and thin slabs).

    Parameters
    ----------
    shape : (nx, ny, nz)
    voxel_size : float or 3-sequence
        Angstrom.
    origin : 3-sequence, optional
        Corner of the grid.  Defaults to centring the grid on 0.
    """
    shape: tuple
    voxel_size: np.ndarray
    origin: np.ndarray = None

    def __post_init__(self):
        shape = tuple(int(n) for n in self.shape)
        if len(shape) != 3 or min(shape) < 1:
            raise ValueError("grid shape must be three positive integers")
        vs = np.broadcast_to(np.asarray(self.voxel_size, dtype=float), (3,)).copy()
        if np.any(vs <= 0):
            raise ValueError("voxel size must be positive")
        if self.origin is None:
            origin = -0.5 * vs * np.array(shape)
        else:
            origin = np.asarray(self.origin, dtype=float).reshape(3)
        object.__setattr__(self, "shape", shape)
        object.__setattr__(self, "voxel_size", vs)
        object.__setattr__(self, "origin", origin)

    @property
    def size(self):
        return int(np.prod(self.shape))

    @property
    def extent(self):
        return self.voxel_size * np.array(self.shape)

    @property
    def centre(self):
        return self.origin + 0.5 * self.extent

    def axis(self, dim):
        """Voxel-centre coordinates along one axis."""
        return self.origin[dim] + (np.arange(self.shape[dim]) + 0.5) * self.voxel_size[dim]

    def centres(self):
        """(nx, ny, nz, 3) array of voxel centres."""
        x, y, z = np.meshgrid(self.axis(0), self.axis(1), self.axis(2), indexing="ij")
        return np.stack([x, y, z], axis=-1)

    def refine(self, factor):
        """Same physical box with ``factor`` times more voxels per axis."""
        return Grid(tuple(n * factor for n in self.shape), self.voxel_size / factor, self.origin)
