"""The transverse ray transform and its null space.

Three facts about the tensor ray transform ``J`` are checked numerically:
the projected tensors annihilate the beam direction, the symmetric part
commutes with ``J``, and gauge fields ``[grad phi]_x`` become invisible as
the grid is refined under dense angular sampling.
"""
import numpy as np

from straintomo.deformation import sym
from straintomo.grid import Grid
from straintomo.tomo import (RayTransform, TensorSinogram, gauge_field, sphere_geometry)

rng = np.random.default_rng(0)
grid = Grid((16, 16, 16), 2.0 / 16)
geom = sphere_geometry(50, 16, 16, 2.0 / 16)
op = RayTransform(grid, geom)
F = rng.normal(size=grid.shape + (3, 3))
d = TensorSinogram(op.forward(F), None, geom.directions)
print("max |J F xi| over all rays:       %.1e" % d.range_residual())
print("max |Sym(J F) - J Sym(F)|:        %.1e" % np.abs(sym(d.data) - op.forward(sym(F))).max())

print("gauge-field residual under refinement (200 directions):")
geom = sphere_geometry(200, 24, 24, 2.0 / 24)
for n in (16, 32, 64):
    grid = Grid((n, n, n), 2.0 / n)
    r2 = np.sum(grid.centres() ** 2, axis=-1)
    phi = np.where(r2 < 0.64, np.exp(1 / 0.64 - 1 / np.maximum(0.64 - r2, 1e-300)), 0.0)
    F = np.exp(-r2 / 0.18)[..., None, None] * np.eye(3)
    op = RayTransform(grid, geom)
    JF = op.forward(F)
    JG = op.forward(gauge_field(phi, grid.voxel_size))
    print("  %3d^3: |J grad-phi| / |J F| = %.4f" % (n, np.linalg.norm(JG) / np.linalg.norm(JF)))
