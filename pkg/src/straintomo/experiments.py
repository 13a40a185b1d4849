"""Evaluation harnesses: disk-centre accuracy on layered and dislocation phantoms.

These reproduce, at desk scale, the centre-detection accuracy study: for
random phantoms, simulate precessed patterns of a single beam column, detect
the inner-ring disk centres and compare with the beam-averaged truth.
"""
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from itertools import product

import numpy as np

from . import crystal as xtal
from .deformation import (DislocationSpec, PhantomSpec, beam_average_truth,
                          continuum_beam_average, dislocation_displacement,
                          dislocation_gradient, sample_layered_phantom)
from .diffraction import (Column, DetectorGrid, PrecessionConfig, Probe, column_from_field,
                          disk_spot, merge_runs, simulate_high_energy, simulate_precessed,
                          spot_shape)
from .grid import Grid
from .peaks import detect, disk_set, relative_error

METHODS = ("com", "registered")


@dataclass
class CentreSetup:
    """Optics, crystal and detection windows shared by many phantoms.

    Parameters
    ----------
    orientation : "001" or "011"
    thickness : specimen thickness in Angstrom
    nz : number of voxel slabs through the thickness
    width : lateral column width (Angstrom) used for the spot shape
    z_window : only peaks with ``|p_z| <= z_window`` are simulated
    """
    orientation: str = "001"
    wavelength: float = 0.02
    semi_angle_mrad: float = 2.0
    thickness: float = 250.0
    nz: int = 15
    width: float = 100.0
    npix: int = 512
    k_max: float = 5.9
    cutoff: float = 4.0
    weights: str = "diamond"
    z_window: float = 0.5
    radius: float = None

    def __post_init__(self):
        self.probe = Probe.from_mrad(self.wavelength, self.semi_angle_mrad)
        self.detector = DetectorGrid(self.npix, self.k_max)
        full = xtal.silicon(self.orientation, cutoff=self.cutoff, weights=self.weights)
        keep = (np.abs(full.peaks[:, 2]) <= self.z_window) & (np.abs(full.weights) > 0)
        self.crystal = full.subset(np.flatnonzero(keep))
        self.spot = spot_shape(self.probe, self.width)
        self.disks = disk_set(self.crystal, radius=self.radius, spot_radius=self.spot.support)
        self.grid = Grid((1, 1, self.nz), (self.width, self.width, self.thickness / self.nz))
        # disks that can reach a window: everything within r_bar + support
        q = self.crystal.peaks[:, :2]
        reach = self.disks.radius + self.spot.support + 0.2
        d = np.linalg.norm(q[:, None] - self.disks.centres[None], axis=-1).min(axis=1)
        self.sim_peaks = np.flatnonzero(d <= reach)
        self._refs = {}

    def reference(self, prec):
        key = (prec.alpha, prec.n_t)
        if key not in self._refs:
            col = Column(np.eye(3)[None], np.zeros((1, 3)), np.zeros(1),
                         np.array([self.thickness]), self.width)
            self._refs[key] = self.simulate(col, prec)
        return self._refs[key]

    def simulate(self, column, prec):
        return simulate_precessed(self.crystal, None, column, self.probe, self.detector, prec,
                                  spot=self.spot, peaks=self.sim_peaks)

    def errors(self, column, c_true, prec, methods=METHODS):
        """Per-method array of per-disk percentage errors."""
        pat = self.simulate(column, prec)
        ref = self.reference(prec)
        return {m: relative_error(c_true, detect(pat, self.disks, m, ref).centres)
                for m in methods}

    def truth(self, fld):
        return np.array([beam_average_truth(fld, (0, 0), p) for p in self.disks.peaks])


def layered_column(setup, spec, shift="continuity"):
    fld = sample_layered_phantom(spec, setup.grid, shift=shift)
    return fld, column_from_field(fld, (0, 0))


def phantom_combos(orientations=("001", "011"), Ls=(1, 3, 15), ds=(1, 2, 3)):
    return list(product(orientations, Ls, ds))


def _map(fn, items, workers):
    if workers is None or workers <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(workers) as ex:
        return list(ex.map(fn, items))


def layered_centre_study(alphas_deg=(0, 0.5, 1, 2), n_phantoms=30, sigma=0.01, n_t=32,
                         seed=0, orientations=("001", "011"), Ls=(1, 3, 15), ds=(1, 2, 3),
                         workers=None, setup_kwargs=None):
    """Mean centre errors over random layered phantoms for each precession angle.

    Phantom ``n`` uses combination ``n mod 18`` of (orientation, L, d) and
    seed ``seed + n``; the same phantoms are used for every angle.

    Returns
    -------
    dict with keys ``alphas`` and, per method, an (n_alpha, n_phantoms)
    array of per-pattern mean errors (averaged over inner-ring disks).
    """
    setup_kwargs = dict(setup_kwargs or {})
    setups = {o: CentreSetup(orientation=o, **setup_kwargs) for o in orientations}
    combos = phantom_combos(orientations, Ls, ds)
    jobs = []
    for n in range(n_phantoms):
        o, L, d = combos[n % len(combos)]
        spec = PhantomSpec(L, d, sigma, seed + n)
        jobs.append((o, spec))
    # references first so worker threads only read the cache
    for o in orientations:
        for a in alphas_deg:
            setups[o].reference(PrecessionConfig.degrees(a, n_t))

    def run(job):
        o, spec = job
        s = setups[o]
        fld, col = layered_column(s, spec)
        ct = s.truth(fld)
        res = {m: [] for m in METHODS}
        for a in alphas_deg:
            e = s.errors(col, ct, PrecessionConfig.degrees(a, n_t))
            for m in METHODS:
                res[m].append(e[m].mean())
        return res

    results = _map(run, jobs, workers)
    out = {"alphas": np.asarray(alphas_deg, float)}
    for m in METHODS:
        out[m] = np.array([r[m] for r in results]).T
    return out


def high_energy_centre_study(n_phantoms=30, sigma=0.01, seed=0, orientations=("001", "011"),
                             Ls=(1, 3, 15), ds=(1, 2, 3), z_tol=None, setup_kwargs=None,
                             damping="sinc"):
    """Unprecessed flat-Ewald centre errors over random layered phantoms.

    ``damping`` is passed to :func:`simulate_high_energy`.  For "cutoff",
    ``z_tol`` defaults to ``2 pi / thickness``, the half-width of the
    thickness sinc, so strained peaks within the main lobe contribute.
    """
    setup_kwargs = dict(setup_kwargs or {})
    setups = {o: CentreSetup(orientation=o, **setup_kwargs) for o in orientations}
    combos = phantom_combos(orientations, Ls, ds)
    res = {m: [] for m in METHODS}
    for n in range(n_phantoms):
        o, L, d = combos[n % len(combos)]
        s = setups[o]
        tol = 2 * np.pi / s.thickness if z_tol is None else z_tol
        spot = disk_spot(s.probe)
        fld, col = layered_column(s, PhantomSpec(L, d, sigma, seed + n))
        ct = s.truth(fld)
        ref_col = Column(np.eye(3)[None], np.zeros((1, 3)), np.zeros(1),
                         np.array([s.thickness]), s.width)
        kw = dict(spot=spot, peaks=s.sim_peaks, z_tol=tol, damping=damping)
        pat = simulate_high_energy(s.crystal, None, col, s.probe, s.detector, **kw)
        ref = simulate_high_energy(s.crystal, None, ref_col, s.probe, s.detector, **kw)
        for m in METHODS:
            res[m].append(relative_error(ct, detect(pat, s.disks, m, ref).centres).mean())
    return {m: np.array(v) for m, v in res.items()}


def dislocation_column(spec, centre_xy, thickness, nz, width, h=0.01):
    """Beam column through a dislocation phantom.

    Each voxel carries the local affine map of ``x + R(x)`` about its centre
    ``X_j``: ``A_j = id + grad R(X_j)`` and ``b_j = R(X_j) - (A_j - id) X_j``,
    re-expressed relative to the beam axis.
    """
    dz = thickness / nz
    z = (np.arange(nz) + 0.5) * dz
    X = np.column_stack([np.full(nz, centre_xy[0]), np.full(nz, centre_xy[1]), z])
    G = dislocation_gradient(spec, X, h)
    xb = np.array([centre_xy[0], centre_xy[1], 0.0])
    b = dislocation_displacement(spec, X) - np.einsum("nij,nj->ni", G, X - xb)
    return merge_runs(Column(np.eye(3) + G, b, z, np.full(nz, dz), width))


def dislocation_centre_study(n_patterns=25, alpha_deg=2.0, n_t=32, thickness=250.0, nz=50,
                             footprint=30.0, r_min=50.0, r_max=250.0, seed=0, orientation="001",
                             spec=None, workers=None, setup_kwargs=None):
    """Centre errors for beam columns passing a straight dislocation.

    The dislocation line lies in the mid-depth plane.  Beam columns are
    placed at horizontal distances ``r_min <= d <= r_max`` (uniform, random
    side) from the line.  Truth is the footprint-and-depth average of
    ``gamma^T (id + grad R)^T p``.
    """
    setup_kwargs = dict(setup_kwargs or {})
    setup_kwargs.setdefault("width", footprint)
    s = CentreSetup(orientation=orientation, thickness=thickness, nz=nz, **setup_kwargs)
    if spec is None:
        spec = DislocationSpec(centre=(0.0, 0.0, thickness / 2))
    line = np.asarray(spec.line, float)
    normal = np.cross([0.0, 0.0, 1.0], line)
    normal /= np.linalg.norm(normal)
    rng = np.random.default_rng(seed)
    dist = rng.uniform(r_min, r_max, n_patterns) * rng.choice([-1.0, 1.0], n_patterns)
    pts = np.asarray(spec.centre, float)[:2] + dist[:, None] * normal[:2]
    prec = PrecessionConfig.degrees(alpha_deg, n_t)
    s.reference(prec)

    def run(xy):
        col = dislocation_column(spec, xy, thickness, nz, s.width)
        ct = np.array([continuum_beam_average(spec, xy, p, thickness, footprint)
                       for p in s.disks.peaks])
        e = s.errors(col, ct, prec)
        return {m: e[m].mean() for m in METHODS}

    results = _map(run, list(pts), workers)
    return {m: np.array([x[m] for x in results]) for m in METHODS} | {"positions": pts}
