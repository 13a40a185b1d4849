"""Command-line pipeline: phantom -> simulate -> detect -> project -> reconstruct -> evaluate.

Every stage reads and writes files in the output directory, so stages can
be run one at a time or chained with ``pipeline``.  Configuration is a TOML
file whose sections override :data:`DEFAULT_CONFIG`.

Exit codes: 0 success, 2 configuration or input error, 3 numerical failure.
"""
import argparse
import copy
import logging
import os
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import crystal as xtal
from . import io
from .deformation import (DislocationSpec, PhantomSpec, dislocation_field,
                          sample_layered_phantom)
from .diffraction import (Column, DetectorGrid, PrecessionConfig, Probe, column_along_ray,
                          rotate_crystal, simulate_precessed, spot_shape)
from .errors import (ConfigError, EmptyDiskError, NoDiskError, NumericalError,
                     OutsideSphereError, PreconditionError, RankDeficiencyError,
                     ResourceLimitError, SingularityError)
from .grid import Grid
from .peaks import centres_to_tensor, detect, disk_set, embed_projection, relative_error
from .recon import (FULL_NAMES, PERCENTILES, SYM_NAMES, ReconConfig, add_noise,
                    error_report, extract_strain, reconstruct_tv)
from .tomo import (RayTransform, TensorSinogram, TensorVolume, chord_lengths,
                   thickness_rescale, zone_axis_geometry)

log = logging.getLogger("straintomo")

DEFAULT_CONFIG = {
    "seed": 0,
    "workers": 0,
    "phantom": {"kind": "layered", "shape": [8, 8, 8], "voxel_size": 20.0,
                "layers": 3, "rank": 3, "sigma": 0.01,
                "burgers": [2.7155, 2.7155, 2.7155], "line": [1.0, -1.0, 0.0],
                "poisson": 0.3, "core_radius": 5.0},
    "crystal": {"orientation": "001", "cutoff": 6.0, "weights": "diamond"},
    "probe": {"wavelength": 0.02, "semi_angle_mrad": 2.0, "column_width": 100.0},
    "detector": {"npix": 256, "k_max": 6.0},
    "precession": {"alphas_deg": [2.0], "n_t": 32, "z_window": 0.5},
    "geometry": {"tilt_limit_deg": 70.0, "max_index": 1, "norm": "max",
                 "n_u": 8, "n_v": 8, "pitch": 20.0},
    "detection": {"methods": ["com", "registered"]},
    "recon": {"beta": 5e-5, "max_iters": 2000, "tolerance": 1e-6,
              "noise_level": 0.0, "noise_seed": 0, "noise_scale": "rms"},
    "pipeline": {"data": "detected"},
}

NUMERICAL = (NumericalError, RankDeficiencyError, EmptyDiskError, NoDiskError,
             SingularityError, OutsideSphereError, ResourceLimitError, FloatingPointError)


# ---------------------------------------------------------------------------
# configuration

def merge_config(base, override, path=""):
    """Recursively override ``base``; unknown keys raise ConfigError."""
    out = copy.deepcopy(base)
    for k, v in override.items():
        if k not in base:
            raise ConfigError("unknown config key %s%s" % (path, k))
        if isinstance(base[k], dict):
            if not isinstance(v, dict):
                raise ConfigError("config key %s%s must be a table" % (path, k))
            out[k] = merge_config(base[k], v, path + k + ".")
        else:
            out[k] = v
    return out


def load_pipeline_config(path=None, seed=None, workers=None):
    cfg = copy.deepcopy(DEFAULT_CONFIG)
    if path is not None:
        cfg = merge_config(cfg, io.load_config(path))
    if seed is not None:
        cfg["seed"] = seed
    if workers is not None:
        cfg["workers"] = workers
    if not cfg["precession"]["alphas_deg"]:
        raise ConfigError("precession.alphas_deg must not be empty")
    return cfg


def _workers(cfg):
    w = int(cfg["workers"])
    return os.cpu_count() or 1 if w <= 0 else w


def recon_config(cfg):
    r = cfg["recon"]
    try:
        return ReconConfig(beta=float(r["beta"]), max_iters=int(r["max_iters"]),
                           tolerance=float(r["tolerance"]), noise_seed=int(r["noise_seed"]),
                           noise_level=float(r["noise_level"]))
    except (TypeError, ValueError) as exc:
        raise ConfigError("invalid recon settings: %s" % exc) from exc


def build_crystal(cfg):
    c = cfg["crystal"]
    return xtal.silicon(c["orientation"], cutoff=float(c["cutoff"]), weights=c["weights"])


def build_geometry(cfg, crystal, grid):
    g = cfg["geometry"]
    return zone_axis_geometry(crystal, np.radians(float(g["tilt_limit_deg"])),
                              int(g["max_index"]),
                              (int(g["n_u"]), int(g["n_v"]), float(g["pitch"]), grid.centre),
                              norm=g["norm"])


def truth_tensor(field):
    """Reconstruction target ``A^T - id`` (zero off-support)."""
    F = np.swapaxes(field.A, -1, -2) - np.eye(3)
    F[~field.support] = 0.0
    return TensorVolume(field.grid, F)


# ---------------------------------------------------------------------------
# stages

def stage_phantom(cfg, out):
    p = cfg["phantom"]
    grid = Grid(tuple(p["shape"]), p["voxel_size"])
    if p["kind"] == "layered":
        fld = sample_layered_phantom(PhantomSpec(int(p["layers"]), int(p["rank"]),
                                                 float(p["sigma"]), int(cfg["seed"])), grid)
    elif p["kind"] == "dislocation":
        spec = DislocationSpec(tuple(p["burgers"]), tuple(p["line"]), float(p["poisson"]),
                               float(p["core_radius"]), tuple(grid.centre))
        fld = dislocation_field(spec, grid)
    else:
        raise ConfigError("phantom.kind must be 'layered' or 'dislocation'")
    io.save_volume(out / "phantom.tvf", fld)
    io.save_volume(out / "truth.tvf", truth_tensor(fld))
    log.info("phantom %s on %s grid, %d supported voxels", p["kind"], grid.shape,
             int(fld.support.sum()))
    return fld


class Optics:
    """Probe, detector and crystal shared by simulation and detection."""

    def __init__(self, cfg):
        pr, de = cfg["probe"], cfg["detector"]
        self.probe = Probe.from_mrad(float(pr["wavelength"]), float(pr["semi_angle_mrad"]))
        self.detector = DetectorGrid(int(de["npix"]), float(de["k_max"]))
        self.crystal = build_crystal(cfg)
        self.z_window = float(cfg["precession"]["z_window"])
        self.width = float(pr["column_width"])
        self.spot = spot_shape(self.probe, self.width)
        self._disks = {}

    def frame_crystal(self, geom, t):
        Q = np.column_stack([geom.frames[t, 0], geom.frames[t, 1], geom.directions[t]])
        return rotate_crystal(self.crystal, Q)

    def column(self, fld, geom, t, start):
        col = column_along_ray(fld, start, geom.frames[t], geom.directions[t])
        return Column(col.A, col.b, col.z, col.thickness, self.width)

    def disks(self, geom, t):
        if t not in self._disks:
            rc = self.frame_crystal(geom, t)
            self._disks[t] = disk_set(rc, spot_radius=self.spot.support, z_window=self.z_window)
        return self._disks[t]


def _ray_jobs(geom):
    starts, _ = geom.rays()
    starts = starts.reshape(geom.sino_shape + (3,))
    return [(t, i, j, starts[t, i, j]) for t in range(geom.n_tilts)
            for i in range(geom.n_u) for j in range(geom.n_v)]


def _map(fn, items, workers):
    if workers <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(workers) as ex:
        return list(ex.map(fn, items))


def stage_simulate(cfg, out, fld=None):
    fld = io.load_volume(out / "phantom.tvf") if fld is None else fld
    opt = Optics(cfg)
    geom = build_geometry(cfg, opt.crystal, fld.grid)
    io.save_geometry(out / "geometry.json", geom)
    jobs = _ray_jobs(geom)
    n_t = int(cfg["precession"]["n_t"])
    crystals = [opt.frame_crystal(geom, t) for t in range(geom.n_tilts)]
    ref_rows = []
    for a_id, alpha in enumerate(cfg["precession"]["alphas_deg"]):
        prec = PrecessionConfig.degrees(float(alpha), n_t)

        def run(job):
            t, i, j, start = job
            col = opt.column(fld, geom, t, start)
            t0 = time.perf_counter()
            if len(col.z) == 0:
                pat = None
            else:
                pat = simulate_precessed(crystals[t], None, col, opt.probe, opt.detector, prec,
                                         spot=opt.spot, z_window=opt.z_window)
            return pat, time.perf_counter() - t0

        t0 = time.perf_counter()
        res = _map(run, jobs, _workers(cfg))
        pats, index = [], []
        for (t, i, j, _), (pat, dt) in zip(jobs, res):
            if pat is None:
                continue
            pats.append(pat)
            index.append((t, i, j))
            ref_rows.append((a_id, t, i, j, dt))
        if not pats:
            raise ConfigError("no ray meets the specimen; check geometry.pitch")
        io.save_patterns(out / ("patterns_a%d.tvf" % a_id), pats, index,
                         {"alpha_deg": float(alpha), "n_t": n_t})
        log.info("alpha %.3g deg: %d patterns in %.1f s (%.3f s/pattern)", alpha, len(pats),
                 time.perf_counter() - t0, (time.perf_counter() - t0) / len(pats))
    io.write_csv(out / "simulate_timing.csv", ["alpha_id", "tilt", "iu", "iv", "seconds"],
                 ref_rows)
    return geom


def _unstrained_reference(opt, geom, t, prec, thickness):
    col = Column(np.eye(3)[None], np.zeros((1, 3)), np.zeros(1), np.array([thickness]),
                 opt.width)
    return simulate_precessed(opt.frame_crystal(geom, t), None, col, opt.probe, opt.detector,
                              prec, spot=opt.spot, z_window=opt.z_window)


def stage_detect(cfg, out, fld=None):
    fld = io.load_volume(out / "phantom.tvf") if fld is None else fld
    geom = io.load_geometry(out / "geometry.json")
    opt = Optics(cfg)
    thickness = chord_lengths(fld.support, fld.grid, geom)
    methods = list(cfg["detection"]["methods"])
    rows, summary = [], []
    for a_id, alpha in enumerate(cfg["precession"]["alphas_deg"]):
        pats, index, meta = io.load_patterns(out / ("patterns_a%d.tvf" % a_id))
        prec = PrecessionConfig.degrees(float(meta["alpha_deg"]), int(meta["n_t"]))
        refs = {}
        avg = {m: np.zeros(geom.sino_shape + (3, 3)) for m in methods}
        mask = {m: np.zeros(geom.sino_shape, bool) for m in methods}
        errs = {m: [] for m in methods}
        for pat, (t, i, j) in zip(pats, index):
            xi, frame = geom.directions[t], geom.frames[t]
            try:
                disks = opt.disks(geom, t)
            except (RankDeficiencyError, ValueError):
                continue
            start = geom.rays()[0].reshape(geom.sino_shape + (3,))[t, i, j]
            col = opt.column(fld, geom, t, start)
            # like-for-like reference: same tilt and column thickness
            key = (t, round(float(col.thickness.sum()), 6))
            if key not in refs:
                refs[key] = _unstrained_reference(opt, geom, t, prec, key[1])
            Abar = np.einsum("n,nij->ij", col.thickness, col.A) / col.thickness.sum()
            c_true = (disks.peaks @ Abar)[:, :2]
            for m in methods:
                try:
                    meas = detect(pat, disks, m, refs[key])
                    M = centres_to_tensor(meas, disks)
                except (EmptyDiskError, NoDiskError, RankDeficiencyError):
                    continue
                avg[m][t, i, j] = embed_projection(M - np.eye(2), xi, frame)
                mask[m][t, i, j] = True
                e = relative_error(c_true, meas.centres)
                errs[m].append(e.mean())
                for n, (c, er) in enumerate(zip(meas.centres, e)):
                    rows.append((a_id, t, i, j, n, m, float(c[0]), float(c[1]), float(er)))
        for m in methods:
            s = TensorSinogram(avg[m], mask[m], geom.directions)
            io.save_sinogram(out / ("sinogram_%s_a%d.tvf" % (m, a_id)),
                             thickness_rescale(s, thickness),
                             {"alpha_deg": float(alpha), "method": m})
            mean = float(np.mean(errs[m])) if errs[m] else float("nan")
            summary.append((float(alpha), m, mean, len(errs[m])))
            log.info("alpha %.3g deg, %s: mean centre error %.4f %% over %d patterns",
                     alpha, m, mean, len(errs[m]))
    io.write_csv(out / "centres.csv",
                 ["alpha_id", "tilt", "iu", "iv", "disk", "method", "cx", "cy", "error_pct"], rows)
    io.write_csv(out / "table.csv", ["alpha_deg", "method", "mean_error_pct", "patterns"],
                 summary)
    return summary


def stage_project(cfg, out, fld=None):
    """Ideal sinogram ``J(A^T - id)`` (plus optional noise) from the phantom."""
    fld = io.load_volume(out / "phantom.tvf") if fld is None else fld
    path = out / "geometry.json"
    if path.exists():
        geom = io.load_geometry(path)
    else:
        geom = build_geometry(cfg, build_crystal(cfg), fld.grid)
        io.save_geometry(path, geom)
    F = truth_tensor(fld)
    d = RayTransform(fld.grid, geom).forward(F.data)
    sino = TensorSinogram(d, None, geom.directions)
    rc = recon_config(cfg)
    mode = cfg["recon"]["noise_scale"]
    if mode not in ("rms", "thickness"):
        raise ConfigError("recon.noise_scale must be 'rms' or 'thickness'")
    thick = chord_lengths(fld.support, fld.grid, geom) if mode == "thickness" else None
    sino = add_noise(sino, rc.noise_level, rc.noise_seed, thick)
    io.save_sinogram(out / "sinogram_ideal.tvf", sino, {"noise_level": rc.noise_level})
    return sino


def stage_reconstruct(cfg, out, sinogram_path=None, support_path=None):
    geom = io.load_geometry(out / "geometry.json")
    sino = io.load_sinogram(sinogram_path or _default_sinogram(cfg, out))
    ref = io.load_volume(support_path or out / "phantom.tvf")
    grid = ref.grid
    support = getattr(ref, "support", None)
    rc = recon_config(cfg)
    t0 = time.perf_counter()
    res = reconstruct_tv(sino, geom, grid, rc, support=support)
    log.info("reconstruction: %d iterations in %.1f s, converged=%s", res.iterations,
             time.perf_counter() - t0, res.converged)
    io.save_volume(out / "recon.tvf", res.volume)
    h = res.history
    io.write_csv(out / "convergence.csv", ["iteration", "objective", "residual", "change"],
                 zip(h["iteration"], h["objective"], h["residual"], h["change"]))
    return res


def _default_sinogram(cfg, out):
    if cfg["pipeline"]["data"] == "ideal":
        return out / "sinogram_ideal.tvf"
    m = cfg["detection"]["methods"][-1]
    return out / ("sinogram_%s_a%d.tvf" % (m, len(cfg["precession"]["alphas_deg"]) - 1))


def stage_evaluate(cfg, out, recon_path=None, truth_path=None):
    rec = io.load_volume(recon_path or out / "recon.tvf")
    truth = io.load_volume(truth_path or out / "truth.tvf")
    if not isinstance(rec, TensorVolume) or not isinstance(truth, TensorVolume):
        raise ConfigError("evaluate needs two tensor volumes")
    if rec.grid.shape != truth.grid.shape:
        raise ConfigError("reconstruction and truth grids differ")
    rep = error_report(rec, truth)
    rows = []
    for kind, names in (("full", FULL_NAMES), ("sym", SYM_NAMES)):
        for q, vals in zip(PERCENTILES, rep.percentiles[kind]):
            rows.append([kind, q] + [float(v) for v in vals] + [""] * (9 - len(names)))
    io.write_csv(out / "error_report.csv", ["part", "percentile"] + ["c%d" % i for i in range(9)],
                 rows)
    io.write_csv(out / "error_components.csv", ["part", "index", "name"],
                 [(k, i, n) for k, ns in (("full", FULL_NAMES), ("sym", SYM_NAMES))
                  for i, n in enumerate(ns)])
    prof = rep.z_profile["sym"][PERCENTILES.index(99)]
    io.write_csv(out / "error_z_profile.csv", ["z"] + list(SYM_NAMES),
                 [[k] + [float(v) for v in prof[k]] for k in range(len(prof))])
    io.write_pgm(out / "error_projection.pgm", rep.projection)
    strain = extract_strain(rec)
    mid = rec.grid.shape[1] // 2
    for name, (i, j) in zip(SYM_NAMES, [(0, 0), (1, 1), (2, 2), (0, 1), (0, 2), (1, 2)]):
        io.write_pgm(out / ("strain_%s_xz.pgm" % name), strain.data[:, mid, :, i, j])
    geom_path = out / "geometry.json"
    if geom_path.exists():
        geom = io.load_geometry(geom_path)
        xy = geom.stereographic()
        io.write_csv(out / "pole_figure.csv", ["tilt", "x", "y", "u", "v", "w"],
                     [(t, float(x), float(y)) + tuple(int(h) for h in
                                                      (geom.hkl[t] if geom.hkl is not None
                                                       else (0, 0, 0)))
                      for t, (x, y) in enumerate(xy)])
        _plots(out, rep, xy)
    else:
        _plots(out, rep, None)
    return rep


def _plots(out, rep, pole):
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt
    fig, ax = plt.subplots(figsize=(6, 3.5))
    prof = rep.z_profile["sym"][PERCENTILES.index(99)]
    for c, name in enumerate(SYM_NAMES):
        ax.plot(prof[:, c], label=name)
    ax.set_xlabel("z slice")
    ax.set_ylabel("99th percentile |error|")
    ax.legend(ncol=3, fontsize=7)
    fig.tight_layout()
    fig.savefig(out / "error_z_profile.png", dpi=100)
    plt.close(fig)
    if pole is not None:
        fig, ax = plt.subplots(figsize=(4, 4))
        ax.add_patch(plt.Circle((0, 0), 1, fill=False, color="0.6"))
        ax.plot(pole[:, 0], pole[:, 1], "o")
        ax.set_aspect("equal")
        ax.set_xlim(-1.05, 1.05)
        ax.set_ylim(-1.05, 1.05)
        ax.set_title("tilt directions (%d)" % len(pole))
        fig.savefig(out / "pole_figure.png", dpi=100)
        plt.close(fig)


def stage_pipeline(cfg, out):
    fld = stage_phantom(cfg, out)
    if cfg["pipeline"]["data"] == "ideal":
        stage_project(cfg, out, fld)
    else:
        stage_simulate(cfg, out, fld)
        stage_detect(cfg, out, fld)
    stage_reconstruct(cfg, out)
    stage_evaluate(cfg, out)


# ---------------------------------------------------------------------------
# entry point

def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="TOML configuration file")
    common.add_argument("--out", type=Path, default=Path("straintomo_out"),
                        help="output directory (default ./straintomo_out)")
    common.add_argument("--seed", type=int, help="random seed (overrides config)")
    common.add_argument("--workers", type=int, help="worker threads (0 = all cores)")
    common.add_argument("-v", "--verbose", action="store_true")
    p = argparse.ArgumentParser(prog="straintomo", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("phantom", parents=[common], help="build a layered or dislocation phantom")
    sub.add_parser("simulate", parents=[common], help="simulate precessed patterns per ray")
    sub.add_parser("detect", parents=[common], help="detect disk centres, build sinograms")
    pr = sub.add_parser("project", parents=[common], help="ideal sinogram of the phantom")
    pr.add_argument("--noise", type=float, help="relative noise level (overrides config)")
    rc = sub.add_parser("reconstruct", parents=[common], help="TV reconstruction")
    rc.add_argument("--sinogram", type=Path)
    rc.add_argument("--support", type=Path, help="volume whose support mask confines unknowns")
    rc.add_argument("--beta", type=float, help="TV weight (overrides config)")
    rc.add_argument("--max-iters", type=int)
    ev = sub.add_parser("evaluate", parents=[common], help="error report, slices, pole figure")
    ev.add_argument("--recon", type=Path)
    ev.add_argument("--truth", type=Path)
    sub.add_parser("pipeline", parents=[common], help="run every stage from one config")
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        cfg = load_pipeline_config(args.config, args.seed, args.workers)
        if getattr(args, "noise", None) is not None:
            cfg["recon"]["noise_level"] = args.noise
        if getattr(args, "beta", None) is not None:
            cfg["recon"]["beta"] = args.beta
        if getattr(args, "max_iters", None) is not None:
            cfg["recon"]["max_iters"] = args.max_iters
        out = args.out
        out.mkdir(parents=True, exist_ok=True)
        cmd = args.command
        if cmd == "phantom":
            stage_phantom(cfg, out)
        elif cmd == "simulate":
            stage_simulate(cfg, out)
        elif cmd == "detect":
            stage_detect(cfg, out)
        elif cmd == "project":
            stage_project(cfg, out)
        elif cmd == "reconstruct":
            stage_reconstruct(cfg, out, args.sinogram, args.support)
        elif cmd == "evaluate":
            stage_evaluate(cfg, out, args.recon, args.truth)
        else:
            stage_pipeline(cfg, out)
    except NUMERICAL as exc:
        print("straintomo: numerical failure: %s" % exc, file=sys.stderr)
        return 3
    except (ConfigError, PreconditionError, FileNotFoundError, KeyError, TypeError,
            ValueError) as exc:
        print("straintomo: configuration error: %s" % exc, file=sys.stderr)
        return 2
    return 0
