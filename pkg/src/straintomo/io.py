"""File formats: TVF binary containers, geometry JSON, TOML config, CSV and PGM.

A TVF file is

    TVF1\\n
    <header length in bytes, 10 ASCII digits>\\n
    <JSON header, UTF-8>
    <payload: little-endian C-order float64>
    <optional mask bitmap: numpy.packbits, big bit order>

The header records ``format`` ("TVF1" volume, "TVF-2D" pattern stack,
"TVF-S" sinogram), ``rank``, ``dims``, ``components``, ``voxel_size``,
``endian`` and whether a mask follows.  JSON floats are written in
shortest round-trip form, so write -> read -> write reproduces the bytes.
"""
import csv
import json
from pathlib import Path

import numpy as np

from .deformation import DeformationField
from .diffraction import DetectorGrid, DiffractionPattern
from .errors import ConfigError
from .grid import Grid
from .tomo import AcquisitionGeometry, TensorSinogram, TensorVolume, VectorVolume

MAGIC = b"TVF1\n"
RANK_COMPONENTS = {"scalar": 1, "vector": 3, "tensor": 9, "affine": 12}


def write_tvf(path, data, fmt="TVF1", rank="scalar", voxel_size=None, origin=None,
              mask=None, meta=None):
    """Write ``data`` (trailing axes = components) as a TVF file."""
    data = np.ascontiguousarray(data, dtype="<f8")
    ncomp = RANK_COMPONENTS[rank]
    cshape = {1: (), 3: (3,), 9: (3, 3), 12: (12,)}[ncomp]
    dims = data.shape[:data.ndim - len(cshape)]
    if data.shape[len(dims):] != cshape:
        raise ValueError("trailing shape %s does not match rank %r" % (data.shape[len(dims):], rank))
    header = {"format": fmt, "rank": rank, "dims": [int(d) for d in dims],
              "components": ncomp, "endian": "little", "dtype": "float64",
              "voxel_size": None if voxel_size is None else [float(v) for v in voxel_size],
              "origin": None if origin is None else [float(v) for v in origin],
              "mask": mask is not None, "meta": meta or {}}
    text = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(b"%010d\n" % len(text))
        fh.write(text)
        fh.write(data.tobytes(order="C"))
        if mask is not None:
            m = np.asarray(mask, bool)
            if m.shape != tuple(dims[:m.ndim]) or m.ndim == 0:
                raise ValueError("mask shape %s does not match dims %s" % (m.shape, dims))
            fh.write(np.packbits(m.ravel()).tobytes())


def read_tvf(path):
    """Return ``(data, header, mask)``; ``mask`` is None if absent."""
    raw = Path(path).read_bytes()
    if not raw.startswith(MAGIC):
        raise ConfigError("%s is not a TVF file" % path)
    pos = len(MAGIC)
    try:
        n = int(raw[pos:pos + 10])
    except ValueError as exc:
        raise ConfigError("corrupt TVF header length in %s" % path) from exc
    pos += 11
    header = json.loads(raw[pos:pos + n].decode("utf-8"))
    pos += n
    ncomp = header["components"]
    cshape = {1: (), 3: (3,), 9: (3, 3), 12: (12,)}[ncomp]
    dims = tuple(header["dims"])
    count = int(np.prod(dims, dtype=np.int64)) * ncomp
    nbytes = count * 8
    if len(raw) < pos + nbytes:
        raise ConfigError("truncated TVF payload in %s" % path)
    data = np.frombuffer(raw, dtype="<f8", count=count, offset=pos).reshape(dims + cshape).copy()
    pos += nbytes
    mask = None
    if header["mask"]:
        mshape = tuple(header["meta"].get("mask_dims", dims))
        nm = int(np.prod(mshape, dtype=np.int64))
        bits = np.frombuffer(raw, dtype=np.uint8, offset=pos)
        if len(bits) * 8 < nm:
            raise ConfigError("truncated TVF mask in %s" % path)
        mask = np.unpackbits(bits, count=nm).astype(bool).reshape(mshape)
    return data, header, mask


# ---------------------------------------------------------------------------
# typed wrappers

def _grid_from(header):
    return Grid(tuple(header["dims"]), header["voxel_size"], header["origin"])


def save_volume(path, vol):
    """Save a TensorVolume, VectorVolume or DeformationField."""
    g = vol.grid
    if isinstance(vol, DeformationField):
        data = np.concatenate([vol.A.reshape(g.shape + (9,)), vol.b], axis=-1)
        write_tvf(path, data, "TVF1", "affine", g.voxel_size, g.origin, vol.support,
                  {"kind": "deformation"})
    elif isinstance(vol, TensorVolume):
        write_tvf(path, vol.data, "TVF1", "tensor", g.voxel_size, g.origin)
    elif isinstance(vol, VectorVolume):
        write_tvf(path, vol.data, "TVF1", "vector", g.voxel_size, g.origin)
    else:
        raise TypeError("cannot save %s as a volume" % type(vol).__name__)


def load_volume(path):
    data, h, mask = read_tvf(path)
    if h["format"] != "TVF1":
        raise ConfigError("%s holds %s, not a volume" % (path, h["format"]))
    grid = _grid_from(h)
    if h["rank"] == "affine":
        return DeformationField(grid, data[..., :9].reshape(grid.shape + (3, 3)),
                                data[..., 9:], mask)
    if h["rank"] == "tensor":
        return TensorVolume(grid, data)
    if h["rank"] == "vector":
        return VectorVolume(grid, data)
    raise ConfigError("unsupported volume rank %r" % h["rank"])


def save_patterns(path, patterns, index=None, meta=None):
    """Save a stack of DiffractionPatterns on one detector grid.

    ``index`` : optional (N, k) integer table (for example tilt, u, v, alpha id).
    """
    grid = patterns[0].grid
    stack = np.stack([p.intensity for p in patterns])
    m = dict(meta or {})
    m.update(npix=grid.npix, k_max=grid.k_max)
    if index is not None:
        m["index"] = np.asarray(index, int).tolist()
    write_tvf(path, stack, "TVF-2D", "scalar", meta=m)


def load_patterns(path):
    """Return ``(patterns, index, meta)``."""
    data, h, _ = read_tvf(path)
    if h["format"] != "TVF-2D":
        raise ConfigError("%s holds %s, not patterns" % (path, h["format"]))
    meta = h["meta"]
    grid = DetectorGrid(meta["npix"], meta["k_max"])
    data = data.reshape((-1, grid.npix, grid.npix))
    idx = np.array(meta["index"], int) if "index" in meta else None
    return [DiffractionPattern(grid, d) for d in data], idx, meta


def save_sinogram(path, sino, meta=None):
    m = dict(meta or {})
    m["directions"] = None if sino.directions is None else sino.directions.tolist()
    m["mask_dims"] = list(sino.shape)
    write_tvf(path, sino.data, "TVF-S", "tensor", mask=sino.mask, meta=m)


def load_sinogram(path):
    data, h, mask = read_tvf(path)
    if h["format"] != "TVF-S":
        raise ConfigError("%s holds %s, not a sinogram" % (path, h["format"]))
    d = h["meta"].get("directions")
    return TensorSinogram(data, mask, None if d is None else np.array(d, float))


def save_geometry(path, geom):
    """Geometry as JSON: tilt directions, in-plane frames and the scan grid."""
    doc = {"directions": geom.directions.tolist(), "frames": geom.frames.tolist(),
           "n_u": geom.n_u, "n_v": geom.n_v, "pitch": float(geom.pitch),
           "tilt_limit": float(geom.tilt_limit), "centre": geom.centre.tolist(),
           "hkl": None if geom.hkl is None else np.asarray(geom.hkl, int).tolist()}
    Path(path).write_text(json.dumps(doc, indent=1, sort_keys=True) + "\n")


def load_geometry(path):
    try:
        doc = json.loads(Path(path).read_text())
        hkl = doc.get("hkl")
        return AcquisitionGeometry(np.array(doc["directions"]), np.array(doc["frames"]),
                                   doc["n_u"], doc["n_v"], doc["pitch"], doc["tilt_limit"],
                                   np.array(doc["centre"]),
                                   None if hkl is None else np.array(hkl, int))
    except (KeyError, ValueError, OSError) as exc:
        raise ConfigError("cannot read geometry %s: %s" % (path, exc)) from exc


# ---------------------------------------------------------------------------
# text and raster outputs

def load_config(path):
    """Parse a TOML configuration file into nested dicts."""
    try:
        import tomllib
    except ImportError:
        import tomli as tomllib
    try:
        with open(path, "rb") as fh:
            return tomllib.load(fh)
    except (OSError, tomllib.TOMLDecodeError) as exc:
        raise ConfigError("cannot read config %s: %s" % (path, exc)) from exc


def write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for r in rows:
            w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in r])


def read_csv(path):
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    return rows[0], rows[1:]


def write_pgm(path, image, maxval=65535):
    """Binary PGM (P5) of ``image`` linearly scaled to ``[0, maxval]``."""
    img = np.asarray(image, float)
    if img.ndim != 2:
        raise ValueError("PGM images are 2D")
    lo, hi = np.nanmin(img), np.nanmax(img)
    scaled = np.zeros_like(img) if hi <= lo else (img - lo) / (hi - lo)
    vals = np.round(np.nan_to_num(scaled) * maxval)
    dtype = ">u2" if maxval > 255 else "u1"
    # rows = second array axis so image x runs along the first axis
    raster = vals.T.astype(dtype)
    with open(path, "wb") as fh:
        fh.write(b"P5\n%d %d\n%d\n" % (img.shape[0], img.shape[1], maxval))
        fh.write(raster.tobytes())


def read_pgm(path):
    raw = Path(path).read_bytes()
    parts = raw.split(b"\n", 3)
    if parts[0] != b"P5":
        raise ConfigError("%s is not a binary PGM" % path)
    w, h = (int(x) for x in parts[1].split())
    maxval = int(parts[2])
    dtype = ">u2" if maxval > 255 else "u1"
    return np.frombuffer(parts[3], dtype=dtype, count=w * h).reshape(h, w).T.astype(int)
