import numpy as np
import pytest

from straintomo import io
from straintomo.deformation import PhantomSpec, sample_layered_phantom
from straintomo.diffraction import DetectorGrid, DiffractionPattern
from straintomo.errors import ConfigError
from straintomo.grid import Grid
from straintomo.tomo import (AcquisitionGeometry, TensorSinogram, TensorVolume, VectorVolume,
                             sphere_geometry)


def test_tensor_volume_round_trip_bit_exact(tmp_path, rng):
    grid = Grid((3, 4, 5), (1.0, 0.5, 2.0), (-1.0, 0.25, 3.0))
    vol = TensorVolume(grid, rng.normal(size=grid.shape + (3, 3)))
    p = tmp_path / "t.tvf"
    io.save_volume(p, vol)
    back = io.load_volume(p)
    assert isinstance(back, TensorVolume)
    assert back.data.tobytes() == vol.data.tobytes()
    np.testing.assert_array_equal(back.grid.voxel_size, grid.voxel_size)
    np.testing.assert_array_equal(back.grid.origin, grid.origin)
    # write -> read -> write reproduces the file
    q = tmp_path / "t2.tvf"
    io.save_volume(q, back)
    assert p.read_bytes() == q.read_bytes()


def test_vector_volume_round_trip(tmp_path, rng):
    grid = Grid((2, 2, 2), 1.0)
    vol = VectorVolume(grid, rng.normal(size=grid.shape + (3,)))
    io.save_volume(tmp_path / "v.tvf", vol)
    back = io.load_volume(tmp_path / "v.tvf")
    assert isinstance(back, VectorVolume)
    assert back.data.tobytes() == vol.data.tobytes()


def test_deformation_field_round_trip(tmp_path):
    grid = Grid((3, 3, 6), 10.0)
    support = np.ones(grid.shape, bool)
    support[0, 0, :] = False
    fld = sample_layered_phantom(PhantomSpec(3, 3, 0.02, 5), grid, support=support)
    io.save_volume(tmp_path / "f.tvf", fld)
    back = io.load_volume(tmp_path / "f.tvf")
    assert back.A.tobytes() == fld.A.tobytes()
    assert back.b.tobytes() == fld.b.tobytes()
    np.testing.assert_array_equal(back.support, fld.support)


def test_sinogram_round_trip_with_mask(tmp_path, rng):
    geom = sphere_geometry(3, 2, 3, 1.0)
    mask = rng.random(geom.sino_shape) > 0.3
    s = TensorSinogram(rng.normal(size=geom.sino_shape + (3, 3)), mask, geom.directions)
    io.save_sinogram(tmp_path / "s.tvf", s, {"note": "x"})
    back = io.load_sinogram(tmp_path / "s.tvf")
    assert back.data.tobytes() == s.data.tobytes()
    np.testing.assert_array_equal(back.mask, s.mask)
    np.testing.assert_array_equal(back.directions, s.directions)


def test_patterns_round_trip(tmp_path, rng):
    grid = DetectorGrid(8, 2.0)
    pats = [DiffractionPattern(grid, rng.random((8, 8))) for _ in range(3)]
    idx = np.array([[0, 1, 2], [1, 0, 0], [2, 1, 1]])
    io.save_patterns(tmp_path / "p.tvf", pats, idx, {"alpha_deg": 2.0})
    back, bidx, meta = io.load_patterns(tmp_path / "p.tvf")
    assert len(back) == 3 and meta["alpha_deg"] == 2.0
    for a, b in zip(pats, back):
        assert a.intensity.tobytes() == b.intensity.tobytes()
        assert b.grid.npix == 8 and b.grid.k_max == 2.0
    np.testing.assert_array_equal(bidx, idx)


def test_geometry_round_trip(tmp_path):
    geom = AcquisitionGeometry.from_directions([[0, 0, 1.0], [0.3, 0.1, 1.0]], 3, 2, 1.5)
    io.save_geometry(tmp_path / "g.json", geom)
    back = io.load_geometry(tmp_path / "g.json")
    np.testing.assert_array_equal(back.directions, geom.directions)
    np.testing.assert_array_equal(back.frames, geom.frames)
    assert (back.n_u, back.n_v, back.pitch) == (3, 2, 1.5)


def test_format_errors(tmp_path, rng):
    p = tmp_path / "bad.tvf"
    p.write_bytes(b"nope")
    with pytest.raises(ConfigError):
        io.read_tvf(p)
    grid = Grid((2, 2, 2), 1.0)
    io.save_volume(p, TensorVolume(grid, np.zeros(grid.shape + (3, 3))))
    raw = p.read_bytes()
    p.write_bytes(raw[:-8])
    with pytest.raises(ConfigError):
        io.read_tvf(p)
    io.save_volume(p, TensorVolume(grid, np.zeros(grid.shape + (3, 3))))
    with pytest.raises(ConfigError):
        io.load_sinogram(p)
    with pytest.raises(ValueError):
        io.write_tvf(p, np.zeros((2, 2)), rank="tensor")


def test_config_and_csv(tmp_path):
    p = tmp_path / "c.toml"
    p.write_text('seed = 4\n[recon]\nbeta = 1e-4\n')
    assert io.load_config(p) == {"seed": 4, "recon": {"beta": 1e-4}}
    p.write_text("seed = = 4\n")
    with pytest.raises(ConfigError):
        io.load_config(p)
    io.write_csv(tmp_path / "a.csv", ["a", "b"], [(1, 0.1), (2, np.float64(1 / 3))])
    header, rows = io.read_csv(tmp_path / "a.csv")
    assert header == ["a", "b"] and float(rows[1][1]) == 1 / 3


def test_pgm_round_trip(tmp_path):
    img = np.arange(12.0).reshape(4, 3)
    io.write_pgm(tmp_path / "i.pgm", img)
    back = io.read_pgm(tmp_path / "i.pgm")
    assert back.shape == (4, 3)
    np.testing.assert_array_equal(back, np.round(img / 11 * 65535))
    io.write_pgm(tmp_path / "z.pgm", np.zeros((2, 2)))
    assert np.all(io.read_pgm(tmp_path / "z.pgm") == 0)
