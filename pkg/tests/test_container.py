import json
import struct

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

import ismkit as ik
from ismkit import container as cont
from ismkit.container import ContainerError, IsmContainer

from oracles import ideal_config, square_grid


def _dataset_container(data, dtype, step=(50.0, 50.0)):
    header = {
        "version": 1,
        "kind": "dataset",
        "dims": list(data.shape),
        "axis_order": ["y_s", "x_s", "channel"],
        "dtype": dtype,
        "step_nm": list(step),
        "detector": None,
        "provenance": {"origin": "test"},
    }
    return IsmContainer(header=header, payload=data)


# ---------------------------------------------------------------- round trips

@given(
    st.integers(1, 6), st.integers(1, 6), st.integers(1, 5),
    st.sampled_from(["counts", "intensity"]),
    st.integers(0, 2 ** 31),
)
@settings(max_examples=40, deadline=None)
def test_round_trip_bit_identical(ny, nx, nc, dtype, seed):
    rng = np.random.default_rng(seed)
    if dtype == "counts":
        data = rng.integers(0, 2 ** 32, size=(ny, nx, nc), dtype=np.uint32)
    else:
        data = rng.random((ny, nx, nc))
    c = _dataset_container(data, dtype)
    import tempfile, os
    with tempfile.TemporaryDirectory() as tmp:
        p1, p2 = os.path.join(tmp, "a.ism"), os.path.join(tmp, "b.ism")
        cont.write(c, p1)
        back = cont.read(p1)
        cont.write(back, p2)
        assert open(p1, "rb").read() == open(p2, "rb").read()
    assert np.array_equal(back.payload, data)
    assert back.header == c.header


def test_counts_payload_byte_length(tmp_path):
    data = np.array([[1, 2], [3, 4]], dtype=np.uint32).reshape(2, 2, 1)
    path = tmp_path / "c.ism"
    cont.write(_dataset_container(data, "counts"), path)
    raw = path.read_bytes()
    (header_len,) = struct.unpack("<Q", raw[8:16])
    assert len(raw) - 16 - header_len == 16  # 4 pixels x uint32


def test_header_parseable_without_payload(tmp_path):
    data = np.ones((3, 3, 2))
    path = tmp_path / "c.ism"
    cont.write(_dataset_container(data, "intensity"), path)
    with open(path, "rb") as fh:
        assert fh.read(8) == b"ISMK0001"
        (n,) = struct.unpack("<Q", fh.read(8))
        header = json.loads(fh.read(n))
    assert header["dims"] == [3, 3, 2]


# ---------------------------------------------------------------- error paths

def test_write_rejects_dimension_mismatch():
    c = _dataset_container(np.ones((2, 2, 1)), "intensity")
    c.header["dims"] = [2, 3, 1]
    with pytest.raises(ContainerError, match="dimension mismatch"):
        cont.write(c, "/dev/null")


def test_read_rejects_bad_magic(tmp_path):
    path = tmp_path / "bad.ism"
    path.write_bytes(b"NOTMAGIC" + b"\0" * 32)
    with pytest.raises(ContainerError, match="bad magic"):
        cont.read(path)


def test_read_rejects_unknown_version(tmp_path):
    path = tmp_path / "v9.ism"
    c = _dataset_container(np.ones((2, 2, 1)), "intensity")
    c.header["version"] = 99
    blob = json.dumps(c.header, sort_keys=True, separators=(",", ":")).encode()
    with open(path, "wb") as fh:
        fh.write(b"ISMK0001")
        fh.write(struct.pack("<Q", len(blob)))
        fh.write(blob)
        fh.write(c.payload.astype("<f8").tobytes())
    with pytest.raises(ContainerError, match="unsupported version"):
        cont.read(path)


def test_read_rejects_truncated_payload(tmp_path):
    path = tmp_path / "t.ism"
    cont.write(_dataset_container(np.ones((4, 4, 1)), "intensity"), path)
    raw = path.read_bytes()
    path.write_bytes(raw[:-8])
    with pytest.raises(ContainerError, match="payload length mismatch"):
        cont.read(path)


def test_read_rejects_bad_dtype(tmp_path):
    path = tmp_path / "d.ism"
    c = _dataset_container(np.ones((2, 2, 1)), "intensity")
    c.header["dtype"] = "float16"
    blob = json.dumps(c.header, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(b"ISMK0001")
        fh.write(struct.pack("<Q", len(blob)))
        fh.write(blob)
        fh.write(c.payload.astype("<f8").tobytes())
    with pytest.raises(ContainerError, match="unknown dtype"):
        cont.read(path)


def test_read_rejects_garbage_header(tmp_path):
    path = tmp_path / "g.ism"
    with open(path, "wb") as fh:
        fh.write(b"ISMK0001")
        fh.write(struct.pack("<Q", 5))
        fh.write(b"{{{{{")
    with pytest.raises(ContainerError, match="JSON"):
        cont.read(path)


# ---------------------------------------------------------------- bridges

def test_dataset_bridge_round_trip(tmp_path):
    cfg = ideal_config(array_side=3)
    grid = square_grid(16, 40.0)
    det = ik.make_detector_map(cfg)
    rng = np.random.default_rng(0)
    ds = ik.IsmDataset(data=rng.integers(0, 100, (16, 16, 9)).astype(np.uint32),
                       dtype="counts", grid=grid, detector=det,
                       provenance={"note": "bridge"})
    path = tmp_path / "ds.ism"
    cont.write(cont.from_dataset(ds), path)
    back = cont.to_dataset(cont.read(path))
    assert np.array_equal(back.data, ds.data)
    assert back.grid == ds.grid
    assert back.detector.central_index == det.central_index
    assert np.allclose(back.detector.positions_nm, det.positions_nm)
    assert back.provenance == {"note": "bridge"}


def test_psf_bridge_round_trip(tmp_path):
    stack = ik.psf_stack(ideal_config(array_side=3), square_grid(24, 40.0))
    path = tmp_path / "psf.ism"
    cont.write(cont.from_psf_stack(stack), path)
    back = cont.to_psf_stack(cont.read(path))
    assert np.array_equal(back.data, stack.data)
    assert back.normalized
    assert back.grid == stack.grid


def test_recon_bridge_round_trip(tmp_path):
    grid = square_grid(8, 25.0)
    out = ik.ReconOutput(image=np.ones((8, 8)), grid=grid, method="sum",
                         iterations=0, shifts_used=None, flux_in=64.0,
                         flux_out=64.0)
    path = tmp_path / "img.ism"
    cont.write(cont.from_recon(out), path)
    image, back_grid, header = cont.to_image(cont.read(path))
    assert np.array_equal(image, np.ones((8, 8)))
    assert back_grid == grid
    assert header["method"] == "sum"
    assert header["flux_out"] == 64.0


def test_kind_mismatch_raises(tmp_path):
    stack = ik.psf_stack(ideal_config(array_side=3), square_grid(16, 40.0))
    path = tmp_path / "psf.ism"
    cont.write(cont.from_psf_stack(stack), path)
    with pytest.raises(ContainerError, match="expected a dataset"):
        cont.to_dataset(cont.read(path))


# ---------------------------------------------------------------- TIFF import

def _write_tiff(path, pages):
    from PIL import Image

    frames = [Image.fromarray(p) for p in pages]
    frames[0].save(path, save_all=True, append_images=frames[1:])


def test_tiff_import(tmp_path):
    cfg = ideal_config(array_side=3)
    det = ik.make_detector_map(cfg)
    grid = square_grid(12, 40.0)
    rng = np.random.default_rng(1)
    pages = [rng.integers(0, 60000, (12, 12)).astype(np.uint16) for _ in range(9)]
    path = tmp_path / "stack.tif"
    _write_tiff(path, pages)
    c = cont.import_tiff_stack(path, grid, det)
    assert c.header["dtype"] == "counts"
    assert c.payload.dtype == np.uint32  # 16-bit widened losslessly
    assert np.array_equal(c.payload[:, :, 4], pages[4].astype(np.uint32))
    ds = cont.to_dataset(c)
    assert ds.n_channels == 9


def test_tiff_import_page_count_mismatch(tmp_path):
    cfg = ideal_config(array_side=3)
    det = ik.make_detector_map(cfg)
    grid = square_grid(12, 40.0)
    pages = [np.zeros((12, 12), dtype=np.uint16) for _ in range(8)]
    path = tmp_path / "short.tif"
    _write_tiff(path, pages)
    with pytest.raises(ContainerError, match="page count"):
        cont.import_tiff_stack(path, grid, det)


def test_tiff_import_shape_mismatch(tmp_path):
    cfg = ideal_config(array_side=3)
    det = ik.make_detector_map(cfg)
    pages = [np.zeros((12, 12), dtype=np.uint16) for _ in range(9)]
    path = tmp_path / "shape.tif"
    _write_tiff(path, pages)
    with pytest.raises(ContainerError, match="page shape"):
        cont.import_tiff_stack(path, square_grid(16, 40.0), det)
