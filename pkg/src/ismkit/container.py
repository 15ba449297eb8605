"""Bit-exact single-file storage for datasets, PSF stacks, and images.

Layout: 8-byte magic ``ISMK0001``, a little-endian uint64 header length, a
UTF-8 JSON header, then the raw payload (little-endian, row-major; float64
for intensity-like data, uint32 for counts). Axis order is fixed as
(y_s, x_s, channel) with channels row-major over the detector lattice
starting top-left.
"""
from __future__ import annotations

import json
import struct
from dataclasses import dataclass

import numpy as np

from .optics import DetectorMap, PsfStack, ScanGrid
from .reconstruct import ReconOutput
from .simulate import IsmDataset

MAGIC = b"ISMK0001"
FORMAT_VERSION = 1
KINDS = ("dataset", "psf", "image")
_BINARY = {"counts": np.dtype("<u4"), "intensity": np.dtype("<f8")}
_AXES = {"dataset": ["y_s", "x_s", "channel"],
         "psf": ["y_s", "x_s", "channel"],
         "image": ["y_s", "x_s"]}


class ContainerError(ValueError):
    """Raised for malformed files or inconsistent container contents."""


@dataclass(eq=False)
class IsmContainer:
    header: dict
    payload: np.ndarray


def _validate(container: IsmContainer) -> None:
    header, payload = container.header, container.payload
    version = header.get("version")
    if version != FORMAT_VERSION:
        raise ContainerError(f"unsupported version {version!r}")
    kind = header.get("kind")
    if kind not in KINDS:
        raise ContainerError(f"unknown kind {kind!r}")
    dtype = header.get("dtype")
    if dtype not in _BINARY:
        raise ContainerError(f"unknown dtype {dtype!r}")
    if kind != "dataset" and dtype != "intensity":
        raise ContainerError(f"kind {kind!r} requires intensity dtype")
    dims = header.get("dims")
    if (not isinstance(dims, list) or not dims
            or not all(isinstance(d, int) and d > 0 for d in dims)):
        raise ContainerError("dims must be a list of positive integers")
    if header.get("axis_order") != _AXES[kind]:
        raise ContainerError(f"axis order must be {_AXES[kind]} for kind {kind!r}")
    if tuple(dims) != payload.shape:
        raise ContainerError("dimension mismatch between header and payload")
    steps = header.get("step_nm")
    if (not isinstance(steps, list) or len(steps) != 2
            or not all(float(s) > 0 for s in steps)):
        raise ContainerError("step_nm must be two positive numbers")
    if np.any(payload < 0):
        raise ContainerError("payload values must be non-negative")


def _header_bytes(header: dict) -> bytes:
    return json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")


def write(container: IsmContainer, path) -> None:
    """Serialize the container; the write is rejected unless it validates."""
    _validate(container)
    blob = _header_bytes(container.header)
    binary = _BINARY[container.header["dtype"]]
    payload = np.ascontiguousarray(container.payload).astype(binary, copy=False)
    if container.header["dtype"] == "counts":
        if np.any(container.payload > np.iinfo(np.uint32).max):
            raise ContainerError("counts exceed the uint32 range")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<Q", len(blob)))
        fh.write(blob)
        fh.write(payload.tobytes(order="C"))


def read(path) -> IsmContainer:
    """Parse and validate a container file."""
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[:8] != MAGIC:
        raise ContainerError(f"{path}: bad magic")
    if len(raw) < 16:
        raise ContainerError(f"{path}: truncated header")
    (header_len,) = struct.unpack("<Q", raw[8:16])
    if 16 + header_len > len(raw):
        raise ContainerError(f"{path}: truncated header")
    try:
        header = json.loads(raw[16:16 + header_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ContainerError(f"{path}: header is not valid JSON: {exc}") from exc

    dtype = header.get("dtype")
    if dtype not in _BINARY:
        raise ContainerError(f"{path}: unknown dtype {dtype!r}")
    dims = header.get("dims")
    if not isinstance(dims, list) or not all(isinstance(d, int) for d in dims):
        raise ContainerError(f"{path}: dims must be a list of integers")
    binary = _BINARY[dtype]
    expected = int(np.prod(dims)) * binary.itemsize
    body = raw[16 + header_len:]
    if len(body) != expected:
        raise ContainerError(f"{path}: payload length mismatch "
                             f"(expected {expected} bytes, found {len(body)})")
    payload = np.frombuffer(body, dtype=binary).reshape(dims).copy()
    container = IsmContainer(header=header, payload=payload)
    try:
        _validate(container)
    except ContainerError as exc:
        raise ContainerError(f"{path}: {exc}") from exc
    return container


def _grid_to_header(grid: ScanGrid) -> list[float]:
    return [grid.step_y, grid.step_x]


def _detector_to_header(det: DetectorMap | None):
    if det is None:
        return None
    return {"side": det.side, "pitch_nm": det.pitch_nm,
            "central_index": det.central_index,
            "positions_nm": det.positions_nm.tolist()}


def _detector_from_header(blob) -> DetectorMap | None:
    if blob is None:
        return None
    return DetectorMap(positions_nm=np.asarray(blob["positions_nm"], dtype=float),
                       side=int(blob["side"]), pitch_nm=float(blob["pitch_nm"]),
                       central_index=(None if blob["central_index"] is None
                                      else int(blob["central_index"])))


def from_dataset(dataset: IsmDataset, provenance: dict | None = None) -> IsmContainer:
    header = {
        "version": FORMAT_VERSION,
        "kind": "dataset",
        "dims": list(dataset.data.shape),
        "axis_order": _AXES["dataset"],
        "dtype": dataset.dtype,
        "step_nm": _grid_to_header(dataset.grid),
        "detector": _detector_to_header(dataset.detector),
        "provenance": provenance if provenance is not None else dataset.provenance,
    }
    return IsmContainer(header=header, payload=dataset.data)


def to_dataset(container: IsmContainer) -> IsmDataset:
    header = container.header
    if header["kind"] != "dataset":
        raise ContainerError(f"expected a dataset container, found {header['kind']!r}")
    ny, nx, _ = header["dims"]
    grid = ScanGrid(ny, nx, float(header["step_nm"][0]), float(header["step_nm"][1]))
    return IsmDataset(data=container.payload, dtype=header["dtype"], grid=grid,
                      detector=_detector_from_header(header.get("detector")),
                      provenance=header.get("provenance", {}))


def from_psf_stack(stack: PsfStack, provenance: dict | None = None) -> IsmContainer:
    header = {
        "version": FORMAT_VERSION,
        "kind": "psf",
        "dims": list(stack.data.shape),
        "axis_order": _AXES["psf"],
        "dtype": "intensity",
        "step_nm": _grid_to_header(stack.grid),
        "detector": _detector_to_header(stack.detector),
        "normalized": stack.normalized,
        "provenance": provenance if provenance is not None else stack.meta,
    }
    return IsmContainer(header=header, payload=stack.data)


def to_psf_stack(container: IsmContainer) -> PsfStack:
    header = container.header
    if header["kind"] != "psf":
        raise ContainerError(f"expected a psf container, found {header['kind']!r}")
    ny, nx, _ = header["dims"]
    grid = ScanGrid(ny, nx, float(header["step_nm"][0]), float(header["step_nm"][1]))
    return PsfStack(data=container.payload, grid=grid,
                    detector=_detector_from_header(header.get("detector")),
                    normalized=bool(header.get("normalized", False)),
                    meta=header.get("provenance", {}))


def from_recon(recon: ReconOutput, provenance: dict | None = None) -> IsmContainer:
    header = {
        "version": FORMAT_VERSION,
        "kind": "image",
        "dims": list(recon.image.shape),
        "axis_order": _AXES["image"],
        "dtype": "intensity",
        "step_nm": _grid_to_header(recon.grid),
        "method": recon.method,
        "iterations": recon.iterations,
        "flux_in": recon.flux_in,
        "flux_out": recon.flux_out,
        "provenance": provenance if provenance is not None else {},
    }
    return IsmContainer(header=header, payload=recon.image)


def to_image(container: IsmContainer) -> tuple[np.ndarray, ScanGrid, dict]:
    header = container.header
    if header["kind"] != "image":
        raise ContainerError(f"expected an image container, found {header['kind']!r}")
    ny, nx = header["dims"]
    grid = ScanGrid(ny, nx, float(header["step_nm"][0]), float(header["step_nm"][1]))
    return container.payload, grid, header


def import_tiff_stack(path, grid: ScanGrid, detector: DetectorMap) -> IsmContainer:
    """Bridge a multi-page grayscale TIFF (one page per channel) to a container.

    Integer pages become counts widened to uint32; float pages become
    intensity. Grid and detector metadata are supplied by the caller.
    """
    from PIL import Image, ImageSequence

    with Image.open(path) as img:
        pages = [np.asarray(frame) for frame in ImageSequence.Iterator(img)]
    if len(pages) != detector.n_channels:
        raise ContainerError(
            f"{path}: page count {len(pages)} does not match the "
            f"{detector.n_channels}-channel detector map")
    shapes = {p.shape for p in pages}
    if len(shapes) != 1:
        raise ContainerError(f"{path}: pages have inconsistent shapes {shapes}")
    if pages[0].ndim != 2:
        raise ContainerError(f"{path}: pages must be single-channel grayscale")
    if pages[0].shape != grid.shape:
        raise ContainerError(f"{path}: page shape {pages[0].shape} does not "
                             f"match the grid {grid.shape}")
    stack = np.stack(pages, axis=2)
    if np.issubdtype(stack.dtype, np.integer):
        if np.any(stack < 0) or np.any(stack > np.iinfo(np.uint32).max):
            raise ContainerError(f"{path}: integer values outside the uint32 range")
        payload, dtype = stack.astype(np.uint32), "counts"
    elif np.issubdtype(stack.dtype, np.floating):
        payload, dtype = stack.astype(np.float64), "intensity"
    else:
        raise ContainerError(f"{path}: unsupported pixel type {stack.dtype}")
    dataset = IsmDataset(data=payload, dtype=dtype, grid=grid, detector=detector,
                         provenance={"source": "tiff_import", "path": str(path)})
    return from_dataset(dataset)
