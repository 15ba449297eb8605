"""Ground-truth phantoms and the noisy forward model.

The forward model convolves an object with every channel PSF, optionally
adds a background field, and draws Poisson counts. Convolutions run on a
zero-padded grid (stripped afterwards) so periodic wrap-around does not
leak signal across the field of view.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .fourier import crop_center, irfft2_im, kernel_rfft, pad_center, rfft2_im
from .optics import DetectorMap, PsfStack, ScanGrid

PHANTOM_KINDS = ("point_sources", "line_pairs", "siemens_star", "imported")
PHOTONS_PER_POINT = 1e4
DEFAULT_TOTAL_PHOTONS = 1e6


@dataclass(eq=False)
class Phantom:
    """Non-negative object on a scan grid, scaled to its photon budget."""

    image: np.ndarray
    kind: str
    total_photons: float
    grid: ScanGrid


@dataclass(eq=False)
class IsmDataset:
    """Measured or simulated scanned images, (n_y, n_x, n_channels).

    ``dtype`` is "intensity" (non-negative reals) or "counts"
    (non-negative integers).
    """

    data: np.ndarray
    dtype: str
    grid: ScanGrid
    detector: DetectorMap | None
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.data.ndim != 3:
            raise ValueError("dataset must be (n_y, n_x, n_channels)")
        if self.data.shape[:2] != self.grid.shape:
            raise ValueError("dataset shape does not match its grid")
        if self.detector is not None and self.data.shape[2] != self.detector.n_channels:
            raise ValueError("channel count does not match the detector map")
        if self.dtype not in ("counts", "intensity"):
            raise ValueError(f"unknown dataset dtype {self.dtype!r}")

    @property
    def n_channels(self) -> int:
        return self.data.shape[2]

    def total(self) -> float:
        return float(self.data.sum())


@dataclass(eq=False)
class BackgroundModel:
    """Non-negative background rates: scalar, per-channel, or a full field."""

    values: np.ndarray

    def __init__(self, values):
        values = np.asarray(values, dtype=float)
        if values.ndim not in (0, 1, 3):
            raise ValueError("background must be scalar, per-channel, or a full field")
        if np.any(values < 0):
            raise ValueError("background rates must be non-negative")
        self.values = values

    def field(self, shape: tuple[int, int, int]) -> np.ndarray:
        v = self.values
        if v.ndim == 1 and v.shape[0] != shape[2]:
            raise ValueError("per-channel background does not match the channel count")
        if v.ndim == 3 and v.shape != shape:
            raise ValueError("background field shape does not match the dataset")
        return np.broadcast_to(v, shape)


def _place_points(image: np.ndarray, grid: ScanGrid, positions_nm, weight: float) -> None:
    cy, cx = grid.n_y // 2, grid.n_x // 2
    for y_nm, x_nm in positions_nm:
        iy = cy + int(round(y_nm / grid.step_y))
        ix = cx + int(round(x_nm / grid.step_x))
        if not (0 <= iy < grid.n_y and 0 <= ix < grid.n_x):
            raise ValueError(f"point ({y_nm:g}, {x_nm:g}) nm falls outside the grid")
        image[iy, ix] += weight


def _points_phantom(grid, positions_nm=None, n_points=5, seed=None):
    image = np.zeros(grid.shape)
    if positions_nm is None:
        rng = np.random.default_rng(0 if seed is None else seed)
        half_y = 0.3 * grid.n_y * grid.step_y
        half_x = 0.3 * grid.n_x * grid.step_x
        positions_nm = np.stack([rng.uniform(-half_y, half_y, n_points),
                                 rng.uniform(-half_x, half_x, n_points)], axis=1)
    _place_points(image, grid, positions_nm, 1.0)
    n = len(positions_nm)
    return image, n * PHOTONS_PER_POINT


def _line_pairs_phantom(grid, spacing_nm=None, length_frac=0.6):
    if spacing_nm is None or spacing_nm <= 0:
        raise ValueError("line_pairs needs a positive spacing_nm")
    image = np.zeros(grid.shape)
    cy, cx = grid.n_y // 2, grid.n_x // 2
    half_len = max(1, int(round(0.5 * length_frac * grid.n_y)))
    rows = slice(max(cy - half_len, 0), min(cy + half_len + 1, grid.n_y))
    for side in (-0.5, 0.5):
        ix = cx + int(round(side * spacing_nm / grid.step_x))
        if not 0 <= ix < grid.n_x:
            raise ValueError("line pair does not fit on the grid")
        image[rows, ix] += 1.0
    return image, DEFAULT_TOTAL_PHOTONS


def _siemens_star_phantom(grid, n_spokes=8, radius_nm=None):
    if n_spokes < 1:
        raise ValueError("siemens_star needs at least one spoke")
    extent = min(grid.n_y * grid.step_y, grid.n_x * grid.step_x)
    radius = 0.4 * extent if radius_nm is None else float(radius_nm)
    if radius <= 0:
        raise ValueError("siemens_star radius must be positive")
    y = grid.coords_y()[:, None]
    x = grid.coords_x()[None, :]
    theta = np.arctan2(y, x) % (2.0 * np.pi)
    wedge = np.floor(theta / (np.pi / n_spokes)).astype(int)
    image = ((wedge % 2 == 0) & (y * y + x * x <= radius * radius)).astype(float)
    return image, DEFAULT_TOTAL_PHOTONS


def make_phantom(kind: str, grid: ScanGrid, *, photons: float | None = None,
                 seed: int | None = None, **params) -> Phantom:
    """Deterministic test object of the given kind, scaled to ``photons``.

    Point phantoms default to 1e4 photons per emitter; the other kinds
    default to 1e6 photons total.
    """
    if kind == "point_sources":
        image, default_photons = _points_phantom(grid, seed=seed, **params)
    elif kind == "line_pairs":
        image, default_photons = _line_pairs_phantom(grid, **params)
    elif kind == "siemens_star":
        image, default_photons = _siemens_star_phantom(grid, **params)
    elif kind == "imported":
        if "image" not in params:
            raise ValueError("imported phantom needs an image= array")
        return phantom_from_array(params["image"], grid, photons=photons)
    else:
        raise ValueError(f"unknown phantom kind {kind!r}")
    return _finish_phantom(image, kind, grid,
                           default_photons if photons is None else photons)


def _finish_phantom(image: np.ndarray, kind: str, grid: ScanGrid,
                    photons: float) -> Phantom:
    total = image.sum()
    if total <= 0:
        raise ValueError("phantom is empty")
    image = image * (photons / total)
    return Phantom(image=image, kind=kind, total_photons=float(image.sum()), grid=grid)


def phantom_from_array(array, grid: ScanGrid, *, photons: float | None = None) -> Phantom:
    """Wrap an existing grayscale array as a phantom on ``grid``."""
    image = np.asarray(array, dtype=float)
    if image.shape != grid.shape:
        raise ValueError("array shape does not match the grid")
    if np.any(image < 0):
        raise ValueError("phantom values must be non-negative")
    budget = image.sum() if photons is None else photons
    return _finish_phantom(image.copy(), "imported", grid, budget)


def phantom_from_file(path, grid: ScanGrid, *, photons: float | None = None) -> Phantom:
    """Load a grayscale phantom from a PGM image or a CSV table."""
    path = str(path)
    if path.lower().endswith((".pgm", ".png", ".tif", ".tiff")):
        from PIL import Image

        image = np.asarray(Image.open(path), dtype=float)
    elif path.lower().endswith(".csv"):
        image = np.loadtxt(path, delimiter=",", dtype=float, ndmin=2)
    else:
        raise ValueError("phantom files must be PGM-style images or CSV")
    return phantom_from_array(image, grid, photons=photons)


def _resolve_padding(pad, grid: ScanGrid) -> tuple[int, int]:
    if pad == "auto":
        return grid.n_y // 2, grid.n_x // 2
    if pad == 0 or pad is None:
        return 0, 0
    py, px = pad
    return int(py), int(px)


def forward(phantom: Phantom, stack: PsfStack, *, pad="auto") -> IsmDataset:
    """Noise-free forward model: each channel is object * channel PSF.

    ``pad`` controls the zero-padding of the convolution grid: "auto" pads
    by half the grid per axis, 0 runs the bare periodic convolution, and an
    explicit (pad_y, pad_x) tuple is used as given.
    """
    if phantom.grid != stack.grid:
        raise ValueError("phantom and PSF stack must share a grid")
    grid = phantom.grid
    py, px = _resolve_padding(pad, grid)
    obj = pad_center(phantom.image, py, px)
    kernels = kernel_rfft(pad_center(stack.data, py, px))
    spec = rfft2_im(obj)[:, :, None]
    data = irfft2_im(spec * kernels, obj.shape[:2])
    data = np.ascontiguousarray(crop_center(data, grid.shape))
    np.maximum(data, 0.0, out=data)
    provenance = {"source": "forward", "phantom_kind": phantom.kind,
                  "total_photons": phantom.total_photons,
                  "pad_px": [py, px]}
    return IsmDataset(data=data, dtype="intensity", grid=grid,
                      detector=stack.detector, provenance=provenance)


def forward_with_background(phantom: Phantom, stack: PsfStack,
                            background: BackgroundModel, *, pad="auto") -> IsmDataset:
    """Forward model plus a pointwise non-negative background field."""
    ds = forward(phantom, stack, pad=pad)
    ds.data = ds.data + background.field(ds.data.shape)
    ds.provenance["background"] = True
    return ds


def add_poisson(dataset: IsmDataset, seed: int) -> IsmDataset:
    """Draw one Poisson count per pixel per channel with the intensity as mean.

    A single seeded generator produces the whole dataset in one pass, so the
    result is independent of any execution schedule and reproducible.
    """
    if dataset.dtype != "intensity":
        raise ValueError("Poisson noise applies to intensity datasets")
    if np.any(dataset.data < 0):
        raise ValueError("intensities must be non-negative")
    rng = np.random.default_rng(seed)
    counts = rng.poisson(dataset.data)
    provenance = dict(dataset.provenance)
    provenance["poisson_seed"] = int(seed)
    return IsmDataset(data=counts, dtype="counts", grid=dataset.grid,
                      detector=dataset.detector, provenance=provenance)
