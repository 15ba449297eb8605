"""PSF model for a laser scanning microscope with a square detector array.

Every detector element acts as a small displaced pinhole. The scanned-image
PSF of the element at sample-plane offset ``x_d`` is the product of the
mirrored excitation PSF and the detection PSF (emission PSF blurred by the
square element aperture and translated to ``x_d``). All lengths are in
nanometers in the sample plane; physical detector dimensions are divided by
the magnification.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.special import j1

from .fourier import (
    axis_coords,
    crop_center,
    irfft2_im,
    mirror_center,
    peak_subpixel,
    rfft2_im,
)

GAUSSIAN_FWHM_FACTOR = 0.51   # FWHM = 0.51 * lambda / NA
AIRY_ZERO_FACTOR = 0.61       # first intensity zero at 0.61 * lambda / NA
FWHM_TO_SIGMA = 1.0 / (2.0 * math.sqrt(2.0 * math.log(2.0)))
PSF_MODELS = ("gaussian", "airy_scalar")


@dataclass(frozen=True)
class OpticalConfig:
    """Optical parameters of the instrument.

    Wavelengths are in nm; detector element size and pitch are physical
    (on the detector plane) in nm and get projected to the sample plane
    through the magnification.
    """

    lambda_exc_nm: float
    lambda_em_nm: float
    numerical_aperture: float
    refractive_index: float
    magnification: float
    array_side: int = 5
    element_size_nm: float = 50_000.0
    element_pitch_nm: float = 75_000.0
    psf_model: str = "gaussian"

    def __post_init__(self):
        if self.lambda_exc_nm <= 0:
            raise ValueError("excitation wavelength must be positive")
        if self.lambda_em_nm < self.lambda_exc_nm:
            raise ValueError("emission wavelength must be >= excitation wavelength")
        if not 0 < self.numerical_aperture <= self.refractive_index:
            raise ValueError("need 0 < NA <= refractive index")
        if self.magnification <= 0:
            raise ValueError("magnification must be positive")
        if self.array_side < 1 or self.array_side % 2 == 0:
            raise ValueError("array_side must be odd so a central element exists")
        if self.element_size_nm < 0 or self.element_pitch_nm <= 0:
            raise ValueError("element size must be >= 0 and pitch > 0")
        if self.element_size_nm > self.element_pitch_nm:
            raise ValueError("element size cannot exceed the pitch")
        if self.psf_model not in PSF_MODELS:
            raise ValueError(f"unknown psf_model {self.psf_model!r}")

    @property
    def n_channels(self) -> int:
        return self.array_side ** 2

    @property
    def pitch_sample_nm(self) -> float:
        return self.element_pitch_nm / self.magnification

    @property
    def element_sample_nm(self) -> float:
        return self.element_size_nm / self.magnification


@dataclass(frozen=True)
class ScanGrid:
    """Regular scan raster: pixel counts and pixel pitch in nm."""

    n_y: int
    n_x: int
    step_y: float
    step_x: float

    def __post_init__(self):
        if self.n_y < 1 or self.n_x < 1:
            raise ValueError("grid needs at least one pixel per axis")
        if self.step_y <= 0 or self.step_x <= 0:
            raise ValueError("grid steps must be positive")

    @property
    def shape(self) -> tuple[int, int]:
        return (self.n_y, self.n_x)

    def coords_y(self) -> np.ndarray:
        return axis_coords(self.n_y, self.step_y)

    def coords_x(self) -> np.ndarray:
        return axis_coords(self.n_x, self.step_x)

    def steps(self) -> np.ndarray:
        return np.array([self.step_y, self.step_x])


@dataclass(eq=False)
class DetectorMap:
    """Detector element positions projected onto the sample plane.

    ``positions_nm`` has one (y, x) row per channel, row-major over the
    lattice starting at the top-left element. ``central_index`` points at
    the (0, 0) element when one exists.
    """

    positions_nm: np.ndarray
    side: int
    pitch_nm: float
    central_index: int | None

    @property
    def n_channels(self) -> int:
        return len(self.positions_nm)


@dataclass(eq=False)
class PsfStack:
    """One scanned-image PSF per detector channel on a common grid.

    ``data`` is (n_y, n_x, n_channels), non-negative. When ``normalized``
    the sum over all pixels of all channels is one.
    """

    data: np.ndarray
    grid: ScanGrid
    detector: DetectorMap | None
    normalized: bool
    meta: dict = field(default_factory=dict)

    @property
    def n_channels(self) -> int:
        return self.data.shape[2]


@dataclass(eq=False)
class Fingerprint:
    """Per-channel total signal arranged on the detector lattice."""

    values: np.ndarray  # (side, side)


@dataclass(eq=False)
class ShiftVectors:
    """Per-channel displacement of the scanned image, (y, x) in nm.

    ``reliable`` flags channels whose vector came from a well-posed
    measurement; the others were imputed or are ill-posed.
    """

    vectors_nm: np.ndarray
    reliable: np.ndarray
    method: str

    @property
    def n_channels(self) -> int:
        return len(self.vectors_nm)

    def pixels(self, grid: ScanGrid) -> np.ndarray:
        """Vectors expressed in fractional pixels of ``grid``."""
        return self.vectors_nm / grid.steps()

    def subset(self, indices) -> "ShiftVectors":
        return ShiftVectors(self.vectors_nm[indices].copy(),
                            self.reliable[indices].copy(), self.method)


def make_detector_map(config: OpticalConfig) -> DetectorMap:
    """Square lattice of channel positions centered on the optical axis."""
    side = config.array_side
    pitch = config.pitch_sample_nm
    offsets = (np.arange(side) - side // 2).astype(float) * pitch
    yy, xx = np.meshgrid(offsets, offsets, indexing="ij")
    positions = np.stack([yy.ravel(), xx.ravel()], axis=1)
    central = (side // 2) * side + side // 2
    return DetectorMap(positions_nm=positions, side=side, pitch_nm=pitch,
                       central_index=central)


def gaussian_sigma(lambda_nm: float, na: float) -> float:
    return GAUSSIAN_FWHM_FACTOR * lambda_nm / na * FWHM_TO_SIGMA


def airy_first_zero(lambda_nm: float, na: float) -> float:
    return AIRY_ZERO_FACTOR * lambda_nm / na


def _model_psf(model: str, lambda_nm: float, na: float, grid: ScanGrid) -> np.ndarray:
    """Unit-peak intensity PSF centered at the grid origin."""
    y = grid.coords_y()[:, None]
    x = grid.coords_x()[None, :]
    r2 = y * y + x * x
    if model == "gaussian":
        sigma = gaussian_sigma(lambda_nm, na)
        return np.exp(-0.5 * r2 / sigma ** 2)
    if model == "airy_scalar":
        v = (2.0 * np.pi * na / lambda_nm) * np.sqrt(r2)
        out = np.ones_like(v)
        nz = v > 0
        out[nz] = (2.0 * j1(v[nz]) / v[nz]) ** 2
        return out
    raise ValueError(f"unknown psf_model {model!r}")


def _analytic_energy(model: str, lambda_nm: float, na: float) -> float:
    """Plane integral of the unit-peak PSF, in nm^2."""
    if model == "gaussian":
        sigma = gaussian_sigma(lambda_nm, na)
        return 2.0 * math.pi * sigma ** 2
    kappa = 2.0 * math.pi * na / lambda_nm
    return 4.0 * math.pi / kappa ** 2


def _warn_if_clipped(image: np.ndarray, grid: ScanGrid, model: str,
                     lambda_nm: float, na: float, label: str) -> None:
    captured = image.sum() * grid.step_y * grid.step_x
    fraction = captured / _analytic_energy(model, lambda_nm, na)
    if fraction < 0.99:
        warnings.warn(
            f"grid captures only {fraction:.1%} of the {label} PSF energy; "
            "enlarge the field of view",
            stacklevel=3,
        )


def excitation_psf(config: OpticalConfig, grid: ScanGrid) -> np.ndarray:
    """Excitation intensity PSF, unit peak at the grid center pixel."""
    img = _model_psf(config.psf_model, config.lambda_exc_nm,
                     config.numerical_aperture, grid)
    _warn_if_clipped(img, grid, config.psf_model, config.lambda_exc_nm,
                     config.numerical_aperture, "excitation")
    return img


def emission_psf(config: OpticalConfig, grid: ScanGrid) -> np.ndarray:
    """Emission intensity PSF, unit peak at the grid center pixel."""
    img = _model_psf(config.psf_model, config.lambda_em_nm,
                     config.numerical_aperture, grid)
    _warn_if_clipped(img, grid, config.psf_model, config.lambda_em_nm,
                     config.numerical_aperture, "emission")
    return img


def _tail_radius_nm(config: OpticalConfig) -> float:
    """Radius beyond which the model PSF stays below 1e-9 of its peak.

    The Airy envelope decays too slowly for the literal rule, so it is
    capped at ten dark-ring spacings.
    """
    lam = max(config.lambda_exc_nm, config.lambda_em_nm)
    if config.psf_model == "gaussian":
        sigma = gaussian_sigma(lam, config.numerical_aperture)
        return sigma * math.sqrt(2.0 * math.log(1e9))
    return 10.0 * airy_first_zero(lam, config.numerical_aperture)


def _padding_px(config: OpticalConfig, grid: ScanGrid, extra_nm: float) -> tuple[int, int]:
    reach = _tail_radius_nm(config) + 0.5 * config.element_sample_nm + extra_nm
    return (int(math.ceil(reach / grid.step_y)),
            int(math.ceil(reach / grid.step_x)))


def _check_offset_inside(grid: ScanGrid, y_nm: float, x_nm: float) -> None:
    lim_y = min(grid.n_y // 2, grid.n_y - 1 - grid.n_y // 2) * grid.step_y
    lim_x = min(grid.n_x // 2, grid.n_x - 1 - grid.n_x // 2) * grid.step_x
    if abs(y_nm) > lim_y or abs(x_nm) > lim_x:
        raise ValueError(
            f"detector offset ({y_nm:g}, {x_nm:g}) nm falls outside the grid; "
            "the detection PSF would be clipped"
        )


def _pinhole_blur_shift(em_spectrum: np.ndarray, grid: ScanGrid,
                        aperture_nm: float, offset_nm: tuple[float, float]) -> np.ndarray:
    """Blur by a unit-integral square aperture and translate to ``offset_nm``.

    Both operations act in the frequency domain: the aperture transform is a
    separable sinc and the translation is a phase ramp, so fractional-pixel
    offsets are exact.
    """
    ny, nx = grid.n_y, grid.n_x
    fy = np.fft.fftfreq(ny, d=grid.step_y)[:, None]
    fx = np.fft.rfftfreq(nx, d=grid.step_x)[None, :]
    window = np.sinc(aperture_nm * fy) * np.sinc(aperture_nm * fx)
    phase = np.exp(-2j * np.pi * (fy * offset_nm[0] + fx * offset_nm[1]))
    out = irfft2_im(em_spectrum * window * phase, (ny, nx))
    np.maximum(out, 0.0, out=out)
    return out


def detection_psf(config: OpticalConfig, grid: ScanGrid,
                  x_d_nm: tuple[float, float]) -> np.ndarray:
    """Detection PSF of the element at sample-plane offset ``x_d_nm`` (y, x).

    Emission PSF convolved with the square element aperture (side
    element_size / magnification) and centered at the offset. Computed on a
    padded grid so the periodic convolution does not wrap.
    """
    yd, xd = float(x_d_nm[0]), float(x_d_nm[1])
    _check_offset_inside(grid, yd, xd)
    py, px = _padding_px(config, grid, extra_nm=max(abs(yd), abs(xd)))
    padded = ScanGrid(grid.n_y + 2 * py, grid.n_x + 2 * px, grid.step_y, grid.step_x)
    em = _model_psf(config.psf_model, config.lambda_em_nm,
                    config.numerical_aperture, padded)
    blurred = _pinhole_blur_shift(rfft2_im(em), padded,
                                  config.element_sample_nm, (yd, xd))
    return np.ascontiguousarray(crop_center(blurred, grid.shape))


def psf_stack(config: OpticalConfig, grid: ScanGrid, *, normalize: bool = True) -> PsfStack:
    """Complete PSF of every detector channel on ``grid``.

    Each channel is the pointwise product of the mirrored excitation PSF and
    that channel's detection PSF. With ``normalize`` the stack is scaled so
    all pixels of all channels sum to one.
    """
    detector = make_detector_map(config)
    for yd, xd in detector.positions_nm:
        _check_offset_inside(grid, yd, xd)
    extra = float(np.max(np.abs(detector.positions_nm)))
    py, px = _padding_px(config, grid, extra_nm=extra)
    padded = ScanGrid(grid.n_y + 2 * py, grid.n_x + 2 * px, grid.step_y, grid.step_x)

    exc = mirror_center(_model_psf(config.psf_model, config.lambda_exc_nm,
                                   config.numerical_aperture, padded))
    em_spectrum = rfft2_im(_model_psf(config.psf_model, config.lambda_em_nm,
                                      config.numerical_aperture, padded))
    aperture = config.element_sample_nm

    data = np.empty((grid.n_y, grid.n_x, detector.n_channels))
    for c, (yd, xd) in enumerate(detector.positions_nm):
        h_det = _pinhole_blur_shift(em_spectrum, padded, aperture, (yd, xd))
        data[:, :, c] = crop_center(exc * h_det, grid.shape)
    np.maximum(data, 0.0, out=data)

    if normalize:
        total = data.sum()
        if total <= 0:
            raise ValueError("PSF stack has zero total energy")
        data /= total

    meta = {"psf_model": config.psf_model,
            "lambda_exc_nm": config.lambda_exc_nm,
            "lambda_em_nm": config.lambda_em_nm,
            "numerical_aperture": config.numerical_aperture,
            "peak_refinement": "parabolic"}
    return PsfStack(data=data, grid=grid, detector=detector,
                    normalized=normalize, meta=meta)


def fingerprint_from_psf(stack: PsfStack) -> Fingerprint:
    """Per-channel pixel sums arranged on the detector lattice."""
    if stack.detector is None:
        raise ValueError("PSF stack carries no detector map")
    side = stack.detector.side
    if stack.n_channels != side * side:
        raise ValueError("channel count does not fill the detector lattice")
    return Fingerprint(stack.data.sum(axis=(0, 1)).reshape(side, side))


ILL_POSED_RTOL = 1e-6


def _is_ill_posed(image: np.ndarray, peak_idx: tuple[int, int]) -> bool:
    """True when a near-global maximum exists away from the peak's 3x3 block."""
    near = image >= image[peak_idx] * (1.0 - ILL_POSED_RTOL)
    iy, ix = peak_idx
    near[max(iy - 1, 0):iy + 2, max(ix - 1, 0):ix + 2] = False
    return bool(near.any())


def shift_vectors_from_psf(stack: PsfStack, *, subpixel: bool = True) -> ShiftVectors:
    """Peak position of each channel PSF relative to the grid origin, in nm.

    Channels whose PSF has several comparable global maxima are flagged as
    not reliable (the shift is ill-posed) but still carry the argmax value.
    """
    grid = stack.grid
    cy, cx = grid.n_y // 2, grid.n_x // 2
    n = stack.n_channels
    vectors = np.zeros((n, 2))
    reliable = np.ones(n, dtype=bool)
    for c in range(n):
        img = stack.data[:, :, c]
        if img.max() <= 0:
            reliable[c] = False
            continue
        peak_idx = np.unravel_index(int(np.argmax(img)), img.shape)
        if _is_ill_posed(img, peak_idx):
            reliable[c] = False
        y, x = peak_subpixel(img, periodic=False, refine=subpixel)
        vectors[c] = ((y - cy) * grid.step_y, (x - cx) * grid.step_x)
    method = "argmax+parabolic" if subpixel else "argmax"
    return ShiftVectors(vectors_nm=vectors, reliable=reliable, method=method)


def overlap_ratio(config: OpticalConfig, step_nm: float) -> float:
    """Overlap between micro-images of adjacent scan points, in (-inf, 1].

    Computed as (D - M * step) / D with D the physical detector width
    (array_side - 1) * pitch + element size.
    """
    if step_nm <= 0:
        raise ValueError("scan step must be positive")
    width = (config.array_side - 1) * config.element_pitch_nm + config.element_size_nm
    return (width - config.magnification * step_nm) / width
