"""Reconstruction paths: channel sum, adaptive pixel reassignment, and
multi-image Richardson-Lucy deconvolution.

The deconvolution maximizes the Poisson likelihood jointly over all detector
channels. Its convolutions are circular on the dataset grid, which makes the
total photon flux of the estimate equal the dataset total at every iteration
(no background term) up to floating-point roundoff.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.fft as _fft

from .fourier import fourier_shift, irfft2_im, kernel_rfft, peak_subpixel, rfft2_im
from .optics import Fingerprint, PsfStack, ScanGrid, ShiftVectors
from .simulate import BackgroundModel, IsmDataset

RECON_METHODS = ("sum", "apr", "rl", "rl_background")
STACK_NORM_TOL = 1e-9
SPECTRAL_ZERO_RTOL = 1e-12
PEAK_TO_MEDIAN_MIN = 3.0


@dataclass(eq=False)
class ReconOutput:
    """A reconstructed image with flux accounting and provenance."""

    image: np.ndarray
    grid: ScanGrid
    method: str
    iterations: int
    shifts_used: ShiftVectors | None
    flux_in: float
    flux_out: float
    meta: dict = field(default_factory=dict)


@dataclass(eq=False)
class Correlogram:
    """Phase correlation of one channel against a reference channel.

    ``image`` is real with zero lag at the center pixel; the peak location
    encodes the relative shift of the channel content.
    """

    image: np.ndarray
    channel: int
    reference: int


def sum_image(dataset: IsmDataset) -> ReconOutput:
    """Pixel-wise sum over channels, the open-pinhole equivalent image."""
    image = dataset.data.sum(axis=2, dtype=float)
    flux = float(image.sum())
    return ReconOutput(image=image, grid=dataset.grid, method="sum",
                       iterations=0, shifts_used=None,
                       flux_in=dataset.total(), flux_out=flux)


def _phase_correlation(spec_c: np.ndarray, spec_ref: np.ndarray) -> np.ndarray:
    cross = spec_c * np.conj(spec_ref)
    mag = np.abs(cross)
    floor = SPECTRAL_ZERO_RTOL * mag.max()
    weight = np.zeros_like(cross)
    ok = mag > floor
    weight[ok] = cross[ok] / mag[ok]
    return _fft.fftshift(_fft.ifft2(weight).real)


def correlogram(dataset: IsmDataset, channel: int, reference: int) -> Correlogram:
    """Phase correlation of ``channel`` against ``reference``.

    Frequency bins whose cross-spectrum magnitude is negligible are dropped
    from the unit-modulus normalization.
    """
    i_c = dataset.data[:, :, channel].astype(float)
    i_ref = dataset.data[:, :, reference].astype(float)
    if i_c.sum() <= 0 or i_ref.sum() <= 0:
        raise ValueError("empty channel: phase correlation needs nonzero signal")
    image = _phase_correlation(_fft.fft2(i_c), _fft.fft2(i_ref))
    return Correlogram(image=image, channel=channel, reference=reference)


def _fit_radial_slope(vectors_nm: np.ndarray, positions_nm: np.ndarray,
                      mask: np.ndarray) -> float:
    """Least-squares scalar s in mu = s * x_d over the masked channels."""
    mu = vectors_nm[mask].ravel()
    xd = positions_nm[mask].ravel()
    denom = float(xd @ xd)
    if denom == 0.0:
        raise ValueError("no off-axis reliable channels to fit the shift model")
    return float(mu @ xd) / denom


def estimate_shifts(dataset: IsmDataset, *, subpixel: bool = True) -> ShiftVectors:
    """Shift of every channel against the central one, via phase correlation.

    The peak of each correlogram gives the shift; a parabola through the
    peak and its two neighbors per axis refines it to a fraction of a pixel
    (disable with ``subpixel``). Channels whose correlogram peak does not
    clear three times the median absolute level are flagged unreliable and
    imputed from the linear model mu = s * x_d fitted to the reliable ones.
    """
    det = dataset.detector
    if det is None or det.central_index is None:
        raise ValueError("dataset has no central detector channel")
    ref = det.central_index
    i_ref = dataset.data[:, :, ref].astype(float)
    if i_ref.sum() <= 0:
        raise ValueError("empty channel: the central channel has no signal")
    spec_ref = _fft.fft2(i_ref)

    grid = dataset.grid
    cy, cx = grid.n_y // 2, grid.n_x // 2
    n = dataset.n_channels
    vectors = np.zeros((n, 2))
    reliable = np.ones(n, dtype=bool)
    for c in range(n):
        if c == ref:
            continue
        i_c = dataset.data[:, :, c].astype(float)
        if i_c.sum() <= 0:
            reliable[c] = False
            continue
        corr = _phase_correlation(_fft.fft2(i_c), spec_ref)
        peak = corr.max()
        if peak < PEAK_TO_MEDIAN_MIN * np.median(np.abs(corr)):
            reliable[c] = False
            continue
        y, x = peak_subpixel(corr, periodic=True, refine=subpixel)
        vectors[c] = ((y - cy) * grid.step_y, (x - cx) * grid.step_x)

    if not reliable.all():
        fit_mask = reliable.copy()
        fit_mask[ref] = False
        slope = _fit_radial_slope(vectors, det.positions_nm, fit_mask)
        vectors[~reliable] = slope * det.positions_nm[~reliable]

    method = "phase_correlation" + ("+parabolic" if subpixel else "")
    return ShiftVectors(vectors_nm=vectors, reliable=reliable, method=method)


INTEGER_SHIFT_TOL = 1e-9


def apr(dataset: IsmDataset, shifts: ShiftVectors) -> ReconOutput:
    """Adaptive pixel reassignment: register every channel by its shift, sum.

    Integer shifts use exact circular rolls; fractional shifts use the
    Fourier shift theorem. Interpolation ringing below zero is clipped and
    the total is rescaled, so the output is non-negative and carries exactly
    the input flux.
    """
    if shifts.n_channels != dataset.n_channels:
        raise ValueError("shift vectors must cover all channels")
    grid = dataset.grid
    shift_px = shifts.pixels(grid)
    acc = np.zeros(grid.shape)
    clipped = 0.0
    for c in range(dataset.n_channels):
        img = dataset.data[:, :, c].astype(float)
        py, px = shift_px[c]
        ry, rx = round(py), round(px)
        if abs(py - ry) < INTEGER_SHIFT_TOL and abs(px - rx) < INTEGER_SHIFT_TOL:
            acc += np.roll(img, (-int(ry), -int(rx)), axis=(0, 1))
        else:
            acc += fourier_shift(img, (-py, -px))
    flux_in = dataset.total()
    negative = acc < 0
    if negative.any():
        clipped = float(-acc[negative].sum())
        acc[negative] = 0.0
        total = acc.sum()
        if total > 0:
            acc *= flux_in / total
    return ReconOutput(image=acc, grid=grid, method="apr", iterations=0,
                       shifts_used=shifts, flux_in=flux_in,
                       flux_out=float(acc.sum()),
                       meta={"clipped_flux": clipped})


def _division_eps(dataset_max: float) -> float:
    return 1e-12 * max(dataset_max, np.finfo(float).tiny)


def _guarded_ratio(num: np.ndarray, den: np.ndarray, eps: float) -> np.ndarray:
    """num / den with the denominator floored at eps.

    Pixels where numerator and denominator both sit below eps contribute
    zero instead of a spurious ratio.
    """
    out = num / np.maximum(den, eps)
    out[(num < eps) & (den < eps)] = 0.0
    return out


def _check_stack_for_rl(dataset: IsmDataset, stack: PsfStack) -> None:
    if stack.data.shape != dataset.data.shape:
        raise ValueError("dataset and PSF stack must share grid shape and channels")
    total = stack.data.sum()
    if abs(total - 1.0) > STACK_NORM_TOL:
        raise ValueError("PSF stack must be normalized to unit total sum")


def rl_deconvolve(dataset: IsmDataset, stack: PsfStack, iterations: int,
                  background: BackgroundModel | None = None,
                  initial: np.ndarray | None = None, *,
                  compute_nll: bool = False) -> ReconOutput:
    """Multi-image Richardson-Lucy estimate of the object.

    Each iteration multiplies the estimate by the sum over channels of the
    mirrored channel PSF correlated with the ratio data / model, where
    model = estimate * PSF (+ background). Pixels that start at zero stay
    zero and the estimate stays non-negative. Without a background the total
    flux of the estimate equals the dataset total after every iteration.

    ``iterations=0`` returns the initial estimate (flat by default, at
    total flux / pixel count). With ``compute_nll`` the per-iteration
    negative log-likelihood is recorded in ``meta["nll_history"]``.
    """
    if iterations < 0:
        raise ValueError("iterations must be >= 0")
    _check_stack_for_rl(dataset, stack)
    data = dataset.data.astype(float)
    flux_in = float(data.sum())
    shape = dataset.grid.shape

    bfield = None
    if background is not None:
        bfield = background.field(data.shape)

    if initial is None:
        o = np.full(shape, flux_in / (shape[0] * shape[1]))
    else:
        o = np.asarray(initial, dtype=float).copy()
        if o.shape != shape:
            raise ValueError("initial estimate shape does not match the grid")
        if np.any(o < 0):
            raise ValueError("initial estimate must be non-negative")

    kernels = kernel_rfft(stack.data)
    kernels_adj = np.conj(kernels)
    eps = _division_eps(data.max())

    flux_history: list[float] = []
    nll_history: list[float] = []
    for _ in range(iterations):
        model = irfft2_im(rfft2_im(o)[:, :, None] * kernels, shape)
        np.maximum(model, 0.0, out=model)
        if bfield is not None:
            model = model + bfield
        ratio = _guarded_ratio(data, model, eps)
        update = irfft2_im(rfft2_im(ratio) * kernels_adj, shape).sum(axis=2)
        o *= update
        np.maximum(o, 0.0, out=o)
        flux_history.append(float(o.sum()))
        if compute_nll:
            nll_history.append(negative_log_likelihood(dataset, stack, o,
                                                       background=background))

    method = "rl" if background is None else "rl_background"
    meta = {"initial": "flat" if initial is None else "user",
            "flux_history": flux_history}
    if compute_nll:
        meta["nll_history"] = nll_history
    return ReconOutput(image=o, grid=dataset.grid, method=method,
                       iterations=iterations, shifts_used=None,
                       flux_in=flux_in, flux_out=float(o.sum()), meta=meta)


def negative_log_likelihood(dataset: IsmDataset, stack: PsfStack,
                            estimate: np.ndarray,
                            background: BackgroundModel | None = None) -> float:
    """Poisson negative log-likelihood of ``estimate``, dropping the
    data-factorial terms: sum over channels and pixels of
    model - data * log(model)."""
    if np.any(np.asarray(estimate) < 0):
        raise ValueError("estimate must be non-negative")
    _check_stack_for_rl(dataset, stack)
    data = dataset.data.astype(float)
    shape = dataset.grid.shape
    model = irfft2_im(rfft2_im(np.asarray(estimate, dtype=float))[:, :, None]
                      * kernel_rfft(stack.data), shape)
    if background is not None:
        model = model + background.field(data.shape)
    # counts below the division-guard floor are numerically unobservable
    observed = data > _division_eps(data.max())
    if np.any(model[observed] <= 0):
        raise ValueError("model is non-positive where counts were observed")
    value = float(model.sum()) - float((data[observed] * np.log(model[observed])).sum())
    return value


def fingerprint_from_data(dataset: IsmDataset) -> Fingerprint:
    """Per-channel totals on the detector lattice, no PSF measurement needed."""
    det = dataset.detector
    if det is None:
        raise ValueError("dataset has no detector map")
    side = det.side
    if dataset.n_channels != side * side:
        raise ValueError("channel count does not fill the detector lattice")
    return Fingerprint(dataset.data.sum(axis=(0, 1), dtype=float).reshape(side, side))
