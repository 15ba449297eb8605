"""Quantitative evaluation: Gaussian profile fits, FWHM, radial spectra."""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np
import scipy.fft as _fft
from scipy.optimize import OptimizeWarning, curve_fit

SIGMA_TO_FWHM = 2.0 * math.sqrt(2.0 * math.log(2.0))


@dataclass(frozen=True)
class GaussianFit:
    """Least-squares Gaussian profile fit with 1-sigma uncertainties."""

    amplitude: float
    mean_nm: float
    sigma_nm: float
    fwhm_nm: float
    amplitude_err: float
    mean_err_nm: float
    sigma_err_nm: float
    fwhm_err_nm: float
    residual_rms: float


@dataclass(eq=False)
class RadialSpectrum:
    """Angular average of an image spectrum per radial frequency bin."""

    k_bins: np.ndarray  # cycles per nm, strictly increasing
    values: np.ndarray  # non-negative magnitudes


def _gaussian(x, amplitude, mean, sigma):
    return amplitude * np.exp(-0.5 * ((x - mean) / sigma) ** 2)


def _gaussian_fit_errors(coords, popt, residual) -> np.ndarray:
    """1-sigma parameter uncertainties from the analytic Jacobian.

    Gauss-Newton covariance: s^2 (J^T J)^-1 with the residual variance
    estimated from the fit (so an exact fit yields vanishing errors).
    """
    amplitude, mean, sigma = popt
    z = (coords - mean) / sigma
    e = np.exp(-0.5 * z * z)
    jac = np.stack([e, amplitude * e * z / sigma, amplitude * e * z * z / sigma],
                   axis=1)
    dof = max(len(coords) - 3, 1)
    s2 = float(residual @ residual) / dof
    cov = s2 * np.linalg.pinv(jac.T @ jac)
    return np.sqrt(np.abs(np.diag(cov)))


def fit_gaussian_profile(image: np.ndarray, axis: str = "x",
                         step_nm: float = 1.0,
                         through: int | None = None) -> GaussianFit:
    """Fit a Gaussian to the 1-D profile through the image maximum.

    ``axis="x"`` slices the row through the peak (or through the given row
    index), ``axis="y"`` the column. Coordinates are in nm with zero at the
    grid center. Needs at least five profile samples above half maximum.
    """
    image = np.asarray(image, dtype=float)
    if axis not in ("x", "y"):
        raise ValueError("axis must be 'x' or 'y'")
    iy, ix = np.unravel_index(int(np.argmax(image)), image.shape)
    if axis == "x":
        profile = image[iy if through is None else through, :]
    else:
        profile = image[:, ix if through is None else through]
    n = len(profile)
    coords = (np.arange(n) - n // 2) * step_nm

    peak = profile.max()
    if peak <= 0:
        raise ValueError("profile has no positive samples")
    above = profile > 0.5 * peak
    if above.sum() < 5:
        raise ValueError("profile has fewer than 5 samples above half maximum")

    hwhm = 0.5 * above.sum() * step_nm
    p0 = (peak, coords[int(np.argmax(profile))], hwhm / 1.177)
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", OptimizeWarning)
            popt, _ = curve_fit(_gaussian, coords, profile, p0=p0, maxfev=20000)
    except RuntimeError as exc:
        rms = float(np.sqrt(np.mean((profile - _gaussian(coords, *p0)) ** 2)))
        raise ValueError(f"Gaussian fit did not converge (residual rms {rms:.3g}): "
                         f"{exc}") from exc
    amplitude, mean, sigma = popt
    sigma = abs(float(sigma))
    residual = profile - _gaussian(coords, *popt)
    errs = _gaussian_fit_errors(coords, popt, residual)
    return GaussianFit(
        amplitude=float(amplitude), mean_nm=float(mean), sigma_nm=sigma,
        fwhm_nm=SIGMA_TO_FWHM * sigma,
        amplitude_err=float(errs[0]), mean_err_nm=float(errs[1]),
        sigma_err_nm=float(errs[2]), fwhm_err_nm=SIGMA_TO_FWHM * float(errs[2]),
        residual_rms=float(np.sqrt(np.mean(residual ** 2))),
    )


def measure_shift(fit_a: GaussianFit, fit_b: GaussianFit) -> tuple[float, float]:
    """Difference of fitted means, with the quadrature-summed uncertainty."""
    value = fit_b.mean_nm - fit_a.mean_nm
    err = math.hypot(fit_a.mean_err_nm, fit_b.mean_err_nm)
    return value, err


def radial_spectrum(image: np.ndarray, step_nm: float = 1.0, *,
                    assume_centered: bool = False) -> RadialSpectrum:
    """Radial spectrum: complex angular average of the DFT, then magnitude.

    The transform uses unitary scaling. Averaging the complex values before
    taking the magnitude matters: image content centered away from the DFT
    origin dephases across an annulus. ``assume_centered`` shifts the image
    origin from the center pixel to index zero first, which keeps the
    spectrum of centered content in phase.

    Square images only; bins are one frequency pixel wide up to the Nyquist
    frequency 1 / (2 * step).
    """
    image = np.asarray(image, dtype=float)
    if image.ndim != 2 or image.shape[0] != image.shape[1]:
        raise ValueError("radial spectrum needs a square 2-D image")
    n = image.shape[0]
    work = _fft.ifftshift(image) if assume_centered else image
    spectrum = _fft.fft2(work) / n  # unitary: sqrt(n * n)

    freq = _fft.fftfreq(n, d=step_nm)
    k_r = np.hypot(freq[:, None], freq[None, :])
    dk = 1.0 / (n * step_nm)
    bin_idx = np.rint(k_r / dk).astype(int)
    n_bins = n // 2 + 1
    keep = bin_idx < n_bins
    counts = np.bincount(bin_idx[keep], minlength=n_bins)
    re = np.bincount(bin_idx[keep], weights=spectrum.real[keep], minlength=n_bins)
    im = np.bincount(bin_idx[keep], weights=spectrum.imag[keep], minlength=n_bins)
    values = np.abs((re + 1j * im) / counts)
    return RadialSpectrum(k_bins=np.arange(n_bins) * dk, values=values)
