"""Grid and FFT utilities shared across the package.

Images are real arrays indexed (y, x), optionally with a trailing channel
axis. The spatial origin of an n-pixel axis sits at index n // 2, which
gives one deterministic convention for even and odd sizes. Convolutions
are periodic; callers pad when wrap-around matters.
"""
from __future__ import annotations

import numpy as np
import scipy.fft as _fft


def axis_coords(n: int, step: float) -> np.ndarray:
    """Sample positions along one axis, zero at index n // 2."""
    return (np.arange(n) - n // 2) * step


def rfft2_im(a: np.ndarray) -> np.ndarray:
    return _fft.rfft2(a, axes=(0, 1))


def irfft2_im(a: np.ndarray, shape: tuple[int, int]) -> np.ndarray:
    return _fft.irfft2(a, s=shape, axes=(0, 1))


def kernel_rfft(psf: np.ndarray) -> np.ndarray:
    """Half-spectrum of a kernel whose origin is the center pixel."""
    return rfft2_im(_fft.ifftshift(psf, axes=(0, 1)))


def mirror_center(image: np.ndarray) -> np.ndarray:
    """Reflect the (y, x) axes about the center pixel, periodic convention.

    For an axis of size n the sample at index i maps to (2*(n//2) - i) mod n,
    so the value at the center pixel stays in place for any parity.
    """
    out = np.flip(image, axis=(0, 1))
    shifts = tuple(1 if image.shape[ax] % 2 == 0 else 0 for ax in (0, 1))
    return np.roll(out, shifts, axis=(0, 1))


def fourier_shift(image: np.ndarray, shift_px: tuple[float, float]) -> np.ndarray:
    """Translate periodically so the content moves by +shift_px (y, x) pixels."""
    ny, nx = image.shape[:2]
    fy = _fft.fftfreq(ny)[:, None]
    fx = _fft.rfftfreq(nx)[None, :]
    phase = np.exp(-2j * np.pi * (fy * shift_px[0] + fx * shift_px[1]))
    if image.ndim == 3:
        phase = phase[..., None]
    return irfft2_im(rfft2_im(image) * phase, (ny, nx))


def pad_center(image: np.ndarray, pad_y: int, pad_x: int) -> np.ndarray:
    """Zero-pad both sides of the (y, x) axes; the origin stays at n // 2."""
    width = [(pad_y, pad_y), (pad_x, pad_x)] + [(0, 0)] * (image.ndim - 2)
    return np.pad(image, width)


def crop_center(image: np.ndarray, shape: tuple[int, int]) -> np.ndarray:
    """Inverse of pad_center for a known target (ny, nx)."""
    ny, nx = shape
    py = (image.shape[0] - ny) // 2
    px = (image.shape[1] - nx) // 2
    return image[py:py + ny, px:px + nx, ...]


def parabolic_offset(fm1: float, f0: float, fp1: float) -> float:
    """Sub-sample peak offset from three samples around a local maximum.

    Returns the vertex of the parabola through (-1, fm1), (0, f0), (1, fp1),
    clipped to [-0.5, 0.5]. Zero when the samples are not strictly concave.
    """
    denom = fm1 + fp1 - 2.0 * f0
    if not np.isfinite(denom) or denom >= 0.0:
        return 0.0
    delta = 0.5 * (fm1 - fp1) / denom
    return float(np.clip(delta, -0.5, 0.5))


def peak_subpixel(image: np.ndarray, periodic: bool, refine: bool = True) -> tuple[float, float]:
    """Peak location (y, x) in index units, refined per axis by a parabola.

    With ``periodic`` the neighbors of an edge peak wrap around; otherwise
    the refinement is skipped on that axis.
    """
    idx = np.unravel_index(int(np.argmax(image)), image.shape)
    pos = [float(idx[0]), float(idx[1])]
    if not refine:
        return pos[0], pos[1]
    f0 = float(image[idx])
    for ax in (0, 1):
        n = image.shape[ax]
        lo, hi = idx[ax] - 1, idx[ax] + 1
        if periodic:
            lo %= n
            hi %= n
        elif lo < 0 or hi >= n:
            continue
        sel = list(idx)
        sel[ax] = lo
        fm1 = float(image[tuple(sel)])
        sel[ax] = hi
        fp1 = float(image[tuple(sel)])
        pos[ax] += parabolic_offset(fm1, f0, fp1)
    return pos[0], pos[1]
