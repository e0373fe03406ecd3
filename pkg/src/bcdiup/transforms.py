"""Centered Fourier transforms, the 2D cosine transform pair, and projections.

Conventions used throughout the toolkit:

* Forward FFTs are unnormalized, inverse FFTs carry the 1/n factor
  (numpy/scipy "backward" normalization).
* Reciprocal-space arrays are stored with the zero-frequency component at
  the array center (index ``n // 2`` on each axis).
* The cosine transform comes in two normalizations: ``raw`` evaluates the
  plain double cosine sum, ``orthonormal`` rescales so the transform matrix
  is orthogonal (this is the variant the sparse-recovery basis uses).
"""

from dataclasses import dataclass

import numpy as np
from scipy import fft as sfft

from .errors import NumericalError

NORM_RAW = "raw-eq1"
NORM_ORTHO = "orthonormal"


def fft3_centered(volume, workers=None):
    """3D DFT of a volume, zero frequency shifted to the array center."""
    v = np.asarray(volume)
    if v.ndim != 3 or min(v.shape) < 1:
        raise ValueError(f"expected a non-empty 3D array, got shape {v.shape}")
    return sfft.fftshift(sfft.fftn(sfft.ifftshift(v), workers=workers))


def ifft3_centered(volume, workers=None):
    """Inverse of :func:`fft3_centered` (carries the 1/n factor)."""
    v = np.asarray(volume)
    if v.ndim != 3 or min(v.shape) < 1:
        raise ValueError(f"expected a non-empty 3D array, got shape {v.shape}")
    return sfft.fftshift(sfft.ifftn(sfft.ifftshift(v), workers=workers))


def fft2_centered(image):
    return sfft.fftshift(sfft.fft2(sfft.ifftshift(image)))


def ifft2_centered(image):
    return sfft.fftshift(sfft.ifft2(sfft.ifftshift(image)))


@dataclass
class Spectrum2D:
    """Square grid of 2D DCT-II coefficients plus the normalization used."""

    coeffs: np.ndarray
    normalization: str = NORM_ORTHO

    def __post_init__(self):
        self.coeffs = np.asarray(self.coeffs, dtype=float)
        if self.coeffs.ndim != 2 or self.coeffs.shape[0] != self.coeffs.shape[1]:
            raise ValueError(f"spectrum must be square, got {self.coeffs.shape}")
        if self.normalization not in (NORM_RAW, NORM_ORTHO):
            raise ValueError(f"unknown normalization {self.normalization!r}")


def dct2(image, normalization=NORM_ORTHO):
    """2D DCT-II of a square image.

    ``raw-eq1`` computes sum_ij A_ij cos[(i+1/2) m pi / N] cos[(j+1/2) n pi / N]
    exactly; ``orthonormal`` rescales so the basis matrix is orthogonal and
    Parseval holds.
    """
    a = np.asarray(image, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError(f"dct2 requires a square image, got shape {a.shape}")
    if a.shape[0] < 1:
        raise ValueError("dct2 requires N >= 1")
    if normalization == NORM_ORTHO:
        coeffs = sfft.dctn(a, type=2, norm="ortho")
    elif normalization == NORM_RAW:
        # scipy's unnormalized 1D DCT-II is twice the plain cosine sum
        coeffs = sfft.dctn(a, type=2, norm=None) / 4.0
    else:
        raise ValueError(f"unknown normalization {normalization!r}")
    return Spectrum2D(coeffs, normalization)


def idct2(spectrum, normalization=None):
    """Invert :func:`dct2` under the normalization recorded in the spectrum.

    A bare coefficient array is accepted only together with an explicit
    ``normalization``; otherwise the metadata is considered absent.
    """
    if isinstance(spectrum, Spectrum2D):
        coeffs, norm = spectrum.coeffs, spectrum.normalization
        if normalization is not None and normalization != norm:
            raise ValueError(
                f"normalization mismatch: spectrum says {norm!r}, caller says {normalization!r}"
            )
    else:
        if normalization is None:
            raise ValueError("bare array passed to idct2 without a normalization")
        coeffs, norm = np.asarray(spectrum, dtype=float), normalization
    if norm == NORM_ORTHO:
        return sfft.idctn(coeffs, type=2, norm="ortho")
    return sfft.idctn(coeffs * 4.0, type=2, norm=None)


def project(volume, axis):
    """Sum of a volume along ``axis`` (the plain projection)."""
    v = np.asarray(volume)
    if axis not in (0, 1, 2):
        raise ValueError(f"axis must be 0, 1 or 2, got {axis}")
    return v.sum(axis=axis)


def modulated_projection(volume, slice_index, axis=2):
    """Projection along ``axis`` weighted by the linear phase of an off-center slice.

    For the centered DFT, the 2D inverse transform of slice ``k`` (taken along
    ``axis``) of the 3D transform equals the projection of the volume weighted
    by exp(-2 pi i (k - c)(z - c) / n) with c = n // 2.  At the central slice
    the weight is 1 and this reduces to :func:`project`.
    """
    v = np.asarray(volume)
    n = v.shape[axis]
    if not 0 <= slice_index < n:
        raise IndexError(f"slice index {slice_index} out of range for axis of length {n}")
    c = n // 2
    z = np.arange(n) - c
    phase = np.exp(-2j * np.pi * (slice_index - c) * z / n)
    shape = [1, 1, 1]
    shape[axis] = n
    return (v * phase.reshape(shape)).sum(axis=axis)


def verify_projection_slice(volume, slice_index, axis=2):
    """Numerically check the projection-slice identity for one slice.

    Returns the max absolute difference between the 2D inverse transform of
    the selected slice of ``fft3_centered(volume)`` and the matching
    (phase-weighted) projection, relative to the projection's peak magnitude.
    """
    v = np.asarray(volume)
    F = fft3_centered(v)
    sl = [slice(None)] * 3
    sl[axis] = slice_index
    lhs = ifft2_centered(F[tuple(sl)])
    rhs = modulated_projection(v, slice_index, axis)
    if not (np.all(np.isfinite(lhs)) and np.all(np.isfinite(rhs))):
        raise NumericalError("non-finite values in projection-slice check")
    scale = np.max(np.abs(rhs))
    resid = np.max(np.abs(lhs - rhs))
    if scale == 0.0:
        return float(resid)
    return float(resid / scale)
