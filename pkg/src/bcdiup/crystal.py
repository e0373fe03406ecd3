"""Synthetic compact crystals and their ground-truth diffraction volumes.

The scatterer is a faceted box of unit-magnitude voxels with a smooth phase
field standing in for a strain field.  Detector axes are array axes 0 and 1;
axis 2 is the rocking direction (one slice per angular step).
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import NyquistError
from .transforms import fft3_centered, ifft3_centered

PHASE_MODELS = ("zero", "linear-gradient", "gaussian-bump")

#: Relative span of the seeded bump-center / gradient draw inside the box.
_PHASE_CENTER_SPAN = 0.45


@dataclass
class PhaseModel:
    """Interior phase field: none, a linear ramp, or a localized bump."""

    kind: str = "gaussian-bump"
    amplitude: float = 2.0          # radians
    length_scale: float = 10.0      # voxels (gaussian-bump only)

    def __post_init__(self):
        if self.kind not in PHASE_MODELS:
            raise ValueError(f"unknown phase model {self.kind!r}")
        if self.length_scale <= 0:
            raise ValueError("length_scale must be positive")


@dataclass
class CrystalSpec:
    """Geometry and phase of the simulated crystal.

    The defaults are the pinned reference object used by the acceptance
    suite: a 22x24x22 box centered in a 128x128x70 array with a seeded
    gaussian phase bump of 2 radians.
    """

    array_dims: tuple = (128, 128, 70)
    box_dims: tuple = (22, 24, 22)
    facet_cuts: list = field(default_factory=list)   # (unit normal, offset in voxels)
    phase: PhaseModel = field(default_factory=PhaseModel)
    seed: int = 13

    def __post_init__(self):
        self.array_dims = tuple(int(d) for d in self.array_dims)
        self.box_dims = tuple(int(d) for d in self.box_dims)
        if len(self.array_dims) != 3 or len(self.box_dims) != 3:
            raise ValueError("array_dims and box_dims must have three entries")
        if min(self.array_dims) < 1 or min(self.box_dims) < 1:
            raise ValueError("dimensions must be positive")

    def nyquist_margins(self):
        """Free voxels per axis beyond the autocorrelation span 2*s - 1."""
        return tuple(
            d - (2 * s - 1) for d, s in zip(self.array_dims, self.box_dims)
        )


@dataclass
class IntensityVolume:
    """Non-negative 3D diffraction intensities with their provenance."""

    values: np.ndarray
    provenance: str = "ground-truth"   # ground-truth | recovered | measured-binned

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.ndim != 3:
            raise ValueError("intensity volume must be 3D")
        if np.any(self.values < 0):
            raise ValueError("intensity volume must be non-negative")

    @property
    def shape(self):
        return self.values.shape


def _phase_field(spec, coords):
    """Phase values on the box-local centered coordinates (X, Y, Z)."""
    model = spec.phase
    if model.kind == "zero" or model.amplitude == 0.0:
        return np.zeros(coords[0].shape)
    rng = np.random.default_rng(spec.seed)
    box = np.asarray(spec.box_dims, dtype=float)
    if model.kind == "gaussian-bump":
        center = rng.uniform(-_PHASE_CENTER_SPAN, _PHASE_CENTER_SPAN, size=3) * box
        r2 = sum((c - o) ** 2 for c, o in zip(coords, center))
        return model.amplitude * np.exp(-r2 / (2.0 * model.length_scale ** 2))
    # linear-gradient: seeded direction, amplitude reached at the box half-span
    g = rng.normal(size=3)
    g /= np.linalg.norm(g)
    half = box / 2.0
    return model.amplitude * sum(
        gi * c / h for gi, c, h in zip(g, coords, half)
    )


def build_crystal(spec):
    """Complex volume with unit-magnitude voxels inside the faceted box.

    Raises :class:`NyquistError` when the box does not leave room for its
    autocorrelation (buffer smaller than the scatterer span).
    """
    margins = spec.nyquist_margins()
    if min(margins) < 0:
        raise NyquistError(
            f"box {spec.box_dims} violates the sampling buffer in array "
            f"{spec.array_dims} (per-axis slack {margins})"
        )
    vol = np.zeros(spec.array_dims, dtype=np.complex128)
    centers = [d // 2 for d in spec.array_dims]
    starts = [c - b // 2 for c, b in zip(centers, spec.box_dims)]
    box_slices = tuple(slice(s, s + b) for s, b in zip(starts, spec.box_dims))

    coords = np.meshgrid(
        *[np.arange(b) - (b - 1) / 2.0 for b in spec.box_dims], indexing="ij"
    )
    inside = np.ones(spec.box_dims, dtype=bool)
    for normal, offset in spec.facet_cuts:
        n = np.asarray(normal, dtype=float)
        n = n / np.linalg.norm(n)
        inside &= (n[0] * coords[0] + n[1] * coords[1] + n[2] * coords[2]) <= offset
    phase = _phase_field(spec, coords)
    vol[box_slices] = np.where(inside, np.exp(1j * phase), 0.0)
    return vol


def ground_truth_intensity(crystal, workers=None):
    """Squared modulus of the centered 3D transform of the scatterer."""
    report = patterson_nyquist_check(crystal)
    if not report.passed:
        raise NyquistError(
            f"autocorrelation support wraps around the array (margins {report.margins})"
        )
    F = fft3_centered(crystal, workers=workers)
    return IntensityVolume(np.abs(F) ** 2, provenance="ground-truth")


@dataclass
class NyquistReport:
    passed: bool
    margins: tuple      # free voxels per axis around the autocorrelation support


def patterson_nyquist_check(crystal, rel_threshold=1e-10):
    """Check that the crystal's autocorrelation fits inside the array.

    The support of the autocorrelation is measured directly (via the inverse
    transform of the intensity) against a relative magnitude threshold, and
    compared with the array extent on each axis.  The reported margin is the
    per-axis slack relative to the buffer requirement: for a scatterer of
    span s in an axis of length n the support measures 2s - 1 voxels and the
    margin is n - 2s, so an array of exactly twice the span passes with zero
    margin.
    """
    v = np.asarray(crystal)
    intensity = np.abs(fft3_centered(v)) ** 2
    patterson = np.abs(ifft3_centered(intensity))
    peak = patterson.max()
    if peak == 0.0:
        return NyquistReport(True, tuple(v.shape))
    mask = patterson > rel_threshold * peak
    margins = []
    passed = True
    for ax in range(3):
        other = tuple(i for i in range(3) if i != ax)
        prof = mask.any(axis=other)
        idx = np.where(prof)[0]
        span = idx[-1] - idx[0] + 1
        n = v.shape[ax]
        # wraparound shows up as support touching both array edges
        touches = prof[0] and prof[-1] and span == n
        margins.append(int(n - span - 1))
        if touches:
            passed = False
    return NyquistReport(passed, tuple(margins))


def roi_energy_fraction(intensity, roi_rows, roi_cols):
    """Per-slice fraction of intensity captured by a detector-plane window."""
    vals = intensity.values if isinstance(intensity, IntensityVolume) else np.asarray(intensity)
    totals = vals.sum(axis=(0, 1))
    inside = vals[roi_rows, roi_cols, :].sum(axis=(0, 1))
    with np.errstate(invalid="ignore", divide="ignore"):
        frac = np.where(totals > 0, inside / totals, 1.0)
    return frac
