"""Coarse-pixel measurement model and experiment-design arithmetic.

A physical detector pixel covers an m x m block of fine pixels (m is the
pixel binning factor, equal to the beam-energy multiplier).  Translating the
detector in integer fine-pixel steps shifts the binning lattice; offsets are
equivalent modulo m.  Only coarse pixels whose footprint lies fully inside
the fine region of interest are kept.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import GeometryError

#: Fine-pixel side of the recovery window (central region of the detector).
DEFAULT_ROI_FINE = 120


def central_roi(n_detector, n_roi):
    """Slices selecting the centered n_roi x n_roi window of a detector frame."""
    if n_roi > n_detector:
        raise GeometryError(f"ROI {n_roi} larger than detector {n_detector}")
    lo = (n_detector - n_roi) // 2
    return slice(lo, lo + n_roi), slice(lo, lo + n_roi)


def enumerate_diagonal_offsets(m):
    """Unique detector offsets along the two diagonals of a coarse pixel.

    Walking the main diagonal gives cells (k, k) and the anti-diagonal gives
    (k, m-1-k); for odd m the two share the central cell.  That yields 2m
    distinct offsets for even m and 2m-1 for odd m, all distinct modulo m.
    Order: zero offset first, then increasing steps along the main diagonal,
    then the anti-diagonal.
    """
    if m < 1:
        raise ValueError("pixel binning factor must be >= 1")
    offsets = [(0, 0)]
    offsets += [(k, k) for k in range(1, m)]
    for k in range(m):
        cand = (k, m - 1 - k)
        if cand not in offsets:
            offsets.append(cand)
    return offsets


@dataclass
class DetectorGeometry:
    """Fine ROI size, binning factor, and the set of detector offsets."""

    roi_fine: int = DEFAULT_ROI_FINE
    pbf: int = 6
    offsets: list = field(default_factory=list)
    scheme: str = "diagonal"

    def __post_init__(self):
        if self.pbf < 1:
            raise GeometryError("pixel binning factor must be >= 1")
        if self.roi_fine % self.pbf != 0:
            raise GeometryError(
                f"ROI side {self.roi_fine} not divisible by binning factor {self.pbf}"
            )
        if self.scheme not in ("diagonal", "custom"):
            raise GeometryError(f"unknown offset scheme {self.scheme!r}")
        if not self.offsets:
            if self.scheme == "custom":
                raise GeometryError("custom scheme requires explicit offsets")
            self.offsets = enumerate_diagonal_offsets(self.pbf)
        normalized = [(int(oy) % self.pbf, int(ox) % self.pbf) for oy, ox in self.offsets]
        deduped = []
        for off in normalized:
            if off not in deduped:
                deduped.append(off)
        self.n_requested = len(normalized)
        self.offsets = deduped

    @property
    def n_coarse(self):
        return self.roi_fine // self.pbf

    @property
    def n_offsets(self):
        return len(self.offsets)


def diagonal_geometry(roi_fine, pbf, n_positions=None):
    """Geometry using the first ``n_positions`` diagonal offsets (all if None).

    Requests beyond the number of distinct diagonal offsets saturate; the
    geometry still records how many positions were asked for so duplicate
    accounting survives.
    """
    offs = enumerate_diagonal_offsets(pbf)
    requested = len(offs) if n_positions is None else int(n_positions)
    if requested < 1:
        raise GeometryError("need at least one detector position")
    geom = DetectorGeometry(
        roi_fine=roi_fine, pbf=pbf, offsets=offs[:requested], scheme="diagonal"
    )
    geom.n_requested = requested
    return geom


def _retained_1d(n_coarse, m, off):
    """(first fine index, number of blocks) fully inside the ROI for one axis."""
    off = off % m
    if off == 0:
        return 0, n_coarse
    return m - off, n_coarse - 1


def bin_slice(fine, geometry, offset=(0, 0)):
    """Block sums of an ROI-sized slice for one detector offset.

    Coarse pixel (r, c) sums the m x m block anchored at
    (r*m - offset_y, c*m - offset_x); blocks extending past the ROI edge are
    dropped, so a nonzero offset component loses one row or column of coarse
    pixels on that axis.
    """
    a = np.asarray(fine)
    n = geometry.roi_fine
    m = geometry.pbf
    if a.shape != (n, n):
        raise GeometryError(f"slice shape {a.shape} does not match ROI {(n, n)}")
    oy, ox = (int(offset[0]) % m, int(offset[1]) % m)
    y0, ny = _retained_1d(geometry.n_coarse, m, oy)
    x0, nx = _retained_1d(geometry.n_coarse, m, ox)
    w = a[y0:y0 + ny * m, x0:x0 + nx * m]
    return w.reshape(ny, m, nx, m).sum(axis=(1, 3))


@dataclass
class MeasurementSet:
    """Coarse measurements of one slice across all detector offsets."""

    geometry: DetectorGeometry
    stacks: list                    # one coarse 2D array per offset, geometry order
    provenance: str = "measured-binned"

    @property
    def values(self):
        """All measurements as one vector (offset-major, row-major per offset)."""
        return np.concatenate([s.ravel() for s in self.stacks])

    @property
    def n_measurements(self):
        return sum(s.size for s in self.stacks)


def measure_slice(fine, geometry):
    """Bin one fine slice at every offset of the geometry."""
    stacks = [bin_slice(fine, geometry, off) for off in geometry.offsets]
    return MeasurementSet(geometry=geometry, stacks=stacks)


class BinningOperator:
    """Sparse linear map from fine ROI pixels to retained coarse measurements.

    Rows are unit-weight block sums ordered offset-major then row-major; the
    same summation kernel as :func:`bin_slice` is used so operator output is
    bit-identical to simulated measurements.
    """

    def __init__(self, geometry):
        self.geometry = geometry
        n, m = geometry.roi_fine, geometry.pbf
        self._windows = []
        for oy, ox in geometry.offsets:
            y0, ny = _retained_1d(geometry.n_coarse, m, oy)
            x0, nx = _retained_1d(geometry.n_coarse, m, ox)
            self._windows.append((y0, ny, x0, nx))
        self.n_rows = sum(ny * nx for _, ny, _, nx in self._windows)
        self.n_cols = n * n
        self.shape = (self.n_rows, self.n_cols)

    def apply(self, fine):
        """Fine image (2D, or flat) -> measurement vector."""
        n, m = self.geometry.roi_fine, self.geometry.pbf
        img = np.asarray(fine).reshape(n, n)
        parts = []
        for (y0, ny, x0, nx) in self._windows:
            w = img[y0:y0 + ny * m, x0:x0 + nx * m]
            parts.append(w.reshape(ny, m, nx, m).sum(axis=(1, 3)).ravel())
        return np.concatenate(parts)

    def adjoint(self, measurements):
        """Measurement vector -> fine image (2D); transpose of :meth:`apply`."""
        n, m = self.geometry.roi_fine, self.geometry.pbf
        u = np.asarray(measurements, dtype=float).ravel()
        if u.size != self.n_rows:
            raise GeometryError(f"expected {self.n_rows} measurements, got {u.size}")
        out = np.zeros((n, n))
        pos = 0
        for (y0, ny, x0, nx) in self._windows:
            count = ny * nx
            block = u[pos:pos + count].reshape(ny, nx)
            out[y0:y0 + ny * m, x0:x0 + nx * m] += np.repeat(
                np.repeat(block, m, axis=0), m, axis=1
            )
            pos += count
        return out

    def to_dense(self):
        """Materialize the operator (small geometries only)."""
        dense = np.zeros(self.shape)
        n = self.geometry.roi_fine
        for j in range(self.n_cols):
            e = np.zeros(self.n_cols)
            e[j] = 1.0
            dense[:, j] = self.apply(e.reshape(n, n))
        return dense

    def footprints(self):
        """Per-row sets of flat fine-pixel indices (the constraint index)."""
        n, m = self.geometry.roi_fine, self.geometry.pbf
        rows = []
        for (y0, ny, x0, nx) in self._windows:
            for r in range(ny):
                for c in range(nx):
                    ys = y0 + r * m
                    xs = x0 + c * m
                    idx = [
                        (ys + dy) * n + (xs + dx)
                        for dy in range(m)
                        for dx in range(m)
                    ]
                    rows.append(frozenset(idx))
        return rows


def count_unique_constraints(n_coarse, m, n_positions):
    """Idealized unique-constraint count for diagonal offsets.

    The zero offset contributes N^2 measurements and each further position
    is credited (N-1)^2, saturating once the diagonals are exhausted
    (2m - 1 extra positions for even m, 2m - 2 for odd m).
    """
    if n_positions < 1:
        raise ValueError("need at least one detector position")
    cap = 2 * m - 1 if m % 2 == 0 else 2 * m - 2
    extra = min(n_positions - 1, cap)
    return n_coarse ** 2 + extra * (n_coarse - 1) ** 2


def saturated_constraint_count(n_coarse, m):
    """Constraint count with every diagonal position included."""
    return count_unique_constraints(n_coarse, m, 2 * m)


def dedup_unique_constraints(n_coarse, m, offsets=None):
    """Exact unique-constraint count by brute-force footprint deduplication.

    This is the arbiter for arbitrary offset schemes: it enumerates every
    retained footprint of every offset and counts distinct fine-pixel sets.
    """
    if offsets is None:
        offsets = enumerate_diagonal_offsets(m)
    geometry = DetectorGeometry(
        roi_fine=n_coarse * m, pbf=m, offsets=list(offsets), scheme="custom"
    )
    op = BinningOperator(geometry)
    return len(set(op.footprints()))


def constraint_ratio(n_coarse, m, d):
    """Constraints-to-unknowns ratio [1 - 1/N + 1/(mN)]^d (< 1 for m >= 2)."""
    if n_coarse < 1 or m < 1 or d < 1:
        raise ValueError("arguments must be positive")
    return (1.0 - 1.0 / n_coarse + 1.0 / (m * n_coarse)) ** d


def distance_multiplier(n_constraints, n_coarse):
    """Effective sample-detector distance multiplier f = sqrt(M) / N."""
    if n_constraints < n_coarse ** 2:
        raise ValueError(
            f"{n_constraints} constraints is fewer than one detector frame "
            f"({n_coarse ** 2})"
        )
    return float(np.sqrt(n_constraints) / n_coarse)


def max_distance_multiplier(n_coarse, m):
    """Limit of f with every binning constraint collected: [N + (m-1)(N-1)] / N."""
    if n_coarse < 1 or m < 1:
        raise ValueError("arguments must be positive")
    return (n_coarse + (m - 1) * (n_coarse - 1)) / n_coarse


@dataclass
class DesignTableRow:
    pbf: int
    positions: int
    n_constraints: int
    multiplier: float
    below_threshold: bool
    saturated: bool


def feasibility_limit(k_significant, n_fine):
    """Compressed-sensing measurement threshold K * log10(N^2 / K)."""
    if not 1 <= k_significant < n_fine ** 2:
        raise ValueError("K must satisfy 1 <= K < N^2")
    return k_significant * np.log10(n_fine ** 2 / k_significant)


def design_tables(
    fine_roi=DEFAULT_ROI_FINE,
    pbf_range=(2, 3, 4, 5, 6),
    positions_range=range(1, 14),
    k_significant=1499,
    with_shading=True,
):
    """Constraint-count and distance-multiplier grids over (PBF, positions).

    Cells are flagged ``below_threshold`` when M falls under the
    compressed-sensing limit and ``saturated`` when the requested position
    count exceeds the number of distinct diagonal offsets.
    """
    pbfs = list(pbf_range)
    positions = list(positions_range)
    if not pbfs or not positions:
        raise ValueError("pbf_range and positions_range must be non-empty")
    threshold = feasibility_limit(k_significant, fine_roi) if with_shading else -1.0
    rows = []
    for m in pbfs:
        if fine_roi % m != 0:
            raise GeometryError(f"ROI {fine_roi} not divisible by PBF {m}")
        n_coarse = fine_roi // m
        n_unique = len(enumerate_diagonal_offsets(m))
        for p in positions:
            mm = count_unique_constraints(n_coarse, m, p)
            rows.append(
                DesignTableRow(
                    pbf=m,
                    positions=p,
                    n_constraints=mm,
                    multiplier=distance_multiplier(mm, n_coarse),
                    below_threshold=bool(with_shading and mm < threshold),
                    saturated=p > n_unique,
                )
            )
    return rows


def design_table_csv(rows):
    """Render design-table rows as CSV (header per the file-format contract)."""
    lines = ["pbf,positions,M,f,below_threshold,saturated"]
    for r in rows:
        lines.append(
            f"{r.pbf},{r.positions},{r.n_constraints},{r.multiplier!r},"
            f"{str(r.below_threshold).lower()},{str(r.saturated).lower()}"
        )
    return "\n".join(lines) + "\n"
