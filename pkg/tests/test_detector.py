import numpy as np
import pytest

from bcdiup.detector import (
    BinningOperator,
    DetectorGeometry,
    bin_slice,
    central_roi,
    constraint_ratio,
    count_unique_constraints,
    dedup_unique_constraints,
    design_table_csv,
    design_tables,
    diagonal_geometry,
    distance_multiplier,
    enumerate_diagonal_offsets,
    feasibility_limit,
    max_distance_multiplier,
    measure_slice,
    saturated_constraint_count,
)
from bcdiup.errors import GeometryError


class TestDiagonalOffsets:
    @pytest.mark.parametrize("m,expected", [(1, 1), (2, 4), (3, 5), (4, 8),
                                            (5, 9), (6, 12), (7, 13), (8, 16)])
    def test_counts(self, m, expected):
        offs = enumerate_diagonal_offsets(m)
        assert len(offs) == expected
        # 2m for even m, 2m-1 for odd m
        assert len(offs) == (2 * m if m % 2 == 0 else 2 * m - 1) or m == 1

    def test_zero_first_and_distinct_mod_m(self):
        for m in range(1, 9):
            offs = enumerate_diagonal_offsets(m)
            assert offs[0] == (0, 0)
            reduced = {(oy % m, ox % m) for oy, ox in offs}
            assert len(reduced) == len(offs)

    def test_deterministic_order_m4(self):
        assert enumerate_diagonal_offsets(4) == [
            (0, 0), (1, 1), (2, 2), (3, 3), (0, 3), (1, 2), (2, 1), (3, 0),
        ]

    def test_invalid_m(self):
        with pytest.raises(ValueError):
            enumerate_diagonal_offsets(0)


class TestGeometry:
    def test_divisibility_enforced(self):
        with pytest.raises(GeometryError):
            DetectorGeometry(roi_fine=120, pbf=7)

    def test_offsets_deduplicated_mod_m(self):
        geom = DetectorGeometry(roi_fine=12, pbf=2, offsets=[(0, 0), (1, 1), (3, 3)],
                                scheme="custom")
        assert geom.offsets == [(0, 0), (1, 1)]
        assert geom.n_requested == 3

    def test_diagonal_geometry_position_count(self):
        geom = diagonal_geometry(120, 6, 13)
        assert geom.n_offsets == 12  # 13th requested position is a duplicate
        geom = diagonal_geometry(120, 6, 5)
        assert geom.n_offsets == 5

    def test_central_roi(self):
        rows, cols = central_roi(128, 120)
        assert (rows.start, rows.stop) == (4, 124)
        assert (cols.start, cols.stop) == (4, 124)
        with pytest.raises(GeometryError):
            central_roi(100, 120)


class TestBinSlice:
    def test_ones_zero_offset(self):
        geom = DetectorGeometry(roi_fine=4, pbf=2, offsets=[(0, 0)], scheme="custom")
        out = bin_slice(np.ones((4, 4)), geom, (0, 0))
        assert out.shape == (2, 2)
        assert np.all(out == 4.0)

    def test_ones_diagonal_offset_edge_discard(self):
        geom = DetectorGeometry(roi_fine=4, pbf=2, offsets=[(0, 0)], scheme="custom")
        out = bin_slice(np.ones((4, 4)), geom, (1, 1))
        assert out.shape == (1, 1)
        assert out[0, 0] == 4.0

    def test_offset_normalized_by_periodicity(self, rng):
        geom = DetectorGeometry(roi_fine=12, pbf=3, offsets=[(0, 0)], scheme="custom")
        img = rng.normal(size=(12, 12))
        assert np.array_equal(bin_slice(img, geom, (1, 2)), bin_slice(img, geom, (4, 5)))

    def test_sum_preserved_at_zero_offset(self, default_intensity):
        rows, cols = central_roi(128, 120)
        sl = default_intensity.values[rows, cols, 35]
        geom = diagonal_geometry(120, 6, 1)
        out = bin_slice(sl, geom, (0, 0))
        assert out.shape == (20, 20)
        assert np.isclose(out.sum(), sl.sum(), rtol=1e-12)

    def test_shape_mismatch_rejected(self):
        geom = DetectorGeometry(roi_fine=4, pbf=2, offsets=[(0, 0)], scheme="custom")
        with pytest.raises(GeometryError):
            bin_slice(np.ones((5, 4)), geom)


class TestBinningOperator:
    def test_dimensions_28x28_pbf7(self):
        geom = DetectorGeometry(roi_fine=28, pbf=7, offsets=[(0, 0)], scheme="custom")
        op = BinningOperator(geom)
        assert op.shape == (16, 784)

    def test_row_sums_equal_m_squared(self):
        geom = diagonal_geometry(12, 3)
        op = BinningOperator(geom)
        dense = op.to_dense()
        assert np.all(dense.sum(axis=1) == 9)
        assert set(np.unique(dense)) == {0.0, 1.0}

    def test_apply_matches_measure_slice(self, rng):
        geom = diagonal_geometry(20, 4)
        img = rng.normal(size=(20, 20))
        ms = measure_slice(img, geom)
        assert np.array_equal(BinningOperator(geom).apply(img), ms.values)

    def test_adjoint_identity(self, rng):
        geom = diagonal_geometry(12, 2)
        op = BinningOperator(geom)
        x = rng.normal(size=144)
        u = rng.normal(size=op.n_rows)
        lhs = op.apply(x.reshape(12, 12)) @ u
        rhs = x @ op.adjoint(u).ravel()
        assert np.isclose(lhs, rhs, rtol=1e-12)

    def test_dense_agrees_with_apply(self, rng):
        geom = diagonal_geometry(8, 2)
        op = BinningOperator(geom)
        dense = op.to_dense()
        x = rng.normal(size=64)
        assert np.allclose(dense @ x, op.apply(x.reshape(8, 8)))


class TestConstraintCounts:
    def test_table_values(self):
        assert count_unique_constraints(20, 6, 7) == 2566
        assert count_unique_constraints(20, 6, 13) == 4371
        assert count_unique_constraints(20, 6, 12) == 4371
        assert count_unique_constraints(24, 5, 9) == 4808
        assert count_unique_constraints(60, 2, 4) == 14043

    def test_saturation_cap(self):
        # even m saturates after 2m-1 extra positions, odd after 2m-2
        assert saturated_constraint_count(20, 6) == 400 + 11 * 361
        assert saturated_constraint_count(24, 5) == 576 + 8 * 529

    def test_dedup_oracle_relationship(self):
        # brute-force footprint dedup over the cell-diagonal offsets: the two
        # anti-diagonal end positions are axis-aligned on one axis and retain
        # N(N-1) footprints instead of the formula's (N-1)^2, so the exact
        # count exceeds the idealized one by 2(N-1) for every m >= 2
        for m in range(2, 7):
            for n in range(2, 8):
                exact = dedup_unique_constraints(n, m)
                formula = saturated_constraint_count(n, m)
                assert exact == formula + 2 * (n - 1)

    def test_dedup_matches_formula_for_m1(self):
        for n in range(1, 8):
            assert dedup_unique_constraints(n, 1) == n * n

    def test_dedup_custom_scheme(self):
        # offsets with both components nonzero each retain (N-1)^2 footprints
        n, m = 5, 3
        offs = [(0, 0), (1, 1), (1, 2), (2, 1)]
        assert dedup_unique_constraints(n, m, offs) == 25 + 3 * 16


class TestRatios:
    def test_constraint_ratio_value(self):
        v = constraint_ratio(20, 6, 2)
        assert abs(v - (1 - 1 / 20 + 1 / 120) ** 2) < 1e-15
        assert abs(v - 0.918402777) < 1e-6

    def test_underdetermined_for_binning(self):
        for n in (2, 10, 100):
            for m in (2, 5, 12):
                for d in (1, 2, 3):
                    assert constraint_ratio(n, m, d) < 1.0

    def test_limit_matches_infinite_offsets(self):
        for n in (5, 50):
            for d in (1, 2, 3):
                lim = (1 - 1 / n) ** d
                assert abs(constraint_ratio(n, 10 ** 6, d) - lim) < 1e-6

    def test_no_binning_is_determined(self):
        assert constraint_ratio(17, 1, 2) == 1.0


class TestDistanceMultiplier:
    def test_worked_values(self):
        assert round(distance_multiplier(2566, 20), 3) == 2.533
        assert round(distance_multiplier(14043, 60), 3) == 1.975

    def test_single_frame(self):
        assert distance_multiplier(400, 20) == 1.0

    def test_under_one_frame_rejected(self):
        with pytest.raises(ValueError):
            distance_multiplier(399, 20)

    def test_max_multiplier(self):
        assert max_distance_multiplier(20, 6) == 5.75
        assert max_distance_multiplier(20, 1) == 1.0

    def test_max_multiplier_approaches_pbf(self):
        m = 6
        values = [max_distance_multiplier(n, m) for n in (10, 100, 1000, 100000)]
        assert all(b > a for a, b in zip(values, values[1:]))
        assert abs(values[-1] - m) < 1e-3


class TestDesignTables:
    def test_grid_shape_and_csv(self):
        rows = design_tables()
        assert len(rows) == 65
        csv = design_table_csv(rows)
        lines = csv.strip().split("\n")
        assert lines[0] == "pbf,positions,M,f,below_threshold,saturated"
        assert len(lines) == 66

    def test_threshold_boundary(self):
        # with K=1499 and N=120 the limit sits between 1122 and 1483
        limit = feasibility_limit(1499, 120)
        assert 1122 < limit < 1483
        rows = design_tables()
        cell = {(r.pbf, r.positions): r for r in rows}
        assert cell[(6, 3)].below_threshold          # M = 1122
        assert not cell[(6, 4)].below_threshold      # M = 1483
        assert cell[(5, 2)].below_threshold          # M = 1105
        assert not cell[(3, 1)].below_threshold      # M = 1600

    def test_saturation_flags(self):
        rows = design_tables()
        cell = {(r.pbf, r.positions): r for r in rows}
        assert cell[(6, 13)].saturated and not cell[(6, 12)].saturated
        assert cell[(5, 10)].saturated and not cell[(5, 9)].saturated
        assert cell[(2, 5)].saturated and not cell[(2, 4)].saturated
