import numpy as np
import pytest

import rocodec as rc
from rocodec.analysis import cell_index
from rocodec.pyramid import dog_kernel, sample_position

from oracles import naive_dense_operator, naive_forward


class TestCellIndex:
    def test_first_cell(self, params):
        grid = rc.grid_spec(33, None, params)
        assert cell_index(0, 0, 0, grid) == 0

    def test_cumulative_offset(self, params):
        grid = rc.grid_spec(8, 3, params)
        assert grid.layer_sides[:2] == (2, 4)
        assert cell_index(1, 0, 1, grid) == 4 + 0 + 1

    def test_enumeration_is_bijection(self, params):
        grid = rc.grid_spec(17, 3, params)
        seen = [
            cell_index(k, i, j, grid)
            for k in range(grid.layer_count)
            for i in range(grid.layer_sides[k])
            for j in range(grid.layer_sides[k])
        ]
        assert sorted(seen) == list(range(grid.total_cells))

    def test_out_of_grid_rejected(self, params):
        grid = rc.grid_spec(17, 3, params)
        for bad in [(3, 0, 0), (0, 0, grid.layer_sides[0]), (1, -1, 0)]:
            with pytest.raises(rc.InvalidParameterError):
                cell_index(*bad, grid)


class TestBuildOperator:
    def test_row_count_and_structure(self, params):
        grid = rc.grid_spec(9, 2, params)
        op = rc.build_analysis_operator(grid, params)
        assert op.rows == grid.layer_sides[0] ** 2 + 81
        assert op.cols == 81
        # every row respects the support bound
        per_row = np.diff(op.matrix.indptr)
        widest = (2 * max(grid.half_widths) + 1) ** 2
        assert per_row.max() <= widest

    def test_interior_finest_rows_have_full_support(self, params):
        grid = rc.grid_spec(17, 2, params)
        op = rc.build_analysis_operator(grid, params)
        m = grid.half_widths[1]
        for pos in range(m, 17 - m):
            p = cell_index(1, pos, pos, grid)
            assert op.matrix[p].nnz == (2 * m + 1) ** 2

    def test_rows_equal_kernel_taps(self, params):
        """Row p read back as a patch is exactly the layer's kernel."""
        grid = rc.grid_spec(17, 2, params)
        op = rc.build_analysis_operator(grid, params)
        kern = dog_kernel(1, params, 2)
        m = kern.half_width
        u = sample_position(1, 8, 2)
        row = op.matrix[cell_index(1, 8, 8, grid)].toarray().reshape(17, 17)
        np.testing.assert_array_equal(
            row[u - m:u + m + 1, u - m:u + m + 1], kern.taps
        )

    def test_matches_naive_dense_operator(self, params):
        for boundary in (rc.BOUNDARY_ZERO, rc.BOUNDARY_PERIODIC):
            grid = rc.grid_spec(9, 2, params)
            op = rc.build_analysis_operator(grid, params, boundary=boundary)
            dense = naive_dense_operator(9, params, 2,
                                         periodic=boundary == rc.BOUNDARY_PERIODIC)
            np.testing.assert_allclose(op.matrix.toarray(), dense,
                                       rtol=0, atol=1e-15)

    def test_total_cells_equals_rows(self, params):
        for n in (9, 17, 33):
            grid = rc.grid_spec(n, None, params)
            op = rc.build_analysis_operator(grid, params)
            assert op.rows == grid.total_cells

    def test_reproducible_bit_exactly(self, params):
        grid = rc.grid_spec(17, None, params)
        a = rc.build_analysis_operator(grid, params).matrix
        b = rc.build_analysis_operator(grid, params).matrix
        assert np.array_equal(a.data, b.data)
        assert np.array_equal(a.indices, b.indices)
        assert np.array_equal(a.indptr, b.indptr)

    def test_memory_cap(self, params):
        grid = rc.grid_spec(33, None, params)
        with pytest.raises(rc.ResourceError) as err:
            rc.build_analysis_operator(grid, params, max_bytes=1024)
        assert "1024" in str(err.value)

    def test_unknown_boundary(self, params):
        grid = rc.grid_spec(9, 2, params)
        with pytest.raises(rc.InvalidParameterError):
            rc.build_analysis_operator(grid, params, boundary="reflect")


class TestForward:
    def test_zero_image(self, op33):
        z = rc.Image.from_array(np.zeros((33, 33)))
        assert np.all(rc.forward(op33, z) == 0.0)

    def test_delta_image_reads_matrix_column(self, params):
        grid = rc.grid_spec(17, 2, params)
        op = rc.build_analysis_operator(grid, params)
        x0, y0 = 7, 9
        delta = np.zeros((17, 17))
        delta[x0, y0] = 1.0
        c = rc.forward(op, rc.Image.from_array(delta))
        col = op.matrix[:, x0 * 17 + y0].toarray().ravel()
        np.testing.assert_array_equal(c, col)
        # spot-check one value against the kernel formula
        kern = dog_kernel(1, params, 2)
        i = j = 4
        u = sample_position(1, i, 2)
        m = kern.half_width
        p = cell_index(1, i, j, grid)
        expected = kern.taps[m + (u - x0), m + (u - y0)]
        assert c[p] == expected

    def test_matches_naive_convolution_oracle(self, params, rng):
        grid = rc.grid_spec(33, 4, params)
        op = rc.build_analysis_operator(grid, params)
        for _ in range(5):
            f = rng.standard_normal((33, 33))
            fast = rc.forward(op, rc.Image.from_array(f))
            slow = naive_forward(f, params, 4)
            np.testing.assert_allclose(fast, slow, rtol=1e-10, atol=1e-12)

    def test_constant_image_periodic_band_pass_silent(self, params):
        grid = rc.grid_spec(17, None, params)
        op = rc.build_analysis_operator(grid, params, boundary=rc.BOUNDARY_PERIODIC)
        c = rc.forward(op, rc.Image.from_array(np.full((17, 17), 9.5)))
        n0 = grid.layer_sides[0]
        assert np.abs(c[n0 * n0:]).max() < 1e-10

    def test_constant_image_zero_padding_interior_silent(self, params):
        # border cells of clipped band-pass rows do respond; interiors stay 0
        grid = rc.grid_spec(33, None, params)
        op = rc.build_analysis_operator(grid, params)
        c = rc.forward(op, rc.Image.from_array(np.full((33, 33), 9.5)))
        m = grid.half_widths[-1]
        k = grid.layer_count - 1
        interior = [
            cell_index(k, i, j, grid)
            for i in range(m, 33 - m)
            for j in range(m, 33 - m)
        ]
        assert np.abs(c[interior]).max() < 1e-10

    def test_dimension_mismatch(self, op33):
        with pytest.raises(rc.InvalidParameterError):
            rc.forward(op33, rc.Image.from_array(np.zeros((17, 17))))


class TestAdjoint:
    def test_adjoint_identity(self, op33, rng):
        for _ in range(20):
            f = rng.standard_normal((33, 33))
            c = rng.standard_normal(op33.rows)
            lhs = float(rc.forward(op33, rc.Image.from_array(f)) @ c)
            rhs = float(f.ravel() @ rc.adjoint(op33, c).as_vector())
            assert lhs == pytest.approx(rhs, rel=1e-12)

    def test_zero_vector(self, op33):
        out = rc.adjoint(op33, np.zeros(op33.rows))
        assert np.all(out.samples == 0.0)

    def test_linearity(self, op33, rng):
        f = rng.standard_normal((33, 33))
        g = rng.standard_normal((33, 33))
        a = 2.375
        left = rc.adjoint(op33, rc.forward(op33, rc.Image.from_array(a * f + g)))
        right = a * rc.adjoint(op33, rc.forward(op33, rc.Image.from_array(f))).samples \
            + rc.adjoint(op33, rc.forward(op33, rc.Image.from_array(g))).samples
        np.testing.assert_allclose(left.samples, right, rtol=1e-12, atol=1e-9)

    def test_dimension_mismatch(self, op33):
        with pytest.raises(rc.InvalidParameterError):
            rc.adjoint(op33, np.zeros(op33.rows - 1))


class TestImage:
    def test_rejects_non_square(self):
        with pytest.raises(rc.InvalidParameterError):
            rc.Image.from_array(np.zeros((3, 4)))

    def test_rejects_non_finite(self):
        bad = np.zeros((3, 3))
        bad[1, 1] = np.nan
        with pytest.raises(rc.InvalidParameterError):
            rc.Image.from_array(bad)
