import json

import numpy as np
import pytest

from csgmm import (
    AngleGrid,
    build_dictionary,
    grid_circulant,
    grid_custom,
    grid_equidistant_sin,
    grid_toeplitz,
    steering_vector,
)


def dft_matrix(n_rows, n_cols, period):
    m, c = np.meshgrid(np.arange(n_rows), np.arange(n_cols), indexing="ij")
    return np.exp(-2j * np.pi * m * c / period)


class TestSteering:
    def test_broadside_all_ones(self):
        assert np.array_equal(steering_vector(0.0, 4), np.ones(4))

    def test_endfire_phase(self):
        np.testing.assert_allclose(steering_vector(np.pi / 2, 2), [1, -1], atol=1e-12)

    def test_thirty_degrees(self):
        np.testing.assert_allclose(
            steering_vector(np.pi / 6, 3), [1, -1j, -1], atol=1e-12
        )

    def test_unit_modulus(self, rng):
        for angle in rng.uniform(-np.pi / 2, np.pi / 2, 25):
            np.testing.assert_allclose(
                np.abs(steering_vector(angle, 33)), 1.0, atol=1e-14
            )

    def test_rejects_empty_array(self):
        with pytest.raises(ValueError):
            steering_vector(0.1, 0)


class TestGrids:
    def test_equidistant_sines(self):
        np.testing.assert_array_equal(
            grid_equidistant_sin(4).sines, [-1.0, -0.5, 0.0, 0.5]
        )

    def test_equidistant_spacing(self):
        sines = grid_equidistant_sin(64).sines
        assert np.all(np.diff(sines) > 0)
        np.testing.assert_allclose(np.diff(sines), 2.0 / 64)

    def test_equidistant_matches_toeplitz_set(self):
        # 2N equidistant sines coincide with the toeplitz grid's sine set
        equi = np.sort(grid_equidistant_sin(32).sines)
        toep = np.sort(grid_toeplitz(16).sines)
        np.testing.assert_allclose(equi, toep, atol=1e-15)

    def test_circulant_order_n4(self):
        np.testing.assert_array_equal(grid_circulant(4).sines, [0.0, 0.5, -1.0, -0.5])

    def test_circulant_order_n2(self):
        np.testing.assert_array_equal(grid_circulant(2).sines, [0.0, -1.0])

    @pytest.mark.parametrize("n", [2, 4, 8, 16])
    def test_circulant_sine_multiset(self, n):
        expected = np.sort(-1.0 + 2.0 * np.arange(n) / n)
        np.testing.assert_allclose(np.sort(grid_circulant(n).sines), expected)

    def test_circulant_rejects_odd(self):
        with pytest.raises(ValueError):
            grid_circulant(5)

    def test_toeplitz_order_n2(self):
        np.testing.assert_array_equal(grid_toeplitz(2).sines, [0.0, 0.5, -1.0, -0.5])

    def test_toeplitz_n1(self):
        np.testing.assert_array_equal(grid_toeplitz(1).sines, [0.0, -1.0])

    def test_toeplitz_sorted_spacing(self):
        for n in (2, 5, 16):
            sines = np.sort(grid_toeplitz(n).sines)
            np.testing.assert_allclose(np.diff(sines), 1.0 / n)

    def test_rejects_duplicates(self):
        with pytest.raises(ValueError):
            grid_custom([0.0, 0.5, 0.5])

    def test_rejects_out_of_range(self):
        with pytest.raises(ValueError):
            grid_custom([0.0, 1.0])  # sin = 1 excluded (half-open)

    def test_json_roundtrip(self):
        grid = grid_circulant(8)
        doc = json.loads(grid.to_json())
        assert doc["kind"] == "circulant" and doc["size"] == 8
        back = AngleGrid.from_json(grid.to_json())
        np.testing.assert_array_equal(back.sines, grid.sines)
        assert back.kind == grid.kind


class TestDictionary:
    @pytest.mark.parametrize("n", [2, 4, 8, 16, 32, 64])
    def test_circulant_grid_equals_dft(self, n):
        mat = build_dictionary(grid_circulant(n), n).matrix
        assert np.abs(mat - dft_matrix(n, n, n)).max() < 1e-12

    @pytest.mark.parametrize("n", [2, 4, 8, 16, 32, 64])
    def test_toeplitz_grid_equals_oversampled_dft(self, n):
        mat = build_dictionary(grid_toeplitz(n), n).matrix
        assert np.abs(mat - dft_matrix(n, 2 * n, 2 * n)).max() < 1e-12

    def test_single_broadside_column(self):
        mat = build_dictionary(grid_custom([0.0]), 5).matrix
        np.testing.assert_array_equal(mat, np.ones((5, 1)))

    def test_columns_are_steering_vectors(self):
        grid = grid_equidistant_sin(16)
        d = build_dictionary(grid, 8)
        for j, angle in enumerate(grid.angles):
            np.testing.assert_allclose(
                d.matrix[:, j], steering_vector(angle, 8), atol=1e-12
            )

    def test_column_norms(self):
        d = build_dictionary(grid_equidistant_sin(24), 12)
        np.testing.assert_allclose(
            np.sum(np.abs(d.matrix) ** 2, axis=0), 12.0, atol=1e-12
        )

    def test_circulant_weighting_gives_circulant_matrix(self, rng):
        n = 8
        d = build_dictionary(grid_circulant(n), n).matrix
        c = rng.uniform(0.0, 2.0, n)
        cov = (d * c) @ d.conj().T
        for i in range(1, n):
            np.testing.assert_allclose(cov[i], np.roll(cov[0], i), atol=1e-10)
