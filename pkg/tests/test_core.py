import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pathimpute import (
    BasisSpec,
    LatentPath,
    Telemetry,
    ValidationError,
    basis_matrix,
    build_grid,
    merge_grid,
    read_telemetry_csv,
    uniform_bspline_spec,
    velocities_from_path,
)
from pathimpute.core import write_telemetry_csv


class TestBuildGrid:
    def test_three_points(self):
        g = build_grid(0, 1, 3)
        assert np.allclose(g.times, [0.0, 0.5, 1.0])
        assert np.allclose(g.increments, [0.5, 0.5])

    def test_unit_increments(self):
        g = build_grid(0, 10, 11)
        assert np.allclose(g.increments, 1.0)

    def test_degenerate_span_rejected(self):
        with pytest.raises(ValidationError):
            build_grid(5, 5, 3)

    def test_too_few_points_rejected(self):
        with pytest.raises(ValidationError):
            build_grid(0, 1, 1)


class TestMergeGrid:
    def test_inserts_obs_time(self):
        g = build_grid(0, 2, 3)
        merged, idx = merge_grid(g, [0.5])
        assert np.allclose(merged.times, [0, 0.5, 1, 2])
        assert list(idx) == [1]

    def test_duplicates_removed(self):
        g = build_grid(0, 1, 2)
        merged, idx = merge_grid(g, [0.0, 1.0])
        assert np.allclose(merged.times, [0, 1])
        assert list(idx) == [0, 1]

    def test_outside_span_rejected(self):
        g = build_grid(0, 1, 2)
        with pytest.raises(ValidationError):
            merge_grid(g, [1.5])

    @given(
        st.lists(st.floats(0.0, 10.0), min_size=1, max_size=8),
        st.integers(2, 12),
    )
    @settings(max_examples=50, deadline=None)
    def test_idempotent(self, obs, m):
        g = build_grid(0.0, 10.0, m)
        once, _ = merge_grid(g, sorted(obs))
        twice, _ = merge_grid(once, sorted(obs))
        assert np.array_equal(once.times, twice.times)


class TestVelocities:
    def test_single_step(self):
        grid = build_grid(0, 0.5, 2)
        path = LatentPath(grid, np.array([[0.0, 0.0], [1.0, 0.0]]))
        v = velocities_from_path(path)
        assert np.allclose(v.velocities[0], [2.0, 0.0])
        assert v.velocities_derived

    def test_constant_path(self):
        grid = build_grid(0, 1, 5)
        path = LatentPath(grid, np.ones((5, 2)))
        v = velocities_from_path(path)
        assert np.allclose(v.velocities, 0.0)

    def test_linear_path(self):
        grid = build_grid(0, 2, 9)
        mu = np.column_stack([grid.times, 2 * grid.times])
        v = velocities_from_path(LatentPath(grid, mu))
        assert np.allclose(v.velocities, [1.0, 2.0])

    @given(st.integers(0, 2**32 - 1))
    @settings(max_examples=25, deadline=None)
    def test_cumsum_roundtrip(self, seed):
        rng = np.random.default_rng(seed)
        grid = build_grid(0.0, 1.0, 12)
        mu = rng.normal(size=(12, 2))
        v = velocities_from_path(LatentPath(grid, mu))
        rebuilt = np.empty_like(mu)
        rebuilt[0] = mu[0]
        dt = grid.increments
        for j in range(11):
            rebuilt[j + 1] = rebuilt[j] + v.velocities[j] * dt[j]
        assert np.allclose(rebuilt, mu, atol=1e-10)


class TestBasisMatrix:
    def test_degree0_one_hot(self):
        grid = build_grid(0, 1, 5)
        spec = BasisSpec(np.array([0.0, 0.5, 1.0]), degree=0)
        W = basis_matrix(spec, grid)
        assert W.shape == (5, 2)
        assert np.allclose(W.sum(axis=1), 1.0)
        assert set(np.unique(W)) <= {0.0, 1.0}

    def test_cubic_partition_of_unity(self):
        grid = build_grid(0, 3, 40)
        spec = uniform_bspline_spec(0, 3, n_interior=4)
        W = basis_matrix(spec, grid)
        assert W.shape == (40, spec.p)
        assert np.allclose(W.sum(axis=1), 1.0, atol=1e-10)

    def test_constant_beta_representable(self):
        # solve W a = 1 by least squares; residual ~ 0 for a clamped basis
        grid = build_grid(0, 3, 25)
        spec = uniform_bspline_spec(0, 3, n_interior=3)
        W = basis_matrix(spec, grid)
        target = np.ones(25)
        a, *_ = np.linalg.lstsq(W, target, rcond=None)
        assert np.linalg.norm(W @ a - target) < 1e-10

    def test_knots_must_cover_grid(self):
        grid = build_grid(0, 3, 10)
        with pytest.raises(ValidationError):
            basis_matrix(BasisSpec(np.array([0.0, 1.0]), degree=1), grid)


class TestTelemetryCsv:
    def test_roundtrip(self, tmp_path, small_telemetry):
        path = tmp_path / "tel.csv"
        write_telemetry_csv(path, small_telemetry)
        back = read_telemetry_csv(path)
        assert np.allclose(back.obs_times, small_telemetry.obs_times)
        assert np.allclose(back.locations, small_telemetry.locations)

    def test_header_required(self, tmp_path):
        p = tmp_path / "bad.csv"
        p.write_text("0,1,2\n1,2,3\n")
        with pytest.raises(ValidationError):
            read_telemetry_csv(p)

    def test_non_increasing_times_rejected(self, tmp_path):
        p = tmp_path / "bad.csv"
        p.write_text("time,x,y\n0,0,0\n0,1,1\n")
        with pytest.raises(ValidationError):
            read_telemetry_csv(p)


class TestInvariants:
    def test_grid_requires_increasing(self):
        with pytest.raises(ValidationError):
            build_grid(1, 0, 3)

    def test_path_shape_checked(self):
        grid = build_grid(0, 1, 3)
        with pytest.raises(ValidationError):
            LatentPath(grid, np.zeros((2, 2)))

    def test_telemetry_needs_two_rows(self):
        with pytest.raises(ValidationError):
            Telemetry(np.array([0.0]), np.zeros((1, 2)))
