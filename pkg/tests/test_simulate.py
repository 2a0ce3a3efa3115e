import numpy as np
import pytest
from scipy import stats

from pathimpute import (
    AttractorPotential,
    ObsParams,
    Sde1Params,
    Sde2Params,
    build_grid,
    merge_grid,
    observe,
    simulate_sde1,
    simulate_sde2,
)
from pathimpute.simulate import load_truth_csv, save_dataset


class TestSde2:
    def test_deterministic_limit_is_linear_motion(self):
        grid = build_grid(0.0, 10.0, 101)
        pot = AttractorPotential(np.zeros(2), 0.0)
        params = Sde2Params(1.0, pot, (1.0, -1.0), (0.5, 0.25))
        path = simulate_sde2(params, grid, 0, noise=False)
        # with zero force and no noise, friction still damps velocity;
        # switch friction off too by taking sigma_v -> tiny
        params2 = Sde2Params(1e-12, pot, (1.0, -1.0), (0.5, 0.25))
        path2 = simulate_sde2(params2, grid, 0, noise=False)
        expect = np.array([1.0, -1.0]) + np.outer(grid.times, [0.5, 0.25])
        assert np.allclose(path2.positions, expect, atol=1e-9)
        # velocities decay under friction but positions stay finite
        assert np.all(np.isfinite(path.positions))

    def test_ou_stationary_velocity_variance(self):
        # beta = 0: velocity is OU with rate sigma_v and diffusion sigma_v,
        # stationary variance sigma_v/2 per coordinate
        sigma_v = 1.3
        grid = build_grid(0.0, 1000.0, 100_001)
        pot = AttractorPotential(np.zeros(2), 0.0)
        path = simulate_sde2(Sde2Params(sigma_v, pot), grid, 42)
        v = path.velocities[5000:]
        target = sigma_v / 2.0
        for d in range(2):
            assert np.var(v[:, d]) == pytest.approx(target, rel=0.10)

    def test_seed_reproducibility(self):
        grid = build_grid(0.0, 5.0, 200)
        pot = AttractorPotential(np.zeros(2), 1.0)
        a = simulate_sde2(Sde2Params(1.0, pot, (2.0, 0.0)), grid, 9)
        b = simulate_sde2(Sde2Params(1.0, pot, (2.0, 0.0)), grid, 9)
        assert np.array_equal(a.positions, b.positions)
        assert np.array_equal(a.velocities, b.velocities)

    def test_euler_identity_links_velocity_and_position(self):
        grid = build_grid(0.0, 2.0, 50)
        pot = AttractorPotential(np.zeros(2), 0.7)
        path = simulate_sde2(Sde2Params(0.8, pot, (1.0, 1.0)), grid, 3)
        dt = grid.increments[:, None]
        assert np.allclose(
            path.positions[1:], path.positions[:-1] + path.velocities[:-1] * dt
        )


class TestSde1:
    def test_brownian_increment_variance(self):
        grid = build_grid(0.0, 1000.0, 100_001)
        path = simulate_sde1(Sde1Params(0.0, (0.0, 0.0), 1.0), grid, 11)
        inc = np.diff(path.positions, axis=0)
        dt = grid.increments[0]
        for d in range(2):
            assert np.var(inc[:, d]) == pytest.approx(dt, rel=0.05)

    def test_mean_drift_step(self):
        # from mu=(0,0) toward c=(1,0) with beta=0.5 and dt=0.1 the mean
        # drift is (0.05, 0)
        grid = build_grid(0.0, 0.1, 2)
        params = Sde1Params(0.5, (1.0, 0.0), 1e-12)
        draws = np.array(
            [simulate_sde1(params, grid, s).positions[1] for s in range(4000)]
        )
        assert np.allclose(draws.mean(axis=0), [0.05, 0.0], atol=0.02)

    def test_initial_variance_is_sigma0_sq(self):
        grid = build_grid(0.0, 1.0, 2)
        params = Sde1Params(0.0, (0.0, 0.0), 100.0)
        starts = np.array(
            [simulate_sde1(params, grid, s).positions[0] for s in range(3000)]
        )
        assert np.var(starts[:, 0]) == pytest.approx(100.0, rel=0.1)

    def test_normalized_increments_pass_ks(self):
        grid = build_grid(0.0, 100.0, 10_001)
        path = simulate_sde1(Sde1Params(0.0, (0.0, 0.0), 1.0), grid, 21)
        z = np.diff(path.positions[:, 0]) / np.sqrt(grid.increments)
        stat = stats.kstest(z, "norm").statistic
        # 1% critical value for the KS statistic, n = 10^4
        crit = 1.63 / np.sqrt(z.size)
        assert stat < crit


class TestObserve:
    def test_zero_noise_reproduces_path(self):
        grid = build_grid(0.0, 3.0, 31)
        pot = AttractorPotential(np.zeros(2), 0.0)
        path = simulate_sde2(Sde2Params(1.0, pot), grid, 2)
        data = observe(path, grid.times[::5], ObsParams(0.0), 3)
        assert np.allclose(data.locations, path.positions[::5])

    def test_noise_variance(self):
        grid = build_grid(0.0, 1.0, 2)
        pot = AttractorPotential(np.zeros(2), 0.0)
        path = simulate_sde2(Sde2Params(1.0, pot), grid, 2, noise=False)
        resid = []
        for s in range(5000):
            data = observe(path, grid.times, ObsParams(0.04), s)
            resid.append(data.locations - path.positions)
        resid = np.concatenate(resid)
        assert np.var(resid) == pytest.approx(0.04, rel=0.05)

    def test_purity(self):
        grid = build_grid(0.0, 1.0, 11)
        pot = AttractorPotential(np.zeros(2), 0.0)
        path = simulate_sde2(Sde2Params(1.0, pot), grid, 2)
        before = path.positions.copy()
        observe(path, grid.times[::2], ObsParams(1.0), 4)
        assert np.array_equal(path.positions, before)

    def test_obs_times_must_lie_on_grid(self):
        grid = build_grid(0.0, 1.0, 11)
        pot = AttractorPotential(np.zeros(2), 0.0)
        path = simulate_sde2(Sde2Params(1.0, pot), grid, 2)
        from pathimpute import ValidationError

        with pytest.raises(ValidationError):
            observe(path, [0.55], ObsParams(0.0), 1)


def test_dataset_roundtrip(tmp_path):
    grid = build_grid(0.0, 2.0, 21)
    pot = AttractorPotential(np.zeros(2), 0.5)
    path = simulate_sde2(Sde2Params(1.0, pot, (1.0, 0.0)), grid, 5)
    data = observe(path, grid.times[::4], ObsParams(1e-2), 6)
    save_dataset(tmp_path, path, data, {"sigma_v": 1.0})
    back = load_truth_csv(tmp_path / "truth.csv")
    assert np.allclose(back.positions, path.positions)
    assert np.allclose(back.velocities, path.velocities)
    assert (tmp_path / "telemetry.csv").exists()
    assert (tmp_path / "params.json").exists()
