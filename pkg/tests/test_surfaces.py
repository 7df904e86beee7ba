"""Theta-grid loss surfaces: sweeps, minima detection, CSV round trips."""

import numpy as np
import pytest

from gmmatch.divergence import GridSpec
from gmmatch.surfaces import (
    SurfaceGrid,
    SurfaceSpec,
    default_theta_grid,
    find_local_minima,
    noising_ladder_sweep,
    read_surface_csv,
    sweep,
    tailored_model,
    tailored_target,
    uniform_angles,
    write_surface_csv,
)
from gmmatch.tasks import ConditioningPolicy, EstimatorSettings, MatchingTask, Transform, task_loss

SMALL = EstimatorSettings(points_1d=1001, points_2d=201)


def small_grid(n=7):
    return default_theta_grid(-3.0, 3.0, n)


class TestTailoredSetup:
    def test_target_components(self):
        q = tailored_target(0.1)
        np.testing.assert_allclose(np.sort(q.means[:, 0]), [-1.0, 1.0])
        np.testing.assert_allclose(q.means[:, 1], 0.0)
        np.testing.assert_allclose(
            q.covariances, np.broadcast_to(0.1 * np.eye(2), (2, 2, 2)), atol=1e-14
        )

    def test_invalid_sigma2(self):
        with pytest.raises(ValueError):
            tailored_model((0.0, 0.0), 0.0)

    def test_default_grid_centers_hit_integers(self):
        ax1, ax2 = default_theta_grid().axes()
        for ax in (ax1, ax2):
            assert len(ax) == 151
            assert np.min(np.abs(ax - 1.0)) < 1e-12
            assert np.min(np.abs(ax + 1.0)) < 1e-12

    def test_uniform_angles(self):
        angles = uniform_angles(4)
        np.testing.assert_allclose(angles, [0.0, np.pi / 4, np.pi / 2, 3 * np.pi / 4])


class TestSweep:
    def test_joint_matches_task_loss_pointwise(self):
        spec = SurfaceSpec(
            task=MatchingTask(t=(0, 1)), sigma2=0.1, theta_grid=small_grid(), settings=SMALL
        )
        grid = sweep(spec)
        q = tailored_target(0.1)
        for i in (0, 3, 6):
            for j in (1, 4):
                model = tailored_model((grid.axis1[i], grid.axis2[j]), 0.1)
                expected = task_loss(spec.task, model, q, SMALL)
                # evaluator shares one quadrature domain across the grid while
                # task_loss rebuilds it per pair; agreement is to quadrature
                assert grid.loss[i, j] == pytest.approx(expected, abs=1e-8)

    def test_marginal_matches_task_loss_pointwise(self):
        task = MatchingTask(transform=Transform(kind="rotation", angle=0.3), t=(0,))
        spec = SurfaceSpec(task=task, sigma2=0.1, theta_grid=small_grid(), settings=SMALL)
        grid = sweep(spec)
        q = tailored_target(0.1)
        for i in (0, 2, 5):
            model = tailored_model((grid.axis1[i], grid.axis2[i]), 0.1)
            expected = task_loss(task, model, q, SMALL)
            assert grid.loss[i, i] == pytest.approx(expected, abs=1e-8)

    def test_conditional_matches_task_loss_pointwise(self):
        policy = ConditioningPolicy(n_cond=4, seed=2)
        task = MatchingTask(s=(1,), t=(0,), conditioning=policy)
        spec = SurfaceSpec(task=task, sigma2=0.1, theta_grid=small_grid(), settings=SMALL)
        grid = sweep(spec)
        q = tailored_target(0.1)
        model = tailored_model((grid.axis1[1], grid.axis2[4]), 0.1)
        expected = task_loss(task, model, q, SMALL)
        assert grid.loss[1, 4] == pytest.approx(expected, abs=1e-8)

    def test_swap_symmetry(self):
        # the two model components are exchangeable
        spec = SurfaceSpec(
            task=MatchingTask(t=(0, 1)), sigma2=0.1, theta_grid=small_grid(9), settings=SMALL
        )
        grid = sweep(spec)
        assert np.max(np.abs(grid.loss - grid.loss.T)) < 1e-9

    def test_global_anchoring(self):
        # loss vanishes when the model components sit on the target modes
        q_tasks = [
            MatchingTask(t=(0, 1)),
            MatchingTask(transform=Transform(kind="rotation", angle=np.deg2rad(45)), t=(0,)),
            MatchingTask(s=(1,), t=(0,), conditioning=ConditioningPolicy(n_cond=4, seed=1)),
        ]
        for task in q_tasks:
            spec = SurfaceSpec(task=task, sigma2=0.1, theta_grid=small_grid(), settings=SMALL)
            grid = sweep(spec)
            i = int(np.argmin(np.abs(grid.axis1 + 1.0)))
            j = int(np.argmin(np.abs(grid.axis2 - 1.0)))
            assert abs(grid.loss[i, j]) < 1e-6

    def test_flat_x2_marginal(self):
        spec = SurfaceSpec(
            task=MatchingTask(t=(1,)), sigma2=0.1, theta_grid=small_grid(), settings=SMALL
        )
        grid = sweep(spec)
        assert np.max(np.abs(grid.loss)) < 1e-9

    def test_rotation_average_matches_mean_of_singles(self):
        angles = uniform_angles(3)
        base = MatchingTask(t=(0,))
        avg_spec = SurfaceSpec(
            task=base, sigma2=0.1, theta_grid=small_grid(5), rotations=angles, settings=SMALL
        )
        avg = sweep(avg_spec)
        singles = []
        for a in angles:
            task = MatchingTask(transform=Transform(kind="rotation", angle=a), t=(0,))
            singles.append(
                sweep(SurfaceSpec(task=task, sigma2=0.1, theta_grid=small_grid(5), settings=SMALL)).loss
            )
        np.testing.assert_allclose(avg.loss, np.mean(singles, axis=0), atol=1e-10)

    def test_thread_count_does_not_change_bytes(self):
        spec = SurfaceSpec(
            task=MatchingTask(t=(0, 1)), sigma2=0.1, theta_grid=small_grid(9), settings=SMALL
        )
        a = sweep(spec, threads=1)
        b = sweep(spec, threads=4)
        np.testing.assert_array_equal(a.loss, b.loss)


class TestFindLocalMinima:
    def test_constant_surface_has_no_strict_minima(self):
        ax = np.linspace(-1, 1, 5)
        grid = SurfaceGrid(ax, ax, np.zeros((5, 5)), {})
        assert find_local_minima(grid) == []

    def test_single_bowl(self):
        ax = np.linspace(-1, 1, 5)
        xx, yy = np.meshgrid(ax, ax, indexing="ij")
        grid = SurfaceGrid(ax, ax, xx**2 + yy**2, {})
        minima = find_local_minima(grid)
        assert len(minima) == 1
        assert minima[0].theta == (0.0, 0.0) and minima[0].is_global

    def test_two_bowls_one_global(self):
        ax = np.linspace(-2, 2, 9)
        xx, yy = np.meshgrid(ax, ax, indexing="ij")
        z = np.minimum((xx - 1) ** 2 + yy**2, (xx + 1) ** 2 + yy**2 + 0.5)
        grid = SurfaceGrid(ax, ax, z, {})
        minima = find_local_minima(grid)
        flags = sorted(m.is_global for m in minima)
        assert len(minima) == 2 and flags == [False, True]

    def test_error_cells_block_scan(self):
        ax = np.linspace(-1, 1, 5)
        z = np.zeros((5, 5))
        z[2, 2] = np.nan
        grid = SurfaceGrid(ax, ax, z, {}, error_cells=[(2, 2)])
        with pytest.raises(ValueError):
            find_local_minima(grid)


class TestNoisingLadder:
    def test_variance_order_enforced(self):
        spec = SurfaceSpec(task=MatchingTask(t=(0, 1)), theta_grid=small_grid(), settings=SMALL)
        with pytest.raises(ValueError):
            noising_ladder_sweep(spec, [0.3, 0.1])
        with pytest.raises(ValueError):
            noising_ladder_sweep(spec, [-0.1, 0.2])

    def test_zero_variance_equals_base_sweep(self):
        spec = SurfaceSpec(
            task=MatchingTask(t=(0, 1)), sigma2=0.02, theta_grid=small_grid(5), settings=SMALL
        )
        base = sweep(spec)
        ladder = noising_ladder_sweep(spec, [0.0, 0.5])
        np.testing.assert_array_equal(ladder[0].loss, base.loss)
        assert ladder[0].metadata["noise_var"] == 0.0
        assert ladder[1].metadata["noise_var"] == 0.5

    def test_each_rung_anchored_at_global_optimum(self):
        spec = SurfaceSpec(
            task=MatchingTask(t=(0, 1)), sigma2=0.02, theta_grid=small_grid(), settings=SMALL
        )
        for g in noising_ladder_sweep(spec, [0.0, 0.1, 1.0]):
            i = int(np.argmin(np.abs(g.axis1 + 1.0)))
            j = int(np.argmin(np.abs(g.axis2 - 1.0)))
            assert abs(g.loss[i, j]) < 1e-6


class TestCsv:
    def test_round_trip_bitwise(self, tmp_path):
        spec = SurfaceSpec(
            task=MatchingTask(t=(0, 1)), sigma2=0.1, theta_grid=small_grid(), settings=SMALL
        )
        grid = sweep(spec)
        p1, p2 = tmp_path / "a.csv", tmp_path / "b.csv"
        write_surface_csv(grid, p1)
        back = read_surface_csv(p1)
        np.testing.assert_array_equal(back.loss, grid.loss)
        np.testing.assert_array_equal(back.axis1, grid.axis1)
        write_surface_csv(back, p2)
        assert p1.read_bytes() == p2.read_bytes()

    def test_nan_cells_survive(self, tmp_path):
        ax = np.linspace(-1, 1, 5)
        z = np.zeros((5, 5))
        z[1, 3] = np.nan
        grid = SurfaceGrid(ax, ax, z, {"tag": 1}, error_cells=[(1, 3)])
        path = tmp_path / "nan.csv"
        write_surface_csv(grid, path)
        back = read_surface_csv(path)
        assert back.error_cells == [(1, 3)]
        assert np.isnan(back.loss[1, 3])

    def test_rejects_other_files(self, tmp_path):
        path = tmp_path / "x.csv"
        path.write_text("1,2,3\n")
        with pytest.raises(ValueError):
            read_surface_csv(path)


class TestSpecValidation:
    def test_sigma2_positive(self):
        with pytest.raises(ValueError):
            SurfaceSpec(task=MatchingTask(t=(0, 1)), sigma2=0.0, theta_grid=small_grid())

    def test_theta_grid_must_be_2d(self):
        with pytest.raises(ValueError):
            SurfaceSpec(task=MatchingTask(t=(0, 1)), theta_grid=GridSpec((-1.0,), (1.0,), (5,)))
