"""Dataset construction: sampling procedures, label oracles, test suites."""

import math
from dataclasses import replace

import numpy as np
import pytest

from gridop.physics import (
    InterfaceInput,
    State,
    network_residual,
    solve_network,
    uniform_partition,
)
from gridop.sampling import (
    DatasetSample,
    SamplingRanges,
    SensorSpec,
    build_test_suite,
    build_training_set,
    gamma_perturbed_state,
    make_label,
    sample_state_input,
    sample_state_solve_network,
    samples_to_arrays,
    sensor_input_function,
    trajectory_to_samples,
)

RANGES = SamplingRanges()


class TestRanges:
    def test_defaults_pin_the_boxes(self):
        assert RANGES.delta == (-math.pi, 4 * math.pi)
        assert RANGES.omega == (0.0, math.pi / 2)
        assert RANGES.e_d_prime == (-1.0, 1.0)
        assert RANGES.e_q_prime == (0.0, 1.5)
        assert RANGES.i_d == (-1.0, 3.0)
        assert RANGES.i_q == (-1.0, 1.0)
        assert RANGES.h == (1e-3, 0.25)

    def test_validation(self):
        with pytest.raises(ValueError):
            SamplingRanges(delta=(1.0, -1.0))
        with pytest.raises(ValueError):
            SamplingRanges(h=(0.0, 0.25))


class TestSampleStateInput:
    def test_draws_stay_in_their_boxes(self, rng):
        lows = np.array([b[0] for b in (RANGES.delta, RANGES.omega,
                                        RANGES.e_d_prime, RANGES.e_q_prime)])
        highs = np.array([b[1] for b in (RANGES.delta, RANGES.omega,
                                         RANGES.e_d_prime, RANGES.e_q_prime)])
        for _ in range(2000):
            x, y = sample_state_input(RANGES, rng)
            assert np.all(np.asarray(x) >= lows) and np.all(np.asarray(x) <= highs)
            assert RANGES.i_d[0] <= y.i_d <= RANGES.i_d[1]
            assert RANGES.i_q[0] <= y.i_q <= RANGES.i_q[1]

    def test_uniform_mean_within_clt_band(self, rng):
        n = 10_000
        deltas = np.array([sample_state_input(RANGES, rng)[0].delta
                           for _ in range(n)])
        lo, hi = RANGES.delta
        mean_expect = 0.5 * (lo + hi)
        sigma = (hi - lo) / math.sqrt(12.0) / math.sqrt(n)
        assert abs(deltas.mean() - mean_expect) <= 3.0 * sigma

    def test_seeded_determinism(self):
        a = sample_state_input(RANGES, np.random.default_rng(3))
        b = sample_state_input(RANGES, np.random.default_rng(3))
        assert a == b


class TestSampleStateSolveNetwork:
    def test_network_consistency(self, operating_point, rng):
        _, gp, grid = operating_point
        for _ in range(200):
            x, y = sample_state_solve_network(RANGES, gp, grid, rng)
            r1, r2 = network_residual(x, y, gp, grid)
            assert abs(r1) <= 1e-10 and abs(r2) <= 1e-10

    def test_zero_grid_zero_emf_gives_zero_currents(self, operating_point, rng):
        _, gp, grid = operating_point
        dead = replace(grid, V_inf=0.0)
        ranges = SamplingRanges(e_d_prime=(0.0, 1e-300), e_q_prime=(0.0, 1e-300))
        x, y = sample_state_solve_network(ranges, gp, dead, rng)
        assert abs(y.i_d) <= 1e-12 and abs(y.i_q) <= 1e-12

    def test_distribution_differs_from_box_sampling(self, operating_point):
        _, gp, grid = operating_point
        rng1 = np.random.default_rng(11)
        rng2 = np.random.default_rng(11)
        n = 10_000
        id_box = np.array([sample_state_input(RANGES, rng1)[1].i_d
                           for _ in range(n)])
        id_net = np.array([sample_state_solve_network(RANGES, gp, grid, rng2)[1].i_d
                           for _ in range(n)])
        # two-sample location shift: compare means against the pooled spread
        gap = abs(id_box.mean() - id_net.mean())
        scale = math.sqrt(id_box.var() / n + id_net.var() / n)
        assert gap > 5.0 * scale


class TestSensorInputFunction:
    def test_single_sensor_is_constant(self):
        f = sensor_input_function(np.array([[0.4, -0.2]]), np.zeros(1))
        assert f(0.0) == InterfaceInput(0.4, -0.2)
        assert f(0.2) == InterfaceInput(0.4, -0.2)

    def test_two_sensors_interpolate_and_clamp(self):
        f = sensor_input_function(np.array([[0.0, 1.0], [1.0, 0.0]]),
                                  np.array([0.0, 0.1]))
        mid = f(0.05)
        assert mid.i_d == pytest.approx(0.5) and mid.i_q == pytest.approx(0.5)
        end = f(0.2)  # beyond the last sensor: hold
        assert end.i_d == pytest.approx(1.0) and end.i_q == pytest.approx(0.0)


class TestMakeLabel:
    def test_incremental_vanishes_with_step(self, operating_point):
        x_star, gp, _ = operating_point
        x = State(x_star.delta, 1.2, x_star.e_d_prime, x_star.e_q_prime)
        y = np.array([[0.5, 0.2]])
        label = make_label(x, y, np.zeros(1), 1e-6, "incremental", gp)
        assert np.abs(label).max() <= 1e-4

    def test_residual_is_zero_when_models_match(self, operating_point):
        x_star, gp, _ = operating_point
        x = State(0.5, 1.2, 0.3, 1.0)
        y = np.array([[0.5, 0.2]])
        label = make_label(x, y, np.zeros(1), 0.1, "residual",
                           replace(gp, beta=1.0))
        assert np.abs(label).max() <= 1e-12

    def test_incremental_against_refined_oracle(self, operating_point):
        x_star, gp, _ = operating_point
        x = State(x_star.delta + 0.2, 0.8, x_star.e_d_prime - 0.1,
                  x_star.e_q_prime + 0.1)
        y = np.array([[0.7, 0.1]])
        label = make_label(x, y, np.zeros(1), 0.05, "incremental", gp,
                           substeps=16)
        oracle = make_label(x, y, np.zeros(1), 0.05, "incremental", gp,
                            substeps=256)
        assert np.abs(label - oracle).max() <= 1e-8

    def test_full_equals_incremental_plus_state(self, operating_point, rng):
        _, gp, _ = operating_point
        for _ in range(10):
            x, y = sample_state_input(RANGES, rng)
            h = rng.uniform(0.01, 0.25)
            sensors = np.array([y])
            full = make_label(x, sensors, np.zeros(1), h, "full", gp)
            inc = make_label(x, sensors, np.zeros(1), h, "incremental", gp)
            assert np.abs(full - (np.asarray(x) + inc)).max() <= 1e-12

    def test_full_equals_approx_plus_residual(self, operating_point, rng):
        from gridop.sampling import sensor_input_function
        from gridop.physics import integrate_with_input

        _, gp, _ = operating_point
        gp_apx = replace(gp, beta=0.5)
        for _ in range(10):
            x, y = sample_state_input(RANGES, rng)
            h = rng.uniform(0.01, 0.25)
            sensors = np.array([y])
            full = make_label(x, sensors, np.zeros(1), h, "full", gp_apx)
            res = make_label(x, sensors, np.zeros(1), h, "residual", gp_apx)
            x_apx = integrate_with_input(
                x, sensor_input_function(sensors, np.zeros(1)), gp_apx, h, 16
            )
            assert np.abs(full - (np.asarray(x_apx) + res)).max() <= 1e-12

    def test_sensor_degeneracy(self, operating_point):
        # m = 2 with both sensor values at y(t_n) reproduces the m = 1 label
        _, gp, _ = operating_point
        x = State(0.4, 1.1, 0.2, 0.9)
        y = np.array([0.6, -0.1])
        h = 0.2
        m1 = make_label(x, y[None, :], np.zeros(1), h, "incremental", gp)
        m2 = make_label(x, np.vstack([y, y]), np.array([0.0, 0.5 * h]), h,
                        "incremental", gp)
        assert np.abs(m1 - m2).max() <= 1e-12

    def test_unknown_mode(self, operating_point):
        _, gp, _ = operating_point
        with pytest.raises(ValueError, match="unknown label mode"):
            make_label(State(0, 1, 0, 1), np.zeros((1, 2)), np.zeros(1), 0.1,
                       "typo", gp)


class TestBuildTrainingSet:
    def test_sizes_and_invariants(self, operating_point, rng):
        _, gp, grid = operating_point
        samples = build_training_set(50, "state_input", "incremental",
                                     SensorSpec(1), RANGES, gp, grid, rng)
        assert len(samples) == 50
        for s in samples:
            assert 0.0 < s.h <= 0.25
            assert s.sensor_locs[0] == 0.0
            assert s.m == 1

    def test_duplicate_seed_duplicates_dataset(self, operating_point):
        _, gp, grid = operating_point
        a = build_training_set(20, "state_input", "incremental", SensorSpec(1),
                               RANGES, gp, grid, np.random.default_rng(4))
        b = build_training_set(20, "state_input", "incremental", SensorSpec(1),
                               RANGES, gp, grid, np.random.default_rng(4))
        for sa, sb in zip(a, b):
            assert np.array_equal(sa.state, sb.state)
            assert np.array_equal(sa.label, sb.label)
            assert sa.h == sb.h

    def test_two_sensor_sampling(self, operating_point, rng):
        _, gp, grid = operating_point
        samples = build_training_set(20, "state_input", "incremental",
                                     SensorSpec(2), RANGES, gp, grid, rng)
        for s in samples:
            assert s.m == 2
            assert 0.0 < s.sensor_locs[1] <= s.h

    def test_network_procedure_is_single_sensor_only(self, operating_point, rng):
        _, gp, grid = operating_point
        with pytest.raises(ValueError, match="m = 1"):
            build_training_set(5, "network", "incremental", SensorSpec(2),
                               RANGES, gp, grid, rng)

    def test_network_procedure_consistency(self, operating_point, rng):
        _, gp, grid = operating_point
        samples = build_training_set(20, "network", "incremental",
                                     SensorSpec(1), RANGES, gp, grid, rng)
        for s in samples:
            r1, r2 = network_residual(State(*s.state),
                                      InterfaceInput(*s.sensors[0]), gp, grid)
            assert abs(r1) <= 1e-10 and abs(r2) <= 1e-10


class TestTestSuites:
    def test_gamma_suite_size_and_recovery(self, operating_point, rng):
        x_star, gp, grid = operating_point
        part = uniform_partition(2.0, 0.05)
        trajs = build_test_suite("gamma_perturbed", 5, part, gp, grid, x_star,
                                 rng)
        assert len(trajs) == 5
        for t in trajs:
            assert t.provenance == "truth"
            assert np.array_equal(t.states[0][[0, 2, 3]],
                                  np.array(x_star)[[0, 2, 3]])

    def test_gamma_one_stays_at_equilibrium(self, operating_point):
        x_star, gp, grid = operating_point
        from gridop.physics import simulate_truth

        x0 = gamma_perturbed_state(x_star, 1.0)
        traj = simulate_truth(x0, uniform_partition(5.0, 0.05), gp, grid)
        assert np.abs(traj.states - np.array(x_star)).max() <= 1e-8

    def test_fault_suite_prefault_equilibrium(self, operating_point, rng):
        x_star, gp, grid = operating_point
        part = uniform_partition(3.0, 0.05)
        trajs = build_test_suite("fault", 4, part, gp, grid, x_star, rng)
        for t in trajs:
            pre = t.times < 1.0 - 1e-12
            assert np.abs(t.states[pre] - np.array(x_star)).max() <= 1e-8

    def test_explicit_durations_are_honored(self, operating_point, rng):
        x_star, gp, grid = operating_point
        part = uniform_partition(3.0, 0.05)
        a = build_test_suite("fault", 2, part, gp, grid, x_star,
                             np.random.default_rng(0),
                             fault_durations=[0.3, 0.6])
        b = build_test_suite("fault", 2, part, gp, grid, x_star,
                             np.random.default_rng(99),
                             fault_durations=[0.3, 0.6])
        assert np.array_equal(a[0].states, b[0].states)
        assert np.array_equal(a[1].states, b[1].states)


class TestTrajectoryToSamples:
    def test_shadow_labels_come_from_the_record(self, operating_point, rng):
        x_star, gp, grid = operating_point
        from gridop.physics import simulate_truth

        x0 = gamma_perturbed_state(x_star, 0.7)
        traj = simulate_truth(x0, uniform_partition(1.0, 0.05), gp, grid)
        samples = trajectory_to_samples(traj, SensorSpec(1), "incremental", rng)
        assert len(samples) == traj.partition.n_steps
        for n, s in enumerate(samples):
            assert np.array_equal(s.state, traj.states[n])
            assert np.array_equal(s.label,
                                  traj.states[n + 1] - traj.states[n])
            assert np.array_equal(s.sensors[0], traj.inputs[n])

    def test_two_sensor_shadow_interpolates_recorded_inputs(self, operating_point,
                                                            rng):
        x_star, gp, grid = operating_point
        from gridop.physics import simulate_truth

        x0 = gamma_perturbed_state(x_star, 0.6)
        traj = simulate_truth(x0, uniform_partition(1.0, 0.05), gp, grid)
        samples = trajectory_to_samples(traj, SensorSpec(2), "incremental", rng)
        for n, s in enumerate(samples):
            d1 = s.sensor_locs[1]
            assert 0.0 < d1 < s.h
            frac = d1 / s.h
            expect = traj.inputs[n] + frac * (traj.inputs[n + 1] - traj.inputs[n])
            assert np.allclose(s.sensors[1], expect, atol=1e-14)


class TestDatasetSample:
    def test_validation(self):
        with pytest.raises(ValueError):
            DatasetSample(np.zeros(4), np.zeros((1, 2)), np.zeros(1), -0.1,
                          np.zeros(4))
        with pytest.raises(ValueError):
            DatasetSample(np.zeros(4), np.zeros((1, 2)), np.array([0.1]), 0.2,
                          np.zeros(4))  # first offset must be 0
        with pytest.raises(ValueError):
            DatasetSample(np.zeros(4), np.zeros((2, 2)), np.array([0.0, 0.5]),
                          0.2, np.zeros(4))  # offset beyond step

    def test_pack_arrays(self, rng):
        samples = [
            DatasetSample(rng.normal(size=4), rng.normal(size=(1, 2)),
                          np.zeros(1), 0.1, rng.normal(size=4))
            for _ in range(7)
        ]
        X, y = samples_to_arrays(samples, 1)
        assert X.shape == (7, 7) and y.shape == (7, 4)
        assert np.array_equal(X[0, :4], samples[0].state)
        assert X[0, 6] == samples[0].h
