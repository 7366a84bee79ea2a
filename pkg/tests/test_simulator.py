import dataclasses
import math

import numpy as np
import pytest

from becbench.analysis import noise_reduction_factor, write_records_csv
from becbench.physics import CloudState, TrapGeometry
from becbench.simulator import (
    CampaignConfig,
    DimpleConfig,
    classify_phase,
    dimple_phase_boundary,
    run_outcome,
    sample_initial_conditions,
    simulate_campaign,
    simulate_dimple_cycles,
)


@pytest.fixture(scope="module")
def reservoir(benchmark_trap):
    trap = benchmark_trap.scaled(math.sqrt(1000.0 / 1100.0))
    return CloudState(1.5e6, 0.8e-6, trap)


class TestInitialConditions:
    def test_zero_spread_is_identical(self, benchmark_trap):
        cfg = CampaignConfig(sigma_atom_rel=0.0, sigma_temp_rel=0.0, seed=1)
        psd = [sample_initial_conditions(cfg, r, benchmark_trap).psd_benchmark
               for r in range(5)]
        assert np.ptp(psd) == 0.0

    def test_paper_like_spread(self, benchmark_trap):
        cfg = CampaignConfig(seed=2)
        psd = np.array([sample_initial_conditions(
            cfg, r, benchmark_trap).psd_benchmark for r in range(300)])
        assert 0.23 < psd.min() and psd.max() < 0.28
        assert psd.std() == pytest.approx(0.0063, rel=0.25)

    def test_atom_noise_variance_propagation(self, benchmark_trap):
        base = CampaignConfig(sigma_atom_rel=0.01, sigma_temp_rel=0.0, seed=3)
        double = dataclasses.replace(base, sigma_atom_rel=0.02)
        psd_a = np.array([sample_initial_conditions(
            base, r, benchmark_trap).psd_benchmark for r in range(250)])
        psd_b = np.array([sample_initial_conditions(
            double, r, benchmark_trap).psd_benchmark for r in range(250)])
        assert psd_b.std() == pytest.approx(2 * psd_a.std(), rel=0.15)


class TestRunOutcome:
    def test_deterministic_for_equal_conditions(self, benchmark_trap):
        cfg = CampaignConfig(sigma_atom_rel=0.0, sigma_temp_rel=0.0,
                             fraction_noise=0.0, formation_noise=0.0,
                             formation_noise_atoms=0.0,
                             atom_measurement_noise=0.0,
                             benchmark_angle_noise=0.0,
                             psd_measurement_noise=0.0,
                             heating_coefficient=0.0, seed=4)
        a = sample_initial_conditions(cfg, 0, benchmark_trap)
        b = sample_initial_conditions(cfg, 1, benchmark_trap)
        rec_a = run_outcome(a, 750.0, 0.0, cfg, setpoint_index=0)
        rec_b = run_outcome(b, 750.0, 0.0, cfg, setpoint_index=0)
        assert rec_a.measured_fraction == rec_b.measured_fraction
        assert rec_a.measured_atom_number == rec_b.measured_atom_number

    def test_fraction_threshold_tied_to_true_critical_power(self,
                                                            benchmark_trap):
        cfg = CampaignConfig(sigma_atom_rel=0.0, sigma_temp_rel=0.0,
                             fraction_noise=0.0, formation_noise=0.0,
                             seed=5)
        initial = sample_initial_conditions(cfg, 0, benchmark_trap)
        p_c = cfg.critical_power_true(initial.psd_benchmark)
        rec = run_outcome(initial, p_c, 0.0, cfg)
        assert rec.measured_fraction == pytest.approx(
            cfg.fraction_threshold, abs=1e-9)

    def test_heating_shifts_transition_down(self, benchmark_trap):
        cfg = CampaignConfig(seed=6)
        initial = sample_initial_conditions(cfg, 0, benchmark_trap)
        p0 = cfg.critical_power_true(initial.psd_benchmark, 0.0)
        p1 = cfg.critical_power_true(initial.psd_benchmark, 100.0)
        assert p1 == pytest.approx(p0 - cfg.heating_coefficient * 100.0)

    def test_atom_number_trajectory(self, benchmark_trap):
        # published envelope: roughly 0.8e6 to 2.1e6 atoms across the
        # 600-900 mW final powers starting from ~3e6
        cfg = CampaignConfig(sigma_atom_rel=0.0, sigma_temp_rel=0.0,
                             atom_measurement_noise=0.0,
                             formation_noise_atoms=0.0, seed=7)
        initial = sample_initial_conditions(cfg, 0, benchmark_trap)
        hi = run_outcome(initial, 900.0, 0.0, cfg).measured_atom_number
        lo = run_outcome(initial, 600.0, 0.0, cfg).measured_atom_number
        assert 1.6e6 < hi < 2.4e6
        assert 0.6e6 < lo < 1.1e6


class TestCampaign:
    def test_empty(self, benchmark_trap):
        cfg = CampaignConfig(runs=0, seed=8)
        assert simulate_campaign(cfg, benchmark_trap) == []

    def test_cross_product_count_and_order(self, benchmark_trap):
        cfg = CampaignConfig(runs=3, seed=9)
        records = simulate_campaign(cfg, benchmark_trap)
        assert len(records) == 3 * 9
        powers = [r.final_power_mw for r in records[:9]]
        assert powers == sorted(powers)

    def test_single_setpoint_mode(self, benchmark_trap):
        cfg = CampaignConfig(runs=5, per_run_single_setpoint=True, seed=10)
        records = simulate_campaign(cfg, benchmark_trap)
        assert len(records) == 5

    def test_byte_identical_csv(self, benchmark_trap, tmp_path):
        cfg = CampaignConfig(runs=6, seed=11)
        a = tmp_path / "a.csv"
        b = tmp_path / "b.csv"
        write_records_csv(a, simulate_campaign(cfg, benchmark_trap))
        write_records_csv(b, simulate_campaign(cfg, benchmark_trap))
        assert a.read_bytes() == b.read_bytes()

    def test_nrf_profile(self, benchmark_trap):
        cfg = CampaignConfig(runs=250, seed=12)
        records = simulate_campaign(cfg, benchmark_trap)
        by_power = {}
        for rec in records:
            by_power.setdefault(rec.final_power_mw, []).append(rec)
        nrf = {}
        for power, rs in by_power.items():
            x = np.array([r.peak_benchmark_angle for r in rs])
            y = np.array([r.measured_atom_number for r in rs])
            nrf[power] = noise_reduction_factor(x, y)
        pre = np.mean([nrf[p] for p in (900.0, 862.5, 825.0)])
        post = nrf[600.0]
        assert 11.0 < pre < 21.0
        assert 1.3 < post < 3.0
        assert post < pre / 4.0

    def test_nrf_unbounded_without_noise(self, benchmark_trap):
        values = []
        for sigma in (1e-3, 1e-4, 1e-5):
            cfg = CampaignConfig(runs=40, formation_noise_atoms=0.0,
                                 atom_measurement_noise=sigma,
                                 benchmark_angle_noise=sigma, seed=13)
            records = [r for r in simulate_campaign(cfg, benchmark_trap)
                       if r.final_power_mw == 900.0]
            x = np.array([r.peak_benchmark_angle for r in records])
            y = np.array([r.measured_atom_number for r in records])
            values.append(noise_reduction_factor(x, y))
        assert values[0] < values[1] < values[2]
        assert values[2] > 100.0


class TestDimpleCycles:
    def test_shallow_dimple_stays_thermal(self, reservoir):
        cfg = DimpleConfig(depth_max_uk=0.05, cycles=3, pulses_per_cycle=0)
        trace = simulate_dimple_cycles(cfg, reservoir, seed=1)
        assert not trace.bec_label.any()

    def test_unprobed_trajectory_matches_published_endpoints(self, reservoir):
        cfg = DimpleConfig(pulses_per_cycle=0)
        trace = simulate_dimple_cycles(cfg, reservoir, seed=2)
        first = trace.condensed_atoms[trace.cycle_index == 0].max()
        last = trace.condensed_atoms[trace.cycle_index == 29].max()
        assert first == pytest.approx(1.5e5, rel=0.3)
        assert last == pytest.approx(2e4, rel=0.5)
        assert len(trace.cycles_with_bec()) == 30

    def test_probe_load_ordering(self, reservoir):
        light = simulate_dimple_cycles(DimpleConfig(pulses_per_cycle=1),
                                       reservoir, seed=3)
        heavy = simulate_dimple_cycles(DimpleConfig(pulses_per_cycle=7),
                                       reservoir, seed=3)
        n_light = len(light.cycles_with_bec())
        n_heavy = len(heavy.cycles_with_bec())
        assert n_light >= 10
        assert n_heavy < 5

    def test_label_changes_at_most_twice_per_cycle(self, reservoir):
        cfg = DimpleConfig(pulses_per_cycle=1)
        trace = simulate_dimple_cycles(cfg, reservoir, seed=4)
        for cycle in range(cfg.cycles):
            labels = trace.bec_label[trace.cycle_index == cycle].astype(int)
            assert np.abs(np.diff(labels)).sum() <= 2

    def test_probe_records_angles(self, reservoir):
        cfg = DimpleConfig(pulses_per_cycle=2, cycles=4)
        trace = simulate_dimple_cycles(cfg, reservoir, seed=5)
        probed = trace.peak_angle[trace.probe_mask]
        assert len(probed) == 8
        assert np.all(np.isfinite(probed))
        assert np.all(probed >= 0)
        # background reservoir rotation is visible even without a dimple
        assert probed.min() > 0.0

    def test_deterministic(self, reservoir):
        cfg = DimpleConfig(pulses_per_cycle=1, cycles=5)
        a = simulate_dimple_cycles(cfg, reservoir, seed=6)
        b = simulate_dimple_cycles(cfg, reservoir, seed=6)
        assert np.array_equal(a.peak_angle[a.probe_mask],
                              b.peak_angle[b.probe_mask])
        assert np.array_equal(a.bec_label, b.bec_label)


class TestClassifier:
    def test_zero_depth_is_thermal(self, reservoir):
        cfg = DimpleConfig()
        boundary = dimple_phase_boundary([1e6], [0.8e-6], cfg)
        assert classify_phase(1e6, 0.0, boundary) == "thermal"

    def test_deep_dimple_with_many_atoms_condenses(self, reservoir):
        cfg = DimpleConfig()
        boundary = dimple_phase_boundary([1.5e6], [0.8e-6], cfg)
        assert classify_phase(1.5e6, cfg.depth_max_uk * 1e-6,
                              boundary) == "BEC"

    def test_exact_boundary_consistency(self, reservoir):
        # unprobed trace: reservoir temperature is constant in each cycle,
        # so a boundary built from exact per-cycle values must agree
        cfg = DimpleConfig(pulses_per_cycle=0)
        trace = simulate_dimple_cycles(cfg, reservoir, seed=7)
        cycles = np.arange(cfg.cycles)
        n_c = np.array([trace.reservoir_atoms[trace.cycle_index == c][0]
                        for c in cycles])
        t_c = np.array([trace.reservoir_temperature[trace.cycle_index == c][0]
                        for c in cycles])
        boundary = dimple_phase_boundary(n_c, t_c, cfg, rel_tol=1e-4)
        labels = classify_phase(trace.reservoir_atoms, trace.depth_k,
                                boundary)
        truth = np.where(trace.bec_label, "BEC", "thermal")
        assert np.mean(labels == truth) >= 0.99

    def test_noisy_temperature_agreement(self, reservoir):
        cfg = DimpleConfig(pulses_per_cycle=1)
        trace = simulate_dimple_cycles(cfg, reservoir, seed=8)
        cycles = np.arange(cfg.cycles)
        n_c = np.array([trace.reservoir_atoms[trace.cycle_index == c][0]
                        for c in cycles])
        t_c = np.array([trace.reservoir_temperature[trace.cycle_index == c][-1]
                        for c in cycles])
        rng = np.random.default_rng(9)
        t_meas = t_c * (1 + cfg.temp_measurement_noise
                        * rng.standard_normal(cfg.cycles))
        boundary = dimple_phase_boundary(n_c, t_meas, cfg)
        labels = classify_phase(trace.reservoir_atoms, trace.depth_k,
                                boundary)
        truth = np.where(trace.bec_label, "BEC", "thermal")
        first20 = trace.cycle_index < 20
        assert np.mean(labels[first20] == truth[first20]) >= 0.9

    def test_boundary_monotone_in_atoms(self):
        cfg = DimpleConfig()
        atoms = np.linspace(4e5, 2e6, 6)
        boundary = dimple_phase_boundary(atoms, np.full(6, 0.8e-6), cfg)
        finite = boundary.critical_depth_k[
            np.isfinite(boundary.critical_depth_k)]
        assert np.all(np.diff(finite) < 0)


class TestConfigValidation:
    def test_rejects_unsorted_setpoints(self):
        with pytest.raises(ValueError):
            CampaignConfig(power_setpoints=(900.0, 600.0))

    def test_rejects_negative_noise(self):
        with pytest.raises(ValueError):
            CampaignConfig(fraction_noise=-0.1)

    def test_dimple_validation(self):
        with pytest.raises(ValueError):
            DimpleConfig(waist_um=-1.0)
        with pytest.raises(ValueError):
            DimpleConfig(capture_fraction_max=1.5)
