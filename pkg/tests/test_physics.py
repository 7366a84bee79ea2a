import math

import numpy as np
import pytest

from becbench.physics import (
    BoseDomainError,
    CloudState,
    DimpleParams,
    PhysicalConstants,
    ProfileConvergenceError,
    TrapGeometry,
    ZETA_2,
    ZETA_3,
    ZETA_32,
    bose_g,
    condensate_fraction,
    critical_dimple_depth,
    critical_temperature,
    eta_parameter,
    phase_space_density,
    radial_number_integral,
    reported_condensate_fraction,
    semi_ideal_profile,
    tf_chemical_potential,
    thermal_de_broglie,
)

CONST = PhysicalConstants()


def zeta_partial_sum(p, n_terms=20000):
    """Independent oracle: partial sum plus Euler-Maclaurin tail."""
    ls = np.arange(1, n_terms + 1, dtype=float)
    head = float(np.sum(ls**-p))
    n = float(n_terms + 1)
    tail = n ** (1 - p) / (p - 1) + 0.5 * n**-p + p / 12.0 * n ** (-p - 1)
    return head + tail


def bose_partial_sum(p, z, n_terms=4000):
    ls = np.arange(1, n_terms + 1, dtype=float)
    return float(np.sum(z**ls / ls**p))


class TestBoseG:
    def test_empty_sum_at_zero(self):
        assert bose_g(1.5, 0.0) == 0.0

    def test_zeta_three_halves(self):
        oracle = zeta_partial_sum(1.5)
        assert bose_g(1.5, 1.0) == pytest.approx(oracle, abs=1e-8)
        assert bose_g(1.5, 1.0) == pytest.approx(2.6123753486854883, abs=1e-12)

    def test_zeta_three(self):
        oracle = zeta_partial_sum(3.0)
        assert bose_g(3.0, 1.0) == pytest.approx(oracle, abs=1e-8)
        assert bose_g(3.0, 1.0) == pytest.approx(1.2020569031595943, abs=1e-12)

    @pytest.mark.parametrize("p", [1.5, 2.0, 2.5, 3.0])
    @pytest.mark.parametrize("z", [0.1, 0.3, 0.49, 0.51, 0.7, 0.9, 0.99])
    def test_matches_partial_sum(self, p, z):
        assert bose_g(p, z) == pytest.approx(bose_partial_sum(p, z),
                                             abs=1e-10)

    @pytest.mark.parametrize("p", [1.5, 2.0, 3.0])
    def test_strictly_increasing_on_grid(self, p):
        zs = np.linspace(0.0, 1.0, 100)
        vals = bose_g(p, zs)
        assert np.all(np.diff(vals) > 0)

    def test_domain_errors(self):
        with pytest.raises(BoseDomainError):
            bose_g(1.5, -0.1)
        with pytest.raises(BoseDomainError):
            bose_g(1.5, 1.1)
        with pytest.raises(BoseDomainError):
            bose_g(0.9, 0.5)

    def test_array_input(self):
        out = bose_g(1.5, np.array([0.0, 0.5, 1.0]))
        assert out.shape == (3,)
        assert out[0] == 0.0
        assert out[2] == pytest.approx(ZETA_32, abs=1e-12)


class TestScalarThermo:
    def test_de_broglie_rb87_1uk(self):
        assert thermal_de_broglie(1e-6) == pytest.approx(1.8726697e-7,
                                                         rel=1e-6)

    def test_de_broglie_scaling(self):
        assert thermal_de_broglie(4e-6) == pytest.approx(
            thermal_de_broglie(1e-6) / 2.0, rel=1e-12)

    def test_de_broglie_100nk(self):
        assert thermal_de_broglie(1e-7) == pytest.approx(5.9219017e-7,
                                                         rel=1e-6)

    def test_de_broglie_rejects_nonpositive(self):
        with pytest.raises(ValueError):
            thermal_de_broglie(0.0)

    def test_critical_temperature_value(self, round_trap):
        assert critical_temperature(1e6, round_trap) == pytest.approx(
            4.5136832e-7, rel=1e-6)

    def test_critical_temperature_scaling(self, round_trap):
        assert critical_temperature(8e6, round_trap) == pytest.approx(
            2 * critical_temperature(1e6, round_trap), rel=1e-12)

    def test_critical_temperature_unit_count(self, round_trap):
        expected = (CONST.hbar * round_trap.omega_bar
                    / (CONST.k_B * ZETA_3 ** (1.0 / 3.0)))
        assert critical_temperature(1, round_trap) == pytest.approx(
            expected, rel=1e-12)

    def test_tf_mu_zero_for_empty(self, round_trap):
        assert tf_chemical_potential(0, round_trap) == 0.0

    def test_tf_mu_scaling(self, round_trap):
        mu1 = tf_chemical_potential(1e5, round_trap)
        mu2 = tf_chemical_potential(32e5, round_trap)
        assert mu2 == pytest.approx(4 * mu1, rel=1e-12)

    def test_tf_mu_number_round_trip(self, round_trap):
        # integrate the inverted-parabola profile and recover N0
        n0 = 1e5
        mu = tf_chemical_potential(n0, round_trap)
        g = CONST.coupling_constant
        m = CONST.atom_mass
        r_tf = math.sqrt(2 * mu / (m * round_trap.omega_bar**2))
        r = np.linspace(0, r_tf, 20001)
        dens = (mu - 0.5 * m * round_trap.omega_bar**2 * r**2) / g
        recovered = radial_number_integral(r, dens)
        assert recovered == pytest.approx(n0, rel=5e-3)

    def test_eta_value(self, round_trap):
        state = CloudState(1e6, 3e-7, round_trap)
        assert eta_parameter(state) == pytest.approx(0.46651, rel=1e-3)

    def test_eta_small_cloud_limit(self, round_trap):
        # with the fixed-temperature reference, eta scales as N^(2/5)
        tiny = eta_parameter(CloudState(10, 1e-7, round_trap),
                             reference="temperature")
        big = eta_parameter(CloudState(1e6, 1e-7, round_trap),
                            reference="temperature")
        assert tiny < 0.05 * big
        # the critical-temperature reference decays as the 1/15 power
        ratio = (eta_parameter(CloudState(1e3, 1e-7, round_trap))
                 / eta_parameter(CloudState(1e6, 1e-7, round_trap)))
        assert ratio == pytest.approx((1e3 / 1e6) ** (1 / 15), rel=1e-9)

    def test_eta_noninteracting(self, round_trap):
        const = PhysicalConstants(scattering_length=0.0)
        state = CloudState(1e6, 3e-7, round_trap)
        assert eta_parameter(state, const) == 0.0

    def test_eta_temperature_reference(self, round_trap):
        state = CloudState(1e6, 3e-7, round_trap)
        t_c = critical_temperature(1e6, round_trap)
        assert eta_parameter(state, reference="temperature") == pytest.approx(
            eta_parameter(state) * t_c / 3e-7, rel=1e-12)


class TestCondensateFraction:
    def test_zero_temperature(self):
        for eta in (0.0, 0.2, 0.8):
            assert condensate_fraction(0.0, eta) == 1.0

    def test_transition_point(self):
        for eta in (0.0, 0.4):
            assert condensate_fraction(1.0, eta) == 0.0

    def test_ideal_gas_value(self):
        assert condensate_fraction(0.8, 0.0) == pytest.approx(0.488,
                                                              abs=1e-12)

    def test_interacting_value(self):
        # direct evaluation oracle
        t, eta = 0.8, 0.4
        expected = 1 - t**3 - eta * (ZETA_2 / ZETA_3) * t**2 * (1 - t**3) ** 0.4
        assert condensate_fraction(t, eta) == pytest.approx(expected,
                                                            abs=1e-14)
        assert condensate_fraction(t, eta) == pytest.approx(0.22508, abs=1e-4)

    def test_monotone_in_t_and_eta(self):
        ts = np.linspace(0.0, 1.0, 101)
        for eta in (0.0, 0.2, 0.5):
            vals = condensate_fraction(ts, eta)
            assert np.all(np.diff(vals) <= 1e-14)
        for t in (0.3, 0.6, 0.9):
            vals = [condensate_fraction(t, e) for e in (0.0, 0.2, 0.4, 0.6)]
            assert np.all(np.diff(vals) <= 1e-14)

    def test_ideal_law_exact_at_zero_eta(self):
        ts = np.linspace(0.0, 1.0, 100)
        assert np.max(np.abs(condensate_fraction(ts, 0.0)
                             - np.clip(1 - ts**3, 0, 1))) < 1e-12

    def test_negative_eta_rejected(self):
        with pytest.raises(ValueError):
            condensate_fraction(0.5, -0.1)


class TestSemiIdealProfile:
    @pytest.mark.parametrize("t_red", [2.0, 1.2, 1.0, 0.97, 0.9, 0.85,
                                       0.8, 0.7, 0.6, 0.5])
    def test_atom_conservation(self, round_trap, t_red):
        t_c = critical_temperature(1e6, round_trap)
        prof = semi_ideal_profile(CloudState(1e6, t_red * t_c, round_trap))
        total = radial_number_integral(prof.radii, prof.n_total)
        assert abs(total - 1e6) / 1e6 < 0.01

    def test_pure_thermal_peak_psd(self, round_trap):
        t_c = critical_temperature(1e6, round_trap)
        prof = semi_ideal_profile(CloudState(1e6, 2 * t_c, round_trap))
        lam3 = thermal_de_broglie(2 * t_c) ** 3
        assert prof.n_condensate.max() == 0.0
        assert prof.n_thermal[0] * lam3 == pytest.approx(
            bose_g(1.5, prof.fugacity), rel=1e-9)

    def test_condensate_center_density(self, round_trap):
        # pick a cloud near fraction one half and check n0(0) = mu / g
        t_c = critical_temperature(1e6, round_trap)
        from scipy.optimize import brentq

        t_half = brentq(lambda t: reported_condensate_fraction(
            CloudState(1e6, t * t_c, round_trap)) - 0.5, 0.05, 0.99)
        prof = semi_ideal_profile(CloudState(1e6, t_half * t_c, round_trap))
        assert prof.condensate_fraction == pytest.approx(0.5, abs=1e-6)
        assert prof.n_condensate[0] == pytest.approx(
            prof.chemical_potential / CONST.coupling_constant, rel=1e-12)

    def test_thermal_depression_under_condensate(self, round_trap):
        t_c = critical_temperature(1e6, round_trap)
        for t_red in (0.5, 0.7, 0.85):
            state = CloudState(1e6, t_red * t_c, round_trap)
            prof = semi_ideal_profile(state)
            assert prof.condensate_fraction > 0
            ceiling = ZETA_32 / thermal_de_broglie(state.temperature) ** 3
            assert prof.n_thermal[0] < ceiling

    def test_fraction_continuous_through_gap(self, round_trap):
        t_c = critical_temperature(1e6, round_trap)
        ts = np.linspace(0.84, 1.05, 60)
        fracs = [semi_ideal_profile(
            CloudState(1e6, t * t_c, round_trap)).condensate_fraction
            for t in ts]
        fracs = np.array(fracs)
        assert np.all(np.diff(fracs) <= 1e-12)
        assert np.max(np.abs(np.diff(fracs))) < 0.02

    def test_reported_fraction_matches_profile(self, round_trap):
        t_c = critical_temperature(1e6, round_trap)
        for t_red in (0.5, 0.8, 0.93, 1.1):
            state = CloudState(1e6, t_red * t_c, round_trap)
            assert reported_condensate_fraction(state) == pytest.approx(
                semi_ideal_profile(state).condensate_fraction, abs=1e-12)

    def test_condensed_needs_interactions(self, round_trap):
        const = PhysicalConstants(scattering_length=0.0)
        t_c = critical_temperature(1e6, round_trap, const)
        with pytest.raises(ProfileConvergenceError):
            semi_ideal_profile(CloudState(1e6, 0.5 * t_c, round_trap), const)


class TestPhaseSpaceDensity:
    def test_saturated_cloud(self, round_trap):
        t_c = critical_temperature(1e6, round_trap)
        psd = phase_space_density(CloudState(1e6, t_c, round_trap))
        assert psd == pytest.approx(ZETA_32, rel=1e-6)

    def test_benchmark_cloud(self, benchmark_cloud):
        assert phase_space_density(benchmark_cloud) == pytest.approx(
            0.25, rel=0.01)

    def test_half_fugacity_cloud(self, round_trap):
        # choose N so the solved fugacity is exactly one half
        temp = 1e-6
        scale = (CONST.k_B * temp
                 / (CONST.hbar * round_trap.omega_bar)) ** 3
        n_atoms = scale * bose_g(3.0, 0.5)
        psd = phase_space_density(CloudState(n_atoms, temp, round_trap))
        # Bose-sum oracle value of g_{3/2}(1/2)
        assert psd == pytest.approx(bose_partial_sum(1.5, 0.5), rel=1e-6)
        assert psd == pytest.approx(0.6248370208199139, rel=1e-6)


class TestCriticalDimpleDepth:
    DIMPLE = DimpleParams(waist=7e-6, axial_omega=2 * math.pi * 75.0,
                          depth_max=1.12e-6)

    def test_monotone_in_temperature(self):
        d_cold = critical_dimple_depth(0.70e-6, 7.5e5, self.DIMPLE)
        d_hot = critical_dimple_depth(0.80e-6, 7.5e5, self.DIMPLE)
        assert d_cold < d_hot

    def test_monotone_in_atoms(self):
        d_few = critical_dimple_depth(0.8e-6, 7.5e5, self.DIMPLE)
        d_many = critical_dimple_depth(0.8e-6, 1.5e6, self.DIMPLE)
        assert d_many < d_few

    def test_large_cloud_limit(self):
        deep = critical_dimple_depth(0.8e-6, 1e10, self.DIMPLE)
        assert deep < 0.02 * self.DIMPLE.depth_max

    def test_never_condenses(self):
        assert critical_dimple_depth(0.8e-6, 1e4, self.DIMPLE) == math.inf
        assert critical_dimple_depth(0.8e-6, 0.5, self.DIMPLE) == math.inf

    def test_boundary_curve_shape(self):
        # critical depth falls monotonically with atom number where finite
        atoms = np.geomspace(2e5, 3e6, 8)
        depths = [critical_dimple_depth(0.8e-6, n, self.DIMPLE)
                  for n in atoms]
        finite = [d for d in depths if math.isfinite(d)]
        assert len(finite) >= 4
        assert all(b < a * 1.02 for a, b in zip(finite, finite[1:]))


class TestTypes:
    def test_trap_geometric_mean(self):
        trap = TrapGeometry(100.0, 200.0, 400.0)
        assert trap.omega_bar == pytest.approx((100 * 200 * 400) ** (1 / 3),
                                               rel=1e-12)

    def test_trap_rejects_nonpositive(self):
        with pytest.raises(ValueError):
            TrapGeometry(0.0, 1.0, 1.0)

    def test_cloud_state_validation(self, round_trap):
        with pytest.raises(ValueError):
            CloudState(0.5, 1e-6, round_trap)
        with pytest.raises(ValueError):
            CloudState(1e6, 0.0, round_trap)

    def test_constants_validation(self):
        with pytest.raises(ValueError):
            PhysicalConstants(atom_mass=-1.0)
        with pytest.raises(ValueError):
            PhysicalConstants(scattering_length=-1e-9)
