"""Synthetic experimental campaigns with known ground truth.

Each run draws fluctuating initial conditions, evaporates deterministically
to a final trap power, and reports a benchmark observable plus the measured
outcome.  The transition power follows a quadratic critical curve in the
benchmark phase-space density, shifted linearly by accumulated probe dose;
the measured condensate fraction follows the growth curve with measurement
noise plus a formation-noise term that switches on below the transition and
destroys the benchmark's predictive power there.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field, asdict

import numpy as np

from becbench.analysis import ExperimentRecord
from becbench.fitting import growth_crossing_offset, growth_curve
from becbench.imaging import ProbeParams
from becbench.physics import (
    DEFAULT_CONSTANTS,
    CloudState,
    DimpleParams,
    PhysicalConstants,
    TrapGeometry,
    critical_temperature,
    phase_space_density,
    semi_ideal_profile,
    tf_chemical_potential,
)
from becbench.physics import _fraction_raw  # shared with the depth solver

__all__ = [
    "CampaignConfig",
    "InitialConditions",
    "DimpleConfig",
    "DimpleCycleTrace",
    "PhaseBoundary",
    "sample_initial_conditions",
    "run_outcome",
    "simulate_campaign",
    "simulate_dimple_cycles",
    "dimple_phase_boundary",
    "classify_phase",
]

DEFAULT_SETPOINTS = tuple(float(p) for p in np.linspace(600.0, 900.0, 9))


@dataclass(frozen=True)
class CampaignConfig:
    """Ground truth and noise model of one simulated campaign."""

    runs: int = 84
    power_setpoints: tuple = DEFAULT_SETPOINTS
    nominal_atom_number: float = 3e6
    nominal_temperature: float = 1e-6          # K
    sigma_atom_rel: float = 0.011
    sigma_temp_rel: float = 0.007
    curve_coefficients: tuple = (328.5, 3190.0, -6000.0)  # P_c(psd) in mW
    growth_alpha: float = -0.003               # 1/mW
    growth_gamma: float = 0.02                 # 1/mW
    fraction_threshold: float = 0.10
    fraction_noise: float = 0.005
    formation_noise: float = 0.008
    formation_noise_atoms: float = 0.0105
    atom_measurement_noise: float = 0.002
    benchmark_angle_noise: float = 0.002
    psd_measurement_noise: float = 0.002
    benchmark_angle_per_atom: float = 3.2e-8   # rad/atom
    heating_coefficient: float = 0.2           # mW shift per us of probe dose
    probe_dose_us: float = 0.0
    evaporation_exponent: float = 2.2
    benchmark_power_mw: float = 1100.0
    per_run_single_setpoint: bool = False
    seed: int = 20260809

    def __post_init__(self):
        pts = tuple(float(p) for p in self.power_setpoints)
        if any(p <= 0 for p in pts):
            raise ValueError("power setpoints must be positive")
        if list(pts) != sorted(pts):
            raise ValueError("power setpoints must be sorted ascending")
        object.__setattr__(self, "power_setpoints", pts)
        for name in ("sigma_atom_rel", "sigma_temp_rel", "fraction_noise",
                     "formation_noise", "formation_noise_atoms",
                     "atom_measurement_noise", "benchmark_angle_noise",
                     "psd_measurement_noise", "probe_dose_us"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")
        if self.runs < 0:
            raise ValueError("runs must be non-negative")

    def critical_power_true(self, psd: float, dose_us: float = 0.0) -> float:
        c0, c1, c2 = self.curve_coefficients
        return (c0 + c1 * psd + c2 * psd**2
                - self.heating_coefficient * dose_us)


@dataclass(frozen=True)
class InitialConditions:
    run_index: int
    atom_number: float
    temperature: float
    psd_benchmark: float
    resampled_draws: int = 0


def _run_rng(seed: int, run_index: int, setpoint_index: int = -1):
    ss = np.random.SeedSequence([seed, run_index + 1, setpoint_index + 1])
    return np.random.default_rng(ss), int(ss.generate_state(1)[0])


def sample_initial_conditions(config: CampaignConfig, run_index: int,
                              benchmark_trap: TrapGeometry,
                              constants: PhysicalConstants = DEFAULT_CONSTANTS
                              ) -> InitialConditions:
    """Draw fluctuating initial atom number and temperature for one run.

    Gaussian shot-to-shot fluctuations around the nominal values; negative
    draws are rejected and redrawn (counted).  The benchmark phase-space
    density is evaluated in the benchmark trap.
    """
    rng, _ = _run_rng(config.seed, run_index)
    resampled = 0
    while True:
        n0 = config.nominal_atom_number * (
            1.0 + config.sigma_atom_rel * rng.standard_normal())
        if n0 > 1:
            break
        resampled += 1
    while True:
        t0 = config.nominal_temperature * (
            1.0 + config.sigma_temp_rel * rng.standard_normal())
        if t0 > 0:
            break
        resampled += 1
    psd = phase_space_density(CloudState(n0, t0, benchmark_trap), constants)
    return InitialConditions(run_index=run_index, atom_number=n0,
                             temperature=t0, psd_benchmark=psd,
                             resampled_draws=resampled)


def run_outcome(initial: InitialConditions, final_power_mw: float,
                probe_dose_us: float, config: CampaignConfig,
                setpoint_index: int = 0) -> ExperimentRecord:
    """Evaporate one run to ``final_power_mw`` and measure it.

    The growth-curve location is tied to the run's true critical power so
    the fraction crosses the operational threshold exactly there.  The
    formation-noise amplitude ramps from zero at the transition to its full
    value at the lowest setpoint, entering both the measured fraction and
    the measured atom number.
    """
    rng, record_seed = _run_rng(config.seed, initial.run_index, setpoint_index)
    p = final_power_mw
    p_c_true = config.critical_power_true(initial.psd_benchmark, probe_dose_us)
    offset = growth_crossing_offset(config.growth_alpha, config.growth_gamma,
                                    config.fraction_threshold)
    beta = p_c_true - offset
    frac_true = growth_curve(p, config.growth_alpha, beta, config.growth_gamma)

    p_min = config.power_setpoints[0]
    ramp_span = max(p_c_true - p_min, 1e-9)
    ramp = min(max((p_c_true - p) / ramp_span, 0.0), 1.0)
    sigma_frac = math.hypot(config.fraction_noise,
                            config.formation_noise * ramp)
    frac_meas = frac_true + sigma_frac * rng.standard_normal()
    frac_meas = min(max(frac_meas, 0.0), 1.0)

    n_final = initial.atom_number * (p / config.benchmark_power_mw) ** (
        config.evaporation_exponent)
    sigma_atom = math.hypot(config.atom_measurement_noise,
                            config.formation_noise_atoms * ramp)
    n_meas = n_final * (1.0 + sigma_atom * rng.standard_normal())

    angle = (config.benchmark_angle_per_atom * initial.atom_number
             * (1.0 + config.benchmark_angle_noise * rng.standard_normal()))
    psd_meas = initial.psd_benchmark * (
        1.0 + config.psd_measurement_noise * rng.standard_normal())

    return ExperimentRecord(
        psd_benchmark=psd_meas,
        peak_benchmark_angle=angle,
        final_power_mw=p,
        measured_fraction=frac_meas,
        measured_atom_number=n_meas,
        probe_dose_us=probe_dose_us,
        seed=record_seed,
    )


def simulate_campaign(config: CampaignConfig, benchmark_trap: TrapGeometry,
                      constants: PhysicalConstants = DEFAULT_CONSTANTS
                      ) -> list[ExperimentRecord]:
    """Full campaign: every run crossed with every power setpoint.

    With ``per_run_single_setpoint`` each run instead contributes a single
    record, cycling through the setpoint list in run order.  Output order
    is (run, setpoint), deterministic for a given config.
    """
    records = []
    for run in range(config.runs):
        initial = sample_initial_conditions(config, run, benchmark_trap,
                                            constants)
        if config.per_run_single_setpoint:
            idx = run % len(config.power_setpoints)
            records.append(run_outcome(initial, config.power_setpoints[idx],
                                       config.probe_dose_us, config,
                                       setpoint_index=idx))
        else:
            for idx, power in enumerate(config.power_setpoints):
                records.append(run_outcome(initial, power,
                                           config.probe_dose_us, config,
                                           setpoint_index=idx))
    return records


# ---------------------------------------------------------------------------
# Dimple cycling
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class DimpleConfig:
    """Sinusoidally cycled focused potential added to a thermal reservoir."""

    wavelength_nm: float = 912.0
    waist_um: float = 7.0
    depth_max_uk: float = 1.12
    cycle_rate_hz: float = 10.0
    cycles: int = 30
    pulses_per_cycle: int = 1
    pulse_duration_us: float = 2.0
    samples_per_cycle: int = 40
    capture_fraction_max: float = 0.5
    capture_saturation_uk: float = 0.37
    reservoir_atom_retention: float = 0.97     # per cycle
    reservoir_temp_retention: float = 0.9928   # per cycle
    axial_frequency_hz: float = 75.0
    probe_heat_nk_per_us: float = 2.2
    temp_measurement_noise: float = 0.03

    def __post_init__(self):
        if self.waist_um <= 0 or self.depth_max_uk <= 0:
            raise ValueError("waist and depth must be positive")
        if self.cycles < 1:
            raise ValueError("need at least one cycle")
        if not 0 < self.capture_fraction_max <= 1:
            raise ValueError("capture_fraction_max must lie in (0, 1]")

    def params(self) -> DimpleParams:
        return DimpleParams(waist=self.waist_um * 1e-6,
                            axial_omega=2.0 * math.pi * self.axial_frequency_hz,
                            depth_max=self.depth_max_uk * 1e-6)

    def capture_fraction(self, depth_k: float) -> float:
        """Share of reservoir atoms concentrated in the dimple volume."""
        u_sat = self.capture_saturation_uk * 1e-6
        u_max = self.depth_max_uk * 1e-6
        norm = 1.0 - math.exp(-u_max / u_sat)
        return self.capture_fraction_max * (1.0 - math.exp(-depth_k / u_sat)) / norm

    def depth_at(self, time_s: float) -> float:
        """Dimple depth in K at absolute time (sinusoidal 0 -> max -> 0)."""
        return (self.depth_max_uk * 1e-6
                * math.sin(math.pi * self.cycle_rate_hz * time_s) ** 2)


def _dimple_raw_fraction(depth_k: float, reservoir_temp: float,
                         reservoir_atoms: float, dimple: DimpleConfig,
                         constants: PhysicalConstants) -> float:
    """Signed condensation margin of the captured atoms at this depth."""
    if depth_k <= 0:
        return -1.0
    atoms = dimple.capture_fraction(depth_k) * reservoir_atoms
    if atoms < 1:
        return -1.0
    params = dimple.params()
    trap = params.trap_at_depth(depth_k, constants)
    t_c = critical_temperature(atoms, trap, constants)
    eta = tf_chemical_potential(atoms, trap, constants) / (constants.k_B * t_c)
    return float(_fraction_raw(reservoir_temp / t_c, eta))


@dataclass
class DimpleCycleTrace:
    """Time series of one dimple-cycling experiment."""

    time_s: np.ndarray
    cycle_index: np.ndarray
    depth_k: np.ndarray
    reservoir_atoms: np.ndarray
    reservoir_temperature: np.ndarray
    dimple_atoms: np.ndarray
    condensed_atoms: np.ndarray
    bec_label: np.ndarray              # bool ground truth
    probe_mask: np.ndarray             # bool, True where a pulse fired
    peak_angle: np.ndarray             # rad, nan where not probed
    probe_dose_us: np.ndarray          # cumulative
    metadata: dict = field(default_factory=dict)

    def cycles_with_bec(self) -> np.ndarray:
        """Sorted cycle indices containing at least one condensed sample."""
        return np.unique(self.cycle_index[self.bec_label])


def _reservoir_peak_column(reservoir: CloudState,
                           constants: PhysicalConstants) -> float:
    from becbench.imaging import column_density_radial

    prof = semi_ideal_profile(reservoir, constants)
    return float(column_density_radial(prof, np.array([0.0]), axis="z")[0])


def _dimple_peak_column(atoms: float, temperature: float, depth_k: float,
                        dimple: DimpleConfig,
                        constants: PhysicalConstants) -> float:
    from becbench.imaging import _line_of_sight_profile

    params = dimple.params()
    trap = params.trap_at_depth(depth_k, constants)
    prof = semi_ideal_profile(CloudState(atoms, temperature, trap), constants)
    # probe crosses the dimple beam, so the line of sight runs along one
    # radial axis of the dimple trap
    col = _line_of_sight_profile(prof, "x", np.array([0.0]))[0]
    return float(col) * 1e-12  # atoms/um^2


def simulate_dimple_cycles(dimple: DimpleConfig, reservoir: CloudState,
                           constants: PhysicalConstants = DEFAULT_CONSTANTS,
                           probe: ProbeParams | None = None,
                           seed: int = 0) -> DimpleCycleTrace:
    """Cycle the dimple depth and track condensation in the captured cloud.

    Reservoir atom number and temperature decay geometrically per cycle;
    each probe pulse deposits heat and records the peak rotation angle with
    photon shot noise.  Loading dynamics are treated as instantaneous
    (non-adiabatic capture effects are not modelled; see metadata).
    """
    if probe is None:
        probe = ProbeParams(pulse_duration_us=dimple.pulse_duration_us)
    else:
        probe = ProbeParams(
            detuning_hz=probe.detuning_hz, photon_flux=probe.photon_flux,
            pulse_duration_us=dimple.pulse_duration_us,
            polarizer_floor=probe.polarizer_floor,
            rotation_coefficient=probe.rotation_coefficient)
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0xD1]))
    s_per_cycle = dimple.samples_per_cycle
    n_samples = dimple.cycles * s_per_cycle
    period = 1.0 / dimple.cycle_rate_hz

    pulse_slots = set()
    if dimple.pulses_per_cycle > 0:
        for p in range(dimple.pulses_per_cycle):
            slot = int(round((p + 0.5) / dimple.pulses_per_cycle
                             * s_per_cycle)) % s_per_cycle
            pulse_slots.add(slot)

    time_s = np.empty(n_samples)
    cycle_index = np.empty(n_samples, dtype=int)
    depth = np.empty(n_samples)
    res_n = np.empty(n_samples)
    res_t = np.empty(n_samples)
    dim_n = np.empty(n_samples)
    cond_n = np.empty(n_samples)
    label = np.zeros(n_samples, dtype=bool)
    probe_mask = np.zeros(n_samples, dtype=bool)
    peak_angle = np.full(n_samples, np.nan)
    dose = np.empty(n_samples)

    heat_accum = 0.0
    dose_accum = 0.0
    background_cache: dict[int, float] = {}
    params = dimple.params()
    pixel = 3.5

    k = 0
    for cycle in range(dimple.cycles):
        n_cycle = reservoir.atom_number * dimple.reservoir_atom_retention ** cycle
        t_cycle = (reservoir.temperature
                   * dimple.reservoir_temp_retention ** cycle)
        for j in range(s_per_cycle):
            t_abs = (cycle + j / s_per_cycle) * period
            u = dimple.depth_at(t_abs)
            temp = t_cycle + heat_accum
            time_s[k] = t_abs
            cycle_index[k] = cycle
            depth[k] = u
            res_n[k] = n_cycle
            res_t[k] = temp
            capture = dimple.capture_fraction(u) if u > 0 else 0.0
            dim_n[k] = capture * n_cycle
            raw = _dimple_raw_fraction(u, temp, n_cycle, dimple, constants)
            label[k] = raw > 0.0
            cond_n[k] = max(raw, 0.0) * dim_n[k]
            if j in pulse_slots:
                probe_mask[k] = True
                if cycle not in background_cache:
                    background_cache[cycle] = _reservoir_peak_column(
                        CloudState(n_cycle, temp, reservoir.trap), constants)
                col = background_cache[cycle]
                if dim_n[k] >= 1 and u > 0:
                    col = col + _dimple_peak_column(dim_n[k], temp, u,
                                                    dimple, constants)
                theta = probe.rotation_coefficient * col
                n_inc = probe.incident_photons(pixel)
                lam = n_inc * (math.sin(min(theta, math.pi / 2)) ** 2
                               + probe.polarizer_floor)
                counts = rng.poisson(lam)
                est = math.sqrt(min(max(counts / n_inc - probe.polarizer_floor,
                                        0.0), 1.0))
                peak_angle[k] = math.asin(est)
                dose_accum += dimple.pulse_duration_us
                heat_accum += (dimple.probe_heat_nk_per_us * 1e-9
                               * dimple.pulse_duration_us)
            dose[k] = dose_accum
            k += 1

    return DimpleCycleTrace(
        time_s=time_s, cycle_index=cycle_index, depth_k=depth,
        reservoir_atoms=res_n, reservoir_temperature=res_t,
        dimple_atoms=dim_n, condensed_atoms=cond_n, bec_label=label,
        probe_mask=probe_mask, peak_angle=peak_angle, probe_dose_us=dose,
        metadata={
            "seed": seed,
            "note": ("instantaneous dimple loading; non-adiabatic capture "
                     "dynamics not modelled"),
        },
    )


@dataclass
class PhaseBoundary:
    """Critical dimple depth versus total (reservoir) atom number."""

    atom_numbers: np.ndarray
    critical_depth_k: np.ndarray  # inf where condensation is unreachable
    temperatures: np.ndarray      # reservoir temperature used per point

    def depth_at(self, atom_number) -> np.ndarray:
        n = np.atleast_1d(np.asarray(atom_number, float))
        finite = np.isfinite(self.critical_depth_k)
        big = 1e30
        yy = np.where(finite, self.critical_depth_k, big)
        order = np.argsort(self.atom_numbers)
        out = np.interp(n, self.atom_numbers[order], yy[order])
        return np.where(out >= big / 2, np.inf, out)


def dimple_phase_boundary(atom_numbers, temperatures, dimple: DimpleConfig,
                          constants: PhysicalConstants = DEFAULT_CONSTANTS,
                          rel_tol: float = 1e-3) -> PhaseBoundary:
    """Critical depth per total atom number, with capture coupled to depth.

    The captured atom number itself grows with depth, so the crossing is
    found by bisection on the signed condensation margin.
    """
    atom_numbers = np.asarray(atom_numbers, dtype=float)
    temperatures = np.asarray(temperatures, dtype=float)
    u_max = dimple.depth_max_uk * 1e-6
    crit = np.empty_like(atom_numbers)
    for i, (n_tot, temp) in enumerate(zip(atom_numbers, temperatures)):
        raw = lambda u: _dimple_raw_fraction(u, temp, n_tot, dimple, constants)
        if raw(u_max) <= 0.0:
            crit[i] = np.inf
            continue
        lo, hi = 0.0, u_max
        while (hi - lo) > rel_tol * u_max:
            mid = 0.5 * (lo + hi)
            if raw(mid) > 0.0:
                hi = mid
            else:
                lo = mid
        crit[i] = hi
    return PhaseBoundary(atom_numbers=atom_numbers, critical_depth_k=crit,
                         temperatures=temperatures)


def classify_phase(atom_number, depth_k, boundary: PhaseBoundary):
    """Label points BEC/thermal against the boundary curve.

    A point condenses when its depth exceeds the critical depth at its
    atom number.  Accepts scalars or arrays; returns "BEC"/"thermal"
    labels of matching shape.
    """
    n = np.atleast_1d(np.asarray(atom_number, float))
    u = np.atleast_1d(np.asarray(depth_k, float))
    crit = boundary.depth_at(n)
    labels = np.where(u > crit, "BEC", "thermal")
    if np.ndim(atom_number) == 0 and np.ndim(depth_k) == 0:
        return str(labels[0])
    return labels
