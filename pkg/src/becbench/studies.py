"""Figure-level studies built from the core pipeline.

Each function reproduces the data behind one result: fitted-fraction bias
versus detected photon number, the probe-heating shift of the critical
power, benchmark-conditioned noise reduction, and repeated critical-curve
campaigns for coverage and convolution-shift statistics.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np
from scipy.optimize import brentq

from becbench.analysis import (
    CriticalCurve,
    binned_critical_curve,
    convolution_bias,
    linear_regression,
    noise_reduction_factor,
)
from becbench.fitting import (
    GridSpec,
    ImageGeometry,
    ProfileModelBank,
    grid_fit_profile,
    growth_fit,
)
from becbench.imaging import (
    AngleImage,
    ProbeParams,
    RadialProfile,
    column_density,
    detect_dark_field,
    faraday_angle_map,
    radial_bin_reduce,
    signed_angle_estimate,
)
from becbench.physics import (
    DEFAULT_CONSTANTS,
    CloudState,
    PhysicalConstants,
    TrapGeometry,
    critical_temperature,
    reported_condensate_fraction,
    semi_ideal_profile,
)
from becbench.simulator import CampaignConfig, simulate_campaign

__all__ = [
    "solve_temperature_for_fraction",
    "fit_photon_image",
    "ShotNoisePoint",
    "shotnoise_bias_study",
    "HeatingShiftResult",
    "heating_shift_study",
    "nrf_by_setpoint",
    "CampaignCurveResult",
    "curve_replication_study",
]


def solve_temperature_for_fraction(atom_number: float, fraction: float,
                                   trap: TrapGeometry,
                                   constants: PhysicalConstants = DEFAULT_CONSTANTS
                                   ) -> float:
    """Temperature at which the model cloud holds the requested fraction."""
    if not 0 < fraction < 1:
        raise ValueError("fraction must lie strictly between 0 and 1")
    t_c = critical_temperature(atom_number, trap, constants)

    def objective(temp):
        return reported_condensate_fraction(
            CloudState(atom_number, temp, trap), constants) - fraction

    return brentq(objective, 0.02 * t_c, (1.0 - 1e-9) * t_c, xtol=1e-15)


def fit_photon_image(photons: AngleImage, trap: TrapGeometry,
                     probe: ProbeParams,
                     grid: GridSpec | None = None,
                     bank: ProfileModelBank | None = None,
                     constants: PhysicalConstants = DEFAULT_CONSTANTS,
                     fit_radius_um: float | None = None,
                     **fit_kwargs):
    """Photon image -> signed angle inversion -> radial profile -> grid fit.

    The inversion subtracts the leakage baseline with sign so zero-signal
    wings average to zero; the radial profile is optionally truncated at
    ``fit_radius_um`` (default: the inscribed image radius).
    """
    values = signed_angle_estimate(photons, probe)
    prof = radial_bin_reduce(values, photons.pixel_size_um)
    if fit_radius_um is None:
        fit_radius_um = (min(photons.height, photons.width) / 2.0
                         * photons.pixel_size_um)
    keep = prof.bin_centers_um <= fit_radius_um
    prof = RadialProfile(prof.bin_centers_um[keep], prof.mean[keep],
                         prof.std[keep], prof.count[keep])
    return grid_fit_profile(prof, trap, grid, probe=probe,
                            constants=constants, bank=bank, **fit_kwargs)


@dataclass
class ShotNoisePoint:
    fraction_true: float
    peak_photons: float
    samples: int
    fraction_mean: float
    fraction_std: float

    @property
    def bias(self) -> float:
        return self.fraction_mean - self.fraction_true


def shotnoise_bias_study(fractions=(0.23, 0.35, 0.50),
                         photon_levels=(1e2, 316.0, 1e3, 1e4),
                         samples: int = 200,
                         atom_number: float = 1e6,
                         trap: TrapGeometry | None = None,
                         probe: ProbeParams | None = None,
                         geometry: ImageGeometry | None = None,
                         grid: GridSpec | None = None,
                         constants: PhysicalConstants = DEFAULT_CONSTANTS,
                         seed: int = 0,
                         polish_maxfev: int = 30) -> list[ShotNoisePoint]:
    """Fitted-fraction bias versus mean detected photons at the peak pixel.

    For every true fraction a noiseless rotation-angle image is built once;
    each photon level rescales the probe flux so the peak pixel detects the
    requested mean photon number, draws Poisson samples and fits each.  All
    fits share one model bank (the model curves do not depend on the flux).
    """
    if trap is None:
        trap = TrapGeometry.from_frequencies_hz(85.0, 85.0, 98.42228).scaled(
            math.sqrt(750.0 / 1100.0))
    probe = probe or ProbeParams()
    geometry = geometry or ImageGeometry()
    grid = grid or GridSpec(atom_min=2e5, atom_max=5e6, atom_points=60,
                            temp_min=80e-9, temp_max=700e-9, temp_points=60)
    bank = ProfileModelBank.for_image(trap, geometry, probe=probe,
                                      constants=constants)
    shape = (geometry.height, geometry.width)
    out = []
    for fraction in fractions:
        temp = solve_temperature_for_fraction(atom_number, fraction, trap,
                                              constants)
        cloud = semi_ideal_profile(CloudState(atom_number, temp, trap),
                                   constants)
        column = column_density(cloud, shape=shape,
                                pixel_size_um=geometry.pixel_size_um)
        angle_img = faraday_angle_map(column, probe, geometry.pixel_size_um)
        theta_pk = float(angle_img.values.max())
        for level in photon_levels:
            n_inc = level / (math.sin(theta_pk) ** 2 + probe.polarizer_floor)
            flux = n_inc / (probe.pulse_duration_us
                            * geometry.pixel_size_um**2)
            level_probe = replace(probe, photon_flux=flux)
            fits = np.empty(samples)
            for s in range(samples):
                photons = detect_dark_field(
                    angle_img, level_probe,
                    rng_seed=(seed, int(round(fraction * 1000)),
                              int(round(level)), s))
                res = fit_photon_image(photons, trap, level_probe, grid,
                                       bank=bank, constants=constants,
                                       polish_maxfev=polish_maxfev)
                fits[s] = res.condensate_fraction
            out.append(ShotNoisePoint(
                fraction_true=fraction, peak_photons=float(level),
                samples=samples, fraction_mean=float(fits.mean()),
                fraction_std=float(fits.std(ddof=1))))
    return out


@dataclass
class HeatingShiftResult:
    doses_us: np.ndarray
    p_c_values: np.ndarray        # one entry per (dose, repetition) fit
    dose_per_fit: np.ndarray
    slope_mw_per_us: float
    slope_stderr: float
    intercept_mw: float


def heating_shift_study(config: CampaignConfig, benchmark_trap: TrapGeometry,
                        doses_us=(0.0, 120.0, 240.0), repetitions: int = 8,
                        constants: PhysicalConstants = DEFAULT_CONSTANTS
                        ) -> HeatingShiftResult:
    """Critical power versus accumulated probe dose.

    Each repetition is a full evaporation series (all setpoints) at a fixed
    probe dose, fitted on its own; a straight line through the fitted
    critical powers measures the heating shift, whose true slope is the
    negative heating coefficient.
    """
    p_c = []
    dose_of_fit = []
    for k, dose in enumerate(doses_us):
        cfg = replace(config, probe_dose_us=float(dose), runs=repetitions,
                      seed=config.seed + 7919 * k)
        records = simulate_campaign(cfg, benchmark_trap, constants)
        # group records by run: cross-product order is (run, setpoint)
        n_set = len(cfg.power_setpoints)
        for r in range(repetitions):
            chunk = records[r * n_set:(r + 1) * n_set]
            powers = np.array([rec.final_power_mw for rec in chunk])
            fracs = np.array([rec.measured_fraction for rec in chunk])
            fit = growth_fit(powers, fracs, threshold=cfg.fraction_threshold)
            if math.isfinite(fit.p_c):
                p_c.append(fit.p_c)
                dose_of_fit.append(dose)
    p_c = np.array(p_c)
    dose_of_fit = np.array(dose_of_fit)
    slope, intercept, residuals = linear_regression(dose_of_fit, p_c)
    dof = len(p_c) - 2
    s2 = float(np.sum(residuals**2) / dof) if dof > 0 else math.nan
    sxx = float(np.sum((dose_of_fit - dose_of_fit.mean()) ** 2))
    return HeatingShiftResult(
        doses_us=np.asarray(doses_us, float), p_c_values=p_c,
        dose_per_fit=dose_of_fit, slope_mw_per_us=slope,
        slope_stderr=math.sqrt(s2 / sxx) if sxx > 0 else math.nan,
        intercept_mw=intercept)


def nrf_by_setpoint(records):
    """Noise reduction factor of measured atom number per power setpoint."""
    groups: dict[float, list] = {}
    for rec in records:
        groups.setdefault(rec.final_power_mw, []).append(rec)
    rows = []
    for power in sorted(groups, reverse=True):
        rs = groups[power]
        x = np.array([r.peak_benchmark_angle for r in rs])
        y = np.array([r.measured_atom_number for r in rs])
        rows.append((power, noise_reduction_factor(x, y), len(rs)))
    return rows


@dataclass
class CampaignCurveResult:
    curve: CriticalCurve
    psd_true_mean: float
    psd_true_std: float
    c2_true: float
    pooled_shift_mw: float       # pooled P_c minus true curve at mean PSD
    expected_shift_mw: float     # curvature * variance of the benchmark PSD
    bin_shift_mw: float          # same formula with the mean within-bin spread

    @property
    def c2_fit(self) -> float:
        return self.curve.coefficients[2]

    @property
    def c2_stderr(self) -> float:
        return math.sqrt(max(self.curve.covariance[2, 2], 0.0))

    def c2_covered(self, n_sigma: float = 1.0) -> bool:
        return abs(self.c2_fit - self.c2_true) <= n_sigma * self.c2_stderr


def curve_replication_study(config: CampaignConfig,
                            benchmark_trap: TrapGeometry,
                            n_campaigns: int = 50,
                            n_bins: int = 21,
                            constants: PhysicalConstants = DEFAULT_CONSTANTS
                            ) -> list[CampaignCurveResult]:
    """Repeated campaigns -> binned curve fits and pooled-shift statistics.

    The pooled estimate averages the growth data over the full benchmark
    spread and therefore reads the curve convolved with that spread; its
    shift against the true curve value at the mean benchmark is compared
    with the curvature-times-variance formula, both for the full spread
    (pooled) and for the within-bin spread (binned points).
    """
    c0, c1, c2 = config.curve_coefficients
    out = []
    for k in range(n_campaigns):
        cfg = replace(config, seed=config.seed + 104729 * k)
        records = simulate_campaign(cfg, benchmark_trap, constants)
        curve = binned_critical_curve(records, n_bins=n_bins,
                                      rng_seed=cfg.seed + 1,
                                      threshold=cfg.fraction_threshold)
        psd = np.array([r.psd_benchmark for r in records])
        # one benchmark value per run (cross-product ordering)
        n_set = len(cfg.power_setpoints)
        psd_runs = psd[::n_set] if not cfg.per_run_single_setpoint else psd
        mean_psd = float(psd_runs.mean())
        sigma_psd = float(psd_runs.std(ddof=1))
        truth_at_mean = c0 + c1 * mean_psd + c2 * mean_psd**2
        shift = curve.pooled.p_c - truth_at_mean
        expected = c2 * sigma_psd**2
        within = np.array([b.psd_std for b in curve.bins])
        bin_shift = c2 * float(np.mean(within**2))
        out.append(CampaignCurveResult(
            curve=curve, psd_true_mean=mean_psd, psd_true_std=sigma_psd,
            c2_true=c2, pooled_shift_mw=float(shift),
            expected_shift_mw=float(expected), bin_shift_mw=float(bin_shift)))
    return out
