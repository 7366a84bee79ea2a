"""Thermodynamics and density profiles of harmonically trapped Bose gases.

The cloud is described in the semi-ideal mean-field picture: the condensate
takes a Thomas-Fermi shape in the bare trap, while the thermal component
moves in an effective potential stiffened by twice the condensate mean
field.  All profile functions work on an isotropized radial coordinate
(equipotential radius of the harmonic trap), in which volume integrals
carry the plain 4*pi*r^2 measure.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from functools import lru_cache

import numpy as np
from scipy.optimize import brentq

__all__ = [
    "BOHR_RADIUS",
    "ZETA_2",
    "ZETA_3",
    "ZETA_32",
    "BoseDomainError",
    "ProfileConvergenceError",
    "PhysicalConstants",
    "TrapGeometry",
    "CloudState",
    "SemiIdealProfile",
    "DimpleParams",
    "bose_g",
    "thermal_de_broglie",
    "critical_temperature",
    "tf_chemical_potential",
    "eta_parameter",
    "condensate_fraction",
    "semi_ideal_profile",
    "phase_space_density",
    "reported_condensate_fraction",
    "critical_dimple_depth",
    "radial_number_integral",
]

BOHR_RADIUS = 5.29177210903e-11  # m
ZETA_32 = 2.6123753486854883
ZETA_2 = math.pi * math.pi / 6.0
ZETA_3 = 1.2020569031595943

_DIRECT_TERMS = 72
_ROBINSON_TERMS = 28
_BRANCH_SPLIT = 0.5


class BoseDomainError(ValueError):
    """Raised for fugacities outside [0, 1] or a non-convergent order."""


class ProfileConvergenceError(RuntimeError):
    """Raised when the thermal fugacity solve cannot meet its target."""


@dataclass(frozen=True)
class PhysicalConstants:
    """Atomic and fundamental constants (SI).  Defaults describe 87Rb.

    ``scattering_length`` may be zero to model a non-interacting gas; all
    other entries must be strictly positive.
    """

    hbar: float = 1.054571817e-34          # J s
    k_B: float = 1.380649e-23              # J / K
    atom_mass: float = 1.4432e-25          # kg
    scattering_length: float = 98.0 * BOHR_RADIUS  # m

    def __post_init__(self):
        if self.hbar <= 0 or self.k_B <= 0 or self.atom_mass <= 0:
            raise ValueError("hbar, k_B and atom_mass must be positive")
        if self.scattering_length < 0:
            raise ValueError("scattering_length must be non-negative")

    @property
    def coupling_constant(self) -> float:
        """Contact interaction strength g = 4*pi*hbar^2*a/m in J m^3."""
        return 4.0 * math.pi * self.hbar**2 * self.scattering_length / self.atom_mass


DEFAULT_CONSTANTS = PhysicalConstants()


@dataclass(frozen=True)
class TrapGeometry:
    """Harmonic trap angular frequencies in rad/s."""

    omega_x: float
    omega_y: float
    omega_z: float

    def __post_init__(self):
        if min(self.omega_x, self.omega_y, self.omega_z) <= 0:
            raise ValueError("trap frequencies must be positive")

    @property
    def omega_bar(self) -> float:
        """Geometric-mean angular frequency."""
        return (self.omega_x * self.omega_y * self.omega_z) ** (1.0 / 3.0)

    def scaled(self, factor: float) -> "TrapGeometry":
        return TrapGeometry(self.omega_x * factor, self.omega_y * factor,
                            self.omega_z * factor)

    @classmethod
    def from_frequencies_hz(cls, f_x: float, f_y: float, f_z: float) -> "TrapGeometry":
        two_pi = 2.0 * math.pi
        return cls(two_pi * f_x, two_pi * f_y, two_pi * f_z)


@dataclass(frozen=True)
class CloudState:
    """Instantaneous ground truth of a trapped cloud."""

    atom_number: float
    temperature: float  # K
    trap: TrapGeometry

    def __post_init__(self):
        if self.atom_number < 1:
            raise ValueError("atom_number must be at least 1")
        if self.temperature <= 0:
            raise ValueError("temperature must be positive")


# ---------------------------------------------------------------------------
# Bose functions g_p(z) = sum_{l>=1} z^l / l^p
# ---------------------------------------------------------------------------

@lru_cache(maxsize=64)
def _robinson_coefficients(p: float) -> np.ndarray:
    # zeta(p - k) / k! for the small-(-ln z) expansion; needs zeta at
    # arguments below 1, hence mpmath.  For integer p the k = p-1 entry is
    # replaced by zero and handled separately (it carries a logarithm).
    import mpmath

    n = int(round(p))
    integer = abs(p - n) < 1e-12
    out = np.empty(_ROBINSON_TERMS, dtype=float)
    for k in range(_ROBINSON_TERMS):
        if integer and k == n - 1:
            out[k] = 0.0
            continue
        arg = (n - k) if integer else (p - k)
        out[k] = float(mpmath.zeta(arg)) / math.factorial(k)
    return out


@lru_cache(maxsize=64)
def _gamma_one_minus(p: float) -> float:
    from scipy.special import gamma

    return float(gamma(1.0 - p))


@lru_cache(maxsize=64)
def _direct_coefficients(p: float) -> np.ndarray:
    return np.arange(1, _DIRECT_TERMS + 1, dtype=float) ** (-p)


def _horner(coeffs: np.ndarray, x: np.ndarray) -> np.ndarray:
    acc = np.full_like(x, coeffs[-1])
    for c in coeffs[-2::-1]:
        acc *= x
        acc += c
    return acc


def _bose_direct(p: float, z: np.ndarray) -> np.ndarray:
    # sum_{l=1..L} z^l / l^p = z * horner over the inverse-power table
    return z * _horner(_direct_coefficients(p), z)


def _bose_near_one(p: float, z: np.ndarray) -> np.ndarray:
    alpha = -np.log(np.clip(z, 1e-300, 1.0))
    coeffs = _robinson_coefficients(p)
    total = _horner(coeffs, -alpha)
    n = int(round(p))
    if abs(p - n) < 1e-12:
        # integer order: the k = n-1 term carries a logarithm
        harmonic = sum(1.0 / j for j in range(1, n))
        with np.errstate(divide="ignore", invalid="ignore"):
            log_term = (-alpha) ** (n - 1) / math.factorial(n - 1) * (
                harmonic - np.log(alpha))
        total = total + np.where(alpha > 0.0, np.nan_to_num(log_term), 0.0)
    else:
        total = total + _gamma_one_minus(p) * alpha ** (p - 1.0)
    return total


def bose_g(p: float, z) -> float | np.ndarray:
    """Polylogarithm-type Bose function, absolute accuracy ~1e-10 on [0, 1].

    Small fugacities are summed directly; near saturation the series is
    resummed through the known expansion around z = 1, which remains exact
    at z = 1 where the value is zeta(p).
    """
    if p <= 1.0:
        raise BoseDomainError(f"series order must exceed 1, got {p}")
    arr = np.asarray(z, dtype=float)
    scalar = arr.ndim == 0
    arr = np.atleast_1d(arr)
    if np.any(arr < -1e-12) or np.any(arr > 1.0 + 1e-12):
        raise BoseDomainError("fugacity outside [0, 1]")
    arr = np.clip(arr, 0.0, 1.0)
    out = np.empty_like(arr)
    low = arr < _BRANCH_SPLIT
    if np.any(low):
        out[low] = _bose_direct(p, arr[low])
    if np.any(~low):
        out[~low] = _bose_near_one(p, arr[~low])
    return float(out[0]) if scalar else out


def _bose_g3_inverse(target: float) -> float:
    """Fugacity z with g_3(z) = target, for target in (0, zeta(3)]."""
    if target <= 0.0:
        return 0.0
    if target >= ZETA_3:
        return 1.0
    return brentq(lambda zz: bose_g(3.0, zz) - target, 0.0, 1.0, xtol=1e-14)


# ---------------------------------------------------------------------------
# Scalar thermodynamics
# ---------------------------------------------------------------------------

def thermal_de_broglie(temperature: float,
                       constants: PhysicalConstants = DEFAULT_CONSTANTS) -> float:
    """Thermal de Broglie wavelength h / sqrt(2 pi m k_B T) in metres."""
    if temperature <= 0:
        raise ValueError("temperature must be positive")
    h = 2.0 * math.pi * constants.hbar
    return h / math.sqrt(2.0 * math.pi * constants.atom_mass
                         * constants.k_B * temperature)


def critical_temperature(atom_number: float, trap: TrapGeometry,
                         constants: PhysicalConstants = DEFAULT_CONSTANTS) -> float:
    """Ideal-gas condensation temperature hbar*wbar*N^(1/3)/(k_B zeta(3)^(1/3))."""
    if atom_number < 1:
        raise ValueError("atom_number must be at least 1")
    return (constants.hbar * trap.omega_bar * atom_number ** (1.0 / 3.0)
            / (constants.k_B * ZETA_3 ** (1.0 / 3.0)))


def tf_chemical_potential(condensed_number: float, trap: TrapGeometry,
                          constants: PhysicalConstants = DEFAULT_CONSTANTS) -> float:
    """Thomas-Fermi chemical potential of a zero-temperature condensate.

    mu = (hbar wbar / 2) (15 N0 a / a_ho)^(2/5); zero for an empty or
    non-interacting condensate.
    """
    if condensed_number < 0:
        raise ValueError("condensed_number must be non-negative")
    if condensed_number == 0 or constants.scattering_length == 0.0:
        return 0.0
    a_ho = math.sqrt(constants.hbar / (constants.atom_mass * trap.omega_bar))
    x = 15.0 * condensed_number * constants.scattering_length / a_ho
    return 0.5 * constants.hbar * trap.omega_bar * x ** 0.4


def eta_parameter(state: CloudState,
                  constants: PhysicalConstants = DEFAULT_CONSTANTS,
                  reference: str = "critical") -> float:
    """Interaction scale mu(T=0)/(k_B T_ref).

    ``reference`` selects the normalizing temperature: "critical" (the
    customary choice) uses the ideal-gas transition temperature of the
    state, "temperature" uses the state's own temperature.
    """
    mu0 = tf_chemical_potential(state.atom_number, state.trap, constants)
    if reference == "critical":
        t_ref = critical_temperature(state.atom_number, state.trap, constants)
    elif reference == "temperature":
        t_ref = state.temperature
    else:
        raise ValueError(f"unknown eta reference {reference!r}")
    return mu0 / (constants.k_B * t_ref)


def _fraction_raw(t, eta):
    """Unclamped condensed fraction; negative values flag a thermal state."""
    t = np.asarray(t, dtype=float)
    ideal = 1.0 - t**3
    bracket = np.clip(ideal, 0.0, None)
    correction = eta * (ZETA_2 / ZETA_3) * t**2 * bracket ** 0.4
    return ideal - correction


def condensate_fraction(reduced_temperature, eta) -> float | np.ndarray:
    """Condensed fraction versus reduced temperature t = T/T_c.

    Ideal-gas depletion 1 - t^3 with the leading mean-field correction,
    clamped to [0, 1]; identically zero at and above t = 1.
    """
    if eta < 0:
        raise ValueError("eta must be non-negative")
    t = np.asarray(reduced_temperature, dtype=float)
    scalar = t.ndim == 0
    t = np.atleast_1d(t)
    if np.any(t < 0):
        raise ValueError("reduced temperature must be non-negative")
    out = np.where(t >= 1.0, 0.0, np.clip(_fraction_raw(t, eta), 0.0, 1.0))
    return float(out[0]) if scalar else out


# ---------------------------------------------------------------------------
# Density profiles
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SemiIdealProfile:
    """Radial density samples of a partially condensed cloud.

    ``radii`` is the isotropized radius in metres; densities are in
    atoms/m^3.  ``fugacity`` is the global prefactor applied to the Bose
    argument of the thermal component after the atom-number solve;
    ``thermal_scale`` is the normalization applied on top of the saturated
    Bose profile whenever even unit fugacity cannot hold N - N0 atoms
    (the leading-order fraction law slightly overfills the thermal cloud
    for strong interactions).
    """

    condensate_fraction: float
    chemical_potential: float  # J
    radii: np.ndarray
    n_condensate: np.ndarray
    n_thermal: np.ndarray
    grid_spacing: float
    state: CloudState
    fugacity: float
    thermal_scale: float = 1.0

    @property
    def n_total(self) -> np.ndarray:
        return self.n_condensate + self.n_thermal


def radial_number_integral(radii: np.ndarray, density: np.ndarray) -> float:
    """Atom number of an isotropized radial density, 4*pi * int r^2 n dr."""
    return float(np.trapezoid(4.0 * math.pi * radii**2 * density, radii))


def _isotropic_grid(state: CloudState, constants: PhysicalConstants,
                    mu: float, n_points: int, extent: float) -> np.ndarray:
    m = constants.atom_mass
    wbar = state.trap.omega_bar
    sigma = math.sqrt(constants.k_B * state.temperature / m) / wbar
    r_max = extent * sigma
    if mu > 0:
        r_tf = math.sqrt(2.0 * mu / (m * wbar**2))
        r_max = max(r_max, 1.4 * r_tf + 2.0 * sigma)
    return np.linspace(0.0, r_max, n_points)


def _condensed_profile(state: CloudState, constants: PhysicalConstants,
                       fraction: float, n_points: int, extent: float,
                       radii: np.ndarray | None = None,
                       number_rtol: float = 5e-3):
    """Profile with a prescribed condensed fraction.

    The thermal prefactor is solved so the thermal component integrates to
    N - N0.  The saturated Bose profile in the condensate-stiffened
    potential can hold fewer atoms than the leading-order fraction law
    assigns to the thermal part; in that case the fugacity saturates at 1
    and the thermal profile is renormalized to N - N0, which keeps the
    fraction law and atom conservation exact at the cost of a peak
    thermal density above the ideal saturation value.
    """
    n_atoms = state.atom_number
    temp = state.temperature
    m = constants.atom_mass
    wbar = state.trap.omega_bar
    beta = 1.0 / (constants.k_B * temp)
    lam3 = thermal_de_broglie(temp, constants) ** 3
    g = constants.coupling_constant

    n0_target = fraction * n_atoms
    if n0_target > 0 and g == 0.0:
        raise ProfileConvergenceError(
            "cannot build a spatial condensate profile for a=0")

    mu = tf_chemical_potential(n0_target, state.trap, constants)
    r = radii if radii is not None else _isotropic_grid(
        state, constants, mu, n_points, extent)
    v_ext = 0.5 * m * wbar**2 * r**2

    def build(mu_val):
        n_c = np.clip(mu_val - v_ext, 0.0, None) / g if mu_val > 0 else np.zeros_like(r)
        v_eff = v_ext + 2.0 * g * n_c
        s = np.exp(-np.clip(beta * (v_eff - mu_val), 0.0, 700.0))
        return n_c, s

    def thermal_number(w, s):
        return radial_number_integral(r, bose_g(1.5, w * s) / lam3)

    n_c, s = build(mu)
    target = n_atoms - n0_target
    capacity = thermal_number(1.0, s)
    scale = 1.0
    if target <= 0:
        w = 0.0
    elif capacity >= target:
        w = brentq(lambda ww: thermal_number(ww, s) - target,
                   1e-18, 1.0, rtol=1e-12, maxiter=200)
    else:
        if capacity <= 0:
            raise ProfileConvergenceError(
                f"saturated thermal cloud holds no atoms at T="
                f"{temp:.3e} K; cannot reach target {target:.4g}")
        w = 1.0
        scale = target / capacity

    n_th = scale * bose_g(1.5, w * s) / lam3
    total = radial_number_integral(r, n_c + n_th)
    if abs(total - n_atoms) > number_rtol * n_atoms * 2.0:
        raise ProfileConvergenceError(
            f"profile integrates to {total:.6g} atoms, expected {n_atoms:.6g}")
    return SemiIdealProfile(
        condensate_fraction=n0_target / n_atoms,
        chemical_potential=mu,
        radii=r,
        n_condensate=n_c,
        n_thermal=n_th,
        grid_spacing=float(r[1] - r[0]),
        state=state,
        fugacity=w,
        thermal_scale=scale,
    )


def _thermal_profile(state: CloudState, constants: PhysicalConstants,
                     n_points: int, extent: float,
                     radii: np.ndarray | None = None,
                     saturated: bool = False):
    """Uncondensed cloud: solve the global fugacity against the atom number."""
    n_atoms = state.atom_number
    beta = 1.0 / (constants.k_B * state.temperature)
    lam3 = thermal_de_broglie(state.temperature, constants) ** 3
    r = radii if radii is not None else _isotropic_grid(
        state, constants, 0.0, n_points, extent)
    v_ext = 0.5 * constants.atom_mass * state.trap.omega_bar**2 * r**2
    s = np.exp(-np.clip(beta * v_ext, 0.0, 700.0))

    def number(z0):
        return radial_number_integral(r, bose_g(1.5, z0 * s) / lam3)

    if saturated:
        z0 = 1.0
    else:
        cap = number(1.0)
        if cap < n_atoms:
            if cap >= 0.99 * n_atoms:
                z0 = 1.0
            else:
                raise ProfileConvergenceError(
                    f"thermal cloud saturates at {cap:.4g} atoms, "
                    f"cannot hold {n_atoms:.4g}")
        else:
            z0 = brentq(lambda zz: number(zz) - n_atoms, 1e-18, 1.0,
                        rtol=1e-12, maxiter=200)
    n_th = bose_g(1.5, z0 * s) / lam3
    return SemiIdealProfile(
        condensate_fraction=0.0,
        chemical_potential=0.0,
        radii=r,
        n_condensate=np.zeros_like(r),
        n_thermal=n_th,
        grid_spacing=float(r[1] - r[0]),
        state=state,
        fugacity=z0,
    )


def _gap_anchor_temperature(eta: float, threshold: float) -> float:
    """Reduced temperature where the condensed fraction equals ``threshold``."""
    f = lambda tt: _fraction_raw(tt, eta) - threshold
    return brentq(f, 1e-9, 1.0 - 1e-12, xtol=1e-12)


def semi_ideal_profile(state: CloudState,
                       constants: PhysicalConstants = DEFAULT_CONSTANTS,
                       *,
                       n_points: int = 512,
                       extent_thermal_radii: float = 6.0,
                       small_bec_threshold: float = 0.02,
                       eta_reference: str = "critical") -> SemiIdealProfile:
    """Density profile of a cloud at the given atom number and temperature.

    Above the interacting threshold temperature the cloud is purely thermal.
    Well below it, the condensed fraction follows the mean-field depletion
    law and the thermal part fills the condensate-stiffened potential.  In
    the narrow band where the depletion law yields no condensate although
    the ideal gas would condense, the returned densities interpolate
    linearly (in the ideal condensed fraction) between a small condensate
    at the matching temperature and a saturated thermal cloud at the ideal
    transition temperature, so fitted observables stay continuous.
    """
    t_c = critical_temperature(state.atom_number, state.trap, constants)
    t = state.temperature / t_c
    eta = eta_parameter(state, constants, reference=eta_reference)
    f7 = float(_fraction_raw(t, eta)) if t < 1.0 else 0.0

    if t >= 1.0:
        return _thermal_profile(state, constants, n_points, extent_thermal_radii)
    if f7 > small_bec_threshold:
        return _condensed_profile(state, constants, f7, n_points,
                                  extent_thermal_radii)

    # interpolation gap
    t_anchor = _gap_anchor_temperature(eta, small_bec_threshold)
    state_anchor = replace(state, temperature=t_anchor * t_c)
    state_edge = replace(state, temperature=t_c)
    # common grid wide enough for the hotter anchor
    radii = _isotropic_grid(state_edge, constants, 0.0, n_points,
                            extent_thermal_radii)
    prof_a = _condensed_profile(state_anchor, constants, small_bec_threshold,
                                n_points, extent_thermal_radii, radii=radii)
    prof_b = _thermal_profile(state_edge, constants, n_points,
                              extent_thermal_radii, radii=radii,
                              saturated=True)
    weight = (1.0 - t**3) / (1.0 - t_anchor**3)
    weight = min(max(weight, 0.0), 1.0)
    return SemiIdealProfile(
        condensate_fraction=weight * prof_a.condensate_fraction,
        chemical_potential=weight * prof_a.chemical_potential,
        radii=radii,
        n_condensate=weight * prof_a.n_condensate,
        n_thermal=weight * prof_a.n_thermal + (1.0 - weight) * prof_b.n_thermal,
        grid_spacing=float(radii[1] - radii[0]),
        state=state,
        fugacity=prof_a.fugacity,
        thermal_scale=prof_a.thermal_scale,
    )


def reported_condensate_fraction(state: CloudState,
                                 constants: PhysicalConstants = DEFAULT_CONSTANTS,
                                 *,
                                 small_bec_threshold: float = 0.02,
                                 eta_reference: str = "critical") -> float:
    """Condensed fraction as reported by ``semi_ideal_profile``.

    Cheap scalar path used by the profile fitter; matches the profile
    construction exactly, including the interpolation band.
    """
    t_c = critical_temperature(state.atom_number, state.trap, constants)
    t = state.temperature / t_c
    if t >= 1.0:
        return 0.0
    eta = eta_parameter(state, constants, reference=eta_reference)
    f7 = float(_fraction_raw(t, eta))
    if f7 > small_bec_threshold:
        return f7
    t_anchor = _gap_anchor_temperature(eta, small_bec_threshold)
    weight = (1.0 - t**3) / (1.0 - t_anchor**3)
    return min(max(weight, 0.0), 1.0) * small_bec_threshold


def phase_space_density(state: CloudState,
                        constants: PhysicalConstants = DEFAULT_CONSTANTS) -> float:
    """Peak thermal phase-space density n_peak(thermal) * lambda_T^3.

    For uncondensed clouds the peak density follows from the harmonic-trap
    number relation N = (k_B T / hbar wbar)^3 g_3(z0), giving g_{3/2}(z0)
    without building a spatial grid.
    """
    t_c = critical_temperature(state.atom_number, state.trap, constants)
    if state.temperature >= t_c:
        scale = (constants.k_B * state.temperature
                 / (constants.hbar * state.trap.omega_bar)) ** 3
        z0 = _bose_g3_inverse(state.atom_number / scale)
        return bose_g(1.5, z0)
    profile = semi_ideal_profile(state, constants)
    lam3 = thermal_de_broglie(state.temperature, constants) ** 3
    return float(np.max(profile.n_thermal)) * lam3


# ---------------------------------------------------------------------------
# Dimple potential
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class DimpleParams:
    """Focused attractive potential added to a thermal reservoir.

    ``waist`` is the beam waist in metres, ``axial_omega`` the angular
    frequency along the beam (set by the surrounding trap), ``depth_max``
    the largest depth probed, expressed in Kelvin.
    """

    waist: float
    axial_omega: float
    depth_max: float

    def __post_init__(self):
        if self.waist <= 0 or self.axial_omega <= 0 or self.depth_max <= 0:
            raise ValueError("dimple parameters must be positive")

    def radial_omega(self, depth_k: float,
                     constants: PhysicalConstants = DEFAULT_CONSTANTS) -> float:
        """Harmonic frequency of the Gaussian focus at the given depth."""
        u_j = constants.k_B * depth_k
        return math.sqrt(4.0 * u_j / (constants.atom_mass * self.waist**2))

    def trap_at_depth(self, depth_k: float,
                      constants: PhysicalConstants = DEFAULT_CONSTANTS) -> TrapGeometry:
        w_r = self.radial_omega(depth_k, constants)
        return TrapGeometry(w_r, w_r, self.axial_omega)


def _dimple_fraction_raw(depth_k: float, reservoir_temperature: float,
                         dimple_atoms: float, dimple: DimpleParams,
                         constants: PhysicalConstants) -> float:
    if depth_k <= 0.0:
        return -1.0
    trap = dimple.trap_at_depth(depth_k, constants)
    t_c = critical_temperature(dimple_atoms, trap, constants)
    t = reservoir_temperature / t_c
    mu0 = tf_chemical_potential(dimple_atoms, trap, constants)
    eta = mu0 / (constants.k_B * t_c)
    return float(_fraction_raw(t, eta))


def critical_dimple_depth(reservoir_temperature: float, dimple_atoms: float,
                          dimple: DimpleParams,
                          constants: PhysicalConstants = DEFAULT_CONSTANTS,
                          rel_tol: float = 0.01) -> float:
    """Smallest dimple depth (K) that condenses the captured atoms.

    Returns ``math.inf`` when no depth up to ``dimple.depth_max`` crosses
    the transition.
    """
    if reservoir_temperature <= 0:
        raise ValueError("reservoir temperature must be positive")
    if dimple_atoms < 1:
        return math.inf

    def raw(u):
        return _dimple_fraction_raw(u, reservoir_temperature, dimple_atoms,
                                    dimple, constants)

    depths = np.geomspace(dimple.depth_max * 1e-4, dimple.depth_max, 64)
    values = [raw(u) for u in depths]
    idx = next((i for i, v in enumerate(values) if v > 0.0), None)
    if idx is None:
        return math.inf
    lo = depths[idx - 1] if idx > 0 else dimple.depth_max * 1e-6
    hi = depths[idx]
    while (hi - lo) > rel_tol * hi:
        mid = 0.5 * (lo + hi)
        if raw(mid) > 0.0:
            hi = mid
        else:
            lo = mid
    return float(hi)
