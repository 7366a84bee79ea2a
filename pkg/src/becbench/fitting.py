"""Profile fitting and condensate-growth fitting.

Radial angle profiles are matched against a bank of model profiles on an
(N, T) grid by weighted chi-square, refined once around the coarse
minimum.  Growth curves of condensate fraction versus final trap power are
fitted with a three-parameter saturating-onset function from which the
critical power at a fixed fraction threshold is extracted.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import brentq

from becbench.imaging import (
    ProbeParams,
    RadialProfile,
    _dense_column_lookup,
    column_density_radial,
    scaled_pixel_radii,
)
from becbench.physics import (
    DEFAULT_CONSTANTS,
    CloudState,
    PhysicalConstants,
    TrapGeometry,
    reported_condensate_fraction,
    semi_ideal_profile,
)

__all__ = [
    "SIGMA_FLOOR_RAD",
    "FitConvergenceError",
    "NoCrossingError",
    "GridSpec",
    "ImageGeometry",
    "ParamInterval",
    "GridFitResult",
    "ProfileModelBank",
    "chi_square",
    "grid_fit_profile",
    "confidence_bounds",
    "GrowthFit",
    "growth_curve",
    "growth_fit",
    "critical_power",
    "growth_crossing_offset",
]

SIGMA_FLOOR_RAD = 1e-4


class FitConvergenceError(RuntimeError):
    """All optimizer starts failed; carries the best residual seen."""

    def __init__(self, message: str, best_residual: float):
        super().__init__(message)
        self.best_residual = best_residual


class NoCrossingError(RuntimeError):
    """The growth curve never reaches the requested threshold."""


# ---------------------------------------------------------------------------
# Chi-square against a radial profile
# ---------------------------------------------------------------------------

def profile_sigma(profile: RadialProfile,
                  sigma_floor: float = SIGMA_FLOOR_RAD) -> np.ndarray:
    """Per-bin uncertainty: standard error of the bin mean, floored."""
    return np.maximum(profile.std / np.sqrt(profile.count), sigma_floor)


def chi_square(profile: RadialProfile, model: RadialProfile,
               sigma_floor: float = SIGMA_FLOOR_RAD) -> float:
    """Sum of squared residuals normalized by the per-bin uncertainty."""
    if len(profile.bin_centers_um) != len(model.bin_centers_um) or not np.allclose(
            profile.bin_centers_um, model.bin_centers_um, rtol=0.0, atol=1e-9):
        raise ValueError("data and model profiles must share one bin grid")
    sigma = profile_sigma(profile, sigma_floor)
    return float(np.sum(((profile.mean - model.mean) / sigma) ** 2))


# ---------------------------------------------------------------------------
# (N, T) grid search
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class GridSpec:
    """Search grid: log-spaced atom numbers, linear temperatures (K)."""

    atom_min: float = 1e4
    atom_max: float = 1e7
    atom_points: int = 80
    temp_min: float = 10e-9
    temp_max: float = 3e-6
    temp_points: int = 80
    zoom_factor: int = 4

    def atom_values(self) -> np.ndarray:
        return np.geomspace(self.atom_min, self.atom_max, self.atom_points)

    def temp_values(self) -> np.ndarray:
        return np.linspace(self.temp_min, self.temp_max, self.temp_points)


@dataclass(frozen=True)
class ParamInterval:
    lower: float
    upper: float
    open_lower: bool = False
    open_upper: bool = False

    def contains(self, value: float) -> bool:
        return self.lower <= value <= self.upper


@dataclass
class GridFitResult:
    atom_number: float
    temperature: float
    condensate_fraction: float
    chi2_min: float
    ci_atom_number: ParamInterval
    ci_temperature: ParamInterval
    ci_fraction: ParamInterval
    on_boundary: bool

    def to_dict(self) -> dict:
        return {
            "best_N": self.atom_number,
            "best_T": self.temperature,
            "fraction": self.condensate_fraction,
            "chi2_min": self.chi2_min,
            "ci_N": [self.ci_atom_number.lower, self.ci_atom_number.upper],
            "ci_T": [self.ci_temperature.lower, self.ci_temperature.upper],
            "ci_fraction": [self.ci_fraction.lower, self.ci_fraction.upper],
            "on_boundary": self.on_boundary,
        }


@dataclass(frozen=True)
class ImageGeometry:
    """Pixel layout shared by synthetic images and their reduction.

    ``center`` is the averaging center used for binning (row, col);
    ``cloud_center`` is where the model cloud sits.  Both default to the
    geometric image center.
    """

    height: int = 65
    width: int = 65
    pixel_size_um: float = 3.5
    bin_width_um: float | None = None
    center: tuple[float, float] | None = None
    cloud_center: tuple[float, float] | None = None

    @property
    def resolved_bin_width(self) -> float:
        return self.bin_width_um if self.bin_width_um else self.pixel_size_um

    @property
    def resolved_center(self) -> tuple[float, float]:
        if self.center is not None:
            return self.center
        return ((self.height - 1) / 2.0, (self.width - 1) / 2.0)

    @property
    def resolved_cloud_center(self) -> tuple[float, float]:
        if self.cloud_center is not None:
            return self.cloud_center
        return ((self.height - 1) / 2.0, (self.width - 1) / 2.0)


class ProfileModelBank:
    """Cache of model radial profiles binned exactly like the data.

    With an :class:`ImageGeometry`, the model is rasterized onto the same
    pixel grid used for synthesis and reduced with the same radial binning
    as the measured profile, so a noiseless image fits its own model with
    chi-square at numerical zero.  Without a geometry, the model is simply
    evaluated at the supplied bin-center radii.

    Building a model curve costs a full density-profile computation, so
    fits that share a trap, probe and layout should share one bank
    (ensemble studies hit the cache for every repeated grid node).
    """

    def __init__(self, trap: TrapGeometry, radii_um: np.ndarray,
                 probe: ProbeParams | None = None,
                 constants: PhysicalConstants = DEFAULT_CONSTANTS,
                 axis: str = "z", profile_options: dict | None = None,
                 geometry: ImageGeometry | None = None):
        self.trap = trap
        self.probe = probe if probe is not None else ProbeParams()
        self.constants = constants
        self.axis = axis
        self.profile_options = dict(profile_options or {})
        self.geometry = geometry
        self._cache: dict[tuple[str, str], tuple[np.ndarray, float]] = {}
        if geometry is None:
            self.radii_um = np.asarray(radii_um, dtype=float)
            self._pixel_rho = None
        else:
            self._prepare_geometry(geometry)

    @classmethod
    def for_image(cls, trap: TrapGeometry, geometry: ImageGeometry,
                  probe: ProbeParams | None = None,
                  constants: PhysicalConstants = DEFAULT_CONSTANTS,
                  axis: str = "z", profile_options: dict | None = None):
        return cls(trap, np.empty(0), probe=probe, constants=constants,
                   axis=axis, profile_options=profile_options,
                   geometry=geometry)

    def _prepare_geometry(self, geom: ImageGeometry) -> None:
        cy, cx = geom.resolved_center
        gy, gx = geom.resolved_cloud_center
        rows = np.arange(geom.height)[:, None]
        cols = np.arange(geom.width)[None, :]
        bin_radius = np.hypot(rows - cy, cols - cx) * geom.pixel_size_um
        bin_idx = np.floor(bin_radius / geom.resolved_bin_width).astype(int)
        model_radius = np.hypot(rows - gy, cols - gx) * geom.pixel_size_um
        flat_idx = bin_idx.ravel()
        n_bins = int(flat_idx.max()) + 1
        counts = np.bincount(flat_idx, minlength=n_bins)
        present = counts > 0
        # contiguous remap so bank rows align with RadialProfile bins
        remap = -np.ones(n_bins, dtype=int)
        remap[present] = np.arange(int(present.sum()))
        self._bin_idx = remap[flat_idx]
        self._bin_counts = counts[present].astype(float)
        self.radii_um = (np.flatnonzero(present) + 0.5) * geom.resolved_bin_width
        rho = np.round(model_radius.ravel(), 9)
        self._pixel_rho, self._pixel_inverse = np.unique(rho,
                                                         return_inverse=True)

    @staticmethod
    def _key(atom_number: float, temperature: float) -> tuple[str, str]:
        return (f"{atom_number:.12e}", f"{temperature:.12e}")

    def _model_bins(self, prof) -> np.ndarray:
        if self._pixel_rho is None:
            col = column_density_radial(prof, self.radii_um, axis=self.axis)
            return self.probe.rotation_coefficient * col
        # rasterize through the synthesis code path, then bin like the data
        rho_m = scaled_pixel_radii(prof, self.axis, self._pixel_rho)
        col_unique = _dense_column_lookup(prof, self.axis, rho_m) * 1e-12
        values = (self.probe.rotation_coefficient
                  * col_unique[self._pixel_inverse])
        sums = np.bincount(self._bin_idx, weights=values,
                           minlength=len(self._bin_counts))
        return sums / self._bin_counts

    def evaluate(self, atom_number: float, temperature: float):
        """Model angle curve at the bank radii and the model fraction."""
        key = self._key(atom_number, temperature)
        hit = self._cache.get(key)
        if hit is None:
            state = CloudState(atom_number, temperature, self.trap)
            prof = semi_ideal_profile(state, self.constants,
                                      **self.profile_options)
            curve = self._model_bins(prof)
            hit = (curve, prof.condensate_fraction)
            self._cache[key] = hit
        return hit

    def curve(self, atom_number: float, temperature: float) -> np.ndarray:
        return self.evaluate(atom_number, temperature)[0]

    def grid_stack(self, grid: "GridSpec"):
        """Stacked model curves and fractions over all grid nodes.

        Shape (n_atoms * n_temps, n_bins) in (atom, temp) row-major order;
        built once per (bank, grid) pair and reused across fits.
        """
        key = (tuple(np.round(grid.atom_values(), 6)),
               tuple(np.round(np.asarray(grid.temp_values()) * 1e12, 6)))
        stack = getattr(self, "_grid_stacks", None)
        if stack is None:
            stack = self._grid_stacks = {}
        hit = stack.get(key)
        if hit is None:
            atoms = grid.atom_values()
            temps = grid.temp_values()
            curves = np.empty((len(atoms) * len(temps), len(self.radii_um)))
            fracs = np.empty(len(atoms) * len(temps))
            k = 0
            for n_val in atoms:
                for t_val in temps:
                    curves[k], fracs[k] = self.evaluate(n_val, t_val)
                    k += 1
            hit = (curves, fracs)
            stack[key] = hit
        return hit


def _interval_from_profile(values: np.ndarray, profile_chi2: np.ndarray,
                           level: float, best: float) -> ParamInterval:
    """1-sigma interval of one parameter from its profiled chi-square."""
    inside = profile_chi2 <= level
    if not np.any(inside):
        return ParamInterval(best, best)
    idx = np.flatnonzero(inside)
    lo_i, hi_i = idx[0], idx[-1]
    lower = values[lo_i]
    upper = values[hi_i]
    open_lower = lo_i == 0
    open_upper = hi_i == len(values) - 1
    # linear interpolation to the exact crossing
    if lo_i > 0:
        c0, c1 = profile_chi2[lo_i - 1], profile_chi2[lo_i]
        if c0 > level >= c1:
            frac = (c0 - level) / (c0 - c1)
            lower = values[lo_i - 1] + frac * (values[lo_i] - values[lo_i - 1])
    if hi_i < len(values) - 1:
        c0, c1 = profile_chi2[hi_i], profile_chi2[hi_i + 1]
        if c1 > level >= c0:
            frac = (c1 - level) / (c1 - c0)
            upper = values[hi_i + 1] - frac * (values[hi_i + 1] - values[hi_i])
    lower = min(lower, best)
    upper = max(upper, best)
    return ParamInterval(float(lower), float(upper), open_lower, open_upper)


def confidence_bounds(atom_values: np.ndarray, temp_values: np.ndarray,
                      chi2_surface: np.ndarray,
                      chi2_min: float | None = None,
                      delta: float = 1.0):
    """Per-parameter intervals where chi2 <= chi2_min + delta.

    Each parameter is profiled over the other; intervals touching the grid
    edge are flagged open.  Returns (interval_N, interval_T).
    """
    chi2_surface = np.asarray(chi2_surface, dtype=float)
    if chi2_min is None:
        chi2_min = float(chi2_surface.min())
    if chi2_min > chi2_surface.min() + 1e-9:
        raise ValueError("chi2_min exceeds the surface minimum")
    level = chi2_min + delta
    i_best, j_best = np.unravel_index(np.argmin(chi2_surface),
                                      chi2_surface.shape)
    prof_n = chi2_surface.min(axis=1)
    prof_t = chi2_surface.min(axis=0)
    ci_n = _interval_from_profile(np.asarray(atom_values, float), prof_n,
                                  level, float(atom_values[i_best]))
    ci_t = _interval_from_profile(np.asarray(temp_values, float), prof_t,
                                  level, float(temp_values[j_best]))
    return ci_n, ci_t


def grid_fit_profile(profile: RadialProfile, trap: TrapGeometry,
                     grid: GridSpec | None = None,
                     *,
                     probe: ProbeParams | None = None,
                     constants: PhysicalConstants = DEFAULT_CONSTANTS,
                     bank: ProfileModelBank | None = None,
                     sigma_floor: float = SIGMA_FLOOR_RAD,
                     fit_background: bool = False,
                     polish: bool = True,
                     polish_maxfev: int = 60) -> GridFitResult:
    """Best (N, T) pair for a radial angle profile by chi-square grid search.

    A coarse scan over the grid is refined with a ``zoom_factor`` finer
    lattice that walks downhill from the coarse minimum, then interpolated
    below the lattice spacing (quadratic patch plus an optional bounded
    simplex polish).  Confidence intervals come from the
    chi2 <= chi2_min + 1 region of the coarse surface, profiled per
    parameter.
    """
    if len(profile.bin_centers_um) < 10:
        raise ValueError("profile must contain at least 10 bins")
    grid = grid or GridSpec()
    if bank is None:
        bank = ProfileModelBank(trap, profile.bin_centers_um, probe=probe,
                                constants=constants)
    else:
        m = len(profile.bin_centers_um)
        if len(bank.radii_um) < m or not np.allclose(
                bank.radii_um[:m], profile.bin_centers_um, atol=1e-9):
            raise ValueError("bank radii do not match the profile bins")

    data = profile.mean
    sigma = profile_sigma(profile, sigma_floor)
    m = len(data)
    w = 1.0 / sigma**2
    w_sum = float(np.sum(w))

    def chi2_of_residual(resid):
        # optional flat-background marginalization: the optimal constant
        # offset of a weighted least-squares residual is its weighted mean
        quad = resid**2 @ w
        if not fit_background:
            return quad
        lin = resid @ w
        return quad - lin**2 / w_sum

    atoms = grid.atom_values()
    temps = grid.temp_values()
    curves, fracs = bank.grid_stack(grid)
    resid = curves[:, :m] - data
    chi2 = chi2_of_residual(resid).reshape(len(atoms), len(temps))
    fractions = fracs.reshape(len(atoms), len(temps))

    i_best, j_best = np.unravel_index(np.argmin(chi2), chi2.shape)
    on_boundary = (i_best in (0, len(atoms) - 1)
                   or j_best in (0, len(temps) - 1))

    # refinement at zoom_factor-times finer resolution.  The chi2 valley is
    # a narrow diagonal trough whose flat floor can displace the coarse
    # minimum by several cells, so the refined window walks downhill
    # (re-centering while its minimum sits on the window edge) before the
    # sub-cell interpolation.
    log_ratio = math.log(atoms[1] / atoms[0])
    dt = temps[1] - temps[0]
    z = grid.zoom_factor
    n_anchor = atoms[i_best]
    t_anchor = temps[j_best]

    def node(ki: int, kj: int):
        n_val = n_anchor * math.exp(ki * log_ratio / z)
        t_val = t_anchor + kj * dt / z
        return n_val, t_val

    def in_range(ki: int, kj: int) -> bool:
        n_val, t_val = node(ki, kj)
        return (grid.atom_min * (1 - 1e-12) <= n_val
                <= grid.atom_max * (1 + 1e-12)
                and grid.temp_min - 1e-15 <= t_val <= grid.temp_max + 1e-15)

    fine_cache: dict[tuple[int, int], float] = {}

    def fine_chi2(ki: int, kj: int) -> float:
        key = (ki, kj)
        val = fine_cache.get(key)
        if val is None:
            if not in_range(ki, kj):
                val = math.inf
            else:
                curve, _ = bank.evaluate(*node(ki, kj))
                val = float(chi2_of_residual(curve[:m] - data))
            fine_cache[key] = val
        return val

    ci, cj = 0, 0
    for _ in range(80):
        window = [(ci + di, cj + dj)
                  for di in range(-z, z + 1) for dj in range(-z, z + 1)]
        best_key = min(window, key=lambda k: fine_chi2(*k))
        interior = (abs(best_key[0] - ci) < z and abs(best_key[1] - cj) < z)
        ci, cj = best_key
        if interior:
            break

    chi2_min = fine_chi2(ci, cj)
    n_best, t_best = node(ci, cj)

    # sub-cell quadratic interpolation of the refined minimum; a full 2D
    # quadratic handles the strong N-T correlation of the chi2 valley
    dn = dtj = 0.0
    patch = np.array([[fine_chi2(ci + di, cj + dj) for dj in (-1, 0, 1)]
                      for di in (-1, 0, 1)])
    if np.all(np.isfinite(patch)):
        us, vs = np.meshgrid([-1, 0, 1], [-1, 0, 1], indexing="ij")
        u = us.ravel().astype(float)
        v = vs.ravel().astype(float)
        design = np.stack([np.ones_like(u), u, v, u * u, v * v, u * v],
                          axis=1)
        coef, *_ = np.linalg.lstsq(design, patch.ravel(), rcond=None)
        _, b, c, quu, qvv, quv = coef
        hess = np.array([[2 * quu, quv], [quv, 2 * qvv]])
        if quu > 0 and np.linalg.det(hess) > 0:
            shift = np.linalg.solve(hess, [-b, -c])
            dn = float(np.clip(shift[0], -1.0, 1.0))
            dtj = float(np.clip(shift[1], -1.0, 1.0))
    n_best *= math.exp(dn * log_ratio / z)
    t_best += dtj * dt / z

    # bounded simplex polish: the chi2 trough is narrower than the refined
    # lattice, so the final localization runs on continuous coordinates
    if polish:
        from scipy.optimize import minimize

        def objective(uv):
            n_val = math.exp(uv[0] * log_ratio / z) * n_anchor
            t_val = t_anchor + uv[1] * dt / z
            if not (grid.atom_min * (1 - 1e-12) <= n_val
                    <= grid.atom_max * (1 + 1e-12)
                    and grid.temp_min - 1e-15 <= t_val
                    <= grid.temp_max + 1e-15):
                return 1e30
            curve, _ = bank.evaluate(n_val, t_val)
            return float(chi2_of_residual(curve[:m] - data))

        u0 = math.log(n_best / n_anchor) / (log_ratio / z)
        v0 = (t_best - t_anchor) / (dt / z)
        sol = minimize(objective, [u0, v0], method="Nelder-Mead",
                       options={"maxfev": polish_maxfev, "xatol": 5e-3,
                                "fatol": 1e-9, "initial_simplex": [
                                    [u0, v0], [u0 + 0.7, v0],
                                    [u0, v0 + 0.7]]})
        if sol.fun <= chi2_min:
            chi2_min = float(sol.fun)
            n_best = math.exp(sol.x[0] * log_ratio / z) * n_anchor
            t_best = t_anchor + sol.x[1] * dt / z

    n_best = float(np.clip(n_best, grid.atom_min, grid.atom_max))
    t_best = float(np.clip(t_best, grid.temp_min, grid.temp_max))
    frac_opts = {k: v for k, v in bank.profile_options.items()
                 if k in ("small_bec_threshold", "eta_reference")}
    f_best = reported_condensate_fraction(
        CloudState(n_best, t_best, trap), bank.constants, **frac_opts)
    ci_n, ci_t = confidence_bounds(atoms, temps, chi2)
    # the polished optimum may step just outside the gridded region
    ci_n = ParamInterval(min(ci_n.lower, n_best), max(ci_n.upper, n_best),
                         ci_n.open_lower, ci_n.open_upper)
    ci_t = ParamInterval(min(ci_t.lower, t_best), max(ci_t.upper, t_best),
                         ci_t.open_lower, ci_t.open_upper)
    region = chi2 <= float(chi2.min()) + 1.0
    if np.any(region):
        f_lo = float(min(fractions[region].min(), f_best))
        f_hi = float(max(fractions[region].max(), f_best))
    else:
        f_lo = f_hi = f_best
    ci_f = ParamInterval(f_lo, f_hi, ci_n.open_lower or ci_t.open_lower,
                         ci_n.open_upper or ci_t.open_upper)
    return GridFitResult(
        atom_number=float(n_best),
        temperature=float(t_best),
        condensate_fraction=float(f_best),
        chi2_min=float(chi2_min),
        ci_atom_number=ci_n,
        ci_temperature=ci_t,
        ci_fraction=ci_f,
        on_boundary=bool(on_boundary),
    )


# ---------------------------------------------------------------------------
# Condensate growth versus final power
# ---------------------------------------------------------------------------

def growth_curve(power, alpha: float, beta: float, gamma: float):
    """Saturating onset of the condensed fraction below the critical power.

    f(P) = alpha (P - beta) / (1 - exp(gamma (P - beta))), continued through
    the removable singularity at P = beta with the limit -alpha/gamma.
    """
    p = np.asarray(power, dtype=float)
    scalar = p.ndim == 0
    p = np.atleast_1d(p)
    x = np.clip(gamma * (p - beta), -700.0, 700.0)
    small = np.abs(x) < 1e-6
    xs = np.where(small, 1.0, x)  # placeholder to avoid 0/0 warnings
    with np.errstate(over="ignore"):
        generic = alpha * (p - beta) / (1.0 - np.exp(xs))
    series = (-alpha / gamma) * (1.0 - x / 2.0 + x * x / 12.0)
    out = np.where(small, series, generic)
    return float(out[0]) if scalar else out


def _growth_residuals(theta, powers, fractions, weights):
    alpha, beta, gamma = theta
    return (growth_curve(powers, alpha, beta, gamma) - fractions) * np.sqrt(weights)


def _growth_jacobian(theta, powers, fractions, weights):
    """Weighted residuals and their analytic parameter derivatives."""
    alpha, beta, gamma = theta
    delta = powers - beta
    x = np.clip(gamma * delta, -700.0, 700.0)
    small = np.abs(x) < 1e-5
    xs = np.where(small, 1.0, x)
    with np.errstate(over="ignore"):
        ex = np.exp(xs)
        d = 1.0 - ex
        d_alpha_g = delta / d
        d_beta_g = -alpha / d - alpha * delta * gamma * ex / d**2
        d_gamma_g = alpha * delta**2 * ex / d**2
    d_alpha_s = (-1.0 / gamma) * (1.0 - x / 2.0 + x * x / 12.0)
    d_beta_s = -alpha / 2.0 + alpha * gamma * delta / 6.0
    d_gamma_s = alpha / gamma**2 - alpha * delta**2 / 12.0
    sw = np.sqrt(weights)
    jac = np.empty((len(powers), 3))
    jac[:, 0] = np.where(small, d_alpha_s, d_alpha_g) * sw
    jac[:, 1] = np.where(small, d_beta_s, d_beta_g) * sw
    jac[:, 2] = np.where(small, d_gamma_s, d_gamma_g) * sw
    base = _growth_residuals(theta, powers, fractions, weights)
    return base, jac


def _gauss_newton(theta0, powers, fractions, weights,
                  max_iter: int = 150) -> tuple[np.ndarray, float, bool]:
    theta = np.asarray(theta0, dtype=float)
    res = _growth_residuals(theta, powers, fractions, weights)
    ssr = float(res @ res)
    for _ in range(max_iter):
        res, jac = _growth_jacobian(theta, powers, fractions, weights)
        try:
            step, *_ = np.linalg.lstsq(jac, -res, rcond=None)
        except np.linalg.LinAlgError:
            return theta, ssr, False
        if not np.all(np.isfinite(step)):
            return theta, ssr, False
        lam = 1.0
        improved = False
        for _ in range(30):
            trial = theta + lam * step
            if trial[2] != 0.0:
                trial_res = _growth_residuals(trial, powers, fractions, weights)
                trial_ssr = float(trial_res @ trial_res)
                if np.isfinite(trial_ssr) and trial_ssr <= ssr:
                    improved = trial_ssr < ssr - 1e-15 * (1.0 + ssr)
                    theta, new_ssr = trial, trial_ssr
                    break
            lam *= 0.5
        else:
            return theta, ssr, True  # stuck at a (local) optimum
        converged_step = np.max(np.abs(lam * step)
                                / np.maximum(np.abs(theta), 1e-9)) < 1e-13
        ssr = new_ssr
        if not improved or converged_step:
            return theta, ssr, True
    return theta, ssr, True


@dataclass
class GrowthFit:
    """Fitted growth-curve parameters and the derived critical power."""

    alpha: float
    beta: float           # mW
    gamma: float          # 1/mW
    covariance: np.ndarray
    p_c: float            # mW
    p_c_stderr: float     # mW
    converged: bool
    power_range: tuple[float, float]
    extrapolated: bool
    chi2: float
    n_points: int

    def curve(self, power):
        return growth_curve(power, self.alpha, self.beta, self.gamma)


def growth_fit(powers, fractions, weights=None,
               threshold: float = 0.10) -> GrowthFit:
    """Weighted least-squares fit of the condensate growth curve.

    Five deterministic beta initializations across the power range are
    combined with an end-slope alpha guess and both signs of the default
    steepness; the best damped Gauss-Newton solution wins.  The covariance
    is (J^T W J)^(-1), scaled by the reduced chi-square when no explicit
    weights are provided.
    """
    powers = np.asarray(powers, dtype=float)
    fractions = np.asarray(fractions, dtype=float)
    if len(powers) != len(fractions):
        raise ValueError("powers and fractions must have equal length")
    if len(powers) < 5:
        raise ValueError("growth fit needs at least 5 points")
    have_weights = weights is not None
    w = (np.asarray(weights, dtype=float) if have_weights
         else np.ones_like(powers))
    if np.any(w < 0):
        raise ValueError("weights must be non-negative")

    p_lo, p_hi = float(powers.min()), float(powers.max())
    span = p_hi - p_lo
    if span <= 0:
        raise ValueError("powers must span a range")
    order = np.argsort(powers)
    k = max(3, len(powers) // 3)
    low_p = powers[order][:k]
    low_f = fractions[order][:k]
    slope = np.polyfit(low_p, low_f, 1)[0]
    alpha0 = slope if slope != 0 else -1e-3

    starts = [(alpha0, p_lo + q * span, gamma0)
              for q in (0.0, 0.25, 0.5, 0.75, 1.0)
              for gamma0 in (0.05, -0.05)]
    # cheapest-first ordering; later starts are skipped once two runs agree
    start_ssr = []
    for th in starts:
        r = _growth_residuals(th, powers, fractions, w)
        val = float(r @ r)
        start_ssr.append(val if math.isfinite(val) else math.inf)
    order = np.argsort(start_ssr)

    best = None
    runs = 0
    for pos in order:
        theta, ssr, ok = _gauss_newton(starts[pos], powers, fractions, w)
        runs += 1
        if ok and (best is None or ssr < best[1]):
            prev = best
            best = (theta, ssr)
            if prev is not None and abs(prev[1] - ssr) <= 1e-9 * (1.0 + ssr):
                break
        elif ok and best is not None and abs(best[1] - ssr) <= 1e-9 * (1.0 + best[1]):
            break
        if best is not None and runs >= 4:
            break
    if best is None:
        raise FitConvergenceError("no growth-fit start converged",
                                  best_residual=float(min(start_ssr)))
    theta, ssr = best
    _, jac = _growth_jacobian(theta, powers, fractions, w)
    jtj = jac.T @ jac
    try:
        cov = np.linalg.inv(jtj)
    except np.linalg.LinAlgError:
        cov = np.full((3, 3), np.nan)
    dof = len(powers) - 3
    if not have_weights and dof > 0:
        cov = cov * (ssr / dof)

    fit = GrowthFit(
        alpha=float(theta[0]), beta=float(theta[1]), gamma=float(theta[2]),
        covariance=cov, p_c=math.nan, p_c_stderr=math.nan,
        converged=True, power_range=(p_lo, p_hi), extrapolated=False,
        chi2=float(ssr), n_points=len(powers),
    )
    try:
        p_c, err, extrapolated = critical_power(fit, threshold=threshold)
        fit.p_c, fit.p_c_stderr, fit.extrapolated = p_c, err, extrapolated
    except NoCrossingError:
        pass
    return fit


def growth_crossing_offset(alpha: float, gamma: float,
                           threshold: float = 0.10) -> float:
    """Power offset from beta at which the growth curve equals ``threshold``."""
    if threshold <= 0:
        raise NoCrossingError("degenerate threshold: the curve only reaches "
                              "zero asymptotically")
    width = max(abs(1.0 / gamma), 1.0) if gamma != 0 else 1.0
    lo, hi = -2000.0 * width, 2000.0 * width
    grid = np.linspace(lo, hi, 4001)
    vals = growth_curve(grid, alpha, 0.0, gamma) - threshold
    sign_change = np.flatnonzero(np.sign(vals[:-1]) != np.sign(vals[1:]))
    if len(sign_change) == 0:
        raise NoCrossingError(
            f"growth curve never reaches threshold {threshold}")
    # rightmost crossing: the highest power at which the curve still holds
    # the threshold fraction
    idx = sign_change[-1]
    return float(brentq(
        lambda u: growth_curve(u, alpha, 0.0, gamma) - threshold,
        grid[idx], grid[idx + 1], xtol=1e-4))


def critical_power(fit: GrowthFit, threshold: float = 0.10):
    """Power at which the fitted growth curve reaches ``threshold``.

    The crossing is searched within three range-widths of the fitted data;
    a threshold the curve never attains there raises ``NoCrossingError``.
    Returns (p_c, standard error, extrapolated flag).  The standard error
    follows from first-order propagation of the parameter covariance
    through the implicit crossing condition.
    """
    if threshold <= 0:
        raise NoCrossingError("degenerate threshold: the curve only reaches "
                              "zero asymptotically")
    span = max(fit.power_range[1] - fit.power_range[0], 1.0)
    lo = fit.power_range[0] - 3.0 * span
    hi = fit.power_range[1] + 3.0 * span
    grid = np.linspace(lo, hi, 4001)
    vals = growth_curve(grid, fit.alpha, fit.beta, fit.gamma) - threshold
    sign_change = np.flatnonzero(np.sign(vals[:-1]) != np.sign(vals[1:]))
    if len(sign_change) == 0:
        raise NoCrossingError(
            f"growth curve never reaches threshold {threshold} within "
            f"[{lo:.1f}, {hi:.1f}] mW")
    idx = sign_change[-1]
    p_c = float(brentq(
        lambda p: growth_curve(p, fit.alpha, fit.beta, fit.gamma) - threshold,
        grid[idx], grid[idx + 1], xtol=1e-4))

    # implicit-function gradient dPc/dtheta = -(df/dtheta)/(df/dP)
    eps_p = 1e-4 * max(abs(p_c), 1.0)
    dfdp = (growth_curve(p_c + eps_p, fit.alpha, fit.beta, fit.gamma)
            - growth_curve(p_c - eps_p, fit.alpha, fit.beta, fit.gamma)) / (2 * eps_p)
    grad = np.zeros(3)
    theta = (fit.alpha, fit.beta, fit.gamma)
    for k in range(3):
        h = 1e-7 * max(abs(theta[k]), 1e-3)
        up = list(theta)
        dn = list(theta)
        up[k] += h
        dn[k] -= h
        dfdtheta = (growth_curve(p_c, *up) - growth_curve(p_c, *dn)) / (2 * h)
        grad[k] = -dfdtheta / dfdp if dfdp != 0 else 0.0
    var = float(grad @ fit.covariance @ grad)
    stderr = math.sqrt(var) if var > 0 and math.isfinite(var) else math.nan
    extrapolated = not (fit.power_range[0] <= p_c <= fit.power_range[1])
    return float(p_c), stderr, extrapolated
