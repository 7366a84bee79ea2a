"""Benchmark-conditioned statistics for transition-point campaigns.

A non-destructive benchmark observable recorded early in each run predicts
the run outcome; regression against it splits the outcome variance into a
predictable part and a residual.  Binning runs by the benchmark value maps
out the critical power as a function of the benchmark, and the curvature
of that curve quantifies how much a pooled (unbinned) analysis is shifted
by averaging over benchmark fluctuations.
"""

from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from becbench.fitting import (
    FitConvergenceError,
    GrowthFit,
    NoCrossingError,
    growth_fit,
)

__all__ = [
    "ExperimentRecord",
    "BenchmarkBin",
    "CriticalCurveBin",
    "PooledPoint",
    "CriticalCurve",
    "DegenerateDataError",
    "linear_regression",
    "noise_reduction_factor",
    "bin_by_benchmark",
    "binned_critical_curve",
    "pooled_estimate",
    "convolution_bias",
    "model_comparison",
    "weighted_polyfit",
    "write_records_csv",
    "read_records_csv",
]


class DegenerateDataError(ValueError):
    """Input data carry no usable variation for the requested statistic."""


@dataclass(frozen=True)
class ExperimentRecord:
    """One simulated run: benchmark observables and the measured outcome."""

    psd_benchmark: float
    peak_benchmark_angle: float  # rad
    final_power_mw: float
    measured_fraction: float
    measured_atom_number: float
    probe_dose_us: float
    seed: int

    def __post_init__(self):
        if self.psd_benchmark <= 0:
            raise ValueError("psd_benchmark must be positive")
        if self.final_power_mw <= 0:
            raise ValueError("final_power_mw must be positive")


RECORD_FIELDS = [
    "psd_benchmark",
    "peak_benchmark_angle",
    "final_power_mw",
    "measured_fraction",
    "measured_atom_number",
    "probe_dose_us",
    "seed",
]


def write_records_csv(path, records) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(RECORD_FIELDS)
        for rec in records:
            writer.writerow([repr(float(getattr(rec, name))) if name != "seed"
                             else str(int(rec.seed)) for name in RECORD_FIELDS])


def read_records_csv(path) -> list[ExperimentRecord]:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if header != RECORD_FIELDS:
            raise ValueError(f"unexpected record header {header}")
        out = []
        for row in reader:
            vals = dict(zip(RECORD_FIELDS, row))
            out.append(ExperimentRecord(
                psd_benchmark=float(vals["psd_benchmark"]),
                peak_benchmark_angle=float(vals["peak_benchmark_angle"]),
                final_power_mw=float(vals["final_power_mw"]),
                measured_fraction=float(vals["measured_fraction"]),
                measured_atom_number=float(vals["measured_atom_number"]),
                probe_dose_us=float(vals["probe_dose_us"]),
                seed=int(vals["seed"]),
            ))
    return out


# ---------------------------------------------------------------------------
# Regression and noise reduction
# ---------------------------------------------------------------------------

def linear_regression(x, y):
    """Ordinary least squares; returns (slope, intercept, residuals)."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if len(x) != len(y):
        raise ValueError("x and y must have equal length")
    if len(x) < 3:
        raise ValueError("regression needs at least 3 points")
    sxx = float(np.sum((x - x.mean()) ** 2))
    if sxx == 0.0:
        raise DegenerateDataError("all x values identical")
    slope = float(np.sum((x - x.mean()) * (y - y.mean())) / sxx)
    intercept = float(y.mean() - slope * x.mean())
    residuals = y - (slope * x + intercept)
    return slope, intercept, residuals


def noise_reduction_factor(x, y, regression_dof: int = 1) -> float:
    """Variance ratio before/after conditioning y on a linear model of x.

    The residual variance uses n - regression_dof in the denominator
    (default 1, i.e. the same normalization as the unconditioned sample
    variance; pass 2 to charge the fitted slope as well).  A perfect
    prediction returns infinity with a warning.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    n = len(y)
    _, _, residuals = linear_regression(x, y)
    var_y = float(np.var(y, ddof=1))
    var_red = float(np.sum(residuals**2) / (n - regression_dof))
    if var_red == 0.0:
        warnings.warn("residual variance is zero; benchmark predicts the "
                      "outcome exactly", RuntimeWarning, stacklevel=2)
        return math.inf
    return var_y / var_red


# ---------------------------------------------------------------------------
# Benchmark binning
# ---------------------------------------------------------------------------

@dataclass
class BenchmarkBin:
    records: list
    psd_mean: float
    psd_stderr: float
    psd_std: float

    @property
    def count(self) -> int:
        return len(self.records)


def bin_by_benchmark(records, n_bins: int = 21, min_per_bin: int = 4,
                     equal_width: bool = False) -> list[BenchmarkBin]:
    """Group records by benchmark phase-space density.

    Default is equal-population (rank) binning, which keeps per-bin fit
    quality uniform; equal-width binning is available instead.
    """
    records = list(records)
    psd = np.array([r.psd_benchmark for r in records])
    if len(records) < n_bins * min_per_bin:
        raise DegenerateDataError(
            f"need at least n_bins*min_per_bin = {n_bins * min_per_bin} "
            f"records, got {len(records)}")
    if psd.max() == psd.min():
        raise DegenerateDataError(
            "all records share one benchmark value; binning is degenerate")
    order = np.argsort(psd, kind="stable")
    if equal_width:
        edges = np.linspace(psd.min(), psd.max(), n_bins + 1)
        idx_groups = []
        for k in range(n_bins):
            hi_incl = psd <= edges[k + 1] if k == n_bins - 1 else psd < edges[k + 1]
            sel = np.flatnonzero((psd >= edges[k]) & hi_incl)
            if len(sel) == 0:
                continue
            if len(sel) < min_per_bin:
                warnings.warn(f"dropping width-bin {k} with {len(sel)} "
                              f"records (< {min_per_bin})", RuntimeWarning,
                              stacklevel=2)
                continue
            idx_groups.append(sel)
    else:
        idx_groups = np.array_split(order, n_bins)
    bins = []
    for sel in idx_groups:
        vals = psd[sel]
        stderr = (float(np.std(vals, ddof=1) / math.sqrt(len(vals)))
                  if len(vals) > 1 else 0.0)
        bins.append(BenchmarkBin(
            records=[records[i] for i in sel],
            psd_mean=float(vals.mean()),
            psd_stderr=stderr,
            psd_std=float(np.std(vals, ddof=1)) if len(vals) > 1 else 0.0,
        ))
    return bins


# ---------------------------------------------------------------------------
# Critical curve
# ---------------------------------------------------------------------------

@dataclass
class CriticalCurveBin:
    psd_mean: float
    psd_stderr: float
    psd_std: float
    p_c: float
    p_c_stderr: float
    n_fits: int


@dataclass
class PooledPoint:
    psd_mean: float
    psd_stderr: float
    p_c: float
    p_c_stderr: float


@dataclass
class CriticalCurve:
    bins: list
    coefficients: tuple          # (c0, c1, c2) of P_c versus benchmark PSD
    covariance: np.ndarray       # 3x3
    pooled: PooledPoint

    def curve_value(self, x) -> np.ndarray:
        c0, c1, c2 = self.coefficients
        return c0 + c1 * np.asarray(x, float) + c2 * np.asarray(x, float) ** 2

    def curve_stderr(self, x) -> np.ndarray:
        x = np.atleast_1d(np.asarray(x, float))
        design = np.stack([np.ones_like(x), x, x**2], axis=1)
        var = np.einsum("ij,jk,ik->i", design, self.covariance, design)
        return np.sqrt(np.clip(var, 0.0, None))


def weighted_polyfit(x, y, sigma, degree: int):
    """Inverse-variance weighted polynomial fit with coefficient covariance.

    The design is centred on the weighted mean of x for conditioning and
    the coefficients are transformed back, so the returned tuple is in
    ascending powers of raw x.  Covariance is the unscaled (J^T W J)^-1.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    sigma = np.asarray(sigma, dtype=float)
    if np.any(sigma <= 0):
        raise ValueError("sigma entries must be positive")
    if len(x) <= degree:
        raise DegenerateDataError("not enough points for the polynomial degree")
    w = 1.0 / sigma**2
    x0 = float(np.sum(w * x) / np.sum(w))
    u = x - x0
    design = np.stack([u**k for k in range(degree + 1)], axis=1)
    sw = np.sqrt(w)
    coeffs_u, *_ = np.linalg.lstsq(design * sw[:, None], y * sw, rcond=None)
    cov_u = np.linalg.inv(design.T @ (design * w[:, None]))
    # shift back: p(x) = sum_k a_k (x - x0)^k
    n = degree + 1
    shift = np.zeros((n, n))
    for k in range(n):
        for j in range(k + 1):
            shift[j, k] = math.comb(k, j) * (-x0) ** (k - j)
    coeffs = shift @ coeffs_u
    cov = shift @ cov_u @ shift.T
    return tuple(float(c) for c in coeffs), cov


def _series_fits(bin_records, rng, threshold: float):
    """Disjoint one-record-per-setpoint subsets of a bin, each fitted."""
    groups: dict[float, list] = {}
    for rec in bin_records:
        groups.setdefault(rec.final_power_mw, []).append(rec)
    n_subsets = min(len(g) for g in groups.values())
    powers_sorted = sorted(groups)
    shuffled = {p: [groups[p][i] for i in rng.permutation(len(groups[p]))]
                for p in powers_sorted}
    fits = []
    for s in range(n_subsets):
        subset = [shuffled[p][s] for p in powers_sorted]
        powers = np.array([r.final_power_mw for r in subset])
        fracs = np.array([r.measured_fraction for r in subset])
        try:
            fit = growth_fit(powers, fracs, threshold=threshold)
        except (FitConvergenceError, ValueError):
            continue
        if math.isfinite(fit.p_c):
            fits.append(fit.p_c)
    return fits


def binned_critical_curve(records, *, n_bins: int = 21, min_per_bin: int = 4,
                          rng_seed: int = 0, threshold: float = 0.10,
                          equal_width: bool = False) -> CriticalCurve:
    """Critical power versus benchmark PSD from equal-population bins.

    Within each bin, disjoint subsets holding one record per power
    setpoint are drawn (seeded) and fitted individually; the bin value is
    the mean critical power with its standard error.  A weighted quadratic
    fit across bins gives the curve and its coefficient covariance, and
    the whole data set is also fitted once for the pooled point.
    """
    records = list(records)
    bins = bin_by_benchmark(records, n_bins=n_bins, min_per_bin=min_per_bin,
                            equal_width=equal_width)
    rng = np.random.default_rng(rng_seed)
    curve_bins = []
    for k, b in enumerate(bins):
        fits = _series_fits(b.records, rng, threshold)
        if len(fits) < 2:
            warnings.warn(f"dropping bin {k}: {len(fits)} usable fits",
                          RuntimeWarning, stacklevel=2)
            continue
        fits = np.array(fits)
        curve_bins.append(CriticalCurveBin(
            psd_mean=b.psd_mean, psd_stderr=b.psd_stderr, psd_std=b.psd_std,
            p_c=float(fits.mean()),
            p_c_stderr=float(fits.std(ddof=1) / math.sqrt(len(fits))),
            n_fits=len(fits),
        ))
    if len(curve_bins) < 3:
        raise DegenerateDataError(
            f"only {len(curve_bins)} usable bins; cannot fit a curve")
    xs = np.array([b.psd_mean for b in curve_bins])
    ys = np.array([b.p_c for b in curve_bins])
    es = np.array([max(b.p_c_stderr, 1e-9) for b in curve_bins])
    coeffs, cov = weighted_polyfit(xs, ys, es, 2)
    # per-bin errors are themselves estimates; inflate the coefficient
    # covariance when the fit scatters more than they claim
    model = coeffs[0] + coeffs[1] * xs + coeffs[2] * xs**2
    dof = len(curve_bins) - 3
    if dof > 0:
        chi2_red = float(np.sum(((ys - model) / es) ** 2)) / dof
        cov = cov * max(1.0, chi2_red)
    pooled_pc, pooled_err = pooled_estimate(records, threshold=threshold)
    psd_all = np.array([r.psd_benchmark for r in records])
    pooled = PooledPoint(
        psd_mean=float(psd_all.mean()),
        psd_stderr=float(np.std(psd_all, ddof=1) / math.sqrt(len(psd_all))),
        p_c=pooled_pc,
        p_c_stderr=pooled_err,
    )
    return CriticalCurve(bins=curve_bins, coefficients=coeffs,
                         covariance=cov, pooled=pooled)


def pooled_estimate(records, threshold: float = 0.10):
    """Single growth fit over the whole record table -> (P_c, stderr)."""
    records = list(records)
    powers = np.array([r.final_power_mw for r in records])
    fracs = np.array([r.measured_fraction for r in records])
    fit = growth_fit(powers, fracs, threshold=threshold)
    if not math.isfinite(fit.p_c):
        raise NoCrossingError("pooled growth fit never crosses the threshold")
    return fit.p_c, fit.p_c_stderr


def convolution_bias(coefficients, sigma_x: float):
    """Systematic shift of a quadratic response read out with a noisy input.

    Averaging f over zero-mean input noise of variance sigma_x^2 shifts a
    quadratic by half its curvature times the variance; the corrective
    offset is the negative of that.  Returns (delta, corrected
    coefficients) where the correction applies to the constant term.
    """
    if sigma_x < 0:
        raise ValueError("sigma_x must be non-negative")
    c0, c1, c2 = coefficients
    if not math.isfinite(c2):
        raise ValueError("curvature coefficient must be finite")
    delta = -c2 * sigma_x**2
    return float(delta), (float(c0 + delta), float(c1), float(c2))


def model_comparison(curve_bins):
    """Reduced chi-square of linear and quadratic fits to the binned curve."""
    bins = list(curve_bins)
    if len(bins) < 5:
        raise ValueError("model comparison needs at least 5 bins")
    xs = np.array([b.psd_mean for b in bins])
    ys = np.array([b.p_c for b in bins])
    es = np.array([max(b.p_c_stderr, 1e-9) for b in bins])
    out = []
    for degree in (1, 2):
        dof = len(bins) - (degree + 1)
        if dof <= 0:
            raise ValueError("no degrees of freedom left for the fit")
        coeffs, _ = weighted_polyfit(xs, ys, es, degree)
        model = sum(c * xs**k for k, c in enumerate(coeffs))
        chi2 = float(np.sum(((ys - model) / es) ** 2))
        out.append(chi2 / dof)
    return out[0], out[1]
