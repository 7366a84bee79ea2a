"""Synthetic dark-field Faraday imaging.

Density profiles are projected along the probe axis into column densities,
mapped linearly to polarization rotation angles, and detected behind a
crossed polarizer whose transmitted intensity goes as sin^2(theta) plus a
small leakage floor.  Photon shot noise enters as per-pixel Poisson
statistics on the detected light.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field

import numpy as np
from scipy.ndimage import uniform_filter

from becbench.physics import (
    DEFAULT_CONSTANTS,
    PhysicalConstants,
    SemiIdealProfile,
)

__all__ = [
    "KIND_ANGLE",
    "KIND_PHOTONS",
    "ProbeParams",
    "AngleImage",
    "RadialProfile",
    "FgridFormatError",
    "column_density",
    "column_density_radial",
    "faraday_angle_map",
    "detect_dark_field",
    "expected_dark_field",
    "estimate_angles",
    "signed_angle_estimate",
    "azimuthal_average",
    "radial_bin_reduce",
    "smoothed_argmax",
    "write_fgrid",
    "read_fgrid",
    "image_to_csv",
]

KIND_ANGLE = "angle"
KIND_PHOTONS = "photons"

_M2_TO_UM2 = 1e-12  # atoms/m^2 -> atoms/um^2


@dataclass(frozen=True)
class ProbeParams:
    """Dispersive probe light and detection chain.

    Flux is in photons/um^2/us, duration in us.  ``polarizer_floor`` is the
    intensity suppression of the crossed polarizer; ``rotation_coefficient``
    converts column density (atoms/um^2) to rotation angle (rad).
    """

    detuning_hz: float = 1.5e9
    photon_flux: float = 400.0
    pulse_duration_us: float = 20.0
    polarizer_floor: float = 3e-4
    rotation_coefficient: float = 6.63e-5

    def __post_init__(self):
        if self.photon_flux <= 0 or self.pulse_duration_us <= 0:
            raise ValueError("photon flux and pulse duration must be positive")
        if not 0.0 <= self.polarizer_floor < 1.0:
            raise ValueError("polarizer_floor must lie in [0, 1)")
        if self.rotation_coefficient <= 0:
            raise ValueError("rotation_coefficient must be positive")

    def incident_photons(self, pixel_size_um: float) -> float:
        """Mean photon number incident on one pixel during the pulse."""
        return self.photon_flux * self.pulse_duration_us * pixel_size_um**2


@dataclass
class AngleImage:
    """2D pixel grid of rotation angles (rad) or detected photon counts."""

    values: np.ndarray
    pixel_size_um: float = 3.5
    kind: str = KIND_ANGLE

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.ndim != 2:
            raise ValueError("image values must be a 2D array")
        if self.pixel_size_um <= 0:
            raise ValueError("pixel size must be positive")
        if self.kind not in (KIND_ANGLE, KIND_PHOTONS):
            raise ValueError(f"unknown image kind {self.kind!r}")
        if not np.all(np.isfinite(self.values)) or np.any(self.values < 0):
            raise ValueError("image values must be finite and non-negative")

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]


@dataclass
class RadialProfile:
    """Azimuthally reduced signal: per-bin mean, spread and population."""

    bin_centers_um: np.ndarray
    mean: np.ndarray
    std: np.ndarray
    count: np.ndarray

    def __post_init__(self):
        self.bin_centers_um = np.asarray(self.bin_centers_um, dtype=float)
        self.mean = np.asarray(self.mean, dtype=float)
        self.std = np.asarray(self.std, dtype=float)
        self.count = np.asarray(self.count, dtype=int)
        n = len(self.bin_centers_um)
        if not (len(self.mean) == len(self.std) == len(self.count) == n):
            raise ValueError("profile arrays must share one length")
        if n and np.any(np.diff(self.bin_centers_um) <= 0):
            raise ValueError("bin centers must be strictly increasing")
        if np.any(self.count < 1):
            raise ValueError("bins must contain at least one pixel")
        if np.any(self.std < 0):
            raise ValueError("per-bin spread must be non-negative")


# ---------------------------------------------------------------------------
# Projection and angle maps
# ---------------------------------------------------------------------------

_AXES = ("x", "y", "z")


def _axis_frequencies(profile: SemiIdealProfile, axis: str):
    trap = profile.state.trap
    omegas = {"x": trap.omega_x, "y": trap.omega_y, "z": trap.omega_z}
    if axis not in _AXES:
        raise ValueError(f"axis must be one of {_AXES}, got {axis!r}")
    w_axis = omegas.pop(axis)
    w_a, w_b = omegas.values()
    return w_axis, w_a, w_b


def _line_of_sight_profile(profile: SemiIdealProfile, axis: str,
                           rho_m: np.ndarray, n_samples: int = 129) -> np.ndarray:
    """Column density (atoms/m^2) versus isotropized in-plane radius."""
    w_axis, _, _ = _axis_frequencies(profile, axis)
    wbar = profile.state.trap.omega_bar
    r = profile.radii
    density = profile.n_total
    r_max = r[-1]
    out = np.zeros_like(rho_m, dtype=float)
    inside = rho_m < r_max
    if np.any(inside):
        rho_in = rho_m[inside]
        u_max = np.sqrt(np.clip(r_max**2 - rho_in**2, 0.0, None))
        frac = np.linspace(0.0, 1.0, n_samples)
        u = u_max[:, None] * frac[None, :]
        arg = np.sqrt(rho_in[:, None] ** 2 + u**2)
        vals = np.interp(arg.ravel(), r, density, right=0.0).reshape(arg.shape)
        integral = np.trapezoid(vals, u, axis=1)
        out[inside] = 2.0 * (wbar / w_axis) * integral
    return out


def _dense_column_lookup(profile: SemiIdealProfile, axis: str,
                         rho_m: np.ndarray) -> np.ndarray:
    """Column density at scaled radii via one dense tabulation (atoms/m^2).

    Synthesis and model fitting share this code path so a noiseless image
    matches its own model to floating-point accuracy.
    """
    flat = np.asarray(rho_m, dtype=float).ravel()
    grid = np.linspace(0.0, float(flat.max()) + 1e-15, 480)
    col_grid = _line_of_sight_profile(profile, axis, grid)
    return np.interp(flat, grid, col_grid).reshape(np.shape(rho_m))


def column_density_radial(profile: SemiIdealProfile, rho_um,
                          axis: str = "z") -> np.ndarray:
    """Column density in atoms/um^2 at in-plane radii given in um.

    Assumes the two in-plane trap frequencies are equal so the column is
    azimuthally symmetric in the image plane.
    """
    _, w_a, w_b = _axis_frequencies(profile, axis)
    if abs(w_a - w_b) > 1e-9 * max(w_a, w_b):
        raise ValueError(
            "radial column density requires equal in-plane trap frequencies")
    wbar = profile.state.trap.omega_bar
    rho_m = np.asarray(rho_um, dtype=float) * 1e-6 * (w_a / wbar)
    return _line_of_sight_profile(profile, axis, rho_m) * _M2_TO_UM2


def scaled_pixel_radii(profile: SemiIdealProfile, axis: str,
                       radius_um) -> np.ndarray:
    """Convert in-plane image radii (um) to isotropized radii (m)."""
    _, w_a, w_b = _axis_frequencies(profile, axis)
    if abs(w_a - w_b) > 1e-9 * max(w_a, w_b):
        raise ValueError(
            "radial image geometry requires equal in-plane trap frequencies")
    wbar = profile.state.trap.omega_bar
    return np.asarray(radius_um, dtype=float) * 1e-6 * (w_a / wbar)


def column_density(profile: SemiIdealProfile, axis: str = "z",
                   shape: tuple[int, int] = (65, 65),
                   pixel_size_um: float = 3.5) -> np.ndarray:
    """Project the cloud along ``axis`` onto a pixel grid (atoms/um^2)."""
    w_axis, w_a, w_b = _axis_frequencies(profile, axis)
    wbar = profile.state.trap.omega_bar
    height, width = shape
    ys = (np.arange(height) - (height - 1) / 2.0) * pixel_size_um
    xs = (np.arange(width) - (width - 1) / 2.0) * pixel_size_um
    yy, xx = np.meshgrid(ys, xs, indexing="ij")
    radius_um = np.round(np.hypot(yy, xx), 9)
    if abs(w_a - w_b) <= 1e-9 * max(w_a, w_b):
        rho = radius_um * 1e-6 * (w_a / wbar)
    else:
        rho = np.sqrt((w_a * yy) ** 2 + (w_b * xx) ** 2) * 1e-6 / wbar
    return _dense_column_lookup(profile, axis, rho) * _M2_TO_UM2


def faraday_angle_map(column: np.ndarray, probe: ProbeParams,
                      pixel_size_um: float = 3.5) -> AngleImage:
    """Rotation-angle image: theta = rotation_coefficient * column density."""
    return AngleImage(values=probe.rotation_coefficient * np.asarray(column, float),
                      pixel_size_um=pixel_size_um, kind=KIND_ANGLE)


# ---------------------------------------------------------------------------
# Detection model
# ---------------------------------------------------------------------------

def _poisson_means(image: AngleImage, probe: ProbeParams) -> np.ndarray:
    if image.kind != KIND_ANGLE:
        raise ValueError("detection expects an angle image")
    n_inc = probe.incident_photons(image.pixel_size_um)
    return n_inc * (np.sin(image.values) ** 2 + probe.polarizer_floor)


def expected_dark_field(image: AngleImage, probe: ProbeParams) -> AngleImage:
    """Noise-free detection: the per-pixel mean photon numbers."""
    return AngleImage(values=_poisson_means(image, probe),
                      pixel_size_um=image.pixel_size_um, kind=KIND_PHOTONS)


def detect_dark_field(image: AngleImage, probe: ProbeParams,
                      rng_seed) -> AngleImage:
    """Sample a shot-noise-limited dark-field exposure of an angle image."""
    lam = _poisson_means(image, probe)
    rng = np.random.default_rng(rng_seed)
    counts = rng.poisson(lam).astype(float)
    return AngleImage(values=counts, pixel_size_um=image.pixel_size_um,
                      kind=KIND_PHOTONS)


def estimate_angles(raw: AngleImage, probe: ProbeParams) -> AngleImage:
    """Invert the detection law: counts -> rotation angles.

    The transmitted fraction is clamped to [0, 1], so pure-leakage pixels
    map to zero angle and over-bright pixels to pi/2.
    """
    if raw.kind != KIND_PHOTONS:
        raise ValueError("angle estimation expects a photon-count image")
    n_inc = probe.incident_photons(raw.pixel_size_um)
    transmitted = np.clip(raw.values / n_inc - probe.polarizer_floor, 0.0, 1.0)
    return AngleImage(values=np.arcsin(np.sqrt(transmitted)),
                      pixel_size_um=raw.pixel_size_um, kind=KIND_ANGLE)


# ---------------------------------------------------------------------------
# Radial reduction
# ---------------------------------------------------------------------------

def smoothed_argmax(values: np.ndarray) -> tuple[float, float]:
    """Peak pixel (row, col) after a 3x3 smoothing pass."""
    smooth = uniform_filter(np.asarray(values, float), size=3, mode="nearest")
    idx = int(np.argmax(smooth))
    return float(idx // values.shape[1]), float(idx % values.shape[1])


def find_center(image: AngleImage) -> tuple[float, float]:
    return smoothed_argmax(image.values)


def radial_bin_reduce(values: np.ndarray, pixel_size_um: float,
                      center: tuple[float, float] | None = None,
                      bin_width_um: float | None = None) -> RadialProfile:
    """Radial reduction of a raw pixel array (values may be negative)."""
    values = np.asarray(values, dtype=float)
    if bin_width_um is None:
        bin_width_um = pixel_size_um
    if center is None:
        center = smoothed_argmax(values)
    cy, cx = center
    height, width = values.shape
    if not (0 <= cy <= height - 1 and 0 <= cx <= width - 1):
        raise ValueError("center must lie inside the image")
    rows = np.arange(height)[:, None] - cy
    cols = np.arange(width)[None, :] - cx
    radius = np.hypot(rows, cols) * pixel_size_um
    idx = np.floor(radius / bin_width_um).astype(int).ravel()
    vals = values.ravel()
    n_bins = int(idx.max()) + 1
    count = np.bincount(idx, minlength=n_bins)
    total = np.bincount(idx, weights=vals, minlength=n_bins)
    total_sq = np.bincount(idx, weights=vals**2, minlength=n_bins)
    present = count > 0
    mean = total[present] / count[present]
    var = total_sq[present] / count[present] - mean**2
    std = np.sqrt(np.clip(var, 0.0, None))
    centers = (np.flatnonzero(present) + 0.5) * bin_width_um
    return RadialProfile(bin_centers_um=centers, mean=mean, std=std,
                         count=count[present])


def azimuthal_average(image: AngleImage,
                      center: tuple[float, float] | None = None,
                      bin_width_um: float | None = None) -> RadialProfile:
    """Bin pixels by radius from ``center`` (defaults to the smoothed peak).

    Per-bin statistics are the mean, the population standard deviation and
    the pixel count; empty bins are omitted.
    """
    if image.kind != KIND_ANGLE:
        raise ValueError("azimuthal averaging expects an angle image")
    return radial_bin_reduce(image.values, image.pixel_size_um,
                             center=center, bin_width_um=bin_width_um)


def signed_angle_estimate(raw: AngleImage, probe: ProbeParams) -> np.ndarray:
    """Dark-frame-style inversion of a photon image, keeping the sign.

    The leakage baseline is subtracted before the square root, so pixels
    fluctuating below the baseline map to negative angles instead of being
    clamped to zero.  Zero-signal regions then average to zero angle,
    which is how background-subtracted camera frames behave; the clamped
    inversion of :func:`estimate_angles` would instead build up a positive
    pedestal there.
    """
    if raw.kind != KIND_PHOTONS:
        raise ValueError("angle estimation expects a photon-count image")
    n_inc = probe.incident_photons(raw.pixel_size_um)
    x = raw.values / n_inc - probe.polarizer_floor
    return np.sign(x) * np.arcsin(np.sqrt(np.clip(np.abs(x), 0.0, 1.0)))


# ---------------------------------------------------------------------------
# FGRID v1 container
# ---------------------------------------------------------------------------

FGRID_MAGIC = b"FGRID\x00v1"
_KIND_TO_CODE = {KIND_ANGLE: 0, KIND_PHOTONS: 1}
_CODE_TO_KIND = {0: KIND_ANGLE, 1: KIND_PHOTONS}
_HEADER = struct.Struct("<IIBd")  # width, height, kind, pixel size (um)


class FgridFormatError(ValueError):
    """Malformed FGRID payload; carries the offending byte offset."""

    def __init__(self, message: str, byte_offset: int):
        super().__init__(f"{message} (byte offset {byte_offset})")
        self.byte_offset = byte_offset


def write_fgrid(path, image: AngleImage) -> None:
    data = image.values.astype("<f4").tobytes()
    header = _HEADER.pack(image.width, image.height,
                          _KIND_TO_CODE[image.kind], image.pixel_size_um)
    with open(path, "wb") as fh:
        fh.write(FGRID_MAGIC)
        fh.write(header)
        fh.write(data)


def read_fgrid(path) -> AngleImage:
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < len(FGRID_MAGIC) or blob[: len(FGRID_MAGIC)] != FGRID_MAGIC:
        raise FgridFormatError("bad magic", 0)
    off = len(FGRID_MAGIC)
    if len(blob) < off + _HEADER.size:
        raise FgridFormatError("truncated header", len(blob))
    width, height, kind_code, pixel_size = _HEADER.unpack_from(blob, off)
    if kind_code not in _CODE_TO_KIND:
        raise FgridFormatError(f"unknown kind code {kind_code}", off + 8)
    if pixel_size <= 0 or not math.isfinite(pixel_size):
        raise FgridFormatError("invalid pixel size", off + 9)
    data_off = off + _HEADER.size
    expected = 4 * width * height
    if len(blob) - data_off != expected:
        raise FgridFormatError(
            f"payload holds {len(blob) - data_off} bytes, expected {expected}",
            data_off)
    values = np.frombuffer(blob, dtype="<f4", offset=data_off).astype(float)
    values = values.reshape(height, width)
    return AngleImage(values=values, pixel_size_um=pixel_size,
                      kind=_CODE_TO_KIND[kind_code])


def image_to_csv(path, image: AngleImage) -> None:
    """Plain-text export: one CSV row per pixel row."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"# kind={image.kind} pixel_size_um={image.pixel_size_um!r}\n")
        for row in image.values:
            fh.write(",".join(repr(float(v)) for v in row))
            fh.write("\n")
