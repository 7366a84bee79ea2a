"""Command-line pipelines: simulate, image, fit and analyze.

Every command is seeded and byte-reproducible: rerunning with the same
configuration and seed writes identical files.  Results are data tables
(CSV) plus JSON manifests embedding the fully resolved configuration;
plotting is left to downstream tooling.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import math
import sys
from pathlib import Path

import numpy as np

from becbench.analysis import (
    DegenerateDataError,
    binned_critical_curve,
    convolution_bias,
    model_comparison,
    read_records_csv,
    write_records_csv,
)
from becbench.config import ConfigError, GlobalConfig, load_config
from becbench.fitting import GridSpec, ImageGeometry, ProfileModelBank
from becbench.imaging import (
    AngleImage,
    KIND_PHOTONS,
    RadialProfile,
    azimuthal_average,
    column_density,
    detect_dark_field,
    estimate_angles,
    faraday_angle_map,
    image_to_csv,
    read_fgrid,
    write_fgrid,
)
from becbench.physics import CloudState, semi_ideal_profile
from becbench.simulator import (
    classify_phase,
    dimple_phase_boundary,
    simulate_campaign,
    simulate_dimple_cycles,
)
from becbench.studies import (
    fit_photon_image,
    nrf_by_setpoint,
    shotnoise_bias_study,
)

EXIT_OK = 0
EXIT_RUNTIME = 1
EXIT_USAGE = 2


def _fmt(value) -> str:
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    if isinstance(value, np.integer):
        return str(int(value))
    return str(value)


def _write_csv(path: Path, header, rows) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(_fmt(v) for v in row) + "\n")


def _write_json(path: Path, payload: dict) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _manifest(path: Path, command: str, args_dict: dict,
              config: GlobalConfig, outputs) -> None:
    _write_json(path, {
        "command": command,
        "arguments": args_dict,
        "config": config.to_dict(),
        "outputs": sorted(Path(o).name for o in outputs),
    })


def _resolve(args) -> tuple[GlobalConfig, Path]:
    config = load_config(args.config) if args.config else GlobalConfig()
    if args.seed is not None:
        config = dataclasses.replace(config, seed=args.seed)
    out = Path(args.out if args.out else config.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    return config, out


def _synth_images(config: GlobalConfig, atom_number: float,
                  temperature: float, power_mw: float, seed):
    trap = config.trap.geometry_at(power_mw)
    state = CloudState(atom_number, temperature, trap)
    profile = semi_ideal_profile(state, config.constants,
                                 eta_reference=config.eta_reference)
    shape = (config.image.height, config.image.width)
    column = column_density(profile, shape=shape,
                            pixel_size_um=config.image.pixel_size_um)
    angle = faraday_angle_map(column, config.probe,
                              config.image.pixel_size_um)
    photons = detect_dark_field(angle, config.probe, rng_seed=seed)
    return angle, photons


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------

def cmd_synth(args) -> int:
    config, out = _resolve(args)
    temperature = args.t_nk * 1e-9
    angle, photons = _synth_images(config, args.n, temperature,
                                   args.power_mw, (config.seed, 0x5A))
    angle_path = out / "angle.fgrid"
    photon_path = out / "photons.fgrid"
    write_fgrid(angle_path, angle)
    write_fgrid(photon_path, photons)
    outputs = [angle_path, photon_path]
    if args.csv:
        image_to_csv(out / "angle.csv", angle)
        image_to_csv(out / "photons.csv", photons)
        outputs += [out / "angle.csv", out / "photons.csv"]
    _manifest(out / "synth_manifest.json", "synth",
              {"n": args.n, "t_nk": args.t_nk, "power_mw": args.power_mw,
               "csv": bool(args.csv), "seed": config.seed},
              config, outputs)
    print(f"peak angle {angle.values.max():.6f} rad; "
          f"wrote {angle_path} and {photon_path}")
    return EXIT_OK


def _low_signal_result(grid: GridSpec):
    """Placeholder fit for images carrying no measurable rotation."""
    from becbench.fitting import GridFitResult, ParamInterval

    open_n = ParamInterval(grid.atom_min, grid.atom_max, True, True)
    open_t = ParamInterval(grid.temp_min, grid.temp_max, True, True)
    return GridFitResult(
        atom_number=grid.atom_min, temperature=grid.temp_max,
        condensate_fraction=0.0, chi2_min=0.0,
        ci_atom_number=open_n, ci_temperature=open_t,
        ci_fraction=ParamInterval(0.0, 1.0, True, True), on_boundary=True)


def _profile_from_csv(path: Path) -> RadialProfile:
    rows = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    if rows.shape[1] != 4:
        raise ValueError(f"{path}: expected 4 columns "
                         "(bin_center_um, mean, std, count)")
    return RadialProfile(rows[:, 0], rows[:, 1], rows[:, 2],
                         rows[:, 3].astype(int))


def cmd_fit(args) -> int:
    config, out = _resolve(args)
    trap = config.trap.geometry_at(args.power_mw)
    path = Path(args.input)
    grid = config.fit_grid
    metadata = {
        "input": str(path),
        "power_mw": args.power_mw,
        "sigma_per_bin": "standard error of the bin mean, floored at 1e-4 rad",
        "inversion": args.inversion,
    }
    from becbench.fitting import grid_fit_profile

    low_signal = False
    result = None
    if path.suffix == ".csv":
        profile = _profile_from_csv(path)
        result = grid_fit_profile(profile, trap, grid, probe=config.probe,
                                  constants=config.constants)
    else:
        image = read_fgrid(path)
        if image.kind == KIND_PHOTONS:
            from becbench.imaging import signed_angle_estimate

            signal_peak = float(signed_angle_estimate(image,
                                                      config.probe).max())
        else:
            signal_peak = float(image.values.max())
        if signal_peak < 1e-3:
            low_signal = True
            result = _low_signal_result(grid)
    if result is not None:
        pass
    else:
        geometry = ImageGeometry(height=image.height, width=image.width,
                                 pixel_size_um=image.pixel_size_um)
        bank = ProfileModelBank.for_image(trap, geometry, probe=config.probe,
                                          constants=config.constants)
        if image.kind == KIND_PHOTONS:
            if args.inversion == "clamped":
                angle = estimate_angles(image, config.probe)
                profile = azimuthal_average(angle)
                result = grid_fit_profile(profile, trap, grid, bank=bank,
                                          probe=config.probe,
                                          constants=config.constants)
            else:
                result = fit_photon_image(image, trap, config.probe, grid,
                                          bank=bank,
                                          constants=config.constants)
        else:
            profile = azimuthal_average(image)
            result = grid_fit_profile(profile, trap, grid, bank=bank,
                                      probe=config.probe,
                                      constants=config.constants)
    payload = result.to_dict()
    payload["metadata"] = metadata
    payload["low_signal"] = bool(low_signal)
    result_path = out / "fit_result.json"
    _write_json(result_path, payload)
    _manifest(out / "fit_manifest.json", "fit",
              {**metadata, "seed": config.seed}, config, [result_path])
    print(f"best N {result.atom_number:.6g}, T {result.temperature:.6g} K, "
          f"fraction {result.condensate_fraction:.4f} "
          f"(chi2 {result.chi2_min:.4g})")
    return EXIT_OK


def cmd_campaign(args) -> int:
    config, out = _resolve(args)
    campaign = config.campaign_with_seed()
    if args.runs is not None:
        campaign = dataclasses.replace(campaign, runs=args.runs)
    records = simulate_campaign(campaign, config.benchmark_trap(),
                                config.constants)
    records_path = out / "records.csv"
    write_records_csv(records_path, records)
    _manifest(out / "campaign_manifest.json", "campaign",
              {"runs": campaign.runs, "seed": campaign.seed},
              dataclasses.replace(config, campaign=campaign),
              [records_path])
    print(f"wrote {len(records)} records to {records_path}")
    return EXIT_OK


def _load_or_simulate_records(config: GlobalConfig, records_path):
    if records_path:
        return read_records_csv(records_path)
    campaign = config.campaign_with_seed()
    return simulate_campaign(campaign, config.benchmark_trap(),
                             config.constants)


def cmd_nrf(args) -> int:
    config, out = _resolve(args)
    records = _load_or_simulate_records(config, args.records)
    rows = nrf_by_setpoint(records)
    nrf_path = out / "nrf.csv"
    _write_csv(nrf_path, ["final_power_mw", "nrf", "n_runs"], rows)
    _manifest(out / "nrf_manifest.json", "nrf",
              {"records": args.records, "seed": config.seed}, config,
              [nrf_path])
    for power, nrf, n in rows:
        print(f"P = {power:7.1f} mW: NRF = {nrf:7.2f}  ({n} runs)")
    return EXIT_OK


def cmd_curve(args) -> int:
    config, out = _resolve(args)
    records = _load_or_simulate_records(config, args.records)
    curve = binned_critical_curve(records, n_bins=args.bins,
                                  rng_seed=config.seed + 1,
                                  threshold=config.campaign.fraction_threshold)
    psd = np.array([r.psd_benchmark for r in records])
    sigma_pooled = float(np.std(psd, ddof=1))
    delta_pooled, corrected = convolution_bias(curve.coefficients,
                                               sigma_pooled)
    sigma_bins = float(np.sqrt(np.mean([b.psd_std**2 for b in curve.bins])))
    delta_bin, _ = convolution_bias(curve.coefficients, sigma_bins)
    chi2_lin, chi2_quad = model_comparison(curve.bins)

    bins_path = out / "curve_bins.csv"
    _write_csv(bins_path,
               ["psd_mean", "psd_stderr", "p_c_mw", "p_c_stderr_mw",
                "n_fits"],
               [(b.psd_mean, b.psd_stderr, b.p_c, b.p_c_stderr, b.n_fits)
                for b in curve.bins])
    curve_path = out / "curve.json"
    _write_json(curve_path, {
        "coefficients": list(curve.coefficients),
        "covariance": curve.covariance.tolist(),
        "pooled": dataclasses.asdict(curve.pooled),
        "bias_correction": {
            "sigma_psd_pooled": sigma_pooled,
            "delta_pooled_mw": delta_pooled,
            "corrected_coefficients": list(corrected),
            "sigma_psd_within_bin": sigma_bins,
            "delta_per_bin_mw": delta_bin,
        },
        "model_comparison": {
            "chi2_red_linear": chi2_lin,
            "chi2_red_quadratic": chi2_quad,
        },
    })
    _manifest(out / "curve_manifest.json", "curve",
              {"records": args.records, "bins": args.bins,
               "seed": config.seed}, config, [bins_path, curve_path])
    c0, c1, c2 = curve.coefficients
    print(f"quadratic curve: c0 {c0:.3f}, c1 {c1:.3f}, c2 {c2:.3f} mW; "
          f"pooled P_c {curve.pooled.p_c:.3f} +- {curve.pooled.p_c_stderr:.3f} mW")
    print(f"pooled-analysis shift {delta_pooled:+.4f} mW, per-bin "
          f"{delta_bin:+.6f} mW; chi2_red linear {chi2_lin:.3f} / "
          f"quadratic {chi2_quad:.3f}")
    return EXIT_OK


def cmd_shotnoise(args) -> int:
    config, out = _resolve(args)
    fractions = tuple(float(x) for x in args.fractions.split(","))
    levels = tuple(float(x) for x in args.photons.split(","))
    trap = config.trap.geometry_at(args.power_mw)
    geometry = ImageGeometry(height=config.image.height,
                             width=config.image.width,
                             pixel_size_um=config.image.pixel_size_um)
    points = shotnoise_bias_study(
        fractions=fractions, photon_levels=levels, samples=args.samples,
        atom_number=args.n, trap=trap, probe=config.probe,
        geometry=geometry, constants=config.constants, seed=config.seed)
    table_path = out / "shotnoise.csv"
    _write_csv(table_path,
               ["fraction_true", "peak_photons", "samples", "fraction_mean",
                "fraction_std", "bias"],
               [(p.fraction_true, p.peak_photons, p.samples,
                 p.fraction_mean, p.fraction_std, p.bias) for p in points])
    _manifest(out / "shotnoise_manifest.json", "shotnoise",
              {"fractions": list(fractions), "photons": list(levels),
               "samples": args.samples, "n": args.n,
               "power_mw": args.power_mw, "seed": config.seed},
              config, [table_path])
    for p in points:
        print(f"f_true {p.fraction_true:.2f} @ {p.peak_photons:8.0f} "
              f"photons: fitted {p.fraction_mean:.4f} +- {p.fraction_std:.4f} "
              f"(bias {p.bias:+.4f})")
    return EXIT_OK


def cmd_dimple(args) -> int:
    config, out = _resolve(args)
    dimple = config.dimple
    if args.pulses is not None:
        dimple = dataclasses.replace(dimple, pulses_per_cycle=args.pulses)
    if args.cycles is not None:
        dimple = dataclasses.replace(dimple, cycles=args.cycles)
    trap = config.trap.geometry_at(config.reservoir.stop_power_mw)
    reservoir = CloudState(config.reservoir.atom_number,
                           config.reservoir.temperature, trap)
    trace = simulate_dimple_cycles(dimple, reservoir, config.constants,
                                   probe=config.probe, seed=config.seed)

    # classification boundary from per-cycle noisy temperature readings
    cycles = np.arange(dimple.cycles)
    n_cycle = np.array([trace.reservoir_atoms[trace.cycle_index == c][0]
                        for c in cycles])
    t_cycle = np.array([trace.reservoir_temperature[trace.cycle_index == c][-1]
                        for c in cycles])
    rng = np.random.default_rng(np.random.SeedSequence([config.seed, 0xB0]))
    t_meas = t_cycle * (1.0 + dimple.temp_measurement_noise
                        * rng.standard_normal(dimple.cycles))
    boundary = dimple_phase_boundary(n_cycle, t_meas, dimple,
                                     config.constants)
    labels = classify_phase(trace.reservoir_atoms, trace.depth_k, boundary)
    truth = np.where(trace.bec_label, "BEC", "thermal")

    trace_path = out / "dimple_trace.csv"
    _write_csv(trace_path,
               ["time_s", "cycle", "depth_uk", "reservoir_atoms",
                "reservoir_temperature_nk", "dimple_atoms",
                "condensed_atoms", "bec_true", "probed", "peak_angle_rad",
                "probe_dose_us"],
               [(trace.time_s[k], int(trace.cycle_index[k]),
                 trace.depth_k[k] * 1e6, trace.reservoir_atoms[k],
                 trace.reservoir_temperature[k] * 1e9,
                 trace.dimple_atoms[k], trace.condensed_atoms[k],
                 int(trace.bec_label[k]), int(trace.probe_mask[k]),
                 trace.peak_angle[k], trace.probe_dose_us[k])
                for k in range(len(trace.time_s))])
    boundary_path = out / "dimple_boundary.csv"
    _write_csv(boundary_path,
               ["atom_number", "critical_depth_uk", "temperature_nk"],
               [(boundary.atom_numbers[k],
                 boundary.critical_depth_k[k] * 1e6,
                 boundary.temperatures[k] * 1e9)
                for k in range(len(boundary.atom_numbers))])
    phase_path = out / "dimple_phase.csv"
    _write_csv(phase_path,
               ["atom_number", "depth_uk", "label_true", "label_classified"],
               [(trace.reservoir_atoms[k], trace.depth_k[k] * 1e6,
                 truth[k], labels[k]) for k in range(len(trace.time_s))])
    _manifest(out / "dimple_manifest.json", "dimple",
              {"pulses_per_cycle": dimple.pulses_per_cycle,
               "cycles": dimple.cycles, "seed": config.seed},
              dataclasses.replace(config, dimple=dimple),
              [trace_path, boundary_path, phase_path])
    agree = float(np.mean(labels == truth))
    bec_cycles = trace.cycles_with_bec()
    last = int(bec_cycles.max()) if len(bec_cycles) else -1
    print(f"BEC observed in {len(bec_cycles)} of {dimple.cycles} cycles "
          f"(last: {last}); classifier agreement {agree:.3f}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# Entry point
# ---------------------------------------------------------------------------

def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="path to a JSON configuration file")
    parser.add_argument("--seed", type=int, help="override the global seed")
    parser.add_argument("--out", help="output directory")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="becbench",
        description="Synthetic benchmark-probed condensation campaigns: "
                    "simulation, imaging, fitting and analysis.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="write synthetic angle/photon images")
    _add_common(p)
    p.add_argument("--n", type=float, default=3e6, help="atom number")
    p.add_argument("--t-nk", type=float, default=1000.0,
                   help="temperature in nK")
    p.add_argument("--power-mw", type=float, default=1100.0,
                   help="trap power the cloud sits in")
    p.add_argument("--csv", action="store_true",
                   help="also export the images as CSV")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("fit", help="fit a stored image or radial profile")
    _add_common(p)
    p.add_argument("input", help="FGRID image or radial-profile CSV")
    p.add_argument("--power-mw", type=float, default=1100.0,
                   help="trap power the image was taken at")
    p.add_argument("--inversion", choices=("signed", "clamped"),
                   default="signed",
                   help="photon-to-angle inversion used for photon images")
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("campaign", help="simulate a full campaign table")
    _add_common(p)
    p.add_argument("--runs", type=int, help="override the number of runs")
    p.set_defaults(func=cmd_campaign)

    p = sub.add_parser("nrf", help="noise reduction factor per setpoint")
    _add_common(p)
    p.add_argument("--records", help="existing records.csv (else simulate)")
    p.set_defaults(func=cmd_nrf)

    p = sub.add_parser("curve", help="binned critical curve and pooled point")
    _add_common(p)
    p.add_argument("--records", help="existing records.csv (else simulate)")
    p.add_argument("--bins", type=int, default=21)
    p.set_defaults(func=cmd_curve)

    p = sub.add_parser("shotnoise",
                       help="fitted-fraction bias versus photon number")
    _add_common(p)
    p.add_argument("--fractions", default="0.23,0.35,0.5")
    p.add_argument("--photons", default="100,316,1000,10000")
    p.add_argument("--samples", type=int, default=200)
    p.add_argument("--n", type=float, default=1e6)
    p.add_argument("--power-mw", type=float, default=750.0)
    p.set_defaults(func=cmd_shotnoise)

    p = sub.add_parser("dimple", help="dimple cycling trace and phase diagram")
    _add_common(p)
    p.add_argument("--pulses", type=int, help="probe pulses per cycle")
    p.add_argument("--cycles", type=int, help="number of dimple cycles")
    p.set_defaults(func=cmd_dimple)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, DegenerateDataError) as exc:
        print(f"becbench {args.command}: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except FileNotFoundError as exc:
        print(f"becbench {args.command}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except Exception as exc:  # noqa: BLE001 - report and signal failure
        print(f"becbench {args.command}: {type(exc).__name__}: {exc}",
              file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
