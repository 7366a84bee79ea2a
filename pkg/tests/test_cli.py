import json
import math

import numpy as np
import pytest

from becbench.cli import main
from becbench.config import (
    ConfigError,
    GlobalConfig,
    config_from_dict,
    load_config,
)
from becbench.imaging import read_fgrid


SMALL_GRID = {
    "atom_min": 5e5, "atom_max": 3e6, "atom_points": 24,
    "temp_min": 1.5e-7, "temp_max": 6e-7, "temp_points": 24,
}


def write_config(tmp_path, name="config.json", **overrides):
    data = {"fit_grid": SMALL_GRID}
    data.update(overrides)
    path = tmp_path / name
    path.write_text(json.dumps(data))
    return str(path)


class TestConfig:
    def test_defaults_valid(self):
        cfg = GlobalConfig()
        assert cfg.trap.frequency_x_hz == 85.0
        assert cfg.campaign.runs == 84

    def test_unknown_top_level_key(self):
        with pytest.raises(ConfigError, match="unknown top-level"):
            config_from_dict({"nonsense": 1})

    def test_unknown_section_key(self):
        with pytest.raises(ConfigError, match="trap"):
            config_from_dict({"trap": {"frequency_q_hz": 1.0}})

    def test_bad_schema_version(self):
        with pytest.raises(ConfigError, match="schema_version"):
            config_from_dict({"schema_version": 99})

    def test_invalid_value_reported_with_section(self):
        with pytest.raises(ConfigError, match="probe"):
            config_from_dict({"probe": {"photon_flux": -5.0}})

    def test_trap_power_scaling(self):
        cfg = GlobalConfig()
        full = cfg.trap.geometry_at(1100.0)
        half = cfg.trap.geometry_at(275.0)
        assert half.omega_bar == pytest.approx(full.omega_bar / 2.0,
                                               rel=1e-12)

    def test_eta_reference_validated(self):
        with pytest.raises(ConfigError):
            config_from_dict({"eta_reference": "weird"})

    def test_load_config_bad_json(self, tmp_path):
        path = tmp_path / "broken.json"
        path.write_text("{not json")
        with pytest.raises(ConfigError):
            load_config(path)

    def test_round_trip_through_dict(self):
        cfg = GlobalConfig()
        again = config_from_dict(cfg.to_dict())
        assert again == cfg


class TestSynthCommand:
    def test_writes_images_and_manifest(self, tmp_path):
        out = tmp_path / "o"
        rc = main(["synth", "--out", str(out), "--seed", "7",
                   "--n", "1e6", "--t-nk", "300", "--power-mw", "750",
                   "--csv"])
        assert rc == 0
        angle = read_fgrid(out / "angle.fgrid")
        photons = read_fgrid(out / "photons.fgrid")
        assert angle.kind == "angle" and photons.kind == "photons"
        manifest = json.loads((out / "synth_manifest.json").read_text())
        assert manifest["command"] == "synth"
        assert manifest["config"]["seed"] == 7
        assert (out / "angle.csv").exists()

    def test_seeded_determinism(self, tmp_path):
        out_a, out_b = tmp_path / "a", tmp_path / "b"
        for out in (out_a, out_b):
            assert main(["synth", "--out", str(out), "--seed", "7"]) == 0
        assert ((out_a / "photons.fgrid").read_bytes()
                == (out_b / "photons.fgrid").read_bytes())
        assert ((out_a / "synth_manifest.json").read_text()
                == (out_b / "synth_manifest.json").read_text())

    def test_peak_angle_consistency(self, tmp_path, capsys):
        # synthesized image peak should match the analytic angle map
        from becbench.imaging import ProbeParams, column_density, \
            faraday_angle_map
        from becbench.physics import CloudState, semi_ideal_profile

        out = tmp_path / "o"
        cfg = GlobalConfig()
        rc = main(["synth", "--out", str(out), "--seed", "1",
                   "--n", "2e6", "--t-nk", "900"])
        assert rc == 0
        angle = read_fgrid(out / "angle.fgrid")
        trap = cfg.trap.geometry_at(1100.0)
        prof = semi_ideal_profile(CloudState(2e6, 900e-9, trap))
        expected = faraday_angle_map(
            column_density(prof, shape=(65, 65)), cfg.probe).values.max()
        assert angle.values.max() == pytest.approx(expected, rel=0.01)


class TestFitCommand:
    def test_round_trip_on_angle_image(self, tmp_path):
        out = tmp_path / "o"
        cfg_path = write_config(tmp_path)
        assert main(["synth", "--out", str(out), "--seed", "3",
                     "--n", "1e6", "--t-nk", "250", "--power-mw", "750"]) == 0
        rc = main(["fit", str(out / "angle.fgrid"), "--config", cfg_path,
                   "--out", str(out), "--power-mw", "750"])
        assert rc == 0
        result = json.loads((out / "fit_result.json").read_text())
        assert result["best_N"] == pytest.approx(1e6, rel=0.02)
        assert result["best_T"] == pytest.approx(250e-9, rel=0.02)

    def test_photon_image_low_signal_flag(self, tmp_path):
        out = tmp_path / "o"
        cfg_path = write_config(tmp_path)
        assert main(["synth", "--out", str(out), "--seed", "3",
                     "--n", "1e6", "--t-nk", "900"]) == 0
        # an all-zero angle image detects to pure leakage
        from becbench.imaging import AngleImage, write_fgrid
        import numpy as np

        zero = AngleImage(np.zeros((65, 65)))
        write_fgrid(out / "zero.fgrid", zero)
        rc = main(["fit", str(out / "zero.fgrid"), "--config", cfg_path,
                   "--out", str(out)])
        assert rc == 0
        result = json.loads((out / "fit_result.json").read_text())
        assert result["fraction"] == 0.0

    def test_profile_csv_input(self, tmp_path):
        out = tmp_path / "o"
        out.mkdir()
        cfg_path = write_config(tmp_path)
        from becbench.imaging import ProbeParams, azimuthal_average, \
            column_density, faraday_angle_map
        from becbench.physics import CloudState, TrapGeometry, \
            semi_ideal_profile

        cfg = GlobalConfig()
        trap = cfg.trap.geometry_at(750.0)
        prof = semi_ideal_profile(CloudState(1e6, 2.5e-7, trap))
        img = faraday_angle_map(column_density(prof, shape=(65, 65)),
                                cfg.probe)
        rad = azimuthal_average(img)
        lines = ["bin_center_um,mean,std,count"]
        for k in range(len(rad.bin_centers_um)):
            lines.append(f"{rad.bin_centers_um[k]},{rad.mean[k]},"
                         f"{rad.std[k]},{rad.count[k]}")
        csv_path = out / "profile.csv"
        csv_path.write_text("\n".join(lines) + "\n")
        rc = main(["fit", str(csv_path), "--config", cfg_path,
                   "--out", str(out), "--power-mw", "750"])
        assert rc == 0
        result = json.loads((out / "fit_result.json").read_text())
        assert result["best_N"] == pytest.approx(1e6, rel=0.1)

    def test_missing_file_exit_code(self, tmp_path):
        assert main(["fit", str(tmp_path / "nope.fgrid"),
                     "--out", str(tmp_path)]) == 1


class TestPipelineComposition:
    def test_campaign_nrf_curve_compose_via_files(self, tmp_path):
        out = tmp_path / "o"
        rc = main(["campaign", "--out", str(out), "--seed", "21",
                   "--runs", "84"])
        assert rc == 0
        rc = main(["nrf", "--records", str(out / "records.csv"),
                   "--out", str(out)])
        assert rc == 0
        rc = main(["curve", "--records", str(out / "records.csv"),
                   "--out", str(out), "--seed", "21"])
        assert rc == 0
        nrf_rows = (out / "nrf.csv").read_text().strip().split("\n")
        assert len(nrf_rows) == 10  # header + 9 setpoints
        curve = json.loads((out / "curve.json").read_text())
        assert len(curve["coefficients"]) == 3
        assert "delta_pooled_mw" in curve["bias_correction"]
        assert curve["model_comparison"]["chi2_red_linear"] > 0

    def test_campaign_determinism(self, tmp_path):
        a, b = tmp_path / "a", tmp_path / "b"
        for out in (a, b):
            assert main(["campaign", "--out", str(out), "--seed", "5",
                         "--runs", "10"]) == 0
        assert ((a / "records.csv").read_bytes()
                == (b / "records.csv").read_bytes())

    def test_config_error_exit_code(self, tmp_path):
        bad = tmp_path / "bad.json"
        bad.write_text(json.dumps({"unknown_section": {}}))
        assert main(["campaign", "--config", str(bad),
                     "--out", str(tmp_path)]) == 2


class TestShotnoiseCommand:
    def test_small_study_runs(self, tmp_path):
        out = tmp_path / "o"
        cfg_path = write_config(tmp_path)
        rc = main(["shotnoise", "--config", cfg_path, "--out", str(out),
                   "--seed", "9", "--fractions", "0.3",
                   "--photons", "300,3000", "--samples", "3"])
        assert rc == 0
        rows = (out / "shotnoise.csv").read_text().strip().split("\n")
        assert rows[0].startswith("fraction_true")
        assert len(rows) == 3


class TestDimpleCommand:
    def test_outputs_and_summary(self, tmp_path, capsys):
        out = tmp_path / "o"
        rc = main(["dimple", "--out", str(out), "--seed", "11",
                   "--cycles", "8"])
        assert rc == 0
        trace = (out / "dimple_trace.csv").read_text().strip().split("\n")
        assert len(trace) == 1 + 8 * 40
        boundary = (out / "dimple_boundary.csv").read_text().strip()
        assert boundary.count("\n") == 8
        phase = (out / "dimple_phase.csv").read_text()
        assert "BEC" in phase and "thermal" in phase

    def test_determinism(self, tmp_path):
        a, b = tmp_path / "a", tmp_path / "b"
        for out in (a, b):
            assert main(["dimple", "--out", str(out), "--seed", "11",
                         "--cycles", "4"]) == 0
        assert ((a / "dimple_trace.csv").read_bytes()
                == (b / "dimple_trace.csv").read_bytes())
