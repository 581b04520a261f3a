import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from timelens import jobs
from timelens.fileio import load_design, read_envelope, sha256_file
from timelens.jobs import JobSpec, ValidationError


def small_spec(**over):
    d = {
        "name": "small",
        "seed": 5,
        "grid": {"num_samples": 1024},
        "cascade": {"num_stages": 3},
        "channels": [{"modulation": {"format": "QPSK", "baud_rate": 10e9, "num_symbols": 64}}],
        "optimizer": {"max_iterations": 200},
        "evaluation": {"impairments": {"stage_index": 3, "awgn_snr_db": 20.0},
                       "baseline_trials": 5},
        "output": {"figures": False},
    }
    d.update(over)
    return JobSpec.from_dict(d)


def multi_spec(**over):
    chans = [{"offset_hz": o, "modulation": {"format": "QPSK", "baud_rate": 10e9,
                                             "num_symbols": 64}} for o in (-25e9, 25e9)]
    return small_spec(channels=chans, grid={"num_samples": 2048, "sample_rate": 160e9},
                      cascade={"num_stages": 5}, **over)


class TestJobSpec:
    def test_json_round_trip_is_bit_identical(self):
        spec = small_spec()
        text = spec.to_json()
        assert JobSpec.from_json(text).to_json() == text
        assert JobSpec.from_json(text) == spec

    @given(st.integers(0, 2**64 - 1), st.integers(1, 12), st.sampled_from(["OOK", "QPSK"]),
           st.floats(0.0, 1.0), st.sampled_from(["ascending", "descending", "alternating"]))
    def test_round_trip_property(self, seed, stages, fmt, rolloff, order):
        spec = small_spec(seed=seed, cascade={"num_stages": stages},
                          channels=[{"modulation": {"format": fmt, "baud_rate": 10e9,
                                                    "rrc_rolloff": rolloff, "num_symbols": 64}}],
                          optimizer={"sweep_order": order})
        again = JobSpec.from_json(spec.to_json())
        assert again == spec
        assert again.spec_hash == spec.spec_hash

    def test_derived_grid(self):
        g = small_spec().resolve_grid()
        assert g.num_samples == 1024
        assert g.sample_rate == pytest.approx(1024 * 10e9 / 64)

    def test_derived_data_seed_depends_on_master_seed(self):
        a = small_spec(seed=1).modulation_specs()[0].data_seed
        b = small_spec(seed=2).modulation_specs()[0].data_seed
        assert a != b
        assert a == small_spec(seed=1).modulation_specs()[0].data_seed

    @pytest.mark.parametrize("over", [
        {"grid": {"num_samples": 1000}},
        {"grid": {"num_samples": 1024, "sample_rate": 200e9}},
        {"cascade": {"num_stages": 0}},
        {"threads": 0},
        {"seed": -1},
        {"channels": []},
        {"channels": [{"offset_hz": 76e9, "modulation": {"baud_rate": 10e9, "num_symbols": 64}}]},
        {"channels": [{"modulation": {"format": "PAM4", "baud_rate": 10e9}}]},
        {"constraints": {"dac_bits": 0}},
        {"optimizer": {"sweep_order": "random"}},
        {"evaluation": {"impairments": {"stage_index": -2}}},
        {"evaluation": {"dsp": {"offset_power": 3, "bogus": 1}}},
        {"cascade": {"num_stages": 2, "filter": {"kind": "tabulated"}}},
        {"unknown_key": 1},
        {"schema": "TLF-schema-0"},
    ])
    def test_validation_errors(self, over):
        with pytest.raises(ValidationError):
            small_spec(**over)

    def test_off_bin_channel_rejected(self):
        chans = [{"offset_hz": o, "modulation": {"baud_rate": 10e9, "num_symbols": 64}}
                 for o in (-25.01e9, 25e9)]
        with pytest.raises(ValidationError, match="frequency bin"):
            small_spec(channels=chans, grid={"num_samples": 2048, "sample_rate": 160e9})

    def test_overlapping_channels_rejected(self):
        chans = [{"offset_hz": o, "modulation": {"baud_rate": 10e9, "num_symbols": 64}}
                 for o in (0.0, 5e9)]
        with pytest.raises(ValidationError):
            small_spec(channels=chans, grid={"num_samples": 2048, "sample_rate": 160e9})

    def test_output_dir_env(self, monkeypatch, tmp_path):
        spec = small_spec()
        monkeypatch.setenv("TLF_OUT", str(tmp_path))
        assert spec.output_dir() == tmp_path / "small"
        assert spec.output_dir("x") == jobs.Path("x")
        monkeypatch.delenv("TLF_OUT")
        assert spec.output_dir() == jobs.Path("runs") / "small"


class TestPresets:
    def test_names(self):
        assert jobs.preset_names() == ["ook20g_3stage", "qpsk15g_8stage", "qpsk15g_8stage_hw",
                                       "superchannel_3x15g"]

    @pytest.mark.parametrize("name", ["ook20g_3stage", "qpsk15g_8stage", "qpsk15g_8stage_hw",
                                      "superchannel_3x15g"])
    def test_presets_are_canonical(self, name):
        spec = jobs.load_preset(name)
        from importlib import resources
        text = resources.files("timelens").joinpath("presets", f"{name}.json").read_text()
        assert spec.to_json() == text

    def test_preset_shapes(self):
        ook = jobs.load_preset("ook20g_3stage")
        assert ook.cascade.num_stages == 3
        assert ook.channels[0].modulation.format == "OOK"
        assert ook.channels[0].modulation.baud_rate == 20e9
        q = jobs.load_preset("qpsk15g_8stage")
        assert q.cascade.num_stages == 8 and q.channels[0].modulation.rrc_rolloff == 0.01
        hw = jobs.load_preset("qpsk15g_8stage_hw")
        c = hw.constraint_set()
        assert (c.dac_bits, c.drive_bandwidth_hz) == (6, 23e9)
        assert c.max_swing_radians == pytest.approx(0.8 * np.pi)
        sc = jobs.load_preset("superchannel_3x15g")
        assert [ch.offset_hz for ch in sc.channels] == [-33e9, 0.0, 33e9]
        assert sc.cascade.num_stages == 8

    def test_unknown(self):
        with pytest.raises(ValidationError):
            jobs.load_preset("nope")


class TestRuns:
    def test_design_run_outputs(self, tmp_path):
        spec = small_spec(output={"figures": True})
        m = jobs.run_design(spec, tmp_path)
        assert m.exit_code == jobs.EXIT_OK and m.converged
        listed = set(m.files)
        on_disk = {p.relative_to(tmp_path).as_posix() for p in tmp_path.rglob("*")
                   if p.is_file() and p.name != "manifest.json"}
        assert listed == on_disk
        for rel, digest in m.files.items():
            assert sha256_file(tmp_path / rel) == digest
        for rel in ("job.json", "design.json", "report.json", "metrics.json", "masks/stage_01.tlf",
                    "fields/output.tlf", "data/stage_temporal.csv", "data/stage_spectra.csv",
                    "data/constellation_ch1.csv", "data/symbols_ch1.csv", "data/masks.csv",
                    "figures/stage_evolution.png", "figures/constellation_ch1.png"):
            assert rel in listed
        manifest = json.loads((tmp_path / "manifest.json").read_text())
        assert manifest["spec_hash"] == spec.spec_hash
        assert set(manifest["timings_s"]) == {"synthesis", "optimization", "evaluation", "output"}
        metrics = json.loads((tmp_path / "metrics.json").read_text())
        assert metrics["min_correlation"] > 0.9
        assert metrics["energy_error"] < 1e-10
        assert JobSpec.load(tmp_path / "job.json") == spec
        header = (tmp_path / "data" / "stage_temporal.csv").read_text().splitlines()[0]
        assert header == "stage,time_s,amplitude,phase_rad"

    def test_deterministic(self, tmp_path):
        a = jobs.run_design(small_spec(), tmp_path / "a")
        b = jobs.run_design(small_spec(), tmp_path / "b")
        assert a.files == b.files

    def test_threads_do_not_change_results(self, tmp_path):
        a = jobs.run_design(multi_spec(), tmp_path / "a")
        b = jobs.run_design(multi_spec(threads=4), tmp_path / "b")
        assert {k for k in a.files if a.files[k] != b.files[k]} == {"job.json"}

    def test_eval_reproduces_metrics(self, tmp_path):
        spec = small_spec()
        jobs.run_design(spec, tmp_path)
        ev = jobs.run_eval(tmp_path / "design.json", spec, out_dir=tmp_path / "ev")
        assert (tmp_path / "metrics.json").read_bytes() == (tmp_path / "ev" / "metrics.json").read_bytes()
        ev2 = jobs.run_eval(tmp_path / "design.json", spec, tmp_path / "fields" / "input.tlf",
                            out_dir=tmp_path / "ev2")
        assert ev.metrics == ev2.metrics

    def test_eval_noise_lowers_correlation(self, tmp_path):
        spec = small_spec(evaluation={"baseline_trials": 5})
        jobs.run_design(spec, tmp_path)
        clean = json.loads((tmp_path / "metrics.json").read_text())["min_correlation"]
        for seed in range(5):
            noisy = spec.replace(evaluation=jobs.EvaluationConfig(
                impairments={"awgn_snr_db": 20.0}, dsp={"frequency_offset": "none"},
                noise_seed=seed, baseline_trials=5))
            m = jobs.run_eval(tmp_path / "design.json", noisy, out_dir=tmp_path / f"n{seed}")
            assert m.metrics["min_impaired_correlation"] < clean

    def test_short_record_receiver_recovers(self, tmp_path):
        # 64 symbols: clock tones of the fourth-power spectrum rival the carrier line
        m = jobs.run_design(small_spec(), tmp_path)
        metrics = json.loads((tmp_path / "metrics.json").read_text())
        assert metrics["min_correlation"] - m.metrics["min_impaired_correlation"] < 0.01

    def test_default_dsp_config(self):
        cfg = small_spec().dsp_config(0)
        assert (cfg.offset_power, cfg.cpe, cfg.symbol_rate_hz) == (4, True, 10e9)

    def test_eval_grid_mismatch(self, tmp_path):
        jobs.run_design(small_spec(), tmp_path)
        other = small_spec(grid={"num_samples": 2048})
        with pytest.raises(ValidationError):
            jobs.run_eval(tmp_path / "design.json", other, out_dir=tmp_path / "ev")

    def test_non_converged_exit_code(self, tmp_path):
        m = jobs.run_design(small_spec(optimizer={"max_iterations": 2}), tmp_path)
        assert m.exit_code == jobs.EXIT_NOT_CONVERGED
        assert not m.converged
        assert (tmp_path / "design.json").exists()

    def test_multichannel_run(self, tmp_path):
        m = jobs.run_design(multi_spec(), tmp_path)
        metrics = json.loads((tmp_path / "metrics.json").read_text())
        xc = metrics["cross_correlation"]
        assert len(xc["matrix"]) == 2
        assert xc["threshold"] == pytest.approx(xc["baseline_mean"] + 3 * xc["baseline_std"])
        assert "data/xcorr_matrix.csv" in m.files
        assert len(metrics["channels"]) == 2
        design = load_design(tmp_path / "design.json")
        assert design.channel_offsets_hz == (-25e9, 25e9)
        out = read_envelope(tmp_path / "fields" / "output.tlf")
        assert abs(out.energy - 1) < 1e-10
