import json
import subprocess
import sys

import numpy as np
import pytest

from timelens import __version__, jobs
from timelens.cli import main
from timelens.envelope import ComplexEnvelope, SignalGrid
from timelens.fileio import write_envelope

from test_jobs import small_spec


@pytest.fixture
def spec_file(tmp_path):
    path = tmp_path / "job.json"
    path.write_text(small_spec().to_json())
    return path


def test_version(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["--version"])
    assert exc.value.code == 0
    assert __version__ in capsys.readouterr().out


def test_design_writes_outputs(spec_file, tmp_path, capsys):
    out = tmp_path / "run"
    assert main(["design", str(spec_file), "--out", str(out)]) == jobs.EXIT_OK
    assert (out / "manifest.json").exists()
    assert "min_correlation" in capsys.readouterr().out


def test_design_threads_and_figures(spec_file, tmp_path):
    spec = small_spec(output={"figures": True})
    spec_file.write_text(spec.to_json())
    out = tmp_path / "run"
    assert main(["design", str(spec_file), "--out", str(out), "--threads", "2", "--no-figures"]) == 0
    assert not (out / "figures").exists()
    assert json.loads((out / "job.json").read_text())["threads"] == 2


def test_design_uses_tlf_out(spec_file, tmp_path, monkeypatch):
    monkeypatch.setenv("TLF_OUT", str(tmp_path / "env"))
    assert main(["design", str(spec_file)]) == 0
    assert (tmp_path / "env" / "small" / "manifest.json").exists()


def test_not_converged_exit_code(tmp_path, capsys):
    path = tmp_path / "job.json"
    path.write_text(small_spec(optimizer={"max_iterations": 2}).to_json())
    assert main(["design", str(path), "--out", str(tmp_path / "r")]) == jobs.EXIT_NOT_CONVERGED
    assert "did not converge" in capsys.readouterr().err


@pytest.mark.parametrize("payload", [
    {"name": "x", "cascade": {"num_stages": 0}},
    {"name": "x", "bogus": 1},
    {"name": "x", "channels": [{"modulation": {"format": "16QAM"}}]},
])
def test_invalid_spec_exit_code(tmp_path, payload, capsys):
    path = tmp_path / "bad.json"
    path.write_text(json.dumps(payload))
    assert main(["design", str(path)]) == jobs.EXIT_VALIDATION
    assert "invalid job" in capsys.readouterr().err


def test_missing_spec_is_io_error(tmp_path):
    assert main(["design", str(tmp_path / "missing.json")]) == jobs.EXIT_IO


def test_malformed_json_exit_code(tmp_path):
    path = tmp_path / "bad.json"
    path.write_text("{not json")
    assert main(["design", str(path)]) == jobs.EXIT_VALIDATION


def test_eval_round_trip(spec_file, tmp_path):
    run = tmp_path / "run"
    assert main(["design", str(spec_file), "--out", str(run)]) == 0
    ev = tmp_path / "ev"
    assert main(["eval", str(run / "design.json"), str(spec_file), "--out", str(ev)]) == 0
    assert (run / "metrics.json").read_bytes() == (ev / "metrics.json").read_bytes()


def test_eval_bad_waveform_is_io_error(spec_file, tmp_path):
    run = tmp_path / "run"
    main(["design", str(spec_file), "--out", str(run)])
    bad = tmp_path / "bad.tlf"
    bad.write_bytes(b"not a waveform")
    code = main(["eval", str(run / "design.json"), str(spec_file), "--waveform", str(bad),
                 "--out", str(tmp_path / "ev")])
    assert code == jobs.EXIT_IO


def test_eval_wrong_length_waveform(spec_file, tmp_path):
    run = tmp_path / "run"
    main(["design", str(spec_file), "--out", str(run)])
    wf = tmp_path / "short.tlf"
    write_envelope(wf, ComplexEnvelope(SignalGrid(512, 80e9), np.ones(512, complex)))
    code = main(["eval", str(run / "design.json"), str(spec_file), "--waveform", str(wf),
                 "--out", str(tmp_path / "ev")])
    assert code == jobs.EXIT_IO


def test_presets_list(capsys):
    assert main(["presets", "list"]) == 0
    assert capsys.readouterr().out.split() == jobs.preset_names()


def test_presets_show_is_loadable(capsys):
    assert main(["presets", "show", "ook20g_3stage"]) == 0
    spec = jobs.JobSpec.from_json(capsys.readouterr().out)
    assert spec == jobs.load_preset("ook20g_3stage")


def test_presets_needs_name():
    assert main(["presets", "show"]) == jobs.EXIT_VALIDATION


def test_presets_unknown_name():
    assert main(["presets", "show", "nope"]) == jobs.EXIT_VALIDATION


def test_selftest(capsys):
    assert main(["selftest"]) == 0
    lines = capsys.readouterr().out.splitlines()
    assert lines and all(line.startswith("PASS") for line in lines)


def test_module_entry_point():
    res = subprocess.run([sys.executable, "-m", "timelens", "presets", "list"],
                         capture_output=True, text=True, check=False)
    assert res.returncode == 0
    assert "qpsk15g_8stage" in res.stdout
