import json
import math
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest

from eltrap.cavity import filter_budget
from eltrap.cli import main
from eltrap.config import load_config, parse_config, parse_quantity
from eltrap.errors import ConfigError
from eltrap.potential import PotentialModel, synthesize_samples, write_potential_samples
from eltrap.sequence import Trace
from eltrap.traceio import read_trace, write_trace

CONFIGS = Path(__file__).resolve().parents[1] / "configs"

SMALL = """\
[trap]
drive_frequency = 3.105 GHz
reference_voltage = 92 V
q_reference = 0.56
secular_frequency = 619 MHz

[cavity]
f0 = 619 MHz
q_internal = 1300
q_external = 20000
kappa = 476 kHz
temperature = 300 K

[coupling]
g = 17.34 Hz

[chain]
stage = node placement, 30 dB
stage = hybrid interference, 16 dB
stage = low-pass pair, 80 dB
gain = 62 dB

[readout]
rbw = 15.87 mHz
degradation = 100 %

[sequence]
segment = 0 s, 0.4 s, 100 %
loading = 0.02 s, 0.01 s, 1260, 1e5 K
sample_interval = 2 ms

[analysis]
fit_window = 0.05 s, 0.4 s

[run]
seed = 5
"""

SWEEP = SMALL.replace(
    "segment = 0 s, 0.4 s, 100 %",
    "segment = 0 s, 0.1 s, 98 %\nsegment = 0.1 s, 2.1 s, 98 % -> 102 %",
).replace("fit_window = 0.05 s, 0.4 s", "").replace("[analysis]\n", "")


@pytest.fixture
def small_cfg(tmp_path):
    p = tmp_path / "small.cfg"
    p.write_text(SMALL)
    return p


def test_parse_quantity_units():
    assert parse_quantity("619 MHz", "frequency") == pytest.approx(619e6)
    assert parse_quantity("0.4561 mHz", "frequency") == pytest.approx(4.561e-4)
    assert parse_quantity("10 ms", "time") == pytest.approx(0.01)
    assert parse_quantity("87 %", "percent_or_number") == pytest.approx(0.87)
    assert parse_quantity("1e5 K", "temperature") == 1e5
    with pytest.raises(ConfigError):
        parse_quantity("619 V", "frequency")
    with pytest.raises(ConfigError):
        parse_quantity("fast", "time")


def test_parse_errors_carry_line_numbers():
    with pytest.raises(ConfigError) as info:
        parse_config("[trap]\ndrive_frequency = 3 GHz\nbogus = 1\n", "x.cfg")
    assert "x.cfg:3:" in str(info.value)
    with pytest.raises(ConfigError) as info:
        parse_config("[trap]\ndrive_frequency = 3 GHz\ndrive_frequency = 4 GHz\n", "x.cfg")
    assert ":3:" in str(info.value)
    with pytest.raises(ConfigError) as info:
        parse_config("\n[nowhere]\n", "x.cfg")
    assert ":2:" in str(info.value)


def test_bad_unit_in_file_reports_line(tmp_path):
    p = tmp_path / "bad.cfg"
    p.write_text(SMALL.replace("kappa = 476 kHz", "kappa = 476 V"))
    with pytest.raises(ConfigError) as info:
        load_config(p)
    assert f"bad.cfg:{SMALL.splitlines().index('kappa = 476 kHz') + 1}:" in str(info.value)


def test_load_config_and_seed_override(small_cfg):
    cfg = load_config(small_cfg)
    assert cfg.seed == 5
    assert load_config(small_cfg, seed=9).seed == 9
    assert cfg.cavity.kappa == pytest.approx(2 * math.pi * 476e3)
    assert cfg.program.acquisition.sample_interval == pytest.approx(0.002)
    assert cfg.fit_window == (0.05, 0.4)
    assert len(cfg.digest) == 64


@pytest.mark.parametrize("name", ["sequence_i.cfg", "sequence_ii.cfg", "sequence_iii.cfg"])
def test_shipped_configs_parse(name):
    cfg = load_config(CONFIGS / name)
    assert cfg.program is not None
    assert filter_budget(cfg.chain) == 126.0


def test_trace_io_round_trip(tmp_path):
    tr = Trace("zero_span_time", np.array([0.0, 0.1, 0.2]), np.array([1e-12, 3.3e-13, 1 / 3]),
               {"seed": 4, "note": "x"})
    files = write_trace(tr, tmp_path / "t")
    for f in files:
        back = read_trace(f)
        np.testing.assert_array_equal(back.x, tr.x)
        np.testing.assert_array_equal(back.y, tr.y)
        assert back.metadata["seed"] == 4
    (tmp_path / "junk.csv").write_text("# kind = \"nope\"\n1,2\n")
    with pytest.raises(ConfigError):
        read_trace(tmp_path / "junk.csv")


@pytest.mark.parametrize("cmd", [[], ["run"], ["sweep"], ["budget"], ["fit"], ["potential"]])
def test_help_exits_zero(cmd, capsys):
    with pytest.raises(SystemExit) as info:
        main(cmd + ["--help"])
    assert info.value.code == 0
    assert "usage" in capsys.readouterr().out


def test_usage_errors_exit_one(capsys):
    with pytest.raises(SystemExit) as info:
        main(["run", "--no-such-flag", "x.cfg"])
    assert info.value.code == 1
    with pytest.raises(SystemExit) as info:
        main([])
    assert info.value.code == 1


def test_missing_config_exits_two(tmp_path, capsys):
    assert main(["run", str(tmp_path / "absent.cfg")]) == 2
    assert "not found" in capsys.readouterr().err


def test_budget(capsys):
    assert main(["budget", str(CONFIGS / "sequence_i.cfg")]) == 0
    out = capsys.readouterr().out
    assert "total filtering: 126 dB" in out
    assert "post-chain gain: 62 dB" in out


def test_run_writes_outputs_and_is_reproducible(small_cfg, tmp_path, capsys):
    out1, out2 = tmp_path / "a", tmp_path / "b"
    assert main(["run", str(small_cfg), "--out", str(out1)]) == 0
    summary = capsys.readouterr().out
    assert "tau" in summary and "snr" in summary
    assert main(["run", str(small_cfg), "--out", str(out2)]) == 0
    names = sorted(p.name for p in out1.iterdir())
    assert names == ["small.fit.json", "small.trace.csv", "small.trace.json"]
    for n in names:
        assert (out1 / n).read_bytes() == (out2 / n).read_bytes()
    fit = json.loads((out1 / "small.fit.json").read_text())["fit"]
    assert fit["time_constant"] == pytest.approx(0.05, rel=0.2)
    tr = read_trace(out1 / "small.trace.csv")
    assert tr.metadata["seed"] == 5 and tr.metadata["config_digest"] == load_config(small_cfg).digest


def test_seed_flag_changes_the_trace(small_cfg, tmp_path):
    assert main(["run", str(small_cfg), "--out", str(tmp_path / "a"), "--format", "csv"]) == 0
    assert main(["run", str(small_cfg), "--out", str(tmp_path / "b"), "--format", "csv",
                 "--seed", "6"]) == 0
    a = (tmp_path / "a" / "small.trace.csv").read_bytes()
    b = (tmp_path / "b" / "small.trace.csv").read_bytes()
    assert a != b
    assert not (tmp_path / "a" / "small.trace.json").exists()


def test_fit_subcommand(small_cfg, tmp_path, capsys):
    assert main(["run", str(small_cfg), "--out", str(tmp_path), "--format", "csv"]) == 0
    capsys.readouterr()
    report = tmp_path / "fit.json"
    assert main(["fit", str(tmp_path / "small.trace.csv"), "--window", "0.05", "0.4",
                 "--out", str(report)]) == 0
    doc = json.loads(report.read_text())
    assert doc["fit"]["time_constant"] == pytest.approx(0.05, rel=0.2)
    assert doc["seed"] == 5


def test_fit_on_noise_exits_three(tmp_path, capsys):
    x = np.linspace(0, 1, 500)
    y = np.random.default_rng(0).gamma(40, 1e-14, x.size)
    write_trace(Trace("zero_span_time", x, y), tmp_path / "noise", ("csv",))
    assert main(["fit", str(tmp_path / "noise.csv")]) == 3
    assert "[analysis]" in capsys.readouterr().err
    assert main(["fit", str(tmp_path / "noise.csv"), "--model", "gauss"]) == 3


def test_sweep_subcommand(tmp_path, capsys):
    p = tmp_path / "sw.cfg"
    p.write_text(SWEEP)
    assert main(["sweep", str(p), "--out", str(tmp_path / "o")]) == 0
    out = capsys.readouterr().out
    assert "center" in out
    doc = json.loads((tmp_path / "o" / "sw.fit.json").read_text())
    assert doc["frequency_axis"] == "commanded"
    assert abs(doc["fit"]["center"] - 619e6) < 2e6


def test_sweep_missing_resonance_warns(tmp_path, capsys):
    p = tmp_path / "off.cfg"
    p.write_text(SWEEP.replace("98 % -> 102 %", "105 % -> 110 %").replace(
        "0.1 s, 98 %", "0.1 s, 105 %"))
    code = main(["sweep", str(p), "--out", str(tmp_path / "o")])
    err = capsys.readouterr().err
    assert "warning" in err and "resonance" in err
    assert code in (0, 3)


def test_bad_program_exits_two(tmp_path, capsys):
    p = tmp_path / "gap.cfg"
    p.write_text(SMALL.replace("segment = 0 s, 0.4 s, 100 %",
                               "segment = 0 s, 0.1 s, 100 %\nsegment = 0.2 s, 0.4 s, 100 %"))
    assert main(["run", str(p)]) == 2


def test_potential_subcommand(tmp_path, capsys):
    model = PotentialModel(2 * math.pi * 619e6, c4=-1.5e-5)
    path = tmp_path / "map.csv"
    write_potential_samples(path, synthesize_samples(model, np.linspace(-50, 50, 101)))
    assert main(["potential", str(path), "--no-c6"]) == 0
    out = capsys.readouterr().out
    assert "619" in out


def test_console_script_entry_point(tmp_path):
    res = subprocess.run([sys.executable, "-m", "eltrap.cli", "budget", str(CONFIGS / "sequence_ii.cfg")],
                         capture_output=True, text=True)
    assert res.returncode == 0
    assert "total filtering: 126 dB" in res.stdout
