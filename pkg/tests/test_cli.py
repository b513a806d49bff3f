import csv
import json
import os
import subprocess
import sys

import pytest

from zngsim.cli import EXIT_OK, EXIT_USAGE, main
from zngsim.config import PLATFORMS
from zngsim.trace import load_trace, write_trace

from conftest import make_trace


def _json(path, obj):
    path.write_text(json.dumps(obj))
    return str(path)


@pytest.fixture
def seq_spec(tmp_path):
    return _json(tmp_path / "seq.json", {"generator": "sequential", "length": 1000, "footprint": 65536})


def test_trace_gen_header_count_and_determinism(tmp_path, seq_spec, capsys):
    a, b = tmp_path / "a.bin", tmp_path / "b.bin"
    assert main(["trace-gen", seq_spec, str(a)]) == EXIT_OK
    assert main(["trace-gen", seq_spec, str(b)]) == EXIT_OK
    assert a.read_bytes() == b.read_bytes()
    assert len(load_trace(a)) == 1000
    assert "wrote 1000 requests" in capsys.readouterr().out


def test_trace_gen_reports_read_ratio(tmp_path, capsys):
    spec = _json(tmp_path / "r.json", {"generator": "uniform-random", "read_ratio": 0.98, "length": 100000})
    assert main(["trace-gen", spec, str(tmp_path / "r.bin")]) == EXIT_OK
    ratio = float(capsys.readouterr().out.rsplit("read ratio ", 1)[1].rstrip(")\n"))
    assert 0.97 <= ratio <= 0.99


def test_trace_gen_bad_spec(tmp_path):
    spec = _json(tmp_path / "bad.json", {"generator": "fractal"})
    assert main(["trace-gen", spec, str(tmp_path / "x.bin")]) == EXIT_USAGE


def test_run_empty_trace(tmp_path, capsys):
    tr = tmp_path / "empty.bin"
    write_trace(make_trace([]), tr)
    assert main(["run", "--trace", str(tr), "--platforms", "zng", "--out", str(tmp_path / "o")]) == EXIT_OK
    rep = json.loads((tmp_path / "o" / "zng.json").read_text())
    assert rep["completion_time"] == 0 and rep["requests"] == 0


def test_run_all_platforms_and_rerun(tmp_path, seq_spec, capsys):
    man = _json(tmp_path / "m.json", {"spec": "seq.json", "out": "out", "platforms": list(PLATFORMS)})
    assert main(["run", "--manifest", man]) == EXIT_OK
    out = tmp_path / "out"
    reports = sorted(p.name for p in out.glob("*.json"))
    assert reports == sorted(f"{p}.json" for p in PLATFORMS)
    table = capsys.readouterr().out
    assert all(p in table for p in PLATFORMS)
    with open(out / "summary.csv") as f:
        rows = {r["platform"]: r for r in csv.DictReader(f)}
    assert float(rows["zng"]["normalized_time"]) == 1.0
    first = {p.name: p.read_bytes() for p in out.iterdir()}
    assert main(["run", "--manifest", man]) == EXIT_OK
    assert {p.name: p.read_bytes() for p in out.iterdir()} == first


def test_outputs_stay_in_out_dir(tmp_path, seq_spec):
    before = set(os.listdir(tmp_path))
    main(["run", "--spec", seq_spec, "--platforms", "zng-base", "--out", str(tmp_path / "o")])
    assert set(os.listdir(tmp_path)) - before == {"o"}


def test_sweep_one_point(tmp_path, seq_spec):
    out = tmp_path / "s"
    assert main(["sweep", "--spec", seq_spec, "--set", "high_threshold=0.3", "--out", str(out)]) == EXIT_OK
    with open(out / "sweep.csv") as f:
        rows = list(csv.DictReader(f))
    assert len(rows) == 1 and rows[0]["high_threshold"] == "0.3"


def test_sweep_grid(tmp_path, seq_spec, capsys):
    grid = _json(tmp_path / "g.json", {"topology": ["baseline", "nif"], "registers": [2, 4]})
    assert main(["sweep", "--spec", seq_spec, "--grid", grid, "--out", str(tmp_path / "s")]) == EXIT_OK
    with open(tmp_path / "s" / "sweep.csv") as f:
        assert len(list(csv.DictReader(f))) == 4
    assert "best" in capsys.readouterr().out


def test_sweep_unknown_knob(tmp_path, seq_spec, capsys):
    assert main(["sweep", "--spec", seq_spec, "--set", "voltage=1,2", "--out", str(tmp_path)]) == EXIT_USAGE
    err = capsys.readouterr().err
    assert "voltage" in err and "high_threshold" in err and "topology" in err


def test_validate(tmp_path, capsys):
    good = _json(tmp_path / "good.json", {"platform": "zng", "geometry": {"channels": 8}})
    bad = _json(tmp_path / "bad.json", {"platform": "zng", "geometry": {"channels": "many"}})
    assert main(["validate", good]) == EXIT_OK
    assert main(["validate", bad]) == EXIT_USAGE


def test_dump_tables(tmp_path, seq_spec):
    out = tmp_path / "d"
    assert main(["dump-tables", "--spec", seq_spec, "--out", str(out)]) == EXIT_OK
    tables = json.loads((out / "tables.json").read_text())
    assert tables["dbmt"] and tables["lbmt"]["groups"]


def test_missing_trace_is_usage_error(tmp_path, capsys):
    assert main(["run", "--trace", str(tmp_path / "nope.bin"), "--out", str(tmp_path)]) == EXIT_USAGE


def test_bad_thread_count(tmp_path, seq_spec, monkeypatch):
    monkeypatch.setenv("ZNG_SIM_THREADS", "lots")
    assert main(["run", "--spec", seq_spec, "--platforms", "zng,zng-base", "--out", str(tmp_path)]) == EXIT_USAGE


def test_unknown_platform(tmp_path, seq_spec):
    assert main(["run", "--spec", seq_spec, "--platforms", "tpu", "--out", str(tmp_path)]) == EXIT_USAGE


def test_console_entry_point(tmp_path, seq_spec):
    proc = subprocess.run([sys.executable, "-m", "zngsim.cli", "validate", str(tmp_path / "absent.json")],
                          capture_output=True, text=True)
    assert proc.returncode == EXIT_USAGE and "zngsim: error" in proc.stderr
