from __future__ import annotations

import json
import math
import re

import numpy as np
import pytest

from relay_energy.cli import main
from relay_energy.dp import SolverConfig, ValueTable, evaluate_states, solve


def run(capsys, *argv):
    code = main(list(argv))
    out = capsys.readouterr()
    return code, out.out, out.err


def test_solve_summary_and_table_roundtrip(capsys, tmp_path):
    out = tmp_path / "pol.bin"
    code, stdout, _ = run(capsys, "solve", "--slots", "2", "--rate", "1.0", "--trunc", "1e-3", "--delta", "0.02",
                          "--nsim", "800", "--seed", "42", "--out", str(out))
    assert code == 0
    m = re.fullmatch(r"K=2 R=1.0 NMESE=([0-9.]+) dB=([0-9.]+)\n", stdout)
    assert m and float(m.group(2)) == pytest.approx(10 * math.log10(float(m.group(1))), abs=1e-3)
    loaded = ValueTable.load(out)
    echo = json.loads((tmp_path / "pol.bin.config.json").read_text())
    assert echo["seed"] == 42 and echo["delta"] == 0.02 and echo["nsim"] == 800
    # the file reproduces the in-memory policy decisions exactly
    mem = solve(SolverConfig.from_dict(loaded.config.to_dict())).table
    snrs = loaded.config.links.draw(1, 1, 1, 200)
    for x, y in zip(evaluate_states(mem, 1, 1, 2.0, 2.0, snrs), evaluate_states(loaded, 1, 1, 2.0, 2.0, snrs)):
        assert np.array_equal(x, y)
    code, stdout, _ = run(capsys, "evaluate", "--policy", "dp", "--table", str(out), "--trials", "2000", "--seed", "1")
    assert code == 0 and stdout.startswith("K=2 R=1.0 policy=dp NMESE=")


def test_no_relay_tag(capsys, tmp_path):
    code, stdout, _ = run(capsys, "solve", "--slots", "2", "--rate", "0.5", "--gsr", "0", "--delta", "0.05",
                          "--nsim", "200", "--seed", "1", "--out", str(tmp_path / "t.bin"))
    assert code == 0 and stdout.rstrip().endswith("relay=off")


def test_config_errors_exit_1_with_usage(capsys, tmp_path):
    code, _, err = run(capsys, "solve", "--slots", "2", "--seed", "1", "--out", str(tmp_path / "x.bin"))
    assert code == 1 and "usage:" in err
    code, _, err = run(capsys, "solve", "--slots", "2", "--rate", "1.0")
    assert code == 1 and "seed" in err
    code, _, err = run(capsys, "solve", "--slots", "0", "--rate", "1.0", "--seed", "1")
    assert code == 1
    with pytest.raises(SystemExit) as exc:
        main(["solve", "--rate", "abc", "--seed", "1"])
    assert exc.value.code == 1
    with pytest.raises(SystemExit) as exc:
        main(["solve", "--rate", "1", "--bits", "1", "--seed", "1"])
    assert exc.value.code == 1


def test_io_error_exit_2(capsys, tmp_path):
    code, _, _ = run(capsys, "evaluate", "--table", str(tmp_path / "missing.bin"), "--seed", "1")
    assert code == 2
    bad = tmp_path / "bad.bin"
    bad.write_bytes(b"not a table at all, definitely not")
    code, _, _ = run(capsys, "evaluate", "--table", str(bad), "--seed", "1")
    assert code == 2
    code, _, _ = run(capsys, "solve", "--rate", "1", "--seed", "1", "--config", str(tmp_path / "nope.ini"))
    assert code == 2


def test_numerical_failure_exit_3(capsys):
    code, _, err = run(capsys, "evaluate", "--policy", "naive", "--gsr", "0", "--rate", "1", "--trials", "500", "--seed", "1")
    assert code == 3 and "aborted" in err


def test_bounds(capsys):
    assert run(capsys, "bounds", "--dist", "rayleigh")[1].strip() == "no_relay: UNBOUNDED, relay: BOUNDED"
    assert run(capsys, "bounds", "--dist", "chi2", "--dof", "4")[1].startswith("no_relay: BOUNDED")
    assert run(capsys, "bounds", "--dist", "rician", "--lambda", "2")[1].strip() == "no_relay: UNBOUNDED, relay: BOUNDED"
    d = json.loads(run(capsys, "bounds", "--dist", "rayleigh", "--json")[1])
    assert d["no_relay"] == "unbounded" and d["phi2"] == pytest.approx(2 * math.log(2))


def test_config_file_precedence_and_bits(capsys, tmp_path):
    ini = tmp_path / "run.ini"
    ini.write_text("[run]\nslots = 1\nrate = 0.3\nseed = 7\ndelta = 0.05\nnsim = 100\n")
    out = tmp_path / "a.bin"
    code, stdout, _ = run(capsys, "solve", "--config", str(ini), "--out", str(out))
    assert code == 0 and stdout.startswith("K=1 R=0.3 ")
    code, stdout, _ = run(capsys, "solve", "--config", str(ini), "--rate", "0.6", "--out", str(out))
    assert stdout.startswith("K=1 R=0.6 ")
    code, stdout, _ = run(capsys, "solve", "--config", str(ini), "--bits", "1", "--out", str(out), "--json")
    assert json.loads(stdout)["R"] == pytest.approx(math.log(2))
    ini.write_text("[run]\nfoo = 1\n")
    assert run(capsys, "solve", "--config", str(ini), "--rate", "1", "--seed", "1")[0] == 1


def test_sweep_writes_csv_svg_and_echo(capsys, tmp_path, monkeypatch):
    monkeypatch.setenv("RELAY_ENERGY_THREADS", "1")
    out = tmp_path / "fig.csv"
    code, stdout, _ = run(capsys, "sweep", "--rates", "0.5,1.0", "--slots-list", "1,2", "--policies", "dp,heuristic",
                          "--truncs", "1e-2,1e-3", "--trials", "500", "--nsim", "100", "--delta", "0.1", "--seed", "3",
                          "--out", str(out))
    assert code == 0
    lines = out.read_text().splitlines()
    assert lines[0] == "rate,K,policy,trunc,nmese,nmese_db,stderr,trials,seed"
    assert len(lines) == 1 + 2 * 2 * 2 * 2
    assert (tmp_path / "fig.svg").exists() and (tmp_path / "fig.csv.config.json").exists()
    assert stdout.splitlines() == lines
