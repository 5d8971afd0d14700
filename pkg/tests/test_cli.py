import shutil
import subprocess
import sys

import pytest

from recledger.cli import EXIT_CONFIG, EXIT_OK, EXIT_PARSE, EXIT_VIOLATION, main, read_participants


@pytest.fixture(scope="module")
def honest_run(tmp_path_factory):
    out = tmp_path_factory.mktemp("honest")
    assert main(["run", "honest_4node", "--out", str(out)]) == EXIT_OK
    return out


def test_run_writes_artifacts(honest_run, capsys):
    names = {p.name for p in honest_run.iterdir()}
    assert {"events.tsv", "participants.tsv", "report.txt", "commits.png", "chain-MKT1.hex"} <= names
    report = (honest_run / "report.txt").read_text()
    digests = {line.split("digest=")[1].split()[0] for line in report.splitlines() if "digest=" in line}
    assert len(digests) == 1
    participants, cfg = read_participants(honest_run / "participants.tsv")
    assert cfg.validators == ("MKT1", "TS1", "TS2", "U1") and cfg.f == 1
    assert participants["G1"].public_key


def test_run_is_deterministic(honest_run, tmp_path, capsys):
    assert main(["run", "honest_4node", "--out", str(tmp_path), "--no-figures"]) == EXIT_OK
    for name in ("events.tsv", "report.txt", "chain-TS1.hex"):
        assert (tmp_path / name).read_bytes() == (honest_run / name).read_bytes()
    assert not (tmp_path / "commits.png").exists()


def test_verify_valid_and_hex_edited(honest_run, tmp_path, capsys):
    capsys.readouterr()
    assert main(["verify", str(honest_run / "chain-MKT1.hex")]) == EXIT_OK
    assert capsys.readouterr().out == "Valid\n"

    shutil.copy(honest_run / "participants.tsv", tmp_path)
    lines = (honest_run / "chain-MKT1.hex").read_text().splitlines()
    # flip one hex digit near the end of block 2's transaction list
    target = lines[2]
    pos = len(target) // 2
    lines[2] = target[:pos] + ("0" if target[pos] != "0" else "1") + target[pos + 1:]
    edited = tmp_path / "chain.hex"
    edited.write_text("\n".join(lines) + "\n")
    code = main(["verify", str(edited)])
    out = capsys.readouterr().out
    assert code == EXIT_VIOLATION
    assert out.startswith("InvalidAt(") and int(out[len("InvalidAt("):].split(",")[0]) <= 2


def test_tamper_scenario(tmp_path, capsys):
    assert main(["run", "tamper_node", "--out", str(tmp_path), "--no-figures"]) == EXIT_OK
    assert "tamper-detected" in capsys.readouterr().out
    assert main(["verify", str(tmp_path / "chain-TS2.hex")]) == EXIT_VIOLATION
    assert capsys.readouterr().out.strip() == "InvalidAt(2, BadTxRoot)"


def test_audit_outputs(honest_run, tmp_path, capsys):
    capsys.readouterr()
    chain, events = str(honest_run / "chain-MKT1.hex"), str(honest_run / "events.tsv")
    fig = tmp_path / "coverage.png"
    assert main(["audit", chain, events, "--period", "0:1000", "--figure", str(fig)]) == EXIT_OK
    out = capsys.readouterr()
    assert out.out.startswith("period_start: 0\nperiod_end: 1000\n") and out.err == ""
    assert fig.stat().st_size > 0
    assert main(["audit", chain, events, "--format", "text"]) == EXIT_OK
    assert capsys.readouterr().out.startswith("Audit for ticks")
    assert main(["audit", chain, events, "--period", "oops"]) == EXIT_PARSE
    err = capsys.readouterr()
    assert err.out == "" and "--period" in err.err


def test_audit_control_map_errors(honest_run, tmp_path, capsys):
    bad = tmp_path / "bad.map"
    bad.write_text("commit: SG.AU\n")
    chain, events = str(honest_run / "chain-MKT1.hex"), str(honest_run / "events.tsv")
    assert main(["audit", chain, events, "--control-map", str(bad)]) == EXIT_PARSE
    assert "misses" in capsys.readouterr().err


def test_parse_and_config_errors(tmp_path, capsys):
    bad = tmp_path / "bad.scn"
    bad.write_text("seed 1\nbogus\n")
    assert main(["run", str(bad), "--out", str(tmp_path / "o")]) == EXIT_PARSE
    err = capsys.readouterr()
    assert err.out == "" and "line 2: unknown directive 'bogus'" in err.err
    cfg = tmp_path / "cfg.scn"
    cfg.write_text("topology 1:3\n")
    assert main(["run", str(cfg), "--out", str(tmp_path / "o")]) == EXIT_CONFIG
    assert main(["run", str(tmp_path / "missing.scn")]) == EXIT_PARSE
    assert main(["verify", str(tmp_path / "missing.hex")]) == EXIT_PARSE


def test_attack_command(tmp_path, capsys):
    assert main(["attack", "double-spend", "--seed", "3", "--out", str(tmp_path)]) == EXIT_OK
    out = capsys.readouterr().out
    assert "defense_held: true" in out and "PASS at-most-one-committed" in out
    assert (tmp_path / "events.tsv").exists()


def test_console_script_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "recledger.cli", "attack", "equivocate"],
                          capture_output=True, text=True)
    assert proc.returncode == 0 and "defense_held: true" in proc.stdout
