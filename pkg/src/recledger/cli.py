"""Command-line entry point.

Exit codes: 0 success, 1 invariant violation or failed check, 2 unreadable
input (parse error, missing file), 3 configuration error.
"""

from __future__ import annotations

import argparse
import dataclasses
import sys
from pathlib import Path
from typing import Optional

from . import __version__
from .attacks import ATTACKS, run_attack
from .audit import ControlMap, ControlMapError, annual_audit, export_report
from .consensus import ConfigError, ConsensusConfig, qc_checker
from .core import Participant, Role
from .ledger import decode_blocks, export_chain, read_export, verify_raw
from .netsim import Event, SimReport, run
from .scenario import ScenarioError, resolve_scenario

EXIT_OK, EXIT_VIOLATION, EXIT_PARSE, EXIT_CONFIG = 0, 1, 2, 3


class InputError(Exception):
    """Unreadable or malformed input file."""


def _err(msg: str) -> None:
    print(msg, file=sys.stderr)


# --- participants file -----------------------------------------------------


def write_participants(report: SimReport, path: Path) -> None:
    lines = [f"# f={report.config.f}", "# id\trole\tlevel\tvalidator\tpublic_key"]
    for pid in sorted(report.participants):
        p = report.participants[pid]
        validator = int(pid in report.config.validators)
        lines.append(f"{p.id}\t{p.role.value}\t{p.der_level}\t{validator}\t{p.public_key.hex()}")
    path.write_text("\n".join(lines) + "\n")


def read_participants(path: Path) -> tuple[dict[str, Participant], Optional[ConsensusConfig]]:
    participants: dict[str, Participant] = {}
    validators = []
    f = None
    try:
        text = path.read_text()
    except OSError as exc:
        raise InputError(f"{path}: {exc.strerror}") from None
    for lineno, line in enumerate(text.splitlines(), 1):
        if line.startswith("# f="):
            f = int(line[4:])
            continue
        if not line.strip() or line.startswith("#"):
            continue
        cols = line.split("\t")
        try:
            pid, role, level, validator, key = cols
            participants[pid] = Participant(pid, Role(role), int(level), bytes.fromhex(key))
        except ValueError as exc:
            raise InputError(f"{path}:{lineno}: {exc}") from None
        if validator == "1":
            validators.append(pid)
    cfg = None
    if validators:
        cfg = ConsensusConfig(tuple(sorted(validators)), f if f is not None else (len(validators) - 1) // 3)
    return participants, cfg


def _participants_for(chain_path: Path, explicit: Optional[str]):
    path = Path(explicit) if explicit else chain_path.parent / "participants.tsv"
    if not path.exists():
        raise InputError(f"participants file {path} not found (pass --participants)")
    return read_participants(path)


def _read_text(path: Path) -> str:
    try:
        return path.read_text()
    except OSError as exc:
        raise InputError(f"{path}: {exc.strerror}") from None


# --- subcommands -----------------------------------------------------------


def cmd_run(args) -> int:
    scenario = resolve_scenario(args.scenario)
    sim = scenario.sim
    if args.seed is not None:
        sim = dataclasses.replace(sim, seed=args.seed)
    report = run(sim)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "events.tsv").write_text(report.event_log())
    for nid, chain in sorted(report.chains.items()):
        (out / f"chain-{nid}.hex").write_text(export_chain(chain.blocks))
    write_participants(report, out / "participants.tsv")
    rendered = report.render()
    (out / "report.txt").write_text(rendered)
    if not args.no_figures:
        from .plotting import plot_commits

        plot_commits(report, out / "commits.png")
    sys.stdout.write(rendered)
    if report.invariant_violations:
        for v in report.invariant_violations:
            _err(f"invariant violation: {v}")
        return EXIT_VIOLATION
    return EXIT_OK


def cmd_verify(args) -> int:
    path = Path(args.chain)
    raw = read_export(_read_text(path))
    participants, cfg = _participants_for(path, args.participants)
    keys = {p: x.public_key for p, x in participants.items()}
    check = qc_checker(cfg, keys) if cfg is not None else None
    verdict = verify_raw(raw, keys, check)
    print(verdict)
    return EXIT_OK if verdict.valid else EXIT_VIOLATION


def _period(text: Optional[str], events: list[Event]) -> tuple[int, int]:
    if text is None:
        return 0, max((e.tick for e in events), default=0)
    start, sep, end = text.partition(":")
    try:
        if not sep:
            raise ValueError
        return int(start), int(end)
    except ValueError:
        raise InputError(f"--period must look like start:end, got {text!r}") from None


def cmd_audit(args) -> int:
    chain_path = Path(args.chain)
    raw = read_export(_read_text(chain_path))
    try:
        events = [Event.parse(line) for line in _read_text(Path(args.events)).splitlines() if line.strip()]
    except ValueError as exc:
        raise InputError(f"{args.events}: malformed event line ({exc})") from None
    participants, cfg = _participants_for(chain_path, args.participants)
    keys = {p: x.public_key for p, x in participants.items()}
    verdict = verify_raw(raw, keys, qc_checker(cfg, keys) if cfg is not None else None)
    if not verdict.valid:
        _err(f"refusing to audit an invalid chain: {verdict}")
        return EXIT_VIOLATION
    blocks, _ = decode_blocks(raw)
    try:
        cmap = ControlMap.load(args.control_map) if args.control_map else ControlMap.default()
    except OSError as exc:
        raise InputError(f"{args.control_map}: {exc.strerror}") from None
    period = _period(args.period, events)
    report = annual_audit(blocks, period, events, participants, cmap)
    sys.stdout.buffer.write(export_report(report, args.format))
    sys.stdout.flush()
    if args.figure:
        from .plotting import plot_control_coverage

        plot_control_coverage(report, args.figure)
    return EXIT_OK if report.conservation_ok else EXIT_VIOLATION


def cmd_attack(args) -> int:
    result = run_attack(args.name, args.seed)
    sys.stdout.write(result.render())
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "events.tsv").write_text(result.report.event_log())
        (out / "report.txt").write_text(result.render() + result.report.render())
    if not result.held:
        _err(f"defense did not hold against {args.name}")
        return EXIT_VIOLATION
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="recledger", description="Permissioned REC ledger simulator and auditor.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run a scenario file or bundled scenario")
    p.add_argument("scenario", help="scenario path or bundled name")
    p.add_argument("--out", default="out", help="output directory (default: out)")
    p.add_argument("--seed", type=int, help="override the scenario seed")
    p.add_argument("--no-figures", action="store_true", help="skip the commit-progress figure")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("verify", help="verify an exported chain")
    p.add_argument("chain")
    p.add_argument("--participants", help="participants.tsv (default: next to the chain file)")
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("audit", help="annual audit of an exported chain and event log")
    p.add_argument("chain")
    p.add_argument("events")
    p.add_argument("--period", help="start:end ticks (default: the whole log)")
    p.add_argument("--control-map", help="control-family map (default: bundled map)")
    p.add_argument("--format", choices=("machine", "text"), default="machine")
    p.add_argument("--participants", help="participants.tsv (default: next to the chain file)")
    p.add_argument("--figure", help="write a control-coverage bar chart to this path")
    p.set_defaults(func=cmd_audit)

    p = sub.add_parser("attack", help="run a built-in adversarial scenario")
    p.add_argument("name", choices=sorted(ATTACKS))
    p.add_argument("--seed", type=int)
    p.add_argument("--out", help="also write the event log and report here")
    p.set_defaults(func=cmd_attack)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ScenarioError, InputError, ControlMapError, FileNotFoundError) as exc:
        _err(f"error: {exc}")
        return EXIT_PARSE
    except ConfigError as exc:
        _err(f"configuration error: {exc}")
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
