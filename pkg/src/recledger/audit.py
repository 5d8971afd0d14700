"""Regulator-side tooling: replay, annual reports and control-family tagging.

Everything here is read-only over chain snapshots and event logs.
"""

from __future__ import annotations

import re
from collections import Counter
from dataclasses import dataclass, field
from enum import Enum
from importlib import resources
from typing import Iterable, Iterator, Mapping, Optional, Sequence

from .consensus import replay_block
from .core import (
    EMPTY_REGISTRY, ErrorCode, Issue, LifecycleError, Participants, RegistryState, RetirementReason, StatusKind,
    Swap,
)
from .ledger import ChainErrorCode, LedgerBlock
from .netsim import Event, parse_details

# Every event kind the simulator can emit.
EVENT_KINDS: tuple[str, ...] = (
    "submit", "propose", "prevote", "precommit", "commit", "sync",
    "commit-failed", "proposal-rejected", "vote-rejected", "sync-rejected",
    "timeout", "new-round", "idle",
    "drop", "partition", "heal", "inject", "tamper",
    "equivocation-detected", "tamper-detected", "byzantine-limit-exceeded", "conservation-violation",
    "reject.Expired", "reject." + ChainErrorCode.BAD_SIGNATURE.value, "reject." + ChainErrorCode.STALE_NONCE.value,
) + tuple("reject." + code.value for code in ErrorCode)


class ReplayError(Exception):
    def __init__(self, height: int, index: int, code: str):
        super().__init__(f"replay failed at height {height}, tx {index}: {code}")
        self.height = height
        self.index = index
        self.code = code


def replay_states(blocks: Iterable[LedgerBlock], participants: Participants) -> Iterator[tuple[LedgerBlock, RegistryState]]:
    """Yield the registry after each block, starting from the genesis block."""
    state = EMPTY_REGISTRY
    for block in blocks:
        try:
            state = replay_block(state, block, participants)
        except LifecycleError as err:
            raise ReplayError(block.height, err.index, err.code.value) from err
        yield block, state


def replay(blocks: Iterable[LedgerBlock], participants: Participants) -> RegistryState:
    """Fold every committed transaction through the lifecycle from genesis."""
    state = EMPTY_REGISTRY
    for _, state in replay_states(blocks, participants):
        pass
    return state


# --- control map -----------------------------------------------------------


class UnmappedEventKind(KeyError):
    pass


class ControlMapError(ValueError):
    pass


@dataclass(frozen=True)
class ControlMap:
    families: Mapping[str, tuple[str, ...]]

    @classmethod
    def parse(cls, text: str, required: Iterable[str] = EVENT_KINDS) -> "ControlMap":
        """Parse ``kind: family[,family...]`` lines and insist on full coverage."""
        entries: dict[str, tuple[str, ...]] = {}
        for lineno, raw in enumerate(text.splitlines(), 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            kind, sep, rest = line.partition(":")
            fams = tuple(f.strip() for f in rest.split(",") if f.strip())
            if not sep or not kind.strip() or not fams:
                raise ControlMapError(f"line {lineno}: expected 'event-kind: family[,family...]'")
            if kind.strip() in entries:
                raise ControlMapError(f"line {lineno}: duplicate entry for {kind.strip()}")
            entries[kind.strip()] = fams
        missing = sorted(set(required) - set(entries))
        if missing:
            raise ControlMapError("control map misses event kinds: " + ", ".join(missing))
        return cls(entries)

    @classmethod
    def load(cls, path) -> "ControlMap":
        with open(path, encoding="utf-8") as fh:
            return cls.parse(fh.read())

    @classmethod
    def default(cls) -> "ControlMap":
        return cls.parse((resources.files("recledger") / "data" / "default_controls.map").read_text())


def tag_events(events: Iterable[Event], control_map: ControlMap) -> dict[str, int]:
    """Count events under every control family their kind maps to."""
    counts: Counter = Counter()
    for e in events:
        fams = control_map.families.get(e.kind)
        if fams is None:
            raise UnmappedEventKind(e.kind)
        counts.update(fams)
    return dict(sorted(counts.items()))


# --- annual report ---------------------------------------------------------


class AnomalyKind(str, Enum):
    DOUBLE_RETIRE_ATTEMPT = "DoubleRetireAttempt"
    TRADE_AFTER_RETIRE = "TradeAfterRetire"
    DUPLICATE_TRACKING_ID = "DuplicateTrackingId"
    EQUIVOCATION_OBSERVED = "EquivocationObserved"
    CHAIN_INTEGRITY_FAILURE = "ChainIntegrityFailure"


@dataclass(frozen=True)
class AnomalyFinding:
    """One finding; chain evidence is (height, index), log evidence is node/tick/tx."""

    kind: AnomalyKind
    height: Optional[int] = None
    index: Optional[int] = None
    node: Optional[str] = None
    tick: Optional[int] = None
    tx: Optional[str] = None
    detail: str = ""


@dataclass(frozen=True)
class AuditReport:
    period: tuple[int, int]
    issued_count: int = 0
    issued_mwh: int = 0
    retired_by_reason: Mapping[str, int] = field(default_factory=lambda: {r.value: 0 for r in RetirementReason})
    active_count: int = 0
    aggregated_count: int = 0
    swap_total: int = 0
    anomalies: tuple[AnomalyFinding, ...] = ()
    conservation_ok: bool = True
    control_coverage: Mapping[str, int] = field(default_factory=dict)

    @property
    def retired_count(self) -> int:
        return sum(self.retired_by_reason.values())


def _in(period: tuple[int, int], tick: int) -> bool:
    return period[0] <= tick <= period[1]


_VERDICT = re.compile(r"InvalidAt\((\d+), (\w+)\)")


def _log_anomalies(events: Sequence[Event]) -> list[AnomalyFinding]:
    found: list[AnomalyFinding] = []
    seen: set = set()

    def add(key, finding):
        if key not in seen:
            seen.add(key)
            found.append(finding)

    for e in events:
        d = parse_details(e.details)
        if e.kind == "reject.CertificateRetired":
            kind = AnomalyKind.DOUBLE_RETIRE_ATTEMPT if d.get("op") == "Retire" else AnomalyKind.TRADE_AFTER_RETIRE
            add(("tx", d.get("tx")), AnomalyFinding(kind, node=e.node, tick=e.tick, tx=d.get("tx"), detail=d.get("ref", "")))
        elif e.kind == "reject.DuplicateId":
            add(("tx", d.get("tx")), AnomalyFinding(AnomalyKind.DUPLICATE_TRACKING_ID, node=e.node, tick=e.tick,
                                                    tx=d.get("tx"), detail=d.get("ref", "")))
        elif e.kind == "equivocation-detected":
            voter = d.get("voter", "")
            add(("voter", voter), AnomalyFinding(AnomalyKind.EQUIVOCATION_OBSERVED, node=voter, tick=e.tick,
                                                 detail=f"reported_by={e.node}"))
        elif e.kind == "tamper-detected":
            m = _VERDICT.search(e.details)
            height = int(m.group(1)) if m else None
            add(("node", e.node), AnomalyFinding(AnomalyKind.CHAIN_INTEGRITY_FAILURE, height=height, node=e.node,
                                                 tick=e.tick, detail=m.group(2) if m else ""))
        elif e.kind in ("conservation-violation", "commit-failed"):
            add(("node", e.node), AnomalyFinding(AnomalyKind.CHAIN_INTEGRITY_FAILURE, height=int(d.get("height", 0)),
                                                 node=e.node, tick=e.tick, detail=e.kind))
    return found


def annual_audit(blocks: Sequence[LedgerBlock], period: tuple[int, int], events: Sequence[Event],
                 participants: Participants, control_map: Optional[ControlMap] = None) -> AuditReport:
    """Summarize the certificates issued during ``period`` and what became of them.

    The cohort is every certificate whose issuance was committed in a block
    proposed within the period; statuses are read from the state at period
    end. Anomalies come from the chain replay and the rejected-event log.
    """
    start, end = period
    if start > end:
        raise ValueError(f"empty period {start}:{end}")
    anomalies: list[AnomalyFinding] = []
    conservation = True
    state = EMPTY_REGISTRY
    cohort: list[str] = []
    swaps = 0
    try:
        for block, state_after in replay_states((b for b in blocks if b.proposed_at <= end), participants):
            for tx in block.transactions:
                if isinstance(tx.payload, Issue) and _in(period, block.proposed_at):
                    cohort.append(tx.payload.tracking_id)
                if isinstance(tx.payload, Swap) and _in(period, block.proposed_at):
                    swaps += 1
            if not state_after.conservation_ok():
                conservation = False
                anomalies.append(AnomalyFinding(AnomalyKind.CHAIN_INTEGRITY_FAILURE, height=block.height,
                                                detail="conservation"))
            state = state_after
    except ReplayError as err:
        conservation = False
        if err.code == ErrorCode.DUPLICATE_ID.value:
            anomalies.append(AnomalyFinding(AnomalyKind.DUPLICATE_TRACKING_ID, height=err.height, index=err.index))
        anomalies.append(AnomalyFinding(AnomalyKind.CHAIN_INTEGRITY_FAILURE, height=err.height, index=err.index,
                                        detail=err.code))

    retired = {r.value: 0 for r in RetirementReason}
    active = aggregated = mwh = 0
    for tid in cohort:
        cert = state.certificates.get(tid)
        if cert is None:
            continue
        mwh += cert.energy_mwh
        if cert.status.kind is StatusKind.RETIRED:
            retired[cert.retirement.reason.value] += 1
        elif cert.status.kind is StatusKind.AGGREGATED:
            aggregated += 1
        else:
            active += 1

    windowed = [e for e in events if _in(period, e.tick)]
    anomalies += _log_anomalies(windowed)
    coverage = tag_events(windowed, control_map or ControlMap.default())
    return AuditReport(
        period=(start, end),
        issued_count=len(cohort),
        issued_mwh=mwh,
        retired_by_reason=retired,
        active_count=active,
        aggregated_count=aggregated,
        swap_total=swaps,
        anomalies=tuple(anomalies),
        conservation_ok=conservation,
        control_coverage=coverage,
    )


# --- rendering -------------------------------------------------------------

_FINDING_FIELDS = ("height", "index", "node", "tick", "tx", "detail")


def _machine(report: AuditReport) -> list[str]:
    lines = [
        f"period_start: {report.period[0]}",
        f"period_end: {report.period[1]}",
        f"issued_count: {report.issued_count}",
        f"issued_mwh: {report.issued_mwh}",
        f"retired_count: {report.retired_count}",
        "retired_by_reason:",
    ]
    lines += [f"  {r.value}: {report.retired_by_reason.get(r.value, 0)}" for r in RetirementReason]
    lines += [
        f"active_count: {report.active_count}",
        f"aggregated_count: {report.aggregated_count}",
        f"swap_total: {report.swap_total}",
        f"conservation_ok: {str(report.conservation_ok).lower()}",
        "control_coverage:",
    ]
    lines += [f"  {fam}: {n}" for fam, n in sorted(report.control_coverage.items())]
    if report.anomalies:
        lines.append("anomalies:")
        for a in report.anomalies:
            lines.append(f"  - kind: {a.kind.value}")
            for name in _FINDING_FIELDS:
                value = getattr(a, name)
                if value not in (None, ""):
                    lines.append(f"    {name}: {value}")
    return lines


def _text(report: AuditReport) -> list[str]:
    lines = [
        f"Audit for ticks {report.period[0]}..{report.period[1]}",
        f"  issued     {report.issued_count} certificates, {report.issued_mwh} MWh",
        f"  active     {report.active_count}",
        f"  aggregated {report.aggregated_count}",
        f"  retired    {report.retired_count}",
    ]
    lines += [f"    {r.value}: {report.retired_by_reason.get(r.value, 0)}" for r in RetirementReason]
    lines.append(f"  swaps      {report.swap_total}")
    lines.append("  conservation " + ("holds" if report.conservation_ok else "VIOLATED"))
    if report.control_coverage:
        lines.append("  control coverage")
        lines += [f"    {fam}: {n}" for fam, n in sorted(report.control_coverage.items())]
    if report.anomalies:
        lines.append(f"  anomalies ({len(report.anomalies)})")
        for a in report.anomalies:
            ev = ", ".join(f"{n}={getattr(a, n)}" for n in _FINDING_FIELDS if getattr(a, n) not in (None, ""))
            lines.append(f"    {a.kind.value}: {ev}")
    else:
        lines.append("  no anomalies")
    return lines


def export_report(report: AuditReport, fmt: str = "machine") -> bytes:
    if fmt == "machine":
        lines = _machine(report)
    elif fmt == "text":
        lines = _text(report)
    else:
        raise ValueError(f"unknown report format {fmt!r}")
    return ("\n".join(lines) + "\n").encode("utf-8")


def parse_report(data: bytes) -> AuditReport:
    """Inverse of the machine format."""
    top: dict[str, str] = {}
    sections: dict[str, dict[str, str]] = {}
    findings: list[dict[str, str]] = []
    current = None
    for line in data.decode("utf-8").splitlines():
        if not line.startswith(" "):
            key, _, value = line.partition(":")
            value = value.strip()
            if value:
                top[key] = value
                current = None
            else:
                current = key
                sections[key] = {}
        elif current == "anomalies":
            body = line.strip()
            if body.startswith("- "):
                findings.append({})
                body = body[2:]
            k, _, v = body.partition(":")
            findings[-1][k] = v.strip()
        else:
            k, _, v = line.strip().partition(":")
            sections[current][k] = v.strip()

    def opt_int(d, k):
        return int(d[k]) if k in d else None

    anomalies = tuple(
        AnomalyFinding(AnomalyKind(d["kind"]), opt_int(d, "height"), opt_int(d, "index"), d.get("node"),
                       opt_int(d, "tick"), d.get("tx"), d.get("detail", ""))
        for d in findings
    )
    return AuditReport(
        period=(int(top["period_start"]), int(top["period_end"])),
        issued_count=int(top["issued_count"]),
        issued_mwh=int(top["issued_mwh"]),
        retired_by_reason={k: int(v) for k, v in sections.get("retired_by_reason", {}).items()},
        active_count=int(top["active_count"]),
        aggregated_count=int(top["aggregated_count"]),
        swap_total=int(top["swap_total"]),
        anomalies=anomalies,
        conservation_ok=top["conservation_ok"] == "true",
        control_coverage={k: int(v) for k, v in sections.get("control_coverage", {}).items()},
    )
