"""Built-in adversarial scenarios and the checks that decide whether a defense held."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from typing import Callable, Optional

from .consensus import qc_checker
from .ledger import verify_chain
from .netsim import HealAt, PartitionAt, SimReport, SimRun, parse_details, run
from .scenario import load_bundled


@dataclass(frozen=True)
class Check:
    name: str
    ok: bool
    detail: str = ""


@dataclass
class AttackResult:
    name: str
    seed: int
    checks: list[Check] = field(default_factory=list)
    report: Optional[SimReport] = None

    @property
    def held(self) -> bool:
        return all(c.ok for c in self.checks)

    def render(self) -> str:
        lines = [f"attack: {self.name}", f"seed: {self.seed}", f"defense_held: {str(self.held).lower()}", "checks:"]
        lines += [f"  {'PASS' if c.ok else 'FAIL'} {c.name}: {c.detail}" for c in self.checks]
        return "\n".join(lines) + "\n"


def _common(rep: SimReport) -> list[Check]:
    honest_digests = {rep.chain_digests[v] for v in rep.honest}
    return [
        Check("no-safety-violation", not rep.safety_violations, "; ".join(rep.safety_violations) or "none"),
        Check("conservation", rep.conservation_failures == 0, f"failures={rep.conservation_failures}"),
        Check("honest-agree", len(honest_digests) == 1, f"distinct_digests={len(honest_digests)}"),
    ]


def conflicting_pair(rep: SimReport, attacker: str = "B1") -> list[str]:
    """Digests of the transactions a DoubleSpendAttempt sent to disjoint validator halves."""
    return [parse_details(e.details)["tx"] for e in rep.events
            if e.kind == "submit" and e.node == attacker and " to=" in e.details]


def _double_spend(rep: SimReport, sim: SimRun) -> list[Check]:
    pair = conflicting_pair(rep)
    committed = rep.committed_txs()
    n = sum(1 for d in pair if d in committed)
    return [
        Check("two-conflicting-submitted", len(pair) == 2, f"submitted={len(pair)}"),
        Check("at-most-one-committed", n <= 1, f"committed={n}"),
        Check("exactly-one-committed", n == 1, ", ".join(f"{d[:16]}:{'committed' if d in committed else rep.rejected.get(d, 'pending')}" for d in pair)),
    ] + _common(rep)


def _equivocate(rep: SimReport, sim: SimRun) -> list[Check]:
    byz = set(rep.byzantine)
    return [
        Check("equivocator-flagged", byz <= set(rep.flagged) and bool(byz), f"flagged={','.join(rep.flagged)}"),
        Check("liveness", not rep.uncommitted and bool(rep.commit_latencies), f"committed={len(rep.commit_latencies)} uncommitted={len(rep.uncommitted)}"),
    ] + _common(rep)


def _tamper(rep: SimReport, sim: SimRun) -> list[Check]:
    check = qc_checker(rep.config, {p: x.public_key for p, x in rep.participants.items()})
    keys = {p: x.public_key for p, x in rep.participants.items()}
    out = []
    for v in rep.byzantine:
        verdict = verify_chain(rep.chains[v].blocks, keys, check)
        out.append(Check(f"tampered-{v}-invalid", not verdict.valid, str(verdict)))
    detected = [e for e in rep.events if e.kind == "tamper-detected"]
    out.append(Check("tamper-detected-event", bool(detected), f"events={len(detected)}"))
    for v in rep.honest:
        verdict = verify_chain(rep.chains[v].blocks, keys, check)
        out.append(Check(f"honest-{v}-valid", verdict.valid, str(verdict)))
    return out + _common(rep)


def _replay(rep: SimReport, sim: SimRun) -> list[Check]:
    byz = set(rep.byzantine)
    replayed = {parse_details(e.details)["tx"] for e in rep.events if e.kind == "submit" and e.node in byz}
    stale = {}
    for e in rep.events:
        if e.kind == "reject.StaleNonce" and e.node in rep.honest:
            stale.setdefault(parse_details(e.details)["tx"], set()).add(e.node)
    everywhere = all(stale.get(d, set()) >= set(rep.honest) for d in replayed)
    counts: dict[str, int] = {}
    for v in rep.honest[:1]:
        for b in rep.chains[v].blocks:
            for tx in b.transactions:
                counts[tx.digest.hex()] = counts.get(tx.digest.hex(), 0) + 1
    return [
        Check("replay-attempted", bool(replayed), f"replayed={len(replayed)}"),
        Check("stale-at-every-honest-node", everywhere, f"rejected={sum(1 for d in replayed if d in stale)}"),
        Check("no-double-commit", all(c == 1 for c in counts.values()), f"max_copies={max(counts.values(), default=0)}"),
    ] + _common(rep)


def _partition(rep: SimReport, sim: SimRun) -> list[Check]:
    faults = sim.faults
    start = next(f.tick for f in faults if isinstance(f, PartitionAt))
    heal = next(f.tick for f in faults if isinstance(f, HealAt))
    during = [e for e in rep.events if e.kind in ("commit", "sync") and start <= e.tick < heal]
    after = [e for e in rep.events if e.kind in ("commit", "sync") and e.tick >= heal]
    return [
        Check("no-commit-while-split", not during, f"commits={len(during)} in [{start},{heal})"),
        Check("progress-after-heal", bool(after), f"commits={len(after)}"),
        Check("all-committed", not rep.uncommitted, f"uncommitted={len(rep.uncommitted)}"),
    ] + _common(rep)


ATTACKS: dict[str, tuple[str, Callable[[SimReport, SimRun], list[Check]]]] = {
    "double-spend": ("double_spend", _double_spend),
    "equivocate": ("equivocate", _equivocate),
    "tamper": ("tamper_node", _tamper),
    "replay": ("replay", _replay),
    "partition": ("partition", _partition),
}


def run_attack(name: str, seed: Optional[int] = None) -> AttackResult:
    if name not in ATTACKS:
        raise KeyError(f"unknown attack {name!r}; choose from {', '.join(sorted(ATTACKS))}")
    scenario_name, judge = ATTACKS[name]
    sim = load_bundled(scenario_name).sim
    if seed is not None:
        sim = dataclasses.replace(sim, seed=seed)
    rep = run(sim)
    return AttackResult(name, sim.seed, judge(rep, sim), rep)
