"""Deterministic discrete-event simulator of a permissioned REC network.

Nodes are laid out on the five-level DER hierarchy. Levels 1-2 are clients
that submit signed transactions; levels 3-5 run consensus. One event loop owns
every node and delivers events in (tick, sequence) order, so a run is a pure
function of its ``SimRun``.
"""

from __future__ import annotations

import dataclasses
import heapq
import random
import re
from dataclasses import dataclass, field
from enum import Enum
from typing import Optional, Union

from .consensus import (
    ConfigError, ConsensusConfig, Message, Replica, TxMessage, qc_checker, tx_details,
)
from .core import (
    NON_HOLDING_ROLES, Participant, Payload, RegistryState, Retire, RetirementReason, Role, Trade,
)
from .crypto import key_for, sha256
from .ledger import Chain, SignedTransaction, sign_transaction, verify_chain
from .quorum import Vote, sign_vote


class BehaviorKind(str, Enum):
    HONEST = "Honest"
    TAMPER_STORED_BLOCK = "TamperStoredBlock"
    EQUIVOCATE_VOTES = "EquivocateVotes"
    FORGE_TRANSACTION = "ForgeTransaction"
    REPLAY_TRANSACTION = "ReplayTransaction"
    DOUBLE_SPEND_ATTEMPT = "DoubleSpendAttempt"


@dataclass(frozen=True)
class Behavior:
    kind: BehaviorKind
    arg: Union[int, str, None] = None

    @classmethod
    def parse(cls, text: str) -> "Behavior":
        m = re.fullmatch(r"(\w+)(?:\(([^)]*)\))?", text.strip())
        if not m:
            raise ValueError(f"bad behavior {text!r}")
        kind = BehaviorKind(m.group(1))
        arg = m.group(2)
        if kind is BehaviorKind.TAMPER_STORED_BLOCK:
            if arg is None or not arg.isdigit() or int(arg) < 1:
                raise ValueError("TamperStoredBlock needs a height >= 1")
            return cls(kind, int(arg))
        if kind is BehaviorKind.DOUBLE_SPEND_ATTEMPT:
            if not arg:
                raise ValueError("DoubleSpendAttempt needs a tracking id")
            return cls(kind, arg)
        if arg:
            raise ValueError(f"{kind.value} takes no argument")
        return cls(kind)

    def __str__(self):
        return self.kind.value if self.arg is None else f"{self.kind.value}({self.arg})"


HONEST = Behavior(BehaviorKind.HONEST)


@dataclass(frozen=True)
class NodeConfig:
    id: str
    role: Role
    der_level: int
    is_validator: bool
    behavior: Behavior = HONEST


@dataclass(frozen=True)
class PartitionAt:
    tick: int
    groups: tuple[frozenset[str], ...]


@dataclass(frozen=True)
class HealAt:
    tick: int


@dataclass(frozen=True)
class InjectAt:
    tick: int
    node: str
    behavior: Behavior


FaultEvent = Union[PartitionAt, HealAt, InjectAt]


@dataclass(frozen=True)
class WorkloadItem:
    tick: int
    signer: str
    payload: Payload


@dataclass(frozen=True)
class SimRun:
    seed: int
    nodes: tuple[NodeConfig, ...]
    workload: tuple[WorkloadItem, ...] = ()
    faults: tuple[FaultEvent, ...] = ()
    tick_limit: int = 1000
    latency: tuple[int, int] = (1, 3)
    f: Optional[int] = None
    round_timeout: int = 10
    max_block_txs: int = 64
    tx_ttl: int = 200


@dataclass(frozen=True)
class Event:
    tick: int
    node: str
    kind: str
    details: str

    def line(self) -> str:
        return f"{self.tick}\t{self.node}\t{self.kind}\t{self.details}"

    @classmethod
    def parse(cls, line: str) -> "Event":
        tick, node, kind, details = line.rstrip("\n").split("\t", 3)
        return cls(int(tick), node, kind, details)


def parse_details(details: str) -> dict[str, str]:
    out = {}
    for part in details.split():
        k, sep, v = part.partition("=")
        if sep:
            out[k] = v
    return out


DETECTION_KINDS = ("equivocation-detected", "tamper-detected", "byzantine-limit-exceeded", "conservation-violation")


# --- topology --------------------------------------------------------------

LEVEL_PREFIX = {1: "G", 2: "BR", 3: "TS", 4: "U"}


def topology_template(level_counts: dict[int, int]) -> list[NodeConfig]:
    """Lay out nodes on the DER hierarchy; levels 3-5 become validators."""
    nodes = []
    for level in sorted(level_counts):
        count = level_counts[level]
        if level not in range(1, 6):
            raise ConfigError(f"DER level {level} outside 1..5")
        if count < 0:
            raise ConfigError(f"negative node count at level {level}")
        for i in range(1, count + 1):
            if level == 1:
                nodes.append(NodeConfig(f"G{i}", Role.GENERATOR, 1, False))
            elif level == 2:
                nodes.append(NodeConfig(f"BR{i}", Role.BROKER, 2, False))
            elif level == 3:
                nodes.append(NodeConfig(f"TS{i}", Role.TRADING_PLATFORM, 3, True))
            elif level == 4:
                nodes.append(NodeConfig(f"U{i}", Role.UTILITY, 4, True))
            elif i % 2:
                nodes.append(NodeConfig(f"MKT{(i + 1) // 2}", Role.TRADING_PLATFORM, 5, True))
            else:
                nodes.append(NodeConfig(f"REG{i // 2}", Role.REGULATOR, 5, True))
    if not any(n.is_validator for n in nodes):
        raise ConfigError("topology has no validators (levels 3-5 are empty)")
    return nodes


# --- report ----------------------------------------------------------------


@dataclass
class SimReport:
    seed: int
    final_tick: int
    chain_digests: dict[str, str]
    heights: dict[str, int]
    honest: list[str]
    byzantine: list[str]
    flagged: list[str]
    commit_latencies: dict[str, int]
    rejected: dict[str, str]
    uncommitted: list[str]
    decided_rounds: dict[int, int]
    safety_violations: list[str]
    conservation_failures: int
    guarantees_void: bool
    events: list[Event]
    chains: dict[str, Chain] = field(repr=False)
    registries: dict[str, RegistryState] = field(repr=False)
    participants: dict[str, Participant] = field(repr=False)
    config: ConsensusConfig = field(repr=False)

    @property
    def detections(self) -> list[Event]:
        return [e for e in self.events if e.kind in DETECTION_KINDS]

    @property
    def invariant_violations(self) -> list[str]:
        out = list(self.safety_violations)
        if self.conservation_failures:
            out.append(f"conservation failed {self.conservation_failures} time(s)")
        return out

    def event_log(self) -> str:
        return "".join(e.line() + "\n" for e in self.events)

    def committed_txs(self, node: Optional[str] = None) -> dict[str, int]:
        """Transaction digest -> height, from one node or every honest node."""
        out: dict[str, int] = {}
        for nid in ([node] if node else self.honest):
            for block in self.chains[nid].blocks:
                for tx in block.transactions:
                    out.setdefault(tx.digest.hex(), block.height)
        return out

    def render(self) -> str:
        lines = [
            f"seed: {self.seed}",
            f"final_tick: {self.final_tick}",
            f"guarantees_void: {str(self.guarantees_void).lower()}",
            f"conservation_failures: {self.conservation_failures}",
            "nodes:",
        ]
        for nid in sorted(self.chain_digests):
            status = "honest" if nid in self.honest else "byzantine"
            lines.append(f"  {nid}: height={self.heights[nid]} digest={self.chain_digests[nid]} {status}")
        lines.append("decided_rounds:")
        lines += [f"  {h}: {r}" for h, r in sorted(self.decided_rounds.items())]
        lines.append(f"committed: {len(self.commit_latencies)}")
        lines.append(f"rejected: {len(self.rejected)}")
        lines.append(f"uncommitted: {len(self.uncommitted)}")
        if self.commit_latencies:
            lat = sorted(self.commit_latencies.values())
            lines.append(f"latency_min: {lat[0]}")
            lines.append(f"latency_max: {lat[-1]}")
        lines.append("flagged: " + ",".join(self.flagged))
        lines.append("safety_violations:")
        lines += [f"  - {v}" for v in self.safety_violations]
        lines.append("detections:")
        lines += [f"  - {e.line()}" for e in self.detections]
        return "\n".join(lines) + "\n"


# --- simulator -------------------------------------------------------------


class SimReplica(Replica):
    sim: "Simulator"

    def extra_votes(self, vote: Vote) -> list[Vote]:
        if self.behavior != BehaviorKind.EQUIVOCATE_VOTES.value:
            return []
        other = sha256(b"equivocate" + vote.block_hash)
        return [sign_vote(vote.kind, self.key, self.id, vote.height, vote.round, other)]

    def extra_proposal_txs(self) -> list[SignedTransaction]:
        bad = self.sim.bad_tx(self.id)
        return [bad] if bad is not None else []

    def on_committed(self, block):
        self.sim.after_commit(self)


class Simulator:
    def __init__(self, sim: SimRun):
        self.sim = sim
        self.now = 0
        self.rng = random.Random(sim.seed)
        self._queue: list = []
        self._seq = 0
        self.events: list[Event] = []
        self._check_nodes(sim)
        self.configs = {n.id: n for n in sim.nodes}
        self.behaviors = {n.id: n.behavior for n in sim.nodes}
        self.participants = {
            n.id: Participant(n.id, n.role, n.der_level, key_for(n.id).public_key) for n in sim.nodes
        }
        self.keys = {pid: p.public_key for pid, p in self.participants.items()}
        validators = tuple(sorted(n.id for n in sim.nodes if n.is_validator))
        f = sim.f if sim.f is not None else (len(validators) - 1) // 3
        self.cfg = ConsensusConfig(validators, f, sim.round_timeout, sim.max_block_txs, sim.tx_ttl)
        self.replicas: dict[str, SimReplica] = {}
        for vid in validators:
            r = SimReplica(vid, self.cfg, self.participants, self.keys, key_for(vid), self)
            r.sim = self
            r.behavior = self.behaviors[vid].kind.value
            self.replicas[vid] = r
        self.ever_byzantine = {nid for nid, b in self.behaviors.items() if b.kind is not BehaviorKind.HONEST}
        self.guarantees_void = False
        self.groups: Optional[dict[str, int]] = None
        self.nonces: dict[str, int] = {}
        self.submitted: dict[str, int] = {}
        self.tampered: set[str] = set()
        self._forge_count = 0

    @staticmethod
    def _check_nodes(sim: SimRun):
        ids = [n.id for n in sim.nodes]
        if len(set(ids)) != len(ids):
            raise ConfigError("duplicate node ids")
        for n in sim.nodes:
            try:
                Participant(n.id, n.role, n.der_level)
            except ValueError as exc:
                raise ConfigError(str(exc)) from exc
            if n.is_validator and n.der_level < 3:
                raise ConfigError(f"{n.id}: levels 1-2 are clients, not validators")
            if n.behavior.kind is BehaviorKind.DOUBLE_SPEND_ATTEMPT:
                raise ConfigError(f"{n.id}: DoubleSpendAttempt must be scheduled with an inject event")
        lo, hi = sim.latency
        if lo < 0 or hi < lo:
            raise ConfigError(f"bad latency range [{lo},{hi}]")
        known = set(ids)
        last = -1
        for ev in sim.faults:
            if ev.tick < last:
                raise ConfigError("fault events must be sorted by tick")
            last = ev.tick
            if isinstance(ev, PartitionAt):
                for g in ev.groups:
                    if not g <= known:
                        raise ConfigError(f"partition names unknown nodes {sorted(g - known)}")
            if isinstance(ev, InjectAt) and ev.node not in known:
                raise ConfigError(f"inject names unknown node {ev.node}")
        for item in sim.workload:
            if item.signer not in known:
                raise ConfigError(f"workload signer {item.signer} is not a node")

    # -- Network protocol used by replicas --

    def log(self, node: str, kind: str, details: str) -> None:
        self.events.append(Event(self.now, node, kind, details))

    def _push(self, tick: int, kind: str, *data):
        heapq.heappush(self._queue, (tick, self._seq, kind, data))
        self._seq += 1

    def send(self, sender: str, to: str, msg: Message) -> None:
        delay = 0 if sender == to else self.rng.randint(*self.sim.latency)
        self._push(self.now + delay, "deliver", sender, to, msg)

    def broadcast(self, sender: str, msg: Message) -> None:
        for vid in self.cfg.validators:
            self.send(sender, vid, msg)

    def set_timer(self, node: str, delay: int, height: int, round: int) -> None:
        self._push(self.now + delay, "timer", node, height, round)

    # -- faults --

    def connected(self, a: str, b: str) -> bool:
        if self.groups is None or a == b:
            return True
        ga, gb = self.groups.get(a), self.groups.get(b)
        return ga is None or gb is None or ga == gb

    def inject(self, ev: FaultEvent) -> None:
        if isinstance(ev, PartitionAt):
            self.groups = {nid: i for i, g in enumerate(ev.groups) for nid in g}
            self.log("net", "partition", " | ".join(",".join(sorted(g)) for g in ev.groups))
        elif isinstance(ev, HealAt):
            self.groups = None
            self.log("net", "heal", "")
        else:
            self.behaviors[ev.node] = ev.behavior
            self.log(ev.node, "inject", f"behavior={ev.behavior}")
            if ev.behavior.kind is not BehaviorKind.HONEST:
                self.ever_byzantine.add(ev.node)
            if ev.node in self.replicas:
                self.replicas[ev.node].behavior = ev.behavior.kind.value
            self._check_byzantine()
            self._trigger(ev.node)

    def _check_byzantine(self):
        byz = sorted(v for v in self.cfg.validators if v in self.ever_byzantine)
        if len(byz) > self.cfg.f and not self.guarantees_void:
            self.guarantees_void = True
            self.log("net", "byzantine-limit-exceeded", f"byzantine={','.join(byz)} f={self.cfg.f}")

    def _trigger(self, node: str):
        b = self.behaviors[node]
        if b.kind is BehaviorKind.TAMPER_STORED_BLOCK and node in self.replicas:
            self._maybe_tamper(self.replicas[node])
        elif b.kind in (BehaviorKind.FORGE_TRANSACTION, BehaviorKind.REPLAY_TRANSACTION):
            tx = self.bad_tx(node)
            if tx is not None:
                self._submit(node, tx)
        elif b.kind is BehaviorKind.DOUBLE_SPEND_ATTEMPT:
            self._double_spend(node, str(b.arg))

    def reference(self) -> Replica:
        for vid in self.cfg.validators:
            if vid not in self.ever_byzantine:
                return self.replicas[vid]
        return self.replicas[self.cfg.validators[0]]

    def next_nonce(self, signer: str) -> int:
        self.nonces[signer] = self.nonces.get(signer, 0) + 1
        return self.nonces[signer]

    def bad_tx(self, node: str) -> Optional[SignedTransaction]:
        """A forged or replayed transaction when ``node`` behaves that way."""
        kind = self.behaviors[node].kind
        view = self.replicas.get(node) or self.reference()
        if kind is BehaviorKind.FORGE_TRANSACTION:
            victim = next(p for p in sorted(self.participants) if p != node)
            owned = sorted(t for t, c in view.registry.certificates.items() if c.owner == victim)
            target = owned[0] if owned else sha256(b"forged" + victim.encode()).hex()
            self._forge_count += 1
            payload = Trade(target, node)
            # signed with the forger's own key while claiming the victim as signer
            return sign_transaction(payload, victim, 10**9 + self._forge_count, key_for(node))
        if kind is BehaviorKind.REPLAY_TRANSACTION:
            for block in reversed(view.chain.blocks):
                if block.transactions:
                    return block.transactions[0]
        return None

    def after_commit(self, replica: SimReplica):
        b = self.behaviors[replica.id]
        if b.kind is BehaviorKind.TAMPER_STORED_BLOCK:
            self._maybe_tamper(replica)
        elif b.kind in (BehaviorKind.FORGE_TRANSACTION, BehaviorKind.REPLAY_TRANSACTION):
            tx = self.bad_tx(replica.id)
            if tx is not None:
                self._submit(replica.id, tx)

    def _maybe_tamper(self, replica: SimReplica):
        # only buried blocks are rewritten; the live head keeps its link hash
        h = int(self.behaviors[replica.id].arg)
        if replica.id in self.tampered or replica.chain.height <= h:
            return
        self.tampered.add(replica.id)
        blocks = list(replica.chain.blocks)
        original = blocks[h]
        if original.transactions:
            tx = original.transactions[0]
            forged = dataclasses.replace(tx, nonce=tx.nonce + 1)
            tampered = dataclasses.replace(original, transactions=(forged,) + original.transactions[1:])
        else:
            tampered = dataclasses.replace(original, proposed_at=original.proposed_at + 1)
        blocks[h] = tampered
        replica.chain = Chain(tuple(blocks), replica.chain.nonces)
        self.log(replica.id, "tamper", f"height={h}")

    def _double_spend(self, node: str, tracking_id: str):
        others = sorted(p for p, part in self.participants.items()
                        if p != node and part.role not in NON_HOLDING_ROLES)
        key = key_for(node)
        retire = sign_transaction(Retire(tracking_id, RetirementReason.PUBLIC_CLAIM), node, self.next_nonce(node), key)
        trade = sign_transaction(Trade(tracking_id, others[0]), node, self.next_nonce(node), key)
        half = len(self.cfg.validators) // 2
        for tx, targets in ((retire, self.cfg.validators[:half]), (trade, self.cfg.validators[half:])):
            self.submitted.setdefault(tx.digest.hex(), self.now)
            self.log(node, "submit", tx_details(tx) + " to=" + ",".join(targets))
            for vid in targets:
                self.send(node, vid, TxMessage(tx))

    def _submit(self, node: str, tx: SignedTransaction):
        self.submitted.setdefault(tx.digest.hex(), self.now)
        self.log(node, "submit", tx_details(tx))
        self.broadcast(node, TxMessage(tx))

    # -- main loop --

    def run(self) -> SimReport:
        for item in self.sim.workload:
            self._push(item.tick, "workload", item)
        for ev in self.sim.faults:
            self._push(ev.tick, "fault", ev)
        self._check_byzantine()
        for nid in sorted(self.replicas):
            if self.behaviors[nid].kind is BehaviorKind.TAMPER_STORED_BLOCK:
                self.log(nid, "inject", f"behavior={self.behaviors[nid]}")
        while self._queue and self._queue[0][0] <= self.sim.tick_limit:
            tick, _, kind, data = heapq.heappop(self._queue)
            self.now = tick
            if kind == "deliver":
                sender, to, msg = data
                if not self.connected(sender, to):
                    self.log(to, "drop", f"from={sender} msg={type(msg).__name__}")
                    continue
                self.replicas[to].on_message(sender, msg)
            elif kind == "timer":
                node, height, rnd = data
                self.replicas[node].on_timer(height, rnd)
            elif kind == "workload":
                item = data[0]
                tx = sign_transaction(item.payload, item.signer, self.next_nonce(item.signer), key_for(item.signer))
                self._submit(item.signer, tx)
            else:
                self.inject(data[0])
        return self._report()

    def _report(self) -> SimReport:
        check = qc_checker(self.cfg, self.keys)
        for vid in self.cfg.validators:
            verdict = verify_chain(self.replicas[vid].chain.blocks, self.keys, check)
            if not verdict.valid:
                self.log(vid, "tamper-detected", f"verdict={verdict} by=auditor")
        honest = [v for v in self.cfg.validators if v not in self.ever_byzantine]
        byzantine = [v for v in self.cfg.validators if v in self.ever_byzantine]
        violations = []
        max_h = max((self.replicas[v].chain.height for v in honest), default=0)
        for h in range(1, max_h + 1):
            seen = {}
            for v in honest:
                blocks = self.replicas[v].chain.blocks
                if h < len(blocks):
                    seen.setdefault(blocks[h].hash.hex(), v)
            if len(seen) > 1:
                violations.append(f"height {h}: " + " vs ".join(f"{v}={d[:16]}" for d, v in sorted(seen.items())))
        decided: dict[int, int] = {}
        for v in honest:
            for h, r in self.replicas[v].decided_rounds.items():
                decided[h] = max(decided.get(h, 0), r)
        commit_tick: dict[str, int] = {}
        for v in honest:
            rep = self.replicas[v]
            for block in rep.chain.blocks[1:]:
                t = rep.commit_ticks.get(block.height)
                for tx in block.transactions:
                    d = tx.digest.hex()
                    if t is not None and (d not in commit_tick or t < commit_tick[d]):
                        commit_tick[d] = t
        latencies = {d: commit_tick[d] - s for d, s in sorted(self.submitted.items()) if d in commit_tick}
        rejected: dict[str, str] = {}
        for e in self.events:
            if e.kind.startswith("reject.") and e.node in honest:
                d = parse_details(e.details).get("tx")
                if d and d not in commit_tick:
                    rejected.setdefault(d, e.kind[len("reject."):])
        uncommitted = sorted(d for d in self.submitted if d not in commit_tick and d not in rejected)
        flagged = sorted({v for vid in honest for v in self.replicas[vid].flagged})
        return SimReport(
            seed=self.sim.seed,
            final_tick=self.now,
            chain_digests={v: self.replicas[v].chain.digest() for v in self.cfg.validators},
            heights={v: self.replicas[v].chain.height for v in self.cfg.validators},
            honest=honest,
            byzantine=byzantine,
            flagged=flagged,
            commit_latencies=latencies,
            rejected=rejected,
            uncommitted=uncommitted,
            decided_rounds=decided,
            safety_violations=violations,
            conservation_failures=sum(self.replicas[v].conservation_failures for v in honest),
            guarantees_void=self.guarantees_void,
            events=list(self.events),
            chains={v: self.replicas[v].chain for v in self.cfg.validators},
            registries={v: self.replicas[v].registry for v in self.cfg.validators},
            participants=dict(self.participants),
            config=self.cfg,
        )


def inject_fault(state: Simulator, event: FaultEvent) -> Simulator:
    """Apply a fault event to a running simulation at its current tick."""
    if event.tick < state.now:
        raise ValueError(f"fault at tick {event.tick} is in the past (now {state.now})")
    state.inject(event)
    return state


def run(sim: SimRun) -> SimReport:
    return Simulator(sim).run()
