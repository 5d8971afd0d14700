"""Shared builders for the test suite: participants, signed workloads and chains."""

from __future__ import annotations

import random
from typing import Optional

from recledger.consensus import ConsensusConfig, commit, replay_block, screen_transactions
from recledger.core import (
    Aggregate, CertificateType, ConsumptionReport, EMPTY_REGISTRY, EnergySource, Issue, Participant, Retire,
    RetirementReason, Role, SourceKind, StatusKind, Swap, Trade,
)
from recledger.crypto import key_for
from recledger.ledger import Chain, append_block, make_block, sign_transaction
from recledger.netsim import NodeConfig, SimRun, WorkloadItem, topology_template
from recledger.quorum import QuorumCertificate, VoteKind, sign_vote

SOLAR = EnergySource(SourceKind.SOLAR)
VALIDATORS4 = ("MKT1", "TS1", "TS2", "U1")


def participant(pid: str, role: Role, level: int) -> Participant:
    return Participant(pid, role, level, key_for(pid).public_key)


def people() -> dict[str, Participant]:
    table = [
        ("G1", Role.GENERATOR, 1), ("G2", Role.GENERATOR, 1), ("Br1", Role.BROKER, 2),
        ("B1", Role.BUYER, 1), ("B2", Role.BUYER, 1), ("M1", Role.MARKETER, 4),
        ("REG1", Role.REGULATOR, 5), ("MKT1", Role.TRADING_PLATFORM, 5), ("TS1", Role.TRADING_PLATFORM, 3),
        ("TS2", Role.TRADING_PLATFORM, 3), ("U1", Role.UTILITY, 4),
    ]
    return {pid: participant(pid, role, level) for pid, role, level in table}


def keys_of(participants) -> dict[str, bytes]:
    return {p: x.public_key for p, x in participants.items()}


def issue(generator: str = "G1", nonce: int = 0, at: int = 0, source: EnergySource = SOLAR, mwh: int = 1) -> Issue:
    return Issue(generator, "Mesa", CertificateType.VOLUNTARY, source, mwh, at, nonce)


def signed(payload, signer: str, nonce: int):
    return sign_transaction(payload, signer, nonce, key_for(signer))


def qc_for(block, voters, round_: int = 0) -> QuorumCertificate:
    votes = tuple(sign_vote(VoteKind.PRECOMMIT, key_for(v), v, block.height, round_, block.hash) for v in voters)
    return QuorumCertificate(block.height, round_, block.hash, votes)


class Nonces:
    def __init__(self):
        self.last: dict[str, int] = {}

    def __call__(self, signer: str) -> int:
        self.last[signer] = self.last.get(signer, 0) + 1
        return self.last[signer]


def chain_of(batches, cfg: Optional[ConsensusConfig] = None, participants=None) -> Chain:
    """Commit each batch of signed transactions as one block with a full QC."""
    cfg = cfg or ConsensusConfig(VALIDATORS4, 1)
    participants = participants or people()
    keys = keys_of(participants)
    chain = Chain.genesis()
    for i, txs in enumerate(batches):
        proposer = cfg.validators[i % cfg.n]
        block = make_block(chain.height + 1, chain.head.hash, txs, proposer, 10 * (i + 1))
        chain = commit(chain, block, qc_for(block, cfg.validators[:cfg.quorum]), cfg, keys)
    return chain


def random_chain(rng: random.Random, n_blocks: int, max_txs: int = 3) -> Chain:
    """A QC-certified chain of issuances and trades; some blocks are empty."""
    nonce = Nonces()
    owned: list[tuple[str, str]] = []
    batches = []
    serial = 0
    for _ in range(n_blocks):
        txs = []
        for _ in range(rng.randint(0, max_txs)):
            if owned and rng.random() < 0.4:
                owner, tid = owned.pop(rng.randrange(len(owned)))
                to = rng.choice([b for b in ("B1", "B2", "G2") if b != owner])
                txs.append(signed(Trade(tid, to), owner, nonce(owner)))
                owned.append((to, tid))
            else:
                p = issue("G1", serial, at=serial)
                serial += 1
                txs.append(signed(p, "G1", nonce("G1")))
                owned.append(("G1", p.tracking_id))
        batches.append(txs)
    return chain_of(batches)


# --- randomized workloads --------------------------------------------------

HOLDERS = ("G1", "G2", "Br1", "B1", "B2", "M1")


def random_payload(rng: random.Random, registry, known: list[str], issued: dict[str, int]):
    """A mixed bag of lifecycle actions; mostly by the current owner so retirements happen."""
    if rng.random() < 0.25 or not known:
        gen = rng.choice(("G1", "G2"))
        n = issued.get(gen, 0)
        issued[gen] = n + 1
        p = issue(gen, n, at=rng.randint(0, 3))
        known.append(p.tracking_id)
        return gen, p
    tid = rng.choice(known)
    cert = registry.certificates.get(tid)
    if cert is not None and rng.random() < 0.75:
        actor = cert.owner
    else:
        actor = rng.choice(HOLDERS + ("REG1",))
    other = rng.choice(HOLDERS)
    kind = rng.choice(("trade", "swap", "report", "report", "retire", "retire", "aggregate"))
    if kind == "trade":
        target = cert.status.parent if cert is not None and cert.status.parent and rng.random() < 0.5 else tid
        return actor, Trade(target, other)
    if kind == "swap":
        return actor, Swap(tid, other)
    if kind == "report":
        return actor, ConsumptionReport(tid, actor, 1)
    if kind == "aggregate":
        members = tuple(rng.sample(known, min(len(known), rng.randint(1, 3))))
        return "Br1", Aggregate("Br1", members)
    if actor == "REG1" or rng.random() < 0.1:
        return "REG1", Retire(tid, RetirementReason.STATUTORY)
    return actor, Retire(tid, rng.choice(list(RetirementReason)))


def target_of(payload) -> Optional[str]:
    if isinstance(payload, Trade):
        return payload.target
    if isinstance(payload, (Swap, Retire, ConsumptionReport)):
        return payload.tracking_id
    return None


def run_pipeline(seed: int, n_tx: int = 30, block_size: int = 5):
    """Screen, block and replay a random workload without the network.

    Returns (committed, rejected, retired_touch_violations) where the last
    entry lists committed transactions that touched an already retired cert.
    """
    rng = random.Random(seed)
    participants = people()
    keys = keys_of(participants)
    nonce = Nonces()
    known: list[str] = []
    issued: dict[str, int] = {}
    pending = []
    chain, registry = Chain.genesis(), EMPTY_REGISTRY
    committed, rejected, violations = [], [], []

    for step in range(n_tx):
        signer, payload = random_payload(rng, registry, known, issued)
        pending.append(signed(payload, signer, nonce(signer)))
        if len(pending) >= block_size or step == n_tx - 1:
            screened = screen_transactions(pending, chain, registry, participants, keys, chain.height)
            retired_before = {t for t, c in registry.certificates.items() if c.status.kind is StatusKind.RETIRED}
            # transient failures are final here: the next block starts from a fresh batch
            dropped = list(screened.rejected) + [(tx, screened.why_deferred[tx.digest]) for tx in screened.deferred]
            for tx, reason in dropped:
                rejected.append((tx, reason, target_of(tx.payload) in retired_before))
            if screened.accepted:
                block = make_block(chain.height + 1, chain.head.hash, screened.accepted, "MKT1", chain.height + 1)
                new_registry = replay_block(registry, block, participants)
                for tx in block.transactions:
                    if target_of(tx.payload) in retired_before:
                        violations.append(tx)
                chain = append_block(chain, block, keys, None)
                registry = new_registry
                committed += list(block.transactions)
            pending = []
    return committed, rejected, violations, chain, registry


# --- simulation runs -------------------------------------------------------


def client_nodes() -> list[NodeConfig]:
    return [NodeConfig("G1", Role.GENERATOR, 1, False), NodeConfig("B1", Role.BUYER, 1, False),
            NodeConfig("B2", Role.BUYER, 1, False)]


def simple_workload(count: int = 6, start: int = 1) -> tuple[WorkloadItem, ...]:
    items = []
    ids = []
    for i in range(count):
        p = issue("G1", i, at=i)
        ids.append(p.tracking_id)
        items.append(WorkloadItem(start + 2 * i, "G1", p))
    for i, tid in enumerate(ids[: count // 2]):
        items.append(WorkloadItem(start + 40 + i, "G1", Trade(tid, "B1")))
    return tuple(items)


def sim_for(levels: dict[int, int], seed: int, faults=(), workload=None, tick_limit: int = 400, **kw) -> SimRun:
    nodes = tuple(topology_template(levels)) + tuple(client_nodes())
    return SimRun(seed, nodes, workload if workload is not None else simple_workload(), tuple(faults), tick_limit, **kw)


N4 = {3: 2, 4: 1, 5: 1}
N7 = {3: 3, 4: 2, 5: 2}
