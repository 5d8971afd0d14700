"""Quorum consensus among permissioned validators.

Heights are decided one at a time. Each round has a round-robin leader that
proposes a block; validators prevote, lock on a block once a prevote quorum
forms, precommit, and commit when a precommit quorum (the quorum certificate)
exists for a round. A fixed tick budget per round moves everyone to the next
round when a leader is slow, silent or partitioned away. Locks keep two
quorum certificates at one height from ever naming different blocks while at
most f of n validators are Byzantine.
"""

from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass, field
from enum import IntEnum
from typing import Iterable, Mapping, Optional, Protocol, Sequence, Union

from .core import LifecycleError, Participants, PERMANENT_ERRORS, RegistryState, Retire, Trade, apply, referenced_ids
from .crypto import SigningKey
from .ledger import Chain, ChainError, ChainErrorCode, LedgerBlock, SignedTransaction, append_block, make_block, merkle_root
from .quorum import NIL, QuorumCertificate, Vote, VoteKind, sign_vote


class EmptyValidatorSet(ValueError):
    pass


class ConfigError(ValueError):
    pass


def leader_for(height: int, round: int, validators: Sequence[str]) -> str:
    if not validators:
        raise EmptyValidatorSet("no validators configured")
    return validators[(height + round) % len(validators)]


def quorum_size(n: int, f: int) -> int:
    """Smallest vote count whose any two sets share an honest validator (2f+1 when n = 3f+1)."""
    return (n + f) // 2 + 1


@dataclass(frozen=True)
class ConsensusConfig:
    validators: tuple[str, ...]
    f: int
    round_timeout: int = 10
    max_block_txs: int = 64
    tx_ttl: int = 200
    # how long a proposer waits for a missing lower nonce before skipping it
    nonce_gap_grace: int = 30

    def __post_init__(self):
        if not self.validators:
            raise ConfigError("no validators configured")
        if list(self.validators) != sorted(set(self.validators)):
            raise ConfigError("validator set must be sorted and distinct")
        if self.f < 0 or len(self.validators) < 3 * self.f + 1:
            raise ConfigError(f"f={self.f} too large for n={len(self.validators)} validators")
        if self.round_timeout < 1:
            raise ConfigError("round_timeout must be positive")

    @property
    def n(self) -> int:
        return len(self.validators)

    @property
    def quorum(self) -> int:
        return quorum_size(self.n, self.f)


# --- votes and quorum certificates ----------------------------------------


@dataclass(frozen=True)
class VoteTally:
    qc: Optional[QuorumCertificate]
    equivocators: frozenset[str]

    @property
    def pending(self) -> bool:
        return self.qc is None


def collect_votes(votes: Iterable[Vote], n: int, f: int, flagged: Iterable[str] = ()) -> VoteTally:
    """Assemble a quorum certificate from individually valid votes.

    A voter that signed two different hashes for the same (kind, height,
    round) is reported as an equivocator and all of its votes are discarded.
    """
    flagged = set(flagged)
    by_slot: dict[tuple, dict[str, set[bytes]]] = defaultdict(lambda: defaultdict(set))
    votes = list(votes)
    for v in votes:
        by_slot[(v.kind, v.height, v.round)][v.voter].add(v.block_hash)
    equivocators = {
        voter for slot in by_slot.values() for voter, hashes in slot.items() if len(hashes) > 1
    }
    excluded = flagged | equivocators
    groups: dict[tuple, dict[str, Vote]] = defaultdict(dict)
    for v in votes:
        if v.voter not in excluded:
            groups[(v.kind, v.height, v.round, v.block_hash)].setdefault(v.voter, v)
    q = quorum_size(n, f)
    best = None
    for key in sorted(groups, key=lambda k: (-len(groups[k]), k[1], k[2], k[3])):
        if len(groups[key]) >= q:
            best = key
            break
    qc = None
    if best is not None:
        _, h, r, block_hash = best
        chosen = tuple(groups[best][voter] for voter in sorted(groups[best]))
        qc = QuorumCertificate(h, r, block_hash, chosen)
    return VoteTally(qc, frozenset(equivocators))


def check_qc(block: LedgerBlock, qc: Optional[QuorumCertificate], cfg: ConsensusConfig, keys: Mapping[str, bytes]) -> bool:
    if qc is None or block.proposer not in cfg.validators:
        return False
    if qc.height != block.height or qc.block_hash != block.hash:
        return False
    voters = set()
    for v in qc.votes:
        if v.kind is not VoteKind.PRECOMMIT or v.voter not in cfg.validators or v.voter in voters:
            return False
        if (v.height, v.round, v.block_hash) != (qc.height, qc.round, qc.block_hash):
            return False
        if not v.verify(keys.get(v.voter, b"")):
            return False
        voters.add(v.voter)
    return len(voters) >= cfg.quorum


def qc_checker(cfg: ConsensusConfig, keys: Mapping[str, bytes]):
    return lambda block: check_qc(block, block.quorum_cert, cfg, keys)


def commit(chain: Chain, block: LedgerBlock, qc: QuorumCertificate, cfg: ConsensusConfig, keys: Mapping[str, bytes]) -> Chain:
    """Attach ``qc`` and append; raises ``ChainError`` (BadQuorumCert first)."""
    if not check_qc(block, qc, cfg, keys):
        raise ChainError(ChainErrorCode.BAD_QUORUM_CERT, len(chain.blocks))
    return append_block(chain, block.with_qc(qc), keys, qc_checker(cfg, keys))


# --- proposals -------------------------------------------------------------


@dataclass(frozen=True)
class Proposal:
    block: LedgerBlock
    round: int
    proposer: str
    valid_round: int = -1


@dataclass(frozen=True)
class RejectReason:
    code: str  # BadLink | BadTx | WrongLeader
    index: Optional[int] = None
    error: str = ""

    def __str__(self):
        if self.code == "BadTx":
            return f"BadTx({self.index}, {self.error})"
        return self.code


def replay_block(registry: RegistryState, block: LedgerBlock, participants: Participants) -> RegistryState:
    """Fold a block's transactions through the lifecycle; errors carry the tx index."""
    for i, tx in enumerate(block.transactions):
        try:
            registry = apply(registry, tx.payload, tx.signer, block.proposed_at, participants)
        except LifecycleError as err:
            err.index = i
            raise
    return registry


def evaluate_block(block: LedgerBlock, chain: Chain, registry: RegistryState, participants: Participants,
                   keys: Mapping[str, bytes]) -> Optional[RejectReason]:
    if block.height != chain.height + 1 or block.prev_hash != chain.head.hash:
        return RejectReason("BadLink")
    if block.tx_root != merkle_root(block.transactions):
        return RejectReason("BadLink", error="BadTxRoot")
    nonces = dict(chain.nonces)
    for i, tx in enumerate(block.transactions):
        if not tx.verify(keys.get(tx.signer)):
            return RejectReason("BadTx", i, ChainErrorCode.BAD_SIGNATURE.value)
        if tx.nonce <= nonces.get(tx.signer, 0):
            return RejectReason("BadTx", i, ChainErrorCode.STALE_NONCE.value)
        nonces[tx.signer] = tx.nonce
        try:
            registry = apply(registry, tx.payload, tx.signer, block.proposed_at, participants)
        except LifecycleError as err:
            return RejectReason("BadTx", i, err.code.value)
    return None


def evaluate_proposal(proposal: Proposal, chain: Chain, registry: RegistryState, cfg: ConsensusConfig,
                      participants: Participants, keys: Mapping[str, bytes], voter: str,
                      key: SigningKey) -> Union[Vote, RejectReason]:
    """Prevote for a proposal that links to ``chain`` and replays cleanly."""
    if proposal.proposer != leader_for(proposal.block.height, proposal.round, cfg.validators):
        return RejectReason("WrongLeader")
    reason = evaluate_block(proposal.block, chain, registry, participants, keys)
    if reason is not None:
        return reason
    return sign_vote(VoteKind.PREVOTE, key, voter, proposal.block.height, proposal.round, proposal.block.hash)


@dataclass
class Screened:
    accepted: list[SignedTransaction]
    rejected: list[tuple[SignedTransaction, str]]  # permanently invalid
    deferred: list[SignedTransaction]  # may become valid later
    why_deferred: dict[bytes, str] = field(default_factory=dict)


def screen_transactions(txs: Iterable[SignedTransaction], chain: Chain, registry: RegistryState,
                        participants: Participants, keys: Mapping[str, bytes], tick: int,
                        limit: Optional[int] = None, arrivals: Optional[Mapping[bytes, int]] = None,
                        gap_grace: int = 0) -> Screened:
    """Sequentially validate pending transactions in (signer, nonce) order.

    With ``arrivals`` given, a transaction that skips a nonce is held back
    until ``gap_grace`` ticks after it arrived, so a late predecessor is not
    made stale by network reordering.
    """
    out = Screened([], [], [])
    nonces = dict(chain.nonces)
    for tx in sorted(txs, key=lambda t: (t.signer, t.nonce, t.digest)):
        if limit is not None and len(out.accepted) >= limit:
            out.deferred.append(tx)
            continue
        if not tx.verify(keys.get(tx.signer)):
            out.rejected.append((tx, ChainErrorCode.BAD_SIGNATURE.value))
            continue
        if tx.nonce <= chain.last_nonce(tx.signer):
            out.rejected.append((tx, ChainErrorCode.STALE_NONCE.value))
            continue
        if tx.nonce <= nonces.get(tx.signer, 0):
            out.deferred.append(tx)
            continue
        if (arrivals is not None and tx.nonce > nonces.get(tx.signer, 0) + 1
                and tick - arrivals.get(tx.digest, tick) < gap_grace):
            out.deferred.append(tx)
            continue
        try:
            registry = apply(registry, tx.payload, tx.signer, tick, participants)
        except LifecycleError as err:
            if err.code in PERMANENT_ERRORS:
                out.rejected.append((tx, err.code.value))
            else:
                out.deferred.append(tx)
                out.why_deferred[tx.digest] = err.code.value
            continue
        nonces[tx.signer] = tx.nonce
        out.accepted.append(tx)
    return out


def tx_details(tx: SignedTransaction, reason: str = "") -> str:
    refs = referenced_ids(tx.payload)
    parts = []
    if reason:
        parts.append(f"reason={reason}")
    parts += [
        f"tx={tx.digest.hex()}",
        f"op={tx.payload.KIND}",
        f"signer={tx.signer}",
        f"nonce={tx.nonce}",
        f"ref={refs[0] if refs else '-'}",
    ]
    return " ".join(parts)


# --- node state machine ----------------------------------------------------


class Step(IntEnum):
    PROPOSE = 0
    PREVOTE = 1
    PRECOMMIT = 2


@dataclass(frozen=True)
class TxMessage:
    tx: SignedTransaction


@dataclass(frozen=True)
class CommitNotice:
    block: LedgerBlock  # carries its quorum certificate


Message = Union[Proposal, Vote, TxMessage, CommitNotice]


class Network(Protocol):
    now: int

    def broadcast(self, sender: str, msg: Message) -> None: ...

    def send(self, sender: str, to: str, msg: Message) -> None: ...

    def set_timer(self, node: str, delay: int, height: int, round: int) -> None: ...

    def log(self, node: str, kind: str, details: str) -> None: ...


class Replica:
    """One validator's consensus and mempool state, driven by the event loop."""

    def __init__(self, node_id: str, cfg: ConsensusConfig, participants: Participants,
                 keys: Mapping[str, bytes], key: SigningKey, net: Network):
        self.id = node_id
        self.cfg = cfg
        self.participants = participants
        self.keys = keys
        self.key = key
        self.net = net
        self.behavior = "Honest"
        self.chain = Chain.genesis()
        self.registry = RegistryState()
        self.mempool: dict[bytes, tuple[SignedTransaction, int]] = {}
        # digests that arrived again while the first copy was still pending
        self.resubmitted: set[bytes] = set()
        self.flagged: set[str] = set()
        self.decided_rounds: dict[int, int] = {}
        self.commit_ticks: dict[int, int] = {}
        self.conservation_failures = 0
        self.future: dict[int, list[tuple[str, Message]]] = defaultdict(list)
        self._notices_sent: set[tuple[str, int, int]] = set()
        self._reset_height()

    # -- height bookkeeping --

    @property
    def height(self) -> int:
        return self.chain.height + 1

    def _reset_height(self):
        self.round = 0
        self.step = Step.PROPOSE
        self.active = False
        self.proposed: set[int] = set()
        self.locked: Optional[tuple[LedgerBlock, int]] = None
        self.valid: Optional[tuple[LedgerBlock, int]] = None
        self.proposals: dict[int, Proposal] = {}
        self.books: dict[tuple[VoteKind, int], dict[str, Vote]] = defaultdict(dict)
        self.round_senders: dict[int, set[str]] = defaultdict(set)
        self.polka_seen: set[int] = set()
        self.sent: set[tuple[VoteKind, int]] = set()
        self._valid_cache: dict[bytes, Optional[RejectReason]] = {}

    @property
    def byzantine(self) -> bool:
        return self.behavior != "Honest"

    def activate(self):
        if not self.active:
            self.active = True
            self.start_round(self.round)

    # -- inputs --

    def on_message(self, sender: str, msg: Message):
        if isinstance(msg, TxMessage):
            self.on_tx(msg.tx)
            return
        if isinstance(msg, CommitNotice):
            self.on_commit_notice(msg.block)
            return
        h = msg.block.height if isinstance(msg, Proposal) else msg.height
        if h < self.height:
            self._help_laggard(sender, h, msg.round)
            return
        if h > self.height:
            self.future[h].append((sender, msg))
            # we are behind: start emitting so peers notice and send commits
            if not self.active:
                self.activate()
            return
        if isinstance(msg, Proposal):
            self.activate()
            self.on_proposal(msg)
        else:
            # nil votes alone never wake an idle node, or idle peers would ping-pong forever
            if msg.block_hash != NIL:
                self.activate()
            self.on_vote(msg)
        self._progress()

    def on_tx(self, tx: SignedTransaction):
        if tx.digest in self.mempool:
            self.resubmitted.add(tx.digest)
            return
        if not tx.verify(self.keys.get(tx.signer)):
            self.net.log(self.id, "reject.BadSignature", tx_details(tx))
            return
        if tx.nonce <= self.chain.last_nonce(tx.signer):
            self.net.log(self.id, "reject.StaleNonce", tx_details(tx))
            return
        self.mempool[tx.digest] = (tx, self.net.now)
        if not self.active:
            self.activate()
        else:
            self._try_propose()

    def on_proposal(self, p: Proposal):
        if p.round in self.proposals:
            return
        if p.proposer != leader_for(self.height, p.round, self.cfg.validators):
            self.net.log(self.id, "proposal-rejected", f"height={self.height} round={p.round} from={p.proposer} reason=WrongLeader")
            return
        self.proposals[p.round] = p
        self.round_senders[p.round].add(p.proposer)
        reason = self._evaluate(p.block)
        if reason is not None:
            self.net.log(self.id, "proposal-rejected", f"height={self.height} round={p.round} from={p.proposer} reason={reason}")

    def on_vote(self, v: Vote):
        if v.voter not in self.cfg.validators or v.voter in self.flagged:
            return
        if not v.verify(self.keys.get(v.voter, b"")):
            self.net.log(self.id, "vote-rejected", f"voter={v.voter} height={v.height} round={v.round}")
            return
        book = self.books[(v.kind, v.round)]
        prior = book.get(v.voter)
        if prior is not None:
            if prior.block_hash != v.block_hash and v.voter != self.id:
                self._flag(v.voter, v)
            return
        book[v.voter] = v
        self.round_senders[v.round].add(v.voter)

    def _flag(self, voter: str, v: Vote):
        self.flagged.add(voter)
        for book in self.books.values():
            book.pop(voter, None)
        self.net.log(self.id, "equivocation-detected",
                     f"voter={voter} height={v.height} round={v.round} kind={v.kind.value}")

    def on_commit_notice(self, block: LedgerBlock):
        if block.height > self.height:
            self.future[block.height].append(("", CommitNotice(block)))
            return
        if block.height < self.height or block.quorum_cert is None:
            return
        if not check_qc(block, block.quorum_cert, self.cfg, self.keys):
            return
        if self._evaluate(block) is not None:
            self.net.log(self.id, "sync-rejected", f"height={block.height}")
            return
        self._decide(block, block.quorum_cert, synced=True)

    def on_timer(self, height: int, round: int):
        if height != self.height or round != self.round or not self.active:
            return
        self.net.log(self.id, "timeout", f"height={height} round={round} step={self.step.name.lower()}")
        if self.step is Step.PROPOSE:
            self._cast(VoteKind.PREVOTE, NIL)
            self.step = Step.PREVOTE
        if self.step is Step.PREVOTE:
            self._cast(VoteKind.PRECOMMIT, NIL)
            self.step = Step.PRECOMMIT
        if not self.mempool and self.locked is None and self.valid is None:
            # nothing to order: go idle until a transaction or proposal arrives
            self.active = False
            self.round = round + 1
            self.step = Step.PROPOSE
            self.net.log(self.id, "idle", f"height={height} round={round + 1}")
            return
        self.start_round(round + 1)
        self._progress()

    # -- protocol --

    def start_round(self, r: int):
        self.round = r
        self.step = Step.PROPOSE
        if r > 0:
            self.net.log(self.id, "new-round", f"height={self.height} round={r}")
        self.net.set_timer(self.id, self.cfg.round_timeout, self.height, r)
        self.prune()
        self._try_propose()

    def _try_propose(self):
        r = self.round
        if (not self.active or self.step is not Step.PROPOSE or r in self.proposed
                or leader_for(self.height, r, self.cfg.validators) != self.id):
            return
        if self.valid is not None:
            block, vr = self.valid
        else:
            block, vr = self.build_block(), -1
        if block is None:
            return
        self.proposed.add(r)
        self.net.log(self.id, "propose",
                     f"height={block.height} round={r} block={block.hash.hex()[:16]} txs={len(block.transactions)}")
        self.net.broadcast(self.id, Proposal(block, r, self.id, vr))

    def build_block(self) -> Optional[LedgerBlock]:
        screened = screen_transactions((t for t, _ in self.mempool.values()), self.chain, self.registry,
                                       self.participants, self.keys, self.net.now, self.cfg.max_block_txs,
                                       {d: t for d, (_, t) in self.mempool.items()}, self.cfg.nonce_gap_grace)
        self._drop(screened.rejected)
        txs = list(screened.accepted) + self.extra_proposal_txs()
        if not txs:
            return None
        return make_block(self.height, self.chain.head.hash, txs, self.id, self.net.now)

    def extra_proposal_txs(self) -> list[SignedTransaction]:
        """Hook for Byzantine proposers; honest leaders add nothing."""
        return []

    def prune(self):
        screened = screen_transactions((t for t, _ in self.mempool.values()), self.chain, self.registry,
                                       self.participants, self.keys, self.net.now)
        self._drop(screened.rejected)
        now = self.net.now
        expired = [(tx, "Expired") for tx, arrived in self.mempool.values() if now - arrived > self.cfg.tx_ttl]
        self._drop(expired)

    def _drop(self, rejected):
        for tx, reason in rejected:
            if self.mempool.pop(tx.digest, None) is not None:
                self.net.log(self.id, f"reject.{reason}", tx_details(tx))

    def _evaluate(self, block: LedgerBlock) -> Optional[RejectReason]:
        if block.hash not in self._valid_cache:
            self._valid_cache[block.hash] = evaluate_block(block, self.chain, self.registry, self.participants, self.keys)
        return self._valid_cache[block.hash]

    def _tally(self, kind: VoteKind, r: int) -> VoteTally:
        return collect_votes(self.books[(kind, r)].values(), self.cfg.n, self.cfg.f, self.flagged)

    def _quorum_any(self, kind: VoteKind, r: int) -> bool:
        return len(self.books[(kind, r)]) >= self.cfg.quorum

    def _cast(self, kind: VoteKind, block_hash: bytes):
        if (kind, self.round) in self.sent:
            return
        self.sent.add((kind, self.round))
        vote = sign_vote(kind, self.key, self.id, self.height, self.round, block_hash)
        label = block_hash.hex()[:16] if block_hash != NIL else "nil"
        self.net.log(self.id, kind.value, f"height={self.height} round={self.round} block={label}")
        self.net.broadcast(self.id, vote)
        for extra in self.extra_votes(vote):
            self.net.broadcast(self.id, extra)

    def extra_votes(self, vote: Vote) -> list[Vote]:
        """Hook for Byzantine voters; honest validators sign one vote per slot."""
        return []

    def _progress(self):
        while self.active and self._step_once():
            pass

    def _step_once(self) -> bool:
        # commit whenever some round holds a precommit quorum for a known valid proposal
        for r in sorted(self.proposals):
            tally = self._tally(VoteKind.PRECOMMIT, r)
            p = self.proposals[r]
            if tally.qc is not None and tally.qc.block_hash == p.block.hash and self._evaluate(p.block) is None:
                self._decide(p.block, tally.qc)
                return True
        # f+1 validators already in a later round: catch up
        for r in sorted(self.round_senders):
            if r > self.round and len(self.round_senders[r]) >= self.cfg.f + 1:
                self.start_round(r)
                return True
        p = self.proposals.get(self.round)
        if self.step is Step.PROPOSE and p is not None:
            ok = self._evaluate(p.block) is None
            bh = p.block.hash
            if p.valid_round < 0:
                vote = bh if ok and (self.locked is None or self.locked[0].hash == bh) else NIL
            elif p.valid_round < self.round and self._polka(p.valid_round, bh):
                vote = bh if ok and (self.locked is None or self.locked[1] <= p.valid_round
                                     or self.locked[0].hash == bh) else NIL
            else:
                vote = None
            if vote is not None:
                self._cast(VoteKind.PREVOTE, vote)
                self.step = Step.PREVOTE
                return True
        if p is not None and self.step >= Step.PREVOTE and self.round not in self.polka_seen:
            if self._polka(self.round, p.block.hash) and self._evaluate(p.block) is None:
                self.polka_seen.add(self.round)
                if self.step is Step.PREVOTE:
                    self.locked = (p.block, self.round)
                    self._cast(VoteKind.PRECOMMIT, p.block.hash)
                    self.step = Step.PRECOMMIT
                self.valid = (p.block, self.round)
                return True
        if self.step is Step.PREVOTE and self._polka(self.round, NIL):
            self._cast(VoteKind.PRECOMMIT, NIL)
            self.step = Step.PRECOMMIT
            return True
        return False

    def _polka(self, r: int, block_hash: bytes) -> bool:
        tally = self._tally(VoteKind.PREVOTE, r)
        return tally.qc is not None and tally.qc.block_hash == block_hash

    def _decide(self, block: LedgerBlock, qc: QuorumCertificate, synced: bool = False):
        try:
            new_chain = commit(self.chain, block, qc, self.cfg, self.keys)
        except ChainError as err:
            self.net.log(self.id, "commit-failed", f"height={block.height} error={err.code.value}")
            return
        self.registry = replay_block(self.registry, block, self.participants)
        self.chain = new_chain
        if not self.registry.conservation_ok():
            self.conservation_failures += 1
            self.net.log(self.id, "conservation-violation", f"height={block.height}")
        self.decided_rounds[block.height] = qc.round
        self.commit_ticks[block.height] = self.net.now
        for tx in block.transactions:
            self.mempool.pop(tx.digest, None)
        kind = "sync" if synced else "commit"
        self.net.log(self.id, kind, f"height={block.height} round={qc.round} block={block.hash.hex()[:16]} txs={len(block.transactions)}")
        for tx in block.transactions:
            if tx.digest in self.resubmitted:
                # the extra copy is now behind the committed nonce
                self.resubmitted.discard(tx.digest)
                self.net.log(self.id, "reject.StaleNonce", tx_details(tx))
        self.on_committed(block)
        self._reset_height()
        self.prune()
        if self.mempool:
            self.activate()
        for sender, msg in self.future.pop(self.height, []):
            self.on_message(sender, msg)
        for stale in [h for h in self.future if h < self.height]:
            del self.future[stale]

    def on_committed(self, block: LedgerBlock):
        """Hook called after each commit."""

    def _help_laggard(self, sender: str, height: int, round: int):
        key = (sender, height, round)
        if not sender or key in self._notices_sent or height < 1 or height > self.chain.height:
            return
        self._notices_sent.add(key)
        self.net.send(self.id, sender, CommitNotice(self.chain.blocks[height]))


def conflicting(a: SignedTransaction, b: SignedTransaction) -> bool:
    """Two transactions that both try to dispose of the same certificate."""
    disposals = (Retire, Trade)
    return (isinstance(a.payload, disposals) and isinstance(b.payload, disposals)
            and referenced_ids(a.payload) == referenced_ids(b.payload))
