"""Hash-chained block store with Ed25519-signed transactions and Merkle proofs."""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from functools import cached_property
from typing import Callable, Iterable, Mapping, Optional, Sequence

from .core import Issue, Payload, read_payload
from .crypto import ZERO_DIGEST, SigningKey, sha256, verify
from .encoding import DecodeError, Reader, enc_bytes, enc_int, enc_list, enc_str
from .quorum import QuorumCertificate

LEAF_PREFIX = b"\x00"
NODE_PREFIX = b"\x01"
GENESIS_PROPOSER = "genesis"


@dataclass(frozen=True)
class SignedTransaction:
    payload: Payload
    signer: str
    nonce: int
    signature: bytes

    @staticmethod
    def signing_bytes(payload: Payload, signer: str, nonce: int) -> bytes:
        # the nonce is signed too, otherwise a replay could simply bump it
        return payload.encode() + enc_str(signer) + enc_int(nonce)

    def verify(self, public_key: Optional[bytes]) -> bool:
        if public_key is None:
            return False
        return verify(public_key, self.signing_bytes(self.payload, self.signer, self.nonce), self.signature)

    def encode(self) -> bytes:
        return self.payload.encode() + enc_str(self.signer) + enc_int(self.nonce) + enc_bytes(self.signature)

    @cached_property
    def digest(self) -> bytes:
        return sha256(self.encode())

    @classmethod
    def decode(cls, data: bytes) -> "SignedTransaction":
        r = Reader(data)
        tx = cls(read_payload(r), r.str(), r.int(), r.bytes())
        r.finish()
        return tx


def sign_transaction(payload: Payload, signer: str, nonce: int, key: SigningKey) -> SignedTransaction:
    sig = key.sign(SignedTransaction.signing_bytes(payload, signer, nonce))
    return SignedTransaction(payload, signer, nonce, sig)


# --- Merkle tree -----------------------------------------------------------


def leaf_hash(data: bytes) -> bytes:
    return sha256(LEAF_PREFIX + data)


def node_hash(left: bytes, right: bytes) -> bytes:
    return sha256(NODE_PREFIX + left + right)


def _next_level(level: list[bytes]) -> list[bytes]:
    if len(level) % 2:
        level = level + [level[-1]]
    return [node_hash(level[i], level[i + 1]) for i in range(0, len(level), 2)]


def merkle_root_of_leaves(leaves: Sequence[bytes]) -> bytes:
    if not leaves:
        return leaf_hash(b"")
    level = list(leaves)
    while len(level) > 1:
        level = _next_level(level)
    return level[0]


def merkle_root(txs: Iterable[SignedTransaction]) -> bytes:
    return merkle_root_of_leaves([leaf_hash(tx.encode()) for tx in txs])


@dataclass(frozen=True)
class MerkleProof:
    height: int
    index: int
    leaf_count: int
    # (sibling_is_left, sibling digest) from the leaf upwards
    path: tuple[tuple[bool, bytes], ...]


def merkle_path(leaves: Sequence[bytes], index: int) -> tuple[tuple[bool, bytes], ...]:
    if not 0 <= index < len(leaves):
        raise IndexError(index)
    path = []
    level = list(leaves)
    while len(level) > 1:
        if len(level) % 2:
            level = level + [level[-1]]
        sibling = index ^ 1
        path.append((sibling < index, level[sibling]))
        level = _next_level(level)
        index //= 2
    return tuple(path)


def verify_inclusion(root: bytes, proof: MerkleProof, leaf: bytes) -> bool:
    """Check that the canonical transaction bytes ``leaf`` sit under ``root``."""
    h = leaf_hash(leaf)
    for sibling_is_left, sibling in proof.path:
        h = node_hash(sibling, h) if sibling_is_left else node_hash(h, sibling)
    return h == root


# --- blocks ----------------------------------------------------------------


@dataclass(frozen=True)
class LedgerBlock:
    height: int
    prev_hash: bytes
    tx_root: bytes
    transactions: tuple[SignedTransaction, ...]
    proposer: str
    proposed_at: int
    quorum_cert: Optional[QuorumCertificate] = None

    def preimage(self) -> bytes:
        """Hashed block bytes; the quorum certificate is deliberately excluded."""
        return (
            enc_int(self.height)
            + enc_bytes(self.prev_hash)
            + enc_bytes(self.tx_root)
            + enc_list(tx.encode() for tx in self.transactions)
            + enc_str(self.proposer)
            + enc_int(self.proposed_at)
        )

    @cached_property
    def hash(self) -> bytes:
        return sha256(self.preimage())

    def encode(self) -> bytes:
        qc = self.quorum_cert.encode() if self.quorum_cert is not None else b""
        return self.preimage() + enc_bytes(qc)

    @classmethod
    def decode(cls, data: bytes) -> "LedgerBlock":
        r = Reader(data)
        height, prev_hash, tx_root = r.int(), r.bytes(), r.bytes()
        txs = tuple(SignedTransaction.decode(raw) for raw in r.list())
        proposer, proposed_at = r.str(), r.int()
        qc_raw = r.bytes()
        r.finish()
        qc = QuorumCertificate.decode(qc_raw) if qc_raw else None
        block = cls(height, prev_hash, tx_root, txs, proposer, proposed_at, qc)
        if block.encode() != bytes(data):
            raise DecodeError("non-canonical block encoding")
        return block

    def with_qc(self, qc: QuorumCertificate) -> "LedgerBlock":
        return LedgerBlock(self.height, self.prev_hash, self.tx_root, self.transactions,
                           self.proposer, self.proposed_at, qc)


def hash_block(block: LedgerBlock) -> bytes:
    return block.hash


def make_block(height: int, prev_hash: bytes, txs: Sequence[SignedTransaction], proposer: str, tick: int) -> LedgerBlock:
    txs = tuple(txs)
    return LedgerBlock(height, prev_hash, merkle_root(txs), txs, proposer, tick)


def genesis_block() -> LedgerBlock:
    return make_block(0, ZERO_DIGEST, (), GENESIS_PROPOSER, 0)


# --- chain -----------------------------------------------------------------


class ChainErrorCode(str, Enum):
    BAD_HEIGHT = "BadHeight"
    BAD_PREV_HASH = "BadPrevHash"
    BAD_TX_ROOT = "BadTxRoot"
    BAD_SIGNATURE = "BadSignature"
    STALE_NONCE = "StaleNonce"
    BAD_QUORUM_CERT = "BadQuorumCert"
    BAD_GENESIS = "BadGenesis"
    MALFORMED = "Malformed"


class ChainError(Exception):
    def __init__(self, code: ChainErrorCode, height: int, index: Optional[int] = None):
        where = f"height {height}" + (f", tx {index}" if index is not None else "")
        super().__init__(f"{code.value} at {where}")
        self.code = code
        self.height = height
        self.index = index


class NotFound(KeyError):
    pass


QcCheck = Callable[[LedgerBlock], bool]


@dataclass(frozen=True)
class Chain:
    blocks: tuple[LedgerBlock, ...] = ()
    nonces: Mapping[str, int] = field(default_factory=dict)

    @property
    def head(self) -> LedgerBlock:
        return self.blocks[-1]

    @property
    def height(self) -> int:
        return len(self.blocks) - 1

    def __len__(self):
        return len(self.blocks)

    def last_nonce(self, signer: str) -> int:
        return self.nonces.get(signer, 0)

    def digest(self) -> str:
        """Fingerprint of the stored history.

        Built from each block's recomputed hash, so it excludes quorum
        certificates (honest nodes may hold different vote subsets) but
        changes whenever any stored preimage is altered.
        """
        return sha256(b"".join(sha256(b.preimage()) for b in self.blocks)).hex()

    @classmethod
    def genesis(cls) -> "Chain":
        return cls((genesis_block(),))


def check_transactions(block: LedgerBlock, keys: Mapping[str, bytes], nonces: Mapping[str, int], position: int) -> dict[str, int]:
    """Verify signatures and nonce monotonicity; return the updated nonce map."""
    seen = dict(nonces)
    for i, tx in enumerate(block.transactions):
        if not tx.verify(keys.get(tx.signer)):
            raise ChainError(ChainErrorCode.BAD_SIGNATURE, position, i)
        if tx.nonce <= seen.get(tx.signer, 0):
            raise ChainError(ChainErrorCode.STALE_NONCE, position, i)
        seen[tx.signer] = tx.nonce
    return seen


def append_block(chain: Chain, block: LedgerBlock, keys: Mapping[str, bytes], check_qc: Optional[QcCheck]) -> Chain:
    """Return ``chain`` extended by ``block`` or raise ``ChainError``."""
    position = len(chain.blocks)
    if position == 0:
        if block.height != 0:
            raise ChainError(ChainErrorCode.BAD_HEIGHT, 0)
        if block.encode() != genesis_block().encode():
            raise ChainError(ChainErrorCode.BAD_GENESIS, 0)
        return Chain((block,), {})
    head = chain.head
    if block.height != head.height + 1:
        raise ChainError(ChainErrorCode.BAD_HEIGHT, position)
    if block.prev_hash != head.hash:
        raise ChainError(ChainErrorCode.BAD_PREV_HASH, position)
    if block.tx_root != merkle_root(block.transactions):
        raise ChainError(ChainErrorCode.BAD_TX_ROOT, position)
    nonces = check_transactions(block, keys, chain.nonces, position)
    if check_qc is not None and not check_qc(block):
        raise ChainError(ChainErrorCode.BAD_QUORUM_CERT, position)
    return Chain(chain.blocks + (block,), nonces)


@dataclass(frozen=True)
class ChainVerdict:
    height: Optional[int] = None
    reason: Optional[ChainErrorCode] = None

    @property
    def valid(self) -> bool:
        return self.reason is None

    def __str__(self):
        if self.valid:
            return "Valid"
        return f"InvalidAt({self.height}, {self.reason.value})"


VALID = ChainVerdict()


def build_chain(blocks: Iterable[LedgerBlock], keys: Mapping[str, bytes], check_qc: Optional[QcCheck]) -> Chain:
    chain = Chain()
    for block in blocks:
        chain = append_block(chain, block, keys, check_qc)
    return chain


def verify_chain(blocks: Iterable[LedgerBlock], keys: Mapping[str, bytes], check_qc: Optional[QcCheck]) -> ChainVerdict:
    """Re-verify every link, root, signature, nonce and quorum certificate."""
    try:
        build_chain(blocks, keys, check_qc)
    except ChainError as err:
        return ChainVerdict(err.height, err.code)
    return VALID


def decode_blocks(raw_blocks: Iterable[bytes]) -> tuple[list[LedgerBlock], Optional[ChainVerdict]]:
    """Decode raw block bytes, stopping at the first malformed one."""
    blocks = []
    for i, raw in enumerate(raw_blocks):
        try:
            blocks.append(LedgerBlock.decode(raw))
        except DecodeError:
            return blocks, ChainVerdict(i, ChainErrorCode.MALFORMED)
    return blocks, None


def verify_raw(raw_blocks: Sequence[bytes], keys: Mapping[str, bytes], check_qc: Optional[QcCheck]) -> ChainVerdict:
    blocks, malformed = decode_blocks(raw_blocks)
    verdict = verify_chain(blocks, keys, check_qc)
    if not verdict.valid:
        return verdict
    return malformed or VALID


def export_chain(blocks: Iterable[LedgerBlock]) -> str:
    return "".join(b.encode().hex() + "\n" for b in blocks)


def read_export(text: str) -> list[bytes]:
    """Raw block bytes from an export file; undecodable hex becomes an empty block."""
    out = []
    for line in text.splitlines():
        line = line.strip()
        if not line:
            continue
        try:
            out.append(bytes.fromhex(line))
        except ValueError:
            out.append(b"")
    return out


def prove_inclusion(blocks: Sequence[LedgerBlock], key: str) -> MerkleProof:
    """Inclusion proof for a transaction digest, or for the issuance of a tracking id."""
    for block in blocks:
        for i, tx in enumerate(block.transactions):
            if tx.digest.hex() == key:
                return _proof(block, i)
    for block in blocks:
        for i, tx in enumerate(block.transactions):
            if isinstance(tx.payload, Issue) and tx.payload.tracking_id == key:
                return _proof(block, i)
    raise NotFound(key)


def _proof(block: LedgerBlock, index: int) -> MerkleProof:
    leaves = [leaf_hash(tx.encode()) for tx in block.transactions]
    return MerkleProof(block.height, index, len(leaves), merkle_path(leaves, index))
