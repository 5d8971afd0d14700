"""Vote and quorum-certificate values with their canonical encodings.

Kept apart from ``consensus`` so the ledger can decode certificates embedded
in exported blocks without importing the consensus state machine.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

from .crypto import DIGEST_SIZE, SigningKey, verify
from .encoding import DecodeError, Reader, enc_bytes, enc_int, enc_list, enc_str

NIL = bytes(DIGEST_SIZE)  # block hash carried by a vote for "no block"


class VoteKind(str, Enum):
    PREVOTE = "prevote"
    PRECOMMIT = "precommit"


def vote_message(kind: VoteKind, height: int, round: int, block_hash: bytes) -> bytes:
    return enc_str(kind.value) + enc_int(height) + enc_int(round) + enc_bytes(block_hash)


@dataclass(frozen=True)
class Vote:
    kind: VoteKind
    voter: str
    height: int
    round: int
    block_hash: bytes
    signature: bytes

    def message(self) -> bytes:
        return vote_message(self.kind, self.height, self.round, self.block_hash)

    def verify(self, public_key: bytes) -> bool:
        return verify(public_key, self.message(), self.signature)

    def encode(self) -> bytes:
        return (
            enc_str(self.kind.value) + enc_str(self.voter) + enc_int(self.height)
            + enc_int(self.round) + enc_bytes(self.block_hash) + enc_bytes(self.signature)
        )

    @classmethod
    def read(cls, r: Reader) -> "Vote":
        kind = r.str()
        try:
            vk = VoteKind(kind)
        except ValueError as exc:
            raise DecodeError(f"bad vote kind {kind!r}") from exc
        return cls(vk, r.str(), r.int(), r.int(), r.bytes(), r.bytes())


def sign_vote(kind: VoteKind, key: SigningKey, voter: str, height: int, round: int, block_hash: bytes) -> Vote:
    sig = key.sign(vote_message(kind, height, round, block_hash))
    return Vote(kind, voter, height, round, block_hash, sig)


@dataclass(frozen=True)
class QuorumCertificate:
    height: int
    round: int
    block_hash: bytes
    votes: tuple[Vote, ...]

    @property
    def voters(self) -> frozenset[str]:
        return frozenset(v.voter for v in self.votes)

    def encode(self) -> bytes:
        return (
            enc_int(self.height) + enc_int(self.round) + enc_bytes(self.block_hash)
            + enc_list(v.encode() for v in self.votes)
        )

    @classmethod
    def decode(cls, data: bytes) -> "QuorumCertificate":
        r = Reader(data)
        height, rnd, block_hash = r.int(), r.int(), r.bytes()
        votes = []
        for raw in r.list():
            vr = Reader(raw)
            votes.append(Vote.read(vr))
            vr.finish()
        r.finish()
        return cls(height, rnd, block_hash, tuple(votes))
