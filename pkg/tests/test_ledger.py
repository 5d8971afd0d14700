import dataclasses
import random

import pytest
from hypothesis import given, settings, strategies as st

import vector_oracle as oracle
from recledger.consensus import ConsensusConfig, qc_checker
from recledger.core import Trade
from recledger.crypto import sha256
from recledger.ledger import (
    Chain, ChainError, ChainErrorCode, LedgerBlock, NotFound, VALID, append_block, export_chain, genesis_block,
    hash_block, leaf_hash, make_block, merkle_path, merkle_root, merkle_root_of_leaves, node_hash, prove_inclusion,
    read_export, verify_chain, verify_inclusion, verify_raw, MerkleProof,
)
from support import VALIDATORS4, Nonces, chain_of, issue, keys_of, people, qc_for, random_chain, signed

KEYS = keys_of(people())
CFG = ConsensusConfig(VALIDATORS4, 1)
CHECK = qc_checker(CFG, KEYS)


def txs(n, start=0):
    return [signed(issue("G1", i, at=i), "G1", i + 1) for i in range(start, start + n)]


def flip(data: bytes, bit: int) -> bytes:
    out = bytearray(data)
    out[bit // 8] ^= 1 << (bit % 8)
    return bytes(out)


# --- hashing and Merkle roots ---------------------------------------------


def test_hash_block_deterministic_and_sensitive():
    b = make_block(1, genesis_block().hash, txs(2), "MKT1", 3)
    assert hash_block(b) == hash_block(b)
    raw = b.preimage()
    changed = LedgerBlock.decode(flip(raw, 8 * (len(raw) - 20)) + b.encode()[len(raw):])
    assert hash_block(changed) != hash_block(b)
    assert oracle.sha256(changed.preimage()) == hash_block(changed)
    assert oracle.sha256(raw) == hash_block(b)


def test_merkle_root_shapes():
    t = txs(3)
    leaves = [leaf_hash(x.encode()) for x in t]
    assert merkle_root([]) == sha256(b"\x00")
    assert merkle_root(t[:1]) == leaves[0]
    assert merkle_root(t[:2]) == oracle.sha256(b"\x01" + oracle.sha256(b"\x00" + t[0].encode())
                                               + oracle.sha256(b"\x00" + t[1].encode()))
    left, right = node_hash(leaves[0], leaves[1]), node_hash(leaves[2], leaves[2])
    assert merkle_root(t) == node_hash(left, right)
    for n in range(1, 6):
        assert merkle_root(txs(n)) == oracle.merkle_root([x.encode() for x in txs(n)])


def test_inclusion_proofs_for_four_txs():
    t = txs(4)
    block = make_block(1, genesis_block().hash, t, "MKT1", 1)
    other = make_block(1, genesis_block().hash, txs(4, start=10), "MKT1", 1)
    for i, x in enumerate(t):
        proof = prove_inclusion([genesis_block(), block], x.digest.hex())
        assert proof.index == i and proof.height == 1
        assert verify_inclusion(block.tx_root, proof, x.encode())
        assert not verify_inclusion(other.tx_root, proof, x.encode())
    by_id = prove_inclusion([block], t[2].payload.tracking_id)
    assert by_id.index == 2
    with pytest.raises(NotFound):
        prove_inclusion([block], "00" * 32)


def test_proof_soundness_exhaustive_up_to_eight():
    for n in range(1, 9):
        leaves_data = [bytes([i]) for i in range(n)]
        leaves = [leaf_hash(d) for d in leaves_data]
        root = merkle_root_of_leaves(leaves)
        for i in range(n):
            proof = MerkleProof(1, i, n, merkle_path(leaves, i))
            for j in range(12):
                assert verify_inclusion(root, proof, bytes([j])) == (j == i), (n, i, j)


# --- appending and verifying -----------------------------------------------


def two_block_chain():
    return chain_of([txs(2), [signed(Trade(issue("G1", 0, at=0).tracking_id, "B1"), "G1", 3)]])


def test_append_happy_path_and_links():
    chain = two_block_chain()
    assert chain.height == 2
    block = make_block(3, chain.head.hash, [], "U1", 30)
    assert append_block(chain, block.with_qc(qc_for(block, VALIDATORS4[:3])), KEYS, CHECK).height == 3
    stale_link = make_block(3, chain.blocks[1].hash, [], "U1", 30)
    with pytest.raises(ChainError) as err:
        append_block(chain, stale_link, KEYS, None)
    assert err.value.code is ChainErrorCode.BAD_PREV_HASH
    wrong_height = make_block(5, chain.head.hash, [], "U1", 30)
    with pytest.raises(ChainError) as err:
        append_block(chain, wrong_height, KEYS, None)
    assert err.value.code is ChainErrorCode.BAD_HEIGHT


def test_zeroed_signature_rejected_at_index_zero():
    chain = Chain.genesis()
    good = txs(1)[0]
    bad = dataclasses.replace(good, signature=bytes(64))
    assert not oracle.ed25519_verify(KEYS["G1"], good.signing_bytes(good.payload, good.signer, good.nonce), bad.signature)
    with pytest.raises(ChainError) as err:
        append_block(chain, make_block(1, chain.head.hash, [bad], "MKT1", 1), KEYS, None)
    assert (err.value.code, err.value.index) == (ChainErrorCode.BAD_SIGNATURE, 0)


def test_stale_nonce_rejected():
    t = txs(2)
    reused = signed(issue("G1", 5), "G1", 1)
    with pytest.raises(ChainError) as err:
        append_block(Chain.genesis(), make_block(1, genesis_block().hash, t + [reused], "MKT1", 1), KEYS, None)
    assert (err.value.code, err.value.index) == (ChainErrorCode.STALE_NONCE, 2)


def test_bad_tx_root_and_quorum():
    chain = Chain.genesis()
    block = make_block(1, chain.head.hash, txs(2), "MKT1", 1)
    forged = dataclasses.replace(block, tx_root=bytes(32))
    with pytest.raises(ChainError) as err:
        append_block(chain, forged, KEYS, None)
    assert err.value.code is ChainErrorCode.BAD_TX_ROOT
    with pytest.raises(ChainError) as err:
        append_block(chain, block.with_qc(qc_for(block, VALIDATORS4[:2])), KEYS, CHECK)
    assert err.value.code is ChainErrorCode.BAD_QUORUM_CERT


def test_verify_chain_degenerate_cases():
    assert verify_chain([], KEYS, CHECK) == VALID
    assert str(verify_chain([genesis_block()], KEYS, CHECK)) == "Valid"
    odd_genesis = make_block(0, bytes(32), [], "someone", 0)
    assert str(verify_chain([odd_genesis], KEYS, CHECK)) == "InvalidAt(0, BadGenesis)"


def test_flip_in_block_three_tx_bytes():
    chain = chain_of([txs(1, i) for i in range(5)])
    raws = [b.encode() for b in chain.blocks]
    block3 = chain.blocks[3]
    # a byte inside the transaction's signature, part of the hashed tx list
    offset = block3.preimage().index(block3.transactions[0].signature) + 10
    raws[3] = flip(raws[3], 8 * offset)
    assert str(verify_raw(raws, KEYS, CHECK)) == "InvalidAt(3, BadTxRoot)"


def test_export_roundtrip_and_garbage_lines():
    chain = two_block_chain()
    text = export_chain(chain.blocks)
    raws = read_export(text)
    assert [LedgerBlock.decode(r) for r in raws] == list(chain.blocks)
    assert verify_raw(raws, KEYS, CHECK).valid
    broken = text.replace(text.splitlines()[1], "zz-not-hex")
    assert str(verify_raw(read_export(broken), KEYS, CHECK)) == "InvalidAt(1, Malformed)"


def test_non_canonical_block_encoding_rejected():
    from recledger.encoding import DecodeError

    raw = genesis_block().encode()
    with pytest.raises(DecodeError):
        LedgerBlock.decode(raw + b"\x00")


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**32), st.integers(1, 6), st.data())
def test_single_bit_flip_is_detected(seed, n_blocks, data):
    chain = random_chain(random.Random(seed), n_blocks)
    raws = [b.encode() for b in chain.blocks]
    h = data.draw(st.integers(0, chain.height))
    bit = data.draw(st.integers(0, 8 * len(chain.blocks[h].preimage()) - 1))
    raws[h] = flip(raws[h], bit)
    verdict = verify_raw(raws, KEYS, CHECK)
    assert not verdict.valid and verdict.height <= h


def test_committed_nonces_strictly_increase():
    chain = random_chain(random.Random(4), 12)
    last = {}
    for block in chain.blocks:
        for tx in block.transactions:
            assert tx.nonce > last.get(tx.signer, 0)
            last[tx.signer] = tx.nonce


def test_nonce_helper():
    n = Nonces()
    assert [n("a"), n("a"), n("b")] == [1, 2, 1]
