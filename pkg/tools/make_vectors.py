#!/usr/bin/env python3
"""Regenerate tests/vectors/vectors.json from the package.

Run only when the byte layout changes on purpose; the JSON is frozen and the
test suite checks both the package and tools/vector_oracle.py against it.
"""

import json
import sys
from pathlib import Path

from recledger.consensus import ConsensusConfig, commit
from recledger.core import (
    CertificateType, ConsumptionReport, EnergySource, Issue, SourceKind, Trade, derive_tracking_id,
)
from recledger.crypto import key_for
from recledger.ledger import Chain, export_chain, genesis_block, make_block, merkle_root, sign_transaction
from recledger.quorum import QuorumCertificate, VoteKind, sign_vote

VALIDATORS = ("MKT1", "TS1", "TS2", "U1")
SOLAR = EnergySource(SourceKind.SOLAR)


def issue(i):
    return Issue("G1", "Mesa", CertificateType.VOLUNTARY, SOLAR, 1, 10 + i, i)


def signed(payload, signer, nonce):
    return sign_transaction(payload, signer, nonce, key_for(signer))


def qc_for(block, voters, round_=0):
    votes = tuple(sign_vote(VoteKind.PRECOMMIT, key_for(v), v, block.height, round_, block.hash) for v in voters)
    return QuorumCertificate(block.height, round_, block.hash, votes)


def build():
    merkle = []
    for n in range(1, 5):
        txs = [signed(issue(i), "G1", i + 1) for i in range(n)]
        merkle.append({"txs": [t.encode().hex() for t in txs], "root": merkle_root(txs).hex()})

    cfg = ConsensusConfig(VALIDATORS, 1)
    keys = {p: key_for(p).public_key for p in ("G1", "B1") + VALIDATORS}
    chain = Chain.genesis()
    c0, c1 = issue(0), issue(1)
    b1 = make_block(1, chain.head.hash, [signed(c0, "G1", 1), signed(c1, "G1", 2)], "MKT1", 5)
    chain = commit(chain, b1, qc_for(b1, ("MKT1", "TS1", "U1")), cfg, keys)
    b2 = make_block(2, chain.head.hash, [
        signed(Trade(c0.tracking_id, "B1"), "G1", 3),
        signed(ConsumptionReport(c0.tracking_id, "B1", 1), "B1", 1),
    ], "TS1", 12)
    chain = commit(chain, b2, qc_for(b2, ("MKT1", "TS1", "TS2", "U1"), 1), cfg, keys)

    return {
        "genesis_digest": genesis_block().hash.hex(),
        "tracking_id": {"generator": "G1", "source": "Solar", "issued_at": 0, "nonce": 0,
                        "digest": derive_tracking_id("G1", SOLAR, 0, 0)},
        "public_keys": {p: k.hex() for p, k in sorted(keys.items())},
        "merkle": merkle,
        "chain": {
            "validators": list(VALIDATORS),
            "f": 1,
            "export": export_chain(chain.blocks).split(),
            "block_hashes": [b.hash.hex() for b in chain.blocks],
            "verdict": "Valid",
        },
    }


if __name__ == "__main__":
    out = Path(sys.argv[1] if len(sys.argv) > 1 else "tests/vectors/vectors.json")
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(json.dumps(build(), indent=2) + "\n")
    print(f"wrote {out}")
