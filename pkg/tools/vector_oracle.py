#!/usr/bin/env python3
"""Independent oracle for the frozen cross-implementation vectors.

Standalone on purpose: it imports nothing from ``recledger`` and nothing from
``hashlib`` or ``cryptography``. SHA-256 follows FIPS 180-4 and Ed25519
verification follows RFC 8032, both written out in plain integer arithmetic,
and the block decoder is a separate reading of the byte layout:

    int     8-byte big-endian two's complement
    bytes   4-byte big-endian length, then the bytes (strings are UTF-8)
    list    4-byte count, then each element as length-prefixed bytes

    block   = int height | bytes prev | bytes tx_root | list txs
              | str proposer | int proposed_at | bytes qc
    hash    = SHA-256 of the block bytes without the trailing qc field
    tx      = payload | str signer | int nonce | bytes signature
    signed  = payload | str signer | int nonce
    leaf    = SHA-256(0x00 | tx), node = SHA-256(0x01 | left | right)

Usage:
    python tools/vector_oracle.py tests/vectors/vectors.json

Exit status 0 when every frozen value matches the oracle's own computation.
"""

import json
import sys

# --- SHA-256 (FIPS 180-4) ---------------------------------------------------

_K = [
    0x428a2f98, 0x71374491, 0xb5c0fbcf, 0xe9b5dba5, 0x3956c25b, 0x59f111f1, 0x923f82a4, 0xab1c5ed5,
    0xd807aa98, 0x12835b01, 0x243185be, 0x550c7dc3, 0x72be5d74, 0x80deb1fe, 0x9bdc06a7, 0xc19bf174,
    0xe49b69c1, 0xefbe4786, 0x0fc19dc6, 0x240ca1cc, 0x2de92c6f, 0x4a7484aa, 0x5cb0a9dc, 0x76f988da,
    0x983e5152, 0xa831c66d, 0xb00327c8, 0xbf597fc7, 0xc6e00bf3, 0xd5a79147, 0x06ca6351, 0x14292967,
    0x27b70a85, 0x2e1b2138, 0x4d2c6dfc, 0x53380d13, 0x650a7354, 0x766a0abb, 0x81c2c92e, 0x92722c85,
    0xa2bfe8a1, 0xa81a664b, 0xc24b8b70, 0xc76c51a3, 0xd192e819, 0xd6990624, 0xf40e3585, 0x106aa070,
    0x19a4c116, 0x1e376c08, 0x2748774c, 0x34b0bcb5, 0x391c0cb3, 0x4ed8aa4a, 0x5b9cca4f, 0x682e6ff3,
    0x748f82ee, 0x78a5636f, 0x84c87814, 0x8cc70208, 0x90befffa, 0xa4506ceb, 0xbef9a3f7, 0xc67178f2,
]
_H0 = [0x6a09e667, 0xbb67ae85, 0x3c6ef372, 0xa54ff53a, 0x510e527f, 0x9b05688c, 0x1f83d9ab, 0x5be0cd19]
_M32 = 0xFFFFFFFF


def _rotr(x, n):
    return ((x >> n) | (x << (32 - n))) & _M32


def sha256(data):
    data = bytes(data)
    bitlen = len(data) * 8
    data += b"\x80" + b"\x00" * ((55 - len(data)) % 64) + bitlen.to_bytes(8, "big")
    h = list(_H0)
    for off in range(0, len(data), 64):
        w = [int.from_bytes(data[off + 4 * i: off + 4 * i + 4], "big") for i in range(16)]
        for i in range(16, 64):
            s0 = _rotr(w[i - 15], 7) ^ _rotr(w[i - 15], 18) ^ (w[i - 15] >> 3)
            s1 = _rotr(w[i - 2], 17) ^ _rotr(w[i - 2], 19) ^ (w[i - 2] >> 10)
            w.append((w[i - 16] + s0 + w[i - 7] + s1) & _M32)
        a, b, c, d, e, f, g, hh = h
        for i in range(64):
            t1 = (hh + (_rotr(e, 6) ^ _rotr(e, 11) ^ _rotr(e, 25)) + ((e & f) ^ (~e & g)) + _K[i] + w[i]) & _M32
            t2 = ((_rotr(a, 2) ^ _rotr(a, 13) ^ _rotr(a, 22)) + ((a & b) ^ (a & c) ^ (b & c))) & _M32
            hh, g, f, e, d, c, b, a = g, f, e, (d + t1) & _M32, c, b, a, (t1 + t2) & _M32
        h = [(x + y) & _M32 for x, y in zip(h, (a, b, c, d, e, f, g, hh))]
    return b"".join(x.to_bytes(4, "big") for x in h)


# --- SHA-512, needed inside Ed25519 ----------------------------------------

_K512 = [
    0x428a2f98d728ae22, 0x7137449123ef65cd, 0xb5c0fbcfec4d3b2f, 0xe9b5dba58189dbbc, 0x3956c25bf348b538,
    0x59f111f1b605d019, 0x923f82a4af194f9b, 0xab1c5ed5da6d8118, 0xd807aa98a3030242, 0x12835b0145706fbe,
    0x243185be4ee4b28c, 0x550c7dc3d5ffb4e2, 0x72be5d74f27b896f, 0x80deb1fe3b1696b1, 0x9bdc06a725c71235,
    0xc19bf174cf692694, 0xe49b69c19ef14ad2, 0xefbe4786384f25e3, 0x0fc19dc68b8cd5b5, 0x240ca1cc77ac9c65,
    0x2de92c6f592b0275, 0x4a7484aa6ea6e483, 0x5cb0a9dcbd41fbd4, 0x76f988da831153b5, 0x983e5152ee66dfab,
    0xa831c66d2db43210, 0xb00327c898fb213f, 0xbf597fc7beef0ee4, 0xc6e00bf33da88fc2, 0xd5a79147930aa725,
    0x06ca6351e003826f, 0x142929670a0e6e70, 0x27b70a8546d22ffc, 0x2e1b21385c26c926, 0x4d2c6dfc5ac42aed,
    0x53380d139d95b3df, 0x650a73548baf63de, 0x766a0abb3c77b2a8, 0x81c2c92e47edaee6, 0x92722c851482353b,
    0xa2bfe8a14cf10364, 0xa81a664bbc423001, 0xc24b8b70d0f89791, 0xc76c51a30654be30, 0xd192e819d6ef5218,
    0xd69906245565a910, 0xf40e35855771202a, 0x106aa07032bbd1b8, 0x19a4c116b8d2d0c8, 0x1e376c085141ab53,
    0x2748774cdf8eeb99, 0x34b0bcb5e19b48a8, 0x391c0cb3c5c95a63, 0x4ed8aa4ae3418acb, 0x5b9cca4f7763e373,
    0x682e6ff3d6b2b8a3, 0x748f82ee5defb2fc, 0x78a5636f43172f60, 0x84c87814a1f0ab72, 0x8cc702081a6439ec,
    0x90befffa23631e28, 0xa4506cebde82bde9, 0xbef9a3f7b2c67915, 0xc67178f2e372532b, 0xca273eceea26619c,
    0xd186b8c721c0c207, 0xeada7dd6cde0eb1e, 0xf57d4f7fee6ed178, 0x06f067aa72176fba, 0x0a637dc5a2c898a6,
    0x113f9804bef90dae, 0x1b710b35131c471b, 0x28db77f523047d84, 0x32caab7b40c72493, 0x3c9ebe0a15c9bebc,
    0x431d67c49c100d4c, 0x4cc5d4becb3e42b6, 0x597f299cfc657e2a, 0x5fcb6fab3ad6faec, 0x6c44198c4a475817,
]
_H512 = [
    0x6a09e667f3bcc908, 0xbb67ae8584caa73b, 0x3c6ef372fe94f82b, 0xa54ff53a5f1d36f1,
    0x510e527fade682d1, 0x9b05688c2b3e6c1f, 0x1f83d9abfb41bd6b, 0x5be0cd19137e2179,
]
_M64 = (1 << 64) - 1


def _rotr64(x, n):
    return ((x >> n) | (x << (64 - n))) & _M64


def sha512(data):
    data = bytes(data)
    bitlen = len(data) * 8
    data += b"\x80" + b"\x00" * ((111 - len(data)) % 128) + bitlen.to_bytes(16, "big")
    h = list(_H512)
    for off in range(0, len(data), 128):
        w = [int.from_bytes(data[off + 8 * i: off + 8 * i + 8], "big") for i in range(16)]
        for i in range(16, 80):
            s0 = _rotr64(w[i - 15], 1) ^ _rotr64(w[i - 15], 8) ^ (w[i - 15] >> 7)
            s1 = _rotr64(w[i - 2], 19) ^ _rotr64(w[i - 2], 61) ^ (w[i - 2] >> 6)
            w.append((w[i - 16] + s0 + w[i - 7] + s1) & _M64)
        a, b, c, d, e, f, g, hh = h
        for i in range(80):
            t1 = (hh + (_rotr64(e, 14) ^ _rotr64(e, 18) ^ _rotr64(e, 41)) + ((e & f) ^ (~e & g)) + _K512[i] + w[i]) & _M64
            t2 = ((_rotr64(a, 28) ^ _rotr64(a, 34) ^ _rotr64(a, 39)) + ((a & b) ^ (a & c) ^ (b & c))) & _M64
            hh, g, f, e, d, c, b, a = g, f, e, (d + t1) & _M64, c, b, a, (t1 + t2) & _M64
        h = [(x + y) & _M64 for x, y in zip(h, (a, b, c, d, e, f, g, hh))]
    return b"".join(x.to_bytes(8, "big") for x in h)


# --- Ed25519 (RFC 8032) -----------------------------------------------------

_P = 2 ** 255 - 19
_L = 2 ** 252 + 27742317777372353535851937790883648493
_D = (-121665 * pow(121666, _P - 2, _P)) % _P
_SQRT_M1 = pow(2, (_P - 1) // 4, _P)


def _add(p, q):
    x1, y1, z1, t1 = p
    x2, y2, z2, t2 = q
    a = (y1 - x1) * (y2 - x2) % _P
    b = (y1 + x1) * (y2 + x2) % _P
    c = 2 * t1 * t2 * _D % _P
    d = 2 * z1 * z2 % _P
    e, f, g, h = b - a, d - c, d + c, b + a
    return (e * f % _P, g * h % _P, f * g % _P, e * h % _P)


def _mul(s, p):
    q = (0, 1, 1, 0)
    while s > 0:
        if s & 1:
            q = _add(q, p)
        p = _add(p, p)
        s >>= 1
    return q


def _equal(p, q):
    x1, y1, z1, _ = p
    x2, y2, z2, _ = q
    return (x1 * z2 - x2 * z1) % _P == 0 and (y1 * z2 - y2 * z1) % _P == 0


def _recover_x(y, sign):
    if y >= _P:
        return None
    x2 = (y * y - 1) * pow(_D * y * y + 1, _P - 2, _P)
    if x2 == 0:
        return None if sign else 0
    x = pow(x2, (_P + 3) // 8, _P)
    if (x * x - x2) % _P != 0:
        x = x * _SQRT_M1 % _P
    if (x * x - x2) % _P != 0:
        return None
    if (x & 1) != sign:
        x = _P - x
    return x


_GY = 4 * pow(5, _P - 2, _P) % _P
_GX = _recover_x(_GY, 0)
_G = (_GX, _GY, 1, _GX * _GY % _P)


def _compress(p):
    x, y, z, _ = p
    zi = pow(z, _P - 2, _P)
    x, y = x * zi % _P, y * zi % _P
    return (y | ((x & 1) << 255)).to_bytes(32, "little")


def _decompress(s):
    if len(s) != 32:
        return None
    y = int.from_bytes(s, "little")
    sign = y >> 255
    y &= (1 << 255) - 1
    x = _recover_x(y, sign)
    if x is None:
        return None
    return (x, y, 1, x * y % _P)


def ed25519_public_key(seed):
    h = sha512(seed)
    a = int.from_bytes(h[:32], "little")
    a &= (1 << 254) - 8
    a |= 1 << 254
    return _compress(_mul(a, _G))


def ed25519_verify(public, msg, sig):
    if len(public) != 32 or len(sig) != 64:
        return False
    a = _decompress(public)
    r = _decompress(sig[:32])
    if a is None or r is None:
        return False
    s = int.from_bytes(sig[32:], "little")
    if s >= _L:
        return False
    h = int.from_bytes(sha512(sig[:32] + public + msg), "little") % _L
    return _equal(_mul(s, _G), _add(r, _mul(h, a)))


# --- decoder ----------------------------------------------------------------


class Cursor:
    def __init__(self, data):
        self.data = bytes(data)
        self.pos = 0

    def take(self, n):
        if self.pos + n > len(self.data):
            raise ValueError("truncated")
        out = self.data[self.pos:self.pos + n]
        self.pos += n
        return out

    def int(self):
        return int.from_bytes(self.take(8), "big", signed=True)

    def blob(self):
        return self.take(int.from_bytes(self.take(4), "big"))

    def text(self):
        return self.blob().decode("utf-8")

    def items(self):
        return [self.blob() for _ in range(int.from_bytes(self.take(4), "big"))]

    def done(self):
        if self.pos != len(self.data):
            raise ValueError("trailing bytes")


def read_payload(c):
    kind = c.text()
    if kind == "Issue":
        fields = [c.text(), c.text(), c.text()]
        source = c.text()
        if source == "Other":
            c.text()
        fields += [c.int(), c.int(), c.int()]
    elif kind == "Aggregate":
        c.text()
        c.items()
    elif kind in ("Trade", "Swap"):
        c.text()
        c.text()
    elif kind == "ConsumptionReport":
        c.text()
        c.text()
        c.int()
    elif kind == "Retire":
        c.text()
        c.text()
    elif kind == "AuditCheckpoint":
        c.int()
        c.int()
    else:
        raise ValueError(f"unknown payload {kind!r}")
    return kind


def parse_tx(raw):
    c = Cursor(raw)
    kind = read_payload(c)
    signer = c.text()
    nonce = c.int()
    signed_end = c.pos
    sig = c.blob()
    c.done()
    return {"kind": kind, "signer": signer, "nonce": nonce, "signed": raw[:signed_end], "sig": sig, "raw": raw}


def parse_block(raw):
    c = Cursor(raw)
    height, prev, root = c.int(), c.blob(), c.blob()
    txs = [parse_tx(t) for t in c.items()]
    proposer, at = c.text(), c.int()
    hashed_end = c.pos
    qc_raw = c.blob()
    c.done()
    qc = None
    if qc_raw:
        q = Cursor(qc_raw)
        qc = {"height": q.int(), "round": q.int(), "hash": q.blob(), "votes": []}
        for v_raw in q.items():
            v = Cursor(v_raw)
            qc["votes"].append({"kind": v.text(), "voter": v.text(), "height": v.int(), "round": v.int(),
                                "hash": v.blob(), "sig": v.blob()})
            v.done()
        q.done()
    return {"height": height, "prev": prev, "root": root, "txs": txs, "proposer": proposer, "at": at,
            "hash": sha256(raw[:hashed_end]), "qc": qc}


# --- ledger rules -----------------------------------------------------------


def _u32(n):
    return n.to_bytes(4, "big")


def _str(s):
    b = s.encode("utf-8")
    return _u32(len(b)) + b


def _int(n):
    return n.to_bytes(8, "big", signed=True)


def merkle_root(tx_raws):
    level = [sha256(b"\x00" + t) for t in tx_raws]
    if not level:
        return sha256(b"\x00")
    while len(level) > 1:
        if len(level) % 2:
            level.append(level[-1])
        level = [sha256(b"\x01" + level[i] + level[i + 1]) for i in range(0, len(level), 2)]
    return level[0]


def genesis_bytes():
    return _int(0) + _u32(32) + bytes(32) + _u32(32) + merkle_root([]) + _u32(0) + _str("genesis") + _int(0)


def tracking_id(generator, source, issued_at, nonce):
    return sha256(_str(generator) + _str(source) + _int(issued_at) + _int(nonce)).hex()


def verify_chain(lines, keys, validators, f):
    """Return "Valid" or "InvalidAt(h, Reason)" by the oracle's own reading."""
    quorum = (len(validators) + f) // 2 + 1
    blocks = []
    for i, line in enumerate(lines):
        try:
            blocks.append(parse_block(bytes.fromhex(line)))
        except ValueError:
            return f"InvalidAt({i}, Malformed)"
    if not blocks or blocks[0]["hash"] != sha256(genesis_bytes()) or blocks[0]["qc"] is not None:
        return "InvalidAt(0, BadGenesis)"
    nonces = {}
    for i, b in enumerate(blocks[1:], 1):
        if b["height"] != i:
            return f"InvalidAt({i}, BadHeight)"
        if b["prev"] != blocks[i - 1]["hash"]:
            return f"InvalidAt({i}, BadPrevHash)"
        if b["root"] != merkle_root([t["raw"] for t in b["txs"]]):
            return f"InvalidAt({i}, BadTxRoot)"
        for t in b["txs"]:
            if not ed25519_verify(keys.get(t["signer"], b""), t["signed"], t["sig"]):
                return f"InvalidAt({i}, BadSignature)"
            if t["nonce"] <= nonces.get(t["signer"], 0):
                return f"InvalidAt({i}, StaleNonce)"
            nonces[t["signer"]] = t["nonce"]
        qc = b["qc"]
        if qc is None or qc["height"] != i or qc["hash"] != b["hash"] or b["proposer"] not in validators:
            return f"InvalidAt({i}, BadQuorumCert)"
        voters = set()
        for v in qc["votes"]:
            msg = _str(v["kind"]) + _int(v["height"]) + _int(v["round"]) + _u32(len(v["hash"])) + v["hash"]
            ok = (v["kind"] == "precommit" and v["voter"] in validators and v["voter"] not in voters
                  and (v["height"], v["round"], v["hash"]) == (qc["height"], qc["round"], qc["hash"])
                  and ed25519_verify(keys.get(v["voter"], b""), msg, v["sig"]))
            if not ok:
                return f"InvalidAt({i}, BadQuorumCert)"
            voters.add(v["voter"])
        if len(voters) < quorum:
            return f"InvalidAt({i}, BadQuorumCert)"
    return "Valid"


# --- vector check -----------------------------------------------------------


def check(vectors):
    """Yield (name, ok, detail) for every frozen value."""
    g = sha256(genesis_bytes()).hex()
    yield "genesis_digest", g == vectors["genesis_digest"], g

    tid = vectors["tracking_id"]
    got = tracking_id(tid["generator"], tid["source"], tid["issued_at"], tid["nonce"])
    yield "tracking_id", got == tid["digest"], got

    keys = {}
    for pid, pub in sorted(vectors["public_keys"].items()):
        derived = ed25519_public_key(sha256(b"recledger-sim-key:" + pid.encode("utf-8")))
        keys[pid] = derived
        yield f"public_key[{pid}]", derived.hex() == pub, derived.hex()

    for case in vectors["merkle"]:
        txs = [bytes.fromhex(t) for t in case["txs"]]
        root = merkle_root(txs).hex()
        yield f"merkle_root[{len(txs)}]", root == case["root"], root
        sigs = all(ed25519_verify(keys[p["signer"]], p["signed"], p["sig"]) for p in map(parse_tx, txs))
        yield f"merkle_tx_signatures[{len(txs)}]", sigs, str(sigs)

    chain = vectors["chain"]
    lines = chain["export"]
    hashes = [parse_block(bytes.fromhex(l))["hash"].hex() for l in lines]
    yield "chain_block_hashes", hashes == chain["block_hashes"], ",".join(h[:12] for h in hashes)
    verdict = verify_chain(lines, keys, sorted(chain["validators"]), chain["f"])
    yield "chain_verdict", verdict == chain["verdict"], verdict


def main(argv):
    if len(argv) != 2:
        print(__doc__, file=sys.stderr)
        return 2
    with open(argv[1]) as fh:
        vectors = json.load(fh)
    ok = True
    for name, passed, detail in check(vectors):
        ok &= passed
        print(f"{'PASS' if passed else 'FAIL'} {name}: {detail}")
    return 0 if ok else 1


if __name__ == "__main__":
    sys.exit(main(sys.argv))
