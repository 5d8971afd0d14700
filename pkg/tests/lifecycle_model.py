"""Reference model of the certificate lifecycle, written as a transition table.

It shares no code with ``recledger.core``: certificates are small integers,
state is a tuple, and every rule is a row in the status graph below. The
exhaustive search walks all op sequences, pairing the real registry with
the model and comparing each outcome code and each resulting status/owner.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Optional

from recledger.core import (
    EMPTY_REGISTRY, Aggregate, ConsumptionReport, LifecycleError, Retire, RetirementReason, Role, Swap, Trade,
    derive_aggregate_id,
)

ACTORS = {"G1": "Generator", "Br1": "Broker", "B1": "Buyer", "B2": "Buyer"}

# status -> the moves it allows; anything missing is InvalidTransition
GRAPH = {
    "Issued": {"aggregate", "trade"},
    "Aggregated": {"trade_block"},
    "Owned": {"trade", "swap", "report", "retire"},
    "Retired": set(),
}


@dataclass(frozen=True)
class Cert:
    status: str
    owner: str
    parent: Optional[tuple] = None
    swaps: int = 0


@dataclass(frozen=True)
class World:
    certs: tuple  # Cert or None per certificate index
    blocks: tuple  # (members, broker) for live aggregates
    reports: frozenset  # (cert, consumer)


def empty_world(n: int) -> World:
    return World((None,) * n, (), frozenset())


def _set(world: World, i: int, cert: Cert) -> tuple:
    certs = list(world.certs)
    certs[i] = cert
    return tuple(certs)


def step(world: World, op: tuple) -> tuple[str, World]:
    """Return (outcome, next world); outcome is "ok" or an error code."""
    kind, actor = op[0], op[1]
    role = ACTORS[actor]
    if kind == "issue":
        i = op[2]
        if actor != "G1":
            return "UnauthorizedRole", world
        if world.certs[i] is not None:
            return "DuplicateId", world
        return "ok", World(_set(world, i, Cert("Issued", "G1")), world.blocks, world.reports)

    if kind == "aggregate":
        members = op[2]
        if role != "Broker":
            return "UnauthorizedRole", world
        if len(set(members)) != len(members):
            return "DuplicateMember", world
        for m in members:
            if world.certs[m] is None:
                return "UnknownCertificate", world
            if world.certs[m].status != "Issued":
                return "MemberNotIssued", world
        certs = world.certs
        for m in members:
            certs = list(certs)
            certs[m] = Cert("Aggregated", actor, members)
            certs = tuple(certs)
        return "ok", World(certs, world.blocks + ((members, actor),), world.reports)

    if kind == "trade_block":
        members, new_owner = op[2], op[3]
        live = [b for b in world.blocks if b[0] == members]
        if not live:
            return "UnknownCertificate", world
        if actor != live[0][1]:
            return "NotOwner", world
        certs = world.certs
        for m in members:
            certs = list(certs)
            certs[m] = Cert("Owned", new_owner, None, world.certs[m].swaps)
            certs = tuple(certs)
        return "ok", World(certs, tuple(b for b in world.blocks if b[0] != members), world.reports)

    i = op[2]
    cert = world.certs[i]
    if cert is None:
        return "UnknownCertificate", world
    if cert.status == "Retired":
        return "CertificateRetired", world
    if actor != cert.owner:
        return "NotOwner", world
    if kind not in GRAPH[cert.status]:
        return "InvalidTransition", world
    if kind == "trade":
        return "ok", World(_set(world, i, Cert("Owned", op[3], None, cert.swaps)), world.blocks, world.reports)
    if kind == "swap":
        return "ok", World(_set(world, i, Cert("Owned", op[3], None, cert.swaps + 1)), world.blocks, world.reports)
    if kind == "report":
        return "ok", World(world.certs, world.blocks, world.reports | {(i, actor)})
    if kind == "retire":
        if role == "Buyer" and (i, actor) not in world.reports:
            return "MissingConsumptionReport", world
        return "ok", World(_set(world, i, Cert("Retired", actor, None, cert.swaps)), world.blocks, world.reports)
    raise AssertionError(kind)


def alphabet(n: int) -> list[tuple]:
    actors = sorted(ACTORS)
    ops = []
    for a in actors:
        for i in range(n):
            ops.append(("issue", a, i))
            ops.append(("report", a, i))
            ops.append(("retire", a, i))
            for b in actors:
                ops.append(("trade", a, i, b))
                ops.append(("swap", a, i, b))
        groups = [(i,) for i in range(n)]
        if n > 1:
            groups += list(itertools.permutations(range(n), 2)) + [(0, 0)]
        for g in groups:
            ops.append(("aggregate", a, g))
            if len(set(g)) == len(g):
                for b in actors:
                    ops.append(("trade_block", a, g, b))
    return ops


# --- mapping onto the real implementation ---------------------------------


def to_payload(op: tuple, issues: list):
    kind, actor = op[0], op[1]
    tid = lambda i: issues[i].tracking_id  # noqa: E731
    if kind == "issue":
        return issues[op[2]]
    if kind == "aggregate":
        return Aggregate(actor, tuple(tid(m) for m in op[2]))
    if kind == "trade_block":
        return Trade(derive_aggregate_id([tid(m) for m in op[2]]), op[3])
    if kind == "trade":
        return Trade(tid(op[2]), op[3])
    if kind == "swap":
        return Swap(tid(op[2]), op[3])
    if kind == "report":
        return ConsumptionReport(tid(op[2]), actor, 1)
    if kind == "retire":
        return Retire(tid(op[2]), RetirementReason.PUBLIC_CLAIM)
    raise AssertionError(kind)


def project(registry, issues) -> tuple:
    out = []
    for p in issues:
        c = registry.certificates.get(p.tracking_id)
        out.append(None if c is None else (c.status.kind.value, c.owner, c.swap_count))
    return tuple(out)


def model_projection(world: World) -> tuple:
    return tuple(None if c is None else (c.status, c.owner, c.swaps) for c in world.certs)


def exhaustive(n_certs: int, max_len: int, participants, issues):
    """Compare model and implementation on every op sequence up to ``max_len``.

    Returns (sequences_checked, mismatches). Paired states are memoised per
    remaining depth, and the number of sequences through each pair is added
    up, so the count is the true number of distinct sequences.
    """
    from recledger.core import apply

    ops = alphabet(n_certs)
    payloads = [to_payload(op, issues) for op in ops]
    mismatches = []
    memo: dict = {}

    def outcome(registry, op, payload):
        try:
            return "ok", apply(registry, payload, op[1], 0, participants)
        except LifecycleError as err:
            return err.code.value, registry

    def walk(registry, world, depth, trail):
        key = (registry.canonical_bytes(), world, depth)
        if key in memo:
            return memo[key]
        total = 0
        for op, payload in zip(ops, payloads):
            got, reg2 = outcome(registry, op, payload)
            want, world2 = step(world, op)
            total += 1
            if got != want or project(reg2, issues) != model_projection(world2):
                if len(mismatches) < 20:
                    mismatches.append((trail + (op,), got, want))
                continue
            if depth > 1:
                total += walk(reg2, world2, depth - 1, trail + (op,))
        memo[key] = total
        return total

    checked = walk(EMPTY_REGISTRY, empty_world(n_certs), max_len, ())
    return checked, mismatches


def model_participants(make):
    roles = {"Generator": Role.GENERATOR, "Broker": Role.BROKER, "Buyer": Role.BUYER}
    levels = {"Generator": 1, "Broker": 2, "Buyer": 1}
    return {a: make(a, roles[r], levels[r]) for a, r in ACTORS.items()}
