"""REC domain types and the deterministic lifecycle transition function.

Every operation here is pure: registry states are immutable values and
``apply`` returns a fresh state (or raises ``LifecycleError``) without touching
its input.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from enum import Enum
from typing import Mapping, Optional, Union

from .crypto import sha256
from .encoding import DecodeError, Reader, enc_int, enc_list, enc_str


class Role(str, Enum):
    GENERATOR = "Generator"
    BROKER = "Broker"
    BUYER = "Buyer"
    MARKETER = "Marketer"
    UTILITY = "Utility"
    TRADING_PLATFORM = "TradingPlatform"
    REGULATOR = "Regulator"
    VALIDATOR = "Validator"


# DER hierarchy levels each role may sit at.
ROLE_LEVELS: dict[Role, frozenset[int]] = {
    Role.GENERATOR: frozenset({1}),
    Role.BROKER: frozenset({2}),
    Role.BUYER: frozenset({1, 2}),
    Role.MARKETER: frozenset({4, 5}),
    Role.UTILITY: frozenset({4}),
    Role.TRADING_PLATFORM: frozenset({3, 5}),
    Role.REGULATOR: frozenset({5}),
    Role.VALIDATOR: frozenset({3, 4, 5}),
}

# Roles that may never hold certificates.
NON_HOLDING_ROLES = frozenset({Role.REGULATOR, Role.VALIDATOR})


@dataclass(frozen=True)
class Participant:
    id: str
    role: Role
    der_level: int
    public_key: bytes = b""

    def __post_init__(self):
        if not self.id:
            raise ValueError("participant id must be non-empty")
        if self.der_level not in ROLE_LEVELS[self.role]:
            raise ValueError(
                f"{self.id}: role {self.role.value} cannot sit at DER level {self.der_level}"
            )


Participants = Mapping[str, Participant]


class SourceKind(str, Enum):
    SOLAR = "Solar"
    WIND = "Wind"
    HYDRO = "Hydro"
    BIOMASS = "Biomass"
    GEOTHERMAL = "Geothermal"
    OTHER = "Other"


@dataclass(frozen=True)
class EnergySource:
    kind: SourceKind
    name: str = ""

    @property
    def well_formed(self) -> bool:
        if self.kind is SourceKind.OTHER:
            return bool(self.name)
        return self.name == ""

    def encode(self) -> bytes:
        out = enc_str(self.kind.value)
        if self.kind is SourceKind.OTHER:
            out += enc_str(self.name)
        return out

    @classmethod
    def read(cls, r: Reader) -> "EnergySource":
        kind = _enum(SourceKind, r.str())
        return cls(kind, r.str() if kind is SourceKind.OTHER else "")

    @classmethod
    def parse(cls, text: str) -> "EnergySource":
        """Parse ``Solar`` or ``Other:<name>``."""
        head, _, name = text.partition(":")
        kind = SourceKind(head)
        return cls(kind, name)

    def __str__(self):
        return f"Other:{self.name}" if self.kind is SourceKind.OTHER else self.kind.value


class CertificateType(str, Enum):
    COMPLIANCE = "Compliance"
    VOLUNTARY = "Voluntary"


class RetirementReason(str, Enum):
    STATUTORY = "StatutoryOrRegulatoryUse"
    PUBLIC_CLAIM = "PublicClaimPurchase"
    ATTRIBUTE = "AttributePurchase"


class StatusKind(str, Enum):
    ISSUED = "Issued"
    AGGREGATED = "Aggregated"
    OWNED = "Owned"
    RETIRED = "Retired"


@dataclass(frozen=True)
class CertStatus:
    kind: StatusKind
    parent: Optional[str] = None  # aggregate id while Aggregated

    def __str__(self):
        if self.kind is StatusKind.AGGREGATED:
            return f"Aggregated({self.parent})"
        return self.kind.value


ISSUED = CertStatus(StatusKind.ISSUED)
OWNED = CertStatus(StatusKind.OWNED)
RETIRED = CertStatus(StatusKind.RETIRED)


@dataclass(frozen=True)
class RetirementRecord:
    reason: RetirementReason
    retired_by: str
    retired_at: int


@dataclass(frozen=True)
class Certificate:
    tracking_id: str
    project_name: str
    certificate_type: CertificateType
    source: EnergySource
    energy_mwh: int
    generator: str
    issued_at: int
    status: CertStatus
    owner: str
    retirement: Optional[RetirementRecord] = None
    swap_count: int = 0

    def encode(self) -> bytes:
        out = (
            enc_str(self.tracking_id)
            + enc_str(self.project_name)
            + enc_str(self.certificate_type.value)
            + self.source.encode()
            + enc_int(self.energy_mwh)
            + enc_str(self.generator)
            + enc_int(self.issued_at)
            + enc_str(self.status.kind.value)
            + enc_str(self.status.parent or "")
            + enc_str(self.owner)
        )
        if self.retirement is None:
            out += enc_int(0)
        else:
            rr = self.retirement
            out += enc_int(1) + enc_str(rr.reason.value) + enc_str(rr.retired_by) + enc_int(rr.retired_at)
        return out + enc_int(self.swap_count)


@dataclass(frozen=True)
class AggregateBlock:
    id: str
    members: tuple[str, ...]
    broker: str
    total_mwh: int

    def encode(self) -> bytes:
        return enc_str(self.id) + enc_list(m.encode() for m in self.members) + enc_str(self.broker) + enc_int(self.total_mwh)


class ErrorCode(str, Enum):
    # issuance validation
    DUPLICATE_ID = "DuplicateId"
    BAD_ENERGY_QUANTITY = "BadEnergyQuantity"
    UNKNOWN_SOURCE = "UnknownSource"
    UNAUTHORIZED_ROLE = "UnauthorizedRole"
    # lifecycle
    CERTIFICATE_RETIRED = "CertificateRetired"
    UNKNOWN_CERTIFICATE = "UnknownCertificate"
    NOT_OWNER = "NotOwner"
    MEMBER_NOT_ISSUED = "MemberNotIssued"
    MISSING_CONSUMPTION_REPORT = "MissingConsumptionReport"
    DUPLICATE_MEMBER = "DuplicateMember"
    EMPTY_AGGREGATE = "EmptyAggregate"
    INVALID_TRANSITION = "InvalidTransition"
    UNKNOWN_PARTICIPANT = "UnknownParticipant"


class LifecycleError(Exception):
    def __init__(self, code: ErrorCode, detail: str = ""):
        super().__init__(f"{code.value}: {detail}" if detail else code.value)
        self.code = code
        self.detail = detail


# --- transaction payloads -------------------------------------------------


@dataclass(frozen=True)
class Issue:
    generator: str
    project_name: str
    certificate_type: CertificateType
    source: EnergySource
    energy_mwh: int
    issued_at: int
    issue_nonce: int

    KIND = "Issue"

    @property
    def tracking_id(self) -> str:
        return derive_tracking_id(self.generator, self.source, self.issued_at, self.issue_nonce)

    def encode(self) -> bytes:
        return (
            enc_str(self.KIND)
            + enc_str(self.generator)
            + enc_str(self.project_name)
            + enc_str(self.certificate_type.value)
            + self.source.encode()
            + enc_int(self.energy_mwh)
            + enc_int(self.issued_at)
            + enc_int(self.issue_nonce)
        )


@dataclass(frozen=True)
class Aggregate:
    broker: str
    members: tuple[str, ...]

    KIND = "Aggregate"

    @property
    def aggregate_id(self) -> str:
        return derive_aggregate_id(self.members)

    def encode(self) -> bytes:
        return enc_str(self.KIND) + enc_str(self.broker) + enc_list(m.encode() for m in self.members)


@dataclass(frozen=True)
class Trade:
    target: str  # tracking id or aggregate id
    new_owner: str

    KIND = "Trade"

    def encode(self) -> bytes:
        return enc_str(self.KIND) + enc_str(self.target) + enc_str(self.new_owner)


@dataclass(frozen=True)
class Swap:
    tracking_id: str
    new_owner: str

    KIND = "Swap"

    def encode(self) -> bytes:
        return enc_str(self.KIND) + enc_str(self.tracking_id) + enc_str(self.new_owner)


@dataclass(frozen=True)
class ConsumptionReport:
    tracking_id: str
    consumer: str
    mwh_used: int

    KIND = "ConsumptionReport"

    def encode(self) -> bytes:
        return enc_str(self.KIND) + enc_str(self.tracking_id) + enc_str(self.consumer) + enc_int(self.mwh_used)


@dataclass(frozen=True)
class Retire:
    tracking_id: str
    reason: RetirementReason

    KIND = "Retire"

    def encode(self) -> bytes:
        return enc_str(self.KIND) + enc_str(self.tracking_id) + enc_str(self.reason.value)


@dataclass(frozen=True)
class AuditCheckpoint:
    period_start: int
    period_end: int

    KIND = "AuditCheckpoint"

    def encode(self) -> bytes:
        return enc_str(self.KIND) + enc_int(self.period_start) + enc_int(self.period_end)


Payload = Union[Issue, Aggregate, Trade, Swap, ConsumptionReport, Retire, AuditCheckpoint]


def _enum(cls, value):
    try:
        return cls(value)
    except ValueError as exc:
        raise DecodeError(f"bad {cls.__name__} value {value!r}") from exc


def read_payload(r: Reader) -> Payload:
    kind = r.str()
    if kind == Issue.KIND:
        return Issue(
            r.str(), r.str(), _enum(CertificateType, r.str()), EnergySource.read(r),
            r.int(), r.int(), r.int(),
        )
    if kind == Aggregate.KIND:
        broker = r.str()
        members = []
        for raw in r.list():
            try:
                members.append(raw.decode("utf-8"))
            except UnicodeDecodeError as exc:
                raise DecodeError("bad aggregate member") from exc
        return Aggregate(broker, tuple(members))
    if kind == Trade.KIND:
        return Trade(r.str(), r.str())
    if kind == Swap.KIND:
        return Swap(r.str(), r.str())
    if kind == ConsumptionReport.KIND:
        return ConsumptionReport(r.str(), r.str(), r.int())
    if kind == Retire.KIND:
        return Retire(r.str(), _enum(RetirementReason, r.str()))
    if kind == AuditCheckpoint.KIND:
        return AuditCheckpoint(r.int(), r.int())
    raise DecodeError(f"unknown payload kind {kind!r}")


def referenced_ids(payload: Payload) -> tuple[str, ...]:
    """Certificate or aggregate ids a payload acts on."""
    if isinstance(payload, Issue):
        return (payload.tracking_id,)
    if isinstance(payload, Aggregate):
        return payload.members
    if isinstance(payload, Trade):
        return (payload.target,)
    if isinstance(payload, (Swap, ConsumptionReport, Retire)):
        return (payload.tracking_id,)
    return ()


# --- digests ---------------------------------------------------------------


def derive_tracking_id(generator: str, source: EnergySource, issued_at: int, nonce: int) -> str:
    """Tracking id: SHA-256 over the canonical issuance bytes, lowercase hex."""
    data = enc_str(generator) + source.encode() + enc_int(issued_at) + enc_int(nonce)
    return sha256(data).hex()


def derive_aggregate_id(members) -> str:
    return sha256(b"".join(enc_str(m) for m in members)).hex()


def is_digest_hex(value: str) -> bool:
    return len(value) == 64 and all(c in "0123456789abcdef" for c in value)


# --- registry --------------------------------------------------------------


@dataclass(frozen=True)
class RegistryState:
    """Tracking-system state. Treat the mappings as read-only."""

    certificates: Mapping[str, Certificate] = field(default_factory=dict)
    aggregates: Mapping[str, AggregateBlock] = field(default_factory=dict)
    consumption_log: tuple[tuple[str, str, int], ...] = ()
    issued_mwh: int = 0

    def mwh_by_status(self) -> dict[StatusKind, int]:
        totals = {k: 0 for k in StatusKind}
        for cert in self.certificates.values():
            totals[cert.status.kind] += cert.energy_mwh
        return totals

    def conservation_ok(self) -> bool:
        return self.issued_mwh == sum(self.mwh_by_status().values())

    def has_report(self, tracking_id: str, consumer: str) -> bool:
        return any(t == tracking_id and c == consumer for t, c, _ in self.consumption_log)

    def canonical_bytes(self) -> bytes:
        certs = [self.certificates[k].encode() for k in sorted(self.certificates)]
        aggs = [self.aggregates[k].encode() for k in sorted(self.aggregates)]
        log = [enc_str(t) + enc_str(c) + enc_int(tick) for t, c, tick in self.consumption_log]
        return enc_int(self.issued_mwh) + enc_list(certs) + enc_list(aggs) + enc_list(log)

    def digest(self) -> str:
        return sha256(self.canonical_bytes()).hex()


EMPTY_REGISTRY = RegistryState()


def validate_issuance(payload: Issue, registry: RegistryState, participants: Participants) -> Optional[ErrorCode]:
    """Return the rejection code for an issuance, or None when it is accepted."""
    issuer = participants.get(payload.generator)
    if issuer is None or issuer.role is not Role.GENERATOR:
        return ErrorCode.UNAUTHORIZED_ROLE
    if not payload.source.well_formed:
        return ErrorCode.UNKNOWN_SOURCE
    if payload.energy_mwh != 1:
        return ErrorCode.BAD_ENERGY_QUANTITY
    if payload.tracking_id in registry.certificates:
        return ErrorCode.DUPLICATE_ID
    return None


def _require_holder(participants: Participants, pid: str) -> None:
    p = participants.get(pid)
    if p is None:
        raise LifecycleError(ErrorCode.UNKNOWN_PARTICIPANT, pid)
    if p.role in NON_HOLDING_ROLES:
        raise LifecycleError(ErrorCode.UNAUTHORIZED_ROLE, f"{pid} cannot hold certificates")


def _live_cert(registry: RegistryState, tracking_id: str) -> Certificate:
    cert = registry.certificates.get(tracking_id)
    if cert is None:
        raise LifecycleError(ErrorCode.UNKNOWN_CERTIFICATE, tracking_id)
    if cert.status.kind is StatusKind.RETIRED:
        raise LifecycleError(ErrorCode.CERTIFICATE_RETIRED, tracking_id)
    return cert


def _with_certs(registry: RegistryState, updates: dict, **changes) -> RegistryState:
    certs = dict(registry.certificates)
    certs.update(updates)
    return dataclasses.replace(registry, certificates=certs, **changes)


def aggregate(registry: RegistryState, broker: str, members, participants: Participants) -> RegistryState:
    """Bundle Issued certificates into one broker-held aggregate block."""
    members = tuple(members)
    p = participants.get(broker)
    if p is None or p.role is not Role.BROKER:
        raise LifecycleError(ErrorCode.UNAUTHORIZED_ROLE, f"{broker} is not a broker")
    if not members:
        raise LifecycleError(ErrorCode.EMPTY_AGGREGATE)
    if len(set(members)) != len(members):
        raise LifecycleError(ErrorCode.DUPLICATE_MEMBER)
    for tid in members:
        cert = registry.certificates.get(tid)
        if cert is None:
            raise LifecycleError(ErrorCode.UNKNOWN_CERTIFICATE, tid)
        if cert.status.kind is not StatusKind.ISSUED:
            raise LifecycleError(ErrorCode.MEMBER_NOT_ISSUED, tid)
    agg_id = derive_aggregate_id(members)
    status = CertStatus(StatusKind.AGGREGATED, agg_id)
    updates = {
        tid: dataclasses.replace(registry.certificates[tid], status=status, owner=broker)
        for tid in members
    }
    aggs = dict(registry.aggregates)
    aggs[agg_id] = AggregateBlock(agg_id, members, broker, sum(registry.certificates[t].energy_mwh for t in members))
    return _with_certs(registry, updates, aggregates=aggs)


def apply(registry: RegistryState, tx: Payload, actor: str, now: int, participants: Participants) -> RegistryState:
    """Apply one lifecycle action by ``actor`` at tick ``now``.

    Raises ``LifecycleError`` when the action is not a legal transition.
    """
    actor_p = participants.get(actor)
    if actor_p is None:
        raise LifecycleError(ErrorCode.UNKNOWN_PARTICIPANT, actor)

    if isinstance(tx, Issue):
        if actor != tx.generator:
            raise LifecycleError(ErrorCode.UNAUTHORIZED_ROLE, f"{actor} cannot issue for {tx.generator}")
        problem = validate_issuance(tx, registry, participants)
        if problem is not None:
            raise LifecycleError(problem, tx.tracking_id)
        cert = Certificate(
            tracking_id=tx.tracking_id,
            project_name=tx.project_name,
            certificate_type=tx.certificate_type,
            source=tx.source,
            energy_mwh=tx.energy_mwh,
            generator=tx.generator,
            issued_at=tx.issued_at,
            status=ISSUED,
            owner=tx.generator,
        )
        return _with_certs(registry, {cert.tracking_id: cert}, issued_mwh=registry.issued_mwh + cert.energy_mwh)

    if isinstance(tx, Aggregate):
        if actor != tx.broker:
            raise LifecycleError(ErrorCode.UNAUTHORIZED_ROLE, f"{actor} cannot aggregate for {tx.broker}")
        return aggregate(registry, tx.broker, tx.members, participants)

    if isinstance(tx, Trade):
        agg = registry.aggregates.get(tx.target)
        if agg is not None:
            if actor != agg.broker:
                raise LifecycleError(ErrorCode.NOT_OWNER, tx.target)
            _require_holder(participants, tx.new_owner)
            # selling an aggregate dissolves it; members are tracked individually again
            updates = {
                tid: dataclasses.replace(registry.certificates[tid], status=OWNED, owner=tx.new_owner)
                for tid in agg.members
            }
            aggs = dict(registry.aggregates)
            del aggs[agg.id]
            return _with_certs(registry, updates, aggregates=aggs)
        cert = _live_cert(registry, tx.target)
        if actor != cert.owner:
            raise LifecycleError(ErrorCode.NOT_OWNER, tx.target)
        if cert.status.kind is StatusKind.AGGREGATED:
            raise LifecycleError(ErrorCode.INVALID_TRANSITION, "aggregated certificates trade only as a block")
        _require_holder(participants, tx.new_owner)
        return _with_certs(registry, {cert.tracking_id: dataclasses.replace(cert, status=OWNED, owner=tx.new_owner)})

    if isinstance(tx, Swap):
        cert = _live_cert(registry, tx.tracking_id)
        if actor != cert.owner:
            raise LifecycleError(ErrorCode.NOT_OWNER, tx.tracking_id)
        if cert.status.kind is not StatusKind.OWNED:
            raise LifecycleError(ErrorCode.INVALID_TRANSITION, f"swap from {cert.status}")
        _require_holder(participants, tx.new_owner)
        swapped = dataclasses.replace(cert, owner=tx.new_owner, swap_count=cert.swap_count + 1)
        return _with_certs(registry, {cert.tracking_id: swapped})

    if isinstance(tx, ConsumptionReport):
        cert = _live_cert(registry, tx.tracking_id)
        if actor != cert.owner or tx.consumer != actor:
            raise LifecycleError(ErrorCode.NOT_OWNER, tx.tracking_id)
        if cert.status.kind is not StatusKind.OWNED:
            raise LifecycleError(ErrorCode.INVALID_TRANSITION, f"consumption report on {cert.status}")
        if not 1 <= tx.mwh_used <= cert.energy_mwh:
            raise LifecycleError(ErrorCode.BAD_ENERGY_QUANTITY, str(tx.mwh_used))
        entry = (tx.tracking_id, tx.consumer, now)
        return dataclasses.replace(registry, consumption_log=registry.consumption_log + (entry,))

    if isinstance(tx, Retire):
        cert = _live_cert(registry, tx.tracking_id)
        regulator_use = actor_p.role is Role.REGULATOR and tx.reason is RetirementReason.STATUTORY
        if actor != cert.owner and not regulator_use:
            raise LifecycleError(ErrorCode.NOT_OWNER, tx.tracking_id)
        if cert.status.kind is not StatusKind.OWNED:
            raise LifecycleError(ErrorCode.INVALID_TRANSITION, f"retire from {cert.status}")
        if actor_p.role is Role.BUYER and not registry.has_report(cert.tracking_id, actor):
            raise LifecycleError(ErrorCode.MISSING_CONSUMPTION_REPORT, tx.tracking_id)
        retired = dataclasses.replace(
            cert, status=RETIRED, retirement=RetirementRecord(tx.reason, actor, now)
        )
        return _with_certs(registry, {cert.tracking_id: retired})

    if isinstance(tx, AuditCheckpoint):
        if actor_p.role is not Role.REGULATOR:
            raise LifecycleError(ErrorCode.UNAUTHORIZED_ROLE, f"{actor} is not a regulator")
        if tx.period_start > tx.period_end:
            raise LifecycleError(ErrorCode.INVALID_TRANSITION, "empty audit period")
        return registry

    raise TypeError(f"not a payload: {tx!r}")


# Rejections that can never turn into acceptance later in the same chain.
PERMANENT_ERRORS = frozenset({
    ErrorCode.DUPLICATE_ID,
    ErrorCode.BAD_ENERGY_QUANTITY,
    ErrorCode.UNKNOWN_SOURCE,
    ErrorCode.UNAUTHORIZED_ROLE,
    ErrorCode.CERTIFICATE_RETIRED,
    ErrorCode.MEMBER_NOT_ISSUED,
    ErrorCode.DUPLICATE_MEMBER,
    ErrorCode.EMPTY_AGGREGATE,
    ErrorCode.UNKNOWN_PARTICIPANT,
})
