"""Line-oriented scenario files.

One directive per line, ``#`` starts a comment::

    seed 7
    tick_limit 400
    latency 1 3
    topology 1:1 3:2 4:1 5:1
    node B1 Buyer 1
    tx 1 G1 issue project=Sun type=Voluntary source=Solar mwh=1 as=c1
    tx 40 G1 trade target=$c1 to=B1
    partition 5 MKT1,TS1 | TS2,U1
    heal 50
    inject 2 TS2 EquivocateVotes

``as=NAME`` binds the id created by an issue or aggregate so later lines can
refer to it as ``$NAME``.
"""

from __future__ import annotations

import shlex
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Optional

from .core import (
    Aggregate, AuditCheckpoint, CertificateType, ConsumptionReport, EnergySource, Issue, Payload, Retire,
    RetirementReason, Role, Swap, Trade,
)
from .netsim import (
    Behavior, FaultEvent, HealAt, InjectAt, NodeConfig, PartitionAt, SimRun, WorkloadItem, topology_template,
)
from .consensus import ConfigError


class ScenarioError(ValueError):
    def __init__(self, line: int, message: str):
        super().__init__(f"line {line}: {message}")
        self.line = line
        self.message = message


@dataclass
class Scenario:
    sim: SimRun
    control_map: Optional[Path] = None
    aliases: dict[str, str] = field(default_factory=dict)


_INT_KEYS = ("seed", "tick_limit", "round_timeout", "f", "max_block_txs", "tx_ttl")


def _int(text: str, what: str) -> int:
    try:
        return int(text)
    except ValueError:
        raise ValueError(f"{what} must be an integer, got {text!r}") from None


class _Parser:
    def __init__(self, base_dir: Optional[Path]):
        self.base_dir = base_dir
        self.settings: dict[str, int] = {}
        self.latency = (1, 3)
        self.control_map: Optional[Path] = None
        self.nodes: list[NodeConfig] = []
        self.faults: list[FaultEvent] = []
        self.workload: list[WorkloadItem] = []
        self.aliases: dict[str, str] = {}
        self.issue_nonces: dict[str, int] = {}

    def resolve(self, value: str) -> str:
        if value.startswith("$"):
            if value[1:] not in self.aliases:
                raise ValueError(f"undefined alias {value}")
            return self.aliases[value[1:]]
        return value

    def line(self, words: list[str]) -> None:
        key, args = words[0], words[1:]
        if key in _INT_KEYS:
            if len(args) != 1:
                raise ValueError(f"{key} takes one value")
            self.settings[key] = _int(args[0], key)
        elif key == "latency":
            if len(args) != 2:
                raise ValueError("latency takes min and max")
            self.latency = (_int(args[0], "latency min"), _int(args[1], "latency max"))
        elif key == "control_map":
            if len(args) != 1:
                raise ValueError("control_map takes one path")
            path = Path(args[0])
            self.control_map = path if path.is_absolute() or self.base_dir is None else self.base_dir / path
        elif key == "topology":
            counts = {}
            for a in args:
                level, sep, count = a.partition(":")
                if not sep:
                    raise ValueError(f"topology entry {a!r} is not level:count")
                counts[_int(level, "level")] = _int(count, "count")
            self.nodes += topology_template(counts)
        elif key == "node":
            self.node(args)
        elif key == "partition":
            self.partition(args)
        elif key == "heal":
            if len(args) != 1:
                raise ValueError("heal takes a tick")
            self.faults.append(HealAt(_int(args[0], "tick")))
        elif key == "inject":
            if len(args) != 3:
                raise ValueError("inject takes tick, node and behavior")
            behavior = args[2]
            if "($" in behavior:
                head, _, rest = behavior.partition("(")
                behavior = f"{head}({self.resolve(rest.rstrip(')'))})"
            self.faults.append(InjectAt(_int(args[0], "tick"), args[1], Behavior.parse(behavior)))
        elif key == "tx":
            self.tx(args)
        else:
            raise ValueError(f"unknown directive {key!r}")

    def node(self, args: list[str]) -> None:
        if len(args) < 3:
            raise ValueError("node takes id, role and level")
        nid, role, level = args[0], Role(args[1]), _int(args[2], "level")
        validator = False
        behavior = Behavior.parse("Honest")
        for extra in args[3:]:
            if extra == "validator":
                validator = True
            elif extra.startswith("behavior="):
                behavior = Behavior.parse(extra[len("behavior="):])
            else:
                raise ValueError(f"unknown node option {extra!r}")
        self.nodes.append(NodeConfig(nid, role, level, validator, behavior))

    def partition(self, args: list[str]) -> None:
        if len(args) < 2:
            raise ValueError("partition takes a tick and groups")
        tick = _int(args[0], "tick")
        groups = " ".join(args[1:]).split("|")
        sets = tuple(frozenset(n.strip() for n in g.split(",") if n.strip()) for g in groups)
        if len(sets) < 2 or any(not s for s in sets):
            raise ValueError("partition needs at least two non-empty groups")
        self.faults.append(PartitionAt(tick, sets))

    def tx(self, args: list[str]) -> None:
        if len(args) < 3:
            raise ValueError("tx takes tick, signer and operation")
        tick, signer, op = _int(args[0], "tick"), args[1], args[2].lower()
        kv = {}
        for a in args[3:]:
            k, sep, v = a.partition("=")
            if not sep:
                raise ValueError(f"expected key=value, got {a!r}")
            kv[k] = v
        alias = kv.pop("as", None)

        def take(k, default=None):
            if k in kv:
                return self.resolve(kv.pop(k))
            if default is None:
                raise ValueError(f"{op} needs {k}=")
            return default

        payload: Payload
        created = None
        if op == "issue":
            nonce = self.issue_nonces.get(signer, 0)
            payload = Issue(
                generator=take("generator", signer),
                project_name=take("project", "project"),
                certificate_type=CertificateType(take("type", "Voluntary")),
                source=EnergySource.parse(take("source", "Solar")),
                energy_mwh=_int(take("mwh", "1"), "mwh"),
                issued_at=_int(take("at", str(tick)), "at"),
                issue_nonce=_int(take("nonce", str(nonce)), "nonce"),
            )
            self.issue_nonces[signer] = max(nonce, payload.issue_nonce) + 1
            created = payload.tracking_id
        elif op == "aggregate":
            if "members" not in kv:
                raise ValueError("aggregate needs members=")
            members = tuple(self.resolve(m) for m in kv.pop("members").split(",") if m)
            payload = Aggregate(take("broker", signer), members)
            created = payload.aggregate_id
        elif op == "trade":
            payload = Trade(take("target"), take("to"))
        elif op == "swap":
            payload = Swap(take("cert"), take("to"))
        elif op == "report":
            payload = ConsumptionReport(take("cert"), take("consumer", signer), _int(take("mwh", "1"), "mwh"))
        elif op == "retire":
            payload = Retire(take("cert"), RetirementReason(take("reason", RetirementReason.PUBLIC_CLAIM.value)))
        elif op == "audit":
            payload = AuditCheckpoint(_int(take("start"), "start"), _int(take("end"), "end"))
        else:
            raise ValueError(f"unknown operation {op!r}")
        if kv:
            raise ValueError(f"unexpected fields for {op}: {', '.join(sorted(kv))}")
        if alias:
            if created is None:
                raise ValueError(f"as= only applies to issue and aggregate, not {op}")
            self.aliases[alias] = created
        self.workload.append(WorkloadItem(tick, signer, payload))

    def build(self) -> Scenario:
        s = self.settings
        sim = SimRun(
            seed=s.get("seed", 0),
            nodes=tuple(self.nodes),
            workload=tuple(sorted(self.workload, key=lambda w: w.tick)),
            faults=tuple(self.faults),
            tick_limit=s.get("tick_limit", 1000),
            latency=self.latency,
            f=s.get("f"),
            round_timeout=s.get("round_timeout", 10),
            max_block_txs=s.get("max_block_txs", 64),
            tx_ttl=s.get("tx_ttl", 200),
        )
        return Scenario(sim, self.control_map, dict(self.aliases))


def parse_scenario(text: str, base_dir: Optional[Path] = None) -> Scenario:
    """Parse scenario text; errors carry the 1-based line number."""
    p = _Parser(base_dir)
    lineno = 0
    for lineno, raw in enumerate(text.splitlines(), 1):
        try:
            words = shlex.split(raw, comments=True)
        except ValueError as exc:
            raise ScenarioError(lineno, str(exc)) from None
        if not words:
            continue
        try:
            p.line(words)
        except ConfigError:
            raise
        except (ValueError, KeyError) as exc:
            raise ScenarioError(lineno, str(exc)) from None
    if not p.nodes:
        raise ScenarioError(lineno, "scenario declares no nodes")
    return p.build()


def load_scenario(path) -> Scenario:
    path = Path(path)
    return parse_scenario(path.read_text(), path.parent)


def bundled_names() -> list[str]:
    root = resources.files("recledger") / "data" / "scenarios"
    return sorted(p.name[:-len(".scn")] for p in root.iterdir() if p.name.endswith(".scn"))


def bundled_text(name: str) -> str:
    return (resources.files("recledger") / "data" / "scenarios" / f"{name}.scn").read_text()


def load_bundled(name: str) -> Scenario:
    return parse_scenario(bundled_text(name))


def resolve_scenario(ref: str) -> Scenario:
    """A path on disk, or the name of a bundled scenario."""
    path = Path(ref)
    if path.exists():
        return load_scenario(path)
    if ref in bundled_names():
        return load_bundled(ref)
    raise FileNotFoundError(f"no scenario file or bundled scenario named {ref!r}")
