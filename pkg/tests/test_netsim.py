import pytest

from recledger.consensus import ConfigError
from recledger.core import Role
from recledger.netsim import (
    Behavior, BehaviorKind, Event, HealAt, InjectAt, NodeConfig, PartitionAt, SimRun, Simulator, inject_fault,
    parse_details, run, topology_template,
)
from support import N4, N7, client_nodes, sim_for, simple_workload


def kinds(report, kind):
    return [e for e in report.events if e.kind == kind]


# --- topology --------------------------------------------------------------


def test_topology_mapping():
    nodes = topology_template({1: 2, 2: 1, 3: 1, 4: 1, 5: 2})
    assert [(n.id, n.role, n.der_level) for n in nodes] == [
        ("G1", Role.GENERATOR, 1), ("G2", Role.GENERATOR, 1), ("BR1", Role.BROKER, 2),
        ("TS1", Role.TRADING_PLATFORM, 3), ("U1", Role.UTILITY, 4),
        ("MKT1", Role.TRADING_PLATFORM, 5), ("REG1", Role.REGULATOR, 5),
    ]
    assert [n.id for n in nodes if n.is_validator] == ["TS1", "U1", "MKT1", "REG1"]


@pytest.mark.parametrize("counts", [{1: 0, 2: 0, 3: 0, 4: 0, 5: 0}, {1: 3}, {6: 1}, {3: -1}])
def test_topology_errors(counts):
    with pytest.raises(ConfigError):
        topology_template(counts)


def test_behavior_parse():
    assert Behavior.parse("TamperStoredBlock(2)") == Behavior(BehaviorKind.TAMPER_STORED_BLOCK, 2)
    assert str(Behavior.parse("EquivocateVotes")) == "EquivocateVotes"
    assert Behavior.parse("DoubleSpendAttempt(abc)").arg == "abc"
    for bad in ("TamperStoredBlock", "TamperStoredBlock(0)", "EquivocateVotes(1)", "Sleepy", "DoubleSpendAttempt"):
        with pytest.raises(ValueError):
            Behavior.parse(bad)


def test_node_and_fault_validation():
    base = tuple(topology_template(N4))
    bad_runs = [
        SimRun(1, base + (NodeConfig("TS1", Role.TRADING_PLATFORM, 3, True),)),
        SimRun(1, base + (NodeConfig("X", Role.BUYER, 1, True),)),
        SimRun(1, base, latency=(3, 1)),
        SimRun(1, base, faults=(HealAt(9), HealAt(3))),
        SimRun(1, base, faults=(InjectAt(1, "ghost", Behavior(BehaviorKind.EQUIVOCATE_VOTES)),)),
        SimRun(1, base, faults=(PartitionAt(1, (frozenset({"TS1"}), frozenset({"ghost"}))),)),
        SimRun(1, base + (NodeConfig("B1", Role.BUYER, 1, False, Behavior(BehaviorKind.DOUBLE_SPEND_ATTEMPT, "x")),)),
    ]
    for sim in bad_runs:
        with pytest.raises(ConfigError):
            run(sim)


# --- runs ------------------------------------------------------------------


def test_fault_free_run_commits_everything():
    report = run(sim_for(N4, 3))
    assert len(set(report.chain_digests.values())) == 1
    assert len(report.commit_latencies) == len(simple_workload())
    assert not report.uncommitted and not report.rejected and not report.invariant_violations


def test_runs_are_deterministic():
    a, b = run(sim_for(N7, 8)), run(sim_for(N7, 8))
    assert a.event_log() == b.event_log() and a.render() == b.render()
    assert run(sim_for(N7, 9)).event_log() != a.event_log()


def test_event_lines_roundtrip():
    for e in run(sim_for(N4, 2)).events:
        assert Event.parse(e.line()) == e
    assert parse_details("a=1 b=x=y junk") == {"a": "1", "b": "x=y"}


def test_partition_blocks_commits_until_heal():
    groups = (frozenset({"MKT1", "TS1"}), frozenset({"TS2", "U1"}))
    report = run(sim_for(N4, 4, faults=(PartitionAt(5, groups), HealAt(60))))
    commits = kinds(report, "commit")
    assert commits and all(not 5 <= e.tick < 60 for e in commits)
    assert len(set(report.chain_digests.values())) == 1
    assert len(report.commit_latencies) == len(simple_workload())


def test_equivocator_is_flagged_and_contained():
    report = run(sim_for(N4, 5, faults=(InjectAt(2, "TS2", Behavior(BehaviorKind.EQUIVOCATE_VOTES)),)))
    assert report.flagged == ["TS2"] and not report.safety_violations
    assert len(report.commit_latencies) == len(simple_workload())
    for nid in report.honest:
        first = min(e.tick for e in kinds(report, "equivocation-detected") if e.node == nid)
        chain = report.chains[nid]
        for block in chain.blocks[1:]:
            commit_tick = next(e.tick for e in kinds(report, "commit")
                               if e.node == nid and parse_details(e.details)["height"] == str(block.height))
            if commit_tick > first:
                assert "TS2" not in block.quorum_cert.voters


def test_tampered_node_is_detected_and_isolated():
    report = run(sim_for(N4, 6, faults=(InjectAt(0, "TS2", Behavior(BehaviorKind.TAMPER_STORED_BLOCK, 2)),)))
    detected = [e for e in kinds(report, "tamper-detected") if e.node == "TS2"]
    assert detected and "InvalidAt(2," in detected[-1].details
    honest = {report.chain_digests[n] for n in report.honest}
    assert len(honest) == 1 and report.chain_digests["TS2"] not in honest


def test_two_byzantine_of_four_voids_guarantees():
    faults = (InjectAt(2, "TS2", Behavior(BehaviorKind.FORGE_TRANSACTION)),
              InjectAt(3, "U1", Behavior(BehaviorKind.EQUIVOCATE_VOTES)))
    report = run(sim_for(N4, 7, faults=faults))
    assert report.guarantees_void
    assert len(kinds(report, "byzantine-limit-exceeded")) == 1


def test_replayed_transaction_rejected_everywhere():
    report = run(sim_for(N4, 8, faults=(InjectAt(30, "U1", Behavior(BehaviorKind.REPLAY_TRANSACTION)),)))
    replays = [parse_details(e.details)["tx"] for e in kinds(report, "submit") if e.node == "U1"]
    assert replays
    for digest in replays:
        stale = {e.node for e in kinds(report, "reject.StaleNonce") if parse_details(e.details).get("tx") == digest}
        assert set(report.honest) <= stale
    counts = {}
    for block in report.chains["MKT1"].blocks:
        for tx in block.transactions:
            counts[tx.digest] = counts.get(tx.digest, 0) + 1
    assert max(counts.values()) == 1


def test_forged_transactions_never_commit():
    report = run(sim_for(N4, 9, faults=(InjectAt(10, "TS2", Behavior(BehaviorKind.FORGE_TRANSACTION)),)))
    assert kinds(report, "reject.BadSignature")
    committed = report.committed_txs()
    forged = [parse_details(e.details)["tx"] for e in kinds(report, "submit") if e.node == "TS2"]
    assert forged and not set(forged) & set(committed)


def test_inject_fault_rejects_past_ticks():
    state = Simulator(sim_for(N4, 1))
    state.now = 10
    with pytest.raises(ValueError):
        inject_fault(state, HealAt(5))
    inject_fault(state, InjectAt(12, "TS1", Behavior(BehaviorKind.EQUIVOCATE_VOTES)))
    assert "TS1" in state.ever_byzantine


def test_clients_are_not_validators():
    report = run(sim_for(N4, 1))
    assert set(report.chain_digests) == {"MKT1", "TS1", "TS2", "U1"}
    assert {n.id for n in client_nodes()}.isdisjoint(report.chain_digests)
