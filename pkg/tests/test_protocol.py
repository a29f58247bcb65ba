import numpy as np
import pytest

from crossref.chain import block_hash, l_confirmed_block
from crossref.hysteresis import cross_domain_audit, verify_chain
from crossref.netsim import FailureSchedule, MessageKind, Phase
from crossref.protocol import (
    ABORTED,
    T1_ROUNDS,
    ProtocolError,
    inject_stop_failure,
    run_flowchart1,
    run_flowchart2,
    start_cross_reference,
    step_round,
)


def fail_at(*pairs):
    return FailureSchedule(tuple(pairs))


def test_m3_every_ccn_collects_all_records(world_factory):
    world = world_factory(m=3, l=6)
    expected = {d: block_hash(l_confirmed_block(world.chains[d], 6)) for d in range(3)}
    outcome = run_flowchart1(world)
    assert outcome.success
    assert sorted(outcome.collected_records) == [0, 1, 2]
    for recs in outcome.collected_records.values():
        assert {k: r.digest for k, r in recs.items()} == expected
    for d in range(3):
        assert world.chains[d].tip.cross_reference == world.ccns[d].hysteresis_chain.latest
        assert world.ccns[d].phase is Phase.IDLE


@pytest.mark.parametrize("m", [2, 3, 5, 10])
def test_phase1_message_count(world_factory, m):
    outcome = run_flowchart1(world_factory(m=m))
    assert outcome.metrics.phase_messages[1] == (m - 1) + m * (m - 1)
    assert outcome.metrics.phase_messages[2] == 2 * m
    assert outcome.metrics.phase_messages[3] == m * (m - 1)
    assert outcome.metrics.phase_rounds == (2, 2, 1)


def test_phase1_quadratic_fit(world_factory):
    ms = [2, 4, 8]
    counts = [run_flowchart1(world_factory(m=m)).metrics.phase_messages[1] for m in ms]
    coeffs = np.polyfit(ms, counts, 2)
    assert np.allclose(coeffs, [1.0, 0.0, -1.0], atol=1e-8)


def test_single_domain(world_factory):
    world = world_factory(m=1)
    outcome = run_flowchart1(world)
    assert outcome.success
    assert outcome.metrics.phase_messages[1] == 0
    assert len(world.ccns[0].hysteresis_chain) == 1
    assert world.ccns[0].hysteresis_chain.latest.domains == (0,)


def test_failed_initiator(world_factory):
    world = world_factory(m=3, failure_schedule=fail_at((0, 0)))
    with pytest.raises(ProtocolError, match="initiator unavailable"):
        run_flowchart2(world)


def test_flowchart1_rejects_failure(world_factory):
    world = world_factory(m=3, failure_schedule=fail_at((2, 1)))
    with pytest.raises(ProtocolError, match="flowchart1 assumption violated"):
        run_flowchart1(world)


def test_failure_after_done_is_tolerated_by_flowchart1(world_factory):
    world = world_factory(m=3)
    inject_stop_failure(world, 2, 5)
    assert run_flowchart1(world).success


def test_step_round_is_deterministic(world_factory):
    world = world_factory(m=4)
    start_cross_reference(0, world)
    step_round(world)
    twin = world.clone()
    a = step_round(world)
    b = step_round(twin)
    assert a.to_dict() == b.to_dict()
    assert world.to_json() == twin.to_json()


def test_step_round_with_everyone_failed(world_factory):
    world = world_factory(m=3)
    world.failed.update({0, 1, 2})
    delta = step_round(world)
    assert delta.messages_total == 0 and delta.bytes_total == 0


def test_end_to_end_m5_audits_consistent(world_factory):
    world = world_factory(m=5, l=6)
    outcome = run_flowchart1(world)
    chains = world.hysteresis_chains()
    keys = world.public_keys()
    for d in range(5):
        assert verify_chain(chains[d], keys).valid
        record = outcome.collected_records[d][d]
        local = block_hash(world.chains[d].blocks[record.height])
        others = {k: c for k, c in chains.items() if k != d}
        report = cross_domain_audit(d, record.height, local, others, keys)
        assert report.verdict == "consistent"
        assert len(report.agreeing_domains) == 4


def test_evidence_propagation_and_announcements(world_factory):
    world = world_factory(m=4)
    outcome = run_flowchart1(world)
    for d in range(4):
        assert world.ccns[d].announcements == {
            k: block_hash(b) for k, b in outcome.mined_blocks.items() if k != d
        }


def test_two_consecutive_rounds_link(world_factory):
    world = world_factory(m=3)
    run_flowchart1(world)
    run_flowchart1(world, initiator=2)
    for d in range(3):
        chain = world.ccns[d].hysteresis_chain
        assert len(chain) == 2
        assert verify_chain(chain, world.public_keys()).valid


def test_flowchart2_tolerates_three_failures(world_factory):
    world = world_factory(m=10, t=3, failure_schedule=fail_at((3, 0), (5, 0), (9, 0)))
    outcome = run_flowchart2(world)
    assert outcome.success
    live = [d for d in range(10) if d not in (3, 5, 9)]
    assert sorted(outcome.collected_records) == live
    for recs in outcome.collected_records.values():
        assert len(recs) == 7
    for d in live:
        assert world.ccns[d].hysteresis_chain.latest.gaps == (3, 5, 9)
    assert outcome.metrics.messages_discarded > 0


def test_flowchart2_t0_matches_flowchart1(world_factory):
    a = run_flowchart1(world_factory(m=5))
    b = run_flowchart2(world_factory(m=5), t=0)
    assert a.metrics.phase_messages == b.metrics.phase_messages
    assert a.metrics.phase_rounds == b.metrics.phase_rounds
    assert {d: {k: r.digest for k, r in v.items()} for d, v in a.collected_records.items()} == {
        d: {k: r.digest for k, r in v.items()} for d, v in b.collected_records.items()
    }


def test_flowchart2_without_failures_uses_no_retries(world_factory):
    outcome = run_flowchart2(world_factory(m=5, t=2))
    assert outcome.success
    assert outcome.metrics.phase_messages[1] == 4 + 5 * 4


def test_flowchart2_exceeding_tolerance_aborts(world_factory):
    world = world_factory(m=5, t=1, failure_schedule=fail_at((1, 0), (2, 0), (3, 0)))
    outcome = run_flowchart2(world)
    assert outcome.status == "aborted"
    assert outcome.reason == ABORTED
    assert outcome.aborted_domains == [0, 4]
    assert not outcome.mined_blocks
    assert all(len(world.ccns[d].hysteresis_chain) == 0 for d in (0, 4))


def test_failure_mid_phase1(world_factory):
    world = world_factory(m=6, t=2, failure_schedule=fail_at((4, 1)))
    outcome = run_flowchart2(world)
    assert outcome.success
    assert sorted(outcome.collected_records) == [0, 1, 2, 3, 5]
    assert all(len(r) == 5 for r in outcome.collected_records.values())


def test_failure_after_done_under_flowchart2(world_factory):
    world = world_factory(m=4, t=1)
    inject_stop_failure(world, 3, 6)
    outcome = run_flowchart2(world)
    assert outcome.success
    assert all(len(r) == 4 for r in outcome.collected_records.values())


def test_retry_requests_are_sent(world_factory):
    world = world_factory(m=4, t=2, failure_schedule=fail_at((2, 0)))
    run_flowchart2(world)
    retries = [
        e for e in world.transcript if e["event"] == "send" and e["kind"] == MessageKind.START.value and e["sender"] != "ccn-0"
    ]
    assert retries
    assert all(e["receiver"] == "ccn-2" for e in retries)


def test_flowchart2_phase1_duration(world_factory):
    world = world_factory(m=5, t=2, failure_schedule=fail_at((4, 0)))
    outcome = run_flowchart2(world)
    assert outcome.metrics.phase_rounds[0] == (2 + 1) * T1_ROUNDS


def test_session_busy_and_bad_args(world_factory):
    world = world_factory(m=3)
    start_cross_reference(0, world)
    with pytest.raises(ProtocolError):
        start_cross_reference(1, world)
    with pytest.raises(ProtocolError):
        inject_stop_failure(world, 9, 0)
    with pytest.raises(ProtocolError):
        start_cross_reference(0, world_factory(m=2), flowchart=3)
