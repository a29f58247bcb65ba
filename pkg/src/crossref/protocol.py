"""Three-phase cross-referencing protocol between central core nodes (CCNs).

Phase 1: the initiator broadcasts a start message; every CCN then sends its
l-confirmed block record to every other CCN. Phase 2: each CCN signs the
collected digests into its hysteresis chain and asks one peripheral core node
(PCN) of its own domain to mine a block carrying that signature. Phase 3: each
CCN broadcasts the accepted block.

Flowchart 1 waits for all ``m`` records and treats any stop failure as a
violated assumption. Flowchart 2 gives Phase 1 up to ``t + 1`` collection
windows of ``T1_ROUNDS`` each, re-requesting records from silent domains after
each window, and then proceeds with at least ``m - t`` records or aborts.

Phase-1 message count without failures is ``(m - 1) + m (m - 1)``: one start
broadcast plus one record per ordered pair of CCNs.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from . import crypto
from .chain import Block, block_hash, l_confirmed_block, meets_target, mine_block
from .hysteresis import BlockRef
from .netsim import (
    CcnState,
    Message,
    MessageKind,
    PcnState,
    Phase,
    RoundMetrics,
    SimWorld,
    StartRequest,
    apply_failures,
    broadcast,
    ccn_id,
    deliver,
    payload_summary_for,
    pcn_id,
    send,
)

# Rounds per Phase-1 collection window: start propagation plus record exchange.
T1_ROUNDS = 2

_KIND_ORDER = {
    MessageKind.START: 0,
    MessageKind.BLOCK_RECORD: 1,
    MessageKind.MINE_REQUEST: 2,
    MessageKind.MINED_BLOCK: 3,
    MessageKind.ANNOUNCE: 4,
}

ABORTED = "aborted: tolerance exceeded"


class ProtocolError(RuntimeError):
    pass


@dataclass
class RoundHandle:
    initiator: int
    flowchart: int
    t: int
    start_round: int
    metrics: RoundMetrics = field(default_factory=RoundMetrics)
    phase1_done: dict[int, int] = field(default_factory=dict)
    phase2_done: dict[int, int] = field(default_factory=dict)
    completed: set[int] = field(default_factory=set)
    aborted: set[int] = field(default_factory=set)
    mined_blocks: dict[int, Block] = field(default_factory=dict)
    records: dict[int, dict[int, BlockRef]] = field(default_factory=dict)


@dataclass
class ProtocolOutcome:
    status: str
    flowchart: int
    initiator: int
    t: int
    mined_blocks: dict[int, Block]
    collected_records: dict[int, dict[int, BlockRef]]
    metrics: RoundMetrics
    failed_domains: list[int]
    aborted_domains: list[int]
    start_round: int
    end_round: int

    @property
    def success(self) -> bool:
        return self.status == "success"

    @property
    def reason(self) -> str | None:
        return None if self.success else ABORTED

    def to_dict(self) -> dict:
        return {
            "status": self.status,
            "reason": self.reason,
            "flowchart": self.flowchart,
            "initiator": self.initiator,
            "t": self.t,
            "start_round": self.start_round,
            "end_round": self.end_round,
            "failed_domains": self.failed_domains,
            "aborted_domains": self.aborted_domains,
            "metrics": self.metrics.to_dict(),
            "mined_blocks": {str(d): block_hash(b).hex() for d, b in sorted(self.mined_blocks.items())},
            "collected_records": {
                str(d): {str(k): r.digest.hex() for k, r in sorted(recs.items())}
                for d, recs in sorted(self.collected_records.items())
            },
        }


def _transition(world: SimWorld, ccn: CcnState, phase: Phase) -> None:
    world.log("phase", node=ccn.node_id, previous=ccn.phase.value, current=phase.value)
    ccn.phase = phase


def _own_record(world: SimWorld, ccn: CcnState) -> BlockRef:
    block = l_confirmed_block(world.chains[ccn.domain_id], ccn.l)
    return BlockRef(ccn.domain_id, block_hash(block), block.height)


def _enter_phase1(world: SimWorld, ccn: CcnState) -> None:
    _transition(world, ccn, Phase.PHASE1)
    ccn.phase1_entered = world.round_counter
    record = _own_record(world, ccn)
    ccn.collected_records[ccn.domain_id] = record
    broadcast(world, ccn.node_id, MessageKind.BLOCK_RECORD, record)


def _enter_phase2(world: SimWorld, ccn: CcnState) -> None:
    session: RoundHandle = world.session
    d = ccn.domain_id
    refs = [ccn.collected_records[k] for k in sorted(ccn.collected_records)]
    gaps = sorted(set(world.ccns) - set(ccn.collected_records))
    ccn.hysteresis_chain = ccn.hysteresis_chain.append(ccn.keypair, refs, signer=d, gaps=gaps)
    ccn.pending_signature = ccn.hysteresis_chain.latest
    session.phase1_done[d] = world.round_counter
    session.records[d] = dict(ccn.collected_records)
    _transition(world, ccn, Phase.PHASE2)
    seq = ccn.pending_signature.sequence_number
    miner = crypto.derive_seed(world.rng_seed, "miner", d, seq) % world.config.nodes_per_domain
    send(world, ccn.node_id, pcn_id(d, miner), MessageKind.MINE_REQUEST, ccn.pending_signature)


def _abort(world: SimWorld, ccn: CcnState) -> None:
    session: RoundHandle = world.session
    session.aborted.add(ccn.domain_id)
    session.phase1_done[ccn.domain_id] = world.round_counter
    ccn.aborted = True
    world.log("abort", node=ccn.node_id, collected=len(ccn.collected_records))
    _transition(world, ccn, Phase.IDLE)


def _advance(world: SimWorld, ccn: CcnState) -> None:
    """Run the CCN's timer-driven transitions for the current round."""
    session: RoundHandle = world.session
    if session is None or ccn.phase is not Phase.PHASE1:
        return
    m = world.m
    if len(ccn.collected_records) == m:
        _enter_phase2(world, ccn)
        return
    if session.flowchart == 1:
        return
    deadline = session.start_round + ccn.attempt * T1_ROUNDS
    if world.round_counter < deadline:
        return
    if ccn.attempt < ccn.retry_budget:
        silent = [d for d in sorted(world.ccns) if d not in ccn.collected_records]
        request = StartRequest(session.initiator, session.start_round, ccn.attempt)
        broadcast(world, ccn.node_id, MessageKind.START, request, receivers=silent)
        ccn.attempt += 1
    elif len(ccn.collected_records) >= m - session.t:
        _enter_phase2(world, ccn)
    else:
        _abort(world, ccn)


def _properly_mined(world: SimWorld, ccn: CcnState, block: Block) -> bool:
    chain = world.chains[ccn.domain_id]
    tip = chain.tip
    return (
        block.domain_id == ccn.domain_id
        and block.height == tip.height + 1
        and block.previous_hash == block_hash(tip)
        and block.difficulty_bits >= chain.difficulty_bits
        and meets_target(block)
        and block.cross_reference == ccn.pending_signature
    )


def _handle_ccn(world: SimWorld, ccn: CcnState, msg: Message) -> None:
    session: RoundHandle | None = world.session
    if msg.kind is MessageKind.START:
        if session is None:
            return
        if ccn.phase is Phase.IDLE and not ccn.aborted:
            _enter_phase1(world, ccn)
        elif msg.payload.attempt > 0 and ccn.phase in (Phase.PHASE1, Phase.PHASE2, Phase.PHASE3, Phase.DONE):
            send(world, ccn.node_id, msg.sender, MessageKind.BLOCK_RECORD, _own_record_cached(ccn))
    elif msg.kind is MessageKind.BLOCK_RECORD:
        if ccn.phase is Phase.PHASE1:
            ccn.collected_records.setdefault(msg.payload.domain_id, msg.payload)
    elif msg.kind is MessageKind.MINED_BLOCK:
        block: Block = msg.payload
        if ccn.phase is Phase.PHASE2 and _properly_mined(world, ccn, block):
            world.chains[ccn.domain_id] = world.chains[ccn.domain_id].append(block)
            _transition(world, ccn, Phase.PHASE3)
            broadcast(world, ccn.node_id, MessageKind.ANNOUNCE, block)
            _transition(world, ccn, Phase.DONE)
            session.phase2_done[ccn.domain_id] = world.round_counter
            session.completed.add(ccn.domain_id)
            session.mined_blocks[ccn.domain_id] = block
            for meter in (world.metrics, session.metrics):
                meter.completed_domains.add(ccn.domain_id)
    elif msg.kind is MessageKind.ANNOUNCE:
        ccn.announcements[msg.payload.domain_id] = block_hash(msg.payload)


def _own_record_cached(ccn: CcnState) -> BlockRef:
    return ccn.collected_records[ccn.domain_id]


def _handle_pcn(world: SimWorld, pcn: PcnState, msg: Message) -> None:
    if msg.kind is not MessageKind.MINE_REQUEST or pcn.pending_request is not None:
        return
    pcn.pending_request = msg.payload
    chain = world.chains[pcn.domain_id]
    height = chain.tip_height + 1
    block = mine_block(
        chain,
        payload_summary_for(world.rng_seed, pcn.domain_id, height),
        world.config.tx_per_block,
        cross_reference=msg.payload,
        rng_seed=crypto.derive_seed(world.rng_seed, "mine", pcn.domain_id, height),
    )
    send(world, pcn.node_id, ccn_id(pcn.domain_id), MessageKind.MINED_BLOCK, block)
    pcn.pending_request = None


def _check_flowchart1(world: SimWorld, newly_failed: list[int]) -> None:
    session: RoundHandle | None = world.session
    if session is None or session.flowchart != 1:
        return
    if any(d not in session.completed for d in newly_failed):
        raise ProtocolError("flowchart1 assumption violated")


def start_cross_reference(
    initiator: int,
    world: SimWorld,
    flowchart: int = 1,
    t: int | None = None,
    l: int | None = None,  # noqa: E741
) -> RoundHandle:
    """Open a cross-referencing round in the current world round."""
    if world.session is not None:
        raise ProtocolError("a cross-referencing round is already in progress")
    if initiator not in world.ccns:
        raise ProtocolError(f"unknown domain {initiator}")
    if flowchart not in (1, 2):
        raise ProtocolError(f"unknown flowchart {flowchart}")
    t = 0 if flowchart == 1 else (world.config.t if t is None else t)
    if t < 0:
        raise ProtocolError("t must be >= 0")
    apply_failures(world)
    if initiator in world.failed:
        raise ProtocolError("initiator unavailable")
    if flowchart == 1 and world.failed:
        raise ProtocolError("flowchart1 assumption violated")
    busy = [d for d in world.live_domains() if world.ccns[d].phase is not Phase.IDLE]
    if busy:
        raise ProtocolError(f"CCNs not idle: {busy}")

    session = RoundHandle(initiator=initiator, flowchart=flowchart, t=t, start_round=world.round_counter)
    world.session = session
    world.meters.append(session.metrics)
    for d in world.live_domains():
        ccn = world.ccns[d]
        if l is not None:
            ccn.l = l
        ccn.collected_records = {}
        ccn.announcements = {}
        ccn.attempt = 1
        ccn.retry_budget = t + 1
        ccn.aborted = False
        ccn.pending_signature = None
    world.log("start", initiator=initiator, flowchart=flowchart, t=t)
    leader = world.ccns[initiator]
    broadcast(world, leader.node_id, MessageKind.START, StartRequest(initiator, session.start_round, 0))
    _enter_phase1(world, leader)
    _advance(world, leader)
    return session


def step_round(world: SimWorld) -> RoundMetrics:
    """Advance the world by one synchronous round and return what it cost."""
    delta = RoundMetrics()
    world.meters.append(delta)
    try:
        world.round_counter += 1
        _check_flowchart1(world, apply_failures(world))
        deliver(world)
        for d in sorted(world.ccns):
            ccn = world.ccns[d]
            inbox = world.inboxes[ccn.node_id]
            world.inboxes[ccn.node_id] = []
            if d in world.failed:
                continue
            for msg in sorted(inbox, key=lambda msg: _KIND_ORDER[msg.kind]):
                _handle_ccn(world, ccn, msg)
            _advance(world, ccn)
        for d in sorted(world.pcns):
            for pcn in world.pcns[d]:
                inbox = world.inboxes[pcn.node_id]
                world.inboxes[pcn.node_id] = []
                for msg in inbox:
                    _handle_pcn(world, pcn, msg)
    finally:
        world.meters.remove(delta)
    return delta


def _quiescent(world: SimWorld) -> bool:
    if world.outbox:
        return False
    return all(world.ccns[d].phase in (Phase.IDLE, Phase.DONE) for d in world.live_domains())


def _run(world: SimWorld, initiator: int, flowchart: int, t: int, l: int | None) -> ProtocolOutcome:  # noqa: E741
    session = start_cross_reference(initiator, world, flowchart=flowchart, t=t, l=l)
    limit = session.start_round + (t + 1) * T1_ROUNDS + 32
    try:
        while not _quiescent(world):
            if world.round_counter >= limit:
                raise ProtocolError("cross-referencing round did not terminate")
            step_round(world)
    finally:
        world.meters.remove(session.metrics)
        world.session = None

    end = world.round_counter
    p1_end = max(session.phase1_done.values(), default=session.start_round)
    p2_end = max(session.phase2_done.values(), default=p1_end)
    session.metrics.phase_rounds = (p1_end - session.start_round, p2_end - p1_end, end - p2_end)
    world.metrics.phase_rounds = session.metrics.phase_rounds

    for d in world.live_domains():
        ccn = world.ccns[d]
        if ccn.phase is Phase.DONE:
            _transition(world, ccn, Phase.IDLE)
    status = "aborted" if session.aborted else "success"
    world.log("end", status=status)
    return ProtocolOutcome(
        status=status,
        flowchart=flowchart,
        initiator=initiator,
        t=t,
        mined_blocks=dict(session.mined_blocks),
        collected_records={d: session.records[d] for d in sorted(session.completed)},
        metrics=session.metrics,
        failed_domains=sorted(world.failed),
        aborted_domains=sorted(session.aborted),
        start_round=session.start_round,
        end_round=end,
    )


def run_flowchart1(world: SimWorld, initiator: int = 0, l: int | None = None) -> ProtocolOutcome:  # noqa: E741
    """Failure-free protocol; raises ProtocolError if any CCN stops."""
    return _run(world, initiator, flowchart=1, t=0, l=l)


def run_flowchart2(world: SimWorld, initiator: int = 0, l: int | None = None, t: int | None = None) -> ProtocolOutcome:  # noqa: E741
    """t-stop-failure tolerant protocol. Aborts if fewer than m - t CCNs answer."""
    t = world.config.t if t is None else t
    return _run(world, initiator, flowchart=2, t=t, l=l)


def inject_stop_failure(world: SimWorld, domain_id: int, at_round: int) -> None:
    if domain_id not in world.ccns:
        raise ProtocolError(f"unknown domain {domain_id}")
    if at_round < 0:
        raise ProtocolError("at_round must be >= 0")
    world.failure_schedule.append((domain_id, at_round))
    world.failure_schedule.sort(key=lambda e: (e[1], e[0]))
