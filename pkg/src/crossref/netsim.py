"""Synchronous complete-graph transport between central core nodes.

One round is one hop: a message sent in round ``r`` is delivered at the start
of round ``r + 1``. Failed nodes stop silently; messages addressed to them are
discarded at delivery and counted as such, never dropped without a record.
"""

from __future__ import annotations

import copy
import enum
import json
import struct
from collections.abc import Iterable, Sequence
from dataclasses import dataclass, field
from typing import Any

from . import crypto
from .chain import Block, DomainChain, mine_block
from .crypto import KeyPair, SchemeId
from .hysteresis import BlockRef, HysteresisChain, HysteresisSignature


class ConfigError(ValueError):
    def __init__(self, problems: Sequence[str]):
        self.problems = list(problems)
        super().__init__("invalid config: " + "; ".join(self.problems))


class MessageKind(str, enum.Enum):
    START = "StartCrossRef"
    BLOCK_RECORD = "BlockRecord"
    MINE_REQUEST = "MineRequest"
    MINED_BLOCK = "MinedBlock"
    ANNOUNCE = "Announce"

    @property
    def phase(self) -> int:
        return _PHASE_OF_KIND[self]


_PHASE_OF_KIND = {
    MessageKind.START: 1,
    MessageKind.BLOCK_RECORD: 1,
    MessageKind.MINE_REQUEST: 2,
    MessageKind.MINED_BLOCK: 2,
    MessageKind.ANNOUNCE: 3,
}


@dataclass(frozen=True)
class StartRequest:
    initiator: int
    start_round: int
    attempt: int = 0

    def to_bytes(self) -> bytes:
        return struct.pack(">IQI", self.initiator, self.start_round, self.attempt)


def payload_bytes(payload: Any) -> bytes:
    if isinstance(payload, StartRequest):
        return payload.to_bytes()
    if isinstance(payload, BlockRef):
        return struct.pack(">IQ", payload.domain_id, payload.height) + payload.digest
    if isinstance(payload, (HysteresisSignature, Block)):
        return payload.to_bytes()
    raise TypeError(f"unsupported payload type {type(payload).__name__}")


@dataclass(frozen=True)
class Message:
    kind: MessageKind
    sender: str
    receiver: str
    round: int
    payload: Any
    size_bytes: int

    @classmethod
    def build(cls, kind: MessageKind, sender: str, receiver: str, round_: int, payload: Any) -> Message:
        return cls(kind, sender, receiver, round_, payload, len(payload_bytes(payload)))


class Phase(str, enum.Enum):
    IDLE = "Idle"
    PHASE1 = "Phase1Collecting"
    PHASE2 = "Phase2Mining"
    PHASE3 = "Phase3Announcing"
    DONE = "Done"
    FAILED = "Failed"


def ccn_id(domain_id: int) -> str:
    return f"ccn-{domain_id}"


def pcn_id(domain_id: int, index: int) -> str:
    return f"pcn-{domain_id}-{index}"


@dataclass
class CcnState:
    domain_id: int
    keypair: KeyPair
    l: int  # noqa: E741
    hysteresis_chain: HysteresisChain = field(default_factory=HysteresisChain)
    phase: Phase = Phase.IDLE
    collected_records: dict[int, BlockRef] = field(default_factory=dict)
    retry_budget: int = 1
    attempt: int = 1
    phase1_entered: int | None = None
    pending_signature: HysteresisSignature | None = None
    announcements: dict[int, bytes] = field(default_factory=dict)
    aborted: bool = False

    @property
    def node_id(self) -> str:
        return ccn_id(self.domain_id)

    def to_dict(self) -> dict:
        return {
            "domain_id": self.domain_id,
            "public_key": self.keypair.public_key.hex(),
            "l": self.l,
            "phase": self.phase.value,
            "collected_records": {
                str(d): {"height": r.height, "digest": r.digest.hex()}
                for d, r in sorted(self.collected_records.items())
            },
            "retry_budget": self.retry_budget,
            "attempt": self.attempt,
            "aborted": self.aborted,
            "announcements": {str(d): h.hex() for d, h in sorted(self.announcements.items())},
            "hysteresis_chain": self.hysteresis_chain.to_dict(),
        }


@dataclass
class PcnState:
    domain_id: int
    index: int
    pending_request: HysteresisSignature | None = None

    @property
    def node_id(self) -> str:
        return pcn_id(self.domain_id, self.index)


@dataclass
class RoundMetrics:
    messages_total: int = 0
    bytes_total: int = 0
    messages_delivered: int = 0
    messages_discarded: int = 0
    phase_messages: dict[int, int] = field(default_factory=lambda: {1: 0, 2: 0, 3: 0})
    phase_bytes: dict[int, int] = field(default_factory=lambda: {1: 0, 2: 0, 3: 0})
    phase_rounds: tuple[int, int, int] = (0, 0, 0)
    completed_domains: set[int] = field(default_factory=set)

    def record_send(self, msg: Message) -> None:
        self.messages_total += 1
        self.bytes_total += msg.size_bytes
        self.phase_messages[msg.kind.phase] += 1
        self.phase_bytes[msg.kind.phase] += msg.size_bytes

    def to_dict(self) -> dict:
        return {
            "messages_total": self.messages_total,
            "bytes_total": self.bytes_total,
            "messages_delivered": self.messages_delivered,
            "messages_discarded": self.messages_discarded,
            "phase_messages": {str(k): v for k, v in sorted(self.phase_messages.items())},
            "phase_bytes": {str(k): v for k, v in sorted(self.phase_bytes.items())},
            "phase_rounds": list(self.phase_rounds),
            "completed_domains": sorted(self.completed_domains),
        }


@dataclass(frozen=True)
class FailureSchedule:
    entries: tuple[tuple[int, int], ...] = ()

    def validate(self, m: int) -> list[str]:
        problems = []
        for domain_id, at_round in self.entries:
            if not 0 <= domain_id < m:
                problems.append(f"failure_schedule: unknown domain {domain_id}")
            if at_round < 0:
                problems.append(f"failure_schedule: at_round {at_round} < 0")
        return problems


@dataclass(frozen=True)
class SimConfig:
    m: int = 3
    nodes_per_domain: int = 2
    l: int = 6  # noqa: E741
    t: int = 0
    difficulty_bits: int = 8
    seed: int = 0
    tx_per_block: int = 100
    initiator: int = 0
    failure_schedule: FailureSchedule = FailureSchedule()
    scheme: SchemeId = SchemeId.MOCK

    def problems(self) -> list[str]:
        out = []
        if self.m < 1:
            out.append("m must be >= 1")
        if self.nodes_per_domain < 1:
            out.append("nodes_per_domain must be >= 1")
        if self.l < 0:
            out.append("l must be >= 0")
        if self.t < 0:
            out.append("t must be >= 0")
        if not 0 <= self.difficulty_bits <= 24:
            out.append("difficulty_bits must be in 0..24")
        if self.tx_per_block < 0:
            out.append("tx_per_block must be >= 0")
        if self.m >= 1 and not 0 <= self.initiator < self.m:
            out.append(f"initiator {self.initiator} is not a domain")
        out.extend(self.failure_schedule.validate(self.m))
        return out

    def validate(self) -> None:
        problems = self.problems()
        if problems:
            raise ConfigError(problems)


@dataclass
class SimWorld:
    config: SimConfig
    ccns: dict[int, CcnState]
    pcns: dict[int, list[PcnState]]
    chains: dict[int, DomainChain]
    round_counter: int = 0
    failure_schedule: list[tuple[int, int]] = field(default_factory=list)
    failed: set[int] = field(default_factory=set)
    inboxes: dict[str, list[Message]] = field(default_factory=dict)
    outbox: list[Message] = field(default_factory=list)
    metrics: RoundMetrics = field(default_factory=RoundMetrics)
    meters: list[RoundMetrics] = field(default_factory=list)
    transcript: list[dict] = field(default_factory=list)
    session: Any = None

    @property
    def rng_seed(self) -> int:
        return self.config.seed

    @property
    def m(self) -> int:
        return self.config.m

    def public_keys(self) -> dict[int, bytes]:
        return {d: c.keypair.public_key for d, c in self.ccns.items()}

    def hysteresis_chains(self) -> dict[int, HysteresisChain]:
        return {d: c.hysteresis_chain for d, c in self.ccns.items()}

    def is_failed(self, node: str) -> bool:
        return node.startswith("ccn-") and int(node[4:]) in self.failed

    def live_domains(self) -> list[int]:
        return [d for d in sorted(self.ccns) if d not in self.failed]

    def clone(self) -> SimWorld:
        return copy.deepcopy(self)

    def log(self, event: str, **fields: Any) -> None:
        self.transcript.append({"round": self.round_counter, "event": event, **fields})

    def to_dict(self) -> dict:
        return {
            "schema_version": 1,
            "config": config_to_dict(self.config),
            "round_counter": self.round_counter,
            "failure_schedule": [list(e) for e in self.failure_schedule],
            "failed": sorted(self.failed),
            "ccns": {str(d): c.to_dict() for d, c in sorted(self.ccns.items())},
            "pcns": {
                str(d): [{"index": p.index, "pending": p.pending_request is not None} for p in ps]
                for d, ps in sorted(self.pcns.items())
            },
            "chains": {str(d): c.to_dict() for d, c in sorted(self.chains.items())},
            "outbox": [_message_dict(msg) for msg in self.outbox],
            "metrics": self.metrics.to_dict(),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=1)


def _message_dict(msg: Message) -> dict:
    return {
        "kind": msg.kind.value,
        "sender": msg.sender,
        "receiver": msg.receiver,
        "round": msg.round,
        "size_bytes": msg.size_bytes,
    }


def config_to_dict(config: SimConfig) -> dict:
    return {
        "m": config.m,
        "nodes_per_domain": config.nodes_per_domain,
        "l": config.l,
        "t": config.t,
        "difficulty_bits": config.difficulty_bits,
        "seed": config.seed,
        "tx_per_block": config.tx_per_block,
        "initiator": config.initiator,
        "failure_schedule": [{"domain": d, "at_round": r} for d, r in config.failure_schedule.entries],
        "scheme": config.scheme.name.lower(),
    }


def payload_summary_for(seed: int, domain_id: int, height: int) -> bytes:
    return crypto.hash(b"payload" + struct.pack(">QIQ", seed & (2**64 - 1), domain_id, height))


def build_world(config: SimConfig) -> SimWorld:
    """Create ``m`` domains whose chains already hold ``l + 2`` mined blocks."""
    config.validate()
    ccns, pcns, chains = {}, {}, {}
    for d in range(config.m):
        chain = DomainChain(d, config.difficulty_bits)
        for h in range(config.l + 2):
            block = mine_block(
                chain,
                payload_summary_for(config.seed, d, h),
                config.tx_per_block,
                rng_seed=crypto.derive_seed(config.seed, "mine", d, h),
            )
            chain = chain.append(block)
        chains[d] = chain
        keypair = crypto.generate_keypair(crypto.derive_seed(config.seed, "ccn", d), config.scheme)
        ccns[d] = CcnState(domain_id=d, keypair=keypair, l=config.l, retry_budget=config.t + 1)
        pcns[d] = [PcnState(d, j) for j in range(config.nodes_per_domain)]
    world = SimWorld(config=config, ccns=ccns, pcns=pcns, chains=chains)
    world.failure_schedule = sorted(config.failure_schedule.entries, key=lambda e: (e[1], e[0]))
    for d in range(config.m):
        world.inboxes[ccn_id(d)] = []
        for p in pcns[d]:
            world.inboxes[p.node_id] = []
    return world


def _meters(world: SimWorld) -> Iterable[RoundMetrics]:
    yield world.metrics
    yield from world.meters


def send(world: SimWorld, sender: str, receiver: str, kind: MessageKind, payload: Any) -> int:
    """Queue one message for delivery next round. Returns the number queued (0 or 1)."""
    if world.is_failed(sender):
        return 0
    msg = Message.build(kind, sender, receiver, world.round_counter, payload)
    world.outbox.append(msg)
    for meter in _meters(world):
        meter.record_send(msg)
    world.log("send", kind=kind.value, sender=sender, receiver=receiver, size_bytes=msg.size_bytes)
    return 1


def broadcast(
    world: SimWorld,
    sender: str,
    kind: MessageKind,
    payload: Any,
    receivers: Iterable[int] | None = None,
) -> int:
    """Send to every other CCN (or to the given domains). Returns messages queued."""
    if world.is_failed(sender):
        return 0
    if receivers is None:
        receivers = sorted(world.ccns)
    count = 0
    for d in receivers:
        target = ccn_id(d)
        if target != sender:
            count += send(world, sender, target, kind, payload)
    return count


def apply_failures(world: SimWorld) -> list[int]:
    """Mark every CCN whose scheduled failure round has arrived. Returns new failures."""
    newly = []
    for domain_id, at_round in world.failure_schedule:
        if at_round <= world.round_counter and domain_id not in world.failed:
            world.failed.add(domain_id)
            ccn = world.ccns[domain_id]
            previous = ccn.phase
            ccn.phase = Phase.FAILED
            world.inboxes[ccn.node_id] = []
            world.log("failure", node=ccn.node_id, previous_phase=previous.value)
            newly.append(domain_id)
    return newly


def deliver(world: SimWorld) -> None:
    """Move last round's outbox into inboxes, discarding mail for failed nodes."""
    pending, world.outbox = world.outbox, []
    for msg in pending:
        if world.is_failed(msg.receiver):
            for meter in _meters(world):
                meter.messages_discarded += 1
            world.log("discard", kind=msg.kind.value, sender=msg.sender, receiver=msg.receiver)
            continue
        world.inboxes[msg.receiver].append(msg)
        for meter in _meters(world):
            meter.messages_delivered += 1


def dump_transcript(world: SimWorld) -> str:
    return "".join(json.dumps(e, sort_keys=True) + "\n" for e in world.transcript)
