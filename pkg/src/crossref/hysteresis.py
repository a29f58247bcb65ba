"""Nested hysteresis signatures over per-domain block digests.

Each entry signs the hash of its predecessor together with one digest per
participating domain, so rewriting any entry forces rewriting every later one.

Canonical byte layout (all integers big-endian)::

    sequence_number   u64
    previous_summary  32 bytes
    record count      u32
    records           (domain_id u32, height u64, digest 32 bytes), ascending domain_id
    gap count         u32
    gaps              domain_id u32 each, ascending
    signer            u32
    -- signed content ends here --
    scheme_id         u8
    signature length  u16
    signature         bytes

The summary of an entry is the hash of the full layout, signature included.
"""

from __future__ import annotations

import enum
import struct
from collections.abc import Iterable, Mapping
from dataclasses import dataclass, field, replace
from typing import NamedTuple

from . import crypto
from .crypto import KeyPair, SchemeId, Signature

GENESIS_SUMMARY = crypto.ZERO_DIGEST


class HysteresisError(ValueError):
    pass


class BlockRef(NamedTuple):
    domain_id: int
    digest: bytes
    height: int = 0


@dataclass(frozen=True)
class HysteresisSignature:
    sequence_number: int
    previous_summary: bytes
    content_digests: tuple[BlockRef, ...]
    signer: int
    signature: Signature
    gaps: tuple[int, ...] = ()

    def signed_bytes(self) -> bytes:
        parts = [
            struct.pack(">Q", self.sequence_number),
            self.previous_summary,
            struct.pack(">I", len(self.content_digests)),
        ]
        for ref in self.content_digests:
            parts.append(struct.pack(">IQ", ref.domain_id, ref.height))
            parts.append(ref.digest)
        parts.append(struct.pack(">I", len(self.gaps)))
        parts.extend(struct.pack(">I", g) for g in self.gaps)
        parts.append(struct.pack(">I", self.signer))
        return b"".join(parts)

    def to_bytes(self) -> bytes:
        sig = self.signature
        return (
            self.signed_bytes()
            + struct.pack(">BH", int(sig.scheme_id), len(sig.value))
            + sig.value
        )

    def summary(self) -> bytes:
        return crypto.hash(self.to_bytes())

    def digest_for(self, domain_id: int) -> BlockRef | None:
        for ref in self.content_digests:
            if ref.domain_id == domain_id:
                return ref
        return None

    @property
    def domains(self) -> tuple[int, ...]:
        return tuple(ref.domain_id for ref in self.content_digests)

    def to_dict(self) -> dict:
        return {
            "sequence_number": self.sequence_number,
            "previous_summary": self.previous_summary.hex(),
            "content_digests": [
                {"domain_id": r.domain_id, "height": r.height, "digest": r.digest.hex()}
                for r in self.content_digests
            ],
            "gaps": list(self.gaps),
            "signer": self.signer,
            "signature": self.signature.value.hex(),
            "scheme_id": int(self.signature.scheme_id),
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> HysteresisSignature:
        return cls(
            sequence_number=int(d["sequence_number"]),
            previous_summary=bytes.fromhex(d["previous_summary"]),
            content_digests=tuple(
                BlockRef(int(r["domain_id"]), bytes.fromhex(r["digest"]), int(r["height"]))
                for r in d["content_digests"]
            ),
            gaps=tuple(int(g) for g in d.get("gaps", ())),
            signer=int(d["signer"]),
            signature=Signature(bytes.fromhex(d["signature"]), SchemeId(d["scheme_id"])),
        )


def _normalize(block_digests: Iterable) -> tuple[BlockRef, ...]:
    refs = []
    for item in block_digests:
        if isinstance(item, BlockRef):
            refs.append(item)
        elif len(item) == 2:
            refs.append(BlockRef(int(item[0]), bytes(item[1])))
        else:
            refs.append(BlockRef(int(item[0]), bytes(item[1]), int(item[2])))
    if not refs:
        raise HysteresisError("no content")
    ids = [r.domain_id for r in refs]
    if len(set(ids)) != len(ids):
        raise HysteresisError("duplicate domain")
    for r in refs:
        if len(r.digest) != crypto.DIGEST_SIZE:
            raise HysteresisError(f"digest for domain {r.domain_id} is not {crypto.DIGEST_SIZE} bytes")
    return tuple(sorted(refs, key=lambda r: r.domain_id))


def create_signature(
    key: KeyPair,
    previous: HysteresisSignature | bytes,
    block_digests: Iterable,
    signer: int = 0,
    gaps: Iterable[int] = (),
) -> HysteresisSignature:
    """Sign ``block_digests`` on top of ``previous``.

    ``previous`` is either the predecessor entry or a genesis summary (raw
    32 bytes), in which case the new entry gets sequence number 0.
    ``block_digests`` holds ``BlockRef`` values or ``(domain_id, digest)`` /
    ``(domain_id, digest, height)`` tuples. ``gaps`` lists domains that were
    expected but did not contribute a digest.
    """
    refs = _normalize(block_digests)
    gap_ids = tuple(sorted(set(gaps)))
    if set(gap_ids) & {r.domain_id for r in refs}:
        raise HysteresisError("gap overlaps content")
    if isinstance(previous, HysteresisSignature):
        seq = previous.sequence_number + 1
        prev_summary = previous.summary()
    else:
        seq = 0
        prev_summary = bytes(previous)
        if len(prev_summary) != crypto.DIGEST_SIZE:
            raise HysteresisError("genesis summary must be 32 bytes")
    unsigned = HysteresisSignature(
        sequence_number=seq,
        previous_summary=prev_summary,
        content_digests=refs,
        signer=signer,
        signature=Signature(b"", key.scheme_id),
        gaps=gap_ids,
    )
    return replace(unsigned, signature=crypto.sign(key, unsigned.signed_bytes()))


def verify_entry(entry: HysteresisSignature, signer_public_key: bytes) -> bool:
    try:
        message = entry.signed_bytes()
    except (struct.error, TypeError):
        return False
    return crypto.verify(signer_public_key, message, entry.signature)


class BreakCause(str, enum.Enum):
    BAD_SIGNATURE = "bad_signature"
    BROKEN_LINK = "broken_link"
    BAD_SEQUENCE = "bad_sequence"


@dataclass(frozen=True)
class VerificationReport:
    valid: bool
    first_broken_index: int | None = None
    cause: BreakCause | None = None


@dataclass(frozen=True)
class HysteresisChain:
    entries: tuple[HysteresisSignature, ...] = ()
    genesis_summary: bytes = GENESIS_SUMMARY

    def __len__(self) -> int:
        return len(self.entries)

    @property
    def latest(self) -> HysteresisSignature | None:
        return self.entries[-1] if self.entries else None

    def append(self, key: KeyPair, block_digests: Iterable, signer: int = 0, gaps: Iterable[int] = ()) -> HysteresisChain:
        previous = self.latest if self.entries else self.genesis_summary
        entry = create_signature(key, previous, block_digests, signer=signer, gaps=gaps)
        return replace(self, entries=self.entries + (entry,))

    def to_dict(self) -> dict:
        return {
            "genesis_summary": self.genesis_summary.hex(),
            "entries": [e.to_dict() for e in self.entries],
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> HysteresisChain:
        return cls(
            entries=tuple(HysteresisSignature.from_dict(e) for e in d["entries"]),
            genesis_summary=bytes.fromhex(d["genesis_summary"]),
        )


def verify_chain(chain: HysteresisChain, signer_public_keys: Mapping[int, bytes]) -> VerificationReport:
    """Check every signature and link; report the earliest break."""
    expected_prev = chain.genesis_summary
    for i, entry in enumerate(chain.entries):
        pk = signer_public_keys.get(entry.signer)
        if pk is None or not verify_entry(entry, pk):
            return VerificationReport(False, i, BreakCause.BAD_SIGNATURE)
        if entry.previous_summary != expected_prev:
            return VerificationReport(False, i, BreakCause.BROKEN_LINK)
        if entry.sequence_number != i:
            return VerificationReport(False, i, BreakCause.BAD_SEQUENCE)
        expected_prev = entry.summary()
    return VerificationReport(True)


@dataclass(frozen=True)
class AuditReport:
    target_domain: int
    target_height: int
    agreeing_domains: tuple[int, ...] = ()
    conflicting_domains: tuple[int, ...] = ()
    no_evidence_domains: tuple[int, ...] = ()
    details: dict = field(default_factory=dict, compare=False)

    @property
    def consistent(self) -> bool:
        return not self.conflicting_domains and not self.no_evidence_domains

    @property
    def verdict(self) -> str:
        if self.conflicting_domains:
            return "conflict"
        if self.no_evidence_domains:
            return "no_evidence"
        return "consistent"

    def to_dict(self) -> dict:
        return {
            "target_domain": self.target_domain,
            "target_height": self.target_height,
            "verdict": self.verdict,
            "agreeing_domains": list(self.agreeing_domains),
            "conflicting_domains": list(self.conflicting_domains),
            "no_evidence_domains": list(self.no_evidence_domains),
        }


def cross_domain_audit(
    target_domain: int,
    target_height: int,
    local_digest: bytes,
    foreign_chains: Mapping[int, HysteresisChain],
    signer_public_keys: Mapping[int, bytes] | None = None,
) -> AuditReport:
    """Compare a local block digest against the evidence held by other domains.

    For each foreign chain the newest entry recording ``target_domain`` at
    ``target_height`` is consulted. When public keys are supplied, entries at
    or after the chain's first verification break are not trusted, and a
    domain whose only matching entry is untrusted counts as "no evidence".
    """
    agreeing, conflicting, missing = [], [], []
    details = {}
    for domain_id in sorted(foreign_chains):
        if domain_id == target_domain:
            continue
        chain = foreign_chains[domain_id]
        trusted = len(chain.entries)
        if signer_public_keys is not None:
            report = verify_chain(chain, signer_public_keys)
            if not report.valid:
                trusted = report.first_broken_index
        recorded = None
        for entry in reversed(chain.entries[:trusted]):
            ref = entry.digest_for(target_domain)
            if ref is not None and ref.height == target_height:
                recorded = ref.digest
                break
        if recorded is None:
            missing.append(domain_id)
            details[domain_id] = "no evidence"
        elif recorded == local_digest:
            agreeing.append(domain_id)
            details[domain_id] = "agree"
        else:
            conflicting.append(domain_id)
            details[domain_id] = "conflict"
    return AuditReport(
        target_domain,
        target_height,
        tuple(agreeing),
        tuple(conflicting),
        tuple(missing),
        details,
    )
