"""Per-domain linear blockchain with a fixed leading-zero-bits PoW target."""

from __future__ import annotations

import hashlib
import random
import struct
from collections.abc import Mapping
from dataclasses import dataclass, replace

from . import crypto
from .hysteresis import HysteresisSignature

MAX_NONCE = 1 << 64


class ChainError(ValueError):
    pass


class InsufficientConfirmations(ChainError):
    def __init__(self) -> None:
        super().__init__("insufficient confirmations")


@dataclass(frozen=True)
class Block:
    height: int
    domain_id: int
    previous_hash: bytes
    payload_summary: bytes
    tx_count: int
    nonce: int
    difficulty_bits: int
    cross_reference: HysteresisSignature | None = None

    def header_bytes(self) -> bytes:
        """Canonical serialization without the trailing nonce."""
        xref = b"" if self.cross_reference is None else self.cross_reference.to_bytes()
        return b"".join(
            [
                struct.pack(">QIB", self.height, self.domain_id, self.difficulty_bits),
                self.previous_hash,
                self.payload_summary,
                struct.pack(">QI", self.tx_count, len(xref)),
                xref,
            ]
        )

    def to_bytes(self) -> bytes:
        return self.header_bytes() + struct.pack(">Q", self.nonce)

    def to_dict(self) -> dict:
        return {
            "height": self.height,
            "domain_id": self.domain_id,
            "previous_hash": self.previous_hash.hex(),
            "payload_summary": self.payload_summary.hex(),
            "tx_count": self.tx_count,
            "nonce": self.nonce,
            "difficulty_bits": self.difficulty_bits,
            "cross_reference": None if self.cross_reference is None else self.cross_reference.to_dict(),
            "hash": block_hash(self).hex(),
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> Block:
        xref = d.get("cross_reference")
        return cls(
            height=int(d["height"]),
            domain_id=int(d["domain_id"]),
            previous_hash=bytes.fromhex(d["previous_hash"]),
            payload_summary=bytes.fromhex(d["payload_summary"]),
            tx_count=int(d["tx_count"]),
            nonce=int(d["nonce"]),
            difficulty_bits=int(d["difficulty_bits"]),
            cross_reference=None if xref is None else HysteresisSignature.from_dict(xref),
        )


@dataclass(frozen=True)
class DomainChain:
    domain_id: int
    difficulty_bits: int = 8
    blocks: tuple[Block, ...] = ()

    def __len__(self) -> int:
        return len(self.blocks)

    @property
    def tip(self) -> Block | None:
        return self.blocks[-1] if self.blocks else None

    @property
    def tip_height(self) -> int:
        return len(self.blocks) - 1

    def append(self, block: Block) -> DomainChain:
        return replace(self, blocks=self.blocks + (block,))

    def to_dict(self) -> dict:
        return {
            "domain_id": self.domain_id,
            "difficulty_bits": self.difficulty_bits,
            "blocks": [b.to_dict() for b in self.blocks],
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> DomainChain:
        return cls(
            domain_id=int(d["domain_id"]),
            difficulty_bits=int(d["difficulty_bits"]),
            blocks=tuple(Block.from_dict(b) for b in d["blocks"]),
        )


def block_hash(block: Block) -> bytes:
    return crypto.hash(block.to_bytes())


def leading_zero_bits(digest: bytes) -> int:
    value = int.from_bytes(digest, "big")
    return len(digest) * 8 - value.bit_length()


def meets_target(block: Block) -> bool:
    return leading_zero_bits(block_hash(block)) >= block.difficulty_bits


def mine_block(
    chain: DomainChain,
    payload_summary: bytes,
    tx_count: int,
    cross_reference: HysteresisSignature | None = None,
    rng_seed: int = 0,
) -> Block:
    """Mine the next block on ``chain``.

    The nonce search starts at a seed-derived offset and counts upward, so the
    result is a pure function of the inputs.
    """
    tip = chain.tip
    template = Block(
        height=0 if tip is None else tip.height + 1,
        domain_id=chain.domain_id,
        previous_hash=crypto.ZERO_DIGEST if tip is None else block_hash(tip),
        payload_summary=payload_summary,
        tx_count=tx_count,
        nonce=0,
        difficulty_bits=chain.difficulty_bits,
        cross_reference=cross_reference,
    )
    return solve_pow(template, rng_seed)


def solve_pow(template: Block, rng_seed: int) -> Block:
    prefix = hashlib.sha256(template.header_bytes())
    target = 1 << (256 - template.difficulty_bits)
    nonce = random.Random(rng_seed).getrandbits(64)
    while True:
        h = prefix.copy()
        h.update(struct.pack(">Q", nonce))
        if int.from_bytes(h.digest(), "big") < target:
            return replace(template, nonce=nonce)
        nonce = (nonce + 1) % MAX_NONCE


def l_confirmed_block(chain: DomainChain, l: int) -> Block:  # noqa: E741
    """Block ``l`` positions behind the tip; ``l=0`` is the tip itself."""
    if l < 0:
        raise ChainError("l must be non-negative")
    if chain.tip_height < l:
        raise InsufficientConfirmations()
    return chain.blocks[chain.tip_height - l]


@dataclass(frozen=True)
class ValidationReport:
    valid: bool
    first_invalid_height: int | None = None
    cause: str | None = None


def validate_chain(chain: DomainChain) -> ValidationReport:
    expected_prev = crypto.ZERO_DIGEST
    for i, block in enumerate(chain.blocks):
        if block.height != i:
            return ValidationReport(False, i, "bad_height")
        if block.domain_id != chain.domain_id:
            return ValidationReport(False, i, "wrong_domain")
        if block.previous_hash != expected_prev:
            return ValidationReport(False, i, "broken_link")
        digest = block_hash(block)
        if leading_zero_bits(digest) < max(block.difficulty_bits, chain.difficulty_bits):
            return ValidationReport(False, i, "insufficient_work")
        expected_prev = digest
    return ValidationReport(True)


def tamper_block(
    chain: DomainChain,
    height: int,
    new_payload_summary: bytes,
    remine: bool = True,
    rng_seed: int = 0,
) -> DomainChain:
    """Adversary harness: rewrite one block's payload.

    With ``remine`` the rewritten block and all its successors are re-linked
    and re-mined so local validation passes again. Cross-reference parts are
    carried over untouched.
    """
    if not 0 <= height <= chain.tip_height:
        raise ChainError(f"height {height} out of range 0..{chain.tip_height}")
    blocks = list(chain.blocks)
    blocks[height] = replace(blocks[height], payload_summary=new_payload_summary)
    if remine:
        prev = crypto.ZERO_DIGEST if height == 0 else block_hash(blocks[height - 1])
        for h in range(height, len(blocks)):
            relinked = replace(blocks[h], previous_hash=prev)
            blocks[h] = solve_pow(relinked, crypto.derive_seed(rng_seed, "tamper", h))
            prev = block_hash(blocks[h])
    return replace(chain, blocks=tuple(blocks))
