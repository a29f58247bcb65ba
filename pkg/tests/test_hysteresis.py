import random
from dataclasses import replace

import pytest

from crossref import crypto
from crossref.crypto import Signature
from crossref.hysteresis import (
    GENESIS_SUMMARY,
    BlockRef,
    BreakCause,
    HysteresisChain,
    HysteresisError,
    HysteresisSignature,
    create_signature,
    cross_domain_audit,
    verify_chain,
    verify_entry,
)

from conftest import make_chain


def digests(m, tag=b""):
    return [(d, crypto.hash(tag + bytes([d]))) for d in range(m)]


def test_genesis_entry(keys):
    entry = create_signature(keys[0], GENESIS_SUMMARY, digests(3), signer=0)
    assert entry.sequence_number == 0
    assert entry.previous_summary == GENESIS_SUMMARY
    assert entry.domains == (0, 1, 2)
    assert verify_entry(entry, keys[0].public_key)


def test_successor_links_to_predecessor(keys):
    first = create_signature(keys[0], GENESIS_SUMMARY, digests(3), signer=0)
    second = create_signature(keys[0], first, digests(3, b"x"), signer=0)
    assert second.sequence_number == 1
    assert second.previous_summary == crypto.hash(first.to_bytes())


def test_content_is_sorted_by_domain(keys):
    entry = create_signature(keys[0], GENESIS_SUMMARY, list(reversed(digests(4))), signer=0)
    assert entry.domains == (0, 1, 2, 3)


def test_duplicate_domain_rejected(keys):
    d = crypto.hash(b"a")
    with pytest.raises(HysteresisError, match="duplicate domain"):
        create_signature(keys[0], GENESIS_SUMMARY, [(1, d), (1, d), (2, d)])


def test_empty_content_rejected(keys):
    with pytest.raises(HysteresisError, match="no content"):
        create_signature(keys[0], GENESIS_SUMMARY, [])


def test_gaps_are_signed(keys):
    entry = create_signature(keys[0], GENESIS_SUMMARY, digests(2), signer=0, gaps=[5, 3])
    assert entry.gaps == (3, 5)
    assert verify_entry(entry, keys[0].public_key)
    assert not verify_entry(replace(entry, gaps=(3,)), keys[0].public_key)


def test_verify_entry_rejects_replaced_digest(keys):
    entry = create_signature(keys[0], GENESIS_SUMMARY, digests(3), signer=0)
    refs = list(entry.content_digests)
    refs[1] = refs[1]._replace(digest=crypto.hash(b"forged"))
    assert not verify_entry(replace(entry, content_digests=tuple(refs)), keys[0].public_key)


def test_verify_entry_rejects_zeroed_signature(keys):
    entry = create_signature(keys[0], GENESIS_SUMMARY, digests(3), signer=0)
    zeroed = replace(entry, signature=Signature(bytes(len(entry.signature.value))))
    assert not verify_entry(zeroed, keys[0].public_key)


def test_ten_entry_chain_valid(keys, public_keys):
    chain = make_chain(keys[2], 2, 10)
    assert verify_chain(chain, public_keys).valid


def test_chain_of_five_is_valid(keys, public_keys):
    assert verify_chain(make_chain(keys[0], 0, 5), public_keys).valid


def _tamper_content(entry):
    refs = list(entry.content_digests)
    refs[0] = refs[0]._replace(digest=crypto.hash(b"evil"))
    return replace(entry, content_digests=tuple(refs))


def test_tamper_without_resign_breaks_at_entry(keys, public_keys):
    chain = make_chain(keys[0], 0, 10)
    entries = list(chain.entries)
    entries[4] = _tamper_content(entries[4])
    report = verify_chain(replace(chain, entries=tuple(entries)), public_keys)
    assert (report.valid, report.first_broken_index, report.cause) == (False, 4, BreakCause.BAD_SIGNATURE)


def test_tamper_and_resign_breaks_at_successor(keys, public_keys):
    chain = make_chain(keys[0], 0, 10)
    entries = list(chain.entries)
    forged = _tamper_content(entries[4])
    entries[4] = replace(forged, signature=crypto.sign(keys[0], forged.signed_bytes()))
    report = verify_chain(replace(chain, entries=tuple(entries)), public_keys)
    assert (report.first_broken_index, report.cause) == (5, BreakCause.BROKEN_LINK)


def test_sequence_gap_detected(keys, public_keys):
    chain = make_chain(keys[0], 0, 3)
    entries = list(chain.entries)
    bad = replace(entries[2], sequence_number=7)
    entries[2] = replace(bad, signature=crypto.sign(keys[0], bad.signed_bytes()))
    report = verify_chain(replace(chain, entries=tuple(entries)), public_keys)
    assert (report.first_broken_index, report.cause) == (2, BreakCause.BAD_SEQUENCE)


def test_unknown_signer_is_bad_signature(keys):
    chain = make_chain(keys[0], 0, 2)
    report = verify_chain(chain, {})
    assert (report.first_broken_index, report.cause) == (0, BreakCause.BAD_SIGNATURE)


def test_append_keeps_chain_valid(keys, public_keys):
    chain = make_chain(keys[1], 1, 4)
    grown = chain.append(keys[1], digests(3, b"new"), signer=1)
    assert len(grown) == 5 and len(chain) == 4
    assert verify_chain(grown, public_keys).valid


def test_json_roundtrip(keys, public_keys):
    chain = make_chain(keys[3], 3, 4)
    again = HysteresisChain.from_dict(chain.to_dict())
    assert again == chain
    assert verify_chain(again, public_keys).valid
    assert HysteresisSignature.from_dict(chain.entries[0].to_dict()) == chain.entries[0]


def _round_chains(keys, m, local_digest, height=5):
    """Every domain signs the same digest set, as after one cross-referencing round."""
    refs = [BlockRef(0, local_digest, height)] + [BlockRef(d, crypto.hash(bytes([d])), height) for d in range(1, m)]
    return {d: HysteresisChain().append(keys[d], refs, signer=d) for d in range(m)}


def test_audit_consistent(keys, public_keys):
    local = crypto.hash(b"block")
    chains = _round_chains(keys, 4, local)
    report = cross_domain_audit(0, 5, local, chains, public_keys)
    assert report.consistent and report.verdict == "consistent"
    assert report.agreeing_domains == (1, 2, 3)


def test_audit_conflict_after_local_tamper(keys, public_keys):
    chains = _round_chains(keys, 4, crypto.hash(b"block"))
    report = cross_domain_audit(0, 5, crypto.hash(b"tampered"), chains, public_keys)
    assert report.conflicting_domains == (1, 2, 3)
    assert not report.consistent


def test_audit_no_evidence_for_unreferenced_height(keys, public_keys):
    local = crypto.hash(b"block")
    chains = _round_chains(keys, 3, local)
    report = cross_domain_audit(0, 6, local, chains, public_keys)
    assert report.no_evidence_domains == (1, 2)
    assert report.verdict == "no_evidence"


def test_audit_tampered_foreign_chain_is_no_evidence(keys, public_keys):
    local = crypto.hash(b"block")
    chains = _round_chains(keys, 4, local)
    entry = chains[2].entries[0]
    refs = list(entry.content_digests)
    refs[0] = refs[0]._replace(digest=crypto.hash(b"rewritten"))
    chains[2] = replace(chains[2], entries=(replace(entry, content_digests=tuple(refs)),))
    assert verify_chain(chains[2], public_keys).first_broken_index == 0
    report = cross_domain_audit(0, 5, local, chains, public_keys)
    assert report.no_evidence_domains == (2,)
    assert report.agreeing_domains == (1, 3)
    assert report.conflicting_domains == ()


def test_soundness_random_field_mutation(keys, public_keys):
    rng = random.Random(3)
    for _ in range(200):
        chain = make_chain(keys[0], 0, rng.randint(1, 12), m=rng.randint(1, 4), salt=rng.randbytes(4))
        k = rng.randrange(len(chain))
        entry = chain.entries[k]
        blob = bytearray(entry.to_bytes())
        pos = rng.randrange(len(blob))
        blob[pos] ^= 1 << rng.randrange(8)
        mutated = _reparse(bytes(blob))
        if mutated is None or mutated == entry:
            continue
        entries = list(chain.entries)
        entries[k] = mutated
        report = verify_chain(replace(chain, entries=tuple(entries)), public_keys)
        assert not report.valid
        assert report.first_broken_index <= k + 1


def _reparse(blob):
    """Parse the canonical layout; None if the mutation made it unparseable."""
    import struct

    try:
        seq = struct.unpack_from(">Q", blob, 0)[0]
        prev = blob[8:40]
        (count,) = struct.unpack_from(">I", blob, 40)
        pos, refs = 44, []
        for _ in range(count):
            d, h = struct.unpack_from(">IQ", blob, pos)
            refs.append(BlockRef(d, blob[pos + 12 : pos + 44], h))
            pos += 44
        (ngaps,) = struct.unpack_from(">I", blob, pos)
        gaps = struct.unpack_from(">" + "I" * ngaps, blob, pos + 4)
        pos += 4 + 4 * ngaps
        (signer,) = struct.unpack_from(">I", blob, pos)
        scheme, siglen = struct.unpack_from(">BH", blob, pos + 4)
        sig = blob[pos + 7 : pos + 7 + siglen]
        if pos + 7 + siglen != len(blob) or any(len(r.digest) != 32 for r in refs):
            return None
        return HysteresisSignature(seq, prev, tuple(refs), signer, Signature(sig, scheme), tuple(gaps))
    except (struct.error, ValueError):
        return None
