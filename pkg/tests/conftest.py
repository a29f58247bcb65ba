import pytest

from crossref import crypto
from crossref.hysteresis import HysteresisChain
from crossref.netsim import SimConfig, build_world


@pytest.fixture
def keys():
    """Mock keypairs for domains 0..9."""
    return {d: crypto.generate_keypair(1000 + d) for d in range(10)}


@pytest.fixture
def public_keys(keys):
    return {d: kp.public_key for d, kp in keys.items()}


def make_chain(keypair, signer, length, m=3, salt=b""):
    chain = HysteresisChain()
    for i in range(length):
        digests = [(d, crypto.hash(salt + b"%d:%d" % (i, d)), i) for d in range(m)]
        chain = chain.append(keypair, digests, signer=signer)
    return chain


@pytest.fixture
def world_factory():
    def build(**kwargs):
        kwargs.setdefault("difficulty_bits", 6)
        return build_world(SimConfig(**kwargs))

    return build


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
