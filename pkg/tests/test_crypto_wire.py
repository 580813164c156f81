import pytest
from hypothesis import given
from hypothesis import strategies as st

from cop.crypto import IdealCrypto, Sha256Crypto, Signature, make_crypto
from cop.functionality import Add, Dec, DecodeError, Get, Put, Status
from cop.wire import (
    CHAIN_SENTINEL,
    BroadcastMessage,
    CommitMessage,
    InvokeMessage,
    ReplyMessage,
    chain_hash,
    decode_message,
    encode_chain_link,
    encode_commit_payload,
    encode_invoke_payload,
)

from conftest import entry

ops = (st.builds(Add, st.integers(0, 300)) | st.builds(Dec, st.integers(0, 300))
       | st.builds(Get, st.binary(max_size=6)) | st.builds(Put, st.binary(max_size=6),
                                                           st.binary(max_size=6)))
u64s = st.integers(0, 2**64 - 1)


@pytest.mark.parametrize("backend", ["ideal", "sha256"])
def test_sign_verify(backend):
    c = make_crypto(backend, seed=3)
    sig = c.sign(1, b"m")
    assert c.verify(1, sig, b"m")
    assert not c.verify(1, sig, b"m2")
    assert not c.verify(2, sig, b"m")
    assert not c.verify(2, Signature(2, sig.value), b"m")


def test_ideal_hash_is_query_index():
    c = IdealCrypto()
    assert c.hash(b"x") == (0).to_bytes(8, "big")
    assert c.hash(b"y") == (1).to_bytes(8, "big")
    assert c.hash(b"x") == (0).to_bytes(8, "big")
    assert c.queries == [b"x", b"y"]


def test_ideal_rejects_unissued_signature():
    c = IdealCrypto()
    c.sign(1, b"a")
    assert not c.verify(1, Signature(1, b"\xff" * 8), b"a")
    assert not c.verify(1, Signature(1, (0).to_bytes(8, "big")), b"b")


def test_sha256_keys_depend_on_seed_and_client():
    a, b = Sha256Crypto(1), Sha256Crypto(2)
    assert a.sign(1, b"m") != b.sign(1, b"m")
    assert a.sign(1, b"m").value != a.sign(2, b"m").value
    assert len(a.hash(b"")) == 32


def test_unknown_backend():
    with pytest.raises(ValueError):
        make_crypto("rsa")


@given(ops, u64s, ops, u64s)
def test_invoke_payload_injective(o1, i1, o2, i2):
    same = encode_invoke_payload(o1, i1) == encode_invoke_payload(o2, i2)
    assert same == ((o1, i1) == (o2, i2))


@given(ops, u64s, st.binary(max_size=9), st.sampled_from(Status.ALL),
       ops, u64s, st.binary(max_size=9), st.sampled_from(Status.ALL))
def test_commit_payload_injective(o1, q1, h1, z1, o2, q2, h2, z2):
    same = encode_commit_payload(o1, q1, h1, z1) == encode_commit_payload(o2, q2, h2, z2)
    assert same == ((o1, q1, h1, z1) == (o2, q2, h2, z2))


@given(st.binary(max_size=9), ops, u64s, u64s, st.binary(max_size=9), ops, u64s, u64s)
def test_chain_link_injective(p1, o1, l1, j1, p2, o2, l2, j2):
    same = encode_chain_link(p1, o1, l1, j1) == encode_chain_link(p2, o2, l2, j2)
    assert same == ((p1, o1, l1, j1) == (p2, o2, l2, j2))


def test_invoke_and_commit_payloads_disjoint():
    # the leading tag field keeps a signed invoke from passing as a commit
    a = encode_invoke_payload(Add(1), 1)
    b = encode_commit_payload(Add(1), 1, b"", Status.SUCCESS)
    assert a[:10] != b[:10]


def test_chain_starts_at_sentinel():
    c = IdealCrypto()
    h1 = chain_hash(c, CHAIN_SENTINEL, Add(1), 1, 2)
    assert c.queries[0] == encode_chain_link(b"null", Add(1), 1, 2)
    assert h1 == (0).to_bytes(8, "big")


@given(ops, u64s, st.binary(max_size=8), st.sampled_from(Status.ALL), u64s, u64s)
def test_message_roundtrip(op, q, h, z, j, signer):
    c = IdealCrypto()
    sig = Signature(signer, h)
    msgs = [InvokeMessage(op, q, sig),
            ReplyMessage((entry(c, op, 1), entry(c, Add(2), 2))),
            ReplyMessage(()),
            CommitMessage(op, q, h, z, sig),
            BroadcastMessage(op, q, h, z, sig, j)]
    for m in msgs:
        assert decode_message(m.encode()) == m


@pytest.mark.parametrize("raw", [b"", b"\x7f", b"\x10", b"\x11\x00\x00\x00\x08" + b"\xff" * 8])
def test_decode_message_rejects(raw):
    with pytest.raises(DecodeError):
        decode_message(raw)


def test_decode_message_rejects_trailing_bytes():
    m = CommitMessage(Add(1), 1, b"h", Status.SUCCESS, Signature(1, b"s")).encode()
    with pytest.raises(DecodeError):
        decode_message(m + b"\x00")
