import math

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cop.authstore import (
    AuthClient,
    AuthKVStore,
    AuthServer,
    MerkleHasher,
    Proof,
    VersionedStores,
    ads_verify,
    authexec,
)
from cop.authstore.ads import PROOF_SIZE_OFFSET, PROOF_SIZE_SLOPE
from cop.client import Completed, Confirmed, Halted, HaltReason
from cop.crypto import Sha256Crypto
from cop.functionality import ABSENT, BOTTOM, DecodeError, Get, KVState, Put, decode_operation
from cop.simnet import Scenario, run
from cop.wire import decode_message

from mutation import deliver_mutant, record_deliveries
from oracles import replay_kv, sha_merkle_root

HASHER = MerkleHasher(Sha256Crypto())
keys = st.binary(min_size=1, max_size=4)
vals = st.binary(max_size=4)


def store(d):
    return AuthKVStore(HASHER, KVState.from_dict(d))


@settings(max_examples=40, deadline=None)
@given(st.dictionaries(keys, vals, max_size=12))
def test_digest_matches_independent_root(d):
    assert store(d).digest() == sha_merkle_root(d)


@settings(max_examples=40, deadline=None)
@given(st.dictionaries(keys, vals, max_size=12), keys, vals)
def test_put_proof_yields_new_root(d, k, v):
    s = store(d)
    s2, proof, r = authexec(s, Put(k, v))
    new, resp = ads_verify(HASHER, s.digest(), proof, Put(k, v), r)
    assert resp is True and new == s2.digest() == sha_merkle_root({**d, k: v})


@settings(max_examples=40, deadline=None)
@given(st.dictionaries(keys, vals, max_size=12), keys)
def test_get_proof_membership_and_absence(d, k):
    s = store(d)
    _, proof, r = authexec(s, Get(k))
    assert r is ABSENT if k not in d else r == d[k]
    assert ads_verify(HASHER, s.digest(), proof, Get(k), r) == (s.digest(), r)
    wrong = b"\xff" * 5 if r is ABSENT else ABSENT
    assert ads_verify(HASHER, s.digest(), proof, Get(k), wrong) == (None, BOTTOM)


@pytest.mark.parametrize("n", [1, 2, 16, 256, 2048])
def test_proof_size_bound(n):
    s = store({i.to_bytes(4, "big"): b"v" for i in range(n)})
    bound = PROOF_SIZE_SLOPE * math.log2(max(n, 2)) + PROOF_SIZE_OFFSET
    for probe in range(50):
        k = (probe * 7919).to_bytes(4, "big")
        assert len(s.prove(k, "get")) <= bound


def test_proof_mutations_rejected():
    s = store({b"a": b"1", b"b": b"2", b"c": b"3"})
    _, proof, r = authexec(s, Get(b"a"))
    dg = s.digest()
    bad = [
        Proof("get", b"a", b"9", proof.bitmap, proof.siblings),
        Proof("get", b"a", None, proof.bitmap, proof.siblings),
        Proof("get", b"b", proof.value, proof.bitmap, proof.siblings),
        Proof("get", b"a", proof.value, proof.bitmap, proof.siblings[:-1]),
        Proof("get", b"a", proof.value, proof.bitmap, (b"\x00" * 32,) + proof.siblings[1:]),
        Proof("put", b"a", proof.value, proof.bitmap, proof.siblings),
    ]
    for p in bad:
        assert ads_verify(HASHER, dg, p, Get(b"a"), r)[1] is BOTTOM
    assert ads_verify(HASHER, b"\x01" * 32, proof, Get(b"a"), r)[1] is BOTTOM


def test_proof_encoding_roundtrip_and_rejects():
    p = store({b"a": b"1"}).prove(b"a", "get")
    assert Proof.decode(p.encode()) == p
    with pytest.raises(DecodeError):
        Proof.decode(p.encode() + b"\x00")
    with pytest.raises(DecodeError):
        Proof.decode(b"\x00\x00\x00\x03del" + p.encode()[7:])


@settings(max_examples=30, deadline=None)
@given(st.lists(st.one_of(st.none(), st.builds(Put, st.sampled_from([b"a", b"b", b"c"]),
                                                  vals)), max_size=12), st.data())
def test_change_sets_equal_snapshots(ops, data):
    full = VersionedStores(store({}), retain_all=True)
    lean = VersionedStores(store({}), retain_all=False)
    for op in ops:
        full.append(op)
        lean.append(op)
    floor = data.draw(st.integers(0, len(ops)))
    lean.compact(floor)
    for q in range(floor, len(ops) + 1):
        assert lean.get(q).digest() == full.get(q).digest()
    if floor > 0:
        with pytest.raises(KeyError):
            lean.get(floor - 1)


def test_direct_round_trip():
    c = Sha256Crypto()
    server = AuthServer([1, 2], c)
    a, b = AuthClient(1, c), AuthClient(2, c)
    done = a.on_reply(server.on_invoke(1, a.begin_operation(Put(b"k", b"v"))))
    assert isinstance(done, Completed) and done.response is True
    (bc,) = server.on_commit(1, done.commit)
    for cl in (a, b):
        conf = cl.on_broadcast(bc)
        assert isinstance(conf, Confirmed)
        assert conf.digest == sha_merkle_root({b"k": b"v"})
    got = b.on_reply(server.on_invoke(2, b.begin_operation(Get(b"k"))))
    assert got.response == b"v"


def test_tampered_response_halts():
    c = Sha256Crypto()
    server = AuthServer([1], c, initial={b"k": b"v"})
    a = AuthClient(1, c, initial={b"k": b"v"})
    reply = server.on_invoke(1, a.begin_operation(Get(b"k")))
    forged = type(reply)(reply.omega, reply.base, reply.steps, reply.proof, b"w")
    assert a.on_reply(forged) == Halted(HaltReason.BAD_PROOF_REPLY)


@pytest.mark.parametrize("seed", range(6))
def test_confirmed_digests_match_replayed_state(seed):
    t = run(Scenario(clients=3, ops=3, seed=seed, workload="kv", authstore=True,
                     crypto="sha256", gc=seed % 2 == 1))
    assert t.halts() == {}
    for k in t.scenario.client_ids:
        ops = []
        for e in t.of_kind("confirm"):
            if e["actor"] != k:
                continue
            ops.append((decode_operation(bytes.fromhex(e["op"])), e["z"]))
            assert bytes.fromhex(e["g"]) == sha_merkle_root(replay_kv(ops))


def test_authenticated_messages_roundtrip():
    t = run(Scenario(clients=2, ops=2, seed=1, workload="kv", authstore=True))
    for e in t.of_kind("send"):
        raw = bytes.fromhex(e["msg"])
        assert decode_message(raw).encode() == raw


def test_bit_flips_rejected():
    snaps = record_deliveries(Scenario(clients=2, ops=2, seed=3, workload="kv",
                                       authstore=True, crypto="sha256"))
    assert not any(isinstance(s.outcome, Halted) for s in snaps)
    for s in snaps:
        for bit in range(0, len(s.raw) * 8, 13):
            assert deliver_mutant(s, bit) != "accepted", bit
