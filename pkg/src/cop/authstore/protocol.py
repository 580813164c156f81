"""Protocol extension for server-held state authenticated by a Merkle store.

The server executes operations against ``D[base]`` and ships proofs; clients
keep only the digest chain ``G`` and verify every response. Replies, commits
and broadcasts gain these fields:

* reply: ``base`` (the confirmed version the proofs start from), one
  ``ProofStep`` per successful pending-self operation, and the proof and
  response for the invoked operation;
* commit: the same proof bundle, covered by the committer's signature;
* broadcast: the committer's bundle plus a second proof of the operation
  against ``D[q - 1]`` so every recipient can advance its own ``G``.

Commutativity is decided with the conservative key-set predicate, whose
inputs are the read/write keys carried by the pending operations themselves.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Any, Sequence

from ..client import Client, HaltReason, _Halt
from ..crypto import Crypto
from ..functionality import (
    BOTTOM,
    KVState,
    KVStore,
    Operation,
    Status,
    encode_response,
)
from ..server import Server
from ..wire import (
    BroadcastMessage,
    CommitMessage,
    InvokeMessage,
    Reader,
    ReplyMessage,
    decode_list,
    encode_commit_payload,
    encode_list,
    field,
    u64,
)
from .ads import AuthKVStore, MerkleHasher, Proof, VersionedStores, ads_verify, authexec


@dataclass(frozen=True)
class ProofStep:
    q: int
    op: Operation
    proof: Proof
    response: Any

    def encode(self) -> bytes:
        return (field(u64(self.q)) + field(self.op.encode()) + field(self.proof.encode())
                + field(encode_response(self.response)))

    @classmethod
    def decode(cls, data: bytes) -> "ProofStep":
        r = Reader(data)
        out = cls(r.u64(), r.op(), Proof.decode(r.field()), r.response())
        r.done()
        return out


def auth_bundle(base: int, steps: Sequence[ProofStep], proof: Proof) -> bytes:
    return field(u64(base)) + encode_list([s.encode() for s in steps]) + field(proof.encode())


def _read_bundle(r: Reader) -> tuple[int, tuple[ProofStep, ...], Proof]:
    base = r.u64()
    steps = tuple(ProofStep.decode(x) for x in decode_list(r))
    return base, steps, Proof.decode(r.field())


def auth_commit_payload(op: Operation, q: int, h: bytes, z: str, base: int,
                        steps: Sequence[ProofStep], proof: Proof, response: Any) -> bytes:
    """Commit payload extended with two length-prefixed fields: A and r."""
    return (encode_commit_payload(op, q, h, z) + field(auth_bundle(base, steps, proof))
            + field(encode_response(response)))


@dataclass(frozen=True)
class AuthReplyMessage(ReplyMessage):
    base: int
    steps: tuple[ProofStep, ...]
    proof: Proof
    response: Any
    TYPE = 0x21

    def body(self) -> bytes:
        return (super().body() + auth_bundle(self.base, self.steps, self.proof)
                + field(encode_response(self.response)))

    @classmethod
    def read_body(cls, r):
        plain = ReplyMessage.read_body(r)
        base, steps, proof = _read_bundle(r)
        return cls(plain.omega, base, steps, proof, r.response())


@dataclass(frozen=True)
class AuthCommitMessage(CommitMessage):
    base: int
    steps: tuple[ProofStep, ...]
    proof: Proof
    response: Any
    TYPE = 0x22

    def body(self) -> bytes:
        return (super().body() + auth_bundle(self.base, self.steps, self.proof)
                + field(encode_response(self.response)))

    @classmethod
    def read_body(cls, r):
        p = CommitMessage.read_body(r)
        base, steps, proof = _read_bundle(r)
        return cls(p.op, p.q, p.h, p.z, p.phi, base, steps, proof, r.response())

    def signed_payload(self) -> bytes:
        return auth_commit_payload(self.op, self.q, self.h, self.z, self.base,
                                   self.steps, self.proof, self.response)


@dataclass(frozen=True)
class AuthBroadcastMessage(BroadcastMessage):
    base: int
    steps: tuple[ProofStep, ...]
    proof: Proof
    response: Any
    recipient_proof: Proof | None
    TYPE = 0x23

    def body(self) -> bytes:
        extra = b"" if self.recipient_proof is None else self.recipient_proof.encode()
        return (super().body() + auth_bundle(self.base, self.steps, self.proof)
                + field(encode_response(self.response)) + field(extra))

    @classmethod
    def read_body(cls, r):
        p = BroadcastMessage.read_body(r)
        base, steps, proof = _read_bundle(r)
        response = r.response()
        extra = r.field()
        rp = Proof.decode(extra) if extra else None
        return cls(p.op, p.q, p.h, p.z, p.phi, p.client, base, steps, proof, response, rp)

    def signed_payload(self) -> bytes:
        return auth_commit_payload(self.op, self.q, self.h, self.z, self.base,
                                   self.steps, self.proof, self.response)


class AuthServer(Server):
    def __init__(self, clients: Sequence[int], crypto: Crypto,
                 initial: dict[bytes, bytes] | None = None, gc: bool = False,
                 retain_all: bool = True) -> None:
        super().__init__(clients, gc)
        self.hasher = MerkleHasher(crypto)
        d0 = AuthKVStore(self.hasher, KVState.from_dict(initial or {}))
        self.stores = VersionedStores(d0, retain_all=retain_all)

    def on_invoke(self, i: int, msg: InvokeMessage) -> AuthReplyMessage:
        reply = super().on_invoke(i, msg)
        st = self.st
        base = max(msg.c, st.b)
        x = self.stores.get(base)
        steps = []
        for p in range(base + 1, st.t):
            entry, rec = st.I.get(p), st.O.get(p)
            if entry is None or entry.client != i or rec is None:
                continue
            if rec[0].z != Status.SUCCESS:
                continue
            x, proof, r = authexec(x, entry.op)
            steps.append(ProofStep(p, entry.op, proof, r))
        _, proof, r = authexec(x, msg.op)
        return AuthReplyMessage(reply.omega, base, tuple(steps), proof, r)

    def make_broadcast(self, commit: CommitMessage, j: int) -> AuthBroadcastMessage:
        if not isinstance(commit, AuthCommitMessage):
            raise TypeError("authenticated server expects authenticated commits")
        prev = self.stores.get(commit.q - 1)
        if commit.z == Status.SUCCESS:
            _, rproof, _ = authexec(prev, commit.op)
            self.stores.append(commit.op)
        else:
            rproof = None
            self.stores.append(None)
        return AuthBroadcastMessage(commit.op, commit.q, commit.h, commit.z, commit.phi, j,
                                    commit.base, commit.steps, commit.proof,
                                    commit.response, rproof)

    def _collect(self) -> None:
        super()._collect()
        self.stores.compact(min(self._acked.values(), default=0))


class AuthClient(Client):
    """Client holding only the digest chain ``G`` instead of the full state.

    ``G`` and the confirmed-operation log are kept in full even with ``gc``
    on: verifying another client's commit needs ``G`` at that client's base.
    """

    def __init__(self, index: int, crypto: Crypto,
                 initial: dict[bytes, bytes] | None = None, gc: bool = False) -> None:
        super().__init__(index, KVStore(initial), crypto, gc)
        self.st.s = None
        self.hasher = MerkleHasher(crypto)
        self.G: dict[int, bytes] = {
            0: AuthKVStore(self.hasher, KVState.from_dict(initial or {})).digest()}
        self.log: dict[int, tuple[Operation, int, str]] = {}

    def _commit(self, msg, l, mu, gamma):
        st = self.st
        if not isinstance(msg, AuthReplyMessage) or msg.base != st.c:
            raise _Halt(HaltReason.BAD_PROOF_REPLY)
        if [p for p, _ in mu] != [s.q for s in msg.steps]:
            raise _Halt(HaltReason.BAD_PROOF_REPLY)
        a = self.G[st.c]
        for (_, o), step in zip(mu, msg.steps):
            if step.op != o:
                raise _Halt(HaltReason.BAD_PROOF_REPLY)
            # temporary digest only; discarded after the commit
            a, r = ads_verify(self.hasher, a, step.proof, o, step.response)
            if r is BOTTOM:
                raise _Halt(HaltReason.BAD_PROOF_REPLY)
        _, r = ads_verify(self.hasher, a, msg.proof, st.u, msg.response)
        if r is BOTTOM:
            raise _Halt(HaltReason.BAD_PROOF_REPLY)
        if self.f.commute(None, [st.u], gamma):
            z, out = Status.SUCCESS, r
        else:
            z, out = Status.ABORT, BOTTOM
        payload = auth_commit_payload(st.u, l, st.H[l], z, st.c, msg.steps, msg.proof, r)
        phi = self.crypto.sign(st.i, payload)
        commit = AuthCommitMessage(st.u, l, st.H[l], z, phi, st.c, msg.steps, msg.proof, r)
        return z, out, commit

    def _apply(self, msg: BroadcastMessage) -> None:
        st = self.st
        q = msg.q
        if not isinstance(msg, AuthBroadcastMessage):
            raise _Halt(HaltReason.BAD_PROOF_BROADCAST)
        if msg.base >= q or msg.base not in self.G:
            raise _Halt(HaltReason.BAD_PROOF_BROADCAST)
        # the committer's pending-self steps must be exactly its successful
        # operations between its base and q, as confirmed here
        expected = [(p, self.log[p][0]) for p in range(msg.base + 1, q)
                    if self.log[p][1] == msg.client and self.log[p][2] == Status.SUCCESS]
        if [(s.q, s.op) for s in msg.steps] != expected:
            raise _Halt(HaltReason.BAD_PROOF_BROADCAST)
        a = self.G[msg.base]
        for step in msg.steps:
            a, r = ads_verify(self.hasher, a, step.proof, step.op, step.response)
            if r is BOTTOM:
                raise _Halt(HaltReason.BAD_PROOF_BROADCAST)
        _, r = ads_verify(self.hasher, a, msg.proof, msg.op, msg.response)
        if r is BOTTOM:
            raise _Halt(HaltReason.BAD_PROOF_BROADCAST)
        if msg.z == Status.SUCCESS:
            if msg.recipient_proof is None:
                raise _Halt(HaltReason.BAD_PROOF_BROADCAST)
            d, r = ads_verify(self.hasher, self.G[st.c], msg.recipient_proof, msg.op,
                              msg.response)
            if r is BOTTOM:
                raise _Halt(HaltReason.BAD_PROOF_BROADCAST)
            self.G[q] = d
        else:
            self.G[q] = self.G[st.c]
        self.log[q] = (msg.op, msg.client, msg.z)

    def _digest_after(self, q: int) -> bytes:
        return self.G[q]
