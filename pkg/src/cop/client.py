"""The COP client state machine."""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Any

from .crypto import Crypto
from .functionality import BOTTOM, Functionality, Operation, Status, apply_seq
from .wire import (
    CHAIN_SENTINEL,
    BroadcastMessage,
    CommitMessage,
    InvokeMessage,
    PendingEntry,
    ReplyMessage,
    chain_hash,
    encode_commit_payload,
    encode_invoke_payload,
)


class HaltReason(str, enum.Enum):
    BAD_INVOKE_SIGNATURE = "bad_invoke_signature"
    CHAIN_MISMATCH_REPLY = "chain_mismatch_reply"
    LAST_PENDING_NOT_SELF = "last_pending_not_self"
    BAD_COMMIT_SIGNATURE = "bad_commit_signature"
    BAD_BROADCAST_SEQ = "bad_broadcast_seq"
    CHAIN_MISMATCH_BROADCAST = "chain_mismatch_broadcast"
    # authenticated-store extension
    BAD_PROOF_REPLY = "bad_proof_reply"
    BAD_PROOF_BROADCAST = "bad_proof_broadcast"

    def __str__(self) -> str:
        return self.value


@dataclass(frozen=True)
class Halted:
    reason: HaltReason


@dataclass(frozen=True)
class Completed:
    commit: CommitMessage
    response: Any
    l: int
    status: str
    base: int
    window: tuple[PendingEntry, ...]


@dataclass(frozen=True)
class Confirmed:
    applied: bool
    q: int
    op: Operation
    committer: int
    status: str
    h: bytes
    digest: bytes | None = None


class ClientHaltedError(RuntimeError):
    pass


class WellFormednessError(RuntimeError):
    """Raised when the caller invokes while an operation is still running."""


class _Halt(Exception):
    def __init__(self, reason: HaltReason) -> None:
        super().__init__(reason.value)
        self.reason = reason


@dataclass
class ClientState:
    i: int
    s: Any
    u: Operation | None = None
    c: int = 0
    H: dict[int, bytes] = field(default_factory=lambda: {0: CHAIN_SENTINEL})
    Z: dict[int, str] = field(default_factory=dict)
    halted: HaltReason | None = None
    # c as sent in the in-flight invoke; the reply window is indexed from it
    c_invoke: int | None = None


class Client:
    """Client ``i`` of the protocol.

    Handlers are atomic steps; once a handler halts, the client is absorbed in
    the halted state and every later handler returns ``Halted``.
    """

    def __init__(self, index: int, functionality: Functionality, crypto: Crypto,
                 gc: bool = False) -> None:
        self.f = functionality
        self.crypto = crypto
        self.gc = gc
        self.st = ClientState(i=index, s=functionality.initial_state())

    @property
    def i(self) -> int:
        return self.st.i

    @property
    def halted(self) -> HaltReason | None:
        return self.st.halted

    def begin_operation(self, op: Operation) -> InvokeMessage:
        st = self.st
        if st.halted is not None:
            raise ClientHaltedError(f"client {st.i} halted: {st.halted}")
        if st.u is not None:
            raise WellFormednessError(f"client {st.i} already runs {st.u}")
        st.u = op
        st.c_invoke = st.c
        tau = self.crypto.sign(st.i, encode_invoke_payload(op, st.i))
        return InvokeMessage(op, st.c, tau)

    def on_reply(self, msg: ReplyMessage) -> Completed | Halted:
        st = self.st
        if st.halted is not None:
            return Halted(st.halted)
        try:
            return self._on_reply(msg)
        except _Halt as e:
            st.halted = e.reason
            return Halted(e.reason)

    def _on_reply(self, msg: ReplyMessage) -> Completed:
        st = self.st
        base = st.c if st.c_invoke is None else st.c_invoke
        mu: list[tuple[int, Operation]] = []
        gamma: list[Operation] = []
        l = base
        last: PendingEntry | None = None
        for k, entry in enumerate(msg.omega, 1):
            l = base + k
            o, j = entry.op, entry.client
            if not self.crypto.verify(j, entry.tau, encode_invoke_payload(o, j)):
                raise _Halt(HaltReason.BAD_INVOKE_SIGNATURE)
            h = chain_hash(self.crypto, st.H[l - 1], o, l, j)
            if l not in st.H:
                st.H[l] = h
            elif st.H[l] != h:
                raise _Halt(HaltReason.CHAIN_MISMATCH_REPLY)
            last = entry
            if l <= st.c:
                # confirmed after the invoke was sent; already part of s
                continue
            if j == st.i and st.Z.get(l) == Status.SUCCESS:
                mu.append((l, o))
            elif j != st.i:
                gamma.append(o)
        if last is None or last.op != st.u or last.client != st.i or l <= st.c:
            raise _Halt(HaltReason.LAST_PENDING_NOT_SELF)

        z, r, commit = self._commit(msg, l, mu, gamma)
        st.Z[l] = z
        st.u = None
        st.c_invoke = None
        self._collect()
        return Completed(commit, r, l, z, base, tuple(msg.omega))

    def _decide(self, mu: list[tuple[int, Operation]],
                gamma: list[Operation]) -> tuple[str, Any]:
        st = self.st
        a, _ = apply_seq(self.f, st.s, [o for _, o in mu])
        if self.f.commute(a, [st.u], gamma):
            _, r = self.f.apply(a, st.u)
            return Status.SUCCESS, r
        return Status.ABORT, BOTTOM

    def _commit(self, msg: ReplyMessage, l: int, mu: list[tuple[int, Operation]],
                gamma: list[Operation]) -> tuple[str, Any, CommitMessage]:
        st = self.st
        z, r = self._decide(mu, gamma)
        phi = self.crypto.sign(st.i, encode_commit_payload(st.u, l, st.H[l], z))
        return z, r, CommitMessage(st.u, l, st.H[l], z, phi)

    def on_broadcast(self, msg: BroadcastMessage) -> Confirmed | Halted:
        st = self.st
        if st.halted is not None:
            return Halted(st.halted)
        try:
            return self._on_broadcast(msg)
        except _Halt as e:
            st.halted = e.reason
            return Halted(e.reason)

    def _on_broadcast(self, msg: BroadcastMessage) -> Confirmed:
        st = self.st
        q = msg.q
        if q != st.c + 1:
            raise _Halt(HaltReason.BAD_BROADCAST_SEQ)
        if not self.crypto.verify(msg.client, msg.phi, msg.signed_payload()):
            raise _Halt(HaltReason.BAD_COMMIT_SIGNATURE)
        if q not in st.H:
            st.H[q] = chain_hash(self.crypto, st.H[q - 1], msg.op, q, msg.client)
        if msg.h != st.H[q]:
            raise _Halt(HaltReason.CHAIN_MISMATCH_BROADCAST)
        self._apply(msg)
        st.c += 1
        self._collect()
        return Confirmed(msg.z == Status.SUCCESS, q, msg.op, msg.client, msg.z, msg.h,
                         self._digest_after(q))

    def _apply(self, msg: BroadcastMessage) -> None:
        if msg.z == Status.SUCCESS:
            self.st.s, _ = self.f.apply(self.st.s, msg.op)

    def _digest_after(self, q: int) -> bytes | None:
        return None

    def _collect(self) -> None:
        if not self.gc:
            return
        st = self.st
        floor = st.c if st.c_invoke is None else min(st.c, st.c_invoke)
        for table in (st.H, st.Z):
            for q in [q for q in table if q < floor]:
                del table[q]

    def status_digest(self) -> tuple[int, bytes]:
        """Fingerprint of the confirmed prefix, for out-of-band comparison."""
        return self.st.c, self.st.H[self.st.c]
