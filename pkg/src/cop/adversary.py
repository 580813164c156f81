"""Byzantine servers.

Each adversary speaks the server's simulator interface (``handle_invoke`` /
``handle_commit`` returning addressed messages) and wraps one or more correct
servers whose output it forks, rewrites, withholds or reorders. All behavior
is a deterministic function of the construction arguments and the message
history.
"""

from __future__ import annotations

import dataclasses
import hashlib
import random
from typing import Callable, Sequence

from .functionality import Status
from .server import Outbox, Server
from .wire import BroadcastMessage, CommitMessage, InvokeMessage, ReplyMessage

ServerFactory = Callable[[Sequence[int]], Server]

KINDS = ("none", "fork", "equivocate_reply", "skip_broadcast", "reorder_broadcast",
         "tamper_status", "forge_signature", "fuzz")


class ForkServer:
    """Runs an independent correct server per partition of the clients."""

    def __init__(self, partitions: Sequence[Sequence[int]], factory: ServerFactory) -> None:
        seen: set[int] = set()
        for group in partitions:
            if not group:
                raise ValueError("empty fork partition")
            if seen & set(group):
                raise ValueError("fork partitions must be disjoint")
            seen |= set(group)
        self.partitions = [list(g) for g in partitions]
        self.clients = sorted(seen)
        self._servers = [factory(g) for g in self.partitions]
        self._route = {i: s for g, s in zip(self.partitions, self._servers) for i in g}

    def handle_invoke(self, i: int, msg: InvokeMessage) -> Outbox:
        return self._route[i].handle_invoke(i, msg)

    def handle_commit(self, i: int, msg: CommitMessage) -> Outbox:
        return self._route[i].handle_commit(i, msg)


class _Wrapper:
    """Pass-through around a correct server; subclasses rewrite traffic to ``target``.

    With ``target=None`` the wrapper is a no-op.
    """

    def __init__(self, inner: Server, target: int | None = 1) -> None:
        self.inner = inner
        self.clients = inner.clients
        self.target = target

    def handle_invoke(self, i: int, msg: InvokeMessage) -> Outbox:
        return self._filter(self.inner.handle_invoke(i, msg))

    def handle_commit(self, i: int, msg: CommitMessage) -> Outbox:
        return self._filter(self.inner.handle_commit(i, msg))

    def _filter(self, outbox: Outbox) -> Outbox:
        out: Outbox = []
        for dst, m in outbox:
            if dst == self.target:
                out.extend((dst, x) for x in self.rewrite(m))
            else:
                out.append((dst, m))
        return out

    def rewrite(self, msg):
        return [msg]


class EquivocateReply(_Wrapper):
    """Announces a different operation at a position already announced to the target.

    ``tamper="signature"`` corrupts a pending entry's invoke signature instead.
    """

    def __init__(self, inner: Server, target: int | None = 1,
                 tamper: str = "operation") -> None:
        super().__init__(inner, target)
        if tamper not in ("operation", "signature"):
            raise ValueError(f"unknown tamper mode {tamper!r}")
        self.tamper = tamper
        self.done = False
        self._announced: dict[int, object] = {}

    def handle_invoke(self, i: int, msg: InvokeMessage) -> Outbox:
        outbox = self.inner.handle_invoke(i, msg)
        if i != self.target or self.done:
            return outbox
        (dst, reply), = outbox
        omega = list(reply.omega)
        if self.tamper == "signature":
            e = omega[0]
            forged = dataclasses.replace(e.tau, value=_corrupt(e.tau.value))
            omega[0] = dataclasses.replace(e, tau=forged)
            self.done = True
        else:
            for k, e in enumerate(omega[:-1]):
                l = msg.c + 1 + k
                if l not in self._announced:
                    continue
                alt = next((x for x in self.inner.st.I.values()
                            if (x.op, x.client) != (e.op, e.client)), None)
                if alt is not None:
                    omega[k] = alt
                    self.done = True
                    break
            for k, e in enumerate(reply.omega):
                self._announced.setdefault(msg.c + 1 + k, e)
        return [(dst, dataclasses.replace(reply, omega=tuple(omega)))]


class SkipBroadcast(_Wrapper):
    """Withholds broadcast ``skip`` from the target."""

    def __init__(self, inner: Server, target: int | None = 1, skip: int = 1) -> None:
        super().__init__(inner, target)
        self.skip = skip

    def rewrite(self, msg):
        if isinstance(msg, BroadcastMessage) and msg.q == self.skip:
            return []
        return [msg]


class ReorderBroadcast(_Wrapper):
    """Delivers broadcast ``first + 1`` to the target before ``first``."""

    def __init__(self, inner: Server, target: int | None = 1, first: int = 1) -> None:
        super().__init__(inner, target)
        self.first = first
        self._held: BroadcastMessage | None = None

    def rewrite(self, msg):
        if not isinstance(msg, BroadcastMessage):
            return [msg]
        if msg.q == self.first:
            self._held = msg
            return []
        if msg.q == self.first + 1 and self._held is not None:
            held, self._held = self._held, None
            return [msg, held]
        return [msg]


class TamperStatus(_Wrapper):
    """Flips the status of the first broadcast relayed to the target."""

    def __init__(self, inner: Server, target: int | None = 1) -> None:
        super().__init__(inner, target)
        self.done = False

    def rewrite(self, msg):
        if isinstance(msg, BroadcastMessage) and not self.done:
            self.done = True
            flipped = Status.ABORT if msg.z == Status.SUCCESS else Status.SUCCESS
            return [dataclasses.replace(msg, z=flipped)]
        return [msg]


class ForgeSignature(_Wrapper):
    """Replaces the commit signature of the first broadcast with fresh bytes."""

    def __init__(self, inner: Server, target: int | None = 1) -> None:
        super().__init__(inner, target)
        self.done = False

    def rewrite(self, msg):
        if isinstance(msg, BroadcastMessage) and not self.done:
            self.done = True
            fake = hashlib.sha256(b"forged|" + msg.phi.value).digest()[: len(msg.phi.value)]
            if fake == msg.phi.value:
                fake = _corrupt(fake)
            return [dataclasses.replace(msg, phi=dataclasses.replace(msg.phi, value=fake))]
        return [msg]


class FuzzServer(_Wrapper):
    """Randomly mutates replies and broadcasts bound for the target."""

    def __init__(self, inner: Server, target: int | None = 1, seed: int = 0,
                 rate: float = 0.3) -> None:
        super().__init__(inner, target)
        self.rng = random.Random(f"fuzz:{seed}")
        self.rate = rate

    def rewrite(self, msg):
        if self.rng.random() >= self.rate:
            return [msg]
        if isinstance(msg, ReplyMessage):
            omega = list(msg.omega)
            choice = self.rng.choice(("sig", "drop", "swap", "dup"))
            k = self.rng.randrange(len(omega))
            if choice == "sig":
                e = omega[k]
                omega[k] = dataclasses.replace(
                    e, tau=dataclasses.replace(e.tau, value=_corrupt(e.tau.value)))
            elif choice == "drop":
                del omega[k]
            elif choice == "swap" and len(omega) > 1:
                k = min(k, len(omega) - 2)
                omega[k], omega[k + 1] = omega[k + 1], omega[k]
            else:
                omega.insert(k, omega[k])
            return [dataclasses.replace(msg, omega=tuple(omega))]
        if isinstance(msg, BroadcastMessage):
            choice = self.rng.choice(("drop", "dup", "seq", "hash", "status"))
            if choice == "drop":
                return []
            if choice == "dup":
                return [msg, msg]
            if choice == "seq":
                return [dataclasses.replace(msg, q=msg.q + 1)]
            if choice == "hash":
                return [dataclasses.replace(msg, h=_corrupt(msg.h))]
            flipped = Status.ABORT if msg.z == Status.SUCCESS else Status.SUCCESS
            return [dataclasses.replace(msg, z=flipped)]
        return [msg]


def _corrupt(data: bytes) -> bytes:
    if not data:
        return b"\x01"
    return bytes([data[0] ^ 0x01]) + data[1:]


def make_server(kind: str, factory: ServerFactory, clients: Sequence[int], *,
                target: int | None = 1, partitions: Sequence[Sequence[int]] | None = None,
                tamper: str = "operation", seed: int = 0, rate: float = 0.3):
    """Build the server for a scenario: the correct one or a catalog adversary."""
    if kind == "none":
        return factory(clients)
    if kind == "fork":
        if partitions is None:
            partitions = [[i] for i in clients]
        if sorted(i for g in partitions for i in g) != sorted(clients):
            raise ValueError("fork partitions must cover all clients exactly once")
        return ForkServer(partitions, factory)
    inner = factory(clients)
    if kind == "equivocate_reply":
        return EquivocateReply(inner, target, tamper)
    if kind == "skip_broadcast":
        return SkipBroadcast(inner, target)
    if kind == "reorder_broadcast":
        return ReorderBroadcast(inner, target)
    if kind == "tamper_status":
        return TamperStatus(inner, target)
    if kind == "forge_signature":
        return ForgeSignature(inner, target)
    if kind == "fuzz":
        return FuzzServer(inner, target, seed, rate)
    raise ValueError(f"unknown adversary {kind!r}; expected one of {', '.join(KINDS)}")
