"""The correct server: global sequencing, commit recording, in-order broadcast."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

from .wire import (
    BroadcastMessage,
    CommitMessage,
    InvokeMessage,
    Message,
    PendingEntry,
    ReplyMessage,
)

Outbox = list[tuple[int, Message]]


@dataclass
class ServerState:
    t: int = 0
    b: int = 0
    I: dict[int, PendingEntry] = field(default_factory=dict)
    O: dict[int, tuple[CommitMessage, int]] = field(default_factory=dict)


class Server:
    """Correct server. It never verifies client signatures; clients do.

    With ``gc`` on, committed entries are dropped once broadcast and invoked
    entries once every client has reported a confirmed count covering them.
    """

    def __init__(self, clients: Sequence[int], gc: bool = False) -> None:
        self.clients = list(clients)
        self.gc = gc
        self.st = ServerState()
        self._acked = {i: 0 for i in self.clients}

    def on_invoke(self, i: int, msg: InvokeMessage) -> ReplyMessage:
        st = self.st
        st.t += 1
        st.I[st.t] = PendingEntry(msg.op, i, msg.tau)
        omega = tuple(st.I[q] for q in range(msg.c + 1, st.t + 1))
        if self.gc:
            self._acked[i] = max(self._acked.get(i, 0), msg.c)
            self._collect()
        return ReplyMessage(omega)

    def on_commit(self, i: int, msg: CommitMessage) -> list[BroadcastMessage]:
        st = self.st
        if not (self.gc and msg.q <= st.b):
            st.O[msg.q] = (msg, i)
        out = []
        while st.b + 1 in st.O:
            st.b += 1
            commit, j = st.O[st.b]
            out.append(self.make_broadcast(commit, j))
            if self.gc:
                del st.O[st.b]
        return out

    def make_broadcast(self, commit: CommitMessage, j: int) -> BroadcastMessage:
        return BroadcastMessage.from_commit(commit, j)

    def _collect(self) -> None:
        floor = min(self._acked.values(), default=0)
        for q in [q for q in self.st.I if q <= floor]:
            del self.st.I[q]

    # simulator-facing entry points: address every produced message

    def handle_invoke(self, i: int, msg: InvokeMessage) -> Outbox:
        return [(i, self.on_invoke(i, msg))]

    def handle_commit(self, i: int, msg: CommitMessage) -> Outbox:
        return [(k, b) for b in self.on_commit(i, msg) for k in self.clients]
