"""Bit-flip mutation of server-to-client messages in authenticated runs."""

from __future__ import annotations

import copy
import random
from dataclasses import dataclass, replace

from cop.authstore import Proof
from cop.client import Completed, Confirmed, Halted
from cop.functionality import BOTTOM, DecodeError, decode_response, encode_response
from cop.simnet import SERVER, Scenario, Simulation
from cop.wire import BroadcastMessage, ReplyMessage, decode_message


@dataclass
class Snapshot:
    client: object
    raw: bytes
    outcome: object  # result of delivering the genuine message


def clone(client):
    c = copy.copy(client)
    c.st = replace(client.st, H=dict(client.st.H), Z=dict(client.st.Z))
    if hasattr(client, "G"):
        c.G = dict(client.G)
        c.log = dict(client.log)
    return c


class _Recording(Simulation):
    def __init__(self, scenario: Scenario) -> None:
        super().__init__(scenario)
        self.snapshots: list[Snapshot] = []

    def deliver(self, src: int, dst: int) -> None:
        if dst != SERVER and self.clients[dst].halted is None:
            msg = self.channels[(src, dst)][0]
            before = clone(self.clients[dst])
            super().deliver(src, dst)
            probe = clone(before)
            out = (probe.on_reply(msg) if isinstance(msg, ReplyMessage)
                   else probe.on_broadcast(msg))
            self.snapshots.append(Snapshot(before, msg.encode(), out))
            return
        super().deliver(src, dst)


def record_deliveries(scenario: Scenario) -> list[Snapshot]:
    sim = _Recording(scenario)
    sim.run()
    return sim.snapshots


def flip(raw: bytes, bit: int) -> bytes:
    b = bytearray(raw)
    b[bit // 8] ^= 0x80 >> (bit % 8)
    return bytes(b)


def deliver_mutant(snap: Snapshot, bit: int) -> str:
    """Outcome of delivering ``snap`` with one bit of the whole message flipped.

    Returns "decode", "halt", "bottom" or "accepted".
    """
    try:
        msg = decode_message(flip(snap.raw, bit))
    except DecodeError:
        return "decode"
    return _deliver(snap, msg)


# --------------------------------------------------------------------------
# corruption of one proof or response field, re-encoded in place


def proof_fields(msg) -> list[tuple]:
    """Paths of the proofs and responses an authenticated message carries."""
    paths: list[tuple] = [("proof",), ("response",)]
    if getattr(msg, "recipient_proof", None) is not None:
        paths.append(("recipient_proof",))
    for k in range(len(msg.steps)):
        paths += [("steps", k, "proof"), ("steps", k, "response")]
    return paths


def _get(obj, path):
    for p in path:
        obj = obj[p] if isinstance(p, int) else getattr(obj, p)
    return obj


def _set(obj, path, value):
    if len(path) == 1:
        return replace(obj, **{path[0]: value})
    if isinstance(path[0], int):
        items = list(obj)
        items[path[0]] = _set(items[path[0]], path[1:], value)
        return tuple(items)
    return replace(obj, **{path[0]: _set(getattr(obj, path[0]), path[1:], value)})


def _codec(path):
    if path[-1] == "response":
        return encode_response, decode_response
    return Proof.encode, Proof.decode


def field_size(msg, path) -> int:
    return len(_codec(path)[0](_get(msg, path))) * 8


def deliver_field_mutant(snap: Snapshot, path: tuple, bit: int) -> str:
    msg = decode_message(snap.raw)
    enc, dec = _codec(path)
    try:
        value = dec(flip(enc(_get(msg, path)), bit))
    except DecodeError:
        return "decode"
    return _deliver(snap, _set(msg, path, value))


def field_campaign(snapshots: list[Snapshot], n: int, seed: int = 0) -> dict[str, int]:
    rng = random.Random(f"field-mutation:{seed}")
    counts: dict[str, int] = {}
    for _ in range(n):
        snap = rng.choice(snapshots)
        path = rng.choice(proof_fields(decode_message(snap.raw)))
        bit = rng.randrange(field_size(decode_message(snap.raw), path))
        outcome = deliver_field_mutant(snap, path, bit)
        counts[outcome] = counts.get(outcome, 0) + 1
    return counts


def _deliver(snap: Snapshot, msg) -> str:
    c = clone(snap.client)
    if isinstance(msg, ReplyMessage):
        res = c.on_reply(msg)
    elif isinstance(msg, BroadcastMessage):
        res = c.on_broadcast(msg)
    else:
        return "decode"
    if isinstance(res, Halted):
        return "halt"
    if isinstance(res, Completed) and res.response is BOTTOM:
        return "bottom"
    assert isinstance(res, (Completed, Confirmed))
    return "accepted"


def mutation_campaign(snapshots: list[Snapshot], n: int, seed: int = 0) -> dict[str, int]:
    rng = random.Random(f"mutation:{seed}")
    counts: dict[str, int] = {}
    for _ in range(n):
        snap = rng.choice(snapshots)
        outcome = deliver_mutant(snap, rng.randrange(len(snap.raw) * 8))
        counts[outcome] = counts.get(outcome, 0) + 1
    return counts
