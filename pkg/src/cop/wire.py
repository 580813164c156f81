"""Protocol messages and their canonical byte encodings.

Every byte string that is hashed or signed is built from tagged,
length-prefixed fields (4-byte big-endian length, then the bytes), so
concatenation is unambiguous. Sequence numbers and client indices are 8-byte
big-endian unsigned integers. The full layout table lives in WIRE.md.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Any, ClassVar

from .crypto import Crypto, Signature
from .functionality import (
    DecodeError,
    Operation,
    Status,
    _Reader,
    decode_operation,
    decode_response,
    encode_response,
)

CHAIN_SENTINEL = b"null"
"""H[0], the hash-chain entry preceding the first operation."""


def field(data: bytes) -> bytes:
    return len(data).to_bytes(4, "big") + data


def u64(x: int) -> bytes:
    if x < 0:
        raise ValueError("sequence numbers are unsigned")
    return x.to_bytes(8, "big")


def encode_invoke_payload(op: Operation, i: int) -> bytes:
    return field(b"invoke") + field(op.encode()) + field(u64(i))


def encode_commit_payload(op: Operation, q: int, h: bytes, z: str) -> bytes:
    return (field(b"commit") + field(op.encode()) + field(u64(q)) + field(h)
            + field(z.encode("ascii")))


def encode_chain_link(prev: bytes, op: Operation, l: int, j: int) -> bytes:
    return field(prev) + field(op.encode()) + field(u64(l)) + field(u64(j))


def chain_hash(crypto: Crypto, prev: bytes, op: Operation, l: int, j: int) -> bytes:
    return crypto.hash(encode_chain_link(prev, op, l, j))


# --------------------------------------------------------------------------
# field readers shared by message decoders


class Reader(_Reader):
    def u64(self) -> int:
        raw = self.field()
        if len(raw) != 8:
            raise DecodeError("expected 8-byte integer")
        return int.from_bytes(raw, "big")

    def op(self) -> Operation:
        return decode_operation(self.field())

    def sig(self) -> Signature:
        signer = self.u64()
        return Signature(signer, self.field())

    def status(self) -> str:
        z = self.field().decode("ascii", "replace")
        if z not in Status.ALL:
            raise DecodeError(f"bad status {z!r}")
        return z

    def response(self) -> Any:
        return decode_response(self.field())


def encode_sig(sig: Signature) -> bytes:
    return field(u64(sig.signer)) + field(sig.value)


def encode_list(items: list[bytes]) -> bytes:
    return field(u64(len(items))) + b"".join(field(x) for x in items)


def decode_list(r: Reader) -> list[bytes]:
    n = r.u64()
    if n > len(r.data):
        raise DecodeError("list length exceeds input")
    return [r.field() for _ in range(n)]


# --------------------------------------------------------------------------
# messages

_REGISTRY: dict[int, type["Message"]] = {}


class Message:
    TYPE: ClassVar[int]
    KIND: ClassVar[str]

    def __init_subclass__(cls, **kwargs: Any) -> None:
        super().__init_subclass__(**kwargs)
        if "TYPE" in cls.__dict__:
            if cls.TYPE in _REGISTRY:
                raise RuntimeError(f"duplicate message type {cls.TYPE:#x}")
            _REGISTRY[cls.TYPE] = cls

    def body(self) -> bytes:
        raise NotImplementedError

    @classmethod
    def read_body(cls, r: Reader) -> "Message":
        raise NotImplementedError

    def encode(self) -> bytes:
        return bytes([self.TYPE]) + self.body()


def decode_message(data: bytes) -> Message:
    if not data:
        raise DecodeError("empty message")
    cls = _REGISTRY.get(data[0])
    if cls is None:
        raise DecodeError(f"unknown message type {data[0]:#x}")
    r = Reader(data[1:])
    msg = cls.read_body(r)
    r.done()
    return msg


@dataclass(frozen=True)
class InvokeMessage(Message):
    op: Operation
    c: int
    tau: Signature
    TYPE = 0x10
    KIND = "invoke"

    def body(self) -> bytes:
        return field(self.op.encode()) + field(u64(self.c)) + encode_sig(self.tau)

    @classmethod
    def read_body(cls, r):
        return cls(r.op(), r.u64(), r.sig())


@dataclass(frozen=True)
class PendingEntry:
    op: Operation
    client: int
    tau: Signature

    def encode(self) -> bytes:
        return field(self.op.encode()) + field(u64(self.client)) + encode_sig(self.tau)

    @classmethod
    def decode(cls, data: bytes) -> "PendingEntry":
        r = Reader(data)
        out = cls(r.op(), r.u64(), r.sig())
        r.done()
        return out


@dataclass(frozen=True)
class ReplyMessage(Message):
    omega: tuple[PendingEntry, ...]
    TYPE = 0x11
    KIND = "reply"

    def body(self) -> bytes:
        return encode_list([e.encode() for e in self.omega])

    @classmethod
    def read_body(cls, r):
        return cls(tuple(PendingEntry.decode(x) for x in decode_list(r)))


@dataclass(frozen=True)
class CommitMessage(Message):
    op: Operation
    q: int
    h: bytes
    z: str
    phi: Signature
    TYPE = 0x12
    KIND = "commit"

    def body(self) -> bytes:
        return (field(self.op.encode()) + field(u64(self.q)) + field(self.h)
                + field(self.z.encode("ascii")) + encode_sig(self.phi))

    @classmethod
    def read_body(cls, r):
        return cls(r.op(), r.u64(), r.field(), r.status(), r.sig())

    def signed_payload(self) -> bytes:
        return encode_commit_payload(self.op, self.q, self.h, self.z)


@dataclass(frozen=True)
class BroadcastMessage(Message):
    op: Operation
    q: int
    h: bytes
    z: str
    phi: Signature
    client: int
    TYPE = 0x13
    KIND = "broadcast"

    def body(self) -> bytes:
        return (field(self.op.encode()) + field(u64(self.q)) + field(self.h)
                + field(self.z.encode("ascii")) + encode_sig(self.phi)
                + field(u64(self.client)))

    @classmethod
    def read_body(cls, r):
        return cls(r.op(), r.u64(), r.field(), r.status(), r.sig(), r.u64())

    @classmethod
    def from_commit(cls, commit: CommitMessage, client: int) -> "BroadcastMessage":
        return cls(commit.op, commit.q, commit.h, commit.z, commit.phi, client)

    def signed_payload(self) -> bytes:
        return encode_commit_payload(self.op, self.q, self.h, self.z)


__all__ = [
    "CHAIN_SENTINEL", "BroadcastMessage", "CommitMessage", "InvokeMessage",
    "Message", "PendingEntry", "Reader", "ReplyMessage", "chain_hash",
    "decode_message", "encode_chain_link", "encode_commit_payload",
    "encode_invoke_payload", "encode_list", "decode_list", "encode_response",
    "encode_sig", "field", "u64",
]
