"""Merkle-authenticated key-value store.

The tree is a sparse binary Merkle tree of fixed depth 256. A key's leaf
position is given by the bits of SHA-256(key), most significant bit first;
this is addressing only, the node hashes use the run's crypto backend. Empty
subtrees hash to precomputed per-level defaults, so a proof only carries the
non-default siblings plus a 256-bit presence bitmap. The same path proves
membership (leaf holds the value) and non-membership (leaf is empty), and it
suffices to recompute both the old and the new root of a ``put``.

Node hashing (``F`` is a 4-byte big-endian length prefix):

    leaf(k, v) = hash(F("leaf") F(k) F(v))
    empty      = hash(F("empty"))
    node(l, r) = hash(F("node") F(l) F(r))

Proof size: for ``n`` stored keys the number of non-default siblings is about
``log2(n) + 1``; tests assert the bound ``2*log2(n) + 8``.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from typing import Any

from ..crypto import Crypto
from ..functionality import (
    ABSENT,
    BOTTOM,
    DecodeError,
    Get,
    KVState,
    Operation,
    Put,
)
from ..wire import Reader, decode_list, encode_list
from ..wire import field as lp

DEPTH = 256
PROOF_SIZE_SLOPE = 2
PROOF_SIZE_OFFSET = 8


def key_path(key: bytes) -> int:
    return int.from_bytes(hashlib.sha256(key).digest(), "big")


def _bit(path: int, level: int) -> int:
    """Branch taken below node at ``level`` (0 = root)."""
    return (path >> (DEPTH - 1 - level)) & 1


class MerkleHasher:
    """Node hashing and per-level empty-subtree defaults for one backend."""

    def __init__(self, crypto: Crypto) -> None:
        self.crypto = crypto
        defaults = [b""] * (DEPTH + 1)
        defaults[DEPTH] = crypto.hash(lp(b"empty"))
        for d in range(DEPTH - 1, -1, -1):
            defaults[d] = self.node(defaults[d + 1], defaults[d + 1])
        self.defaults = defaults

    def leaf(self, key: bytes, value: bytes) -> bytes:
        return self.crypto.hash(lp(b"leaf") + lp(key) + lp(value))

    def node(self, left: bytes, right: bytes) -> bytes:
        return self.crypto.hash(lp(b"node") + lp(left) + lp(right))


@dataclass(frozen=True)
class Proof:
    """Authentication path for one key.

    ``value`` is the leaf content in the proven state (``None`` when absent).
    ``bitmap`` bit ``d`` (MSB-first over 32 bytes) is set when the sibling of
    the path node at depth ``d + 1`` is not the empty default; ``siblings``
    lists those hashes bottom-up.
    """

    kind: str
    key: bytes
    value: bytes | None
    bitmap: bytes
    siblings: tuple[bytes, ...]

    def encode(self) -> bytes:
        val = b"\x00" if self.value is None else b"\x01" + self.value
        return (lp(self.kind.encode("ascii")) + lp(self.key) + lp(val)
                + lp(self.bitmap) + encode_list(list(self.siblings)))

    @classmethod
    def decode(cls, data: bytes) -> "Proof":
        r = Reader(data)
        proof = cls.read(r)
        r.done()
        return proof

    @classmethod
    def read(cls, r: Reader) -> "Proof":
        kind = r.field().decode("ascii", "replace")
        if kind not in ("get", "put"):
            raise DecodeError(f"bad proof kind {kind!r}")
        key = r.field()
        val = r.field()
        if val == b"\x00":
            value = None
        elif val[:1] == b"\x01":
            value = val[1:]
        else:
            raise DecodeError("bad leaf value encoding")
        bitmap = r.field()
        if len(bitmap) != DEPTH // 8:
            raise DecodeError("bad bitmap length")
        siblings = tuple(decode_list(r))
        if sum(bin(b).count("1") for b in bitmap) != len(siblings):
            raise DecodeError("bitmap does not match sibling count")
        return cls(kind, key, value, bitmap, siblings)

    def __len__(self) -> int:
        return len(self.siblings)


class AuthKVStore:
    """Immutable store ``D`` together with its authentication data ``A``.

    ``A`` is the map of non-default tree nodes, keyed by (depth, prefix).
    """

    def __init__(self, hasher: MerkleHasher, state: KVState | None = None) -> None:
        self.hasher = hasher
        self.state = state if state is not None else KVState()
        self._nodes: dict[tuple[int, int], bytes] | None = None

    @property
    def nodes(self) -> dict[tuple[int, int], bytes]:
        if self._nodes is None:
            self._nodes = self._build()
        return self._nodes

    def _build(self) -> dict[tuple[int, int], bytes]:
        h = self.hasher
        nodes: dict[tuple[int, int], bytes] = {}
        level: dict[int, bytes] = {}
        for k, v in self.state.items:
            level[key_path(k)] = h.leaf(k, v)
        nodes.update(((DEPTH, p), x) for p, x in level.items())
        for d in range(DEPTH - 1, -1, -1):
            parents: dict[int, bytes] = {}
            for p in {p >> 1 for p in level}:
                left = level.get(p << 1, h.defaults[d + 1])
                right = level.get((p << 1) | 1, h.defaults[d + 1])
                parents[p] = h.node(left, right)
            level = parents
            nodes.update(((d, p), x) for p, x in level.items())
        return nodes

    def digest(self) -> bytes:
        return self.nodes.get((0, 0), self.hasher.defaults[0])

    def prove(self, key: bytes, kind: str) -> Proof:
        path = key_path(key)
        bitmap = bytearray(DEPTH // 8)
        siblings = []
        for d in range(DEPTH, 0, -1):
            sib = self.nodes.get((d, (path >> (DEPTH - d)) ^ 1))
            if sib is not None:
                level = d - 1
                bitmap[level // 8] |= 0x80 >> (level % 8)
                siblings.append(sib)
        return Proof(kind, key, self.state.get(key), bytes(bitmap), tuple(siblings))

    def with_put(self, key: bytes, value: bytes) -> "AuthKVStore":
        d = self.state.as_dict()
        d[key] = value
        return AuthKVStore(self.hasher, KVState.from_dict(d))


def authexec(store: AuthKVStore, op: Operation) -> tuple[AuthKVStore, Proof, Any]:
    """Execute ``op`` on the server side and return ``(D', proof, response)``."""
    if isinstance(op, Get):
        proof = store.prove(op.key, "get")
        return store, proof, ABSENT if proof.value is None else proof.value
    if isinstance(op, Put):
        proof = store.prove(op.key, "put")
        return store.with_put(op.key, op.value), proof, True
    raise TypeError(f"authenticated store does not support {op!r}")


def root_from_path(hasher: MerkleHasher, key: bytes, value: bytes | None,
                   bitmap: bytes, siblings: tuple[bytes, ...]) -> bytes | None:
    path = key_path(key)
    node = hasher.defaults[DEPTH] if value is None else hasher.leaf(key, value)
    it = iter(siblings)
    for level in range(DEPTH - 1, -1, -1):
        if bitmap[level // 8] & (0x80 >> (level % 8)):
            sib = next(it, None)
            if sib is None:
                return None
        else:
            sib = hasher.defaults[level + 1]
        if _bit(path, level):
            node = hasher.node(sib, node)
        else:
            node = hasher.node(node, sib)
    if next(it, None) is not None:
        return None
    return node


def _same_response(a: Any, b: Any) -> bool:
    if a is ABSENT or b is ABSENT or a is BOTTOM or b is BOTTOM:
        return a is b
    return type(a) is type(b) and a == b


def ads_verify(hasher: MerkleHasher, digest: bytes, proof: Proof, op: Operation,
               response: Any) -> tuple[bytes | None, Any]:
    """Client-side check. Returns ``(digest', response)`` or ``(None, BOTTOM)``."""
    if not isinstance(proof, Proof) or proof.key != getattr(op, "key", None):
        return None, BOTTOM
    if len(proof.bitmap) != DEPTH // 8:
        return None, BOTTOM
    old = root_from_path(hasher, proof.key, proof.value, proof.bitmap, proof.siblings)
    if old is None or old != digest:
        return None, BOTTOM
    if isinstance(op, Get) and proof.kind == "get":
        expected = ABSENT if proof.value is None else proof.value
        if not _same_response(response, expected):
            return None, BOTTOM
        return digest, response
    if isinstance(op, Put) and proof.kind == "put":
        if response is not True:
            return None, BOTTOM
        new = root_from_path(hasher, proof.key, op.value, proof.bitmap, proof.siblings)
        return new, response
    return None, BOTTOM


@dataclass
class VersionedStores:
    """Server-side ``D[q]`` for ``q = 0..b``.

    ``retain_all`` keeps one snapshot per version. Otherwise only the latest
    store is kept together with per-version change sets, and older versions
    are rebuilt by undoing changes; ``compact(q)`` drops change sets that no
    client can still need.
    """

    initial: AuthKVStore
    retain_all: bool = True
    _snapshots: list[AuthKVStore] = field(default_factory=list)
    _latest: AuthKVStore | None = None
    _changes: dict[int, tuple[bytes, bytes | None] | None] = field(default_factory=dict)
    _version: int = 0
    _floor: int = 0

    def __post_init__(self) -> None:
        self._snapshots = [self.initial]
        self._latest = self.initial

    @property
    def version(self) -> int:
        return self._version

    def append(self, op: Operation | None) -> AuthKVStore:
        """Record version ``b + 1``: ``op`` applied, or unchanged when ``None``."""
        latest = self._latest
        change = None
        if op is not None:
            new, _, _ = authexec(latest, op)
            if isinstance(op, Put):
                change = (op.key, latest.state.get(op.key))
            latest = new
        self._version += 1
        self._latest = latest
        if self.retain_all:
            self._snapshots.append(latest)
        else:
            self._changes[self._version] = change
        return latest

    def get(self, q: int) -> AuthKVStore:
        if not 0 <= q <= self._version:
            raise KeyError(q)
        if self.retain_all:
            return self._snapshots[q]
        if q < self._floor:
            raise KeyError(f"version {q} was compacted")
        if q == self._version:
            return self._latest
        d = self._latest.state.as_dict()
        for v in range(self._version, q, -1):
            change = self._changes[v]
            if change is None:
                continue
            key, old = change
            if old is None:
                d.pop(key, None)
            else:
                d[key] = old
        return AuthKVStore(self._latest.hasher, KVState.from_dict(d))

    def compact(self, q: int) -> None:
        if self.retain_all:
            return
        for v in [v for v in self._changes if v <= q]:
            del self._changes[v]
        self._floor = max(self._floor, q)
