"""Hashing and per-client signatures.

Two interchangeable backends share one interface:

* ``IdealCrypto`` models the primitives as trusted oracles. ``hash`` keeps a
  list of every queried input and answers with the input's index, so it is
  injective by construction. ``verify`` accepts exactly the (signer, message,
  signature) triples that ``sign`` handed out.
* ``Sha256Crypto`` uses SHA-256 and HMAC-SHA-256 with per-client secret keys.
  HMAC is a simulation stand-in for public-key signatures: it is sound here
  only because the adversary is the server, which never holds client keys.
"""

from __future__ import annotations

import hashlib
import hmac
import threading
from dataclasses import dataclass


@dataclass(frozen=True)
class Signature:
    signer: int
    value: bytes

    def __str__(self) -> str:
        return f"sig[{self.signer}]:{self.value.hex()}"


class Crypto:
    name: str
    digest_size: int

    def hash(self, data: bytes) -> bytes:
        raise NotImplementedError

    def sign(self, i: int, message: bytes) -> Signature:
        raise NotImplementedError

    def verify(self, i: int, sig: Signature, message: bytes) -> bool:
        raise NotImplementedError


class IdealCrypto(Crypto):
    name = "ideal"
    digest_size = 8

    def __init__(self) -> None:
        self._lock = threading.Lock()
        self.queries: list[bytes] = []
        self._index: dict[bytes, int] = {}
        self._signatures: dict[tuple[int, bytes], bytes] = {}

    def hash(self, data: bytes) -> bytes:
        data = bytes(data)
        with self._lock:
            idx = self._index.get(data)
            if idx is None:
                idx = len(self.queries)
                self.queries.append(data)
                self._index[data] = idx
        return idx.to_bytes(8, "big")

    def sign(self, i: int, message: bytes) -> Signature:
        key = (i, bytes(message))
        with self._lock:
            value = self._signatures.get(key)
            if value is None:
                value = len(self._signatures).to_bytes(8, "big")
                self._signatures[key] = value
        return Signature(i, value)

    def verify(self, i: int, sig: Signature, message: bytes) -> bool:
        if sig.signer != i:
            return False
        with self._lock:
            return self._signatures.get((i, bytes(message))) == sig.value

    def signed_pairs(self) -> set[tuple[int, bytes]]:
        with self._lock:
            return set(self._signatures)


class Sha256Crypto(Crypto):
    name = "sha256"
    digest_size = 32

    def __init__(self, seed: int = 0) -> None:
        self.seed = seed
        self._keys: dict[int, bytes] = {}
        self._lock = threading.Lock()

    def _key(self, i: int) -> bytes:
        with self._lock:
            key = self._keys.get(i)
            if key is None:
                key = hashlib.sha256(b"cop-client-key|%d|%d" % (self.seed, i)).digest()
                self._keys[i] = key
        return key

    def hash(self, data: bytes) -> bytes:
        return hashlib.sha256(data).digest()

    def sign(self, i: int, message: bytes) -> Signature:
        return Signature(i, hmac.new(self._key(i), message, hashlib.sha256).digest())

    def verify(self, i: int, sig: Signature, message: bytes) -> bool:
        if sig.signer != i:
            return False
        expected = hmac.new(self._key(i), message, hashlib.sha256).digest()
        return hmac.compare_digest(expected, sig.value)


def make_crypto(name: str, seed: int = 0) -> Crypto:
    if name == "ideal":
        return IdealCrypto()
    if name == "sha256":
        return Sha256Crypto(seed)
    raise ValueError(f"unknown crypto backend {name!r}")
