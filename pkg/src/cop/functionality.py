"""Deterministic functionalities, their abortable extension, and commutativity.

A functionality maps ``(state, operation)`` to ``(state', response)``. Two
instances ship with the package: a non-negative counter and a byte-string
key-value store. Operations have a canonical byte encoding (see WIRE.md) that
is used for hashing, signing and traces.
"""

from __future__ import annotations

import itertools
from abc import ABC, abstractmethod
from dataclasses import dataclass
from typing import Any, Iterator, Sequence

# Brute-force interleaving enumeration is only meant for desk-scale inputs.
MAX_ORACLE_LENGTH = 12


class _Sentinel:
    __slots__ = ("_name",)

    def __init__(self, name: str) -> None:
        self._name = name

    def __repr__(self) -> str:
        return self._name

    def __reduce__(self) -> str:
        return self._name


BOTTOM = _Sentinel("BOTTOM")
"""The abort response; distinct from every regular response."""

NO_RESPONSE = _Sentinel("NO_RESPONSE")
"""Response of an empty operation sequence."""

ABSENT = _Sentinel("ABSENT")
"""Response of ``get`` on a key that is not stored."""


class Status:
    SUCCESS = "success"
    ABORT = "abort"
    ALL = (SUCCESS, ABORT)


# --------------------------------------------------------------------------
# operations


def _field(data: bytes) -> bytes:
    return len(data).to_bytes(4, "big") + data


def _int_bytes(x: int) -> bytes:
    return x.to_bytes(max(1, (x.bit_length() + 7) // 8), "big")


class Operation:
    """Base class of all operations. Subclasses are frozen dataclasses."""

    TAG: int

    def encode(self) -> bytes:
        raise NotImplementedError


@dataclass(frozen=True)
class Add(Operation):
    x: int
    TAG = 0x01

    def __post_init__(self) -> None:
        if not isinstance(self.x, int) or self.x < 0:
            raise ValueError(f"add operand must be a non-negative int, got {self.x!r}")

    def encode(self) -> bytes:
        return bytes([self.TAG]) + _field(_int_bytes(self.x))

    def __str__(self) -> str:
        return f"add({self.x})"


@dataclass(frozen=True)
class Dec(Operation):
    x: int
    TAG = 0x02

    def __post_init__(self) -> None:
        if not isinstance(self.x, int) or self.x < 0:
            raise ValueError(f"dec operand must be a non-negative int, got {self.x!r}")

    def encode(self) -> bytes:
        return bytes([self.TAG]) + _field(_int_bytes(self.x))

    def __str__(self) -> str:
        return f"dec({self.x})"


@dataclass(frozen=True)
class Get(Operation):
    key: bytes
    TAG = 0x03

    def encode(self) -> bytes:
        return bytes([self.TAG]) + _field(self.key)

    def __str__(self) -> str:
        return f"get({self.key.decode('utf-8', 'backslashreplace')})"


@dataclass(frozen=True)
class Put(Operation):
    key: bytes
    value: bytes
    TAG = 0x04

    def encode(self) -> bytes:
        return bytes([self.TAG]) + _field(self.key) + _field(self.value)

    def __str__(self) -> str:
        k = self.key.decode("utf-8", "backslashreplace")
        v = self.value.decode("utf-8", "backslashreplace")
        return f"put({k},{v})"


class DecodeError(ValueError):
    pass


class _Reader:
    def __init__(self, data: bytes) -> None:
        self.data = data
        self.pos = 0

    def take(self, n: int) -> bytes:
        if n < 0 or self.pos + n > len(self.data):
            raise DecodeError("truncated input")
        out = self.data[self.pos : self.pos + n]
        self.pos += n
        return out

    def field(self) -> bytes:
        return self.take(int.from_bytes(self.take(4), "big"))

    def done(self) -> None:
        if self.pos != len(self.data):
            raise DecodeError("trailing bytes")


def _canonical_int(raw: bytes) -> int:
    if not raw or (len(raw) > 1 and raw[0] == 0):
        raise DecodeError("non-canonical integer")
    return int.from_bytes(raw, "big")


def decode_operation(data: bytes) -> Operation:
    r = _Reader(data)
    tag = r.take(1)[0]
    if tag == Add.TAG:
        op: Operation = Add(_canonical_int(r.field()))
    elif tag == Dec.TAG:
        op = Dec(_canonical_int(r.field()))
    elif tag == Get.TAG:
        op = Get(r.field())
    elif tag == Put.TAG:
        key = r.field()
        op = Put(key, r.field())
    else:
        raise DecodeError(f"unknown operation tag {tag:#x}")
    r.done()
    return op


# --------------------------------------------------------------------------
# responses

def encode_response(r: Any) -> bytes:
    if r is BOTTOM:
        return b"\x00"
    if isinstance(r, bool):
        return b"\x01" + (b"\x01" if r else b"\x00")
    if isinstance(r, bytes):
        return b"\x02" + _field(r)
    if r is ABSENT:
        return b"\x03"
    if r is NO_RESPONSE:
        return b"\x04"
    raise TypeError(f"cannot encode response {r!r}")


def decode_response(data: bytes) -> Any:
    rd = _Reader(data)
    tag = rd.take(1)[0]
    if tag == 0x00:
        out: Any = BOTTOM
    elif tag == 0x01:
        b = rd.take(1)[0]
        if b > 1:
            raise DecodeError("bad boolean")
        out = bool(b)
    elif tag == 0x02:
        out = rd.field()
    elif tag == 0x03:
        out = ABSENT
    elif tag == 0x04:
        out = NO_RESPONSE
    else:
        raise DecodeError(f"unknown response tag {tag:#x}")
    rd.done()
    return out


def format_response(r: Any) -> str:
    if r is BOTTOM:
        return "⊥"
    if isinstance(r, bytes):
        return r.decode("utf-8", "backslashreplace")
    return str(r).lower() if isinstance(r, bool) else repr(r)


# --------------------------------------------------------------------------
# functionalities


class Functionality(ABC):
    """A deterministic sequential specification."""

    name: str

    @abstractmethod
    def initial_state(self) -> Any: ...

    @abstractmethod
    def apply(self, state: Any, op: Operation) -> tuple[Any, Any]: ...

    def fast_commute(self, state: Any, rho1: Sequence[Operation],
                     rho2: Sequence[Operation]) -> bool | None:
        """Sound but possibly conservative commutativity test; ``None`` if absent."""
        return None

    def commute(self, state: Any, rho1: Sequence[Operation],
                rho2: Sequence[Operation]) -> bool:
        fast = self.fast_commute(state, rho1, rho2)
        if fast is not None:
            return fast
        return commute_oracle(self, state, rho1, rho2)


class Counter(Functionality):
    """Counter restricted to non-negative values.

    ``dec(x)`` subtracts and returns true when ``x <= s``; otherwise it leaves
    the state alone and returns false.
    """

    name = "counter"

    def __init__(self, initial: int = 0) -> None:
        if initial < 0:
            raise ValueError("counter starts non-negative")
        self.initial = initial

    def initial_state(self) -> int:
        return self.initial

    def apply(self, state: int, op: Operation) -> tuple[int, bool]:
        if isinstance(op, Add):
            return state + op.x, True
        if isinstance(op, Dec):
            if op.x <= state:
                return state - op.x, True
            return state, False
        raise TypeError(f"counter does not support {op!r}")

    def fast_commute(self, state, rho1, rho2):
        # Declares commutation only when one side is empty or every dec
        # succeeds in every interleaving: then all responses are true and the
        # final state is the plain sum. By induction over the interleaving,
        # it suffices that each dec fits at its own prefix plus the lowest
        # prefix sum of the other side. A dec that fails everywhere still
        # counts as a conflict, so this is conservative.
        if not rho1 or not rho2:
            return True

        def net(rho: Sequence[Operation]) -> list[int]:
            return list(itertools.accumulate(
                (op.x if isinstance(op, Add) else -op.x for op in rho), initial=0))

        for mine, other in ((rho1, rho2), (rho2, rho1)):
            own, low = net(mine), min(net(other))
            for k, op in enumerate(mine):
                if isinstance(op, Dec) and state + own[k] + low < op.x:
                    return False
        return True


@dataclass(frozen=True)
class KVState:
    """Immutable key-value map; ``items`` is sorted by key."""

    items: tuple[tuple[bytes, bytes], ...] = ()

    @classmethod
    def from_dict(cls, d: dict[bytes, bytes]) -> "KVState":
        return cls(tuple(sorted(d.items())))

    def as_dict(self) -> dict[bytes, bytes]:
        return dict(self.items)

    def get(self, key: bytes) -> bytes | None:
        for k, v in self.items:
            if k == key:
                return v
        return None

    def __len__(self) -> int:
        return len(self.items)


def read_write_keys(op: Operation) -> tuple[frozenset[bytes], frozenset[bytes]]:
    if isinstance(op, Get):
        return frozenset([op.key]), frozenset()
    if isinstance(op, Put):
        return frozenset(), frozenset([op.key])
    raise TypeError(f"not a key-value operation: {op!r}")


def key_sets(ops: Sequence[Operation]) -> tuple[frozenset[bytes], frozenset[bytes]]:
    reads: set[bytes] = set()
    writes: set[bytes] = set()
    for op in ops:
        r, w = read_write_keys(op)
        reads |= r
        writes |= w
    return frozenset(reads), frozenset(writes)


def kv_keysets_commute(rho1: Sequence[Operation], rho2: Sequence[Operation]) -> bool:
    """Conservative key-set test: no sequence writes a key the other touches."""
    r1, w1 = key_sets(rho1)
    r2, w2 = key_sets(rho2)
    return not (w1 & (r2 | w2)) and not (w2 & (r1 | w1))


class KVStore(Functionality):
    name = "kv"

    def __init__(self, initial: dict[bytes, bytes] | None = None) -> None:
        self.initial = KVState.from_dict(initial or {})

    def initial_state(self) -> KVState:
        return self.initial

    def apply(self, state: KVState, op: Operation) -> tuple[KVState, Any]:
        if isinstance(op, Get):
            v = state.get(op.key)
            return state, ABSENT if v is None else v
        if isinstance(op, Put):
            d = state.as_dict()
            d[op.key] = op.value
            return KVState.from_dict(d), True
        raise TypeError(f"kv store does not support {op!r}")

    def fast_commute(self, state, rho1, rho2):
        return kv_keysets_commute(rho1, rho2)


FUNCTIONALITIES: dict[str, type[Functionality]] = {"counter": Counter, "kv": KVStore}


def make_functionality(name: str) -> Functionality:
    try:
        return FUNCTIONALITIES[name]()
    except KeyError:
        raise ValueError(f"unknown workload {name!r}") from None


# --------------------------------------------------------------------------
# sequence execution and commutativity


def apply_op(f: Functionality, state: Any, op: Operation) -> tuple[Any, Any]:
    return f.apply(state, op)


def execute(f: Functionality, state: Any, ops: Sequence[Operation]) -> tuple[Any, list[Any]]:
    """Fold ``apply`` over ``ops``; return the final state and every response."""
    responses = []
    for op in ops:
        state, r = f.apply(state, op)
        responses.append(r)
    return state, responses


def apply_seq(f: Functionality, state: Any, ops: Sequence[Operation]) -> tuple[Any, Any]:
    state, responses = execute(f, state, ops)
    return state, responses[-1] if responses else NO_RESPONSE


def interleavings(n1: int, n2: int) -> Iterator[tuple[int, ...]]:
    """Yield every order-preserving merge as a tuple of 0/1 source markers."""
    for positions in itertools.combinations(range(n1 + n2), n1):
        marks = [1] * (n1 + n2)
        for p in positions:
            marks[p] = 0
        yield tuple(marks)


def commute_oracle(f: Functionality, state: Any, rho1: Sequence[Operation],
                   rho2: Sequence[Operation]) -> bool:
    """Brute force over all C(|rho1|+|rho2|, |rho1|) interleavings."""
    if len(rho1) + len(rho2) > MAX_ORACLE_LENGTH:
        raise ValueError(
            f"commute oracle limited to combined length {MAX_ORACLE_LENGTH}, "
            f"got {len(rho1) + len(rho2)}")
    reference = None
    for marks in interleavings(len(rho1), len(rho2)):
        s = state
        idx = [0, 0]
        out: list[list[Any]] = [[], []]
        for m in marks:
            op = (rho1, rho2)[m][idx[m]]
            idx[m] += 1
            s, r = f.apply(s, op)
            out[m].append(r)
        result = (s, out[0], out[1])
        if reference is None:
            reference = result
        elif result != reference:
            return False
    return True
