"""Independent reference implementations used only by the tests.

Nothing here imports the code under test except for plain data types, so a
bug in the package cannot hide behind the same bug in its checker.
"""

from __future__ import annotations

import hashlib
import itertools
from functools import lru_cache

import numpy as np

from cop.functionality import ABSENT, BOTTOM, Add, Dec, Get, Put

# --------------------------------------------------------------------------
# counter commutativity, vectorized over every pair of sequences at once


@lru_cache(maxsize=None)
def _merges(n1: int, n2: int) -> tuple[tuple[int, ...], ...]:
    out = []
    for order in set(itertools.permutations([0] * n1 + [1] * n2)):
        out.append(order)
    return tuple(sorted(out))


def counter_commute_table(states: np.ndarray, seqs1: list[tuple], seqs2: list[tuple]) -> np.ndarray:
    """Boolean array [state, i, j]: do ``seqs1[i]`` and ``seqs2[j]`` commute?

    All sequences in ``seqs1`` (and in ``seqs2``) must share one length.
    """
    n1 = len(seqs1[0])
    n2 = len(seqs2[0])

    def encode(seqs: list[tuple], n: int) -> tuple[np.ndarray, np.ndarray]:
        amount = np.array([[op.x for op in s] for s in seqs], dtype=np.int64).reshape(len(seqs), n)
        is_dec = np.array([[isinstance(op, Dec) for op in s] for s in seqs],
                          dtype=bool).reshape(len(seqs), n)
        return amount, is_dec

    a1, d1 = encode(seqs1, n1)
    a2, d2 = encode(seqs2, n2)
    shape = (len(states), len(seqs1), len(seqs2))
    ok = np.ones(shape, dtype=bool)
    reference = None
    for order in _merges(n1, n2):
        s = np.broadcast_to(states[:, None, None], shape).astype(np.int64)
        resp = []
        idx = [0, 0]
        for m in order:
            k = idx[m]
            idx[m] += 1
            if m == 0:
                amt, dec = a1[None, :, k, None], d1[None, :, k, None]
            else:
                amt, dec = a2[None, None, :, k], d2[None, None, :, k]
            fits = amt <= s
            success = ~dec | fits
            s = np.where(dec, np.where(fits, s - amt, s), s + amt)
            resp.append((m, k, np.broadcast_to(success, shape)))
        resp.sort(key=lambda t: (t[0], t[1]))
        result = [s] + [r for _, _, r in resp]
        if reference is None:
            reference = result
        else:
            for x, y in zip(reference, result):
                ok &= x == y
    return ok


def counter_sequences(max_len: int, operands: range) -> dict[int, list[tuple]]:
    ops = [Add(x) for x in operands] + [Dec(x) for x in operands]
    return {n: list(itertools.product(ops, repeat=n)) for n in range(max_len + 1)}


# --------------------------------------------------------------------------
# sequential specifications written out independently


def counter_step(s: int, op):
    if isinstance(op, Add):
        return s + op.x, True
    if op.x <= s:
        return s - op.x, True
    return s, False


def kv_step(s: frozenset, op):
    d = dict(s)
    if isinstance(op, Get):
        return s, d.get(op.key, ABSENT)
    d[op.key] = op.value
    return frozenset(d.items()), True


STEPS = {"counter": (counter_step, 0), "kv": (kv_step, frozenset())}


def _same(a, b) -> bool:
    if a is ABSENT or b is ABSENT or a is BOTTOM or b is BOTTOM:
        return a is b
    return type(a) is type(b) and a == b


def run_view(workload: str, ops) -> bool:
    """Does this sequence of OpRecords satisfy the abortable specification?"""
    step, s = STEPS[workload]
    for o in ops:
        if o.responded is not None and o.response is BOTTOM:
            continue
        s, r = step(s, o.op)
        if o.responded is not None and not _same(r, o.response):
            return False
    return True


def respects_real_time(seq) -> bool:
    return not any(b.responded is not None and b.responded < a.invoked
                   for n, a in enumerate(seq) for b in seq[n + 1:])


def brute_linearizable(history, workload: str) -> bool:
    """Try every subset of incomplete operations and every order."""
    complete = [o for o in history.ops if o.responded is not None]
    partial = [o for o in history.ops if o.responded is None]
    for r in range(len(partial) + 1):
        for extra in itertools.combinations(partial, r):
            for perm in itertools.permutations(complete + list(extra)):
                if respects_real_time(perm) and run_view(workload, perm):
                    return True
    return False


def _candidate_views(history, client):
    mine = {o.id for o in history.ops if o.client == client and o.responded is not None}
    ops = history.ops
    for r in range(len(ops) + 1):
        for perm in itertools.permutations(ops, r):
            ids = {o.id for o in perm}
            if mine <= ids:
                yield perm


def brute_fork_linearizable(history, workload: str) -> bool:
    """Enumerate a view per client and test the definition literally."""
    clients = sorted({o.client for o in history.ops})
    cands = {}
    for c in clients:
        cands[c] = [v for v in _candidate_views(history, c)
                    if respects_real_time(v) and run_view(workload, v)]
    for combo in itertools.product(*(cands[c] for c in clients)):
        good = True
        for a, b in itertools.combinations(combo, 2):
            ia = [o.id for o in a]
            ib = [o.id for o in b]
            for n, x in enumerate(ia):
                if x in ib and ia[: n + 1] != ib[: ib.index(x) + 1]:
                    good = False
                    break
            if not good:
                break
        if good:
            return True
    return False


# --------------------------------------------------------------------------
# Merkle root of a full key-value map, recomputed from scratch with SHA-256


def _lp(b: bytes) -> bytes:
    return len(b).to_bytes(4, "big") + b


def sha_node(left: bytes, right: bytes) -> bytes:
    return hashlib.sha256(_lp(b"node") + _lp(left) + _lp(right)).digest()


@lru_cache(maxsize=None)
def sha_empty(depth: int) -> bytes:
    if depth == 256:
        return hashlib.sha256(_lp(b"empty")).digest()
    e = sha_empty(depth + 1)
    return sha_node(e, e)


def sha_merkle_root(d: dict[bytes, bytes]) -> bytes:
    leaves = sorted((int.from_bytes(hashlib.sha256(k).digest(), "big"), k, v)
                    for k, v in d.items())

    def build(items, depth):
        if not items:
            return sha_empty(depth)
        if depth == 256:
            (_, k, v), = items
            return hashlib.sha256(_lp(b"leaf") + _lp(k) + _lp(v)).digest()
        bit = 255 - depth
        left = [t for t in items if not t[0] >> bit & 1]
        right = [t for t in items if t[0] >> bit & 1]
        return sha_node(build(left, depth + 1), build(right, depth + 1))

    return build(leaves, 0)


def replay_kv(ops_with_status) -> dict[bytes, bytes]:
    d: dict[bytes, bytes] = {}
    for op, z in ops_with_status:
        if z == "success" and isinstance(op, Put):
            d[op.key] = op.value
    return d
