"""Linearizability and fork-linearizability of small histories.

Both searches are exhaustive. Complete operations must be placed; incomplete
ones may be placed (with the effect of a successful execution) or left out.
Against the abortable functionality an operation whose response is ``BOTTOM``
is placed as a no-op.

The white-box half rebuilds the per-client views directly from protocol
events of a simulator trace and checks them, together with two trace-level
properties: promised-view equality at every confirmation, and that no client
confirms operations against real-time order.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Iterable, Sequence

from .functionality import ABSENT, BOTTOM, Functionality, decode_operation, make_functionality
from .simnet import History, OpRecord, Trace

MAX_COMPLETE_OPS = 10

OpId = tuple[int, int]


class CheckerBoundError(ValueError):
    pass


@dataclass
class Verdict:
    """``witness`` is a single order (lin) or a per-client view map (forklin)."""

    ok: bool
    witness: Any = None
    reason: str = ""

    def __bool__(self) -> bool:
        return self.ok


def same_response(a: Any, b: Any) -> bool:
    if a is ABSENT or b is ABSENT or a is BOTTOM or b is BOTTOM:
        return a is b
    return type(a) is type(b) and a == b


def _step(f: Functionality, state: Any, o: OpRecord, abortable: bool) -> tuple[bool, Any]:
    """Place ``o`` at ``state``; return (allowed, next state)."""
    if not o.complete:
        return True, f.apply(state, o.op)[0]
    if abortable and o.response is BOTTOM:
        return True, state
    s2, r = f.apply(state, o.op)
    return same_response(r, o.response), s2


def _check_bound(h: History) -> None:
    n = len(h.complete())
    if n > MAX_COMPLETE_OPS:
        raise CheckerBoundError(f"{n} complete operations exceed the bound of {MAX_COMPLETE_OPS}")


def check_linearizable(h: History, f: Functionality, abortable: bool = True) -> Verdict:
    _check_bound(h)
    ops = h.ops
    n = len(ops)
    preds = [sum(1 << j for j, p in enumerate(ops) if p.precedes(o)) for o in ops]
    required = sum(1 << k for k, o in enumerate(ops) if o.complete)
    failed: set[tuple[int, Any]] = set()
    order: list[int] = []

    def dfs(mask: int, state: Any) -> bool:
        if mask & required == required:
            return True
        if (mask, state) in failed:
            return False
        for k in range(n):
            if mask >> k & 1 or preds[k] & ~mask:
                continue
            ok, s2 = _step(f, state, ops[k], abortable)
            if not ok:
                continue
            order.append(k)
            if dfs(mask | 1 << k, s2):
                return True
            order.pop()
        failed.add((mask, state))
        return False

    if dfs(0, f.initial_state()):
        return Verdict(True, [ops[k].id for k in order])
    return Verdict(False, None, "no real-time-respecting sequential order exists (exhaustive)")


# --------------------------------------------------------------------------
# fork-linearizability


@dataclass
class _Branch:
    prefix: tuple[int, ...]
    state: Any
    group: frozenset[int]
    forbidden: frozenset[int]


def check_fork_linearizable(h: History, f: Functionality, abortable: bool = True) -> Verdict:
    """Search for per-client views forming a tree of shared prefixes.

    Views that agree on a common operation agree on everything before it, so
    the views of all clients form a tree in which every operation labels at
    most one node, and each client's view is a path from the root. The search
    grows the tree one branch at a time; the clients following a branch may
    split off into siblings at any node.
    """
    _check_bound(h)
    ops = h.ops
    n = len(ops)
    owned: dict[int, frozenset[int]] = {
        i: frozenset(k for k, o in enumerate(ops) if o.client == i and o.complete)
        for i in h.clients}
    preds = [frozenset(j for j, p in enumerate(ops) if p.precedes(o)) for o in ops]
    views: dict[int, tuple[int, ...]] = {}

    def settle(b: _Branch) -> _Branch | None:
        """Drop finished clients; None if some remaining client is unsatisfiable."""
        placed = set(b.prefix)
        keep = []
        for i in b.group:
            if owned[i] <= placed:
                views[i] = b.prefix
            elif owned[i] & b.forbidden:
                return None
            else:
                keep.append(i)
        return _Branch(b.prefix, b.state, frozenset(keep), b.forbidden)

    def solve(open_: list[_Branch], used: frozenset[int]) -> bool:
        if not open_:
            return True
        b = settle(open_[0])
        if b is None:
            return False
        rest = open_[1:]
        if not b.group:
            return solve(rest, used)
        need = frozenset().union(*(owned[i] for i in b.group)) - set(b.prefix)
        if need & used:
            return False
        for k in range(n):
            if k in used or k in b.forbidden:
                continue
            o = ops[k]
            if o.complete and o.client not in b.group:
                continue
            ok, s2 = _step(f, b.state, o, abortable)
            if not ok:
                continue
            missing = preds[k] - set(b.prefix)
            for sub in _subsets(b.group, o.client if o.complete else None):
                if any(owned[i] & missing for i in sub):
                    continue
                child = _Branch(b.prefix + (k,), s2, sub, b.forbidden | missing)
                stay = b.group - sub
                nxt = [child] + ([_Branch(b.prefix, b.state, stay, b.forbidden)] if stay else [])
                if solve(nxt + rest, used | {k}):
                    return True
        return False

    clients = frozenset(i for i in h.clients if owned[i])
    for i in h.clients:
        views[i] = ()
    root = _Branch((), f.initial_state(), clients, frozenset())
    if solve([root], frozenset()):
        return Verdict(True, {i: [ops[k].id for k in v] for i, v in sorted(views.items())})
    return Verdict(False, None, "no family of fork-consistent views exists (exhaustive)")


def _subsets(group: frozenset[int], must: int | None) -> Iterable[frozenset[int]]:
    items = sorted(group)
    # larger groups first: sharing a branch is the common case
    masks = sorted(range(1, 1 << len(items)), key=lambda m: -bin(m).count("1"))
    for m in masks:
        sub = frozenset(x for b, x in enumerate(items) if m >> b & 1)
        if must is None or must in sub:
            yield sub


# --------------------------------------------------------------------------
# view conditions


def verify_view_conditions(views: dict[int, Sequence[OpId]], h: History,
                           f: Functionality, abortable: bool = True) -> Verdict:
    """Check the three fork-linearizability conditions for explicit views."""
    by_id = h.by_id()
    for i, view in views.items():
        if len(set(view)) != len(view):
            return Verdict(False, None, f"view of C{i} repeats an operation")
        unknown = [x for x in view if x not in by_id]
        if unknown:
            return Verdict(False, None, f"view of C{i} contains unknown operation {unknown[0]}")
        mine = {o.id for o in h.by_client(i) if o.complete}
        if not mine <= set(view):
            missing = sorted(mine - set(view))[0]
            return Verdict(False, None, f"view of C{i} omits its own operation {missing}")
        state = f.initial_state()
        for x in view:
            ok, state = _step(f, state, by_id[x], abortable)
            if not ok:
                return Verdict(False, None,
                               f"view of C{i} violates the sequential specification at {x}")
        pos = {x: n for n, x in enumerate(view)}
        for a in view:
            for b in view:
                if by_id[a].precedes(by_id[b]) and pos[a] > pos[b]:
                    return Verdict(False, None, f"view of C{i} reverses real-time order {a} < {b}")
    for i, vi in views.items():
        for j, vj in views.items():
            if j <= i:
                continue
            pj = {x: n for n, x in enumerate(vj)}
            for n, x in enumerate(vi):
                if x in pj and list(vi[: n + 1]) != list(vj[: pj[x] + 1]):
                    return Verdict(False, None,
                                   f"views of C{i} and C{j} differ before common operation {x}")
    return Verdict(True, {i: list(v) for i, v in views.items()})


# --------------------------------------------------------------------------
# white-box views from simulator traces


@dataclass
class TraceFacts:
    """Protocol events of a trace indexed for view construction."""

    history: History
    # (committer, position) -> operation id
    committed: dict[tuple[int, int], OpId] = field(default_factory=dict)
    commit_events: dict[OpId, dict] = field(default_factory=dict)
    # client -> its confirmations in order, as (position, committer)
    confirms: dict[int, list[tuple[int, int]]] = field(default_factory=dict)
    confirm_index: dict[tuple[int, int], int] = field(default_factory=dict)
    clients: list[int] = field(default_factory=list)

    @classmethod
    def from_trace(cls, trace: Trace) -> "TraceFacts":
        facts = cls(trace.history(), clients=trace.scenario.client_ids)
        for e in trace.events:
            if e["kind"] == "commit":
                oid = (e["actor"], e["k"])
                facts.committed[(e["actor"], e["l"])] = oid
                facts.commit_events[oid] = e
            elif e["kind"] == "confirm":
                facts.confirms.setdefault(e["actor"], []).append((e["q"], e["j"]))
                facts.confirm_index[(e["actor"], e["q"])] = e["index"]
        return facts

    def op_at(self, committer: int, q: int) -> OpId:
        oid = self.committed.get((committer, q))
        if oid is None:
            raise ValueError(f"confirmation of position {q} by C{committer} without a commit")
        return oid

    def confirmed_prefix(self, k: int, q: int) -> list[OpId]:
        seq = self.confirms.get(k, [])
        return [self.op_at(j, p) for p, j in seq if p <= q]

    def resolve(self, j: int, p: int, op_hex: str) -> OpId:
        """Operation id of ``C_j``'s entry announced at position ``p``."""
        op = decode_operation(bytes.fromhex(op_hex))
        oid = self.committed.get((j, p))
        if oid is None:
            # never committed: C_j's single incomplete operation
            cands = [o.id for o in self.history.by_client(j) if not o.complete and o.op == op]
            if len(cands) != 1:
                raise ValueError(f"cannot resolve C{j}'s entry at position {p}")
            return cands[0]
        if self.history.by_id()[oid].op != op:
            raise ValueError(f"entry at position {p} differs from C{j}'s commit there")
        return oid

    def promised_view(self, oid: OpId) -> list[OpId]:
        """Confirmed prefix of the committer when it executed ``oid``, then the reply window."""
        e = self.commit_events[oid]
        base = e["base"]
        view = self.confirmed_prefix(oid[0], base)
        view += [self.resolve(j, base + 1 + n, op) for n, (j, op) in enumerate(e["window"])]
        return view


def build_views_whitebox(trace: Trace, literal: bool = False) -> dict[int, list[OpId]]:
    """Per-client views ``alpha + beta``.

    For client ``i``, let ``o`` be its committed operation with the highest
    position that some client ``k`` confirmed; ``alpha`` is what ``k``
    confirmed up to ``o``.

    With ``literal=True``, ``beta`` is only ``i``'s own later commits. That
    breaks down when ``i`` executed later operations against state that
    ``alpha`` does not contain (other clients' operations that ``i`` confirmed
    or saw pending after ``o``). By default ``beta`` is instead the rest of
    the promised view of ``i``'s last committed operation, which contains
    ``alpha`` as a prefix and every later operation of ``i``.
    """
    facts = TraceFacts.from_trace(trace)
    views: dict[int, list[OpId]] = {}
    for i in facts.clients:
        mine = sorted((e["l"], oid) for oid, e in facts.commit_events.items() if oid[0] == i)
        best: tuple[int, int] | None = None  # (position, confirmer)
        for k, seq in facts.confirms.items():
            for q, j in seq:
                if j == i and (best is None or q > best[0]):
                    best = (q, k)
        alpha = [] if best is None else facts.confirmed_prefix(best[1], best[0])
        cut = -1 if best is None else best[0]
        if literal or not mine:
            beta = [oid for l, oid in mine if l > cut]
        else:
            full = facts.promised_view(mine[-1][1])
            if full[: len(alpha)] != alpha:
                raise ValueError(f"confirmed prefix of C{i} is not a prefix of its promised view")
            beta = full[len(alpha):]
        views[i] = alpha + beta
    return views


def check_whitebox(trace: Trace, literal: bool = False) -> Verdict:
    f = make_functionality(trace.scenario.workload)
    try:
        views = build_views_whitebox(trace, literal)
    except ValueError as e:
        return Verdict(False, None, str(e))
    return verify_view_conditions(views, trace.history(), f)


def check_promised_views(trace: Trace) -> Verdict:
    """Every confirmation of ``o`` follows exactly the order promised to o's committer."""
    facts = TraceFacts.from_trace(trace)
    try:
        for k, seq in facts.confirms.items():
            for q, j in seq:
                oid = facts.op_at(j, q)
                if facts.confirmed_prefix(k, q) != facts.promised_view(oid):
                    return Verdict(False, None, f"C{k} confirmed position {q} after a "
                                                f"prefix other than the one promised to C{j}")
    except ValueError as e:
        return Verdict(False, None, str(e))
    return Verdict(True)


def check_confirm_order(trace: Trace) -> Verdict:
    """No client confirms o1 before o2 when o2 precedes o1 in real time."""
    facts = TraceFacts.from_trace(trace)
    by_id = facts.history.by_id()
    for k, seq in facts.confirms.items():
        ids = [facts.op_at(j, q) for q, j in seq]
        for a in range(len(ids)):
            for b in range(a + 1, len(ids)):
                if by_id[ids[b]].precedes(by_id[ids[a]]):
                    return Verdict(False, None,
                                   f"C{k} confirmed {ids[a]} before {ids[b]} against real time")
    return Verdict(True)
