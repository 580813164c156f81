"""Deterministic discrete-event simulation of clients, server and FIFO channels.

A run is a pure function of its ``Scenario``. Each step the scheduler picks,
seeded-pseudorandomly, among the enabled actions: delivering the head of a
nonempty channel, or letting an idle client issue its next scripted
operation. An action left waiting for ``FAIRNESS_BOUND`` consecutive steps is
picked ahead of the random choice, so every queued message is eventually
delivered.

Node ``0`` is the server; clients are ``1..n``.
"""

from __future__ import annotations

import configparser
import json
import random
from collections import deque
from dataclasses import asdict, dataclass, field
from typing import Any, Iterable, Iterator

from . import adversary
from .authstore import AuthClient, AuthServer
from .client import Client, Completed, Confirmed, Halted
from .crypto import make_crypto
from .functionality import (
    FUNCTIONALITIES,
    Add,
    Dec,
    Get,
    Operation,
    Put,
    decode_operation,
    decode_response,
    encode_response,
    format_response,
    make_functionality,
)
from .server import Server
from .wire import (
    BroadcastMessage,
    CommitMessage,
    InvokeMessage,
    Message,
    ReplyMessage,
    decode_message,
)

SERVER = 0
FAIRNESS_BOUND = 64
KV_KEYS = (b"a", b"b", b"c")


class ScenarioError(ValueError):
    """Invalid scenario, or a run that exceeded its event budget."""


class ReplayMismatch(RuntimeError):
    pass


@dataclass
class Scenario:
    """Everything a run depends on.

    ``scripts`` (client -> operations) overrides the generated workload.
    ``stall`` freezes client ``i`` right after it sends its ``k``-th invoke.
    ``sequential`` holds every invocation until the network is quiescent.
    """

    clients: int = 2
    workload: str = "counter"
    ops: int = 3
    scripts: dict[int, list[Operation]] | None = None
    seed: int = 0
    adversary: str = "none"
    target: int = 1
    partitions: list[list[int]] | None = None
    tamper: str = "operation"
    fuzz_rate: float = 0.3
    crypto: str = "ideal"
    gc: bool = False
    authstore: bool = False
    sequential: bool = False
    stall: dict[int, int] = field(default_factory=dict)
    max_events: int = 200_000

    def validate(self) -> None:
        if self.clients < 1:
            raise ScenarioError("need at least one client")
        if self.workload not in FUNCTIONALITIES:
            raise ScenarioError(f"unknown workload {self.workload!r}")
        if self.authstore and self.workload != "kv":
            raise ScenarioError("the authenticated store runs the kv workload")
        if self.ops < 0:
            raise ScenarioError("ops must be non-negative")
        if self.crypto not in ("ideal", "sha256"):
            raise ScenarioError(f"unknown crypto backend {self.crypto!r}")
        if self.adversary not in adversary.KINDS:
            raise ScenarioError(f"unknown adversary {self.adversary!r}")
        ids = set(self.client_ids)
        if self.scripts is not None and not set(self.scripts) <= ids:
            raise ScenarioError("script for a nonexistent client")
        if not set(self.stall) <= ids:
            raise ScenarioError("stall for a nonexistent client")
        if self.partitions is not None:
            flat = [i for g in self.partitions for i in g]
            if sorted(flat) != sorted(ids) or any(not g for g in self.partitions):
                raise ScenarioError("partitions must be disjoint, nonempty and cover all clients")

    @property
    def client_ids(self) -> list[int]:
        return list(range(1, self.clients + 1))

    def workload_scripts(self) -> dict[int, list[Operation]]:
        if self.scripts is not None:
            return {i: list(self.scripts.get(i, [])) for i in self.client_ids}
        return generate_workload(self.workload, self.client_ids, self.ops, self.seed)

    def to_dict(self) -> dict[str, Any]:
        d = asdict(self)
        if self.scripts is not None:
            d["scripts"] = {str(i): [o.encode().hex() for o in ops]
                            for i, ops in sorted(self.scripts.items())}
        d["stall"] = {str(i): k for i, k in sorted(self.stall.items())}
        return d

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "Scenario":
        d = dict(d)
        if d.get("scripts") is not None:
            d["scripts"] = {int(i): [decode_operation(bytes.fromhex(x)) for x in ops]
                            for i, ops in d["scripts"].items()}
        d["stall"] = {int(i): int(k) for i, k in (d.get("stall") or {}).items()}
        known = cls.__dataclass_fields__
        unknown = set(d) - set(known)
        if unknown:
            raise ScenarioError(f"unknown scenario keys: {', '.join(sorted(unknown))}")
        return cls(**d)

    @classmethod
    def from_config(cls, text: str) -> "Scenario":
        """Parse a ``[scenario]`` section of key = value lines."""
        cp = configparser.ConfigParser()
        cp.read_string(text)
        if not cp.has_section("scenario"):
            raise ScenarioError("config needs a [scenario] section")
        sec = cp["scenario"]
        kw: dict[str, Any] = {}
        try:
            for key in ("clients", "ops", "seed", "target", "max_events"):
                if key in sec:
                    kw[key] = sec.getint(key)
            for key in ("workload", "adversary", "tamper", "crypto"):
                if key in sec:
                    kw[key] = sec[key].strip()
            for key in ("gc", "authstore", "sequential"):
                if key in sec:
                    kw[key] = sec.getboolean(key)
            if "fuzz_rate" in sec:
                kw["fuzz_rate"] = sec.getfloat("fuzz_rate")
            if "partitions" in sec:
                kw["partitions"] = parse_partitions(sec["partitions"])
            if "stall" in sec:
                kw["stall"] = {int(a): int(b) for a, b in
                               (p.split(":") for p in sec["stall"].split(",") if p.strip())}
            for key in sec:
                if key.startswith("script."):
                    kw.setdefault("scripts", {})[int(key[7:])] = parse_script(sec[key])
        except ValueError as e:
            raise ScenarioError(str(e)) from None
        unknown = [k for k in sec if not k.startswith("script.")
                   and k not in cls.__dataclass_fields__]
        if unknown:
            raise ScenarioError(f"unknown scenario keys: {', '.join(unknown)}")
        return cls(**kw)


def parse_partitions(text: str) -> list[list[int]]:
    """``"1,2|3"`` -> ``[[1, 2], [3]]``."""
    return [[int(x) for x in g.split(",") if x.strip()] for g in text.split("|")]


def parse_operation(text: str) -> Operation:
    """Parse ``add(3)``, ``dec(1)``, ``get(a)`` or ``put(a,v)``."""
    text = text.strip()
    name, _, rest = text.partition("(")
    if not rest.endswith(")"):
        raise ValueError(f"bad operation {text!r}")
    args = [a.strip() for a in rest[:-1].split(",")] if rest[:-1].strip() else []
    if name == "add" and len(args) == 1:
        return Add(int(args[0]))
    if name == "dec" and len(args) == 1:
        return Dec(int(args[0]))
    if name == "get" and len(args) == 1:
        return Get(args[0].encode())
    if name == "put" and len(args) == 2:
        return Put(args[0].encode(), args[1].encode())
    raise ValueError(f"bad operation {text!r}")


def parse_script(text: str) -> list[Operation]:
    ops, depth, cur = [], 0, ""
    for ch in text:
        if ch == "(":
            depth += 1
        elif ch == ")":
            depth -= 1
        if ch in ";\n " and depth == 0:
            if cur.strip():
                ops.append(parse_operation(cur))
            cur = ""
        else:
            cur += ch
    if cur.strip():
        ops.append(parse_operation(cur))
    return ops


def generate_workload(workload: str, clients: Iterable[int], ops: int,
                      seed: int) -> dict[int, list[Operation]]:
    rng = random.Random(f"workload:{workload}:{seed}")
    out: dict[int, list[Operation]] = {}
    for i in clients:
        script: list[Operation] = []
        for _ in range(ops):
            if workload == "counter":
                cls = Add if rng.random() < 0.5 else Dec
                script.append(cls(rng.randint(1, 4)))
            else:
                key = rng.choice(KV_KEYS)
                if rng.random() < 0.5:
                    script.append(Get(key))
                else:
                    script.append(Put(key, str(rng.randint(0, 9)).encode()))
        out[i] = script
    return out


# --------------------------------------------------------------------------
# traces


@dataclass
class Trace:
    scenario: Scenario
    events: list[dict[str, Any]]

    def to_jsonl(self) -> str:
        lines = [_dumps({"kind": "scenario", "scenario": self.scenario.to_dict()})]
        lines.extend(_dumps(e) for e in self.events)
        return "\n".join(lines) + "\n"

    @classmethod
    def from_jsonl(cls, text: str) -> "Trace":
        rows = [json.loads(line) for line in text.splitlines() if line.strip()]
        if not rows or rows[0].get("kind") != "scenario":
            raise ScenarioError("trace must start with a scenario line")
        return cls(Scenario.from_dict(rows[0]["scenario"]), rows[1:])

    def write(self, path: str) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(self.to_jsonl())

    @classmethod
    def read(cls, path: str) -> "Trace":
        with open(path, encoding="utf-8") as fh:
            return cls.from_jsonl(fh.read())

    def of_kind(self, kind: str) -> list[dict[str, Any]]:
        return [e for e in self.events if e["kind"] == kind]

    def halts(self) -> dict[int, str]:
        return {e["actor"]: e["reason"] for e in self.of_kind("halt")}

    def final(self) -> dict[str, Any]:
        return self.of_kind("end")[-1]

    def history(self) -> "History":
        return History.from_trace(self)


def _dumps(obj: Any) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), ensure_ascii=False)


@dataclass(frozen=True)
class OpRecord:
    """One operation of a history; ``responded`` is None while incomplete."""

    client: int
    k: int
    op: Operation
    invoked: int
    responded: int | None = None
    response: Any = None

    @property
    def id(self) -> tuple[int, int]:
        return (self.client, self.k)

    @property
    def complete(self) -> bool:
        return self.responded is not None

    def precedes(self, other: "OpRecord") -> bool:
        return self.responded is not None and self.responded < other.invoked

    def __str__(self) -> str:
        r = format_response(self.response) if self.complete else "?"
        return f"C{self.client}.{self.k}:{self.op}->{r}"


@dataclass
class History:
    ops: list[OpRecord]

    @classmethod
    def from_trace(cls, trace: Trace) -> "History":
        pending: dict[int, OpRecord] = {}
        done: list[OpRecord] = []
        for e in trace.events:
            if e["kind"] == "invocation":
                i = e["actor"]
                if i in pending:
                    raise ScenarioError(f"client {i} invoked twice without a response")
                pending[i] = OpRecord(i, e["k"], decode_operation(bytes.fromhex(e["op"])),
                                      e["index"])
            elif e["kind"] == "output":
                rec = pending.pop(e["actor"], None)
                if rec is None or rec.k != e["k"]:
                    raise ScenarioError(f"response without invocation at event {e['index']}")
                done.append(OpRecord(rec.client, rec.k, rec.op, rec.invoked, e["index"],
                                     decode_response(bytes.fromhex(e["response"]))))
        ops = done + list(pending.values())
        ops.sort(key=lambda o: o.invoked)
        return cls(ops)

    @classmethod
    def build(cls, rows: Iterable[tuple]) -> "History":
        """Hand-built history from ``(client, op, invoked, responded, response)`` rows."""
        counts: dict[int, int] = {}
        ops = []
        for client, op, inv, resp, r in rows:
            counts[client] = counts.get(client, 0) + 1
            ops.append(OpRecord(client, counts[client], op, inv, resp, r))
        ops.sort(key=lambda o: o.invoked)
        return cls(ops)

    @property
    def clients(self) -> list[int]:
        return sorted({o.client for o in self.ops})

    def complete(self) -> list[OpRecord]:
        return [o for o in self.ops if o.complete]

    def by_client(self, i: int) -> list[OpRecord]:
        return [o for o in self.ops if o.client == i]

    def by_id(self) -> dict[tuple[int, int], OpRecord]:
        return {o.id: o for o in self.ops}

    def is_well_formed(self) -> bool:
        for i in self.clients:
            mine = sorted(self.by_client(i), key=lambda o: o.invoked)
            for a, b in zip(mine, mine[1:]):
                if a.responded is None or a.responded > b.invoked:
                    return False
        return True


# --------------------------------------------------------------------------
# the simulator


def build_server(sc: Scenario, crypto):
    def correct(group):
        if sc.authstore:
            return AuthServer(group, crypto, gc=sc.gc)
        return Server(group, gc=sc.gc)

    return adversary.make_server(
        sc.adversary, correct, sc.client_ids, target=sc.target,
        partitions=sc.partitions, tamper=sc.tamper, seed=sc.seed, rate=sc.fuzz_rate)


class Simulation:
    def __init__(self, scenario: Scenario) -> None:
        scenario.validate()
        self.sc = scenario
        self.crypto = make_crypto(scenario.crypto, scenario.seed)
        ids = scenario.client_ids
        if scenario.authstore:
            self.clients = {i: AuthClient(i, self.crypto, gc=scenario.gc) for i in ids}
        else:
            self.clients = {i: Client(i, make_functionality(scenario.workload), self.crypto,
                                      gc=scenario.gc) for i in ids}
        try:
            self.server = build_server(scenario, self.crypto)
        except ValueError as e:
            raise ScenarioError(str(e)) from None
        self.scripts = scenario.workload_scripts()
        self.next_op = {i: 0 for i in ids}
        self.frozen: set[int] = set()
        self.channels: dict[tuple[int, int], deque[Message]] = {}
        self.rng = random.Random(f"schedule:{scenario.seed}")
        self.waiting: dict[tuple, int] = {}
        self.events: list[dict[str, Any]] = []

    def record(self, actor: int, kind: str, **data: Any) -> dict[str, Any]:
        e = {"index": len(self.events), "actor": actor, "kind": kind, **data}
        self.events.append(e)
        if len(self.events) > self.sc.max_events:
            raise ScenarioError(f"event cap {self.sc.max_events} exceeded")
        return e

    def send(self, src: int, dst: int, msg: Message) -> None:
        self.record(src, "send", dst=dst, type=msg.KIND, msg=msg.encode().hex())
        self.channels.setdefault((src, dst), deque()).append(msg)

    # enabled actions, in a canonical order so the seeded choice is reproducible
    def enabled(self) -> list[tuple]:
        acts: list[tuple] = []
        for (src, dst), q in sorted(self.channels.items()):
            if q and dst not in self.frozen:
                acts.append(("deliver", src, dst))
        quiet = not any(self.channels.values())
        for i, c in sorted(self.clients.items()):
            if (c.halted is None and i not in self.frozen and c.st.u is None
                    and self.next_op[i] < len(self.scripts[i])
                    and (quiet or not self.sc.sequential)):
                acts.append(("invoke", i))
        return acts

    def choose(self, acts: list[tuple]) -> tuple:
        live = set(acts)
        self.waiting = {a: w + 1 for a, w in self.waiting.items() if a in live}
        for a in acts:
            self.waiting.setdefault(a, 1)
        oldest = max(acts, key=lambda a: self.waiting[a])
        pick = oldest if self.waiting[oldest] >= FAIRNESS_BOUND else self.rng.choice(acts)
        self.waiting.pop(pick)
        return pick

    def run(self) -> Trace:
        while True:
            acts = self.enabled()
            if not acts:
                break
            act = self.choose(acts)
            if act[0] == "invoke":
                self.invoke(act[1])
            else:
                self.deliver(act[1], act[2])
        self.record(SERVER, "end", clients={
            str(i): {
                "c": c.st.c,
                "digest": c.status_digest()[1].hex() if c.st.c in c.st.H else None,
                "halted": None if c.halted is None else str(c.halted),
                "frozen": i in self.frozen,
                "pending": None if c.st.u is None else c.st.u.encode().hex(),
            } for i, c in sorted(self.clients.items())})
        return Trace(self.sc, self.events)

    def invoke(self, i: int) -> None:
        client = self.clients[i]
        op = self.scripts[i][self.next_op[i]]
        self.next_op[i] += 1
        k = self.next_op[i]
        self.record(i, "invocation", k=k, op=op.encode().hex(), text=str(op))
        self.send(i, SERVER, client.begin_operation(op))
        if self.sc.stall.get(i) == k:
            self.frozen.add(i)
            self.record(i, "stall", k=k)

    def deliver(self, src: int, dst: int) -> None:
        msg = self.channels[(src, dst)].popleft()
        self.record(dst, "deliver", src=src, type=msg.KIND)
        if dst == SERVER:
            if isinstance(msg, InvokeMessage):
                out = self.server.handle_invoke(src, msg)
            elif isinstance(msg, CommitMessage):
                out = self.server.handle_commit(src, msg)
            else:
                raise ScenarioError(f"server cannot handle {msg.KIND}")
            for d, m in out:
                self.send(SERVER, d, m)
            return
        client = self.clients[dst]
        was_halted = client.halted is not None
        if isinstance(msg, ReplyMessage):
            res = client.on_reply(msg)
        elif isinstance(msg, BroadcastMessage):
            res = client.on_broadcast(msg)
        else:
            raise ScenarioError(f"client cannot handle {msg.KIND}")
        if isinstance(res, Halted):
            if not was_halted:
                self.record(dst, "halt", reason=str(res.reason))
        elif isinstance(res, Completed):
            k = self.next_op[dst]
            self.record(dst, "commit", k=k, l=res.l, z=res.status, h=res.commit.h.hex(),
                        base=res.base,
                        window=[[e.client, e.op.encode().hex()] for e in res.window])
            self.record(dst, "output", k=k, status=res.status,
                        response=encode_response(res.response).hex(),
                        text=format_response(res.response))
            self.send(dst, SERVER, res.commit)
        elif isinstance(res, Confirmed):
            self.record(dst, "confirm", q=res.q, op=res.op.encode().hex(), j=res.committer,
                        z=res.status, h=res.h.hex(),
                        g=None if res.digest is None else res.digest.hex())


def run(scenario: Scenario) -> Trace:
    return Simulation(scenario).run()


def replay(trace: Trace) -> Trace:
    """Re-run the trace's scenario and require a byte-identical trace."""
    again = run(trace.scenario)
    if again.to_jsonl() != trace.to_jsonl():
        a, b = trace.to_jsonl().splitlines(), again.to_jsonl().splitlines()
        line = next((n for n, (x, y) in enumerate(zip(a, b)) if x != y), min(len(a), len(b)))
        raise ReplayMismatch(f"replay diverges at trace line {line + 1}")
    return again


def iter_messages(trace: Trace) -> Iterator[tuple[dict[str, Any], Message]]:
    for e in trace.of_kind("send"):
        yield e, decode_message(bytes.fromhex(e["msg"]))
