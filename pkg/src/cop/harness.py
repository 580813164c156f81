"""Run scenarios, check their traces and summarize them."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Any, Callable

from .checker import (
    CheckerBoundError,
    Verdict,
    check_confirm_order,
    check_fork_linearizable,
    check_linearizable,
    check_promised_views,
    check_whitebox,
)
from .functionality import BOTTOM, decode_response, make_functionality
from .simnet import Scenario, Trace, run

CHECKS: dict[str, Callable[[Trace], Verdict]] = {
    "lin": lambda t: check_linearizable(t.history(), make_functionality(t.scenario.workload)),
    "forklin": lambda t: check_fork_linearizable(t.history(),
                                                 make_functionality(t.scenario.workload)),
    "whitebox": check_whitebox,
    "promised": check_promised_views,
    "realtime": check_confirm_order,
}
DEFAULT_CHECKS = ("forklin", "whitebox")


def run_check(trace: Trace, mode: str) -> Verdict | None:
    """Verdict for ``mode``; ``None`` when the history is over the search bound."""
    if mode not in CHECKS:
        raise ValueError(f"unknown check {mode!r}; expected one of {', '.join(CHECKS)}")
    try:
        return CHECKS[mode](trace)
    except CheckerBoundError:
        return None


def chain_divergences(trace: Trace) -> list[dict[str, Any]]:
    """Pairs of clients whose hash chains differ at a commonly confirmed index.

    This is what clients comparing their chains out of band would find.
    """
    chains: dict[int, dict[int, str]] = {}
    for e in trace.of_kind("confirm"):
        chains.setdefault(e["actor"], {})[e["q"]] = e["h"]
    out = []
    ids = sorted(chains)
    for a in ids:
        for b in ids:
            if b <= a:
                continue
            common = sorted(set(chains[a]) & set(chains[b]))
            diff = [q for q in common if chains[a][q] != chains[b][q]]
            if diff:
                out.append({"clients": [a, b], "first_index": diff[0], "common": len(common)})
    return out


@dataclass
class ClientSummary:
    completed: int = 0
    aborted: int = 0
    confirmed: int = 0
    halted: str | None = None
    digest: str | None = None


@dataclass
class RunReport:
    scenario: Scenario
    clients: dict[int, ClientSummary]
    events: int
    verdicts: dict[str, Verdict | None]
    requested: tuple[str, ...]
    divergences: list[dict[str, Any]] = field(default_factory=list)

    @classmethod
    def from_trace(cls, trace: Trace, checks: tuple[str, ...] = DEFAULT_CHECKS,
                   extra: tuple[str, ...] = ("lin",)) -> "RunReport":
        clients = {i: ClientSummary() for i in trace.scenario.client_ids}
        for e in trace.events:
            cs = clients.get(e["actor"])
            if e["kind"] == "output":
                cs.completed += 1
                if decode_response(bytes.fromhex(e["response"])) is BOTTOM:
                    cs.aborted += 1
            elif e["kind"] == "confirm":
                cs.confirmed += 1
            elif e["kind"] == "halt":
                cs.halted = e["reason"]
        for i, info in trace.final()["clients"].items():
            clients[int(i)].digest = f"{info['c']}:{info['digest']}"
        modes = tuple(dict.fromkeys(checks + extra))
        verdicts = {m: run_check(trace, m) for m in modes}
        return cls(trace.scenario, clients, len(trace.events), verdicts, checks,
                   chain_divergences(trace))

    @property
    def halts(self) -> dict[int, str]:
        return {i: c.halted for i, c in self.clients.items() if c.halted}

    @property
    def exit_code(self) -> int:
        if self.halts:
            return 1
        if any(not self.verdicts.get(m) for m in self.requested):
            return 1
        return 0

    def to_json(self) -> dict[str, Any]:
        return {
            "scenario": self.scenario.to_dict(),
            "events": self.events,
            "halts": len(self.halts),
            "clients": {str(i): vars(c) for i, c in self.clients.items()},
            "checks": {m: None if v is None else v.ok for m, v in self.verdicts.items()},
            "requested": list(self.requested),
            "digests_differ": bool(self.divergences),
            "divergences": self.divergences,
            "exit_code": self.exit_code,
        }

    def text(self) -> str:
        sc = self.scenario
        lines = [f"scenario: clients={sc.clients} workload={sc.workload} "
                 f"adversary={sc.adversary} seed={sc.seed} crypto={sc.crypto} "
                 f"authstore={'on' if sc.authstore else 'off'} gc={'on' if sc.gc else 'off'}",
                 f"events: {self.events}", f"halts: {len(self.halts)}"]
        for i, c in self.clients.items():
            state = f"halted ({c.halted})" if c.halted else "ok"
            lines.append(f"  C{i}: completed={c.completed} aborted={c.aborted} "
                         f"confirmed={c.confirmed} {state} digest={c.digest}")
        for m, v in self.verdicts.items():
            mark = "skipped (over search bound)" if v is None else str(v.ok).lower()
            why = f"  [{v.reason}]" if v is not None and v.reason else ""
            lines.append(f"check {m}={mark}{why}")
        if self.divergences:
            for d in self.divergences:
                a, b = d["clients"]
                lines.append(f"digests differ: C{a} vs C{b} from index {d['first_index']}")
        else:
            lines.append("digests differ: no")
        return "\n".join(lines)

    def render(self) -> str:
        return self.text() + "\n" + json.dumps(self.to_json(), indent=2, sort_keys=True)


def run_scenario(sc: Scenario, checks: tuple[str, ...] = DEFAULT_CHECKS) -> tuple[Trace, RunReport]:
    trace = run(sc)
    return trace, RunReport.from_trace(trace, checks)
