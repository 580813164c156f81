from __future__ import annotations

import pytest

from cop.crypto import IdealCrypto
from cop.wire import PendingEntry, encode_invoke_payload


def entry(crypto, op, j):
    """A genuinely signed pending entry for client ``j``."""
    return PendingEntry(op, j, crypto.sign(j, encode_invoke_payload(op, j)))


@pytest.fixture
def crypto():
    return IdealCrypto()


# one line per acceptance criterion, echoed in the terminal summary
ACCEPTANCE_LINES: list[str] = []


def acceptance_line(n: int, ok: bool, detail: str) -> None:
    line = f"{'PASS' if ok else 'FAIL'} criterion {n}: {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)
