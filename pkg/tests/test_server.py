from cop.functionality import Add, Status
from cop.crypto import Signature
from cop.server import Server
from cop.wire import CommitMessage, InvokeMessage


def inv(op, c=0, who=1):
    return InvokeMessage(op, c, Signature(who, b"t"))


def commit(q, z=Status.SUCCESS):
    return CommitMessage(Add(q), q, b"h", z, Signature(1, b"p"))


def test_reply_window_is_suffix_after_client_c():
    s = Server([1, 2])
    s.on_invoke(1, inv(Add(1)))
    s.on_invoke(2, inv(Add(2), who=2))
    r = s.on_invoke(1, inv(Add(3), c=1))
    assert [e.op for e in r.omega] == [Add(2), Add(3)]
    assert s.st.t == 3


def test_broadcast_in_sequence_order():
    s = Server([1, 2])
    for k in range(3):
        s.on_invoke(1, inv(Add(k)))
    assert s.on_commit(1, commit(2)) == []
    out = s.on_commit(1, commit(1))
    assert [b.q for b in out] == [1, 2]
    assert [b.q for b in s.on_commit(1, commit(3))] == [3]
    assert s.st.b == 3


def test_broadcast_fans_out_to_all_clients():
    s = Server([1, 2, 3])
    s.on_invoke(2, inv(Add(1), who=2))
    out = s.handle_commit(2, commit(1))
    assert sorted(d for d, _ in out) == [1, 2, 3]
    assert all(m.client == 2 for _, m in out)


def test_gc_keeps_entries_until_all_clients_acknowledge():
    s = Server([1, 2], gc=True)
    s.on_invoke(1, inv(Add(1)))
    s.on_commit(1, commit(1))
    assert not s.st.O
    s.on_invoke(1, inv(Add(2), c=1))
    assert 1 in s.st.I  # client 2 has not reported c >= 1
    s.on_invoke(2, inv(Add(3), c=1, who=2))
    assert 1 not in s.st.I


def test_first_invoke_and_caught_up_client_get_own_entry_only():
    s = Server([1, 2])
    assert [e.op for e in s.on_invoke(1, inv(Add(1))).omega] == [Add(1)]
    s.on_invoke(2, inv(Add(2), who=2))
    assert [e.op for e in s.on_invoke(1, inv(Add(3), c=2)).omega] == [Add(3)]


def test_duplicate_commit_for_broadcast_position_is_stored_but_not_resent():
    s = Server([1])
    s.on_invoke(1, inv(Add(1)))
    assert len(s.on_commit(1, commit(1))) == 1
    dup = commit(1, Status.ABORT)
    assert s.on_commit(1, dup) == []
    assert s.st.O[1][0] == dup and s.st.b == 1
