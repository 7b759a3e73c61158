from collections import deque

import pytest

from cbcast.core import CounterPair, FrozenMap, ProtocolViolation, ConfigurationError, VectorTime, WaitRecord
from cbcast.protocol import CbcastProcess, Deliver, Install, ProcessState, Send, TakeUp, packet_kinds, sends

from conftest import msg, start


def delivered(outputs):
    return [o.msg.payload for o in outputs if isinstance(o, Deliver)]


class TestStart:
    def test_two_members(self):
        p = start(["B", "A"], "A")
        s = p.state
        assert (s.cur_view, s.v_gap) == (0, 0)
        assert s.live_set == ["A", "B"] and s.contact_set == ["A", "B"]
        assert s.vt == {"A": 0, "B": 0}
        assert s.ghost_height == s.flush_height == 0

    def test_singleton(self):
        s = start(["A"], "A").state
        assert s.contact_set == ["A"] and s.vt == {"A": 0} and list(s.mpkt_in) == ["A"]

    def test_joins_applied_in_id_order(self):
        s = start(["C", "A", "B"], "B").state
        assert [e.pid for e in s.replicated_data] == ["A", "B", "C"]

    def test_pid_outside_roster(self):
        with pytest.raises(ConfigurationError):
            start(["A", "B"], "Z")


class TestBroadcast:
    def test_fresh_group(self):
        a = start(["A", "B"], "A")
        out = a.prot_broadcast("x")
        (send,) = sends(out)
        assert send.multicast and send.targets == ("A", "B")
        m = send.packet.body
        assert m.mvt == VectorTime({"A": 1, "B": 0}) and m.mview == 0 and m.orig == "A"
        (rec,) = a.state.bcast_wait_set.values()
        assert rec.index == CounterPair(1, 0)
        assert dict(rec.iset) == {"A": CounterPair(), "B": CounterPair()}

    def test_second_stamp_runs_ahead_of_self_delivery(self):
        a = start(["A", "B"], "A")
        a.prot_broadcast("x")
        second = sends(a.prot_broadcast("y"))[0].packet.body
        assert second.mvt["A"] == 2

    def test_deferred_while_view_pending(self):
        a = start(["A", "B", "C"], "A")
        a.prot_remove("C")
        assert a.prot_broadcast("later") == []
        assert list(a.state.launch_queue) == ["later"]


class TestRun:
    def _parent_state(self, **kw):
        s = start(["A", "D"], "D").state
        for k, v in kw.items():
            setattr(s, k, v)
        return s

    def test_flush_height_takes_ghost_height(self):
        s = self._parent_state(cur_view=3, ghost_height=3, flush_height=2)
        s.ghost = {"A": 3, "D": 3}
        s.flush = {"A": 3, "D": 3}
        s.fwd_wait_set = {
            m.id: WaitRecord(m, CounterPair(0, 1), FrozenMap({"A": CounterPair()}), "fwd") for m in [msg("A", 3, A=1, D=0)]
        }
        child = CbcastProcess(state=s)
        assert child.prot_run("G") == []
        assert child.state.flush_height == 3

    def test_forward_record_index_b_zeroed(self):
        s = self._parent_state()
        m = msg("A", A=1, D=0)
        s.fwd_wait_set = {m.id: WaitRecord(m, CounterPair(2, 5), FrozenMap({"A": CounterPair()}), "fwd")}
        child = CbcastProcess(state=s)
        child.prot_run("G")
        assert child.state.fwd_wait_set[m.id].index == CounterPair(0, 5)

    def test_empty_forward_wait_set_flushes_to_self_only(self):
        child = start(["A", "D"], "D").fork()
        out = child.prot_run("G")
        assert packet_kinds(out) == ["ghost", "flush"]
        assert all(s.targets == ("G",) and s.packet.body == 1 for s in sends(out))


class TestRemove:
    def test_nothing_pending(self):
        a = start(["A", "B", "C"], "A")
        out = a.prot_remove("C")
        assert packet_kinds(out) == ["ghost", "flush"]
        assert [s.packet.body for s in sends(out)] == [1, 1]
        assert all(s.targets == ("A", "B") for s in sends(out))

    def test_forwards_in_fifo_order(self):
        a = start(["A", "B", "C"], "A")
        m1, m2 = msg("C", payload="1", A=0, B=0, C=1), msg("C", payload="2", A=0, B=0, C=2)
        a.receive_message(m1, "C")
        a.receive_message(m2, "C")
        out = a.prot_remove("C")
        assert packet_kinds(out) == ["msg", "msg"]
        assert [s.packet.body for s in sends(out)] == [m1, m2]
        assert [s.index for s in sends(out)] == [CounterPair(0, 1), CounterPair(0, 2)]

    def test_record_waiting_only_on_removed_is_dropped(self):
        a = start(["A", "C"], "A")
        a.prot_broadcast("x")
        rec = next(iter(a.state.bcast_wait_set.values()))
        a.receive_ack(rec.msg.id, "A")
        a.prot_remove("C")
        assert not a.state.bcast_wait_set

    def test_unknown_member(self):
        with pytest.raises(ProtocolViolation):
            start(["A", "B"], "A").prot_remove("Z")


class TestJoin:
    def test_iset_copied_from_parent(self):
        a = start(["A", "B"], "A")
        m = msg("A", A=1, B=0)
        a.state.bcast_wait_set = {
            m.id: WaitRecord(m, CounterPair(1, 0), FrozenMap({"B": CounterPair(1, 2)}), "bcast")
        }
        a.prot_join("J", "B")
        assert a.state.bcast_wait_set[m.id].iset["J"] == CounterPair(0, 2)

    def test_ghost_inherited(self):
        a = start(["A", "B"], "A")
        a.state.ghost["B"] = 4
        a.state.cur_view = 4
        a.state.ghost["A"] = a.state.flush["A"] = a.state.flush["B"] = 4
        a.prot_join("J", "B")
        assert a.state.ghost["J"] == a.state.flush["J"] == 4

    def test_no_records_only_donation_then_flush(self):
        out = start(["A", "B"], "A").prot_join("J", "B")
        assert packet_kinds(out) == ["don", "ghost", "flush"]
        assert sends(out)[0].targets == ("J",) and not sends(out)[0].multicast

    def test_parent_must_be_live(self):
        with pytest.raises(ProtocolViolation):
            start(["A", "B"], "A").prot_join("J", "Z")


class TestReceiveMessage:
    def test_obsolete_message_is_discarded(self):
        a = start(["A", "B"], "A")
        a.state.cur_view = 2
        out = a.receive_message(msg("B", 1, A=0, B=1), "B")
        assert packet_kinds(out) == ["ack"]
        assert a.state.mpkt_in["B"] == CounterPair(1, 0)
        assert not a.state.receive_set and not a.state.fwd_queue["B"]

    def test_first_receipt_delivers_at_once(self):
        a = start(["A", "B"], "A")
        out = a.receive_message(msg("B", A=0, B=1), "B")
        assert packet_kinds(out) == ["ack"]
        assert any(isinstance(o, TakeUp) for o in out)
        assert delivered(out) == ["x"] and a.state.vt == {"A": 0, "B": 1}

    def test_duplicate_copy(self):
        a = start(["A", "B", "C"], "A")
        m = msg("B", A=0, B=1, C=0)
        a.receive_message(m, "B")
        out = a.receive_message(m, "C")
        assert packet_kinds(out) == ["ack"] and not any(isinstance(o, TakeUp) for o in out)
        assert a.state.mpkt_in["C"] == CounterPair(0, 1)

    def test_ack_goes_to_sender_first(self):
        a = start(["A", "B"], "A")
        out = a.receive_message(msg("B", A=0, B=1), "B")
        assert isinstance(out[0], Send) and out[0].targets == ("B",)


class TestReceiveAck:
    def test_last_ack_removes_record(self):
        a = start(["A", "B"], "A")
        m = sends(a.prot_broadcast("x"))[0].packet.body
        a.receive_ack(m.id, "A")
        a.receive_ack(m.id, "B")
        assert not a.state.bcast_wait_set

    def test_partial_ack_keeps_record(self):
        a = start(["A", "B"], "A")
        m = sends(a.prot_broadcast("x"))[0].packet.body
        assert a.receive_ack(m.id, "B") == []
        assert list(a.state.bcast_wait_set[m.id].iset) == ["A"]

    def test_unknown_record_is_a_no_op(self):
        a = start(["A", "B"], "A")
        before = a.state.snapshot()
        out = a.receive_ack(msg("B", A=0, B=1).id, "B")
        assert packet_kinds(out) == [] and a.state == before


class TestGhostFlush:
    def test_ghost_assignment(self):
        a = start(["A", "B"], "A")
        a.state.ghost["B"] = 1
        assert a.receive_ghost(3, "B") == [] and a.state.ghost["B"] == 3
        assert a.receive_ghost(3, "B") == [] and a.state.ghost["B"] == 3

    def test_ghost_going_back(self):
        a = start(["A", "B"], "A")
        a.state.ghost["B"] = 3
        with pytest.raises(ProtocolViolation):
            a.receive_ghost(2, "B")

    def test_try_to_install_waits_for_every_flush(self):
        a = start(["A", "B"], "A")
        s = a.state
        s.cur_view, s.v_gap = 3, 1
        s.flush = {"A": 4, "B": 3}
        s.ghost = {"A": 4, "B": 4}
        assert a.try_to_install() == [] and s.cur_view == 3

    def test_try_to_install_single_removal(self):
        a = start(["A", "B", "C"], "A")
        s = a.state
        a.prot_remove("C")
        s.flush = {"A": 1, "B": 1}
        s.ghost = {"A": 1, "B": 1}
        out = a.try_to_install()
        (inst,) = [o for o in out if isinstance(o, Install)]
        assert (inst.view, inst.gap, inst.change) == (1, 0, ("REMOVE", "C"))
        assert s.mset == ["A", "B"] and s.vt == {"A": 0, "B": 0}
        assert s.replicated_data[-1].kind == "removal"

    def test_install_drains_launch_queue_in_new_view(self):
        a = start(["A", "B", "C"], "A")
        a.prot_remove("C")
        a.prot_broadcast("p1")
        a.prot_broadcast("p2")
        a.receive_flush(1, "A")
        out = a.receive_flush(1, "B")
        msgs = [s.packet.body for s in sends(out)]
        assert [m.payload for m in msgs] == ["p1", "p2"]
        assert all(m.mview == 1 for m in msgs)


class TestScan:
    def test_dependency_order(self):
        a = start(["A", "B"], "A")
        a.state.cur_view = 2
        m1 = msg("A", 2, "m1", A=1, B=0)
        m2 = msg("B", 2, "m2", A=1, B=1)
        a.state.receive_set = {m2.id: m2, m1.id: m1}
        out = a.scan()
        assert delivered(out) == ["m1", "m2"] and a.state.vt == {"A": 1, "B": 1}

    def test_future_view_untouched(self):
        a = start(["A", "B"], "A")
        m = msg("B", 1, A=0, B=1)
        a.state.receive_set = {m.id: m}
        assert a.scan() == [] and m.id in a.state.receive_set

    def test_gap_untouched(self):
        a = start(["A", "B"], "A")
        m = msg("B", A=0, B=2)
        a.state.receive_set = {m.id: m}
        assert a.scan() == []


class TestCheckFlush:
    def test_forward_wait_blocks_everything(self):
        a = start(["A", "B", "C"], "A")
        a.receive_message(msg("C", A=0, B=0, C=1), "C")
        a.prot_remove("C")
        assert a.check_flush() == []

    def test_heights_current(self):
        assert start(["A", "B"], "A").check_flush() == []

    def test_ghost_then_flush_same_height(self):
        a = start(["A", "B"], "A")
        a.state.v_gap = 1
        out = a.check_flush()
        assert packet_kinds(out) == ["ghost", "flush"]
        assert [s.packet.body for s in sends(out)] == [1, 1]


def test_fork_is_independent():
    d = start(["A", "D"], "D")
    child = d.fork()
    assert child.state == d.state
    child.prot_run("G")
    assert d.state.self_id == "D" and "G" not in d.state.live_set
