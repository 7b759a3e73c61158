"""Per-process CBCAST state machine.

:class:`CbcastProcess` wraps a :class:`ProcessState` and exposes each
procedure as an atomic transaction.  A transaction returns the ordered list
of its outputs: packet queuing requests (:class:`Send`) interleaved with
up-call and bookkeeping records (deliveries, installs, take-ups, donation
sub-transactions).  The simulator turns these into channel writes and trace
lines; unit tests inspect them directly.
"""

from __future__ import annotations

import copy
from collections import deque
from dataclasses import dataclass, field
from typing import Any, Callable, Iterable, Union

from .app import LogApp, UlpCallbacks
from .core import (
    ConfigurationError,
    CounterPair,
    DecodeError,
    DonationBody,
    FrozenMap,
    MessageId,
    Packet,
    ProcessId,
    ProtocolViolation,
    StampedMessage,
    VectorTime,
    ViewId,
    WaitRecord,
    counter_total,
)


# --- transaction outputs -------------------------------------------------

@dataclass(frozen=True)
class Send:
    """Request to queue ``packet`` on the channels to ``targets``."""

    packet: Packet
    targets: tuple[ProcessId, ...]
    multicast: bool
    origin: str = ""  # "bcast" / "fwd" for message multicasts
    index: CounterPair | None = None


@dataclass(frozen=True)
class Deliver:
    msg: StampedMessage


@dataclass(frozen=True)
class Install:
    view: ViewId
    gap: int
    change: tuple[str, ProcessId]
    mset: tuple[ProcessId, ...]
    live: tuple[ProcessId, ...]


@dataclass(frozen=True)
class TakeUp:
    msg_id: MessageId
    sender: ProcessId


@dataclass(frozen=True)
class SubTx:
    """Marks a simulated receive inside a donation or co-donation."""

    context: str  # "don" | "codon"
    op: str  # "msg" | "ack"
    msg_id: MessageId
    sender: ProcessId


@dataclass(frozen=True)
class StaleAck:
    msg_id: MessageId
    sender: ProcessId


@dataclass(frozen=True)
class LaunchMain:
    pass


Output = Union[Send, Deliver, Install, TakeUp, SubTx, StaleAck, LaunchMain]


# --- state ---------------------------------------------------------------

@dataclass
class ProcessState:
    self_id: ProcessId = ""
    cur_view: ViewId = 0
    v_gap: int = 0
    mset: list[ProcessId] = field(default_factory=list)
    pend_view_queue: deque = field(default_factory=deque)  # of ("JOIN"|"REMOVE", pid)
    live_set: list[ProcessId] = field(default_factory=list)
    contact_set: list[ProcessId] = field(default_factory=list)
    vt: dict[ProcessId, int] = field(default_factory=dict)
    receive_set: dict[MessageId, StampedMessage] = field(default_factory=dict)
    fwd_queue: dict[ProcessId, deque] = field(default_factory=dict)
    bcast_wait_set: dict[MessageId, WaitRecord] = field(default_factory=dict)
    fwd_wait_set: dict[MessageId, WaitRecord] = field(default_factory=dict)
    launch_queue: deque = field(default_factory=deque)
    replicated_data: Any = None
    ghost_height: ViewId = 0
    flush_height: ViewId = 0
    ghost: dict[ProcessId, ViewId] = field(default_factory=dict)
    flush: dict[ProcessId, ViewId] = field(default_factory=dict)
    mpkt_out: CounterPair = CounterPair()
    mpkt_in: dict[ProcessId, CounterPair] = field(default_factory=dict)
    initialized: bool = False

    @property
    def height(self) -> ViewId:
        return self.cur_view + self.v_gap

    def wait_records(self) -> list[WaitRecord]:
        return list(self.bcast_wait_set.values()) + list(self.fwd_wait_set.values())

    def snapshot(self) -> "ProcessState":
        return copy.deepcopy(self)


def _sorted_insert(seq: list[ProcessId], pid: ProcessId) -> None:
    if pid not in seq:
        seq.append(pid)
        seq.sort()


def _discard(seq: list[ProcessId], pid: ProcessId) -> None:
    if pid in seq:
        seq.remove(pid)


class CbcastProcess:
    """One group member.  Public methods are transactions."""

    def __init__(self, ulp: UlpCallbacks | None = None, state: ProcessState | None = None):
        self.ulp: UlpCallbacks = ulp if ulp is not None else LogApp()
        self.state = state if state is not None else ProcessState()
        self._out: list[Output] = []

    # -- plumbing ---------------------------------------------------------

    def _txn(self, body: Callable[[], None]) -> list[Output]:
        self._out = []
        body()
        out, self._out = self._out, []
        return out

    def _multicast(self, packet_kind: str, body, origin: str = "", index: CounterPair | None = None):
        s = self.state
        pkt = Packet(packet_kind, body, s.height)
        self._out.append(Send(pkt, tuple(s.contact_set), True, origin, index))

    def _unicast(self, packet_kind: str, body, target: ProcessId):
        pkt = Packet(packet_kind, body, self.state.height)
        self._out.append(Send(pkt, (target,), False))

    def _donation_body(self) -> DonationBody:
        s = self.state
        return DonationBody(
            tuple(s.wait_records()),
            FrozenMap(s.mpkt_in),
            s.ghost_height,
            s.flush_height,
        )

    def fork(self) -> "CbcastProcess":
        """Deep snapshot, used to create a joining child."""
        return CbcastProcess(self.ulp, self.state.snapshot())

    # -- entry points ---------------------------------------------------

    def prot_start(self, roster: Iterable[ProcessId], pid: ProcessId) -> list[Output]:
        roster = sorted(set(roster))
        if not roster:
            raise ConfigurationError("empty roster")
        if pid not in roster:
            raise ConfigurationError(f"{pid} is not in roster {roster}")

        def body():
            s = self.state
            s.self_id = pid
            s.cur_view = 0
            s.v_gap = 0
            s.replicated_data = self.ulp.ground_state()
            s.live_set = list(roster)
            s.contact_set = list(roster)
            s.mset = list(roster)
            s.mpkt_out = CounterPair()
            s.ghost_height = s.flush_height = 0
            for q in roster:
                s.vt[q] = 0
                s.fwd_queue[q] = deque()
                s.mpkt_in[q] = CounterPair()
                s.ghost[q] = 0
                s.flush[q] = 0
                s.replicated_data = self.ulp.apply_join(s.replicated_data, q)
            s.initialized = True

        return self._txn(body)

    def prot_broadcast(self, payload: str) -> list[Output]:
        return self._txn(lambda: self._broadcast(payload))

    def prot_run(self, pid: ProcessId) -> list[Output]:
        def body():
            s = self.state
            s.v_gap += 1
            s.pend_view_queue.append(("JOIN", pid))
            _sorted_insert(s.live_set, pid)
            s.contact_set = [pid]
            s.fwd_queue[pid] = deque()
            s.bcast_wait_set = {}
            for k, rec in s.fwd_wait_set.items():
                s.fwd_wait_set[k] = WaitRecord(rec.msg, CounterPair(0, rec.index.f), rec.iset, rec.kind)
            s.launch_queue = deque()
            s.flush_height = s.ghost_height
            s.ghost[pid] = s.ghost_height
            s.flush[pid] = s.ghost_height
            s.mpkt_out = CounterPair(0, s.mpkt_out.f)
            s.mpkt_in[pid] = s.mpkt_out
            s.self_id = pid
            self._check_flush()

        return self._txn(body)

    def prot_remove(self, rem: ProcessId) -> list[Output]:
        return self._txn(lambda: self._remove(rem))

    def prot_join(self, jn: ProcessId, parent: ProcessId) -> list[Output]:
        return self._txn(lambda: self._join(jn, parent))

    def prot_packet(self, packet: Packet, sender: ProcessId) -> list[Output]:
        handlers = {
            "msg": self._receive_message,
            "ack": self._receive_ack,
            "ghost": self._receive_ghost,
            "flush": self._receive_flush,
            "don": self._receive_donation,
            "codon": self._receive_codonation,
        }
        handler = handlers.get(packet.kind)
        if handler is None:
            raise DecodeError(f"unknown packet kind {packet.kind!r}")
        return self._txn(lambda: handler(packet.body, sender))

    # Individual procedures, exposed as transactions for testing.

    def receive_message(self, msg: StampedMessage, sender: ProcessId) -> list[Output]:
        return self._txn(lambda: self._receive_message(msg, sender))

    def receive_ack(self, mid: MessageId, sender: ProcessId) -> list[Output]:
        return self._txn(lambda: self._receive_ack(mid, sender))

    def receive_ghost(self, v: ViewId, sender: ProcessId) -> list[Output]:
        return self._txn(lambda: self._receive_ghost(v, sender))

    def receive_flush(self, v: ViewId, sender: ProcessId) -> list[Output]:
        return self._txn(lambda: self._receive_flush(v, sender))

    def receive_donation(self, body: DonationBody, sender: ProcessId) -> list[Output]:
        return self._txn(lambda: self._receive_donation(body, sender))

    def receive_codonation(self, body: DonationBody, sender: ProcessId) -> list[Output]:
        return self._txn(lambda: self._receive_codonation(body, sender))

    def check_flush(self) -> list[Output]:
        return self._txn(self._check_flush)

    def try_to_install(self) -> list[Output]:
        return self._txn(self._try_to_install)

    def scan(self) -> list[Output]:
        return self._txn(self._scan)

    # -- procedure bodies -------------------------------------------------

    def _broadcast(self, payload: str) -> None:
        s = self.state
        if s.v_gap > 0:
            s.launch_queue.append(payload)
            return
        s.mpkt_out = CounterPair(s.mpkt_out.b + 1, s.mpkt_out.f)
        me = s.self_id
        stamp = dict(s.vt)
        stamp[me] = s.vt[me] + s.mpkt_out.b - s.mpkt_in[me].b
        msg = StampedMessage(payload, me, s.cur_view, VectorTime(stamp))
        self._multicast("msg", msg, "bcast", s.mpkt_out)
        rec = WaitRecord(msg, s.mpkt_out, FrozenMap(s.mpkt_in), "bcast")
        if msg.id in s.bcast_wait_set or msg.id in s.fwd_wait_set:
            raise ProtocolViolation(f"duplicate wait record for {msg.id.short()}")
        s.bcast_wait_set[msg.id] = rec

    def _remove(self, rem: ProcessId) -> None:
        s = self.state
        if rem not in s.live_set:
            raise ProtocolViolation(f"{s.self_id}: remove of non-live {rem}")
        s.v_gap += 1
        s.pend_view_queue.append(("REMOVE", rem))
        _discard(s.live_set, rem)
        _discard(s.contact_set, rem)
        for ws in (s.bcast_wait_set, s.fwd_wait_set):
            for k in list(ws):
                rec = ws[k]
                if rem in rec.iset:
                    iset = rec.iset.without(rem)
                    if iset:
                        ws[k] = WaitRecord(rec.msg, rec.index, iset, rec.kind)
                    else:
                        del ws[k]
        del s.mpkt_in[rem]
        for msg in s.fwd_queue[rem]:
            s.mpkt_out = CounterPair(s.mpkt_out.b, s.mpkt_out.f + 1)
            self._multicast("msg", msg, "fwd", s.mpkt_out)
            if msg.id in s.bcast_wait_set or msg.id in s.fwd_wait_set:
                raise ProtocolViolation(f"duplicate wait record for {msg.id.short()}")
            s.fwd_wait_set[msg.id] = WaitRecord(msg, s.mpkt_out, FrozenMap(s.mpkt_in), "fwd")
        del s.fwd_queue[rem]
        del s.ghost[rem]
        del s.flush[rem]
        self._check_flush()

    def _join(self, jn: ProcessId, parent: ProcessId) -> None:
        s = self.state
        if parent not in s.live_set:
            raise ProtocolViolation(f"{s.self_id}: join parent {parent} is not live")
        if jn in s.live_set:
            raise ProtocolViolation(f"{s.self_id}: joining {jn} is already live")
        s.v_gap += 1
        s.pend_view_queue.append(("JOIN", jn))
        _sorted_insert(s.live_set, jn)
        _sorted_insert(s.contact_set, jn)
        s.fwd_queue[jn] = deque()
        for ws in (s.bcast_wait_set, s.fwd_wait_set):
            for k, rec in ws.items():
                if parent in rec.iset:
                    ws[k] = WaitRecord(
                        rec.msg, rec.index, rec.iset.set(jn, CounterPair(0, rec.iset[parent].f)), rec.kind
                    )
        s.ghost[jn] = s.ghost[parent]
        s.flush[jn] = s.ghost[parent]
        s.mpkt_in[jn] = CounterPair(0, s.mpkt_in[parent].f)
        self._unicast("don", self._donation_body(), jn)
        self._check_flush()

    def _receive_message(self, msg: StampedMessage, sender: ProcessId) -> None:
        s = self.state
        if sender not in s.live_set:
            raise ProtocolViolation(f"{s.self_id}: message from non-live {sender}")
        self._unicast("ack", msg.id, sender)
        c = s.mpkt_in[sender]
        s.mpkt_in[sender] = CounterPair(c.b + 1, c.f) if msg.orig == sender else CounterPair(c.b, c.f + 1)
        if msg.mview < s.cur_view:
            return
        if msg.mview == s.cur_view and s.vt[msg.orig] >= msg.mvt[msg.orig]:
            return
        if msg.id in s.receive_set:
            return
        s.receive_set[msg.id] = msg
        self._out.append(TakeUp(msg.id, sender))
        s.fwd_queue[sender].append(msg)
        self._scan()

    def _receive_ack(self, mid: MessageId, sender: ProcessId) -> None:
        s = self.state
        for ws in (s.bcast_wait_set, s.fwd_wait_set):
            rec = ws.get(mid)
            if rec is None:
                continue
            if sender in rec.iset:
                iset = rec.iset.without(sender)
                if iset:
                    ws[mid] = WaitRecord(rec.msg, rec.index, iset, rec.kind)
                else:
                    del ws[mid]
                    self._check_flush()
            return
        self._out.append(StaleAck(mid, sender))

    def _receive_ghost(self, v: ViewId, sender: ProcessId) -> None:
        s = self.state
        if v < s.ghost[sender]:
            raise ProtocolViolation(f"{s.self_id}: ghost from {sender} went back {s.ghost[sender]} -> {v}")
        s.ghost[sender] = v

    def _receive_flush(self, v: ViewId, sender: ProcessId) -> None:
        s = self.state
        if v < s.flush[sender]:
            raise ProtocolViolation(f"{s.self_id}: flush from {sender} went back {s.flush[sender]} -> {v}")
        s.flush[sender] = v
        self._try_to_install()

    def _untimely(self, own_key: str, other: DonationBody, sender: ProcessId):
        """Build the sorted UNT list; ``own_key`` names the role of own records."""
        s = self.state
        me = s.self_id
        theirs = [
            (counter_total(r.iset[me]), counter_total(r.index), "their", r)
            for r in other.wait_set
            if me in r.iset
        ]
        mine = [(counter_total(r.index), 0, "mine", r) for r in s.wait_records() if sender in r.iset]
        # Stable sort on (heightA, heightB); UNT_p entries go first on ties.
        if own_key == "g":
            unt = theirs + mine
        else:
            unt = mine + theirs
        unt.sort(key=lambda e: (e[0], e[1]))
        return unt

    def _receive_donation(self, body: DonationBody, sender: ProcessId) -> None:
        s = self.state
        _sorted_insert(s.contact_set, sender)
        self._unicast("codon", self._donation_body(), sender)
        me = s.self_id
        for _, _, side, rec in self._untimely("g", body, sender):
            if side == "their":
                if counter_total(rec.index) > counter_total(s.mpkt_in[sender]):
                    self._out.append(SubTx("don", "msg", rec.msg.id, sender))
                    self._receive_message(rec.msg, sender)
            elif counter_total(rec.index) <= counter_total(body.mpkt_in[me]):
                self._out.append(SubTx("don", "ack", rec.msg.id, sender))
                self._receive_ack(rec.msg.id, sender)
        self._set_heights(sender, body)

    def _receive_codonation(self, body: DonationBody, sender: ProcessId) -> None:
        s = self.state
        me = s.self_id
        for _, _, side, rec in self._untimely("p", body, sender):
            if side == "their":
                if counter_total(rec.index) > counter_total(s.mpkt_in[sender]):
                    self._out.append(SubTx("codon", "msg", rec.msg.id, sender))
                    self._receive_message(rec.msg, sender)
            elif counter_total(rec.index) <= counter_total(body.mpkt_in[me]):
                self._out.append(SubTx("codon", "ack", rec.msg.id, sender))
                self._receive_ack(rec.msg.id, sender)
        self._set_heights(sender, body)
        self._try_to_install()

    def _set_heights(self, sender: ProcessId, body: DonationBody) -> None:
        s = self.state
        s.ghost[sender] = body.ghost_height
        s.flush[sender] = body.flush_height

    def _check_flush(self) -> None:
        s = self.state
        if s.fwd_wait_set:
            return
        if s.ghost_height < s.height:
            s.ghost_height = s.height
            self._multicast("ghost", s.ghost_height)
        if s.bcast_wait_set:
            return
        if s.flush_height < s.height:
            s.flush_height = s.height
            self._multicast("flush", s.flush_height)

    def _try_to_install(self) -> None:
        s = self.state
        if any(s.flush[q] < s.height for q in s.live_set):
            return
        while s.v_gap > 0:
            for k in [k for k, m in s.receive_set.items() if m.mview == s.cur_view]:
                del s.receive_set[k]
            for q in s.live_set:
                s.fwd_queue[q] = deque(m for m in s.fwd_queue[q] if m.mview != s.cur_view)
            s.cur_view += 1
            s.v_gap -= 1
            if not s.pend_view_queue:
                raise ProtocolViolation(f"{s.self_id}: pending view queue empty with v_gap>0")
            op, pid = s.pend_view_queue.popleft()
            if op == "JOIN":
                _sorted_insert(s.mset, pid)
                s.replicated_data = self.ulp.apply_join(s.replicated_data, pid)
            else:
                _discard(s.mset, pid)
                s.replicated_data = self.ulp.apply_removal(s.replicated_data, pid)
            self._out.append(Install(s.cur_view, s.v_gap, (op, pid), tuple(s.mset), tuple(s.live_set)))
            if op == "JOIN" and pid == s.self_id:
                self._out.append(LaunchMain())
            s.vt = {q: 0 for q in s.mset}
            self._scan()
        while s.launch_queue:
            self._broadcast(s.launch_queue.popleft())

    def _deliverable(self, m: StampedMessage) -> bool:
        s = self.state
        if m.mview != s.cur_view or m.mvt[m.orig] != s.vt[m.orig] + 1:
            return False
        return all(m.mvt[q] <= s.vt[q] for q in s.mset if q != m.orig)

    def _scan(self) -> None:
        s = self.state
        progress = True
        while progress:
            progress = False
            for k, m in list(s.receive_set.items()):
                if self._deliverable(m):
                    s.vt[m.orig] += 1
                    del s.receive_set[k]
                    s.replicated_data = self.ulp.apply_message(s.replicated_data, m.payload, m.orig)
                    self._out.append(Deliver(m))
                    progress = True


def sends(outputs: Iterable[Output]) -> list[Send]:
    return [o for o in outputs if isinstance(o, Send)]


def packet_kinds(outputs: Iterable[Output]) -> list[str]:
    """Kinds of queued packets, e.g. ``["ghost", "flush"]``."""
    return [o.packet.kind for o in sends(outputs)]
