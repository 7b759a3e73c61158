"""Deterministic discrete-event simulator.

One trigger runs per tick.  A trigger is a notification dequeue, a packet
dequeue, a broadcast request, or a Main-script slot.  The enabled set is
built each tick under the model constraints (FIFO channels, piggyback
gate, self-channel gate, halted processes silent) and one trigger is drawn
with a SplitMix64 generator seeded from the scenario.

Queued packets are treated as sent at once; a packet is only lost through
an explicit drop rule or because its receiver has already processed the
sender's removal.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from typing import Callable

from .app import MainScript, ScriptStep, delivered_count
from .core import CounterPair, InvariantViolation, ProcessId, ViewId
from .gms import Membership
from .protocol import (
    CbcastProcess,
    Deliver,
    Install,
    LaunchMain,
    Output,
    ProcessState,
    Send,
    StaleAck,
    SubTx,
    TakeUp,
)
from .scenario import Scenario, validate
from .shapes import StateFacts, classify
from .trace import Trace, TraceEvent

MASK64 = (1 << 64) - 1


class SplitMix64:
    """The SplitMix64 generator (Steele, Lea, Flood), 64-bit state."""

    name = "splitmix64"

    def __init__(self, seed: int):
        self.state = seed & MASK64

    def next_u64(self) -> int:
        self.state = (self.state + 0x9E3779B97F4A7C15) & MASK64
        z = self.state
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
        return z ^ (z >> 31)

    def below(self, n: int) -> int:
        """Uniform integer in [0, n) by rejection."""
        if n <= 0:
            raise ValueError("n must be positive")
        limit = (1 << 64) - ((1 << 64) % n)
        while True:
            x = self.next_u64()
            if x < limit:
                return x % n


@dataclass
class Node:
    pid: ProcessId
    proc: CbcastProcess | None = None
    halted: bool = False
    notified: ViewId = 0  # view of the last dequeued notification (or join view)
    main_launched: bool = False
    script: MainScript = field(default_factory=MainScript)
    requests: deque = field(default_factory=deque)
    known_removed: set = field(default_factory=set)
    donors: set = field(default_factory=set)
    parent: ProcessId | None = None

    @property
    def active(self) -> bool:
        return self.proc is not None and not self.halted


@dataclass
class RunResult:
    status: str  # quiescent | timeout | stalled
    ticks: int
    trace: Trace
    nodes: dict[ProcessId, Node]
    gms: Membership
    discards: int = 0
    stale_acks: int = 0
    shape_counts: dict[str, int] = field(default_factory=dict)


class Simulator:
    def __init__(
        self,
        scenario: Scenario,
        seed: int | None = None,
        max_ticks: int | None = None,
        monitor: bool = True,
        ulp_factory: Callable[[], object] | None = None,
    ):
        validate(scenario)
        self.scenario = scenario
        self.seed = scenario.seed if seed is None else seed
        self.max_ticks = scenario.max_ticks if max_ticks is None else max_ticks
        self.rng = SplitMix64(self.seed)
        self.gms = Membership(scenario.roster)
        for pid, view in scenario.notification_drops:
            self.gms.drop_notification(pid, view)
        self.ulp_factory = ulp_factory
        self.tick = 0
        self.seq = 0
        self.events: list[TraceEvent] = []
        self.nodes: dict[ProcessId, Node] = {}
        self.channels: dict[tuple[ProcessId, ProcessId], deque] = {}
        self.sent: dict[tuple[ProcessId, ProcessId], int] = {}
        self.drop_from = {(s, t): k for s, t, k in scenario.packet_drops}
        self.discards = 0
        self.stale_acks = 0
        self.early_halts: set[ProcessId] = set()
        self.monitor = InvariantMonitor(self) if monitor else None

        self.pending = sorted(
            (d for d in scenario.directives if d.verb != "broadcast"), key=lambda d: d.tick
        )
        self.scripts: dict[ProcessId, list[ScriptStep]] = {}
        for d in scenario.directives:
            if d.verb == "broadcast":
                self.scripts.setdefault(d.pid, []).append(ScriptStep(d.payload, d.tick, d.after))

        for pid in sorted(scenario.roster):
            node = self._new_node(pid)
            proc = CbcastProcess(self._ulp())
            proc.prot_start(scenario.roster, pid)
            node.proc = proc
        self._main_pending = True

    # -- setup helpers ----------------------------------------------------

    def _ulp(self):
        if self.ulp_factory is None:
            from .app import LogApp

            return LogApp()
        return self.ulp_factory()

    def _new_node(self, pid: ProcessId) -> Node:
        node = Node(pid, script=MainScript(list(self.scripts.get(pid, []))))
        self.nodes[pid] = node
        return node

    def _emit(self, process: ProcessId, kind: str, payload: dict) -> TraceEvent:
        ev = TraceEvent(self.seq, self.tick, process, kind, payload)
        self.seq += 1
        self.events.append(ev)
        return ev

    # -- directives -------------------------------------------------------

    def _apply_directives(self) -> None:
        while self.pending and self.pending[0].tick <= self.tick:
            d = self.pending.pop(0)
            if d.verb == "join":
                view = self.gms.propose_join(d.pid, d.parent)
                node = self._new_node(d.pid)
                node.parent = d.parent
                node.notified = view.index
                self.gms.queues[d.pid].pop()  # New(J) is consumed by the fork
                self._note_drops(view.index)
                if d.pid in self.early_halts:
                    self._halt(d.pid, "scheduled")
            elif d.verb == "remove":
                view = self.gms.propose_remove(d.pid)
                self._note_drops(view.index)
            elif d.verb == "halt":
                if d.pid in self.nodes:
                    self._halt(d.pid, "scheduled")
                else:
                    self.early_halts.add(d.pid)
        if self._main_pending and self.tick >= self.scenario.main_delay:
            self._main_pending = False
            for pid in self.scenario.roster:
                self.nodes[pid].main_launched = True

    def _note_drops(self, view: ViewId) -> None:
        for pid, q in self.gms.queues.items():
            for e in q.entries:
                if e.view == view and e.dropped:
                    self._emit(pid, "discard", {"view": view, "reason": "notification-dropped"})

    def _halt(self, pid: ProcessId, reason: str) -> None:
        node = self.nodes[pid]
        if node.halted:
            return
        node.halted = True
        self._emit(pid, "halt", {"reason": reason})

    # -- enabled triggers -------------------------------------------------

    def _enabled(self) -> list[tuple]:
        out = []
        for (src, dst), chan in self.channels.items():
            if chan:
                node = self.nodes[dst]
                if node.active and chan[0][1].piggyback_height <= node.notified:
                    out.append(("packet", dst, src))
        for pid in self.nodes:
            node = self.nodes[pid]
            if not node.active:
                continue
            head = self.gms.queues[pid].head()
            self_busy = bool(self.channels.get((pid, pid)))
            if head is not None and not head.dropped and not self_busy:
                out.append(("notify", pid, ""))
            if node.requests:
                out.append(("request", pid, ""))
            if node.main_launched and node.script.ready(self.tick, node.proc.state.replicated_data):
                out.append(("main", pid, ""))
        out.sort()
        return out

    def _next_wakeup(self) -> int | None:
        times = []
        if self.pending:
            times.append(self.pending[0].tick)
        if self._main_pending:
            times.append(self.scenario.main_delay)
        for node in self.nodes.values():
            if node.active and node.main_launched and not node.script.exhausted:
                step = node.script.steps[node.script.position]
                log = node.proc.state.replicated_data
                if step.at_tick > self.tick and delivered_count(log) >= step.after_deliveries:
                    times.append(step.at_tick)
        later = [t for t in times if t > self.tick]
        return min(later) if later else None

    # -- main loop ------------------------------------------------------------

    def run(self) -> RunResult:
        status = "quiescent"
        while True:
            self._apply_directives()
            enabled = self._enabled()
            if not enabled:
                wake = self._next_wakeup()
                if wake is None and not self.pending:
                    break
                if wake is None:
                    wake = self.pending[0].tick
                if wake >= self.max_ticks:
                    status = "timeout"
                    self.tick = self.max_ticks
                    break
                self.tick = wake
                continue
            if self.tick >= self.max_ticks:
                status = "timeout"
                break
            kind, pid, src = enabled[self.rng.below(len(enabled))]
            self._execute(kind, pid, src)
            self.tick += 1
        if status == "quiescent" and self._stalled():
            status = "stalled"
        if self.monitor is not None:
            self.monitor.finish()
        trace = Trace(
            header={
                "scenario": self.scenario.digest(),
                "seed": str(self.seed),
                "prng": SplitMix64.name,
                "roster": ",".join(sorted(self.scenario.roster)),
            },
            events=self.events,
            trailer={"status": status, "ticks": str(self.tick)},
        )
        return RunResult(
            status,
            self.tick,
            trace,
            self.nodes,
            self.gms,
            self.discards,
            self.stale_acks,
            dict(self.monitor.shape_counts) if self.monitor else {},
        )

    def _stalled(self) -> bool:
        for node in self.nodes.values():
            if not node.active:
                continue
            s = node.proc.state
            if s.v_gap > 0 or s.bcast_wait_set or s.fwd_wait_set or node.requests:
                return True
        return False

    # -- trigger execution ----------------------------------------------

    def _execute(self, kind: str, pid: ProcessId, src: ProcessId) -> None:
        node = self.nodes[pid]
        if kind == "main":
            payload = node.script.steps[node.script.position].payload
            node.script.position += 1
            node.requests.append(payload)
            return
        if kind == "request":
            payload = node.requests.popleft()
            self._emit(pid, "request-in", {"payload": payload})
            self._transaction(node, "broadcast", lambda: node.proc.prot_broadcast(payload))
            return
        if kind == "packet":
            ordinal, packet = self.channels[(src, pid)].popleft()
            self._emit(pid, "packet-in", {"from": src, "ord": ordinal, "pkt": packet.to_obj()})
            if packet.kind == "don":
                node.donors.add(src)
            self._transaction(
                node, packet.kind, lambda: node.proc.prot_packet(packet, src), packet=(src, ordinal, packet)
            )
            return
        entry = self.gms.queues[pid].pop()
        note = entry.note
        node.notified = entry.view
        self._emit(pid, "notify", {"view": entry.view, "note": note.to_obj()})
        if note.kind == "dead":
            self._transaction(node, "dead", lambda: [])
            self._halt(pid, "dead")
        elif note.kind == "remove":
            node.known_removed.add(note.pid)
            self._transaction(node, "remove", lambda: node.proc.prot_remove(note.pid), arg=note.pid)
            self._purge_from(note.pid, pid)
        elif note.kind == "join" and note.parent == pid:
            child_node = self.nodes[note.pid]
            snapshot = node.proc.fork()
            self._transaction(node, "join", lambda: node.proc.prot_join(note.pid, pid))
            if child_node.halted:
                return
            child_node.proc = snapshot
            child_node.known_removed = set(node.known_removed)
            self._emit(note.pid, "notify", {"view": entry.view, "note": {"k": "new", "pid": note.pid}, "parent": pid})
            self._transaction(child_node, "run", lambda: child_node.proc.prot_run(note.pid))
        elif note.kind == "join":
            self._transaction(node, "join", lambda: node.proc.prot_join(note.pid, note.parent))
        else:
            raise InvariantViolation(f"{pid}: unexpected notification {note}")

    def _purge_from(self, src: ProcessId, dst: ProcessId) -> None:
        chan = self.channels.get((src, dst))
        while chan:
            ordinal, _ = chan.popleft()
            self._discard(src, dst, ordinal, "removed-sender")

    def _discard(self, src, dst, ordinal, reason) -> None:
        self.discards += 1
        self._emit(dst, "discard", {"from": src, "ord": ordinal, "reason": reason})

    def _transaction(self, node: Node, trigger: str, body, arg=None, packet=None) -> None:
        mon = self.monitor
        pre = mon.before(node, trigger, packet) if mon else None
        outputs = body()
        self._apply_outputs(node, outputs)
        if mon:
            mon.after(node, trigger, outputs, pre, arg, packet)

    def _apply_outputs(self, node: Node, outputs: list[Output]) -> None:
        pid = node.pid
        for o in outputs:
            if isinstance(o, Send):
                self._queue(node, o)
            elif isinstance(o, Deliver):
                self._emit(pid, "deliver", {"id": o.msg.id.to_obj(), "payload": o.msg.payload})
            elif isinstance(o, Install):
                self._emit(
                    pid,
                    "install",
                    {
                        "view": o.view,
                        "gap": o.gap,
                        "change": list(o.change),
                        "mset": list(o.mset),
                        "live": list(o.live),
                    },
                )
            elif isinstance(o, TakeUp):
                self._emit(pid, "takeup", {"id": o.msg_id.to_obj(), "sender": o.sender})
            elif isinstance(o, SubTx):
                self._emit(
                    pid, "subtx", {"ctx": o.context, "op": o.op, "id": o.msg_id.to_obj(), "sender": o.sender}
                )
            elif isinstance(o, StaleAck):
                self.stale_acks += 1
            elif isinstance(o, LaunchMain):
                node.main_launched = True

    def _queue(self, node: Node, send: Send) -> None:
        pid = node.pid
        live = node.proc.state.live_set
        ords = []
        for t in send.targets:
            if t not in live:
                raise InvariantViolation(f"{pid} queued to {t}, which it does not consider live")
            key = (pid, t)
            self.sent[key] = self.sent.get(key, 0) + 1
            ords.append(self.sent[key])
        payload = {
            "pkt": send.packet.to_obj(),
            "to": list(send.targets),
            "ords": ords,
            "mode": "multi" if send.multicast else "uni",
        }
        if send.origin:
            payload["origin"] = send.origin
        if send.index is not None:
            payload["index"] = send.index.to_obj()
        self._emit(pid, "queue", payload)
        for t, k in zip(send.targets, ords):
            key = (pid, t)
            if self.monitor is not None and send.index is not None:
                self.monitor.record_index(key, k, send.index)
            limit = self.drop_from.get(key)
            if limit is not None and k >= limit:
                self._discard(pid, t, k, "dropped")
            elif pid in self.nodes[t].known_removed:
                self._discard(pid, t, k, "removed-sender")
            else:
                self.channels.setdefault(key, deque()).append((k, send.packet))


class InvariantMonitor:
    """Runtime checks run around every transaction.

    Covers the state relations that must hold after each transaction, the
    counter and flush lockstep between original members, and the
    side-effect shape of each transaction.
    """

    def __init__(self, sim: Simulator):
        self.sim = sim
        self.indices: dict[tuple, CounterPair] = {}
        self.shape_counts: dict[str, int] = {}
        self.last_heights: dict[ProcessId, dict] = {}
        # (pid, view) -> values seen after/before that notification
        self.post_note: dict[tuple[ProcessId, ViewId], tuple[dict, dict]] = {}
        self.pre_note: dict[tuple[ProcessId, ViewId], tuple[int, int]] = {}

    def record_index(self, key, ordinal, index: CounterPair) -> None:
        self.indices[(key, ordinal)] = index

    def _original(self, pid) -> bool:
        return self.sim.gms.j(pid) == 0

    def before(self, node: Node, trigger: str, packet):
        s = node.proc.state
        facts = StateFacts.of(s)
        counters = None
        if packet is not None:
            src = packet[0]
            counters = (s.mpkt_in.get(src), s.ghost.get(src), s.flush.get(src))
        heights = (s.ghost_height, s.flush_height)
        return facts, counters, heights

    def after(self, node: Node, trigger: str, outputs, pre, arg, packet) -> None:
        s = node.proc.state
        facts, counters, heights = pre
        if trigger == "dead":
            return
        post = StateFacts.of(s)
        try:
            label = classify(trigger, outputs, facts, post, arg)
        except InvariantViolation as exc:
            raise InvariantViolation(f"{node.pid} tick {self.sim.tick}: {exc}") from None
        self.shape_counts[label] = self.shape_counts.get(label, 0) + 1
        self.check_state(node)
        if packet is not None:
            self._lockstep(node, packet, counters)
        if trigger in ("remove", "join", "run"):
            v = node.notified
            self.post_note[(node.pid, v)] = (dict(s.ghost), dict(s.flush))
            if trigger == "run":
                # The child's join step sets both heights to the inherited ghost height.
                self.pre_note[(node.pid, v)] = (heights[0], heights[0])
            else:
                self.pre_note[(node.pid, v)] = heights

    def _fail(self, node: Node, claim: str, detail: str):
        raise InvariantViolation(f"{node.pid} tick {self.sim.tick}: {claim}: {detail}")

    def check_state(self, node: Node) -> None:
        s: ProcessState = node.proc.state
        gms = self.sim.gms
        h = s.height
        if h != node.notified:
            self._fail(node, "height", f"cur_view+v_gap={h} but last notification is {node.notified}")
        expect_live = sorted(gms.live_at(h))
        if s.live_set != expect_live:
            self._fail(node, "live set", f"{s.live_set} != {expect_live}")
        uncontacted = {
            q for q in s.live_set if gms.j(q) < gms.j(node.pid) and q not in node.donors
        }
        expect_contact = [q for q in s.live_set if q not in uncontacted]
        if s.contact_set != expect_contact:
            self._fail(node, "contact set", f"{s.contact_set} != {expect_contact}")
        live = set(s.live_set)
        for name in ("fwd_queue", "mpkt_in", "ghost", "flush"):
            if set(getattr(s, name)) != live:
                self._fail(node, "keys", f"{name} keyed by {sorted(getattr(s, name))}, live {sorted(live)}")
        if set(s.vt) != set(s.mset):
            self._fail(node, "keys", f"vt keyed by {sorted(s.vt)}, members {s.mset}")
        for x in s.live_set:
            if not s.flush[x] <= s.ghost[x] <= h:
                self._fail(node, "heights", f"flush[{x}]={s.flush[x]} ghost[{x}]={s.ghost[x]} h={h}")
            if x not in s.contact_set and not s.ghost[x] < h:
                self._fail(node, "heights", f"uncontacted {x} has ghost {s.ghost[x]} = h")
            if s.v_gap == 0 and not s.flush[x] == s.ghost[x] == h:
                self._fail(node, "heights", f"installed but flush/ghost[{x}] != {h}")
        if not s.flush[s.self_id] <= s.flush_height <= s.ghost_height <= h:
            self._fail(
                node,
                "own heights",
                f"flush[self]={s.flush[s.self_id]} flush_height={s.flush_height} ghost_height={s.ghost_height} h={h}",
            )
        if s.v_gap > 0:
            if (s.ghost_height == h) != (not s.fwd_wait_set):
                self._fail(node, "ghost height", "ghost_height=h must match empty forward wait set")
            if (s.flush_height == h) != (not s.fwd_wait_set and not s.bcast_wait_set):
                self._fail(node, "flush height", "flush_height=h must match empty wait sets")
        elif s.launch_queue:
            self._fail(node, "launch queue", "non-empty with no pending views")
        prev = self.last_heights.get(node.pid)
        cur = {"gh": s.ghost_height, "fh": s.flush_height, "ghost": dict(s.ghost), "flush": dict(s.flush)}
        if prev is not None:
            if cur["gh"] < prev["gh"] or cur["fh"] < prev["fh"]:
                self._fail(node, "monotone", "own ghost/flush height decreased")
            for x in s.live_set:
                for key in ("ghost", "flush"):
                    if x in prev[key] and cur[key][x] < prev[key][x]:
                        self._fail(node, "monotone", f"{key}[{x}] decreased {prev[key][x]} -> {cur[key][x]}")
        self.last_heights[node.pid] = cur

    def _lockstep(self, node: Node, packet, counters) -> None:
        src, ordinal, pkt = packet
        dst = node.pid
        if not (src == dst or (self._original(src) and self._original(dst))):
            return
        s = node.proc.state
        before_in, before_ghost, before_flush = counters
        if pkt.kind == "msg":
            index = self.indices.get(((src, dst), ordinal))
            if index is None:
                return
            after = s.mpkt_in[src]
            lower = before_in.b <= index.b and before_in.f <= index.f and before_in != index
            if not lower or after != index:
                self._fail(node, "counter lockstep", f"from {src} #{ordinal}: {before_in} -> {after}, index {index}")
        elif pkt.kind in ("ghost", "flush"):
            before = before_ghost if pkt.kind == "ghost" else before_flush
            after = (s.ghost if pkt.kind == "ghost" else s.flush)[src]
            if not (before < pkt.body and after == pkt.body):
                self._fail(node, f"{pkt.kind} lockstep", f"from {src}: {before} -> {after}, packet {pkt.body}")

    def finish(self) -> None:
        """Cross-process height relation, checked once all values are known."""
        for (p, i), (ghosts, flushes) in self.post_note.items():
            for x, g in ghosts.items():
                pre = self.pre_note.get((x, i))
                if pre is None:
                    continue
                if g > pre[0] or flushes[x] > pre[1]:
                    raise InvariantViolation(
                        f"{p} after view {i}: ghost/flush[{x}]=({g},{flushes[x]}) exceeds "
                        f"{x}'s heights {pre} before view {i}"
                    )


def run_scenario(scenario: Scenario, seed: int | None = None, max_ticks: int | None = None, monitor=True) -> RunResult:
    return Simulator(scenario, seed=seed, max_ticks=max_ticks, monitor=monitor).run()
