"""Offline trace checkers.

Each ``check_*`` function takes a parsed :class:`~cbcast.trace.Trace` and
returns a :class:`Verdict`.  Checkers only read the trace; they never look at
simulator state, so corrupted or hand-written traces can be fed to them.

Message ids are compared by their canonical JSON text.
"""

from __future__ import annotations

import json
from collections import defaultdict
from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterable

from .trace import Trace, TraceEvent

PASS, FAIL, INCONCLUSIVE = "PASS", "FAIL", "INCONCLUSIVE"
INF = float("inf")


@dataclass
class Verdict:
    name: str
    status: str
    counterexample: list[int] = field(default_factory=list)
    detail: str = ""
    hard: bool = True

    @property
    def ok(self) -> bool:
        return self.status != FAIL or not self.hard

    def render(self) -> str:
        seqs = ",".join(str(s) for s in self.counterexample) or "-"
        kind = "hard" if self.hard else "soft"
        return f"{self.name}\t{self.status}\t{kind}\t{seqs}\t{self.detail}"


def _fail(name: str, seqs: Iterable[int], detail: str, hard: bool = True) -> Verdict:
    seqs = sorted(set(seqs))
    if not seqs:
        raise ValueError("a failing verdict needs a counterexample")
    return Verdict(name, FAIL, seqs, detail, hard)


def key_of(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def label(idobj) -> str:
    o = idobj["o"]
    return f"{o}@{idobj['v']}:{idobj['vt'].get(o, 0)}"


class History:
    """Indexes over a trace shared by the checkers."""

    def __init__(self, trace: Trace):
        self.trace = trace
        self.events = trace.events
        self.by_proc: dict[str, list[TraceEvent]] = defaultdict(list)
        for e in self.events:
            self.by_proc[e.process].append(e)
        self.parent: dict[str, str] = {}
        self.fork_seq: dict[str, int] = {}
        for e in self.events:
            if e.kind == "notify" and "parent" in e.payload:
                self.parent[e.process] = e.payload["parent"]
                self.fork_seq[e.process] = e.seq

    @cached_property
    def roster(self) -> list[str]:
        r = self.trace.roster
        if r:
            return r
        return sorted(p for p in self.by_proc if p not in self.parent)

    @cached_property
    def halted(self) -> dict[str, int]:
        return {e.process: e.seq for e in self.events if e.kind == "halt"}

    @cached_property
    def view_changes(self) -> dict[int, tuple]:
        """view -> ("join", pid, parent) | ("remove", pid), from any notify event."""
        out = {}
        for e in self.events:
            if e.kind != "notify":
                continue
            n, v = e.payload["note"], e.payload["view"]
            if n["k"] == "join":
                out.setdefault(v, ("join", n["pid"], n["parent"]))
            elif n["k"] == "remove":
                out.setdefault(v, ("remove", n["pid"]))
            elif n["k"] == "dead":
                out.setdefault(v, ("remove", e.process))
            elif n["k"] == "new" and "parent" in e.payload:
                out.setdefault(v, ("join", n["pid"], e.payload["parent"]))
        return out

    @cached_property
    def removal_view(self) -> dict[str, int]:
        return {c[1]: v for v, c in self.view_changes.items() if c[0] == "remove"}

    @cached_property
    def join_view(self) -> dict[str, int]:
        out = {p: 0 for p in self.roster}
        out.update({c[1]: v for v, c in self.view_changes.items() if c[0] == "join"})
        return out

    def r(self, pid: str) -> float:
        return self.removal_view.get(pid, INF)

    def ancestry(self, pid: str):
        """Yield (process, seq limit) up the fork chain, starting with ``pid`` itself."""
        limit = INF
        cur = pid
        seen = set()
        while cur is not None and cur not in seen:
            seen.add(cur)
            yield cur, limit
            if cur in self.fork_seq:
                limit = min(limit, self.fork_seq[cur])
            cur = self.parent.get(cur)

    @cached_property
    def deliveries(self) -> dict[str, list[tuple[int, str]]]:
        out = defaultdict(list)
        for e in self.events:
            if e.kind == "deliver":
                out[e.process].append((e.seq, key_of(e.payload["id"])))
        return out

    def familiar(self, pid: str, before: float = INF) -> set[str]:
        """Messages delivered at ``pid`` (or at an ancestor before the fork) before seq ``before``."""
        out = set()
        for p, limit in self.ancestry(pid):
            cap = min(before, limit)
            out.update(k for s, k in self.deliveries.get(p, ()) if s < cap)
        return out

    @cached_property
    def receipts(self) -> dict[str, list[tuple[int, str, dict]]]:
        """Message packets received (dequeued or replayed from a donation)."""
        out = defaultdict(list)
        for e in self.events:
            if e.kind == "packet-in" and e.payload["pkt"]["k"] == "msg":
                body = e.payload["pkt"]["b"]
                idobj = {"o": body["o"], "v": body["v"], "vt": body["vt"]}
                out[e.process].append((e.seq, key_of(idobj), idobj))
            elif e.kind == "subtx" and e.payload["op"] == "msg":
                out[e.process].append((e.seq, key_of(e.payload["id"]), e.payload["id"]))
        return out

    def received(self, pid: str, before: float = INF) -> dict[str, dict]:
        out = {}
        for p, limit in self.ancestry(pid):
            cap = min(before, limit)
            for s, k, idobj in self.receipts.get(p, ()):
                if s < cap:
                    out[k] = idobj
        return out

    @cached_property
    def broadcasts(self) -> dict[str, tuple[int, str]]:
        """message key -> (seq, process) of its stamping."""
        out = {}
        for e in self.events:
            if e.kind == "queue" and e.payload.get("origin") == "bcast":
                body = e.payload["pkt"]["b"]
                k = key_of({"o": body["o"], "v": body["v"], "vt": body["vt"]})
                out.setdefault(k, (e.seq, e.process))
        return out

    def non_halting(self) -> list[str]:
        return sorted(p for p in self.by_proc if p not in self.halted and self._instantiated(p))

    def _instantiated(self, pid: str) -> bool:
        return any(e.kind != "discard" and e.kind != "halt" for e in self.by_proc.get(pid, ()))


# --- causal order ------------------------------------------------------------

def check_causal_order(trace: Trace) -> Verdict:
    name = "causal_order"
    h = History(trace)
    bcast_by: dict[str, list[tuple[int, str]]] = defaultdict(list)
    for k, (s, p) in h.broadcasts.items():
        bcast_by[p].append((s, k))
    for p in bcast_by:
        bcast_by[p].sort()
    at_bcast: dict[str, set[str]] = {}
    for e in h.events:
        if e.kind != "deliver":
            continue
        k = key_of(e.payload["id"])
        if k not in h.broadcasts:
            return _fail(name, [e.seq], f"{e.process} delivered {label(e.payload['id'])}, which was never broadcast")
        bseq, sender = h.broadcasts[k]
        fam_q = h.familiar(e.process, e.seq)
        for s, earlier in bcast_by[sender]:
            if s >= bseq:
                break
            if earlier not in fam_q:
                return _fail(
                    name,
                    [s, bseq, e.seq],
                    f"{e.process} delivered {label(e.payload['id'])} before {sender}'s earlier message "
                    f"{label(json.loads(earlier))}",
                )
        if k not in at_bcast:
            at_bcast[k] = h.familiar(sender, bseq)
        missing = at_bcast[k] - fam_q
        if missing:
            m = sorted(missing)[0]
            seqs = [bseq, e.seq] + [s for s, kk in h.deliveries.get(sender, ()) if kk == m][:1]
            return _fail(
                name,
                seqs,
                f"{e.process} delivered {label(e.payload['id'])} without {label(json.loads(m))}, "
                f"which {sender} knew when broadcasting it",
            )
    return Verdict(name, PASS)


# --- progress ------------------------------------------------------------

def check_progress(trace: Trace) -> Verdict:
    name = "progress"
    if trace.status == "timeout":
        return Verdict(name, INCONCLUSIVE, detail="run timed out")
    h = History(trace)
    alive = h.non_halting()
    fam = {p: h.familiar(p) for p in alive}
    for k, (s, p) in sorted(h.broadcasts.items(), key=lambda kv: kv[1][0]):
        if p not in alive:
            continue
        for q in alive:
            if k not in fam[q]:
                return _fail(
                    name, [s], f"{label(json.loads(k))} from {p} never became familiar to {q}"
                )
    return Verdict(name, PASS)


# --- installation checks ------------------------------------------------

def _installs(h: History) -> dict[int, dict[str, TraceEvent]]:
    out: dict[int, dict[str, TraceEvent]] = defaultdict(dict)
    for e in h.events:
        if e.kind == "install":
            out[e.payload["view"]].setdefault(e.process, e)
    return out


def check_central_lemma(trace: Trace) -> Verdict:
    """Gap-0 installers of a view have received the same older messages."""
    name = "central_lemma"
    h = History(trace)
    installs = _installs(h)
    for v, by_proc in sorted(installs.items()):
        for p, ev in by_proc.items():
            if ev.payload["gap"] != 0:
                continue
            older = {k: i for k, i in h.received(p, ev.seq).items() if i["v"] < v}
            for q, ev_q in by_proc.items():
                if q == p:
                    continue
                got = h.received(q, ev_q.seq)
                for k, idobj in older.items():
                    if k not in got:
                        return _fail(
                            name,
                            [ev.seq, ev_q.seq],
                            f"{p} installed view {v} with gap 0 having received {label(idobj)}; "
                            f"{q} installed view {v} without it",
                        )
    return Verdict(name, PASS)


def check_install_flush(trace: Trace) -> Verdict:
    """Each install of v with gap g follows a flush at height v+g from every live member."""
    name = "install_flush"
    h = History(trace)
    flushes: dict[str, list[tuple[int, str, int]]] = defaultdict(list)
    for e in h.events:
        if e.kind != "packet-in":
            continue
        pkt = e.payload["pkt"]
        if pkt["k"] == "flush":
            flushes[e.process].append((e.seq, e.payload["from"], pkt["b"]))
        elif pkt["k"] in ("don", "codon"):
            flushes[e.process].append((e.seq, e.payload["from"], pkt["b"]["fh"]))
    for e in h.events:
        if e.kind != "install":
            continue
        target = e.payload["view"] + e.payload["gap"]
        got = set()
        for p, limit in h.ancestry(e.process):
            cap = min(e.seq, limit)
            got.update((src, hh) for s, src, hh in flushes.get(p, ()) if s < cap)
        for q in e.payload["live"]:
            if (q, target) not in got:
                return _fail(
                    name, [e.seq], f"{e.process} installed view {e.payload['view']} without flush {target} from {q}"
                )
    return Verdict(name, PASS)


def check_view_agreement(trace: Trace) -> Verdict:
    """Report-only: installers of v+1 delivered the same view-v messages."""
    name = "view_agreement"
    h = History(trace)
    for v, by_proc in sorted(_installs(h).items()):
        sets = {}
        for p, ev in by_proc.items():
            sets[p] = {k for k in h.familiar(p, ev.seq) if json.loads(k)["v"] == v - 1}
        procs = sorted(sets)
        for q in procs[1:]:
            if sets[q] != sets[procs[0]]:
                return _fail(
                    name,
                    [by_proc[procs[0]].seq, by_proc[q].seq],
                    f"{procs[0]} and {q} installed view {v} with different view-{v - 1} deliveries",
                    hard=False,
                )
    return Verdict(name, PASS, hard=False)


# --- take-up uniqueness and effective routes ----------------------------

def check_unique_takeup(trace: Trace) -> Verdict:
    name = "unique_takeup"
    h = History(trace)
    takeups: dict[str, list[tuple[int, str, str]]] = defaultdict(list)
    for e in h.events:
        if e.kind == "takeup":
            takeups[e.process].append((e.seq, key_of(e.payload["id"]), e.payload["sender"]))

    def effective(pid: str, k: str):
        """(seq, sender) of the take-up of ``k`` visible at ``pid``."""
        found = []
        for p, limit in h.ancestry(pid):
            found += [(s, snd) for s, kk, snd in takeups.get(p, ()) if kk == k and s < limit]
        return found

    sent_msgs: dict[str, set[str]] = defaultdict(set)
    for e in h.events:
        if e.kind == "queue" and e.payload["pkt"]["k"] == "msg":
            body = e.payload["pkt"]["b"]
            sent_msgs[e.process].add(key_of({"o": body["o"], "v": body["v"], "vt": body["vt"]}))

    for pid in sorted(takeups):
        for seq, k, _ in takeups[pid]:
            hits = effective(pid, k)
            if len(hits) > 1:
                return _fail(name, [s for s, _ in hits], f"{pid} took up {label(json.loads(k))} more than once")
            orig = json.loads(k)["o"]
            route = [pid]
            cur = pid
            seqs = [seq]
            while True:
                hits = effective(cur, k)
                if not hits:
                    return _fail(name, seqs, f"{cur} forwarded {label(json.loads(k))} without taking it up")
                s, snd = hits[0]
                if k not in sent_msgs.get(snd, ()):
                    return _fail(name, seqs + [s], f"{snd} never sent {label(json.loads(k))}")
                route.append(snd)
                if snd == orig:
                    break
                if len(route) > len(h.by_proc) + 1:
                    return _fail(name, seqs, f"routing cycle for {label(json.loads(k))}: {route}")
                cur = snd
                seqs.append(s)
            senders = list(reversed(route[1:]))  # R0 = orig ... R(k-1)
            views = [h.r(x) for x in senders]
            if any(not a < b for a, b in zip(views, views[1:])):
                return _fail(
                    name,
                    seqs,
                    f"route of {label(json.loads(k))} to {pid} is {senders} with removal views {views}",
                )
    return Verdict(name, PASS)


# --- history axioms ------------------------------------------------------

def check_history_axioms(trace: Trace) -> Verdict:
    name = "history_axioms"
    h = History(trace)

    # View changes agree everywhere.
    seen: dict[int, tuple] = {}
    for e in h.events:
        if e.kind != "notify":
            continue
        v, n = e.payload["view"], e.payload["note"]
        if n["k"] == "join":
            c = ("join", n["pid"])
        elif n["k"] == "remove":
            c = ("remove", n["pid"])
        elif n["k"] == "dead":
            c = ("remove", e.process)
        else:
            c = ("join", n["pid"])
        if seen.setdefault(v, (c, e.seq))[0] != c:
            return _fail(name, [seen[v][1], e.seq], f"view {v} announced as {seen[v][0]} and {c}")

    # Per-process order: notifications consecutive, nothing after a halt.
    notified: dict[str, int] = {}
    known_live: dict[str, set[str]] = {}
    removed_known: dict[str, set[str]] = defaultdict(set)
    last_ord: dict[tuple[str, str], int] = {}
    queued: dict[tuple[str, str, int], tuple[int, dict]] = {}
    outstanding_self: dict[str, set[int]] = defaultdict(set)
    dropped_note: dict[str, int] = {}
    halted_at: dict[str, int] = {}
    roster = set(h.roster)
    for p in roster:
        notified[p] = 0
        known_live[p] = set(roster)

    for e in h.events:
        p = e.process
        if p in halted_at and e.kind != "discard":
            return _fail(name, [halted_at[p], e.seq], f"{p} acted after halting")
        if e.kind == "discard":
            if "view" in e.payload:
                dropped_note[p] = e.seq
            continue
        if e.kind == "halt":
            halted_at[p] = e.seq
            continue
        if p not in notified:
            if not (e.kind == "notify" and "parent" in e.payload):
                return _fail(name, [e.seq], f"{p} acted before being created")
            parent = e.payload["parent"]
            if parent in halted_at:
                return _fail(name, [halted_at[parent], e.seq], f"{p} created after its parent {parent} halted")
            notified[p] = e.payload["view"]
            known_live[p] = set(known_live.get(parent, set())) | {p}
            removed_known[p] = set(removed_known.get(parent, set()))
            continue
        if e.kind == "notify":
            v = e.payload["view"]
            if v != notified[p] + 1:
                return _fail(name, [e.seq], f"{p} dequeued view {v} after view {notified[p]}")
            if outstanding_self[p]:
                return _fail(name, sorted(outstanding_self[p]) + [e.seq], f"{p} took a notification with self packets pending")
            notified[p] = v
            n = e.payload["note"]
            if n["k"] == "join":
                known_live[p].add(n["pid"])
            elif n["k"] == "remove":
                known_live[p].discard(n["pid"])
                removed_known[p].add(n["pid"])
        elif e.kind == "queue":
            pkt = e.payload["pkt"]
            if pkt["h"] != notified[p]:
                return _fail(name, [e.seq], f"{p} stamped height {pkt['h']} at height {notified[p]}")
            targets = e.payload["to"]
            if len(set(targets)) != len(targets) or len(targets) != len(e.payload["ords"]):
                return _fail(name, [e.seq], f"{p} queued a malformed multicast")
            for t, k in zip(targets, e.payload["ords"]):
                if t not in known_live[p]:
                    return _fail(name, [e.seq], f"{p} queued to {t}, which is not live to it")
                ch = (p, t)
                if k != last_ord.get(ch, 0) + 1:
                    return _fail(name, [e.seq], f"channel {p}->{t} ordinal {k} out of sequence")
                last_ord[ch] = k
                queued[(p, t, k)] = (e.seq, pkt)
                if t == p:
                    outstanding_self[p].add(k)
        elif e.kind == "packet-in":
            src, k = e.payload["from"], e.payload["ord"]
            q = queued.pop((src, p, k), None)
            if q is None:
                return _fail(name, [e.seq], f"{p} received {src}#{k}, which was never queued or was already received")
            if q[1] != e.payload["pkt"]:
                return _fail(name, [q[0], e.seq], f"{p} received {src}#{k} with altered contents")
            if src in removed_known[p]:
                return _fail(name, [e.seq], f"{p} received from {src} after processing its removal")
            if e.payload["pkt"]["h"] > notified[p]:
                return _fail(name, [q[0], e.seq], f"{p} at view {notified[p]} received a packet of height {e.payload['pkt']['h']}")
            if src == p:
                outstanding_self[p].discard(k)
    # FIFO without gaps: per channel, received ordinals form a prefix 1..m.
    got: dict[tuple[str, str], list[tuple[int, int]]] = defaultdict(list)
    for e in h.events:
        if e.kind == "packet-in":
            got[(e.payload["from"], e.process)].append((e.payload["ord"], e.seq))
    for ch, lst in got.items():
        for i, (k, s) in enumerate(lst, start=1):
            if k != i:
                return _fail(name, [s], f"channel {ch[0]}->{ch[1]} delivered #{k} as its packet number {i}")

    if trace.status != "timeout":
        for p, s in dropped_note.items():
            if p not in halted_at:
                return _fail(name, [s], f"{p} lost a notification but never halted")
        for p, s in halted_at.items():
            if p not in h.removal_view:
                return _fail(name, [s], f"{p} halted but was never removed")
        for p, v in h.removal_view.items():
            if p in notified and p not in halted_at:
                ev = [e.seq for e in h.events if e.kind == "notify" and e.payload["view"] == v][:1]
                return _fail(name, ev or [0], f"{p} was removed but never halted")
    return Verdict(name, PASS)


# --- donation correspondence -----------------------------------------------

@dataclass
class DonationCase:
    donor: str  # P
    joiner: str  # G
    parent: str  # D
    view: int
    side: str  # "donation" (at G) or "codonation" (at P)
    expected: list[tuple[str, str]]
    actual: list[tuple[str, str]]
    seq: int

    @property
    def matches(self) -> bool:
        return self.expected == self.actual


def donation_oracle(trace: Trace) -> list[DonationCase]:
    """Expected vs. simulated donation sub-transactions for the first join."""
    h = History(trace)
    joins = sorted((v, c) for v, c in h.view_changes.items() if c[0] == "join")
    if not joins:
        return []
    v, (_, g, d) = joins[0]
    if g not in h.fork_seq:
        return []
    g_start = h.fork_seq[g]

    note_seq: dict[str, int] = {}
    for e in h.events:
        if e.kind == "notify" and e.payload["view"] == v:
            note_seq.setdefault(e.process, e.seq)

    # Omniscient channel record: (src, dst) -> [(ord, queue seq, pkt, dequeue seq or None)]
    chan: dict[tuple[str, str], dict[int, list]] = defaultdict(dict)
    for e in h.events:
        if e.kind == "queue":
            for t, k in zip(e.payload["to"], e.payload["ords"]):
                chan[(e.process, t)][k] = [e.seq, e.payload["pkt"], None]
        elif e.kind == "packet-in":
            rec = chan[(e.payload["from"], e.process)].get(e.payload["ord"])
            if rec is not None:
                rec[2] = e.seq

    def untimely(src: str, dst: str):
        if src not in note_seq or dst not in note_seq:
            return None
        out = []
        for k in sorted(chan[(src, dst)]):
            qs, pkt, ds = chan[(src, dst)][k]
            if qs < note_seq[src] and (ds is None or ds > note_seq[dst]):
                out.append(pkt)
        return out

    def pkt_id(pkt) -> tuple[str, dict]:
        b = pkt["b"]
        idobj = {"o": b["o"], "v": b["v"], "vt": b["vt"]}
        return key_of(idobj), idobj

    def subtx(proc: str, ctx: str, sender: str):
        return [
            (e.payload["op"], key_of(e.payload["id"]))
            for e in h.by_proc.get(proc, ())
            if e.kind == "subtx" and e.payload["ctx"] == ctx and e.payload["sender"] == sender
        ]

    cases = []
    roster = set(h.roster)
    for e in h.by_proc.get(g, ()):
        if not (e.kind == "packet-in" and e.payload["pkt"]["k"] == "don"):
            continue
        p = e.payload["from"]
        if p not in roster:
            continue
        unt = untimely(p, d)
        if unt is not None:
            expected = []
            for pkt in unt:
                if pkt["k"] == "msg":
                    expected.append(("msg", pkt_id(pkt)[0]))
                elif pkt["k"] == "ack" and pkt["b"]["o"] != d:
                    expected.append(("ack", key_of(pkt["b"])))
            cases.append(DonationCase(p, g, d, v, "donation", expected, subtx(g, "don", p), e.seq))

        codon = [
            x for x in h.by_proc.get(p, ())
            if x.kind == "packet-in" and x.payload["pkt"]["k"] == "codon" and x.payload["from"] == g
        ]
        unt_back = untimely(d, p)
        if not codon or unt_back is None:
            continue
        expected = []
        for pkt in unt_back:
            if pkt["k"] == "msg" and pkt["b"]["o"] != d:
                expected.append(("msg", pkt_id(pkt)[0]))
            elif pkt["k"] == "ack":
                expected.append(("ack", key_of(pkt["b"])))
        for k in sorted(chan[(g, g)]):
            qs, pkt, _ = chan[(g, g)][k]
            if g_start < qs < e.seq and pkt["k"] == "msg":
                expected.append(("msg", pkt_id(pkt)[0]))
        cases.append(DonationCase(p, g, d, v, "codonation", expected, subtx(p, "codon", g), codon[0].seq))
    return cases


def check_donation_correspondence(trace: Trace) -> Verdict:
    name = "donation_correspondence"
    for c in donation_oracle(trace):
        if not c.matches:
            return _fail(
                name,
                [c.seq],
                f"{c.side} between {c.donor} and {c.joiner}: expected "
                f"{[(op, label(json.loads(k))) for op, k in c.expected]}, simulated "
                f"{[(op, label(json.loads(k))) for op, k in c.actual]}",
            )
    return Verdict(name, PASS)


# --- driver --------------------------------------------------------------

HARD_CHECKS = (
    check_history_axioms,
    check_causal_order,
    check_progress,
    check_central_lemma,
    check_install_flush,
    check_unique_takeup,
    check_donation_correspondence,
)


def run_all_checks(trace: Trace) -> list[Verdict]:
    return [check(trace) for check in HARD_CHECKS] + [check_view_agreement(trace)]


def render_verdicts(verdicts: list[Verdict]) -> str:
    return "".join(v.render() + "\n" for v in verdicts)
