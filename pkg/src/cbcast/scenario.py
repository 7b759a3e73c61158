"""Scenario files: parsing, validation, rendering and random generation.

Grammar (one statement per line, ``#`` starts a comment)::

    scenario   := { line }
    line       := setting | directive | drop | blank
    setting    := key "=" value
                  key: name | seed | max_ticks | main_delay | roster
                  (roster value is a space-separated list of process ids)
    directive  := "at" TICK verb
    verb       := "broadcast" PID PAYLOAD [ "after" COUNT ]
                | "join" PID "parent" PID
                | "remove" PID
                | "halt" PID
    drop       := "drop" PID PID "from" ORDINAL
                | "drop-notification" PID VIEW

PID and PAYLOAD are tokens without whitespace.  ``after COUNT`` delays a
broadcast until the process has delivered at least COUNT messages.
``drop A B from 3`` loses every packet on channel A->B from its third
packet on (ordinals start at 1).
"""

from __future__ import annotations

import hashlib
import random
from dataclasses import dataclass, field, replace
from pathlib import Path

from .core import ProcessId, ScenarioError, ViewId
from .gms import Membership

DEFAULT_MAX_TICKS = 50_000


@dataclass(frozen=True)
class Directive:
    tick: int
    verb: str  # broadcast | join | remove | halt
    pid: ProcessId
    payload: str = ""
    after: int = 0
    parent: ProcessId = ""

    def render(self) -> str:
        if self.verb == "broadcast":
            tail = f" after {self.after}" if self.after else ""
            return f"at {self.tick} broadcast {self.pid} {self.payload}{tail}"
        if self.verb == "join":
            return f"at {self.tick} join {self.pid} parent {self.parent}"
        return f"at {self.tick} {self.verb} {self.pid}"


@dataclass
class Scenario:
    name: str = "unnamed"
    seed: int = 0
    roster: list[ProcessId] = field(default_factory=list)
    max_ticks: int = DEFAULT_MAX_TICKS
    main_delay: int = 0
    directives: list[Directive] = field(default_factory=list)
    packet_drops: list[tuple[ProcessId, ProcessId, int]] = field(default_factory=list)
    notification_drops: list[tuple[ProcessId, ViewId]] = field(default_factory=list)

    def render(self) -> str:
        lines = [
            f"name = {self.name}",
            f"seed = {self.seed}",
            f"max_ticks = {self.max_ticks}",
            f"main_delay = {self.main_delay}",
            f"roster = {' '.join(self.roster)}",
        ]
        lines += [d.render() for d in self.directives]
        lines += [f"drop {s} {t} from {k}" for s, t, k in self.packet_drops]
        lines += [f"drop-notification {p} {v}" for p, v in self.notification_drops]
        return "\n".join(lines) + "\n"

    def digest(self) -> str:
        return hashlib.sha256(self.render().encode()).hexdigest()[:16]

    def view_changes(self) -> list[Directive]:
        """Join/remove directives in the order the GMS applies them."""
        changes = [d for d in self.directives if d.verb in ("join", "remove")]
        return sorted(changes, key=lambda d: d.tick)  # stable: file order on ties

    def membership(self) -> Membership:
        """Replay the view changes through a fresh GMS (validates them too)."""
        gms = Membership(self.roster)
        for d in self.view_changes():
            if d.verb == "join":
                gms.propose_join(d.pid, d.parent)
            else:
                gms.propose_remove(d.pid)
        return gms


def _int(tok: str, what: str, lineno: int) -> int:
    try:
        value = int(tok)
    except ValueError:
        raise ScenarioError(f"line {lineno}: {what} must be an integer, got {tok!r}") from None
    if value < 0:
        raise ScenarioError(f"line {lineno}: {what} must be non-negative")
    return value


def parse_scenario(text: str) -> Scenario:
    sc = Scenario()
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        toks = line.split()
        if "=" in line and toks[0] != "at":
            key, value = (part.strip() for part in line.split("=", 1))
            if key == "name":
                sc.name = value
            elif key == "seed":
                sc.seed = _int(value, "seed", lineno)
            elif key == "max_ticks":
                sc.max_ticks = _int(value, "max_ticks", lineno)
            elif key == "main_delay":
                sc.main_delay = _int(value, "main_delay", lineno)
            elif key == "roster":
                sc.roster = value.split()
            else:
                raise ScenarioError(f"line {lineno}: unknown setting {key!r}")
        elif toks[0] == "at":
            sc.directives.append(_parse_directive(toks, lineno))
        elif toks[0] == "drop":
            if len(toks) != 5 or toks[3] != "from":
                raise ScenarioError(f"line {lineno}: expected 'drop SRC DST from ORDINAL'")
            k = _int(toks[4], "ordinal", lineno)
            if k < 1:
                raise ScenarioError(f"line {lineno}: ordinals start at 1")
            sc.packet_drops.append((toks[1], toks[2], k))
        elif toks[0] == "drop-notification":
            if len(toks) != 3:
                raise ScenarioError(f"line {lineno}: expected 'drop-notification PID VIEW'")
            sc.notification_drops.append((toks[1], _int(toks[2], "view", lineno)))
        else:
            raise ScenarioError(f"line {lineno}: cannot parse {raw!r}")
    validate(sc)
    return sc


def _parse_directive(toks: list[str], lineno: int) -> Directive:
    if len(toks) < 4:
        raise ScenarioError(f"line {lineno}: incomplete directive")
    tick = _int(toks[1], "tick", lineno)
    verb = toks[2]
    if verb == "broadcast":
        if len(toks) == 5:
            return Directive(tick, verb, toks[3], payload=toks[4])
        if len(toks) == 7 and toks[5] == "after":
            return Directive(tick, verb, toks[3], payload=toks[4], after=_int(toks[6], "count", lineno))
        raise ScenarioError(f"line {lineno}: expected 'at T broadcast PID PAYLOAD [after N]'")
    if verb == "join":
        if len(toks) != 6 or toks[4] != "parent":
            raise ScenarioError(f"line {lineno}: expected 'at T join PID parent PID'")
        return Directive(tick, verb, toks[3], parent=toks[5])
    if verb in ("remove", "halt"):
        if len(toks) != 4:
            raise ScenarioError(f"line {lineno}: expected 'at T {verb} PID'")
        return Directive(tick, verb, toks[3])
    raise ScenarioError(f"line {lineno}: unknown directive {verb!r}")


def validate(sc: Scenario) -> Membership:
    """Check the scenario and its fault plan are legal and conforming."""
    if not sc.roster:
        raise ScenarioError("roster is empty")
    if len(set(sc.roster)) != len(sc.roster):
        raise ScenarioError("roster has duplicate ids")
    if sc.max_ticks < 1:
        raise ScenarioError("max_ticks must be positive")
    gms = sc.membership()
    known = set(gms.joined_at)
    removed = set(gms.removed_at)
    for d in sc.directives:
        if d.pid not in known:
            raise ScenarioError(f"{d.render()}: unknown process {d.pid}")
        if d.verb == "halt" and d.pid not in removed:
            # A halting process must eventually leave the view sequence.
            raise ScenarioError(f"{d.render()}: only removed processes may halt")
    halting = removed
    for pid, view in sc.notification_drops:
        if pid not in halting:
            raise ScenarioError(f"drop-notification {pid} {view}: {pid} never halts")
        if not gms.j(pid) < view <= gms.r(pid):
            raise ScenarioError(f"drop-notification {pid} {view}: {pid} is not notified of view {view}")
    for src, dst, _ in sc.packet_drops:
        if src not in known or dst not in known:
            raise ScenarioError(f"drop {src} {dst}: unknown process")
        if src not in removed and dst not in halting:
            raise ScenarioError(f"drop {src} {dst}: source is never removed and target never halts")
    return gms


def load_scenario(path: str | Path) -> Scenario:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ScenarioError(f"cannot read {path}: {exc}") from exc
    return parse_scenario(text)


# --- generation ----------------------------------------------------------

@dataclass(frozen=True)
class Limits:
    max_procs: int = 6
    max_view_changes: int = 8
    max_broadcasts: int = 50
    horizon: int = 400  # directives are spread over ticks [0, horizon)


def generate_scenario(rng: random.Random, index: int, limits: Limits = Limits()) -> Scenario:
    """One random conforming scenario.

    Every fourth scenario is biased towards a join landing while packets are
    in flight: a burst of broadcasts right before the first join.
    """
    n = rng.randint(2, min(6, limits.max_procs))
    roster = [f"p{i:02d}" for i in range(n)]
    members = list(roster)
    next_id = n
    directives: list[Directive] = []
    drops: list[tuple[str, str, int]] = []
    note_drops: list[tuple[str, int]] = []
    parents: set[str] = set()
    removals: list[tuple[str, int, int]] = []  # (pid, tick, view)
    joined_view = {p: 0 for p in roster}

    n_changes = rng.randint(0, limits.max_view_changes)
    change_ticks = sorted(rng.randrange(5, limits.horizon) for _ in range(n_changes))
    join_burst = index % 4 == 0
    view = 0
    for t in change_ticks:
        can_remove = len(members) > 1
        if rng.random() < 0.5 or not can_remove:
            parent = rng.choice(members)
            pid = f"p{next_id:02d}"
            next_id += 1
            directives.append(Directive(t, "join", pid, parent=parent))
            parents.add(parent)
            members.append(pid)
            view += 1
            joined_view[pid] = view
        else:
            pid = rng.choice(members)
            members.remove(pid)
            view += 1
            directives.append(Directive(t, "remove", pid))
            removals.append((pid, t, view))

    everyone = sorted(joined_view)
    for pid, t, rview in removals:
        # Parents are never halted early: their child would be orphaned.
        r = rng.random()
        if pid not in parents and r < 0.3:
            directives.append(Directive(max(0, t - rng.randint(0, 30)), "halt", pid))
        elif pid not in parents and r < 0.6:
            directives.append(Directive(t + rng.randint(0, 60), "halt", pid))
        if rng.random() < 0.25:
            others = [q for q in everyone if q != pid]
            if others:
                drops.append((pid, rng.choice(others), rng.randint(1, 6)))
        if rng.random() < 0.15 and pid not in parents and rview > joined_view[pid] + 1:
            note_drops.append((pid, rng.randint(joined_view[pid] + 1, rview)))
            if not any(d.verb == "halt" and d.pid == pid for d in directives):
                directives.append(Directive(t, "halt", pid))

    n_bcast = rng.randint(1, limits.max_broadcasts)
    first_join = next((d.tick for d in directives if d.verb == "join"), None)
    for k in range(n_bcast):
        pid = rng.choice(everyone)
        if join_burst and first_join is not None and k < n_bcast // 2:
            t = max(0, first_join - rng.randint(0, 8))
        else:
            t = rng.randrange(0, limits.horizon)
        after = rng.randint(0, 4) if rng.random() < 0.2 else 0
        directives.append(Directive(t, "broadcast", pid, payload=f"m{k}", after=after))

    directives.sort(key=lambda d: (d.tick, d.verb != "join" and d.verb != "remove"))
    sc = Scenario(
        name=f"gen{index:04d}",
        seed=rng.getrandbits(32),
        roster=roster,
        directives=directives,
        packet_drops=drops,
        notification_drops=note_drops,
    )
    validate(sc)
    return sc


def generate_scenarios(seed: int, count: int, limits: Limits = Limits()) -> list[Scenario]:
    rng = random.Random(seed)
    return [generate_scenario(rng, i, limits) for i in range(count)]


def donation_scenario(rng: random.Random, index: int) -> Scenario:
    """A fault-free scenario with traffic in flight when the first join lands.

    An optional removal before the join leaves forwarded copies in flight;
    an optional removal right after it makes the joiner forward messages
    before it has heard from every donor.
    """
    n = rng.randint(3, 5)
    roster = [f"p{i:02d}" for i in range(n)]
    parent = rng.choice(roster)
    t_join = rng.randint(15, 40)
    directives: list[Directive] = []
    others = [p for p in roster if p != parent]
    if rng.random() < 0.6:
        gone = rng.choice(others)
        others.remove(gone)
        directives.append(Directive(t_join - rng.randint(1, 10), "remove", gone))
    directives.append(Directive(t_join, "join", "p90", parent=parent))
    if len(others) > 1 and rng.random() < 0.5:
        directives.append(Directive(t_join + rng.randint(0, 3), "remove", others.pop()))
    senders = roster + ["p90"]
    for k in range(rng.randint(8, 24)):
        t = max(0, t_join + rng.randint(-12, 6))
        directives.append(Directive(t, "broadcast", rng.choice(senders), payload=f"m{k}"))
    directives.sort(key=lambda d: (d.tick, d.verb == "broadcast"))
    sc = Scenario(name=f"don{index:04d}", seed=rng.getrandbits(32), roster=roster, directives=directives)
    validate(sc)
    return sc


def donation_scenarios(seed: int, count: int) -> list[Scenario]:
    rng = random.Random(seed)
    return [donation_scenario(rng, i) for i in range(count)]


def with_seed(sc: Scenario, seed: int) -> Scenario:
    return replace(sc, seed=seed)
