"""Application-side callbacks and the scripted Main thread.

The reference application keeps an append-only delivery log.  Logs are
tuples, so snapshots taken at a fork never alias.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Protocol

from .core import ProcessId


class UlpCallbacks(Protocol):
    def ground_state(self) -> Any: ...

    def apply_message(self, data: Any, payload: str, originator: ProcessId) -> Any: ...

    def apply_join(self, data: Any, pid: ProcessId) -> Any: ...

    def apply_removal(self, data: Any, pid: ProcessId) -> Any: ...


@dataclass(frozen=True)
class LogEntry:
    kind: str  # "msg" | "join" | "removal"
    pid: ProcessId
    payload: str | None = None

    def render(self) -> str:
        if self.kind == "msg":
            return f"msg {self.pid} {self.payload}"
        return f"{self.kind} {self.pid}"


DeliveryLog = tuple  # tuple[LogEntry, ...]


def log_ground_state() -> DeliveryLog:
    return ()


def log_apply_message(log: DeliveryLog, payload: str, originator: ProcessId) -> DeliveryLog:
    return log + (LogEntry("msg", originator, payload),)


def log_apply_join(log: DeliveryLog, pid: ProcessId) -> DeliveryLog:
    return log + (LogEntry("join", pid),)


def log_apply_removal(log: DeliveryLog, pid: ProcessId) -> DeliveryLog:
    return log + (LogEntry("removal", pid),)


def render_log(log: DeliveryLog) -> str:
    return "".join(e.render() + "\n" for e in log)


def delivered_count(log: DeliveryLog) -> int:
    return sum(1 for e in log if e.kind == "msg")


class LogApp:
    """Reference ULP: every callback appends to the delivery log."""

    def ground_state(self) -> DeliveryLog:
        return log_ground_state()

    def apply_message(self, data, payload, originator):
        return log_apply_message(data, payload, originator)

    def apply_join(self, data, pid):
        return log_apply_join(data, pid)

    def apply_removal(self, data, pid):
        return log_apply_removal(data, pid)


@dataclass(frozen=True)
class ScriptStep:
    payload: str
    at_tick: int = 0
    after_deliveries: int = 0


@dataclass
class MainScript:
    """Deterministic stand-in for a process's Main thread.

    Steps run in order.  A step fires once the tick has reached ``at_tick``
    and the log holds at least ``after_deliveries`` message entries.
    """

    steps: list[ScriptStep] = field(default_factory=list)
    position: int = 0

    @property
    def exhausted(self) -> bool:
        return self.position >= len(self.steps)

    def ready(self, tick: int, log: DeliveryLog) -> bool:
        if self.exhausted:
            return False
        step = self.steps[self.position]
        return tick >= step.at_tick and delivered_count(log) >= step.after_deliveries

    def next_wakeup(self) -> int | None:
        """Earliest tick at which the next step could become ready."""
        if self.exhausted:
            return None
        return self.steps[self.position].at_tick


def script_step(script: MainScript, tick: int, log: DeliveryLog, halted: bool = False) -> str | None:
    """Advance ``script`` by one step if it is due; return the payload."""
    if halted or not script.ready(tick, log):
        return None
    payload = script.steps[script.position].payload
    script.position += 1
    return payload
