"""Oracle group membership service.

A single omniscient object owns the linear view sequence and every
process's notification queue.  Proposals take effect immediately: the new
view is appended and its notification is queued at every member of the
previous view (and at the process joining).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable

from .core import Notification, ProcessId, ScenarioError, ViewId
from .protocol import CbcastProcess, Output


@dataclass(frozen=True)
class View:
    index: ViewId
    members: frozenset[ProcessId]
    change: Notification | None  # join/remove record; None for view 0


@dataclass
class QueueEntry:
    view: ViewId
    note: Notification
    dropped: bool = False


@dataclass
class NotificationQueue:
    entries: list[QueueEntry] = field(default_factory=list)
    position: int = 0

    def head(self) -> QueueEntry | None:
        if self.position < len(self.entries):
            return self.entries[self.position]
        return None

    def pop(self) -> QueueEntry:
        entry = self.entries[self.position]
        self.position += 1
        return entry


class Membership:
    def __init__(self, roster: Iterable[ProcessId]):
        roster = frozenset(roster)
        if not roster:
            raise ScenarioError("roster is empty")
        self.views: list[View] = [View(0, roster, None)]
        self.queues: dict[ProcessId, NotificationQueue] = {p: NotificationQueue() for p in roster}
        self.joined_at: dict[ProcessId, ViewId] = {p: 0 for p in roster}
        self.removed_at: dict[ProcessId, ViewId] = {}
        self.parent_of: dict[ProcessId, ProcessId] = {}
        self._pending_drops: set[tuple[ProcessId, ViewId]] = set()

    @property
    def last(self) -> View:
        return self.views[-1]

    def j(self, pid: ProcessId) -> ViewId:
        return self.joined_at[pid]

    def r(self, pid: ProcessId) -> float:
        return self.removed_at.get(pid, float("inf"))

    def live_at(self, h: ViewId) -> set[ProcessId]:
        """Processes Q with j(Q) <= h < r(Q)."""
        return {q for q in self.joined_at if self.j(q) <= h < self.r(q)}

    def propose_join(self, pid: ProcessId, parent: ProcessId) -> View:
        last = self.last
        if pid in self.joined_at:
            raise ScenarioError(f"join of {pid}: identifier already used")
        if parent not in last.members:
            raise ScenarioError(f"join of {pid}: parent {parent} is not a member of view {last.index}")
        view = View(last.index + 1, last.members | {pid}, Notification.join(pid, parent))
        self.views.append(view)
        for q in sorted(last.members):
            self._enqueue(q, view.index, view.change)
        self.queues[pid] = NotificationQueue()
        self._enqueue(pid, view.index, Notification.new(pid))
        self.joined_at[pid] = view.index
        self.parent_of[pid] = parent
        return view

    def propose_remove(self, pid: ProcessId) -> View:
        last = self.last
        if pid not in last.members:
            raise ScenarioError(f"remove of {pid}: not a member of view {last.index}")
        if len(last.members) == 1:
            raise ScenarioError(f"remove of {pid} would leave the group empty")
        view = View(last.index + 1, last.members - {pid}, Notification.remove(pid))
        self.views.append(view)
        for q in sorted(view.members):
            self._enqueue(q, view.index, view.change)
        self._enqueue(pid, view.index, Notification.dead())
        self.removed_at[pid] = view.index
        return view

    def _enqueue(self, pid: ProcessId, view: ViewId, note: Notification) -> None:
        entry = QueueEntry(view, note, dropped=(pid, view) in self._pending_drops)
        self.queues[pid].entries.append(entry)

    def drop_notification(self, pid: ProcessId, view: ViewId) -> None:
        """Mark the notification of ``view`` at ``pid`` as lost.

        The drop may be registered before the view exists; it takes effect
        when the notification is queued.
        """
        self._pending_drops.add((pid, view))
        q = self.queues.get(pid)
        if q is not None:
            for e in q.entries:
                if e.view == view:
                    e.dropped = True


def fork_child(parent: CbcastProcess, child_id: ProcessId) -> tuple[CbcastProcess, list[Output]]:
    """Snapshot ``parent`` (before it runs its own join step) and start the child."""
    child = parent.fork()
    return child, child.prot_run(child_id)
