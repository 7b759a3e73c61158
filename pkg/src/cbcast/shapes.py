"""Side-effect shape classification.

Every transaction queues packets in one of a small number of fixed
patterns, determined by the trigger and by a few facts about the process
state before and after.  :func:`classify` names the pattern a transaction
matched or raises :class:`InvariantViolation` if it matched none.
"""

from __future__ import annotations

from dataclasses import dataclass

from .core import InvariantViolation
from .protocol import Install, Output, ProcessState, Send, SubTx


@dataclass(frozen=True)
class StateFacts:
    v_gap: int
    fwd_waiting: bool
    bcast_waiting: bool
    launch_len: int
    fwd_queue_len: dict

    @classmethod
    def of(cls, s: ProcessState) -> "StateFacts":
        return cls(
            s.v_gap,
            bool(s.fwd_wait_set),
            bool(s.bcast_wait_set),
            len(s.launch_queue),
            {q: len(v) for q, v in s.fwd_queue.items()},
        )


def _kinds(outputs) -> list[str]:
    return [o.packet.kind for o in outputs if isinstance(o, Send)]


def _flush_tail(kinds: list[str], post: StateFacts) -> str:
    """The ghost/flush suffix CheckFlush leaves after a view-count bump."""
    if post.fwd_waiting:
        expect, label = [], "wait-forwarded"
    elif post.bcast_waiting:
        expect, label = ["ghost"], "ghost"
    else:
        expect, label = ["ghost", "flush"], "ghost-flush"
    if kinds != expect:
        raise InvariantViolation(f"expected {expect} after view change, got {kinds}")
    return label


def _ack_shape(kinds: list[str], pre_gap: int) -> str:
    if kinds == []:
        return "none"
    if pre_gap == 0:
        raise InvariantViolation(f"ack with no pending view queued {kinds}")
    if kinds in (["ghost"], ["flush"], ["ghost", "flush"]):
        return "-".join(kinds)
    raise InvariantViolation(f"ack produced {kinds}")


def _subtx_segments(outputs):
    """Split outputs at SubTx markers: (prefix, [(marker, segment), ...])."""
    prefix, segs = [], []
    cur = prefix
    for o in outputs:
        if isinstance(o, SubTx):
            segs.append((o, []))
            cur = segs[-1][1]
        else:
            cur.append(o)
    return prefix, segs


def classify(trigger: str, outputs: list[Output], pre: StateFacts, post: StateFacts, arg=None) -> str:
    """Return the shape label of one transaction.

    ``trigger`` is one of ``broadcast``, ``remove``, ``join``, ``run``,
    ``dead``, or a packet kind.  ``arg`` is the removed process for
    ``remove``.
    """
    kinds = _kinds(outputs)
    if trigger == "broadcast":
        expect = [] if pre.v_gap > 0 else ["msg"]
        if kinds != expect:
            raise InvariantViolation(f"broadcast produced {kinds}")
        return "broadcast-deferred" if pre.v_gap > 0 else "broadcast-sent"
    if trigger == "remove":
        n = pre.fwd_queue_len.get(arg, 0)
        if n:
            if kinds != ["msg"] * n:
                raise InvariantViolation(f"removal forwarded {kinds}, expected {n} messages")
            return "remove-forward"
        return "remove-" + _flush_tail(kinds, post)
    if trigger == "join":
        if kinds[:1] != ["don"]:
            raise InvariantViolation(f"join did not start with a donation: {kinds}")
        return "join-" + _flush_tail(kinds[1:], post)
    if trigger == "run":
        expect = [] if post.fwd_waiting else ["ghost", "flush"]
        if kinds != expect:
            raise InvariantViolation(f"child start produced {kinds}")
        return "run-" + ("wait-forwarded" if expect == [] else "ghost-flush")
    if trigger == "dead":
        if kinds:
            raise InvariantViolation(f"dead notification produced {kinds}")
        return "dead"
    if trigger == "msg":
        if kinds != ["ack"]:
            raise InvariantViolation(f"message receipt produced {kinds}")
        return "message-ack"
    if trigger == "ack":
        return "ack-" + _ack_shape(kinds, pre.v_gap)
    if trigger == "ghost":
        if kinds:
            raise InvariantViolation(f"ghost receipt produced {kinds}")
        return "ghost"
    if trigger == "flush":
        installed = any(isinstance(o, Install) for o in outputs)
        if not installed:
            if kinds:
                raise InvariantViolation(f"flush without install produced {kinds}")
            return "flush-wait"
        if kinds != ["msg"] * pre.launch_len:
            raise InvariantViolation(f"install drained {kinds}, launch queue held {pre.launch_len}")
        return "flush-install-launch" if kinds else "flush-install"
    if trigger in ("don", "codon"):
        prefix, segs = _subtx_segments(outputs)
        pk = _kinds(prefix)
        gap = pre.v_gap
        if trigger == "don":
            if pk != ["codon"]:
                raise InvariantViolation(f"donation reply was {pk}")
        for marker, seg in segs:
            sk = _kinds(seg)
            if marker.op == "msg":
                if sk != ["ack"]:
                    raise InvariantViolation(f"simulated receive produced {sk}")
            else:
                _ack_shape(sk, gap)
        if trigger == "don":
            return "donation" if segs else "donation-empty"
        installed = any(isinstance(o, Install) for o in outputs)
        if segs and installed:
            raise InvariantViolation("co-donation both replayed packets and installed")
        if installed:
            if pk != ["msg"] * pre.launch_len:
                raise InvariantViolation(f"co-donation install drained {pk}")
            return "codonation-install"
        if pk:
            raise InvariantViolation(f"co-donation queued {pk} outside sub-transactions")
        return "codonation-replay" if segs else "codonation-empty"
    raise InvariantViolation(f"unknown trigger {trigger!r}")
