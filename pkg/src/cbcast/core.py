"""Domain value types shared by the protocol, simulator and checkers.

Everything here is immutable.  Each type knows how to turn itself into a
JSON-compatible object (``to_obj``) and back (``from_obj``); :func:`encode`
renders the canonical text form used in traces (keys sorted, no spaces).
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Any, Iterable, Iterator, Mapping, TypeVar

ProcessId = str
ViewId = int

K = TypeVar("K")
V = TypeVar("V")


class CbcastError(Exception):
    """Base class for all errors raised by this package."""


class ConfigurationError(CbcastError):
    pass


class ProtocolViolation(CbcastError):
    """A precondition of a protocol procedure was broken by the caller."""


class InvariantViolation(CbcastError):
    """A runtime invariant monitor fired."""


class DecodeError(CbcastError):
    pass


class ScenarioError(CbcastError):
    """A scenario or fault plan is illegal."""


class FrozenMap(Mapping[K, V]):
    """Hashable mapping iterated in ascending key order."""

    __slots__ = ("_items", "_index", "_hash")

    def __init__(self, items: Mapping[K, V] | Iterable[tuple[K, V]] = ()):
        pairs = items.items() if isinstance(items, Mapping) else items
        self._items: tuple[tuple[K, V], ...] = tuple(sorted(pairs, key=lambda kv: kv[0]))
        self._index = dict(self._items)
        if len(self._index) != len(self._items):
            raise ValueError("duplicate keys")
        self._hash: int | None = None

    def __getitem__(self, key: K) -> V:
        return self._index[key]

    def __iter__(self) -> Iterator[K]:
        return (k for k, _ in self._items)

    def __len__(self) -> int:
        return len(self._items)

    def __eq__(self, other: object) -> bool:
        if isinstance(other, FrozenMap):
            return self._items == other._items
        return NotImplemented

    def __hash__(self) -> int:
        if self._hash is None:
            self._hash = hash(self._items)
        return self._hash

    def __repr__(self) -> str:
        body = ", ".join(f"{k}: {v!r}" for k, v in self._items)
        return f"{type(self).__name__}({{{body}}})"

    def __deepcopy__(self, memo):
        return self

    def set(self, key: K, value: V):
        d = dict(self._index)
        d[key] = value
        return type(self)(d)

    def without(self, key: K):
        d = dict(self._index)
        del d[key]
        return type(self)(d)


class VectorTime(FrozenMap[ProcessId, int]):
    """Vector time keyed by the members of one view."""

    def leq(self, other: "VectorTime") -> bool:
        """Pointwise comparison over the keys both vectors share."""
        return all(self[k] <= other[k] for k in self if k in other)

    def to_obj(self) -> dict:
        return dict(self._items)

    @classmethod
    def from_obj(cls, obj: Mapping[str, int]) -> "VectorTime":
        return cls({str(k): int(v) for k, v in obj.items()})


@dataclass(frozen=True, order=True)
class CounterPair:
    """Counts of original (``b``) and forwarded (``f``) message packets."""

    b: int = 0
    f: int = 0

    def __post_init__(self):
        if self.b < 0 or self.f < 0:
            raise ValueError(f"negative counter {self}")

    def to_obj(self) -> list[int]:
        return [self.b, self.f]

    @classmethod
    def from_obj(cls, obj) -> "CounterPair":
        b, f = obj
        return cls(int(b), int(f))


def counter_total(c: CounterPair) -> int:
    return c.b + c.f


@dataclass(frozen=True)
class MessageId:
    mview: ViewId
    mvt: VectorTime
    orig: ProcessId

    def to_obj(self) -> dict:
        return {"v": self.mview, "vt": self.mvt.to_obj(), "o": self.orig}

    @classmethod
    def from_obj(cls, obj) -> "MessageId":
        return cls(int(obj["v"]), VectorTime.from_obj(obj["vt"]), str(obj["o"]))

    def short(self) -> str:
        """Compact human label, e.g. ``A@0:1``."""
        return f"{self.orig}@{self.mview}:{self.mvt.get(self.orig, 0)}"


@dataclass(frozen=True)
class StampedMessage:
    payload: str
    orig: ProcessId
    mview: ViewId
    mvt: VectorTime

    def __post_init__(self):
        if self.orig not in self.mvt or self.mvt[self.orig] < 1:
            raise ValueError(f"message from {self.orig} is not stamped: {self.mvt!r}")

    @property
    def id(self) -> MessageId:
        return MessageId(self.mview, self.mvt, self.orig)

    def to_obj(self) -> dict:
        return {"p": self.payload, "o": self.orig, "v": self.mview, "vt": self.mvt.to_obj()}

    @classmethod
    def from_obj(cls, obj) -> "StampedMessage":
        return cls(str(obj["p"]), str(obj["o"]), int(obj["v"]), VectorTime.from_obj(obj["vt"]))


def message_id(msg: StampedMessage) -> MessageId:
    return msg.id


@dataclass(frozen=True)
class WaitRecord:
    """An unstable message kept by the process that multicast it."""

    msg: StampedMessage
    index: CounterPair
    iset: FrozenMap[ProcessId, CounterPair]
    kind: str  # "bcast" or "fwd"

    def __post_init__(self):
        if self.kind not in ("bcast", "fwd"):
            raise ValueError(f"bad wait record kind {self.kind!r}")

    def to_obj(self) -> dict:
        return {
            "m": self.msg.to_obj(),
            "i": self.index.to_obj(),
            "is": {k: v.to_obj() for k, v in self.iset.items()},
            "k": self.kind,
        }

    @classmethod
    def from_obj(cls, obj) -> "WaitRecord":
        return cls(
            StampedMessage.from_obj(obj["m"]),
            CounterPair.from_obj(obj["i"]),
            FrozenMap({str(k): CounterPair.from_obj(v) for k, v in obj["is"].items()}),
            str(obj["k"]),
        )


@dataclass(frozen=True)
class DonationBody:
    wait_set: tuple[WaitRecord, ...]
    mpkt_in: FrozenMap[ProcessId, CounterPair]
    ghost_height: ViewId
    flush_height: ViewId

    def to_obj(self) -> dict:
        return {
            "ws": [r.to_obj() for r in self.wait_set],
            "in": {k: v.to_obj() for k, v in self.mpkt_in.items()},
            "gh": self.ghost_height,
            "fh": self.flush_height,
        }

    @classmethod
    def from_obj(cls, obj) -> "DonationBody":
        return cls(
            tuple(WaitRecord.from_obj(r) for r in obj["ws"]),
            FrozenMap({str(k): CounterPair.from_obj(v) for k, v in obj["in"].items()}),
            int(obj["gh"]),
            int(obj["fh"]),
        )


PACKET_KINDS = ("msg", "ack", "ghost", "flush", "don", "codon")


@dataclass(frozen=True)
class Packet:
    """Wire packet.  ``body`` type depends on ``kind``:

    msg -> StampedMessage, ack -> MessageId, ghost/flush -> int,
    don/codon -> DonationBody.
    """

    kind: str
    body: Any
    piggyback_height: ViewId = 0

    def __post_init__(self):
        expected = {
            "msg": StampedMessage,
            "ack": MessageId,
            "ghost": int,
            "flush": int,
            "don": DonationBody,
            "codon": DonationBody,
        }.get(self.kind)
        if expected is None:
            raise DecodeError(f"unknown packet kind {self.kind!r}")
        if not isinstance(self.body, expected):
            raise TypeError(f"{self.kind} packet needs {expected.__name__}, got {type(self.body).__name__}")

    def to_obj(self) -> dict:
        body = self.body if isinstance(self.body, int) else self.body.to_obj()
        return {"k": self.kind, "b": body, "h": self.piggyback_height}

    @classmethod
    def from_obj(cls, obj) -> "Packet":
        kind = obj.get("k")
        raw = obj.get("b")
        if kind == "msg":
            body = StampedMessage.from_obj(raw)
        elif kind == "ack":
            body = MessageId.from_obj(raw)
        elif kind in ("ghost", "flush"):
            body = int(raw)
        elif kind in ("don", "codon"):
            body = DonationBody.from_obj(raw)
        else:
            raise DecodeError(f"unknown packet kind {kind!r}")
        return cls(kind, body, int(obj.get("h", 0)))


@dataclass(frozen=True)
class Notification:
    """A GMS view-change record: remove, join, new or dead."""

    kind: str
    pid: ProcessId | None = None
    parent: ProcessId | None = None

    def __post_init__(self):
        if self.kind not in ("remove", "join", "new", "dead"):
            raise ValueError(f"bad notification kind {self.kind!r}")
        if self.kind == "join" and (self.pid is None or self.parent is None):
            raise ValueError("join notification needs pid and parent")
        if self.kind in ("remove", "new") and self.pid is None:
            raise ValueError(f"{self.kind} notification needs pid")

    @classmethod
    def remove(cls, pid: ProcessId) -> "Notification":
        return cls("remove", pid)

    @classmethod
    def join(cls, pid: ProcessId, parent: ProcessId) -> "Notification":
        return cls("join", pid, parent)

    @classmethod
    def new(cls, pid: ProcessId) -> "Notification":
        return cls("new", pid)

    @classmethod
    def dead(cls) -> "Notification":
        return cls("dead")

    def to_obj(self) -> dict:
        obj: dict[str, Any] = {"k": self.kind}
        if self.pid is not None:
            obj["pid"] = self.pid
        if self.parent is not None:
            obj["parent"] = self.parent
        return obj

    @classmethod
    def from_obj(cls, obj) -> "Notification":
        return cls(str(obj["k"]), obj.get("pid"), obj.get("parent"))


def encode(value: Any) -> str:
    """Canonical one-line text form of a core value (or plain JSON data)."""
    obj = value.to_obj() if hasattr(value, "to_obj") else value
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def decode(cls, text: str):
    try:
        return cls.from_obj(json.loads(text))
    except (AttributeError, KeyError, TypeError, ValueError) as exc:
        raise DecodeError(f"cannot decode {cls.__name__} from {text!r}: {exc}") from exc
