"""Server-to-load-balancer communication patterns.

``RT`` sends on a fixed period, ``DT`` after every ``x`` departures and ``ET``
whenever the error between the true queue and the emulation reaches ``x``.
ET servers run a mirror of the load balancer's emulation to know that error.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import TYPE_CHECKING

from .approx import ApproxAlgo, ApproxKind, EmulatedQueue

if TYPE_CHECKING:
    from .metrics import MetricsLog


class CommKind(str, Enum):
    RT = "rt"
    DT = "dt"
    ET = "et"


@dataclass(frozen=True)
class CommPattern:
    kind: CommKind
    x: int | None = None
    r: float | None = None

    def __post_init__(self):
        kind = CommKind(self.kind)
        object.__setattr__(self, "kind", kind)
        if kind is CommKind.RT:
            if self.r is None or not self.r > 0:
                raise ValueError(f"RT needs a rate r > 0, got {self.r!r}")
        else:
            if self.x is None or int(self.x) != self.x or self.x < 1:
                raise ValueError(f"{kind.value.upper()} needs an integer x >= 1, got {self.x!r}")

    @classmethod
    def rt(cls, r: float) -> "CommPattern":
        return cls(CommKind.RT, r=r)

    @classmethod
    def dt(cls, x: int) -> "CommPattern":
        return cls(CommKind.DT, x=x)

    @classmethod
    def et(cls, x: int) -> "CommPattern":
        return cls(CommKind.ET, x=x)

    def period(self, slot: float | None = None) -> float:
        """Time between RT messages; with ``slot`` set, rounded to whole slots (>= 1)."""
        if self.kind is not CommKind.RT:
            raise ValueError("only RT has a period")
        if slot is None:
            return 1.0 / self.r
        return max(1, round(1.0 / (self.r * slot)))

    @property
    def label(self) -> str:
        if self.kind is CommKind.RT:
            return f"rt-{self.r:.6g}"
        return f"{self.kind.value}-{self.x}"


@dataclass(frozen=True)
class MessageEvent:
    server: int
    time: float
    queue_length: int


@dataclass
class ServerCommState:
    last_message_time: float = 0
    departures_since_message: int = 0
    messages: int = 0
    mirror: EmulatedQueue | None = field(default=None, compare=False)


def should_message(
    pattern: CommPattern,
    comm: ServerCommState,
    queue_length: int,
    now: float,
    slot: float | None = None,
) -> bool:
    if pattern.kind is CommKind.RT:
        return now - comm.last_message_time >= pattern.period(slot)
    if pattern.kind is CommKind.DT:
        return comm.departures_since_message >= pattern.x
    if comm.mirror is None:
        raise ValueError("ET needs a mirror of the load balancer's emulation")
    return abs(queue_length - comm.mirror.length) >= pattern.x


def emit_message(server: int, comm: ServerCommState, queue_length: int, now: float) -> MessageEvent:
    comm.last_message_time = now
    comm.departures_since_message = 0
    comm.messages += 1
    if comm.mirror is not None:
        comm.mirror.on_message(now, queue_length)
    return MessageEvent(server, now, queue_length)


def message_bound(
    pattern: CommPattern | None,
    algo: ApproxAlgo | None,
    departures: int,
    now: float,
    service_rate: float,
) -> float:
    """Largest message count a server may have sent given its departures so far.

    DT, and ET with Basic or MSR-x, send at most one message per ``x``
    departures. ET with MSR may additionally be pushed by emulated
    departures, at most ``service_rate * now / x`` of them. Other patterns
    carry no bound (``inf``).
    """
    if pattern is None or pattern.kind is CommKind.RT:
        return math.inf
    x = pattern.x
    if pattern.kind is CommKind.DT:
        return departures / x
    if algo is None:
        return math.inf
    if algo.kind is ApproxKind.MSR:
        return departures / x + service_rate * now / x
    return departures / x


def relative_communication(log: "MetricsLog") -> float | None:
    """Messages per departure, i.e. the fraction of the exact-state baseline used."""
    d = log.total_departures
    if d == 0:
        return None
    return log.total_messages / d
