"""Queue-length approximation by single-server FIFO emulation.

Between two messages from a server, the load balancer runs an emulated
FIFO queue for it: the emulation starts from the reported queue length,
every job routed to the server joins it, and every emulated job carries an
*estimated* service requirement. The three estimators are

* ``Basic``: every requirement is infinite, so nothing ever departs.
* ``MSR``: every requirement equals the mean requirement.
* ``MSRx(x)``: the first ``x - 1`` jobs assigned since the last message
  get the mean requirement, every later one is infinite.

The emulation keeps absolute finish times rather than remaining work, so the
event-driven path (:meth:`EmulatedQueue.depart`) and the time-driven path
(:meth:`EmulatedQueue.advance_to`) land on bit-identical states.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass
from enum import Enum

INF = math.inf


class ApproxKind(str, Enum):
    BASIC = "basic"
    MSR = "msr"
    MSRX = "msrx"


@dataclass(frozen=True)
class ApproxAlgo:
    kind: ApproxKind
    x: int | None = None

    def __post_init__(self):
        kind = ApproxKind(self.kind)
        object.__setattr__(self, "kind", kind)
        if kind is ApproxKind.MSRX:
            if self.x is None or int(self.x) != self.x or self.x < 1:
                raise ValueError(f"MSR-x needs an integer x >= 1, got {self.x!r}")
        elif self.x is not None:
            raise ValueError(f"{kind.value} takes no x")

    @classmethod
    def basic(cls) -> "ApproxAlgo":
        return cls(ApproxKind.BASIC)

    @classmethod
    def msr(cls) -> "ApproxAlgo":
        return cls(ApproxKind.MSR)

    @classmethod
    def msrx(cls, x: int) -> "ApproxAlgo":
        return cls(ApproxKind.MSRX, x)

    @property
    def finite_budget(self) -> float:
        """How many finite estimates one emulation may hand out."""
        if self.kind is ApproxKind.BASIC:
            return 0
        if self.kind is ApproxKind.MSR:
            return INF
        return self.x - 1

    @property
    def label(self) -> str:
        if self.kind is ApproxKind.MSRX:
            return f"msr-{self.x}"
        return self.kind.value


class EmulatedQueue:
    """Load-balancer-side emulation of one server between messages.

    ``mean_requirement`` is in work units and ``rate`` is the work drained per
    time unit, so an emulated job with the mean estimate occupies the
    emulated server for ``mean_requirement / rate`` time units.

    The FIFO is stored run-length encoded as ``[requirement, count]`` pairs,
    which keeps re-anchoring O(1) even for huge reported queues.
    """

    __slots__ = (
        "algo",
        "mean_requirement",
        "rate",
        "anchor_time",
        "anchor_length",
        "emu_departures",
        "finite_assigned",
        "length",
        "head_finish",
        "clock",
        "epoch",
        "_runs",
    )

    def __init__(self, algo: ApproxAlgo, mean_requirement: float = 1.0, rate: float = 1.0):
        if mean_requirement <= 0 or rate <= 0:
            raise ValueError("mean_requirement and rate must be positive")
        self.algo = algo
        self.mean_requirement = mean_requirement
        self.rate = rate
        self.epoch = 0
        self.on_message(0, 0)
        self.epoch = 0

    # -- estimates -----------------------------------------------------------

    @property
    def truncation_cap(self) -> float:
        return self.algo.x - 1 if self.algo.kind is ApproxKind.MSRX else INF

    def _estimate(self) -> float:
        if self.finite_assigned < self.algo.finite_budget:
            self.finite_assigned += 1
            return self.mean_requirement
        return INF

    def _push(self, requirement: float, count: int) -> None:
        runs = self._runs
        if runs and runs[-1][0] == requirement:
            runs[-1][1] += count
        else:
            runs.append([requirement, count])

    def _finish_from(self, start: float) -> float:
        req = self._runs[0][0]
        if req == INF:
            return INF
        return start + (req if self.rate == 1 else req / self.rate)

    # -- transitions ---------------------------------------------------------

    def on_message(self, time: float, queue_length: int) -> "EmulatedQueue":
        """Discard the emulation and re-anchor it at a reported queue length."""
        if queue_length < 0:
            raise ValueError("queue_length must be >= 0")
        self.anchor_time = time
        self.anchor_length = queue_length
        self.clock = time
        self.emu_departures = 0
        self.finite_assigned = 0
        self.length = queue_length
        self.epoch += 1
        self._runs = deque()
        if queue_length:
            finite = min(queue_length, self.algo.finite_budget)
            if finite:
                self._push(self.mean_requirement, int(finite))
                self.finite_assigned = int(finite)
            if queue_length > finite:
                self._push(INF, queue_length - int(finite))
            self.head_finish = self._finish_from(time)
        else:
            self.head_finish = INF
        return self

    def on_routed_arrival(self, time: float) -> "EmulatedQueue":
        """Append one emulated job for a job the load balancer just routed here."""
        requirement = self._estimate()
        was_empty = self.length == 0
        if time > self.clock:
            self.clock = time
        self._push(requirement, 1)
        self.length += 1
        if was_empty:
            self.head_finish = self._finish_from(time)
        return self

    def depart(self, time: float) -> None:
        """Complete the head job; ``time`` must equal :attr:`head_finish`."""
        if time != self.head_finish:
            raise ValueError(f"no emulated departure due at {time!r}")
        self._pop_head()

    def _pop_head(self) -> None:
        runs = self._runs
        finish = self.head_finish
        runs[0][1] -= 1
        if runs[0][1] == 0:
            runs.popleft()
        self.length -= 1
        self.emu_departures += 1
        self.clock = finish
        self.head_finish = self._finish_from(finish) if runs else INF

    def advance_to(self, time: float) -> int:
        """Drain the emulation up to ``time``; returns the departures it caused."""
        if time < self.clock:
            raise ValueError("emulation cannot run backwards")
        n = 0
        while self.head_finish <= time:
            self._pop_head()
            n += 1
        self.clock = time
        return n

    def advance(self, dt: float) -> int:
        if dt < 0:
            raise ValueError("dt must be >= 0")
        return self.advance_to(self.clock + dt)

    # -- views ---------------------------------------------------------------

    @property
    def next_departure_time(self) -> float:
        return self.head_finish

    @property
    def head_remaining(self) -> float:
        """Remaining estimated work of the head job at :attr:`clock`."""
        if not self.length:
            return 0
        if self.head_finish == INF:
            return INF
        return (self.head_finish - self.clock) * self.rate

    @property
    def emu_fifo(self) -> list[float]:
        """Remaining estimated work per emulated job, head first (small queues only)."""
        out: list[float] = []
        for req, count in self._runs:
            out.extend([req] * count)
        if out:
            out[0] = self.head_remaining
        return out

    def state(self) -> tuple:
        return (
            self.anchor_time,
            self.anchor_length,
            self.emu_departures,
            self.finite_assigned,
            self.length,
            self.head_finish,
            tuple(tuple(r) for r in self._runs),
        )

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, EmulatedQueue):
            return NotImplemented
        return self.algo == other.algo and self.state() == other.state()

    __hash__ = None

    def __repr__(self) -> str:
        return (
            f"EmulatedQueue({self.algo.label}, length={self.length}, "
            f"departures={self.emu_departures}, head_finish={self.head_finish})"
        )


def approximation_error(queue_length: int, emu: EmulatedQueue) -> int:
    return abs(queue_length - emu.length)
