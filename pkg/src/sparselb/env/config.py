from __future__ import annotations

import hashlib
import json
import math
from dataclasses import asdict, dataclass, field

SLOT_LAWS = ("geometric", "deterministic")
EVENT_LAWS = ("exponential", "deterministic", "uniform")


@dataclass
class EnvConfig:
    """Everything that defines the environment of one run.

    Slot engine: ``load`` is the per-slot arrival probability, servers finish
    one work unit per slot and requirements are integers (Geometric(p) with
    ``p`` defaulting to ``1/K``, or a deterministic value).

    Event engine: arrivals are Poisson, modulated by the piecewise-constant
    ``rate_profile`` (``[(start, rate), ...]``) or a constant ``load``.
    Nominal requirements have mean 1 (``exponential``, ``uniform`` on
    ``[1 - w, 1 + w]`` with ``w = service_param`` or 0.5, or
    ``deterministic``) and server ``i`` works at rate ``mu[i]``.
    """

    K: int
    horizon: float
    engine: str = "slot"
    load: float | None = None
    rate_profile: list | None = None
    service_law: str | None = None
    service_param: float | None = None
    mu: list | None = None
    seed: int = 0
    coupled: bool = False
    workload_stride: int = 1
    track_spread: bool = False
    record_message_times: bool = False
    trace: bool = False
    check_invariants: bool = False
    # infinite-backlog style warm start: every server begins with this many jobs
    initial_queue: int = 0
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.K < 1:
            raise ValueError("K must be >= 1")
        if not self.horizon > 0:
            raise ValueError("horizon must be > 0")
        if self.engine not in ("slot", "event"):
            raise ValueError(f"engine must be 'slot' or 'event', got {self.engine!r}")
        if self.service_law is None:
            self.service_law = "geometric" if self.engine == "slot" else "exponential"
        if self.workload_stride < 1:
            raise ValueError("workload_stride must be >= 1")
        if self.initial_queue < 0:
            raise ValueError("initial_queue must be >= 0")
        if self.engine == "slot":
            self._check_slot()
        else:
            self._check_event()

    def _check_slot(self):
        if self.service_law not in SLOT_LAWS:
            raise ValueError(f"slot engine needs integer requirements ({'/'.join(SLOT_LAWS)}), got {self.service_law!r}")
        if self.load is None or not 0 <= self.load <= 1:
            raise ValueError(f"slot engine needs a load in [0, 1], got {self.load!r}")
        if self.rate_profile is not None:
            raise ValueError("slot engine takes a constant load, not a rate profile")
        if int(self.horizon) != self.horizon:
            raise ValueError("slot engine horizon must be a whole number of slots")
        if self.service_law == "geometric":
            p = self.geometric_p
            if not 0 < p <= 1:
                raise ValueError(f"geometric p must be in (0, 1], got {p!r}")
        else:
            v = self.service_param if self.service_param is not None else 1
            if int(v) != v or v < 1:
                raise ValueError(f"deterministic slot requirement must be a positive integer, got {v!r}")
        if self.mu is not None and any(m != 1 for m in self.mu):
            raise ValueError("slot engine servers complete exactly one work unit per slot")

    def _check_event(self):
        if self.service_law not in EVENT_LAWS:
            raise ValueError(f"event engine service law must be one of {EVENT_LAWS}, got {self.service_law!r}")
        if self.rate_profile is None:
            if self.load is None:
                raise ValueError("event engine needs a load or a rate_profile")
            self.rate_profile = [(0.0, float(self.load))]
        profile = [(float(s), float(r)) for s, r in self.rate_profile]
        if not profile or profile[0][0] != 0:
            raise ValueError("rate_profile must start at time 0")
        for (s0, _), (s1, _) in zip(profile, profile[1:]):
            if not s1 > s0:
                raise ValueError("rate_profile start times must increase")
        for _, r in profile:
            if r < 0 or math.isnan(r):
                raise ValueError(f"arrival rates must be >= 0, got {r!r}")
        self.rate_profile = profile
        if self.mu is None:
            self.mu = [1.0] * self.K
        if len(self.mu) != self.K or any(not m > 0 for m in self.mu):
            raise ValueError("mu needs K positive rates")
        if self.service_law == "uniform":
            w = self.uniform_halfwidth
            if not 0 <= w < 1:
                raise ValueError("uniform half-width must be in [0, 1)")
        if self.service_law == "deterministic" and self.service_param is not None and not self.service_param > 0:
            raise ValueError("deterministic requirement must be > 0")

    @property
    def geometric_p(self) -> float:
        return self.service_param if self.service_param is not None else 1.0 / self.K

    @property
    def uniform_halfwidth(self) -> float:
        return self.service_param if self.service_param is not None else 0.5

    @property
    def mean_requirement(self):
        """Mean nominal requirement as the emulation sees it (whole slots in the slot engine)."""
        if self.engine == "slot":
            if self.service_law == "geometric":
                return max(1, round(1 / self.geometric_p))
            return int(self.service_param or 1)
        if self.service_law == "deterministic":
            return float(self.service_param or 1.0)
        return 1.0

    def service_rates(self) -> list:
        if self.engine == "slot":
            return [1] * self.K
        return list(self.mu)

    def digest(self, extra: str = "") -> str:
        blob = json.dumps(asdict(self), sort_keys=True, default=str) + extra
        return hashlib.sha256(blob.encode()).hexdigest()[:16]
