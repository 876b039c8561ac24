"""Dynamic environment: arrivals, FIFO non-idling servers, departures."""

from __future__ import annotations

from dataclasses import dataclass, field

from ..metrics import MetricsLog
from ..routing import PolicyBundle
from .config import EnvConfig
from .event import run_event_engine
from .inputs import InputStream
from .slot import InvariantError, run_slot_engine


@dataclass
class Job:
    id: int
    arrival_time: float
    nominal_requirement: float
    assigned_server: int | None = None
    completion_time: float | None = None

    def __post_init__(self):
        if not self.nominal_requirement > 0:
            raise ValueError("nominal_requirement must be > 0")
        if self.completion_time is not None and self.completion_time < self.arrival_time:
            raise ValueError("a job cannot complete before it arrives")


@dataclass
class ServerState:
    index: int
    fifo: list = field(default_factory=list)
    head_remaining: float = 0
    departures: int = 0
    cumulative_idle: float = 0
    rate: float = 1.0

    @property
    def queue_length(self) -> int:
        return len(self.fifo)


def nominal_workload(state: ServerState) -> float:
    """Remaining work at unit rate: the head's remainder plus every queued requirement."""
    if not state.fifo:
        return 0
    return state.head_remaining + sum(job.nominal_requirement for job in state.fifo[1:])


def job_of(log: MetricsLog, k: int) -> Job:
    return Job(k, log.arrival_times[k], log.requirements[k], log.assigned[k], log.completion_times[k])


def run(config: EnvConfig, bundle: PolicyBundle) -> MetricsLog:
    if config.engine == "slot":
        return run_slot_engine(config, bundle)
    return run_event_engine(config, bundle)


__all__ = [
    "EnvConfig",
    "InputStream",
    "InvariantError",
    "Job",
    "ServerState",
    "job_of",
    "nominal_workload",
    "run",
    "run_event_engine",
    "run_slot_engine",
]
