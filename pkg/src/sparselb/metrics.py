"""Run logs, CCDFs, the workload-gap statistic and their on-disk formats."""

from __future__ import annotations

import csv
import hashlib
import io
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

SUMMARY_COLUMNS = (
    "policy",
    "x",
    "load",
    "seed",
    "M",
    "D",
    "relative_comm",
    "sup_AQ",
    "mean_JCT",
    "median_JCT",
    "p99_JCT",
    "stream_digest",
)
CCDF_COLUMNS = ("value", "tail_prob")


def fmt(value) -> str:
    """Render a cell: floats with 9 significant digits, absent values empty."""
    if value is None:
        return ""
    if isinstance(value, bool):
        return str(int(value))
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        if math.isnan(value):
            return ""
        return f"{float(value):.9g}"
    return str(value)


@dataclass
class WorkloadTrace:
    """Samples of total K-system nominal workload vs. the coupled single server."""

    stride: int = 1
    times: list = field(default_factory=list)
    k_system: list = field(default_factory=list)
    s_system: list = field(default_factory=list)
    gap_min: float = math.inf
    gap_max: float = -math.inf
    observations: int = 0

    def observe(self, t, k_work, s_work) -> None:
        gap = k_work - s_work
        if gap < self.gap_min:
            self.gap_min = gap
        if gap > self.gap_max:
            self.gap_max = gap
        if self.observations % self.stride == 0:
            self.times.append(t)
            self.k_system.append(k_work)
            self.s_system.append(s_work)
        self.observations += 1


@dataclass
class MetricsLog:
    K: int
    horizon: float
    seed: int
    engine: str
    policy: str = ""
    config_digest: str = ""
    messages: list = field(default_factory=list)
    departures: list = field(default_factory=list)
    arrivals_per_server: list = field(default_factory=list)
    idle: list = field(default_factory=list)
    final_queue: list = field(default_factory=list)
    arrival_times: list = field(default_factory=list)
    requirements: list = field(default_factory=list)
    completion_times: list = field(default_factory=list)
    assigned: list = field(default_factory=list)
    aq_hist: list | None = None
    bound_violations: int = 0
    queue_area: float = 0.0
    queue_spread_max: float | None = None
    workload: WorkloadTrace | None = None
    message_times: list | None = None
    trace: list | None = None

    @classmethod
    def empty(cls, K: int, horizon: float, seed: int, engine: str, **kw) -> "MetricsLog":
        return cls(
            K=K,
            horizon=horizon,
            seed=seed,
            engine=engine,
            messages=[0] * K,
            departures=[0] * K,
            arrivals_per_server=[0] * K,
            idle=[0] * K,
            final_queue=[0] * K,
            **kw,
        )

    # -- record_* ------------------------------------------------------------

    def record_message(self, server: int, time) -> None:
        self.messages[server] += 1
        if self.message_times is not None:
            self.message_times[server].append(time)

    def record_departure(self, server: int) -> None:
        self.departures[server] += 1

    def record_arrival(self, time, requirement, server: int) -> int:
        job = len(self.arrival_times)
        self.arrival_times.append(time)
        self.requirements.append(requirement)
        self.completion_times.append(None)
        self.assigned.append(server)
        self.arrivals_per_server[server] += 1
        return job

    def record_completion(self, job: int, time) -> None:
        self.completion_times[job] = time

    def record_ae_sample(self, aq: int) -> None:
        hist = self.aq_hist
        while aq >= len(hist):
            hist.append(0)
        hist[aq] += 1

    def record_workload_sample(self, t, k_work, s_work) -> None:
        self.workload.observe(t, k_work, s_work)

    # -- totals --------------------------------------------------------------

    @property
    def total_messages(self) -> int:
        return sum(self.messages)

    @property
    def total_departures(self) -> int:
        return sum(self.departures)

    @property
    def total_arrivals(self) -> int:
        return len(self.arrival_times)

    @property
    def sup_aq(self) -> int | None:
        if self.aq_hist is None:
            return None
        nz = [v for v, c in enumerate(self.aq_hist) if c]
        return nz[-1] if nz else 0

    @property
    def mean_queue_length(self) -> float:
        return self.queue_area / (self.horizon * self.K)

    @property
    def stream_digest(self) -> str:
        return stream_digest(self.arrival_times, self.requirements)

    def default_warmup(self) -> int:
        return self.total_arrivals // 10

    def jct(self, warmup: int | None = None) -> np.ndarray:
        """Completion minus arrival for completed jobs past the warm-up prefix."""
        if warmup is None:
            warmup = self.default_warmup()
        arr = self.arrival_times[warmup:]
        done = self.completion_times[warmup:]
        return np.array([c - a for a, c in zip(arr, done) if c is not None], dtype=float)

    def summary_row(self, *, x=None, load=None, warmup: int | None = None) -> dict:
        from .comm import relative_communication

        jct = self.jct(warmup)
        has = jct.size > 0
        return {
            "policy": self.policy,
            "x": x,
            "load": load,
            "seed": self.seed,
            "M": self.total_messages,
            "D": self.total_departures,
            "relative_comm": relative_communication(self),
            "sup_AQ": self.sup_aq,
            "mean_JCT": float(jct.mean()) if has else None,
            "median_JCT": float(np.median(jct)) if has else None,
            "p99_JCT": float(np.percentile(jct, 99)) if has else None,
            "stream_digest": self.stream_digest,
        }


def stream_digest(arrival_times, requirements) -> str:
    h = hashlib.sha256()
    h.update(np.asarray(arrival_times, dtype=np.float64).tobytes())
    h.update(np.asarray(requirements, dtype=np.float64).tobytes())
    return h.hexdigest()[:16]


@dataclass(frozen=True)
class CcdfCurve:
    values: np.ndarray
    tail: np.ndarray
    n: int

    def tail_at(self, v) -> float:
        """P(JCT > v)."""
        if self.n == 0:
            return 0.0
        idx = np.searchsorted(self.values, v, side="right")
        if idx == 0:
            return 1.0
        return float(self.tail[idx - 1])

    def __len__(self) -> int:
        return len(self.values)


def ccdf_from_samples(samples) -> CcdfCurve:
    s = np.sort(np.asarray(samples, dtype=float))
    n = s.size
    if n == 0:
        return CcdfCurve(np.array([]), np.array([]), 0)
    values, counts = np.unique(s, return_counts=True)
    tail = 1.0 - np.cumsum(counts) / n
    # exact zero at the maximum, no float residue
    tail[-1] = 0.0
    return CcdfCurve(values, tail, n)


def ccdf(log: MetricsLog, warmup: int | None = None) -> CcdfCurve:
    return ccdf_from_samples(log.jct(warmup))


def dominance(a: CcdfCurve, b: CcdfCurve) -> float:
    """Fraction of the joint support where ``a``'s tail is at most ``b``'s."""
    support = np.union1d(a.values, b.values)
    if support.size == 0:
        return 1.0
    return float(np.mean([a.tail_at(v) <= b.tail_at(v) for v in support]))


def workload_gap(log: MetricsLog) -> tuple[float, float]:
    """(min, max) over samples of total K-system workload minus single-server workload."""
    w = log.workload
    if w is None:
        raise ValueError("run was not coupled to a single-server system")
    if w.observations == 0:
        return (0, 0)
    return (w.gap_min, w.gap_max)


# -- files -------------------------------------------------------------------


def write_csv(path: Path, columns, rows) -> None:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for row in rows:
        w.writerow([fmt(row.get(c)) for c in columns])
    Path(path).write_text(buf.getvalue())


def write_ccdf_csv(path: Path, curve: CcdfCurve) -> None:
    rows = ({"value": v, "tail_prob": p} for v, p in zip(curve.values.tolist(), curve.tail.tolist()))
    write_csv(path, CCDF_COLUMNS, rows)


def write_trace_jsonl(path: Path, log: MetricsLog) -> None:
    if log.trace is None:
        raise ValueError("run did not record a trace")
    with open(path, "w") as fh:
        for time, kind, server, payload in log.trace:
            fh.write(
                json.dumps({"time": time, "kind": kind, "server": server, "payload": payload}, sort_keys=True)
                + "\n"
            )
