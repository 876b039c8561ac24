"""Monte Carlo harnesses for the communication and optimality guarantees.

* :func:`poisson_exit_times` estimates the two barrier exit times of a
  Poisson process against its mean, exactly (no time stepping).
* :func:`intermessage_durations` measures the time between ET messages,
  either with a server that never idles or with the full event engine.
* :func:`run_scaling_suite` runs the event engine at growing scale and
  reports the queue-spread and workload-gap statistics under diffusion
  scaling.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .approx import ApproxAlgo, ApproxKind, EmulatedQueue
from .comm import CommKind, CommPattern
from .env import EnvConfig, run_event_engine
from .parallel import pmap
from .routing import PolicyBundle

Z95 = 1.959963984540054


def _mean_ci(samples) -> tuple[float, float]:
    a = np.asarray(samples, dtype=float)
    if a.size == 0:
        return math.nan, math.nan
    if a.size == 1:
        return float(a[0]), math.inf
    return float(a.mean()), float(Z95 * a.std(ddof=1) / math.sqrt(a.size))


def cell_seed(seed: int, *key: int) -> int:
    """Independent 63-bit seed for one (seed, key...) cell."""
    state = np.random.SeedSequence([seed, *key]).generate_state(2, np.uint32)
    return int((int(state[0]) << 31) ^ int(state[1]))


# -- exit times ----------------------------------------------------------------


@dataclass
class ExitTimeResult:
    y: int
    mu: float
    trials: int
    mean_tau: float
    mean_sigma: float
    ci_halfwidth_tau: float
    ci_halfwidth_sigma: float

    @property
    def bound_tau(self) -> float:
        return (self.y**2 - self.y) / self.mu

    @property
    def bound_sigma(self) -> float:
        return self.y**2 / self.mu

    @property
    def tau_ok(self) -> bool:
        return self.mean_tau >= self.bound_tau - self.ci_halfwidth_tau

    @property
    def sigma_ok(self) -> bool:
        return self.mean_sigma >= self.bound_sigma - self.ci_halfwidth_sigma

    def row(self) -> dict:
        return {
            "mu": self.mu,
            "y": self.y,
            "trials": self.trials,
            "mean_tau": self.mean_tau,
            "ci_tau": self.ci_halfwidth_tau,
            "bound_tau": self.bound_tau,
            "mean_sigma": self.mean_sigma,
            "ci_sigma": self.ci_halfwidth_sigma,
            "bound_sigma": self.bound_sigma,
            "tau_ok": self.tau_ok,
            "sigma_ok": self.sigma_ok,
        }


EXIT_TIME_COLUMNS = (
    "mu",
    "y",
    "trials",
    "mean_tau",
    "ci_tau",
    "bound_tau",
    "mean_sigma",
    "ci_sigma",
    "bound_sigma",
    "tau_ok",
    "sigma_ok",
)


def tau_samples(mu: float, y: int, trials: int, rng: np.random.Generator) -> np.ndarray:
    """First times with ``|N(t) - floor(mu t)| = y``.

    The difference moves by +1 at Poisson jumps and by -1 at the drift epochs
    ``k / mu``, so it is enough to walk the merged jump sequence.
    """
    scale = 1.0 / mu
    out = np.empty(trials)
    idx = np.arange(trials)
    diff = np.zeros(trials, dtype=np.int64)
    k = np.ones(trials)
    nxt = rng.exponential(scale, trials)
    while idx.size:
        drift = k / mu
        up = nxt <= drift
        down = drift <= nxt
        diff += up.astype(np.int64) - down
        now = np.where(up, nxt, drift)
        if up.any():
            nxt[up] += rng.exponential(scale, int(up.sum()))
        k[down] += 1
        hit = np.abs(diff) >= y
        if hit.any():
            out[idx[hit]] = now[hit]
            keep = ~hit
            idx, diff, k, nxt = idx[keep], diff[keep], k[keep], nxt[keep]
    return out


def sigma_samples(mu: float, y: int, trials: int, rng: np.random.Generator) -> np.ndarray:
    """First times with ``|N(t) - mu t| >= y``.

    ``N - mu t`` drifts down continuously and jumps up by one, so the lower
    barrier is met at the closed-form instant ``(N + y) / mu`` unless a jump
    comes first, and the upper barrier can only be crossed at a jump.
    """
    scale = 1.0 / mu
    out = np.empty(trials)
    idx = np.arange(trials)
    t = np.zeros(trials)
    n = np.zeros(trials)
    while idx.size:
        jump = t + rng.exponential(scale, idx.size)
        low = (n + y) / mu
        done_low = low <= jump
        n += 1
        t = jump
        done_high = ~done_low & (n - mu * t >= y)
        hit = done_low | done_high
        if hit.any():
            out[idx[hit]] = np.where(done_low[hit], low[hit], t[hit])
            keep = ~hit
            idx, t, n = idx[keep], t[keep], n[keep]
    return out


def poisson_exit_times(mu: float, y: int, trials: int, seed: int) -> ExitTimeResult:
    if not mu > 0:
        raise ValueError("mu must be > 0")
    if int(y) != y or y < 1:
        raise ValueError("y must be an integer >= 1")
    if trials < 1:
        raise ValueError("trials must be >= 1")
    tau_rng, sigma_rng = (np.random.Generator(np.random.PCG64(s)) for s in np.random.SeedSequence(seed).spawn(2))
    mt, ct = _mean_ci(tau_samples(mu, int(y), trials, tau_rng))
    ms, cs = _mean_ci(sigma_samples(mu, int(y), trials, sigma_rng))
    return ExitTimeResult(int(y), float(mu), trials, mt, ms, ct, cs)


# -- inter-message durations ----------------------------------------------------


@dataclass
class IntermessageResult:
    mode: str
    x: int
    mu: float
    bound: float | None
    n: int
    mean: float
    ci: float
    first_n: int
    first_mean: float
    first_ci: float

    @property
    def ok(self) -> bool:
        """Both the all-interval and first-interval means clear the bound within their CI."""
        if self.bound is None:
            return True
        if not self.mean >= self.bound - self.ci:
            return False
        return self.first_n == 0 or self.first_mean >= self.bound - self.first_ci


def intermessage_bound(mode: str, x: int, mu: float) -> float:
    if mode == "backlog":
        return x * (x - 1) / mu
    return max(x / 2 - 1, 0) ** 2 / mu


def backlog_intervals(x: int, mu: float, algo: ApproxAlgo, pattern: CommPattern, count: int, rng) -> list:
    """Inter-message times of one server that always has work, ``count`` of them.

    The true queue and the emulation both start from a huge backlog, so
    neither ever empties; true service is Exp(mu).
    """
    backlog = 10**15
    emu = EmulatedQueue(algo, 1.0, mu)
    emu.on_message(0.0, backlog)
    q = backlog
    since = 0
    last = 0.0
    out: list = []
    draws = iter(())
    next_dep = 0.0

    def service():
        nonlocal draws
        for v in draws:
            return v
        draws = iter(rng.exponential(1.0 / mu, 4096).tolist())
        return next(draws)

    next_dep = service()
    et = pattern.kind is CommKind.ET
    while len(out) < count:
        # completions go before emulated departures at equal times
        if next_dep <= emu.head_finish:
            t = next_dep
            q -= 1
            since += 1
            next_dep = t + service()
        else:
            t = emu.head_finish
            emu.depart(t)
        fire = abs(q - emu.length) >= x if et else since >= x
        if fire:
            out.append(t - last)
            last = t
            since = 0
            emu.on_message(t, q)
    return out


def _idle_cell(args):
    cfg, bundle = args
    log = run_event_engine(cfg, bundle)
    every, first = [], []
    for times in log.message_times:
        prev = 0.0
        for j, t in enumerate(times):
            every.append(t - prev)
            if j == 0:
                first.append(t)
            prev = t
    return every, first


def intermessage_durations(
    load_profile=None,
    x: int = 3,
    algo: ApproxAlgo | None = None,
    pattern: CommPattern | None = None,
    service: str = "exponential",
    trials: int = 2000,
    *,
    mode: str = "backlog",
    mu: float = 1.0,
    K: int = 10,
    horizon: float = 2000.0,
    seed: int = 0,
    workers: int = 1,
) -> IntermessageResult:
    """Mean time between messages of one server under ET-x (MSR by default).

    ``mode="backlog"``: the server is never idle; ``trials`` intervals are
    collected. ``mode="idling"``: ``trials`` independent event-engine runs with
    ``K`` servers of rate ``mu`` fed by ``load_profile`` (total arrival rate,
    a constant or ``[(start, rate), ...]``); every interval of every server is
    used, and the first interval of each server forms the first-interval mean.
    """
    if service != "exponential":
        raise ValueError(f"inter-message harness needs exponential service, got {service!r}")
    algo = algo or ApproxAlgo.msr()
    pattern = pattern or CommPattern.et(x)
    if pattern.kind is CommKind.RT:
        raise ValueError("inter-message bounds concern DT/ET patterns")
    if pattern.x != x:
        raise ValueError("pattern threshold and x disagree")
    if trials < 1:
        raise ValueError("trials must be >= 1")
    bound = intermessage_bound(mode, x, mu) if pattern.kind is CommKind.ET and algo.kind is ApproxKind.MSR else None
    if mode == "backlog":
        rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed)))
        samples = backlog_intervals(x, mu, algo, pattern, trials, rng)
        m, c = _mean_ci(samples)
        return IntermessageResult(mode, x, mu, bound, len(samples), m, c, len(samples), m, c)
    if mode != "idling":
        raise ValueError(f"mode must be 'backlog' or 'idling', got {mode!r}")
    if load_profile is None:
        raise ValueError("idling mode needs a load profile")
    profile = [(0.0, float(load_profile))] if np.isscalar(load_profile) else load_profile
    bundle = PolicyBundle.jsaq(pattern, algo)
    cells = [
        (
            EnvConfig(
                K=K,
                horizon=horizon,
                engine="event",
                rate_profile=profile,
                service_law="exponential",
                mu=[mu] * K,
                seed=cell_seed(seed, rep),
                record_message_times=True,
            ),
            bundle,
        )
        for rep in range(trials)
    ]
    every, first = [], []
    for e, f in pmap(_idle_cell, cells, workers):
        every.extend(e)
        first.extend(f)
    m, c = _mean_ci(every)
    fm, fc = _mean_ci(first)
    return IntermessageResult(mode, x, mu, bound, len(every), m, c, len(first), fm, fc)


# -- diffusion scaling ------------------------------------------------------------


def check_heavy_traffic_condition(profile, mu_bar, horizon: float) -> None:
    """Reject profiles whose smallest rate on [0, horizon] is too low for queues to collapse.

    Needs ``min lambda > sum(mu) - K * min(mu)``; with equal rates that is
    just a strictly positive arrival rate.
    """
    rates = [r for s, r in profile if s < horizon]
    lam_min = min(rates)
    need = sum(mu_bar) - len(mu_bar) * min(mu_bar)
    if not lam_min > need:
        raise ValueError(
            f"arrival rate profile dips to {lam_min:g}, which must exceed "
            f"sum(mu) - K*min(mu) = {need:g} for the queues to equalize"
        )


@dataclass
class ScalingResult:
    n_values: list
    ssc: list  # per n: list of per-replication statistics
    optimality: list
    replications: int
    lam_profile: list
    mu_bar: list
    gap_min: float = math.inf
    ssc_median: list = field(default_factory=list)
    optimality_median: list = field(default_factory=list)

    def __post_init__(self):
        self.ssc_median = [float(np.median(v)) for v in self.ssc]
        self.optimality_median = [float(np.median(v)) for v in self.optimality]

    @staticmethod
    def _strictly_decreasing(v) -> bool:
        return all(b < a for a, b in zip(v, v[1:]))

    @property
    def ssc_decreasing(self) -> bool:
        return self._strictly_decreasing(self.ssc_median)

    @property
    def optimality_decreasing(self) -> bool:
        return self._strictly_decreasing(self.optimality_median)

    def rows(self) -> list[dict]:
        return [
            {
                "n": n,
                "replications": self.replications,
                "median_ssc": self.ssc_median[j],
                "median_optimality": self.optimality_median[j],
                "max_ssc": max(self.ssc[j]),
                "max_optimality": max(self.optimality[j]),
            }
            for j, n in enumerate(self.n_values)
        ]


SCALING_COLUMNS = ("n", "replications", "median_ssc", "median_optimality", "max_ssc", "max_optimality")


def _scaling_cell(args):
    cfg, bundle, n = args
    log = run_event_engine(cfg, bundle)
    lo, hi = log.workload.gap_min, log.workload.gap_max
    root = math.sqrt(n)
    return log.queue_spread_max / root, max(hi, 0.0) / root, lo


def run_scaling_suite(
    base: EnvConfig,
    n_list,
    policy_bundle: PolicyBundle,
    replications: int,
    seed: int,
    workers: int = 1,
) -> ScalingResult:
    """Scale arrival and service rates by each ``n`` and record the diffusion-scaled statistics.

    ``base`` carries the unscaled rates: ``rate_profile`` (total arrival rate)
    and ``mu``. The run is coupled to a single server of the combined rate
    that sees the same arrivals and requirements.
    """
    if base.engine != "event":
        raise ValueError("scaling suite runs the event engine")
    if base.service_law == "exponential":
        raise ValueError("the workload statistic needs bounded requirements (uniform or deterministic)")
    if replications < 1:
        raise ValueError("replications must be >= 1")
    n_list = [int(n) for n in n_list]
    if any(n < 1 for n in n_list):
        raise ValueError("scale factors must be >= 1")
    mu_bar = list(base.mu)
    profile = list(base.rate_profile)
    check_heavy_traffic_condition(profile, mu_bar, base.horizon)
    cells = []
    for j, n in enumerate(n_list):
        for rep in range(replications):
            cfg = replace(
                base,
                rate_profile=[(s, n * r) for s, r in profile],
                mu=[n * m for m in mu_bar],
                seed=cell_seed(seed, n, rep),
                coupled=True,
                track_spread=True,
                workload_stride=1 << 62,
            )
            cells.append((cfg, policy_bundle, n))
    results = pmap(_scaling_cell, cells, workers)
    ssc, opt = [], []
    gap_min = math.inf
    for j in range(len(n_list)):
        chunk = results[j * replications : (j + 1) * replications]
        ssc.append([c[0] for c in chunk])
        opt.append([c[1] for c in chunk])
        gap_min = min(gap_min, min(c[2] for c in chunk))
    return ScalingResult(n_list, ssc, opt, replications, profile, mu_bar, gap_min)
