"""Common-random-number inputs shared by every routing policy.

Arrival epochs and per-job requirements come from their own seeded streams,
and routing randomness from a third one, so for a fixed seed every policy
sees exactly the same jobs.
"""

from __future__ import annotations

import bisect

import numpy as np

from .config import EnvConfig

BLOCK = 1 << 15


class InputStream:
    def __init__(self, config: EnvConfig):
        self.config = config
        arrivals, requirements, routing = np.random.SeedSequence(config.seed).spawn(3)
        self._arrival_rng = np.random.Generator(np.random.PCG64(arrivals))
        self._req_rng = np.random.Generator(np.random.PCG64(requirements))
        self.routing_seed = int(routing.generate_state(1, np.uint64)[0])
        self._req_blocks: list[list] = []

    @property
    def master_seed(self) -> int:
        return self.config.seed

    # -- requirements --------------------------------------------------------

    def _draw_requirements(self) -> list:
        cfg = self.config
        rng = self._req_rng
        law = cfg.service_law
        if law == "geometric":
            return rng.geometric(cfg.geometric_p, BLOCK).tolist()
        if law == "deterministic":
            v = cfg.service_param or 1
            return [int(v) if cfg.engine == "slot" else float(v)] * BLOCK
        if law == "exponential":
            return rng.exponential(1.0, BLOCK).tolist()
        if law == "uniform":
            w = cfg.uniform_halfwidth
            return rng.uniform(1 - w, 1 + w, BLOCK).tolist()
        raise ValueError(f"unknown service law {law!r}")

    def requirement_of(self, job_id: int):
        block, offset = divmod(job_id, BLOCK)
        while len(self._req_blocks) <= block:
            self._req_blocks.append(self._draw_requirements())
        return self._req_blocks[block][offset]

    def requirements(self):
        """Requirements in job-id order."""
        b = 0
        while True:
            while len(self._req_blocks) <= b:
                self._req_blocks.append(self._draw_requirements())
            yield from self._req_blocks[b]
            b += 1

    # -- arrivals ------------------------------------------------------------

    def arrival_slots(self):
        """Slots 1, 2, ... in which a job arrives (Bernoulli(load) per slot)."""
        lam = self.config.load
        if lam <= 0:
            return
        base = 0
        while True:
            hits = np.flatnonzero(self._arrival_rng.random(BLOCK) < lam)
            for s in (hits + base + 1).tolist():
                yield s
            base += BLOCK

    def arrival_epochs(self):
        """Arrival epochs of a Poisson process time-changed by the rate profile."""
        profile = self.config.rate_profile
        starts = [s for s, _ in profile]
        rates = [r for _, r in profile]
        # cumulative intensity at each piece start
        cum = [0.0]
        for (s0, r0), (s1, _) in zip(profile, profile[1:]):
            cum.append(cum[-1] + r0 * (s1 - s0))
        if rates[-1] <= 0 and cum[-1] <= 0:
            return
        u = 0.0
        while True:
            for e in self._arrival_rng.exponential(1.0, BLOCK).tolist():
                u += e
                t = _invert(u, starts, rates, cum)
                if t is None:
                    return
                yield t

    def epochs_until(self, horizon: float) -> list:
        src = self.arrival_slots() if self.config.engine == "slot" else self.arrival_epochs()
        out = []
        for t in src:
            if t > horizon:
                break
            out.append(t)
        return out


def _invert(u: float, starts, rates, cum):
    """Smallest t with cumulative intensity equal to u; None if it is never reached."""
    i = bisect.bisect_right(cum, u) - 1
    # a zero-rate piece can only be selected when it is the last one
    if rates[i] == 0:
        return None
    return starts[i] + (u - cum[i]) / rates[i]
