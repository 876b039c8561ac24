"""Routing policies: JSAQ and the JSQ / SQ(d) / Round Robin / Random baselines."""

from __future__ import annotations

import random
from dataclasses import dataclass
from enum import Enum
from typing import Sequence

from .approx import ApproxAlgo, ApproxKind
from .comm import CommKind, CommPattern


class PolicyKind(str, Enum):
    JSAQ = "jsaq"
    JSQ = "jsq"
    SQD = "sqd"
    ROUND_ROBIN = "rr"
    RANDOM = "random"


class TieBreak(str, Enum):
    RANDOM = "random"
    LOWEST_INDEX = "lowest"


@dataclass(frozen=True)
class Policy:
    kind: PolicyKind
    d: int = 2
    tie_break: TieBreak = TieBreak.RANDOM

    def __post_init__(self):
        object.__setattr__(self, "kind", PolicyKind(self.kind))
        object.__setattr__(self, "tie_break", TieBreak(self.tie_break))
        if self.d < 1:
            raise ValueError("SQ(d) needs d >= 1")

    @property
    def uses_state(self) -> bool:
        return self.kind in (PolicyKind.JSAQ, PolicyKind.JSQ, PolicyKind.SQD)

    @property
    def label(self) -> str:
        if self.kind is PolicyKind.SQD:
            return f"sq{self.d}"
        return self.kind.value


@dataclass(frozen=True)
class PolicyBundle:
    """A routing policy plus, for JSAQ, the communication pattern and approximation."""

    policy: Policy
    comm: CommPattern | None = None
    algo: ApproxAlgo | None = None

    def __post_init__(self):
        if self.policy.kind is PolicyKind.JSAQ:
            if self.comm is None or self.algo is None:
                raise ValueError("JSAQ needs both a communication pattern and an approximation")

    @property
    def label(self) -> str:
        if self.policy.kind is not PolicyKind.JSAQ:
            return self.policy.label
        return f"{self.comm.label}+{self.algo.label}"

    @property
    def x(self) -> int | None:
        if self.comm is not None and self.comm.kind is not CommKind.RT:
            return self.comm.x
        if self.algo is not None and self.algo.kind is ApproxKind.MSRX:
            return self.algo.x
        return None

    # shorthands used throughout tests and configs
    @classmethod
    def jsaq(cls, comm: CommPattern, algo: ApproxAlgo, tie_break: str = "random") -> "PolicyBundle":
        return cls(Policy(PolicyKind.JSAQ, tie_break=TieBreak(tie_break)), comm, algo)

    @classmethod
    def baseline(cls, kind: str, d: int = 2, tie_break: str = "random") -> "PolicyBundle":
        return cls(Policy(PolicyKind(kind), d=d, tie_break=TieBreak(tie_break)))


def argmin(values: Sequence[int], rng: random.Random | None, tie_break: TieBreak) -> int:
    m = min(values)
    if tie_break is TieBreak.LOWEST_INDEX or values.count(m) == 1:
        return values.index(m)
    return rng.choice([i for i, v in enumerate(values) if v == m])


class Router:
    """Stateful routing decisions for one run (owns the RR cursor and the RNG)."""

    def __init__(self, policy: Policy, K: int, rng: random.Random):
        if K < 1:
            raise ValueError("K must be >= 1")
        if policy.kind is PolicyKind.SQD and policy.d > K:
            raise ValueError(f"SQ(d) needs d <= K, got d={policy.d}, K={K}")
        self.policy = policy
        self.K = K
        self.rng = rng
        self.cursor = 0

    def route(self, actual: Sequence[int], approx: Sequence[int] | None = None) -> int:
        kind = self.policy.kind
        if kind is PolicyKind.JSAQ:
            if approx is None:
                raise ValueError("JSAQ routes on approximations")
            return argmin(approx, self.rng, self.policy.tie_break)
        if kind is PolicyKind.JSQ:
            return argmin(actual, self.rng, self.policy.tie_break)
        if kind is PolicyKind.SQD:
            sample = self.rng.sample(range(self.K), self.policy.d)
            if self.policy.tie_break is TieBreak.LOWEST_INDEX:
                sample.sort()
            best = sample[0]
            for i in sample[1:]:
                if actual[i] < actual[best]:
                    best = i
            return best
        if kind is PolicyKind.ROUND_ROBIN:
            i = self.cursor
            self.cursor = (i + 1) % self.K
            return i
        return self.rng.randrange(self.K)


def route(policy: Policy, actual, approx, rng: random.Random, cursor: int = 0) -> tuple[int, int]:
    """One-shot routing decision; returns ``(server, next_cursor)``."""
    router = Router(policy, len(actual), rng)
    router.cursor = cursor
    return router.route(actual, approx), router.cursor
