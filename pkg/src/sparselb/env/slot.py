"""Discrete-time engine: one potential arrival and one work unit per server per slot.

Every slot runs four phases in a fixed order:

1. service: each busy server completes one work unit, maybe finishing its head job;
2. emulation: each load-balancer emulation advances one slot;
3. communication: message triggers are evaluated and messages land instantly;
4. arrival: at most one job arrives and is routed on the post-message state.

Observation points (AQ samples, workload samples) are slot ends.
"""

from __future__ import annotations

import math
import random
from collections import deque

from ..approx import ApproxKind, EmulatedQueue
from ..comm import CommKind, message_bound
from ..metrics import MetricsLog, WorkloadTrace
from ..routing import PolicyBundle, PolicyKind, Router
from .config import EnvConfig
from .inputs import InputStream

INF = math.inf


class InvariantError(AssertionError):
    pass


def run_slot_engine(config: EnvConfig, bundle: PolicyBundle) -> MetricsLog:
    if config.engine != "slot":
        raise ValueError("run_slot_engine needs config.engine == 'slot'")
    K = config.K
    T = int(config.horizon)
    stream = InputStream(config)
    router = Router(bundle.policy, K, random.Random(stream.routing_seed))
    route = router.route
    policy = bundle.policy.kind
    jsaq = policy is PolicyKind.JSAQ
    charge_per_departure = policy in (PolicyKind.JSQ, PolicyKind.SQD)
    comm = bundle.comm
    algo = bundle.algo
    comm_kind = comm.kind if jsaq else None
    x = comm.x if jsaq and comm_kind is not CommKind.RT else None
    period = comm.period(slot=1) if comm_kind is CommKind.RT else 0
    emulates = jsaq and algo.kind is not ApproxKind.BASIC
    checking = config.check_invariants
    mean_req = config.mean_requirement
    # emulated service rate, jobs per slot, for the ET+MSR message bound
    emu_rate = 1.0 / mean_req

    log = MetricsLog.empty(K, T, config.seed, "slot", policy=bundle.label, config_digest=config.digest(bundle.label))
    tracks_ae = jsaq or charge_per_departure
    if tracks_ae:
        log.aq_hist = [0]
    if config.record_message_times:
        log.message_times = [[] for _ in range(K)]
    trace = [] if config.trace else None
    log.trace = trace

    # actual servers
    q = [0] * K
    fifo = [deque() for _ in range(K)]
    deps = log.departures
    arrivals_i = log.arrivals_per_server
    idle = log.idle
    last_empty = [0] * K
    last_done = [-1] * K
    busy = 0
    comp: dict[int, list] = {}

    # jobs
    arr_time = log.arrival_times
    reqs = log.requirements
    done = log.completion_times
    assigned = log.assigned
    req_iter = stream.requirements()

    # load-balancer state
    M = log.messages
    since = [0] * K
    qt = q if not jsaq else [0] * K
    emus = [EmulatedQueue(algo, mean_req, 1) for _ in range(K)] if jsaq else None
    mirrors = [EmulatedQueue(algo, mean_req, 1) for _ in range(K)] if jsaq and checking else None
    emu_b: dict[int, list] = {}

    # AQ tracking: ae per server, count of servers per ae value, running max
    ae = [0] * K
    ae_count = [K]
    aq = 0
    aq_hist = log.aq_hist

    # coupled single server (combined rate K) and total nominal workload
    coupled = config.coupled
    if coupled:
        log.workload = WorkloadTrace(stride=config.workload_stride)
        observe = log.workload.observe
    total_work = 0
    ws = 0

    violations = 0
    area = 0
    qsum = K * config.initial_queue

    for i in range(K):
        for _ in range(config.initial_queue):
            r = next(req_iter)
            job = len(arr_time)
            arr_time.append(0)
            reqs.append(r)
            done.append(None)
            assigned.append(i)
            arrivals_i[i] += 1
            fifo[i].append(job)
            q[i] += 1
            total_work += r
            ws += r
        if fifo[i]:
            h = reqs[fifo[i][0]]
            comp.setdefault(h, []).append(i)
            busy += 1
        if jsaq:
            emus[i].on_message(0, q[i])
            if mirrors:
                mirrors[i].on_message(0, q[i])
            qt[i] = q[i]
            nf = emus[i].head_finish
            if nf != INF:
                emu_b.setdefault(int(nf), []).append(i)

    arrivals = stream.arrival_slots()
    next_arr = next(arrivals, None)

    def set_ae(i: int, new: int) -> None:
        nonlocal aq
        old = ae[i]
        if new == old:
            return
        ae[i] = new
        ae_count[old] -= 1
        while new >= len(ae_count):
            ae_count.append(0)
        ae_count[new] += 1
        if new > aq:
            aq = new
            while new >= len(aq_hist):
                aq_hist.append(0)
        elif old == aq:
            while not ae_count[aq]:
                aq -= 1

    def send(i: int, t: int) -> None:
        nonlocal violations
        M[i] += 1
        if log.message_times is not None:
            log.message_times[i].append(t)
        if M[i] > message_bound(comm, algo, deps[i], t, emu_rate) + 1e-9:
            violations += 1
        e = emus[i]
        e.on_message(t, q[i])
        if mirrors:
            mirrors[i].on_message(t, q[i])
        qt[i] = q[i]
        since[i] = 0
        nf = e.head_finish
        if nf != INF:
            emu_b.setdefault(int(nf), []).append(i)
        if trace is not None:
            trace.append((t, "message", i, q[i]))

    for t in range(1, T + 1):
        # 1. service
        if busy:
            total_work -= busy
        lst = comp.pop(t, None)
        if lst:
            if len(lst) > 1:
                lst.sort()
            for i in lst:
                f = fifo[i]
                job = f.popleft()
                done[job] = t
                if job < last_done[i]:
                    raise InvariantError(f"FIFO order broken at server {i}")
                last_done[i] = job
                deps[i] += 1
                q[i] -= 1
                qsum -= 1
                since[i] += 1
                if f:
                    comp.setdefault(t + reqs[f[0]], []).append(i)
                else:
                    busy -= 1
                    last_empty[i] = t
                if charge_per_departure:
                    M[i] += 1
                    if log.message_times is not None:
                        log.message_times[i].append(t)
                if trace is not None:
                    trace.append((t, "departure", i, job))
        # 2. emulation
        el = emu_b.pop(t, None) if emulates else None
        if el:
            for i in el:
                e = emus[i]
                if e.head_finish != t:
                    continue
                e.depart(t)
                qt[i] -= 1
                nf = e.head_finish
                if nf != INF:
                    emu_b.setdefault(int(nf), []).append(i)
                if trace is not None:
                    trace.append((t, "emulated_departure", i, qt[i]))
        if mirrors:
            for i in range(K):
                mirrors[i].advance_to(t)
                if mirrors[i] != emus[i]:
                    raise InvariantError(f"server mirror diverged from load balancer at server {i}, slot {t}")
        # 3. communication
        if jsaq:
            if el:
                touched = sorted(set(lst).union(el)) if lst else sorted(set(el))
            else:
                touched = lst
            if comm_kind is CommKind.DT:
                if lst:
                    for i in lst:
                        if since[i] >= x:
                            send(i, t)
            elif comm_kind is CommKind.ET:
                if touched:
                    view = mirrors if mirrors else emus
                    for i in touched:
                        if abs(q[i] - view[i].length) >= x:
                            send(i, t)
            elif t % period == 0:
                touched = range(K)
                for i in touched:
                    send(i, t)
            if touched:
                for i in touched:
                    d = q[i] - qt[i]
                    set_ae(i, d if d >= 0 else -d)
        # 4. arrival
        if next_arr == t:
            r = next(req_iter)
            i = route(q, qt)
            job = len(arr_time)
            arr_time.append(t)
            reqs.append(r)
            done.append(None)
            assigned.append(i)
            arrivals_i[i] += 1
            f = fifo[i]
            f.append(job)
            q[i] += 1
            qsum += 1
            if q[i] == 1:
                idle[i] += t - last_empty[i]
                comp.setdefault(t + r, []).append(i)
                busy += 1
            if jsaq:
                e = emus[i]
                e.on_routed_arrival(t)
                if mirrors:
                    mirrors[i].on_routed_arrival(t)
                qt[i] += 1
                if e.length == 1 and e.head_finish != INF:
                    emu_b.setdefault(int(e.head_finish), []).append(i)
            total_work += r
            if coupled:
                ws = (ws - K if ws > K else 0) + r
            if trace is not None:
                trace.append((t, "arrival", i, job))
            next_arr = next(arrivals, None)
        elif coupled:
            ws = ws - K if ws > K else 0
        if coupled:
            observe(t, total_work, ws)
        if tracks_ae:
            aq_hist[aq] += 1
        if checking:
            _check_slot(t, q, fifo, arrivals_i, deps, since, emus, qt, ae, algo)
        area += qsum

    for i in range(K):
        if not fifo[i]:
            idle[i] += T - last_empty[i]
    log.final_queue = list(q)
    log.bound_violations = violations
    log.queue_area = area
    return log


def _check_slot(t, q, fifo, arrivals_i, deps, since, emus, qt, ae, algo) -> None:
    for i, f in enumerate(fifo):
        if q[i] != len(f) or q[i] != arrivals_i[i] - deps[i]:
            raise InvariantError(f"flow conservation broken at server {i}, slot {t}")
        if emus is None:
            continue
        e = emus[i]
        if qt[i] != e.length:
            raise InvariantError(f"approximation array out of sync at server {i}")
        if ae[i] != abs(since[i] - e.emu_departures):
            raise InvariantError(f"error identity |D - D~| broken at server {i}, slot {t}")
        if algo.kind is ApproxKind.BASIC and qt[i] < q[i]:
            raise InvariantError(f"basic approximation under-estimated server {i}")
