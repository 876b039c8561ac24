"""Continuous-time event-driven engine.

Events at the same instant are processed in the order service completion,
emulated departure, communication, arrival; ties within a kind go by
server index. DT/ET triggers are evaluated in the communication slot of the
instant at which the departure (actual or emulated) happened. The
approximation quality is sampled once per instant, after all its events.
"""

from __future__ import annotations

import heapq
import math
import random
from collections import deque

from ..approx import ApproxKind, EmulatedQueue
from ..comm import CommKind, message_bound
from ..metrics import MetricsLog, WorkloadTrace
from ..routing import PolicyBundle, PolicyKind, Router
from .config import EnvConfig
from .inputs import InputStream
from .slot import InvariantError

INF = math.inf

COMPLETION, EMULATED, COMMUNICATION, ARRIVAL = 0, 1, 2, 3
CHECK, TIMER = 0, 1


def run_event_engine(config: EnvConfig, bundle: PolicyBundle) -> MetricsLog:
    if config.engine != "event":
        raise ValueError("run_event_engine needs config.engine == 'event'")
    K = config.K
    T = float(config.horizon)
    mu = config.service_rates()
    stream = InputStream(config)
    router = Router(bundle.policy, K, random.Random(stream.routing_seed))
    route = router.route
    policy = bundle.policy.kind
    jsaq = policy is PolicyKind.JSAQ
    charge_per_departure = policy in (PolicyKind.JSQ, PolicyKind.SQD)
    comm, algo = bundle.comm, bundle.algo
    comm_kind = comm.kind if jsaq else None
    x = comm.x if jsaq and comm_kind is not CommKind.RT else None
    checking = config.check_invariants
    mean_req = config.mean_requirement

    log = MetricsLog.empty(K, T, config.seed, "event", policy=bundle.label, config_digest=config.digest(bundle.label))
    tracks_ae = jsaq or charge_per_departure
    if tracks_ae:
        log.aq_hist = [0]
    if config.record_message_times:
        log.message_times = [[] for _ in range(K)]
    trace = [] if config.trace else None
    log.trace = trace
    coupled = config.coupled
    if coupled:
        log.workload = WorkloadTrace(stride=config.workload_stride)
    spread = 0 if config.track_spread else None

    q = [0] * K
    fifo = [deque() for _ in range(K)]
    head_finish = [INF] * K
    pending_work = 0.0  # nominal work of queued jobs that are not in service
    deps = log.departures
    arrivals_i = log.arrivals_per_server
    idle = log.idle
    last_empty = [0.0] * K
    last_done = [-1] * K
    arr_time, reqs, done, assigned = log.arrival_times, log.requirements, log.completion_times, log.assigned
    req_iter = stream.requirements()

    M = log.messages
    since = [0] * K
    qt = q if not jsaq else [0] * K
    emus = [EmulatedQueue(algo, mean_req, mu[i]) for i in range(K)] if jsaq else None
    mirrors = [EmulatedQueue(algo, mean_req, mu[i]) for i in range(K)] if jsaq and checking else None
    ae = [0] * K
    R = sum(mu)
    ws, ws_time = 0.0, 0.0
    heap: list = []
    seq = 0
    pending_checks: set = set()
    violations = 0

    def push(t, rank, server, payload=None):
        nonlocal seq
        seq += 1
        heapq.heappush(heap, (t, rank, server, seq, payload))

    def start_service(i, t):
        nonlocal pending_work
        r = reqs[fifo[i][0]]
        pending_work -= r
        hf = t + r / mu[i]
        head_finish[i] = hf
        push(hf, COMPLETION, i)

    def schedule_emu(i):
        e = emus[i]
        if e.head_finish != INF:
            push(e.head_finish, EMULATED, i, e.epoch)

    def k_work(t):
        w = pending_work
        for i in range(K):
            if q[i]:
                w += (head_finish[i] - t) * mu[i]
        return w

    def s_work(t):
        return max(0.0, ws - R * (t - ws_time))

    def send(i, t):
        nonlocal violations
        M[i] += 1
        if log.message_times is not None:
            log.message_times[i].append(t)
        if M[i] > message_bound(comm, algo, deps[i], t, mu[i] / mean_req) + 1e-9:
            violations += 1
        emus[i].on_message(t, q[i])
        if mirrors:
            mirrors[i].on_message(t, q[i])
        qt[i] = q[i]
        since[i] = 0
        schedule_emu(i)
        if trace is not None:
            trace.append((t, "message", i, q[i]))

    for i in range(K):
        for _ in range(config.initial_queue):
            r = next(req_iter)
            job = len(arr_time)
            arr_time.append(0.0)
            reqs.append(r)
            done.append(None)
            assigned.append(i)
            arrivals_i[i] += 1
            fifo[i].append(job)
            q[i] += 1
            pending_work += r
            ws += r
        if fifo[i]:
            start_service(i, 0.0)
        if jsaq:
            emus[i].on_message(0.0, q[i])
            if mirrors:
                mirrors[i].on_message(0.0, q[i])
            qt[i] = q[i]
            schedule_emu(i)
    if comm_kind is CommKind.RT:
        period = comm.period()
        for i in range(K):
            push(period, COMMUNICATION, i, TIMER)

    arrivals = stream.arrival_epochs()
    nxt = next(arrivals, None)
    if nxt is not None:
        push(nxt, ARRIVAL, -1)

    qsum = K * config.initial_queue
    area = 0.0
    now = 0.0
    aq_hist = log.aq_hist
    aq = 0
    if coupled:
        log.workload.observe(0.0, k_work(0.0), ws)

    while heap and heap[0][0] <= T:
        t, rank, i, _, payload = heapq.heappop(heap)
        if t > now:
            # the instant `now` is complete: sample it
            if tracks_ae:
                aq_hist[aq] += 1
            if checking:
                _check_instant(now, q, fifo, arrivals_i, deps, since, emus, mirrors, qt, ae, algo)
            area += qsum * (t - now)
            if coupled and ws > 0 and ws - R * (t - ws_time) <= 0:
                # the single server empties in between: its workload kinks there
                te = ws_time + ws / R
                if now < te < t:
                    log.workload.observe(te, k_work(te), 0.0)
            now = t
        touched = -1
        if rank == ARRIVAL:
            r = next(req_iter)
            i = route(q, qt)
            job = len(arr_time)
            arr_time.append(t)
            reqs.append(r)
            done.append(None)
            assigned.append(i)
            arrivals_i[i] += 1
            fifo[i].append(job)
            q[i] += 1
            qsum += 1
            pending_work += r
            if q[i] == 1:
                idle[i] += t - last_empty[i]
                start_service(i, t)
            if jsaq:
                e = emus[i]
                e.on_routed_arrival(t)
                if mirrors:
                    mirrors[i].on_routed_arrival(t)
                qt[i] += 1
                if e.length == 1:
                    schedule_emu(i)
            if coupled:
                ws = s_work(t) + r
                ws_time = t
            if trace is not None:
                trace.append((t, "arrival", i, job))
            nxt = next(arrivals, None)
            if nxt is not None:
                push(nxt, ARRIVAL, -1)
        elif rank == COMPLETION:
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
                start_service(i, t)
            else:
                head_finish[i] = INF
                last_empty[i] = t
            if charge_per_departure:
                M[i] += 1
                if log.message_times is not None:
                    log.message_times[i].append(t)
            if trace is not None:
                trace.append((t, "departure", i, job))
            touched = i
        elif rank == EMULATED:
            e = emus[i]
            if payload != e.epoch or e.head_finish != t:
                continue
            e.depart(t)
            qt[i] -= 1
            schedule_emu(i)
            if trace is not None:
                trace.append((t, "emulated_departure", i, qt[i]))
            touched = i
        else:
            if payload == TIMER:
                send(i, t)
                push(t + period, COMMUNICATION, i, TIMER)
            else:
                pending_checks.discard((t, i))
                if comm_kind is CommKind.DT:
                    if since[i] >= x:
                        send(i, t)
                else:
                    if mirrors:
                        mirrors[i].advance_to(t)
                        if mirrors[i] != emus[i]:
                            raise InvariantError(f"server mirror diverged at server {i}, t={t}")
                        length = mirrors[i].length
                    else:
                        length = emus[i].length
                    if abs(q[i] - length) >= x:
                        send(i, t)
            touched = i
        if touched >= 0 and jsaq:
            if rank != COMMUNICATION and comm_kind is not CommKind.RT and (t, touched) not in pending_checks:
                pending_checks.add((t, touched))
                push(t, COMMUNICATION, touched, CHECK)
            d = q[touched] - qt[touched]
            new = d if d >= 0 else -d
            if new != ae[touched]:
                ae[touched] = new
                if new > aq:
                    aq = new
                    while aq >= len(aq_hist):
                        aq_hist.append(0)
                else:
                    aq = max(ae)
        if spread is not None:
            s = max(q) - min(q)
            if s > spread:
                spread = s
        if coupled:
            log.workload.observe(t, k_work(t), s_work(t))

    if tracks_ae:
        aq_hist[aq] += 1
    if checking:
        _check_instant(now, q, fifo, arrivals_i, deps, since, emus, mirrors, qt, ae, algo)
    area += qsum * (T - now)
    for i in range(K):
        if not fifo[i]:
            idle[i] += T - last_empty[i]
    log.queue_area = area
    log.final_queue = list(q)
    log.bound_violations = violations
    log.queue_spread_max = spread
    return log


def _check_instant(t, q, fifo, arrivals_i, deps, since, emus, mirrors, qt, ae, algo) -> None:
    for i, f in enumerate(fifo):
        if q[i] != len(f) or q[i] != arrivals_i[i] - deps[i]:
            raise InvariantError(f"flow conservation broken at server {i}, t={t}")
        if emus is None:
            continue
        e = emus[i]
        if qt[i] != e.length:
            raise InvariantError(f"approximation array out of sync at server {i}")
        if ae[i] != abs(since[i] - e.emu_departures):
            raise InvariantError(f"error identity |D - D~| broken at server {i}, t={t}")
        if algo.kind is ApproxKind.BASIC and qt[i] < q[i]:
            raise InvariantError(f"basic approximation under-estimated server {i}")
        if mirrors:
            mirrors[i].advance_to(t)
            if mirrors[i] != e:
                raise InvariantError(f"server mirror diverged at server {i}, t={t}")
