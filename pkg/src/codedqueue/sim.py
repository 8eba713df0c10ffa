"""Request-level discrete-event simulation of the three storage systems.

* ``uncoded``: two pools of r units (one per packet), each FCFS.
* ``bos``: one FIFO request queue under blocking-one scheduling; only the
  head-of-line request may receive units, and its packet 2 may not go to
  the unit that took packet 1.
* ``greedy``: the same single queue, but any idle unit scans the queue in
  FCFS order and takes the first packet whose sibling it has not served.

Service times are drawn from the serving unit's own stream at assignment
time. Only completions live in the event heap; the next arrival is held
separately, and a completion wins a timestamp tie against an arrival.
"""

from __future__ import annotations

import csv
import heapq
import math
from bisect import insort
from collections import deque
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Iterable, TextIO

import numpy as np
from scipy import stats

from codedqueue.bos import DelayReport, bos_capacity
from codedqueue.config import InvalidConfig, SystemConfig, UnstableSystem
from codedqueue.rng import (
    ARRIVAL_STREAM,
    SERVICE_STREAM_BASE,
    TIE_STREAM,
    ExpStream,
    Seed,
    UniformStream,
    make_generator,
)
from codedqueue.states import ChainState, classify

SCHEDULERS = ("uncoded", "bos", "greedy")
POLICIES = ("lowest", "random")
BATCHES = 20
TRACE_COLUMNS = ("request_id", "arrival", "assign1", "assign2", "complete1", "complete2", "su1", "su2")


class SchedulerInvariantError(AssertionError):
    """A scheduler left a unit idle (or chose a unit) in a way its rules forbid."""


@dataclass(frozen=True)
class RequestRecord:
    id: int
    arrival_time: float
    packet_assign_time: tuple[float, float]
    packet_complete_time: tuple[float, float]
    serving_su: tuple[int, int]

    @property
    def waits(self) -> tuple[float, float]:
        return tuple(a - self.arrival_time for a in self.packet_assign_time)

    @property
    def services(self) -> tuple[float, float]:
        return tuple(c - a for a, c in zip(self.packet_assign_time, self.packet_complete_time))

    @property
    def sojourn(self) -> float:
        return max(self.packet_complete_time) - self.arrival_time


@dataclass
class SimResult:
    scheduler: str
    config: SystemConfig
    seed: Seed
    horizon: int
    warmup: int
    report: DelayReport
    mean_offset: float
    ci_halfwidth_offset: float
    throughput: float
    ci_method: str
    distinct_ok: bool
    su_policy: str = "lowest"
    events: int = 0
    occupancy: dict[ChainState, float] | None = None
    transitions: frozenset | None = None
    path: np.ndarray | None = None
    records: list[RequestRecord] | None = None

    @property
    def mean_packet_delay(self) -> float:
        return self.report.mean_packet_delay

    @property
    def mean_request_delay(self) -> float:
        return self.report.mean_request_delay

    @property
    def max_level(self) -> int:
        if not self.occupancy:
            return -1
        return max((s.level for s in self.occupancy if s.level is not None), default=-1)


class _Recorder:
    """Per-request timestamps, kept in flat lists for speed."""

    def __init__(self) -> None:
        self.arrival: list[float] = []
        self.assign = ([], [])
        self.complete = ([], [])
        self.su = ([], [])
        self.ncomp: list[int] = []

    def new(self, t: float) -> int:
        self.arrival.append(t)
        for lst in (*self.assign, *self.complete, *self.su):
            lst.append(-1)
        self.ncomp.append(0)
        return len(self.arrival) - 1


def _check_run_args(config: SystemConfig, horizon: int, warmup: int | None, policy: str) -> int:
    if int(horizon) != horizon or horizon < 2:
        raise InvalidConfig(f"horizon must be an integer >= 2, got {horizon!r}")
    if warmup is None:
        warmup = int(horizon) // 10
    if int(warmup) != warmup or warmup < 0:
        raise InvalidConfig(f"warmup must be a non-negative integer, got {warmup!r}")
    if policy not in POLICIES:
        raise InvalidConfig(f"unknown su_policy {policy!r}")
    if config.lam <= 0:
        raise InvalidConfig("simulation needs lambda > 0")
    return int(warmup)


def _streams(config: SystemConfig, seed: Seed):
    arrivals = ExpStream(make_generator(seed, ARRIVAL_STREAM), config.lam)
    services = [
        ExpStream(make_generator(seed, SERVICE_STREAM_BASE + s), config.mu) for s in range(2 * config.r)
    ]
    ties = UniformStream(make_generator(seed, TIE_STREAM))
    return arrivals, services, ties


def simulate_bos(
    config: SystemConfig,
    horizon: int = 100_000,
    warmup: int | None = None,
    seed: Seed = 0,
    *,
    su_policy: str = "lowest",
    trace: bool = False,
    record_path: bool = False,
    check_stability: bool = True,
) -> SimResult:
    """Simulate blocking-one scheduling.

    Besides delays, returns the time-weighted occupancy of each chain state
    over the measurement window and the set of observed state transitions.
    """
    warmup = _check_run_args(config, horizon, warmup, su_policy)
    if check_stability and config.lam >= bos_capacity(config.r, config.mu):
        raise UnstableSystem(f"lambda={config.lam} is not below the BoS capacity")
    r = config.r
    n = 2 * r
    total = warmup + int(horizon)
    arrivals, services, ties = _streams(config, seed)
    rec = _Recorder()
    new_request = rec.new
    arr_t = rec.arrival
    asg0, asg1 = rec.assign
    cmp0, cmp1 = rec.complete
    su0, su1 = rec.su
    ncomp = rec.ncomp
    randomize = su_policy == "random"

    heap: list[tuple[float, int]] = []
    busy_req = [-1] * n
    busy_pkt = [0] * n
    idle = list(range(n))
    queue: deque[int] = deque()
    hol_su = -1
    packets = 0
    t = 0.0
    next_arr = arrivals()
    done = 0
    events = 0
    measuring = False
    t_start = t_stop = 0.0
    occupancy: dict[tuple[int, bool], float] = {}
    transitions: set = set()
    path: list[tuple[float, int]] = []
    state = (0, False)

    while done < total:
        if heap and heap[0][0] <= next_arr:
            tt, s = heapq.heappop(heap)
            if tt < t:
                raise SchedulerInvariantError("event clock moved backwards")
            if measuring:
                occupancy[state] = occupancy.get(state, 0.0) + (tt - t)
            t = tt
            rid = busy_req[s]
            if busy_pkt[s]:
                cmp1[rid] = t
            else:
                cmp0[rid] = t
            ncomp[rid] += 1
            if ncomp[rid] == 2 and rid < total:
                done += 1
            busy_req[s] = -1
            packets -= 1
            insort(idle, s)
        else:
            tt = next_arr
            if measuring:
                occupancy[state] = occupancy.get(state, 0.0) + (tt - t)
            t = tt
            rid = new_request(t)
            if rid == warmup:
                measuring = True
                t_start = t
            elif rid == total:
                measuring = False
                t_stop = t
            queue.append(rid)
            packets += 2
            next_arr = t + arrivals()
            if record_path:
                path.append((t, packets))
        events += 1

        # blocking-one dispatch: only the head-of-line request is served
        while queue and idle:
            rid = queue[0]
            if hol_su < 0:
                i = ties.choice_index(len(idle)) if randomize else 0
                s = idle.pop(i)
                asg0[rid] = t
                su0[rid] = s
                busy_pkt[s] = 0
                hol_su = s
            else:
                eligible = [j for j, u in enumerate(idle) if u != hol_su]
                if not eligible:
                    break
                i = eligible[ties.choice_index(len(eligible))] if randomize else eligible[0]
                s = idle.pop(i)
                asg1[rid] = t
                su1[rid] = s
                busy_pkt[s] = 1
                queue.popleft()
                hol_su = -1
            busy_req[s] = rid
            heapq.heappush(heap, (t + services[s](), s))

        blocked = bool(queue) and bool(idle)
        if blocked and not (hol_su >= 0 and len(idle) == 1 and idle[0] == hol_su):
            raise SchedulerInvariantError(
                f"t={t}: idle units {idle} with a backlog outside the blocking condition"
            )
        new_state = (packets, blocked)
        transitions.add((state, new_state))
        state = new_state

    if t_stop == 0.0:
        t_stop = t

    window = t_stop - t_start
    occ = {}
    for (pk, bl), dur in occupancy.items():
        cs = classify(r, pk, bl)
        occ[cs] = occ.get(cs, 0.0) + dur / window
    seen = frozenset((classify(r, *a), classify(r, *b)) for a, b in transitions)
    return _finish(
        "bos", config, seed, int(horizon), warmup, rec, events, su_policy, trace,
        occupancy=occ, transitions=seen, path=np.array(path) if record_path else None,
    )


def simulate_greedy(
    config: SystemConfig,
    horizon: int = 100_000,
    warmup: int | None = None,
    seed: Seed = 0,
    *,
    su_policy: str = "lowest",
    trace: bool = False,
    record_path: bool = False,
    check_stability: bool = True,
) -> SimResult:
    """Simulate the infinite-memory greedy scheduler on the coded system."""
    warmup = _check_run_args(config, horizon, warmup, su_policy)
    if check_stability and config.lam >= config.r * config.mu:
        raise UnstableSystem(f"lambda={config.lam} >= r*mu")
    n = 2 * config.r
    total = warmup + int(horizon)
    arrivals, services, ties = _streams(config, seed)
    rec = _Recorder()
    new_request = rec.new
    asg0, asg1 = rec.assign
    cmp0, cmp1 = rec.complete
    su0, su1 = rec.su
    ncomp = rec.ncomp
    randomize = su_policy == "random"

    heap: list[tuple[float, int]] = []
    busy_req = [-1] * n
    busy_pkt = [0] * n
    idle = list(range(n))
    queue: deque[int] = deque()
    packets = 0
    t = 0.0
    next_arr = arrivals()
    done = 0
    events = 0
    path: list[tuple[float, int]] = []

    while done < total:
        if heap and heap[0][0] <= next_arr:
            tt, s = heapq.heappop(heap)
            if tt < t:
                raise SchedulerInvariantError("event clock moved backwards")
            t = tt
            rid = busy_req[s]
            if busy_pkt[s]:
                cmp1[rid] = t
            else:
                cmp0[rid] = t
            ncomp[rid] += 1
            if ncomp[rid] == 2 and rid < total:
                done += 1
            busy_req[s] = -1
            packets -= 1
            insort(idle, s)
        else:
            t = next_arr
            rid = new_request(t)
            queue.append(rid)
            packets += 2
            next_arr = t + arrivals()
            if record_path:
                path.append((t, packets))
        events += 1

        if queue and idle:
            order = idle
            if randomize and len(idle) > 1:
                order = idle[:]
                for j in range(len(order) - 1, 0, -1):
                    k = ties.choice_index(j + 1)
                    order[j], order[k] = order[k], order[j]
            left = []
            for s in order:
                if not queue:
                    left.append(s)
                    continue
                for idx, rid in enumerate(queue):
                    first = su0[rid]
                    if first < 0:
                        asg0[rid] = t
                        su0[rid] = s
                        busy_pkt[s] = 0
                        break
                    if first != s:
                        asg1[rid] = t
                        su1[rid] = s
                        busy_pkt[s] = 1
                        del queue[idx]
                        break
                else:
                    left.append(s)
                    continue
                busy_req[s] = rid
                heapq.heappush(heap, (t + services[s](), s))
            left.sort()
            idle = left
            if queue and idle:
                if len(idle) != 1 or any(su0[q] != idle[0] for q in queue):
                    raise SchedulerInvariantError(
                        f"t={t}: greedy left units {idle} idle with an eligible backlog"
                    )

    return _finish(
        "greedy", config, seed, int(horizon), warmup, rec, events, su_policy, trace,
        path=np.array(path) if record_path else None,
    )


def simulate_uncoded(
    config: SystemConfig,
    horizon: int = 100_000,
    warmup: int | None = None,
    seed: Seed = 0,
    *,
    su_policy: str = "lowest",
    trace: bool = False,
    record_path: bool = False,
    check_stability: bool = True,
) -> SimResult:
    """Simulate replication: units 0..r-1 hold packet A and r..2r-1 hold packet B."""
    warmup = _check_run_args(config, horizon, warmup, su_policy)
    if check_stability and config.lam >= config.r * config.mu:
        raise UnstableSystem(f"lambda={config.lam} >= r*mu")
    r = config.r
    n = 2 * r
    total = warmup + int(horizon)
    arrivals, services, ties = _streams(config, seed)
    rec = _Recorder()
    new_request = rec.new
    asg = rec.assign
    cmp = rec.complete
    sus = rec.su
    ncomp = rec.ncomp
    randomize = su_policy == "random"

    heap: list[tuple[float, int]] = []
    busy_req = [-1] * n
    idle = (list(range(r)), list(range(r, n)))
    queues: tuple[deque[int], deque[int]] = (deque(), deque())
    t = 0.0
    next_arr = arrivals()
    done = 0
    events = 0
    packets = 0
    path: list[tuple[float, int]] = []

    while done < total:
        if heap and heap[0][0] <= next_arr:
            tt, s = heapq.heappop(heap)
            if tt < t:
                raise SchedulerInvariantError("event clock moved backwards")
            t = tt
            pool = 0 if s < r else 1
            rid = busy_req[s]
            cmp[pool][rid] = t
            ncomp[rid] += 1
            if ncomp[rid] == 2 and rid < total:
                done += 1
            busy_req[s] = -1
            packets -= 1
            insort(idle[pool], s)
            pools = (pool,)
        else:
            t = next_arr
            rid = new_request(t)
            queues[0].append(rid)
            queues[1].append(rid)
            packets += 2
            next_arr = t + arrivals()
            pools = (0, 1)
            if record_path:
                path.append((t, packets))
        events += 1

        for pool in pools:
            q, free = queues[pool], idle[pool]
            while q and free:
                rid = q.popleft()
                s = free.pop(ties.choice_index(len(free)) if randomize else 0)
                asg[pool][rid] = t
                sus[pool][rid] = s
                busy_req[s] = rid
                heapq.heappush(heap, (t + services[s](), s))

    return _finish(
        "uncoded", config, seed, int(horizon), warmup, rec, events, su_policy, trace,
        path=np.array(path) if record_path else None,
    )


def _batch_ci(x: np.ndarray, batches: int = BATCHES, confidence: float = 0.95) -> float:
    usable = (len(x) // batches) * batches
    if usable < batches:
        return math.nan
    means = x[:usable].reshape(batches, -1).mean(axis=1)
    return float(stats.t.ppf(0.5 + confidence / 2, batches - 1) * means.std(ddof=1) / math.sqrt(batches))


def _finish(
    scheduler: str,
    config: SystemConfig,
    seed: Seed,
    horizon: int,
    warmup: int,
    rec: _Recorder,
    events: int,
    su_policy: str,
    trace: bool,
    **extra,
) -> SimResult:
    total = warmup + horizon
    sl = slice(warmup, total)
    arr = np.asarray(rec.arrival[sl])
    c0 = np.asarray(rec.complete[0][sl])
    c1 = np.asarray(rec.complete[1][sl])
    s0 = np.asarray(rec.su[0][:total])
    s1 = np.asarray(rec.su[1][:total])
    t0, t1 = c0 - arr, c1 - arr
    packet = 0.5 * (t0 + t1)
    request = np.maximum(t0, t1)
    offset = request - packet
    report = DelayReport(
        mean_packet_delay=float(packet.mean()),
        mean_request_delay=float(request.mean()),
        source="simulation",
        ci_halfwidth_packet=_batch_ci(packet),
        ci_halfwidth_request=_batch_ci(request),
        n_samples=horizon,
    )
    span = float(max(c0.max(), c1.max()) - arr[0])
    records = None
    if trace:
        records = [
            RequestRecord(
                i,
                rec.arrival[i],
                (rec.assign[0][i], rec.assign[1][i]),
                (rec.complete[0][i], rec.complete[1][i]),
                (rec.su[0][i], rec.su[1][i]),
            )
            for i in range(total)
        ]
    return SimResult(
        scheduler=scheduler,
        config=config,
        seed=seed,
        horizon=horizon,
        warmup=warmup,
        report=report,
        mean_offset=float(offset.mean()),
        ci_halfwidth_offset=_batch_ci(offset),
        throughput=horizon / span,
        ci_method=f"batch-means({BATCHES})",
        distinct_ok=bool(np.all(s0 != s1) and np.all(s0 >= 0) and np.all(s1 >= 0)),
        su_policy=su_policy,
        events=events,
        records=records,
        **extra,
    )


SIMULATORS: dict[str, Callable[..., SimResult]] = {
    "uncoded": simulate_uncoded,
    "bos": simulate_bos,
    "greedy": simulate_greedy,
}


def write_trace(out: TextIO, records: Iterable[RequestRecord]) -> None:
    w = csv.writer(out, lineterminator="\n")
    w.writerow(TRACE_COLUMNS)
    for rr in records:
        w.writerow(
            (
                rr.id,
                repr(rr.arrival_time),
                repr(rr.packet_assign_time[0]),
                repr(rr.packet_assign_time[1]),
                repr(rr.packet_complete_time[0]),
                repr(rr.packet_complete_time[1]),
                rr.serving_su[0],
                rr.serving_su[1],
            )
        )


def queue_drift(path: np.ndarray) -> float:
    """Least-squares slope of packets-in-system against time."""
    slope, _ = np.polyfit(path[:, 0], path[:, 1], 1)
    return float(slope)


def mean_ci(values, confidence: float = 0.95) -> tuple[float, float]:
    """Sample mean and two-sided Student-t half-width."""
    x = np.asarray(values, dtype=float)
    if len(x) < 2:
        raise ValueError("need at least two values for a confidence interval")
    half = stats.t.ppf(0.5 + confidence / 2, len(x) - 1) * x.std(ddof=1) / math.sqrt(len(x))
    return float(x.mean()), float(half)


@dataclass
class ReplicationSummary:
    scheduler: str
    config: SystemConfig
    base_seed: int
    results: list[SimResult]
    ci_method: str = "independent-replications"
    confidence: float = 0.95
    report: DelayReport = field(init=False)
    mean_offset: float = field(init=False)
    ci_halfwidth_offset: float = field(init=False)
    throughput: float = field(init=False)

    def __post_init__(self) -> None:
        pk, pk_h = mean_ci([x.mean_packet_delay for x in self.results], self.confidence)
        rq, rq_h = mean_ci([x.mean_request_delay for x in self.results], self.confidence)
        self.mean_offset, self.ci_halfwidth_offset = mean_ci(
            [x.mean_offset for x in self.results], self.confidence
        )
        self.throughput = float(np.mean([x.throughput for x in self.results]))
        self.report = DelayReport(
            pk, rq, "simulation", pk_h, rq_h, sum(x.horizon for x in self.results)
        )

    @property
    def n_reps(self) -> int:
        return len(self.results)

    @property
    def distinct_ok(self) -> bool:
        return all(x.distinct_ok for x in self.results)

    def occupancy_ci(self, confidence: float | None = None) -> dict[ChainState, tuple[float, float]]:
        """Per-state mean occupancy and replication half-width."""
        confidence = self.confidence if confidence is None else confidence
        keys = set()
        for x in self.results:
            keys |= set(x.occupancy or ())
        return {
            s: mean_ci([(x.occupancy or {}).get(s, 0.0) for x in self.results], confidence)
            for s in sorted(keys)
        }


def replication_seed(base_seed: int, rep: int) -> tuple[int, int]:
    return (int(base_seed), int(rep))


def _run_one(args):
    name, config, horizon, warmup, seed, kwargs = args
    return SIMULATORS[name](config, horizon, warmup, seed, **kwargs)


def run_replications(
    op: str | Callable[..., SimResult],
    config: SystemConfig,
    n_reps: int = 10,
    base_seed: int = 0,
    horizon: int = 100_000,
    warmup: int | None = None,
    *,
    workers: int = 1,
    confidence: float = 0.95,
    **kwargs,
) -> ReplicationSummary:
    """Run ``n_reps`` independent replications seeded ``(base_seed, rep)``.

    Replications are independent, so ``workers > 1`` farms them out to
    processes; results are merged in replication order either way.
    """
    if n_reps < 2:
        raise InvalidConfig("n_reps must be >= 2")
    name = op if isinstance(op, str) else next(k for k, v in SIMULATORS.items() if v is op)
    if name not in SIMULATORS:
        raise InvalidConfig(f"unknown scheduler {name!r}")
    jobs = [(name, config, horizon, warmup, replication_seed(base_seed, i), kwargs) for i in range(n_reps)]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_run_one, jobs))
    else:
        results = [_run_one(j) for j in jobs]
    return ReplicationSummary(name, config, int(base_seed), results, confidence=confidence)


def paired_difference(a: ReplicationSummary, b: ReplicationSummary, confidence: float = 0.95):
    """Per-replication differences a - b of mean packet delay.

    Returns (mean difference, one-sided upper confidence bound).
    """
    d = np.array([x.mean_packet_delay - y.mean_packet_delay for x, y in zip(a.results, b.results)])
    upper = d.mean() + stats.t.ppf(confidence, len(d) - 1) * d.std(ddof=1) / math.sqrt(len(d))
    return float(d.mean()), float(upper)
