"""Discrete-event simulation of layer-level DNN execution on a multi-accelerator system.

Scheduling happens only at epoch boundaries ``k * epoch_ts``. Between
boundaries, running sub-jobs progress at a common rate that is throttled
whenever the summed bandwidth demand exceeds the shared budget. Sub-jobs
are never preempted; a sub-job queued on a busy SA that has not started by
the next boundary is pulled back into the ready queue (a deferral).
"""
from __future__ import annotations

import csv
import enum
import io
import json
import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable, Protocol, Sequence

import numpy as np

from .errors import InconsistentTrace, SchedulerContract
from .sla import SlaBook, record_outcome
from .workload import MasConfig, ModelProfile, RequestTrace, isolated_latency


class SjState(enum.IntEnum):
    BLOCKED = 0
    READY = 1
    QUEUED = 2
    RUNNING = 3
    DONE = 4


class Job:
    __slots__ = ("req", "profile", "subjobs", "pending", "n_done", "finish",
                 "remaining_work", "sla", "req_id", "arrival", "deadline")

    def __init__(self, req, profile: ModelProfile, min_latency: np.ndarray, sla=None):
        self.req = req
        self.req_id = req.req_id
        self.arrival = req.arrival
        self.deadline = req.deadline
        self.profile = profile
        self.pending = [len(d) for d in profile.deps]
        self.subjobs = [SubJob(self, i, SjState.READY if not d else SjState.BLOCKED)
                        for i, d in enumerate(profile.deps)]
        self.n_done = 0
        self.finish = None
        self.remaining_work = float(min_latency.sum())
        self.sla = sla


class SubJob:
    """One layer of one request. Exposes the descriptor fields schedulers read."""

    __slots__ = ("job", "layer_id", "state", "start", "finish", "sa", "defer_count",
                 "remaining", "demand", "queued_at", "epochs_seen")

    def __init__(self, job: Job, layer_id: int, state: SjState):
        self.job = job
        self.layer_id = layer_id
        self.state = state
        self.start = None
        self.finish = None
        self.sa = None
        self.defer_count = 0
        self.remaining = 0.0
        self.demand = 0.0
        self.queued_at = None
        self.epochs_seen = 0

    # descriptor view -----------------------------------------------------
    @property
    def req_id(self) -> int:
        return self.job.req_id

    @property
    def tenant_id(self) -> int:
        return self.job.req.tenant_id

    @property
    def model_id(self) -> int:
        return self.job.req.model_id

    @property
    def arrival(self) -> int:
        return self.job.arrival

    @property
    def deadline(self) -> int:
        return self.job.deadline

    @property
    def qos_level(self):
        return self.job.req.qos_level

    @property
    def n_layers(self) -> int:
        return self.job.profile.n_layers

    @property
    def key(self) -> tuple[int, int]:
        return (self.job.req_id, self.layer_id)

    def order_key(self):
        return (self.job.arrival, self.job.req_id, self.layer_id)

    def __repr__(self):
        return f"SubJob(req={self.req_id}, layer={self.layer_id}, {self.state.name})"


@dataclass
class SaState:
    sa_id: int
    kind: int
    running: SubJob | None = None
    queue: list = field(default_factory=list)  # highest priority last

    @property
    def busy(self) -> bool:
        return self.running is not None

    def occupied_cycles(self) -> float:
        return self.running.remaining if self.running is not None else 0.0


@dataclass(frozen=True)
class SystemSnapshot:
    now: float
    busy: tuple[bool, ...]
    occupied_cycles: tuple[float, ...]
    ready: tuple = ()

    @property
    def n_sas(self) -> int:
        return len(self.busy)


def system_snapshot(sas: Sequence[SaState], ready=(), now: float = 0.0) -> SystemSnapshot:
    """Per-SA busy flag and remaining cycles of the running sub-job at the nominal rate."""
    return SystemSnapshot(float(now), tuple(sa.running is not None for sa in sas),
                          tuple(float(sa.occupied_cycles()) for sa in sas), tuple(ready))


def effective_rates(demands, total_bandwidth: float) -> np.ndarray:
    """Uniform throttling: every running sub-job progresses at ``min(1, B / sum(d))``."""
    d = np.asarray(demands, dtype=np.float64)
    s = d.sum()
    r = 1.0 if s <= total_bandwidth else total_bandwidth / s
    return np.full(d.shape, r)


def _rate(total_demand: float, total_bandwidth: float) -> float:
    return 1.0 if total_demand <= total_bandwidth else total_bandwidth / total_demand


@dataclass
class SchedulerInput:
    snapshot: SystemSnapshot
    ready: list  # SubJob descriptors ordered by (arrival, req_id, layer_id)
    sla_view: SlaBook
    epoch_ts: float
    latency: np.ndarray  # (n_ready, M) cycles on each SA
    bandwidth: np.ndarray  # (n_ready, M)

    @property
    def now(self) -> float:
        return self.snapshot.now

    @property
    def n_sas(self) -> int:
        return self.snapshot.n_sas

    def __len__(self):
        return len(self.ready)

    @cached_property
    def arrival(self) -> np.ndarray:
        return np.array([s.job.arrival for s in self.ready], dtype=np.float64)

    @cached_property
    def deadline(self) -> np.ndarray:
        return np.array([s.job.deadline for s in self.ready], dtype=np.float64)

    @cached_property
    def req_id(self) -> np.ndarray:
        return np.array([s.job.req_id for s in self.ready], dtype=np.int64)

    def epochs_waited(self, sj: SubJob) -> int:
        """Number of scheduling boundaries the request has been present at."""
        return int(math.floor((self.now - sj.job.arrival) / self.epoch_ts)) + 1


@dataclass
class Assignment:
    priority: np.ndarray
    sa: np.ndarray
    keys: list | None = None  # optional (req_id, layer_id) per entry


class Scheduler(Protocol):
    name: str

    def __call__(self, inp: SchedulerInput) -> Assignment: ...


@dataclass(frozen=True)
class SimConfig:
    epoch_ts: float
    mas: MasConfig
    rng_seed: int = 0
    horizon: float | None = None  # None: run until every request completes

    def __post_init__(self):
        if not self.epoch_ts > 0:
            raise ValueError("epoch_ts must be positive")


def default_epoch_ts(profiles: Sequence[ModelProfile]) -> float:
    return max(1.0, float(np.median([isolated_latency(p) for p in profiles])) / 10.0)


@dataclass
class SimResult:
    requests: dict  # column arrays
    subjobs: dict
    queue_log: dict
    epochs: list
    totals: dict
    n_sas: int
    total_bandwidth: float
    sa_kinds: tuple = ()
    events: list | None = None

    @property
    def n_requests(self) -> int:
        return len(self.requests["req_id"])

    def to_json_dict(self) -> dict:
        def col(d):
            return {k: v.tolist() for k, v in d.items()}

        req = self.requests
        requests = [
            {"req_id": int(req["req_id"][i]), "tenant_id": int(req["tenant_id"][i]),
             "model_id": int(req["model_id"][i]), "arrival": int(req["arrival"][i]),
             "deadline": int(req["deadline"][i]),
             "finish": None if np.isnan(req["finish"][i]) else float(req["finish"][i]),
             "hit": bool(req["hit"][i]), "completed": bool(req["completed"][i])}
            for i in range(self.n_requests)
        ]
        sj = col(self.subjobs)
        subjobs = [dict(zip(sj, vals)) for vals in zip(*sj.values())] if sj else []
        return {"requests": requests, "subjobs": subjobs, "epochs": self.epochs, "totals": self.totals}

    def to_json(self) -> str:
        return json.dumps(self.to_json_dict(), sort_keys=True)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["req_id", "tenant_id", "model_id", "arrival", "deadline", "finish", "hit", "latency"])
        r = self.requests
        for i in range(self.n_requests):
            done = bool(r["completed"][i])
            w.writerow([int(r["req_id"][i]), int(r["tenant_id"][i]), int(r["model_id"][i]),
                        int(r["arrival"][i]), int(r["deadline"][i]),
                        repr(float(r["finish"][i])) if done else "",
                        int(bool(r["hit"][i])), repr(float(r["latency"][i])) if done else ""])
        return buf.getvalue()

    def events_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["time", "event_kind", "req_id", "layer_id", "sa_id"])
        for ev in self.events or ():
            w.writerow([repr(float(ev[0])), ev[1], ev[2], "" if ev[3] is None else ev[3],
                        "" if ev[4] is None else ev[4]])
        return buf.getvalue()


def collect_ready(jobs, now: float = 0.0) -> list[SubJob]:
    """Sub-jobs of ``jobs`` whose predecessors are all done and which are not running or done.

    Queued sub-jobs that have not started are pulled back (state Ready) with
    their ``defer_count`` incremented.
    """
    out = []
    for job in jobs:
        for sj in job.subjobs:
            if sj.state in (SjState.RUNNING, SjState.DONE):
                continue
            if all(job.subjobs[p].state == SjState.DONE for p in job.profile.deps[sj.layer_id]):
                if sj.state == SjState.QUEUED:
                    sj.defer_count += 1
                sj.state = SjState.READY
                out.append(sj)
    out.sort(key=SubJob.order_key)
    return out


def _dispatch_key(prio: float, sj: SubJob):
    return (-prio, sj.job.arrival, sj.job.req_id, sj.layer_id)


def dispatch(assignment: Assignment, ready: Sequence[SubJob], sas: Sequence[SaState], now: float = 0.0,
             on_start: Callable | None = None) -> None:
    """Place every ready sub-job in its SA queue by descending priority and start idle SAs.

    Ties on priority go to the earlier arrival, then the lower req_id.
    ``on_start(sa, subjob)`` is invoked for each sub-job that starts.
    """
    prio, sa_idx = _check_assignment(assignment, ready, len(sas))
    per_sa: dict[int, list] = {}
    for p, s, sj in zip(prio, sa_idx, ready):
        per_sa.setdefault(s, []).append((_dispatch_key(p, sj), sj))
    for s, items in per_sa.items():
        sa = sas[s]
        items.sort(key=lambda kv: kv[0], reverse=True)  # pop() yields the best
        for _, sj in items:
            sj.state = SjState.QUEUED
            sj.sa = s
            sj.queued_at = now
        sa.queue = [sj for _, sj in items]
        if sa.running is None and sa.queue:
            head = sa.queue.pop()
            if on_start is not None:
                on_start(sa, head)
            else:
                head.state = SjState.RUNNING
                head.start = now
                sa.running = head


def _check_assignment(assignment: Assignment, ready: Sequence[SubJob], n_sas: int):
    prio = np.asarray(assignment.priority, dtype=np.float64).ravel()
    sa_idx = np.asarray(assignment.sa).ravel()
    n = len(ready)
    if assignment.keys is not None:
        keys = [tuple(k) for k in assignment.keys]
        if len(set(keys)) != len(keys):
            raise SchedulerContract("duplicate sub-job in assignment")
        pos = {k: i for i, k in enumerate(keys)}
        want = [sj.key for sj in ready]
        if set(pos) != set(want):
            missing = set(want) - set(pos)
            raise SchedulerContract(f"assignment does not match the ready set (missing {sorted(missing)[:3]})")
        order = [pos[k] for k in want]
        prio, sa_idx = prio[order], sa_idx[order]
    if len(prio) != n or len(sa_idx) != n:
        raise SchedulerContract(f"assignment covers {len(prio)}/{len(sa_idx)} entries for {n} ready sub-jobs")
    if n and (not np.all(np.isfinite(prio))):
        raise SchedulerContract("non-finite priority")
    if n and (sa_idx.min() < 0 or sa_idx.max() >= n_sas):
        raise SchedulerContract(f"SA index out of range [0, {n_sas})")
    return prio.tolist(), [int(s) for s in sa_idx]


class Simulation:
    """Stepwise simulator: alternate :meth:`next_decision` and :meth:`apply`.

    ``run_simulation`` wraps the loop for a scheduler callable; the RL trainer
    drives the steps itself to observe rewards between decisions.
    """

    def __init__(self, cfg: SimConfig, trace: RequestTrace, profiles: Sequence[ModelProfile],
                 sla_book: SlaBook | None = None, record_events: bool = False, log_actions: bool = True):
        self.cfg = cfg
        self.mas = cfg.mas
        self.B = float(cfg.mas.total_bandwidth)
        self.ts = float(cfg.epoch_ts)
        self.horizon = math.inf if cfg.horizon is None else float(cfg.horizon)
        by_id = {p.model_id: p for p in profiles}
        for r in trace.requests:
            if r.model_id not in by_id:
                raise InconsistentTrace(f"request {r.req_id} references unknown model {r.model_id}")
        self.profiles = by_id
        self.trace = trace
        self.sla_book = sla_book if sla_book is not None else SlaBook()
        kinds = cfg.mas.kind_index
        # per model: (n_layers, M) latency / bandwidth / energy as seen by each SA
        self._lat = {m: np.ascontiguousarray(p.latency[:, kinds]) for m, p in by_id.items()}
        self._bw = {m: np.ascontiguousarray(p.bandwidth[:, kinds]) for m, p in by_id.items()}
        self._en = {m: np.ascontiguousarray(p.energy[:, kinds]) for m, p in by_id.items()}
        self._minlat = {m: a.min(axis=1) for m, a in self._lat.items()}
        self._lat_l = {m: a.tolist() for m, a in self._lat.items()}
        self._bw_l = {m: a.tolist() for m, a in self._bw.items()}
        self._minlat_l = {m: a.tolist() for m, a in self._minlat.items()}
        self.sas = [SaState(sa.sa_id, int(sa.kind)) for sa in cfg.mas.sas]
        self.now = 0.0
        self.epoch = 0
        self._next_req = 0
        self.jobs: list[Job] = []
        self.pool: list[SubJob] = []  # Ready or Queued sub-jobs
        self.active = 0
        self.total_demand = 0.0
        self.n_running = 0
        self.completions: list = []
        self._pending_ready: list[SubJob] | None = None
        self.finished = False
        self.record_events = record_events
        self.log_actions = log_actions
        self.events: list = []
        self._sj_rec: list = []
        self._q_rec: list = []
        self.epoch_log: list = []
        self.energy = 0.0
        self.deferrals = 0

    # -- time advance ------------------------------------------------------
    def _start(self, sa: SaState, sj: SubJob) -> None:
        sj.state = SjState.RUNNING
        sj.start = self.now
        sj.sa = sa.sa_id
        m = sj.job.req.model_id
        sj.remaining = self._lat_l[m][sj.layer_id][sa.sa_id]
        sj.demand = self._bw_l[m][sj.layer_id][sa.sa_id]
        self._q_rec.append((sa.sa_id, sj.queued_at, self.now))
        self.total_demand += sj.demand
        self.n_running += 1
        sa.running = sj
        if self.record_events:
            self.events.append((self.now, "start", sj.job.req_id, sj.layer_id, sa.sa_id))

    def _complete(self, sa: SaState) -> None:
        sj = sa.running
        sa.running = None
        self.n_running -= 1
        self.total_demand -= sj.demand
        if self.n_running == 0:
            self.total_demand = 0.0  # drop accumulated rounding
        sj.state = SjState.DONE
        sj.finish = self.now
        sj.remaining = 0.0
        job = sj.job
        m = job.req.model_id
        energy = float(self._en[m][sj.layer_id, sa.sa_id])
        self.energy += energy
        self._sj_rec.append((job.req_id, sj.layer_id, sa.sa_id, sj.start, self.now, sj.defer_count,
                             sj.demand, self._lat_l[m][sj.layer_id][sa.sa_id], energy))
        if self.record_events:
            self.events.append((self.now, "finish", job.req_id, sj.layer_id, sa.sa_id))
        job.n_done += 1
        job.remaining_work -= self._minlat_l[m][sj.layer_id]
        for succ in job.profile.successors[sj.layer_id]:
            job.pending[succ] -= 1
            if job.pending[succ] == 0:
                nxt = job.subjobs[succ]
                nxt.state = SjState.READY
                self.pool.append(nxt)
        if job.n_done == len(job.subjobs):
            job.finish = self.now
            hit = self.now <= job.deadline
            st = job.sla
            before = st.snapshot()
            record_outcome(st, hit)
            self.completions.append((before, hit))
            self.active -= 1
            if self.record_events:
                self.events.append((self.now, "complete", job.req_id, None, None))
        if sa.queue:
            self._start(sa, sa.queue.pop())

    def _advance_to(self, t: float) -> None:
        sas = self.sas
        while self.n_running:
            rate = _rate(self.total_demand, self.B)
            rem_min = min(sa.running.remaining for sa in sas if sa.running is not None)
            t_done = self.now + rem_min / rate
            if t_done > t:
                progress = (t - self.now) * rate
                for sa in sas:
                    if sa.running is not None:
                        sa.running.remaining -= progress
                self.now = t
                return
            # everyone advances by exactly rem_min nominal cycles
            done = []
            for sa in sas:
                sj = sa.running
                if sj is not None:
                    sj.remaining -= rem_min
                    if sj.remaining <= 0.0 or sj.remaining <= 1e-9 * rem_min:
                        done.append(sa)
            self.now = t_done
            for sa in done:
                self._complete(sa)
        self.now = t

    # -- epochs ------------------------------------------------------------
    def _admit(self) -> None:
        reqs = self.trace.requests
        while self._next_req < len(reqs) and reqs[self._next_req].arrival <= self.now:
            r = reqs[self._next_req]
            self._next_req += 1
            if r.arrival >= self.horizon:
                continue
            job = Job(r, self.profiles[r.model_id], self._minlat[r.model_id],
                      self.sla_book.get(r.tenant_id, r.model_id))
            self.jobs.append(job)
            self.active += 1
            for sj in job.subjobs:
                if sj.state == SjState.READY:
                    self.pool.append(sj)
            if self.record_events:
                self.events.append((self.now, "arrive", r.req_id, None, None))

    def _collect(self) -> list[SubJob]:
        for sa in self.sas:
            for sj in sa.queue:
                sj.state = SjState.READY
                sj.defer_count += 1
                self.deferrals += 1
                self._q_rec.append((sa.sa_id, sj.queued_at, self.now))
                if self.record_events:
                    self.events.append((self.now, "defer", sj.job.req_id, sj.layer_id, sa.sa_id))
            sa.queue = []
        pool = [sj for sj in self.pool if sj.state == SjState.READY]
        pool.sort(key=SubJob.order_key)
        self.pool = pool
        return pool

    def _next_epoch_time(self) -> float:
        return self.epoch * self.ts

    def _idle(self) -> bool:
        return self.n_running == 0 and not self.pool

    def next_decision(self) -> SchedulerInput | None:
        """Advance to the next epoch boundary with a non-empty ready queue.

        Returns None once the trace is exhausted and the system drained, or
        the horizon is reached.
        """
        if self._pending_ready is not None:
            raise RuntimeError("apply() the pending assignment first")
        reqs = self.trace.requests
        while not self.finished:
            if self._idle():
                if self._next_req >= len(reqs) or reqs[self._next_req].arrival >= self.horizon:
                    self._advance_to(self.now)
                    self.finished = True
                    break
                # skip empty epochs straight to the next arrival's boundary
                k = math.ceil(reqs[self._next_req].arrival / self.ts)
                self.epoch = max(self.epoch, k)
            t = self._next_epoch_time()
            if t > self.horizon:
                self._advance_to(self.horizon)
                self.finished = True
                break
            self._advance_to(t)
            self.epoch += 1
            self._admit()
            ready = self._collect()
            if ready:
                for sj in ready:
                    sj.epochs_seen += 1
                self._pending_ready = ready
                return self._scheduler_input(ready)
        return None

    def _scheduler_input(self, ready: list[SubJob]) -> SchedulerInput:
        lat = np.array([self._lat_l[sj.job.req.model_id][sj.layer_id] for sj in ready])
        bw = np.array([self._bw_l[sj.job.req.model_id][sj.layer_id] for sj in ready])
        snap = SystemSnapshot(self.now, tuple(sa.running is not None for sa in self.sas),
                              tuple(sa.running.remaining if sa.running is not None else 0.0 for sa in self.sas))
        return SchedulerInput(snap, ready, self.sla_book, self.ts, lat, bw)

    def apply(self, assignment: Assignment) -> None:
        ready = self._pending_ready
        if ready is None:
            raise RuntimeError("no pending decision")
        prio, sa_idx = _check_assignment(assignment, ready, len(self.sas))
        self._pending_ready = None
        if self.log_actions:
            self.epoch_log.append({"time": self.now, "n_ready": len(ready),
                                   "actions": [[sj.job.req_id, sj.layer_id, p, s]
                                               for sj, p, s in zip(ready, prio, sa_idx)]})
        else:
            self.epoch_log.append({"time": self.now, "n_ready": len(ready)})
        if self.record_events:
            for sj, s in zip(ready, sa_idx):
                self.events.append((self.now, "dispatch", sj.job.req_id, sj.layer_id, s))
        dispatch(Assignment(prio, sa_idx), ready, self.sas, self.now, on_start=self._start)

    def pop_completions(self) -> list:
        out, self.completions = self.completions, []
        return out

    def result(self) -> SimResult:
        jobs = self.jobs
        n = len(jobs)
        finish = np.array([j.finish if j.finish is not None else np.nan for j in jobs], dtype=np.float64)
        completed = ~np.isnan(finish)
        deadline = np.array([j.deadline for j in jobs], dtype=np.int64)
        arrival = np.array([j.arrival for j in jobs], dtype=np.int64)
        hit = completed & (np.nan_to_num(finish, nan=np.inf) <= deadline)
        requests = {
            "req_id": np.array([j.req_id for j in jobs], dtype=np.int64),
            "tenant_id": np.array([j.req.tenant_id for j in jobs], dtype=np.int64),
            "model_id": np.array([j.req.model_id for j in jobs], dtype=np.int64),
            "arrival": arrival,
            "deadline": deadline,
            "finish": finish,
            "hit": hit,
            "completed": completed,
            "latency": finish - arrival,
        }
        names = ("req_id", "layer_id", "sa_id", "start", "finish", "defer_count", "bandwidth", "latency", "energy")
        kinds = (np.int64, np.int64, np.int64, np.float64, np.float64, np.int64, np.float64, np.float64, np.float64)
        cols = list(zip(*self._sj_rec)) if self._sj_rec else [()] * len(names)
        subjobs = {k: np.array(c, dtype=t) for k, c, t in zip(names, cols, kinds)}
        qcols = list(zip(*self._q_rec)) if self._q_rec else [(), (), ()]
        queue_log = {"sa_id": np.array(qcols[0], dtype=np.int64),
                     "enqueue": np.array(qcols[1], dtype=np.float64),
                     "dequeue": np.array(qcols[2], dtype=np.float64)}
        totals = {
            "energy": float(self.energy),
            "deferrals": int(self.deferrals),
            "requests": int(n),
            "completed": int(completed.sum()),
            "censored": int(n - completed.sum()),
            "hits": int(hit.sum()),
            "decision_epochs": len(self.epoch_log),
            "ready_steps": int(sum(e["n_ready"] for e in self.epoch_log)),
            "end_time": float(self.now),
        }
        return SimResult(requests, subjobs, queue_log, self.epoch_log, totals, len(self.sas), self.B,
                         tuple(sa.kind for sa in self.sas), self.events if self.record_events else None)


def run_simulation(cfg: SimConfig, trace: RequestTrace, profiles: Sequence[ModelProfile], scheduler,
                   sla_book: SlaBook | None = None, record_events: bool = False,
                   log_actions: bool = True) -> SimResult:
    sim = Simulation(cfg, trace, profiles, sla_book, record_events, log_actions)
    while (inp := sim.next_decision()) is not None:
        sim.apply(scheduler(inp))
    return sim.result()


def total_energy(result: SimResult, profiles: Sequence[ModelProfile] | None = None) -> float:
    """Energy of every executed sub-job on the kind of SA it ran on (pJ).

    With ``profiles`` the sum is recomputed from the cost tables rather than
    taken from the execution record.
    """
    sj = result.subjobs
    if len(sj["req_id"]) == 0:
        return 0.0
    if profiles is None:
        return float(np.sum(sj["energy"]))
    by_id = {p.model_id: p for p in profiles}
    model_of = dict(zip(result.requests["req_id"].tolist(), result.requests["model_id"].tolist()))
    total = 0.0
    for rid, layer, sa in zip(sj["req_id"].tolist(), sj["layer_id"].tolist(), sj["sa_id"].tolist()):
        total += float(by_id[model_of[rid]].energy[layer, result.sa_kinds[sa]])
    return total
