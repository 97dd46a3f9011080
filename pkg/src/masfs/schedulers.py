"""Heuristic schedulers and an exhaustive oracle for tiny instances."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .errors import ConfigError, TooLarge
from .simcore import Assignment, SchedulerInput, SystemSnapshot
from .workload import QosLevel

PREMA_BASE_PRIORITY = {QosLevel.HIGH: 3, QosLevel.MEDIUM: 2, QosLevel.LOW: 1}
DEFAULT_PREMA_THETA = 8.0


def rank_priorities(order: Sequence[int], n: int) -> np.ndarray:
    """Map a ranking (best first) to distinct priorities ``(n - rank) / n`` in (0, 1]."""
    prio = np.empty(n)
    for rank, i in enumerate(order):
        prio[i] = (n - rank) / n
    return prio


def earliest_finish_sa(latency, snapshot: SystemSnapshot | Sequence[float], queued_ahead=None) -> int:
    """SA minimising occupied + queued-ahead work + this sub-job's latency; ties to the lower id."""
    occupied = snapshot.occupied_cycles if isinstance(snapshot, SystemSnapshot) else snapshot
    best, best_t = 0, None
    for s, lat in enumerate(latency):
        t = occupied[s] + (queued_ahead[s] if queued_ahead is not None else 0.0) + lat
        if best_t is None or t < best_t:
            best, best_t = s, t
    return best


def _greedy_spatial(inp: SchedulerInput, order: Sequence[int], chooser=earliest_finish_sa) -> np.ndarray:
    m = inp.n_sas
    ahead = [0.0] * m
    sa = np.zeros(len(order), dtype=np.int64)
    occupied = inp.snapshot.occupied_cycles
    lat = inp.latency.tolist()
    for i in order:
        s = chooser(lat[i], occupied, ahead)
        sa[i] = s
        ahead[s] += lat[i][s]
    return sa


def _fcfs_key(sj):
    return (sj.job.arrival, sj.job.req_id, sj.layer_id)


class _Heuristic:
    name = "heuristic"

    def order(self, inp: SchedulerInput) -> list[int]:
        raise NotImplementedError

    def spatial(self, inp: SchedulerInput, order):
        return _greedy_spatial(inp, order)

    def __call__(self, inp: SchedulerInput) -> Assignment:
        order = self.order(inp)
        return Assignment(rank_priorities(order, len(inp.ready)), self.spatial(inp, order))

    def __repr__(self):
        return f"<{self.name}>"


class FcfsH(_Heuristic):
    """First come first serve, earliest-finish SA."""
    name = "fcfs-h"

    def order(self, inp):
        r = inp.ready
        return sorted(range(len(r)), key=lambda i: _fcfs_key(r[i]))


class EdfH(_Heuristic):
    """Earliest absolute deadline first, earliest-finish SA."""
    name = "edf-h"

    def order(self, inp):
        r = inp.ready
        return sorted(range(len(r)), key=lambda i: (r[i].job.deadline,) + _fcfs_key(r[i]))


def _min_max_load(latency, occupied, ahead) -> int:
    # minimise the largest projected SA load; then the total; then the id
    loads = [o + a for o, a in zip(occupied, ahead)]
    top = max(range(len(loads)), key=loads.__getitem__)
    second = max((l for j, l in enumerate(loads) if j != top), default=0.0)
    best, best_key = 0, None
    for s, lat in enumerate(latency):
        proj = loads[s] + lat
        key = (max(proj, second if s == top else loads[top]), proj)
        if best_key is None or key < best_key:
            best, best_key = s, key
    return best


class HeraldLB(_Heuristic):
    """FCFS order with greedy load balancing across SAs."""
    name = "herald"

    def order(self, inp):
        r = inp.ready
        return sorted(range(len(r)), key=lambda i: _fcfs_key(r[i]))

    def spatial(self, inp, order):
        return _greedy_spatial(inp, order, chooser=_min_max_load)


class PremaH(_Heuristic):
    """Token-based candidate selection with shortest-job-first among candidates.

    A request's token is its QoS base priority times the number of epochs it
    has waited. Requests whose token reaches ``theta`` are candidates (the
    single highest-token request when none do) and run shortest remaining
    work first; the rest follow by descending token.
    """
    name = "prema-h"

    def __init__(self, theta: float = DEFAULT_PREMA_THETA):
        if not theta > 0:
            raise ValueError("theta must be positive")
        self.theta = float(theta)

    def tokens(self, inp: SchedulerInput) -> dict[int, float]:
        out = {}
        for sj in inp.ready:
            rid = sj.job.req_id
            if rid not in out:
                out[rid] = PREMA_BASE_PRIORITY[sj.job.req.qos_level] * inp.epochs_waited(sj)
        return out

    def order(self, inp):
        r = inp.ready
        tok = self.tokens(inp)
        cands = {rid for rid, t in tok.items() if t >= self.theta}
        if not cands and tok:
            first = {}
            for sj in r:
                first.setdefault(sj.job.req_id, _fcfs_key(sj))
            best = max(tok, key=lambda rid: (tok[rid], tuple(-x for x in first[rid])))
            cands = {best}

        def key(i):
            sj = r[i]
            rid = sj.job.req_id
            if rid in cands:
                return (0, sj.job.remaining_work) + _fcfs_key(sj)
            return (1, -tok[rid]) + _fcfs_key(sj)

        return sorted(range(len(r)), key=key)


class RandomScheduler:
    """Seeded random priorities and SAs; exercises the simulator in tests."""
    name = "random"

    def __init__(self, seed: int = 0):
        self.rng = np.random.default_rng(seed)

    def __call__(self, inp):
        n = len(inp.ready)
        return Assignment(self.rng.random(n), self.rng.integers(0, inp.n_sas, size=n))


HEURISTICS: dict[str, Callable] = {
    "fcfs-h": FcfsH,
    "edf-h": EdfH,
    "herald": HeraldLB,
    "prema-h": PremaH,
}
RL_NAMES = ("rl-baseline", "rl-sla")
SCHEDULER_NAMES = tuple(HEURISTICS) + RL_NAMES


def make_scheduler(name: str, params: dict | None = None, checkpoint=None):
    """Build a scheduler by config name; RL names need a checkpoint path."""
    params = params or {}
    if name == "prema-h":
        return PremaH(float(params.get("prema.theta", DEFAULT_PREMA_THETA)))
    if name in HEURISTICS:
        return HEURISTICS[name]()
    if name in RL_NAMES:
        if checkpoint is None:
            raise ConfigError(f"{name}.checkpoint", "RL schedulers need a checkpoint")
        from .rl.policy import RLScheduler, load_checkpoint
        actor, _critic, meta = load_checkpoint(checkpoint)
        return RLScheduler(actor, meta["mode"], name=name)
    raise ConfigError("scheduler", f"unknown scheduler {name!r}; choose from {', '.join(SCHEDULER_NAMES)}")


def is_heuristic(scheduler) -> bool:
    return isinstance(scheduler, _Heuristic)


# ---------------------------------------------------------------------------
# exhaustive oracle

@dataclass(frozen=True)
class OracleJob:
    latency: tuple  # per layer: per-SA latency
    deps: tuple  # per layer: predecessor layer ids
    deadline: float
    release: float = 0.0


@dataclass
class OracleResult:
    hits: int
    schedule: list  # (job, layer, sa, start, finish)
    n_jobs: int = 0

    @property
    def all_feasible(self) -> bool:
        return self.n_jobs == self.hits


MAX_ORACLE_SUBJOBS = 8
MAX_ORACLE_SAS = 2


def brute_force_oracle(jobs: Sequence[OracleJob], n_sas: int) -> OracleResult:
    """Maximum number of met deadlines over every non-preemptive schedule.

    Enumerates every sequence of (sub-job, SA) choices that respects layer
    dependencies, each sub-job starting as early as its SA and predecessors
    allow. That set contains an optimal schedule for any objective that never
    prefers later finish times, so the maximum is exact. Contention is not
    modelled. Identical partial states are memoised.
    """
    subs = [(j, l) for j, job in enumerate(jobs) for l in range(len(job.latency))]
    if len(subs) > MAX_ORACLE_SUBJOBS or n_sas > MAX_ORACLE_SAS:
        raise TooLarge(f"oracle supports <= {MAX_ORACLE_SUBJOBS} sub-jobs and <= {MAX_ORACLE_SAS} SAs")
    if not subs:
        return OracleResult(0, [], len(jobs))
    index = {s: i for i, s in enumerate(subs)}
    n = len(subs)
    preds = [tuple(index[(j, p)] for p in jobs[j].deps[l]) for j, l in subs]
    succs = [[] for _ in range(n)]
    for i, ps in enumerate(preds):
        for p in ps:
            succs[p].append(i)
    job_mask = [0] * len(jobs)
    for i, (j, _) in enumerate(subs):
        job_mask[j] |= 1 << i
    lat = [tuple(float(x) for x in jobs[j].latency[l]) for j, l in subs]
    release = [float(jobs[j].release) for j, _ in subs]
    full = (1 << n) - 1
    memo: dict = {}

    def solve(mask, free, fin, late):
        # fin: finish time per sub-job (None when not done); late: per-job flag
        lo = min(free)
        key = (mask, free,
               tuple(None if f is None or all(mask >> s & 1 for s in succs[i]) else max(f, lo)
                     for i, f in enumerate(fin)),
               late)
        hit = memo.get(key)
        if hit is not None:
            return hit
        best = (-1, None)
        for i in range(n):
            if mask >> i & 1 or any(not (mask >> p & 1) for p in preds[i]):
                continue
            j = subs[i][0]
            ready_t = max([release[i]] + [fin[p] for p in preds[i]])
            for s in range(n_sas):
                start = max(free[s], ready_t)
                f = start + lat[i][s]
                nmask = mask | 1 << i
                nfree = free[:s] + (f,) + free[s + 1:]
                nfin = fin[:i] + (f,) + fin[i + 1:]
                jl = late[j] or f > jobs[j].deadline
                gain = 0
                if nmask & job_mask[j] == job_mask[j]:
                    gain = 0 if jl else 1
                nlate = late[:j] + (jl,) + late[j + 1:]
                sub = 0 if nmask == full else solve(nmask, nfree, nfin, nlate)[0]
                if gain + sub > best[0]:
                    best = (gain + sub, (i, s, start, f, nmask, nfree, nfin, nlate))
        memo[key] = best
        return best

    state = (0, (0.0,) * n_sas, (None,) * n, (False,) * len(jobs))
    total = solve(*state)[0]
    schedule = []
    while state[0] != full:
        _, step = solve(*state)
        i, s, start, f, nmask, nfree, nfin, nlate = step
        schedule.append((subs[i][0], subs[i][1], s, start, f))
        state = (nmask, nfree, nfin, nlate)
    return OracleResult(total, schedule, len(jobs))
