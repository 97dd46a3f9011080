"""Small environments where the preferred scheduling behaviour is known in advance.

Every request runs one 100-cycle layer that needs the whole system bandwidth, so two
requests released in the same epoch cannot both meet a 200-cycle deadline: running them
side by side halves both rates and misses both, running them back to back saves one.
"""
import numpy as np

from masfs.rl.ddpg import EnvSpec, TrainConfig, train_policy
from masfs.rl.policy import RLScheduler
from masfs.simcore import SimConfig, Simulation
from masfs.sla import SlaBook
from masfs.workload import (MasConfig, ModelProfile, QosLevel, Request, RequestTrace, SaKind, TenantSpec,
                            assign_targets_zipf, request_deadline)

TS = 50
LATENCY = 100.0
BANDWIDTH = 16.0
ZIPF_LEVELS = [0.7, 0.8, 0.9]

_lat = np.array([[LATENCY, LATENCY]])
PROFILE = ModelProfile(0, "toy", _lat, _lat.copy(), np.array([[BANDWIDTH, BANDWIDTH]]), ((),))
MAS = MasConfig.from_kinds([SaKind.WS, SaKind.RS], BANDWIDTH)


def tenants(targets):
    return [TenantSpec(i, 0, float(t), None, (0, 1, 0)) for i, t in enumerate(targets)]


def _request(reqs, tenant, arrival):
    reqs.append(Request(len(reqs), tenant, 0, arrival, QosLevel.MEDIUM,
                        request_deadline(arrival, LATENCY, QosLevel.MEDIUM)))


def _env(ten, trace_fn, cls=EnvSpec):
    return cls([PROFILE], ten, MAS, TS, 10**9, (2.0, 1.0), trace_fn=trace_fn)


# -- two tenants, one strict and one lax -------------------------------------------------

PAIR_TARGETS = (0.9, 0.5)
PAIR_GAP = 400
PAIR_P = 0.15


def pair_trace(seed, slots=50):
    rng = np.random.default_rng(seed)
    reqs = []
    for k in range(slots):
        base = k * PAIR_GAP + int(rng.integers(1, TS))
        who = [0, 1] if rng.random() < PAIR_P else [int(rng.integers(2))]
        if len(who) == 2:
            rng.shuffle(who)
        for t in who:
            _request(reqs, t, base)
    return RequestTrace(tuple(reqs), seed, slots * PAIR_GAP)


PAIR_ENV = _env(tenants(PAIR_TARGETS), pair_trace)
PAIR_TRAIN = dict(episodes=500, hidden=32, gamma=0.5, sigma=0.3, sigma_decay=0.998, action_l2=1e-3,
                  actor_lr=3e-4, seed=1)


def projected_winner(inp, assign):
    """Tenant whose sub-job the assignment would finish first, given the current SA backlog."""
    occ = list(inp.snapshot.occupied_cycles)
    order = sorted(range(len(inp.ready)), key=lambda i: (-assign.priority[i], inp.ready[i].order_key()))
    finish = {}
    for i in order:
        s = int(assign.sa[i])
        occ[s] += inp.latency[i, s]
        finish[i] = occ[s]
    return inp.ready[min(order, key=finish.__getitem__)].job.req.tenant_id


def pair_preference(scheduler, seeds=range(1000, 1020)):
    """(share of contested epochs won by tenant 0, contested epochs, mean attained rate per tenant)."""
    wins = contested = 0
    rates = []
    for s in seeds:
        sim = PAIR_ENV.simulation(s)
        while (inp := sim.next_decision()) is not None:
            a = scheduler(inp)
            if len({sj.job.req.tenant_id for sj in inp.ready}) == 2:
                contested += 1
                wins += projected_winner(inp, a) == 0
            sim.apply(a)
        book = sim.sla_book
        rates.append([book.get(0, 0).cumulative_rate, book.get(1, 0).cumulative_rate])
    return wins / max(contested, 1), contested, np.mean(rates, axis=0)


def train_pair(mode):
    spec = PAIR_ENV.feature_spec(mode)
    res = train_policy(PAIR_ENV, TrainConfig(**PAIR_TRAIN), mode)
    return RLScheduler(res.policy, spec)


# -- twenty tenants in paired slots --------------------------------------------------------

N_TENANTS = 20
SLOT_GAP = 300
SLOT_P = 0.25
LATE_OFFSET = 20  # upper half of the tenants arrives a little later in the epoch
SLOTS = 100


def slot_trace(seed, slots=SLOTS):
    rng = np.random.default_rng(seed)
    reqs = []
    for k in range(slots):
        base = k * SLOT_GAP + int(rng.integers(1, TS - LATE_OFFSET))
        n = 2 if rng.random() < SLOT_P else 1
        arrivals = sorted((base + (LATE_OFFSET if t >= N_TENANTS // 2 else 0), int(t))
                          for t in rng.choice(N_TENANTS, n, replace=False))
        for a, t in arrivals:
            _request(reqs, t, a)
    return RequestTrace(tuple(reqs), seed, slots * SLOT_GAP)


BEST_EFFORT = tenants([1.0] * N_TENANTS)
ZIPF = [t.target_sli for t in assign_targets_zipf(3, BEST_EFFORT, ZIPF_LEVELS, 1.0)]


class MixedTargetEnv(EnvSpec):
    """Odd episode seeds draw a fresh Zipf target assignment, even ones stay best-effort."""

    def simulation(self, seed, log_actions=False):
        ten = self.tenants
        if seed % 2:
            ten = assign_targets_zipf(seed, self.tenants, ZIPF_LEVELS, 1.0)
        cfg = SimConfig(self.epoch_ts, self.mas, seed, self.sim_horizon)
        return Simulation(cfg, self.trace(seed), self.profiles, SlaBook(ten, window_size=self.window),
                          log_actions=log_actions)


TRAIN_ENV = _env(BEST_EFFORT, slot_trace, MixedTargetEnv)
SLOT_TRAIN = dict(episodes=500, hidden=32, gamma=0.5, sigma=0.3, sigma_decay=0.998, action_l2=1e-3,
                  actor_lr=3e-4, seed=1, select_every=25)
VALIDATION_SEEDS = range(7000, 7002)
EVAL_SEEDS = range(9000, 9003)


def slot_envs(slots):
    fn = lambda s: slot_trace(s, slots)  # noqa: E731
    return _env(BEST_EFFORT, fn), _env(tenants(ZIPF), fn)


def tenant_outcomes(env, scheduler, seeds):
    """Rows of (overall hit rate, std of per-tenant rates, share of tenants at target), one per seed."""
    out = []
    for s in seeds:
        sim = env.simulation(s)
        while (inp := sim.next_decision()) is not None:
            sim.apply(scheduler(inp))
        res = sim.result()
        seen = [st for st in sim.sla_book if st.cum_total]
        rates = np.array([st.cumulative_rate for st in seen])
        targets = np.array([st.target_sli for st in seen])
        out.append((res.totals["hits"] / res.totals["completed"], rates.std(), np.mean(rates >= targets)))
    return np.array(out)


def train_slots(mode):
    """Train on mixed targets; keep the checkpoint that scores best on held-out traces."""
    spec = TRAIN_ENV.feature_spec(mode)
    val_be, val_zipf = slot_envs(200)

    def score(actor):
        sch = RLScheduler(actor, spec)
        a = tenant_outcomes(val_be, sch, VALIDATION_SEEDS).mean(0)
        b = tenant_outcomes(val_zipf, sch, VALIDATION_SEEDS).mean(0)
        if spec.mode.name == "SLA_AWARE":
            return (a[2] + b[2]) / 2 - (a[1] + b[1]) / 2
        return (a[0] + b[0]) / 2

    res = train_policy(TRAIN_ENV, TrainConfig(**SLOT_TRAIN), mode, validate=score)
    return RLScheduler(res.policy, spec)

