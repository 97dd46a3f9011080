"""Experiment plumbing: build workloads from a config, run and compare schedulers."""
from __future__ import annotations

import hashlib
import json
import logging
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .config import ExperimentConfig
from .errors import ConfigError, MasfsError, ParseError
from .schedulers import is_heuristic, make_scheduler
from .simcore import SimConfig, SimResult, default_epoch_ts, run_simulation
from .sla import MetricsReport, SlaBook, SlaState, aggregate_metrics, box_csv, swarm_csv
from .workload import (MasConfig, ModelProfile, RequestTrace, SaKind, TenantSpec, assign_targets_zipf,
                       bundled_profiles, generate_synthetic_cost_table, generate_trace,
                       interarrival_for_utilization, load_cost_table, load_tenants, load_trace,
                       make_tenants, pareto_xmin_for_mean, trace_csv)

log = logging.getLogger(__name__)


@dataclass
class EnergyReport:
    workload_energy: float
    scheduler_energy: float
    overhead: float
    mean_defer_factor: float

    def __post_init__(self):
        if min(self.workload_energy, self.scheduler_energy, self.overhead, self.mean_defer_factor) < 0:
            raise ValueError("energy report fields must be non-negative")


def mean_defer_factor(result: SimResult) -> float:
    d = result.subjobs["defer_count"]
    return float(np.mean(1.0 + d)) if len(d) else 1.0


def energy_overhead(result: SimResult, mac_count: int, energy_per_mac: float = 1.0) -> EnergyReport:
    """Scheduler energy (policy MACs times pJ/MAC) relative to the workload's own energy."""
    work = float(result.totals["energy"])
    sched = float(mac_count) * float(energy_per_mac)
    return EnergyReport(work, sched, sched / work if work > 0 else 0.0, mean_defer_factor(result))


def scheduler_macs(scheduler, result: SimResult) -> int:
    """Policy MACs spent over a run; heuristics cost nothing."""
    if is_heuristic(scheduler) or not hasattr(scheduler, "actor"):
        return 0
    from .rl.nets import policy_mac_count
    return policy_mac_count(scheduler.actor, [e["n_ready"] for e in result.epochs])


def trace_sha256(trace: RequestTrace) -> str:
    return hashlib.sha256(trace_csv(trace).encode()).hexdigest()


# ---------------------------------------------------------------------------
# workload construction

@dataclass
class Workload:
    profiles: list[ModelProfile]
    mas: MasConfig
    tenants: list[TenantSpec]
    epoch_ts: float
    cfg: ExperimentConfig

    def trace(self, seed: int) -> RequestTrace:
        cfg = self.cfg
        if cfg.has("trace"):
            try:
                return load_trace(cfg.path("trace"), seed)
            except ParseError as exc:
                raise ConfigError("trace", str(exc)) from None
        alpha = cfg.float("trace.pareto_alpha")
        if cfg.has("trace.utilization"):
            mean_ia = interarrival_for_utilization(self.profiles, self.tenants, self.mas.n_sas,
                                                   cfg.float("trace.utilization"))
        else:
            mean_ia = cfg.float("trace.mean_interarrival")
        if alpha <= 1:
            raise ConfigError("trace.pareto_alpha", "must exceed 1 for a finite mean")
        horizon = cfg.int("trace.horizon")
        if horizon is None:
            horizon = int(round(mean_ia * cfg.int("trace.requests")))
        return generate_trace(seed, self.tenants, self.profiles, horizon,
                              (alpha, pareto_xmin_for_mean(mean_ia, alpha)), cfg.float("trace.medium_factor"),
                              kinds=[sa.kind for sa in self.mas.sas])

    def sla_book(self) -> SlaBook:
        return SlaBook(self.tenants, window_size=self.cfg.int("sla.window"))

    def sim_config(self, seed: int) -> SimConfig:
        h = self.cfg.float("sim.horizon")
        return SimConfig(self.epoch_ts, self.mas, seed, h)


def build_workload(cfg: ExperimentConfig) -> Workload:
    try:
        kinds = [SaKind.parse(s.strip()) for s in cfg.get("mas.sas").split(",") if s.strip()]
        mas = MasConfig.from_kinds(kinds, cfg.float("mas.bandwidth"))
    except (ValueError, MasfsError) as exc:
        raise ConfigError("mas.sas", str(exc)) from None

    if cfg.has("cost_table"):
        try:
            profiles = load_cost_table(cfg.path("cost_table"), mas)
        except ParseError as exc:
            raise ConfigError("cost_table", str(exc)) from None
    elif cfg.has("costs.bundled"):
        profiles = bundled_profiles(cfg.int("costs.bundled.seed", 0), mas.total_bandwidth)
    else:
        profiles = generate_synthetic_cost_table(
            cfg.int("costs.synthetic.seed"), cfg.int("costs.synthetic.n_models"),
            (cfg.int("costs.synthetic.layers_min"), cfg.int("costs.synthetic.layers_max")),
            cfg.float("costs.synthetic.affinity_spread"), mas.total_bandwidth)

    if cfg.has("tenants"):
        try:
            tenants = load_tenants(cfg.path("tenants"))
        except ParseError as exc:
            raise ConfigError("tenants", str(exc)) from None
    else:
        mk = (cfg.int("tenants.mk_m"), cfg.int("tenants.mk_k")) if cfg.has("tenants.mk_m") else None
        try:
            tenants = make_tenants(cfg.int("tenants.count"), len(profiles), cfg.float("tenants.target"), mk=mk)
        except ValueError as exc:
            raise ConfigError("tenants.mk_m", str(exc)) from None
        zt = cfg.floats("tenants.zipf_targets")
        if zt:
            tenants = assign_targets_zipf(cfg.int("tenants.zipf_seed"), tenants, zt, cfg.float("tenants.zipf_s"))
    known = {p.model_id for p in profiles}
    for t in tenants:
        if t.model_id not in known:
            raise ConfigError("tenants", f"tenant {t.tenant_id} uses unknown model {t.model_id}")
    ts = cfg.float("sim.epoch_ts") or default_epoch_ts(profiles)
    return Workload(profiles, mas, list(tenants), ts, cfg)


def build_scheduler(cfg: ExperimentConfig, name: str | None = None, checkpoint=None):
    name = name or cfg.get("scheduler")
    if checkpoint is None and cfg.has("scheduler.checkpoint") and name.startswith("rl-"):
        checkpoint = cfg.path("scheduler.checkpoint")
    params = {k: v for k, v in cfg.raw.items() if k.startswith("prema.")}
    try:
        return make_scheduler(name, params, checkpoint)
    except ParseError as exc:
        raise ConfigError("scheduler.checkpoint", str(exc)) from None
    except OSError as exc:
        raise ConfigError("scheduler.checkpoint", f"cannot read checkpoint: {exc.strerror}") from None


# ---------------------------------------------------------------------------
# runs

@dataclass
class RunOutput:
    seed: int
    result: SimResult
    book: SlaBook
    metrics: MetricsReport
    energy: EnergyReport
    trace_sha256: str


def run_once(work: Workload, scheduler, seed: int, trace: RequestTrace | None = None) -> RunOutput:
    trace = trace if trace is not None else work.trace(seed)
    book = work.sla_book()
    res = run_simulation(work.sim_config(seed), trace, work.profiles, scheduler, book, log_actions=False)
    metrics = aggregate_metrics(book)
    energy = energy_overhead(res, scheduler_macs(scheduler, res), work.cfg.float("energy_per_mac"))
    return RunOutput(seed, res, book, metrics, energy, trace_sha256(trace))


def thread_cap() -> int:
    try:
        n = int(os.environ.get("MASFS_THREADS", "1"))
    except ValueError:
        n = 1
    return max(1, n)


def _parallel_map(fn, items):
    n = min(thread_cap(), len(items))
    if n <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(n) as pool:
        return list(pool.map(fn, items))


def pooled_metrics(books: Sequence[SlaBook]) -> MetricsReport:
    """Per-tenant hit rates summed over several runs."""
    acc: dict[tuple, SlaState] = {}
    for book in books:
        for st in book:
            key = (st.tenant_id, st.model_id)
            if key not in acc:
                acc[key] = SlaState(st.tenant_id, st.model_id, st.target_sli, mk=st.mk)
            a = acc[key]
            a.cum_hits += st.cum_hits
            a.cum_total += st.cum_total
            a.mk_violations += st.mk_violations
    return aggregate_metrics(acc.values())


def _metrics_entry(run: RunOutput, name: str) -> dict:
    return {"scheduler": name, "seed": run.seed, "trace_sha256": run.trace_sha256,
            "metrics": run.metrics.to_dict(), "energy": asdict(run.energy), "totals": run.result.totals}


def _write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text)


def run_experiment(cfg: ExperimentConfig, out_dir=None, scheduler=None) -> dict:
    """Run ``replications`` seeded simulations and write results, metrics and CSVs.

    Replication ``k`` uses seed ``sim.seed + k`` for both the trace and the
    simulator.
    """
    out = Path(out_dir or cfg.path("out", must_exist=False))
    work = build_workload(cfg)
    sched = scheduler if scheduler is not None else build_scheduler(cfg)
    name = getattr(sched, "name", cfg.get("scheduler"))
    base = cfg.int("sim.seed")
    reps = cfg.int("replications")
    runs = _parallel_map(lambda k: run_once(work, sched, base + k), list(range(reps)))

    if reps == 1:
        _write(out / "results.json", runs[0].result.to_json())
        _write(out / "results.csv", runs[0].result.to_csv())
    else:
        for k, run in enumerate(runs):
            _write(out / f"results_rep{k}.json", run.result.to_json())
            _write(out / f"results_rep{k}.csv", run.result.to_csv())
    pooled = runs[0].metrics if reps == 1 else pooled_metrics([r.book for r in runs])
    summary = {"scheduler": name, "replications": [_metrics_entry(r, name) for r in runs],
               "pooled": pooled.to_dict()}
    _write(out / "metrics.json", json.dumps(summary, indent=2, sort_keys=True))
    _write(out / "swarm.csv", swarm_csv(pooled))
    _write(out / "sla_store.csv", runs[0].book.to_csv())
    return summary


def compare_schedulers(cfg: ExperimentConfig, names: Sequence[str], out_dir=None,
                       checkpoints: dict | None = None) -> dict:
    """Run every scheduler on identical traces; write box.csv, swarm.csv and metrics.json."""
    if not names:
        raise ConfigError("schedulers", "empty scheduler list")
    out = Path(out_dir or cfg.path("out", must_exist=False))
    work = build_workload(cfg)
    base = cfg.int("sim.seed")
    reps = cfg.int("replications")
    traces = [work.trace(base + k) for k in range(reps)]
    checkpoints = checkpoints or {}
    scheds = [build_scheduler(cfg, n, checkpoints.get(n)) for n in names]

    jobs = [(j, k) for j in range(len(scheds)) for k in range(reps)]
    runs = _parallel_map(lambda jk: run_once(work, scheds[jk[0]], base + jk[1], traces[jk[1]]), jobs)
    per = [runs[j * reps:(j + 1) * reps] for j in range(len(scheds))]
    reports = [(n, rs[0].metrics if reps == 1 else pooled_metrics([r.book for r in rs])) for n, rs in zip(names, per)]
    same = all(len({rs[k].trace_sha256 for rs in per}) == 1 for k in range(reps))
    summary = {"schedulers": list(names),
               "trace_sha256": [trace_sha256(t) for t in traces],
               "identical_traces": same,
               "runs": [_metrics_entry(r, n) for n, rs in zip(names, per) for r in rs],
               "pooled": [{"scheduler": n, **rep.to_dict()} for n, rep in reports]}
    _write(out / "box.csv", box_csv(reports))
    _write(out / "swarm.csv", swarm_csv(reports))
    _write(out / "metrics.json", json.dumps(summary, indent=2, sort_keys=True))
    return summary
