"""Per-(tenant, model) SLI bookkeeping, rewards and fairness metrics."""
from __future__ import annotations

import csv
import enum
import io
from collections import deque
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .errors import EmptyInput, NotConfigured

DEFAULT_WINDOW = 100
DEFAULT_LAMBDA = 0.5


class RewardMode(enum.Enum):
    BASELINE = "baseline"
    SLA_AWARE = "sla"


@dataclass(frozen=True)
class SlaSnapshot:
    """Immutable view of an SLA state taken before an outcome is recorded."""
    tenant_id: int
    model_id: int
    target_sli: float
    sli: float


@dataclass
class SlaState:
    tenant_id: int
    model_id: int
    target_sli: float
    window_size: int = DEFAULT_WINDOW
    mk: tuple[int, int] | None = None
    prior: float = 1.0
    cum_hits: int = 0
    cum_total: int = 0
    mk_violations: int = 0
    window: deque = field(default=None, repr=False)
    mk_window: deque | None = field(default=None, repr=False)

    def __post_init__(self):
        if self.window is None:
            self.window = deque(maxlen=self.window_size)
        if self.mk is not None and self.mk_window is None:
            self.mk_window = deque(maxlen=self.mk[0])

    @property
    def window_hits(self) -> int:
        return sum(self.window)

    def snapshot(self) -> SlaSnapshot:
        return SlaSnapshot(self.tenant_id, self.model_id, self.target_sli, current_sli(self))

    @property
    def cumulative_rate(self) -> float:
        return self.cum_hits / self.cum_total if self.cum_total else float("nan")


def record_outcome(state: SlaState, hit: bool) -> SlaState:
    bit = 1 if hit else 0
    state.window.append(bit)
    state.cum_total += 1
    state.cum_hits += bit
    if state.mk_window is not None:
        state.mk_window.append(bit)
        if not mk_firm_ok(state):
            state.mk_violations += 1
    return state


def current_sli(state: SlaState) -> float:
    """Windowed hit rate; ``state.prior`` before any outcome."""
    n = len(state.window)
    if n == 0:
        return state.prior
    return sum(state.window) / n


def mk_firm_ok(state: SlaState) -> bool:
    """At most k misses among the last m outcomes (or fewer, early on)."""
    if state.mk is None or state.mk_window is None:
        raise NotConfigured(f"tenant {state.tenant_id}: no (m,k) constraint configured")
    misses = len(state.mk_window) - sum(state.mk_window)
    return misses <= state.mk[1]


def _as_snapshot(s) -> SlaSnapshot:
    return s.snapshot() if isinstance(s, SlaState) else s


def reward_from_gap(target: float, sli: float, hit: bool, lam: float = DEFAULT_LAMBDA) -> float:
    g = min(1.0, max(-1.0, target - sli))
    magnitude = 1.0 + lam * g
    return magnitude if hit else -magnitude


def sla_reward(state_before, hit: bool, lam: float = DEFAULT_LAMBDA) -> float:
    """Hit reward / miss penalty scaled by the distance to the target SLI.

    Below target both the reward and the penalty grow; at or above target
    both shrink.
    """
    s = _as_snapshot(state_before)
    return reward_from_gap(s.target_sli, s.sli, hit, lam)


def baseline_reward(hit: bool) -> float:
    return 1.0 if hit else -1.0


def epoch_reward(completions: Iterable[tuple], mode: RewardMode | str = RewardMode.SLA_AWARE,
                 lam: float = DEFAULT_LAMBDA) -> float:
    mode = RewardMode(mode)
    total = 0.0
    for before, hit in completions:
        total += baseline_reward(hit) if mode is RewardMode.BASELINE else sla_reward(before, hit, lam)
    return total


class SlaBook:
    """The SLA store: one :class:`SlaState` per (tenant, model)."""

    def __init__(self, tenants=(), window_size: int = DEFAULT_WINDOW, prior: float = 1.0):
        self.window_size = window_size
        self.prior = prior
        self.states: dict[tuple[int, int], SlaState] = {}
        for t in tenants:
            self.add(t.tenant_id, t.model_id, t.target_sli, t.mk)

    def add(self, tenant_id: int, model_id: int, target_sli: float, mk=None) -> SlaState:
        st = SlaState(tenant_id, model_id, target_sli, self.window_size, mk, self.prior)
        self.states[(tenant_id, model_id)] = st
        return st

    def get(self, tenant_id: int, model_id: int) -> SlaState:
        key = (tenant_id, model_id)
        st = self.states.get(key)
        if st is None:
            # unknown tenants are best-effort
            st = self.add(tenant_id, model_id, 1.0)
        return st

    def __iter__(self):
        return iter(self.states.values())

    def __len__(self):
        return len(self.states)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["tenant_id", "model_id", "target", "cum_hits", "cum_total", "window_bits"])
        for (tid, mid), st in sorted(self.states.items()):
            w.writerow([tid, mid, repr(float(st.target_sli)), st.cum_hits, st.cum_total,
                        "".join(str(b) for b in st.window)])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str, window_size: int = DEFAULT_WINDOW, prior: float = 1.0) -> "SlaBook":
        book = cls(window_size=window_size, prior=prior)
        for row in csv.DictReader(io.StringIO(text)):
            st = book.add(int(row["tenant_id"]), int(row["model_id"]), float(row["target"]))
            st.cum_hits = int(row["cum_hits"])
            st.cum_total = int(row["cum_total"])
            st.window.extend(int(c) for c in row["window_bits"])
        return book


# ---------------------------------------------------------------------------
# aggregation

@dataclass
class MetricsReport:
    tenant_ids: list[int]
    model_ids: list[int]
    targets: list[float]
    rates: list[float]
    diffs: list[float]
    mean: float
    median: float
    std: float
    q1: float
    q3: float
    min: float
    max: float
    sla_met_fraction: float
    mean_shortfall: float
    overall_hit_rate: float
    mk_violations: dict = field(default_factory=dict)

    def box_row(self) -> dict:
        return {k: getattr(self, k) for k in ("mean", "median", "q1", "q3", "min", "max", "std")}

    def to_dict(self) -> dict:
        d = dict(self.__dict__)
        d["mk_violations"] = {f"{t}:{m}": v for (t, m), v in self.mk_violations.items()}
        return d


def aggregate_metrics(states: Sequence[SlaState] | Iterable[SlaState]) -> MetricsReport:
    """Distribution of cumulative per-tenant hit rates over the whole run."""
    rows = [s for s in states if s.cum_total > 0]
    if not rows:
        raise EmptyInput("no tenant has any completed request")
    rows.sort(key=lambda s: (s.tenant_id, s.model_id))
    rates = np.array([s.cum_hits / s.cum_total for s in rows])
    targets = np.array([s.target_sli for s in rows])
    diffs = rates - targets
    # tolerate float noise in rate - target comparisons
    met = diffs >= -1e-12
    violators = diffs[~met]
    q1, median, q3 = np.percentile(rates, [25, 50, 75])
    hits = sum(s.cum_hits for s in rows)
    total = sum(s.cum_total for s in rows)
    return MetricsReport(
        tenant_ids=[s.tenant_id for s in rows],
        model_ids=[s.model_id for s in rows],
        targets=targets.tolist(),
        rates=rates.tolist(),
        diffs=diffs.tolist(),
        mean=float(rates.mean()),
        median=float(median),
        std=float(rates.std()),
        q1=float(q1),
        q3=float(q3),
        min=float(rates.min()),
        max=float(rates.max()),
        sla_met_fraction=float(met.mean()),
        mean_shortfall=float(-violators.mean()) if len(violators) else 0.0,
        overall_hit_rate=hits / total,
        mk_violations={(s.tenant_id, s.model_id): s.mk_violations for s in rows if s.mk is not None},
    )


SWARM_HEADER = ["tenant_id", "target", "attained", "diff"]
BOX_HEADER = ["scheduler", "mean", "median", "q1", "q3", "min", "max", "std"]


def _named(reports):
    return list(reports.items()) if isinstance(reports, dict) else list(reports)


def swarm_csv(reports) -> str:
    """Per-tenant target vs attained; a ``scheduler`` column is added for several reports.

    ``reports`` is one report, a dict, or a list of ``(name, report)`` pairs.
    """
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    multi = not isinstance(reports, MetricsReport)
    items = _named(reports) if multi else [(None, reports)]
    w.writerow((["scheduler"] if multi else []) + SWARM_HEADER)
    for name, rep in items:
        for tid, tgt, att, d in zip(rep.tenant_ids, rep.targets, rep.rates, rep.diffs):
            w.writerow(([name] if multi else []) + [tid, repr(tgt), repr(att), repr(d)])
    return buf.getvalue()


def box_csv(reports) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(BOX_HEADER)
    for name, rep in _named(reports):
        row = rep.box_row()
        w.writerow([name] + [repr(float(row[k])) for k in BOX_HEADER[1:]])
    return buf.getvalue()
