"""Models, accelerators, tenants, cost tables and request-trace generation."""
from __future__ import annotations

import csv
import enum
import graphlib
import io
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import CycleError, MissingEntry, ParseError


class SaKind(enum.IntEnum):
    WS = 0  # weight-stationary (Simba-like)
    RS = 1  # row-stationary (Eyeriss-like)

    @property
    def code(self) -> str:
        return ("ws", "rs")[self]

    @classmethod
    def parse(cls, text: str) -> "SaKind":
        try:
            return {"ws": cls.WS, "rs": cls.RS}[text.strip().lower()]
        except KeyError:
            raise ParseError(f"unknown sa_kind {text!r}") from None


N_KINDS = len(SaKind)


class QosLevel(enum.IntEnum):
    LOW = 0
    MEDIUM = 1
    HIGH = 2

    @property
    def code(self) -> str:
        return ("low", "med", "high")[self]

    @property
    def factor(self) -> float:
        # relative to the medium slack; high = tight latency requirement
        return (1.2, 1.0, 0.8)[self]

    @classmethod
    def parse(cls, text: str) -> "QosLevel":
        try:
            return {"low": cls.LOW, "med": cls.MEDIUM, "high": cls.HIGH}[text.strip().lower()]
        except KeyError:
            raise ParseError(f"unknown qos_level {text!r}") from None


@dataclass(frozen=True)
class SaSpec:
    sa_id: int
    kind: SaKind
    label: str = ""


@dataclass(frozen=True)
class MasConfig:
    sas: tuple[SaSpec, ...]
    total_bandwidth: float = 16.0

    def __post_init__(self):
        if len(self.sas) < 1:
            raise ValueError("a MAS needs at least one sub-accelerator")
        if not self.total_bandwidth > 0:
            raise ValueError("total_bandwidth must be positive")
        ids = [sa.sa_id for sa in self.sas]
        if ids != list(range(len(ids))):
            raise ValueError(f"sa ids must be dense and ordered, got {ids}")

    @classmethod
    def from_kinds(cls, kinds: Iterable[SaKind | str], total_bandwidth: float = 16.0) -> "MasConfig":
        sas = []
        for i, k in enumerate(kinds):
            k = SaKind.parse(k) if isinstance(k, str) else SaKind(k)
            sas.append(SaSpec(i, k, f"{k.code}{i}"))
        return cls(tuple(sas), float(total_bandwidth))

    @property
    def n_sas(self) -> int:
        return len(self.sas)

    @property
    def kind_index(self) -> np.ndarray:
        return np.array([int(sa.kind) for sa in self.sas], dtype=np.int64)


@dataclass(eq=False)
class ModelProfile:
    """Per-layer cost table of one DNN model.

    ``latency``, ``energy`` and ``bandwidth`` have shape (n_layers, N_KINDS),
    columns indexed by :class:`SaKind`. ``deps[i]`` lists the predecessor
    layers of layer ``i``.
    """

    model_id: int
    name: str
    latency: np.ndarray
    energy: np.ndarray
    bandwidth: np.ndarray
    deps: tuple[tuple[int, ...], ...]
    successors: tuple[tuple[int, ...], ...] = field(init=False)
    topo_order: tuple[int, ...] = field(init=False)

    def __post_init__(self):
        self.latency = np.asarray(self.latency, dtype=np.float64)
        self.energy = np.asarray(self.energy, dtype=np.float64)
        self.bandwidth = np.asarray(self.bandwidth, dtype=np.float64)
        self.deps = tuple(tuple(int(p) for p in d) for d in self.deps)
        n = len(self.deps)
        for arr in (self.latency, self.energy, self.bandwidth):
            if arr.shape != (n, N_KINDS):
                raise ParseError(f"{self.name}: cost array shape {arr.shape}, expected {(n, N_KINDS)}")
        for arr in (self.latency, self.energy, self.bandwidth):
            bad = np.argwhere(np.isnan(arr))
            if len(bad):
                layer, kind = bad[0]
                raise MissingEntry(self.name, int(layer), SaKind(int(kind)).code)
        if n == 0:
            raise ParseError(f"{self.name}: model has no layers")
        if not np.all(self.latency > 0):
            raise ParseError(f"{self.name}: latencies must be positive")
        if np.any(self.energy < 0) or np.any(self.bandwidth < 0):
            raise ParseError(f"{self.name}: energy and bandwidth must be non-negative")
        succ: list[list[int]] = [[] for _ in range(n)]
        for layer, preds in enumerate(self.deps):
            for p in preds:
                if not 0 <= p < n or p == layer:
                    raise ParseError(f"{self.name}: layer {layer} has invalid predecessor {p}")
                succ[p].append(layer)
        self.successors = tuple(tuple(s) for s in succ)
        sorter = graphlib.TopologicalSorter({i: set(d) for i, d in enumerate(self.deps)})
        try:
            self.topo_order = tuple(sorter.static_order())
        except graphlib.CycleError as exc:
            raise CycleError(f"{self.name}: layer dependencies contain a cycle {exc.args[1]}") from None

    @property
    def n_layers(self) -> int:
        return len(self.deps)

    @property
    def sinks(self) -> tuple[int, ...]:
        return tuple(i for i, s in enumerate(self.successors) if not s)

    def __eq__(self, other):
        if not isinstance(other, ModelProfile):
            return NotImplemented
        return (
            self.model_id == other.model_id
            and self.name == other.name
            and self.deps == other.deps
            and np.array_equal(self.latency, other.latency)
            and np.array_equal(self.energy, other.energy)
            and np.array_equal(self.bandwidth, other.bandwidth)
        )

    def __repr__(self):
        return f"ModelProfile({self.model_id}, {self.name!r}, layers={self.n_layers})"


@dataclass(frozen=True)
class TenantSpec:
    tenant_id: int
    model_id: int
    target_sli: float = 1.0
    mk: tuple[int, int] | None = None
    qos_level_weights: tuple[float, float, float] = (1 / 3, 1 / 3, 1 / 3)

    def __post_init__(self):
        if not 0.0 <= self.target_sli <= 1.0:
            raise ValueError(f"tenant {self.tenant_id}: target_sli {self.target_sli} outside [0, 1]")
        if self.mk is not None:
            m, k = self.mk
            if not 0 <= k < m:
                raise ValueError(f"tenant {self.tenant_id}: need 0 <= k < m, got (m={m}, k={k})")
        w = self.qos_level_weights
        if len(w) != 3 or min(w) < 0 or not math.isclose(sum(w), 1.0, abs_tol=1e-9):
            raise ValueError(f"tenant {self.tenant_id}: qos_level_weights must be 3 probabilities summing to 1")


@dataclass(frozen=True)
class Request:
    req_id: int
    tenant_id: int
    model_id: int
    arrival: int
    qos_level: QosLevel
    deadline: int

    @property
    def latency_budget(self) -> int:
        return self.deadline - self.arrival


@dataclass(frozen=True)
class RequestTrace:
    requests: tuple[Request, ...]
    seed: int
    horizon: int

    def __len__(self):
        return len(self.requests)


# ---------------------------------------------------------------------------
# cost tables

COST_HEADER = ["model", "layer", "sa_kind", "latency_cycles", "energy_pj", "bandwidth_gbps", "deps"]


def _fmt(x: float) -> str:
    return repr(float(x))


def write_cost_table(profiles: Sequence[ModelProfile], path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        fh.write(cost_table_csv(profiles))


def cost_table_csv(profiles: Sequence[ModelProfile]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(COST_HEADER)
    for p in profiles:
        for layer in range(p.n_layers):
            deps = ";".join(str(d) for d in p.deps[layer])
            for kind in SaKind:
                w.writerow([p.name, layer, kind.code, _fmt(p.latency[layer, kind]),
                            _fmt(p.energy[layer, kind]), _fmt(p.bandwidth[layer, kind]), deps])
    return buf.getvalue()


def load_cost_table(path: str | Path, mas: MasConfig | None = None) -> list[ModelProfile]:
    """Parse a cost-table CSV into one profile per distinct model name.

    Model ids follow order of first appearance. Raises :class:`MissingEntry`
    when a (layer, kind) row is absent, :class:`CycleError` for cyclic deps
    and :class:`ParseError` for anything else malformed.
    """
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ParseError(f"cannot read cost table {path}: {exc}") from exc
    reader = csv.DictReader(io.StringIO(text))
    if reader.fieldnames is None or [f.strip() for f in reader.fieldnames] != COST_HEADER:
        raise ParseError(f"{path}: expected header {','.join(COST_HEADER)}")

    rows: dict[str, dict[int, dict[SaKind, tuple[float, float, float]]]] = {}
    deps: dict[str, dict[int, tuple[int, ...]]] = {}
    for lineno, row in enumerate(reader, start=2):
        try:
            name = row["model"].strip()
            layer = int(row["layer"])
            kind = SaKind.parse(row["sa_kind"])
            lat = float(row["latency_cycles"])
            en = float(row["energy_pj"])
            bw = float(row["bandwidth_gbps"])
            dep_text = (row["deps"] or "").strip()
            dep = tuple(int(d) for d in dep_text.split(";") if d.strip()) if dep_text else ()
        except (TypeError, ValueError) as exc:
            raise ParseError(f"{path}:{lineno}: {exc}") from None
        if not name:
            raise ParseError(f"{path}:{lineno}: empty model name")
        if mas is not None and not 0 <= bw <= mas.total_bandwidth:
            raise ParseError(f"{path}:{lineno}: bandwidth {bw} outside [0, {mas.total_bandwidth}]")
        per_layer = rows.setdefault(name, {}).setdefault(layer, {})
        if kind in per_layer:
            raise ParseError(f"{path}:{lineno}: duplicate row for {name} layer {layer} {kind.code}")
        per_layer[kind] = (lat, en, bw)
        prev = deps.setdefault(name, {}).setdefault(layer, dep)
        if prev != dep:
            raise ParseError(f"{path}:{lineno}: inconsistent deps for {name} layer {layer}")

    profiles = []
    for model_id, (name, layers) in enumerate(rows.items()):
        n = max(layers) + 1
        if sorted(layers) != list(range(n)):
            missing = sorted(set(range(n)) - set(layers))
            raise MissingEntry(name, missing[0], SaKind.WS.code)
        arr = np.full((3, n, N_KINDS), np.nan)
        for layer, kinds in layers.items():
            for kind in SaKind:
                if kind not in kinds:
                    raise MissingEntry(name, layer, kind.code)
                arr[:, layer, kind] = kinds[kind]
        profiles.append(ModelProfile(model_id, name, arr[0], arr[1], arr[2],
                                     tuple(deps[name][i] for i in range(n))))
    return profiles


def _chain_deps(n: int) -> tuple[tuple[int, ...], ...]:
    return tuple(() if i == 0 else (i - 1,) for i in range(n))


def _draw_layers(rng, n, lat_range, bw_range, ws_bias, affinity_spread, total_bandwidth):
    base = rng.uniform(lat_range[0], lat_range[1], size=n)
    favored = np.where(rng.random(n) < ws_bias, SaKind.WS, SaKind.RS)
    slowdown = rng.uniform(1.0, affinity_spread, size=n)
    latency = np.empty((n, N_KINDS))
    rows = np.arange(n)
    latency[:, :] = base[:, None] * slowdown[:, None]
    latency[rows, favored] = base
    latency = np.maximum(np.round(latency), 1.0)
    # rounding may push the ratio slightly outside [1, spread]; clip the slow column
    fast = latency[rows, favored]
    slow = np.clip(latency[rows, 1 - favored], fast, np.floor(fast * affinity_spread))
    latency[rows, 1 - favored] = slow
    power = rng.uniform(0.5, 1.5, size=N_KINDS)
    energy = np.round(latency * power[None, :] * rng.uniform(0.8, 1.2, size=(n, 1)), 3)
    bw = rng.uniform(bw_range[0], bw_range[1], size=(n, 1)) * total_bandwidth
    bandwidth = np.round(bw * rng.uniform(0.85, 1.0, size=(n, N_KINDS)), 3)
    return latency, energy, bandwidth


def generate_synthetic_cost_table(
    rng_seed: int,
    n_models: int,
    layers_per_model: tuple[int, int] = (3, 8),
    affinity_spread: float = 2.0,
    total_bandwidth: float = 16.0,
    latency_range: tuple[float, float] = (100.0, 1000.0),
    bandwidth_range: tuple[float, float] = (0.1, 0.8),
) -> list[ModelProfile]:
    """Random layer-chain models ``M0..M{n-1}`` with dataflow affinity.

    Each layer is faster on one SA kind by a factor drawn from
    ``[1, affinity_spread]``. Bandwidth demands are fractions of
    ``total_bandwidth`` in ``bandwidth_range`` and the first layer of ``M0`` is
    forced above half the budget, so concurrent pairs can oversubscribe it.
    """
    if n_models < 1:
        raise ValueError("n_models must be >= 1")
    if not affinity_spread > 1:
        raise ValueError("affinity_spread must be > 1")
    lo, hi = layers_per_model
    rng = np.random.default_rng(rng_seed)
    profiles = []
    for m in range(n_models):
        n = int(rng.integers(lo, hi + 1))
        latency, energy, bandwidth = _draw_layers(
            rng, n, latency_range, bandwidth_range, 0.5, affinity_spread, total_bandwidth)
        if m == 0:
            bandwidth[0, :] = np.maximum(bandwidth[0, :], np.round(0.625 * total_bandwidth, 3))
        profiles.append(ModelProfile(m, f"M{m}", latency, energy, bandwidth, _chain_deps(n)))
    return profiles


# name, layers, latency range, bandwidth range (fraction of B), P(WS favoured)
_BUNDLED = (
    ("alexnet", 8, (150.0, 600.0), (0.45, 0.9), 0.3),
    ("inceptionv3", 12, (200.0, 700.0), (0.1, 0.35), 0.6),
    ("resnet50", 10, (250.0, 800.0), (0.2, 0.5), 0.5),
    ("yolov3", 14, (400.0, 1200.0), (0.3, 0.7), 0.7),
)


def bundled_profiles(seed: int = 0, total_bandwidth: float = 16.0, affinity_spread: float = 2.5) -> list[ModelProfile]:
    """Synthetic stand-ins for alexnet, inceptionv3, resnet50 and yolov3.

    The four models differ in depth, compute size and bandwidth appetite;
    alexnet is small and memory bound, yolov3 large and compute heavy.
    """
    rng = np.random.default_rng(seed)
    out = []
    for model_id, (name, n, lat, bw, ws_bias) in enumerate(_BUNDLED):
        latency, energy, bandwidth = _draw_layers(rng, n, lat, bw, ws_bias, affinity_spread, total_bandwidth)
        out.append(ModelProfile(model_id, name, latency, energy, bandwidth, _chain_deps(n)))
    return out


def table_max_latency(profiles: Sequence[ModelProfile]) -> float:
    return float(max(p.latency.max() for p in profiles))


# ---------------------------------------------------------------------------
# deadlines and sampling

def isolated_latency(profile: ModelProfile, kinds: Iterable[SaKind] | None = None) -> float:
    """Contention-free latency with every layer on its best SA kind, run back to back."""
    cols = list(SaKind) if kinds is None else sorted({int(k) for k in kinds})
    return float(profile.latency[:, cols].min(axis=1).sum())


def request_deadline(arrival: int, profile: ModelProfile | float, qos_level: QosLevel,
                     medium_factor: float = 2.0) -> int:
    if medium_factor < 1:
        raise ValueError("medium_factor must be >= 1")
    iso = profile if isinstance(profile, (int, float)) else isolated_latency(profile)
    slack = medium_factor * QosLevel(qos_level).factor * iso
    return int(arrival) + int(math.floor(slack + 0.5))


def pareto_from_uniform(u, shape_alpha: float, scale_xmin: float):
    """Inverse Pareto CDF for ``u`` in (0, 1]."""
    return scale_xmin * np.power(u, -1.0 / shape_alpha)


def sample_pareto(rng: np.random.Generator, shape_alpha: float, scale_xmin: float, size=None):
    if not shape_alpha > 1:
        raise ValueError("shape_alpha must be > 1 for a finite mean")
    if not scale_xmin > 0:
        raise ValueError("scale_xmin must be positive")
    u = 1.0 - rng.random(size)  # (0, 1]
    return pareto_from_uniform(u, shape_alpha, scale_xmin)


def pareto_cdf(x, shape_alpha: float, scale_xmin: float):
    x = np.asarray(x, dtype=np.float64)
    return np.where(x < scale_xmin, 0.0, 1.0 - (scale_xmin / np.maximum(x, scale_xmin)) ** shape_alpha)


def pareto_xmin_for_mean(mean: float, shape_alpha: float) -> float:
    return mean * (shape_alpha - 1.0) / shape_alpha


def zipf_probabilities(n_ranks: int, exponent_s: float) -> np.ndarray:
    if n_ranks < 1:
        raise ValueError("n_ranks must be >= 1")
    if not exponent_s > 0:
        raise ValueError("exponent_s must be positive")
    w = np.arange(1, n_ranks + 1, dtype=np.float64) ** -exponent_s
    return w / w.sum()


def sample_zipf_rank(rng: np.random.Generator, n_ranks: int, exponent_s: float, size=None):
    """1-based Zipf rank, P(r) proportional to r**-s."""
    cdf = np.cumsum(zipf_probabilities(n_ranks, exponent_s))
    u = rng.random(size)
    r = np.minimum(np.searchsorted(cdf, u, side="right"), n_ranks - 1) + 1
    return int(r) if size is None else r


def generate_trace(
    seed: int,
    tenants: Sequence[TenantSpec],
    profiles: Sequence[ModelProfile],
    horizon: int,
    pareto: tuple[float, float] = (2.5, 300.0),
    medium_factor: float = 2.0,
    kinds: Iterable[SaKind] | None = None,
) -> RequestTrace:
    """Single Pareto arrival stream over ``[0, horizon)``, tenants picked uniformly."""
    by_id = {p.model_id: p for p in profiles}
    for t in tenants:
        if t.model_id not in by_id:
            raise ValueError(f"tenant {t.tenant_id} requests unknown model {t.model_id}")
    if horizon <= 0 or not tenants:
        return RequestTrace((), seed, int(horizon))
    iso = {m: isolated_latency(p, kinds) for m, p in by_id.items()}
    alpha, xmin = pareto
    rng = np.random.default_rng(seed)
    qos_cdf = [np.cumsum(t.qos_level_weights) for t in tenants]
    clock = 0.0
    out = []
    while True:
        clock += float(sample_pareto(rng, alpha, xmin))
        arrival = int(clock)
        if arrival >= horizon:
            break
        i = int(rng.integers(len(tenants)))
        t = tenants[i]
        qos = QosLevel(min(int(np.searchsorted(qos_cdf[i], rng.random(), side="right")), 2))
        deadline = request_deadline(arrival, iso[t.model_id], qos, medium_factor)
        out.append(Request(len(out), t.tenant_id, t.model_id, arrival, qos, deadline))
    return RequestTrace(tuple(out), seed, int(horizon))


def assign_targets_zipf(seed: int, tenants: Sequence[TenantSpec], targets: Sequence[float],
                        exponent_s: float = 1.0) -> list[TenantSpec]:
    """Draw each tenant's target SLI; rank 1 is ``targets[0]``."""
    if not targets:
        raise ValueError("targets must be non-empty")
    rng = np.random.default_rng(seed)
    ranks = sample_zipf_rank(rng, len(targets), exponent_s, size=len(tenants))
    return [replace(t, target_sli=float(targets[r - 1])) for t, r in zip(tenants, ranks)]


def make_tenants(n_tenants: int, n_models: int, target_sli: float = 1.0,
                 qos_level_weights=(1 / 3, 1 / 3, 1 / 3), mk=None) -> list[TenantSpec]:
    """Tenants assigned to models round-robin."""
    return [TenantSpec(i, i % n_models, target_sli, mk, tuple(qos_level_weights)) for i in range(n_tenants)]


def interarrival_for_utilization(profiles: Sequence[ModelProfile], tenants: Sequence[TenantSpec],
                                 n_sas: int, utilization: float) -> float:
    """Mean inter-arrival giving roughly ``utilization`` of the MAS compute capacity."""
    iso = {p.model_id: isolated_latency(p) for p in profiles}
    mean_work = float(np.mean([iso[t.model_id] for t in tenants]))
    return mean_work / (n_sas * utilization)


# ---------------------------------------------------------------------------
# trace / tenant CSV

TRACE_HEADER = ["req_id", "tenant_id", "model_id", "arrival", "qos_level", "deadline"]
TENANT_HEADER = ["tenant_id", "model_id", "target_sli", "m", "k", "w_low", "w_med", "w_high"]


def trace_csv(trace: RequestTrace) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(TRACE_HEADER)
    for r in trace.requests:
        w.writerow([r.req_id, r.tenant_id, r.model_id, r.arrival, r.qos_level.code, r.deadline])
    return buf.getvalue()


def write_trace(trace: RequestTrace, path: str | Path) -> None:
    Path(path).write_text(trace_csv(trace))


def load_trace(path: str | Path, seed: int = 0, horizon: int | None = None) -> RequestTrace:
    reader = csv.DictReader(io.StringIO(Path(path).read_text()))
    if reader.fieldnames != TRACE_HEADER:
        raise ParseError(f"{path}: expected header {','.join(TRACE_HEADER)}")
    reqs = []
    try:
        for row in reader:
            reqs.append(Request(int(row["req_id"]), int(row["tenant_id"]), int(row["model_id"]),
                                int(row["arrival"]), QosLevel.parse(row["qos_level"]), int(row["deadline"])))
    except (TypeError, ValueError) as exc:
        raise ParseError(f"{path}: {exc}") from None
    if any(b.arrival < a.arrival for a, b in zip(reqs, reqs[1:])):
        raise ParseError(f"{path}: requests not sorted by arrival")
    if horizon is None:
        horizon = reqs[-1].arrival + 1 if reqs else 0
    return RequestTrace(tuple(reqs), seed, int(horizon))


def tenants_csv(tenants: Sequence[TenantSpec]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(TENANT_HEADER)
    for t in tenants:
        m, k = t.mk if t.mk is not None else ("", "")
        w.writerow([t.tenant_id, t.model_id, _fmt(t.target_sli), m, k, *(_fmt(x) for x in t.qos_level_weights)])
    return buf.getvalue()


def write_tenants(tenants: Sequence[TenantSpec], path: str | Path) -> None:
    Path(path).write_text(tenants_csv(tenants))


def load_tenants(path: str | Path) -> list[TenantSpec]:
    reader = csv.DictReader(io.StringIO(Path(path).read_text()))
    if reader.fieldnames != TENANT_HEADER:
        raise ParseError(f"{path}: expected header {','.join(TENANT_HEADER)}")
    out = []
    try:
        for row in reader:
            m, k = row["m"].strip(), row["k"].strip()
            mk = (int(m), int(k)) if m and k else None
            w = (float(row["w_low"]), float(row["w_med"]), float(row["w_high"]))
            out.append(TenantSpec(int(row["tenant_id"]), int(row["model_id"]), float(row["target_sli"]), mk, w))
    except (TypeError, ValueError) as exc:
        raise ParseError(f"{path}: {exc}") from None
    return out
