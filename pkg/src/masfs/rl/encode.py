"""State encoding for the scheduling policy."""
from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from ..simcore import SchedulerInput


class PolicyMode(enum.Enum):
    BASELINE = "baseline"
    SLA_AWARE = "sla"

    @classmethod
    def parse(cls, value) -> "PolicyMode":
        if isinstance(value, cls):
            return value
        v = str(value).lower().replace("_", "-")
        if v in ("baseline", "rl-baseline"):
            return cls.BASELINE
        if v in ("sla", "sla-aware", "slaaware", "rl-sla"):
            return cls.SLA_AWARE
        raise ValueError(f"unknown policy mode {value!r}")


@dataclass(frozen=True)
class FeatureSpec:
    """Sizes and normalisation constants shared by the encoder and the networks."""
    n_models: int
    n_sas: int
    max_latency: float
    total_bandwidth: float
    mode: PolicyMode = PolicyMode.SLA_AWARE

    @property
    def n_in(self) -> int:
        base = self.n_models + 3 + 2 * self.n_sas
        return base + 2 if self.mode is PolicyMode.SLA_AWARE else base

    @property
    def n_sys(self) -> int:
        return 2 * self.n_sas

    @property
    def n_out(self) -> int:
        return 1 + self.n_sas

    def with_mode(self, mode) -> "FeatureSpec":
        return FeatureSpec(self.n_models, self.n_sas, self.max_latency, self.total_bandwidth, PolicyMode.parse(mode))


def encode_system(inp: SchedulerInput, spec: FeatureSpec) -> np.ndarray:
    snap = inp.snapshot
    busy = np.asarray(snap.busy, dtype=np.float64)
    occ = np.minimum(np.asarray(snap.occupied_cycles, dtype=np.float64) / spec.max_latency, 1.0)
    return np.concatenate((busy, occ))


def encode_state(inp: SchedulerInput, spec: FeatureSpec, mode=None):
    """Return ``(system_features, sequence)``; one sequence row per ready sub-job.

    Rows follow ``inp.ready`` order, i.e. (arrival, req_id, layer_id). Row
    layout: model one-hot, layer progress, normalised slack, normalised wait,
    per-SA latency / table max, per-SA bandwidth / total bandwidth and, for
    the SLA-aware policy, the current and target SLI.
    """
    mode = spec.mode if mode is None else PolicyMode.parse(mode)
    if mode is not spec.mode:
        spec = spec.with_mode(mode)
    sys = encode_system(inp, spec)
    ready = inp.ready
    n = len(ready)
    seq = np.zeros((n, spec.n_in))
    if n == 0:
        return sys, seq
    nm, m = spec.n_models, spec.n_sas
    now = inp.now
    model = np.fromiter((sj.job.req.model_id for sj in ready), dtype=np.int64, count=n)
    seq[np.arange(n), model] = 1.0
    seq[:, nm] = [sj.layer_id / sj.job.profile.n_layers for sj in ready]
    arrival = np.fromiter((sj.job.arrival for sj in ready), dtype=np.float64, count=n)
    deadline = np.fromiter((sj.job.deadline for sj in ready), dtype=np.float64, count=n)
    q = np.maximum(deadline - arrival, 1.0)
    seq[:, nm + 1] = np.clip((deadline - now) / q, -1.0, 1.0)
    seq[:, nm + 2] = np.clip((now - arrival) / q, 0.0, 2.0)
    seq[:, nm + 3: nm + 3 + m] = np.minimum(inp.latency / spec.max_latency, 1.0)
    seq[:, nm + 3 + m: nm + 3 + 2 * m] = np.minimum(inp.bandwidth / spec.total_bandwidth, 2.0)
    if mode is PolicyMode.SLA_AWARE:
        book = inp.sla_view
        for i, sj in enumerate(ready):
            st = book.get(sj.job.req.tenant_id, sj.job.req.model_id)
            seq[i, -2] = st.snapshot().sli
            seq[i, -1] = st.target_sli
    return sys, seq
