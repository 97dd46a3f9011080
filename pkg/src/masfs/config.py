"""Flat ``key = value`` experiment configuration.

Example::

    # workload
    costs.synthetic.seed = 7
    costs.synthetic.n_models = 4
    tenants.count = 20
    tenants.zipf_targets = 0.7, 0.8, 0.9
    trace.utilization = 0.5
    trace.requests = 2000
    scheduler = edf-h
    sim.seed = 1

Exactly one cost source (``cost_table`` path, ``costs.synthetic.*`` or
``costs.bundled``), one tenant source (``tenants`` path or
``tenants.count``) and one trace source (``trace`` path or generation keys)
must be given. Unknown keys are rejected so typos fail loudly.
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

from .errors import ConfigError, MasfsError
from .rl.ddpg import TrainConfig
from .schedulers import SCHEDULER_NAMES
from .workload import SaKind

DEFAULTS = {
    "mas.sas": "WS,RS",
    "mas.bandwidth": "16",
    "tenants.target": "1.0",
    "tenants.zipf_s": "1.0",
    "tenants.zipf_seed": "0",
    "trace.seed": "0",
    "trace.pareto_alpha": "2.5",
    "trace.medium_factor": "2.0",
    "costs.synthetic.layers_min": "3",
    "costs.synthetic.layers_max": "8",
    "costs.synthetic.affinity_spread": "2.0",
    "scheduler": "edf-h",
    "sim.seed": "0",
    "sla.window": "100",
    "sla.lambda": "0.5",
    "replications": "1",
    "energy_per_mac": "1.0",
    "out": "out",
}

KNOWN = set(DEFAULTS) | {
    "cost_table", "costs.bundled", "costs.bundled.seed", "costs.synthetic.seed", "costs.synthetic.n_models",
    "tenants", "tenants.count", "tenants.zipf_targets", "tenants.mk_m", "tenants.mk_k",
    "trace", "trace.requests", "trace.horizon", "trace.utilization", "trace.mean_interarrival",
    "scheduler.checkpoint", "prema.theta", "sim.epoch_ts", "sim.horizon", "train.mode",
}
KNOWN |= {f"train.{f.name}" for f in dataclasses.fields(TrainConfig)}


def parse_text(text: str, source: str = "<config>") -> dict[str, str]:
    out = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        key = key.strip()
        if not sep or not key:
            raise ConfigError(f"line {lineno}", f"{source}: expected 'key = value', got {raw.strip()!r}")
        if key in out:
            raise ConfigError(key, f"{source}: duplicate key on line {lineno}")
        out[key] = value.strip()
    return out


@dataclass
class ExperimentConfig:
    raw: dict[str, str]
    base_dir: Path = field(default_factory=Path.cwd)

    @classmethod
    def from_text(cls, text: str, base_dir=None, source: str = "<config>") -> "ExperimentConfig":
        cfg = cls(parse_text(text, source), Path(base_dir) if base_dir is not None else Path.cwd())
        cfg.validate()
        return cfg

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        p = Path(path)
        try:
            text = p.read_text()
        except OSError as exc:
            raise ConfigError("config", f"cannot read {p}: {exc.strerror}") from None
        return cls.from_text(text, p.parent, str(p))

    def with_overrides(self, **kv) -> "ExperimentConfig":
        raw = dict(self.raw)
        raw.update({k: str(v) for k, v in kv.items() if v is not None})
        cfg = ExperimentConfig(raw, self.base_dir)
        cfg.validate()
        return cfg

    # -- typed access -------------------------------------------------------

    def has(self, key: str) -> bool:
        return key in self.raw

    def get(self, key: str, default=None) -> str | None:
        if key in self.raw:
            return self.raw[key]
        return DEFAULTS.get(key, default)

    def _typed(self, key, conv, what, default=None):
        v = self.get(key)
        if v is None:
            return default
        try:
            return conv(v)
        except (TypeError, ValueError):
            raise ConfigError(key, f"expected {what}, got {v!r}") from None

    def int(self, key: str, default=None) -> int | None:
        return self._typed(key, int, "an integer", default)

    def float(self, key: str, default=None) -> float | None:
        return self._typed(key, float, "a number", default)

    def bool(self, key: str, default=False) -> bool:
        v = self.get(key)
        if v is None:
            return default
        s = v.lower()
        if s in ("1", "true", "yes", "on"):
            return True
        if s in ("0", "false", "no", "off"):
            return False
        raise ConfigError(key, f"expected a boolean, got {v!r}")

    def floats(self, key: str) -> list[float] | None:
        v = self.get(key)
        if v is None:
            return None
        try:
            return [float(x) for x in v.split(",") if x.strip()]
        except ValueError:
            raise ConfigError(key, f"expected a comma separated list of numbers, got {v!r}") from None

    def path(self, key: str, must_exist: bool = True) -> Path | None:
        v = self.get(key)
        if v is None:
            return None
        p = Path(v)
        if not p.is_absolute():
            p = self.base_dir / p
        if must_exist and not p.exists():
            raise ConfigError(key, f"file not found: {p}")
        return p

    # -- validation ---------------------------------------------------------

    def validate(self) -> None:
        for k in self.raw:
            if k not in KNOWN:
                raise ConfigError(k, "unknown key")
        cost_srcs = [k for k in ("cost_table", "costs.synthetic.seed", "costs.bundled") if k in self.raw]
        if len(cost_srcs) != 1:
            raise ConfigError("cost_table", "give exactly one of cost_table, costs.synthetic.*, costs.bundled")
        if "costs.synthetic.seed" in self.raw and "costs.synthetic.n_models" not in self.raw:
            raise ConfigError("costs.synthetic.n_models", "required with costs.synthetic.seed")
        if ("tenants" in self.raw) == ("tenants.count" in self.raw):
            raise ConfigError("tenants", "give exactly one of tenants (path) and tenants.count")
        gen_keys = [k for k in ("trace.requests", "trace.horizon") if k in self.raw]
        if ("trace" in self.raw) == bool(gen_keys):
            raise ConfigError("trace", "give exactly one of trace (path) and trace.requests / trace.horizon")
        if gen_keys and ("trace.utilization" in self.raw) == ("trace.mean_interarrival" in self.raw):
            raise ConfigError("trace.utilization", "give exactly one of trace.utilization, trace.mean_interarrival")
        try:
            [SaKind.parse(s) for s in self.get("mas.sas").split(",") if s.strip()]
        except (ValueError, MasfsError) as exc:
            raise ConfigError("mas.sas", str(exc)) from None
        name = self.get("scheduler")
        if name not in SCHEDULER_NAMES:
            raise ConfigError("scheduler", f"unknown scheduler {name!r}")
        if self.int("replications") < 1:
            raise ConfigError("replications", "must be >= 1")
        if self.float("energy_per_mac") < 0:
            raise ConfigError("energy_per_mac", "must be >= 0")
        if self.has("sim.epoch_ts") and not self.float("sim.epoch_ts") > 0:
            raise ConfigError("sim.epoch_ts", "must be positive")
        u = self.float("trace.utilization")
        if u is not None and not u > 0:
            raise ConfigError("trace.utilization", "must be positive")
        for k in ("tenants.target",):
            if not 0.0 <= self.float(k) <= 1.0:
                raise ConfigError(k, "must be in [0, 1]")
        zt = self.floats("tenants.zipf_targets")
        if zt is not None and (not zt or any(not 0.0 <= t <= 1.0 for t in zt)):
            raise ConfigError("tenants.zipf_targets", "targets must lie in [0, 1]")
        if self.has("tenants.mk_m") != self.has("tenants.mk_k"):
            raise ConfigError("tenants.mk_m", "tenants.mk_m and tenants.mk_k go together")
        self.train_kwargs()

    def train_kwargs(self) -> dict:
        types = {f.name: f.type for f in dataclasses.fields(TrainConfig)}
        out = {}
        for k, v in self.raw.items():
            if not k.startswith("train.") or k == "train.mode":
                continue
            name = k[6:]
            t = str(types[name])
            if v.lower() in ("none", ""):
                out[name] = None
            elif "int" in t and "float" not in t:
                out[name] = self.int(k)
            elif "str" in t:
                out[name] = v
            else:
                out[name] = self.float(k)
        return out
