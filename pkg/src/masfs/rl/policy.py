"""Greedy RL scheduler and the binary checkpoint format.

Checkpoint layout (little endian)::

    b"MASRL1"
    int32 n_in, n_h, M, n_models
    float64 blocks, row-major, in this order:
      norm      (2,)              max table latency, total bandwidth
      actor     Wi (n_h, 2M), bi (n_h,), W (3n_h, n_in), U (3n_h, n_h), b (3n_h,),
                Wo (1+M, n_h), bo (1+M,)
      critic    Wi (n_h, 2M), bi (n_h,), W (3n_h, n_in+1+M), U (3n_h, n_h), b (3n_h,),
                wq (n_h,), bq ()

The policy mode follows from n_in: SLA-aware policies carry two more input
features than ``n_models + 3 + 2M``.
"""
from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from ..errors import ParseError
from ..simcore import Assignment, SchedulerInput
from .encode import FeatureSpec, PolicyMode, encode_state
from .nets import Actor, Critic, decode_actions

MAGIC = b"MASRL1"
ACTOR_ORDER = ("Wi", "bi", "W", "U", "b", "Wo", "bo")
CRITIC_ORDER = ("Wi", "bi", "W", "U", "b", "wq", "bq")


class RLScheduler:
    """Deterministic scheduler backed by a trained actor."""

    def __init__(self, actor: Actor, spec: FeatureSpec | PolicyMode | str, name: str | None = None):
        self.actor = actor
        self.spec = spec
        self.name = name or ("rl-sla" if spec.mode is PolicyMode.SLA_AWARE else "rl-baseline")

    @property
    def mode(self) -> PolicyMode:
        return self.spec.mode

    def raw(self, inp: SchedulerInput) -> np.ndarray:
        sys, seq = encode_state(inp, self.spec)
        return self.actor(sys, seq)

    def __call__(self, inp: SchedulerInput) -> Assignment:
        prio, sa = decode_actions(self.raw(inp))
        return Assignment(prio, sa)


def _shapes(n_in, n_h, m):
    n_sys = 2 * m
    actor = {"Wi": (n_h, n_sys), "bi": (n_h,), "W": (3 * n_h, n_in), "U": (3 * n_h, n_h), "b": (3 * n_h,),
             "Wo": (1 + m, n_h), "bo": (1 + m,)}
    critic = {"Wi": (n_h, n_sys), "bi": (n_h,), "W": (3 * n_h, n_in + 1 + m), "U": (3 * n_h, n_h),
              "b": (3 * n_h,), "wq": (n_h,), "bq": ()}
    return actor, critic


def save_checkpoint(path, actor: Actor, critic: Critic, spec: FeatureSpec) -> None:
    parts = [MAGIC, struct.pack("<4i", actor.n_in, actor.n_h, actor.n_sas, spec.n_models),
             np.asarray([spec.max_latency, spec.total_bandwidth], dtype="<f8").tobytes()]
    for k in ACTOR_ORDER:
        parts.append(np.ascontiguousarray(actor.params[k], dtype="<f8").tobytes())
    for k in CRITIC_ORDER:
        parts.append(np.ascontiguousarray(critic.params[k], dtype="<f8").tobytes())
    Path(path).write_bytes(b"".join(parts))


def load_checkpoint(path, bptt: int = 32):
    """Return ``(actor, critic, meta)``; ``meta['mode']`` is the FeatureSpec to encode with."""
    data = Path(path).read_bytes()
    if data[:6] != MAGIC:
        raise ParseError(f"{path}: not a policy checkpoint")
    n_in, n_h, m, n_models = struct.unpack_from("<4i", data, 6)
    off = 6 + 16
    base = n_models + 3 + 2 * m
    if n_in == base:
        mode = PolicyMode.BASELINE
    elif n_in == base + 2:
        mode = PolicyMode.SLA_AWARE
    else:
        raise ParseError(f"{path}: n_in={n_in} inconsistent with {n_models} models and {m} SAs")

    def take(shape):
        nonlocal off
        count = int(np.prod(shape)) if shape else 1
        end = off + 8 * count
        if end > len(data):
            raise ParseError(f"{path}: truncated checkpoint")
        arr = np.frombuffer(data, dtype="<f8", count=count, offset=off).astype(np.float64).reshape(shape)
        off = end
        return arr

    norm = take((2,))
    a_shapes, c_shapes = _shapes(n_in, n_h, m)
    ap = {k: take(a_shapes[k]) for k in ACTOR_ORDER}
    cp = {k: take(c_shapes[k]) for k in CRITIC_ORDER}
    if off != len(data):
        raise ParseError(f"{path}: {len(data) - off} trailing bytes")
    spec = FeatureSpec(n_models, m, float(norm[0]), float(norm[1]), mode)
    actor = Actor(n_in, 2 * m, m, n_h, params=ap, bptt=bptt)
    critic = Critic(n_in, 2 * m, m, n_h, params=cp, bptt=bptt)
    return actor, critic, {"mode": spec, "spec": spec, "n_h": n_h}
