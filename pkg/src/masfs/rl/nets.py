"""GRU actor and critic with hand-written backpropagation (float64)."""
from __future__ import annotations

import numpy as np

from ..errors import DimensionMismatch
from ..kernels import gru_seq_backward, gru_seq_forward

GRU_KEYS = ("W", "U", "b")


def sigmoid(x):
    return 0.5 * (np.tanh(0.5 * x) + 1.0)


def gru_step(params: dict, x, h):
    """One GRU update for a single input vector (or a batch of rows)."""
    W, U, b = params["W"], params["U"], params["b"]
    H = U.shape[1]
    x = np.asarray(x, dtype=np.float64)
    h = np.asarray(h, dtype=np.float64)
    if x.shape[-1] != W.shape[1] or h.shape[-1] != H:
        raise DimensionMismatch(f"gru_step: x has {x.shape[-1]} features (want {W.shape[1]}), "
                                f"h has {h.shape[-1]} (want {H})")
    gx = x @ W.T + b
    z = sigmoid(gx[..., :H] + h @ U[:H].T)
    r = sigmoid(gx[..., H:2 * H] + h @ U[H:2 * H].T)
    n = np.tanh(gx[..., 2 * H:] + (r * h) @ U[2 * H:].T)
    return (1.0 - z) * n + z * h


def init_gru(rng, n_in: int, n_h: int) -> dict:
    k = 1.0 / np.sqrt(n_h)
    return {"W": rng.uniform(-k, k, (3 * n_h, n_in)),
            "U": rng.uniform(-k, k, (3 * n_h, n_h)),
            "b": np.zeros(3 * n_h)}


def pad_sequences(seqs, width: int):
    """Stack variable-length (n_i, width) arrays into (T, B, width) plus a (T, B) mask."""
    B = len(seqs)
    T = max((len(s) for s in seqs), default=0)
    X = np.zeros((T, B, width))
    mask = np.zeros((T, B))
    for i, s in enumerate(seqs):
        n = len(s)
        if n:
            X[:n, i] = s
            mask[:n, i] = 1.0
    return X, mask


class _Net:
    params: dict

    def copy(self):
        new = object.__new__(type(self))
        new.__dict__.update(self.__dict__)
        new.params = {k: v.copy() for k, v in self.params.items()}
        return new

    def zero_like(self):
        return {k: np.zeros_like(v) for k, v in self.params.items()}

    def n_params(self) -> int:
        return sum(v.size for v in self.params.values())


class Actor(_Net):
    """h0 = tanh(Wi sys + bi); GRU over the ready sequence; per-step output Wo h + bo.

    Output column 0 is the priority logit, columns 1..M the SA scores. The
    head is linear: a squashing head saturates under DDPG's action gradient,
    after which both learning and exploration stall. Output magnitude is
    held in check by the trainer's action penalty instead.
    """

    def __init__(self, n_in: int, n_sys: int, n_sas: int, n_h: int = 192, rng=None, params=None,
                 bptt: int = 32):
        self.n_in, self.n_sys, self.n_sas, self.n_h, self.bptt = n_in, n_sys, n_sas, n_h, bptt
        if params is None:
            rng = np.random.default_rng(rng)
            ks = 1.0 / np.sqrt(max(n_sys, 1))
            params = {"Wi": rng.uniform(-ks, ks, (n_h, n_sys)), "bi": np.zeros(n_h),
                      **init_gru(rng, n_in, n_h),
                      "Wo": rng.uniform(-3e-3, 3e-3, (1 + n_sas, n_h)), "bo": np.zeros(1 + n_sas)}
        self.params = params

    @property
    def n_out(self) -> int:
        return 1 + self.n_sas

    def forward(self, sys, X, mask):
        p = self.params
        sys = np.atleast_2d(sys)
        if X.shape[-1] != self.n_in:
            raise DimensionMismatch(f"actor expects {self.n_in} features, got {X.shape[-1]}")
        h0 = np.tanh(sys @ p["Wi"].T + p["bi"])
        Hs, Z, R, N = gru_seq_forward(p["W"], p["U"], p["b"], X, mask, h0)
        Y = (Hs[1:] @ p["Wo"].T + p["bo"]) * mask[..., None]
        return Y, (sys, X, mask, h0, Hs, Z, R, N, Y)

    def __call__(self, sys, seq):
        """Raw outputs (n, 1 + M) for one unbatched state."""
        seq = np.asarray(seq, dtype=np.float64)
        if len(seq) == 0:
            return np.zeros((0, self.n_out))
        Y, _ = self.forward(sys, seq[:, None, :], np.ones((len(seq), 1)))
        return Y[:, 0, :]

    def backward(self, cache, dY):
        sys, X, mask, h0, Hs, Z, R, N, Y = cache
        p = self.params
        dA = dY * mask[..., None]
        T, B, _ = X.shape
        flat = dA.reshape(T * B, -1)
        g = {"Wo": flat.T @ Hs[1:].reshape(T * B, -1), "bo": flat.sum(axis=0)}
        dH = dA @ p["Wo"]
        dW, dU, db, _dX, dh0 = gru_seq_backward(p["W"], p["U"], X, mask, Hs, Z, R, N, dH, self.bptt)
        g.update(W=dW, U=dU, b=db)
        dpre = dh0 * (1.0 - h0 * h0)
        g["Wi"] = dpre.T @ sys
        g["bi"] = dpre.sum(axis=0)
        return g


class Critic(_Net):
    """Q(s, a): h0 = tanh(Wi sys + bi); GRU over [features, action] steps; Q = wq . h_T + bq."""

    def __init__(self, n_in: int, n_sys: int, n_sas: int, n_h: int = 192, rng=None, params=None,
                 bptt: int = 32):
        self.n_in, self.n_sys, self.n_sas, self.n_h, self.bptt = n_in, n_sys, n_sas, n_h, bptt
        if params is None:
            rng = np.random.default_rng(rng)
            ks = 1.0 / np.sqrt(max(n_sys, 1))
            params = {"Wi": rng.uniform(-ks, ks, (n_h, n_sys)), "bi": np.zeros(n_h),
                      **init_gru(rng, n_in + 1 + n_sas, n_h),
                      "wq": rng.uniform(-3e-3, 3e-3, n_h), "bq": np.zeros(())}
        self.params = params

    def forward(self, sys, X, A, mask):
        p = self.params
        sys = np.atleast_2d(sys)
        if X.shape[-1] != self.n_in or A.shape[-1] != 1 + self.n_sas or X.shape[:2] != A.shape[:2]:
            raise DimensionMismatch(f"critic expects ({self.n_in} features, {1 + self.n_sas} actions) "
                                    f"per step, got X{X.shape} A{A.shape}")
        XA = np.concatenate((X, A), axis=-1)
        h0 = np.tanh(sys @ p["Wi"].T + p["bi"])
        Hs, Z, R, N = gru_seq_forward(p["W"], p["U"], p["b"], XA, mask, h0)
        q = Hs[-1] @ p["wq"] + p["bq"]
        return q, (sys, XA, mask, h0, Hs, Z, R, N)

    def q_value(self, sys, seq, actions) -> float:
        seq = np.asarray(seq, dtype=np.float64).reshape(-1, self.n_in)
        actions = np.asarray(actions, dtype=np.float64).reshape(-1, 1 + self.n_sas)
        if len(seq) != len(actions):
            raise DimensionMismatch("state and action sequences differ in length")
        q, _ = self.forward(sys, seq[:, None, :], actions[:, None, :], np.ones((len(seq), 1)))
        return float(q[0])

    def backward(self, cache, dq):
        """Parameter gradients and dQ/dA for upstream ``dq`` of shape (B,)."""
        sys, XA, mask, h0, Hs, Z, R, N = cache
        p = self.params
        T, B, _ = XA.shape
        g = {"wq": Hs[-1].T @ dq, "bq": np.asarray(dq.sum())}
        dH = np.zeros((T, B, self.n_h))
        dh_final = np.outer(dq, p["wq"])
        if T:
            dH[T - 1] = dh_final
            dW, dU, db, dXA, dh0 = gru_seq_backward(p["W"], p["U"], XA, mask, Hs, Z, R, N, dH, self.bptt)
        else:
            dW, dU, db = np.zeros_like(p["W"]), np.zeros_like(p["U"]), np.zeros_like(p["b"])
            dXA, dh0 = np.zeros((0, B, XA.shape[-1])), dh_final
        g.update(W=dW, U=dU, b=db)
        dpre = dh0 * (1.0 - h0 * h0)
        g["Wi"] = dpre.T @ sys
        g["bi"] = dpre.sum(axis=0)
        return g, dXA[..., self.n_in:]


class Adam:
    def __init__(self, params: dict, lr: float, beta1=0.9, beta2=0.999, eps=1e-8, clip: float | None = None):
        self.lr, self.b1, self.b2, self.eps, self.clip = lr, beta1, beta2, eps, clip
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.t = 0

    def step(self, params: dict, grads: dict) -> None:
        if self.clip is not None:
            norm = np.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))
            if norm > self.clip:
                grads = {k: g * (self.clip / norm) for k, g in grads.items()}
        self.t += 1
        c1 = 1.0 - self.b1 ** self.t
        c2 = 1.0 - self.b2 ** self.t
        for k, g in grads.items():
            m = self.m[k]
            v = self.v[k]
            m *= self.b1
            m += (1.0 - self.b1) * g
            v *= self.b2
            v += (1.0 - self.b2) * g * g
            params[k] -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def soft_update(target: dict, online: dict, tau: float) -> None:
    """target <- tau * online + (1 - tau) * target, in place."""
    for k, v in online.items():
        target[k] *= 1.0 - tau
        target[k] += tau * v


def decode_actions(raw) -> tuple[np.ndarray, np.ndarray]:
    """Priority = logistic(column 0); SA = argmax of the remaining columns (ties to the lower index)."""
    raw = np.asarray(raw, dtype=np.float64).reshape(len(raw), -1) if len(raw) else np.zeros((0, 2))
    prio = sigmoid(raw[:, 0])
    sa = np.argmax(raw[:, 1:], axis=1) if len(raw) else np.zeros(0, dtype=np.int64)
    return prio, sa


def exploration_noise(rng: np.random.Generator, sigma: float, shape) -> np.ndarray:
    if sigma < 0:
        raise ValueError("sigma must be >= 0")
    if sigma == 0:
        return np.zeros(shape)
    return rng.normal(0.0, sigma, size=shape)


def macs_per_step(n_in: int, n_h: int, n_sas: int) -> int:
    """Multiply-accumulates of one recurrent step plus the output head."""
    return 3 * (n_in * n_h + n_h * n_h + n_h) + n_h * (1 + n_sas)


def policy_mac_count(actor, seq_lengths, epochs: int | None = None) -> int:
    """Total MACs over decision epochs.

    ``seq_lengths`` is either the ready-queue length of every epoch or a
    single length repeated ``epochs`` times.
    """
    if isinstance(actor, Actor):
        per = macs_per_step(actor.n_in, actor.n_h, actor.n_sas)
    else:
        per = macs_per_step(*actor)
    if epochs is not None:
        return per * int(seq_lengths) * int(epochs)
    return per * int(sum(seq_lengths))
