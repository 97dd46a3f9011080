"""Central finite-difference checks for the hand-written network gradients."""
import numpy as np

from masfs.rl.nets import Actor, Critic

H_STEP = 1e-6
FLOOR = 1e-6  # denominators below this are treated as absolute error


def rel_error(a, n):
    a, n = np.asarray(a, dtype=float), np.asarray(n, dtype=float)
    return float(np.max(np.abs(a - n) / np.maximum(np.maximum(np.abs(a), np.abs(n)), FLOOR), initial=0.0))


def numeric_grad(f, x, h=H_STEP):
    g = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        i = it.multi_index
        old = x[i]
        x[i] = old + h
        fp = f()
        x[i] = old - h
        fm = f()
        x[i] = old
        g[i] = (fp - fm) / (2 * h)
    return g


def random_batch(rng, n_in, n_sys, n_out, T, B):
    X = rng.normal(size=(T, B, n_in))
    mask = np.ones((T, B))
    for b in range(B):
        mask[int(rng.integers(1, T + 1)):, b] = 0.0
    X *= mask[..., None]
    A = rng.normal(size=(T, B, n_out)) * mask[..., None]
    return rng.normal(size=(B, n_sys)), X, mask, A


def _scale(params, rng):
    # larger weights than the init so gates leave their linear regime
    for k, v in params.items():
        if v.ndim:
            params[k] = v + rng.normal(scale=0.5, size=v.shape)


def check_actor(seed, n_h=None):
    rng = np.random.default_rng(seed)
    n_in, m = int(rng.integers(1, 6)), int(rng.integers(1, 4))
    n_h = n_h or int(rng.integers(1, 9))
    T, B = int(rng.integers(1, 6)), int(rng.integers(1, 4))
    net = Actor(n_in, 2 * m, m, n_h, rng, bptt=T)
    _scale(net.params, rng)
    sys, X, mask, _ = random_batch(rng, n_in, 2 * m, 1 + m, T, B)
    G = rng.normal(size=(T, B, 1 + m))

    def loss():
        return float(np.sum(net.forward(sys, X, mask)[0] * G))

    Y, cache = net.forward(sys, X, mask)
    g = net.backward(cache, G)
    return max(rel_error(g[k], numeric_grad(loss, net.params[k])) for k in net.params)


def check_critic(seed, n_h=None):
    rng = np.random.default_rng(seed)
    n_in, m = int(rng.integers(1, 6)), int(rng.integers(1, 4))
    n_h = n_h or int(rng.integers(1, 9))
    T, B = int(rng.integers(1, 6)), int(rng.integers(1, 4))
    net = Critic(n_in, 2 * m, m, n_h, rng, bptt=T)
    _scale(net.params, rng)
    sys, X, mask, A = random_batch(rng, n_in, 2 * m, 1 + m, T, B)
    w = rng.normal(size=B)

    def loss():
        return float(np.dot(net.forward(sys, X, A, mask)[0], w))

    q, cache = net.forward(sys, X, A, mask)
    g, dA = net.backward(cache, w)
    errs = [rel_error(g[k], numeric_grad(loss, net.params[k])) for k in net.params]
    errs.append(rel_error(dA * mask[..., None], numeric_grad(loss, A) * mask[..., None]))
    return max(errs)
