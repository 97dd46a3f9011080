"""Batched GRU sequence kernels.

Gate parameters are stacked as ``W`` (3H, I), ``U`` (3H, H), ``b`` (3H,)
in the order update (z), reset (r), candidate (n):

    z = sigmoid(Wz x + Uz h + bz)
    r = sigmoid(Wr x + Ur h + br)
    n = tanh(Wn x + Un (r * h) + bn)
    h' = (1 - z) * n + z * h

Sequences are padded to a common length T; ``mask[t, b] = 0`` carries the
hidden state through a padded step unchanged. Each kernel exists twice:
a numba-compiled loop and a numpy version; ``USE_JIT`` picks one.
"""
import numpy as np

from ._jit import USE_JIT, njit


def _sigmoid(x):
    return 0.5 * (np.tanh(0.5 * x) + 1.0)


# ---------------------------------------------------------------------------
# numpy path

def gru_seq_forward_np(W, U, b, X, mask, h0):
    T, B, _ = X.shape
    H = W.shape[0] // 3
    Hs = np.empty((T + 1, B, H))
    Z = np.empty((T, B, H))
    R = np.empty((T, B, H))
    N = np.empty((T, B, H))
    Hs[0] = h0
    GX = X @ W.T + b
    Uzr = U[: 2 * H]
    Un = U[2 * H:]
    for t in range(T):
        h = Hs[t]
        gzr = GX[t, :, : 2 * H] + h @ Uzr.T
        z = _sigmoid(gzr[:, :H])
        r = _sigmoid(gzr[:, H:])
        n = np.tanh(GX[t, :, 2 * H:] + (r * h) @ Un.T)
        m = mask[t][:, None]
        Hs[t + 1] = m * ((1.0 - z) * n + z * h) + (1.0 - m) * h
        Z[t], R[t], N[t] = z, r, n
    return Hs, Z, R, N


def gru_seq_backward_np(W, U, X, mask, Hs, Z, R, N, dH, bptt):
    """Gradients given ``dH[t]`` = dL/dh_{t+1} from every step's consumers.

    Returns ``(dW, dU, db, dX, dh0)``. The hidden-state gradient is cut
    between steps ``t - 1`` and ``t`` whenever ``t`` is a positive multiple
    of ``bptt``.
    """
    T, B, _ = X.shape
    H = W.shape[0] // 3
    Uzr = U[: 2 * H]
    Un = U[2 * H:]
    dU = np.zeros_like(U)
    dGX = np.empty((T, B, 3 * H))
    carry = np.zeros((B, H))
    for t in range(T - 1, -1, -1):
        dh = dH[t] + carry
        m = mask[t][:, None]
        h = Hs[t]
        z, r, n = Z[t], R[t], N[t]
        dnew = m * dh
        dprev = (1.0 - m) * dh + dnew * z
        dan = dnew * (1.0 - z) * (1.0 - n * n)
        rh = r * h
        dU[2 * H:] += dan.T @ rh
        drh = dan @ Un
        dprev += drh * r
        daz = dnew * (h - n) * z * (1.0 - z)
        dar = drh * h * r * (1.0 - r)
        dzr = np.concatenate((daz, dar), axis=1)
        dU[: 2 * H] += dzr.T @ h
        dprev += dzr @ Uzr
        dGX[t, :, : 2 * H] = dzr
        dGX[t, :, 2 * H:] = dan
        if t > 0 and bptt > 0 and t % bptt == 0:
            carry = np.zeros((B, H))
        else:
            carry = dprev
    flat_g = dGX.reshape(T * B, 3 * H)
    dW = flat_g.T @ X.reshape(T * B, -1)
    db = flat_g.sum(axis=0)
    dX = dGX @ W
    return dW, dU, db, dX, carry


# ---------------------------------------------------------------------------
# numba path

@njit
def _gru_seq_forward_jit(W, U, b, X, mask, h0):
    T, B, I = X.shape
    H = W.shape[0] // 3
    Hs = np.empty((T + 1, B, H))
    Z = np.empty((T, B, H))
    R = np.empty((T, B, H))
    N = np.empty((T, B, H))
    Hs[0] = h0
    Wt = np.ascontiguousarray(W.T)
    Uzr_t = np.ascontiguousarray(U[: 2 * H].T)
    Un_t = np.ascontiguousarray(U[2 * H:].T)
    rh = np.empty((B, H))
    for t in range(T):
        h = Hs[t]
        gx = np.dot(np.ascontiguousarray(X[t]), Wt)
        gzr = np.dot(h, Uzr_t)
        for i in range(B):
            for j in range(H):
                a = gx[i, j] + gzr[i, j] + b[j]
                Z[t, i, j] = 0.5 * (np.tanh(0.5 * a) + 1.0)
                a = gx[i, H + j] + gzr[i, H + j] + b[H + j]
                rr = 0.5 * (np.tanh(0.5 * a) + 1.0)
                R[t, i, j] = rr
                rh[i, j] = rr * h[i, j]
        gn = np.dot(rh, Un_t)
        for i in range(B):
            m = mask[t, i]
            for j in range(H):
                nn = np.tanh(gx[i, 2 * H + j] + gn[i, j] + b[2 * H + j])
                N[t, i, j] = nn
                z = Z[t, i, j]
                hp = h[i, j]
                Hs[t + 1, i, j] = m * ((1.0 - z) * nn + z * hp) + (1.0 - m) * hp
    return Hs, Z, R, N


@njit
def _gru_seq_backward_jit(W, U, X, mask, Hs, Z, R, N, dH, bptt):
    T, B, I = X.shape
    H = W.shape[0] // 3
    Uzr = np.ascontiguousarray(U[: 2 * H])
    Un = np.ascontiguousarray(U[2 * H:])
    dU = np.zeros_like(U)
    dW = np.zeros_like(W)
    db = np.zeros(3 * H)
    dX = np.empty((T, B, I))
    carry = np.zeros((B, H))
    dprev = np.empty((B, H))
    dan = np.empty((B, H))
    dzr = np.empty((B, 2 * H))
    rh = np.empty((B, H))
    dnew = np.empty((B, H))
    dg = np.empty((B, 3 * H))
    for t in range(T - 1, -1, -1):
        h = Hs[t]
        for i in range(B):
            m = mask[t, i]
            for j in range(H):
                dh = dH[t, i, j] + carry[i, j]
                z = Z[t, i, j]
                n = N[t, i, j]
                dn = m * dh
                dnew[i, j] = dn
                dprev[i, j] = (1.0 - m) * dh + dn * z
                dan[i, j] = dn * (1.0 - z) * (1.0 - n * n)
                rh[i, j] = R[t, i, j] * h[i, j]
        dU[2 * H:] += np.dot(dan.T, rh)
        drh = np.dot(dan, Un)
        for i in range(B):
            for j in range(H):
                r = R[t, i, j]
                z = Z[t, i, j]
                dprev[i, j] += drh[i, j] * r
                dzr[i, j] = dnew[i, j] * (h[i, j] - N[t, i, j]) * z * (1.0 - z)
                dzr[i, H + j] = drh[i, j] * h[i, j] * r * (1.0 - r)
        dU[: 2 * H] += np.dot(dzr.T, np.ascontiguousarray(h))
        dprev += np.dot(dzr, Uzr)
        for i in range(B):
            for j in range(2 * H):
                dg[i, j] = dzr[i, j]
            for j in range(H):
                dg[i, 2 * H + j] = dan[i, j]
        xt = np.ascontiguousarray(X[t])
        dW += np.dot(dg.T, xt)
        for k in range(3 * H):
            s = 0.0
            for i in range(B):
                s += dg[i, k]
            db[k] += s
        dX[t] = np.dot(dg, W)
        if t > 0 and bptt > 0 and t % bptt == 0:
            carry[:, :] = 0.0
        else:
            carry[:, :] = dprev
    return dW, dU, db, dX, carry


def _prep(*arrays):
    return tuple(np.ascontiguousarray(a, dtype=np.float64) for a in arrays)


def gru_seq_forward_jit(W, U, b, X, mask, h0):
    return _gru_seq_forward_jit(*_prep(W, U, b, X, mask, h0))


def gru_seq_backward_jit(W, U, X, mask, Hs, Z, R, N, dH, bptt):
    return _gru_seq_backward_jit(*_prep(W, U, X, mask, Hs, Z, R, N, dH), int(bptt))


if USE_JIT:
    gru_seq_forward = gru_seq_forward_jit
    gru_seq_backward = gru_seq_backward_jit
else:
    gru_seq_forward = gru_seq_forward_np
    gru_seq_backward = gru_seq_backward_np

BACKEND = "numba" if USE_JIT else "numpy"
