"""Hot numeric kernels with a numba path and a pure-numpy fallback.

The active backend is picked once at import time.  Set ``FEDSTGD_NUMBA=0``
to force the numpy path (numba is also skipped when it cannot be imported).
Both implementations are always importable as ``NUMPY`` and ``NUMBA`` so
they can be cross-checked and benchmarked in one process.

All kernels take float64 arrays with an explicit leading batch axis; callers
add or drop that axis.
"""
import os
from types import SimpleNamespace

import numpy as np

try:
    from numba import njit

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - exercised only without numba
    HAVE_NUMBA = False

    def njit(*args, **kwargs):
        if args and callable(args[0]):
            return args[0]
        return lambda f: f


def _env_wants_numba():
    flag = os.environ.get("FEDSTGD_NUMBA", "1").strip().lower()
    return flag not in ("0", "false", "no", "off")


# ---------------------------------------------------------------- numpy path

def _np_gamma(w, v):
    b, n, a = w.shape
    return (w[:, :, :, None] * v[:, :, None, :]).reshape(b, n, a * v.shape[2])


def _np_gamma_vjp(g, w, v):
    b, n, a = w.shape
    g4 = g.reshape(b, n, a, v.shape[2])
    gw = np.einsum("bnkl,bnl->bnk", g4, v)
    gv = np.einsum("bnkl,bnk->bnl", g4, w)
    return gw, gv


def _np_softmax(x):
    shifted = x - x.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def _np_softmax_vjp(g, s):
    return s * (g - (g * s).sum(axis=-1, keepdims=True))


def _np_rowmat(u, w):
    # u: (B, N, I); w: (B|1, N|1, I, O) -> (B, N, O)
    if w.shape[0] == 1 and w.shape[1] == u.shape[1]:
        return np.matmul(u.transpose(1, 0, 2), w[0]).transpose(1, 0, 2)
    if w.shape[1] == 1 and w.shape[0] == u.shape[0]:
        return np.matmul(u, w[:, 0])
    return np.einsum("bni,bnio->bno", u, np.broadcast_to(w, u.shape[:2] + w.shape[2:]))


def _np_rowmat_vjp(g, u, w):
    if w.shape[0] == 1 and w.shape[1] == u.shape[1]:
        gu = np.matmul(g.transpose(1, 0, 2), np.swapaxes(w[0], -1, -2)).transpose(1, 0, 2)
        gw = np.matmul(u.transpose(1, 2, 0), g.transpose(1, 0, 2))[None]
        return gu, gw
    if w.shape[1] == 1 and w.shape[0] == u.shape[0]:
        gu = np.matmul(g, np.swapaxes(w[:, 0], -1, -2))
        gw = np.matmul(np.swapaxes(u, -1, -2), g)[:, None]
        return gu, gw
    full = np.broadcast_to(w, u.shape[:2] + w.shape[2:])
    gu = np.einsum("bno,bnio->bni", g, full)
    gw = u[:, :, :, None] * g[:, :, None, :]
    if w.shape[0] == 1:
        gw = gw.sum(axis=0, keepdims=True)
    if w.shape[1] == 1:
        gw = gw.sum(axis=1, keepdims=True)
    return gu, gw


def _np_adam(p, g, m, v, lr, beta1, beta2, eps, wd, bc1, bc2):
    # all flat float64 arrays; p, m, v are updated in place
    g = g + wd * p
    m *= beta1
    m += (1.0 - beta1) * g
    v *= beta2
    g *= g
    g *= 1.0 - beta2
    v += g
    den = np.sqrt(v / bc2)
    den += eps
    step = m / bc1
    step /= den
    step *= lr
    p -= step


NUMPY = SimpleNamespace(
    name="numpy",
    gamma=_np_gamma,
    gamma_vjp=_np_gamma_vjp,
    softmax=_np_softmax,
    softmax_vjp=_np_softmax_vjp,
    rowmat=_np_rowmat,
    rowmat_vjp=_np_rowmat_vjp,
    adam=_np_adam,
)


# ---------------------------------------------------------------- numba path

@njit(cache=True)
def _nb_gamma(w, v):
    nb, nn, a = w.shape
    c = v.shape[2]
    out = np.empty((nb, nn, a * c))
    for b in range(nb):
        for n in range(nn):
            for k in range(a):
                wk = w[b, n, k]
                base = k * c
                for l in range(c):
                    out[b, n, base + l] = wk * v[b, n, l]
    return out


@njit(cache=True)
def _nb_gamma_vjp(g, w, v):
    nb, nn, a = w.shape
    c = v.shape[2]
    gw = np.zeros((nb, nn, a))
    gv = np.zeros((nb, nn, c))
    for b in range(nb):
        for n in range(nn):
            for k in range(a):
                base = k * c
                acc = 0.0
                wk = w[b, n, k]
                for l in range(c):
                    gkl = g[b, n, base + l]
                    acc += gkl * v[b, n, l]
                    gv[b, n, l] += gkl * wk
                gw[b, n, k] = acc
    return gw, gv


@njit(cache=True)
def _nb_softmax(x):
    nb, nn, m = x.shape
    out = np.empty_like(x)
    for b in range(nb):
        for n in range(nn):
            mx = x[b, n, 0]
            for j in range(1, m):
                if x[b, n, j] > mx:
                    mx = x[b, n, j]
            tot = 0.0
            for j in range(m):
                e = np.exp(x[b, n, j] - mx)
                out[b, n, j] = e
                tot += e
            for j in range(m):
                out[b, n, j] /= tot
    return out


@njit(cache=True)
def _nb_softmax_vjp(g, s):
    nb, nn, m = s.shape
    out = np.empty_like(s)
    for b in range(nb):
        for n in range(nn):
            dot = 0.0
            for j in range(m):
                dot += g[b, n, j] * s[b, n, j]
            for j in range(m):
                out[b, n, j] = s[b, n, j] * (g[b, n, j] - dot)
    return out


@njit(cache=True)
def _nb_adam(p, g, m, v, lr, beta1, beta2, eps, wd, bc1, bc2):
    for i in range(p.size):
        gi = g[i] + wd * p[i]
        m[i] = m[i] * beta1 + (1.0 - beta1) * gi
        v[i] = v[i] * beta2 + (1.0 - beta2) * (gi * gi)
        p[i] -= lr * ((m[i] / bc1) / (np.sqrt(v[i] / bc2) + eps))


NUMBA = SimpleNamespace(
    name="numba",
    gamma=_nb_gamma,
    gamma_vjp=_nb_gamma_vjp,
    softmax=_nb_softmax,
    softmax_vjp=_nb_softmax_vjp,
    # batched BLAS beats hand loops for the per-row products at these sizes
    rowmat=_np_rowmat,
    rowmat_vjp=_np_rowmat_vjp,
    adam=_nb_adam,
) if HAVE_NUMBA else None


BACKEND = NUMBA if (HAVE_NUMBA and _env_wants_numba()) else NUMPY


def active():
    return BACKEND
