import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from fedstgd import kernels

pytestmark = pytest.mark.skipif(kernels.NUMBA is None, reason="numba unavailable")

dims = st.integers(1, 5)


@given(dims, dims, dims, dims, st.integers(0, 2**16))
def test_backends_agree(b, n, a, c, seed):
    rng = np.random.default_rng(seed)
    w, v = rng.normal(size=(b, n, a)), rng.normal(size=(b, n, c))
    g = rng.normal(size=(b, n, a * c))
    assert np.allclose(kernels.NUMPY.gamma(w, v), kernels.NUMBA.gamma(w, v), atol=1e-14)
    for x, y in zip(kernels.NUMPY.gamma_vjp(g, w, v), kernels.NUMBA.gamma_vjp(g, w, v)):
        assert np.allclose(x, y, atol=1e-12)
    logits = rng.normal(size=(b, n, c)) * 30
    s_np, s_nb = kernels.NUMPY.softmax(logits), kernels.NUMBA.softmax(logits)
    assert np.allclose(s_np, s_nb, atol=1e-14)
    assert np.allclose(kernels.NUMPY.softmax_vjp(logits, s_np),
                       kernels.NUMBA.softmax_vjp(logits, s_np), atol=1e-12)


@given(st.integers(1, 200), st.integers(1, 50), st.integers(0, 2**16))
def test_adam_kernels_bit_identical(size, step, seed):
    rng = np.random.default_rng(seed)
    p, g = rng.normal(size=size), rng.normal(size=size)
    m, v = rng.normal(size=size), rng.normal(size=size) ** 2
    bc1, bc2 = 1 - 0.9 ** step, 1 - 0.999 ** step
    outs = []
    for backend in (kernels.NUMPY, kernels.NUMBA):
        pc, mc, vc = p.copy(), m.copy(), v.copy()
        backend.adam(pc, g, mc, vc, 1e-3, 0.9, 0.999, 1e-8, 1e-4, bc1, bc2)
        outs.append((pc, mc, vc))
    for x, y in zip(*outs):
        assert x.tobytes() == y.tobytes()


def test_adam_matches_textbook_step():
    p, g = np.array([1.0, -2.0]), np.array([0.5, 0.25])
    m, v = np.zeros(2), np.zeros(2)
    kernels.active().adam(p, g.copy(), m, v, 0.1, 0.9, 0.999, 1e-8, 0.0, 0.1, 0.001)
    # first step moves each coordinate by lr * sign(g)
    assert np.allclose(p, [0.9, -2.1], atol=1e-6)


def test_env_flag_parsing(monkeypatch):
    monkeypatch.setenv("FEDSTGD_NUMBA", "off")
    assert not kernels._env_wants_numba()
    monkeypatch.setenv("FEDSTGD_NUMBA", "1")
    assert kernels._env_wants_numba()
