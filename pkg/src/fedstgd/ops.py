"""Tensor operations usable on plain arrays or on tape variables.

Every function accepts numpy arrays, :class:`~fedstgd.autodiff.Var`, or a
mix.  With no Var among the inputs the primitive runs eagerly and returns an
array; otherwise the call is recorded on the Var's tape.
"""
import numpy as np

from .autodiff import PRIMITIVES, Var
from .errors import ConfigError, NumericError, ShapeError

LEAKY_SLOPE = 0.01
ACTIVATIONS = ("sigmoid", "tanh", "relu", "leaky_relu")


def tensor(data):
    """Validate and convert input data: float64, rank 1..3, all finite."""
    arr = np.array(data, dtype=np.float64)
    if not 1 <= arr.ndim <= 3:
        raise ShapeError(f"tensor rank must be 1..3, got {arr.ndim}")
    if arr.size == 0:
        raise ShapeError("empty tensor")
    if not np.all(np.isfinite(arr)):
        raise NumericError("tensor contains NaN or Inf")
    return arr


def value(x):
    return x.value if isinstance(x, Var) else np.asarray(x, dtype=np.float64)


def _call(name, *xs, **attrs):
    prim = PRIMITIVES[name]
    tape = None
    for x in xs:
        if isinstance(x, Var):
            tape = x.tape
            break
    if tape is None:
        return prim.forward(*(np.asarray(x, dtype=np.float64) for x in xs), **attrs)
    return tape.apply(prim, [tape.lift(x) for x in xs], attrs)


def matmul(a, b):
    sa, sb = np.shape(value(a)), np.shape(value(b))
    if len(sa) < 2 or len(sb) < 2 or sa[-1] != sb[-2]:
        raise ShapeError(f"matmul shapes {sa} and {sb} do not conform")
    return _call("matmul", a, b)


def transpose(a):
    return _call("transpose", a)


def add(a, b):
    return _call("add", a, b)


def sub(a, b):
    return _call("sub", a, b)


def mul(a, b):
    return _call("mul", a, b)


def scale(a, c):
    return _call("scale", a, c=float(c))


def concat(xs, axis=-1):
    ndim = np.ndim(value(xs[0]))
    return _call("concat", *xs, axis=axis % ndim)


def slice_(a, start, stop, axis=-1):
    ndim = np.ndim(value(a))
    return _call("slice", a, axis=axis % ndim, start=start, stop=stop)


def take(a, index):
    """Gather rows ``a[index]`` along the first axis."""
    return _call("take", a, index=np.asarray(index, dtype=np.intp))


def reshape(a, shape):
    return _call("reshape", a, shape=tuple(shape))


def broadcast_to(a, shape):
    return _call("broadcast_to", a, shape=tuple(shape))


def sigmoid(a):
    return _call("sigmoid", a)


def tanh(a):
    return _call("tanh", a)


def relu(a):
    return _call("relu", a)


def leaky_relu(a, slope=LEAKY_SLOPE):
    return _call("leaky_relu", a, slope=slope)


def abs_(a):
    return _call("abs", a)


def sum_(a, axis=None, keepdims=False):
    return _call("sum", a, axis=axis, keepdims=keepdims)


def mean(a, axis=None, keepdims=False):
    return _call("mean", a, axis=axis, keepdims=keepdims)


def activation(name, x):
    if name == "sigmoid":
        return sigmoid(x)
    if name == "tanh":
        return tanh(x)
    if name == "relu":
        return relu(x)
    if name in ("leaky_relu", "leaky-relu", "leakyrelu"):
        return leaky_relu(x)
    raise ConfigError(f"unknown activation {name!r}; expected one of {ACTIVATIONS}")


def softmax_rows(m):
    """Softmax over the last axis with per-row max subtraction."""
    shape = np.shape(value(m))
    if len(shape) == 0 or 0 in shape:
        raise ShapeError("softmax_rows of an empty tensor")
    return _call("softmax_rows", m)


def gamma_map(w, v):
    """Row-wise Khatri-Rao expansion.

    For ``w`` of shape (..., N, a) and ``v`` of shape (..., N, b) returns
    (..., N, a*b) whose column ``k*b + l`` is ``w[:, k] * v[:, l]``, so that
    ``gamma_map(wi, vi) @ gamma_map(wj, vj).T == (wi @ wj.T) * (vi @ vj.T)``.
    """
    sw, sv = np.shape(value(w)), np.shape(value(v))
    if len(sw) != len(sv) or sw[:-1] != sv[:-1]:
        raise ShapeError(f"gamma_map row mismatch: {sw} vs {sv}")
    if len(sw) not in (2, 3):
        raise ShapeError("gamma_map takes rank-2 or batched rank-3 inputs")
    return _call("gamma_map", w, v)


def rowmat(u, w, mode):
    """Per-row vector-matrix product.

    ``u`` is (B, N, I).  With ``mode="node"`` ``w`` is (N, I, O) and row n of
    every batch uses ``w[n]``; with ``mode="batch"`` ``w`` is (B, I, O) and
    every row of batch b uses ``w[b]``.
    """
    su, sw = np.shape(value(u)), np.shape(value(w))
    lead = su[1] if mode == "node" else su[0]
    if len(su) != 3 or len(sw) != 3 or sw[0] != lead or sw[1] != su[2]:
        raise ShapeError(f"rowmat({mode}) shapes {su} and {sw} do not conform")
    return _call("rowmat", u, w, mode=mode)


def straight_through(received, local):
    """Value of ``received`` with gradients routed into ``local``."""
    if np.shape(value(received)) != np.shape(value(local)):
        raise ShapeError("straight_through operands differ in shape")
    return _call("straight_through", received, local)
