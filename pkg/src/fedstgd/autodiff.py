"""Tape-based reverse-mode differentiation over a closed primitive set.

A :class:`Tape` records every primitive application as ``(primitive, input
ids, attributes)``.  Leaves are either named parameters (which receive
gradients) or constants (which never do).  ``backward`` walks the records
in reverse; ``replay`` re-executes them, optionally with substituted
parameter values, which is also what the finite-difference checker uses.
"""
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .errors import NumericError, ShapeError, UsageError


@dataclass(frozen=True)
class Primitive:
    name: str
    forward: object
    vjp: object  # (g, out, *inputs, **attrs) -> tuple of grads or None


PRIMITIVES = {}


def defprim(name, forward, vjp):
    PRIMITIVES[name] = Primitive(name, forward, vjp)
    return PRIMITIVES[name]


@dataclass
class Record:
    prim: Primitive
    inputs: tuple
    attrs: dict = field(default_factory=dict)
    out: int = -1


class Var:
    """A value living on a tape."""

    __slots__ = ("tape", "id", "value")
    __array_priority__ = 100

    def __init__(self, tape, id_, value):
        self.tape = tape
        self.id = id_
        self.value = value

    @property
    def shape(self):
        return self.value.shape

    @property
    def ndim(self):
        return self.value.ndim

    def __repr__(self):
        return f"Var(id={self.id}, shape={self.value.shape})"

    def __add__(self, other):
        from . import ops
        return ops.add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        from . import ops
        return ops.sub(self, other)

    def __rsub__(self, other):
        from . import ops
        return ops.sub(other, self)

    def __mul__(self, other):
        from . import ops
        if np.isscalar(other):
            return ops.scale(self, float(other))
        return ops.mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        from . import ops
        return ops.scale(self, -1.0)

    def __matmul__(self, other):
        from . import ops
        return ops.matmul(self, other)

    def __rmatmul__(self, other):
        from . import ops
        return ops.matmul(other, self)

    @property
    def T(self):
        from . import ops
        return ops.transpose(self)


class Tape:
    def __init__(self):
        self.values = []
        self.records = []
        self._producer = {}
        self._param_ids = {}
        self._needs_grad = []

    def __len__(self):
        return len(self.values)

    def _new(self, value, needs_grad):
        self.values.append(value)
        self._needs_grad.append(needs_grad)
        return Var(self, len(self.values) - 1, value)

    def param(self, value, name):
        if name in self._param_ids:
            raise UsageError(f"duplicate parameter name {name!r}")
        value = np.asarray(value, dtype=np.float64)
        var = self._new(value, True)
        self._param_ids[name] = var.id
        return var

    def const(self, value):
        return self._new(np.asarray(value, dtype=np.float64), False)

    def lift(self, x):
        if isinstance(x, Var):
            if x.tape is not self:
                raise UsageError("value belongs to a different tape")
            return x
        return self.const(x)

    @property
    def param_names(self):
        return list(self._param_ids)

    def apply(self, prim, inputs, attrs):
        out = prim.forward(*(v.value for v in inputs), **attrs)
        needs = any(self._needs_grad[v.id] for v in inputs)
        var = self._new(out, needs)
        rec = Record(prim, tuple(v.id for v in inputs), attrs, var.id)
        self.records.append(rec)
        self._producer[var.id] = rec
        return var

    def backward(self, loss):
        """Gradients of scalar ``loss`` w.r.t. every named parameter."""
        if not isinstance(loss, Var) or loss.tape is not self:
            raise UsageError("loss is not a node of this tape")
        if loss.value.size != 1:
            raise UsageError(f"loss must be scalar, got shape {loss.value.shape}")
        grads = {loss.id: np.ones_like(loss.value)}
        owned = set()  # buffers allocated here, safe to accumulate into in place
        for rec in reversed(self.records):
            g = grads.pop(rec.out, None)
            if g is None or not self._needs_grad[rec.out]:
                continue
            if rec.prim.name == "slice":
                # scatter straight into the input's gradient buffer
                (i,) = rec.inputs
                if not self._needs_grad[i]:
                    continue
                if i not in owned:
                    buf = np.zeros_like(self.values[i])
                    if i in grads:
                        buf += grads[i]
                    grads[i] = buf
                    owned.add(i)
                idx = [slice(None)] * self.values[i].ndim
                idx[rec.attrs["axis"]] = slice(rec.attrs["start"], rec.attrs["stop"])
                grads[i][tuple(idx)] += g
                continue
            ins = [self.values[i] for i in rec.inputs]
            parts = rec.prim.vjp(g, self.values[rec.out], *ins, **rec.attrs)
            for i, gi in zip(rec.inputs, parts):
                if gi is None or not self._needs_grad[i]:
                    continue
                if i in owned:
                    grads[i] += gi
                elif i in grads:
                    grads[i] = grads[i] + gi
                    owned.add(i)
                else:
                    grads[i] = gi
        out = {}
        for name, pid in self._param_ids.items():
            g = grads.get(pid)
            out[name] = np.zeros_like(self.values[pid]) if g is None else g
        return out

    def replay(self, overrides=None):
        """Re-execute all records; returns the full list of node values.

        ``overrides`` maps parameter names to replacement values.
        """
        values = list(self.values)
        if overrides:
            for name, val in overrides.items():
                pid = self._param_ids[name]
                val = np.asarray(val, dtype=np.float64)
                if val.shape != values[pid].shape:
                    raise ShapeError(f"override for {name} has shape {val.shape}")
                values[pid] = val
        for rec in self.records:
            values[rec.out] = rec.prim.forward(
                *(values[i] for i in rec.inputs), **rec.attrs)
        return values


def finite_diff_check(f, params, eps=1e-5, max_coords=None, seed=0):
    """Max relative error between tape gradients and central differences.

    ``f(tape, vars)`` receives a dict of parameter Vars on a fresh tape and
    must return a scalar Var.  ``max_coords`` optionally samples that many
    coordinates per parameter instead of checking every one.
    """
    if not eps > 0:
        raise UsageError("eps must be positive")
    tape = Tape()
    pvars = {k: tape.param(v, k) for k, v in params.items()}
    loss = f(tape, pvars)
    if not np.all(np.isfinite(loss.value)):
        raise NumericError("non-finite loss in finite_diff_check")
    analytic = tape.backward(loss)
    rng = np.random.default_rng(seed)
    worst = 0.0
    for name, base in params.items():
        base = np.asarray(base, dtype=np.float64)
        coords = np.arange(base.size)
        if max_coords is not None and base.size > max_coords:
            coords = rng.choice(base.size, size=max_coords, replace=False)
        ga = analytic[name].ravel()
        for c in coords:
            bumped = base.copy().ravel()
            bumped[c] += eps
            up = tape.replay({name: bumped.reshape(base.shape)})[loss.id]
            bumped[c] -= 2 * eps
            dn = tape.replay({name: bumped.reshape(base.shape)})[loss.id]
            if not (np.all(np.isfinite(up)) and np.all(np.isfinite(dn))):
                raise NumericError(f"non-finite loss while perturbing {name}[{c}]")
            numeric = float((up - dn).sum()) / (2 * eps)
            err = abs(float(ga[c]) - numeric) / max(1.0, abs(numeric))
            worst = max(worst, err)
    return worst


# ------------------------------------------------------------------ helpers

def unbroadcast(g, shape):
    """Sum ``g`` down to ``shape`` after numpy broadcasting."""
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def _as3(x):
    return x if x.ndim == 3 else x[None]


# --------------------------------------------------------------- primitives

def _matmul_vjp(g, out, a, b):
    ga = np.matmul(g, np.swapaxes(b, -1, -2))
    gb = np.matmul(np.swapaxes(a, -1, -2), g)
    return unbroadcast(ga, a.shape), unbroadcast(gb, b.shape)


defprim("matmul", np.matmul, _matmul_vjp)
defprim(
    "transpose",
    lambda a: np.swapaxes(a, -1, -2),
    lambda g, out, a: (np.swapaxes(g, -1, -2),),
)
defprim(
    "add",
    np.add,
    lambda g, out, a, b: (unbroadcast(g, a.shape), unbroadcast(g, b.shape)),
)
defprim(
    "sub",
    np.subtract,
    lambda g, out, a, b: (unbroadcast(g, a.shape), unbroadcast(-g, b.shape)),
)
defprim(
    "mul",
    np.multiply,
    lambda g, out, a, b: (unbroadcast(g * b, a.shape), unbroadcast(g * a, b.shape)),
)
defprim(
    "scale",
    lambda a, c: a * c,
    lambda g, out, a, c: (g * c,),
)


def _concat_vjp(g, out, *xs, axis):
    bounds = np.cumsum([x.shape[axis] for x in xs])[:-1]
    return tuple(np.split(g, bounds, axis=axis))


defprim("concat", lambda *xs, axis: np.concatenate(xs, axis=axis), _concat_vjp)


def _slice_fwd(a, axis, start, stop):
    idx = [slice(None)] * a.ndim
    idx[axis] = slice(start, stop)
    return a[tuple(idx)]


def _slice_vjp(g, out, a, axis, start, stop):
    full = np.zeros_like(a)
    idx = [slice(None)] * a.ndim
    idx[axis] = slice(start, stop)
    full[tuple(idx)] = g
    return (full,)


defprim("slice", _slice_fwd, _slice_vjp)


def _take_vjp(g, out, a, index):
    full = np.zeros_like(a)
    np.add.at(full, index, g)
    return (full,)


defprim("take", lambda a, index: a[index], _take_vjp)
defprim(
    "reshape",
    lambda a, shape: a.reshape(shape),
    lambda g, out, a, shape: (g.reshape(a.shape),),
)
defprim(
    "broadcast_to",
    lambda a, shape: np.broadcast_to(a, shape).copy(),
    lambda g, out, a, shape: (unbroadcast(g, a.shape),),
)


def _sigmoid(x):
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    e = np.exp(x[~pos])
    out[~pos] = e / (1.0 + e)
    return out


defprim("sigmoid", _sigmoid, lambda g, out, a: (g * out * (1.0 - out),))
defprim("tanh", np.tanh, lambda g, out, a: (g * (1.0 - out * out),))
defprim(
    "relu",
    lambda a: np.maximum(a, 0.0),
    lambda g, out, a: (g * (a > 0),),
)
defprim(
    "leaky_relu",
    lambda a, slope: np.where(a > 0, a, slope * a),
    lambda g, out, a, slope: (np.where(a > 0, g, slope * g),),
)
defprim("abs", np.abs, lambda g, out, a: (g * np.sign(a),))


def _softmax_fwd(a):
    x = np.ascontiguousarray(_as3(a))
    return kernels.active().softmax(x).reshape(a.shape)


def _softmax_vjp(g, out, a):
    gx = np.ascontiguousarray(_as3(g))
    s = np.ascontiguousarray(_as3(out))
    return (kernels.active().softmax_vjp(gx, s).reshape(a.shape),)


defprim("softmax_rows", _softmax_fwd, _softmax_vjp)


def _gamma_fwd(w, v):
    out = kernels.active().gamma(
        np.ascontiguousarray(_as3(w)), np.ascontiguousarray(_as3(v)))
    return out if w.ndim == 3 else out[0]


def _gamma_vjp(g, out, w, v):
    gw, gv = kernels.active().gamma_vjp(
        np.ascontiguousarray(_as3(g)),
        np.ascontiguousarray(_as3(w)),
        np.ascontiguousarray(_as3(v)))
    if w.ndim == 2:
        gw, gv = gw[0], gv[0]
    return gw, gv


defprim("gamma_map", _gamma_fwd, _gamma_vjp)


def _rowmat_w4(w, mode):
    return w[None] if mode == "node" else w[:, None]


def _rowmat_fwd(u, w, mode):
    return kernels.active().rowmat(
        np.ascontiguousarray(u), np.ascontiguousarray(_rowmat_w4(w, mode)))


def _rowmat_vjp(g, out, u, w, mode):
    gu, gw = kernels.active().rowmat_vjp(
        np.ascontiguousarray(g), np.ascontiguousarray(u),
        np.ascontiguousarray(_rowmat_w4(w, mode)))
    return gu, gw.reshape(w.shape)


defprim("rowmat", _rowmat_fwd, _rowmat_vjp)


def _sum_vjp(g, out, a, axis, keepdims):
    if axis is not None and not keepdims:
        g = np.expand_dims(g, axis)
    return (np.broadcast_to(g, a.shape).copy(),)


defprim("sum", lambda a, axis, keepdims: np.sum(a, axis=axis, keepdims=keepdims), _sum_vjp)


def _mean_vjp(g, out, a, axis, keepdims):
    n = a.size if axis is None else np.prod([a.shape[x] for x in np.atleast_1d(axis)])
    (full,) = _sum_vjp(g, out, a, axis, keepdims)
    return (full / n,)


defprim("mean", lambda a, axis, keepdims: np.mean(a, axis=axis, keepdims=keepdims), _mean_vjp)

# Forward value comes from the first input (a received aggregate); the
# gradient is routed to the second (this client's own contribution).
defprim(
    "straight_through",
    lambda const, local: const,
    lambda g, out, const, local: (None, g),
)
