"""The dynamic-adjacency graph GRU cell and its centralized forward passes.

Shapes: node signals are (B, N, d); hidden state (B, N, hidden).  Single
unbatched (N, d) inputs work for the adjacency helpers.
"""
from dataclasses import dataclass

import numpy as np

from .. import ops
from ..errors import ShapeError
from .params import GATES


def _gram(a):
    g = ops.matmul(a, ops.transpose(a))
    # averaging with the transpose makes the result symmetric to the bit
    return ops.scale(ops.add(g, ops.transpose(g)), 0.5)


def self_adjacency(e_node):
    return _gram(e_node)


def trend_factor(e_now, e_prev):
    if np.shape(ops.value(e_now)) != np.shape(ops.value(e_prev)):
        raise ShapeError("time embedding rows differ in shape")
    return ops.sum_(ops.mul(e_now, e_prev), axis=-1)


def periodic_discriminant(x):
    return ops.tanh(_gram(x))


def _as_batch_scalar(eta, ndim):
    """Reshape a scalar or (B,) factor for broadcasting against rank-``ndim``."""
    n = np.ndim(ops.value(eta))
    if n == 0:
        return eta
    return ops.reshape(eta, np.shape(ops.value(eta)) + (1,) * (ndim - n))


def dynamic_adjacency(a_node, a_rho, eta, alpha):
    gate = ops.add(1.0, ops.scale(ops.sigmoid(a_rho), alpha))
    nd = max(np.ndim(ops.value(a_rho)), np.ndim(ops.value(a_node)))
    return ops.mul(gate, ops.add(a_node, _as_batch_scalar(eta, nd)))


@dataclass
class SplitEmbedding:
    """Joint embedding kept as its node part (N, d_node) and time part (B, d_time).

    Mathematically equal to ``joint_embedding(node, time)`` but lets the
    node-adaptive weights be generated once per node and once per sample.
    """
    node: object
    time: object

    def full(self):
        return joint_embedding(self.node, self.time, batched=True)


@dataclass
class GateWeights:
    """Node-adaptive weights of one gate, pre-split for a recurrent pass.

    ``node_w`` (N, d_in, out) and ``node_b`` (N, out) are generated once from
    the node embeddings; the time halves stay as generator slices and are
    combined with each step's time-embedding rows.
    """
    node_w: object
    node_b: object
    time_w: object
    time_b: object


def prepare_gate(e_node, w, b):
    d_e, d_in, d_out = np.shape(ops.value(w))
    n, dn = np.shape(ops.value(e_node))
    w2 = ops.reshape(w, (d_e, d_in * d_out))
    node_w = ops.reshape(ops.matmul(e_node, ops.slice_(w2, 0, dn, axis=0)), (n, d_in, d_out))
    node_b = ops.matmul(e_node, ops.slice_(b, 0, dn, axis=0))
    return GateWeights(node_w, node_b, ops.slice_(w2, dn, d_e, axis=0),
                       ops.slice_(b, dn, d_e, axis=0))


def apply_gate(u, gw, e_time):
    """Node-adaptive affine map for one step; ``e_time`` is (B, d_time)."""
    bsz = np.shape(ops.value(u))[0]
    _, d_in, d_out = np.shape(ops.value(gw.node_w))
    time_w = ops.reshape(ops.matmul(e_time, gw.time_w), (bsz, d_in, d_out))
    out = ops.add(ops.rowmat(u, gw.node_w, "node"), ops.rowmat(u, time_w, "batch"))
    out = ops.add(out, gw.node_b)
    return ops.add(out, ops.reshape(ops.matmul(e_time, gw.time_b), (bsz, 1, d_out)))


def joint_embedding(e_node, e_time, batched=False):
    """Rows ``[e_node[n] || e_time]``.

    Unbatched, ``e_time`` is one row (d_time,) or (1, d_time) and the result
    is (N, d_node + d_time).  Batched, ``e_time`` is (B, d_time) and the
    result is (B, N, d_node + d_time).
    """
    en = ops.value(e_node)
    et = ops.value(e_time)
    n, dn = en.shape
    if not batched:
        if et.size != et.shape[-1]:
            raise ShapeError("unbatched joint_embedding takes a single time row")
        et_b = ops.broadcast_to(ops.reshape(e_time, (1, et.shape[-1])), (n, et.shape[-1]))
        return ops.concat([e_node, et_b], axis=-1)
    b = et.shape[0]
    node_b = ops.broadcast_to(e_node, (b, n, dn))
    time_b = ops.broadcast_to(ops.reshape(e_time, (b, 1, et.shape[1])), (b, n, et.shape[1]))
    return ops.concat([node_b, time_b], axis=-1)


def node_adaptive(u, emb, w, b):
    """Node-adaptive affine map: row n gives ``u[n] @ (emb[n] . W) + emb[n] @ b``.

    ``w`` is (d_embed, d_in, out) and ``b`` is (d_embed, out).  ``emb`` is a
    :class:`SplitEmbedding` or a full (B, N, d_embed) array.
    """
    if isinstance(emb, SplitEmbedding):
        return apply_gate(u, prepare_gate(emb.node, w, b), emb.time)
    d_e, d_in, d_out = np.shape(ops.value(w))
    bsz, n, _ = np.shape(ops.value(u))
    w2 = ops.reshape(w, (d_e, d_in * d_out))
    ev = ops.value(emb)
    if ev.ndim == 2:
        emb = ops.broadcast_to(emb, (bsz,) + ev.shape)
    flat = ops.reshape(emb, (bsz * n, d_e))
    w_rows = ops.reshape(ops.matmul(flat, w2), (bsz * n, d_in, d_out))
    out = ops.rowmat(ops.reshape(u, (1, bsz * n, d_in)), w_rows, "node")
    return ops.add(ops.reshape(out, (bsz, n, d_out)), ops.matmul(emb, b))


def prepare_gates(e_node, p):
    return {g: prepare_gate(e_node, p[f"W_{g}"], p[f"b_{g}"]) for g in GATES}


def _gate(u, emb, p, g):
    if isinstance(p, dict) and "W_" + g in p:
        return node_adaptive(u, emb, p[f"W_{g}"], p[f"b_{g}"])
    return apply_gate(u, p[g], emb)


def update_gates(l1, emb, p):
    """Update and reset gates.

    Either ``p`` holds the raw parameters and ``emb`` is any embedding form,
    or ``p`` is the output of :func:`prepare_gates` and ``emb`` is the
    step's (B, d_time) time rows.
    """
    z = ops.sigmoid(_gate(l1, emb, p, "z"))
    r = ops.sigmoid(_gate(l1, emb, p, "r"))
    return z, r


def candidate(l2, emb, p):
    return ops.tanh(_gate(l2, emb, p, "h"))


def blend(z, h_prev, h_cand):
    return ops.add(ops.mul(ops.sub(1.0, z), h_prev), ops.mul(z, h_cand))


def gru_inputs(x, h_prev, r=None):
    """``[x || h]`` or, with the reset gate, ``[x || r * h]``."""
    if r is None:
        return ops.concat([x, h_prev], axis=-1)
    return ops.concat([x, ops.mul(r, h_prev)], axis=-1)


def cell_step_central(adj, x, h_prev, emb, p, trace=None):
    """One recurrent step driven by a full adjacency ``adj`` (B, N, N).

    ``adj=None`` skips graph aggregation entirely (the no-spatial ablation).
    """
    i1 = gru_inputs(x, h_prev)
    l1 = i1 if adj is None else ops.matmul(adj, i1)
    z, r = update_gates(l1, emb, p)
    i2 = gru_inputs(x, h_prev, r)
    l2 = i2 if adj is None else ops.matmul(adj, i2)
    h_cand = candidate(l2, emb, p)
    h = blend(z, h_prev, h_cand)
    if trace is not None:
        trace.append({"L1": ops.value(l1), "L2": ops.value(l2), "z": ops.value(z),
                      "r": ops.value(r), "h_cand": ops.value(h_cand), "h": ops.value(h)})
    return h


def readout(h, p):
    return ops.add(ops.matmul(h, p["W_out"]), p["b_out"])


def time_rows(p, slots, steps_per_day):
    """Current and previous time-embedding rows for integer ``slots`` (B,)."""
    slots = np.asarray(slots, dtype=np.intp)
    now = ops.take(p["E_time"], slots % steps_per_day)
    prev = ops.take(p["E_time"], (slots - 1) % steps_per_day)
    return now, prev
