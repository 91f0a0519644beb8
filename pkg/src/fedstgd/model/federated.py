"""Client-side computation of the decomposed graph convolution.

The cross-client aggregation ``sum_j A_ij I_kj`` is approximated by

    L_ki = eta * Phi_i (sum_j Phi_j^T I_kj) + G_i (sum_j G_j^T I_kj)

with ``Phi`` the affinity-MLP features, ``G = gamma_map(Phi, E_aug)``.  Each
client only ever reveals the two bracketed per-client sums, whose row counts
are ``phi_width`` and ``phi_width * psi_width`` regardless of its node count.

``client_forward`` is a generator: it yields ``(t, k, P, Q)`` share arrays
and expects the aggregated ``(sum_P, sum_Q)`` to be sent back.  Whoever
drives it decides how shares travel (lockstep in-process, or a transport).
"""
import numpy as np

from .. import ops
from ..errors import ShapeError
from . import cell


def affinity_features(x, p, cfg):
    """Per-node affinity features, rows on the probability simplex."""
    xv = ops.value(x)
    if cfg.mode == "static_inter":
        return ops.softmax_rows(np.zeros(xv.shape[:-1] + (cfg.d_phi,)))
    if cfg.mode == "static_all":
        return np.ones(xv.shape[:-1] + (1,))
    pre = ops.add(ops.matmul(x, p["W_mlp"]), p["b_mlp"])
    return ops.softmax_rows(ops.activation(cfg.activation, pre))


def augment_embedding(e_node, p, cfg):
    if cfg.mode == "no_gnea":
        return ops.softmax_rows(e_node)
    pre = ops.add(ops.matmul(e_node, p["W_nl"]), p["b_nl"])
    return ops.softmax_rows(ops.activation(cfg.activation, pre))


# test hook: when True, Q shares are built from Gamma with its columns in
# l-major order while the local combine keeps k-major order
SHARE_GAMMA_TRANSPOSED = False


def _share_gamma(gam, a, c):
    if not SHARE_GAMMA_TRANSPOSED:
        return gam
    shape = np.shape(ops.value(gam))
    g4 = ops.reshape(gam, shape[:-1] + (a, c))
    return ops.reshape(ops.transpose(g4), shape)


def p_share(phi, inp):
    return ops.matmul(ops.transpose(phi), inp)


def q_share(phi, e_aug, inp, gamma=None):
    if gamma is None:
        gamma = ops.gamma_map(phi, e_aug)
    return ops.matmul(ops.transpose(gamma), inp)


def combine_l(phi, e_aug, eta, sum_p, sum_q, gamma=None):
    if gamma is None:
        gamma = ops.gamma_map(phi, e_aug)
    nd = np.ndim(ops.value(phi))
    p_part = ops.mul(cell._as_batch_scalar(eta, nd), ops.matmul(phi, sum_p))
    return ops.add(p_part, ops.matmul(gamma, sum_q))


def client_gate_update(l1, l2, emb, h_prev, p):
    """Gate algebra for one client given both aggregated inputs.

    ``l2`` must have been formed from the reset gate this same ``l1``
    produces; the protocol interleaves the two (see ``client_forward``).
    """
    z, _ = cell.update_gates(l1, emb, p)
    return cell.blend(z, h_prev, cell.candidate(l2, emb, p))


def _batched_aug(e_aug, bsz):
    ev = ops.value(e_aug)
    return ops.broadcast_to(e_aug, (bsz,) + ev.shape)


def client_forward(p, e_node, x, slots, cfg, trace=None):
    """Generator over one client's forward pass for a batch of windows.

    ``x`` is (B, T_in, N_i, d) and ``slots`` (B, T_in) integer time slots.
    Returns the prediction (B, N_i, T_out * d).
    """
    x = np.asarray(x, dtype=np.float64)
    slots = np.asarray(slots)
    bsz, t_in, n, _ = x.shape
    e_aug = augment_embedding(e_node, p, cfg) if cfg.exchanges else None
    gates = cell.prepare_gates(e_node, p)
    h = np.zeros((bsz, n, cfg.hidden))
    for t in range(t_in):
        xt = x[:, t]
        now, prev = cell.time_rows(p, slots[:, t], cfg.steps_per_day)
        eta = cell.trend_factor(now, prev)
        phi = gam = None
        if cfg.exchanges:
            phi = affinity_features(xt, p, cfg)
            gam = ops.gamma_map(phi, _batched_aug(e_aug, bsz))

        def collective(k, inp):
            if not cfg.exchanges:
                return inp
            ps = p_share(phi, inp)
            qs = q_share(phi, None, inp, gamma=_share_gamma(gam, cfg.phi_width, cfg.psi_width))
            sum_p, sum_q = yield (t, k, np.array(ops.value(ps)), np.array(ops.value(qs)))
            # own share keeps its gradient path; other clients' parts are constants
            ps = ops.straight_through(sum_p, ps)
            qs = ops.straight_through(sum_q, qs)
            return combine_l(phi, None, eta, ps, qs, gamma=gam)

        l1 = yield from collective(1, cell.gru_inputs(xt, h))
        z, r = cell.update_gates(l1, now, gates)
        l2 = yield from collective(2, cell.gru_inputs(xt, h, r))
        h_cand = cell.candidate(l2, now, gates)
        h = cell.blend(z, h, h_cand)
        if trace is not None:
            trace.append({"L1": ops.value(l1), "L2": ops.value(l2), "z": ops.value(z),
                          "r": ops.value(r), "h_cand": ops.value(h_cand), "h": ops.value(h)})
    return cell.readout(h, p)


def approx_adjacency(phi, e_aug, eta, blocks=None):
    """Monolithic (Phi Phi^T) * (E_aug E_aug^T + eta), optionally block-masked.

    ``blocks`` is a list of node index arrays; when given, only entries
    within the same block survive (the intra-client-only ablation).
    """
    pp = ops.matmul(phi, ops.transpose(phi))
    ee = ops.matmul(e_aug, ops.transpose(e_aug))
    nd = np.ndim(ops.value(pp))
    adj = ops.mul(pp, ops.add(ee, cell._as_batch_scalar(eta, nd)))
    if blocks is not None:
        n = np.shape(ops.value(pp))[-1]
        mask = np.zeros((n, n))
        for idx in blocks:
            mask[np.ix_(idx, idx)] = 1.0
        adj = ops.mul(adj, mask)
    return adj


def central_forward(p, e_node, x, slots, cfg, adjacency="approx", blocks=None, trace=None):
    """Whole-graph forward pass.

    ``adjacency="exact"`` uses the original gated dynamic adjacency;
    ``"approx"`` builds the matrix the federated protocol implicitly applies,
    so it is the monolithic reference for the distributed computation.
    """
    x = np.asarray(x, dtype=np.float64)
    slots = np.asarray(slots)
    bsz, t_in, n, _ = x.shape
    h = np.zeros((bsz, n, cfg.hidden))
    if adjacency == "exact":
        a_node = cell.self_adjacency(e_node)
    elif adjacency == "approx":
        e_aug = augment_embedding(e_node, p, cfg) if cfg.exchanges else None
    else:
        raise ValueError(f"adjacency must be 'exact' or 'approx', got {adjacency!r}")
    if cfg.mode != "intra_only":
        blocks = None
    gates = cell.prepare_gates(e_node, p)
    for t in range(t_in):
        xt = x[:, t]
        now, prev = cell.time_rows(p, slots[:, t], cfg.steps_per_day)
        eta = cell.trend_factor(now, prev)
        if not cfg.exchanges:
            adj = None
        elif adjacency == "exact":
            adj = cell.dynamic_adjacency(a_node, cell.periodic_discriminant(xt), eta, cfg.alpha)
        else:
            adj = approx_adjacency(affinity_features(xt, p, cfg), e_aug, eta, blocks)
        h = cell.cell_step_central(adj, xt, h, now, gates, trace)
    return cell.readout(h, p)


def forecast(window, p, e_node, cfg, start_slot=0, adjacency="exact"):
    """Forecast for a single window (T_in, N, d) -> (T_out, N, d)."""
    window = np.asarray(window, dtype=np.float64)
    t_in, n, d = window.shape
    if t_in != cfg.t_in:
        raise ShapeError(f"window has {t_in} steps, model expects {cfg.t_in}")
    slots = (start_slot + np.arange(t_in))[None]
    y = ops.value(central_forward(p, e_node, window[None], slots, cfg, adjacency))
    return y[0].reshape(n, cfg.t_out, d).transpose(1, 0, 2)


def frames_to_rows(y):
    """(B, T_out, N, d) targets -> (B, N, T_out * d), the readout layout."""
    y = np.asarray(y)
    b, t_out, n, d = y.shape
    return y.transpose(0, 2, 1, 3).reshape(b, n, t_out * d)


def rows_to_frames(pred, t_out):
    """Inverse of :func:`frames_to_rows`."""
    pred = np.asarray(pred)
    b, n, td = pred.shape
    return pred.reshape(b, n, t_out, td // t_out).transpose(0, 2, 1, 3)
