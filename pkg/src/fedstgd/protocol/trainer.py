"""Federated and centralized training loops."""
import time
from dataclasses import dataclass, field

import numpy as np

from .. import ops
from ..autodiff import Tape
from ..model import federated as fed
from ..model.params import flatten, init_node_embeddings, init_params, param_shapes, unflatten
from ..transport import connect
from .collective import run_lockstep
from .fedavg import fedavg
from .optim import Adam, BatchSchedule, OptimConfig
from .runtime import (PRIVATE, ClientNode, RoundStats, Server, _check_finite, client_loop,
                      drive_client, mae_loss, run_threads, serve_collectives)


@dataclass
class TrainSettings:
    rounds: int = 30
    local_rounds: int = 40
    seed: int = 0
    transport: str = "memory"
    timeout: float = 120.0
    optim: OptimConfig = field(default_factory=OptimConfig)


@dataclass
class TrainResult:
    params: dict
    e_node: np.ndarray  # (N, d_node), rows in global node order
    stats: list


def _initial_state(cfg, num_nodes, seed):
    return init_params(cfg, seed), init_node_embeddings(cfg, num_nodes, seed)


def train_federated(train, parts, cfg, settings, step_hook=None, tap=None, on_round=None,
                    init=None):
    """Train with one thread per client exchanging frames with the server.

    ``train`` holds windows over all nodes; each client only ever touches
    its own node columns.  ``tap(cid, direction, frame)`` observes every
    frame at the server.  Returns the averaged shared parameters and the
    clients' private embeddings stacked in node order.
    """
    params, e_node = init if init is not None else _initial_state(
        cfg, sum(len(p) for p in parts), settings.seed)
    schedule = BatchSchedule(len(train), settings.optim.batch_size, settings.seed)
    clients = [ClientNode(cid, idx, cfg, params, e_node[idx], train.nodes(idx), schedule,
                          settings.optim, max(1, settings.local_rounds), step_hook)
               for cid, idx in enumerate(parts)]
    if settings.transport == "inproc":
        return _train_inproc(clients, parts, cfg, settings, params, e_node, on_round)
    server_eps, client_eps = connect(settings.transport, len(parts), settings.timeout)
    if tap is not None:
        for cid, ep in enumerate(server_eps):
            ep.tap = lambda d, f, cid=cid: tap(cid, d, f)
    server = Server(server_eps, cfg, [c.num_nodes for c in clients], flatten(params, cfg),
                    settings.local_rounds)

    def coordinate():
        stats = []
        for _ in range(settings.rounds):
            stats.append(server.global_round())
            if on_round is not None:
                on_round(stats[-1])
        return stats

    targets = [lambda ep, c=c: client_loop(c, ep, settings.rounds, settings.local_rounds)
               for c in clients]
    stats = run_threads(targets, server_eps, client_eps, coordinate)
    e_full = np.empty_like(e_node)
    for c in clients:
        e_full[c.nodes] = c.e_node
    return TrainResult(unflatten(server.theta, cfg), e_full, stats)


def _train_inproc(clients, parts, cfg, settings, params, e_node, on_round):
    # same client state machines, driven in lockstep without any transport
    theta = flatten(params, cfg)
    counts = [c.num_nodes for c in clients]
    stats = []
    for rg in range(settings.rounds):
        t0 = time.perf_counter()
        losses = []
        for c in clients:
            c.set_globals(theta)
        for _ in range(settings.local_rounds):
            outs = run_lockstep([c.begin_local_round() for c in clients],
                                intra_only=cfg.mode == "intra_only")
            losses.append([c.finish_local_round(o) for c, o in zip(clients, outs)])
        theta = fedavg([c.globals_vector() for c in clients], counts)
        loss = fedavg(list(np.mean(losses, axis=0)), counts) if losses else float("nan")
        stats.append(RoundStats(rg, float(loss), seconds=time.perf_counter() - t0))
        if on_round is not None:
            on_round(stats[-1])
    e_full = np.empty_like(e_node)
    for c in clients:
        e_full[c.nodes] = c.e_node
    return TrainResult(unflatten(theta, cfg), e_full, stats)


def train_central(train, cfg, settings, adjacency="approx", blocks=None, steps_per_epoch=None,
                  step_hook=None, on_round=None, init=None):
    """Whole-graph training with the same optimizer and batch schedule.

    Runs ``rounds * local_rounds`` steps; a log record is emitted every
    ``local_rounds`` steps so the output lines up with federated rounds.
    """
    num_nodes = train.x.shape[2]
    params, e_node = init if init is not None else _initial_state(cfg, num_nodes, settings.seed)
    params = {k: np.array(v) for k, v in params.items()}
    e_node = np.array(e_node)
    schedule = BatchSchedule(len(train), settings.optim.batch_size, settings.seed)
    per_round = max(1, settings.local_rounds)
    opt = Adam(settings.optim, steps_per_epoch or per_round)
    stats, step = [], 0
    for rg in range(settings.rounds):
        t0 = time.perf_counter()
        losses = []
        for _ in range(settings.local_rounds):
            batch = train.take(schedule.batch(step))
            tape = Tape()
            pv = {name: tape.param(params[name], name) for name, _ in param_shapes(cfg)}
            ev = tape.param(e_node, PRIVATE)
            pred = fed.central_forward(pv, ev, batch.x, batch.slots, cfg, adjacency, blocks)
            loss = mae_loss(pred, batch.y)
            grads = tape.backward(loss)
            lv = float(ops.value(loss))
            _check_finite(lv, grads, f"central step {step}")
            store = dict(params)
            store[PRIVATE] = e_node
            opt.update(store, grads)
            step += 1
            losses.append(lv)
            if step_hook is not None:
                step_hook(0, step, params, e_node)
        stats.append(RoundStats(rg, float(np.mean(losses)) if losses else float("nan"),
                                seconds=time.perf_counter() - t0))
        if on_round is not None:
            on_round(stats[-1])
    return TrainResult(params, e_node, stats)


def distributed_forward(params, e_node, parts, x, slots, cfg, transport="memory",
                        timeout=60.0, tap=None):
    """Forward pass with each client in its own thread talking to a server.

    Returns ``(preds, traces)`` per client, in client order.
    """
    server_eps, client_eps = connect(transport, len(parts), timeout)
    if tap is not None:
        for cid, ep in enumerate(server_eps):
            ep.tap = lambda d, f, cid=cid: tap(cid, d, f)
    x = np.asarray(x)
    preds = [None] * len(parts)
    traces = [[] for _ in parts]

    def client(cid, ep):
        idx = parts[cid]
        gen = fed.client_forward(params, e_node[idx], x[:, :, idx], slots, cfg, traces[cid])
        preds[cid] = ops.value(drive_client(gen, ep, cid, 0, 0, cfg.t_in))

    targets = [lambda ep, cid=cid: client(cid, ep) for cid in range(len(parts))]
    run_threads(targets, server_eps, client_eps,
                lambda: serve_collectives(server_eps, cfg, 0, 0))
    return preds, traces


def stack_clients(per_client, parts, axis):
    """Reassemble per-client arrays (node axis ``axis``) in global node order."""
    n = sum(len(p) for p in parts)
    first = np.asarray(per_client[0])
    shape = list(first.shape)
    shape[axis] = n
    out = np.empty(shape)
    for arr, idx in zip(per_client, parts):
        sl = [slice(None)] * len(shape)
        sl[axis] = idx
        out[tuple(sl)] = arr
    return out


def central_predictor(params, e_node, cfg, adjacency="approx", blocks=None):
    """``predict(x, slots) -> (B, T_out, N, d)`` for the whole graph."""
    def predict(x, slots):
        out = fed.central_forward(params, e_node, x, slots, cfg, adjacency, blocks)
        return fed.rows_to_frames(ops.value(out), cfg.t_out)
    return predict


def federated_predictor(params, e_node, parts, cfg, transport=None, timeout=60.0):
    """Stacked per-client predictions; every client runs its own forward.

    Without ``transport`` the clients are driven in-process in lockstep.
    """
    def predict(x, slots):
        x = np.asarray(x)
        if transport is None:
            gens = [fed.client_forward(params, e_node[idx], x[:, :, idx], slots, cfg)
                    for idx in parts]
            preds = [ops.value(p) for p in run_lockstep(gens, cfg.mode == "intra_only")]
        else:
            preds, _ = distributed_forward(params, e_node, parts, x, slots, cfg,
                                           transport, timeout)
        return fed.rows_to_frames(stack_clients(preds, parts, axis=1), cfg.t_out)
    return predict
