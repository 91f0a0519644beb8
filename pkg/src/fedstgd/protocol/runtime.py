"""Client and server state machines over a message transport.

One global round:

    server  -> PARAM_DOWN            (every client)
    repeat R_l local rounds, each T_in steps x k in {1, 2}:
        client -> P_SHARE, Q_SHARE
        server -> P_SUM, Q_SUM       (after all M shares arrived)
    client  -> PARAM_UP, STATS
    server: FedAvg

Message ``timestep`` is ``local_round * T_in + t`` so every frame of a global
round has a distinct (timestep, k) key.
"""
import threading
import time
from dataclasses import dataclass, field

import numpy as np

from .. import ops
from ..autodiff import Tape
from ..errors import NumericError, ProtocolAbort
from ..model import federated as fed
from ..model.params import flatten, param_shapes, unflatten
from ..transport.codec import MsgType, ProtocolMessage
from .collective import aggregate
from .fedavg import fedavg
from .optim import Adam

PRIVATE = "E_node"


@dataclass
class RoundStats:
    round: int
    train_loss: float
    bytes_up: int = 0
    bytes_down: int = 0
    msgs_up: int = 0
    msgs_down: int = 0
    seconds: float = 0.0
    local_bytes_up: list = field(default_factory=list)
    local_bytes_down: list = field(default_factory=list)

    def record(self):
        return (f"round={self.round} train_loss={self.train_loss:.6g} "
                f"bytes_up={self.bytes_up} bytes_down={self.bytes_down} "
                f"seconds={self.seconds:.3f}")


def mae_loss(pred, y):
    return ops.mean(ops.abs_(ops.sub(pred, fed.frames_to_rows(y))))


def _check_finite(loss, grads, who):
    if not np.isfinite(loss):
        raise NumericError(f"{who}: loss is {loss}")
    for name, g in grads.items():
        if not np.isfinite(g).all():
            raise NumericError(f"{who}: non-finite gradient in {name}")


class ClientNode:
    """Holds one client's private embeddings, its copy of the shared
    parameters, its optimizer state and its slice of the training windows."""

    def __init__(self, cid, nodes, cfg, params, e_node, windows, schedule,
                 optim=None, steps_per_epoch=1, step_hook=None):
        self.id = cid
        self.nodes = np.asarray(nodes)
        self.cfg = cfg
        self.params = {k: np.array(v, dtype=np.float64) for k, v in params.items()}
        self.e_node = np.array(e_node, dtype=np.float64)
        self.windows = windows
        self.schedule = schedule
        self.opt = Adam(optim, steps_per_epoch)
        self.step = 0
        self.step_hook = step_hook
        self._pending = None

    @property
    def num_nodes(self):
        return len(self.nodes)

    def set_globals(self, vec):
        self.params = unflatten(vec, self.cfg)

    def globals_vector(self):
        return flatten(self.params, self.cfg)

    def begin_local_round(self, trace=None):
        """Start a local round; returns the forward generator for a driver."""
        batch = self.windows.take(self.schedule.batch(self.step))
        tape = Tape()
        pv = {name: tape.param(self.params[name], name) for name, _ in param_shapes(self.cfg)}
        ev = tape.param(self.e_node, PRIVATE)
        self._pending = (tape, batch)
        return fed.client_forward(pv, ev, batch.x, batch.slots, self.cfg, trace)

    def finish_local_round(self, pred):
        tape, batch = self._pending
        self._pending = None
        loss = mae_loss(pred, batch.y)
        grads = tape.backward(loss)
        loss = float(ops.value(loss))
        _check_finite(loss, grads, f"client {self.id} step {self.step}")
        store = dict(self.params)
        store[PRIVATE] = self.e_node
        self.opt.update(store, grads)
        self.step += 1
        if self.step_hook is not None:
            self.step_hook(self.id, self.step, self.params, self.e_node)
        return loss


# --------------------------------------------------------------- collectives

def _share_msgs(rg, ts, k, cid, p, q):
    return (ProtocolMessage(MsgType.P_SHARE, rg, ts, k, cid, (p,)),
            ProtocolMessage(MsgType.Q_SHARE, rg, ts, k, cid, (q,)))


def _expect(msg, mtype, rg, cid, ts=None, k=None):
    ok = msg.msg_type == mtype and msg.round == rg and msg.client_id == cid
    if ts is not None:
        ok = ok and msg.timestep == ts and msg.k == k
    if not ok:
        raise ProtocolAbort(f"expected {mtype.name} round={rg} timestep={ts} k={k} "
                            f"client={cid}, got {msg!r}")
    return msg


def drive_client(gen, ep, cid, rg, rl, t_in):
    """Run one forward generator against the server; returns its result."""
    reply = None
    while True:
        try:
            t, k, p, q = next(gen) if reply is None else gen.send(reply)
        except StopIteration as stop:
            return stop.value
        ts = rl * t_in + t
        for msg in _share_msgs(rg, ts, k, cid, p, q):
            ep.send(msg)
        sp = _expect(ep.recv(), MsgType.P_SUM, rg, cid, ts, k)
        sq = _expect(ep.recv(), MsgType.Q_SUM, rg, cid, ts, k)
        reply = (sp.tensors[0], sq.tensors[0])


def serve_collectives(eps, cfg, rg, rl):
    """Server side of every collective round of one local round."""
    if not cfg.exchanges:
        return
    for t in range(cfg.t_in):
        ts = rl * cfg.t_in + t
        for k in (1, 2):
            ps, qs = [], []
            for cid, ep in enumerate(eps):
                ps.append(_expect(ep.recv(), MsgType.P_SHARE, rg, cid, ts, k).tensors[0])
                qs.append(_expect(ep.recv(), MsgType.Q_SHARE, rg, cid, ts, k).tensors[0])
            replies = aggregate(ps, qs, intra_only=cfg.mode == "intra_only")
            for cid, (ep, (sp, sq)) in enumerate(zip(eps, replies)):
                ep.send(ProtocolMessage(MsgType.P_SUM, rg, ts, k, cid, (sp,)))
                ep.send(ProtocolMessage(MsgType.Q_SUM, rg, ts, k, cid, (sq,)))


def _counters(eps):
    return (sum(e.bytes_recv for e in eps), sum(e.bytes_sent for e in eps),
            sum(e.msgs_recv for e in eps), sum(e.msgs_sent for e in eps))


class Server:
    """Coordinator: barriers every collective, reduces in client-id order,
    and averages uploaded parameters weighted by node counts."""

    def __init__(self, eps, cfg, node_counts, theta, local_rounds):
        self.eps = eps
        self.cfg = cfg
        self.node_counts = list(node_counts)
        self.theta = np.array(theta, dtype=np.float64)
        self.local_rounds = local_rounds
        self.round = 0

    def global_round(self):
        rg = self.round
        t0 = time.perf_counter()
        start = _counters(self.eps)
        for cid, ep in enumerate(self.eps):
            ep.send(ProtocolMessage(MsgType.PARAM_DOWN, rg, 0, 0, cid, (self.theta,)))
        stats = RoundStats(rg, float("nan"))
        for rl in range(self.local_rounds):
            before = _counters(self.eps)
            serve_collectives(self.eps, self.cfg, rg, rl)
            after = _counters(self.eps)
            stats.local_bytes_up.append(after[0] - before[0])
            stats.local_bytes_down.append(after[1] - before[1])
        ups, losses = [], []
        for cid, ep in enumerate(self.eps):
            ups.append(_expect(ep.recv(), MsgType.PARAM_UP, rg, cid).tensors[0])
            losses.append(_expect(ep.recv(), MsgType.STATS, rg, cid).tensors[0][0])
        self.theta = fedavg(ups, self.node_counts)
        end = _counters(self.eps)
        stats.train_loss = float(fedavg(losses, self.node_counts))
        stats.bytes_up, stats.bytes_down = end[0] - start[0], end[1] - start[1]
        stats.msgs_up, stats.msgs_down = end[2] - start[2], end[3] - start[3]
        stats.seconds = time.perf_counter() - t0
        self.round += 1
        return stats


def client_loop(client, ep, rounds, local_rounds):
    t_in = client.cfg.t_in
    for rg in range(rounds):
        down = _expect(ep.recv(), MsgType.PARAM_DOWN, rg, client.id)
        client.set_globals(down.tensors[0])
        losses = []
        for rl in range(local_rounds):
            pred = drive_client(client.begin_local_round(), ep, client.id, rg, rl, t_in)
            losses.append(client.finish_local_round(pred))
        loss = float(np.mean(losses)) if losses else float("nan")
        ep.send(ProtocolMessage(MsgType.PARAM_UP, rg, 0, 0, client.id,
                                (client.globals_vector(),)))
        ep.send(ProtocolMessage(MsgType.STATS, rg, 0, 0, client.id, (np.array([loss]),)))


def run_threads(targets, server_eps, client_eps, coordinator):
    """Run ``targets[i](client_eps[i])`` in threads and ``coordinator()`` here.

    A failing client closes its endpoint so the coordinator stops waiting;
    the client's own exception is re-raised in preference to the
    coordinator's resulting ``PeerClosed``.
    """
    errors = [None] * len(targets)

    def wrap(i):
        try:
            targets[i](client_eps[i])
        except BaseException as exc:  # noqa: BLE001 - reported to the caller
            errors[i] = exc
            client_eps[i].close()

    threads = [threading.Thread(target=wrap, args=(i,), daemon=True)
               for i in range(len(targets))]
    for th in threads:
        th.start()
    result = err = None
    try:
        result = coordinator()
    except BaseException as exc:  # noqa: BLE001
        err = exc
        for ep in server_eps:
            ep.close()
    for th in threads:
        th.join()
    for ep in server_eps + client_eps:
        ep.close()
    first = next((e for e in errors if e is not None), None)
    if first is not None:
        raise first
    if err is not None:
        raise err
    return result
