"""Closed-form byte predictor and the message-shape audit."""
from dataclasses import dataclass

import numpy as np

from ..model.params import param_count
from ..transport.codec import MsgType, decode, wire_size


@dataclass
class CommPrediction:
    share_p_bytes: int      # one P share message on the wire
    share_q_bytes: int      # one Q share message on the wire
    share_payload_up: int   # payload bytes of all shares in one local round
    local_up: int
    local_down: int
    param_bytes: int        # one PARAM_UP / PARAM_DOWN message
    stats_bytes: int
    global_up: int
    global_down: int


def share_shapes(cfg, batch_size):
    return ((batch_size, cfg.phi_width, cfg.d_in),
            (batch_size, cfg.phi_width * cfg.psi_width, cfg.d_in))


def comm_account(cfg, num_clients, local_rounds, batch_size):
    """Predicted wire bytes (length prefix, header, payload and CRC included).

    Upload and download are seen from the server.  Every collective moves one
    P and one Q share up per client and the matching sums back down; the
    exchange is counted even with a single client.
    """
    m = num_clients
    p_shape, q_shape = share_shapes(cfg, batch_size)
    sp, sq = wire_size([p_shape]), wire_size([q_shape])
    collectives = 2 * cfg.t_in if cfg.exchanges else 0
    local = collectives * m * (sp + sq)
    payload = collectives * m * 8 * (int(np.prod(p_shape)) + int(np.prod(q_shape)))
    theta = wire_size([(param_count(cfg),)])
    stats = wire_size([(1,)])
    return CommPrediction(
        share_p_bytes=sp, share_q_bytes=sq, share_payload_up=payload,
        local_up=local, local_down=local, param_bytes=theta, stats_bytes=stats,
        global_up=local_rounds * local + m * (theta + stats),
        global_down=local_rounds * local + m * theta,
    )


def expected_shapes(cfg, batch_size):
    p_shape, q_shape = share_shapes(cfg, batch_size)
    theta = (param_count(cfg),)
    return {MsgType.P_SHARE: p_shape, MsgType.Q_SHARE: q_shape,
            MsgType.P_SUM: p_shape, MsgType.Q_SUM: q_shape,
            MsgType.PARAM_UP: theta, MsgType.PARAM_DOWN: theta, MsgType.STATS: (1,)}


class LocalityAudit:
    """Checks every frame leaving or reaching a client.

    Two rules: each message type has one allowed tensor shape (none depends
    on a client's node count), and no tensor's leading dimension equals any
    client's node count.  Use ``observe`` as a transport tap.
    """

    def __init__(self, cfg, node_counts, batch_size):
        self.allowed = expected_shapes(cfg, batch_size)
        self.node_counts = set(int(n) for n in node_counts)
        self.frames = 0
        self.violations = []

    def observe(self, cid, direction, frame):
        msg = decode(frame)
        self.frames += 1
        want = self.allowed[msg.msg_type]
        if len(msg.tensors) != 1:
            self.violations.append((cid, msg.msg_type.name, len(msg.tensors), "count"))
        for t in msg.tensors:
            if t.shape != want:
                self.violations.append((cid, msg.msg_type.name, t.shape, "shape"))
            elif t.shape[0] in self.node_counts:
                self.violations.append((cid, msg.msg_type.name, t.shape, "leading dim"))

    @property
    def ok(self):
        return not self.violations
