"""Server-side reduction of shares and an in-process lockstep driver."""
import numpy as np

from ..errors import ProtocolAbort


def reduce_shares(shares):
    """Sum per-client shares in ascending client id (reproducible rounding)."""
    total = np.array(shares[0], dtype=np.float64)
    for s in shares[1:]:
        if np.shape(s) != total.shape:
            raise ProtocolAbort(f"share shape {np.shape(s)} differs from {total.shape}")
        total = total + s
    return total


def aggregate(p_shares, q_shares, intra_only=False):
    """Per-client (sum_P, sum_Q) replies for one collective round.

    With ``intra_only`` each client gets back its own share, which removes
    every inter-client term.
    """
    if intra_only:
        return [(np.array(p), np.array(q)) for p, q in zip(p_shares, q_shares)]
    sp, sq = reduce_shares(p_shares), reduce_shares(q_shares)
    return [(sp, sq)] * len(p_shares)


def run_lockstep(gens, intra_only=False, log=None):
    """Drive client forward generators through their collective rounds.

    Every generator must reach the same ``(t, k)`` before the round is
    reduced.  ``log`` (a list) receives ``(t, k, p_shares, q_shares)`` per
    round.  Returns the generators' return values in client order.
    """
    m = len(gens)
    outs = [None] * m
    msgs = [None] * m

    def step(i, payload):
        try:
            msgs[i] = next(gens[i]) if payload is None else gens[i].send(payload)
        except StopIteration as stop:
            msgs[i] = None
            outs[i] = stop.value

    for i in range(m):
        step(i, None)
    while any(msg is not None for msg in msgs):
        if any(msg is None for msg in msgs):
            raise ProtocolAbort("clients finished at different collective rounds")
        keys = {(msg[0], msg[1]) for msg in msgs}
        if len(keys) != 1:
            raise ProtocolAbort(f"clients out of step: {sorted(keys)}")
        t, k = keys.pop()
        ps = [msg[2] for msg in msgs]
        qs = [msg[3] for msg in msgs]
        if log is not None:
            log.append((t, k, ps, qs))
        replies = aggregate(ps, qs, intra_only)
        for i in range(m):
            step(i, replies[i])
    return outs
