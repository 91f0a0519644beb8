"""Node-count weighted parameter averaging."""
import numpy as np

from ..errors import ProtocolAbort


def fedavg(snapshots, node_counts):
    """``sum_i (N_i / N) * theta_i`` with terms added in client order.

    ``snapshots`` are flat vectors or dicts of arrays with identical shapes.
    """
    if len(snapshots) != len(node_counts) or not snapshots:
        raise ProtocolAbort("need one node count per snapshot")
    counts = np.asarray(node_counts, dtype=np.float64)
    if (counts <= 0).any():
        raise ProtocolAbort("node counts must be positive")
    weights = counts / counts.sum()
    if isinstance(snapshots[0], dict):
        keys = list(snapshots[0])
        for s in snapshots[1:]:
            if list(s) != keys:
                raise ProtocolAbort("parameter names differ between clients")
        return {k: fedavg([s[k] for s in snapshots], node_counts) for k in keys}
    first = np.asarray(snapshots[0], dtype=np.float64)
    out = weights[0] * first
    for w, s in zip(weights[1:], snapshots[1:]):
        s = np.asarray(s, dtype=np.float64)
        if s.shape != first.shape:
            raise ProtocolAbort(f"snapshot shape {s.shape} differs from {first.shape}")
        out = out + w * s
    return out
