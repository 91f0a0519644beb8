"""Contiguous node partitions across clients."""
import numpy as np

from ..errors import ConfigError

SCHEMES = ("contiguous-equal", "contiguous-skewed")


def _split_sizes(n, weights):
    """Integer sizes >= 1 proportional to ``weights``; leftovers go to the largest share first."""
    m = len(weights)
    w = np.asarray(weights, dtype=np.float64) / np.sum(weights)
    extra = n - m
    base = np.floor(w * extra).astype(np.int64)
    left = extra - int(base.sum())
    order = np.argsort(-(w * extra - base), kind="stable")
    base[order[:left]] += 1
    return (base + 1).tolist()


def partition_graph(num_nodes, num_clients, scheme="contiguous-equal", skew=1.0):
    """Disjoint contiguous ranges covering ``[0, num_nodes)``.

    ``contiguous-equal`` gives sizes differing by at most one, larger ranges
    first.  ``contiguous-skewed`` makes sizes roughly geometric with ratio
    ``skew`` between consecutive clients (each client keeps at least one node).
    """
    n, m = int(num_nodes), int(num_clients)
    if m < 1 or n < 1:
        raise ConfigError("num_nodes and num_clients must be >= 1")
    if m > n:
        raise ConfigError(f"{m} clients cannot share {n} nodes")
    if scheme == "contiguous-equal":
        q, r = divmod(n, m)
        sizes = [q + 1] * r + [q] * (m - r)
    elif scheme == "contiguous-skewed":
        if skew <= 0:
            raise ConfigError("skew must be positive")
        sizes = _split_sizes(n, [skew ** -i for i in range(m)])
    else:
        raise ConfigError(f"unknown partition scheme {scheme!r}")
    edges = np.cumsum([0] + sizes)
    return [np.arange(lo, hi) for lo, hi in zip(edges[:-1], edges[1:])]
