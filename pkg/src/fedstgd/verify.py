"""Self-contained property checks, shared by the ``verify`` command and the tests.

Each check returns a :class:`CheckResult`; ``measured`` is the worst
observed deviation (or count) and ``limit`` the tolerance it is held to.
"""
import contextlib
import time
from dataclasses import dataclass

import numpy as np

from . import ops
from .autodiff import finite_diff_check
from .errors import DecodeError
from .model import federated as fed
from .model.params import HyperConfig, flatten, init_node_embeddings, init_params
from .protocol.fedavg import fedavg
from .protocol.partition import partition_graph
from .transport.codec import MsgType, ProtocolMessage, decode, encode


@dataclass
class CheckResult:
    name: str
    passed: bool
    measured: float
    limit: float
    detail: str = ""

    def line(self):
        tag = "PASS" if self.passed else "FAIL"
        return f"{tag} {self.name}: measured={self.measured:.3g} limit={self.limit:.3g} {self.detail}"


def _result(name, measured, limit, detail=""):
    return CheckResult(name, bool(measured <= limit), float(measured), float(limit), detail)


@contextlib.contextmanager
def gamma_order_bug():
    """Make clients build Q shares with mis-ordered Gamma columns."""
    old = fed.SHARE_GAMMA_TRANSPOSED
    fed.SHARE_GAMMA_TRANSPOSED = True
    try:
        yield
    finally:
        fed.SHARE_GAMMA_TRANSPOSED = old


# ------------------------------------------------------------------- checks

def check_gamma_equivalence(instances=1000, tol=1e-9, seed=0, max_rows=8, max_cols=5):
    """``(A_i A_j^T) * (B_i B_j^T) == Gamma_i Gamma_j^T`` on random small instances."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    t0 = time.perf_counter()
    for _ in range(instances):
        ni, nj = rng.integers(1, max_rows + 1, 2)
        d, dn = rng.integers(1, max_cols + 1, 2)
        ai, aj = rng.standard_normal((ni, d)), rng.standard_normal((nj, d))
        bi, bj = rng.standard_normal((ni, dn)), rng.standard_normal((nj, dn))
        lhs = (ai @ aj.T) * (bi @ bj.T)
        rhs = ops.gamma_map(ai, bi) @ ops.gamma_map(aj, bj).T
        worst = max(worst, float(np.abs(lhs - rhs).max()))
    secs = time.perf_counter() - t0
    return _result("gamma_equivalence", worst, tol, f"instances={instances} seconds={secs:.2f}")


def random_instance(cfg, num_nodes, batch, seed):
    params = init_params(cfg, seed)
    e_node = init_node_embeddings(cfg, num_nodes, seed)
    rng = np.random.default_rng(seed + 1)
    x = rng.standard_normal((batch, cfg.t_in, num_nodes, cfg.feature_dim))
    slots = rng.integers(0, cfg.steps_per_day, (batch, 1)) + np.arange(cfg.t_in)
    return params, e_node, x, slots


def _stacked_traces(traces, parts):
    from .protocol.trainer import stack_clients
    steps = len(traces[0])
    return [{key: stack_clients([tr[t][key] for tr in traces], parts, axis=1)
             for key in traces[0][t]} for t in range(steps)]


def check_distributed_equivalence(clients=(2, 4, 8), num_nodes=16, tol=1e-9,
                                  transports=("memory", "tcp"), cfg=None, batch=2, seed=0):
    """Stacked client intermediates vs the monolithic approximated pass,
    and bit-identity of the client results across transports."""
    from .protocol.trainer import distributed_forward
    cfg = cfg or HyperConfig()
    worst, identical = 0.0, True
    for m in clients:
        params, e_node, x, slots = random_instance(cfg, num_nodes, batch, seed + m)
        ref_trace = []
        ref = ops.value(fed.central_forward(params, e_node, x, slots, cfg, "approx",
                                            trace=ref_trace))
        parts = partition_graph(num_nodes, m)
        first = None
        for tname in transports:
            preds, traces = distributed_forward(params, e_node, parts, x, slots, cfg, tname)
            stacked = _stacked_traces(traces, parts)
            pred = np.concatenate(preds, axis=1)
            for got, want in zip(stacked, ref_trace):
                for key in want:
                    worst = max(worst, float(np.abs(got[key] - want[key]).max()))
            worst = max(worst, float(np.abs(pred - ref).max()))
            blob = pred.tobytes() + b"".join(v.tobytes() for st in stacked for v in st.values())
            if first is None:
                first = blob
            elif blob != first:
                identical = False
    res = _result("distributed_equivalence", worst, tol,
                  f"clients={list(clients)} transports={list(transports)} "
                  f"bit_identical={identical}")
    res.passed = res.passed and identical
    return res


def small_config(**kw):
    base = dict(feature_dim=2, steps_per_day=5, d_node=3, d_time=3, hidden=3,
                t_in=2, t_out=2, d_phi=2, d_psi=2)
    base.update(kw)
    return HyperConfig(**base)


def check_gradients(tol=1e-4, eps=1e-5, num_nodes=4, seed=0):
    """Tape gradients vs central differences for every parameter group."""
    cfg = small_config(activation="tanh")
    params, e_node, x, slots = random_instance(cfg, num_nodes, 2, seed)
    rng = np.random.default_rng(seed + 7)
    y = rng.standard_normal((2, cfg.t_out, num_nodes, cfg.feature_dim))
    worst = 0.0
    for adjacency in ("approx", "exact"):
        def loss(tape, v, adjacency=adjacency):
            p = {k: v[k] for k in params}
            pred = fed.central_forward(p, v["E_node"], x, slots, cfg, adjacency)
            diff = ops.sub(pred, fed.frames_to_rows(y))
            return ops.mean(ops.mul(diff, diff))
        allp = dict(params, E_node=e_node)
        worst = max(worst, finite_diff_check(loss, allp, eps=eps))
    return _result("gradient_check", worst, tol, f"groups={len(params) + 1} eps={eps}")


def check_hidden_bound(rollouts=100, steps=20, num_nodes=5, seed=0):
    """Every hidden coordinate stays in [-1, 1] under random parameters and inputs."""
    cfg = small_config(t_in=steps, hidden=4)
    rng = np.random.default_rng(seed)
    worst = 0.0
    for r in range(rollouts):
        scale = rng.uniform(0.5, 5.0)
        params = {k: v * scale for k, v in init_params(cfg, seed + r).items()}
        e_node = init_node_embeddings(cfg, num_nodes, seed + r) * scale
        x = rng.standard_normal((1, steps, num_nodes, cfg.feature_dim)) * scale * 3
        slots = np.arange(steps)[None]
        for adjacency in ("exact", "approx"):
            trace = []
            fed.central_forward(params, e_node, x, slots, cfg, adjacency, trace=trace)
            worst = max(worst, max(float(np.abs(t["h"]).max()) for t in trace))
    return _result("hidden_state_bound", worst, 1.0, f"rollouts={rollouts} steps={steps}")


def random_message(rng):
    tensors = []
    for _ in range(rng.integers(0, 4)):
        rank = int(rng.integers(1, 4))
        shape = tuple(int(s) for s in rng.integers(0, 5, rank))
        vals = rng.standard_normal(shape) * 10.0 ** rng.integers(-3, 4)
        if vals.size and rng.random() < 0.2:
            vals.flat[0] = rng.choice([np.nan, np.inf, -np.inf, -0.0])
        tensors.append(vals)
    return ProtocolMessage(MsgType(int(rng.integers(1, 8))), int(rng.integers(0, 2**32)),
                           int(rng.integers(0, 2**32)), int(rng.integers(0, 256)),
                           int(rng.integers(0, 2**16)), tuple(tensors))


def mutate(frame, rng):
    """One random corruption of an encoded frame."""
    data = bytearray(frame)
    kind = int(rng.integers(0, 6))
    if kind == 0:
        i = int(rng.integers(0, len(data)))
        data[i] ^= int(rng.integers(1, 256))
    elif kind == 1:
        del data[int(rng.integers(0, len(data))):]
    elif kind == 2:
        data += bytes(rng.integers(0, 256, int(rng.integers(1, 9)), dtype=np.uint8))
    elif kind == 3:
        data[int(rng.integers(0, 4))] ^= 0x20
    elif kind == 4:
        data[4] = int(rng.integers(2, 256))
    else:
        n = int(rng.integers(1, 4))
        for i in rng.integers(0, len(data), n):
            data[int(i)] ^= 1 << int(rng.integers(0, 8))
    return bytes(data)


def check_codec(messages=1000, seed=0):
    """Fuzz round trip, encoding injectivity and typed rejection of corrupt frames."""
    rng = np.random.default_rng(seed)
    failures, seen, crashes, accepted = 0, {}, 0, 0
    for _ in range(messages):
        msg = random_message(rng)
        frame = encode(msg)
        if decode(frame) != msg or encode(msg) != frame:
            failures += 1
        prev = seen.setdefault(frame, msg)
        if prev is not msg and prev != msg:
            failures += 1
        bad = mutate(frame, rng)
        try:
            decode(bad)
            accepted += 1
        except DecodeError:
            pass
        except Exception:  # noqa: BLE001 - any untyped failure counts as a crash
            crashes += 1
    total = failures + crashes + accepted
    return _result("codec_fuzz", total, 0,
                   f"roundtrip_failures={failures} accepted_corrupt={accepted} crashes={crashes}")


def check_fedavg(trials=200, seed=0, tol=1e-12):
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(trials):
        m = int(rng.integers(1, 6))
        snaps = [rng.standard_normal(7) for _ in range(m)]
        counts = rng.integers(1, 20, m)
        out = fedavg(snaps, counts)
        lo, hi = np.min(snaps, axis=0), np.max(snaps, axis=0)
        worst = max(worst, float(np.max(np.maximum(lo - out, out - hi))), 0.0)
        same = fedavg([snaps[0]] * m, counts)
        worst = max(worst, float(np.abs(same - snaps[0]).max()))
    worst = max(worst, abs(fedavg([2.0, 4.0], [1, 1]) - 3.0), abs(fedavg([0.0, 4.0], [3, 1]) - 1.0))
    return _result("fedavg_laws", worst, tol, f"trials={trials}")


def check_single_client_reduction(rounds=2, local_rounds=3, tol=1e-9, seed=0):
    """One-client federated training follows the centralized approximated trajectory."""
    from .data import split_and_window, synth_diffusion
    from .protocol.trainer import TrainSettings, train_central, train_federated
    cfg = small_config(t_in=4, t_out=4, steps_per_day=48)
    series = synth_diffusion(seed, 5, 200)
    train = split_and_window(series, cfg.t_in, cfg.t_out)[0]["train"]
    settings = TrainSettings(rounds=rounds, local_rounds=local_rounds, seed=seed)
    fed_traj, cen_traj = [], []

    def hook(store):
        return lambda cid, step, p, e: store.append(np.concatenate([flatten(p, cfg), e.ravel()]))

    train_federated(train, partition_graph(5, 1), cfg, settings, step_hook=hook(fed_traj))
    train_central(train, cfg, settings, step_hook=hook(cen_traj))
    worst = max(float(np.abs(a - b).max()) for a, b in zip(fed_traj, cen_traj))
    res = _result("single_client_reduction", worst, tol, f"steps={len(fed_traj)}")
    res.passed = res.passed and len(fed_traj) == len(cen_traj) == rounds * local_rounds
    return res


def run_suite(tolerance=None, inject_gamma_bug=False, quick=False):
    """Run every check; ``tolerance`` overrides all floating-point limits."""
    def tol(default):
        return default if tolerance is None else tolerance

    cm = gamma_order_bug() if inject_gamma_bug else contextlib.nullcontext()
    with cm:
        results = [
            check_gamma_equivalence(200 if quick else 1000, tol(1e-9)),
            check_distributed_equivalence((2,) if quick else (2, 4, 8), tol=tol(1e-9),
                                          cfg=small_config(t_in=4) if quick else None),
            check_gradients(tol(1e-4)),
            check_codec(200 if quick else 1000),
            check_fedavg(tol=tol(1e-12)),
            check_hidden_bound(20 if quick else 100),
            check_single_client_reduction(tol=tol(1e-9)),
        ]
    return results
