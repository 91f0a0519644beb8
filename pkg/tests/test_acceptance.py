"""End-to-end acceptance checks, one test per criterion.

Each test records a ``criterion N: PASS|FAIL ...`` line that is printed in
the pytest terminal summary (and to stdout when run with ``-s``).
"""
import time

import numpy as np
import pytest

from conftest import ACCEPTANCE_LINES
from fedstgd import metrics
from fedstgd.cli import RunConfig, bench_comm
from fedstgd.data import split_and_window, synth_diffusion
from fedstgd.model.params import HyperConfig
from fedstgd.protocol.accounting import LocalityAudit, comm_account
from fedstgd.protocol.partition import partition_graph
from fedstgd.protocol.trainer import TrainSettings, federated_predictor, train_federated
from fedstgd.verify import (check_codec, check_distributed_equivalence, check_gamma_equivalence,
                            check_gradients, check_hidden_bound, check_single_client_reduction)

NUM_NODES, LENGTH, CLIENTS = 16, 2000, 4
ROUNDS, LOCAL_ROUNDS = 10, 20
ABLATION_SEEDS = (0, 1, 2)
ABLATION_MODES = ("full", "no_gnea", "intra_only", "no_spatial")


def record(num, passed, detail):
    line = f"criterion {num}: {'PASS' if passed else 'FAIL'} {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    return passed


def record_check(num, res):
    return record(num, res.passed, f"{res.name} measured={res.measured:.3g} "
                                   f"limit={res.limit:.3g} {res.detail}")


@pytest.fixture(scope="module")
def synthetic():
    series = synth_diffusion(0, NUM_NODES, LENGTH)
    splits, norm = split_and_window(series, 4, 4)
    return splits, norm, partition_graph(NUM_NODES, CLIENTS)


@pytest.fixture(scope="module")
def threaded_run(synthetic):
    """One federated run over the in-memory transport with every frame audited."""
    splits, norm, parts = synthetic
    cfg = HyperConfig()
    settings = TrainSettings(rounds=ROUNDS, local_rounds=LOCAL_ROUNDS, seed=0, transport="memory",
                             timeout=300)
    audit = LocalityAudit(cfg, [len(p) for p in parts], settings.optim.batch_size)
    t0 = time.perf_counter()
    result = train_federated(splits["train"], parts, cfg, settings, tap=audit.observe)
    model = metrics.evaluate(federated_predictor(result.params, result.e_node, parts, cfg),
                             splits["test"], norm)
    seconds = time.perf_counter() - t0
    base = metrics.evaluate_persistence(splits["test"], norm)
    return dict(cfg=cfg, settings=settings, result=result, audit=audit, model=model, base=base,
                seconds=seconds)


def test_criterion_01_gamma_equivalence():
    t0 = time.perf_counter()
    res = check_gamma_equivalence(1000, 1e-9)
    secs = time.perf_counter() - t0
    assert record(1, res.passed and secs < 5.0,
                  f"max_dev={res.measured:.3g} (limit 1e-9) seconds={secs:.2f} (limit 5)")


def test_criterion_02_distributed_equals_monolithic():
    res = check_distributed_equivalence((2, 4, 8), NUM_NODES, 1e-9, ("memory", "tcp"))
    assert record_check(2, res)


def test_criterion_03_single_client_reduction():
    res = check_single_client_reduction(rounds=10, local_rounds=5, tol=1e-9)
    assert record_check(3, res)


def test_criterion_04_gradients():
    res = check_gradients(1e-4, eps=1e-5, num_nodes=4)
    assert record_check(4, res)


def test_criterion_05_hidden_bound():
    res = check_hidden_bound(rollouts=100, steps=20)
    assert record_check(5, res)


def test_criterion_06_learning_signal(threaded_run):
    ratio = threaded_run["model"].rmse / threaded_run["base"].rmse
    secs = threaded_run["seconds"]
    assert record(6, ratio <= 0.8 and secs < 600,
                  f"test_rmse={threaded_run['model'].rmse:.4f} persistence="
                  f"{threaded_run['base'].rmse:.4f} ratio={ratio:.3f} (limit 0.8) "
                  f"rounds={ROUNDS}x{LOCAL_ROUNDS} seconds={secs:.0f} (limit 600)")


def test_criterion_07_communication_accounting(threaded_run):
    cfg = RunConfig(nodes=NUM_NODES)
    rows = bench_comm(cfg, clients=(2, 4, 8), local_rounds=2)
    exact = all(r["local_up"] == r["local_up_pred"] and
                r["local_down"] == r["local_down_pred"] and
                r["global_up"] == r["global_up_pred"] and
                r["global_down"] == r["global_down_pred"] for r in rows)
    per_client = {r["share_payload"] / r["clients"] for r in rows}
    # the long audited run must match the predictor in every round as well
    pred = comm_account(threaded_run["cfg"], CLIENTS, LOCAL_ROUNDS,
                        threaded_run["settings"].optim.batch_size)
    long_run = all(s.bytes_up == pred.global_up and s.bytes_down == pred.global_down
                   for s in threaded_run["result"].stats)
    detail = " ".join(f"M={r['clients']}:up={r['global_up']}/{r['global_up_pred']}" for r in rows)
    assert record(7, exact and long_run and len(per_client) == 1,
                  f"{detail} share_bytes_per_client={sorted(per_client)} long_run_exact={long_run}")


def test_criterion_08_locality_audit(threaded_run):
    audit = threaded_run["audit"]
    assert record(8, audit.ok and audit.frames > 0,
                  f"frames={audit.frames} violations={len(audit.violations)}")


def test_criterion_09_codec_robustness():
    res = check_codec(1000)
    assert record_check(9, res)


@pytest.mark.slow
def test_criterion_10_ablation_ordering(synthetic):
    splits, norm, parts = synthetic
    base = metrics.evaluate_persistence(splits["test"], norm).rmse
    scores = {mode: [] for mode in ABLATION_MODES}
    for seed in ABLATION_SEEDS:
        for mode in ABLATION_MODES:
            cfg = HyperConfig(mode=mode)
            settings = TrainSettings(rounds=ROUNDS, local_rounds=LOCAL_ROUNDS, seed=seed,
                                     transport="inproc")
            res = train_federated(splits["train"], parts, cfg, settings)
            rep = metrics.evaluate(federated_predictor(res.params, res.e_node, parts, cfg),
                                   splits["test"], norm)
            scores[mode].append(rep.rmse)
    mean = {mode: float(np.mean(v)) for mode, v in scores.items()}
    ok = all(mean["full"] <= mean[m] for m in ABLATION_MODES[1:])
    detail = " ".join(f"{m}={mean[m]:.4f}({mean[m] / base:.3f}x)" for m in ABLATION_MODES)
    assert record(10, ok, f"mean test rmse over seeds {list(ABLATION_SEEDS)}: {detail}")
