"""Command-line entry point: ``fedstgd <command> [--config=FILE] [--key=value ...]``.

Exit codes: 0 success, 1 property failure, 2 configuration error,
3 runtime or numeric error.
"""
import argparse
import os
import sys
from dataclasses import asdict, dataclass, fields

import numpy as np

from . import data, metrics
from .errors import ConfigError, DataError, FedSTGDError
from .model.params import HyperConfig, param_shapes
from .protocol.accounting import LocalityAudit, comm_account
from .protocol.optim import OptimConfig
from .protocol.partition import partition_graph
from .protocol.trainer import (TrainSettings, central_predictor, federated_predictor,
                               train_central, train_federated)

EXIT_OK, EXIT_PROPERTY, EXIT_CONFIG, EXIT_RUNTIME = 0, 1, 2, 3
COMMANDS = ("synth", "train-central", "train-fed", "eval", "verify", "bench-comm")


@dataclass
class RunConfig:
    # model
    feature_dim: int = 2
    steps_per_day: int = 48
    alpha: float = 0.3
    d_node: int = 64
    d_time: int = 64
    hidden: int = 64
    t_in: int = 4
    t_out: int = 4
    d_phi: int = 4
    d_psi: int = 4
    activation: str = "relu"
    mode: str = "full"
    # federation and training
    clients: int = 4
    rounds: int = 20
    local_rounds: int = 20
    seed: int = 0
    transport: str = "memory"
    timeout: float = 300.0
    partition: str = "contiguous-equal"
    skew: float = 2.0
    batch_size: int = 16
    lr: float = 1e-3
    weight_decay: float = 1e-4
    adjacency: str = "approx"
    # data
    manifest: str = ""
    out: str = "run"
    nodes: int = 16
    length: int = 2000
    noise: float = 0.3
    # eval / verify
    checkpoint: str = ""
    tolerance: float = -1.0
    inject_bug: str = ""
    quick: int = 0

    def hyper(self):
        names = {f.name for f in fields(HyperConfig)}
        return HyperConfig(**{k: v for k, v in asdict(self).items() if k in names})

    def settings(self):
        optim = OptimConfig(lr=self.lr, weight_decay=self.weight_decay,
                            batch_size=self.batch_size)
        return TrainSettings(self.rounds, self.local_rounds, self.seed, self.transport,
                             self.timeout, optim)


def _coerce(name, raw):
    kind = {f.name: f.type for f in fields(RunConfig)}[name]
    try:
        if kind in (int, "int"):
            return int(raw)
        if kind in (float, "float"):
            return float(raw)
    except ValueError:
        raise ConfigError(f"{name}: cannot parse {raw!r}") from None
    return str(raw)


def build_config(file_path=None, overrides=None):
    """Defaults, then the key=value file, then command-line overrides."""
    known = {f.name for f in fields(RunConfig)}
    values = {}
    if file_path:
        for key, raw in data.read_kv(file_path).items():
            if key not in known:
                raise ConfigError(f"{file_path}: unknown key {key!r}")
            values[key] = _coerce(key, raw)
    for key, raw in (overrides or {}).items():
        if key not in known:
            raise ConfigError(f"unknown option --{key}")
        values[key] = _coerce(key, raw)
    cfg = RunConfig(**values)
    cfg.hyper()  # validates model fields
    if cfg.transport not in ("memory", "tcp", "inproc"):
        raise ConfigError(f"unknown transport {cfg.transport!r}")
    if cfg.adjacency not in ("approx", "exact"):
        raise ConfigError(f"unknown adjacency {cfg.adjacency!r}")
    return cfg


def parse_args(argv):
    parser = argparse.ArgumentParser(prog="fedstgd", description=__doc__.splitlines()[0])
    parser.add_argument("command", choices=COMMANDS)
    parser.add_argument("--config", default=None, help="key=value file of run settings")
    for f in fields(RunConfig):
        parser.add_argument(f"--{f.name}", dest=f"opt_{f.name}", default=None)
    ns = parser.parse_args(argv)
    overrides = {f.name: getattr(ns, f"opt_{f.name}") for f in fields(RunConfig)
                 if getattr(ns, f"opt_{f.name}") is not None}
    return ns.command, build_config(ns.config, overrides)


def _write_run_config(path, cfg):
    data.write_kv(path, asdict(cfg))


# ------------------------------------------------------------------ commands

def cmd_synth(cfg, out=print):
    os.makedirs(cfg.out, exist_ok=True)
    series = data.synth_diffusion(cfg.seed, cfg.nodes, cfg.length, cfg.feature_dim,
                                  cfg.steps_per_day, noise=cfg.noise)
    data.write_signals(os.path.join(cfg.out, "signals.csv"), series)
    parts = partition_graph(cfg.nodes, cfg.clients, cfg.partition, cfg.skew)
    data.write_partition(os.path.join(cfg.out, "partition.csv"), parts)
    man = data.DatasetManifest(f"synth-{cfg.seed}", cfg.nodes, cfg.feature_dim,
                               cfg.steps_per_day, "signals.csv", "partition.csv")
    path = os.path.join(cfg.out, "manifest.txt")
    data.write_manifest(path, man)
    out(f"wrote {path} nodes={cfg.nodes} length={cfg.length} clients={len(parts)}")
    return EXIT_OK


def _load(cfg):
    if not cfg.manifest:
        raise ConfigError("--manifest is required")
    man = data.read_manifest(cfg.manifest)
    if man.feature_dim != cfg.feature_dim or man.steps_per_day != cfg.steps_per_day:
        raise ConfigError("manifest feature_dim/steps_per_day disagree with the run config")
    series = data.load_dataset(man)
    splits, norm = data.split_and_window(series, cfg.t_in, cfg.t_out)
    if man.partition_path:
        parts = data.load_partition(man.resolve(man.partition_path), man.num_nodes)
    else:
        parts = partition_graph(man.num_nodes, cfg.clients, cfg.partition, cfg.skew)
    return man, splits, norm, parts


def _save(cfg, result, norm):
    os.makedirs(cfg.out, exist_ok=True)
    arrays = dict(result.params)
    arrays["E_node"] = result.e_node
    arrays["norm_mean"] = norm.mean
    arrays["norm_std"] = norm.std
    path = os.path.join(cfg.out, "checkpoint")
    data.save_checkpoint(path, arrays)
    _write_run_config(os.path.join(cfg.out, "run.cfg"), cfg)
    return path


def cmd_train(cfg, federated, out=print):
    hyper = cfg.hyper()
    _, splits, norm, parts = _load(cfg)
    os.makedirs(cfg.out, exist_ok=True)
    log_path = os.path.join(cfg.out, "rounds.log")
    with open(log_path, "w") as log:
        def emit(stats):
            line = stats.record()
            log.write(line + "\n")
            log.flush()
            out(line)

        if federated:
            result = train_federated(splits["train"], parts, hyper, cfg.settings(), on_round=emit)
        else:
            blocks = parts if hyper.mode == "intra_only" else None
            result = train_central(splits["train"], hyper, cfg.settings(), cfg.adjacency,
                                   blocks, on_round=emit)
    path = _save(cfg, result, norm)
    out(f"checkpoint={path} log={log_path}")
    return EXIT_OK


def cmd_eval(cfg, out=print):
    hyper = cfg.hyper()
    _, splits, _, parts = _load(cfg)
    ckpt = data.load_checkpoint(cfg.checkpoint or os.path.join(cfg.out, "checkpoint"))
    params = {name: ckpt[name] for name, _ in param_shapes(hyper)}
    norm = data.Normalizer(ckpt["norm_mean"], ckpt["norm_std"])
    if cfg.adjacency == "exact":
        predict = central_predictor(params, ckpt["E_node"], hyper, "exact")
    else:
        predict = federated_predictor(params, ckpt["E_node"], parts, hyper)
    report = metrics.evaluate(predict, splits["test"], norm)
    base = metrics.evaluate_persistence(splits["test"], norm)
    out(report.table())
    for rec in report.records():
        out("model " + rec)
    out("baseline " + base.records()[0])
    out(f"ratio_to_persistence={report.rmse / base.rmse:.6f}")
    return EXIT_OK


def cmd_verify(cfg, out=print):
    from .verify import run_suite
    if cfg.inject_bug not in ("", "gamma-order"):
        raise ConfigError(f"unknown bug hook {cfg.inject_bug!r}")
    tol = None if cfg.tolerance < 0 else cfg.tolerance
    results = run_suite(tol, cfg.inject_bug == "gamma-order", bool(cfg.quick))
    for r in results:
        out(r.line())
    failed = [r.name for r in results if not r.passed]
    out(f"summary passed={len(results) - len(failed)} failed={len(failed)}")
    return EXIT_PROPERTY if failed else EXIT_OK


def _same(values):
    # one number when every local round moved the same bytes, else -1
    return values[0] if len(set(values)) == 1 else -1


def bench_comm(cfg, clients=(2, 4, 8), local_rounds=1):
    """Measured vs predicted bytes for one global round at each client count."""
    hyper = cfg.hyper()
    series = data.synth_diffusion(cfg.seed, cfg.nodes, max(cfg.length, 200),
                                  cfg.feature_dim, cfg.steps_per_day, noise=cfg.noise)
    train = data.split_and_window(series, hyper.t_in, hyper.t_out)[0]["train"]
    rows = []
    for m in clients:
        parts = partition_graph(cfg.nodes, m)
        settings = cfg.settings()
        settings.rounds, settings.local_rounds = 1, local_rounds
        if settings.transport == "inproc":
            settings.transport = "memory"
        batch = min(settings.optim.batch_size, len(train))
        audit = LocalityAudit(hyper, [len(p) for p in parts], batch)
        stats = train_federated(train, parts, hyper, settings, tap=audit.observe).stats[0]
        pred = comm_account(hyper, m, local_rounds, batch)
        rows.append(dict(clients=m, local_up=_same(stats.local_bytes_up),
                         local_up_pred=pred.local_up, local_down=_same(stats.local_bytes_down),
                         local_down_pred=pred.local_down, global_up=stats.bytes_up,
                         global_up_pred=pred.global_up, global_down=stats.bytes_down,
                         global_down_pred=pred.global_down,
                         share_payload=pred.share_payload_up, audit_violations=len(audit.violations)))
    return rows


def cmd_bench_comm(cfg, out=print):
    rows = bench_comm(cfg)
    keys = list(rows[0])
    out(" ".join(f"{k:>16}" for k in keys))
    ok = True
    for r in rows:
        out(" ".join(f"{r[k]:>16}" for k in keys))
        ok &= (r["local_up"] == r["local_up_pred"] and r["local_down"] == r["local_down_pred"]
               and r["global_up"] == r["global_up_pred"]
               and r["global_down"] == r["global_down_pred"] and r["audit_violations"] == 0)
    ms = np.array([r["clients"] for r in rows], dtype=float)
    share = np.array([r["share_payload"] for r in rows], dtype=float)
    slope = share / ms
    out(f"share_payload_per_client={slope[0]:.0f} linear_in_clients={bool(np.all(slope == slope[0]))}")
    ok &= bool(np.all(slope == slope[0]))
    out(f"measured_equals_predicted={ok}")
    return EXIT_OK if ok else EXIT_PROPERTY


def main(argv=None, out=print):
    argv = sys.argv[1:] if argv is None else argv
    try:
        command, cfg = parse_args(argv)
    except SystemExit as exc:  # argparse reports usage problems with code 2
        return int(exc.code or 0)
    except (ConfigError, OSError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    handlers = {
        "synth": cmd_synth,
        "train-central": lambda c, out: cmd_train(c, False, out),
        "train-fed": lambda c, out: cmd_train(c, True, out),
        "eval": cmd_eval,
        "verify": cmd_verify,
        "bench-comm": cmd_bench_comm,
    }
    try:
        return handlers[command](cfg, out=out)
    except (ConfigError, DataError, FileNotFoundError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (FedSTGDError, ArithmeticError, OSError) as exc:
        print(f"runtime error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
