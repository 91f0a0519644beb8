"""Hyperparameters and the global/private parameter bundles."""
from dataclasses import asdict, dataclass, fields

import numpy as np

from ..errors import ConfigError, ShapeError
from ..ops import ACTIVATIONS

MODES = ("full", "no_gnea", "intra_only", "static_inter", "no_spatial", "static_all")

GATES = ("z", "r", "h")


@dataclass(frozen=True)
class HyperConfig:
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

    def __post_init__(self):
        for f in fields(self):
            v = getattr(self, f.name)
            if isinstance(v, (int, float)) and not isinstance(v, bool) and f.name != "alpha":
                if v <= 0:
                    raise ConfigError(f"{f.name} must be positive, got {v}")
        if self.alpha < 0:
            raise ConfigError("alpha must be non-negative")
        if self.mode not in MODES:
            raise ConfigError(f"unknown ablation mode {self.mode!r}")
        if self.activation not in ACTIVATIONS:
            raise ConfigError(f"unknown activation {self.activation!r}")

    @property
    def d_embed(self):
        return self.d_node + self.d_time

    @property
    def d_in(self):
        return self.feature_dim + self.hidden

    @property
    def phi_width(self):
        """Columns of the affinity features actually exchanged."""
        return 1 if self.mode == "static_all" else self.d_phi

    @property
    def psi_width(self):
        """Columns of the augmented embedding actually exchanged."""
        return self.d_node if self.mode == "no_gnea" else self.d_psi

    @property
    def exchanges(self):
        return self.mode != "no_spatial"

    def replace(self, **kw):
        d = asdict(self)
        d.update(kw)
        return HyperConfig(**d)


def param_shapes(cfg):
    """Ordered (name, shape) list of the shared parameters."""
    spec = []
    for g in GATES:
        spec.append((f"W_{g}", (cfg.d_embed, cfg.d_in, cfg.hidden)))
        spec.append((f"b_{g}", (cfg.d_embed, cfg.hidden)))
    spec += [
        ("W_mlp", (cfg.feature_dim, cfg.d_phi)),
        ("b_mlp", (cfg.d_phi,)),
        ("W_nl", (cfg.d_node, cfg.d_psi)),
        ("b_nl", (cfg.d_psi,)),
        ("E_time", (cfg.steps_per_day, cfg.d_time)),
        ("W_out", (cfg.hidden, cfg.t_out * cfg.feature_dim)),
        ("b_out", (cfg.t_out * cfg.feature_dim,)),
    ]
    return spec


def param_count(cfg):
    return int(sum(np.prod(s) for _, s in param_shapes(cfg)))


def init_params(cfg, seed):
    """Shared parameters drawn from a seeded counter-based generator."""
    rng = np.random.Generator(np.random.Philox(seed))
    p = {}
    gate_std = 1.0 / np.sqrt(cfg.d_embed * cfg.d_in)
    for g in GATES:
        p[f"W_{g}"] = rng.normal(0.0, gate_std, (cfg.d_embed, cfg.d_in, cfg.hidden))
        p[f"b_{g}"] = rng.normal(0.0, 0.1 / np.sqrt(cfg.d_embed), (cfg.d_embed, cfg.hidden))
    p["W_mlp"] = rng.normal(0.0, 1.0 / np.sqrt(cfg.feature_dim), (cfg.feature_dim, cfg.d_phi))
    p["b_mlp"] = np.zeros(cfg.d_phi)
    p["W_nl"] = rng.normal(0.0, cfg.d_node ** -0.25, (cfg.d_node, cfg.d_psi))
    p["b_nl"] = np.zeros(cfg.d_psi)
    # small time rows keep the trend factor near zero at the start
    p["E_time"] = rng.normal(0.0, 0.3 * cfg.d_time ** -0.25, (cfg.steps_per_day, cfg.d_time))
    p["W_out"] = rng.normal(0.0, 1.0 / np.sqrt(cfg.hidden), (cfg.hidden, cfg.t_out * cfg.feature_dim))
    p["b_out"] = np.zeros(cfg.t_out * cfg.feature_dim)
    return p


def init_node_embeddings(cfg, num_nodes, seed):
    """Node embeddings for the whole graph; each client keeps only its rows."""
    rng = np.random.Generator(np.random.Philox(seed + 0x5EED))
    return rng.normal(0.0, cfg.d_node ** -0.25, (num_nodes, cfg.d_node))


def flatten(params, cfg):
    return np.concatenate([np.asarray(params[n], dtype=np.float64).ravel()
                           for n, _ in param_shapes(cfg)])


def unflatten(vec, cfg):
    vec = np.asarray(vec, dtype=np.float64)
    if vec.ndim != 1 or vec.size != param_count(cfg):
        raise ShapeError(f"flat vector of size {vec.size}, expected {param_count(cfg)}")
    out, pos = {}, 0
    for name, shape in param_shapes(cfg):
        n = int(np.prod(shape))
        out[name] = vec[pos:pos + n].reshape(shape).copy()
        pos += n
    return out


def check_params(params, cfg):
    for name, shape in param_shapes(cfg):
        if name not in params:
            raise ShapeError(f"missing parameter {name}")
        if tuple(np.shape(params[name])) != shape:
            raise ShapeError(f"{name} has shape {np.shape(params[name])}, expected {shape}")
