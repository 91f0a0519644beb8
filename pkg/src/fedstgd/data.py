"""Dataset manifests, signal files, synthesis, normalization and windowing."""
import csv
import math
import os
from dataclasses import dataclass

import numpy as np

from .errors import (ConfigError, DataError, DuplicateCell, MissingCell, NonFiniteValue,
                     OrderingError, PartitionError, ShapeError, SplitTooShort)

DEFAULT_RATIOS = (0.7, 0.1, 0.2)


# ------------------------------------------------------------------ manifests

@dataclass
class DatasetManifest:
    name: str
    num_nodes: int
    feature_dim: int
    steps_per_day: int
    signal_path: str
    partition_path: str = ""
    start_slot: int = 0

    def __post_init__(self):
        for key in ("num_nodes", "feature_dim", "steps_per_day"):
            if int(getattr(self, key)) < 1:
                raise ConfigError(f"manifest {key} must be >= 1")

    def resolve(self, path):
        """Path relative to the manifest's directory."""
        if not path or os.path.isabs(path):
            return path
        return os.path.join(self._base, path)

    _base = "."


_MANIFEST_INT = ("num_nodes", "feature_dim", "steps_per_day", "start_slot")


def read_kv(path):
    out = {}
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected key=value")
            key, val = line.split("=", 1)
            out[key.strip()] = val.strip()
    return out


def write_kv(path, items):
    with open(path, "w") as fh:
        for key, val in items.items():
            fh.write(f"{key}={val}\n")


def read_manifest(path):
    kv = read_kv(path)
    allowed = {"name", "signal_path", "partition_path", *_MANIFEST_INT}
    unknown = set(kv) - allowed
    if unknown:
        raise ConfigError(f"unknown manifest keys: {sorted(unknown)}")
    try:
        args = {k: (int(v) if k in _MANIFEST_INT else v) for k, v in kv.items()}
        man = DatasetManifest(**args)
    except (TypeError, ValueError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"bad manifest {path}: {exc}") from None
    man._base = os.path.dirname(os.path.abspath(path))
    return man


def write_manifest(path, man):
    write_kv(path, {"name": man.name, "num_nodes": man.num_nodes,
                    "feature_dim": man.feature_dim, "steps_per_day": man.steps_per_day,
                    "start_slot": man.start_slot, "signal_path": man.signal_path,
                    "partition_path": man.partition_path})


# -------------------------------------------------------------------- signals

@dataclass
class SignalSeries:
    values: np.ndarray  # (T, N, d)
    start_slot: int = 0

    @property
    def shape(self):
        return self.values.shape


def write_signals(path, series):
    t_len, n, d = series.values.shape
    with open(path, "w", newline="") as fh:
        fh.write("t,node," + ",".join(f"v{j}" for j in range(d)) + "\n")
        for t in range(t_len):
            for i in range(n):
                row = ",".join(repr(float(v)) for v in series.values[t, i])
                fh.write(f"{t},{i},{row}\n")


def load_dataset(manifest):
    """Read the signal table named by ``manifest`` into a (T, N, d) series."""
    if isinstance(manifest, (str, os.PathLike)):
        manifest = read_manifest(manifest)
    path = manifest.resolve(manifest.signal_path)
    n, d = manifest.num_nodes, manifest.feature_dim
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        want = ["t", "node"] + [f"v{j}" for j in range(d)]
        if header is None or [h.strip() for h in header] != want:
            raise DataError(f"{path}: header must be {','.join(want)}")
        rows = []
        for lineno, rec in enumerate(reader, 2):
            if not rec:
                continue
            if len(rec) != d + 2:
                raise DataError(f"{path}:{lineno}: expected {d + 2} fields")
            try:
                rows.append((int(rec[0]), int(rec[1]), [float(v) for v in rec[2:]]))
            except ValueError:
                raise DataError(f"{path}:{lineno}: unparsable field") from None
    if not rows:
        raise MissingCell(f"{path}: no data rows")
    keys = np.array([(t, i) for t, i, _ in rows], dtype=np.int64)
    if (keys < 0).any() or (keys[:, 1] >= n).any():
        raise DataError(f"{path}: node id outside [0, {n})")
    flat = keys[:, 0] * n + keys[:, 1]
    step = np.diff(flat)
    if (step == 0).any():
        t, i = keys[1:][step == 0][0]
        raise DuplicateCell(f"{path}: duplicate cell t={t} node={i}")
    if (step < 0).any():
        raise OrderingError(f"{path}: rows not sorted by t then node")
    t_len = int(keys[-1, 0]) + 1
    if len(rows) != t_len * n or flat[0] != 0:
        have = np.zeros(t_len * n, dtype=bool)
        have[flat] = True
        t, i = divmod(int(np.flatnonzero(~have)[0]), n) if (~have).any() else (t_len, 0)
        raise MissingCell(f"{path}: missing cell t={t} node={i}")
    values = np.array([v for _, _, v in rows], dtype=np.float64).reshape(t_len, n, d)
    if not np.isfinite(values).all():
        t, i, _ = np.argwhere(~np.isfinite(values))[0]
        raise NonFiniteValue(f"{path}: non-finite value at t={t} node={i}")
    return SignalSeries(values, manifest.start_slot)


def synth_diffusion(seed, num_nodes, length, feature_dim=2, steps_per_day=48,
                    noise=0.3, taps=12, decay=0.9, flow=1.0):
    """Ring-graph diffusion of a daily forcing plus innovations.

    Forcing at node n is a sinusoid of the day with a per-node phase; each
    feature has its own phase offset.  The observed signal is a finite
    impulse response of the forcing through ``taps`` steps of ring
    diffusion, so every value depends on neighbours' recent history.  With
    ``noise=0`` the output is exactly periodic once ``taps - 1`` steps have
    passed.
    """
    if num_nodes < 1 or length < 1:
        raise ConfigError("num_nodes and length must be >= 1")
    rng = np.random.Generator(np.random.Philox(seed))
    n, d, s = num_nodes, feature_dim, steps_per_day
    # one slot of phase per hop keeps the daily wave coherent as it travels
    node_phase = 2 * np.pi * np.arange(n) / s + rng.uniform(0, 0.5, n)
    feat_phase = np.pi * np.arange(d) / 3
    amp = 1.0 + 0.5 * rng.uniform(size=(n, 1))
    t = np.arange(-(taps - 1), length)
    # angle indexes the slot within the day, so the forcing repeats every s steps
    ang = 2 * np.pi * (np.mod(t, s) / s)[:, None, None]
    force = amp * np.sin(ang + node_phase[None, :, None] + feat_phase[None, None, :])
    force = force + 0.3 * np.sin(2 * ang + node_phase[None, :, None])
    force = force + noise * rng.standard_normal(force.shape)

    # directed ring: each step a share ``flow`` of the signal moves downstream
    idx = np.arange(n)
    ring = (1.0 - flow) * np.eye(n)
    ring[idx, (idx - 1) % n] += flow
    out = np.zeros((length, n, d))
    kernel = np.eye(n)
    norm = 0.0
    for lag in range(taps):
        w = decay ** lag
        src = force[taps - 1 - lag: taps - 1 - lag + length]
        out += w * np.einsum("ij,tjf->tif", kernel, src)
        norm += w
        kernel = ring @ kernel
    return SignalSeries(out / norm + 2.0, 0)


# --------------------------------------------------------------- normalizing

@dataclass
class Normalizer:
    mean: np.ndarray  # (d,)
    std: np.ndarray   # (d,)

    @classmethod
    def fit(cls, values):
        values = np.asarray(values, dtype=np.float64)
        flat = values.reshape(-1, values.shape[-1])
        std = flat.std(axis=0)
        std = np.where(std > 0, std, 1.0)
        return cls(flat.mean(axis=0), std)

    def apply(self, x):
        return (np.asarray(x, dtype=np.float64) - self.mean) / self.std

    def invert(self, z):
        return np.asarray(z, dtype=np.float64) * self.std + self.mean


# ---------------------------------------------------------------- windowing

@dataclass
class WindowSet:
    """Stride-1 windows: inputs (W, T_in, N, d), targets (W, T_out, N, d), slots (W, T_in)."""
    x: np.ndarray
    y: np.ndarray
    slots: np.ndarray

    def __len__(self):
        return self.x.shape[0]

    def nodes(self, idx):
        idx = np.asarray(idx)
        return WindowSet(self.x[:, :, idx], self.y[:, :, idx], self.slots)

    def take(self, rows):
        return WindowSet(self.x[rows], self.y[rows], self.slots[rows])


def make_windows(values, start_slot, t_in, t_out):
    values = np.asarray(values, dtype=np.float64)
    count = values.shape[0] - t_in - t_out + 1
    if count < 1:
        raise SplitTooShort(f"{values.shape[0]} steps cannot hold a {t_in}+{t_out} window")
    view = np.lib.stride_tricks.sliding_window_view(values, t_in + t_out, axis=0)
    view = np.moveaxis(view, -1, 1)[:count]
    slots = start_slot + np.arange(count)[:, None] + np.arange(t_in)[None, :]
    return WindowSet(view[:, :t_in].copy(), view[:, t_in:].copy(), slots)


def split_lengths(length, ratios=DEFAULT_RATIOS):
    ratios = np.asarray(ratios, dtype=np.float64)
    if ratios.shape != (3,) or (ratios < 0).any() or not math.isclose(ratios.sum(), 1.0):
        raise ConfigError("split ratios must be three non-negative numbers summing to 1")
    n_train = int(math.floor(ratios[0] * length))
    n_val = int(math.floor(ratios[1] * length))
    return n_train, n_val, length - n_train - n_val


def split_and_window(series, t_in, t_out, ratios=DEFAULT_RATIOS, normalizer=None):
    """Chronological split, then windows within each split.

    Returns ``(splits, normalizer)`` where ``splits`` maps train/val/test to
    :class:`WindowSet` of normalized values.  The normalizer is fitted on
    the training slice unless one is passed in.
    """
    values = series.values
    lens = split_lengths(values.shape[0], ratios)
    bounds = np.cumsum((0,) + lens)
    if normalizer is None:
        normalizer = Normalizer.fit(values[:bounds[1]])
    out = {}
    for name, lo, hi in zip(("train", "val", "test"), bounds[:-1], bounds[1:]):
        try:
            out[name] = make_windows(normalizer.apply(values[lo:hi]),
                                     series.start_slot + int(lo), t_in, t_out)
        except SplitTooShort as exc:
            raise SplitTooShort(f"{name} split: {exc}") from None
    return out, normalizer


# --------------------------------------------------------------- partitions

def partition_sizes(parts):
    return [len(p) for p in parts]


def load_partition(path, num_nodes):
    """Read a ``node,client`` table into per-client node index arrays."""
    owner = {}
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != ["node", "client"]:
            raise PartitionError(f"{path}: header must be node,client")
        for lineno, rec in enumerate(reader, 2):
            if not rec:
                continue
            try:
                node, client = int(rec[0]), int(rec[1])
            except (ValueError, IndexError):
                raise PartitionError(f"{path}:{lineno}: bad row") from None
            if not 0 <= node < num_nodes:
                raise PartitionError(f"{path}:{lineno}: node {node} outside [0, {num_nodes})")
            if node in owner:
                raise PartitionError(f"{path}:{lineno}: node {node} assigned twice")
            owner[node] = client
    return partition_from_owners([owner.get(i, -1) for i in range(num_nodes)])


def partition_from_owners(owners):
    owners = np.asarray(owners, dtype=np.int64)
    if (owners < 0).any():
        raise PartitionError(f"node {int(np.flatnonzero(owners < 0)[0])} is unassigned")
    m = int(owners.max()) + 1
    used = np.unique(owners)
    if len(used) != m:
        raise PartitionError(f"client ids must be contiguous from 0, got {used.tolist()}")
    return [np.flatnonzero(owners == c) for c in range(m)]


def write_partition(path, parts):
    rows = sorted((int(node), c) for c, idx in enumerate(parts) for node in idx)
    with open(path, "w") as fh:
        fh.write("node,client\n")
        for node, c in rows:
            fh.write(f"{node},{c}\n")


# --------------------------------------------------------------- checkpoints

def save_checkpoint(path, arrays):
    """Write ``path`` (name/shape lines) and ``path + '.bin'`` (little-endian f64)."""
    with open(path, "w") as fh, open(path + ".bin", "wb") as blob:
        for name, arr in arrays.items():
            arr = np.ascontiguousarray(arr, dtype="<f8")
            fh.write(f"{name}={','.join(str(s) for s in arr.shape)}\n")
            blob.write(arr.tobytes())


def load_checkpoint(path):
    shapes = {k: tuple(int(s) for s in v.split(",") if s) for k, v in read_kv(path).items()}
    raw = np.fromfile(path + ".bin", dtype="<f8")
    want = sum(int(np.prod(s)) for s in shapes.values())
    if raw.size != want:
        raise ShapeError(f"checkpoint blob holds {raw.size} values, manifest needs {want}")
    out, pos = {}, 0
    for name, shape in shapes.items():
        size = int(np.prod(shape))
        out[name] = raw[pos:pos + size].reshape(shape).astype(np.float64)
        pos += size
    return out
