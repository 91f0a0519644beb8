import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from fedstgd import data
from fedstgd.errors import (ConfigError, DataError, DuplicateCell, MissingCell, NonFiniteValue,
                            OrderingError, PartitionError, ShapeError, SplitTooShort)


def write_table(tmp_path, rows, n=2, d=1, header=None):
    sig = tmp_path / "sig.csv"
    sig.write_text((header or "t,node," + ",".join(f"v{j}" for j in range(d))) + "\n"
                   + "".join(r + "\n" for r in rows))
    man = data.DatasetManifest("x", n, d, 4, "sig.csv")
    data.write_manifest(tmp_path / "m.txt", man)
    return tmp_path / "m.txt"


def test_manifest_round_trip_and_relative_paths(tmp_path):
    series = data.synth_diffusion(0, 3, 20)
    data.write_signals(tmp_path / "s.csv", series)
    man = data.DatasetManifest("demo", 3, 2, 48, "s.csv", start_slot=5)
    data.write_manifest(tmp_path / "m.txt", man)
    loaded = data.load_dataset(str(tmp_path / "m.txt"))
    assert np.array_equal(loaded.values, series.values)
    assert loaded.start_slot == 5


def test_manifest_unknown_key(tmp_path):
    (tmp_path / "m.txt").write_text("name=a\nnum_nodes=2\nfeature_dim=1\nsteps_per_day=4\n"
                                    "signal_path=s.csv\ncolour=blue\n")
    with pytest.raises(ConfigError):
        data.read_manifest(tmp_path / "m.txt")


@pytest.mark.parametrize("rows,err", [
    (["0,0,1", "0,1,1", "1,0,1"], MissingCell),
    (["0,0,1", "0,1,1", "0,1,2", "1,0,1", "1,1,1"], DuplicateCell),
    (["0,1,1", "0,0,1", "1,0,1", "1,1,1"], OrderingError),
    (["0,0,1", "0,1,nan", "1,0,1", "1,1,1"], NonFiniteValue),
    (["0,0,1", "0,1,1", "1,0,1", "1,5,1"], DataError),
    (["0,0,1", "0,1"], DataError),
    (["0,0,abc", "0,1,1"], DataError),
    ([], MissingCell),
])
def test_load_errors(tmp_path, rows, err):
    with pytest.raises(err):
        data.load_dataset(write_table(tmp_path, rows))


def test_bad_header(tmp_path):
    with pytest.raises(DataError):
        data.load_dataset(write_table(tmp_path, ["0,0,1"], header="time,node,v0"))


def test_window_counts_and_split():
    assert data.split_lengths(2000) == (1400, 200, 400)
    assert data.split_lengths(10) == (7, 1, 2)
    series = data.synth_diffusion(0, 4, 2000)
    splits, _ = data.split_and_window(series, 4, 4)
    assert [len(splits[k]) for k in ("train", "val", "test")] == [1393, 193, 393]
    w = splits["test"]
    assert w.x.shape == (393, 4, 4, 2) and w.y.shape == (393, 4, 4, 2)
    assert w.slots[0].tolist() == [1600, 1601, 1602, 1603]
    with pytest.raises(ConfigError):
        data.split_lengths(10, (0.5, 0.5, 0.5))


def test_windows_are_contiguous_slices():
    vals = np.arange(12.0).reshape(12, 1, 1)
    w = data.make_windows(vals, 0, 3, 2)
    assert len(w) == 8
    assert w.x[2, :, 0, 0].tolist() == [2, 3, 4] and w.y[2, :, 0, 0].tolist() == [5, 6]
    with pytest.raises(SplitTooShort):
        data.make_windows(vals[:4], 0, 3, 2)


def test_normalizer_fit_on_train_only():
    series = data.synth_diffusion(2, 3, 300)
    _, norm = data.split_and_window(series, 4, 4)
    train = series.values[:210]
    assert np.allclose(norm.mean, train.reshape(-1, 2).mean(axis=0))


@given(st.integers(0, 100))
def test_normalizer_round_trip(seed):
    x = np.random.default_rng(seed).normal(3, 2, size=(20, 4, 2))
    norm = data.Normalizer.fit(x)
    assert np.allclose(norm.invert(norm.apply(x)), x)
    const = data.Normalizer.fit(np.ones((5, 2, 1)))
    assert const.std.tolist() == [1.0]


def test_synth_is_deterministic_and_periodic_without_noise():
    a, b = data.synth_diffusion(7, 5, 200), data.synth_diffusion(7, 5, 200)
    assert np.array_equal(a.values, b.values)
    clean = data.synth_diffusion(7, 5, 200, noise=0.0).values
    assert np.allclose(clean[48:], clean[:-48], atol=1e-12)


def test_synth_is_autocorrelated():
    v = data.synth_diffusion(0, 16, 2000).values
    z = v - v.mean(axis=0)
    lag1 = (z[1:] * z[:-1]).sum() / (z * z).sum()
    assert lag1 > 0.5


def test_synth_rejects_empty():
    with pytest.raises(ConfigError):
        data.synth_diffusion(0, 0, 10)


def test_partition_file_round_trip(tmp_path):
    parts = [np.array([0, 3]), np.array([1, 2, 4])]
    data.write_partition(tmp_path / "p.csv", parts)
    back = data.load_partition(tmp_path / "p.csv", 5)
    assert [p.tolist() for p in back] == [[0, 3], [1, 2, 4]]


@pytest.mark.parametrize("body", ["node,client\n0,0\n", "node,client\n0,0\n1,2\n",
                                  "node,client\n0,0\n0,1\n", "node,client\n0,0\n7,0\n",
                                  "a,b\n0,0\n1,0\n", "node,client\n0,x\n1,0\n"])
def test_partition_errors(tmp_path, body):
    (tmp_path / "p.csv").write_text(body)
    with pytest.raises(PartitionError):
        data.load_partition(tmp_path / "p.csv", 2)


def test_checkpoint_round_trip(tmp_path):
    arrays = {"a": np.arange(6.0).reshape(2, 3), "b": np.array([np.pi])}
    data.save_checkpoint(str(tmp_path / "ck"), arrays)
    back = data.load_checkpoint(str(tmp_path / "ck"))
    assert all(np.array_equal(back[k], arrays[k]) for k in arrays)
    (tmp_path / "ck.bin").write_bytes(b"\0" * 8)
    with pytest.raises(ShapeError):
        data.load_checkpoint(str(tmp_path / "ck"))
