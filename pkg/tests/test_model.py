import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from fedstgd import ops
from fedstgd.errors import ConfigError, ShapeError
from fedstgd.model import cell
from fedstgd.model import federated as fed
from fedstgd.model.params import (MODES, HyperConfig, flatten, init_params, param_count,
                                  unflatten)
from fedstgd.protocol.collective import run_lockstep
from fedstgd.protocol.partition import partition_graph
from fedstgd.protocol.trainer import stack_clients
from fedstgd.verify import (check_gradients, check_hidden_bound, gamma_order_bug,
                            random_instance, small_config)


def sigmoid(x):
    return 1 / (1 + np.exp(-x))


def test_dynamic_adjacency_formula():
    rng = np.random.default_rng(0)
    e, x = rng.normal(size=(5, 3)), rng.normal(size=(5, 2))
    eta = 0.7
    want = (1 + 0.3 * sigmoid(np.tanh(x @ x.T))) * (e @ e.T + eta)
    got = cell.dynamic_adjacency(cell.self_adjacency(e), cell.periodic_discriminant(x), eta, 0.3)
    assert np.allclose(got, want, atol=1e-12)
    assert np.array_equal(got, got.T)


def test_trend_factor_is_row_dot_product():
    a, b = np.array([[1.0, 2.0], [0.0, 1.0]]), np.array([[3.0, 1.0], [2.0, 2.0]])
    assert cell.trend_factor(a, b).tolist() == [5.0, 2.0]
    with pytest.raises(ShapeError):
        cell.trend_factor(a, b[:, :1])


def test_augmented_embedding_rows_sum_to_one():
    cfg = small_config()
    p = init_params(cfg, 0)
    e = np.random.default_rng(1).normal(size=(6, cfg.d_node))
    for mode in ("full", "no_gnea"):
        aug = fed.augment_embedding(e, p, cfg.replace(mode=mode))
        assert np.allclose(aug.sum(axis=-1), 1.0)


def _lockstep(cfg, m, num_nodes=8, batch=3, seed=0):
    params, e_node, x, slots = random_instance(cfg, num_nodes, batch, seed)
    parts = partition_graph(num_nodes, m)
    traces = [[] for _ in parts]
    gens = [fed.client_forward(params, e_node[idx], x[:, :, idx], slots, cfg, traces[c])
            for c, idx in enumerate(parts)]
    preds = run_lockstep(gens, intra_only=cfg.mode == "intra_only")
    pred = stack_clients([ops.value(p) for p in preds], parts, axis=1)
    blocks = parts if cfg.mode == "intra_only" else None
    ref = ops.value(fed.central_forward(params, e_node, x, slots, cfg, "approx", blocks))
    return pred, ref


@given(st.integers(1, 8), st.integers(0, 1000))
def test_clients_match_monolithic(m, seed):
    pred, ref = _lockstep(small_config(t_in=3), m, seed=seed)
    assert np.abs(pred - ref).max() <= 1e-9


@pytest.mark.parametrize("mode", MODES)
def test_every_mode_matches_its_monolithic_form(mode):
    pred, ref = _lockstep(small_config(t_in=3, mode=mode), 3)
    assert np.abs(pred - ref).max() <= 1e-9


def test_gamma_order_bug_is_detected():
    cfg = small_config(t_in=3, d_phi=2, d_psi=3)
    with gamma_order_bug():
        pred, ref = _lockstep(cfg, 2)
    assert np.abs(pred - ref).max() > 1e-6


def test_single_client_share_equals_approx_adjacency():
    rng = np.random.default_rng(5)
    phi = ops.softmax_rows(rng.normal(size=(4, 3)))
    aug = ops.softmax_rows(rng.normal(size=(4, 2)))
    inp = rng.normal(size=(4, 5))
    eta = 0.4
    sp, sq = fed.p_share(phi, inp), fed.q_share(phi, aug, inp)
    got = fed.combine_l(phi, aug, eta, sp, sq)
    want = fed.approx_adjacency(phi, aug, eta) @ inp
    assert np.allclose(got, want, atol=1e-12)


def test_share_rows_do_not_depend_on_node_count():
    cfg = small_config(d_phi=3, d_psi=2)
    rng = np.random.default_rng(6)
    for n in (1, 4, 9):
        phi, aug, inp = rng.random((n, 3)), rng.random((n, 2)), rng.normal(size=(n, 5))
        assert fed.p_share(phi, inp).shape == (cfg.phi_width, 5)
        assert fed.q_share(phi, aug, inp).shape == (cfg.phi_width * cfg.psi_width, 5)


def test_exact_and_approx_forward_shapes():
    cfg = small_config()
    params, e_node, x, slots = random_instance(cfg, 5, 2, 0)
    for adjacency in ("exact", "approx"):
        out = ops.value(fed.central_forward(params, e_node, x, slots, cfg, adjacency))
        assert out.shape == (2, 5, cfg.t_out * cfg.feature_dim)
    with pytest.raises(ValueError):
        fed.central_forward(params, e_node, x, slots, cfg, "bogus")
    y = fed.forecast(x[0], params, e_node, cfg)
    assert y.shape == (cfg.t_out, 5, cfg.feature_dim)
    with pytest.raises(ShapeError):
        fed.forecast(x[0, :1], params, e_node, cfg)


@given(st.integers(1, 3), st.integers(1, 4), st.integers(1, 5), st.integers(1, 3))
def test_frames_rows_round_trip(b, t, n, d):
    y = np.random.default_rng(0).normal(size=(b, t, n, d))
    rows = fed.frames_to_rows(y)
    assert rows.shape == (b, n, t * d)
    assert np.array_equal(fed.rows_to_frames(rows, t), y)


def test_params_flatten_round_trip():
    cfg = small_config()
    p = init_params(cfg, 3)
    vec = flatten(p, cfg)
    assert vec.size == param_count(cfg)
    back = unflatten(vec, cfg)
    assert all(np.array_equal(back[k], p[k]) for k in p)
    with pytest.raises(ShapeError):
        unflatten(vec[:-1], cfg)


def test_init_is_seeded():
    cfg = small_config()
    assert np.array_equal(flatten(init_params(cfg, 1), cfg), flatten(init_params(cfg, 1), cfg))
    assert not np.array_equal(flatten(init_params(cfg, 1), cfg), flatten(init_params(cfg, 2), cfg))


@pytest.mark.parametrize("bad", [dict(mode="nope"), dict(activation="swish"), dict(hidden=0),
                                 dict(alpha=-1.0), dict(t_in=-2)])
def test_config_validation(bad):
    with pytest.raises(ConfigError):
        HyperConfig(**bad)


def test_unknown_activation_rejected_by_ops():
    with pytest.raises(ConfigError):
        ops.activation("gelu", np.ones(2))


def test_gradients_small_model():
    assert check_gradients().passed


def test_hidden_state_bounded():
    assert check_hidden_bound(rollouts=10, steps=10).passed
