import numpy as np
import pytest

from fewshot_haad.encoder import (
    EncoderConfig,
    EncoderParams,
    backward,
    check_compatible,
    forward,
    init_params,
    node_features,
    param_shapes,
)
from fewshot_haad.errors import CompatibilityError, ContractError


def _perturbed(params, rng, scale=0.5):
    return params.replace({k: v + scale * rng.standard_normal(v.shape) for k, v in params.tensors.items()})


def _fd_grads(params, c, g, h=1e-6):
    out = {}
    for name, t in params.tensors.items():
        d = np.zeros_like(t)
        for idx in np.ndindex(t.shape):
            up = dict(params.tensors)
            up[name] = t.copy()
            up[name][idx] += h
            dn = dict(params.tensors)
            dn[name] = t.copy()
            dn[name][idx] -= h
            d[idx] = (np.sum(g * forward(params.replace(up), c)) - np.sum(g * forward(params.replace(dn), c))) / (2 * h)
        out[name] = d
    d = np.zeros_like(c)
    for idx in np.ndindex(c.shape):
        cp, cm = c.copy(), c.copy()
        cp[idx] += h
        cm[idx] -= h
        d[idx] = (np.sum(g * forward(params, cp)) - np.sum(g * forward(params, cm))) / (2 * h)
    out["coeffs"] = d
    return out


def test_backward_matches_finite_differences():
    rng = np.random.default_rng(7)
    worst = 0.0
    for trial in range(100):
        j = int(rng.integers(2, 5))
        f = int(rng.integers(2, 9))
        m = int(rng.integers(1, 3))
        cfg = EncoderConfig(joint_count=j, dct_components=m, hidden_dim=f, blocks=int(rng.integers(1, 3)),
                            frame_length=8, activation=("tanh", "identity")[trial % 2])
        params = _perturbed(init_params(cfg, trial), rng, 0.3)
        batch = int(rng.integers(1, 4))
        c = rng.standard_normal((batch, m, 3 * j))
        g = rng.standard_normal((batch, j))
        an = backward(params, c, g)
        fd = _fd_grads(params, c, g)
        for name in fd:
            denom = max(np.linalg.norm(fd[name]), 1e-8)
            worst = max(worst, np.linalg.norm(fd[name] - an[name]) / denom)
    assert worst < 1e-4, worst


def test_param_layout():
    cfg = EncoderConfig(joint_count=5, dct_components=3, hidden_dim=7, blocks=4)
    shapes = param_shapes(cfg)
    assert shapes["input.W"] == (9, 7)
    assert shapes["block3.1.A"] == (5, 5)
    assert shapes["output.W"] == (7, 7)
    assert len(shapes) == 2 * (1 + 4 * 2 + 1)


def test_init_adjacency_near_identity():
    p = init_params(EncoderConfig(joint_count=6, hidden_dim=8), 0)
    for k, v in p.tensors.items():
        if k.endswith(".A"):
            assert np.max(np.abs(v - np.eye(6))) <= 1e-2
    again = init_params(EncoderConfig(joint_count=6, hidden_dim=8), 0)
    for k in p.tensors:
        np.testing.assert_array_equal(p.tensors[k], again.tensors[k])


def test_node_feature_layout():
    m, j = 2, 3
    c = np.arange(m * 3 * j, dtype=float).reshape(1, m, 3 * j)
    x = node_features(c, j)
    # joint 1 sees [C[0, 3:6], C[1, 3:6]]
    np.testing.assert_array_equal(x[0, 1], np.concatenate([c[0, 0, 3:6], c[0, 1, 3:6]]))


def test_output_shapes_and_batch_consistency(rng):
    cfg = EncoderConfig(joint_count=4, dct_components=3, hidden_dim=8, frame_length=12)
    p = init_params(cfg, 1)
    c = rng.standard_normal((5, 3, 12))
    z = forward(p, c)
    assert z.shape == (5, 4)
    np.testing.assert_allclose(forward(p, c[2]), z[2], rtol=0, atol=1e-14)
    with pytest.raises(CompatibilityError):
        forward(p, rng.standard_normal((3, 15)))


def test_joint_permutation_equivariance(rng):
    # relabelling joints (and the adjacency accordingly) permutes the embedding
    cfg = EncoderConfig(joint_count=5, dct_components=2, hidden_dim=6, blocks=2, frame_length=8)
    p = _perturbed(init_params(cfg, 3), rng, 0.2)
    perm = rng.permutation(5)
    P = np.eye(5)[perm]
    q = p.replace({k: (P @ v @ P.T if k.endswith(".A") else v) for k, v in p.tensors.items()})
    c = rng.standard_normal((2, 2, 15))
    cols = np.concatenate([np.arange(3 * i, 3 * i + 3) for i in perm])
    np.testing.assert_allclose(forward(q, c[:, :, cols]), forward(p, c)[:, perm], atol=1e-12)


def test_zero_block_weights_give_identity_residual(rng):
    # with tanh, a block whose weights are zero outputs 0 and passes its input through
    base = EncoderConfig(joint_count=3, dct_components=2, hidden_dim=4, blocks=1, frame_length=8)
    deep = EncoderConfig(joint_count=3, dct_components=2, hidden_dim=4, blocks=3, frame_length=8)
    p = _perturbed(init_params(base, 0), rng, 0.3)
    t = {}
    for k in param_shapes(deep):
        if k.startswith(("input", "output", "block0")):
            t[k] = p.tensors[k]
        else:
            t[k] = np.zeros(param_shapes(deep)[k])
    q = EncoderParams(deep, t)
    c = rng.standard_normal((3, 2, 9))
    np.testing.assert_allclose(forward(q, c), forward(p, c), atol=1e-14)


def test_max_pool_tie_uses_first_index():
    cfg = EncoderConfig(joint_count=2, dct_components=1, hidden_dim=3, blocks=1, activation="identity", frame_length=4)
    t = {k: np.zeros(s) for k, s in param_shapes(cfg).items()}
    for k in t:
        if k.endswith(".A"):
            t[k] = np.eye(2)
    t["input.W"] = np.ones((3, 3))
    t["output.W"] = np.eye(3)
    p = EncoderParams(cfg, t)
    c = np.array([[1.0, 0.0, 0.0, 2.0, 0.0, 0.0]])
    z = forward(p, c)
    np.testing.assert_allclose(z, [1.0, 2.0])
    # all three features tie; the gradient goes to feature 0 only
    g = backward(p, c, np.array([1.0, 0.0]))
    np.testing.assert_allclose(g["output.W"][:, 0], [1.0, 1.0, 1.0])
    np.testing.assert_allclose(g["output.W"][:, 1:], 0.0)


def test_check_compatible():
    cfg = EncoderConfig(joint_count=24, frame_length=60)
    check_compatible(cfg, 24, 60)
    with pytest.raises(CompatibilityError):
        check_compatible(cfg, 22, 60)
    with pytest.raises(CompatibilityError):
        check_compatible(cfg, 24, 50)


def test_config_validation():
    with pytest.raises(ContractError):
        EncoderConfig(activation="gelu")
    with pytest.raises(ContractError):
        EncoderConfig(dct_components=70, frame_length=60)
