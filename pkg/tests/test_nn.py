import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from gradcheck import numeric_grad, rel_error
from heartsae import nn

RTOL = 1e-5
TRIALS = 100


def _rng(seed):
    return np.random.default_rng(seed)


# -- dense -------------------------------------------------------------------

def test_dense_identity_linear():
    layer = nn.Dense(np.eye(3), np.zeros(3), "linear")
    x = np.array([1.5, -2.0, 0.25])
    y, _ = nn.dense_forward(layer, x)
    assert np.array_equal(y, x)


def test_dense_arithmetic():
    layer = nn.Dense([[1.0, 1.0]], [0.0], "linear")
    y, _ = nn.dense_forward(layer, np.array([2.0, 3.0]))
    assert y.tolist() == [5.0]


def test_sigmoid_at_zero():
    layer = nn.Dense([[0.0]], [0.0], "sigmoid")
    y, _ = layer.forward(np.array([7.0]))
    assert y[0] == 0.5


def test_dense_shape_mismatch():
    layer = nn.Dense(np.ones((2, 3)), np.zeros(2))
    with pytest.raises(nn.ShapeError):
        layer.forward(np.ones(4))
    with pytest.raises(nn.ShapeError):
        nn.Dense(np.ones((2, 3)), np.zeros(3))


def test_dense_zero_upstream():
    rng = _rng(0)
    layer = nn.Dense.init(rng, 4, 3, "relu")
    x = rng.normal(size=(5, 4))
    _, cache = layer.forward(x)
    gw, gb, gx = nn.dense_backward(layer, cache, np.zeros((5, 3)))
    assert not gw.any() and not gb.any() and not gx.any()


def test_dense_linear_outer_product():
    rng = _rng(1)
    layer = nn.Dense(rng.normal(size=(2, 3)), rng.normal(size=2), "linear")
    x = rng.normal(size=3)
    g = rng.normal(size=2)
    _, cache = layer.forward(x)
    gw, gb, gx = nn.dense_backward(layer, cache, g)
    assert np.allclose(gw, np.outer(g, x))
    assert np.allclose(gb, g)
    assert np.allclose(gx, layer.weights.T @ g)


def _dense_gradcheck(seed, activation):
    rng = _rng(seed)
    n_in, n_out, batch = rng.integers(1, 7, size=3)
    layer = nn.Dense(rng.normal(size=(n_out, n_in)), rng.normal(size=n_out), activation)
    x = rng.normal(size=(batch, n_in))
    upstream = rng.normal(size=(batch, n_out))

    def loss():
        return float(np.sum(layer.forward(x)[0] * upstream))

    _, cache = layer.forward(x)
    gw, gb, gx = nn.dense_backward(layer, cache, upstream)
    return [
        rel_error(gw, numeric_grad(loss, layer.weights)),
        rel_error(gb, numeric_grad(loss, layer.bias)),
        rel_error(gx, numeric_grad(loss, x)),
    ]


@pytest.mark.parametrize("activation", nn.ACTIVATIONS)
def test_dense_gradients_match_finite_differences(activation):
    worst = max(max(_dense_gradcheck(seed, activation)) for seed in range(TRIALS))
    assert worst < RTOL


# -- convolution -------------------------------------------------------------

def test_conv_identity_kernel():
    layer = nn.Conv2D(np.ones((1, 1, 1, 1)), np.zeros(1))
    x = _rng(2).normal(size=(2, 1, 3, 4))
    y, _ = nn.conv2d_forward(layer, x)
    assert np.array_equal(y, x)


def test_conv_all_ones_kernel():
    layer = nn.Conv2D(np.ones((1, 1, 2, 2)), np.zeros(1))
    y, _ = layer.forward(np.array([[[[1.0, 2.0], [3.0, 4.0]]]]))
    assert y.tolist() == [[[[10.0]]]]


def test_conv_matches_direct_loops():
    rng = _rng(3)
    layer = nn.Conv2D(rng.normal(size=(3, 2, 2, 3)), rng.normal(size=3))
    x = rng.normal(size=(2, 2, 5, 6))
    y, _ = layer.forward(x)
    ref = np.zeros((2, 3, 4, 4))
    for b in range(2):
        for f in range(3):
            for i in range(4):
                for j in range(4):
                    ref[b, f, i, j] = np.sum(x[b, :, i:i + 2, j:j + 3] * layer.kernels[f]) + layer.bias[f]
    assert np.allclose(y, ref, rtol=0, atol=1e-12)


def test_conv_errors():
    layer = nn.Conv2D(np.ones((1, 2, 3, 3)), np.zeros(1))
    with pytest.raises(nn.ShapeError):
        layer.forward(np.ones((1, 1, 4, 4)))  # channel mismatch
    with pytest.raises(nn.ShapeError):
        layer.forward(np.ones((1, 2, 2, 4)))  # kernel taller than input


def _conv_gradcheck(seed):
    rng = _rng(seed)
    c, f = rng.integers(1, 3, size=2)
    kh, kw = rng.integers(1, 4, size=2)
    stride = tuple(rng.integers(1, 3, size=2)) if seed % 3 == 0 else (1, 1)
    h, w = kh + rng.integers(0, 4), kw + rng.integers(0, 4)
    layer = nn.Conv2D(rng.normal(size=(f, c, kh, kw)), rng.normal(size=f), stride)
    x = rng.normal(size=(int(rng.integers(1, 3)), c, h, w))
    y, cache = layer.forward(x)
    upstream = rng.normal(size=y.shape)

    def loss():
        return float(np.sum(layer.forward(x)[0] * upstream))

    gk, gb, gx = nn.conv2d_backward(layer, cache, upstream)
    return max(
        rel_error(gk, numeric_grad(loss, layer.kernels)),
        rel_error(gb, numeric_grad(loss, layer.bias)),
        rel_error(gx, numeric_grad(loss, x)),
    )


def test_conv_gradients_match_finite_differences():
    assert max(_conv_gradcheck(seed) for seed in range(TRIALS)) < RTOL


# -- max pooling -------------------------------------------------------------

def test_maxpool_basic():
    y, _ = nn.maxpool2d(np.array([[[[1.0, 2.0], [3.0, 4.0]]]]), (2, 2))
    assert y.tolist() == [[[[4.0]]]]


def test_maxpool_tie_goes_to_first_position():
    x = np.full((1, 1, 2, 4), 3.0)
    y, cache = nn.maxpool2d(x, (2, 2))
    g = nn.maxpool2d_backward(cache, np.array([[[[1.0, 2.0]]]]))
    expected = np.zeros((1, 1, 2, 4))
    expected[0, 0, 0, 0] = 1.0
    expected[0, 0, 0, 2] = 2.0
    assert np.array_equal(g, expected)


def test_maxpool_brute_force_oracle():
    rng = _rng(4)
    for _ in range(20):
        x = rng.normal(size=(1, 1, 4, 4))
        y, _ = nn.maxpool2d(x, (2, 2))
        ref = [[max(x[0, 0, 2 * i + a, 2 * j + b] for a in range(2) for b in range(2)) for j in range(2)]
               for i in range(2)]
        assert y[0, 0].tolist() == ref


def test_maxpool_non_divisible():
    with pytest.raises(nn.ShapeError):
        nn.maxpool2d(np.ones((1, 1, 3, 4)), (2, 2))


def _pool_gradcheck(seed):
    rng = _rng(seed)
    ph, pw = rng.integers(1, 4, size=2)
    ho, wo = rng.integers(1, 3, size=2)
    x = rng.normal(size=(int(rng.integers(1, 3)), int(rng.integers(1, 3)), ph * ho, pw * wo))
    y, cache = nn.maxpool2d(x, (ph, pw))
    upstream = rng.normal(size=y.shape)

    def loss():
        return float(np.sum(nn.maxpool2d(x, (ph, pw))[0] * upstream))

    return rel_error(nn.maxpool2d_backward(cache, upstream), numeric_grad(loss, x))


def test_maxpool_gradients_match_finite_differences():
    assert max(_pool_gradcheck(seed) for seed in range(TRIALS)) < RTOL


@settings(max_examples=50, deadline=None)
@given(arrays(np.float64, (2, 3, 4, 6), elements=st.floats(-5, 5)), arrays(np.float64, (2, 3, 2, 3),
                                                                            elements=st.floats(-5, 5)))
def test_maxpool_conserves_gradient_mass(x, g):
    _, cache = nn.maxpool2d(x, (2, 2))
    routed = nn.maxpool2d_backward(cache, g)
    assert math.isclose(routed.sum(), g.sum(), rel_tol=1e-12, abs_tol=1e-12)


# -- losses ------------------------------------------------------------------

def test_bce_values():
    assert nn.bce_loss([1 - 1e-12], [1])[0] < 1e-6
    assert math.isclose(nn.bce_loss([0.5], [1])[0], math.log(2), rel_tol=1e-12)
    # -ln(0.9) = 0.10536051565782628
    assert math.isclose(nn.bce_loss([0.9], [1])[0], 0.10536051565782628, rel_tol=1e-12)


def test_bce_length_mismatch():
    with pytest.raises(nn.ShapeError):
        nn.bce_loss([0.5, 0.5], [1])


def _bce_gradcheck(seed):
    rng = _rng(seed)
    n = int(rng.integers(1, 7))
    p = rng.uniform(0.05, 0.95, size=n)
    y = rng.integers(0, 2, size=n).astype(float)
    _, g = nn.bce_loss(p, y)
    return rel_error(g, numeric_grad(lambda: nn.bce_loss(p, y)[0], p))


def test_bce_gradient_matches_finite_differences():
    assert max(_bce_gradcheck(seed) for seed in range(TRIALS)) < RTOL


@settings(max_examples=100, deadline=None)
@given(arrays(np.float64, 5, elements=st.floats(0, 1)), arrays(np.int64, 5, elements=st.integers(0, 1)))
def test_bce_non_negative(p, y):
    assert nn.bce_loss(p, y)[0] >= 0


def test_mse_values():
    assert nn.mse_loss(np.ones((2, 3)), np.ones((2, 3)))[0] == 0
    assert nn.mse_loss(np.array([[0.0, 0.0]]), np.array([[3.0, 4.0]]))[0] == 25.0
    # batch mean of per-sample sums
    assert nn.mse_loss(np.zeros((2, 2)), np.array([[3.0, 4.0], [0.0, 1.0]]))[0] == 13.0


def _mse_gradcheck(seed):
    rng = _rng(seed)
    shape = tuple(rng.integers(1, 7, size=2))
    xhat, x = rng.normal(size=shape), rng.normal(size=shape)
    _, g = nn.mse_loss(xhat, x)
    return rel_error(g, numeric_grad(lambda: nn.mse_loss(xhat, x)[0], xhat))


def test_mse_gradient_matches_finite_differences():
    assert max(_mse_gradcheck(seed) for seed in range(TRIALS)) < 1e-6


@settings(max_examples=100, deadline=None)
# eighths in [-10, 10]: nonzero differences are at least 1/8, so squares cannot underflow to 0
@given(arrays(np.float64, (3, 4), elements=st.integers(-80, 80).map(lambda v: v / 8)),
       arrays(np.float64, (3, 4), elements=st.integers(-80, 80).map(lambda v: v / 8)))
def test_mse_zero_iff_equal(a, b):
    loss = nn.mse_loss(a, b)[0]
    assert loss >= 0
    assert (loss == 0) == np.array_equal(a, b)


def test_l1_penalty():
    loss, g = nn.l1_penalty(np.array([1.0, -2.0, 0.0]), 0.5)
    assert loss == 1.5 and g.tolist() == [0.5, -0.5, 0.0]
    loss, g = nn.l1_penalty(np.array([1.0, -2.0]), 0.0)
    assert loss == 0 and not g.any()
    with pytest.raises(ValueError):
        nn.l1_penalty(np.ones(2), -1.0)


def _l1_gradcheck(seed):
    rng = _rng(seed)
    shape = tuple(rng.integers(1, 7, size=2))
    # keep entries off the kink at 0, where |a| has no derivative to compare against
    a = rng.choice([-1.0, 1.0], size=shape) * rng.uniform(0.01, 3.0, size=shape)
    lam = float(rng.uniform(0, 2))
    _, g = nn.l1_penalty(a, lam)
    return rel_error(g, numeric_grad(lambda: nn.l1_penalty(a, lam)[0], a))


def test_l1_gradient_matches_finite_differences():
    assert max(_l1_gradcheck(seed) for seed in range(TRIALS)) < RTOL


# -- Adam --------------------------------------------------------------------

def test_adam_zero_gradient_is_fixed_point():
    p = {"w": np.array([1.0, -2.0])}
    state = nn.AdamState()
    for t in range(1, 6):
        nn.adam_step(p, {"w": np.zeros(2)}, state)
        assert p["w"].tolist() == [1.0, -2.0] and state.t == t


@pytest.mark.parametrize("g", [3.0, -0.02, 1e3])
def test_adam_first_step_moves_lr(g):
    p = {"w": np.array([0.0])}
    nn.adam_step(p, {"w": np.array([g])}, nn.AdamState(lr=0.01))
    assert math.isclose(p["w"][0], -0.01 * math.copysign(1, g), rel_tol=1e-6)


def test_adam_quadratic():
    p = {"w": np.array([0.0])}
    state = nn.AdamState(lr=0.1)
    for _ in range(200):
        nn.adam_step(p, {"w": 2 * (p["w"] - 3.0)}, state)
    assert abs(p["w"][0] - 3.0) < 0.05


def test_adam_shape_mismatch():
    with pytest.raises(nn.ShapeError):
        nn.adam_step({"w": np.zeros(2)}, {"w": np.zeros(3)}, nn.AdamState())


# -- misc --------------------------------------------------------------------

def test_forward_is_deterministic():
    rng = _rng(5)
    layer = nn.Conv2D.init(rng, 1, 4, (3, 3))
    x = rng.normal(size=(3, 1, 6, 6))
    assert np.array_equal(layer.forward(x)[0], layer.forward(x.copy())[0])


def test_check_finite():
    with pytest.raises(nn.NumericalError):
        nn.check_finite(np.array([1.0, np.nan]))


def test_checkpoint_round_trip(tmp_path):
    rng = _rng(6)
    tensors = {"a": rng.normal(size=(2, 3)), "b": rng.normal(size=(4,)), "c": rng.normal(size=(1, 2, 2, 2))}
    nn.save_checkpoint(tmp_path / "ck.json", tensors, {"note": "x"})
    back, header = nn.load_checkpoint(tmp_path / "ck.json")
    assert header == {"note": "x"}
    for k in tensors:
        assert np.array_equal(back[k], tensors[k])


def test_checkpoint_rejects_other_documents(tmp_path):
    (tmp_path / "x.json").write_text('{"format": "other", "version": 1}')
    with pytest.raises(ValueError):
        nn.load_checkpoint(tmp_path / "x.json")
