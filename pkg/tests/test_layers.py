import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from argan import layers as L
from argan import tensor as T
from argan.tensor import ShapeError, Tensor, backward, grad_check

from conftest import naive_conv2d, naive_deconv2d


def f64(a, grad=True):
    return Tensor(np.asarray(a, dtype=np.float64), requires_grad=grad)


def probe_sum(y, seed=1):
    p = np.random.default_rng(seed).standard_normal(y.shape)
    return T.mul(y, Tensor(p)).sum()


# -- conv2d ---------------------------------------------------------------

def test_conv_all_ones_gives_nine():
    y = L.conv2d(Tensor(np.ones((1, 1, 3, 3))), Tensor(np.ones((1, 1, 3, 3))), Tensor(np.zeros(1)), 1, 0)
    assert y.shape == (1, 1, 1, 1) and y.data.item() == 9.0


def test_conv_identity_kernel(rng):
    x = rng.standard_normal((2, 1, 5, 5))
    w = np.zeros((1, 1, 3, 3))
    w[0, 0, 1, 1] = 1.0
    np.testing.assert_array_equal(L.conv2d(Tensor(x), Tensor(w), None, 1, 1).data, x)


@pytest.mark.parametrize("seed", range(10))
@pytest.mark.parametrize("k,stride,pad", [(k, s, p) for k in (3, 4) for s in (1, 2) for p in (0, 1)])
def test_conv_matches_naive_loop(seed, k, stride, pad):
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((2, 3, 8, 8))
    w = rng.standard_normal((4, 3, k, k))
    b = rng.standard_normal(4)
    y, _ = L.conv2d_forward(x, w, b, stride, pad)
    assert np.max(np.abs(y - naive_conv2d(x, w, b, stride, pad))) <= 1e-12


def test_conv_errors():
    with pytest.raises(ShapeError, match="channels"):
        L.conv2d(Tensor(np.zeros((1, 2, 4, 4))), Tensor(np.zeros((1, 3, 3, 3))))
    with pytest.raises(ShapeError, match="non-positive"):
        L.conv2d(Tensor(np.zeros((1, 1, 2, 2))), Tensor(np.zeros((1, 1, 4, 4))), stride=1, pad=0)


@pytest.mark.parametrize("k,stride,pad,cin,cout", [(3, 1, 1, 3, 2), (3, 1, 1, 2, 5), (4, 2, 1, 2, 3),
                                                    (3, 2, 1, 3, 3), (3, 1, 0, 2, 2)])
def test_conv_gradients(k, stride, pad, cin, cout, rng):
    x = f64(rng.standard_normal((2, cin, 6, 6)))
    w = f64(rng.standard_normal((cout, cin, k, k)))
    b = f64(rng.standard_normal(cout))
    assert grad_check(lambda x, w, b: probe_sum(L.conv2d(x, w, b, stride, pad)), x, w, b) <= 1e-6


# -- deconv2d ---------------------------------------------------------------

def test_deconv_single_pixel_spreads_value():
    y = L.deconv2d(Tensor(np.full((1, 1, 1, 1), 2.5)), Tensor(np.ones((1, 1, 4, 4))), Tensor(np.zeros(1)), 2, 0)
    assert y.shape == (1, 1, 4, 4)
    np.testing.assert_array_equal(y.data, np.full((1, 1, 4, 4), 2.5))


def test_deconv_doubles_size_and_zero_input_gives_bias(rng):
    b = rng.standard_normal(3)
    y = L.deconv2d(Tensor(np.zeros((2, 4, 5, 5))), Tensor(rng.standard_normal((4, 3, 4, 4))), Tensor(b))
    assert y.shape == (2, 3, 10, 10)
    np.testing.assert_allclose(y.data, np.broadcast_to(b.reshape(1, 3, 1, 1), y.shape))


@pytest.mark.parametrize("k,stride,pad,size", [(4, 2, 1, 6), (4, 2, 0, 5), (3, 1, 1, 5), (3, 2, 1, 4)])
def test_deconv_matches_scatter_loop(k, stride, pad, size, rng):
    x = rng.standard_normal((2, 3, size, size))
    w = rng.standard_normal((3, 2, k, k))
    b = rng.standard_normal(2)
    got = L.deconv2d_forward(x, w, b, stride, pad)
    np.testing.assert_allclose(got, naive_deconv2d(x, w, b, stride, pad), atol=1e-12)


@pytest.mark.parametrize("seed", range(5))
@pytest.mark.parametrize("k,stride,pad,size", [(4, 2, 1, 8), (3, 1, 1, 6), (3, 2, 1, 7), (4, 2, 0, 10)])
def test_deconv_adjoint_identity(seed, k, stride, pad, size):
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((2, 3, size, size))
    w = rng.standard_normal((5, 3, k, k))
    cx, _ = L.conv2d_forward(x, w, None, stride, pad)
    y = rng.standard_normal(cx.shape)
    lhs = np.sum(cx * y)
    rhs = np.sum(x * L.deconv2d_forward(y, w, None, stride, pad))
    assert abs(lhs - rhs) / max(abs(lhs), abs(rhs)) <= 1e-10


def test_deconv_gradients(rng):
    x = f64(rng.standard_normal((2, 3, 3, 3)))
    w = f64(rng.standard_normal((3, 2, 4, 4)))
    b = f64(rng.standard_normal(2))
    assert grad_check(lambda x, w, b: probe_sum(L.deconv2d(x, w, b)), x, w, b) <= 1e-6


def test_deconv_channel_mismatch():
    with pytest.raises(ShapeError):
        L.deconv2d(Tensor(np.zeros((1, 2, 3, 3))), Tensor(np.zeros((3, 2, 4, 4))))


# -- linear -------------------------------------------------------------------

def test_linear_values():
    x = Tensor(np.array([[1.0, 2.0]]))
    assert L.linear(x, Tensor([[3.0, 4.0]]), Tensor([1.0])).data.item() == 12.0
    np.testing.assert_array_equal(L.linear(x, Tensor(np.eye(2)), Tensor(np.zeros(2))).data, x.data)
    with pytest.raises(ShapeError):
        L.linear(x, Tensor(np.ones((1, 3))))


def test_linear_gradients(rng):
    x, w, b = f64(rng.standard_normal((3, 4))), f64(rng.standard_normal((2, 4))), f64(rng.standard_normal(2))
    assert grad_check(lambda x, w, b: probe_sum(L.linear(x, w, b)), x, w, b) <= 1e-6


# -- batch norm -------------------------------------------------------------

def bn_state(ch, gamma=1.0, beta=0.0):
    return L.BatchNormState(f64(np.full(ch, gamma)), f64(np.full(ch, beta)), np.zeros(ch), np.ones(ch))


def test_bn_constant_input_gives_beta():
    s = bn_state(2, beta=0.3)
    y = L.batchnorm2d(Tensor(np.full((4, 2, 3, 3), 0.7)), s)
    assert np.max(np.abs(y.data - 0.3)) <= 1e-2


def test_bn_plus_minus_one():
    s = bn_state(1)
    y = L.batchnorm2d(Tensor(np.array([-1.0, 1.0]).reshape(2, 1, 1, 1)), s)
    np.testing.assert_allclose(y.data.reshape(-1), [-1.0, 1.0], atol=1e-5)


def test_bn_running_stats_blend(rng):
    s = bn_state(3)
    x = rng.standard_normal((4, 3, 5, 5)) * 2 + 1
    L.batchnorm2d(Tensor(x), s)
    n = 4 * 25
    mean = x.mean(axis=(0, 2, 3))
    var = x.var(axis=(0, 2, 3)) * n / (n - 1)
    np.testing.assert_allclose(s.running_mean, 0.1 * mean, rtol=1e-12)
    np.testing.assert_allclose(s.running_var, 0.9 + 0.1 * var, rtol=1e-12)
    assert np.all(s.running_var >= 0)


def test_bn_eval_is_pure(rng):
    s = bn_state(3)
    s.running_mean[:] = [0.1, -0.2, 0.3]
    s.running_var[:] = [1.5, 0.5, 2.0]
    s.training = False
    x = Tensor(rng.standard_normal((2, 3, 4, 4)))
    before = (s.running_mean.copy(), s.running_var.copy())
    y1, y2 = L.batchnorm2d(x, s).data, L.batchnorm2d(x, s).data
    assert np.array_equal(y1, y2)
    assert np.array_equal(before[0], s.running_mean) and np.array_equal(before[1], s.running_var)
    expected = (x.data - s.running_mean.reshape(1, 3, 1, 1)) / np.sqrt(s.running_var.reshape(1, 3, 1, 1) + 1e-5)
    np.testing.assert_allclose(y1, expected, rtol=1e-12)


def test_bn_train_output_normalized(rng):
    y = L.batchnorm2d(Tensor(rng.standard_normal((4, 3, 6, 6)) * 5 - 2), bn_state(3)).data
    assert np.max(np.abs(y.mean(axis=(0, 2, 3)))) <= 1e-4
    assert np.max(np.abs(y.var(axis=(0, 2, 3)) - 1)) <= 1e-2


@pytest.mark.parametrize("training", [True, False])
def test_bn_gradients(training, rng):
    s = bn_state(3)
    s.training = training
    s.gamma.data = rng.standard_normal(3)
    x = f64(rng.standard_normal((2, 3, 3, 3)))

    def f(x, g, b):
        st_ = L.BatchNormState(g, b, s.running_mean.copy(), s.running_var.copy(), training=training)
        return probe_sum(L.batchnorm2d(x, st_))

    assert grad_check(f, x, s.gamma, s.beta) <= 1e-5


def test_composed_pipeline_gradient(rng):
    x = f64(rng.standard_normal((2, 2, 6, 6)))
    w = f64(rng.standard_normal((3, 2, 3, 3)))
    g, b = f64(np.ones(3)), f64(np.zeros(3))

    def f(x, w, g, b):
        s = L.BatchNormState(g, b, np.zeros(3), np.ones(3))
        return T.leaky_relu(L.batchnorm2d(L.conv2d(x, w, None, 1, 1), s)).mean()

    assert grad_check(f, x, w, g, b) <= 1e-4


# -- ConvLSTM ---------------------------------------------------------------

def lstm_params(hidden, in_ch, rng=None, fbias=0.0):
    def w():
        return f64(np.zeros((hidden, in_ch + hidden, 3, 3)) if rng is None
                   else rng.standard_normal((hidden, in_ch + hidden, 3, 3)) * 0.3)
    ws = {k: w() for k in "ifog"}
    bs = {k: f64(np.full(hidden, fbias if k == "f" else 0.0)) for k in "ifog"}
    return ws, bs


def test_lstm_all_zero():
    ws, bs = lstm_params(2, 1)
    z = Tensor(np.zeros((1, 2, 3, 3)))
    h, st_ = L.conv_lstm_step(Tensor(np.zeros((1, 1, 3, 3))), L.ConvLstmState(z, z), ws, bs)
    assert not np.any(h.data) and not np.any(st_.c.data)


def test_lstm_forget_bias_arithmetic():
    ws, bs = lstm_params(1, 1, fbias=1.0)
    state = L.ConvLstmState(Tensor(np.zeros((1, 1, 2, 2))), Tensor(np.ones((1, 1, 2, 2))))
    h, st_ = L.conv_lstm_step(Tensor(np.zeros((1, 1, 2, 2))), state, ws, bs)
    c_exp = 1.0 / (1.0 + np.exp(-1.0))
    np.testing.assert_allclose(st_.c.data, c_exp, rtol=1e-12)
    np.testing.assert_allclose(h.data, 0.5 * np.tanh(c_exp), rtol=1e-12)
    assert c_exp == pytest.approx(0.7311, abs=1e-4)
    # 0.5 * tanh(0.7311) = 0.31186; the quoted 0.3117 is off in the fourth digit
    assert h.data[0, 0, 0, 0] == pytest.approx(0.3117, abs=3e-4)


def test_lstm_spatial_mismatch():
    ws, bs = lstm_params(2, 1)
    z = Tensor(np.zeros((1, 2, 3, 3)))
    with pytest.raises(ShapeError):
        L.conv_lstm_step(Tensor(np.zeros((1, 1, 4, 4))), L.ConvLstmState(z, z), ws, bs)


def test_lstm_two_step_gradient(rng):
    ws, bs = lstm_params(2, 2, rng)
    x1, x2 = f64(rng.standard_normal((1, 2, 4, 4))), f64(rng.standard_normal((1, 2, 4, 4)))

    def f(x1, x2, wi, wf, bo):
        w = {**ws, "i": wi, "f": wf}
        b = {**bs, "o": bo}
        z = Tensor(np.zeros((1, 2, 4, 4)))
        h, st_ = L.conv_lstm_step(x1, L.ConvLstmState(z, z), w, b)
        h, st_ = L.conv_lstm_step(x2, st_, w, b)
        return probe_sum(T.add(h, st_.c))

    assert grad_check(f, x1, x2, ws["i"], ws["f"], bs["o"]) <= 1e-4


def test_lstm_cell_bound(rng):
    ws, bs = lstm_params(3, 2, rng)
    c = rng.standard_normal((2, 3, 5, 5)) * 3
    state = L.ConvLstmState(Tensor(rng.standard_normal((2, 3, 5, 5))), Tensor(c))
    h, st_ = L.conv_lstm_step(Tensor(rng.standard_normal((2, 2, 5, 5)) * 4), state, ws, bs)
    assert np.all(np.abs(st_.c.data) <= np.abs(c) + 1)
    assert np.all(np.abs(h.data) < 1)


def test_lstm_cell_module_init():
    cell = L.ConvLSTMCell(4, 64, rng=np.random.default_rng(0))
    names = list(cell.named_parameters())
    assert names == ["w_i", "b_i", "w_f", "b_f", "w_o", "b_o", "w_g", "b_g"]
    assert cell.weights["i"].shape == (64, 68, 3, 3)
    assert np.all(cell.biases["f"].data == 1.0) and not np.any(cell.biases["i"].data)


# -- spectral normalization -------------------------------------------------

def test_spectral_identity():
    w_sn, s = L.spectral_normalize(Tensor(np.eye(2)), L.SpectralState(np.array([0.6, 0.8])))
    np.testing.assert_allclose(w_sn.data, np.eye(2), atol=1e-12)


def test_spectral_diagonal():
    s = L.SpectralState(L._normalize(np.array([0.3, 0.7])), n_power_iters=20)
    w_sn, s2 = L.spectral_normalize(Tensor(np.diag([3.0, 1.0])), s)
    np.testing.assert_allclose(w_sn.data, np.diag([1.0, 1 / 3]), atol=1e-6)
    assert np.linalg.norm(s2.u) == pytest.approx(1.0, abs=1e-12)


def top_singular(w):
    """Largest singular value from the eigenvalues of W^T W."""
    return np.sqrt(np.max(np.linalg.eigvalsh(w.T @ w)))


@pytest.mark.parametrize("seed", range(10))
def test_spectral_vs_svd_8x8(seed):
    rng = np.random.default_rng(seed)
    w = rng.standard_normal((8, 8))
    s = L.SpectralState(L._normalize(rng.standard_normal(8)), n_power_iters=50)
    _, s2 = L.spectral_normalize(Tensor(w), s)
    sigma = L.spectral_sigma(w, s2.u)
    ref = top_singular(w)
    sv = np.linalg.svd(w, compute_uv=False)
    gap = (sv[1] / sv[0]) ** 100
    if gap <= 1e-8:
        assert abs(sigma - ref) <= 1e-6 * ref
    else:
        # 50 iterations cannot resolve a nearly degenerate top pair
        assert abs(sigma - ref) <= ref * 10 * gap


def test_spectral_near_degenerate_converges_with_more_iterations():
    rng = np.random.default_rng(2)
    w = rng.standard_normal((8, 8))
    s = L.SpectralState(L._normalize(rng.standard_normal(8)), n_power_iters=1000)
    _, s2 = L.spectral_normalize(Tensor(w), s)
    assert abs(L.spectral_sigma(w, s2.u) - top_singular(w)) <= 1e-6 * top_singular(w)


def test_spectral_output_unit_norm(rng):
    w = rng.standard_normal((16, 3, 4, 4))
    s = L.SpectralState(L._normalize(rng.standard_normal(16)), n_power_iters=200)
    w_sn, _ = L.spectral_normalize(Tensor(w), s)
    top = np.linalg.svd(w_sn.data.reshape(16, -1), compute_uv=False)[0]
    assert abs(top - 1) <= 1e-4


def test_spectral_zero_weight():
    w_sn, s = L.spectral_normalize(Tensor(np.zeros((3, 4))), L.SpectralState(np.array([1.0, 0, 0])))
    assert not np.any(w_sn.data)


def test_spectral_sigma_is_constant_in_backward(rng):
    w = f64(rng.standard_normal((4, 6)))
    s = L.SpectralState(L._normalize(rng.standard_normal(4)), 1)
    w_sn, s2 = L.spectral_normalize(w, s)
    backward(w_sn.sum())
    sigma = L.power_iterate(w.data, s.u, 1)[2]
    np.testing.assert_allclose(w.grad, np.full((4, 6), 1 / sigma), rtol=1e-12)


def test_spectral_conv_refresh_advances_u_only_on_refresh(rng):
    conv = L.SpectralConv2d(3, 8, 4, stride=2, pad=1, rng=rng)
    u0 = conv.spectral.u.copy()
    conv(Tensor(rng.standard_normal((1, 3, 8, 8)).astype(np.float32)))
    assert np.array_equal(conv.spectral.u, u0)
    conv.refresh()
    assert not np.array_equal(conv.spectral.u, u0)
    assert np.linalg.norm(conv.spectral.u) == pytest.approx(1.0, abs=1e-6)


# -- modules ------------------------------------------------------------------

def test_module_names_and_buffers():
    conv = L.SpectralConv2d(3, 4, 4, stride=2, pad=1)
    assert list(conv.named_parameters()) == ["weight", "bias"]
    assert list(conv.named_buffers()) == ["sn_u"]
    bn = L.BatchNorm2d(4)
    assert list(bn.named_buffers()) == ["running_mean", "running_var"]
    bn.eval()
    assert not bn.state.training


def test_conv_module_init_statistics():
    conv = L.Conv2d(64, 64, 3, rng=np.random.default_rng(0))
    assert conv.pad == 1
    assert np.std(conv.weight.data) == pytest.approx(np.sqrt(2 / (64 * 9)), rel=0.02)
    assert not np.any(conv.bias.data)


def test_astype_casts_everything():
    bn = L.BatchNorm2d(2).astype(np.float64)
    assert bn.state.gamma.dtype == np.float64 and bn.state.running_var.dtype == np.float64


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 12), st.sampled_from([(3, 1, 1), (4, 2, 1), (3, 2, 1), (4, 2, 0)]))
def test_conv_output_size_matches_forward(size, ksp):
    k, s, p = ksp
    n = L.conv_output_size(size, k, s, p)
    x = np.zeros((1, 1, size, size))
    if n < 1:
        with pytest.raises(ShapeError):
            L.conv2d_forward(x, np.zeros((1, 1, k, k)), None, s, p)
    else:
        assert L.conv2d_forward(x, np.zeros((1, 1, k, k)), None, s, p)[0].shape[2] == n
