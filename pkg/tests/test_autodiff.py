import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from siamtir.autodiff import (
    Tensor,
    cdiv,
    conv2d,
    conv_transpose2d,
    cross_correlate,
    cross_correlate_fft,
    fft2,
    get_default_dtype,
    global_avg_pool,
    global_max_pool,
    grad_check,
    gradients,
    ifft2,
    max_pool2d,
    precision,
    relu,
    scale_broadcast,
    sigmoid,
    verification_mode,
)
from siamtir.exceptions import DegenerateDenominatorError, NonScalarLossError, ShapeError
from siamtir.similarity import CFBlockParams, cf_template
from siamtir.verification import brute_force_correlation

seeds = st.integers(0, 2**32 - 1)


@pytest.fixture(autouse=True)
def _float64():
    with verification_mode():
        yield


# -- precision flag -----------------------------------------------------------

def test_default_precision_is_float32_outside_verification():
    with precision(np.float32):
        assert get_default_dtype() == np.float32
        assert Tensor([1.0, 2.0]).dtype == np.float32
    assert get_default_dtype() == np.float64


# -- conv2d ---------------------------------------------------------------------

def test_conv2d_scalar_kernel_doubles_input(rng):
    x = rng.standard_normal((1, 3, 3))
    out = conv2d(Tensor(x), Tensor(np.full((1, 1, 1, 1), 2.0)), Tensor(np.zeros(1)))
    np.testing.assert_allclose(out.data, 2 * x)


def test_conv2d_identity_kernel_sums_diagonal():
    out = conv2d(Tensor([[[1.0, 2.0], [3.0, 4.0]]]), Tensor(np.eye(2).reshape(1, 1, 2, 2)))
    assert out.shape == (1, 1, 1)
    assert out.data.item() == 5.0


@given(k=st.integers(0, 3), h=st.integers(1, 9), w=st.integers(1, 9))
def test_conv2d_same_padding_preserves_size(k, h, w):
    kernel = 2 * k + 1
    x = Tensor(np.ones((2, h, w)))
    out = conv2d(x, Tensor(np.ones((3, 2, kernel, kernel))), padding=(k, k))
    assert out.shape == (3, h, w)


def test_conv2d_channel_mismatch():
    with pytest.raises(ShapeError):
        conv2d(Tensor(np.ones((2, 4, 4))), Tensor(np.ones((1, 3, 1, 1))))


@given(seed=seeds, a=st.floats(-3, 3), b=st.floats(-3, 3))
def test_conv2d_is_linear_in_input(seed, a, b):
    r = np.random.default_rng(seed)
    x, y = r.standard_normal((2, 6, 5)), r.standard_normal((2, 6, 5))
    k = Tensor(r.standard_normal((3, 2, 3, 2)))
    lhs = conv2d(Tensor(a * x + b * y), k, stride=2, padding=(1, 0)).data
    rhs = a * conv2d(Tensor(x), k, stride=2, padding=(1, 0)).data + b * conv2d(Tensor(y), k, stride=2, padding=(1, 0)).data
    np.testing.assert_allclose(lhs, rhs, rtol=1e-5, atol=1e-5 * max(1.0, np.abs(lhs).max()))


# -- conv_transpose2d -------------------------------------------------------------

def test_conv_transpose_single_pixel_spreads_kernel(rng):
    k = rng.standard_normal((1, 1, 3, 3))
    out = conv_transpose2d(Tensor([[[1.7]]]), Tensor(k))
    np.testing.assert_allclose(out.data, 1.7 * k[0])


def test_conv_transpose_zero_input(rng):
    out = conv_transpose2d(Tensor(np.zeros((2, 3, 3))), Tensor(rng.standard_normal((2, 4, 3, 3))))
    assert out.shape == (4, 5, 5) and not out.data.any()


@given(seed=seeds, stride=st.integers(1, 3))
def test_conv_transpose_is_adjoint_of_conv(seed, stride):
    r = np.random.default_rng(seed)
    x = r.standard_normal((2, 3, 9, 8))
    k = r.standard_normal((4, 3, 3, 2))
    y = r.standard_normal(conv2d(Tensor(x), Tensor(k), stride=stride).shape)
    lhs = np.sum(conv2d(Tensor(x), Tensor(k), stride=stride).data * y)
    back = conv_transpose2d(Tensor(y), Tensor(k), stride=stride).data
    # the transposed output may be shorter than x when stride does not divide evenly
    rhs = np.sum(x[..., : back.shape[-2], : back.shape[-1]] * back)
    assert abs(lhs - rhs) <= 1e-5 * max(abs(lhs), abs(rhs), 1.0)


def test_adjoint_on_small_input(rng):
    x, k, y = rng.standard_normal((1, 4, 4)), rng.standard_normal((1, 1, 3, 3)), rng.standard_normal((1, 2, 2))
    lhs = np.sum(conv2d(Tensor(x), Tensor(k)).data * y)
    rhs = np.sum(x * conv_transpose2d(Tensor(y), Tensor(k)).data)
    assert abs(lhs - rhs) <= 1e-5 * max(abs(lhs), abs(rhs))


# -- activations and pooling -------------------------------------------------------

def test_activation_values():
    assert sigmoid(Tensor(0.0)).item() == 0.5
    np.testing.assert_array_equal(relu(Tensor([-3.0, 3.0])).data, [0.0, 3.0])


def test_sigmoid_gradient_at_zero():
    x = Tensor(0.0, requires_grad=True)
    sigmoid(x).backward()
    assert x.grad == pytest.approx(0.25)


def test_relu_subgradient_at_zero_is_zero():
    x = Tensor([0.0, 1.0], requires_grad=True)
    relu(x).sum().backward()
    np.testing.assert_array_equal(x.grad, [0.0, 1.0])


@given(st.lists(st.floats(-1e3, 1e3), min_size=1, max_size=20))
def test_activation_ranges(values):
    x = Tensor(np.array(values))
    s = sigmoid(x).data
    # (0, 1) holds exactly for moderate inputs; in float64 sigmoid(+-40) rounds to 1 - 4e-18
    moderate = np.abs(x.data) < 30
    assert np.all((s[moderate] > 0) & (s[moderate] < 1))
    assert np.all((s >= 0) & (s <= 1))
    assert np.all(relu(x).data >= 0)


def test_global_pools():
    x = Tensor([[[1.0, 3.0], [5.0, 7.0]]])
    assert global_avg_pool(x).data.tolist() == [4.0]
    assert global_max_pool(x).data.tolist() == [7.0]
    c = Tensor(np.full((1, 3, 3), 2.5))
    assert global_avg_pool(c).item() == 2.5 and global_max_pool(c).item() == 2.5
    one = Tensor([[[9.0]], [[-1.0]]])
    np.testing.assert_array_equal(global_avg_pool(one).data, [9.0, -1.0])
    np.testing.assert_array_equal(global_max_pool(one).data, [9.0, -1.0])


def test_max_pool_values():
    x = Tensor(np.arange(16.0).reshape(1, 4, 4))
    np.testing.assert_array_equal(max_pool2d(x).data, [[[5.0, 7.0], [13.0, 15.0]]])


def test_scale_broadcast_examples(rng):
    f = Tensor(rng.standard_normal((3, 4, 5)))
    np.testing.assert_array_equal(scale_broadcast(f, Tensor(np.ones(3))).data, f.data)
    assert not scale_broadcast(f, Tensor(np.zeros(3))).data.any()
    out = scale_broadcast(Tensor(np.array([4.0, 3.0]).reshape(2, 1, 1)), Tensor([0.5, 2.0]))
    np.testing.assert_array_equal(out.data.ravel(), [2.0, 6.0])


# -- cross-correlation -------------------------------------------------------------

def test_cross_correlate_examples(rng):
    t = rng.standard_normal((3, 4, 4))
    assert cross_correlate(Tensor(t), Tensor(t)).data.item() == pytest.approx(np.sum(t ** 2))
    out = cross_correlate(Tensor(np.eye(2)[None]), Tensor([[[1.0, 2.0], [3.0, 4.0]]]))
    assert out.data.item() == 5.0
    s = rng.standard_normal((3, 5, 6))
    np.testing.assert_allclose(cross_correlate(Tensor(np.ones((3, 1, 1))), Tensor(s)).data, s.sum(axis=0))


@given(seed=seeds, c=st.integers(1, 4), hh=st.integers(1, 8), ww=st.integers(1, 8), data=st.data())
def test_cross_correlate_matches_brute_force(seed, c, hh, ww, data):
    h = data.draw(st.integers(1, hh))
    w = data.draw(st.integers(1, ww))
    r = np.random.default_rng(seed)
    t, s = r.standard_normal((c, h, w)), r.standard_normal((c, hh, ww))
    ref = brute_force_correlation(t, s)
    for fn in (cross_correlate, cross_correlate_fft):
        np.testing.assert_allclose(fn(Tensor(t), Tensor(s)).data, ref, rtol=0, atol=1e-10 * max(1, np.abs(ref).max()))


def test_batched_correlation_broadcasts_template(rng):
    t = rng.standard_normal((2, 3, 3))
    s = rng.standard_normal((4, 2, 7, 6))
    out = cross_correlate(Tensor(t), Tensor(s)).data
    assert out.shape == (4, 5, 4)
    for n in range(4):
        np.testing.assert_allclose(out[n], brute_force_correlation(t, s[n]), atol=1e-12)


# -- Fourier primitives ------------------------------------------------------------

def test_fft_constant_image():
    spec = fft2(Tensor(np.full((3, 4), 2.0))).data
    assert spec[0, 0] == pytest.approx(24.0)
    spec[0, 0] = 0
    assert np.abs(spec).max() < 1e-12


def test_fft_round_trip_and_parseval(rng):
    t = rng.standard_normal((8, 8))
    np.testing.assert_allclose(ifft2(fft2(Tensor(t))).data, t, rtol=1e-5, atol=1e-12)
    u = rng.standard_normal((4, 6))
    m, n = u.shape
    direct = np.array([[np.sum(u * np.exp(-2j * np.pi * (k * np.arange(m)[:, None] / m + l * np.arange(n)[None, :] / n)))
                        for l in range(n)] for k in range(m)])
    assert np.sum(u ** 2) == pytest.approx(np.sum(np.abs(direct) ** 2) / u.size, rel=1e-5)
    np.testing.assert_allclose(fft2(Tensor(u)).data, direct, atol=1e-10)


@given(seed=seeds, h=st.integers(1, 9), w=st.integers(1, 9))
def test_fft_properties_hold_for_any_shape(seed, h, w):
    t = np.random.default_rng(seed).standard_normal((h, w))
    spec = fft2(Tensor(t)).data
    np.testing.assert_allclose(ifft2(Tensor(spec)).data, t, atol=1e-10)
    assert np.sum(t ** 2) == pytest.approx(np.sum(np.abs(spec) ** 2) / t.size, rel=1e-5, abs=1e-12)


def test_cdiv_guard():
    with pytest.raises(DegenerateDenominatorError):
        cdiv(Tensor(np.ones(2, dtype=complex)), Tensor(np.array([1.0, 1e-13], dtype=complex)))


# -- backward -----------------------------------------------------------------------

def test_backward_of_sum_is_ones(rng):
    t = Tensor(rng.standard_normal((3, 2)), requires_grad=True)
    t.sum().backward()
    np.testing.assert_array_equal(t.grad, np.ones((3, 2)))


def test_zero_times_anything(rng):
    a = Tensor(rng.standard_normal(4), requires_grad=True)
    b = Tensor(rng.standard_normal(4), requires_grad=True)
    (sigmoid(a * b).sum() * 0.0).backward()
    assert not a.grad.any() and not b.grad.any()


def test_non_scalar_loss_rejected():
    with pytest.raises(NonScalarLossError):
        Tensor(np.ones(3), requires_grad=True).backward()


def test_gradient_shapes_match_and_accumulate(rng):
    x = Tensor(rng.standard_normal((2, 3)), requires_grad=True)
    y = (x * x + x).sum()
    (gx,) = gradients(y, [x])
    assert gx.shape == x.shape
    np.testing.assert_allclose(gx, 2 * x.data + 1)


# -- grad_check -----------------------------------------------------------------------

def test_grad_check_linear_map(rng):
    x = Tensor(rng.standard_normal((4, 3)), requires_grad=True)
    w = Tensor(rng.standard_normal((4, 3)))
    assert grad_check(lambda: (x * w).sum(), [x]) < 1e-7


def test_grad_check_sigmoid_chain(rng):
    x = Tensor(rng.standard_normal(5), requires_grad=True)
    assert grad_check(lambda: sigmoid(sigmoid(x) * 3.0 - 1.0).sum(), [x]) < 1e-5


def test_grad_check_cf_block(rng):
    x = Tensor(rng.standard_normal((3, 6, 6)), requires_grad=True)
    g = Tensor(rng.standard_normal((3, 6, 6)))
    cf = CFBlockParams.for_shape(6, 6)
    assert grad_check(lambda: (cf_template(x, cf) * g).sum(), [x]) < 1e-3


def test_grad_check_detects_wrong_gradient(rng):
    x = Tensor(rng.standard_normal(3), requires_grad=True)

    def broken():
        # forward is x**2, backward claims 3x
        return Tensor.from_op(x.data ** 2, (x,), lambda g: (3 * x.data * g,), "broken").sum()

    assert grad_check(broken, [x]) > 0.1
