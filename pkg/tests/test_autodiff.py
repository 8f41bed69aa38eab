import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from disbench import autodiff as ad
from disbench.errors import UsageError

from _util import max_relative_error, numeric_gradient

finite = st.floats(-3, 3, allow_nan=False, allow_infinity=False)


def check(build, *shapes, seed=0, positive=False):
    rng = np.random.default_rng(seed)
    arrays_ = [rng.uniform(0.5, 2.0, s) if positive else rng.normal(size=s) for s in shapes]
    params = [ad.parameter(a) for a in arrays_]
    analytic = ad.gradients(build(*params), params)
    for p, g in zip(params, analytic):
        numeric = numeric_gradient(lambda: build(*params).item(), p.data)
        assert max_relative_error(g, numeric) < 1e-6


def test_add_mul_broadcast():
    check(lambda a, b: (a * b + b).sum(), (4, 3), (1, 3))


def test_sub_div_scalar_mix():
    check(lambda a, b: ((2.0 - a) / b + a / 3.0).sum(), (3, 2), (3, 2), positive=True)


def test_rtruediv_and_pow():
    check(lambda a: (1.0 / a + a ** 3).sum(), (5,), positive=True)


def test_matmul_and_transpose():
    check(lambda a, b: (a @ b.T).sum(), (3, 4), (2, 4))


def test_reductions_with_axis():
    check(lambda a: (a.sum(axis=0, keepdims=True) * a.mean(axis=1, keepdims=True)).sum(), (3, 4))


def test_elementwise_functions():
    check(lambda a: (ad.exp(a) + ad.softplus(a) + ad.sigmoid(a) + ad.square(a)).sum(), (6,))
    check(lambda a: ad.log(a).sum() + ad.absolute(a).sum(), (6,), positive=True)


def test_relu_variants():
    check(lambda a: (ad.relu(a) + ad.leaky_relu(a, 0.1)).sum(), (7,), seed=3)


def test_logsumexp_axis():
    check(lambda a: ad.logsumexp(a, axis=1).sum(), (4, 5))
    check(lambda a: ad.logsumexp(a, axis=0, keepdims=True).sum(), (4, 5))


def test_getitem_slices_and_repeated_fancy_index():
    check(lambda a: (a[:, 1:] * 2).sum() + a[[0, 0, 2]].sum(), (3, 4))
    x = ad.parameter(np.arange(4.0))
    (g,) = ad.gradients(x[[1, 1, 1]].sum(), [x])
    np.testing.assert_array_equal(g, [0, 3, 0, 0])


def test_concat_and_reshape():
    check(lambda a, b: (ad.concat([a, b], axis=1).reshape(-1) * np.arange(10.0)).sum(), (2, 2), (2, 3))


def test_non_scalar_loss_rejected():
    x = ad.parameter(np.ones(3))
    with pytest.raises(UsageError):
        ad.gradients(x * 2, [x])


def test_disconnected_parameter_gets_zeros():
    x, y = ad.parameter(np.ones(3)), ad.parameter(np.ones((2, 2)))
    gx, gy = ad.gradients((x * x).sum(), [x, y])
    np.testing.assert_array_equal(gx, 2 * np.ones(3))
    np.testing.assert_array_equal(gy, np.zeros((2, 2)))


def test_deep_chain_does_not_recurse():
    x = ad.parameter(np.array(1.0))
    h = x
    for _ in range(5000):
        h = h * 1.0 + 0.0
    (g,) = ad.gradients(h.sum(), [x])
    assert g == pytest.approx(1.0)


def test_shared_subexpression_accumulates():
    x = ad.parameter(np.array([2.0]))
    y = x * x
    (g,) = ad.gradients((y + y * 3).sum(), [x])
    assert g[0] == pytest.approx(16.0)


def test_softplus_is_stable_for_large_inputs():
    x = ad.tensor(np.array([-800.0, 0.0, 800.0]))
    out = ad.softplus(x).data
    assert np.all(np.isfinite(out))
    np.testing.assert_allclose(out, [0.0, np.log(2.0), 800.0])


@given(arrays(np.float64, (3, 4), elements=finite), arrays(np.float64, (4,), elements=finite))
def test_gradient_of_sum_is_linear(a, b):
    pa, pb = ad.parameter(a), ad.parameter(b)
    ga, gb = ad.gradients((pa * 2.0 + pb).sum(), [pa, pb])
    np.testing.assert_allclose(ga, 2.0)
    np.testing.assert_allclose(gb, 3.0)


@given(arrays(np.float64, (5,), elements=finite))
def test_logsumexp_matches_scipy(v):
    from scipy.special import logsumexp
    assert ad.logsumexp(ad.tensor(v), axis=0).item() == pytest.approx(logsumexp(v), rel=1e-12, abs=1e-12)
