import math

import jax
import jax.numpy as jnp
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import grslab  # noqa: F401  (enables float64)
from grslab import jets

points = st.lists(st.floats(-1.0, 1.0), min_size=2, max_size=2).map(np.asarray)
SETTINGS = settings(max_examples=6, deadline=None)


def f(x):
    return jnp.stack([jnp.exp(0.3 * x[0]) * jnp.cos(x[1]), 1.0 + x[0] ** 2 + 0.5 * x[0] * x[1]])


def g(x):
    return jnp.stack([jnp.sin(x[0] + 2 * x[1]), 2.0 + jnp.tanh(x[1])])


def test_sizes_and_grading():
    assert jets.jet_size(3, 2) == 10
    exps = jets.monomials(2, 3)
    assert exps.shape == (10, 2)
    assert list(exps.sum(axis=1)) == sorted(exps.sum(axis=1))


def test_taylor_of_polynomial_is_exact():
    # p = 1 + 2x + 3xy + y^2 about the origin
    p = lambda x: jnp.stack([1 + 2 * x[0] + 3 * x[0] * x[1] + x[1] ** 2])  # noqa: E731
    c = np.asarray(jets.taylor(p, jnp.zeros(2), 2))[0]
    want = {(0, 0): 1, (1, 0): 2, (0, 1): 0, (2, 0): 0, (1, 1): 3, (0, 2): 1}
    for e, v in zip(map(tuple, jets.monomials(2, 2)), c):
        assert v == pytest.approx(want[e], abs=1e-13)


@SETTINGS
@given(points)
def test_product_rule(x):
    k = 4
    a, b = jets.taylor(f, jnp.asarray(x), k), jets.taylor(g, jnp.asarray(x), k)
    prod = jets.mul("i,i->i", a, b, 2, k)
    ref = jets.taylor(lambda y: f(y) * g(y), jnp.asarray(x), k)
    np.testing.assert_allclose(prod, ref, atol=1e-11)


@SETTINGS
@given(points)
def test_reciprocal(x):
    k = 3
    u = jets.taylor(g, jnp.asarray(x), k)[1:]
    ref = jets.taylor(lambda y: 1.0 / g(y)[1:], jnp.asarray(x), k)
    np.testing.assert_allclose(jets.recip(u, 2, k), ref, atol=1e-11)


@SETTINGS
@given(points)
def test_gradient_drops_one_order(x):
    k = 3
    d = jets.grad(jets.taylor(f, jnp.asarray(x), k), 2, k)
    ref = jets.taylor(jax.jacfwd(f), jnp.asarray(x), k - 1)
    np.testing.assert_allclose(d, ref, atol=1e-11)


@SETTINGS
@given(points)
def test_truncation_is_leading_slice(x):
    hi = jets.taylor(f, jnp.asarray(x), 4)
    lo = jets.taylor(f, jnp.asarray(x), 2)
    np.testing.assert_allclose(jets.truncate(hi, 2, 2), lo, atol=1e-13)


@SETTINGS
@given(points)
def test_matrix_inverse(x):
    k = 3

    def m(y):
        return jnp.array([[2.0 + y[0] ** 2, 0.3 * y[1]], [0.3 * y[1], 1.5 + jnp.sin(y[0])]])

    inv = jets.matrix_inverse(jets.taylor(m, jnp.asarray(x), k), 2, k)
    def inv2(y):
        a = m(y)
        det = a[0, 0] * a[1, 1] - a[0, 1] * a[1, 0]
        return jnp.array([[a[1, 1], -a[0, 1]], [-a[1, 0], a[0, 0]]]) / det

    ref = jets.taylor(inv2, jnp.asarray(x), k)
    np.testing.assert_allclose(inv, ref, atol=1e-10)


def test_exact_trig_jets():
    x = jnp.asarray([0.7, -0.2])
    s, c = jets.sin_cos(x, 1, 2, 5)
    ref = jets.taylor(lambda y: jnp.stack([jnp.sin(y[1]), jnp.cos(y[1])]), x, 5)
    np.testing.assert_allclose(s, ref[0], atol=1e-14)
    np.testing.assert_allclose(c, ref[1], atol=1e-14)
    # d^5/dy^5 sin at -0.2 over 5!
    idx = [tuple(e) for e in jets.monomials(2, 5)].index((0, 5))
    assert float(s[idx]) == pytest.approx(math.cos(-0.2) / 120, rel=1e-13)
