from dataclasses import replace

import jax
import jax.numpy as jnp
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from grslab import build_round_sphere, ellipsoid, quadrature_grid
from grslab.fields import random_test_fields
from grslab.geometry_core import (
    CLOSED_FORM,
    SingularMetricError,
    TensorField,
    check_point,
    christoffel,
    curvature,
    hessian_and_lie,
    metric_inverse,
    ricci_identity_residual,
)
from grslab.weighted_calculus import metric_field

SETTINGS = settings(max_examples=8, deadline=None)
angle = st.floats(0.2, np.pi - 0.2)
azimuth = st.floats(0.0, 2 * np.pi)


def _generic(model):
    """Same sphere with every closed-form shortcut removed: curvature comes from Christoffel symbols."""
    return replace(model, riemann=None, metric_diag=None, constant_curvature=None, jet_data={})


def _ellipsoid_exact(**kw):
    return replace(ellipsoid(**kw), curvature_source=CLOSED_FORM, fd_step=None)


def _ellipsoid_gauss(a, b, c, th, ph):
    x, y, z = a * np.sin(th) * np.cos(ph), b * np.sin(th) * np.sin(ph), c * np.cos(th)
    return 1.0 / (a * b * c * (x**2 / a**4 + y**2 / b**4 + z**2 / c**4)) ** 2


@SETTINGS
@given(angle, azimuth, st.floats(0.5, 2.0))
def test_round_s2_curvature_matches_constant_curvature(th, ph, r):
    m = build_round_sphere(2, r)
    for model in (m, _generic(m)):
        rm, ric, scal = curvature(model, [th, ph])
        g = np.asarray(model.metric(jnp.asarray([th, ph])))
        np.testing.assert_allclose(ric, g / r**2, atol=1e-11)
        assert float(scal) == pytest.approx(2 / r**2, rel=1e-11)
        want = (np.einsum("ik,jl->ijkl", g, g) - np.einsum("il,jk->ijkl", g, g)) / r**2
        # with Ric_ij = g^pq R_piqj a space form has R_ijkl = K (g_ik g_jl - g_il g_jk)
        np.testing.assert_allclose(rm, want, atol=1e-11)


@SETTINGS
@given(angle, angle, azimuth)
def test_round_s3_einstein(a, b, c):
    model = _generic(build_round_sphere(3))
    _, ric, scal = curvature(model, [a, b, c])
    g = np.asarray(model.metric(jnp.asarray([a, b, c])))
    np.testing.assert_allclose(ric, 2 * g, atol=1e-10)
    assert float(scal) == pytest.approx(6.0, rel=1e-11)


@SETTINGS
@given(angle, azimuth)
def test_ellipsoid_gauss_curvature_oracle(th, ph):
    a, b, c = 1.0, 1.3, 0.8
    model = _ellipsoid_exact(a=a, b=b, c=c)
    _, ric, scal = curvature(model, [th, ph])
    k = _ellipsoid_gauss(a, b, c, th, ph)
    assert float(scal) == pytest.approx(2 * k, rel=1e-10)
    g = np.asarray(model.metric(jnp.asarray([th, ph])))
    np.testing.assert_allclose(ric, k * g, atol=1e-10)


def test_finite_difference_curvature_close_to_oracle():
    model = ellipsoid(a=1.0, b=1.3, c=0.8, resolution="96x192")
    th, ph = 1.1, 0.4
    _, _, scal = curvature(model, [th, ph])
    assert float(scal) == pytest.approx(2 * _ellipsoid_gauss(1.0, 1.3, 0.8, th, ph), rel=1e-6)


@SETTINGS
@given(angle, azimuth)
def test_curvature_symmetries(th, ph):
    rm, ric, _ = curvature(_ellipsoid_exact(a=1.0, b=1.3, c=0.8), [th, ph])
    rm = np.asarray(rm)
    np.testing.assert_allclose(rm, -np.swapaxes(rm, 0, 1), atol=1e-11)
    np.testing.assert_allclose(rm, -np.swapaxes(rm, 2, 3), atol=1e-11)
    np.testing.assert_allclose(rm, np.transpose(rm, (2, 3, 0, 1)), atol=1e-11)
    bianchi = rm + np.transpose(rm, (0, 2, 3, 1)) + np.transpose(rm, (0, 3, 1, 2))
    assert np.max(np.abs(bianchi)) < 1e-11
    np.testing.assert_allclose(ric, np.asarray(ric).T, atol=1e-12)


def test_ricci_trace_convention():
    model = _ellipsoid_exact(a=1.0, b=1.3, c=0.8)
    x = jnp.asarray([0.9, 2.0])
    rm, ric, scal = curvature(model, x)
    ginv = np.asarray(metric_inverse(model, x))
    np.testing.assert_allclose(ric, np.einsum("pq,piqj->ij", ginv, rm), atol=1e-12)
    assert float(scal) == pytest.approx(np.einsum("ij,ij", ginv, ric), rel=1e-12)
    assert float(scal) > 0


def test_christoffel_torsion_free_and_metric_compatible():
    model = _ellipsoid_exact(a=1.0, b=1.3, c=0.8)
    x = jnp.asarray([1.2, 0.3])
    gam = np.asarray(christoffel(model, x))  # Gamma^k_ij
    np.testing.assert_allclose(gam, np.swapaxes(gam, 1, 2), atol=1e-13)
    dg = np.asarray(jax.jacfwd(model.metric)(x))  # d_k g_ij
    g = np.asarray(model.metric(x))
    lower = np.einsum("kl,lij->kij", g, gam)
    # d_k g_ij = Gamma_ikj + Gamma_jki with Gamma_lij = g_lm Gamma^m_ij
    np.testing.assert_allclose(np.moveaxis(dg, 2, 0), np.einsum("ikj->kij", lower) + np.einsum("jki->kij", lower), atol=1e-12)


def test_ricci_identities_on_random_fields():
    model = build_round_sphere(2)
    grid = quadrature_grid(model, "8x12")
    a, omega, h = random_test_fields(model, 4, 2, seed=3)
    assert max(ricci_identity_residual(model, omega, h, grid.interior_nodes)) < 1e-9


def test_hessian_of_ambient_coordinates_and_killing_field():
    r = 1.5
    model = build_round_sphere(2, r)
    ambient = TensorField.from_function(lambda x: model.ambient(x), 0)
    killing = TensorField.from_function(lambda x: jnp.stack([jnp.array([0.0, (r * jnp.sin(x[0])) ** 2])]), 1)
    hess, lie = hessian_and_lie(model, ambient, killing)
    g = metric_field(model)
    for x in ([0.7, 1.1], [2.3, 5.0]):
        y = np.asarray(model.ambient(jnp.asarray(x)))
        gx = np.asarray(g(jnp.asarray(x)))[0]
        np.testing.assert_allclose(np.asarray(hess(jnp.asarray(x))), -y[:, None, None] * gx / r**2, atol=1e-12)
        assert np.max(np.abs(np.asarray(lie(jnp.asarray(x))))) < 1e-12


def test_invalid_points_raise():
    model = build_round_sphere(2)
    with pytest.raises(ValueError):
        check_point(model, [4.0, 0.0])
    with pytest.raises(SingularMetricError):
        check_point(model, [0.0, 1.0])
