import math

import jax
import jax.numpy as jnp
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from grslab import ellipsoid, quadrature_grid
from grslab.fields import ambient_monomials, random_test_fields
from grslab.geometry_core import TensorField
from grslab.weighted_calculus import (
    GENERAL_IDENTITIES,
    SOLITON_IDENTITIES,
    ApproximateSolitonError,
    adjointness_defects,
    commutator_residuals,
    div_f,
    div_f_dagger,
    divergence_theorem_defects,
    entropy_report,
    first_variation,
    inner_dm,
    laplace_f,
    lichnerowicz_f,
    metric_field,
    potential_field,
    residual_norms,
    ricci_field,
    scalar_curvature_field,
    trace_difference,
    useful_identity_residuals,
)

# (tau, f, R, nu) of the normalised soliton fixtures, by hand:
#   f = log(vol / (4 pi tau)^(n/2)),  nu = tau R + f - n
FIXTURES = {
    "s2": (0.5, math.log(2), 2.0, math.log(2) - 1),
    "s3": (0.25, math.log(2 * math.sqrt(math.pi)), 6.0, 1.5 + math.log(2 * math.sqrt(math.pi)) - 3),
    "s2xs2": (0.5, math.log(4), 4.0, math.log(4) - 2),
}


@pytest.mark.parametrize("name", ["s2", "s3", "s2xs2"])
def test_soliton_fixture_values(name, request):
    model, grid = request.getfixturevalue(name), request.getfixturevalue(f"{name}_grid")
    tau, f, r, nu = FIXTURES[name]
    assert model.tau == pytest.approx(tau, abs=1e-15)
    x = grid.nodes[len(grid.nodes) // 3]
    assert float(potential_field(model)(jnp.asarray(x))[0]) == pytest.approx(f, abs=1e-12)
    assert float(scalar_curvature_field(model)(jnp.asarray(x))[0]) == pytest.approx(r, abs=1e-12)
    ent = entropy_report(model, grid)
    assert ent.nu == pytest.approx(nu, abs=1e-10)
    assert ent.residual_pointwise < 1e-8 and ent.residual_integral < 1e-8


def test_entropy_value_is_frozen(s2, s2_grid):
    # ln 2 - 1
    assert entropy_report(s2, s2_grid).W == pytest.approx(-0.30685281944005466, abs=1e-12)


@pytest.mark.parametrize("name", ["s2", "s3"])
def test_useful_identities(name, request):
    model, grid = request.getfixturevalue(name), request.getfixturevalue(f"{name}_grid")
    res = useful_identity_residuals(model, grid)
    assert set(res.residuals) == {"divf_Ric", "divf_Rm", "lichnerowicz_Ric", "laplace_R", "laplace_f", "integral_R"}
    assert res.max_sup() < 1e-8


def test_soliton_only_operations_refuse_approximate_models():
    model = ellipsoid(resolution="24x48")
    with pytest.raises(ApproximateSolitonError):
        useful_identity_residuals(model, quadrature_grid(model, "24x48"))


@pytest.mark.parametrize("degree, eigen", [(1, -2.0), (2, -6.0)])
def test_drift_laplacian_on_spherical_harmonics(s2, s2_grid, degree, eigen):
    # trace-free parts of degree-k ambient monomials on the unit S^2 are eigenfunctions with -k(k+1)
    y = ambient_monomials(s2, degree)  # 1, x, y, z, x^2, xy, xz, y^2, yz, z^2
    if degree == 1:
        u = TensorField(lambda ctx, k: y.jet(ctx, k)[1:4], 0)
    else:  # xy, yz, x^2 - y^2
        u = TensorField(lambda ctx, k: jnp.stack([y.jet(ctx, k)[5], y.jet(ctx, k)[8], y.jet(ctx, k)[4] - y.jet(ctx, k)[7]]), 0)
    lap = laplace_f(s2, u)
    for x in s2_grid.interior_nodes[::97]:
        np.testing.assert_allclose(lap(jnp.asarray(x)), eigen * u(jnp.asarray(x)), atol=1e-12)


def test_first_variation_vanishes_at_a_shrinker(s2, s2_grid):
    _, _, h = random_test_fields(s2, 5, 2, seed=4)
    assert np.max(np.abs(first_variation(s2, s2_grid, h))) < 1e-12


def test_dagger_is_minus_half_lie_derivative(s2, s2_grid):
    from grslab.geometry_core import lie_derivative_metric

    _, omega, _ = random_test_fields(s2, 3, 2, seed=2)
    diff = div_f_dagger(s2, omega) - lie_derivative_metric(s2, omega).scale(-0.5)
    assert residual_norms(s2, s2_grid, diff)[0] < 1e-13


@settings(max_examples=5, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_pairing_identities_hold_for_random_fields(seed):
    from grslab import build_round_sphere

    model = build_round_sphere(2)
    grid = quadrature_grid(model, "12x16")
    a, omega, h = random_test_fields(model, 3, 2, seed=seed)
    _, _, k = random_test_fields(model, 3, 2, seed=seed + 1)
    d = adjointness_defects(model, grid, a, omega, h, k)
    assert set(d) == {"div_f_vs_d", "div_f_vs_dagger", "laplace_f_selfadjoint"}
    assert max(d.values()) < 1e-12
    assert max(divergence_theorem_defects(model, grid, a, omega).values()) < 1e-12


def test_pairing_is_symmetric_bilinear(s2, s2_grid):
    _, _, h = random_test_fields(s2, 3, 2, seed=5)
    _, _, k = random_test_fields(s2, 3, 2, seed=6)
    np.testing.assert_allclose(inner_dm(s2, s2_grid, h, k), inner_dm(s2, s2_grid, k, h), atol=1e-14)
    # |g|^2 = n pointwise, so <g, g>_dm = n
    g = metric_field(s2)
    assert float(inner_dm(s2, s2_grid, g, g)[0]) == pytest.approx(2.0, abs=1e-13)


def test_commutator_suite_on_s2(s2):
    grid = quadrature_grid(s2, "32x64")
    a, omega, h = random_test_fields(s2, 20, 2, seed=0)
    res = commutator_residuals(s2, grid, a, omega, h)
    assert set(res.residuals) == set(GENERAL_IDENTITIES + SOLITON_IDENTITIES)
    assert res.max_sup() < 1e-8


def test_commutators_skip_soliton_identities_on_the_ellipsoid():
    model = ellipsoid(resolution="96x192")
    grid = quadrature_grid(model, "96x192")
    a, omega, h = random_test_fields(model, 4, 2, seed=0)
    res = commutator_residuals(model, grid, a, omega, h)
    assert set(res.residuals) == set(GENERAL_IDENTITIES)
    assert set(res.skipped) == set(SOLITON_IDENTITIES)
    assert res.max_sup() < 1e-4


@pytest.mark.parametrize("name", ["s2", "s2xs2"])
def test_lichnerowicz_commutes_with_trace_on_einstein_models(name, request):
    model, grid = request.getfixturevalue(name), request.getfixturevalue(f"{name}_grid")
    _, _, h = random_test_fields(model, 3, 2, seed=1)
    assert residual_norms(model, grid, trace_difference(model, h))[0] < 1e-10


def test_lichnerowicz_forms_agree_and_kill_ricci(s2xs2, s2xs2_grid):
    _, _, h = random_test_fields(s2xs2, 3, 2, seed=1)
    diff = lichnerowicz_f(s2xs2, h) - lichnerowicz_f(s2xs2, h, form="general")
    assert residual_norms(s2xs2, s2xs2_grid, diff)[0] < 1e-10
    assert residual_norms(s2xs2, s2xs2_grid, lichnerowicz_f(s2xs2, ricci_field(s2xs2)))[0] < 1e-10
    # Ric is div_f-free on a shrinker
    assert residual_norms(s2xs2, s2xs2_grid, div_f(s2xs2, ricci_field(s2xs2)))[0] < 1e-12


def test_operators_reject_wrong_valence(s2):
    _, omega, _ = random_test_fields(s2, 2, 2)
    with pytest.raises(ValueError):
        lichnerowicz_f(s2, omega)


def test_jax_is_in_double_precision():
    assert jax.config.read("jax_enable_x64")
