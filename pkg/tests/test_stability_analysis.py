from dataclasses import replace

import jax.numpy as jnp
import numpy as np
import pytest

from grslab import quadrature_grid
from grslab.fields import ambient_monomials, random_test_fields
from grslab.geometry_core import TensorField, metric_jet
from grslab.spectral_galerkin import generator_forms
from grslab.stability_analysis import (
    SingularOperatorError,
    apply_N,
    deflated_joint_eigenbasis,
    image_kernel_residuals,
    n_eigentensor_relation,
    necessary_condition_scan,
    second_variation,
    solve_upsilon,
    stability_report,
    sufficient_condition_check,
    upsilon_basis,
)
from grslab.weighted_calculus import metric_field, multiply, residual_norms, ricci_field


def _factor_difference(model):
    """g1 - g2 on a product of two 2-dimensional factors."""
    mask = np.zeros((4, 4))
    mask[:2, :2], mask[2:, 2:] = 1.0, -1.0
    return TensorField(lambda ctx, k: (metric_jet(model, ctx, k) * mask[..., None])[None], 2)


def _scaled_metric(model, poly):
    return multiply(poly, metric_field(model))


def _pick(field, idx):
    return TensorField(lambda ctx, k: field.jet(ctx, k)[jnp.asarray(idx)], field.valence)


# ---------------------------------------------------------------------------
# upsilon_h


@pytest.mark.parametrize("idx, factor", [([1, 2, 3], 2.0), ([5, 8], 1.2)])
def test_upsilon_of_conformal_directions(s2, s2_grid, idx, factor):
    # h = u g with Delta u = -k(k+1) u gives div div h = Delta u, so upsilon = k(k+1)/(k(k+1) - 1) u
    u = _pick(ambient_monomials(s2, 2), idx)
    sol = solve_upsilon(s2, upsilon_basis(s2, 4), _scaled_metric(s2, u))
    assert np.max(sol.residual) < 1e-10 and np.max(np.abs(sol.mean)) < 1e-12
    for x in s2_grid.interior_nodes[::53]:
        np.testing.assert_allclose(sol.field(jnp.asarray(x)), factor * u(jnp.asarray(x)), atol=1e-10)


def test_upsilon_refuses_a_singular_shift(s2):
    # with tau = 1/4 the shift 1/(2 tau) = 2 cancels the first eigenvalue of Delta on S^2
    fake = replace(s2, tau=0.25, name="s2-singular")
    _, _, h = random_test_fields(fake, 2, 2)
    with pytest.raises(SingularOperatorError):
        solve_upsilon(fake, upsilon_basis(fake, 3), h)


# ---------------------------------------------------------------------------
# N on fields


def test_ricci_and_metric_lie_in_the_kernel_of_N(s3, s3_grid):
    ric = ricci_field(s3)
    assert residual_norms(s3, s3_grid, apply_N(s3, s3_grid, ric))[0] < 1e-8
    assert abs(second_variation(s3, s3_grid, metric_field(s3))[0]) < 1e-10


def test_N_fixes_the_factor_difference(s2xs2, s2xs2_grid):
    h = _factor_difference(s2xs2)
    nh = apply_N(s2xs2, s2xs2_grid, h)
    assert residual_norms(s2xs2, s2xs2_grid, nh - h)[0] < 1e-10
    assert second_variation(s2xs2, s2xs2_grid, h)[0] == pytest.approx(4.0, abs=1e-10)


@pytest.mark.parametrize("name", ["s2", "s3", "s2xs2"])
def test_image_kernel_chain(name, request):
    model = request.getfixturevalue(name)
    grid = request.getfixturevalue(f"{name}_grid")
    gens, _ = generator_forms(model, 1)
    res = image_kernel_residuals(model, grid, gens)
    assert set(res.residuals) == {"T4.1", "C4.2", "L4.3", "L4.4", "T4.5", "upsilon"}
    assert max(v[0] for k, v in res.residuals.items() if k != "upsilon") < 1e-8
    assert res.residuals["upsilon"][0] < 1e-6


def test_killing_form_is_in_the_kernel_of_dagger(s2, s2_grid):
    killing = TensorField.from_function(lambda x: jnp.stack([jnp.array([0.0, jnp.sin(x[0]) ** 2])]), 1)
    res = image_kernel_residuals(s2, s2_grid, killing)
    assert res.residuals["T4.5"][0] < 1e-10
    assert res.residuals["T4.1"][0] < 1e-10


# ---------------------------------------------------------------------------
# Galerkin problem


def test_deflation_removes_only_the_ricci_direction():
    # A has a zero cluster spanned by e0, e1; Ric = e0 is removed from it
    a = np.diag([0.0, 0.0, -3.0])
    b = np.diag([0.0, 1.0, -1.0])
    d = deflated_joint_eigenbasis(a, b, np.eye(3), np.array([1.0, 0.0, 0.0]))
    assert d.removed == [1.0, 0.0]
    np.testing.assert_allclose(d.lam, [0.0, -3.0], atol=1e-12)
    np.testing.assert_allclose(d.mu, [1.0, -1.0], atol=1e-12)
    assert abs(d.vectors[0, 0]) < 1e-12


def test_problem_matrices_are_symmetric(problems, s2):
    prob = problems(s2, 2)
    assert prob.n_asymmetry < 1e-7
    for name in ("lichnerowicz_f", "lichnerowicz_f+div_dagger_div", "N"):
        assert prob.assembled(name).symmetry_defect < 1e-8


def test_necessary_scan_on_s2_finds_nothing(problems, s2):
    scan = necessary_condition_scan(problems(s2, 2))
    assert scan.entries == [] and not scan.unstable
    assert max(e.agreement for e in scan.audit) < 1e-6
    assert scan.max_ric_pairing_nonzero < 1e-8


def test_truncated_basis_is_inconclusive(problems, s2):
    assert sufficient_condition_check(problems(s2, 0)).verdict == "inconclusive (truncation)"


def test_s3_is_stable_in_the_truncated_subspace(problems, s3):
    prob = problems(s3, 1)
    suf = sufficient_condition_check(prob)
    assert suf.verdict == "stable (sufficient, L=1)"
    assert suf.classification_ok
    assert np.max(suf.image_n_norms, initial=0.0) < 1e-6
    assert np.max(suf.kernel_div_norms, initial=0.0) < 1e-6


def test_product_witness(problems, s2xs2):
    prob = problems(s2xs2, 1)
    rep = stability_report(s2xs2, 1, problem=prob)
    assert rep.verdict == "unstable (witness)"
    w = rep.witness
    assert w.tags == "+1[1*g1] -1[1*g2]"
    assert w.nu2_direct == pytest.approx(4.0, abs=1e-6)
    assert rep.witness_recheck == pytest.approx(4.0, abs=1e-6)
    assert abs(w.eigenvalue) < 1e-8 and w.eigen_residual < 1e-8 and abs(w.ric_pairing) < 1e-8
    assert w.agreement < 1e-6
    assert rep.sufficient.verdict.startswith("inconclusive")
    assert 0.0 in [round(x, 8) for x in rep.sufficient.offending]


def test_witness_is_the_factor_difference(problems, s2xs2, s2xs2_grid):
    rep = stability_report(s2xs2, 1, recheck=False, problem=problems(s2xs2, 1))
    h = problems(s2xs2, 1).basis.combine(rep.witness.coefficients[:, None])
    assert residual_norms(s2xs2, s2xs2_grid, h - _factor_difference(s2xs2))[0] < 1e-8


def test_n_eigen_relation(problems, s2, s2xs2):
    for prob in (problems(s2, 2), problems(s2xs2, 1)):
        rel = n_eigentensor_relation(prob)
        assert len(rel.eigenvalues) > 0 and rel.excluded >= 1
        assert np.all(np.abs(rel.eigenvalues) > 1e-6)
        assert rel.relation_residuals.max() < 1e-5
        assert rel.div_n_norms.max() < 1e-6
