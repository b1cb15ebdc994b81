"""Polynomial test fields built from a model's ambient coordinates."""

from __future__ import annotations

import itertools

import jax.numpy as jnp
import numpy as np

from . import jets
from .geometry_core import ManifoldModel, TensorField, ambient_jet, covariant_derivative, product_field
from .weighted_calculus import metric_field, multiply

__all__ = ["ambient_exponents", "ambient_monomials", "ambient_polynomials", "random_test_fields"]


def ambient_exponents(dim: int, degree: int) -> list:
    """Exponent tuples of total degree ``<= degree``, graded."""
    out = []
    for k in range(degree + 1):
        for combo in itertools.combinations_with_replacement(range(dim), k):
            e = [0] * dim
            for i in combo:
                e[i] += 1
            out.append(tuple(e))
    return out


def _ambient_dim(model: ManifoldModel) -> int:
    if model.ambient is None:
        raise ValueError(f"{model.name} has no ambient embedding")
    return int(np.asarray(model.ambient(jnp.asarray(np.mean([model.chart.lower, model.chart.upper], axis=0)))).shape[0])


def ambient_monomials(model: ManifoldModel, degree: int, exponents=None) -> TensorField:
    """Scalar stack of ambient monomials ``y^e`` restricted to the manifold."""
    dim = _ambient_dim(model)
    exps = list(exponents) if exponents is not None else ambient_exponents(dim, degree)

    top = max((sum(e) for e in exps), default=0)
    full = ambient_exponents(dim, top)
    index = {e: i for i, e in enumerate(full)}
    # each monomial of degree d is (its parent of degree d - 1) * y_i, one batched product per degree
    levels = []
    for d in range(1, top + 1):
        rows = [e for e in full if sum(e) == d]
        var = [next(j for j in range(dim) if e[j]) for e in rows]
        parent = [index[tuple(v - (j == i) for j, v in enumerate(e))] for e, i in zip(rows, var)]
        levels.append((np.asarray(parent), np.asarray(var)))
    pick = np.asarray([index[tuple(e)] for e in exps], dtype=np.int64)

    def jet(ctx, k):
        y = ambient_jet(model, ctx, k)
        out = jets.constant(jnp.ones((1,)), ctx.n, k)
        for parent, var in levels:
            out = jnp.concatenate([out, jets.mul("m,m->m", out[parent], y[var], ctx.n, k)])
        return out[pick]

    return TensorField(jet, 0, tags=tuple(f"y^{e}" for e in exps))


def ambient_polynomials(model: ManifoldModel, coeffs, degree: int) -> TensorField:
    """Stack of polynomials ``coeffs @ monomials`` (one row per member)."""
    return ambient_monomials(model, degree).combine(coeffs)


def random_test_fields(model: ManifoldModel, count: int = 20, degree: int = 2, seed: int = 0):
    """``(a, w, h)``: random scalar, 1-form and symmetric 2-tensor stacks.

    ``a, b, c`` are random ambient polynomials; ``w = a db`` and
    ``h = c g + db (x) db``.
    """
    rng = np.random.default_rng(seed)
    nmono = len(ambient_exponents(_ambient_dim(model), degree))
    # unit-variance coefficients scaled so each polynomial is O(1) on the unit sphere
    scale = 1.0 / np.sqrt(nmono)
    a, b, c = (ambient_polynomials(model, scale * rng.standard_normal((count, nmono)), degree) for _ in range(3))
    db = covariant_derivative(model, b)
    omega = multiply(a, db)
    h = multiply(c, metric_field(model).combine(np.ones((count, 1)))) + product_field("mi,mj->mij", db, db, 2, "symmetric-pair")
    return a, omega, h
