"""Truncated multivariate Taylor polynomials ("jets") at a point.

A jet of order ``K`` in ``n`` variables is stored as its coefficients on the
monomials of total degree ``<= K``, graded by degree, in the trailing axis of
an array.  Because the ordering is graded, the order-``K'`` jet of a function
is the leading slice of its order-``K`` jet for every ``K' <= K``.

Differentiation drops one order; multiplication is the truncated Cauchy
product.  Everything here is plain ``jax.numpy`` and composes with ``jit``.
"""

from __future__ import annotations

import itertools
import math
from functools import lru_cache

import jax
import jax.numpy as jnp
import numpy as np
from jax.experimental import jet as _jet

__all__ = [
    "jet_size",
    "monomials",
    "truncate",
    "constant",
    "mul",
    "grad",
    "recip",
    "matrix_inverse",
    "taylor",
    "embed",
    "coordinate_function",
    "sin_cos",
]


def jet_size(n: int, order: int) -> int:
    return math.comb(n + order, order)


@lru_cache(maxsize=None)
def monomials(n: int, order: int) -> np.ndarray:
    """Exponent rows of all monomials of degree ``<= order``, graded."""
    rows = []
    for k in range(order + 1):
        for combo in itertools.combinations_with_replacement(range(n), k):
            e = [0] * n
            for i in combo:
                e[i] += 1
            rows.append(e)
    return np.asarray(rows, dtype=np.int64).reshape(-1, n)


class _Tables:
    """Index tables for products, derivatives and Taylor extraction."""

    def __init__(self, n: int, order: int):
        exps = monomials(n, order)
        self.size = len(exps)
        deg = exps.sum(axis=1)
        index = {tuple(e): i for i, e in enumerate(exps)}
        ii, jj, ss = [], [], []
        for i in range(self.size):
            for j in range(self.size):
                if deg[i] + deg[j] <= order:
                    ii.append(i)
                    jj.append(j)
                    ss.append(index[tuple(exps[i] + exps[j])])
        perm = np.argsort(ss, kind="stable")
        self.mul_i = np.asarray(ii)[perm]
        self.mul_j = np.asarray(jj)[perm]
        self.mul_s = np.asarray(ss)[perm]
        if order > 0:
            low = monomials(n, order - 1)
            eye = np.eye(n, dtype=np.int64)
            self.grad_src = np.array([[index[tuple(row + eye[a])] for row in low] for a in range(n)])
            self.grad_fac = np.array([[row[a] + 1.0 for row in low] for a in range(n)])


@lru_cache(maxsize=None)
def _tables(n: int, order: int) -> _Tables:
    return _Tables(n, order)


@lru_cache(maxsize=None)
def _taylor_gather(n: int, k: int):
    """Flat index into ``n**k`` and ``1/alpha!`` for each degree-``k`` monomial."""
    idx, fac = [], []
    for combo in itertools.combinations_with_replacement(range(n), k):
        flat = 0
        for a in combo:
            flat = flat * n + a
        counts = np.bincount(np.asarray(combo, dtype=np.int64), minlength=n) if k else np.zeros(n, int)
        idx.append(flat)
        fac.append(1.0 / float(np.prod([math.factorial(c) for c in counts])))
    return np.asarray(idx), np.asarray(fac)


def truncate(c, n: int, order: int):
    return c[..., : jet_size(n, order)]


def constant(value, n: int, order: int):
    v = jnp.asarray(value, dtype=jnp.float64)
    pad = jnp.zeros(v.shape + (jet_size(n, order) - 1,))
    return jnp.concatenate([v[..., None], pad], axis=-1)


def mul(spec: str, a, b, n: int, order: int):
    """Truncated product contracted like ``jnp.einsum(spec, a, b)`` on the
    tensor axes; operands may carry jets of order ``>= order``."""
    lhs, out = spec.split("->")
    sa, sb = lhs.split(",")
    a = truncate(a, n, order)
    b = truncate(b, n, order)
    if order == 0:
        return jnp.einsum(f"{sa}Z,{sb}Z->{out}Z", a, b)
    t = _tables(n, order)
    prod = jnp.einsum(f"{sa}Z,{sb}Z->{out}Z", a[..., t.mul_i], b[..., t.mul_j])
    summed = jax.ops.segment_sum(jnp.moveaxis(prod, -1, 0), t.mul_s, num_segments=t.size, indices_are_sorted=True)
    return jnp.moveaxis(summed, 0, -1)


def grad(c, n: int, order: int):
    """Partial derivatives of an order-``order`` jet: shape ``(..., n, M_{order-1})``."""
    if order < 1:
        raise ValueError("cannot differentiate an order-0 jet")
    t = _tables(n, order)
    return truncate(c, n, order)[..., t.grad_src] * t.grad_fac


def _strip_constant(c):
    return c.at[..., 0].set(0.0)


def recip(u, n: int, order: int):
    """Elementwise ``1/u`` (nonzero constant term required)."""
    u = truncate(u, n, order)
    u0 = u[..., :1]
    w = -_strip_constant(u) / u0
    term = constant(jnp.ones(u.shape[:-1]), n, order)
    acc = term
    for _ in range(order):
        term = mul("...,...->...", term, w, n, order)
        acc = acc + term
    return acc / u0


def matrix_inverse(g, n: int, order: int):
    """Inverse of a matrix-valued jet ``(d, d, M)`` by a Neumann series about
    its constant term."""
    g = truncate(g, n, order)
    g0inv = jnp.linalg.inv(g[..., 0])
    w = -jnp.einsum("ij,jkZ->ikZ", g0inv, _strip_constant(g))
    eye = constant(jnp.eye(g.shape[0]), n, order)
    term, acc = eye, eye
    for _ in range(order):
        term = mul("ij,jk->ik", term, w, n, order)
        acc = acc + term
    return jnp.einsum("ijZ,jk->ikZ", acc, g0inv)


def _derivatives(fun, x, order):
    """``(f, Df, ..., D^K f)`` with each level traced once."""

    def level(k):
        if k == 0:
            return lambda y: (fun(y),)
        prev = level(k - 1)

        def f(y):
            jac, aux = jax.jacfwd(lambda z: (lambda t: (t[-1], t))(prev(z)), has_aux=True)(y)
            return aux + (jac,)

        return f

    return level(order)(x)


@lru_cache(maxsize=None)
def _polarization(n: int, order: int):
    """Directions on the simplex lattice ``|i| = order`` (scaled to sum 1) and,
    per degree ``k``, the pseudo-inverse mapping directional Taylor
    coefficients to monomial coefficients."""
    dirs = []
    for combo in itertools.combinations_with_replacement(range(n), order):
        dirs.append(np.bincount(np.asarray(combo, dtype=np.int64), minlength=n) / order)
    dirs = np.asarray(dirs)
    exps = monomials(n, order)
    deg = exps.sum(axis=1)
    pinv = []
    for k in range(1, order + 1):
        block = exps[deg == k]
        vander = np.prod(dirs[:, None, :] ** block[None, :, :], axis=2)
        pinv.append(np.linalg.pinv(vander, rcond=1e-13))
    return dirs, pinv


def taylor(fun, x, order: int):
    """Order-``order`` jet of a point function at ``x`` (output axes first).

    Univariate Taylor series are propagated along a lattice of directions and
    the mixed partials recovered by polarization; cost grows polynomially in
    the order, unlike nested forward differentiation.
    """
    n = x.shape[0]
    if order == 0:
        return fun(x)[..., None]
    if order == 1:
        return jnp.concatenate([fun(x)[..., None], jax.jacfwd(fun)(x)], axis=-1)
    dirs, pinv = _polarization(n, order)
    zero = jnp.zeros(n)

    def along(v):
        primal, series = _jet.jet(fun, (x,), ((v,) + (zero,) * (order - 1),))
        return primal, jnp.stack(series, axis=0)

    primal, series = jax.vmap(along)(jnp.asarray(dirs))  # series: (D, K, ...)
    parts = [primal[0][..., None]]
    for k in range(1, order + 1):
        yk = series[:, k - 1] / math.factorial(k)  # (D, ...)
        parts.append(jnp.moveaxis(jnp.tensordot(pinv[k - 1], yk, axes=([1], [0])), 0, -1))
    return jnp.concatenate(parts, axis=-1)


@lru_cache(maxsize=None)
def _embed_index(n_sub: int, offset: int, n: int, order: int) -> np.ndarray:
    full = {tuple(e): i for i, e in enumerate(monomials(n, order))}
    out = []
    for e in monomials(n_sub, order):
        row = [0] * n
        row[offset : offset + n_sub] = list(e)
        out.append(full[tuple(row)])
    return np.asarray(out)


def embed(c, n_sub: int, offset: int, n: int, order: int):
    """Jet in variables ``offset..offset+n_sub`` viewed as a jet in all ``n``."""
    idx = _embed_index(n_sub, offset, n, order)
    out = jnp.zeros(c.shape[:-1] + (jet_size(n, order),))
    return out.at[..., idx].set(truncate(c, n_sub, order))


@lru_cache(maxsize=None)
def _axis_powers(n: int, axis: int, order: int) -> np.ndarray:
    index = {tuple(e): i for i, e in enumerate(monomials(n, order))}
    out = []
    for k in range(order + 1):
        e = [0] * n
        e[axis] = k
        out.append(index[tuple(e)])
    return np.asarray(out)


def coordinate_function(derivs, axis: int, n: int, order: int):
    """Jet of ``u(x_axis)`` from its derivatives ``u, u', ..., u^(K)`` at the point."""
    coeffs = jnp.stack([derivs[k] / math.factorial(k) for k in range(order + 1)], axis=-1)
    out = jnp.zeros(coeffs.shape[:-1] + (jet_size(n, order),))
    return out.at[..., _axis_powers(n, axis, order)].set(coeffs)


def sin_cos(x, axis: int, n: int, order: int):
    """Exact jets of ``sin(x_axis)`` and ``cos(x_axis)``."""
    s, c = jnp.sin(x[axis]), jnp.cos(x[axis])
    cycle_s = (s, c, -s, -c)
    cycle_c = (c, -s, -c, s)
    return (
        coordinate_function([cycle_s[k % 4] for k in range(order + 1)], axis, n, order),
        coordinate_function([cycle_c[k % 4] for k in range(order + 1)], axis, n, order),
    )
