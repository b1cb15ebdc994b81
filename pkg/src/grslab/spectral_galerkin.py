"""Galerkin truncation of the weighted operators.

Bases are generated geometrically from ambient polynomials and made
dm-orthonormal by modified Gram-Schmidt; every member keeps the provenance
of the candidate that introduced it, so members spanning ``Im(div_f^dagger)``
(Hessians and Lie derivatives of the metric) are known by construction.

Polynomial degree counts each ambient differential ``dy_j`` as one, so a
tensor basis of degree ``L`` contains ``a g_B`` and ``nabla^2 a`` with
``deg a <= L``, ``L_{#(a dy_j)} g`` with ``deg a <= L - 1`` and
``a dy_j . dy_k`` with ``deg a <= L - 2``.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Optional

import jax.numpy as jnp
import numpy as np
import scipy.linalg

from . import jets
from .fields import _ambient_dim, ambient_exponents, ambient_monomials
from .geometry_core import ManifoldModel, TensorField, covariant_derivative, hessian, lie_derivative_metric, metric_jet, sample_joint
from .model_manifolds import QuadratureGrid, quadrature_grid
from .tolerances import TOLERANCES
from .weighted_calculus import (
    div_f,
    div_f_dagger,
    gram_dm,
    inverse_metric_field,
    laplace_f,
    lichnerowicz_f,
)

__all__ = [
    "GalerkinBasis",
    "SpectralResult",
    "JointEigenbasis",
    "GapCheck",
    "OPERATORS",
    "galerkin_resolution",
    "galerkin_grid",
    "scalar_basis",
    "tensor_basis",
    "generator_forms",
    "lichnerowicz_pair",
    "commutation_trend",
    "assemble",
    "eigensolve",
    "spectral_gap_check",
    "commutation_residual",
    "joint_eigenbasis",
    "harmonic_spectrum",
    "spectrum_rows",
]

DIV_DAGGER_KINDS = ("hess", "lie")
OPERATORS = ("laplace_f", "lichnerowicz_f", "lichnerowicz_f+div_dagger_div", "N")


def galerkin_resolution(model: ManifoldModel, degree: int) -> tuple:
    """Grid exact for products of degree-``degree`` basis fields and their
    second derivatives (integrands of ambient degree ``<= 2 degree + 6``)."""
    polar = max(2 * degree + 2, degree + 4, 4)
    periodic = max(2 * degree + 2, 2 * degree + 7)
    return tuple(periodic if p else polar for p in model.chart.periodic)


def galerkin_grid(model: ManifoldModel, degree: int, resolution=None) -> QuadratureGrid:
    return quadrature_grid(model, resolution or galerkin_resolution(model, degree), degree=degree)


def _mono_name(e) -> str:
    parts = [f"y{i + 1}" + (f"^{p}" if p > 1 else "") for i, p in enumerate(e) if p]
    return "*".join(parts) if parts else "1"


def _stack(fields, valence, symmetry, tags) -> TensorField:
    return TensorField(lambda ctx, k: jnp.concatenate([f.jet(ctx, k) for f in fields], axis=0), valence, symmetry, tags)


def _inverse_metric_samples(model, grid):
    return inverse_metric_field(model).sample(grid.nodes)[:, 0]


def _whiten(samples, ginv, grid, valence):
    """Rows ``x_i`` with ``x_i . x_j = <t_i, t_j>_dm``."""
    lower = np.linalg.cholesky(ginv)  # g^-1 = M M^T
    out = samples
    for s in range(valence):
        moved = np.moveaxis(out, 2 + s, -1)
        out = np.moveaxis(np.einsum("N...a,Nap->N...p", moved, lower), -1, 2 + s)
    out = out * np.sqrt(grid.dm).reshape((-1,) + (1,) * (out.ndim - 1))
    return np.moveaxis(out, 1, 0).reshape(samples.shape[1], -1)


def _mgs(rows, drop):
    """Modified Gram-Schmidt (two passes) on candidate rows.

    Returns ``(coeffs, kept)`` with orthonormal members ``coeffs.T @ rows``;
    a candidate is dropped when the squared norm of its normalised residual
    falls below ``drop``.
    """
    m = rows.shape[0]
    norms = np.linalg.norm(rows, axis=1)
    q = np.zeros((0, rows.shape[1]))
    c = np.zeros((0, m))
    kept = []
    for i in range(m):
        if norms[i] == 0.0:
            continue
        v = rows[i] / norms[i]
        ci = np.zeros(m)
        ci[i] = 1.0 / norms[i]
        for _ in range(2):
            for j in range(len(q)):
                p = q[j] @ v
                v = v - p * q[j]
                ci = ci - p * c[j]
        nv = np.linalg.norm(v)
        if nv * nv < drop:
            continue
        q = np.vstack([q, v / nv])
        c = np.vstack([c, ci / nv])
        kept.append(i)
    return c.T, kept


@dataclass
class GalerkinBasis:
    """dm-orthonormal stack ``coeffs.T @ candidates`` with provenance.

    ``tags``/``kinds`` describe the candidate that introduced each member;
    ``condition`` is the condition number of the Gram matrix of the kept
    (normalised) candidates.
    """

    model: ManifoldModel
    grid: QuadratureGrid
    degree: int
    candidates: TensorField
    candidate_tags: tuple
    candidate_kinds: tuple
    coeffs: np.ndarray
    kept: tuple
    gram: np.ndarray
    condition: float
    candidate_samples: np.ndarray = field(repr=False)
    _field: Optional[TensorField] = field(default=None, repr=False)

    @property
    def valence(self) -> int:
        return self.candidates.valence

    @property
    def size(self) -> int:
        return self.coeffs.shape[1]

    @property
    def tags(self) -> tuple:
        return tuple(self.candidate_tags[i] for i in self.kept)

    @property
    def kinds(self) -> tuple:
        return tuple(self.candidate_kinds[i] for i in self.kept)

    @property
    def dropped(self) -> tuple:
        keep = set(self.kept)
        return tuple(t for i, t in enumerate(self.candidate_tags) if i not in keep)

    @property
    def image_mask(self) -> np.ndarray:
        """Members whose span lies in ``Im(div_f^dagger)``."""
        return np.array([k in DIV_DAGGER_KINDS for k in self.kinds], dtype=bool)

    @property
    def field(self) -> TensorField:
        if self._field is None:
            self._field = self.candidates.combine(self.coeffs.T)
            self._field.symmetry = self.candidates.symmetry
            self._field.tags = self.tags
        return self._field

    def samples(self) -> np.ndarray:
        return np.moveaxis(np.tensordot(self.coeffs.T, np.moveaxis(self.candidate_samples, 1, 0), axes=1), 0, 1)

    def combine(self, vectors) -> TensorField:
        """Fields ``sum_i v_i b_i`` for each column ``v`` of ``vectors``."""
        return self.candidates.combine((self.coeffs @ np.asarray(vectors)).T)

    def dominant_tags(self, vector, share: float = 0.5, limit: int = 3) -> str:
        """Provenance of the candidates carrying most of ``sum v_i b_i``, as a
        signed combination relative to the dominant one, e.g. ``+1[1*g1] -1[1*g2]``."""
        c = self.coeffs @ np.asarray(vector)
        scale = np.sqrt(np.maximum(np.einsum("ii->i", self._candidate_gram()), 0.0))
        w = np.abs(c) * scale
        if not np.any(w > 0):
            return ""
        rel = np.round(w / w.max(), 9)  # ties broken by index, not roundoff
        order = sorted(range(len(w)), key=lambda i: (-rel[i], i))
        top = [i for i in order if rel[i] >= share][:limit]
        lead = c[top[0]]
        return " ".join(f"{c[i] / lead:+.6g}[{self.candidate_tags[i]}]" for i in top)

    def _candidate_gram(self):
        if not hasattr(self, "_cgram"):
            ginv = _inverse_metric_samples(self.model, self.grid)
            self._cgram = gram_dm(self.grid, self.candidate_samples, self.candidate_samples, ginv, self.valence)
        return self._cgram


def _orthonormal_basis(model, grid, degree, candidates, tags, kinds, drop=None) -> GalerkinBasis:
    drop = TOLERANCES["gram_drop"] if drop is None else drop
    samples = candidates.sample(grid.nodes)
    ginv = _inverse_metric_samples(model, grid)
    rows = _whiten(samples, ginv, grid, candidates.valence)
    coeffs, kept = _mgs(rows, drop)
    if not kept:
        raise ValueError(f"{model.name}: basis is empty after filtering")
    gram = coeffs.T @ (rows @ rows.T) @ coeffs
    sub = rows[kept] / np.linalg.norm(rows[kept], axis=1, keepdims=True)
    sv = np.linalg.svd(sub, compute_uv=False)
    condition = float((sv[0] / sv[-1]) ** 2)
    return GalerkinBasis(model, grid, degree, candidates, tuple(tags), tuple(kinds), coeffs, tuple(kept), gram, condition, samples)


def scalar_basis(model: ManifoldModel, grid: QuadratureGrid, degree: int) -> GalerkinBasis:
    """Ambient monomials of degree ``<= degree``; the constant comes first, so
    members ``1:`` span the dm-mean-zero part."""
    if degree < 0:
        raise ValueError("degree must be non-negative")
    exps = ambient_exponents(_ambient_dim(model), degree)
    cand = ambient_monomials(model, degree, exps)
    tags = tuple(_mono_name(e) for e in exps)
    return _orthonormal_basis(model, grid, degree, cand, tags, ("poly",) * len(tags))


def _block_metrics(model: ManifoldModel) -> TensorField:
    blocks = model.blocks

    def jet(ctx, k):
        g = metric_jet(model, ctx, k)
        out = []
        for lo, hi in blocks:
            mask = np.zeros((ctx.n, ctx.n))
            mask[lo:hi, lo:hi] = 1.0
            out.append(g * mask[..., None])
        return jnp.stack(out)

    return TensorField(jet, 2, "symmetric-pair")


def _outer_stack(spec, a: TensorField, b: TensorField, valence, symmetry) -> TensorField:
    """All pairs ``(a_i, b_j)`` combined by ``spec``, flattened ``i``-major."""

    def jet(ctx, k):
        out = jets.mul(spec, a.jet(ctx, k), b.jet(ctx, k), ctx.n, k)
        return out.reshape((-1,) + out.shape[2:])

    return TensorField(jet, valence, symmetry)


def tensor_candidates(model: ManifoldModel, degree: int):
    """Generating set, ``Im(div_f^dagger)`` generators first."""
    dim = _ambient_dim(model)
    exps = ambient_exponents(dim, degree)
    names = [_mono_name(e) for e in exps]
    low1 = [e for e in exps if sum(e) <= degree - 1]
    low2 = [e for e in exps if sum(e) <= degree - 2]
    fields, tags, kinds = [], [], []

    a = ambient_monomials(model, degree, exps)
    fields.append(hessian(model, a))
    tags += [f"hess({s})" for s in names]
    kinds += ["hess"] * len(exps)

    coords = [tuple(int(i == j) for i in range(dim)) for j in range(dim)]
    dy = covariant_derivative(model, ambient_monomials(model, 1, coords))
    if low1:
        forms = _outer_stack("m,jb->mjb", ambient_monomials(model, degree, low1), dy, 1, "none")
        fields.append(lie_derivative_metric(model, forms))
        tags += [f"lie({_mono_name(e)} dy{j + 1})" for e in low1 for j in range(dim)]
        kinds += ["lie"] * (len(low1) * dim)

    nb = len(model.blocks)
    fields.append(_outer_stack("m,bij->mbij", a, _block_metrics(model), 2, "symmetric-pair"))
    gnames = ["g"] if nb == 1 else [f"g{b + 1}" for b in range(nb)]
    tags += [f"{s}*{gn}" for s in names for gn in gnames]
    kinds += ["metric"] * (len(exps) * nb)

    if low2:
        pairs = list(itertools.combinations_with_replacement(range(dim), 2))
        left = np.array([p[0] for p in pairs])
        right = np.array([p[1] for p in pairs])

        def sym_jet(ctx, k):
            d = dy.jet(ctx, k)
            prod = jets.mul("mi,mj->mij", d[left], d[right], ctx.n, k)
            return 0.5 * (prod + jnp.swapaxes(prod, 1, 2))

        dd = TensorField(sym_jet, 2, "symmetric-pair")
        fields.append(_outer_stack("m,pij->mpij", ambient_monomials(model, degree, low2), dd, 2, "symmetric-pair"))
        tags += [f"{_mono_name(e)}*dy{i + 1}.dy{j + 1}" for e in low2 for i, j in pairs]
        kinds += ["product"] * (len(low2) * len(pairs))

    return _stack(fields, 2, "symmetric-pair", tags), tags, kinds


def generator_forms(model: ManifoldModel, degree: int):
    """1-forms ``da`` (``1 <= deg a <= degree``) and ``a dy_j`` (``deg a <= degree - 1``)
    whose images under ``div_f^dagger`` span the Hessian and Lie candidates."""
    dim = _ambient_dim(model)
    exps = [e for e in ambient_exponents(dim, degree) if sum(e)]
    low1 = ambient_exponents(dim, degree - 1) if degree >= 1 else []
    fields, tags = [], []
    if exps:
        fields.append(covariant_derivative(model, ambient_monomials(model, degree, exps)))
        tags += [f"d({_mono_name(e)})" for e in exps]
    if low1:
        coords = [tuple(int(i == j) for i in range(dim)) for j in range(dim)]
        dy = covariant_derivative(model, ambient_monomials(model, 1, coords))
        fields.append(_outer_stack("m,jb->mjb", ambient_monomials(model, degree, low1), dy, 1, "none"))
        tags += [f"{_mono_name(e)} dy{j + 1}" for e in low1 for j in range(dim)]
    if not fields:
        raise ValueError("degree 0 has no generating 1-forms")
    return _stack(fields, 1, "none", tags), tags


def tensor_basis(model: ManifoldModel, grid: QuadratureGrid, degree: int, drop=None) -> GalerkinBasis:
    """Symmetric 2-tensor basis of degree ``degree`` (see module docstring)."""
    if degree < 0:
        raise ValueError("degree must be non-negative")
    cand, tags, kinds = tensor_candidates(model, degree)
    return _orthonormal_basis(model, grid, degree, cand, tags, kinds, drop)


def operator_field(model: ManifoldModel, name: str, t: TensorField) -> TensorField:
    if name == "laplace_f":
        return laplace_f(model, t)
    if name == "lichnerowicz_f":
        return lichnerowicz_f(model, t)
    if name == "lichnerowicz_f+div_dagger_div":
        return lichnerowicz_f(model, t) + div_f_dagger(model, div_f(model, t))
    raise ValueError(f"unknown operator {name!r}; expected one of {OPERATORS}")


@dataclass
class Assembled:
    """``matrix[i, j] = <op(b_j), b_i>_dm`` and its relative symmetry defect."""

    name: str
    matrix: np.ndarray
    symmetry_defect: float


def assemble(model: ManifoldModel, grid: QuadratureGrid, basis: GalerkinBasis, operator: str, **kwargs) -> Assembled:
    """Galerkin matrix of ``operator`` on ``basis`` (``N`` needs the scalar
    basis used for ``upsilon_h``; see :func:`grslab.stability_analysis.assemble_n`)."""
    if operator == "N":
        from .stability_analysis import assemble_n

        return assemble_n(model, grid, basis, **kwargs)
    if operator == "laplace_f" and basis.valence not in (0, 1, 2):
        raise ValueError("laplace_f needs rank <= 2")
    if operator != "laplace_f" and basis.valence != 2:
        raise ValueError(f"{operator} acts on symmetric 2-tensors")
    image = operator_field(model, operator, basis.candidates).sample(grid.nodes)
    ginv = _inverse_metric_samples(model, grid)
    raw = gram_dm(grid, basis.candidate_samples, image, ginv, basis.valence)
    mat = basis.coeffs.T @ raw @ basis.coeffs
    return Assembled(operator, mat, symmetry_defect(mat))


def lichnerowicz_pair(model: ManifoldModel, grid: QuadratureGrid, basis: GalerkinBasis):
    """``(A, B)`` for ``Delta_{f,L}`` and ``Delta_{f,L} + div_f^dagger div_f`` from one sampling pass."""
    c = basis.candidates
    lich, dd = sample_joint([lichnerowicz_f(model, c), div_f_dagger(model, div_f(model, c))], grid.nodes)
    ginv = _inverse_metric_samples(model, grid)
    red = lambda m: basis.coeffs.T @ gram_dm(grid, basis.candidate_samples, m, ginv, 2) @ basis.coeffs  # noqa: E731
    a = red(lich)
    b = a + red(dd)
    return Assembled("lichnerowicz_f", a, symmetry_defect(a)), Assembled("lichnerowicz_f+div_dagger_div", b, symmetry_defect(b))


def commutation_trend(model: ManifoldModel, degrees) -> list:
    """``(L, commutation residual, basis size)`` for each degree on its own grid."""
    out = []
    for deg in degrees:
        grid = galerkin_grid(model, deg)
        basis = tensor_basis(model, grid, deg)
        a, b = lichnerowicz_pair(model, grid, basis)
        out.append((deg, commutation_residual(a.matrix, b.matrix, basis.gram), basis.size))
    return out


def symmetry_defect(mat) -> float:
    nrm = np.linalg.norm(mat)
    return float(np.linalg.norm(mat - mat.T) / nrm) if nrm > 0 else 0.0


@dataclass
class SpectralResult:
    """Eigenpairs of ``A v = lam G v`` in descending order.

    ``residuals[i] = |A v_i - lam_i G v_i| / |v_i|``; ``orthonormality`` is
    ``max |V^T G V - I|``.
    """

    eigenvalues: np.ndarray
    vectors: np.ndarray
    residuals: np.ndarray
    orthonormality: float


def eigensolve(a, g) -> SpectralResult:
    a = np.asarray(a, float)
    g = np.asarray(g, float)
    sym_g = 0.5 * (g + g.T)
    try:
        np.linalg.cholesky(sym_g)
    except np.linalg.LinAlgError as exc:
        raise ValueError("Gram matrix is not positive-definite (basis filtering failed upstream)") from exc
    sym_a = 0.5 * (a + a.T)
    lam, vec = scipy.linalg.eigh(sym_a, sym_g)
    order = np.argsort(-lam, kind="stable")
    lam, vec = lam[order], vec[:, order]
    res = np.linalg.norm(sym_a @ vec - (sym_g @ vec) * lam, axis=0) / np.linalg.norm(vec, axis=0)
    ortho = float(np.max(np.abs(vec.T @ sym_g @ vec - np.eye(len(lam))))) if len(lam) else 0.0
    return SpectralResult(lam, vec, res, ortho)


def commutation_residual(a, b, g) -> float:
    """``|X Y - Y X| / (|X| |Y|)`` with ``X = G^-1 A``, ``Y = G^-1 B`` (Frobenius)."""
    x = np.linalg.solve(g, a)
    y = np.linalg.solve(g, b)
    den = np.linalg.norm(x) * np.linalg.norm(y)
    return float(np.linalg.norm(x @ y - y @ x) / den) if den > 0 else 0.0


def _clusters(values, tol):
    """Consecutive runs of (descending) ``values`` with gaps ``<= tol``."""
    groups = []
    for i, v in enumerate(values):
        if groups and abs(values[groups[-1][-1]] - v) <= tol:
            groups[-1].append(i)
        else:
            groups.append([i])
    return groups


@dataclass
class JointEigenbasis:
    """Common eigenvectors of ``A`` and ``B``: ``lam`` from ``A``, ``mu`` from
    ``B`` restricted to each ``A``-cluster.  ``leakage`` measures how far
    ``B`` fails to preserve the clusters (relative to ``|B|``)."""

    lam: np.ndarray
    mu: np.ndarray
    vectors: np.ndarray
    clusters: list
    leakage: float
    commutation: float

    @property
    def ok(self) -> bool:
        return self.leakage <= TOLERANCES["cluster"]


def joint_eigenbasis(a, b, g, rel_tol: Optional[float] = None) -> JointEigenbasis:
    rel_tol = TOLERANCES["cluster"] if rel_tol is None else rel_tol
    res = eigensolve(a, g)
    radius = float(np.max(np.abs(res.eigenvalues))) if len(res.eigenvalues) else 0.0
    groups = _clusters(res.eigenvalues, rel_tol * max(radius, 1.0))
    bs = 0.5 * (np.asarray(b) + np.asarray(b).T)
    full = res.vectors.T @ bs @ res.vectors
    mask = np.zeros_like(full, dtype=bool)
    vecs = np.zeros_like(res.vectors)
    mu = np.zeros(len(res.eigenvalues))
    for grp in groups:
        idx = np.asarray(grp)
        mask[np.ix_(idx, idx)] = True
        w, u = np.linalg.eigh(full[np.ix_(idx, idx)])
        w, u = w[::-1], u[:, ::-1]
        mu[idx] = w
        vecs[:, idx] = res.vectors[:, idx] @ u
    bn = np.linalg.norm(full)
    leak = float(np.linalg.norm(np.where(mask, 0.0, full)) / bn) if bn > 0 else 0.0
    return JointEigenbasis(res.eigenvalues.copy(), mu, vecs, groups, leak, commutation_residual(a, b, g))


@dataclass
class GapCheck:
    """``lambda_1`` of ``Delta_f`` on dm-mean-zero functions versus ``-1/(2 tau)``;
    ``passed`` asks for a strict gap larger than ``tolerance``."""

    lambda1: float
    bound: float
    passed: bool
    spectrum: np.ndarray
    tolerance: float
    exact_model: bool
    symmetry_defect: float


def spectral_gap_check(model: ManifoldModel, grid: QuadratureGrid, degree: int, tol: Optional[float] = None) -> GapCheck:
    import warnings

    tol = TOLERANCES["eigen_match"] if tol is None else tol
    if not model.is_exact:
        warnings.warn(f"{model.name}: approximate soliton, gap check is informational")
    basis = scalar_basis(model, grid, degree)
    if basis.size < 2:
        raise ValueError("scalar basis has no mean-zero members; raise the degree")
    a = assemble(model, grid, basis, "laplace_f")
    res = eigensolve(a.matrix[1:, 1:], basis.gram[1:, 1:])
    lam1 = float(res.eigenvalues[0])
    bound = -0.5 / model.tau
    return GapCheck(lam1, bound, lam1 < bound - tol, res.eigenvalues, tol, model.is_exact, a.symmetry_defect)


def _harmonic_dims(n: int, lmax: int):
    """Dimension of degree-``l`` spherical harmonics on ``S^n``."""
    out = []
    for l in range(lmax + 1):
        total = math.comb(l + n, n)
        lower = math.comb(l - 2 + n, n) if l >= 2 else 0
        out.append(total - lower)
    return out


def harmonic_spectrum(model: ManifoldModel, degree: int) -> np.ndarray:
    """Exact ``Delta_f`` eigenvalues (descending, with multiplicity) on the
    span of ambient polynomials of degree ``<= degree`` for spheres and
    products of spheres; ``-l(l + n - 1)/r^2`` per factor."""
    kind = model.info.get("kind")
    if kind == "sphere":
        n, r = model.info["n"], model.info["radius"]
        vals = []
        for l, d in enumerate(_harmonic_dims(n, degree)):
            vals += [-l * (l + n - 1) / r**2] * d
        return np.sort(np.asarray(vals))[::-1]
    if kind == "product":
        parts = []
        for f in model.factors:
            n, r = f.info["n"], f.info["radius"]
            parts.append([(l, -l * (l + n - 1) / r**2, d) for l, d in enumerate(_harmonic_dims(n, degree))])
        vals = []
        for (l1, e1, d1), (l2, e2, d2) in itertools.product(*parts):
            if l1 + l2 <= degree:
                vals += [e1 + e2] * (d1 * d2)
        return np.sort(np.asarray(vals))[::-1]
    raise ValueError(f"no harmonic oracle for {model.name}")


def spectrum_rows(result: SpectralResult, basis: GalerkinBasis):
    """``(index, eigenvalue, residual, tags)`` per eigenpair."""
    return [
        (i, float(result.eigenvalues[i]), float(result.residuals[i]), basis.dominant_tags(result.vectors[:, i]))
        for i in range(len(result.eigenvalues))
    ]
