"""Second variation of the nu-entropy and linear-stability criteria.

Everything here works on exact shrinkers.  The stability operator is

    N(h) = 1/2 Delta_{f,L} h + h/(2 tau) + div_f^dagger div_f h
           + 1/2 nabla^2 upsilon_h - Ric <Ric, h>_dm / int R dm,

with ``upsilon_h`` the dm-mean-zero solution of
``Delta_f u + u/(2 tau) = div_f div_f h``, solved on a scalar Galerkin space.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Optional

import jax.numpy as jnp
import numpy as np
import scipy.linalg

from .spectral_galerkin import (
    Assembled,
    GalerkinBasis,
    GapCheck,
    JointEigenbasis,
    _clusters,
    _inverse_metric_samples,
    eigensolve,
    galerkin_grid,
    scalar_basis,
    symmetry_defect,
    tensor_basis,
    tensor_candidates,
)
from .geometry_core import (
    ManifoldModel,
    TensorField,
    field_norm,
    hessian,
    linear_combination,
    pointwise_field,
    sample_joint,
)
from .model_manifolds import QuadratureGrid
from .tolerances import TOLERANCES
from .weighted_calculus import (
    joint_residuals,
    IdentityResidualSet,
    _require_exact,
    _sup_and_l2,
    differential,
    div_f,
    div_f_dagger,
    gram_dm,
    inner_dm,
    integrate_dm,
    laplace_f,
    lichnerowicz_f,
    lie_derivative_metric,
    ricci_field,
    scalar_curvature_field,
)

__all__ = [
    "SingularOperatorError",
    "UpsilonSolution",
    "upsilon_grid",
    "upsilon_basis",
    "solve_upsilon",
    "apply_N",
    "second_variation",
    "image_kernel_residuals",
    "image_kernel_fields",
    "IMAGE_KERNEL_IDENTITIES",
    "StabilityProblem",
    "assemble_n",
    "necessary_condition_scan",
    "sufficient_condition_check",
    "n_eigentensor_relation",
    "StabilityReport",
    "stability_report",
]

IMAGE_KERNEL_IDENTITIES = ("T4.1", "C4.2", "L4.3", "L4.4", "T4.5")


class SingularOperatorError(ArithmeticError):
    """``Delta_f + 1/(2 tau)`` is (nearly) singular on the mean-zero space."""


# ---------------------------------------------------------------------------
# upsilon


def upsilon_grid(model: ManifoldModel, degree: int) -> QuadratureGrid:
    """Grid exact for products of degree-``degree`` scalars and their Laplacians."""
    return galerkin_grid(model, max(degree - 2, 0))


def upsilon_basis(model: ManifoldModel, degree: int) -> GalerkinBasis:
    return scalar_basis(model, upsilon_grid(model, degree), degree)


def _shifted_laplacian(model: ManifoldModel, s: TensorField) -> TensorField:
    return linear_combination([(1.0, laplace_f(model, s)), (0.5 / model.tau, s)])


class _ScalarSystem:
    """Mean-zero Galerkin matrix of ``Delta_f + 1/(2 tau)`` on a scalar basis."""

    def __init__(self, model: ManifoldModel, sbasis: GalerkinBasis):
        if sbasis.size < 2:
            raise ValueError("scalar basis has no mean-zero members")
        grid = sbasis.grid
        self.values = sbasis.candidate_samples  # (N, ns)
        self.shifted = _shifted_laplacian(model, sbasis.candidates).sample(grid.nodes)
        self.q = sbasis.coeffs[:, 1:]
        raw = np.einsum("N,Ni,Nj->ij", grid.dm, self.values, self.shifted)
        self.matrix = self.q.T @ raw @ self.q
        sym = 0.5 * (self.matrix + self.matrix.T)
        ev = np.linalg.eigvalsh(sym)
        self.eigenvalues = ev
        scale = float(np.max(np.abs(ev)))
        # the spectral gap makes every eigenvalue strictly negative
        if ev[-1] > -TOLERANCES["eigen_match"] * max(scale, 1.0):
            raise SingularOperatorError(
                f"Delta_f + 1/(2 tau) nearly singular on the mean-zero space: "
                f"largest eigenvalue {ev[-1]:.3e}, condition {scale / max(abs(ev[-1]), 1e-300):.3e}"
            )
        self.condition = scale / abs(ev[-1])
        self.lu = scipy.linalg.lu_factor(self.matrix)

    def solve(self, grid, rhs_samples):
        """Coefficients (mean-zero members) for right-hand sides ``(N, m)``."""
        proj = self.q.T @ np.einsum("N,Ni,Nm->im", grid.dm, self.values, rhs_samples)
        return scipy.linalg.lu_solve(self.lu, proj)


def _system(model, sbasis) -> _ScalarSystem:
    sys_ = getattr(sbasis, "_upsilon_system", None)
    if sys_ is None:
        sys_ = _ScalarSystem(model, sbasis)
        sbasis._upsilon_system = sys_
    return sys_


@dataclass
class UpsilonSolution:
    """``upsilon_h`` per member of ``h``.

    ``coefficients`` are on the mean-zero scalar members; ``residual`` is the
    L2(dm) equation residual relative to ``|div_f div_f h|`` (absolute where
    that vanishes); ``mean`` is ``int upsilon dm``.
    """

    field: TensorField
    coefficients: np.ndarray
    residual: np.ndarray
    mean: np.ndarray
    rhs_norm: np.ndarray
    condition: float


def solve_upsilon(model: ManifoldModel, sbasis: GalerkinBasis, h: TensorField) -> UpsilonSolution:
    _require_exact(model, "solve_upsilon")
    grid = sbasis.grid
    system = _system(model, sbasis)
    rhs = div_f(model, div_f(model, h)).sample(grid.nodes)
    x = system.solve(grid, rhs)
    full = system.q @ x  # candidate coefficients, (ns, m)
    values = system.values @ full
    lhs = system.shifted @ full
    rn = np.sqrt(np.maximum(grid.integrate(rhs**2), 0.0))
    res = np.sqrt(np.maximum(grid.integrate((lhs - rhs) ** 2), 0.0))
    rel = np.where(rn > 0, res / np.where(rn > 0, rn, 1.0), res)
    ups = sbasis.candidates.combine(full.T)
    return UpsilonSolution(ups, x, rel, grid.integrate(values), rn, system.condition)


# ---------------------------------------------------------------------------
# N on fields


def _int_r(grid, r_samples) -> float:
    int_r = float(grid.integrate(r_samples[:, 0]))
    if int_r <= 0:
        raise ValueError(f"int R dm = {int_r:.3e} <= 0; not a shrinker")
    return int_r


def _n_parts(model, h, sbasis):
    """``N(h)`` without its Ric term, plus ``upsilon_h``."""
    sol = solve_upsilon(model, sbasis, h)
    core = linear_combination(
        [
            (0.5, lichnerowicz_f(model, h)),
            (0.5 / model.tau, h),
            (1.0, div_f_dagger(model, div_f(model, h))),
            (0.5, hessian(model, sol.field)),
        ],
        "symmetric-pair",
    )
    return core, sol


def apply_N(
    model: ManifoldModel,
    grid: QuadratureGrid,
    h: TensorField,
    upsilon_degree: int = 4,
    sbasis: Optional[GalerkinBasis] = None,
) -> TensorField:
    """``N(h)`` memberwise; ``grid`` carries the Ric coefficient integrals and
    ``upsilon_h`` is solved on ``sbasis`` (degree ``upsilon_degree`` by default)."""
    _require_exact(model, "apply_N")
    if h.valence != 2:
        raise ValueError("N acts on symmetric 2-tensors")
    sbasis = sbasis or upsilon_basis(model, upsilon_degree)
    core, _ = _n_parts(model, h, sbasis)
    ric = ricci_field(model)
    hs, rs, scal = sample_joint([h, ric, scalar_curvature_field(model)], grid.nodes)
    ginv = _inverse_metric_samples(model, grid)
    coef = jnp.asarray(gram_dm(grid, rs, hs, ginv, 2)[0] / _int_r(grid, scal))
    ric_part = TensorField(lambda ctx, k: coef[:, None, None, None] * ric.jet(ctx, k), 2, "symmetric-pair")
    return linear_combination([(1.0, core), (-1.0, ric_part)], "symmetric-pair")


def second_variation(
    model: ManifoldModel,
    grid: QuadratureGrid,
    h: TensorField,
    upsilon_degree: int = 4,
    sbasis: Optional[GalerkinBasis] = None,
) -> np.ndarray:
    """``nu''(h) = int <N(h), h> dm`` per member."""
    _require_exact(model, "second_variation")
    if h.valence != 2:
        raise ValueError("N acts on symmetric 2-tensors")
    sbasis = sbasis or upsilon_basis(model, upsilon_degree)
    core, _ = _n_parts(model, h, sbasis)
    hs, ns, rs, scal = sample_joint([h, core, ricci_field(model), scalar_curvature_field(model)], grid.nodes)
    ginv = _inverse_metric_samples(model, grid)
    pair = gram_dm(grid, rs, hs, ginv, 2)[0]
    inner = np.einsum("ii->i", gram_dm(grid, ns, hs, ginv, 2))
    return inner - pair**2 / _int_r(grid, scal)


def image_kernel_fields(
    model: ManifoldModel,
    grid: QuadratureGrid,
    omega: TensorField,
    upsilon_degree: int = 4,
    sbasis: Optional[GalerkinBasis] = None,
):
    """Residual fields of the identities describing ``div_f`` and ``N`` on
    ``Im(div_f^dagger)`` for a stack of 1-forms, and the ``upsilon_h`` solve.

    ``upsilon`` compares the Galerkin ``upsilon_h`` of ``h = div_f^dagger omega``
    with ``-div_f omega``.
    """
    _require_exact(model, "image_kernel_residuals")
    if omega.valence != 1:
        raise ValueError("omega must be a stack of 1-forms")
    c = 0.5 / model.tau
    lin = linear_combination
    dag = div_f_dagger(model, omega)
    divw = div_f(model, omega)
    lapw = laplace_f(model, omega)
    ddivw = differential(model, divw)
    sbasis = sbasis or upsilon_basis(model, upsilon_degree)
    core, sol = _n_parts(model, dag, sbasis)
    ric = ricci_field(model)
    hs, rs, scal = sample_joint([dag, ric, scalar_curvature_field(model)], grid.nodes)
    coef = jnp.asarray(gram_dm(grid, rs, hs, _inverse_metric_samples(model, grid), 2)[0] / _int_r(grid, scal))
    ric_part = TensorField(lambda ctx, k: coef[:, None, None, None] * ric.jet(ctx, k), 2, "symmetric-pair")
    fields = {
        "T4.1": lin([(1, div_f(model, lie_derivative_metric(model, omega))), (-1, lapw), (-1, ddivw), (-c, omega)]),
        "C4.2": lin([(1, div_f(model, dag)), (0.5, lapw), (0.5, ddivw), (0.5 * c, omega)]),
        "L4.3": lin(
            [
                (1, div_f_dagger(model, div_f(model, dag))),
                (0.5, lichnerowicz_f(model, dag)),
                (c, dag),
                (-0.5, hessian(model, divw)),
            ]
        ),
        "L4.4": lin([(1, div_f(model, div_f(model, dag))), (1, laplace_f(model, divw)), (c, divw)]),
        "T4.5": lin([(1.0, core), (-1.0, ric_part)]),
        "upsilon": sol.field + divw,
    }
    return fields, sol


def image_kernel_residuals(
    model: ManifoldModel,
    grid: QuadratureGrid,
    omega: TensorField,
    upsilon_degree: int = 4,
    sbasis: Optional[GalerkinBasis] = None,
) -> IdentityResidualSet:
    """Sup/L2 residuals of :func:`image_kernel_fields` on ``grid``."""
    fields, sol = image_kernel_fields(model, grid, omega, upsilon_degree, sbasis)
    out = joint_residuals(model, grid, fields)
    out.info["upsilon_equation_residual"] = float(np.max(sol.residual))
    out.info["upsilon_mean"] = float(np.max(np.abs(sol.mean)))
    return out


# ---------------------------------------------------------------------------
# Galerkin-level problem


def _unit_sign(c, tol=1e-8):
    """Sign making the first non-negligible entry of ``c`` positive."""
    big = np.flatnonzero(np.abs(c) > tol * np.max(np.abs(c))) if np.any(c) else []
    return -1.0 if len(big) and c[big[0]] < 0 else 1.0


class StabilityProblem:
    """Sampled data for the stability analysis at truncation degree ``L``.

    Operators are sampled once on the tensor candidates and the scalar
    candidates (degree ``L + 2``) and reduced to dm-Gram matrices; every
    quadratic quantity of a combination ``h = sum v_i b_i`` is then a quadratic
    form in ``v``.
    """

    def __init__(self, model: ManifoldModel, degree: int, grid: Optional[QuadratureGrid] = None, scalar_degree: Optional[int] = None):
        _require_exact(model, "stability analysis")
        self.model = model
        self.degree = degree
        self.grid = grid or galerkin_grid(model, degree)
        self.basis = tensor_basis(model, self.grid, degree)
        self.sbasis = scalar_basis(model, self.grid, degree + 2 if scalar_degree is None else scalar_degree)
        self._sample()

    def _sample(self):
        model, grid, basis, sb = self.model, self.grid, self.basis, self.sbasis
        tau = model.tau
        c = basis.candidates
        divc = div_f(model, c)
        s = sb.candidates
        fields = [
            lichnerowicz_f(model, c),
            div_f_dagger(model, divc),
            divc,
            div_f(model, divc),
            hessian(model, s),
            _shifted_laplacian(model, s),
            ricci_field(model),
            scalar_curvature_field(model),
        ]
        lich, dd, dv, ddiv, hs, ts, ric, scal = sample_joint(fields, grid.nodes)
        cs = basis.candidate_samples
        ss = sb.candidate_samples
        ginv = _inverse_metric_samples(model, grid)
        self.ginv = ginv
        gram2 = lambda a, b: gram_dm(grid, a, b, ginv, 2)  # noqa: E731

        # upsilon for every tensor candidate
        q = sb.coeffs[:, 1:]
        smat = q.T @ np.einsum("N,Ni,Nj->ij", grid.dm, ss, ts) @ q
        self.scalar_matrix = smat
        ev = np.linalg.eigvalsh(0.5 * (smat + smat.T))
        self.scalar_eigenvalues = ev
        if ev[-1] > -TOLERANCES["eigen_match"] * max(float(np.max(np.abs(ev))), 1.0):
            raise SingularOperatorError(f"Delta_f + 1/(2 tau) nearly singular: largest eigenvalue {ev[-1]:.3e}")
        rhs = q.T @ np.einsum("N,Ni,Nj->ij", grid.dm, ss, ddiv)
        x = q @ np.linalg.solve(smat, rhs)  # scalar-candidate coefficients, (ns, nc)
        ups = ss @ x
        self.upsilon_coeffs = x
        hu = np.einsum("Nsij,sc->Ncij", hs, x)

        int_r = float(grid.integrate(scal[:, 0]))
        if int_r <= 0:
            raise ValueError(f"int R dm = {int_r:.3e} <= 0; not a shrinker")
        self.int_r = int_r
        ric_pair = gram2(ric, cs)[0]  # <Ric, c_j>
        self._ric = ric[:, 0]
        ncs = 0.5 * lich + cs * (0.5 / tau) + dd + 0.5 * hu - np.einsum("Nij,c->Ncij", ric[:, 0], ric_pair / int_r)
        self._n_samples = ncs

        C = basis.coeffs
        red = lambda m: C.T @ m @ C  # noqa: E731
        self.G = basis.gram
        self.A = red(gram2(cs, lich))
        self.D = red(gram2(cs, dd))
        self.N = red(gram2(cs, ncs))
        self.ric = C.T @ ric_pair
        self.div2 = red(gram_dm(grid, dv, dv, ginv, 1))
        self.ups_dd = red(np.einsum("N,Ni,Nj->ij", grid.dm, ups, ddiv))
        self.ups_mean = C.T @ grid.integrate(ups)
        # candidate-level samples for norms of combinations
        self._s = {"h": cs, "lich": lich, "N": ncs, "div": dv, "divdiv": ddiv, "upsilon": ups, "upsilon_residual": ts @ x - ddiv}
        self.candidate_n_sup = self._sup_norm(ncs)

    def _sup_norm(self, samples):
        """Pointwise sup of ``|T|_g`` per member over the grid."""
        up = np.einsum("Nap,Nbq,Nmpq->Nmab", self.ginv, self.ginv, samples)
        return np.sqrt(np.maximum(np.max(np.einsum("Nmab,Nmab->Nm", up, samples), axis=0), 0.0))

    def samples(self, key: str, v) -> np.ndarray:
        """Samples of quantity ``key`` for ``h = sum v_i b_i``."""
        return np.tensordot(self._s[key], self.basis.coeffs @ v, axes=([1], [0]))

    def _l2(self, t) -> float:
        valence = t.ndim - 1
        return float(np.sqrt(max(gram_dm(self.grid, t[:, None], t[:, None], self.ginv, valence)[0, 0], 0.0)))

    def norm(self, v) -> float:
        return self._l2(self.samples("h", v))

    def lich_residual(self, v, lam) -> float:
        """``|Delta_{f,L} h - lam h|_dm / |h|_dm``."""
        return self._l2(self.samples("lich", v) - lam * self.samples("h", v)) / self.norm(v)

    def n_norm(self, v) -> float:
        return self._l2(self.samples("N", v))

    def div_norm(self, v) -> float:
        return self._l2(self.samples("div", v))

    def divdiv_norm(self, v) -> float:
        return self._l2(self.samples("divdiv", v))

    def upsilon_norm(self, v) -> float:
        return self._l2(self.samples("upsilon", v))

    @staticmethod
    def _qf(m, v):
        return float(v @ m @ v)

    def ric_pairing(self, v) -> float:
        return float(self.ric @ v)

    @property
    def n_asymmetry(self) -> float:
        """``max |<N b_i, b_j> - <b_i, N b_j>|`` on the orthonormal basis."""
        return float(np.max(np.abs(self.N - self.N.T))) if self.N.size else 0.0

    @cached_property
    def ric_vector(self) -> np.ndarray:
        """Coordinates of the dm-projection of ``Ric`` onto the basis span."""
        return np.linalg.solve(self.G, self.ric)

    @property
    def ric_in_span(self) -> float:
        """Relative L2 distance of ``Ric`` from the basis span."""
        return self._l2(self._ric - self.samples("h", self.ric_vector)) / self._l2(self._ric)

    def nu2_closed(self, v, lam) -> dict:
        """Second variation of a ``Delta_{f,L}``-eigentensor from its eigenvalue:
        ``(lam/2 + 1/(2 tau))|h|^2 + |div_f h|^2 + 1/2 int upsilon div_f div_f h
        - <Ric, h>^2 / int R``; the last two terms vanish in the proof's setting."""
        h2 = self._qf(self.G, v)
        parts = {
            "eigen": (0.5 * lam + 0.5 / self.model.tau) * h2,
            "divergence": self._qf(self.div2, v),
            "upsilon": 0.5 * self._qf(self.ups_dd, v),
            "ricci": -self.ric_pairing(v) ** 2 / self.int_r,
        }
        parts["total"] = sum(parts.values())
        return parts

    def nu2_direct(self, v) -> float:
        return self._qf(self.N, v)

    @cached_property
    def div_n_samples(self) -> np.ndarray:
        """``div_f N(c)`` for every tensor candidate (sampled on demand)."""
        model, grid, sb = self.model, self.grid, self.sbasis
        c = self.basis.candidates
        fields = [
            div_f(model, lichnerowicz_f(model, c)),
            div_f(model, c),
            div_f(model, div_f_dagger(model, div_f(model, c))),
            div_f(model, hessian(model, sb.candidates)),
            div_f(model, ricci_field(model)),
        ]
        dl, dc, ddd, dh, dr = sample_joint(fields, grid.nodes)
        pair = gram_dm(grid, ricci_field(model).sample(grid.nodes), self.basis.candidate_samples, self.ginv, 2)[0]
        dn = 0.5 * dl + dc * (0.5 / model.tau) + ddd + 0.5 * np.einsum("Nsi,sc->Nci", dh, self.upsilon_coeffs)
        return dn - np.einsum("Ni,c->Nci", dr[:, 0], pair / self.int_r)

    def div_n_norm(self, v) -> float:
        return self._l2(np.tensordot(self.div_n_samples, self.basis.coeffs @ v, axes=([1], [0])))

    # spectral pieces -------------------------------------------------------

    def gap_check(self, tol: Optional[float] = None) -> GapCheck:
        """Spectral gap of ``Delta_f`` read off the scalar matrix already assembled."""
        tol = TOLERANCES["eigen_match"] if tol is None else tol
        c = 0.5 / self.model.tau
        res = eigensolve(self.scalar_matrix - c * self.sbasis.gram[1:, 1:], self.sbasis.gram[1:, 1:])
        lam1 = float(res.eigenvalues[0])
        return GapCheck(lam1, -c, lam1 < -c - tol, res.eigenvalues, tol, True, symmetry_defect(self.scalar_matrix))

    @cached_property
    def lich_spectrum(self):
        return eigensolve(self.A, self.G)

    def assembled(self, name: str) -> Assembled:
        mats = {"lichnerowicz_f": self.A, "lichnerowicz_f+div_dagger_div": self.A + self.D, "N": self.N}
        return Assembled(name, mats[name], symmetry_defect(mats[name]))

    @cached_property
    def deflated(self) -> "DeflatedEigenbasis":
        return deflated_joint_eigenbasis(self.A, self.A + self.D, self.G, self.ric_vector)


@dataclass
class DeflatedEigenbasis(JointEigenbasis):
    """Joint eigenbasis after removing the ``Ric`` direction from each
    ``A``-cluster.  ``removed[k]`` is the overlap of unit ``Ric`` with cluster
    ``k`` (``0`` where nothing was removed)."""

    removed: list = field(default_factory=list)
    ric_cluster_values: list = field(default_factory=list)


def deflated_joint_eigenbasis(a, b, g, ric_vector, rel_tol: Optional[float] = None) -> DeflatedEigenbasis:
    """Clusters of ``A v = lam G v``; inside each cluster the G-unit ``Ric``
    coefficient vector is projected out before ``B`` is diagonalised."""
    from .spectral_galerkin import commutation_residual

    rel_tol = TOLERANCES["cluster"] if rel_tol is None else rel_tol
    res = eigensolve(a, g)
    lam = res.eigenvalues
    radius = float(np.max(np.abs(lam))) if len(lam) else 0.0
    groups = _clusters(lam, rel_tol * max(radius, 1.0))
    gs = 0.5 * (np.asarray(g) + np.asarray(g).T)
    bs = 0.5 * (np.asarray(b) + np.asarray(b).T)
    rnorm = np.sqrt(max(float(ric_vector @ gs @ ric_vector), 0.0))
    rhat = ric_vector / rnorm if rnorm > 0 else np.zeros_like(ric_vector)
    out_vecs, out_lam, out_mu, clusters, removed, ric_vals = [], [], [], [], [], []
    leak_num = 0.0
    full = res.vectors.T @ bs @ res.vectors
    for grp in groups:
        idx = np.asarray(grp)
        v = res.vectors[:, idx]
        p = v.T @ gs @ rhat
        overlap = float(np.linalg.norm(p))
        if overlap > TOLERANCES["spectral_zero"]:
            v = v @ scipy.linalg.null_space(p[None, :])
            removed.append(overlap)
            ric_vals.append(float(np.mean(lam[idx])))
        else:
            removed.append(0.0)
        mask = np.ones(len(lam), bool)
        mask[idx] = False
        leak_num += float(np.linalg.norm(full[np.ix_(idx, mask)]) ** 2)
        if v.shape[1] == 0:
            clusters.append([])
            continue
        w, u = np.linalg.eigh(v.T @ bs @ v)
        w, u = w[::-1], u[:, ::-1]
        start = len(out_lam)
        out_vecs.append(v @ u)
        out_lam += [float(np.mean(lam[idx]))] * v.shape[1]
        out_mu += list(w)
        clusters.append(list(range(start, start + v.shape[1])))
    vecs = np.hstack(out_vecs) if out_vecs else np.zeros((len(lam), 0))
    bn = np.linalg.norm(full)
    leak = float(np.sqrt(leak_num) / bn) if bn > 0 else 0.0
    return DeflatedEigenbasis(
        np.asarray(out_lam), np.asarray(out_mu), vecs, clusters, leak, commutation_residual(a, b, g), removed, ric_vals
    )


def assemble_n(model: ManifoldModel, grid: QuadratureGrid, basis: GalerkinBasis, scalar_degree: Optional[int] = None, problem: Optional[StabilityProblem] = None) -> Assembled:
    """Galerkin matrix of ``N`` on ``basis`` (which must be the tensor basis of
    degree ``basis.degree`` on ``grid``)."""
    prob = problem or StabilityProblem(model, basis.degree, grid, scalar_degree)
    if prob.basis.size != basis.size or not np.allclose(prob.basis.coeffs, basis.coeffs):
        raise ValueError("basis does not match the standard tensor basis on this grid")
    return prob.assembled("N")


# ---------------------------------------------------------------------------
# criteria


def _witness_scale(prob: StabilityProblem, v):
    """Rescale to ``|h|_dm^2 = n`` (the norm of ``g``) with a fixed sign."""
    v = v * np.sqrt(prob.model.dim) / prob.norm(v)
    return v * _unit_sign(prob.basis.coeffs @ v)


@dataclass
class ScanEntry:
    eigenvalue: float
    coefficients: np.ndarray
    candidate_coefficients: np.ndarray
    tags: str
    norm2: float
    nu2_direct: float
    nu2_closed: dict
    agreement: float
    eigen_residual: float
    ric_pairing: float
    divdiv_norm: float
    upsilon_norm: float
    above_threshold: bool
    verdict: str


def _scan_entry(prob: StabilityProblem, lam, v, threshold) -> ScanEntry:
    v = _witness_scale(prob, v)
    direct = prob.nu2_direct(v)
    closed = prob.nu2_closed(v, lam)
    h2 = prob._qf(prob.G, v)
    agreement = abs(direct - closed["total"]) / max(abs(direct), abs(closed["total"]), h2)
    above = lam > threshold
    tol = TOLERANCES["nu2"]
    verdict = ("unstable" if direct > tol else "no instability") if above else "below threshold"
    return ScanEntry(
        float(lam),
        v,
        prob.basis.coeffs @ v,
        prob.basis.dominant_tags(v),
        h2,
        direct,
        closed,
        float(agreement),
        prob.lich_residual(v, lam),
        prob.ric_pairing(v),
        prob.divdiv_norm(v),
        prob.upsilon_norm(v),
        bool(above),
        verdict,
    )


@dataclass
class NecessaryScan:
    """Deflated ``Delta_{f,L}`` eigentensors with ``lam > -1/(2 tau) + tol``
    (``entries``) plus the same two-path audit on every deflated eigentensor
    (``audit``)."""

    degree: int
    threshold: float
    tolerance: float
    entries: list
    audit: list
    max_ric_pairing_nonzero: float

    @property
    def unstable(self) -> list:
        return [e for e in self.entries if e.verdict == "unstable"]


def necessary_condition_scan(prob: StabilityProblem, tol: Optional[float] = None) -> NecessaryScan:
    tol = TOLERANCES["eigen_match"] if tol is None else tol
    threshold = -0.5 / prob.model.tau + tol
    joint = prob.deflated
    audit = [_scan_entry(prob, joint.lam[i], joint.vectors[:, i], threshold) for i in range(len(joint.lam))]
    # orthogonality of Ric to every eigentensor with nonzero eigenvalue (before deflation)
    spec = prob.lich_spectrum
    zero = TOLERANCES["spectral_zero"]
    pairs = [abs(prob.ric_pairing(spec.vectors[:, i])) for i in range(len(spec.eigenvalues)) if abs(spec.eigenvalues[i]) > zero]
    return NecessaryScan(prob.degree, threshold, tol, [e for e in audit if e.above_threshold], audit, max(pairs, default=0.0))


@dataclass
class SufficientCheck:
    degree: int
    bound: float
    tolerance: float
    verdict: str
    category: str
    lam: np.ndarray
    mu: np.ndarray
    kernel: np.ndarray
    kernel_div_norms: np.ndarray
    image_n_norms: np.ndarray
    offending: list
    leakage: float
    commutation: float
    classification_ok: bool


def sufficient_condition_check(prob: StabilityProblem, tol: Optional[float] = None) -> SufficientCheck:
    tol = TOLERANCES["eigen_match"] if tol is None else tol
    tau = prob.model.tau
    joint = prob.deflated
    bound = -1.0 / tau
    lam, mu = joint.lam, joint.mu
    kernel = np.abs(lam - mu) <= tol * np.maximum(1.0, np.abs(lam))
    vecs = [joint.vectors[:, i] / prob.norm(joint.vectors[:, i]) for i in range(len(lam))]
    div_norms = np.array([prob.div_norm(v) for v, k in zip(vecs, kernel) if k])
    n_norms = np.array([prob.n_norm(v) for v, k in zip(vecs, kernel) if not k])
    zero = TOLERANCES["spectral_zero"]
    classification_ok = bool(np.all(div_norms < zero) and np.all(n_norms < TOLERANCES["kernel_N"]))
    offending = sorted({round(float(x), 12) for x, k in zip(lam, kernel) if k and x > bound + tol}, reverse=True)
    L = prob.degree
    if not joint.ok:
        verdict, category = "inconclusive (joint basis)", "joint-basis"
    elif len(lam) == 0:
        verdict, category = "inconclusive (truncation)", "truncation"
    elif not offending:
        verdict, category = f"stable (sufficient, L={L})", "stable"
    elif all(x <= -0.5 / tau + tol for x in offending):
        verdict, category = "inconclusive (gap)", "gap"
    else:
        verdict, category = "inconclusive (necessary range)", "necessary-range"
    return SufficientCheck(
        L, bound, tol, verdict, category, lam, mu, kernel, div_norms, n_norms, offending, joint.leakage, joint.commutation, classification_ok
    )


@dataclass
class NRelation:
    eigenvalues: np.ndarray
    relation_residuals: np.ndarray
    div_n_norms: np.ndarray
    excluded: int
    tags: list


def n_eigentensor_relation(prob: StabilityProblem, tol: Optional[float] = None) -> NRelation:
    """For ``N``-eigenpairs with ``|lam| > tol``:
    ``|Delta_{f,L} h - 2(lam - 1/(2 tau)) h| / |h|`` and ``|div_f N(h)| / |h|``."""
    tol = TOLERANCES["kernel_N"] if tol is None else tol
    spec = eigensolve(prob.N, prob.G)
    sel = [i for i, x in enumerate(spec.eigenvalues) if abs(x) > tol]
    c = 0.5 / prob.model.tau
    lams, rel, dn, tags = [], [], [], []
    for i in sel:
        v = spec.vectors[:, i]
        lam = float(spec.eigenvalues[i])
        lams.append(lam)
        rel.append(prob.lich_residual(v, 2 * (lam - c)))
        dn.append(prob.div_n_norm(v) / prob.norm(v))
        tags.append(prob.basis.dominant_tags(v))
    return NRelation(np.asarray(lams), np.asarray(rel), np.asarray(dn), len(spec.eigenvalues) - len(sel), tags)


# ---------------------------------------------------------------------------
# report


@dataclass
class StabilityReport:
    """Verdict with its supporting numbers at truncation degree ``degree``."""

    model: str
    degree: int
    tau: float
    gap_lambda1: float
    gap_bound: float
    gap_passed: bool
    lich_spectrum: np.ndarray
    ric_cluster_values: list
    ric_in_span: float
    necessary: NecessaryScan
    sufficient: SufficientCheck
    n_asymmetry: float
    image_n_sup: float
    ric_n_sup: float
    witness: Optional[ScanEntry]
    witness_recheck: Optional[float]
    verdict: str
    tolerances: dict


def stability_report(model: ManifoldModel, degree: int, recheck: bool = True, problem: Optional[StabilityProblem] = None) -> StabilityReport:
    """Run both criteria; an ``unstable`` verdict stores its witness and (with
    ``recheck``) re-evaluates ``nu''`` on the witness field from scratch."""
    prob = problem or StabilityProblem(model, degree)
    gap = prob.gap_check()
    nec = necessary_condition_scan(prob)
    suf = sufficient_condition_check(prob)
    kinds = np.array([k in ("hess", "lie") for k in prob.basis.candidate_kinds])
    image_sup = float(np.max(prob.candidate_n_sup[kinds])) if np.any(kinds) else 0.0
    ric_sup = _ric_n_sup(prob)
    witness, recheck_val = None, None
    if nec.unstable:
        witness = max(nec.unstable, key=lambda e: (e.nu2_direct, -e.eigenvalue))
        verdict = "unstable (witness)"
        if recheck:
            h = prob.basis.combine(witness.coefficients[:, None])
            recheck_val = float(second_variation(model, prob.grid, h, upsilon_degree=degree + 2)[0])
            if not recheck_val > TOLERANCES["nu2"]:
                verdict = "inconclusive (witness not reproduced)"
    else:
        verdict = suf.verdict
    return StabilityReport(
        model.name,
        degree,
        model.tau,
        gap.lambda1,
        gap.bound,
        gap.passed,
        prob.lich_spectrum.eigenvalues,
        prob.deflated.ric_cluster_values,
        prob.ric_in_span,
        nec,
        suf,
        prob.n_asymmetry,
        image_sup,
        ric_sup,
        witness,
        recheck_val,
        verdict,
        {k: TOLERANCES[k] for k in ("eigen_match", "nu2", "kernel_N", "cluster", "spectral_zero")},
    )


def _ric_n_sup(prob: StabilityProblem) -> float:
    """Sup norm of ``N(Ric)`` from the sampled candidate images."""
    v = prob.ric_vector
    if prob.ric_in_span > TOLERANCES["spectral_zero"]:
        return float("nan")
    samples = np.einsum("Ncij,c->Nij", prob._n_samples, prob.basis.coeffs @ v)[:, None]
    return float(prob._sup_norm(samples)[0])
