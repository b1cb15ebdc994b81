"""Weighted (drift) operators on a shrinker and residuals of their identities.

All operators act on :class:`~grslab.geometry_core.TensorField` stacks and return
new stacks; nothing is sampled until a residual is measured on a grid.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import jax.numpy as jnp
import numpy as np

from . import jets
from .geometry_core import (
    ManifoldModel,
    TensorField,
    covariant_derivative,
    field_norm,
    grad_potential_jet,
    hessian,
    inverse_metric_jet,
    lie_derivative_metric,
    traced_covariant_jet,
    linear_combination,
    metric_jet,
    pointwise_field,
    pointwise_inner,
    potential_jet,
    product_field,
    ricci_jet,
    riemann_jet,
    scalar_curvature_jet,
)
from .model_manifolds import QuadratureGrid
from .tolerances import TOLERANCES

__all__ = [
    "IdentityResidualSet",
    "ApproximateSolitonError",
    "integrate_dm",
    "inner_dm",
    "differential",
    "div_f",
    "div_f_dagger",
    "laplace_f",
    "rm_action",
    "lichnerowicz_f",
    "soliton_residual",
    "soliton_residual_norm",
    "entropy_report",
    "first_variation",
    "useful_identity_residuals",
    "commutator_residuals",
    "GENERAL_IDENTITIES",
    "SOLITON_IDENTITIES",
]


class ApproximateSolitonError(ValueError):
    """A soliton-only computation was requested on a non-soliton model."""


@dataclass
class IdentityResidualSet:
    """Identity name -> (sup-norm over interior nodes, L2(dm) norm).

    ``skipped`` maps omitted identity names to the reason they were omitted.
    """

    residuals: dict = field(default_factory=dict)
    skipped: dict = field(default_factory=dict)
    info: dict = field(default_factory=dict)

    def add(self, name, sup, l2):
        if sup < 0 or l2 < 0:
            raise ValueError("residuals are non-negative")
        self.residuals[name] = (float(sup), float(l2))

    def sup(self, name) -> float:
        return self.residuals[name][0]

    def max_sup(self) -> float:
        return max((v[0] for v in self.residuals.values()), default=0.0)

    def merge(self, other: "IdentityResidualSet") -> "IdentityResidualSet":
        out = IdentityResidualSet(dict(self.residuals), dict(self.skipped), dict(self.info))
        out.residuals.update(other.residuals)
        out.skipped.update(other.skipped)
        out.info.update(other.info)
        return out

    def __contains__(self, name):
        return name in self.residuals

    def __getitem__(self, name):
        return self.residuals[name]


# ---------------------------------------------------------------------------
# integration


def integrate_dm(model: ManifoldModel, grid: QuadratureGrid, s) -> np.ndarray:
    """``int s dm`` for a scalar stack (one value per member) or sampled values."""
    if grid.model is not model:
        raise ValueError("grid was built for a different model")
    if isinstance(s, TensorField):
        if s.valence != 0:
            raise ValueError("integrate_dm expects a scalar field")
        s = s.sample(grid.nodes)
    return grid.integrate(s)


def pointwise_inner_field(model: ManifoldModel, s: TensorField, t: TensorField) -> TensorField:
    if s.valence != t.valence:
        raise ValueError("valence mismatch")

    def fun(ctx):
        return pointwise_inner(inverse_metric_jet(model, ctx, 0)[..., 0], s.value(ctx), t.value(ctx), s.valence)

    return pointwise_field(fun, 0, max(s.depth, t.depth))


def inner_dm(model: ManifoldModel, grid: QuadratureGrid, s: TensorField, t: TensorField) -> np.ndarray:
    """Memberwise ``<S, T>_dm`` (stacks of equal size)."""
    return integrate_dm(model, grid, pointwise_inner_field(model, s, t))


def gram_dm(grid: QuadratureGrid, sa: np.ndarray, sb: np.ndarray, ginv: np.ndarray, valence: int) -> np.ndarray:
    """``G_ij = <a_i, b_j>_dm`` from sampled stacks ``(N, m) + (n,)*p``."""
    up = sa
    for slot in range(valence):
        up = _raise_slot(up, ginv, slot)
    n_nodes = sa.shape[0]
    a = up.reshape(n_nodes, sa.shape[1], -1)
    b = sb.reshape(n_nodes, sb.shape[1], -1)
    return np.einsum("N,Nik,Njk->ij", grid.dm, a, b)


def _raise_slot(t, ginv, s):
    moved = np.moveaxis(t, 2 + s, -1)
    raised = np.einsum("N...q,Nqp->N...p", moved, ginv)
    return np.moveaxis(raised, -1, 2 + s)


# ---------------------------------------------------------------------------
# operators


def potential_field(model: ManifoldModel) -> TensorField:
    return TensorField(lambda ctx, k: potential_jet(model, ctx, k)[None], 0)


def inverse_metric_field(model: ManifoldModel) -> TensorField:
    """``g^ij`` as a one-member stack (contravariant; used only in contractions)."""
    return TensorField(lambda ctx, k: inverse_metric_jet(model, ctx, k)[None], 2, "symmetric-pair")


def differential(model: ManifoldModel, a: TensorField) -> TensorField:
    """``da`` of a scalar stack."""
    if a.valence != 0:
        raise ValueError("differential expects scalars")
    return covariant_derivative(model, a)


def _drift(model, ctx, k, t):
    """``T(grad f, ...)`` contracted on the first tensor slot, or ``None``."""
    gf = grad_potential_jet(model, ctx, k)
    return None if gf is None else jets.mul("q,mq...->m...", gf, t, ctx.n, k)


def divergence(model: ManifoldModel, t: TensorField) -> TensorField:
    """``g^pq nabla_p T_q...`` (contraction on the first slot)."""
    if t.valence not in (1, 2):
        raise ValueError("divergence defined for 1-forms and symmetric 2-tensors")
    return TensorField(lambda ctx, k: traced_covariant_jet(model, ctx, t, k), t.valence - 1, depth=t.depth + 1)


def _div_f_any(model: ManifoldModel, t: TensorField) -> TensorField:
    def jet(ctx, k):
        out = traced_covariant_jet(model, ctx, t, k)
        drift = _drift(model, ctx, k, t.jet(ctx, k))
        return out if drift is None else out - drift

    return TensorField(jet, t.valence - 1, depth=t.depth + 1)


def div_f(model: ManifoldModel, t: TensorField) -> TensorField:
    """``div_f T = div T - T(grad f, -)`` for 1-forms and symmetric 2-tensors."""
    if t.valence not in (1, 2):
        raise ValueError("div_f defined for 1-forms and symmetric 2-tensors")
    return _div_f_any(model, t)


def div_f_dagger(model: ManifoldModel, omega: TensorField) -> TensorField:
    """Formal dm-adjoint of ``div_f`` on 1-forms, ``-1/2 L_{#w} g``."""
    return lie_derivative_metric(model, omega).scale(-0.5)


def laplace_f(model: ManifoldModel, t: TensorField) -> TensorField:
    """Drift Laplacian ``Delta T - nabla_{grad f} T`` on ranks 0, 1, 2."""
    if t.valence > 2:
        raise ValueError("laplace_f supports ranks 0, 1, 2")
    d = covariant_derivative(model, t)

    def jet(ctx, k):
        out = traced_covariant_jet(model, ctx, d, k)
        drift = _drift(model, ctx, k, d.jet(ctx, k))
        return out if drift is None else out - drift

    return TensorField(jet, t.valence, t.symmetry, depth=d.depth + 1)


def _raised_riemann(model, ctx, k):
    """``R^a_i^b_j`` (first and third slots raised)."""

    def build(kb):
        ginv = inverse_metric_jet(model, ctx, kb)
        half = jets.mul("ap,piqj->aiqj", ginv, riemann_jet(model, ctx, kb), ctx.n, kb)
        return jets.mul("bq,aiqj->aibj", ginv, half, ctx.n, kb)

    return ctx.memo(("rm_up", id(model)), k, build)


def _rm_jet(model, ctx, k, h):
    return jets.mul("aibj,mab->mij", _raised_riemann(model, ctx, k), h, ctx.n, k)


def rm_action(model: ManifoldModel, h: TensorField) -> TensorField:
    """``Rm(h, -)_ij = R_piqj h^pq``."""
    if h.valence != 2:
        raise ValueError("rm_action expects a 2-tensor")
    return TensorField(lambda ctx, k: _rm_jet(model, ctx, k, h.jet(ctx, k)), 2, "symmetric-pair", depth=h.depth)


def ricci_field(model: ManifoldModel) -> TensorField:
    return TensorField(lambda ctx, k: ricci_jet(model, ctx, k)[None], 2, "symmetric-pair")


def scalar_curvature_field(model: ManifoldModel) -> TensorField:
    return TensorField(lambda ctx, k: scalar_curvature_jet(model, ctx, k)[None], 0)


def riemann_field(model: ManifoldModel) -> TensorField:
    return TensorField(lambda ctx, k: riemann_jet(model, ctx, k)[None], 4, "riemann-type")


def metric_field(model: ManifoldModel) -> TensorField:
    return TensorField(lambda ctx, k: metric_jet(model, ctx, k)[None], 2, "symmetric-pair")


def bakry_emery(model: ManifoldModel) -> TensorField:
    """``Ric + nabla^2 f``."""
    ric = ricci_field(model)
    if model.constant_potential:
        return ric
    return ric + hessian(model, potential_field(model))


def lichnerowicz_f(model: ManifoldModel, h: TensorField, form: str = "soliton") -> TensorField:
    """Weighted Lichnerowicz Laplacian.

    ``form="general"`` is ``Delta_f h + 2Rm(h,-) - S.h - h.S`` with
    ``S = Ric + nabla^2 f``; ``form="soliton"`` replaces ``S`` by ``g/(2 tau)``.
    """
    if h.valence != 2:
        raise ValueError("lichnerowicz_f expects a 2-tensor")
    lap = laplace_f(model, h)
    if form == "soliton":
        c = 1.0 / model.tau

        def sol(ctx, k):
            lk = lap.jet(ctx, k)
            hk = h.jet(ctx, k)
            return lk + 2.0 * _rm_jet(model, ctx, k, hk) - c * hk

        return TensorField(sol, 2, "symmetric-pair", depth=lap.depth)
    if form != "general":
        raise ValueError("form must be 'soliton' or 'general'")
    s = bakry_emery(model)

    def gen(ctx, k):
        n = ctx.n
        lk = lap.jet(ctx, k)
        hk = h.jet(ctx, k)
        ginv = inverse_metric_jet(model, ctx, k)
        mixed = jets.mul("ip,pq->iq", s.jet(ctx, k)[0], ginv, n, k)  # S_i^q
        left = jets.mul("iq,mqj->mij", mixed, hk, n, k)
        right = jnp.swapaxes(left, 1, 2)  # h.S = (S.h)^T for symmetric h
        return lk + 2.0 * _rm_jet(model, ctx, k, hk) - left - right

    return TensorField(gen, 2, "symmetric-pair", depth=max(lap.depth, s.depth))


def contract_first(model: ManifoldModel, h: TensorField, omega: TensorField) -> TensorField:
    """``h(#w, -)`` memberwise for stacks of equal size."""

    def jet(ctx, k):
        up = jets.mul("pq,mq->mp", inverse_metric_jet(model, ctx, k), omega.jet(ctx, k), ctx.n, k)
        return jets.mul("mp,mpj->mj", up, h.jet(ctx, k), ctx.n, k)

    return TensorField(jet, 1, depth=max(h.depth, omega.depth))


def multiply(a: TensorField, t: TensorField) -> TensorField:
    """Memberwise product of a scalar stack with a tensor stack."""
    if a.valence != 0:
        raise ValueError("first factor must be scalar")
    return product_field("m,m...->m...", a, t, t.valence, t.symmetry)


# ---------------------------------------------------------------------------
# soliton quantities


def soliton_residual(model: ManifoldModel) -> TensorField:
    """``Ric + nabla^2 f - g/(2 tau)``."""
    return linear_combination([(1.0, bakry_emery(model)), (-0.5 / model.tau, metric_field(model))], "symmetric-pair")


def _sup_and_l2(grid: QuadratureGrid, norms: np.ndarray):
    """Norm samples ``(N, m)`` -> (sup over interior nodes, max over members of L2(dm))."""
    norms = np.asarray(norms).reshape(len(grid.nodes), -1)
    sup = float(np.max(norms[grid.interior])) if np.any(grid.interior) else 0.0
    l2 = float(np.max(np.sqrt(np.maximum(grid.integrate(norms**2), 0.0))))
    return sup, l2


def residual_norms(model: ManifoldModel, grid: QuadratureGrid, t: TensorField):
    return _sup_and_l2(grid, field_norm(model, t).sample(grid.nodes))


def soliton_residual_norm(model: ManifoldModel, grid: QuadratureGrid) -> float:
    """Sup-norm of the soliton residual over interior nodes; validates the flag."""
    sup, _ = residual_norms(model, grid, soliton_residual(model))
    model.soliton_residual = sup
    if model.is_exact and sup > TOLERANCES["soliton_exact"]:
        warnings.warn(f"{model.name}: flagged exact but soliton residual is {sup:.3e}")
        model.soliton = "approximate"
    return sup


@dataclass
class EntropyReport:
    W: float
    nu: float
    residual_pointwise: float
    residual_integral: float
    is_nu: bool


def _ginv0(model, ctx):
    return inverse_metric_jet(model, ctx, 0)[..., 0]


def _scal0(model, ctx):
    return scalar_curvature_jet(model, ctx, 0)[..., 0]


def entropy_report(model: ManifoldModel, grid: QuadratureGrid) -> EntropyReport:
    """Perelman's ``W`` at the stored ``(f, tau)`` and the minimiser conditions

    ``tau(-2 Delta f + |grad f|^2 - R) - f + n + nu = 0`` and
    ``int f dm = n/2 + nu`` with ``nu := W``.
    """
    n, tau = model.dim, model.tau
    f = potential_field(model)
    df = differential(model, f)
    lap = laplace_f(model, f)  # Delta f - |grad f|^2

    def grad2(ctx):
        v = df.value(ctx)
        return pointwise_inner(_ginv0(model, ctx), v, v, 1)

    def integrand(ctx):
        return tau * (_scal0(model, ctx) + grad2(ctx)) + f.value(ctx) - n

    def minimiser(ctx):
        g2 = grad2(ctx)
        plain_lap = lap.value(ctx) + g2
        return tau * (-2.0 * plain_lap + g2 - _scal0(model, ctx)) - f.value(ctx) + n

    w = float(grid.integrate(pointwise_field(integrand, 0, 1).sample(grid.nodes))[0])
    pts = pointwise_field(minimiser, 0, 2).sample(grid.nodes)[:, 0] + w
    r1 = float(np.max(np.abs(pts[grid.interior])))
    fint = float(grid.integrate(f.sample(grid.nodes))[0])
    r2 = abs(fint - 0.5 * n - w)
    if not model.is_exact:
        warnings.warn(f"{model.name}: approximate soliton, W is reported but is not nu")
    return EntropyReport(w, w, r1, r2, model.is_exact)


def first_variation(model: ManifoldModel, grid: QuadratureGrid, h: TensorField) -> np.ndarray:
    """``-tau int <h, Ric + nabla^2 f - g/(2 tau)> dm`` for each member of ``h``."""
    res = soliton_residual(model)

    def fun(ctx):
        return pointwise_inner(_ginv0(model, ctx), h.value(ctx), res.value(ctx), 2)

    return -model.tau * grid.integrate(pointwise_field(fun, 0, max(h.depth, res.depth)).sample(grid.nodes))


# ---------------------------------------------------------------------------
# identity suites


SOLITON_IDENTITIES = ("T3.1", "T3.2", "T3.3", "C3.4", "T3.5", "T3.6", "T3.7", "T4.1")
GENERAL_IDENTITIES = ("G1", "G2")
USEFUL_IDENTITIES = ("divf_Ric", "divf_Rm", "lichnerowicz_Ric", "laplace_R", "laplace_f", "integral_R")


def _require_exact(model, what):
    if not model.is_exact:
        raise ApproximateSolitonError(
            f"{what} holds only on exact shrinkers; {model.name} is approximate (residual {model.soliton_residual})"
        )


def useful_identity_residuals(model: ManifoldModel, grid: QuadratureGrid) -> IdentityResidualSet:
    """The six standard shrinker identities: ``div_f Ric = 0``, ``div_f Rm = 0``,
    ``Delta_{f,L} Ric = 0``, ``Delta_f R = R/tau - 2|Ric|^2``,
    ``Delta_f f = -f/tau + C`` and ``int R dm = 2 tau int |Ric|^2 dm``."""
    _require_exact(model, "useful_identity_residuals")
    tau = model.tau
    out = IdentityResidualSet()
    ric = ricci_field(model)
    scal = scalar_curvature_field(model)
    f = potential_field(model)

    def ric2(ctx):
        r = ric.value(ctx)
        return pointwise_inner(_ginv0(model, ctx), r, r, 2)

    lap_r = laplace_f(model, scal)
    lap_r_res = pointwise_field(lambda ctx: lap_r.value(ctx) - scal.value(ctx) / tau + 2.0 * ric2(ctx), 0, 2)
    fields = {
        "divf_Ric": div_f(model, ric),
        "divf_Rm": _div_f_any(model, riemann_field(model)),
        "lichnerowicz_Ric": lichnerowicz_f(model, ric),
        "laplace_R": lap_r_res,
    }
    joint_residuals(model, grid, fields, out)

    shifted = linear_combination([(1.0, laplace_f(model, f)), (1.0 / tau, f)])
    scalars = pointwise_field(lambda ctx: jnp.concatenate([shifted.value(ctx), scal.value(ctx), ric2(ctx)]), 0, 2)
    sampled = scalars.sample(grid.nodes)
    vals = sampled[:, 0]
    const = float(grid.integrate(vals))
    dev = np.abs(vals - const)[:, None]
    out.add("laplace_f", *_sup_and_l2(grid, dev))
    out.info["laplace_f_constant"] = const

    int_r, int_ric2 = (float(v) for v in grid.integrate(sampled[:, 1:]))
    diff = abs(int_r - 2 * tau * int_ric2)
    out.add("integral_R", diff, diff)
    out.info["int_R_dm"] = int_r
    out.info["two_tau_int_Ric2_dm"] = 2 * tau * int_ric2
    return out


def commutator_fields(model: ManifoldModel, a: TensorField, omega: TensorField, h: TensorField) -> dict:
    """Residual fields of the commutator identities, keyed by name.

    ``G1``/``G2`` hold for any ``(g, f)``; the remaining entries use the
    soliton equation.
    """
    c = 0.5 / model.tau
    lapf = lambda t: laplace_f(model, t)  # noqa: E731
    lich = lambda t: lichnerowicz_f(model, t)  # noqa: E731
    divf = lambda t: div_f(model, t)  # noqa: E731
    dag = lambda t: div_f_dagger(model, t)  # noqa: E731
    d = lambda t: differential(model, t)  # noqa: E731
    lie = lambda t: lie_derivative_metric(model, t)  # noqa: E731
    lin = linear_combination

    # (Ric + nabla^2 f)(#w, -) as g^{-1} . S contracted with w
    s_mixed = product_field("npq,nqj->npj", inverse_metric_field(model), bakry_emery(model), 2)

    def s_of(w):
        return product_field("mp,npj->mj", w, s_mixed, 1)

    da = d(a)
    lie_w = lie(omega)
    divf_w = divf(omega)
    divf_h = divf(h)
    lich_h = lich(h)
    return {
        "G1": lin([(1, lapf(da)), (-1, d(lapf(a))), (-1, s_of(da))]),
        "G2": lin([(1, divf(lie_w)), (-1, lapf(omega)), (-1, d(divf_w)), (-1, s_of(omega))]),
        "T3.1": lin([(1, lapf(da)), (-1, d(lapf(a))), (-c, da)]),
        "T3.2": lin([(1, divf(lapf(omega))), (-1, lapf(divf_w)), (-c, divf_w)]),
        "T3.3": lin([(1, lie(lapf(omega))), (-1, lich(lie_w)), (-c, lie_w)]),
        "C3.4": lin([(1, dag(lapf(omega))), (-1, lich(dag(omega))), (-c, dag(omega))]),
        "T3.5": lin([(1, lapf(divf_h)), (-1, divf(lich_h)), (-c, divf_h)]),
        "T3.6": lin([(1, lapf(divf(divf_h))), (-1, divf(divf(lich_h)))]),
        "T3.7": lin([(1, dag(divf(lich_h))), (-1, lich(dag(divf_h)))]),
        "T4.1": lin([(1, divf(lie_w)), (-1, lapf(omega)), (-1, d(divf_w)), (-c, omega)]),
    }


def commutator_residuals(
    model: ManifoldModel, grid: QuadratureGrid, a: TensorField, omega: TensorField, h: TensorField, names=None, extra=None
) -> IdentityResidualSet:
    """Sup/L2 residuals of ``G1, G2`` and (on exact shrinkers) the eight
    soliton commutator identities; soliton entries are skipped otherwise.

    ``extra`` maps further names to residual fields evaluated in the same pass.
    """
    fields = commutator_fields(model, a, omega, h)
    fields.update(extra or {})
    out = IdentityResidualSet()
    active = []
    for name in list(names or (GENERAL_IDENTITIES + SOLITON_IDENTITIES)) + list(extra or {}):
        if name in SOLITON_IDENTITIES and not model.is_exact:
            out.skipped[name] = "skipped (approximate soliton)"
        else:
            active.append(name)
    if not active:
        return out
    joint_residuals(model, grid, {name: fields[name] for name in active}, out)
    return out


def joint_residuals(model: ManifoldModel, grid: QuadratureGrid, fields: dict, out=None) -> IdentityResidualSet:
    """Residuals of named fields from one sampling pass.

    One evaluation context per node, so shared subexpressions are traced once.
    Stacks may differ in member count.
    """
    out = IdentityResidualSet() if out is None else out
    names = list(fields)
    norms = [field_norm(model, fields[k]) for k in names]
    sizes = []  # member counts, recorded while tracing

    def stacked(ctx):
        vals = [t.value(ctx) for t in norms]
        sizes[:] = [v.shape[0] for v in vals]
        return jnp.concatenate(vals)

    joint = pointwise_field(stacked, 0, max(t.depth for t in norms))
    samples = joint.sample(grid.nodes)  # (N, total members)
    cuts = np.cumsum([0] + sizes)
    for i, name in enumerate(names):
        out.add(name, *_sup_and_l2(grid, samples[:, cuts[i] : cuts[i + 1]]))
    return out


def _joint_integrals(grid: QuadratureGrid, fns, depth: int) -> np.ndarray:
    """dm-integrals of several memberwise scalar integrands from one sampling pass."""
    joint = pointwise_field(lambda ctx: jnp.stack([fn(ctx) for fn in fns]), 0, depth)
    return grid.integrate(joint.sample(grid.nodes))  # (integrands, members)


def _pairings(model: ManifoldModel, grid: QuadratureGrid, pairs) -> np.ndarray:
    """Memberwise ``<S, T>_dm`` for each ``(S, T)`` in ``pairs``."""

    def make(s, t):
        return lambda ctx: pointwise_inner(_ginv0(model, ctx), s.value(ctx), t.value(ctx), s.valence)

    return _joint_integrals(grid, [make(s, t) for s, t in pairs], max(max(s.depth, t.depth) for s, t in pairs))


def adjointness_defects(model: ManifoldModel, grid: QuadratureGrid, a: TensorField, omega: TensorField, h: TensorField, k: TensorField) -> dict:
    """The three pairing identities, memberwise, as absolute defects scaled by
    the product of L2(dm) norms of the paired fields."""
    pairs = [
        (div_f(model, omega), a),
        (omega, differential(model, a)),
        (div_f(model, h), omega),
        (h, div_f_dagger(model, omega)),
        (laplace_f(model, h), k),
        (h, laplace_f(model, k)),
        (a, a),
        (omega, omega),
        (h, h),
        (k, k),
    ]
    v = _pairings(model, grid, pairs)
    na, nw, nh, nk = (np.sqrt(np.maximum(v[i], 1e-300)) for i in range(6, 10))
    return {
        "div_f_vs_d": float(np.max(np.abs(v[0] + v[1]) / (na * nw + 1.0))),
        "div_f_vs_dagger": float(np.max(np.abs(v[2] - v[3]) / (nh * nw + 1.0))),
        "laplace_f_selfadjoint": float(np.max(np.abs(v[4] - v[5]) / (nh * nk + 1.0))),
    }


def divergence_theorem_defects(model: ManifoldModel, grid: QuadratureGrid, a: TensorField, omega: TensorField) -> dict:
    dw = div_f(model, omega)
    la = laplace_f(model, a)
    v = _joint_integrals(grid, [dw.value, la.value], max(dw.depth, la.depth))
    return {"int_div_f": float(np.max(np.abs(v[0]))), "int_laplace_f": float(np.max(np.abs(v[1])))}


def trace_field(model: ManifoldModel, h: TensorField) -> TensorField:
    return product_field("npq,mpq->m", inverse_metric_field(model), h, 0)


def trace_difference(model: ManifoldModel, h: TensorField) -> TensorField:
    """``tr Delta_{f,L} h - Delta_f tr h`` (informational; no sign is asserted)."""
    return trace_field(model, lichnerowicz_f(model, h)) - laplace_f(model, trace_field(model, h))


def log_mass_defect(grid: QuadratureGrid) -> float:
    return abs(math.log(grid.raw_mass))
