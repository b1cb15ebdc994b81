"""Chart-based Riemannian tensor calculus.

Tensor fields are represented as pure functions of a single chart point
``x`` (shape ``(n,)``) returning a *stack* of covariant tensors with shape
``(m,) + (n,) * p``.  The leading stack axis lets one compiled kernel carry a
whole family of fields (a Galerkin basis, a batch of random test fields).

Fields are evaluated as truncated Taylor jets at the point (see
:mod:`grslab.jets`): an operator asks its inputs for one or two extra orders
and contracts with jets of the connection, so nested operators cost a
constant amount of work per level.  Jets of the base data (metric, potential,
ambient coordinates) come from forward-mode automatic differentiation.  The
metric derivative is the only place where the two curvature backends differ:
closed-form models differentiate the metric exactly, finite-difference models
use a central stencil with a fixed step.

Curvature sign convention: ``Rm(X, Y, Z, W) = -<R(X, Y)Z, W>``, which with
``R(X, Y) = [D_X, D_Y] - D_[X,Y]`` gives ``Ric_ij = g^pq R_piqj`` and the
Ricci identity ``(nabla^2 w)_ijk - (nabla^2 w)_jik = R_ijkp w^p``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import jax
import jax.numpy as jnp
import numpy as np

from . import jets

__all__ = [
    "CoordinateChart",
    "ManifoldModel",
    "TensorField",
    "JetContext",
    "SingularMetricError",
    "ConfigurationError",
    "christoffel",
    "curvature",
    "covariant_derivative",
    "hessian_and_lie",
    "ricci_identity_residual",
]

CLOSED_FORM = "closed_form"
FINITE_DIFFERENCE = "finite_difference"


class SingularMetricError(ValueError):
    """Metric is not invertible (or not positive-definite) at a point."""


class ConfigurationError(ValueError):
    """Inconsistent numerical configuration (steps, resolutions, degrees)."""


@dataclass(frozen=True)
class CoordinateChart:
    """A coordinate box with per-axis periodicity and polar weighting.

    ``polar_power[k] = m > 0`` marks a polar axis on ``(0, pi)`` whose volume
    density carries a ``sin(x_k)**m`` factor; quadrature on such an axis is
    Gauss-Jacobi in ``cos(x_k)``.  ``collar`` is the fraction of each
    non-periodic axis excluded from pointwise checks near its ends.
    """

    lower: tuple
    upper: tuple
    periodic: tuple
    polar_power: tuple
    collar: float = 0.02

    def __post_init__(self):
        n = len(self.lower)
        if n < 2:
            raise ValueError("chart dimension must be at least 2")
        if not (len(self.upper) == len(self.periodic) == len(self.polar_power) == n):
            raise ValueError("chart axis descriptors have inconsistent lengths")
        if any(u <= l for l, u in zip(self.lower, self.upper)):
            raise ValueError("coordinate box must have positive volume")
        if not 0.0 <= self.collar < 0.5:
            raise ValueError("collar must lie in [0, 0.5)")

    @property
    def dimension(self) -> int:
        return len(self.lower)

    @property
    def lengths(self) -> np.ndarray:
        return np.asarray(self.upper, float) - np.asarray(self.lower, float)

    def contains(self, x) -> bool:
        x = np.asarray(x, float)
        lo, hi = np.asarray(self.lower), np.asarray(self.upper)
        ok = (x >= lo) & (x <= hi)
        return bool(np.all(ok | np.asarray(self.periodic)))

    def interior_mask(self, nodes, margin=None) -> np.ndarray:
        """Boolean mask of nodes that sit inside the collar on every
        non-periodic axis.  ``margin`` (absolute, per axis) widens it."""
        nodes = np.asarray(nodes)
        lo, hi = np.asarray(self.lower), np.asarray(self.upper)
        pad = self.collar * self.lengths
        if margin is not None:
            pad = np.maximum(pad, margin)
        mask = np.ones(len(nodes), bool)
        for k in range(self.dimension):
            if self.periodic[k]:
                continue
            mask &= (nodes[:, k] > lo[k] + pad[k]) & (nodes[:, k] < hi[k] - pad[k])
        return mask

    @staticmethod
    def concatenate(a: "CoordinateChart", b: "CoordinateChart") -> "CoordinateChart":
        return CoordinateChart(
            a.lower + b.lower,
            a.upper + b.upper,
            a.periodic + b.periodic,
            a.polar_power + b.polar_power,
            collar=max(a.collar, b.collar),
        )


@dataclass
class ManifoldModel:
    """The tuple ``(M^n, g, f, tau)`` on a single chart.

    ``riemann`` is an optional closed-form ``x -> R_ijkl``; when absent the
    curvature is assembled from Christoffel symbols.  ``metric_diag`` marks a
    diagonal metric, ``factors`` the factor models of a product (one per
    entry of ``blocks``) and ``jet_data`` maps ``"diag"``/``"ambient"`` to
    exact jet builders ``(x, K) -> jet``; all three only speed up (or sharpen)
    jet evaluation.  ``blocks`` lists the
    coordinate slices of product factors (a single slice for non-products)
    and ``ambient`` maps a chart point to ambient coordinates used to build
    polynomial bases.
    """

    name: str
    chart: CoordinateChart
    metric: Callable
    potential: Callable
    tau: float
    curvature_source: str = CLOSED_FORM
    riemann: Optional[Callable] = None
    soliton: str = "exact"
    soliton_bound: float = 1e-10
    soliton_residual: Optional[float] = None
    ambient: Optional[Callable] = None
    ambient_blocks: tuple = ()
    blocks: tuple = ()
    volume: Optional[float] = None
    fd_step: Optional[np.ndarray] = None
    fd_order: int = 4
    metric_diag: Optional[Callable] = None
    constant_potential: bool = False
    constant_curvature: Optional[float] = None
    factors: tuple = ()
    jet_data: dict = field(default_factory=dict)
    info: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.tau > 0:
            raise ValueError("tau must be positive")
        if self.curvature_source not in (CLOSED_FORM, FINITE_DIFFERENCE):
            raise ValueError(f"unknown curvature source {self.curvature_source!r}")
        if not self.blocks:
            self.blocks = ((0, self.dim),)

    @property
    def dim(self) -> int:
        return self.chart.dimension

    @property
    def is_exact(self) -> bool:
        return self.soliton == "exact"

    def with_potential(self, potential: Callable) -> "ManifoldModel":
        """Same geometry, different weight (used for dm normalisation)."""
        from dataclasses import replace

        return replace(self, potential=potential, info=dict(self.info))

    def __hash__(self):
        return id(self)

    def __eq__(self, other):
        return self is other


SAMPLE_CHUNK = 64


class JetContext:
    """Evaluation point plus memo tables shared by every field of one evaluation.

    Every entry keeps the highest order computed so far and serves lower
    orders by slicing.  Operators evaluate their inputs before their own
    connection terms, so the highest order is normally requested first.
    """

    def __init__(self, x):
        self.x = x
        self.n = x.shape[0]
        self._geo = {}
        self._fields = {}
        self._subs = {}

    def memo(self, key, order: int, build):
        hit = self._geo.get(key)
        if hit is None or hit[1] < order:
            hit = (build(order), order)
            self._geo[key] = hit
        return jets.truncate(hit[0], self.n, order)

    def field(self, key, order: int, build):
        # lower orders are slices of higher ones, so keep only the highest;
        # callers request the higher order first to avoid recomputation
        hit = self._fields.get(key)
        if hit is None or hit[1] < order:
            hit = (build(), order)
            self._fields[key] = hit
        return jets.truncate(hit[0], self.n, order)

    def sub(self, lo: int, hi: int) -> "JetContext":
        ctx = self._subs.get((lo, hi))
        if ctx is None:
            ctx = self._subs[(lo, hi)] = JetContext(self.x[lo:hi])
        return ctx


class TensorField:
    """A stack of covariant tensor fields of a common valence.

    ``jet(ctx, K)`` returns the order-``K`` Taylor jet at ``ctx.x`` with shape
    ``(m,) + (n,) * valence + (M_K,)``.  ``depth`` bounds the number of
    derivatives the field takes of base data.  ``tags`` optionally labels each
    of the ``m`` members (provenance in Galerkin bases).
    """

    def __init__(self, jet: Callable, valence: int, symmetry: str = "none", tags: Sequence = (), depth: int = 0):
        if valence not in (0, 1, 2, 3, 4, 5):
            raise ValueError("valence must be between 0 and 5")
        self._jet = jet
        self.valence = valence
        self.symmetry = symmetry
        self.tags = tuple(tags)
        self.depth = depth
        self._sampler = None

    def jet(self, ctx: JetContext, order: int):
        return ctx.field(id(self), order, lambda: self._jet(ctx, order))

    def value(self, ctx: JetContext):
        return self.jet(ctx, 0)[..., 0]

    def fn(self, x):
        """Point value ``(m,) + (n,) * valence``."""
        return self.value(JetContext(jnp.asarray(x, dtype=jnp.float64)))

    def __call__(self, x):
        return self.fn(x)

    @classmethod
    def from_function(cls, fun: Callable, valence: int, symmetry: str = "none", tags: Sequence = ()) -> "TensorField":
        """Wrap a point function ``x -> (m,) + (n,) * valence``; its jets come
        from automatic differentiation."""
        key = object()
        return cls(lambda ctx, k: ctx.memo(key, k, lambda kb: jets.taylor(fun, ctx.x, kb)), valence, symmetry, tags)

    def size(self, n: int) -> int:
        return jax.eval_shape(self.fn, jax.ShapeDtypeStruct((n,), jnp.float64)).shape[0]

    def sample(self, nodes) -> np.ndarray:
        """Evaluate at every node; shape ``(N, m) + (n,) * valence``."""
        if self._sampler is None:
            self._sampler = jax.jit(lambda xs: jax.lax.map(self.fn, xs, batch_size=SAMPLE_CHUNK))
        return np.asarray(self._sampler(jnp.asarray(nodes, dtype=jnp.float64)))

    def __repr__(self):
        return f"TensorField(valence={self.valence}, symmetry={self.symmetry!r})"

    # linear algebra on stacks of equal valence

    def __add__(self, other):
        _check_same_valence(self, other)
        return TensorField(lambda c, k: self.jet(c, k) + other.jet(c, k), self.valence, _common_sym(self, other), depth=max(self.depth, other.depth))

    def __sub__(self, other):
        _check_same_valence(self, other)
        return TensorField(lambda c, k: self.jet(c, k) - other.jet(c, k), self.valence, _common_sym(self, other), depth=max(self.depth, other.depth))

    def __neg__(self):
        return self.scale(-1.0)

    def scale(self, c: float) -> "TensorField":
        return TensorField(lambda ctx, k: c * self.jet(ctx, k), self.valence, self.symmetry, self.tags, self.depth)

    def combine(self, coeffs) -> "TensorField":
        """New stack whose members are linear combinations ``coeffs @ members``."""
        c = jnp.asarray(coeffs)
        return TensorField(lambda ctx, k: jnp.tensordot(c, self.jet(ctx, k), axes=1), self.valence, self.symmetry, depth=self.depth)

    def member(self, i: int) -> "TensorField":
        return TensorField(lambda ctx, k: self.jet(ctx, k)[i : i + 1], self.valence, self.symmetry, depth=self.depth)


def sample_joint(fields: Sequence[TensorField], nodes) -> list:
    """Sample several fields in one compiled pass sharing one jet context per node."""

    def fn(x):
        ctx = JetContext(x)
        return tuple(f.value(ctx) for f in fields)

    out = jax.jit(lambda xs: jax.lax.map(fn, xs, batch_size=SAMPLE_CHUNK))(jnp.asarray(nodes, dtype=jnp.float64))
    return [np.asarray(v) for v in out]


def _check_same_valence(a, b):
    if a.valence != b.valence:
        raise ValueError("valence mismatch")


def _common_sym(a, b):
    return a.symmetry if a.symmetry == b.symmetry else "none"


def linear_combination(terms, symmetry="none") -> TensorField:
    """``sum c_i T_i`` over ``(c_i, T_i)`` pairs sharing one evaluation context."""
    valence = terms[0][1].valence
    if any(t.valence != valence for _, t in terms):
        raise ValueError("valence mismatch")
    return TensorField(lambda ctx, k: sum(c * t.jet(ctx, k) for c, t in terms), valence, symmetry, depth=max(t.depth for _, t in terms))


def product_field(spec: str, a: TensorField, b: TensorField, valence: int, symmetry="none") -> TensorField:
    """Pointwise tensor product contracted by an einsum ``spec``."""
    return TensorField(lambda ctx, k: jets.mul(spec, a.jet(ctx, k), b.jet(ctx, k), ctx.n, k), valence, symmetry, depth=max(a.depth, b.depth))


def pointwise_field(fun: Callable, valence: int, depth: int = 0) -> TensorField:
    """Field defined only through point values ``fun(ctx)``; it cannot be
    differentiated further (used for norms and integrands)."""

    def jet(ctx, k):
        if k:
            raise ValueError("pointwise fields carry no derivatives")
        return fun(ctx)[..., None]

    return TensorField(jet, valence, depth=depth)


def constant_field(value, valence=0) -> TensorField:
    v = jnp.asarray(value, dtype=jnp.float64)

    def jet(ctx, k):
        shape = (1,) + (ctx.n,) * valence
        return jets.constant(jnp.broadcast_to(v, shape), ctx.n, k)

    return TensorField(jet, valence)


def scalar_field(fun: Callable) -> TensorField:
    """Wrap ``x -> float`` as a one-member scalar stack."""
    return TensorField.from_function(lambda x: jnp.reshape(fun(x), (1,)), 0)


# ---------------------------------------------------------------------------
# jets of model data


def _factor_jets(model, ctx, order, getter):
    """``getter(factor, subctx, order)`` for each product factor, embedded."""
    out = []
    for f, (lo, hi) in zip(model.factors, model.blocks):
        out.append((jets.embed(getter(f, ctx.sub(lo, hi), order), f.dim, lo, ctx.n, order), lo, hi))
    return out


def diag_jet(model: ManifoldModel, ctx: JetContext, order: int):
    def build(k):
        if model.factors:
            return jnp.concatenate([j for j, _, _ in _factor_jets(model, ctx, k, diag_jet)], axis=0)
        if "diag" in model.jet_data:
            return model.jet_data["diag"](ctx.x, k)
        return jets.taylor(model.metric_diag, ctx.x, k)

    return ctx.memo(("diag", id(model)), order, build)


def metric_jet(model: ManifoldModel, ctx: JetContext, order: int):
    def build(k):
        if model.metric_diag is not None:
            return jnp.einsum("ij,iZ->ijZ", jnp.eye(ctx.n), diag_jet(model, ctx, k))
        return jets.taylor(model.metric, ctx.x, k)

    return ctx.memo(("g", id(model)), order, build)


def inverse_metric_jet(model: ManifoldModel, ctx: JetContext, order: int):
    def build(k):
        if model.metric_diag is not None:
            return jnp.einsum("ij,iZ->ijZ", jnp.eye(ctx.n), jets.recip(diag_jet(model, ctx, k), ctx.n, k))
        return jets.matrix_inverse(metric_jet(model, ctx, k), ctx.n, k)

    return ctx.memo(("ginv", id(model)), order, build)


def potential_jet(model: ManifoldModel, ctx: JetContext, order: int):
    def build(k):
        if model.factors:
            return sum(j for j, _, _ in _factor_jets(model, ctx, k, potential_jet))
        return jets.taylor(model.potential, ctx.x, k)

    return ctx.memo(("f", id(model)), order, build)


def ambient_jet(model: ManifoldModel, ctx: JetContext, order: int):
    if model.ambient is None:
        raise ValueError(f"{model.name} has no ambient embedding")

    def build(k):
        if model.factors:
            return jnp.concatenate([j for j, _, _ in _factor_jets(model, ctx, k, ambient_jet)], axis=0)
        if "ambient" in model.jet_data:
            return model.jet_data["ambient"](ctx.x, k)
        return jets.taylor(model.ambient, ctx.x, k)

    return ctx.memo(("amb", id(model)), order, build)


def metric_derivative_jet(model: ManifoldModel, ctx: JetContext, order: int):
    """``dg[k, i, j] = d_k g_ij`` with the model's backend."""

    def build(k):
        if model.curvature_source == FINITE_DIFFERENCE:
            stencil = lambda y: _fd_jacobian(model.metric, y, model.fd_step, model.fd_order)  # noqa: E731
            return jets.taylor(stencil, ctx.x, k)
        return jnp.moveaxis(jets.grad(metric_jet(model, ctx, k + 1), ctx.n, k + 1), -2, 0)

    return ctx.memo(("dg", id(model)), order, build)


def christoffel_jet(model: ManifoldModel, ctx: JetContext, order: int):
    """``G[k, i, j] = Gamma^k_ij``."""
    n = ctx.n

    def build(k):
        if model.metric_diag is not None and model.curvature_source == CLOSED_FORM:
            # Gamma^k_ij = (d_ki d_j g_kk + d_kj d_i g_kk - d_ij d_k g_ii) / (2 g_kk)
            dd = jets.grad(diag_jet(model, ctx, k + 1), n, k + 1)  # dd[i, k] = d_k g_ii
            eye = jnp.eye(n)
            t = jnp.einsum("ki,kjZ->kijZ", eye, dd) + jnp.einsum("kj,kiZ->kijZ", eye, dd) - jnp.einsum("ij,ikZ->kijZ", eye, dd)
            half = 0.5 * jets.recip(diag_jet(model, ctx, k), n, k)
            return jets.mul("kij,k->kij", t, half, n, k)
        dg = metric_derivative_jet(model, ctx, k)
        lower = 0.5 * (jnp.einsum("ijlZ->lijZ", dg) + jnp.einsum("jilZ->lijZ", dg) - dg)
        return jets.mul("kl,lij->kij", inverse_metric_jet(model, ctx, k), lower, n, k)

    return ctx.memo(("gamma", id(model)), order, build)


def riemann_jet(model: ManifoldModel, ctx: JetContext, order: int):
    """``R_ijkl`` in the sign convention of the module docstring."""
    n = ctx.n

    def build(k):
        closed = model.curvature_source == CLOSED_FORM
        if closed and model.constant_curvature is not None:
            g = metric_jet(model, ctx, k)
            gg = jets.mul("ik,jl->ijkl", g, g, n, k)
            return model.constant_curvature * (gg - jnp.swapaxes(gg, 2, 3))
        if closed and model.factors:
            rm = jnp.zeros((n,) * 4 + (jets.jet_size(n, k),))
            for part, lo, hi in _factor_jets(model, ctx, k, riemann_jet):
                rm = rm.at[lo:hi, lo:hi, lo:hi, lo:hi].set(part)
            return rm
        if closed and model.riemann is not None:
            return jets.taylor(model.riemann, ctx.x, k)
        return _riemann_from_connection_jet(model, ctx, k)

    return ctx.memo(("rm", id(model)), order, build)


def _riemann_from_connection_jet(model, ctx, k):
    n = ctx.n
    gam1 = christoffel_jet(model, ctx, k + 1)
    dgam = jets.grad(gam1, n, k + 1)  # [m, j, k, i] = d_i G^m_jk
    gam = jets.truncate(gam1, n, k)
    a = (
        jnp.einsum("mjkiZ->ijkmZ", dgam)
        - jnp.einsum("mikjZ->ijkmZ", dgam)
        + jets.mul("mip,pjk->ijkm", gam, gam, n, k)
        - jets.mul("mjp,pik->ijkm", gam, gam, n, k)
    )
    return -jets.mul("ijkm,ml->ijkl", a, metric_jet(model, ctx, k), n, k)


def ricci_jet(model: ManifoldModel, ctx: JetContext, order: int):
    return ctx.memo(
        ("ric", id(model)),
        order,
        lambda k: jets.mul("pq,piqj->ij", inverse_metric_jet(model, ctx, k), riemann_jet(model, ctx, k), ctx.n, k),
    )


def scalar_curvature_jet(model: ManifoldModel, ctx: JetContext, order: int):
    return ctx.memo(
        ("scal", id(model)),
        order,
        lambda k: jets.mul("ij,ij->", inverse_metric_jet(model, ctx, k), ricci_jet(model, ctx, k), ctx.n, k),
    )


def grad_potential_jet(model: ManifoldModel, ctx: JetContext, order: int):
    """``grad f`` (index up); ``None`` when the potential is constant."""
    if model.constant_potential:
        return None

    def build(k):
        df = jets.grad(potential_jet(model, ctx, k + 1), ctx.n, k + 1)
        return jets.mul("pq,q->p", inverse_metric_jet(model, ctx, k), df, ctx.n, k)

    return ctx.memo(("gradf", id(model)), order, build)


# ---------------------------------------------------------------------------
# point values


def _point(model, x, getter):
    x = jnp.asarray(x, dtype=jnp.float64)
    return getter(model, JetContext(x), 0)[..., 0]


def metric_inverse(model: ManifoldModel, x):
    return _point(model, x, inverse_metric_jet)


def _fd_jacobian(fun, x, step, order):
    """Central-difference derivative; derivative index first."""
    n = x.shape[0]
    cols = []
    for a in range(n):
        e = jnp.zeros(n).at[a].set(step[a])
        if order == 4:
            d = (-fun(x + 2 * e) + 8 * fun(x + e) - 8 * fun(x - e) + fun(x - 2 * e)) / (12 * step[a])
        elif order == 2:
            d = (fun(x + e) - fun(x - e)) / (2 * step[a])
        else:
            raise ConfigurationError("finite-difference order must be 2 or 4")
        cols.append(d)
    return jnp.stack(cols, 0)


def metric_derivative(model: ManifoldModel, x):
    """``dg[k, i, j] = d_k g_ij`` with the model's backend."""
    return _point(model, x, metric_derivative_jet)


def christoffel(model: ManifoldModel, x):
    """Second-kind Christoffel symbols ``G[k, i, j] = Gamma^k_ij``."""
    return _point(model, x, christoffel_jet)


def riemann_from_connection(model: ManifoldModel, x):
    """``R_ijkl`` assembled from Christoffel symbols and their derivative."""
    x = jnp.asarray(x, dtype=jnp.float64)
    return _riemann_from_connection_jet(model, JetContext(x), 0)[..., 0]


def riemann(model: ManifoldModel, x):
    return _point(model, x, riemann_jet)


def curvature(model: ManifoldModel, x):
    """``(Rm, Ric, R)`` at a chart point, in the convention ``Ric_ij = g^pq R_piqj``."""
    ctx = JetContext(jnp.asarray(x, dtype=jnp.float64))
    return (
        riemann_jet(model, ctx, 0)[..., 0],
        ricci_jet(model, ctx, 0)[..., 0],
        scalar_curvature_jet(model, ctx, 0)[..., 0],
    )


def check_point(model: ManifoldModel, x):
    """Raise for points outside the box or with a singular metric."""
    x = np.asarray(x, float)
    if not model.chart.contains(x):
        raise ValueError(f"point {x} outside chart box")
    g = np.asarray(model.metric(jnp.asarray(x)))
    w = np.linalg.eigvalsh(0.5 * (g + g.T))
    if not np.all(np.isfinite(w)) or w.min() <= 1e-14 * max(1.0, abs(w).max()):
        raise SingularMetricError(f"metric not positive-definite at {x}")


# ---------------------------------------------------------------------------
# covariant calculus on stacks

_SLOTS = "bcdefgh"


def _connection_spec(valence, s):
    idx = _SLOTS[:valence]
    src = "m" + idx[:s] + "q" + idx[s + 1 :]
    dst = "ma" + idx[:s] + "i" + idx[s + 1 :]
    return f"{src},qai->{dst}"


def covariant_jet(model: ManifoldModel, ctx: JetContext, t: TensorField, order: int):
    """Order-``order`` jet of ``nabla T`` (new index first, after the stack axis)."""
    n = ctx.n
    d = jnp.moveaxis(jets.grad(t.jet(ctx, order + 1), n, order + 1), -2, 1)
    if t.valence:
        gam = christoffel_jet(model, ctx, order)
        tt = t.jet(ctx, order)
        for s in range(t.valence):
            d = d - jets.mul(_connection_spec(t.valence, s), tt, gam, n, order)
    return d


def covariant_derivative(model: ManifoldModel, t: TensorField) -> TensorField:
    """``nabla T`` with the new index first: ``(nabla T)_{a i1..ip} = nabla_a T_{i1..ip}``."""
    if t.valence >= 5:
        raise ValueError("valence too high for covariant derivative")
    return TensorField(lambda ctx, k: covariant_jet(model, ctx, t, k), t.valence + 1, depth=t.depth + 1)


def _traced_connection(model, ctx, order):
    """``c^r = g^ab Gamma^r_ab`` and ``G[b, r, i] = g^ab Gamma^r_ai``."""

    def build_c(k):
        return jets.mul("ab,rab->r", inverse_metric_jet(model, ctx, k), christoffel_jet(model, ctx, k), ctx.n, k)

    def build_g(k):
        return jets.mul("ab,rai->bri", inverse_metric_jet(model, ctx, k), christoffel_jet(model, ctx, k), ctx.n, k)

    return ctx.memo(("gam_c", id(model)), order, build_c), ctx.memo(("gam_g", id(model)), order, build_g)


_FREE = "cdefgh"


def traced_covariant_jet(model: ManifoldModel, ctx: JetContext, s: TensorField, order: int):
    """Order-``order`` jet of ``g^ab nabla_a S_b...`` without forming ``nabla S``."""
    n, q = ctx.n, s.valence
    free = _FREE[: q - 1]
    ds = jets.grad(s.jet(ctx, order + 1), n, order + 1)  # (m, b, J, a, M)
    out = jets.mul(f"ab,mb{free}a->m{free}", inverse_metric_jet(model, ctx, order), ds, n, order)
    c, g = _traced_connection(model, ctx, order)
    sk = s.jet(ctx, order)
    out = out - jets.mul(f"r,mr{free}->m{free}", c, sk, n, order)
    for t in range(q - 1):
        src = free[:t] + "r" + free[t + 1 :]
        dst = free[:t] + "i" + free[t + 1 :]
        out = out - jets.mul(f"bri,mb{src}->m{dst}", g, sk, n, order)
    return out


def _sym_jet(t):
    return 0.5 * (t + jnp.swapaxes(t, -2, -3))


def hessian(model: ManifoldModel, a: TensorField) -> TensorField:
    if a.valence != 0:
        raise ValueError("hessian expects a scalar stack")
    dd = covariant_derivative(model, covariant_derivative(model, a))
    return TensorField(lambda ctx, k: _sym_jet(dd.jet(ctx, k)), 2, "symmetric-pair", depth=dd.depth)


def lie_derivative_metric(model: ManifoldModel, omega: TensorField) -> TensorField:
    """``L_{#w} g = nabla_i w_j + nabla_j w_i``."""
    if omega.valence != 1:
        raise ValueError("expected a 1-form stack")
    d = covariant_derivative(model, omega)
    return TensorField(lambda ctx, k: 2.0 * _sym_jet(d.jet(ctx, k)), 2, "symmetric-pair", depth=d.depth)


def hessian_and_lie(model: ManifoldModel, a: TensorField, omega: TensorField):
    return hessian(model, a), lie_derivative_metric(model, omega)


def raise_all(ginv, t, valence):
    """Raise every tensor index of a stack at one point."""
    out = t
    for s in range(valence):
        out = jnp.moveaxis(jnp.tensordot(out, ginv, axes=([1 + s], [0])), -1, 1 + s)
    return out


def pointwise_inner(ginv, s, t, valence):
    """``<S, T>_g`` memberwise for stacks at one point, shape ``(m,)``."""
    axes = tuple(range(1, 1 + valence))
    return jnp.sum(raise_all(ginv, s, valence) * t, axis=axes) if valence else s * t


def field_norm(model: ManifoldModel, t: TensorField) -> TensorField:
    """Pointwise ``|T|_g`` as a scalar stack."""

    def fun(ctx):
        v = t.value(ctx)
        ginv = inverse_metric_jet(model, ctx, 0)[..., 0]
        return jnp.sqrt(jnp.maximum(pointwise_inner(ginv, v, v, t.valence), 0.0))

    return pointwise_field(fun, 0, t.depth)


# ---------------------------------------------------------------------------
# checks


def ricci_identity_residual(model: ManifoldModel, omega: TensorField, t: TensorField, nodes):
    """Sup over ``nodes`` of the pointwise norms of the two Ricci identities

    ``nabla_i nabla_j w_k - nabla_j nabla_i w_k - R_ijkp w^p`` and
    ``nabla_i nabla_j T_pq - nabla_j nabla_i T_pq - R_ijpm T^m_q - R_ijqm T_p^m``.
    """
    d2w = covariant_derivative(model, covariant_derivative(model, omega))
    d2t = covariant_derivative(model, covariant_derivative(model, t))

    def res1(ctx):
        rm = riemann_jet(model, ctx, 0)[..., 0]
        ginv = inverse_metric_jet(model, ctx, 0)[..., 0]
        dd = d2w.value(ctx)
        up = jnp.einsum("pq,mq->mp", ginv, omega.value(ctx))
        return dd - jnp.swapaxes(dd, 1, 2) - jnp.einsum("ijkp,mp->mijk", rm, up)

    def res2(ctx):
        rm = riemann_jet(model, ctx, 0)[..., 0]
        ginv = inverse_metric_jet(model, ctx, 0)[..., 0]
        dd = d2t.value(ctx)
        tt = t.value(ctx)
        first = jnp.einsum("am,rmq->raq", ginv, tt)  # T^a_q
        second = jnp.einsum("rpm,ma->rpa", tt, ginv)  # T_p^a
        corr = jnp.einsum("ijpa,raq->rijpq", rm, first) + jnp.einsum("ijqa,rpa->rijpq", rm, second)
        return dd - jnp.swapaxes(dd, 1, 2) - corr

    r1 = field_norm(model, pointwise_field(res1, 3, d2w.depth)).sample(nodes)
    r2 = field_norm(model, pointwise_field(res2, 4, d2t.depth)).sample(nodes)
    return float(np.max(r1)), float(np.max(r2))
