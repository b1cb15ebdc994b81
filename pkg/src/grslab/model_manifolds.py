"""Closed model geometries and their quadrature grids."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable, Optional, Sequence

import jax
import jax.numpy as jnp
import numpy as np
from scipy.special import gammaln, roots_jacobi, roots_legendre

from . import jets
from .geometry_core import (
    CLOSED_FORM,
    FINITE_DIFFERENCE,
    ConfigurationError,
    CoordinateChart,
    ManifoldModel,
    SingularMetricError,
)

__all__ = [
    "ModelSpec",
    "QuadratureGrid",
    "AliasingError",
    "build_round_sphere",
    "build_product",
    "build_generic",
    "build_model",
    "ellipsoid",
    "fd_refinement",
    "Refinement",
    "quadrature_grid",
    "default_resolution",
    "sphere_volume",
]


class AliasingError(ConfigurationError):
    """Quadrature too coarse for the requested basis degree."""


def sphere_volume(n: int, radius: float = 1.0) -> float:
    return float(np.exp(math.log(2.0) + 0.5 * (n + 1) * math.log(math.pi) - gammaln(0.5 * (n + 1)))) * radius**n


def _hyperspherical_chart(n: int, collar: float) -> CoordinateChart:
    return CoordinateChart(
        lower=(0.0,) * n,
        upper=(math.pi,) * (n - 1) + (2 * math.pi,),
        periodic=(False,) * (n - 1) + (True,),
        polar_power=tuple(n - k for k in range(1, n)) + (0,),
        collar=collar,
    )


def _hyperspherical_diag(n: int, radius: float) -> Callable:
    r2 = radius * radius

    def diag(x):
        s2 = jnp.sin(x[:-1]) ** 2
        return r2 * jnp.concatenate([jnp.ones(1), jnp.cumprod(s2)])

    return diag


def _hyperspherical_metric(n: int, radius: float) -> Callable:
    diag = _hyperspherical_diag(n, radius)
    return lambda x: jnp.diag(diag(x))


def _hyperspherical_ambient(n: int) -> Callable:
    def ambient(x):
        s = jnp.concatenate([jnp.ones(1), jnp.cumprod(jnp.sin(x[:-1]))])  # prod of sines before axis k
        c = jnp.cos(x[:-1])
        head = s[:-1] * c
        last = s[-1]
        return jnp.concatenate([head, jnp.stack([last * jnp.cos(x[-1]), last * jnp.sin(x[-1])])])

    return ambient


def _hyperspherical_jets(n: int, radius: float) -> dict:
    """Exact jets of the metric diagonal and the ambient map, built from
    univariate sine/cosine jets."""

    def trig(x, k):
        return [jets.sin_cos(x, a, n, k) for a in range(n)]

    def diag(x, k):
        sc = trig(x, k)
        one = jets.constant(radius * radius, n, k)
        out = [one]
        for a in range(n - 1):
            s2 = jets.mul(",->", sc[a][0], sc[a][0], n, k)
            out.append(jets.mul(",->", out[-1], s2, n, k))
        return jnp.stack(out)

    def ambient(x, k):
        sc = trig(x, k)
        prefix = [jets.constant(1.0, n, k)]
        for a in range(n - 1):
            prefix.append(jets.mul(",->", prefix[-1], sc[a][0], n, k))
        head = [jets.mul(",->", prefix[a], sc[a][1], n, k) for a in range(n - 1)]
        last = prefix[n - 1]
        tail = [jets.mul(",->", last, sc[n - 1][1], n, k), jets.mul(",->", last, sc[n - 1][0], n, k)]
        return jnp.stack(head + tail)

    return {"diag": diag, "ambient": ambient}


def _constant_curvature_riemann(metric: Callable, kappa: float) -> Callable:
    def rm(x):
        g = metric(x)
        return kappa * (jnp.einsum("ik,jl->ijkl", g, g) - jnp.einsum("il,jk->ijkl", g, g))

    return rm


def build_round_sphere(n: int, radius: float = 1.0, collar: float = 0.02) -> ManifoldModel:
    """Round ``S^n`` of radius ``r`` as a trivial shrinker.

    ``Ric = (n-1)/r^2 g``, ``tau = r^2 / (2(n-1))`` and the constant potential
    is fixed by ``int dm = 1``.
    """
    if n not in (2, 3, 4):
        raise ValueError(f"unsupported sphere dimension {n}; expected 2, 3 or 4")
    if not radius > 0:
        raise ValueError("radius must be positive")
    tau = radius**2 / (2.0 * (n - 1))
    vol = sphere_volume(n, radius)
    f0 = math.log(vol) - 0.5 * n * math.log(4 * math.pi * tau)
    metric = _hyperspherical_metric(n, radius)
    kappa = 1.0 / radius**2
    return ManifoldModel(
        name=f"sphere(n={n},r={radius:g})",
        chart=_hyperspherical_chart(n, collar),
        metric=metric,
        potential=lambda x: f0 + 0.0 * x[0],
        tau=tau,
        curvature_source=CLOSED_FORM,
        riemann=_constant_curvature_riemann(metric, kappa),
        soliton="exact",
        soliton_bound=1e-10,
        ambient=_hyperspherical_ambient(n),
        ambient_blocks=((0, n + 1),),
        volume=vol,
        metric_diag=_hyperspherical_diag(n, radius),
        constant_potential=True,
        constant_curvature=kappa,
        jet_data=_hyperspherical_jets(n, radius),
        info={"kind": "sphere", "n": n, "radius": radius, "einstein": (n - 1) * kappa, "f0": f0},
    )


def build_product(a: ManifoldModel, b: ManifoldModel) -> ManifoldModel:
    """Riemannian product of two Einstein shrinkers with a shared ``tau``."""
    for m in (a, b):
        if not m.is_exact or m.riemann is None or m.info.get("einstein") is None:
            raise ValueError(f"{m.name}: product factors must be exact closed-form Einstein models")
    ka, kb = a.info["einstein"], b.info["einstein"]
    if abs(ka - kb) > 1e-10:
        raise ValueError(f"Einstein constants differ ({ka:g} vs {kb:g}); product is not a shrinker with one tau")
    na, nb = a.dim, b.dim
    n = na + nb

    def metric(x):
        g = jnp.zeros((n, n))
        g = g.at[:na, :na].set(a.metric(x[:na]))
        return g.at[na:, na:].set(b.metric(x[na:]))

    def riemann(x):
        rm = jnp.zeros((n,) * 4)
        rm = rm.at[:na, :na, :na, :na].set(a.riemann(x[:na]))
        return rm.at[na:, na:, na:, na:].set(b.riemann(x[na:]))

    def ambient(x):
        return jnp.concatenate([a.ambient(x[:na]), b.ambient(x[na:])])

    # factors already carry int dm = 1 with the same tau, so no shift is needed
    fa, fb = a.potential, b.potential
    amb_a = a.ambient_blocks[-1][1]
    amb_b = b.ambient_blocks[-1][1]
    return ManifoldModel(
        name=f"{a.name}x{b.name}",
        chart=CoordinateChart.concatenate(a.chart, b.chart),
        metric=metric,
        potential=lambda x: fa(x[:na]) + fb(x[na:]),
        tau=a.tau,
        curvature_source=CLOSED_FORM,
        riemann=riemann,
        soliton="exact",
        soliton_bound=1e-10,
        ambient=ambient,
        ambient_blocks=((0, amb_a), (amb_a, amb_a + amb_b)),
        blocks=((0, na), (na, n)),
        volume=a.volume * b.volume,
        metric_diag=_product_diag(a, b),
        factors=(a, b),
        constant_potential=a.constant_potential and b.constant_potential,
        info={"kind": "product", "einstein": ka, "factors": (a.name, b.name)},
    )


def _product_diag(a: ManifoldModel, b: ManifoldModel):
    if a.metric_diag is None or b.metric_diag is None:
        return None
    na = a.dim
    return lambda x: jnp.concatenate([a.metric_diag(x[:na]), b.metric_diag(x[na:])])


@dataclass
class QuadratureGrid:
    """Product quadrature realising ``int . dm`` with ``int 1 dm = 1``.

    ``dv`` holds Riemannian-volume weights, ``dm`` the normalised weighted
    measure; ``raw_mass`` is the dm-mass before renormalisation.
    """

    model: ManifoldModel
    resolution: tuple
    nodes: np.ndarray
    dv: np.ndarray
    dm: np.ndarray
    raw_mass: float
    interior: np.ndarray = field(repr=False, default=None)

    @property
    def size(self) -> int:
        return len(self.nodes)

    @property
    def interior_nodes(self) -> np.ndarray:
        return self.nodes[self.interior]

    def integrate(self, values) -> np.ndarray:
        """dm-integral of sampled values, reduction over the node axis in fixed order."""
        v = np.asarray(values)
        return np.tensordot(self.dm, v, axes=([0], [0]))


def _axis_rule(lo, hi, periodic, power, count):
    if periodic:
        h = (hi - lo) / count
        return lo + h * (np.arange(count) + 0.5), np.full(count, h)
    if power > 0:
        alpha = 0.5 * (power - 1)
        u, w = roots_jacobi(count, alpha, alpha)
        order = np.argsort(-u)  # increasing angle
        return np.arccos(u[order]), w[order]
    u, w = roots_legendre(count)
    return 0.5 * (hi - lo) * u + 0.5 * (hi + lo), 0.5 * (hi - lo) * w


def parse_resolution(res, chart: CoordinateChart) -> tuple:
    """Expand ``RxS`` (polar/interval count x periodic count) or a full
    per-axis list into one node count per axis."""
    if isinstance(res, str):
        try:
            parts = tuple(int(p) for p in res.lower().split("x"))
        except ValueError as exc:
            raise ConfigurationError(f"malformed resolution {res!r}") from exc
    elif isinstance(res, int):
        parts = (res,)
    else:
        parts = tuple(int(p) for p in res)
    n = chart.dimension
    if len(parts) == n:
        return parts
    if len(parts) == 1:
        return parts * n
    if len(parts) == 2:
        return tuple(parts[1] if chart.periodic[k] else parts[0] for k in range(n))
    raise ConfigurationError(f"resolution {res!r} does not match a {n}-dimensional chart")


def default_resolution(model: ManifoldModel, degree: int) -> tuple:
    """Smallest grid that clears the aliasing guard for ``degree``."""
    count = max(8, 2 * degree + 4)
    return tuple(count for _ in range(model.dim))


def quadrature_grid(model: ManifoldModel, resolution=None, degree: Optional[int] = None) -> QuadratureGrid:
    """Tensor-product quadrature on the chart.

    Polar axes use Gauss-Jacobi nodes in ``cos`` (no node at a pole), periodic
    axes uniform nodes, other axes Gauss-Legendre.  ``degree`` enables the
    aliasing guard ``nodes >= 2 * degree + 2`` on every axis.
    """
    chart = model.chart
    if resolution is None:
        resolution = default_resolution(model, degree or 0)
    res = parse_resolution(resolution, chart)
    if min(res) < 2:
        raise ConfigurationError("need at least two nodes per axis")
    if degree is not None and min(res) < 2 * degree + 2:
        raise AliasingError(f"resolution {res} too coarse for basis degree {degree} (need >= {2 * degree + 2} per axis)")
    rules = [_axis_rule(chart.lower[k], chart.upper[k], chart.periodic[k], chart.polar_power[k], res[k]) for k in range(chart.dimension)]
    mesh = np.meshgrid(*[r[0] for r in rules], indexing="ij")
    nodes = np.stack([m.ravel() for m in mesh], axis=1)
    wmesh = np.meshgrid(*[r[1] for r in rules], indexing="ij")
    w = np.prod(np.stack([m.ravel() for m in wmesh], axis=1), axis=1)

    @jax.jit
    @jax.vmap
    def density(x):
        g = model.metric(x)
        sq = jnp.sqrt(jnp.linalg.det(g))
        polar = jnp.prod(jnp.array([jnp.sin(x[k]) ** chart.polar_power[k] for k in range(chart.dimension)]))
        n = chart.dimension
        weight = (4 * jnp.pi * model.tau) ** (-0.5 * n) * jnp.exp(-model.potential(x))
        return sq / polar, weight

    jac, weight = (np.asarray(v) for v in density(jnp.asarray(nodes)))
    if not np.all(np.isfinite(jac)) or np.any(jac <= 0):
        raise SingularMetricError("metric degenerate at a quadrature node")
    dv = w * jac
    raw = dv * weight
    mass = float(raw.sum())
    margin = None
    if model.curvature_source == FINITE_DIFFERENCE:
        margin = 2.0 * np.asarray(model.fd_step)
    interior = chart.interior_mask(nodes, margin)
    return QuadratureGrid(model, tuple(res), nodes, dv, raw / mass, mass, interior)


def build_generic(
    metric: Callable,
    potential: Callable,
    tau: float,
    chart: CoordinateChart,
    resolution,
    name: str = "generic",
    ambient: Optional[Callable] = None,
    fd_order: int = 4,
) -> ManifoldModel:
    """Arbitrary chart metric with finite-difference curvature.

    The stencil step on each axis is the axis length divided by its node
    count.  ``potential`` is shifted by a constant so that ``int dm = 1`` on
    the resolution grid; the soliton flag is set to approximate with the
    measured residual.
    """
    res = parse_resolution(resolution, chart)
    step = chart.lengths / np.asarray(res, float)
    if np.any(step < 1e-6 * chart.lengths) or np.any(step <= 0):
        raise ConfigurationError("finite-difference step underflows the box size")
    model = ManifoldModel(
        name=name,
        chart=chart,
        metric=metric,
        potential=potential,
        tau=tau,
        curvature_source=FINITE_DIFFERENCE,
        soliton="approximate",
        soliton_bound=float("inf"),
        ambient=ambient,
        ambient_blocks=((0, 3),) if ambient is not None else (),
        fd_step=step,
        fd_order=fd_order,
        info={"kind": "generic"},
    )
    _check_spd(model, res)
    grid = quadrature_grid(model, res)
    shift = math.log(grid.raw_mass)
    base = potential
    model.potential = lambda x: base(x) + shift
    model.info["potential_shift"] = shift

    from .weighted_calculus import soliton_residual_norm

    model.soliton_residual = soliton_residual_norm(model, quadrature_grid(model, res))
    return model


def _check_spd(model: ManifoldModel, res):
    rules = [_axis_rule(model.chart.lower[k], model.chart.upper[k], model.chart.periodic[k], model.chart.polar_power[k], res[k]) for k in range(model.dim)]
    mesh = np.meshgrid(*[r[0] for r in rules], indexing="ij")
    nodes = np.stack([m.ravel() for m in mesh], axis=1)
    g = np.asarray(jax.vmap(model.metric)(jnp.asarray(nodes)))
    if not np.allclose(g, np.swapaxes(g, 1, 2), atol=1e-12):
        raise SingularMetricError("metric is not symmetric")
    w = np.linalg.eigvalsh(g)
    bad = ~(w.min(axis=1) > 1e-12 * np.maximum(1.0, np.abs(w).max(axis=1)))
    if np.any(bad):
        raise SingularMetricError(f"metric not positive-definite at node {nodes[np.argmax(bad)]}")


def ellipsoid(a: float = 1.0, b: float = 1.0, c: float = 1.2, fcoef: float = 0.3, tau: float = 0.5, resolution="96x192", fd_order: int = 4) -> ManifoldModel:
    """Ellipsoid ``x^2/a^2 + y^2/b^2 + z^2/c^2 = 1`` in polar coordinates with
    weight ``f = fcoef * cos(theta)`` (linear in the embedding coordinate)."""
    if min(a, b, c) <= 0 or tau <= 0:
        raise SingularMetricError("ellipsoid semi-axes and tau must be positive")

    def metric(x):
        th, ph = x[0], x[1]
        st, ct, sp, cp = jnp.sin(th), jnp.cos(th), jnp.sin(ph), jnp.cos(ph)
        gtt = a * a * ct * ct * cp * cp + b * b * ct * ct * sp * sp + c * c * st * st
        gtp = (b * b - a * a) * st * ct * sp * cp
        gpp = st * st * (a * a * sp * sp + b * b * cp * cp)
        return jnp.array([[gtt, gtp], [gtp, gpp]])

    chart = _hyperspherical_chart(2, 0.02)
    model = build_generic(
        metric,
        lambda x: fcoef * jnp.cos(x[0]),
        tau,
        chart,
        resolution,
        name=f"ellipsoid(a={a:g},b={b:g},c={c:g},f={fcoef:g}cos)",
        ambient=_hyperspherical_ambient(2),
        fd_order=fd_order,
    )
    model.info.update({"kind": "ellipsoid", "abc": (a, b, c), "fcoef": fcoef})
    return model


@dataclass(frozen=True)
class Refinement:
    """Curvature error of a finite-difference model under step refinement."""

    resolutions: tuple
    steps: tuple
    errors: tuple
    orders: tuple

    @property
    def observed_order(self) -> float:
        return float(min(self.orders)) if self.orders else float("nan")


def fd_refinement(builder: Callable, resolutions: Sequence, check_resolution=None) -> Refinement:
    """Sup over interior nodes of ``|Ric_fd - Ric_exact|`` for each resolution.

    ``builder(res)`` returns a finite-difference model; the reference is the
    same model with the metric differentiated exactly.  Orders come from
    consecutive pairs, ``log(e1/e2)/log(h1/h2)`` on the first axis.
    """
    from .geometry_core import JetContext, ricci_jet

    models = [builder(r) for r in resolutions]
    grid = quadrature_grid(models[0], check_resolution or resolutions[0])
    nodes = jnp.asarray(grid.interior_nodes)

    def ricci(m):
        return jax.jit(jax.vmap(lambda x: ricci_jet(m, JetContext(x), 0)[..., 0]))(nodes)

    exact = np.asarray(ricci(replace(models[0], curvature_source=CLOSED_FORM, fd_step=None)))
    errors = tuple(float(np.max(np.abs(np.asarray(ricci(m)) - exact))) for m in models)
    steps = tuple(float(m.fd_step[0]) for m in models)
    orders = tuple(math.log(errors[i] / errors[i + 1]) / math.log(steps[i] / steps[i + 1]) for i in range(len(models) - 1))
    return Refinement(tuple(str(r) for r in resolutions), steps, errors, orders)


@dataclass(frozen=True)
class ModelSpec:
    """Parsed model description: ``sphere``, ``product`` or ``generic``."""

    kind: str
    params: dict

    @classmethod
    def parse(cls, text: str) -> "ModelSpec":
        """Parse ``sphere:n=2,r=1``, ``product:n1=2,r1=1,n2=2,r2=1`` or
        ``generic:ellipsoid[,a=..,b=..,c=..,f=..,tau=..]``."""
        if ":" not in text:
            raise ValueError(f"malformed model spec {text!r}: expected KIND:PARAMS")
        kind, _, rest = text.strip().partition(":")
        kind = kind.strip().lower()
        params = {}
        items = [p.strip() for p in rest.split(",") if p.strip()]
        if kind == "generic":
            if not items or "=" in items[0]:
                raise ValueError(f"malformed model spec {text!r}: generic needs a geometry name")
            params["geometry"] = items.pop(0)
        for item in items:
            key, eq, val = item.partition("=")
            if not eq:
                raise ValueError(f"malformed model parameter {item!r}")
            try:
                params[key.strip()] = float(val)
            except ValueError as exc:
                raise ValueError(f"non-numeric value in {item!r}") from exc
        if kind == "sphere":
            _require(params, {"n"}, {"n", "r"}, text)
            if params["n"] != int(params["n"]) or params["n"] < 2:
                raise ValueError("sphere needs integer n >= 2")
        elif kind == "product":
            _require(params, {"n1", "n2"}, {"n1", "r1", "n2", "r2"}, text)
        elif kind == "generic":
            if params["geometry"] != "ellipsoid":
                raise ValueError(f"unknown generic geometry {params['geometry']!r}")
            _require(params, set(), {"geometry", "a", "b", "c", "f", "tau"}, text)
        else:
            raise ValueError(f"unknown model kind {kind!r}")
        return cls(kind, params)

    def __str__(self):
        body = ",".join(f"{k}={v:g}" if isinstance(v, float) else f"{v}" for k, v in self.params.items())
        return f"{self.kind}:{body}"


def _require(params, needed, allowed, text):
    missing = needed - set(params)
    extra = set(params) - allowed
    if missing or extra:
        raise ValueError(f"malformed model spec {text!r}: missing {sorted(missing)} unknown {sorted(extra)}")


def build_model(spec: ModelSpec, resolution=None) -> ManifoldModel:
    p = spec.params
    if spec.kind == "sphere":
        return build_round_sphere(int(p["n"]), p.get("r", 1.0))
    if spec.kind == "product":
        return build_product(
            build_round_sphere(int(p["n1"]), p.get("r1", 1.0)),
            build_round_sphere(int(p["n2"]), p.get("r2", 1.0)),
        )
    return ellipsoid(
        a=p.get("a", 1.0),
        b=p.get("b", 1.0),
        c=p.get("c", 1.2),
        fcoef=p.get("f", 0.3),
        tau=p.get("tau", 0.5),
        resolution=resolution or "96x192",
    )
