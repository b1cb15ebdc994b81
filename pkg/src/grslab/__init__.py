"""Weighted operators, identities and linear-stability checks on gradient Ricci shrinkers."""

import jax

jax.config.update("jax_enable_x64", True)

__version__ = "0.1.0"

from .geometry_core import (  # noqa: E402
    CoordinateChart,
    ManifoldModel,
    TensorField,
    christoffel,
    covariant_derivative,
    curvature,
    hessian_and_lie,
    ricci_identity_residual,
)
from .model_manifolds import (  # noqa: E402
    ModelSpec,
    build_generic,
    build_model,
    build_product,
    build_round_sphere,
    ellipsoid,
    quadrature_grid,
)

__all__ = [
    "CoordinateChart",
    "ManifoldModel",
    "ModelSpec",
    "TensorField",
    "build_generic",
    "build_model",
    "build_product",
    "build_round_sphere",
    "christoffel",
    "covariant_derivative",
    "curvature",
    "ellipsoid",
    "hessian_and_lie",
    "quadrature_grid",
    "ricci_identity_residual",
]
