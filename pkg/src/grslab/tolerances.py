"""Single table of default tolerances; the CLI ``tol.*`` keys override it."""

TOLERANCES = {
    # pointwise identity residuals
    "closed_form": 1e-8,
    "finite_difference": 1e-4,
    # soliton equation on exact models
    "soliton_exact": 1e-8,
    # quadrature normalisation and integral identities
    "mass": 1e-9,
    # Galerkin / spectral
    "gram_drop": 1e-10,
    "symmetry": 1e-8,
    "eigen_match": 1e-6,
    "cluster": 1e-6,
    "spectral_zero": 1e-6,
    # stability criteria
    "kernel_N": 1e-6,
    "nu2": 1e-6,
    "n_relation": 1e-5,
    "upsilon": 1e-6,
    # finite-difference convergence
    "fd_order": 1.8,
}
