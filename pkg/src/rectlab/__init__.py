"""Numerical laboratory for multiscale flatness analysis on weighted point clouds.

Modules:
    geometry   -- clouds, generators, balls, planes, regularity diagnostics
    lattice    -- nested partition trees (dyadic cube systems) on a cloud
    coeffs     -- per-ball flatness and affine-deviation coefficients
    sobolev    -- discrete gradients, square functions, norm-comparison runs
    corona     -- stopping-time regions and approximating Lipschitz graphs
    extension  -- Whitney extension of boundary data over a gridded domain
    harness    -- experiment configs, report generation, CLI
    oracles    -- brute-force reference implementations for small instances
"""

__version__ = "0.1.0"
