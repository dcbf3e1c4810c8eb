"""Brute-force reference values for small instances.

Independent of the production code paths: plane searches go through dense
direction/offset grids with per-direction exact one-dimensional offsets, the
flat-distance oracle uses all-pairs Lipschitz constraints, the affine oracle
scans a gradient grid, and the minimal-gradient oracle runs a generic NLP
solver on the full constraint set.  Instance sizes are capped.
"""

from __future__ import annotations

import math

import numpy as np
from scipy.optimize import linprog, minimize

from .geometry import Ball, Plane, WeightedCloud
from .coeffs import _golden_min

__all__ = [
    "oracle_beta",
    "oracle_omega",
    "oracle_alpha",
    "oracle_hajlasz",
    "OracleCapError",
]

MAX_POINTS = 30


class OracleCapError(ValueError):
    pass


def _check_cap(cloud: WeightedCloud):
    if len(cloud.points) > MAX_POINTS:
        raise OracleCapError(f"oracle instances are capped at {MAX_POINTS} points")


def _normal_directions(n: int, count: int) -> np.ndarray:
    """Deterministic hemisphere sample of unit normals."""
    if n == 2:
        th = np.pi * np.arange(count) / count
        return np.column_stack([np.cos(th), np.sin(th)])
    if n == 3:
        # Fibonacci hemisphere
        k = np.arange(count)
        z = (k + 0.5) / count
        phi = k * math.pi * (3 - math.sqrt(5))
        r = np.sqrt(1 - z**2)
        return np.column_stack([r * np.cos(phi), r * np.sin(phi), z])
    raise OracleCapError("plane oracles support ambient dimension 2 or 3 only")


def _offset_1d(proj: np.ndarray, w: np.ndarray, q) -> float:
    """Exact best offset along a fixed normal."""
    if q == 2:
        return float((w @ proj) / w.sum())
    if q == math.inf:
        return float((proj.max() + proj.min()) / 2)
    if q == 1:
        order = np.argsort(proj)
        cw = np.cumsum(w[order])
        j = int(np.searchsorted(cw, cw[-1] / 2))
        return float(proj[order][min(j, len(proj) - 1)])
    t, _ = _golden_min(lambda t: float(w @ np.abs(proj - t) ** q),
                       float(proj.min()), float(proj.max()), 80)
    return t


def oracle_beta(cloud: WeightedCloud, ball: Ball, q, *, n_dirs: int = 720,
                refine: int = 4) -> float:
    """Dense direction scan for codimension-one planes, exact offset per
    direction, with zoom rounds around the best direction."""
    _check_cap(cloud)
    if cloud.d != cloud.n - 1:
        raise OracleCapError("beta oracle needs codimension one")
    idx = cloud.indices_in_ball(ball)
    pts = cloud.points[idx]
    w = cloud.weights[idx]
    r = ball.radius

    def value(normal):
        proj = pts @ normal
        t = _offset_1d(proj, w, q)
        dist = np.abs(proj - t)
        if q == math.inf:
            return float(dist.max() / r)
        return float((((dist / r) ** q @ w) / r**cloud.d) ** (1 / q))

    dirs = _normal_directions(cloud.n, n_dirs)
    vals = np.array([value(nv) for nv in dirs])
    j = int(np.argmin(vals))
    best, best_dir = float(vals[j]), dirs[j]
    # zoom: re-sample a shrinking cap around the best direction, starting at
    # the resolution of the initial grid
    spread = math.pi / n_dirs if cloud.n == 2 else math.sqrt(2 * math.pi / n_dirs)
    rng = np.random.default_rng(0)
    for _ in range(refine + (2 if cloud.n == 3 else 0)):
        cands = []
        for _ in range(160):
            pert = best_dir + spread * rng.standard_normal(cloud.n)
            cands.append(pert / np.linalg.norm(pert))
        for nv in cands:
            v = value(nv)
            if v < best:
                best, best_dir = v, nv
        spread /= 5
    return best


def oracle_omega(cloud: WeightedCloud, f, ball: Ball, q, *,
                 n_grid: int = 81, refine: int = 6) -> float:
    """Gradient-grid scan with exact offsets, refined around the best cell."""
    _check_cap(cloud)
    f = np.asarray(f, dtype=float)
    idx = cloud.indices_in_ball(ball)
    pts = cloud.points[idx]
    w = cloud.weights[idx]
    fv = f[idx]
    r = ball.radius
    # restrict gradients to the directions the sample actually spans
    mu = pts.mean(axis=0)
    u, s, _ = np.linalg.svd(pts - mu, full_matrices=False)
    rank = int((s > 1e-10 * max(s[0], 1e-300)).sum()) if len(s) else 0
    basis = np.linalg.svd((pts - mu).T @ (pts - mu))[0][:, :rank] if rank else np.zeros((cloud.n, 0))
    span = np.ptp(fv) / max(r * 1e-6, 1e-12) if np.ptp(fv) > 0 else 1.0
    pairwise = _max_quotient(pts, fv)
    lim = 2 * max(pairwise, 1e-9)

    def value_at(coef):
        a = basis @ coef
        proj = fv - pts @ a
        b = _offset_1d(proj, w, q)
        dist = np.abs(proj - b)
        if q == math.inf:
            return float(dist.max() / r)
        return float((((dist / r) ** q @ w) / w.sum()) ** (1 / q))

    if rank == 0:
        return value_at(np.zeros(0))
    lo = -lim * np.ones(rank)
    hi = lim * np.ones(rank)
    best_val, best_coef = math.inf, np.zeros(rank)
    for _ in range(refine + 1):
        axes = [np.linspace(lo[k], hi[k], n_grid if rank == 1 else 31)
                for k in range(rank)]
        mesh = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, rank)
        for coef in mesh:
            v = value_at(coef)
            if v < best_val:
                best_val, best_coef = v, coef
        width = (hi - lo) / (n_grid if rank == 1 else 31)
        lo = best_coef - 2 * width
        hi = best_coef + 2 * width
    return best_val


def _max_quotient(pts, f):
    ii, jj = np.triu_indices(len(pts), k=1)
    dist = np.linalg.norm(pts[ii] - pts[jj], axis=1)
    ok = dist > 0
    if not np.any(ok):
        return 0.0
    return float((np.abs(f[ii] - f[jj])[ok] / dist[ok]).max())


def oracle_alpha(cloud: WeightedCloud, ball: Ball, *, n_dirs: int = 36,
                 n_offsets: int = 11, align_window: bool = False) -> float:
    """All-pairs dual-Lipschitz oracle: dense (direction, offset) grid with a
    golden density search, then joint simplex polish from the best grid seeds."""
    _check_cap(cloud)
    if cloud.d != cloud.n - 1:
        raise OracleCapError("alpha oracle needs codimension one")
    window = ball if align_window else ball.scale(2.0)
    idx = cloud.indices_in_ball(window)
    pts = cloud.points[idx]
    w = cloud.weights[idx]
    sigma_mass = float(w.sum())
    spacing = cloud.resolution

    def flat_dense(plane: Plane, c: float) -> float:
        m = int(math.floor(window.radius / spacing))
        axes = np.arange(-m, m + 1) * spacing
        mesh = np.stack(np.meshgrid(*([axes] * cloud.d), indexing="ij"),
                        axis=-1).reshape(-1, cloud.d)
        base = plane.project(window.center[None, :])[0]
        grid = base + mesh @ plane.basis.T
        grid = grid[np.linalg.norm(grid - window.center, axis=1) <= window.radius]
        union = np.concatenate([pts, grid]) if len(grid) else pts
        masses = np.concatenate([w, -c * np.full(len(grid), spacing**cloud.d)]) \
            if len(grid) else w.copy()
        bound = np.maximum(window.radius - np.linalg.norm(union - window.center, axis=1), 0.0)
        n_u = len(union)
        ii, jj = np.triu_indices(n_u, k=1)
        dd = np.linalg.norm(union[ii] - union[jj], axis=1)
        keep = dd > 1e-14
        ii, jj, dd = ii[keep], jj[keep], dd[keep]
        from scipy.sparse import coo_matrix

        m_c = len(dd)
        data = np.concatenate([np.ones(m_c), -np.ones(m_c), -np.ones(m_c), np.ones(m_c)])
        rr = np.concatenate([np.arange(m_c), np.arange(m_c),
                             np.arange(m_c, 2 * m_c), np.arange(m_c, 2 * m_c)])
        cc = np.concatenate([ii, jj, ii, jj])
        a_ub = coo_matrix((data, (rr, cc)), shape=(2 * m_c, n_u)).tocsr()
        res = linprog(-masses, A_ub=a_ub, b_ub=np.concatenate([dd, dd]),
                      bounds=list(zip(-bound, bound)), method="highs")
        if res.status != 0:
            raise RuntimeError(f"oracle LP failed: {res.message}")
        return float(-res.fun)

    centroid = (pts * w[:, None]).sum(axis=0) / w.sum()
    width = window.radius
    grid_count = max(1, int(math.floor(window.radius / spacing)))
    c_hi = 4 * sigma_mass / (grid_count * spacing**cloud.d)

    if cloud.n != 2:
        raise OracleCapError("alpha oracle implemented for ambient dimension 2")

    def plane_of(theta, off):
        normal = np.array([math.cos(theta), math.sin(theta)])
        return Plane(centroid + off * normal, _basis_orthogonal_to(normal))

    seeds = []
    for theta in np.pi * np.arange(n_dirs) / n_dirs:
        for off in np.linspace(-width / 2, width / 2, n_offsets):
            plane = plane_of(theta, off)
            _, f_opt = _golden_min(lambda c: flat_dense(plane, c), 0.0, c_hi, 8)
            f_opt = min(f_opt, flat_dense(plane, 0.0))
            seeds.append((f_opt, theta, off))
    seeds.sort(key=lambda t: t[0])
    best = seeds[0][0]
    best_x = None
    c0 = sigma_mass / (grid_count * spacing**cloud.d)
    for f0, theta0, off0 in seeds[:6]:
        res = minimize(
            lambda x: flat_dense(plane_of(x[0], x[1]), max(x[2], 0.0)),
            np.array([theta0, off0, c0]),
            method="Nelder-Mead",
            options={"maxiter": 250, "xatol": 1e-7, "fatol": 1e-12,
                     "initial_simplex": _simplex([theta0, off0, c0],
                                                 [0.1, 0.05 * width, 0.3])},
        )
        if res.fun < best:
            best = float(res.fun)
            best_x = res.x
    if best_x is not None:
        # one tighter restart around the winner
        res = minimize(
            lambda x: flat_dense(plane_of(x[0], x[1]), max(x[2], 0.0)),
            best_x, method="Nelder-Mead",
            options={"maxiter": 250, "xatol": 1e-8, "fatol": 1e-13,
                     "initial_simplex": _simplex(best_x,
                                                 [0.02, 0.01 * width, 0.05 * max(best_x[2], 1.0)])},
        )
        best = min(best, float(res.fun))
    return best / (ball.radius * sigma_mass)


def _simplex(x0, scales):
    x0 = np.asarray(x0, dtype=float)
    s = np.tile(x0, (len(x0) + 1, 1))
    for k, sc in enumerate(scales):
        s[k + 1, k] += sc
    return s


def _basis_orthogonal_to(normal: np.ndarray) -> np.ndarray:
    n = len(normal)
    full = np.concatenate([normal[:, None], np.eye(n)], axis=1)
    q, _ = np.linalg.qr(full)
    return q[:, 1:n]


def oracle_hajlasz(cloud: WeightedCloud, f, p: int) -> tuple[float, np.ndarray]:
    """Full-constraint NLP solve of the minimal pair gradient (p in {1, 2})."""
    _check_cap(cloud)
    f = np.asarray(f, dtype=float)
    pts = cloud.points
    n = len(pts)
    w = cloud.weights
    ii, jj = np.triu_indices(n, k=1)
    dist = np.linalg.norm(pts[ii] - pts[jj], axis=1)
    ok = dist > 0
    ii, jj, dist = ii[ok], jj[ok], dist[ok]
    quo = np.abs(f[ii] - f[jj]) / dist

    def objective(g):
        return float(w @ np.abs(g) ** p)

    g0 = np.full(n, quo.max(initial=0.0) / 2)
    res = minimize(
        objective, g0,
        jac=lambda g: p * w * np.sign(g) * np.abs(g) ** (p - 1),
        constraints=[{"type": "ineq", "fun": lambda g: g[ii] + g[jj] - quo}],
        bounds=[(0, None)] * n, method="SLSQP",
        options={"maxiter": 500, "ftol": 1e-14},
    )
    g = np.maximum(res.x, 0.0)
    viol = np.maximum(quo - (g[ii] + g[jj]), 0.0).max(initial=0.0)
    if viol > 1e-9:
        raise RuntimeError("oracle NLP returned an infeasible gradient")
    return objective(g) ** (1 / p), g
