"""Per-ball flatness and affine-deviation coefficients with their minimizers.

The module computes, for a weighted cloud and a ball:

* ``beta``        -- normalized L^q distance to the best d-plane,
* ``alpha``       -- normalized dual-Lipschitz (flat) distance from the sample
                     measure to the nearest multiple of a plane measure,
* ``omega``       -- normalized L^q distance of a function to the best affine map,
* ``gamma``       -- coupled infimum of omega plus gradient-size times beta,
* ``gamma_tilde`` -- same with alpha as the flatness penalty (q = 1),
* ``a_b_map``     -- the projected near-minimizer of gamma, idempotent under
                     composition with the plane projection.

All integrals are weighted sums; all infima are finite-dimensional
optimizations whose certified reference on small instances lives in
``rectlab.oracles``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import linprog, minimize
from scipy.sparse import coo_matrix
from scipy.spatial import cKDTree

from .geometry import Ball, Plane, WeightedCloud

__all__ = [
    "AffineMap",
    "BetaResult",
    "AlphaResult",
    "OmegaResult",
    "GammaResult",
    "CoefficientRecord",
    "EmptyBallError",
    "beta",
    "beta_at_plane",
    "beta_angle_check",
    "alpha",
    "beta_vs_alpha_check",
    "beta_inf_vs_beta1_check",
    "omega",
    "omega_capped",
    "gamma",
    "gamma_tilde",
    "a_b_map",
    "dorronsoro_range",
]


class EmptyBallError(ValueError):
    pass


class SolverError(RuntimeError):
    pass


@dataclass(frozen=True)
class AffineMap:
    """Scalar affine map x -> <grad, x> + offset on R^n."""

    grad: np.ndarray
    offset: float

    def __post_init__(self):
        g = np.array(np.atleast_1d(self.grad), dtype=float, copy=True)
        if not np.all(np.isfinite(g)) or not math.isfinite(self.offset):
            raise ValueError("affine map must be finite")
        g.setflags(write=False)
        object.__setattr__(self, "grad", g)

    def __call__(self, pts: np.ndarray) -> np.ndarray:
        return np.atleast_2d(pts) @ self.grad + self.offset

    @property
    def grad_norm(self) -> float:
        return float(np.linalg.norm(self.grad))

    def compose_projection(self, plane: Plane) -> "AffineMap":
        """The map x -> self(project(x)); again affine."""
        u = plane.basis
        g_t = u @ (u.T @ self.grad)
        b = self.offset + float((self.grad - g_t) @ plane.basepoint)
        return AffineMap(g_t, b)

    def scale(self, c: float) -> "AffineMap":
        return AffineMap(self.grad * c, self.offset * c)

    def shift(self, other: "AffineMap") -> "AffineMap":
        return AffineMap(self.grad + other.grad, self.offset + other.offset)

    @staticmethod
    def constant(value: float, n: int) -> "AffineMap":
        return AffineMap(np.zeros(n), float(value))


# ----------------------------------------------------------------------------
# ball extraction helpers


def _ball_data(cloud: WeightedCloud, ball: Ball):
    idx = cloud.indices_in_ball(ball)
    if len(idx) == 0:
        raise EmptyBallError("empty ball")
    return idx, cloud.points[idx], cloud.weights[idx]


def _weighted_pca_plane(pts: np.ndarray, w: np.ndarray, d: int) -> Plane:
    mu = (pts * w[:, None]).sum(axis=0) / w.sum()
    rel = pts - mu
    cov = (rel * w[:, None]).T @ rel
    vals, vecs = np.linalg.eigh(cov)
    basis = vecs[:, np.argsort(vals)[::-1][:d]]
    # deterministic sign convention
    for k in range(basis.shape[1]):
        j = int(np.argmax(np.abs(basis[:, k])))
        if basis[j, k] < 0:
            basis[:, k] = -basis[:, k]
    q, _ = np.linalg.qr(basis)
    return Plane(mu, q)


# ----------------------------------------------------------------------------
# beta


@dataclass(frozen=True)
class BetaResult:
    value: float
    plane: Plane
    degenerate: bool = False


def beta_at_plane(cloud: WeightedCloud, ball: Ball, q, plane: Plane) -> float:
    """Normalized L^q plane deviation at a fixed plane (sup form for q = inf)."""
    _, pts, w = _ball_data(cloud, ball)
    r = ball.radius
    dist = plane.distances(pts)
    if q == math.inf:
        return float(dist.max() / r)
    val = (dist / r) ** q @ w / r**cloud.d
    return float(val ** (1 / q))


def _perturbed_plane(plane: Plane, rng: np.random.Generator, scale: float) -> Plane:
    n, d = plane.basis.shape
    mat = plane.basis + scale * rng.standard_normal((n, d))
    q, _ = np.linalg.qr(mat)
    shift = scale * rng.standard_normal(n)
    return Plane(plane.basepoint + shift, q)


def _irls_plane(pts, w, d, start: Plane, q, r, max_iter=50, tol=1e-12):
    plane = start
    floor = 1e-12 * r
    if q == math.inf:
        schedule = [4.0, 8.0, 16.0, 32.0, 64.0, 128.0]
    else:
        schedule = [q]
    it = 0
    for q_eff in schedule:
        while it < max_iter:
            it += 1
            dist = np.maximum(plane.distances(pts), floor)
            top = dist.max()
            if top <= floor:
                return plane
            # normalized before powering: avoids under/overflow, same minimizer
            om = w * (dist / top) ** (q_eff - 2)
            if not np.all(np.isfinite(om)) or om.sum() <= 0:
                break
            new = _weighted_pca_plane(pts, om, d)
            drift = new.angle_to(plane) + np.linalg.norm(
                new.project(plane.basepoint) - plane.basepoint
            ) / max(r, 1e-300)
            plane = new
            if drift < tol:
                break
    return plane


def beta(cloud: WeightedCloud, ball: Ball, q, *, seed: int = 0,
         restarts: int = 8, max_iter: int = 50) -> BetaResult:
    """Best-plane L^q deviation; exact weighted PCA for q = 2, IRLS otherwise.

    The returned value never exceeds the deviation at the PCA plane.
    """
    if not (q == math.inf or q >= 1):
        raise ValueError("q must be in [1, inf]")
    idx, pts, w = _ball_data(cloud, ball)
    d = cloud.d
    pca = _weighted_pca_plane(pts, w, d)
    degenerate = _direction_gap(pts, w, d) < 1e-12
    best_plane = pca
    best_val = beta_at_plane(cloud, ball, q, pca)
    if q == 2 or len(pts) <= d:
        return BetaResult(best_val, best_plane, degenerate)
    rng = np.random.default_rng(seed)
    starts = [pca] + [_perturbed_plane(pca, rng, 0.2) for _ in range(restarts)]
    for start in starts:
        cand = _irls_plane(pts, w, d, start, q, ball.radius, max_iter=max_iter)
        val = beta_at_plane(cloud, ball, q, cand)
        if val < best_val:
            best_val, best_plane = val, cand
    # direct local polish (objective evaluations are cheap; no solver involved)
    n = cloud.n
    n_params = d * (n - d) + (n - d)
    seed_plane = best_plane

    def objective(p):
        return beta_at_plane(cloud, ball, q, _plane_from_params(seed_plane, p, ball.radius))

    from scipy.optimize import minimize as _minimize

    x0 = np.zeros(n_params)
    for scale in (0.3, 0.03):
        simplex = np.tile(x0, (n_params + 1, 1))
        for k in range(n_params):
            simplex[k + 1, k] += scale
        res = _minimize(objective, x0, method="Nelder-Mead",
                        options={"maxiter": 200 * n_params, "xatol": 1e-10,
                                 "fatol": 1e-14, "initial_simplex": simplex})
        if res.fun < best_val:
            best_val = float(res.fun)
            x0 = res.x
    if np.any(x0 != 0):
        best_plane = _plane_from_params(seed_plane, x0, ball.radius)
    return BetaResult(best_val, best_plane, degenerate)


def _direction_gap(pts, w, d):
    mu = (pts * w[:, None]).sum(axis=0) / w.sum()
    rel = pts - mu
    cov = (rel * w[:, None]).T @ rel
    vals = np.sort(np.linalg.eigvalsh(cov))[::-1]
    if d >= len(vals):
        return math.inf
    scale = max(vals[0], 1e-300)
    return (vals[d - 1] - vals[d]) / scale


def beta_angle_check(cloud: WeightedCloud, inner: Ball, outer: Ball):
    """Angle between the L^1 best planes of nested balls and the outer deviation."""
    res_in = beta(cloud, inner, 1)
    res_out = beta(cloud, outer, 1)
    angle = res_in.plane.angle_to(res_out.plane)
    return {
        "angle": angle,
        "beta_outer": res_out.value,
        "degenerate": res_in.degenerate or res_out.degenerate,
    }


# ----------------------------------------------------------------------------
# alpha (flat distance to a plane measure)


@dataclass(frozen=True)
class AlphaResult:
    value: float
    c: float
    plane: Plane
    flat_distance: float
    window: Ball


def _plane_grid(plane: Plane, center: np.ndarray, radius: float, spacing: float,
                max_points: int) -> np.ndarray:
    """Lattice sample of the plane inside the ball, cell mass spacing^d."""
    d = plane.dim
    while True:
        m = int(math.floor(radius / spacing))
        axes = np.arange(-m, m + 1) * spacing
        mesh = np.stack(np.meshgrid(*([axes] * d), indexing="ij"), axis=-1).reshape(-1, d)
        mesh = mesh[np.linalg.norm(mesh, axis=1) <= radius]
        if len(mesh) <= max_points or d == 0:
            break
        spacing *= 1.5
    base = plane.project(center[None, :])[0]
    pts = base + mesh @ plane.basis.T
    keep = np.linalg.norm(pts - center, axis=1) <= radius
    return pts[keep], spacing


class _LipschitzDual:
    """Reusable LP: max <masses, phi>, phi 1-Lipschitz on a kNN graph, |phi_i| <= b_i."""

    def __init__(self, points: np.ndarray, bounds_abs: np.ndarray, knn: int):
        n = len(points)
        self.n = n
        self.bounds = list(zip(-bounds_abs, bounds_abs))
        if n == 1:
            self.a_ub = None
            self.b_ub = None
            self.single_bound = bounds_abs[0]
            return
        k = min(knn + 1, n)
        tree = cKDTree(points)
        dist, nbh = tree.query(points, k=k)
        pairs = {}
        for i in range(n):
            for t in range(1, k):
                j = int(nbh[i, t])
                if i == j:
                    continue
                pairs[(min(i, j), max(i, j))] = max(dist[i, t], 1e-15)
        rows_i = np.array([p[0] for p in pairs], dtype=int)
        rows_j = np.array([p[1] for p in pairs], dtype=int)
        dvals = np.array(list(pairs.values()))
        m = len(dvals)
        data = np.concatenate([np.ones(m), -np.ones(m), -np.ones(m), np.ones(m)])
        rr = np.concatenate([np.arange(m), np.arange(m),
                             np.arange(m, 2 * m), np.arange(m, 2 * m)])
        cc = np.concatenate([rows_i, rows_j, rows_i, rows_j])
        self.a_ub = coo_matrix((data, (rr, cc)), shape=(2 * m, n)).tocsr()
        self.b_ub = np.concatenate([dvals, dvals])

    def solve(self, masses: np.ndarray) -> float:
        if self.n == 1:
            return float(abs(masses[0]) * self.single_bound)
        res = linprog(-masses, A_ub=self.a_ub, b_ub=self.b_ub,
                      bounds=self.bounds, method="highs")
        if res.status != 0:
            res = linprog(-masses, A_ub=self.a_ub.toarray(), b_ub=self.b_ub,
                          bounds=self.bounds, method="highs-ipm")
            if res.status != 0:
                raise SolverError(f"flat-distance LP failed: {res.message}")
        return float(-res.fun)


def _golden_min(fn, lo, hi, iters):
    invphi = (math.sqrt(5) - 1) / 2
    a, b = lo, hi
    c = b - invphi * (b - a)
    d_ = a + invphi * (b - a)
    fc, fd = fn(c), fn(d_)
    for _ in range(iters):
        if fc < fd:
            b, d_, fd = d_, c, fc
            c = b - invphi * (b - a)
            fc = fn(c)
        else:
            a, c, fc = c, d_, fd
            d_ = a + invphi * (b - a)
            fd = fn(d_)
    if fc < fd:
        return c, fc
    return d_, fd


def _plane_from_params(seed_plane: Plane, params: np.ndarray, r: float) -> Plane:
    """Local chart on affine d-planes: tangent rotation + normal offset."""
    u = seed_plane.basis
    n, d = u.shape
    comp = _orth_complement(u)
    k = n - d
    xi = params[: d * k].reshape(d, k)
    s = params[d * k:]
    mat = u + comp @ xi.T
    q, _ = np.linalg.qr(mat)
    base = seed_plane.basepoint + comp @ (s * r)
    return Plane(base, q)


def _orth_complement(u: np.ndarray) -> np.ndarray:
    n, d = u.shape
    full, _ = np.linalg.qr(np.concatenate([u, np.eye(n)], axis=1))
    return full[:, d:n]


def alpha(cloud: WeightedCloud, ball: Ball, *, knn: int = 12,
          max_union_points: int = 700, nm_max_iter: int = 25,
          golden_iters: int = 12, align_window: bool = False,
          seed: int = 0, multistart: bool | None = None) -> AlphaResult:
    """Normalized flat distance from the sample to the best plane measure.

    Evaluated over the doubled ball (a flag aligns the window with the ball
    itself).  The inner dual problem is an LP over a k-nearest-neighbor
    Lipschitz constraint graph; the outer minimization runs golden section in
    the density and a local simplex search over planes seeded at the best
    L^2 plane.
    """
    window = ball if align_window else ball.scale(2.0)
    idx, pts, w = _ball_data(cloud, window)
    sigma_mass = float(w.sum())
    r = ball.radius
    d = cloud.d
    spacing = cloud.resolution
    seed_plane = _weighted_pca_plane(pts, w, d)

    def best_c(plane: Plane, iters: int):
        """Graph and grid are built once per plane; only the objective varies with c."""
        grid, sp = _plane_grid(plane, window.center, window.radius, spacing,
                               max_union_points - len(pts))
        if len(grid) == 0:
            union, cell = pts, 0.0
        else:
            union, cell = np.concatenate([pts, grid]), sp**d
        bounds_abs = np.maximum(
            window.radius - np.linalg.norm(union - window.center, axis=1), 0.0
        )
        dual = _LipschitzDual(union, bounds_abs, knn)
        sig = np.concatenate([w, np.zeros(len(union) - len(pts))])
        nu = np.concatenate([np.zeros(len(pts)), np.full(len(union) - len(pts), cell)])

        def fd(c):
            return dual.solve(sig - c * nu)

        grid_mass = float(nu.sum())
        if grid_mass <= 0:
            return 0.0, fd(0.0)
        c_hi = 4 * sigma_mass / grid_mass
        c_opt, f_opt = _golden_min(fd, 0.0, c_hi, iters)
        f0 = fd(0.0)
        if f0 < f_opt:
            return 0.0, f0
        return c_opt, f_opt

    n, dd = cloud.n, d
    n_params = dd * (n - dd) + (n - dd)
    if multistart is None:
        multistart = len(pts) <= 60
    rng = np.random.default_rng(seed)
    seeds = [np.zeros(n_params)]
    if multistart:
        seeds += [0.3 * rng.standard_normal(n_params) for _ in range(4)]

    best = None
    for x0 in seeds:
        simplex = np.tile(x0, (n_params + 1, 1))
        for k in range(n_params):
            simplex[k + 1, k] += 0.15
        res = minimize(
            # coarse in c while the plane moves; refine at the winner below
            lambda p: best_c(_plane_from_params(seed_plane, p, r), 6)[1],
            x0, method="Nelder-Mead",
            options={"maxiter": nm_max_iter, "xatol": 1e-3, "fatol": 1e-12,
                     "initial_simplex": simplex},
        )
        plane = _plane_from_params(seed_plane, res.x, r)
        c_opt, f_opt = best_c(plane, golden_iters)
        if best is None or f_opt < best[2]:
            best = (plane, c_opt, f_opt)
    plane, c_opt, f_opt = best

    if multistart:
        # joint simplex polish over (plane chart, density); cheap when the
        # window holds few points, and that is where tight optima matter
        def joint(x):
            pl = _plane_from_params(plane, x[:-1], r)
            grid, sp = _plane_grid(pl, window.center, window.radius, spacing,
                                   max_union_points - len(pts))
            cell = sp**d if len(grid) else 0.0
            union = np.concatenate([pts, grid]) if len(grid) else pts
            bounds_abs = np.maximum(
                window.radius - np.linalg.norm(union - window.center, axis=1), 0.0)
            dual = _LipschitzDual(union, bounds_abs, knn)
            masses = np.concatenate(
                [w, -max(x[-1], 0.0) * np.full(len(union) - len(pts), cell)])
            return dual.solve(masses)

        x0 = np.concatenate([np.zeros(n_params), [c_opt]])
        simplex = np.tile(x0, (len(x0) + 1, 1))
        for k in range(n_params):
            simplex[k + 1, k] += 0.05
        simplex[-1, -1] += max(0.2 * c_opt, 0.1)
        res = minimize(joint, x0, method="Nelder-Mead",
                       options={"maxiter": 250, "xatol": 1e-8, "fatol": 1e-13,
                                "initial_simplex": simplex})
        if res.fun < f_opt:
            f_opt = float(res.fun)
            c_opt = float(max(res.x[-1], 0.0))
            plane = _plane_from_params(plane, res.x[:-1], r)

    value = f_opt / (r * sigma_mass)
    return AlphaResult(float(value), float(c_opt), plane, float(f_opt), window)


def beta_vs_alpha_check(cloud: WeightedCloud, ball: Ball):
    """L^1 plane deviation evaluated at the alpha-minimizing plane, with alpha."""
    a = alpha(cloud, ball)
    b1 = beta_at_plane(cloud, ball, 1, a.plane)
    return {"beta1_at_alpha_plane": b1, "alpha": a.value}


def beta_inf_vs_beta1_check(cloud: WeightedCloud, ball: Ball):
    """(sup deviation on the half ball)^(d+1) at the L^1 plane vs the L^1 value."""
    res = beta(cloud, ball, 1)
    half = ball.scale(0.5)
    lhs = beta_at_plane(cloud, half, math.inf, res.plane) ** (cloud.d + 1)
    rhs = beta_at_plane(cloud, ball, 1, res.plane)
    return {"beta_inf_pow": lhs, "beta1": rhs, "plane": res.plane}


# ----------------------------------------------------------------------------
# omega


@dataclass(frozen=True)
class OmegaResult:
    value: float
    map: AffineMap


def _wls_affine(pts: np.ndarray, w: np.ndarray, f: np.ndarray) -> AffineMap:
    """Weighted least-squares affine fit, ridge 1e-12 on degenerate directions."""
    mu = (pts * w[:, None]).sum(axis=0) / w.sum()
    rel = pts - mu
    g = (rel * w[:, None]).T @ rel
    ridge = 1e-12 * max(np.trace(g), 1e-300)
    g += ridge * np.eye(g.shape[0])
    rhs = (rel * w[:, None]).T @ (f - (w @ f) / w.sum())
    grad = np.linalg.solve(g, rhs)
    fbar = (w @ f) / w.sum()
    offset = fbar - float(grad @ mu)
    return AffineMap(grad, offset)


def _weighted_quantile_offset(resid: np.ndarray, w: np.ndarray, q) -> float:
    """Best constant summand for fixed gradient: mean / median / midrange."""
    if q == 2:
        return float((w @ resid) / w.sum())
    if q == math.inf:
        return float((resid.max() + resid.min()) / 2)
    if q == 1:
        order = np.argsort(resid)
        cw = np.cumsum(w[order])
        j = int(np.searchsorted(cw, cw[-1] / 2))
        return float(resid[order][min(j, len(resid) - 1)])
    lo, hi = float(resid.min()), float(resid.max())
    b, _ = _golden_min(lambda t: float(w @ np.abs(resid - t) ** q), lo, hi, 60)
    return b


def _l1_affine(pts, w, f) -> AffineMap:
    """L^1 affine regression via LP on centered coordinates."""
    n = pts.shape[1]
    mu = pts.mean(axis=0)
    x = np.column_stack([pts - mu, np.ones(len(pts))])
    m, k = x.shape
    # vars: coef (k), e (m); minimize w.e; +-(f - x coef) <= e
    c = np.concatenate([np.zeros(k), w])
    a1 = np.concatenate([x, -np.eye(m)], axis=1)
    a2 = np.concatenate([-x, -np.eye(m)], axis=1)
    res = linprog(
        c, A_ub=np.concatenate([a1, a2]), b_ub=np.concatenate([f, -f]),
        bounds=[(None, None)] * k + [(0, None)] * m, method="highs",
    )
    if res.status != 0:
        raise SolverError(f"L1 affine LP failed: {res.message}")
    coef = res.x[:k]
    return AffineMap(coef[:n], float(coef[n] - coef[:n] @ mu))


def _chebyshev_affine(pts, f) -> AffineMap:
    n = pts.shape[1]
    mu = pts.mean(axis=0)
    x = np.column_stack([pts - mu, np.ones(len(pts))])
    m, k = x.shape
    c = np.zeros(k + 1)
    c[-1] = 1.0
    ones = np.ones((m, 1))
    a1 = np.concatenate([x, -ones], axis=1)
    a2 = np.concatenate([-x, -ones], axis=1)
    res = linprog(c, A_ub=np.concatenate([a1, a2]),
                  b_ub=np.concatenate([f, -f]),
                  bounds=[(None, None)] * k + [(0, None)], method="highs")
    if res.status != 0:
        raise SolverError(f"Chebyshev affine LP failed: {res.message}")
    coef = res.x[:k]
    return AffineMap(coef[:n], float(coef[n] - coef[:n] @ mu))


def _irls_affine(pts, w, f, q, start: AffineMap, iters=50) -> AffineMap:
    a = start
    for _ in range(iters):
        resid = np.abs(f - a(pts))
        om = w * np.maximum(resid, 1e-14) ** (q - 2)
        new = _wls_affine(pts, om, f)
        if np.linalg.norm(new.grad - a.grad) + abs(new.offset - a.offset) < 1e-13:
            a = new
            break
        a = new
    return a


def omega_value(cloud: WeightedCloud, f: np.ndarray, ball: Ball, q,
                amap: AffineMap) -> float:
    """Normalized weighted-mean deviation of f from the affine map over the ball."""
    idx, pts, w = _ball_data(cloud, ball)
    r = ball.radius
    resid = np.abs(f[idx] - amap(pts)) / r
    if q == math.inf:
        return float(resid.max())
    return float(((resid**q @ w) / w.sum()) ** (1 / q))


def omega(cloud: WeightedCloud, f, ball: Ball, q,
          fixed_map: AffineMap | None = None,
          max_points: int = 1500, seed: int = 0) -> OmegaResult:
    """Best-affine L^q deviation of f over the ball.

    q = 2 is closed-form weighted least squares; q = 1 and q = inf are linear
    programs; other finite q run IRLS from the least-squares fit.  The fit is
    computed on the least-squares residual, which makes the value invariant
    under subtracting any affine map from f.  Balls holding more than
    ``max_points`` samples are fitted on a seeded mass-preserving subsample
    (the value is still reported on the full ball).
    """
    if not (q == math.inf or 1 <= q):
        raise ValueError("q must be in [1, inf]")
    f = np.asarray(f, dtype=float)
    if fixed_map is not None:
        return OmegaResult(omega_value(cloud, f, ball, q, fixed_map), fixed_map)
    idx, pts, w = _ball_data(cloud, ball)
    fb = f[idx]
    if len(idx) > max_points and q not in (2,):
        rng = np.random.default_rng(seed)
        sub = rng.choice(len(idx), size=max_points, replace=False)
        sub.sort()
        scale = w.sum() / w[sub].sum()
        pts, w, fb = pts[sub], w[sub] * scale, fb[sub]
    base = _wls_affine(pts, w, fb)
    resid = fb - base(pts)
    if q == 2:
        best = base
    elif q == 1:
        best = _l1_affine(pts, w, resid).shift(base)
    elif q == math.inf:
        best = _chebyshev_affine(pts, resid).shift(base)
    else:
        best = _irls_affine(pts, w, resid, q, AffineMap.constant(0.0, cloud.n)).shift(base)
    val = omega_value(cloud, f, ball, q, best)
    base_val = omega_value(cloud, f, ball, q, base)
    if base_val < val:
        best, val = base, base_val
    return OmegaResult(val, best)


def omega_capped(cloud: WeightedCloud, f, ball: Ball, q, cap: float) -> OmegaResult:
    """Best-affine deviation among maps with gradient norm at most ``cap``.

    Upper bound by construction: a box-constrained fit and the projection of
    the unconstrained minimizer onto the гgradient ball, whichever is better.
    """
    f = np.asarray(f, dtype=float)
    idx, pts, w = _ball_data(cloud, ball)
    fb = f[idx]
    n = cloud.n
    candidates = []
    free = omega(cloud, f, ball, q)
    if free.map.grad_norm <= cap:
        return free
    g = free.map.grad * (cap / free.map.grad_norm)
    resid = fb - pts @ g
    candidates.append(AffineMap(g, _weighted_quantile_offset(resid, w, q)))
    if q == 1:
        box = cap / math.sqrt(n)
        mu = pts.mean(axis=0)
        x = np.column_stack([pts - mu, np.ones(len(pts))])
        m, k = x.shape
        c = np.concatenate([np.zeros(k), w])
        a1 = np.concatenate([x, -np.eye(m)], axis=1)
        a2 = np.concatenate([-x, -np.eye(m)], axis=1)
        bounds = [(-box, box)] * n + [(None, None)] + [(0, None)] * m
        res = linprog(c, A_ub=np.concatenate([a1, a2]),
                      b_ub=np.concatenate([fb, -fb]), bounds=bounds, method="highs")
        if res.status == 0:
            coef = res.x[:k]
            candidates.append(AffineMap(coef[:n], float(coef[n] - coef[:n] @ mu)))
    candidates.append(AffineMap.constant(_weighted_quantile_offset(fb, w, q), n))
    vals = [omega_value(cloud, f, ball, q, a) for a in candidates]
    j = int(np.argmin(vals))
    return OmegaResult(vals[j], candidates[j])


# ----------------------------------------------------------------------------
# gamma and friends


@dataclass(frozen=True)
class GammaResult:
    value: float
    map: AffineMap
    stage: str
    flatness: float
    plane: Plane


def _pow2_scale(x: float) -> float:
    if x <= 0 or not math.isfinite(x):
        return 1.0
    return 2.0 ** round(math.log2(x))


def _function_scale(f_ball: np.ndarray, w: np.ndarray, r: float) -> float:
    fbar = (w @ f_ball) / w.sum()
    raw = float((w @ np.abs(f_ball - fbar)) / w.sum()) / r
    return _pow2_scale(raw)


def _gamma_core(cloud, f, ball, q, flatness, plane) -> GammaResult:
    idx, pts, w = _ball_data(cloud, ball)
    fb = f[idx]
    n = cloud.n

    def total(amap: AffineMap) -> float:
        return omega_value(cloud, f, ball, q, amap) + amap.grad_norm * flatness

    om = omega(cloud, f, ball, q)
    candidates = {"unconstrained": om.map}
    if plane is not None:
        candidates["projected"] = om.map.compose_projection(plane)
    candidates["constant"] = AffineMap.constant(
        _weighted_quantile_offset(fb, w, q), n
    )
    stage, best = min(
        ((name, amap) for name, amap in candidates.items()),
        key=lambda kv: (total(kv[1]), kv[1].grad_norm),
    )
    best_val = total(best)

    # shrink the gradient of the leading candidate toward zero, refitting the
    # offset at each step; trades affine fit quality against the flatness term
    lead = candidates.get("projected", om.map)
    if lead.grad_norm > 0 and flatness > 0:

        def line_val(t):
            g = lead.grad * t
            b = _weighted_quantile_offset(fb - pts @ g, w, q)
            return total(AffineMap(g, b))

        t_opt, v_opt = _golden_min(line_val, 0.0, 1.0, 40)
        if v_opt < best_val:
            g = lead.grad * t_opt
            best = AffineMap(g, _weighted_quantile_offset(fb - pts @ g, w, q))
            best_val = v_opt
            stage = "line_search"

    # coordinate descent over gradient entries and the offset
    cur = best
    improved_stage = stage
    span = max(abs(cur.grad_norm), 1.0)
    for sweep in range(100):
        changed = False
        g = cur.grad.copy()
        for k in range(n):
            lo, hi = g[k] - span, g[k] + span

            def coord_val(t, k=k):
                gg = g.copy()
                gg[k] = t
                b = _weighted_quantile_offset(fb - pts @ gg, w, q)
                return total(AffineMap(gg, b))

            t_opt, v_opt = _golden_min(coord_val, lo, hi, 30)
            if v_opt < total(cur) - 1e-15:
                g[k] = t_opt
                cur = AffineMap(g, _weighted_quantile_offset(fb - pts @ g, w, q))
                changed = True
        span *= 0.5
        if not changed and sweep >= 2:
            break
    if total(cur) < best_val - 1e-15:
        best, best_val = cur, total(cur)
        improved_stage = "coordinate_descent"
    return GammaResult(best_val, best, improved_stage, flatness, plane)


def gamma(cloud: WeightedCloud, f, ball: Ball, q, *,
          beta_result: BetaResult | None = None, **beta_kwargs) -> GammaResult:
    """Coupled deviation: inf over affine maps of fit error plus |grad| * beta.

    One-homogeneous in f by construction (computed on a normalized copy and
    rescaled back).
    """
    f = np.asarray(f, dtype=float)
    idx, pts, w = _ball_data(cloud, ball)
    if beta_result is None:
        beta_result = beta(cloud, ball, q, **beta_kwargs)
    s = _function_scale(f[idx], w, ball.radius)
    if s == 0 or np.allclose(f[idx], f[idx][0]):
        grad0 = AffineMap.constant(float(f[idx][0]), cloud.n)
        return GammaResult(0.0, grad0, "constant", beta_result.value, beta_result.plane)
    core = _gamma_core(cloud, f / s, ball, q, beta_result.value, beta_result.plane)
    return GammaResult(core.value * s, core.map.scale(s), core.stage,
                       core.flatness, core.plane)


def gamma_tilde(cloud: WeightedCloud, f, ball: Ball, *,
                alpha_result: AlphaResult | None = None, **alpha_kwargs) -> GammaResult:
    """Variant of gamma with the flat-measure distance as the flatness penalty."""
    f = np.asarray(f, dtype=float)
    idx, pts, w = _ball_data(cloud, ball)
    if alpha_result is None:
        alpha_result = alpha(cloud, ball, **alpha_kwargs)
    s = _function_scale(f[idx], w, ball.radius)
    if s == 0 or np.allclose(f[idx], f[idx][0]):
        grad0 = AffineMap.constant(float(f[idx][0]), cloud.n)
        return GammaResult(0.0, grad0, "constant", alpha_result.value, alpha_result.plane)
    core = _gamma_core(cloud, f / s, ball, 1, alpha_result.value, alpha_result.plane)
    return GammaResult(core.value * s, core.map.scale(s), core.stage,
                       core.flatness, core.plane)


def a_b_map(cloud: WeightedCloud, f, ball: Ball, q, *,
            variant: str = "beta", gamma_result: GammaResult | None = None) -> AffineMap:
    """Projected near-minimizer of gamma: compose the minimizer with the
    projection onto the flatness-minimizing plane; idempotent by construction."""
    if gamma_result is None:
        if variant == "beta":
            gamma_result = gamma(cloud, f, ball, q)
        elif variant == "alpha":
            gamma_result = gamma_tilde(cloud, f, ball)
        else:
            raise ValueError("variant must be 'beta' or 'alpha'")
    plane = gamma_result.plane
    if plane is None:
        raise ValueError("flatness plane degenerate; no projection available")
    return gamma_result.map.compose_projection(plane)


# ----------------------------------------------------------------------------
# admissible exponent range


def dorronsoro_range(d: int, p: float, q) -> bool:
    """Admissible (d, p, q) for the two-sided comparison experiments."""
    if d < 1:
        raise ValueError("d must be >= 1")
    if not (1 < p < math.inf):
        raise ValueError("p must be in (1, inf)")
    if not (q == math.inf or q >= 1):
        raise ValueError("q must be >= 1 or inf")
    if d == 1:
        return True
    if p < 2:
        p_star = math.inf if p >= d else d * p / (d - p)
        if p_star == math.inf:
            return True
        return q < p_star
    two_star = math.inf if d == 2 else 2 * d / (d - 2)
    if two_star == math.inf:
        return True
    return q < two_star


# ----------------------------------------------------------------------------
# record


@dataclass
class CoefficientRecord:
    cube_id: int
    lam: float
    q: float
    beta: float
    beta_inf: float
    alpha: float | None
    omega: float
    gamma: float
    gamma_tilde: float | None
    grad_norm: float
    plane_normal: list

    def validate(self, jensen_const: float) -> None:
        for name in ("beta", "beta_inf", "omega", "gamma"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} negative")
        if self.gamma < self.omega - 1e-9 * max(1.0, self.omega):
            raise ValueError("coupled deviation below the plain one")
        if self.q > 1 and self.beta > 0:
            pass  # beta1 <= C * beta_q is checked by the caller with its own beta1

    def to_row(self) -> dict:
        return {
            "cube_id": self.cube_id,
            "lambda": self.lam,
            "q": self.q if self.q != math.inf else "inf",
            "beta": self.beta,
            "beta_inf": self.beta_inf,
            "alpha": self.alpha,
            "omega": self.omega,
            "gamma": self.gamma,
            "gamma_tilde": self.gamma_tilde,
            "grad_norm": self.grad_norm,
            "plane_normal": self.plane_normal,
        }


def collect_record(cloud: WeightedCloud, f, ball: Ball, *, cube_id: int = -1,
                   lam: float = 1.0, q: float = 2,
                   include_alpha: bool = False) -> CoefficientRecord:
    """Evaluate every coefficient of one ball into a serializable record."""
    f = np.asarray(f, dtype=float)
    bres = beta(cloud, ball, q)
    binf = beta_at_plane(cloud, ball, math.inf, bres.plane)
    om = omega(cloud, f, ball, q)
    ga = gamma(cloud, f, ball, q, beta_result=bres)
    a_val = None
    gt_val = None
    if include_alpha:
        ares = alpha(cloud, ball, multistart=False)
        a_val = ares.value
        gt_val = gamma_tilde(cloud, f, ball, alpha_result=ares).value
    d = cloud.d
    idx = cloud.indices_in_ball(ball)
    normal_space = _orth_complement(bres.plane.basis)
    rec = CoefficientRecord(
        cube_id=cube_id, lam=lam, q=q,
        beta=bres.value, beta_inf=binf, alpha=a_val,
        omega=om.value, gamma=ga.value, gamma_tilde=gt_val,
        grad_norm=ga.map.grad_norm,
        plane_normal=[float(v) for v in normal_space[:, 0]],
    )
    jensen = (float(cloud.weights[idx].sum()) / ball.radius**d) ** (1 - 1 / q) \
        if q > 1 and q != math.inf else 1.0
    rec.validate(jensen)
    return rec
