"""Discrete gradients, square functions, and norm-comparison experiments.

Gradient notions on a cloud:

* feasible pair gradient -- the pointwise-maximal difference quotient, which
  always satisfies |f(x)-f(y)| <= |x-y| (g(x)+g(y));
* minimal pair gradient  -- the g of least weighted L^p norm subject to the
  same pairwise constraints (p in {1, 2}, desk-scale instances);
* tangential gradient    -- chain-rule gradient along the grid curves of a
  graph-parametrized cloud.

Square functions aggregate per-cube coupled deviations over all ancestors of
a point inside a root cube.
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linprog, minimize

from . import coeffs
from .geometry import Ball, WeightedCloud
from .lattice import Cube, DyadicLattice, cube_ball

__all__ = [
    "ScalarField",
    "GradientField",
    "hajlasz_feasible",
    "hajlasz_minimal",
    "tangential_gradient",
    "poincare_check",
    "square_function",
    "lp_norm",
    "theorem_A_ratio",
    "theorem_B_ratio",
    "counterexample_strip",
    "carleson_check",
    "cube_coefficient",
]

GRADIENT_WINDOW_FACTOR = 10.0  # window C*B(Q0) for the gradient-side norm
MINIMAL_GRADIENT_CAP = 500


@dataclass
class ScalarField:
    cloud: WeightedCloud
    values: np.ndarray
    support: np.ndarray | None = None  # indices where the field is defined

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)

    @property
    def token(self):
        return hash(self.values.tobytes())


@dataclass
class GradientField:
    cloud: WeightedCloud
    values: np.ndarray
    flavor: str
    vectors: np.ndarray | None = None

    def check_pairs(self, f: np.ndarray, *, n_samples: int = 100_000,
                    seed: int = 0) -> float:
        """Max violation of |f(x)-f(y)| - |x-y| (g(x)+g(y)) over checked pairs."""
        pts = self.cloud.points
        n = len(pts)
        if n * (n - 1) // 2 <= n_samples or n <= 300:
            ii, jj = np.triu_indices(n, k=1)
        else:
            rng = np.random.default_rng(seed)
            ii = rng.integers(0, n, n_samples)
            jj = rng.integers(0, n, n_samples)
            keep = ii != jj
            ii, jj = ii[keep], jj[keep]
        dist = np.linalg.norm(pts[ii] - pts[jj], axis=1)
        viol = np.abs(f[ii] - f[jj]) - dist * (self.values[ii] + self.values[jj])
        return float(viol.max(initial=-math.inf))


def _pair_quotients(pts: np.ndarray, f: np.ndarray):
    ii, jj = np.triu_indices(len(pts), k=1)
    dist = np.linalg.norm(pts[ii] - pts[jj], axis=1)
    zero = dist <= 0
    if np.any(zero):
        if np.any(np.abs(f[ii[zero]] - f[jj[zero]]) > 0):
            raise ValueError("coincident points with different values")
        ii, jj, dist = ii[~zero], jj[~zero], dist[~zero]
    return ii, jj, np.abs(f[ii] - f[jj]) / dist


def hajlasz_feasible(cloud: WeightedCloud, f) -> GradientField:
    """g(x) = sup_y |f(x)-f(y)| / |x-y|; a feasible pair gradient by construction."""
    f = np.asarray(f, dtype=float)
    pts = cloud.points
    n = len(pts)
    g = np.zeros(n)
    if n >= 2:
        if n <= 2000:
            ii, jj, quo = _pair_quotients(pts, f)
            np.maximum.at(g, ii, quo)
            np.maximum.at(g, jj, quo)
        else:
            # spatial pruning: beyond radius spread/g_lower no pair can win
            spread = float(f.max() - f.min())
            k = min(n, 33)
            dist, nbh = cloud.tree.query(pts, k=k)
            for i in range(n):
                d_i = dist[i, 1:]
                if np.any(d_i <= 0):
                    same = nbh[i, 1:][d_i <= 0]
                    if np.any(np.abs(f[same] - f[i]) > 0):
                        raise ValueError("coincident points with different values")
                pos = d_i > 0
                cand = np.abs(f[nbh[i, 1:][pos]] - f[i]) / d_i[pos]
                g_i = cand.max(initial=0.0)
                r_needed = spread / g_i if g_i > 0 else math.inf
                if r_needed > dist[i, -1]:
                    far = cloud.tree.query_ball_point(pts[i], min(r_needed, cloud.diameter * 1.01))
                    far = np.asarray(far)
                    far = far[far != i]
                    dd = np.linalg.norm(pts[far] - pts[i], axis=1)
                    ok = dd > 0
                    g_i = max(g_i, (np.abs(f[far[ok]] - f[i]) / dd[ok]).max(initial=0.0))
                g[i] = g_i
    return GradientField(cloud, g, "hajlasz_feasible")


def _pow2(x: float) -> float:
    if x <= 0 or not math.isfinite(x):
        return 1.0
    return 2.0 ** round(math.log2(x))


def hajlasz_minimal(cloud: WeightedCloud, f, p: int) -> GradientField:
    """Pair gradient of minimal weighted L^p norm (p in {1, 2}).

    p = 1 is an exact LP; p = 2 runs projected gradient descent with
    feasibility restoration by cyclic projection, checked against a KKT
    residual of 1e-8.
    """
    if p not in (1, 2):
        raise ValueError("p must be 1 or 2")
    f = np.asarray(f, dtype=float)
    n = len(cloud.points)
    if n > MINIMAL_GRADIENT_CAP:
        raise ValueError(f"instance too large for the minimal gradient ({n} points)")
    scale = _pow2(float(np.abs(f - f.mean()).max()))
    fs = f / scale
    ii, jj, quo = _pair_quotients(cloud.points, fs)
    w = cloud.weights
    if p == 1:
        m = len(ii)
        rows = np.concatenate([np.arange(m), np.arange(m)])
        cols = np.concatenate([ii, jj])
        from scipy.sparse import coo_matrix

        a_ub = coo_matrix((-np.ones(2 * m), (rows, cols)), shape=(m, n)).tocsr()
        res = linprog(w, A_ub=a_ub, b_ub=-quo, bounds=[(0, None)] * n, method="highs")
        if res.status != 0:
            raise coeffs.SolverError(f"minimal gradient LP failed: {res.message}")
        g = np.maximum(res.x, 0.0)
        opt = float(w @ g)
        # deterministic representative of the optimal face: least-squares point,
        # blended back toward the vertex so the norm stays at the LP optimum
        face = _minimal_quadratic(w, ii, jj, quo, n, budget=(w, opt * (1 + 1e-12)))
        face_val = float(w @ face)
        if face_val > opt * (1 + 1e-9) and face_val > opt:
            t = max(0.0, min(1.0, (opt * (1 + 1e-10) - opt) / (face_val - opt)))
            face = t * face + (1 - t) * g
        g = face
    else:
        g = _minimal_quadratic(w, ii, jj, quo, n)
    return GradientField(cloud, g * scale, "hajlasz_minimal")


def _project_feasible(g, ii, jj, quo, iters=2000, tol=1e-12, budget=None):
    """Cyclic projection onto {g >= 0, g_i + g_j >= quo_ij} (and w.g <= cap)."""
    g = np.maximum(g, 0.0)
    for _ in range(iters):
        worst = 0.0
        if budget is not None:
            w_b, cap = budget
            over = float(w_b @ g) - cap
            if over > tol:
                g = np.maximum(g - over * w_b / float(w_b @ w_b), 0.0)
                worst = over
        viol = quo - (g[ii] + g[jj])
        worst = max(worst, viol.max(initial=0.0))
        if worst <= tol:
            break
        mask = viol > tol
        # distribute each violated constraint equally; apply sequentially by
        # constraint to keep the projection exact on the touched pair
        for k in np.nonzero(mask)[0]:
            v = quo[k] - (g[ii[k]] + g[jj[k]])
            if v > tol:
                g[ii[k]] += v / 2
                g[jj[k]] += v / 2
        g = np.maximum(g, 0.0)
    return g


def _minimal_quadratic(w, ii, jj, quo, n, max_iter=4000, kkt_tol=1e-8, budget=None):
    g = _project_feasible(quo.max(initial=0.0) / 2 * np.ones(n), ii, jj, quo,
                          budget=budget)
    lr = 0.45 / max(w.max(), 1e-300)
    best = g.copy()

    def objective(x):
        return float(w @ x**2)

    best_val = objective(g)
    for it in range(max_iter):
        grad = 2 * w * g
        g = _project_feasible(g - lr * grad, ii, jj, quo, budget=budget)
        val = objective(g)
        if val < best_val - 1e-16:
            best_val, best = val, g.copy()
        if it % 50 == 49:
            lr *= 0.7
            if budget is not None or _kkt_residual(best, w, ii, jj, quo) < kkt_tol:
                if it >= 199:
                    break
    if budget is None and _kkt_residual(best, w, ii, jj, quo) >= kkt_tol:
        # slow but safe fallback on stubborn instances
        res = minimize(
            lambda x: w @ x**2, best, jac=lambda x: 2 * w * x,
            constraints=[{"type": "ineq",
                          "fun": lambda x: x[ii] + x[jj] - quo}],
            bounds=[(0, None)] * n, method="SLSQP",
            options={"maxiter": 300, "ftol": 1e-14},
        )
        cand = _project_feasible(res.x, ii, jj, quo)
        if objective(cand) < best_val:
            best = cand
        if _kkt_residual(best, w, ii, jj, quo) >= max(kkt_tol, 1e-6):
            raise coeffs.SolverError("minimal gradient QP did not converge")
    return best


def _kkt_residual(g, w, ii, jj, quo, tol=1e-10):
    """Stationarity residual: project the objective gradient onto the
    active-constraint cone and measure what is left."""
    grad = 2 * w * g
    active_pairs = np.nonzero(g[ii] + g[jj] <= quo + tol)[0]
    active_lb = g <= tol
    # multipliers via nonnegative least squares on the active set
    n = len(g)
    cols = []
    for k in active_pairs:
        col = np.zeros(n)
        col[ii[k]] = 1.0
        col[jj[k]] = 1.0
        cols.append(col)
    for i in np.nonzero(active_lb)[0]:
        col = np.zeros(n)
        col[i] = 1.0
        cols.append(col)
    if not cols:
        return float(np.linalg.norm(grad))
    a = np.stack(cols, axis=1)
    from scipy.optimize import nnls

    coef, _ = nnls(a, grad, maxiter=10 * a.shape[1])
    return float(np.linalg.norm(grad - a @ coef) / max(1.0, np.linalg.norm(grad)))


def tangential_gradient(cloud: WeightedCloud, f) -> GradientField:
    """Gradient along the sampled set for graph-parametrized clouds.

    Builds a tangent frame from central differences of the graph map along
    each grid axis, differentiates f along the same curves, and solves the
    chain rule for the in-plane gradient vector.
    """
    if cloud.graph is None:
        raise ValueError("cloud has no graph parametrization")
    gp = cloud.graph
    d = gp.base_dim
    n = cloud.n
    idx = gp.idx
    pts = cloud.points
    f = np.asarray(f, dtype=float)
    n_pts = len(pts)
    frames = np.zeros((n_pts, d, n))
    dfd = np.zeros((n_pts, d))
    h = gp.spacing
    pos = {tuple(k): idx[tuple(k)] for k in np.argwhere(idx >= 0)}
    for key, i in pos.items():
        for axis in range(d):
            up = list(key)
            dn = list(key)
            up[axis] += 1
            dn[axis] -= 1
            i_up = pos.get(tuple(up), -1)
            i_dn = pos.get(tuple(dn), -1)
            if i_up >= 0 and i_dn >= 0:
                frames[i, axis] = (pts[i_up] - pts[i_dn]) / (2 * h)
                dfd[i, axis] = (f[i_up] - f[i_dn]) / (2 * h)
            elif i_up >= 0:
                frames[i, axis] = (pts[i_up] - pts[i]) / h
                dfd[i, axis] = (f[i_up] - f[i]) / h
            elif i_dn >= 0:
                frames[i, axis] = (pts[i] - pts[i_dn]) / h
                dfd[i, axis] = (f[i] - f[i_dn]) / h
            else:
                frames[i, axis, axis] = 1.0
    vectors = np.zeros((n_pts, n))
    for i in range(n_pts):
        t = frames[i]  # (d, n) rows span the tangent
        q, _ = np.linalg.qr(t.T)  # orthonormal tangent frame (n, d)
        gram = t @ q  # <t_k, q_m>
        try:
            a = np.linalg.solve(gram, dfd[i])
        except np.linalg.LinAlgError:
            a, *_ = np.linalg.lstsq(gram, dfd[i], rcond=None)
        vectors[i] = q @ a
    return GradientField(cloud, np.linalg.norm(vectors, axis=1),
                         "tangential_norm", vectors=vectors)


# ----------------------------------------------------------------------------
# Poincare sweep


@dataclass
class PoincareReport:
    worst_ratio: float
    rows: list = field(default_factory=list)


def poincare_check(cloud: WeightedCloud, f, grad: GradientField, p_prime: float,
                   *, centers=None, radii=None, max_centers: int = 40) -> PoincareReport:
    """Sweep of (mean oscillation) / (2 r * mean gradient) over balls."""
    f = np.asarray(f, dtype=float)
    if centers is None:
        step = max(1, len(cloud.points) // max_centers)
        centers = cloud.points[::step]
    if radii is None:
        lo, hi = cloud.bbox
        top = float((hi - lo).max()) / 2
        radii = [top, top / 2, top / 4]
    rows = []
    worst = 0.0
    for r in radii:
        for c in centers:
            idx = cloud.indices_in_ball(Ball(c, r))
            if len(idx) == 0:
                continue
            w = cloud.weights[idx]
            fb = (w @ f[idx]) / w.sum()
            osc = ((w @ np.abs(f[idx] - fb) ** p_prime) / w.sum()) ** (1 / p_prime)
            gav = ((w @ grad.values[idx] ** p_prime) / w.sum()) ** (1 / p_prime)
            scale = max(1.0, float(np.abs(f[idx]).max()))
            if osc <= 1e-13 * scale:
                ratio = 0.0
            elif gav == 0:
                ratio = math.inf
            else:
                ratio = osc / (2 * r * gav)
            rows.append({"center": tuple(map(float, c)), "r": float(r), "ratio": ratio})
            worst = max(worst, ratio)
    return PoincareReport(worst, rows)


# ----------------------------------------------------------------------------
# square functions


def _worker_count() -> int:
    try:
        return max(1, int(os.environ.get("RECTLAB_WORKERS", "1")))
    except ValueError:
        return 1


def cube_coefficient(lattice: DyadicLattice, cube: Cube, f, q, variant: str,
                     lam: float, f_token=None, **kwargs) -> float:
    """Coefficient of one cube ball, cached on the lattice."""
    key = (cube.id, q, variant, lam, f_token)
    cache = lattice.coeff_cache
    if key in cache:
        return cache[key]
    cloud = lattice.cloud
    ball = cube_ball(cube, lam)
    fv = np.asarray(f, dtype=float)
    idx = cloud.indices_in_ball(ball)
    if variant in ("gamma", "omega", "omega_lip") and len(idx) and np.ptp(fv[idx]) < 1e-15:
        val = 0.0  # constant data: best affine map is that constant
    elif variant == "gamma":
        val = coeffs.gamma(cloud, fv, ball, q).value
    elif variant == "gamma_tilde":
        val = coeffs.gamma_tilde(cloud, fv, ball, **kwargs).value
    elif variant == "omega":
        val = coeffs.omega(cloud, fv, ball, q).value
    elif variant == "omega_lip":
        val = coeffs.omega_capped(cloud, fv, ball, q, kwargs["cap"]).value
    elif variant == "beta":
        val = coeffs.beta(cloud, ball, q).value
    elif variant == "alpha":
        val = coeffs.alpha(cloud, ball).value
    else:
        raise ValueError(f"unknown variant {variant!r}")
    cache[key] = val
    return val


def square_function(cloud: WeightedCloud, lattice: DyadicLattice, f, q,
                    q0: Cube | None = None, variant: str = "gamma",
                    lam: float = 1.0) -> ScalarField:
    """Per-point sqrt of the sum of squared cube coefficients along the
    ancestor chain inside the root cube q0."""
    if q0 is None:
        q0 = max(lattice.roots, key=lambda c: c.member_count)
    fv = np.asarray(f, dtype=float)
    token = hash(fv.tobytes())
    cubes = list(lattice.subtree(q0.id))
    workers = _worker_count()

    def coef(c):
        return cube_coefficient(lattice, c, fv, q, variant, lam, f_token=token)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as ex:
            vals = list(ex.map(coef, cubes))
        coeff_of = {c.id: v for c, v in zip(cubes, vals)}
    else:
        coeff_of = {c.id: coef(c) for c in cubes}

    acc = np.zeros(len(cloud.points))
    stack = [(q0.id, 0.0)]
    while stack:
        cid, above = stack.pop()
        cube = lattice.cube(cid)
        here = above + coeff_of[cid] ** 2
        if cube.children:
            stack.extend((ch, here) for ch in cube.children)
        else:
            acc[cube.members] = here
    # interior cubes contribute to all their descendants' points; the leaf
    # loop above already accumulated the full chain
    vals = np.full(len(cloud.points), np.nan)
    vals[q0.members] = np.sqrt(acc[q0.members])
    return ScalarField(cloud, vals, support=q0.members)


def lp_norm(values, weights, p) -> float:
    values = np.asarray(values, dtype=float)
    weights = np.asarray(weights, dtype=float)
    if p == math.inf:
        return float(np.abs(values).max(initial=0.0))
    return float((weights @ np.abs(values) ** p) ** (1 / p))


# ----------------------------------------------------------------------------
# comparison experiments


class RangeError(ValueError):
    pass


def _gradient_norm_window(cloud, q0: Cube, p, grad: GradientField,
                          window_factor: float) -> float:
    ball = Ball(q0.center, window_factor * q0.side)
    idx = cloud.indices_in_ball(ball)
    return lp_norm(grad.values[idx], cloud.weights[idx], p)


def theorem_A_ratio(cloud: WeightedCloud, lattice: DyadicLattice, f, p, q,
                    q0: Cube | None = None, *, variant: str = "gamma",
                    window_factor: float = GRADIENT_WINDOW_FACTOR,
                    window_sensitivity: bool = False) -> dict:
    """Square-function norm over the root against the pair-gradient norm."""
    if not coeffs.dorronsoro_range(cloud.d, p, q):
        raise RangeError(f"(d={cloud.d}, p={p}, q={q}) outside the admissible range")
    fv = np.asarray(f, dtype=float)
    if q0 is None:
        q0 = max(lattice.roots, key=lambda c: c.member_count)
    if len(cloud.points) <= MINIMAL_GRADIENT_CAP:
        grad = hajlasz_minimal(cloud, fv, p if p in (1, 2) else 2)
    else:
        grad = hajlasz_feasible(cloud, fv)
    field = square_function(cloud, lattice, fv, q, q0, variant=variant)
    num = lp_norm(field.values[field.support], cloud.weights[field.support], p)
    den = _gradient_norm_window(cloud, q0, p, grad, window_factor)
    report = {
        "experiment": "theorem_a",
        "p": p, "q": q if q != math.inf else "inf",
        "variant": variant,
        "numerator": num,
        "denominator": den,
        "gradient_flavor": grad.flavor,
        "status": "ok" if den > 0 else ("degenerate" if num == 0 else "unbounded"),
        "ratio": num / den if den > 0 else (0.0 if num == 0 else math.inf),
    }
    if window_sensitivity:
        report["window_sensitivity"] = {
            str(c): _gradient_norm_window(cloud, q0, p, grad, c)
            for c in (window_factor / 2, window_factor, window_factor * 2)
        }
    return report


def theorem_B_ratio(cloud: WeightedCloud, lattice: DyadicLattice, f, p, q,
                    *, variant: str = "gamma") -> dict:
    """Tangential-gradient norm against the square-function norm."""
    if cloud.graph is None:
        raise ValueError("tangential gradient needs a graph-parametrized cloud")
    fv = np.asarray(f, dtype=float)
    tg = tangential_gradient(cloud, fv)
    num = lp_norm(tg.values, cloud.weights, p)
    den_sq = np.zeros(len(cloud.points))
    total_sup = np.zeros(len(cloud.points), dtype=bool)
    for root in lattice.roots:
        fld = square_function(cloud, lattice, fv, q, root, variant=variant)
        den_sq[fld.support] = fld.values[fld.support] ** 2
        total_sup[fld.support] = True
    den = lp_norm(np.sqrt(den_sq[total_sup]), cloud.weights[total_sup], p)
    status = "ok"
    if num == 0 and den == 0:
        status = "degenerate"
    elif den == 0:
        status = "unbounded"
    return {
        "experiment": "theorem_b",
        "p": p, "q": q if q != math.inf else "inf",
        "variant": variant,
        "numerator": num,
        "denominator": den,
        "status": status,
        "ratio": num / den if den > 0 else (0.0 if num == 0 else math.inf),
    }


def counterexample_strip(eps_list, p: float = 2.0, *,
                         max_centers_per_scale: int = 300) -> dict:
    """Thin-strip family: plain affine-deviation energy against the squared
    tangential-gradient norm, per strip width.

    The energy is the dyadic-scale sum of point-centered deviations,
    sum over scales r of sum_x w(x) * omega1(B(x, r))^2, with radii running
    from the diameter down to twice the sample resolution.  Balls that see
    constant data contribute nothing and are skipped; the per-scale sum over
    the contributing band is estimated on a deterministic stride subsample
    with mass rescaling.
    """
    from .coeffs import omega as omega_coeff
    from .geometry import Ball, gen_two_squares_strip

    rows = []
    for eps in sorted(eps_list, reverse=True):
        cloud, f = gen_two_squares_strip(eps, eps / 4)
        res = cloud.resolution
        diam = cloud.diameter
        r = diam / 2
        num = 0.0
        per_scale = []
        while r >= 2 * res:
            # only balls reaching the strip region can see nonconstant data
            band = np.abs(cloud.points[:, 0]) <= r + eps
            idx_band = np.nonzero(band)[0]
            if len(idx_band):
                stride = max(1, len(idx_band) // max_centers_per_scale)
                sub = idx_band[::stride]
                w_scale = cloud.weights[idx_band].sum() / cloud.weights[sub].sum()
                total = 0.0
                for i in sub:
                    ball = Ball(cloud.points[i], r)
                    bidx = cloud.indices_in_ball(ball)
                    if np.ptp(f[bidx]) < 1e-15:
                        continue
                    om = omega_coeff(cloud, f, ball, 1, max_points=400).value
                    total += cloud.weights[i] * om**2
                contrib = total * w_scale
                num += contrib
                per_scale.append({"r": r, "contribution": contrib})
            r /= 2
        tg = tangential_gradient(cloud, f)
        den = lp_norm(tg.values, cloud.weights, p) ** p
        rows.append({"eps": eps, "energy": num, "grad_norm_p": den,
                     "ratio": num / den if den > 0 else math.inf,
                     "per_scale": per_scale})
    ratios = [r["ratio"] for r in rows]
    return {
        "rows": rows,
        "strictly_increasing": all(b > a for a, b in zip(ratios, ratios[1:])),
        "final_ratio": ratios[-1],
    }


def carleson_check(cloud: WeightedCloud, lattice: DyadicLattice, f, kind: str,
                   *, q=None, lam: float = 1.0) -> dict:
    """sup over root cubes R of sum_{Q in R} coeff(B_Q)^2 l(Q)^d / l(R)^d."""
    d = cloud.d
    kwargs = {}
    if kind == "beta":
        variant, qq = "beta", (2 if q is None else q)
        token = None
    elif kind == "alpha":
        variant, qq = "alpha", 1
        token = None
    elif kind == "omega_lip":
        if f is None:
            raise ValueError("omega_lip needs function values")
        fv = np.asarray(f, dtype=float)
        lip = hajlasz_feasible(cloud, fv).values.max()
        variant, qq = "omega_lip", (1 if q is None else q)
        kwargs["cap"] = 2 * lip
        token = hash(fv.tobytes())
    else:
        raise ValueError(f"unknown kind {kind!r}")
    fv = None if f is None else np.asarray(f, dtype=float)

    vals = {}
    for cube in lattice.cubes:
        vals[cube.id] = cube_coefficient(lattice, cube, fv, qq, variant, lam,
                                         f_token=token, **kwargs)
    # bottom-up subtree sums of coeff^2 l(Q)^d
    subtotal = {}
    for gen in reversed(lattice.generations):
        for cid in gen:
            cube = lattice.cube(cid)
            s = vals[cid] ** 2 * cube.side**d
            s += sum(subtotal[ch] for ch in cube.children)
            subtotal[cid] = s
    table = []
    sup = 0.0
    sup_root = None
    for cube in lattice.cubes:
        ratio = subtotal[cube.id] / cube.side**d
        table.append({"cube_id": cube.id, "j": cube.j, "carleson_ratio": ratio})
        if ratio > sup:
            sup, sup_root = ratio, cube.id
    return {"kind": kind, "sup": sup, "sup_root": sup_root, "table": table}
