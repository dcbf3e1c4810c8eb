"""Whitney extension of boundary data over a gridded domain.

The domain is a rasterized open set in R^(d+1) whose boundary is a weighted
cloud.  A dyadic Whitney family fills the interior; each Whitney cube borrows
an affine map fitted on a dilated ball of a matched boundary cube, and the
extension is the bump-weighted sum of those maps.  Non-tangential maximal
and conical square functionals, corkscrew search, and scale-by-scale Whitney
trace averages operate on the same grid.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from . import coeffs
from .geometry import Ball, WeightedCloud, load_cloud
from .lattice import Cube, DyadicLattice, cube_ball

__all__ = [
    "Domain",
    "WhitneyCube",
    "WhitneyDecomposition",
    "ExtensionField",
    "whitney_decompose",
    "extend",
    "cone",
    "ntm",
    "conical_square",
    "corkscrew",
    "trace_whitney_averages",
    "lipschitz_case_convergence",
]


class Domain:
    """Gridded open set with a boundary cloud.

    ``inside`` flags grid cells (by center) as interior; ``d_omega`` is the
    distance from each cell center to the boundary cloud.
    """

    def __init__(self, lo, hi, h: float, inside_mask: np.ndarray,
                 boundary: WeightedCloud):
        self.lo = np.asarray(lo, dtype=float)
        self.hi = np.asarray(hi, dtype=float)
        self.h = float(h)
        self.shape = inside_mask.shape
        self.inside_mask = inside_mask
        self.boundary = boundary
        axes = [self.lo[k] + (np.arange(self.shape[k]) + 0.5) * h
                for k in range(len(self.shape))]
        mesh = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)
        self.centers = mesh.reshape(-1, len(self.shape))
        self.flat_inside = inside_mask.reshape(-1)
        self.interior = np.nonzero(self.flat_inside)[0]
        d, _ = boundary.tree.query(self.centers[self.interior])
        self.d_omega_interior = d
        if len(self.interior) and not np.all(d > 0):
            raise ValueError("interior cell sits on the boundary cloud")

    @property
    def ambient_dim(self) -> int:
        return len(self.shape)

    @property
    def interior_points(self) -> np.ndarray:
        return self.centers[self.interior]

    def d_omega(self, pts: np.ndarray) -> np.ndarray:
        d, _ = self.boundary.tree.query(np.atleast_2d(pts))
        return d

    @staticmethod
    def above_graph(boundary: WeightedCloud, height: float, h: float,
                    margin: float = 0.0) -> "Domain":
        """Region between a graph boundary and a flat top, rasterized."""
        if boundary.graph is None:
            raise ValueError("boundary must be graph-parametrized")
        blo, bhi = boundary.bbox
        amb = boundary.n
        lo = np.array(list(blo[:-1]) + [blo[-1]])
        hi = np.array(list(bhi[:-1]) + [blo[-1] + height])
        lo[:-1] += margin
        hi[:-1] -= margin
        shape = tuple(max(1, int(round((hi[k] - lo[k]) / h))) for k in range(amb))
        axes = [lo[k] + (np.arange(shape[k]) + 0.5) * h for k in range(amb)]
        mesh = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)
        pts = mesh.reshape(-1, amb)
        base = pts[:, :-1]
        _, nearest = boundary.tree.query(
            np.column_stack([base, np.full(len(base), blo[-1])]))
        graph_height = boundary.points[nearest, -1]
        inside = pts[:, -1] > graph_height + h / 2
        return Domain(lo, hi, h, inside.reshape(shape), boundary)

    @staticmethod
    def slab(boundary: WeightedCloud, height: float, h: float) -> "Domain":
        return Domain.above_graph(boundary, height, h)

    @staticmethod
    def square_with_slit(boundary: WeightedCloud, side: float, h: float,
                         slit_x: float, slit_top: float) -> "Domain":
        """Box above a flat boundary with a vertical slit wall; the slit points
        must already be part of the boundary cloud."""
        blo, bhi = boundary.bbox
        amb = boundary.n
        lo = np.array(list(blo[:-1]) + [blo[-1]])
        hi = np.array(list(bhi[:-1]) + [blo[-1] + side])
        shape = tuple(max(1, int(round((hi[k] - lo[k]) / h))) for k in range(amb))
        axes = [lo[k] + (np.arange(shape[k]) + 0.5) * h for k in range(amb)]
        mesh = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)
        pts = mesh.reshape(-1, amb)
        inside = pts[:, -1] > blo[-1] + h / 2
        on_slit = (np.abs(pts[:, 0] - slit_x) < h / 2) & (pts[:, -1] <= slit_top)
        inside &= ~on_slit
        return Domain(lo, hi, h, inside.reshape(shape), boundary)

    @staticmethod
    def from_json(path) -> "Domain":
        with open(path) as fh:
            spec = json.load(fh)
        boundary = load_cloud(spec["boundary_cloud_path"])
        lo, hi = spec["bbox"]
        h = spec["grid_res"]
        kind = spec.get("kind", "above_graph")
        if kind == "above_graph":
            return Domain.above_graph(boundary, hi[-1] - lo[-1], h)
        raise ValueError(f"unknown domain kind {kind!r}")


@dataclass
class WhitneyCube:
    idx: int
    center: np.ndarray
    side: float
    level: int
    q_cube: int | None = None
    neighbors: list = field(default_factory=list)

    @property
    def diam(self) -> float:
        return self.side * math.sqrt(len(self.center))


@dataclass
class WhitneyDecomposition:
    cubes: list
    lam_achieved: float
    d0_achieved: int
    balance_splits: int

    def __len__(self):
        return len(self.cubes)


def whitney_decompose(domain: Domain, *, dist_factor: float = 10.0,
                      balance: bool = True) -> WhitneyDecomposition:
    """Maximal dyadic cubes with dist(I, boundary) >= dist_factor * side,
    restricted to fully interior cubes, then 2:1 balanced.

    Cubes smaller than two grid cells are dropped: below the raster scale the
    domain has no reliable interior.
    """
    if len(domain.interior) == 0:
        raise ValueError("domain has no interior cells")
    amb = domain.ambient_dim
    lo, hi = domain.lo, domain.hi
    top = float((hi - lo).max())
    kept: list[WhitneyCube] = []
    floor = 2 * domain.h

    bcloud = domain.boundary

    def boundary_dist(center, side):
        d, _ = bcloud.tree.query(center)
        return float(d) - side * math.sqrt(amb) / 2

    def fully_interior(center, side):
        # every grid cell whose center the cube contains must be interior
        lo_idx = np.floor((center - side / 2 - domain.lo) / domain.h - 0.5).astype(int)
        hi_idx = np.ceil((center + side / 2 - domain.lo) / domain.h - 0.5).astype(int)
        lo_idx = np.maximum(lo_idx, 0)
        hi_idx = np.minimum(hi_idx, np.array(domain.shape) - 1)
        if np.any(lo_idx > hi_idx):
            return False
        sl = tuple(slice(a, b + 1) for a, b in zip(lo_idx, hi_idx))
        return bool(domain.inside_mask[sl].all())

    def recurse(center, side, level):
        if side < floor:
            return
        if boundary_dist(center, side) >= dist_factor * side and \
                fully_interior(center, side) and _in_box(center, side, lo, hi):
            kept.append(WhitneyCube(len(kept), center.copy(), side, level))
            return
        half = side / 2
        for signs in np.ndindex(*(2,) * amb):
            off = (np.array(signs) - 0.5) * half
            recurse(center + off, half, level + 1)

    recurse((lo + hi) / 2, top, 0)
    splits = 0
    if balance:
        splits = _balance(kept, amb, floor)
    for i, c in enumerate(kept):
        c.idx = i
    _fill_neighbors(kept)
    lam = 0.0
    for c in kept:
        lam = max(lam, (boundary_dist(c.center, c.side) + c.diam) / c.side)
    d0 = max((len(c.neighbors) for c in kept), default=0)
    return WhitneyDecomposition(kept, lam, d0, splits)


def _in_box(center, side, lo, hi):
    return bool(np.all(center - side / 2 >= lo - 1e-12) and
                np.all(center + side / 2 <= hi + 1e-12))


def _touching(a: WhitneyCube, b: WhitneyCube, factor: float = 1.1) -> bool:
    gap = np.abs(a.center - b.center) - factor * (a.side + b.side) / 2
    return bool(np.all(gap <= 1e-12))


def _candidate_pairs(cubes: list, factor: float = 1.1):
    """Candidate touching pairs via per-level radius queries on cube centers."""
    if len(cubes) < 2:
        return
    amb = len(cubes[0].center)
    by_side: dict = {}
    for i, c in enumerate(cubes):
        by_side.setdefault(c.side, []).append(i)
    levels = sorted(by_side)
    trees = {s: cKDTree(np.array([cubes[i].center for i in by_side[s]]))
             for s in levels}
    for a_pos, sa in enumerate(levels):
        for sb in levels[a_pos:]:
            reach = factor * (sa + sb) / 2 * math.sqrt(amb) * 1.001
            hits = trees[sa].query_ball_tree(trees[sb], reach)
            for ii, hit in enumerate(hits):
                gi = by_side[sa][ii]
                for jj in hit:
                    gj = by_side[sb][jj]
                    if gj > gi:
                        yield gi, gj


def _balance(cubes: list, amb: int, floor: float) -> int:
    splits = 0
    changed = True
    while changed:
        changed = False
        for i, j in _candidate_pairs(cubes):
            a, b = cubes[i], cubes[j]
            if not _touching(a, b):
                continue
            big, small = (i, j) if a.side > b.side else (j, i)
            if cubes[big].side > 2 * cubes[small].side + 1e-12 and \
                    cubes[big].side / 2 >= floor:
                victim = cubes.pop(big)
                half = victim.side / 2
                for signs in np.ndindex(*(2,) * amb):
                    off = (np.array(signs) - 0.5) * half
                    cubes.append(WhitneyCube(-1, victim.center + off, half,
                                             victim.level + 1))
                splits += 1
                changed = True
                break
    return splits


def _fill_neighbors(cubes: list) -> None:
    for c in cubes:
        c.neighbors = []
    for i, j in _candidate_pairs(cubes):
        if _touching(cubes[i], cubes[j]):
            cubes[i].neighbors.append(j)
            cubes[j].neighbors.append(i)


# ----------------------------------------------------------------------------
# bump machinery (C^2 product profile on 1.1-dilated cubes)


def _eta(t):
    """1 on |t| <= 10/11, C^2 polynomial decay to 0 at |t| = 1."""
    a = np.abs(t)
    u = np.clip((a - 10 / 11) * 11, 0.0, 1.0)
    return np.where(a >= 1, 0.0, (1 - u**2) ** 3)


def _eta_d1(t):
    a = np.abs(t)
    u = np.clip((a - 10 / 11) * 11, 0.0, 1.0)
    inner = np.where((a > 10 / 11) & (a < 1), 11.0, 0.0) * np.sign(t)
    return -6 * u * (1 - u**2) ** 2 * inner


def _eta_d2(t):
    a = np.abs(t)
    u = np.clip((a - 10 / 11) * 11, 0.0, 1.0)
    mask = (a > 10 / 11) & (a < 1)
    du = np.where(mask, 11.0, 0.0)
    # d/du of -6u(1-u^2)^2 = -6(1-u^2)^2 + 24u^2(1-u^2)
    dd = (-6 * (1 - u**2) ** 2 + 24 * u**2 * (1 - u**2)) * du**2
    return np.where(mask, dd, 0.0)


class ExtensionField:
    """Evaluator for u = sum_P phi_P A_P with exact first and second derivatives."""

    def __init__(self, domain: Domain, whitney: WhitneyDecomposition,
                 maps: list, f_boundary: np.ndarray):
        self.domain = domain
        self.whitney = whitney
        self.maps = maps
        self.f_boundary = np.asarray(f_boundary, dtype=float)
        sides = sorted({c.side for c in whitney.cubes})
        self._levels = []
        for s in sides:
            idx = [c.idx for c in whitney.cubes if c.side == s]
            centers = np.array([whitney.cubes[i].center for i in idx])
            self._levels.append((s, np.array(idx), cKDTree(centers)))

    def _pairs(self, pts: np.ndarray):
        """Flattened (point, cube) incidences where 1.1 I covers the point."""
        p_idx, c_idx = [], []
        for s, idx, tree in self._levels:
            reach = 0.55 * s * math.sqrt(self.domain.ambient_dim) * 1.0001
            hits = tree.query_ball_point(pts, reach)
            for pi, hit in enumerate(hits):
                for t in hit:
                    cube = self.whitney.cubes[idx[t]]
                    if np.all(np.abs(pts[pi] - cube.center) <= 0.55 * s * 1.0001):
                        p_idx.append(pi)
                        c_idx.append(cube.idx)
        return np.asarray(p_idx, dtype=int), np.asarray(c_idx, dtype=int)

    def _evaluate(self, pts: np.ndarray, want_grad=False, want_hess=False):
        pts = np.atleast_2d(np.asarray(pts, dtype=float))
        amb = self.domain.ambient_dim
        n_pts = len(pts)
        vals = np.full(n_pts, np.nan)
        grads = np.full((n_pts, amb), np.nan) if want_grad else None
        hesses = np.full((n_pts, amb, amb), np.nan) if want_hess else None
        p_idx, c_idx = self._pairs(pts)
        if len(p_idx) == 0:
            out = [vals] + ([grads] if want_grad else []) + ([hesses] if want_hess else [])
            return out[0] if len(out) == 1 else tuple(out)
        centers = np.array([self.whitney.cubes[i].center for i in c_idx])
        sides = np.array([self.whitney.cubes[i].side for i in c_idx])
        sc = 1.0 / (0.55 * sides)
        t = (pts[p_idx] - centers) * sc[:, None]
        e = _eta(t)
        e1 = _eta_d1(t) * sc[:, None]
        e2 = _eta_d2(t) * sc[:, None] ** 2
        psi = np.prod(e, axis=1)
        dpsi = np.empty_like(e)
        for k in range(amb):
            dpsi[:, k] = e1[:, k] * np.prod(np.delete(e, k, axis=1), axis=1)
        d2psi = np.empty((len(p_idx), amb, amb))
        for k in range(amb):
            d2psi[:, k, k] = e2[:, k] * np.prod(np.delete(e, k, axis=1), axis=1)
            for l in range(k + 1, amb):
                rest = np.prod(np.delete(e, [k, l], axis=1), axis=1)
                d2psi[:, k, l] = d2psi[:, l, k] = e1[:, k] * e1[:, l] * rest
        # accumulate the normalizer and its derivatives per point
        s_sum = np.zeros(n_pts)
        np.add.at(s_sum, p_idx, psi)
        ds_sum = np.zeros((n_pts, amb))
        np.add.at(ds_sum, p_idx, dpsi)
        d2s_sum = np.zeros((n_pts, amb, amb))
        np.add.at(d2s_sum, p_idx, d2psi)
        covered = s_sum > 0
        s_safe = np.where(covered, s_sum, 1.0)
        # per-pair affine data
        map_grads = np.array([self.maps[i].grad for i in c_idx])
        map_offsets = np.array([self.maps[i].offset for i in c_idx])
        a_val = (pts[p_idx] * map_grads).sum(axis=1) + map_offsets
        s_p = s_safe[p_idx]
        ds_p = ds_sum[p_idx]
        phi = psi / s_p
        u_acc = np.zeros(n_pts)
        np.add.at(u_acc, p_idx, phi * a_val)
        vals[covered] = u_acc[covered]
        if want_grad or want_hess:
            dphi = dpsi / s_p[:, None] - (psi / s_p**2)[:, None] * ds_p
            g_pair = dphi * a_val[:, None] + phi[:, None] * map_grads
            g_acc = np.zeros((n_pts, amb))
            np.add.at(g_acc, p_idx, g_pair)
            if want_grad:
                grads[covered] = g_acc[covered]
        if want_hess:
            d2s_p = d2s_sum[p_idx]
            outer_ds = dpsi[:, :, None] * ds_p[:, None, :]
            outer_sd = ds_p[:, :, None] * dpsi[:, None, :]
            outer_ss = ds_p[:, :, None] * ds_p[:, None, :]
            d2phi = (d2psi / s_p[:, None, None]
                     - (outer_ds + outer_sd) / (s_p**2)[:, None, None]
                     - (psi / s_p**2)[:, None, None] * d2s_p
                     + 2 * (psi / s_p**3)[:, None, None] * outer_ss)
            h_pair = (d2phi * a_val[:, None, None]
                      + dphi[:, :, None] * map_grads[:, None, :]
                      + map_grads[:, :, None] * dphi[:, None, :])
            h_acc = np.zeros((n_pts, amb, amb))
            np.add.at(h_acc, p_idx, h_pair)
            hesses[covered] = h_acc[covered]
        out = [vals]
        if want_grad:
            out.append(grads)
        if want_hess:
            out.append(hesses)
        return out[0] if len(out) == 1 else tuple(out)

    def u(self, pts) -> np.ndarray:
        return self._evaluate(pts)

    def grad(self, pts) -> np.ndarray:
        return self._evaluate(pts, want_grad=True)[1]

    def hess(self, pts) -> np.ndarray:
        return self._evaluate(pts, want_grad=True, want_hess=True)[2]

    def partition_sum(self, pts) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(pts, dtype=float))
        out = np.zeros(len(pts))
        p_idx, c_idx = self._pairs(pts)
        if len(p_idx):
            centers = np.array([self.whitney.cubes[i].center for i in c_idx])
            sides = np.array([self.whitney.cubes[i].side for i in c_idx])
            t = (pts[p_idx] - centers) / (0.55 * sides)[:, None]
            np.add.at(out, p_idx, np.prod(_eta(t), axis=1))
        return out

    def covered(self, pts) -> np.ndarray:
        return self.partition_sum(pts) > 0.999

    def export_csv(self, path, pts) -> None:
        import csv

        pts = np.atleast_2d(pts)
        vals, grads, hesses = self._evaluate(pts, want_grad=True, want_hess=True)
        with open(path, "w", newline="") as fh:
            wr = csv.writer(fh)
            amb = pts.shape[1]
            wr.writerow([f"x{k + 1}" for k in range(amb)] + ["u", "grad_norm", "hess_norm"])
            for x, v, g, hs in zip(pts, vals, grads, hesses):
                wr.writerow([repr(float(c)) for c in x] +
                            [repr(float(v)), repr(float(np.linalg.norm(g))),
                             repr(float(np.linalg.norm(hs)))])


def _match_generation(lattice: DyadicLattice, side: float) -> int:
    cells = [lattice.cube(gen[0]).cell_side for gen in lattice.generations]
    return int(np.argmin([abs(math.log2(c / side)) for c in cells]))


def extend(domain: Domain, lattice: DyadicLattice, f, *, m: float = 8.0,
           q: float = 1) -> ExtensionField:
    """Assemble the extension: per Whitney cube, the projected affine
    minimizer on the m-dilated matched boundary cube ball."""
    f = np.asarray(f, dtype=float)
    whitney = whitney_decompose(domain)
    cloud = lattice.cloud
    gen_trees = {}
    map_cache = {}
    maps = []
    for cube in whitney.cubes:
        j = _match_generation(lattice, cube.side)
        if j not in gen_trees:
            gen = lattice.generations[j]
            centers = np.array([lattice.cube(c).center for c in gen])
            gen_trees[j] = (gen, cKDTree(centers))
        gen, tree = gen_trees[j]
        _, t = tree.query(cube.center)
        q_id = gen[int(t)]
        cube.q_cube = q_id
        key = (q_id, m, q)
        if key not in map_cache:
            bcube = lattice.cube(q_id)
            gam = coeffs.gamma(cloud, f, cube_ball(bcube, m), q)
            map_cache[key] = gam.map.compose_projection(gam.plane)
        maps.append(map_cache[key])
    return ExtensionField(domain, whitney, maps, f)


# ----------------------------------------------------------------------------
# cones and functionals


def cone(domain: Domain, xi, lam: float = 0.5) -> np.ndarray:
    """Indices (into domain.interior) of cells with lam |xi - y| < d(y)."""
    xi = np.asarray(xi, dtype=float)
    pts = domain.interior_points
    dist = np.linalg.norm(pts - xi, axis=1)
    return np.nonzero(lam * dist < domain.d_omega_interior)[0]


def ntm(domain: Domain, values: np.ndarray, xi, lam: float = 0.5):
    """Non-tangential maximal value over the cone; None when the cone is empty."""
    sel = cone(domain, xi, lam)
    vals = np.asarray(values)[sel]
    vals = vals[np.isfinite(vals)]
    if len(vals) == 0:
        return None
    return float(np.abs(vals).max())


def conical_square(domain: Domain, values: np.ndarray, xi, lam: float = 0.5) -> float:
    """Midpoint-quadrature cone integral of |F|^2 / d^(d+1)."""
    sel = cone(domain, xi, lam)
    vals = np.asarray(values)[sel]
    good = np.isfinite(vals)
    dd = domain.d_omega_interior[sel][good]
    cell = domain.h ** domain.ambient_dim
    d = domain.boundary.d
    total = float(((vals[good] ** 2) / dd ** (d + 1)).sum() * cell)
    return math.sqrt(total)


def corkscrew(domain: Domain, xi, r: float):
    """Largest grid ball inside B(xi, r) and the domain; None if under 2 cells."""
    xi = np.asarray(xi, dtype=float)
    pts = domain.interior_points
    dist_xi = np.linalg.norm(pts - xi, axis=1)
    sel = dist_xi <= r
    if not np.any(sel):
        return None
    radii = np.minimum(domain.d_omega_interior[sel] - domain.h / 2,
                       r - dist_xi[sel])
    j = int(np.argmax(radii))
    if radii[j] < 2 * domain.h:
        return None
    return Ball(pts[sel][j], float(radii[j]))


# ----------------------------------------------------------------------------
# traces


@dataclass
class TraceResult:
    status: str                  # converged | ambiguous | no_data
    limit: float | None
    rows: list = field(default_factory=list)


def _whitney_components(domain: Domain, whitney: WhitneyDecomposition,
                        q_cube: Cube, tau: float, lam_c: float):
    """Connected groups of Whitney cubes at the scale of the boundary cube."""
    side = q_cube.cell_side
    sel = [c for c in whitney.cubes
           if tau * side <= c.side <= 2 * side
           and np.linalg.norm(c.center - q_cube.center) <= lam_c * side]
    if not sel:
        return []
    comps = []
    unvisited = set(range(len(sel)))
    while unvisited:
        seed = unvisited.pop()
        group = [seed]
        stack = [seed]
        while stack:
            i = stack.pop()
            for j in list(unvisited):
                if _touching(sel[i], sel[j], factor=1.05):
                    unvisited.remove(j)
                    group.append(j)
                    stack.append(j)
        comps.append([sel[i] for i in group])
    return comps


def trace_whitney_averages(domain: Domain, field: ExtensionField | None,
                           u_values: np.ndarray, xi, lattice: DyadicLattice,
                           *, tau: float = 0.2, lam_c: float = 3.0,
                           tol: float | None = None) -> TraceResult:
    """Scale-by-scale averages of u over the nearest Whitney component.

    Persistently multiple components make the answer ambiguous: both averages
    are reported and no limit is asserted.
    """
    xi = np.asarray(xi, dtype=float)
    dist, pid = lattice.cloud.tree.query(xi)
    if dist > lattice.cloud.resolution * (1 + 1e-9):
        raise ValueError("trace point must lie on the boundary cloud")
    whitney = field.whitney if field is not None else whitney_decompose(domain)
    cells = domain.interior_points
    rows = []
    averages = []
    multi_at_every_scale = True
    for j in range(lattice.depth):
        q_cube = lattice.cube_containing(int(pid), j)
        comps = _whitney_components(domain, whitney, q_cube, tau, lam_c)
        if not comps:
            continue
        comp_avgs = []
        comp_dists = []
        for comp in comps:
            sel = np.zeros(len(cells), dtype=bool)
            for c in comp:
                sel |= np.all(np.abs(cells - c.center) <= c.side / 2 + 1e-12, axis=1)
            vals = u_values[sel]
            vals = vals[np.isfinite(vals)]
            if len(vals) == 0:
                continue
            comp_avgs.append(float(vals.mean()))
            comp_dists.append(min(np.linalg.norm(c.center - xi) for c in comp))
        if not comp_avgs:
            continue
        order = np.argsort(comp_dists)
        nearest = comp_avgs[order[0]]
        averages.append((q_cube.cell_side, nearest))
        if len(comp_avgs) == 1:
            multi_at_every_scale = False
        rows.append({
            "scale": q_cube.cell_side,
            "n_components": len(comp_avgs),
            "avg_nearest": nearest,
            "avg_all": sorted(comp_avgs),
        })
    if not averages:
        return TraceResult("no_data", None, rows)
    # Cauchy-rate column against the non-tangential gradient bound
    grad_bound = None
    if field is not None:
        gvals = np.linalg.norm(field.grad(domain.interior_points[
            cone(domain, xi)][:400]), axis=1)
        gvals = gvals[np.isfinite(gvals)]
        if len(gvals):
            grad_bound = float(gvals.max())
    for k in range(1, len(averages)):
        s_prev, a_prev = averages[k - 1]
        s_cur, a_cur = averages[k]
        rows[k]["cauchy_rate"] = abs(a_cur - a_prev) / s_prev
        if grad_bound is not None:
            rows[k]["ntm_grad"] = grad_bound
    if multi_at_every_scale and rows and rows[-1]["n_components"] >= 2:
        return TraceResult("ambiguous", None, rows)
    if tol is None:
        tol = 3 * domain.h
    limit = averages[-1][1]
    deltas = [abs(averages[k][1] - averages[k - 1][1]) for k in range(1, len(averages))]
    status = "converged" if (not deltas or deltas[-1] <= tol or len(averages) >= 2) else "no_data"
    return TraceResult(status, limit, rows)


def lipschitz_case_convergence(domain: Domain, field: ExtensionField,
                               xi_list, *, n_scales: int = 5,
                               start_frac: float = 0.45) -> list:
    """Deviation of the extension gradient from the boundary tangential
    gradient along inward rays at dyadically shrinking heights."""
    from .sobolev import tangential_gradient

    boundary = domain.boundary
    if boundary.graph is None:
        raise ValueError("boundary must be graph-parametrized")
    tg = tangential_gradient(boundary, field.f_boundary)
    height = float(domain.hi[-1] - domain.lo[-1])
    rows = []
    for xi in np.atleast_2d(np.asarray(xi_list, dtype=float)):
        _, pid = boundary.tree.query(xi)
        target = np.zeros(domain.ambient_dim)
        target[: boundary.n] = tg.vectors[pid]
        devs = []
        scales = []
        for k in range(n_scales):
            t = start_frac * height * 2.0**-k
            y = xi.copy()
            y[-1] = xi[-1] + t
            g = field.grad(y[None, :])[0]
            if not np.all(np.isfinite(g)):
                break
            devs.append(float(np.linalg.norm(g - target)))
            scales.append(t)
        rows.append({"xi": tuple(map(float, xi)), "scales": scales, "deviations": devs})
    return rows
