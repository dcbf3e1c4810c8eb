"""Stopping-time regions and the approximating Lipschitz graph they carry.

Given a root cube, the builder walks the lattice top-down and stops at a cube
as soon as one of its children shows: an accumulated squared coupled-deviation
above threshold (BSF), a best-plane angle too far from the root plane (BA), a
best-affine gradient outside the root band (BG), or a side length below the
floor (SSL).  The surviving tree carries, per cube, the projected affine
minimizer, its best plane, and cached deviations.

On top of a region the module builds the regularized distance, a Whitney
family over the root plane, a partition of unity, the graph function gluing
the per-cube planes, and the surrogate function gluing the per-cube affine
maps.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from . import coeffs
from .geometry import Ball, Plane, WeightedCloud
from .lattice import Cube, DyadicLattice, cube_ball

__all__ = [
    "StoppingParams",
    "StoppingRegion",
    "RegularizedDistance",
    "WhitneyGrid",
    "GraphApprox",
    "stopping_time",
    "regularized_distance",
    "whitney_rd",
    "build_graph",
    "graph_closeness",
    "bg_packing",
    "surrogate_flat_energy",
]


@dataclass
class StoppingParams:
    c0: float = 1.0          # squared-deviation budget factor
    delta0: float = 0.15     # angle threshold
    alpha0: float = 1.2      # gradient band, > 1
    eps0: float = 1 / 16     # side-length floor relative to the root
    eps: float = 1e-3        # deviation scale
    lam: float = 1.0         # gradient level
    m: float = 2.0           # ball dilation for per-cube data
    k_window: float = 4.0    # window factor for the plane-frame construction

    def __post_init__(self):
        if not self.alpha0 > 1:
            raise ValueError("alpha0 must exceed 1")
        if not 0 < self.eps0 < 1:
            raise ValueError("eps0 must be in (0, 1)")
        if not 0 < self.delta0 < 0.3:
            raise ValueError("delta0 must be in (0, 0.3)")
        for name in ("c0", "eps", "lam", "m", "k_window"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")

    def validate_scale_separation(self, d: int) -> None:
        cap = self.delta0 ** (d + 1) / 10
        if self.eps > cap:
            raise ValueError(
                f"eps={self.eps} too large for delta0={self.delta0}: need <= {cap:.3g}"
            )


@dataclass
class CubeData:
    a_map: coeffs.AffineMap
    plane: Plane
    grad_norm: float
    dev_sq: float       # squared coupled deviation on the m^2-dilated ball
    chain_sq: float     # running sum of dev_sq from the root


@dataclass
class StoppingRegion:
    root_id: int
    tree: set
    stop: dict                      # cube id -> set of labels
    data: dict = field(default_factory=dict)  # cube id -> CubeData
    params: StoppingParams | None = None
    lattice: DyadicLattice | None = None
    f: np.ndarray | None = None

    @property
    def cloud(self) -> WeightedCloud:
        return self.lattice.cloud

    @property
    def root(self) -> Cube:
        return self.lattice.cube(self.root_id)

    def verify_coherence(self) -> None:
        lat = self.lattice
        assert self.root_id in self.tree, "root missing from tree"
        for cid in self.tree:
            cube = lat.cube(cid)
            while cube.parent is not None and cube.id != self.root_id:
                cube = lat.cube(cube.parent)
                assert cube.id in self.tree, "tree not ancestor-closed"
                if cube.id == self.root_id:
                    break
        for cid in self.tree:
            cube = lat.cube(cid)
            if cid != self.root_id and cube.parent is not None:
                for sib in lat.cube(cube.parent).children:
                    assert sib in self.tree, "tree not sibling-closed"
        # the stop cubes partition the root's points
        covered = np.zeros(len(self.cloud.points), dtype=bool)
        for cid in self.stop:
            members = lat.cube(cid).members
            assert not covered[members].any(), "stop cubes overlap"
            covered[members] = True
        assert covered[self.root.members].all(), "stop cubes miss points"
        # per-cube thresholds hold inside the tree
        root_data = self.data[self.root_id]
        p = self.params
        for cid in self.tree:
            cd = self.data[cid]
            assert cd.plane.angle_to(root_data.plane) < p.delta0 + 1e-12
            band_lo = root_data.grad_norm / p.alpha0 - 1e-12
            band_hi = root_data.grad_norm * p.alpha0 + 1e-12
            assert band_lo <= cd.grad_norm <= band_hi

    def packing_fraction(self) -> float:
        lat = self.lattice
        total = sum(lat.measure(lat.cube(cid)) for cid in self.stop)
        return total / lat.measure(self.root)

    def stop_fraction(self, label: str) -> float:
        lat = self.lattice
        total = sum(
            lat.measure(lat.cube(cid))
            for cid, labels in self.stop.items()
            if label in labels
        )
        return total / lat.measure(self.root)

    def dump_json(self, path) -> None:
        rows = []
        for cid in sorted(self.tree):
            cube = self.lattice.cube(cid)
            rows.append({
                "id": cid,
                "j": cube.j,
                "side": cube.side,
                "stop_labels": sorted(self.stop.get(cid, [])),
                "grad_norm": self.data[cid].grad_norm,
            })
        with open(path, "w") as fh:
            json.dump(rows, fh, indent=1, sort_keys=True)


def _cube_data(lattice: DyadicLattice, cube: Cube, f: np.ndarray,
               params: StoppingParams, plane_variant: str) -> CubeData:
    cloud = lattice.cloud
    ball_m = cube_ball(cube, params.m)
    ball_m2 = cube_ball(cube, params.m**2)
    if plane_variant == "alpha":
        ares = coeffs.alpha(cloud, ball_m)
        plane = ares.plane
        gam = coeffs.gamma(cloud, f, ball_m, 1)
    else:
        gam = coeffs.gamma(cloud, f, ball_m, 1)
        plane = gam.plane
    a_map = gam.map.compose_projection(plane)
    dev = coeffs.gamma(cloud, f, ball_m2, 1)
    return CubeData(a_map, plane, a_map.grad_norm, dev.value**2, 0.0)


def stopping_time(cloud: WeightedCloud, lattice: DyadicLattice, f, root: Cube,
                  params: StoppingParams, *, plane_variant: str = "pca") -> StoppingRegion:
    """Top-down construction of the stopping region below the root cube.

    A cube without lattice children stops with the side-length label (the
    lattice floor stands in for arbitrarily small cubes).
    """
    params.validate_scale_separation(cloud.d)
    f = np.asarray(f, dtype=float)
    region = StoppingRegion(root.id, set(), {}, {}, params, lattice, f)
    budget = params.c0 * (params.eps * params.lam) ** 2

    root_data = _cube_data(lattice, root, f, params, plane_variant)
    root_data.chain_sq = root_data.dev_sq
    region.data[root.id] = root_data
    stack = [root.id]
    while stack:
        cid = stack.pop()
        cube = lattice.cube(cid)
        region.tree.add(cid)
        if not cube.children:
            region.stop[cid] = region.stop.get(cid, set()) | {"SSL"}
            continue
        labels = set()
        child_data = {}
        for ch in cube.children:
            child = lattice.cube(ch)
            cd = _cube_data(lattice, child, f, params, plane_variant)
            cd.chain_sq = region.data[cid].chain_sq + cd.dev_sq
            child_data[ch] = cd
            if cd.chain_sq >= budget:
                labels.add("BSF")
            if cd.plane.angle_to(root_data.plane) >= params.delta0:
                labels.add("BA")
            band_lo = root_data.grad_norm / params.alpha0
            band_hi = root_data.grad_norm * params.alpha0
            if not (band_lo <= cd.grad_norm <= band_hi):
                labels.add("BG")
            if child.side < params.eps0 * lattice.cube(root.id).side:
                labels.add("SSL")
        if labels:
            region.stop[cid] = labels
            continue
        for ch, cd in child_data.items():
            region.data[ch] = cd
        stack.extend(cube.children)
    return region


# ----------------------------------------------------------------------------
# regularized distance


class RegularizedDistance:
    """d(x) = min over tree cubes of (side + dist(x, cube members)); 1-Lipschitz.

    The plane-frame version D is exact: the infimum over a fiber of d is
    attained at the projected member, so D(y) = min over cubes of
    (side + dist_plane(y, projected members)).
    """

    def __init__(self, region: StoppingRegion, frame):
        self.region = region
        self.frame = frame
        lat = region.lattice
        pts = region.cloud.points
        self._trees = []
        self._sides = []
        self._ptrees = []
        origin, basis = frame
        for cid in sorted(region.tree):
            cube = lat.cube(cid)
            mem = pts[cube.members]
            self._trees.append(cKDTree(mem))
            self._sides.append(cube.side)
            proj = (mem - origin) @ basis
            self._ptrees.append(cKDTree(proj))

    def d_of(self, x: np.ndarray) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        best = np.full(len(x), math.inf)
        for tree, side in zip(self._trees, self._sides):
            dist, _ = tree.query(x)
            np.minimum(best, side + dist, out=best)
        return best

    def d_scalar(self, x) -> float:
        return float(self.d_of(np.asarray(x, dtype=float)[None, :])[0])

    def d_plane(self, y: np.ndarray) -> np.ndarray:
        y = np.atleast_2d(np.asarray(y, dtype=float))
        best = np.full(len(y), math.inf)
        for tree, side in zip(self._ptrees, self._sides):
            dist, _ = tree.query(y)
            np.minimum(best, side + dist, out=best)
        return best


def region_frame(region: StoppingRegion):
    """Orthonormal frame (origin, tangent basis, normal basis) of the root plane."""
    plane = region.data[region.root_id].plane
    root = region.root
    origin = plane.project(root.center[None, :])[0]
    u = plane.basis
    comp = coeffs._orth_complement(u)
    return origin, u, comp


def regularized_distance(region: StoppingRegion) -> RegularizedDistance:
    origin, u, _ = region_frame(region)
    return RegularizedDistance(region, (origin, u))


# ----------------------------------------------------------------------------
# Whitney cubes over the root plane


@dataclass
class WhitneyGrid:
    centers: np.ndarray        # (m, d) in frame coordinates
    sides: np.ndarray          # (m,)
    active: np.ndarray         # indices carrying a tree cube (bool mask)
    q_cube: list               # per cube: lattice cube id (root where inactive)
    neighbors: list            # list of (i, j) with overlapping 10-dilations
    window: float              # frame half-width of the construction window

    def __len__(self):
        return len(self.sides)


def whitney_rd(region: StoppingRegion, rd: RegularizedDistance) -> WhitneyGrid:
    """Maximal dyadic cubes I in the plane frame with diam(I) <= D(I)/20.

    The active index set consists of cubes that can see the window around the
    projected root through a neighbor, trimmed so the tripled cubes stay
    inside the window (the far field then reproduces the root data exactly).
    """
    p = region.params
    root = region.root
    ell = root.side
    window = p.k_window**2 * ell
    d = region.cloud.d

    kept_centers = []
    kept_sides = []

    def dist_lower(center, side):
        corners = _cube_corners(center, side, d)
        samples = np.vstack([corners, center[None, :]])
        return float(rd.d_plane(samples).min())

    def recurse(center, side):
        diam = side * math.sqrt(d)
        if diam <= dist_lower(center, side) / 20:
            kept_centers.append(center)
            kept_sides.append(side)
            return
        if side < ell * 2**-20:
            kept_centers.append(center)
            kept_sides.append(side)
            return
        half = side / 2
        for signs in np.ndindex(*(2,) * d):
            off = (np.array(signs) - 0.5) * half
            recurse(center + off, half)

    # dyadic ladder anchored at the root scale so cube sides are ell / 2^k
    top = ell * 2.0 ** math.ceil(math.log2(window / ell) - 1e-9)
    for signs in np.ndindex(*(2,) * d):
        off = (np.array(signs) - 0.5) * top
        recurse(off, top)

    centers = np.asarray(kept_centers)
    sides = np.asarray(kept_sides)
    order = np.lexsort(tuple(centers[:, k] for k in range(d)) + (sides,))
    centers, sides = centers[order], sides[order]

    # neighbor pairs: 10-dilations overlap
    neighbors = []
    m = len(sides)
    for i in range(m):
        reach_i = 5 * sides[i]
        for j in range(i + 1, m):
            gap = np.abs(centers[j] - centers[i]) - (reach_i + 5 * sides[j])
            if np.all(gap <= 1e-12):
                neighbors.append((i, j))

    u_window = 2 * p.k_window * ell
    meets_u = (np.abs(centers) - (sides / 2)[:, None] <= u_window).all(axis=1)
    meets_u &= np.linalg.norm(np.maximum(np.abs(centers) - (sides / 2)[:, None], 0), axis=1) <= u_window
    adj = {i: {i} for i in range(m)}
    for i, j in neighbors:
        adj[i].add(j)
        adj[j].add(i)
    active = np.zeros(m, dtype=bool)
    for i in range(m):
        if any(meets_u[j] for j in adj[i]):
            active[i] = True
    # trim: tripled cube must stay inside the window ball
    for i in range(m):
        if active[i]:
            if np.linalg.norm(centers[i]) + 1.5 * sides[i] * math.sqrt(d) > window:
                active[i] = False

    grid = WhitneyGrid(centers, sides, active, [region.root_id] * m, neighbors, window)
    _assign_tree_cubes(region, grid)
    return grid


def _cube_corners(center, side, d):
    offs = np.stack(np.meshgrid(*([[-0.5, 0.5]] * d), indexing="ij"), axis=-1).reshape(-1, d)
    return center + offs * side


def _assign_tree_cubes(region: StoppingRegion, grid: WhitneyGrid) -> None:
    """Pick, per active Whitney cube, a tree cube of comparable size nearby."""
    origin, u, _ = region_frame(region)
    lat = region.lattice
    tree_cubes = [lat.cube(cid) for cid in sorted(region.tree)]
    proj_centers = np.array([(c.center - origin) @ u for c in tree_cubes])
    sides = np.array([c.side for c in tree_cubes])
    for i in range(len(grid)):
        if not grid.active[i]:
            continue
        target = grid.sides[i]
        dist = np.linalg.norm(proj_centers - grid.centers[i], axis=1)
        score = dist + np.abs(np.log2(sides / target)) * target
        j = int(np.argmin(score))
        grid.q_cube[i] = tree_cubes[j].id


# ----------------------------------------------------------------------------
# partition of unity and glued maps


def _bump_profile(t: np.ndarray):
    """C^2 profile: 1 on |t| <= 1/3, polynomial decay to 0 at |t| = 1."""
    a = np.abs(t)
    u = np.clip((3 * a - 1) / 2, 0.0, 1.0)
    return np.where(a >= 1, 0.0, (1 - u**2) ** 3)


@dataclass
class GraphApprox:
    region: StoppingRegion
    grid: WhitneyGrid
    frame: tuple
    slopes: list        # per active cube: ((n-d, d) matrix, (n-d,) offset) or None
    a_maps: list        # per cube: AffineMap (root map where inactive)

    def _bumps(self, y: np.ndarray):
        """Raw bump values of every Whitney cube at the frame points y."""
        y = np.atleast_2d(y)
        vals = np.zeros((len(y), len(self.grid)))
        for i in range(len(self.grid)):
            rel = (y - self.grid.centers[i]) / (1.5 * self.grid.sides[i])
            vals[:, i] = np.prod(_bump_profile(rel), axis=1)
        return vals

    def partition(self, y: np.ndarray):
        psi = self._bumps(y)
        s = psi.sum(axis=1)
        s_safe = np.where(s > 0, s, 1.0)
        return psi / s_safe[:, None], s

    def height(self, y: np.ndarray) -> np.ndarray:
        """Graph function over the root plane, (n - d) components per point."""
        y = np.atleast_2d(y)
        phi, _ = self.partition(y)
        k = self.frame[2].shape[1]
        out = np.zeros((len(y), k))
        for i in np.nonzero(self.grid.active)[0]:
            sl = self.slopes[i]
            if sl is None:
                continue
            g, b = sl
            out += phi[:, i][:, None] * (y @ g.T + b)
        return out

    def to_ambient(self, y: np.ndarray, heights: np.ndarray | None = None) -> np.ndarray:
        origin, u, comp = self.frame
        y = np.atleast_2d(y)
        if heights is None:
            heights = self.height(y)
        return origin + y @ u.T + heights @ comp.T

    def lift(self, y: np.ndarray) -> np.ndarray:
        """Point of the approximating graph over y."""
        return self.to_ambient(y)

    def surrogate(self, y: np.ndarray) -> np.ndarray:
        """Glued scalar function: per-cube affine data composed with the
        per-cube plane lift; equals the root map outside the active window."""
        y = np.atleast_2d(y)
        phi, _ = self.partition(y)
        root_map = self.a_maps_root
        origin, u, comp = self.frame
        flat_amb = origin + y @ u.T
        out = np.zeros(len(y))
        active_mass = np.zeros(len(y))
        for i in np.nonzero(self.grid.active)[0]:
            sl = self.slopes[i]
            if sl is None:
                continue
            g, b = sl
            amb = origin + y @ u.T + (y @ g.T + b) @ comp.T
            out += phi[:, i] * self.a_maps[i](amb)
            active_mass += phi[:, i]
        out += (1.0 - active_mass) * root_map(flat_amb)
        return out

    @property
    def a_maps_root(self) -> coeffs.AffineMap:
        return self.region.data[self.region.root_id].a_map

    def dump_csv(self, path, ys) -> None:
        import csv

        ys = np.atleast_2d(ys)
        h = self.height(ys)
        with open(path, "w", newline="") as fh:
            wr = csv.writer(fh)
            d = ys.shape[1]
            wr.writerow([f"y{k + 1}" for k in range(d)] +
                        [f"h{k + 1}" for k in range(h.shape[1])])
            for row_y, row_h in zip(ys, h):
                wr.writerow([repr(float(v)) for v in row_y] +
                            [repr(float(v)) for v in row_h])


def build_graph(region: StoppingRegion, grid: WhitneyGrid) -> GraphApprox:
    """Assemble bump functions, per-cube plane slopes, and glued evaluators."""
    origin, u, comp = region_frame(region)
    lat = region.lattice
    slopes = []
    a_maps = []
    for i in range(len(grid)):
        cid = grid.q_cube[i]
        cd = region.data[cid]
        a_maps.append(cd.a_map)
        if not grid.active[i]:
            slopes.append(None)
            continue
        basis_frame_t = u.T @ cd.plane.basis     # (d, d)
        basis_frame_n = comp.T @ cd.plane.basis  # (n-d, d)
        smin = np.linalg.svd(basis_frame_t, compute_uv=False).min()
        if smin < math.cos(math.pi / 4):
            raise ValueError("tree plane tilts beyond 45 degrees from the root plane")
        g = basis_frame_n @ np.linalg.inv(basis_frame_t)
        base = cd.plane.basepoint - origin
        base_t = u.T @ base
        base_n = comp.T @ base
        b = base_n - g @ base_t
        slopes.append((g, b))
    return GraphApprox(region, grid, (origin, u, comp), slopes, a_maps)


def graph_closeness(region: StoppingRegion, graph: GraphApprox,
                    rd: RegularizedDistance) -> dict:
    """sup over root points of dist(x, graph) / d(x).

    Uses the vertical distance |x - lift(project(x))|, an upper bound for the
    true distance that vanishes exactly when the set lies on the graph.
    """
    root = region.root
    cloud = region.cloud
    origin, u, comp = graph.frame
    pts = cloud.points[root.members]
    y = (pts - origin) @ u
    vertical = (pts - origin) @ comp - graph.height(y)
    dist = np.linalg.norm(np.atleast_2d(vertical), axis=1)
    dvals = rd.d_of(pts)
    ratios = dist / np.maximum(dvals, 1e-300)
    j = int(np.argmax(ratios))
    return {
        "sup_ratio": float(ratios[j]),
        "argmax_point": tuple(map(float, pts[j])),
    }


def bg_packing(region: StoppingRegion) -> float:
    """Mass fraction of the root carried by gradient-band stop cubes."""
    return region.stop_fraction("BG")


def surrogate_flat_energy(region: StoppingRegion, graph: GraphApprox,
                          *, quad_per_axis: int = 12, seed: int = 0) -> dict:
    """Sum over Whitney cubes of (best-affine L^1 deviation of the surrogate
    on the tripled cube ball)^2 * |I|, compared against (lam*delta0)^2 |R|."""
    region_params = region.params
    d = region.cloud.d
    grid = graph.grid
    total = 0.0
    rows = []
    active_idx = np.nonzero(grid.active)[0]
    reach = {}
    for i in active_idx:
        reach[i] = np.linalg.norm(grid.centers[i]) + 1.5 * grid.sides[i] * math.sqrt(d)
    for i in range(len(grid)):
        c, s = grid.centers[i], grid.sides[i]
        r_ball = 1.5 * s * math.sqrt(d)
        # far cubes where the surrogate is exactly affine contribute zero
        if not grid.active[i]:
            near_active = any(
                np.linalg.norm(c) - r_ball <= reach[j] for j in active_idx
            )
            if not near_active:
                continue
        axes = [np.linspace(-r_ball, r_ball, quad_per_axis) for _ in range(d)]
        mesh = c + np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, d)
        mesh = mesh[np.linalg.norm(mesh - c, axis=1) <= r_ball]
        vals = graph.surrogate(mesh)
        wq = np.full(len(mesh), 1.0)
        dev = _l1_affine_deviation(mesh, wq, vals, r_ball)
        total += dev**2 * s**d
        rows.append({"center": tuple(map(float, c)), "side": float(s), "omega1": dev})
    ell = region.root.side
    bound_ref = (region_params.lam * region_params.delta0) ** 2 * ell**d
    return {"energy": total, "reference": bound_ref,
            "ratio": total / bound_ref if bound_ref > 0 else math.inf,
            "rows": rows}


def _l1_affine_deviation(pts, w, vals, r) -> float:
    base = coeffs._wls_affine(pts, w, vals)
    resid = vals - base(pts)
    candidates = [resid, resid - np.median(resid)]
    try:
        best = coeffs._l1_affine(pts, w, resid)
        candidates.append(resid - best(pts))
    except coeffs.SolverError:
        pass
    devs = [float((w @ (np.abs(rc) / r)) / w.sum()) for rc in candidates]
    return min(devs)
