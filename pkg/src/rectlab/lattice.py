"""Nested partition tree ("dyadic cubes") over a weighted cloud.

Cubes are ambient dyadic grid cells intersected with the cloud; small stranded
fragments get reassigned to the nearest sibling so every kept cube carries
mass comparable to its scale.  Partition, nesting, and diameter properties are
guaranteed; the small-boundary behaviour is only reported.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from .geometry import Ball, WeightedCloud

__all__ = ["Cube", "DyadicLattice", "build_lattice", "cube_ball", "small_boundary_report"]


@dataclass
class Cube:
    id: int
    j: int
    center: np.ndarray
    side: float          # scale length l(Q); members fit in a ball of this radius
    cell_side: float     # ambient grid cell side at this generation
    members: np.ndarray
    parent: int | None
    children: list = field(default_factory=list)

    @property
    def member_count(self) -> int:
        return len(self.members)


class DyadicLattice:
    def __init__(self, cloud: WeightedCloud, cubes: list[Cube],
                 generations: list[list[int]], point_to_cube: list[np.ndarray],
                 *, inner_ball_factor: float = 0.2):
        self.cloud = cloud
        self.cubes = cubes
        self.generations = generations
        self.point_to_cube = point_to_cube
        self.inner_ball_factor = inner_ball_factor
        self.coeff_cache: dict = {}

    def cube(self, cid: int) -> Cube:
        return self.cubes[cid]

    @property
    def roots(self) -> list[Cube]:
        return [self.cubes[cid] for cid in self.generations[0]]

    @property
    def depth(self) -> int:
        return len(self.generations)

    def subtree(self, cid: int):
        stack = [cid]
        while stack:
            c = stack.pop()
            yield self.cubes[c]
            stack.extend(reversed(self.cubes[c].children))

    def cube_containing(self, point_index: int, j: int) -> Cube:
        return self.cubes[self.point_to_cube[j][point_index]]

    def measure(self, cube: Cube) -> float:
        return float(self.cloud.weights[cube.members].sum())

    def inner_ball(self, cube: Cube) -> Ball:
        return Ball(cube.center, self.inner_ball_factor * cube.side)

    def mass_constants(self) -> tuple[float, float]:
        """Reported (c, C) with measure(Q) in [c l(Q)^d, C l(Q)^d] over all cubes."""
        d = self.cloud.d
        ratios = [self.measure(q) / q.side**d for q in self.cubes]
        return float(min(ratios)), float(max(ratios))

    def export_json(self, path) -> None:
        rows = [
            {
                "id": c.id,
                "j": c.j,
                "center": [float(v) for v in c.center],
                "side": c.side,
                "parent": c.parent,
                "member_count": c.member_count,
            }
            for c in self.cubes
        ]
        with open(path, "w") as fh:
            json.dump(rows, fh, indent=1, sort_keys=True)


def cube_ball(cube: Cube, lam: float = 1.0) -> Ball:
    """Ball B(x_Q, lam * l(Q)) around the cube center."""
    if lam <= 0:
        raise ValueError("dilation must be positive")
    return Ball(cube.center, lam * cube.side)


def _bin_points(pts: np.ndarray, origin: np.ndarray, side: float, n_cells: int) -> np.ndarray:
    """Cell indices; the last cell along each axis is right-closed."""
    keys = np.floor((pts - origin) / side).astype(np.int64)
    return np.clip(keys, 0, n_cells - 1)


def _min_cell_mass(pts, w, origin, side, d, n_cells):
    keys = _bin_points(pts, origin, side, n_cells)
    _, inv = np.unique(keys, axis=0, return_inverse=True)
    sums = np.bincount(inv, weights=w)
    return sums.min() / side**d


def _pick_shift(cloud: WeightedCloud, s0: float, n_candidates: int = 9, n_gens: int = 3) -> np.ndarray:
    """Greedy per-axis shift maximizing the minimum cell mass over top generations.

    Shifts are capped so the root cell still covers the whole cloud.
    """
    lo, hi = cloud.bbox
    t_max = np.maximum(0.0, 1.0 - (hi - lo) / s0)
    shift = np.zeros(cloud.n)
    for axis in range(cloud.n):
        if t_max[axis] <= 0:
            continue
        best_t, best_score = 0.0, -math.inf
        for k in range(n_candidates):
            t = t_max[axis] * k / n_candidates
            trial = shift.copy()
            trial[axis] = t
            origin = lo - trial * s0
            score = min(
                _min_cell_mass(cloud.points, cloud.weights, origin,
                               s0 / 2**j, cloud.d, 2**j)
                for j in range(n_gens)
            )
            if score > best_score + 1e-15:
                best_score, best_t = score, t
        shift[axis] = best_t
    return shift


def build_lattice(
    cloud: WeightedCloud,
    *,
    max_generations: int | None = None,
    merge_frac: float = 0.1,
    inner_ball_factor: float = 0.2,
) -> DyadicLattice:
    """Build the partition tree.

    Generation j uses ambient cells of side s0 / 2^j; the tree stops once the
    cell side would drop below twice the cloud resolution.  A cube's scale
    length is l(Q) = 2 sqrt(n) * cell_side, which dominates the diameter of
    its members even after fragment merging.
    """
    lo, hi = cloud.bbox
    extent = float((hi - lo).max())
    if extent <= 0:
        extent = max(cloud.resolution, 1.0)
    s0 = 2.0 ** math.ceil(math.log2(extent) - 1e-9)
    n_gens = 1
    while s0 / 2**n_gens >= 2 * cloud.resolution:
        n_gens += 1
    if max_generations is not None:
        n_gens = min(n_gens, max_generations)
    shift = _pick_shift(cloud, s0)
    origin = lo - shift * s0
    ell_factor = 2 * math.sqrt(cloud.n)

    cubes: list[Cube] = []
    generations: list[list[int]] = []
    point_to_cube: list[np.ndarray] = []

    def make_cube(j, members, parent):
        cid = len(cubes)
        cell = s0 / 2**j
        pts = cloud.points[members]
        w = cloud.weights[members]
        centroid = (pts * w[:, None]).sum(axis=0) / w.sum()
        center = pts[int(np.argmin(np.linalg.norm(pts - centroid, axis=1)))]
        cubes.append(Cube(cid, j, center.copy(), ell_factor * cell, cell,
                          np.sort(np.asarray(members)), parent))
        if parent is not None:
            cubes[parent].children.append(cid)
        return cid

    def split(members: np.ndarray, j: int) -> list[np.ndarray]:
        cell = s0 / 2**j
        keys = _bin_points(cloud.points[members], origin, cell, 2**j)
        uniq, inv = np.unique(keys, axis=0, return_inverse=True)
        groups = [members[inv == g] for g in range(len(uniq))]
        masses = np.array([cloud.weights[g].sum() for g in groups])
        if len(groups) > 1:
            threshold = merge_frac * float(masses.max())
            order = np.argsort(masses)
            centroids = [
                (cloud.points[g] * cloud.weights[g][:, None]).sum(axis=0)
                / cloud.weights[g].sum()
                for g in groups
            ]
            absorbed = set()
            for gi in order:
                if masses[gi] >= threshold or len(groups) - len(absorbed) <= 1:
                    continue
                others = [
                    k for k in range(len(groups))
                    if k != gi and k not in absorbed and masses[k] >= threshold
                ]
                if not others:
                    continue
                dists = [np.linalg.norm(centroids[k] - centroids[gi]) for k in others]
                target = others[int(np.argmin(dists))]
                groups[target] = np.concatenate([groups[target], groups[gi]])
                masses[target] += masses[gi]
                absorbed.add(gi)
            groups = [g for k, g in enumerate(groups) if k not in absorbed]
        return groups

    all_idx = np.arange(len(cloud.points))
    gen0 = [make_cube(0, g, None) for g in split(all_idx, 0)]
    generations.append(gen0)
    for j in range(1, n_gens):
        gen = []
        for pid in generations[j - 1]:
            for g in split(cubes[pid].members, j):
                gen.append(make_cube(j, g, pid))
        generations.append(gen)

    for j, gen in enumerate(generations):
        lookup = np.full(len(cloud.points), -1, dtype=int)
        for cid in gen:
            lookup[cubes[cid].members] = cid
        point_to_cube.append(lookup)

    return DyadicLattice(cloud, cubes, generations, point_to_cube,
                         inner_ball_factor=inner_ball_factor)


def small_boundary_report(lattice: DyadicLattice, tau_grid) -> list[dict]:
    """Per cube and tau: mass within tau * cell_side of the complement, over cell_side^d.

    Reported only; nothing here is asserted.
    """
    cloud = lattice.cloud
    tau_grid = np.atleast_1d(np.asarray(tau_grid, dtype=float))
    n_pts = len(cloud.points)
    k = min(n_pts, 64)
    dists, nbrs = cloud.tree.query(cloud.points, k=k)
    if n_pts == 1:
        dists = dists.reshape(1, 1)
        nbrs = nbrs.reshape(1, 1)
    rows = []
    for j, gen in enumerate(lattice.generations):
        labels = lattice.point_to_cube[j]
        other = np.full(n_pts, np.inf)
        lab_n = labels[nbrs]
        diff = lab_n != labels[:, None]
        has = diff.any(axis=1)
        first = np.argmax(diff, axis=1)
        other[has] = dists[has, first[has]]
        cell = lattice.cubes[gen[0]].cell_side
        for cid in gen:
            cube = lattice.cubes[cid]
            m = cube.members
            for tau in tau_grid:
                near = other[m] <= tau * cell
                mass = float(cloud.weights[m][near].sum())
                rows.append({
                    "cube_id": cid,
                    "j": j,
                    "tau": float(tau),
                    "ratio": mass / cell**cloud.d,
                })
    return rows
