"""Weighted point clouds, generators for benchmark sets, and regularity diagnostics.

A set is represented by a finite weighted sample: the measure of a region is
the sum of the weights of the sample points it contains.  Generators record
the empirical density band (c0, C0) of the sample they produce so that
downstream diagnostics can compare against it.
"""

from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

__all__ = [
    "Ball",
    "Plane",
    "GraphParam",
    "WeightedCloud",
    "AhlforsReport",
    "DegenerateSetError",
    "gen_plane",
    "gen_lipschitz_graph",
    "gen_two_squares_strip",
    "gen_four_corner_cantor",
    "measure_of_ball",
    "ahlfors_diagnostic",
    "balanced_balls",
    "save_cloud",
    "load_cloud",
]

_token_counter = itertools.count(1)

# Relative pad so that points numerically on the sphere count as inside
# (membership is closed and must be platform-stable).
_BALL_PAD = 1e-9


class DegenerateSetError(RuntimeError):
    """The sample behaves like a lower-dimensional set inside the queried ball."""


@dataclass(frozen=True)
class Ball:
    """Closed ball; ``scale(lam)`` dilates the radius only."""

    center: np.ndarray
    radius: float

    def __post_init__(self):
        c = np.atleast_1d(np.asarray(self.center, dtype=float))
        object.__setattr__(self, "center", c)
        if not np.all(np.isfinite(c)):
            raise ValueError("ball center must be finite")
        if not self.radius > 0:
            raise ValueError("ball radius must be positive")

    def scale(self, lam: float) -> "Ball":
        return Ball(self.center, lam * self.radius)


@dataclass(frozen=True)
class Plane:
    """Affine d-plane given by a basepoint and an orthonormal basis (n x d)."""

    basepoint: np.ndarray
    basis: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.basepoint, dtype=float)
        u = np.asarray(self.basis, dtype=float)
        if u.ndim != 2 or u.shape[0] < u.shape[1]:
            raise ValueError("basis must be an (n, d) matrix with d <= n")
        gram = u.T @ u
        if not np.allclose(gram, np.eye(u.shape[1]), atol=1e-10):
            raise ValueError("basis is not orthonormal to 1e-10")
        object.__setattr__(self, "basepoint", p)
        object.__setattr__(self, "basis", u)

    @property
    def n(self) -> int:
        return self.basis.shape[0]

    @property
    def dim(self) -> int:
        return self.basis.shape[1]

    def project(self, pts: np.ndarray) -> np.ndarray:
        pts = np.atleast_2d(pts)
        rel = pts - self.basepoint
        return self.basepoint + (rel @ self.basis) @ self.basis.T

    def coords(self, pts: np.ndarray) -> np.ndarray:
        """In-plane coordinates of the projections."""
        return (np.atleast_2d(pts) - self.basepoint) @ self.basis

    def distances(self, pts: np.ndarray) -> np.ndarray:
        pts = np.atleast_2d(pts)
        rel = pts - self.basepoint
        tang = (rel @ self.basis) @ self.basis.T
        return np.linalg.norm(rel - tang, axis=1)

    def angle_to(self, other: "Plane") -> float:
        """Operator-norm distance between the two orthogonal projections."""
        pa = self.basis @ self.basis.T
        pb = other.basis @ other.basis.T
        return float(np.linalg.norm(pa - pb, 2))


@dataclass(frozen=True)
class GraphParam:
    """Grid parametrization of a graph-type cloud.

    ``idx`` maps grid multi-indices to point indices (-1 where the base grid
    has no sample, e.g. masked regions), ``origin``/``spacing`` recover base
    coordinates, and ``heights`` are the graph values at the sampled nodes.
    """

    idx: np.ndarray
    origin: np.ndarray
    spacing: float
    heights: np.ndarray

    @property
    def base_dim(self) -> int:
        return self.idx.ndim


class WeightedCloud:
    """Finite weighted sample of a d-dimensional set in R^n."""

    def __init__(
        self,
        points,
        weights,
        d: int,
        *,
        resolution: float | None = None,
        generator: str = "custom",
        params: dict | None = None,
        density_band: tuple[float, float] | None = None,
        graph: GraphParam | None = None,
    ):
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        w = np.asarray(weights, dtype=float)
        if pts.ndim != 2:
            raise ValueError("points must be a (N, n) array")
        if w.shape != (pts.shape[0],):
            raise ValueError("weights must be one per point")
        if not np.all(np.isfinite(pts)):
            raise ValueError("points must be finite")
        if not np.all(w > 0):
            raise ValueError("weights must be positive")
        if not 1 <= d < pts.shape[1]:
            raise ValueError("need 1 <= d < n")
        self.points = pts
        self.weights = w
        self.d = int(d)
        self.generator = generator
        self.params = dict(params or {})
        self.density_band = density_band
        self.graph = graph
        self.token = next(_token_counter)
        self.tree = cKDTree(pts)
        if resolution is None:
            resolution = self._estimate_resolution()
        self.resolution = float(resolution)
        pts.setflags(write=False)
        w.setflags(write=False)

    def _estimate_resolution(self) -> float:
        if len(self.points) < 2:
            return 1.0
        k = min(2, len(self.points))
        dists, _ = self.tree.query(self.points, k=k)
        return float(np.median(dists[:, -1]))

    @property
    def n(self) -> int:
        return self.points.shape[1]

    @property
    def total_weight(self) -> float:
        return float(self.weights.sum())

    @property
    def bbox(self) -> tuple[np.ndarray, np.ndarray]:
        return self.points.min(axis=0), self.points.max(axis=0)

    @property
    def diameter(self) -> float:
        lo, hi = self.bbox
        return float(np.linalg.norm(hi - lo))

    def ball(self, center, radius: float) -> Ball:
        """Validated ball: the center must sit on the sampled set."""
        b = Ball(np.asarray(center, dtype=float), float(radius))
        dist, _ = self.tree.query(b.center)
        if dist > self.resolution * (1 + 1e-9):
            raise ValueError(
                f"ball center is {dist:.3g} away from the cloud "
                f"(resolution {self.resolution:.3g})"
            )
        return b

    def indices_in_ball(self, ball: Ball) -> np.ndarray:
        r = ball.radius * (1 + _BALL_PAD)
        idx = self.tree.query_ball_point(ball.center, r)
        return np.asarray(sorted(idx), dtype=int)

    def dilate(self, lam: float) -> "WeightedCloud":
        """Scale points by lam and weights by lam^d (measure pushforward)."""
        return WeightedCloud(
            self.points * lam,
            self.weights * lam**self.d,
            self.d,
            resolution=self.resolution * lam,
            generator=self.generator,
            params={**self.params, "dilated_by": lam},
            density_band=self.density_band,
            graph=None,
        )


def measure_of_ball(cloud: WeightedCloud, ball: Ball) -> float:
    """Mass of the closed ball: sum of weights of the points it contains."""
    idx = cloud.indices_in_ball(ball)
    return float(cloud.weights[idx].sum()) if len(idx) else 0.0


# ----------------------------------------------------------------------------
# generators


def _unit_ball_volume(d: int) -> float:
    return math.pi ** (d / 2) / math.gamma(d / 2 + 1)


def _grid_axes(extent: float, resolution: float) -> np.ndarray:
    m = int(round(extent / resolution))
    return np.arange(m + 1) * resolution


def gen_plane(d: int, n: int, resolution: float, extent: float) -> WeightedCloud:
    """Uniform grid sample of a coordinate d-plane in R^n, one weight per cell."""
    if d >= n:
        raise ValueError("need d < n for a plane sample")
    if resolution <= 0 or extent <= 0:
        raise ValueError("resolution and extent must be positive")
    axes = _grid_axes(extent, resolution)
    base = np.stack(np.meshgrid(*([axes] * d), indexing="ij"), axis=-1).reshape(-1, d)
    pts = np.zeros((len(base), n))
    pts[:, :d] = base
    w = np.full(len(base), resolution**d)
    omega = _unit_ball_volume(d)
    # density band of an ideal grid-sampled plane, boundary corners included
    band = (omega / 2**d, 2.0 * omega)
    shape = (len(axes),) * d
    idx = np.arange(len(base)).reshape(shape)
    graph = GraphParam(idx=idx, origin=np.zeros(d), spacing=resolution,
                       heights=np.zeros(len(base)))
    return WeightedCloud(
        pts, w, d,
        resolution=resolution,
        generator="plane",
        params={"d": d, "n": n, "resolution": resolution, "extent": extent},
        density_band=band,
        graph=graph,
    )


def _graph_gradients(idx: np.ndarray, heights: np.ndarray, spacing: float) -> np.ndarray:
    """Per-node gradient of the height function by central differences.

    Falls back to one-sided differences where a neighbor is missing (mask
    boundary); a node with no neighbor along an axis gets slope 0 there.
    """
    d = idx.ndim
    grads = np.zeros((heights.shape[0], d))
    hgrid = np.full(idx.shape, np.nan)
    hgrid[idx >= 0] = heights[idx[idx >= 0]]
    for axis in range(d):
        fwd = np.roll(hgrid, -1, axis=axis)
        bwd = np.roll(hgrid, 1, axis=axis)
        # roll wraps around; kill the wrapped slices
        sl = [slice(None)] * d
        sl[axis] = -1
        fwd[tuple(sl)] = np.nan
        sl[axis] = 0
        bwd[tuple(sl)] = np.nan
        central = (fwd - bwd) / (2 * spacing)
        onesided_f = (fwd - hgrid) / spacing
        onesided_b = (hgrid - bwd) / spacing
        slope = np.where(np.isfinite(central), central,
                         np.where(np.isfinite(onesided_f), onesided_f,
                                  np.where(np.isfinite(onesided_b), onesided_b, 0.0)))
        valid = idx >= 0
        grads[idx[valid], axis] = slope[valid]
    return grads


def _neighbor_lipschitz(idx: np.ndarray, heights: np.ndarray, spacing: float) -> float:
    """Max |dh|/spacing over axis-neighbor pairs of the base grid."""
    worst = 0.0
    d = idx.ndim
    hgrid = np.full(idx.shape, np.nan)
    hgrid[idx >= 0] = heights[idx[idx >= 0]]
    for axis in range(d):
        a = np.moveaxis(hgrid, axis, 0)
        diff = np.abs(a[1:] - a[:-1]) / spacing
        if diff.size and np.any(np.isfinite(diff)):
            worst = max(worst, float(np.nanmax(diff)))
    return worst


def gen_lipschitz_graph(
    g,
    lip_bound: float,
    resolution: float,
    extent: float,
    *,
    d: int = 2,
    surface_element: bool = True,
) -> WeightedCloud:
    """Sample the graph of ``g`` over a d-dimensional grid in R^(d+1).

    Weights carry the surface-element correction sqrt(1+|grad g|^2) unless
    disabled.  Aborts when the sampled Lipschitz constant exceeds twice the
    caller's bound.
    """
    if resolution <= 0 or extent <= 0:
        raise ValueError("resolution and extent must be positive")
    axes = _grid_axes(extent, resolution)
    base = np.stack(np.meshgrid(*([axes] * d), indexing="ij"), axis=-1).reshape(-1, d)
    heights = np.asarray([float(g(x)) for x in base])
    shape = (len(axes),) * d
    idx = np.arange(len(base)).reshape(shape)
    sampled_lip = _neighbor_lipschitz(idx, heights, resolution)
    if sampled_lip > 2 * lip_bound:
        raise ValueError(
            f"sampled Lipschitz constant {sampled_lip:.3g} exceeds twice "
            f"the declared bound {lip_bound:.3g}"
        )
    pts = np.column_stack([base, heights])
    if surface_element:
        grads = _graph_gradients(idx, heights, resolution)
        w = resolution**d * np.sqrt(1 + (grads**2).sum(axis=1))
    else:
        w = np.full(len(base), resolution**d)
    omega = _unit_ball_volume(d)
    band = (omega / 2**d / math.sqrt(1 + lip_bound**2), 2.0 * omega * math.sqrt(1 + lip_bound**2))
    graph = GraphParam(idx=idx, origin=np.zeros(d), spacing=resolution, heights=heights)
    return WeightedCloud(
        pts, w, d,
        resolution=resolution,
        generator="lipschitz_graph",
        params={"d": d, "lip_bound": lip_bound, "resolution": resolution,
                "extent": extent, "surface_element": surface_element},
        density_band=band,
        graph=graph,
    )


def gen_two_squares_strip(eps: float, resolution: float):
    """Two unit squares in a plane in R^3 joined by an eps-by-eps strip.

    Returns the cloud and per-point values: 0 on the left square, 1 on the
    right square, linear ramp across the strip.
    """
    if not 0 < eps <= 0.1:
        raise ValueError("need 0 < eps <= 0.1")
    if resolution > eps / 4:
        raise ValueError("resolution too coarse to resolve the strip")
    h = resolution
    xs = np.arange(-1 - eps / 2, 1 + eps / 2 + h / 2, h)
    ys = np.arange(-0.5, 0.5 + h / 2, h)
    gx, gy = np.meshgrid(xs, ys, indexing="ij")
    in_left = gx <= -eps / 2 + 1e-12
    in_right = gx >= eps / 2 - 1e-12
    in_strip = (~in_left) & (~in_right) & (np.abs(gy) <= eps / 2 + 1e-12)
    keep = in_left | in_right | in_strip
    idx = np.full(gx.shape, -1, dtype=int)
    idx[keep] = np.arange(int(keep.sum()))
    base = np.column_stack([gx[keep], gy[keep]])
    pts = np.column_stack([base, np.zeros(len(base))])
    w = np.full(len(base), h * h)
    x = base[:, 0]
    f = np.clip((x + eps / 2) / eps, 0.0, 1.0)
    graph = GraphParam(idx=idx, origin=np.array([xs[0], ys[0]]), spacing=h,
                       heights=np.zeros(len(base)))
    cloud = WeightedCloud(
        pts, w, 2,
        resolution=h,
        generator="two_squares_strip",
        params={"eps": eps, "resolution": h},
        density_band=(_unit_ball_volume(2) / 8, 2 * _unit_ball_volume(2)),
        graph=graph,
    )
    return cloud, f


def gen_four_corner_cantor(levels: int, *, contraction: float = 0.25) -> WeightedCloud:
    """Self-similar four-corner dust in R^2 (d = 1), a non-flat fixture."""
    if levels < 1:
        raise ValueError("levels must be >= 1")
    corners = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0], [1.0, 1.0]])
    pts = np.array([[0.0, 0.0]])
    scale = 1.0
    for _ in range(levels):
        scale *= contraction
        shifts = corners * (1 - contraction) / contraction * scale
        pts = (pts[:, None, :] + shifts[None, :, :]).reshape(-1, 2)
    w = np.full(len(pts), 4.0**-levels)
    return WeightedCloud(
        pts, w, 1,
        resolution=scale,
        generator="four_corner_cantor",
        params={"levels": levels, "contraction": contraction},
        density_band=None,
    )


# ----------------------------------------------------------------------------
# diagnostics


@dataclass
class AhlforsReport:
    c_lower: float
    c_upper: float
    worst_ball: Ball | None
    rows: list = field(default_factory=list)


def ahlfors_diagnostic(
    cloud: WeightedCloud,
    scale_grid,
    *,
    centers: np.ndarray | None = None,
    max_centers: int = 200,
    interior_only: bool = True,
) -> AhlforsReport:
    """Band of measure(B(x, r)) / r^d over sampled centers and scales.

    With ``interior_only`` the report keeps only balls that fit inside the
    sampled extent along every non-degenerate axis (finite samples cannot
    witness regularity across their own boundary).
    """
    scale_grid = np.atleast_1d(np.asarray(scale_grid, dtype=float))
    if centers is None:
        step = max(1, len(cloud.points) // max_centers)
        centers = cloud.points[::step]
    lo, hi = cloud.bbox
    extent = hi - lo
    active = extent > 4 * cloud.resolution
    rows = []
    worst = None
    c_lo, c_hi = math.inf, 0.0
    for r in scale_grid:
        if interior_only:
            ok = np.ones(len(centers), dtype=bool)
            for k in range(cloud.n):
                if active[k]:
                    ok &= (centers[:, k] >= lo[k] + r) & (centers[:, k] <= hi[k] - r)
            cs = centers[ok]
        else:
            cs = centers
        for c in cs:
            ratio = measure_of_ball(cloud, Ball(c, r)) / r**cloud.d
            rows.append((tuple(c), float(r), ratio))
            if ratio < c_lo:
                c_lo, worst = ratio, Ball(c, r)
            c_hi = max(c_hi, ratio)
    if not rows:
        return AhlforsReport(0.0, 0.0, None, rows)
    return AhlforsReport(float(c_lo), float(c_hi), worst, rows)


def _affine_span_distance(x: np.ndarray, anchors: list[np.ndarray]) -> float:
    """Distance from x to the affine span of the anchor points."""
    base = anchors[0]
    if len(anchors) == 1:
        return float(np.linalg.norm(x - base))
    mat = np.stack([a - base for a in anchors[1:]], axis=1)
    q, _ = np.linalg.qr(mat)
    rel = x - base
    return float(np.linalg.norm(rel - q @ (q.T @ rel)))


def balanced_balls(cloud: WeightedCloud, ball: Ball, *, c_start: float = 0.25) -> list[Ball]:
    """d+1 sub-balls of B with well-spread, affinely independent centers.

    Greedy search at radius factor c, halving c until the spread condition
    dist(center_{i+1}, affine-span(previous centers)) >= 4 c r holds; raises
    if no c at or above resolution/r works (the set is lower-dimensional
    inside the ball).
    """
    idx = cloud.indices_in_ball(ball)
    if len(idx) == 0 or cloud.weights[idx].sum() <= 0:
        raise ValueError("ball has no mass")
    pts = cloud.points[idx]
    r = ball.radius
    c = c_start
    while c * r >= cloud.resolution * 0.999:
        cap = (1 - 2 * c) * r
        cand = pts[np.linalg.norm(pts - ball.center, axis=1) <= cap + 1e-12]
        if len(cand):
            # anchor at an extreme candidate so the later span conditions have room
            anchor = int(np.argmax(np.linalg.norm(cand - ball.center, axis=1)))
            chosen = [cand[anchor]]
            ok = True
            for _ in range(cloud.d):
                dists = np.array([_affine_span_distance(p, chosen) for p in cand])
                j = int(np.argmax(dists))
                if dists[j] < 4 * c * r * (1 - 1e-12):
                    ok = False
                    break
                chosen.append(cand[j])
            if ok:
                balls = [Ball(x, c * r) for x in chosen]
                for i in range(1, len(chosen)):
                    assert _affine_span_distance(chosen[i], chosen[:i]) >= 4 * c * r * (1 - 1e-9)
                return balls
        c /= 2
    raise DegenerateSetError(
        "no admissible radius factor: sample is lower-dimensional inside the ball"
    )


# ----------------------------------------------------------------------------
# persistence


def save_cloud(cloud: WeightedCloud, path) -> None:
    """CSV body (x1..xn,weight) plus a JSON metadata sidecar."""
    import csv as _csv
    from pathlib import Path

    path = Path(path)
    with open(path, "w", newline="") as fh:
        writer = _csv.writer(fh)
        writer.writerow([f"x{i + 1}" for i in range(cloud.n)] + ["weight"])
        for p, w in zip(cloud.points, cloud.weights):
            writer.writerow([repr(float(v)) for v in p] + [repr(float(w))])
    meta = {
        "d": cloud.d,
        "n": cloud.n,
        "resolution": cloud.resolution,
        "generator": cloud.generator,
        "params": cloud.params,
    }
    with open(path.with_suffix(path.suffix + ".meta.json"), "w") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True)


def load_cloud(path, *, d: int | None = None) -> WeightedCloud:
    import csv as _csv
    from pathlib import Path

    path = Path(path)
    meta_path = path.with_suffix(path.suffix + ".meta.json")
    meta = {}
    if meta_path.exists():
        with open(meta_path) as fh:
            meta = json.load(fh)
    with open(path, newline="") as fh:
        reader = _csv.reader(fh)
        header = next(reader)
        if header[-1] != "weight" or any(
            h != f"x{i + 1}" for i, h in enumerate(header[:-1])
        ):
            raise ValueError(f"bad cloud header: {header}")
        n = len(header) - 1
        if meta and meta.get("n") != n:
            raise ValueError(
                f"header arity {n} disagrees with sidecar n={meta.get('n')}"
            )
        rows = [[float(v) for v in row] for row in reader if row]
    data = np.asarray(rows)
    dd = meta.get("d", d)
    if dd is None:
        raise ValueError("no sidecar metadata; pass d explicitly")
    return WeightedCloud(
        data[:, :n],
        data[:, n],
        int(dd),
        resolution=meta.get("resolution"),
        generator=meta.get("generator", "file"),
        params=meta.get("params"),
    )
