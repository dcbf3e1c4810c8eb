import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from rectlab.geometry import (
    Ball,
    DegenerateSetError,
    Plane,
    WeightedCloud,
    ahlfors_diagnostic,
    balanced_balls,
    gen_four_corner_cantor,
    gen_lipschitz_graph,
    gen_plane,
    gen_two_squares_strip,
    load_cloud,
    measure_of_ball,
    save_cloud,
)


def test_gen_plane_grid_and_weights():
    cloud = gen_plane(2, 3, 0.1, 1.0)
    assert len(cloud.points) == 121
    assert np.allclose(cloud.weights, 0.01)
    assert cloud.density_band is not None


def test_gen_plane_segment():
    cloud = gen_plane(1, 2, 0.25, 1.0)
    assert len(cloud.points) == 5
    assert np.ptp(cloud.points[:, 1]) == 0


def test_gen_plane_rejects_bad_dims():
    with pytest.raises(ValueError):
        gen_plane(3, 3, 0.1, 1.0)


def test_measure_of_ball_disc(plane_cloud):
    # independent oracle: direct count of grid points in the disc
    ball = plane_cloud.ball([0.5, 0.5, 0.0], 0.5)
    inside = np.linalg.norm(plane_cloud.points - ball.center, axis=1) <= 0.5 * (1 + 1e-9)
    expected = plane_cloud.weights[inside].sum()
    got = measure_of_ball(plane_cloud, ball)
    assert got == pytest.approx(expected)
    assert abs(got - math.pi * 0.25) <= 0.1 * math.pi * 0.25


def test_measure_empty_and_monotone(plane_cloud):
    far = Ball([10.0, 10.0, 10.0], 0.5)
    assert measure_of_ball(plane_cloud, far) == 0.0
    b1 = plane_cloud.ball([0.5, 0.5, 0.0], 0.2)
    b2 = plane_cloud.ball([0.5, 0.5, 0.0], 0.4)
    assert measure_of_ball(plane_cloud, b1) <= measure_of_ball(plane_cloud, b2)


@settings(max_examples=20, deadline=None)
@given(lam=st.floats(0.25, 4.0))
def test_measure_dilation_invariance(lam):
    cloud = gen_plane(2, 3, 0.2, 1.0)
    ball = cloud.ball([0.4, 0.4, 0.0], 0.3)
    ratio = measure_of_ball(cloud, ball) / ball.radius**cloud.d
    scaled = cloud.dilate(lam)
    ball2 = Ball(ball.center * lam, ball.radius * lam)
    ratio2 = measure_of_ball(scaled, ball2) / ball2.radius**cloud.d
    assert ratio2 == pytest.approx(ratio, rel=1e-12)


def test_graph_weights_tilted_plane():
    res = 0.01
    cloud = gen_lipschitz_graph(lambda x: x[0], 1.2, res, 1.0)
    # exact area of the tilted plane over the sampled base
    base_area = (1 + res) ** 2
    assert cloud.total_weight == pytest.approx(math.sqrt(2) * base_area, rel=1e-6)


def test_graph_surface_element_flag():
    flat = gen_lipschitz_graph(lambda x: 0.0, 1.0, 0.1, 1.0)
    plain = gen_plane(2, 3, 0.1, 1.0)
    assert np.allclose(flat.weights, plain.weights)
    uncorrected = gen_lipschitz_graph(lambda x: x[0], 1.2, 0.1, 1.0,
                                      surface_element=False)
    assert np.allclose(uncorrected.weights, 0.01)


def test_graph_lipschitz_abort():
    with pytest.raises(ValueError, match="Lipschitz"):
        gen_lipschitz_graph(lambda x: 5 * x[0], 1.0, 0.1, 1.0)


def test_delta_sin_graph_accepted():
    delta = 0.1
    cloud = gen_lipschitz_graph(lambda x: delta * math.sin(float(x[0]) / delta),
                                1.0, 0.02, 1.0)
    # neighbor slopes stay near the true Lipschitz bound
    gp = cloud.graph
    h = gp.heights[gp.idx]
    slopes = np.abs(np.diff(h, axis=0)) / gp.spacing
    assert slopes.max() <= 1.0 + 5 * (0.02 / delta)


def test_strip_fixture():
    eps = 0.08
    cloud, f = gen_two_squares_strip(eps, 0.02)
    on_strip = (np.abs(cloud.points[:, 0]) < eps / 2 - 1e-12)
    assert set(np.round(f[~on_strip], 12)) <= {0.0, 1.0}
    assert np.all((f[on_strip] > 0) & (f[on_strip] < 1))
    # sampled Lipschitz constant of the ramp
    ii, jj = np.triu_indices(len(f), k=1)
    lip = 0.0
    cap = 40_000
    step = max(1, len(ii) // cap)
    ii, jj = ii[::step], jj[::step]
    dist = np.linalg.norm(cloud.points[ii] - cloud.points[jj], axis=1)
    lip = (np.abs(f[ii] - f[jj]) / dist).max()
    assert 1 / (2 * eps) <= lip <= 2 / eps


def test_strip_rejects_coarse_resolution():
    with pytest.raises(ValueError, match="resolve"):
        gen_two_squares_strip(0.05, 0.05)


def test_ahlfors_plane_band(plane_cloud):
    rep = ahlfors_diagnostic(plane_cloud, [0.2, 0.3, 0.4])
    assert rep.c_lower > 0
    assert rep.c_upper / rep.c_lower <= 3.0


def test_ahlfors_band_bound_wider_scales():
    cloud = gen_plane(2, 3, 1 / 32, 1.0)
    rep = ahlfors_diagnostic(cloud, [4 / 32, 0.25, 0.5])
    assert rep.c_upper / rep.c_lower <= 10.0


def test_ahlfors_two_isolated_points():
    cloud = WeightedCloud([[0.0, 0.0], [100.0, 0.0]], [0.01, 0.01], 1,
                          resolution=0.01)
    rep = ahlfors_diagnostic(cloud, [50.0], interior_only=False)
    # lower regularity fails: mass per unit scale is essentially zero
    assert rep.c_lower <= 1e-3
    assert rep.worst_ball is not None


def test_ahlfors_dilation_invariance(plane_cloud):
    rep = ahlfors_diagnostic(plane_cloud, [0.25])
    scaled = plane_cloud.dilate(2.0)
    rep2 = ahlfors_diagnostic(scaled, [0.5])
    assert rep2.c_lower == pytest.approx(rep.c_lower, rel=1e-12)
    assert rep2.c_upper == pytest.approx(rep.c_upper, rel=1e-12)


def test_balanced_balls_plane(plane_cloud):
    ball = plane_cloud.ball([0.5, 0.5, 0.0], 1.0)
    balls = balanced_balls(plane_cloud, ball)
    assert len(balls) == 3
    assert balls[0].radius >= 0.1
    for b in balls:
        assert np.linalg.norm(b.center - ball.center) + 2 * b.radius <= ball.radius + 1e-9
    # affine independence, checked directly
    p0, p1, p2 = (b.center for b in balls)
    v1, v2 = (p1 - p0)[:2], (p2 - p0)[:2]
    area = abs(v1[0] * v2[1] - v1[1] * v2[0])
    assert area > 1e-3


def test_balanced_balls_segment():
    seg = gen_plane(1, 2, 0.25, 1.0)
    balls = balanced_balls(seg, seg.ball([0.5, 0.0], 1.0))
    assert len(balls) == 2
    assert abs(balls[0].center[0] - balls[1].center[0]) >= 4 * balls[0].radius - 1e-12


def test_balanced_balls_degenerate():
    line = WeightedCloud(
        np.column_stack([np.linspace(0, 1, 11), np.zeros(11), np.zeros(11)]),
        np.full(11, 0.1), 2)
    with pytest.raises(DegenerateSetError):
        balanced_balls(line, line.ball([0.5, 0.0, 0.0], 1.0))


def test_plane_projection_idempotent():
    plane = Plane([0.0, 0.0, 1.0], np.eye(3)[:, :2])
    pts = np.random.default_rng(0).standard_normal((20, 3))
    proj = plane.project(pts)
    assert np.allclose(plane.project(proj), proj, atol=1e-10)


def test_cloud_csv_roundtrip(tmp_path, plane_cloud):
    path = tmp_path / "cloud.csv"
    save_cloud(plane_cloud, path)
    back = load_cloud(path)
    assert back.d == plane_cloud.d
    assert np.allclose(back.points, plane_cloud.points)
    assert np.allclose(back.weights, plane_cloud.weights)


def test_cloud_csv_bad_header(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text("a,b,weight\n0,0,1\n")
    with pytest.raises(ValueError, match="header"):
        load_cloud(path, d=1)


def test_cantor_fixture():
    cloud = gen_four_corner_cantor(4)
    assert len(cloud.points) == 256
    assert cloud.total_weight == pytest.approx(1.0)
    assert cloud.d == 1 and cloud.n == 2
