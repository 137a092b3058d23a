import math

import numpy as np
import pytest

from effdiff.geometry import (
    DegenerateConfigError, Domain, GridField, OutsideDomainError, PlaneConfig,
    ScalarField, SurfacePair, SurfaceValidationError, frame_for_planes,
    frame_for_surfaces, surface_normals, width,
)

SQ2 = math.sqrt(2.0)


def make_pair(z1, z2, domain=(-3, 3, -3, 3), **kw):
    return SurfacePair(ScalarField.from_expression(z1),
                       ScalarField.from_expression(z2), domain, **kw)


# ---------------------------------------------------------------------------
# frame_for_planes
# ---------------------------------------------------------------------------

def test_planes_wedge():
    cfg = PlaneConfig(np.array([0.0, 0.0, -1.0]), np.array([-1.0, 0.0, 1.0]) / SQ2)
    fr = frame_for_planes(cfg)
    assert fr.psi == pytest.approx(0.0, abs=1e-15)
    assert fr.m1 == pytest.approx(0.0, abs=1e-15)
    assert fr.m2 == pytest.approx(1.0, rel=1e-14)
    assert np.allclose(fr.xhat, [1.0, 0.0, 0.0], atol=1e-15)


def test_planes_parallel_fallback_flat():
    cfg = PlaneConfig(np.array([0.0, 0.0, 1.0]), np.array([0.0, 0.0, 1.0]))
    fr = frame_for_planes(cfg)
    assert fr.parallel
    assert fr.psi == 0.0
    assert fr.m1 == 0.0 and fr.m2 == 0.0


def test_planes_parallel_fallback_common_slope():
    n = np.array([-1.0, 0.0, 1.0]) / SQ2
    fr = frame_for_planes(PlaneConfig(n, n))
    assert fr.parallel
    assert fr.psi == pytest.approx(0.0, abs=1e-15)
    assert fr.m1 == pytest.approx(fr.m2, abs=1e-15)
    assert abs(fr.m1) == pytest.approx(1.0, rel=1e-14)


def test_planes_vertical_parallel_is_degenerate():
    with pytest.raises(DegenerateConfigError) as err:
        frame_for_planes(PlaneConfig(np.array([0.0, -1.0, 0.0]),
                                     np.array([0.0, 1.0, 0.0])))
    assert abs(err.value.psi) == pytest.approx(math.pi / 2)


def test_planes_vertical_intersection_is_degenerate():
    # both planes contain the horizontal y-axis only; intersection is zhat
    n1 = np.array([1.0, 0.0, 0.0])
    n2 = np.array([1.0, 1.0, 0.0]) / SQ2
    with pytest.raises(DegenerateConfigError) as err:
        frame_for_planes(PlaneConfig(n1, n2))
    assert abs(err.value.psi) == pytest.approx(math.pi / 2)


def test_planes_frame_is_orthonormal():
    rng = np.random.default_rng(3)
    for _ in range(50):
        n1 = rng.normal(size=3)
        n2 = rng.normal(size=3)
        try:
            fr = frame_for_planes(PlaneConfig(n1, n2))
        except DegenerateConfigError:
            continue
        basis = np.array([fr.xhat, fr.yhat, fr.zhat])
        assert np.allclose(basis @ basis.T, np.eye(3), atol=1e-12)
        assert abs(fr.psi) <= math.pi / 2


def test_planes_round_trip_from_generated_slopes():
    # build normals realizing (psi, m1, m2); recovery is exact up to a
    # joint sign flip of (psi, m1, m2)
    rng = np.random.default_rng(11)
    for _ in range(100):
        psi = rng.uniform(-1.4, 1.4)
        m1, m2 = rng.uniform(-8, 8, size=2)
        if abs(m2 - m1) < 1e-3:
            continue
        X = np.array([1.0, 0.0, 0.0])
        Y = np.array([0.0, math.cos(psi), math.sin(psi)])
        Z = np.array([0.0, -math.sin(psi), math.cos(psi)])
        n1 = (m1 * X - Z) / math.hypot(m1, 1.0)
        n2 = (m2 * X - Z) / math.hypot(m2, 1.0)
        fr = frame_for_planes(PlaneConfig(n1, n2))
        sign = 1.0 if abs(fr.psi - psi) < 1e-9 else -1.0
        assert fr.psi == pytest.approx(sign * psi, abs=1e-12)
        assert fr.m1 == pytest.approx(sign * m1, rel=1e-10, abs=1e-10)
        assert fr.m2 == pytest.approx(sign * m2, rel=1e-10, abs=1e-10)


# ---------------------------------------------------------------------------
# frame_for_surfaces
# ---------------------------------------------------------------------------

def test_surfaces_orthogonal_waves_tilt():
    pair = make_pair("cos(x)", "cos(y)+5/2", domain=(0, 2 * math.pi, 0, 2 * math.pi))
    fd = frame_for_surfaces(pair, (math.pi / 2, math.pi / 2))
    assert fd.psi == pytest.approx(-math.asin(0.5), abs=1e-14)


def test_surfaces_tilted_upper_plane():
    pair = make_pair("0", "1+x/2", domain=(-1.5, 1.5, -1.5, 1.5))
    fd = frame_for_surfaces(pair, (0.3, -1.2))
    assert fd.psi == 0.0
    assert fd.m1 == 0.0
    assert fd.m2 == pytest.approx(0.5, rel=1e-14)
    assert fd.xhat == pytest.approx((1.0, 0.0))
    assert not fd.degenerate_frame


def test_surfaces_flat_parallel_fallback():
    pair = make_pair("-1", "1")
    fd = frame_for_surfaces(pair, (0.7, 0.7))
    assert fd.degenerate_frame and not fd.extreme_tilt
    assert fd.psi == 0.0
    assert fd.m1 == 0.0 and fd.m2 == 0.0


def test_surfaces_sloped_parallel_fallback():
    pair = make_pair("x", "x+1", domain=(-0.4, 0.4, -0.4, 0.4))
    fd = frame_for_surfaces(pair, (0.1, 0.0))
    assert fd.degenerate_frame and not fd.extreme_tilt
    assert fd.psi == 0.0
    assert fd.m1 == pytest.approx(1.0, rel=1e-14)
    assert fd.m2 == pytest.approx(1.0, rel=1e-14)


def test_surfaces_one_dimensional_channel_slopes():
    pair = make_pair("sin(x)-3/2", "cos(2*x)+3/2", domain=(0, 2 * math.pi, -1, 1))
    for x in (0.3, 1.0, 2.2, 4.0, 5.5):
        fd = frame_for_surfaces(pair, (x, 0.0))
        z1p = math.cos(x)
        z2p = -2.0 * math.sin(2 * x)
        sign = math.copysign(1.0, z2p - z1p)
        assert fd.psi == 0.0
        assert fd.m1 == pytest.approx(sign * z1p, rel=1e-12, abs=1e-12)
        assert fd.m2 == pytest.approx(sign * z2p, rel=1e-12, abs=1e-12)
        assert fd.mu == (fd.m1 + fd.m2) / 2


def test_surfaces_frame_orthonormal_and_perp_rotation():
    pair = make_pair("cos(x)", "cos(y)+5/2", domain=(0, 2 * math.pi, 0, 2 * math.pi))
    rng = np.random.default_rng(5)
    for _ in range(50):
        p = rng.uniform(0.1, 6.1, size=2)
        fd = frame_for_surfaces(pair, tuple(p))
        if fd.degenerate_frame:
            continue
        assert np.dot(fd.xhat, fd.yhat) == pytest.approx(0.0, abs=1e-12)
        assert np.hypot(*fd.xhat) == pytest.approx(1.0, abs=1e-12)
        assert np.hypot(*fd.yhat) == pytest.approx(1.0, abs=1e-12)
        assert fd.gradperpw[0] == -fd.gradw[1]
        assert fd.gradperpw[1] == fd.gradw[0]
        assert abs(fd.psi) <= math.pi / 2


# ---------------------------------------------------------------------------
# width
# ---------------------------------------------------------------------------

def test_width_radial_origin():
    pair = make_pair("sin(r)-3/2", "cos(2*r)+3/2", domain=(-8, 8, -8, 8))
    assert width(pair, (0.0, 0.0)) == pytest.approx(4.0, abs=1e-15)


def test_width_flat():
    pair = make_pair("0", "1")
    assert width(pair, (0.2, 0.9)) == 1.0


def test_width_zero_fails_at_construction():
    with pytest.raises(SurfaceValidationError):
        make_pair("x", "x")


def test_width_outside_domain():
    pair = make_pair("0", "1", domain=(0, 1, 0, 1))
    with pytest.raises(OutsideDomainError):
        width(pair, (2.0, 0.5))


# ---------------------------------------------------------------------------
# cross-route consistency
# ---------------------------------------------------------------------------

def test_routes_agree_on_zero_tilt_points():
    pair = make_pair("sin(r)-3/2", "cos(2*r)+3/2", domain=(-8, 8, -8, 8))
    rng = np.random.default_rng(17)
    checked = 0
    while checked < 40:
        p = tuple(rng.uniform(0.5, 5.5, size=2))
        fd = frame_for_surfaces(pair, p)
        if fd.degenerate_frame:
            continue
        n1, n2 = surface_normals(pair.z1.gradient(p), pair.z2.gradient(p))
        fr = frame_for_planes(PlaneConfig(n1, n2))
        assert fd.psi == pytest.approx(fr.psi, abs=1e-10)
        assert fd.m1 == pytest.approx(fr.m1, rel=1e-10, abs=1e-10)
        assert fd.m2 == pytest.approx(fr.m2, rel=1e-10, abs=1e-10)
        assert np.allclose(fr.xhat[:2], fd.xhat, atol=1e-10)
        checked += 1


def test_routes_tilt_relation_general():
    # the surface tilt uses the unnormalized cross product of the unit
    # normals, so sin(psi_surface) = |n1 x n2| sin(psi_planes)
    pair = make_pair("cos(x)", "cos(y)+5/2", domain=(0, 2 * math.pi, 0, 2 * math.pi))
    rng = np.random.default_rng(23)
    for _ in range(50):
        p = tuple(rng.uniform(0.2, 6.0, size=2))
        fd = frame_for_surfaces(pair, p)
        if fd.degenerate_frame:
            continue
        n1, n2 = surface_normals(pair.z1.gradient(p), pair.z2.gradient(p))
        cross = np.cross(n1, n2)
        fr = frame_for_planes(PlaneConfig(n1, n2))
        assert math.sin(fd.psi) == pytest.approx(
            np.linalg.norm(cross) * math.sin(fr.psi), abs=1e-12)
        assert np.allclose(fr.xhat[:2], fd.xhat, atol=1e-10)


def test_gradw_equals_gradient_difference():
    pair = make_pair("sin(x)*cos(y)", "4+x*y/4")
    rng = np.random.default_rng(2)
    for _ in range(30):
        p = tuple(rng.uniform(-2.5, 2.5, size=2))
        fd = frame_for_surfaces(pair, p)
        g1 = pair.z1.gradient(p)
        g2 = pair.z2.gradient(p)
        assert fd.gradw[0] == pytest.approx(g2[0] - g1[0], abs=1e-12)
        assert fd.gradw[1] == pytest.approx(g2[1] - g1[1], abs=1e-12)


def test_tilt_vanishes_for_functionally_dependent_surfaces():
    # z_i = f_i(z(x,y)) with z = x + 2y: gradients stay parallel
    pair = make_pair("sin(x+2*y)", "3+(x+2*y)^2/8", domain=(-1, 1, -1, 1))
    rng = np.random.default_rng(8)
    for _ in range(30):
        p = tuple(rng.uniform(-0.9, 0.9, size=2))
        fd = frame_for_surfaces(pair, p)
        assert abs(fd.psi) <= 1e-10


# ---------------------------------------------------------------------------
# grid backing
# ---------------------------------------------------------------------------

def _sampled(expr_text, x0, x1, y0, y1, n):
    f = ScalarField.from_expression(expr_text)
    xs = np.linspace(x0, x1, n)
    ys = np.linspace(y0, y1, n)
    gx, gy = np.meshgrid(xs, ys, indexing="ij")
    values = f.value_array(gx, gy)
    return f, GridField((x0, y0), (xs[1] - xs[0], ys[1] - ys[0]), values)


def test_grid_field_second_order_gradients():
    errs = []
    for n in (41, 81):
        exact, grid = _sampled("sin(x)*cos(y)", -2, 2, -2, 2, n)
        rng = np.random.default_rng(4)
        worst = 0.0
        for _ in range(60):
            p = tuple(rng.uniform(-1.8, 1.8, size=2))
            ge = exact.gradient(p)
            gg = grid.gradient(p)
            worst = max(worst, abs(ge[0] - gg[0]), abs(ge[1] - gg[1]))
        errs.append(worst)
    # halving h divides the gradient error by about 4
    assert errs[0] / errs[1] > 2.5


def test_grid_field_bilinear_value_and_hull():
    exact, grid = _sampled("x*y", 0, 1, 0, 1, 11)
    assert grid.value((0.53, 0.71)) == pytest.approx(0.53 * 0.71, abs=1e-12)
    with pytest.raises(OutsideDomainError):
        grid.value((1.5, 0.5))


def test_grid_backed_surface_pair_frames():
    _, g1 = _sampled("0", -1, 1, -1, 1, 61)
    _, g2 = _sampled("1+x/2", -1, 1, -1, 1, 61)
    pair = SurfacePair(g1, g2, Domain(-1, 1, -1, 1))
    fd = frame_for_surfaces(pair, (0.2, 0.3))
    assert fd.psi == pytest.approx(0.0, abs=1e-10)
    assert fd.m2 == pytest.approx(0.5, abs=1e-8)
