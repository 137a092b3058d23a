"""Surface pairs and per-point frame geometry.

The confinement region is z1(x,y) <= z <= z2(x,y) with width w = z2 - z1 > 0.
Every point carries a frame adapted to the width gradient,

    xhat = grad(w)/|grad(w)|,   yhat = gradperp(w)/|gradperp(w)|,

where gradperp = (-d/dy, d/dx), together with the tilt

    psi = arcsin( grad(z1).gradperp(z2) / (sqrt(1+|grad z1|^2) sqrt(1+|grad z2|^2)) )

and the slopes of the two bounding tangent planes

    m_i = grad(z_i).grad(w) / ( (grad(z_i).gradperp(w)) sin(psi) + |grad w| cos(psi) ).

The same quantities are available for a pure two-plane configuration given by
unit normals (frame_for_planes); there the tilt is the angle between the
plane intersection line and the projection plane.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import expr as _expr

EPS_GRAD = 1e-10     # |grad w| below this: frame direction is unreliable
EPS_PARALLEL = 1e-12  # |n1 x n2| below this: planes treated as parallel


class GeometryError(Exception):
    pass


class OutsideDomainError(GeometryError):
    pass


class SurfaceValidationError(GeometryError):
    """Width w = z2 - z1 is not strictly positive on the domain."""


class DegenerateConfigError(GeometryError):
    """Frame undefined: intersection line parallel to the projection
    direction (extreme tilt) or a vertical parallel-plane configuration."""

    def __init__(self, message, psi=None):
        super().__init__(message)
        self.psi = psi


# ---------------------------------------------------------------------------
# Scalar fields
# ---------------------------------------------------------------------------

class ScalarField:
    """Twice-differentiable function of (x, y).

    Two backings: a parsed expression (exact symbolic derivatives) or a
    uniform grid (bilinear values, interpolated central differences).
    """

    def value(self, p) -> float:
        x, y = p
        return float(self.value_array(np.asarray(x, float), np.asarray(y, float)))

    def gradient(self, p):
        x, y = p
        gx, gy = self.gradient_array(np.asarray(x, float), np.asarray(y, float))
        return float(gx), float(gy)

    def value_array(self, x, y):
        raise NotImplementedError

    def gradient_array(self, x, y):
        raise NotImplementedError

    @staticmethod
    def from_expression(source) -> "ExpressionField":
        return ExpressionField(source)

    @staticmethod
    def from_grid(origin, spacing, values) -> "GridField":
        return GridField(origin, spacing, values)


class ExpressionField(ScalarField):
    def __init__(self, source):
        if isinstance(source, str):
            self.tree = _expr.parse(source)
        else:
            self.tree = source
        self.dx = _expr.differentiate(self.tree, "x")
        self.dy = _expr.differentiate(self.tree, "y")

    def value_array(self, x, y):
        return _expr.evaluate(self.tree, (x, y))

    def gradient_array(self, x, y):
        return _expr.evaluate(self.dx, (x, y)), _expr.evaluate(self.dy, (x, y))


class GridField(ScalarField):
    """Uniform lattice of samples; queries must stay inside the hull."""

    def __init__(self, origin, spacing, values):
        self.x0, self.y0 = float(origin[0]), float(origin[1])
        self.hx, self.hy = float(spacing[0]), float(spacing[1])
        if self.hx <= 0 or self.hy <= 0:
            raise GeometryError("grid spacing must be positive")
        self.values = np.asarray(values, dtype=float)
        if self.values.ndim != 2 or min(self.values.shape) < 3:
            raise GeometryError("grid backing needs at least a 3x3 lattice")
        self.nx, self.ny = self.values.shape
        self.x1 = self.x0 + (self.nx - 1) * self.hx
        self.y1 = self.y0 + (self.ny - 1) * self.hy
        self._dx = self._nodal_derivative(axis=0) / self.hx
        self._dy = self._nodal_derivative(axis=1) / self.hy

    def _nodal_derivative(self, axis):
        v = self.values if axis == 0 else self.values.T
        d = np.empty_like(v)
        d[1:-1] = 0.5 * (v[2:] - v[:-2])
        # second-order one-sided stencils at the edges
        d[0] = -1.5 * v[0] + 2.0 * v[1] - 0.5 * v[2]
        d[-1] = 1.5 * v[-1] - 2.0 * v[-2] + 0.5 * v[-3]
        return d if axis == 0 else d.T

    def _locate(self, x, y):
        tolx, toly = 1e-9 * self.hx, 1e-9 * self.hy
        if np.any(x < self.x0 - tolx) or np.any(x > self.x1 + tolx) \
                or np.any(y < self.y0 - toly) or np.any(y > self.y1 + toly):
            raise OutsideDomainError("query point outside grid hull")
        fx = np.clip((x - self.x0) / self.hx, 0.0, self.nx - 1.0)
        fy = np.clip((y - self.y0) / self.hy, 0.0, self.ny - 1.0)
        ix = np.minimum(fx.astype(int), self.nx - 2)
        iy = np.minimum(fy.astype(int), self.ny - 2)
        return ix, iy, fx - ix, fy - iy

    def _bilinear(self, table, x, y):
        ix, iy, tx, ty = self._locate(x, y)
        v00 = table[ix, iy]
        v10 = table[ix + 1, iy]
        v01 = table[ix, iy + 1]
        v11 = table[ix + 1, iy + 1]
        return ((1 - tx) * (1 - ty) * v00 + tx * (1 - ty) * v10
                + (1 - tx) * ty * v01 + tx * ty * v11)

    def value_array(self, x, y):
        return self._bilinear(self.values, x, y)

    def gradient_array(self, x, y):
        return self._bilinear(self._dx, x, y), self._bilinear(self._dy, x, y)


# ---------------------------------------------------------------------------
# Surface pair
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Domain:
    x0: float
    x1: float
    y0: float
    y1: float

    def __post_init__(self):
        if not (self.x0 < self.x1 and self.y0 < self.y1):
            raise GeometryError("domain rectangle is empty")

    def contains(self, p):
        tol = 1e-9 * max(self.x1 - self.x0, self.y1 - self.y0)
        return (self.x0 - tol <= p[0] <= self.x1 + tol
                and self.y0 - tol <= p[1] <= self.y1 + tol)

    def lattice(self, nx, ny):
        return (np.linspace(self.x0, self.x1, nx),
                np.linspace(self.y0, self.y1, ny))


class SurfacePair:
    """Ordered pair (z1, z2) of scalar fields with w = z2 - z1 > 0.

    Positivity is checked on a validation lattice at construction
    (default 64x64) and re-checked at every queried point.
    """

    def __init__(self, z1: ScalarField, z2: ScalarField, domain, validation=64):
        self.z1 = z1
        self.z2 = z2
        self.domain = domain if isinstance(domain, Domain) else Domain(*domain)
        if validation:
            xs, ys = self.domain.lattice(validation, validation)
            gx, gy = np.meshgrid(xs, ys, indexing="ij")
            w = z2.value_array(gx, gy) - z1.value_array(gx, gy)
            if not np.all(w > 0):
                i = np.unravel_index(int(np.argmin(w)), w.shape)
                raise SurfaceValidationError(
                    f"w = z2 - z1 is {w[i]:.6g} <= 0 at "
                    f"({gx[i]:.6g}, {gy[i]:.6g})")

    def width(self, p) -> float:
        if not self.domain.contains(p):
            raise OutsideDomainError(f"point {p} outside domain")
        w = self.z2.value(p) - self.z1.value(p)
        if w <= 0:
            raise SurfaceValidationError(f"non-positive width {w:.6g} at {p}")
        return w


def width(pair: SurfacePair, p) -> float:
    return pair.width(p)


# ---------------------------------------------------------------------------
# Frames
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class FrameData:
    """Per-point geometric bundle for a surface pair."""

    w: float
    gradw: tuple
    gradperpw: tuple
    xhat: tuple
    yhat: tuple
    psi: float
    m1: float
    m2: float
    mu: float
    degenerate_frame: bool = False
    extreme_tilt: bool = False


@dataclass(frozen=True)
class PlaneConfig:
    """Two planes given by unit normals, plus the projection direction."""

    n1: np.ndarray
    n2: np.ndarray
    zdir: np.ndarray = field(default_factory=lambda: np.array([0.0, 0.0, 1.0]))

    def __post_init__(self):
        for name in ("n1", "n2", "zdir"):
            v = np.asarray(getattr(self, name), dtype=float)
            norm = float(np.linalg.norm(v))
            if norm < 1e-300:
                raise GeometryError(f"{name} must be a non-zero vector")
            object.__setattr__(self, name, v / norm)


@dataclass(frozen=True)
class PlaneFrame:
    xhat: np.ndarray
    yhat: np.ndarray
    zhat: np.ndarray
    psi: float
    m1: float
    m2: float
    parallel: bool = False


def _perp_to(z):
    """Deterministic unit vector orthogonal to z (used when the common
    normal of parallel planes is along the projection direction)."""
    cand = np.array([0.0, 1.0, 0.0]) - z[1] * z
    if np.linalg.norm(cand) < 1e-6:
        cand = np.array([1.0, 0.0, 0.0]) - z[0] * z
    return cand / np.linalg.norm(cand)


def frame_for_planes(cfg: PlaneConfig) -> PlaneFrame:
    """Adapted frame, tilt and slopes for a two-plane configuration.

    The intersection direction n = n1 x n2 / |n1 x n2| gives the tilt
    psi = arcsin(n.zhat); the frame is xhat = n x zhat / |n x zhat|,
    yhat = zhat x xhat, and the slopes solve Z = m_i X in the rotated
    frame.  Parallel planes fall back to the frame built from the common
    normal (a,b,c): n = (-b,a,0)/sqrt(a^2+b^2), or (0,1,0) when a=b=0,
    giving psi = 0 and m1 = m2.

    Raises DegenerateConfigError when the intersection line is parallel
    to the projection direction (|psi| = pi/2) or parallel planes contain
    the projection direction.
    """
    n1, n2, z = cfg.n1, cfg.n2, cfg.zdir
    cross = np.cross(n1, n2)
    norm_cross = float(np.linalg.norm(cross))

    if norm_cross < EPS_PARALLEL:
        # parallel planes; align the normals before reading components
        nc = n2 if float(np.dot(n1, n2)) >= 0 else -n2
        c = float(np.dot(nc, z))
        if abs(c) < EPS_PARALLEL:
            raise DegenerateConfigError(
                "parallel planes contain the projection direction", psi=math.pi / 2)
        horiz = nc - c * z
        hnorm = float(np.linalg.norm(horiz))
        if hnorm > EPS_PARALLEL:
            n = np.cross(z, nc) / float(np.linalg.norm(np.cross(z, nc)))
        else:
            n = _perp_to(z)
        psi = math.asin(max(-1.0, min(1.0, float(np.dot(n, z)))))
        parallel = True
    else:
        n = cross / norm_cross
        sinpsi = max(-1.0, min(1.0, float(np.dot(n, z))))
        psi = math.asin(sinpsi)
        if float(np.linalg.norm(np.cross(n, z))) < EPS_PARALLEL:
            raise DegenerateConfigError(
                "intersection line parallel to the projection direction",
                psi=math.copysign(math.pi / 2, sinpsi))
        parallel = False

    xhat = np.cross(n, z)
    xhat = xhat / float(np.linalg.norm(xhat))
    yhat = np.cross(z, xhat)

    sp, cp = math.sin(psi), math.cos(psi)
    slopes = []
    for ni in (n1, n2):
        den = float(np.dot(ni, yhat)) * sp - float(np.dot(ni, z)) * cp
        if abs(den) < EPS_PARALLEL:
            raise DegenerateConfigError(
                "plane is vertical in the adapted frame (infinite slope)",
                psi=psi)
        slopes.append(float(np.dot(ni, xhat)) / den)
    return PlaneFrame(xhat, yhat, np.asarray(z), psi, slopes[0], slopes[1],
                      parallel=parallel)


def frame_from_gradients(w, g1, g2, eps_grad=EPS_GRAD) -> FrameData:
    """Frame bundle from precomputed surface gradients at one point.

    This is the kernel behind frame_for_surfaces; it is also used by
    batched grid evaluation.
    """
    g1x, g1y = float(g1[0]), float(g1[1])
    g2x, g2y = float(g2[0]), float(g2[1])
    gwx, gwy = g2x - g1x, g2y - g1y
    gperp = (-gwy, gwx)
    norm_gw = math.hypot(gwx, gwy)

    cross12 = g1x * (-g2y) + g1y * g2x          # grad(z1).gradperp(z2)
    s1 = math.sqrt(1.0 + g1x * g1x + g1y * g1y)
    s2 = math.sqrt(1.0 + g2x * g2x + g2y * g2y)
    sinpsi = max(-1.0, min(1.0, cross12 / (s1 * s2)))
    psi = math.asin(sinpsi)

    if norm_gw < eps_grad:
        # gradients (nearly) cancel: generic frame undefined
        par_tol = 1e-10 * max(1.0, math.hypot(g1x, g1y) * math.hypot(g2x, g2y))
        if abs(cross12) <= par_tol:
            # parallel tangent planes: common slope, frame from grad z1
            n1 = math.hypot(g1x, g1y)
            if n1 > eps_grad:
                xhat = (g1x / n1, g1y / n1)
            else:
                xhat = (1.0, 0.0)
            yhat = (-xhat[1], xhat[0])
            m1 = g1x * xhat[0] + g1y * xhat[1]
            m2 = g2x * xhat[0] + g2y * xhat[1]
            return FrameData(w, (gwx, gwy), gperp, xhat, yhat, 0.0,
                             m1, m2, 0.5 * (m1 + m2), degenerate_frame=True)
        nan = float("nan")
        return FrameData(w, (gwx, gwy), gperp, (nan, nan), (nan, nan), psi,
                         nan, nan, nan, degenerate_frame=True, extreme_tilt=True)

    xhat = (gwx / norm_gw, gwy / norm_gw)
    yhat = (gperp[0] / norm_gw, gperp[1] / norm_gw)
    sp, cp = sinpsi, math.cos(psi)
    slopes = []
    for gx, gy in ((g1x, g1y), (g2x, g2y)):
        num = gx * gwx + gy * gwy
        den = (gx * gperp[0] + gy * gperp[1]) * sp + norm_gw * cp
        if den == 0.0:
            nan = float("nan")
            return FrameData(w, (gwx, gwy), gperp, xhat, yhat, psi,
                             nan, nan, nan, extreme_tilt=True)
        slopes.append(num / den)
    m1, m2 = slopes
    return FrameData(w, (gwx, gwy), gperp, xhat, yhat, psi, m1, m2,
                     0.5 * (m1 + m2))


def frame_for_surfaces(pair: SurfacePair, p) -> FrameData:
    """Frame bundle of the surface pair at p = (x, y)."""
    w = pair.width(p)  # validates domain membership and positivity
    g1 = pair.z1.gradient(p)
    g2 = pair.z2.gradient(p)
    return frame_from_gradients(w, g1, g2)


def surface_normals(g1, g2):
    """Outward unit normals of the tangent planes at a point, from the
    surface gradients: n1 points below the lower surface, n2 above the
    upper one."""
    s1 = math.sqrt(1.0 + g1[0] ** 2 + g1[1] ** 2)
    s2 = math.sqrt(1.0 + g2[0] ** 2 + g2[1] ** 2)
    n1 = np.array([g1[0], g1[1], -1.0]) / s1
    n2 = np.array([-g2[0], -g2[1], 1.0]) / s2
    return n1, n2
