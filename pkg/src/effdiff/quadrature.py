"""Numerical reconstruction of the effective tensor for plane wedges.

For a wedge with tilt psi and slopes m1 < m2 the harmonic family

    Q_w = cos(w) log(X^2 + Z^2)/2 + sin(w) Y,      0 <= w < 2 pi,

satisfies reflective conditions on both planes (X, Y, Z are the wedge
coordinates: Y along the intersection line, bounding planes Z = m_i X).
Each member yields one linear condition D v_w = u_w with

    u_w = (D0 / w(x,y)) ( int_z1^z2 dQ_w/dx dz , int_z1^z2 dQ_w/dy dz ),
    v_w = grad( q_w / w ),        q_w = int_z1^z2 Q_w dz,

and w in {0, pi/2} determines D completely.  The integrals are evaluated
with Gauss-Legendre quadrature and the outer gradient with central
differences, so this path shares no code with the closed form and serves
as an independent oracle for it.

Parallel planes (m1 = m2 = mu) use the slab family Q_a = x + mu z,
Q_b = y, which are harmonic with reflective conditions on both planes of
the tilted slab.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .geometry import PlaneConfig, frame_for_planes
from .tensor import EPS_M, MediumParams

APEX_THRESHOLD = 1e-6


class OracleError(Exception):
    pass


class ApexProximityError(OracleError):
    pass


class SingularSystemError(OracleError):
    pass


@dataclass(frozen=True)
class WedgeQuadratureJob:
    """One oracle evaluation: wedge frame, evaluation point, resolution."""

    psi: float
    m1: float
    m2: float
    eval_point: tuple = (1.0, 0.0)
    points: int = 128
    fd_step: float = 1e-5

    @staticmethod
    def from_config(cfg: PlaneConfig, **kw) -> "WedgeQuadratureJob":
        fr = frame_for_planes(cfg)
        return WedgeQuadratureJob(fr.psi, fr.m1, fr.m2, **kw)


def _gauss_legendre_integral(f, a, b, nodes, weights):
    mid = 0.5 * (a + b)
    half = 0.5 * (b - a)
    return half * float(np.dot(weights, f(mid + half * nodes)))


def quadrature_tensor(job: WedgeQuadratureJob,
                      med: MediumParams = MediumParams(1.0)) -> np.ndarray:
    """Effective tensor of the wedge, reconstructed numerically.

    Raises ApexProximityError when the evaluation point sits too close to
    the wedge apex and SingularSystemError when the two gradient columns
    do not determine the matrix.
    """
    psi, m1, m2 = job.psi, job.m1, job.m2
    if not all(map(math.isfinite, (psi, m1, m2))):
        raise OracleError("non-finite wedge parameters")
    if math.pi / 2 - abs(psi) < 1e-9:
        raise OracleError("extreme tilt: wedge coordinates are undefined")

    if abs(m2 - m1) <= EPS_M * (1.0 + abs(m1) + abs(m2)):
        return _parallel_slab_tensor(0.5 * (m1 + m2), job, med)

    x, y = float(job.eval_point[0]), float(job.eval_point[1])
    if x < APEX_THRESHOLD * max(1.0, abs(y)):
        raise ApexProximityError(f"evaluation point x = {x:.3g} is too close to the apex")
    if (m2 - m1) * x <= 0:
        raise OracleError("evaluation point is outside the wedge interior")

    sp, cp = math.sin(psi), math.cos(psi)
    sec = 1.0 / cp
    nodes, weights = np.polynomial.legendre.leggauss(job.points)

    def z_bounds(px, py):
        z1 = (m1 * px + py * sp) * sec
        z2 = (m2 * px + py * sp) * sec
        return z1, z2

    def column(omega):
        cw, sw = math.cos(omega), math.sin(omega)

        def dqdx(px, py):
            def f(z):
                zz = -py * sp + z * cp
                return cw * px / (px * px + zz * zz)
            return f

        def dqdy(px, py):
            def f(z):
                zz = -py * sp + z * cp
                return -cw * zz * sp / (px * px + zz * zz) + sw * cp
            return f

        def q_over_w(px, py):
            z1, z2 = z_bounds(px, py)

            def f(z):
                zz = -py * sp + z * cp
                yy = py * cp + z * sp
                return cw * 0.5 * np.log(px * px + zz * zz) + sw * yy
            return _gauss_legendre_integral(f, z1, z2, nodes, weights) / (z2 - z1)

        z1, z2 = z_bounds(x, y)
        width = z2 - z1
        ix = _gauss_legendre_integral(dqdx(x, y), z1, z2, nodes, weights)
        iy = _gauss_legendre_integral(dqdy(x, y), z1, z2, nodes, weights)
        u = np.array([ix, iy]) * (med.d0 / width)

        h = job.fd_step * max(1.0, abs(x), abs(y))
        v = np.array([
            (q_over_w(x + h, y) - q_over_w(x - h, y)) / (2 * h),
            (q_over_w(x, y + h) - q_over_w(x, y - h)) / (2 * h),
        ])
        return u, v

    u0, v0 = column(0.0)
    u1, v1 = column(math.pi / 2)
    umat = np.column_stack([u0, u1])
    vmat = np.column_stack([v0, v1])
    det = vmat[0, 0] * vmat[1, 1] - vmat[0, 1] * vmat[1, 0]
    scale = np.linalg.norm(v0) * np.linalg.norm(v1)
    if abs(det) <= 1e-10 * max(scale, 1e-30):
        raise SingularSystemError("gradient columns are linearly dependent")
    return umat @ np.linalg.inv(vmat)


def _parallel_slab_tensor(mu, job, med):
    """Oracle for the parallel fallback: slab between z = mu x and
    z = mu x + 1, probed with the linear family Q_a = x + mu z, Q_b = y."""
    x, y = float(job.eval_point[0]), float(job.eval_point[1])
    nodes, weights = np.polynomial.legendre.leggauss(job.points)

    def z_bounds(px):
        return mu * px, mu * px + 1.0

    def column(fn, dfdx, dfdy):
        def q_over_w(px, py):
            z1, z2 = z_bounds(px)
            val = _gauss_legendre_integral(lambda z: fn(px, py, z),
                                           z1, z2, nodes, weights)
            return val / (z2 - z1)

        z1, z2 = z_bounds(x)
        width = z2 - z1
        ix = _gauss_legendre_integral(lambda z: dfdx(x, y, z), z1, z2, nodes, weights)
        iy = _gauss_legendre_integral(lambda z: dfdy(x, y, z), z1, z2, nodes, weights)
        u = np.array([ix, iy]) * (med.d0 / width)
        h = job.fd_step * max(1.0, abs(x), abs(y))
        v = np.array([
            (q_over_w(x + h, y) - q_over_w(x - h, y)) / (2 * h),
            (q_over_w(x, y + h) - q_over_w(x, y - h)) / (2 * h),
        ])
        return u, v

    ones = lambda px, py, z: np.ones_like(np.asarray(z, float))
    zeros = lambda px, py, z: np.zeros_like(np.asarray(z, float))
    u0, v0 = column(lambda px, py, z: px + mu * z, ones, zeros)
    u1, v1 = column(lambda px, py, z: py + 0.0 * z, zeros, ones)
    umat = np.column_stack([u0, u1])
    vmat = np.column_stack([v0, v1])
    det = vmat[0, 0] * vmat[1, 1] - vmat[0, 1] * vmat[1, 0]
    if abs(det) <= 1e-12:
        raise SingularSystemError("slab gradient columns are linearly dependent")
    return umat @ np.linalg.inv(vmat)
