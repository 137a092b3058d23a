"""Effective diffusion matrix, degenerate limits, polar decomposition.

In the frame adapted to the width gradient the projected diffusion operator
is the 2x2 matrix (acting on component columns, flux = D . gradient)

    D = D0 [ omega                 -omega mu sin(psi)            ]
           [ -rho sin(psi)          cos(psi)^2 + mu rho sin(psi)^2 ]

with mu = (m1+m2)/2 and

    rho + i omega = log((1 + i m2)/(1 + i m1)) / (m2 - m1).

omega is evaluated through atan2(m2 - m1, 1 + m1 m2), which reproduces
arctan(m2) - arctan(m1) on its full range; the naive principal-branch
complex log is wrong when 1 + m1 m2 < 0.  As m2 -> m1 the quotient tends
to (mu + i)/(1 + mu^2), which is used below a relative spacing eps_m.

At tilt +-pi/2 the matrix degenerates to the rank-1 pair

    D- = D0 [omega, mu omega; rho, mu rho],
    D+ = D0 [omega, -mu omega; -rho, mu rho],

with eigenvalues {0, D0 (mu rho + omega)}.  The image of the unit circle
under a non-degenerate D is an ellipse whose axes come from the symmetric
factor of the polar decomposition D = S R (S symmetric PSD, R orthogonal).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .geometry import FrameData

EPS_M = 1e-7        # relative switch to the coincident-slope limit
EPS_PSI = 1e-9      # margin on pi/2 - |psi| for the extreme-tilt guard
EPS_DEGENERATE = 1e-12  # lambda2/lambda1 below this: degenerate ellipse


class TensorError(Exception):
    pass


class ExtremeTiltError(TensorError):
    """|psi| is at (or numerically indistinguishable from) pi/2; use
    extreme_tilt_tensor with the slopes instead."""


@dataclass(frozen=True)
class MediumParams:
    """Bulk medium: isotropic diffusion constant D0 (length^2/time)."""

    d0: float = 1.0

    def __post_init__(self):
        if not (self.d0 > 0 and math.isfinite(self.d0)):
            raise TensorError(f"D0 must be positive and finite, got {self.d0}")


@dataclass(frozen=True)
class EffectiveTensor:
    """2x2 operator matrix in the (xhat, yhat) frame, flux = coeffs @ grad."""

    coeffs: np.ndarray
    xhat: tuple
    yhat: tuple
    psi: float
    m1: float
    m2: float
    degenerate_frame: bool = False
    extreme_tilt: bool = False


@dataclass(frozen=True)
class EllipsoidData:
    """Polar factorization D = S R and the induced ellipse geometry.

    lambda1 >= lambda2 >= 0 are the semi-axes, f1/f2 the axis directions
    (eigenvectors of S) and e_i = R^T f_i the principal response
    directions: gradients along e_i map onto the ellipse axes.
    """

    S: np.ndarray
    R: np.ndarray
    lambda1: float
    lambda2: float
    f1: np.ndarray
    f2: np.ndarray
    e1: np.ndarray
    e2: np.ndarray
    degenerate: bool


# ---------------------------------------------------------------------------
# scalar building blocks
# ---------------------------------------------------------------------------

def rho_omega(m1: float, m2: float) -> tuple:
    """Real and imaginary parts of log((1+i m2)/(1+i m1))/(m2-m1).

    Below |m2-m1| <= eps_m (1+|m1|+|m2|) the coincident-slope limit
    (mu/(1+mu^2), 1/(1+mu^2)) with mu = (m1+m2)/2 is returned.
    """
    if not (math.isfinite(m1) and math.isfinite(m2)):
        raise TensorError(f"slopes must be finite, got ({m1}, {m2})")
    dm = m2 - m1
    if abs(dm) <= EPS_M * (1.0 + abs(m1) + abs(m2)):
        mu = 0.5 * (m1 + m2)
        den = 1.0 + mu * mu
        return mu / den, 1.0 / den
    omega = math.atan2(dm, 1.0 + m1 * m2) / dm
    rho = 0.5 * math.log((1.0 + m2 * m2) / (1.0 + m1 * m1)) / dm
    return rho, omega


def zero_tilt_omega(f1p: float, f2p: float, gz: float) -> float:
    """Effective diffusivity factor along grad(w) for surfaces of the form
    z_i = f_i(z(x,y)):  (arctan(f2' |grad z|) - arctan(f1' |grad z|)) /
    ((f2' - f1') |grad z|), with the 1/(1 + (f1' |grad z|)^2) limit."""
    if gz < 0:
        raise TensorError("gradient magnitude must be non-negative")
    return rho_omega(f1p * gz, f2p * gz)[1]


# ---------------------------------------------------------------------------
# the effective tensor
# ---------------------------------------------------------------------------

def effective_tensor(fd: FrameData, med: MediumParams) -> EffectiveTensor:
    """Effective diffusion matrix in the frame carried by `fd`."""
    if fd.extreme_tilt:
        raise ExtremeTiltError(
            "frame is flagged extreme; use extreme_tilt_tensor(m1, m2, sign)")
    if math.pi / 2 - abs(fd.psi) < EPS_PSI:
        raise ExtremeTiltError(
            f"tilt {fd.psi:.12g} is within {EPS_PSI} of pi/2")
    if not (math.isfinite(fd.m1) and math.isfinite(fd.m2)):
        raise TensorError("frame carries non-finite slopes")
    d0 = med.d0
    rho, omega = rho_omega(fd.m1, fd.m2)
    mu = fd.mu
    sp = math.sin(fd.psi)
    cp = math.cos(fd.psi)
    coeffs = np.array([
        [d0 * omega, -d0 * omega * mu * sp],
        [-d0 * rho * sp, d0 * (cp * cp + mu * rho * sp * sp)],
    ])
    return EffectiveTensor(coeffs, fd.xhat, fd.yhat, fd.psi, fd.m1, fd.m2,
                           degenerate_frame=fd.degenerate_frame)


def extreme_tilt_tensor(m1: float, m2: float, sign: str, med: MediumParams):
    """Rank-1 tensors at tilt = sign * pi/2, plus the degenerate ellipse.

    Returns (EffectiveTensor, (endpoint_plus, endpoint_minus)) where the
    endpoints are +-D0 (mu rho + omega)/sqrt(omega^2+rho^2) * (omega, -+rho),
    the diametrically opposite ends of the collapsed ellipse.
    """
    if sign not in ("+", "-"):
        raise TensorError("sign must be '+' or '-'")
    d0 = med.d0
    rho, omega = rho_omega(m1, m2)
    mu = 0.5 * (m1 + m2)
    if sign == "-":
        coeffs = d0 * np.array([[omega, mu * omega], [rho, mu * rho]])
        direction = np.array([omega, rho])
        psi = -math.pi / 2
    else:
        coeffs = d0 * np.array([[omega, -mu * omega], [-rho, mu * rho]])
        direction = np.array([omega, -rho])
        psi = math.pi / 2
    scale = d0 * (mu * rho + omega) / math.hypot(omega, rho)
    endpoints = (scale * direction, -scale * direction)
    tensor = EffectiveTensor(coeffs, (1.0, 0.0), (0.0, 1.0), psi, m1, m2,
                             extreme_tilt=True)
    return tensor, endpoints


def channel_recovery(z1, z2, x: float, med: MediumParams) -> np.ndarray:
    """Planar-channel matrix for surfaces depending on x only:

        D = D0 diag( (arctan z2' - arctan z1')/(z2' - z1'), 1 ),

    with the 1/(1 + z1'^2) limit at the points where z2' = z1'."""
    if z2.value((x, 0.0)) <= z1.value((x, 0.0)):
        raise TensorError(f"channel is not open at x = {x}")
    z1p = z1.gradient((x, 0.0))[0]
    z2p = z2.gradient((x, 0.0))[0]
    omega = rho_omega(z1p, z2p)[1]
    return med.d0 * np.array([[omega, 0.0], [0.0, 1.0]])


# ---------------------------------------------------------------------------
# polar decomposition and the diffusion ellipse
# ---------------------------------------------------------------------------

def _sym_eigen_2x2(a, b, c):
    """Eigen-decomposition of [[a, b], [b, c]]: (l1, l2, v1) with l1 >= l2
    and v1 the unit eigenvector of l1."""
    mid = 0.5 * (a + c)
    half_gap = math.hypot(0.5 * (a - c), b)
    l1, l2 = mid + half_gap, mid - half_gap
    # pick the better conditioned eigenvector expression
    v_a = (b, l1 - a)
    v_b = (l1 - c, b)
    v = v_a if math.hypot(*v_a) >= math.hypot(*v_b) else v_b
    norm = math.hypot(*v)
    if norm == 0.0:  # already diagonal with equal eigenvalues
        return l1, l2, np.array([1.0, 0.0])
    return l1, l2, np.array([v[0] / norm, v[1] / norm])


def _rot90(v):
    return np.array([-v[1], v[0]])


def polar_decompose(tensor) -> EllipsoidData:
    """Polar factors of a 2x2 matrix: D = S R with S = (D D^T)^(1/2)
    symmetric PSD and R orthogonal (a rotation when det D >= 0).

    Accepts an EffectiveTensor or a plain 2x2 array.  For rank-deficient
    input the pseudo-inverse branch completes R to a rotation and the
    result is flagged degenerate.
    """
    d = tensor.coeffs if isinstance(tensor, EffectiveTensor) else np.asarray(tensor, float)
    if d.shape != (2, 2) or not np.all(np.isfinite(d)):
        raise TensorError("need a finite 2x2 matrix")

    m = d @ d.T
    l1sq, l2sq, f1 = _sym_eigen_2x2(m[0, 0], m[0, 1], m[1, 1])
    lam1 = math.sqrt(max(l1sq, 0.0))
    lam2 = math.sqrt(max(l2sq, 0.0))
    f2 = _rot90(f1)

    s = lam1 * np.outer(f1, f1) + lam2 * np.outer(f2, f2)
    s[1, 0] = s[0, 1]  # stored exactly symmetric

    degenerate = lam2 <= EPS_DEGENERATE * lam1
    if lam1 == 0.0:
        r = np.eye(2)
        g1, g2 = f1.copy(), f2.copy()
    else:
        g1 = d.T @ f1
        g1 = g1 / float(np.linalg.norm(g1))
        det = d[0, 0] * d[1, 1] - d[0, 1] * d[1, 0]
        if degenerate or det == 0.0:
            orient = 1.0  # rank-1: complete with a proper rotation
        else:
            orient = math.copysign(1.0, det)
        g2 = orient * _rot90(g1)
        r = np.outer(f1, g1) + np.outer(f2, g2)

    e1 = r.T @ f1
    e2 = r.T @ f2
    return EllipsoidData(s, r, lam1, lam2, f1, f2, e1, e2, degenerate)


def to_cartesian(tensor: EffectiveTensor) -> np.ndarray:
    """Operator matrix in global (x, y) components: B M B^T with
    B = [xhat yhat] as columns.  Fails on an undefined frame."""
    b = np.array([[tensor.xhat[0], tensor.yhat[0]],
                  [tensor.xhat[1], tensor.yhat[1]]])
    if not np.all(np.isfinite(b)):
        raise TensorError("frame is degenerate; no Cartesian components")
    return b @ tensor.coeffs @ b.T
