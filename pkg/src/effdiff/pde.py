"""Conservative finite-volume solver for the projected diffusion equation.

The projected density p(x, y, t) evolves by

    dp/dt = div( w(x,y) D(x,y) grad( p / w ) ),

where D is the effective tensor in global Cartesian components (the
infinite-rate form replaces D by D0 I).  Working in u = p/w makes p = c w
an exact discrete steady state: every face gradient of u vanishes.

Discretization: cell-centered fields, explicit Euler, face fluxes

    F = - w_face D_face grad_face(u)

with arithmetic-mean face values for w and D.  The normal part of
grad_face(u) is the two-point difference across the face; the transverse
part is the average of the centered in-cell gradients on either side
(one-sided at the outer rows/columns).  Outer boundary faces carry zero
flux, so total mass telescopes exactly.

Stability (explicit scheme): dt <= 0.2 min(hx, hy)^2 / max ||D||.
Off-diagonal tensors get no positivity fix; strongly anisotropic cells
can undershoot (documented limitation).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .geometry import Domain, SurfacePair, frame_from_gradients
from .tensor import MediumParams, effective_tensor, to_cartesian

__all__ = [
    "PdeGrid", "PdeError", "StabilityError", "ConfigurationError",
    "step_finite_rate", "step_infinite_rate", "evolve", "stability_bound",
    "to_cartesian",
]


class PdeError(Exception):
    pass


class StabilityError(PdeError):
    pass


class ConfigurationError(PdeError):
    pass


@dataclass(frozen=True)
class PdeGrid:
    """Cell-centered state: density p, width w, Cartesian tensor field."""

    domain: Domain
    nx: int
    ny: int
    hx: float
    hy: float
    xc: np.ndarray          # (nx,)
    yc: np.ndarray          # (ny,)
    w: np.ndarray           # (nx, ny)
    dten: np.ndarray        # (nx, ny, 2, 2), global components
    p: np.ndarray           # (nx, ny)
    d0: float

    def mass(self) -> float:
        return float(self.p.sum()) * self.hx * self.hy

    def with_density(self, p) -> "PdeGrid":
        p = np.asarray(p, dtype=float)
        if p.shape != (self.nx, self.ny):
            raise ConfigurationError(f"density must have shape ({self.nx}, {self.ny})")
        return replace(self, p=p)

    def variance(self, axis: int) -> float:
        """Centered second moment of p along a coordinate axis."""
        coords = self.xc[:, None] if axis == 0 else self.yc[None, :]
        total = self.p.sum()
        mean = (self.p * coords).sum() / total
        return float((self.p * (coords - mean) ** 2).sum() / total)

    # -- constructors -------------------------------------------------------

    @staticmethod
    def flat_slab(domain, nx, ny, med: MediumParams, p0=None) -> "PdeGrid":
        dom = domain if isinstance(domain, Domain) else Domain(*domain)
        xc, yc, hx, hy = _cells(dom, nx, ny)
        w = np.ones((nx, ny))
        dten = np.zeros((nx, ny, 2, 2))
        dten[..., 0, 0] = med.d0
        dten[..., 1, 1] = med.d0
        p = _initial_density(p0, xc, yc, w)
        return PdeGrid(dom, nx, ny, hx, hy, xc, yc, w, dten, p, med.d0)

    @staticmethod
    def from_surfaces(pair: SurfacePair, med: MediumParams, nx, ny,
                      p0=None) -> "PdeGrid":
        """Sample w and the Cartesian effective tensor at cell centers.

        Cells with an undefined frame (extreme tilt) are a hard error:
        the solver never invents tensor values.
        """
        dom = pair.domain
        xc, yc, hx, hy = _cells(dom, nx, ny)
        gx, gy = np.meshgrid(xc, yc, indexing="ij")
        z1v = pair.z1.value_array(gx, gy)
        z2v = pair.z2.value_array(gx, gy)
        g1x, g1y = pair.z1.gradient_array(gx, gy)
        g2x, g2y = pair.z2.gradient_array(gx, gy)
        w = z2v - z1v
        if not np.all(w > 0):
            raise ConfigurationError("width is not positive on all cells")

        dten = np.empty((nx, ny, 2, 2))
        for i in range(nx):
            for j in range(ny):
                fd = frame_from_gradients(w[i, j],
                                          (g1x[i, j], g1y[i, j]),
                                          (g2x[i, j], g2y[i, j]))
                if fd.extreme_tilt:
                    raise ConfigurationError(
                        f"cell ({xc[i]:.6g}, {yc[j]:.6g}) has an undefined "
                        f"frame (extreme tilt); mask or refine the domain")
                dten[i, j] = to_cartesian(effective_tensor(fd, med))
        p = _initial_density(p0, xc, yc, w)
        return PdeGrid(dom, nx, ny, hx, hy, xc, yc, w, dten, p, med.d0)


def _cells(dom, nx, ny):
    if nx < 2 or ny < 2:
        raise ConfigurationError("grid needs at least 2x2 cells")
    hx = (dom.x1 - dom.x0) / nx
    hy = (dom.y1 - dom.y0) / ny
    xc = dom.x0 + (np.arange(nx) + 0.5) * hx
    yc = dom.y0 + (np.arange(ny) + 0.5) * hy
    return xc, yc, hx, hy


def _initial_density(p0, xc, yc, w):
    if p0 is None:
        return w.copy()
    if callable(p0):
        gx, gy = np.meshgrid(xc, yc, indexing="ij")
        p = np.asarray(p0(gx, gy), dtype=float)
    else:
        p = np.array(p0, dtype=float)
    if p.shape != w.shape:
        raise ConfigurationError("initial density has the wrong shape")
    if np.any(p < 0):
        raise ConfigurationError("initial density must be non-negative")
    return p


# ---------------------------------------------------------------------------
# stepping
# ---------------------------------------------------------------------------

def _spectral_norm_sq(d):
    # largest eigenvalue of D^T D for a (..., 2, 2) stack
    a = d[..., 0, 0] ** 2 + d[..., 1, 0] ** 2
    b = d[..., 0, 1] ** 2 + d[..., 1, 1] ** 2
    c = d[..., 0, 0] * d[..., 0, 1] + d[..., 1, 0] * d[..., 1, 1]
    mid = 0.5 * (a + b)
    return mid + np.sqrt((0.5 * (a - b)) ** 2 + c * c)


def stability_bound(grid: PdeGrid, infinite_rate=False) -> float:
    """Largest admissible explicit time step, 0.2 h^2 / max ||D||."""
    dmax = grid.d0 if infinite_rate else math.sqrt(float(_spectral_norm_sq(grid.dten).max()))
    return 0.2 * min(grid.hx, grid.hy) ** 2 / dmax


def _cell_gradients(u, hx, hy):
    gx = np.empty_like(u)
    gx[1:-1, :] = (u[2:, :] - u[:-2, :]) / (2 * hx)
    gx[0, :] = (u[1, :] - u[0, :]) / hx
    gx[-1, :] = (u[-1, :] - u[-2, :]) / hx
    gy = np.empty_like(u)
    gy[:, 1:-1] = (u[:, 2:] - u[:, :-2]) / (2 * hy)
    gy[:, 0] = (u[:, 1] - u[:, 0]) / hy
    gy[:, -1] = (u[:, -1] - u[:, -2]) / hy
    return gx, gy


def _step(grid, dt, dten):
    hx, hy = grid.hx, grid.hy
    u = grid.p / grid.w
    gx_cell, gy_cell = _cell_gradients(u, hx, hy)

    # x-faces between cells i and i+1
    wf = 0.5 * (grid.w[:-1, :] + grid.w[1:, :])
    d11 = 0.5 * (dten[:-1, :, 0, 0] + dten[1:, :, 0, 0])
    d12 = 0.5 * (dten[:-1, :, 0, 1] + dten[1:, :, 0, 1])
    un = (u[1:, :] - u[:-1, :]) / hx
    ut = 0.5 * (gy_cell[:-1, :] + gy_cell[1:, :])
    fx = -wf * (d11 * un + d12 * ut)

    # y-faces between cells j and j+1
    wf = 0.5 * (grid.w[:, :-1] + grid.w[:, 1:])
    d21 = 0.5 * (dten[:, :-1, 1, 0] + dten[:, 1:, 1, 0])
    d22 = 0.5 * (dten[:, :-1, 1, 1] + dten[:, 1:, 1, 1])
    un = (u[:, 1:] - u[:, :-1]) / hy
    ut = 0.5 * (gx_cell[:, :-1] + gx_cell[:, 1:])
    fy = -wf * (d22 * un + d21 * ut)

    div = np.zeros_like(grid.p)
    div[:-1, :] += fx / hx
    div[1:, :] -= fx / hx
    div[:, :-1] += fy / hy
    div[:, 1:] -= fy / hy
    return grid.with_density(grid.p - dt * div)


def step_finite_rate(grid: PdeGrid, dt: float) -> PdeGrid:
    """One explicit Euler step of dp/dt = div(w D grad(p/w))."""
    if dt > stability_bound(grid) * (1 + 1e-12):
        raise StabilityError(
            f"dt = {dt:.3g} exceeds the stability bound "
            f"{stability_bound(grid):.3g}")
    return _step(grid, dt, grid.dten)


def step_infinite_rate(grid: PdeGrid, dt: float) -> PdeGrid:
    """One explicit Euler step of dp/dt = div(w grad(p/w)) * D0."""
    if dt > stability_bound(grid, infinite_rate=True) * (1 + 1e-12):
        raise StabilityError(
            f"dt = {dt:.3g} exceeds the stability bound "
            f"{stability_bound(grid, infinite_rate=True):.3g}")
    iso = np.zeros_like(grid.dten)
    iso[..., 0, 0] = grid.d0
    iso[..., 1, 1] = grid.d0
    return _step(grid, dt, iso)


def evolve(grid: PdeGrid, dt: float, n_steps: int, mode="finite",
           callback=None) -> PdeGrid:
    """Run n_steps of the chosen mode; callback(k, grid) after each step."""
    step = step_finite_rate if mode == "finite" else step_infinite_rate
    for k in range(n_steps):
        grid = step(grid, dt)
        if callback is not None:
            callback(k + 1, grid)
    return grid
