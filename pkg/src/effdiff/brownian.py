"""Reflected Brownian motion between two confining surfaces.

Walkers take Gaussian steps with per-axis variance 2 D0 dt and reflect
specularly off the surfaces.  The projected tensor is estimated from the
covariance of the total (x, y) displacements over the elapsed time T:

    D_ij = cov(dx_i, dx_j) / (2 T),

with jackknife standard errors over contiguous particle blocks.

Two geometries:

* Slab: two parallel planes n.r in [d1, d2].  Specular reflection off a
  plane only alters the normal coordinate, so the normal component is
  folded exactly (a triangle wave in the unfolded coordinate); this is
  the closed-form limit of bisecting to each crossing and reflecting.
  Quantitatively trustworthy: the tensor is position independent.
* SurfacePair: general curved surfaces.  Crossings are detected by the
  sign change of z - z_i(x, y) along each step, located by bisection,
  and the remaining displacement is reflected about the local surface
  normal (up to 8 bounces per step).  The estimator mixes positions of a
  position-dependent tensor, so results are report-only.

Randomness: one stream per particle, derived from (seed, particle index)
via numpy SeedSequence spawn keys.  Chunk sizes are a pure function of the
job, so repeated runs are byte-identical; the walks themselves are
chunk-invariant and independent of any worker count (displacement
accumulators agree across chunkings up to float summation order).
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass

import numpy as np

from .geometry import SurfacePair

MAX_BOUNCES = 8
DOUBLE_CROSS_LIMIT = 1e-3    # abort above this fraction of steps
REPROJECT_TOL = 1e-12
_CHUNK_BUDGET = 24_000_000   # buffered increments (doubles) per chunk

try:
    from numba import njit

    _NUMBA_AVAILABLE = True
except ImportError:  # pragma: no cover - depends on environment
    _NUMBA_AVAILABLE = False

    def njit(*args, **kwargs):
        def wrap(fn):
            return fn
        if len(args) == 1 and callable(args[0]):
            return args[0]
        return wrap

USE_FOLD_KERNEL = _NUMBA_AVAILABLE and \
    os.environ.get("EFFDIFF_NUMBA", "1").lower() not in ("0", "false", "no")


class BrownianError(Exception):
    pass


class StepTooLargeError(BrownianError):
    pass


@dataclass(frozen=True)
class Slab:
    """Region between parallel planes: d1 <= normal . r <= d2."""

    normal: np.ndarray
    d1: float
    d2: float

    def __post_init__(self):
        n = np.asarray(self.normal, dtype=float)
        norm = float(np.linalg.norm(n))
        if norm < 1e-300:
            raise BrownianError("slab normal must be non-zero")
        object.__setattr__(self, "normal", n / norm)
        if not self.d2 > self.d1:
            raise BrownianError("slab needs d2 > d1")

    @staticmethod
    def from_slope(mu: float, gap: float = 1.0) -> "Slab":
        """Slab between z = mu x and z = mu x + gap (gap measured
        vertically)."""
        if gap <= 0:
            raise BrownianError("gap must be positive")
        s = math.sqrt(1.0 + mu * mu)
        return Slab(np.array([-mu, 0.0, 1.0]) / s, 0.0, gap / s)

    def coordinate(self, r):
        return r @ self.normal

    def midpoint_start(self):
        continuous = 0.5 * (self.d1 + self.d2)
        return np.array([0.0, 0.0, continuous / self.normal[2]]) \
            if abs(self.normal[2]) > 1e-12 else continuous * self.normal


@dataclass(frozen=True)
class McJob:
    geometry: object              # Slab or SurfacePair
    d0: float = 1.0
    dt: float = 1e-3
    n_particles: int = 10_000
    n_steps: int = 1_000
    seed: int = 0
    start: tuple = (0.0, 0.0, 0.5)
    jackknife_blocks: int = 25

    def __post_init__(self):
        if self.dt <= 0:
            raise BrownianError("dt must be positive")
        if self.d0 <= 0:
            raise BrownianError("D0 must be positive")
        if self.n_particles < 2 or self.n_steps < 1:
            raise BrownianError("need at least 2 particles and 1 step")
        if self.jackknife_blocks < 2 or self.jackknife_blocks > self.n_particles:
            raise BrownianError("jackknife blocks must be in [2, n_particles]")


@dataclass(frozen=True)
class McResult:
    estimate: np.ndarray          # 2x2, projected onto (x, y)
    stderr: np.ndarray            # 2x2 jackknife standard errors
    total_time: float
    n_particles: int
    n_steps: int
    dt: float
    seed: int
    double_cross_fraction: float
    rejected_steps: int
    max_overshoot: float          # worst pre-clamp boundary excursion


def _particle_stream(seed, index):
    return np.random.default_rng(np.random.SeedSequence(entropy=seed,
                                                        spawn_key=(index,)))


def _jackknife(disp, total_time, blocks):
    n = disp.shape[0]
    full_cov = np.cov(disp.T, ddof=1)
    estimate = full_cov / (2.0 * total_time)

    bounds = np.linspace(0, n, blocks + 1).astype(int)
    s1 = disp.sum(axis=0)
    s2 = disp.T @ disp
    thetas = np.empty((blocks, 2, 2))
    for b in range(blocks):
        sel = disp[bounds[b]:bounds[b + 1]]
        nb = sel.shape[0]
        nc = n - nb
        s1c = s1 - sel.sum(axis=0)
        s2c = s2 - sel.T @ sel
        cov_c = (s2c - np.outer(s1c, s1c) / nc) / (nc - 1)
        thetas[b] = cov_c / (2.0 * total_time)
    mean = thetas.mean(axis=0)
    se = np.sqrt((blocks - 1) / blocks * ((thetas - mean) ** 2).sum(axis=0))
    return estimate, se


def mc_projected_tensor(job: McJob) -> McResult:
    """Monte Carlo estimate of the projected diffusion tensor.

    Aborts with StepTooLargeError when more than 0.1% of steps cross
    both surfaces within a single time step.
    """
    if isinstance(job.geometry, Slab):
        disp, stats = _run_slab(job)
    elif isinstance(job.geometry, SurfacePair):
        disp, stats = _run_surfaces(job)
    else:
        raise BrownianError(f"unsupported geometry {type(job.geometry).__name__}")

    total_steps = job.n_particles * job.n_steps
    frac = stats["double_cross"] / total_steps
    if frac > DOUBLE_CROSS_LIMIT:
        raise StepTooLargeError(
            f"{stats['double_cross']} of {total_steps} steps "
            f"({100 * frac:.2f}%) crossed both surfaces; reduce dt")

    total_time = job.n_steps * job.dt
    estimate, se = _jackknife(disp, total_time, job.jackknife_blocks)
    return McResult(estimate, se, total_time, job.n_particles, job.n_steps,
                    job.dt, job.seed, frac, stats["rejected"],
                    stats["max_overshoot"])


# ---------------------------------------------------------------------------
# slab geometry: exact folding of the normal coordinate
# ---------------------------------------------------------------------------

@njit(cache=True)
def _fold_block(ds, buf, s, corr, d1, d2, gap):
    """Sequentially fold the normal coordinate of every walker through a
    block of steps.  Arithmetic matches _fold_block_numpy bit for bit."""
    k, span = ds.shape
    double_cross = 0
    rejected = 0
    for i in range(k):
        si = s[i]
        ci = corr[i]
        for t in range(span):
            raw = si + ds[i, t]
            if raw >= d1 and raw <= d2:
                si = raw
                continue
            u = (raw - d1) / gap
            folds = abs(math.floor(u))
            if folds >= 2:
                double_cross += 1
            if folds > MAX_BOUNCES:
                rejected += 1
                buf[i, t, 0] = 0.0
                buf[i, t, 1] = 0.0
                buf[i, t, 2] = 0.0
                continue
            v = u - 2.0 * math.floor(u / 2.0)
            folded = v if v <= 1.0 else 2.0 - v
            snew = d1 + gap * folded
            if snew < d1:
                snew = d1
            elif snew > d2:
                snew = d2
            ci += snew - raw
            si = snew
        s[i] = si
        corr[i] = ci
    return double_cross, rejected


def _fold_block_numpy(ds, buf, s, corr, d1, d2, gap):
    """Vectorized equivalent of _fold_block (fallback without numba)."""
    span = ds.shape[1]
    double_cross = 0
    rejected = 0
    for t in range(span):
        raw = s + ds[:, t]
        crossed = (raw < d1) | (raw > d2)
        s = raw
        if not crossed.any():
            continue
        idx = np.nonzero(crossed)[0]
        sub = raw[idx]
        u = (sub - d1) / gap
        folds = np.abs(np.floor(u))
        double_cross += int(np.count_nonzero(folds >= 2))
        v = np.mod(u, 2.0)
        folded = np.where(v <= 1.0, v, 2.0 - v)
        s_new = np.clip(d1 + gap * folded, d1, d2)
        overflow = folds > MAX_BOUNCES
        corr_inc = s_new - sub
        if overflow.any():
            # reject the whole move for these walkers: revert the
            # coordinate and drop the raw increment entirely
            rejected += int(np.count_nonzero(overflow))
            prev = sub - ds[idx, t]
            s_new = np.where(overflow, prev, s_new)
            corr_inc = np.where(overflow, 0.0, corr_inc)
            buf[idx[overflow], t, :] = 0.0
        corr[idx] += corr_inc
        s[idx] = s_new
    return s, corr, double_cross, rejected


def _run_slab(job):
    slab = job.geometry
    n = slab.normal
    gap = slab.d2 - slab.d1
    start = np.asarray(job.start, dtype=float)
    s0 = float(slab.coordinate(start))
    if not (slab.d1 < s0 < slab.d2):
        raise BrownianError(f"start coordinate {s0:.6g} is not strictly "
                            f"inside [{slab.d1:.6g}, {slab.d2:.6g}]")

    sigma = math.sqrt(2.0 * job.d0 * job.dt)
    n_steps = job.n_steps
    chunk = min(job.n_particles, 8192)
    slab_len = max(1, min(n_steps, _CHUNK_BUDGET // (3 * chunk)))

    disp = np.empty((job.n_particles, 2))
    double_cross = 0
    rejected = 0

    for lo in range(0, job.n_particles, chunk):
        hi = min(lo + chunk, job.n_particles)
        k = hi - lo
        gens = [_particle_stream(job.seed, i) for i in range(lo, hi)]
        s = np.full(k, s0)
        raw_sum = np.zeros((k, 3))
        corr = np.zeros(k)

        done = 0
        buf = np.empty((k, slab_len, 3))
        while done < n_steps:
            span = min(slab_len, n_steps - done)
            block = buf[:, :span, :] if span < slab_len else buf
            for i, g in enumerate(gens):
                g.standard_normal(out=block[i])
            block *= sigma
            ds_all = block @ n
            if USE_FOLD_KERNEL:
                dc, rej = _fold_block(ds_all, block, s, corr,
                                      slab.d1, slab.d2, gap)
            else:
                s, corr, dc, rej = _fold_block_numpy(ds_all, block, s, corr,
                                                     slab.d1, slab.d2, gap)
            double_cross += dc
            rejected += rej
            raw_sum += block.sum(axis=1)
            done += span

        delta = raw_sum + corr[:, None] * n
        disp[lo:hi] = delta[:, :2]

    return disp, {"double_cross": double_cross, "rejected": rejected,
                  "max_overshoot": 0.0}


# ---------------------------------------------------------------------------
# curved surfaces: bisect to the crossing, reflect, repeat
# ---------------------------------------------------------------------------

def _run_surfaces(job):
    pair = job.geometry
    start = np.asarray(job.start, dtype=float)
    z1s = pair.z1.value((start[0], start[1]))
    z2s = pair.z2.value((start[0], start[1]))
    if not (z1s < start[2] < z2s):
        raise BrownianError("start must lie strictly between the surfaces")

    sigma = math.sqrt(2.0 * job.d0 * job.dt)
    n_steps = job.n_steps
    chunk = max(1, min(job.n_particles, _CHUNK_BUDGET // (3 * n_steps)))

    disp = np.empty((job.n_particles, 2))
    stats = {"double_cross": 0, "rejected": 0, "max_overshoot": 0.0}

    for lo in range(0, job.n_particles, chunk):
        hi = min(lo + chunk, job.n_particles)
        gens = [_particle_stream(job.seed, i) for i in range(lo, hi)]
        buf = np.stack([g.standard_normal((n_steps, 3)) for g in gens]) * sigma
        r = np.tile(start, (hi - lo, 1))
        for t in range(n_steps):
            r = _surface_step(pair, r, buf[:, t, :], stats)
        disp[lo:hi] = r[:, :2] - start[:2]

    return disp, stats


def _gap_margins(pair, r):
    """phi1 = z - z1 >= 0 and phi2 = z2 - z >= 0 inside the region."""
    x, y, z = r[:, 0], r[:, 1], r[:, 2]
    phi1 = z - pair.z1.value_array(x, y)
    phi2 = pair.z2.value_array(x, y) - z
    return phi1, phi2


def _bisect_crossing(pair, which, r0, delta, crossed):
    """Fraction t of the sub-step at which z - z_i(x, y) changes sign."""
    lo = np.zeros(r0.shape[0])
    hi = np.ones(r0.shape[0])
    field = pair.z1 if which == 1 else pair.z2
    sgn = 1.0 if which == 1 else -1.0
    for _ in range(48):
        mid = 0.5 * (lo + hi)
        rm = r0 + mid[:, None] * delta
        phi = sgn * (rm[:, 2] - field.value_array(rm[:, 0], rm[:, 1]))
        inside = phi >= 0.0
        lo = np.where(inside, mid, lo)
        hi = np.where(inside, hi, mid)
    t = 0.5 * (lo + hi)
    return np.where(crossed, t, np.inf)


def _surface_step(pair, r, delta, stats):
    k = r.shape[0]
    r0 = r
    seg_start = r0.copy()
    seg_delta = delta.copy()
    hit = np.zeros((k, 2), dtype=bool)
    settled = np.zeros(k, dtype=bool)
    out = np.empty_like(r0)

    for _bounce in range(MAX_BOUNCES + 1):
        active = ~settled
        if not active.any():
            break
        idx = np.nonzero(active)[0]
        end = seg_start[idx] + seg_delta[idx]
        phi1, phi2 = _gap_margins(pair, end)
        ok = (phi1 >= 0.0) & (phi2 >= 0.0)
        acc = idx[ok]
        out[acc] = end[ok]
        settled[acc] = True

        bad = idx[~ok]
        if bad.size == 0:
            break
        if _bounce == MAX_BOUNCES:
            # bounce overflow: reject these moves entirely
            out[bad] = r0[bad]
            settled[bad] = True
            stats["rejected"] += bad.size
            break

        b_start = seg_start[bad]
        b_delta = seg_delta[bad]
        c1 = phi1[~ok] < 0.0
        c2 = phi2[~ok] < 0.0
        t1 = _bisect_crossing(pair, 1, b_start, b_delta, c1)
        t2 = _bisect_crossing(pair, 2, b_start, b_delta, c2)
        use1 = t1 <= t2
        t = np.where(use1, t1, t2)
        t = np.minimum(t, 1.0)
        cross = b_start + t[:, None] * b_delta

        gx1, gy1 = pair.z1.gradient_array(cross[:, 0], cross[:, 1])
        gx2, gy2 = pair.z2.gradient_array(cross[:, 0], cross[:, 1])
        gx = np.where(use1, gx1, gx2)
        gy = np.where(use1, gy1, gy2)
        norm = np.sqrt(1.0 + gx * gx + gy * gy)
        nvec = np.stack([-gx, -gy, np.ones_like(gx)], axis=1) / norm[:, None]

        remaining = (1.0 - t)[:, None] * b_delta
        reflected = remaining - 2.0 * (remaining * nvec).sum(axis=1)[:, None] * nvec

        hit[bad, 0] |= use1
        hit[bad, 1] |= ~use1
        seg_start[bad] = cross
        seg_delta[bad] = reflected

    stats["double_cross"] += int(np.count_nonzero(hit.all(axis=1)))

    # confinement: re-project tiny excursions, reject anything larger
    phi1, phi2 = _gap_margins(pair, out)
    worst = -min(float(phi1.min()), float(phi2.min()))
    stats["max_overshoot"] = max(stats["max_overshoot"], worst, 0.0)
    scale = 1.0 + np.abs(out[:, 2])
    low = phi1 < 0.0
    high = phi2 < 0.0
    fixable = (low & (-phi1 < REPROJECT_TOL * scale)) | \
              (high & (-phi2 < REPROJECT_TOL * scale))
    broken = (low | high) & ~fixable
    if fixable.any():
        out[low & fixable, 2] -= phi1[low & fixable]   # lift back onto z1
        out[high & fixable, 2] += phi2[high & fixable]  # drop back onto z2
    if broken.any():
        out[broken] = r0[broken]
        stats["rejected"] += int(np.count_nonzero(broken))
    return out
