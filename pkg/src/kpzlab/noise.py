"""Poisson clouds, mollifiers, and compensated shot-noise fields.

The microscopic noise is a unit-intensity Poisson cloud on R x (T/eps)
smeared by a normalized, x-symmetric mollifier theta and compensated by its
mean.  In the macroscopic frame the same construction appears as a cloud of
intensity eps^-3 on the unit torus with the kernel eps^{-3/2} theta^(eps)
evaluated at parabolically rescaled offsets.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from .errors import AreaOverflow, CoverageGap, TailNotSummable
from .grids import GridSpec, SpaceTimeField


# ---------------------------------------------------------------------------
# mollifiers
# ---------------------------------------------------------------------------

@dataclass
class Mollifier:
    """Normalized space-time mollifier theta(t, x), symmetric in x.

    evaluator operates in the mollifier's own (micro) coordinates.  When the
    profile is a product f(t) g(x), ``t_profile``/``x_profile`` enable fast
    separable stamping; ``spatial_fourier`` (tau, mu) -> hat theta, when
    available analytically, avoids numerical Fourier transforms.
    """

    evaluator: Callable
    decay_exponent: float = 1.0
    support_radius_hint: float = 4.0
    t_profile: Callable | None = None
    x_profile: Callable | None = None
    spatial_fourier: Callable | None = None
    trunc_t: float = 4.0      # |t| beyond which theta is treated as 0
    trunc_x: float = 4.0      # |x| beyond which theta is treated as 0
    tag: str = "custom"

    def __call__(self, t, x):
        return self.evaluator(np.asarray(t, dtype=float), np.asarray(x, dtype=float))

    def spatial_fourier_grid(self, tau: np.ndarray, mu: np.ndarray) -> np.ndarray:
        """hat theta(tau_i, mu_j) table; quadrature fallback for raw evaluators."""
        if self.spatial_fourier is not None:
            return self.spatial_fourier(tau[:, None], mu[None, :])
        nxq = 4096
        xq = np.linspace(-self.trunc_x, self.trunc_x, nxq)
        dxq = xq[1] - xq[0]
        vals = self(tau[:, None], xq[None, :])
        phase = np.cos(2 * np.pi * np.outer(xq, mu))  # theta symmetric in x
        return vals @ phase * dxq

    def validate(self, grid_n: int = 201, box: float = 6.0, tol: float = 1e-6) -> dict:
        """Symmetry / normalization / decay checks on a sample grid."""
        ts = np.linspace(-box, box, grid_n)
        xs = np.linspace(-box, box, grid_n)
        vals = self(ts[:, None], xs[None, :])
        sym = float(np.abs(vals - vals[:, ::-1]).max())
        dx = xs[1] - xs[0]
        dt = ts[1] - ts[0]
        mass = float(vals.sum() * dx * dt)
        d = np.sqrt(np.abs(ts))[:, None] + np.abs(xs)[None, :]
        decay_bound = float((np.abs(vals) * (1 + d) ** (4 + self.decay_exponent)).max())
        return {
            "symmetric": sym <= tol,
            "normalized": abs(mass - 1.0) <= max(tol, 1e-4),
            "mass": mass,
            "decay_bound": decay_bound,
        }


def gaussian_mollifier(width: float = 0.5) -> Mollifier:
    """theta(t,x) = c exp(-(t/w)^2 - (x/w)^2) with unit integral."""
    w = float(width)
    c = 1.0 / (math.pi * w * w)

    def ev(t, x):
        return c * np.exp(-((t / w) ** 2) - ((x / w) ** 2))

    def hat(tau, mu):
        # int c e^{-(t/w)^2 - (x/w)^2} e^{-2 pi i mu x} dx
        return (1.0 / (math.sqrt(math.pi) * w)) * np.exp(-((tau / w) ** 2)) \
            * np.exp(-(np.pi * w * np.asarray(mu)) ** 2)

    r = w * 6.2  # exp(-6.2^2) ~ 2e-17
    return Mollifier(ev, decay_exponent=1.0, support_radius_hint=math.sqrt(r) + r,
                     t_profile=lambda t: np.exp(-((t / w) ** 2)) * c,
                     x_profile=lambda x: np.exp(-((x / w) ** 2)),
                     spatial_fourier=hat, trunc_t=r, trunc_x=r, tag=f"gauss{w:g}")


def _bump(s):
    s = np.asarray(s, dtype=float)
    out = np.zeros_like(s)
    m = np.abs(s) < 1.0
    out[m] = np.exp(1.0 - 1.0 / (1.0 - s[m] ** 2))
    return out


_BUMP_MASS = 1.2069003224378743  # int_{-1}^{1} e^{1 - 1/(1-s^2)} ds


def bump_mollifier(radius: float = 1.0) -> Mollifier:
    """Compactly supported product bump, unit integral, support |t|,|x| < radius."""
    r = float(radius)
    c = 1.0 / (r * r * _BUMP_MASS**2)

    def ev(t, x):
        return c * _bump(t / r) * _bump(x / r)

    return Mollifier(ev, decay_exponent=10.0, support_radius_hint=math.sqrt(r) + r,
                     t_profile=lambda t: c * _bump(t / r),
                     x_profile=lambda x: _bump(x / r),
                     spatial_fourier=None, trunc_t=r, trunc_x=r, tag=f"bump{r:g}")


MOLLIFIER_PRESETS = {"gauss": gaussian_mollifier, "bump": bump_mollifier}


def periodize_mollifier(theta: Mollifier, eps: float, tail_tol: float = 1e-12):
    """theta^(eps)(t, x) = sum_k theta(t, x + k/eps), truncated by the tail bound.

    Returns an evaluator on R x (T/eps).  The number of retained images is
    chosen so the absolute remainder is below tail_tol, using the stated
    polynomial decay bound.
    """
    if theta.decay_exponent <= 0:
        raise TailNotSummable(f"decay exponent {theta.decay_exponent} <= 0")
    period = 1.0 / eps
    if theta.trunc_x < 1e3:  # effectively compact support
        n_img = int(math.ceil(theta.trunc_x / period)) + 1
    else:
        # sum_{|k|>K} C (k/eps)^{-4-d0} <= tol  with C from the decay check
        d0 = theta.decay_exponent
        C = theta.validate()["decay_bound"]
        K = max(1.0, (2 * C / (tail_tol * (3 + d0))) ** (1.0 / (3 + d0)) * eps)
        n_img = int(math.ceil(K)) + 1

    def ev(t, x):
        t = np.asarray(t, dtype=float)
        x = np.mod(np.asarray(x, dtype=float) + period / 2, period) - period / 2
        out = np.zeros(np.broadcast(t, x).shape)
        for k in range(-n_img, n_img + 1):
            out = out + theta(t, x + k * period)
        return out

    ev.images = n_img
    return ev


# ---------------------------------------------------------------------------
# point clouds
# ---------------------------------------------------------------------------

@dataclass
class PointCloud:
    """Poisson configuration on (t_lo, t_hi) x [0, x_period)."""

    points: np.ndarray           # (n, 2) columns (t, x)
    t_lo: float
    t_hi: float
    x_period: float
    intensity: float
    seed: int | None = None

    @property
    def count(self) -> int:
        return self.points.shape[0]

    @property
    def area(self) -> float:
        return (self.t_hi - self.t_lo) * self.x_period

    def to_macro(self, eps: float) -> "PointCloud":
        """Exact parabolic change of frame (t, x) -> (eps^2 t, eps x)."""
        pts = np.column_stack([self.points[:, 0] * eps**2, self.points[:, 1] * eps])
        return PointCloud(pts, self.t_lo * eps**2, self.t_hi * eps**2,
                          self.x_period * eps, self.intensity / eps**3, self.seed)

    def with_extra(self, t: float, x: float) -> "PointCloud":
        pts = np.vstack([self.points, [t, x]])
        return PointCloud(pts, self.t_lo, self.t_hi, self.x_period, self.intensity, None)

    def save(self, path) -> None:
        path = Path(path)
        self.points.astype("<f8").tofile(path.with_suffix(".f64"))
        sidecar = {"t_lo": self.t_lo, "t_hi": self.t_hi, "x_period": self.x_period,
                   "intensity": self.intensity, "seed": self.seed, "count": self.count}
        path.with_suffix(".json").write_text(json.dumps(sidecar, indent=1))

    @classmethod
    def load(cls, path) -> "PointCloud":
        path = Path(path)
        meta = json.loads(path.with_suffix(".json").read_text())
        pts = np.fromfile(path.with_suffix(".f64"), dtype="<f8").reshape(meta["count"], 2)
        return cls(pts, meta["t_lo"], meta["t_hi"], meta["x_period"],
                   meta["intensity"], meta["seed"])


def sample_cloud(t_lo: float, t_hi: float, x_period: float, intensity: float,
                 rng: np.random.Generator, seed: int | None = None,
                 budget: float = 5e7) -> PointCloud:
    """Poisson(intensity * area) points, uniform i.i.d., deterministic under rng."""
    area = (t_hi - t_lo) * x_period
    expected = intensity * area
    if expected > budget:
        raise AreaOverflow(f"expected count {expected:.3g} exceeds budget {budget:.3g}")
    n = int(rng.poisson(expected)) if expected > 0 else 0
    ts = rng.uniform(t_lo, t_hi, n)
    xs = rng.uniform(0.0, x_period, n)
    return PointCloud(np.column_stack([ts, xs]), t_lo, t_hi, x_period, intensity, seed)


# ---------------------------------------------------------------------------
# shot-noise synthesis
# ---------------------------------------------------------------------------

def _stamp(field: np.ndarray, grid: GridSpec, points: np.ndarray, theta: Mollifier,
           t_scale: float, x_scale: float, amp: float) -> None:
    """Accumulate amp * theta((t - tp)/t_scale, (x - xp)/x_scale) over points.

    Spatial indices wrap; when a stamp is wider than the torus the wrapped
    columns are folded so repeated cells accumulate every image.  Points are
    processed in storage order in fixed-size chunks (deterministic output).
    """
    nt, nx = field.shape
    dt, dx = grid.dt, grid.dx
    rt = theta.trunc_t * t_scale
    rx = theta.trunc_x * x_scale
    nt_half = int(math.ceil(rt / dt))
    nx_half = int(math.ceil(rx / dx))
    wt, wx = 2 * nt_half + 1, 2 * nx_half + 1
    jt_off = np.arange(-nt_half, nt_half + 1)
    jx_off = np.arange(-nx_half, nx_half + 1)
    sep = theta.t_profile is not None and theta.x_profile is not None
    chunk = max(1, int(4e6 / (wt * wx)))
    n = points.shape[0]
    for s in range(0, n, chunk):
        tp = points[s:s + chunk, 0]
        xp = points[s:s + chunk, 1]
        j0 = np.round((tp - grid.t0) / dt).astype(np.int64)
        jt = j0[:, None] + jt_off[None, :]
        tau = (grid.t0 + jt * dt - tp[:, None]) / t_scale
        i0 = np.round(xp / dx).astype(np.int64)
        ix = i0[:, None] + jx_off[None, :]
        w = (ix * dx - xp[:, None]) / x_scale
        if sep:
            vals = amp * theta.t_profile(tau)[:, :, None] * theta.x_profile(w)[:, None, :]
        else:
            vals = amp * theta(tau[:, :, None], w[:, None, :])
        tmask = (jt >= 0) & (jt < nt)
        vals *= tmask[:, :, None]
        jt_c = np.clip(jt, 0, nt - 1)
        flat = jt_c[:, :, None] * nx + (ix[:, None, :] % nx)
        field += np.bincount(flat.ravel(), weights=vals.ravel(),
                             minlength=nt * nx).reshape(nt, nx)


def synthesize_noise(cloud: PointCloud, theta: Mollifier, eps: float, frame: str,
                     grid: GridSpec) -> SpaceTimeField:
    """Compensated mollified shot noise on the grid.

    frame 'micro': field = sum theta^(eps)(t - tp, x - xp) - intensity, on a
    torus of length 1/eps (grid.x_period must match the cloud period).
    frame 'macro': field = eps^{-3/2} [sum theta^(eps) at parabolically
    rescaled offsets - 1] for a cloud of intensity eps^-3 on the unit torus.
    """
    if frame == "macro":
        t_scale, x_scale = eps**2, eps
        amp = eps**-1.5
    elif frame == "micro":
        t_scale = x_scale = 1.0
        amp = 1.0
    else:
        raise ValueError(f"unknown frame {frame!r}")
    if abs(cloud.x_period - grid.x_period) > 1e-9 * grid.x_period:
        raise CoverageGap(f"cloud x period {cloud.x_period} != grid {grid.x_period}")
    pad = theta.trunc_t * t_scale
    if cloud.t_lo > grid.t0 - pad + 1e-12 or cloud.t_hi < grid.times()[-1] + pad - 1e-12:
        raise CoverageGap(
            f"cloud t-box [{cloud.t_lo}, {cloud.t_hi}] does not cover grid "
            f"[{grid.t0 - pad}, {grid.times()[-1] + pad}]")
    field = np.zeros((grid.nt, grid.nx))
    _stamp(field, grid, cloud.points, theta, t_scale, x_scale, amp)
    compensator = amp * cloud.intensity * t_scale * x_scale
    field -= compensator
    return SpaceTimeField(grid, field, frame=frame, epsilon=eps)
