"""Free field, its Malliavin kernel, coupling constants, renormalization constants.

The free field Psi_eps is the mollified noise convolved with the spatial
derivative of the Green's function.  Adding a cloud point at u shifts
Psi_eps(x) by exactly G_eps(x - eps u) where G_eps = P'_eps * Theta_eps is a
single space-time profile (Theta_eps is the macro-frame mollifier stamp and
eps u is the parabolic rescaling (eps^2 u_0, eps u_1)).  That profile drives
everything here: one-point sampling of Psi, coupling-constant Monte Carlo
with quadrature oracles, and the drift constant.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np
from scipy.signal import fftconvolve

from .errors import BoxTooSmall, CoverageGap
from .grids import GridSpec, SpaceTimeField
from .noise import Mollifier, PointCloud, synthesize_noise
from .smoothing import MultiplierFamily, PolynomialSmoothing
from .seeding import rng_for


# ---------------------------------------------------------------------------
# nonlinearities
# ---------------------------------------------------------------------------

@dataclass
class Nonlinearity:
    """Even growth nonlinearity F with derivatives and growth certificate."""

    f: Callable
    df: Callable
    d2f: Callable
    growth_M: float
    holder_beta: float
    bound_C: float
    tag: str = "custom"

    def __call__(self, w):
        return self.f(np.asarray(w, dtype=float))

    def validate(self, w_max: float = 20.0, n: int = 2001, rng=None) -> dict:
        ws = np.linspace(-w_max, w_max, n)
        scale = 1.0 + float(np.abs(self(ws)).max())
        even = float(np.abs(self(ws) - self(-ws)).max())
        growth = max(
            float((np.abs(fn(ws)) / (1 + np.abs(ws)) ** self.growth_M).max())
            for fn in (self.f, self.df, self.d2f))
        rng = rng or np.random.default_rng(0)
        w = rng.uniform(-w_max, w_max, 500)
        h = rng.uniform(-2, 2, 500)
        lhs = np.abs(self.d2f(w + h) - self.d2f(w))
        rhs = np.abs(h) ** self.holder_beta * (1 + np.abs(w) + np.abs(h)) ** self.growth_M
        holder = float(np.max(lhs / np.maximum(rhs, 1e-300)))
        return {"even_defect": even, "growth_ratio": growth, "holder_ratio": holder,
                "ok": even <= 1e-12 * scale and growth <= self.bound_C
                      and holder <= self.bound_C}


def nl_w2() -> Nonlinearity:
    return Nonlinearity(lambda w: w * w, lambda w: 2 * w, lambda w: 2.0 + 0 * w,
                        growth_M=2.0, holder_beta=0.5, bound_C=2.0, tag="w2")


def nl_w4() -> Nonlinearity:
    return Nonlinearity(lambda w: w**4, lambda w: 4 * w**3, lambda w: 12 * w * w,
                        growth_M=4.0, holder_beta=0.5, bound_C=24.0, tag="w4")


def nl_cos() -> Nonlinearity:
    return Nonlinearity(np.cos, lambda w: -np.sin(w), lambda w: -np.cos(w),
                        growth_M=0.0, holder_beta=0.5, bound_C=2.0, tag="cos")


def nonlinearity_from_table(w: np.ndarray, fw: np.ndarray, growth_M: float = 4.0,
                            holder_beta: float = 0.5, bound_C: float = 100.0,
                            tag: str = "table") -> Nonlinearity:
    """Even nonlinearity from sampled values, derivatives by centered differences."""
    w = np.asarray(w, dtype=float)
    fw = np.asarray(fw, dtype=float)
    dw = np.gradient(fw, w)
    d2w = np.gradient(dw, w)

    def interp(t):
        return lambda x: np.interp(np.abs(x), w, t)  # even extension

    return Nonlinearity(interp(fw), lambda x: np.sign(x) * np.interp(np.abs(x), w, dw),
                        interp(d2w), growth_M, holder_beta, bound_C, tag)


NONLINEARITY_PRESETS = {"w2": nl_w2, "w4": nl_w4, "cos": nl_cos}


def resolve_nonlinearity(spec: str) -> Nonlinearity:
    if spec in NONLINEARITY_PRESETS:
        return NONLINEARITY_PRESETS[spec]()
    if spec.startswith("table:"):
        data = np.loadtxt(spec[6:], delimiter=",")
        return nonlinearity_from_table(data[:, 0], data[:, 1])
    raise KeyError(f"unknown nonlinearity spec {spec!r}")


# ---------------------------------------------------------------------------
# kernel profiles (Theta_eps, G_eps = P'_eps * Theta_eps)
# ---------------------------------------------------------------------------

@dataclass
class KernelProfile:
    """Real space-time kernel on a (time grid) x (torus) lattice.

    values[j, i] = kernel(t0 + j dt, i/nx * x_period); hat holds spatial
    rfft coefficients (Fourier-series normalization, i.e. rfft/nx).
    """

    eps: float
    t0: float
    dt: float
    values: np.ndarray
    hat: np.ndarray
    x_period: float = 1.0
    tail_estimate: float = 0.0

    @property
    def nt(self) -> int:
        return self.values.shape[0]

    @property
    def nx(self) -> int:
        return self.values.shape[1]

    @property
    def cell_area(self) -> float:
        return self.dt * self.x_period / self.nx

    def times(self) -> np.ndarray:
        return self.t0 + self.dt * np.arange(self.nt)

    def grid(self) -> GridSpec:
        return GridSpec(self.t0, self.dt, self.nt, self.nx, self.x_period)

    def integral(self) -> float:
        return float(self.values.sum() * self.cell_area)

    def l2sq(self) -> float:
        return float((self.values**2).sum() * self.cell_area)

    def eval(self, t, x):
        """Bilinear interpolation, x wraps, zero outside the time range."""
        t = np.asarray(t, dtype=float)
        x = np.asarray(x, dtype=float)
        it = (t - self.t0) / self.dt
        i0 = np.floor(it).astype(np.int64)
        ft = it - i0
        ok = (i0 >= 0) & (i0 < self.nt - 1)
        i0c = np.clip(i0, 0, self.nt - 2)
        ix = (x % self.x_period) / self.x_period * self.nx
        j0 = np.floor(ix).astype(np.int64) % self.nx
        fx = ix - np.floor(ix)
        j1 = (j0 + 1) % self.nx
        v = ((1 - ft) * ((1 - fx) * self.values[i0c, j0] + fx * self.values[i0c, j1])
             + ft * ((1 - fx) * self.values[i0c + 1, j0] + fx * self.values[i0c + 1, j1]))
        return np.where(ok, v, 0.0)

    def as_field(self) -> SpaceTimeField:
        return SpaceTimeField(self.grid(), self.values, frame="macro", epsilon=self.eps)


def semigroup_slice_weights(m: np.ndarray, dt: float, length: int,
                            chi: Callable | None = None) -> np.ndarray:
    """A[n, k] = int over slice n of chi(s) exp(-m_k s) ds, slices centered at n dt.

    Slice n covers [max((n-1/2)dt, 0), (n+1/2)dt); exact for the exponential,
    with chi frozen at the slice midpoint (chi == 1 wherever m s is stiff).
    """
    n = np.arange(length)
    lo = np.maximum((n[:, None] - 0.5) * dt, 0.0)
    hi = (n[:, None] + 0.5) * dt
    msafe = np.where(m[None, :] > 0, m[None, :], 1.0)
    with np.errstate(over="ignore", under="ignore"):
        A = (np.exp(-msafe * lo) - np.exp(-msafe * hi)) / msafe
    zero = m == 0.0
    if zero.any():
        A[:, zero] = (hi - lo)
    if chi is not None:
        mid = 0.5 * (lo[:, 0] + hi[:, 0])
        A = A * chi(mid)[:, None]
    return A


def _default_nx(eps: float) -> int:
    return 1 << int(math.ceil(math.log2(max(64.0, 8.0 / eps))))


def noise_profile(theta: Mollifier, eps: float, nx: int | None = None,
                  dt: float | None = None) -> KernelProfile:
    """Theta_eps, the macro-frame stamp of one cloud point (compensator excluded)."""
    nx = nx or _default_nx(eps)
    dt = dt or eps**2 / 4
    pad = (theta.trunc_t + 1.0) * eps**2
    ntau = int(math.ceil(2 * pad / dt)) + 1
    tau = -pad + dt * np.arange(ntau)
    kk = np.arange(nx // 2 + 1)
    hat = eps**-0.5 * theta.spatial_fourier_grid(tau / eps**2, eps * kk)
    hat = hat.astype(complex)
    values = np.fft.irfft(hat, n=nx, axis=1) * nx
    return KernelProfile(eps, tau[0], dt, values, hat)


def malliavin_profile(theta: Mollifier, fam: MultiplierFamily, nx: int | None = None,
                      dt: float | None = None, tail: float = 1e-16,
                      T_cap: float = 4.0) -> KernelProfile:
    """G_eps = P'_eps * Theta_eps; the Malliavin kernel is G_eps(x - eps u).

    The time history is truncated where the slowest nonzero mode has decayed
    below `tail` (never beyond T_cap); the dropped mass is recorded.
    """
    eps = fam.epsilon
    nx = nx or _default_nx(eps)
    dt = dt or eps**2 / 4
    base = noise_profile(theta, eps, nx=nx, dt=dt)
    kk = np.arange(nx // 2 + 1)
    m = fam.multiplier_array(kk)
    T_hist = min(T_cap, -math.log(tail) / m[1])
    L = int(math.ceil(T_hist / dt)) + 2
    A = semigroup_slice_weights(m, dt, L)
    hat = fftconvolve(base.hat, A.astype(complex), axes=0) * (2j * np.pi * kk)[None, :]
    values = np.fft.irfft(hat, n=nx, axis=1) * nx
    return KernelProfile(eps, base.t0, dt, values, hat,
                         tail_estimate=float(np.exp(-m[1] * T_hist)))


# ---------------------------------------------------------------------------
# first-chaos sampling against a kernel profile
# ---------------------------------------------------------------------------

def sample_i1(profile: KernelProfile, intensity: float, rng: np.random.Generator,
              replicas: int) -> np.ndarray:
    """Replicas of I_1(kernel) = sum kernel(points) - intensity * int kernel.

    Points are Poisson(intensity) uniform over the profile's box; the kernel
    is treated as piecewise constant on its cells, so cell sampling is exact
    and the compensation makes every replica mean-zero by construction.
    """
    area = profile.nt * profile.dt * profile.x_period
    lam = intensity * area
    comp = intensity * profile.values.sum() * profile.cell_area
    flat = profile.values.ravel()
    counts = rng.poisson(lam, replicas)
    out = np.empty(replicas)
    for r in range(replicas):
        idx = rng.integers(0, flat.size, counts[r])
        out[r] = flat[idx].sum() - comp
    return out


def psi_origin_samples(profile: KernelProfile, rng: np.random.Generator,
                       replicas: int) -> np.ndarray:
    """Psi_eps(0) replicas: I_1 of the Malliavin kernel at the origin."""
    return sample_i1(profile, profile.eps**-3, rng, replicas)


def psi_variance_quad(profile: KernelProfile) -> float:
    """E Psi_eps(0)^2 = int (P^theta_eps)'(0, u)^2 du = eps^-3 int G^2."""
    return profile.eps**-3 * profile.l2sq()


def kernel_char_function(profile: KernelProfile, v: float, intensity: float,
                         scale: float = 1.0) -> complex:
    """E exp(i v I_1(scale * kernel)) by quadrature of the Levy exponent."""
    g = scale * profile.values
    integrand = np.exp(1j * v * g) - 1j * v * g - 1.0
    return complex(np.exp(integrand.sum() * profile.cell_area * intensity))


# ---------------------------------------------------------------------------
# coupling constants
# ---------------------------------------------------------------------------

@dataclass
class CouplingEstimate:
    value: float
    stderr: float
    replicas: int
    epsilon: float          # 0 marks the plane (limit) construction
    method: str = "mc"
    ladder: dict | None = None

    def to_json(self) -> dict:
        return {"value": self.value, "stderr": self.stderr, "replicas": self.replicas,
                "epsilon": self.epsilon, "method": self.method, "ladder": self.ladder}


def _bootstrap_stderr(vals: np.ndarray, rng: np.random.Generator, n_boot: int = 200) -> float:
    if vals.std() == 0.0:
        return 0.0
    means = np.empty(n_boot)
    for b in range(n_boot):
        means[b] = vals[rng.integers(0, len(vals), len(vals))].mean()
    return float(means.std(ddof=1))


def coupling_mc(F: Nonlinearity, fam: MultiplierFamily, theta: Mollifier,
                replicas: int, seed: int, nx: int | None = None,
                profile: KernelProfile | None = None) -> CouplingEstimate:
    """a_eps = 0.5 E F''(sqrt(eps) Psi_eps(0)) by Monte Carlo over clouds."""
    eps = fam.epsilon
    prof = profile or malliavin_profile(theta, fam, nx=nx)
    rng = rng_for(seed, "coupling_mc")
    psi = psi_origin_samples(prof, rng, replicas)
    vals = 0.5 * F.d2f(math.sqrt(eps) * psi)
    se = _bootstrap_stderr(vals, rng_for(seed, "coupling_mc_boot"))
    return CouplingEstimate(float(vals.mean()), se, replicas, eps)


def plane_profile(smoothing: PolynomialSmoothing, theta: Mollifier, period: float,
                  nx: int | None = None, dt: float = 1.0 / 16,
                  tail: float = 1e-16, T_max: float | None = None) -> KernelProfile:
    """g(u) = (P' * theta)(-u) on a large torus; eps-free plane surrogate.

    Stored with values[j, i] = (P' * theta)(t_j, x_i); I_1 sampling against
    it realizes (P' * bar xi)(0) because the uniform cloud is reflection
    invariant.
    """
    nx = nx or int(8 * period)
    nx = 1 << int(math.ceil(math.log2(nx)))
    kk = np.arange(nx // 2 + 1)
    m = smoothing(2 * np.pi * kk / period)
    pad = theta.trunc_t + 1.0
    ntau = int(math.ceil(2 * pad / dt)) + 1
    tau = -pad + dt * np.arange(ntau)
    hat = theta.spatial_fourier_grid(tau, kk / period) / period
    T_hist = -math.log(tail) / m[1]
    if T_max is not None:
        T_hist = min(T_hist, T_max)
    L = int(math.ceil(T_hist / dt)) + 2
    A = semigroup_slice_weights(m, dt, L)
    hg = fftconvolve(hat.astype(complex), A.astype(complex), axes=0) \
        * (2j * np.pi * kk / period)[None, :]
    values = np.fft.irfft(hg, n=nx, axis=1) * nx
    return KernelProfile(0.0, tau[0], dt, values, hg, x_period=period,
                         tail_estimate=float(np.exp(-m[1] * T_hist)))


def coupling_limit(F: Nonlinearity, smoothing: PolynomialSmoothing, theta: Mollifier,
                   replicas: int, seed: int, period: float = 16.0,
                   ladder: tuple = (8.0, 16.0, 32.0), tail_tol: float = 1e-6,
                   T_max: float | None = None) -> CouplingEstimate:
    """a = 0.5 E F''(I_1(g)) on the plane, via a large-torus surrogate.

    Runs the whole period ladder and reports the largest-period estimate,
    with the ladder record attached.  For the trigonometric preset the value
    comes from the characteristic function (deterministic); the MC path is
    used otherwise.
    """
    results = {}
    est = None
    for L in sorted(set(list(ladder) + [period])):
        prof = plane_profile(smoothing, theta, L, T_max=T_max)
        if prof.tail_estimate > tail_tol:
            raise BoxTooSmall(f"time tail {prof.tail_estimate:.2g} > {tail_tol:.2g} at period {L}")
        if F.tag == "cos":
            phi = kernel_char_function(prof, 1.0, intensity=1.0)
            val = CouplingEstimate(-0.5 * phi.real, 0.0, 0, 0.0, method="char")
        else:
            rng = rng_for(seed, f"coupling_limit_{L}")
            s = sample_i1(prof, 1.0, rng, replicas)
            vals = 0.5 * F.d2f(s)
            se = _bootstrap_stderr(vals, rng_for(seed, f"coupling_limit_boot_{L}"))
            val = CouplingEstimate(float(vals.mean()), se, replicas, 0.0)
        results[L] = val.value
        if L == period:
            est = val
    est.ladder = results
    return est


# ---------------------------------------------------------------------------
# free field on a grid
# ---------------------------------------------------------------------------

def free_field(cloud: PointCloud, theta: Mollifier, fam: MultiplierFamily,
               grid: GridSpec, tail: float = 1e-16, T_cap: float = 4.0,
               profile: KernelProfile | None = None):
    """(Psi_eps on grid, Malliavin kernel profile).

    Psi = P'_eps * xi_eps by spectral multiplication in space and causal,
    slice-exact quadrature in time.  The cloud must cover the grid's domain
    of dependence (grid window plus the kernel history).
    """
    eps = fam.epsilon
    kk = np.arange(grid.nx // 2 + 1)
    m = fam.multiplier_array(kk)
    T_hist = min(T_cap, -math.log(tail) / m[1])
    n_hist = int(math.ceil(T_hist / grid.dt)) + 1
    ext = GridSpec(grid.t0 - n_hist * grid.dt, grid.dt, grid.nt + n_hist, grid.nx,
                   grid.x_period)
    xi = synthesize_noise(cloud, theta, eps, "macro", ext)
    psi_vals = convolve_green_derivative(xi.values, m, grid.dt)
    psi = SpaceTimeField(grid, psi_vals[n_hist:], frame="macro", epsilon=eps)
    prof = profile or malliavin_profile(theta, fam, nx=grid.nx)
    return psi, prof


def convolve_green_derivative(values: np.ndarray, m: np.ndarray, dt: float,
                              chi: Callable | None = None) -> np.ndarray:
    """(d_x P * f) on the grid: per-mode causal convolution with slice-exact weights.

    With chi, realizes the truncated kernel K' = d_x (chi(t) P) instead.
    """
    nt, nx = values.shape
    kk = np.arange(nx // 2 + 1)
    if chi is None:
        L = nt
    else:
        L = min(nt, int(math.ceil(1.0 / dt)) + 2)  # chi vanishes past t = 1
    A = semigroup_slice_weights(m, dt, L, chi=chi)
    hat = np.fft.rfft(values, axis=1)
    conv = fftconvolve(hat, A.astype(complex), axes=0)[:nt]
    conv *= (2j * np.pi * kk)[None, :]
    return np.fft.irfft(conv, n=nx, axis=1)


# ---------------------------------------------------------------------------
# renormalization constants
# ---------------------------------------------------------------------------

@dataclass
class RenormTable:
    """Recentering constants for the model objects plus the solver drift."""

    epsilon: float
    a_eps: float
    a_stderr: float
    constants: dict = field(default_factory=dict)   # tag -> (value, stderr)
    C_eps: float = 0.0
    meta: dict = field(default_factory=dict)

    def constant(self, tag: str) -> float:
        return self.constants[tag][0]

    def to_json(self) -> dict:
        return {"epsilon": self.epsilon, "a_eps": self.a_eps, "a_stderr": self.a_stderr,
                "C_eps": self.C_eps,
                "constants": {k: {"value": v, "stderr": s} for k, (v, s) in self.constants.items()},
                "meta": self.meta}

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_json(), indent=1))


def renorm_constants(F: Nonlinearity, fam: MultiplierFamily, theta: Mollifier,
                     replicas: int, seed: int, nx: int | None = None,
                     higher: bool = False, higher_opts: dict | None = None) -> RenormTable:
    """Estimate a_eps, C_<2'> and the drift C_eps = eps^{-1} E F(sqrt(eps) Psi).

    With higher=True the second/third-order product constants are estimated
    from grid realizations of the model objects (see objects module).
    """
    eps = fam.epsilon
    prof = malliavin_profile(theta, fam, nx=nx)
    rng = rng_for(seed, "renorm_psi")
    psi = psi_origin_samples(prof, rng, replicas)
    seps = math.sqrt(eps)
    a_vals = 0.5 * F.d2f(seps * psi)
    a_eps = float(a_vals.mean())
    a_se = _bootstrap_stderr(a_vals, rng_for(seed, "renorm_psi_boot"))
    f_vals = F(seps * psi)
    c2 = float(f_vals.mean()) / (a_eps * eps)
    c2_se = _bootstrap_stderr(f_vals, rng_for(seed, "renorm_f_boot")) / abs(a_eps * eps)
    table = RenormTable(eps, a_eps, a_se,
                        constants={"2'": (c2, c2_se)},
                        C_eps=a_eps * c2,
                        meta={"F": F.tag, "Q": fam.smoothing.tag, "theta": theta.tag,
                              "seed": seed, "replicas": replicas,
                              "kernel_tail": prof.tail_estimate})
    if higher:
        from .objects import estimate_higher_constants
        table.constants.update(estimate_higher_constants(
            F, fam, theta, table, seed=seed, **(higher_opts or {})))
    return table
