"""Renormalized model objects, test-function pairings, homogeneity scaling.

The ten stochastic objects of the model are pointwise functions of the free
field combined through the truncated-kernel convolution I' (realized by
K'_eps) and recentered by their table constants.  Pairing against
parabolically rescaled test functions phi^lambda yields the scaling
exponents that realize the homogeneity table empirically.
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.signal import fftconvolve

from .errors import InsufficientLadder, MissingConstant, SupportEscape
from .fields import (KernelProfile, Nonlinearity, RenormTable, convolve_green_derivative,
                     free_field, malliavin_profile, noise_profile)
from .grids import GridSpec, SpaceTimeField
from .noise import Mollifier, sample_cloud
from .seeding import rng_for
from .smoothing import CutoffSpec, MultiplierFamily


# ---------------------------------------------------------------------------
# symbol table
# ---------------------------------------------------------------------------

# homogeneities at kappa = 0; subtract kappa for the table values
HOMOGENEITY = {
    "0'": 0.0, "1'": -0.5, "2'": -1.0,
    "2'0": 0.0, "1'1'": 0.0, "2'0'": 0.0, "2'1'": -0.5,
    "2'2'0": 0.0, "2'2'0'": 0.0, "2'1'1'": 0.0,
    # intermediates realized on the way (I' raises homogeneity by 1)
    "1'0": 0.5, "2'1'0": 0.5,
    # raw mollified noise (not a model symbol; white-noise scaling target)
    "xi": -1.5,
}
SYMBOLS = ("0'", "1'", "2'", "2'0", "1'1'", "2'0'", "2'1'", "2'2'0", "2'2'0'", "2'1'1'")
RECENTERED = ("2'", "2'1'", "2'2'0", "2'2'0'", "2'1'1'")


@dataclass(frozen=True)
class SymbolId:
    tag: str
    kappa: float = 0.0

    def __post_init__(self):
        if self.tag not in HOMOGENEITY:
            raise KeyError(f"unknown symbol tag {self.tag!r}")

    @property
    def homogeneity(self) -> float:
        return HOMOGENEITY[self.tag] - self.kappa


# ---------------------------------------------------------------------------
# test functions
# ---------------------------------------------------------------------------

def _bump(s):
    s = np.asarray(s, dtype=float)
    out = np.zeros_like(s)
    m = np.abs(s) < 1.0
    out[m] = np.exp(1.0 - 1.0 / (1.0 - s[m] ** 2))
    return out


def _c1_norm_constant() -> float:
    # sup of |phi|, |d_t phi|, |d_x phi| for phi(t,x) = bump(2t-1) bump(4x)
    s = np.linspace(-0.999, 0.999, 40001)
    b = _bump(s)
    db = np.gradient(b, s)
    return float(max(b.max(), 2 * np.abs(db).max(), 4 * np.abs(db).max()))


_C1_NORM = _c1_norm_constant()


@dataclass
class TestFunction:
    """phi^lambda_z with base phi(t, x) = c bump(2t - 1) bump(4x), C^1 norm <= 1.

    Support of the base is (0, 1) x (-1/4, 1/4); the parabolic rescaling
    phi^lambda_z(t, x) = lambda^{-3} phi((t - z0)/lambda^2, (x - z1)/lambda)
    keeps the integral fixed.
    """

    __test__ = False  # not a pytest class

    lam: float = 1.0
    center: tuple = (0.0, 0.0)

    def base(self, t, x):
        return _bump(2 * np.asarray(t) - 1.0) * _bump(4 * np.asarray(x)) / _C1_NORM

    def __call__(self, t, x):
        z0, z1 = self.center
        lam = self.lam
        return self.base((np.asarray(t) - z0) / lam**2, (np.asarray(x) - z1) / lam) / lam**3

    def t_support(self) -> tuple:
        return (self.center[0], self.center[0] + self.lam**2)

    def values_on(self, grid: GridSpec) -> np.ndarray:
        lo, hi = self.t_support()
        times = grid.times()
        if lo < times[0] - grid.dt / 2 or hi > times[-1] + grid.dt / 2:
            raise SupportEscape(
                f"support [{lo:.4g}, {hi:.4g}] outside field window "
                f"[{times[0]:.4g}, {times[-1]:.4g}]")
        xs = grid.xs()
        xr = np.mod(xs - self.center[1] + grid.x_period / 2, grid.x_period) - grid.x_period / 2
        z0 = self.center[0]
        return np.outer(_bump(2 * (times - z0) / self.lam**2 - 1.0),
                        _bump(4 * xr / self.lam)) / (_C1_NORM * self.lam**3)

    def integral(self) -> float:
        # int phi = int phi^lambda; product of 1d bump masses times the scalings
        s = np.linspace(-1, 1, 20001)
        b = _bump(s)
        mass = np.trapezoid(b, s)
        return float(mass / 2 * mass / 4 / _C1_NORM)


def pair_testfn(fld: SpaceTimeField, tf: TestFunction) -> float:
    """Midpoint-rule pairing <field, phi^lambda_z> on the field's grid."""
    w = tf.values_on(fld.grid)
    return float((fld.values * w).sum() * fld.grid.dt * fld.grid.dx)


# ---------------------------------------------------------------------------
# symbol construction
# ---------------------------------------------------------------------------

def build_symbols(psi: SpaceTimeField, F: Nonlinearity, fam: MultiplierFamily,
                  renorm: RenormTable, cutoff: CutoffSpec | None = None,
                  tags: Sequence[str] = SYMBOLS) -> dict:
    """Realize the model objects from one free-field realization.

    Returns {tag: SpaceTimeField}, every field trimmed to the window where
    all requested convolutions have full kernel history.  Raises
    MissingConstant if a required recentering constant is absent.
    """
    eps = fam.epsilon
    a = renorm.a_eps
    grid = psi.grid
    cutoff = cutoff or CutoffSpec()
    kk = np.arange(grid.nx // 2 + 1)
    m = fam.multiplier_array(kk)
    n_K = min(grid.nt, int(math.ceil(cutoff.t_off / grid.dt)) + 2)

    def iprime(values):
        return convolve_green_derivative(values, m, grid.dt, chi=cutoff)

    def const(tag):
        if tag not in renorm.constants:
            raise MissingConstant(f"constant for <{tag}> not in table")
        return renorm.constants[tag][0]

    seps = math.sqrt(eps)
    s = seps * psi.values
    raw = {}
    valid = {}
    raw["0'"] = F.d2f(s) / (2 * a)
    raw["1'"] = F.df(s) / (2 * a * seps)
    raw["2'"] = F(s) / (a * eps) - const("2'")
    for t in ("0'", "1'", "2'"):
        valid[t] = 0
    need = set(tags)
    if need & {"1'1'", "1'0"}:
        raw["1'0"] = iprime(raw["1'"])
        valid["1'0"] = n_K - 1
        raw["1'1'"] = raw["1'0"] * raw["1'"]
        valid["1'1'"] = valid["1'0"]
    if need & {"2'0", "2'0'", "2'1'", "2'2'0", "2'2'0'", "2'1'1'", "2'1'0"}:
        raw["2'0"] = iprime(raw["2'"])
        valid["2'0"] = n_K - 1
        raw["2'0'"] = raw["2'0"] * raw["0'"]
        valid["2'0'"] = valid["2'0"]
        raw["2'1'"] = raw["2'0"] * raw["1'"] - const("2'1'") if "2'1'" in need or \
            need & {"2'1'1'", "2'1'0"} else None
        if raw["2'1'"] is not None:
            valid["2'1'"] = valid["2'0"]
        raw["2'2'0"] = raw["2'0"] ** 2 - const("2'2'0") if need & {"2'2'0", "2'2'0'"} else None
        if raw["2'2'0"] is not None:
            valid["2'2'0"] = valid["2'0"]
            if "2'2'0'" in need:
                raw["2'2'0'"] = raw["2'2'0"] * raw["0'"] - const("2'2'0'")
                valid["2'2'0'"] = valid["2'2'0"]
        if need & {"2'1'1'", "2'1'0"}:
            raw["2'1'0"] = iprime(raw["2'1'"])
            valid["2'1'0"] = valid["2'1'"] + n_K - 1
            raw["2'1'1'"] = raw["2'1'0"] * raw["1'"] - const("2'1'1'")
            valid["2'1'1'"] = valid["2'1'0"]

    out_tags = [t for t in raw if raw[t] is not None and (t in tags or t in ("1'0", "2'1'0"))]
    start = max(valid[t] for t in out_tags)
    sub = GridSpec(grid.t0 + start * grid.dt, grid.dt, grid.nt - start, grid.nx, grid.x_period)
    return {t: SpaceTimeField(sub, raw[t][start:], frame="macro", epsilon=eps)
            for t in out_tags}


def build_symbol(tag: str, psi: SpaceTimeField, F: Nonlinearity, fam: MultiplierFamily,
                 renorm: RenormTable, **kw) -> SpaceTimeField:
    return build_symbols(psi, F, fam, renorm, tags=(tag,), **kw)[tag]


# ---------------------------------------------------------------------------
# higher renormalization constants
# ---------------------------------------------------------------------------

def _symbol_grid(eps: float, t_obs: float, dt: float | None, nx: int | None,
                 cutoff: CutoffSpec) -> GridSpec:
    dt = dt or eps**2 / 2
    nx = nx or (1 << int(math.ceil(math.log2(max(64.0, 4.0 / eps)))))
    t0 = -(2 * cutoff.t_off + 8 * dt)
    nt = int(math.ceil((t_obs - t0) / dt)) + 1
    return GridSpec(t0, dt, nt, nx, 1.0)


def _one_realization(F, fam, theta, grid, cutoff, seed, replica, profile,
                     stage: str = "symbol_cloud"):
    eps = fam.epsilon
    rng = rng_for(seed, stage, replica)
    pad = (theta.trunc_t + 1) * eps**2 + 4 * grid.dt + profile_history(fam)
    cloud = sample_cloud(grid.t0 - pad, grid.times()[-1] + (theta.trunc_t + 1) * eps**2,
                         1.0, eps**-3, rng)
    psi, _ = free_field(cloud, theta, fam, grid, profile=profile)
    return psi


def profile_history(fam: MultiplierFamily, tail: float = 1e-16, T_cap: float = 4.0) -> float:
    m1 = fam.multiplier_array(np.array([1]))[0]
    return min(T_cap, -math.log(tail) / m1)


def estimate_higher_constants(F: Nonlinearity, fam: MultiplierFamily, theta: Mollifier,
                              table: RenormTable, seed: int, replicas: int = 32,
                              nx: int | None = None, dt: float | None = None) -> dict:
    """Constants for <2'1'>, <2'2'0>, <2'2'0'>, <2'1'1'> from grid realizations.

    Products are averaged over the last valid row of each realization (the
    field is stationary there); the <2'1'1'> constant uses the fact that I'
    annihilates constants (K' has no zero mode), so raw products suffice.
    """
    eps = fam.epsilon
    cutoff = CutoffSpec()
    grid = _symbol_grid(eps, 4 * (dt or eps**2 / 2), dt, nx, cutoff)
    prof = malliavin_profile(theta, fam, nx=grid.nx)
    kk = np.arange(grid.nx // 2 + 1)
    m = fam.multiplier_array(kk)
    n_K = int(math.ceil(cutoff.t_off / grid.dt)) + 2
    a = table.a_eps
    c2 = table.constant("2'")
    seps = math.sqrt(eps)
    rows = {k: np.empty(replicas) for k in ("E21", "E220", "E2200", "E0", "E211")}
    for r in range(replicas):
        psi = _one_realization(F, fam, theta, grid, cutoff, seed, r, prof)
        s = seps * psi.values
        b0 = F.d2f(s) / (2 * a)
        b1 = F.df(s) / (2 * a * seps)
        b2 = F(s) / (a * eps) - c2
        i2 = convolve_green_derivative(b2, m, grid.dt, chi=cutoff)
        v1 = n_K - 1
        prod21 = i2 * b1
        i21 = convolve_green_derivative(prod21, m, grid.dt, chi=cutoff)
        v2 = 2 * (n_K - 1)
        last = grid.nt - 1
        assert last >= v2
        rows["E21"][r] = prod21[last].mean()
        rows["E220"][r] = (i2[last] ** 2).mean()
        rows["E2200"][r] = (i2[last] ** 2 * b0[last]).mean()
        rows["E0"][r] = b0[last].mean()
        rows["E211"][r] = (i21[last] * b1[last]).mean()
    out = {}
    for tag, expr in (("2'1'", rows["E21"]), ("2'2'0", rows["E220"]), ("2'1'1'", rows["E211"])):
        out[tag] = (float(expr.mean()), float(expr.std(ddof=1) / math.sqrt(replicas)))
    comb = rows["E2200"] - rows["E220"].mean() * rows["E0"]
    out["2'2'0'"] = (float(comb.mean()), float(comb.std(ddof=1) / math.sqrt(replicas)))
    return out


def recenter_check(F: Nonlinearity, fam: MultiplierFamily, theta: Mollifier,
                   table: RenormTable, lam: float, replicas: int, seed: int,
                   nx: int | None = None, dt: float | None = None) -> dict:
    """Null check on fresh replicas: mean of <recentered symbol, phi^lam> per tag.

    The replica streams are disjoint from the constant-estimation streams;
    grid parameters match those used for estimation so the discrete
    constants recenter the discrete objects exactly in expectation.  The
    reported stderr combines the pairing spread with the estimation error of
    the constant itself (a constant offset c pairs to c * int phi).
    """
    eps = fam.epsilon
    cutoff = CutoffSpec()
    grid = _symbol_grid(eps, lam**2 + 2 * (dt or eps**2 / 2), dt, nx, cutoff)
    prof = malliavin_profile(theta, fam, nx=grid.nx)
    tf = TestFunction(lam=lam, center=(0.0, 0.0))
    phi_mass = tf.integral()
    vals = {tag: np.empty(replicas) for tag in RECENTERED}
    for r in range(replicas):
        psi = _one_realization(F, fam, theta, grid, cutoff, seed, r, prof,
                               stage="recenter_cloud")
        symbols = build_symbols(psi, F, fam, table, cutoff=cutoff, tags=RECENTERED)
        for tag in RECENTERED:
            vals[tag][r] = pair_testfn(symbols[tag], tf)
    out = {}
    for tag, v in vals.items():
        se_pair = float(v.std(ddof=1) / math.sqrt(replicas))
        se_const = table.constants[tag][1] * phi_mass
        out[tag] = (float(v.mean()), math.hypot(se_pair, se_const), replicas)
    return out


# ---------------------------------------------------------------------------
# pairing kernels and I1 scaling samples
# ---------------------------------------------------------------------------

def pairing_kernel(profile: KernelProfile, tf: TestFunction) -> KernelProfile:
    """W(v) = int phi^lambda_z(x) profile(x - v) dx, on the profile's lattice.

    Pairing a first-chaos field I_1(profile(. - p)) with phi^lambda then
    equals I_1(W at the cloud points); exact for the lattice kernels.
    """
    dt, nx = profile.dt, profile.nx
    lam = tf.lam
    z0, z1 = tf.center
    ts = z0 + np.arange(0.5 * dt, lam**2, dt)
    xs = profile.grid().xs()
    xr = np.mod(xs - z1 + 0.5 * profile.x_period, profile.x_period) - 0.5 * profile.x_period
    phi = np.outer(_bump(2 * (ts - z0) / lam**2 - 1.0), _bump(4 * xr / lam)) / (_C1_NORM * lam**3)
    Fphi = np.fft.rfft(phi, axis=1)
    FG = np.fft.rfft(profile.values, axis=1)
    FW = fftconvolve(Fphi, np.conj(FG)[::-1, :], axes=0)
    W = np.fft.irfft(FW, n=nx, axis=1) * dt * profile.x_period / nx
    t0 = ts[0] - profile.times()[-1]
    return KernelProfile(profile.eps, t0, dt, W, None, x_period=profile.x_period)


def pairing_variance_quad(profile: KernelProfile, tf: TestFunction) -> float:
    """Var <field, phi^lambda> for the first-chaos field built on `profile`."""
    W = pairing_kernel(profile, tf)
    return profile.eps**-3 * W.l2sq()


def scaling_samples(profile: KernelProfile, lams: Sequence[float], replicas: int,
                    seed: int, stage: str) -> dict:
    """I_1 pairing samples for each lambda, common clouds across the ladder.

    One Poisson cloud per replica covers the union of the pairing-kernel
    boxes; every lambda reads the same points, which correlates the ladder
    and stabilizes fitted slopes.
    """
    eps = profile.eps
    kernels = {lam: pairing_kernel(profile, TestFunction(lam=lam)) for lam in lams}
    t_lo = min(k.t0 - k.dt / 2 for k in kernels.values())
    t_hi = max(k.t0 + (k.nt - 0.5) * k.dt for k in kernels.values())
    area = (t_hi - t_lo) * profile.x_period
    intensity = eps**-3
    comps = {lam: intensity * k.values.sum() * k.cell_area for lam, k in kernels.items()}
    out = {lam: np.empty(replicas) for lam in lams}
    for r in range(replicas):
        rng = rng_for(seed, stage, r)
        n = rng.poisson(intensity * area)
        vt = rng.uniform(t_lo, t_hi, n)
        vi = rng.integers(0, profile.nx, n)      # uniform cell in x
        for lam, k in kernels.items():
            jt = np.floor((vt - (k.t0 - k.dt / 2)) / k.dt).astype(np.int64)
            ok = (jt >= 0) & (jt < k.nt)
            out[lam][r] = k.values[jt[ok], vi[ok]].sum() - comps[lam]
    return out


# ---------------------------------------------------------------------------
# slope estimation
# ---------------------------------------------------------------------------

@dataclass
class ScalingResult:
    tag: str
    p: float
    lams: list
    moments: list
    stderrs: list
    slope_over_p: float
    ci_half_width: float
    target: float
    tolerance: float

    @property
    def passed(self) -> bool:
        return self.slope_over_p >= self.target - self.tolerance

    def within_band(self) -> bool:
        return abs(self.slope_over_p - self.target) <= self.tolerance

    def to_json(self) -> dict:
        return {"tag": self.tag, "p": self.p, "slope_over_p": self.slope_over_p,
                "ci_half_width": self.ci_half_width, "target": self.target,
                "tolerance": self.tolerance, "passed": self.passed,
                "lams": list(self.lams), "moments": list(self.moments)}


def fit_scaling(tag: str, samples_by_lam: dict, p: float, tolerance: float = 0.15,
                kappa: float = 0.0) -> ScalingResult:
    """Regress log E|<., phi^lam>|^p on log lam; slope/p >= |tau| - tol passes."""
    lams = sorted(samples_by_lam)
    if len(lams) < 4:
        raise InsufficientLadder(f"{len(lams)} ladder points < 4")
    moments, errs = [], []
    for lam in lams:
        v = np.abs(np.asarray(samples_by_lam[lam])) ** p
        moments.append(v.mean())
        errs.append(v.std(ddof=1) / math.sqrt(len(v)))
    x = np.log(np.asarray(lams))
    y = np.log(np.asarray(moments))
    A = np.column_stack([x, np.ones_like(x)])
    coef, res, *_ = np.linalg.lstsq(A, y, rcond=None)
    dof = max(len(x) - 2, 1)
    resid = y - A @ coef
    s2 = float(resid @ resid) / dof
    cov = s2 * np.linalg.inv(A.T @ A)
    ci = 1.96 * math.sqrt(cov[0, 0])
    return ScalingResult(tag, p, list(map(float, lams)), list(map(float, moments)),
                         list(map(float, errs)), float(coef[0] / p), ci / p,
                         HOMOGENEITY[tag] - kappa, tolerance)


def scaling_report_csv(results: Sequence[ScalingResult], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["tag", "p", "lambda", "moment", "stderr"])
        for r in results:
            for lam, mom, se in zip(r.lams, r.moments, r.stderrs):
                w.writerow([r.tag, r.p, lam, mom, se])


def scaling_summary_json(results: Sequence[ScalingResult], path) -> None:
    with open(path, "w") as fh:
        json.dump([r.to_json() for r in results], fh, indent=1)
