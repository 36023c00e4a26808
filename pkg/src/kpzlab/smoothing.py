"""Polynomial smoothing mechanism: multipliers, semigroups, Green's functions.

The smoothing operator acts on the unit torus through the Fourier multiplier
family m_eps(k) = eps^{-2} Q(2 pi eps k) (with m_0(k) = (2 pi k)^2 in the
limit), where Q is an even positive polynomial of degree 2n >= 4 whose
quadratic coefficient is 1.  The Green's function of d_t + m is synthesized
by explicit mode sums, decomposed into a compactly supported singular part
plus a smooth remainder, and the singular bounds are verified empirically
by ratio sweeps.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import DegreeTooLow, ModeOutOfRange, NotPositive, QuadraticNotUnit, UnresolvedMode
from .grids import GridSpec, SpaceTimeField, parabolic_distance


# ---------------------------------------------------------------------------
# polynomial
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PolynomialSmoothing:
    """Even polynomial Q(r) = sum_j c_j r^{2j}, j = 1..n, with c_1 = 1."""

    even_coefficients: tuple
    degree_half: int

    def __call__(self, r):
        r2 = np.asarray(r, dtype=float) ** 2
        out = np.zeros_like(r2)
        p = r2.copy()
        for c in self.even_coefficients:
            out = out + c * p
            p = p * r2
        return out

    @property
    def tag(self) -> str:
        return "Q[" + ",".join(f"{c:g}" for c in self.even_coefficients) + "]"


def validate_smoothing(coefficients: Sequence[float]) -> PolynomialSmoothing:
    """Validate the coefficient sequence (r^2, r^4, ..., r^{2n}) of Q.

    Raises DegreeTooLow, QuadraticNotUnit or NotPositive with the violated
    clause; returns the validated polynomial otherwise.
    """
    coeffs = tuple(float(c) for c in coefficients)
    if len(coeffs) == 0:
        raise DegreeTooLow("empty coefficient sequence")
    if len(coeffs) < 2:
        raise DegreeTooLow(f"degree 2n = {2 * len(coeffs)} < 4")
    if coeffs[0] != 1.0:
        raise QuadraticNotUnit(f"quadratic coefficient is {coeffs[0]}, must be 1")
    if coeffs[-1] <= 0.0:
        raise NotPositive(f"leading coefficient {coeffs[-1]} <= 0, Q(r) -> -inf")
    q = PolynomialSmoothing(coeffs, len(coeffs))
    # positivity on a validation grid covering all sign-change candidates
    r = np.linspace(1e-6, 10.0 * (1.0 + max(abs(c) for c in coeffs)), 20001)
    vals = q(r)
    if (vals <= 0.0).any():
        bad = r[int(np.argmax(vals <= 0.0))]
        raise NotPositive(f"Q({bad:.6g}) = {q(bad):.6g} <= 0")
    return q


# ---------------------------------------------------------------------------
# multiplier family
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class MultiplierFamily:
    """Multipliers m_eps(k) of the smoothing operator, cut off at |k| <= K_max."""

    smoothing: PolynomialSmoothing
    epsilon: float
    mode_cutoff: int

    def multiplier(self, k: int) -> float:
        if abs(k) > self.mode_cutoff:
            raise ModeOutOfRange(f"|k| = {abs(k)} > K_max = {self.mode_cutoff}")
        return float(self.multiplier_array(np.array([k]))[0])

    def multiplier_array(self, k) -> np.ndarray:
        """m_eps(k) without the cutoff check (internal synthesis use)."""
        k = np.asarray(k, dtype=float)
        if self.epsilon == 0.0:
            return (2 * np.pi * k) ** 2
        return self.smoothing(2 * np.pi * self.epsilon * k) / self.epsilon**2

    @property
    def tag(self) -> str:
        return f"{self.smoothing.tag}@eps={self.epsilon:g}"


def choose_mode_cutoff(smoothing: PolynomialSmoothing, eps: float, t_min: float,
                       tol: float = 1e-14, k_limit: int = 100000) -> int:
    """Smallest K with exp(-m(K) t_min) < tol: modes beyond K are dead at t_min."""
    fam = MultiplierFamily(smoothing, eps, k_limit)
    k = 1
    while k <= k_limit:
        if np.exp(-fam.multiplier_array(np.array([k]))[0] * t_min) < tol:
            return k
        k = k + 1 if k < 16 else int(k * 1.25) + 1
    raise UnresolvedMode(f"no mode cutoff below {k_limit} resolves t_min = {t_min}")


def make_family(coefficients: Sequence[float], eps: float, t_min: float = 1e-3,
                tol: float = 1e-14) -> MultiplierFamily:
    q = validate_smoothing(coefficients)
    return MultiplierFamily(q, eps, choose_mode_cutoff(q, eps, t_min, tol))


# ---------------------------------------------------------------------------
# Green's function synthesis
# ---------------------------------------------------------------------------

def _mode_sum(fam: MultiplierFamily, times: np.ndarray, nx: int, kind: str) -> np.ndarray:
    """Sum over modes in fixed increasing-k order; zero for t <= 0.

    kind: 'P' (kernel), 'Px' (spatial derivative), 'Pt' (time derivative).
    """
    xs = np.arange(nx) / nx
    tpos = times > 0.0
    out = np.zeros((len(times), nx))
    if kind == "P":
        out[tpos, :] = 1.0  # k = 0 mode
    for k in range(1, fam.mode_cutoff + 1):
        m = fam.multiplier_array(np.array([k]))[0]
        decay = np.exp(-m * times[tpos])
        if kind == "P":
            out[tpos, :] += np.outer(2.0 * decay, np.cos(2 * np.pi * k * xs))
        elif kind == "Px":
            out[tpos, :] += np.outer(2.0 * decay, -2 * np.pi * k * np.sin(2 * np.pi * k * xs))
        elif kind == "Pt":
            out[tpos, :] += np.outer(-2.0 * m * decay, np.cos(2 * np.pi * k * xs))
        else:
            raise ValueError(kind)
    return out


def truncation_estimate(fam: MultiplierFamily, t_min: float) -> float:
    """Crude bound on the dropped-mode mass of P at time t_min."""
    ks = fam.mode_cutoff + np.arange(1, 64)
    return float(2.0 * np.exp(-fam.multiplier_array(ks) * t_min).sum())


def apply_semigroup(fam: MultiplierFamily, values: np.ndarray, t: float) -> np.ndarray:
    """e^{t L_eps} f by spectral multiplication (mass conserved exactly)."""
    nx = len(values)
    m = fam.multiplier_array(np.arange(nx // 2 + 1))
    with np.errstate(under="ignore"):
        return np.fft.irfft(np.exp(-m * t) * np.fft.rfft(values), n=nx)


def greens_function(fam: MultiplierFamily, grid: GridSpec, tol: float = 1e-10):
    """(P_eps, P'_eps) on the grid; raises UnresolvedMode if truncation too coarse."""
    times = grid.times()
    pos = times[times > 0]
    if len(pos):
        est = truncation_estimate(fam, float(pos.min()))
        if est > tol:
            raise UnresolvedMode(
                f"truncation estimate {est:.3g} > {tol:.3g} at t = {pos.min():.3g}; raise K_max")
    P = _mode_sum(fam, times, grid.nx, "P")
    Px = _mode_sum(fam, times, grid.nx, "Px")
    mk = dict(frame="macro", epsilon=fam.epsilon)
    return (SpaceTimeField(grid, P, **mk), SpaceTimeField(grid, Px, **mk))


# ---------------------------------------------------------------------------
# decomposition P = K + R
# ---------------------------------------------------------------------------

def smoothstep(u):
    """C-infinity step: 1 for u <= 0, 0 for u >= 1."""
    u = np.asarray(u, dtype=float)
    def f(r):
        out = np.zeros_like(r)
        pos = r > 0
        out[pos] = np.exp(-1.0 / r[pos])
        return out
    a = f(1.0 - u)
    b = f(u)
    return a / (a + b)


@dataclass(frozen=True)
class CutoffSpec:
    """Smooth time cutoff: 1 for t <= t_on, 0 for t >= t_off.

    On the unit torus every spatial distance is <= 1/2, so a spatial factor
    that equals 1 on the parabolic ball of radius 1/2 is identically 1; the
    cutoff therefore acts in time only.
    """

    t_on: float = 0.25
    t_off: float = 0.9375

    def __call__(self, t):
        return smoothstep((np.asarray(t, dtype=float) - self.t_on) / (self.t_off - self.t_on))

    def derivative(self, t, h: float = 1e-6):
        return (self(np.asarray(t) + h) - self(np.asarray(t) - h)) / (2 * h)


@dataclass
class KernelPair:
    K_eps: SpaceTimeField
    R_eps: SpaceTimeField
    cutoff_profile: CutoffSpec


def decompose_kernel(P: SpaceTimeField, cutoff: CutoffSpec | None = None) -> KernelPair:
    """K = chi(t) P (supported in [0,1] x T), R = P - K (smooth, t >= t_on)."""
    cutoff = cutoff or CutoffSpec()
    times = P.grid.times()
    chi = cutoff(times) * (times > 0.0)
    K = P.values * chi[:, None]
    R = P.values - K
    mk = dict(frame=P.frame, epsilon=P.epsilon)
    return KernelPair(SpaceTimeField(P.grid, K, **mk), SpaceTimeField(P.grid, R, **mk), cutoff)


# ---------------------------------------------------------------------------
# pointwise kernel evaluation (for bound sweeps)
# ---------------------------------------------------------------------------

def kernel_at_points(fam: MultiplierFamily, t: np.ndarray, x: np.ndarray, kind: str) -> np.ndarray:
    """P / P' / dP/dt at scattered points (t > 0 assumed), fixed mode order."""
    t = np.asarray(t, dtype=float)
    x = np.asarray(x, dtype=float)
    out = np.ones_like(t) if kind == "P" else np.zeros_like(t)
    for k in range(1, fam.mode_cutoff + 1):
        m = fam.multiplier_array(np.array([k]))[0]
        decay = np.exp(-m * t)
        if kind == "P":
            out += 2.0 * decay * np.cos(2 * np.pi * k * x)
        elif kind == "Px":
            out += -4 * np.pi * k * decay * np.sin(2 * np.pi * k * x)
        elif kind == "Pt":
            out += -2.0 * m * decay * np.cos(2 * np.pi * k * x)
    return out


# ---------------------------------------------------------------------------
# bound verification
# ---------------------------------------------------------------------------

@dataclass
class BoundRow:
    bound_id: str
    epsilon: float
    delta: float
    sup_ratio: float
    argmax_t: float
    argmax_x: float


@dataclass
class BoundReport:
    rows: list = field(default_factory=list)

    def add(self, *args):
        self.rows.append(BoundRow(*args))

    def sups(self, bound_id: str, delta: float | None = None) -> dict:
        out = {}
        for r in self.rows:
            if r.bound_id == bound_id and (delta is None or r.delta == delta):
                out[r.epsilon] = r.sup_ratio
        return out

    def growth_factor(self, bound_id: str, delta: float | None = None) -> float:
        vals = list(self.sups(bound_id, delta).values())
        return max(vals) / min(vals) if vals else float("nan")

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["bound_id", "epsilon", "delta", "sup_ratio", "argmax_point_t", "argmax_point_x"])
            for r in self.rows:
                w.writerow([r.bound_id, r.epsilon, r.delta, r.sup_ratio, r.argmax_t, r.argmax_x])


def _sweep_points(eps: float, n_t: int = 28, n_x: int = 29, t_floor: float = 1e-6):
    """Evaluation points with parabolic distance in [eps/4, 1]."""
    ts = np.geomspace(max(eps**2 / 64, t_floor), 1.0, n_t)
    xs = np.concatenate([[0.0], np.geomspace(max(eps / 64, 1e-4), 0.5, n_x - 1)])
    T, X = np.meshgrid(ts, xs, indexing="ij")
    t, x = T.ravel(), X.ravel()
    d = parabolic_distance(t, x)
    keep = (d >= eps / 4) & (d <= 1.0)
    return t[keep], x[keep], d[keep]


def verify_kernel_bounds(families: Sequence[MultiplierFamily],
                         deltas: Sequence[float] = (0.1, 0.25, 0.5, 0.9),
                         malliavin_profiles: dict | None = None) -> BoundReport:
    """Empirical sup of |left side| / |right side without constant| per bound.

    families: ladder of MultiplierFamily over the same Q at decreasing eps.
    malliavin_profiles: optional {eps: SpaceTimeField} with the mollified
    Green's-derivative profile, enabling the (P^theta)' rows.
    """
    report = BoundReport()
    for fam in families:
        eps = fam.epsilon
        t, x, d = _sweep_points(eps)
        t_min = float(t.min())
        # re-resolve both kernels at the sweep's smallest time
        fam = MultiplierFamily(fam.smoothing, eps,
                               choose_mode_cutoff(fam.smoothing, eps, t_min))
        fam0 = MultiplierFamily(fam.smoothing, 0.0,
                                choose_mode_cutoff(fam.smoothing, 0.0, t_min))

        P = kernel_at_points(fam, t, x, "P")
        ratio = np.abs(P) * d
        i = int(np.argmax(ratio))
        report.add("P_m0_l0", eps, 0.0, float(ratio[i]), float(t[i]), float(x[i]))

        Px = kernel_at_points(fam, t, x, "Px")
        ratio = np.abs(Px) * d**2
        i = int(np.argmax(ratio))
        report.add("P_m0_l1", eps, 0.0, float(ratio[i]), float(t[i]), float(x[i]))

        # time-derivative row over the whole sweep window (the paper's corner
        # restriction "|x| gtrsim eps" with its implied constant left open;
        # empirically the ratio stays bounded down to |x| = eps/4 for
        # polynomial Q, which keeps the ladder comparison meaningful)
        Pt = kernel_at_points(fam, t, x, "Pt")
        ratio = np.abs(Pt) * d**3
        i = int(np.argmax(ratio))
        report.add("P_m1_l0", eps, 0.0, float(ratio[i]), float(t[i]), float(x[i]))
        # informational: the same ratio away from the corner (|x| >= 4 eps);
        # the domain degenerates once 4 eps reaches the torus scale
        far = d >= 4 * eps
        if far.any():
            rfar = np.abs(Pt[far]) * d[far] ** 3
            i = int(np.argmax(rfar))
            report.add("P_m1_l0_far", eps, 0.0, float(rfar[i]), float(t[far][i]), float(x[far][i]))

        Px0 = kernel_at_points(fam0, t, x, "Px")
        for delta in deltas:
            ratio = np.abs(Px - Px0) * d ** (2 + delta) / eps**delta
            i = int(np.argmax(ratio))
            report.add("P_diff_delta", eps, float(delta), float(ratio[i]), float(t[i]), float(x[i]))

        if malliavin_profiles and eps in malliavin_profiles:
            prof = malliavin_profiles[eps]
            tv = prof.grid.times()
            xv = prof.grid.xs()
            T, X = np.meshgrid(tv, xv, indexing="ij")
            dv = parabolic_distance(T.ravel(), X.ravel())
            ratio = np.abs(prof.values.ravel()) * (dv + eps) ** 2 / eps**1.5
            i = int(np.argmax(ratio))
            report.add("Ptheta_prime", eps, 0.0, float(ratio[i]), float(T.ravel()[i]), float(X.ravel()[i]))
    return report
