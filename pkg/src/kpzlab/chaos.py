"""Poisson functional calculus on a small discretized domain.

Difference (Malliavin) operators, multiple Wiener-Ito integrals, the
partition moment formula, chaos expansion by iterated differences, the
first-chaos characteristic function, and empirical spectral-gap reports.

Kernels are piecewise constant on a rectangular cell decomposition of the
domain; all identities are exact for that discrete model, so Monte Carlo
checks sit on top of exact quadrature oracles.
"""
from __future__ import annotations

import csv
import itertools
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import BudgetExceeded
from .seeding import rng_for


# ---------------------------------------------------------------------------
# domain discretization and clouds
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Discretization:
    """Uniform cells on (t_lo, t_hi) x (0, width); mu = intensity * Lebesgue."""

    t_lo: float
    t_hi: float
    width: float
    n_t: int
    n_x: int
    intensity: float = 1.0

    @property
    def n_cells(self) -> int:
        return self.n_t * self.n_x

    @property
    def cell_measure(self) -> float:
        return self.intensity * (self.t_hi - self.t_lo) * self.width / self.n_cells

    @property
    def total_measure(self) -> float:
        return self.intensity * (self.t_hi - self.t_lo) * self.width

    def centers(self) -> np.ndarray:
        dt = (self.t_hi - self.t_lo) / self.n_t
        dx = self.width / self.n_x
        ts = self.t_lo + dt * (np.arange(self.n_t) + 0.5)
        xs = dx * (np.arange(self.n_x) + 0.5)
        T, X = np.meshgrid(ts, xs, indexing="ij")
        return np.column_stack([T.ravel(), X.ravel()])

    def locate(self, points: np.ndarray) -> np.ndarray:
        """Cell index of each point; points must lie inside the box."""
        pts = np.atleast_2d(points)
        it = ((pts[:, 0] - self.t_lo) / (self.t_hi - self.t_lo) * self.n_t).astype(np.int64)
        ix = (pts[:, 1] / self.width * self.n_x).astype(np.int64)
        it = np.clip(it, 0, self.n_t - 1)
        ix = np.clip(ix, 0, self.n_x - 1)
        return it * self.n_x + ix

    def counts(self, points: np.ndarray) -> np.ndarray:
        if len(points) == 0:
            return np.zeros(self.n_cells)
        return np.bincount(self.locate(points), minlength=self.n_cells).astype(float)

    def sample(self, rng: np.random.Generator) -> np.ndarray:
        n = rng.poisson(self.total_measure)
        ts = rng.uniform(self.t_lo, self.t_hi, n)
        xs = rng.uniform(0.0, self.width, n)
        return np.column_stack([ts, xs])


@dataclass
class Functional:
    """Measurable functional of a point configuration (an (n, 2) array)."""

    evaluator: Callable
    descriptor: str = ""

    def __call__(self, points: np.ndarray) -> float:
        return float(self.evaluator(points))


def window_count(t0: float, t1: float, x0: float, x1: float) -> Functional:
    def ev(pts):
        if len(pts) == 0:
            return 0.0
        inside = (pts[:, 0] >= t0) & (pts[:, 0] < t1) & (pts[:, 1] >= x0) & (pts[:, 1] < x1)
        return float(inside.sum())
    return Functional(ev, f"count[{t0},{t1})x[{x0},{x1})")


# ---------------------------------------------------------------------------
# difference operator
# ---------------------------------------------------------------------------

def difference_op(F: Functional, cloud: np.ndarray, us: Sequence) -> float:
    """D_{u_1,...,u_n} F by inclusion-exclusion over the added points."""
    us = np.atleast_2d(np.asarray(us, dtype=float))
    n = us.shape[0]
    total = 0.0
    for mask in range(1 << n):
        sel = [i for i in range(n) if mask >> i & 1]
        pts = np.vstack([cloud, us[sel]]) if sel else cloud
        total += (-1) ** (n - len(sel)) * F(pts)
    return total


# ---------------------------------------------------------------------------
# partitions
# ---------------------------------------------------------------------------

def set_partitions(items: Sequence):
    """All partitions of items into nonempty blocks (canonical order)."""
    items = list(items)
    if not items:
        yield []
        return
    first, rest = items[0], items[1:]
    for part in set_partitions(rest):
        for i in range(len(part)):
            yield part[:i] + [[first] + part[i]] + part[i + 1:]
        yield [[first]] + part


@dataclass
class PartitionSet:
    """Admissible pairings for a product of multiple integrals.

    group_sizes (n_1, ..., n_l) index the argument groups J_i; partitions
    holds every partition of {0, ..., sum n_i - 1} whose blocks have size at
    least 2 and meet each group at most once.
    """

    group_sizes: tuple
    partitions: list = field(default_factory=list)

    @classmethod
    def enumerate(cls, group_sizes: Sequence[int], budget: int = 8) -> "PartitionSet":
        sizes = tuple(int(n) for n in group_sizes)
        a = sum(sizes)
        if a > budget:
            raise BudgetExceeded(f"total order {a} > {budget}")
        groups = np.repeat(np.arange(len(sizes)), sizes)
        keep = []
        for part in set_partitions(range(a)):
            ok = all(len(b) >= 2 and len({groups[i] for i in b}) == len(b) for b in part)
            if ok:
                keep.append([sorted(b) for b in part])
        return cls(sizes, keep)

    def is_valid(self) -> bool:
        groups = np.repeat(np.arange(len(self.group_sizes)), self.group_sizes)
        for part in self.partitions:
            for b in part:
                if len(b) < 2 or len({groups[i] for i in b}) != len(b):
                    return False
        return True


# ---------------------------------------------------------------------------
# chaos kernels and Wiener-Ito integrals
# ---------------------------------------------------------------------------

@dataclass
class ChaosKernel:
    """Symmetric piecewise-constant kernel of a fixed chaos order."""

    order: int
    values: np.ndarray            # shape (n_cells,) * order; scalar for order 0
    disc: Discretization

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.order > 0 and self.values.shape != (self.disc.n_cells,) * self.order:
            raise ValueError("kernel table shape does not match the discretization")

    def symmetry_defect(self, rng=None, samples: int = 200) -> float:
        if self.order < 2:
            return 0.0
        rng = rng or np.random.default_rng(0)
        m = self.disc.n_cells
        worst = 0.0
        for _ in range(samples):
            idx = tuple(rng.integers(0, m, self.order))
            perm = tuple(rng.permutation(self.order))
            worst = max(worst, abs(self.values[idx] - self.values[tuple(idx[i] for i in perm)]))
        return worst

    def l2sq(self) -> float:
        return float((self.values**2).sum() * self.disc.cell_measure**self.order)

    def l1(self) -> float:
        return float(np.abs(self.values).sum() * self.disc.cell_measure**self.order)

    def at_points(self, points: np.ndarray) -> float:
        idx = tuple(self.disc.locate(np.atleast_2d(p))[0] for p in points)
        return float(self.values[idx])


def _collapse(table: np.ndarray, blocks) -> np.ndarray:
    """Merge table axes inside each block (diagonal extraction via einsum)."""
    letters = "abcdefgh"
    sub = [""] * table.ndim
    for bi, b in enumerate(blocks):
        for ax in b:
            sub[ax] = letters[bi]
    out = "".join(letters[bi] for bi in range(len(blocks)))
    return np.einsum("".join(sub) + "->" + out, table)


def _distinct_sum(table: np.ndarray, counts: np.ndarray) -> float:
    """Sum of table over ordered tuples of pairwise-distinct cloud points."""
    k = table.ndim
    if k == 0:
        return float(table)
    letters = "abcdefgh"[:k]
    full = float(np.einsum(letters + "," + ",".join(letters) + "->", table,
                           *([counts] * k)))
    if k == 1:
        return full
    out = full
    for part in set_partitions(range(k)):
        if len(part) == k:        # all singletons: the distinct term itself
            continue
        out -= _distinct_sum(_collapse(table, part), counts)
    return out


def wiener_ito(g: ChaosKernel, points: np.ndarray, max_points: int = 200) -> float:
    """I_n(g) = sum_k (-1)^{n-k} C(n,k) int g d eta^(k) d mu^{n-k}.

    eta^(k) runs over ordered k-tuples of distinct cloud points; the mu
    factors are exact cell quadrature.  Clouds larger than max_points are
    rejected for n >= 2 (cost control).
    """
    n = g.order
    if n == 0:
        return float(g.values)
    if n >= 2 and len(points) > max_points:
        raise BudgetExceeded(f"cloud of {len(points)} points > {max_points} for order {n}")
    counts = g.disc.counts(points)
    mu = g.disc.cell_measure
    total = 0.0
    for k in range(n + 1):
        # integrate out the n-k trailing arguments against mu
        partial = g.values
        for _ in range(n - k):
            partial = partial.sum(axis=-1) * mu
        total += (-1) ** (n - k) * math.comb(n, k) * _distinct_sum(np.asarray(partial), counts)
    return float(total)


def i1_functional(g: ChaosKernel) -> Functional:
    gv = g.values
    mu = g.disc.cell_measure
    comp = gv.sum() * mu

    def ev(pts):
        if len(pts) == 0:
            return -comp
        return gv[g.disc.locate(pts)].sum() - comp

    return Functional(ev, "I1")


def product_moment(kernels: Sequence[ChaosKernel], budget: int = 8) -> float:
    """E prod_i I_{n_i}(f_i) by enumeration of admissible partitions."""
    sizes = [k.order for k in kernels]
    pset = PartitionSet.enumerate(sizes, budget=budget)
    disc = kernels[0].disc
    mu = disc.cell_measure
    letters = "abcdefgh"
    offsets = np.cumsum([0] + sizes)
    total = 0.0
    for part in pset.partitions:
        label = {}
        for bi, b in enumerate(part):
            for pos in b:
                label[pos] = letters[bi]
        subs = []
        for i, k in enumerate(kernels):
            subs.append("".join(label[offsets[i] + j] for j in range(k.order)))
        expr = ",".join(subs) + "->"
        total += float(np.einsum(expr, *[k.values for k in kernels])) * mu ** len(part)
    return total


def char_function(g: ChaosKernel, v: float) -> complex:
    """E exp(i v I_1(g)) = exp( int (e^{ivg} - ivg - 1) d mu )."""
    if g.order != 1:
        raise ValueError("characteristic function implemented for order-1 kernels")
    mu = g.disc.cell_measure
    integrand = np.exp(1j * v * g.values) - 1j * v * g.values - 1.0
    return complex(np.exp(integrand.sum() * mu))


# ---------------------------------------------------------------------------
# chaos expansion by iterated differences
# ---------------------------------------------------------------------------

def chaos_expand(F: Functional, max_order: int, disc: Discretization,
                 replicas: int, seed: int):
    """Kernels f_n(u) = E D_u F / n! for n <= max_order, by Monte Carlo.

    Returns   (kernels, truncate)  where truncate(d) is the Functional
    T^(d) F = F - sum_{n < d} I_n(f_n).
    """
    if max_order > 3:
        raise BudgetExceeded("chaos expansion limited to order 3")
    m = disc.n_cells
    centers = disc.centers()
    acc = [0.0] + [np.zeros((m,) * n) for n in range(1, max_order + 1)]
    for r in range(replicas):
        rng = rng_for(seed, "chaos_expand", r)
        cloud = disc.sample(rng)
        base = F(cloud)
        acc[0] += base
        singles = np.array([F(np.vstack([cloud, centers[[c]]])) for c in range(m)])
        if max_order >= 1:
            acc[1] += singles - base
        if max_order >= 2:
            pair = np.zeros((m, m))
            for c1 in range(m):
                row = np.array([F(np.vstack([cloud, centers[[c1, c2]]]))
                                for c2 in range(c1, m)])
                pair[c1, c1:] = row
                pair[c1:, c1] = row
            acc[2] += pair - singles[:, None] - singles[None, :] + base
        if max_order >= 3:
            trip = np.zeros((m, m, m))
            for c1 in range(m):
                for c2 in range(c1, m):
                    for c3 in range(c2, m):
                        d = difference_op(F, cloud, centers[[c1, c2, c3]])
                        for p in set(itertools.permutations((c1, c2, c3))):
                            trip[p] = d
            acc[3] += trip
    kernels = [ChaosKernel(0, np.asarray(acc[0] / replicas), disc)]
    for n in range(1, max_order + 1):
        kernels.append(ChaosKernel(n, acc[n] / (replicas * math.factorial(n)), disc))

    def truncate(d: int) -> Functional:
        def ev(pts):
            val = F(pts)
            for n in range(min(d, len(kernels))):
                val -= wiener_ito(kernels[n], pts)
            return val
        return Functional(ev, f"T^({d}){F.descriptor}")

    return kernels, truncate


# ---------------------------------------------------------------------------
# spectral gap report
# ---------------------------------------------------------------------------

@dataclass
class GapRow:
    functional_id: str
    p: float
    lhs: float
    rhs: float
    slack: float
    fitted_c: float
    stderr: float


@dataclass
class GapReport:
    rows: list = field(default_factory=list)

    def worst_slack_sigmas(self) -> float:
        """min over rows of slack / stderr (negative = apparent violation)."""
        return min(r.slack / r.stderr if r.stderr > 0 else math.inf for r in self.rows)

    def max_fitted_c(self) -> float:
        return max(r.fitted_c for r in self.rows)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["functional_id", "p", "lhs", "rhs", "slack", "fitted_c", "stderr"])
            for r in self.rows:
                w.writerow([r.functional_id, r.p, r.lhs, r.rhs, r.slack, r.fitted_c, r.stderr])


def spectral_gap_report(functionals: Sequence[Functional], p: float,
                        disc: Discretization, replicas: int, seed: int,
                        n_boot: int = 200) -> GapReport:
    """Empirical check of E F^2 <= (E F)^2 + E int (D_u F)^2 dmu, plus the
    fitted constant of the L^p bound ||F||_p <= c (|E F| + mixed norms of D F).
    """
    report = GapReport()
    centers = disc.centers()
    m = disc.n_cells
    mu = disc.cell_measure
    for fi, F in enumerate(functionals):
        fvals = np.empty(replicas)
        dsq = np.empty(replicas)          # int (D_u F)^2 dmu per replica
        dmat = np.empty((replicas, m))    # D_u F per cell
        for r in range(replicas):
            rng = rng_for(seed, f"sg_{fi}", r)
            cloud = disc.sample(rng)
            base = F(cloud)
            fvals[r] = base
            d = np.array([F(np.vstack([cloud, centers[[c]]])) for c in range(m)]) - base
            dmat[r] = d
            dsq[r] = (d**2).sum() * mu
        lhs = float((fvals**2).mean())
        rhs = float(fvals.mean()) ** 2 + float(dsq.mean())
        # bootstrap stderr of the slack
        brng = rng_for(seed, f"sg_boot_{fi}")
        slacks = np.empty(n_boot)
        for b in range(n_boot):
            idx = brng.integers(0, replicas, replicas)
            slacks[b] = fvals[idx].mean() ** 2 + dsq[idx].mean() - (fvals[idx] ** 2).mean()
        stderr = float(slacks.std(ddof=1))
        # L^p side
        fp = float((np.abs(fvals) ** p).mean() ** (1 / p))
        du_lp = (np.abs(dmat) ** p).mean(axis=0) ** (1 / p)     # ||D_u F||_{L^p_w} per cell
        mixed = math.sqrt((du_lp**2).sum() * mu) + float((du_lp**p).sum() * mu) ** (1 / p)
        denom = abs(fvals.mean()) + mixed
        fitted_c = fp / denom if denom > 0 else math.inf
        report.rows.append(GapRow(F.descriptor or f"F{fi}", p, lhs, rhs,
                                  rhs - lhs, fitted_c, stderr))
    return report
