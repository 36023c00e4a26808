import itertools
import math

import numpy as np
import pytest

from kpzlab.chaos import (ChaosKernel, Discretization, Functional, PartitionSet,
                          char_function, chaos_expand, difference_op, i1_functional,
                          product_moment, set_partitions, spectral_gap_report,
                          wiener_ito, window_count, _distinct_sum)
from kpzlab.errors import BudgetExceeded
from kpzlab.seeding import rng_for


def poisson_moment(k: int, lam: float = 1.0, nmax: int = 120) -> float:
    """E N^k for N ~ Poisson(lam) by direct series (independent oracle)."""
    n = np.arange(nmax)
    logw = -lam + n * math.log(lam) - np.array([math.lgamma(i + 1) for i in n])
    return float((np.exp(logw) * n.astype(float) ** k).sum())


def brute_distinct_sum(table, cells):
    """Ordered distinct-tuple sum by explicit enumeration over cloud points."""
    k = table.ndim
    total = 0.0
    for tup in itertools.permutations(range(len(cells)), k):
        total += table[tuple(cells[list(tup)])]
    return total


DISC = Discretization(0.0, 1.0, 1.0, 3, 3)


def smooth_kernel(disc, fn):
    c = disc.centers()
    return ChaosKernel(1, fn(c[:, 0], c[:, 1]), disc)


class TestDifference:
    def test_window_indicator(self):
        F = window_count(0.0, 0.5, 0.0, 1.0)
        cloud = DISC.sample(rng_for(1, "d"))
        assert difference_op(F, cloud, [(0.2, 0.3)]) == 1.0
        assert difference_op(F, cloud, [(0.7, 0.3)]) == 0.0

    def test_product_rule_exact(self):
        # D(FG) = (DF)G + F(DG) + (DF)(DG), exactly, over random clouds/points
        N1 = window_count(0.0, 0.6, 0.0, 0.7)
        N2 = window_count(0.3, 1.0, 0.2, 1.0)
        F = Functional(lambda p: math.sin(N1(p)) + 0.5 * N1(p), "F")
        G = Functional(lambda p: N2(p) ** 2 - N2(p), "G")
        FG = Functional(lambda p: F(p) * G(p), "FG")
        for r in range(100):
            rng = rng_for(2, "pr", r)
            cloud = DISC.sample(rng)
            u = (rng.uniform(0, 1), rng.uniform(0, 1))
            lhs = difference_op(FG, cloud, [u])
            df = difference_op(F, cloud, [u])
            dg = difference_op(G, cloud, [u])
            rhs = df * G(cloud) + F(cloud) * dg + df * dg
            assert lhs == pytest.approx(rhs, abs=1e-12)

    def test_constant_zero(self):
        F = Functional(lambda p: 42.0, "const")
        cloud = DISC.sample(rng_for(3, "c"))
        assert difference_op(F, cloud, [(0.5, 0.5)]) == 0.0
        assert difference_op(F, cloud, [(0.5, 0.5), (0.1, 0.9)]) == 0.0

    def test_commutativity_exact(self):
        N = window_count(0.0, 0.8, 0.0, 0.8)
        F = Functional(lambda p: N(p) ** 3, "N3")
        for r in range(20):
            rng = rng_for(4, "comm", r)
            cloud = DISC.sample(rng)
            u1 = (rng.uniform(0, 1), rng.uniform(0, 1))
            u2 = (rng.uniform(0, 1), rng.uniform(0, 1))
            a = difference_op(Functional(lambda p: difference_op(F, p, [u1]), ""), cloud, [u2])
            b = difference_op(Functional(lambda p: difference_op(F, p, [u2]), ""), cloud, [u1])
            assert a == b


class TestDistinctSums:
    @pytest.mark.parametrize("order", [1, 2, 3])
    def test_against_enumeration(self, order):
        m = DISC.n_cells
        rng = rng_for(5, f"ds{order}")
        table = rng.normal(size=(m,) * order)
        # symmetrize
        for perm in itertools.permutations(range(order)):
            table = (table + np.transpose(table, perm)) / 2
        cloud = DISC.sample(rng_for(6, "dscloud"))
        cells = DISC.locate(cloud)
        counts = DISC.counts(cloud)
        got = _distinct_sum(table, counts)
        want = brute_distinct_sum(table, cells)
        assert got == pytest.approx(want, rel=1e-12, abs=1e-12)


class TestWienerIto:
    def test_i1_identity_exact(self):
        g = smooth_kernel(DISC, lambda t, x: np.sin(2 * np.pi * t) + x)
        for r in range(10):
            cloud = DISC.sample(rng_for(7, "i1", r))
            direct = g.values[DISC.locate(cloud)].sum() - g.values.sum() * DISC.cell_measure \
                if len(cloud) else -g.values.sum() * DISC.cell_measure
            assert wiener_ito(g, cloud) == pytest.approx(direct, rel=1e-12, abs=1e-13)
            assert i1_functional(g)(cloud) == pytest.approx(direct, rel=1e-12, abs=1e-13)

    def test_i2_mean_zero(self):
        m = DISC.n_cells
        rng = rng_for(8, "i2")
        f = rng.normal(size=(m, m))
        f = (f + f.T) / 2
        ker = ChaosKernel(2, f, DISC)
        vals = np.array([wiener_ito(ker, DISC.sample(rng_for(8, "i2c", r)))
                         for r in range(20_000)])
        se = vals.std(ddof=1) / math.sqrt(len(vals))
        assert abs(vals.mean()) < 3 * se

    def test_isometry_second_order(self):
        m = DISC.n_cells
        rng = rng_for(9, "iso")
        f = rng.normal(size=(m, m))
        f = (f + f.T) / 2
        ker = ChaosKernel(2, f, DISC)
        vals = np.array([wiener_ito(ker, DISC.sample(rng_for(9, "isoc", r))) ** 2
                         for r in range(20_000)])
        target = 2.0 * (f**2).sum() * DISC.cell_measure**2
        se = vals.std(ddof=1) / math.sqrt(len(vals))
        assert abs(vals.mean() - target) < 3 * se

    def test_cross_order_orthogonality(self):
        m = DISC.n_cells
        rng = rng_for(10, "orth")
        f = rng.normal(size=(m, m))
        f = (f + f.T) / 2
        k2 = ChaosKernel(2, f, DISC)
        k1 = smooth_kernel(DISC, lambda t, x: np.cos(2 * np.pi * x) + t)
        vals = np.array([wiener_ito(k1, c) * wiener_ito(k2, c)
                         for c in (DISC.sample(rng_for(10, "oc", r)) for r in range(20_000))])
        se = vals.std(ddof=1) / math.sqrt(len(vals))
        assert abs(vals.mean()) < 3 * se

    def test_budget(self):
        m = DISC.n_cells
        ker = ChaosKernel(2, np.ones((m, m)), DISC)
        big = np.column_stack([np.linspace(0.01, 0.99, 300), np.linspace(0.01, 0.99, 300)])
        with pytest.raises(BudgetExceeded):
            wiener_ito(ker, big)


class TestPartitions:
    def test_counts(self):
        assert len(PartitionSet.enumerate([1, 1]).partitions) == 1
        assert len(PartitionSet.enumerate([1, 1, 1]).partitions) == 1
        assert len(PartitionSet.enumerate([2, 2]).partitions) == 2

    def test_validity(self):
        ps = PartitionSet.enumerate([2, 3, 1])
        assert ps.is_valid()
        groups = np.repeat(np.arange(3), [2, 3, 1])
        for part in ps.partitions:
            for block in part:
                assert len(block) >= 2
                assert len({groups[i] for i in block}) == len(block)

    def test_budget(self):
        with pytest.raises(BudgetExceeded):
            PartitionSet.enumerate([4, 4, 4])

    def test_bell_number_total(self):
        assert sum(1 for _ in set_partitions(range(5))) == 52


class TestProductMoment:
    def setup_method(self):
        self.f = smooth_kernel(DISC, lambda t, x: 1.0 + 0.5 * np.sin(2 * np.pi * t))
        self.g = smooth_kernel(DISC, lambda t, x: x - 0.3)
        self.h = smooth_kernel(DISC, lambda t, x: np.cos(2 * np.pi * x))

    def test_pair(self):
        want = (self.f.values * self.g.values).sum() * DISC.cell_measure
        assert product_moment([self.f, self.g]) == pytest.approx(want, rel=1e-12)

    def test_triple_vs_mc(self):
        # E I1(f) I1(g) I1(h) = int f g h  (the distinctive non-Gaussian term)
        want = (self.f.values * self.g.values * self.h.values).sum() * DISC.cell_measure
        assert product_moment([self.f, self.g, self.h]) == pytest.approx(want, rel=1e-12)
        vals = np.empty(40_000)
        for r in range(len(vals)):
            c = DISC.sample(rng_for(11, "tm", r))
            vals[r] = wiener_ito(self.f, c) * wiener_ito(self.g, c) * wiener_ito(self.h, c)
        se = vals.std(ddof=1) / math.sqrt(len(vals))
        assert abs(vals.mean() - want) < 3 * se

    def test_order22_isometry(self):
        m = DISC.n_cells
        rng = rng_for(12, "o22")
        f = rng.normal(size=(m, m))
        f = (f + f.T) / 2
        g = rng.normal(size=(m, m))
        g = (g + g.T) / 2
        kf, kg = ChaosKernel(2, f, DISC), ChaosKernel(2, g, DISC)
        want = 2.0 * (f * g).sum() * DISC.cell_measure**2
        assert product_moment([kf, kg]) == pytest.approx(want, rel=1e-12)


class TestChaosExpand:
    def test_window_count_exact(self):
        W = (0.0, 0.5, 0.0, 1.0)
        F = window_count(*W)
        kernels, truncate = chaos_expand(F, 2, DISC, replicas=800, seed=13)
        mu_W = 0.5
        # f1 = 1_W and f2 = 0 hold exactly (differences of a linear functional
        # are deterministic); f0 is the Monte Carlo mean of a Poisson count
        centers = DISC.centers()
        ind = ((centers[:, 0] >= 0.0) & (centers[:, 0] < 0.5)).astype(float)
        assert np.allclose(kernels[1].values, ind, atol=1e-12)
        assert np.allclose(kernels[2].values, 0.0, atol=1e-12)
        assert kernels[0].values == pytest.approx(mu_W, abs=3 * math.sqrt(mu_W / 800))
        # T^(1) subtracts the estimated mean exactly
        c = DISC.sample(rng_for(13, "tc"))
        assert truncate(1)(c) == pytest.approx(F(c) - float(kernels[0].values), abs=1e-12)

    def test_recover_i2_kernel(self):
        m = DISC.n_cells
        rng = rng_for(14, "rec")
        f = rng.normal(size=(m, m))
        f = (f + f.T) / 2
        ker = ChaosKernel(2, f, DISC)
        F = Functional(lambda p: wiener_ito(ker, p), "I2")
        kernels, _ = chaos_expand(F, 2, DISC, replicas=400, seed=14)
        resid = kernels[2].values - f
        # E D_{u,v} I2(f) = 2 f, so f2 = f; cellwise within 3 MC stderr
        spread = np.abs(resid).max()
        assert spread < 0.6  # MC cellwise tolerance at 400 replicas
        assert np.abs(resid).mean() < 0.12

    def test_parseval_cubic(self):
        # window aligned with the cell partition so the cell kernels represent
        # the functional exactly; F cubic => chaos terminates at order 3
        N = window_count(1.0 / 3.0, 1.0, 0.0, 2.0 / 3.0)
        F = Functional(lambda p: N(p) ** 3 - N(p) ** 2, "cubic")
        kernels, _ = chaos_expand(F, 3, DISC, replicas=1500, seed=15)
        mu = 4.0 / 9.0
        n = np.arange(60)
        w = np.exp(-mu + n * np.log(mu) - np.array([math.lgamma(i + 1) for i in n]))
        f = n.astype(float) ** 3 - n.astype(float) ** 2
        var_true = float((w * f * f).sum() - ((w * f).sum()) ** 2)
        var_chaos = sum(math.factorial(k) * kernels[k].l2sq() for k in range(1, 4))
        assert var_chaos == pytest.approx(var_true, rel=0.15)

    def test_symmetry_defect(self):
        m = DISC.n_cells
        ker = ChaosKernel(2, np.ones((m, m)), DISC)
        assert ker.symmetry_defect() == 0.0


class TestCharFunction:
    def test_v_zero(self):
        g = smooth_kernel(DISC, lambda t, x: t + x)
        assert char_function(g, 0.0) == pytest.approx(1.0)

    def test_indicator_closed_form(self):
        c, v = 0.7, 1.3
        vals = np.zeros(DISC.n_cells)
        centers = DISC.centers()
        inside = (centers[:, 0] < 0.5) & (centers[:, 1] < 0.5)  # a window of measure ~ 0.25
        vals[inside] = c
        g = ChaosKernel(1, vals, DISC)
        mW = inside.sum() * DISC.cell_measure
        want = np.exp(mW * (np.exp(1j * v * c) - 1j * v * c - 1.0))
        assert char_function(g, v) == pytest.approx(want, rel=1e-12)

    def test_empirical_chf(self):
        g = smooth_kernel(DISC, lambda t, x: np.sin(2 * np.pi * t) * np.cos(2 * np.pi * x))
        v = 0.9
        F = i1_functional(g)
        samples = np.array([F(DISC.sample(rng_for(16, "chf", r))) for r in range(20_000)])
        emp = np.exp(1j * v * samples)
        want = char_function(g, v)
        se = max(emp.real.std(ddof=1), emp.imag.std(ddof=1)) / math.sqrt(len(samples))
        assert abs(emp.mean().real - want.real) < 3 * se
        assert abs(emp.mean().imag - want.imag) < 3 * se


class TestSpectralGap:
    def test_i1_equality(self):
        g = smooth_kernel(DISC, lambda t, x: np.sin(2 * np.pi * (t + x)))
        rep = spectral_gap_report([i1_functional(g)], 2.0, DISC, replicas=800, seed=17)
        row = rep.rows[0]
        # Var I1(g) = int g^2: the L2 inequality holds with equality
        assert abs(row.slack) < 3 * row.stderr + 1e-12

    def test_window_square_case(self):
        # F = N^2, mu(W) = 1: lhs E N^4 = 15, rhs = (E N^2)^2 + E(2N+1)^2 = 4 + 13
        lhs = poisson_moment(4)
        en2 = poisson_moment(2)
        rhs = en2**2 + (4 * poisson_moment(2) + 4 * poisson_moment(1) + 1)
        assert lhs == pytest.approx(15.0, abs=1e-9)
        assert rhs == pytest.approx(17.0, abs=1e-9)
        assert lhs <= rhs
        # Monte Carlo agreement of the report with the analytic values
        N = window_count(0.0, 1.0, 0.0, 1.0)
        F = Functional(lambda p: N(p) ** 2, "count^2")
        rep = spectral_gap_report([F], 2.0, DISC, replicas=4000, seed=18)
        row = rep.rows[0]
        assert row.rhs - row.lhs == pytest.approx(2.0, abs=3 * row.stderr)

    def test_smooth_functions_of_i1(self):
        suite = []
        for i in range(20):
            rng = rng_for(19, "suite", i)
            g = smooth_kernel(DISC, lambda t, x, a=rng.normal(), b=rng.normal():
                              a * np.sin(2 * np.pi * t) + b * np.cos(2 * np.pi * x))
            base = i1_functional(g)
            suite.append(Functional(lambda p, b=base: math.tanh(b(p)), f"tanh{i}"))
        rep = spectral_gap_report(suite, 4.0, DISC, replicas=300, seed=19)
        assert rep.worst_slack_sigmas() > -3.0
        assert np.isfinite(rep.max_fitted_c())

    def test_csv(self, tmp_path):
        g = smooth_kernel(DISC, lambda t, x: t)
        rep = spectral_gap_report([i1_functional(g)], 2.0, DISC, replicas=50, seed=20)
        rep.to_csv(tmp_path / "gap.csv")
        head = (tmp_path / "gap.csv").read_text().splitlines()[0]
        assert head == "functional_id,p,lhs,rhs,slack,fitted_c,stderr"
