import math

import numpy as np
import pytest

from kpzlab.errors import BoxTooSmall, CoverageGap
from kpzlab.fields import (CouplingEstimate, coupling_limit, coupling_mc, free_field,
                           kernel_char_function, malliavin_profile, nl_cos, nl_w2,
                           nl_w4, noise_profile, nonlinearity_from_table, plane_profile,
                           psi_origin_samples, psi_variance_quad, renorm_constants,
                           resolve_nonlinearity, sample_i1, semigroup_slice_weights)
from kpzlab.grids import GridSpec
from kpzlab.noise import gaussian_mollifier, sample_cloud
from kpzlab.seeding import rng_for
from kpzlab.smoothing import make_family, validate_smoothing

THETA = gaussian_mollifier()
EPS = 0.1
FAM = make_family([1, 1], EPS)


@pytest.fixture(scope="module")
def profile():
    return malliavin_profile(THETA, FAM)


class TestNonlinearity:
    @pytest.mark.parametrize("F", [nl_w2(), nl_w4(), nl_cos()])
    def test_presets_valid(self, F):
        rep = F.validate()
        assert rep["ok"], rep

    def test_table_nonlinearity(self):
        w = np.linspace(0, 10, 2001)
        F = nonlinearity_from_table(w, w**2, growth_M=2.0)
        x = np.array([-2.0, 0.5, 3.0])
        assert np.allclose(F(x), x**2, atol=1e-4)
        assert np.allclose(F.df(x), 2 * x, atol=2e-2)

    def test_resolver(self):
        assert resolve_nonlinearity("w4").tag == "w4"
        with pytest.raises(KeyError):
            resolve_nonlinearity("bogus")


class TestSliceWeights:
    def test_exact_exponential_integrals(self):
        m = np.array([0.0, 3.0, 4000.0])
        dt = 0.01
        A = semigroup_slice_weights(m, dt, 50)
        # total mass equals int_0^{(L-1/2) dt} e^{-ms} ds
        T = (50 - 0.5) * dt
        want = np.where(m > 0, (1 - np.exp(-m * T)) / np.where(m > 0, m, 1), T)
        assert np.allclose(A.sum(axis=0), want, rtol=1e-12)

    def test_cutoff_freezes_tail(self):
        m = np.array([1.0])
        chi = lambda s: (s < 0.5).astype(float)
        A = semigroup_slice_weights(m, 0.01, 200, chi=chi)
        assert A[120:, 0].sum() == 0.0


class TestProfileAndPsi:
    def test_malliavin_identity(self, profile):
        # adding one cloud point shifts Psi by exactly G(x - eps u)
        grid = GridSpec(t0=0.0, dt=EPS**2 / 4, nt=6, nx=profile.nx)
        rng = rng_for(21, "mid")
        pad = (THETA.trunc_t + 1) * EPS**2
        cloud = sample_cloud(-1.2, grid.times()[-1] + pad, 1.0, EPS**-3, rng)
        psi0, _ = free_field(cloud, THETA, FAM, grid, profile=profile)
        u = (-2.0, 4.2)  # micro coordinates, inside the causal window of the grid
        extra = cloud.with_extra(EPS**2 * u[0], EPS * u[1])  # macro position of u
        extra.intensity = cloud.intensity
        psi1, _ = free_field(extra, THETA, FAM, grid, profile=profile)
        diff = psi1.values - psi0.values
        T, X = np.meshgrid(grid.times(), grid.xs(), indexing="ij")
        want = profile.eval(T - EPS**2 * u[0], X - EPS * u[1])
        scale = np.abs(want).max()
        assert np.abs(diff - want).max() < 5e-3 * scale

    def test_variance_quadrature_vs_mc(self, profile):
        psi = psi_origin_samples(profile, rng_for(22, "var"), 4000)
        target = psi_variance_quad(profile)
        se = np.std(psi**2, ddof=1) / math.sqrt(len(psi))
        assert abs(np.mean(psi**2) - target) < 3 * se

    def test_mean_zero(self, profile):
        psi = psi_origin_samples(profile, rng_for(23, "mean"), 3000)
        assert abs(psi.mean()) < 3 * psi.std(ddof=1) / math.sqrt(len(psi))

    def test_sample_i1_exactly_compensated(self, profile):
        # expectation of the sampled I1 is 0 by construction: large-sample check
        vals = sample_i1(profile, profile.eps**-3, rng_for(24, "comp"), 2000)
        assert abs(vals.mean()) < 4 * vals.std(ddof=1) / math.sqrt(len(vals))

    def test_odd_moment_symmetry(self, profile):
        # theta symmetric in x makes Psi = -Psi in law: E F'(sqrt(eps) Psi) ~ 0
        F = nl_w4()
        psi = psi_origin_samples(profile, rng_for(25, "odd"), 4000)
        vals = F.df(math.sqrt(EPS) * psi)
        assert abs(vals.mean()) < 3 * vals.std(ddof=1) / math.sqrt(len(vals))

    def test_grid_variance_stationary(self):
        # MC variance of Psi(t, x) agrees across grid points (stationarity)
        eps = 0.25
        fam = make_family([1, 1], eps)
        prof = malliavin_profile(THETA, fam, nx=64)
        grid = GridSpec(t0=0.0, dt=eps**2 / 4, nt=5, nx=64)
        pad = (THETA.trunc_t + 1) * eps**2
        reps = 400
        nodes = [(0, 0), (2, 13), (4, 40), (1, 60), (3, 25)]
        vals = np.empty((reps, len(nodes)))
        for r in range(reps):
            rng = rng_for(26, "stat", r)
            cloud = sample_cloud(-0.8, grid.times()[-1] + pad, 1.0, eps**-3, rng)
            psi, _ = free_field(cloud, THETA, fam, grid, profile=prof)
            for i, (j, k) in enumerate(nodes):
                vals[r, i] = psi.values[j, k]
        variances = vals.var(axis=0, ddof=1)
        se = variances * math.sqrt(2.0 / reps)
        assert np.all(np.abs(variances - variances.mean()) < 3 * (se + se.mean()))

    def test_coverage_gap(self, profile):
        grid = GridSpec(t0=0.0, dt=EPS**2 / 4, nt=4, nx=profile.nx)
        small = sample_cloud(-0.05, 0.05, 1.0, 10.0, rng_for(27, "gap"))
        with pytest.raises(CoverageGap):
            free_field(small, THETA, FAM, grid, profile=profile)


class TestCoupling:
    def test_w2_exact(self):
        est = coupling_mc(nl_w2(), FAM, THETA, replicas=100, seed=31)
        assert est.value == 1.0
        assert est.stderr == 0.0

    def test_w4_oracle(self, profile):
        est = coupling_mc(nl_w4(), FAM, THETA, replicas=4000, seed=32, profile=profile)
        target = 6 * EPS * psi_variance_quad(profile)
        assert abs(est.value - target) < 3 * max(est.stderr, 1e-12)

    def test_cos_oracle(self, profile):
        est = coupling_mc(nl_cos(), FAM, THETA, replicas=4000, seed=33, profile=profile)
        phi = kernel_char_function(profile, 1.0, intensity=EPS**-3, scale=math.sqrt(EPS))
        assert abs(est.value - (-0.5 * phi.real)) < 3 * est.stderr

    def test_limit_w2_exact(self):
        est = coupling_limit(nl_w2(), FAM.smoothing, THETA, replicas=50, seed=34,
                             period=8.0, ladder=(8.0,))
        assert est.value == 1.0 and est.stderr == 0.0
        assert est.epsilon == 0.0

    def test_limit_w4_quadrature_vs_mc(self):
        prof = plane_profile(FAM.smoothing, THETA, 8.0)
        target = 6.0 * prof.l2sq()
        est = coupling_limit(nl_w4(), FAM.smoothing, THETA, replicas=4000, seed=35,
                             period=8.0, ladder=(8.0,))
        assert abs(est.value - target) < 3 * est.stderr

    def test_limit_cos_ladder_monotone(self):
        # a_eps(cos) approaches the plane value monotonically (char-function path,
        # deterministic quadrature throughout)
        lim = coupling_limit(nl_cos(), FAM.smoothing, THETA, replicas=10, seed=36,
                             period=16.0)
        a_eps = []
        for eps in (0.2, 0.1, 0.05):
            fam = make_family([1, 1], eps)
            prof = malliavin_profile(THETA, fam)
            phi = kernel_char_function(prof, 1.0, intensity=eps**-3, scale=math.sqrt(eps))
            a_eps.append(-0.5 * phi.real)
        gaps = [abs(a - lim.value) for a in a_eps]
        assert gaps[0] > gaps[1] > gaps[2]
        assert lim.ladder is not None and len(lim.ladder) >= 3

    def test_box_too_small(self):
        with pytest.raises(BoxTooSmall):
            coupling_limit(nl_w4(), FAM.smoothing, THETA, replicas=10, seed=37,
                           period=8.0, ladder=(8.0,), T_max=0.5)

    def test_serialization(self):
        est = CouplingEstimate(1.0, 0.1, 10, 0.05, ladder={8.0: 1.0})
        blob = est.to_json()
        assert blob["value"] == 1.0 and blob["ladder"] == {8.0: 1.0}


class TestRenorm:
    def test_c2prime_oracle_w2(self, profile):
        # F = w^2: C_<2'> = E Psi^2 (a_eps = 1)
        table = renorm_constants(nl_w2(), FAM, THETA, replicas=4000, seed=41)
        target = psi_variance_quad(profile)
        val, se = table.constants["2'"]
        assert table.a_eps == 1.0
        assert abs(val - target) < 3 * se
        assert table.C_eps == pytest.approx(val * table.a_eps)

    def test_drift_scaling_monotone(self):
        # C_<2'> grows as eps decreases (C_eps -> infinity trend)
        vals = []
        for eps in (0.2, 0.1, 0.05):
            fam = make_family([1, 1], eps)
            prof = malliavin_profile(THETA, fam)
            vals.append(psi_variance_quad(prof))
        assert vals[0] < vals[1] < vals[2]

    def test_table_json_roundtrip(self, tmp_path):
        table = renorm_constants(nl_w2(), FAM, THETA, replicas=500, seed=42)
        table.save(tmp_path / "renorm.json")
        import json
        blob = json.loads((tmp_path / "renorm.json").read_text())
        assert blob["epsilon"] == EPS
        assert "2'" in blob["constants"]
        assert blob["meta"]["F"] == "w2"
