"""Experiment orchestration: stage graph, artifacts, reports.

Each experiment kind runs a fixed stage sequence; every stage records its
timing and the artifacts it wrote.  Summary metrics are pure functions of
the configuration (timings are kept outside the determinism contract), so
re-running an identical RunConfig reproduces the summary digest bit for bit.
"""
from __future__ import annotations

import csv
import hashlib
import json
import math
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import chaos, fields, kpz, objects, solver
from .config import RunConfig
from .errors import StageFailure
from .grids import GridSpec
from .noise import MOLLIFIER_PRESETS, Mollifier, sample_cloud
from .parallel import run_replicas
from .seeding import rng_for
from .smoothing import (MultiplierFamily, choose_mode_cutoff, make_family,
                        validate_smoothing, verify_kernel_bounds)


# ---------------------------------------------------------------------------
# run records
# ---------------------------------------------------------------------------

@dataclass
class RunRecord:
    kind: str
    config_hash: str
    config_text: str
    timings: dict = field(default_factory=dict)
    artifacts: dict = field(default_factory=dict)
    summary: dict = field(default_factory=dict)
    criteria: list = field(default_factory=list)

    def add_criterion(self, cid: str, passed: bool, detail: str = "") -> None:
        self.criteria.append({"id": cid, "passed": bool(passed), "detail": detail})

    @property
    def all_passed(self) -> bool:
        return all(c["passed"] for c in self.criteria)

    def digest(self) -> str:
        blob = json.dumps({"summary": self.summary, "criteria": self.criteria},
                          sort_keys=True)
        return hashlib.sha256(blob.encode()).hexdigest()

    def to_json(self) -> dict:
        return {"kind": self.kind, "config_hash": self.config_hash,
                "digest": self.digest(), "timings": self.timings,
                "artifacts": self.artifacts, "summary": self.summary,
                "criteria": self.criteria}

    def save(self, out_dir) -> Path:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        path = out / "run_record.json"
        path.write_text(json.dumps(self.to_json(), indent=1, sort_keys=True))
        return path


def resolve_mollifier(spec: str) -> Mollifier:
    name, _, arg = spec.partition(":")
    if name not in MOLLIFIER_PRESETS:
        raise KeyError(f"unknown mollifier spec {spec!r}")
    return MOLLIFIER_PRESETS[name](float(arg)) if arg else MOLLIFIER_PRESETS[name]()


def _families(config: RunConfig) -> dict:
    q = validate_smoothing(config.q)
    return {eps: MultiplierFamily(q, eps, choose_mode_cutoff(q, eps, t_min=1e-4))
            for eps in config.eps}


class _Stages:
    """Timing + artifact bookkeeping for one run."""

    def __init__(self, record: RunRecord, out_dir: Path):
        self.record = record
        self.out = out_dir
        out_dir.mkdir(parents=True, exist_ok=True)

    def run(self, stage_id: str, fn, *args, **kw):
        t0 = time.perf_counter()
        try:
            result = fn(*args, **kw)
        except Exception as exc:   # noqa: BLE001 - reported as stage failure
            raise StageFailure(stage_id, exc) from exc
        self.record.timings[stage_id] = time.perf_counter() - t0
        return result

    def artifact(self, name: str, filename: str) -> Path:
        path = self.out / filename
        self.record.artifacts[name] = filename
        return path


# ---------------------------------------------------------------------------
# experiment kinds
# ---------------------------------------------------------------------------

def _run_couple(config: RunConfig, st: _Stages) -> None:
    fams = st.run("validate", _families, config)
    F = fields.resolve_nonlinearity(config.f[0])
    theta = resolve_mollifier(config.theta)
    per_eps = {}
    for eps, fam in fams.items():
        est = st.run(f"couple_eps_{eps:g}", fields.coupling_mc, F, fam, theta,
                     config.replicas, config.seed)
        per_eps[f"{eps:g}"] = est.to_json()
    limit = st.run("couple_limit", fields.coupling_limit, F,
                   validate_smoothing(config.q), theta, config.replicas, config.seed,
                   period=float(config.opt("period", 16.0)))
    path = st.artifact("coupling", "coupling.json")
    payload = {"F": F.tag, "Q": ",".join(f"{c:g}" for c in config.q),
               "theta": theta.tag, "seed": config.seed,
               "a_eps": per_eps, "a_limit": limit.to_json()}
    path.write_text(json.dumps(payload, indent=1, sort_keys=True))
    st.record.summary["coupling"] = payload
    if F.tag == "w2":
        worst = max(abs(v["value"] - 1.0) for v in per_eps.values())
        st.record.add_criterion("couple_w2_exact",
                                worst < 1e-12 and abs(limit.value - 1.0) < 1e-12,
                                f"max |a-1| = {worst:.2e}")


def _run_verify_kernels(config: RunConfig, st: _Stages) -> None:
    fams = st.run("validate", _families, config)
    theta = resolve_mollifier(config.theta)
    deltas = tuple(float(d) for d in np.atleast_1d(config.opt("deltas", (0.1, 0.25, 0.5, 0.9))))
    profiles = st.run("profiles", lambda: {
        eps: fields.malliavin_profile(theta, fam).as_field() for eps, fam in fams.items()})
    report = st.run("bounds", verify_kernel_bounds, list(fams.values()), deltas, profiles)
    path = st.artifact("bounds", "bounds.csv")
    report.to_csv(path)
    sups = {}
    for row in report.rows:
        key = row.bound_id if row.delta == 0.0 else f"{row.bound_id}@{row.delta:g}"
        sups.setdefault(key, {})[f"{row.epsilon:g}"] = row.sup_ratio
    factors = {k: max(v.values()) / min(v.values()) for k, v in sups.items()}
    st.record.summary["bounds"] = {"sups": sups, "growth_factors": factors,
                                   "artifact": "bounds.csv"}
    for k, f in factors.items():
        if k.endswith("_far"):
            continue  # informational row; its domain degenerates at large eps
        st.record.add_criterion(f"bound_stable_{k}", f < 10.0, f"growth factor {f:.3f}")


def _sg_suite(disc: chaos.Discretization, count: int, seed: int) -> list:
    """Functional family for the gap report: counts, polynomials, first chaos."""
    suite = []
    t_mid = 0.5 * (disc.t_lo + disc.t_hi)
    w_half = (disc.t_hi - disc.t_lo) / 2
    N = chaos.window_count(disc.t_lo, disc.t_hi, 0.0, disc.width)
    Nh = chaos.window_count(t_mid - w_half / 2, t_mid + w_half / 2, 0.0, disc.width / 2)
    suite.append(N)
    suite.append(chaos.Functional(lambda p: N(p) ** 2, "count^2"))
    suite.append(chaos.Functional(lambda p: Nh(p) ** 3 - 2 * Nh(p), "cubic"))
    centers = disc.centers()
    i = 0
    while len(suite) < count:
        rng = rng_for(seed, "sg_suite", i)
        w = rng.normal(0, 1, 3)
        g = (w[0] * np.sin(2 * np.pi * centers[:, 0] / (disc.t_hi - disc.t_lo))
             + w[1] * np.cos(2 * np.pi * centers[:, 1] / disc.width) + w[2])
        k = chaos.ChaosKernel(1, g, disc)
        base = chaos.i1_functional(k)
        if i % 2 == 0:
            suite.append(chaos.Functional(base.evaluator, f"I1(g{i})"))
        else:
            suite.append(chaos.Functional(lambda p, b=base: math.atan(b(p)), f"atan(I1(g{i}))"))
        i += 1
    return suite[:count]


def _run_verify_sg(config: RunConfig, st: _Stages) -> None:
    p = float(config.opt("p", 4.0))
    cells = int(config.opt("cells", 5))
    count = int(config.opt("functionals", 20))
    disc = chaos.Discretization(0.0, 1.0, 1.0, cells, cells)
    suite = _sg_suite(disc, count, config.seed)
    report = st.run("gap", chaos.spectral_gap_report, suite, p, disc,
                    config.replicas, config.seed)
    path = st.artifact("gap_report", "gap_report.csv")
    report.to_csv(path)
    st.record.summary["spectral_gap"] = {
        "worst_slack_sigmas": report.worst_slack_sigmas(),
        "max_fitted_c": report.max_fitted_c(),
        "rows": len(report.rows),
        "artifact": "gap_report.csv",
    }
    for r in report.rows:
        ok = r.stderr == 0 and r.slack >= 0 or r.slack >= -3 * r.stderr
        st.record.add_criterion(f"sg_{r.functional_id}", ok,
                                f"slack {r.slack:.4g} (stderr {r.stderr:.4g})")


def _run_scale_check(config: RunConfig, st: _Stages) -> None:
    theta = resolve_mollifier(config.theta)
    q = validate_smoothing(config.q)
    F = fields.resolve_nonlinearity(config.f[0])
    ps = tuple(float(p) for p in np.atleast_1d(config.opt("p", 2.0)))
    results = []
    recenter = {}
    for eps in config.eps:
        fam = MultiplierFamily(q, eps, choose_mode_cutoff(q, eps, t_min=1e-4))
        lams = config.opt("lambdas")
        if lams is None and 8 * eps >= 0.25:
            raise ValueError(
                f"scaling window [8 eps, 1/4] is empty at eps = {eps}; pass lambdas")
        lams = (tuple(float(x) for x in np.atleast_1d(lams)) if lams
                else tuple(np.geomspace(8 * eps, 0.25, 5)))
        prof_psi = st.run(f"profile_psi_{eps:g}", fields.malliavin_profile, theta, fam)
        prof_xi = st.run(f"profile_xi_{eps:g}", fields.noise_profile, theta, eps,
                         prof_psi.nx)
        for p in ps:
            s_psi = st.run(f"scale_psi_{eps:g}_p{p:g}", objects.scaling_samples,
                           prof_psi, lams, config.replicas, config.seed, "scale_psi")
            results.append(objects.fit_scaling("1'", s_psi, p))
            s_xi = st.run(f"scale_xi_{eps:g}_p{p:g}", objects.scaling_samples,
                          prof_xi, lams, config.replicas, config.seed, "scale_xi")
            results.append(objects.fit_scaling("xi", s_xi, p))
        table = st.run(f"constants_{eps:g}", fields.renorm_constants, F, fam, theta,
                       int(config.opt("replicas_const", 4000)), config.seed, higher=True)
        rc = st.run(f"recenter_{eps:g}", objects.recenter_check, F, fam, theta, table,
                    float(config.opt("recenter_lambda", 0.25)),
                    int(config.opt("recenter_replicas", 48)), config.seed)
        recenter[f"{eps:g}"] = rc
        for tag, (mean, se, _n) in rc.items():
            st.record.add_criterion(f"recenter_{tag}_eps{eps:g}",
                                    abs(mean) <= 3 * se,
                                    f"mean {mean:.4g}, stderr {se:.4g}")
    objects.scaling_report_csv(results, st.artifact("scaling_csv", "scaling.csv"))
    objects.scaling_summary_json(results, st.artifact("scaling_json", "scaling.json"))
    (st.out / "recenter.json").write_text(json.dumps(recenter, indent=1, sort_keys=True))
    st.record.artifacts["recenter"] = "recenter.json"
    st.record.summary["scaling"] = [r.to_json() for r in results]
    st.record.summary["recenter"] = recenter
    for r in results:
        st.record.add_criterion(f"slope_{r.tag}_p{r.p:g}", r.within_band(),
                                f"slope/p {r.slope_over_p:.4f} target {r.target} +- {r.tolerance}")


def _drift_for(F, fam, theta, config) -> fields.RenormTable:
    return fields.renorm_constants(F, fam, theta,
                                   int(config.opt("replicas_const", 4000)),
                                   config.seed)


def _run_simulate(config: RunConfig, st: _Stages) -> None:
    theta = resolve_mollifier(config.theta)
    q = validate_smoothing(config.q)
    F = fields.resolve_nonlinearity(config.f[0])
    T = float(config.opt("T", 1.0))
    summary = {}
    for eps in config.eps:
        fam = MultiplierFamily(q, eps, choose_mode_cutoff(q, eps, t_min=1e-4))
        table = st.run(f"constants_{eps:g}", _drift_for, F, fam, theta, config)
        nx = int(config.opt("nx", 0)) or (1 << int(math.ceil(math.log2(max(64.0, 4.0 / eps)))))
        dt = float(config.opt("dt", 0.0)) or eps**2 / 8
        cfg = solver.SolverConfig(fam, F, dt, nx, T, drift=table.C_eps)
        nsteps = int(round(T / dt))
        pad = (theta.trunc_t + 1) * eps**2
        grid = GridSpec(0.0, dt, nsteps, nx, 1.0)

        def one(r, eps=eps, fam=fam, cfg=cfg, grid=grid, pad=pad):
            rng = rng_for(config.seed, f"simulate_{eps:g}", r)
            cloud = sample_cloud(-pad, T + pad, 1.0, eps**-3, rng)
            from .noise import synthesize_noise
            xi = synthesize_noise(cloud, theta, eps, "macro", grid)
            traj, diag = solver.simulate_macro(cfg, xi)
            return traj.values[-1], diag

        def first_traj(eps=eps, cfg=cfg, grid=grid, pad=pad):
            rng = rng_for(config.seed, f"simulate_{eps:g}", 0)
            cloud = sample_cloud(-pad, T + pad, 1.0, eps**-3, rng)
            from .noise import synthesize_noise
            xi = synthesize_noise(cloud, theta, eps, "macro", grid)
            traj, _ = solver.simulate_macro(cfg, xi)
            return traj

        if bool(config.opt("snapshots", True)):
            traj0 = st.run(f"trajectory_{eps:g}", first_traj)
            traj0.save(st.artifact(f"trajectory_eps{eps:g}", f"trajectory_eps{eps:g}"))
        results = st.run(f"simulate_{eps:g}", run_replicas, one, config.replicas)
        finals = np.array([r[0] for r in results])
        diags = [r[1] for r in results]
        worst_alias = max(d.dealias_energy_fraction for d in diags)
        key = f"{eps:g}"
        summary[key] = {
            "C_eps": table.C_eps, "a_eps": table.a_eps,
            "mean_height": float(finals.mean()),
            "spatial_mean_abs": float(np.abs(finals.mean(axis=1)).max()),
            "max_abs": max(d.max_abs for d in diags),
            "dealias_energy_fraction": worst_alias,
            "artifact": f"final_eps{key}",
        }
        from .grids import SpaceTimeField
        fld = SpaceTimeField(GridSpec(T, dt, 1, nx, 1.0), finals.mean(axis=0)[None, :],
                             frame="macro", epsilon=eps)
        fld.save(st.artifact(f"final_eps{key}", f"final_eps{key}"))
        st.record.add_criterion(f"resolved_eps{key}", worst_alias < 0.01,
                                f"dealias energy fraction {worst_alias:.3g}")
    st.record.summary["simulate"] = summary


def _run_compare(config: RunConfig, st: _Stages) -> None:
    theta = resolve_mollifier(config.theta)
    q = validate_smoothing(config.q)
    T = float(config.opt("T", 1.0))
    eps_ladder = config.eps
    eps_min = min(eps_ladder)
    nonlins = {fname: fields.resolve_nonlinearity(fname) for fname in config.f}

    limits = {}
    refs = {}
    drifts = {}
    for fname, F in nonlins.items():
        limit = st.run(f"a_limit_{fname}", fields.coupling_limit, F, q, theta,
                       int(config.opt("replicas_const", 4000)), config.seed,
                       period=float(config.opt("period", 16.0)))
        limits[fname] = limit
        ch = kpz.CHConfig(limit.value, nx=int(config.opt("ch_nx", 256)),
                          dt=float(config.opt("ch_dt", 1e-4)), T=T)
        n_ref = int(config.opt("reference_replicas", config.replicas))

        def ref_one(r, ch=ch, fname=fname):
            rng = rng_for(config.seed, f"reference_{fname}", r)
            return kpz.solve_cole_hopf(ch, rng=rng)[0]

        refs[fname] = (np.array(st.run(f"reference_{fname}", run_replicas,
                                       ref_one, n_ref)), ch)
        _write_samples(st.artifact(f"ref_{fname}", f"reference_{fname}.csv"),
                       refs[fname][0])
        drifts[fname] = {}
        for eps in eps_ladder:
            fam = MultiplierFamily(q, eps, choose_mode_cutoff(q, eps, t_min=1e-4))
            drifts[fname][eps] = st.run(f"constants_{fname}_{eps:g}", _drift_for,
                                        F, fam, theta, config).C_eps

    # nested-thinning coupling: one master cloud per replica feeds every eps,
    # and every nonlinearity is driven by the same noise realizations
    pad_max = (theta.trunc_t + 1) * max(eps_ladder) ** 2
    fams = {eps: MultiplierFamily(q, eps, choose_mode_cutoff(q, eps, t_min=1e-4))
            for eps in eps_ladder}

    def h_one(r):
        rng = rng_for(config.seed, "compare_cloud", r)
        master = sample_cloud(-pad_max, T + pad_max, 1.0, eps_min**-3, rng)
        marks = rng.uniform(0.0, 1.0, master.count)
        out = {}
        from .noise import PointCloud, synthesize_noise
        for eps in eps_ladder:
            keep = marks < (eps_min / eps) ** 3
            cloud = PointCloud(master.points[keep], master.t_lo, master.t_hi,
                               1.0, eps**-3, None)
            nx = 1 << int(math.ceil(math.log2(max(64.0, 4.0 / eps))))
            dt = eps**2 / 8
            nsteps = int(round(T / dt))
            grid = GridSpec(0.0, dt, nsteps, nx, 1.0)
            xi = synthesize_noise(cloud, theta, eps, "macro", grid)
            for fname, F in nonlins.items():
                cfg = solver.SolverConfig(fams[eps], F, dt, nx, T,
                                          drift=drifts[fname][eps])
                traj, _ = solver.simulate_macro(cfg, xi)
                out[(fname, eps)] = traj.values[-1, 0]
        return out

    rows = st.run("samples", run_replicas, h_one, config.replicas)

    summary = {}
    for fname in config.f:
        ref, ch = refs[fname]
        ks_by_eps = {}
        p_by_eps = {}
        for eps in eps_ladder:
            vals = np.array([row[(fname, eps)] for row in rows])
            _write_samples(st.artifact(f"samples_{fname}_{eps:g}",
                                       f"samples_{fname}_eps{eps:g}.csv"), vals)
            stat = kpz.median_centered_ks(vals, ref)
            _, pval = kpz.ks_compare(vals - np.median(vals), ref - np.median(ref),
                                     resamples=int(config.opt("resamples", 0)) or 1000,
                                     seed=config.seed)
            ks_by_eps[f"{eps:g}"] = stat
            p_by_eps[f"{eps:g}"] = pval
        ks_list = [ks_by_eps[f"{e:g}"] for e in eps_ladder]
        decreasing = all(ks_list[i] > ks_list[i + 1] for i in range(len(ks_list) - 1))
        summary[fname] = {"a": limits[fname].value, "a_ladder": limits[fname].ladder,
                          "ks": ks_by_eps, "p_values": p_by_eps,
                          "decreasing": decreasing,
                          "C_eps": {f"{e:g}": drifts[fname][e] for e in eps_ladder},
                          "reference": ch.header()}
        st.record.add_criterion(f"ks_trend_{fname}", decreasing,
                                " > ".join(f"{v:.4f}" for v in ks_list))
    path = st.artifact("comparison", "comparison.json")
    path.write_text(json.dumps(summary, indent=1, sort_keys=True))
    st.record.summary["compare"] = summary


def _write_samples(path: Path, vals: np.ndarray) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["replica", "value"])
        for i, v in enumerate(vals):
            w.writerow([i, repr(float(v))])


_RUNNERS = {
    "couple": _run_couple,
    "verify-kernels": _run_verify_kernels,
    "verify-sg": _run_verify_sg,
    "scale-check": _run_scale_check,
    "simulate": _run_simulate,
    "compare": _run_compare,
}


def run_experiment(config: RunConfig) -> RunRecord:
    """Execute the stage graph for the configured kind; persist all artifacts."""
    record = RunRecord(kind=config.kind, config_hash=config.config_hash(),
                       config_text=config.canonical_text())
    out = Path(config.out)
    st = _Stages(record, out)
    (out / "config.txt").write_text(config.canonical_text())
    _RUNNERS[config.kind](config, st)
    record.save(out)
    emit_report(record, out)
    return record


def emit_report(record: RunRecord, out_dir) -> list:
    """Plain-text summary plus gnuplot-ready columns for ladder data."""
    out = Path(out_dir)
    paths = []
    lines = [f"kind: {record.kind}", f"config: {record.config_hash[:12]}",
             f"digest: {record.digest()[:12]}", ""]
    for c in record.criteria:
        lines.append(f"[{'PASS' if c['passed'] else 'FAIL'}] {c['id']}: {c['detail']}")
    lines.append("")
    for stage, secs in record.timings.items():
        lines.append(f"  {stage}: {secs:.2f}s")
    p = out / "summary.txt"
    p.write_text("\n".join(lines) + "\n")
    paths.append(p)
    if "scaling" in record.summary:
        p = out / "slopes.dat"
        with open(p, "w") as fh:
            fh.write("# tag p lambda moment\n")
            for r in record.summary["scaling"]:
                for lam, mom in zip(r["lams"], r["moments"]):
                    fh.write(f"{r['tag']} {r['p']} {lam} {mom}\n")
        paths.append(p)
    if "compare" in record.summary:
        p = out / "ks_ladder.dat"
        with open(p, "w") as fh:
            fh.write("# F eps ks\n")
            for fname, blk in record.summary["compare"].items():
                for eps, v in sorted(blk["ks"].items(), key=lambda kv: -float(kv[0])):
                    fh.write(f"{fname} {eps} {v}\n")
        paths.append(p)
    return paths
