"""End-to-end acceptance criteria; each check prints one PASS/FAIL line with its runtime."""

import math
import time
from pathlib import Path

import numpy as np
import pytest
from conftest import ACCEPTANCE_LINES

from grslab import ellipsoid, quadrature_grid
from grslab.model_manifolds import fd_refinement
from grslab.spectral_galerkin import galerkin_grid, harmonic_spectrum, spectral_gap_check
from grslab.stability_analysis import StabilityProblem, apply_N, n_eigentensor_relation, necessary_condition_scan, stability_report
from grslab.verifier_cli import build_parser, main, resolve_config, run_verify
from grslab.weighted_calculus import entropy_report, log_mass_defect, residual_norms, ricci_field, soliton_residual_norm

MODELS = {"s2": "sphere:n=2", "s3": "sphere:n=3", "s2xs2": "product:n1=2,n2=2"}
# (tau, f, R, nu); nu = tau R + f - n
FIXTURES = {
    "s2": (0.5, math.log(2), 2.0, math.log(2) - 1),
    "s3": (0.25, math.log(2 * math.sqrt(math.pi)), 6.0, 1.5 + math.log(2 * math.sqrt(math.pi)) - 3),
    "s2xs2": (0.5, math.log(4), 4.0, math.log(4) - 2),
}
# the product runs at L = 1 to stay inside the runtime budget
STABILITY_DEGREE = {"s2": 2, "s3": 2, "s2xs2": 1}
_VERIFY = {}


def record(criterion, label, ok, detail, seconds):
    line = f"[{'PASS' if ok else 'FAIL'}] {criterion}. {label}: {detail} ({seconds:.1f} s)"
    ACCEPTANCE_LINES.append(line)
    print(line)
    assert ok, line


def _verify(name):
    if name not in _VERIFY:
        cfg = resolve_config(build_parser().parse_args(["verify", "--model", MODELS[name]]))
        t0 = time.perf_counter()
        status, report, _ = run_verify(cfg)
        _VERIFY[name] = (status, report, time.perf_counter() - t0)
    return _VERIFY[name]


def _results(report):
    return {r["name"]: r for r in report["results"]}


@pytest.mark.parametrize("name", list(MODELS))
def test_1_soliton_fixtures(name, request):
    t0 = time.perf_counter()
    model = request.getfixturevalue(name)
    grid = request.getfixturevalue(f"{name}_grid")
    ent = entropy_report(model, grid)
    sol = soliton_residual_norm(model, grid)
    dt = time.perf_counter() - t0
    tau, _, _, nu = FIXTURES[name]
    residual = max(sol, ent.residual_pointwise, ent.residual_integral, log_mass_defect(grid))
    ok = abs(model.tau - tau) < 1e-15 and abs(ent.nu - nu) < 1e-10 and residual < 1e-8 and dt < 10
    record(1, f"soliton fixture {name}", ok, f"tau={model.tau:g} nu={ent.nu:.12g} max residual={residual:.2e}", dt)


@pytest.mark.parametrize("name", list(MODELS))
def test_2_identity_suite_exact(name):
    status, report, dt = _verify(name)
    res = _results(report)
    checked = [r for r in report["results"] if r.get("status") in ("pass", "fail")]
    worst = max((r for r in checked if r["tolerance"] <= 1e-8), key=lambda r: r["value"])
    fields = res["T3.6"]["fields"]
    ok = status == 0 and fields >= 20 and dt < 60
    record(2, f"identity suite {name}", ok, f"{len(checked)} checks, {fields} fields, worst {worst['name']}={worst['value']:.2e}", dt)


def test_2_identity_suite_ellipsoid():
    t0 = time.perf_counter()
    cfg = resolve_config(build_parser().parse_args(["verify", "--model", "generic:ellipsoid"]))
    _, report, _ = run_verify(cfg)
    res = _results(report)
    ref = fd_refinement(lambda r: ellipsoid(resolution=r), ["24x48", "48x96", "96x192"])
    dt = time.perf_counter() - t0
    g1, g2 = res["G1"]["value"], res["G2"]["value"]
    order = min(ref.orders)
    ok = g1 < 1e-4 and g2 < 1e-4 and order >= 1.8 and dt < 60
    record(2, "general identities on the ellipsoid", ok, f"G1={g1:.2e} G2={g2:.2e} fd order={order:.2f}", dt)


def test_3_spectral_gap(s2, s3, s2xs2):
    t0 = time.perf_counter()
    parts, ok = [], True
    for model in (s2, s3, s2xs2):
        gap = spectral_gap_check(model, galerkin_grid(model, 2), 2)
        match = float(np.max(np.abs(gap.spectrum - harmonic_spectrum(model, 2)[1:])))
        ok &= gap.passed and match < 1e-6
        parts.append(f"{model.name} {gap.lambda1:.9g} vs {gap.bound:g} (match {match:.1e})")
    dt = time.perf_counter() - t0
    record(3, "spectral gap", ok and dt < 30, "; ".join(parts), dt)


@pytest.mark.parametrize("name", list(MODELS))
def test_4_kernel_of_N(name, request):
    model = request.getfixturevalue(name)
    grid = request.getfixturevalue(f"{name}_grid")
    _, report, _ = _verify(name)
    t0 = time.perf_counter()
    image = _results(report)["T4.5"]["value"]
    ric = residual_norms(model, grid, apply_N(model, grid, ricci_field(model)))[0]
    dt = time.perf_counter() - t0
    record(4, f"kernel of N {name}", image < 1e-6 and ric < 1e-8, f"|N(div_f^dagger w)|={image:.2e} |N(Ric)|={ric:.2e}", dt)


def test_5_instability_witness(s2xs2, problems):
    t0 = time.perf_counter()
    rep = stability_report(s2xs2, 1, problem=problems(s2xs2, 1))
    dt = time.perf_counter() - t0
    w = rep.witness
    ok = (
        rep.verdict == "unstable (witness)"
        and w.eigen_residual < 1e-8
        and abs(w.ric_pairing) < 1e-8
        and abs(w.nu2_direct - 4.0) < 1e-6
        and dt < 60
    )
    detail = f"{rep.verdict} h={w.tags} residual={w.eigen_residual:.1e} <Ric,h>={abs(w.ric_pairing):.1e} nu''={w.nu2_direct:.9g}"
    record(5, "instability witness on the product", ok, detail, dt)


@pytest.mark.parametrize("name", list(MODELS))
def test_6_two_path_agreement(name, request, problems):
    model = request.getfixturevalue(name)
    t0 = time.perf_counter()
    scan = necessary_condition_scan(problems(model, STABILITY_DEGREE[name]))
    dt = time.perf_counter() - t0
    worst = max(e.agreement for e in scan.audit)
    record(6, f"two-path nu'' {name}", worst < 1e-6, f"{len(scan.audit)} eigentensors, worst relative gap {worst:.2e}", dt)


@pytest.mark.parametrize("name", list(MODELS))
def test_7_n_eigentensor_relation(name, request, problems):
    model = request.getfixturevalue(name)
    L = STABILITY_DEGREE[name]
    t0 = time.perf_counter()
    rel = n_eigentensor_relation(problems(model, L))
    dt = time.perf_counter() - t0
    worst = float(np.max(rel.relation_residuals, initial=0.0))
    ok = len(rel.eigenvalues) > 0 and worst < 1e-5
    record(7, f"N eigentensor relation {name} L={L}", ok, f"{len(rel.eigenvalues)} pairs, worst {worst:.2e}", dt)


@pytest.mark.parametrize("name", list(MODELS))
def test_8_adjointness_and_symmetry(name, request, problems):
    model = request.getfixturevalue(name)
    _, report, _ = _verify(name)
    t0 = time.perf_counter()
    res = _results(report)
    pairing = max(res[k]["value"] for k in ("div_f_vs_d", "div_f_vs_dagger", "laplace_f_selfadjoint"))
    prob = problems(model, STABILITY_DEGREE[name])
    sym = max(prob.assembled(k).symmetry_defect for k in ("lichnerowicz_f", "lichnerowicz_f+div_dagger_div", "N"))
    sym = max(sym, spectral_gap_check(model, galerkin_grid(model, 2), 2).symmetry_defect)
    dt = time.perf_counter() - t0
    record(8, f"adjointness and symmetry {name}", pairing < 1e-8 and sym < 1e-8, f"pairings {pairing:.2e}, symmetry {sym:.2e}", dt)


@pytest.mark.parametrize(
    "argv",
    [["spectrum", "--model", "sphere:n=2", "--L", "2"], ["stability", "--model", "sphere:n=2", "--L", "1"]],
    ids=["spectrum", "stability"],
)
def test_9_determinism(argv, tmp_path):
    out = tmp_path / "report.json"
    t0 = time.perf_counter()
    runs = []
    for _ in range(2):
        assert main(argv + ["--out", str(out)]) == 0
        csv = out.with_suffix(".csv")
        runs.append((out.read_bytes(), csv.read_bytes() if csv.exists() else b""))
        for p in (out, csv):
            p.unlink(missing_ok=True)
    dt = time.perf_counter() - t0
    same = runs[0] == runs[1]
    record(9, f"byte-identical {argv[0]} output", same, f"{len(runs[0][0])} JSON bytes, {len(runs[0][1])} CSV bytes", dt)
