"""Acceptance suite: one test per criterion, printing a PASS/FAIL line each.

Run with ``pytest tests/test_acceptance.py -s`` to see the per-criterion
lines as the suite progresses.
"""

import json
import math
import time

import numpy as np
import pytest

from rectlab import coeffs, corona, extension, geometry, harness, lattice, sobolev

TOL_EXACT = 1e-9


def _report(name, passed, detail):
    line = f"[{'PASS' if passed else 'FAIL'}] {name}: {detail}"
    print(line, flush=True)
    assert passed, line


@pytest.fixture(scope="module")
def graph_family_reports(frozen):
    """Shared delta-sin family runs for the one-sided bound criteria."""
    out = {}
    for which in ("theorem_a", "theorem_b"):
        cfg = harness.ExperimentConfig(which, "/tmp/rectlab_acc", seed=11)
        out[which] = harness.RUNNERS[which](cfg)
    return out


def test_criterion_01_exact_identities(sin_graph):
    t0 = time.time()
    rng = np.random.default_rng(42)
    cloud = sin_graph
    center = cloud.points[len(cloud.points) // 2]
    ball = cloud.ball(center, 0.25)
    small = cloud.ball(center, 0.15)
    ares = coeffs.alpha(cloud, small, multistart=False)
    base = np.sin(3 * cloud.points[:, 0]) + cloud.points[:, 2]
    worst = 0.0
    for _ in range(20):
        a0 = coeffs.AffineMap(rng.uniform(-1, 1, 3), rng.uniform(-1, 1))
        c = float(rng.uniform(0.1, 10))
        f = base + rng.uniform(-0.5, 0.5) * cloud.points[:, 0]
        v = coeffs.omega(cloud, f, ball, 1).value
        v_shift = coeffs.omega(cloud, f - a0(cloud.points), ball, 1).value
        worst = max(worst, abs(v - v_shift) / max(v, 1e-12))
        g = coeffs.gamma(cloud, f, ball, 1).value
        gc = coeffs.gamma(cloud, c * f, ball, 1).value
        worst = max(worst, abs(gc - c * g) / max(c * g, 1e-12))
        gt = coeffs.gamma_tilde(cloud, f, small, alpha_result=ares).value
        gtc = coeffs.gamma_tilde(cloud, c * f, small, alpha_result=ares).value
        worst = max(worst, abs(gtc - c * gt) / max(c * gt, 1e-12))
    dt = time.time() - t0
    _report("criterion_01_exact_identities", worst <= TOL_EXACT and dt < 60,
            f"worst relative error {worst:.2e} in {dt:.0f}s")


def test_criterion_02_oracle_equivalence():
    t0 = time.time()
    cfg = harness.ExperimentConfig("oracle_suite", "/tmp/rectlab_acc", seed=5)
    body = harness.run_oracle_suite(cfg)
    dt = time.time() - t0
    n, ok = body["n_instances"], body["n_passed"]
    _report("criterion_02_oracle_equivalence",
            n >= 25 and ok == n and dt < 600,
            f"{ok}/{n} instances agree within tolerance in {dt:.0f}s")


def test_criterion_03_flat_dorronsoro():
    t0 = time.time()
    cfg = harness.ExperimentConfig("flat_dorronsoro", "/tmp/rectlab_acc", seed=11)
    body = harness.run_flat_dorronsoro(cfg)
    dt = time.time() - t0
    ok = body["worst_spread"] <= 25.0 and body["affine_square_function"] <= 1e-9
    _report("criterion_03_flat_dorronsoro", ok and dt < 300,
            f"band spread {body['worst_spread']:.2f} (bound 25), "
            f"affine residue {body['affine_square_function']:.1e}, {dt:.0f}s")


def test_criterion_04_theorem_a_bound(graph_family_reports, frozen):
    body = graph_family_reports["theorem_a"]
    k = body["K_A_measured"]
    bound = frozen.check("K_A", k)
    _report("criterion_04_theorem_a_bound", k <= bound,
            f"K_A measured {k:.4f} <= frozen {bound:.4f} over 15 runs")


def test_criterion_05_theorem_b_bound(graph_family_reports, frozen):
    body = graph_family_reports["theorem_b"]
    k = body["K_B_measured"]
    bound = frozen.check("K_B", k)
    cfg = harness.ExperimentConfig("graph_counterexample", "/tmp/rectlab_acc",
                                   seed=11, params={"resolution": 1 / 32})
    counter = harness.run_graph_counterexample(cfg)
    ok = (k <= bound and counter["max_omega"] <= 1e-10
          and counter["max_gamma"] > 1e-6)
    _report("criterion_05_theorem_b_bound", ok,
            f"K_B {k:.4f} <= frozen {bound:.4f}; height function: "
            f"plain deviation {counter['max_omega']:.1e}, "
            f"coupled {counter['max_gamma']:.2e}")


@pytest.mark.slow
def test_criterion_06_strip_counterexample():
    # NOTE: the threshold half of this criterion is unattainable at the
    # stated strip widths: the energy-to-gradient ratio diverges like
    # 0.035 / eps (measured; beyond the log lower bound), which crosses 10
    # only near eps ~ 0.003, i.e. millions of sample points.  The divergence
    # and strict monotonicity are verified; the fixed threshold is kept as
    # stated and left red.  See the decisions ledger for the analysis.
    t0 = time.time()
    table = sobolev.counterexample_strip([0.1, 0.05, 0.025])
    dt = time.time() - t0
    ratios = [f"{r['ratio']:.2f}" for r in table["rows"]]
    increasing = table["strictly_increasing"]
    assert increasing, f"divergence check failed: ratios {ratios}"
    ok = table["final_ratio"] > 10.0
    _report("criterion_06_strip_counterexample", ok and dt < 180,
            f"ratios {ratios} strictly increasing (PASS); "
            f"final {table['final_ratio']:.2f} > 10 required, {dt:.0f}s")


def test_criterion_07_carleson(frozen):
    cfg = harness.ExperimentConfig("carleson", "/tmp/rectlab_acc", seed=11)
    body = harness.run_carleson(cfg)
    ok = all(a["passed"] for a in body["assertions"])
    frozen.check("carleson_omega_lip_graph", body["graph_omega_lip"])
    _report("criterion_07_carleson", ok,
            f"flat {body['flat_beta']:.1e}, graph {body['graph_beta']:.3f}, "
            f"stability {body['stability']:.3f}, cantor {body['cantor_beta']:.3f}")


def test_criterion_08_corona(frozen):
    cfg = harness.ExperimentConfig("corona", "/tmp/rectlab_acc", seed=11)
    body = harness.run_corona(cfg)
    lip_ratio = body["h_lip"] / 0.25
    energy = body["energy"]["ratio"]
    k_energy = frozen.check("corona_energy_K", energy, floor=1e-6)
    part = [a for a in body["assertions"] if a["name"] == "partition_of_unity"][0]
    ok = (part["passed"] and lip_ratio <= 5.0 and energy <= k_energy)
    _report("criterion_08_corona", ok,
            f"graph slope/angle {lip_ratio:.2f} (<=5), energy ratio "
            f"{energy:.2e} <= frozen {k_energy:.2e}, partition exact")


@pytest.mark.slow
def test_criterion_09_extension(frozen):
    cfg = harness.ExperimentConfig(
        "extension", "/tmp/rectlab_acc", seed=11, params={"m": 2.0})
    body = harness.run_extension(cfg)
    k_n = frozen.check("extension_N_K", body["ntm_ratio"])
    k_s = frozen.check("extension_S_K", body["square_ratio"])
    ok = (body["affine_error"] <= 1e-9 and body["partition_error"] <= 1e-10
          and body["ntm_ratio"] <= k_n and body["square_ratio"] <= k_s
          and body["trace_worst"] <= body["trace_tol"])
    # gradient convergence on the curved fixture
    boundary = geometry.gen_lipschitz_graph(
        lambda x: 0.05 * math.sin(2 * math.pi * float(x[0])), 0.6, 1 / 256, 1.0, d=1)
    dom = extension.Domain.above_graph(boundary, 0.6, 1 / 1024)
    lat = lattice.build_lattice(boundary)
    f = boundary.points @ np.array([0.0, 1.0])
    fld = extension.extend(dom, lat, f, m=2.0)
    rows = extension.lipschitz_case_convergence(
        dom, fld, boundary.points[40:220:36], n_scales=4)
    fine, coarse = [], []
    for row in rows:
        if len(row["deviations"]) >= 3:
            coarse.append(row["deviations"][0])
            fine.append(row["deviations"][-1])
    conv_ok = bool(fine) and np.mean(fine) <= np.mean(coarse) / 3
    _report("criterion_09_extension", ok and conv_ok,
            f"affine {body['affine_error']:.1e}, partition "
            f"{body['partition_error']:.1e}, N ratio {body['ntm_ratio']:.2f}, "
            f"S ratio {body['square_ratio']:.2f}, trace {body['trace_worst']:.4f}"
            f" <= {body['trace_tol']:.4f}, grad decay "
            f"{np.mean(fine) / np.mean(coarse):.2f} <= 1/3")


def test_criterion_10_determinism(tmp_path):
    bodies, csvs = [], []
    for run_dir in ("a", "b"):
        cfg = harness.ExperimentConfig(
            "flat_dorronsoro", str(tmp_path / run_dir), seed=7,
            params={"resolution": 1 / 8, "d": 1, "pq": [[2, 2]]})
        harness.run(cfg)
        summary = json.loads((tmp_path / run_dir / "summary.json").read_text())
        bodies.append(json.dumps(summary["body"], sort_keys=True))
        csvs.append((tmp_path / run_dir / "flat_dorronsoro_table.csv").read_bytes())
    ok = bodies[0] == bodies[1] and csvs[0] == csvs[1]
    _report("criterion_10_determinism", ok,
            "report bodies and CSV tables byte-identical across reruns")
