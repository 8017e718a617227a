"""Acceptance criteria, one test each, at the stated tolerances.

Every test appends a PASS/FAIL line to the terminal summary before asserting.
"""
import json
import math
import time
from pathlib import Path

import numpy as np
import pytest

from vexpand import cli
from vexpand import cotangent as C
from vexpand import oracles as O
from vexpand import spectral as S
from vexpand.cotangent import B_mu, Covector, GridSpec, b_mu
from vexpand.dynamics import CircleExpand, LinearMap, SkewCosine, SkewGeneral, compose

from conftest import ACCEPTANCE_LINES

REPRODUCE = Path(__file__).resolve().parent.parent / "reproduce"
DIAG = LinearMap([[2, 0], [0, 3]])
DOUBLING = CircleExpand(2, 0.0)


def record(number, title, checks, detail, elapsed):
    """Log one line and fail with the names of any violated checks."""
    failed = [name for name, ok in checks.items() if not ok]
    status = "PASS" if not failed else "FAIL"
    line = f"[criterion {number}] {status} {title}: {detail} ({elapsed:.1f} s)"
    if failed:
        line += f" failed={failed}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    assert not failed, line


def test_criterion_1_closed_form_weights():
    t0 = time.perf_counter()
    checks, errs, worst_time = {}, [], 0.0
    for mu in (0.5, 1.0, 2.0):
        t = time.perf_counter()
        v = B_mu(DIAG, mu, 1, GridSpec(16, 64)).value
        worst_time = max(worst_time, time.perf_counter() - t)
        errs.append(abs(v - 2 ** -mu))
        checks[f"linear mu={mu}"] = errs[-1] <= 1e-10
    for k in (2, 3, 4):
        for mu in (0.5, 1.0):
            t = time.perf_counter()
            v = B_mu(CircleExpand(k), mu, 1, GridSpec(64, 1)).value
            worst_time = max(worst_time, time.perf_counter() - t)
            errs.append(abs(v - k ** -mu))
            checks[f"circle k={k} mu={mu}"] = errs[-1] <= 1e-10
    checks["runtime < 5 s each"] = worst_time < 5
    record(1, "closed-form weights", checks, f"max error {max(errs):.1e}", time.perf_counter() - t0)


def test_criterion_2_example_classification(tmp_path):
    t0 = time.perf_counter()
    checks, values = {}, []
    for m in (32, 64, 128):
        t = time.perf_counter()
        code = cli.run(["rate", "--config", str(REPRODUCE / f"ac2_skew_m{m}.json"), "--output", str(tmp_path / str(m))])
        elapsed = time.perf_counter() - t
        rep = json.loads((tmp_path / str(m) / "report.json").read_text())
        rate = rep["result"]["rate"]
        est = rate["estimates"][0]
        values.append(rate["per_n"][0]["B"])
        checks[f"m={m} exit 0"] = code == 0
        checks[f"m={m} grid 512x512x1024"] = est["grid"] == [512, 1024] and rep["config"]["mu"] == 0.5
        checks[f"m={m} virtually_expanding"] = rate["classification"] == "virtually_expanding" and values[-1] < 1
        checks[f"m={m} runtime < 5 min"] = elapsed < 300
    checks["decreasing in m"] = values[0] > values[1] > values[2]
    detail = "B^1 = " + ", ".join(f"{v:.5f}" for v in values) + " for m = 32, 64, 128"
    record(2, "example classification", checks, detail, time.perf_counter() - t0)


def test_criterion_3_certifier():
    t0 = time.perf_counter()
    rep = C.appendix_certify(64, 1.0, GridSpec(512, 1024), strict=False)
    elapsed = time.perf_counter() - t0
    ratio_bound = math.sqrt((1 + (2 * math.pi) ** 2) / (1 + (4 * math.pi) ** 2))
    total_bound = math.sqrt((1 + (2 * math.pi) ** 2) / (1 + (3 * math.pi) ** 2))
    checks = {
        "verdict": rep.verdict,
        "cone ratio <= 0.50470": rep.max_cone_ratio <= ratio_bound + 1e-9,
        "|eta_x| >= 5 pi": rep.min_cone_eta >= 5 * math.pi - 1e-9,
        "violating count <= C sqrt(m)": rep.max_violating_count <= rep.fitted_C * math.sqrt(64) + 1e-9,
        "total < 0.67129": rep.max_total < total_bound,
        "horizontal line = m^-mu": rep.horizontal_value == pytest.approx(1 / 64, rel=1e-15),
        "runtime < 2 min": elapsed < 120,
    }
    detail = (f"max ratio {rep.max_cone_ratio:.5f}, min |eta_x| {rep.min_cone_eta:.4f}, "
              f"max violating {rep.max_violating_count} (C = {rep.fitted_C:.3f}), "
              f"max total {rep.max_total:.5f}, horizontal {rep.horizontal_value:.6f}")
    record(3, "appendix certifier m=64", checks, detail, elapsed)


def test_criterion_4_exact_identities():
    t0 = time.perf_counter()
    rng = np.random.default_rng(4)
    families = {
        "linear": LinearMap([[2, 1], [1, 3]]), "doubling": DOUBLING, "perturbed": CircleExpand(3, 0.1),
        "skew": SkewCosine(8, 8), "skew_general": SkewGeneral(CircleExpand(2, 0.05), (0.0, 0.3), (0.2,)),
    }
    constant_jacobian = {"linear", "doubling", "skew"}
    scale = fact = mu0 = 0.0
    for name, f in families.items():
        for _ in range(100):
            cov = Covector(rng.random(f.dim), rng.normal(size=f.dim))
            b = b_mu(f, 1.0, cov)
            beta = rng.uniform(0.01, 100) * rng.choice([-1, 1])
            scale = max(scale, abs(b_mu(f, 1.0, Covector(cov.base, beta * cov.xi)) - b))
            fact = max(fact, abs(C.factorized_b(f, f, 1.0, cov) - b_mu(compose(f, f), 1.0, cov)))
            inv_j = float(np.sum(1 / np.abs(f.jacobian(f.preimages(cov.base)))))
            target = 1.0 if name in constant_jacobian else inv_j
            mu0 = max(mu0, abs(b_mu(f, 0.0, cov) - target))
    slack = -np.inf
    for f, grid in ((SkewCosine(4, 4), GridSpec(16, 32)), (CircleExpand(2, 0.1), GridSpec(64, 1))):
        for n, m in ((1, 1), (1, 2), (2, 1)):
            r = C.submultiplicativity_check(f, 1.0, n, m, grid)
            slack = max(slack, r["lhs"] - r["rhs"])
    elapsed = time.perf_counter() - t0
    checks = {
        "scale invariance 1e-12": scale <= 1e-12,
        "factorization 1e-12": fact <= 1e-12,
        "mu=0 reduction": mu0 <= 1e-12,
        "sub-multiplicativity slack 1e-9": slack <= 1e-9,
        "runtime < 1 min": elapsed < 60,
    }
    detail = f"scale {scale:.1e}, factorization {fact:.1e}, mu=0 {mu0:.1e}, submult excess {slack:.2e}"
    record(4, "exact identities", checks, detail, elapsed)


def test_criterion_5_transfer_matrix_structure():
    t0 = time.perf_counter()
    K = 8
    tm = S.assemble_transfer_matrix(DOUBLING, K)
    shift = max(abs(tm.entry(k, l) - (1.0 if l == 2 * k else 0.0)) for k in range(-K, K + 1) for l in range(-K, K + 1))
    families = {
        "linear": LinearMap([[2, 1], [1, 3]]), "linear_diag": DIAG, "doubling": DOUBLING,
        "perturbed": CircleExpand(2, 0.05), "skew": SkewCosine(4, 4), "skew_example": SkewCosine(8, 8),
        "skew_general": SkewGeneral(CircleExpand(3, 0.1), (0.2, 0.5), (0.1,)),
    }
    mass = 0.0
    for f in families.values():
        M = S.assemble_transfer_matrix(f, K)
        z = M.index(np.zeros(f.dim, dtype=int))
        row = M.entries[z].copy()
        row[z] -= 1.0
        mass = max(mass, float(np.abs(row).max()))
    vals = S.leading_spectrum(tm, 1.0).values
    spec_err = max(abs(vals[0] - 1.0), float(np.abs(vals[1:]).max()))
    checks = {
        "doubling = delta(l, 2k) to 1e-12": shift <= 1e-12,
        "mass row to 1e-10 (all families)": mass <= 1e-10,
        "doubling spectrum {1} u {0} to 1e-10": spec_err <= 1e-10,
    }
    detail = f"shift error {shift:.1e}, mass-row error {mass:.1e}, spectrum error {spec_err:.1e}"
    record(5, "transfer-matrix structure", checks, detail, time.perf_counter() - t0)


def test_criterion_6_bessel_oracle():
    t0 = time.perf_counter()
    tm = S.assemble_transfer_matrix(SkewCosine(4, 4), 6)
    err = float(np.abs(tm.entries - O.bessel_matrix_oracle(4, 4.0, 6)).max())
    elapsed = time.perf_counter() - t0
    checks = {"max entry error 1e-8": err <= 1e-8, "runtime < 30 s": elapsed < 30}
    record(6, "Bessel oracle", checks, f"max entry error {err:.1e}", elapsed)


def test_criterion_7_spectral_vs_ergodic():
    t0 = time.perf_counter()
    f = CircleExpand(2, 0.05)
    rho, lam = S.invariant_density(S.assemble_transfer_matrix(f, 64), with_eigenvalue=True)
    hist = O.birkhoff_histogram(f, 10_000, 1_100, 100, 64, seed=42)
    dist = O.l1_distance(hist, rho.bin_averages(64))
    elapsed = time.perf_counter() - t0
    checks = {
        "L1 <= 0.02": dist <= 0.02,
        "eigenvalue within 1e-8 of 1": abs(lam - 1.0) <= 1e-8,
        "1000 recorded steps per orbit": hist.total == 10_000 * 1_000,
        "runtime < 3 min": elapsed < 180,
    }
    record(7, "spectral vs ergodic", checks, f"L1 {dist:.5f}, |lambda - 1| {abs(lam - 1):.1e}", elapsed)


def test_criterion_8_essential_radius_consistency():
    t0 = time.perf_counter()
    checks, parts = {}, []
    cases = (("doubling", DOUBLING, [16, 32], 3, GridSpec(64, 1)),
             ("skew m=8", SkewCosine(8, 8), [12, 24], 3, GridSpec(64, 256)))
    for name, f, K_list, n_max, grid in cases:
        rep = S.essential_radius_report(f, 1.0, K_list, n_max, grid)
        above = [lam for lam, s in zip(rep.eigenvalues, rep.stable) if s and abs(lam) > rep.bound]
        checks[f"{name} stable eigenvalues persist"] = rep.persists
        checks[f"{name} bulk < bound + 0.05"] = rep.bulk_radius < rep.bound + 0.05
        checks[f"{name} leading eigenvalue 1"] = abs(rep.eigenvalues[0] - 1) <= 1e-8
        parts.append(f"{name}: bound {rep.bound:.4f}, bulk {rep.bulk_radius:.4f}, "
                     f"{len(above)} stable above bound, K = {K_list}")
    record(8, "essential-radius consistency (heuristic)", checks, "; ".join(parts), time.perf_counter() - t0)


def test_criterion_9_cesaro_convergence():
    t0 = time.perf_counter()
    K = 32
    tm = S.assemble_transfer_matrix(DOUBLING, K)
    u = S.TrigPoly.from_modes(K, 1, {1: 0.5, -1: 0.5})
    avg = S.cesaro_average(tm, u, 100)
    h0 = S.h_mu_norm(avg, 0.0)
    l2 = avg.l2_norm()
    checks = {
        "H^0 norm <= 0.011": h0 <= 0.011,
        "L2 norm = |u|_L2 / 100 to 1e-10": abs(l2 - u.l2_norm() / 100) <= 1e-10,
        "L2 norm ~ 0.00707": abs(l2 - 0.0070710678118654755) <= 1e-10,
    }
    record(9, "Cesaro convergence", checks, f"H^0 norm {h0:.10f}, L2 norm {l2:.10f}", time.perf_counter() - t0)
