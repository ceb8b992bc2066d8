"""Acceptance checks for the estimators and the simulation studies.

Each test records the criterion it belongs to and the measured quantities;
``conftest.py`` prints one PASS/FAIL line per criterion at the end of the run.
The Monte-Carlo criteria run at full size (R = 1000). The n = 1000 column of
the coverage study is opt-in through ``RECIPNET_ACCEPT_N1000=1`` and the
real-data reproduction needs ``RECIPNET_LAZEGA_DIR`` / ``RECIPNET_TRADE_DIR``.
"""

import math
import os
import time
from pathlib import Path

import numpy as np
import pytest
from scipy.optimize import minimize

from oracles import fd_gradient, fd_jacobian, fixed_dyad_frequencies, nll_by_enumeration, within_multinomial_band
from recipnet.br import BrParams, BrSparsitySpec, br_fit, br_nll
from recipnet.graph import CovariateSet, DirectedGraph, DyadCensus, edges_from_flows, load_covariates, load_edge_list, n_dyads
from recipnet.mc import ExperimentConfig, _run_replicates, run_coverage, run_phase_transition, run_qq
from recipnet.p15 import ParamVector, _sampling_probabilities, p15_fit, p15_gradient, p15_hessian, p15_nll

THETA0 = {"mu": 0.2, "tau": 0.5, "gamma1": [0.2], "gamma2": [0.4], "delta": [0.3]}


def tag(record_property, criterion, detail):
    record_property("criterion", criterion)
    record_property("detail", detail)


# --- 1: closed-form BR estimate vs a generic minimizer -----------------------


def _oracle_nll_and_grad(census):
    D = census.total

    def f(x):
        mu, tau = x
        m = max(0.0, mu, tau)
        logk = m + math.log(math.exp(-m) + 2 * math.exp(mu - m) + math.exp(tau - m))
        return (D * logk - census.d_asym * mu - census.d_mut * tau) / D

    def g(x):
        mu, tau = x
        m = max(0.0, mu, tau)
        k = math.exp(-m) + 2 * math.exp(mu - m) + math.exp(tau - m)
        return np.array([2 * math.exp(mu - m) / k - census.d_asym / D, math.exp(tau - m) / k - census.d_mut / D])

    return f, g


def test_c1_closed_form_br_matches_numeric_minimizer(record_property):
    rng = np.random.default_rng(2024)
    start = time.perf_counter()
    worst = 0.0
    done = 0
    while done < 100:
        n = int(rng.integers(4, 400))
        probs = rng.dirichlet([1.0, 1.0, 1.0])
        counts = rng.multinomial(n_dyads(n), probs)
        if np.any(counts == 0):
            continue
        census = DyadCensus(n, *map(int, counts))
        fit = br_fit(census)
        f, g = _oracle_nll_and_grad(census)
        res = minimize(f, np.zeros(2), jac=g, method="BFGS", options={"gtol": 1e-14, "maxiter": 10_000})
        # polish: a few Newton steps on the oracle gradient with a finite-difference Jacobian
        x = res.x
        for _ in range(3):
            J = fd_jacobian(g, x, 1e-6)
            x = x - np.linalg.solve(J, g(x))
        worst = max(worst, abs(x[0] - fit.params.mu_n), abs(x[1] - fit.params.tau_n))
        # the package's own objective agrees with the oracle's at the optimum
        assert br_nll(census, BrParams(*x)) / census.total == pytest.approx(f(x), rel=1e-12)
        done += 1
    elapsed = time.perf_counter() - start
    tag(record_property, "C1 closed-form BR MLE", f"max |diff| {worst:.2e} (tol 1e-8), {elapsed:.1f}s (limit 10s)")
    assert worst < 1e-8
    assert elapsed < 10


# --- 2: derivative oracle ------------------------------------------------------


def test_c2_derivatives_match_finite_differences(record_property):
    rng = np.random.default_rng(7)
    start = time.perf_counter()
    worst_g = worst_h = 0.0
    for k in range(50):
        n, d = (5, 20)[k % 2], (1, 2)[(k // 2) % 2]
        cov = CovariateSet.uniform(n, d, d, d, rng=rng)
        p = ParamVector(rng.normal(-1, 0.5), rng.normal(-0.5, 0.5), rng.normal(0, 0.5, d),
                        rng.normal(0, 0.5, d), rng.normal(0, 0.5, d))
        g = DirectedGraph.from_dyad_states(n, rng.random(n_dyads(n)) < 0.4, rng.random(n_dyads(n)) < 0.4)
        dims = p.dims
        f = lambda th: p15_nll(ParamVector.from_array(th, *dims), g, cov)
        grad = lambda th: p15_gradient(ParamVector.from_array(th, *dims), g, cov)
        x = p.to_array()
        ga, gn = grad(x), fd_gradient(f, x, 1e-5)
        Ha, Hn = p15_hessian(p, g, cov), fd_jacobian(grad, x, 1e-4)
        worst_g = max(worst_g, np.max(np.abs(ga - gn)) / np.max(np.abs(gn)))
        worst_h = max(worst_h, np.max(np.abs(Ha - Hn)) / np.max(np.abs(Hn)))
    elapsed = time.perf_counter() - start
    tag(record_property, "C2 derivative oracle",
        f"gradient rel err {worst_g:.1e} (tol 1e-6), Hessian rel err {worst_h:.1e} (tol 1e-5), "
        f"{elapsed:.1f}s (limit 30s)")
    assert worst_g < 1e-6
    assert worst_h < 1e-5
    assert elapsed < 30


# --- 3: brute-force likelihood -------------------------------------------------


def test_c3_brute_force_likelihood(record_property):
    rng = np.random.default_rng(3)
    worst = 0.0
    for k in range(60):
        n = 2 + k % 3
        d = 1 + k % 2
        cov = CovariateSet.uniform(n, d, d, d, rng=rng)
        p = ParamVector(rng.normal(-1, 1), rng.normal(-0.5, 1), rng.normal(0, 1, d),
                        rng.normal(0, 1, d), rng.normal(0, 1, d))
        g = DirectedGraph.from_dyad_states(n, rng.random(n_dyads(n)) < 0.5, rng.random(n_dyads(n)) < 0.5)
        worst = max(worst, abs(p15_nll(p, g, cov) - nll_by_enumeration(p, g, cov)))
    tag(record_property, "C3 brute-force likelihood", f"max |diff| {worst:.1e} over 60 graphs, n <= 4 (tol 1e-12)")
    assert worst < 1e-12


# --- 4, 5: coverage, width and normality in the p1.5 design ---------------------


def p15_design(n, replicates=1000, seed=1):
    return ExperimentConfig(model="p15", n=n, a=0.5, b=0.5, theta0=THETA0, replicates=replicates, seed=seed,
                            workers=int(os.environ.get("RECIPNET_WORKERS", "1")))


@pytest.fixture(scope="module")
def p15_n200():
    cfg = p15_design(200)
    return cfg, _run_replicates(cfg)


def test_c4_gamma1_coverage_n200(p15_n200, record_property):
    cfg, results = p15_n200
    rep = run_coverage(cfg, results)
    cov = rep.coverage_of("gamma1")
    tag(record_property, "C4 coverage and width (n=200)",
        f"gamma1 coverage {100 * cov:.1f}% (target [92.5, 96.5], reported 94.2), "
        f"{rep.n_success}/{cfg.replicates} fits")
    assert 0.925 <= cov <= 0.965


def test_c4_gamma1_median_width_n200(p15_n200, record_property):
    cfg, results = p15_n200
    width = run_coverage(cfg, results).median_width_of("gamma1")
    tag(record_property, "C4 coverage and width (n=200)", f"gamma1 median width {width:.4f} (target 0.094 +/- 15%)")
    assert abs(width / 0.094 - 1) <= 0.15


@pytest.mark.slow
def test_c4_n1000_column(record_property):
    if os.environ.get("RECIPNET_ACCEPT_N1000") != "1":
        tag(record_property, "C4 coverage and width (n=1000, optional)", "not run (set RECIPNET_ACCEPT_N1000=1)")
        pytest.skip("optional n=1000 column not requested")
    cfg = p15_design(1000)
    rep = run_coverage(cfg)
    cov, width = rep.coverage_of("gamma1"), rep.median_width_of("gamma1")
    tag(record_property, "C4 coverage and width (n=1000, optional)",
        f"gamma1 coverage {100 * cov:.1f}% (target [92.5, 96.5]), median width {width:.4f} (target 0.025 +/- 15%)")
    assert 0.925 <= cov <= 0.965
    assert abs(width / 0.025 - 1) <= 0.15


def test_c5_standardized_estimates(p15_n200, record_property):
    cfg, results = p15_n200
    summary = run_qq(cfg, results).summary()
    parts = [f"{r['coordinate']} mean {r['mean']:+.3f} sd {r['sd']:.3f}" for r in summary]
    tag(record_property, "C5 standardized estimates", ", ".join(parts) + " (|mean| < 0.1, sd in [0.9, 1.1])")
    for r in summary:
        assert abs(r["mean"]) < 0.1
        assert 0.9 <= r["sd"] <= 1.1


# --- 6: BR plug-in standard errors ---------------------------------------------


def test_c6_br_plugin_coverage(record_property):
    cfg = ExperimentConfig(model="br", n=500, a=0.5, b=1.0, theta0={"mu": 0.2, "tau": 0.5}, replicates=1000, seed=1)
    rep = run_coverage(cfg)
    parts = [f"{name} {100 * rep.coverage_of(name):.1f}%" for name in rep.names]
    tag(record_property, "C6 BR plug-in coverage", ", ".join(parts) + " (each in [93, 97])")
    for name in rep.names:
        assert 0.93 <= rep.coverage_of(name) <= 0.97


# --- 7: sparsity regimes ---------------------------------------------------------


@pytest.fixture(scope="module")
def phase():
    mu0, rho0 = 0.2, 0.1
    cfg = ExperimentConfig(model="br", n=500, theta0={"mu": mu0, "tau": 2 * mu0 + rho0}, replicates=1000, seed=1,
                           cells=[[0.5, 1.0], [0.75, 0.75], [1.0, 0.5]])
    return run_phase_transition(cfg)


def test_c7_corr_a_below_b(phase, record_property):
    c = phase.cell(0.5, 1.0)["corr_mu_rho"]
    tag(record_property, "C7 phase transition", f"a=0.5,b=1: corr {c:+.3f} (|corr| < 0.15)")
    assert abs(c) < 0.15


def test_c7_corr_a_above_b(phase, record_property):
    c = phase.cell(1.0, 0.5)["corr_mu_rho"]
    tag(record_property, "C7 phase transition", f"a=1,b=0.5: corr {c:+.3f} (> 0.9)")
    assert c > 0.9


def test_c7_corr_a_equals_b(phase, record_property):
    c = phase.cell(0.75, 0.75)["corr_mu_rho"]
    tag(record_property, "C7 phase transition", f"a=b=0.75: corr {c:+.3f} (-0.854 +/- 0.1)")
    assert abs(c + 0.854) < 0.1


def test_c7_tau_variance(phase, record_property):
    target = 2 * math.exp(-0.5)
    ratios = {(r["a"], r["b"]): r["var_tau_scaled"] / target for r in phase.rows()}
    parts = [f"(a,b)=({a:g},{b:g}) ratio {q:.3f}" for (a, b), q in ratios.items()]
    tag(record_property, "C7 phase transition", "var of scaled tau_hat / 2e^-tau0: " + ", ".join(parts)
        + " (within 15%)")
    for q in ratios.values():
        assert abs(q - 1) <= 0.15


# --- 8: sampler --------------------------------------------------------------------


def test_c8_fixed_dyad_frequencies(record_property):
    rng = np.random.default_rng(8)
    draws = 100_000
    worst = 0.0
    for k in range(20):
        d = 1 + k % 2
        cov = CovariateSet.uniform(2, d, d, d, rng=rng)
        spec = BrSparsitySpec(rng.uniform(0.1, 1.9), rng.uniform(0.1, 1.9), rng.normal(0, 1), rng.normal(0, 1))
        g1, g2, dl = rng.normal(0, 1, d), rng.normal(0, 1, d), rng.normal(0, 1, d)
        _, _, probs = _sampling_probabilities(2, spec, g1, g2, dl, cov)
        freq = fixed_dyad_frequencies(probs[0], draws, seed0=k * draws)
        ok, z = within_multinomial_band(freq, probs[0], draws)
        worst = max(worst, float(np.max(np.abs(z))))
    tag(record_property, "C8 sampler", f"max |z| {worst:.2f} over 20 settings x 1e5 draws (limit 4)")
    assert worst <= 4


# --- 9: real data (conditional) ----------------------------------------------------

LAZEGA = {
    "x": ["age"], "y": ["years"],
    "v": ["same_status", "same_office", "same_practice", "same_gender", "same_school"],
    "table": {"age": (-0.03, -0.04, -0.02), "years": (0.05, 0.04, 0.06), "same_status": (1.64, 1.23, 2.04),
              "same_office": (1.67, 1.25, 2.08), "same_practice": (1.32, 0.95, 1.69),
              "same_gender": (0.31, -0.07, 0.68), "same_school": (0.11, -0.23, 0.46)},
}
TRADE = {
    "x": ["landlocked"], "y": ["log_gdp"],
    "v": ["log_distance", "common_border", "common_language", "colonial_ties", "pta"],
    "table": {"log_gdp": (1.13, 1.08, 1.17), "landlocked": (-0.12, -0.29, 0.05),
              "log_distance": (-1.62, -1.84, -1.41), "common_border": (1.70, 1.06, 2.35),
              "common_language": (1.67, 1.15, 2.19), "colonial_ties": (0.93, 0.37, 1.49), "pta": (0.84, 0.17, 1.51)},
}


def _reproduce(graph, root, roles):
    cov = load_covariates(root / "nodes.csv", root / "dyads.csv", graph, roles["x"], roles["y"], roles["v"])
    fit = p15_fit(graph, cov)
    names = [*cov.x_names, *cov.y_names, *cov.v_names]
    est, ci = fit.estimates[2:], fit.ci[2:]
    misses = []
    for k, name in enumerate(names):
        got = (round(est[k], 2), round(ci[k, 0], 2), round(ci[k, 1], 2))
        if any(abs(a - b) > 0.0051 for a, b in zip(got, roles["table"][name])):
            misses.append(f"{name} {got} vs {roles['table'][name]}")
    return misses


@pytest.mark.parametrize("dataset", ["lazega", "trade"])
def test_c9_real_data(dataset, record_property):
    env = {"lazega": "RECIPNET_LAZEGA_DIR", "trade": "RECIPNET_TRADE_DIR"}[dataset]
    root = os.environ.get(env)
    if not root:
        tag(record_property, "C9 real data (conditional)", f"{dataset}: not supplied (set {env})")
        pytest.skip(f"{dataset} data not supplied")
    root = Path(root)
    if dataset == "lazega":
        graph = load_edge_list(root / "edges.csv", labels=_labels(root / "nodes.csv"))
        misses = _reproduce(graph, root, LAZEGA)
    else:
        graph = edges_from_flows(root / "flows.csv", share=0.01, volume=os.environ.get("RECIPNET_TRADE_VOLUME", "exports"),
                                 labels=_labels(root / "nodes.csv"))
        misses = _reproduce(graph, root, TRADE)
    tag(record_property, "C9 real data (conditional)",
        f"{dataset}: " + ("all estimates and CIs match to 2 decimals" if not misses else "; ".join(misses)))
    assert not misses


def _labels(path):
    import csv

    with open(path, newline="", encoding="utf-8-sig") as fh:
        return [row[0].strip() for row in list(csv.reader(fh))[1:] if row]
