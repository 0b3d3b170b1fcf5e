"""Acceptance criteria, each at its stated tolerance.

Every test records one PASS/FAIL line, printed in the pytest terminal
summary under "acceptance criteria".
"""
import itertools
import math

import numpy as np
import pytest

from whittle_sched import csvio
from whittle_sched.cli import main
from whittle_sched.config import parse_config
from whittle_sched.mdp import (TruncatedMdp, certify_structure, evaluate_threshold_policy, numeric_whittle_index,
                               passive_growth_ratio, shift_identity_error, threshold_monotone_in_W,
                               value_iteration)
from whittle_sched.model import ClassParams, SystemConfig
from whittle_sched.policies import PolicyKind
from whittle_sched.relaxed import lagrangian_lower_bound, occupation_measure_lp
from whittle_sched.sim import sweep
from whittle_sched.whittle import beta_threshold, g, index_discounted, index_limit

CLASSES = [ClassParams(1, 1.0, 3), ClassParams(2, 2.0, 5), ClassParams(3, 1.0, 20)]
BETAS = [0.5, 0.9, 0.99]
SOLVER_TOL = 1e-9
CASES = list(itertools.product(CLASSES, BETAS))
case_ids = [f"R{c.R}-b{b}" for c, b in CASES]


@pytest.mark.parametrize("params, beta", CASES, ids=case_ids)
def test_c1_closed_form_matches_oracle(params, beta, verdict):
    worst = 0.0
    for n in range(params.R + 4):
        numeric = numeric_whittle_index(params, n, beta, q_max=500)
        worst = max(worst, abs(numeric - index_discounted(n, beta, params)))
    ok = verdict(f"C1 index oracle (a={params.a:g}, R={params.R}, beta={beta})", worst <= 1e-3,
                 f"max |numeric - closed form| = {worst:.2e} (tol 1e-3)")
    assert ok


@pytest.mark.parametrize("params, beta", CASES, ids=case_ids)
def test_c2_g_identity(params, beta, verdict):
    R = params.R
    grid = list(range(R + 4)) + [R + 10, 2 * R + 7]
    worst = 0.0
    mdp = TruncatedMdp(params, 0.0, beta)
    for n in grid:
        for W in (0.0, index_discounted(n, beta, params), 0.5 * params.a * R * beta / (1 - beta)):
            mdp.W = W
            ev = evaluate_threshold_policy(mdp, n, tol=SOLVER_TOL)
            worst = max(worst, abs(ev.gap(n) - g(n, W, beta, params)))
    ok = verdict(f"C2 g identity (a={params.a:g}, R={R}, beta={beta})", worst <= 10 * SOLVER_TOL,
                 f"max error {worst:.2e} (tol {10 * SOLVER_TOL:.0e})")
    assert ok


@pytest.mark.parametrize("params, beta", CASES, ids=case_ids)
def test_c3_shift_and_growth_identities(params, beta, verdict):
    shift = max(shift_identity_error(params, W, beta) for W in (0.0, 1.7, params.a * params.R))
    ratio = passive_growth_ratio(params, 0.0, beta)
    ok = shift <= 10 * SOLVER_TOL and ratio >= 1 - 1e-3
    verdict(f"C3 shift identity and passive growth (a={params.a:g}, R={params.R}, beta={beta})", ok,
            f"shift error {shift:.2e} (tol 1e-8); min growth ratio {ratio:.6f} (need >= 0.999)")
    assert ok


def test_c4_structure_and_indexability(verdict):
    rng = np.random.default_rng(20240)
    failures = []
    for _ in range(100):
        params = CLASSES[rng.integers(len(CLASSES))]
        beta = float(rng.uniform(0.5, 0.99))
        W = float(rng.uniform(0.0, 1.2 * params.a * params.R * beta / (1 - beta)))
        sol = value_iteration(TruncatedMdp(params, W, beta), tol=SOLVER_TOL)
        report = certify_structure(sol)
        if not report.passed or sol.threshold is None:
            failures.append((params.R, beta, W, report.notes))
    grids_ok = True
    for params, beta in CASES:
        tail = params.a * params.R * beta / (1 - beta)
        ok, table = threshold_monotone_in_W(params, beta, np.linspace(0.0, 1.1 * tail, 45), tol=SOLVER_TOL)
        grids_ok &= ok
        if not ok:
            failures.append((params.R, beta, "W-grid", table))
    ok = not failures and grids_ok
    verdict("C4 structural certification (100 random points, 9 subsidy grids)", ok,
            f"{len(failures)} failures" + (f"; first {failures[0]}" if failures else ""))
    assert ok


def _descending_equal(d, l):
    d, l = np.asarray(d), np.asarray(l)
    return not np.any(np.sign(d[:, None] - d[None, :]) * np.sign(l[:, None] - l[None, :]) < 0)


def test_c5_ranking_equivalence(verdict):
    rng = np.random.default_rng(5)
    beta = beta_threshold(CLASSES) + 1e-3
    ts = max(c.a * c.R**2 for c in CLASSES)
    bad = 0
    for _ in range(1000):
        size = int(rng.integers(3, 25))
        ks = rng.integers(0, len(CLASSES), size)
        ks[:3] = [0, 1, 2]
        ns = [int(rng.integers(0, 3 * CLASSES[k].R + 1)) for k in ks]
        d = [index_discounted(n, beta, CLASSES[k]) for k, n in zip(ks, ns)]
        l = [index_limit(n, CLASSES[k], ts) for k, n in zip(ks, ns)]
        bad += not _descending_equal(d, l)
    ok = verdict("C5 ranking equivalence (1000 multisets)", bad == 0, f"{bad} mismatched orderings, beta={beta:.6f}")
    assert ok


@pytest.mark.parametrize("preset", ["fig1", "fig2"])
def test_c6_population_sweep(preset, verdict):
    exp = parse_config(preset)
    base, _ = exp.system()
    assert (base.horizon, base.replications, base.alpha) == (200_000, 20, 0.5)
    res = sweep(base, [10, 20, 40, 80], [PolicyKind("wi"), PolicyKind("md")])
    lines, order_ok = [], True
    for row in res.rows:
        wi, md = row.results["wi"], row.results["md"]
        row_ok = row.lower_bound <= wi.mean + 2 * wi.stderr and wi.mean < md.mean
        order_ok &= row_ok
        lines.append(f"N={row.N}: RP {row.lower_bound:.4f} WI {wi.mean:.4f}+/-{wi.stderr:.3f} MD {md.mean:.4f}")
    shrink = res.gap_shrinks("wi")
    gaps = f"gap {res.rows[0].gap('wi'):.4f} -> {res.rows[-1].gap('wi'):.4f}"
    verdict(f"C6(i) {preset} RP <= WI < MD at every N", order_ok, "; ".join(lines))
    verdict(f"C6(ii) {preset} relative gap shrinks N=10 -> 80", shrink, gaps)
    assert order_ok and shrink


def test_c7_relaxed_bound_matches_lp(verdict):
    toy = ClassParams(1, 1.0, 2)
    worst = 0.0
    for N in (2, 10):
        cfg = SystemConfig((toy,), (N,), N // 2)
        bound = lagrangian_lower_bound(cfg).lower_bound_cost
        worst = max(worst, abs(bound - occupation_measure_lp(cfg.classes, cfg.counts, cfg.M)))
    ok = verdict("C7 relaxed bound vs occupation-measure LP", worst <= 1e-3, f"max difference {worst:.2e}")
    assert ok


def test_c8_sweep_determinism(tmp_path, verdict, capsys):
    cfg = tmp_path / "det.cfg"
    cfg.write_text(
        "classes:\n  - {a: 1.0, R: 5, count: 5}\n  - {a: 1.0, R: 20, count: 5}\n"
        "alpha: 0.5\nhorizon: 20000\nreplications: 3\nseed: 99\n")
    bodies = []
    for name in ("first", "second"):
        out = tmp_path / name
        assert main(["sweep", "--config", str(cfg), "--n", "10,20", "--out", str(out)]) == 0
        bodies.append([(out / f).read_bytes() for f in ("sweep_summary.csv", "sweep_replications.csv")])
    ok = verdict("C8 repeated sweep is byte-identical", bodies[0] == bodies[1],
                 f"{sum(len(b) for b in bodies[0])} bytes compared")
    assert ok
