"""Acceptance gate: one test per criterion, each printing a PASS/FAIL line.

Criteria that are experiments go through run_experiment so that criterion 10
can re-run them from their manifests and compare the report bytes.
"""

import filecmp
import math
import time
import warnings

import numpy as np
import pytest
from scipy import integrate

from fracpme import Grid, NonlinearitySpec, OperatorSpec, assemble
from fracpme.estimates import barrier_formula_constant, exponents
from fracpme.fitting import boundary_fit
from fracpme.harness import load_manifest_config, read_trajectory_csv, run_experiment
from fracpme.operator import rfl_constant

LINES: dict[int, str] = {}

SQUARE = [{"coeff": 1.0, "exponent": 2.0}]
RFL = {"kind": "rfl", "s": 0.25, "a": -1.0, "b": 1.0}


def record(k: int, ok: bool, detail: str, seconds: float | None = None):
    tail = f" [{seconds:.1f}s]" if seconds is not None else ""
    LINES[k] = f"criterion {k:2d}: {'PASS' if ok else 'FAIL'}  {detail}{tail}"
    print(LINES[k])


def _c8_horizon() -> float:
    op = assemble(OperatorSpec("sfl", 0.25, Grid(-1.0, 1.0, 255)))
    return 0.1 / (barrier_formula_constant(op, 10.0, 0.5) * 0.01**9)


CONFIGS = {
    1: [{
        "name": "c01_eigen",
        "operator": {"kind": "classical", "a": 0.0, "b": math.pi, "n": 199},
        "nonlinearity": SQUARE,
        "datum": {"family": "eigen_power", "beta": 1.0},
        "time": {"T": 1e-6, "n_steps": 1},
        "audits": [{"name": "boundary_exponent", "params": {"time": 0.0, "expected": 1.0, "rel_tol": 0.05}}],
    }],
    3: [{
        "name": "c03_semigroup",
        "operator": {**RFL, "n": 256},
        "nonlinearity": SQUARE,
        "datum": {"family": "bump"},
        "time": {"T": 1.0, "n_steps": 256},
        "audits": [
            {"name": "contraction", "params": {"bump": 0.5, "datum": {"family": "bump", "half_width": 0.5}}},
            {"name": "benilan_crandall", "params": {"tol": 1e-8}},
        ],
    }],
    4: [{
        "name": "c04_identity",
        "operator": {**RFL, "n": 256},
        "nonlinearity": SQUARE,
        "datum": {"family": "bump"},
        "time": {"T": 1.0, "n_steps": 128},
        "audits": ["weighted_l1_identity"],
    }],
    5: [{
        "name": "c05_smoothing",
        "operator": {**RFL, "n": 255},
        "nonlinearity": SQUARE,
        "datum": {"family": "bump", "offset": 0.0, "half_width": 0.05},
        "time": {"T": 1.0, "n_steps": 4},
        "audits": [{"name": "smoothing", "params": {"amplitudes": [1.0, 10.0, 100.0, 1000.0],
                                                    "tau_window": [0.03, 5.0], "rel_tol": 0.2}}],
    }],
    6: [{
        "name": f"c06_matching_n{n}",
        "operator": {**RFL, "n": n},
        "nonlinearity": SQUARE,
        "datum": {"family": "bump"},
        "time": {"T": 100.0, "n_steps": 200},
        "audits": [{"name": "boundary_envelopes", "params": {"rel_tol": 0.15}}]
        + ([{"name": "harnack", "params": {"center": -0.5, "radius": 0.2, "mode": "elliptic"}}] if n == 255 else []),
    } for n in (255, 511)],
    7: [{
        "name": "c07_classical",
        "operator": {"kind": "classical", "a": -1.0, "b": 1.0, "n": 255},
        "nonlinearity": SQUARE,
        "datum": {"family": "bump"},
        "time": {"T": 20.0, "n_steps": 400},
        "audits": [
            {"name": "propagation", "params": {"expect": "finite-speed", "min_collar_points": 5}},
            {"name": "ghp_lower", "params": {"regime": "GHP_I", "window": "before"}, "expected_fail": True},
            {"name": "ghp_lower", "params": {"regime": "GHP_I", "window": "after"}},
        ],
    }, {
        "name": "c07_rfl",
        "operator": {**RFL, "n": 255},
        "nonlinearity": SQUARE,
        "datum": {"family": "bump"},
        "time": {"T": 1.0, "n_steps": 16},
        "audits": [{"name": "propagation", "params": {"expect": "infinite-speed"}}],
    }],
    8: [{
        "name": "c08_sfl_anomalous",
        "operator": {"kind": "sfl", "s": 0.25, "a": -1.0, "b": 1.0, "n": 255},
        "nonlinearity": [{"coeff": 1.0, "exponent": 10.0}],
        "datum": {"family": "eigen_power", "amplitude": 0.01, "beta": 0.5},
        "time": {"T": _c8_horizon(), "n_steps": 64},
        "audits": [
            {"name": "supersolution", "params": {"A": 0.01, "regime": "phi_power"}},
            {"name": "boundary_exponent", "params": {"expected": 0.5, "rel_tol": 0.15}},
            {"name": "exponent_floor"},
        ],
    }],
    9: [{
        "name": "c09_delta",
        "operator": {**RFL, "n": 256},
        "nonlinearity": SQUARE,
        "datum": {"family": "bump"},
        "time": {"T": 1.0, "n_steps": 64},
        "audits": [{"name": "delta_bracket", "params": {"deltas": [0.1, 0.01, 0.001]}}],
    }],
}


@pytest.fixture(scope="session")
def runs(tmp_path_factory):
    """Output directories and results per config name, shared with criterion 10."""
    root = tmp_path_factory.mktemp("acceptance")
    cache = {}

    def get(cfg):
        name = cfg["name"]
        if name not in cache:
            t0 = time.perf_counter()
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", RuntimeWarning)
                res = run_experiment(cfg, root / name, jobs=4)
            cache[name] = (res, time.perf_counter() - t0)
        return cache[name]

    get.root = root
    get.cache = cache
    return get


def by_claim(res):
    out = {}
    for rep in res.reports:
        out.setdefault(rep.claim, []).append(rep)
    return out


def test_criterion_01_eigen_accuracy(runs):
    t0 = time.perf_counter()
    op = assemble(OperatorSpec("classical", 1.0, Grid(0.0, math.pi, 199)))
    g = op.grid
    fit = boundary_fit(op.phi1, g.x, g.a, g.b, g.h)
    dt = time.perf_counter() - t0
    res, _ = runs(CONFIGS[1][0])
    rep = res.reports[0]
    ok = (abs(op.lambda1 - 1.0) <= 1e-3 and abs(fit.slope - 1.0) <= 0.05 and dt < 1.0
          and rep.verdict and not res.failures)
    record(1, ok, f"lambda1={op.lambda1:.8f} phi1 exponent={fit.slope:.4f}", dt)
    assert ok


def _rfl_oracle(x: float, s: float) -> float:
    """Adaptive quadrature of C int_0^inf (2u(x) - u(x+z) - u(x-z)) / z^{1+2s} dz for u = (1-x^2)_+^s."""
    u = lambda y: (1.0 - y * y) ** s if abs(y) < 1 else 0.0
    f = lambda z: (2 * u(x) - u(x + z) - u(x - z)) / z ** (1 + 2 * s)
    z1, z2 = 1 - abs(x), 1 + abs(x)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", integrate.IntegrationWarning)
        parts = [integrate.quad(f, 0, z1, limit=400, epsabs=1e-13, epsrel=1e-12)[0],
                 integrate.quad(f, z1, z2, limit=400, epsabs=1e-13, epsrel=1e-12)[0]]
    tail = 2 * u(x) * z2 ** (-2 * s) / (2 * s)
    return rfl_constant(s) * (sum(parts) + tail)


def test_criterion_02_rfl_consistency():
    t0 = time.perf_counter()
    s = 0.25
    points = (-0.5, -0.25, 0.0, 0.25, 0.5)
    errs = []
    for n in (128, 256, 512):
        op = assemble(OperatorSpec("rfl", s, Grid(-1.0, 1.0, n)))
        v = op.apply((1 - op.x**2) ** s)
        idx = [int(np.argmin(np.abs(op.x - p))) for p in points]
        errs.append(max(abs(v[i] - _rfl_oracle(float(op.x[i]), s)) for i in idx))
    rates = [math.log2(errs[0] / errs[1]), math.log2(errs[1] / errs[2])]
    dt = time.perf_counter() - t0
    ok = min(rates) >= 1.0 and dt < 10.0
    record(2, ok, f"errors={['%.2e' % e for e in errs]} rates={['%.2f' % r for r in rates]}", dt)
    assert ok


def test_criterion_03_semigroup(runs):
    res, dt = runs(CONFIGS[3][0])
    reps = by_claim(res)
    con = reps["contraction"][0].fitted
    bc = reps["benilan_crandall"][0]
    linf = max(con["lp_ratios"]["u"]["inf"], con["lp_ratios"]["v"]["inf"])
    ok = (con["ratio"] <= 1 + 1e-8 and con["order_violations"] == 0 and linf <= 1 + 1e-12
          and bc.margin_worst >= -1e-8 and not res.failures and dt < 30)
    record(3, ok, f"L1 ratio={con['ratio']:.12f} order violations={con['order_violations']} "
                  f"Linf ratio={linf:.12f} BC worst margin={bc.margin_worst:.2e}", dt)
    assert ok


def test_criterion_04_weighted_identity(runs):
    res, dt = runs(CONFIGS[4][0])
    rep = res.reports[0]
    ratio = rep.fitted["halving_ratio"]
    ok = abs(ratio / 2 - 1) <= 0.25 and rep.verdict and dt < 60
    record(4, ok, f"residual {rep.fitted['residual']:.3e} -> {rep.fitted['residual_refined']:.3e}, "
                  f"ratio={ratio:.4f}", dt)
    assert ok


def test_criterion_05_smoothing(runs):
    res, dt = runs(CONFIGS[5][0])
    assert not res.failures, res.failures
    f = res.reports[0].fitted
    ok = max(f["relative_error"]) <= 0.2 and f["mass_decades"] >= 3 - 1e-9 and dt < 300
    record(5, ok, f"alpha={f['alpha']:.4f} beta={f['beta']:.4f} target=({f['target'][0]:.4f}, "
                  f"{f['target'][1]:.4f}) rel.err={[round(e, 3) for e in f['relative_error']]} "
                  f"decades={f['mass_decades']:.1f}", dt)
    assert ok


def test_criterion_06_matching_powers(runs):
    total = 0.0
    details = []
    ok = True
    for cfg in CONFIGS[6]:
        res, dt = runs(cfg)
        total += dt
        assert not res.failures, res.failures
        reps = by_claim(res)
        env = reps["boundary_envelopes"][0].fitted
        n = cfg["operator"]["n"]
        ok &= env["relative_error"]["upper"] <= 0.15 and env["relative_error"]["lower"] <= 0.15
        details.append(f"n={n} upper={env['upper_slope']:.4f} lower={env['lower_slope']:.4f}")
        if "harnack_elliptic" in reps:
            hq = reps["harnack_elliptic"][0].fitted
            ok &= math.isfinite(hq["H_hat"]) and hq["drift"] < 0.25
            details.append(f"Harnack H={hq['H_hat']:.4f} refined={hq['H_hat_refined']:.4f} drift={hq['drift']:.3f}")
    ok &= total < 300
    record(6, ok, "target 0.25; " + "; ".join(details), total)
    assert ok


def test_criterion_07_propagation(runs):
    (res_c, dt_c), (res_r, dt_r) = runs(CONFIGS[7][0]), runs(CONFIGS[7][1])
    assert not res_c.failures and not res_r.failures
    prop_c = by_claim(res_c)["propagation"][0]
    before, after = by_claim(res_c)["ghp_lower_ghp_i"]
    prop_r = by_claim(res_r)["propagation"][0]
    ok = (prop_r.fitted["first_step_all_positive"] and prop_r.verdict
          and prop_c.verdict and prop_c.fitted["early_min_collar_points"] >= 5
          and not before.verdict and after.verdict and dt_c + dt_r < 120)
    record(7, ok, f"RFL all positive after one step={prop_r.fitted['first_step_all_positive']}; "
                  f"classical collar={prop_c.fitted['early_min_collar_points']}h, GHP lower before t*="
                  f"{'pass' if before.verdict else 'fail'} after t*={'pass' if after.verdict else 'fail'} "
                  f"(t*={after.fitted['t_star']:.3g})", dt_c + dt_r)
    assert ok


def test_criterion_08_sfl_anomalous(runs):
    cfg = CONFIGS[8][0]
    res, dt = runs(cfg)
    assert not res.failures, res.failures
    reps = by_claim(res)
    sup = reps["supersolution_phi_power"][0]
    floor = reps["exponent_floor"][0].fitted
    # exponent of u at every snapshot with t <= 0.1 T_A, against the distance to the boundary
    op = assemble(OperatorSpec.from_config(cfg["operator"]))
    traj = read_trajectory_csv(runs.root / cfg["name"] / "trajectory.csv")
    slopes = [boundary_fit(u, op.x, op.grid.a, op.grid.b, op.h).slope for u in traj.states[1:]]
    es = exponents(NonlinearitySpec.power(10.0), op)
    naive = es.sigma1 / es.m1
    ok = (all(abs(sl / 0.5 - 1) <= 0.15 for sl in slopes) and min(slopes) > naive
          and sup.verdict and sup.fitted["drift"] < 0.25 and floor["violations"] == 0 and dt < 300)
    record(8, ok, f"exponent range [{min(slopes):.4f}, {max(slopes):.4f}] vs 0.5 (naive {naive:.4f}); "
                  f"C~={sup.fitted['C_tilde']:.4f} refined={sup.fitted['C_tilde_refined']:.4f} "
                  f"drift={sup.fitted['drift']:.1e}; floor violations={floor['violations']}", dt)
    assert ok


def test_criterion_09_delta_approximation(runs):
    res, dt = runs(CONFIGS[9][0])
    f = res.reports[0].fitted
    ok = (f["bracket_ratio"] <= 1 + 1e-6 and f["order_violations"] == 0
          and f["above_mild_violations"] == 0 and dt < 120)
    record(9, ok, f"bracket ratio={f['bracket_ratio']:.6f} monotonicity violations={f['order_violations']}", dt)
    assert ok


def test_criterion_10_determinism(runs, tmp_path):
    t0 = time.perf_counter()
    compared = 0
    mismatched = []
    for k in sorted(CONFIGS):
        for cfg in CONFIGS[k]:
            runs(cfg)
            src = runs.root / cfg["name"]
            again = tmp_path / cfg["name"]
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", RuntimeWarning)
                run_experiment(load_manifest_config(src / "manifest.json"), again, jobs=2)
            for rep in sorted((src / "reports").iterdir()):
                compared += 1
                if not filecmp.cmp(rep, again / "reports" / rep.name, shallow=False):
                    mismatched.append(f"{cfg['name']}/{rep.name}")
            if not filecmp.cmp(src / "manifest.json", again / "manifest.json", shallow=False):
                mismatched.append(f"{cfg['name']}/manifest.json")
    ok = compared > 0 and not mismatched
    record(10, ok, f"{compared} report files re-run from manifests, mismatches={mismatched}",
           time.perf_counter() - t0)
    assert ok
