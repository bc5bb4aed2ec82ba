import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy import optimize

from fracpme import Grid, NonlinearitySpec, OperatorSpec, assemble
from fracpme.estimates import weighted_l1
from fracpme.solver import (AuditError, DeltaProblem, NewtonFailure, TimeGrid, Trajectory,
                            compare_ladders, contraction_audit, delta_ladder, implicit_step,
                            lp_nonexpansion, run_delta, run_mild, run_minimal)

from conftest import bump

SQ = NonlinearitySpec.power(2.0)


def test_time_grid():
    tg = TimeGrid(2.0, 8)
    assert tg.h_t == 0.25
    assert tg.times[-1] == 2.0 and tg.times.size == 9
    with pytest.raises(ValueError):
        TimeGrid(0.0, 4)
    with pytest.raises(ValueError):
        TimeGrid(1.0, 0)


def test_trajectory_validation():
    with pytest.raises(ValueError):
        Trajectory(np.array([0.0, 1.0]), np.zeros((3, 4)))
    with pytest.raises(ValueError):
        Trajectory(np.array([0.0, 0.0]), np.zeros((2, 4)))


def test_implicit_step_matches_generic_root_finder(rfl64):
    u_prev = bump(rfl64.x)
    h_t = 0.3
    u = implicit_step(rfl64, SQ, u_prev, h_t)
    G = lambda v: v + h_t * rfl64.A @ SQ(v) - u_prev
    ref = optimize.fsolve(G, u_prev, xtol=1e-13)
    assert np.allclose(u, ref, atol=1e-10)
    assert np.abs(G(u)).max() < 1e-10


def test_zero_datum_stays_zero(rfl64):
    tr = run_mild(rfl64, SQ, np.zeros(64), TimeGrid(1.0, 4))
    assert tr.meta["zero_datum"] and not tr.states.any()


def test_negative_datum_rejected(rfl64):
    with pytest.raises(ValueError):
        run_mild(rfl64, SQ, -np.ones(64), TimeGrid(1.0, 4))


def test_absurd_step_raises_with_diagnostics(rfl64):
    with pytest.raises(NewtonFailure) as info:
        implicit_step(rfl64, SQ, bump(rfl64.x), 1e300)
    assert len(info.value.diagnostics["attempts"]) == 5


def test_weighted_mass_identity_per_step(rfl64):
    # h sum (u_k - u_{k-1}) phi = -h_t lambda1 h sum F(u_k) phi, by symmetry of A
    tr = run_mild(rfl64, SQ, bump(rfl64.x), TimeGrid(1.0, 16))
    w = weighted_l1(tr.states, rfl64)
    flux = rfl64.lambda1 * weighted_l1(SQ(tr.states[1:]), rfl64) * (1.0 / 16)
    assert np.allclose(np.diff(w), -flux, rtol=1e-8, atol=1e-14)


def test_snapshots_exact_and_interpolated(rfl64):
    tr = run_mild(rfl64, SQ, bump(rfl64.x), TimeGrid(1.0, 4), snapshot_times=[0.25, 0.3, 1.0])
    assert list(tr.times) == [0.0, 0.25, 0.3, 1.0]
    assert list(tr.exact) == [True, True, False, True]
    assert tr.interp_error[2] > 0
    with pytest.raises(ValueError):
        run_mild(rfl64, SQ, bump(rfl64.x), TimeGrid(1.0, 4), snapshot_times=[2.0])


def test_minimal_ladder_is_monotone(rfl64):
    u0 = 3 * bump(rfl64.x)
    trajs = run_minimal(rfl64, SQ, u0, TimeGrid(0.5, 8), [0.5, 1.0, 2.0, 3.0])
    for lo, hi in zip(trajs, trajs[1:]):
        assert np.all(lo.states <= hi.states + 1e-12)
    with pytest.raises(ValueError):
        run_minimal(rfl64, SQ, u0, TimeGrid(0.5, 8), [2.0, 1.0])


def test_ladders_agree_once_saturated(rfl64):
    u0 = bump(rfl64.x)
    out = compare_ladders(rfl64, SQ, u0, TimeGrid(0.5, 8), [0.5, 1.0], [0.25, 2.0])
    assert out["saturated"] and out["sup_gap"] < 1e-12


def test_delta_problem_shift():
    H = DeltaProblem(0.1, SQ)
    assert H(0.0) == pytest.approx(0.0)
    assert H(0.2) == pytest.approx(0.3**2 - 0.1**2)
    assert H.deriv(0.0) == pytest.approx(0.2)


def test_run_delta_stays_above_delta(rfl64):
    tr = run_delta(rfl64, SQ, bump(rfl64.x), 0.01, TimeGrid(0.5, 8))
    assert tr.states.min() >= 0.01 - 1e-12
    assert tr.meta["positivity_margin"] >= -1e-12


def test_delta_ladder_bracket(rfl64):
    _, rep = delta_ladder(rfl64, SQ, bump(rfl64.x), [0.1, 0.01], TimeGrid(0.5, 16))
    assert rep.bracket_ratio <= 1 + 1e-6
    assert rep.order_violations == 0 and rep.above_mild_violations == 0


def test_lp_nonexpansion_constant_state():
    tr = Trajectory(np.array([0.0, 1.0]), np.ones((2, 5)))
    assert lp_nonexpansion(tr, 0.1) == {"1": 1.0, "2": 1.0, "inf": 1.0}


@pytest.mark.parametrize("kind,s", [("classical", 1.0), ("rfl", 0.25), ("sfl", 0.25)])
def test_contraction_all_operators(kind, s):
    op = assemble(OperatorSpec(kind, s, Grid(-1, 1, 48)))
    u0 = bump(op.x)
    rep = contraction_audit(op, SQ, u0, u0 + 0.5 * (np.abs(op.x) < 0.5), TimeGrid(0.5, 8))
    assert rep.ratio <= 1 + 1e-8 and rep.ordered and rep.order_violations == 0
    assert max(rep.lp_ratios["u"].values()) <= 1 + 1e-9


def test_contraction_degenerate_pair(rfl64):
    u0 = bump(rfl64.x)
    rep = contraction_audit(rfl64, SQ, u0, u0, TimeGrid(0.2, 2))
    assert rep.degenerate and np.isnan(rep.ratio)


profile = st.lists(st.floats(0.0, 2.0), min_size=8, max_size=8)


@given(profile, profile, st.sampled_from([2.0, 3.0]))
def test_comparison_and_l1_contraction(a, b, m):
    op = assemble(OperatorSpec("rfl", 0.25, Grid(-1, 1, 24)))
    u0 = np.interp(op.x, np.linspace(-1, 1, 8), a)
    v0 = u0 + np.interp(op.x, np.linspace(-1, 1, 8), b)
    F = NonlinearitySpec.power(m)
    tg = TimeGrid(0.2, 4)
    tu, tv = run_mild(op, F, u0, tg), run_mild(op, F, v0, tg)
    assert np.all(tu.states <= tv.states + 1e-9)
    d0 = np.abs(u0 - v0).sum()
    d = np.abs(tu.states - tv.states).sum(axis=1)
    assert np.all(d <= d0 * (1 + 1e-8) + 1e-12)
    assert tu.states.min() >= 0


@given(st.floats(0.1, 5.0))
def test_sup_norm_nonincreasing(amp):
    op = assemble(OperatorSpec("sfl", 0.25, Grid(-1, 1, 24)))
    tr = run_mild(op, SQ, amp * bump(op.x), TimeGrid(1.0, 8))
    sup = tr.states.max(axis=1)
    assert np.all(np.diff(sup) <= 1e-12 * amp)
