"""Implicit Euler (Crandall-Liggett) stepping for u_t + A F(u) = 0.

Each step solves u + h_t A F(u) = u_prev by Newton's method on u with an
Armijo line search.  The Jacobian I + h_t A diag(F'(u)) stays nonsingular at
u = 0 thanks to the identity block.
"""

from __future__ import annotations

import logging
from concurrent.futures import Executor
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy import linalg

from .operator import DiscreteOperator

logger = logging.getLogger(__name__)

NEWTON_RTOL = 1e-10
MAX_NEWTON = 50
MAX_HALVINGS = 4
NEG_TOL = 1e-12


class NewtonFailure(RuntimeError):
    def __init__(self, message: str, diagnostics: dict):
        super().__init__(message)
        self.diagnostics = diagnostics


class AuditError(RuntimeError):
    pass


@dataclass(frozen=True)
class TimeGrid:
    T: float
    n_steps: int

    def __post_init__(self) -> None:
        if not (np.isfinite(self.T) and self.T > 0):
            raise ValueError(f"final time must be positive, got {self.T}")
        if int(self.n_steps) != self.n_steps or self.n_steps < 1:
            raise ValueError(f"need at least one time step, got {self.n_steps}")

    @property
    def h_t(self) -> float:
        return self.T / self.n_steps

    @property
    def times(self) -> np.ndarray:
        return self.T * np.arange(self.n_steps + 1) / self.n_steps


@dataclass
class Trajectory:
    """Snapshots u(t_k, .) on the operator grid.

    ``exact[k]`` is False when the snapshot was linearly interpolated between
    two step times; ``interp_error[k]`` then bounds the sup-norm gap between
    the neighbouring step states.
    """

    times: np.ndarray
    states: np.ndarray
    meta: dict = field(default_factory=dict)
    exact: np.ndarray | None = None
    interp_error: np.ndarray | None = None

    def __post_init__(self) -> None:
        self.times = np.asarray(self.times, dtype=float)
        self.states = np.atleast_2d(np.asarray(self.states, dtype=float))
        k = self.times.size
        if self.states.shape[0] != k:
            raise ValueError("times and states disagree in length")
        if k > 1 and np.any(np.diff(self.times) <= 0):
            raise ValueError("snapshot times must be strictly increasing")
        if self.exact is None:
            self.exact = np.ones(k, dtype=bool)
        if self.interp_error is None:
            self.interp_error = np.zeros(k)

    def __len__(self) -> int:
        return self.times.size

    @property
    def u0(self) -> np.ndarray:
        return self.states[0]

    def at(self, t: float) -> np.ndarray:
        k = int(np.argmin(np.abs(self.times - t)))
        return self.states[k]

    def subset(self, mask) -> "Trajectory":
        mask = np.asarray(mask)
        return Trajectory(
            self.times[mask], self.states[mask], dict(self.meta),
            self.exact[mask], self.interp_error[mask],
        )


@dataclass(frozen=True)
class DeltaProblem:
    """Shifted nonlinearity H(v) = F(v + delta) - F(delta)."""

    delta: float
    F: object

    def __post_init__(self) -> None:
        if not self.delta > 0:
            raise ValueError(f"delta must be positive, got {self.delta}")

    def __call__(self, v):
        return self.F(np.asarray(v) + self.delta) - self.F(self.delta)

    def deriv(self, v):
        return self.F.deriv(np.asarray(v) + self.delta)


def _residual(op: DiscreteOperator, F, u, u_prev, h_t):
    return u + h_t * (op.A @ F(u)) - u_prev


def _tolerance(op: DiscreteOperator, F, u, u_prev, h_t) -> float:
    # round-off floor of evaluating the residual in double precision
    eps = np.finfo(float).eps
    floor = 16 * eps * (np.max(np.abs(u)) + h_t * np.max(np.abs(op.A) @ np.abs(F(u))))
    return max(NEWTON_RTOL * (1.0 + np.max(np.abs(u_prev))), floor)


def _newton(op: DiscreteOperator, F, u_prev: np.ndarray, h_t: float):
    u = u_prev.copy()
    n = u.size
    G = _residual(op, F, u, u_prev, h_t)
    res = float(np.max(np.abs(G)))
    polished = False
    for it in range(1, MAX_NEWTON + 1):
        tol = _tolerance(op, F, u, u_prev, h_t)
        if res <= tol and polished:
            return u, it - 1, res, True
        J = h_t * op.A * F.deriv(u)[None, :]
        J[np.diag_indices(n)] += 1.0
        try:
            step = linalg.solve(J, G, check_finite=False)
        except linalg.LinAlgError:
            return u, it, res, False
        alpha = 1.0
        while alpha > 1e-6:
            trial = u - alpha * step
            Gt = _residual(op, F, trial, u_prev, h_t)
            rt = float(np.max(np.abs(Gt)))
            if rt <= (1.0 - 1e-4 * alpha) * res or (res <= tol and rt <= res):
                break
            alpha *= 0.5
        else:
            # no decrease possible: converged only if already at the floor
            return u, it, res, res <= tol
        # after reaching the tolerance take one extra step to clear stale digits
        polished = res <= tol
        u, G, res = trial, Gt, rt
    return u, MAX_NEWTON, res, res <= _tolerance(op, F, u, u_prev, h_t)


def implicit_step(op: DiscreteOperator, F, u_prev, h_t: float, stats: dict | None = None) -> np.ndarray:
    """One implicit Euler step; falls back to up to four rounds of step halving."""
    u_prev = np.asarray(u_prev, dtype=float)
    if u_prev.shape != (op.grid.n,):
        raise ValueError(f"state has shape {u_prev.shape}, grid has {op.grid.n} points")
    if u_prev.min() < -NEG_TOL * max(1.0, np.max(np.abs(u_prev))):
        raise ValueError("implicit_step needs a nonnegative state")
    if not h_t > 0:
        raise ValueError("time step must be positive")
    u_prev = np.maximum(u_prev, 0.0)
    stats = stats if stats is not None else {}
    if not u_prev.any():
        stats["iterations"] = stats.get("iterations", 0)
        return np.zeros_like(u_prev)
    history = []
    for level in range(MAX_HALVINGS + 1):
        sub = 2**level
        u = u_prev
        ok = True
        iters = 0
        for _ in range(sub):
            u_new, it, res, ok = _newton(op, F, u, h_t / sub)
            iters += it
            if not ok:
                history.append({"substeps": sub, "residual": res, "iterations": iters})
                break
            u = u_new
        if ok:
            neg = np.minimum(u, 0.0)
            stats["iterations"] = stats.get("iterations", 0) + iters
            stats["substeps"] = max(stats.get("substeps", 1), sub)
            stats["clamped"] = stats.get("clamped", 0.0) + float(-neg.sum() * op.h)
            stats["residual"] = max(stats.get("residual", 0.0), res)
            return np.maximum(u, 0.0)
        logger.debug("Newton failed at %d substeps, residual %.3e", sub, res)
    raise NewtonFailure(
        f"Newton did not converge after {MAX_HALVINGS} step halvings (h_t = {h_t:g})",
        {"h_t": h_t, "attempts": history, "sup_u_prev": float(np.max(u_prev))},
    )


def _config_of(F) -> object:
    if hasattr(F, "to_config"):
        return F.to_config()
    if isinstance(F, DeltaProblem):
        return {"delta": F.delta, "F": _config_of(F.F)}
    return repr(F)


def run_mild(
    op: DiscreteOperator,
    F,
    u0,
    tg: TimeGrid,
    snapshot_times: Sequence[float] | None = None,
    datum: object = None,
) -> Trajectory:
    """March from u0 to T; snapshots default to every step time."""
    u0 = np.asarray(u0, dtype=float)
    if u0.shape != (op.grid.n,):
        raise ValueError(f"datum has shape {u0.shape}, grid has {op.grid.n} points")
    if u0.min() < -NEG_TOL * max(1.0, np.max(np.abs(u0))):
        raise ValueError("initial datum must be nonnegative")
    u0 = np.maximum(u0, 0.0)
    step_times = tg.times
    if snapshot_times is None:
        wanted = step_times
    else:
        wanted = np.unique(np.concatenate([[0.0], np.asarray(snapshot_times, dtype=float)]))
        if wanted[-1] > tg.T * (1 + 1e-12) or wanted[0] < 0:
            raise ValueError("snapshot times must lie in [0, T]")
    stats: dict = {}
    iterations = []
    meta = {
        "operator": op.spec.to_config(),
        "nonlinearity": _config_of(F),
        "datum": datum,
        "time_grid": {"T": tg.T, "n_steps": tg.n_steps},
    }
    mass0 = float(op.h * u0.sum())
    if not u0.any():
        meta.update(newton_iterations=[0] * tg.n_steps, clamped_mass=0.0, zero_datum=True,
                    max_residual=0.0, max_substeps=1)
        return Trajectory(wanted, np.zeros((wanted.size, u0.size)), meta)

    states = []
    exact = []
    interp = []
    u = u0
    j = 0
    # step times are k T / n; a wanted time is exact when it hits one to 1e-12
    for k in range(tg.n_steps + 1):
        if k > 0:
            before = stats.get("iterations", 0)
            u_next = implicit_step(op, F, u, tg.h_t, stats)
            iterations.append(stats["iterations"] - before)
        else:
            u_next = u
        tk = step_times[k]
        while j < wanted.size and wanted[j] <= tk * (1 + 1e-12) + 1e-300:
            tw = wanted[j]
            if abs(tw - tk) <= 1e-12 * max(tk, 1.0):
                states.append(u_next.copy())
                exact.append(True)
                interp.append(0.0)
            else:
                tprev = step_times[k - 1]
                theta = (tw - tprev) / (tk - tprev)
                states.append((1 - theta) * u + theta * u_next)
                exact.append(False)
                interp.append(float(np.max(np.abs(u_next - u))))
            j += 1
        u = u_next
    clamped = float(stats.get("clamped", 0.0))
    meta.update(
        newton_iterations=iterations,
        clamped_mass=clamped,
        clamped_mass_ok=bool(clamped <= 1e-10 * max(mass0, 1e-300)),
        max_residual=float(stats.get("residual", 0.0)),
        max_substeps=int(stats.get("substeps", 1)),
        zero_datum=False,
    )
    return Trajectory(wanted, np.array(states), meta, np.array(exact), np.array(interp))


def _map(executor: Executor | None, fn, items):
    if executor is None:
        return [fn(x) for x in items]
    return list(executor.map(fn, items))


def monotone_violation(trajs: Sequence[Trajectory]) -> float:
    """Largest amount by which a later trajectory drops below an earlier one."""
    worst = 0.0
    for lo, hi in zip(trajs, trajs[1:]):
        worst = max(worst, float(np.max(lo.states - hi.states)))
    return worst


def run_minimal(
    op: DiscreteOperator,
    F,
    u0,
    tg: TimeGrid,
    cutoffs: Sequence[float],
    snapshot_times: Sequence[float] | None = None,
    executor: Executor | None = None,
    tol: float = 1e-9,
) -> list[Trajectory]:
    """Solutions from the truncated data min(u0, k), checked to increase with k."""
    cutoffs = [float(c) for c in cutoffs]
    if any(c <= 0 for c in cutoffs) or any(b <= a for a, b in zip(cutoffs, cutoffs[1:])):
        raise ValueError(f"cutoff levels must be positive and increasing, got {cutoffs}")
    u0 = np.asarray(u0, dtype=float)
    trajs = _map(
        executor,
        lambda k: run_mild(op, F, np.minimum(u0, k), tg, snapshot_times, datum={"cutoff": k}),
        cutoffs,
    )
    worst = monotone_violation(trajs)
    for tr in trajs:
        tr.meta["ladder_violation"] = worst
    if worst > tol:
        raise AuditError(f"truncation ladder not monotone: violation {worst:.3e}")
    return trajs


def compare_ladders(op, F, u0, tg, ladder_a, ladder_b, snapshot_times=None, executor=None) -> dict:
    """Sup distance between the top rungs of two cutoff ladders."""
    ta = run_minimal(op, F, u0, tg, ladder_a, snapshot_times, executor)
    tb = run_minimal(op, F, u0, tg, ladder_b, snapshot_times, executor)
    gap = float(np.max(np.abs(ta[-1].states - tb[-1].states)))
    saturated = max(ladder_a[-1], ladder_b[-1]) >= float(np.max(u0))
    both = min(ladder_a[-1], ladder_b[-1]) >= float(np.max(u0))
    return {"sup_gap": gap, "saturated": bool(both), "any_saturated": bool(saturated)}


def run_delta(op: DiscreteOperator, F, u0, delta: float, tg: TimeGrid,
              snapshot_times: Sequence[float] | None = None) -> Trajectory:
    """Approximate solution u_delta = v + delta, v solving the shifted problem from u0."""
    H = DeltaProblem(float(delta), F)
    tr = run_mild(op, H, u0, tg, snapshot_times, datum={"delta": float(delta)})
    tr.states = tr.states + H.delta
    low = float(np.min(tr.states - H.delta))
    tr.meta["delta"] = H.delta
    tr.meta["positivity_margin"] = low
    return tr


@dataclass(frozen=True)
class DeltaLadderReport:
    deltas: tuple
    bracket_ratio: float
    order_violations: int
    above_mild_violations: int
    positivity_violations: int
    sup_gap_to_mild: tuple

    def as_dict(self) -> dict:
        return dict(self.__dict__)


def delta_ladder(op, F, u0, deltas: Sequence[float], tg: TimeGrid, mild: Trajectory | None = None,
                 executor: Executor | None = None, tol: float = 1e-9) -> tuple[list[Trajectory], DeltaLadderReport]:
    """Run a descending ladder of delta values and check ordering and the weighted-L1 bracket.

    ``bracket_ratio`` is the worst value of ||u_delta - u||_{L1_phi} / (delta ||phi||_{L1}).
    """
    deltas = sorted((float(d) for d in deltas), reverse=True)
    mild = mild if mild is not None else run_mild(op, F, u0, tg)
    runs = _map(executor, lambda d: run_delta(op, F, u0, d, tg), deltas)
    phi_l1 = op.h * op.phi1.sum()
    ratio = 0.0
    below = 0
    pos = 0
    gaps = []
    for d, tr in zip(deltas, runs):
        diff = tr.states - mild.states
        ratio = max(ratio, float(np.max(op.h * np.abs(diff) @ op.phi1)) / (d * phi_l1))
        below += int(np.sum(diff < -tol))
        pos += int(np.sum(tr.states < d - tol))
        gaps.append(float(np.max(np.abs(diff[1:])) if len(tr) > 1 else 0.0))
    order = sum(int(np.sum(a.states - b.states < -tol)) for a, b in zip(runs, runs[1:]))
    report = DeltaLadderReport(tuple(deltas), ratio, order, below, pos, tuple(gaps))
    return runs, report


@dataclass(frozen=True)
class ContractionReport:
    ratio: float
    degenerate: bool
    ordered: bool
    order_violations: int
    worst_order_gap: float
    lp_ratios: dict

    def as_dict(self) -> dict:
        return dict(self.__dict__)


def lp_nonexpansion(traj: Trajectory, h: float) -> dict:
    """max_t ||u(t)||_p / ||u0||_p for p in 1, 2, inf."""
    out = {}
    u0 = traj.states[0]
    norms = {
        "1": lambda v: h * np.abs(v).sum(axis=-1),
        "2": lambda v: np.sqrt(h * (v**2).sum(axis=-1)),
        "inf": lambda v: np.abs(v).max(axis=-1),
    }
    for p, nrm in norms.items():
        base = float(nrm(u0))
        out[p] = float(np.max(nrm(traj.states)) / base) if base > 0 else 0.0
    return out


def contraction_audit(op, F, u0, v0, tg: TimeGrid, tol: float = 1e-9, executor=None) -> ContractionReport:
    u0 = np.asarray(u0, dtype=float)
    v0 = np.asarray(v0, dtype=float)
    tu, tv = _map(executor, lambda d: run_mild(op, F, d, tg), [u0, v0])
    d0 = op.h * np.abs(u0 - v0).sum()
    dist = op.h * np.abs(tu.states - tv.states).sum(axis=1)
    degenerate = d0 == 0
    ratio = float("nan") if degenerate else float(np.max(dist) / d0)
    ordered = bool(np.all(u0 <= v0))
    violations = 0
    worst = 0.0
    if ordered:
        gap = tu.states - tv.states
        violations = int(np.sum(gap > tol))
        worst = float(max(gap.max(), 0.0))
    lp = {"u": lp_nonexpansion(tu, op.h), "v": lp_nonexpansion(tv, op.h)}
    return ContractionReport(ratio, bool(degenerate), ordered, violations, worst, lp)
