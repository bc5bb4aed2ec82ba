"""Least-squares power-law fits."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class FitResult:
    """Slope of a log-log fit with its standard error, index window and r^2."""

    slope: float
    stderr: float
    window: tuple[int, int]
    r2: float
    intercept: float = 0.0

    def as_dict(self) -> dict:
        return {
            "slope": self.slope,
            "stderr": self.stderr,
            "window": list(self.window),
            "r2": self.r2,
            "intercept": self.intercept,
        }


def linear_fit(X: np.ndarray, y: np.ndarray) -> tuple[np.ndarray, np.ndarray, float]:
    """Ordinary least squares y ~ X c; returns coefficients, standard errors and r^2."""
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    coef, *_ = np.linalg.lstsq(X, y, rcond=None)
    resid = y - X @ coef
    dof = max(len(y) - X.shape[1], 1)
    sigma2 = float(resid @ resid) / dof
    cov = sigma2 * np.linalg.pinv(X.T @ X)
    se = np.sqrt(np.maximum(np.diag(cov), 0.0))
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 - float(resid @ resid) / ss_tot if ss_tot > 0 else 1.0
    return coef, se, r2


def loglog_slope(x, y, window: tuple[int, int] | None = None) -> FitResult:
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if np.any(x <= 0) or np.any(y <= 0):
        raise ValueError("log-log fit needs strictly positive data")
    if x.size < 2:
        raise ValueError("need at least two points")
    X = np.column_stack([np.ones_like(x), np.log(x)])
    coef, se, r2 = linear_fit(X, np.log(y))
    win = window if window is not None else (0, x.size - 1)
    return FitResult(float(coef[1]), float(se[1]), win, float(r2), float(coef[0]))


@dataclass(frozen=True)
class BoundaryFit(FitResult):
    """Joint fit over both boundary layers plus the one-sided slopes."""

    left: float = float("nan")
    left_stderr: float = float("nan")
    right: float = float("nan")
    right_stderr: float = float("nan")
    npoints: int = 0

    @property
    def sides_agree(self) -> bool:
        tol = 2.0 * np.hypot(self.left_stderr, self.right_stderr)
        return bool(abs(self.left - self.right) <= max(tol, 1e-12))

    def as_dict(self) -> dict:
        out = super().as_dict()
        out.update(left=self.left, left_stderr=self.left_stderr, right=self.right,
                   right_stderr=self.right_stderr, npoints=self.npoints,
                   sides_agree=self.sides_agree)
        return out


def boundary_fit(values, x, a: float, b: float, h: float,
                 window: tuple[float, float] | None = None,
                 coordinate=None, side: str = "both", min_points: int = 5,
                 correction: float | None = None) -> BoundaryFit:
    """Slope of log(values) against log(distance to the boundary).

    ``window`` = (w_lo, w_hi) keeps points with d in [w_lo L, w_hi L]; the
    default is [2h, 0.1 L].  ``coordinate`` replaces d as the regressor (for
    instance phi1 ** (1/gamma)), while the window is still taken in d.
    ``correction`` = q adds a term c d^q to the log model, absorbing a
    leading smooth factor (1 + c d^q) multiplying the power law.
    """
    values = np.asarray(values, dtype=float)
    x = np.asarray(x, dtype=float)
    L = b - a
    lo, hi = (2.0 * h, 0.1 * L) if window is None else (window[0] * L, window[1] * L)
    dl = x - a
    dr = b - x
    reg = None if coordinate is None else np.asarray(coordinate, dtype=float)
    left = np.flatnonzero((dl >= lo * (1 - 1e-12)) & (dl <= hi * (1 + 1e-12)))
    right = np.flatnonzero((dr >= lo * (1 - 1e-12)) & (dr <= hi * (1 + 1e-12)))
    if side == "left":
        right = right[:0]
    elif side == "right":
        left = left[:0]
    elif side != "both":
        raise ValueError(f"side must be left, right or both, got {side!r}")
    for idx in (left, right):
        if 0 < idx.size < min_points:
            raise ValueError(f"fit window holds {idx.size} points, need at least {min_points}")
    idx = np.concatenate([left, right])
    if idx.size < min_points:
        raise ValueError(f"fit window holds {idx.size} points, need at least {min_points}")
    if np.any(values[idx] <= 0):
        raise ValueError("nonpositive values inside the fit window")

    def regressor(ix, dist):
        return dist[ix] if reg is None else reg[ix]

    def fit(ixs, dists):
        xs = np.concatenate([regressor(ix, dist) for ix, dist in zip(ixs, dists)])
        ys = values[np.concatenate(ixs)]
        if correction is None:
            return loglog_slope(xs, ys)
        ds = np.concatenate([dist[ix] for ix, dist in zip(ixs, dists)])
        X = np.column_stack([np.ones_like(xs), np.log(xs), ds**correction])
        coef, se, r2 = linear_fit(X, np.log(ys))
        return FitResult(float(coef[1]), float(se[1]), (0, 0), float(r2), float(coef[0]))

    joint = fit([left, right], [dl, dr])
    sides = {}
    for name, ix, dist in (("left", left, dl), ("right", right, dr)):
        if ix.size >= (2 if correction is None else 3):
            f = fit([ix], [dist])
            sides[name] = (f.slope, f.stderr)
        else:
            sides[name] = (float("nan"), float("nan"))
    win = (int(idx.min()), int(idx.max()))
    return BoundaryFit(joint.slope, joint.stderr, win, joint.r2, joint.intercept,
                       sides["left"][0], sides["left"][1], sides["right"][0], sides["right"][1],
                       int(idx.size))
