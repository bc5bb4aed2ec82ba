"""Two-power nonlinearities F(r) = sum_i a_i r^{p_i} and their derived quantities.

Every spec is a finite sum of powers with exponents > 1, extended oddly to
negative arguments.  Besides evaluation the module provides the inverse F^{-1},
the Legendre transform F*, the envelope exponents (m0, m1) and the sampled
ratio F F'' / F'^2 that controls the structural condition on F.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Callable, Iterable, Sequence

import numpy as np

logger = logging.getLogger(__name__)

RTOL = 1e-12
ATOL = 1e-300
_MAX_ITER = 400


class NonlinearityError(ValueError):
    """Invalid nonlinearity spec or an internally inconsistent envelope audit."""


def _solve_increasing(
    g: Callable[[np.ndarray], np.ndarray],
    dg: Callable[[np.ndarray], np.ndarray],
    target: np.ndarray,
    rtol: float = RTOL,
    atol: float = ATOL,
) -> np.ndarray:
    """Solve g(r) = target for r >= 0, g increasing with g(0) = 0.

    Bracket [0, hi] with hi doubled until g(hi) >= target, then Newton steps
    that fall back to bisection whenever they leave the bracket.
    """
    target = np.asarray(target, dtype=float)
    out = np.zeros_like(target)
    live = target > 0
    if not live.any():
        return out
    v = target[live]
    lo = np.zeros_like(v)
    hi = np.ones_like(v)
    for _ in range(2100):
        short = g(hi) < v
        if not short.any():
            break
        lo = np.where(short, hi, lo)
        hi = np.where(short, 2.0 * hi, hi)
    else:  # pragma: no cover - only for targets beyond float range
        raise NonlinearityError("could not bracket the root")
    # shrink the lower bracket geometrically for tiny targets
    for _ in range(2100):
        big = (g(hi / 2.0) >= v) & (lo == 0.0) & (hi > 1e-300)
        if not big.any():
            break
        hi = np.where(big, hi / 2.0, hi)
    r = 0.5 * (lo + hi)
    scale = np.maximum(v, atol)
    for _ in range(_MAX_ITER):
        gr = g(r)
        res = gr - v
        done = (np.abs(res) <= rtol * scale) | (hi - lo <= 4e-16 * hi)
        if done.all():
            break
        lo = np.where(res < 0, r, lo)
        hi = np.where(res > 0, r, hi)
        slope = dg(r)
        with np.errstate(divide="ignore", invalid="ignore"):
            newton = r - res / slope
        ok = np.isfinite(newton) & (newton > lo) & (newton < hi)
        r = np.where(done, r, np.where(ok, newton, 0.5 * (lo + hi)))
    # one polishing Newton step, kept only where it does not increase the residual
    with np.errstate(divide="ignore", invalid="ignore"):
        polished = r - (g(r) - v) / dg(r)
    better = np.isfinite(polished) & (np.abs(g(polished) - v) <= np.abs(g(r) - v))
    r = np.where(better, polished, r)
    out[live] = r
    return out


@dataclass(frozen=True)
class NonlinearitySpec:
    """F(r) = sum a_i sign(r)|r|^{p_i}; coefficients > 0, exponents > 1.

    Terms are stored sorted by exponent.  Instances are immutable and the
    evaluation methods broadcast over numpy arrays.
    """

    terms: tuple[tuple[float, float], ...]

    def __post_init__(self) -> None:
        terms = tuple(sorted(((float(a), float(p)) for a, p in self.terms), key=lambda t: (t[1], t[0])))
        if not terms:
            raise NonlinearityError("a nonlinearity needs at least one term")
        for a, p in terms:
            if not (np.isfinite(a) and a > 0):
                raise NonlinearityError(f"coefficient must be > 0, got {a}")
            if not (np.isfinite(p) and p > 1):
                raise NonlinearityError(f"exponent must be > 1, got {p}")
        object.__setattr__(self, "terms", terms)

    @classmethod
    def power(cls, m: float, coeff: float = 1.0) -> "NonlinearitySpec":
        return cls(((coeff, m),))

    @classmethod
    def from_config(cls, items: Iterable[dict]) -> "NonlinearitySpec":
        items = list(items)
        for item in items:
            extra = set(item) - {"coeff", "exponent"}
            if extra:
                raise NonlinearityError(f"unknown nonlinearity keys: {sorted(extra)}")
        return cls(tuple((item["coeff"], item["exponent"]) for item in items))

    def to_config(self) -> list[dict]:
        return [{"coeff": a, "exponent": p} for a, p in self.terms]

    @property
    def m0(self) -> float:
        return self.terms[0][1]

    @property
    def m1(self) -> float:
        return self.terms[-1][1]

    @property
    def mu0(self) -> float:
        return (self.m0 - 1.0) / self.m0

    @property
    def mu1(self) -> float:
        return (self.m1 - 1.0) / self.m1

    def __call__(self, r):
        r = np.asarray(r, dtype=float)
        ar = np.abs(r)
        val = sum(a * ar**p for a, p in self.terms)
        return np.sign(r) * val

    def deriv(self, r):
        ar = np.abs(np.asarray(r, dtype=float))
        return sum(a * p * ar ** (p - 1.0) for a, p in self.terms)

    def second(self, r):
        r = np.asarray(r, dtype=float)
        ar = np.abs(r)
        with np.errstate(divide="ignore"):
            val = sum(a * p * (p - 1.0) * ar ** (p - 2.0) for a, p in self.terms)
        return np.sign(r) * val

    def inverse(self, v):
        """F^{-1}(v) for v >= 0."""
        v = np.asarray(v, dtype=float)
        if np.any(v < 0) or np.any(np.isnan(v)):
            raise NonlinearityError("inverse is defined for v >= 0 only")
        out = _solve_increasing(self, self.deriv, np.atleast_1d(v))
        return out.reshape(v.shape) if v.shape else float(out[0])

    def deriv_inverse(self, z):
        """(F')^{-1}(z) for z >= 0."""
        z = np.asarray(z, dtype=float)
        if np.any(z < 0):
            raise NonlinearityError("(F')^{-1} is defined for z >= 0 only")
        out = _solve_increasing(self.deriv, self.second, np.atleast_1d(z))
        return out.reshape(z.shape) if z.shape else float(out[0])

    def legendre_at(self, r):
        """F*(F'(r)) = r F'(r) - F(r), written without cancellation."""
        ar = np.abs(np.asarray(r, dtype=float))
        return sum(a * (p - 1.0) * ar**p for a, p in self.terms)

    def legendre(self, z):
        """F*(z) = sup_{r >= 0} (r z - F(r))."""
        r = self.deriv_inverse(z)
        return self.legendre_at(r)

    def legendre_inverse(self, w):
        """The z >= 0 with F*(z) = w; F* is increasing on [0, inf)."""
        w = np.asarray(w, dtype=float)
        if np.any(w < 0):
            raise NonlinearityError("F* takes nonnegative values only")
        rdF = lambda r: np.abs(r) * self.second(np.abs(r))  # d/dr (r F' - F)
        r = _solve_increasing(self.legendre_at, rdF, np.atleast_1d(w))
        z = self.deriv(r)
        return z.reshape(w.shape) if w.shape else float(z[0])

    def envelope(self, grid: Sequence[float] | None = None) -> tuple[float, float]:
        """(m0, m1), audited against the two-power comparison on grid pairs.

        For r0 <= r:  (r/r0)^m0 <= F(r)/F(r0) <= (r/r0)^m1, and for r <= r0 the
        reversed comparison with constants (m0/m1)^m1 and (m1/m0)^m0.
        """
        m0, m1 = self.m0, self.m1
        worst = envelope_margins(self, grid)
        if worst < -1e-12:
            raise NonlinearityError(f"envelope audit failed, worst margin {worst:.3e}")
        return m0, m1


def envelope_margins(F: NonlinearitySpec, grid: Sequence[float] | None = None) -> float:
    """Worst relative margin of the two-power comparison over all grid pairs."""
    r = np.logspace(-6, 6, 49) if grid is None else np.asarray(grid, dtype=float)
    m0, m1 = F.m0, F.m1
    k_lo = (m0 / m1) ** m1
    k_hi = (m1 / m0) ** m0
    R, R0 = np.meshgrid(r, r, indexing="ij")
    with np.errstate(over="ignore", under="ignore"):
        q = F(R) / F(R0)
        lam = R / R0
        up = R >= R0
        lower = np.where(up, lam**m0, k_lo * lam**m1)
        upper = np.where(up, lam**m1, k_hi * lam**m0)
        margin = np.minimum(q / lower - 1.0, 1.0 - q / upper)
    return float(np.nanmin(margin))


@dataclass(frozen=True)
class N2Report:
    ratio_min: float
    ratio_max: float
    mu0: float
    mu1: float
    argmin: float
    argmax: float
    holds: bool

    def as_dict(self) -> dict:
        return dict(self.__dict__)


def check_n2(F: NonlinearitySpec, grid: Sequence[float], tol: float = 1e-12) -> N2Report:
    """Sample F F'' / F'^2 on a positive grid and compare with [mu0, mu1]."""
    r = np.asarray(grid, dtype=float)
    if r.size == 0 or np.any(r <= 0):
        raise NonlinearityError("grid must be non-empty and strictly positive")
    ratio = F(r) * F.second(r) / F.deriv(r) ** 2
    i_lo, i_hi = int(np.argmin(ratio)), int(np.argmax(ratio))
    lo, hi = float(ratio[i_lo]), float(ratio[i_hi])
    holds = lo >= F.mu0 - tol and hi <= F.mu1 + tol
    if not holds:
        logger.info("F F''/F'^2 leaves [%.4g, %.4g]: range [%.4g, %.4g]", F.mu0, F.mu1, lo, hi)
    return N2Report(lo, hi, F.mu0, F.mu1, float(r[i_lo]), float(r[i_hi]), holds)


def product_constant(F: NonlinearitySpec, grid: Sequence[float] | None = None) -> float:
    """Smallest C with F(ab) <= C F(a) F(b) over all grid pairs."""
    r = np.logspace(-4, 4, 81) if grid is None else np.asarray(grid, dtype=float)
    a, b = np.meshgrid(r, r, indexing="ij")
    with np.errstate(over="ignore", under="ignore"):
        q = F(a * b) / (F(a) * F(b))
    return float(np.nanmax(q[np.isfinite(q)]))
