"""Speeds of coming down from infinity.

``v_t`` solves ``t = T(v) = int_v^inf dq / Psi(q)``; ``v*_t`` does the same
with ``Psi*``; ``w_t = 2 / (c t)`` is their common leading behaviour.

``T`` is tabulated once per speed function on panels of a logarithmic
variable ``s`` with ``q = q_lo + exp(s)`` (``q_lo = 1`` for ``v``, 0 for
``v*``), so the log singularity of ``T`` at ``q_lo`` and the ``2/(cq)`` decay
at infinity are both smooth in ``s``.  Above a cut-off ``M`` the integrand is
replaced by its Kingman part, whose integral is analytic; ``M`` is chosen so
that the neglected relative contribution of ``Lambda_1`` is below the
tolerance.  A root query reads the bracketing panel off the table and
finishes with Brent's method inside it.
"""

from __future__ import annotations

import enum
import math
import threading

import numpy as np
from scipy import optimize

from .errors import ConvergenceFailure, DomainError
from .rates import RateFunctional, psi_star_kernel
from .measure import _gauss_legendre

PANEL_WIDTH = 0.5
PANEL_ORDER = 12
#: smallest log(q - q_lo) the table may extend down to
S_FLOOR = -30.0
M_MIN = 1e8


class Variant(str, enum.Enum):
    V = "v"
    V_STAR = "v_star"
    W = "w"


class SpeedFunction:
    """Speed function ``t -> v_t`` of one of the three variants."""

    def __init__(self, rf: RateFunctional, variant=Variant.V, tolerance: float = 1e-10):
        self.rf = rf
        self.c = rf.c
        self.variant = Variant(variant)
        self.tolerance = tolerance
        self.q_lo = 0.0 if self.variant is Variant.V_STAR else 1.0
        self._lock = threading.RLock()
        self._memo: dict[float, float] = {}
        self._edges = None  # ascending s edges
        self._T = None  # T at edges
        self._M = None
        self._sibling = None

    def __repr__(self):
        return f"SpeedFunction({self.rf.measure!r}, {self.variant.value})"

    # -- integrand ------------------------------------------------------------

    def _psi_from_s(self, s):
        """Psi (or Psi*) at q = q_lo + exp(s), keeping q - q_lo exact."""
        d = np.exp(s)
        if self.variant is Variant.V_STAR:
            return self.rf.psi_star_many(d)
        return self.rf.psi_many(1.0 + d, qm1=d)

    def _integrand(self, s):
        return np.exp(s) / self._psi_from_s(s)

    def _panel_integrals(self, lo, hi):
        """GL integrals of the integrand over panels [lo[i], hi[i]]."""
        lo, hi = np.atleast_1d(lo), np.atleast_1d(hi)
        x, w = _gauss_legendre(PANEL_ORDER)
        nodes = lo[:, None] + (hi - lo)[:, None] * x[None, :]
        vals = self._integrand(nodes.ravel()).reshape(nodes.shape)
        return (vals @ w) * (hi - lo)

    def _lambda1_ratio(self, M):
        """Relative size of the Lambda_1 part of the rate at q = M."""
        if self.rf.measure.is_pure_kingman:
            return 0.0
        if self.variant is Variant.V_STAR:
            extra = self.rf._lambda1_part(psi_star_kernel, np.array([M]))[0]
            return extra / (self.c * M * M / 2.0)
        extra = self.rf.psi_many(np.array([M]))[0] - self.c * M * (M - 1.0) / 2.0
        return extra / (self.c * M * (M - 1.0) / 2.0)

    def _tail(self, M):
        if self.variant is Variant.V_STAR:
            return 2.0 / (self.c * M)
        return -2.0 / self.c * math.log1p(-1.0 / M)

    def _choose_M(self, at_least):
        exps = np.arange(math.ceil(math.log10(max(at_least, M_MIN))), 300)
        for e in exps:
            M = 10.0 ** float(e)
            if self._lambda1_ratio(M) < self.tolerance:
                return M
        raise ConvergenceFailure("no tail cut-off meets the tolerance")

    def _build(self, M, s_lo):
        s_hi = math.log(M - self.q_lo)
        n = max(1, math.ceil((s_hi - s_lo) / PANEL_WIDTH))
        edges = s_hi - PANEL_WIDTH * np.arange(n, -1, -1, dtype=float)
        pieces = self._panel_integrals(edges[:-1], edges[1:])
        T = np.empty(n + 1)
        T[-1] = self._tail(M)
        T[:-1] = T[-1] + np.cumsum(pieces[::-1])[::-1]
        self._edges, self._T, self._M = edges, T, M

    def _extend_down(self):
        lo = self._edges[0]
        if lo <= S_FLOOR:
            raise ConvergenceFailure("speed integral table reached its lower floor")
        n = 8
        new = lo - PANEL_WIDTH * np.arange(n, 0, -1, dtype=float)
        allnew = np.append(new, lo)
        pieces = self._panel_integrals(allnew[:-1], allnew[1:])
        Tnew = self._T[0] + np.cumsum(pieces[::-1])[::-1]
        self._edges = np.concatenate([new, self._edges])
        self._T = np.concatenate([Tnew, self._T])

    def _ensure(self, v=None, t=None):
        with self._lock:
            if self._edges is None:
                self._build(self._choose_M(1.0), -3.0)
            if v is not None:
                while v > self._M / 100.0:
                    self._build(self._choose_M(self._M * 1e3), self._edges[0])
                while math.log(max(v - self.q_lo, 1e-300)) < self._edges[0]:
                    self._extend_down()
            if t is not None:
                while t < self._T[-1] * 1e2:
                    self._build(self._choose_M(self._M * 1e3), self._edges[0])
                while t > self._T[0]:
                    self._extend_down()

    # -- public ----------------------------------------------------------------

    def speed_integral(self, v: float) -> float:
        """``T(v) = int_v^inf dq / Psi(q)`` (or with ``Psi*``)."""
        if self.variant is Variant.W:
            return 2.0 / (self.c * v)
        if v <= self.q_lo:
            raise DomainError(f"speed integral needs v > {self.q_lo}")
        self._ensure(v=v)
        s = math.log(v - self.q_lo)
        j = int(np.searchsorted(self._edges, s, side="right"))
        j = min(max(j, 1), len(self._edges) - 1)
        return float(self._T[j] + self._panel_integrals(np.array([s]), self._edges[j : j + 1])[0])

    def solve_v(self, t: float) -> float:
        if not (t > 0):
            raise DomainError(f"speed needs t > 0, got {t!r}")
        if self.variant is Variant.W:
            return self.w_speed(t)
        t = float(t)
        with self._lock:
            hit = self._memo.get(t)
        if hit is not None:
            return hit
        self._ensure(t=t)
        T, edges = self._T, self._edges
        # T is decreasing along ascending edges
        j = int(np.searchsorted(-T, -t, side="left"))
        j = min(max(j, 1), len(edges) - 1)
        top, T_top = edges[j], T[j]

        def excess(s):
            if s >= top:
                return T_top - t
            return T_top + self._panel_integrals(np.array([s]), np.array([top]))[0] - t

        try:
            s = optimize.brentq(excess, edges[j - 1], top, xtol=1e-15, rtol=1e-15, maxiter=200)
        except ValueError as exc:
            raise ConvergenceFailure(f"no bracket for t={t!r}: {exc}") from exc
        if abs(excess(s)) > self.tolerance * t:
            raise ConvergenceFailure(f"tolerance not reached for t={t!r}")
        v = self.q_lo + math.exp(s)
        with self._lock:
            self._memo[t] = v
        return v

    __call__ = solve_v

    def many(self, ts) -> np.ndarray:
        return np.array([self.solve_v(float(t)) for t in np.ravel(ts)]).reshape(np.shape(ts))

    def w_speed(self, t: float) -> float:
        if not (t > 0):
            raise DomainError(f"speed needs t > 0, got {t!r}")
        return 2.0 / (self.c * t)

    def drift_ratio(self, t: float) -> float:
        """``((c t / 2) v_t - 1) / sqrt(t)``, whose limit at 0 is the drift
        constant ``-(2 sqrt 2)/(3 sqrt c) (1-c) A``."""
        v = self._v_variant().solve_v(t)
        return (self.c * t / 2.0 * v - 1.0) / math.sqrt(t)

    def v_vstar_gap(self, t: float) -> float:
        """``v_t / v*_t - 1``."""
        return self._v_variant().solve_v(t) / self._v_star_variant().solve_v(t) - 1.0

    def _v_variant(self):
        return self if self.variant is Variant.V else self._other(Variant.V)

    def _v_star_variant(self):
        return self if self.variant is Variant.V_STAR else self._other(Variant.V_STAR)

    def _other(self, variant):
        with self._lock:
            if self._sibling is None:
                self._sibling = {}
            if variant not in self._sibling:
                self._sibling[variant] = SpeedFunction(self.rf, variant, self.tolerance)
            return self._sibling[variant]


def drift_constant(c: float, A: float) -> float:
    """Limit of the w-normalised fluctuations at t = 1 when Psi_1(q)/q^{3/2} -> A."""
    return -2.0 * math.sqrt(2.0) / (3.0 * math.sqrt(c)) * (1.0 - c) * A


def A_from_ratio(c: float, ratio: float) -> float:
    """Invert :func:`drift_constant`."""
    if c == 1.0:
        return 0.0
    return -ratio * 3.0 * math.sqrt(c) / (2.0 * math.sqrt(2.0) * (1.0 - c))
