"""Rate functionals Psi, Psi_1, Psi*, collision rates lambda_{b,k}.

With ``Lambda = c delta_0 + (1-c) Lambda_1``::

    Psi(q)  = c q(q-1)/2 + (1-c) Psi_1(q),
    Psi_1(q) = int (q y - 1 + (1-y)^q) / y^2  Lambda_1(dy),
    Psi*(q) = c q^2/2 + (1-c) int (q y - 1 + exp(-q y)) / y^2  Lambda_1(dy),
    lambda_{b,k} = int r^(k-2) (1-r)^(b-k) Lambda(dr).

``Psi(b)`` is the mean rate at which the block count decreases from ``b``.
"""

from __future__ import annotations

import math
import threading
from collections import OrderedDict
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from scipy import special

from .errors import DomainError
from .measure import DrivingMeasure, quadrature_rule

SERIES_CUTOFF = 1e-4
#: rule resolves scales down to ``Y_MIN_FACTOR / q``
Y_MIN_FACTOR = 1e-4
_CHUNK = 1 << 21


def _binom_real(q, j):
    out = np.ones_like(q)
    for i in range(j):
        out = out * (q - i) / (i + 1)
    return out


def psi_kernel(q, y, qm1=None):
    """(q y - 1 + (1-y)^q) / y^2, broadcasting, stable for small q*y and q near 1.

    ``qm1`` optionally carries ``q - 1`` at full precision.
    """
    if qm1 is None:
        qm1 = np.asarray(q, float) - 1.0
    q, y, qm1 = np.broadcast_arrays(
        np.asarray(q, float), np.asarray(y, float), np.asarray(qm1, float)
    )
    x = q * y
    small = x < SERIES_CUTOFF
    out = np.empty(x.shape)
    ys, qs = y[small], q[small]
    out[small] = (
        qs * qm1[small] / 2.0
        - _binom_real(qs, 3) * ys
        + _binom_real(qs, 4) * ys**2
        - _binom_real(qs, 5) * ys**3
    )
    big = ~small
    yb, db = y[big], qm1[big]
    # (1-y)^q - 1 + q y == (1-y) expm1((q-1) log(1-y)) + (q-1) y
    with np.errstate(invalid="ignore", divide="ignore"):
        em = np.expm1(db * np.log1p(-yb))
    em = np.where(yb == 1.0, -1.0, em)
    out[big] = ((1.0 - yb) * em + db * yb) / yb**2
    return out


def psi_star_kernel(q, y):
    """(q y - 1 + exp(-q y)) / y^2, broadcasting, stable for small q*y."""
    q, y = np.broadcast_arrays(np.asarray(q, float), np.asarray(y, float))
    x = q * y
    small = x < SERIES_CUTOFF
    out = np.empty(x.shape)
    xs, qs = x[small], q[small]
    out[small] = qs**2 * (0.5 - xs / 6.0 + xs**2 / 24.0 - xs**3 / 120.0)
    xb, yb = x[~small], y[~small]
    out[~small] = (xb + np.expm1(-xb)) / yb**2
    return out


GAP_SERIES_CUTOFF = 0.05


def _y_plus_log1m(y):
    """y + log(1 - y) without cancellation for small y."""
    out = np.empty_like(y)
    small = y < GAP_SERIES_CUTOFF
    ys = y[small]
    acc = np.zeros_like(ys)
    power = ys * ys
    for k in range(2, 24):
        acc += power / k
        power = power * ys
    out[small] = -acc
    with np.errstate(divide="ignore"):
        out[~small] = y[~small] + np.log1p(-y[~small])
    return out


def psi_gap_kernel(q, y):
    """(exp(-q y) - (1-y)^q) / y^2 >= 0, the integrand of Psi* - Psi."""
    q, y = np.broadcast_arrays(np.asarray(q, float), np.asarray(y, float))
    h = _y_plus_log1m(y.ravel()).reshape(y.shape)
    return -np.exp(-q * y) * np.expm1(q * h) / (y * y)


class AEstimate(NamedTuple):
    value: float
    grid: tuple
    values: tuple
    last_diffs: tuple


@dataclass(frozen=True)
class TransitionRow:
    """Total rates ``C(b,k) lambda_{b,k}`` for ``k = 2..b`` (``rates[k-2]``)."""

    b: int
    rates: np.ndarray
    total: float

    def rate(self, k: int) -> float:
        return float(self.rates[k - 2])

    @property
    def ks(self) -> np.ndarray:
        return np.arange(2, self.b + 1)

    def mean_decrement(self) -> float:
        return math.fsum((self.ks - 1) * self.rates)


class _LRU:
    def __init__(self, capacity):
        self.capacity = capacity
        self._data = OrderedDict()
        self._lock = threading.Lock()

    def get(self, key):
        with self._lock:
            if key in self._data:
                self._data.move_to_end(key)
                return self._data[key]
        return None

    def put(self, key, value):
        with self._lock:
            self._data[key] = value
            self._data.move_to_end(key)
            while len(self._data) > self.capacity:
                self._data.popitem(last=False)

    def __len__(self):
        return len(self._data)


class RateFunctional:
    """Evaluator of the rate functionals of one driving measure.

    Evaluation methods are pure; the transition-row cache is bounded and
    guarded by a lock, so instances may be shared between threads.
    """

    def __init__(self, measure: DrivingMeasure, cache_capacity: int = 100_000):
        self.measure = measure
        self.c = measure.c
        self._rows = _LRU(cache_capacity)

    def __repr__(self):
        return f"RateFunctional({self.measure!r})"

    # -- Psi family -------------------------------------------------------

    def _lambda1_part(self, kernel, q, qm1=None):
        """(1-c) * int kernel(q, y) Lambda_1(dy) for an array of q."""
        q = np.atleast_1d(np.asarray(q, float))
        if qm1 is not None:
            qm1 = np.atleast_1d(np.asarray(qm1, float))
        if self.measure.is_pure_kingman:
            return np.zeros_like(q)
        qmax = max(float(q.max()), 1.0)
        y, w = quadrature_rule(self.measure, Y_MIN_FACTOR / qmax)
        out = np.empty_like(q)
        step = max(1, _CHUNK // len(y))
        for i in range(0, len(q), step):
            block = q[i : i + step, None]
            if qm1 is None:
                vals = kernel(block, y[None, :])
            else:
                vals = kernel(block, y[None, :], qm1[i : i + step, None])
            out[i : i + step] = vals @ w
        return out

    def psi1_many(self, q):
        """Psi_1 for an array of q >= 1 (0 for the pure Kingman measure)."""
        q = np.asarray(q, float)
        if np.any(q < 1.0):
            raise DomainError("Psi_1 is defined for q >= 1")
        if self.c == 1.0:
            return np.zeros_like(q)
        return self._lambda1_part(psi_kernel, q) / (1.0 - self.c)

    def psi_many(self, q, qm1=None):
        """Psi for an array of q >= 1; ``qm1`` optionally gives q - 1 exactly."""
        q = np.asarray(q, float)
        qm1 = q - 1.0 if qm1 is None else np.asarray(qm1, float)
        if np.any(qm1 < 0.0):
            raise DomainError("Psi is defined for q >= 1")
        kingman = self.c * q * qm1 / 2.0
        return kingman + self._lambda1_part(psi_kernel, q, qm1).reshape(q.shape)

    def psi_star_many(self, q):
        q = np.asarray(q, float)
        if np.any(q < 0.0):
            raise DomainError("Psi* is defined for q >= 0")
        return self.c * q * q / 2.0 + self._lambda1_part(psi_star_kernel, q).reshape(
            q.shape
        )

    def psi_gap_many(self, q):
        """Psi*(q) - Psi(q) evaluated directly, free of cancellation."""
        q = np.asarray(q, float)
        if np.any(q < 1.0):
            raise DomainError("the gap is evaluated for q >= 1")
        return self.c * q / 2.0 + self._lambda1_part(psi_gap_kernel, q).reshape(q.shape)

    def psi(self, q: float) -> float:
        if q < 1:
            raise DomainError(f"Psi needs q >= 1, got {q!r}")
        return float(self.psi_many(np.array([q]))[0])

    def psi1(self, q: float) -> float:
        if q < 1:
            raise DomainError(f"Psi_1 needs q >= 1, got {q!r}")
        return float(self.psi1_many(np.array([q]))[0])

    def psi_star(self, q: float) -> float:
        if q < 0:
            raise DomainError(f"Psi* needs q >= 0, got {q!r}")
        return float(self.psi_star_many(np.array([q]))[0])

    def psi1_over_q32(self, q: float) -> float:
        if q < 2:
            raise DomainError(f"psi1_over_q32 needs q >= 2, got {q!r}")
        return self.psi1(q) / q**1.5

    def estimate_A(self, grid=(1e3, 1e4, 1e5)) -> AEstimate:
        """Value of Psi_1(q)/q^{3/2} at the largest grid point, with the last
        two successive differences as a convergence diagnostic."""
        grid = tuple(sorted(float(g) for g in grid))
        vals = tuple(float(v) for v in self.psi1_many(np.array(grid)) / np.array(grid) ** 1.5)
        diffs = tuple(np.diff(vals)[-2:].tolist())
        return AEstimate(vals[-1], grid, vals, diffs)

    # -- collision rates -----------------------------------------------------

    def _log_lambda_components(self, b, k):
        """Per-component log of the Lambda-weighted lambda_{b,k} (arrays over k)."""
        k = np.asarray(k, float)
        logs = []
        with np.errstate(divide="ignore"):
            logs.append(np.where(k == 2, math.log(self.c), -np.inf))
            for a in self.measure.atoms:
                logs.append(
                    math.log(a.w)
                    + special.xlogy(k - 2, a.y)
                    + special.xlog1py(b - k, -a.y)
                )
        for comp in self.measure.betas:
            logs.append(
                math.log(comp.w)
                + special.betaln(k - 2 + comp.alpha, b - k + comp.beta)
                - comp.log_beta_fn
            )
        return logs

    def lambda_bk(self, b: int, k: int) -> float:
        if not (2 <= k <= b):
            raise DomainError(f"need 2 <= k <= b, got b={b}, k={k}")
        logs = self._log_lambda_components(b, np.array([k]))
        return math.fsum(float(np.exp(lg[0])) for lg in logs)

    def transition_row(self, b: int) -> TransitionRow:
        if b < 2:
            raise DomainError(f"transition row needs b >= 2, got {b}")
        b = int(b)
        cached = self._rows.get(b)
        if cached is not None:
            return cached
        k = np.arange(2, b + 1, dtype=float)
        log_choose = special.gammaln(b + 1.0) - special.gammaln(k + 1.0) - special.gammaln(b - k + 1.0)
        parts = [np.exp(log_choose + lg) for lg in self._log_lambda_components(b, k)]
        rates = np.sum(parts, axis=0)
        row = TransitionRow(b, rates, math.fsum(rates))
        self._rows.put(b, row)
        return row

    def cached_rows(self) -> int:
        return len(self._rows)

    # -- tables for the simulators ------------------------------------------

    def component_totals(self, n_max: int) -> np.ndarray:
        """Array ``T[j, b]`` of total event rates of component ``j`` at ``b`` blocks.

        Row 0 is the Kingman part ``c C(b,2)``, then one row per atom, then one
        per Beta component.  Beta totals use the recursion
        ``g(b+1) = g(b) + b lambda_{b+1,2}`` with ``g(2) = w``.
        """
        b = np.arange(n_max + 1, dtype=float)
        rows = [self.c * b * (b - 1.0) / 2.0]
        for a in self.measure.atoms:
            merge_prob = special.bdtrc(1, np.maximum(b, 1).astype(np.int64), a.y)
            rows.append(a.w / a.y**2 * merge_prob)
        for comp in self.measure.betas:
            inc = np.zeros(n_max + 1)
            bb = b[2:n_max]
            inc[3:] = comp.w * bb * np.exp(
                special.betaln(comp.alpha, bb - 1.0 + comp.beta) - comp.log_beta_fn
            )
            inc[2] = comp.w
            rows.append(np.cumsum(inc))
        out = np.vstack(rows)
        out[:, :2] = 0.0
        return out
