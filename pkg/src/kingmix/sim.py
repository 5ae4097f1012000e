"""Exact simulation of the block-counting process.

Three independent routes produce a :class:`BlockCountPath`:

``simulate_chain``
    The count chain itself.  The total jump rate at ``b`` blocks is split by
    component (Kingman part, each atom, each Beta part); a component is picked
    in proportion to its total, then ``k`` is drawn from that component's
    row by an upward inverse-CDF scan.  Compiled with numba.
``simulate_paintbox_oracle``
    Kingman pair merges plus, per atom of ``Lambda_1``, paintbox events in
    which ``xi ~ Binomial(b, y)`` blocks are coloured and merged.  Pure Python.
``simulate_partition_oracle``
    An explicit partition of ``{1..n}`` where ``k`` is drawn from the full
    transition row and then a uniform ``k``-subset of blocks merges.

Random streams are counter based: ``(seed, stream_index)`` is the key of a
Philox generator, so replicate ``i`` never depends on replicates ``< i``.
"""

from __future__ import annotations

import csv
import enum
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numba as nb
import numpy as np

from .errors import BadGrid, DomainError, UnsupportedMeasure
from .measure import DrivingMeasure
from .rates import RateFunctional

MAX_PARTITION_N = 50
MAX_PAINTBOX_N = 1000
_MASK64 = (1 << 64) - 1


def stream_rng(seed: int, stream_index: int = 0) -> np.random.Generator:
    """Counter-based generator for stream ``stream_index`` of ``seed``."""
    return np.random.Generator(
        np.random.Philox(key=(int(seed) & _MASK64) | ((int(stream_index) & _MASK64) << 64))
    )


class Backend(str, enum.Enum):
    CHAIN = "chain"
    PAINTBOX_ORACLE = "paintbox"
    PARTITION_ORACLE = "partition"


@dataclass(frozen=True)
class SimConfig:
    measure: DrivingMeasure
    n0: int
    t_end: float
    backend: Backend = Backend.CHAIN
    rng_stream: tuple[int, int] = (0, 0)
    #: time at which the chain holds ``n0`` blocks (entrance time)
    t_start: float = 0.0

    def __post_init__(self):
        if self.n0 < 2:
            raise DomainError(f"n0 must be >= 2, got {self.n0}")
        if not self.t_end > 0:
            raise DomainError(f"t_end must be positive, got {self.t_end}")
        if not 0 <= self.t_start < self.t_end:
            raise DomainError("need 0 <= t_start < t_end")
        object.__setattr__(self, "backend", Backend(self.backend))


@dataclass
class BlockCountPath:
    """Right-continuous record of ``N_t``: ``count_at(t)`` for ``t >= t_start``."""

    initial_n: int
    times: np.ndarray
    counts: np.ndarray
    seed: int = 0
    stream_index: int = 0
    t_start: float = 0.0
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        self.counts = np.asarray(self.counts, dtype=np.int64)

    @property
    def events(self):
        return list(zip(self.times.tolist(), self.counts.tolist()))

    def count_at(self, t):
        """N at time(s) ``t``, right-continuous."""
        idx = np.searchsorted(self.times, t, side="right")
        full = np.concatenate([[self.initial_n], self.counts])
        return full[idx]

    def check(self):
        prev_t, prev_n = self.t_start, self.initial_n
        for t, n in self.events:
            assert t > prev_t and 1 <= n < prev_n
            prev_t, prev_n = t, n
        return True

    def to_csv(self, path):
        """Write ``time,count`` rows plus a JSON metadata sidecar."""
        path = Path(path)
        with open(path, "w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow(["time", "count"])
            wr.writerow([f"{self.t_start:.17g}", self.initial_n])
            for t, n in self.events:
                wr.writerow([f"{t:.17g}", n])
        meta = dict(self.meta)
        meta.update(
            initial_n=self.initial_n, seed=self.seed,
            stream_index=self.stream_index, t_start=self.t_start,
        )
        with open(path.with_suffix(path.suffix + ".json"), "w") as fh:
            json.dump(meta, fh, indent=2, sort_keys=True)
        return path

    @classmethod
    def from_csv(cls, path):
        path = Path(path)
        data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
        with open(path.with_suffix(path.suffix + ".json")) as fh:
            meta = json.load(fh)
        return cls(
            int(data[0, 1]), data[1:, 0], data[1:, 1].astype(np.int64),
            meta.get("seed", 0), meta.get("stream_index", 0), float(data[0, 0]), meta,
        )


# -- compiled chain ------------------------------------------------------------

KIND_ATOM = 0
KIND_BETA = 1


@dataclass(frozen=True)
class ChainTables:
    """Per-component parameter arrays and rate totals consumed by the kernel."""

    kind: np.ndarray
    p1: np.ndarray  # atom location, or Beta alpha
    p2: np.ndarray  # Beta beta
    logw: np.ndarray  # log of Lambda weight (minus log B for Beta)
    totals: np.ndarray  # [1 + m, n_max + 1]
    grand: np.ndarray  # sum over components

    @classmethod
    def build(cls, rf: RateFunctional, n_max: int) -> "ChainTables":
        m = rf.measure
        kind, p1, p2, logw = [], [], [], []
        for a in m.atoms:
            kind.append(KIND_ATOM); p1.append(a.y); p2.append(0.0); logw.append(math.log(a.w))
        for b in m.betas:
            kind.append(KIND_BETA); p1.append(b.alpha); p2.append(b.beta)
            logw.append(math.log(b.w) - b.log_beta_fn)
        totals = rf.component_totals(n_max)
        return cls(
            np.array(kind, np.int64), np.array(p1, float), np.array(p2, float),
            np.array(logw, float), totals, totals.sum(axis=0),
        )


_TABLE_CACHE: dict = {}


def chain_tables(rf: RateFunctional, n_max: int) -> ChainTables:
    key = (rf.measure.key, n_max)
    tab = _TABLE_CACHE.get(key)
    if tab is None:
        if len(_TABLE_CACHE) > 16:
            _TABLE_CACHE.clear()
        tab = _TABLE_CACHE[key] = ChainTables.build(rf, n_max)
    return tab


@nb.njit(cache=True, nogil=True)
def _log_choose(n, k):
    return math.lgamma(n + 1.0) - math.lgamma(k + 1.0) - math.lgamma(n - k + 1.0)


@nb.njit(cache=True, nogil=True)
def _draw_k(rng, j, b, kind, p1, p2, logw, total_j):
    """Inverse-CDF draw of the merger size for component ``j`` at ``b`` blocks."""
    target = rng.random()
    cum = 0.0
    if kind[j] == KIND_ATOM:
        y = p1[j]
        if y == 1.0:
            return b
        # normalised pmf in log space, ratio recursion in k
        lr = logw[j] + _log_choose(b, 2.0) + (b - 2.0) * math.log1p(-y) - math.log(total_j)
        step = math.log(y) - math.log1p(-y)
        for k in range(2, b + 1):
            cum += math.exp(lr)
            if cum >= target:
                return k
            lr += math.log((b - k) / (k + 1.0)) + step if k < b else 0.0
        return b
    a, be = p1[j], p2[j]
    r = math.exp(
        logw[j] + _log_choose(b, 2.0) + math.lgamma(a) + math.lgamma(b - 2.0 + be)
        - math.lgamma(a + b - 2.0 + be)
    ) / total_j
    for k in range(2, b + 1):
        cum += r
        if cum >= target:
            return k
        r *= (b - k) * (k - 2.0 + a) / ((k + 1.0) * (b - k - 1.0 + be))
    return b


@nb.njit(cache=True, nogil=True)
def _next_event(rng, b, kind, p1, p2, logw, totals, grand):
    """Waiting time and new count for one jump from ``b`` blocks."""
    tot = grand[b]
    dt = rng.standard_exponential() / tot
    m = kind.shape[0]
    if m == 0:
        return dt, b - 1
    u = rng.random() * tot
    acc = totals[0, b]
    if u < acc:
        return dt, b - 1
    j = m - 1
    for i in range(m):
        acc += totals[i + 1, b]
        if u < acc:
            j = i
            break
    while totals[j + 1, b] <= 0.0:
        j -= 1
    k = _draw_k(rng, j, b, kind, p1, p2, logw, totals[j + 1, b])
    return dt, b - k + 1


@nb.njit(cache=True, nogil=True)
def _chain_events(rng, n0, t_start, t_end, kind, p1, p2, logw, totals, grand, times, counts):
    b = n0
    t = t_start
    n = 0
    while b > 1:
        dt, nb_ = _next_event(rng, b, kind, p1, p2, logw, totals, grand)
        t += dt
        if t > t_end:
            break
        b = nb_
        times[n] = t
        counts[n] = b
        n += 1
    return n


@nb.njit(cache=True, nogil=True)
def _chain_at(rng, n0, t_start, query, kind, p1, p2, logw, totals, grand, out):
    """Counts at sorted query times, without storing the path."""
    b = n0
    t = t_start
    i = 0
    nq = query.shape[0]
    while i < nq and query[i] < t_start:
        out[i] = n0
        i += 1
    while i < nq:
        if b == 1:
            out[i] = 1
            i += 1
            continue
        dt, nb_ = _next_event(rng, b, kind, p1, p2, logw, totals, grand)
        t += dt
        while i < nq and query[i] < t:
            out[i] = b
            i += 1
        b = nb_


def simulate_chain(cfg: SimConfig, rf: RateFunctional | None = None) -> BlockCountPath:
    if cfg.backend is not Backend.CHAIN:
        raise DomainError("simulate_chain needs backend CHAIN")
    rf = rf or RateFunctional(cfg.measure)
    tab = chain_tables(rf, cfg.n0)
    rng = stream_rng(*cfg.rng_stream)
    times = np.empty(cfg.n0, float)
    counts = np.empty(cfg.n0, np.int64)
    n = _chain_events(
        rng, cfg.n0, cfg.t_start, cfg.t_end, tab.kind, tab.p1, tab.p2, tab.logw,
        tab.totals, tab.grand, times, counts,
    )
    return BlockCountPath(
        cfg.n0, times[:n].copy(), counts[:n].copy(), *cfg.rng_stream, cfg.t_start,
        {"backend": cfg.backend.value, "t_end": cfg.t_end, "measure": cfg.measure.to_dict()},
    )


def chain_counts_at(rf: RateFunctional, n0: int, query, seed: int, stream_index: int,
                    t_start: float = 0.0, tables: ChainTables | None = None) -> np.ndarray:
    """``N`` at the sorted ``query`` times for one replicate of the chain."""
    query = np.asarray(query, float)
    if np.any(np.diff(query) < 0):
        raise BadGrid("query times must be sorted")
    tab = tables or chain_tables(rf, n0)
    out = np.empty(len(query), np.int64)
    _chain_at(
        stream_rng(seed, stream_index), n0, t_start, query, tab.kind, tab.p1, tab.p2,
        tab.logw, tab.totals, tab.grand, out,
    )
    return out


# -- oracles --------------------------------------------------------------------


def conditioned_binomial(rng: np.random.Generator, b: int, y: float, p_ge2: float | None = None) -> int:
    """Draw ``xi ~ Binomial(b, y)`` conditioned on ``xi >= 2``.

    Rejection from the plain binomial when ``P(xi >= 2) >= 0.1``; otherwise an
    inverse-CDF scan over the conditioned law.
    """
    if y == 1.0:
        return b
    if p_ge2 is None:
        p_ge2 = 1.0 - (1.0 - y) ** b - b * y * (1.0 - y) ** (b - 1)
    if p_ge2 >= 0.1:
        while True:
            xi = int(rng.binomial(b, y))
            if xi >= 2:
                return xi
    u = rng.random() * p_ge2
    log_odds = math.log(y) - math.log1p(-y)
    lp = math.log(b * (b - 1) / 2.0) + 2 * math.log(y) + (b - 2) * math.log1p(-y)
    cum = 0.0
    for k in range(2, b + 1):
        cum += math.exp(lp)
        if cum >= u:
            return k
        lp += math.log((b - k) / (k + 1.0)) + log_odds
    return b


def simulate_paintbox_oracle(cfg: SimConfig) -> BlockCountPath:
    m = cfg.measure
    if cfg.backend is not Backend.PAINTBOX_ORACLE:
        raise DomainError("simulate_paintbox_oracle needs backend PAINTBOX_ORACLE")
    if m.betas:
        raise UnsupportedMeasure("paintbox oracle supports atoms only")
    if cfg.n0 > MAX_PAINTBOX_N:
        raise DomainError(f"paintbox oracle needs n0 <= {MAX_PAINTBOX_N}")
    rng = stream_rng(*cfg.rng_stream)
    b, t = cfg.n0, cfg.t_start
    times, counts = [], []
    while b > 1:
        pair_rate = m.c * b * (b - 1) / 2.0
        p_ge2 = [
            1.0 - (1.0 - a.y) ** b - b * a.y * (1.0 - a.y) ** (b - 1) for a in m.atoms
        ]
        atom_rates = [a.w / a.y**2 * p for a, p in zip(m.atoms, p_ge2)]
        total = pair_rate + sum(atom_rates)
        t += rng.exponential(1.0 / total)
        if t > cfg.t_end:
            break
        u = rng.random() * total
        if u < pair_rate:
            b -= 1
        else:
            u -= pair_rate
            i = 0
            while i < len(atom_rates) - 1 and u >= atom_rates[i]:
                u -= atom_rates[i]
                i += 1
            b -= conditioned_binomial(rng, b, m.atoms[i].y, p_ge2[i]) - 1
        times.append(t)
        counts.append(b)
    return BlockCountPath(
        cfg.n0, times, counts, *cfg.rng_stream, cfg.t_start,
        {"backend": cfg.backend.value, "t_end": cfg.t_end},
    )


def simulate_partition_oracle(measure: DrivingMeasure, n: int, t_end: float,
                              rng: np.random.Generator, rf: RateFunctional | None = None,
                              t_start: float = 0.0) -> BlockCountPath:
    """Simulate the restriction of the coalescent to ``{1..n}`` as a partition."""
    if n > MAX_PARTITION_N:
        raise DomainError(f"partition oracle needs n <= {MAX_PARTITION_N}")
    rf = rf or RateFunctional(measure)
    blocks = [frozenset([i]) for i in range(1, n + 1)]
    t = t_start
    times, counts = [], []
    while len(blocks) > 1:
        row = rf.transition_row(len(blocks))
        t += rng.exponential(1.0 / row.total)
        if t > t_end:
            break
        cdf = np.cumsum(row.rates)
        k = int(np.searchsorted(cdf, rng.random() * cdf[-1], side="right")) + 2
        k = min(k, row.b)
        chosen = set(rng.choice(len(blocks), size=k, replace=False).tolist())
        merged = frozenset().union(*(blocks[i] for i in chosen))
        blocks = [blk for i, blk in enumerate(blocks) if i not in chosen] + [merged]
        blocks.sort(key=min)
        times.append(t)
        counts.append(len(blocks))
    return BlockCountPath(n, times, counts, meta={"backend": "partition", "t_end": t_end,
                                                   "blocks": [sorted(b) for b in blocks]})


def simulate(cfg: SimConfig, rf: RateFunctional | None = None) -> BlockCountPath:
    """Dispatch on ``cfg.backend``."""
    if cfg.backend is Backend.CHAIN:
        return simulate_chain(cfg, rf)
    if cfg.backend is Backend.PAINTBOX_ORACLE:
        return simulate_paintbox_oracle(cfg)
    path = simulate_partition_oracle(
        cfg.measure, cfg.n0, cfg.t_end, stream_rng(*cfg.rng_stream), rf, cfg.t_start
    )
    path.seed, path.stream_index = cfg.rng_stream
    return path
