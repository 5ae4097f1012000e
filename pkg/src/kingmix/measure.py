"""Driving measures with a Kingman atom and integrals against their remainder.

A driving measure is a probability measure on [0, 1] of the form

    Lambda = c * delta_0 + sum_i w_i * delta_{y_i} + sum_j w_j * Beta(a_j, b_j),

with ``c > 0``.  The part away from zero, renormalised to a probability
measure, is called ``Lambda_1`` throughout the package, so that
``Lambda = c delta_0 + (1 - c) Lambda_1``.

Two integration routes are provided:

* :func:`integrate_lambda1` -- adaptive QUADPACK quadrature for an arbitrary
  scalar integrand (the reference route);
* :func:`quadrature_rule` -- a fixed composite Gauss-Legendre rule, graded
  geometrically towards both endpoints, for integrands that must be evaluated
  for many parameter values at once (used by :mod:`kingmix.rates`).
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path
from typing import Any, Callable, Iterable, Mapping

import numpy as np
from scipy import integrate, special

from .errors import BadSupport, ConfigError, NoKingmanAtom, NonProbability, QuadratureFailure

#: strict mass tolerance checked at construction
MASS_TOL = 1e-12
#: raw totals closer than this to 1 are silently renormalised by :func:`validate`
RENORM_TOL = 1e-9
QUAD_RTOL = 1e-10


@dataclass(frozen=True)
class Atom:
    y: float
    w: float


@dataclass(frozen=True)
class BetaComponent:
    alpha: float
    beta: float
    w: float

    @property
    def log_beta_fn(self) -> float:
        return float(special.betaln(self.alpha, self.beta))

    def pdf(self, y):
        y = np.asarray(y, dtype=float)
        return np.exp(
            special.xlogy(self.alpha - 1.0, y)
            + special.xlog1py(self.beta - 1.0, -y)
            - self.log_beta_fn
        )


@dataclass(frozen=True)
class DrivingMeasure:
    """Immutable driving measure; weights are masses of ``Lambda`` itself."""

    kingman_mass: float
    atoms: tuple[Atom, ...] = ()
    betas: tuple[BetaComponent, ...] = ()
    _key: str = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "atoms", tuple(self.atoms))
        object.__setattr__(self, "betas", tuple(self.betas))
        _check_fields(self.kingman_mass, self.atoms, self.betas)
        total = self.total_mass
        if abs(total - 1.0) > MASS_TOL:
            raise NonProbability(f"total mass {total!r} is not 1")
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        object.__setattr__(self, "_key", hashlib.sha256(blob).hexdigest()[:16])

    @property
    def c(self) -> float:
        return self.kingman_mass

    @property
    def total_mass(self) -> float:
        return math.fsum(
            [self.kingman_mass]
            + [a.w for a in self.atoms]
            + [b.w for b in self.betas]
        )

    @property
    def key(self) -> str:
        """Content hash; equal measures share cache entries."""
        return self._key

    @property
    def is_pure_kingman(self) -> bool:
        return not self.atoms and not self.betas

    @property
    def atoms_only(self) -> bool:
        return not self.betas

    def __hash__(self):
        return hash(self._key)

    def to_dict(self) -> dict:
        return {
            "kingman_mass": self.kingman_mass,
            "atoms": [{"y": a.y, "w": a.w} for a in self.atoms],
            "betas": [
                {"alpha": b.alpha, "beta": b.beta, "w": b.w} for b in self.betas
            ],
        }

    def sqrt_y_moment(self) -> float:
        """Integral of y**-1/2 against Lambda_1 (may be ``inf``)."""
        if self.c == 1.0:
            return 0.0
        total = sum(a.w / math.sqrt(a.y) for a in self.atoms)
        for b in self.betas:
            if b.alpha <= 0.5:
                return math.inf
            total += b.w * math.exp(
                special.betaln(b.alpha - 0.5, b.beta) - b.log_beta_fn
            )
        return total / (1.0 - self.c)


def _check_fields(c, atoms, betas):
    if not (c > 0.0):
        raise NoKingmanAtom(f"kingman_mass must be > 0, got {c!r}")
    if c > 1.0 + RENORM_TOL:
        raise NonProbability(f"kingman_mass {c!r} exceeds 1")
    for a in atoms:
        if not (0.0 < a.y <= 1.0):
            raise BadSupport(f"atom location {a.y!r} outside (0, 1]")
        if not (a.w > 0.0):
            raise NonProbability(f"atom weight {a.w!r} must be positive")
    for b in betas:
        if not (b.alpha > 0.0 and b.beta > 0.0):
            raise BadSupport(f"Beta shape ({b.alpha!r}, {b.beta!r}) must be positive")
        if not (b.w > 0.0):
            raise NonProbability(f"Beta weight {b.w!r} must be positive")


def validate(raw: DrivingMeasure | Mapping[str, Any]) -> DrivingMeasure:
    """Check a raw measure and renormalise tiny deviations of the total mass.

    ``raw`` is either a :class:`DrivingMeasure` or a mapping following the
    config schema ``{"kingman_mass", "atoms": [{"y","w"}], "betas":
    [{"alpha","beta","w"}]}``.
    """
    if isinstance(raw, DrivingMeasure):
        raw = raw.to_dict()
    try:
        c = float(raw["kingman_mass"])
        atoms = [Atom(float(a["y"]), float(a["w"])) for a in raw.get("atoms", ())]
        betas = [
            BetaComponent(float(b["alpha"]), float(b["beta"]), float(b["w"]))
            for b in raw.get("betas", ())
        ]
    except (KeyError, TypeError) as exc:
        raise NonProbability(f"malformed measure config: {exc}") from exc
    _check_fields(c, atoms, betas)
    total = math.fsum([c] + [a.w for a in atoms] + [b.w for b in betas])
    if abs(total - 1.0) >= RENORM_TOL:
        raise NonProbability(f"total mass {total!r} differs from 1 by >= {RENORM_TOL}")
    if total != 1.0:
        c /= total
        atoms = [Atom(a.y, a.w / total) for a in atoms]
        betas = [BetaComponent(b.alpha, b.beta, b.w / total) for b in betas]
        if not atoms and not betas:
            c = 1.0
    return DrivingMeasure(c, tuple(atoms), tuple(betas))


def kingman() -> DrivingMeasure:
    return DrivingMeasure(1.0)


def mixed(c: float, atoms: Iterable = (), betas: Iterable = ()) -> DrivingMeasure:
    """Convenience constructor: ``atoms`` as (y, w), ``betas`` as (alpha, beta, w)."""
    return validate(
        {
            "kingman_mass": c,
            "atoms": [{"y": y, "w": w} for y, w in atoms],
            "betas": [{"alpha": a, "beta": b, "w": w} for a, b, w in betas],
        }
    )


def load_measure(path: str | Path) -> DrivingMeasure:
    try:
        with open(path) as fh:
            raw = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read measure file {path}: {exc}") from exc
    return validate(raw)


def _beta_integral(comp: BetaComponent, g: Callable[[float], float]) -> float:
    """Integral of g against the Beta(alpha, beta) probability density."""
    a, b, lb = comp.alpha, comp.beta, comp.log_beta_fn
    opts = dict(epsabs=0.0, epsrel=QUAD_RTOL, limit=500, full_output=1)
    pieces = []
    # [0, 1/2]: y = u**(1/a) absorbs y**(a-1) when a <= 1
    if a <= 1.0:
        def left(u):
            y = u ** (1.0 / a)
            return g(y) * math.exp(special.xlog1py(b - 1.0, -y) - lb) / a

        pieces.append(integrate.quad(left, 0.0, 0.5**a, **opts))
    else:
        def left(y):
            return g(y) * math.exp(
                (a - 1.0) * math.log(y) + special.xlog1py(b - 1.0, -y) - lb
            ) if y > 0 else g(y) * 0.0

        pieces.append(integrate.quad(left, 0.0, 0.5, **opts))
    # [1/2, 1]: 1 - y = s**(1/b) absorbs (1-y)**(b-1) when b <= 1
    if b <= 1.0:
        def right(s):
            y = 1.0 - s ** (1.0 / b)
            return g(y) * math.exp((a - 1.0) * math.log(y) - lb) / b

        pieces.append(integrate.quad(right, 0.0, 0.5**b, **opts))
    else:
        def right(y):
            return g(y) * math.exp(
                (a - 1.0) * math.log(y) + (b - 1.0) * math.log1p(-y) - lb
            ) if y < 1 else g(y) * 0.0

        pieces.append(integrate.quad(right, 0.5, 1.0, **opts))
    value = math.fsum(p[0] for p in pieces)
    err = sum(p[1] for p in pieces)
    if not math.isfinite(value) or err > max(QUAD_RTOL * abs(value), 1e-300) * 10:
        raise QuadratureFailure(
            f"Beta({a}, {b}) integral: estimate {value!r} with error {err!r}"
        )
    return value


def integrate_lambda1(measure: DrivingMeasure, g: Callable[[float], float]) -> float:
    """Integral of ``g`` against the probability measure ``Lambda_1``.

    Atoms are summed exactly, Beta components use adaptive quadrature with
    relative tolerance 1e-10.  Returns exactly 0 for the pure Kingman measure.
    """
    if measure.is_pure_kingman:
        return 0.0
    terms = [a.w * float(g(a.y)) for a in measure.atoms]
    terms += [b.w * _beta_integral(b, g) for b in measure.betas]
    return math.fsum(terms) / (1.0 - measure.c)


# -- composite rule --------------------------------------------------------

GL_ORDER = 16
#: width of the final panel touching y = 1
RIGHT_GAP = 1e-13


@lru_cache(maxsize=8)
def _gauss_legendre(n: int):
    x, w = np.polynomial.legendre.leggauss(n)
    return (x + 1.0) / 2.0, w / 2.0


def _panel_nodes(lo, hi, n):
    x, w = _gauss_legendre(n)
    return lo + (hi - lo) * x, (hi - lo) * w


def beta_rule(comp: BetaComponent, y_min: float, n: int = GL_ORDER):
    """Nodes and weights integrating against the Beta(alpha, beta) density.

    Panels double in width from ``y_min`` up to 1/2 and halve towards 1.  The
    two end panels are mapped by ``u = y**alpha`` and ``s = (1-y)**beta``,
    which absorb the endpoint powers of the density exactly.
    """
    a, b, lb = comp.alpha, comp.beta, comp.log_beta_fn
    nodes, weights = [], []

    # end panel [0, y_min] in u = y**a
    u, wu = _panel_nodes(0.0, y_min**a, n)
    y = u ** (1.0 / a)
    nodes.append(y)
    weights.append(wu * np.exp(special.xlog1py(b - 1.0, -y) - lb) / a)

    edges = [y_min]
    while edges[-1] < 0.25:
        edges.append(edges[-1] * 2.0)
    edges[-1] = 0.5
    n_left = len(edges)
    gap = 0.5
    while gap > RIGHT_GAP * 2:
        gap /= 2.0
        edges.append(1.0 - gap)
    edges = np.asarray(edges)
    for lo, hi in zip(edges[: n_left - 1], edges[1:n_left]):
        y, wy = _panel_nodes(lo, hi, n)
        nodes.append(y)
        weights.append(
            wy * np.exp((a - 1.0) * np.log(y) + (b - 1.0) * np.log1p(-y) - lb)
        )
    # right panels in d = 1 - y, so the factor (1-y)**(b-1) keeps full precision
    gaps = 1.0 - edges[n_left - 1 :]
    for d_hi, d_lo in zip(gaps[:-1], gaps[1:]):
        d, wd = _panel_nodes(d_lo, d_hi, n)
        nodes.append(1.0 - d)
        weights.append(wd * np.exp((a - 1.0) * np.log1p(-d) + (b - 1.0) * np.log(d) - lb))

    # end panel [1 - gap, 1] in s = (1-y)**b
    s, ws = _panel_nodes(0.0, gap**b, n)
    y = 1.0 - s ** (1.0 / b)
    nodes.append(y)
    weights.append(ws * np.exp((a - 1.0) * np.log(y) - lb) / b)
    return np.concatenate(nodes), np.concatenate(weights)


def quadrature_rule(measure: DrivingMeasure, y_min: float, n: int = GL_ORDER):
    """Rule ``(y, w)`` with ``sum(w * g(y))`` approximating ``(1-c) * int g dLambda_1``.

    ``y_min`` sets the finest scale resolved near zero; integrands whose
    structure lives at ``y ~ 1/q`` need ``y_min`` well below ``1/q``.
    """
    ys = [np.array([a.y for a in measure.atoms])]
    ws = [np.array([a.w for a in measure.atoms])]
    for comp in measure.betas:
        y, w = beta_rule(comp, y_min, n)
        ys.append(y)
        ws.append(comp.w * w)
    return np.concatenate(ys), np.concatenate(ws)
