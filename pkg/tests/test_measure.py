import json
import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy import integrate

from kingmix.errors import BadSupport, ConfigError, NoKingmanAtom, NonProbability
from kingmix.measure import (
    Atom,
    BetaComponent,
    DrivingMeasure,
    beta_rule,
    integrate_lambda1,
    kingman,
    load_measure,
    mixed,
    quadrature_rule,
    validate,
)


def test_kingman_is_pure():
    m = kingman()
    assert m.c == 1.0 and m.is_pure_kingman and m.atoms_only


def test_component_weights_are_lambda_masses():
    m = mixed(0.5, atoms=[(0.6, 0.2)], betas=[(1.0, 1.0, 0.3)])
    assert m.total_mass == pytest.approx(1.0, abs=1e-15)
    assert m.c == 0.5


@pytest.mark.parametrize(
    "raw, err",
    [
        ({"kingman_mass": 0.0, "atoms": [{"y": 0.5, "w": 1.0}]}, NoKingmanAtom),
        ({"kingman_mass": 0.5, "atoms": [{"y": 0.0, "w": 0.5}]}, BadSupport),
        ({"kingman_mass": 0.5, "atoms": [{"y": 1.2, "w": 0.5}]}, BadSupport),
        ({"kingman_mass": 0.5, "betas": [{"alpha": -1, "beta": 1, "w": 0.5}]}, BadSupport),
        ({"kingman_mass": 0.5, "atoms": [{"y": 0.5, "w": 0.4}]}, NonProbability),
        ({"kingman_mass": 0.5}, NonProbability),
        ({"atoms": []}, NonProbability),
    ],
)
def test_validate_rejects(raw, err):
    with pytest.raises(err):
        validate(raw)


def test_config_errors_are_value_errors():
    with pytest.raises(ValueError):
        validate({"kingman_mass": 2.0})


def test_tiny_mass_defect_is_renormalized():
    m = validate({"kingman_mass": 0.5 + 4e-10, "atoms": [{"y": 0.6, "w": 0.5}]})
    assert m.total_mass == pytest.approx(1.0, abs=1e-15)
    assert m.c == pytest.approx(0.5, rel=1e-9)


def test_strict_constructor_tolerance():
    with pytest.raises(NonProbability):
        DrivingMeasure(0.5, (Atom(0.5, 0.5 + 1e-9),))


def test_key_is_content_hash():
    a = mixed(0.5, atoms=[(0.6, 0.5)])
    b = validate(a.to_dict())
    assert a.key == b.key and hash(a) == hash(b)
    assert a.key != mixed(0.5, atoms=[(0.7, 0.5)]).key


def test_load_measure_roundtrip(tmp_path):
    m = mixed(0.25, atoms=[(1.0, 0.25)], betas=[(0.5, 1.5, 0.5)])
    path = tmp_path / "m.json"
    path.write_text(json.dumps(m.to_dict()))
    assert load_measure(path) == m
    with pytest.raises(ConfigError):
        load_measure(tmp_path / "missing.json")


def test_sqrt_y_moment():
    assert mixed(0.5, betas=[(1.0, 1.0, 0.5)]).sqrt_y_moment() == pytest.approx(2.0, rel=1e-14)
    assert mixed(0.5, atoms=[(0.25, 0.5)]).sqrt_y_moment() == pytest.approx(2.0)
    assert math.isinf(mixed(0.5, betas=[(0.5, 1.5, 0.5)]).sqrt_y_moment())
    assert kingman().sqrt_y_moment() == 0.0


@pytest.mark.parametrize("alpha, beta", [(0.5, 1.5), (1.0, 1.0), (2.5, 0.7), (0.3, 0.3), (3.0, 4.0)])
def test_beta_rule_integrates_moments(alpha, beta):
    comp = BetaComponent(alpha, beta, 1.0)
    y, w = beta_rule(comp, 1e-8)
    for p in (0, 1, 2, 5):
        exact = math.exp(math.lgamma(alpha + p) + math.lgamma(alpha + beta)
                         - math.lgamma(alpha) - math.lgamma(alpha + beta + p))
        assert np.dot(w, y**p) == pytest.approx(exact, rel=1e-12)


def test_quadrature_rule_carries_one_minus_c():
    m = mixed(0.4, atoms=[(0.3, 0.2)], betas=[(2.0, 3.0, 0.4)])
    y, w = quadrature_rule(m, 1e-6)
    assert w.sum() == pytest.approx(0.6, rel=1e-13)
    assert np.dot(w, y) == pytest.approx(0.2 * 0.3 + 0.4 * 0.4, rel=1e-13)


def test_integrate_lambda1_matches_scipy():
    m = mixed(0.5, atoms=[(0.6, 0.1)], betas=[(0.5, 1.5, 0.4)])
    g = lambda y: y * (1 - y) ** 3
    ref_beta = integrate.quad(lambda y: g(y) * m.betas[0].pdf(y), 0, 1, limit=200)[0]
    ref = (0.1 * g(0.6) + 0.4 * ref_beta) / 0.5
    assert integrate_lambda1(m, g) == pytest.approx(ref, rel=1e-9)
    assert integrate_lambda1(kingman(), g) == 0.0


@given(
    c=st.floats(0.05, 0.95),
    ys=st.lists(st.floats(0.01, 1.0), max_size=3),
    shapes=st.lists(st.tuples(st.floats(0.2, 4.0), st.floats(0.2, 4.0)), max_size=2),
)
def test_validate_accepts_any_normalized_mixture(c, ys, shapes):
    k = len(ys) + len(shapes)
    w = (1.0 - c) / k if k else 0.0
    if k == 0:
        c = 1.0
    m = mixed(c, atoms=[(y, w) for y in ys], betas=[(a, b, w) for a, b in shapes])
    assert abs(m.total_mass - 1.0) <= 1e-12
    y, wts = quadrature_rule(m, 1e-6)
    assert np.all((y > 0) & (y <= 1)) and np.all(wts >= 0)
    assert wts.sum() == pytest.approx(1.0 - m.c, rel=1e-10, abs=1e-14)
