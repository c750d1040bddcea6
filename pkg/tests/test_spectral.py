import json
import math

import numpy as np
import pytest
from scipy import integrate, linalg

from superclt.errors import DomainError, NotSupercritical
from superclt.model import load_model
from superclt.spectral import (
    EigenFunction,
    classify,
    decompose,
    i_operator,
    project_components,
    propagator,
    resolvent_apply,
    semigroup_apply,
)

from conftest import make_random_model

INV_SQRT2 = 1.0 / math.sqrt(2.0)


def test_m1_closed_form(d1):
    assert np.allclose(d1.rates, [-0.5, 1.5], atol=1e-12)
    assert np.allclose(d1.basis[0], [INV_SQRT2, INV_SQRT2], atol=1e-12)
    assert np.allclose(np.abs(d1.basis[1]), [INV_SQRT2, INV_SQRT2], atol=1e-12)
    assert d1.supercritical
    assert tuple(d1.multiplicity) == (1, 1)


def test_m2_closed_form(d2):
    assert np.allclose(d2.rates, [-4.0, -2.0], atol=1e-12)


def test_single_type_model():
    model = load_model(json.dumps({
        "m": [4.0], "Q": [[0.0]], "beta": [1.0], "a": [0.7], "b": [0.1],
        "jumps": [], "mu0": [1.0],
    }))
    dec = decompose(model)
    assert dec.rates[0] == pytest.approx(-0.7, abs=1e-14)
    assert dec.basis[0, 0] == pytest.approx(0.5, abs=1e-14)  # 1/sqrt(m)


@pytest.mark.parametrize("seed", range(10))
def test_random_models_residual_orthonormality_positivity(seed):
    rng = np.random.default_rng(1000 + seed)
    model = make_random_model(rng, supercritical=False, jumps=True)
    dec = decompose(model)
    L = dec.generator
    scale = max(1.0, np.max(np.abs(L)))
    for j in range(dec.n_states):
        resid = L @ dec.basis[j] + dec.flat_rates[j] * dec.basis[j]
        assert np.max(np.abs(resid)) <= 1e-10 * scale
    gram = dec.basis @ np.diag(model.m) @ dec.basis.T
    assert np.max(np.abs(gram - np.eye(dec.n_states))) <= 1e-10
    assert np.all(dec.basis[0] > 0)


def test_classification_m1_m2(cls1, cls2):
    assert cls1.large == (0,) and cls1.critical == () and cls1.small == (1,)
    assert cls2.large == (0,) and cls2.critical == (1,) and cls2.small == ()


def test_classification_huge_tolerance_footgun(d1):
    # An absurd tolerance swallows the small group (and here even the
    # principal group) into "critical"; the default band is 1e-9.
    swallowed = classify(d1, tol=10.0)
    assert 1 in swallowed.critical
    assert classify(d1).critical == ()


def test_classification_requires_supercritical():
    model = load_model(json.dumps({
        "m": [1.0, 1.0], "Q": [[-1.0, 1.0], [1.0, -1.0]],
        "beta": [1.0, 1.0], "a": [-0.5, -0.5], "b": [0.25, 0.25],
        "jumps": [], "mu0": [1.0, 0.0],
    }))
    dec = decompose(model)
    assert not dec.supercritical
    with pytest.raises(NotSupercritical):
        classify(dec)


def test_eigenfunction_reconstruction_and_gamma(d1):
    values = np.array([0.3, -1.2])
    f = EigenFunction.from_values(d1, values)
    assert np.allclose(f.values(), values, atol=1e-12)
    assert f.gamma == 0
    assert EigenFunction.zero(d1).gamma == math.inf
    phi2 = EigenFunction.basis_element(d1, 1)
    assert phi2.gamma == 1


def test_semigroup_eigenfunction_decay(d1):
    phi2 = EigenFunction.basis_element(d1, 1)
    out = semigroup_apply(d1, phi2, 1.0)
    assert np.allclose(out.values(), math.exp(-1.5) * phi2.values(), atol=1e-14)


def test_semigroup_identity_at_zero(d1):
    f = EigenFunction.from_values(d1, [0.7, -0.2])
    assert np.allclose(semigroup_apply(d1, f, 0.0).values(), f.values(), atol=1e-15)


def test_semigroup_matches_matrix_exponential(d1):
    f = EigenFunction.from_values(d1, [1.0, 0.0])
    ours = semigroup_apply(d1, f, 0.7).values()
    oracle = linalg.expm(0.7 * d1.generator) @ np.array([1.0, 0.0])
    assert np.max(np.abs(ours - oracle)) <= 1e-10


def test_semigroup_negative_time_rejected(d1):
    with pytest.raises(DomainError):
        semigroup_apply(d1, EigenFunction.basis_element(d1, 0), -0.1)


@pytest.mark.parametrize("seed", range(5))
def test_semigroup_law(seed):
    rng = np.random.default_rng(2000 + seed)
    model = make_random_model(rng, supercritical=False)
    dec = decompose(model)
    f = EigenFunction.from_values(dec, rng.normal(size=dec.n_states))
    s, t = rng.uniform(0.0, 5.0, 2)
    once = semigroup_apply(dec, f, s + t).values()
    twice = semigroup_apply(dec, semigroup_apply(dec, f, s), t).values()
    assert np.max(np.abs(once - twice)) <= 1e-10 * max(1.0, np.max(np.abs(once)))


def test_resolvent_eigenfunction_scaling(d1):
    phi2 = EigenFunction.basis_element(d1, 1)
    out = resolvent_apply(d1, phi2, 2.0, 1.0)
    assert np.allclose(out.values(), phi2.values() / 3.5, atol=1e-14)


def test_resolvent_precondition(d1):
    phi2 = EigenFunction.basis_element(d1, 1)
    with pytest.raises(DomainError, match="q too small"):
        resolvent_apply(d1, phi2, 0.9, 1.0)  # below -2*lambda_1 = 1.0


def test_resolvent_matches_quadrature(d1, m1):
    f_values = np.array([1.0, 0.0])
    f = EigenFunction.from_values(d1, f_values)
    ours = resolvent_apply(d1, f, 2.0, 1.0).values()
    oracle = np.array([
        integrate.quad(
            lambda s: (linalg.expm(s * d1.generator) @ f_values)[i] * math.exp(-2.0 * s),
            0.0, 50.0, limit=300, epsabs=1e-12,
        )[0]
        for i in range(2)
    ])
    assert np.max(np.abs(ours - oracle)) <= 1e-8


def test_resolvent_identity_and_gamma_preservation():
    rng = np.random.default_rng(31)
    for _ in range(5):
        model = make_random_model(rng)
        dec = decompose(model)
        bound = float(np.max(np.abs(model.beta * model.a))) + 2.0
        q = max(bound, -2.0 * dec.principal_rate) + 0.5
        f = EigenFunction.from_values(dec, rng.normal(size=dec.n_states))
        u = resolvent_apply(dec, f, q, bound)
        recovered = q * u.values() - dec.generator @ u.values()
        assert np.max(np.abs(recovered - f.values())) <= 1e-9 * max(1.0, np.max(np.abs(f.values())))
        assert u.gamma == f.gamma


def test_project_components_masking(d1, cls1):
    phi1 = EigenFunction.basis_element(d1, 0)
    phi2 = EigenFunction.basis_element(d1, 1)
    f = phi1 + phi2
    parts = project_components(d1, cls1, f)
    assert np.allclose(parts.f_s.values(), phi1.values())
    assert parts.f_c.is_zero()
    assert np.allclose(parts.f_l.values(), phi2.values())
    total = parts.f_s.values() + parts.f_c.values() + parts.f_l.values()
    assert np.array_equal(total, f.values())


def test_project_components_critical(d2, cls2):
    phi2 = EigenFunction.basis_element(d2, 1)
    parts = project_components(d2, cls2, phi2)
    assert np.allclose(parts.f_c.values(), phi2.values())
    assert parts.f_s.values() @ parts.f_c.values() == 0.0


def test_project_components_zero(d1, cls1):
    parts = project_components(d1, cls1, EigenFunction.zero(d1))
    assert parts.f_s.is_zero() and parts.f_c.is_zero() and parts.f_l.is_zero()
    assert parts.f_l.gamma == math.inf


def test_project_components_orthogonal():
    rng = np.random.default_rng(55)
    model = make_random_model(rng, n=4)
    dec = decompose(model)
    cls = classify(dec)
    f = EigenFunction.from_values(dec, rng.normal(size=4))
    parts = project_components(dec, cls, f)
    for u in parts:
        for v in parts:
            if u is not v:
                assert abs(np.sum(u.values() * v.values() * model.m)) <= 1e-12


def test_i_operator_scaling_and_inverse(d1, cls1):
    phi1 = EigenFunction.basis_element(d1, 0)
    out = i_operator(d1, cls1, phi1, 2.0)
    assert np.allclose(out.values(), math.exp(-1.0) * phi1.values(), atol=1e-14)
    assert np.allclose(i_operator(d1, cls1, phi1, 0.0).values(), phi1.values())
    round_trip = semigroup_apply(d1, i_operator(d1, cls1, phi1, 1.7), 1.7)
    assert np.max(np.abs(round_trip.values() - phi1.values())) <= 1e-10


def test_i_operator_domain(d1, cls1):
    phi2 = EigenFunction.basis_element(d1, 1)
    with pytest.raises(DomainError):
        i_operator(d1, cls1, phi2, 1.0)
    with pytest.raises(DomainError):
        i_operator(d1, cls1, EigenFunction.basis_element(d1, 0), -1.0)


def test_classify_partition_property():
    rng = np.random.default_rng(77)
    for _ in range(10):
        model = make_random_model(rng)
        dec = decompose(model)
        cls = classify(dec)
        all_groups = sorted(cls.small + cls.critical + cls.large)
        assert all_groups == list(range(dec.n_groups))
        assert 0 in cls.large


def test_propagator_matches_expm():
    rng = np.random.default_rng(99)
    model = make_random_model(rng, n=3)
    dec = decompose(model)
    assert np.max(np.abs(propagator(dec, 1.3) - linalg.expm(1.3 * dec.generator))) <= 1e-11
