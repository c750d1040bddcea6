import json

import numpy as np
import pytest

from superclt.errors import ParseError, ValidationError
from superclt.model import (
    JumpAtom,
    check_grey_condition,
    derive_coefficients,
    load_config,
    load_model,
    reference_config_text,
    reference_model,
    serialize,
)

from conftest import make_random_model


def _config(**overrides):
    doc = {
        "m": [1.0, 1.0],
        "Q": [[-1.0, 1.0], [1.0, -1.0]],
        "beta": [1.0, 1.0],
        "a": [0.5, 0.5],
        "b": [0.25, 0.25],
        "jumps": [],
        "mu0": [1.0, 0.0],
    }
    doc.update(overrides)
    return json.dumps(doc)


def test_reference_round_trip():
    for name in ("sym2", "crit2", "asym2"):
        parsed = load_config(reference_config_text(name))
        again = load_config(serialize(parsed.model, parsed.mu0))
        assert again.model.name == name
        assert np.array_equal(again.model.Q, parsed.model.Q)
        assert np.array_equal(again.model.m, parsed.model.m)
        assert np.array_equal(again.model.beta, parsed.model.beta)
        assert np.array_equal(again.model.a, parsed.model.a)
        assert np.array_equal(again.model.b, parsed.model.b)
        assert np.array_equal(again.mu0, parsed.mu0)


def test_jump_round_trip_and_indexing():
    model = load_model(_config(jumps=[{"type": 1, "y": 2.0, "w": 0.1}]))
    assert model.jumps[0] == (JumpAtom(y=2.0, w=0.1),)
    assert model.jumps[1] == ()
    again = load_model(serialize(model))
    assert again.jumps == model.jumps


def test_m1_loads_with_two_types(m1):
    assert m1.n_types == 2
    assert m1.name == "sym2"


def test_reversibility_violation_named():
    with pytest.raises(ValidationError, match="reversibility"):
        load_model(_config(Q=[[-1.0, 1.0], [2.0, -2.0]]))


def test_negative_b_rejected():
    with pytest.raises(ValidationError, match="b nonnegative"):
        load_model(_config(b=[-0.1, 0.25]))


def test_negative_beta_and_nonpositive_m_rejected():
    with pytest.raises(ValidationError, match="beta nonnegative"):
        load_model(_config(beta=[-1.0, 1.0]))
    with pytest.raises(ValidationError, match="m positive"):
        load_model(_config(m=[0.0, 1.0]))


def test_row_sum_violation():
    with pytest.raises(ValidationError, match="row sum"):
        load_model(_config(Q=[[-1.0, 1.1], [1.1, -1.1]]))


def test_irreducibility_violation():
    cfg = _config(
        m=[1.0, 1.0, 1.0],
        Q=[[-1.0, 1.0, 0.0], [1.0, -1.0, 0.0], [0.0, 0.0, 0.0]],
        beta=[1.0, 1.0, 1.0],
        a=[0.5, 0.5, 0.5],
        b=[0.25, 0.25, 0.25],
        mu0=[1.0, 0.0, 0.0],
    )
    with pytest.raises(ValidationError, match="irreducible"):
        load_model(cfg)


def test_unknown_and_missing_keys():
    with pytest.raises(ParseError, match="unknown"):
        load_config(_config(extra=1))
    doc = json.loads(_config())
    del doc["mu0"]
    with pytest.raises(ParseError, match="missing"):
        load_config(json.dumps(doc))


def test_malformed_json():
    with pytest.raises(ParseError, match="JSON"):
        load_config("{not json")


def test_jump_entry_validation():
    with pytest.raises(ParseError, match="out of range"):
        load_model(_config(jumps=[{"type": 3, "y": 1.0, "w": 0.1}]))
    with pytest.raises(ParseError, match="keys"):
        load_model(_config(jumps=[{"type": 1, "y": 1.0}]))
    with pytest.raises(ValidationError, match="jump size"):
        load_model(_config(jumps=[{"type": 1, "y": 0.0, "w": 0.1}]))


def test_derive_coefficients_m1(m1):
    der = derive_coefficients(m1)
    assert np.allclose(der.alpha, [0.5, 0.5])
    assert np.allclose(der.var_rate, [0.5, 0.5])
    assert der.bound == 1.0


def test_derive_coefficients_with_jump_atom():
    model = load_model(_config(jumps=[{"type": 1, "y": 2.0, "w": 0.1}]))
    der = derive_coefficients(model)
    # var_rate_1 = 1 * (2*0.25 + 0.1*4) = 0.9
    assert der.var_rate[0] == pytest.approx(0.9, abs=1e-15)
    assert der.var_rate[1] == pytest.approx(0.5, abs=1e-15)


def test_derive_coefficients_degenerate_beta_zero():
    model = load_model(_config(beta=[0.0, 0.0]))
    der = derive_coefficients(model)
    assert np.all(der.alpha == 0) and np.all(der.var_rate == 0) and der.bound == 0.0


def test_bound_is_tight():
    rng = np.random.default_rng(7)
    for _ in range(20):
        model = make_random_model(rng, supercritical=False, jumps=True)
        der = derive_coefficients(model)
        assert der.bound == np.max(np.abs(der.alpha) + der.var_rate)


def test_var_rate_monotone_in_b_and_jump_weight():
    base = load_model(_config(jumps=[{"type": 1, "y": 1.5, "w": 0.2}]))
    bumped_b = load_model(
        _config(b=[0.35, 0.25], jumps=[{"type": 1, "y": 1.5, "w": 0.2}])
    )
    bumped_w = load_model(_config(jumps=[{"type": 1, "y": 1.5, "w": 0.3}]))
    v0 = derive_coefficients(base).var_rate
    assert derive_coefficients(bumped_b).var_rate[0] > v0[0]
    assert derive_coefficients(bumped_w).var_rate[0] > v0[0]


def test_grey_condition():
    assert check_grey_condition(reference_model("sym2"))
    assert not check_grey_condition(load_model(_config(b=[0.0, 0.25])))
    assert not check_grey_condition(load_model(_config(beta=[0.0, 1.0])))


def test_mu0_negative_rejected():
    with pytest.raises(ValidationError, match="mu0"):
        load_config(_config(mu0=[-1.0, 0.0]))
