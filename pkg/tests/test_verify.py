import json
import math

import pytest

from thermograph import modelfile
from thermograph.energy import Metropolis, Mutated, Nonlinear
from thermograph.sitegraph import canonical_form
from thermograph.verify import (StateSpaceTooLarge, certify, check_detailed_balance, compare_empirical,
                                enumerate_states, lumped_pi, stationary_expectation)

# log(1 + 3 e^-1 + 3 e^-2 + e^7): no bond, one bond, two bonds, closed triangle
LOG_Z = 7.0022858846353735
TRIANGLE_MEAN = 0.997716726009319


@pytest.fixture(scope="module")
def space(triangles_small):
    m = triangles_small
    return enumerate_states(m.ruleset(), m.energy, m.policy, m.initial)


def test_eight_states(space):
    assert len(space) == 8
    assert sum(len(out) for out in space.q) == 24


def test_partition_function(space):
    assert space.log_z == pytest.approx(LOG_Z, abs=1e-12)
    assert math.log(1 + 3 * math.exp(-1) + 3 * math.exp(-2) + math.exp(7)) == pytest.approx(LOG_Z, abs=1e-12)
    assert space.pi.sum() == pytest.approx(1.0, abs=1e-14)


def test_expectations_agree(space, triangles_small):
    tri = triangles_small.pattern("A(l!3, r!1), B(l!1, r!2), C(l!2, r!3)")
    assert stationary_expectation(space, 3) == pytest.approx(TRIANGLE_MEAN, abs=1e-12)
    assert stationary_expectation(space, tri) == pytest.approx(TRIANGLE_MEAN, abs=1e-12)
    assert stationary_expectation(space, lambda x: len(x.edges())) == pytest.approx(
        3 * TRIANGLE_MEAN + sum(space.pi[i] * len(x.edges()) for i, x in enumerate(space.states)
                                if space.counts[i, 3] == 0), abs=1e-12)


def test_balance_passes(space):
    rep = check_detailed_balance(space)
    assert rep.passed and rep.max_rel_error < 1e-12
    assert rep.transitions == 24
    d = json.loads(rep.to_json())
    assert d["passed"] is True and d["states"] == 8
    assert rep.to_text().startswith("PASS")


@pytest.mark.parametrize("policy", [Metropolis(), Nonlinear(default_beta=0.3)])
def test_other_policies_pass(triangles_small, policy):
    m = triangles_small
    assert certify(m.ruleset(), m.energy, policy, m.initial).passed


def test_mutated_rate_fails(triangles_small):
    m = triangles_small
    name = m.ruleset().all()[3].rule.name
    rep = certify(m.ruleset(), m.energy, Mutated(m.policy, name, 3.0), m.initial)
    assert not rep.passed
    assert rep.max_rel_error == pytest.approx(2 / 3)
    assert rep.to_text().startswith("FAIL") and "worst pair" in rep.to_text()


def test_cap(triangles_small):
    m = triangles_small
    with pytest.raises(StateSpaceTooLarge):
        enumerate_states(m.ruleset(), m.energy, m.policy, m.initial, cap=3)


def test_lumping_and_empirical(space):
    lumped = lumped_pi(space)
    # the three agent types are distinct, so no two states are isomorphic
    assert len(lumped) == 8
    assert sum(lumped.values()) == pytest.approx(1.0)
    occ = dict(lumped)
    assert compare_empirical(space, occ).within(1e-12)
    occ[canonical_form(space.states[0])] += 0.1
    cmp = compare_empirical(space, occ)
    assert not cmp.within(1e-3)
    assert cmp.to_text().startswith("max absolute occupancy error")


def test_two_per_type_oracle():
    text = modelfile.read_source("triangles-small.model").replace("%init: 1", "%init: 2")
    m = modelfile.load(text, {"t": -2.5})
    sp = enumerate_states(m.ruleset(), m.energy, m.policy, m.initial)
    assert len(sp) == 343
    assert stationary_expectation(sp, 3) == pytest.approx(0.4546192296446828, abs=1e-12)
