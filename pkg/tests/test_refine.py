import pytest

from thermograph.refine import (RefinedRuleSet, RefinementDiverged, Refiner, _set_partitions, balance_vector,
                                classify, compute_requests, diameter, enumerate_mature, unique_factor)
from thermograph.rules import invert, mirror_extension, rule_from_sides
from thermograph.sitegraph import canonical_form, embeddings


@pytest.fixture
def g12(word):
    return rule_from_sides(word("?12?"), word("?1 + 2?"), "g12")


def patterns(word):
    return [word("?12?"), word("?23?"), word("?31?"), word("cyc(123)")]


def test_no_patterns_leaves_generator_alone(g12):
    refs = enumerate_mature(g12, [])
    assert len(refs) == 1
    assert refs[0].extension.t == g12.lhs
    assert refs[0].balance == ()


def test_bond_pattern_alone_needs_no_context(word, g12):
    refs = enumerate_mature(g12, [word("?12?")])
    assert [r.balance for r in refs] == [(-1,)]


def test_triangle_balances(word, g12):
    refs = enumerate_mature(g12, patterns(word))
    closed = [r for r in refs if canonical_form(r.extension.t) == canonical_form(word("cyc(123)"))]
    assert [r.balance for r in closed] == [(-1, 0, 0, -1)]
    assert all(r.balance[0] == -1 and r.balance[1:3] == (0, 0) for r in refs)
    assert sum(r.balance[3] == -1 for r in refs) == 1
    assert sorted(r.rule.name for r in refs) == sorted(f"g12_{k}" for k in range(len(refs)))


def test_balance_matches_counts(word, g12):
    for r in enumerate_mature(g12, patterns(word)):
        assert r.balance == balance_vector(r.extension.t, r.extension.t_star, patterns(word))


def test_inverse_refinement(word, g12):
    r = enumerate_mature(g12, patterns(word))[0]
    inv = r.inverse()
    assert inv.balance == tuple(-x for x in r.balance)
    assert inv.rule.lhs == r.rule.rhs
    assert inv.inverse().balance == r.balance


def test_ruleset_is_closed_under_inversion(word, g12):
    rs = RefinedRuleSet.build([g12], patterns(word))
    assert set(rs.by_generator) == {"g12", invert(g12).name}
    for fw, bw in rs.pairs():
        assert bw.balance == tuple(-x for x in fw.balance)
    assert len(rs.all()) == 16


def test_requests_and_maturity(word, g12):
    ext = mirror_extension(g12, next(embeddings(g12.lhs, word("?12? + ?3"))))
    assert classify(g12, ext, patterns(word)).status in {"immature", "overgrown", "mature"}
    tri = mirror_extension(g12, next(embeddings(g12.lhs, word("cyc(123)"))))
    assert classify(g12, tri, patterns(word)).status == "mature"
    req = compute_requests(g12, tri, patterns(word))
    assert all(req[a] == {"l", "r"} for a in req)


def test_divergence_guard(word, g12):
    with pytest.raises(RefinementDiverged):
        Refiner(g12, patterns(word), max_nodes=2).run()


def test_unique_factor_on_triangle(word, g12):
    refs = enumerate_mature(g12, patterns(word))
    tri = word("cyc(123)")
    k, e = unique_factor(g12.lhs, next(embeddings(g12.lhs, tri)), refs)
    assert canonical_form(refs[k].extension.t) == canonical_form(tri)
    assert e.is_valid()


def test_diameter(word):
    assert diameter(word("cyc(123)")) == 1
    assert diameter(word("12312")) == 4


@pytest.mark.parametrize("n, bell", [(0, 1), (1, 1), (3, 5), (4, 15)])
def test_set_partitions_count(n, bell):
    assert sum(1 for _ in _set_partitions(list(range(n)))) == bell
