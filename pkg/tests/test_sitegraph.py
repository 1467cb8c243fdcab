import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from thermograph.kappa import KappaSyntaxError, format_pattern, parse_pattern
from thermograph.shorthand import format_word
from thermograph.sitegraph import (ContactGraph, ContactMap, Embedding, GraphBuilder, NotRealizable, SiteGraph,
                                   canonical_form, check_realizable, count_embeddings, disjoint_union,
                                   embeddings, isomorphic, isomorphism)


def test_contact_graph_partners(cyc):
    assert cyc.partners(("A", "r")) == (("B", "l"),)
    assert cyc.can_bind(("C", "r"), ("A", "l"))
    assert not cyc.can_bind(("A", "r"), ("C", "l"))


def test_site_bound_twice_is_not_realizable():
    g = SiteGraph.build({"a", "b", "c"}, {"x", "y", "z"}, {"x": "a", "y": "b", "z": "c"},
                        [("x", "y"), ("x", "z")])
    assert not check_realizable(g).is_realizable


def test_contact_map_rejects_bad_edges(cyc):
    with pytest.raises(NotRealizable):
        ContactMap(cyc, ["A", "B"], [(0, "A", "r", None), (1, "B", "l", None)], [1, None])
    with pytest.raises(ValueError):
        ContactMap(cyc, ["A", "C"], [(0, "A", "r", None), (1, "C", "l", None)], [1, 0])


def test_word_round_trip(word):
    for w in ["?12?", "^312", "12^3", "cyc(123)", "?1231?", "?1 + 2?", "^23123^1"]:
        assert format_word(word(w)) == w


def test_triangle_embeddings(word):
    tri = word("cyc(123)")
    assert count_embeddings(word("?12?"), tri) == 1
    assert count_embeddings(tri, tri) == 1
    assert count_embeddings(word("?12?"), word("?12312?")) == 2
    # a free end does not embed into a bound one
    assert count_embeddings(word("12"), tri) == 0


def test_dangling_site_maps_to_partner(word):
    pat = word("^312?")
    e = next(embeddings(pat, word("cyc(123)")))
    assert e.is_valid()
    d = pat.dangling_sites()[0]
    assert e.dst.sites[e.sites[d]].agent_type == "C"


def test_disjoint_union_components(word):
    two = disjoint_union(word("cyc(123)"), word("cyc(123)"))
    assert sorted(len(c) for c in two.components()) == [3, 3]
    assert two.is_mixture()


def test_isomorphism_found(cyc):
    a = parse_pattern("A(l!1,r!2), B(l!2,r!3), C(l!3,r!1)", cyc)
    b = parse_pattern("C(r!7,l!8), A(r!5,l!7), B(r!8,l!5)", cyc)
    iso = isomorphism(a, b)
    assert iso is not None and iso.is_iso() and iso.is_valid()


def test_pattern_syntax_errors_carry_codes(cyc):
    with pytest.raises(KappaSyntaxError) as exc:
        parse_pattern("A(l), Q(r)", cyc)
    assert exc.value.code == "E002"
    with pytest.raises(KappaSyntaxError) as exc:
        parse_pattern("A(q)", cyc)
    assert exc.value.code == "E003"
    with pytest.raises(KappaSyntaxError):
        parse_pattern("A(r!1)", cyc)


def random_mixture(contact: ContactGraph, rng, n: int) -> ContactMap:
    b = GraphBuilder(contact)
    free = []
    for _ in range(n):
        a = b.add_agent(str(rng.choice(["A", "B", "C"])))
        for s in ("l", "r"):
            free.append(b.add_site(a, s))
    rng.shuffle(free)
    for i in free:
        if b.partner[i] is not None or rng.random() < 0.3:
            continue
        t = contact.partners((b.sites[i][1], b.sites[i][2]))[0]
        for j in free:
            if b.partner[j] is None and j != i and (b.sites[j][1], b.sites[j][2]) == t:
                b.bind(i, j)
                break
    return b.freeze()


def permute(cm: ContactMap, rng) -> ContactMap:
    pa = rng.permutation(len(cm.agents))
    ps = rng.permutation(len(cm.sites))
    inv_a = {int(o): k for k, o in enumerate(pa)}
    inv_s = {int(o): k for k, o in enumerate(ps)}
    agents = [cm.agents[int(o)] for o in pa]
    sites = []
    partner = []
    for o in ps:
        s = cm.sites[int(o)]
        sites.append((None if s.owner is None else inv_a[s.owner], s.agent_type, s.name, s.state))
        p = cm.partner[int(o)]
        partner.append(None if p is None else inv_s[p])
    return ContactMap(cm.contact, agents, sites, partner)


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(1, 7))
def test_canonical_form_invariant_under_relabeling(cyc, seed, n):
    rng = np.random.default_rng(seed)
    x = random_mixture(cyc, rng, n)
    y = permute(x, rng)
    assert canonical_form(x) == canonical_form(y)
    assert isomorphic(x, y)
    assert count_embeddings(x, y) >= 1


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(1, 7))
def test_embeddings_are_valid_and_compose(cyc, seed, n):
    rng = np.random.default_rng(seed)
    x = random_mixture(cyc, rng, n)
    pat = parse_pattern("A(r!1), B(l!1)", cyc)
    for e in embeddings(pat, x):
        assert e.is_valid()
        assert e.then(Embedding.identity(x)) == e


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(1, 6))
def test_format_parse_round_trip(cyc, seed, n):
    x = random_mixture(cyc, np.random.default_rng(seed), n)
    text = format_pattern(x)
    y = parse_pattern(text, cyc)
    assert isomorphic(x, y)
    assert format_pattern(y) == text
