import math

import pytest
from hypothesis import HealthCheck, given, settings, strategies as st

from thermograph import modelfile
from thermograph.energy import LogAffine, Metropolis, Nonlinear, Symmetric
from thermograph.modelfile import ModelError, eval_expr, load, make_policy, normalize_expr, parse, parse_expr

HEAD = """%agent: A(l!r.B, r!l.B, x~u~p)
%agent: B(l!r.A, r!l.A)
%param: 'k' 1.5
"""


def codes(text):
    with pytest.raises(ModelError) as exc:
        parse(text)
    return [d.code for d in exc.value.diagnostics], exc.value.diagnostics


@pytest.mark.parametrize("body, code", [
    ("%energy: 'e' Q(r!1), B(l!1) @ 'k'\n", "E002"),
    ("%energy: 'e' A(q!1), B(l!1) @ 'k'\n", "E003"),
    ("%energy: 'e' A(x~z) @ 'k'\n", "E004"),
    ("%gen: 'g' A(r), B(l) -> A(r!1), B(l!1)\n", "E005"),
    ("%gen: 'g' A(r), B(l) <-> A(r!1), B(l!1), A(x~u)\n", "E005"),
    ("%energy: 'e' A(r), B(l) @ 'k'\n", "E006"),
    ("%energy: 'e' A(r!1), B(l!1) @ 'nope'\n", "E007"),
    ("%obs: 'o' = 'missing' * 2\n", "E007"),
    ("%param: 'j' 'k' +\n", "E008"),
    ("%bogus: 1\n", "E008"),
    ("%policy: annealing\n", "E009"),
    ("%init: 3 A(r)\n", "E009"),
])
def test_diagnostic_codes(body, code):
    got, diags = codes(HEAD + body)
    assert code in got
    d = next(d for d in diags if d.code == code)
    assert d.line == 4 and d.col >= 1


def test_missing_agents_is_e001():
    assert codes("")[0] == ["E001"]
    assert codes("%param: 'k' 1\n")[0] == ["E001"]


def test_column_points_at_the_offender():
    _, diags = codes(HEAD + "%energy: 'e' A(r!1), Q(l!1) @ 'k'\n")
    assert diags[0].col == len("%energy: 'e' A(r!1), ") + 1


def test_continuation_and_comments():
    mf = parse(HEAD + "# a comment\n%energy: 'e' A(r!1), \\\n   B(l!1) @ 'k' # trailing\n")
    assert mf.energies == [("e", "A(r!1), B(l!1)", "'k'")]


@pytest.mark.parametrize("name", ["triangles.model", "triangles-small.model", "ring.model"])
def test_bundled_round_trip(name):
    mf = parse(modelfile.read_source(name))
    again = parse(mf.to_text())
    assert again == mf
    assert again.to_text() == mf.to_text()


def test_model_compiles(triangles_small):
    m = triangles_small
    assert m.energy.names == ("ab", "bc", "ca", "t")
    assert m.energy.costs == (1.0, 1.0, 1.0, -10.0)
    assert [g.name for g in m.generators] == ["g12", "g23", "g31"]
    assert isinstance(m.policy, Symmetric)
    assert len(m.initial.agents) == 3
    assert [o.name for o in m.observables] == ["triangles", "fraction"]


def test_overrides_change_costs():
    m = load("triangles-small.model", {"t": -2.5})
    assert m.energy.costs[3] == -2.5
    with pytest.raises(ModelError):
        load("triangles-small.model", {"nope": 1.0})


def test_ring_interventions():
    m = load("ring.model")
    assert [(i.time, i.agent, dict(i.states)) for i in m.interventions] == [
        (100.0, "Y", {"s": "p"}), (200.0, "Y", {"s": "u"})]


def test_expressions():
    tree = parse_expr("2 * 'a' - -1 / 'b' ** 2")
    assert eval_expr(tree, {"a": 1.5, "b": 2.0}.__getitem__) == pytest.approx(3.25)
    assert normalize_expr(" 'a'+1 ") == "'a' + 1"
    for bad in ["__import__('os')", "a.b", "[1]", "1 if 1 else 2", "'a'(1)"]:
        with pytest.raises(ValueError):
            parse_expr(bad)
    assert math.isinf(eval_expr(parse_expr("1e400"), {}.__getitem__))


def test_quadratic_weights():
    text = modelfile.read_source("triangles-small.model")
    m = load(text.replace("%policy: symmetric", "%policy: nonlinear beta=0.3 quad.t=1.0"))
    assert m.energy.quadratic == (0.0, 0.0, 0.0, 1.0)
    assert isinstance(m.policy, Nonlinear)
    with pytest.raises(ModelError):
        load(text.replace("%policy: symmetric", "%policy: nonlinear quad.nope=1.0"))


def test_make_policy():
    assert isinstance(make_policy("metropolis", {}), Metropolis)
    assert make_policy("symmetric", {"C.g": "2"}).scale == {"g": 2.0}
    assert isinstance(make_policy("log-affine", {"a": "0.3", "c.g": "1"}), LogAffine)
    nl = make_policy("nonlinear", {"beta": "0.2", "alpha.g": "1", "beta.g": "0.7"})
    assert isinstance(nl, Nonlinear) and nl.beta_of("g", True) == pytest.approx(0.3)
    for kind, opts in [("symmetric", {"bogus": "1"}), ("metropolis", {"a": "1"}), ("symmetric", {"C.g": "x"}),
                       ("symmetric", {"C.g": "-1"}), ("annealing", {})]:
        with pytest.raises(ModelError):
            make_policy(kind, opts)


names = st.text("abcxyz", min_size=1, max_size=4)
numbers = st.floats(-50, 50, allow_nan=False).map(lambda x: round(x, 3))


@st.composite
def models(draw):
    """Random well formed models over the two-agent signature."""
    lines = [HEAD.rstrip()]
    params = ["k"]
    for name in draw(st.lists(names, max_size=3, unique=True)):
        if name != "k":
            lines.append(f"%param: '{name}' {draw(numbers)} * '{draw(st.sampled_from(params))}'")
            params.append(name)
    shapes = ["A(r!1), B(l!1)", "A(x~p)", "A(x~u, r!1), B(l!1)", "B(r!1), A(l!1, x~p)"]
    for i, shape in enumerate(draw(st.lists(st.sampled_from(shapes), max_size=4))):
        lines.append(f"%energy: 'e{i}' {shape} @ '{draw(st.sampled_from(params))}' + {draw(numbers)}")
    if draw(st.booleans()):
        lines.append("%gen: 'g' A(r), B(l) <-> A(r!1), B(l!1)")
    if draw(st.booleans()):
        lines.append("%gen: 'h' A(x~u) <-> A(x~p)")
    kind = draw(st.sampled_from(["symmetric", "metropolis", "log-affine a=0.25", "nonlinear beta=0.5"]))
    lines.append(f"%policy: {kind}")
    for _ in range(draw(st.integers(0, 3))):
        lines.append(f"%init: {draw(st.integers(1, 9))} A(l, r, x~{draw(st.sampled_from('up'))})")
    lines.append("%obs: 'o' A(x~p)")
    lines.append(f"%obs: 'f' = 'o' / {draw(st.integers(1, 9))}")
    return "\n".join(lines) + "\n"


@settings(max_examples=200, deadline=None, suppress_health_check=[HealthCheck.too_slow])
@given(models())
def test_fuzzed_round_trip(text):
    mf = parse(text)
    assert parse(mf.to_text()) == mf


@settings(max_examples=300, deadline=None)
@given(models(), st.data())
def test_mangled_input_never_crashes(text, data):
    k = data.draw(st.integers(0, len(text) - 1))
    junk = data.draw(st.text(max_size=4))
    mangled = text[:k] + junk + text[k + data.draw(st.integers(0, 3)):]
    try:
        parse(mangled)
    except ModelError as exc:
        assert exc.diagnostics and all(d.code in modelfile.CODES for d in exc.diagnostics)
