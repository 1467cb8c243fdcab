"""Minimal gluings (multi-sums), pullbacks, pushouts and relevance.

A minimal gluing of ``a`` and ``b`` is determined by its overlap, the
pullback of the cospan.  Concretely the overlap is a partial bijection
between the agents and sites of the two graphs that is *closed*:

* identified owned sites force their owners to be identified;
* identified agents force their same-named sites to be identified;
* identified bound sites force their partners to be identified;

and *consistent*: types and states agree, free sites only meet free sites,
and no merged agent ends up with two copies of a site.  Every such closed
relation has a realizable pushout whose pullback is the relation again, so
enumerating closed relations enumerates minimal gluings exactly once each.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Optional, Sequence

from .sitegraph import (ContactMap, Embedding, GraphBuilder, NotRealizable, SiteGraph,
                        canonical_form, check_realizable)


@dataclass(frozen=True)
class Overlap:
    """A closed partial bijection between ``a`` and ``b``."""

    agents: tuple[tuple[int, int], ...]
    sites: tuple[tuple[int, int], ...]

    @property
    def key(self):
        return (self.agents, self.sites)

    def site_map(self) -> dict[int, int]:
        return dict(self.sites)

    def agent_map(self) -> dict[int, int]:
        return dict(self.agents)


def _close(a: ContactMap, b: ContactMap, fa: dict, fs: dict, pending: list) -> Optional[tuple[dict, dict]]:
    fa = dict(fa)
    fs = dict(fs)
    ra = {v: k for k, v in fa.items()}
    rs = {v: k for k, v in fs.items()}
    while pending:
        kind, x, y = pending.pop()
        if kind == "A":
            if fa.get(x) == y:
                continue
            if x in fa or y in ra or a.agents[x] != b.agents[y]:
                return None
            fa[x] = y
            ra[y] = x
            for s in a.sites_of(x):
                t = b.site_at(y, a.sites[s].name)
                if t is not None:
                    pending.append(("S", s, t))
            # a dangling site already glued onto an absent site of the partner
            for s in a.sites_of(x):
                if s in fs and b.sites[fs[s]].owner is None and b.site_at(y, a.sites[s].name) is not None:
                    return None
            for t in b.sites_of(y):
                if t in rs and a.sites[rs[t]].owner is None and a.site_at(x, b.sites[t].name) is not None:
                    return None
        else:
            if fs.get(x) == y:
                continue
            if x in fs or y in rs:
                return None
            sa, tb = a.sites[x], b.sites[y]
            if sa.type != tb.type:
                return None
            if sa.state is not None and tb.state is not None and sa.state != tb.state:
                return None
            pa, pb = a.partner[x], b.partner[y]
            if (pa is None) != (pb is None):
                return None
            if sa.owner is not None and tb.owner is not None:
                pending.append(("A", sa.owner, tb.owner))
            elif sa.owner is not None:
                yy = fa.get(sa.owner)
                if yy is not None and b.site_at(yy, sa.name) is not None:
                    return None
            elif tb.owner is not None:
                xx = ra.get(tb.owner)
                if xx is not None and a.site_at(xx, tb.name) is not None:
                    return None
            fs[x] = y
            rs[y] = x
            if pa is not None:
                pending.append(("S", pa, pb))
    return fa, fs


def _overlap(fa, fs) -> Overlap:
    return Overlap(tuple(sorted(fa.items())), tuple(sorted(fs.items())))


def _atoms(a: ContactMap, b: ContactMap):
    atoms = []
    for x, tx in enumerate(a.agents):
        for y, ty in enumerate(b.agents):
            if tx == ty:
                atoms.append(("A", x, y))
    for s, sa in enumerate(a.sites):
        for t, tb in enumerate(b.sites):
            if (sa.owner is None or tb.owner is None) and sa.type == tb.type:
                atoms.append(("S", s, t))
    return atoms


def overlaps(a: ContactMap, b: ContactMap, required: Optional[Iterable[int]] = None) -> list[Overlap]:
    """All closed overlaps of ``a`` and ``b``.

    With ``required`` (sites of ``b``), only overlaps that identify at least
    one of those sites are returned.  Order is deterministic.
    """
    atoms = _atoms(a, b)
    starts = []
    if required is None:
        starts.append(({}, {}))
    else:
        for t in sorted(set(required)):
            for s, sa in enumerate(a.sites):
                if sa.type == b.sites[t].type:
                    r = _close(a, b, {}, {}, [("S", s, t)])
                    if r is not None:
                        starts.append(r)
    # Every closed relation is reached by adding its atoms in increasing
    # order, so only atoms past the last one added need to be tried.
    seen: dict = {}
    best: dict = {}
    stack = [(fa, fs, -1) for fa, fs in reversed(starts)]
    while stack:
        fa, fs, last = stack.pop()
        ov = _overlap(fa, fs)
        if ov.key in best and best[ov.key] <= last:
            continue
        best[ov.key] = last
        seen[ov.key] = ov
        for j in range(last + 1, len(atoms)):
            kind, x, y = atoms[j]
            if kind == "A" and fa.get(x) == y or kind == "S" and fs.get(x) == y:
                continue
            r = _close(a, b, fa, fs, [(kind, x, y)])
            if r is not None:
                stack.append((r[0], r[1], j))
    return sorted(seen.values(), key=lambda o: (len(o.agents) + len(o.sites), o.key))


# ---------------------------------------------------------------------------
# pushouts and pullbacks


@dataclass(frozen=True)
class Span:
    apex: ContactMap
    left: Embedding
    right: Embedding


@dataclass(frozen=True)
class MinimalGluing:
    a: ContactMap
    b: ContactMap
    overlap: Overlap
    glued: ContactMap
    left: Embedding
    right: Embedding

    def span(self) -> Span:
        return apex_of(self.a, self.b, self.overlap)

    def cospan_key(self) -> bytes:
        """Canonical form of the cospan (glued graph marked with both legs)."""
        labels = {}
        for x, y in enumerate(self.left.agents):
            labels[("a", y)] = f"L{x}"
        for x, y in enumerate(self.right.agents):
            labels[("a", y)] = labels.get(("a", y), "") + f"R{x}"
        for s, t in enumerate(self.left.sites):
            labels[("s", t)] = f"L{s}"
        for s, t in enumerate(self.right.sites):
            labels[("s", t)] = labels.get(("s", t), "") + f"R{s}"
        return canonical_form(self.glued, labels)


def glue(a: ContactMap, b: ContactMap, ov: Overlap) -> MinimalGluing:
    """Pushout of a closed overlap."""
    fa, fs = ov.agent_map(), ov.site_map()
    ra = {v: k for k, v in fa.items()}
    rs = {v: k for k, v in fs.items()}
    g = GraphBuilder(a.contact, a.agents)
    bag = {}
    for y, t in enumerate(b.agents):
        bag[y] = ra[y] if y in ra else g.add_agent(t)
    for s in a.sites:
        g.sites.append([s.owner, s.agent_type, s.name, s.state])
        g.partner.append(None)
    bsite = {}
    for t, tb in enumerate(b.sites):
        owner = None if tb.owner is None else bag[tb.owner]
        if t in rs:
            s = rs[t]
            bsite[t] = s
            rec = g.sites[s]
            if rec[0] is None and owner is not None:
                rec[0] = owner
            if rec[3] is None:
                rec[3] = tb.state
        else:
            bsite[t] = g.add_site(owner, tb.name, tb.state, agent_type=tb.agent_type)
    for s, p in enumerate(a.partner):
        if p is not None:
            g.partner[s] = p
    for t, p in enumerate(b.partner):
        if p is not None:
            g.partner[bsite[t]] = bsite[p]
    glued = g.freeze()
    left = Embedding(a, glued, tuple(range(len(a.agents))), tuple(range(len(a.sites))))
    right = Embedding(b, glued, tuple(bag[y] for y in range(len(b.agents))),
                      tuple(bsite[t] for t in range(len(b.sites))))
    return MinimalGluing(a, b, ov, glued, left, right)


def apex_of(a: ContactMap, b: ContactMap, ov: Overlap) -> Span:
    """The span ``a <- apex -> b`` described by an overlap."""
    fa, fs = ov.agent_map(), ov.site_map()
    g = GraphBuilder(a.contact)
    amap = {}
    for x in sorted(fa):
        amap[x] = g.add_agent(a.agents[x])
    smap = {}
    for s in sorted(fs):
        sa, tb = a.sites[s], b.sites[fs[s]]
        owner = amap.get(sa.owner) if sa.owner is not None and tb.owner is not None else None
        state = sa.state if sa.state == tb.state else None
        smap[s] = g.add_site(owner, sa.name, state, agent_type=sa.agent_type)
    for s in fs:
        p = a.partner[s]
        if p is not None and p in smap:
            g.partner[smap[s]] = smap[p]
    apex = g.freeze()
    inv_a = {v: k for k, v in amap.items()}
    inv_s = {v: k for k, v in smap.items()}
    left = Embedding(apex, a, tuple(inv_a[i] for i in range(len(apex.agents))),
                     tuple(inv_s[i] for i in range(len(apex.sites))))
    right = Embedding(apex, b, tuple(fa[inv_a[i]] for i in range(len(apex.agents))),
                      tuple(fs[inv_s[i]] for i in range(len(apex.sites))))
    return Span(apex, left, right)


def minimal_gluings(a: ContactMap, b: ContactMap) -> list[MinimalGluing]:
    """One representative per isomorphism class of minimal gluings."""
    return [glue(a, b, ov) for ov in overlaps(a, b)]


def pullback(left: Embedding, right: Embedding) -> Span:
    """Pullback of a cospan ``left: a -> m <- b :right``."""
    a, b = left.src, right.src
    inv_a = {m: y for y, m in enumerate(right.agents)}
    inv_s = {m: t for t, m in enumerate(right.sites)}
    fa = {x: inv_a[m] for x, m in enumerate(left.agents) if m in inv_a}
    fs = {s: inv_s[m] for s, m in enumerate(left.sites) if m in inv_s}
    return apex_of(a, b, _overlap(fa, fs))


@dataclass(frozen=True)
class PushoutResult:
    """Pushout in plain site graphs, plus the realizable version if any."""

    raw: SiteGraph
    glued: Optional[ContactMap]
    reason: str = ""

    @property
    def ok(self) -> bool:
        return self.glued is not None


def _raw_pushout(span: Span) -> SiteGraph:
    a, b = span.left.dst, span.right.dst
    agent = {("b", span.right.agents[i]): ("a", span.left.agents[i]) for i in range(len(span.apex.agents))}
    site = {("b", span.right.sites[i]): ("a", span.left.sites[i]) for i in range(len(span.apex.sites))}
    ag = lambda k: agent.get(k, k)
    st = lambda k: site.get(k, k)
    agents = {("a", x) for x in range(len(a.agents))} | {ag(("b", y)) for y in range(len(b.agents))}
    sites = {("a", i) for i in range(len(a.sites))} | {st(("b", i)) for i in range(len(b.sites))}
    owner = {}
    for tag, g in (("a", a), ("b", b)):
        for i, x in enumerate(g.sites):
            if x.owner is not None:
                owner[st((tag, i))] = ag((tag, x.owner))
    edges = {frozenset((st(("a", i)), st(("a", j)))) for i, j in a.edges()}
    edges |= {frozenset((st(("b", i)), st(("b", j)))) for i, j in b.edges()}
    return SiteGraph.build(agents, sites, owner, edges)


def pushout(span: Span) -> PushoutResult:
    """Pushout of a span of embeddings.

    The pushout always exists as a plain site graph (``raw``); ``glued`` is
    set only when that graph is realizable and locally injective.
    """
    raw = _raw_pushout(span)
    report = check_realizable(raw)
    if not report.is_realizable:
        kind, where = report.violations[0]
        return PushoutResult(raw, None, f"{kind} at {where}")
    seen = {}
    for s, x in raw.owner.items():
        g = span.left.dst if s[0] == "a" else span.right.dst
        key = (x, g.sites[s[1]].name)
        if key in seen:
            return PushoutResult(raw, None, f"agent {x} carries site {key[1]} twice")
        seen[key] = s
    a, b = span.left.dst, span.right.dst
    fa = {span.left.agents[i]: span.right.agents[i] for i in range(len(span.apex.agents))}
    fs = {span.left.sites[i]: span.right.sites[i] for i in range(len(span.apex.sites))}
    for s, t in fs.items():
        x, y = a.sites[s], b.sites[t]
        if x.state is not None and y.state is not None and x.state != y.state:
            return PushoutResult(raw, None, f"state clash at site {s}")
    try:
        return PushoutResult(raw, glue(a, b, _overlap(fa, fs)).glued)
    except (NotRealizable, KeyError) as exc:
        return PushoutResult(raw, None, str(exc))


def is_pullback(span: Span) -> bool:
    """True iff the span is the pullback of its own pushout."""
    res = pushout(span)
    if not res.ok:
        return False
    a, b = span.left.dst, span.right.dst
    fa = {span.left.agents[i]: span.right.agents[i] for i in range(len(span.apex.agents))}
    fs = {span.left.sites[i]: span.right.sites[i] for i in range(len(span.apex.sites))}
    closed = _close(a, b, fa, fs, [])
    return closed is not None and closed == (fa, fs)


# ---------------------------------------------------------------------------
# relevance


@dataclass(frozen=True)
class RelevanceTag:
    relevant: bool
    witness_sites: frozenset


def modified_sites(lhs: ContactMap, rhs: ContactMap) -> list[int]:
    """Sites whose edge or internal state differ between the two sides."""
    out = []
    for i, (x, y) in enumerate(zip(lhs.sites, rhs.sites)):
        if x.state != y.state:
            out.append(i)
            continue
        pl, pr = lhs.partner[i], rhs.partner[i]
        if pl != pr:
            out.append(i)
    return out


def classify_relevance(mg: MinimalGluing, rule, side: str = "left") -> RelevanceTag:
    """Is the gluing relevant to ``rule`` (applied on the given side)?"""
    source = rule.lhs if side == "left" else rule.rhs
    if mg.b == source:
        rule_leg, pat_leg = mg.right, mg.left
    elif mg.a == source:
        rule_leg, pat_leg = mg.left, mg.right
    else:
        raise ValueError("neither leg of the gluing starts at the rule side")
    touched = set(pat_leg.sites)
    witness = frozenset(rule_leg.sites[i] for i in rule.modified_sites() if rule_leg.sites[i] in touched)
    return RelevanceTag(bool(witness), witness)


def relevant_overlaps(pattern: ContactMap, t: ContactMap, modified: Sequence[int]) -> list[Overlap]:
    """Overlaps of ``pattern`` with ``t`` touching one of the modified sites of ``t``."""
    if not modified:
        return []
    return overlaps(pattern, t, modified)


def absorbs(pattern: ContactMap, t: ContactMap, ov: Overlap) -> bool:
    """True iff the leg ``t -> glued`` is an isomorphism."""
    if len(ov.agents) != len(pattern.agents) or len(ov.sites) != len(pattern.sites):
        return False
    for s, u in ov.sites:
        sp, st = pattern.sites[s], t.sites[u]
        if st.state is None and sp.state is not None:
            return False
        if st.owner is None and sp.owner is not None:
            return False
    return True
