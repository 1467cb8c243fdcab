"""Absorb-or-avoid refinement of a generator against a set of energy patterns.

Starting from the identity on the generator's left-hand side, extensions
are grown until every one is *mature* (its revealed sites are exactly the
requested ones) and *balanced* on both sides (every relevant gluing of
every pattern is absorbed by the extension).  Growth is a case split, so
the emitted extensions decompose every match of the left-hand side in a
mixture uniquely.

Site requests of an extension ``t`` come from the generator's own sites and
from every relevant gluing of a pattern with a *prefix* of ``t`` (a
sub-graph containing the generator's image), on the left and on the
mirrored right side.  Requests made at a prefix survive further growth even
when the growth itself destroys the gluing.

When an extension has all its requested sites but a pattern still wraps
onto one of its dangling sites, the dangling sites involved are made
concrete: each block of them lands either on an existing agent missing
those sites or on a fresh agent.
"""

from __future__ import annotations

import itertools
from collections import deque
from dataclasses import dataclass, field
from typing import Iterator, Optional, Sequence

from .gluing import Overlap, absorbs, overlaps
from .rules import Extension, Rule, _replay, invert, mirror_extension
from .sitegraph import (ContactMap, Embedding, canonical_form, canonical_labeling, count_embeddings,
                        embeddings)


class RefinementDiverged(RuntimeError):
    pass


class DecompositionError(RuntimeError):
    pass


@dataclass(frozen=True)
class Node:
    t: ContactMap
    agents: tuple[int, ...]
    sites: tuple[int, ...]
    forced: frozenset = frozenset()
    moves: tuple[str, ...] = ()


@dataclass(frozen=True)
class MaturityStatus:
    status: str  # immature | mature | overgrown
    missing: tuple = ()
    extra: tuple = ()


@dataclass(frozen=True)
class Refinement:
    """An emitted extension together with its refined rule and balance."""

    extension: Extension
    rule: Rule
    balance: tuple[int, ...]
    moves: tuple[str, ...] = ()

    def inverse(self, name: Optional[str] = None) -> "Refinement":
        ext = self.extension.inverse()
        return Refinement(ext, Rule(ext.t, ext.t_star, name or invert(self.rule).name),
                          tuple(-x for x in self.balance), self.moves)


def diameter(cm: ContactMap) -> int:
    best = 0
    for a in range(len(cm.agents)):
        best = max(best, max(_distances(cm, [a]).values(), default=0))
    return best


def _distances(cm: ContactMap, roots) -> dict[int, int]:
    dist = {r: 0 for r in roots}
    queue = deque(roots)
    while queue:
        u = queue.popleft()
        for w in cm.neighbours(u):
            if w not in dist:
                dist[w] = dist[u] + 1
                queue.append(w)
    return dist


def _set_partitions(items: list) -> Iterator[list[list]]:
    if not items:
        yield []
        return
    first, rest = items[0], items[1:]
    for part in _set_partitions(rest):
        yield [[first]] + part
        for i in range(len(part)):
            yield part[:i] + [[first] + part[i]] + part[i + 1:]


def balance_vector(t: ContactMap, t_star: ContactMap, patterns: Sequence[ContactMap]) -> tuple[int, ...]:
    return tuple(count_embeddings(c, t_star) - count_embeddings(c, t) for c in patterns)


def extension_balance(ext: Extension, patterns: Sequence[ContactMap]) -> tuple[int, ...]:
    """Balance vector of an extension; raises ``ValueError`` if it is not balanced.

    An unbalanced extension leaves some relevant gluing unabsorbed, so its
    count difference would depend on the context it is applied in.
    """
    node = Node(ext.t, ext.phi.agents, ext.phi.sites)
    bad = Refiner(ext.base, patterns).unbalanced(node)
    if bad is not None:
        raise ValueError(f"extension of {ext.base.name} is not balanced ({bad[2]} side)")
    return balance_vector(ext.t, ext.t_star, patterns)


class Refiner:
    """Refines one generator against a fixed list of connected patterns."""

    def __init__(self, rule: Rule, patterns: Sequence[ContactMap], max_nodes: int = 20000):
        for c in patterns:
            if not c.is_connected():
                raise ValueError("energy patterns must be connected")
        self.rule = rule
        self.patterns = list(patterns)
        self.contact = rule.lhs.contact
        self.max_nodes = max_nodes
        self.radius = max((diameter(c) for c in self.patterns), default=0) + 1
        constrained = set()
        for cm in self.patterns + [rule.lhs, rule.rhs]:
            for s in cm.sites:
                if s.state is not None:
                    constrained.add(s.type)
        self.constrained = constrained
        self._cache: dict = {}

    # -- small helpers -------------------------------------------------

    def phi(self, node: Node) -> Embedding:
        return Embedding(self.rule.lhs, node.t, node.agents, node.sites)

    def star(self, node: Node) -> ContactMap:
        return _replay(self.rule, self.phi(node), node.t)

    def key(self, node: Node) -> bytes:
        labels = _image_labels(self.phi(node))
        for (a, name) in node.forced:
            s = node.t.site_at(a, name)
            labels[("s", s)] = labels.get(("s", s), "") + "F"
        return canonical_form(node.t, labels)

    def _states(self, st) -> list:
        if st in self.constrained:
            return list(self.contact.states.get(st, ())) or [None]
        return [None]

    # -- prefixes and requests ------------------------------------------

    def prefixes(self, node: Node):
        """Sub-graphs of ``t`` containing the image, as (t1, agent map, phi1)."""
        t = node.t
        img_a = set(node.agents)
        img_s = set(node.sites)
        others = [a for a in range(len(t.agents)) if a not in img_a]
        for r in range(len(others) + 1):
            for chosen in itertools.combinations(others, r):
                kept = img_a | set(chosen)
                must = [s for s in img_s if t.sites[s].owner in img_a]
                optional = [s for a in sorted(kept) for s in t.sites_of(a) if s not in must]
                for k in range(len(optional) + 1):
                    for sub in itertools.combinations(optional, k):
                        built = self._build_prefix(node, kept, set(must) | set(sub))
                        if built is not None:
                            yield built

    def _build_prefix(self, node: Node, kept: set, owned: set):
        t = node.t
        dangling = set()
        for s in owned:
            p = t.partner[s]
            if p is not None and p not in owned:
                dangling.add(p)
        for s in node.sites:
            if s not in owned and s not in dangling:
                return None
        amap = sorted(kept)
        ainv = {a: i for i, a in enumerate(amap)}
        smap = sorted(owned | dangling)
        sinv = {s: i for i, s in enumerate(smap)}
        sites = []
        for s in smap:
            x = t.sites[s]
            if s in owned:
                sites.append((ainv[x.owner], x.agent_type, x.name, x.state))
            else:
                sites.append((None, x.agent_type, x.name, x.state))
        partner = [None if t.partner[s] is None else sinv[t.partner[s]] for s in smap]
        t1 = ContactMap(t.contact, [t.agents[a] for a in amap], sites, partner, check=False)
        phi1 = Embedding(self.rule.lhs, t1, tuple(ainv[a] for a in node.agents),
                         tuple(sinv[s] for s in node.sites))
        return t1, amap, phi1

    def requests(self, node: Node) -> dict[int, set]:
        t = node.t
        req: dict[int, set] = {a: set() for a in range(len(t.agents))}
        for s in node.sites:
            x = t.sites[s]
            if x.owner is not None:
                req[x.owner].add(x.name)
        if not self.patterns:
            return req
        for t1, amap, phi1 in self.prefixes(node):
            code, order = canonical_labeling(t1, _image_labels(phi1))
            found = self._cache.get(code)
            if found is None:
                rank = {a: k for k, a in enumerate(order)}
                found = {(rank[u], n) for u, n in self._prefix_requests(t1, phi1)}
                self._cache[code] = found
            for k, n in found:
                req[amap[order[k]]].add(n)
        return req

    def _prefix_requests(self, t1: ContactMap, phi1: Embedding):
        hot = [phi1.sites[i] for i in self.rule.modified]
        t1s = _replay(self.rule, phi1, t1)
        for side in (t1, t1s):
            for c in self.patterns:
                for ov in overlaps(c, side, hot):
                    for x, u in ov.agents:
                        for s in c.sites_of(x):
                            yield u, c.sites[s].name

    def classify(self, node: Node, req: Optional[dict] = None) -> MaturityStatus:
        req = self.requests(node) if req is None else req
        t = node.t
        present = {(t.sites[s].owner, t.sites[s].name) for s in range(len(t.sites))
                   if t.sites[s].owner is not None}
        wanted = {(a, n) for a, ns in req.items() for n in ns} | set(node.forced)
        missing = tuple(sorted(wanted - present))
        extra = tuple(sorted(present - wanted))
        if missing:
            return MaturityStatus("immature", missing, extra)
        if extra:
            return MaturityStatus("overgrown", missing, extra)
        return MaturityStatus("mature")

    # -- balance --------------------------------------------------------

    def unbalanced(self, node: Node):
        """First relevant gluing that the extension fails to absorb, if any."""
        hot = [node.sites[i] for i in self.rule.modified]
        for side, g in (("left", node.t), ("right", self.star(node))):
            for c in self.patterns:
                for ov in overlaps(c, g, hot):
                    if not absorbs(c, g, ov):
                        return c, ov, side
        return None

    # -- growth ---------------------------------------------------------

    def grow(self, node: Node, u: int, name: str) -> list[Node]:
        t = node.t
        st = (t.agents[u], name)
        out = []
        for state in self._states(st):
            b = t.edit()
            b.add_site(u, name, state)
            out.append(self._child(node, b, f"{st[0]}.{name}{_st(state)} free"))
        for d in t.dangling_sites():
            if t.sites[d].type != st:
                continue
            states = [t.sites[d].state] if t.sites[d].state is not None else self._states(st)
            for state in states:
                b = t.edit()
                b.set_owner(d, u)
                b.set_state(d, state)
                z = t.sites[t.partner[d]]
                out.append(self._child(node, b, f"{st[0]}.{name}{_st(state)} onto {z.agent_type}.{z.name}"))
        for pt in self.contact.partners(st):
            for state in self._states(st):
                b = t.edit()
                s = b.add_site(u, name, state)
                d = b.add_site(None, pt[1], agent_type=pt[0])
                b.bind(s, d)
                out.append(self._child(node, b, f"{st[0]}.{name}{_st(state)} bound to {pt[0]}.{pt[1]}"))
        return out

    def _child(self, node: Node, b, move: str, forced=()) -> Node:
        t = b.freeze()
        return Node(t, node.agents, node.sites, node.forced | frozenset(forced), node.moves + (move,))

    def resolve(self, node: Node, c: ContactMap, ov: Overlap, side: str) -> list[Node]:
        t = node.t
        implicated = sorted(v for s, v in ov.sites
                            if t.sites[v].owner is None and c.sites[s].owner is not None)
        if implicated:
            return self._concretize(node, implicated)
        for s, v in ov.sites:
            if c.sites[s].state is not None and t.sites[v].state is None:
                out = []
                for state in self.contact.states.get(t.sites[v].type, ()):
                    b = t.edit()
                    b.set_state(v, state)
                    out.append(self._child(node, b, f"{t.sites[v].agent_type}.{t.sites[v].name}{_st(state)}"))
                return out
        raise RuntimeError("unbalanced gluing with nothing to resolve")

    def _concretize(self, node: Node, implicated: list[int]) -> list[Node]:
        t = node.t
        out = []
        for blocks in _set_partitions(implicated):
            ok = True
            for blk in blocks:
                types = {t.sites[d].agent_type for d in blk}
                names = [t.sites[d].name for d in blk]
                if len(types) != 1 or len(set(names)) != len(names):
                    ok = False
            if not ok:
                continue
            choices = []
            for blk in blocks:
                atype = t.sites[blk[0]].agent_type
                names = {t.sites[d].name for d in blk}
                opts = [None]
                for w, wt in enumerate(t.agents):
                    if wt == atype and not any(t.site_at(w, n) is not None for n in names):
                        opts.append(w)
                choices.append(opts)
            for pick in itertools.product(*choices):
                used = [w for w in pick if w is not None]
                if len(used) != len(set(used)):
                    continue
                b = t.edit()
                forced = []
                desc = []
                for blk, w in zip(blocks, pick):
                    if w is None:
                        w = b.add_agent(t.sites[blk[0]].agent_type)
                        desc.append(f"new {b.agents[w]}")
                    else:
                        desc.append(f"existing {b.agents[w]}")
                    for d in blk:
                        b.set_owner(d, w)
                        forced.append((w, t.sites[d].name))
                out.append(self._child(node, b, "close " + ", ".join(desc), forced))
        return out

    # -- main loop --------------------------------------------------------

    def root(self) -> Node:
        g = self.rule.lhs
        return Node(g, tuple(range(len(g.agents))), tuple(range(len(g.sites))))

    def run(self) -> list[Refinement]:
        start = self.root()
        queue = deque([start])
        seen = {self.key(start)}
        emitted: list[Refinement] = []
        expanded = 0
        while queue:
            node = queue.popleft()
            expanded += 1
            if expanded > self.max_nodes:
                raise RefinementDiverged(f"{self.rule.name}: more than {self.max_nodes} candidate extensions")
            far = max(_distances(node.t, list(set(node.agents)) or [0]).values(), default=0)
            if far > self.radius:
                raise RefinementDiverged(
                    f"{self.rule.name}: extension reaches distance {far} from the rule, bound is {self.radius}")
            status = self.classify(node)
            if status.status == "immature":
                u, name = status.missing[0]
                children = self.grow(node, u, name)
            elif status.status == "overgrown":
                continue
            else:
                bad = self.unbalanced(node)
                if bad is None:
                    ext = mirror_extension(self.rule, self.phi(node))
                    emitted.append(Refinement(ext, ext.refined_rule(),
                                              balance_vector(ext.t, ext.t_star, self.patterns), node.moves))
                    continue
                children = self.resolve(node, *bad)
            for ch in children:
                k = self.key(ch)
                if k not in seen:
                    seen.add(k)
                    queue.append(ch)
        for k, ref in enumerate(emitted):
            name = f"{self.rule.name}_{k}"
            emitted[k] = Refinement(ref.extension, ref.extension.refined_rule(name), ref.balance, ref.moves)
        return emitted


def _image_labels(phi: Embedding) -> dict:
    labels = {}
    for i, a in enumerate(phi.agents):
        labels[("a", a)] = f"g{i}"
    for i, s in enumerate(phi.sites):
        labels[("s", s)] = f"g{i}"
    return labels


def _st(state) -> str:
    return "" if state is None else f"~{state}"


def enumerate_mature(rule: Rule, patterns: Sequence[ContactMap]) -> list[Refinement]:
    return Refiner(rule, patterns).run()


def compute_requests(rule: Rule, ext: Extension, patterns: Sequence[ContactMap]) -> dict[int, set]:
    ref = Refiner(rule, patterns)
    return ref.requests(Node(ext.t, ext.phi.agents, ext.phi.sites))


def classify(rule: Rule, ext: Extension, patterns: Sequence[ContactMap]) -> MaturityStatus:
    ref = Refiner(rule, patterns)
    return ref.classify(Node(ext.t, ext.phi.agents, ext.phi.sites))


@dataclass
class RefinedRuleSet:
    """Refinements per generator, closed under inversion."""

    patterns: list
    generators: list = field(default_factory=list)
    by_generator: dict = field(default_factory=dict)

    @classmethod
    def build(cls, generators: Sequence[Rule], patterns: Sequence[ContactMap]) -> "RefinedRuleSet":
        out = cls(list(patterns))
        for g in generators:
            refs = enumerate_mature(g, patterns)
            out.generators.append(g)
            out.by_generator[g.name] = refs
            inv = invert(g)
            out.by_generator[inv.name] = [r.inverse(invert(r.rule).name) for r in refs]
        return out

    def pairs(self):
        """(forward, inverse) refinement pairs, one per reversible refined rule."""
        for g in self.generators:
            fw = self.by_generator[g.name]
            bw = self.by_generator[invert(g).name]
            yield from zip(fw, bw)

    def all(self) -> list[Refinement]:
        return [r for refs in self.by_generator.values() for r in refs]


def unique_factor(g_lhs: ContactMap, psi: Embedding, refinements: Sequence[Refinement]):
    """The unique refinement through which ``psi`` factors, with the residual embedding."""
    hits = []
    for k, ref in enumerate(refinements):
        phi = ref.extension.phi
        if phi.src != g_lhs:
            raise ValueError("refinement is not an extension of the given left-hand side")
        fixed = {phi.agents[i]: psi.agents[i] for i in range(len(phi.agents))}
        for e in embeddings(phi.dst, psi.dst, fixed):
            if phi.then(e).sites == psi.sites and phi.then(e).agents == psi.agents:
                hits.append((k, e))
    if len(hits) != 1:
        raise DecompositionError(f"decomposition not unique/absent: {len(hits)} factorizations")
    return hits[0]
