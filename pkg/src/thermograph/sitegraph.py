"""Site graphs, contact graphs, contact maps and embeddings.

Two layers live here.  :class:`SiteGraph` is the bare untyped structure
(agents, sites, a partial owner map and a symmetric edge relation) and is
only used to talk about realizability in general.  Everything else in the
package works with :class:`ContactMap`, a realizable site graph typed over a
fixed :class:`ContactGraph`.

A contact map stores its sites as a tuple of :class:`Site` records and its
edges as a partner tuple (realizability guarantees at most one edge per
site).  Agents and sites are identified by their position, so all values
are immutable and hashable.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Iterator, Mapping, NamedTuple, Optional

SiteType = tuple[str, str]


class ContactGraph:
    """The fixed type graph: agent signatures, allowed bonds, site states."""

    __slots__ = ("agents", "states", "bonds", "_partners", "_key")

    def __init__(
        self,
        agents: Mapping[str, Iterable[str]],
        bonds: Iterable[tuple[SiteType, SiteType]] = (),
        states: Optional[Mapping[SiteType, Iterable[str]]] = None,
    ):
        self.agents = {a: tuple(s) for a, s in agents.items()}
        for a, sites in self.agents.items():
            if len(set(sites)) != len(sites):
                raise ValueError(f"duplicate site name on agent {a}")
        self.states = {st: tuple(v) for st, v in (states or {}).items() if v}
        partners: dict[SiteType, set[SiteType]] = {}
        norm = set()
        for x, y in bonds:
            for st in (x, y):
                if st[0] not in self.agents or st[1] not in self.agents[st[0]]:
                    raise ValueError(f"bond mentions unknown site {st}")
            norm.add(frozenset((x, y)))
            partners.setdefault(x, set()).add(y)
            partners.setdefault(y, set()).add(x)
        for st in self.states:
            if st[0] not in self.agents or st[1] not in self.agents[st[0]]:
                raise ValueError(f"states declared for unknown site {st}")
        self.bonds = frozenset(norm)
        self._partners = {k: tuple(sorted(v)) for k, v in partners.items()}
        self._key = (
            tuple(sorted(self.agents.items())),
            tuple(sorted(tuple(sorted(b)) for b in self.bonds)),
            tuple(sorted(self.states.items())),
        )

    def partners(self, st: SiteType) -> tuple[SiteType, ...]:
        return self._partners.get(st, ())

    def can_bind(self, x: SiteType, y: SiteType) -> bool:
        return y in self._partners.get(x, ())

    def has_site(self, st: SiteType) -> bool:
        return st[0] in self.agents and st[1] in self.agents[st[0]]

    def site_types(self) -> list[SiteType]:
        return [(a, s) for a in sorted(self.agents) for s in self.agents[a]]

    def __eq__(self, other):
        return isinstance(other, ContactGraph) and self._key == other._key

    def __hash__(self):
        return hash(self._key)

    def __repr__(self):
        return f"ContactGraph({sorted(self.agents)})"


# ---------------------------------------------------------------------------
# untyped site graphs


@dataclass(frozen=True)
class SiteGraph:
    agents: frozenset
    sites: frozenset
    owner: Mapping = field(default_factory=dict)
    edges: frozenset = frozenset()

    def __post_init__(self):
        for s, a in self.owner.items():
            if s not in self.sites or a not in self.agents:
                raise ValueError(f"owner map mentions undeclared {s!r} -> {a!r}")
        for e in self.edges:
            if not e <= self.sites:
                raise ValueError(f"edge {set(e)} mentions an undeclared site")

    @classmethod
    def build(cls, agents, sites, owner, edges):
        return cls(frozenset(agents), frozenset(sites), dict(owner),
                   frozenset(frozenset(e) for e in edges))

    def incident(self, s) -> list:
        return [e for e in self.edges if s in e]


@dataclass(frozen=True)
class RealizabilityReport:
    violations: tuple = ()

    @property
    def is_realizable(self) -> bool:
        return not self.violations


def check_realizable(g: SiteGraph) -> RealizabilityReport:
    violations = []
    for s in sorted(g.sites, key=repr):
        inc = g.incident(s)
        if len(inc) > 1 or any(len(e) == 1 for e in inc):
            violations.append(("multi-edge-site", (s,)))
        if s not in g.owner and not inc:
            violations.append(("free-dangling", (s,)))
    for e in sorted(g.edges, key=lambda e: sorted(map(repr, e))):
        if len(e) == 2 and all(s not in g.owner for s in e):
            violations.append(("two-dangling-endpoints", tuple(sorted(e, key=repr))))
    return RealizabilityReport(tuple(violations))


@dataclass(frozen=True)
class Homomorphism:
    """A pair of maps on agents and sites between two site graphs."""

    agents: Mapping
    sites: Mapping

    def is_valid(self, src: SiteGraph, dst: SiteGraph) -> bool:
        if set(self.agents) != set(src.agents) or set(self.sites) != set(src.sites):
            return False
        for s, a in src.owner.items():
            if dst.owner.get(self.sites[s]) != self.agents[a]:
                return False
        return all(frozenset(self.sites[s] for s in e) in dst.edges for e in src.edges)

    def is_embedding(self, src: SiteGraph, dst: SiteGraph) -> bool:
        if not self.is_valid(src, dst):
            return False
        if len(set(self.agents.values())) != len(self.agents):
            return False
        if len(set(self.sites.values())) != len(self.sites):
            return False
        bound = {s for e in src.edges for s in e}
        dbound = {s for e in dst.edges for s in e}
        return all(self.sites[s] not in dbound for s in src.sites - bound)

    def then(self, other: "Homomorphism") -> "Homomorphism":
        """``other`` after ``self``."""
        return Homomorphism({k: other.agents[v] for k, v in self.agents.items()},
                            {k: other.sites[v] for k, v in self.sites.items()})

    @staticmethod
    def identity(g: SiteGraph) -> "Homomorphism":
        return Homomorphism({a: a for a in g.agents}, {s: s for s in g.sites})


# ---------------------------------------------------------------------------
# contact maps


class Site(NamedTuple):
    owner: Optional[int]
    agent_type: str
    name: str
    state: Optional[str] = None

    @property
    def type(self) -> SiteType:
        return (self.agent_type, self.name)


class NotRealizable(ValueError):
    pass


class ContactMap:
    """A realizable site graph typed over a contact graph."""

    __slots__ = ("contact", "agents", "sites", "partner", "_index", "_by_agent", "_hash", "_comps")

    def __init__(self, contact: ContactGraph, agents, sites, partner, *, check: bool = True):
        self.contact = contact
        self.agents = tuple(agents)
        self.sites = tuple(Site(*s) for s in sites)
        self.partner = tuple(partner)
        index = {}
        by_agent: list[list[int]] = [[] for _ in self.agents]
        for i, s in enumerate(self.sites):
            if s.owner is not None:
                key = (s.owner, s.name)
                if check and key in index:
                    raise NotRealizable(f"agent {s.owner} carries site {s.name} twice")
                index[key] = i
                by_agent[s.owner].append(i)
        self._index = index
        self._by_agent = tuple(tuple(sorted(l, key=lambda i: self.sites[i].name)) for l in by_agent)
        self._hash = None
        self._comps = None
        if check:
            self._validate()

    def _validate(self):
        c = self.contact
        if len(self.partner) != len(self.sites):
            raise ValueError("partner table has the wrong length")
        for a in self.agents:
            if a not in c.agents:
                raise ValueError(f"unknown agent type {a}")
        for i, s in enumerate(self.sites):
            if s.owner is not None and self.agents[s.owner] != s.agent_type:
                raise ValueError(f"site {i} typed {s.agent_type} but owned by {self.agents[s.owner]}")
            if not c.has_site(s.type):
                raise ValueError(f"unknown site {s.type}")
            if s.state is not None and s.state not in c.states.get(s.type, ()):
                raise ValueError(f"invalid state {s.state} for {s.type}")
            p = self.partner[i]
            if p is None:
                if s.owner is None:
                    raise NotRealizable(f"dangling site {i} is free")
                continue
            if p == i or self.partner[p] != i:
                raise NotRealizable(f"edge table not symmetric at site {i}")
            if s.owner is None and self.sites[p].owner is None:
                raise NotRealizable(f"edge {i}-{p} has two dangling ends")
            if not c.can_bind(s.type, self.sites[p].type):
                raise ValueError(f"bond {s.type}-{self.sites[p].type} not in the contact graph")

    # -- basic queries -----------------------------------------------------

    def site_at(self, agent: int, name: str) -> Optional[int]:
        return self._index.get((agent, name))

    def sites_of(self, agent: int) -> tuple[int, ...]:
        return self._by_agent[agent]

    def stype(self, i: int) -> SiteType:
        return self.sites[i].type

    def is_dangling(self, i: int) -> bool:
        return self.sites[i].owner is None

    def dangling_sites(self) -> list[int]:
        return [i for i, s in enumerate(self.sites) if s.owner is None]

    def edges(self) -> list[tuple[int, int]]:
        return [(i, p) for i, p in enumerate(self.partner) if p is not None and i < p]

    def components(self) -> list[tuple[int, ...]]:
        """Connected components as sorted tuples of agents."""
        if self._comps is None:
            parent = list(range(len(self.agents)))

            def find(x):
                while parent[x] != x:
                    parent[x] = parent[parent[x]]
                    x = parent[x]
                return x

            for i, p in self.edges():
                a, b = self.sites[i].owner, self.sites[p].owner
                if a is not None and b is not None:
                    parent[find(a)] = find(b)
            groups: dict[int, list[int]] = {}
            for a in range(len(self.agents)):
                groups.setdefault(find(a), []).append(a)
            self._comps = sorted(tuple(g) for g in groups.values())
        return self._comps

    def neighbours(self, agent: int) -> list[int]:
        out = []
        for i in self._by_agent[agent]:
            p = self.partner[i]
            if p is not None and self.sites[p].owner is not None:
                out.append(self.sites[p].owner)
        return out

    def is_mixture(self) -> bool:
        c = self.contact
        if any(s.owner is None for s in self.sites):
            return False
        for a, t in enumerate(self.agents):
            names = {self.sites[i].name for i in self._by_agent[a]}
            if names != set(c.agents[t]):
                return False
        return all(s.state is not None for s in self.sites if s.type in c.states)

    def is_connected(self) -> bool:
        return len(self.components()) <= 1

    def edit(self) -> "GraphBuilder":
        return GraphBuilder(self.contact, self.agents, self.sites, self.partner)

    # -- identity ---------------------------------------------------------------

    def __eq__(self, other):
        return (isinstance(other, ContactMap) and self.agents == other.agents
                and self.sites == other.sites and self.partner == other.partner
                and self.contact == other.contact)

    def __hash__(self):
        if self._hash is None:
            self._hash = hash((self.agents, self.sites, self.partner))
        return self._hash

    def __repr__(self):
        from .kappa import format_pattern

        return f"ContactMap({format_pattern(self)!r})"

    @staticmethod
    def empty(contact: ContactGraph) -> "ContactMap":
        return ContactMap(contact, (), (), ())


class GraphBuilder:
    """Mutable scratch space for constructing or editing a contact map."""

    def __init__(self, contact, agents=(), sites=(), partner=()):
        self.contact = contact
        self.agents = list(agents)
        self.sites = [list(s) for s in sites]
        self.partner = list(partner)

    def add_agent(self, atype: str) -> int:
        self.agents.append(atype)
        return len(self.agents) - 1

    def add_site(self, owner: Optional[int], name: str, state=None, agent_type=None) -> int:
        at = self.agents[owner] if owner is not None else agent_type
        self.sites.append([owner, at, name, state])
        self.partner.append(None)
        return len(self.sites) - 1

    def bind(self, i: int, j: int):
        self.partner[i] = j
        self.partner[j] = i

    def unbind(self, i: int):
        j = self.partner[i]
        if j is not None:
            self.partner[j] = None
        self.partner[i] = None

    def set_state(self, i: int, state):
        self.sites[i][3] = state

    def set_owner(self, i: int, owner: int):
        self.sites[i][0] = owner
        self.sites[i][1] = self.agents[owner]

    def remove_sites(self, doomed: Iterable[int]) -> list[Optional[int]]:
        """Delete sites; returns the old-to-new index map."""
        doomed = set(doomed)
        remap: list[Optional[int]] = []
        n = 0
        for i in range(len(self.sites)):
            if i in doomed:
                remap.append(None)
            else:
                remap.append(n)
                n += 1
        self.sites = [s for i, s in enumerate(self.sites) if i not in doomed]
        self.partner = [None if p is None or remap[p] is None else remap[p]
                        for i, p in enumerate(self.partner) if i not in doomed]
        return remap

    def freeze(self, check: bool = True) -> ContactMap:
        return ContactMap(self.contact, self.agents, [tuple(s) for s in self.sites], self.partner,
                          check=check)


def connected_components(cm: ContactMap) -> list[frozenset[int]]:
    return [frozenset(c) for c in cm.components()]


def is_mixture(cm: ContactMap) -> bool:
    return cm.is_mixture()


def disjoint_union(a: ContactMap, b: ContactMap) -> ContactMap:
    na, ns = len(a.agents), len(a.sites)
    sites = list(a.sites) + [
        Site(None if s.owner is None else s.owner + na, s.agent_type, s.name, s.state) for s in b.sites
    ]
    partner = list(a.partner) + [None if p is None else p + ns for p in b.partner]
    return ContactMap(a.contact, a.agents + b.agents, sites, partner, check=False)


def to_site_graph(cm: ContactMap) -> SiteGraph:
    return SiteGraph.build(
        range(len(cm.agents)),
        range(len(cm.sites)),
        {i: s.owner for i, s in enumerate(cm.sites) if s.owner is not None},
        cm.edges(),
    )


# ---------------------------------------------------------------------------
# embeddings


@dataclass(frozen=True)
class Embedding:
    """A typed embedding ``src -> dst`` given by its agent and site maps."""

    src: ContactMap
    dst: ContactMap
    agents: tuple[int, ...]
    sites: tuple[int, ...]

    def then(self, other: "Embedding") -> "Embedding":
        """``other`` after ``self``."""
        return Embedding(self.src, other.dst,
                         tuple(other.agents[a] for a in self.agents),
                         tuple(other.sites[s] for s in self.sites))

    @staticmethod
    def identity(cm: ContactMap) -> "Embedding":
        return Embedding(cm, cm, tuple(range(len(cm.agents))), tuple(range(len(cm.sites))))

    def is_iso(self) -> bool:
        if len(self.dst.agents) != len(self.agents) or len(self.dst.sites) != len(self.sites):
            return False
        for i, s in enumerate(self.src.sites):
            t = self.dst.sites[self.sites[i]]
            if s.state != t.state or (s.owner is None) != (t.owner is None):
                return False
        return True

    def image_agents(self) -> set[int]:
        return set(self.agents)

    def is_valid(self) -> bool:
        """Checks every embedding condition directly (used as a test oracle)."""
        a, b = self.src, self.dst
        if len(set(self.agents)) != len(self.agents) or len(set(self.sites)) != len(self.sites):
            return False
        for x, y in enumerate(self.agents):
            if a.agents[x] != b.agents[y]:
                return False
        for i, s in enumerate(a.sites):
            j = self.sites[i]
            t = b.sites[j]
            if s.type != t.type:
                return False
            if s.owner is not None and t.owner != self.agents[s.owner]:
                return False
            if s.state is not None and s.state != t.state:
                return False
            p = a.partner[i]
            if p is None:
                if b.partner[j] is not None:
                    return False
            elif b.partner[j] != self.sites[p]:
                return False
        return True


def embeddings(pattern: ContactMap, target: ContactMap,
               fixed: Optional[Mapping[int, int]] = None) -> Iterator[Embedding]:
    """Enumerate all embeddings of ``pattern`` into ``target``.

    Connected components are rigid, so an embedding is fixed by the image of
    one agent per component; the search backtracks over those roots only.
    ``fixed`` optionally pins the images of some pattern agents.
    """
    fixed = dict(fixed or {})
    comps = list(pattern.components())
    comps.sort(key=lambda c: not any(a in fixed for a in c))
    amap: list[Optional[int]] = [None] * len(pattern.agents)
    smap: list[Optional[int]] = [None] * len(pattern.sites)
    used_a: set[int] = set()
    used_s: set[int] = set()
    by_type: dict[str, list[int]] = {}
    for v, t in enumerate(target.agents):
        by_type.setdefault(t, []).append(v)

    def place(root: int, img: int, trail_a: list, trail_s: list) -> bool:
        stack = [(root, img)]
        if img in used_a:
            return False
        amap[root] = img
        used_a.add(img)
        trail_a.append(root)
        while stack:
            u, v = stack.pop()
            if u in fixed and fixed[u] != v:
                return False
            for s in pattern.sites_of(u):
                ps = pattern.sites[s]
                t = target.site_at(v, ps.name)
                if t is None:
                    return False
                if ps.state is not None and target.sites[t].state != ps.state:
                    return False
                if smap[s] is None:
                    if t in used_s:
                        return False
                    smap[s] = t
                    used_s.add(t)
                    trail_s.append(s)
                elif smap[s] != t:
                    return False
                p = pattern.partner[s]
                tp = target.partner[t]
                if p is None:
                    if tp is not None:
                        return False
                    continue
                if tp is None:
                    return False
                pp = pattern.sites[p]
                if pp.type != target.sites[tp].type:
                    return False
                if pp.owner is None:
                    if pp.state is not None and target.sites[tp].state != pp.state:
                        return False
                    if smap[p] is None:
                        if tp in used_s:
                            return False
                        smap[p] = tp
                        used_s.add(tp)
                        trail_s.append(p)
                    elif smap[p] != tp:
                        return False
                    continue
                w = target.sites[tp].owner
                if w is None:
                    return False
                u2 = pp.owner
                if amap[u2] is None:
                    if w in used_a:
                        return False
                    amap[u2] = w
                    used_a.add(w)
                    trail_a.append(u2)
                    stack.append((u2, w))
                elif amap[u2] != w:
                    return False
        return True

    def undo(trail_a, trail_s):
        for u in trail_a:
            used_a.discard(amap[u])
            amap[u] = None
        for s in trail_s:
            used_s.discard(smap[s])
            smap[s] = None

    def rec(k: int):
        if k == len(comps):
            yield Embedding(pattern, target, tuple(amap), tuple(smap))
            return
        comp = comps[k]
        pinned = [a for a in comp if a in fixed]
        root = pinned[0] if pinned else comp[0]
        cands = [fixed[root]] if pinned else by_type.get(pattern.agents[root], [])
        for img in cands:
            if target.agents[img] != pattern.agents[root]:
                continue
            ta: list = []
            ts: list = []
            if place(root, img, ta, ts):
                yield from rec(k + 1)
            undo(ta, ts)

    yield from rec(0)


def count_embeddings(pattern: ContactMap, target: ContactMap) -> int:
    return sum(1 for _ in embeddings(pattern, target))


# ---------------------------------------------------------------------------
# canonical forms


def _component_code(cm: ContactMap, root: int, labels) -> tuple[str, list[int]]:
    order = [root]
    index = {root: 0}
    k = 0
    while k < len(order):
        u = order[k]
        k += 1
        for s in cm.sites_of(u):
            p = cm.partner[s]
            if p is None:
                continue
            w = cm.sites[p].owner
            if w is not None and w not in index:
                index[w] = len(order)
                order.append(w)
    toks = []
    for u in order:
        parts = []
        for s in cm.sites_of(u):
            site = cm.sites[s]
            p = cm.partner[s]
            if p is None:
                pc = ""
            else:
                ps = cm.sites[p]
                if ps.owner is None:
                    pc = f"!^{ps.agent_type}.{ps.name}~{ps.state or ''}" + (
                        f"#{labels[('s', p)]}" if labels and ('s', p) in labels else "")
                else:
                    pc = f"!{index[ps.owner]}.{ps.name}"
            mark = f"#{labels[('s', s)]}" if labels and ("s", s) in labels else ""
            parts.append(f"{site.name}~{site.state or ''}{mark}{pc}")
        lab = labels.get(("a", u), "") if labels else ""
        toks.append(f"{lab}|{cm.agents[u]}({','.join(parts)})")
    return "/".join(toks), order


def canonical_labeling(cm: ContactMap, labels: Optional[Mapping] = None) -> tuple[str, list[int]]:
    """Canonical string and the agent order realizing it.

    ``labels`` may mark agents (key ``('a', i)``) or sites (key
    ``('s', i)``); marks are part of the code, so isomorphisms must
    preserve them.
    """
    codes = []
    for comp in cm.components():
        best = None
        for root in comp:
            code, order = _component_code(cm, root, labels)
            if best is None or code < best[0]:
                best = (code, order)
        codes.append(best)
    codes.sort(key=lambda x: x[0])
    return "+".join(c for c, _ in codes), [a for _, o in codes for a in o]


def canonical_form(cm: ContactMap, labels: Optional[Mapping] = None) -> bytes:
    return canonical_labeling(cm, labels)[0].encode()


def isomorphic(a: ContactMap, b: ContactMap) -> bool:
    return canonical_form(a) == canonical_form(b)


def isomorphism(a: ContactMap, b: ContactMap) -> Optional[Embedding]:
    """An isomorphism ``a -> b`` if one exists."""
    ca, oa = canonical_labeling(a)
    cb, ob = canonical_labeling(b)
    if ca != cb:
        return None
    fixed = dict(zip(oa, ob))
    for e in embeddings(a, b, fixed):
        if e.is_iso():
            return e
    return None
