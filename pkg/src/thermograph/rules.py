"""Reversible rules, their application, inversion and extensions."""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from typing import Optional

from .sitegraph import ContactMap, Embedding, NotRealizable

INVERSE_MARK = "*"


class RuleError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class Rule:
    """A pair of contact maps sharing agents and sites, differing in edges/states."""

    lhs: ContactMap
    rhs: ContactMap
    name: str = ""

    def __post_init__(self):
        a, b = self.lhs, self.rhs
        if a.contact != b.contact:
            raise RuleError("sides typed over different contact graphs")
        if a.agents != b.agents or len(a.sites) != len(b.sites):
            raise RuleError(f"rule {self.name}: sides do not share agents and sites")
        for x, y in zip(a.sites, b.sites):
            if (x.owner, x.agent_type, x.name) != (y.owner, y.agent_type, y.name):
                raise RuleError(f"rule {self.name}: sides do not share agents and sites")

    @cached_property
    def modified(self) -> tuple[int, ...]:
        out = []
        for i, (x, y) in enumerate(zip(self.lhs.sites, self.rhs.sites)):
            if x.state != y.state or self.lhs.partner[i] != self.rhs.partner[i]:
                out.append(i)
        return tuple(out)

    def modified_sites(self) -> tuple[int, ...]:
        return self.modified

    @cached_property
    def arity(self) -> int:
        """Number of connected components of the left-hand side."""
        return len(self.lhs.components())

    def inverse(self) -> "Rule":
        return invert(self)

    def __eq__(self, other):
        return isinstance(other, Rule) and (self.lhs, self.rhs, self.name) == (other.lhs, other.rhs, other.name)

    def __hash__(self):
        return hash((self.lhs, self.rhs, self.name))

    def __repr__(self):
        return f"Rule({self.name!r}: {self.lhs!r} -> {self.rhs!r})"


def rule_from_sides(lhs: ContactMap, rhs: ContactMap, name: str = "") -> Rule:
    """Build a rule from independently parsed sides, aligning their sites.

    Owned sites are matched by (agent, name); dangling sites by the site
    they hang off.  Raises :class:`RuleError` when the sides do not share
    their agents and sites.
    """
    if lhs.agents != rhs.agents:
        raise RuleError(f"rule {name}: agents differ between the two sides")

    def key(cm, i):
        s = cm.sites[i]
        if s.owner is not None:
            return ("o", s.owner, s.name)
        p = cm.sites[cm.partner[i]]
        return ("d", p.owner, p.name, s.agent_type, s.name)

    kr = {key(rhs, i): i for i in range(len(rhs.sites))}
    kl = [key(lhs, i) for i in range(len(lhs.sites))]
    if set(kl) != set(kr) or len(kl) != len(kr):
        raise RuleError(f"rule {name}: sides do not share the same sites")
    perm = [kr[k] for k in kl]
    inv = {j: i for i, j in enumerate(perm)}
    sites = [tuple(rhs.sites[j]) for j in perm]
    partner = [None if rhs.partner[j] is None else inv[rhs.partner[j]] for j in perm]
    rhs2 = ContactMap(rhs.contact, rhs.agents, sites, partner)
    return Rule(lhs, rhs2, name)


def invert(r: Rule) -> Rule:
    name = r.name[:-1] if r.name.endswith(INVERSE_MARK) else r.name + INVERSE_MARK
    return Rule(r.rhs, r.lhs, name)


def _replay(r: Rule, psi: Embedding, target: ContactMap) -> ContactMap:
    b = target.edit()
    moved = r.modified
    for i in moved:
        b.unbind(psi.sites[i])
    for i in moved:
        j = psi.sites[i]
        p = r.rhs.partner[i]
        if p is not None:
            b.bind(j, psi.sites[p])
        if r.lhs.sites[i].state != r.rhs.sites[i].state:
            b.set_state(j, r.rhs.sites[i].state)
    return b.freeze()


@dataclass(frozen=True)
class RewriteResult:
    mixture: ContactMap
    embedding: Embedding


def apply_rule(r: Rule, psi: Embedding, h: ContactMap) -> RewriteResult:
    """Rewrite ``h`` along ``psi``; the returned embedding is of ``r.rhs``."""
    if psi.dst is not h and psi.dst != h:
        raise RuleError("embedding does not land in the given mixture")
    if psi.src != r.lhs:
        raise RuleError("embedding does not start at the rule's left-hand side")
    if not h.is_mixture():
        raise RuleError("rules apply to mixtures only")
    new = _replay(r, psi, h)
    return RewriteResult(new, Embedding(r.rhs, new, psi.agents, psi.sites))


def is_epi(phi: Embedding) -> bool:
    hit = set(phi.agents)
    return all(any(a in hit for a in comp) for comp in phi.dst.components())


def _open(cm: ContactMap, comp) -> bool:
    """Can the component still grow a connection to something else?"""
    for a in comp:
        names = {cm.sites[s].name for s in cm.sites_of(a)}
        for s in cm.sites_of(a):
            p = cm.partner[s]
            if p is not None and cm.sites[p].owner is None:
                return True
        for (t, n) in cm.contact.site_types():
            if t == cm.agents[a] and n not in names and cm.contact.partners((t, n)):
                return True
    return False


def is_prefix_of_epi(phi: Embedding) -> bool:
    """Whether some further extension of ``phi`` is an epi.

    Every component missing the image must be able to grow (a dangling site
    or an absent bindable site), and so must the part that holds the image.
    """
    t = phi.dst
    hit = set(phi.agents)
    comps = t.components()
    idle = [c for c in comps if not any(a in hit for a in c)]
    if not idle:
        return True
    if not phi.src.agents:
        return all(_open(t, c) for c in idle)
    return all(_open(t, c) for c in idle) and any(_open(t, c) for c in comps if c not in idle)


@dataclass(frozen=True)
class Extension:
    base: Rule
    phi: Embedding
    phi_star: Embedding

    @property
    def t(self) -> ContactMap:
        return self.phi.dst

    @property
    def t_star(self) -> ContactMap:
        return self.phi_star.dst

    def refined_rule(self, name: Optional[str] = None) -> Rule:
        return Rule(self.t, self.t_star, name or self.base.name)

    def inverse(self) -> "Extension":
        return Extension(invert(self.base), self.phi_star, self.phi)


def mirror_extension(r: Rule, phi: Embedding) -> Extension:
    if phi.src != r.lhs:
        raise RuleError("extension does not start at the rule's left-hand side")
    if not is_prefix_of_epi(phi):
        raise RuleError("extension is not a prefix of an epi")
    try:
        t_star = _replay(r, phi, phi.dst)
    except NotRealizable as exc:
        raise RuleError(f"rule cannot be replayed inside the extension: {exc}") from exc
    return Extension(r, phi, Embedding(r.rhs, t_star, phi.agents, phi.sites))
