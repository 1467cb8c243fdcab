"""Kappa-style textual notation for contact maps.

``A(l, r!1), B(l!1, r!l.C), P(f~0, s!_)`` reads as: bonds are shared
integer labels, ``!site.Agent`` is a binding type (a dangling site),
``!_`` is a binding type to the unique partner the contact graph allows,
``~v`` is an internal state.  Sites that are not mentioned are absent.
"""

from __future__ import annotations

import re

from .sitegraph import ContactGraph, ContactMap, GraphBuilder

_TOKEN = re.compile(r"\s*(?:(?P<name>[A-Za-z_][A-Za-z0-9_]*)|(?P<int>\d+)|(?P<punct>[(),!~.]))")


class KappaSyntaxError(ValueError):
    def __init__(self, message: str, col: int = 0, code: str = "E008"):
        super().__init__(message)
        self.col = col
        self.code = code


def _tokens(text: str):
    pos = 0
    out = []
    while pos < len(text):
        if text[pos:].strip() == "":
            break
        m = _TOKEN.match(text, pos)
        if not m or m.end() == pos:
            raise KappaSyntaxError(f"unexpected character {text[pos]!r}", pos)
        kind = m.lastgroup
        out.append((kind, m.group(kind), m.start(kind)))
        pos = m.end()
    return out


def parse_agents(text: str):
    """Parse into ``[(agent, [(site, state, link), ...], col)]`` without typing."""
    toks = _tokens(text)
    i = 0
    agents = []

    def expect(val):
        nonlocal i
        if i >= len(toks) or toks[i][1] != val:
            col = toks[i][2] if i < len(toks) else len(text)
            raise KappaSyntaxError(f"expected {val!r}", col)
        i += 1

    if not toks:
        return agents
    while True:
        if i >= len(toks) or toks[i][0] != "name":
            raise KappaSyntaxError("expected an agent name", toks[i][2] if i < len(toks) else len(text))
        aname, acol = toks[i][1], toks[i][2]
        i += 1
        expect("(")
        sites = []
        while i < len(toks) and toks[i][1] != ")":
            if toks[i][0] != "name":
                raise KappaSyntaxError("expected a site name", toks[i][2])
            sname, scol = toks[i][1], toks[i][2]
            i += 1
            state = link = None
            while i < len(toks) and toks[i][1] in ("~", "!"):
                op = toks[i][1]
                i += 1
                if i >= len(toks):
                    raise KappaSyntaxError("truncated site", len(text))
                kind, val, col = toks[i]
                if op == "~":
                    if kind not in ("name", "int") or state is not None:
                        raise KappaSyntaxError("bad state", col)
                    state = val
                    i += 1
                else:
                    if link is not None:
                        raise KappaSyntaxError("site bound twice", col)
                    if kind == "int":
                        link = int(val)
                        i += 1
                    elif val == "_":
                        link = "_"
                        i += 1
                    elif kind == "name":
                        i += 1
                        expect(".")
                        if i >= len(toks) or toks[i][0] != "name":
                            raise KappaSyntaxError("expected agent name in binding type", col)
                        link = (toks[i][1], val)
                        i += 1
                    else:
                        raise KappaSyntaxError("bad link", col)
            sites.append((sname, state, link, scol))
            if i < len(toks) and toks[i][1] == ",":
                i += 1
        expect(")")
        agents.append((aname, sites, acol))
        if i >= len(toks):
            break
        expect(",")
    return agents


def build_pattern(parsed, contact: ContactGraph, offset: int = 0) -> ContactMap:
    b = GraphBuilder(contact)
    open_links: dict[int, tuple[int, int]] = {}
    for aname, sites, acol in parsed:
        if aname not in contact.agents:
            raise KappaSyntaxError(f"unknown agent {aname}", acol + offset, "E002")
        a = b.add_agent(aname)
        seen = set()
        for sname, state, link, scol in sites:
            if sname not in contact.agents[aname]:
                raise KappaSyntaxError(f"unknown site {aname}.{sname}", scol + offset, "E003")
            if sname in seen:
                raise KappaSyntaxError(f"site {aname}.{sname} repeated", scol + offset)
            seen.add(sname)
            if state is not None and state not in contact.states.get((aname, sname), ()):
                raise KappaSyntaxError(f"unknown state {aname}.{sname}~{state}", scol + offset, "E004")
            s = b.add_site(a, sname, state)
            if link is None:
                continue
            if link == "_":
                partners = contact.partners((aname, sname))
                if len(partners) != 1:
                    raise KappaSyntaxError(f"{aname}.{sname}!_ is ambiguous", scol + offset)
                d = b.add_site(None, partners[0][1], agent_type=partners[0][0])
                b.bind(s, d)
            elif isinstance(link, tuple):
                if not contact.can_bind((aname, sname), link):
                    raise KappaSyntaxError(f"{aname}.{sname} cannot bind {link[1]}.{link[0]}",
                                           scol + offset, "E003")
                d = b.add_site(None, link[1], agent_type=link[0])
                b.bind(s, d)
            else:
                if link in open_links:
                    other, _ = open_links.pop(link)
                    if other is None:
                        raise KappaSyntaxError(f"bond label {link} used three times", scol + offset)
                    if not contact.can_bind(tuple(b.sites[other][1:3]), (aname, sname)):
                        raise KappaSyntaxError(f"bond {link} not allowed by the contact graph",
                                               scol + offset, "E003")
                    b.bind(other, s)
                    open_links[link] = (None, scol)
                else:
                    open_links[link] = (s, scol)
    for link, (s, col) in open_links.items():
        if s is not None:
            raise KappaSyntaxError(f"bond label {link} is not closed", col + offset)
    return b.freeze()


def parse_pattern(text: str, contact: ContactGraph) -> ContactMap:
    return build_pattern(parse_agents(text), contact)


def format_pattern(cm: ContactMap, spaced: bool = False) -> str:
    """Inverse of :func:`parse_pattern` up to bond-label naming."""
    labels: dict[int, int] = {}
    order = cm.contact.agents
    out = []
    for a, t in enumerate(cm.agents):
        rank = {n: k for k, n in enumerate(order.get(t, ()))}
        parts = []
        for s in sorted(cm.sites_of(a), key=lambda s: rank.get(cm.sites[s].name, 0)):
            site = cm.sites[s]
            txt = site.name
            if site.state is not None:
                txt += f"~{site.state}"
            p = cm.partner[s]
            if p is not None:
                ps = cm.sites[p]
                if ps.owner is None:
                    txt += f"!{ps.name}.{ps.agent_type}"
                else:
                    key = min(s, p)
                    if key not in labels:
                        labels[key] = len(labels) + 1
                    txt += f"!{labels[key]}"
            parts.append(txt)
        out.append(f"{t}({', '.join(parts) if spaced else ','.join(parts)})")
    return ", ".join(out)
