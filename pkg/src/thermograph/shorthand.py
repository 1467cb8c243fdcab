"""Word notation for chains and cycles over a cyclic contact graph.

Agents of a cyclic contact graph with two sites ``l`` and ``r`` (each ``r``
binds the ``l`` of the next type) are written as digits: ``2312`` is a
chain, ``cyc(123)`` the closed triangle.  A leading or trailing ``?`` says
the end site is absent, ``^d`` that it is bound to a binding type of agent
type ``d``, and nothing that it is present and free.  ``+`` separates
components.  Only used for inspection output and tests.
"""

from __future__ import annotations

import re

from .sitegraph import ContactGraph, ContactMap, GraphBuilder, canonical_labeling

_CHAIN = re.compile(r"^(?P<left>\?|\^\d)?(?P<body>\d+)(?P<right>\?|\^\d)?$")
_CYCLE = re.compile(r"^cyc\((?P<body>\d+)\)$")


def cyclic_contact(names=("A", "B", "C")) -> ContactGraph:
    n = len(names)
    return ContactGraph(
        {a: ("l", "r") for a in names},
        [((names[i], "r"), (names[(i + 1) % n], "l")) for i in range(n)],
    )


def _names(contact: ContactGraph) -> list[str]:
    return sorted(contact.agents)


def parse_word(text: str, contact: ContactGraph) -> ContactMap:
    names = _names(contact)
    b = GraphBuilder(contact)
    for part in (p.strip() for p in text.split("+")):
        if not part:
            continue
        m = _CYCLE.match(part)
        if m:
            agents = [b.add_agent(names[int(d) - 1]) for d in m["body"]]
            ls = [b.add_site(a, "l") for a in agents]
            rs = [b.add_site(a, "r") for a in agents]
            for k in range(len(agents)):
                b.bind(rs[k], ls[(k + 1) % len(agents)])
            continue
        m = _CHAIN.match(part)
        if not m:
            raise ValueError(f"cannot read {part!r}")
        agents = [b.add_agent(names[int(d) - 1]) for d in m["body"]]
        last = len(agents) - 1
        prev_r = None
        for k, a in enumerate(agents):
            if k > 0 or m["left"] != "?":
                left = b.add_site(a, "l")
                if k > 0:
                    b.bind(prev_r, left)
                elif m["left"]:
                    d = b.add_site(None, "r", agent_type=names[int(m["left"][1]) - 1])
                    b.bind(left, d)
            if k < last or m["right"] != "?":
                prev_r = b.add_site(a, "r")
                if k == last and m["right"]:
                    d = b.add_site(None, "l", agent_type=names[int(m["right"][1]) - 1])
                    b.bind(prev_r, d)
    return b.freeze()


def format_word(cm: ContactMap) -> str:
    """Best-effort inverse of :func:`parse_word`."""
    names = _names(cm.contact)
    digit = {n: str(i + 1) for i, n in enumerate(names)}
    parts = []
    _, order = canonical_labeling(cm)
    for comp in cm.components():
        members = set(comp)

        def left_neighbour(a):
            s = cm.site_at(a, "l")
            if s is None or cm.partner[s] is None:
                return None
            return cm.sites[cm.partner[s]].owner

        start = None
        for a in sorted(comp, key=order.index):
            if left_neighbour(a) is None:
                start = a
                break
        cyclic = start is None
        if cyclic:
            start = min(comp, key=lambda a: (cm.agents[a], order.index(a)))
        seq = [start]
        while True:
            s = cm.site_at(seq[-1], "r")
            if s is None or cm.partner[s] is None:
                break
            w = cm.sites[cm.partner[s]].owner
            if w is None or w == start:
                break
            seq.append(w)
        body = "".join(digit[cm.agents[a]] for a in seq)
        if cyclic and len(seq) == len(members):
            parts.append(f"cyc({body})")
            continue

        def end(a, side):
            s = cm.site_at(a, side)
            if s is None:
                return "?"
            p = cm.partner[s]
            if p is None:
                return ""
            return "^" + digit[cm.sites[p].agent_type]

        parts.append(end(seq[0], "l") + body + end(seq[-1], "r"))
    return " + ".join(parts)
