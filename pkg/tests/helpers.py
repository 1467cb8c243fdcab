"""Test-only utilities: random completions of patterns into mixtures."""

from __future__ import annotations

import numpy as np

from thermograph.sitegraph import ContactMap, Embedding


def complete(t: ContactMap, rng: np.random.Generator, depth: int = 2, p_bind: float = 0.5) -> ContactMap:
    """A random mixture containing ``t`` at the same agent and site indices.

    Dangling sites get a fresh owner; every missing site is added free or
    bound to a fresh agent (never beyond ``depth`` from ``t``); unspecified
    states are drawn uniformly.
    """
    b = t.edit()
    c = t.contact
    dist = {a: 0 for a in range(len(t.agents))}
    for d in t.dangling_sites():
        a = b.add_agent(b.sites[d][1])
        b.set_owner(d, a)
        dist[a] = 1
    k = 0
    while k < len(b.agents):
        a = k
        k += 1
        have = {s[2] for s in b.sites if s[0] == a}
        for name in c.agents[b.agents[a]]:
            if name in have:
                continue
            states = c.states.get((b.agents[a], name), ())
            st = str(rng.choice(states)) if states else None
            s = b.add_site(a, name, st)
            partners = c.partners((b.agents[a], name))
            if partners and dist.get(a, depth) < depth and rng.random() < p_bind:
                pt, pn = partners[int(rng.integers(len(partners)))]
                a2 = b.add_agent(pt)
                dist[a2] = dist[a] + 1
                pstates = c.states.get((pt, pn), ())
                s2 = b.add_site(a2, pn, str(rng.choice(pstates)) if pstates else None)
                b.bind(s, s2)
    for s in b.sites:
        if s[3] is None and c.states.get((s[1], s[2])):
            s[3] = str(rng.choice(c.states[(s[1], s[2])]))
    return b.freeze()


def identity_into(t: ContactMap, x: ContactMap) -> Embedding:
    return Embedding(t, x, tuple(range(len(t.agents))), tuple(range(len(t.sites))))
