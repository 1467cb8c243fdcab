"""Stochastic simulation of refined rule sets (Gillespie direct method).

The mixture is held as a multiset of isomorphism classes of connected
components.  Every class keeps its representative graph, the embeddings of
each connected rule component into it, and its pattern counts, so an event
costs a handful of dictionary lookups once the classes it touches are known.

A rule with a two-component left-hand side draws one component instance
for each side independently.  When both land on the same instance the
combined match is checked and, if it is not an embedding, the draw is a
null event: time advances but the state does not change.  Null events are
self-loops, so the jump chain is exact.
"""

from __future__ import annotations

import csv
import hashlib
import io
import math
import warnings
from dataclasses import dataclass, field
from typing import Callable, Iterable, Optional, Sequence

import numpy as np

from .energy import EnergyModel, RatePolicy
from .kappa import format_pattern
from .refine import RefinedRuleSet
from .rules import _replay
from .sitegraph import ContactMap, Embedding, NotRealizable, Site, canonical_form, count_embeddings, embeddings


class SimulationError(ValueError):
    pass


class InvariantViolation(RuntimeError):
    pass


def split_components(cm: ContactMap) -> list[tuple[ContactMap, tuple, tuple]]:
    """Connected components as standalone graphs with their index maps."""
    out = []
    for comp in cm.components():
        agents = sorted(comp)
        amap = {a: k for k, a in enumerate(agents)}
        sites = []
        for a in agents:
            for s in cm.sites_of(a):
                sites.append(s)
                p = cm.partner[s]
                if p is not None and cm.sites[p].owner is None:
                    sites.append(p)
        smap = {s: k for k, s in enumerate(sites)}
        new_sites = []
        for s in sites:
            x = cm.sites[s]
            new_sites.append(Site(None if x.owner is None else amap[x.owner], x.agent_type, x.name, x.state))
        partner = [None if cm.partner[s] is None else smap[cm.partner[s]] for s in sites]
        sub = ContactMap(cm.contact, [cm.agents[a] for a in agents], new_sites, partner, check=False)
        out.append((sub, tuple(agents), tuple(sites)))
    return out


def _hash64(code: bytes) -> int:
    return int.from_bytes(hashlib.blake2b(code, digest_size=8).digest(), "little")


@dataclass
class _Class:
    code: bytes
    rep: ContactMap
    hash: int
    motif_counts: np.ndarray
    pattern_counts: np.ndarray
    obs_counts: np.ndarray
    embeds: list = field(default_factory=list)


@dataclass
class _Motif:
    pattern: ContactMap


@dataclass
class _RuleEntry:
    ref: object
    motifs: tuple          # motif ids, one per lhs component
    agent_maps: tuple      # lhs agent indices per component
    site_maps: tuple       # lhs site indices per component


@dataclass
class Trajectory:
    columns: list
    times: list = field(default_factory=list)
    rows: list = field(default_factory=list)
    events: int = 0
    null_events: int = 0
    time: float = 0.0
    integrals: dict = field(default_factory=dict)
    occupancy: dict = field(default_factory=dict)
    snapshots: dict = field(default_factory=dict)

    @property
    def array(self) -> np.ndarray:
        return np.asarray(self.rows, dtype=float).reshape(len(self.rows), len(self.columns))

    def column(self, name: str) -> np.ndarray:
        return self.array[:, self.columns.index(name)]

    def time_average(self, name: str) -> float:
        return self.integrals[name] / self.time if self.time > 0 else float("nan")

    def to_csv(self, out=None) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["time"] + list(self.columns))
        for t, row in zip(self.times, self.rows):
            w.writerow([repr(float(t))] + [repr(float(v)) for v in row])
        text = buf.getvalue()
        if out is not None:
            with open(out, "w", encoding="utf-8") as fh:
                fh.write(text)
        return text


@dataclass(frozen=True)
class Intervention:
    time: float
    agent: str
    states: tuple  # ((site, state), ...)


class Simulator:
    def __init__(self, ruleset: RefinedRuleSet, energy: EnergyModel, policy: RatePolicy,
                 initial: ContactMap, observables: Sequence = (), seed: int = 0,
                 interventions: Iterable = (), cache_size: int = 500_000, check_every: int = 0):
        if not initial.is_mixture():
            raise SimulationError("the initial state must be a mixture")
        self.contact = initial.contact
        self.energy = energy
        self.policy = policy
        self.observables = list(observables)
        self.rng = np.random.Generator(np.random.PCG64(seed))
        self.interventions = sorted((Intervention(float(i.time), i.agent, tuple(i.states))
                                     for i in interventions), key=lambda i: i.time)
        self.cache_size = cache_size
        self.check_every = check_every
        self.t = 0.0
        self.events = 0
        self.null_events = 0
        self._motifs: list[_Motif] = []
        self._motif_ids: dict = {}
        self._rules: list[_RuleEntry] = []
        for ref in ruleset.all():
            self._add_rule(ref)
        self._obs_patterns = []
        for o in self.observables:
            if o.pattern is not None and not o.pattern.is_connected():
                raise SimulationError(f"observable {o.name} must be a connected pattern")
            if o.pattern is not None:
                self._obs_patterns.append(o.pattern)
        self._classes: list[_Class] = []
        self._by_code: dict[bytes, int] = {}
        self._n: dict[int, int] = {}
        self._outcomes: dict = {}
        k = len(self._motifs)
        self._S = np.zeros(k, dtype=np.int64)
        self._P = np.zeros(len(energy.patterns), dtype=np.int64)
        self._O = np.zeros(len(self._obs_patterns), dtype=np.int64)
        self._H = 0
        self._m1 = np.array([r.motifs[0] for r in self._rules], dtype=np.int64)
        self._m2 = np.array([r.motifs[1] if len(r.motifs) > 1 else -1 for r in self._rules], dtype=np.int64)
        self._log_rates_static = None
        if not policy.needs_counts() and energy.is_linear:
            self._log_rates_static = np.array([policy.log_rate(r.ref, energy) for r in self._rules])
            self._rates_static = np.exp(self._log_rates_static)
        for cm, _, _ in split_components(initial):
            self._adjust(self._class_of(cm), +1)

    # -- setup ---------------------------------------------------------------

    @classmethod
    def from_model(cls, model, seed: int = 0, initial: Optional[ContactMap] = None,
                   policy: Optional[RatePolicy] = None, **kw) -> "Simulator":
        return cls(model.ruleset(), model.energy, policy or model.policy,
                   model.initial if initial is None else initial, model.observables, seed,
                   model.interventions, **kw)

    def _motif(self, cm: ContactMap) -> int:
        if cm not in self._motif_ids:
            self._motif_ids[cm] = len(self._motifs)
            self._motifs.append(_Motif(cm))
        return self._motif_ids[cm]

    def _add_rule(self, ref):
        lhs = ref.rule.lhs
        parts = split_components(lhs)
        if len(parts) > 2:
            raise SimulationError(f"rule {ref.rule.name} has more than two components")
        self._rules.append(_RuleEntry(ref, tuple(self._motif(p) for p, _, _ in parts),
                                      tuple(a for _, a, _ in parts), tuple(s for _, _, s in parts)))

    def _class_of(self, cm: ContactMap) -> int:
        code = canonical_form(cm)
        k = self._by_code.get(code)
        if k is not None:
            return k
        embeds = [list(embeddings(m.pattern, cm)) for m in self._motifs]
        cls_ = _Class(
            code, cm, _hash64(code),
            np.array([len(e) for e in embeds], dtype=np.int64),
            np.array([count_embeddings(p, cm) for p in self.energy.patterns], dtype=np.int64),
            np.array([count_embeddings(p, cm) for p in self._obs_patterns], dtype=np.int64),
            embeds,
        )
        k = len(self._classes)
        self._classes.append(cls_)
        self._by_code[code] = k
        return k

    def _adjust(self, k: int, d: int):
        c = self._classes[k]
        n = self._n.get(k, 0) + d
        if n < 0:
            raise InvariantViolation("negative species count")
        if n:
            self._n[k] = n
        else:
            self._n.pop(k, None)
        self._S += d * c.motif_counts
        self._P += d * c.pattern_counts
        self._O += d * c.obs_counts
        self._H = (self._H + d * c.hash) % (1 << 64)

    # -- state views -----------------------------------------------------------

    def counts(self) -> np.ndarray:
        return self._P.copy()

    def fingerprint(self) -> int:
        return self._H

    def state_key(self) -> bytes:
        """Canonical form of the whole mixture."""
        codes = sorted(c for k, n in self._n.items() for c in [self._classes[k].code] * n)
        return b"+".join(codes)

    def species(self) -> list[tuple[int, ContactMap]]:
        return [(n, self._classes[k].rep) for k, n in sorted(self._n.items(), key=lambda kv: self._classes[kv[0]].code)]

    def mixture(self) -> ContactMap:
        from .sitegraph import disjoint_union
        mix = ContactMap.empty(self.contact)
        for n, rep in self.species():
            for _ in range(n):
                mix = disjoint_union(mix, rep)
        return mix

    def snapshot(self) -> str:
        return "".join(f"%init: {n} {format_pattern(rep)}\n" for n, rep in self.species())

    def observe(self) -> list[float]:
        values = {name: float(v) for name, v in zip(self.energy.names, self._P)}
        out, k = [], 0
        from .modelfile import eval_expr

        def env(name):
            if name in values:
                return values[name]
            raise SimulationError(f"undefined name {name!r} in an observable")

        for o in self.observables:
            if o.pattern is not None:
                v = float(self._O[k])
                k += 1
            else:
                v = float(eval_expr(o.expr, env))
            values[o.name] = v
            out.append(v)
        return out

    @property
    def columns(self) -> list[str]:
        return [o.name for o in self.observables] or list(self.energy.names)

    def _row(self) -> list[float]:
        return self.observe() if self.observables else [float(v) for v in self._P]

    # -- dynamics --------------------------------------------------------------

    def log_rates(self) -> np.ndarray:
        if self._log_rates_static is not None:
            return self._log_rates_static
        n = self._P
        return np.array([self.policy.log_rate(r.ref, self.energy, n) for r in self._rules])

    def activities(self) -> np.ndarray:
        s = np.append(self._S, 1).astype(float)  # index -1 reads the trailing 1
        a = s[self._m1] * s[self._m2]
        if self._log_rates_static is not None:
            return self._rates_static * a
        out = np.zeros_like(a)
        live = a > 0
        out[live] = np.exp(self.log_rates()[live]) * a[live]
        return out

    def _pick_class(self, motif: int) -> tuple[int, int, int]:
        """(class, copy, embedding index) drawn proportionally to embeddings."""
        rnd = self.rng.random
        classes = self._classes
        total = int(self._S[motif])
        x = rnd() * total
        k = None
        for k, n in self._n.items():
            x -= n * int(classes[k].motif_counts[motif])
            if x < 0:
                break
        m = int(classes[k].motif_counts[motif])
        while m == 0:  # rounding pushed us past the last live class
            k = next(j for j in reversed(self._n) if classes[j].motif_counts[motif])
            m = int(classes[k].motif_counts[motif])
        n = self._n[k]
        return k, min(int(rnd() * n), n - 1), min(int(rnd() * m), m - 1)

    def _outcome(self, r: int, picks) -> Optional[tuple[int, ...]]:
        key = (r, picks)
        hit = self._outcomes.get(key)
        if hit is not None or key in self._outcomes:
            return hit
        entry = self._rules[r]
        lhs = entry.ref.rule.lhs
        agents = [None] * len(lhs.agents)
        sites = [None] * len(lhs.sites)
        same = len(picks) == 2 and picks[0][2]
        if len(picks) == 1:
            target = self._classes[picks[0][0]].rep
            offsets = [(0, 0)]
        elif same:
            target = self._classes[picks[0][0]].rep
            offsets = [(0, 0), (0, 0)]
        else:
            from .sitegraph import disjoint_union
            a, b = self._classes[picks[0][0]].rep, self._classes[picks[1][0]].rep
            target = disjoint_union(a, b)
            offsets = [(0, 0), (len(a.agents), len(a.sites))]
        for (k, e, _), m, am, sm, (oa, os_) in zip(picks, entry.motifs, entry.agent_maps, entry.site_maps, offsets):
            emb = self._classes[k].embeds[m][e]
            for x, y in zip(am, emb.agents):
                agents[x] = y + oa
            for x, y in zip(sm, emb.sites):
                sites[x] = y + os_
        psi = Embedding(lhs, target, tuple(agents), tuple(sites))
        result = None
        if not same or psi.is_valid():
            try:
                new = _replay(entry.ref.rule, psi, target)
                result = tuple(self._class_of(cm) for cm, _, _ in split_components(new))
            except NotRealizable:
                result = None
        if len(self._outcomes) >= self.cache_size:
            self._outcomes.clear()
        self._outcomes[key] = result
        return result

    def _fire(self, r: int) -> bool:
        entry = self._rules[r]
        drawn = [self._pick_class(m) for m in entry.motifs]
        if len(drawn) == 2:
            same = drawn[0][0] == drawn[1][0] and drawn[0][1] == drawn[1][1]
            picks = ((drawn[0][0], drawn[0][2], same), (drawn[1][0], drawn[1][2], same))
        else:
            picks = ((drawn[0][0], drawn[0][2], False),)
        result = self._outcome(r, picks)
        if result is None:
            return False
        consumed = {picks[0][0]} if len(picks) == 1 or picks[0][2] else None
        if consumed is not None:
            self._adjust(picks[0][0], -1)
        else:
            self._adjust(picks[0][0], -1)
            self._adjust(picks[1][0], -1)
        for k in result:
            self._adjust(k, +1)
        return True

    def apply_intervention(self, iv: Intervention):
        for k, n in list(self._n.items()):
            rep = self._classes[k].rep
            if iv.agent not in rep.agents:
                continue
            b = rep.edit()
            for a, t in enumerate(rep.agents):
                if t != iv.agent:
                    continue
                for sname, state in iv.states:
                    s = rep.site_at(a, sname)
                    if s is None:
                        continue
                    if rep.partner[s] is not None:
                        b.unbind(s)
                    b.set_state(s, state)
            parts = [self._class_of(cm) for cm, _, _ in split_components(b.freeze())]
            for _ in range(n):
                self._adjust(k, -1)
                for j in parts:
                    self._adjust(j, +1)

    def recount(self):
        """Recompute the aggregate counts from scratch and compare."""
        S = np.zeros_like(self._S)
        P = np.zeros_like(self._P)
        O = np.zeros_like(self._O)
        for k, n in self._n.items():
            c = self._classes[k]
            S += n * c.motif_counts
            P += n * c.pattern_counts
            O += n * c.obs_counts
        if not (np.array_equal(S, self._S) and np.array_equal(P, self._P) and np.array_equal(O, self._O)):
            raise InvariantViolation("incremental counts drifted from a full recount")

    def step(self, until: float = math.inf) -> Optional[str]:
        """Advance by one jump (or to ``until``); returns the rule name fired."""
        act = self.activities()
        total = float(act.sum())
        t_next = self.t + self.rng.exponential(1.0 / total) if total > 0 else math.inf
        pending = self.interventions[0].time if self.interventions else math.inf
        if pending <= min(t_next, until):
            self.t = pending
            self.apply_intervention(self.interventions.pop(0))
            return None
        if t_next > until:
            self.t = until
            return None
        self.t = t_next
        r = int(np.searchsorted(np.cumsum(act), self.rng.random() * total, side="right"))
        r = min(r, len(act) - 1)
        if self._fire(r):
            self.events += 1
            if self.check_every and self.events % self.check_every == 0:
                self.recount()
            return self._rules[r].ref.rule.name
        self.null_events += 1
        return ""

    def run(self, horizon: float, sample_every: Optional[float] = None, max_events: Optional[int] = None,
            log: Optional[Callable[[str], None]] = None, snapshot_times: Sequence[float] = (),
            occupancy: bool = False) -> Trajectory:
        if not horizon >= 0:
            raise SimulationError("horizon must not be negative")
        for iv in self.interventions:
            if iv.time > self.t + horizon:
                warnings.warn(f"intervention at t={iv.time} lies beyond the horizon", stacklevel=2)
        end = self.t + horizon
        traj = Trajectory(self.columns)
        names = list(self.energy.names) + [o.name for o in self.observables if o.pattern is not None]
        traj.integrals = {n: 0.0 for n in names}
        grid = np.arange(self.t, end + 1e-12, sample_every) if sample_every else np.array([self.t])
        gi = 0
        shots = sorted(snapshot_times)
        si = 0
        start = self.t
        while True:
            t0 = self.t
            base = np.concatenate([self._P, self._O]).astype(float)
            key = self.state_key() if occupancy else None
            old_row = self._row() if gi < len(grid) and sample_every and grid[gi] < end else None
            limit = end if max_events is None or self.events < max_events else t0
            fired = self.step(limit)
            dt = self.t - t0
            for n, v in zip(names, base):
                traj.integrals[n] += v * dt
            if occupancy:
                traj.occupancy[key] = traj.occupancy.get(key, 0.0) + dt
            if gi < len(grid) and grid[gi] < self.t:
                row = old_row if old_row is not None else self._row()
                while gi < len(grid) and grid[gi] < self.t:
                    traj.times.append(float(grid[gi]))
                    traj.rows.append(row)
                    gi += 1
            while si < len(shots) and shots[si] <= self.t:
                traj.snapshots[shots[si]] = self.snapshot()
                si += 1
            if fired and log is not None:
                log(f"{self.t:.9g} {fired} {self._H:016x}")
            if self.t >= end or (max_events is not None and self.events >= max_events):
                break
        while gi < len(grid):
            traj.times.append(float(grid[gi]))
            traj.rows.append(self._row())
            gi += 1
        traj.events = self.events
        traj.null_events = self.null_events
        traj.time = self.t - start
        return traj


def parse_snapshot(text: str, model) -> ContactMap:
    """Read a snapshot (``%init:`` lines) back into a mixture."""
    from .sitegraph import disjoint_union
    mix = ContactMap.empty(model.contact)
    for line in text.splitlines():
        line = line.strip()
        if not line:
            continue
        if not line.startswith("%init:"):
            raise SimulationError(f"bad snapshot line {line!r}")
        n, cx = line[len("%init:"):].strip().split(None, 1)
        c = model.pattern(cx)
        for _ in range(int(n)):
            mix = disjoint_union(mix, c)
    return mix
