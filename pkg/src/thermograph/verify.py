"""Exact checks on small systems: state enumeration and detailed balance.

States are labeled mixtures (agents keep their identity), reached from an
initial mixture by applying every refined rule at every embedding.  With
``pi(x) ~ exp(-E(x))`` the chain satisfies detailed balance iff
``pi(x) q(x, y) = pi(y) q(y, x)`` for every pair of states.
"""

from __future__ import annotations

import json
import math
import warnings
from collections import deque
from dataclasses import dataclass, field
from typing import Callable, Optional, Union

import numpy as np
from scipy.special import logsumexp

from .energy import EnergyModel, RatePolicy
from .refine import RefinedRuleSet
from .rules import _replay
from .sitegraph import ContactMap, canonical_form, count_embeddings, embeddings


class StateSpaceTooLarge(RuntimeError):
    pass


@dataclass
class StateSpace:
    states: list
    index: dict
    q: list                 # per state: {target index: rate}
    energies: np.ndarray
    counts: np.ndarray      # pattern counts per state

    @property
    def log_pi(self) -> np.ndarray:
        return -self.energies - logsumexp(-self.energies)

    @property
    def pi(self) -> np.ndarray:
        return np.exp(self.log_pi)

    @property
    def log_z(self) -> float:
        return float(logsumexp(-self.energies))

    def __len__(self):
        return len(self.states)


def enumerate_states(ruleset: RefinedRuleSet, energy: EnergyModel, policy: RatePolicy,
                     initial: ContactMap, cap: int = 100_000) -> StateSpace:
    """Breadth-first enumeration of the states reachable from ``initial``."""
    refs = ruleset.all()
    states = [initial]
    index = {initial: 0}
    q: list[dict] = []
    counts = [energy.counts(initial)]
    static = None
    if not policy.needs_counts() and energy.is_linear:
        static = [policy.rate(r, energy) for r in refs]
    todo = deque([0])
    while todo:
        i = todo.popleft()
        x = states[i]
        out: dict[int, float] = {}
        for k, ref in enumerate(refs):
            rate = static[k] if static is not None else policy.rate(ref, energy, counts[i])
            for psi in embeddings(ref.rule.lhs, x):
                y = _replay(ref.rule, psi, x)
                j = index.get(y)
                if j is None:
                    if len(states) >= cap:
                        raise StateSpaceTooLarge(
                            f"more than {cap} states reachable ({len(todo)} states still on the frontier)")
                    j = len(states)
                    index[y] = j
                    states.append(y)
                    counts.append(energy.counts(y))
                    todo.append(j)
                if j != i:
                    out[j] = out.get(j, 0.0) + rate
        q.append(out)
    counts_arr = np.array(counts, dtype=float)
    energies = np.array([energy.v(c) for c in counts_arr])
    return StateSpace(states, index, q, energies, counts_arr)


@dataclass
class BalanceReport:
    states: int
    transitions: int
    max_rel_error: float
    log_z: float
    offending: Optional[tuple] = None   # (x, y) state indices of the worst pair
    tol: float = 1e-10

    @property
    def passed(self) -> bool:
        return self.max_rel_error <= self.tol

    def to_dict(self) -> dict:
        return {"states": self.states, "transitions": self.transitions,
                "max_rel_error": self.max_rel_error, "log_z": self.log_z,
                "offending": list(self.offending) if self.offending else None,
                "tol": self.tol, "passed": self.passed}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    def to_text(self) -> str:
        verdict = "PASS" if self.passed else "FAIL"
        lines = [f"{verdict}: detailed balance on {self.states} states, {self.transitions} transitions",
                 f"  max relative error {self.max_rel_error:.3e} (tolerance {self.tol:g})",
                 f"  log Z = {self.log_z:.12g}"]
        if self.offending and not self.passed:
            lines.append(f"  worst pair: states {self.offending[0]} -> {self.offending[1]}")
        return "\n".join(lines)


def check_detailed_balance(space: StateSpace, tol: float = 1e-10) -> BalanceReport:
    log_pi = space.log_pi
    worst, pair, n = 0.0, None, 0
    for i, out in enumerate(space.q):
        for j, rate in out.items():
            n += 1
            back = space.q[j].get(i, 0.0)
            if back == 0.0:
                err = 1.0
            else:
                # |a - b| / max(a, b) computed from log a - log b
                d = (log_pi[i] + math.log(rate)) - (log_pi[j] + math.log(back))
                err = -math.expm1(-abs(d))
            if pair is None or err > worst:
                worst, pair = err, (i, j)
    return BalanceReport(len(space), n, worst, space.log_z, pair, tol)


def check_lumped_balance(space: StateSpace, tol: float = 1e-10) -> BalanceReport:
    """Detailed balance of the chain collapsed to isomorphism classes.

    The lumped rate from class X to class Y is the total rate from one member
    of X into Y.  A cross-check only: when the labeled chain is balanced so is
    the lumped one.
    """
    keys = [canonical_form(x) for x in space.states]
    classes = sorted(set(keys))
    where = {k: n for n, k in enumerate(classes)}
    rep = {}
    for i, k in enumerate(keys):
        rep.setdefault(where[k], i)
    log_mass = np.full(len(classes), -np.inf)
    for i, k in enumerate(keys):
        log_mass[where[k]] = np.logaddexp(log_mass[where[k]], space.log_pi[i])
    rates = []
    for c in range(len(classes)):
        out: dict[int, float] = {}
        for j, r in space.q[rep[c]].items():
            d = where[keys[j]]
            if d != c:
                out[d] = out.get(d, 0.0) + r
        rates.append(out)
    worst, pair, n = 0.0, None, 0
    for c, out in enumerate(rates):
        for d, rate in out.items():
            n += 1
            back = rates[d].get(c, 0.0)
            err = 1.0 if back == 0.0 else -math.expm1(-abs(
                (log_mass[c] + math.log(rate)) - (log_mass[d] + math.log(back))))
            if pair is None or err > worst:
                worst, pair = err, (rep[c], rep[d])
    return BalanceReport(len(classes), n, worst, space.log_z, pair, tol)


def certify(ruleset, energy, policy, initial, cap: int = 100_000, tol: float = 1e-10) -> BalanceReport:
    return check_detailed_balance(enumerate_states(ruleset, energy, policy, initial, cap), tol)


def stationary_expectation(space: StateSpace, f: Union[Callable, ContactMap, int]) -> float:
    """Expectation under ``pi`` of a function of states, a pattern count or a pattern index."""
    pi = space.pi
    if isinstance(f, int):
        vals = space.counts[:, f]
    elif isinstance(f, ContactMap):
        vals = np.array([count_embeddings(f, x) for x in space.states], dtype=float)
    else:
        vals = np.array([f(x) for x in space.states], dtype=float)
    return float(pi @ vals)


def lumped_pi(space: StateSpace) -> dict:
    """Stationary mass of each isomorphism class of states (canonical form -> mass)."""
    out: dict[bytes, float] = {}
    for x, p in zip(space.states, space.pi):
        k = canonical_form(x)
        out[k] = out.get(k, 0.0) + float(p)
    return out


@dataclass
class EmpiricalComparison:
    max_abs_error: float
    rows: list = field(default_factory=list)   # (state key, empirical, exact)

    def within(self, tol: float) -> bool:
        return self.max_abs_error <= tol

    def to_text(self) -> str:
        lines = [f"max absolute occupancy error {self.max_abs_error:.4f}"]
        for key, emp, exact in self.rows:
            lines.append(f"  {emp:.4f} {exact:.4f}  {key.decode() if isinstance(key, bytes) else key}")
        return "\n".join(lines)


def compare_empirical(space: StateSpace, occupancy: dict, events: Optional[int] = None,
                      min_events_per_state: int = 100) -> EmpiricalComparison:
    """Compare time-weighted occupancy (keyed by canonical form) with ``pi``.

    Warns when ``events`` is given and is below ``min_events_per_state``
    times the number of lumped states.
    """
    exact = lumped_pi(space)
    if events is not None and events < min_events_per_state * len(exact):
        warnings.warn(f"only {events} events for {len(exact)} states; occupancy estimates are noisy",
                      stacklevel=2)
    total = sum(occupancy.values())
    keys = sorted(set(exact) | set(occupancy), key=lambda k: -exact.get(k, 0.0))
    rows = [(k, occupancy.get(k, 0.0) / total if total else 0.0, exact.get(k, 0.0)) for k in keys]
    return EmpiricalComparison(max((abs(a - b) for _, a, b in rows), default=0.0), rows)
