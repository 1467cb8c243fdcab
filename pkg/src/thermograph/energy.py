"""Energy patterns, energies of mixtures and detailed-balance rate policies.

Costs are dimensionless (units of kT).  The energy of a mixture ``x`` is
``v(P(x))`` where ``P(x)`` counts embeddings of each pattern; ``v`` is the
linear form ``eps . n`` plus an optional quadratic term ``sum w_c n_c^2``.

A rate policy assigns a log-rate to each refined rule so that for every
refined pair ``log k(g*) - log k(g) = eps . Delta`` (or, for a quadratic
energy, the count-dependent energy difference).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping, Optional, Sequence

import numpy as np
import sympy

from .refine import Refinement, RefinedRuleSet
from .rules import INVERSE_MARK
from .sitegraph import ContactMap, count_embeddings


class PolicyError(ValueError):
    pass


@dataclass(frozen=True)
class EnergyModel:
    patterns: tuple
    costs: tuple
    names: tuple = ()
    quadratic: tuple = ()

    def __post_init__(self):
        if len(self.patterns) != len(self.costs):
            raise ValueError("one cost per pattern")
        for c in self.patterns:
            if not c.is_connected():
                raise ValueError("energy patterns must be connected")
        if not self.names:
            object.__setattr__(self, "names", tuple(f"p{i}" for i in range(len(self.patterns))))
        if not self.quadratic:
            object.__setattr__(self, "quadratic", (0.0,) * len(self.patterns))

    @property
    def eps(self) -> np.ndarray:
        return np.asarray(self.costs, dtype=float)

    @property
    def is_linear(self) -> bool:
        return not any(self.quadratic)

    def with_costs(self, costs, quadratic=None) -> "EnergyModel":
        return EnergyModel(self.patterns, tuple(float(c) for c in costs), self.names,
                           tuple(quadratic) if quadratic is not None else self.quadratic)

    def counts(self, x: ContactMap) -> np.ndarray:
        return pattern_counts(x, self)

    def v(self, n) -> float:
        n = np.asarray(n, dtype=float)
        return float(self.eps @ n + np.asarray(self.quadratic, dtype=float) @ (n * n))

    def energy(self, x: ContactMap) -> float:
        return self.v(self.counts(x))

    def delta_energy(self, balance, n=None) -> float:
        """Energy change of a refined rule with the given balance vector."""
        d = np.asarray(balance, dtype=float)
        if self.is_linear:
            return float(self.eps @ d)
        if n is None:
            raise ValueError("a quadratic energy needs the current counts")
        n = np.asarray(n, dtype=float)
        return self.v(n + d) - self.v(n)


def pattern_counts(x: ContactMap, model: EnergyModel) -> np.ndarray:
    return np.array([count_embeddings(c, x) for c in model.patterns], dtype=np.int64)


def energy(x: ContactMap, model: EnergyModel) -> float:
    return model.energy(x)


def generator_of(ref: Refinement) -> tuple[str, bool]:
    """(declared generator name, whether this refinement runs it backwards)."""
    name = ref.extension.base.name
    if name.endswith(INVERSE_MARK):
        return name[: -len(INVERSE_MARK)], True
    return name, False


# ---------------------------------------------------------------------------
# policies


@dataclass
class RatePolicy:
    """Base class; subclasses implement :meth:`log_rate`."""

    kind = "abstract"

    def log_rate(self, ref: Refinement, model: EnergyModel, counts=None) -> float:
        raise NotImplementedError

    def rate(self, ref: Refinement, model: EnergyModel, counts=None) -> float:
        return math.exp(self.log_rate(ref, model, counts))

    def needs_counts(self) -> bool:
        return False

    def params(self) -> dict:
        return {}


@dataclass
class Metropolis(RatePolicy):
    kind = "metropolis"

    def log_rate(self, ref, model, counts=None):
        _, backwards = generator_of(ref)
        if backwards:
            return 0.0
        return -model.delta_energy(ref.balance, counts)


@dataclass
class Symmetric(RatePolicy):
    scale: Mapping[str, float] = field(default_factory=dict)
    kind = "symmetric"

    def __post_init__(self):
        for g, c in self.scale.items():
            if c <= 0:
                raise PolicyError(f"time scale for {g} must be positive")

    def log_rate(self, ref, model, counts=None):
        g, _ = generator_of(ref)
        return math.log(self.scale.get(g, 1.0)) - model.delta_energy(ref.balance, counts) / 2

    def params(self):
        return {f"C.{g}": c for g, c in sorted(self.scale.items())}


@dataclass
class LogAffine(RatePolicy):
    """``log k = c_g - (A_g eps) . Delta`` with ``A_g + A_g* = I``.

    ``matrices`` gives ``A_g`` for declared generators; the inverse uses the
    complement.  ``default`` is used for generators without a matrix.
    """

    matrices: Mapping[str, np.ndarray] = field(default_factory=dict)
    offsets: Mapping[str, float] = field(default_factory=dict)
    default: float = 0.5
    inverse_matrices: Optional[Mapping[str, np.ndarray]] = None
    kind = "log-affine"

    def __post_init__(self):
        if self.inverse_matrices is None:
            return
        for g, a in self.matrices.items():
            b = self.inverse_matrices.get(g)
            if b is None:
                continue
            a = np.asarray(a, dtype=float)
            if not np.allclose(a + np.asarray(b, dtype=float), np.eye(a.shape[0]), atol=1e-12):
                raise PolicyError(f"A_g + A_g* must be the identity for generator {g}")

    def matrix(self, g: str, backwards: bool, size: int) -> np.ndarray:
        a = self.matrices.get(g)
        a = self.default * np.eye(size) if a is None else np.asarray(a, dtype=float)
        if a.shape != (size, size):
            raise PolicyError(f"A_{g} has shape {a.shape}, expected {(size, size)}")
        return np.eye(size) - a if backwards else a

    def log_rate(self, ref, model, counts=None):
        if not model.is_linear:
            raise PolicyError("the log-affine policy needs a linear energy")
        g, backwards = generator_of(ref)
        a = self.matrix(g, backwards, len(model.costs))
        return self.offsets.get(g, 0.0) - float((a @ model.eps) @ np.asarray(ref.balance, dtype=float))

    def params(self):
        out = {"a": self.default}
        out.update({f"c.{g}": c for g, c in sorted(self.offsets.items())})
        return out


@dataclass
class Nonlinear(RatePolicy):
    """``log k = alpha_g - beta_g psi_g(n)``, ``psi_g(n) = v(n + Delta) - v(n)``."""

    alpha: Mapping[str, float] = field(default_factory=dict)
    beta: Mapping[str, float] = field(default_factory=dict)
    default_beta: float = 0.5
    kind = "nonlinear"

    def needs_counts(self):
        return True

    def beta_of(self, g: str, backwards: bool) -> float:
        b = self.beta.get(g, self.default_beta)
        return 1.0 - b if backwards else b

    def log_rate(self, ref, model, counts=None):
        if counts is None:
            raise PolicyError("the nonlinear policy needs the current pattern counts")
        g, backwards = generator_of(ref)
        return self.alpha.get(g, 0.0) - self.beta_of(g, backwards) * psi(model, ref.balance, counts)

    def params(self):
        out = {"beta": self.default_beta}
        out.update({f"alpha.{g}": a for g, a in sorted(self.alpha.items())})
        out.update({f"beta.{g}": b for g, b in sorted(self.beta.items())})
        return out


def psi(model: EnergyModel, balance, counts) -> float:
    n = np.asarray(counts, dtype=float)
    return model.v(n + np.asarray(balance, dtype=float)) - model.v(n)


@dataclass
class Mutated(RatePolicy):
    """Wraps a policy and multiplies the rate of one named refined rule."""

    inner: RatePolicy = field(default_factory=Symmetric)
    rule_name: str = ""
    factor: float = 2.0

    @property
    def kind(self):
        return self.inner.kind

    def needs_counts(self):
        return self.inner.needs_counts()

    def log_rate(self, ref, model, counts=None):
        base = self.inner.log_rate(ref, model, counts)
        return base + math.log(self.factor) if ref.rule.name == self.rule_name else base


def rate_of(ref: Refinement, policy: RatePolicy, model: EnergyModel, counts=None) -> float:
    return policy.rate(ref, model, counts)


# ---------------------------------------------------------------------------
# checks


@dataclass
class CompatReport:
    checked: int = 0
    violations: list = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations


def check_compat(ruleset: RefinedRuleSet, policy: RatePolicy, model: EnergyModel,
                 tol: float = 1e-12, count_samples: Optional[Sequence] = None) -> CompatReport:
    """Check ``log k(g*) - log k(g) = energy change`` on every refined pair.

    For count-dependent policies the identity is checked at each sample of
    pattern counts (the counts before the forward event).
    """
    report = CompatReport()
    if policy.needs_counts() or not model.is_linear:
        samples = list(count_samples) if count_samples is not None else [
            np.full(len(model.patterns), k) for k in range(4)]
    else:
        samples = [None]
    for fw, bw in ruleset.pairs():
        for n in samples:
            after = None if n is None else np.asarray(n) + np.asarray(fw.balance)
            lhs = policy.log_rate(bw, model, after) - policy.log_rate(fw, model, n)
            rhs = model.delta_energy(fw.balance, n)
            report.checked += 1
            if abs(lhs - rhs) > tol * max(1.0, abs(rhs)):
                report.violations.append((fw.rule.name, bw.rule.name, lhs, rhs))
    return report


def balance_rank(vectors) -> int:
    """Exact rank of a family of balance vectors (or of a rule set's forward vectors)."""
    if isinstance(vectors, RefinedRuleSet):
        rows = [list(fw.balance) for fw, _ in vectors.pairs()]
    else:
        rows = [list(getattr(v, "balance", v)) for v in vectors]
    if not rows:
        return 0
    return int(sympy.Matrix(rows).rank())
