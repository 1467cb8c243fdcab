"""Exporters: KaSim rule files and refined-rule JSON.

Rates are written as closed-form expressions over the cost parameters, e.g.
``@ [exp] (-1/2 * ('ab' + 't'))`` for a symmetric bind refinement that
creates one ``'ab'`` bond and closes a triangle, and
``@ [exp] -(-1/2 * ('ab' + 't'))`` for its inverse.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from typing import Optional, Sequence

from .energy import Metropolis, Symmetric, generator_of
from .kappa import build_pattern, format_pattern, parse_agents
from .modelfile import Model, contact_of, expr_names, parse_expr
from .rules import Rule, rule_from_sides
from .sitegraph import ContactGraph, ContactMap, Embedding, embeddings


class ExportError(ValueError):
    pass


def cost_terms(model: Model) -> list[str]:
    """Printable cost of each energy pattern; zero-valued costs give ''."""
    out = []
    for (name, _, expr), cost in zip(model.file.energies, model.energy.costs):
        if cost == 0:
            out.append("")
            continue
        tree = parse_expr(expr)
        names = expr_names(tree)
        out.append(expr if names == [expr.strip("'")] and expr.startswith("'") else f"({expr})")
    return out


def balance_terms(balance: Sequence[int], terms: Sequence[str]) -> str:
    """``'ab'``, ``('ab' + 't')``, ``(2 * 'ab' - 't')``; empty when nothing is left."""
    parts = []
    for d, term in zip(balance, terms):
        if d == 0 or not term:
            continue
        mag = abs(int(d))
        body = term if mag == 1 else f"{mag} * {term}"
        parts.append((d < 0, body))
    if not parts:
        return ""
    if len(parts) == 1 and not parts[0][0]:
        return parts[0][1]
    text = ("- " if parts[0][0] else "") + parts[0][1]
    for neg, body in parts[1:]:
        text += f" {'-' if neg else '+'} {body}"
    return f"({text})"


def rate_expression(ref, policy, terms: Sequence[str]) -> str:
    g, backwards = generator_of(ref)
    fw_balance = [-d for d in ref.balance] if backwards else list(ref.balance)
    x = balance_terms(fw_balance, terms)
    if isinstance(policy, Symmetric):
        scale = policy.scale.get(g, 1.0)
        prefix = "" if scale == 1.0 else f"{scale!r} * "
        if not x:
            return f"{prefix}[exp] (0)"
        core = f"(-1/2 * {x})"
        return prefix + (f"[exp] -{core}" if backwards else f"[exp] {core}")
    if isinstance(policy, Metropolis):
        if backwards or not x:
            return "[exp] (0)"
        return f"[exp] (-1 * {x})"
    raise ExportError(f"the {policy.kind} policy is not exportable as closed-form rates")


def _signature(model: Model) -> list[str]:
    out = []
    for name, sites in model.file.agents:
        parts = [s + "".join(f"~{v}" for v in st) + "".join(f"!{b}.{a}" for a, b in ps) for s, st, ps in sites]
        out.append(f"%agent: {name}({', '.join(parts)})")
    return out


def export_kasim(model: Model, ruleset=None, policy=None) -> str:
    """KaSim-style text: signatures, parameters, initial state, refined rules."""
    ruleset = ruleset or model.ruleset()
    policy = policy or model.policy
    terms = cost_terms(model)
    lines = ["# Agent signatures"] + _signature(model)
    lines += ["", "# Energy costs"] + [f"%var: '{n}' {v!r}" for n, v in model.params.items()]
    lines += ["", "# Initial state"] + [f"%init: {n} {cx}" for n, cx in model.file.inits]
    obs = [(n, t) for n, k, t in model.file.obs if k == "pattern"]
    if obs:
        lines += ["", "# Observables"] + [f"%obs: '{n}' |{t}|" for n, t in obs]
    lines += ["", "# Rules"]
    groups: dict[str, list] = {}
    for ref in ruleset.all():
        groups.setdefault(ref.extension.base.name, []).append(ref)
    for base in groups:
        refs = groups[base]
        g = refs[0].extension.base
        lines += ["", f"# {format_pattern(g.lhs, spaced=True)} -> {format_pattern(g.rhs, spaced=True)} refines into:"]
        for ref in refs:
            lhs, rhs = format_pattern(ref.rule.lhs), format_pattern(ref.rule.rhs)
            lines.append(f"{lhs} -> {rhs} @ {rate_expression(ref, policy, terms)}")
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# reading KaSim text back


@dataclass
class KasimRule:
    lhs: ContactMap
    rhs: ContactMap
    rate: str
    line: int
    group: str = ""

    @property
    def rule(self) -> Rule:
        return rule_from_sides(self.lhs, self.rhs, f"line{self.line}")


@dataclass
class KasimDocument:
    contact: ContactGraph
    rules: list = field(default_factory=list)
    params: dict = field(default_factory=dict)
    inits: list = field(default_factory=list)


_RULE = re.compile(r"^(?P<lhs>.*?)->(?P<rhs>.*?)@(?P<rate>.*)$")


def _joined_lines(text: str):
    buf, start = "", None
    for no, raw in enumerate(text.splitlines(), 1):
        stripped = raw.rstrip()
        if start is None:
            start = no
        if stripped.endswith("\\"):
            buf += stripped[:-1] + " "
            continue
        yield start, buf + stripped
        buf, start = "", None
    if buf:
        yield start, buf


def parse_kasim(text: str, contact: Optional[ContactGraph] = None) -> KasimDocument:
    """Read the rule subset we export (and the hand-compressed triangle listing).

    Signatures come from ``%agent`` lines in our notation unless ``contact``
    is given.
    """
    lines = list(_joined_lines(text))
    if contact is None:
        from .modelfile import parse as parse_model
        sig = "\n".join(l for _, l in lines if l.lstrip().startswith("%agent:"))
        if not sig:
            raise ExportError("no %agent lines and no contact graph given")
        contact = contact_of(parse_model(sig))
    doc = KasimDocument(contact)
    group = ""
    for no, line in lines:
        s = line.strip()
        if not s:
            continue
        if s.startswith("#"):
            m = re.match(r"^#\s*(.*?)\s*refines into:", s)
            if m:
                group = m.group(1)
            continue
        if s.startswith("%var:"):
            m = re.match(r"^%var:\s*'([^']+)'\s+(\S+)", s)
            if m:
                doc.params[m.group(1)] = float(m.group(2))
            continue
        if s.startswith("%init:"):
            n, cx = s[len("%init:"):].strip().split(None, 1)
            doc.inits.append((int(n), build_pattern(parse_agents(cx), contact)))
            continue
        if s.startswith("%"):
            continue
        m = _RULE.match(s)
        if not m:
            raise ExportError(f"line {no}: not a rule: {s[:40]!r}")
        lhs = build_pattern(parse_agents(m["lhs"]), contact)
        rhs = build_pattern(parse_agents(m["rhs"]), contact)
        doc.rules.append(KasimRule(lhs, rhs, normalize_rate(m["rate"]), no, group))
    return doc


def normalize_rate(text: str) -> str:
    return re.sub(r"\s+", " ", text.strip())


def rules_isomorphic(a: Rule, b: Rule) -> bool:
    if (len(a.lhs.agents), len(a.lhs.sites)) != (len(b.lhs.agents), len(b.lhs.sites)):
        return False
    for e in embeddings(a.lhs, b.lhs):
        if Embedding(a.rhs, b.rhs, e.agents, e.sites).is_valid():
            return True
    return False


def rule_matches(general: Rule, specific: Rule) -> list[Embedding]:
    """Embeddings of ``general`` into ``specific`` that carry the rewrite along.

    The left and right sides must both embed under the same map, and the
    sites ``general`` modifies must be exactly the sites ``specific`` does.
    """
    out = []
    want = set(specific.modified)
    for e in embeddings(general.lhs, specific.lhs):
        if not Embedding(general.rhs, specific.rhs, e.agents, e.sites).is_valid():
            continue
        if {e.sites[i] for i in general.modified} == want:
            out.append(e)
    return out


# ---------------------------------------------------------------------------
# JSON


def ruleset_json(model: Model, ruleset=None, policy=None) -> str:
    ruleset = ruleset or model.ruleset()
    policy = policy or model.policy
    terms = None
    try:
        terms = cost_terms(model)
    except Exception:
        pass
    counts_free = not policy.needs_counts() and model.energy.is_linear
    out = []
    for ref in ruleset.all():
        g, backwards = generator_of(ref)
        entry = {
            "name": ref.rule.name,
            "generator": g,
            "direction": "backward" if backwards else "forward",
            "lhs": format_pattern(ref.rule.lhs),
            "rhs": format_pattern(ref.rule.rhs),
            "balance": dict(zip(model.energy.names, map(int, ref.balance))),
        }
        if counts_free:
            entry["log_rate"] = policy.log_rate(ref, model.energy)
        if isinstance(policy, (Symmetric, Metropolis)) and terms is not None:
            entry["rate"] = rate_expression(ref, policy, terms)
        out.append(entry)
    return json.dumps({"patterns": list(model.energy.names), "policy": policy.kind, "rules": out}, indent=2)
