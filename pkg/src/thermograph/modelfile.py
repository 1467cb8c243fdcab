"""Model files: parsing, printing and compilation to library objects.

The grammar is line based (``\\`` continues a line, ``#`` starts a comment)::

    %agent: A(l!r.C, r!l.B)             signature; !site.Agent lists partners
    %agent: P(f~0~1, s!s.Y)             ~v declares internal states
    %param: 'ab' -1.5                   named real (an arithmetic expression)
    %energy: 'ab' A(r!1), B(l!1) @ 'ab' pattern and cost expression
    %gen: 'bind' A(r), B(l) <-> A(r!1), B(l!1)
    %policy: symmetric C.bind=2.0
    %init: 10 A(l, r)                   copies of a fully specified complex
    %obs: 'tri' A(r!1), B(l!1)          pattern observable
    %obs: 'frac' = 'tri' / 10           expression over earlier names
    %intervention: 100 Y(s~p)           set a site state on every agent of a type

See docs/format.md for the full description.
"""

from __future__ import annotations

import ast
import operator
import re
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Optional

from .energy import EnergyModel, LogAffine, Metropolis, Nonlinear, PolicyError, RatePolicy, Symmetric
from .kappa import KappaSyntaxError, build_pattern, format_pattern, parse_agents
from .refine import RefinedRuleSet
from .rules import RuleError, rule_from_sides
from .sitegraph import ContactGraph, ContactMap, count_embeddings, disjoint_union

CODES = {
    "E001": "missing %agent section",
    "E002": "unknown agent",
    "E003": "unknown site or bond",
    "E004": "unknown state",
    "E005": "generator is not reversible",
    "E006": "energy pattern is not connected",
    "E007": "undefined name",
    "E008": "syntax error",
    "E009": "invalid declaration",
}

POLICIES = ("metropolis", "symmetric", "log-affine", "nonlinear")


@dataclass(frozen=True)
class Diagnostic:
    code: str
    message: str
    line: int = 0
    col: int = 0

    def __str__(self):
        return f"{self.line}:{self.col}: {self.code} {self.message}"


class ModelError(Exception):
    def __init__(self, diagnostics):
        self.diagnostics = list(diagnostics)
        super().__init__("\n".join(str(d) for d in self.diagnostics))


@dataclass
class ModelFile:
    agents: list = field(default_factory=list)      # (name, [(site, states, partners)])
    params: list = field(default_factory=list)      # (name, expr)
    energies: list = field(default_factory=list)    # (name, pattern, expr)
    gens: list = field(default_factory=list)        # (name, lhs, rhs)
    policy: tuple = ("symmetric", ())               # (kind, ((key, value), ...))
    inits: list = field(default_factory=list)       # (count, complex)
    obs: list = field(default_factory=list)         # (name, "pattern" | "expr", text)
    interventions: list = field(default_factory=list)  # (time expr, pattern)

    def to_text(self) -> str:
        out = []
        for name, sites in self.agents:
            parts = []
            for s, states, partners in sites:
                parts.append(s + "".join(f"~{v}" for v in states) + "".join(f"!{b}.{a}" for a, b in partners))
            out.append(f"%agent: {name}({', '.join(parts)})")
        for name, expr in self.params:
            out.append(f"%param: '{name}' {expr}")
        for name, pat, expr in self.energies:
            out.append(f"%energy: '{name}' {pat} @ {expr}")
        for name, lhs, rhs in self.gens:
            out.append(f"%gen: '{name}' {lhs} <-> {rhs}")
        kind, opts = self.policy
        out.append("%policy: " + " ".join([kind] + [f"{k}={v}" for k, v in opts]))
        for n, cx in self.inits:
            out.append(f"%init: {n} {cx}")
        for name, kind, text in self.obs:
            out.append(f"%obs: '{name}' {'= ' if kind == 'expr' else ''}{text}")
        for t, pat in self.interventions:
            out.append(f"%intervention: {t} {pat}")
        return "\n".join(out) + "\n"


# ---------------------------------------------------------------------------
# arithmetic


_BIN = {ast.Add: operator.add, ast.Sub: operator.sub, ast.Mult: operator.mul,
        ast.Div: operator.truediv, ast.Pow: operator.pow}
_UN = {ast.USub: operator.neg, ast.UAdd: operator.pos}


def parse_expr(text: str) -> ast.AST:
    try:
        tree = ast.parse(text.strip(), mode="eval").body
    except SyntaxError as exc:
        raise ValueError(f"bad expression {text.strip()!r}") from exc
    for node in ast.walk(tree):
        if not isinstance(node, (ast.BinOp, ast.UnaryOp, ast.Constant, ast.operator, ast.unaryop)):
            raise ValueError(f"unsupported expression {text.strip()!r}")
        if isinstance(node, ast.Constant) and not isinstance(node.value, (int, float, str)):
            raise ValueError(f"unsupported constant in {text.strip()!r}")
        if isinstance(node, ast.BinOp) and type(node.op) not in _BIN:
            raise ValueError(f"unsupported operator in {text.strip()!r}")
        if isinstance(node, ast.UnaryOp) and type(node.op) not in _UN:
            raise ValueError(f"unsupported operator in {text.strip()!r}")
    return tree


def expr_names(tree: ast.AST) -> list[str]:
    return [n.value for n in ast.walk(tree) if isinstance(n, ast.Constant) and isinstance(n.value, str)]


def eval_expr(tree: ast.AST, env) -> float:
    if isinstance(tree, ast.Constant):
        if isinstance(tree.value, str):
            return env(tree.value)
        return float(tree.value)
    if isinstance(tree, ast.BinOp):
        return _BIN[type(tree.op)](eval_expr(tree.left, env), eval_expr(tree.right, env))
    return _UN[type(tree.op)](eval_expr(tree.operand, env))


def normalize_expr(text: str) -> str:
    return ast.unparse(parse_expr(text))


# ---------------------------------------------------------------------------
# parsing

_SECTION = re.compile(r"^%(\w+)\s*:\s*(.*)$")
_NAME = re.compile(r"^'([^']+)'\s*(.*)$")
_SIG_SITE = re.compile(r"^([A-Za-z_][A-Za-z0-9_]*)((?:~[A-Za-z0-9_]+)*)((?:![A-Za-z_][A-Za-z0-9_]*\.[A-Za-z_][A-Za-z0-9_]*)*)$")


def _logical_lines(text: str):
    buf, start = "", None
    for no, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].rstrip()
        if start is None:
            start = no
        if line.endswith("\\"):
            buf += line[:-1] + " "
            continue
        buf += line
        if buf.strip():
            yield start, buf
        buf, start = "", None
    if buf.strip():
        yield start, buf


def parse(text: str) -> ModelFile:
    """Parse model text; raises :class:`ModelError` with coded diagnostics."""
    try:
        return _parse(text)
    except ModelError:
        raise
    except Exception as exc:  # the parser must never crash on bad input
        raise ModelError([Diagnostic("E008", f"unreadable model: {exc}")]) from exc


def _parse(text: str) -> ModelFile:
    mf = ModelFile()
    diags: list[Diagnostic] = []
    raw: dict[str, list] = {k: [] for k in ("agent", "param", "energy", "gen", "policy", "init", "obs",
                                            "intervention")}
    for no, line in _logical_lines(text):
        m = _SECTION.match(line.strip())
        if not m:
            diags.append(Diagnostic("E008", f"expected a %section line, got {line.strip()[:30]!r}", no, 1))
            continue
        kind, body = m.group(1), m.group(2)
        if kind not in raw:
            diags.append(Diagnostic("E008", f"unknown section %{kind}", no, 1))
            continue
        col = line.index(body) + 1 if body else len(line) + 1
        raw[kind].append((no, col, body))
    if not raw["agent"]:
        diags.append(Diagnostic("E001", CODES["E001"], 1, 1))
        raise ModelError(diags)

    # signatures
    seen_agents = set()
    for no, col, body in raw["agent"]:
        try:
            m = re.match(r"^\s*([A-Za-z_][A-Za-z0-9_]*)\s*\((.*)\)\s*$", body)
            if not m:
                raise ValueError("expected Agent(site, ...)")
            name, inner = m.group(1), m.group(2)
            if name in seen_agents:
                raise ValueError(f"agent {name} declared twice")
            seen_agents.add(name)
            sites = []
            for part in [p.strip() for p in inner.split(",") if p.strip()]:
                sm = _SIG_SITE.match(part.replace(" ", ""))
                if not sm:
                    raise ValueError(f"bad site declaration {part!r}")
                states = tuple(v for v in sm.group(2).split("~") if v)
                partners = tuple(tuple(reversed(b.split("."))) for b in sm.group(3).split("!") if b)
                sites.append((sm.group(1), states, partners))
            mf.agents.append((name, sites))
        except ValueError as exc:
            diags.append(Diagnostic("E008", str(exc), no, col))
    if diags:
        raise ModelError(diags)
    try:
        contact = contact_of(mf)
    except ValueError as exc:
        code = "E002" if "unknown agent" in str(exc) else "E003"
        raise ModelError([Diagnostic(code, str(exc), raw["agent"][0][0], 1)]) from exc

    def pattern(text: str, no: int, col: int) -> Optional[ContactMap]:
        try:
            return build_pattern(parse_agents(text), contact, offset=col)
        except KappaSyntaxError as exc:
            diags.append(Diagnostic(exc.code, str(exc), no, exc.col))
        except Exception as exc:
            diags.append(Diagnostic("E003", str(exc), no, col))
        return None

    def named(body: str, no: int, col: int):
        m = _NAME.match(body)
        if not m:
            diags.append(Diagnostic("E008", "expected a quoted name", no, col))
            return None, ""
        return m.group(1), m.group(2)

    def rest_col(body: str, rest: str, col: int) -> int:
        return col + len(body) - len(rest)

    names_param = []
    for no, col, body in raw["param"]:
        name, rest = named(body, no, col)
        if name is None:
            continue
        try:
            mf.params.append((name, normalize_expr(rest)))
            names_param.append(name)
        except ValueError as exc:
            diags.append(Diagnostic("E008", str(exc), no, rest_col(body, rest, col)))

    for no, col, body in raw["energy"]:
        name, rest = named(body, no, col)
        if name is None:
            continue
        if "@" not in rest:
            diags.append(Diagnostic("E008", "energy pattern needs '@ cost'", no, col))
            continue
        ptext, etext = rest.rsplit("@", 1)
        c0 = rest_col(body, rest, col)
        cm = pattern(ptext, no, c0)
        if cm is None:
            continue
        if not cm.is_connected():
            diags.append(Diagnostic("E006", f"energy pattern '{name}' is not connected", no, c0))
            continue
        try:
            mf.energies.append((name, format_pattern(cm), normalize_expr(etext)))
        except ValueError as exc:
            diags.append(Diagnostic("E008", str(exc), no, c0 + len(ptext) + 1))

    for no, col, body in raw["gen"]:
        name, rest = named(body, no, col)
        if name is None:
            continue
        c0 = rest_col(body, rest, col)
        if "<->" not in rest:
            diags.append(Diagnostic("E005", f"generator '{name}' must be written lhs <-> rhs", no, c0))
            continue
        ltext, rtext = rest.split("<->", 1)
        lhs = pattern(ltext, no, c0)
        rhs = pattern(rtext, no, c0 + len(ltext) + 3)
        if lhs is None or rhs is None:
            continue
        try:
            r = rule_from_sides(lhs, rhs, name)
        except RuleError as exc:
            diags.append(Diagnostic("E005", str(exc), no, c0))
            continue
        mf.gens.append((name, format_pattern(r.lhs), format_pattern(r.rhs)))

    if len(raw["policy"]) > 1:
        diags.append(Diagnostic("E009", "more than one %policy", raw["policy"][1][0], 1))
    for no, col, body in raw["policy"][:1]:
        words = body.split()
        if not words or words[0] not in POLICIES:
            diags.append(Diagnostic("E009", f"policy must be one of {', '.join(POLICIES)}", no, col))
            continue
        opts = []
        for w in words[1:]:
            if "=" not in w:
                diags.append(Diagnostic("E008", f"policy option {w!r} must be key=value", no, col))
                continue
            k, v = w.split("=", 1)
            try:
                float(v)
            except ValueError:
                diags.append(Diagnostic("E008", f"policy option {k} needs a number", no, col))
                continue
            opts.append((k, v))
        mf.policy = (words[0], tuple(opts))

    for no, col, body in raw["init"]:
        m = re.match(r"^\s*(\d+)\s+(.*)$", body)
        if not m:
            diags.append(Diagnostic("E008", "expected '%init: <count> <complex>'", no, col))
            continue
        c0 = rest_col(body, m.group(2), col)
        cm = pattern(m.group(2), no, c0)
        if cm is None:
            continue
        if not _fully_specified(cm):
            diags.append(Diagnostic("E009", "initial complexes must list every site of every agent", no, c0))
            continue
        mf.inits.append((int(m.group(1)), format_pattern(cm)))

    known = set(names_param) | {e[0] for e in mf.energies}
    for no, col, body in raw["obs"]:
        name, rest = named(body, no, col)
        if name is None:
            continue
        c0 = rest_col(body, rest, col)
        if rest.lstrip().startswith("="):
            etext = rest.lstrip()[1:]
            try:
                tree = parse_expr(etext)
            except ValueError as exc:
                diags.append(Diagnostic("E008", str(exc), no, c0))
                continue
            bad = [n for n in expr_names(tree) if n not in known]
            if bad:
                diags.append(Diagnostic("E007", f"undefined name '{bad[0]}'", no, c0))
                continue
            mf.obs.append((name, "expr", ast.unparse(tree)))
        else:
            cm = pattern(rest, no, c0)
            if cm is None:
                continue
            mf.obs.append((name, "pattern", format_pattern(cm)))
        known.add(name)

    for no, col, body in raw["intervention"]:
        m = re.match(r"^\s*(\S+)\s+(.*)$", body)
        if not m:
            diags.append(Diagnostic("E008", "expected '%intervention: <time> Agent(site~state)'", no, col))
            continue
        try:
            t = normalize_expr(m.group(1))
        except ValueError as exc:
            diags.append(Diagnostic("E008", str(exc), no, col))
            continue
        c0 = rest_col(body, m.group(2), col)
        cm = pattern(m.group(2), no, c0)
        if cm is None:
            continue
        if len(cm.agents) != 1 or any(s.state is None or cm.partner[i] is not None
                                      for i, s in enumerate(cm.sites)) or not cm.sites:
            diags.append(Diagnostic("E009", "an intervention names one agent with site states only", no, c0))
            continue
        mf.interventions.append((t, format_pattern(cm)))

    # every quoted name used in a cost or time must be a parameter
    defined = set()
    for (name, expr), (no, col, body) in zip(mf.params, raw["param"]):
        for n in expr_names(parse_expr(expr)):
            if n not in defined:
                diags.append(Diagnostic("E007", f"undefined parameter '{n}'", no, col))
        defined.add(name)
    for name, _, expr in mf.energies:
        for n in expr_names(parse_expr(expr)):
            if n not in defined:
                no = next(l for l, _, b in raw["energy"] if f"'{name}'" in b)
                diags.append(Diagnostic("E007", f"undefined parameter '{n}'", no, 1))
    for t, _ in mf.interventions:
        for n in expr_names(parse_expr(t)):
            if n not in defined:
                diags.append(Diagnostic("E007", f"undefined parameter '{n}'", raw["intervention"][0][0], 1))
    if diags:
        raise ModelError(diags)
    return mf


def _fully_specified(cm: ContactMap) -> bool:
    if cm.dangling_sites():
        return False
    for a, t in enumerate(cm.agents):
        if {cm.sites[s].name for s in cm.sites_of(a)} != set(cm.contact.agents[t]):
            return False
        for s in cm.sites_of(a):
            if cm.sites[s].state is None and cm.contact.states.get(cm.sites[s].type):
                return False
    return True


def contact_of(mf: ModelFile) -> ContactGraph:
    agents = {name: tuple(s for s, _, _ in sites) for name, sites in mf.agents}
    states = {}
    bonds = set()
    for name, sites in mf.agents:
        for s, st, partners in sites:
            if st:
                states[(name, s)] = st
            for a, b in partners:
                if a not in agents:
                    raise ValueError(f"unknown agent {a} in the signature of {name}")
                if b not in agents[a]:
                    raise ValueError(f"unknown site {a}.{b} in the signature of {name}")
                bonds.add(tuple(sorted(((name, s), (a, b)))))
    return ContactGraph(agents, sorted(bonds), states)


# ---------------------------------------------------------------------------
# compiled model


@dataclass
class Observable:
    name: str
    pattern: Optional[ContactMap] = None
    expr: Optional[ast.AST] = None


@dataclass
class Intervention:
    time: float
    agent: str
    states: tuple  # ((site, state), ...)


class Model:
    """A parsed model turned into library objects."""

    def __init__(self, mf: ModelFile, param_overrides: Optional[dict] = None):
        self.file = mf
        self.contact = contact_of(mf)
        self.params: dict[str, float] = {}
        overrides = dict(param_overrides or {})
        for name, expr in mf.params:
            self.params[name] = overrides.pop(name) if name in overrides else eval_expr(parse_expr(expr), self.param)
        if overrides:
            raise ModelError([Diagnostic("E007", f"undefined parameter '{next(iter(overrides))}'")])
        pats, costs, names = [], [], []
        for name, ptext, expr in mf.energies:
            pats.append(self.pattern(ptext))
            costs.append(eval_expr(parse_expr(expr), self.param))
            names.append(name)
        kind, opts = mf.policy
        opts = {k: float(v) for k, v in opts}
        stray = [k for k in opts if k.startswith("quad.") and k[5:] not in names]
        if stray:
            raise ModelError([Diagnostic("E007", f"{stray[0]} names no energy pattern")])
        quad = [opts.get(f"quad.{n}", 0.0) for n in names]
        self.energy = EnergyModel(tuple(pats), tuple(costs), tuple(names), tuple(quad))
        self.generators = [rule_from_sides(self.pattern(l), self.pattern(r), n) for n, l, r in mf.gens]
        self.policy = make_policy(kind, {k: v for k, v in opts.items() if not k.startswith("quad.")})
        self.observables = []
        for name, kind_o, text in mf.obs:
            if kind_o == "pattern":
                self.observables.append(Observable(name, pattern=self.pattern(text)))
            else:
                self.observables.append(Observable(name, expr=parse_expr(text)))
        self.interventions = []
        for t, ptext in mf.interventions:
            cm = self.pattern(ptext)
            self.interventions.append(Intervention(eval_expr(parse_expr(t), self.param), cm.agents[0],
                                                   tuple((s.name, s.state) for s in cm.sites)))
        self._ruleset: Optional[RefinedRuleSet] = None

    def param(self, name: str) -> float:
        if name not in self.params:
            raise ModelError([Diagnostic("E007", f"undefined parameter '{name}'")])
        return self.params[name]

    def pattern(self, text: str) -> ContactMap:
        return build_pattern(parse_agents(text), self.contact)

    @cached_property
    def initial(self) -> ContactMap:
        mix = ContactMap.empty(self.contact)
        for n, text in self.file.inits:
            cx = self.pattern(text)
            for _ in range(n):
                mix = disjoint_union(mix, cx)
        return mix

    def ruleset(self) -> RefinedRuleSet:
        if self._ruleset is None:
            self._ruleset = RefinedRuleSet.build(self.generators, list(self.energy.patterns))
        return self._ruleset

    def observe(self, x: ContactMap, counts=None) -> list[float]:
        values: dict[str, float] = {}
        if counts is None:
            counts = self.energy.counts(x)
        for name, c in zip(self.energy.names, counts):
            values[name] = float(c)

        def env(n):
            if n in values:
                return values[n]
            return self.param(n)

        out = []
        for o in self.observables:
            v = float(count_embeddings(o.pattern, x)) if o.pattern is not None else eval_expr(o.expr, env)
            values[o.name] = v
            out.append(v)
        return out


_POLICY_KEYS = {"metropolis": (), "symmetric": ("C.",), "log-affine": ("a", "c."),
                "nonlinear": ("beta", "alpha.", "beta.")}


def make_policy(kind: str, opts: dict) -> RatePolicy:
    allowed = _POLICY_KEYS.get(kind, ())
    for k in opts:
        if not any(k == p or (p.endswith(".") and k.startswith(p) and len(k) > len(p)) for p in allowed):
            raise ModelError([Diagnostic("E009", f"option {k!r} does not apply to the {kind} policy")])
    try:
        opts = {k: float(v) for k, v in opts.items()}
    except ValueError as exc:
        raise ModelError([Diagnostic("E009", f"policy option is not a number: {exc}")]) from exc
    try:
        if kind == "metropolis":
            return Metropolis()
        if kind == "symmetric":
            return Symmetric({k[2:]: v for k, v in opts.items() if k.startswith("C.")})
        if kind == "log-affine":
            return LogAffine(offsets={k[2:]: v for k, v in opts.items() if k.startswith("c.")},
                             default=opts.get("a", 0.5))
        if kind == "nonlinear":
            return Nonlinear(alpha={k[6:]: v for k, v in opts.items() if k.startswith("alpha.")},
                             beta={k[5:]: v for k, v in opts.items() if k.startswith("beta.")},
                             default_beta=opts.get("beta", 0.5))
    except PolicyError as exc:
        raise ModelError([Diagnostic("E009", str(exc))]) from exc
    raise ModelError([Diagnostic("E009", f"unknown policy {kind}")])


def load(path_or_text, param_overrides: Optional[dict] = None) -> Model:
    """Load a model from a path, a bundled model name, or literal text."""
    text = read_source(path_or_text)
    return Model(parse(text), param_overrides)


def bundled(name: str) -> Path:
    return Path(__file__).parent / "data" / name


def read_source(path_or_text) -> str:
    if isinstance(path_or_text, Path):
        return path_or_text.read_text(encoding="utf-8")
    s = str(path_or_text)
    if "\n" in s or s.lstrip().startswith("%"):
        return s
    p = Path(s)
    if not p.exists() and bundled(s).exists():
        p = bundled(s)
    return p.read_text(encoding="utf-8")
