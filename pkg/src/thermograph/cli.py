"""Command line: ``thermograph compile|simulate|verify|inspect``.

Exit codes: 0 success, 1 diagnostics (bad input, failed check), 2 internal
invariant violation.
"""

from __future__ import annotations

import argparse
import json
import sys
import warnings
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import Optional, Sequence

from . import __version__
from .energy import PolicyError, balance_rank, check_compat
from .export import ExportError, export_kasim, ruleset_json
from .modelfile import Model, ModelError, load, make_policy
from .refine import DecompositionError, RefinementDiverged, compute_requests
from .sim import InvariantViolation, SimulationError, Simulator
from .verify import StateSpaceTooLarge, check_detailed_balance, compare_empirical, enumerate_states


class UsageError(Exception):
    pass


def _params(pairs: Sequence[str]) -> dict:
    out = {}
    for p in pairs or ():
        if "=" not in p:
            raise UsageError(f"--set expects name=value, got {p!r}")
        k, v = p.split("=", 1)
        try:
            out[k.strip("'")] = float(v)
        except ValueError as exc:
            raise UsageError(f"--set {k}: {v!r} is not a number") from exc
    return out


def _policy(spec: Optional[str]):
    if not spec:
        return None
    words = spec.split()
    opts = {}
    for w in words[1:]:
        if "=" not in w:
            raise UsageError(f"policy option {w!r} must be key=value")
        k, v = w.split("=", 1)
        opts[k] = v
    return make_policy(words[0], opts)


def _model(args) -> Model:
    m = load(args.model, _params(args.set))
    pol = _policy(getattr(args, "policy_override", None))
    if pol is not None:
        m.policy = pol
    return m


def _write_all(out: Optional[str], files: dict):
    """Write every file or none: contents are all computed before this call."""
    if not out:
        return
    d = Path(out)
    d.mkdir(parents=True, exist_ok=True)
    for name, text in files.items():
        (d / name).write_text(text, encoding="utf-8")


def balance_table(model: Model, ruleset) -> str:
    names = list(model.energy.names)
    rows = ["rule\t" + "\t".join(names)]
    for fw, _ in ruleset.pairs():
        rows.append(fw.rule.name + "\t" + "\t".join(str(int(d)) for d in fw.balance))
    return "\n".join(rows) + "\n"


def cmd_compile(args) -> int:
    m = _model(args)
    rs = m.ruleset()
    files = {"rules.json": ruleset_json(m, rs), "balance.tsv": balance_table(m, rs)}
    try:
        files["model.ka"] = export_kasim(m, rs)
    except ExportError as exc:
        print(f"note: {exc}; no KaSim export written", file=sys.stderr)
    report = check_compat(rs, m.policy, m.energy)
    rank = balance_rank(rs)
    for g in rs.generators:
        fw, bw = len(rs.by_generator[g.name]), len(rs.by_generator[g.inverse().name])
        print(f"{g.name}: {fw} forward, {bw} backward refinements")
    print(balance_table(m, rs), end="")
    print(f"balance rank: {rank}")
    print(f"compatibility: {'ok' if report.ok else 'FAILED'} ({report.checked} pairs)")
    _write_all(args.out, files)
    return 0 if report.ok else 1


def _simulate_one(model_arg, params, policy_spec, seed, horizon, sample_every, out, log, snapshots, max_events):
    m = load(model_arg, params)
    pol = _policy(policy_spec)
    if pol is not None:
        m.policy = pol
    sim = Simulator.from_model(m, seed=seed, check_every=10_000)
    lines: list[str] = []
    tr = sim.run(horizon, sample_every=sample_every, log=lines.append if log else None,
                 snapshot_times=snapshots, max_events=max_events)
    files = {f"trajectory_{seed}.csv": tr.to_csv()}
    if log:
        files[f"events_{seed}.log"] = "\n".join(lines) + ("\n" if lines else "")
    for t, text in tr.snapshots.items():
        files[f"snapshot_{seed}_t{t:g}.ka"] = text
    _write_all(out, files)
    return seed, tr.events, tr.null_events, files[f"trajectory_{seed}.csv"]


def cmd_simulate(args) -> int:
    if not args.horizon >= 0:
        raise UsageError("--horizon must not be negative")
    params = _params(args.set)
    m = load(args.model, params)  # fail early on a bad model
    _policy(args.policy_override)
    for iv in m.interventions:
        if iv.time > args.horizon:
            warnings.warn(f"intervention at t={iv.time:g} lies beyond the horizon {args.horizon:g}")
    seeds = [args.seed + k for k in range(args.replicates)]
    job = (args.model, params, args.policy_override)
    rest = (args.horizon, args.sample_every, args.out, args.log, args.snapshot_at or (), args.max_events)
    if args.workers > 1 and len(seeds) > 1:
        with ProcessPoolExecutor(args.workers) as pool:
            results = list(pool.map(_simulate_one, *zip(*[job + (s,) + rest for s in seeds])))
    else:
        results = [_simulate_one(*job, s, *rest) for s in seeds]
    for seed, events, nulls, csv_text in results:
        print(f"seed {seed}: {events} events ({nulls} null)", file=sys.stderr)
        if not args.out:
            sys.stdout.write(csv_text)
    return 0


def cmd_verify(args) -> int:
    m = _model(args)
    rs = m.ruleset()
    space = enumerate_states(rs, m.energy, m.policy, m.initial, args.cap)
    report = check_detailed_balance(space, args.tol)
    out = {"balance": report.to_dict()}
    text = [report.to_text()]
    if args.events:
        sim = Simulator.from_model(m, seed=args.seed)
        tr = sim.run(float("inf") if args.horizon is None else args.horizon, max_events=args.events, occupancy=True)
        cmp_ = compare_empirical(space, tr.occupancy, tr.events)
        out["empirical"] = {"events": tr.events, "max_abs_error": cmp_.max_abs_error}
        text.append(cmp_.to_text())
    print(json.dumps(out, indent=2) if args.json else "\n".join(text))
    return 0 if report.passed else 1


def _inspect_patterns(args):
    if args.words:
        from .shorthand import cyclic_contact, parse_word
        c = cyclic_contact()
        return parse_word(args.a, c), parse_word(args.b, c), None
    if not args.model:
        raise UsageError("inspect gluings needs --model or --words")
    m = _model(args)
    return m.pattern(args.a), m.pattern(args.b), m


def cmd_inspect(args) -> int:
    from .gluing import classify_relevance, minimal_gluings
    from .kappa import format_pattern
    from .rules import Embedding, mirror_extension
    if args.subject == "gluings":
        a, b, m = _inspect_patterns(args)
        fmt = format_pattern
        if args.words:
            from .shorthand import format_word
            fmt = format_word
        rule = None
        if args.rule:
            if m is None:
                raise UsageError("--rule needs --model")
            rule = next((g for g in m.generators if g.name == args.rule), None)
            if rule is None:
                raise UsageError(f"no generator named {args.rule}")
        gl = minimal_gluings(a, b)
        print(f"{len(gl)} minimal gluings")
        for mg in gl:
            tag = ""
            if rule is not None and mg.b == rule.lhs:
                tag = "  relevant" if classify_relevance(mg, rule).relevant else "  irrelevant"
            print(f"  overlap of {len(mg.overlap.agents)} agents -> {fmt(mg.glued)}{tag}")
        return 0
    m = _model(args)
    if args.subject == "requests":
        gens = [g for g in m.generators if not args.rule or g.name == args.rule]
        if not gens:
            raise UsageError(f"no generator named {args.rule}")
        pats = list(m.energy.patterns)
        for g in gens:
            ext = mirror_extension(g, Embedding.identity(g.lhs))
            req = compute_requests(g, ext, pats)
            print(f"{g.name}: {format_pattern(g.lhs)}")
            shown = False
            for agent, names in sorted(req.items()):
                have = {g.lhs.sites[s].name for s in g.lhs.sites_of(agent)}
                missing = sorted(set(names) - have)
                if missing:
                    shown = True
                    print(f"  agent {agent} ({g.lhs.agents[agent]}) must reveal {', '.join(missing)}")
            if not shown:
                print("  no site requests")
        return 0
    rs = m.ruleset()
    print(balance_table(m, rs), end="")
    print(f"balance rank: {balance_rank(rs)}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="thermograph", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, model_required=True):
        if model_required:
            sp.add_argument("model", help="model file, or the name of a bundled model")
        sp.add_argument("--set", action="append", metavar="NAME=VALUE", help="override a %%param")
        sp.add_argument("--policy-override", metavar="SPEC", help="e.g. 'metropolis' or 'log-affine a=0.3'")

    c = sub.add_parser("compile", help="refine generators, export rules and balances")
    common(c)
    c.add_argument("--out", help="directory for rules.json, model.ka and balance.tsv")
    c.set_defaults(func=cmd_compile)

    s = sub.add_parser("simulate", help="stochastic simulation to CSV")
    common(s)
    s.add_argument("--horizon", type=float, required=True)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--sample-every", type=float, default=1.0)
    s.add_argument("--max-events", type=int)
    s.add_argument("--out", help="output directory (default: CSV on stdout)")
    s.add_argument("--log", action="store_true", help="write an event log per seed")
    s.add_argument("--snapshot-at", type=float, action="append", metavar="T")
    s.add_argument("--replicates", type=int, default=1)
    s.add_argument("--workers", type=int, default=1)
    s.set_defaults(func=cmd_simulate)

    v = sub.add_parser("verify", help="certify detailed balance on the reachable states")
    common(v)
    v.add_argument("--cap", type=int, default=100_000)
    v.add_argument("--tol", type=float, default=1e-10)
    v.add_argument("--events", type=int, default=0, help="also simulate this many events and compare")
    v.add_argument("--horizon", type=float)
    v.add_argument("--seed", type=int, default=0)
    v.add_argument("--json", action="store_true")
    v.set_defaults(func=cmd_verify)

    i = sub.add_parser("inspect", help="print gluings, site requests or balance vectors")
    i.add_argument("subject", choices=("gluings", "requests", "balance"))
    i.add_argument("a", nargs="?", help="first pattern (gluings)")
    i.add_argument("b", nargs="?", help="second pattern (gluings)")
    i.add_argument("--model")
    i.add_argument("--words", action="store_true", help="read patterns as chain/cycle words")
    i.add_argument("--rule", help="generator name")
    i.add_argument("--set", action="append", metavar="NAME=VALUE")
    i.add_argument("--policy-override", metavar="SPEC")
    i.set_defaults(func=cmd_inspect)
    return p


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command == "inspect":
        if args.subject == "gluings" and not (args.a and args.b):
            parser.error("inspect gluings needs two patterns")
        if args.subject != "gluings" and not args.model:
            if args.a and not args.b:
                args.model = args.a
            else:
                parser.error(f"inspect {args.subject} needs --model")
    try:
        return args.func(args)
    except ModelError as exc:
        for d in exc.diagnostics:
            print(f"{getattr(args, 'model', '') or ''}:{d}", file=sys.stderr)
        return 1
    except (UsageError, PolicyError, ExportError, SimulationError, StateSpaceTooLarge,
            RefinementDiverged, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (InvariantViolation, DecompositionError, AssertionError) as exc:
        print(f"internal error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
