"""Checking detailed balance by brute force, and watching it fail.

Run with ``python demos/verification.py``.  The refined triangle rules pass
for every policy that respects the energy; doubling one rate, or using the
raw bond rules with rates that ignore the triangle, breaks it.
"""

from thermograph import modelfile
from thermograph.energy import LogAffine, Metropolis, Mutated, Nonlinear, check_compat
from thermograph.refine import RefinedRuleSet
from thermograph.verify import check_detailed_balance, enumerate_states

model = modelfile.load("triangles-small.model")
rules = model.ruleset()

for policy in (model.policy, Metropolis(), LogAffine(default=0.2), Nonlinear(default_beta=0.8)):
    space = enumerate_states(rules, model.energy, policy, model.initial)
    report = check_detailed_balance(space)
    print(f"{policy.kind:<11} {report.to_text().splitlines()[0]}")

victim = rules.all()[3].rule.name
bad = Mutated(model.policy, victim, 2.0)
print(f"\nrate of {victim} doubled")
print("  compatibility violations:", [v[:2] for v in check_compat(rules, bad, model.energy).violations])
print(" ", check_detailed_balance(enumerate_states(rules, model.energy, bad, model.initial)).to_text()
      .replace("\n", "\n  "))

# The generators themselves, each given the balance of its bond only.
naive = RefinedRuleSet.build(model.generators, [])
for g in model.generators:
    k = {"g12": 0, "g23": 1, "g31": 2}[g.name]
    for name, sign in ((g.name, 1), (g.inverse().name, -1)):
        refs = naive.by_generator[name]
        for n, r in enumerate(refs):
            refs[n] = type(r)(r.extension, r.rule, tuple(sign if i == k else 0 for i in range(4)), r.moves)
print("\nunrefined bond rules with bond-only rates")
print(" ", check_detailed_balance(enumerate_states(naive, model.energy, model.policy, model.initial)).to_text()
      .replace("\n", "\n  "))
