"""Why a single bond rule needs eight versions once triangles are rewarded.

Run with ``python demos/triangles.py``.  The script refines the A-B bond
generator against the four energy patterns of the triangle model, prints the
extensions it finds with their balance vectors, then simulates a small pool
at three triangle costs and compares the mean triangle count with the exact
stationary value.
"""

import math

from thermograph import modelfile
from thermograph.refine import enumerate_mature
from thermograph.rules import rule_from_sides
from thermograph.shorthand import cyclic_contact, format_word, parse_word
from thermograph.sim import Simulator
from thermograph.verify import enumerate_states, stationary_expectation

contact = cyclic_contact()
word = lambda text: parse_word(text, contact)

# Unbinding A from B.  Its energy change depends on whether the bond closes
# a triangle, so the refiner has to look around the bond.
g12 = rule_from_sides(word("?12?"), word("?1 + 2?"), "g12")
patterns = [word("?12?"), word("?23?"), word("?31?"), word("cyc(123)")]

print("refinements of g12 (balance over ?12?, ?23?, ?31?, triangle)")
for ref in enumerate_mature(g12, patterns):
    print(f"  {format_word(ref.extension.t):<12} {ref.balance}")

# Two agents of each type: 343 states, small enough to solve exactly.
text = modelfile.read_source("triangles-small.model").replace("%init: 1", "%init: 2")
print("\ntriangle cost   exact mean   simulated mean")
for t in (-10.0, -2.5, 0.0):
    model = modelfile.load(text, {"t": t})
    space = enumerate_states(model.ruleset(), model.energy, model.policy, model.initial)
    exact = stationary_expectation(space, model.energy.names.index("t"))
    run = Simulator.from_model(model, seed=1).run(math.inf, max_events=100_000)
    print(f"  {t:>8.1f}      {exact:8.4f}     {run.time_average('t'):8.4f}")
