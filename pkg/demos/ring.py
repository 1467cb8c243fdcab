"""An eight-protomer ring switching conformation when Y is switched on.

Run with ``python demos/ring.py``.  Y is activated at t=100 and deactivated
at t=200; the ring flips from conformation 0 to 1 and back while the number
of mismatched neighbours stays small.
"""

import time

from thermograph import modelfile
from thermograph.energy import balance_rank
from thermograph.sim import Simulator

start = time.perf_counter()
model = modelfile.load("ring.model")
rules = model.ruleset()
print(f"compiled {len(rules.all())} refined rules in {time.perf_counter() - start:.1f}s, "
      f"balance rank {balance_rank(rules)}")

sim = Simulator.from_model(model, seed=1)
traj = sim.run(300, sample_every=10, snapshot_times=[150])
print("\n  time  fraction in 1  mismatches  bound Y")
for t, row in zip(traj.times, traj.rows):
    values = dict(zip(traj.columns, row))
    bar = "#" * round(8 * values["fraction1"])
    print(f"{t:6.0f}  {values['fraction1']:12.3f}  {values['mismatch']:10.0f}  {values['boundY']:7.0f}  {bar}")

print("\nsnapshot at t=150")
print(traj.snapshots[150], end="")
