import numpy as np
import pytest

from thermograph import modelfile
from thermograph.sim import InvariantViolation, SimulationError, Simulator, parse_snapshot, split_components
from thermograph.sitegraph import canonical_form


def test_split_components(word):
    parts = split_components(word("cyc(123) + 12 + 3"))
    assert sorted(len(cm.agents) for cm, _, _ in parts) == [1, 2, 3]
    assert sorted(a for _, agents, _ in parts for a in agents) == list(range(6))


def test_same_seed_same_trajectory(triangles_small):
    a = Simulator.from_model(triangles_small, seed=7).run(50, sample_every=1)
    b = Simulator.from_model(triangles_small, seed=7).run(50, sample_every=1)
    c = Simulator.from_model(triangles_small, seed=8).run(50, sample_every=1)
    assert a.rows == b.rows and a.events == b.events
    assert a.rows != c.rows or a.events != c.events


def test_sampling_grid(triangles_small):
    tr = Simulator.from_model(triangles_small, seed=1).run(10, sample_every=0.5)
    assert tr.times == pytest.approx(np.arange(0, 10.0001, 0.5))
    assert tr.array.shape == (21, 2)
    assert tr.columns == ["triangles", "fraction"]
    assert np.array_equal(tr.column("triangles"), tr.column("fraction"))
    assert tr.time == pytest.approx(10)


def test_negative_horizon_is_rejected(triangles_small):
    with pytest.raises(SimulationError):
        Simulator.from_model(triangles_small).run(-1)


def test_max_events(triangles_small):
    sim = Simulator.from_model(triangles_small, seed=3)
    tr = sim.run(1e9, max_events=25)
    assert tr.events == 25
    assert tr.time < 1e9


def test_event_log(triangles_small):
    lines = []
    tr = Simulator.from_model(triangles_small, seed=2).run(20, log=lines.append)
    assert len(lines) == tr.events
    t, name, fp = lines[0].split()
    assert float(t) > 0 and name.startswith("g") and len(fp) == 16


def test_csv_header(triangles_small):
    text = Simulator.from_model(triangles_small, seed=2).run(2, sample_every=1).to_csv()
    rows = text.splitlines()
    assert rows[0] == "time,triangles,fraction"
    assert len(rows) == 4


def test_counts_stay_exact(triangles_small):
    sim = Simulator(triangles_small.ruleset(), triangles_small.energy, triangles_small.policy,
                    triangles_small.initial, triangles_small.observables, seed=5, check_every=1)
    sim.run(200)
    sim.recount()
    assert sum(len(rep.agents) * n for n, rep in sim.species()) == 3


def test_tampered_counts_are_caught(triangles_small):
    sim = Simulator.from_model(triangles_small, seed=5)
    sim._P[0] += 1
    with pytest.raises(InvariantViolation):
        sim.recount()


@pytest.mark.filterwarnings("ignore:intervention")
def test_snapshot_round_trip(ring):
    sim = Simulator.from_model(ring, seed=4)
    tr = sim.run(20, snapshot_times=[10])
    assert set(tr.snapshots) == {10}
    text = sim.snapshot()
    assert all(line.startswith("%init: ") for line in text.splitlines())
    back = parse_snapshot(text, ring)
    assert canonical_form(back) == canonical_form(sim.mixture())
    again = Simulator.from_model(ring, seed=4, initial=back)
    assert again.state_key() == sim.state_key()
    assert np.array_equal(again.counts(), sim.counts())


def test_bad_snapshot(ring):
    with pytest.raises(SimulationError):
        parse_snapshot("P(x)\n", ring)


def test_intervention_beyond_horizon_warns(ring):
    with pytest.warns(UserWarning, match="beyond the horizon"):
        Simulator.from_model(ring, seed=1).run(50)


@pytest.mark.filterwarnings("ignore:intervention")
def test_intervention_sets_states(ring):
    sim = Simulator.from_model(ring, seed=1)
    sim.run(150)
    assert all(rep.sites[rep.site_at(a, "s")].state == "p"
               for _, rep in sim.species() for a, t in enumerate(rep.agents) if t == "Y")


def test_energy_integrals(triangles_small):
    tr = Simulator.from_model(triangles_small, seed=9).run(100)
    assert set(tr.integrals) == {"ab", "bc", "ca", "t", "triangles"}
    assert 0 <= tr.time_average("t") <= 1
    assert tr.time_average("t") == pytest.approx(tr.time_average("triangles"))


def test_initial_must_be_a_mixture(triangles_small, word):
    with pytest.raises(SimulationError):
        Simulator.from_model(triangles_small, initial=word("?12?"))


def test_overridden_policy(triangles_small):
    pol = modelfile.make_policy("metropolis", {})
    sim = Simulator.from_model(triangles_small, seed=1, policy=pol)
    assert sim.policy is pol
    assert sim.run(10).events > 0
