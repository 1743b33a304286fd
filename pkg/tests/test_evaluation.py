from __future__ import annotations

import math

import numpy as np
import pytest

from relay_energy.channel import DistributionSpec, LinkDistributions, phi1
from relay_energy.dp import SolverConfig, solve
from relay_energy.errors import ConfigError, SimulationError
from relay_energy.evaluation import CSV_HEADER, SweepResult, simulate, sweep, to_db
from relay_energy.info import INFO_TOL
from relay_energy.plotting import plot_sweep
from relay_energy.policies import DpTablePolicy, FixedPower, HeuristicGeneralK, NaiveRelayFirst

TE2 = LinkDistributions.iid(DistributionSpec.truncated_exponential(1.0, 1e-2))


def test_fixed_power_deterministic_channel():
    links = LinkDistributions.iid(DistributionSpec.constant(1.0))
    p = math.expm1(0.8)
    res = simulate(FixedPower(p), links, 1, 0.8, 1000, seed=0)
    assert res.nmese == pytest.approx(p, rel=1e-15) and res.stderr == 0.0
    res = simulate(FixedPower(p), links, 2, 0.8, 1000, seed=0)
    assert res.nmese == pytest.approx(p, rel=1e-12) and res.stderr == pytest.approx(0.0, abs=1e-12)
    assert res.deadline_misses == 0


def test_dp_k1_matches_analytic():
    table = solve(SolverConfig(1, 0.6, TE2, n_scenarios=100, seed=1)).table
    res = simulate(DpTablePolicy(table), TE2, 1, 0.6, 100_000, seed=4)
    exact = phi1(TE2.sd) * math.expm1(0.6)
    assert abs(res.nmese - exact) < 3 * res.stderr


def test_trajectory_records_are_consistent():
    res = simulate(HeuristicGeneralK(), TE2, 3, 0.5, 2000, seed=2, keep=25)
    assert len(res.trajectories) == 25
    for i, t in enumerate(res.trajectories):
        assert t.energy == pytest.approx(t.power.sum())
        assert t.energy == pytest.approx(res.energies[i])
        assert t.dest_increment.sum() >= 1.5 - INFO_TOL
        assert t.termination_slot is not None and t.termination_slot <= 3
        if t.switch_slot is not None:
            assert t.relay_increment[: t.switch_slot].sum() >= 1.5 - INFO_TOL


def test_abort_threshold():
    with pytest.raises(SimulationError):
        simulate(NaiveRelayFirst(), TE2.without_relay(), 2, 1.0, 1000, seed=0)
    with pytest.raises(ConfigError):
        simulate(HeuristicGeneralK(), TE2, 0, 1.0, 10, seed=0)


def test_simulation_is_bit_reproducible():
    a = simulate(HeuristicGeneralK(), TE2, 2, 1.0, 5000, seed=9)
    b = simulate(HeuristicGeneralK(), TE2, 2, 1.0, 5000, seed=9)
    assert a.nmese == b.nmese and np.array_equal(a.energies, b.energies)
    c = simulate(HeuristicGeneralK(), TE2, 2, 1.0, 5000, seed=10)
    assert c.nmese != a.nmese


def test_db_conversion():
    assert to_db(10.0) == pytest.approx(10.0)
    assert to_db(0.0) == -math.inf


def test_sweep_rows_csv_and_reproducibility(tmp_path):
    kw = dict(n_trials=3000, seed=5, solver_opts={"delta": 0.05, "n_scenarios": 300})
    a = sweep([0.5, 1.0], [1, 2], ["dp", "heuristic", "naive"], TE2, **kw)
    # naive is two-slot only
    assert len(a.rows) == 2 * (2 + 3)
    b = sweep([0.5, 1.0], [1, 2], ["dp", "heuristic", "naive"], TE2, **kw)
    assert a.to_csv() == b.to_csv()
    assert a.to_csv().splitlines()[0] == ",".join(CSV_HEADER)
    for r in a.rows:
        assert r.nmese_db == pytest.approx(10 * math.log10(r.nmese))
        assert r.stderr > 0
    path = tmp_path / "s.csv"
    a.write_csv(path)
    assert SweepResult.read_csv(path).rows == a.rows
    plot_sweep(a, tmp_path / "s.svg")
    assert (tmp_path / "s.svg").read_text().lstrip().startswith("<?xml")
    one = sweep([1.0], [2], ["heuristic"], TE2, n_trials=100, seed=1)
    assert len(one.rows) == 1
    with pytest.raises(ConfigError):
        sweep([], [2], ["dp"], TE2)


def test_policy_ordering_stable_across_seeds():
    table = solve(SolverConfig(2, 1.0, TE2, delta=0.02, n_scenarios=2000, seed=1)).table
    for seed in range(5):
        dp = simulate(DpTablePolicy(table), TE2, 2, 1.0, 20_000, seed=seed, keep=0)
        naive = simulate(NaiveRelayFirst(), TE2, 2, 1.0, 20_000, seed=seed, keep=0)
        heur = simulate(HeuristicGeneralK(), TE2, 2, 1.0, 20_000, seed=seed, keep=0)
        assert dp.nmese < heur.nmese < naive.nmese


def test_relay_and_no_relay_share_destination_draws():
    a = simulate(FixedPower(0.0), TE2, 1, 0.5, 500, seed=3, keep=500)
    b = simulate(FixedPower(0.0), TE2.without_relay(), 1, 0.5, 500, seed=3, keep=500)
    sa = np.array([t.snr[0] for t in a.trajectories])
    sb = np.array([t.snr[0] for t in b.trajectories])
    assert np.array_equal(sa[:, 1:], sb[:, 1:]) and (sb[:, 0] == 0).all()
