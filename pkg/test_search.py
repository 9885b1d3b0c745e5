"""
Tests for greedy descent, soft-plus annealing and the restart drivers.
"""

import math

import numpy as np
import pandas as pd
import pytest

from errors import ParameterError
from graphs import WeightedGraph, from_edges, gen, gen_dense, make_rng
from search import (
    AnnealSchedule,
    EnergyConstraint,
    MoveKind,
    Objective,
    _FlipDeltas,
    acceptance,
    anneal,
    build_graph,
    greedy_descent,
    parse_model,
    restarts,
    run_seeds,
    softplus,
    universality_sweep,
)
from stability import SpinConfig, deficit


def path_graph() -> WeightedGraph:
    return from_edges(4, [(0, 1), (1, 2), (2, 3)], [1.0, 1.0, 1.0], norm_param=1.0, interaction="ferro")


def test_softplus():
    assert softplus(0.0, 0.05) == pytest.approx(0.05)
    assert softplus(10.0, 0.05) == pytest.approx(10.0, abs=1e-12)
    assert softplus(-10.0, 0.05) == pytest.approx(0.0, abs=1e-12)
    t = np.linspace(-1, 1, 21)
    assert np.all(softplus(t, 0.05) >= np.maximum(t, 0.0))


def test_acceptance_detailed_balance():
    rho = 3.0
    for delta in (0.1, 0.7, 2.0):
        assert acceptance(delta, rho) / acceptance(-delta, rho) == pytest.approx(math.exp(-rho * delta))
    assert acceptance(0.0, rho) == 1.0


def test_schedule_validation():
    schedule = AnnealSchedule(rho_start=1.0, rho_end=100.0, steps=11)
    assert schedule.rho(0, 11) == pytest.approx(1.0)
    assert schedule.rho(10, 11) == pytest.approx(100.0)
    assert schedule.rho(5, 11) == pytest.approx(10.0)
    assert AnnealSchedule().total_steps(30) == 6000
    with pytest.raises(ParameterError):
        AnnealSchedule(rho_start=5.0, rho_end=1.0)
    with pytest.raises(ParameterError):
        AnnealSchedule(epsilon1=0.0)
    with pytest.raises(ValueError):
        AnnealSchedule(move_kind="triple")


def test_energy_constraint():
    ge = EnergyConstraint("ge", -0.5)
    assert ge.gap(-60.0, 100) == pytest.approx(10.0)
    assert EnergyConstraint("le", -0.5).gap(-60.0, 100) == pytest.approx(-10.0)
    with pytest.raises(ParameterError):
        EnergyConstraint("eq", 0.0)


@pytest.mark.parametrize("graph", [
    gen("gnp_loops", 40, 3.0, "spin_glass", seed=1),
    gen_dense("gaussian", 15, seed=2),
])
def test_flip_deltas_match_recomputation(graph):
    config = SpinConfig.random(graph, make_rng(3))
    h = 0.3
    deltas = _FlipDeltas(config)(config, h)
    base = deficit(config, graph, h)
    for v in range(graph.n):
        trial = config.copy()
        trial.flip(v)
        assert deltas[v] == pytest.approx(deficit(trial.spins, graph, h) - base, abs=1e-9)


def test_greedy_on_path_graph():
    g = path_graph()
    result = greedy_descent(g, 0.5, [1, -1, 1, -1])
    # flips vertex 1 (lowest index among the best moves), then vertex 3
    assert result.best_sigma.spins.tolist() == [1.0, 1.0, 1.0, 1.0]
    assert result.best_deficit == 0.0
    assert result.best_report.N == 4


def test_greedy_at_zero_threshold_reaches_nonnegative_stabilities():
    g = gen("gnp", 60, 3.0, "antiferro", seed=5)
    start = SpinConfig.random(g, make_rng(5))
    result = greedy_descent(g, 0.0, start)
    assert result.best_report.min_s >= -1e-12
    assert result.best_deficit == pytest.approx(0.0, abs=1e-12)
    # the start configuration is not modified
    assert start.drift() < 1e-12


def test_greedy_never_increases_deficit():
    g = gen("gnm", 50, 4.0, "spin_glass", seed=6)
    start = SpinConfig.random(g, make_rng(6))
    before = deficit(start, g, 0.4)
    assert greedy_descent(g, 0.4, start).best_deficit <= before


def test_swap_descent_keeps_bisection():
    g = gen("gnm", 24, 3.0, "antiferro", seed=7)
    start = SpinConfig.random(g, make_rng(7), bisection=True)
    before = deficit(start, g, 0.2)
    result = greedy_descent(g, 0.2, start, MoveKind.SWAP_PAIR.value)
    assert result.best_sigma.is_bisection()
    assert result.best_deficit <= before
    with pytest.raises(ParameterError):
        greedy_descent(g, 0.2, np.ones(24), MoveKind.SWAP_PAIR.value)


def test_anneal_is_deterministic():
    g = gen("gnp", 30, 3.0, "antiferro", seed=8)
    schedule = AnnealSchedule(steps=1500, move_kind=MoveKind.SINGLE_FLIP.value)
    a = anneal(g, 0.3, schedule, seed=4)
    b = anneal(g, 0.3, schedule, seed=4)
    assert np.array_equal(a.best_sigma.spins, b.best_sigma.spins)
    assert a.best_deficit == b.best_deficit
    assert a.best_deficit == pytest.approx(a.best_report.D)


def test_anneal_swap_keeps_bisection():
    g = gen("gnm", 31, 3.0, "antiferro", seed=9)
    result = anneal(g, 0.2, AnnealSchedule(steps=800), seed=1)
    assert result.best_sigma.is_bisection()


def test_anneal_truncated_objective():
    g = gen("gnp", 30, 3.0, "antiferro", seed=8)
    schedule = AnnealSchedule(steps=600, move_kind=MoveKind.SINGLE_FLIP.value,
                              objective=Objective.TRUNCATED.value)
    result = anneal(g, 1.5, schedule, seed=2)
    assert result.best_deficit == pytest.approx(result.best_report.T)
    assert result.best_deficit <= g.n


def test_anneal_energy_constraint_is_added():
    g = gen("gnp", 30, 3.0, "antiferro", seed=8)
    schedule = AnnealSchedule(steps=600, move_kind=MoveKind.SINGLE_FLIP.value)
    constraint = EnergyConstraint("le", -5.0)
    result = anneal(g, 0.0, schedule, seed=3, energy_constraint=constraint)
    expected = result.best_report.D + max(result.best_report.H - g.n * -5.0, 0.0)
    assert result.best_deficit == pytest.approx(expected)


def test_anneal_trajectory(tmp_path):
    g = gen("gnp", 20, 3.0, "ferro", seed=1)
    schedule = AnnealSchedule(steps=2000, move_kind=MoveKind.SINGLE_FLIP.value, trajectory_points=100)
    path = tmp_path / "trajectory.csv"
    result = anneal(g, 0.2, schedule, seed=1, trajectory_path=str(path))
    frame = result.trajectory
    assert list(frame.columns) == ["step", "rho", "soft_deficit", "hard_deficit", "N", "E"]
    assert len(frame) == 100
    assert frame["rho"].is_monotonic_increasing
    assert np.all(frame["soft_deficit"] >= frame["hard_deficit"] - 1e-9)
    written = pd.read_csv(path)
    assert len(written) == 100

    assert anneal(g, 0.2, schedule, seed=1).trajectory is None


def test_run_seeds_are_prefix_stable():
    assert run_seeds(5, 3) == run_seeds(5, 8)[:3]
    assert len(set(run_seeds(5, 8))) == 8


def test_restarts_pick_the_best_run():
    g = gen("gnp", 40, 3.0, "antiferro", seed=10)
    few = restarts(g, 0.3, 3, seed=2)
    many = restarts(g, 0.3, 6, seed=2)
    assert many.restarts == 6
    assert many.best_deficit <= few.best_deficit
    assert few.rng_seed in run_seeds(2, 3)
    with pytest.raises(ParameterError):
        restarts(g, 0.3, 0, seed=2)
    with pytest.raises(ParameterError):
        restarts(g, 0.3, 1, seed=2, algo="tabu")


def test_restarts_jobs_independent():
    g = gen("gnp", 30, 3.0, "antiferro", seed=11)
    serial = restarts(g, 0.3, 4, seed=3)
    pooled = restarts(g, 0.3, 4, seed=3, jobs=2)
    assert serial.best_deficit == pooled.best_deficit
    assert serial.rng_seed == pooled.rng_seed


def test_parse_model_and_build_graph():
    assert parse_model("gnp") == ("gnp", "antiferro")
    assert parse_model("config_model:ferro") == ("config_model", "ferro")
    with pytest.raises(ValueError):
        parse_model("lattice:ferro")
    assert build_graph("dense_gaussian", 10, 3.0, 0).is_dense
    assert build_graph("gnm:spin_glass", 10, 3.0, 0).num_slots == 15


def test_universality_sweep_small():
    schedule = AnnealSchedule(steps=400)
    summary, gaps = universality_sweep(["gnp:antiferro", "gnm:antiferro"], 20, [3.0], [0.0, 0.2],
                                       [1, 2], schedule)
    assert len(summary) == 4
    assert set(summary.columns) >= {"model", "d", "h", "mean_D", "std_D", "mean_N", "std_N"}
    assert len(gaps) == 2
    assert np.all(gaps["max_gap_D"] >= 0.0)
    assert np.all(summary["mean_D"] >= 0.0)
