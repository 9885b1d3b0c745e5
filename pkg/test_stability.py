"""
Tests for the per-configuration functionals on hand-checked and random graphs.
"""

import math

import numpy as np
import pytest

from errors import ParameterError
from graphs import center_weights, from_edges, gen, gen_dense, make_rng, scale_weights, triangle
from stability import (
    SpinConfig,
    cut_and_x,
    deficit,
    deficit_ge_E,
    deficit_le_E,
    energy,
    hamiltonian,
    report,
    stabilities,
    stability_of,
    trunc_deficit,
    violation_bound,
)

TRIANGLE_SIGMA = [1, 1, -1]


def test_triangle_values():
    g = triangle()
    s = stabilities(TRIANGLE_SIGMA, g)
    assert s.tolist() == [0.0, 0.0, 1.0]
    assert hamiltonian(TRIANGLE_SIGMA, g) == pytest.approx(-0.5)
    assert energy(TRIANGLE_SIGMA, g) == pytest.approx(-1.0 / 6.0)
    assert deficit(TRIANGLE_SIGMA, g, 0.5) == pytest.approx(1.0)
    assert stability_of(2, TRIANGLE_SIGMA, g) == 1.0


def test_triangle_report():
    rep = report(TRIANGLE_SIGMA, triangle(), 0.5)
    assert rep.N == 1 and rep.violators == 2
    assert rep.cut == 2
    assert rep.x == pytest.approx((2.0 / 3.0 - 1.0) / math.sqrt(2.0))
    assert rep.min_s == 0.0
    payload = rep.to_dict()
    assert "s" not in payload and payload["D"] == pytest.approx(1.0)


def test_all_equal_triangle_is_unstable():
    g = triangle()
    assert stabilities([1, 1, 1], g).tolist() == [-1.0, -1.0, -1.0]
    assert deficit([1, 1, 1], g, 0.0) == pytest.approx(3.0)
    assert trunc_deficit([1, 1, 1], g, 0.5) == pytest.approx(3.0)


def test_truncated_deficit_caps_each_vertex():
    g = triangle()
    assert deficit([1, 1, 1], g, 2.0) == pytest.approx(9.0)
    assert trunc_deficit([1, 1, 1], g, 2.0) == pytest.approx(3.0)


def test_invalid_spins():
    g = triangle()
    with pytest.raises(ParameterError):
        SpinConfig(g, [1, 0, -1])
    with pytest.raises(ParameterError):
        SpinConfig(g, [1, 1])
    with pytest.raises(ParameterError):
        stability_of(3, TRIANGLE_SIGMA, g)


def test_flip_changes_hamiltonian_by_twice_the_stability():
    g = gen("gnp", 80, 4.0, "spin_glass", seed=1)
    config = SpinConfig.random(g, make_rng(1))
    for v in (0, 17, 79):
        before = config.hamiltonian
        s_v = config.stabilities()[v]
        config.flip(v)
        assert config.hamiltonian - before == pytest.approx(2.0 * s_v, abs=1e-12)


@pytest.mark.parametrize("graph", [
    center_weights(gen("gnp_loops", 60, 4.0, "ferro", seed=2)),
    center_weights(gen("config_model", 60, 3.0, "antiferro", seed=3)),
    center_weights(gen_dense("bernoulli_half", 30, seed=4, loops=True)),
])
def test_incremental_updates_match_recomputation(graph):
    rng = make_rng(9)
    config = SpinConfig.random(graph, rng)
    for v in rng.integers(graph.n, size=500):
        config.flip(int(v))
    fresh = SpinConfig(graph, config.spins)
    assert config.drift() < 1e-9
    assert config.hamiltonian == pytest.approx(fresh.hamiltonian, abs=1e-8)
    assert np.allclose(config.stabilities(), fresh.stabilities(), atol=1e-9)
    assert config.magnetization == int(config.spins.sum())


@pytest.mark.slow
@pytest.mark.parametrize("graph", [
    gen("gnp", 200, 4.0, "spin_glass", seed=12),
    gen_dense("gaussian", 100, seed=12),
])
def test_long_flip_sequence_does_not_drift(graph):
    rng = make_rng(13)
    config = SpinConfig.random(graph, rng)
    for v in rng.integers(graph.n, size=100_000):
        config.flip(int(v))
    assert config.drift() < 1e-10
    assert config.hamiltonian == pytest.approx(SpinConfig(graph, config.spins).hamiltonian, abs=1e-8)


def test_centered_stabilities_match_dense_formula():
    g = center_weights(gen("gnm", 50, 4.0, "antiferro", seed=6))
    sigma = make_rng(2).choice([-1.0, 1.0], size=50)
    b = g.dense_matrix()
    expected = sigma * (b @ sigma) / math.sqrt(4.0)
    assert np.allclose(stabilities(sigma, g), expected)
    assert hamiltonian(sigma, g) == pytest.approx(-sigma @ b @ sigma / (2.0 * 2.0))


def test_swap_keeps_magnetization():
    g = gen("gnp", 20, 3.0, "antiferro", seed=4)
    config = SpinConfig.random(g, make_rng(4), bisection=True)
    assert config.is_bisection()
    u = int(np.nonzero(config.spins > 0)[0][0])
    v = int(np.nonzero(config.spins < 0)[0][0])
    config.swap(u, v)
    assert config.is_bisection() and config.magnetization == 0
    with pytest.raises(ParameterError):
        config.swap(u, u)


def test_stabilities_scale_with_weights():
    g = gen("gnp", 40, 3.0, "spin_glass", seed=5)
    sigma = make_rng(3).choice([-1.0, 1.0], size=40)
    assert np.allclose(stabilities(sigma, scale_weights(g, 3.0)), 3.0 * stabilities(sigma, g))


def test_energy_is_linear_in_cut_parameter():
    # with exactly dn/2 antiferromagnetic slots, E = -sqrt(2) x holds exactly
    g = gen("gnm", 200, 4.0, "antiferro", seed=8)
    assert g.num_slots == 400
    for seed in range(3):
        sigma = make_rng(seed).choice([-1.0, 1.0], size=200)
        cut, x = cut_and_x(sigma, g)
        assert 0 <= cut <= g.num_slots
        assert energy(sigma, g) == pytest.approx(-math.sqrt(2.0) * x, abs=1e-12)


def test_energy_constrained_deficits():
    g = triangle()
    H = hamiltonian(TRIANGLE_SIGMA, g)
    n = g.n
    assert deficit_ge_E(TRIANGLE_SIGMA, g, 0.0, H / n - 0.1) == pytest.approx(0.0)
    assert deficit_ge_E(TRIANGLE_SIGMA, g, 0.0, H / n + 0.1) == pytest.approx(0.3)
    assert deficit_le_E(TRIANGLE_SIGMA, g, 0.0, H / n + 0.1) == pytest.approx(0.0)
    assert deficit_le_E(TRIANGLE_SIGMA, g, 0.5, H / n - 0.1) == pytest.approx(1.3)


def test_violation_bound_dominates_violator_count():
    g = gen("gnp", 100, 4.0, "antiferro", seed=10)
    sigma = make_rng(10).choice([-1.0, 1.0], size=100)
    h = 0.2
    violators = report(sigma, g, h).violators
    for h_tilde in (0.3, 0.5, 1.0):
        assert violation_bound(sigma, g, h, h_tilde) >= violators
    with pytest.raises(ParameterError):
        violation_bound(sigma, g, h, h)


def test_dense_cut_counts_nonzero_entries():
    g = gen_dense("bernoulli_half", 10, seed=1)
    sigma = np.array([1.0] * 5 + [-1.0] * 5)
    m = g.dense_matrix(centered=False)
    expected = int(np.count_nonzero(m[:5, 5:]))
    assert cut_and_x(sigma, g)[0] == expected


def test_copy_is_independent():
    g = from_edges(4, [(0, 1), (1, 2), (2, 3)], [1.0, 1.0, 1.0], norm_param=1.0)
    config = SpinConfig(g, [1, 1, 1, 1])
    clone = config.copy()
    clone.flip(0)
    assert config.spins.tolist() == [1.0, 1.0, 1.0, 1.0]
    assert config.hamiltonian == pytest.approx(-3.0)
    assert clone.hamiltonian == pytest.approx(-1.0)
