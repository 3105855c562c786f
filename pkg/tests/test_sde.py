import numpy as np
import pytest

from ergodp.expr import parse_expr
from ergodp.grid import build_grid
from ergodp.model import ProblemSpec, load_example
from ergodp.sde import (
    SimConfig, default_initial_ring, simulate, simulate_deterministic,
)


def _frozen_spec():
    """f = 0, G = 0, eps = 0: nothing moves."""
    zero = parse_expr("0")
    return ProblemSpec(
        n_x=1, n_u=1, f=(zero,), G=((zero,),),
        ell_q=parse_expr("x1^2"), ell_R=np.array([2.0]),
        u_lower=np.array([-1.0]), u_upper=np.array([1.0]),
        x_lower=np.array([-1.0]), x_upper=np.array([1.0]),
        epsilon=0.0,
    )


def test_frozen_dynamics_average_cost_is_pointwise_cost():
    spec = _frozen_spec()
    g = build_grid(spec.x_lower, spec.x_upper, [5])
    cfg = SimConfig(n_traj=4, dt=0.01, horizon=1.0, seed=0, burn_in=0.0)
    res = simulate(spec, g, np.zeros((g.m, 1)), cfg)
    # every trajectory sits still, so its time average is l(X0, 0) = X0^2
    assert res.traj_costs.shape == (4,)
    rng = np.random.Generator(np.random.Philox(
        key=np.random.SeedSequence(0).spawn(5)[-1].generate_state(2, np.uint64)))
    X0 = rng.uniform(spec.x_lower, spec.x_upper, size=(4, 1))
    np.testing.assert_allclose(res.traj_costs, X0[:, 0] ** 2, rtol=1e-12)


def test_seed_determinism_bitwise():
    spec = load_example("double_well_1d")
    g = build_grid(spec.x_lower, spec.x_upper, [41])
    fb = np.zeros((g.m, 1))
    cfg = SimConfig(n_traj=8, dt=0.01, horizon=5.0, seed=42, thin_stride=20)
    r1 = simulate(spec, g, fb, cfg)
    r2 = simulate(spec, g, fb, cfg)
    assert r1.mean == r2.mean
    assert r1.stderr == r2.stderr
    np.testing.assert_array_equal(r1.traj_costs, r2.traj_costs)
    np.testing.assert_array_equal(r1.samples, r2.samples)
    r3 = simulate(spec, g, fb, SimConfig(n_traj=8, dt=0.01, horizon=5.0, seed=43))
    assert r3.mean != r1.mean


def test_reflection_keeps_samples_inside():
    spec = load_example("double_well_1d")
    spec.epsilon = 8.0  # violent noise to stress the mirror
    g = build_grid(spec.x_lower, spec.x_upper, [41])
    cfg = SimConfig(n_traj=16, dt=0.02, horizon=5.0, seed=1, thin_stride=1)
    res = simulate(spec, g, np.zeros((g.m, 1)), cfg)
    xs = res.samples[:, 2]
    assert xs.min() >= spec.x_lower[0] - 1e-12
    assert xs.max() <= spec.x_upper[0] + 1e-12


def test_double_well_histogram_matches_analytic_density():
    """Total-variation distance of the empirical law vs the closed form."""
    spec = load_example("double_well_1d")
    g = build_grid(spec.x_lower, spec.x_upper, [61])
    # 1e6 post-burn-in samples: 40 trajectories x 50k steps x 50% kept
    cfg = SimConfig(n_traj=40, dt=0.004, horizon=200.0, seed=5,
                    burn_in=0.5, thin_stride=1)
    res = simulate(spec, g, np.zeros((g.m, 1)), cfg)
    burn = res.samples[:, 1] >= 0.5 * 200.0
    xs = res.samples[burn, 2]
    assert xs.size >= 1_000_000
    edges = np.linspace(spec.x_lower[0], spec.x_upper[0], 61)
    hist, _ = np.histogram(xs, bins=edges)
    emp = hist / hist.sum()
    centers = 0.5 * (edges[:-1] + edges[1:])
    ana = np.exp((centers**2 - centers**4) / 4.0)
    ana /= ana.sum()
    tv = 0.5 * np.abs(emp - ana).sum()
    assert tv <= 0.05


def test_weak_convergence_halving_dt():
    spec = load_example("double_well_1d")
    g = build_grid(spec.x_lower, spec.x_upper, [61])
    fb = np.zeros((g.m, 1))
    r1 = simulate(spec, g, fb, SimConfig(n_traj=48, dt=0.02, horizon=60.0, seed=2))
    r2 = simulate(spec, g, fb, SimConfig(n_traj=48, dt=0.01, horizon=60.0, seed=2))
    assert abs(r1.mean - r2.mean) <= 2.0 * max(r1.stderr, r2.stderr)


def test_deterministic_decay_to_origin():
    spec = load_example("lqg_1d")
    g = build_grid(spec.x_lower, spec.x_upper, [41])
    fb = np.zeros((g.m, 1))  # f = -x alone contracts
    times, paths = simulate_deterministic(spec, g, fb, X0=np.array([[2.0]]),
                                          T=10.0, dt=0.001)
    assert abs(paths[0, -1, 0]) <= 2.0 * np.exp(-10.0) * 1.1
    # geometric envelope along the way
    envelope = 2.0 * np.exp(-times) * 1.05 + 1e-9
    assert np.all(np.abs(paths[0, :, 0]) <= envelope)


def test_deterministic_frozen_point():
    spec = _frozen_spec()
    g = build_grid(spec.x_lower, spec.x_upper, [5])
    _, paths = simulate_deterministic(spec, g, np.zeros((g.m, 1)),
                                      X0=np.array([[0.3]]), T=1.0, dt=0.01)
    np.testing.assert_array_equal(paths[0, :, 0], np.full(paths.shape[1], 0.3))


def test_default_initial_ring_properties():
    spec = load_example("case_study_2d")
    ring = default_initial_ring(spec)
    assert ring.shape == (8, 2)
    radii = np.linalg.norm(ring, axis=1)
    np.testing.assert_allclose(radii, 0.6 * 3.0, rtol=1e-12)
    with pytest.raises(ValueError):
        default_initial_ring(load_example("lqg_1d"))


def test_paths_stay_inside_box_without_noise():
    spec = load_example("case_study_2d")
    g = build_grid(spec.x_lower, spec.x_upper, [21, 21])
    fb = np.zeros((g.m, 1))
    _, paths = simulate_deterministic(spec, g, fb, T=20.0, dt=0.01)
    assert paths[..., 0].min() >= spec.x_lower[0] - 1e-12
    assert paths[..., 0].max() <= spec.x_upper[0] + 1e-12
    assert paths[..., 1].min() >= spec.x_lower[1] - 1e-12
    assert paths[..., 1].max() <= spec.x_upper[1] + 1e-12


def test_burn_in_validation():
    with pytest.raises(ValueError):
        SimConfig(burn_in=1.0)
    with pytest.raises(ValueError):
        SimConfig(dt=0.0)
