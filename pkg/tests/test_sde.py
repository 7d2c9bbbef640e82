import numpy as np
import pytest

from fishmig.errors import NumericalError, ValidationError
from fishmig.model import ModelParams, SchoolState
from fishmig.sde import (
    DynamicsSpec,
    check_growth_lipschitz,
    drift_position,
    drift_velocity,
    generator_apply,
    generator_mc,
    simulate,
    step_euler_maruyama,
)


def test_spec_validation():
    with pytest.raises(ValidationError):
        DynamicsSpec(kind="unknown")
    with pytest.raises(ValidationError):
        DynamicsSpec(kind="cucker-smale", convention="sideways")
    with pytest.raises(ValidationError):
        DynamicsSpec(kind="generic", mu1=lambda s, x, v, u: x)


def test_school_drifts():
    params = ModelParams(n_fish=3, comm_rate=1.3, coupling=0.9)
    spec = DynamicsSpec(kind="cucker-smale")
    state = SchoolState(0.0, np.array([1.0, 2.0, 3.0]), np.array([0.5, -0.5, 1.0]))
    u = np.array([0.4, 0.4, 0.4])
    np.testing.assert_almost_equal(drift_position(spec, params, state, u, 0), 0.4 * 0.5, decimal=15)
    # reference drift: u * psi * lam * (v_i - mean v)
    mean_v = np.mean(state.velocities)
    np.testing.assert_almost_equal(
        drift_velocity(spec, params, state, u, 1), 0.4 * 1.3 * 0.9 * (-0.5 - mean_v), decimal=15
    )
    flipped = DynamicsSpec(kind="cucker-smale", convention="alignment")
    np.testing.assert_almost_equal(
        drift_velocity(flipped, params, state, u, 1),
        -drift_velocity(spec, params, state, u, 1),
        decimal=15,
    )
    with pytest.raises(ValidationError):
        drift_position(spec, params, state, u, 5)


def test_step_frozen():
    params = ModelParams(n_fish=2, sigma1=0.2, sigma2=0.25, dt=0.05)
    spec = DynamicsSpec(kind="cucker-smale")
    state = SchoolState(0.2, np.array([1.0, 2.0]), np.array([0.5, -0.5]))
    noise = np.array([[0.3, -0.6], [0.1, 1.1]])
    out = step_euler_maruyama(spec, params, state, np.array([0.4, 0.4]), 0.05, noise)
    np.testing.assert_almost_equal(out.time, 0.25, decimal=15)
    np.testing.assert_almost_equal(
        out.positions, [1.0234164078649988, 1.9944721359549995], decimal=15
    )
    np.testing.assert_almost_equal(
        out.velocities, [0.44291796067500633, -0.38701626123751154], decimal=15
    )
    with pytest.raises(ValidationError):
        step_euler_maruyama(spec, params, state, 0.4, 0.0, noise)
    with pytest.raises(ValidationError):
        step_euler_maruyama(spec, params, state, 0.4, 0.05, noise[:1])


def test_step_reflecting_bounds():
    params = ModelParams(n_fish=1, sigma1=0.0, sigma2=0.0)
    spec = DynamicsSpec(kind="cucker-smale")
    state = SchoolState(0.0, np.array([0.95]), np.array([1.0]))
    out = step_euler_maruyama(spec, params, state, 1.0, 0.2, np.zeros((1, 2)), bounds=(0.0, 1.0))
    # drift would land at 1.15; the reflection folds it back to 0.85
    np.testing.assert_almost_equal(out.positions[0], 0.85, decimal=15)


def test_simulate_shapes_and_determinism():
    params = ModelParams(n_fish=2, sigma1=0.2, sigma2=0.1)
    spec = DynamicsSpec(kind="cucker-smale")
    init = SchoolState(0.0, np.array([1.0, 1.5]), np.array([0.4, 0.6]))
    ens = simulate(spec, params, lambda s, st: 0.5, 0.1, 0.01, 3, 42, init=init)
    assert ens.xs.shape == (3, 11, 2)
    assert ens.n_paths == 3 and ens.n_steps == 10
    np.testing.assert_array_equal(ens.us, 0.5)
    again = simulate(spec, params, lambda s, st: 0.5, 0.1, 0.01, 3, 42, init=init)
    np.testing.assert_array_equal(ens.xs, again.xs)
    np.testing.assert_array_equal(ens.vs, again.vs)
    # path p depends only on (seed, p): a wider ensemble reproduces the narrow one
    wide = simulate(spec, params, lambda s, st: 0.5, 0.1, 0.01, 5, 42, init=init)
    np.testing.assert_array_equal(wide.xs[:3], ens.xs)
    with pytest.raises(ValidationError):
        simulate(spec, params, lambda s, st: 0.5, 0.105, 0.01, 1, 0, init=init)


def test_simulate_potential_weights():
    params = ModelParams(n_fish=1, sigma1=0.0, sigma2=0.0)
    spec = DynamicsSpec(kind="cucker-smale")
    init = SchoolState(0.0, np.array([1.0]), np.array([0.0]))
    ens = simulate(spec, params, lambda s, st: 0.0, 0.5, 0.05, 2, 0, init=init,
                   potential=lambda s, st: 0.3)
    np.testing.assert_almost_equal(ens.log_weights, [-0.15, -0.15], decimal=12)


def test_alignment_contracts_velocity_spread():
    params = ModelParams(n_fish=4, sigma1=0.0, sigma2=0.0, comm_rate=1.0, coupling=1.0)
    spec = DynamicsSpec(kind="cucker-smale", convention="alignment")
    init = SchoolState(0.0, np.array([0.0, 1.0, 2.0, 3.0]), np.array([-1.0, 0.5, 1.5, -0.2]))
    ens = simulate(spec, params, lambda s, st: 1.0, 1.0, 0.01, 1, 0, init=init)
    spread = ens.vs[0].max(axis=1) - ens.vs[0].min(axis=1)
    assert np.all(np.diff(spread) <= 1e-12)
    # the printed sign does the opposite
    paper = DynamicsSpec(kind="cucker-smale", convention="paper")
    ens2 = simulate(paper, params, lambda s, st: 1.0, 1.0, 0.01, 1, 0, init=init)
    spread2 = ens2.vs[0].max(axis=1) - ens2.vs[0].min(axis=1)
    assert spread2[-1] > spread2[0]


def test_growth_lipschitz_report():
    params = ModelParams(n_fish=3, sigma1=0.2, sigma2=0.1)
    spec = DynamicsSpec(kind="cucker-smale")
    report = check_growth_lipschitz(spec, params, (-2.0, 2.0, -1.0, 1.0), 2000, 5)
    assert report["conforms"]
    assert report["violations"] == []
    assert set(report["estimates"]) == set(report["doubled_box"])
    with pytest.raises(ValidationError):
        check_growth_lipschitz(spec, params, (2.0, -2.0, -1.0, 1.0), 100, 5)


def test_generator_quadratic_frozen():
    params = ModelParams(n_fish=1, sigma1=0.4, sigma2=0.3, corr=0.5)
    got = generator_apply(
        params, lambda s, x, v: x * v, (0.1, 0.8, -0.6),
        mu1=lambda s, x, v: -0.3 * x, mu2=lambda s, x, v: 0.2 * v,
    )
    # analytic: mu1*v + mu2*x + corr*sigma1^3 (the h_xv coefficient)
    exact = -0.3 * 0.8 * (-0.6) + 0.2 * (-0.6) * 0.8 + 0.5 * 0.4**3
    np.testing.assert_almost_equal(exact, 0.08, decimal=15)
    np.testing.assert_almost_equal(got, 0.07999993325846778, decimal=15)
    assert abs(got - exact) < 1e-6


def test_generator_mc_agrees():
    params = ModelParams(n_fish=1, sigma1=0.4, sigma2=0.3, corr=0.5)
    mu1 = lambda s, x, v: -0.3 * x
    mu2 = lambda s, x, v: 0.2 * v
    h = lambda s, x, v: x * v
    exact = generator_apply(params, h, (0.1, 0.8, -0.6), mu1=mu1, mu2=mu2)
    est, se = generator_mc(params, h, (0.1, 0.8, -0.6), 1e-4, 40000, 3, mu1=mu1, mu2=mu2)
    assert abs(est - exact) <= 4.0 * se
    with pytest.raises(ValidationError):
        generator_mc(params, h, (0.1, 0.8, -0.6), 0.0, 100, 3)


def test_generator_mc_needs_psd_covariance():
    bad = ModelParams(n_fish=1, sigma1=1.0, sigma2=0.1, corr=0.9)
    with pytest.raises(NumericalError):
        generator_mc(bad, lambda s, x, v: x, (0.0, 0.0, 0.0), 1e-4, 100, 0)
