import math

import numpy as np
import pytest

from fishmig.errors import NumericalError, ValidationError
from fishmig.model import (
    ModelParams,
    RewardSpec,
    SchoolState,
    compare_policies,
    discounted_running_weight,
    estimate_objective,
    evaluate_reward,
    per_fish,
)
from fishmig.sde import DynamicsSpec


def test_per_fish_broadcast():
    np.testing.assert_array_equal(per_fish(0.3, 4), [0.3, 0.3, 0.3, 0.3])
    np.testing.assert_array_equal(per_fish([0.1, 0.2], 2), [0.1, 0.2])
    with pytest.raises(ValidationError):
        per_fish([0.1, 0.2, 0.3], 2)


def test_params_validation():
    ModelParams(n_fish=3, discount=[0.1, 0.2, 0.3])
    with pytest.raises(ValidationError):
        ModelParams(n_fish=0)
    with pytest.raises(ValidationError):
        ModelParams(discount=0.0)
    with pytest.raises(ValidationError):
        ModelParams(discount=1.0)
    with pytest.raises(ValidationError):
        ModelParams(survival=1.5)
    with pytest.raises(ValidationError):
        ModelParams(sigma1=-0.1)
    with pytest.raises(ValidationError):
        ModelParams(corr=1.0)
    with pytest.raises(ValidationError):
        ModelParams(quad_cost=0.0)
    with pytest.raises(ValidationError):
        ModelParams(dt=-0.01)
    with pytest.raises(ValidationError):
        ModelParams(n_fish=2, coupling=-0.5)
    # per-fish vectors pass the nonnegativity check too
    ModelParams(n_fish=2, comm_rate=[1.0, 2.0])
    with pytest.raises(ValidationError):
        ModelParams(n_fish=2, comm_rate=[1.0, -2.0])


def test_omega_formula():
    p = ModelParams(sigma1=0.5, sigma2=0.5, corr=0.3, quad_cost=2.0)
    expected = 2.0 * (0.25 + 2 * 0.3 * 0.125 + 0.25)
    np.testing.assert_almost_equal(p.omega, expected, decimal=15)
    degenerate = ModelParams(sigma1=0.0, sigma2=0.0)
    with pytest.raises(NumericalError):
        degenerate.require_omega()


def test_school_state():
    st = SchoolState(0.0, [1.0, 2.0], [0.5, -0.5])
    assert st.n_fish == 2
    other = st.copy()
    other.positions[0] = 9.0
    assert st.positions[0] == 1.0
    with pytest.raises(ValidationError):
        SchoolState(0.0, [1.0], [0.5, -0.5])
    with pytest.raises(ValidationError):
        SchoolState(0.0, [np.inf], [0.0])
    st.check_box(-5.0, 5.0)
    with pytest.raises(ValidationError):
        st.check_box(1.5, 5.0)


def test_reward_spec():
    spec = RewardSpec(kind="example1")
    np.testing.assert_almost_equal(evaluate_reward(spec, 0.0, 2.0, 3.0, 0.5), 2.0 * 3.0 * 0.25)
    custom = RewardSpec(kind="generic-callable", fn=lambda s, x, v, u: x + v)
    np.testing.assert_almost_equal(evaluate_reward(custom, 0.0, 2.0, 3.0, 0.5), 5.0)
    with pytest.raises(ValidationError):
        RewardSpec(kind="generic-callable")
    with pytest.raises(ValidationError):
        RewardSpec(kind="nope")
    with pytest.raises(ValidationError):
        evaluate_reward(spec, 0.0, np.nan, 1.0, 1.0)


def test_discounted_running_weight():
    p = ModelParams(n_fish=2, discount=0.1, weight=1.2, survival=0.8)
    np.testing.assert_almost_equal(
        discounted_running_weight(p, 0.5), math.exp(-0.05) * 1.2 * 0.8, decimal=15
    )
    with pytest.raises(ValidationError):
        discounted_running_weight(p, -1.0)


def zero_dynamics():
    zero = lambda s, x, v, u: 0.0 * x
    return DynamicsSpec(kind="generic", mu1=zero, sig1=zero, mu2=zero, sig2=zero)


def test_objective_frozen_state():
    # zero diffusion, zero drift: the Riemann sum is deterministic and the
    # expected value reduces to sum_i x_i v_i * integral exp(-rho s) ds
    params = ModelParams(n_fish=2, discount=0.1, horizon=0.5, dt=0.01, sigma1=0.0, sigma2=0.0)
    init = SchoolState(0.0, np.array([2.0, 1.0]), np.array([0.5, 1.5]))
    est, se = estimate_objective(
        params, RewardSpec(kind="example1"), lambda s, st: 1.0, 3, 0, init=init, dynamics=zero_dynamics()
    )
    np.testing.assert_almost_equal(est, 1.219874121281255, decimal=15)
    assert se == 0.0
    # hand left-Riemann sum over the same 50 steps
    t = 0.01 * np.arange(50)
    hand = float(np.sum(np.exp(-0.1 * t) * (2.0 * 0.5 + 1.0 * 1.5)) * 0.01)
    np.testing.assert_almost_equal(est, hand, decimal=15)


def test_objective_seed_determinism():
    params = ModelParams(n_fish=2, discount=0.1, horizon=0.2, dt=0.01, sigma1=0.3, sigma2=0.2)
    init = SchoolState(0.0, np.array([1.0, 1.5]), np.array([0.5, 0.7]))
    spec = RewardSpec(kind="example1")
    a = estimate_objective(params, spec, lambda s, st: 0.3, 40, 11, init=init)
    b = estimate_objective(params, spec, lambda s, st: 0.3, 40, 11, init=init)
    assert a == b
    c = estimate_objective(params, spec, lambda s, st: 0.3, 40, 12, init=init)
    assert a != c


def test_compare_policies_detects_gap():
    params = ModelParams(n_fish=2, discount=0.1, horizon=0.5, dt=0.01, sigma1=0.0, sigma2=0.0)
    init = SchoolState(0.0, np.array([2.0, 1.0]), np.array([0.5, 1.5]))
    spec = RewardSpec(kind="example1")
    out = compare_policies(
        params, spec, lambda s, st: 1.0, lambda s, st: 0.5, 3, 0, init=init, dynamics=zero_dynamics()
    )
    # reward scales with u^2, so policy A earns four times policy B
    np.testing.assert_almost_equal(out["mean_a"], 4.0 * out["mean_b"], decimal=12)
    assert out["winner"] == "A"
    assert out["gap"] > 0.0
    assert out["combined_stderr"] == 0.0
    assert not out["floor_flagged"]
    flagged = compare_policies(
        params.__class__(**{**params.__dict__, "reward_floor": 10.0}),
        spec, lambda s, st: 1.0, lambda s, st: 0.5, 3, 0, init=init, dynamics=zero_dynamics(),
    )
    assert flagged["floor_flagged"]
