"""Model constants, school state, the running-reward family and the Monte
Carlo objective estimator.

The objective integrates exp(-rho*s)*alpha*H*h(s, x, v, u) over time and fish,
as an expectation over simulated paths.  H is held constant per run; per-fish
parameters may be scalars (shared) or length-I vectors.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import NumericalError, ValidationError

# below this |omega| the log transform of the value function is degenerate
OMEGA_EPSILON = 1e-12


def per_fish(value, n):
    """Broadcast a scalar-or-vector parameter to a length-n array."""
    arr = np.asarray(value, dtype=float)
    if arr.ndim == 0:
        return np.full(n, float(arr))
    if arr.shape != (n,):
        raise ValidationError(f"per-fish parameter has shape {arr.shape}, expected ({n},)")
    return arr


def _scalar(value, name):
    arr = np.asarray(value, dtype=float)
    if arr.ndim != 0:
        raise ValidationError(f"{name} must be a scalar here, got shape {arr.shape}")
    return float(arr)


@dataclass(frozen=True)
class ModelParams:
    n_fish: int = 2
    discount: object = 0.05    # rho, per-fish rate in (0, 1)
    weight: object = 1.0       # alpha
    survival: object = 1.0     # H in [0, 1]
    comm_rate: float = 1.0     # psi, constant communication rate
    coupling: float = 1.0      # lambda
    mult1: float = 0.0         # lambda_1
    mult2: float = 0.0         # lambda_2
    mult3: float = 0.0         # lambda_3
    sigma1: object = 0.1
    sigma2: object = 0.1
    corr: float = 0.0          # state correlation, not the discount
    quad_cost: float = 1.0     # R
    horizon: float = 1.0
    dt: float = 0.01
    reward_floor: float = 0.0

    def __post_init__(self):
        if int(self.n_fish) < 1:
            raise ValidationError("n_fish must be >= 1")
        rho = per_fish(self.discount, self.n_fish)
        if np.any(rho <= 0.0) or np.any(rho >= 1.0):
            raise ValidationError("discount must lie in (0, 1)")
        H = per_fish(self.survival, self.n_fish)
        if np.any(H < 0.0) or np.any(H > 1.0):
            raise ValidationError("survival must lie in [0, 1]")
        if np.any(per_fish(self.sigma1, self.n_fish) < 0.0):
            raise ValidationError("sigma1 must be nonnegative")
        if np.any(per_fish(self.sigma2, self.n_fish) < 0.0):
            raise ValidationError("sigma2 must be nonnegative")
        for name in ("comm_rate", "coupling", "mult1", "mult2", "mult3"):
            if np.any(per_fish(getattr(self, name), self.n_fish) < 0.0):
                raise ValidationError(f"{name} must be nonnegative")
        if self.reward_floor < 0.0:
            raise ValidationError("reward_floor must be nonnegative")
        if not -1.0 < self.corr < 1.0:
            raise ValidationError("corr must lie in (-1, 1)")
        if self.quad_cost <= 0.0:
            raise ValidationError("quad_cost must be positive")
        if self.horizon <= 0.0:
            raise ValidationError("horizon must be positive")
        if self.dt <= 0.0:
            raise ValidationError("dt must be positive")

    @property
    def omega(self):
        s1 = _scalar(self.sigma1, "sigma1")
        s2 = _scalar(self.sigma2, "sigma2")
        return self.quad_cost * (s1**2 + 2.0 * self.corr * s1**3 + s2**2)

    def require_omega(self):
        w = self.omega
        if abs(w) <= OMEGA_EPSILON:
            raise NumericalError("omega degenerate: log transform undefined")
        return w


@dataclass
class SchoolState:
    time: float
    positions: np.ndarray
    velocities: np.ndarray

    def __post_init__(self):
        self.positions = np.atleast_1d(np.asarray(self.positions, dtype=float))
        self.velocities = np.atleast_1d(np.asarray(self.velocities, dtype=float))
        if self.positions.shape != self.velocities.shape:
            raise ValidationError("positions and velocities must have equal length")
        if not (
            np.all(np.isfinite(self.positions))
            and np.all(np.isfinite(self.velocities))
            and math.isfinite(self.time)
        ):
            raise ValidationError("school state entries must be finite")

    @property
    def n_fish(self):
        return self.positions.size

    def copy(self):
        return SchoolState(self.time, self.positions.copy(), self.velocities.copy())

    def check_box(self, lo, hi):
        """Assumption-3 reachable-set bound, enforced only when enabled."""
        if np.any(self.positions < lo) or np.any(self.positions > hi):
            raise ValidationError("position outside the configured reachable box")


@dataclass(frozen=True)
class RewardSpec:
    kind: str = "example1"
    fn: object = None  # (s, x, v, u) -> real, used by the generic-callable kind

    def __post_init__(self):
        if self.kind not in ("example1", "generic-callable"):
            raise ValidationError(f"unknown reward kind {self.kind!r}")
        if self.kind == "generic-callable" and self.fn is None:
            raise ValidationError("generic-callable reward needs a callable")


def evaluate_reward(spec, s, x, v, u):
    for val in (s, x, v, u):
        if not np.all(np.isfinite(np.asarray(val, dtype=float))):
            raise ValidationError("reward inputs must be finite")
    if spec.kind == "example1":
        out = np.asarray(x, dtype=float) * np.asarray(v, dtype=float) * np.asarray(u, dtype=float) ** 2
    else:
        out = np.asarray(spec.fn(s, x, v, u), dtype=float)
    if not np.all(np.isfinite(out)):
        raise ValidationError("reward evaluated to a non-finite value")
    return float(out) if out.ndim == 0 else out


def discounted_running_weight(params, s):
    if s < 0.0:
        raise ValidationError("time must be nonnegative")
    n = params.n_fish
    w = np.exp(-per_fish(params.discount, n) * s) * per_fish(params.weight, n) * per_fish(params.survival, n)
    return float(w[0]) if np.all(w == w[0]) else w


def estimate_objective(params, spec, policy, n_paths, seed, init=None, dynamics=None):
    """Monte Carlo estimate of the discounted running objective.

    Returns (mean, stderr); deterministic for a fixed seed.  Paths come from
    sde.simulate under `dynamics` (default: the coupled-school kind built from
    params) starting at `init` (default: school at the origin).
    """
    from . import sde  # deferred: sde imports this module

    if n_paths < 1:
        raise ValidationError("n_paths must be >= 1")
    if dynamics is None:
        dynamics = sde.DynamicsSpec(kind="cucker-smale")
    if init is None:
        init = SchoolState(0.0, np.zeros(params.n_fish), np.zeros(params.n_fish))
    ens = sde.simulate(dynamics, params, policy, params.horizon, params.dt, n_paths, seed, init=init)

    n = params.n_fish
    rho = per_fish(params.discount, n)
    alpha = per_fish(params.weight, n)
    H = per_fish(params.survival, n)
    # left Riemann sum over steps, matching the Euler-Maruyama order
    t = ens.times[:-1]
    disc = np.exp(-np.outer(t, rho)) * alpha * H  # (n_steps, n_fish)
    t_col = t[:, None]
    totals = np.empty(n_paths)
    for p in range(n_paths):
        h = evaluate_reward(spec, t_col, ens.xs[p, :-1, :], ens.vs[p, :-1, :], ens.us[p, :-1, :])
        totals[p] = np.sum(disc * h) * ens.dt
    mean = float(np.mean(totals))
    stderr = float(np.std(totals, ddof=1) / math.sqrt(n_paths)) if n_paths > 1 else 0.0
    return mean, stderr


def compare_policies(params, spec, policy_a, policy_b, n_paths, seed, init=None, dynamics=None):
    """Empirical equilibrium comparison under common random numbers."""
    mean_a, se_a = estimate_objective(params, spec, policy_a, n_paths, seed, init=init, dynamics=dynamics)
    mean_b, se_b = estimate_objective(params, spec, policy_b, n_paths, seed, init=init, dynamics=dynamics)
    gap = mean_a - mean_b
    combined = math.hypot(se_a, se_b)
    if gap == 0.0:
        winner = "indistinguishable"
    else:
        winner = "A" if gap > 0.0 else "B"
    significant = abs(gap) > 3.0 * combined
    winner_mean = max(mean_a, mean_b)
    return {
        "mean_a": mean_a,
        "stderr_a": se_a,
        "mean_b": mean_b,
        "stderr_b": se_b,
        "gap": gap,
        "combined_stderr": combined,
        "winner": winner,
        "significant": significant,
        "floor_flagged": bool(winner_mean < params.reward_floor),
    }
