"""Euler-Maruyama integration of the coupled position/relative-velocity
system, the school-coupled specialization, empirical growth/Lipschitz checks
and the infinitesimal-generator cross-check.

Conventions: the school-coupled velocity drift supports both velocity
-difference signs, `paper` (v_i - v_j) and `alignment` (v_j - v_i); only the
alignment sign contracts the velocity spread.  The velocity diffusion of the
school-coupled kind is sqrt(sigma2), i.e. sigma2 is a variance there.
"""

import math
from dataclasses import dataclass

import numpy as np

from .errors import NumericalError, ValidationError
from .model import SchoolState, per_fish
from .rng import DOMAIN_GENERATOR, DOMAIN_PATHS, DOMAIN_SAMPLER, substream


@dataclass(frozen=True)
class DynamicsSpec:
    kind: str = "cucker-smale"
    mu1: object = None    # (s, x, v, u) -> drift, generic kind only
    sig1: object = None   # (s, x, v, u) -> diffusion
    mu2: object = None
    sig2: object = None
    convention: str = "paper"

    def __post_init__(self):
        if self.kind not in ("generic", "cucker-smale"):
            raise ValidationError(f"unknown dynamics kind {self.kind!r}")
        if self.convention not in ("paper", "alignment"):
            raise ValidationError(f"unknown velocity convention {self.convention!r}")
        if self.kind == "generic":
            for name in ("mu1", "sig1", "mu2", "sig2"):
                if getattr(self, name) is None:
                    raise ValidationError(f"generic dynamics needs callable {name}")


def _drift_position_all(spec, params, state, controls):
    if spec.kind == "cucker-smale":
        return controls * state.velocities
    return np.asarray(spec.mu1(state.time, state.positions, state.velocities, controls), dtype=float)


def _drift_velocity_all(spec, params, state, controls):
    if spec.kind == "cucker-smale":
        v = state.velocities
        # (lambda/I) sum_j u*psi*(v_i - v_j) collapses to u*psi*lambda*(v_i - mean v)
        rel = v - np.mean(v)
        if spec.convention == "alignment":
            rel = -rel
        return controls * params.comm_rate * params.coupling * rel
    return np.asarray(spec.mu2(state.time, state.positions, state.velocities, controls), dtype=float)


def _diffusions_all(spec, params, state, controls):
    n = state.n_fish
    if spec.kind == "cucker-smale":
        return per_fish(params.sigma1, n), np.sqrt(per_fish(params.sigma2, n))
    s1 = np.broadcast_to(
        np.asarray(spec.sig1(state.time, state.positions, state.velocities, controls), dtype=float), (n,)
    )
    s2 = np.broadcast_to(
        np.asarray(spec.sig2(state.time, state.positions, state.velocities, controls), dtype=float), (n,)
    )
    return s1, s2


def drift_position(spec, params, state, controls, i):
    if not 0 <= i < state.n_fish:
        raise ValidationError("fish index out of range")
    return float(_drift_position_all(spec, params, state, np.asarray(controls, dtype=float))[i])


def drift_velocity(spec, params, state, controls, i):
    if not 0 <= i < state.n_fish:
        raise ValidationError("fish index out of range")
    return float(_drift_velocity_all(spec, params, state, np.asarray(controls, dtype=float))[i])


def step_euler_maruyama(spec, params, state, controls, dt, noise, bounds=None):
    """One explicit step; noise holds one standard normal per (fish, equation)."""
    if dt <= 0.0:
        raise ValidationError("dt must be positive")
    controls = np.broadcast_to(np.asarray(controls, dtype=float), (state.n_fish,))
    noise = np.asarray(noise, dtype=float)
    if noise.shape != (state.n_fish, 2):
        raise ValidationError(f"noise must have shape ({state.n_fish}, 2)")
    mu1 = _drift_position_all(spec, params, state, controls)
    mu2 = _drift_velocity_all(spec, params, state, controls)
    s1, s2 = _diffusions_all(spec, params, state, controls)
    root = math.sqrt(dt)
    x = state.positions + mu1 * dt + s1 * root * noise[:, 0]
    v = state.velocities + mu2 * dt + s2 * root * noise[:, 1]
    if bounds is not None:
        lo, hi = bounds
        x = np.where(x < lo, 2.0 * lo - x, x)
        x = np.where(x > hi, 2.0 * hi - x, x)
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(v))):
        raise NumericalError("non-finite state update")
    return SchoolState(state.time + dt, x, v)


@dataclass
class PathEnsemble:
    xs: np.ndarray           # (n_paths, n_steps+1, n_fish)
    vs: np.ndarray
    us: np.ndarray
    times: np.ndarray        # (n_steps+1,)
    log_weights: np.ndarray  # (n_paths,)
    dt: float
    seed: int

    def __post_init__(self):
        if self.xs.shape != self.vs.shape or self.xs.shape != self.us.shape:
            raise ValidationError("trajectory arrays must share one shape")
        if self.xs.shape[1] != self.times.size:
            raise ValidationError("trajectory length must equal n_steps + 1")
        if not np.all(np.isfinite(self.log_weights)):
            raise ValidationError("path weights must be finite")

    @property
    def n_paths(self):
        return self.xs.shape[0]

    @property
    def n_steps(self):
        return self.xs.shape[1] - 1

    def state(self, path, step):
        return SchoolState(float(self.times[step]), self.xs[path, step], self.vs[path, step])


def _step_count(horizon, dt):
    n = int(round(horizon / dt))
    if n < 1 or abs(n * dt - horizon) > 1e-9 * max(1.0, abs(horizon)):
        raise ValidationError("horizon must be a whole number of dt steps")
    return n


def simulate(spec, params, policy, horizon, dt, n_paths, seed, init=None, bounds=None, potential=None):
    """Seeded trajectory ensemble; the stream of path p depends only on (seed, p).

    `potential`, when given, is a callable (s, state) -> real whose time
    integral is accumulated into the per-path log-weights with a minus sign.
    """
    n_steps = _step_count(horizon, dt)
    if n_paths < 1:
        raise ValidationError("n_paths must be >= 1")
    if init is None:
        init = SchoolState(0.0, np.zeros(params.n_fish), np.zeros(params.n_fish))
    n = init.n_fish
    xs = np.empty((n_paths, n_steps + 1, n))
    vs = np.empty_like(xs)
    us = np.empty_like(xs)
    times = init.time + dt * np.arange(n_steps + 1)
    logw = np.zeros(n_paths)

    for p in range(n_paths):
        rng = substream(seed, DOMAIN_PATHS, p)
        state = init.copy()
        for k in range(n_steps):
            controls = np.broadcast_to(np.asarray(policy(state.time, state), dtype=float), (n,))
            xs[p, k], vs[p, k], us[p, k] = state.positions, state.velocities, controls
            if potential is not None:
                logw[p] -= potential(state.time, state) * dt
            try:
                state = step_euler_maruyama(spec, params, state, controls, dt, rng.standard_normal((n, 2)), bounds=bounds)
            except NumericalError as err:
                raise NumericalError(f"{err} (path {p}, step {k})") from None
        xs[p, n_steps], vs[p, n_steps] = state.positions, state.velocities
        us[p, n_steps] = np.broadcast_to(np.asarray(policy(state.time, state), dtype=float), (n,))
    return PathEnsemble(xs, vs, us, times, logw, dt, seed)


def _pair_callables(spec, params, box):
    """Scalar (s, x, v, u) callables for the four coefficients of the system.

    The school-coupled kind is reduced to a two-fish system whose partner sits
    frozen at the box center, which preserves its growth/Lipschitz character.
    """
    if spec.kind == "generic":
        return spec.mu1, spec.sig1, spec.mu2, spec.sig2
    x_lo, x_hi, v_lo, v_hi = box
    v_mid = 0.5 * (v_lo + v_hi)
    psi, lam = params.comm_rate, params.coupling
    sign = -1.0 if spec.convention == "alignment" else 1.0
    s1 = float(np.mean(per_fish(params.sigma1, params.n_fish)))
    s2 = math.sqrt(float(np.mean(per_fish(params.sigma2, params.n_fish))))
    return (
        lambda s, x, v, u: u * v,
        lambda s, x, v, u: s1 * np.ones_like(np.asarray(x, dtype=float)),
        lambda s, x, v, u: sign * 0.5 * lam * u * psi * (v - v_mid),
        lambda s, x, v, u: s2 * np.ones_like(np.asarray(v, dtype=float)),
    )


def _growth_consts(mu1, sig1, mu2, sig2, s, x, v, u):
    denom = 1.0 + np.abs(x) + np.abs(v)
    k1 = np.max((np.abs(mu1(s, x, v, u)) + np.abs(sig1(s, x, v, u))) / denom)
    k2 = np.max((np.abs(mu2(s, x, v, u)) + np.abs(sig2(s, x, v, u))) / denom)
    return float(k1), float(k2)


def _lipschitz_consts(mu1, sig1, mu2, sig2, s, x, xt, v, vt, u):
    dx = np.abs(x - xt)
    keep = dx > 1e-8
    num = np.abs(mu1(s, x, v, u) - mu1(s, xt, v, u)) + np.abs(sig1(s, x, v, u) - sig1(s, xt, v, u))
    k3 = float(np.max(num[keep] / dx[keep])) if np.any(keep) else 0.0
    dv = np.abs(v - vt)
    keep = dv > 1e-8
    num = np.abs(mu2(s, x, v, u) - mu2(s, x, vt, u)) + np.abs(sig2(s, x, v, u) - sig2(s, x, vt, u))
    k4 = float(np.max(num[keep] / dv[keep])) if np.any(keep) else 0.0
    return k3, k4


def check_growth_lipschitz(spec, params, box, n_samples, seed):
    """Empirical smallest constants for the linear-growth and Lipschitz bounds.

    Report-only: estimates K1..K4 on the box and on the doubled box, flagging
    any constant that keeps growing (>= 1.5x) when the box doubles.
    """
    x_lo, x_hi, v_lo, v_hi = (float(b) for b in box)
    if not (x_lo < x_hi and v_lo < v_hi):
        raise ValidationError("sample box must be nondegenerate")
    mu1, sig1, mu2, sig2 = _pair_callables(spec, params, box)
    rng = substream(seed, DOMAIN_SAMPLER)

    def draw(lo_x, hi_x, lo_v, hi_v):
        x = rng.uniform(lo_x, hi_x, n_samples)
        xt = rng.uniform(lo_x, hi_x, n_samples)
        v = rng.uniform(lo_v, hi_v, n_samples)
        vt = rng.uniform(lo_v, hi_v, n_samples)
        u = rng.uniform(-1.0, 1.0, n_samples)
        s = rng.uniform(0.0, params.horizon, n_samples)
        return s, x, xt, v, vt, u

    s, x, xt, v, vt, u = draw(x_lo, x_hi, v_lo, v_hi)
    k1, k2 = _growth_consts(mu1, sig1, mu2, sig2, s, x, v, u)
    k3, k4 = _lipschitz_consts(mu1, sig1, mu2, sig2, s, x, xt, v, vt, u)

    cx, cv = 0.5 * (x_lo + x_hi), 0.5 * (v_lo + v_hi)
    hx, hv = x_hi - cx, v_hi - cv
    s, x, xt, v, vt, u = draw(cx - 2 * hx, cx + 2 * hx, cv - 2 * hv, cv + 2 * hv)
    k1d, k2d = _growth_consts(mu1, sig1, mu2, sig2, s, x, v, u)
    k3d, k4d = _lipschitz_consts(mu1, sig1, mu2, sig2, s, x, xt, v, vt, u)

    base = {"K1": k1, "K2": k2, "K3": k3, "K4": k4}
    doubled = {"K1": k1d, "K2": k2d, "K3": k3d, "K4": k4d}
    violations = [name for name in base if doubled[name] > 1.5 * max(base[name], 1e-12)]
    return {
        "estimates": base,
        "doubled_box": doubled,
        "violations": violations,
        "conforms": not violations,
        "n_samples": int(n_samples),
    }


def _cross_coefficient(params, conventional):
    s1 = float(np.mean(per_fish(params.sigma1, params.n_fish)))
    s2 = float(np.mean(per_fish(params.sigma2, params.n_fish)))
    return params.corr * s1 * s2 if conventional else params.corr * s1**3


def _noise_cholesky(params, conventional):
    s1 = float(np.mean(per_fish(params.sigma1, params.n_fish)))
    s2 = float(np.mean(per_fish(params.sigma2, params.n_fish)))
    c = _cross_coefficient(params, conventional)
    if c == 0.0:
        return np.array([[s1, 0.0], [0.0, s2]])
    cov = np.array([[s1**2, c], [c, s2**2]])
    try:
        return np.linalg.cholesky(cov)
    except np.linalg.LinAlgError:
        raise NumericalError(
            "state covariance not positive definite: need sigma2 >= |corr|*sigma1^2"
        ) from None


def generator_apply(params, h, point, mu1=None, mu2=None, conventional_cross_term=False):
    """Second-order generator of the state pair applied to h(s, x, v).

    Drift callables (s, x, v) default to zero; derivatives of h come from
    central finite differences, so h needs two continuous derivatives here.
    """
    s, x, v = (float(c) for c in point)
    ds = 1e-5 * max(1.0, abs(s))
    dx = 1e-5 * max(1.0, abs(x))
    dv = 1e-5 * max(1.0, abs(v))
    h0 = h(s, x, v)
    h_s = (h(s + ds, x, v) - h(s - ds, x, v)) / (2 * ds)
    h_x = (h(s, x + dx, v) - h(s, x - dx, v)) / (2 * dx)
    h_v = (h(s, x, v + dv) - h(s, x, v - dv)) / (2 * dv)
    h_xx = (h(s, x + dx, v) - 2 * h0 + h(s, x - dx, v)) / dx**2
    h_vv = (h(s, x, v + dv) - 2 * h0 + h(s, x, v - dv)) / dv**2
    h_xv = (h(s, x + dx, v + dv) - h(s, x + dx, v - dv) - h(s, x - dx, v + dv) + h(s, x - dx, v - dv)) / (4 * dx * dv)
    m1 = mu1(s, x, v) if mu1 is not None else 0.0
    m2 = mu2(s, x, v) if mu2 is not None else 0.0
    s1 = float(np.mean(per_fish(params.sigma1, params.n_fish)))
    s2 = float(np.mean(per_fish(params.sigma2, params.n_fish)))
    cross = 2.0 * _cross_coefficient(params, conventional_cross_term)
    return float(h_s + m1 * h_x + m2 * h_v + 0.5 * (s1**2 * h_xx + cross * h_xv + s2**2 * h_vv))


def generator_mc(params, h, point, dt, n, seed, mu1=None, mu2=None, conventional_cross_term=False):
    """Single-step Monte Carlo generator estimate (E_s[h(Y_{s+dt})] - h(Y_s))/dt."""
    if dt <= 0.0 or n < 2:
        raise ValidationError("need dt > 0 and n >= 2")
    s, x, v = (float(c) for c in point)
    chol = _noise_cholesky(params, conventional_cross_term)
    rng = substream(seed, DOMAIN_GENERATOR)
    inc = rng.standard_normal((n, 2)) @ chol.T * math.sqrt(dt)
    m1 = mu1(s, x, v) if mu1 is not None else 0.0
    m2 = mu2(s, x, v) if mu2 is not None else 0.0
    vals = h(s + dt, x + m1 * dt + inc[:, 0], v + m2 * dt + inc[:, 1])
    est = (float(np.mean(vals)) - h(s, x, v)) / dt
    stderr = float(np.std(vals, ddof=1)) / math.sqrt(n) / dt
    return est, stderr
