"""Path-space machinery: discretized action increments with multiplier
residuals and a surface-roughness weight, the scalar f that generates the
damped wave solution, shifted-Gaussian kernel integrals, a localized window
propagator for wave grids and a Monte Carlo desirability estimator.
"""

import math
from dataclasses import dataclass

import numpy as np

from .errors import NumericalError, ValidationError
from .lqg import EXP_LIMIT, metric_weight
from .model import evaluate_reward, per_fish
from .rng import DOMAIN_FEYNMAN, substream


def _diffusion_value(spec_entry, s, x, v, u):
    if callable(spec_entry):
        return np.asarray(spec_entry(s, x, v, u), dtype=float)
    return np.asarray(spec_entry, dtype=float)


@dataclass
class ActionSpec:
    """Everything needed to price one step of a controlled path.

    mu1/mu2 take (s, x, v, u); sigma1/sigma2 may be constants or callables of
    the same signature. g is the candidate smooth test function; g_partials,
    when given, overrides finite differencing and must return a dict with keys
    g, gs, gx, gv, gxx, gxv, gvv. l_of_s maps path time to the boundary
    coordinate of the roughness field (identity when omitted).
    """

    reward: object
    mu1: object
    mu2: object
    sigma1: object = 0.0
    sigma2: object = 0.0
    lam1: float = 0.0
    lam2: float = 0.0
    lam3: float = 0.0
    field: object = None
    g: object = None
    g_partials: object = None
    l_of_s: object = None

    def boundary_point(self, s):
        if self.l_of_s is None:
            return s
        return self.l_of_s(s)


def action_increment(spec, params, s, state, controls, dt, noise, increments=None):
    """One-step action: discounted reward, two multiplier residuals and the
    roughness weight, each integrated with a left endpoint over [s, s+dt].

    noise is an (n_fish, 2) standard-normal draw; increments, when supplied,
    are the realized (dx, dv) arrays. On-dynamics increments make both
    residuals vanish identically.
    """
    if dt <= 0.0:
        raise ValidationError("dt must be positive")
    x = state.positions
    v = state.velocities
    n = state.n_fish
    u = np.broadcast_to(np.asarray(controls, dtype=float), (n,))
    noise = np.asarray(noise, dtype=float)
    if noise.shape != (n, 2):
        raise ValidationError(f"noise must have shape ({n}, 2)")

    m1 = np.broadcast_to(np.asarray(spec.mu1(s, x, v, u), dtype=float), (n,))
    m2 = np.broadcast_to(np.asarray(spec.mu2(s, x, v, u), dtype=float), (n,))
    s1 = np.broadcast_to(_diffusion_value(spec.sigma1, s, x, v, u), (n,))
    s2 = np.broadcast_to(_diffusion_value(spec.sigma2, s, x, v, u), (n,))
    db1 = math.sqrt(dt) * noise[:, 0]
    db2 = math.sqrt(dt) * noise[:, 1]
    if increments is None:
        dx = m1 * dt + s1 * db1
        dv = m2 * dt + s2 * db2
    else:
        dx = np.broadcast_to(np.asarray(increments[0], dtype=float), (n,))
        dv = np.broadcast_to(np.asarray(increments[1], dtype=float), (n,))

    h = np.broadcast_to(np.asarray(evaluate_reward(spec.reward, s, x, v, u), dtype=float), (n,))
    rho = per_fish(params.discount, n)
    alpha = per_fish(params.weight, n)
    H = per_fish(params.survival, n)
    weight = np.exp(-rho * s) * alpha * H

    rough = 1.0
    if spec.field is not None:
        rough = metric_weight(spec.field, spec.boundary_point(s))
    out = (
        weight * h * dt
        + spec.lam1 * (dx - m1 * dt - s1 * db1)
        + spec.lam2 * (dv - m2 * dt - s2 * db2)
        + spec.lam3 * rough * dt
    )
    if not np.all(np.isfinite(out)):
        raise NumericalError("action increment is not finite")
    return out


def _fd_partials(g, s, x, v):
    hs = 1e-5 * max(1.0, abs(s))
    hx = 1e-5 * max(1.0, abs(x))
    hv = 1e-5 * max(1.0, abs(v))
    g0 = g(s, x, v)
    return {
        "g": g0,
        "gs": (g(s + hs, x, v) - g(s - hs, x, v)) / (2 * hs),
        "gx": (g(s, x + hx, v) - g(s, x - hx, v)) / (2 * hx),
        "gv": (g(s, x, v + hv) - g(s, x, v - hv)) / (2 * hv),
        "gxx": (g(s, x + hx, v) - 2 * g0 + g(s, x - hx, v)) / hx**2,
        "gvv": (g(s, x, v + hv) - 2 * g0 + g(s, x, v - hv)) / hv**2,
        "gxv": (
            g(s, x + hx, v + hv) - g(s, x + hx, v - hv) - g(s, x - hx, v + hv) + g(s, x - hx, v - hv)
        )
        / (4 * hx * hv),
    }


def check_c2(g, s, x, v, tol=1e-3):
    """Crude smoothness probe: second differences must be stable under
    halving the step, which fails near kinks and jumps in the derivatives."""
    out = []
    for hx, hv in ((1e-3, 1e-3), (5e-4, 5e-4)):
        hx *= max(1.0, abs(x))
        hv *= max(1.0, abs(v))
        gxx = (g(s, x + hx, v) - 2 * g(s, x, v) + g(s, x - hx, v)) / hx**2
        gvv = (g(s, x, v + hv) - 2 * g(s, x, v) + g(s, x, v - hv)) / hv**2
        gxv = (
            g(s, x + hx, v + hv) - g(s, x + hx, v - hv) - g(s, x - hx, v + hv) + g(s, x - hx, v - hv)
        ) / (4 * hx * hv)
        out.append((gxx, gvv, gxv))
    scale = max(1.0, *(abs(t) for t in out[0]), *(abs(t) for t in out[1]))
    return all(abs(a - b) / scale <= tol for a, b in zip(out[0], out[1]))


def f_function(spec, params, s, x, v, u, fish=0, conventional_cross_term=False):
    """Scalar generator of the damped wave: discounted reward plus the test
    function pushed through drift and diffusion.

      f = e^{-rho s} alpha H h + g + g_s + g_x mu1 + g_v mu2
          + (1/2)[sigma1^2 g_xx + 2 corr sigma1^3 g_xv + sigma2^2 g_vv]
    """
    if spec.g is None and spec.g_partials is None:
        raise ValidationError("f_function needs g or g_partials")
    p = spec.g_partials(s, x, v) if spec.g_partials is not None else _fd_partials(spec.g, s, x, v)
    n = params.n_fish
    rho = float(per_fish(params.discount, n)[fish])
    alpha = float(per_fish(params.weight, n)[fish])
    H = float(per_fish(params.survival, n)[fish])
    h = float(np.asarray(evaluate_reward(spec.reward, s, x, v, u), dtype=float).reshape(-1)[0])
    m1 = float(np.asarray(spec.mu1(s, x, v, u), dtype=float).reshape(-1)[0])
    m2 = float(np.asarray(spec.mu2(s, x, v, u), dtype=float).reshape(-1)[0])
    s1 = float(np.asarray(_diffusion_value(spec.sigma1, s, x, v, u)).reshape(-1)[0])
    s2 = float(np.asarray(_diffusion_value(spec.sigma2, s, x, v, u)).reshape(-1)[0])
    if conventional_cross_term:
        cross = 2.0 * params.corr * s1 * s2
    else:
        cross = 2.0 * params.corr * s1**3
    value = (
        math.exp(-rho * s) * alpha * H * h
        + p["g"]
        + p["gs"]
        + p["gx"] * m1
        + p["gv"] * m2
        + 0.5 * (s1**2 * p["gxx"] + cross * p["gxv"] + s2**2 * p["gvv"])
    )
    if not np.isfinite(value):
        raise NumericalError("f value is not finite")
    return value


@dataclass
class KernelBlock:
    """One fish's saddle data: hessian is the half-curvature block (each
    entry is half the raw second partial of f), gradient is minus the raw
    first partials, epsilon the kernel time step."""

    hessian: np.ndarray
    gradient: np.ndarray
    epsilon: float
    eta1: float = 1.0
    eta2: float = 1.0

    def __post_init__(self):
        self.hessian = np.asarray(self.hessian, dtype=float)
        self.gradient = np.asarray(self.gradient, dtype=float)
        if self.hessian.shape != (2, 2):
            raise ValidationError("hessian must be 2x2")
        if self.gradient.shape != (2,):
            raise ValidationError("gradient must be a 2-vector")
        scale = max(1.0, float(np.max(np.abs(self.hessian))))
        if abs(self.hessian[0, 1] - self.hessian[1, 0]) > 1e-10 * scale:
            raise ValidationError("hessian must be symmetric")
        if self.epsilon <= 0.0:
            raise ValidationError("epsilon must be positive")
        if self.eta1 <= 0.0 or self.eta2 <= 0.0:
            raise ValidationError("window constants must be positive")


def shifted_gaussian_integral(block, mode="exact"):
    """Closed form of  integral exp{eps (V.m - m.H m)} dm  over the plane,
    with V = -gradient and H the half-curvature block.

    exact mode:  pi / (eps sqrt(det H)) * exp((eps/4) V.H^-1 V)
    paper mode:  pi / sqrt(eps det H)   * exp  (same exponent)
    The two differ by exactly sqrt(eps).
    """
    if mode not in ("exact", "paper"):
        raise ValidationError(f"unknown mode {mode!r}")
    H = block.hessian
    eps = block.epsilon
    try:
        np.linalg.cholesky(H)
    except np.linalg.LinAlgError:
        raise NumericalError("kernel block not positive definite")
    det = float(np.linalg.det(H))
    V = -block.gradient
    expo = 0.25 * eps * float(V @ np.linalg.solve(H, V))
    if expo > EXP_LIMIT:
        raise NumericalError("kernel integral overflows")
    if mode == "exact":
        return math.pi / (eps * math.sqrt(det)) * math.exp(expo)
    return math.pi / math.sqrt(eps * det) * math.exp(expo)


def _window_half_widths(eps, eta1, eta2, x, v):
    if np.any(x <= 0.0) or np.any(v <= 0.0):
        raise ValidationError("localization window undefined for nonpositive x or v")
    return np.sqrt(eta1 * eps / x), np.sqrt(eta2 * eps / v)


def transition_step(psi, f_eval, eps, eta1=1.0, eta2=1.0, mode="exact", quad_order=24):
    """Propagate a nonnegative wave grid by one kernel step of width eps.

    Each node (x, v) integrates exp(-eps f) * psi over the shrinking window
    |xi_1| <= sqrt(eta1 eps / x), |xi_2| <= sqrt(eta2 eps / v) with
    Gauss-Legendre quadrature. exact mode divides by the window integral of
    the local quadratic model of f (so f == 0 reproduces the local average
    and a constant f scales it by exp(-eps c)); paper mode divides by the
    closed-form normalizer pi / sqrt(eps |det half-Hessian|).
    Grid axes must be strictly positive for the windows to make sense.
    """
    if eps <= 0.0:
        raise ValidationError("eps must be positive")
    if np.any(psi.values < 0.0):
        raise ValidationError("wave grid must be nonnegative")
    x = psi.x
    v = psi.v
    w1, w2 = _window_half_widths(eps, eta1, eta2, x, v)

    nodes, weights = np.polynomial.legendre.leggauss(quad_order)
    # query points per node, shape (nx, nv, q, q)
    X4 = x[:, None, None, None] + w1[:, None, None, None] * nodes[None, None, :, None]
    V4 = v[None, :, None, None] + w2[None, :, None, None] * nodes[None, None, None, :]
    X4, V4 = np.broadcast_arrays(X4, V4)

    F4 = np.asarray(f_eval(X4, V4), dtype=float)
    Xc = np.clip(X4, x[0], x[-1])
    Vc = np.clip(V4, v[0], v[-1])
    psi4 = _bilinear(psi, Xc, Vc)
    wprod = weights[:, None] * weights[None, :]
    arg = -eps * F4
    if np.max(arg) > EXP_LIMIT:
        raise NumericalError("window integrand overflows")
    numer = np.einsum("ijkl,kl->ij", np.exp(arg) * psi4, wprod)
    numer *= w1[:, None] * w2[None, :]

    if mode == "exact":
        norm = _local_model_normalizer(f_eval, x, v, w1, w2, eps, nodes, wprod)
    elif mode == "paper":
        norm = _closed_form_normalizer(f_eval, x, v, w1, w2, eps)
    else:
        raise ValidationError(f"unknown mode {mode!r}")
    out = numer / norm
    if not np.all(np.isfinite(out)):
        raise NumericalError("transition step produced non-finite values")
    out = np.maximum(out, 0.0)
    return psi.with_values(out, time=psi.time + eps, tag="psi")


def _bilinear(grid, Xq, Vq):
    ix = np.clip(np.searchsorted(grid.x, Xq) - 1, 0, grid.x.size - 2)
    iv = np.clip(np.searchsorted(grid.v, Vq) - 1, 0, grid.v.size - 2)
    tx = (Xq - grid.x[ix]) / grid.dx
    tv = (Vq - grid.v[iv]) / grid.dv
    F = grid.values
    return (
        F[ix, iv] * (1 - tx) * (1 - tv)
        + F[ix + 1, iv] * tx * (1 - tv)
        + F[ix, iv + 1] * (1 - tx) * tv
        + F[ix + 1, iv + 1] * tx * tv
    )


def _node_curvature(f_eval, x, v, w1, w2):
    """Finite-difference gradient and second partials of f at every node,
    stepped at an eighth of the local window half-width."""
    h1 = (w1 / 8.0)[:, None]
    h2 = (w2 / 8.0)[None, :]
    X = x[:, None] + np.zeros((1, v.size))
    V = v[None, :] + np.zeros((x.size, 1))
    f0 = np.asarray(f_eval(X, V), dtype=float)
    fpx = np.asarray(f_eval(X + h1, V), dtype=float)
    fmx = np.asarray(f_eval(X - h1, V), dtype=float)
    fpv = np.asarray(f_eval(X, V + h2), dtype=float)
    fmv = np.asarray(f_eval(X, V - h2), dtype=float)
    fpp = np.asarray(f_eval(X + h1, V + h2), dtype=float)
    fpm = np.asarray(f_eval(X + h1, V - h2), dtype=float)
    fmp = np.asarray(f_eval(X - h1, V + h2), dtype=float)
    fmm = np.asarray(f_eval(X - h1, V - h2), dtype=float)
    gx = (fpx - fmx) / (2 * h1)
    gv = (fpv - fmv) / (2 * h2)
    fxx = (fpx - 2 * f0 + fmx) / h1**2
    fvv = (fpv - 2 * f0 + fmv) / h2**2
    fxv = (fpp - fpm - fmp + fmm) / (4 * h1 * h2)
    return f0, gx, gv, fxx, fvv, fxv


def _local_model_normalizer(f_eval, x, v, w1, w2, eps, nodes, wprod):
    _f0, gx, gv, fxx, fvv, fxv = _node_curvature(f_eval, x, v, w1, w2)
    X1 = w1[:, None, None, None] * nodes[None, None, :, None]
    X2 = w2[None, :, None, None] * nodes[None, None, None, :]
    model = (
        gx[:, :, None, None] * X1
        + gv[:, :, None, None] * X2
        + 0.5 * (fxx[:, :, None, None] * X1**2 + 2 * fxv[:, :, None, None] * X1 * X2 + fvv[:, :, None, None] * X2**2)
    )
    arg = -eps * model
    if np.max(arg) > EXP_LIMIT:
        raise NumericalError("normalizer integrand overflows")
    # the model is centered at f0, so the constant damping exp(-eps f0)
    # survives in the output as the propagator's local decay
    return np.einsum("ijkl,kl->ij", np.exp(arg), wprod) * (w1[:, None] * w2[None, :])


def _closed_form_normalizer(f_eval, x, v, w1, w2, eps):
    _, _, _, fxx, fvv, fxv = _node_curvature(f_eval, x, v, w1, w2)
    det = 0.5 * fxx * 0.5 * fvv - (0.5 * fxv) ** 2
    if np.any(det <= 0.0):
        raise NumericalError("half-curvature block not positive definite on the grid")
    return math.pi / np.sqrt(eps * det)


def feynman_kac_estimate(problem, point, tau, n_paths, dt, seed, terminal=None):
    """Monte Carlo desirability at (s0, x0, v0): forward correlated Euler
    paths to time tau, weighted by exp(-integral W/omega) with a trapezoid
    accumulation of W along each path. Returns (estimate, stderr).
    """
    s0, x0, v0 = point
    if tau <= s0:
        raise ValidationError("need tau > start time")
    if dt <= 0.0 or n_paths < 2:
        raise ValidationError("need dt > 0 and n_paths >= 2")
    omega = problem.omega
    if abs(omega) <= 1e-12:
        raise NumericalError("omega degenerate: weight exponent undefined")
    n_steps = max(1, int(round((tau - s0) / dt)))
    step = (tau - s0) / n_steps

    s1, s2, c = problem.sigma1, problem.sigma2, 0.5 * problem.cross
    if c == 0.0:
        chol = np.diag([abs(s1), abs(s2)])
    else:
        cov = np.array([[s1**2, c], [c, s2**2]])
        try:
            chol = np.linalg.cholesky(cov)
        except np.linalg.LinAlgError:
            raise NumericalError(
                "state covariance not positive definite: need sigma2 >= |corr|*sigma1^2"
            )

    rng = substream(seed, DOMAIN_FEYNMAN)
    X = np.full(n_paths, float(x0))
    V = np.full(n_paths, float(v0))
    Wcur = np.broadcast_to(np.asarray(problem.W(s0, X, V), dtype=float), X.shape).copy()
    acc = np.zeros(n_paths)
    for k in range(n_steps):
        s = s0 + k * step
        Z = rng.standard_normal((n_paths, 2)) @ chol.T * math.sqrt(step)
        Xn = X + np.asarray(problem.mu1(s, X, V), dtype=float) * step + Z[:, 0]
        Vn = V + np.asarray(problem.mu2(s, X, V), dtype=float) * step + Z[:, 1]
        Wnext = np.broadcast_to(np.asarray(problem.W(s + step, Xn, Vn), dtype=float), X.shape)
        acc += 0.5 * (Wcur + Wnext) * step
        X, V = Xn, Vn
        Wcur = Wnext.copy()
    arg = -acc / omega
    if np.max(arg) > EXP_LIMIT:
        raise NumericalError("path weight overflows; rescale the weight or omega")
    vals = np.exp(arg)
    if terminal is not None:
        vals = vals * np.asarray(terminal(X, V), dtype=float)
    if not np.all(np.isfinite(vals)):
        raise NumericalError("path weights are not finite; rescale the weight or omega")
    est = float(np.mean(vals))
    stderr = float(np.std(vals, ddof=1) / math.sqrt(n_paths))
    return est, stderr


def wave_evolution(psi0, f_eval, s, u=0.0):
    """Damped wave at time s >= 0: exp(-s f(s, x, v, u)) times the initial
    grid. f_eval is called pointwise, so scalar-only evaluators work."""
    if s < 0.0:
        raise ValidationError("s must be nonnegative")
    F = np.empty((psi0.x.size, psi0.v.size))
    for ix, x in enumerate(psi0.x):
        for iv, v in enumerate(psi0.v):
            F[ix, iv] = f_eval(s, float(x), float(v), u)
    arg = -s * F
    if np.max(arg) > EXP_LIMIT:
        raise NumericalError("wave amplitude overflows")
    return psi0.with_values(np.exp(arg) * psi0.values, time=s, tag="psi")


def wave_pde_residual(psi_of_s, f_eval, s, probes, u=0.0, delta_s=1e-4):
    """Max over probes of |dPsi/ds + f Psi + s f_s Psi| with central
    differences in s; psi_of_s maps (s, x, v) to a wave value."""
    worst = 0.0
    for x, v in probes:
        dpsi = (psi_of_s(s + delta_s, x, v) - psi_of_s(s - delta_s, x, v)) / (2 * delta_s)
        f0 = f_eval(s, x, v, u)
        fs = (f_eval(s + delta_s, x, v, u) - f_eval(s - delta_s, x, v, u)) / (2 * delta_s)
        psi = psi_of_s(s, x, v)
        worst = max(worst, abs(dpsi + f0 * psi + s * fs * psi))
    return worst
