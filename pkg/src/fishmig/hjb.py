"""Quadratic-control dynamic-programming pipeline on a 2-D (x, v) grid:
the nonlinear and partially-linearized value-function right-hand sides, the
log transform between value and desirability, an explicit backward solver for
the linear desirability equation and the feedback-control field.

The desirability equation marched here is
  -Theta_s = -(W/omega) Theta + mu1 Theta_x + mu2 Theta_v
             + (1/2)[sigma1^2 Theta_xx + cross Theta_xv + sigma2^2 Theta_vv],
with cross = 2*corr*sigma1^3 as printed (or 2*corr*sigma1*sigma2 behind the
conventional_cross_term flag) and omega = R*(sigma1^2 + cross + sigma2^2)
built from the same cross coefficient.
"""

from dataclasses import dataclass

import numpy as np

from .errors import NumericalError, ValidationError
from .model import OMEGA_EPSILON

GRID_TAGS = ("phi-bar", "theta", "psi")


@dataclass
class ValueGrid:
    x: np.ndarray
    v: np.ndarray
    values: np.ndarray
    time: float = 0.0
    tag: str = "theta"

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=float)
        self.v = np.asarray(self.v, dtype=float)
        self.values = np.asarray(self.values, dtype=float)
        if self.tag not in GRID_TAGS:
            raise ValidationError(f"unknown grid tag {self.tag!r}")
        for axis in (self.x, self.v):
            if axis.ndim != 1 or axis.size < 3:
                raise ValidationError("grid axes must be 1-D with at least 3 nodes")
            steps = np.diff(axis)
            if np.any(steps <= 0.0) or not np.allclose(steps, steps[0], rtol=1e-9, atol=0.0):
                raise ValidationError("grid axes must be uniform and increasing")
        if self.values.shape != (self.x.size, self.v.size):
            raise ValidationError("values must have shape (nx, nv)")
        if not np.all(np.isfinite(self.values)):
            raise ValidationError("grid values must be finite")
        if self.tag == "theta" and not np.all(self.values > 0.0):
            raise ValidationError("theta grids must be strictly positive")

    @property
    def dx(self):
        return float(self.x[1] - self.x[0])

    @property
    def dv(self):
        return float(self.v[1] - self.v[0])

    def mesh(self):
        return np.meshgrid(self.x, self.v, indexing="ij")

    def with_values(self, values, time=None, tag=None):
        return ValueGrid(self.x, self.v, values, self.time if time is None else time, self.tag if tag is None else tag)


@dataclass
class HjbProblem:
    W: object            # running reward (s, X, V) -> array
    mu1: object          # control-stripped drifts (s, X, V) -> array
    mu2: object
    sigma1: float
    sigma2: float
    corr: float
    R: float
    terminal: ValueGrid = None
    conventional_cross_term: bool = False

    def __post_init__(self):
        if self.R <= 0.0:
            raise ValidationError("R must be positive")
        if not -1.0 < self.corr < 1.0:
            raise ValidationError("corr must lie in (-1, 1)")

    @property
    def cross(self):
        """Coefficient of the mixed second derivative (the full 2*rho*... factor)."""
        if self.conventional_cross_term:
            return 2.0 * self.corr * self.sigma1 * self.sigma2
        return 2.0 * self.corr * self.sigma1**3

    @property
    def omega(self):
        return self.R * (self.sigma1**2 + self.cross + self.sigma2**2)


def optimal_control_quadratic(phi_x, phi_v, R):
    if R <= 0.0:
        raise ValidationError("R must be positive")
    return (np.asarray(phi_x) + np.asarray(phi_v)) / R


def _one_sided_gradients(F, dx, dv):
    return np.gradient(F, dx, axis=0), np.gradient(F, dv, axis=1)


def _one_sided_second(F, dx, dv):
    Fxx = np.empty_like(F)
    Fxx[1:-1] = (F[2:] - 2 * F[1:-1] + F[:-2]) / dx**2
    Fxx[0], Fxx[-1] = Fxx[1], Fxx[-2]
    Fvv = np.empty_like(F)
    Fvv[:, 1:-1] = (F[:, 2:] - 2 * F[:, 1:-1] + F[:, :-2]) / dv**2
    Fvv[:, 0], Fvv[:, -1] = Fvv[:, 1], Fvv[:, -2]
    Fx = np.gradient(F, dx, axis=0)
    Fxv = np.gradient(Fx, dv, axis=1)
    return Fxx, Fvv, Fxv


def _rhs_terms(grid, problem):
    X, V = grid.mesh()
    s = grid.time
    F = grid.values
    Fx, Fv = _one_sided_gradients(F, grid.dx, grid.dv)
    Fxx, Fvv, Fxv = _one_sided_second(F, grid.dx, grid.dv)
    W = np.broadcast_to(np.asarray(problem.W(s, X, V), dtype=float), F.shape)
    m1 = np.broadcast_to(np.asarray(problem.mu1(s, X, V), dtype=float), F.shape)
    m2 = np.broadcast_to(np.asarray(problem.mu2(s, X, V), dtype=float), F.shape)
    diff = 0.5 * (problem.sigma1**2 * Fxx + problem.cross * Fxv + problem.sigma2**2 * Fvv)
    return W, m1, m2, Fx, Fv, diff


def hjb_rhs_nonlinear(grid, problem):
    """Right side of the full quadratic-control equation (equals -dPhi/ds)."""
    W, m1, m2, Fx, Fv, diff = _rhs_terms(grid, problem)
    R = problem.R
    quad = -(Fx + Fv) ** 2 / (2 * R) + Fx**2 / R + 2 * Fx * Fv / R + Fv**2 / R
    return W + quad + m1 * Fx + m2 * Fv + diff


def hjb_rhs_linearized(grid, problem):
    """Partially linearized right side: pure squares dropped, the mixed
    (2/R) Phi_x Phi_v product kept as printed."""
    W, m1, m2, Fx, Fv, diff = _rhs_terms(grid, problem)
    return W + 2 * Fx * Fv / problem.R + m1 * Fx + m2 * Fv + diff


def cole_hopf_forward(theta_grid, omega):
    if abs(omega) <= OMEGA_EPSILON:
        raise NumericalError("omega degenerate: log transform undefined")
    if np.any(theta_grid.values <= 0.0):
        raise ValidationError("desirability must be strictly positive")
    return theta_grid.with_values(-omega * np.log(theta_grid.values), tag="phi-bar")


def cole_hopf_inverse(phi_grid, omega):
    if abs(omega) <= OMEGA_EPSILON:
        raise NumericalError("omega degenerate: log transform undefined")
    return phi_grid.with_values(np.exp(-phi_grid.values / omega), tag="theta")


def stability_limit(problem, dx, dv, safety=0.25):
    """Largest admissible explicit step, safety * min(dx^2, dv^2) / D_max."""
    d_max = max(problem.sigma1**2, problem.sigma2**2, abs(problem.cross))
    if d_max == 0.0:
        return np.inf
    return safety * min(dx**2, dv**2) / d_max


def _neumann_derivatives(F, dx, dv):
    P = np.pad(F, 1, mode="reflect")
    Fx = (P[2:, 1:-1] - P[:-2, 1:-1]) / (2 * dx)
    Fv = (P[1:-1, 2:] - P[1:-1, :-2]) / (2 * dv)
    Fxx = (P[2:, 1:-1] - 2 * F + P[:-2, 1:-1]) / dx**2
    Fvv = (P[1:-1, 2:] - 2 * F + P[1:-1, :-2]) / dv**2
    Fxv = (P[2:, 2:] - P[2:, :-2] - P[:-2, 2:] + P[:-2, :-2]) / (4 * dx * dv)
    return Fx, Fv, Fxx, Fvv, Fxv


def solve_theta_backward(problem, terminal, s_start, s_end, n_time_steps, safety=0.25):
    """March the linear desirability equation from s_end back to s_start.

    Explicit Euler in reverse time with central differences and zero-gradient
    boundaries; refuses to run when the step exceeds the stability bound and
    fails if positivity is lost mid-march.
    """
    if s_end <= s_start:
        raise ValidationError("need s_end > s_start")
    if n_time_steps < 1:
        raise ValidationError("n_time_steps must be >= 1")
    if terminal.tag != "theta":
        raise ValidationError("terminal grid must be theta-tagged")
    dt = (s_end - s_start) / n_time_steps
    limit = stability_limit(problem, terminal.dx, terminal.dv, safety)
    if dt > limit:
        raise ValidationError(
            f"explicit step {dt:.3e} violates the stability bound {limit:.3e}; increase n_time_steps"
        )
    omega = problem.omega
    if abs(omega) <= OMEGA_EPSILON:
        raise NumericalError("omega degenerate: desirability equation undefined")

    X, V = terminal.mesh()
    theta = terminal.values.copy()
    for j in range(n_time_steps, 0, -1):
        s = s_start + j * dt
        Fx, Fv, Fxx, Fvv, Fxv = _neumann_derivatives(theta, terminal.dx, terminal.dv)
        W = np.asarray(problem.W(s, X, V), dtype=float)
        m1 = np.asarray(problem.mu1(s, X, V), dtype=float)
        m2 = np.asarray(problem.mu2(s, X, V), dtype=float)
        rhs = (
            -(W / omega) * theta
            + m1 * Fx
            + m2 * Fv
            + 0.5 * (problem.sigma1**2 * Fxx + problem.cross * Fxv + problem.sigma2**2 * Fvv)
        )
        theta = theta + dt * rhs
        if not np.all(np.isfinite(theta)):
            raise NumericalError(f"desirability diverged at time step {j}")
        if np.any(theta <= 0.0):
            raise NumericalError(f"desirability lost positivity at time step {j}")
    return terminal.with_values(theta, time=s_start)


def control_field_from_theta(theta_grid, omega, R):
    """Feedback control (Phi_x + Phi_v)/R evaluated from the desirability grid."""
    phi = cole_hopf_forward(theta_grid, omega)
    phi_x, phi_v = _one_sided_gradients(phi.values, phi.dx, phi.dv)
    return optimal_control_quadratic(phi_x, phi_v, R)
