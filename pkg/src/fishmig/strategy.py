"""Closed-form single-fish strategy for the worked flocking ansatz.

The candidate test function is

  g = exp{ s lam1 v + (s lam lam2 / I) sum_j psi (x - x_j)(v - v_j)
           + lam3 sqrt(8/3) k }

with k the roughness field value at the configured boundary point. The
module carries two bundles of partial derivatives side by side: the true
calculus partials of g and the printed reference-neighbor bundle that the
assembled generator value f actually uses (the latter swaps sums for a
single reference neighbor j*, drops an s in the first-order x bracket,
leaves the sigma1^2 bracket unsquared and squares the sigma2 bracket whose
coefficient enters as the variance sigma2, not its square). The first-order
condition in u is solved in closed form and probed along four limiting
regimes; where the computed limit and the printed one disagree, both are
reported and flagged, never reconciled silently.
"""

import math
from dataclasses import dataclass, replace

import numpy as np

from .errors import NumericalError, ValidationError
from .feynman import ActionSpec
from .lqg import EXP_LIMIT, eval_field
from .model import ModelParams, RewardSpec, SchoolState, per_fish

GAMMA_LQG = math.sqrt(8.0 / 3.0)

STRATEGY_MODES = ("foc-consistent", "paper-verbatim")
F_SUB_MODES = ("default", "printed")


@dataclass
class Example1Context:
    params: ModelParams
    school: SchoolState
    field: object = None
    l_point: float = 0.0
    k_offset: float = 0.0
    ref_neighbor: np.ndarray = None
    mode: str = "foc-consistent"
    denom_epsilon: float = 1e-12

    def __post_init__(self):
        if self.mode not in STRATEGY_MODES:
            raise ValidationError(f"unknown strategy mode {self.mode!r}")
        n = self.school.n_fish
        if n < 2:
            raise ValidationError("the strategy needs at least two fish")
        if self.params.n_fish != n:
            raise ValidationError("params.n_fish must match the school size")
        if self.denom_epsilon <= 0.0:
            raise ValidationError("denom_epsilon must be positive")
        if self.ref_neighbor is None:
            self.ref_neighbor = nearest_neighbors(self.school.positions)
        self.ref_neighbor = np.asarray(self.ref_neighbor, dtype=int)
        if self.ref_neighbor.shape != (n,):
            raise ValidationError("ref_neighbor must list one index per fish")
        for i, j in enumerate(self.ref_neighbor):
            if j == i or not 0 <= j < n:
                raise ValidationError(f"ref_neighbor[{i}] must be a different fish index")

    @property
    def k_value(self):
        base = eval_field(self.field, self.l_point) if self.field is not None else 0.0
        return float(base) + self.k_offset


def nearest_neighbors(positions):
    """Index of the closest other fish for each fish; ties pick the lowest index."""
    x = np.asarray(positions, dtype=float)
    n = x.size
    if n < 2:
        raise ValidationError("need at least two fish")
    d = np.abs(x[:, None] - x[None, :])
    np.fill_diagonal(d, np.inf)
    return np.argmin(d, axis=1)


def _fish_scalars(ctx, i):
    p = ctx.params
    n = p.n_fish
    return {
        "rho": float(per_fish(p.discount, n)[i]),
        "alpha": float(per_fish(p.weight, n)[i]),
        "H": float(per_fish(p.survival, n)[i]),
        "psi": float(per_fish(p.comm_rate, n)[i]),
        "lam": float(per_fish(p.coupling, n)[i]),
        "lam1": float(per_fish(p.mult1, n)[i]),
        "lam2": float(per_fish(p.mult2, n)[i]),
        "lam3": float(per_fish(p.mult3, n)[i]),
        "s1": float(per_fish(p.sigma1, n)[i]),
        "s2var": float(per_fish(p.sigma2, n)[i]),
    }


def _sums(ctx, x, v, i):
    """Pairwise sums over j != i with fish i probed at (x, v)."""
    xo = np.delete(ctx.school.positions, i)
    vo = np.delete(ctx.school.velocities, i)
    return {
        "pv": float(np.sum((x - xo) * (v - vo))),
        "x": float(np.sum(x - xo)),
        "v": float(np.sum(v - vo)),
        "absxv": float(np.sum(np.abs(x - xo) * (v - vo))),
    }


def _exp_guarded(e):
    if e > EXP_LIMIT:
        raise NumericalError("ansatz exponent overflows")
    return math.exp(e)


def g_ansatz(ctx, s, x, v, i=0):
    """Value and true partial derivatives of the ansatz at fish i probed at (x, v)."""
    c = _fish_scalars(ctx, i)
    S = _sums(ctx, x, v, i)
    I = ctx.params.n_fish
    pair = c["lam"] * c["lam2"] / I * c["psi"]
    E = s * c["lam1"] * v + s * pair * S["pv"] + c["lam3"] * GAMMA_LQG * ctx.k_value
    g = _exp_guarded(E)
    Ex = s * pair * S["v"]
    Ev = s * c["lam1"] + s * pair * S["x"]
    Es = c["lam1"] * v + pair * S["pv"]
    Exv = s * pair * (I - 1)
    return {
        "g": g,
        "gs": g * Es,
        "gx": g * Ex,
        "gv": g * Ev,
        "gxx": g * Ex**2,
        "gvv": g * Ev**2,
        "gxv": g * (Ex * Ev + Exv),
    }


def printed_partials(ctx, s, x, v, i=0):
    """Reference-neighbor partial bundle exactly as the assembled f uses it.

    The first-order x bracket is s-less and keeps only the reference
    neighbor; the second-order x bracket regains the s but stays unsquared;
    the second-order v bracket is squared; the mixed bracket carries an
    extra unit inside.
    """
    c = _fish_scalars(ctx, i)
    S = _sums(ctx, x, v, i)
    I = ctx.params.n_fish
    j = int(ctx.ref_neighbor[i])
    xj = float(ctx.school.positions[j])
    vj = float(ctx.school.velocities[j])
    pair = c["lam"] * c["lam2"] / I * c["psi"]
    E = s * c["lam1"] * v + s * pair * S["pv"] + c["lam3"] * GAMMA_LQG * ctx.k_value
    g = _exp_guarded(E)
    bx = s * c["lam1"] + s * pair * (x - xj)
    return {
        "g": g,
        "gs": g * (c["lam1"] * v + pair * S["pv"]),
        "gx": g * (c["lam"] * c["lam2"] / I) * c["psi"] * (v - vj),
        "gv": g * bx,
        "gxx": g * s * pair * (v - vj),
        "gvv": g * bx**2,
        "gxv": g * (c["lam"] * c["lam2"] / I) * c["psi"] * (1.0 + bx),
    }


def mu2_interaction(ctx, s, x, v, i=0):
    """Distance-weighted velocity interaction (lam / I) sum_j psi |x - x_j| (v - v_j)."""
    c = _fish_scalars(ctx, i)
    S = _sums(ctx, x, v, i)
    return c["lam"] / ctx.params.n_fish * c["psi"] * S["absxv"]


def f_example(ctx, s, x, v, u, i=0, sub_mode="default"):
    """Assembled generator value for the ansatz at control u.

    sub_mode 'default' lets the control multiply the velocity-interaction
    block (so the first-order condition below is exactly df/du); 'printed'
    reproduces the published display where that block appears without u.
    """
    if sub_mode not in F_SUB_MODES:
        raise ValidationError(f"unknown sub_mode {sub_mode!r}")
    c = _fish_scalars(ctx, i)
    p = printed_partials(ctx, s, x, v, i)
    m2 = mu2_interaction(ctx, s, x, v, i)
    reward = math.exp(-c["rho"] * s) * c["alpha"] * c["H"] * x * v * u**2
    drift_v_block = p["gv"] * m2 * (u if sub_mode == "default" else 1.0)
    cross = 2.0 * ctx.params.corr * c["s1"] ** 3
    value = (
        reward
        + p["g"]
        + p["gs"]
        + p["gx"] * u * v
        + drift_v_block
        + 0.5 * (c["s1"] ** 2 * p["gxx"] + cross * p["gxv"] + c["s2var"] * p["gvv"])
    )
    if not np.isfinite(value):
        raise NumericalError("f value is not finite")
    return value


def example1_action_spec(ctx, i=0, sub_mode="default"):
    """ActionSpec whose generic f assembly reproduces f_example exactly."""
    if sub_mode not in F_SUB_MODES:
        raise ValidationError(f"unknown sub_mode {sub_mode!r}")
    c = _fish_scalars(ctx, i)

    def mu1(s, x, v, u):
        return u * v

    if sub_mode == "default":
        def mu2(s, x, v, u):
            return u * mu2_interaction(ctx, s, x, v, i)
    else:
        def mu2(s, x, v, u):
            return mu2_interaction(ctx, s, x, v, i)

    def partials(s, x, v):
        return printed_partials(ctx, s, x, v, i)

    return ActionSpec(
        reward=RewardSpec(kind="example1"),
        mu1=mu1,
        mu2=mu2,
        sigma1=c["s1"],
        sigma2=math.sqrt(c["s2var"]),
        g_partials=partials,
    )


def foc_residual(ctx, s, x, v, u, i=0):
    """Printed first-order condition in u; identically df/du of the default f."""
    c = _fish_scalars(ctx, i)
    p = printed_partials(ctx, s, x, v, i)
    m2 = mu2_interaction(ctx, s, x, v, i)
    j = int(ctx.ref_neighbor[i])
    vj = float(ctx.school.velocities[j])
    t1 = 2.0 * u * math.exp(-c["rho"] * s) * c["alpha"] * c["H"] * x * v
    t2 = p["g"] * (c["lam"] * c["lam2"] / ctx.params.n_fish) * c["psi"] * v * (v - vj)
    t3 = p["gv"] * m2
    return t1 + t2 + t3


def closed_form_strategy(ctx, s, i=0, x=None, v=None):
    """Stationary control of the first-order condition at fish i.

    foc-consistent mode solves the printed condition exactly; paper-verbatim
    mode evaluates the published display, whose leading brace term drops the
    communication rate and flips the velocity difference and overall sign.
    """
    c = _fish_scalars(ctx, i)
    if x is None:
        x = float(ctx.school.positions[i])
    if v is None:
        v = float(ctx.school.velocities[i])
    j = int(ctx.ref_neighbor[i])
    vj = float(ctx.school.velocities[j])
    p = printed_partials(ctx, s, x, v, i)
    g = p["g"]
    m2 = mu2_interaction(ctx, s, x, v, i)
    denom = 2.0 * c["alpha"] * c["H"] * x * v
    if abs(denom) <= ctx.denom_epsilon:
        raise NumericalError("strategy singular: weighted x*v denominator vanishes")
    t3 = (p["gv"] / g) * m2
    if ctx.mode == "foc-consistent":
        t2 = (c["lam"] * c["lam2"] / ctx.params.n_fish) * c["psi"] * v * (v - vj)
        return -math.exp(c["rho"] * s) * g * (t2 + t3) / denom
    t2 = (c["lam"] * c["lam2"] / ctx.params.n_fish) * v * (vj - v)
    return math.exp(c["rho"] * s) * g * (t2 + t3) / denom


def strategy_report(ctx, s, i=0):
    """Control value plus the pieces it is built from, JSON-ready."""
    c = _fish_scalars(ctx, i)
    x = float(ctx.school.positions[i])
    v = float(ctx.school.velocities[i])
    j = int(ctx.ref_neighbor[i])
    vj = float(ctx.school.velocities[j])
    p = printed_partials(ctx, s, x, v, i)
    m2 = mu2_interaction(ctx, s, x, v, i)
    if ctx.mode == "foc-consistent":
        t2 = (c["lam"] * c["lam2"] / ctx.params.n_fish) * c["psi"] * v * (v - vj)
    else:
        t2 = (c["lam"] * c["lam2"] / ctx.params.n_fish) * v * (vj - v)
    return {
        "fish": int(i),
        "time": float(s),
        "mode": ctx.mode,
        "u_star": float(closed_form_strategy(ctx, s, i)),
        "g": float(p["g"]),
        "t2": float(t2),
        "t3": float(p["gv"] / p["g"] * m2),
        "denominator": float(2.0 * c["alpha"] * c["H"] * x * v),
        "ref_neighbor": j,
        "k_value": float(ctx.k_value),
    }


def _coincident_printed_value(ctx, s, i, kind):
    """Published limiting displays: 'positions' gives the equal-position
    control, 'velocities' the equal-velocity claim."""
    c = _fish_scalars(ctx, i)
    x = float(ctx.school.positions[i])
    v = float(ctx.school.velocities[i])
    j = int(ctx.ref_neighbor[i])
    vj = float(ctx.school.velocities[j])
    denom = 2.0 * c["alpha"] * c["H"] * x * v
    if abs(denom) <= ctx.denom_epsilon:
        raise NumericalError("strategy singular: weighted x*v denominator vanishes")
    expo = c["rho"] * s + s * c["lam1"] * v + c["lam3"] * GAMMA_LQG * ctx.k_value
    if kind == "positions":
        lead = (c["lam"] * c["lam2"] / ctx.params.n_fish) * v * (vj - v)
        return _exp_guarded(expo) * lead / denom
    return _exp_guarded(expo) / denom


def case_diagnostics(ctx, s, i=0):
    """Probe the closed-form control along four limiting regimes and report
    computed-versus-printed values without reconciling disagreements."""
    report = {"fish": int(i), "time": float(s), "mode": ctx.mode}
    tol = 1e-10

    # survival weight scaling: the control is exactly inversely proportional
    h_values = [1.0, 0.1, 0.01, 0.001]
    base_h = per_fish(ctx.params.survival, ctx.params.n_fish).copy()
    u_h = []
    for hval in h_values:
        hv = base_h.copy()
        hv[i] = hval
        ctx_h = replace(ctx, params=replace(ctx.params, survival=hv), ref_neighbor=ctx.ref_neighbor)
        u_h.append(closed_form_strategy(ctx_h, s, i))
    ratio_err = 0.0
    for a in range(len(h_values) - 1):
        expected = h_values[a + 1] / h_values[a]
        got = u_h[a] / u_h[a + 1] if u_h[a + 1] != 0.0 else math.nan
        ratio_err = max(ratio_err, abs(got - expected) / abs(expected))
    report["survival_scaling"] = {
        "h_values": h_values,
        "controls": [float(u) for u in u_h],
        "magnitude_increasing": bool(all(abs(u_h[a + 1]) > abs(u_h[a]) for a in range(len(u_h) - 1))),
        "inverse_ratio_error": float(ratio_err),
        "exact": bool(ratio_err <= tol),
    }

    # equal positions: collapse the spread and compare with the printed limit
    eps_path = [1.0, 0.5, 0.1, 0.01, 0.0]
    x_i = float(ctx.school.positions[i])
    u_eps = []
    for e in eps_path:
        pos = x_i + e * (ctx.school.positions - x_i)
        school = SchoolState(ctx.school.time, pos, ctx.school.velocities)
        ctx_e = replace(ctx, school=school, ref_neighbor=ctx.ref_neighbor)
        u_eps.append(closed_form_strategy(ctx_e, s, i))
    printed_pos = _coincident_printed_value(ctx, s, i, "positions")
    psi = _fish_scalars(ctx, i)["psi"]
    expected = printed_pos * psi if ctx.mode == "foc-consistent" else printed_pos
    scale = max(abs(expected), 1e-300)
    report["equal_positions"] = {
        "spread_path": eps_path,
        "controls": [float(u) for u in u_eps],
        "computed_limit": float(u_eps[-1]),
        "printed_value": float(printed_pos),
        "comm_rate": float(psi),
        "limit_over_printed": float(u_eps[-1] / printed_pos) if printed_pos != 0.0 else math.nan,
        "matches_printed_times_comm_rate": bool(abs(u_eps[-1] - expected) <= tol * scale),
    }

    # equal velocities: the computed control vanishes, the printed claim does not
    v_i = float(ctx.school.velocities[i])
    u_veps = []
    for e in eps_path:
        vel = v_i + e * (ctx.school.velocities - v_i)
        school = SchoolState(ctx.school.time, ctx.school.positions, vel)
        ctx_e = replace(ctx, school=school, ref_neighbor=ctx.ref_neighbor)
        u_veps.append(closed_form_strategy(ctx_e, s, i))
    printed_vel = _coincident_printed_value(ctx, s, i, "velocities")
    report["equal_velocities"] = {
        "spread_path": eps_path,
        "controls": [float(u) for u in u_veps],
        "computed_limit": float(u_veps[-1]),
        "printed_claim": float(printed_vel),
        "computed_is_zero": bool(u_veps[-1] == 0.0),
        "discrepancy": bool(abs(u_veps[-1] - printed_vel) > tol * max(1.0, abs(printed_vel))),
    }

    # roughness offset: the control picks up an exact multiplicative factor
    lam3 = _fish_scalars(ctx, i)["lam3"]
    u_base = closed_form_strategy(ctx, s, i)
    offsets = [0.5, 1.0, 2.0]
    rows = []
    worst = 0.0
    for dk in offsets:
        ctx_k = replace(ctx, k_offset=ctx.k_offset + dk, ref_neighbor=ctx.ref_neighbor)
        u_k = closed_form_strategy(ctx_k, s, i)
        factor = math.exp(lam3 * GAMMA_LQG * dk)
        err = abs(u_k - u_base * factor) / max(abs(u_base * factor), 1e-300)
        worst = max(worst, err)
        rows.append({"offset": dk, "control": float(u_k), "factor": float(factor)})
    report["roughness_offset"] = {
        "base_control": float(u_base),
        "offsets": rows,
        "multiplicative_error": float(worst),
        "exact": bool(worst <= tol),
        "monotone_in_offset": bool(
            lam3 <= 0.0
            or all(abs(rows[a + 1]["control"]) > abs(rows[a]["control"]) for a in range(len(rows) - 1))
        ),
    }
    return report
