"""Random surface weight: truncated log-correlated field k(l), the metric
factor exp(gamma*k), the Q constant and conformal coordinate-change
bookkeeping.

The field is a truncated Fourier series on a circle parameter,
k(l) = sum_{n=1}^{L} (a_n cos(n l) + b_n sin(n l)) / sqrt(n), with a_n, b_n
i.i.d. standard normal, so Var[k(0)] equals the harmonic partial sum.
"""

import math

import numpy as np

from .errors import NumericalError, ValidationError
from .rng import DOMAIN_FIELD, substream

GAMMA_DEFAULT = math.sqrt(8.0 / 3.0)

# float64 exp() overflows just above 709
EXP_LIMIT = 700.0


class LqgField:
    """Frozen realization of the series field with its gamma.

    cos_coef[n-1] and sin_coef[n-1] hold the already-scaled coefficients
    a_n/sqrt(n) and b_n/sqrt(n).
    """

    def __init__(self, gamma, cos_coef, sin_coef, seed=None):
        if not 0.0 < gamma < 2.0:
            raise ValidationError(f"gamma must lie in (0, 2), got {gamma}")
        cos_coef = np.asarray(cos_coef, dtype=float)
        sin_coef = np.asarray(sin_coef, dtype=float)
        if cos_coef.shape != sin_coef.shape or cos_coef.ndim != 1 or cos_coef.size < 1:
            raise ValidationError("coefficient arrays must be equal-length 1-D, L >= 1")
        if not (np.all(np.isfinite(cos_coef)) and np.all(np.isfinite(sin_coef))):
            raise ValidationError("non-finite field coefficients")
        self.gamma = float(gamma)
        self.cos_coef = cos_coef
        self.sin_coef = sin_coef
        self.seed = seed

    @property
    def truncation(self):
        return self.cos_coef.size

    def to_dict(self):
        return {
            "gamma": self.gamma,
            "L": int(self.truncation),
            "seed": self.seed,
            "cos_coef": self.cos_coef.tolist(),
            "sin_coef": self.sin_coef.tolist(),
        }

    @classmethod
    def from_dict(cls, d):
        return cls(d["gamma"], d["cos_coef"], d["sin_coef"], seed=d.get("seed"))


def sample_field(gamma, L, seed):
    if L < 1:
        raise ValidationError(f"truncation L must be >= 1, got {L}")
    rng = substream(seed, DOMAIN_FIELD)
    n = np.arange(1, L + 1, dtype=float)
    a = rng.standard_normal(L) / np.sqrt(n)
    b = rng.standard_normal(L) / np.sqrt(n)
    return LqgField(gamma, a, b, seed=seed)


def eval_field(field, l):
    l = np.asarray(l, dtype=float)
    if not np.all(np.isfinite(l)):
        raise ValidationError("field evaluation point must be finite")
    n = np.arange(1, field.truncation + 1, dtype=float)
    phases = np.multiply.outer(l, n)
    out = np.cos(phases) @ field.cos_coef + np.sin(phases) @ field.sin_coef
    return float(out) if out.ndim == 0 else out


def metric_weight(field, l):
    expo = field.gamma * eval_field(field, l)
    if np.any(np.abs(expo) > EXP_LIMIT):
        raise NumericalError("metric weight exponent out of range")
    return np.exp(expo)


def q_constant(gamma):
    if gamma <= 0:
        raise ValidationError(f"gamma must be positive, got {gamma}")
    return 2.0 / gamma + gamma / 2.0


def coordinate_change(field, zeta, zeta_prime, gamma=None):
    """Return the transformed field callable l -> k(zeta(l)) + Q log|zeta'(l)|.

    field may be None for the flat case k == 0, in which case gamma must be
    given explicitly.
    """
    if field is None and gamma is None:
        raise ValidationError("need gamma when no field is given")
    q = q_constant(field.gamma if gamma is None else gamma)

    def transformed(l):
        deriv = np.asarray(zeta_prime(l), dtype=float)
        if np.any(deriv == 0.0):
            raise NumericalError("coordinate map has vanishing derivative at an evaluation point")
        base = eval_field(field, zeta(l)) if field is not None else 0.0
        return base + q * np.log(np.abs(deriv))

    return transformed
