"""Reduction of high-order stable models to FOPTD / SOPTD structures.

The H2 distance is approximated by the integral of the squared impulse-response
difference over a finite horizon; dead times are Pade-rationalized (order 4)
only inside that computation. The static gain K is pinned to the full model's
DC gain, so only the dynamic parameters are searched.
"""

import itertools
import math
from dataclasses import dataclass

import numpy as np
from scipy import optimize
from scipy.integrate import trapezoid

from .errors import InstabilityError, ReductionFailedError, ValidationError
from .lti import RationalTF, dc_gain, impulse_samples, rationalize, to_state_space

H2_PADE_ORDER = 4
T_GRID = (0.1, 0.25, 0.5, 1.0, 2.0)
ZETA_GRID = (0.7, 1.0, 1.5)
OMEGA_GRID = (0.5, 1.0, 2.0)
N_REFINE = 5


@dataclass(frozen=True)
class FoptdModel:
    """K/(T s + 1) e^(-L s)."""

    K: float
    T: float
    L: float = 0.0

    def __post_init__(self):
        if not (math.isfinite(self.K) and self.T > 0 and self.L >= 0):
            raise ValidationError(f"invalid FOPTD parameters K={self.K}, T={self.T}, L={self.L}")

    def to_tf(self):
        return RationalTF([self.K], [self.T, 1.0], self.L)

    def to_dict(self):
        return {"K": self.K, "T": self.T, "L": self.L}


@dataclass(frozen=True)
class SoptdModel:
    """K wn^2/(s^2 + 2 zeta wn s + wn^2) e^(-L s)."""

    K: float
    zeta: float
    omega_n: float
    L: float = 0.0

    def __post_init__(self):
        if not (math.isfinite(self.K) and self.zeta > 0 and self.omega_n > 0 and self.L >= 0):
            raise ValidationError(
                f"invalid SOPTD parameters K={self.K}, zeta={self.zeta}, "
                f"omega_n={self.omega_n}, L={self.L}"
            )

    def to_tf(self):
        w2 = self.omega_n**2
        return RationalTF([self.K * w2], [1.0, 2 * self.zeta * self.omega_n, w2], self.L)

    def to_dict(self):
        return {"K": self.K, "zeta": self.zeta, "omega_n": self.omega_n, "L": self.L}


def _check_stable(tf, label):
    p = tf.poles()
    if p.size and np.max(p.real) >= 0:
        raise InstabilityError(
            f"{label} model is unstable: pole(s) {p[p.real >= 0]} in the closed right half-plane"
        )


def slowest_time_constant(tf):
    p = tf.poles()
    return 0.0 if p.size == 0 else 1.0 / float(np.min(-p.real))


def _impulse(tf, n_samples, dt):
    ss = to_state_space(rationalize(tf, H2_PADE_ORDER))
    if ss.D != 0.0:
        raise ValidationError("h2_error needs strictly proper systems (impulse has a Dirac part)")
    return impulse_samples(ss, dt, n_samples)


def h2_error(full, reduced, horizon=30.0, dt=0.01):
    """Integral of the squared impulse-response difference over [0, horizon]."""
    _check_stable(full, "full")
    _check_stable(reduced, "reduced")
    tau = max(slowest_time_constant(full), slowest_time_constant(reduced))
    if horizon < 5 * tau:
        raise ValidationError(f"horizon {horizon:g} s is shorter than 5x the slowest time constant {tau:g} s")
    n = int(round(horizon / dt)) + 1
    e = _impulse(full, n, dt) - _impulse(reduced, n, dt)
    return float(trapezoid(e * e, dx=dt))


class _Objective:
    """Cached full-model impulse response; evaluates candidates in log-parameter space."""

    def __init__(self, full, build, horizon, dt):
        self.build = build
        self.dt = dt
        self.n = int(round(horizon / dt)) + 1
        self.h_full = _impulse(full, self.n, dt)

    def __call__(self, x):
        try:
            tf = self.build(np.exp(x)).to_tf()
        except ValidationError:
            return math.inf
        e = self.h_full - _impulse(tf, self.n, self.dt)
        val = float(trapezoid(e * e, dx=self.dt))
        return val if math.isfinite(val) else math.inf


def _reduce(full, build, grid, horizon, dt):
    _check_stable(full, "full")
    K = dc_gain(full)
    if not math.isfinite(K) or K == 0:
        raise ValidationError(f"full model needs a finite nonzero DC gain, got {K}")
    tau = slowest_time_constant(full)
    if horizon < 5 * tau:
        raise ValidationError(f"horizon {horizon:g} s is shorter than 5x the slowest time constant {tau:g} s")
    obj = _Objective(full, lambda p: build(K, p), horizon, dt)
    starts = [np.log(np.asarray(g, dtype=float)) for g in grid]
    scored = sorted(((obj(x), i) for i, x in enumerate(starts)), key=lambda t: t)
    best_f, best_x = scored[0][0], starts[scored[0][1]]
    for f0, i in scored[:N_REFINE]:
        if not math.isfinite(f0):
            continue
        res = optimize.minimize(
            obj, starts[i], method="Nelder-Mead",
            options={"xatol": 1e-9, "fatol": 1e-14, "maxiter": 4000, "maxfev": 4000},
        )
        if res.fun < best_f:
            best_f, best_x = float(res.fun), res.x
    if not math.isfinite(best_f):
        raise ReductionFailedError("no finite objective value from any start", best=None)
    return build(K, np.exp(best_x)), best_f


def reduce_foptd(full, horizon=30.0, dt=0.01):
    """FOPTD model (K pinned to the DC gain) minimizing the H2 surrogate over (T, L)."""
    grid = list(itertools.product(T_GRID, T_GRID))
    model, _ = _reduce(full, lambda K, p: FoptdModel(K, float(p[0]), float(p[1])), grid, horizon, dt)
    return model


def reduce_soptd(full, horizon=30.0, dt=0.01):
    """SOPTD model (K pinned to the DC gain) minimizing the H2 surrogate over (zeta, omega_n, L)."""
    grid = list(itertools.product(ZETA_GRID, OMEGA_GRID, T_GRID))
    model, _ = _reduce(full, lambda K, p: SoptdModel(K, float(p[0]), float(p[1]), float(p[2])), grid, horizon, dt)
    return model
