"""PID gains, their transfer functions and LQR-based PID tuning.

The LQR construction works on the delay-free plant. With a derivative gain
kd = rho*T/K the FOPTD loop becomes T' e' + e = -K (kp e + ki z), z = int e,
T' = T (1 + rho). In the state x = (z, e) this is

    x' = [[0, 1], [0, -1/T']] x + [0, -K/T'] v,    v = kp e + ki z,

and Q = diag(q1, q2), R = 1 chosen from the return-difference identity place
the optimal closed loop at s^2 + 2 zeta_d omega_d s + omega_d^2.
"""

import math
from dataclasses import dataclass

import numpy as np
from scipy import linalg

from .errors import SpecInfeasibleError, ValidationError
from .lti import RationalTF
from .reduction import FoptdModel, SoptdModel

DEFAULT_TAU_F = 0.01


@dataclass(frozen=True)
class PidGains:
    """Parallel PID kp + ki/s + kd s."""

    kp: float
    ki: float
    kd: float = 0.0

    def __post_init__(self):
        vals = (self.kp, self.ki, self.kd)
        if not all(math.isfinite(v) and v >= 0 for v in vals):
            raise ValidationError(f"PID gains must be finite and >= 0, got {vals}")
        if self.kp == 0 and self.ki == 0:
            raise ValidationError("at least one of kp, ki must be nonzero")

    def to_dict(self):
        return {"kp": self.kp, "ki": self.ki, "kd": self.kd}


def pid_tf(g, tau_f=None):
    """(kd s^2 + kp s + ki)/s; with tau_f the derivative becomes kd s/(tau_f s + 1)."""
    if tau_f is None:
        if g.ki == 0:
            return RationalTF([g.kd, g.kp], [1.0])
        return RationalTF([g.kd, g.kp, g.ki], [1.0, 0.0])
    if not tau_f > 0:
        raise ValidationError("derivative filter time constant must be > 0")
    if g.ki == 0:
        return RationalTF([g.kp * tau_f + g.kd, g.kp], [tau_f, 1.0])
    num = [g.kp * tau_f + g.kd, g.kp + g.ki * tau_f, g.ki]
    return RationalTF(num, [tau_f, 1.0, 0.0])


@dataclass(frozen=True)
class LqrSpec:
    zeta_d: float
    omega_d: float
    derivative_weight: float = 0.2

    def __post_init__(self):
        if not (math.isfinite(self.zeta_d) and self.zeta_d > 0):
            raise ValidationError("zeta_d must be finite and > 0")
        if not (math.isfinite(self.omega_d) and self.omega_d > 0):
            raise ValidationError("omega_d must be finite and > 0")
        if not (math.isfinite(self.derivative_weight) and self.derivative_weight >= 0):
            raise ValidationError("derivative_weight must be finite and >= 0")


def _first_order_view(plant):
    if isinstance(plant, FoptdModel):
        return plant.K, plant.T
    if isinstance(plant, SoptdModel):
        # dominant first-order equivalent: same DC gain and mean residence time
        return plant.K, 2 * plant.zeta / plant.omega_n
    raise ValidationError(f"lqr_pid needs a FoptdModel or SoptdModel, got {type(plant).__name__}")


def feasible_omega_range(zeta_d, T_eff):
    """Interval of omega_d for which the LQR weights are nonnegative (empty -> None)."""
    if 2 * zeta_d**2 - 1 <= 0:
        return None
    return (1.0 / (T_eff * math.sqrt(2 * (2 * zeta_d**2 - 1))), math.inf)


def lqr_weights(K, T_eff, spec):
    """(q1, q2) placing the LQR closed loop at the requested characteristic polynomial."""
    c = K / T_eff
    w, z = spec.omega_d, spec.zeta_d
    q1 = w**4 / c**2
    q2 = (2 * w**2 * (2 * z**2 - 1) - 1 / T_eff**2) / c**2
    return q1, q2


def lqr_pid(plant, spec):
    """PID gains from an LQR design on the (integral of error, error) state."""
    K, T = _first_order_view(plant)
    if K <= 0:
        raise ValidationError("plant gain must be > 0")
    if plant.to_tf().poles().real.max() >= 0:
        raise ValidationError("plant must be stable")
    rho = spec.derivative_weight
    T_eff = T * (1 + rho)
    q1, q2 = lqr_weights(K, T_eff, spec)
    if q2 < 0:
        raise SpecInfeasibleError(
            f"spec (zeta_d={spec.zeta_d:g}, omega_d={spec.omega_d:g}) needs a negative state weight",
            feasible_range=feasible_omega_range(spec.zeta_d, T_eff),
        )
    c = K / T_eff
    A = np.array([[0.0, 1.0], [0.0, -1.0 / T_eff]])
    B = np.array([[0.0], [-c]])
    P = linalg.solve_continuous_are(A, B, np.diag([q1, q2]), np.eye(1))
    Kf = (B.T @ P)[0]
    # v = -Kf x with v = ki z + kp e and B carrying the minus sign
    ki, kp = float(-Kf[0]), float(-Kf[1])
    kd = rho * T / K
    # round-off guard at the feasibility boundary
    kp = 0.0 if abs(kp) < 1e-12 * max(1.0, ki) else kp
    return PidGains(kp, ki, kd)
