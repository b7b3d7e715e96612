"""Loop analysis: margins, sensitivity functions, closed-loop simulation,
transient metrics, iso-damping sweeps and step-back scenarios."""

import math
from dataclasses import dataclass, field
from typing import Callable, Mapping, Optional

import numpy as np
from scipy import linalg, optimize

from .errors import (
    ClosedLoopSingularityError,
    DivergenceError,
    ImproperSystemError,
    IsodampError,
    NoCrossoverError,
    UnknownOperatingPointError,
    ValidationError,
)
from .lti import (
    DEFAULT_GRID,
    FreqResponse,
    RationalTF,
    TimeSeries,
    cascade_from_roots,
    phase_function,
    factored,
    log_grid,
    rationalize,
    unity_feedback_response,
)

DEFAULT_DT = 0.005
DEFAULT_HORIZON = 30.0


@dataclass(frozen=True)
class OpenLoop:
    """Open-loop frequency function: complex response and a continuous phase."""

    response: Callable
    phase: Callable

    @classmethod
    def from_tf(cls, tf):
        return cls(lambda w: tf(1j * np.asarray(w, dtype=float)), phase_function(tf))

    def __mul__(self, other):
        if isinstance(other, RationalTF):
            other = OpenLoop.from_tf(other)
        return OpenLoop(
            lambda w: self.response(w) * other.response(w),
            lambda w: self.phase(w) + other.phase(w),
        )

    def sample(self, omegas):
        w = np.asarray(omegas, dtype=float)
        return FreqResponse(w, self.response(w), self.phase(w))


def as_open_loop(loop):
    if isinstance(loop, OpenLoop):
        return loop
    if isinstance(loop, RationalTF):
        return OpenLoop.from_tf(loop)
    if isinstance(loop, FreqResponse):
        return _interpolated(loop)
    raise ValidationError(f"cannot interpret {type(loop).__name__} as an open loop")


def _interpolated(fr):
    """Log-log magnitude and log-linear phase interpolation of sampled data."""
    lw = np.log(fr.omega)
    lm = np.log(fr.magnitude)

    def phase(w):
        return np.interp(np.log(w), lw, fr.phase)

    def response(w):
        return np.exp(np.interp(np.log(w), lw, lm)) * np.exp(1j * phase(w))

    return OpenLoop(response, phase)


@dataclass(frozen=True)
class Margins:
    omega_gc: float
    phi_m: float
    gain_margin: float
    omega_pc: Optional[float] = None
    crossings: tuple = ()

    @property
    def phi_m_deg(self):
        return math.degrees(self.phi_m)

    def to_dict(self):
        return {
            "omega_gc": self.omega_gc,
            "phi_m_deg": self.phi_m_deg,
            "gain_margin_db": self.gain_margin,
            "omega_pc": self.omega_pc,
            "crossings": list(self.crossings),
        }


def _wrap(x):
    return (x + np.pi) % (2 * np.pi) - np.pi


def _brent(f, lo, hi):
    # log-frequency root; xtol keeps the location to ~1e-12 relative
    x = optimize.brentq(lambda v: f(math.exp(v)), math.log(lo), math.log(hi), xtol=1e-13, rtol=1e-14)
    return math.exp(x)


def margins(loop, grid=None):
    """Gain/phase margins; the lowest gain crossover is reported and all are listed."""
    ol = as_open_loop(loop)
    w = log_grid(*DEFAULT_GRID) if grid is None else np.asarray(grid, dtype=float)
    if isinstance(loop, FreqResponse) and grid is None:
        w = np.asarray(loop.omega)
    with np.errstate(divide="ignore"):
        lm = np.log(np.abs(ol.response(w)))
    idx = np.flatnonzero(np.sign(lm[:-1]) * np.sign(lm[1:]) <= 0)
    crossings = []
    for i in idx:
        if lm[i] == 0.0:
            crossings.append(float(w[i]))
        elif lm[i + 1] != 0.0:
            crossings.append(_brent(lambda v: math.log(abs(ol.response(np.array([v]))[0])), w[i], w[i + 1]))
    crossings = sorted(set(crossings))
    if not crossings:
        raise NoCrossoverError(f"no gain crossover in [{w[0]:g}, {w[-1]:g}] rad/s")
    wgc = crossings[0]
    phi_m = float(_wrap(np.pi + ol.phase(np.array([wgc]))[0]))

    ph = ol.phase(w) + np.pi
    k = np.round(ph / (2 * np.pi))
    pc = None
    # a phase crossover is a zero of phase + pi (mod 2 pi) without a branch jump
    g = ph - 2 * np.pi * k
    for i in np.flatnonzero((np.sign(g[:-1]) != np.sign(g[1:])) & (k[:-1] == k[1:])):
        kk = k[i]
        pc = _brent(lambda v: ol.phase(np.array([v]))[0] + np.pi - 2 * np.pi * kk, w[i], w[i + 1])
        break
    if pc is None:
        gm = math.inf
    else:
        gm = -20 * math.log10(abs(ol.response(np.array([pc]))[0]))
    return Margins(wgc, phi_m, gm, pc, tuple(crossings))


@dataclass(frozen=True)
class SensitivityCurves:
    omega: np.ndarray
    S: np.ndarray
    T: np.ndarray

    @property
    def S_mag(self):
        return np.abs(self.S)

    @property
    def T_mag(self):
        return np.abs(self.T)


def sensitivity_curves(open_loop):
    """S = 1/(1+G) and T = G/(1+G) at the sampled frequencies."""
    if isinstance(open_loop, (RationalTF, OpenLoop)):
        raise ValidationError("pass sampled open-loop data (FreqResponse)")
    T = unity_feedback_response(open_loop)
    S = 1.0 / (1.0 + open_loop.value)
    return SensitivityCurves(open_loop.omega.copy(), S, T.value.copy())


def sensitivity_at(loop, omega):
    """(|S|, |T|) of an open loop at a single frequency."""
    g = as_open_loop(loop).response(np.array([float(omega)]))[0]
    if abs(1 + g) < 1e-12:
        raise ClosedLoopSingularityError(float(omega))
    return abs(1 / (1 + g)), abs(g / (1 + g))


@dataclass(frozen=True)
class ClosedLoopResult:
    output: TimeSeries
    controller_output: Optional[TimeSeries]
    stable: bool = True


def _roots(*tfs):
    k = 1.0
    zs, ps = [], []
    for tf in tfs:
        kk, z, p = factored(tf)
        k *= kk
        zs.append(z)
        ps.append(p)
    return k, np.concatenate(zs), np.concatenate(ps)


def _zoh_run(A, B, C, D, W, t0, dt):
    """Sampled response of x' = Ax + Bw, y = Cx + Dw with w held between samples."""
    n, m = B.shape
    if n:
        M = np.zeros((n + m, n + m))
        M[:n, :n] = A
        M[:n, n:] = B
        E = linalg.expm(M * dt)
        Ad, Bd = E[:n, :n], E[:n, n:]
    x = np.zeros(n)
    Y = np.empty((W.shape[0], C.shape[0]))
    with np.errstate(over="ignore", invalid="ignore"):
        for k, wk in enumerate(W):
            Y[k] = C @ x + D @ wk
            if n:
                x = Ad @ x + Bd @ wk
    bad = ~np.all(np.isfinite(Y), axis=1)
    if np.any(bad):
        i = int(np.argmax(bad))
        raise DivergenceError(i, t0 + i * dt)
    return Y


def _hurwitz(A):
    return bool(A.shape[0] == 0 or np.max(np.linalg.eigvals(A).real) < 0)


def closed_loop_sim(
    plant,
    controller,
    shaper=None,
    setpoint=None,
    disturbance=None,
    *,
    pade_order=1,
    gain=1.0,
    disturbance_at="input",
):
    """Unity negative feedback with forward path gain * shaper * controller * plant.

    Dead times are Pade-rationalized. The controller output is returned when the
    compensator gain * shaper * controller is proper; with an unfiltered
    derivative it is None and the output is computed from the loop transfer.
    """
    if setpoint is None:
        raise ValidationError("setpoint time series is required")
    if disturbance_at not in ("input", "output"):
        raise ValidationError("disturbance_at must be 'input' or 'output'")
    N = len(setpoint)
    r = np.asarray(setpoint.values, dtype=float)
    d = np.zeros(N)
    if disturbance is not None:
        if len(disturbance) != N or abs(disturbance.dt - setpoint.dt) > 1e-12:
            raise ValidationError("disturbance must share the setpoint's time grid")
        d = np.asarray(disturbance.values, dtype=float)
    comp = [controller] + ([shaper] if shaper is not None else [])
    for c in comp:
        if c.delay:
            raise ValidationError("controller and shaper must be delay-free")
    P = rationalize(plant, pade_order)
    kc, zc, pc = _roots(*comp)
    kc *= gain
    kp, zp, pp = factored(P)
    dt, t0 = setpoint.dt, setpoint.t0

    if len(zc) <= len(pc):
        sc = cascade_from_roots(kc, zc, pc)
        sp = cascade_from_roots(kp, zp, pp)
        Ac, Bc, Cc, Dc = sc.A, sc.B, sc.C, sc.D
        Ap, Bp, Cp, Dp = sp.A, sp.B, sp.C, sp.D
        den = 1.0 + Dp * Dc
        if abs(den) < 1e-12:
            raise ClosedLoopSingularityError(math.inf)
        nc, npl = sc.n_states, sp.n_states
        # inputs w = (r, d_in, d_out); outputs (y, u)
        Cy = np.hstack([Dp * Cc, Cp]) / den
        Dy = np.array([[Dp * Dc, Dp, 1.0]]) / den
        Cu = np.hstack([Cc, np.zeros((1, npl))]) - Dc * Cy
        Du = np.array([[Dc, 0.0, 0.0]]) - Dc * Dy
        E_r = np.array([[1.0, 0.0, 0.0]])
        E_d = np.array([[0.0, 1.0, 0.0]])
        A = np.zeros((nc + npl, nc + npl))
        A[:nc, :nc] = Ac
        A[nc:, nc:] = Ap
        A[:nc] -= Bc @ Cy
        A[nc:] += Bp @ Cu
        B = np.vstack([Bc @ (E_r - Dy), Bp @ (Du + E_d)])
        W = np.column_stack([r, d, np.zeros(N)] if disturbance_at == "input" else [r, np.zeros(N), d])
        Y = _zoh_run(A, B, np.vstack([Cy, Cu]), np.vstack([Dy, Du]), W, t0, dt)
        return ClosedLoopResult(TimeSeries(t0, dt, Y[:, 0]), TimeSeries(t0, dt, Y[:, 1]), _hurwitz(A))

    if disturbance is not None:
        raise ImproperSystemError(
            "compensator is improper; add a derivative filter to simulate disturbances"
        )
    z = np.concatenate([zc, zp])
    p = np.concatenate([pc, pp])
    sl = cascade_from_roots(kc * kp, z, p)
    den = 1.0 + sl.D
    if abs(den) < 1e-12:
        raise ClosedLoopSingularityError(math.inf)
    Cy = sl.C / den
    Dy = sl.D / den
    A = sl.A - sl.B @ Cy
    B = sl.B * (1.0 - Dy)
    Y = _zoh_run(A, B, Cy, np.array([[Dy]]), r[:, None], t0, dt)
    return ClosedLoopResult(TimeSeries(t0, dt, Y[:, 0]), None, _hurwitz(A))


@dataclass(frozen=True)
class TransientMetrics:
    undershoot_pct: float
    overshoot_pct: float
    rise_time_10_90: float
    settling_time_2pct: float
    steady_state_error_pct: float

    def to_dict(self):
        return {k: (v if math.isfinite(v) else None) for k, v in self.__dict__.items()}


def _first_crossing(t, z, level):
    idx = np.flatnonzero(z >= level)
    if idx.size == 0:
        return math.inf
    i = int(idx[0])
    if i == 0:
        return float(t[0])
    return float(t[i - 1] + (level - z[i - 1]) * (t[i] - t[i - 1]) / (z[i] - z[i - 1]))


def transient_metrics(y, y_initial, y_final_commanded):
    """Step-response metrics of y normalized to the commanded change.

    Times are measured from the first sample of y.
    """
    step = y_final_commanded - y_initial
    if step == 0:
        raise ValidationError("commanded step magnitude must be nonzero")
    v = np.asarray(y.values, dtype=float)
    t = y.t - y.t0
    z = (v - y_initial) / step
    beyond = max(0.0, float(z.max()) - 1.0) * 100.0
    reverse = max(0.0, -float(z.min())) * 100.0
    if step < 0:
        under, over = beyond, reverse
    else:
        under, over = reverse, beyond
    t10 = _first_crossing(t, z, 0.1)
    t90 = _first_crossing(t, z, 0.9)
    rise = t90 - t10 if math.isfinite(t90) else math.inf
    out = np.flatnonzero(np.abs(z - 1.0) > 0.02)
    if out.size == 0:
        settle = 0.0
    elif out[-1] == len(z) - 1:
        settle = math.inf
    else:
        i = int(out[-1])
        e0, e1 = abs(z[i] - 1.0), abs(z[i + 1] - 1.0)
        settle = float(t[i] + (e0 - 0.02) * (t[i + 1] - t[i]) / (e0 - e1))
    tail = v[-max(1, int(math.ceil(0.05 * len(v)))):]
    sse = abs(float(tail.mean()) - y_final_commanded) / abs(step) * 100.0
    return TransientMetrics(under, over, rise, settle, sse)


@dataclass(frozen=True)
class SweepCell:
    plant_index: int
    multiplier: float
    metrics: Optional[TransientMetrics]
    error: Optional[str] = None
    stable: Optional[bool] = None


@dataclass(frozen=True)
class SweepResult:
    cells: tuple

    def _values(self, attr):
        return [getattr(c.metrics, attr) for c in self.cells if c.metrics is not None]

    def spread(self, attr="undershoot_pct"):
        vals = self._values(attr)
        return max(vals) - min(vals) if vals else math.nan

    def column(self, attr):
        return [getattr(c.metrics, attr) if c.metrics is not None else math.nan for c in self.cells]

    def summary(self):
        return {
            "undershoot_spread_pct": self.spread("undershoot_pct"),
            "overshoot_spread_pct": self.spread("overshoot_pct"),
            "max_undershoot_pct": max(self._values("undershoot_pct"), default=math.nan),
            "failed_cells": sum(1 for c in self.cells if c.metrics is None),
        }


def step_setpoint(amplitude=-1.0, horizon=DEFAULT_HORIZON, dt=DEFAULT_DT):
    return TimeSeries.step(amplitude, horizon, dt)


def iso_damping_sweep(
    plants, controller, shaper, gain_multipliers, *, step=-1.0,
    horizon=DEFAULT_HORIZON, dt=DEFAULT_DT, pade_order=1,
):
    """Step-response metrics for every (plant, multiplier) pair, in input order."""
    plants = list(plants)
    gain_multipliers = list(gain_multipliers)
    if not plants or not gain_multipliers:
        raise ValidationError("plants and gain multipliers must be nonempty")
    sp = step_setpoint(step, horizon, dt)
    cells = []
    for i, P in enumerate(plants):
        for m in gain_multipliers:
            try:
                res = closed_loop_sim(P, controller, shaper, sp, pade_order=pade_order, gain=m)
                if not res.stable:
                    cells.append(SweepCell(i, float(m), None, "closed loop unstable", False))
                    continue
                met = transient_metrics(res.output, 0.0, step)
                cells.append(SweepCell(i, float(m), met, None, True))
            except IsodampError as exc:
                cells.append(SweepCell(i, float(m), None, str(exc)))
    return SweepResult(tuple(cells))


@dataclass(frozen=True)
class RodDropProfile:
    """Truncated ramp 0 -> drop_fraction over ramp_duration, starting at start_time."""

    drop_fraction: float = 0.3
    ramp_duration: float = 3.0
    start_time: float = 1.0

    def __post_init__(self):
        if not 0 <= self.drop_fraction <= 1:
            raise ValidationError("drop_fraction must lie in [0, 1]")
        if not self.ramp_duration > 0:
            raise ValidationError("ramp_duration must be > 0")
        if not self.start_time >= 0:
            raise ValidationError("start_time must be >= 0")

    def __call__(self, t):
        frac = np.clip((np.asarray(t, dtype=float) - self.start_time) / self.ramp_duration, 0.0, 1.0)
        return self.drop_fraction * frac


@dataclass(frozen=True)
class StepbackResult:
    power: TimeSeries
    controller_output: Optional[TimeSeries]
    setpoint: TimeSeries
    metrics: Optional[TransientMetrics]
    initial_power_pct: float
    stable: bool = True


def plant_for_power(family, initial_power_pct, interpolate=False):
    """Family member at this power level, or a gain-interpolated neighbour."""
    levels = sorted(family)
    for lvl in levels:
        if abs(lvl - initial_power_pct) < 1e-9:
            return family[lvl]
    if not interpolate or not levels[0] <= initial_power_pct <= levels[-1]:
        raise UnknownOperatingPointError(
            f"no model for {initial_power_pct:g}% power; known levels {levels}"
            + ("" if interpolate else " (enable interpolation for intermediate levels)")
        )
    gains = [_static_gain(family[lvl]) for lvl in levels]
    K = float(np.interp(initial_power_pct, levels, gains))
    nearest = min(levels, key=lambda lvl: abs(lvl - initial_power_pct))
    return family[nearest].scaled(K / _static_gain(family[nearest]))


def _static_gain(tf):
    return float(tf.num[-1] / tf.den[-1])


def stepback_scenario(
    family: Mapping,
    controller,
    shaper,
    profile,
    initial_power_pct,
    *,
    interpolate=False,
    horizon=DEFAULT_HORIZON,
    dt=DEFAULT_DT,
    pade_order=1,
    gain=1.0,
):
    """Closed-loop power trajectory for a rod-drop step-back from initial_power_pct."""
    plant = plant_for_power(family, initial_power_pct, interpolate)
    n = int(round(horizon / dt)) + 1
    t = dt * np.arange(n)
    drop = profile.drop_fraction * initial_power_pct
    r = TimeSeries(0.0, dt, -initial_power_pct * profile(t))
    res = closed_loop_sim(plant, controller, shaper, r, pade_order=pade_order, gain=gain)
    power = TimeSeries(0.0, dt, initial_power_pct + res.output.values)
    setpoint = TimeSeries(0.0, dt, initial_power_pct + r.values)
    metrics = None
    if drop > 0:
        metrics = transient_metrics(power, initial_power_pct, initial_power_pct - drop)
    return StepbackResult(power, res.controller_output, setpoint, metrics, float(initial_power_pct), res.stable)
