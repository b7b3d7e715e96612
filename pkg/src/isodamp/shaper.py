"""Fractional-order phase shaper (1 + a s^q)/s^q = a + s^(-q).

The design flattens the open-loop phase of G = plant x controller around its
gain crossover. Bode's integral gives a closed-form estimate of the phase slope
of G there; the shaper's own slope must cancel it, while the phase margin after
shaping stays above a floor. The parameters are searched to maximize the
measured width of the flat-phase band.

For loops containing an integrator, k_s is the static gain of G with the
integrator factored out (lim s->0 of s^k G(s)).
"""

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import optimize

from .analysis import OpenLoop, margins
from .errors import (
    DesignInfeasibleError,
    InvalidStaticGainError,
    RealizationAccuracyError,
    ValidationError,
)
from .lti import RationalTF, phase_function

MAX_BAND_RATIO = 1000.0  # flat-band search stops at omega_gc * 1000
_SCAN_POINTS = 600


@dataclass(frozen=True)
class PhaseShaperParams:
    q: float
    a: float
    omega_gc: float

    def __post_init__(self):
        if not 0.0 <= self.q <= 1.0:
            raise ValidationError(f"shaper order q must lie in [0, 1], got {self.q}")
        if not (math.isfinite(self.a) and self.a > 0):
            raise ValidationError(f"shaper gain a must be > 0, got {self.a}")
        if not (math.isfinite(self.omega_gc) and self.omega_gc > 0):
            raise ValidationError("omega_gc must be > 0")

    def gain_condition(self):
        """1/a - omega_gc^q; the parameter set satisfies the gain condition when <= 0."""
        return 1.0 / self.a - self.omega_gc**self.q

    def to_dict(self):
        return {"q": self.q, "a": self.a, "omega_gc": self.omega_gc}


@dataclass(frozen=True)
class ShaperDesignConfig:
    phi_md: float = math.radians(30.0)
    flatness_tol: float = math.radians(5.0)
    omega_search: tuple = (1e-3, 1e3)
    max_evals: int = 2000
    residual_tol: float = 1e-3

    def __post_init__(self):
        if not 0 < self.phi_md < math.pi / 2:
            raise ValidationError("phi_md must lie in (0, pi/2)")
        if not self.flatness_tol > 0:
            raise ValidationError("flatness_tol must be > 0")
        lo, hi = self.omega_search
        if not 0 < lo < hi:
            raise ValidationError("omega_search must satisfy 0 < lo < hi")
        if self.max_evals < 50:
            raise ValidationError("max_evals must be >= 50")


@dataclass(frozen=True, eq=False)
class LoopContext:
    G: RationalTF
    omega_gc: float
    phi_m: float
    k_s: float

    def __post_init__(self):
        mag = abs(self.G(1j * self.omega_gc))
        if abs(mag - 1.0) > 1e-6:
            raise ValidationError(f"|G(j omega_gc)| = {mag:.9g}, expected 1 within 1e-6")


def static_gain(G):
    """lim s->0 s^k G(s), with k the number of integrators in G."""
    num, den = G.num, G.den
    k = 0
    while k < len(den) - 1 and den[len(den) - 1 - k] == 0.0:
        k += 1
    return float(num[-1] / den[len(den) - 1 - k])


def loop_context(G, omega_search=None):
    grid = None
    if omega_search is not None:
        lo, hi = omega_search
        grid = np.logspace(math.log10(lo), math.log10(hi), int(200 * math.log10(hi / lo)) + 1)
    m = margins(G, grid)
    return LoopContext(G, m.omega_gc, m.phi_m, static_gain(G))


def bode_phase_slope(ctx):
    """Bode-integral estimate of d arg G / d omega at omega_gc (rad per rad/s)."""
    if ctx.k_s == 0 or not math.isfinite(ctx.k_s):
        raise InvalidStaticGainError(f"static gain k_s must be finite and nonzero, got {ctx.k_s}")
    w = ctx.omega_gc
    return (ctx.phi_m - math.pi) / w + 2.0 / (math.pi * w) * math.log(abs(ctx.k_s))


def shaper_response(p, omega):
    """Exact a + (j omega)^(-q)."""
    w = np.asarray(omega, dtype=float)
    if np.any(w <= 0):
        raise ValidationError("omega must be > 0")
    return p.a + w ** (-p.q) * np.exp(-0.5j * np.pi * p.q)


def shaper_phase(p, omega):
    return np.angle(shaper_response(p, omega))


def shaper_phase_slope(p, omega):
    """Analytic d/d omega of arg shaper_response."""
    w = np.asarray(omega, dtype=float)
    q, a = p.q, p.a
    wq = w**q
    c, s = math.cos(q * math.pi / 2), math.sin(q * math.pi / 2)
    return a * q * wq * s / (w * (1 + 2 * a * wq * c + a * a * wq * wq))


def flatness_residual(p, ctx, omega=None):
    """Bode slope of G plus the shaper's phase slope, evaluated at omega (default omega_gc)."""
    w = ctx.omega_gc if omega is None else omega
    return bode_phase_slope(ctx) + float(shaper_phase_slope(p, w))


def _atan_term(p, w):
    x = p.a * w**p.q
    return math.atan2(x * math.sin(p.q * math.pi / 2), 1 + x * math.cos(p.q * math.pi / 2))


def phase_after_shaper(p, ctx):
    """Phase of shaper x G at omega_gc in closed form."""
    return ctx.phi_m - math.pi - p.q * math.pi / 2 + _atan_term(p, ctx.omega_gc)


def margin_constraint(p, ctx, phi_md):
    """<= 0 when the shaped loop keeps at least phi_md of phase at omega_gc."""
    return phi_md - ctx.phi_m + p.q * math.pi / 2 - _atan_term(p, ctx.omega_gc)


def shaper_open_loop(p):
    return OpenLoop(lambda w: shaper_response(p, w), lambda w: shaper_phase(p, w))


def shaped_open_loop(G, p):
    """Exact (fractional) shaper x G as an open-loop frequency function."""
    return OpenLoop.from_tf(G) * shaper_open_loop(p)


@dataclass(frozen=True)
class FlatBandReport:
    omega_lo: float
    omega_hi: float
    delta: float
    phase_margin: float
    omega_gc_shaped: float

    @property
    def decades(self):
        return math.log10(self.omega_hi / self.omega_lo)

    def to_dict(self):
        return {
            "omega_lo": self.omega_lo,
            "omega_hi": self.omega_hi,
            "delta": self.delta,
            "decades": self.decades,
            "phase_margin_deg": math.degrees(self.phase_margin),
            "omega_gc_shaped": self.omega_gc_shaped,
        }


class _FlatBand:
    """Measures the log-symmetric flat-phase band of shaper x G around omega_gc."""

    def __init__(self, G, omega_gc, tol):
        self.G = G
        self.w0 = omega_gc
        self.tol = tol
        self.x = np.linspace(0.0, math.log(MAX_BAND_RATIO), _SCAN_POINTS)
        self.w_hi = omega_gc * np.exp(self.x)
        self.w_lo = omega_gc * np.exp(-self.x)
        self.phase = phase_function(G)
        self.g0 = float(self.phase([omega_gc])[0])
        self.g_hi = self.phase(self.w_hi) - self.g0
        self.g_lo = self.phase(self.w_lo) - self.g0

    def _dev(self, p, w, g_rel):
        s = shaper_phase(p, w) - shaper_phase(p, self.w0)
        return np.abs(g_rel + s)

    def _exact_dev(self, p, w):
        g = self.phase([w])[0] - self.g0
        return float(self._dev(p, np.array([w]), g)[0])

    def width(self, p):
        """Largest log(1 + delta) with deviation < tol on both sides."""
        bad = (self._dev(p, self.w_hi, self.g_hi) >= self.tol) | (
            self._dev(p, self.w_lo, self.g_lo) >= self.tol
        )
        idx = np.flatnonzero(bad)
        if idx.size == 0:
            return self.x[-1]
        i = int(idx[0])
        if i == 0:
            return 0.0
        lo, hi = self.x[i - 1], self.x[i]

        def over(x):
            return max(
                self._exact_dev(p, self.w0 * math.exp(x)), self._exact_dev(p, self.w0 * math.exp(-x))
            ) >= self.tol

        for _ in range(30):
            mid = 0.5 * (lo + hi)
            if over(mid):
                hi = mid
            else:
                lo = mid
        return lo


def flat_band(G, p, tol=math.radians(5.0)):
    """FlatBandReport of the exact shaper x G around p.omega_gc."""
    fb = _FlatBand(G, p.omega_gc, tol)
    x = fb.width(p)
    m = margins(shaped_open_loop(G, p))
    return FlatBandReport(p.omega_gc / math.exp(x), p.omega_gc * math.exp(x), math.exp(x) - 1.0,
                          m.phi_m, m.omega_gc)


@dataclass(frozen=True)
class ShaperDesign:
    params: PhaseShaperParams
    band: FlatBandReport
    evaluations: int


def _constraints(q, a, ctx, cfg, slope):
    p = PhaseShaperParams(q, a, ctx.omega_gc)
    res = flatness_residual(p, ctx) / max(abs(slope), 1e-300)
    g22 = a * ctx.omega_gc**q
    return {
        "gain_condition": 1.0 / g22 - 1.0,  # <= 0
        "phase_margin": margin_constraint(p, ctx, cfg.phi_md),  # <= 0
        "flatness": res,  # == 0 within residual_tol
    }


def _feasible(c, cfg):
    return c["gain_condition"] <= 1e-6 and c["phase_margin"] <= 1e-6 and abs(c["flatness"]) <= cfg.residual_tol


def design_shaper(ctx, cfg=ShaperDesignConfig()):
    """Maximize the measured flat-phase band subject to the shaper constraints.

    Augmented Lagrangian over (q, log a) with Nelder-Mead inner searches,
    multi-started from a 6 x 6 grid. Returns a ShaperDesign.
    """
    lo, hi = cfg.omega_search
    if not lo < ctx.omega_gc < hi:
        raise ValidationError("omega_gc must lie inside cfg.omega_search")
    if ctx.phi_m < cfg.phi_md:
        raise DesignInfeasibleError(
            "phase_margin", f"unshaped margin {math.degrees(ctx.phi_m):.2f} deg < phi_md"
        )
    slope = bode_phase_slope(ctx)
    # the shaper slope q a w^q sin / (w (1 + 2 a w^q cos + a^2 w^2q)) lies in [0, 1/(2 w)]
    if not -cfg.residual_tol * abs(slope) <= -slope <= 0.5 / ctx.omega_gc + cfg.residual_tol * abs(slope):
        raise DesignInfeasibleError("flatness", _infeasibility_detail("flatness", ctx, slope))
    fb = _FlatBand(ctx.G, ctx.omega_gc, cfg.flatness_tol)
    w = ctx.omega_gc
    evals = [0]

    def width(q, a):
        evals[0] += 1
        return fb.width(PhaseShaperParams(q, a, w))

    candidates = []  # (width, q, a)

    def consider(q, a):
        c = _constraints(q, a, ctx, cfg, slope)
        if _feasible(c, cfg):
            candidates.append((width(q, a), q, a))
        return c

    # boundary order q = 0: a constant shaper, feasible only for an already flat loop
    consider(0.0, 1.0)

    def unpack(x):
        q = min(max(x[0], 0.0), 1.0)
        return q, math.exp(x[1])

    def aug_lagrangian(x, lam, mu):
        q, a = unpack(x)
        pen = 1e3 * (max(0.0, -x[0]) + max(0.0, x[0] - 1.0)) ** 2
        c = _constraints(q, a, ctx, cfg, slope)
        f = -width(q, a) / math.log(MAX_BAND_RATIO)
        h = float(c["flatness"])
        if not math.isfinite(h) or abs(h) > 1e100:
            return 1e30
        val = f + float(lam[0]) * h + 0.5 * mu * h * h
        for j, key in ((1, "gain_condition"), (2, "phase_margin")):
            g = c[key]
            val += (max(0.0, lam[j] + mu * g) ** 2 - lam[j] ** 2) / (2 * mu)
        val += pen
        return val if math.isfinite(val) else 1e30

    qs = np.linspace(0.05, 0.95, 6)
    starts = []
    for q in qs:
        for la in np.linspace(math.log(0.1), math.log(10.0), 6):
            a = math.exp(la) / w**q
            c = _constraints(q, a, ctx, cfg, slope)
            viol = abs(c["flatness"]) + max(0.0, c["gain_condition"]) + max(0.0, c["phase_margin"])
            starts.append((viol, q, math.log(a)))
    starts.sort()
    best_violation = None
    for viol0, q0, la0 in starts[:4]:
        if evals[0] >= cfg.max_evals:
            break
        x = np.array([q0, la0])
        lam = np.zeros(3)
        mu = 10.0
        for _ in range(8):
            budget = max(20, min(200, cfg.max_evals - evals[0]))
            if evals[0] >= cfg.max_evals:
                break
            res = optimize.minimize(
                aug_lagrangian, x, args=(lam.copy(), mu), method="Nelder-Mead",
                options={"maxfev": budget, "xatol": 1e-7, "fatol": 1e-9},
            )
            x = res.x
            q, a = unpack(x)
            c = _constraints(q, a, ctx, cfg, slope)
            lam[0] += mu * c["flatness"]
            lam[1] = max(0.0, lam[1] + mu * c["gain_condition"])
            lam[2] = max(0.0, lam[2] + mu * c["phase_margin"])
            if _feasible(c, cfg):
                break
            mu *= 4.0
        q, a = unpack(x)
        c = consider(q, a)
        viol = {
            "flatness": max(0.0, abs(c["flatness"]) - cfg.residual_tol),
            "gain_condition": max(0.0, c["gain_condition"]),
            "phase_margin": max(0.0, c["phase_margin"]),
        }
        if best_violation is None or sum(viol.values()) < sum(best_violation.values()):
            best_violation = viol

    if not candidates:
        binding = max(best_violation, key=best_violation.get) if best_violation else "flatness"
        detail = _infeasibility_detail(binding, ctx, slope)
        raise DesignInfeasibleError(binding, detail)

    top = max(c[0] for c in candidates)
    near = [c for c in candidates if c[0] >= top - 0.01 * max(top, 1e-12)]
    _, q, a = min(near, key=lambda c: (c[1], -c[0]))
    p = PhaseShaperParams(float(q), float(a), w)
    return ShaperDesign(p, flat_band(ctx.G, p, cfg.flatness_tol), evals[0])


def _infeasibility_detail(binding, ctx, slope):
    if binding == "flatness":
        # shaper slope is at most q tan(q pi/4)/(2 omega) <= 1/(2 omega) at q = 1
        return (f"Bode slope {slope:.4g} rad/(rad/s) exceeds the largest shaper phase slope "
                f"{0.5 / ctx.omega_gc:.4g} available at omega_gc")
    if binding == "phase_margin":
        return f"unshaped margin {math.degrees(ctx.phi_m):.2f} deg leaves no room for shaping"
    return "1/a <= omega_gc^q cannot be met together with the other constraints"


@dataclass(frozen=True)
class ApproxConfig:
    order: int = 1
    band_check: bool = True
    tol_deg: float = None  # default: 3 deg for order <= 2, 1 deg above

    def __post_init__(self):
        if int(self.order) != self.order or self.order < 1:
            raise ValidationError("approximation order must be an integer >= 1")

    @property
    def limit_deg(self):
        if self.tol_deg is not None:
            return self.tol_deg
        return 3.0 if self.order <= 2 else 1.0


def _bilinear(q, w0):
    """k (s + z)/(s + p) with |R(j w0)| = w0^-q, arg R(j w0) = -q pi/2, z p = w0^2."""
    r = 1.0 / math.tan((1.0 - q) * math.pi / 4.0)
    return w0 ** (-q) / r, w0 * r, w0 / r


def _oustaloup(q, w0, n):
    """3n interlaced zero/pole pairs over w0 * 10^(+-(1 + n/2)), unit-matched at w0."""
    N = 3 * n
    span = 10.0 ** (1.0 + n / 2.0)
    wb, wh = w0 / span, w0 * span
    k = np.arange(1, N + 1)
    # s^(-q): zeros sit above their poles
    wz = wb * (wh / wb) ** ((k - 0.5 + q / 2) / N)
    wp = wb * (wh / wb) ** ((k - 0.5 - q / 2) / N)
    s0 = 1j * w0
    g = w0 ** (-q) / abs(np.prod((s0 + wz) / (s0 + wp)))
    # roots are well separated on the negative real axis, so poly() is benign here
    return g, -wz, -wp


def rational_fractional(q, omega_gc, order=1):
    """Rational approximation of s^(-q) as a RationalTF."""
    if q == 0:
        return RationalTF.constant(1.0)
    if q == 1:
        return RationalTF([1.0], [1.0, 0.0])
    if order == 1:
        k, z, p = _bilinear(q, omega_gc)
        return RationalTF([k, k * z], [1.0, p])
    g, zs, ps = _oustaloup(q, omega_gc, order)
    return RationalTF(g * np.real(np.poly(zs)), np.real(np.poly(ps)))


def realization_error_deg(p, shaper_tf, band=3.0, n=400):
    """Worst phase deviation (deg) of a realized shaper from the exact one on [w/band, w*band]."""
    w = np.logspace(math.log10(p.omega_gc / band), math.log10(p.omega_gc * band), n)
    ratio = shaper_tf(1j * w) / shaper_response(p, w)
    return float(np.degrees(np.max(np.abs(np.angle(ratio)))))


def realize_shaper(p, approx=ApproxConfig()):
    """Rational a + R(s) with R(s) approximating s^(-q) around p.omega_gc."""
    R = rational_fractional(p.q, p.omega_gc, approx.order)
    shaper = RationalTF(np.polyadd(p.a * R.den, R.num), R.den)
    if approx.band_check and 0 < p.q < 1:
        err = realization_error_deg(p, shaper)
        if err > approx.limit_deg:
            raise RealizationAccuracyError(err, approx.limit_deg, approx.order)
    return shaper
