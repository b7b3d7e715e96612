"""Polynomial/transfer-function algebra, frequency response, Pade rationalization
and zero-order-hold simulation for SISO LTI systems with an optional dead time.

Polynomials are numpy arrays of real coefficients in descending powers of s.
All containers are immutable; every function is pure.
"""

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from scipy import linalg

from .errors import (
    ClosedLoopSingularityError,
    DelayNotRationalizedError,
    DivergenceError,
    ImproperSystemError,
    IndeterminateGainError,
    SingularFrequencyError,
    ValidationError,
)

#: Bode analysis grid: lo, hi (rad/s) and points per decade.
DEFAULT_GRID = (1e-3, 1e3, 200)
SINGULAR_TOL = 1e-12


def _readonly(a, dtype=float):
    a = np.array(a, dtype=dtype)
    a.setflags(write=False)
    return a


def trim(coeffs, tol=0.0):
    """Drop leading coefficients with magnitude <= tol. Zero polynomial -> [0.]."""
    c = np.atleast_1d(np.asarray(coeffs, dtype=float))
    nz = np.flatnonzero(np.abs(c) > tol)
    if nz.size == 0:
        return np.zeros(1)
    return c[nz[0]:].copy()


def log_grid(lo=DEFAULT_GRID[0], hi=DEFAULT_GRID[1], per_decade=DEFAULT_GRID[2]):
    """Logarithmic frequency grid including both end points."""
    n = int(round(per_decade * math.log10(hi / lo))) + 1
    return np.logspace(math.log10(lo), math.log10(hi), n)


@dataclass(frozen=True, eq=False)
class RationalTF:
    """num(s)/den(s) * exp(-delay*s)."""

    num: np.ndarray
    den: np.ndarray
    delay: float = 0.0

    def __post_init__(self):
        num = trim(self.num)
        den = trim(self.den)
        if not np.all(np.isfinite(num)) or not np.all(np.isfinite(den)):
            raise ValidationError("transfer-function coefficients must be finite")
        if not np.any(den):
            raise ValidationError("denominator is identically zero")
        delay = float(self.delay)
        if not (delay >= 0.0 and math.isfinite(delay)):
            raise ValidationError(f"delay must be finite and >= 0, got {self.delay!r}")
        object.__setattr__(self, "num", _readonly(num))
        object.__setattr__(self, "den", _readonly(den))
        object.__setattr__(self, "delay", delay)

    @classmethod
    def constant(cls, k):
        return cls([k], [1.0])

    @property
    def order(self):
        return len(self.den) - 1

    def is_proper(self):
        return len(trim(self.num)) <= len(self.den) or not np.any(self.num)

    def is_strictly_proper(self):
        return len(self.num) < len(self.den) or not np.any(self.num)

    def poles(self):
        return np.roots(self.den)

    def zeros(self):
        return np.roots(self.num) if np.any(self.num) else np.array([])

    def is_stable(self):
        p = self.poles()
        return bool(p.size == 0 or np.max(p.real) < 0)

    def rational(self):
        """Copy without the dead time."""
        return RationalTF(self.num, self.den, 0.0)

    def scaled(self, k):
        return RationalTF(k * self.num, self.den, self.delay)

    def __call__(self, s):
        s = np.asarray(s, dtype=complex)
        out = np.polyval(self.num, s) / np.polyval(self.den, s)
        if self.delay:
            out = out * np.exp(-self.delay * s)
        return out

    def __mul__(self, other):
        if isinstance(other, RationalTF):
            return series(self, other)
        if np.isscalar(other):
            return self.scaled(float(other))
        return NotImplemented

    __rmul__ = __mul__

    def to_dict(self):
        return {"num": self.num.tolist(), "den": self.den.tolist(), "delay": self.delay}

    @classmethod
    def from_dict(cls, d):
        return cls(d["num"], d["den"], d.get("delay", 0.0))

    def __repr__(self):
        fmt = lambda c: "[" + ", ".join(f"{x:.6g}" for x in c) + "]"
        tail = f", delay={self.delay:g}" if self.delay else ""
        return f"RationalTF(num={fmt(self.num)}, den={fmt(self.den)}{tail})"


class FreqSample(NamedTuple):
    omega: float
    magnitude: float
    phase: float


@dataclass(frozen=True, eq=False)
class FreqResponse:
    """Complex response sampled on a frequency grid, with unwrapped phase (rad)."""

    omega: np.ndarray
    value: np.ndarray
    phase: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "omega", _readonly(self.omega))
        object.__setattr__(self, "value", _readonly(self.value, complex))
        object.__setattr__(self, "phase", _readonly(self.phase))

    @classmethod
    def from_values(cls, omega, value):
        value = np.asarray(value, dtype=complex)
        return cls(omega, value, np.unwrap(np.angle(value)))

    @property
    def magnitude(self):
        return np.abs(self.value)

    def __len__(self):
        return len(self.omega)

    def __iter__(self):
        for w, m, p in zip(self.omega, self.magnitude, self.phase):
            yield FreqSample(float(w), float(m), float(p))

    def __getitem__(self, i):
        return FreqSample(float(self.omega[i]), float(abs(self.value[i])), float(self.phase[i]))

    def __mul__(self, other):
        if not np.array_equal(self.omega, other.omega):
            raise ValidationError("frequency responses are on different grids")
        return FreqResponse(self.omega, self.value * other.value, self.phase + other.phase)


def _check_grid(omegas):
    w = np.atleast_1d(np.asarray(omegas, dtype=float))
    if w.size == 0 or np.any(w <= 0) or np.any(np.diff(w) <= 0):
        raise ValidationError("frequencies must be positive and strictly increasing")
    return w


def _rational_phase(num, den, w, value):
    # Sum of per-root angles is continuous in omega irrespective of grid density;
    # shift by 2*pi*k so the first sample sits on the principal branch.
    jw = 1j * w
    ph = np.full(w.shape, np.angle(num[0] / den[0]) if np.any(num) else 0.0)
    if np.any(num):
        for z in np.roots(num):
            ph += np.angle(jw - z)
    for p in np.roots(den):
        ph -= np.angle(jw - p)
    if np.any(num):
        ph += 2 * np.pi * np.round((np.angle(value[0]) - ph[0]) / (2 * np.pi))
    return ph


def freq_response(tf, omegas):
    """Evaluate tf on j*omega; dead time enters exactly as phase -omega*L."""
    w = _check_grid(omegas)
    jw = 1j * w
    d = np.polyval(tf.den, jw)
    bad = np.abs(d) < SINGULAR_TOL
    if np.any(bad):
        raise SingularFrequencyError(float(w[np.argmax(bad)]))
    rat = np.polyval(tf.num, jw) / d
    phase = _rational_phase(tf.num, tf.den, w, rat) - w * tf.delay
    return FreqResponse(w, rat * np.exp(-jw * tf.delay), phase)


def continuous_phase(tf, omegas):
    """Unwrapped phase (rad) anchored on the principal branch as omega -> 0+.

    Unlike freq_response the branch does not depend on the first grid point, so
    single-frequency evaluations agree with dense-grid ones.
    """
    return phase_function(tf)(omegas)


def phase_function(tf):
    """continuous_phase with the roots computed once; returns omega -> radians."""
    z = tf.zeros()
    p = tf.poles()
    lead = np.angle(tf.num[0] / tf.den[0]) if np.any(tf.num) else 0.0
    delay = tf.delay

    def root_sum(jw):
        ph = np.full(np.shape(jw), lead)
        for r in z:
            ph = ph + np.angle(jw - r)
        for r in p:
            ph = ph - np.angle(jw - r)
        return ph

    ph0 = root_sum(np.array([1e-12j]))[0]
    shift = 2 * np.pi * np.round((np.angle(np.exp(1j * ph0)) - ph0) / (2 * np.pi))

    def phase(omegas):
        w = np.atleast_1d(np.asarray(omegas, dtype=float))
        if np.any(w <= 0):
            raise ValidationError("frequencies must be positive")
        return root_sum(1j * w) + shift - w * delay

    return phase


def factored(tf):
    """(gain, zeros, poles) with gain = num[0]/den[0]."""
    return float(tf.num[0] / tf.den[0]), tf.zeros(), tf.poles()


def _split_roots(r, tol=1e-9):
    """Real roots and one representative (Im > 0) of each conjugate pair."""
    r = np.asarray(r, dtype=complex)
    is_real = np.abs(r.imag) <= tol * np.maximum(1.0, np.abs(r))
    return np.sort(r[is_real].real), r[~is_real & (r.imag > 0)]


def _series_ss(first, second):
    n1, n2 = first.n_states, second.n_states
    A = np.zeros((n1 + n2, n1 + n2))
    A[:n1, :n1] = first.A
    A[n1:, n1:] = second.A
    A[n1:, :n1] = second.B @ first.C
    B = np.vstack([first.B, second.B * first.D])
    C = np.hstack([second.D * first.C, second.C])
    return StateSpace(A, B, C, second.D * first.D)


def cascade_realization(tf):
    """Series connection of first/second-order sections built from the roots.

    Better conditioned than the companion form when roots spread over many decades.
    """
    if tf.delay:
        raise DelayNotRationalizedError("rationalize the dead time (pade_delay) first")
    if not tf.is_proper():
        raise ImproperSystemError(f"improper system: deg num {len(tf.num) - 1} > deg den {tf.order}")
    if not np.any(tf.num):
        return StateSpace(np.zeros((0, 0)), np.zeros(0), np.zeros(0), 0.0)
    return cascade_from_roots(*factored(tf))


def cascade_from_roots(k, z, p):
    """Cascade realization of k * prod(s - z) / prod(s - p); needs len(z) <= len(p)."""
    if len(z) > len(p):
        raise ImproperSystemError(f"improper system: {len(z)} zeros > {len(p)} poles")
    zr, zc = _split_roots(z)
    pr, pc = _split_roots(p)
    zr, zc, pr = list(zr), list(zc), list(pr)
    # pole groups: complex pairs, then real pairs where a complex zero pair needs a home
    groups = [[c, np.conj(c)] for c in pc]
    for _ in range(len(zc) - len(pc)):
        groups.append([pr.pop(), pr.pop()])
    groups += [[r] for r in pr]
    slots = [[] for _ in groups]
    two = [i for i, g in enumerate(groups) if len(g) == 2]
    for c, i in zip(zc, two):
        slots[i] = [c, np.conj(c)]
    for r in zr:
        i = next(i for i, g in enumerate(groups) if len(slots[i]) < len(g))
        slots[i].append(r)
    if not groups:
        return StateSpace(np.zeros((0, 0)), np.zeros(0), np.zeros(0), k)
    ss = None
    for g, zs in zip(groups, slots):
        num = np.real(np.poly(zs)) if zs else np.array([1.0])
        sec = to_state_space(RationalTF(num, np.real(np.poly(g))))
        ss = sec if ss is None else _series_ss(ss, sec)
    return StateSpace(ss.A, ss.B, k * ss.C, k * ss.D)


def series(a, b):
    """Cascade without cancellation; delays add."""
    return RationalTF(np.polymul(a.num, b.num), np.polymul(a.den, b.den), a.delay + b.delay)


def feedback(forward, feedback_path=None):
    """forward / (1 + forward*feedback_path) for delay-free rational systems."""
    h = feedback_path if feedback_path is not None else RationalTF.constant(1.0)
    if forward.delay or h.delay:
        raise DelayNotRationalizedError("feedback() requires rationalized delays")
    num = np.polymul(forward.num, h.den)
    den = np.polyadd(np.polymul(forward.den, h.den), np.polymul(forward.num, h.num))
    return RationalTF(num, den)


def unity_feedback_response(open_loop):
    """Pointwise T = G/(1+G) from open-loop samples (exact with dead time)."""
    g = open_loop.value
    one_plus = 1.0 + g
    bad = np.abs(one_plus) < SINGULAR_TOL
    if np.any(bad):
        raise ClosedLoopSingularityError(float(open_loop.omega[np.argmax(bad)]))
    return FreqResponse.from_values(open_loop.omega, g / one_plus)


def pade_delay(L, order=1):
    """Diagonal [order/order] Pade approximant of exp(-L*s)."""
    if L < 0:
        raise ValidationError("delay must be >= 0")
    if order < 1 or int(order) != order:
        raise ValidationError("Pade order must be a positive integer")
    if L == 0:
        return RationalTF.constant(1.0)
    n = int(order)
    c = [
        math.factorial(2 * n - k) * math.factorial(n)
        / (math.factorial(2 * n) * math.factorial(k) * math.factorial(n - k))
        for k in range(n + 1)
    ]
    num = [c[k] * (-L) ** k for k in range(n, -1, -1)]
    den = [c[k] * L ** k for k in range(n, -1, -1)]
    return RationalTF(num, den)


def rationalize(tf, order=1):
    """Replace the dead time by its Pade approximant."""
    if not tf.delay:
        return tf
    return series(tf.rational(), pade_delay(tf.delay, order))


@dataclass(frozen=True, eq=False)
class StateSpace:
    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    D: float

    def __post_init__(self):
        n = int(np.size(self.B))
        try:
            A = np.asarray(self.A, dtype=float).reshape(n, n)
            B = np.asarray(self.B, dtype=float).reshape(n, 1)
            C = np.asarray(self.C, dtype=float).reshape(1, n)
        except ValueError as exc:
            raise ValidationError(f"inconsistent state-space dimensions: {exc}") from None
        object.__setattr__(self, "A", _readonly(A))
        object.__setattr__(self, "B", _readonly(B))
        object.__setattr__(self, "C", _readonly(C))
        object.__setattr__(self, "D", float(self.D))

    @property
    def n_states(self):
        return self.A.shape[0]

    def to_tf(self):
        n = self.n_states
        if n == 0:
            return RationalTF.constant(self.D)
        den = np.poly(self.A)
        num = np.poly(self.A - self.B @ self.C) - den + self.D * den
        return RationalTF(np.real(num), np.real(den))


def to_state_space(tf):
    """Controllable canonical realization of a proper, delay-free tf."""
    if tf.delay:
        raise DelayNotRationalizedError("rationalize the dead time (pade_delay) first")
    if not tf.is_proper():
        raise ImproperSystemError(f"improper system: deg num {len(tf.num) - 1} > deg den {tf.order}")
    n = tf.order
    a = tf.den / tf.den[0]
    b = np.concatenate([np.zeros(n + 1 - len(tf.num)), tf.num]) / tf.den[0]
    D = b[0]
    bb = b[1:] - D * a[1:]
    A = np.zeros((n, n))
    if n:
        A[0, :] = -a[1:]
        A[1:, :-1] = np.eye(n - 1)
    B = np.zeros(n)
    if n:
        B[0] = 1.0
    return StateSpace(A, B, bb, D)


def zoh_matrices(ss, dt):
    """Exact zero-order-hold discretization (Ad, Bd)."""
    n = ss.n_states
    M = np.zeros((n + 1, n + 1))
    M[:n, :n] = ss.A
    M[:n, n:] = ss.B
    E = linalg.expm(M * dt)
    return E[:n, :n], E[:n, n:]


@dataclass(frozen=True, eq=False)
class TimeSeries:
    t0: float
    dt: float
    values: np.ndarray

    def __post_init__(self):
        if not self.dt > 0:
            raise ValidationError("dt must be > 0")
        v = np.atleast_1d(np.asarray(self.values, dtype=float))
        if v.ndim != 1 or v.size < 1:
            raise ValidationError("values must be a non-empty 1-D sequence")
        object.__setattr__(self, "t0", float(self.t0))
        object.__setattr__(self, "dt", float(self.dt))
        object.__setattr__(self, "values", _readonly(v))

    @property
    def t(self):
        return self.t0 + self.dt * np.arange(len(self.values))

    def __len__(self):
        return len(self.values)

    @classmethod
    def step(cls, amplitude=1.0, horizon=30.0, dt=0.005, t0=0.0):
        n = int(round(horizon / dt)) + 1
        return cls(t0, dt, np.full(n, float(amplitude)))


def simulate(ss, u, x0=None):
    """ZOH simulation from rest (or x0); output sampled at the input instants."""
    n = ss.n_states
    uv = u.values
    if n == 0:
        return TimeSeries(u.t0, u.dt, ss.D * uv)
    Ad, Bd = zoh_matrices(ss, u.dt)
    bd = Bd[:, 0]
    c = ss.C[0]
    x = np.zeros(n) if x0 is None else np.array(x0, dtype=float)
    y = np.empty(len(uv))
    with np.errstate(over="ignore", invalid="ignore"):
        for k, uk in enumerate(uv):
            y[k] = c @ x + ss.D * uk
            x = Ad @ x + bd * uk
    _check_finite(y, u)
    return TimeSeries(u.t0, u.dt, y)


def _check_finite(y, u):
    bad = ~np.isfinite(y)
    if np.any(bad):
        k = int(np.argmax(bad))
        raise DivergenceError(k, u.t0 + k * u.dt)


def impulse_samples(ss, dt, n_samples, block=64):
    """h(k*dt) = C expm(A k dt) B, the free response from x(0) = B.

    Powers are built block-wise so the cost is O(n_samples / block) matrix products.
    """
    n = ss.n_states
    if n == 0:
        return np.zeros(n_samples)
    Ad, _ = zoh_matrices(ss, dt)
    m = min(block, n_samples)
    P = np.empty((n, m))
    P[:, 0] = ss.B[:, 0]
    for k in range(1, m):
        P[:, k] = Ad @ P[:, k - 1]
    Am = np.linalg.matrix_power(Ad, m)
    out = np.empty(n_samples)
    with np.errstate(over="ignore", invalid="ignore"):
        for start in range(0, n_samples, m):
            stop = min(start + m, n_samples)
            out[start:stop] = (ss.C @ P[:, : stop - start])[0]
            P = Am @ P
    return out


def _match_roots(z, p, tol):
    """Greedy nearest-pair cancellation; returns surviving (zeros, poles)."""
    z = list(z)
    p = list(p)
    keep_z = []
    for zi in z:
        if not p:
            keep_z.append(zi)
            continue
        d = np.abs(np.asarray(p) - zi)
        j = int(np.argmin(d))
        if d[j] <= tol * max(1.0, abs(p[j])):
            p.pop(j)
        else:
            keep_z.append(zi)
    return np.asarray(keep_z), np.asarray(p)


def minreal(tf, tol=1e-6):
    """Cancel numerator/denominator roots closer than tol (relative above |root| = 1)."""
    if tol <= 0:
        raise ValidationError("tol must be > 0")
    if not np.any(tf.num):
        return RationalTF([0.0], [1.0], tf.delay)
    z, p = tf.zeros(), tf.poles()
    kz, kp = _match_roots(z, p, tol)
    if len(kz) == len(z):
        return tf
    num = np.real(np.poly(kz)) * tf.num[0] if kz.size else np.array([tf.num[0]])
    den = np.real(np.poly(kp)) * tf.den[0] if kp.size else np.array([tf.den[0]])
    out = RationalTF(num, den, tf.delay)
    # restore the DC gain removed along with the near-cancelling pair
    try:
        k_old, k_new = dc_gain(tf), dc_gain(out)
    except IndeterminateGainError:
        return out
    if math.isfinite(k_old) and math.isfinite(k_new) and k_new != 0:
        out = out.scaled(k_old / k_new)
    return out


def dc_gain(tf):
    """num(0)/den(0); +/-inf for a pole at the origin, error for 0/0."""
    n0, d0 = float(tf.num[-1]), float(tf.den[-1])
    if d0 == 0.0:
        if n0 == 0.0:
            raise IndeterminateGainError("0/0 DC gain; cancel common roots at s=0 (minreal) first")
        return math.inf
    return n0 / d0
