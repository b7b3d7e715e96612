"""ARX least-squares identification and exact ZOH discrete/continuous conversion.

The ARX structure is

    y(t) + a_1 y(t-1) + ... + a_n y(t-n) = b_1 u(t-1) + ... + b_m u(t-m)

i.e. B(z)/A(z) with an implicit one-sample input lag and no extra n_k term.
"""

import math
from dataclasses import dataclass, field
from typing import Iterable

import numpy as np
from scipy import linalg

from .errors import LogBranchError, UnidentifiableError, ValidationError
from .lti import RationalTF, StateSpace, TimeSeries, to_state_space, trim, zoh_matrices

COND_LIMIT = 1e12


@dataclass(frozen=True, order=True)
class ArxOrders:
    n: int
    m: int

    def __post_init__(self):
        if int(self.n) != self.n or int(self.m) != self.m or self.n < 1 or self.m < 1:
            raise ValidationError(f"ARX orders must be integers >= 1, got n={self.n}, m={self.m}")


@dataclass(frozen=True, eq=False)
class ArxModel:
    a: np.ndarray
    b: np.ndarray
    Ts: float
    residual_rms: float = math.nan

    def __post_init__(self):
        a = np.atleast_1d(np.asarray(self.a, dtype=float)).copy()
        b = np.atleast_1d(np.asarray(self.b, dtype=float)).copy()
        if not self.Ts > 0:
            raise ValidationError("sampling period must be > 0")
        a.setflags(write=False)
        b.setflags(write=False)
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "b", b)
        object.__setattr__(self, "Ts", float(self.Ts))

    @property
    def orders(self):
        return ArxOrders(len(self.a), len(self.b))

    @property
    def theta(self):
        return np.concatenate([self.a, self.b])

    def z_polynomials(self):
        """(num, den) in descending powers of z, both of degree max(n, m)."""
        N = max(len(self.a), len(self.b))
        den = np.zeros(N + 1)
        den[0] = 1.0
        den[1 : len(self.a) + 1] = self.a
        num = np.zeros(N + 1)
        num[1 : len(self.b) + 1] = self.b
        return num, den

    def to_dict(self):
        return {"a": self.a.tolist(), "b": self.b.tolist(), "Ts": self.Ts, "residual_rms": self.residual_rms}


def _check_pair(u, y):
    if len(u) != len(y):
        raise ValidationError(f"u and y lengths differ ({len(u)} vs {len(y)})")
    if abs(u.dt - y.dt) > 1e-12 * max(u.dt, y.dt):
        raise ValidationError("u and y sampling periods differ")


def regressor(u, y, orders):
    """Stacked rows [-y(t-1) .. -y(t-n), u(t-1) .. u(t-m)] for t = max(n, m) .. N-1."""
    n, m = orders.n, orders.m
    uv, yv = np.asarray(u, dtype=float), np.asarray(y, dtype=float)
    N = len(yv)
    k0 = max(n, m)
    Phi = np.empty((N - k0, n + m))
    for i in range(1, n + 1):
        Phi[:, i - 1] = -yv[k0 - i : N - i]
    for j in range(1, m + 1):
        Phi[:, n + j - 1] = uv[k0 - j : N - j]
    return Phi, yv[k0:].copy()


def arx_fit(u, y, orders, detrend=False):
    """Least-squares ARX fit solved by SVD of the column-scaled regressor."""
    _check_pair(u, y)
    N = len(y)
    if N <= orders.n + orders.m + 10:
        raise ValidationError(f"need more than n+m+10 = {orders.n + orders.m + 10} samples, got {N}")
    uv, yv = u.values, y.values
    if detrend:
        uv, yv = uv - uv.mean(), yv - yv.mean()
    Phi, target = regressor(uv, yv, orders)
    scale = np.linalg.norm(Phi, axis=0)
    if np.any(scale == 0):
        raise UnidentifiableError("regressor has an all-zero column (no excitation)")
    Phi_s = Phi / scale
    sv = np.linalg.svd(Phi_s, compute_uv=False)
    cond = sv[0] / sv[-1] if sv[-1] > 0 else math.inf
    if cond > COND_LIMIT:
        raise UnidentifiableError(f"regressor condition number {cond:.3g} exceeds {COND_LIMIT:g}")
    theta_s, *_ = np.linalg.lstsq(Phi_s, target, rcond=None)
    theta = theta_s / scale
    res = target - Phi @ theta
    rms = float(np.sqrt(np.mean(res**2)))
    return ArxModel(theta[: orders.n], theta[orders.n :], y.dt, rms)


def arx_predict(model, u, y):
    """One-step-ahead prediction from measured history; the first max(n, m) samples are copied."""
    _check_pair(u, y)
    k0 = max(len(model.a), len(model.b))
    Phi, _ = regressor(u.values, y.values, model.orders)
    out = np.array(y.values, dtype=float)
    out[k0:] = Phi @ model.theta
    return TimeSeries(y.t0, y.dt, out)


def arx_simulate(model, u, y_init=None):
    """Free-run simulation on the model's own past outputs.

    ``y_init`` fixes the first len(y_init) >= n output samples; with ``None`` the
    system is at rest before the first sample.
    """
    a, b = model.a, model.b
    n, m = len(a), len(b)
    uv = u.values
    N = len(uv)
    y = np.zeros(N)
    start = 0
    if y_init is not None:
        y_init = np.asarray(y_init, dtype=float)
        if len(y_init) < n:
            raise ValidationError(f"y_init needs at least n={n} samples")
        start = min(len(y_init), N)
        y[:start] = y_init[:start]
    for t in range(start, N):
        acc = 0.0
        for i in range(1, min(n, t) + 1):
            acc -= a[i - 1] * y[t - i]
        for j in range(1, min(m, t) + 1):
            acc += b[j - 1] * uv[t - j]
        y[t] = acc
    return TimeSeries(u.t0, u.dt, y)


def free_run_rms(model, u, y):
    k0 = max(len(model.a), len(model.b))
    sim = arx_simulate(model, u, y.values[:k0])
    err = sim.values[k0:] - y.values[k0:]
    with np.errstate(over="ignore", invalid="ignore"):
        val = float(np.sqrt(np.mean(err**2)))
    return val if math.isfinite(val) else math.inf


def order_scores(u, y, candidates, detrend=False):
    """Free-run RMS of each candidate fit, keyed by ArxOrders."""
    if detrend:
        u = TimeSeries(u.t0, u.dt, u.values - u.values.mean())
        y = TimeSeries(y.t0, y.dt, y.values - y.values.mean())
    scores = {}
    for o in candidates:
        try:
            scores[o] = free_run_rms(arx_fit(u, y, o), u, y)
        except UnidentifiableError:
            # over-parameterized for this data; rank-deficient candidates never win
            scores[o] = math.inf
    return scores


def select_order(u, y, candidates, detrend=False):
    """Candidate with minimum free-run RMS; near-ties go to the smaller n + m."""
    candidates = [c if isinstance(c, ArxOrders) else ArxOrders(*c) for c in candidates]
    if not candidates:
        raise ValidationError("no candidate orders given")
    scores = order_scores(u, y, candidates, detrend)
    best = min(scores.values())
    if not math.isfinite(best):
        raise UnidentifiableError("no candidate order gives a well-conditioned, stable fit")
    slack = best * 1e-6 + 1e-9 * (float(np.std(y.values)) + 1e-300)
    tied = [o for o in candidates if scores[o] <= best + slack]
    return min(tied, key=lambda o: (o.n + o.m, scores[o], o.n))


def default_candidates(n_range=range(4, 9), m_range=range(2, 9)):
    return [ArxOrders(n, m) for n in n_range for m in m_range]


def c2d_zoh(tf, Ts):
    """ZOH-discretize a strictly proper tf (dead time a multiple of Ts) into ARX form."""
    d = tf.delay / Ts
    nd = int(round(d))
    if abs(d - nd) > 1e-9 * max(1.0, d):
        raise ValidationError("dead time must be an integer multiple of Ts")
    rat = tf.rational()
    if not rat.is_strictly_proper() and nd == 0:
        raise ValidationError("ARX form needs a strictly proper system (no b_0 term)")
    ss = to_state_space(rat)
    Ad, Bd = zoh_matrices(ss, Ts)
    dss = StateSpace(Ad, Bd, ss.C, ss.D)
    dtf = dss.to_tf()
    den = dtf.den / dtf.den[0]
    num = np.concatenate([np.zeros(len(den) - len(dtf.num)), dtf.num]) / dtf.den[0]
    # H(z) = sum num[j] z^-j / sum den[i] z^-i, then shifted by z^-nd
    b = np.concatenate([np.zeros(nd), num])[1:]
    b = trim(b[::-1])[::-1]
    return ArxModel(den[1:], b, Ts)


def d2c_zoh(model):
    """Exact inverse of ZOH discretization via the principal matrix logarithm.

    Poles at z = 0 are taken as whole-sample input delays and returned as dead time.
    """
    num, den = model.z_polynomials()
    # cancel common factors of z, then count remaining poles at the origin
    while len(den) > 1 and den[-1] == 0.0 and num[-1] == 0.0:
        num, den = num[:-1], den[:-1]
    d = 0
    while d < len(den) - 1 and den[-1 - d] == 0.0:
        d += 1
    den_r = den[: len(den) - d]
    num_t = trim(num)
    if len(num_t) > len(den_r):
        raise LogBranchError(
            f"{d} pole(s) at z=0 exceed the relative degree; refit with n >= m"
        )
    zp = np.roots(den_r) if len(den_r) > 1 else np.array([])
    neg = (np.abs(zp.imag) <= 1e-9 * np.maximum(1.0, np.abs(zp))) & (zp.real <= 0)
    if np.any(neg):
        raise LogBranchError(
            f"discrete pole(s) {zp[neg].real} on the non-positive real axis have no principal "
            "logarithm; refit with different ARX orders"
        )
    dtf = RationalTF(num_t, den_r)
    if dtf.order == 0:
        return RationalTF([dtf.num[0] / dtf.den[0]], [1.0], d * model.Ts)
    dss = to_state_space(dtf)
    Ts = model.Ts
    # balancing keeps logm accurate on companion matrices with spread coefficients
    Ad, T = linalg.matrix_balance(dss.A, permute=False)
    Bd = dss.B / T.diagonal()[:, None]
    Cd = dss.C * T.diagonal()[None, :]
    A, _ = linalg.logm(Ad, disp=False)
    A = A / Ts
    if np.iscomplexobj(A):
        if np.max(np.abs(A.imag)) > 1e-8 * max(1.0, np.max(np.abs(A.real))):
            raise LogBranchError("matrix logarithm is not real; refit with different ARX orders")
        A = A.real
    n = A.shape[0]
    M = np.zeros((2 * n, 2 * n))
    M[:n, :n] = A
    M[:n, n:] = np.eye(n)
    # integral_0^Ts expm(A t) dt
    W = linalg.expm(M * Ts)[:n, n:]
    B = np.linalg.solve(W, Bd)
    ctf = StateSpace(A, B, Cd, dss.D).to_tf()
    return RationalTF(ctf.num, ctf.den, d * Ts)


def is_nonminimum_phase(tf):
    z = tf.zeros()
    return bool(z.size and np.max(z.real) > 0)
