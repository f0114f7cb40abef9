"""Mean-field ODE for the load profile and its numerical tools.

The state is ``xi`` in the simplex over loads ``0..C``.  The drift is

    F_0 = -lam xi(0) - lam g_0 + xi(1)
    F_k = lam xi(k-1) - lam xi(k) + lam g_{k-1} - lam g_k - k xi(k) + (k+1) xi(k+1)
    F_C = lam xi(C-1) + lam g_{C-1} - C xi(C)

with ``g_j`` the alternative-routing rate

    g_j = 2 xi(C) xi(j) [ xi(<=j) T_j + sum_{i=j+1}^{C-1} xi(i) T_i ],
    T_i = sum_{r=1}^d (1 - xi(<=i)^2)^(r-1) (1 - xi(<=i-1)^2)^(d-r).

In the no-direct variant the leading ``xi(C)`` factor is dropped and so are
the direct-arrival terms ``lam xi(k-1) - lam xi(k)``.
"""

from __future__ import annotations

import csv
import enum
import math
from dataclasses import dataclass
from decimal import Decimal, localcontext
from typing import Optional, Sequence

import numpy as np

__all__ = [
    "Variant",
    "OdeParams",
    "SimplexError",
    "as_simplex",
    "g_field",
    "g_all",
    "F_field",
    "lipschitz_bound",
    "OdeTrajectory",
    "integrate",
    "fixed_point",
    "TheoremConstants",
    "theorem_constants",
]


class Variant(enum.Enum):
    WITH_DIRECT = "direct"
    NO_DIRECT = "nodirect"

    @classmethod
    def parse(cls, text):
        if isinstance(text, cls):
            return text
        key = str(text).strip().lower().replace("_", "").replace("-", "")
        if key in ("direct", "withdirect"):
            return cls.WITH_DIRECT
        if key in ("nodirect", "nodirectbdar"):
            return cls.NO_DIRECT
        raise ValueError(f"unknown ODE variant {text!r}")


class SimplexError(ArithmeticError):
    """The integrated vector left the simplex by more than the tolerance."""


@dataclass(frozen=True)
class OdeParams:
    """Parameters of the mean-field drift.

    ``lam = 0`` is accepted (the network then only drains).
    """

    lam: float
    C: int
    d: int
    variant: Variant = Variant.WITH_DIRECT

    def __post_init__(self):
        if not self.lam >= 0 or math.isinf(self.lam):
            raise ValueError(f"lambda must be a finite non-negative real, got {self.lam!r}")
        if int(self.C) != self.C or self.C < 1:
            raise ValueError(f"C must be an integer >= 1, got {self.C!r}")
        if int(self.d) != self.d or self.d < 1:
            raise ValueError(f"d must be an integer >= 1, got {self.d!r}")
        object.__setattr__(self, "variant", Variant.parse(self.variant))


def as_simplex(xi, tol: float = 1e-9) -> np.ndarray:
    """Validate a simplex vector, clipping components in ``[-tol, 0)`` to zero."""
    arr = np.asarray(xi, dtype=np.float64).copy()
    if arr.ndim != 1:
        raise ValueError("xi must be one-dimensional")
    if arr.min() < -tol:
        raise SimplexError(f"component {arr.min():.3e} below -{tol:g}")
    arr[arr < 0] = 0.0
    if abs(arr.sum() - 1.0) > tol:
        raise SimplexError(f"components sum to {arr.sum()!r}")
    return arr


def _g_list(xi, C: int, d: int, nodirect: bool):
    """Pure-Python g_0..g_{C-1}; xi is a sequence of length C + 1."""
    cum = []
    s = 0.0
    for k in range(C + 1):
        s += xi[k]
        cum.append(s)
    T = []
    for i in range(C):
        a = 1.0 - cum[i] * cum[i]
        b = 1.0 - cum[i - 1] * cum[i - 1] if i > 0 else 1.0
        # sum_{r=1}^d a^(r-1) b^(d-r), accumulated with running powers
        tot = 0.0
        apow = 1.0
        for r in range(1, d + 1):
            tot += apow * b ** (d - r)
            apow *= a
        T.append(tot)
    lead = 2.0 if nodirect else 2.0 * xi[C]
    g = []
    for j in range(C):
        acc = cum[j] * T[j]
        for i in range(j + 1, C):
            acc += xi[i] * T[i]
        g.append(lead * xi[j] * acc)
    return g


def g_field(xi, params: OdeParams, j: int) -> float:
    """Alternative-routing rate ``g_j(xi)`` for ``0 <= j <= C - 1``."""
    if not 0 <= j <= params.C - 1:
        raise ValueError(f"j must lie in [0, C-1], got {j}")
    return g_all(xi, params)[j]


def g_all(xi, params: OdeParams) -> np.ndarray:
    C = params.C
    xi = np.asarray(xi, dtype=np.float64)
    if xi.shape != (C + 1,):
        raise ValueError(f"xi must have {C + 1} components, got shape {xi.shape}")
    return np.array(_g_list(xi.tolist(), C, params.d, params.variant is Variant.NO_DIRECT))


def _F_list(xi, lam: float, C: int, d: int, nodirect: bool):
    g = _g_list(xi, C, d, nodirect)
    direct = 0.0 if nodirect else lam
    F = [0.0] * (C + 1)
    for k in range(C + 1):
        val = -k * xi[k]
        if k < C:
            val += -direct * xi[k] - lam * g[k] + (k + 1) * xi[k + 1]
        if k > 0:
            val += direct * xi[k - 1] + lam * g[k - 1]
        F[k] = val
    return F


def F_field(xi, params: OdeParams) -> np.ndarray:
    """Drift vector ``F(xi)`` with ``C + 1`` components."""
    C = params.C
    xi = np.asarray(xi, dtype=np.float64)
    if xi.shape != (C + 1,):
        raise ValueError(f"xi must have {C + 1} components, got shape {xi.shape}")
    return np.array(_F_list(xi.tolist(), params.lam, C, params.d, params.variant is Variant.NO_DIRECT))


def lipschitz_bound(params: OdeParams, form: str = "auto") -> float:
    """Sup-norm Lipschitz constant of ``F`` on the sub-simplex.

    Args:
        form: ``"general"`` gives ``8 d^2 (lam+1)(C+1)^2``; ``"d1"`` gives
            ``2 lam + 2C + 6`` (valid for ``d = 1``); ``"auto"`` picks the
            ``d = 1`` constant when it applies.
    """
    lam, C, d = params.lam, params.C, params.d
    general = 8.0 * d * d * (lam + 1) * (C + 1) ** 2
    if form == "general":
        return general
    if form == "d1":
        if d != 1:
            raise ValueError("the d = 1 constant needs d = 1")
        return 2.0 * lam + 2.0 * C + 6.0
    if form != "auto":
        raise ValueError(f"unknown form {form!r}")
    return 2.0 * lam + 2.0 * C + 6.0 if d == 1 else general


@dataclass
class OdeTrajectory:
    times: np.ndarray
    xi: np.ndarray  # (len(times), C + 1)
    step: float

    def at(self, t: float) -> np.ndarray:
        idx = int(np.argmin(np.abs(self.times - t)))
        if abs(self.times[idx] - t) > 1e-12 * max(1.0, abs(t)):
            raise KeyError(f"time {t} is not a sample time")
        return self.xi[idx]

    def write_csv(self, path) -> None:
        """CSV with header ``t,k,xi_k``."""
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t", "k", "xi_k"])
            for t, row in zip(self.times, self.xi):
                for k, val in enumerate(row):
                    w.writerow([repr(float(t)), k, repr(float(val))])


def integrate(xi0, params: OdeParams, t0: float, h: Optional[float] = None,
              sample_times: Optional[Sequence[float]] = None, tol: float = 1e-9) -> OdeTrajectory:
    """Classical RK4 integration of ``d xi / dt = F(xi)`` on the simplex.

    Args:
        xi0: initial simplex vector.
        params: drift parameters.
        t0: final time (> 0).
        h: maximal step; defaults to ``0.5 / lipschitz_bound(params)`` and may
            not exceed it.  Each interval between sample times is split into
            equal steps no longer than ``h``.
        sample_times: output times in ``[0, t0]``; defaults to 21 equispaced points.
        tol: simplex tolerance.

    Raises:
        SimplexError: a component fell below ``-tol`` or the sum drifted.
    """
    if not t0 > 0:
        raise ValueError("t0 must be positive")
    hmax = 0.5 / lipschitz_bound(params)
    if h is None:
        h = hmax
    if not 0 < h <= hmax * (1 + 1e-12):
        raise ValueError(f"step {h} exceeds 0.5 / Lipschitz = {hmax}")
    if sample_times is None:
        sample_times = np.linspace(0.0, t0, 21)
    times = np.asarray(sample_times, dtype=np.float64)
    if times.size and (times[0] < 0 or times[-1] > t0 * (1 + 1e-12) or np.any(np.diff(times) <= 0)):
        raise ValueError("sample_times must be increasing within [0, t0]")
    lam, C, d = params.lam, params.C, params.d
    nd = params.variant is Variant.NO_DIRECT
    x = as_simplex(xi0, tol).tolist()
    if len(x) != C + 1:
        raise ValueError(f"xi0 must have {C + 1} components")
    out = []
    t = 0.0
    K = C + 1
    for ts in times:
        span = ts - t
        steps = int(math.ceil(span / h - 1e-9)) if span > 0 else 0
        if steps:
            hh = span / steps
            for _ in range(steps):
                k1 = _F_list(x, lam, C, d, nd)
                k2 = _F_list([x[i] + 0.5 * hh * k1[i] for i in range(K)], lam, C, d, nd)
                k3 = _F_list([x[i] + 0.5 * hh * k2[i] for i in range(K)], lam, C, d, nd)
                k4 = _F_list([x[i] + hh * k3[i] for i in range(K)], lam, C, d, nd)
                x = [x[i] + hh / 6.0 * (k1[i] + 2 * k2[i] + 2 * k3[i] + k4[i]) for i in range(K)]
                lo = min(x)
                if lo < 0:
                    if lo < -tol:
                        raise SimplexError(f"component {lo:.3e} below -{tol:g}; step too large?")
                    x = [max(v, 0.0) for v in x]
                    s = sum(x)
                    x = [v / s for v in x]
                if abs(sum(x) - 1.0) > tol:
                    raise SimplexError("mass drifted off the simplex")
        t = ts
        out.append(list(x))
    return OdeTrajectory(times, np.array(out), h)


def fixed_point(params: OdeParams, xi0=None, settle_time: float = 10.0, tol: float = 1e-12,
                max_iter: int = 100) -> np.ndarray:
    """Numerical zero of ``F`` on the simplex.

    The ODE is first integrated from ``xi0`` (default: empty network) for
    ``settle_time``; the endpoint seeds a damped Newton iteration on the
    system ``F_0..F_{C-1} = 0``, ``sum xi = 1`` with a central-difference
    Jacobian, halving the step until the residual decreases.

    Raises:
        RuntimeError: if ``||F||_inf <= tol`` is not reached within ``max_iter``.
    """
    C = params.C
    if xi0 is None:
        xi0 = np.eye(C + 1)[0]
    x = integrate(xi0, params, settle_time, sample_times=[settle_time]).xi[-1]

    def resid(z):
        F = F_field(z, params)
        r = F.copy()
        r[C] = z.sum() - 1.0
        return r

    def fnorm(z):
        return float(np.max(np.abs(F_field(z, params))))

    for _ in range(max_iter):
        cur = fnorm(x)
        if cur <= tol:
            return x
        r = resid(x)
        J = np.empty((C + 1, C + 1))
        eps = 1e-7
        for i in range(C + 1):
            e = np.zeros(C + 1)
            e[i] = eps
            J[:, i] = (resid(x + e) - resid(x - e)) / (2 * eps)
        try:
            step = np.linalg.solve(J, -r)
        except np.linalg.LinAlgError:
            step = -r
        alpha = 1.0
        while alpha > 1e-8:
            cand = np.clip(x + alpha * step, 0.0, None)
            cand = cand / cand.sum()
            if fnorm(cand) < cur:
                x = cand
                break
            alpha *= 0.5
        else:
            break
    if fnorm(x) <= tol:
        return x
    raise RuntimeError(f"fixed point iteration stalled at residual {fnorm(x):.3e}")


# -- theorem constants -------------------------------------------------------------


@dataclass(frozen=True)
class TheoremConstants:
    """Explicit constants of the law-of-large-numbers bounds.

    Attributes:
        gamma: ``gamma`` as a :class:`~decimal.Decimal` (it underflows a float).
        log_gamma: natural log of ``gamma``.
        n0_polynomial_term: ``2^18 (lam + 1/lam)^4 d^4 (C+1)^6 (t0 + 1/t0)^2``.
        log_n0_exponential_term: ``8 / gamma``, the log of ``e^(8/gamma)``, as a Decimal.
        loglog_n0_exponential_term: ``log(8 / gamma)`` as a float.
        envelope_factor: ``64 (lam+1)(t0+1) d^2 (C+1)^3``.
        envelope_rate: exponent rate, ``216 (lam+1) d^2 (C+1)^3`` or ``216 (lam+1)(C+1)`` when ``d = 1``.
    """

    lam: float
    d: int
    C: int
    t0: float
    gamma: Decimal
    log_gamma: float
    n0_polynomial_term: float
    log_n0_exponential_term: Decimal
    loglog_n0_exponential_term: float
    envelope_factor: float
    envelope_rate: float

    def log_error_envelope(self, t: Optional[float] = None, n: float = 2, phi0: float = 0.0,
                           initial_gap: float = 0.0) -> float:
        """Natural log of :meth:`error_envelope`."""
        t = self.t0 if t is None else t
        lam, d, C = self.lam, self.d, self.C
        factor = 64.0 * (lam + 1) * (t + 1) * d * d * (C + 1) ** 3
        inner = initial_gap + factor * (n * phi0 + 3.0 * math.sqrt(n) * math.log(n))
        if inner <= 0:
            return -math.inf
        return math.log(inner) + self.envelope_rate * t

    def error_envelope(self, t: Optional[float] = None, n: float = 2, phi0: float = 0.0,
                       initial_gap: float = 0.0) -> float:
        """Deviation bound ``(gap + factor (n phi0 + 3 sqrt(n) log n)) e^(rate t)``.

        ``t`` plays the role of the horizon ``t0`` (default: the stored one).
        Returns ``inf`` when the value exceeds the float range.
        """
        lg = self.log_error_envelope(t, n, phi0, initial_gap)
        try:
            return math.exp(lg)
        except OverflowError:
            return math.inf

    def as_dict(self) -> dict:
        return {
            "lambda": self.lam,
            "d": self.d,
            "C": self.C,
            "t0": self.t0,
            "gamma": f"{self.gamma:.6E}",
            "log_gamma": self.log_gamma,
            "n0_polynomial_term": self.n0_polynomial_term,
            "log_n0_exponential_term": f"{self.log_n0_exponential_term:.6E}",
            "loglog_n0_exponential_term": self.loglog_n0_exponential_term,
            "envelope_factor": self.envelope_factor,
            "envelope_rate": self.envelope_rate,
        }


def theorem_constants(lam: float, d: int, C: int, t0: float) -> TheoremConstants:
    """Evaluate the explicit constants, working in log space.

    ``gamma = 1 / (2^25 (d^8 + d^4 C / lam) (8 lam t0 + 1)^3 e^(800 d lam t0))``.
    """
    if not (lam > 0 and t0 > 0 and d >= 1 and C >= 1):
        raise ValueError("lambda, t0 must be positive and d, C at least 1")
    log_gamma = -(
        25 * math.log(2)
        + math.log(d ** 8 + d ** 4 * C / lam)
        + 3 * math.log(8 * lam * t0 + 1)
        + 800 * d * lam * t0
    )
    with localcontext() as ctx:
        ctx.prec = 40
        gamma = Decimal(log_gamma).exp()
        log_exp_term = Decimal(8) / gamma
    poly = 2.0 ** 18 * (lam + 1 / lam) ** 4 * d ** 4 * (C + 1) ** 6 * (t0 + 1 / t0) ** 2
    factor = 64.0 * (lam + 1) * (t0 + 1) * d * d * (C + 1) ** 3
    rate = 216.0 * (lam + 1) * ((C + 1) if d == 1 else d * d * (C + 1) ** 3)
    return TheoremConstants(
        lam=lam, d=d, C=C, t0=t0,
        gamma=gamma,
        log_gamma=log_gamma,
        n0_polynomial_term=poly,
        log_n0_exponential_term=log_exp_term,
        loglog_n0_exponential_term=math.log(8) - log_gamma,
        envelope_factor=factor,
        envelope_rate=rate,
    )
