"""Exact diagnostic functionals of a network state.

Notation: ``L`` is the ``n x n`` load matrix (diagonal ``-1``), ``m = n - 2``,
``I^j_{uv} = [L[u,v] == j]`` and ``f_{v,j} = sum_w I^j_{vw}``.

Most quantities reduce to products of 0/1 indicator matrices.  For
example ``sum_w I^j_{uw} I^k_{vw}`` is entry ``(u, v)`` of ``E_j @ E_k.T``
with ``E_a = (L == a)``.  All counts stay far below ``2**53`` so the float
matrix products are exact.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .network import NetworkState
from .routing import PolicyKind, route_on_loads

__all__ = [
    "PhiReport",
    "phi_report",
    "phi1_signed",
    "joint_load_table",
    "g_table",
    "g_exact",
    "drift_table",
    "drift_f",
    "generator_bruteforce",
    "cross_statistic",
    "meanfield_gap",
    "choice_weights",
]


@dataclass
class PhiReport:
    """Values of the phi statistics and where their maxima are attained.

    ``witnesses`` maps ``"phi1"`` to ``(u, v, j, k)``, ``"phi2"`` to
    ``(u, v, j)`` and ``"phi3"`` to ``(u, v)``.
    """

    phi1: float
    phi2: float
    phi3: float
    witnesses: dict = field(default_factory=dict)

    @property
    def phi(self) -> float:
        return max(self.phi1, self.phi2, self.phi3)


def _indicators(L: np.ndarray, C: int):
    """``E[a] = (L == a)`` for ``a = 0..C`` as float matrices (zero diagonal)."""
    return [(L == a).astype(np.float64) for a in range(C + 1)]


def phi1_signed(state: NetworkState, j: int, k: int, L: Optional[np.ndarray] = None) -> np.ndarray:
    """Matrix of the signed geometry statistic for fixed ``(j, k)``.

    Entry ``(u, v)`` equals
    ``sum_w I^j_{uw} I^k_{vw} / m - (f_{u,j} - I^j_{uv})(f_{v,k} - I^k_{uv}) / m**2``;
    the diagonal is set to zero.
    """
    n = state.n
    if n < 3:
        raise ValueError("phi statistics need n >= 3")
    if L is None:
        L = state.load_matrix()
    m = n - 2
    Ej = (L == j).astype(np.float64)
    Ek = Ej if k == j else (L == k).astype(np.float64)
    joint = Ej @ Ek.T
    a = Ej.sum(axis=1)[:, None] - Ej
    b = Ek.sum(axis=1)[None, :] - Ek
    out = joint / m - (a * b) / (m * m)
    np.fill_diagonal(out, 0.0)
    return out


def phi_report(state: NetworkState) -> PhiReport:
    """Evaluate ``phi1``, ``phi2``, ``phi3`` exactly, with witnesses.

    Raises:
        ValueError: if ``n < 3``.
    """
    n, C = state.n, state.C
    if n < 3:
        raise ValueError("phi statistics need n >= 3")
    m = n - 2
    L = state.load_matrix()
    E = _indicators(L, C)
    f = np.stack([e.sum(axis=1) for e in E], axis=1)  # (n, C+1)

    best1, wit1 = -1.0, None
    off = ~np.eye(n, dtype=bool)
    for j in range(C + 1):
        a = f[:, j][:, None] - E[j]
        for k in range(C + 1):
            joint = E[j] @ E[k].T
            b = f[:, k][None, :] - E[k]
            val = np.abs(joint / m - (a * b) / (m * m))
            val[~off] = -1.0
            idx = int(np.argmax(val))
            if val.flat[idx] > best1:
                best1 = float(val.flat[idx])
                wit1 = (idx // n, idx % n, j, k)

    spread = f.max(axis=0) - f.min(axis=0)
    j2 = int(np.argmax(spread))
    u2, v2 = int(np.argmax(f[:, j2])), int(np.argmin(f[:, j2]))
    if u2 == v2:  # all nodes agree; any distinct pair is a witness
        u2, v2 = 0, 1
    phi2 = float(spread[j2]) / m

    per_pair = state.alt_per_pair()
    p3 = int(np.argmax(per_pair)) if per_pair.size else 0
    phi3 = float(per_pair[p3]) / m if per_pair.size else 0.0

    return PhiReport(
        phi1=max(best1, 0.0),
        phi2=phi2,
        phi3=phi3,
        witnesses={
            "phi1": wit1,
            "phi2": (u2, v2, j2),
            "phi3": (state.pair_u[p3], state.pair_v[p3]),
        },
    )


def joint_load_table(state: NetworkState, u: int, v: int) -> np.ndarray:
    """``M[j, k] = #{w not in {u, v}: load(u, w) = j, load(v, w) = k}``."""
    if u == v:
        raise ValueError("u and v must differ")
    L = state.load_matrix()
    C = state.C
    mask = np.ones(state.n, dtype=bool)
    mask[[u, v]] = False
    M = np.zeros((C + 1, C + 1), dtype=np.int64)
    np.add.at(M, (L[u, mask], L[v, mask]), 1)
    return M


def choice_weights(A, B, d: int):
    """``sum_{r=1}^d A**(r-1) * B**(d-r)`` elementwise.

    This is the probability-like weight that a route whose max leg load is
    ``i`` wins among ``d`` candidates, when ``A`` is the chance a rival beats
    it strictly (max load above ``i``) and ``B`` the chance a rival does not
    beat it under first-best tie-breaking (max load at least ``i``).
    """
    total = np.zeros_like(np.asarray(A, dtype=np.float64) * np.asarray(B, dtype=np.float64))
    apow = np.ones_like(total)
    for r in range(1, d + 1):
        total = total + apow * np.power(B, d - r)
        apow = apow * A
    return total


def g_table(state: NetworkState) -> np.ndarray:
    """All values ``g_{v,j}``, ``v = 0..n-1``, ``j = 0..C-1``, as an ``(n, C)`` array.

    Uses the factorised form: for a blocked pair ``(a, b)`` and a candidate
    whose larger leg load is ``i``, the other ``d - 1`` candidates enter only
    through ``N^{<=i}_{ab} = #{w != a, b : max(L[a,w], L[b,w]) <= i}``.
    """
    n, C, d = state.n, state.C, state.params.d
    if n < 3:
        return np.zeros((n, C))
    m = float(n - 2)
    L = state.load_matrix()
    E = _indicators(L, C)
    valid = L >= 0
    Ble = [((L <= i) & valid).astype(np.float64) for i in range(C)]
    Nle = [b @ b.T for b in Ble]
    S = []
    for i in range(C):
        A = 1.0 - Nle[i] / m
        B = 1.0 - Nle[i - 1] / m if i > 0 else np.ones_like(A)
        S.append(choice_weights(A, B, d))
    full = E[C]
    fullS = [full * s for s in S]

    out = np.zeros((n, C))
    for j in range(C):
        Ej = E[j]
        # v as an endpoint of a blocked pair (u, v): leg {v, w} has load j
        inner = S[j] * (Ble[j] @ Ej.T)
        for i in range(j + 1, C):
            inner += S[i] * (E[i] @ Ej.T)
        term12 = (full * inner).sum(axis=0)
        # v as the intermediate node of a blocked pair (u, v'): leg {u, v} has load j
        acc = fullS[j] @ Ble[j]
        for i in range(j + 1, C):
            acc += fullS[i] @ E[i]
        term34 = (Ej * acc).sum(axis=0)
        out[:, j] = (term12 + term34) / m
    return out


def g_exact(state: NetworkState, v: int, j: int) -> float:
    """Rate factor ``g_{v,j}(x)`` of alternatively routed arrivals raising a load-``j`` link at ``v``."""
    if not 0 <= j <= state.C - 1:
        raise ValueError(f"j must lie in [0, C-1], got {j}")
    if not 0 <= v < state.n:
        raise IndexError(f"node {v} out of range")
    return float(g_table(state)[v, j])


def drift_table(state: NetworkState) -> np.ndarray:
    """``A f_{v,j}(x)`` for every ``v`` and ``j = 0..C``, shape ``(n, C + 1)``."""
    C, lam = state.C, state.params.lam
    f = state.f_profiles().astype(np.float64)
    g = g_table(state)
    out = np.zeros_like(f)
    for j in range(C + 1):
        val = -j * f[:, j]
        if j < C:
            val = val - lam * f[:, j] - lam * g[:, j] + (j + 1) * f[:, j + 1]
        if j > 0:
            val = val + lam * f[:, j - 1] + lam * g[:, j - 1]
        out[:, j] = val
    return out


def drift_f(state: NetworkState, v: int, j: int) -> float:
    """Generator applied to ``f_{v,j}`` via the closed form with boundary rows."""
    if not 0 <= j <= state.C:
        raise ValueError(f"j must lie in [0, C], got {j}")
    if not 0 <= v < state.n:
        raise IndexError(f"node {v} out of range")
    return float(drift_table(state)[v, j])


def generator_bruteforce(state: NetworkState, v: int, j: int,
                         policy: PolicyKind = PolicyKind.BDAR, max_n: int = 8) -> float:
    """Generator applied to ``f_{v,j}`` by enumerating every transition.

    Each pair arrives at rate ``lam`` and each of the ``(n-2)**d`` candidate
    tuples has equal weight; each live call departs at rate 1.  Transitions
    are applied to copies of the state and ``f_{v,j}`` is recounted.
    """
    n, C, d, lam = state.n, state.C, state.params.d, state.params.lam
    if n > max_n:
        raise ValueError(f"brute-force generator limited to n <= {max_n}")
    if n < 3:
        raise ValueError("need n >= 3")
    policy = PolicyKind.parse(policy)
    base = int(state.f_profile(v)[j])
    others = lambda a, b: [w for w in range(n) if w != a and w != b]  # noqa: E731
    total = 0.0
    for p in range(state.N):
        a, b = state.pair_u[p], state.pair_v[p]
        acc = 0
        tuples = list(itertools.product(others(a, b), repeat=d))
        for cands in tuples:
            i = route_on_loads(state.load, state.pidx, C, policy, a, b, cands)
            if i == -2:
                continue
            nxt = state.copy()
            if i == -1:
                nxt.add_direct(p)
            else:
                nxt.add_alt(p, cands[i])
            acc += int(nxt.f_profile(v)[j]) - base
        total += lam * acc / len(tuples)
    for slot in range(state.num_calls):
        nxt = state.copy()
        nxt.remove_slot(slot)
        total += int(nxt.f_profile(v)[j]) - base
    return total


def cross_statistic(state: NetworkState, u: int, v: int, j: int, k: int, mode: str = "exact") -> float:
    """Closed form of the paired-profile statistic ``f_{u,v,j,k}`` or ``f_{u,v,<=j,k}``.

    Args:
        mode: ``"exact"`` for load exactly ``j`` at ``u``; ``"cumulative"`` for load ``<= j``.
    """
    if u == v:
        raise ValueError("u and v must differ")
    C, d = state.C, state.params.d
    if not (0 <= j <= C and 0 <= k <= C):
        raise ValueError("j and k must lie in [0, C]")
    if mode not in ("exact", "cumulative"):
        raise ValueError(f"unknown mode {mode!r}")
    m = state.n - 2
    fu = state.f_profile(u)
    fv = state.f_profile(v)
    luv = state.link_load(u, v)
    cu = np.cumsum(fu)
    cv = np.cumsum(fv)

    def le(c, i):  # f_{.,<=i} minus the {u,v} link's contribution
        if i < 0:
            return 0
        return int(c[i]) - (1 if luv <= i else 0)

    if mode == "exact":
        first = int(fu[j]) - (1 if luv == j else 0)
    else:
        first = le(cu, j)
    second = int(fv[k]) - (1 if luv == k else 0)
    a = m * m - le(cu, j) * le(cv, j)
    b = m * m - le(cu, j - 1) * le(cv, j - 1)
    weight = sum(a ** (r - 1) * b ** (d - r) for r in range(1, d + 1))
    # exact integer arithmetic, one division at the end
    return first * second * weight / m ** (2 * d - 1)


def meanfield_gap(state: NetworkState, v: int, j: int, normalization: str = "n-1") -> float:
    """Per-state gap ``|g_{v,j}(x) - c * g_j(p)|`` against the mean-field rate.

    With ``normalization="n-1"`` the plug-in is ``p = f_v / (n - 1)`` and
    ``c = n - 1``; with ``"n-2"`` it is ``p = f_v / (n - 2)`` and ``c = n - 2``.
    """
    from .meanfield import OdeParams, g_field

    if not 0 <= j <= state.C - 1:
        raise ValueError(f"j must lie in [0, C-1], got {j}")
    if normalization not in ("n-1", "n-2"):
        raise ValueError("normalization must be 'n-1' or 'n-2'")
    c = state.n - 1 if normalization == "n-1" else state.n - 2
    prof = state.f_profile(v) / c
    params = OdeParams(lam=state.params.lam, C=state.C, d=state.params.d)
    return abs(g_exact(state, v, j) - c * g_field(prof, params, j))
