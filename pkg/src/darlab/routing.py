"""Routing decisions for a single arriving call.

All functions here are pure: they read link loads but never mutate a state.
Candidate lists are ordered, and the winning position is reported as a
1-based ``slot`` so that tie-breaking can be audited.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Sequence

__all__ = [
    "PolicyKind",
    "RouteDecision",
    "DIRECT",
    "BLOCKED",
    "route_call",
    "route_on_loads",
    "sample_candidates",
]


class PolicyKind(enum.Enum):
    """Routing policy variants.

    BDAR picks the feasible candidate minimising the larger leg load,
    FDAR picks the first feasible candidate, and NO_DIRECT_BDAR applies the
    BDAR rule without ever trying the direct link.
    """

    BDAR = "bdar"
    FDAR = "fdar"
    NO_DIRECT_BDAR = "nodirect"

    @classmethod
    def parse(cls, text: "str | PolicyKind") -> "PolicyKind":
        if isinstance(text, cls):
            return text
        key = str(text).strip().lower().replace("-", "").replace("_", "")
        aliases = {"bdar": cls.BDAR, "fdar": cls.FDAR, "nodirect": cls.NO_DIRECT_BDAR,
                   "nodirectbdar": cls.NO_DIRECT_BDAR}
        try:
            return aliases[key]
        except KeyError:
            raise ValueError(f"unknown policy {text!r}") from None


@dataclass(frozen=True)
class RouteDecision:
    """Outcome of routing one call.

    Attributes:
        outcome: ``"direct"``, ``"via"`` or ``"blocked"``.
        via: intermediate node when ``outcome == "via"``.
        slot: 1-based position of ``via`` in the candidate tuple.
    """

    outcome: str
    via: int | None = None
    slot: int | None = None

    @property
    def is_blocked(self) -> bool:
        return self.outcome == "blocked"


DIRECT = RouteDecision("direct")
BLOCKED = RouteDecision("blocked")


def route_on_loads(load, pidx, C: int, policy: PolicyKind, u: int, v: int, candidates) -> int:
    """Fast core of :func:`route_call` working on raw tables.

    Returns ``-1`` for a direct route, ``-2`` when blocked, otherwise the
    0-based index of the winning candidate.
    """
    ru = pidx[u]
    rv = pidx[v]
    if policy is not PolicyKind.NO_DIRECT_BDAR and load[ru[v]] < C:
        return -1
    if policy is PolicyKind.FDAR:
        for i, w in enumerate(candidates):
            if load[ru[w]] < C and load[rv[w]] < C:
                return i
        return -2
    best = C
    best_i = -2
    for i, w in enumerate(candidates):
        a = load[ru[w]]
        b = load[rv[w]]
        m = a if a > b else b
        if m < best:
            best = m
            best_i = i
    return best_i


def route_call(state, policy: PolicyKind, u: int, v: int, candidates: Sequence[int]) -> RouteDecision:
    """Decide how to route a call between ``u`` and ``v``.

    Args:
        state: a :class:`~darlab.network.NetworkState`; it is only read.
        policy: routing policy.
        u, v: distinct endpoints.
        candidates: ordered intermediate nodes, each different from ``u`` and ``v``;
            its length must equal ``state.params.d``.

    Returns:
        RouteDecision: direct, via the winning candidate, or blocked.
    """
    n = state.n
    if not (0 <= u < n and 0 <= v < n) or u == v:
        raise ValueError(f"invalid endpoints ({u}, {v})")
    if len(candidates) != state.params.d:
        raise ValueError(f"expected {state.params.d} candidates, got {len(candidates)}")
    for w in candidates:
        if not 0 <= w < n or w == u or w == v:
            raise ValueError(f"candidate {w} is not a valid intermediate node for ({u}, {v})")
    policy = PolicyKind.parse(policy)
    i = route_on_loads(state.load, state.pidx, state.C, policy, u, v, candidates)
    if i == -1:
        return DIRECT
    if i == -2:
        return BLOCKED
    return RouteDecision("via", candidates[i], i + 1)


def sample_candidates(rng, n: int, u: int, v: int, d: int) -> tuple:
    """Draw ``d`` intermediate nodes uniformly with replacement from ``V \\ {u, v}``.

    ``rng`` must expose ``random()`` returning a float in ``[0, 1)`` (a
    :class:`random.Random` works).  Exactly ``d`` uniforms are consumed.
    """
    if n < 3:
        raise ValueError("need at least three nodes to choose an intermediate node")
    a, b = (u, v) if u < v else (v, u)
    m = n - 2
    out = []
    for _ in range(d):
        w = int(rng.random() * m)
        if w >= a:
            w += 1
        if w >= b:
            w += 1
        out.append(w)
    return tuple(out)
