"""Shared-randomness coupling of two jump chains.

Both chains see the same event coin, the same endpoints and candidate
tuple on arrivals, and the same departure slot.  On a potential departure
the live calls are organised into *units*:

* same-route pairs (one call of ``x`` and one of ``y`` on the same route),
  as many as possible, that is ``min(cx[r], cy[r])`` per route ``r``;
* cross pairs: the remaining surplus calls of both sides, each side sorted
  by route key and zipped in that canonical order;
* unpaired surplus calls of the side with more calls.

There are ``max(|x|, |y|)`` units in total and each owns one slot of
``{0, ..., M-1}``.  Calls on the same route are interchangeable in the load
vector, so it is enough to know how many units of each kind sit on each
route.  The implementation therefore selects the unit through the larger
side's registry slot and, when a route holds both paired and surplus copies,
settles which copy was hit with one extra uniform.  Every unit still departs
with probability exactly ``1 / M``.
"""

from __future__ import annotations

import csv
import math
import random
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .network import NetworkState
from .routing import PolicyKind, route_on_loads, sample_candidates
from .rng import replica_rng

__all__ = [
    "DistanceReport",
    "l1_distance",
    "node_distance",
    "distance_report",
    "CoupledPair",
    "coupled_step",
    "GrowthStats",
    "coupling_growth_experiment",
]


def _check(x: NetworkState, y: NetworkState) -> None:
    if x.params != y.params:
        raise ValueError("states have different parameters")


def l1_distance(x: NetworkState, y: NetworkState) -> int:
    """Coordinatewise distance ``sum_e |x(e,0)-y(e,0)| + sum_{e,w} |x(e,w)-y(e,w)|``."""
    _check(x, y)
    total = sum(abs(a - b) for a, b in zip(x.direct, y.direct))
    keys = set(x.alt) | set(y.alt)
    total += sum(abs(x.alt.get(k, 0) - y.alt.get(k, 0)) for k in keys)
    return total


def node_distance(x: NetworkState, y: NetworkState, v: int) -> int:
    """Node-local distance at ``v``.

    Sums the direct and alternative differences over links at ``v`` and the
    differences of calls routed through ``v`` on links not containing ``v``.
    """
    _check(x, y)
    n = x.n
    if not 0 <= v < n:
        raise IndexError(f"node {v} out of range")
    row = x.pidx[v]
    total = 0
    for u in range(n):
        if u != v:
            p = row[u]
            total += abs(x.direct[p] - y.direct[p])
    for k in set(x.alt) | set(y.alt):
        p, w = divmod(k, n)
        if w == v or x.pair_u[p] == v or x.pair_v[p] == v:
            total += abs(x.alt.get(k, 0) - y.alt.get(k, 0))
    return total


@dataclass
class DistanceReport:
    l1: int
    per_node: np.ndarray


def distance_report(x: NetworkState, y: NetworkState) -> DistanceReport:
    return DistanceReport(l1_distance(x, y), np.array([node_distance(x, y, v) for v in range(x.n)]))


def _route_diff(x: NetworkState, y: NetworkState) -> dict:
    diff: dict[int, int] = {}
    for r in x.routes:
        diff[r] = diff.get(r, 0) + 1
    for r in y.routes:
        diff[r] = diff.get(r, 0) - 1
    return {r: c for r, c in diff.items() if c}


class CoupledPair:
    """Two jump chains evolved under the shared-randomness coupling.

    Attributes:
        x, y: the coupled states (mutated in place).
        diff: route key -> ``count_x - count_y`` for routes where they differ.
        l1: current coordinatewise distance, kept incrementally.
        last_kind: ``"arrival"``, ``"departure"`` or ``"frozen"`` for the last step.
    """

    def __init__(self, x: NetworkState, y: NetworkState, policy: PolicyKind = PolicyKind.BDAR,
                 rng: Optional[random.Random] = None):
        _check(x, y)
        self.x = x
        self.y = y
        self.policy = PolicyKind.parse(policy)
        self.rng = rng if rng is not None else random.Random(0)
        p = x.params
        self.slots = p.departure_slots
        self.p_arrival = p.arrival_probability
        self.diff = _route_diff(x, y)
        self.l1 = sum(abs(c) for c in self.diff.values())
        self.last_kind = None

    # -- bookkeeping -------------------------------------------------------

    def _bump(self, route: int, delta: int) -> None:
        diff = self.diff
        old = diff.get(route, 0)
        new = old + delta
        self.l1 += abs(new) - abs(old)
        if new:
            diff[route] = new
        else:
            del diff[route]

    def pairing(self):
        """Explicit unit list ``[(route_x or None, route_y or None), ...]`` in slot order.

        Same-route pairs come first (by route key), then cross pairs, then the
        unpaired surplus.  Only used for inspection; stepping does not build it.
        """
        cx: dict[int, int] = {}
        cy: dict[int, int] = {}
        for r in self.x.routes:
            cx[r] = cx.get(r, 0) + 1
        for r in self.y.routes:
            cy[r] = cy.get(r, 0) + 1
        units = []
        for r in sorted(set(cx) & set(cy)):
            units.extend([(r, r)] * min(cx[r], cy[r]))
        sx = sorted(r for r, c in self.diff.items() if c > 0 for _ in range(c))
        sy = sorted(r for r, c in self.diff.items() if c < 0 for _ in range(-c))
        k = min(len(sx), len(sy))
        units.extend(zip(sx[:k], sy[:k]))
        units.extend((r, None) for r in sx[k:])
        units.extend((None, r) for r in sy[k:])
        return units

    # -- single-chain pieces -------------------------------------------------

    def _route(self, st: NetworkState, p: int, cands) -> int | None:
        """Route an arrival on pair ``p``; returns the added route key or None if blocked."""
        span = st.n + 1
        if self.policy is not PolicyKind.NO_DIRECT_BDAR and st.load[p] < st.C:
            st.add_direct(p)
            return p * span
        i = route_on_loads(st.load, st.pidx, st.C, self.policy, st.pair_u[p], st.pair_v[p], cands)
        if i < 0:
            return None
        st.add_alt(p, cands[i])
        return p * span + cands[i] + 1

    def _needs_candidates(self, st: NetworkState, p: int) -> bool:
        return self.policy is PolicyKind.NO_DIRECT_BDAR or st.load[p] >= st.C

    def _solo_step(self, st: NetworkState, sign: int) -> None:
        """Jump-chain step of one side while the other is frozen."""
        rnd = self.rng.random
        if rnd() < self.p_arrival:
            self.last_kind = "arrival"
            p = int(rnd() * st.N)
            cands = None
            if self._needs_candidates(st, p):
                cands = sample_candidates(self.rng, st.n, st.pair_u[p], st.pair_v[p], st.params.d)
            r = self._route(st, p, cands)
            if r is not None:
                self._bump(r, sign)
        else:
            self.last_kind = "departure"
            s = int(rnd() * self.slots)
            if s < len(st.routes):
                r = st.remove_slot(s)
                self._bump(r, -sign)

    # -- the coupled step ----------------------------------------------------------

    def step(self) -> None:
        x, y = self.x, self.y
        M = self.slots
        mx, my = len(x.routes), len(y.routes)
        x_in, y_in = mx <= M, my <= M
        if not (x_in and y_in):
            if x_in:
                self._solo_step(x, +1)
            elif y_in:
                self._solo_step(y, -1)
            else:
                self.last_kind = "frozen"
            return
        rnd = self.rng.random
        if rnd() < self.p_arrival:
            self.last_kind = "arrival"
            p = int(rnd() * x.N)
            cands = None
            if self._needs_candidates(x, p) or self._needs_candidates(y, p):
                cands = sample_candidates(self.rng, x.n, x.pair_u[p], x.pair_v[p], x.params.d)
            rx = self._route(x, p, cands)
            ry = self._route(y, p, cands)
            if rx != ry:
                if rx is not None:
                    self._bump(rx, +1)
                if ry is not None:
                    self._bump(ry, -1)
            return
        self.last_kind = "departure"
        s = int(rnd() * M)
        if s >= (mx if mx >= my else my):
            return
        if not self.diff:  # identical states: every unit is a same-route pair
            r = x.remove_slot(s)
            y.remove_route(r)
            return
        # select through the larger side Z; W is the other side
        if mx >= my:
            Z, W, zsign = x, y, 1
        else:
            Z, W, zsign = y, x, -1
        r = Z.routes[s]
        cz = Z.route_count(r)
        surplus_here = zsign * self.diff.get(r, 0)
        if surplus_here < 0:
            surplus_here = 0
        paired_here = cz - surplus_here
        if surplus_here == 0 or (paired_here > 0 and rnd() * cz < paired_here):
            # same-route pair on r: both sides lose one call on r, distance unchanged
            Z.remove_slot(s)
            W.remove_route(r)
            return
        # a surplus call of Z on route r; find its canonical rank among Z's surplus
        zsur = sorted((q, zsign * c) for q, c in self.diff.items() if zsign * c > 0)
        wsur = sorted((q, -zsign * c) for q, c in self.diff.items() if zsign * c < 0)
        rank = 0
        for q, c in zsur:
            if q == r:
                break
            rank += c
        if surplus_here > 1:
            rank += int(rnd() * surplus_here)
        Z.remove_slot(s)
        self._bump(r, -zsign)
        n_w = sum(c for _, c in wsur)
        if rank < n_w:
            for q, c in wsur:
                if rank < c:
                    W.remove_route(q)
                    self._bump(q, zsign)
                    break
                rank -= c

    def run(self, steps: int) -> None:
        for _ in range(steps):
            self.step()


def coupled_step(pair: CoupledPair, rng: Optional[random.Random] = None) -> None:
    """Advance ``pair`` by one coupled step (optionally replacing its stream)."""
    if rng is not None:
        pair.rng = rng
    pair.step()


@dataclass
class GrowthStats:
    """Per-step statistics of the coupled distance.

    Index ``t`` of ``mean_l1``/``se_l1`` refers to the distance after ``t``
    steps; index ``t`` of ``growth_factor``/``factor_se`` refers to the step
    from ``t`` to ``t + 1``.
    """

    mean_l1: np.ndarray
    se_l1: np.ndarray
    growth_factor: np.ndarray
    factor_se: np.ndarray
    bound: float
    replicas: int

    def write_csv(self, path) -> None:
        """CSV with header ``step,mean_l1,se_l1,growth_factor,bound``."""
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["step", "mean_l1", "se_l1", "growth_factor", "bound"])
            for t in range(len(self.mean_l1)):
                gf = "" if t == 0 else repr(float(self.growth_factor[t - 1]))
                w.writerow([t, repr(float(self.mean_l1[t])), repr(float(self.se_l1[t])), gf, repr(self.bound)])

    def violations(self, k_se: float = 3.0) -> np.ndarray:
        """Steps whose growth factor exceeds ``bound + k_se * factor_se``."""
        ok = np.isfinite(self.growth_factor)
        bad = ok & (self.growth_factor > self.bound + k_se * self.factor_se)
        return np.nonzero(bad)[0]


def coupling_growth_experiment(x0: NetworkState, y0: NetworkState, steps: int, replicas: int,
                               seed: int = 0, policy: PolicyKind = PolicyKind.BDAR,
                               first_replica: int = 0) -> GrowthStats:
    """Monte-Carlo estimate of ``E ||X_t - Y_t||_1`` under the coupling.

    Every replica restarts from copies of ``x0`` and ``y0`` with its own
    stream.  The per-step growth factor is ``m_{t+1} / m_t``; its standard
    error is that of the mean one-step increment divided by ``m_t``.
    """
    _check(x0, y0)
    if replicas < 1 or steps < 1:
        raise ValueError("need at least one replica and one step")
    N = x0.params.num_links
    d = x0.params.d
    paths = np.empty((replicas, steps + 1), dtype=np.int64)
    for r in range(replicas):
        pair = CoupledPair(x0.copy(), y0.copy(), policy, replica_rng(seed, first_replica + r))
        row = paths[r]
        row[0] = pair.l1
        for t in range(1, steps + 1):
            pair.step()
            row[t] = pair.l1
    return growth_stats_from_paths(paths, 1.0 + 12.0 * d / N)


def growth_stats_from_paths(paths: np.ndarray, bound: float) -> GrowthStats:
    paths = np.asarray(paths, dtype=np.float64)
    R = paths.shape[0]
    mean = paths.mean(axis=0)
    se = paths.std(axis=0, ddof=1) / math.sqrt(R) if R > 1 else np.zeros(paths.shape[1])
    inc = np.diff(paths, axis=1)
    inc_se = inc.std(axis=0, ddof=1) / math.sqrt(R) if R > 1 else np.zeros(inc.shape[1])
    prev = mean[:-1]
    with np.errstate(divide="ignore", invalid="ignore"):
        factor = np.where(prev > 0, mean[1:] / prev, np.nan)
        fse = np.where(prev > 0, inc_se / prev, np.nan)
    return GrowthStats(mean, se, factor, fse, bound, R)
