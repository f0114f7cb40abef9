"""Load-vector state of the routing chain on the complete graph K_n.

Nodes are numbered ``0..n-1``.  Unordered pairs ``{u, v}`` are indexed
canonically by ``(min, max)`` through :func:`pair_index`.  A call occupies
either its direct link or the two links ``{u, w}``, ``{v, w}`` through an
intermediate node ``w``.

Every live call is stored as one integer *route key*::

    key = pair * (n + 1)            # direct call on pair
    key = pair * (n + 1) + w + 1    # call on pair routed via w

The registry of live calls is a pair of parallel lists (route keys and
stable call ids) with swap-removal, so a uniformly chosen call can be
removed in O(1).
"""

from __future__ import annotations

import functools
import math
from dataclasses import dataclass
from typing import Iterator, NamedTuple, Union

import numpy as np


class StateError(ValueError):
    """Raised when an event would violate the state invariants."""


@dataclass(frozen=True)
class ModelParams:
    """Parameters of the routing model.

    Attributes:
        n: number of nodes (>= 2).
        C: capacity of every link (>= 1).
        d: number of alternative intermediate nodes sampled per blocked call.
        lam: arrival rate per link, so the total arrival rate is ``lam * n(n-1)/2``.
    """

    n: int
    C: int
    d: int
    lam: float

    def __post_init__(self):
        if int(self.n) != self.n or self.n < 2:
            raise ValueError(f"n must be an integer >= 2, got {self.n!r}")
        if int(self.C) != self.C or self.C < 1:
            raise ValueError(f"C must be an integer >= 1, got {self.C!r}")
        if int(self.d) != self.d or self.d < 1:
            raise ValueError(f"d must be an integer >= 1, got {self.d!r}")
        if not (self.lam > 0) or math.isinf(self.lam):
            raise ValueError(f"lambda must be a positive real, got {self.lam!r}")

    @property
    def num_links(self) -> int:
        return self.n * (self.n - 1) // 2

    @property
    def departure_slots(self) -> int:
        """``floor(6 * lam * N)``: number of potential-departure slots of the jump chain."""
        return math.floor(6 * self.lam * self.num_links)

    @property
    def arrival_probability(self) -> float:
        """Probability that a jump-chain step is an arrival."""
        rate = self.lam * self.num_links
        return rate / (rate + self.departure_slots)


def pair_index(u: int, v: int, n: int) -> int:
    """Closed-form index of the unordered pair ``{u, v}`` among ``n(n-1)/2`` pairs."""
    if u == v:
        raise ValueError("a pair needs two distinct nodes")
    if u > v:
        u, v = v, u
    return u * (2 * n - u - 1) // 2 + (v - u - 1)


@functools.lru_cache(maxsize=16)
def _tables(n: int):
    # pidx[u][v] -> pair index (diagonal -1); pair_u/pair_v invert it
    pidx = [[-1] * n for _ in range(n)]
    pair_u, pair_v = [], []
    p = 0
    for u in range(n):
        for v in range(u + 1, n):
            pidx[u][v] = pidx[v][u] = p
            pair_u.append(u)
            pair_v.append(v)
            p += 1
    pidx = tuple(tuple(row) for row in pidx)
    mat = np.array(pidx, dtype=np.int64)
    # the diagonal points at a sentinel slot appended after the last pair
    mat[np.arange(n), np.arange(n)] = p
    mat.setflags(write=False)
    return pidx, tuple(pair_u), tuple(pair_v), mat


def pair_tables(n: int):
    """Return ``(pidx, pair_u, pair_v, pair_matrix)`` lookup tables for ``K_n``.

    ``pair_matrix`` is an ``n x n`` integer array whose diagonal holds the
    sentinel index ``n(n-1)/2``.
    """
    return _tables(n)


class Call(NamedTuple):
    id: int
    u: int
    v: int
    via: int | None  # None for a direct call


class DirectArrival(NamedTuple):
    u: int
    v: int


class AltArrival(NamedTuple):
    u: int
    v: int
    w: int


class Departure(NamedTuple):
    call_id: int


Event = Union[DirectArrival, AltArrival, Departure]


class NetworkState:
    """Mutable load vector ``x`` together with its live-call registry.

    Attributes:
        params: the model parameters.
        load: list of link loads ``x(e)`` indexed by pair index.
        direct: list of direct-call counts ``x(e, 0)``.
        alt: sparse dict ``pair * n + w -> x(e, w)``; zero entries are dropped.
    """

    def __init__(self, params: ModelParams):
        self.params = params
        n = params.n
        self.n = n
        self.C = params.C
        self.N = params.num_links
        self.pidx, self.pair_u, self.pair_v, self._pair_matrix = pair_tables(n)
        self.load = [0] * self.N
        self.direct = [0] * self.N
        self.alt: dict[int, int] = {}
        self.routes: list[int] = []  # route key of the call in each registry slot
        self.ids: list[int] = []
        self._slot_of: dict[int, int] = {}
        self._next_id = 0

    @classmethod
    def empty(cls, params: ModelParams) -> "NetworkState":
        return cls(params)

    # -- basic observables -------------------------------------------------

    @property
    def num_calls(self) -> int:
        """``||x||_1``: one unit per call, whether direct or alternative."""
        return len(self.routes)

    norm1 = num_calls

    def link_load(self, u: int, v: int) -> int:
        return self.load[self.pidx[u][v]]

    def direct_count(self, u: int, v: int) -> int:
        return self.direct[self.pidx[u][v]]

    def alt_count(self, u: int, v: int, w: int) -> int:
        return self.alt.get(self.pidx[u][v] * self.n + w, 0)

    def f_profile(self, v: int) -> np.ndarray:
        """Counts ``(f_{v,0}, ..., f_{v,C})`` of links at ``v`` by load."""
        if not 0 <= v < self.n:
            raise IndexError(f"node {v} out of range for n={self.n}")
        row = self.pidx[v]
        load = self.load
        out = np.zeros(self.C + 1, dtype=np.int64)
        for w in range(self.n):
            if w != v:
                out[load[row[w]]] += 1
        return out

    def load_matrix(self) -> np.ndarray:
        """``n x n`` matrix of link loads with ``-1`` on the diagonal."""
        arr = np.empty(self.N + 1, dtype=np.int64)
        arr[: self.N] = self.load
        arr[self.N] = -1
        return arr[self._pair_matrix]

    def f_profiles(self, nodes=None) -> np.ndarray:
        """Profiles for many nodes at once, shape ``(len(nodes), C + 1)``."""
        L = self.load_matrix()
        if nodes is not None:
            L = L[np.asarray(nodes, dtype=np.int64)]
        return np.stack([(L == k).sum(axis=1) for k in range(self.C + 1)], axis=1)

    def alt_per_pair(self) -> np.ndarray:
        """``sum_w x(e, w)`` for every pair ``e``."""
        out = np.zeros(self.N, dtype=np.int64)
        n = self.n
        for key, c in self.alt.items():
            out[key // n] += c
        return out

    def region_membership(self) -> dict[str, bool]:
        """Membership in the nested regions ``S_1 ⊆ S_0 ⊆ S~`` (2, 4, 6 times ``lam N``)."""
        m = self.num_calls
        base = self.params.lam * self.N
        return {"in_S1": m <= 2 * base, "in_S0": m <= 4 * base, "in_Stilde": m <= 6 * base}

    def calls(self) -> Iterator[Call]:
        span = self.n + 1
        for key, cid in zip(self.routes, self.ids):
            p, tag = divmod(key, span)
            yield Call(cid, self.pair_u[p], self.pair_v[p], None if tag == 0 else tag - 1)

    # -- mutation ------------------------------------------------------------

    def add_direct(self, p: int) -> int:
        """Place a direct call on pair ``p`` without checks; returns the call id."""
        self.load[p] += 1
        self.direct[p] += 1
        return self._register(p * (self.n + 1))

    def add_alt(self, p: int, w: int) -> int:
        """Place a call for pair ``p`` via ``w`` without checks; returns the call id."""
        row = self.pidx[w]
        self.load[row[self.pair_u[p]]] += 1
        self.load[row[self.pair_v[p]]] += 1
        key = p * self.n + w
        self.alt[key] = self.alt.get(key, 0) + 1
        return self._register(p * (self.n + 1) + w + 1)

    def _register(self, route: int) -> int:
        cid = self._next_id
        self._next_id += 1
        self._slot_of[cid] = len(self.routes)
        self.routes.append(route)
        self.ids.append(cid)
        return cid

    def remove_slot(self, slot: int) -> int:
        """Remove the call held in registry slot ``slot``; returns its route key."""
        routes, ids = self.routes, self.ids
        route = routes[slot]
        cid = ids[slot]
        last = len(routes) - 1
        if slot != last:
            routes[slot] = routes[last]
            moved = ids[last]
            ids[slot] = moved
            self._slot_of[moved] = slot
        routes.pop()
        ids.pop()
        del self._slot_of[cid]
        p, tag = divmod(route, self.n + 1)
        if tag == 0:
            self.load[p] -= 1
            self.direct[p] -= 1
        else:
            w = tag - 1
            row = self.pidx[w]
            self.load[row[self.pair_u[p]]] -= 1
            self.load[row[self.pair_v[p]]] -= 1
            key = p * self.n + w
            c = self.alt[key] - 1
            if c:
                self.alt[key] = c
            else:
                del self.alt[key]
        return route

    def remove_route(self, route: int) -> None:
        """Remove one live call with the given route key."""
        try:
            slot = self.routes.index(route)
        except ValueError:
            raise StateError(f"no live call on route {route}") from None
        self.remove_slot(slot)

    def route_count(self, route: int) -> int:
        p, tag = divmod(route, self.n + 1)
        if tag == 0:
            return self.direct[p]
        return self.alt.get(p * self.n + tag - 1, 0)

    def apply_event(self, event: Event) -> int | None:
        """Apply an arrival or departure after validating it.

        Returns the new call id for arrivals and ``None`` for departures.

        Raises:
            StateError: capacity violation, unknown call id, or a via node
                that coincides with an endpoint.
        """
        n, C = self.n, self.C
        if isinstance(event, Departure):
            slot = self._slot_of.get(event.call_id)
            if slot is None:
                raise StateError(f"unknown call id {event.call_id}")
            self.remove_slot(slot)
            return None
        u, v = event.u, event.v
        for node in (u, v):
            if not 0 <= node < n:
                raise StateError(f"node {node} out of range")
        if u == v:
            raise StateError("call endpoints must differ")
        p = self.pidx[u][v]
        if isinstance(event, DirectArrival):
            if self.load[p] >= C:
                raise StateError(f"link {{{u},{v}}} is full")
            return self.add_direct(p)
        if isinstance(event, AltArrival):
            w = event.w
            if not 0 <= w < n or w in (u, v):
                raise StateError(f"invalid intermediate node {w} for pair {{{u},{v}}}")
            if self.load[self.pidx[u][w]] >= C or self.load[self.pidx[v][w]] >= C:
                raise StateError(f"route {{{u},{v}}} via {w} is full")
            return self.add_alt(p, w)
        raise TypeError(f"unknown event {event!r}")

    # -- copies and checks ---------------------------------------------------

    def copy(self) -> "NetworkState":
        new = NetworkState.__new__(NetworkState)
        new.__dict__.update(self.__dict__)
        new.load = list(self.load)
        new.direct = list(self.direct)
        new.alt = dict(self.alt)
        new.routes = list(self.routes)
        new.ids = list(self.ids)
        new._slot_of = dict(self._slot_of)
        return new

    def same_counts(self, other: "NetworkState") -> bool:
        """True when both states have identical load-vector coordinates."""
        return (
            self.params == other.params
            and self.direct == other.direct
            and self.alt == other.alt
            and self.load == other.load
        )

    def validate(self) -> None:
        """Recompute every derived quantity from the registry and compare.

        Raises:
            StateError: on the first inconsistency found.
        """
        n, N, span = self.n, self.N, self.n + 1
        load = [0] * N
        direct = [0] * N
        alt: dict[int, int] = {}
        for key in self.routes:
            p, tag = divmod(key, span)
            if tag == 0:
                direct[p] += 1
            else:
                w = tag - 1
                if w in (self.pair_u[p], self.pair_v[p]):
                    raise StateError("via node equals an endpoint")
                k = p * n + w
                alt[k] = alt.get(k, 0) + 1
        for p in range(N):
            load[p] = direct[p]
        for k, c in alt.items():
            p, w = divmod(k, n)
            load[self.pidx[self.pair_u[p]][w]] += c
            load[self.pidx[self.pair_v[p]][w]] += c
        if direct != self.direct:
            raise StateError("direct counts disagree with registry")
        if alt != self.alt:
            raise StateError("alternative counts disagree with registry")
        if load != self.load:
            raise StateError("link loads violate the load identity")
        if any(x < 0 or x > self.C for x in self.load):
            raise StateError("link load outside [0, C]")
        if len(self.ids) != len(self.routes) or len(self._slot_of) != len(self.ids):
            raise StateError("registry length mismatch")
        for slot, cid in enumerate(self.ids):
            if self._slot_of[cid] != slot:
                raise StateError("registry slot map is stale")

    def __repr__(self):
        p = self.params
        return f"NetworkState(n={p.n}, C={p.C}, d={p.d}, lam={p.lam}, calls={self.num_calls})"

    # -- snapshot text format --------------------------------------------------

    def dumps(self) -> str:
        p = self.params
        lines = [f"n {p.n}", f"C {p.C}", f"d {p.d}", f"lambda {p.lam!r}"]
        for call in self.calls():
            if call.via is None:
                lines.append(f"call {call.u} {call.v} D")
            else:
                lines.append(f"call {call.u} {call.v} V {call.via}")
        return "\n".join(lines) + "\n"

    @classmethod
    def loads(cls, text: str) -> "NetworkState":
        """Rebuild a state from :meth:`dumps` output, replaying every call."""
        header: dict[str, str] = {}
        calls = []
        for lineno, raw in enumerate(text.splitlines(), 1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            if parts[0] == "call":
                calls.append((lineno, parts[1:]))
            elif len(parts) == 2:
                header[parts[0]] = parts[1]
            else:
                raise ValueError(f"line {lineno}: cannot parse {raw!r}")
        try:
            params = ModelParams(
                n=int(header["n"]), C=int(header["C"]), d=int(header["d"]), lam=float(header["lambda"])
            )
        except KeyError as exc:
            raise ValueError(f"missing header field {exc}") from None
        state = cls(params)
        for lineno, fields in calls:
            if len(fields) == 3 and fields[2] == "D":
                state.apply_event(DirectArrival(int(fields[0]), int(fields[1])))
            elif len(fields) == 4 and fields[2] == "V":
                state.apply_event(AltArrival(int(fields[0]), int(fields[1]), int(fields[3])))
            else:
                raise ValueError(f"line {lineno}: malformed call record")
        return state


def new_empty(params: ModelParams) -> NetworkState:
    return NetworkState(params)


def route_key(p: int, via: int | None, n: int) -> int:
    return p * (n + 1) + (0 if via is None else via + 1)
