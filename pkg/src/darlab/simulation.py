"""Event-driven evolution of the routing chain.

Two modes are provided.

* ``CTMC``: the exact continuous-time chain.  With ``m`` live calls and
  ``N = n(n-1)/2`` links the next event arrives after an
  ``Exp(lam * N + m)`` holding time and is an arrival with probability
  ``lam * N / (lam * N + m)``.
* ``JUMP``: the uniformised discrete chain.  Each step is an arrival with
  probability ``lam N / (lam N + M)``, ``M = floor(6 lam N)``, otherwise a
  potential departure that removes the call in a uniformly drawn slot of
  ``{0, ..., M-1}`` if that slot is occupied.  The chain is frozen while
  the call count exceeds ``M``.

Each step consumes uniforms in a fixed order (event coin, pair, candidate
nodes, departure slot) and only draws what its branch needs, so that two
chains fed the same stream stay aligned.
"""

from __future__ import annotations

import csv
import enum
import math
import random
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .network import ModelParams, NetworkState
from .routing import PolicyKind, route_on_loads, sample_candidates
from .rng import replica_rng

__all__ = [
    "SimMode",
    "SimConfig",
    "Snapshot",
    "Trajectory",
    "Simulator",
    "step_ctmc",
    "step_jump_chain",
    "run",
    "run_jump_chain_for_time",
    "generate_initial_state",
    "allocate_calls",
]


class SimMode(enum.Enum):
    CTMC = "ctmc"
    JUMP = "jump"

    @classmethod
    def parse(cls, text):
        if isinstance(text, cls):
            return text
        key = str(text).strip().lower()
        if key in ("ctmc", "continuous"):
            return cls.CTMC
        if key in ("jump", "jumpchain", "jump_chain", "jump-chain"):
            return cls.JUMP
        raise ValueError(f"unknown simulation mode {text!r}")


class Simulator:
    """One replica: a state, a policy, a random stream and event counters.

    Attributes:
        arrivals: number of arrival events (routed or blocked).
        blocked: number of arrivals that found no feasible route.
        departures: number of calls that left.
        steps: number of calls to a step method.
    """

    def __init__(self, state: NetworkState, policy: PolicyKind = PolicyKind.BDAR,
                 rng: random.Random | None = None):
        self.state = state
        self.policy = PolicyKind.parse(policy)
        self.rng = rng if rng is not None else random.Random(0)
        p = state.params
        self.arrival_rate = p.lam * p.num_links
        self.slots = p.departure_slots
        self.p_arrival = p.arrival_probability
        self.arrivals = 0
        self.blocked = 0
        self.departures = 0
        self.steps = 0
        self.last_route = None  # route key added or removed by the last event, if any

    def _arrive(self) -> None:
        st = self.state
        rnd = self.rng.random
        self.arrivals += 1
        p = int(rnd() * st.N)
        u = st.pair_u[p]
        v = st.pair_v[p]
        policy = self.policy
        if policy is not PolicyKind.NO_DIRECT_BDAR and st.load[p] < st.C:
            st.add_direct(p)
            self.last_route = p * (st.n + 1)
            return
        cands = sample_candidates(self.rng, st.n, u, v, st.params.d)
        i = route_on_loads(st.load, st.pidx, st.C, policy, u, v, cands)
        if i < 0:
            self.blocked += 1
            self.last_route = None
        else:
            st.add_alt(p, cands[i])
            self.last_route = p * (st.n + 1) + cands[i] + 1

    def step_ctmc(self) -> float:
        """Apply one event of the continuous-time chain; returns the holding time."""
        st = self.state
        m = len(st.routes)
        rate = self.arrival_rate + m
        dt = self.rng.expovariate(rate)
        self.steps += 1
        if self.rng.random() * rate < self.arrival_rate:
            self._arrive()
        else:
            self.last_route = st.remove_slot(int(self.rng.random() * m))
            self.departures += 1
        return dt

    def step_jump_chain(self) -> None:
        """Apply one step of the uniformised jump chain."""
        st = self.state
        self.steps += 1
        m = len(st.routes)
        self.last_route = None
        if m > self.slots:
            return
        rnd = self.rng.random
        if rnd() < self.p_arrival:
            self._arrive()
        else:
            s = int(rnd() * self.slots)
            if s < m:
                self.last_route = st.remove_slot(s)
                self.departures += 1

    def advance_ctmc(self, t: float) -> float:
        """Run CTMC events up to time ``t``; returns the time consumed (``t``).

        The final sampled holding time that overshoots ``t`` is discarded,
        which is exact by memorylessness.
        """
        elapsed = 0.0
        st = self.state
        rng = self.rng
        lamN = self.arrival_rate
        while True:
            m = len(st.routes)
            rate = lamN + m
            elapsed += rng.expovariate(rate)
            if elapsed > t:
                return t
            self.steps += 1
            if rng.random() * rate < lamN:
                self._arrive()
            else:
                st.remove_slot(int(rng.random() * m))
                self.departures += 1


def step_ctmc(state: NetworkState, rng: random.Random, policy: PolicyKind = PolicyKind.BDAR) -> float:
    """One CTMC event on ``state``; returns the elapsed holding time."""
    return Simulator(state, policy, rng).step_ctmc()


def step_jump_chain(state: NetworkState, rng: random.Random, policy: PolicyKind = PolicyKind.BDAR) -> None:
    """One jump-chain step on ``state``."""
    Simulator(state, policy, rng).step_jump_chain()


def run_jump_chain_for_time(sim: Simulator, t: float) -> int:
    """Compose jump-chain steps over continuous time ``t``.

    The number of steps is Poisson with mean ``(lam N + M) t``, realised by
    summing exponential gaps.  Returns the number of steps taken.
    """
    rate = sim.arrival_rate + sim.slots
    rng = sim.rng
    k = 0
    elapsed = rng.expovariate(rate)
    while elapsed <= t:
        sim.step_jump_chain()
        k += 1
        elapsed += rng.expovariate(rate)
    return k


# -- whole runs ----------------------------------------------------------------


@dataclass
class SimConfig:
    """Configuration of one simulated run.

    Attributes:
        params: model parameters.
        policy: routing policy.
        mode: CTMC (``t0`` is a time) or JUMP (``t0`` is a step budget).
        seed: master seed; replica ``r`` uses the stream of ``(seed, r)``.
        t0: horizon.
        snapshot_times: sorted observation times in ``[0, t0]``; defaults
            to 21 equispaced points (rounded to integers in JUMP mode).
        node_sample: optional node subset recorded in snapshots.
        track_phi: compute the phi statistics at every snapshot.
    """

    params: ModelParams
    policy: PolicyKind = PolicyKind.BDAR
    mode: SimMode = SimMode.CTMC
    seed: int = 0
    t0: float = 1.0
    snapshot_times: Optional[Sequence[float]] = None
    node_sample: Optional[Sequence[int]] = None
    track_phi: bool = False

    def __post_init__(self):
        self.policy = PolicyKind.parse(self.policy)
        self.mode = SimMode.parse(self.mode)
        if not self.t0 > 0:
            raise ValueError("t0 must be positive")
        if self.snapshot_times is None:
            grid = np.linspace(0.0, float(self.t0), 21)
            if self.mode is SimMode.JUMP:
                grid = np.unique(np.round(grid).astype(int))
            self.snapshot_times = [float(x) for x in grid]
        times = [float(x) for x in self.snapshot_times]
        if any(b <= a for a, b in zip(times, times[1:])):
            raise ValueError("snapshot_times must be strictly increasing")
        if times and (times[0] < 0 or times[-1] > self.t0):
            raise ValueError("snapshot grid outside [0, t0]")
        self.snapshot_times = times


@dataclass
class Snapshot:
    time: float
    profiles: np.ndarray  # (nodes, C+1)
    norm1: int
    blocked: int
    arrivals: int
    phi: Optional[object] = None  # PhiReport when tracked


@dataclass
class Trajectory:
    """Snapshots of one replica, in time order."""

    replica: int
    nodes: np.ndarray
    snapshots: list = field(default_factory=list)

    @property
    def times(self) -> np.ndarray:
        return np.array([s.time for s in self.snapshots])

    def profile_array(self) -> np.ndarray:
        """Array of shape ``(snapshots, nodes, C + 1)``."""
        return np.stack([s.profiles for s in self.snapshots])

    def same_as(self, other: "Trajectory") -> bool:
        if len(self.snapshots) != len(other.snapshots) or not np.array_equal(self.nodes, other.nodes):
            return False
        for a, b in zip(self.snapshots, other.snapshots):
            if (a.time, a.norm1, a.blocked, a.arrivals) != (b.time, b.norm1, b.blocked, b.arrivals):
                return False
            if not np.array_equal(a.profiles, b.profiles):
                return False
        return True

    def profile_rows(self):
        for s in self.snapshots:
            for i, v in enumerate(self.nodes):
                for k, c in enumerate(s.profiles[i]):
                    yield (s.time, self.replica, int(v), k, int(c))

    def summary_rows(self):
        for s in self.snapshots:
            ph = s.phi
            vals = (ph.phi1, ph.phi2, ph.phi3) if ph is not None else ("", "", "")
            yield (s.time, self.replica, *vals, s.norm1, s.blocked)

    def write_csv(self, profile_path, summary_path, append: bool = False) -> None:
        """Write ``t,replica,v,k,f_vk`` and ``t,replica,phi1,phi2,phi3,norm1,blocked`` files."""
        write_trajectories_csv([self], profile_path, summary_path, append=append)


def write_trajectories_csv(trajs, profile_path, summary_path, append: bool = False) -> None:
    mode = "a" if append else "w"
    with open(profile_path, mode, newline="") as fh:
        w = csv.writer(fh)
        if not append:
            w.writerow(["t", "replica", "v", "k", "f_vk"])
        for tr in trajs:
            w.writerows(tr.profile_rows())
    with open(summary_path, mode, newline="") as fh:
        w = csv.writer(fh)
        if not append:
            w.writerow(["t", "replica", "phi1", "phi2", "phi3", "norm1", "blocked"])
        for tr in trajs:
            w.writerows(tr.summary_rows())


def _snapshot(sim: Simulator, t: float, nodes, track_phi: bool) -> Snapshot:
    st = sim.state
    prof = st.f_profiles(nodes)
    phi = None
    if track_phi:
        from .observables import phi_report

        phi = phi_report(st)
    return Snapshot(t, prof, st.num_calls, sim.blocked, sim.arrivals, phi)


def run(config: SimConfig, initial: NetworkState, replica: int = 0, stream_key: int | None = None) -> Trajectory:
    """Simulate one replica from a copy of ``initial``.

    The result is a deterministic function of ``(config, initial, replica)``.
    In CTMC mode a snapshot at time ``s`` records the state just before the
    first event at time ``>= s``, that is the state at time ``s``.  In jump
    mode the snapshot at ``s`` records the state after ``s`` steps.

    ``stream_key`` adds one more component to the random-stream derivation,
    so sweeps over several ``n`` get unrelated streams.
    """
    if initial.params != config.params:
        raise ValueError("initial state does not match config.params")
    extra = () if stream_key is None else (0, stream_key)
    sim = Simulator(initial.copy(), config.policy, replica_rng(config.seed, replica, *extra))
    n = config.params.n
    nodes = np.arange(n) if config.node_sample is None else np.asarray(config.node_sample, dtype=np.int64)
    traj = Trajectory(replica, nodes)
    times = config.snapshot_times
    if config.mode is SimMode.CTMC:
        t = 0.0
        for s in times:
            if s > t:
                sim.advance_ctmc(s - t)
                t = s
            traj.snapshots.append(_snapshot(sim, s, nodes, config.track_phi))
        if t < config.t0:
            sim.advance_ctmc(config.t0 - t)
    else:
        done = 0
        budget = int(config.t0)
        for s in times:
            target = int(s)
            while done < target:
                sim.step_jump_chain()
                done += 1
            traj.snapshots.append(_snapshot(sim, s, nodes, config.track_phi))
        while done < budget:
            sim.step_jump_chain()
            done += 1
    traj.final_state = sim.state
    traj.simulator = sim
    return traj


# -- initial allocation ----------------------------------------------------------


def allocate_calls(state: NetworkState, rng: random.Random, attempts: int,
                   policy: PolicyKind = PolicyKind.BDAR) -> int:
    """Throw ``attempts`` calls onto ``state`` one at a time; returns the number lost."""
    sim = Simulator(state, policy, rng)
    for _ in range(attempts):
        sim._arrive()
    return sim.blocked


def generate_initial_state(rng: random.Random, params: ModelParams, c0: float,
                           policy: PolicyKind = PolicyKind.BDAR, return_lost: bool = False):
    """Sequential random allocation of ``floor(c0 * N)`` calls on an empty network.

    Each call picks uniform endpoints, takes the direct link when it has
    room, and otherwise routes by the policy over ``d`` uniform candidates;
    calls with no feasible route are lost.

    Args:
        rng: random stream.
        params: model parameters.
        c0: calls per link to attempt, must be positive.
        policy: routing rule (BDAR by default).
        return_lost: also return the number of lost attempts.

    Returns:
        NetworkState, or ``(state, lost)`` when ``return_lost`` is set.
    """
    if not c0 > 0:
        raise ValueError("c0 must be positive")
    state = NetworkState(params)
    attempts = math.floor(c0 * params.num_links)
    lost = allocate_calls(state, rng, attempts, policy)
    return (state, lost) if return_lost else state
