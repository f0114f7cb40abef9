"""End-to-end experiments over replicas and an n-grid.

Every runner takes an :class:`ExperimentSpec`, is a deterministic function
of it, and optionally writes CSV files plus a ``manifest.txt`` holding the
resolved spec into ``spec.output_dir``.  Aggregates are computed in replica
order, so the optional process pool (``workers > 1``) does not change any
number.
"""

from __future__ import annotations

import csv
import enum
import hashlib
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Optional

import numpy as np

from .coupling import CoupledPair, GrowthStats, growth_stats_from_paths, l1_distance
from .meanfield import OdeParams, Variant, fixed_point, integrate, theorem_constants
from .network import ModelParams, NetworkState
from .observables import drift_table, generator_bruteforce, phi_report
from .rng import numpy_rng, replica_rng
from .routing import PolicyKind
from .simulation import SimConfig, SimMode, Simulator, generate_initial_state, run

__all__ = [
    "ExperimentKind",
    "ExperimentSpec",
    "LlnReport",
    "ConcentrationReport",
    "PhiDriftReport",
    "GeneratorCheckReport",
    "OdeReport",
    "initial_state",
    "run_lln",
    "run_concentration",
    "run_phi_drift",
    "run_coupling",
    "run_generator_check",
    "run_ode",
    "run_experiment",
    "load_kv",
    "spec_from_mapping",
]

# sub-stream tags keep the different uses of one (seed, replica) apart
_STREAM_SIM = 0
_STREAM_INIT = 1
_STREAM_NODES = 2
_STREAM_TUPLES = 3


class ExperimentKind(enum.Enum):
    LLN = "lln"
    CONCENTRATION = "conc"
    PHI_DRIFT = "phi"
    COUPLING = "couple"
    GENERATOR_CHECK = "gencheck"
    ODE = "ode"


@dataclass
class ExperimentSpec:
    """Full description of an experiment.

    Attributes:
        kind: which runner to use.
        lam, C, d: model parameters shared by every ``n`` in ``n_grid``.
        policy: routing policy; the no-direct policy selects the no-direct ODE.
        mode: simulation mode for trajectory experiments.
        seed: master seed.
        t0: time horizon (CTMC) or step budget (jump chain).
        n_grid: node counts to sweep.
        replicas: replicas per ``n``.
        initial: ``"empty"``, ``"random"`` (sequential allocation of
            ``c0 * N`` calls) or ``"file"`` (snapshot at ``initial_path``).
        c0: allocation density for ``initial="random"``.
        shared_initial: draw one initial state per ``n`` shared by all
            replicas instead of re-drawing per replica.
        node_sample: nodes used for sup-over-v statistics when ``n`` exceeds
            ``node_sample_threshold`` (a seeded uniform sample).
        steps: jump-chain steps for the phi-drift and coupling runs.
        tuples: number of sampled ``(u, v, j, k)`` in the phi-drift run.
        distance: initial coupling distance (extra direct calls in ``y0``).
        workers: process-pool size for replicas (1 runs inline).
    """

    kind: ExperimentKind = ExperimentKind.LLN
    lam: float = 1.0
    C: int = 3
    d: int = 2
    policy: PolicyKind = PolicyKind.BDAR
    mode: SimMode = SimMode.CTMC
    seed: int = 0
    t0: float = 1.0
    n_grid: tuple = (50,)
    replicas: int = 20
    initial: str = "empty"
    c0: float = 0.5
    initial_path: Optional[str] = None
    shared_initial: bool = False
    node_sample: int = 64
    node_sample_threshold: int = 200
    snapshots: int = 21
    steps: int = 500
    tuples: int = 32
    phi_every: int = 1000
    distance: int = 10
    workers: int = 1
    output_dir: Optional[str] = None

    def __post_init__(self):
        self.kind = ExperimentKind(self.kind) if not isinstance(self.kind, ExperimentKind) else self.kind
        self.policy = PolicyKind.parse(self.policy)
        self.mode = SimMode.parse(self.mode)
        self.n_grid = tuple(int(n) for n in self.n_grid)
        if not self.n_grid:
            raise ValueError("n_grid must be nonempty")
        if self.replicas < 0 or (self.replicas == 0 and self.kind is not ExperimentKind.LLN
                                 and self.kind is not ExperimentKind.ODE):
            raise ValueError("replicas must be at least 1")
        if self.initial not in ("empty", "random", "file"):
            raise ValueError(f"unknown initial condition {self.initial!r}")
        if self.initial == "file" and not self.initial_path:
            raise ValueError("initial='file' needs initial_path")

    def params(self, n: int) -> ModelParams:
        return ModelParams(n=n, C=self.C, d=self.d, lam=self.lam)

    def ode_params(self) -> OdeParams:
        variant = Variant.NO_DIRECT if self.policy is PolicyKind.NO_DIRECT_BDAR else Variant.WITH_DIRECT
        return OdeParams(lam=self.lam, C=self.C, d=self.d, variant=variant)

    def as_items(self) -> list:
        out = []
        for f in fields(self):
            val = getattr(self, f.name)
            if isinstance(val, enum.Enum):
                val = val.value
            elif isinstance(val, tuple):
                val = ",".join(str(x) for x in val)
            out.append((f.name, "" if val is None else str(val)))
        return out

    def spec_hash(self) -> str:
        text = "\n".join(f"{k}={v}" for k, v in self.as_items() if k not in ("workers", "output_dir"))
        return hashlib.sha256(text.encode()).hexdigest()[:12]


# -- key-value configuration ------------------------------------------------------


def load_kv(path) -> dict:
    """Parse ``key = value`` lines; ``#`` starts a comment."""
    out = {}
    with open(path) as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"{path}:{lineno}: expected key = value")
            key, val = (s.strip() for s in line.split("=", 1))
            out[key] = val
    return out


_ALIASES = {"lambda": "lam", "n": "n_grid", "cap": "C"}


def spec_from_mapping(mapping: dict, **overrides) -> ExperimentSpec:
    """Build a spec from string values (config file or CLI), applying overrides last."""
    types = {f.name: f for f in fields(ExperimentSpec)}
    kwargs = {}
    for key, val in list(mapping.items()) + list(overrides.items()):
        if val is None:
            continue
        name = _ALIASES.get(key, key)
        if name not in types:
            raise ValueError(f"unknown configuration key {key!r}")
        default = types[name].default
        if name == "n_grid":
            val = tuple(int(x) for x in str(val).replace(" ", "").split(",") if x) if isinstance(val, str) else tuple(val)
        elif isinstance(default, bool):
            val = val if isinstance(val, bool) else str(val).lower() in ("1", "true", "yes", "on")
        elif isinstance(default, int) and not isinstance(default, bool):
            val = int(val)
        elif isinstance(default, float):
            val = float(val)
        kwargs[name] = val
    return ExperimentSpec(**kwargs)


# -- shared helpers --------------------------------------------------------------------


def _map(func, items, workers: int):
    """Ordered map, optionally over a process pool."""
    items = list(items)
    if workers <= 1 or len(items) <= 1:
        return [func(it) for it in items]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(func, items))


def initial_state(spec: ExperimentSpec, n: int, replica: int = 0) -> NetworkState:
    """Initial state for ``replica`` at size ``n`` (replica 0 when shared)."""
    params = spec.params(n)
    if spec.initial == "empty":
        return NetworkState(params)
    if spec.initial == "file":
        state = NetworkState.loads(Path(spec.initial_path).read_text())
        if state.params != params:
            raise ValueError("initial file parameters do not match the spec")
        return state
    r = 0 if spec.shared_initial else replica
    return generate_initial_state(replica_rng(spec.seed, r, _STREAM_INIT, n), params, spec.c0, spec.policy)


def _nodes_for(spec: ExperimentSpec, n: int) -> np.ndarray:
    if n <= spec.node_sample_threshold:
        return np.arange(n)
    rng = numpy_rng(spec.seed, 0, _STREAM_NODES, n)
    return np.sort(rng.choice(n, size=min(spec.node_sample, n), replace=False))


def _outdir(spec: ExperimentSpec) -> Optional[Path]:
    if spec.output_dir is None:
        return None
    path = Path(spec.output_dir)
    path.mkdir(parents=True, exist_ok=True)
    return path


def write_manifest(spec: ExperimentSpec, extra: Optional[dict] = None) -> None:
    out = _outdir(spec)
    if out is None:
        return
    with open(out / "manifest.txt", "w") as fh:
        for k, v in spec.as_items():
            fh.write(f"{k} = {v}\n")
        fh.write(f"spec_hash = {spec.spec_hash()}\n")
        for k, v in (extra or {}).items():
            fh.write(f"{k} = {v}\n")


# -- LLN ---------------------------------------------------------------------------------


@dataclass
class LlnReport:
    """Sup errors ``sup_{v,k,t} |f_{v,k}(X_t)/(n-1) - xi_t(k)|`` per replica and ``n``."""

    n_grid: tuple
    errors: dict  # n -> array over replicas
    ode: dict  # n -> OdeTrajectory
    nodes: dict  # n -> nodes used

    def median(self, n: int) -> float:
        return float(np.median(self.errors[n])) if len(self.errors[n]) else math.nan

    def max(self, n: int) -> float:
        return float(np.max(self.errors[n])) if len(self.errors[n]) else math.nan

    def scaled(self, n: int) -> float:
        """``e(n) sqrt(n) / log n`` using the median error."""
        return self.median(n) * math.sqrt(n) / math.log(n)

    def medians(self) -> np.ndarray:
        return np.array([self.median(n) for n in self.n_grid])


def _lln_replica(args):
    spec, n, r, nodes, xi = args
    cfg = SimConfig(spec.params(n), spec.policy, SimMode.CTMC, spec.seed, spec.t0,
                    snapshot_times=list(np.linspace(0.0, spec.t0, spec.snapshots)), node_sample=nodes)
    traj = run(cfg, initial_state(spec, n, r), replica=r, stream_key=n)
    prof = traj.profile_array() / (n - 1)  # (T, nodes, C+1)
    return float(np.max(np.abs(prof - xi[:, None, :])))


def run_lln(spec: ExperimentSpec) -> LlnReport:
    """Compare simulated load profiles with the ODE over the n-grid.

    The ODE starts from ``xi_0(j) = f_{v0,j}(X_0) / (n - 1)`` with ``v0 = 0``
    and the replica-0 (or shared) initial state.
    """
    times = np.linspace(0.0, spec.t0, spec.snapshots)
    errors, odes, node_sets = {}, {}, {}
    for n in spec.n_grid:
        x0 = initial_state(spec, n, 0)
        if x0.region_membership()["in_S1"] is False:
            raise ValueError("initial state lies outside S_1")
        xi0 = x0.f_profile(0) / (n - 1)
        ode = integrate(xi0, spec.ode_params(), spec.t0, sample_times=times)
        nodes = _nodes_for(spec, n)
        odes[n], node_sets[n] = ode, nodes
        jobs = [(spec, n, r, nodes, ode.xi) for r in range(spec.replicas)]
        errors[n] = np.array(_map(_lln_replica, jobs, spec.workers))
    report = LlnReport(spec.n_grid, errors, odes, node_sets)
    out = _outdir(spec)
    if out is not None:
        h = spec.spec_hash()
        with open(out / "lln_errors.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["n", "replica", "seed", "spec_hash", "sup_error"])
            for n in spec.n_grid:
                for r, e in enumerate(errors[n]):
                    w.writerow([n, r, spec.seed, h, repr(float(e))])
        with open(out / "lln_summary.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["n", "median", "max", "scaled_median", "seed", "spec_hash"])
            for n in spec.n_grid:
                if len(errors[n]):
                    w.writerow([n, report.median(n), report.max(n), report.scaled(n), spec.seed, h])
        for n in spec.n_grid:
            odes[n].write_csv(out / f"ode_n{n}.csv")
        write_manifest(spec)
    return report


# -- concentration ---------------------------------------------------------------------


@dataclass
class ConcentrationReport:
    """Replica spreads of ``f_{v,k}(X_t)`` per ``n``; arrays are ``(T, nodes, C+1)``."""

    times: np.ndarray
    sd: dict
    max_dev: dict
    nodes: dict

    def scaled_sd(self, n: int) -> np.ndarray:
        return self.sd[n] / math.sqrt(n)

    def scaled_max_dev(self, n: int) -> np.ndarray:
        return self.max_dev[n] / (math.sqrt(n) * math.log(n))


def _conc_replica(args):
    spec, n, r, nodes = args
    cfg = SimConfig(spec.params(n), spec.policy, SimMode.CTMC, spec.seed, spec.t0,
                    snapshot_times=list(np.linspace(0.0, spec.t0, spec.snapshots)), node_sample=nodes)
    return run(cfg, initial_state(spec, n, r), replica=r, stream_key=n).profile_array()


def run_concentration(spec: ExperimentSpec) -> ConcentrationReport:
    """Empirical spread of the load profiles across replicas (needs >= 50 replicas)."""
    if spec.replicas < 50:
        raise ValueError("concentration needs at least 50 replicas")
    times = np.linspace(0.0, spec.t0, spec.snapshots)
    sd, mdev, node_sets = {}, {}, {}
    for n in spec.n_grid:
        nodes = _nodes_for(spec, n)
        stack = np.stack(_map(_conc_replica, [(spec, n, r, nodes) for r in range(spec.replicas)], spec.workers))
        mean = stack.mean(axis=0)
        sd[n] = stack.std(axis=0, ddof=1)
        mdev[n] = np.abs(stack - mean).max(axis=0)
        node_sets[n] = nodes
    report = ConcentrationReport(times, sd, mdev, node_sets)
    out = _outdir(spec)
    if out is not None:
        h = spec.spec_hash()
        with open(out / "concentration.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["n", "t", "v", "k", "sd", "max_dev", "sd_scaled", "max_dev_scaled", "seed", "spec_hash"])
            for n in spec.n_grid:
                ssd, smd = report.scaled_sd(n), report.scaled_max_dev(n)
                for ti, t in enumerate(times):
                    for vi, v in enumerate(node_sets[n]):
                        for k in range(spec.C + 1):
                            w.writerow([n, t, int(v), k, sd[n][ti, vi, k], mdev[n][ti, vi, k],
                                        ssd[ti, vi, k], smd[ti, vi, k], spec.seed, h])
        write_manifest(spec)
    return report


# -- phi drift ---------------------------------------------------------------------------


@dataclass
class PhiDriftReport:
    """Per-tuple mean one-step ``|Delta phi1_{u,v,j,k}|`` against the drift bound."""

    n: int
    steps: int
    tuples: list
    mean_abs_increment: np.ndarray
    se: np.ndarray
    phi_bar: float
    c1: float
    c2: float
    phi_path: list = field(default_factory=list)  # (step, phi1, phi2, phi3)

    @property
    def bound(self) -> float:
        return self.c1 / self.n ** 2 * self.phi_bar + self.c2 / self.n ** 3

    def violations(self, k_se: float = 3.0) -> list:
        lim = self.bound + k_se * self.se
        return [self.tuples[i] for i in np.nonzero(self.mean_abs_increment > lim)[0]]


def increment_constants(lam: float, d: int, C: int) -> tuple:
    """``(c1, c2)`` of the one-step increment bound (the sharper pair when ``d = 1``)."""
    if d == 1:
        return 26.0 * (1 + 1 / lam) * (C + 1), 64.0 * lam * (C + 1)
    return 26.0 * (1 + 1 / lam) * d * d * (C + 1) ** 3, 64.0 * lam * d * d * (C + 1) ** 3


def _phi1_entry(load, pidx, n: int, u: int, v: int, j: int, k: int) -> float:
    ru, rv = pidx[u], pidx[v]
    joint = a = b = 0
    for w in range(n):
        if w == u or w == v:
            continue
        lu = load[ru[w]] == j
        lv = load[rv[w]] == k
        a += lu
        b += lv
        joint += lu and lv
    m = n - 2
    return joint / m - a * b / (m * m)


def run_phi_drift(spec: ExperimentSpec, n: Optional[int] = None, replica: int = 0) -> PhiDriftReport:
    """Track sampled ``phi1_{u,v,j,k}`` along one jump-chain path of ``spec.steps`` steps.

    Entries are recomputed only on steps that change a link at ``u`` or ``v``.
    ``phi_bar`` averages the full ``phi`` over checkpoints every ``phi_every``
    steps (including the start).
    """
    n = spec.n_grid[0] if n is None else n
    state = initial_state(spec, n, replica)
    sim = Simulator(state, spec.policy, replica_rng(spec.seed, replica, _STREAM_SIM))
    trng = numpy_rng(spec.seed, replica, _STREAM_TUPLES)
    tuples = []
    while len(tuples) < spec.tuples:
        u, v = (int(a) for a in trng.choice(n, size=2, replace=False))
        j, k = (int(a) for a in trng.integers(0, spec.C + 1, size=2))
        tuples.append((u, v, j, k))
    by_node: dict[int, list] = {}
    for i, (u, v, _, _) in enumerate(tuples):
        by_node.setdefault(u, []).append(i)
        by_node.setdefault(v, []).append(i)
    load, pidx = state.load, state.pidx
    cur = [_phi1_entry(load, pidx, n, *t) for t in tuples]
    sums = np.zeros(len(tuples))
    sq = np.zeros(len(tuples))
    span = n + 1
    phi_path = []
    phi_vals = []
    for step in range(spec.steps):
        if step % spec.phi_every == 0:
            rep = phi_report(state)
            phi_path.append((step, rep.phi1, rep.phi2, rep.phi3))
            phi_vals.append(rep.phi)
        sim.step_jump_chain()
        r = sim.last_route
        if r is None:
            continue
        p, tag = divmod(r, span)
        touched = {state.pair_u[p], state.pair_v[p]}
        if tag:
            touched.add(tag - 1)
        hit = set()
        for node in touched:
            hit.update(by_node.get(node, ()))
        for i in hit:
            new = _phi1_entry(load, pidx, n, *tuples[i])
            delta = abs(new - cur[i])
            sums[i] += delta
            sq[i] += delta * delta
            cur[i] = new
    T = spec.steps
    mean = sums / T
    var = np.maximum(sq / T - mean ** 2, 0.0) * T / max(T - 1, 1)
    se = np.sqrt(var / T)
    c1, c2 = increment_constants(spec.lam, spec.d, spec.C)
    report = PhiDriftReport(n, T, tuples, mean, se, float(np.mean(phi_vals)), c1, c2, phi_path)
    out = _outdir(spec)
    if out is not None:
        h = spec.spec_hash()
        with open(out / "phi_increments.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["u", "v", "j", "k", "mean_abs_increment", "se", "bound", "seed", "replica", "spec_hash"])
            for t, m_, s_ in zip(tuples, mean, se):
                w.writerow([*t, repr(float(m_)), repr(float(s_)), repr(report.bound), spec.seed, replica, h])
        with open(out / "phi_path.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["step", "phi1", "phi2", "phi3", "seed", "replica", "spec_hash"])
            for row in phi_path:
                w.writerow([*row, spec.seed, replica, h])
        write_manifest(spec, {"c1": c1, "c2": c2, "phi_bar": report.phi_bar})
    return report


# -- coupling ----------------------------------------------------------------------------------


def coupling_initial_pair(spec: ExperimentSpec, n: int):
    """``(x0, y0)``: a seeded initial state and a copy with ``spec.distance`` extra direct calls.

    Extra calls go on the lowest-index links with spare capacity, one per link.
    """
    x0 = initial_state(spec, n, 0)
    y0 = x0.copy()
    added = 0
    for p in range(y0.N):
        if added == spec.distance:
            break
        if y0.load[p] < y0.C:
            y0.add_direct(p)
            added += 1
    if added < spec.distance:
        raise ValueError("not enough spare capacity to separate the coupled states")
    return x0, y0


def run_coupling(spec: ExperimentSpec, n: Optional[int] = None) -> GrowthStats:
    """Coupling growth statistics from :func:`coupling_initial_pair`."""
    n = spec.n_grid[0] if n is None else n
    x0, y0 = coupling_initial_pair(spec, n)
    if not (x0.region_membership()["in_S0"] and y0.region_membership()["in_S0"]):
        raise ValueError("coupled initial states must lie in S_0")
    paths = np.empty((spec.replicas, spec.steps + 1), dtype=np.int64)
    for r in range(spec.replicas):
        pair = CoupledPair(x0.copy(), y0.copy(), spec.policy, replica_rng(spec.seed, r))
        row = paths[r]
        row[0] = pair.l1
        for t in range(1, spec.steps + 1):
            pair.step()
            row[t] = pair.l1
    stats = growth_stats_from_paths(paths, 1.0 + 12.0 * spec.d / spec.params(n).num_links)
    out = _outdir(spec)
    if out is not None:
        stats.write_csv(out / "coupling_growth.csv")
        write_manifest(spec, {"initial_l1": l1_distance(x0, y0)})
    return stats


# -- generator check ---------------------------------------------------------------------------


@dataclass
class GeneratorCheckReport:
    states: int
    max_rel_error: float
    max_abs_error: float


def run_generator_check(spec: ExperimentSpec, prefix_events: int = 30) -> GeneratorCheckReport:
    """Compare the closed-form drift with transition enumeration on ``replicas`` states.

    State ``r`` is reached by ``prefix_events`` CTMC events from the empty
    network on stream ``(seed, r)``.
    """
    n = spec.n_grid[0]
    params = spec.params(n)
    worst_rel = worst_abs = 0.0
    for r in range(spec.replicas):
        sim = Simulator(NetworkState(params), spec.policy, replica_rng(spec.seed, r))
        for _ in range(prefix_events):
            sim.step_ctmc()
        st = sim.state
        closed = drift_table(st)
        for v in range(n):
            for j in range(spec.C + 1):
                brute = generator_bruteforce(st, v, j, spec.policy)
                err = abs(closed[v, j] - brute)
                worst_abs = max(worst_abs, err)
                worst_rel = max(worst_rel, err / max(1.0, abs(brute)))
    report = GeneratorCheckReport(spec.replicas, worst_rel, worst_abs)
    out = _outdir(spec)
    if out is not None:
        write_manifest(spec, {"states": report.states, "max_rel_error": report.max_rel_error,
                              "max_abs_error": report.max_abs_error})
    return report


# -- ODE only ------------------------------------------------------------------------------------


@dataclass
class OdeReport:
    trajectory: object
    fixed_point: Optional[np.ndarray]
    constants: object


def run_ode(spec: ExperimentSpec) -> OdeReport:
    """Integrate from the empty network, locate a fixed point and evaluate the constants."""
    params = spec.ode_params()
    xi0 = np.eye(spec.C + 1)[0]
    traj = integrate(xi0, params, spec.t0, sample_times=np.linspace(0.0, spec.t0, spec.snapshots))
    try:
        fp = fixed_point(params)
    except RuntimeError:
        fp = None
    consts = theorem_constants(spec.lam, spec.d, spec.C, spec.t0)
    out = _outdir(spec)
    if out is not None:
        traj.write_csv(out / "ode.csv")
        extra = dict(consts.as_dict())
        extra.pop("lambda")
        if fp is not None:
            extra["fixed_point"] = ",".join(repr(float(v)) for v in fp)
        with open(out / "constants.txt", "w") as fh:
            for k, v in consts.as_dict().items():
                fh.write(f"{k} = {v}\n")
        write_manifest(spec, extra)
    return OdeReport(traj, fp, consts)


def run_experiment(spec: ExperimentSpec):
    """Dispatch on ``spec.kind``."""
    return {
        ExperimentKind.LLN: run_lln,
        ExperimentKind.CONCENTRATION: run_concentration,
        ExperimentKind.PHI_DRIFT: run_phi_drift,
        ExperimentKind.COUPLING: run_coupling,
        ExperimentKind.GENERATOR_CHECK: run_generator_check,
        ExperimentKind.ODE: run_ode,
    }[spec.kind](spec)
