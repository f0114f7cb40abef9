import random

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles
from darlab.network import (
    AltArrival,
    Departure,
    DirectArrival,
    ModelParams,
    NetworkState,
    StateError,
    new_empty,
    pair_index,
)


class TestModelParams:
    @pytest.mark.parametrize(
        "kwargs",
        [
            dict(n=1, C=1, d=1, lam=1.0),
            dict(n=3, C=0, d=1, lam=1.0),
            dict(n=3, C=1, d=0, lam=1.0),
            dict(n=3, C=1, d=1, lam=0.0),
            dict(n=3, C=1, d=1, lam=-2.0),
            dict(n=3.5, C=1, d=1, lam=1.0),
        ],
    )
    def test_invalid(self, kwargs):
        with pytest.raises(ValueError):
            ModelParams(**kwargs)

    def test_links_and_slots(self):
        p = ModelParams(3, 1, 1, 1.0)
        assert p.num_links == 3
        assert p.departure_slots == 18
        assert p.arrival_probability == pytest.approx(1 / 7)


def test_pair_index_is_a_bijection():
    n = 9
    seen = set()
    for u in range(n):
        for v in range(u + 1, n):
            p = pair_index(u, v, n)
            assert p == pair_index(v, u, n)
            seen.add(p)
    assert seen == set(range(n * (n - 1) // 2))
    with pytest.raises(ValueError):
        pair_index(2, 2, n)


class TestEmpty:
    def test_three_nodes(self):
        s = new_empty(ModelParams(3, 1, 1, 1.0))
        assert s.N == 3 and s.num_calls == 0
        assert s.load == [0, 0, 0]
        for v in range(3):
            assert s.f_profile(v).tolist() == [2, 0]

    def test_two_nodes(self):
        s = new_empty(ModelParams(2, 5, 1, 1.0))
        assert s.N == 1
        assert s.f_profile(0).tolist() == [1, 0, 0, 0, 0, 0]
        assert s.f_profile(1).tolist() == [1, 0, 0, 0, 0, 0]

    def test_regions(self):
        s = new_empty(ModelParams(4, 2, 2, 0.5))
        assert s.N == 6
        assert s.region_membership() == {"in_S1": True, "in_S0": True, "in_Stilde": True}


class TestEvents:
    def setup_method(self):
        self.s = NetworkState(ModelParams(3, 1, 1, 1.0))

    def test_scripted_sequence(self):
        s = self.s
        cid = s.apply_event(DirectArrival(0, 1))
        assert s.link_load(0, 1) == 1
        assert s.f_profile(0).tolist() == [1, 1]
        s.apply_event(AltArrival(0, 1, 2))
        assert s.link_load(0, 2) == s.link_load(1, 2) == 1
        assert s.alt_count(0, 1, 2) == 1
        # load identity for {0, 2}: no direct calls, one call of pair {0,1} via 2
        assert s.link_load(0, 2) == s.direct_count(0, 2) + s.alt_count(0, 1, 2) + s.alt_count(1, 2, 0)
        s.apply_event(Departure(cid))
        assert s.link_load(0, 1) == 0
        only_alt = NetworkState(s.params)
        only_alt.apply_event(AltArrival(0, 1, 2))
        assert s.same_counts(only_alt)
        s.validate()

    def test_capacity_violations(self):
        s = self.s
        s.apply_event(DirectArrival(0, 1))
        with pytest.raises(StateError):
            s.apply_event(DirectArrival(1, 0))
        with pytest.raises(StateError):
            s.apply_event(AltArrival(0, 2, 1))  # leg {0,1} is full
        with pytest.raises(StateError):
            s.apply_event(AltArrival(0, 1, 1))
        with pytest.raises(StateError):
            s.apply_event(Departure(99))
        with pytest.raises(StateError):
            s.apply_event(DirectArrival(0, 7))
        s.validate()

    def test_remove_route(self):
        s = NetworkState(ModelParams(4, 2, 1, 1.0))
        s.apply_event(DirectArrival(0, 1))
        s.apply_event(AltArrival(2, 3, 0))
        route = s.routes[1]
        s.remove_route(route)
        assert s.num_calls == 1 and s.alt == {}
        with pytest.raises(StateError):
            s.remove_route(route)


def test_profile_matches_recount(make_state):
    for seed in range(20):
        s = make_state(seed, n=4, C=2, d=2, events=3 + seed)
        for v in range(4):
            assert s.f_profile(v).tolist() == oracles.profile(s, v)


def test_f_profile_out_of_range():
    with pytest.raises(IndexError):
        NetworkState(ModelParams(3, 1, 1, 1.0)).f_profile(3)


def test_region_thresholds():
    s = NetworkState(ModelParams(3, 7, 1, 1.0))
    for _ in range(7):
        s.apply_event(DirectArrival(0, 1))
    assert s.num_calls == 7
    assert s.region_membership() == {"in_S1": False, "in_S0": True, "in_Stilde": True}


def test_load_matrix_and_alt_per_pair(make_state):
    s = make_state(3, n=5, C=2, d=2, lam=3.0, events=60)
    L = s.load_matrix()
    assert (np.diag(L) == -1).all()
    for u in range(5):
        for v in range(5):
            if u != v:
                assert L[u, v] == s.link_load(u, v)
    per = s.alt_per_pair()
    for p in range(s.N):
        u, v = s.pair_u[p], s.pair_v[p]
        assert per[p] == sum(s.alt_count(u, v, w) for w in range(5))


def test_snapshot_round_trip(make_state, tmp_path):
    s = make_state(11, n=6, C=2, d=2, lam=2.0, events=80)
    text = s.dumps()
    back = NetworkState.loads(text)
    assert back.same_counts(s)
    back.validate()
    with pytest.raises(ValueError):
        NetworkState.loads("n 3\nC 1\nd 1\nlambda 1.0\ncall 0 1 X\n")
    with pytest.raises(ValueError):
        NetworkState.loads("n 3\nC 1\n")
    with pytest.raises(StateError):
        NetworkState.loads("n 3\nC 1\nd 1\nlambda 1.0\ncall 0 1 D\ncall 0 1 D\n")


event_lists = st.lists(st.tuples(st.integers(0, 2), st.integers(0, 5), st.integers(0, 5), st.integers(0, 5)),
                       max_size=60)


@settings(max_examples=60, deadline=None)
@given(events=event_lists)
def test_invariants_under_random_events(events):
    """Load identity, capacity, profile conservation and registry recount after every event."""
    params = ModelParams(6, 2, 2, 1.0)
    s = NetworkState(params)
    live = []
    for kind, a, b, c in events:
        try:
            if kind == 0:
                live.append(s.apply_event(DirectArrival(a, b)))
            elif kind == 1:
                live.append(s.apply_event(AltArrival(a, b, c)))
            elif live:
                s.apply_event(Departure(live.pop(a % len(live))))
        except StateError:
            pass
        s.validate()
        recount = oracles.naive_load_from_calls(s)
        for p in range(s.N):
            assert s.load[p] == recount[frozenset((s.pair_u[p], s.pair_v[p]))]
        for v in range(6):
            assert s.f_profile(v).sum() == 5
        m = s.num_calls
        base = params.lam * s.N
        assert s.region_membership()["in_S1"] == (m <= 2 * base)


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 10_000), via=st.booleans())
def test_arrival_then_departure_is_identity(seed, via):
    rng = random.Random(seed)
    from conftest import reachable_state

    s = reachable_state(seed, n=5, C=3, d=2, events=20)
    before = s.copy()
    u, v = rng.sample(range(5), 2)
    w = rng.choice([x for x in range(5) if x not in (u, v)])
    try:
        cid = s.apply_event(AltArrival(u, v, w) if via else DirectArrival(u, v))
    except StateError:
        return
    s.apply_event(Departure(cid))
    assert s.same_counts(before)
    assert sorted(s.routes) == sorted(before.routes)
