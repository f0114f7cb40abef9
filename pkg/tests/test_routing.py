import random
from collections import Counter

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from darlab.network import AltArrival, DirectArrival, ModelParams, NetworkState
from darlab.routing import BLOCKED, DIRECT, PolicyKind, RouteDecision, route_call, sample_candidates


def fill(state, u, v, k):
    for _ in range(k):
        state.apply_event(DirectArrival(u, v))


@pytest.fixture
def net():
    """n = 6, C = 3, direct link {0, 1} full."""
    s = NetworkState(ModelParams(6, 3, 2, 1.0))
    fill(s, 0, 1, 3)
    return s


def test_empty_network_routes_direct():
    s = NetworkState(ModelParams(5, 2, 3, 1.0))
    assert route_call(s, PolicyKind.BDAR, 0, 1, (2, 3, 4)) == DIRECT
    assert route_call(s, PolicyKind.FDAR, 0, 1, (2, 3, 4)) == DIRECT


def test_bdar_picks_smaller_max_leg(net):
    fill(net, 0, 2, 2)  # candidate 2 has max leg load 2
    fill(net, 1, 3, 1)  # candidate 3 has max leg load 1
    assert route_call(net, PolicyKind.BDAR, 0, 1, (2, 3)) == RouteDecision("via", 3, 2)


def test_bdar_ties_go_to_first(net):
    fill(net, 0, 2, 1)
    fill(net, 1, 3, 1)
    assert route_call(net, PolicyKind.BDAR, 0, 1, (2, 3)) == RouteDecision("via", 2, 1)


def test_blocked_when_every_candidate_has_a_full_leg():
    s = NetworkState(ModelParams(4, 1, 2, 1.0))
    fill(s, 0, 1, 1)
    fill(s, 0, 2, 1)
    fill(s, 1, 3, 1)
    assert route_call(s, PolicyKind.BDAR, 0, 1, (2, 3)) == BLOCKED
    assert route_call(s, PolicyKind.FDAR, 0, 1, (3, 2)) == BLOCKED


def test_fdar_takes_first_feasible(net):
    fill(net, 0, 2, 2)
    assert route_call(net, PolicyKind.FDAR, 0, 1, (2, 3)) == RouteDecision("via", 2, 1)
    assert route_call(net, PolicyKind.BDAR, 0, 1, (2, 3)) == RouteDecision("via", 3, 2)


def test_infeasible_candidate_never_wins(net):
    # candidate 2 has one full leg (max 3); candidate 3 has max 2
    fill(net, 0, 2, 3)
    fill(net, 1, 3, 2)
    assert route_call(net, PolicyKind.BDAR, 0, 1, (2, 3)) == RouteDecision("via", 3, 2)


def test_no_direct_ignores_free_direct_link():
    s = NetworkState(ModelParams(4, 2, 1, 1.0))
    d = route_call(s, PolicyKind.NO_DIRECT_BDAR, 0, 1, (2,))
    assert d == RouteDecision("via", 2, 1)


@pytest.mark.parametrize(
    "cands",
    [(0, 2), (2,), (2, 9)],
)
def test_precondition_errors(cands):
    s = NetworkState(ModelParams(5, 2, 2, 1.0))
    with pytest.raises(ValueError):
        route_call(s, PolicyKind.BDAR, 0, 1, cands)
    with pytest.raises(ValueError):
        route_call(s, PolicyKind.BDAR, 1, 1, (2, 3))


def test_policy_parse():
    assert PolicyKind.parse("BDAR") is PolicyKind.BDAR
    assert PolicyKind.parse("no-direct") is PolicyKind.NO_DIRECT_BDAR
    with pytest.raises(ValueError):
        PolicyKind.parse("sticky")


def random_loaded_state(seed, n=7, C=3, d=3):
    rng = random.Random(seed)
    s = NetworkState(ModelParams(n, C, d, 1.0))
    for _ in range(rng.randrange(0, 60)):
        u, v = rng.sample(range(n), 2)
        try:
            if rng.random() < 0.6:
                s.apply_event(DirectArrival(u, v))
            else:
                w = rng.choice([x for x in range(n) if x not in (u, v)])
                s.apply_event(AltArrival(u, v, w))
        except Exception:
            pass
    return s


def max_leg(s, u, v, w):
    return max(s.link_load(u, w), s.link_load(v, w))


@settings(max_examples=150, deadline=None)
@given(seed=st.integers(0, 10**6), d=st.integers(1, 4), perm_seed=st.integers(0, 100))
def test_routing_properties(seed, d, perm_seed):
    s = random_loaded_state(seed, d=d)
    rng = random.Random(seed + 1)
    u, v = rng.sample(range(7), 2)
    cands = sample_candidates(rng, 7, u, v, d)
    before = list(s.load)
    bd = route_call(s, PolicyKind.BDAR, u, v, cands)
    fd = route_call(s, PolicyKind.FDAR, u, v, cands)
    nd = route_call(s, PolicyKind.NO_DIRECT_BDAR, u, v, cands)
    assert s.load == before  # purity
    assert (bd.outcome == "direct") == (s.link_load(u, v) < s.C)
    assert nd.outcome != "direct"
    if d == 1:
        assert bd == fd
    if bd.outcome == "via":
        assert cands[bd.slot - 1] == bd.via
        best = max_leg(s, u, v, bd.via)
        assert best < s.C
        feasible = [max_leg(s, u, v, w) for w in cands if max_leg(s, u, v, w) < s.C]
        assert best == min(feasible)
        # permuting the candidates that are strictly worse than the winner never changes it
        worse_pos = [i for i, w in enumerate(cands) if max_leg(s, u, v, w) > best]
        vals = [cands[i] for i in worse_pos]
        random.Random(perm_seed).shuffle(vals)
        shuffled = list(cands)
        for i, w in zip(worse_pos, vals):
            shuffled[i] = w
        assert route_call(s, PolicyKind.BDAR, u, v, tuple(shuffled)) == bd


def test_sample_candidates_support_and_determinism():
    a = sample_candidates(random.Random(42), 5, 0, 1, 3)
    b = sample_candidates(random.Random(42), 5, 0, 1, 3)
    assert a == b and len(a) == 3
    assert set(a) <= {2, 3, 4}
    assert sample_candidates(random.Random(1), 3, 0, 1, 1) == (2,)
    assert all(sample_candidates(random.Random(s), 3, 1, 0, 4) == (2, 2, 2, 2) for s in range(20))
    with pytest.raises(ValueError):
        sample_candidates(random.Random(0), 2, 0, 1, 1)


def test_sample_candidates_uniform():
    n, u, v = 8, 5, 2
    rng = random.Random(7)
    draws = 100_000
    counts = Counter()
    for _ in range(draws):
        counts.update(sample_candidates(rng, n, u, v, 1))
    assert set(counts) == {0, 1, 3, 4, 6, 7}
    p = 1 / (n - 2)
    sigma = (draws * p * (1 - p)) ** 0.5
    for node in counts:
        assert abs(counts[node] - draws * p) <= 3 * sigma
    chi2 = sum((c - draws * p) ** 2 / (draws * p) for c in counts.values())
    assert chi2 < 20.5  # 99.9% quantile of chi-square with 5 degrees of freedom
