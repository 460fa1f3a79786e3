import itertools
import math

import pytest

from coalex.datasets import (
    CloudNetworkConfig,
    CloudNode,
    cloud_model,
    default_cloud_model,
)
from coalex.errors import (
    AllSamplesUndefined,
    CoalexError,
    EmptyCandidateSet,
    PreconditionNotFullExplanation,
    UndefinedScore,
)
from coalex.model import Coalition, Observation, evaluate
from coalex.search import (
    SearchConfig,
    expected_minimal_coalitions,
    minimal_coalitions,
    optimal_intervention,
    search_coalitions,
)


def _names(scm, result):
    return [sorted(scm.name(m) for m in s) for s in result.member_sets()]


def test_size_ordered_search_stops_at_first_size():
    calls = []

    def score(members):
        calls.append(members)
        return Coalition(members, (0,) * len(members)), 1.0 if len(members) == 2 and 0 in members else 0.0

    res = search_coalitions([0, 1, 2], score, alpha=1.0)
    assert res.minimal_size == 2
    assert res.member_sets() == [frozenset({0, 1}), frozenset({0, 2})]
    # no size-3 coalition was looked at
    assert all(len(c) <= 2 for c in calls)
    assert res.evaluations == 6


def test_search_needs_candidates():
    with pytest.raises(EmptyCandidateSet):
        search_coalitions([], lambda m: (Coalition(), 0.0), 1.0)


def test_search_config_validates_alpha():
    with pytest.raises(CoalexError):
        SearchConfig(alpha=1.5)


def test_and_gate_case1(and_gate):
    obs = and_gate.observation({"X1": "0", "X2": "0", "Y": "0"})
    res = minimal_coalitions(and_gate, obs, SearchConfig(alpha=1.0))
    assert res.minimal_size == 1
    assert _names(and_gate, res) == [["X1"], ["X2"]]
    assert all(s == 1.0 for _, s in res.coalitions)


def test_and_gate_case4(and_gate):
    obs = and_gate.observation({"X1": "1", "X2": "1", "Y": "1"})
    res = minimal_coalitions(and_gate, obs, SearchConfig(alpha=1.0))
    assert res.minimal_size == 2
    assert _names(and_gate, res) == [["X1", "X2"]]


def test_k_max_exhausts(and_gate):
    obs = and_gate.observation({"X1": "1", "X2": "1", "Y": "1"})
    res = minimal_coalitions(and_gate, obs, SearchConfig(alpha=1.0, k_max=1))
    assert res.exhausted and res.minimal_size is None and res.coalitions == []


def _tripping_pairs(scm):
    pairs = []
    possible = [j for j in scm.noise_ids if scm.noise_priors[j][1] > 0]
    for a, b in itertools.combinations(possible, 2):
        noise = {j: int(j in (a, b)) for j in scm.noise_ids}
        if evaluate(scm, noise)[scm.target] == 1:
            pairs.append((a, b))
    return pairs


def test_expected_search_finds_two_error_coalitions():
    scm = default_cloud_model()
    pairs = _tripping_pairs(scm)
    assert pairs
    for a, b in pairs:
        full = evaluate(scm, {j: int(j in (a, b)) for j in scm.noise_ids})
        obs = Observation.of({i: v for i, v in full.values if i not in scm.noise_ids})
        res = expected_minimal_coalitions(scm, obs, SearchConfig(alpha=0.95), 200)
        assert res.minimal_size == 2
        assert res.member_sets() == [frozenset({a, b})]


def test_single_determining_candidate():
    nodes = (CloudNode("X1", 0.1, 0), CloudNode("Y", 0.0, 1))
    scm = cloud_model(CloudNetworkConfig(nodes, (("X1", "Y"),), "Y"))
    obs = scm.observation({"X1": "1", "Y": "1"})
    res = expected_minimal_coalitions(scm, obs, SearchConfig(alpha=0.95, candidates=("L_X1",)))
    assert res.minimal_size == 1


def test_healthy_network_refuses():
    nodes = (CloudNode("A", 0.0, 0), CloudNode("Y", 0.0, 1))
    scm = cloud_model(CloudNetworkConfig(nodes, (("A", "Y"),), "Y"))
    obs = scm.observation({"A": "0", "Y": "0"})
    with pytest.raises(UndefinedScore):
        minimal_coalitions(scm, obs, SearchConfig(alpha=0.99))
    with pytest.raises(AllSamplesUndefined):
        expected_minimal_coalitions(scm, obs, SearchConfig(alpha=0.99))


def test_expected_search_takes_noise_only():
    scm = default_cloud_model()
    obs = scm.observation({scm.name(i): "0" for i in scm.observed_ids} | {"www": "0"})
    with pytest.raises(CoalexError):
        expected_minimal_coalitions(scm, obs, SearchConfig(alpha=0.95, candidates=("api",)))


# optimal intervention


def test_optimal_intervention_case4(and_gate):
    obs = and_gate.observation({"X1": "1", "X2": "1", "Y": "1"})
    prop = optimal_intervention(and_gate, obs, ["X1", "X2"], desired=0)
    assert prop.coalition.values == (0, 0)
    assert prop.score_for_desired == 1.0


def test_optimal_intervention_case1(and_gate):
    obs = and_gate.observation({"X1": "0", "X2": "0", "Y": "0"})
    prop = optimal_intervention(and_gate, obs, ["X1"], desired=1)
    assert prop.coalition.values == (1,)
    assert prop.score_for_desired == pytest.approx(1 - math.log(0.8) / math.log(0.08))


def test_optimal_intervention_needs_full_score(and_gate):
    obs = and_gate.observation({"X1": "1", "X2": "1", "Y": "1"})
    with pytest.raises(PreconditionNotFullExplanation):
        optimal_intervention(and_gate, obs, ["X1"], desired=0)


def test_optimal_intervention_same_target(and_gate):
    obs = and_gate.observation({"X1": "1", "X2": "1", "Y": "1"})
    with pytest.raises(CoalexError):
        optimal_intervention(and_gate, obs, ["X1", "X2"], desired=1)
