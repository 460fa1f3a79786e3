import itertools
import math

import numpy as np
import pytest

from coalex.datasets import CloudNetworkConfig, CloudNode, cloud_model
from coalex.errors import AllScoresZero, CoalexError, InvalidThreshold, TooManyPlayers
from coalex.model import Observation, evaluate
from coalex.rca import (
    AttributionResult,
    MappingConfig,
    RcaMethod,
    RcaSample,
    backtracking_traversal_rca,
    build_methods,
    causal_truth,
    error_truth,
    evaluate_rca,
    map_scores_to_coalition,
    noise_outlier_value_functions,
    shapley_attribution,
    traversal_rca,
)


def network(nodes, edges, target="Y"):
    return cloud_model(CloudNetworkConfig(tuple(CloudNode(*n) for n in nodes), tuple(edges), target))


def labeling(scm, bad):
    return {i: scm.name(i) in bad for i in range(len(scm)) if not scm.name(i).startswith("L_")}


def names(scm, ids):
    return {scm.name(i) for i in ids}


CHAIN = network([("A", 0.1, 0), ("B", 0.1, 1), ("Y", 0.1, 1)], [("A", "B"), ("B", "Y")])
DIAMOND = network(
    [("A", 0.1, 0), ("B", 0.1, 0), ("Y", 0.1, 2)],
    [("A", "Y"), ("B", "Y")],
)
# C is anomalous but only reaches Y through the healthy node H
SIDE = network(
    [("A", 0.1, 0), ("C", 0.1, 0), ("H", 0.1, 1), ("Y", 0.1, 1)],
    [("A", "Y"), ("C", "H"), ("H", "Y")],
)


# traversal


def test_traversal_chain():
    assert names(CHAIN, traversal_rca(CHAIN, labeling(CHAIN, {"A", "B", "Y"}))) == {"A"}
    assert names(CHAIN, backtracking_traversal_rca(CHAIN, labeling(CHAIN, {"A", "B", "Y"}))) == {"A"}


def test_traversal_no_anomaly():
    assert traversal_rca(CHAIN, labeling(CHAIN, set())) == set()
    assert backtracking_traversal_rca(CHAIN, labeling(CHAIN, set())) == set()


def test_traversal_diamond():
    assert names(DIAMOND, traversal_rca(DIAMOND, labeling(DIAMOND, {"A", "B", "Y"}))) == {"A", "B"}


def test_backtracking_drops_disconnected_source():
    lab = labeling(SIDE, {"A", "C", "Y"})
    assert names(SIDE, traversal_rca(SIDE, lab)) == {"A", "C"}
    assert names(SIDE, backtracking_traversal_rca(SIDE, lab)) == {"A"}


# Shapley


def permutation_shapley(players, v):
    phi = {p: 0.0 for p in players}
    perms = list(itertools.permutations(players))
    for perm in perms:
        seen = frozenset()
        for p in perm:
            phi[p] += v(seen | {p}) - v(seen)
            seen = seen | {p}
    return {p: x / len(perms) for p, x in phi.items()}


def test_additive_game():
    res = shapley_attribution([0, 1, 2, 3], len)
    assert all(v == pytest.approx(1.0) for v in res.scores.values())


def test_and_game():
    res = shapley_attribution(["a", "b"], lambda s: float(s == {"a", "b"}))
    assert res.scores == {"a": pytest.approx(0.5), "b": pytest.approx(0.5)}


def test_three_player_game_matches_permutations():
    def v(s):
        return 1.0 if 1 in s else 0.0

    exact = shapley_attribution([1, 2, 3], v).scores
    oracle = permutation_shapley([1, 2, 3], v)
    for p in (1, 2, 3):
        assert exact[p] == pytest.approx(oracle[p], abs=1e-12)
    assert exact[1] == pytest.approx(1.0)


def test_random_games_match_oracle():
    rng = np.random.default_rng(11)
    for n in range(1, 6):
        table = {frozenset(s): rng.normal() for k in range(n + 1) for s in itertools.combinations(range(n), k)}
        exact = shapley_attribution(list(range(n)), table.__getitem__).scores
        oracle = permutation_shapley(list(range(n)), table.__getitem__)
        for p in range(n):
            assert abs(exact[p] - oracle[p]) <= 1e-9


def test_too_many_players():
    with pytest.raises(TooManyPlayers):
        shapley_attribution(list(range(21)), len)


# mapping


def test_cumulative_mapping():
    attr = AttributionResult({0: 0.6, 1: 0.3, 2: 0.1})
    assert map_scores_to_coalition(attr, MappingConfig("cumulative", 0.95)) == {0, 1, 2}
    assert map_scores_to_coalition(attr, MappingConfig("cumulative", 0.9)) == {0, 1}


def test_individual_mapping():
    attr = AttributionResult({0: 0.6, 1: 0.3, 2: 0.1})
    assert map_scores_to_coalition(attr, MappingConfig("individual", theta_i=0.15)) == {0, 1}


def test_single_player_mapping():
    attr = AttributionResult({7: 2.5})
    for mode in ("cumulative", "individual"):
        assert map_scores_to_coalition(attr, MappingConfig(mode)) == {7}


def test_negative_scores_clamped():
    attr = AttributionResult({0: -1.0, 1: 3.0, 2: 1.0})
    norm = attr.normalize()
    assert norm.scores == {0: 0.0, 1: 0.75, 2: 0.25}
    with pytest.raises(AllScoresZero):
        AttributionResult({0: -1.0, 1: 0.0}).normalize()


def test_ties_keep_index_order():
    attr = AttributionResult({3: 0.5, 1: 0.5})
    assert map_scores_to_coalition(attr, MappingConfig("cumulative", 0.5)) == {1}


def test_bad_thresholds():
    with pytest.raises(InvalidThreshold):
        MappingConfig("cumulative", 0.0)
    with pytest.raises(InvalidThreshold):
        MappingConfig("median")


# value functions


def test_value_functions_chain_by_hand():
    scm = network([("A", 0.2, 0), ("Y", 0.1, 1)], [("A", "Y")])
    obs = scm.observation({"A": "1", "Y": "1"})
    vf = noise_outlier_value_functions(scm, obs)
    la, ly = scm.index("L_A"), scm.index("L_Y")
    assert vf.mode == {la: 1, ly: 0}
    p_y = 1 - 0.8 * 0.9
    assert vf.it_score([]) == pytest.approx(-math.log(p_y))
    assert vf.it_score([la]) == pytest.approx(0.0)
    assert vf.it_score([ly]) == pytest.approx(-math.log(0.2))
    assert vf.it_score([la, ly]) == pytest.approx(0.0)
    assert vf.mean_deviation([]) == pytest.approx(0.0)
    assert vf.mean_deviation([la]) == pytest.approx(1 - p_y)
    assert vf.mean_deviation([ly]) == pytest.approx(abs(0.2 - p_y))


# evaluation


def _three_error_net():
    return network(
        [("A", 0.1, 0), ("B", 0.1, 0), ("C", 0.1, 0), ("D", 0.05, 2), ("Y", 0.0, 2)],
        [("A", "D"), ("B", "D"), ("D", "Y"), ("C", "Y")],
    )


def _samples(scm, n_errors):
    out = []
    possible = [j for j in scm.noise_ids if scm.noise_priors[j][1] > 0]
    for fired in itertools.combinations(possible, n_errors):
        row = [int(j in fired) for j in scm.noise_ids]
        full = evaluate(scm, dict(zip(scm.noise_ids, row)))
        if full[scm.target] != 1:
            continue
        obs = Observation.of({i: v for i, v in full.values if i not in scm.noise_ids})
        out.append(RcaSample(obs, error_truth(scm, row), n_errors))
    return out


def test_perfect_and_empty_methods():
    scm = _three_error_net()
    samples = _samples(scm, 3) + _samples(scm, 2)
    truth = {s.observation: s.truth for s in samples}
    perfect = RcaMethod("perfect", lambda m, obs: [truth[obs]])
    empty = RcaMethod("empty", lambda m, obs: [])
    out = evaluate_rca([perfect, empty], samples, scm)
    g = out.group("perfect", "all")
    assert g.accuracy == 1.0 and g.fp == 0 and g.fn == 0
    e = out.group("empty", "all")
    assert e.accuracy == 0.0 and e.fn == sum(len(s.truth) for s in samples)


def test_failures_are_recorded():
    scm = _three_error_net()

    def boom(m, obs):
        raise CoalexError("nope")

    out = evaluate_rca([RcaMethod("boom", boom)], _samples(scm, 3), scm)
    g = out.group("boom", "3")
    assert g.failures == g.n and g.accuracy == 0.0
    assert out.results["boom"][0].error.startswith("CoalexError")


def test_coca_at_least_traversal_on_three_errors():
    scm = _three_error_net()
    samples = _samples(scm, 3)
    assert samples
    out = evaluate_rca(build_methods(["coca", "traversal"]), samples, scm)
    assert out.group("coca", "3").accuracy >= out.group("traversal", "3").accuracy


def test_report_shapes():
    scm = _three_error_net()
    out = evaluate_rca(build_methods(["traversal", "backtracking"]), _samples(scm, 3), scm)
    js = out.to_json()
    assert set(js) == {"traversal", "backtracking"}
    assert list(js["traversal"]["by_error_count"]) == ["3", "3+", "all"]
    assert out.to_csv().splitlines()[0] == "method,errors,n,accuracy,tp,fp,fn"


def test_unknown_method_lists_valid_ones():
    with pytest.raises(CoalexError, match="valid methods: coca"):
        build_methods(["coca", "oracle"])


def test_causal_truth_drops_unneeded_error():
    scm = DIAMOND
    row = [1 if scm.name(j) in ("L_A", "L_B") else 0 for j in scm.noise_ids]
    assert names(scm, causal_truth(scm, row)) == {"L_A", "L_B"}
    # Y's own noise fires too: {L_Y} alone reproduces Y=1, and so does {L_A, L_B}
    row = [1 for _ in scm.noise_ids]
    assert names(scm, causal_truth(scm, row)) == {"L_A", "L_B", "L_Y"}
    chain_row = [1 if CHAIN.name(j) == "L_A" else 0 for j in CHAIN.noise_ids]
    assert names(CHAIN, causal_truth(CHAIN, chain_row)) == {"L_A"}
