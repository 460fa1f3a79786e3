import itertools

import numpy as np
import pytest

from coalex.datasets import (
    CloudNetworkConfig,
    CloudNode,
    cloud_model,
    default_cloud_model,
)
from coalex.errors import (
    InconsistentObservation,
    PositivityViolated,
    StateSpaceTooLarge,
    UnsupportedMechanism,
)
from coalex.inference import (
    MONTE_CARLO,
    EstimatorConfig,
    coalition_probability,
    interventional_distribution,
    noise_posterior,
    observational_distribution,
    sample_noise_posterior,
)
from coalex.model import Coalition, Observation, build_scm, evaluate

MC = EstimatorConfig(mode=MONTE_CARLO, sample_count=100_000, seed=3)


def chain3(p=(0.2, 0.01, 0.0), t=1):
    nodes = (CloudNode("A", p[0], 0), CloudNode("B", p[1], t), CloudNode("Y", p[2], t))
    return cloud_model(CloudNetworkConfig(nodes, (("A", "B"), ("B", "Y")), "Y"))


def test_and_gate_marginal(and_gate):
    dist = observational_distribution(and_gate)
    assert dist.prob(1) == pytest.approx(0.08)
    assert dist.prob(0) == pytest.approx(0.92)


def test_do_x1(and_gate):
    x1 = and_gate.index("X1")
    dist = interventional_distribution(and_gate, Coalition.of({x1: 1}))
    assert dist.prob(1) == pytest.approx(0.8)


def test_empty_coalition_is_observational(and_gate):
    assert interventional_distribution(and_gate, Coalition()) == observational_distribution(and_gate)


def test_do_all_noise_is_point_mass(and_gate):
    l1, l2 = and_gate.noise_ids
    dist = interventional_distribution(and_gate, Coalition.of({l1: 1, l2: 1}))
    assert dist.is_point_mass() and dist.prob(1) == 1.0


def test_healthy_network_point_mass():
    cfg = CloudNetworkConfig((CloudNode("A", 0.0, 0), CloudNode("Y", 0.0, 1)), (("A", "Y"),), "Y")
    assert observational_distribution(cloud_model(cfg)).prob(0) == 1.0


def test_positivity_refusal():
    scm = chain3(p=(0.2, 0.0, 0.0))
    b = scm.index("B")
    a = scm.index("A")
    # B=1 with A=0 is impossible when B's own noise never fires
    assert coalition_probability(scm, Coalition.of({a: 0, b: 1})) == 0.0
    with pytest.raises(PositivityViolated):
        interventional_distribution(scm, Coalition.of({a: 0, b: 1}))


def test_state_limit():
    scm = default_cloud_model()
    cfg = EstimatorConfig(exact_state_limit=8)
    with pytest.raises(StateSpaceTooLarge):
        observational_distribution(scm, cfg)


def test_mc_close_to_exact(and_gate):
    x2 = and_gate.index("X2")
    exact = interventional_distribution(and_gate, Coalition.of({x2: 1}))
    mc = interventional_distribution(and_gate, Coalition.of({x2: 1}), MC)
    assert exact.total_variation(mc) <= 0.01
    assert observational_distribution(and_gate).total_variation(observational_distribution(and_gate, MC)) <= 0.01


def test_mc_is_seeded(and_gate):
    x2 = and_gate.index("X2")
    a = interventional_distribution(and_gate, Coalition.of({x2: 1}), MC)
    # a fresh model has an empty cache, so the draw really is repeated
    b = interventional_distribution(build_scm(and_gate.to_dict()), Coalition.of({x2: 1}), MC)
    assert np.array_equal(a.probabilities, b.probabilities)


# posterior


def _obs(scm, **values):
    return scm.observation(values)


def test_posterior_node_off_fixes_noise():
    scm = chain3()
    post = noise_posterior(scm, _obs(scm, A="0", B="0", Y="0"))
    assert all(post.factor(j).fixed == 0 for j in scm.noise_ids)


def test_posterior_unexplained_error_fixes_noise():
    scm = chain3()
    post = noise_posterior(scm, _obs(scm, A="0", B="1", Y="1"))
    assert post.factor(scm.index("L_B")).fixed == 1
    assert post.factor(scm.index("L_A")).fixed == 0


def test_posterior_explained_error_keeps_prior_matches_enumeration():
    scm = chain3()
    obs = _obs(scm, A="1", B="1", Y="1")
    post = noise_posterior(scm, obs)
    lb = scm.index("L_B")
    assert post.factor(lb).p == pytest.approx(0.01)
    # brute-force Bayes over all noise assignments
    num = den = 0.0
    for bits in itertools.product((0, 1), repeat=len(scm.noise_ids)):
        w = np.prod([scm.noise_priors[j][b] for j, b in zip(scm.noise_ids, bits)])
        if w == 0:
            continue
        full = evaluate(scm, dict(zip(scm.noise_ids, bits))).as_dict()
        if all(full[k] == v for k, v in obs.values):
            den += w
            num += w * bits[scm.noise_ids.index(lb)]
    assert num / den == pytest.approx(post.factor(lb).p)


def test_posterior_inconsistent_observation():
    scm = chain3()
    with pytest.raises(InconsistentObservation):
        noise_posterior(scm, _obs(scm, A="1", B="0", Y="0"))


def test_posterior_needs_threshold_gates(and_gate):
    obs = and_gate.observation({"X1": "1", "X2": "1", "Y": "1"})
    with pytest.raises(UnsupportedMechanism):
        noise_posterior(and_gate, obs)


def test_posterior_sampling():
    scm = chain3(p=(0.5, 0.01, 0.0))
    post = noise_posterior(scm, _obs(scm, A="1", B="1", Y="1"))
    # root A has no parents, so its error is fully explained by noise
    draws = sample_noise_posterior(post, 10_000, seed=1)
    assert np.all(draws[:, scm.noise_ids.index(scm.index("L_A"))] == 1)
    assert np.array_equal(draws, sample_noise_posterior(post, 10_000, seed=1))

    flat = chain3(p=(0.5, 0.5, 0.0))
    post = noise_posterior(flat, _obs(flat, A="1", B="1", Y="1"))
    draws = sample_noise_posterior(post, 10_000, seed=1)
    freq = draws[:, flat.noise_ids.index(flat.index("L_B"))].mean()
    assert abs(freq - 0.5) <= 0.02


def test_fixed_posterior_draws_identical():
    scm = chain3()
    post = noise_posterior(scm, Observation.of({scm.index("A"): 0, scm.index("B"): 0, scm.index("Y"): 0}))
    draws = sample_noise_posterior(post, 50, seed=0)
    assert len(np.unique(draws, axis=0)) == 1
