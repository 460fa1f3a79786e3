import itertools
import warnings

import numpy as np
import pytest

from coalex.datasets import (
    CORRAL_FEATURES,
    DEFAULT_CLOUD_CONFIG,
    CloudNetworkConfig,
    CloudNode,
    SampleTable,
    and_gate_model,
    cloud_model,
    corral_class,
    corral_table,
    default_cloud_model,
    generate_samples,
    table_noise,
)
from coalex.errors import DegenerateParameter, InvalidThreshold, SchemaMismatch
from coalex.inference import observational_distribution
from coalex.model import Coalition, apply_intervention, evaluate


@pytest.mark.parametrize("p1,p2,expected", [(0.1, 0.8, 0.08), (0.5, 0.5, 0.25)])
def test_and_gate_marginals(p1, p2, expected):
    assert observational_distribution(and_gate_model(p1, p2)).prob(1) == pytest.approx(expected)


@pytest.mark.parametrize("p", [0.0, 1.0, -0.2])
def test_and_gate_degenerate(p):
    with pytest.raises(DegenerateParameter):
        and_gate_model(p, 0.5)


def test_corral_shape_and_formula():
    t = corral_table()
    assert len(t) == 160
    assert t.columns[:6] == CORRAL_FEATURES
    feats = t.data[:, :6]
    assert np.array_equal(t.column("class"), corral_class(feats))
    assert not t.data[0].any()
    agree = np.mean(t.column("Correlated") == t.column("class"))
    assert 0.6 <= agree <= 0.9


def test_corral_a_pair_forces_class():
    rows = np.array([[1, 1, b0, b1, 0, 0] for b0, b1 in itertools.product((0, 1), repeat=2)])
    assert corral_class(rows).tolist() == [1, 1, 1, 1]


def test_corral_seeded():
    assert np.array_equal(corral_table(5).data, corral_table(5).data)
    assert not np.array_equal(corral_table(5).data, corral_table(6).data)


def test_default_cloud_builds():
    scm = default_cloud_model()
    assert scm.name(scm.target) == "www"
    assert len(scm.observed_ids) == 9
    # every parent precedes its child
    assert all(p < c for c in range(len(scm)) for p in scm.parents[c])


def test_cloud_all_healthy():
    scm = default_cloud_model()
    obs = evaluate(scm, {j: 0 for j in scm.noise_ids})
    assert all(v == 0 for _, v in obs.values)


def test_cloud_noise_intervention_matches_substitution():
    scm = default_cloud_model()
    a, b = scm.index("L_auth"), scm.index("L_storage")
    mutilated = apply_intervention(scm, Coalition.of({a: 1, b: 1}))
    assert mutilated.noise_priors[a].tolist() == [0.0, 1.0]
    noise = {j: int(j in (a, b)) for j in scm.noise_ids}
    assert evaluate(mutilated, noise) == evaluate(scm, noise)


def test_single_errors_never_trip_default():
    scm = default_cloud_model()
    for j in scm.noise_ids:
        if scm.noise_priors[j][1] == 0:
            continue
        assert evaluate(scm, {k: int(k == j) for k in scm.noise_ids})[scm.target] == 0


def test_or_chain_propagates():
    cfg = CloudNetworkConfig(
        (CloudNode("A", 0.1, 0), CloudNode("B", 0.1, 1), CloudNode("Y", 0.1, 1)),
        (("A", "B"), ("B", "Y")),
        "Y",
    )
    scm = cloud_model(cfg)
    obs = evaluate(scm, {j: int(scm.name(j) == "L_A") for j in scm.noise_ids})
    assert obs[scm.index("Y")] == 1


def test_zero_threshold_warns():
    cfg = CloudNetworkConfig((CloudNode("A", 0.1, 0), CloudNode("Y", 0.0, 0)), (("A", "Y"),), "Y")
    with pytest.warns(UserWarning, match="always failing"):
        scm = cloud_model(cfg)
    assert observational_distribution(scm).prob(1) == 1.0


def test_threshold_out_of_range():
    cfg = CloudNetworkConfig((CloudNode("A", 0.1, 0), CloudNode("Y", 0.0, 2)), (("A", "Y"),), "Y")
    with pytest.raises(InvalidThreshold):
        cloud_model(cfg)


def test_config_roundtrip():
    assert CloudNetworkConfig.from_dict(DEFAULT_CLOUD_CONFIG.to_dict()) == DEFAULT_CLOUD_CONFIG


def test_filter_fraction():
    t = generate_samples(and_gate_model(0.1, 0.8), 100_000, seed=0, filter_target=1)
    assert abs(len(t) / 100_000 - 0.08) <= 0.005
    assert np.all(t.column("Y") == 1)


def test_healthy_network_filters_everything():
    cfg = CloudNetworkConfig((CloudNode("A", 0.0, 0), CloudNode("Y", 0.0, 1)), (("A", "Y"),), "Y")
    t = generate_samples(cloud_model(cfg), 1000, seed=0, filter_target=1)
    assert len(t) == 0
    assert t.tallies == {"0": {"0": 1000, "1": 0}}


def test_generation_deterministic_and_consistent():
    scm = default_cloud_model()
    a = generate_samples(scm, 70_000, seed=9)
    b = generate_samples(scm, 70_000, seed=9)
    assert np.array_equal(a.data, b.data)
    assert a.tallies == b.tallies
    # every row is a forward evaluation of its own noise columns
    noise = table_noise(scm, a)
    idx = np.flatnonzero(noise.any(axis=1))[:200]
    for i in idx:
        full = evaluate(scm, dict(zip(scm.noise_ids, noise[i].tolist())))
        assert all(a.column(scm.name(k))[i] == v for k, v in full.values)


def test_tallies_count_all_rows():
    t = generate_samples(default_cloud_model(), 5000, seed=1, filter_target=1)
    assert sum(sum(v.values()) for v in t.tallies.values()) == 5000


def test_table_roundtrip(tmp_path):
    t = generate_samples(and_gate_model(0.1, 0.8), 500, seed=3)
    t.write(tmp_path / "s.csv")
    back = SampleTable.read(tmp_path / "s.csv")
    assert back.columns == t.columns and back.roles == t.roles
    assert np.array_equal(back.data, t.data)
    assert back.seed == 3 and back.model_hash == t.model_hash


def test_table_without_sidecar(tmp_path):
    path = tmp_path / "plain.csv"
    path.write_text("a,b,c\nx,1,1\ny,0,1\n")
    t = SampleTable.read(path)
    assert t.domains[0].labels == ("x", "y")
    assert t.domains[2].labels == ("0", "1")
    path.write_text("a\nz\nz\n")
    with pytest.raises(SchemaMismatch):
        SampleTable.read(path)


def test_count_must_be_positive():
    with pytest.raises(ValueError):
        generate_samples(and_gate_model(0.1, 0.8), 0, seed=0)


def test_model_builder_quiet_for_default():
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        default_cloud_model()
