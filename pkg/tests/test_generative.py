import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import relmix as rm
from relmix import AttributeSpec, EntityClassSpec, RelationClassSpec, Schema

from tests.conftest import canon, set_partitions


def test_crp_probs_empty_restaurant():
    assert rm.crp_assign_probs([], 10.0).tolist() == [1.0]


def test_crp_probs_second_customer():
    np.testing.assert_allclose(rm.crp_assign_probs([1], 1.0), [0.5, 0.5])


def test_crp_probs_direct_arithmetic():
    np.testing.assert_allclose(rm.crp_assign_probs([2, 1], 10.0), [2 / 13, 1 / 13, 10 / 13])


def test_crp_probs_rejects_bad_inputs():
    with pytest.raises(ValueError):
        rm.crp_assign_probs([1], 0.0)
    with pytest.raises(ValueError):
        rm.crp_assign_probs([0, 2], 1.0)


@given(
    st.lists(st.integers(min_value=1, max_value=50), max_size=8),
    st.floats(min_value=1e-3, max_value=50.0, allow_nan=False),
)
def test_crp_probs_sum_to_one(occupancies, alpha0):
    probs = rm.crp_assign_probs(occupancies, alpha0)
    assert abs(probs.sum() - 1.0) < 1e-12
    assert probs.min() >= 0


def test_partition_single_entity():
    rng = np.random.default_rng(0)
    for _ in range(5):
        assert rm.sample_crp_partition(1, 10.0, rng).tolist() == [0]


def test_partition_labels_first_appearance():
    rng = np.random.default_rng(1)
    for _ in range(200):
        z = rm.sample_crp_partition(8, 5.0, rng)
        assert tuple(z) == canon(z)


def test_partition_two_entities_split_probability():
    rng = np.random.default_rng(2)
    n = 100_000
    split = sum(rm.sample_crp_partition(2, 10.0, rng)[1] == 1 for _ in range(n)) / n
    assert abs(split - 10 / 11) < 0.01


def test_partition_three_entities_single_cluster_probability():
    # seating product (1/2)(2/3) = 1/3 for all-in-one at alpha 1
    rng = np.random.default_rng(3)
    n = 100_000
    hits = sum(rm.sample_crp_partition(3, 1.0, rng).max() == 0 for _ in range(n)) / n
    assert abs(hits - 1 / 3) < 0.01


def seating_product(partition, order, alpha, one=1.0):
    """Probability of realizing `partition` when seating entities in `order`."""
    prob = one
    seated: list[int] = []
    counts: dict[int, int] = {}
    for entity in order:
        block = partition[entity]
        n_seen = len(seated)
        if block in counts:
            prob *= (one * counts[block]) / (n_seen + alpha)
            counts[block] += 1
        else:
            prob *= (one * alpha) / (n_seen + alpha) if n_seen else one
            counts[block] = 1
        seated.append(entity)
    return prob


@pytest.mark.parametrize("alpha", [0.5, 1.0, 10.0])
def test_exchangeability_over_insertion_orders(alpha):
    from fractions import Fraction

    for partition in set_partitions(3):
        # exact equality in rational arithmetic
        exact = {
            seating_product(partition, order, Fraction(alpha), one=Fraction(1))
            for order in itertools.permutations(range(3))
        }
        assert len(exact) == 1
        # float products agree to machine precision
        floats = [
            seating_product(partition, order, alpha)
            for order in itertools.permutations(range(3))
        ]
        spread = (max(floats) - min(floats)) / max(floats)
        assert spread <= 4 * np.finfo(float).eps


@pytest.fixture
def tiny_schema():
    return Schema(
        entity_classes=(
            EntityClassSpec("U", (AttributeSpec("x", 3, 2.0),), 1.0),
            EntityClassSpec("M", (), 1.0),
        ),
        relation_classes=(
            RelationClassSpec("R", "U", "M", AttributeSpec("v", 2, 1.0), "open_world"),
        ),
    )


def test_tiny_concentration_forces_single_cluster(tiny_schema):
    schema = Schema(
        entity_classes=tuple(
            EntityClassSpec(ec.name, ec.attributes, 1e-9) for ec in tiny_schema.entity_classes
        ),
        relation_classes=tiny_schema.relation_classes,
    )
    rng = np.random.default_rng(4)
    for _ in range(10):
        _, truth = rm.sample_generative(schema, {"U": 30, "M": 30}, rng)
        assert truth.n_clusters == {"U": 1, "M": 1}


def test_expected_cluster_count_matches_crp_identity():
    alpha, n, runs = 2.0, 8, 10_000
    schema = Schema(entity_classes=(EntityClassSpec("U", (), alpha),))
    rng = np.random.default_rng(5)
    ks = np.array([
        rm.sample_generative(schema, {"U": n}, rng)[1].n_clusters["U"] for _ in range(runs)
    ])
    expected = sum(alpha / (alpha + i) for i in range(n))
    se = ks.std(ddof=1) / math.sqrt(runs)
    assert abs(ks.mean() - expected) <= 2 * se


def test_ground_truth_invariants_always_hold(tiny_schema):
    rng = np.random.default_rng(6)
    for _ in range(10):
        dataset, truth = rm.sample_generative(tiny_schema, {"U": 15, "M": 12}, rng)
        assert truth.violations() == []


def test_open_world_emits_every_pair(tiny_schema):
    rng = np.random.default_rng(7)
    dataset, _ = rm.sample_generative(tiny_schema, {"U": 6, "M": 5}, rng)
    triples = dataset.relation_triples["R"]
    assert triples.shape[0] == 30
    assert {(int(s), int(o)) for s, o, _ in triples} == {
        (s, o) for s in range(6) for o in range(5)
    }


def test_closed_world_stores_only_present_pairs():
    schema = Schema(
        entity_classes=(EntityClassSpec("U", (), 1.0),),
        relation_classes=(
            RelationClassSpec("Loop", "U", "U", AttributeSpec("v", 2, 1.0), "closed_world"),
        ),
    )
    rng = np.random.default_rng(8)
    dataset, truth = rm.sample_generative(schema, {"U": 12}, rng)
    triples = dataset.relation_triples["Loop"]
    assert triples.shape[0] < 144  # some absences implied
    assert triples.size == 0 or triples[:, 2].min() >= 1


def test_symmetric_emits_canonical_unordered_pairs():
    schema = Schema(
        entity_classes=(EntityClassSpec("G", (), 2.0),),
        relation_classes=(
            RelationClassSpec("I", "G", "G", AttributeSpec("v", 3, 1.0), "open_world", "symmetric"),
        ),
    )
    rng = np.random.default_rng(9)
    dataset, _ = rm.sample_generative(schema, {"G": 7}, rng)
    triples = dataset.relation_triples["I"]
    assert triples.shape[0] == 21
    assert np.all(triples[:, 0] < triples[:, 1])


def test_directed_self_relation_includes_diagonal():
    schema = Schema(
        entity_classes=(EntityClassSpec("G", (), 2.0),),
        relation_classes=(
            RelationClassSpec("P", "G", "G", AttributeSpec("v", 2, 1.0), "open_world"),
        ),
    )
    rng = np.random.default_rng(10)
    dataset, _ = rm.sample_generative(schema, {"G": 5}, rng)
    triples = dataset.relation_triples["P"]
    assert triples.shape[0] == 25
    assert {(int(s), int(o)) for s, o, _ in triples} >= {(i, i) for i in range(5)}


def test_generation_is_deterministic_given_seed(tiny_schema):
    a_data, a_truth = rm.sample_generative(tiny_schema, {"U": 9, "M": 8}, np.random.default_rng(11))
    b_data, b_truth = rm.sample_generative(tiny_schema, {"U": 9, "M": 8}, np.random.default_rng(11))
    assert np.array_equal(a_data.relation_triples["R"], b_data.relation_triples["R"])
    assert np.array_equal(a_data.attribute_tables["U"], b_data.attribute_tables["U"])
    assert all(
        np.array_equal(a_truth.assignments[k], b_truth.assignments[k]) for k in ("U", "M")
    )


def test_cluster_members_match_cluster_parameters():
    # one giant cluster; empirical value frequencies approach the drawn vector
    schema = Schema(
        entity_classes=(EntityClassSpec("U", (AttributeSpec("x", 3, 2.0),), 1e-9),)
    )
    rng = np.random.default_rng(12)
    dataset, truth = rm.sample_generative(schema, {"U": 20_000}, rng)
    assert truth.n_clusters["U"] == 1
    phi = truth.attribute_params["U"][0][0]
    freq = np.bincount(dataset.attribute_tables["U"][:, 0], minlength=3) / 20_000
    assert np.max(np.abs(freq - phi)) <= 0.02


def test_ground_truth_json_round_trip(tiny_schema):
    rng = np.random.default_rng(13)
    _, truth = rm.sample_generative(tiny_schema, {"U": 10, "M": 6}, rng)
    back = rm.GroundTruth.from_json(truth.to_json())
    assert back.n_clusters == truth.n_clusters
    assert all(np.array_equal(back.assignments[k], truth.assignments[k]) for k in ("U", "M"))
    for key, vec in truth.relation_params["R"].items():
        np.testing.assert_allclose(back.relation_params["R"][key], vec)
