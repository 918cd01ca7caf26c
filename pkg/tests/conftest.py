"""Shared fixtures and independent oracles.

The oracles here deliberately avoid the package's numerics: they use
math.lgamma and plain dict counting so that agreement with the library
is evidence, not tautology.
"""

import math

import numpy as np
import pytest

from relmix import AttributeSpec, EntityClassSpec, RelationClassSpec, Schema


# --- independent math oracles ---------------------------------------------------

def set_partitions(n):
    """All set partitions of range(n) as canonical assignment tuples."""
    out = []

    def grow(prefix, k):
        if len(prefix) == n:
            out.append(tuple(prefix))
            return
        for c in range(k + 1):
            grow(prefix + [c], k + (1 if c == k else 0))

    if n == 0:
        return [()]
    grow([0], 1)
    return out


def canon(z):
    """Relabel an assignment vector by first appearance."""
    m = {}
    out = []
    for x in z:
        if x not in m:
            m[x] = len(m)
        out.append(m[x])
    return tuple(out)


def crp_log_prob(counts, alpha):
    """Log CRP probability of a partition with the given block sizes."""
    n = sum(counts)
    return (
        len(counts) * math.log(alpha)
        + sum(math.lgamma(c) for c in counts)
        + math.lgamma(alpha)
        - math.lgamma(alpha + n)
    )


def dm_log_marginal(counts, strength, base):
    """Dirichlet-multinomial log marginal via math.lgamma."""
    n = sum(counts)
    out = math.lgamma(strength) - math.lgamma(strength + n)
    for c, b in zip(counts, base):
        out += math.lgamma(strength * b + c) - math.lgamma(strength * b)
    return out


def enumerate_relation_posterior(n_subjects, n_objects, triples, alpha, strength, r=2):
    """Exact posterior over (subject-partition, object-partition) pairs.

    Pure-python enumeration of the collapsed joint: CRP seating products
    times a Dirichlet-multinomial marginal per occupied cluster pair.
    Open-world, one directed relation, no attributes.
    """
    base = [1.0 / r] * r
    logps = {}
    for pu in set_partitions(n_subjects):
        cu = [pu.count(c) for c in range(max(pu) + 1)]
        for pm in set_partitions(n_objects):
            cm = [pm.count(c) for c in range(max(pm) + 1)]
            cells = {}
            for s, o, v in triples:
                cells.setdefault((pu[s], pm[o]), [0] * r)[v] += 1
            lp = crp_log_prob(cu, alpha) + crp_log_prob(cm, alpha)
            lp += sum(dm_log_marginal(c, strength, base) for c in cells.values())
            logps[(pu, pm)] = lp
    mx = max(logps.values())
    weights = {k: math.exp(v - mx) for k, v in logps.items()}
    total = sum(weights.values())
    return {k: v / total for k, v in weights.items()}


def total_variation(empirical, exact):
    keys = set(empirical) | set(exact)
    return 0.5 * sum(abs(empirical.get(k, 0.0) - exact.get(k, 0.0)) for k in keys)


def partition_pair_frequencies(samples):
    """Canonical (subject-partition, object-partition) frequencies of snapshots."""
    freq = {}
    for state in samples.states:
        key = (canon(state.z[0]), canon(state.z[1]))
        freq[key] = freq.get(key, 0) + 1
    n = len(samples.states)
    return {k: v / n for k, v in freq.items()}


# --- shared schemas ---------------------------------------------------------------

@pytest.fixture
def movie_schema():
    """User/Movie with one open-world binary relation, unit priors."""
    return Schema(
        entity_classes=(
            EntityClassSpec("User", (), 1.0),
            EntityClassSpec("Movie", (), 1.0),
        ),
        relation_classes=(
            RelationClassSpec(
                name="Like",
                subject_class="User",
                object_class="Movie",
                relation_attribute=AttributeSpec("liked", 2, 1.0, (0.5, 0.5)),
                missing_policy="open_world",
            ),
        ),
    )


@pytest.fixture
def gene_schema():
    """Six entity classes, six closed-world relations, one symmetric self-relation."""
    exist = lambda: AttributeSpec("exists", 2, 1.0, (0.5, 0.5))  # noqa: E731
    return Schema(
        entity_classes=(
            EntityClassSpec(
                "Gene",
                (
                    AttributeSpec("essential", 2, 1.0, (0.5, 0.5)),
                    AttributeSpec("chromosome", 17, 1.0),
                ),
                10.0,
            ),
            EntityClassSpec("Complex", (), 10.0),
            EntityClassSpec("Phenotype", (), 10.0),
            EntityClassSpec("StructureClass", (), 10.0),
            EntityClassSpec("Motif", (), 10.0),
            EntityClassSpec("Function", (), 10.0),
        ),
        relation_classes=(
            RelationClassSpec("Interact", "Gene", "Gene", exist(), "closed_world", "symmetric"),
            RelationClassSpec("Have", "Gene", "Function", exist(), "closed_world"),
            RelationClassSpec("Observe", "Gene", "Phenotype", exist(), "closed_world"),
            RelationClassSpec("Form", "Gene", "Complex", exist(), "closed_world"),
            RelationClassSpec("Belong", "Gene", "StructureClass", exist(), "closed_world"),
            RelationClassSpec("Contain", "Gene", "Motif", exist(), "closed_world"),
        ),
    )


@pytest.fixture
def mixed_schema():
    """Two classes; closed-world directed, closed-world symmetric self,
    open-world directed self with diagonal pairs -- the worst-case mix."""
    return Schema(
        entity_classes=(
            EntityClassSpec("A", (AttributeSpec("x", 3, 2.0),), 2.0),
            EntityClassSpec("B", (AttributeSpec("y", 2, 1.0),), 5.0),
        ),
        relation_classes=(
            RelationClassSpec(
                "Touch", "A", "B", AttributeSpec("e", 2, 0.5), "closed_world"
            ),
            RelationClassSpec(
                "Bond", "A", "A", AttributeSpec("kind", 3, 1.0), "closed_world", "symmetric"
            ),
            RelationClassSpec(
                "Points", "A", "A", AttributeSpec("v", 2, 1.0), "open_world"
            ),
        ),
    )


def random_mixed_dataset(schema, n_a=12, n_b=9, seed=3):
    import relmix as rm

    rng = np.random.default_rng(seed)
    attr_a = rng.integers(-1, 3, size=(n_a, 1))
    attr_b = rng.integers(-1, 2, size=(n_b, 1))
    touch = [(a, b, 1) for a in range(n_a) for b in range(n_b) if rng.random() < 0.3]
    bond = [
        (i, j, int(rng.integers(1, 3)))
        for i in range(n_a)
        for j in range(i + 1, n_a)
        if rng.random() < 0.25
    ]
    points = [
        (i, j, int(rng.integers(0, 2)))
        for i in range(n_a)
        for j in range(n_a)
        if rng.random() < 0.2
    ]
    return rm.Dataset(
        schema,
        {"A": n_a, "B": n_b},
        {"A": attr_a, "B": attr_b},
        {
            "Touch": np.asarray(touch, dtype=np.int64).reshape(-1, 3),
            "Bond": np.asarray(bond, dtype=np.int64).reshape(-1, 3),
            "Points": np.asarray(points, dtype=np.int64).reshape(-1, 3),
        },
    )
