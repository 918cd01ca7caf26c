"""Posterior prediction and the evaluation harness.

Predictions average per-snapshot value distributions with uniform
weights: at each snapshot the queried cell's distribution is either the
instantiated parameter vector or, in collapsed states, the posterior
predictive computed from sufficient statistics.  The harness side covers
binary accuracy, top-N ROC curves, adjusted Rand scores for partition
recovery, and cross-validation of the Dirichlet prior strength.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .data import Dataset, train_test_split
from .inference import ChainConfig, LatentState, PosteriorSamples, run_gibbs
from .schema import Schema

DEFAULT_TOPN = (5, 10, 15, 20, 25, 30, 35, 40, 45, 50)


@dataclass
class PredictionResult:
    """A probability vector over value codes for one query."""

    query: dict
    distribution: np.ndarray
    samples_used: int


@dataclass
class RocCurve:
    """(N, sensitivity, 1 - specificity) points, averaged over subjects."""

    points: list[tuple[int, float, float]]


def _require_snapshots(samples: PosteriorSamples) -> None:
    if not samples.states:
        raise ValueError("no posterior snapshots available")


def _relation_predictive_table(state: LatentState, rel_index: int) -> np.ndarray:
    """Per-cell value distributions (K_s, K_o, r) for one snapshot."""
    rc = state.schema.relation_classes[rel_index]
    if state.rel_params is not None:
        return state.rel_params[rel_index]
    eff = state.effective_relation_counts(rel_index).astype(float)
    pseudo = state._rel_pseudo[rel_index]
    table = eff + pseudo
    table /= table.sum(axis=-1, keepdims=True)
    if rc.is_symmetric:
        upper = np.triu_indices(table.shape[0])
        table[upper[1], upper[0]] = table[upper]
    return table


def predict_relation_batch(samples: PosteriorSamples, relation_class: str,
                           pairs, dataset: Dataset) -> np.ndarray:
    """Snapshot-averaged value distributions for many (subject, object) pairs.

    Returns an (n_pairs, r) array.  Shares the per-snapshot predictive
    table across queries, so prefer this over repeated single calls.
    """
    _require_snapshots(samples)
    schema = dataset.schema
    ri = schema.relation_class_index(relation_class)
    rc = schema.relation_classes[ri]
    si = schema.entity_class_index(rc.subject_class)
    oi = schema.entity_class_index(rc.object_class)
    pairs = np.asarray(pairs, dtype=np.int64).reshape(-1, 2)
    n_s = dataset.entity_counts[rc.subject_class]
    n_o = dataset.entity_counts[rc.object_class]
    if pairs.size and (pairs[:, 0].min() < 0 or pairs[:, 0].max() >= n_s):
        raise ValueError(f"unknown subject index for {relation_class!r}")
    if pairs.size and (pairs[:, 1].min() < 0 or pairs[:, 1].max() >= n_o):
        raise ValueError(f"unknown object index for {relation_class!r}")
    out = np.zeros((pairs.shape[0], rc.relation_attribute.cardinality))
    for state in samples.states:
        table = _relation_predictive_table(state, ri)
        out += table[state.z[si][pairs[:, 0]], state.z[oi][pairs[:, 1]]]
    return out / len(samples.states)


def predict_relation(samples: PosteriorSamples, relation_class: str, subject: int,
                     object_: int, dataset: Dataset) -> PredictionResult:
    """Posterior value distribution for one relation pair (training entities)."""
    dist = predict_relation_batch(samples, relation_class, [(subject, object_)], dataset)[0]
    return PredictionResult(
        query={"relation": relation_class, "subject": int(subject), "object": int(object_)},
        distribution=dist,
        samples_used=len(samples.states),
    )


def predict_attribute(samples: PosteriorSamples, entity_class: str, entity: int,
                      attribute: str, dataset: Dataset) -> PredictionResult:
    """Posterior value distribution for one entity attribute.

    In collapsed snapshots the entity's own observed value, if any, is
    excluded from the counts before forming the posterior predictive.
    """
    _require_snapshots(samples)
    schema = dataset.schema
    ci = schema.entity_class_index(entity_class)
    ec = schema.entity_classes[ci]
    ai = next((i for i, a in enumerate(ec.attributes) if a.name == attribute), None)
    if ai is None:
        raise ValueError(f"unknown attribute {attribute!r} for class {entity_class!r}")
    if not 0 <= entity < dataset.entity_counts[entity_class]:
        raise ValueError(f"unknown entity index {entity} for class {entity_class!r}")
    own = int(dataset.attribute_tables[entity_class][entity, ai])
    pseudo = ec.attributes[ai].pseudocounts()
    out = np.zeros(ec.attributes[ai].cardinality)
    for state in samples.states:
        k = int(state.z[ci][entity])
        if state.attr_params is not None:
            out += state.attr_params[ci][ai][k]
        else:
            counts = state.attr_counts[ci][ai][k].astype(float)
            if own >= 0:
                counts[own] -= 1
            post = counts + pseudo
            out += post / post.sum()
    dist = out / len(samples.states)
    return PredictionResult(
        query={"entity_class": entity_class, "entity": int(entity), "attribute": attribute},
        distribution=dist,
        samples_used=len(samples.states),
    )


def fold_in_entity(samples: PosteriorSamples, entity_class: str,
                   attribute_obs: dict[str, int], relation_obs,
                   rng: np.random.Generator | None = None) -> list[np.ndarray]:
    """Cluster-membership distribution of a held-out entity, per snapshot.

    For each snapshot the weights are occupancy times the entity
    likelihood for existing clusters plus concentration times the
    prior-marginal for a new cluster, normalized; snapshots are never
    mutated.  Only the supplied observations condition the result
    (unlisted pairs stay unknown even under closed world).  `rng` is
    accepted for callers that sample downstream; the distributions
    themselves are deterministic.
    """
    _require_snapshots(samples)
    out = []
    for state in samples.states:
        ci = state.schema.entity_class_index(entity_class)
        bundle = state.ghost_bundle(entity_class, attribute_obs, relation_obs)
        ll, ll_new = state._score_bundle(bundle, state.mode)
        with np.errstate(divide="ignore"):
            logw = np.append(np.log(state.n_k[ci]) + ll, np.log(state._alpha0[ci]) + ll_new)
        logw -= logw.max()
        w = np.exp(logw)
        out.append(w / w.sum())
    return out


def accuracy(predictions: list[PredictionResult], truth, threshold: float = 0.5) -> float:
    """Fraction of correctly predicted values.

    Binary attributes predict 1 exactly when P(1) > threshold (a tie at
    the threshold predicts 0); higher cardinalities predict the argmax.
    """
    truth = np.asarray(truth, dtype=np.int64)
    if len(predictions) == 0 or len(predictions) != truth.shape[0]:
        raise ValueError("predictions and truth must be aligned and nonempty")
    hits = 0
    for pred, t in zip(predictions, truth):
        d = np.asarray(pred.distribution)
        guess = int(d[1] > threshold) if d.shape[0] == 2 else int(np.argmax(d))
        hits += int(guess == int(t))
    return hits / len(predictions)


def roc_topn(scores: dict, truth: dict, n_values=DEFAULT_TOPN) -> RocCurve:
    """Top-N recommendation ROC, averaged over subjects.

    `scores[subject]` ranks all candidate objects (ties broken by object
    index); `truth[subject]` is the set of positive object indices.  For
    each N, sensitivity is the recovered fraction of positives and
    1 - specificity the recommended fraction of negatives; subjects
    without positives (resp. negatives) drop out of the corresponding
    average.
    """
    points = []
    ranked = {}
    for subject, s in scores.items():
        s = np.asarray(s, dtype=float)
        if s.size == 0:
            raise ValueError(f"subject {subject!r} has an empty candidate set")
        ranked[subject] = np.lexsort((np.arange(s.size), -s))
    for n in n_values:
        sens, fpr = [], []
        for subject, order in ranked.items():
            pos = set(int(x) for x in truth.get(subject, ()))
            top = set(int(x) for x in order[: int(n)])
            n_neg = order.size - len(pos)
            if pos:
                sens.append(len(top & pos) / len(pos))
            if n_neg:
                fpr.append(len(top - pos) / n_neg)
        points.append((int(n), float(np.mean(sens)), float(np.mean(fpr))))
    return RocCurve(points=points)


def adjusted_rand_index(assignment_a, assignment_b) -> float:
    """Chance-corrected pair-counting agreement between two partitions."""
    a = np.asarray(assignment_a)
    b = np.asarray(assignment_b)
    if a.shape != b.shape or a.ndim != 1 or a.size < 2:
        raise ValueError("assignments must be equal-length vectors of size >= 2")
    _, ai = np.unique(a, return_inverse=True)
    _, bi = np.unique(b, return_inverse=True)
    table = np.zeros((ai.max() + 1, bi.max() + 1), dtype=np.int64)
    np.add.at(table, (ai, bi), 1)

    def comb2(x):
        return x * (x - 1) / 2.0

    index = comb2(table).sum()
    sum_a = comb2(table.sum(axis=1)).sum()
    sum_b = comb2(table.sum(axis=0)).sum()
    expected = sum_a * sum_b / comb2(a.size)
    max_index = (sum_a + sum_b) / 2.0
    if max_index == expected:
        return 1.0
    return float((index - expected) / (max_index - expected))


def consensus_partition(assignment_matrix) -> np.ndarray:
    """Majority co-clustering partition across snapshots.

    Entities are linked when they share a cluster in more than half of
    the snapshots; connected components become the consensus clusters,
    labeled in order of first appearance.
    """
    z = np.asarray(assignment_matrix)
    s, n = z.shape
    co = np.zeros((n, n), dtype=np.int64)
    for row in z:
        co += row[:, None] == row[None, :]
    linked = co * 2 > s
    labels = np.full(n, -1, dtype=np.int64)
    next_label = 0
    for i in range(n):
        if labels[i] >= 0:
            continue
        stack = [i]
        labels[i] = next_label
        while stack:
            u = stack.pop()
            for v in np.flatnonzero(linked[u]):
                if labels[v] < 0:
                    labels[v] = next_label
                    stack.append(int(v))
        next_label += 1
    return labels


def mode_cluster_count(samples: PosteriorSamples, entity_class: str) -> int:
    """Most frequent cluster count across snapshots (smallest on ties)."""
    _require_snapshots(samples)
    ci = samples.states[0].schema.entity_class_index(entity_class)
    ks = np.asarray([state.K[ci] for state in samples.states])
    return int(np.argmax(np.bincount(ks)))


def _with_prior_strength(schema: Schema, value: float, tune_groups) -> Schema:
    def set_attr(a):
        return replace(a, prior_strength=float(value))

    entity_classes = schema.entity_classes
    relation_classes = schema.relation_classes
    if "entity_attributes" in tune_groups:
        entity_classes = tuple(
            replace(ec, attributes=tuple(set_attr(a) for a in ec.attributes))
            for ec in entity_classes
        )
    if "relation_attributes" in tune_groups:
        relation_classes = tuple(
            replace(rc, relation_attribute=set_attr(rc.relation_attribute))
            for rc in relation_classes
        )
    return Schema(entity_classes=entity_classes, relation_classes=relation_classes)


def cv_tune_beta0(schema: Schema, dataset: Dataset, beta0_grid, folds: int,
                  chain_config: ChainConfig, relation_class: str | None = None,
                  tune_groups=("entity_attributes", "relation_attributes")):
    """Grid-search the Dirichlet prior strength by cross-validated accuracy.

    Each grid value is applied as a single shared strength to every
    attribute in the tuned role groups (entity attributes, relation
    attributes, or both); per-attribute tuning is out of scope.  Every
    fold holds out 1/folds of the target relation's triples with a
    fold-specific seed, fits a chain on the rest, and scores held-out
    predictive accuracy.  Returns (best strength per tuned group, mean
    score per grid value, per-fold scores per grid value); ties prefer
    the smallest strength.
    """
    grid = [float(b) for b in beta0_grid]
    if not grid:
        raise ValueError("beta0_grid must be nonempty")
    if folds < 2:
        raise ValueError("folds must be >= 2")
    if relation_class is None:
        if len(schema.relation_classes) != 1:
            raise ValueError("relation_class is required when the schema has several")
        relation_class = schema.relation_classes[0].name
    m = dataset.relation_triples[relation_class].shape[0]
    if m < folds:
        raise ValueError(f"cannot make {folds} folds out of {m} observed triples")

    fold_scores: dict[float, list[float]] = {b: [] for b in grid}
    for b in grid:
        schema_b = _with_prior_strength(schema, b, tune_groups)
        for f in range(folds):
            base = Dataset(schema_b, dataset.entity_counts, dataset.attribute_tables,
                           dataset.relation_triples)
            split = train_test_split(base, relation_class, 1.0 / folds,
                                     seed=chain_config.seed * 100003 + f)
            samples = run_gibbs(schema_b, split.train, chain_config)
            test = split.test[relation_class]
            dists = predict_relation_batch(samples, relation_class, test[:, :2], split.train)
            preds = [
                PredictionResult({"i": i}, d, len(samples.states)) for i, d in enumerate(dists)
            ]
            fold_scores[b].append(accuracy(preds, test[:, 2]))

    mean_scores = {b: float(np.mean(fold_scores[b])) for b in grid}
    best = None
    for b in sorted(grid):
        if best is None or mean_scores[b] > mean_scores[best]:
            best = b
    best_per_group = {g: best for g in tune_groups}
    return best_per_group, mean_scores, fold_scores
