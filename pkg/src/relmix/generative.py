"""Forward sampling from the coupled Chinese-restaurant generative process.

Each entity class is seated by its own CRP; attribute parameters are drawn
per cluster from the attribute's Dirichlet prior, and relation parameters
are drawn per (subject cluster, object cluster) pair, lazily on first
need, so the two seating processes couple through shared relation cells.
Used for synthetic benchmarks, posterior-recovery tests, and as a prior
oracle for the inference module.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from ._util import categorical, draw_dirichlet
from .data import Dataset
from .schema import Schema


def crp_assign_probs(occupancies, alpha0: float) -> np.ndarray:
    """Seating distribution over K existing clusters plus one new cluster.

    Entry i < K is occupancy_i / (n + alpha0); the final entry is
    alpha0 / (n + alpha0).
    """
    if not alpha0 > 0:
        raise ValueError(f"alpha0 must be positive, got {alpha0}")
    occ = np.asarray(list(occupancies), dtype=float)
    if occ.size and occ.min() < 1:
        raise ValueError("occupancies must all be >= 1")
    total = occ.sum() + alpha0
    return np.append(occ, alpha0) / total


def sample_crp_partition(n: int, alpha0: float, rng: np.random.Generator) -> np.ndarray:
    """Seat n entities sequentially; labels are contiguous in order of first
    appearance.  Matches iterated draws from :func:`crp_assign_probs`."""
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    if not alpha0 > 0:
        raise ValueError(f"alpha0 must be positive, got {alpha0}")
    z = np.zeros(n, dtype=np.int64)
    counts: list[float] = [1.0]
    for i in range(1, n):
        # inline seating draw; equivalent to categorical(crp_assign_probs(...))
        u = rng.random() * (i + alpha0)
        acc = 0.0
        k = len(counts)
        for j, c in enumerate(counts):
            acc += c
            if u < acc:
                k = j
                break
        if k == len(counts):
            counts.append(1.0)
        else:
            counts[k] += 1.0
        z[i] = k
    return z


@dataclass
class GroundTruth:
    """The latent state behind a synthetic dataset.

    `assignments[class]` maps entity index to cluster; `attribute_params
    [class][a]` is a (K, cardinality) array of per-cluster value
    distributions; `relation_params[rel][(k, c)]` is the value
    distribution at a (subject cluster, object cluster) pair, present for
    every pair that was needed during generation (symmetric relations key
    canonically, k <= c).
    """

    assignments: dict[str, np.ndarray]
    n_clusters: dict[str, int]
    attribute_params: dict[str, list[np.ndarray]] = field(default_factory=dict)
    relation_params: dict[str, dict[tuple[int, int], np.ndarray]] = field(default_factory=dict)

    def violations(self) -> list[str]:
        """Invariant check used by tests; empty on a healthy instance."""
        out = []
        for name, z in self.assignments.items():
            k = self.n_clusters[name]
            if z.size and (z.min() < 0 or z.max() >= k):
                out.append(f"{name}: assignment outside 0..{k - 1}")
            if np.bincount(z, minlength=k).min() < 1:
                out.append(f"{name}: unoccupied cluster")
        vectors = [
            v for params in self.attribute_params.values() for arr in params for v in arr
        ] + [v for table in self.relation_params.values() for v in table.values()]
        for v in vectors:
            if np.any(np.asarray(v) < 0) or abs(float(np.sum(v)) - 1.0) > 1e-12:
                out.append("parameter vector is not a probability vector")
        return out

    def to_json(self) -> str:
        doc = {
            "assignments": {k: v.tolist() for k, v in self.assignments.items()},
            "n_clusters": dict(self.n_clusters),
            "attribute_params": {
                k: [arr.tolist() for arr in params] for k, params in self.attribute_params.items()
            },
            "relation_params": {
                rel: {f"{k},{c}": v.tolist() for (k, c), v in table.items()}
                for rel, table in self.relation_params.items()
            },
        }
        return json.dumps(doc, indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "GroundTruth":
        doc = json.loads(text)
        return cls(
            assignments={k: np.asarray(v, dtype=np.int64) for k, v in doc["assignments"].items()},
            n_clusters={k: int(v) for k, v in doc["n_clusters"].items()},
            attribute_params={
                k: [np.asarray(a, dtype=float) for a in params]
                for k, params in doc.get("attribute_params", {}).items()
            },
            relation_params={
                rel: {
                    tuple(int(x) for x in key.split(",")): np.asarray(v, dtype=float)
                    for key, v in table.items()
                }
                for rel, table in doc.get("relation_params", {}).items()
            },
        )


def _emit_categorical_rows(rng, probs: np.ndarray) -> np.ndarray:
    """One draw per row of a (n, r) matrix of distributions."""
    c = np.cumsum(probs, axis=1)
    u = rng.random(probs.shape[0]) * c[:, -1]
    return (u[:, None] >= c).sum(axis=1)


def sample_generative(schema: Schema, sizes: dict[str, int],
                      rng: np.random.Generator) -> tuple[Dataset, GroundTruth]:
    """Draw a fully specified synthetic instance from the prior.

    All attribute cells are emitted.  Open-world relation classes emit a
    triple for every candidate pair (sparsifying is the caller's job);
    closed-world classes store only pairs whose sampled value is nonzero,
    value 0 being implied absence.  Directed self-relations range over all
    ordered pairs including (i, i); symmetric ones over unordered pairs
    i < j.
    """
    assignments: dict[str, np.ndarray] = {}
    n_clusters: dict[str, int] = {}
    for ec in schema.entity_classes:
        n = int(sizes[ec.name])
        if n < 1:
            raise ValueError(f"size for {ec.name!r} must be >= 1, got {n}")
        z = sample_crp_partition(n, ec.concentration, rng)
        assignments[ec.name] = z
        n_clusters[ec.name] = int(z.max()) + 1

    attribute_params: dict[str, list[np.ndarray]] = {}
    tables: dict[str, np.ndarray] = {}
    for ec in schema.entity_classes:
        z = assignments[ec.name]
        k = n_clusters[ec.name]
        params = []
        table = np.empty((z.size, len(ec.attributes)), dtype=np.int64)
        for j, attr in enumerate(ec.attributes):
            rows = np.stack([draw_dirichlet(rng, attr.pseudocounts()) for _ in range(k)])
            params.append(rows)
            table[:, j] = _emit_categorical_rows(rng, rows[z])
        attribute_params[ec.name] = params
        tables[ec.name] = table

    relation_params: dict[str, dict[tuple[int, int], np.ndarray]] = {}
    triples: dict[str, np.ndarray] = {}
    for rc in schema.relation_classes:
        z_s = assignments[rc.subject_class]
        z_o = assignments[rc.object_class]
        pseudo = rc.relation_attribute.pseudocounts()
        table: dict[tuple[int, int], np.ndarray] = {}

        def cell(k: int, c: int) -> np.ndarray:
            key = (min(k, c), max(k, c)) if rc.is_symmetric else (k, c)
            if key not in table:
                table[key] = draw_dirichlet(rng, pseudo)
            return table[key]

        rows = []
        for s in range(z_s.size):
            objs = np.arange(s + 1, z_o.size) if rc.is_symmetric else np.arange(z_o.size)
            if objs.size == 0:
                continue
            probs = np.stack([cell(z_s[s], z_o[o]) for o in objs])
            values = _emit_categorical_rows(rng, probs)
            for o, v in zip(objs, values):
                if rc.closed_world and v == 0:
                    continue
                rows.append((s, int(o), int(v)))
        relation_params[rc.name] = table
        triples[rc.name] = np.asarray(rows, dtype=np.int64).reshape(-1, 3)

    counts = {ec.name: int(sizes[ec.name]) for ec in schema.entity_classes}
    dataset = Dataset(schema, counts, tables, triples)
    truth = GroundTruth(assignments, n_clusters, attribute_params, relation_params)
    return dataset, truth
