"""Gibbs sampling over latent cluster assignments.

The sampler updates one entity at a time: the entity is unseated (its
contribution removed from all sufficient statistics, its cluster deleted
if emptied), then reseated by a categorical draw whose weights combine
the CRP seating prior with the likelihood of the entity's observed
attributes and relations under each existing cluster, plus one new-cluster
option weighted by the concentration times the prior-marginal likelihood.

Two interoperable modes share this skeleton:

* ``collapsed`` (default): multinomial parameters are integrated out via
  Dirichlet conjugacy; existing-cluster likelihoods are exact ratios of
  Dirichlet-multinomial marginals so the chain targets the same joint
  that small instances can verify by exhaustive enumeration.
* ``instantiated``: explicit per-cluster attribute vectors and
  per-cluster-pair relation vectors live in the state; an entity joining
  an existing cluster inherits them, a new cluster draws fresh vectors
  from the posterior given that entity's data alone, and all vectors are
  refreshed periodically from their full conditionals.

Closed-world relation classes never materialize absent pairs: absence
counts are synthesized from cluster occupancy products whenever a
likelihood, posterior draw, or effective count table needs them.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import gammaln

from ._util import categorical_from_log, draw_dirichlet
from .data import MISSING, Dataset
from .generative import sample_crp_partition
from .schema import Schema, schema_hash

MODES = ("collapsed", "instantiated")

ROLE_SUBJECT = "sub"
ROLE_OBJECT = "obj"
ROLE_SYMMETRIC = "sym"


class NumericalError(RuntimeError):
    """A non-finite quantity appeared where the model guarantees finiteness."""

    def __init__(self, message, state=None, sweep=None):
        super().__init__(message)
        self.state = state
        self.sweep = sweep


@dataclass(frozen=True)
class ChainConfig:
    """Sweep budget and sampling mode for one chain."""

    iterations: int
    burn_in: int = 0
    thin: int = 1
    param_update_period: int = 1
    mode: str = "collapsed"
    seed: int = 0

    def validate(self) -> None:
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")
        if not 0 <= self.burn_in < self.iterations:
            raise ValueError("burn_in must satisfy 0 <= burn_in < iterations")
        if self.thin < 1:
            raise ValueError("thin must be >= 1")
        if self.param_update_period < 1:
            raise ValueError("param_update_period must be >= 1")
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")

    @property
    def snapshot_count(self) -> int:
        return (self.iterations - self.burn_in) // self.thin


# --- conjugate building blocks ------------------------------------------------

def dirichlet_multinomial_marginal(counts, beta0: float, beta) -> float:
    """Log marginal probability of a count vector under a Dirichlet prior.

    Equals log[ G(b0)/G(b0+n) * prod_v G(b0*b_v + c_v)/G(b0*b_v) ] with
    n the count total, computed in log space.
    """
    counts = np.asarray(counts, dtype=float)
    beta = np.asarray(beta, dtype=float)
    if counts.shape != beta.shape:
        raise ValueError(f"dimension mismatch: counts {counts.shape} vs base {beta.shape}")
    if not beta0 > 0:
        raise ValueError(f"beta0 must be positive, got {beta0}")
    pseudo = beta0 * beta
    n = counts.sum()
    return float(
        gammaln(beta0) - gammaln(beta0 + n)
        + np.sum(gammaln(pseudo + counts) - gammaln(pseudo))
    )


def posterior_predictive_prob(value: int, counts, beta0: float, beta) -> float:
    """Posterior predictive probability of one value given observed counts."""
    counts = np.asarray(counts, dtype=float)
    beta = np.asarray(beta, dtype=float)
    if not 0 <= value < counts.shape[0]:
        raise ValueError(f"value {value} out of range 0..{counts.shape[0] - 1}")
    return float((counts[value] + beta0 * beta[value]) / (counts.sum() + beta0))


def _dm_ratio(base, pseudo, extra):
    """log dm(base + extra) - log dm(base), elementwise over leading axes.

    `base` has shape (..., r) of existing effective counts, `extra` the
    added count vectors (broadcastable to base), `pseudo` the (r,) prior
    pseudo-counts.  Vectorized so one call scores all candidate clusters.
    """
    a = base + pseudo
    t1 = (gammaln(a + extra) - gammaln(a)).sum(axis=-1)
    n0 = base.sum(axis=-1)
    b0 = pseudo.sum()
    m = np.asarray(extra).sum(axis=-1)
    t2 = gammaln(n0 + b0 + m) - gammaln(n0 + b0)
    return t1 - t2


def _dm_zero(extra, pseudo):
    """log dm of count vectors against an empty table (prior marginal)."""
    b0 = pseudo.sum()
    t1 = (gammaln(pseudo + extra) - gammaln(pseudo)).sum(axis=-1)
    m = np.asarray(extra).sum(axis=-1)
    return gammaln(b0) - gammaln(b0 + m) + t1


def _eppf_log(n_k, alpha0: float) -> float:
    """Log probability of a partition under the CRP seating scheme.

    Zero-count entries are ignored: empty clusters are bookkeeping
    artifacts, not blocks of the partition.
    """
    n_k = np.asarray(n_k, dtype=float)
    n_k = n_k[n_k > 0]
    n = n_k.sum()
    if n == 0:
        return 0.0
    return float(
        n_k.size * np.log(alpha0) + gammaln(n_k).sum()
        + gammaln(alpha0) - gammaln(alpha0 + n)
    )


# --- dataset indexing ----------------------------------------------------------

@dataclass
class _Incidence:
    """One (relation, role) through which a class's entities see observations."""

    rel_index: int
    role: str
    class_index: int
    counterpart_index: int
    ptr: np.ndarray
    adj: np.ndarray
    val: np.ndarray
    diag_val: np.ndarray | None = None  # directed self-relations only, on the sub role

    def neighbors(self, j: int) -> tuple[np.ndarray, np.ndarray]:
        lo, hi = self.ptr[j], self.ptr[j + 1]
        return self.adj[lo:hi], self.val[lo:hi]


def _csr(n_from: int, src, dst, val):
    src = np.asarray(src, dtype=np.int64)
    order = np.argsort(src, kind="stable")
    counts = np.bincount(src, minlength=n_from)
    ptr = np.zeros(n_from + 1, dtype=np.int64)
    np.cumsum(counts, out=ptr[1:])
    return ptr, np.asarray(dst, dtype=np.int64)[order], np.asarray(val, dtype=np.int64)[order]


class _DatasetIndex:
    """Per-entity adjacency (CSR) for every relation role, built once."""

    def __init__(self, schema: Schema, dataset: Dataset):
        self.incidences: list[list[_Incidence]] = [[] for _ in schema.entity_classes]
        self.rel_groups: list[list[_Incidence]] = []
        for ri, rc in enumerate(schema.relation_classes):
            si = schema.entity_class_index(rc.subject_class)
            oi = schema.entity_class_index(rc.object_class)
            n_s = dataset.entity_counts[rc.subject_class]
            n_o = dataset.entity_counts[rc.object_class]
            t = dataset.relation_triples[rc.name]
            group: list[_Incidence] = []
            if rc.is_symmetric:
                src = np.concatenate([t[:, 0], t[:, 1]])
                dst = np.concatenate([t[:, 1], t[:, 0]])
                vv = np.concatenate([t[:, 2], t[:, 2]])
                inc = _Incidence(ri, ROLE_SYMMETRIC, si, si, *_csr(n_s, src, dst, vv))
                group.append(inc)
                self.incidences[si].append(inc)
            elif si == oi:
                off = t[t[:, 0] != t[:, 1]]
                diag = np.full(n_s, MISSING, dtype=np.int64)
                dmask = t[:, 0] == t[:, 1]
                diag[t[dmask, 0]] = t[dmask, 2]
                inc_s = _Incidence(ri, ROLE_SUBJECT, si, si,
                                   *_csr(n_s, off[:, 0], off[:, 1], off[:, 2]), diag_val=diag)
                inc_o = _Incidence(ri, ROLE_OBJECT, si, si,
                                   *_csr(n_s, off[:, 1], off[:, 0], off[:, 2]))
                group.extend([inc_s, inc_o])
                self.incidences[si].extend([inc_s, inc_o])
            else:
                inc_s = _Incidence(ri, ROLE_SUBJECT, si, oi, *_csr(n_s, t[:, 0], t[:, 1], t[:, 2]))
                inc_o = _Incidence(ri, ROLE_OBJECT, oi, si, *_csr(n_o, t[:, 1], t[:, 0], t[:, 2]))
                group.extend([inc_s, inc_o])
                self.incidences[si].append(inc_s)
                self.incidences[oi].append(inc_o)
            self.rel_groups.append(group)


# --- observation bundles --------------------------------------------------------

@dataclass
class _RelObs:
    """One entity's effective observations through one relation class.

    `entries` holds (role, G) with G a (K_counterpart, r) count matrix of
    the entity's observations grouped by the counterpart's current
    cluster (closed-world implied absences already folded into column 0).
    `diag_value` carries the self-pair value for directed self-relations
    (implied 0 under closed world), and `include_absences` records
    whether column-0 absence synthesis was applied.
    """

    rel_index: int
    entries: list[tuple[str, np.ndarray]]
    diag_value: int | None = None
    include_absences: bool = True


@dataclass
class _ObsBundle:
    class_index: int
    attrs: list[tuple[int, int]] = field(default_factory=list)  # (attr index, value)
    relations: list[_RelObs] = field(default_factory=list)


# --- latent state -----------------------------------------------------------------

class LatentState:
    """Assignments, occupancies, and sufficient statistics of one chain.

    Sufficient statistics store observed counts only; closed-world
    absence is synthesized on demand (see
    :meth:`effective_relation_counts`).  In instantiated mode the state
    additionally carries per-cluster attribute vectors and
    per-cluster-pair relation vectors.
    """

    def __init__(self, schema: Schema, dataset: Dataset, mode: str = "collapsed",
                 index: _DatasetIndex | None = None):
        if mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {mode!r}")
        self.schema = schema
        self.dataset = dataset
        self.mode = mode
        self.index = index if index is not None else _DatasetIndex(schema, dataset)
        self.class_names = [ec.name for ec in schema.entity_classes]
        self.n_entities = [dataset.entity_counts[name] for name in self.class_names]

        # prior caches; raises SchemaError if any prior_strength is unset
        self._attr_pseudo = [[a.pseudocounts() for a in ec.attributes] for ec in schema.entity_classes]
        self._rel_pseudo = [rc.relation_attribute.pseudocounts() for rc in schema.relation_classes]
        self._alpha0 = [ec.concentration for ec in schema.entity_classes]

        self.z: list[np.ndarray] = [np.full(n, -1, dtype=np.int64) for n in self.n_entities]
        self.K: list[int] = [0 for _ in self.class_names]
        self.n_k: list[np.ndarray] = [np.zeros(0, dtype=np.int64) for _ in self.class_names]
        self.attr_counts: list[list[np.ndarray]] = [
            [np.zeros((0, a.cardinality), dtype=np.int64) for a in ec.attributes]
            for ec in schema.entity_classes
        ]
        self.rel_counts: list[np.ndarray] = [
            np.zeros((0, 0, rc.relation_attribute.cardinality), dtype=np.int64)
            for rc in schema.relation_classes
        ]
        self.attr_params: list[list[np.ndarray]] | None = None
        self.rel_params: list[np.ndarray] | None = None
        if mode == "instantiated":
            self.attr_params = [
                [np.zeros((0, a.cardinality)) for a in ec.attributes] for ec in schema.entity_classes
            ]
            self.rel_params = [
                np.zeros((0, 0, rc.relation_attribute.cardinality))
                for rc in schema.relation_classes
            ]

    # -- construction -------------------------------------------------------

    @classmethod
    def from_assignments(cls, schema: Schema, dataset: Dataset,
                         assignments: dict[str, np.ndarray], mode: str = "collapsed",
                         rng: np.random.Generator | None = None,
                         index: _DatasetIndex | None = None) -> "LatentState":
        """Build a state (statistics counted from scratch) for given assignments.

        Cluster labels may leave gaps; run :func:`remove_empty_clusters`
        afterwards if contiguity is required.  Instantiated mode draws all
        parameters from their posteriors and needs `rng`.
        """
        state = cls(schema, dataset, mode, index)
        for ci, name in enumerate(state.class_names):
            z = np.asarray(assignments[name], dtype=np.int64)
            if z.shape != (state.n_entities[ci],):
                raise ValueError(f"assignment vector for {name!r} has wrong length")
            state.z[ci] = z.copy()
            state.K[ci] = int(z.max()) + 1 if z.size else 0
            state.n_k[ci] = np.bincount(z, minlength=state.K[ci]).astype(np.int64)
        state._resize_tables()
        counted_attrs, counted_rels = state.recount_statistics()
        state.attr_counts = counted_attrs
        state.rel_counts = counted_rels
        if mode == "instantiated":
            if rng is None:
                raise ValueError("instantiated mode needs an rng to draw parameters")
            resample_parameters(state, rng)
        return state

    def _resize_tables(self) -> None:
        for ci, ec in enumerate(self.schema.entity_classes):
            self.attr_counts[ci] = [
                np.zeros((self.K[ci], a.cardinality), dtype=np.int64) for a in ec.attributes
            ]
        for ri, rc in enumerate(self.schema.relation_classes):
            ks = self.K[self.schema.entity_class_index(rc.subject_class)]
            ko = self.K[self.schema.entity_class_index(rc.object_class)]
            self.rel_counts[ri] = np.zeros((ks, ko, rc.relation_attribute.cardinality), dtype=np.int64)
        if self.mode == "instantiated":
            self.attr_params = [
                [np.zeros((self.K[ci], a.cardinality)) for a in ec.attributes]
                for ci, ec in enumerate(self.schema.entity_classes)
            ]
            self.rel_params = [np.zeros_like(t, dtype=float) for t in self.rel_counts]

    def recount_statistics(self) -> tuple[list[list[np.ndarray]], list[np.ndarray]]:
        """Rebuild all sufficient statistics from (dataset, assignments).

        This is the recount oracle: incrementally maintained tables must
        equal its output exactly at all times.
        """
        attr_counts = []
        for ci, ec in enumerate(self.schema.entity_classes):
            table = self.dataset.attribute_tables[ec.name]
            per_attr = []
            for ai, a in enumerate(ec.attributes):
                counts = np.zeros((self.K[ci], a.cardinality), dtype=np.int64)
                col = table[:, ai]
                mask = (col != MISSING) & (self.z[ci] >= 0)
                np.add.at(counts, (self.z[ci][mask], col[mask]), 1)
                per_attr.append(counts)
            attr_counts.append(per_attr)
        rel_counts = []
        for ri, rc in enumerate(self.schema.relation_classes):
            si = self.schema.entity_class_index(rc.subject_class)
            oi = self.schema.entity_class_index(rc.object_class)
            t = self.dataset.relation_triples[rc.name]
            counts = np.zeros((self.K[si], self.K[oi], rc.relation_attribute.cardinality),
                              dtype=np.int64)
            zs = self.z[si][t[:, 0]]
            zo = self.z[oi][t[:, 1]]
            mask = (zs >= 0) & (zo >= 0)
            rows, cols = zs[mask], zo[mask]
            if rc.is_symmetric:
                rows, cols = np.minimum(rows, cols), np.maximum(rows, cols)
            np.add.at(counts, (rows, cols, t[mask, 2]), 1)
            rel_counts.append(counts)
        return attr_counts, rel_counts

    # -- cluster bookkeeping -------------------------------------------------

    def _participating_axes(self, ci: int):
        for ri, rc in enumerate(self.schema.relation_classes):
            si = self.schema.entity_class_index(rc.subject_class)
            oi = self.schema.entity_class_index(rc.object_class)
            axes = []
            if si == ci:
                axes.append(0)
            if oi == ci:
                axes.append(1)
            if axes:
                yield ri, axes

    def _delete_cluster(self, ci: int, k: int) -> None:
        self.K[ci] -= 1
        self.n_k[ci] = np.delete(self.n_k[ci], k)
        z = self.z[ci]
        z[z > k] -= 1
        self.attr_counts[ci] = [np.delete(t, k, axis=0) for t in self.attr_counts[ci]]
        if self.attr_params is not None:
            self.attr_params[ci] = [np.delete(t, k, axis=0) for t in self.attr_params[ci]]
        for ri, axes in self._participating_axes(ci):
            for ax in axes:
                self.rel_counts[ri] = np.delete(self.rel_counts[ri], k, axis=ax)
                if self.rel_params is not None:
                    self.rel_params[ri] = np.delete(self.rel_params[ri], k, axis=ax)

    def _append_cluster_rows(self, ci: int) -> None:
        self.K[ci] += 1
        self.n_k[ci] = np.append(self.n_k[ci], 0)
        self.attr_counts[ci] = [
            np.concatenate([t, np.zeros((1, t.shape[1]), dtype=t.dtype)]) for t in self.attr_counts[ci]
        ]
        if self.attr_params is not None:
            self.attr_params[ci] = [
                np.concatenate([t, np.zeros((1, t.shape[1]))]) for t in self.attr_params[ci]
            ]
        for ri, axes in self._participating_axes(ci):
            for ax in axes:
                shape = list(self.rel_counts[ri].shape)
                shape[ax] = 1
                self.rel_counts[ri] = np.concatenate(
                    [self.rel_counts[ri], np.zeros(shape, dtype=np.int64)], axis=ax
                )
                if self.rel_params is not None:
                    self.rel_params[ri] = np.concatenate(
                        [self.rel_params[ri], np.zeros(shape)], axis=ax
                    )

    def _apply_entity(self, ci: int, j: int, k: int, sign: int) -> None:
        """Add (+1) or remove (-1) entity j's observations at cluster k."""
        name = self.class_names[ci]
        row = self.dataset.attribute_tables[name][j]
        for ai in np.flatnonzero(row != MISSING):
            self.attr_counts[ci][ai][k, row[ai]] += sign
        for inc in self.index.incidences[ci]:
            adj, val = inc.neighbors(j)
            if adj.size:
                pc = self.z[inc.counterpart_index][adj]
                if inc.role == ROLE_SUBJECT:
                    np.add.at(self.rel_counts[inc.rel_index], (np.full(pc.shape, k), pc, val), sign)
                elif inc.role == ROLE_OBJECT:
                    np.add.at(self.rel_counts[inc.rel_index], (pc, np.full(pc.shape, k), val), sign)
                else:
                    np.add.at(
                        self.rel_counts[inc.rel_index],
                        (np.minimum(k, pc), np.maximum(k, pc), val), sign,
                    )
            if inc.diag_val is not None and inc.diag_val[j] != MISSING:
                self.rel_counts[inc.rel_index][k, k, inc.diag_val[j]] += sign

    def remove_entity(self, entity_class: str, j: int) -> None:
        """Unseat entity j: decrement statistics, drop its cluster if emptied."""
        ci = self.schema.entity_class_index(entity_class)
        k = int(self.z[ci][j])
        if k < 0:
            raise ValueError(f"entity {j} of {entity_class!r} is not currently seated")
        self._apply_entity(ci, j, k, -1)
        self.z[ci][j] = -1
        self.n_k[ci][k] -= 1
        if self.n_k[ci][k] == 0:
            self._delete_cluster(ci, k)

    def insert_entity(self, entity_class: str, j: int, k: int,
                      rng: np.random.Generator | None = None) -> None:
        """Seat entity j at cluster k; k == K creates a new cluster.

        In instantiated mode a new cluster draws its attribute vectors and
        one relation vector per existing counterpart cluster from the
        posterior given j's data alone (prior draws where j has none).
        """
        ci = self.schema.entity_class_index(entity_class)
        if not 0 <= k <= self.K[ci]:
            raise ValueError(f"cluster index {k} out of range 0..{self.K[ci]}")
        if k == self.K[ci]:
            bundle = self._entity_bundle(ci, j) if self.mode == "instantiated" else None
            self._append_cluster_rows(ci)
            if self.mode == "instantiated":
                if rng is None:
                    raise ValueError("instantiated mode needs an rng to create clusters")
                self._draw_new_cluster_params(ci, k, bundle, rng)
        self.z[ci][j] = k
        self.n_k[ci][k] += 1
        self._apply_entity(ci, j, k, +1)

    def _draw_new_cluster_params(self, ci: int, k: int, bundle: _ObsBundle,
                                 rng: np.random.Generator) -> None:
        observed = dict(bundle.attrs)
        for ai, pseudo in enumerate(self._attr_pseudo[ci]):
            post = pseudo.copy()
            if ai in observed:
                post[observed[ai]] += 1.0
            self.attr_params[ci][ai][k] = draw_dirichlet(rng, post)
        for rel in bundle.relations:
            rc = self.schema.relation_classes[rel.rel_index]
            pseudo = self._rel_pseudo[rel.rel_index]
            params = self.rel_params[rel.rel_index]
            for role, g in rel.entries:
                for c in range(g.shape[0]):
                    draw = draw_dirichlet(rng, pseudo + g[c])
                    if role == ROLE_SUBJECT:
                        params[k, c] = draw
                    elif role == ROLE_OBJECT:
                        params[c, k] = draw
                    else:
                        params[min(k, c), max(k, c)] = draw
                        params[max(k, c), min(k, c)] = draw
            post = pseudo.copy()
            if rel.diag_value is not None:
                post[rel.diag_value] += 1.0
            if rc.subject_class == rc.object_class:
                params[k, k] = draw_dirichlet(rng, post)

    # -- observation bundles --------------------------------------------------

    def _entity_bundle(self, ci: int, j: int) -> _ObsBundle:
        """Group entity j's observations by counterpart cluster (j unseated)."""
        bundle = _ObsBundle(class_index=ci)
        row = self.dataset.attribute_tables[self.class_names[ci]][j]
        bundle.attrs = [(int(ai), int(row[ai])) for ai in np.flatnonzero(row != MISSING)]
        by_rel: dict[int, _RelObs] = {}
        for inc in self.index.incidences[ci]:
            rc = self.schema.relation_classes[inc.rel_index]
            r = rc.relation_attribute.cardinality
            kc = self.K[inc.counterpart_index]
            adj, val = inc.neighbors(j)
            if adj.size:
                pc = self.z[inc.counterpart_index][adj]
                g = np.bincount(pc * r + val, minlength=kc * r).reshape(kc, r)
            else:
                g = np.zeros((kc, r), dtype=np.int64)
            if rc.closed_world:
                g[:, 0] += self.n_k[inc.counterpart_index] - g.sum(axis=1)
            rel = by_rel.get(inc.rel_index)
            if rel is None:
                rel = _RelObs(inc.rel_index, [], None, include_absences=rc.closed_world)
                by_rel[inc.rel_index] = rel
                bundle.relations.append(rel)
            rel.entries.append((inc.role, g))
            if inc.diag_val is not None:
                dv = int(inc.diag_val[j])
                if dv != MISSING:
                    rel.diag_value = dv
                elif rc.closed_world:
                    rel.diag_value = 0
        return bundle

    def ghost_bundle(self, entity_class: str, attribute_obs: dict[str, int],
                     relation_obs) -> _ObsBundle:
        """Bundle for a held-out entity described by explicit observations.

        `attribute_obs` maps attribute name to value code; `relation_obs`
        is an iterable of (relation name, role, counterpart index, value)
        with role "subject" or "object" (ignored for symmetric
        relations).  Only the listed observations condition the
        likelihood: unlisted pairs are treated as unknown even for
        closed-world relation classes.
        """
        ci = self.schema.entity_class_index(entity_class)
        ec = self.schema.entity_classes[ci]
        bundle = _ObsBundle(class_index=ci)
        for name, v in attribute_obs.items():
            ai = next((i for i, a in enumerate(ec.attributes) if a.name == name), None)
            if ai is None:
                raise ValueError(f"unknown attribute {name!r} for class {entity_class!r}")
            if not 0 <= int(v) < ec.attributes[ai].cardinality:
                raise ValueError(f"value {v} out of range for attribute {name!r}")
            bundle.attrs.append((ai, int(v)))
        by_role: dict[tuple[int, str], np.ndarray] = {}
        for rel_name, role, counterpart, v in relation_obs:
            ri = self.schema.relation_class_index(rel_name)
            rc = self.schema.relation_classes[ri]
            r = rc.relation_attribute.cardinality
            if rc.is_symmetric:
                role_key, cj = ROLE_SYMMETRIC, self.schema.entity_class_index(rc.subject_class)
            elif role == "subject":
                role_key, cj = ROLE_SUBJECT, self.schema.entity_class_index(rc.object_class)
            elif role == "object":
                role_key, cj = ROLE_OBJECT, self.schema.entity_class_index(rc.subject_class)
            else:
                raise ValueError(f"role must be 'subject' or 'object', got {role!r}")
            own = self.schema.entity_class_index(
                rc.subject_class if role_key != ROLE_OBJECT else rc.object_class
            )
            if own != ci:
                raise ValueError(f"relation {rel_name!r} does not touch class {entity_class!r} as {role}")
            if not 0 <= int(counterpart) < self.n_entities[cj]:
                raise ValueError(f"unknown counterpart index {counterpart} for {rel_name!r}")
            lowest = 1 if rc.closed_world else 0
            if not lowest <= int(v) < r:
                raise ValueError(f"value {v} out of range for relation {rel_name!r}")
            g = by_role.setdefault((ri, role_key), np.zeros((self.K[cj], r), dtype=np.int64))
            c = int(self.z[cj][counterpart])
            if c < 0:
                raise ValueError(f"counterpart {counterpart} is not seated")
            g[c, int(v)] += 1
        by_rel: dict[int, _RelObs] = {}
        for (ri, role_key), g in by_role.items():
            rel = by_rel.get(ri)
            if rel is None:
                rel = _RelObs(ri, [], None, include_absences=False)
                by_rel[ri] = rel
                bundle.relations.append(rel)
            rel.entries.append((role_key, g))
        return bundle

    # -- likelihood machinery ---------------------------------------------------

    def _gather_cells(self, table: np.ndarray, role: str, k_count: int, cols: np.ndarray):
        if role == ROLE_SUBJECT:
            return table[:, cols, :]
        if role == ROLE_OBJECT:
            return np.swapaxes(table[cols, :, :], 0, 1)
        ks = np.arange(k_count)[:, None]
        cs = cols[None, :]
        return table[np.minimum(ks, cs), np.maximum(ks, cs)]

    def _pair_universe(self, rc, ci: int, cj: int, cols: np.ndarray) -> np.ndarray:
        """Candidate-pair counts (K, len(cols)) among currently seated entities."""
        n_i = self.n_k[ci].astype(np.int64)
        n_j = self.n_k[cj].astype(np.int64)
        pairs = np.outer(n_i, n_j[cols])
        if rc.is_symmetric:
            same = cols[None, :] == np.arange(self.K[ci])[:, None]
            within = (n_j[cols] * (n_j[cols] - 1)) // 2
            pairs = np.where(same, within[None, :], pairs)
        return pairs

    def _score_bundle(self, bundle: _ObsBundle, mode: str) -> tuple[np.ndarray, float]:
        """Log likelihood of the bundle under each existing cluster and a new one.

        Statistics must not contain the scored entity.  Existing-cluster
        scores are exact Dirichlet-multinomial count ratios in collapsed
        mode and parameter products in instantiated mode; the new-cluster
        score is the prior marginal in both.
        """
        ci = bundle.class_index
        k_count = self.K[ci]
        ll = np.zeros(k_count)
        ll_new = 0.0
        with np.errstate(divide="ignore"):
            for ai, v in bundle.attrs:
                pseudo = self._attr_pseudo[ci][ai]
                b0 = pseudo.sum()
                ll_new += np.log(pseudo[v] / b0)
                if mode == "instantiated":
                    ll += np.log(self.attr_params[ci][ai][:, v])
                else:
                    counts = self.attr_counts[ci][ai]
                    ll += np.log(counts[:, v] + pseudo[v]) - np.log(counts.sum(axis=1) + b0)

            for rel in bundle.relations:
                rc = self.schema.relation_classes[rel.rel_index]
                pseudo = self._rel_pseudo[rel.rel_index]
                cj = self.schema.entity_class_index(
                    rc.object_class if rel.entries[0][0] != ROLE_OBJECT else rc.subject_class
                )
                dir_self = rc.is_self_relation and not rc.is_symmetric
                counts = self.rel_counts[rel.rel_index]
                params = self.rel_params[rel.rel_index] if mode == "instantiated" else None
                diag_extra = np.zeros_like(pseudo)
                if rel.diag_value is not None:
                    diag_extra[rel.diag_value] += 1.0
                diag_m = np.tile(diag_extra, (k_count, 1)) if dir_self else None

                for role, g in rel.entries:
                    cj_role = ci if dir_self or rc.is_symmetric else cj
                    active = np.flatnonzero(g.sum(axis=1))
                    if dir_self:
                        diag_m = diag_m + g[:k_count]
                    if active.size:
                        m = g[active]
                        ll_new += float(_dm_zero(m, pseudo).sum())
                        if mode == "instantiated":
                            gathered = self._gather_cells(params, role, k_count, active)
                            cc, vv = np.nonzero(m)
                            ll += (np.log(gathered[:, cc, vv]) * m[cc, vv][None, :]).sum(axis=1)
                        else:
                            base = self._gather_cells(counts, role, k_count, active).astype(float)
                            if rel.include_absences:
                                pairs = self._pair_universe(rc, ci, cj_role, active)
                                base[..., 0] += pairs - base.sum(axis=-1)
                            term = _dm_ratio(base, pseudo, m[None, :, :])
                            if dir_self:
                                term = np.where(
                                    active[None, :] == np.arange(k_count)[:, None], 0.0, term
                                )
                            ll += term.sum(axis=1)

                if dir_self:
                    # subject-role, object-role, and self-pair observations all
                    # land on the diagonal cell (k, k); score them jointly there
                    if rel.diag_value is not None:
                        ll_new += float(_dm_zero(diag_extra, pseudo))
                    if mode == "instantiated":
                        if rel.diag_value is not None and k_count:
                            idx = np.arange(k_count)
                            ll += np.log(params[idx, idx, rel.diag_value])
                    elif k_count:
                        idx = np.arange(k_count)
                        base_d = counts[idx, idx, :].astype(float)
                        if rel.include_absences:
                            nn = self.n_k[ci].astype(np.int64)
                            base_d[:, 0] += nn * nn - base_d.sum(axis=1)
                        ll += _dm_ratio(base_d, pseudo, diag_m)
        return ll, float(ll_new)

    # -- effective counts, joint, snapshots --------------------------------------

    def effective_relation_counts(self, rel_index: int) -> np.ndarray:
        """Cell count table with closed-world absence synthesized in.

        Shape (K_subject, K_object, r); symmetric relations populate
        canonical cells (k <= c) only.  Matches brute-force enumeration
        of candidate pairs.
        """
        rc = self.schema.relation_classes[rel_index]
        si = self.schema.entity_class_index(rc.subject_class)
        oi = self.schema.entity_class_index(rc.object_class)
        t = self.rel_counts[rel_index].astype(np.int64).copy()
        if not rc.closed_world:
            return t
        n_s = self.n_k[si].astype(np.int64)
        n_o = self.n_k[oi].astype(np.int64)
        pairs = np.outer(n_s, n_o)
        if rc.is_symmetric:
            pairs = np.triu(pairs, k=1)
            np.fill_diagonal(pairs, (n_s * (n_s - 1)) // 2)
        t[..., 0] += pairs - t.sum(axis=-1)
        return t

    def joint_log_likelihood(self) -> float:
        ll = 0.0
        for ci in range(len(self.class_names)):
            ll += _eppf_log(self.n_k[ci], self._alpha0[ci])
            for ai, pseudo in enumerate(self._attr_pseudo[ci]):
                counts = self.attr_counts[ci][ai]
                ll += float(_dm_zero(counts, pseudo).sum())
        for ri in range(len(self.schema.relation_classes)):
            eff = self.effective_relation_counts(ri)
            ll += float(_dm_zero(eff, self._rel_pseudo[ri]).sum())
        return ll

    def snapshot(self) -> "LatentState":
        """An immutable-by-convention copy sharing the dataset and index."""
        out = LatentState.__new__(LatentState)
        out.schema = self.schema
        out.dataset = self.dataset
        out.mode = self.mode
        out.index = self.index
        out.class_names = self.class_names
        out.n_entities = self.n_entities
        out._attr_pseudo = self._attr_pseudo
        out._rel_pseudo = self._rel_pseudo
        out._alpha0 = self._alpha0
        out.z = [z.copy() for z in self.z]
        out.K = list(self.K)
        out.n_k = [n.copy() for n in self.n_k]
        out.attr_counts = [[t.copy() for t in per] for per in self.attr_counts]
        out.rel_counts = [t.copy() for t in self.rel_counts]
        out.attr_params = (
            None if self.attr_params is None else [[t.copy() for t in per] for per in self.attr_params]
        )
        out.rel_params = None if self.rel_params is None else [t.copy() for t in self.rel_params]
        return out


# --- spec-level operations -------------------------------------------------------

def entity_log_likelihood(state: LatentState, entity_class: str, entity: int,
                          cluster: int, mode: str | None = None) -> float:
    """Log likelihood of one entity's observations under one existing cluster.

    The entity's own contribution must already be removed from the
    state's statistics (see :meth:`LatentState.remove_entity`).  Missing
    attributes and open-world unobserved pairs contribute nothing.
    """
    ci = state.schema.entity_class_index(entity_class)
    mode = mode or state.mode
    if mode == "instantiated" and state.attr_params is None:
        raise ValueError("state carries no parameters; instantiated scoring unavailable")
    if not 0 <= cluster < state.K[ci] or state.n_k[ci][cluster] < 1:
        raise ValueError(f"cluster {cluster} is not occupied")
    ll, _ = state._score_bundle(state._entity_bundle(ci, entity), mode)
    return float(ll[cluster])


def new_cluster_log_likelihood(state: LatentState, entity_class: str, entity: int) -> float:
    """Prior-marginal log likelihood of one entity's observations.

    Attribute and per-counterpart-cluster relation groups each integrate
    over a fresh parameter vector; the entity must be unseated.
    """
    ci = state.schema.entity_class_index(entity_class)
    _, ll_new = state._score_bundle(state._entity_bundle(ci, entity), "collapsed")
    return ll_new


def assignment_log_weights(state: LatentState, entity_class: str, entity: int,
                           mode: str | None = None) -> np.ndarray:
    """Unnormalized log weights over K existing clusters plus a new one.

    The entity must be unseated; entry k is log N_k plus the entity log
    likelihood, the last entry log alpha0 plus the new-cluster marginal.
    """
    ci = state.schema.entity_class_index(entity_class)
    mode = mode or state.mode
    bundle = state._entity_bundle(ci, entity)
    ll, ll_new = state._score_bundle(bundle, mode)
    with np.errstate(divide="ignore"):
        return np.append(np.log(state.n_k[ci]) + ll, np.log(state._alpha0[ci]) + ll_new)


def gibbs_update_entity(state: LatentState, entity_class: str, entity: int,
                        rng: np.random.Generator) -> LatentState:
    """One full-conditional update of one entity's cluster assignment.

    Unseats the entity (deleting its cluster if emptied), draws a new
    assignment from the normalized weights of
    :func:`assignment_log_weights`, and reseats it; a new cluster in
    instantiated mode receives posterior parameter draws given this
    entity's data alone.  Mutates and returns the state.
    """
    state.remove_entity(entity_class, entity)
    logw = assignment_log_weights(state, entity_class, entity)
    k = categorical_from_log(rng, logw)
    state.insert_entity(entity_class, entity, k, rng)
    return state


def resample_parameters(state: LatentState, rng: np.random.Generator) -> LatentState:
    """Redraw every attribute and relation parameter vector from its posterior.

    Attribute cluster k draws Dirichlet(pseudo + counts_k); relation cell
    (k, c) draws Dirichlet(pseudo + effective counts), which for
    closed-world classes include the synthesized absences.  Instantiated
    mode only.
    """
    if state.mode != "instantiated" or state.attr_params is None:
        raise ValueError("resample_parameters requires instantiated mode")
    for ci in range(len(state.class_names)):
        for ai, pseudo in enumerate(state._attr_pseudo[ci]):
            counts = state.attr_counts[ci][ai]
            for k in range(state.K[ci]):
                state.attr_params[ci][ai][k] = draw_dirichlet(rng, pseudo + counts[k])
    for ri, rc in enumerate(state.schema.relation_classes):
        pseudo = state._rel_pseudo[ri]
        eff = state.effective_relation_counts(ri)
        params = state.rel_params[ri]
        ks, ko = eff.shape[0], eff.shape[1]
        for k in range(ks):
            start = k if rc.is_symmetric else 0
            for c in range(start, ko):
                draw = draw_dirichlet(rng, pseudo + eff[k, c])
                params[k, c] = draw
                if rc.is_symmetric:
                    params[c, k] = draw
    return state


def remove_empty_clusters(state: LatentState) -> LatentState:
    """Drop unoccupied clusters, shifting higher labels down (order-preserving).

    All statistics and parameter tables are permuted consistently; the
    joint log likelihood is unchanged.
    """
    for ci in range(len(state.class_names)):
        for k in range(state.K[ci] - 1, -1, -1):
            if state.n_k[ci][k] == 0:
                state._delete_cluster(ci, k)
    return state


def joint_log_likelihood(state: LatentState) -> float:
    """Collapsed joint log probability of assignments and observations.

    The product of per-class CRP partition probabilities and
    Dirichlet-multinomial marginals over every attribute-cluster and
    relation-cluster-pair count table; invariant to cluster relabeling.
    """
    return state.joint_log_likelihood()


@dataclass
class PosteriorSamples:
    """Thinned post-burn-in snapshots plus the per-sweep likelihood trace."""

    states: list[LatentState]
    config: ChainConfig
    log_likelihood_trace: np.ndarray
    snapshot_sweeps: list[int] = field(default_factory=list)

    def assignments(self, entity_class: str) -> np.ndarray:
        """Snapshot-by-entity assignment matrix for one class."""
        return np.stack([s.z[s.schema.entity_class_index(entity_class)] for s in self.states])


def run_gibbs(schema: Schema, dataset: Dataset, config: ChainConfig,
              progress=None) -> PosteriorSamples:
    """Run one chain: CRP-prior initialization, then `iterations` sweeps.

    Each sweep updates every entity of every class, classes in schema
    order, entities in a fresh random permutation; instantiated mode
    refreshes parameters every `param_update_period` sweeps.  Snapshots
    are collected after `burn_in` at stride `thin`.  Bit-reproducible
    given the seed.  `progress(sweep, state, loglik)` is invoked once per
    sweep when supplied.
    """
    config.validate()
    if schema_hash(dataset.schema) != schema_hash(schema):
        raise ValueError("dataset was built against a different schema")
    rng = np.random.default_rng(config.seed)
    assignments = {}
    for ec in schema.entity_classes:
        n = dataset.entity_counts[ec.name]
        assignments[ec.name] = (
            sample_crp_partition(n, ec.concentration, rng) if n else np.zeros(0, dtype=np.int64)
        )
    state = LatentState.from_assignments(schema, dataset, assignments, config.mode, rng)

    trace = np.empty(config.iterations)
    snapshots: list[LatentState] = []
    snapshot_sweeps: list[int] = []
    for sweep in range(1, config.iterations + 1):
        for ci, name in enumerate(state.class_names):
            for j in rng.permutation(state.n_entities[ci]):
                gibbs_update_entity(state, name, int(j), rng)
        if config.mode == "instantiated" and sweep % config.param_update_period == 0:
            resample_parameters(state, rng)
        ll = state.joint_log_likelihood()
        if not np.isfinite(ll):
            raise NumericalError(f"non-finite joint log likelihood at sweep {sweep}",
                                 state=state, sweep=sweep)
        trace[sweep - 1] = ll
        if sweep > config.burn_in and (sweep - config.burn_in) % config.thin == 0:
            snapshots.append(state.snapshot())
            snapshot_sweeps.append(sweep)
        if progress is not None:
            progress(sweep, state, ll)
    return PosteriorSamples(snapshots, config, trace, snapshot_sweeps)


# --- snapshot serialization ------------------------------------------------------

def save_samples(path, samples: PosteriorSamples, schema: Schema) -> None:
    """Write snapshots as JSON lines plus a `<path>.meta.json` sidecar.

    Each line records the per-class assignments, cluster counts and
    sizes, and the joint log likelihood at that sweep; the sidecar
    records the chain configuration and the schema hash.
    """
    import dataclasses
    import json

    with open(path, "w", encoding="utf-8") as fh:
        for state, sweep in zip(samples.states, samples.snapshot_sweeps):
            fh.write(json.dumps({
                "sweep": sweep,
                "assignments": {name: state.z[ci].tolist() for ci, name in enumerate(state.class_names)},
                "n_clusters": {name: state.K[ci] for ci, name in enumerate(state.class_names)},
                "cluster_sizes": {name: state.n_k[ci].tolist() for ci, name in enumerate(state.class_names)},
                "log_likelihood": float(samples.log_likelihood_trace[sweep - 1]),
            }) + "\n")
    with open(str(path) + ".meta.json", "w", encoding="utf-8") as fh:
        json.dump({
            "config": dataclasses.asdict(samples.config),
            "schema_hash": schema_hash(schema),
            "log_likelihood_trace": [float(x) for x in samples.log_likelihood_trace],
        }, fh, indent=2)


def load_samples(path, dataset: Dataset) -> PosteriorSamples:
    """Reload serialized snapshots, rebuilding statistics from the dataset.

    The wire format carries assignments only, so reloaded states are
    collapsed regardless of the mode that produced them; collapsed
    posterior predictives remain available for every query.  The sidecar
    schema hash must match the dataset's schema.
    """
    import json

    with open(str(path) + ".meta.json", "r", encoding="utf-8") as fh:
        meta = json.load(fh)
    if meta["schema_hash"] != schema_hash(dataset.schema):
        raise ValueError("samples were produced under a different schema")
    config = ChainConfig(**meta["config"])
    index = _DatasetIndex(dataset.schema, dataset)
    states: list[LatentState] = []
    sweeps: list[int] = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            if not line.strip():
                continue
            doc = json.loads(line)
            assignments = {k: np.asarray(v, dtype=np.int64) for k, v in doc["assignments"].items()}
            states.append(LatentState.from_assignments(
                dataset.schema, dataset, assignments, "collapsed", index=index))
            sweeps.append(int(doc.get("sweep", len(sweeps) + 1)))
    trace = np.asarray(meta.get("log_likelihood_trace", []), dtype=float)
    return PosteriorSamples(states, config, trace, sweeps)
