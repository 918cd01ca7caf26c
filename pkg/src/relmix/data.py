"""Dataset representation and ingestion.

A :class:`Dataset` holds, per entity class, an entity count and a dense
integer attribute table, and per relation class a set of observed triples
(subject index, object index, value code).  Missingness is first-class:
the sentinel :data:`MISSING` (-1) marks unobserved attribute cells, and
relation pairs simply have no stored triple.  Closed-world absence is
never materialized; it is implied by the pairs that are not present, so
storage stays proportional to the observed triples.

CSV ingestion maps entity identifiers and attribute value strings to
dense integer codes through dictionaries that serialize to JSON for reuse
across train/test files.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field

import numpy as np

from .schema import AttributeSpec, RelationClassSpec, Schema

MISSING = -1


class DataError(ValueError):
    """Raised for malformed observation files or invalid dataset content."""


def canonical_pair(rc: RelationClassSpec, subject: int, obj: int) -> tuple[int, int]:
    """Storage key of a relation pair; symmetric pairs are sorted ascending."""
    if rc.is_symmetric and subject > obj:
        return obj, subject
    return subject, obj


class Dataset:
    """Immutable observations for one schema.

    `entity_counts` maps entity class name to N.  `attribute_tables` maps
    entity class name to an (N, n_attributes) integer array with MISSING
    for unobserved cells.  `relation_triples` maps relation class name to
    an (M, 3) integer array of (subject, object, value) rows.
    """

    def __init__(self, schema: Schema, entity_counts: dict[str, int],
                 attribute_tables: dict[str, np.ndarray] | None = None,
                 relation_triples: dict[str, np.ndarray] | None = None):
        self.schema = schema
        self.entity_counts = dict(entity_counts)
        self.attribute_tables: dict[str, np.ndarray] = {}
        self.relation_triples: dict[str, np.ndarray] = {}

        attribute_tables = attribute_tables or {}
        relation_triples = relation_triples or {}
        for name in attribute_tables:
            schema.entity_class(name)
        for name in relation_triples:
            schema.relation_class(name)

        for ec in schema.entity_classes:
            if ec.name not in self.entity_counts:
                raise DataError(f"no entity count for class {ec.name!r}")
            n = int(self.entity_counts[ec.name])
            if n < 0:
                raise DataError(f"negative entity count for class {ec.name!r}")
            self.entity_counts[ec.name] = n
            table = attribute_tables.get(ec.name)
            if table is None:
                table = np.full((n, len(ec.attributes)), MISSING, dtype=np.int64)
            else:
                table = np.asarray(table, dtype=np.int64)
                if table.shape != (n, len(ec.attributes)):
                    raise DataError(
                        f"attribute table for {ec.name!r} has shape {table.shape}, "
                        f"expected {(n, len(ec.attributes))}"
                    )
                for j, attr in enumerate(ec.attributes):
                    col = table[:, j]
                    if np.any((col != MISSING) & ((col < 0) | (col >= attr.cardinality))):
                        raise DataError(
                            f"{ec.name}.{attr.name}: value code out of range 0..{attr.cardinality - 1}"
                        )
            table.setflags(write=False)
            self.attribute_tables[ec.name] = table

        for rc in schema.relation_classes:
            triples = relation_triples.get(rc.name)
            if triples is None:
                triples = np.empty((0, 3), dtype=np.int64)
            else:
                triples = np.asarray(triples, dtype=np.int64).reshape(-1, 3)
                triples = self._check_triples(rc, triples)
            triples.setflags(write=False)
            self.relation_triples[rc.name] = triples

    def _check_triples(self, rc: RelationClassSpec, triples: np.ndarray) -> np.ndarray:
        n_sub = self.entity_counts[rc.subject_class]
        n_obj = self.entity_counts[rc.object_class]
        r = rc.relation_attribute.cardinality
        lowest = 1 if rc.closed_world else 0
        out = triples.copy()
        seen: set[tuple[int, int]] = set()
        for row in out:
            s, o, v = int(row[0]), int(row[1]), int(row[2])
            if not 0 <= s < n_sub:
                raise DataError(f"{rc.name}: subject index {s} out of range (count {n_sub})")
            if not 0 <= o < n_obj:
                raise DataError(f"{rc.name}: object index {o} out of range (count {n_obj})")
            if not lowest <= v < r:
                raise DataError(
                    f"{rc.name}: value code {v} out of range {lowest}..{r - 1}"
                    + (" (0 is reserved for implied absence)" if rc.closed_world and v == 0 else "")
                )
            if rc.is_symmetric:
                if s == o:
                    raise DataError(f"{rc.name}: symmetric relation cannot pair an entity with itself ({s})")
                row[0], row[1] = canonical_pair(rc, s, o)
            pair = (int(row[0]), int(row[1]))
            if pair in seen:
                raise DataError(f"{rc.name}: duplicate pair {pair}")
            seen.add(pair)
        return out

    def replace_relation(self, relation_class: str, triples: np.ndarray) -> "Dataset":
        """A copy of this dataset with one relation's triples swapped out."""
        new_triples = dict(self.relation_triples)
        new_triples[relation_class] = triples
        return Dataset(self.schema, self.entity_counts, self.attribute_tables, new_triples)


@dataclass
class SplitDataset:
    """A train dataset plus held-out relation triples, per relation class."""

    train: Dataset
    test: dict[str, np.ndarray]


@dataclass
class Dictionaries:
    """String-to-code mappings built during ingestion.

    `entity_ids[class][id]` is the 0-based entity index;
    `attribute_values[class][attr][raw]` and `relation_values[rel][raw]`
    are value codes.
    """

    entity_ids: dict[str, dict[str, int]] = field(default_factory=dict)
    attribute_values: dict[str, dict[str, dict[str, int]]] = field(default_factory=dict)
    relation_values: dict[str, dict[str, int]] = field(default_factory=dict)

    def to_json(self) -> str:
        return json.dumps(
            {
                "entity_ids": self.entity_ids,
                "attribute_values": self.attribute_values,
                "relation_values": self.relation_values,
            },
            indent=2,
            sort_keys=True,
        )

    @classmethod
    def from_json(cls, text: str) -> "Dictionaries":
        doc = json.loads(text)
        return cls(
            entity_ids={k: dict(v) for k, v in doc.get("entity_ids", {}).items()},
            attribute_values={
                k: {a: dict(m) for a, m in v.items()}
                for k, v in doc.get("attribute_values", {}).items()
            },
            relation_values={k: dict(v) for k, v in doc.get("relation_values", {}).items()},
        )


def _build_value_codes(values: list[str], attr: AttributeSpec, where: str,
                       reserve_zero: bool) -> dict[str, int]:
    """Assign codes to distinct raw values in order of first appearance.

    If every raw value is an integer literal already in the legal code
    range, the identity coding is used so numeric files round-trip.
    Closed-world relation values reserve code 0 for implied absence.
    """
    start = 1 if reserve_zero else 0
    distinct: list[str] = []
    seen = set()
    for v in values:
        if v not in seen:
            seen.add(v)
            distinct.append(v)
    if len(distinct) > attr.cardinality - start:
        raise DataError(
            f"{where}: {len(distinct)} distinct values exceed cardinality "
            f"{attr.cardinality}" + (" (code 0 reserved)" if reserve_zero else "")
        )

    def as_code(raw: str):
        try:
            code = int(raw)
        except ValueError:
            return None
        return code if start <= code < attr.cardinality else None

    if distinct and all(as_code(v) is not None for v in distinct):
        return {v: as_code(v) for v in distinct}
    return {v: start + i for i, v in enumerate(distinct)}


def _code_of(raw: str, codes: dict[str, int], where: str) -> int:
    if raw not in codes:
        raise DataError(f"{where}: value {raw!r} not in the supplied dictionary")
    return codes[raw]


def load_entities_csv(path, schema: Schema, entity_class: str,
                      value_codes: dict[str, dict[str, int]] | None = None
                      ) -> tuple[np.ndarray, list[str], dict[str, dict[str, int]]]:
    """Load one entity class's attribute table from CSV.

    The file needs a header row; the first column holds entity identifiers
    (mapped to 0-based indices in file order) and the remaining columns
    must name declared attributes, in any order.  Attributes without a
    column are fully missing.  Empty cells are MISSING.  Returns the dense
    table, the identifier list, and the per-attribute value dictionaries
    (built by first appearance unless `value_codes` is supplied).
    """
    ec = schema.entity_class(entity_class)
    with open(path, "r", encoding="utf-8", newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise DataError(f"{path}: empty file, expected a header row")
    header = rows[0]
    declared = {a.name: j for j, a in enumerate(ec.attributes)}
    for col in header[1:]:
        if col not in declared:
            raise DataError(f"{path}: unknown column {col!r} for entity class {entity_class!r}")

    ids: list[str] = []
    seen_ids = set()
    raw_columns: dict[str, list[str]] = {col: [] for col in header[1:]}
    for line_no, row in enumerate(rows[1:], start=2):
        if not row:
            continue
        if len(row) != len(header):
            raise DataError(f"{path}:{line_no}: expected {len(header)} fields, got {len(row)}")
        if row[0] in seen_ids:
            raise DataError(f"{path}:{line_no}: duplicate entity identifier {row[0]!r}")
        seen_ids.add(row[0])
        ids.append(row[0])
        for col, raw in zip(header[1:], row[1:]):
            raw_columns[col].append(raw)

    table = np.full((len(ids), len(ec.attributes)), MISSING, dtype=np.int64)
    out_codes: dict[str, dict[str, int]] = {}
    for col, raws in raw_columns.items():
        attr = ec.attributes[declared[col]]
        present = [v for v in raws if v != ""]
        if value_codes is not None and col in value_codes:
            codes = dict(value_codes[col])
        else:
            codes = _build_value_codes(present, attr, f"{path} column {col!r}", reserve_zero=False)
        out_codes[col] = codes
        for i, raw in enumerate(raws):
            if raw == "":
                continue
            table[i, declared[col]] = _code_of(raw, codes, f"{path} column {col!r}")
    return table, ids, out_codes


def load_relations_csv(path, schema: Schema, relation_class: str,
                       dictionaries: Dictionaries) -> np.ndarray:
    """Load one relation class's observed triples from CSV.

    Columns are positional: subject identifier, object identifier, value.
    Identifiers resolve through `dictionaries.entity_ids`; values through
    `dictionaries.relation_values` when present (first-appearance coding
    otherwise, recorded back into `dictionaries`).  Duplicate pairs are
    rejected, for symmetric relations after canonical ordering.
    """
    rc = schema.relation_class(relation_class)
    sub_ids = dictionaries.entity_ids.get(rc.subject_class)
    obj_ids = dictionaries.entity_ids.get(rc.object_class)
    if sub_ids is None or obj_ids is None:
        raise DataError(
            f"{path}: entity identifier dictionaries for {rc.subject_class!r} and "
            f"{rc.object_class!r} must be loaded first"
        )
    with open(path, "r", encoding="utf-8", newline="") as fh:
        rows = list(csv.reader(fh))
    body = [row for row in rows[1:] if row]
    for line_no, row in enumerate(body, start=2):
        if len(row) != 3:
            raise DataError(f"{path}:{line_no}: expected 3 fields (subject, object, value)")

    raw_values = [row[2] for row in body]
    if relation_class in dictionaries.relation_values:
        codes = dictionaries.relation_values[relation_class]
    else:
        codes = _build_value_codes(
            raw_values, rc.relation_attribute, f"{path} value column",
            reserve_zero=rc.closed_world,
        )
        dictionaries.relation_values[relation_class] = codes

    triples = np.empty((len(body), 3), dtype=np.int64)
    seen: set[tuple[int, int]] = set()
    for i, row in enumerate(body):
        if row[0] not in sub_ids:
            raise DataError(f"{path}: unknown {rc.subject_class} identifier {row[0]!r}")
        if row[1] not in obj_ids:
            raise DataError(f"{path}: unknown {rc.object_class} identifier {row[1]!r}")
        s, o = sub_ids[row[0]], obj_ids[row[1]]
        if rc.is_symmetric:
            if s == o:
                raise DataError(f"{path}: symmetric relation cannot pair {row[0]!r} with itself")
            s, o = canonical_pair(rc, s, o)
        if (s, o) in seen:
            raise DataError(f"{path}: duplicate pair ({row[0]!r}, {row[1]!r})")
        seen.add((s, o))
        triples[i] = (s, o, _code_of(row[2], codes, f"{path} value column"))
    return triples


def binarize_ratings(ratings) -> list[tuple]:
    """Turn numeric per-pair scores into binary relation values.

    `ratings` is an iterable of (subject, object, score).  A pair gets
    value 1 exactly when its score strictly exceeds the subject's mean
    score, 0 otherwise (so ties at the mean, and any subject's single
    rating, map to 0).
    """
    rows = [(s, o, float(x)) for s, o, x in ratings]
    totals: dict = {}
    counts: dict = {}
    for s, _, x in rows:
        totals[s] = totals.get(s, 0.0) + x
        counts[s] = counts.get(s, 0) + 1
    means = {s: totals[s] / counts[s] for s in totals}
    return [(s, o, int(x > means[s])) for s, o, x in rows]


def train_test_split(dataset: Dataset, relation_class: str, holdout_fraction: float,
                     seed: int) -> SplitDataset:
    """Hold out a uniform random fraction of one relation's observed triples.

    The train dataset keeps all entity attributes and the remaining
    triples; splits are reproducible given the seed and train/test unite
    back to the source triples.
    """
    if not 0 < holdout_fraction < 1:
        raise DataError(f"holdout_fraction must be in (0, 1), got {holdout_fraction}")
    triples = dataset.relation_triples[relation_class]
    m = triples.shape[0]
    k = int(round(m * holdout_fraction))
    rng = np.random.default_rng(seed)
    held = np.sort(rng.choice(m, size=k, replace=False))
    mask = np.zeros(m, dtype=bool)
    mask[held] = True
    train = dataset.replace_relation(relation_class, triples[~mask])
    return SplitDataset(train=train, test={relation_class: triples[mask].copy()})


# --- directory conventions shared by the CLI, demos, and tests ---------------

def default_entity_ids(class_name: str, n: int) -> list[str]:
    return [f"{class_name}_{i}" for i in range(n)]


def write_entities_csv(path, schema: Schema, entity_class: str, table: np.ndarray,
                       ids: list[str] | None = None) -> None:
    """Inverse of load_entities_csv; writes integer codes, empty for MISSING."""
    ec = schema.entity_class(entity_class)
    table = np.asarray(table)
    if ids is None:
        ids = default_entity_ids(entity_class, table.shape[0])
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["id"] + [a.name for a in ec.attributes])
        for i, ident in enumerate(ids):
            row = [ident]
            for j in range(len(ec.attributes)):
                v = int(table[i, j])
                row.append("" if v == MISSING else str(v))
            w.writerow(row)


def write_relations_csv(path, schema: Schema, relation_class: str, triples: np.ndarray,
                        subject_ids: list[str] | None = None,
                        object_ids: list[str] | None = None) -> None:
    rc = schema.relation_class(relation_class)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["subject", "object", "value"])
        for s, o, v in np.asarray(triples).reshape(-1, 3):
            sid = subject_ids[s] if subject_ids is not None else default_entity_ids(rc.subject_class, s + 1)[s]
            oid = object_ids[o] if object_ids is not None else default_entity_ids(rc.object_class, o + 1)[o]
            w.writerow([sid, oid, str(int(v))])


def write_dataset_dir(out_dir, dataset: Dataset, ids: dict[str, list[str]] | None = None) -> list:
    """Write `<Class>.csv` per entity class and `<Relation>.csv` per relation
    class under `out_dir`, plus dictionaries.json.  Returns written paths."""
    import os

    schema = dataset.schema
    ids = ids or {
        ec.name: default_entity_ids(ec.name, dataset.entity_counts[ec.name])
        for ec in schema.entity_classes
    }
    dicts = Dictionaries(
        entity_ids={name: {ident: i for i, ident in enumerate(lst)} for name, lst in ids.items()},
        attribute_values={
            ec.name: {
                a.name: {str(v): v for v in range(a.cardinality)} for a in ec.attributes
            }
            for ec in schema.entity_classes
        },
        relation_values={
            rc.name: {
                str(v): v
                for v in range(1 if rc.closed_world else 0, rc.relation_attribute.cardinality)
            }
            for rc in schema.relation_classes
        },
    )
    written = []
    for ec in schema.entity_classes:
        path = os.path.join(out_dir, f"{ec.name}.csv")
        write_entities_csv(path, schema, ec.name, dataset.attribute_tables[ec.name], ids[ec.name])
        written.append(path)
    for rc in schema.relation_classes:
        path = os.path.join(out_dir, f"{rc.name}.csv")
        write_relations_csv(path, schema, rc.name, dataset.relation_triples[rc.name],
                            ids[rc.subject_class], ids[rc.object_class])
        written.append(path)
    dict_path = os.path.join(out_dir, "dictionaries.json")
    with open(dict_path, "w", encoding="utf-8") as fh:
        fh.write(dicts.to_json())
    written.append(dict_path)
    return written


def load_dataset_dir(schema: Schema, data_dir) -> tuple[Dataset, Dictionaries]:
    """Load a dataset directory written by :func:`write_dataset_dir`.

    Every entity class needs a `<Class>.csv`; relation CSVs are optional
    (missing means zero observed triples).  A dictionaries.json, when
    present, pins all code mappings.
    """
    import os

    pre = None
    dict_path = os.path.join(data_dir, "dictionaries.json")
    if os.path.exists(dict_path):
        with open(dict_path, "r", encoding="utf-8") as fh:
            pre = Dictionaries.from_json(fh.read())

    dicts = Dictionaries()
    counts: dict[str, int] = {}
    tables: dict[str, np.ndarray] = {}
    for ec in schema.entity_classes:
        path = os.path.join(data_dir, f"{ec.name}.csv")
        if not os.path.exists(path):
            raise DataError(f"missing entity file {path}")
        supplied = pre.attribute_values.get(ec.name) if pre else None
        table, ids, codes = load_entities_csv(path, schema, ec.name, supplied)
        counts[ec.name] = len(ids)
        tables[ec.name] = table
        dicts.entity_ids[ec.name] = {ident: i for i, ident in enumerate(ids)}
        dicts.attribute_values[ec.name] = codes
    if pre:
        dicts.relation_values.update(pre.relation_values)

    triples: dict[str, np.ndarray] = {}
    for rc in schema.relation_classes:
        path = os.path.join(data_dir, f"{rc.name}.csv")
        if os.path.exists(path):
            triples[rc.name] = load_relations_csv(path, schema, rc.name, dicts)
    return Dataset(schema, counts, tables, triples), dicts
