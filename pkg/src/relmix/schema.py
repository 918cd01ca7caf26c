"""Declarative relational schemas.

A schema lists entity classes (each with discrete attributes and a CRP
concentration), and relation classes connecting pairs of entity classes.
Every discrete attribute -- whether it hangs off an entity class or off a
relation class -- carries a Dirichlet prior described by a strength
(total pseudo-count) and a base distribution over its values.

Schemas are plain frozen dataclasses: construction never validates, so
invalid values can be built and then inspected with
:func:`validate_schema`.  :func:`parse_schema` is the strict entry point
used by everything downstream.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field, replace

import numpy as np

DEFAULT_CONCENTRATION = 10.0
MISSING_POLICIES = ("open_world", "closed_world")
SYMMETRIES = ("directed", "symmetric")


class SchemaError(ValueError):
    """Raised for malformed schema documents or invalid schema values."""


def uniform_base(cardinality: int) -> tuple[float, ...]:
    """Uniform base distribution over `cardinality` values."""
    return tuple([1.0 / cardinality] * cardinality)


@dataclass(frozen=True)
class AttributeSpec:
    """A discrete attribute with `cardinality` values coded 0..cardinality-1.

    `prior_strength` is the total pseudo-count of the Dirichlet prior and
    has no default: it must be supplied explicitly or filled in by a
    tuning procedure before inference can run.  `prior_base` defaults to
    the uniform distribution.
    """

    name: str
    cardinality: int
    prior_strength: float | None = None
    prior_base: tuple[float, ...] | None = None

    def __post_init__(self):
        if self.prior_base is not None:
            object.__setattr__(self, "prior_base", tuple(float(p) for p in self.prior_base))

    def base(self) -> np.ndarray:
        """Base distribution as an array, materializing the uniform default."""
        if self.prior_base is None:
            return np.full(self.cardinality, 1.0 / self.cardinality)
        return np.asarray(self.prior_base, dtype=float)

    def pseudocounts(self) -> np.ndarray:
        """Dirichlet pseudo-count vector (strength times base)."""
        if self.prior_strength is None:
            raise SchemaError(
                f"attribute {self.name!r}: prior_strength is unset; "
                "supply it in the schema or tune it first"
            )
        return self.prior_strength * self.base()


@dataclass(frozen=True)
class EntityClassSpec:
    name: str
    attributes: tuple[AttributeSpec, ...] = ()
    concentration: float = DEFAULT_CONCENTRATION

    def __post_init__(self):
        object.__setattr__(self, "attributes", tuple(self.attributes))

    def attribute(self, name: str) -> AttributeSpec:
        for a in self.attributes:
            if a.name == name:
                return a
        raise KeyError(name)


@dataclass(frozen=True)
class RelationClassSpec:
    """A relation between two entity classes carrying one discrete attribute.

    `missing_policy` controls how unobserved pairs enter likelihoods:
    `open_world` marginalizes them out, `closed_world` treats every
    unobserved pair as holding value 0 ("absent"; code 0 is reserved for
    absence and may not appear in stored observations).  `symmetric` is
    only legal for self-relations and stores each unordered pair once.
    """

    name: str
    subject_class: str
    object_class: str
    relation_attribute: AttributeSpec
    missing_policy: str = "open_world"
    symmetry: str = "directed"

    @property
    def is_self_relation(self) -> bool:
        return self.subject_class == self.object_class

    @property
    def is_symmetric(self) -> bool:
        return self.symmetry == "symmetric"

    @property
    def closed_world(self) -> bool:
        return self.missing_policy == "closed_world"


@dataclass(frozen=True)
class Schema:
    entity_classes: tuple[EntityClassSpec, ...]
    relation_classes: tuple[RelationClassSpec, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "entity_classes", tuple(self.entity_classes))
        object.__setattr__(self, "relation_classes", tuple(self.relation_classes))

    def entity_class(self, name: str) -> EntityClassSpec:
        for ec in self.entity_classes:
            if ec.name == name:
                return ec
        raise KeyError(f"unknown entity class {name!r}")

    def relation_class(self, name: str) -> RelationClassSpec:
        for rc in self.relation_classes:
            if rc.name == name:
                return rc
        raise KeyError(f"unknown relation class {name!r}")

    def entity_class_index(self, name: str) -> int:
        for i, ec in enumerate(self.entity_classes):
            if ec.name == name:
                return i
        raise KeyError(f"unknown entity class {name!r}")

    def relation_class_index(self, name: str) -> int:
        for i, rc in enumerate(self.relation_classes):
            if rc.name == name:
                return i
        raise KeyError(f"unknown relation class {name!r}")


def _check_attribute(attr: AttributeSpec, path: str, report: list[str]) -> None:
    if not isinstance(attr.cardinality, int) or attr.cardinality < 2:
        report.append(f"{path}.cardinality: must be an integer >= 2, got {attr.cardinality!r}")
    if attr.prior_strength is not None and not attr.prior_strength > 0:
        report.append(f"{path}.prior_strength: must be > 0, got {attr.prior_strength!r}")
    if attr.prior_base is not None:
        base = np.asarray(attr.prior_base, dtype=float)
        if base.shape != (attr.cardinality,):
            report.append(
                f"{path}.prior_base: length {base.size} does not match cardinality {attr.cardinality}"
            )
        else:
            if np.any(base < 0):
                report.append(f"{path}.prior_base: entries must be nonnegative")
            if abs(base.sum() - 1.0) > 1e-12:
                report.append(f"{path}.prior_base: entries sum to {base.sum()!r}, expected 1")


def validate_schema(schema: Schema) -> list[str]:
    """Check every schema invariant; return one report entry per violation.

    An empty list means the schema is valid.  Validation is pure and never
    raises on invalid content.
    """
    report: list[str] = []
    entity_names = [ec.name for ec in schema.entity_classes]

    seen: set[str] = set()
    for name in entity_names + [rc.name for rc in schema.relation_classes]:
        if name in seen:
            report.append(f"duplicate class name {name!r}")
        seen.add(name)

    for i, ec in enumerate(schema.entity_classes):
        path = f"entity_classes[{i}]({ec.name})"
        if not ec.concentration > 0:
            report.append(f"{path}.concentration: must be > 0, got {ec.concentration!r}")
        attr_names = set()
        for j, attr in enumerate(ec.attributes):
            if attr.name in attr_names:
                report.append(f"{path}: duplicate attribute name {attr.name!r}")
            attr_names.add(attr.name)
            _check_attribute(attr, f"{path}.attributes[{j}]({attr.name})", report)

    for i, rc in enumerate(schema.relation_classes):
        path = f"relation_classes[{i}]({rc.name})"
        for side, ref in (("subject", rc.subject_class), ("object", rc.object_class)):
            if ref not in entity_names:
                report.append(f"{path}.{side}: undeclared entity class {ref!r}")
        if rc.missing_policy not in MISSING_POLICIES:
            report.append(f"{path}.missing_policy: expected one of {MISSING_POLICIES}, got {rc.missing_policy!r}")
        if rc.symmetry not in SYMMETRIES:
            report.append(f"{path}.symmetry: expected one of {SYMMETRIES}, got {rc.symmetry!r}")
        elif rc.is_symmetric and not rc.is_self_relation:
            report.append(f"{path}.symmetry: symmetry requires self-relation (subject class equals object class)")
        _check_attribute(rc.relation_attribute, f"{path}.attribute({rc.relation_attribute.name})", report)
    return report


def _require(mapping: dict, key: str, path: str):
    if key not in mapping:
        raise SchemaError(f"{path}: missing required key {key!r}")
    return mapping[key]


def _parse_attribute(obj, path: str) -> AttributeSpec:
    if not isinstance(obj, dict):
        raise SchemaError(f"{path}: expected an object, got {type(obj).__name__}")
    known = {"name", "cardinality", "prior_strength", "prior_base"}
    for key in obj:
        if key not in known:
            raise SchemaError(f"{path}: unknown key {key!r}")
    name = _require(obj, "name", path)
    cardinality = _require(obj, "cardinality", path)
    if not isinstance(cardinality, int):
        raise SchemaError(f"{path}.cardinality: expected an integer, got {cardinality!r}")
    prior_base = obj.get("prior_base")
    return AttributeSpec(
        name=name,
        cardinality=cardinality,
        prior_strength=obj.get("prior_strength"),
        prior_base=None if prior_base is None else tuple(prior_base),
    )


def parse_schema(text: str) -> Schema:
    """Parse and validate a JSON schema document.

    Top-level keys are `entity_classes` and `relation_classes`.  Defaults
    (concentration 10, uniform prior_base) are filled in, so parse followed
    by :func:`serialize_schema` round-trips field for field.  Raises
    :class:`SchemaError` on syntax errors (with position), undeclared
    entity-class references, duplicate names, or any other invariant
    violation.
    """
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as e:
        raise SchemaError(f"syntax error at line {e.lineno}, column {e.colno}: {e.msg}") from None
    if not isinstance(doc, dict):
        raise SchemaError("top level: expected an object")
    for key in doc:
        if key not in ("entity_classes", "relation_classes"):
            raise SchemaError(f"top level: unknown key {key!r}")

    entity_classes = []
    for i, obj in enumerate(doc.get("entity_classes", [])):
        path = f"entity_classes[{i}]"
        name = _require(obj, "name", path)
        attrs = tuple(
            _parse_attribute(a, f"{path}.attributes[{j}]")
            for j, a in enumerate(obj.get("attributes", []))
        )
        entity_classes.append(
            EntityClassSpec(
                name=name,
                attributes=attrs,
                concentration=float(obj.get("concentration", DEFAULT_CONCENTRATION)),
            )
        )

    relation_classes = []
    for i, obj in enumerate(doc.get("relation_classes", [])):
        path = f"relation_classes[{i}]"
        relation_classes.append(
            RelationClassSpec(
                name=_require(obj, "name", path),
                subject_class=_require(obj, "subject", path),
                object_class=_require(obj, "object", path),
                relation_attribute=_parse_attribute(_require(obj, "attribute", path), f"{path}.attribute"),
                missing_policy=_require(obj, "missing_policy", path),
                symmetry=obj.get("symmetry", "directed"),
            )
        )

    schema = Schema(entity_classes=tuple(entity_classes), relation_classes=tuple(relation_classes))
    schema = _fill_defaults(schema)
    report = validate_schema(schema)
    if report:
        raise SchemaError("invalid schema:\n  " + "\n  ".join(report))
    return schema


def _fill_defaults(schema: Schema) -> Schema:
    def fill(attr: AttributeSpec) -> AttributeSpec:
        if attr.prior_base is None and isinstance(attr.cardinality, int) and attr.cardinality >= 2:
            return replace(attr, prior_base=uniform_base(attr.cardinality))
        return attr

    return Schema(
        entity_classes=tuple(
            replace(ec, attributes=tuple(fill(a) for a in ec.attributes))
            for ec in schema.entity_classes
        ),
        relation_classes=tuple(
            replace(rc, relation_attribute=fill(rc.relation_attribute))
            for rc in schema.relation_classes
        ),
    )


def _attribute_to_dict(attr: AttributeSpec) -> dict:
    out = {"name": attr.name, "cardinality": attr.cardinality}
    if attr.prior_strength is not None:
        out["prior_strength"] = attr.prior_strength
    if attr.prior_base is not None:
        out["prior_base"] = list(attr.prior_base)
    return out


def serialize_schema(schema: Schema) -> str:
    """Render a schema back to its JSON document form."""
    doc = {
        "entity_classes": [
            {
                "name": ec.name,
                "attributes": [_attribute_to_dict(a) for a in ec.attributes],
                "concentration": ec.concentration,
            }
            for ec in schema.entity_classes
        ],
        "relation_classes": [
            {
                "name": rc.name,
                "subject": rc.subject_class,
                "object": rc.object_class,
                "attribute": _attribute_to_dict(rc.relation_attribute),
                "missing_policy": rc.missing_policy,
                "symmetry": rc.symmetry,
            }
            for rc in schema.relation_classes
        ],
    }
    return json.dumps(doc, indent=2, sort_keys=True)


def schema_hash(schema: Schema) -> str:
    """Stable content hash of a schema, used to tie outputs to their inputs."""
    return hashlib.sha256(serialize_schema(schema).encode("utf-8")).hexdigest()


def load_schema(path) -> Schema:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_schema(fh.read())
