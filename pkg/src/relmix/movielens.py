"""Loaders for the MovieLens 100k ratings release.

Builds a two-entity-class schema (User, Movie) with one binary Like
relation: a rating counts as a like exactly when it strictly exceeds
that user's mean rating.  User attributes (age band, gender, occupation)
and movie attributes (release decade, genre flags) come from u.user and
u.item when attributes are requested.
"""

from __future__ import annotations

import os

import numpy as np

from .data import MISSING, Dataset, binarize_ratings
from .schema import AttributeSpec, EntityClassSpec, RelationClassSpec, Schema

AGE_EDGES = (25, 35, 45)  # four bands: <25, 25-34, 35-44, 45+
DECADE_EDGES = (1950, 1960, 1970, 1980, 1990)  # six bands up to the 90s
OCCUPATIONS = (
    "administrator", "artist", "doctor", "educator", "engineer", "entertainment",
    "executive", "healthcare", "homemaker", "lawyer", "librarian", "marketing",
    "none", "other", "programmer", "retired", "salesman", "scientist", "student",
    "technician", "writer",
)
GENRES = (
    "unknown", "action", "adventure", "animation", "children", "comedy", "crime",
    "documentary", "drama", "fantasy", "film_noir", "horror", "musical", "mystery",
    "romance", "scifi", "thriller", "war", "western",
)


def movielens_schema(with_attributes: bool, prior_strength: float = 1.0,
                     relation_prior_strength: float = 1.0,
                     concentration: float = 10.0) -> Schema:
    user_attrs: tuple = ()
    movie_attrs: tuple = ()
    if with_attributes:
        user_attrs = (
            AttributeSpec("age_band", len(AGE_EDGES) + 1, prior_strength),
            AttributeSpec("gender", 2, prior_strength),
            AttributeSpec("occupation", len(OCCUPATIONS), prior_strength),
        )
        movie_attrs = (AttributeSpec("decade", len(DECADE_EDGES) + 1, prior_strength),) + tuple(
            AttributeSpec(f"genre_{g}", 2, prior_strength) for g in GENRES
        )
    return Schema(
        entity_classes=(
            EntityClassSpec("User", user_attrs, concentration),
            EntityClassSpec("Movie", movie_attrs, concentration),
        ),
        relation_classes=(
            RelationClassSpec(
                name="Like",
                subject_class="User",
                object_class="Movie",
                relation_attribute=AttributeSpec("liked", 2, relation_prior_strength),
                missing_policy="open_world",
            ),
        ),
    )


def _bin(value: float, edges) -> int:
    for i, edge in enumerate(edges):
        if value < edge:
            return i
    return len(edges)


def load_movielens(root, with_attributes: bool = False, prior_strength: float = 1.0,
                   relation_prior_strength: float = 1.0) -> tuple[Schema, Dataset]:
    """Load u.data (and u.user/u.item when attributes are on) from `root`.

    User and movie indices are id - 1; entity counts come from the
    largest ids seen.  Ratings are binarized per user before storage.
    """
    schema = movielens_schema(with_attributes, prior_strength, relation_prior_strength)
    ratings = []
    with open(os.path.join(root, "u.data"), "r", encoding="utf-8") as fh:
        for line in fh:
            if not line.strip():
                continue
            user, item, rating, _ = line.split("\t")
            ratings.append((int(user) - 1, int(item) - 1, float(rating)))
    triples = np.asarray(binarize_ratings(ratings), dtype=np.int64)
    n_users = int(triples[:, 0].max()) + 1
    n_movies = int(triples[:, 1].max()) + 1

    tables = {}
    if with_attributes:
        users = np.full((n_users, 3), MISSING, dtype=np.int64)
        with open(os.path.join(root, "u.user"), "r", encoding="utf-8") as fh:
            for line in fh:
                if not line.strip():
                    continue
                ident, age, gender, occupation, _ = line.strip().split("|")
                i = int(ident) - 1
                if i >= n_users:
                    continue
                users[i, 0] = _bin(float(age), AGE_EDGES)
                users[i, 1] = 0 if gender == "M" else 1
                if occupation in OCCUPATIONS:
                    users[i, 2] = OCCUPATIONS.index(occupation)
        movies = np.full((n_movies, 1 + len(GENRES)), MISSING, dtype=np.int64)
        with open(os.path.join(root, "u.item"), "r", encoding="latin-1") as fh:
            for line in fh:
                if not line.strip():
                    continue
                fields = line.rstrip("\n").split("|")
                i = int(fields[0]) - 1
                if i >= n_movies:
                    continue
                date = fields[2]
                if date:
                    movies[i, 0] = _bin(float(date.split("-")[-1]), DECADE_EDGES)
                flags = fields[5:5 + len(GENRES)]
                for g, flag in enumerate(flags):
                    movies[i, 1 + g] = int(flag)
        tables = {"User": users, "Movie": movies}

    dataset = Dataset(schema, {"User": n_users, "Movie": n_movies}, tables, {"Like": triples})
    return schema, dataset


def find_movielens_root() -> str | None:
    """Locate an ml-100k directory via MOVIELENS_DIR or common paths."""
    candidates = [os.environ.get("MOVIELENS_DIR")]
    candidates += ["data/ml-100k", "ml-100k", os.path.expanduser("~/ml-100k")]
    for c in candidates:
        if c and os.path.exists(os.path.join(c, "u.data")):
            return c
    return None
