"""Shared fixtures: the toy bundle, tiny random instances, and hand-built
networks used to pin documented example values."""

from dataclasses import replace

import numpy as np
import pytest

from gsmi import datagen
from gsmi.geo_core import (
    GeoSocialDataset,
    Location,
    Poi,
    RoadNetwork,
    SocialNetwork,
    User,
    Vocabulary,
    build_distance_oracle,
)
from gsmi.ignvd import build_index
from gsmi.scoring import ScoreParams
from gsmi.brknn import QueryContext


@pytest.fixture(scope="session")
def toy1():
    return datagen.generate(datagen.preset("toy-1", seed=42))


@pytest.fixture(scope="session")
def toy1_index(toy1):
    return build_index(toy1, threshold=3, fanout=2, leaf_capacity=4)


@pytest.fixture(scope="session")
def toy1_ctx(toy1, toy1_index):
    oracle = build_distance_oracle(toy1.road)
    return QueryContext(toy1, toy1_index, oracle, ScoreParams(alpha=0.6))


def make_instance(seed, rows=5, cols=5, n_users=30, n_pois=12, vocab=6, **overrides):
    cfg = replace(
        datagen.preset("toy-1"),
        seed=seed,
        grid_rows=rows,
        grid_cols=cols,
        n_users=n_users,
        n_pois=n_pois,
        vocab_size=vocab,
        **overrides,
    )
    return datagen.generate(cfg)


def build_ctx(dataset, threshold=3, fanout=4, leaf_capacity=4, alpha=0.6, min_distance=1.0):
    index = build_index(dataset, threshold=threshold, fanout=fanout, leaf_capacity=leaf_capacity)
    oracle = build_distance_oracle(dataset.road)
    return QueryContext(dataset, index, oracle, ScoreParams(alpha=alpha, min_distance=min_distance))


def path_road(n, weight=100.0):
    """A path graph v0 - v1 - ... - v{n-1} with equal edge weights."""
    return RoadNetwork(n, [(i, i + 1, weight) for i in range(n - 1)],
                       coords=[(i * weight, 0.0) for i in range(n)])


def manual_dataset(road, pois, users, social_edges):
    """Assemble a validated dataset from explicit parts."""
    n_users = len(users)
    return GeoSocialDataset(
        road=road,
        social=SocialNetwork(n_users, social_edges),
        pois=tuple(pois),
        users=tuple(users),
        vocab=Vocabulary.build(pois, users),
    )


@pytest.fixture(scope="session")
def promo_network():
    """Hand-built 12-user network with three stores' potential-user sets.

    All influence weights are 1.  Seeding stores 1 and 3 activates users
    0..4 directly and 7..11 downstream, for an exact influence of 10; the
    other two store pairs reach 7 and 8 users.  Used to pin the documented
    optimal-selection and exact-influence values.
    """
    social = SocialNetwork(
        12,
        [(0, 7, 1.0), (1, 8, 1.0), (3, 9, 1.0), (4, 10, 1.0), (10, 11, 1.0)],
    )
    members = {1: frozenset({0, 1, 2}), 3: frozenset({2, 3, 4}), 5: frozenset({5, 6})}
    return social, members
