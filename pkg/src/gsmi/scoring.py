"""Geo-social-textual relevance scoring.

The combined score of a POI ``p`` for a user ``u`` is a ratio

    score(u, p) = (alpha * f_s(u, p) + (1 - alpha) * f_t(u, p)) / f_g(u, p)

with ``f_s`` the friend-check-in social relevance in [0, 1], ``f_t`` an
unnormalized TF-IDF dot product over shared keywords, and ``f_g`` the network
distance clamped below by ``min_distance`` (the ratio is singular at
co-location).  Larger is more relevant; an unreachable POI scores 0.

Term weighting: tf is the raw keyword weight; idf is ``ln(1 + N/df)`` with N
the corpus size and df the keyword's document frequency.  POI-side idf comes
from the POI corpus, user-side idf from the user corpus.

A linear-combination scoring variant would need the geographic component
normalized by prior knowledge of the largest distance; it is documented as an
easy extension but not implemented.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from .geo_core import INFINITE_DISTANCE


@dataclass(frozen=True)
class ScoreParams:
    """alpha balances social vs textual; min_distance clamps the geo term."""

    alpha: float = 0.6
    min_distance: float = 1.0

    def __post_init__(self):
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError("alpha must be in [0, 1]")
        if not self.min_distance > 0.0:
            raise ValueError("min_distance must be positive")


class TermWeightTable:
    """TF-IDF weights for POI-side and user-side keywords.

    Also exposes the per-keyword maximum POI-side weight, which the query
    layers use as an admissible bound when expanding candidates in distance
    order.
    """

    def __init__(self, poi_idf, user_idf, max_poi_ts):
        self.poi_idf = poi_idf
        self.user_idf = user_idf
        self.max_poi_ts = max_poi_ts

    @classmethod
    def build(cls, dataset):
        n_pois = len(dataset.pois)
        n_users = len(dataset.users)
        poi_idf = {
            t: math.log1p(n_pois / df) for t, df in dataset.vocab.poi_df.items()
        }
        user_idf = {
            t: math.log1p(n_users / df) for t, df in dataset.vocab.user_df.items()
        }
        max_poi_ts = {}
        for p in dataset.pois:
            for t, w in p.keywords.items():
                ts = w * poi_idf[t]
                if ts > max_poi_ts.get(t, 0.0):
                    max_poi_ts[t] = ts
        return cls(poi_idf, user_idf, max_poi_ts)

    def ts_poi(self, keyword, poi):
        w = poi.keywords.get(keyword)
        return 0.0 if w is None else w * self.poi_idf[keyword]

    def ts_user(self, keyword, user):
        w = user.keywords.get(keyword)
        return 0.0 if w is None else w * self.user_idf[keyword]

    def textual_upper_bound(self, user):
        """Upper bound on f_t(user, p) over every POI p."""
        return sum(
            self.ts_user(t, user) * self.max_poi_ts.get(t, 0.0)
            for t in sorted(user.keywords)
        )


def textual_similarity(user, poi, table):
    """TF-IDF dot product over shared keywords (0 when disjoint)."""
    shared = user.keywords.keys() & poi.keywords.keys()
    if not shared:
        return 0.0
    return sum(table.ts_user(t, user) * table.ts_poi(t, poi) for t in sorted(shared))


def social_relevance(user, poi):
    """Fraction of the user's friends who checked into the POI.

    0 for friendless users; the user's own check-in is not friendship
    evidence and contributes nothing by itself.
    """
    if not user.friends:
        return 0.0
    return len(user.friends & poi.checkins) / len(user.friends)


def geo_proximity(user, poi, oracle, params):
    """Network distance clamped below by min_distance; inf propagates."""
    d = oracle.distance(user.loc, poi.loc)
    if d == INFINITE_DISTANCE:
        return INFINITE_DISTANCE
    return max(d, params.min_distance)


def combine(f_s, f_t, f_g, params):
    """The ratio form given the three components."""
    if f_g == INFINITE_DISTANCE:
        return 0.0
    return (params.alpha * f_s + (1.0 - params.alpha) * f_t) / f_g


def relevance_score(user, poi, oracle, table, params):
    """Full geo-social-textual score of one (user, POI) pair."""
    f_g = geo_proximity(user, poi, oracle, params)
    if f_g == INFINITE_DISTANCE:
        return 0.0
    f_s = social_relevance(user, poi) if params.alpha > 0.0 else 0.0
    f_t = textual_similarity(user, poi, table) if params.alpha < 1.0 else 0.0
    return (params.alpha * f_s + (1.0 - params.alpha) * f_t) / f_g


def partial_score(user, poi, oracle, table, params):
    """Geo-textual part used by pruning: (1 - alpha) * f_t / f_g."""
    f_g = geo_proximity(user, poi, oracle, params)
    if f_g == INFINITE_DISTANCE:
        return 0.0
    return (1.0 - params.alpha) * textual_similarity(user, poi, table) / f_g
