"""Geo-social reverse top-k retrieval and influence-maximizing POI selection.

The package is organized around one pipeline:

* ``geo_core``  -- immutable geo-social data model, dataset bundle I/O, and
  exact shortest-path distance oracles.
* ``scoring``   -- geo-social-textual relevance scoring (TF-IDF textual
  similarity, friend-check-in social relevance, distance-ratio combination).
* ``ignvd``     -- road-network partition tree with inverted files, plus
  per-keyword network Voronoi diagrams and compressed nearest-POI maps.
* ``brknn``     -- exact top-k relevance queries and pruned batch reverse
  top-k retrieval.
* ``influence`` -- independent-cascade machinery: simulation, exact
  possible-world evaluation, reverse-reachable sampling, coverage greedy,
  exact two-hop influence, and sample-size / bound formulas.
* ``solvers``   -- end-to-end POI selection: a sampling baseline, a hybrid
  approximation solver, a verification-thrifty heuristic, four competitor
  policies, and an exhaustive-optimal test oracle.
* ``datagen``   -- deterministic synthetic dataset and query-set generation.
* ``oracles``   -- deliberately simple brute-force reference implementations
  that share no code with the optimized paths.
* ``bench``     -- parameter-sweep benchmark harness with TSV/JSON reports
  and rendered figures.
* ``cli``       -- the ``gsmi`` command-line front end.
"""

__version__ = "0.1.0"

from .geo_core import (  # noqa: F401
    DataError,
    DistanceOracle,
    GeoSocialDataset,
    Location,
    Poi,
    RoadNetwork,
    SocialNetwork,
    User,
    build_distance_oracle,
    load_dataset,
    save_dataset,
    shortest_distance,
)
from .scoring import ScoreParams, TermWeightTable, relevance_score  # noqa: F401
