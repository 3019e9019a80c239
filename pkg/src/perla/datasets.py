"""Bundled areal maps."""

from importlib import resources

import numpy as np
import pandas as pd

from .graph import load_adjacency, load_area_registry

__all__ = ["west_us_counties"]


def west_us_counties():
    """The 259-county western U.S. map used by the simulation scenarios.

    Returns ``(graph, centroids)`` where ``centroids`` is a DataFrame
    (``area_id, name, state_fips, longitude, latitude``) in graph order.
    The graph is queen contiguity over lower-48 counties whose centroid lies
    west of 110 degrees W, built from the 2016 Census cartographic boundary
    file, minus two areas (an island county with no land neighbour and one
    county straddling the cut line).
    """
    root = resources.files("perla") / "data"
    with resources.as_file(root / "west_us_areas.txt") as p:
        ids = load_area_registry(p)
    with resources.as_file(root / "west_us_edges.csv") as p:
        g = load_adjacency(p, ids)
    with resources.as_file(root / "west_us_centroids.csv") as p:
        cent = pd.read_csv(p, dtype={"area_id": str, "state_fips": str})
    cent = cent.set_index("area_id").loc[list(g.area_ids)].reset_index()
    return g, cent


def latitudes(centroids):
    return np.asarray(centroids["latitude"], dtype=np.float64)
