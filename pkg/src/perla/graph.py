"""Areal adjacency structure.

Graphs are ingested from undirected edge lists (``area_a,area_b``) against
an ordered area registry; the registry order defines area indices
0..n-1 everywhere else in the package.
"""

import csv
import io
import os
import warnings
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .errors import ValidationError

__all__ = [
    "AdjacencyGraph",
    "DisconnectedGraphWarning",
    "load_adjacency",
    "load_area_registry",
    "save_adjacency",
    "save_area_registry",
    "connected_components",
    "graph_from_pairs",
]


class DisconnectedGraphWarning(UserWarning):
    pass


@dataclass(frozen=True, eq=False)
class AdjacencyGraph:
    """Undirected neighbourhood structure over ``n`` areas.

    ``neighbors[i]`` is the sorted tuple of neighbour indices of area ``i``;
    the binary adjacency W and the degree diagonal D are implied.
    """

    area_ids: tuple
    neighbors: tuple
    _indptr: np.ndarray = field(init=False, repr=False)
    _indices: np.ndarray = field(init=False, repr=False)
    _eig: list = field(init=False, repr=False)

    def __post_init__(self):
        if len(self.area_ids) != len(self.neighbors):
            raise ValidationError("area_ids and neighbors differ in length")
        if len(set(self.area_ids)) != len(self.area_ids):
            raise ValidationError("area ids must be unique")
        n = len(self.area_ids)
        if n == 0:
            raise ValidationError("graph has no areas")
        for i, nbrs in enumerate(self.neighbors):
            if len(nbrs) == 0:
                raise ValidationError(f"area {self.area_ids[i]!r} has no neighbours")
            if i in nbrs:
                raise ValidationError(f"self-loop at area {self.area_ids[i]!r}")
            if list(nbrs) != sorted(set(nbrs)):
                raise ValidationError(f"neighbour list of {self.area_ids[i]!r} is not sorted/unique")
            for j in nbrs:
                if not 0 <= j < n or i not in self.neighbors[j]:
                    raise ValidationError(f"asymmetric adjacency between {self.area_ids[i]!r} and index {j}")
        indptr = np.zeros(n + 1, dtype=np.int64)
        indptr[1:] = np.cumsum([len(nb) for nb in self.neighbors])
        indices = np.fromiter((j for nb in self.neighbors for j in nb), dtype=np.int64, count=indptr[-1])
        object.__setattr__(self, "_indptr", indptr)
        object.__setattr__(self, "_indices", indices)
        object.__setattr__(self, "_eig", [])

    @property
    def n(self):
        return len(self.area_ids)

    @property
    def degrees(self):
        return np.diff(self._indptr)

    @property
    def indptr(self):
        """CSR row pointer into :attr:`indices`."""
        return self._indptr

    @property
    def indices(self):
        return self._indices

    @property
    def n_edges(self):
        return int(self._indptr[-1]) // 2

    def edges(self):
        """Unique undirected edges as (i, j) index pairs with i < j."""
        return [(i, j) for i, nb in enumerate(self.neighbors) for j in nb if i < j]

    def index_of(self, area_id):
        try:
            return self.area_ids.index(area_id)
        except ValueError:
            raise KeyError(area_id) from None

    def adjacency_matrix(self):
        """Dense binary W (for tests and small graphs)."""
        w = np.zeros((self.n, self.n))
        for i, nb in enumerate(self.neighbors):
            w[i, list(nb)] = 1.0
        return w

    def normalized_adjacency_eigenvalues(self):
        """Eigenvalues of D^{-1/2} W D^{-1/2}, computed once and cached.

        They give log det(D - rho W) = sum(log D) + sum(log(1 - rho * lam))
        for any rho at O(n) cost.
        """
        if not self._eig:
            s = 1.0 / np.sqrt(self.degrees.astype(np.float64))
            m = self.adjacency_matrix() * s[:, None] * s[None, :]
            self._eig.append(np.linalg.eigvalsh(m))
        return self._eig[0]

    def __eq__(self, other):
        if not isinstance(other, AdjacencyGraph):
            return NotImplemented
        return self.area_ids == other.area_ids and self.neighbors == other.neighbors

    def __hash__(self):
        return hash((self.area_ids, self.neighbors))


def graph_from_pairs(area_ids, pairs):
    """Build a graph from index pairs; duplicates and reversed pairs collapse."""
    n = len(area_ids)
    nbrs = [set() for _ in range(n)]
    for a, b in pairs:
        if a == b:
            raise ValidationError(f"self-loop at area {area_ids[a]!r}")
        nbrs[a].add(b)
        nbrs[b].add(a)
    return AdjacencyGraph(tuple(area_ids), tuple(tuple(sorted(s)) for s in nbrs))


def _open_text(source):
    if isinstance(source, (str, os.PathLike)):
        return open(source, newline="", encoding="utf-8")
    if isinstance(source, io.IOBase):
        return source
    return None


def load_area_registry(source):
    """Read an area registry: one id per line, blank lines ignored."""
    fh = _open_text(source)
    if fh is None:
        ids = [str(s).strip() for s in source]
    else:
        with fh:
            ids = [line.strip() for line in fh]
    ids = [s for s in ids if s]
    if len(set(ids)) != len(ids):
        seen, dup = set(), []
        for s in ids:
            if s in seen:
                dup.append(s)
            seen.add(s)
        raise ValidationError(f"duplicate area ids in registry: {dup[:5]}")
    return ids


def load_adjacency(edge_source, area_ids=None):
    """Load an undirected edge list into an :class:`AdjacencyGraph`.

    Parameters
    ----------
    edge_source : path, file object, or iterable of (area_a, area_b) rows
        A file must be comma-separated with header ``area_a,area_b``.
    area_ids : sequence of str, optional
        Area registry; its order defines indices.  When omitted, ids are
        registered in order of first appearance in the edge list.

    Raises
    ------
    ValidationError
        On self-loops (with the offending line number), ids missing from the
        registry, or registered areas without any edge.
    """
    fh = _open_text(edge_source)
    rows = []
    if fh is None:
        for lineno, row in enumerate(edge_source, start=1):
            rows.append((lineno, tuple(row)))
    else:
        with fh:
            reader = csv.reader(fh)
            header = next(reader, None)
            if header is None or [h.strip() for h in header[:2]] != ["area_a", "area_b"]:
                raise ValidationError(f"edge list header must be 'area_a,area_b', got {header}")
            for lineno, row in enumerate(reader, start=2):
                if not row or all(not c.strip() for c in row):
                    continue
                rows.append((lineno, tuple(row)))

    registry = None if area_ids is None else list(area_ids)
    index = {} if registry is None else {a: i for i, a in enumerate(registry)}
    if registry is not None and len(index) != len(registry):
        raise ValidationError("duplicate area ids in registry")
    order = [] if registry is None else registry
    pairs = []
    for lineno, row in rows:
        if len(row) != 2:
            raise ValidationError(f"line {lineno}: expected 2 fields, got {len(row)}")
        a, b = (str(x).strip() for x in row)
        if a == b:
            raise ValidationError(f"line {lineno}: self-loop on area {a!r}")
        for x in (a, b):
            if x not in index:
                if registry is not None:
                    raise ValidationError(f"line {lineno}: unknown area id {x!r}")
                index[x] = len(order)
                order.append(x)
        pairs.append((index[a], index[b]))

    nbrs = [set() for _ in order]
    for i, j in pairs:
        nbrs[i].add(j)
        nbrs[j].add(i)
    isolated = [order[i] for i, s in enumerate(nbrs) if not s]
    if isolated:
        raise ValidationError(f"areas without neighbours: {', '.join(map(repr, isolated[:10]))}")
    return AdjacencyGraph(tuple(order), tuple(tuple(sorted(s)) for s in nbrs))


def save_adjacency(g, path):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["area_a", "area_b"])
        for i, j in g.edges():
            w.writerow([g.area_ids[i], g.area_ids[j]])


def save_area_registry(g, path):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(g.area_ids) + "\n")


def connected_components(g):
    """Partition area indices into connected components (BFS).

    Warns with :class:`DisconnectedGraphWarning` when there is more than one
    component; the CAR prior stays well defined either way.
    """
    comp = np.full(g.n, -1, dtype=np.int64)
    parts = []
    for start in range(g.n):
        if comp[start] >= 0:
            continue
        cid = len(parts)
        comp[start] = cid
        members = [start]
        queue = deque([start])
        while queue:
            u = queue.popleft()
            for v in g.neighbors[u]:
                if comp[v] < 0:
                    comp[v] = cid
                    members.append(v)
                    queue.append(v)
        parts.append(sorted(members))
    if len(parts) > 1:
        warnings.warn(f"adjacency graph has {len(parts)} connected components", DisconnectedGraphWarning, stacklevel=2)
    return parts
