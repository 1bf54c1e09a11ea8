"""Communication graphs over worker IDs and gossip mixing weights."""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field

import numpy as np

from fedsim.errors import DisconnectedError, InvalidSpecError, UnknownWorkerError

KINDS = ("star", "ring", "full_mesh", "hierarchical", "custom")


@dataclass(frozen=True)
class TopologySpec:
    """Declarative topology description.

    ``hub_id`` is used by ``star``, ``group_size`` by ``hierarchical`` and
    ``edges`` (directed ``(src, dst)`` pairs) by ``custom``.
    """

    kind: str
    n_workers: int
    hub_id: int = 0
    group_size: int = 1
    edges: tuple[tuple[int, int], ...] = field(default=())

    @classmethod
    def from_dict(cls, d: dict) -> "TopologySpec":
        edges = tuple(tuple(int(x) for x in e) for e in d.get("edges", ()))
        return cls(
            kind=d["kind"],
            n_workers=int(d["n_workers"]),
            hub_id=int(d.get("hub_id", 0)),
            group_size=int(d.get("group_size", 1)),
            edges=edges,
        )

    def to_dict(self) -> dict:
        d = {"kind": self.kind, "n_workers": self.n_workers}
        if self.kind == "star":
            d["hub_id"] = self.hub_id
        elif self.kind == "hierarchical":
            d["group_size"] = self.group_size
        elif self.kind == "custom":
            d["edges"] = [list(e) for e in self.edges]
        return d


class TopologyManager:
    """Directed adjacency over workers ``0..n_workers-1``; immutable."""

    def __init__(self, n_workers: int, edges, undirected: bool):
        self.n_workers = n_workers
        self.undirected = undirected
        out = [set() for _ in range(n_workers)]
        inn = [set() for _ in range(n_workers)]
        for src, dst in edges:
            out[src].add(dst)
            inn[dst].add(src)
        self._out = tuple(tuple(sorted(s)) for s in out)
        self._in = tuple(tuple(sorted(s)) for s in inn)

    def _check(self, worker_id: int) -> int:
        if not 0 <= worker_id < self.n_workers:
            raise UnknownWorkerError(f"worker {worker_id} not in 0..{self.n_workers - 1}")
        return worker_id

    def out_neighbors(self, worker_id: int) -> tuple[int, ...]:
        return self._out[self._check(worker_id)]

    def in_neighbors(self, worker_id: int) -> tuple[int, ...]:
        return self._in[self._check(worker_id)]

    def edges(self) -> list[tuple[int, int]]:
        return [(i, j) for i in range(self.n_workers) for j in self._out[i]]

    def is_connected(self) -> bool:
        """Connectivity of the undirected skeleton."""
        if self.n_workers == 1:
            return True
        seen = {0}
        queue = deque([0])
        while queue:
            i = queue.popleft()
            for j in self._out[i] + self._in[i]:
                if j not in seen:
                    seen.add(j)
                    queue.append(j)
        return len(seen) == self.n_workers


def _bidirectional(pairs):
    for i, j in pairs:
        yield i, j
        yield j, i


def build_topology(spec: TopologySpec) -> TopologyManager:
    n = spec.n_workers
    if n < 1:
        raise InvalidSpecError("n_workers must be positive")
    if spec.kind == "star":
        if not 0 <= spec.hub_id < n:
            raise InvalidSpecError(f"hub_id {spec.hub_id} out of range for {n} workers")
        edges = _bidirectional((spec.hub_id, j) for j in range(n) if j != spec.hub_id)
        return TopologyManager(n, list(edges), undirected=True)
    if spec.kind == "ring":
        pairs = {tuple(sorted((i, (i + 1) % n))) for i in range(n)} if n > 1 else set()
        return TopologyManager(n, list(_bidirectional(sorted(pairs))), undirected=True)
    if spec.kind == "full_mesh":
        edges = [(i, j) for i in range(n) for j in range(n) if i != j]
        return TopologyManager(n, edges, undirected=True)
    if spec.kind == "hierarchical":
        g = spec.group_size
        if g < 1:
            raise InvalidSpecError("group_size must be positive")
        pairs = []
        for start in range(1, n, g):
            group = range(start, min(start + g, n))
            hub = group[0]
            pairs.append((0, hub))
            pairs.extend((hub, m) for m in group[1:])
        return TopologyManager(n, list(_bidirectional(pairs)), undirected=True)
    if spec.kind == "custom":
        seen = set()
        for src, dst in spec.edges:
            if not (0 <= src < n and 0 <= dst < n):
                raise InvalidSpecError(f"edge ({src}, {dst}) references a worker outside 0..{n - 1}")
            if src == dst:
                raise InvalidSpecError(f"self-loop on worker {src}")
            if (src, dst) in seen:
                raise InvalidSpecError(f"duplicate edge ({src}, {dst})")
            seen.add((src, dst))
        undirected = all((dst, src) in seen for src, dst in seen)
        return TopologyManager(n, spec.edges, undirected=undirected)
    raise InvalidSpecError(f"unknown topology kind {spec.kind!r}; expected one of {KINDS}")


def mixing_matrix(tm: TopologyManager) -> np.ndarray:
    """Gossip weights for ``tm``.

    Undirected graphs get Metropolis-Hastings weights,
    ``W[i, j] = 1 / (1 + max(deg_i, deg_j))`` on edges and the remainder on
    the diagonal, which is symmetric and doubly stochastic. Directed graphs
    get uniform weights over in-neighbors plus self (row stochastic only).
    """
    if not tm.is_connected():
        raise DisconnectedError("topology is disconnected; gossip averaging cannot reach consensus")
    n = tm.n_workers
    W = np.zeros((n, n))
    if tm.undirected:
        deg = [len(tm.out_neighbors(i)) for i in range(n)]
        for i in range(n):
            for j in tm.out_neighbors(i):
                W[i, j] = 1.0 / (1.0 + max(deg[i], deg[j]))
            W[i, i] = 1.0 - W[i].sum()
    else:
        for i in range(n):
            sources = (i,) + tm.in_neighbors(i)
            W[i, list(sources)] = 1.0 / len(sources)
    return W
