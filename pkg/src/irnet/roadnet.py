"""Directed road graph: roads are vertices, an edge (i, j) means traffic on
road i can flow into road j through an intersection."""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable

import numpy as np

from .errors import (
    MalformedRow,
    OrderingNotPermutation,
    SelfLoop,
    SentinelIdUsed,
    UnknownRoad,
    UnknownRoadInEdge,
)

# Slot value marking a dumb point. Road ids are non-negative, so it never
# collides with a real road.
DUMB = -1


@dataclass(frozen=True)
class RoadNetwork:
    roads: frozenset[int]
    edges: frozenset[tuple[int, int]]
    _up: dict[int, frozenset[int]] = field(repr=False, compare=False, default_factory=dict)
    _down: dict[int, frozenset[int]] = field(repr=False, compare=False, default_factory=dict)

    def __contains__(self, road: int) -> bool:
        return road in self.roads

    def sorted_roads(self) -> list[int]:
        return sorted(self.roads)


def build_network(roads: Iterable[int], edges: Iterable[tuple[int, int]]) -> RoadNetwork:
    road_set = set()
    for r in roads:
        r = int(r)
        if r < 0:
            raise SentinelIdUsed(f"road id {r} is negative (reserved for dumb points)")
        road_set.add(r)

    edge_set = set()
    for a, b in edges:
        a, b = int(a), int(b)
        if a < 0 or b < 0:
            raise SentinelIdUsed(f"edge ({a}, {b}) uses a reserved id")
        if a not in road_set or b not in road_set:
            raise UnknownRoadInEdge(f"edge ({a}, {b}) references a road not in the network")
        if a == b:
            raise SelfLoop(f"self-loop on road {a}")
        edge_set.add((a, b))

    up: dict[int, set[int]] = {r: set() for r in road_set}
    down: dict[int, set[int]] = {r: set() for r in road_set}
    for a, b in edge_set:
        down[a].add(b)
        up[b].add(a)
    return RoadNetwork(
        frozenset(road_set),
        frozenset(edge_set),
        {r: frozenset(s) for r, s in up.items()},
        {r: frozenset(s) for r, s in down.items()},
    )


def adjacency_matrix(net: RoadNetwork, ordering: list[int]) -> np.ndarray:
    """Directed 0/1 adjacency matrix: ``A[i, j] = 1`` iff ``ordering[i] -> ordering[j]``."""
    if len(ordering) != len(net.roads) or set(ordering) != net.roads:
        raise OrderingNotPermutation("ordering must be a permutation of the network's roads")
    index = {r: i for i, r in enumerate(ordering)}
    A = np.zeros((len(ordering), len(ordering)), dtype=np.int8)
    for a, b in net.edges:
        A[index[a], index[b]] = 1
    return A


def _expand(net: RoadNetwork, table: dict[int, frozenset[int]], tar: int, order: int) -> set[int]:
    if tar not in net.roads:
        raise UnknownRoad(f"road {tar} is not in the network")
    if order < 1:
        raise ValueError("order must be >= 1")
    frontier = set(table[tar])
    for _ in range(order - 1):
        frontier = set().union(*(table[m] for m in frontier)) if frontier else set()
    return frontier


def upstream(net: RoadNetwork, tar: int, order: int = 1) -> set[int]:
    """Roads whose traffic reaches ``tar`` through exactly ``order`` intersections."""
    return _expand(net, net._up, tar, order)


def downstream(net: RoadNetwork, tar: int, order: int = 1) -> set[int]:
    """Roads reached from ``tar`` through exactly ``order`` intersections."""
    return _expand(net, net._down, tar, order)


def load_edges(path: str | Path) -> list[tuple[int, int]]:
    """Read a ``from_id,to_id`` edge list; blank and ``#`` lines are skipped."""
    edges = []
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            parts = [p.strip() for p in line.split(",")]
            if len(parts) != 2:
                raise MalformedRow(f"expected 'from_id,to_id', got {raw.rstrip()!r}", lineno)
            try:
                edges.append((int(parts[0]), int(parts[1])))
            except ValueError:
                raise MalformedRow(f"non-integer road id in {raw.rstrip()!r}", lineno) from None
    return edges


def save_edges(path: str | Path, edges: Iterable[tuple[int, int]]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("# from_id,to_id\n")
        for a, b in sorted(edges):
            fh.write(f"{a},{b}\n")
