"""Intersection reconstruction.

Every target road is mapped onto the same virtual topology: each intersection
has exactly ``k`` slots ordered by DTW similarity, missing roads become dumb
points, and order ``d`` expands each slot of order ``d - 1`` into its own
``k``-slot intersection, giving ``k**d`` slots per direction and order.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping

import numpy as np

from .errors import LengthMismatch, MissingFeature, UnknownRoad, VersionMismatch
from .roadnet import DUMB, RoadNetwork, downstream, upstream
from .warp import dtw_distance

UPSTREAM = "upstream"
DOWNSTREAM = "downstream"

PLAN_FORMAT = "irnet-plan"
PLAN_VERSION = 1


@dataclass(frozen=True)
class OrderedRoadSet:
    order: int
    direction: str
    slots: tuple[int, ...]

    def __len__(self):
        return len(self.slots)

    def dumb_count(self) -> int:
        return sum(1 for s in self.slots if s == DUMB)


@dataclass(frozen=True)
class ReconstructionPlan:
    target: int
    k: int
    w: int
    upstream_sets: tuple[OrderedRoadSet, ...]
    downstream_sets: tuple[OrderedRoadSet, ...]

    def sets(self, direction: str) -> tuple[OrderedRoadSet, ...]:
        return self.upstream_sets if direction == UPSTREAM else self.downstream_sets

    def roads(self) -> list[int]:
        """Every real road the plan touches, target included, sorted."""
        found = {self.target}
        for s in self.upstream_sets + self.downstream_sets:
            found.update(r for r in s.slots if r != DUMB)
        return sorted(found)

    def to_json(self) -> dict:
        def enc(sets):
            return [[None if r == DUMB else r for r in s.slots] for s in sets]

        return {
            "format": PLAN_FORMAT,
            "version": PLAN_VERSION,
            "target": self.target,
            "k": self.k,
            "w": self.w,
            "upstream": enc(self.upstream_sets),
            "downstream": enc(self.downstream_sets),
        }

    @classmethod
    def from_json(cls, doc: dict) -> "ReconstructionPlan":
        if doc.get("format") != PLAN_FORMAT:
            raise ValueError("not an irnet plan document")
        if doc.get("version") != PLAN_VERSION:
            raise VersionMismatch(f"plan version {doc.get('version')} is not supported")

        def dec(rows, direction):
            return tuple(
                OrderedRoadSet(d, direction, tuple(DUMB if r is None else int(r) for r in row))
                for d, row in enumerate(rows, start=1)
            )

        return cls(
            int(doc["target"]),
            int(doc["k"]),
            int(doc["w"]),
            dec(doc["upstream"], UPSTREAM),
            dec(doc["downstream"], DOWNSTREAM),
        )


def save_plan(plan: ReconstructionPlan, path: str | Path) -> None:
    Path(path).write_text(json.dumps(plan.to_json(), indent=1) + "\n", encoding="utf-8")


def load_plan(path: str | Path) -> ReconstructionPlan:
    return ReconstructionPlan.from_json(json.loads(Path(path).read_text(encoding="utf-8")))


def _feature(features: Mapping[int, np.ndarray], road: int) -> np.ndarray:
    try:
        return features[road]
    except KeyError:
        raise MissingFeature(f"no feature vector for road {road}") from None


def sort_adjacent(tar: int, candidates, features: Mapping[int, np.ndarray]) -> list[int]:
    """Order candidates by DTW distance to the target's feature vector, closest
    first; equal distances fall back to ascending road id."""
    f_tar = _feature(features, tar)
    labelled = []
    for r in candidates:
        f_r = _feature(features, r)
        if len(f_r) != len(f_tar):
            raise LengthMismatch(f"feature length of road {r} differs from road {tar}")
        labelled.append((dtw_distance(f_r, f_tar, 2), r))
    labelled.sort()
    return [r for _, r in labelled]


def normalize_intersection(sorted_roads: list[int], k: int) -> list[int]:
    if k < 1:
        raise ValueError("k must be >= 1")
    kept = list(sorted_roads[:k])
    return kept + [DUMB] * (k - len(kept))


def _neighbours(direction: str):
    return upstream if direction == UPSTREAM else downstream


def order_high_adjacent(prev: OrderedRoadSet, net: RoadNetwork, features, k: int) -> OrderedRoadSet:
    adjacent = _neighbours(prev.direction)
    slots: list[int] = []
    for road in prev.slots:
        if road == DUMB:
            slots.extend([DUMB] * k)
        else:
            slots.extend(normalize_intersection(sort_adjacent(road, adjacent(net, road, 1), features), k))
    return OrderedRoadSet(prev.order + 1, prev.direction, tuple(slots))


def _direction_sets(net, tar, features, k, w, direction):
    first = normalize_intersection(sort_adjacent(tar, _neighbours(direction)(net, tar, 1), features), k)
    sets = [OrderedRoadSet(1, direction, tuple(first))]
    while len(sets) < w:
        sets.append(order_high_adjacent(sets[-1], net, features, k))
    return tuple(sets)


def build_plan(net: RoadNetwork, tar: int, features, k: int = 3, w: int = 3) -> ReconstructionPlan:
    if tar not in net:
        raise UnknownRoad(f"target road {tar} is not in the network")
    if k < 1 or w < 1:
        raise ValueError("k and w must be >= 1")
    return ReconstructionPlan(
        tar,
        k,
        w,
        _direction_sets(net, tar, features, k, w, UPSTREAM),
        _direction_sets(net, tar, features, k, w, DOWNSTREAM),
    )
