"""End-to-end glue: network + store + target road -> plan, scaled datasets."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

from .datagen import (
    Normalizer,
    Sample,
    SpeedStore,
    fit_normalizer,
    make_dataset,
    split_sizes,
)
from .errors import BadConfig, RangeTooShort
from .model import ModelConfig
from .reconstruct import ReconstructionPlan, build_plan
from .roadnet import RoadNetwork
from .train import TrainConfig


@dataclass
class ExperimentConfig:
    """One JSON file describing a run; CLI flags override individual keys.
    Defaults follow the reference setup (h=6, w=3, k=3, P=5)."""

    edges: str | None = None
    store: str | None = None
    out_dir: str = "."
    target: int | None = None
    fractions: tuple[float, float, float] = (0.6, 0.2, 0.2)
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    seed: int = 0

    @classmethod
    def from_dict(cls, doc: dict) -> "ExperimentConfig":
        known = {f.name for f in fields(cls)}
        extra = set(doc) - known
        if extra:
            raise BadConfig(f"unknown experiment config keys: {sorted(extra)}")
        doc = dict(doc)
        try:
            if "model" in doc:
                doc["model"] = ModelConfig.from_dict(doc["model"])
            if "train" in doc:
                doc["train"] = TrainConfig(**doc["train"])
        except TypeError as exc:
            raise BadConfig(str(exc)) from None
        if "fractions" in doc:
            doc["fractions"] = tuple(doc["fractions"])
        return cls(**doc)

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        try:
            doc = json.loads(Path(path).read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise BadConfig(f"{path}: {exc}") from None
        if not isinstance(doc, dict):
            raise BadConfig(f"{path}: expected a JSON object")
        return cls.from_dict(doc)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["fractions"] = list(self.fractions)
        return d

    def with_seed(self, seed: int) -> "ExperimentConfig":
        return replace(self, seed=seed, model=replace(self.model, seed=seed), train=replace(self.train, seed=seed))


@dataclass
class Prepared:
    plan: ReconstructionPlan
    normalizer: Normalizer
    train: list[Sample]
    val: list[Sample]
    test: list[Sample]
    train_stop: int  # first time index not covered by training windows


def train_span(length: int, h: int, P: int, fractions) -> int:
    """Number of leading time steps used by the training split's windows."""
    n = length - h - P + 1
    if n < 1:
        raise RangeTooShort(f"series of length {length} cannot hold h={h} plus P={P}")
    n_train, _, _ = split_sizes(n, fractions)
    # last training window ends at t = h + n_train - 2 and needs P label steps after it
    return n_train + h + P - 1


def prepare(
    net: RoadNetwork,
    store: SpeedStore,
    target: int,
    mc: ModelConfig,
    fractions=(0.6, 0.2, 0.2),
    normalizer: Normalizer | None = None,
) -> Prepared:
    """Reconstruct the target's neighbourhood and build scaled, split samples.

    DTW features use only the training time span. The normalizer is fitted
    on the training windows unless one is supplied (e.g. from a checkpoint).
    """
    stop = train_span(store.length, mc.h, mc.P, fractions)
    plan = build_plan(net, target, store.features(stop), mc.k, mc.w)
    raw = make_dataset(plan, store, mc.h, mc.P)
    n_train, n_val, _ = split_sizes(len(raw), fractions)
    if normalizer is None:
        normalizer = fit_normalizer(raw[:n_train], store, plan.roads(), mc.h, mc.P)
    samples = make_dataset(plan, store, mc.h, mc.P, normalizer=normalizer)
    return Prepared(
        plan,
        normalizer,
        samples[:n_train],
        samples[n_train : n_train + n_val],
        samples[n_train + n_val :],
        stop,
    )
