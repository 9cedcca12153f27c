"""Analogy task sampling: scenes, K-shot contexts, and split protocols."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .rng import RngStream
from .worlds import (
    MAX_OBJECTS,
    CompositeRelation,
    FactorSchema,
    PrimitiveRelation,
    WorldError,
    render,
)

DEFAULT_SHOTS = {"grid_shapes": 3, "multi_objects": 2}


class SplitError(ValueError):
    pass


@dataclass
class FactorScene:
    assignment: dict
    image: np.ndarray  # u8 [3, H, W]


@dataclass
class AnalogyTask:
    context: list  # [(FactorScene A_i, FactorScene B_i)]
    query: FactorScene
    target: FactorScene
    relation: object  # PrimitiveRelation | CompositeRelation
    split_tag: str = "train"

    @property
    def shots(self) -> int:
        return len(self.context)


def valid_pairs(schema: FactorSchema, prop: str) -> list:
    """Ordered (source, target) pairs a relation may take on this property."""
    size = schema.domain_size(prop)
    if schema.world_id == "multi_objects":
        # anchor cells support add (empty -> object) and delete (object -> empty)
        return [(0, v) for v in range(1, size)] + [(v, 0) for v in range(1, size)]
    return [(s, t) for s in range(size) for t in range(size) if s != t]


def _train_side_covers(train: list, size: int) -> bool:
    seen = set()
    for s, t in train:
        seen.add(s)
        seen.add(t)
    return len(seen) == size


def _values_in(pairs) -> set:
    out = set()
    for s, t in pairs:
        out.add(s)
        out.add(t)
    return out


def make_split(schema: FactorSchema, holdout_fraction: float, rng: RngStream) -> dict:
    """Partition each relation property's pair set into train/heldout sides.

    Holdout size is round(fraction * pairs); the train side must mention every
    domain value at least once as a source or target. Random partitions are
    retried up to 1000 times, then repaired greedily by swapping pairs back.
    """
    if not 0.0 < holdout_fraction < 1.0:
        raise SplitError(f"holdout fraction must be in (0, 1), got {holdout_fraction}")
    split = {}
    for prop in schema.relation_properties:
        pairs = valid_pairs(schema, prop)
        size = schema.domain_size(prop)
        n_hold = int(round(holdout_fraction * len(pairs)))
        if n_hold == 0 or n_hold == len(pairs):
            raise SplitError(
                f"{prop}: fraction {holdout_fraction} leaves an empty split side")
        chosen = None
        for _ in range(1000):
            order = rng.permutation(len(pairs))
            train = [pairs[i] for i in order[n_hold:]]
            hold = [pairs[i] for i in order[:n_hold]]
            if _train_side_covers(train, size):
                chosen = (train, hold)
                break
        if chosen is None:
            # deterministic repair: swap heldout pairs carrying a missing value
            order = rng.permutation(len(pairs))
            train = [pairs[i] for i in order[n_hold:]]
            hold = [pairs[i] for i in order[:n_hold]]
            missing = set(range(size)) - _values_in(train)
            for value in sorted(missing):
                swap_in = next((p for p in hold if value in p), None)
                swap_out = next(
                    (p for p in train
                     if _train_side_covers([q for q in train if q != p] + [swap_in], size)),
                    None) if swap_in else None
                if swap_in is None or swap_out is None:
                    raise SplitError(
                        f"{prop}: cannot satisfy coverage at fraction {holdout_fraction}")
                train.remove(swap_out)
                hold.remove(swap_in)
                train.append(swap_in)
                hold.append(swap_out)
            chosen = (train, hold)
        train, hold = chosen
        split[prop] = {"train": sorted(train), "heldout": sorted(hold)}
    return split


# ---- scene sampling ----------------------------------------------------------


def _sample_grid_assignment(schema: FactorSchema, rng: RngStream, fixed: dict) -> dict:
    assignment = {}
    for name, size in schema.properties:
        assignment[name] = fixed[name] if name in fixed else rng.randint(size)
    return assignment


def _sample_multi_assignment(schema: FactorSchema, rng: RngStream, fixed: dict,
                             max_total: int = MAX_OBJECTS) -> dict:
    assignment = {f"cell_{i}": 0 for i in range(9)}
    assignment.update(fixed)
    occupied = sum(1 for v in assignment.values() if v != 0)
    free_cells = [i for i in range(9) if assignment[f"cell_{i}"] == 0
                  and f"cell_{i}" not in fixed]
    budget = max_total - occupied
    if budget < 0:
        raise WorldError("fixed cells alone exceed the object limit")
    extra = rng.randint(budget + 1)
    if occupied == 0 and extra == 0 and budget > 0:
        extra = 1  # keep scenes non-empty when the budget allows
    for i in rng.choice(len(free_cells), min(extra, len(free_cells))):
        cell = free_cells[int(i)]
        assignment[f"cell_{cell}"] = 1 + rng.randint(schema.domain_size(f"cell_{cell}") - 1)
    return assignment


def sample_assignment(schema: FactorSchema, rng: RngStream, fixed: dict = None,
                      max_total: int = MAX_OBJECTS) -> dict:
    fixed = fixed or {}
    if schema.world_id == "multi_objects":
        return _sample_multi_assignment(schema, rng, fixed, max_total)
    return _sample_grid_assignment(schema, rng, fixed)


def _scene_pair(schema: FactorSchema, rng: RngStream, relation) -> tuple:
    """Sample a scene satisfying the relation's source constraints, then apply it."""
    fixed = {}
    max_total = MAX_OBJECTS
    for part in (relation.parts if isinstance(relation, CompositeRelation) else (relation,)):
        fixed[part.prop] = part.source
    if schema.world_id == "multi_objects":
        parts = relation.parts if isinstance(relation, CompositeRelation) else (relation,)
        adds = sum(1 for p in parts if p.source == 0)
        deletes = sum(1 for p in parts if p.source != 0)
        # extra objects must leave room on both sides of the relation
        max_total = MAX_OBJECTS - max(adds, deletes) + deletes
    before = sample_assignment(schema, rng, fixed, max_total)
    after = relation.apply(before)
    return (FactorScene(before, render(schema, before)),
            FactorScene(after, render(schema, after)))


def sample_primitive_relation(schema: FactorSchema, rng: RngStream,
                              pairs_by_prop: dict) -> PrimitiveRelation:
    prop = schema.relation_properties[rng.randint(len(schema.relation_properties))]
    pairs = pairs_by_prop[prop]
    source, target = pairs[rng.randint(len(pairs))]
    return PrimitiveRelation(prop, source, target)


def sample_primitive_task(schema: FactorSchema, rng: RngStream, shots: int,
                          pairs_by_prop: dict = None, split_tag: str = "train") -> AnalogyTask:
    """Draw a primitive relation and K+1 scenes that all carry its source value."""
    if shots < 1:
        raise ValueError(f"shots must be >= 1, got {shots}")
    if pairs_by_prop is None:
        pairs_by_prop = {p: valid_pairs(schema, p) for p in schema.relation_properties}
    relation = sample_primitive_relation(schema, rng, pairs_by_prop)
    context = [_scene_pair(schema, rng, relation) for _ in range(shots)]
    query, target = _scene_pair(schema, rng, relation)
    return AnalogyTask(context, query, target, relation, split_tag)


def sample_composite_relation(schema: FactorSchema, rng: RngStream, k: int,
                              pairs_by_prop: dict) -> CompositeRelation:
    props = [schema.relation_properties[int(i)]
             for i in rng.choice(len(schema.relation_properties), k)]
    parts = []
    for prop in props:
        pairs = pairs_by_prop[prop]
        source, target = pairs[rng.randint(len(pairs))]
        parts.append(PrimitiveRelation(prop, source, target))
    return CompositeRelation(tuple(parts))


def sample_composite_task(schema: FactorSchema, rng: RngStream, k: int, shots: int,
                          pairs_by_prop: dict = None, split_tag: str = None) -> AnalogyTask:
    """Compose k primitives over distinct properties into one task."""
    max_k = min(len(schema.relation_properties), 4)
    if not 2 <= k <= max_k:
        raise ValueError(f"composite k must be in [2, {max_k}], got {k}")
    if pairs_by_prop is None:
        pairs_by_prop = {p: valid_pairs(schema, p) for p in schema.relation_properties}
    relation = sample_composite_relation(schema, rng, k, pairs_by_prop)
    context = [_scene_pair(schema, rng, relation) for _ in range(shots)]
    query, target = _scene_pair(schema, rng, relation)
    return AnalogyTask(context, query, target, relation,
                       split_tag or f"composite_{k}")
