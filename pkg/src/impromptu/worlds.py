"""Procedural combinatorial worlds: factor schemas, deterministic rasterization,
and the primitive/composite relations that drive analogy tasks.

Two worlds are built in:

* ``grid_shapes`` — a wall/floor scene with one sprite. Properties: object
  hue, wall hue, floor hue (10 hues each), horizontal anchor ("orientation",
  5 positions). The sprite shape (4 values) varies freely but is never the
  target of a relation.
* ``multi_objects`` — up to 4 sprites on a plain background at 3x3 grid
  anchors. Relations add or delete one specific (shape, hue) object at an
  anchor; each anchor cell is a factor whose domain is {empty} + 4 shapes x
  10 hues.
"""

from __future__ import annotations

import colorsys
from dataclasses import dataclass

import numpy as np

IMAGE_SIZE = 32
NUM_HUES = 10
SHAPE_NAMES = ("square", "circle", "triangle", "cross")
GRID_ANCHOR_LEFTS = (0, 6, 12, 18, 24)
SPRITE = 8  # sprite bounding box in pixels
CELL_ORIGINS = (1, 11, 21)  # multi_objects 3x3 cell corners
MAX_OBJECTS = 4
CELL_DOMAIN = 1 + len(SHAPE_NAMES) * NUM_HUES  # empty + (shape, hue) combos

BACKGROUND = np.array([40, 40, 40], dtype=np.uint8)


class WorldError(ValueError):
    pass


def _palette() -> np.ndarray:
    cols = []
    for i in range(NUM_HUES):
        r, g, b = colorsys.hsv_to_rgb(i / NUM_HUES, 1.0, 1.0)
        cols.append([round(255 * r), round(255 * g), round(255 * b)])
    return np.array(cols, dtype=np.uint8)


PALETTE = _palette()


def _shape_masks() -> dict:
    n = SPRITE
    yy, xx = np.mgrid[0:n, 0:n]
    square = np.ones((n, n), dtype=bool)
    c = (n - 1) / 2.0
    circle = (yy - c) ** 2 + (xx - c) ** 2 <= (n / 2) ** 2
    triangle = np.zeros((n, n), dtype=bool)
    for r in range(n):
        half = (r * (n // 2)) // (n - 1)
        triangle[r, int(c - half):int(c + half) + 1] = True
    cross = np.zeros((n, n), dtype=bool)
    cross[n // 2 - 1:n // 2 + 1, :] = True
    cross[:, n // 2 - 1:n // 2 + 1] = True
    return {"square": square, "circle": circle, "triangle": triangle, "cross": cross}


SHAPE_MASKS = _shape_masks()


@dataclass(frozen=True)
class FactorSchema:
    world_id: str
    properties: tuple  # ((name, domain_size), ...) over every factor
    relation_properties: tuple  # names eligible for relations
    image_size: int = IMAGE_SIZE
    palette_id: str = "hsv10"
    version: int = 1

    def domain_size(self, prop: str) -> int:
        for name, size in self.properties:
            if name == prop:
                return size
        raise WorldError(f"unknown property {prop!r}")

    def to_json(self) -> dict:
        return {
            "world_id": self.world_id,
            "properties": [[n, s] for n, s in self.properties],
            "relation_properties": list(self.relation_properties),
            "image_size": self.image_size,
            "palette_id": self.palette_id,
            "version": self.version,
        }


GRID_SHAPES = FactorSchema(
    world_id="grid_shapes",
    properties=(("object_hue", NUM_HUES), ("wall_hue", NUM_HUES),
                ("floor_hue", NUM_HUES), ("orientation", len(GRID_ANCHOR_LEFTS)),
                ("shape", len(SHAPE_NAMES))),
    relation_properties=("object_hue", "wall_hue", "floor_hue", "orientation"),
)

MULTI_OBJECTS = FactorSchema(
    world_id="multi_objects",
    properties=tuple((f"cell_{i}", CELL_DOMAIN) for i in range(9)),
    relation_properties=tuple(f"cell_{i}" for i in range(9)),
)

WORLDS = {"grid_shapes": GRID_SHAPES, "multi_objects": MULTI_OBJECTS}


def schema_by_id(world_id: str) -> FactorSchema:
    if world_id not in WORLDS:
        raise WorldError(f"unknown world {world_id!r} (have {sorted(WORLDS)})")
    return WORLDS[world_id]


# ---- cell value packing (multi_objects) -------------------------------------


def pack_cell(shape_idx: int, hue_idx: int) -> int:
    return 1 + shape_idx * NUM_HUES + hue_idx


def unpack_cell(value: int):
    """Returns (shape_idx, hue_idx) or None for an empty cell."""
    if value == 0:
        return None
    v = value - 1
    return v // NUM_HUES, v % NUM_HUES


# ---- rendering ---------------------------------------------------------------


def _sprite_box_grid(assignment: dict):
    left = GRID_ANCHOR_LEFTS[assignment["orientation"]]
    top = IMAGE_SIZE // 2 - SPRITE // 2
    return top, left


def _render_grid_shapes(assignment: dict) -> np.ndarray:
    img = np.zeros((3, IMAGE_SIZE, IMAGE_SIZE), dtype=np.uint8)
    half = IMAGE_SIZE // 2
    img[:, :half, :] = PALETTE[assignment["wall_hue"]][:, None, None]
    img[:, half:, :] = PALETTE[assignment["floor_hue"]][:, None, None]
    top, left = _sprite_box_grid(assignment)
    mask = SHAPE_MASKS[SHAPE_NAMES[assignment["shape"]]]
    color = PALETTE[assignment["object_hue"]]
    region = img[:, top:top + SPRITE, left:left + SPRITE]
    region[:, mask] = color[:, None]
    return img


def _cell_box(cell_idx: int):
    r, c = divmod(cell_idx, 3)
    return CELL_ORIGINS[r] + 1, CELL_ORIGINS[c] + 1


def _render_multi_objects(assignment: dict) -> np.ndarray:
    count = sum(1 for i in range(9) if assignment[f"cell_{i}"] != 0)
    if count > MAX_OBJECTS:
        raise WorldError(f"{count} objects exceed the {MAX_OBJECTS}-object limit")
    img = np.empty((3, IMAGE_SIZE, IMAGE_SIZE), dtype=np.uint8)
    img[:] = BACKGROUND[:, None, None]
    for i in range(9):
        unpacked = unpack_cell(assignment[f"cell_{i}"])
        if unpacked is None:
            continue
        shape_idx, hue_idx = unpacked
        top, left = _cell_box(i)
        mask = SHAPE_MASKS[SHAPE_NAMES[shape_idx]]
        region = img[:, top:top + SPRITE, left:left + SPRITE]
        region[:, mask] = PALETTE[hue_idx][:, None]
    return img


def render(schema: FactorSchema, assignment: dict) -> np.ndarray:
    """Rasterize an assignment into a u8 [3, H, W] image, deterministically."""
    missing = [n for n, _ in schema.properties if n not in assignment]
    if missing:
        raise WorldError(f"assignment missing properties {missing}")
    for name, size in schema.properties:
        v = assignment[name]
        if not 0 <= v < size:
            raise WorldError(f"{name}={v} outside domain [0, {size})")
    if schema.world_id == "grid_shapes":
        return _render_grid_shapes(assignment)
    if schema.world_id == "multi_objects":
        return _render_multi_objects(assignment)
    raise WorldError(f"no renderer for world {schema.world_id!r}")


def objects_to_assignment(objects: list) -> dict:
    """Build a multi_objects assignment from (cell_idx, shape_idx, hue_idx) triples."""
    assignment = {f"cell_{i}": 0 for i in range(9)}
    seen = set()
    for cell_idx, shape_idx, hue_idx in objects:
        if cell_idx in seen:
            raise WorldError(f"two objects anchored at cell {cell_idx}")
        seen.add(cell_idx)
        assignment[f"cell_{cell_idx}"] = pack_cell(shape_idx, hue_idx)
    return assignment


def property_region(schema: FactorSchema, assignment: dict, prop: str) -> np.ndarray:
    """Boolean [H, W] mask of pixels this property controls in this scene."""
    hw = (IMAGE_SIZE, IMAGE_SIZE)
    if schema.world_id == "grid_shapes":
        top, left = _sprite_box_grid(assignment)
        sprite = np.zeros(hw, dtype=bool)
        sprite[top:top + SPRITE, left:left + SPRITE] = SHAPE_MASKS[SHAPE_NAMES[assignment["shape"]]]
        if prop in ("object_hue", "orientation", "shape"):
            return sprite
        region = np.zeros(hw, dtype=bool)
        if prop == "wall_hue":
            region[:IMAGE_SIZE // 2, :] = True
        elif prop == "floor_hue":
            region[IMAGE_SIZE // 2:, :] = True
        else:
            raise WorldError(f"unknown property {prop!r}")
        return region & ~sprite
    if schema.world_id == "multi_objects":
        idx = int(prop.split("_")[1])
        top, left = _cell_box(idx)
        region = np.zeros(hw, dtype=bool)
        region[top:top + SPRITE, left:left + SPRITE] = True
        return region
    raise WorldError(f"no regions for world {schema.world_id!r}")


def changed_region(schema: FactorSchema, before: dict, after: dict) -> np.ndarray:
    """Union of regions owned by every property whose value differs."""
    region = np.zeros((IMAGE_SIZE, IMAGE_SIZE), dtype=bool)
    for name, _ in schema.properties:
        if before[name] != after[name]:
            region |= property_region(schema, before, name)
            region |= property_region(schema, after, name)
    return region


# ---- relations ----------------------------------------------------------------


@dataclass(frozen=True)
class PrimitiveRelation:
    """Move one property from a source domain value to a target value."""

    prop: str
    source: int
    target: int

    def __post_init__(self):
        if self.source == self.target:
            raise WorldError("relation source equals target")

    def properties(self):
        return (self.prop,)

    def apply(self, assignment: dict) -> dict:
        if assignment[self.prop] != self.source:
            raise WorldError(
                f"scene has {self.prop}={assignment[self.prop]}, relation expects {self.source}")
        out = dict(assignment)
        out[self.prop] = self.target
        return out

    def describe(self, schema: FactorSchema) -> str:
        if schema.world_id == "multi_objects":
            cell = int(self.prop.split("_")[1])
            if self.source == 0:
                shape_idx, hue_idx = unpack_cell(self.target)
                return f"add {SHAPE_NAMES[shape_idx]}/hue{hue_idx} at cell {cell}"
            shape_idx, hue_idx = unpack_cell(self.source)
            return f"delete {SHAPE_NAMES[shape_idx]}/hue{hue_idx} from cell {cell}"
        return f"{self.prop}: {self.source} -> {self.target}"

    def to_json(self) -> dict:
        return {"kind": "primitive", "prop": self.prop,
                "source": self.source, "target": self.target}


@dataclass(frozen=True)
class CompositeRelation:
    """Unordered composition of primitives over pairwise-distinct properties."""

    parts: tuple

    def __post_init__(self):
        if len(self.parts) < 2:
            raise WorldError("composite relation needs k >= 2 primitives")
        props = [p.prop for p in self.parts]
        if len(set(props)) != len(props):
            raise WorldError("composite primitives must touch distinct properties")

    @property
    def k(self) -> int:
        return len(self.parts)

    def properties(self):
        return tuple(p.prop for p in self.parts)

    def apply(self, assignment: dict) -> dict:
        out = assignment
        for p in self.parts:
            out = p.apply(out)
        return out

    def describe(self, schema: FactorSchema) -> str:
        return " + ".join(p.describe(schema) for p in self.parts)

    def to_json(self) -> dict:
        return {"kind": "composite", "parts": [p.to_json() for p in self.parts]}


def relation_from_json(obj: dict):
    if obj["kind"] == "primitive":
        return PrimitiveRelation(obj["prop"], obj["source"], obj["target"])
    if obj["kind"] == "composite":
        return CompositeRelation(tuple(relation_from_json(p) for p in obj["parts"]))
    raise WorldError(f"unknown relation kind {obj.get('kind')!r}")
