"""Dataset directories: manifest.json + tasks.jsonl + IMPT1 image blobs."""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .blob import read_blob, write_blob
from .rng import RngStream
from .tasks import (
    DEFAULT_SHOTS,
    AnalogyTask,
    FactorScene,
    make_split,
    sample_composite_task,
    sample_primitive_task,
)
from .worlds import FactorSchema, relation_from_json, schema_by_id

FORMAT_VERSION = 1

# per-split bases for deriving independent task rng streams
_SPLIT_BASE = {"train": 0, "primitive_extrapolation": 1 << 24}
_COMPOSITE_BASE = 1 << 25
_SPLIT_RNG_TAG = (1 << 30) + 7


class DatasetError(ValueError):
    pass


@dataclass
class TaskRecord:
    task_id: int
    split: str
    relation: object
    context_ids: list  # [(a_id, b_id)]
    query_id: int
    target_id: int
    assignments: list  # JSON-ready assignments, same order as image ids


class Dataset:
    """Read view over a generated dataset directory."""

    def __init__(self, root: Path, manifest: dict, tasks: list):
        self.root = Path(root)
        self.manifest = manifest
        self.tasks = tasks
        self.schema = schema_by_id(manifest["world"])
        self._cache: dict = {}

    def by_split(self, split: str) -> list:
        return [t for t in self.tasks if t.split == split]

    def splits(self) -> list:
        return sorted({t.split for t in self.tasks})

    def image(self, image_id: int) -> np.ndarray:
        if image_id not in self._cache:
            self._cache[image_id] = read_blob(self.root / "images" / f"{image_id:08d}.impt")
        return self._cache[image_id]

    def task_images(self, rec: TaskRecord) -> AnalogyTask:
        context = [
            (FactorScene(a_asn, self.image(a)), FactorScene(b_asn, self.image(b)))
            for (a, b), (a_asn, b_asn) in zip(rec.context_ids, rec.assignments[:-1])
        ]
        query = FactorScene(rec.assignments[-1][0], self.image(rec.query_id))
        target = FactorScene(rec.assignments[-1][1], self.image(rec.target_id))
        return AnalogyTask(context, query, target, rec.relation, rec.split)

    @property
    def content_hash(self) -> str:
        return self.manifest["content_hash"]


def _task_to_row(task: AnalogyTask, task_id: int, next_image_id: int):
    """Flatten a task into a JSON row plus its image blobs."""
    images = []
    context_ids = []
    assignments = []
    for a, b in task.context:
        context_ids.append([next_image_id, next_image_id + 1])
        images.extend([a.image, b.image])
        assignments.append([a.assignment, b.assignment])
        next_image_id += 2
    query_id, target_id = next_image_id, next_image_id + 1
    images.extend([task.query.image, task.target.image])
    assignments.extend([[task.query.assignment, task.target.assignment]])
    next_image_id += 2
    row = {
        "id": task_id,
        "split": task.split_tag,
        "relation": task.relation.to_json(),
        "context": context_ids,
        "query": query_id,
        "target": target_id,
        "assignments": assignments,
    }
    return row, images, next_image_id


def generate(world: str, out_dir, seed: int, n_train: int = 10000,
             n_extrapolation: int = 1000, n_composite: int = None,
             composite_ks=(2, 3, 4), shots: int = None,
             holdout_fraction: float = 0.2) -> dict:
    """Generate a dataset directory; fully determined by (world, seed, counts)."""
    schema = schema_by_id(world)
    shots = shots if shots is not None else DEFAULT_SHOTS[world]
    if n_composite is None:
        n_composite = 1000 if world == "grid_shapes" else 200
    root_rng = RngStream(seed)
    split_pairs = make_split(schema, holdout_fraction, root_rng.child(_SPLIT_RNG_TAG))
    train_pairs = {p: v["train"] for p, v in split_pairs.items()}
    heldout_pairs = {p: v["heldout"] for p, v in split_pairs.items()}

    out = Path(out_dir)
    (out / "images").mkdir(parents=True, exist_ok=True)

    rows = []
    image_hasher = hashlib.sha256()
    next_image_id = 0
    task_id = 0

    def emit(task: AnalogyTask):
        nonlocal next_image_id, task_id
        row, images, next_image_id = _task_to_row(task, task_id, next_image_id)
        for offset, img in enumerate(images):
            image_id = next_image_id - len(images) + offset
            path = out / "images" / f"{image_id:08d}.impt"
            write_blob(path, img)
            image_hasher.update(path.read_bytes())
        rows.append(row)
        task_id += 1

    # per-task child streams make generation order-independent
    for i in range(n_train):
        emit(sample_primitive_task(schema, root_rng.child(_SPLIT_BASE["train"] + i),
                                   shots, train_pairs, "train"))
    for i in range(n_extrapolation):
        emit(sample_primitive_task(
            schema, root_rng.child(_SPLIT_BASE["primitive_extrapolation"] + i),
            shots, heldout_pairs, "primitive_extrapolation"))
    max_k = min(len(schema.relation_properties), 4)
    requested = [k for k in composite_ks if 2 <= k <= max_k]
    for k in requested:
        for i in range(n_composite):
            emit(sample_composite_task(
                schema, root_rng.child(_COMPOSITE_BASE + (k << 20) + i),
                k, shots, train_pairs))

    tasks_text = "\n".join(json.dumps(r, sort_keys=True) for r in rows) + "\n"
    (out / "tasks.jsonl").write_text(tasks_text, encoding="utf-8")

    hasher = hashlib.sha256()
    hasher.update(tasks_text.encode("utf-8"))
    hasher.update(image_hasher.digest())

    counts = {"train": n_train, "primitive_extrapolation": n_extrapolation}
    for k in requested:
        counts[f"composite_{k}"] = n_composite
    manifest = {
        "format_version": FORMAT_VERSION,
        "world": world,
        "schema": schema.to_json(),
        "seed": seed,
        "shots": shots,
        "holdout_fraction": holdout_fraction,
        "counts": counts,
        "split_pairs": split_pairs,
        "image_count": next_image_id,
        "content_hash": hasher.hexdigest(),
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True),
                                       encoding="utf-8")
    return manifest


def compute_content_hash(root) -> str:
    root = Path(root)
    tasks_text = (root / "tasks.jsonl").read_bytes()
    image_hasher = hashlib.sha256()
    n = json.loads((root / "manifest.json").read_text())["image_count"]
    for i in range(n):
        image_hasher.update((root / "images" / f"{i:08d}.impt").read_bytes())
    hasher = hashlib.sha256()
    hasher.update(tasks_text)
    hasher.update(image_hasher.digest())
    return hasher.hexdigest()


def load(root, verify_hash: bool = False) -> Dataset:
    root = Path(root)
    manifest_path = root / "manifest.json"
    if not manifest_path.exists():
        raise DatasetError(f"no manifest.json under {root}")
    manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
    if manifest.get("format_version") != FORMAT_VERSION:
        raise DatasetError(
            f"dataset format version {manifest.get('format_version')} != {FORMAT_VERSION}")
    if verify_hash and compute_content_hash(root) != manifest["content_hash"]:
        raise DatasetError(f"dataset content hash mismatch under {root}")
    tasks = []
    with open(root / "tasks.jsonl", encoding="utf-8") as fh:
        for line in fh:
            row = json.loads(line)
            tasks.append(TaskRecord(
                task_id=row["id"],
                split=row["split"],
                relation=relation_from_json(row["relation"]),
                context_ids=[tuple(pair) for pair in row["context"]],
                query_id=row["query"],
                target_id=row["target"],
                assignments=row["assignments"],
            ))
    return Dataset(root, manifest, tasks)
