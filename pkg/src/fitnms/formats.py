"""JSON file formats for detections, groundtruth, corner grids and run configs.

Schemas live next to this module in ``schemas/``. Loading validates against
them and raises :class:`ParseError` (JSON syntax or schema) with a location.
"""

from __future__ import annotations

import json
from functools import lru_cache
from importlib import resources
from pathlib import Path
from typing import Any, NamedTuple, Optional, Sequence

import jsonschema
import numpy as np

from .evaluation import GroundTruth, GroundTruthSet, ScoredDetection
from .fitness import Detection
from .geometry import Box


class ParseError(ValueError):
    """Input file is not valid JSON or does not follow its schema."""


class DataError(ValueError):
    """Input files parse but are inconsistent with each other."""


class DetectionRecord(NamedTuple):
    det: Detection
    class_id: Optional[int] = None
    score: Optional[float] = None


@lru_cache(maxsize=None)
def schema(name: str) -> dict:
    text = resources.files("fitnms").joinpath("schemas", f"{name}.schema.json").read_text()
    return json.loads(text)


def _where(path) -> str:
    return "/" + "/".join(str(p) for p in path) if path else "<root>"


def load_json(path: str | Path, schema_name: str) -> Any:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ParseError(f"{path}: cannot read file: {exc.strerror}") from exc
    return parse_json(text, schema_name, source=str(path))


def parse_json(text: str, schema_name: str, source: str = "<input>") -> Any:
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"{source}: line {exc.lineno} column {exc.colno}: {exc.msg}") from exc
    validate(data, schema_name, source)
    return data


def validate(data: Any, schema_name: str, source: str = "<input>") -> None:
    validator = jsonschema.Draft202012Validator(schema(schema_name))
    errors = sorted(validator.iter_errors(data), key=lambda e: list(e.absolute_path))
    if errors:
        err = errors[0]
        raise ParseError(f"{source}: field {_where(err.absolute_path)}: {err.message}")


def _box(values, where: str) -> Box:
    try:
        return Box.from_array(values)
    except ValueError as exc:
        raise ParseError(f"{where}: {exc}") from exc


def detections_from_json(data: dict, source: str = "<input>") -> list[tuple[str, list[DetectionRecord]]]:
    images = []
    seen = set()
    for i, img in enumerate(data["images"]):
        if img["id"] in seen:
            raise ParseError(f"{source}: field /images/{i}/id: duplicate image id {img['id']!r}")
        seen.add(img["id"])
        records = []
        for j, d in enumerate(img["detections"]):
            where = f"{source}: field /images/{i}/detections/{j}"
            try:
                det = Detection(
                    box=_box(d["box"], where + "/box"),
                    class_probs=d["class_probs"],
                    fitness_probs=d.get("fitness_probs"),
                    joint_probs=d.get("joint_probs"),
                )
            except ValueError as exc:
                raise ParseError(f"{where}: {exc}") from exc
            records.append(DetectionRecord(det, d.get("class"), d.get("score")))
        images.append((img["id"], records))
    return images


def load_detections(path: str | Path) -> list[tuple[str, list[DetectionRecord]]]:
    return detections_from_json(load_json(path, "detections"), str(path))


def _floats(arr) -> list:
    return np.asarray(arr, dtype=float).tolist()


def detection_to_json(rec: DetectionRecord) -> dict:
    d = rec.det
    out = {
        "box": [d.box.cx, d.box.cy, d.box.w, d.box.h],
        "class_probs": _floats(d.class_probs),
        "fitness_probs": None if d.fitness_probs is None else _floats(d.fitness_probs),
        "joint_probs": None if d.joint_probs is None else _floats(d.joint_probs),
    }
    if rec.class_id is not None:
        out["class"] = int(rec.class_id)
    if rec.score is not None:
        out["score"] = float(rec.score)
    return out


def detections_to_json(images: Sequence[tuple[str, Sequence[DetectionRecord]]]) -> dict:
    return {"images": [{"id": i, "detections": [detection_to_json(r) for r in recs]} for i, recs in images]}


def scored_detections(images: Sequence[tuple[str, Sequence[DetectionRecord]]], source: str = "<input>") -> list[ScoredDetection]:
    """Flatten suppressed output into scored hits; every record needs class and score."""
    out = []
    for image_id, recs in images:
        for j, r in enumerate(recs):
            if r.class_id is None or r.score is None:
                raise ParseError(f"{source}: image {image_id!r} detection {j}: evaluation needs 'class' and 'score'")
            out.append(ScoredDetection(image_id, r.class_id, r.det.box, r.score))
    return out


def groundtruth_from_json(data: dict, source: str = "<input>") -> GroundTruthSet:
    images = {}
    for i, img in enumerate(data["images"]):
        if img["id"] in images:
            raise ParseError(f"{source}: field /images/{i}/id: duplicate image id {img['id']!r}")
        images[img["id"]] = [
            GroundTruth(inst["class"], _box(inst["box"], f"{source}: field /images/{i}/instances/{j}/box"))
            for j, inst in enumerate(img["instances"])
        ]
    return GroundTruthSet(images)


def load_groundtruth(path: str | Path) -> GroundTruthSet:
    return groundtruth_from_json(load_json(path, "groundtruth"), str(path))


def groundtruth_to_json(gts: GroundTruthSet) -> dict:
    return {
        "images": [
            {"id": i, "instances": [{"class": int(g.class_id), "box": [g.box.cx, g.box.cy, g.box.w, g.box.h]} for g in inst]}
            for i, inst in gts.images.items()
        ]
    }


def check_same_images(det_ids: Sequence[str], gt_ids: Sequence[str]) -> None:
    det_ids, gt_ids = set(det_ids), set(gt_ids)
    missing_gt = sorted(det_ids - gt_ids)
    missing_det = sorted(gt_ids - det_ids)
    if missing_gt or missing_det:
        parts = []
        if missing_gt:
            parts.append(f"image ids without groundtruth: {', '.join(missing_gt)}")
        if missing_det:
            parts.append(f"image ids without detections: {', '.join(missing_det)}")
        raise DataError("; ".join(parts))


def dump_json(data: Any) -> str:
    return json.dumps(data, indent=1, sort_keys=False) + "\n"
