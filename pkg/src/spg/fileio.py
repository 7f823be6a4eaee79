"""Binary and JSON serialization.

Two binary formats, both little-endian:

Cloud file ("SPGC"):
    magic "SPGC" | u16 version | u16 prop_count | u8 has_confidence |
    u64 point_count | u64 semantic_boundary | point records, each
    (3 + prop_count [+1]) float32. semantic_boundary is the index where
    generated points start (== point_count when there are none).

Named-tensor container (checkpoints "SPGP", target files "SPGT"):
    magic | u16 version | u32 entry_count | entries. Each entry:
    u16 name_len | name utf-8 | u8 dtype code | u8 ndim | ndim x u32 dims |
    raw values. Dtype codes: 0 float32, 1 float64, 2 int64, 3 uint8.
    Checkpoints default to float32 values; float64 is used where training
    must resume bit-exactly.

Scenes and reports are JSON, schema-validated on load/write.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, Optional

import jsonschema
import numpy as np

from .errors import DataError
from .generation import AugmentedCloud
from .geometry import OrientedBox, PointCloud, Scene
from .supervision import SupervisionTargets
from .voxelgrid import GenerationArea, GridSpec

CLOUD_MAGIC = b"SPGC"
CHECKPOINT_MAGIC = b"SPGP"
TARGETS_MAGIC = b"SPGT"
FORMAT_VERSION = 1

_CLOUD_HEADER = struct.Struct("<4sHHBQQ")
_DTYPE_CODES = {0: np.dtype("<f4"), 1: np.dtype("<f8"), 2: np.dtype("<i8"), 3: np.dtype("u1")}
_DTYPE_TO_CODE = {
    np.dtype(np.float32): 0,
    np.dtype(np.float64): 1,
    np.dtype(np.int64): 2,
    np.dtype(np.uint8): 3,
}


# ---------------------------------------------------------------------------
# cloud files
# ---------------------------------------------------------------------------


@dataclass
class CloudData:
    """Decoded cloud file: float64 views of the stored float32 values."""

    xyz: np.ndarray
    props: np.ndarray
    confidence: Optional[np.ndarray]
    semantic_boundary: int

    def to_point_cloud(self) -> PointCloud:
        return PointCloud(self.xyz, self.props)

    @property
    def has_confidence(self) -> bool:
        return self.confidence is not None


def write_cloud_file(
    path: Path | str,
    xyz: np.ndarray,
    props: np.ndarray,
    confidence: Optional[np.ndarray] = None,
    semantic_boundary: Optional[int] = None,
) -> None:
    xyz = np.asarray(xyz, dtype=np.float64).reshape(-1, 3)
    props = np.asarray(props, dtype=np.float64)
    if props.ndim != 2:
        props = props.reshape(len(xyz), -1) if props.size else props.reshape(len(xyz), 0)
    n = len(xyz)
    boundary = n if semantic_boundary is None else int(semantic_boundary)
    if not 0 <= boundary <= n:
        raise DataError(f"semantic_boundary {boundary} outside [0, {n}]")
    columns = [xyz, props]
    if confidence is not None:
        confidence = np.asarray(confidence, dtype=np.float64).reshape(n, 1)
        columns.append(confidence)
    records = np.concatenate(columns, axis=1).astype("<f4") if n else np.zeros(
        (0, 3 + props.shape[1] + (confidence is not None)), dtype="<f4"
    )
    header = _CLOUD_HEADER.pack(
        CLOUD_MAGIC,
        FORMAT_VERSION,
        props.shape[1],
        1 if confidence is not None else 0,
        n,
        boundary,
    )
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(records.tobytes())


def write_augmented_cloud(path: Path | str, aug: AugmentedCloud) -> None:
    write_cloud_file(
        path, aug.xyz, aug.props, confidence=aug.confidence, semantic_boundary=aug.semantic_boundary
    )


def read_cloud_file(path: Path | str) -> CloudData:
    try:
        raw = Path(path).read_bytes()
    except OSError as exc:
        raise DataError(f"cannot read cloud file {path}: {exc}") from exc
    if len(raw) < _CLOUD_HEADER.size:
        raise DataError(f"cloud file {path} truncated header")
    magic, version, prop_count, has_conf, count, boundary = _CLOUD_HEADER.unpack_from(raw)
    if magic != CLOUD_MAGIC:
        raise DataError(f"{path} is not a cloud file (magic {magic!r})")
    if version != FORMAT_VERSION:
        raise DataError(f"{path}: unsupported cloud format version {version}")
    if boundary > count:
        raise DataError(f"{path}: semantic_boundary {boundary} > point_count {count}")
    width = 3 + prop_count + (1 if has_conf else 0)
    expected = _CLOUD_HEADER.size + 4 * width * count
    if len(raw) != expected:
        raise DataError(f"{path}: expected {expected} bytes, found {len(raw)}")
    table = np.frombuffer(raw, dtype="<f4", offset=_CLOUD_HEADER.size).reshape(count, width)
    table = table.astype(np.float64)
    confidence = table[:, 3 + prop_count] if has_conf else None
    return CloudData(
        xyz=table[:, :3],
        props=table[:, 3 : 3 + prop_count],
        confidence=confidence,
        semantic_boundary=int(boundary),
    )


# ---------------------------------------------------------------------------
# named-tensor containers
# ---------------------------------------------------------------------------


def write_named_tensors(path: Path | str, arrays: Dict[str, np.ndarray], magic: bytes) -> None:
    if len(magic) != 4:
        raise ValueError("magic must be 4 bytes")
    parts = [struct.pack("<4sHI", magic, FORMAT_VERSION, len(arrays))]
    for name, array in arrays.items():
        array = np.ascontiguousarray(array)
        if array.dtype not in _DTYPE_TO_CODE:
            raise ValueError(f"unsupported dtype {array.dtype} for entry {name!r}")
        encoded = name.encode("utf-8")
        parts.append(struct.pack("<H", len(encoded)))
        parts.append(encoded)
        parts.append(struct.pack("<BB", _DTYPE_TO_CODE[array.dtype], array.ndim))
        parts.append(struct.pack(f"<{array.ndim}I", *array.shape))
        parts.append(array.astype(array.dtype.newbyteorder("<")).tobytes())
    Path(path).write_bytes(b"".join(parts))


def read_named_tensors(path: Path | str, magic: bytes) -> Dict[str, np.ndarray]:
    try:
        raw = Path(path).read_bytes()
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc
    if len(raw) < 10:
        raise DataError(f"{path}: truncated header")
    file_magic, version, count = struct.unpack_from("<4sHI", raw)
    if file_magic != magic:
        raise DataError(f"{path}: expected magic {magic!r}, found {file_magic!r}")
    if version != FORMAT_VERSION:
        raise DataError(f"{path}: unsupported format version {version}")
    offset = 10
    arrays: Dict[str, np.ndarray] = {}
    try:
        for _ in range(count):
            (name_len,) = struct.unpack_from("<H", raw, offset)
            offset += 2
            name = raw[offset : offset + name_len].decode("utf-8")
            offset += name_len
            code, ndim = struct.unpack_from("<BB", raw, offset)
            offset += 2
            dims = struct.unpack_from(f"<{ndim}I", raw, offset)
            offset += 4 * ndim
            dtype = _DTYPE_CODES[code]
            size = int(np.prod(dims)) if ndim else 1
            payload = np.frombuffer(raw, dtype=dtype, count=size, offset=offset)
            offset += size * dtype.itemsize
            arrays[name] = payload.reshape(dims).copy()
    except (struct.error, KeyError, ValueError) as exc:
        raise DataError(f"{path}: corrupt tensor container: {exc}") from exc
    if offset != len(raw):
        raise DataError(f"{path}: {len(raw) - offset} trailing bytes")
    return arrays


def save_checkpoint(
    path: Path | str, arrays: Dict[str, np.ndarray], float_dtype: str = "f32"
) -> None:
    """Write named parameter arrays; f64 preserves exact training state."""
    if float_dtype not in ("f32", "f64"):
        raise ValueError(f"float_dtype must be 'f32' or 'f64', got {float_dtype}")
    target = np.float32 if float_dtype == "f32" else np.float64
    converted = {
        name: (a.astype(target) if np.issubdtype(a.dtype, np.floating) else a)
        for name, a in arrays.items()
    }
    write_named_tensors(path, converted, CHECKPOINT_MAGIC)


def load_checkpoint(path: Path | str) -> Dict[str, np.ndarray]:
    return read_named_tensors(path, CHECKPOINT_MAGIC)


# ---------------------------------------------------------------------------
# supervision target files
# ---------------------------------------------------------------------------

_AREA_MODES = {"3d": 0, "2d": 1}
_AREA_MODES_BACK = {v: k for k, v in _AREA_MODES.items()}


def save_targets(path: Path | str, targets: SupervisionTargets) -> None:
    arrays = {
        "grid_origin": np.asarray(targets.spec.origin, dtype=np.float64),
        "grid_voxel_size": np.asarray(targets.spec.voxel_size, dtype=np.float64),
        "grid_dims": np.asarray(targets.spec.dims, dtype=np.int64),
        "area_radius": np.asarray([targets.area.radius], dtype=np.int64),
        "area_mode": np.asarray([_AREA_MODES[targets.area.mode]], dtype=np.uint8),
        "voxels": targets.voxels.astype(np.int64),
        "label": targets.label.astype(np.uint8),
        "category": targets.category.astype(np.uint8),
        "hidden": targets.hidden.astype(np.uint8),
        "target_valid": targets.targets.valid.astype(np.uint8),
        "target_centroid": targets.targets.centroid.astype(np.float64),
        "target_props": targets.targets.mean_props.astype(np.float64),
        "hidden_voxels": targets.hidden_voxels.astype(np.int64),
        "post_xyz": targets.post_hide_cloud.xyz.astype(np.float64),
        "post_props": targets.post_hide_cloud.props.astype(np.float64),
    }
    write_named_tensors(path, arrays, TARGETS_MAGIC)


@dataclass
class TargetsFile:
    """Decoded target file; the pre-hiding grid is not stored (derivable)."""

    spec: GridSpec
    area: GenerationArea
    voxels: np.ndarray
    label: np.ndarray
    category: np.ndarray
    hidden: np.ndarray
    target_valid: np.ndarray
    target_centroid: np.ndarray
    target_props: np.ndarray
    hidden_voxels: np.ndarray
    post_hide_cloud: PointCloud


def load_targets(path: Path | str) -> TargetsFile:
    arrays = read_named_tensors(path, TARGETS_MAGIC)
    try:
        spec = GridSpec(
            origin=tuple(arrays["grid_origin"]),
            voxel_size=tuple(arrays["grid_voxel_size"]),
            dims=tuple(int(d) for d in arrays["grid_dims"]),
        )
        area = GenerationArea(
            indices=arrays["voxels"].astype(np.int64),
            radius=int(arrays["area_radius"][0]),
            mode=_AREA_MODES_BACK[int(arrays["area_mode"][0])],
        )
        return TargetsFile(
            spec=spec,
            area=area,
            voxels=arrays["voxels"],
            label=arrays["label"],
            category=arrays["category"],
            hidden=arrays["hidden"].astype(bool),
            target_valid=arrays["target_valid"].astype(bool),
            target_centroid=arrays["target_centroid"],
            target_props=arrays["target_props"],
            hidden_voxels=arrays["hidden_voxels"],
            post_hide_cloud=PointCloud(arrays["post_xyz"], arrays["post_props"]),
        )
    except KeyError as exc:
        raise DataError(f"{path}: missing entry {exc}") from exc


# ---------------------------------------------------------------------------
# scene JSON
# ---------------------------------------------------------------------------

_BOX_FIELDS = ["cx", "cy", "cz", "length", "width", "height", "yaw", "class_id"]

SCENE_SCHEMA = {
    "type": "object",
    "required": ["cloud", "boxes"],
    "additionalProperties": False,
    "properties": {
        "cloud": {"type": "string"},
        "boxes": {
            "type": "array",
            "items": {
                "type": "object",
                "required": _BOX_FIELDS[:7],
                "additionalProperties": False,
                "properties": {
                    **{f: {"type": "number"} for f in _BOX_FIELDS[:7]},
                    "class_id": {"type": "integer"},
                },
            },
        },
        "meta": {"type": "object", "additionalProperties": {"type": "string"}},
    },
}

REPORT_SCHEMA = {
    "type": "object",
    "required": ["classifier", "num_scenes", "num_pairs"],
    "additionalProperties": False,
    "properties": {
        "classifier": {
            "type": "object",
            "required": ["accuracy", "precision", "recall", "ap", "n_recall"],
            "additionalProperties": False,
            "properties": {
                "accuracy": {"type": "number"},
                "precision": {"type": "number"},
                "recall": {"type": "number"},
                "ap": {"type": "number"},
                "n_recall": {"type": "integer"},
                "num_pairs": {"type": "integer"},
                "num_positive_labels": {"type": "integer"},
                "num_positive_predictions": {"type": "integer"},
                "degenerate": {"type": "boolean"},
                "degenerate_reasons": {"type": "array", "items": {"type": "string"}},
            },
        },
        "points_per_object_by_range": {
            "type": "object",
            "required": ["edges", "mean_points", "box_counts"],
            "additionalProperties": False,
            "properties": {
                "edges": {"type": "array", "items": {"type": "number"}},
                "mean_points": {"type": "array", "items": {"type": ["number", "null"]}},
                "box_counts": {"type": "array", "items": {"type": "integer"}},
            },
        },
        "num_scenes": {"type": "integer"},
        "num_pairs": {"type": "integer"},
        "ablation": {"type": "array", "items": {"type": "string"}},
    },
}


def save_scene(scene_path: Path | str, scene: Scene, cloud_filename: str) -> None:
    """Write the scene JSON plus its cloud file next to it."""
    scene_path = Path(scene_path)
    write_cloud_file(scene_path.parent / cloud_filename, scene.cloud.xyz, scene.cloud.props)
    doc = {
        "cloud": cloud_filename,
        "boxes": [
            {
                "cx": b.cx, "cy": b.cy, "cz": b.cz,
                "length": b.length, "width": b.width, "height": b.height,
                "yaw": b.yaw, "class_id": b.class_id,
            }
            for b in scene.boxes
        ],
        "meta": {str(k): str(v) for k, v in scene.meta.items()},
    }
    jsonschema.validate(doc, SCENE_SCHEMA)
    with open(scene_path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_scene(scene_path: Path | str) -> Scene:
    scene_path = Path(scene_path)
    try:
        doc = json.loads(scene_path.read_text(encoding="utf-8"))
    except OSError as exc:
        raise DataError(f"cannot read scene {scene_path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise DataError(f"{scene_path}: invalid JSON: {exc}") from exc
    try:
        jsonschema.validate(doc, SCENE_SCHEMA)
    except jsonschema.ValidationError as exc:
        raise DataError(f"{scene_path}: schema violation: {exc.message}") from exc
    cloud = read_cloud_file(scene_path.parent / doc["cloud"]).to_point_cloud()
    boxes = tuple(
        OrientedBox(
            cx=b["cx"], cy=b["cy"], cz=b["cz"],
            length=b["length"], width=b["width"], height=b["height"],
            yaw=b["yaw"], class_id=int(b.get("class_id", 0)),
        )
        for b in doc["boxes"]
    )
    return Scene(cloud=cloud, boxes=boxes, meta=dict(doc.get("meta", {})))


def validate_report(doc: dict) -> None:
    try:
        jsonschema.validate(doc, REPORT_SCHEMA)
    except jsonschema.ValidationError as exc:
        raise DataError(f"report schema violation: {exc.message}") from exc


# ---------------------------------------------------------------------------
# PLY export
# ---------------------------------------------------------------------------


def write_ply(path: Path | str, xyz: np.ndarray, colors: np.ndarray) -> None:
    """ASCII PLY with per-vertex uchar colors, for visual inspection."""
    xyz = np.asarray(xyz, dtype=np.float64).reshape(-1, 3)
    colors = np.asarray(colors, dtype=np.uint8).reshape(-1, 3)
    if len(colors) != len(xyz):
        raise ValueError("colors must match points")
    lines = [
        "ply",
        "format ascii 1.0",
        f"element vertex {len(xyz)}",
        "property float x",
        "property float y",
        "property float z",
        "property uchar red",
        "property uchar green",
        "property uchar blue",
        "end_header",
    ]
    for (x, y, z), (r, g, b) in zip(xyz, colors):
        lines.append(f"{x:.6f} {y:.6f} {z:.6f} {r} {g} {b}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def confidence_colors(confidence: np.ndarray, semantic_boundary: int) -> np.ndarray:
    """Grey for original points, red scaled by confidence for generated ones."""
    n = len(confidence)
    colors = np.full((n, 3), 150, dtype=np.uint8)
    sem = np.arange(n) >= semantic_boundary
    strength = (80 + 175 * np.clip(confidence, 0.0, 1.0)).astype(np.uint8)
    colors[sem] = 0
    colors[sem, 0] = strength[sem]
    return colors
