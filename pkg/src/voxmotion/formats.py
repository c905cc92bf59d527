"""On-disk formats.

UIM1  motion, JSON text
UIV1  semantic volume, binary
UHF1  heatmap field dump, binary
UCK1  denoiser checkpoint, binary
plus JSON sample sidecars and ASCII PLY export.

All binary formats are little-endian.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .errors import FormatError, InvariantError
from .geometry import MotionSequence, SkeletonTopology, toy_skeleton
from .heatmap import HeatmapField, Mode
from .uiv import SemanticVolume, VolumeSpec

_HEADER = struct.Struct("<4s4I3f3f")


def _f32_to_float(v) -> float:
    """Recover the shortest decimal a float32 field was written from (0.15 stays 0.15)."""
    return float(str(np.float32(v)))


# -- UIM1 ---------------------------------------------------------------

def motion_to_dict(motion: MotionSequence, topo: SkeletonTopology) -> dict:
    motion.check_topology(topo)
    return {
        "format": "UIM1",
        "version": 1,
        "fps": motion.fps,
        "K": motion.K,
        "T": motion.T,
        "joint_names": list(topo.joint_names),
        "parents": [p for p in topo.parent],
        "named_indices": dict(topo.named_indices),
        "capsule_radii": list(topo.capsule_radii),
        "positions": motion.positions.tolist(),
    }


def write_motion(path, motion: MotionSequence, topo: SkeletonTopology) -> None:
    Path(path).write_text(json.dumps(motion_to_dict(motion, topo)))


def read_motion(path) -> tuple[MotionSequence, SkeletonTopology]:
    try:
        doc = json.loads(Path(path).read_text())
    except (OSError, UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"{path}: not a UIM1 document ({exc})") from exc
    if not isinstance(doc, dict) or doc.get("format") != "UIM1":
        raise FormatError(f"{path}: missing UIM1 marker")
    try:
        K, T = int(doc["K"]), int(doc["T"])
        pos = np.asarray(doc["positions"], dtype=np.float64)
        radii = doc.get("capsule_radii") or [0.05] * (K - 1)
        topo = SkeletonTopology(
            joint_names=tuple(doc["joint_names"]),
            parent=tuple(None if p is None else int(p) for p in doc["parents"]),
            named_indices={k: int(v) for k, v in doc["named_indices"].items()},
            capsule_radii=tuple(float(r) for r in radii),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"{path}: malformed UIM1 fields ({exc})") from exc
    if pos.shape != (T, K, 3):
        raise FormatError(f"{path}: positions shape {pos.shape} != ({T}, {K}, 3)")
    motion = MotionSequence(pos, fps=float(doc.get("fps", 10.0)))
    return motion, topo


# -- UIV1 ---------------------------------------------------------------

def _pack_header(magic: bytes, T: int, spec: VolumeSpec) -> bytes:
    return _HEADER.pack(magic, T, *spec.dims, *spec.pitch, *spec.origin)


def _unpack_header(buf: bytes, magic: bytes, path) -> tuple[int, VolumeSpec, int]:
    if len(buf) < _HEADER.size:
        raise FormatError(f"{path}: truncated header")
    m, T, H, W, D, *rest = _HEADER.unpack_from(buf)
    if m != magic:
        raise FormatError(f"{path}: bad magic {m!r}, expected {magic!r}")
    pitch = tuple(_f32_to_float(v) for v in rest[:3])
    origin = tuple(_f32_to_float(v) for v in rest[3:])
    try:
        spec = VolumeSpec((H, W, D), pitch, origin)
    except InvariantError as exc:
        raise FormatError(f"{path}: invalid volume header ({exc})") from exc
    return T, spec, _HEADER.size


def volume_bytes(vol: SemanticVolume) -> bytes:
    return _pack_header(b"UIV1", vol.T, vol.spec) + np.ascontiguousarray(vol.codes, dtype=np.uint8).tobytes()


def write_volume(path, vol: SemanticVolume) -> None:
    Path(path).write_bytes(volume_bytes(vol))


def read_volume(path) -> SemanticVolume:
    buf = Path(path).read_bytes()
    T, spec, off = _unpack_header(buf, b"UIV1", path)
    n = T * spec.n_voxels
    if len(buf) != off + n:
        raise FormatError(f"{path}: expected {n} label bytes, found {len(buf) - off}")
    codes = np.frombuffer(buf, dtype=np.uint8, offset=off).reshape(T, *spec.dims)
    if codes.size and codes.max() > 3:
        raise FormatError(f"{path}: label byte {codes.max()} > 3")
    return SemanticVolume(spec, codes.copy())


# -- UHF1 ---------------------------------------------------------------

def write_field(path, field: HeatmapField) -> None:
    head = _pack_header(b"UHF1", field.T, field.spec) + struct.pack("<IB", field.K, int(field.mode))
    Path(path).write_bytes(head + np.ascontiguousarray(field.values, dtype="<f4").tobytes())


def read_field(path) -> HeatmapField:
    buf = Path(path).read_bytes()
    T, spec, off = _unpack_header(buf, b"UHF1", path)
    if len(buf) < off + 5:
        raise FormatError(f"{path}: truncated UHF1 header")
    K, mode = struct.unpack_from("<IB", buf, off)
    off += 5
    if mode not in (0, 1):
        raise FormatError(f"{path}: unknown mode byte {mode}")
    n = T * K * spec.n_voxels
    if len(buf) != off + 4 * n:
        raise FormatError(f"{path}: payload size mismatch")
    values = np.frombuffer(buf, dtype="<f4", offset=off).reshape(T, K, *spec.dims).astype(np.float64)
    if mode == Mode.TARGET:
        # f32 storage perturbs channel sums by ~1e-7; restore exact normalization
        values = values / values.sum(axis=(-3, -2, -1), keepdims=True)
    return HeatmapField(spec, values, Mode(mode))


# -- UCK1 ---------------------------------------------------------------

def write_checkpoint(path, config: dict, tensors: dict) -> None:
    """Config block (JSON) followed by named float32 tensors."""
    cfg = json.dumps(config, sort_keys=True).encode()
    parts = [b"UCK1", struct.pack("<I", len(cfg)), cfg, struct.pack("<I", len(tensors))]
    for name in sorted(tensors):
        arr = np.ascontiguousarray(tensors[name], dtype="<f4")
        nb = name.encode()
        parts.append(struct.pack("<H", len(nb)) + nb + struct.pack("<B", arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(arr.tobytes())
    Path(path).write_bytes(b"".join(parts))


def read_checkpoint(path) -> tuple[dict, dict]:
    buf = Path(path).read_bytes()
    try:
        if buf[:4] != b"UCK1":
            raise FormatError(f"{path}: bad magic {buf[:4]!r}")
        off = 4
        (n,) = struct.unpack_from("<I", buf, off)
        off += 4
        config = json.loads(buf[off : off + n].decode())
        off += n
        (count,) = struct.unpack_from("<I", buf, off)
        off += 4
        tensors = {}
        for _ in range(count):
            (ln,) = struct.unpack_from("<H", buf, off)
            off += 2
            name = buf[off : off + ln].decode()
            off += ln
            (ndim,) = struct.unpack_from("<B", buf, off)
            off += 1
            shape = struct.unpack_from(f"<{ndim}I", buf, off)
            off += 4 * ndim
            size = int(np.prod(shape)) if ndim else 1
            arr = np.frombuffer(buf, dtype="<f4", count=size, offset=off).reshape(shape)
            off += 4 * size
            tensors[name] = arr.astype(np.float64)
    except (struct.error, ValueError, UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"{path}: malformed checkpoint ({exc})") from exc
    if off != len(buf):
        raise FormatError(f"{path}: trailing bytes in checkpoint")
    return config, tensors


# -- sidecars -------------------------------------------------------------

def write_sidecar(path, task_name: str, seed: int, goal, contact_labels, object_points=None) -> None:
    doc = {
        "task_id": task_name,
        "seed": int(seed),
        "goal": None if goal is None else [float(v) for v in goal],
        "contact_labels": np.asarray(contact_labels, dtype=bool).tolist(),
        "object_points": None if object_points is None else np.asarray(object_points).tolist(),
    }
    Path(path).write_text(json.dumps(doc))


def read_sidecar(path) -> dict:
    try:
        doc = json.loads(Path(path).read_text())
        doc["task_id"]
        doc["seed"]
    except (OSError, json.JSONDecodeError, KeyError, TypeError) as exc:
        raise FormatError(f"{path}: malformed sidecar ({exc})") from exc
    if doc.get("goal") is not None:
        doc["goal"] = np.asarray(doc["goal"], dtype=np.float64)
    doc["contact_labels"] = np.asarray(doc.get("contact_labels", []), dtype=bool)
    if doc.get("object_points") is not None:
        doc["object_points"] = np.asarray(doc["object_points"], dtype=np.float64).reshape(-1, 3)
    return doc


# -- PLY ------------------------------------------------------------------

CLASS_COLORS = {1: (230, 120, 40), 2: (40, 120, 230), 3: (150, 150, 150)}
JOINT_COLOR = (220, 30, 30)


def write_ply(path, points, colors) -> None:
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    cols = np.asarray(colors, dtype=int).reshape(-1, 3)
    lines = [
        "ply", "format ascii 1.0", f"element vertex {len(pts)}",
        "property float x", "property float y", "property float z",
        "property uchar red", "property uchar green", "property uchar blue", "end_header",
    ]
    lines += [f"{p[0]:.6f} {p[1]:.6f} {p[2]:.6f} {c[0]} {c[1]} {c[2]}" for p, c in zip(pts, cols)]
    Path(path).write_text("\n".join(lines) + "\n")


def read_ply_vertices(path) -> tuple[np.ndarray, np.ndarray]:
    text = Path(path).read_text().splitlines()
    try:
        end = text.index("end_header")
    except ValueError as exc:
        raise FormatError(f"{path}: no PLY header") from exc
    rows = np.array([[float(v) for v in line.split()] for line in text[end + 1 :] if line.strip()])
    rows = rows.reshape(-1, 6)
    return rows[:, :3], rows[:, 3:].astype(int)


def default_topology_for(K: int) -> SkeletonTopology:
    topo = toy_skeleton()
    if topo.K != K:
        raise FormatError(f"no default skeleton with {K} joints; pass a reference motion")
    return topo
