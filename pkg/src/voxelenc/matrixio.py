"""On-disk formats and the core data carriers.

Binary matrices use the VEM1 container, a fixed little-endian layout chosen so
any language can read it back bit-exactly:

    bytes 0-3    ASCII magic "VEM1"
    byte  4      dtype code (0 = float32, 1 = float64)
    byte  5      rank, always 2
    bytes 6-7    reserved, must be zero
    bytes 8-15   rows as u64 little-endian
    bytes 16-23  cols as u64 little-endian
    payload      row-major values, little-endian

Event metadata travels as JSON next to a sibling .vem file holding the event
vectors by row, so the numeric payload stays compact while the metadata stays
human-inspectable.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import CorruptionError, FormatError, ShapeError, ValidationError

MAGIC = b"VEM1"
HEADER = struct.Struct("<4sBB2sQQ")  # magic, dtype, rank, reserved, rows, cols

_DTYPE_CODES = {np.dtype("<f4"): 0, np.dtype("<f8"): 1}
_CODE_DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<f8")}


def write_matrix(m, path):
    """Write a 2-D float32/float64 array to `path` in the VEM1 layout.

    Values are written exactly as stored; reading the file back yields a
    bit-identical array.
    """
    m = np.ascontiguousarray(m)
    if m.ndim != 2:
        raise ShapeError(f"VEM1 stores rank-2 matrices, got shape {m.shape}")
    code = _DTYPE_CODES.get(m.dtype.newbyteorder("<"))
    if code is None:
        raise ValidationError(f"unsupported dtype {m.dtype}; use float32 or float64")
    header = HEADER.pack(MAGIC, code, 2, b"\x00\x00", m.shape[0], m.shape[1])
    payload = m.astype(m.dtype.newbyteorder("<"), copy=False).tobytes(order="C")
    try:
        with open(path, "wb") as fh:
            fh.write(header)
            fh.write(payload)
    except OSError as exc:
        raise OSError(f"failed to write matrix to {path}: {exc}") from exc


def read_matrix(path, allow_nonfinite=False):
    """Read a VEM1 file back into a 2-D numpy array.

    NaN/Inf entries are rejected unless `allow_nonfinite` is set, in which
    case the caller is responsible for masking them out.
    """
    try:
        with open(path, "rb") as fh:
            raw = fh.read()
    except OSError as exc:
        raise OSError(f"failed to read matrix from {path}: {exc}") from exc

    if len(raw) < HEADER.size:
        raise FormatError(f"{path}: file shorter than the {HEADER.size}-byte header")
    magic, code, rank, reserved, rows, cols = HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}, expected {MAGIC!r}")
    if code not in _CODE_DTYPES:
        raise FormatError(f"{path}: unknown dtype code {code}")
    if rank != 2:
        raise FormatError(f"{path}: rank {rank} unsupported, expected 2")
    if reserved != b"\x00\x00":
        raise FormatError(f"{path}: reserved header bytes are nonzero")

    dtype = _CODE_DTYPES[code]
    expected = rows * cols * dtype.itemsize
    payload = raw[HEADER.size:]
    if len(payload) != expected:
        raise CorruptionError(
            f"{path}: payload is {len(payload)} bytes, header implies {expected}"
        )
    m = np.frombuffer(payload, dtype=dtype).reshape(rows, cols)
    if not allow_nonfinite and m.size and not np.isfinite(m).all():
        bad = np.argwhere(~np.isfinite(m))[0]
        raise ValidationError(
            f"{path}: non-finite value at row {bad[0]}, col {bad[1]}; "
            "pass allow_nonfinite=True to load anyway"
        )
    return np.array(m)  # own the memory, drop the buffer reference


def _sibling_vem(json_path):
    return Path(json_path).with_suffix(".vem")


@dataclass(frozen=True)
class StimulusTrack:
    """Timestamped embedding events for one scan run.

    Events are stored columnar: `onsets`/`durations` in seconds, `vectors`
    one row per event. Onsets must be sorted and non-negative.
    """

    onsets: np.ndarray
    durations: np.ndarray
    vectors: np.ndarray
    run_id: str = "run-0"

    def __post_init__(self):
        onsets = np.asarray(self.onsets, dtype=np.float64)
        durations = np.asarray(self.durations, dtype=np.float64)
        vectors = np.atleast_2d(np.asarray(self.vectors))
        object.__setattr__(self, "onsets", onsets)
        object.__setattr__(self, "durations", durations)
        object.__setattr__(self, "vectors", vectors)
        if onsets.ndim != 1 or durations.shape != onsets.shape:
            raise ShapeError("onsets and durations must be matching 1-D arrays")
        if vectors.shape[0] != onsets.shape[0]:
            raise ShapeError(
                f"{vectors.shape[0]} event vectors for {onsets.shape[0]} events"
            )
        if onsets.size:
            if not np.isfinite(onsets).all() or (onsets < 0).any():
                raise ValidationError("event onsets must be finite and non-negative")
            if (np.diff(onsets) < 0).any():
                raise ValidationError("events must be sorted by onset")
            if not np.isfinite(durations).all() or (durations < 0).any():
                raise ValidationError("event durations must be finite and non-negative")
            if not np.isfinite(vectors).all():
                raise ValidationError("event vectors must be finite")

    @property
    def n_events(self):
        return self.onsets.shape[0]

    @property
    def dim(self):
        return self.vectors.shape[1]


def save_stimulus_track(track, json_path):
    """Write a track as metadata JSON plus a sibling .vem with the vectors."""
    json_path = Path(json_path)
    vem_path = _sibling_vem(json_path)
    write_matrix(track.vectors.astype(np.float32), vem_path)
    meta = {
        "dim": int(track.dim),
        "run_id": track.run_id,
        "vectors": vem_path.name,
        "events": [
            {"onset_s": float(o), "duration_s": float(d), "vector_row": i}
            for i, (o, d) in enumerate(zip(track.onsets, track.durations))
        ],
    }
    json_path.write_text(json.dumps(meta, indent=2) + "\n")


def load_stimulus_track(json_path):
    """Load a stimulus track from its JSON metadata and sibling vector matrix."""
    json_path = Path(json_path)
    meta = json.loads(json_path.read_text())
    for key in ("dim", "run_id", "events"):
        if key not in meta:
            raise ValidationError(f"{json_path}: missing required field '{key}'")
    vem_path = json_path.parent / meta.get("vectors", _sibling_vem(json_path).name)
    vectors = read_matrix(vem_path)
    if vectors.shape[1] != meta["dim"]:
        raise ValidationError(
            f"{json_path}: dim {meta['dim']} but vector matrix has {vectors.shape[1]} columns"
        )
    onsets, durations, rows = [], [], []
    for ev in meta["events"]:
        onsets.append(float(ev["onset_s"]))
        durations.append(float(ev["duration_s"]))
        row = int(ev["vector_row"])
        if not 0 <= row < vectors.shape[0]:
            raise IndexError(
                f"{json_path}: vector_row {row} out of range for {vectors.shape[0]} rows"
            )
        rows.append(row)
    onsets = np.asarray(onsets)
    if onsets.size and (np.diff(onsets) < 0).any():
        raise ValidationError(f"{json_path}: events are not sorted by onset")
    picked = vectors[rows] if rows else np.empty((0, meta["dim"]), vectors.dtype)
    return StimulusTrack(
        onsets=onsets,
        durations=np.asarray(durations),
        vectors=picked,
        run_id=str(meta["run_id"]),
    )


@dataclass(frozen=True)
class BoldRun:
    """Measured voxel responses for one run: TRs by voxels plus scan metadata.

    `tr_s` is mandatory; the sampling period is never defaulted.
    """

    signal: np.ndarray
    tr_s: float
    subject_id: str
    run_id: str = "run-0"

    def __post_init__(self):
        signal = np.asarray(self.signal)
        object.__setattr__(self, "signal", signal)
        if signal.ndim != 2:
            raise ShapeError(f"BOLD signal must be 2-D, got shape {signal.shape}")
        if signal.shape[0] < 2:
            raise ValidationError("a BOLD run needs at least 2 samples")
        if not (np.isfinite(self.tr_s) and self.tr_s > 0):
            raise ValidationError(f"tr_s must be a positive number, got {self.tr_s}")

    @property
    def n_trs(self):
        return self.signal.shape[0]

    @property
    def n_voxels(self):
        return self.signal.shape[1]


def save_bold_run(run, vem_path):
    vem_path = Path(vem_path)
    sig = run.signal
    if sig.dtype not in (np.float32, np.float64):
        sig = sig.astype(np.float64)
    write_matrix(sig, vem_path)
    meta = {"tr_s": float(run.tr_s), "subject_id": run.subject_id, "run_id": run.run_id}
    vem_path.with_suffix(".json").write_text(json.dumps(meta, indent=2) + "\n")


def load_bold_run(vem_path):
    vem_path = Path(vem_path)
    meta = json.loads(vem_path.with_suffix(".json").read_text())
    if "tr_s" not in meta:
        raise ValidationError(f"{vem_path}: sidecar lacks mandatory tr_s")
    return BoldRun(
        signal=read_matrix(vem_path),
        tr_s=float(meta["tr_s"]),
        subject_id=str(meta.get("subject_id", "unknown")),
        run_id=str(meta.get("run_id", "run-0")),
    )


@dataclass(frozen=True)
class RoiAtlas:
    """Per-voxel functional-network labels with a code -> name map."""

    labels: np.ndarray
    names: dict = field(default_factory=dict)

    def __post_init__(self):
        labels = np.asarray(self.labels).astype(np.int64).ravel()
        object.__setattr__(self, "labels", labels)
        missing = set(np.unique(labels).tolist()) - set(self.names)
        if missing:
            raise ValidationError(f"atlas labels {sorted(missing)} have no names")

    @property
    def n_voxels(self):
        return self.labels.shape[0]


def save_atlas(atlas, vem_path):
    vem_path = Path(vem_path)
    write_matrix(atlas.labels[None, :].astype(np.float64), vem_path)
    meta = {"names": {str(k): v for k, v in atlas.names.items()}}
    vem_path.with_suffix(".json").write_text(json.dumps(meta, indent=2) + "\n")


def load_atlas(vem_path):
    vem_path = Path(vem_path)
    labels = read_matrix(vem_path).ravel()
    if labels.size and not np.all(labels == np.round(labels)):
        raise ValidationError(f"{vem_path}: atlas labels must be integer codes")
    meta = json.loads(vem_path.with_suffix(".json").read_text())
    names = {int(k): str(v) for k, v in meta.get("names", {}).items()}
    return RoiAtlas(labels=labels.astype(np.int64), names=names)
