"""Annotation parsing, clip extraction, class balancing, and dataset persistence.

A dataset directory holds:
  manifest.jsonl   one JSON entry per sample (paths relative to the directory)
  dataset.json     schema version, build seed, and source-audio bookkeeping
  tensors/*.spec   128x128 float32 tensors in the SPEC container format

SPEC container: 16-byte header (magic "SPEC", version u8, dtype u8, reserved
u16, rows u32 LE, cols u32 LE) followed by rows*cols little-endian float32
values in row-major order.
"""

from __future__ import annotations

import csv
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .audio_io import AudioClip, CLIP_DURATION_S, extract_clip, load_and_resample
from .errors import (
    AnnotationError,
    EmptyDatasetError,
    FormatError,
    InsufficientBackgroundError,
    ValidationError,
)
from .rng import derive_seed
from .spectrogram import SpectrogramTensor, compute_mel, to_tensor

SCHEMA_VERSION = 1

_MAGIC = b"SPEC"
_VERSION = 1
_DTYPE_FLOAT32 = 1
_HEADER = struct.Struct("<4sBBHII")


@dataclass(frozen=True)
class Annotation:
    """One labeled call interval inside a recording."""

    file_id: str
    start_s: float
    end_s: float
    label: str = "KW"

    @property
    def duration_s(self) -> float:
        return self.end_s - self.start_s

    @property
    def midpoint_s(self) -> float:
        return 0.5 * (self.start_s + self.end_s)


@dataclass
class ManifestEntry:
    sample_path: str
    label: int
    provenance: str
    source_annotation_id: str | None = None
    source_file: str | None = None
    seed: int | None = None

    def to_json(self) -> str:
        return json.dumps(
            {
                "sample_path": self.sample_path,
                "label": self.label,
                "provenance": self.provenance,
                "source_annotation_id": self.source_annotation_id,
                "source_file": self.source_file,
                "seed": self.seed,
            },
            sort_keys=True,
        )

    @staticmethod
    def from_json(line: str) -> "ManifestEntry":
        raw = json.loads(line)
        return ManifestEntry(
            sample_path=raw["sample_path"],
            label=int(raw["label"]),
            provenance=raw["provenance"],
            source_annotation_id=raw.get("source_annotation_id"),
            source_file=raw.get("source_file"),
            seed=raw.get("seed"),
        )


@dataclass
class DatasetManifest:
    entries: list[ManifestEntry] = field(default_factory=list)
    schema_version: int = SCHEMA_VERSION

    def count(self, label: int) -> int:
        return sum(1 for e in self.entries if e.label == label)

    @property
    def balanced(self) -> bool:
        return self.count(1) == self.count(0)


# ---------------------------------------------------------------------------
# SPEC tensor container


def write_spec_array(path, values: np.ndarray) -> None:
    values = np.asarray(values, dtype="<f4")
    if values.ndim != 2:
        raise ValidationError("SPEC files hold 2-D arrays")
    rows, cols = values.shape
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(_MAGIC, _VERSION, _DTYPE_FLOAT32, 0, rows, cols))
        fh.write(values.tobytes(order="C"))


def read_spec_array(path) -> np.ndarray:
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < _HEADER.size:
        raise FormatError(f"{path}: truncated SPEC header")
    magic, version, dtype, _, rows, cols = _HEADER.unpack_from(raw)
    if magic != _MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}")
    if version != _VERSION:
        raise FormatError(f"{path}: unsupported version {version}")
    if dtype != _DTYPE_FLOAT32:
        raise FormatError(f"{path}: unsupported dtype code {dtype}")
    expected = _HEADER.size + rows * cols * 4
    if len(raw) != expected:
        raise FormatError(f"{path}: payload is {len(raw) - _HEADER.size} bytes, "
                          f"expected {rows * cols * 4}")
    return np.frombuffer(raw, dtype="<f4", offset=_HEADER.size).reshape(rows, cols).copy()


def save_tensor(tensor: SpectrogramTensor, path) -> None:
    write_spec_array(path, tensor.values)


def load_tensor(path, range_tag: str = "unit", provenance: str = "real") -> SpectrogramTensor:
    values = read_spec_array(path)
    if values.shape != (128, 128):
        raise FormatError(f"{path}: expected 128x128 tensor, found {values.shape}")
    return SpectrogramTensor(values=values, range_tag=range_tag, provenance=provenance)


# ---------------------------------------------------------------------------
# Annotations


def parse_annotations(path) -> list[Annotation]:
    """Read `file,start,end,label` CSV rows, keeping the KW-labeled ones.

    Malformed rows raise AnnotationError naming the 1-based line number.
    """
    annotations = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise FormatError(f"{path}: empty annotation file") from None
        header = [h.strip().lower() for h in header]
        required = ["file", "start", "end", "label"]
        if not all(col in header for col in required):
            raise FormatError(f"{path}: header must contain {required}, found {header}")
        idx = {col: header.index(col) for col in required}
        for line_no, row in enumerate(reader, start=2):
            if not row or all(not cell.strip() for cell in row):
                continue
            if len(row) < len(header):
                raise AnnotationError(f"{path}:{line_no}: expected {len(header)} fields, "
                                      f"got {len(row)}", line=line_no)
            try:
                start = float(row[idx["start"]])
                end = float(row[idx["end"]])
            except ValueError:
                raise AnnotationError(f"{path}:{line_no}: non-numeric interval bounds",
                                      line=line_no) from None
            if start < 0 or start >= end:
                raise AnnotationError(f"{path}:{line_no}: invalid interval "
                                      f"[{start}, {end}]", line=line_no)
            label = row[idx["label"]].strip()
            if label != "KW":
                continue
            annotations.append(Annotation(file_id=row[idx["file"]].strip(),
                                          start_s=start, end_s=end, label=label))
    return annotations


# ---------------------------------------------------------------------------
# Background sampling


def _feasible_start_intervals(file_duration_s: float, annotations: list[Annotation],
                              duration_s: float) -> list[tuple[float, float]]:
    """Closed intervals of window starts whose window avoids every annotation."""
    hi = file_duration_s - duration_s
    if hi < 0:
        return []
    segments = [(0.0, hi)]
    for ann in annotations:
        blocked_lo, blocked_hi = ann.start_s - duration_s, ann.end_s
        next_segments = []
        for seg_lo, seg_hi in segments:
            if seg_hi <= blocked_lo or seg_lo >= blocked_hi:
                next_segments.append((seg_lo, seg_hi))
                continue
            if seg_lo <= blocked_lo:
                next_segments.append((seg_lo, blocked_lo))
            if seg_hi >= blocked_hi:
                next_segments.append((blocked_hi, seg_hi))
        segments = next_segments
    return [(lo, hi) for lo, hi in segments if hi >= lo]


def feasible_background_measure(file_duration_s: float, annotations: list[Annotation],
                                duration_s: float = CLIP_DURATION_S) -> float:
    return sum(hi - lo for lo, hi in
               _feasible_start_intervals(file_duration_s, annotations, duration_s))


def sample_backgrounds(file_id: str, file_duration_s: float, annotations: list[Annotation],
                       n: int, duration_s: float = CLIP_DURATION_S, rng_seed=0) -> list[float]:
    """Uniformly sample n window starts whose windows avoid every annotation."""
    if n < 0:
        raise ValidationError("n must be non-negative")
    foreign = [a.file_id for a in annotations if a.file_id != file_id]
    if foreign:
        raise ValidationError(f"annotations for {foreign[0]} passed while sampling {file_id}")
    segments = _feasible_start_intervals(file_duration_s, annotations, duration_s)
    if not segments:
        raise InsufficientBackgroundError(
            f"{file_id}: no {duration_s} s window avoids the annotated regions")
    rng = np.random.default_rng(rng_seed)
    lengths = np.array([hi - lo for lo, hi in segments])
    total = lengths.sum()
    starts = []
    for _ in range(n):
        if total > 0:
            pick = rng.choice(len(segments), p=lengths / total)
            lo, hi = segments[pick]
            starts.append(float(rng.uniform(lo, hi)))
        else:
            # Only isolated exact-fit placements remain.
            lo, _ = segments[rng.integers(len(segments))]
            starts.append(float(lo))
    return starts


# ---------------------------------------------------------------------------
# Dataset building


class _AudioCache:
    """Tiny LRU so per-file clip extraction does not reload audio."""

    def __init__(self, capacity: int = 2):
        self.capacity = capacity
        self._store: dict[str, AudioClip] = {}

    def get(self, path) -> AudioClip:
        key = str(path)
        if key in self._store:
            clip = self._store.pop(key)
            self._store[key] = clip
            return clip
        clip = load_and_resample(path)
        self._store[key] = clip
        if len(self._store) > self.capacity:
            self._store.pop(next(iter(self._store)))
        return clip


def write_manifest(entries: list[ManifestEntry], path) -> None:
    with open(path, "w") as fh:
        for entry in entries:
            fh.write(entry.to_json() + "\n")


def read_manifest(path) -> DatasetManifest:
    entries = []
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if line:
                entries.append(ManifestEntry.from_json(line))
    return DatasetManifest(entries=entries)


def manifest_path(dataset_dir) -> Path:
    return Path(dataset_dir) / "manifest.jsonl"


def load_entry_tensor(dataset_dir, entry: ManifestEntry,
                      range_tag: str = "unit") -> SpectrogramTensor:
    return load_tensor(Path(dataset_dir) / entry.sample_path, range_tag=range_tag,
                       provenance=entry.provenance)


def _largest_remainder_allocation(weights: np.ndarray, total: int) -> np.ndarray:
    """Integer allocation proportional to weights, summing exactly to total."""
    if weights.sum() <= 0:
        raise InsufficientBackgroundError("no feasible background region in any file")
    shares = weights / weights.sum() * total
    counts = np.floor(shares).astype(int)
    remainder = total - counts.sum()
    if remainder > 0:
        order = np.argsort(-(shares - counts), kind="stable")
        counts[order[:remainder]] += 1
    return counts


def clip_to_tensor(clip: AudioClip, provenance: str = "real") -> SpectrogramTensor:
    return to_tensor(compute_mel(clip), range_tag="unit", provenance=provenance)


def build_dataset(annotations: list[Annotation], audio_root, out_dir, rng_seed: int,
                  duration_s: float = CLIP_DURATION_S) -> DatasetManifest:
    """Extract one centered positive per annotation plus matched backgrounds.

    Background windows avoid every annotated region of their file and are
    allocated per file in proportion to each file's feasible duration.
    """
    if not annotations:
        raise EmptyDatasetError("no annotations to build from")
    audio_root = Path(audio_root)
    out_dir = Path(out_dir)
    tensor_dir = out_dir / "tensors"
    tensor_dir.mkdir(parents=True, exist_ok=True)

    by_file: dict[str, list[Annotation]] = {}
    for ann in annotations:
        by_file.setdefault(ann.file_id, []).append(ann)

    cache = _AudioCache()
    entries: list[ManifestEntry] = []

    for i, ann in enumerate(annotations):
        audio = cache.get(audio_root / ann.file_id)
        start = ann.midpoint_s - duration_s / 2.0
        clip = extract_clip(audio, start, duration_s)
        tensor = clip_to_tensor(clip, provenance="real")
        rel = f"tensors/pos_{i:05d}.spec"
        save_tensor(tensor, out_dir / rel)
        entries.append(ManifestEntry(
            sample_path=rel, label=1, provenance="real",
            source_annotation_id=f"{ann.file_id}:{i}",
            source_file=str((audio_root / ann.file_id).resolve()),
        ))

    file_ids = sorted(by_file)
    durations = {fid: cache.get(audio_root / fid).duration_s for fid in file_ids}
    measures = np.array([
        feasible_background_measure(durations[fid], by_file[fid], duration_s)
        for fid in file_ids
    ])
    counts = _largest_remainder_allocation(measures, len(annotations))

    neg_index = 0
    for fid, n_bg in zip(file_ids, counts):
        if n_bg == 0:
            continue
        audio = cache.get(audio_root / fid)
        starts = sample_backgrounds(fid, durations[fid], by_file[fid], int(n_bg),
                                    duration_s, rng_seed=derive_seed(rng_seed, "bg", fid))
        for start in starts:
            clip = extract_clip(audio, start, duration_s)
            tensor = clip_to_tensor(clip, provenance="real")
            rel = f"tensors/neg_{neg_index:05d}.spec"
            save_tensor(tensor, out_dir / rel)
            entries.append(ManifestEntry(
                sample_path=rel, label=0, provenance="real",
                source_file=str((audio_root / fid).resolve()),
            ))
            neg_index += 1

    manifest = DatasetManifest(entries=entries)
    if not manifest.balanced:
        raise ValidationError("failed to balance classes")  # pragma: no cover
    write_manifest(entries, manifest_path(out_dir))
    meta = {
        "schema_version": SCHEMA_VERSION,
        "seed": rng_seed,
        "clip_duration_s": duration_s,
        "audio_root": str(audio_root.resolve()),
        "file_durations_s": {fid: durations[fid] for fid in file_ids},
        "annotations": [
            {"file": a.file_id, "start": a.start_s, "end": a.end_s, "label": a.label}
            for a in annotations
        ],
    }
    with open(out_dir / "dataset.json", "w") as fh:
        json.dump(meta, fh, indent=1, sort_keys=True)
    return manifest


AUDIO_SUFFIXES = (".wav", ".flac")


def tensors_from_dir(path, provenance: str = "real",
                     duration_s: float = CLIP_DURATION_S) -> list[SpectrogramTensor]:
    """Load every .spec/.wav/.flac in a directory as unit-range tensors.

    Audio files longer than `duration_s` are center-cropped before the mel
    transform. Files are processed in sorted order for determinism.
    """
    path = Path(path)
    tensors = []
    for child in sorted(path.iterdir()):
        if child.suffix.lower() == ".spec":
            tensors.append(load_tensor(child, provenance=provenance))
        elif child.suffix.lower() in AUDIO_SUFFIXES:
            audio = load_and_resample(child)
            if audio.duration_s > duration_s:
                audio = extract_clip(audio, (audio.duration_s - duration_s) / 2.0, duration_s)
            tensors.append(clip_to_tensor(audio, provenance=provenance))
    if not tensors:
        raise EmptyDatasetError(f"{path} holds no .spec or audio files")
    return tensors


def read_dataset_meta(dataset_dir) -> dict:
    with open(Path(dataset_dir) / "dataset.json") as fh:
        return json.load(fh)


def dataset_annotations(dataset_dir) -> list[Annotation]:
    """Annotations recorded at build time (used by time-shift augmentation)."""
    meta = read_dataset_meta(dataset_dir)
    return [Annotation(file_id=a["file"], start_s=a["start"], end_s=a["end"],
                       label=a.get("label", "KW"))
            for a in meta["annotations"]]
