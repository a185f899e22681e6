"""Feature-sequence containers, binary feature files, manifests, synthetic data.

Conventions used throughout the library:

* Frame indices are 1-based. In memory every temporal interval is half-open,
  ``[start, stop)`` with ``1 <= start < stop <= T + 1``, so lengths are
  ``stop - start`` and adjacent intervals tile exactly. The whole video is
  ``(1, T + 1)``.
* On disk (manifest ground truth, detection files) intervals are stored with
  inclusive ends (``end == stop - 1``); conversion happens at the I/O boundary.
* Feature files (extension ``.asfv``) hold one sequence: magic ``ASFV``,
  little-endian u32 version (=1), u32 feature dim d, u32 frame count T, then
  T*d float32 values row-major. Values are float32 on disk and float64 in
  memory.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

__all__ = [
    "FeatureSequence",
    "VideoLabel",
    "GroundTruthInterval",
    "VideoRecord",
    "DatasetManifest",
    "SynthConfig",
    "FeatureFileError",
    "BadMagicError",
    "UnsupportedVersionError",
    "TruncatedPayloadError",
    "ManifestError",
    "read_features",
    "write_features",
    "slice_features",
    "concat_features",
    "load_manifest",
    "save_manifest",
    "generate_synthetic",
    "background_target",
]

FEATURE_MAGIC = b"ASFV"
FEATURE_VERSION = 1
_HEADER = struct.Struct("<4sIII")


class FeatureFileError(ValueError):
    """Base error for malformed feature files."""


class BadMagicError(FeatureFileError):
    """File does not start with the feature-file magic bytes."""


class UnsupportedVersionError(FeatureFileError):
    """Feature file uses a version this reader does not understand."""


class TruncatedPayloadError(FeatureFileError):
    """Feature file payload is shorter than the header promises."""


class ManifestError(ValueError):
    """Manifest JSON is malformed or internally inconsistent."""


# ---------------------------------------------------------------------------
# Core containers
# ---------------------------------------------------------------------------


@dataclass
class FeatureSequence:
    """Per-frame feature matrix for one video: shape (T, d), float64."""

    video_id: str
    frames: np.ndarray
    fps_hint: float | None = None

    def __post_init__(self):
        self.frames = np.asarray(self.frames, dtype=np.float64)
        if self.frames.ndim != 2:
            raise ValueError(
                f"FeatureSequence '{self.video_id}': frames must be 2-D, got {self.frames.shape}"
            )
        if self.frames.shape[0] < 1 or self.frames.shape[1] < 1:
            raise ValueError(
                f"FeatureSequence '{self.video_id}': need at least one frame and one feature "
                f"dimension, got {self.frames.shape}"
            )
        if not np.all(np.isfinite(self.frames)):
            raise ValueError(f"FeatureSequence '{self.video_id}': non-finite feature values")

    @property
    def t_len(self) -> int:
        return self.frames.shape[0]

    @property
    def feat_dim(self) -> int:
        return self.frames.shape[1]


def _check_window(t_len: int, start: int, stop: int, what: str) -> None:
    if not (isinstance(start, (int, np.integer)) and isinstance(stop, (int, np.integer))):
        raise ValueError(f"{what}: window bounds must be integers, got ({start!r}, {stop!r})")
    if not (1 <= start < stop <= t_len + 1):
        raise ValueError(
            f"{what}: window [{start}, {stop}) out of range for sequence of length {t_len}"
        )


def slice_features(seq: FeatureSequence, start: int, stop: int) -> FeatureSequence:
    """Frames of the half-open window ``[start, stop)`` (1-based)."""
    _check_window(seq.t_len, start, stop, "slice_features")
    return FeatureSequence(
        video_id=f"{seq.video_id}[{start}:{stop}]",
        frames=np.array(seq.frames[start - 1 : stop - 1], copy=True),
        fps_hint=seq.fps_hint,
    )


def concat_features(parts: list[FeatureSequence], video_id: str | None = None) -> FeatureSequence:
    """Row-concatenate sequences in order; feature dims must agree."""
    if not parts:
        raise ValueError("concat_features: no inputs")
    d = parts[0].feat_dim
    for p in parts:
        if p.feat_dim != d:
            raise ValueError(
                f"concat_features: feature dim mismatch ({p.feat_dim} vs {d}) for '{p.video_id}'"
            )
    return FeatureSequence(
        video_id=video_id or "+".join(p.video_id for p in parts),
        frames=np.concatenate([p.frames for p in parts], axis=0),
        fps_hint=parts[0].fps_hint,
    )


@dataclass(frozen=True)
class VideoLabel:
    """Video-level class set (weak label). Class ids are 1..num_classes."""

    classes: tuple[int, ...]
    num_classes: int

    def __post_init__(self):
        object.__setattr__(self, "classes", tuple(sorted(set(int(c) for c in self.classes))))
        if not self.classes:
            raise ValueError("VideoLabel: at least one class required")
        for c in self.classes:
            if not (1 <= c <= self.num_classes):
                raise ValueError(
                    f"VideoLabel: class {c} outside 1..{self.num_classes}"
                )

    def vector(self) -> np.ndarray:
        """Multi-hot target over C+1 entries; the background slot stays 0."""
        y = np.zeros(self.num_classes + 1)
        for c in self.classes:
            y[c - 1] = 1.0
        return y

    @property
    def is_single(self) -> bool:
        return len(self.classes) == 1


def background_target(num_classes: int) -> np.ndarray:
    """One-hot target selecting the background slot (index C of C+1)."""
    y = np.zeros(num_classes + 1)
    y[num_classes] = 1.0
    return y


@dataclass(frozen=True)
class GroundTruthInterval:
    """One annotated action instance: half-open frame window plus class id."""

    class_id: int
    start: int
    stop: int

    def __post_init__(self):
        if self.stop <= self.start:
            raise ValueError(
                f"GroundTruthInterval: empty window [{self.start}, {self.stop})"
            )

    @property
    def interval(self) -> tuple[int, int]:
        return (self.start, self.stop)


@dataclass
class VideoRecord:
    """One video in a dataset: features plus weak label plus optional ground truth."""

    video_id: str
    features: FeatureSequence
    label: VideoLabel
    gt: list[GroundTruthInterval] = field(default_factory=list)
    path: str | None = None
    # For synthesized videos: (source video id, start, stop) of each spliced slice.
    source: list[tuple[str, int, int]] | None = None

    @property
    def is_generated(self) -> bool:
        return self.source is not None


@dataclass
class DatasetManifest:
    """A set of videos sharing one label space."""

    videos: list[VideoRecord]
    num_classes: int
    split: str | None = None

    def __post_init__(self):
        seen = set()
        for v in self.videos:
            if v.video_id in seen:
                raise ManifestError(f"duplicate video id '{v.video_id}'")
            seen.add(v.video_id)
            if v.label.num_classes != self.num_classes:
                raise ManifestError(
                    f"video '{v.video_id}': label space {v.label.num_classes} != manifest "
                    f"num_classes {self.num_classes}"
                )
            for g in v.gt:
                if not (1 <= g.class_id <= self.num_classes):
                    raise ManifestError(
                        f"video '{v.video_id}': ground-truth class {g.class_id} outside "
                        f"1..{self.num_classes}"
                    )
                if not (1 <= g.start < g.stop <= v.features.t_len + 1):
                    raise ManifestError(
                        f"video '{v.video_id}': ground-truth window [{g.start}, {g.stop}) "
                        f"out of range for length {v.features.t_len}"
                    )

    def __len__(self) -> int:
        return len(self.videos)

    def __iter__(self):
        return iter(self.videos)

    def video(self, video_id: str) -> VideoRecord:
        for v in self.videos:
            if v.video_id == video_id:
                return v
        raise KeyError(f"no video '{video_id}' in manifest")


# ---------------------------------------------------------------------------
# Binary feature files
# ---------------------------------------------------------------------------


def write_features(seq: FeatureSequence, path: str | Path) -> None:
    """Write one sequence to an .asfv file (float32 payload)."""
    path = Path(path)
    payload = seq.frames.astype("<f4").tobytes(order="C")
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(FEATURE_MAGIC, FEATURE_VERSION, seq.feat_dim, seq.t_len))
        fh.write(payload)


def read_features(path: str | Path, video_id: str | None = None) -> FeatureSequence:
    """Read an .asfv file; raises a distinct error per failure mode."""
    path = Path(path)
    raw = path.read_bytes()
    if len(raw) < _HEADER.size or raw[:4] != FEATURE_MAGIC:
        raise BadMagicError(f"{path}: not a feature file (bad magic)")
    magic, version, d, t = _HEADER.unpack_from(raw)
    if version != FEATURE_VERSION:
        raise UnsupportedVersionError(
            f"{path}: unsupported feature-file version {version} (expected {FEATURE_VERSION})"
        )
    expected = _HEADER.size + 4 * d * t
    if len(raw) < expected:
        raise TruncatedPayloadError(
            f"{path}: payload truncated ({len(raw)} bytes, header promises {expected})"
        )
    values = np.frombuffer(raw, dtype="<f4", count=d * t, offset=_HEADER.size)
    frames = values.astype(np.float64).reshape(t, d)
    return FeatureSequence(video_id=video_id or path.stem, frames=frames)


# ---------------------------------------------------------------------------
# Manifest JSON
# ---------------------------------------------------------------------------


def save_manifest(manifest: DatasetManifest, json_path: str | Path, features_dir: str | Path) -> None:
    """Write manifest JSON plus one .asfv file per video.

    Feature paths in the JSON are relative to the manifest's directory.
    Ground-truth windows are stored with inclusive ends.
    """
    json_path = Path(json_path)
    features_dir = Path(features_dir)
    features_dir.mkdir(parents=True, exist_ok=True)
    entries = []
    for v in manifest.videos:
        feat_path = features_dir / f"{v.video_id}.asfv"
        write_features(v.features, feat_path)
        rel = feat_path.relative_to(json_path.parent) if feat_path.is_relative_to(
            json_path.parent
        ) else feat_path
        entry = {
            "id": v.video_id,
            "path": str(rel),
            "labels": list(v.label.classes),
            "gt": [
                {"class": g.class_id, "start": g.start, "end": g.stop - 1} for g in v.gt
            ],
        }
        if v.features.fps_hint is not None:
            entry["fps"] = v.features.fps_hint
        entries.append(entry)
    doc = {"num_classes": manifest.num_classes, "videos": entries}
    if manifest.split is not None:
        doc["split"] = manifest.split
    json_path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def load_manifest(json_path: str | Path) -> DatasetManifest:
    """Load manifest JSON and every referenced feature file."""
    json_path = Path(json_path)
    try:
        doc = json.loads(json_path.read_text())
    except json.JSONDecodeError as e:
        raise ManifestError(f"{json_path}: invalid JSON ({e})") from e
    if not isinstance(doc, dict) or "num_classes" not in doc or "videos" not in doc:
        raise ManifestError(f"{json_path}: expected an object with num_classes and videos")
    num_classes = int(doc["num_classes"])
    if num_classes < 1:
        raise ManifestError(f"{json_path}: num_classes must be >= 1")
    videos = []
    for entry in doc["videos"]:
        for key in ("id", "path", "labels"):
            if key not in entry:
                raise ManifestError(f"{json_path}: video entry missing '{key}'")
        feat_path = Path(entry["path"])
        if not feat_path.is_absolute():
            feat_path = json_path.parent / feat_path
        if not feat_path.exists():
            raise ManifestError(f"{json_path}: feature file not found: {feat_path}")
        seq = read_features(feat_path, video_id=entry["id"])
        if entry.get("fps") is not None:
            seq.fps_hint = float(entry["fps"])
        label = VideoLabel(tuple(entry["labels"]), num_classes)
        gt = [
            GroundTruthInterval(
                class_id=int(g["class"]), start=int(g["start"]), stop=int(g["end"]) + 1
            )
            for g in entry.get("gt", [])
        ]
        videos.append(
            VideoRecord(
                video_id=entry["id"],
                features=seq,
                label=label,
                gt=gt,
                path=str(feat_path),
            )
        )
    return DatasetManifest(videos=videos, num_classes=num_classes, split=doc.get("split"))


# ---------------------------------------------------------------------------
# Synthetic data
# ---------------------------------------------------------------------------


@dataclass
class SynthConfig:
    """Knobs for the synthetic localization benchmark.

    Class c draws action frames around ``margin * e_{c-1}`` (standard basis);
    background frames draw around ``margin * e_C``, so the background has its
    own well-separated direction and ``feat_dim >= num_classes + 1`` is
    required. Gaussian noise of scale ``noise`` is added per frame.
    """

    num_classes: int = 5
    feat_dim: int = 16
    num_videos: int = 60
    t_min: int = 100
    t_max: int = 180
    min_actions: int = 1
    max_actions: int = 2
    margin: float = 6.0
    noise: float = 1.0
    action_density: float = 0.3
    min_action_len: int = 15
    split: str = "train"

    def validate(self) -> None:
        if self.margin <= 0:
            raise ValueError("SynthConfig: margin must be positive")
        if self.noise < 0:
            raise ValueError("SynthConfig: noise must be non-negative")
        if not (0.0 < self.action_density < 1.0):
            raise ValueError("SynthConfig: action_density must be in (0, 1)")
        if self.feat_dim < self.num_classes + 1:
            raise ValueError(
                "SynthConfig: feat_dim must be at least num_classes + 1 so every class and "
                "the background get separated mean directions"
            )
        if not (1 <= self.min_actions <= self.max_actions):
            raise ValueError("SynthConfig: need 1 <= min_actions <= max_actions")
        if self.t_min > self.t_max:
            raise ValueError("SynthConfig: t_min must not exceed t_max")
        worst = max(
            int(round(self.action_density * self.t_min)),
            self.max_actions * self.min_action_len,
        )
        if worst + self.max_actions + 1 > self.t_min:
            raise ValueError(
                f"SynthConfig: t_min={self.t_min} too small to fit {self.max_actions} actions "
                f"of at least {self.min_action_len} frames with gaps"
            )

    def to_json(self) -> dict:
        return dict(self.__dict__)

    @classmethod
    def from_json(cls, doc: dict) -> "SynthConfig":
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(doc) - known
        if unknown:
            raise ValueError(f"SynthConfig: unknown keys {sorted(unknown)}")
        return cls(**doc)


def _split_lengths(total: int, parts: int, floor: int) -> list[int]:
    base, rem = divmod(total, parts)
    lengths = [base + (1 if i < rem else 0) for i in range(parts)]
    return [max(l, floor) for l in lengths]


def generate_synthetic(config: SynthConfig, seed: int) -> DatasetManifest:
    """Deterministic synthetic dataset with known ground-truth intervals.

    Videos cycle through the classes (one class per video) so the class
    histogram is balanced. Features are quantized through float32 so a write/
    read round-trip through feature files reproduces them bit-exactly.
    """
    config.validate()
    rng = np.random.default_rng(seed)
    c_count = config.num_classes
    directions = np.eye(config.feat_dim)
    videos = []
    for i in range(config.num_videos):
        class_id = 1 + (i % c_count)
        t_len = int(rng.integers(config.t_min, config.t_max + 1))
        n_actions = int(rng.integers(config.min_actions, config.max_actions + 1))
        total_action = int(round(config.action_density * t_len))
        lengths = _split_lengths(total_action, n_actions, config.min_action_len)
        extra = t_len - sum(lengths) - (n_actions + 1)
        if extra < 0:
            raise ValueError(
                f"SynthConfig: video of length {t_len} cannot fit {n_actions} actions "
                f"totalling {sum(lengths)} frames"
            )
        gap_extra = rng.multinomial(extra, np.full(n_actions + 1, 1.0 / (n_actions + 1)))
        gaps = 1 + gap_extra
        frames = np.zeros((t_len, config.feat_dim))
        gt = []
        cursor = 1  # 1-based frame position
        mean_bg = config.margin * directions[c_count]
        mean_act = config.margin * directions[class_id - 1]
        for seg in range(n_actions):
            bg_len = int(gaps[seg])
            frames[cursor - 1 : cursor - 1 + bg_len] = mean_bg + config.noise * rng.standard_normal(
                (bg_len, config.feat_dim)
            )
            cursor += bg_len
            act_len = lengths[seg]
            frames[cursor - 1 : cursor - 1 + act_len] = mean_act + config.noise * rng.standard_normal(
                (act_len, config.feat_dim)
            )
            gt.append(GroundTruthInterval(class_id=class_id, start=cursor, stop=cursor + act_len))
            cursor += act_len
        tail = t_len - cursor + 1
        frames[cursor - 1 :] = mean_bg + config.noise * rng.standard_normal(
            (tail, config.feat_dim)
        )
        frames = frames.astype(np.float32).astype(np.float64)
        video_id = f"{config.split}-{i:04d}"
        videos.append(
            VideoRecord(
                video_id=video_id,
                features=FeatureSequence(video_id=video_id, frames=frames),
                label=VideoLabel((class_id,), c_count),
                gt=gt,
            )
        )
    return DatasetManifest(videos=videos, num_classes=c_count, split=config.split)
