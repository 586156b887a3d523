"""Domain types shared by every other module.

The unit of data is a clip: a motion-latent sequence [n_frames x d_mot]
with a head-pose track, an optional audio feature file, and annotation
fields (emotion, intensity, active action units, instruction text).
Clips are indexed by JSONL manifests; serialization is canonical (fixed
field order, no None fields) so that write(load(f)) is byte-identical
for canonical files.
"""

from __future__ import annotations

import enum
import json
from dataclasses import dataclass, replace
from importlib.resources import files as _pkg_files
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np

from .errors import InputError, ManifestError, ValidationError

N_ACTION_UNITS = 41


class EmotionLabel(str, enum.Enum):
    NEUTRAL = "neutral"
    HAPPY = "happy"
    ANGRY = "angry"
    SAD = "sad"
    SURPRISED = "surprised"
    FEAR = "fear"
    DISGUSTED = "disgusted"
    CONTEMPT = "contempt"

    def __str__(self) -> str:
        return self.value


class IntensityLevel(enum.IntEnum):
    LOW = 1
    MEDIUM = 2
    HIGH = 3


class TaskKind(str, enum.Enum):
    EMOTION_TALK = "emotion_talk"
    MOTION_CONTROL = "motion_control"

    def __str__(self) -> str:
        return self.value


class AURegistry:
    """Ordered list of action-unit names; line index == bit index."""

    def __init__(self, names: Sequence[str]):
        names = tuple(names)
        if len(names) != len(set(names)):
            raise ValidationError("action unit names must be unique")
        for n in names:
            if not n or not all(c.islower() or c.isdigit() or c == "_" for c in n):
                raise ValidationError(f"action unit name {n!r} is not snake_case")
        self.names = names
        self._index = {n: i for i, n in enumerate(names)}

    def __len__(self) -> int:
        return len(self.names)

    def __contains__(self, name: str) -> bool:
        return name in self._index

    def index(self, name: str) -> int:
        try:
            return self._index[name]
        except KeyError:
            raise ValidationError(f"unknown action unit name {name!r}") from None

    @classmethod
    def load_default(cls) -> "AURegistry":
        text = _pkg_files("avamo.data").joinpath("au_registry.txt").read_text()
        names = [line.strip() for line in text.splitlines() if line.strip()]
        reg = cls(names)
        if len(reg) != N_ACTION_UNITS:
            raise ValidationError(
                f"packaged registry has {len(reg)} names, expected {N_ACTION_UNITS}"
            )
        return reg


_DEFAULT_REGISTRY: Optional[AURegistry] = None


def default_registry() -> AURegistry:
    global _DEFAULT_REGISTRY
    if _DEFAULT_REGISTRY is None:
        _DEFAULT_REGISTRY = AURegistry.load_default()
    return _DEFAULT_REGISTRY


@dataclass(frozen=True)
class AUVector:
    """Binary activation vector over the registry, length 41."""

    bits: np.ndarray

    def __post_init__(self):
        b = np.asarray(self.bits, dtype=np.uint8)
        if b.shape != (N_ACTION_UNITS,):
            raise ValidationError(
                f"AU vector must have shape ({N_ACTION_UNITS},), got {b.shape}"
            )
        if not np.isin(b, (0, 1)).all():
            raise ValidationError("AU vector entries must be 0 or 1")
        object.__setattr__(self, "bits", b)

    @classmethod
    def zeros(cls) -> "AUVector":
        return cls(np.zeros(N_ACTION_UNITS, dtype=np.uint8))

    @classmethod
    def from_names(cls, names: Iterable[str], registry: Optional[AURegistry] = None) -> "AUVector":
        registry = registry or default_registry()
        bits = np.zeros(N_ACTION_UNITS, dtype=np.uint8)
        for n in names:
            bits[registry.index(n)] = 1
        return cls(bits)

    def to_names(self, registry: Optional[AURegistry] = None) -> list[str]:
        registry = registry or default_registry()
        return [registry.names[i] for i in np.flatnonzero(self.bits)]

    def intersect(self, other: "AUVector") -> "AUVector":
        return AUVector(self.bits & other.bits)

    def count(self) -> int:
        return int(self.bits.sum())

    def as_float(self) -> np.ndarray:
        return self.bits.astype(np.float64)

    def __eq__(self, other) -> bool:
        return isinstance(other, AUVector) and bool((self.bits == other.bits).all())

    def __hash__(self):
        return hash(self.bits.tobytes())


def _check_track(data, name: str) -> np.ndarray:
    a = np.asarray(data, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] < 1 or a.shape[1] < 1:
        raise ValidationError(f"{name} must be a 2-D [frames x dims] array, got {a.shape}")
    if not np.isfinite(a).all():
        raise ValidationError(f"{name} contains non-finite values")
    return a


@dataclass(frozen=True)
class MotionSequence:
    """Motion latents, one row per frame."""

    data: np.ndarray
    frame_rate: float = 25.0

    def __post_init__(self):
        object.__setattr__(self, "data", _check_track(self.data, "motion sequence"))
        if self.frame_rate <= 0:
            raise ValidationError("frame_rate must be positive")

    @property
    def n_frames(self) -> int:
        return self.data.shape[0]

    @property
    def dim(self) -> int:
        return self.data.shape[1]

    def with_data(self, data) -> "MotionSequence":
        return MotionSequence(data, self.frame_rate)


@dataclass(frozen=True)
class PoseSequence:
    """Head pose track, one row per frame (rotation + translation)."""

    data: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "data", _check_track(self.data, "pose sequence"))

    @property
    def n_frames(self) -> int:
        return self.data.shape[0]


_MANIFEST_FIELD_ORDER = (
    "id",
    "person_id",
    "task",
    "n_frames",
    "motion_path",
    "pose_path",
    "audio_path",
    "instruction",
    "emotion",
    "intensity",
    "au",
)


@dataclass
class ManifestEntry:
    """One clip record; paths are relative to the manifest directory."""

    id: str
    person_id: str
    task: TaskKind
    n_frames: int
    motion_path: str
    pose_path: Optional[str] = None
    audio_path: Optional[str] = None
    instruction: Optional[str] = None
    emotion: Optional[EmotionLabel] = None
    intensity: Optional[IntensityLevel] = None
    au: Optional[AUVector] = None

    def validate(self) -> "ManifestEntry":
        if not self.id:
            raise ValidationError("entry id must be non-empty")
        if not self.person_id:
            raise ValidationError(f"entry {self.id}: person_id must be non-empty")
        if self.n_frames < 1:
            raise ValidationError(f"entry {self.id}: n_frames must be >= 1")
        if not self.motion_path:
            raise ValidationError(f"entry {self.id}: motion_path must be non-empty")
        if self.task == TaskKind.EMOTION_TALK:
            for field in ("audio_path", "emotion", "intensity", "au"):
                if getattr(self, field) is None:
                    raise ValidationError(
                        f"entry {self.id}: emotion_talk requires {field}"
                    )
        else:
            if self.instruction is None:
                raise ValidationError(
                    f"entry {self.id}: motion_control requires instruction"
                )
            if self.audio_path is not None:
                raise ValidationError(
                    f"entry {self.id}: motion_control entries carry no audio"
                )
            if self.emotion is not None or self.intensity is not None or self.au is not None:
                raise ValidationError(
                    f"entry {self.id}: motion_control entries carry no emotion fields"
                )
        return self

    def to_json_dict(self, registry: Optional[AURegistry] = None) -> dict:
        d: dict = {}
        for key in _MANIFEST_FIELD_ORDER:
            value = getattr(self, key)
            if value is None:
                continue
            if key == "au":
                d[key] = value.to_names(registry)
            elif key in ("task", "emotion"):
                d[key] = str(value)
            elif key == "intensity":
                d[key] = int(value)
            else:
                d[key] = value
        return d

    @classmethod
    def from_json_dict(cls, d: dict, registry: Optional[AURegistry] = None) -> "ManifestEntry":
        known = set(_MANIFEST_FIELD_ORDER)
        unknown = set(d) - known
        if unknown:
            raise ManifestError(f"unknown manifest fields: {sorted(unknown)}")
        try:
            task = TaskKind(d["task"])
        except (KeyError, ValueError) as exc:
            raise ManifestError(f"bad or missing task: {exc}") from None
        emotion = d.get("emotion")
        if emotion is not None:
            try:
                emotion = EmotionLabel(emotion)
            except ValueError:
                raise ManifestError(f"unknown emotion {emotion!r}") from None
        intensity = d.get("intensity")
        if intensity is not None:
            try:
                intensity = IntensityLevel(intensity)
            except ValueError:
                raise ManifestError(
                    f"intensity must be 1, 2 or 3, got {intensity!r}"
                ) from None
        au = d.get("au")
        if au is not None:
            au = AUVector.from_names(au, registry)
        try:
            entry = cls(
                id=d["id"],
                person_id=d["person_id"],
                task=task,
                n_frames=int(d["n_frames"]),
                motion_path=d["motion_path"],
                pose_path=d.get("pose_path"),
                audio_path=d.get("audio_path"),
                instruction=d.get("instruction"),
                emotion=emotion,
                intensity=intensity,
                au=au,
            )
        except KeyError as exc:
            raise ManifestError(f"missing manifest field {exc}") from None
        return entry.validate()

    def with_fields(self, **kw) -> "ManifestEntry":
        return replace(self, **kw)


def load_manifest(path, registry: Optional[AURegistry] = None) -> list[ManifestEntry]:
    path = Path(path)
    if not path.exists():
        raise InputError(f"manifest not found: {path}")
    entries = []
    seen_ids = set()
    with path.open("r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ManifestError(f"{path}:{lineno}: invalid JSON ({exc})") from None
            if not isinstance(record, dict):
                raise ManifestError(f"{path}:{lineno}: entry must be a JSON object")
            try:
                entry = ManifestEntry.from_json_dict(record, registry)
            except (ManifestError, ValidationError) as exc:
                raise ManifestError(f"{path}:{lineno}: {exc}") from None
            if entry.id in seen_ids:
                raise ManifestError(f"{path}:{lineno}: duplicate id {entry.id!r}")
            seen_ids.add(entry.id)
            entries.append(entry)
    return entries


def write_manifest(entries: Iterable[ManifestEntry], path, registry: Optional[AURegistry] = None) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8") as fh:
        for entry in entries:
            entry.validate()
            fh.write(json.dumps(entry.to_json_dict(registry), ensure_ascii=False))
            fh.write("\n")


def manifest_bytes(entries: Iterable[ManifestEntry], registry: Optional[AURegistry] = None) -> bytes:
    lines = [
        json.dumps(e.validate().to_json_dict(registry), ensure_ascii=False) + "\n"
        for e in entries
    ]
    return "".join(lines).encode("utf-8")
