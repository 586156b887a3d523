"""Objective metrics and report assembly.

Three formula metrics are computed directly from AU vectors and
embeddings: per-sample F1 over action units, typical-AU recall per
emotion (implemented exactly as printed, factor 2 included, so its
range is [0, 2]), and a max-over-frames cosine score reported on a
0-100 scale. External scorers (lip sync, distribution distance) plug in
as adapters; an adapter failure marks its metric unavailable instead of
aborting the run.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from importlib.resources import files as _pkg_files
from typing import Callable, Mapping, Optional, Protocol, Sequence

import numpy as np

from .conditioning import HashTextEmbedder
from .core import AURegistry, AUVector, EmotionLabel, default_registry
from .errors import InputError, NumericalError, ValidationError

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class TypicalAUTable:
    """Four typical action units per non-neutral emotion."""

    units: dict[EmotionLabel, tuple[str, ...]]

    def validate(self, registry: Optional[AURegistry] = None) -> "TypicalAUTable":
        registry = registry or default_registry()
        expected = {e for e in EmotionLabel if e != EmotionLabel.NEUTRAL}
        if set(self.units) != expected:
            raise ValidationError(
                "table must cover exactly the 7 non-neutral emotions"
            )
        for emotion, names in self.units.items():
            if len(names) != 4 or len(set(names)) != 4:
                raise ValidationError(f"{emotion}: need exactly 4 distinct units")
            for name in names:
                if name not in registry:
                    raise ValidationError(f"{emotion}: unknown unit {name!r}")
        return self

    def units_for(self, emotion: EmotionLabel) -> tuple[str, ...]:
        emotion = EmotionLabel(emotion)
        if emotion not in self.units:
            raise InputError(f"no typical-AU row for emotion {emotion}")
        return self.units[emotion]

    def vector_for(
        self, emotion: EmotionLabel, registry: Optional[AURegistry] = None
    ) -> AUVector:
        return AUVector.from_names(self.units_for(emotion), registry)

    @classmethod
    def load_default(cls) -> "TypicalAUTable":
        raw = json.loads(
            _pkg_files("avamo.data").joinpath("typical_aus.json").read_text()
        )
        units = {EmotionLabel(k): tuple(v) for k, v in raw.items()}
        return cls(units).validate()


def au_f1(preds: Sequence[AUVector], gts: Sequence[AUVector]) -> float:
    """Mean per-sample F1: 2|y∩ŷ| / (|y|+|ŷ|). Both-empty scores 1."""
    if not preds or len(preds) != len(gts):
        raise InputError("au_f1 needs aligned non-empty prediction/target lists")
    total = 0.0
    for pred, gt in zip(preds, gts):
        denom = pred.count() + gt.count()
        if denom == 0:
            logger.warning("au_f1: sample with no active units on either side; scoring 1.0")
            total += 1.0
        else:
            total += 2.0 * int(np.sum(pred.bits & gt.bits)) / denom
    return total / len(preds)


def au_emo(
    preds: Sequence[AUVector],
    emotions: Sequence[EmotionLabel],
    table: TypicalAUTable,
    registry: Optional[AURegistry] = None,
) -> float:
    """Mean per-sample 2|y_emo ∩ ŷ| / |y_emo|; range [0, 2]."""
    if not preds or len(preds) != len(emotions):
        raise InputError("au_emo needs aligned non-empty prediction/emotion lists")
    registry = registry or default_registry()
    total = 0.0
    for pred, emotion in zip(preds, emotions):
        typical = table.vector_for(emotion, registry)
        total += 2.0 * int(np.sum(pred.bits & typical.bits)) / typical.count()
    return total / len(preds)


class FrameEmbeddingProvider(Protocol):
    def embed_text(self, text: str) -> np.ndarray:
        ...

    def embed_frame(self, frame: np.ndarray) -> np.ndarray:
        ...


def _cosine(a: np.ndarray, b: np.ndarray) -> float:
    na, nb = float(np.linalg.norm(a)), float(np.linalg.norm(b))
    if na == 0.0 or nb == 0.0:
        raise NumericalError("zero-norm embedding in cosine similarity")
    return float(np.dot(a, b) / (na * nb))


def clip_s(
    text: str,
    frames: Sequence[np.ndarray],
    provider: FrameEmbeddingProvider,
) -> float:
    """max over frames of cos(text embedding, frame embedding), times 100."""
    if len(frames) == 0:
        raise InputError("clip_s needs at least one frame")
    e_text = np.asarray(provider.embed_text(text), dtype=np.float64)
    best = -math.inf
    for frame in frames:
        e_frame = np.asarray(provider.embed_frame(frame), dtype=np.float64)
        if e_frame.shape != e_text.shape:
            raise InputError(
                f"embedding widths differ: {e_frame.shape} vs {e_text.shape}"
            )
        best = max(best, _cosine(e_text, e_frame))
    return 100.0 * best


class HashFrameEmbedder:
    """Deterministic stand-in for a joint text/image embedding model.

    Text goes through the hash text embedder's summary vector; frames
    through a fixed seeded random projection. Scores are meaningful
    only as reproducible numbers, not as semantic similarity.
    """

    def __init__(self, frame_dim: int, embed_dim: int = 64, seed: int = 7):
        if frame_dim < 1 or embed_dim < 8:
            raise InputError("frame_dim >= 1 and embed_dim >= 8 required")
        self.embed_dim = embed_dim
        self._text = HashTextEmbedder(embed_dim, seed=seed)
        rng = np.random.default_rng(seed + 1)
        self._proj = rng.standard_normal((frame_dim, embed_dim)) / math.sqrt(frame_dim)

    def embed_text(self, text: str) -> np.ndarray:
        summary, _ = self._text.embed(text)
        return summary

    def embed_frame(self, frame: np.ndarray) -> np.ndarray:
        frame = np.asarray(frame, dtype=np.float64)
        if frame.shape != (self._proj.shape[0],):
            raise InputError(
                f"frame must be [{self._proj.shape[0]}], got {frame.shape}"
            )
        return frame @ self._proj


class ExternalScoreAdapter(Protocol):
    def score(self, generated_ref, reference_ref) -> float:
        ...


@dataclass
class SampleRecord:
    """One generated clip with whatever ground truth is available."""

    id: str
    au_pred: Optional[AUVector] = None
    au_true: Optional[AUVector] = None
    emotion: Optional[EmotionLabel] = None
    instruction: Optional[str] = None
    frames: Optional[np.ndarray] = None
    reference: Optional[np.ndarray] = None


@dataclass(frozen=True)
class MetricResult:
    value: Optional[float]
    n_samples: int
    notes: str = ""

    def to_json_dict(self) -> dict:
        return {"value": self.value, "n_samples": self.n_samples, "notes": self.notes}


@dataclass
class EvalReport:
    metrics: dict[str, MetricResult] = field(default_factory=dict)

    def to_json(self) -> str:
        return json.dumps(
            {name: m.to_json_dict() for name, m in self.metrics.items()},
            indent=2,
            sort_keys=True,
        )

    def to_text(self) -> str:
        lines = [f"{'metric':<10} {'value':>12} {'n':>6}  notes"]
        for name, m in self.metrics.items():
            value = "unavailable" if m.value is None else f"{m.value:.6f}"
            lines.append(f"{name:<10} {value:>12} {m.n_samples:>6}  {m.notes}")
        return "\n".join(lines)

    def save(self, path) -> None:
        with open(path, "w") as fh:
            fh.write(self.to_json() + "\n")


def evaluate_run(
    records: Sequence[SampleRecord],
    table: Optional[TypicalAUTable] = None,
    provider: Optional[FrameEmbeddingProvider] = None,
    adapters: Optional[Mapping[str, ExternalScoreAdapter]] = None,
) -> EvalReport:
    """Assemble the report; formula metrics always get a row."""
    if not records:
        raise InputError("evaluate_run needs at least one record")
    table = table or TypicalAUTable.load_default()
    report = EvalReport()

    paired = [r for r in records if r.au_pred is not None and r.au_true is not None]
    if paired:
        report.metrics["AU_F1"] = MetricResult(
            au_f1([r.au_pred for r in paired], [r.au_true for r in paired]),
            len(paired),
        )
    else:
        report.metrics["AU_F1"] = MetricResult(None, 0, "no AU-annotated samples")

    emo = [
        r
        for r in records
        if r.au_pred is not None
        and r.emotion is not None
        and r.emotion != EmotionLabel.NEUTRAL
    ]
    n_neutral = sum(1 for r in records if r.emotion == EmotionLabel.NEUTRAL)
    note = f"skipped {n_neutral} neutral samples" if n_neutral else ""
    if emo:
        report.metrics["AU_Emo"] = MetricResult(
            au_emo([r.au_pred for r in emo], [r.emotion for r in emo], table),
            len(emo),
            note,
        )
    else:
        report.metrics["AU_Emo"] = MetricResult(
            None, 0, note or "no emotion-labeled samples"
        )

    scored = [
        r for r in records if r.instruction is not None and r.frames is not None
    ]
    if scored and provider is not None:
        values = [
            clip_s(r.instruction, list(np.asarray(r.frames)), provider)
            for r in scored
        ]
        report.metrics["CLIP_S"] = MetricResult(
            float(np.mean(values)), len(scored)
        )
    else:
        reason = "no frame embedding provider" if provider is None else "no decoded frames"
        report.metrics["CLIP_S"] = MetricResult(None, 0, reason)

    for name, adapter in (adapters or {}).items():
        pairs = [r for r in records if r.frames is not None and r.reference is not None]
        try:
            if not pairs:
                raise InputError("no generated/reference pairs")
            values = [adapter.score(r.frames, r.reference) for r in pairs]
            if not all(math.isfinite(v) for v in values):
                raise NumericalError("adapter returned non-finite score")
            report.metrics[name] = MetricResult(float(np.mean(values)), len(pairs))
        except Exception as exc:
            logger.warning("adapter %s failed: %s", name, exc)
            report.metrics[name] = MetricResult(None, 0, f"unavailable: {exc}")
    return report
