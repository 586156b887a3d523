"""Synthetic desk-scale corpora with a known generative structure.

Emotion clips live around per-emotion mean directions (orthogonal by
construction) plus a per-person offset and smooth low-frequency noise;
their action units are the four typical units of the emotion plus a
deterministic lips_part filler. Motion clips encode one of a small set
of parameterized trajectories with fixed instruction phrasings. The
corpus ships with a linear invertible codec (stand-in for a frame
decoder) and a nearest-centroid oracle classifier fit at construction
time, so generated latents can be scored without any external model.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np

from .core import (
    AURegistry,
    AUVector,
    EmotionLabel,
    IntensityLevel,
    ManifestEntry,
    TaskKind,
    default_registry,
    load_manifest,
    write_manifest,
)
from .errors import ConfigError, InputError, ValidationError
from .evalsuite import TypicalAUTable
from .instructions import TemplateBank, default_bank, expand_emotion_label

FILLER_AU = "lips_part"
DEFAULT_EMOTIONS = (
    EmotionLabel.HAPPY,
    EmotionLabel.ANGRY,
    EmotionLabel.SAD,
    EmotionLabel.SURPRISED,
)


def smooth_noise(
    rng: np.random.Generator,
    n_frames: int,
    dim: int,
    sigma: float,
    n_waves: int = 4,
) -> np.ndarray:
    """Low-frequency noise: a small mixture of random sinusoids per dim.

    Smooth in time (band-limited), roughly sigma per-entry scale.
    """
    t = np.arange(n_frames, dtype=np.float64)[:, None, None]
    freqs = rng.uniform(0.5, 3.0, size=(1, dim, n_waves))
    phases = rng.uniform(0.0, 2.0 * np.pi, size=(1, dim, n_waves))
    amps = rng.normal(0.0, 1.0, size=(1, dim, n_waves))
    waves = amps * np.sin(2.0 * np.pi * freqs * t / max(n_frames, 1) + phases)
    out = waves.sum(axis=2)
    # Each entry is a sum of n_waves sinusoids with N(0,1) amplitudes and
    # average sin^2 of 1/2, so its std is sqrt(n_waves / 2).
    return out * (sigma / math.sqrt(n_waves / 2.0))


def direction_bank(dim: int, n_directions: int, seed: int) -> np.ndarray:
    """[dim x n] orthonormal columns with a sign convention."""
    if n_directions > dim:
        raise ConfigError(
            f"cannot draw {n_directions} orthogonal directions in {dim} dims"
        )
    rng = np.random.default_rng(seed)
    q, _ = np.linalg.qr(rng.standard_normal((dim, n_directions)))
    for j in range(n_directions):
        col = q[:, j]
        lead = col[np.nonzero(np.abs(col) > 1e-12)[0][0]]
        if lead < 0:
            q[:, j] = -col
    return q


@dataclass(frozen=True)
class LinearCodec:
    """Invertible linear map between motion latents and 'frame' vectors."""

    weight: np.ndarray
    bias: np.ndarray

    def __post_init__(self):
        w, b = self.weight, self.bias
        if w.ndim != 2 or w.shape[0] != w.shape[1]:
            raise ValidationError("codec weight must be square")
        if b.shape != (w.shape[1],):
            raise ValidationError("codec bias shape mismatch")

    @property
    def d_mot(self) -> int:
        return self.weight.shape[0]

    def decode(self, motion: np.ndarray) -> np.ndarray:
        return motion @ self.weight + self.bias

    def encode(self, frames: np.ndarray) -> np.ndarray:
        return (frames - self.bias) @ self.weight.T

    @classmethod
    def random(cls, d_mot: int, seed: int) -> "LinearCodec":
        rng = np.random.default_rng(seed)
        q, _ = np.linalg.qr(rng.standard_normal((d_mot, d_mot)))
        bias = rng.normal(0.0, 0.1, size=d_mot)
        return cls(q, bias)

    def save(self, path) -> None:
        np.savez(path, weight=self.weight, bias=self.bias)

    @classmethod
    def load(cls, path) -> "LinearCodec":
        with np.load(path, allow_pickle=False) as data:
            return cls(data["weight"].copy(), data["bias"].copy())


@dataclass(frozen=True)
class AUOracle:
    """Nearest-centroid emotion classifier over clip time-means.

    Fit on the construction-time clips; classifies a latent track to an
    emotion and reports that emotion's corpus AU assignment.
    """

    emotions: tuple[EmotionLabel, ...]
    centroids: np.ndarray
    au_bits: np.ndarray

    def __post_init__(self):
        if self.centroids.shape[0] != len(self.emotions):
            raise ValidationError("one centroid per emotion required")
        if self.au_bits.shape != (len(self.emotions), len(default_registry())):
            raise ValidationError("au_bits must be [n_emotions x 41]")

    def classify(self, track: np.ndarray) -> EmotionLabel:
        track = np.asarray(track, dtype=np.float64)
        if track.ndim != 2 or track.shape[1] != self.centroids.shape[1]:
            raise InputError(
                f"track must be [n x {self.centroids.shape[1]}], got {track.shape}"
            )
        mean = track.mean(axis=0)
        dists = np.linalg.norm(self.centroids - mean[None, :], axis=1)
        return self.emotions[int(np.argmin(dists))]

    def au_for(self, track: np.ndarray) -> AUVector:
        idx = self.emotions.index(self.classify(track))
        return AUVector(self.au_bits[idx].copy())

    def save(self, path) -> None:
        np.savez(
            path,
            centroids=self.centroids,
            au_bits=self.au_bits,
            emotions=np.array([str(e) for e in self.emotions]),
        )

    @classmethod
    def load(cls, path) -> "AUOracle":
        with np.load(path, allow_pickle=False) as data:
            emotions = tuple(EmotionLabel(str(e)) for e in data["emotions"])
            return cls(emotions, data["centroids"].copy(), data["au_bits"].copy())


def _traj_nod(t: np.ndarray) -> np.ndarray:
    return np.sin(2.0 * np.pi * 2.0 * t)


def _traj_shake(t: np.ndarray) -> np.ndarray:
    return np.sin(2.0 * np.pi * 3.0 * t)


def _traj_tilt_hold(t: np.ndarray) -> np.ndarray:
    s = np.clip(t / 0.4, 0.0, 1.0)
    return s * s * (3.0 - 2.0 * s)


def _traj_ramp(t: np.ndarray) -> np.ndarray:
    return t


def _traj_arch(t: np.ndarray) -> np.ndarray:
    return np.sin(np.pi * t)


def _traj_hold(t: np.ndarray) -> np.ndarray:
    return np.ones_like(t)


def _traj_pulse(t: np.ndarray) -> np.ndarray:
    return np.exp(-0.5 * ((t - 0.5) / 0.08) ** 2)


def _traj_sway(t: np.ndarray) -> np.ndarray:
    return np.sin(2.0 * np.pi * t)


# kind -> (trajectory over normalized time [0, 1], instruction phrasings)
MOTION_KINDS: dict[str, tuple[Callable[[np.ndarray], np.ndarray], tuple[str, ...]]] = {
    "nod": (_traj_nod, (
        "nod your head twice",
        "give two quick nods",
        "nod a couple of times",
    )),
    "shake": (_traj_shake, (
        "shake your head from side to side",
        "turn your head left and right repeatedly",
    )),
    "tilt_hold": (_traj_tilt_hold, (
        "tilt your head to the left and hold it there",
        "lean your head left and keep it still",
    )),
    "ramp": (_traj_ramp, (
        "raise your chin slowly until the end",
        "lift your chin gradually over the whole clip",
    )),
    "arch": (_traj_arch, (
        "look up briefly and come back down",
        "glance upward then return to center",
    )),
    "hold": (_traj_hold, (
        "hold your head perfectly still",
        "keep your head fixed in place",
        "stay completely motionless",
    )),
    "pulse": (_traj_pulse, (
        "jerk your head forward once in the middle",
        "make one quick forward motion midway through",
    )),
    "sway": (_traj_sway, (
        "sway your head gently in a slow rhythm",
        "rock your head slowly from one side to the other",
    )),
}


@dataclass
class SynthCorpus:
    root: Path
    entries: list[ManifestEntry]
    codec: LinearCodec
    oracle: AUOracle
    meta: dict = field(default_factory=dict)

    @property
    def manifest_path(self) -> Path:
        return self.root / "manifest.jsonl"


def corpus_au_for(
    emotion: EmotionLabel,
    table: Optional[TypicalAUTable] = None,
    registry: Optional[AURegistry] = None,
) -> AUVector:
    """The corpus AU assignment rule: 4 typical units + lips_part filler."""
    table = table or TypicalAUTable.load_default()
    registry = registry or default_registry()
    names = set(table.units_for(emotion)) | {FILLER_AU}
    return AUVector.from_names(sorted(names), registry)


def synth_corpus(
    out_dir,
    n_clips_per_emotion: int = 50,
    emotions: Sequence[EmotionLabel] = DEFAULT_EMOTIONS,
    n_motion_clips: int = 0,
    n_persons: int = 4,
    n_frames: int = 24,
    d_mot: int = 24,
    d_aud: int = 16,
    seed: int = 0,
    frame_rate: float = 25.0,
    audio_rate: float = 50.0,
    emotion_scale: float = 3.0,
    person_scale: float = 0.5,
    motion_scale: float = 3.0,
    noise_sigma: float = 0.25,
    template_indices: Optional[Sequence[int]] = None,
    bank: Optional[TemplateBank] = None,
) -> SynthCorpus:
    """Generate a corpus on disk; fully reproducible per seed.

    Every emotion clip of person p with emotion e and level v is
    (0.9 + 0.1 v) * emotion_scale * mu_e + person_scale * nu_p + smooth
    noise, so clip time-means cluster by emotion with a wide margin.
    """
    emotions = tuple(EmotionLabel(e) for e in emotions)
    if len(set(emotions)) != len(emotions):
        raise ConfigError("duplicate emotions in corpus request")
    if EmotionLabel.NEUTRAL in emotions:
        raise ConfigError("neutral has no typical-AU row; use non-neutral emotions")
    if n_clips_per_emotion < n_persons:
        raise ConfigError("need n_clips_per_emotion >= n_persons for keyframe donors")
    if len(emotions) < 2 and n_clips_per_emotion > 0:
        raise ConfigError("need >= 2 emotions for keyframe anti-leakage donors")
    kinds = tuple(MOTION_KINDS)
    n_dirs = len(emotions) + n_persons + len(kinds)
    if n_dirs > d_mot:
        raise ConfigError(
            f"d_mot={d_mot} too small for {n_dirs} orthogonal directions"
        )

    bank = bank or default_bank()
    table = TypicalAUTable.load_default()
    registry = default_registry()
    rng = np.random.default_rng(seed)
    bank_q = direction_bank(d_mot, n_dirs, seed + 1)
    mu = emotion_scale * bank_q[:, : len(emotions)].T
    nu = person_scale * bank_q[:, len(emotions) : len(emotions) + n_persons].T
    motion_dirs = bank_q[:, len(emotions) + n_persons :].T

    root = Path(out_dir)
    for sub in ("motion", "pose", "audio"):
        (root / sub).mkdir(parents=True, exist_ok=True)

    entries: list[ManifestEntry] = []
    sums = np.zeros((len(emotions), d_mot))
    counts = np.zeros(len(emotions), dtype=np.int64)

    n_audio = int(round(n_frames * audio_rate / frame_rate))
    for e_idx, emotion in enumerate(emotions):
        au = corpus_au_for(emotion, table, registry)
        for i in range(n_clips_per_emotion):
            person = i % n_persons
            level = IntensityLevel(int(rng.integers(1, 4)))
            instruction = expand_emotion_label(
                emotion, level, bank, rng, template_indices
            )
            scale = 0.9 + 0.1 * int(level)
            track = (
                scale * mu[e_idx][None, :]
                + nu[person][None, :]
                + smooth_noise(rng, n_frames, d_mot, noise_sigma)
            )
            pose = smooth_noise(rng, n_frames, 6, 0.1)
            audio = smooth_noise(rng, n_audio, d_aud, 1.0)
            clip_id = f"emo_{emotion.value}_{i:03d}"
            np.save(root / "motion" / f"{clip_id}.npy", track)
            np.save(root / "pose" / f"{clip_id}.npy", pose)
            np.save(root / "audio" / f"{clip_id}.npy", audio)
            entries.append(
                ManifestEntry(
                    id=clip_id,
                    person_id=f"p{person:02d}",
                    task=TaskKind.EMOTION_TALK,
                    n_frames=n_frames,
                    motion_path=f"motion/{clip_id}.npy",
                    pose_path=f"pose/{clip_id}.npy",
                    audio_path=f"audio/{clip_id}.npy",
                    instruction=instruction,
                    emotion=emotion,
                    intensity=level,
                    au=au,
                ).validate()
            )
            sums[e_idx] += track.mean(axis=0)
            counts[e_idx] += 1

    t_norm = np.arange(n_frames, dtype=np.float64) / max(n_frames - 1, 1)
    for i in range(n_motion_clips):
        kind = kinds[i % len(kinds)]
        person = i % n_persons
        traj_fn, phrasings = MOTION_KINDS[kind]
        instruction = phrasings[int(rng.integers(len(phrasings)))]
        direction = motion_dirs[kinds.index(kind)]
        track = (
            motion_scale * traj_fn(t_norm)[:, None] * direction[None, :]
            + nu[person][None, :]
            + smooth_noise(rng, n_frames, d_mot, noise_sigma)
        )
        pose = smooth_noise(rng, n_frames, 6, 0.1)
        clip_id = f"mot_{kind}_{i:03d}"
        np.save(root / "motion" / f"{clip_id}.npy", track)
        np.save(root / "pose" / f"{clip_id}.npy", pose)
        entries.append(
            ManifestEntry(
                id=clip_id,
                person_id=f"p{person:02d}",
                task=TaskKind.MOTION_CONTROL,
                n_frames=n_frames,
                motion_path=f"motion/{clip_id}.npy",
                pose_path=f"pose/{clip_id}.npy",
                instruction=instruction,
            ).validate()
        )

    write_manifest(entries, root / "manifest.jsonl", registry)

    centroids = sums / np.maximum(counts, 1)[:, None]
    au_bits = np.stack(
        [corpus_au_for(e, table, registry).bits for e in emotions]
    )
    oracle = AUOracle(emotions, centroids, au_bits)
    oracle.save(root / "oracle.npz")
    codec = LinearCodec.random(d_mot, seed + 2)
    codec.save(root / "codec.npz")

    meta = {
        "seed": seed,
        "emotions": [str(e) for e in emotions],
        "n_clips_per_emotion": n_clips_per_emotion,
        "n_motion_clips": n_motion_clips,
        "n_persons": n_persons,
        "n_frames": n_frames,
        "d_mot": d_mot,
        "d_aud": d_aud,
        "frame_rate": frame_rate,
        "audio_rate": audio_rate,
        "emotion_scale": emotion_scale,
        "person_scale": person_scale,
        "motion_scale": motion_scale,
        "noise_sigma": noise_sigma,
        "template_indices": (
            None if template_indices is None else list(map(int, template_indices))
        ),
        "motion_kinds": list(kinds),
    }
    (root / "meta.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
    return SynthCorpus(root, entries, codec, oracle, meta)


def load_corpus(root) -> SynthCorpus:
    root = Path(root)
    manifest = root / "manifest.jsonl"
    if not manifest.exists():
        raise InputError(f"no manifest at {manifest}")
    entries = load_manifest(manifest)
    codec = LinearCodec.load(root / "codec.npz")
    oracle = AUOracle.load(root / "oracle.npz")
    meta = json.loads((root / "meta.json").read_text())
    return SynthCorpus(root, entries, codec, oracle, meta)
