"""Instruction and audio conditioning.

Instructions reach the denoiser through one of two branches keyed by
task. The emotion branch compresses the instruction to a single summary
vector (emotion is a global property of the clip); the motion branch
keeps every token vector so that cross attention can exploit phrase
structure and word order. Each branch owns a small residual adapter so
the two uses of the same text encoder can drift apart during training.

Text embedding itself is pluggable. The packaged HashTextEmbedder is a
deterministic stand-in for a pretrained sentence encoder: per-word
vectors are seeded hashes, a sinusoidal positional term mimics the
contextual (order-aware) token states of a real encoder, and the
summary is an order-canonicalized mean so it is bit-stable under token
permutation, like a pooled sentence embedding that saw the same bag of
words.
"""

from __future__ import annotations

import hashlib
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Protocol, Tuple

import numpy as np

from .autodiff import Tensor, gelu, matmul
from .core import ManifestEntry, TaskKind
from .errors import DataError, DimensionError, InputError

_TOKEN_RE = re.compile(r"[a-z0-9']+")


class TextEmbeddingProvider(Protocol):
    dim: int

    def embed(self, text: str) -> Tuple[np.ndarray, np.ndarray]:
        """Return (summary [dim], token vectors [k x dim]) for a text."""
        ...


class AudioFeatureProvider(Protocol):
    rate: float
    dim: int

    def features(self, path) -> np.ndarray:
        """Load audio features [n x dim] for a clip."""
        ...

    def silence(self, duration_s: float) -> np.ndarray:
        """Features standing in for silent audio of the given duration."""
        ...


def tokenize(text: str) -> list[str]:
    return _TOKEN_RE.findall(text.lower())


class HashTextEmbedder:
    """Deterministic text embedding stand-in (no learned weights)."""

    def __init__(self, dim: int, seed: int = 0, positional_scale: float = 0.3):
        if dim < 8:
            raise InputError(f"embedder dim must be >= 8, got {dim}")
        self.dim = int(dim)
        self.seed = int(seed)
        self.positional_scale = float(positional_scale)
        self._word_cache: dict[str, np.ndarray] = {}
        self._pos_cache: dict[int, np.ndarray] = {}

    def _raw_word_vec(self, token: str) -> np.ndarray:
        digest = hashlib.sha256(f"{self.seed}:w:{token}".encode()).digest()
        rng = np.random.default_rng(int.from_bytes(digest[:8], "little"))
        return rng.standard_normal(self.dim) / np.sqrt(self.dim)

    def _word_vec(self, token: str) -> np.ndarray:
        vec = self._word_cache.get(token)
        if vec is None:
            vec = self._raw_word_vec(token)
            vec.flags.writeable = False
            self._word_cache[token] = vec
        return vec

    def _pos_vec(self, i: int) -> np.ndarray:
        vec = self._pos_cache.get(i)
        if vec is None:
            half = self.dim // 2
            freq = np.exp(-np.log(10000.0) * np.arange(half) / half)
            vec = np.zeros(self.dim)
            vec[:half] = np.sin(i * freq)
            vec[half : 2 * half] = np.cos(i * freq)
            vec = vec / np.linalg.norm(vec) * self.positional_scale
            vec.flags.writeable = False
            self._pos_cache[i] = vec
        return vec

    def _token_weight(self, token: str) -> float:
        """Pooling weight of one token in the summary; 1.0 = plain mean."""
        return 1.0

    def embed(self, text: str) -> Tuple[np.ndarray, np.ndarray]:
        tokens = tokenize(text)
        if not tokens:
            raise InputError(f"instruction has no tokens: {text!r}")
        k = len(tokens)
        rows = np.stack(
            [self._word_vec(tok) + self._pos_vec(i) for i, tok in enumerate(tokens)]
        )
        # Summary is accumulated in a canonical order (sorted words,
        # ascending positions) so that permuting the input tokens cannot
        # change even the last bit of the result.
        word_sum = np.zeros(self.dim)
        total_weight = 0.0
        for tok in sorted(tokens):
            weight = self._token_weight(tok)
            word_sum = word_sum + weight * self._word_vec(tok)
            total_weight += weight
        pos_sum = np.zeros(self.dim)
        for i in range(k):
            pos_sum = pos_sum + self._pos_vec(i)
        summary = word_sum / total_weight + pos_sum / k
        return summary, rows


class SemanticTextEmbedder(HashTextEmbedder):
    """Hash embedder plus word-cluster structure from a concept lexicon.

    A pretrained sentence encoder places words of similar meaning close
    together; a pure hash embedder scatters them at random, so nothing
    learned about "cheerful" transfers to "merry". This variant restores
    that one property: every word mapped to the same concept id shares a
    dominant common component (cosine ~ concept_weight^2 between
    cluster mates), while unlisted words keep their plain hash vectors.
    Summary canonicalization and positional terms are inherited
    unchanged, so the permutation invariance of the summary still holds
    bit for bit.
    """

    def __init__(
        self,
        dim: int,
        seed: int = 0,
        positional_scale: float = 0.3,
        lexicon: Optional[dict] = None,
        concept_weight: float = 0.8,
        content_weight: float = 4.0,
    ):
        super().__init__(dim, seed=seed, positional_scale=positional_scale)
        if not 0.0 <= concept_weight < 1.0:
            raise InputError(
                f"concept_weight must be in [0, 1), got {concept_weight}"
            )
        if content_weight < 1.0:
            raise InputError(
                f"content_weight must be >= 1, got {content_weight}"
            )
        self.concept_weight = float(concept_weight)
        self.content_weight = float(content_weight)
        self.lexicon = {
            str(k).lower(): str(v) for k, v in (lexicon or {}).items()
        }
        self._concept_cache: dict = {}

    def _token_weight(self, token: str) -> float:
        # Attention-pooling stand-in: salient (lexicon) words dominate
        # the summary the way content words dominate a pooled sentence
        # embedding.
        return self.content_weight if token in self.lexicon else 1.0

    def _concept_vec(self, concept: str) -> np.ndarray:
        vec = self._concept_cache.get(concept)
        if vec is None:
            digest = hashlib.sha256(f"{self.seed}:c:{concept}".encode()).digest()
            rng = np.random.default_rng(int.from_bytes(digest[:8], "little"))
            vec = rng.standard_normal(self.dim) / np.sqrt(self.dim)
            vec.flags.writeable = False
            self._concept_cache[concept] = vec
        return vec

    def _raw_word_vec(self, token: str) -> np.ndarray:
        base = super()._raw_word_vec(token)
        concept = self.lexicon.get(token)
        if concept is None:
            return base
        w = self.concept_weight
        return np.sqrt(1.0 - w * w) * base + w * self._concept_vec(concept)


_ARTICLES = frozenset({"a", "an", "the"})


def default_concept_lexicon() -> dict:
    """Word-to-concept map built from the packaged instruction wordlists.

    Emotion synonyms share a per-emotion concept and degree adverbs a
    per-level concept, standing in for the distributional knowledge a
    pretrained encoder would bring. Multi-word entries contribute each
    non-article token.
    """
    from .instructions import default_bank

    bank = default_bank()
    lexicon: dict = {}

    def add(marker: str, concept: str):
        for tok in tokenize(marker):
            if tok not in _ARTICLES:
                lexicon[tok] = concept

    for emotion, synonyms in bank.synonyms.items():
        for s in synonyms:
            add(s, f"feeling:{emotion.value}")
    for level, adverbs in bank.adverbs.items():
        for a in adverbs:
            add(a, f"degree:{int(level)}")
    return lexicon


def default_text_embedder(dim: int, seed: int = 0) -> SemanticTextEmbedder:
    """The embedder the command-line pipeline trains and samples with."""
    return SemanticTextEmbedder(dim, seed=seed, lexicon=default_concept_lexicon())


class NpyAudioProvider:
    """Audio features stored as .npy files, one [n x dim] array per clip."""

    def __init__(self, dim: int, rate: float = 50.0, silence_seed: int = 1234):
        if dim < 1:
            raise InputError(f"audio feature dim must be >= 1, got {dim}")
        if rate <= 0:
            raise InputError(f"audio feature rate must be positive, got {rate}")
        self.dim = int(dim)
        self.rate = float(rate)
        # A fixed non-zero row: silence is a real signal to the model,
        # not the absence of input.
        rng = np.random.default_rng(silence_seed)
        self._silence_row = rng.standard_normal(self.dim) * 0.5
        self._silence_row.flags.writeable = False

    def features(self, path) -> np.ndarray:
        path = Path(path)
        if not path.exists():
            raise DataError(f"audio feature file not found: {path}")
        arr = np.asarray(np.load(path), dtype=np.float64)
        if arr.ndim != 2 or arr.shape[1] != self.dim:
            raise DimensionError(
                f"audio features at {path} have shape {arr.shape}, "
                f"expected [n x {self.dim}]"
            )
        return arr

    def silence(self, duration_s: float) -> np.ndarray:
        if duration_s <= 0:
            raise InputError(f"duration must be positive, got {duration_s}")
        n = max(1, int(round(duration_s * self.rate)))
        return np.tile(self._silence_row, (n, 1))


@dataclass
class AdapterParams:
    """Two-layer residual MLP acting row-wise at text-embedding width."""

    w1: Tensor
    b1: Tensor
    w2: Tensor
    b2: Tensor

    @classmethod
    def from_params(cls, params: dict, prefix: str) -> "AdapterParams":
        return cls(
            w1=params[f"{prefix}.w1"],
            b1=params[f"{prefix}.b1"],
            w2=params[f"{prefix}.w2"],
            b2=params[f"{prefix}.b2"],
        )


@dataclass
class AdapterPair:
    emotion: AdapterParams
    motion: AdapterParams

    def for_task(self, task: TaskKind) -> AdapterParams:
        return self.emotion if task == TaskKind.EMOTION_TALK else self.motion


def apply_adapter(x: Tensor, adapter: AdapterParams) -> Tensor:
    """x + MLP(x), keeping the input width."""
    hidden = gelu(matmul(x, adapter.w1) + adapter.b1)
    return x + (matmul(hidden, adapter.w2) + adapter.b2)


@dataclass
class InstructionRep:
    """Adapter output fed to cross attention: [k x d_txt] and its branch."""

    vectors: Tensor
    branch: TaskKind

    @property
    def array(self) -> np.ndarray:
        return self.vectors.data

    @property
    def k(self) -> int:
        return self.vectors.data.shape[0]


def encode_instruction(
    text: str,
    task: TaskKind,
    provider: TextEmbeddingProvider,
    adapters: AdapterPair,
) -> InstructionRep:
    """Build the branch-specific instruction representation.

    emotion_talk keeps only the summary vector (k == 1); motion_control
    keeps all token vectors so word order stays visible downstream.
    """
    if text is None or not text.strip():
        raise InputError("instruction text is empty")
    task = TaskKind(task)
    summary, tokens = provider.embed(text)
    if task == TaskKind.EMOTION_TALK:
        base = summary[None, :]
    else:
        base = tokens
    vectors = apply_adapter(Tensor(base), adapters.for_task(task))
    return InstructionRep(vectors=vectors, branch=task)


def align_audio(features: np.ndarray, n_frames: int) -> np.ndarray:
    """Rate-based linear resampling of [n x d] features to n_frames rows.

    Output row i is the linear interpolant of the input at position
    i * n / n_frames, clipped to [0, n - 1]; the identity when n equals
    n_frames.
    """
    features = np.asarray(features, dtype=np.float64)
    if features.ndim != 2 or features.shape[0] < 1:
        raise DimensionError(f"features must be [n x d] with n >= 1, got {features.shape}")
    if n_frames < 1:
        raise InputError(f"n_frames must be >= 1, got {n_frames}")
    n = features.shape[0]
    if n == n_frames:
        return features.copy()
    pos = np.arange(n_frames, dtype=np.float64) * (n / n_frames)
    pos = np.minimum(pos, n - 1.0)
    lo = np.floor(pos).astype(np.int64)
    hi = np.minimum(lo + 1, n - 1)
    frac = (pos - lo)[:, None]
    return (1.0 - frac) * features[lo] + frac * features[hi]


def audio_features(
    entry: ManifestEntry,
    provider: AudioFeatureProvider,
    n_frames: int,
    projection_w: np.ndarray,
    projection_b: np.ndarray,
    frame_rate: float = 25.0,
    root=None,
) -> np.ndarray:
    """Frame-aligned, motion-width audio term for one clip.

    emotion_talk clips read their recorded features; motion_control
    clips get the provider's silence signal of matching duration (the
    model must learn that this combination means "no speech").
    """
    raw = raw_audio_features(entry, provider, n_frames, frame_rate, root)
    aligned = align_audio(raw, n_frames)
    w = np.asarray(projection_w, dtype=np.float64)
    b = np.asarray(projection_b, dtype=np.float64)
    if aligned.shape[1] != w.shape[0]:
        raise DimensionError(
            f"audio width {aligned.shape[1]} incompatible with projection {w.shape}"
        )
    return aligned @ w + b


def raw_audio_features(
    entry: ManifestEntry,
    provider: AudioFeatureProvider,
    n_frames: int,
    frame_rate: float = 25.0,
    root=None,
) -> np.ndarray:
    """Unaligned provider features for a clip (silence for motion tasks)."""
    if entry.task == TaskKind.EMOTION_TALK:
        if entry.audio_path is None:
            raise DataError(f"entry {entry.id}: emotion_talk clip has no audio_path")
        path = Path(root) / entry.audio_path if root is not None else entry.audio_path
        return provider.features(path)
    return provider.silence(n_frames / frame_rate)


@dataclass
class ConditioningBundle:
    """Everything the sampling loop needs besides the current state."""

    audio: np.ndarray  # [n_frames x d_mot], already projected
    rep: InstructionRep
    keyframe: np.ndarray  # [1 x d_mot]
    task: TaskKind

    def __post_init__(self):
        self.audio = np.asarray(self.audio, dtype=np.float64)
        self.keyframe = np.asarray(self.keyframe, dtype=np.float64)
        if self.keyframe.ndim != 2 or self.keyframe.shape[0] != 1:
            raise DimensionError(
                f"keyframe must be [1 x d_mot], got {self.keyframe.shape}"
            )
        if TaskKind(self.task) != self.rep.branch:
            raise InputError(
                f"bundle task {self.task} does not match rep branch {self.rep.branch}"
            )
