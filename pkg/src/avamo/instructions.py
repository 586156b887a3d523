"""Instruction construction: templates, synonyms, adverbs, AU paraphrase.

Emotion instructions are built by template expansion: a template with a
single [EMO] slot, a synonym of the emotion, and an intensity adverb
(level 1 softens, level 3 amplifies, level 2 adds nothing). AU-grounded
instructions go through an external paraphrase client instead; real
calls are replayed from recorded fixtures keyed by a hash of the
request, so tests never touch the network.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from importlib.resources import files as _pkg_files
from pathlib import Path
from typing import Callable, Optional, Protocol, Sequence

import numpy as np

from .core import AURegistry, AUVector, EmotionLabel, IntensityLevel, default_registry
from .errors import ClientError, ContractError, InputError, ValidationError

MIN_TEMPLATES = 60
PLACEHOLDER = "[EMO]"

# Fixed members of the pseudo-neutral instruction set; expansion with
# the neutral label supplies the variable remainder.
PSEUDO_NEUTRAL_FIXED = (
    "Talk with neutral emotion",
    "Talk with an emotionless face",
)


@dataclass(frozen=True)
class TemplateBank:
    templates: tuple[str, ...]
    synonyms: dict[EmotionLabel, tuple[str, ...]]
    adverbs: dict[IntensityLevel, tuple[str, ...]]

    def validate(self) -> "TemplateBank":
        if len(self.templates) < MIN_TEMPLATES:
            raise ValidationError(
                f"template bank needs >= {MIN_TEMPLATES} templates, "
                f"got {len(self.templates)}"
            )
        for tpl in self.templates:
            if tpl.count(PLACEHOLDER) != 1:
                raise ValidationError(
                    f"template must contain {PLACEHOLDER} exactly once: {tpl!r}"
                )
        for emotion in EmotionLabel:
            if not self.synonyms.get(emotion):
                raise ValidationError(f"no synonyms for emotion {emotion}")
        for level in (IntensityLevel.LOW, IntensityLevel.HIGH):
            if not self.adverbs.get(level):
                raise ValidationError(f"no adverbs for intensity level {int(level)}")
        # Hygiene: substring collisions would make expansion ambiguous to
        # parse and break frequency checks downstream.
        all_markers = [s for syns in self.synonyms.values() for s in syns]
        all_markers += [a for advs in self.adverbs.values() for a in advs]
        for tpl in self.templates:
            for marker in all_markers:
                if marker in tpl:
                    raise ValidationError(
                        f"template {tpl!r} contains marker word {marker!r}"
                    )
        for emotion, syns in self.synonyms.items():
            for a in syns:
                for b in syns:
                    if a != b and a in b:
                        raise ValidationError(
                            f"synonym {a!r} is a substring of {b!r} for {emotion}"
                        )
        return self

    @classmethod
    def load_default(cls) -> "TemplateBank":
        data = _pkg_files("avamo.data")
        templates = tuple(
            line.strip()
            for line in data.joinpath("templates.txt").read_text().splitlines()
            if line.strip()
        )
        syn_raw = json.loads(data.joinpath("synonyms.json").read_text())
        synonyms = {
            EmotionLabel(k): tuple(v) for k, v in syn_raw.items()
        }
        adv_raw = json.loads(data.joinpath("adverbs.json").read_text())
        adverbs = {
            IntensityLevel(int(k)): tuple(v) for k, v in adv_raw.items()
        }
        return cls(templates, synonyms, adverbs).validate()


_DEFAULT_BANK: Optional[TemplateBank] = None


def default_bank() -> TemplateBank:
    global _DEFAULT_BANK
    if _DEFAULT_BANK is None:
        _DEFAULT_BANK = TemplateBank.load_default()
    return _DEFAULT_BANK


def expand_emotion_label(
    emotion: EmotionLabel,
    intensity: IntensityLevel,
    bank: TemplateBank,
    rng: np.random.Generator,
    template_indices: Optional[Sequence[int]] = None,
) -> str:
    """Render one instruction: template + synonym + intensity adverb.

    template_indices restricts the template choice (train/eval splits);
    the default uses the whole bank.
    """
    emotion = EmotionLabel(emotion)
    intensity = IntensityLevel(intensity)
    if template_indices is None:
        indices = range(len(bank.templates))
    else:
        indices = list(template_indices)
        if not indices:
            raise InputError("template_indices is empty")
        for i in indices:
            if not 0 <= i < len(bank.templates):
                raise InputError(f"template index {i} out of range")
    template = bank.templates[indices[int(rng.integers(len(indices)))]]
    synonyms = bank.synonyms[emotion]
    synonym = synonyms[int(rng.integers(len(synonyms)))]
    if intensity == IntensityLevel.MEDIUM:
        replacement = synonym
    else:
        adverbs = bank.adverbs[intensity]
        adverb = adverbs[int(rng.integers(len(adverbs)))]
        replacement = f"{adverb} {synonym}"
    return template.replace(PLACEHOLDER, replacement)


def pseudo_neutral_instruction(rng: np.random.Generator, bank: TemplateBank) -> str:
    """Instruction for clips with no emotion annotation.

    Uniform over {the two fixed strings, a fresh neutral expansion}.
    """
    choice = int(rng.integers(len(PSEUDO_NEUTRAL_FIXED) + 1))
    if choice < len(PSEUDO_NEUTRAL_FIXED):
        return PSEUDO_NEUTRAL_FIXED[choice]
    return expand_emotion_label(
        EmotionLabel.NEUTRAL, IntensityLevel.MEDIUM, bank, rng
    )


def intersect_aus(frames: Sequence[AUVector]) -> AUVector:
    """Bitwise AND across per-frame AU vectors (consensus annotation)."""
    if not frames:
        raise InputError("intersect_aus needs at least one frame vector")
    bits = frames[0].bits.copy()
    for vec in frames[1:]:
        bits &= vec.bits
    return AUVector(bits)


@dataclass(frozen=True)
class ParaphraseResult:
    sentences: tuple[str, ...]
    corrected_aus: Optional[tuple[str, ...]] = None


class ParaphraseClient(Protocol):
    def paraphrase(self, au_names: Sequence[str], image_ref: Optional[str]) -> ParaphraseResult:
        ...


def request_key(au_names: Sequence[str], image_ref: Optional[str]) -> str:
    """Stable fixture key for a paraphrase request."""
    payload = json.dumps(
        {"aus": sorted(au_names), "image": image_ref}, sort_keys=True
    )
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()


def _validate_result(
    raw: dict, origin: str, registry: AURegistry
) -> ParaphraseResult:
    if not isinstance(raw, dict):
        raise ContractError(f"{origin}: response must be a JSON object")
    sentences = raw.get("sentences")
    if not isinstance(sentences, list) or not sentences or not all(
        isinstance(s, str) and s.strip() for s in sentences
    ):
        raise ClientError(f"{origin}: response contains no usable sentences")
    corrected = raw.get("corrected_aus")
    if corrected is not None:
        if not isinstance(corrected, list):
            raise ContractError(f"{origin}: corrected_aus must be a list")
        for name in corrected:
            if name not in registry:
                raise ContractError(
                    f"{origin}: unknown action unit name {name!r} in correction"
                )
        corrected = tuple(corrected)
    return ParaphraseResult(tuple(s.strip() for s in sentences), corrected)


class FixtureParaphraseClient:
    """Replays recorded paraphrase responses from a fixture directory.

    Each fixture is <request_key>.json holding {"sentences": [...],
    "corrected_aus": [...] | null}.
    """

    def __init__(self, fixture_dir, registry: Optional[AURegistry] = None):
        self.fixture_dir = Path(fixture_dir)
        self.registry = registry or default_registry()
        if not self.fixture_dir.is_dir():
            raise InputError(f"fixture directory not found: {self.fixture_dir}")

    def paraphrase(self, au_names: Sequence[str], image_ref: Optional[str] = None) -> ParaphraseResult:
        key = request_key(au_names, image_ref)
        path = self.fixture_dir / f"{key}.json"
        if not path.exists():
            raise ClientError(
                f"no fixture for request key {key} "
                f"(aus={sorted(au_names)}, image={image_ref!r})"
            )
        try:
            raw = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise ContractError(f"fixture {path.name} is not valid JSON: {exc}") from None
        return _validate_result(raw, f"fixture {path.name}", self.registry)


# Prompt for the live annotation path. Kept intentionally strict about
# the output shape so parsing stays trivial.
LIVE_PROMPT = (
    "You are annotating a talking-face video. The frame and the detected "
    "facial action units are provided. Detected action units: {au_list}. "
    "First check the list against the image: remove any unit that is "
    "clearly wrong and add any clearly visible unit that is missing. "
    "Then write {n} short, natural, varied instruction sentences that ask "
    "a person to move their face this way, without naming any emotion. "
    'Reply with JSON only: {{"corrected_aus": [...], "sentences": [...]}} '
    "using exactly these snake_case unit names."
)


class LiveParaphraseClient:
    """Adapter for a chat-completion style endpoint.

    ``transport`` is a callable taking the request payload dict and
    returning the provider's response dict; wiring credentials and HTTP
    is the caller's responsibility. Responses must contain a single JSON
    object in the first message content.
    """

    def __init__(
        self,
        transport: Callable[[dict], dict],
        model: str = "vision-annotator",
        n_sentences: int = 5,
        registry: Optional[AURegistry] = None,
    ):
        if n_sentences < 3:
            raise InputError("ask for at least 3 sentences")
        self.transport = transport
        self.model = model
        self.n_sentences = n_sentences
        self.registry = registry or default_registry()

    def paraphrase(self, au_names: Sequence[str], image_ref: Optional[str] = None) -> ParaphraseResult:
        prompt = LIVE_PROMPT.format(au_list=", ".join(sorted(au_names)), n=self.n_sentences)
        content: list = [{"type": "text", "text": prompt}]
        if image_ref is not None:
            content.append({"type": "image_url", "image_url": {"url": str(image_ref)}})
        payload = {
            "model": self.model,
            "messages": [{"role": "user", "content": content}],
        }
        try:
            response = self.transport(payload)
        except Exception as exc:
            raise ClientError(f"paraphrase transport failed: {exc}") from exc
        try:
            text = response["choices"][0]["message"]["content"]
        except (KeyError, IndexError, TypeError):
            raise ContractError("response missing choices[0].message.content") from None
        start, end = text.find("{"), text.rfind("}")
        if start < 0 or end <= start:
            raise ContractError("response content contains no JSON object")
        try:
            raw = json.loads(text[start : end + 1])
        except json.JSONDecodeError as exc:
            raise ContractError(f"response JSON is malformed: {exc}") from None
        return _validate_result(raw, "live response", self.registry)


def paraphrase_aus(
    au: AUVector,
    image_ref: Optional[str],
    client: ParaphraseClient,
    rng: np.random.Generator,
    registry: Optional[AURegistry] = None,
) -> tuple[str, AUVector]:
    """AU-grounded instruction via the paraphrase client.

    Returns (instruction, final AU vector); the client may correct the
    AU set, in which case the corrected set wins.
    """
    registry = registry or default_registry()
    names = au.to_names(registry)
    if not names:
        raise InputError("paraphrase_aus needs at least one active unit")
    result = client.paraphrase(names, image_ref)
    sentence = result.sentences[int(rng.integers(len(result.sentences)))]
    final_au = au
    if result.corrected_aus is not None:
        final_au = AUVector.from_names(result.corrected_aus, registry)
    return sentence, final_au
