"""Losses, optimizer, keyframe policy and the training loop.

The keyframe fed to cross attention is chosen to prevent answer
leakage: an emotion clip gets a random frame from a *different-emotion*
clip of the same person (a keyframe must reveal identity, never the
emotion being supervised), while a motion clip uses a frame of its own
clip (appearance is not the supervised quantity there).

Loss = mse + lambda_pose * pose + lambda_au * au + lambda_inten * inten,
where au and inten exist only for emotion clips and contribute 0.0 to
the reported breakdown otherwise.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .conditioning import (
    AudioFeatureProvider,
    TextEmbeddingProvider,
    align_audio,
    encode_instruction,
    raw_audio_features,
)
from .core import (
    AUVector,
    IntensityLevel,
    ManifestEntry,
    TaskKind,
)
from .denoiser import Denoiser, PredictionBundle
from .diffusion import NoiseSchedule
from .errors import DataError, DimensionError, InputError, NumericalError
from .synthetic import smooth_noise

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class LossWeights:
    lambda_pose: float = 1.0
    lambda_au: float = 0.1
    lambda_inten: float = 0.1


@dataclass(frozen=True)
class OptimizerConfig:
    peak_lr: float = 1e-5
    warmup_steps: int = 8000
    beta1: float = 0.9
    beta2: float = 0.98
    eps: float = 1e-8
    grad_clip: float = 1.0


@dataclass(frozen=True)
class LossBreakdown:
    mse: float
    pose: float
    au: float
    inten: float
    total: float


@dataclass
class TrainingTargets:
    m0: np.ndarray
    pose: np.ndarray
    au: Optional[AUVector] = None
    intensity: Optional[IntensityLevel] = None


def lr_at(step: int, cfg: OptimizerConfig) -> float:
    """Linear warmup to peak_lr, then inverse square-root decay.

    Continuous at the boundary: both expressions give peak_lr at
    step == warmup_steps.
    """
    if step < 1:
        raise InputError(f"step must be >= 1, got {step}")
    if cfg.warmup_steps < 1:
        raise InputError(f"warmup_steps must be >= 1, got {cfg.warmup_steps}")
    if step <= cfg.warmup_steps:
        return cfg.peak_lr * step / cfg.warmup_steps
    return cfg.peak_lr * float(np.sqrt(cfg.warmup_steps / step))


def _loss_graph(out: dict, targets: TrainingTargets, weights: LossWeights):
    """Per-clip loss terms as graph Tensors; au/inten may be None."""
    m0 = ad.constant(targets.m0)
    diff = out["m0_hat"] - m0
    mse = ad.tmean(diff * diff)
    pdiff = out["pose"] - ad.constant(targets.pose)
    pose = ad.tmean(pdiff * pdiff)
    au = inten = None
    if targets.au is not None:
        au = ad.bce_with_logits_mean(out["au_logits"], targets.au.as_float())
    if targets.intensity is not None:
        inten = ad.cross_entropy_logits(
            out["intensity_logits"], int(targets.intensity) - 1
        )
    return mse, pose, au, inten


def compute_losses(
    prediction,
    targets: TrainingTargets,
    weights: LossWeights = LossWeights(),
    clip_id: Optional[str] = None,
) -> LossBreakdown:
    """Loss breakdown for a single clip prediction.

    Accepts a PredictionBundle or the forward() output dict. Absent
    au/intensity targets contribute exactly 0.0.
    """
    if isinstance(prediction, PredictionBundle):
        out = {
            "m0_hat": ad.constant(prediction.m0_hat.data),
            "pose": ad.constant(prediction.pose.data),
            "au_logits": ad.constant(prediction.au_logits),
            "intensity_logits": ad.constant(prediction.intensity_logits),
        }
    else:
        out = prediction
    with ad.no_grad():
        mse, pose, au, inten = _loss_graph(out, targets, weights)
    mse_v = mse.item()
    pose_v = pose.item()
    au_v = au.item() if au is not None else 0.0
    inten_v = inten.item() if inten is not None else 0.0
    total = (
        mse_v
        + weights.lambda_pose * pose_v
        + weights.lambda_au * au_v
        + weights.lambda_inten * inten_v
    )
    breakdown = LossBreakdown(mse_v, pose_v, au_v, inten_v, total)
    if not all(np.isfinite([mse_v, pose_v, au_v, inten_v, total])):
        raise NumericalError(
            f"non-finite loss for clip {clip_id!r}: {breakdown}"
        )
    return breakdown


def select_keyframe(
    entry: ManifestEntry,
    manifest: Sequence[ManifestEntry],
    rng: np.random.Generator,
    store: "ClipStore",
) -> np.ndarray:
    """Pick the conditioning keyframe for one training example.

    emotion_talk: uniform frame of a uniform same-person, different-
    emotion clip. motion_control: uniform frame of the clip itself.
    Returns a [1 x d_mot] array.
    """
    if entry.task == TaskKind.MOTION_CONTROL:
        motion = store.motion(entry)
        idx = int(rng.integers(motion.shape[0]))
        return motion[idx : idx + 1].copy()
    donors = [
        e
        for e in manifest
        if e.person_id == entry.person_id
        and e.task == TaskKind.EMOTION_TALK
        and e.emotion != entry.emotion
    ]
    if not donors:
        raise DataError(
            f"entry {entry.id}: no different-emotion clip of person "
            f"{entry.person_id!r} to donate a keyframe"
        )
    donor = donors[int(rng.integers(len(donors)))]
    motion = store.motion(donor)
    idx = int(rng.integers(motion.shape[0]))
    return motion[idx : idx + 1].copy()


class ClipStore:
    """Lazily loads and caches per-clip arrays referenced by a manifest."""

    def __init__(self, root, frame_rate: float = 25.0):
        self.root = Path(root)
        self.frame_rate = frame_rate
        self._motion: dict[str, np.ndarray] = {}
        self._pose: dict[str, np.ndarray] = {}
        self._audio: dict[str, np.ndarray] = {}

    def _load(self, rel_path: str, entry_id: str) -> np.ndarray:
        path = self.root / rel_path
        if not path.exists():
            raise DataError(f"entry {entry_id}: file not found: {path}")
        return np.asarray(np.load(path), dtype=np.float64)

    def motion(self, entry: ManifestEntry) -> np.ndarray:
        arr = self._motion.get(entry.id)
        if arr is None:
            arr = self._load(entry.motion_path, entry.id)
            if arr.ndim != 2 or arr.shape[0] != entry.n_frames:
                raise DataError(
                    f"entry {entry.id}: motion shape {arr.shape} does not match "
                    f"n_frames={entry.n_frames}"
                )
            self._motion[entry.id] = arr
        return arr

    def pose(self, entry: ManifestEntry) -> np.ndarray:
        arr = self._pose.get(entry.id)
        if arr is None:
            if entry.pose_path is None:
                raise DataError(f"entry {entry.id}: no pose_path")
            arr = self._load(entry.pose_path, entry.id)
            if arr.shape[0] != entry.n_frames:
                raise DataError(f"entry {entry.id}: pose length mismatch")
            self._pose[entry.id] = arr
        return arr

    def aligned_audio(
        self, entry: ManifestEntry, provider: AudioFeatureProvider
    ) -> np.ndarray:
        arr = self._audio.get(entry.id)
        if arr is None:
            raw = raw_audio_features(
                entry, provider, entry.n_frames, self.frame_rate, self.root
            )
            arr = align_audio(raw, entry.n_frames)
            self._audio[entry.id] = arr
        return arr


class AdamOptimizer:
    """Adam with bias correction; parameters without gradients are skipped."""

    def __init__(self, params: dict[str, Tensor], cfg: OptimizerConfig):
        self.params = params
        self.cfg = cfg
        self._state: dict[str, tuple[int, np.ndarray, np.ndarray]] = {}

    def clip_global_norm(self) -> float:
        total = 0.0
        for t in self.params.values():
            if t.grad is not None:
                total += float((t.grad * t.grad).sum())
        norm = float(np.sqrt(total))
        limit = self.cfg.grad_clip
        if limit > 0 and norm > limit:
            scale = limit / norm
            for t in self.params.values():
                if t.grad is not None:
                    t.grad = t.grad * scale
        return norm

    def step(self, lr: float) -> None:
        b1, b2, eps = self.cfg.beta1, self.cfg.beta2, self.cfg.eps
        for name, t in self.params.items():
            g = t.grad
            if g is None:
                continue
            count, m, v = self._state.get(
                name, (0, np.zeros_like(t.data), np.zeros_like(t.data))
            )
            count += 1
            m = b1 * m + (1.0 - b1) * g
            v = b2 * v + (1.0 - b2) * (g * g)
            m_hat = m / (1.0 - b1**count)
            v_hat = v / (1.0 - b2**count)
            t.data = t.data - lr * m_hat / (np.sqrt(v_hat) + eps)
            self._state[name] = (count, m, v)

    def zero_grad(self) -> None:
        for t in self.params.values():
            t.grad = None


class Trainer:
    """Mini-batch trainer over a manifest of mixed-task clips."""

    def __init__(
        self,
        model: Denoiser,
        schedule: NoiseSchedule,
        manifest: Sequence[ManifestEntry],
        root,
        text_provider: TextEmbeddingProvider,
        audio_provider: AudioFeatureProvider,
        weights: LossWeights = LossWeights(),
        opt_cfg: OptimizerConfig = OptimizerConfig(),
        batch_size: int = 8,
        seed: int = 0,
        audio_dropout: float = 0.0,
    ):
        if not manifest:
            raise DataError("training manifest is empty")
        for e in manifest:
            if e.instruction is None:
                raise DataError(f"entry {e.id}: no instruction (run annotation first)")
        if batch_size < 1:
            raise InputError("batch_size must be >= 1")
        if not 0.0 <= audio_dropout <= 1.0:
            raise InputError("audio_dropout must be in [0, 1]")
        self.model = model
        self.schedule = schedule
        self.manifest = list(manifest)
        self.store = ClipStore(root)
        self.text_provider = text_provider
        self.audio_provider = audio_provider
        self.weights = weights
        self.opt_cfg = opt_cfg
        self.batch_size = batch_size
        self.audio_dropout = float(audio_dropout)
        self.rng = np.random.default_rng(seed)
        self.opt = AdamOptimizer(model.params, opt_cfg)
        self.global_step = 0

    # -- single item ------------------------------------------------------
    def _item_graph(self, entry: ManifestEntry):
        m0 = self.store.motion(entry)
        pose = self.store.pose(entry)
        n_frames = entry.n_frames
        t = int(self.rng.integers(self.schedule.n_steps))
        noise = self.rng.standard_normal(m0.shape)
        ab = self.schedule.alpha_bar[t]
        x_t = np.sqrt(ab) * m0 + np.sqrt(1.0 - ab) * noise

        aligned = self.store.aligned_audio(entry, self.audio_provider)
        if self.audio_dropout > 0.0 and self.rng.random() < self.audio_dropout:
            # Swap in freshly drawn band-limited noise so a small corpus
            # cannot be memorized through its fixed per-clip audio arrays;
            # the model then has to source identity cues from the other
            # conditioning branches.
            aligned = smooth_noise(self.rng, n_frames, aligned.shape[1], 1.0)
        w_aud, b_aud = self.model.audio_projection()
        audio_term = ad.matmul(ad.constant(aligned), w_aud) + b_aud
        m_t_a = ad.constant(x_t) + audio_term

        rep = encode_instruction(
            entry.instruction, entry.task, self.text_provider, self.model.adapters()
        )
        keyframe = select_keyframe(entry, self.manifest, self.rng, self.store)
        out = self.model.forward(m_t_a, t, rep, keyframe, entry.task)
        targets = TrainingTargets(
            m0=m0,
            pose=pose,
            au=entry.au if entry.task == TaskKind.EMOTION_TALK else None,
            intensity=entry.intensity if entry.task == TaskKind.EMOTION_TALK else None,
        )
        terms = _loss_graph(out, targets, self.weights)
        return terms, t

    def train_step(self) -> LossBreakdown:
        """One optimization step over a freshly drawn batch."""
        idxs = self.rng.integers(0, len(self.manifest), size=self.batch_size)
        batch = [self.manifest[int(i)] for i in idxs]
        mse_terms, pose_terms, au_terms, inten_terms, ts = [], [], [], [], []
        for entry in batch:
            (mse, pose, au, inten), t = self._item_graph(entry)
            mse_terms.append(mse)
            pose_terms.append(pose)
            if au is not None:
                au_terms.append(au)
            if inten is not None:
                inten_terms.append(inten)
            ts.append(t)

        def average(terms):
            if not terms:
                return None
            acc = terms[0]
            for term in terms[1:]:
                acc = acc + term
            return acc * (1.0 / len(terms))

        mse_b = average(mse_terms)
        pose_b = average(pose_terms)
        au_b = average(au_terms)
        inten_b = average(inten_terms)
        total = mse_b + self.weights.lambda_pose * pose_b
        if au_b is not None:
            total = total + self.weights.lambda_au * au_b
        if inten_b is not None:
            total = total + self.weights.lambda_inten * inten_b

        breakdown = LossBreakdown(
            mse=mse_b.item(),
            pose=pose_b.item(),
            au=au_b.item() if au_b is not None else 0.0,
            inten=inten_b.item() if inten_b is not None else 0.0,
            total=total.item(),
        )
        if not all(np.isfinite(v) for v in
                   (breakdown.mse, breakdown.pose, breakdown.au,
                    breakdown.inten, breakdown.total)):
            ids = [e.id for e in batch]
            raise NumericalError(
                f"non-finite loss at step {self.global_step + 1}: {breakdown}; "
                f"batch ids {ids}, timesteps {ts}"
            )
        total.backward()
        self.opt.clip_global_norm()
        self.global_step += 1
        self.opt.step(lr_at(self.global_step, self.opt_cfg))
        self.opt.zero_grad()
        return breakdown

    def run(
        self,
        n_steps: int,
        metrics_path=None,
        log_every: int = 50,
    ) -> LossBreakdown:
        """Train for n_steps; optionally stream a metrics CSV."""
        if n_steps < 1:
            raise InputError("n_steps must be >= 1")
        writer = None
        fh = None
        if metrics_path is not None:
            metrics_path = Path(metrics_path)
            metrics_path.parent.mkdir(parents=True, exist_ok=True)
            fh = metrics_path.open("w", newline="")
            writer = csv.writer(fh)
            writer.writerow(["step", "lr", "mse", "pose", "au", "inten", "total"])
        last = None
        try:
            for _ in range(n_steps):
                last = self.train_step()
                lr = lr_at(self.global_step, self.opt_cfg)
                if writer is not None:
                    writer.writerow(
                        [
                            self.global_step,
                            f"{lr:.10g}",
                            f"{last.mse:.10g}",
                            f"{last.pose:.10g}",
                            f"{last.au:.10g}",
                            f"{last.inten:.10g}",
                            f"{last.total:.10g}",
                        ]
                    )
                if log_every and self.global_step % log_every == 0:
                    logger.info(
                        "step %d lr %.3g total %.5f (mse %.5f pose %.5f au %.5f inten %.5f)",
                        self.global_step, lr, last.total, last.mse, last.pose,
                        last.au, last.inten,
                    )
        finally:
            if fh is not None:
                fh.close()
        return last

    def evaluate(self, t_values: Optional[Sequence[int]] = None, seed: int = 9999) -> LossBreakdown:
        """Deterministic full-dataset loss at a fixed timestep grid."""
        T = self.schedule.n_steps
        if t_values is None:
            t_values = [T // 8, T // 4, T // 2, (3 * T) // 4, T - 1]
        rng = np.random.default_rng(seed)
        sums = {"mse": 0.0, "pose": 0.0, "au": 0.0, "inten": 0.0}
        n_all = 0
        n_emo = 0
        for entry in self.manifest:
            m0 = self.store.motion(entry)
            pose = self.store.pose(entry)
            aligned = self.store.aligned_audio(entry, self.audio_provider)
            keyframe = select_keyframe(entry, self.manifest, rng, self.store)
            rep = encode_instruction(
                entry.instruction, entry.task, self.text_provider, self.model.adapters()
            )
            w_aud, b_aud = self.model.audio_projection()
            audio_term = aligned @ w_aud.data + b_aud.data
            for t in t_values:
                noise = rng.standard_normal(m0.shape)
                ab = self.schedule.alpha_bar[int(t)]
                x_t = np.sqrt(ab) * m0 + np.sqrt(1.0 - ab) * noise
                bundle = self.model.predict(
                    x_t + audio_term, int(t), rep, keyframe, entry.task
                )
                targets = TrainingTargets(
                    m0=m0,
                    pose=pose,
                    au=entry.au if entry.task == TaskKind.EMOTION_TALK else None,
                    intensity=entry.intensity
                    if entry.task == TaskKind.EMOTION_TALK
                    else None,
                )
                b = compute_losses(bundle, targets, self.weights, clip_id=entry.id)
                sums["mse"] += b.mse
                sums["pose"] += b.pose
                n_all += 1
                if entry.task == TaskKind.EMOTION_TALK:
                    sums["au"] += b.au
                    sums["inten"] += b.inten
                    n_emo += 1
        mse = sums["mse"] / n_all
        pose = sums["pose"] / n_all
        au = sums["au"] / n_emo if n_emo else 0.0
        inten = sums["inten"] / n_emo if n_emo else 0.0
        total = (
            mse
            + self.weights.lambda_pose * pose
            + self.weights.lambda_au * au
            + self.weights.lambda_inten * inten
        )
        return LossBreakdown(mse, pose, au, inten, total)
