"""Command-line entry points.

Commands: synth-data (build a synthetic corpus), annotate (fill
instructions into a manifest), train (fit a denoiser on a corpus),
sample (generate one clip from a checkpoint), evaluate (generate
held-out clips and score them with the corpus oracle).

Every command is seeded and deterministic given identical inputs. Exit
codes: 0 success, 1 validation/data failure (one-line diagnostic on
stderr), 2 usage errors.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import autodiff as ad
from .conditioning import (
    ConditioningBundle,
    default_text_embedder,
    NpyAudioProvider,
    align_audio,
    encode_instruction,
)
from .config import RunConfig, load_config, replace_key
from .core import (
    EmotionLabel,
    IntensityLevel,
    TaskKind,
    load_manifest,
    write_manifest,
)
from .denoiser import Denoiser, make_sampling_denoiser
from .diffusion import build_schedule, sample as ddim_sample
from .errors import AvamoError, ConfigError, DataError, InputError
from .evalsuite import (
    EvalReport,
    HashFrameEmbedder,
    SampleRecord,
    TypicalAUTable,
    evaluate_run,
)
from .instructions import (
    FixtureParaphraseClient,
    default_bank,
    expand_emotion_label,
    paraphrase_aus,
    pseudo_neutral_instruction,
)
from .synthetic import (
    SynthCorpus,
    corpus_au_for,
    load_corpus,
    smooth_noise,
    synth_corpus,
)
from .training import ClipStore, Trainer

# Text embeddings must be identical between training and sampling; the
# stand-in embedder is therefore pinned to one seed everywhere.
TEXT_SEED = 0


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="avamo",
        description="Text- and audio-conditioned motion generation toolkit.",
    )
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth-data", help="generate a synthetic corpus")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--clips-per-emotion", type=int, default=50)
    p.add_argument(
        "--emotions", default="happy,angry,sad,surprised",
        help="comma-separated emotion labels",
    )
    p.add_argument("--motion-clips", type=int, default=0)
    p.add_argument("--persons", type=int, default=4)
    p.add_argument("--frames", type=int, default=24)
    p.add_argument("--d-mot", type=int, default=24)
    p.add_argument("--d-aud", type=int, default=16)
    p.add_argument(
        "--template-split", type=int, default=None,
        help="use only the first N templates for training instructions",
    )

    p = sub.add_parser("annotate", help="fill instructions into a manifest")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--source", choices=("emotion", "au"), default="emotion")
    p.add_argument("--fixtures", default=None, help="paraphrase fixture directory")
    p.add_argument("--overwrite", action="store_true",
                   help="replace instructions that are already present")

    p = sub.add_parser("train", help="train a denoiser on a corpus")
    p.add_argument("--data", required=True, help="corpus directory")
    p.add_argument("--run-dir", required=True)
    p.add_argument("--config", default=None, help="JSON config file")
    p.add_argument("--set", action="append", default=[], dest="overrides",
                   metavar="SECTION.KEY=VALUE")

    p = sub.add_parser("sample", help="generate one clip from a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--task", required=True, choices=[t.value for t in TaskKind])
    p.add_argument("--instruction", required=True)
    p.add_argument("--frames", type=int, required=True)
    p.add_argument("--audio", default=None, help=".npy audio features")
    p.add_argument("--keyframe", default=None,
                   help=".npy motion latents; defaults to a zero portrait")
    p.add_argument("--keyframe-index", type=int, default=0)
    p.add_argument("--codec", default=None, help="codec .npz for frame decoding")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--steps", type=int, default=150)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--config", default=None, help="config snapshot for the schedule")
    p.add_argument("--set", action="append", default=[], dest="overrides")

    p = sub.add_parser("evaluate", help="score held-out generations with the oracle")
    p.add_argument("--data", required=True, help="corpus directory")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out", required=True, help="report JSON path")
    p.add_argument("--per-emotion", type=int, default=40)
    p.add_argument("--steps", type=int, default=30)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--config", default=None)
    p.add_argument("--set", action="append", default=[], dest="overrides")
    return parser


def _cmd_synth_data(args) -> int:
    try:
        emotions = tuple(
            EmotionLabel(e.strip()) for e in args.emotions.split(",") if e.strip()
        )
    except ValueError as exc:
        raise InputError(f"unknown emotion label in --emotions: {exc}") from None
    template_indices = None
    if args.template_split is not None:
        template_indices = range(args.template_split)
    corpus = synth_corpus(
        args.out,
        n_clips_per_emotion=args.clips_per_emotion,
        emotions=emotions,
        n_motion_clips=args.motion_clips,
        n_persons=args.persons,
        n_frames=args.frames,
        d_mot=args.d_mot,
        d_aud=args.d_aud,
        seed=args.seed,
        template_indices=template_indices,
    )
    print(f"wrote {len(corpus.entries)} clips to {corpus.root}")
    return 0


def _cmd_annotate(args) -> int:
    entries = load_manifest(args.manifest)
    rng = np.random.default_rng(args.seed)
    bank = default_bank()
    client = None
    if args.source == "au":
        if args.fixtures is None:
            raise InputError("--source au requires --fixtures")
        client = FixtureParaphraseClient(args.fixtures)
    out = []
    n_filled = 0
    for entry in entries:
        if entry.task != TaskKind.EMOTION_TALK or (
            entry.instruction is not None and not args.overwrite
        ):
            out.append(entry)
            continue
        if args.source == "au":
            instruction, final_au = paraphrase_aus(entry.au, None, client, rng)
            entry = entry.with_fields(instruction=instruction, au=final_au)
        elif entry.emotion == EmotionLabel.NEUTRAL:
            entry = entry.with_fields(
                instruction=pseudo_neutral_instruction(rng, bank)
            )
        else:
            entry = entry.with_fields(
                instruction=expand_emotion_label(
                    entry.emotion, entry.intensity, bank, rng
                )
            )
        n_filled += 1
        out.append(entry)
    write_manifest(out, args.out)
    print(f"annotated {n_filled} of {len(out)} entries -> {args.out}")
    return 0


def _resolved_config(args, corpus_meta: Optional[dict]) -> RunConfig:
    cfg, touched = load_config(args.config, args.overrides)
    if corpus_meta is not None:
        for key, meta_key in (("model.d_mot", "d_mot"), ("model.d_aud", "d_aud")):
            want = int(corpus_meta[meta_key])
            have = getattr(cfg.model, key.split(".")[1])
            if key in touched and have != want:
                raise ConfigError(
                    f"{key}={have} conflicts with corpus {meta_key}={want}"
                )
            if have != want:
                cfg = replace_key(cfg, key, want)
    return cfg


def _providers(cfg: RunConfig, meta: Optional[dict]):
    rate = float(meta["audio_rate"]) if meta else 50.0
    text = default_text_embedder(cfg.model.d_txt, seed=TEXT_SEED)
    audio = NpyAudioProvider(cfg.model.d_aud, rate=rate)
    return text, audio


def _cmd_train(args) -> int:
    root = Path(args.data)
    corpus = load_corpus(root)
    cfg = _resolved_config(args, corpus.meta)
    run_dir = Path(args.run_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    cfg.save(run_dir / "config.json")

    schedule = build_schedule(
        cfg.schedule.n_steps, cfg.schedule.beta_min, cfg.schedule.beta_max
    )
    model = Denoiser.initialize(cfg.model, seed=cfg.train.seed)
    text, audio = _providers(cfg, corpus.meta)
    trainer = Trainer(
        model,
        schedule,
        corpus.entries,
        root,
        text,
        audio,
        weights=cfg.loss,
        opt_cfg=cfg.optimizer,
        batch_size=cfg.train.batch_size,
        seed=cfg.train.seed,
        audio_dropout=cfg.train.audio_dropout,
    )
    trainer.run(
        cfg.train.steps,
        metrics_path=run_dir / "metrics.csv",
        log_every=cfg.train.log_every,
    )
    model.save(run_dir / "checkpoint.npz")
    final = trainer.evaluate()
    print(
        f"trained {cfg.train.steps} steps; eval total {final.total:.6f} "
        f"(mse {final.mse:.6f} pose {final.pose:.6f} au {final.au:.6f} "
        f"inten {final.inten:.6f})"
    )
    print(f"checkpoint: {run_dir / 'checkpoint.npz'}")
    return 0


def _load_keyframe(path: Optional[str], index: int, d_mot: int) -> np.ndarray:
    if path is None:
        return np.zeros((1, d_mot))
    arr = np.load(path, allow_pickle=False)
    if arr.ndim != 2 or arr.shape[1] != d_mot:
        raise InputError(f"keyframe file must be [n x {d_mot}], got {arr.shape}")
    if not 0 <= index < arr.shape[0]:
        raise InputError(f"keyframe index {index} out of range for {arr.shape[0]} frames")
    return arr[index : index + 1].copy()


def _cmd_sample(args) -> int:
    task = TaskKind(args.task)
    if task == TaskKind.MOTION_CONTROL and args.audio is not None:
        raise InputError("audio: motion_control clips have no speech; drop --audio")
    if task == TaskKind.EMOTION_TALK and args.audio is None:
        raise InputError("audio: emotion_talk sampling requires --audio")
    cfg, _ = load_config(args.config, args.overrides)
    model = Denoiser.load(args.checkpoint)
    mc = model.config
    schedule = build_schedule(
        cfg.schedule.n_steps, cfg.schedule.beta_min, cfg.schedule.beta_max
    )

    provider = NpyAudioProvider(mc.d_aud)
    if args.audio is not None:
        raw = provider.features(args.audio)
    else:
        raw = provider.silence(args.frames / 25.0)
    aligned = align_audio(raw, args.frames)
    with ad.no_grad():
        w, b = model.audio_projection()
        audio = aligned @ w.data + b.data
        text = default_text_embedder(mc.d_txt, seed=TEXT_SEED)
        rep = encode_instruction(args.instruction, task, text, model.adapters())
        keyframe = _load_keyframe(args.keyframe, args.keyframe_index, mc.d_mot)
        cond = ConditioningBundle(audio=audio, rep=rep, keyframe=keyframe, task=task)
        motion = ddim_sample(
            make_sampling_denoiser(model), cond, args.frames,
            steps=args.steps, seed=args.seed, schedule=schedule,
        )

    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    np.save(out_dir / "motion.npy", motion.data)
    outputs = [str(out_dir / "motion.npy")]
    if args.codec is not None:
        from .synthetic import LinearCodec

        codec = LinearCodec.load(args.codec)
        np.save(out_dir / "frames.npy", codec.decode(motion.data))
        outputs.append(str(out_dir / "frames.npy"))
    print("wrote " + ", ".join(outputs))
    return 0


def heldout_template_indices(corpus: SynthCorpus) -> Optional[list[int]]:
    """Complement of the corpus training split, when one was recorded."""
    bank = default_bank()
    train_indices = corpus.meta.get("template_indices")
    if train_indices is None:
        return None
    used = set(train_indices)
    held = [i for i in range(len(bank.templates)) if i not in used]
    return held or None


def run_closed_loop_eval(
    corpus: SynthCorpus,
    model: Denoiser,
    schedule,
    n_per_emotion: int = 40,
    steps: int = 30,
    seed: int = 0,
    template_indices: Optional[Sequence[int]] = None,
) -> tuple[list[SampleRecord], EvalReport]:
    """Generate held-out-instruction clips per emotion and score them.

    Keyframes come from different-emotion corpus clips (the training
    anti-leakage protocol), audio is fresh uninformative noise, so the
    instructed emotion can only enter through the text branch.
    """
    bank = default_bank()
    mc = model.config
    meta = corpus.meta
    n_frames = int(meta["n_frames"])
    n_audio = int(round(n_frames * meta["audio_rate"] / meta["frame_rate"]))
    store = ClipStore(corpus.root, frame_rate=meta["frame_rate"])
    text = default_text_embedder(mc.d_txt, seed=TEXT_SEED)
    table = TypicalAUTable.load_default()
    rng = np.random.default_rng(seed)

    emo_entries = [e for e in corpus.entries if e.task == TaskKind.EMOTION_TALK]
    if not emo_entries:
        raise DataError("corpus has no emotion clips to source keyframes from")

    records: list[SampleRecord] = []
    with ad.no_grad():
        w_aud, b_aud = model.audio_projection()
        adapters = model.adapters()
        for emotion in corpus.oracle.emotions:
            au_true = corpus_au_for(emotion, table)
            donors = [e for e in emo_entries if e.emotion != emotion]
            if not donors:
                raise DataError(f"no different-emotion keyframe donor for {emotion}")
            for i in range(n_per_emotion):
                level = IntensityLevel(int(rng.integers(1, 4)))
                instruction = expand_emotion_label(
                    emotion, level, bank, rng, template_indices
                )
                donor = donors[int(rng.integers(len(donors)))]
                track = store.motion(donor)
                frame = track[int(rng.integers(track.shape[0]))][None, :].copy()
                raw = smooth_noise(rng, n_audio, mc.d_aud, 1.0)
                audio = align_audio(raw, n_frames) @ w_aud.data + b_aud.data
                rep = encode_instruction(
                    instruction, TaskKind.EMOTION_TALK, text, adapters
                )
                cond = ConditioningBundle(
                    audio=audio, rep=rep, keyframe=frame,
                    task=TaskKind.EMOTION_TALK,
                )
                motion = ddim_sample(
                    make_sampling_denoiser(model), cond, n_frames,
                    steps=steps, seed=seed * 1_000_003 + len(records),
                    schedule=schedule,
                )
                records.append(
                    SampleRecord(
                        id=f"gen_{emotion.value}_{i:03d}",
                        au_pred=corpus.oracle.au_for(motion.data),
                        au_true=au_true,
                        emotion=emotion,
                        instruction=instruction,
                        frames=corpus.codec.decode(motion.data),
                    )
                )
    embedder = HashFrameEmbedder(corpus.codec.d_mot, embed_dim=max(mc.d_txt, 8))
    report = evaluate_run(records, table=table, provider=embedder)
    return records, report


def _cmd_evaluate(args) -> int:
    corpus = load_corpus(args.data)
    cfg = _resolved_config(args, corpus.meta)
    model = Denoiser.load(args.checkpoint)
    schedule = build_schedule(
        cfg.schedule.n_steps, cfg.schedule.beta_min, cfg.schedule.beta_max
    )
    _, report = run_closed_loop_eval(
        corpus,
        model,
        schedule,
        n_per_emotion=args.per_emotion,
        steps=args.steps,
        seed=args.seed,
        template_indices=heldout_template_indices(corpus),
    )
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    report.save(out)
    print(report.to_text())
    print(f"report: {out}")
    return 0


_COMMANDS = {
    "synth-data": _cmd_synth_data,
    "annotate": _cmd_annotate,
    "train": _cmd_train,
    "sample": _cmd_sample,
    "evaluate": _cmd_evaluate,
}


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return _COMMANDS[args.command](args)
    except AvamoError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
