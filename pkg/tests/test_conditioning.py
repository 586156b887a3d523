"""Text/audio conditioning: embedding invariances, alignment, adapters."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from avamo import autodiff as ad
from avamo.conditioning import (
    AdapterPair,
    AdapterParams,
    ConditioningBundle,
    HashTextEmbedder,
    InstructionRep,
    NpyAudioProvider,
    align_audio,
    apply_adapter,
    audio_features,
    encode_instruction,
    raw_audio_features,
    tokenize,
)
from avamo.core import ManifestEntry, TaskKind
from avamo.errors import DataError, DimensionError, InputError


class TestTokenize:
    def test_lowercases_and_splits(self):
        assert tokenize("Talk with a HAPPY face!") == [
            "talk", "with", "a", "happy", "face",
        ]

    def test_strips_punctuation(self):
        assert tokenize("nod, twice.") == ["nod", "twice"]

    def test_empty_string(self):
        assert tokenize("") == []


class TestHashTextEmbedder:
    def test_summary_bitwise_permutation_invariant(self):
        emb = HashTextEmbedder(32, seed=0)
        s1, _ = emb.embed("tilt your head left slowly")
        s2, _ = emb.embed("slowly left head your tilt")
        assert np.array_equal(s1, s2)  # bit-exact, not approx

    def test_rows_change_under_permutation(self):
        emb = HashTextEmbedder(32, seed=0)
        _, r1 = emb.embed("nod twice then stop")
        _, r2 = emb.embed("stop then nod twice")
        assert r1.shape == r2.shape
        assert not np.allclose(r1, r2)

    def test_rows_are_word_plus_position(self):
        emb = HashTextEmbedder(16, seed=3)
        _, rows = emb.embed("shake head")
        np.testing.assert_allclose(
            rows[0], emb._word_vec("shake") + emb._pos_vec(0), rtol=1e-15
        )
        np.testing.assert_allclose(
            rows[1], emb._word_vec("head") + emb._pos_vec(1), rtol=1e-15
        )

    def test_deterministic_across_instances(self):
        a = HashTextEmbedder(24, seed=5).embed("smile warmly")
        b = HashTextEmbedder(24, seed=5).embed("smile warmly")
        assert np.array_equal(a[0], b[0])
        assert np.array_equal(a[1], b[1])

    def test_seed_changes_embedding(self):
        a, _ = HashTextEmbedder(24, seed=0).embed("smile")
        b, _ = HashTextEmbedder(24, seed=1).embed("smile")
        assert not np.allclose(a, b)

    def test_rejects_tiny_dim(self):
        with pytest.raises(InputError, match="dim"):
            HashTextEmbedder(4)

    def test_rejects_empty_instruction(self):
        with pytest.raises(InputError, match="tokens"):
            HashTextEmbedder(16).embed("?!")

    @settings(max_examples=30, deadline=None)
    @given(st.permutations(["talk", "with", "an", "angry", "face", "now"]))
    def test_summary_invariance_property(self, words):
        emb = HashTextEmbedder(16, seed=9)
        base, _ = emb.embed("talk with an angry face now")
        sh, _ = emb.embed(" ".join(words))
        assert np.array_equal(base, sh)


class TestNpyAudioProvider:
    def test_features_round_trip(self, tmp_path):
        arr = np.random.default_rng(0).standard_normal((20, 8))
        np.save(tmp_path / "a.npy", arr)
        got = NpyAudioProvider(8).features(tmp_path / "a.npy")
        np.testing.assert_allclose(got, arr, rtol=1e-15)

    def test_missing_file(self):
        with pytest.raises(DataError, match="not found"):
            NpyAudioProvider(8).features("/nonexistent/x.npy")

    def test_wrong_width(self, tmp_path):
        np.save(tmp_path / "bad.npy", np.zeros((5, 3)))
        with pytest.raises(DimensionError, match="shape"):
            NpyAudioProvider(8).features(tmp_path / "bad.npy")

    def test_silence_is_deterministic_nonzero(self):
        p = NpyAudioProvider(6, rate=50.0)
        s1 = p.silence(1.0)
        s2 = p.silence(1.0)
        assert s1.shape == (50, 6)
        assert np.array_equal(s1, s2)
        assert np.any(s1 != 0.0)
        # every row identical: silence carries no temporal information
        assert np.all(s1 == s1[0])

    def test_silence_duration_rounding(self):
        p = NpyAudioProvider(4, rate=50.0)
        assert p.silence(0.5).shape[0] == 25
        assert p.silence(0.001).shape[0] == 1

    def test_silence_rejects_nonpositive(self):
        with pytest.raises(InputError, match="duration"):
            NpyAudioProvider(4).silence(0.0)

    def test_rejects_bad_constructor_args(self):
        with pytest.raises(InputError):
            NpyAudioProvider(0)
        with pytest.raises(InputError):
            NpyAudioProvider(4, rate=-1.0)


class TestAlignAudio:
    def test_identity_when_lengths_match(self):
        x = np.random.default_rng(1).standard_normal((10, 3))
        out = align_audio(x, 10)
        np.testing.assert_allclose(out, x, rtol=0, atol=0)
        assert out is not x  # defensive copy

    def test_downsample_two_to_one(self):
        x = np.array([[0.0], [1.0], [2.0], [3.0]])
        out = align_audio(x, 2)
        # positions 0 and 2 of the source
        np.testing.assert_allclose(out, [[0.0], [2.0]])

    def test_upsample_interpolates(self):
        x = np.array([[0.0], [1.0]])
        out = align_audio(x, 4)
        np.testing.assert_allclose(out[:, 0], [0.0, 0.5, 1.0, 1.0])

    def test_constant_signal_invariant(self):
        x = np.full((7, 2), 3.25)
        np.testing.assert_allclose(align_audio(x, 13), np.full((13, 2), 3.25))

    def test_single_row_broadcasts(self):
        x = np.array([[1.0, 2.0]])
        np.testing.assert_allclose(align_audio(x, 5), np.tile([1.0, 2.0], (5, 1)))

    def test_rejects_bad_shapes(self):
        with pytest.raises(DimensionError):
            align_audio(np.zeros(5), 3)
        with pytest.raises(DimensionError):
            align_audio(np.zeros((0, 4)), 3)
        with pytest.raises(InputError):
            align_audio(np.zeros((4, 2)), 0)

    @settings(max_examples=30, deadline=None)
    @given(
        n=st.integers(min_value=1, max_value=40),
        m=st.integers(min_value=1, max_value=40),
        seed=st.integers(min_value=0, max_value=2**31 - 1),
    )
    def test_output_within_input_envelope(self, n, m, seed):
        # linear interpolation can never leave the input's value range
        rng = np.random.default_rng(seed)
        x = rng.standard_normal((n, 2))
        out = align_audio(x, m)
        assert out.shape == (m, 2)
        assert np.all(out.min(axis=0) >= x.min(axis=0) - 1e-12)
        assert np.all(out.max(axis=0) <= x.max(axis=0) + 1e-12)


def _adapter_pair(d_txt: int, seed: int = 0, zero: bool = False) -> AdapterPair:
    rng = np.random.default_rng(seed)

    def params():
        if zero:
            mk = lambda *s: ad.Tensor(np.zeros(s))
        else:
            mk = lambda *s: ad.Tensor(rng.standard_normal(s) * 0.2)
        return AdapterParams(
            w1=mk(d_txt, d_txt), b1=mk(d_txt), w2=mk(d_txt, d_txt), b2=mk(d_txt)
        )

    return AdapterPair(emotion=params(), motion=params())


class TestAdapters:
    def test_zero_adapter_is_identity(self):
        pair = _adapter_pair(12, zero=True)
        x = ad.Tensor(np.random.default_rng(2).standard_normal((3, 12)))
        out = apply_adapter(x, pair.emotion)
        np.testing.assert_allclose(out.data, x.data, rtol=0, atol=0)

    def test_residual_keeps_width(self):
        pair = _adapter_pair(12)
        x = ad.Tensor(np.random.default_rng(2).standard_normal((5, 12)))
        assert apply_adapter(x, pair.emotion).data.shape == (5, 12)

    def test_for_task_routes(self):
        pair = _adapter_pair(8)
        assert pair.for_task(TaskKind.EMOTION_TALK) is pair.emotion
        assert pair.for_task(TaskKind.MOTION_CONTROL) is pair.motion


class TestEncodeInstruction:
    def test_emotion_branch_is_single_summary_row(self):
        emb = HashTextEmbedder(16, seed=0)
        rep = encode_instruction(
            "Talk with happy emotion", TaskKind.EMOTION_TALK, emb, _adapter_pair(16)
        )
        assert rep.k == 1
        assert rep.branch == TaskKind.EMOTION_TALK

    def test_motion_branch_keeps_token_rows(self):
        emb = HashTextEmbedder(16, seed=0)
        rep = encode_instruction(
            "nod your head twice", TaskKind.MOTION_CONTROL, emb, _adapter_pair(16)
        )
        assert rep.k == 4
        assert rep.branch == TaskKind.MOTION_CONTROL

    def test_emotion_rep_permutation_invariant_end_to_end(self):
        emb = HashTextEmbedder(16, seed=0)
        pair = _adapter_pair(16)
        a = encode_instruction(
            "talk with angry emotion", TaskKind.EMOTION_TALK, emb, pair
        )
        b = encode_instruction(
            "emotion angry with talk", TaskKind.EMOTION_TALK, emb, pair
        )
        assert np.array_equal(a.array, b.array)

    def test_motion_rep_order_sensitive(self):
        emb = HashTextEmbedder(16, seed=0)
        pair = _adapter_pair(16)
        a = encode_instruction("nod then shake", TaskKind.MOTION_CONTROL, emb, pair)
        b = encode_instruction("shake then nod", TaskKind.MOTION_CONTROL, emb, pair)
        assert not np.allclose(a.array, b.array)

    def test_rejects_empty_text(self):
        emb = HashTextEmbedder(16)
        with pytest.raises(InputError, match="empty"):
            encode_instruction("   ", TaskKind.EMOTION_TALK, emb, _adapter_pair(16))


class TestAudioFeaturesForEntries:
    def _emotion_entry(self, tmp_path, n=8, d=4):
        arr = np.random.default_rng(3).standard_normal((16, d))
        np.save(tmp_path / "clip.npy", arr)
        from avamo.core import AURegistry, AUVector, EmotionLabel, IntensityLevel

        reg = AURegistry.load_default()
        return ManifestEntry(
            id="e0",
            person_id="p00",
            task=TaskKind.EMOTION_TALK,
            n_frames=n,
            motion_path="m.npy",
            pose_path="p.npy",
            audio_path="clip.npy",
            instruction="Talk with happy emotion",
            emotion=EmotionLabel.HAPPY,
            intensity=IntensityLevel.MEDIUM,
            au=AUVector.from_names(
                ["cheek_raiser", "lip_corner_puller", "jaw_drop", "lid_tightener",
                 "lips_part"], reg,
            ),
        ), arr

    def test_emotion_clip_reads_recorded_features(self, tmp_path):
        entry, arr = self._emotion_entry(tmp_path)
        provider = NpyAudioProvider(4)
        raw = raw_audio_features(entry, provider, 8, root=tmp_path)
        np.testing.assert_allclose(raw, arr)

    def test_motion_clip_gets_silence(self):
        entry = ManifestEntry(
            id="m0",
            person_id="p00",
            task=TaskKind.MOTION_CONTROL,
            n_frames=10,
            motion_path="m.npy",
            pose_path="p.npy",
            instruction="nod twice",
        )
        provider = NpyAudioProvider(4, rate=50.0)
        raw = raw_audio_features(entry, provider, 10, frame_rate=25.0)
        # 10 frames at 25 fps = 0.4 s of silence at 50 Hz = 20 rows
        assert raw.shape == (20, 4)
        assert np.all(raw == raw[0])

    def test_projection_shapes_checked(self, tmp_path):
        entry, _ = self._emotion_entry(tmp_path)
        provider = NpyAudioProvider(4)
        with pytest.raises(DimensionError, match="projection"):
            audio_features(entry, provider, 8, np.zeros((3, 6)), np.zeros(6),
                           root=tmp_path)

    def test_projected_output_is_motion_width(self, tmp_path):
        entry, _ = self._emotion_entry(tmp_path)
        provider = NpyAudioProvider(4)
        out = audio_features(entry, provider, 8, np.zeros((4, 6)), np.ones(6),
                             root=tmp_path)
        assert out.shape == (8, 6)
        np.testing.assert_allclose(out, np.ones((8, 6)))


class TestConditioningBundle:
    def test_keyframe_shape_enforced(self):
        emb = HashTextEmbedder(16)
        rep = encode_instruction("nod", TaskKind.MOTION_CONTROL, emb, _adapter_pair(16))
        with pytest.raises(DimensionError, match="keyframe"):
            ConditioningBundle(
                audio=np.zeros((4, 6)), rep=rep, keyframe=np.zeros(6),
                task=TaskKind.MOTION_CONTROL,
            )

    def test_task_branch_mismatch_rejected(self):
        emb = HashTextEmbedder(16)
        rep = encode_instruction("nod", TaskKind.MOTION_CONTROL, emb, _adapter_pair(16))
        with pytest.raises(InputError, match="branch"):
            ConditioningBundle(
                audio=np.zeros((4, 6)), rep=rep, keyframe=np.zeros((1, 6)),
                task=TaskKind.EMOTION_TALK,
            )


class TestSemanticTextEmbedder:
    def make(self, dim=32, **kw):
        from avamo.conditioning import SemanticTextEmbedder

        kw.setdefault("lexicon", {"cheerful": "feeling:happy",
                                  "merry": "feeling:happy",
                                  "furious": "feeling:angry"})
        return SemanticTextEmbedder(dim, seed=0, **kw)

    def test_empty_lexicon_matches_hash_embedder_bitwise(self):
        from avamo.conditioning import SemanticTextEmbedder

        plain = HashTextEmbedder(24, seed=3)
        sem = SemanticTextEmbedder(24, seed=3, lexicon={})
        for text in ("talk with a happy face", "nod twice", "be merry"):
            s1, r1 = plain.embed(text)
            s2, r2 = sem.embed(text)
            assert np.array_equal(s1, s2)
            assert np.array_equal(r1, r2)

    def test_cluster_mates_share_direction(self):
        emb = self.make(dim=64)
        vec = emb._word_vec  # per-word vectors, position-free
        def cos(a, b):
            return float(a @ b / (np.linalg.norm(a) * np.linalg.norm(b)))

        same = cos(vec("cheerful"), vec("merry"))
        cross = cos(vec("cheerful"), vec("furious"))
        plain = cos(vec("talk"), vec("face"))
        # Mates share the concept component (~concept_weight^2 = 0.64);
        # unrelated words stay near orthogonal at this width.
        assert same > 0.45
        assert abs(cross) < 0.35
        assert abs(plain) < 0.35
        assert same > cross + 0.3 and same > plain + 0.3

    def test_unlisted_words_keep_plain_hash_vectors(self):
        emb = self.make(dim=32)
        plain = HashTextEmbedder(32, seed=0)
        assert np.array_equal(emb._word_vec("talk"), plain._word_vec("talk"))
        assert not np.array_equal(
            emb._word_vec("merry"), plain._word_vec("merry")
        )

    def test_summary_still_permutation_invariant(self):
        emb = self.make(dim=32)
        a, _ = emb.embed("talk with a cheerful merry face")
        b, _ = emb.embed("face merry cheerful a with talk")
        assert np.array_equal(a, b)

    def test_content_words_dominate_summary(self):
        heavy = self.make(dim=48, content_weight=6.0)
        light = self.make(dim=48, content_weight=1.0)
        # Swapping the salient word moves the weighted summary further
        # than it moves the unweighted one, relative to scale.
        def shift(emb):
            a, _ = emb.embed("talk with a cheerful face")
            b, _ = emb.embed("talk with a furious face")
            return float(np.linalg.norm(a - b) / np.linalg.norm(a))

        assert shift(heavy) > shift(light)

    def test_constructor_validation(self):
        from avamo.conditioning import SemanticTextEmbedder

        with pytest.raises(InputError, match="concept_weight"):
            SemanticTextEmbedder(16, concept_weight=1.0)
        with pytest.raises(InputError, match="concept_weight"):
            SemanticTextEmbedder(16, concept_weight=-0.1)
        with pytest.raises(InputError, match="content_weight"):
            SemanticTextEmbedder(16, content_weight=0.5)

    def test_lexicon_keys_lowercased(self):
        from avamo.conditioning import SemanticTextEmbedder

        a = SemanticTextEmbedder(32, lexicon={"MERRY": "feeling:happy"})
        b = SemanticTextEmbedder(32, lexicon={"merry": "feeling:happy"})
        assert np.array_equal(a._word_vec("merry"), b._word_vec("merry"))

    def test_deterministic_across_instances(self):
        s1, r1 = self.make(dim=32).embed("be merry today")
        s2, r2 = self.make(dim=32).embed("be merry today")
        assert np.array_equal(s1, s2)
        assert np.array_equal(r1, r2)


class TestDefaultLexiconAndFactory:
    def test_lexicon_covers_synonyms_and_adverbs(self):
        from avamo.conditioning import default_concept_lexicon

        lex = default_concept_lexicon()
        assert lex["delighted"] == "feeling:happy"
        assert lex["merry"] == "feeling:happy"
        assert lex["furious"] == "feeling:angry"
        assert lex["extremely"].startswith("degree:")
        # Multi-word adverb "a bit": article dropped, content token kept.
        assert "bit" in lex and "a" not in lex

    def test_every_emotion_has_a_cluster(self):
        from avamo.conditioning import default_concept_lexicon
        from avamo.instructions import default_bank

        lex = default_concept_lexicon()
        concepts = set(lex.values())
        for emotion in default_bank().synonyms:
            assert f"feeling:{emotion.value}" in concepts

    def test_factory_wires_default_lexicon(self):
        from avamo.conditioning import default_text_embedder

        emb = default_text_embedder(32, seed=5)
        assert emb.lexicon["joyful"] == "feeling:happy"
        assert emb.dim == 32 and emb.seed == 5

    def test_synonym_substitution_preserves_neighbourhood(self):
        # Two instructions that differ only in which synonym names the
        # emotion must land closer together than instructions naming
        # different emotions.
        from avamo.conditioning import default_text_embedder

        emb = default_text_embedder(48)
        happy_a, _ = emb.embed("talk with a delighted expression")
        happy_b, _ = emb.embed("talk with a joyful expression")
        angry, _ = emb.embed("talk with a furious expression")
        assert np.linalg.norm(happy_a - happy_b) < np.linalg.norm(happy_a - angry)
