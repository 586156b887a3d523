import numpy as np
import pytest
from hypothesis import given, strategies as st

from avamo.core import (
    AURegistry,
    AUVector,
    EmotionLabel,
    IntensityLevel,
    ManifestEntry,
    MotionSequence,
    TaskKind,
    default_registry,
    load_manifest,
    manifest_bytes,
    write_manifest,
)
from avamo.errors import ManifestError, ValidationError


def make_entry(**kw):
    base = dict(
        id="clip01",
        person_id="p00",
        task=TaskKind.EMOTION_TALK,
        n_frames=10,
        motion_path="motion/clip01.npy",
        pose_path="pose/clip01.npy",
        audio_path="audio/clip01.npy",
        instruction="Talk with happy emotion",
        emotion=EmotionLabel.HAPPY,
        intensity=IntensityLevel.MEDIUM,
        au=AUVector.from_names(["cheek_raiser", "lip_corner_puller"]),
    )
    base.update(kw)
    return ManifestEntry(**base)


class TestRegistry:
    def test_default_has_41_unique_names(self):
        reg = default_registry()
        assert len(reg) == 41
        assert len(set(reg.names)) == 41

    def test_known_names_resolve(self):
        reg = default_registry()
        for name in ("brow_lowerer", "lid_tightener", "lips_part", "jaw_drop"):
            assert name in reg
            assert reg.names[reg.index(name)] == name

    def test_rejects_duplicates(self):
        with pytest.raises(ValidationError):
            AURegistry(("jaw_drop", "jaw_drop"))

    def test_rejects_bad_identifier(self):
        with pytest.raises(ValidationError):
            AURegistry(("JawDrop",))


class TestAUVector:
    def test_round_trip_names(self):
        names = ["brow_lowerer", "jaw_drop", "lips_part"]
        assert AUVector.from_names(names).to_names() == sorted(
            names, key=default_registry().index
        )

    def test_rejects_unknown_name(self):
        with pytest.raises(ValidationError):
            AUVector.from_names(["eyebrow_wiggler"])

    def test_rejects_non_binary(self):
        bits = np.zeros(41, dtype=np.uint8)
        bits[3] = 2
        with pytest.raises(ValidationError):
            AUVector(bits)

    def test_rejects_wrong_length(self):
        with pytest.raises(ValidationError):
            AUVector(np.zeros(40, dtype=np.uint8))

    @given(st.lists(st.integers(0, 40), max_size=10))
    def test_intersection_matches_set_logic(self, idxs):
        reg = default_registry()
        names = sorted({reg.names[i] for i in idxs}, key=reg.index)
        a = AUVector.from_names(names)
        b = AUVector.from_names(names[: len(names) // 2])
        inter = a.intersect(b)
        assert inter.to_names() == names[: len(names) // 2]

    def test_as_float_counts(self):
        v = AUVector.from_names(["jaw_drop", "lips_part"])
        assert v.count() == 2
        assert v.as_float().sum() == 2.0


class TestMotionSequence:
    def test_requires_2d_finite(self):
        with pytest.raises(ValidationError):
            MotionSequence(np.zeros(5))
        with pytest.raises(ValidationError):
            MotionSequence(np.array([[np.nan, 0.0]]))

    def test_with_data_keeps_rate(self):
        seq = MotionSequence(np.zeros((3, 2)), frame_rate=30.0)
        assert seq.with_data(np.ones((3, 2))).frame_rate == 30.0


class TestManifestEntry:
    def test_valid_entry_passes(self):
        make_entry().validate()

    def test_emotion_talk_requires_annotation_fields(self):
        for field in ("audio_path", "emotion", "intensity", "au"):
            with pytest.raises(ValidationError, match=field):
                make_entry(**{field: None}).validate()

    def test_motion_control_requires_instruction(self):
        entry = make_entry(
            task=TaskKind.MOTION_CONTROL,
            audio_path=None,
            emotion=None,
            intensity=None,
            au=None,
            instruction=None,
        )
        with pytest.raises(ValidationError, match="instruction"):
            entry.validate()

    def test_motion_control_refuses_audio_and_emotion_fields(self):
        base = dict(
            task=TaskKind.MOTION_CONTROL,
            audio_path=None,
            emotion=None,
            intensity=None,
            au=None,
            instruction="nod twice",
        )
        with pytest.raises(ValidationError, match="audio"):
            make_entry(**{**base, "audio_path": "a.npy"}).validate()
        with pytest.raises(ValidationError, match="emotion"):
            make_entry(**{**base, "emotion": EmotionLabel.SAD}).validate()

    def test_unknown_json_field_rejected(self):
        with pytest.raises(ManifestError, match="surprise_me"):
            ManifestEntry.from_json_dict({"surprise_me": 1, "task": "emotion_talk"})

    def test_json_round_trip(self):
        entry = make_entry()
        again = ManifestEntry.from_json_dict(entry.to_json_dict())
        assert again == entry


class TestManifestIO:
    def test_write_load_round_trip(self, tmp_path):
        entries = [
            make_entry(),
            make_entry(
                id="clip02",
                task=TaskKind.MOTION_CONTROL,
                audio_path=None,
                emotion=None,
                intensity=None,
                au=None,
                instruction="nod your head twice",
            ),
        ]
        path = tmp_path / "manifest.jsonl"
        write_manifest(entries, path)
        assert load_manifest(path) == entries

    def test_write_is_canonical(self, tmp_path):
        entries = [make_entry()]
        path = tmp_path / "m.jsonl"
        write_manifest(entries, path)
        assert path.read_bytes() == manifest_bytes(entries)
        write_manifest(load_manifest(path), path)
        assert path.read_bytes() == manifest_bytes(entries)

    def test_duplicate_ids_rejected(self, tmp_path):
        path = tmp_path / "m.jsonl"
        write_manifest([make_entry()], path)
        line = path.read_text()
        path.write_text(line + line)
        with pytest.raises(ManifestError, match="duplicate"):
            load_manifest(path)

    def test_bad_line_reports_line_number(self, tmp_path):
        path = tmp_path / "m.jsonl"
        write_manifest([make_entry()], path)
        path.write_text(path.read_text() + "{not json}\n")
        with pytest.raises(ManifestError, match=r":2:"):
            load_manifest(path)
