import json

import numpy as np
import pytest

from avamo.core import EmotionLabel
from avamo.denoiser import Denoiser, DenoiserConfig
from avamo.diffusion import build_schedule
from avamo.instructions import default_bank, request_key
from avamo.synthetic import synth_corpus


TINY_CFG = DenoiserConfig(
    d_mot=6,
    d_aud=4,
    d_txt=16,
    d_pose=6,
    d_hidden=16,
    n_blocks=2,
    n_heads=2,
    conv_kernel=3,
    gate_kernel=3,
    ffn_mult=2,
)


@pytest.fixture(scope="session")
def tiny_cfg():
    return TINY_CFG


@pytest.fixture(scope="session")
def tiny_model(tiny_cfg):
    return Denoiser.initialize(tiny_cfg, seed=0)


@pytest.fixture(scope="session")
def schedule():
    return build_schedule(1000, 0.05, 20.0)


@pytest.fixture(scope="session")
def short_schedule():
    return build_schedule(50, 0.05, 20.0)


@pytest.fixture(scope="session")
def bank():
    return default_bank()


@pytest.fixture(scope="session")
def corpus8(tmp_path_factory):
    """Small mixed-task corpus: 2 emotions x 2 persons + 4 motion clips."""
    root = tmp_path_factory.mktemp("corpus8")
    return synth_corpus(
        root,
        n_clips_per_emotion=2,
        emotions=(EmotionLabel.HAPPY, EmotionLabel.ANGRY),
        n_motion_clips=4,
        n_persons=2,
        n_frames=12,
        d_mot=16,
        d_aud=8,
        seed=21,
    )


def write_fixture(directory, au_names, sentences, corrected=None, image=None):
    """Drop one paraphrase fixture file keyed like the replay client."""
    directory.mkdir(parents=True, exist_ok=True)
    body = {"sentences": list(sentences), "corrected_aus": corrected}
    path = directory / f"{request_key(au_names, image)}.json"
    path.write_text(json.dumps(body))
    return path


@pytest.fixture()
def rng():
    return np.random.default_rng(0)
