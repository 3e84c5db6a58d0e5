import numpy as np
import pytest

from accent_tts import corpus, dsp
from accent_tts.model import ModelConfig


@pytest.fixture(scope="session")
def audio_cfg():
    return dsp.AudioConfig()


@pytest.fixture(scope="session")
def small_corpus(audio_cfg):
    spec = corpus.SyntheticSpec(n_speakers=2, n_accents=2, utterances_per_speaker=10, seed=3)
    return corpus.generate_synthetic_corpus(spec, audio_cfg)


@pytest.fixture(scope="session")
def tiny_cfg():
    return ModelConfig(n_blocks=1, hidden_dim=8, n_heads=2, ffn_dim=8, accent_dim=4, intensity_dim=4,
                       predictor_channels=8, gru_hidden=4, mel_dim=6, n_speakers=2, n_accents=2,
                       dropout=0.0)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
