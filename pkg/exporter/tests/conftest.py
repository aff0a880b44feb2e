import math
import wave

import numpy as np
import pytest
import torch
from transformers import Wav2Vec2Config, Wav2Vec2Model


@pytest.fixture(scope="session")
def model_dir(tmp_path_factory):
    """A seeded checkpoint with the production model's interface geometry.

    The real multilingual checkpoint is too large to fetch here, so tests use
    a randomly initialized model that keeps everything the exporter contract
    depends on: the wav2vec2 convolutional frontend (20 ms hop at 16 kHz),
    1024-dim hidden states and at least 6 transformer blocks. Only the
    attention/FFN widths are slimmed down.
    """
    config = Wav2Vec2Config(
        hidden_size=1024,
        num_hidden_layers=6,
        num_attention_heads=16,
        intermediate_size=256,
        conv_dim=(64,) * 7,
        num_conv_pos_embeddings=16,
        num_conv_pos_embedding_groups=8,
        do_stable_layer_norm=True,
        feat_extract_norm="layer",
    )
    torch.manual_seed(7)
    model = Wav2Vec2Model(config)
    path = tmp_path_factory.mktemp("model")
    model.save_pretrained(path)
    return str(path)


def write_wav(path, samples: np.ndarray, rate: int) -> None:
    pcm = np.clip(samples, -1.0, 1.0)
    pcm = (pcm * 32767.0).astype("<i2")
    with wave.open(str(path), "wb") as fh:
        fh.setnchannels(1)
        fh.setsampwidth(2)
        fh.setframerate(rate)
        fh.writeframes(pcm.tobytes())


@pytest.fixture(scope="session")
def clips(tmp_path_factory):
    """3.0 s test clips: a harmonic one, a silent one, and a 22.05 kHz one."""
    root = tmp_path_factory.mktemp("clips")
    rate = 16000
    t = np.arange(int(3.0 * rate)) / rate
    tone = (0.4 * np.sin(2 * math.pi * 220 * t)
            + 0.2 * np.sin(2 * math.pi * 447 * t)
            + 0.05 * np.random.default_rng(3).normal(size=t.size))
    write_wav(root / "tone.wav", tone, rate)
    write_wav(root / "silence.wav", np.zeros(int(3.0 * rate)), rate)

    rate_hi = 22050
    t_hi = np.arange(int(3.0 * rate_hi)) / rate_hi
    write_wav(root / "tone_22k.wav", 0.3 * np.sin(2 * math.pi * 330 * t_hi), rate_hi)
    return root
