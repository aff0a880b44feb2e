"""Run a pretrained SSL speech model over audio files and dump VTF features.

The model is any wav2vec2-family checkpoint (the multilingual XLS-R 300M
checkpoint is the intended production choice; its hidden width is 1024 and
its convolutional frontend yields one frame per 20 ms at 16 kHz). Features
are taken from one intermediate transformer layer: --layer counts transformer
blocks 1-based and does not count the convolutional frontend, so layer 6 is
the output of the sixth block.

Inference is deterministic: no stochastic layers are active in eval mode and
torch is pinned to one thread, so exporting the same file twice produces
byte-identical VTF output.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
from transformers import Wav2Vec2Model

from .audio import load_wav, resample
from .vtf import write_vtf


@dataclass(frozen=True)
class ExportSpec:
    audio_paths: tuple
    model: str  # checkpoint name or local directory
    out_dir: str
    layer: int = 6  # 1-based transformer block index
    expected_dim: int = 1024
    hop_ms: float = 20.0
    sample_rate: int = 16000  # the model's native rate


def _load_model(spec: ExportSpec) -> Wav2Vec2Model:
    model = Wav2Vec2Model.from_pretrained(spec.model)
    model.eval()
    hidden = model.config.hidden_size
    if hidden != spec.expected_dim:
        raise ValueError(
            f"model hidden width {hidden} does not match expected dim {spec.expected_dim}")
    layers = model.config.num_hidden_layers
    if not 1 <= spec.layer <= layers:
        raise ValueError(f"layer {spec.layer} out of range, model has {layers} blocks")
    return model


def export(spec: ExportSpec) -> list:
    """One VTF file per input; returns the written paths in input order."""
    torch.set_num_threads(1)
    model = _load_model(spec)
    out_dir = Path(spec.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    with torch.no_grad():
        for audio_path in spec.audio_paths:
            samples, rate = load_wav(audio_path)
            samples = resample(samples, rate, spec.sample_rate)
            wav = torch.from_numpy(samples)[None, :]
            states = model(wav, output_hidden_states=True).hidden_states
            frames = states[spec.layer][0].numpy().astype(np.float32)
            _check_frame_count(audio_path, frames.shape[0],
                               samples.size / spec.sample_rate, spec.hop_ms)
            out_path = out_dir / (Path(audio_path).stem + ".vtf")
            write_vtf(out_path, frames, spec.hop_ms)
            written.append(out_path)
    return written


def _check_frame_count(path, frames: int, duration_s: float, hop_ms: float) -> None:
    expected = duration_s * 1000.0 / hop_ms
    if abs(frames - expected) > 1.0 + 1e-9:
        raise ValueError(
            f"{path}: got {frames} frames for {duration_s:.3f}s audio, "
            f"expected {expected:.1f} within 1 frame; check --hop-ms against the model")
