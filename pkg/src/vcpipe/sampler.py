"""Dual-mode training pair construction.

Each pair randomly activates conversion mode (target = kNN teacher output
for a randomly drawn pool speaker) or reconstruction mode (target = the
source itself) with probability p_conversion, default 0.5. The speaker
prompt is a random contiguous slice of the pair's own target sequence and is
prepended to the enhanced content along time to form the converter input.

RNG draw order per pair is fixed: mode, then speaker (conversion only), then
prompt start (only when the target is longer than the prompt), so a seeded
generator reproduces the full pair stream.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kmeans
from .decoupler import DecouplerModel, encode
from .features import FeatureMatrix, concat_frames, prompt_length_frames, slice_frames
from .teacher import MatchingPool, knn_convert, sample_speaker

MODE_RECONSTRUCTION = "reconstruction"
MODE_CONVERSION = "conversion"


@dataclass(frozen=True)
class PairConfig:
    p_conversion: float = 0.5
    prompt_seconds: float = 3.0
    min_frames: int = 30  # utterances shorter than this are rejected

    def __post_init__(self):
        if not 0.0 <= self.p_conversion <= 1.0:
            raise ValueError(f"p_conversion must be in [0, 1], got {self.p_conversion}")
        if self.prompt_seconds <= 0:
            raise ValueError(f"prompt_seconds must be positive, got {self.prompt_seconds}")


@dataclass(frozen=True)
class TrainingPair:
    mode: str
    content: FeatureMatrix  # enhanced content of the source
    prompt: FeatureMatrix  # contiguous slice of the target
    target: FeatureMatrix  # same length as content
    target_ids: tuple[np.ndarray, ...]  # per-frame tokens, small/medium/large
    converter_input: FeatureMatrix  # prompt then content, along time
    speaker: str | None = None  # pool speaker in conversion mode
    prompt_start: int = 0

    def __post_init__(self):
        if self.target.frames != self.content.frames:
            raise ValueError("target and content must have the same frame count")
        if self.converter_input.frames != self.prompt.frames + self.content.frames:
            raise ValueError("converter input must be prompt plus content along time")
        for ids in self.target_ids:
            if ids.shape[0] != self.target.frames:
                raise ValueError("token sequences must cover every target frame")


def make_pair(
    source: FeatureMatrix,
    model: DecouplerModel,
    pool: MatchingPool | None,
    tokenizers,
    config: PairConfig,
    rng: np.random.Generator,
) -> TrainingPair:
    """Sample one training pair from a source utterance.

    A pool is only required when conversion mode can be drawn
    (p_conversion > 0). Utterances shorter than the prompt keep the whole
    target as the prompt rather than padding it.
    """
    if source.frames < config.min_frames:
        raise ValueError(
            f"utterance of {source.frames} frames is below the minimum {config.min_frames}"
        )
    for tok in tokenizers:
        if tok.dim != source.dim:
            raise ValueError(f"tokenizer dim {tok.dim} does not match source dim {source.dim}")

    if float(rng.random()) < config.p_conversion:
        if pool is None:
            raise ValueError("conversion mode requires a matching pool")
        mode = MODE_CONVERSION
        speaker = sample_speaker(pool, rng)
        target = knn_convert(pool, speaker, source)
    else:
        mode = MODE_RECONSTRUCTION
        speaker = None
        target = source

    prompt_frames = prompt_length_frames(config.prompt_seconds, source.hop_ms)
    if target.frames <= prompt_frames:
        prompt_start = 0
        prompt = slice_frames(target, 0, target.frames)
    else:
        prompt_start = int(rng.integers(0, target.frames - prompt_frames + 1))
        prompt = slice_frames(target, prompt_start, prompt_frames)

    content = encode(model, source).enhanced
    target_ids = tuple(kmeans.assign(tok, target.data.astype(np.float64)) for tok in tokenizers)
    return TrainingPair(
        mode=mode,
        content=content,
        prompt=prompt,
        target=target,
        target_ids=target_ids,
        converter_input=concat_frames(prompt, content),
        speaker=speaker,
        prompt_start=prompt_start,
    )


def iter_pairs(sources, model, pool, tokenizers, config: PairConfig,
               rng: np.random.Generator):
    """Endless pair stream; draws a uniformly random source before each pair."""
    sources = list(sources)
    if not sources:
        raise ValueError("no source utterances")
    while True:
        source = sources[int(rng.integers(len(sources)))]
        yield make_pair(source, model, pool, tokenizers, config, rng)
