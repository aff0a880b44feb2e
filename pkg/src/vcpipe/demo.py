"""Seeded end-to-end training demo on the synthetic speaker corpus.

Wires the whole pipeline together at desk scale: generate an additive
speaker corpus, fit the decoupler and the three progressive tokenizers,
build the teacher pool, stream dual-mode pairs, train the toy converter,
then convert held-out utterances to other speakers and score them with the
similarity proxy. Everything is reproducible from the single seed.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kmeans
from .converter import ConverterConfig, OptimizerConfig, convert, smoothed_curve, train
from .decoupler import DecouplerConfig, DecouplerModel, fit_decoupler
from .evalkit import SyntheticCorpusSpec, generate_corpus, speaker_similarity_proxy
from .features import FeatureMatrix, slice_frames, prompt_length_frames
from .sampler import PairConfig, iter_pairs
from .teacher import MatchingPool, build_pool


@dataclass(frozen=True)
class DemoConfig:
    seed: int = 7
    num_speakers: int = 4
    dim: int = 16
    frames_per_speaker: int = 3000
    content_archetypes: int = 8
    speaker_offset_scale: float = 1.5
    noise_sigma: float = 0.1
    hop_ms: float = 20.0
    utterance_frames: int = 100
    pool_frames: int = 1200
    holdout_utterances: int = 2
    k1: int = 32
    k2: int = 8
    vocab_sizes: tuple[int, int, int] = (8, 16, 32)
    k_neighbors: int = 8
    p_conversion: float = 0.5
    prompt_seconds: float = 1.0
    num_blocks: int = 4
    hidden_dim: int = 32
    ffn_dim: int = 64
    steps: int = 2000
    learning_rate: float = 5e-4
    smoothing_window: int = 50


@dataclass
class DemoResult:
    model: object
    decoupler_model: DecouplerModel
    pool: MatchingPool
    reports: list
    smoothed: np.ndarray
    step50_loss: float
    final_loss: float
    proxy_to_target: float
    proxy_to_source: float
    conversions: list  # (source speaker, target speaker, proxy pair)


def _chop(m: FeatureMatrix, start: int, end: int, size: int):
    """Consecutive size-frame utterances from rows [start, end)."""
    return [slice_frames(m, s, size) for s in range(start, end - size + 1, size)]


def run_demo(config: DemoConfig = DemoConfig()) -> DemoResult:
    corpus = generate_corpus(SyntheticCorpusSpec(
        num_speakers=config.num_speakers,
        frames_per_speaker=config.frames_per_speaker,
        dim=config.dim,
        content_archetypes=config.content_archetypes,
        speaker_offset_scale=config.speaker_offset_scale,
        noise_sigma=config.noise_sigma,
        seed=config.seed,
        hop_ms=config.hop_ms,
    ))

    holdout_span = config.holdout_utterances * config.utterance_frames
    train_end = config.frames_per_speaker - holdout_span
    pool_entries = []
    train_utts = []
    holdout = []  # (speaker index, utterance)
    for s, (sid, m) in enumerate(corpus):
        pool_entries.append((sid, slice_frames(m, 0, config.pool_frames)))
        train_utts.extend(_chop(m, config.pool_frames, train_end, config.utterance_frames))
        holdout.extend((s, u) for u in _chop(m, train_end, m.frames, config.utterance_frames))

    train_frames = [u for u in train_utts]
    decoupler_model = fit_decoupler(train_frames, DecouplerConfig(
        k1=config.k1, k2=config.k2, seed=config.seed))
    pooled = np.vstack([u.data for u in train_frames]).astype(np.float64)
    tokenizers = tuple(
        kmeans.fit(pooled, v, kmeans.KMeansConfig(seed=config.seed + 10 + j))
        for j, v in enumerate(config.vocab_sizes)
    )
    pool = build_pool(pool_entries, k=config.k_neighbors)

    pair_rng = np.random.default_rng(config.seed)
    stream = iter_pairs(
        train_utts, decoupler_model, pool, tokenizers,
        PairConfig(p_conversion=config.p_conversion, prompt_seconds=config.prompt_seconds),
        pair_rng,
    )
    conv_cfg = ConverterConfig(
        input_dim=config.dim,
        num_blocks=config.num_blocks,
        hidden_dim=config.hidden_dim,
        ffn_dim=config.ffn_dim,
        vocab_sizes=config.vocab_sizes,
        max_len=2 * config.utterance_frames + prompt_length_frames(
            config.prompt_seconds, config.hop_ms),
        seed=config.seed,
    )
    opt_cfg = OptimizerConfig(learning_rate=config.learning_rate, steps=config.steps,
                              seed=config.seed)
    model, reports = train(stream, conv_cfg, opt_cfg)

    curve = smoothed_curve([r.l_total for r in reports], window=config.smoothing_window)
    step50 = float(curve[min(config.smoothing_window - 1, curve.size - 1)])
    final = float(curve[-1])

    # held-out conversion: render each held-out utterance with the next
    # speaker's timbre, prompting with that speaker's pool frames
    prompt_frames = prompt_length_frames(config.prompt_seconds, config.hop_ms)
    speaker_ids = [sid for sid, _ in corpus]
    refs = {sid: frames for sid, frames in pool.speakers.items()}
    to_target = []
    to_source = []
    conversions = []
    for s, utt in holdout:
        t = (s + 1) % config.num_speakers
        src_id, tgt_id = speaker_ids[s], speaker_ids[t]
        prompt = FeatureMatrix(refs[tgt_id][:prompt_frames], hop_ms=config.hop_ms)
        converted = convert(model, decoupler_model, utt, prompt)
        ref_t = FeatureMatrix(refs[tgt_id], hop_ms=config.hop_ms)
        ref_s = FeatureMatrix(refs[src_id], hop_ms=config.hop_ms)
        pt = speaker_similarity_proxy(converted, ref_t)
        ps = speaker_similarity_proxy(converted, ref_s)
        to_target.append(pt)
        to_source.append(ps)
        conversions.append((src_id, tgt_id, pt, ps))

    return DemoResult(
        model=model,
        decoupler_model=decoupler_model,
        pool=pool,
        reports=reports,
        smoothed=curve,
        step50_loss=step50,
        final_loss=final,
        proxy_to_target=float(np.mean(to_target)),
        proxy_to_source=float(np.mean(to_source)),
        conversions=conversions,
    )
