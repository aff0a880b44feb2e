"""Synthetic speaker corpus and feature-space evaluation proxies.

The generated corpus is strictly additive per frame: a shared content
archetype vector plus a per-speaker offset plus Gaussian noise. That gives
ground-truth content and speaker factors, so "conversion moved the speaker
factor" is measurable by construction. The similarity proxy is the cosine of
time-averaged feature vectors, a desk-scale stand-in for an embedding-based
speaker similarity (reported only as a proxy).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import kmeans
from .features import FeatureMatrix
from .kmeans import Codebook


@dataclass(frozen=True)
class SyntheticCorpusSpec:
    num_speakers: int = 4
    frames_per_speaker: int = 500
    dim: int = 16
    content_archetypes: int = 8
    speaker_offset_scale: float = 1.0
    noise_sigma: float = 0.1
    seed: int = 0
    hop_ms: float = 20.0

    def __post_init__(self):
        if min(self.num_speakers, self.frames_per_speaker, self.dim,
               self.content_archetypes) < 1:
            raise ValueError("all corpus counts must be >= 1")
        if self.speaker_offset_scale < 0 or self.noise_sigma < 0:
            raise ValueError("scales must be >= 0")


def speaker_id(index: int) -> str:
    return f"spk{index:02d}"


def generate_corpus(spec: SyntheticCorpusSpec):
    """One (speaker-id, FeatureMatrix) entry per speaker, deterministic per seed.

    Draw order is fixed: archetypes, then offsets, then per speaker the
    archetype indices and the noise block.
    """
    rng = np.random.default_rng(spec.seed)
    archetypes = rng.normal(0.0, 1.0, size=(spec.content_archetypes, spec.dim))
    offsets = rng.normal(0.0, 1.0, size=(spec.num_speakers, spec.dim)) * spec.speaker_offset_scale
    corpus = []
    for s in range(spec.num_speakers):
        idx = rng.integers(0, spec.content_archetypes, size=spec.frames_per_speaker)
        noise = rng.normal(0.0, spec.noise_sigma, size=(spec.frames_per_speaker, spec.dim))
        frames = archetypes[idx] + offsets[s] + noise
        corpus.append((speaker_id(s), FeatureMatrix(data=frames.astype(np.float32),
                                                    hop_ms=spec.hop_ms)))
    return corpus


def speaker_similarity_proxy(a: FeatureMatrix, b: FeatureMatrix) -> float:
    """Cosine similarity of the time-averaged feature vectors, in [-1, 1]."""
    ma = a.data.astype(np.float64).mean(axis=0)
    mb = b.data.astype(np.float64).mean(axis=0)
    na = np.linalg.norm(ma)
    nb = np.linalg.norm(mb)
    if na == 0.0 or nb == 0.0:
        raise ValueError("cannot compute the proxy on a zero-norm mean vector")
    return float(ma @ mb / (na * nb))


@dataclass(frozen=True)
class CodebookStats:
    utilization: float  # fraction of centroids assigned at least one frame
    perplexity: float  # exp(entropy) of the assignment distribution


def codebook_stats(cb: Codebook, corpus) -> CodebookStats:
    """Quantizer health diagnostics over a corpus of feature matrices."""
    mats = list(corpus)
    if not mats:
        raise ValueError("corpus is empty")
    frames = np.vstack([m.data for m in mats])
    ids = kmeans.assign(cb, frames)
    counts = np.bincount(ids, minlength=cb.k)
    total = counts.sum()
    probs = counts[counts > 0] / total
    entropy = float(-(probs * np.log(probs)).sum())
    return CodebookStats(
        utilization=float((counts > 0).sum() / cb.k),
        perplexity=math.exp(entropy),
    )
