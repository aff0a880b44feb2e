import numpy as np
import pytest

from vcpipe import kmeans
from vcpipe.decoupler import DecouplerConfig, fit_decoupler
from vcpipe.evalkit import SyntheticCorpusSpec, generate_corpus
from vcpipe.features import slice_frames
from vcpipe.sampler import PairConfig, iter_pairs
from vcpipe.teacher import build_pool


@pytest.fixture(scope="session")
def tiny_pairs():
    """A handful of small dual-mode pairs (dim 6, short prompt) for loop tests."""
    corpus = generate_corpus(SyntheticCorpusSpec(
        num_speakers=2, frames_per_speaker=400, dim=6, content_archetypes=4,
        speaker_offset_scale=1.0, noise_sigma=0.05, seed=99))
    mats = [m for _, m in corpus]
    model = fit_decoupler(mats, DecouplerConfig(k1=8, k2=4, seed=99))
    pooled = np.vstack([m.data for m in mats]).astype(np.float64)
    tokenizers = tuple(kmeans.fit(pooled, v, kmeans.KMeansConfig(seed=40 + v))
                       for v in (4, 8, 16))
    pool = build_pool(corpus, k=4)
    sources = [slice_frames(m, s, 40) for m in mats for s in (0, 80)]
    stream = iter_pairs(sources, model, pool, tokenizers,
                        PairConfig(p_conversion=0.5, prompt_seconds=0.2),
                        np.random.default_rng(123))
    return [next(stream) for _ in range(4)]
