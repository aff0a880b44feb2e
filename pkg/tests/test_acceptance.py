"""Acceptance suite: one test per criterion, each printing a PASS line with
its measured runtime (run pytest with -s to see them as they complete).

Everything runs on synthetic data; the SSL feature exporter has its own
acceptance test in its own package (exporter/tests), since this suite must
stand without it.
"""

import time

import numpy as np
import pytest

from helpers import best_two_partition, knn_oracle
from vcpipe import kmeans
from vcpipe.converter import gradient_check, tiny_check_config
from vcpipe.decoupler import DecouplerConfig, distortion_report, fit_decoupler
from vcpipe.demo import DemoConfig, run_demo
from vcpipe.evalkit import SyntheticCorpusSpec, generate_corpus
from vcpipe.features import FeatureMatrix, read_features, slice_frames, write_features
from vcpipe.losses import mse_loss, progressive_ce, ssim_loss, total_loss
from vcpipe.sampler import MODE_CONVERSION, PairConfig, iter_pairs
from vcpipe.teacher import build_pool, knn_convert


class Timer:
    def __init__(self, limit_s):
        self.limit_s = limit_s

    def __enter__(self):
        self.start = time.perf_counter()
        return self

    def __exit__(self, *exc):
        self.elapsed = time.perf_counter() - self.start
        return False


def report(number, name, timer):
    assert timer.elapsed < timer.limit_s, (
        f"criterion {number} took {timer.elapsed:.1f}s, limit {timer.limit_s}s")
    print(f"\n[criterion {number}] PASS {name} "
          f"({timer.elapsed:.1f}s < {timer.limit_s}s)")


def test_criterion_1_kmeans_correctness():
    with Timer(5.0) as t:
        pts = np.array([[0.0, 0.0], [0.0, 1.0], [10.0, 0.0], [10.0, 1.0]])
        oracle_cents, oracle_d = best_two_partition(pts)
        cb = kmeans.fit(pts, 2, kmeans.KMeansConfig(seed=0))
        got = cb.centroids[np.lexsort(cb.centroids.T[::-1])]
        assert np.array_equal(got, oracle_cents)
        assert np.array_equal(got, [[0.0, 0.5], [10.0, 0.5]])
        assert cb.distortion == 0.25 == oracle_d

        rng = np.random.default_rng(1)
        for seed in range(100):
            n = int(rng.integers(10, 80))
            d = int(rng.integers(1, 6))
            k = int(rng.integers(1, min(n, 10) + 1))
            pts = np.random.default_rng(seed).normal(size=(n, d))
            trace = kmeans.fit(pts, k, kmeans.KMeansConfig(seed=seed)).fit_distortion_trace
            assert (np.diff(trace) <= 1e-12).all(), f"non-monotone trace at seed {seed}"
    report(1, "k-means exact optimum and Lloyd monotonicity", t)


def test_criterion_2_residual_decoupler_bound():
    with Timer(30.0) as t:
        for seed in range(20):
            frames = np.random.default_rng(seed).normal(size=(5000, 16)) * 2.0
            corpus = [FeatureMatrix(frames.astype(np.float32))]
            model = fit_decoupler(corpus, DecouplerConfig(k1=32, k2=8, seed=seed))
            rep = distortion_report(model, corpus)
            assert rep.stage2_mse <= rep.stage1_mse, f"aggregate bound broke at seed {seed}"

            x = corpus[0].data.astype(np.float64)
            c1, _ = kmeans.quantize(model.content_cb, x)
            r = x - c1
            c2, _ = kmeans.quantize(model.residual_cb, r)
            per_frame_ok = ((r - c2) ** 2).sum(axis=1) <= (r ** 2).sum(axis=1)
            assert per_frame_ok.all(), f"per-frame bound broke at seed {seed}"
    report(2, "residual stage never hurts (aggregate and per frame)", t)


def test_criterion_3_knn_teacher_exactness():
    with Timer(10.0) as t:
        for seed in range(50):
            rng = np.random.default_rng(1000 + seed)
            pool_frames = rng.normal(size=(128, 8)).astype(np.float32)
            source = FeatureMatrix(rng.normal(size=(16, 8)).astype(np.float32))
            for k in (1, 8):
                pool = build_pool([("s", FeatureMatrix(pool_frames))], k=k)
                got = knn_convert(pool, "s", source)
                want = knn_oracle(pool_frames, source.data.astype(np.float64), k)
                assert np.array_equal(got.data, want.astype(np.float32)), (seed, k)
        rng = np.random.default_rng(5)
        src = FeatureMatrix(rng.normal(size=(64, 8)).astype(np.float32))
        self_pool = build_pool([("me", src)], k=1)
        assert np.array_equal(knn_convert(self_pool, "me", src).data, src.data)
    report(3, "kNN teacher equals the brute-force oracle, k in {1, 8}", t)


def test_criterion_4_dual_mode_statistics():
    with Timer(60.0) as t:
        corpus = generate_corpus(SyntheticCorpusSpec(
            num_speakers=4, frames_per_speaker=1000, dim=16, seed=7))
        mats = [m for _, m in corpus]
        model = fit_decoupler(mats, DecouplerConfig(k1=16, k2=4, seed=7))
        pooled = np.vstack([m.data for m in mats]).astype(np.float64)
        tokenizers = tuple(kmeans.fit(pooled, v, kmeans.KMeansConfig(seed=50 + v))
                           for v in (8, 16, 32))
        pool = build_pool([(sid, slice_frames(m, 0, 200)) for sid, m in corpus], k=8)
        sources = [slice_frames(m, s, 200) for m in mats for s in (400, 600, 800)]
        stream = iter_pairs(sources, model, pool, tokenizers,
                            PairConfig(p_conversion=0.5), np.random.default_rng(7))
        n = 10_000
        conversions = 0
        for _ in range(n):
            pair = next(stream)
            conversions += pair.mode == MODE_CONVERSION
            assert pair.prompt.frames == 150  # 3 s at 20 ms hop
            assert pair.target.frames == pair.content.frames == 200
            assert pair.converter_input.frames == pair.prompt.frames + pair.content.frames
            assert all(ids.shape[0] == 200 for ids in pair.target_ids)
        freq = conversions / n
        assert 0.485 <= freq <= 0.515, f"conversion frequency {freq}"
    report(4, f"dual-mode frequency {freq:.4f} and pair invariants over 10k pairs", t)


def test_criterion_5_loss_gradients():
    with Timer(30.0) as t:
        rng = np.random.default_rng(13)

        def fd(fn, x, step=1e-4):
            grad = np.zeros_like(x)
            for idx in np.ndindex(x.shape):
                xp = x.copy(); xp[idx] += step
                xm = x.copy(); xm[idx] -= step
                grad[idx] = (fn(xp) - fn(xm)) / (2 * step)
            return grad

        def rel(a, b):
            return float((np.abs(a - b)
                          / np.maximum(np.maximum(np.abs(a), np.abs(b)), 1e-6)).max())

        mask = np.zeros(32, bool)
        mask[:5] = True
        pred = rng.normal(size=(32, 4))
        target = rng.normal(size=(32, 4))
        _, g = mse_loss(pred, target, mask)
        assert rel(g, fd(lambda p: mse_loss(p, target, mask)[0], pred)) < 1e-5
        _, g = ssim_loss(pred, target, mask, window=9)
        assert rel(g, fd(lambda p: ssim_loss(p, target, mask, window=9)[0], pred)) < 1e-5

        vocab = (8, 16, 32)
        logits = [rng.normal(size=(16, v)) for v in vocab]
        ids = [rng.integers(0, v, 16) for v in vocab]
        cmask = np.zeros(16, bool)
        cmask[:3] = True
        losses, grads = progressive_ce(logits, ids, cmask)
        for j in range(3):
            def loss_j(lg, j=j):
                stack = [a if i != j else lg for i, a in enumerate(logits)]
                return progressive_ce(stack, ids, cmask)[0][j]
            assert rel(grads[j], fd(loss_j, logits[j])) < 1e-5

        # additivity holds bit-exactly and uniform logits give ln V
        l_small, l_medium, l_large = losses
        assert l_small + l_medium + l_large == sum(losses[:2]) + losses[2]
        uniform, _ = progressive_ce([np.zeros((16, v)) for v in vocab],
                                    [np.zeros(16, np.int64)] * 3)
        for lv, v in zip(uniform, vocab):
            assert abs(lv - np.log(v)) < 1e-9
    report(5, "analytic loss gradients vs central differences at 1e-5", t)


def test_criterion_5b_report_additivity(tiny_pairs):
    with Timer(30.0) as t:
        rng = np.random.default_rng(17)
        for pair in tiny_pairs:
            tt = pair.converter_input.frames
            pred = rng.normal(size=(tt, pair.converter_input.dim))
            logits = [rng.normal(size=(tt, v)) for v in (4, 8, 16)]
            rep, _ = total_loss(pair, pred, logits)
            assert rep.l_pro == rep.l_small + rep.l_medium + rep.l_large
            assert rep.l_total == rep.l_mse + rep.l_ssim + rep.l_pro
    report(5, "LossReport additivity is bit-exact (criterion 5, second half)", t)


def test_criterion_6_full_model_gradient_check():
    with Timer(300.0) as t:
        cfg = tiny_check_config()
        assert cfg.num_blocks == 2 and cfg.hidden_dim == 8
        worst = gradient_check(config=cfg, seed=7, frames=12)
        assert worst < 1e-4, f"max relative gradient error {worst:.3e}"
    report(6, f"full-model gradient check, max rel err {worst:.2e} < 1e-4", t)


@pytest.fixture(scope="module")
def demo_result():
    start = time.perf_counter()
    res = run_demo(DemoConfig(seed=7))
    return res, time.perf_counter() - start


def test_criterion_7_training_demo_loss(demo_result):
    res, elapsed = demo_result
    t = Timer(600.0)
    t.elapsed = elapsed
    assert res.final_loss < 0.5 * res.step50_loss, (
        f"smoothed loss {res.final_loss:.3f} vs step-50 {res.step50_loss:.3f}")
    report(7, f"loss {res.step50_loss:.2f} -> {res.final_loss:.2f} "
              f"({res.final_loss / res.step50_loss:.1%} of step-50)", t)


def test_criterion_7b_training_demo_conversion(demo_result):
    res, elapsed = demo_result
    t = Timer(600.0)
    t.elapsed = elapsed
    assert res.proxy_to_target > res.proxy_to_source, (
        f"target {res.proxy_to_target:.3f} vs source {res.proxy_to_source:.3f}")
    for src_id, tgt_id, pt, ps in res.conversions:
        assert pt > ps, f"{src_id}->{tgt_id}: {pt:.3f} <= {ps:.3f}"
    report(7, f"conversion proxy target {res.proxy_to_target:.3f} > "
              f"source {res.proxy_to_source:.3f} (criterion 7, second half)", t)


def test_criterion_8_format_stability(tmp_path):
    with Timer(60.0) as t:
        import test_golden
        test_golden.test_golden_bytes_unchanged()
        test_golden.test_golden_features_parse()

        rng = np.random.default_rng(21)
        for i in range(1000):
            frames = int(rng.integers(1, 12))
            dim = int(rng.integers(1, 10))
            m = FeatureMatrix(rng.normal(size=(frames, dim)).astype(np.float32),
                              hop_ms=float(rng.integers(1, 100)))
            path = tmp_path / "rt.vtf"
            write_features(m, path)
            back = read_features(path)
            assert back.data.tobytes() == m.data.tobytes()
            assert back.hop_ms == m.hop_ms
            write_features(back, tmp_path / "rt2.vtf")
            assert (tmp_path / "rt2.vtf").read_bytes() == path.read_bytes()
    report(8, "golden files stable, 1000 random round trips bit-exact", t)
