"""Toy prompt-conditioned converter trained with manual backprop.

Pre-norm transformer blocks at desk scale: single-head self-attention over
the full prompt + content sequence (attention is the only cross-position
path, so prompt conditioning flows through it), a two-layer GELU
feed-forward, a learned per-position bias instead of sinusoidal encodings,
and three linear tap heads reading the hidden states of selected blocks for
the coarse-to-fine token constraints. All math is float64 so central finite
differences check the gradients tightly.

Checkpoints use the "VTM1" container: magic, u32 version, the config header
(u32 input_dim, output_dim, num_blocks, hidden_dim, ffn_dim, max_len, three
u32 tap layers, three u32 vocab sizes, u32 use_attention, f64 dropout,
u64 seed), then every parameter as little-endian float32 in the order given
by ToyConverter.param_names(), which is the creation order documented there.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .decoupler import DecouplerModel, encode
from .features import FeatureMatrix, concat_frames
from .losses import LossConfig, LossGrads, total_loss

CHECKPOINT_MAGIC = b"VTM1"
CHECKPOINT_VERSION = 1
_CHECKPOINT_HEADER = struct.Struct("<4sI6I3I3IIdQ")

_GELU_C = math.sqrt(2.0 / math.pi)


def default_tap_layers(num_blocks: int) -> tuple[int, int, int]:
    """Evenly spaced thirds with the last tap on the last block.

    Six blocks give (2, 4, 6); fewer than three blocks cannot host three
    distinct taps, so indices repeat (two blocks give (1, 1, 2)).
    """
    taps = [min(num_blocks, max(1, round(num_blocks * j / 3))) for j in (1, 2, 3)]
    taps[2] = num_blocks
    return tuple(taps)


@dataclass(frozen=True)
class ConverterConfig:
    input_dim: int
    output_dim: int | None = None  # defaults to input_dim
    num_blocks: int = 4
    hidden_dim: int = 32
    ffn_dim: int = 64
    tap_layers: tuple[int, int, int] | None = None  # 1-based block indices
    vocab_sizes: tuple[int, int, int] = (8, 16, 32)
    max_len: int = 512
    use_attention: bool = True
    dropout: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if min(self.input_dim, self.num_blocks, self.hidden_dim, self.ffn_dim,
               self.max_len) < 1:
            raise ValueError("all size fields must be >= 1")
        if self.output_dim is None:
            object.__setattr__(self, "output_dim", self.input_dim)
        taps = self.tap_layers or default_tap_layers(self.num_blocks)
        taps = tuple(int(t) for t in taps)
        if len(taps) != 3:
            raise ValueError(f"exactly 3 tap layers required, got {taps}")
        if list(taps) != sorted(taps):
            raise ValueError(f"tap layers must be sorted, got {taps}")
        if taps[0] < 1 or taps[-1] > self.num_blocks:
            raise ValueError(f"tap layers {taps} outside [1, {self.num_blocks}]")
        if self.num_blocks >= 3 and len(set(taps)) != 3:
            raise ValueError(f"tap layers must be unique, got {taps}")
        object.__setattr__(self, "tap_layers", taps)
        vocabs = tuple(int(v) for v in self.vocab_sizes)
        if not (0 < vocabs[0] < vocabs[1] < vocabs[2]):
            raise ValueError(f"vocab sizes must be strictly increasing, got {vocabs}")
        object.__setattr__(self, "vocab_sizes", vocabs)
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError(f"dropout must be in [0, 1), got {self.dropout}")


@dataclass(frozen=True)
class OptimizerConfig:
    learning_rate: float = 5e-4
    beta1: float = 0.9
    beta2: float = 0.95
    eps: float = 1e-8
    steps: int = 2000
    batch_size: int = 1
    seed: int = 0

    def __post_init__(self):
        if not self.learning_rate >= 0:
            raise ValueError("learning_rate must be >= 0")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ValueError("betas must lie in [0, 1)")


def _layer_norm_forward(x, gamma, beta, eps=1e-5):
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    var = (xc ** 2).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    return xhat * gamma + beta, (xhat, inv)


def _layer_norm_backward(dy, gamma, cache):
    xhat, inv = cache
    dgamma = (dy * xhat).sum(axis=0)
    dbeta = dy.sum(axis=0)
    dxhat = dy * gamma
    dx = inv * (
        dxhat
        - dxhat.mean(axis=-1, keepdims=True)
        - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True)
    )
    return dx, dgamma, dbeta


def _gelu_forward(x):
    t = np.tanh(_GELU_C * (x + 0.044715 * x ** 3))
    return 0.5 * x * (1.0 + t), t


def _gelu_backward(dy, x, t):
    dt = _GELU_C * (1.0 + 3 * 0.044715 * x ** 2) * (1.0 - t ** 2)
    return dy * (0.5 * (1.0 + t) + 0.5 * x * dt)


def _softmax_rows(s):
    z = s - s.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


class ToyConverter:
    """Parameters live in a name -> float64 array dict in fixed creation order:

    in.w, in.b, pos,
    block{i}.ln1.g/.ln1.b/.wq/.bq/.wk/.bk/.wv/.bv/.wo/.bo/
            .ln2.g/.ln2.b/.w1/.b1/.w2/.b2   for i = 0..num_blocks-1,
    final_ln.g, final_ln.b, out.w, out.b,
    head{j}.w, head{j}.b                    for j = 0..2.
    """

    def __init__(self, config: ConverterConfig):
        self.config = config
        rng = np.random.default_rng(config.seed)
        h, f = config.hidden_dim, config.ffn_dim
        p: dict[str, np.ndarray] = {}

        def uniform(shape, fan_in):
            a = 1.0 / math.sqrt(fan_in)
            return rng.uniform(-a, a, size=shape)

        p["in.w"] = uniform((config.input_dim, h), config.input_dim)
        p["in.b"] = np.zeros(h)
        p["pos"] = uniform((config.max_len, h), h)
        for i in range(config.num_blocks):
            p[f"block{i}.ln1.g"] = np.ones(h)
            p[f"block{i}.ln1.b"] = np.zeros(h)
            for w in ("wq", "wk", "wv", "wo"):
                p[f"block{i}.{w}"] = uniform((h, h), h)
            for b in ("bq", "bk", "bv", "bo"):
                p[f"block{i}.{b}"] = np.zeros(h)
            p[f"block{i}.ln2.g"] = np.ones(h)
            p[f"block{i}.ln2.b"] = np.zeros(h)
            p[f"block{i}.w1"] = uniform((h, f), h)
            p[f"block{i}.b1"] = np.zeros(f)
            p[f"block{i}.w2"] = uniform((f, h), f)
            p[f"block{i}.b2"] = np.zeros(h)
        p["final_ln.g"] = np.ones(h)
        p["final_ln.b"] = np.zeros(h)
        p["out.w"] = uniform((h, config.output_dim), h)
        p["out.b"] = np.zeros(config.output_dim)
        for j, v in enumerate(config.vocab_sizes):
            p[f"head{j}.w"] = uniform((h, v), h)
            p[f"head{j}.b"] = np.zeros(v)
        self.params = p
        self._dropout_rng = np.random.default_rng(config.seed + 1)

    def param_names(self) -> list[str]:
        return list(self.params)

    def num_params(self) -> int:
        return sum(arr.size for arr in self.params.values())

    def _maybe_dropout(self, x, train):
        if not train or self.config.dropout == 0.0:
            return x, None
        keep = 1.0 - self.config.dropout
        mask = (self._dropout_rng.random(x.shape) < keep) / keep
        return x * mask, mask

    def forward(self, x, train: bool = False):
        """Run the converter over a (prompt + content) sequence.

        Returns (pred, head_logits, cache): pred is (T, output_dim), the
        logits are (T, V_j) per head, and the cache holds every activation
        the backward pass needs.
        """
        cfg = self.config
        p = self.params
        x = np.asarray(getattr(x, "data", x), dtype=np.float64)
        if x.ndim != 2 or x.shape[1] != cfg.input_dim:
            raise ValueError(f"input must be (frames, {cfg.input_dim}), got {x.shape}")
        t = x.shape[0]
        if t > cfg.max_len:
            raise ValueError(f"sequence of {t} frames exceeds max_len {cfg.max_len}")

        h = x @ p["in.w"] + p["in.b"] + p["pos"][:t]
        blocks = []
        block_out = []
        scale = 1.0 / math.sqrt(cfg.hidden_dim)
        for i in range(cfg.num_blocks):
            blk: dict = {"h_in": h}
            if cfg.use_attention:
                u, ln1c = _layer_norm_forward(h, p[f"block{i}.ln1.g"], p[f"block{i}.ln1.b"])
                q = u @ p[f"block{i}.wq"] + p[f"block{i}.bq"]
                k = u @ p[f"block{i}.wk"] + p[f"block{i}.bk"]
                v = u @ p[f"block{i}.wv"] + p[f"block{i}.bv"]
                attn = _softmax_rows((q @ k.T) * scale)
                ctx = attn @ v
                o = ctx @ p[f"block{i}.wo"] + p[f"block{i}.bo"]
                o, omask = self._maybe_dropout(o, train)
                h = h + o
                blk.update(u=u, ln1c=ln1c, q=q, k=k, v=v, attn=attn, ctx=ctx,
                           omask=omask)
            blk["h_mid"] = h
            u2, ln2c = _layer_norm_forward(h, p[f"block{i}.ln2.g"], p[f"block{i}.ln2.b"])
            z1 = u2 @ p[f"block{i}.w1"] + p[f"block{i}.b1"]
            a1, gt = _gelu_forward(z1)
            ff = a1 @ p[f"block{i}.w2"] + p[f"block{i}.b2"]
            ff, fmask = self._maybe_dropout(ff, train)
            h = h + ff
            blk.update(u2=u2, ln2c=ln2c, z1=z1, a1=a1, gt=gt, fmask=fmask)
            blocks.append(blk)
            block_out.append(h)

        hf, lnfc = _layer_norm_forward(h, p["final_ln.g"], p["final_ln.b"])
        pred = hf @ p["out.w"] + p["out.b"]
        logits = [
            block_out[tap - 1] @ p[f"head{j}.w"] + p[f"head{j}.b"]
            for j, tap in enumerate(cfg.tap_layers)
        ]
        cache = {"x": x, "t": t, "blocks": blocks, "block_out": block_out,
                 "hf": hf, "lnfc": lnfc, "scale": scale}
        return pred, logits, cache

    def backward(self, cache, grad_pred, grad_logits) -> dict[str, np.ndarray]:
        """Gradients of the loss wrt every parameter, given loss gradients
        wrt pred and the head logits from a matching forward cache."""
        cfg = self.config
        p = self.params
        t = cache["t"]
        grad_pred = np.asarray(grad_pred, dtype=np.float64)
        if grad_pred.shape != (t, cfg.output_dim):
            raise ValueError(f"grad_pred shape {grad_pred.shape} does not match forward")
        g = {name: np.zeros_like(arr) for name, arr in p.items()}

        g["out.w"] += cache["hf"].T @ grad_pred
        g["out.b"] += grad_pred.sum(axis=0)
        dhf = grad_pred @ p["out.w"].T
        dh, dgam, dbet = _layer_norm_backward(dhf, p["final_ln.g"], cache["lnfc"])
        g["final_ln.g"] += dgam
        g["final_ln.b"] += dbet

        tap_grads = [np.zeros((t, cfg.hidden_dim)) for _ in range(cfg.num_blocks)]
        for j, tap in enumerate(cfg.tap_layers):
            gl = np.asarray(grad_logits[j], dtype=np.float64)
            if gl.shape != (t, cfg.vocab_sizes[j]):
                raise ValueError(f"grad_logits[{j}] shape {gl.shape} does not match forward")
            g[f"head{j}.w"] += cache["block_out"][tap - 1].T @ gl
            g[f"head{j}.b"] += gl.sum(axis=0)
            tap_grads[tap - 1] += gl @ p[f"head{j}.w"].T

        for i in range(cfg.num_blocks - 1, -1, -1):
            blk = cache["blocks"][i]
            dh = dh + tap_grads[i]
            dff = dh if blk["fmask"] is None else dh * blk["fmask"]
            g[f"block{i}.w2"] += blk["a1"].T @ dff
            g[f"block{i}.b2"] += dff.sum(axis=0)
            da1 = dff @ p[f"block{i}.w2"].T
            dz1 = _gelu_backward(da1, blk["z1"], blk["gt"])
            g[f"block{i}.w1"] += blk["u2"].T @ dz1
            g[f"block{i}.b1"] += dz1.sum(axis=0)
            du2 = dz1 @ p[f"block{i}.w1"].T
            dmid_ln, dgam, dbet = _layer_norm_backward(du2, p[f"block{i}.ln2.g"], blk["ln2c"])
            g[f"block{i}.ln2.g"] += dgam
            g[f"block{i}.ln2.b"] += dbet
            dh = dh + dmid_ln
            if cfg.use_attention:
                do = dh if blk["omask"] is None else dh * blk["omask"]
                g[f"block{i}.wo"] += blk["ctx"].T @ do
                g[f"block{i}.bo"] += do.sum(axis=0)
                dctx = do @ p[f"block{i}.wo"].T
                dattn = dctx @ blk["v"].T
                dv = blk["attn"].T @ dctx
                a = blk["attn"]
                ds = a * (dattn - (dattn * a).sum(axis=-1, keepdims=True))
                ds *= cache["scale"]
                dq = ds @ blk["k"]
                dk = ds.T @ blk["q"]
                u = blk["u"]
                g[f"block{i}.wq"] += u.T @ dq
                g[f"block{i}.bq"] += dq.sum(axis=0)
                g[f"block{i}.wk"] += u.T @ dk
                g[f"block{i}.bk"] += dk.sum(axis=0)
                g[f"block{i}.wv"] += u.T @ dv
                g[f"block{i}.bv"] += dv.sum(axis=0)
                du = dq @ p[f"block{i}.wq"].T + dk @ p[f"block{i}.wk"].T + dv @ p[f"block{i}.wv"].T
                din_ln, dgam, dbet = _layer_norm_backward(du, p[f"block{i}.ln1.g"], blk["ln1c"])
                g[f"block{i}.ln1.g"] += dgam
                g[f"block{i}.ln1.b"] += dbet
                dh = dh + din_ln

        g["in.w"] += cache["x"].T @ dh
        g["in.b"] += dh.sum(axis=0)
        g["pos"][:t] += dh
        return g


@dataclass
class AdamState:
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    t: int = 0

    @classmethod
    def init(cls, model: ToyConverter) -> "AdamState":
        return cls(
            m={k: np.zeros_like(a) for k, a in model.params.items()},
            v={k: np.zeros_like(a) for k, a in model.params.items()},
        )


def adam_step(model: ToyConverter, grads: dict[str, np.ndarray],
              state: AdamState, cfg: OptimizerConfig) -> AdamState:
    """In-place Adam update with bias correction."""
    state.t += 1
    bc1 = 1.0 - cfg.beta1 ** state.t
    bc2 = 1.0 - cfg.beta2 ** state.t
    for name, param in model.params.items():
        grad = grads[name]
        state.m[name] = cfg.beta1 * state.m[name] + (1.0 - cfg.beta1) * grad
        state.v[name] = cfg.beta2 * state.v[name] + (1.0 - cfg.beta2) * grad ** 2
        mhat = state.m[name] / bc1
        vhat = state.v[name] / bc2
        param -= cfg.learning_rate * mhat / (np.sqrt(vhat) + cfg.eps)
    return state


def backward_and_step(model: ToyConverter, cache, loss_grads: LossGrads,
                      state: AdamState, cfg: OptimizerConfig) -> AdamState:
    """Backpropagate total-loss gradients and apply one Adam update."""
    grads = model.backward(cache, loss_grads.pred, loss_grads.logits)
    return adam_step(model, grads, state, cfg)


def train(pairs, conv_config: ConverterConfig, opt_config: OptimizerConfig,
          loss_config: LossConfig = LossConfig()):
    """Run the training loop over a pair stream.

    Consumes opt_config.steps * opt_config.batch_size pairs; gradients are
    averaged within a batch before each Adam step. Returns the model and one
    LossReport per consumed pair, in order.
    """
    model = ToyConverter(conv_config)
    state = AdamState.init(model)
    stream = iter(pairs)
    reports = []
    for _ in range(opt_config.steps):
        accum = None
        for _ in range(opt_config.batch_size):
            pair = next(stream)
            pred, logits, cache = model.forward(pair.converter_input.data, train=True)
            report, lgrads = total_loss(pair, pred, logits, loss_config)
            reports.append(report)
            grads = model.backward(cache, lgrads.pred, lgrads.logits)
            if accum is None:
                accum = grads
            else:
                for name in accum:
                    accum[name] += grads[name]
        if opt_config.batch_size > 1:
            for name in accum:
                accum[name] /= opt_config.batch_size
        adam_step(model, accum, state, opt_config)
    return model, reports


def smoothed_curve(values, window: int = 50) -> np.ndarray:
    """Trailing mean over the last `window` entries at each step."""
    values = np.asarray(values, dtype=np.float64)
    out = np.empty_like(values)
    csum = np.concatenate([[0.0], np.cumsum(values)])
    for i in range(values.size):
        lo = max(0, i + 1 - window)
        out[i] = (csum[i + 1] - csum[lo]) / (i + 1 - lo)
    return out


def convert(model: ToyConverter, decoupler_model: DecouplerModel,
            source: FeatureMatrix, prompt: FeatureMatrix) -> FeatureMatrix:
    """Zero-shot inference: render the source content with the prompt timbre.

    The prompt region of the prediction is conditioning only and is dropped;
    the returned matrix covers the content positions.
    """
    enhanced = encode(decoupler_model, source).enhanced
    pred, _, _ = model.forward(concat_frames(prompt, enhanced).data)
    return FeatureMatrix(data=pred[prompt.frames:].astype(np.float32),
                         hop_ms=source.hop_ms)


def tiny_check_config(input_dim: int = 6, seed: int = 7) -> ConverterConfig:
    """The 2-block, hidden-8 configuration used for full-model gradient checks."""
    return ConverterConfig(
        input_dim=input_dim,
        num_blocks=2,
        hidden_dim=8,
        ffn_dim=16,
        vocab_sizes=(8, 16, 32),
        max_len=16,
        seed=seed,
    )


def _check_loss(model: ToyConverter, x, target, ids, mask, loss_config: LossConfig):
    from .losses import mse_loss, progressive_ce, ssim_loss

    pred, logits, cache = model.forward(x)
    l_mse, g_mse = mse_loss(pred, target, mask)
    l_ssim, g_ssim = ssim_loss(pred, target, mask, window=loss_config.ssim_window,
                               c1=loss_config.ssim_c1, c2=loss_config.ssim_c2)
    (l_s, l_m, l_l), g_logits = progressive_ce(logits, ids, mask)
    l_total = l_mse + l_ssim + (l_s + l_m + l_l)
    return l_total, LossGrads(pred=g_mse + g_ssim, logits=g_logits), cache


def gradient_check(config: ConverterConfig | None = None, seed: int = 7,
                   frames: int = 12, prompt_frames: int = 3,
                   step: float = 1e-4) -> float:
    """Max relative error between analytic and central-difference gradients.

    Every scalar parameter of the model is perturbed by +-step around a
    random seeded input; relative error uses max(|analytic|, |fd|, 1e-6) as
    the denominator.
    """
    cfg = config or tiny_check_config(seed=seed)
    model = ToyConverter(cfg)
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(frames, cfg.input_dim))
    target = rng.normal(size=(frames, cfg.output_dim))
    ids = [rng.integers(0, v, size=frames) for v in cfg.vocab_sizes]
    mask = np.zeros(frames, dtype=bool)
    mask[:prompt_frames] = True
    loss_config = LossConfig()

    _, lgrads, cache = _check_loss(model, x, target, ids, mask, loss_config)
    analytic = model.backward(cache, lgrads.pred, lgrads.logits)

    worst = 0.0
    for name, arr in model.params.items():
        flat = arr.reshape(-1)
        for idx in range(flat.size):
            orig = flat[idx]
            flat[idx] = orig + step
            hi, _, _ = _check_loss(model, x, target, ids, mask, loss_config)
            flat[idx] = orig - step
            lo, _, _ = _check_loss(model, x, target, ids, mask, loss_config)
            flat[idx] = orig
            fd = (hi - lo) / (2.0 * step)
            an = analytic[name].reshape(-1)[idx]
            rel = abs(fd - an) / max(abs(fd), abs(an), 1e-6)
            worst = max(worst, rel)
    return worst


def save_checkpoint(model: ToyConverter, path) -> None:
    cfg = model.config
    header = _CHECKPOINT_HEADER.pack(
        CHECKPOINT_MAGIC, CHECKPOINT_VERSION,
        cfg.input_dim, cfg.output_dim, cfg.num_blocks, cfg.hidden_dim,
        cfg.ffn_dim, cfg.max_len,
        *cfg.tap_layers, *cfg.vocab_sizes,
        int(cfg.use_attention), cfg.dropout, cfg.seed,
    )
    with open(path, "wb") as fh:
        fh.write(header)
        for name in model.param_names():
            fh.write(model.params[name].astype("<f4").tobytes())


def load_checkpoint(path) -> ToyConverter:
    raw = Path(path).read_bytes()
    if len(raw) < _CHECKPOINT_HEADER.size:
        raise ValueError(f"{path}: file shorter than the VTM1 header")
    fields = _CHECKPOINT_HEADER.unpack_from(raw)
    magic, version = fields[0], fields[1]
    if magic != CHECKPOINT_MAGIC:
        raise ValueError(f"{path}: bad magic {magic!r}, expected {CHECKPOINT_MAGIC!r}")
    if version != CHECKPOINT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {version}")
    (in_dim, out_dim, blocks, hidden, ffn, max_len,
     t1, t2, t3, v1, v2, v3, use_attn, dropout, seed) = fields[2:]
    cfg = ConverterConfig(
        input_dim=in_dim, output_dim=out_dim, num_blocks=blocks,
        hidden_dim=hidden, ffn_dim=ffn, tap_layers=(t1, t2, t3),
        vocab_sizes=(v1, v2, v3), max_len=max_len,
        use_attention=bool(use_attn), dropout=dropout, seed=seed,
    )
    model = ToyConverter(cfg)
    offset = _CHECKPOINT_HEADER.size
    for name in model.param_names():
        arr = model.params[name]
        nbytes = arr.size * 4
        chunk = raw[offset : offset + nbytes]
        if len(chunk) != nbytes:
            raise ValueError(f"{path}: parameter payload truncated at {name}")
        model.params[name] = np.frombuffer(chunk, dtype="<f4").astype(np.float64).reshape(arr.shape)
        offset += nbytes
    if offset != len(raw):
        raise ValueError(f"{path}: {len(raw) - offset} trailing bytes after parameters")
    return model
