"""Composite training objective: total = mse + ssim + progressive CE.

All losses reduce by the mean over unmasked elements, take a per-position
boolean mask (True marks prompt positions, which are excluded from both the
value and the gradient), and return analytic gradients that are checked
against central finite differences in the test suite. Everything is float64.

The structural similarity term is a 1-D transcription of the standard
image definition: per feature channel, sliding windows along time with
uniform weights, population moments, and stabilizers c1 = (0.01 R)^2,
c2 = (0.03 R)^2 where R is the target's value range over the unmasked span.

The progressive term is the sum of three per-frame cross-entropies against
K-Means tokenizations of the target at strictly increasing codebook sizes,
each read from a different converter layer, so the model is constrained
coarse to fine.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from numpy.lib.stride_tricks import sliding_window_view

# floor on the target value range so constant targets keep c1, c2 positive
_RANGE_FLOOR = 1e-8


@dataclass(frozen=True)
class LossConfig:
    ssim_window: int = 9
    ssim_c1: float | None = None  # None derives (0.01 R)^2 from the target
    ssim_c2: float | None = None  # None derives (0.03 R)^2 from the target


@dataclass(frozen=True)
class LossReport:
    l_mse: float
    l_ssim: float
    l_small: float
    l_medium: float
    l_large: float
    l_pro: float
    l_total: float
    mask: np.ndarray

    TSV_HEADER = "l_mse\tl_ssim\tl_small\tl_medium\tl_large\tl_pro\tl_total"

    def tsv_line(self) -> str:
        return "\t".join(
            repr(v) for v in (self.l_mse, self.l_ssim, self.l_small, self.l_medium,
                              self.l_large, self.l_pro, self.l_total)
        )


@dataclass
class LossGrads:
    pred: np.ndarray  # d l_total / d pred
    logits: list  # d l_total / d logits_j, one per head


def _as_array(x) -> np.ndarray:
    data = getattr(x, "data", x)
    return np.asarray(data, dtype=np.float64)


def _keep_rows(t: int, mask) -> np.ndarray:
    if mask is None:
        return np.ones(t, dtype=bool)
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != (t,):
        raise ValueError(f"mask must have shape ({t},), got {mask.shape}")
    return ~mask


def mse_loss(pred, target, mask=None):
    """Mean squared error over unmasked positions and channels.

    Returns (loss, gradient wrt pred); gradient is 2 (pred - target) / count
    on unmasked entries and exactly zero on masked ones.
    """
    x = _as_array(pred)
    y = _as_array(target)
    if x.shape != y.shape:
        raise ValueError(f"shape mismatch: {x.shape} vs {y.shape}")
    keep = _keep_rows(x.shape[0], mask)
    count = int(keep.sum()) * x.shape[1]
    if count == 0:
        raise ValueError("all positions are masked")
    diff = x - y
    loss = float((diff[keep] ** 2).sum() / count)
    grad = np.zeros_like(x)
    grad[keep] = 2.0 * diff[keep] / count
    return loss, grad


def ssim_loss(pred, target, mask=None, window: int = 9,
              c1: float | None = None, c2: float | None = None):
    """1 - mean SSIM over per-channel sliding time windows (uniform weights).

    For window x of pred and y of target with means mx, my, population
    variances vx, vy and covariance cxy:

        ssim = (2 mx my + c1)(2 cxy + c2) / ((mx^2 + my^2 + c1)(vx + vy + c2))

    The gradient follows from the quotient rule with
    d mx / d x_i = 1/W, d vx / d x_i = 2 (x_i - mx) / W and
    d cxy / d x_i = (y_i - my) / W.
    """
    x = _as_array(pred)
    y = _as_array(target)
    if x.shape != y.shape:
        raise ValueError(f"shape mismatch: {x.shape} vs {y.shape}")
    if window < 2:
        raise ValueError(f"window must be >= 2, got {window}")
    keep = _keep_rows(x.shape[0], mask)
    xu = x[keep]
    yu = y[keep]
    if xu.shape[0] < window:
        raise ValueError(f"unmasked span {xu.shape[0]} is shorter than window {window}")
    if c1 is None or c2 is None:
        value_range = max(float(yu.max() - yu.min()), _RANGE_FLOOR)
        if c1 is None:
            c1 = (0.01 * value_range) ** 2
        if c2 is None:
            c2 = (0.03 * value_range) ** 2

    w = window
    xw = sliding_window_view(xu, w, axis=0)  # (num_windows, dim, w)
    yw = sliding_window_view(yu, w, axis=0)
    mx = xw.mean(axis=-1)
    my = yw.mean(axis=-1)
    xc = xw - mx[..., None]
    yc = yw - my[..., None]
    vx = (xc ** 2).mean(axis=-1)
    vy = (yc ** 2).mean(axis=-1)
    cxy = (xc * yc).mean(axis=-1)

    a1 = 2.0 * mx * my + c1
    a2 = 2.0 * cxy + c2
    b1 = mx ** 2 + my ** 2 + c1
    b2 = vx + vy + c2
    ssim = (a1 * a2) / (b1 * b2)
    loss = float(1.0 - ssim.mean())

    # dS/dx_i = (2 / (W b1 b2)) (my a2 + a1 (y_i - my) - S b2 mx - S b1 (x_i - mx))
    coef = 2.0 / (w * b1 * b2)
    ds = coef[..., None] * (
        (my * a2 - ssim * b2 * mx)[..., None]
        + a1[..., None] * yc
        - (ssim * b1)[..., None] * xc
    )
    grad_u = np.zeros_like(xu)
    scale = -1.0 / ssim.size
    num_windows = xw.shape[0]
    for off in range(w):
        grad_u[off : off + num_windows] += scale * ds[:, :, off]
    grad = np.zeros_like(x)
    grad[keep] = grad_u
    return loss, grad


def _log_softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=1, keepdims=True))


def progressive_ce(logits, target_ids, mask=None):
    """Per-layer cross-entropy between head logits and target token ids.

    logits are three (T, V_j) arrays with V_small < V_medium < V_large;
    target_ids are three (T,) integer sequences. Returns
    ((l_small, l_medium, l_large), [grad_j]) where each gradient is
    (softmax - onehot) / count on unmasked frames and zero elsewhere.
    """
    if len(logits) != len(target_ids):
        raise ValueError("need one id sequence per logits array")
    vocab_sizes = [np.asarray(lg).shape[1] for lg in logits]
    if sorted(vocab_sizes) != vocab_sizes or len(set(vocab_sizes)) != len(vocab_sizes):
        raise ValueError(f"vocabulary sizes must be strictly increasing, got {vocab_sizes}")
    losses = []
    grads = []
    for lg, ids in zip(logits, target_ids):
        lg = np.asarray(lg, dtype=np.float64)
        ids = np.asarray(ids)
        if ids.shape[0] != lg.shape[0]:
            raise ValueError(f"{ids.shape[0]} ids for {lg.shape[0]} logit frames")
        keep = _keep_rows(lg.shape[0], mask)
        count = int(keep.sum())
        if count == 0:
            raise ValueError("all frames are masked")
        kept_ids = ids[keep]
        if kept_ids.min() < 0 or kept_ids.max() >= lg.shape[1]:
            raise ValueError(f"token id out of range for vocabulary {lg.shape[1]}")
        logp = _log_softmax(lg)
        losses.append(float(-logp[keep, kept_ids].mean()))
        grad = np.zeros_like(lg)
        soft = np.exp(logp[keep])
        soft[np.arange(count), kept_ids] -= 1.0
        grad[keep] = soft / count
        grads.append(grad)
    return tuple(losses), grads


def total_loss(pair, pred, head_logits, config: LossConfig = LossConfig()):
    """Compose mse + ssim + progressive CE for one training pair.

    pred and the logits cover the full converter input (prompt then content);
    the prompt region is masked out of every component. The report satisfies
    l_pro == l_small + l_medium + l_large and l_total == l_mse + l_ssim +
    l_pro bit-exactly because the sums are formed in that fixed order.
    """
    x = _as_array(pred)
    t_total = pair.converter_input.frames
    if x.shape[0] != t_total:
        raise ValueError(f"pred has {x.shape[0]} frames, converter input has {t_total}")
    p = pair.prompt.frames
    mask = np.zeros(t_total, dtype=bool)
    mask[:p] = True
    target_full = np.vstack([
        pair.prompt.data.astype(np.float64),
        pair.target.data.astype(np.float64),
    ])
    ids_full = [
        np.concatenate([np.zeros(p, dtype=np.int64), np.asarray(ids, dtype=np.int64)])
        for ids in pair.target_ids
    ]

    l_mse, g_mse = mse_loss(x, target_full, mask)
    l_ssim, g_ssim = ssim_loss(x, target_full, mask, window=config.ssim_window,
                               c1=config.ssim_c1, c2=config.ssim_c2)
    (l_small, l_medium, l_large), g_logits = progressive_ce(head_logits, ids_full, mask)
    l_pro = l_small + l_medium + l_large
    l_total = l_mse + l_ssim + l_pro
    report = LossReport(
        l_mse=l_mse, l_ssim=l_ssim, l_small=l_small, l_medium=l_medium,
        l_large=l_large, l_pro=l_pro, l_total=l_total, mask=mask,
    )
    return report, LossGrads(pred=g_mse + g_ssim, logits=g_logits)
