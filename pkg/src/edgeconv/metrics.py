"""Quantitative measures: MSE, PSNR, DSSIM, loss ratios, corpus error maps
with boundary-band statistics, Welch's t-test, and crop-growth formulas.
"""

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import betainc


@dataclass
class ErrorMap:
    values: np.ndarray  # (H, W, 1) per-pixel mean absolute error
    corpus_size: int


@dataclass
class BandStats:
    corner_mean: float
    edge_mean: float
    interior_mean: float
    band_width: int


def _check_same_shape(a: np.ndarray, b: np.ndarray):
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")


def mse(a: np.ndarray, b: np.ndarray) -> float:
    _check_same_shape(a, b)
    d = a - b
    return float(np.mean(d * d))


def psnr(a: np.ndarray, b: np.ndarray, peak: float = 1.0) -> float:
    """10 log10(peak^2 / mse) in dB; +inf for identical inputs."""
    if peak <= 0:
        raise ValueError(f"peak must be positive, got {peak}")
    m = mse(a, b)
    if m == 0.0:
        return math.inf
    return 10.0 * math.log10(peak * peak / m)


def dssim(a: np.ndarray, b: np.ndarray, peak: float = 1.0, window: int = 8) -> float:
    """Structural dissimilarity (1 - SSIM) / 2 over non-overlapping windows.

    SSIM uses the standard constants C1=(0.01 peak)^2, C2=(0.03 peak)^2 and
    population statistics per window, averaged over windows and channels.
    Trailing rows/columns that do not fill a window are ignored.
    """
    _check_same_shape(a, b)
    h, w = a.shape[0], a.shape[1]
    if h < window or w < window:
        raise ValueError(f"image {h}x{w} smaller than one {window}x{window} window")
    c1 = (0.01 * peak) ** 2
    c2 = (0.03 * peak) ** 2
    ny, nx = h // window, w // window

    def blocks(t):
        t = t[:ny * window, :nx * window, :]
        return t.reshape(ny, window, nx, window, -1).transpose(0, 2, 4, 1, 3)

    xa, xb = blocks(a), blocks(b)
    mu_a = xa.mean(axis=(-2, -1))
    mu_b = xb.mean(axis=(-2, -1))
    da = xa - mu_a[..., None, None]
    db = xb - mu_b[..., None, None]
    var_a = (da * da).mean(axis=(-2, -1))
    var_b = (db * db).mean(axis=(-2, -1))
    cov = (da * db).mean(axis=(-2, -1))
    ssim = ((2 * mu_a * mu_b + c1) * (2 * cov + c2)) / ((mu_a ** 2 + mu_b ** 2 + c1) * (var_a + var_b + c2))
    return float((1.0 - ssim.mean()) / 2.0)


def loss_ratio(loss_ours: float, loss_other: float) -> float:
    """100 * ours / other, the cross-task effectiveness percentage."""
    if loss_ours <= 0 or loss_other <= 0:
        raise ValueError("loss_ratio needs strictly positive losses")
    return 100.0 * loss_ours / loss_other


def error_map_accumulate(preds, targets) -> ErrorMap:
    """Per-pixel mean over the corpus of the channel-averaged absolute
    error."""
    preds, targets = list(preds), list(targets)
    if not preds or len(preds) != len(targets):
        raise ValueError("need equally many predictions and targets, at least one pair")
    shape = preds[0].shape
    maps = np.empty((len(preds),) + shape[:2], dtype=np.float64)
    for i, (p, t) in enumerate(zip(preds, targets)):
        if p.shape != shape or t.shape != shape:
            raise ValueError("all corpus tensors must share one shape")
        maps[i] = np.abs(p - t).mean(axis=2)
    # exactly-rounded per-pixel sums: the map is invariant to corpus order
    flat = maps.reshape(len(preds), -1)
    acc = np.fromiter(
        (math.fsum(flat[:, i]) for i in range(flat.shape[1])),
        dtype=np.float64, count=flat.shape[1],
    ).reshape(shape[:2]) / len(preds)
    return ErrorMap(values=acc[:, :, None], corpus_size=len(preds))


def boundary_band_stats(error_map: ErrorMap, band_width: int) -> BandStats:
    """Mean map value over corner squares, edge bands, and the interior."""
    values = error_map.values[:, :, 0]
    h, w = values.shape
    if band_width < 1 or band_width >= min(h, w) / 2:
        raise ValueError(f"band width {band_width} invalid for a {h}x{w} map")
    ys, xs = np.arange(h)[:, None], np.arange(w)[None, :]
    near_y = (ys < band_width) | (ys >= h - band_width)
    near_x = (xs < band_width) | (xs >= w - band_width)
    corner = near_y & near_x
    edge = (near_y | near_x) & ~corner
    interior = ~(near_y | near_x)
    return BandStats(
        corner_mean=float(values[corner].mean()),
        edge_mean=float(values[edge].mean()),
        interior_mean=float(values[interior].mean()),
        band_width=band_width,
    )


def welch_t_test(sample_a, sample_b) -> tuple[float, float]:
    """Welch's unequal-variance t statistic and two-sided p value.

    Degrees of freedom follow Welch-Satterthwaite; the p value comes from
    the Student-t survival function via the regularized incomplete beta.
    """
    a = np.asarray(sample_a, dtype=np.float64)
    b = np.asarray(sample_b, dtype=np.float64)
    if a.size < 2 or b.size < 2:
        raise ValueError("each sample needs at least two observations")
    va, vb = a.var(ddof=1), b.var(ddof=1)
    if va == 0.0 and vb == 0.0:
        raise ValueError("degenerate samples: zero variance in both")
    sa, sb = va / a.size, vb / b.size
    t = (a.mean() - b.mean()) / math.sqrt(sa + sb)
    df = (sa + sb) ** 2 / (sa * sa / (a.size - 1) + sb * sb / (b.size - 1))
    p = float(betainc(df / 2.0, 0.5, df / (df + t * t)))
    return float(t), p


def required_crop(depth: int, radius: int, multi_resolution: bool) -> int:
    """Pixels to crop per side so no output is boundary-affected: linear in
    depth at a single resolution, exponential across resolutions."""
    if depth < 1 or radius < 1:
        raise ValueError("depth and radius must be >= 1")
    return radius ** depth if multi_resolution else depth * radius
