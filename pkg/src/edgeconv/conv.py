"""Same-size 2D convolution under classical boundary rules and learned
per-region boundary kernels.

Classical modes fill out-of-image taps by a padding rule (zero, clamp,
reflect, mean); in `explicit` mode every boundary region of the image is
convolved with its own kernel and out-of-image taps contribute nothing,
so the per-region kernels are free to learn the extrapolation themselves.

Layout convention: inputs are (H, W, C) float64 or batched (B, H, W, C);
outputs match with F feature channels.  The hot loops are numba-compiled
scalar loops with a fixed per-pixel accumulation order (dy, then dx, then
input channel, bias last), shared by every mode, strategy, and region
rectangle, so all execution paths produce bit-identical per-pixel sums.
"""

from dataclasses import dataclass, field

import numpy as np
from numba import njit

BOUNDARY_MODES = ("zero", "clamp", "reflect", "mean", "explicit")
STRATEGIES = ("compose", "decompose")


@dataclass(frozen=True)
class RegionPartition:
    """Per-pixel region index for a given kernel radius.

    The region index is row_case * (2r+1) + col_case where each axis case
    is the edge-clamped distance class: 0..r-1 near the low edge, r in the
    interior band, r+1..2r near the high edge.  The interior region index
    is therefore r * (2r+1) + r.
    """

    radius: int
    height: int
    width: int
    region_of: np.ndarray = field(repr=False)  # (H, W) int64

    @property
    def region_count(self) -> int:
        return (2 * self.radius + 1) ** 2


def _axis_case(i: int, n: int, r: int) -> int:
    if i < r:
        return i
    if i > n - 1 - r:
        return 2 * r - (n - 1 - i)
    return r


def _axis_case_span(case: int, n: int, r: int) -> tuple[int, int]:
    # half-open index range of the rows (or columns) belonging to a case
    if case < r:
        return case, case + 1
    if case == r:
        return r, n - r
    return n - 1 - (2 * r - case), n - (2 * r - case)


def partition_build(height: int, width: int, radius: int) -> RegionPartition:
    """Build the (2r+1)^2-region decomposition of an H x W image."""
    if radius < 1:
        raise ValueError(f"radius must be >= 1, got {radius}")
    k = 2 * radius + 1
    if height < k or width < k:
        raise ValueError(
            f"unsupported geometry: image {height}x{width} smaller than {k}x{k} "
            f"(opposite boundary bands would overlap at radius {radius})"
        )
    row_case = np.array([_axis_case(y, height, radius) for y in range(height)])
    col_case = np.array([_axis_case(x, width, radius) for x in range(width)])
    region_of = row_case[:, None] * k + col_case[None, :]
    return RegionPartition(radius=radius, height=height, width=width, region_of=region_of)


def region_rectangles(partition: RegionPartition) -> list[tuple[int, int, int, int]]:
    """Rectangle (y0, y1, x0, x1), half-open, covered by each region index."""
    r, h, w = partition.radius, partition.height, partition.width
    k = 2 * r + 1
    rects = []
    for i in range(k * k):
        y0, y1 = _axis_case_span(i // k, h, r)
        x0, x1 = _axis_case_span(i % k, w, r)
        rects.append((y0, y1, x0, x1))
    return rects


@dataclass
class KernelSet:
    """Kernel family for one convolution layer.

    weights: (region_count, out_features, 2r+1, 2r+1, in_channels)
    bias:    (out_features,), shared across regions
    """

    weights: np.ndarray
    bias: np.ndarray

    def __post_init__(self):
        w = np.ascontiguousarray(self.weights, dtype=np.float64)
        b = np.ascontiguousarray(self.bias, dtype=np.float64)
        if w.ndim != 5:
            raise ValueError(f"weights must be 5D (region, feature, ky, kx, channel), got {w.shape}")
        if w.shape[2] != w.shape[3] or w.shape[2] % 2 == 0:
            raise ValueError(f"kernel window must be square and odd-sized, got {w.shape[2]}x{w.shape[3]}")
        if b.shape != (w.shape[1],):
            raise ValueError(f"bias shape {b.shape} does not match {w.shape[1]} output features")
        if not (np.isfinite(w).all() and np.isfinite(b).all()):
            raise ValueError("kernel weights and bias must be finite")
        self.weights = w
        self.bias = b

    @property
    def region_count(self) -> int:
        return self.weights.shape[0]

    @property
    def out_features(self) -> int:
        return self.weights.shape[1]

    @property
    def kernel_size(self) -> int:
        return self.weights.shape[2]

    @property
    def radius(self) -> int:
        return self.weights.shape[2] // 2

    @property
    def in_channels(self) -> int:
        return self.weights.shape[4]


def _map_index(i: int, n: int, mode: str) -> int:
    """Map a possibly out-of-range coordinate to a source index; -1 means
    the sample is synthesized (zero / mean) rather than read from the image."""
    if 0 <= i < n:
        return i
    if mode in ("zero", "mean", "explicit"):
        return -1
    if mode == "clamp":
        return 0 if i < 0 else n - 1
    if mode == "reflect":
        j = -i if i < 0 else 2 * (n - 1) - i
        if not 0 <= j < n:
            raise ValueError(f"reflected index {i} falls outside a length-{n} axis")
        return j
    raise ValueError(f"unknown boundary mode {mode!r}")


def sample_extended(t: np.ndarray, y: int, x: int, c: int, mode: str, image_mean: float = 0.0) -> float:
    """Read (y, x, c) from t under a classical boundary rule.

    `image_mean` is the caller-supplied mean of channel c, used only by the
    `mean` rule.  Each axis is extended independently, so e.g. reflect at
    (-1, -1) reads (1, 1).
    """
    if mode == "explicit":
        raise ValueError("explicit mode never samples outside the image domain")
    if mode not in BOUNDARY_MODES:
        raise ValueError(f"unknown boundary mode {mode!r}")
    h, w = t.shape[0], t.shape[1]
    my = _map_index(y, h, mode)
    mx = _map_index(x, w, mode)
    if my < 0 or mx < 0:
        return 0.0 if mode == "zero" else float(image_mean)
    return float(t[my, mx, c])


def _extended_image(t: np.ndarray, radius: int, mode: str) -> np.ndarray:
    """Pad the two spatial axes of (B, H, W, C) by `radius` per the rule.
    Explicit mode pads with zeros: out-of-domain taps contribute nothing."""
    r = radius
    spatial_pad = [(0, 0), (r, r), (r, r), (0, 0)]
    if mode in ("zero", "explicit"):
        return np.pad(t, spatial_pad, mode="constant")
    if mode == "clamp":
        return np.pad(t, spatial_pad, mode="edge")
    if mode == "reflect":
        return np.pad(t, spatial_pad, mode="reflect")
    if mode == "mean":
        means = t.mean(axis=(1, 2), keepdims=True)
        b, h, w, c = t.shape
        ext = np.broadcast_to(means, (b, h + 2 * r, w + 2 * r, c)).copy()
        ext[:, r:r + h, r:r + w, :] = t
        return ext
    raise ValueError(f"unknown boundary mode {mode!r}")


@njit(cache=True)
def _region_forward(ext, weights, bias, out, y0, y1, x0, x1):
    """out[rect] = taps of one region kernel + bias, per-pixel accumulation
    in fixed (dy, dx, ci) order with bias added last.  The two loop
    structures trade load/store patterns and produce identical bits."""
    batch = ext.shape[0]
    features, ksize, _, channels = weights.shape
    if features >= channels:
        for b in range(batch):
            for y in range(y0, y1):
                for x in range(x0, x1):
                    for f in range(features):
                        out[b, y, x, f] = 0.0
                    for dy in range(ksize):
                        for dx in range(ksize):
                            for ci in range(channels):
                                v = ext[b, y + dy, x + dx, ci]
                                for f in range(features):
                                    out[b, y, x, f] += v * weights[f, dy, dx, ci]
                    for f in range(features):
                        out[b, y, x, f] += bias[f]
    else:
        for b in range(batch):
            for y in range(y0, y1):
                for x in range(x0, x1):
                    for f in range(features):
                        acc = 0.0
                        for dy in range(ksize):
                            for dx in range(ksize):
                                for ci in range(channels):
                                    acc += ext[b, y + dy, x + dx, ci] * weights[f, dy, dx, ci]
                        out[b, y, x, f] = acc + bias[f]


@njit(cache=True)
def _region_backward(ext, grad_out, weights, grad_w, grad_ext, y0, y1, x0, x1):
    """Accumulate the region kernel's weight gradient and the adjoint
    contribution onto the extended image, from output pixels in the rect."""
    batch = ext.shape[0]
    features, ksize, _, channels = weights.shape
    for b in range(batch):
        for y in range(y0, y1):
            for x in range(x0, x1):
                for f in range(features):
                    g = grad_out[b, y, x, f]
                    for dy in range(ksize):
                        for dx in range(ksize):
                            for ci in range(channels):
                                grad_w[f, dy, dx, ci] += g * ext[b, y + dy, x + dx, ci]
                                grad_ext[b, y + dy, x + dx, ci] += g * weights[f, dy, dx, ci]


def _check_conv_args(input, kernels, mode, partition, strategy=None):
    if mode not in BOUNDARY_MODES:
        raise ValueError(f"unknown boundary mode {mode!r}")
    if strategy is not None and strategy not in STRATEGIES:
        raise ValueError(f"unknown strategy {strategy!r}")
    if input.ndim not in (3, 4):
        raise ValueError(f"input must be (H, W, C) or (B, H, W, C), got shape {input.shape}")
    h, w, c = input.shape[-3], input.shape[-2], input.shape[-1]
    k = kernels.kernel_size
    if c != kernels.in_channels:
        raise ValueError(f"input has {c} channels but kernels expect {kernels.in_channels}")
    if h < k or w < k:
        raise ValueError(f"unsupported geometry: {h}x{w} image smaller than the {k}x{k} kernel window")
    if mode == "explicit":
        if partition is None:
            raise ValueError("explicit mode requires a RegionPartition")
        if kernels.region_count != (2 * kernels.radius + 1) ** 2:
            raise ValueError(
                f"explicit mode needs {(2 * kernels.radius + 1) ** 2} region kernels, "
                f"got {kernels.region_count}"
            )
        if (partition.height, partition.width) != (h, w):
            raise ValueError(
                f"partition is {partition.height}x{partition.width} but input is {h}x{w}"
            )
        if partition.radius != kernels.radius:
            raise ValueError(f"partition radius {partition.radius} != kernel radius {kernels.radius}")
    else:
        if kernels.region_count != 1:
            raise ValueError(f"mode {mode!r} requires a single-region KernelSet, got {kernels.region_count}")
    return h, w


def _region_rects_for(kernels, mode, partition, h, w):
    if mode == "explicit":
        return region_rectangles(partition)
    return [(0, h, 0, w)]


def conv2d_forward(input: np.ndarray, kernels: KernelSet, mode: str,
                   partition: RegionPartition | None = None,
                   strategy: str = "decompose") -> np.ndarray:
    """Same-size convolution of (..., H, W, C) with a KernelSet.

    `compose` evaluates every region kernel over the full image, then masks
    and sums; `decompose` evaluates each kernel only on its own rectangle.
    The two agree bit-for-bit; they differ only in cost.
    """
    h, w = _check_conv_args(input, kernels, mode, partition, strategy)
    single = input.ndim == 3
    batched = np.ascontiguousarray(input[None] if single else input)
    ext = _extended_image(batched, kernels.radius, mode)
    out_shape = batched.shape[:3] + (kernels.out_features,)
    out = np.zeros(out_shape, dtype=np.float64)
    rects = _region_rects_for(kernels, mode, partition, h, w)

    if strategy == "decompose" or len(rects) == 1:
        for i, (y0, y1, x0, x1) in enumerate(rects):
            _region_forward(ext, kernels.weights[i], kernels.bias, out, y0, y1, x0, x1)
        return out[0] if single else out

    # compose: all kernels everywhere, then mask
    layer = np.empty(out_shape, dtype=np.float64)
    for i in range(len(rects)):
        _region_forward(ext, kernels.weights[i], kernels.bias, layer, 0, h, 0, w)
        mask = (partition.region_of == i).astype(np.float64)
        out += layer * mask[:, :, None]
    return out[0] if single else out


def _fold_axis(grad, n: int, radius: int, mode: str, axis: int) -> np.ndarray:
    """Adjoint of padding one axis: scatter extended-axis gradient back to
    the n source positions (clamp/reflect only; both maps are total)."""
    idx = np.array([_map_index(i - radius, n, mode) for i in range(n + 2 * radius)])
    moved = np.moveaxis(grad, axis, 0)
    out = np.zeros((n,) + moved.shape[1:], dtype=np.float64)
    np.add.at(out, idx, moved)
    return np.moveaxis(out, 0, axis)


def _fold_extended(grad_ext: np.ndarray, radius: int, mode: str, h: int, w: int) -> np.ndarray:
    """Route gradient on the extended image back onto the input, following
    each rule's sampling: zero/explicit discard the ring, clamp/reflect fold
    onto the source pixel, mean spreads uniformly over the channel's pixels."""
    r = radius
    center = grad_ext[:, r:r + h, r:r + w, :]
    if mode in ("zero", "explicit"):
        return center.copy()
    if mode in ("clamp", "reflect"):
        folded = _fold_axis(grad_ext, h, r, mode, axis=1)
        return _fold_axis(folded, w, r, mode, axis=2)
    if mode == "mean":
        ring_sum = grad_ext.sum(axis=(1, 2)) - center.sum(axis=(1, 2))  # (B, C)
        return center + ring_sum[:, None, None, :] / float(h * w)
    raise ValueError(f"unknown boundary mode {mode!r}")


def conv2d_backward(input: np.ndarray, kernels: KernelSet, mode: str,
                    partition: RegionPartition | None,
                    grad_output: np.ndarray):
    """Adjoint of conv2d_forward.

    Returns (grad_input, grad_weights, grad_bias); grad_weights has the
    KernelSet weight shape and the kernel of region i accumulates only from
    output pixels inside region i.  A batch axis accumulates weight and
    bias gradients over the batch.
    """
    h, w = _check_conv_args(input, kernels, mode, partition)
    expected = input.shape[:-1] + (kernels.out_features,)
    if grad_output.shape != expected:
        raise ValueError(f"grad_output shape {grad_output.shape} does not match forward output {expected}")

    single = input.ndim == 3
    batched = np.ascontiguousarray(input[None] if single else input)
    go_full = np.ascontiguousarray(grad_output[None] if single else grad_output)

    ext = _extended_image(batched, kernels.radius, mode)
    grad_ext = np.zeros_like(ext)
    grad_w = np.zeros_like(kernels.weights)
    grad_b = go_full.sum(axis=(0, 1, 2))

    for i, (y0, y1, x0, x1) in enumerate(_region_rects_for(kernels, mode, partition, h, w)):
        _region_backward(ext, go_full, kernels.weights[i], grad_w[i], grad_ext, y0, y1, x0, x1)

    grad_input = _fold_extended(grad_ext, kernels.radius, mode, h, w)
    return (grad_input[0], grad_w, grad_b) if single else (grad_input, grad_w, grad_b)
