"""Image file IO, seedable synthetic images, and the blur ground-truth
pipeline.

Ground truth for the blur task is built boundary-free: each sample crops
the center of a larger source image and pairs it with the valid (no
padding) convolution of that source, i.e. what a larger sensor would have
seen.
"""

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np


class NetpbmError(ValueError):
    """Raised for malformed netpbm files; messages carry the byte offset."""


@dataclass
class BlurTaskSample:
    input: np.ndarray   # (H, W, C)
    target: np.ndarray  # (H, W, C), valid-region blur of a larger source


@dataclass
class DatasetSplit:
    train: list[BlurTaskSample]
    validation: list[BlurTaskSample]
    test: list[BlurTaskSample]
    seed: int


def gaussian_kernel(size: int, sigma: float) -> np.ndarray:
    """Sampled isotropic Gaussian, (size, size, 1), normalized to sum 1."""
    if size % 2 == 0 or size < 3:
        raise ValueError(f"kernel size must be odd and >= 3, got {size}")
    if sigma <= 0:
        raise ValueError(f"sigma must be positive, got {sigma}")
    offs = np.arange(size, dtype=np.float64) - size // 2
    g = np.exp(-(offs[:, None] ** 2 + offs[None, :] ** 2) / (2.0 * sigma * sigma))
    g /= g.sum()
    return g[:, :, None]


def make_blur_sample(source: np.ndarray, kernel: np.ndarray) -> BlurTaskSample:
    """Center-crop a source image and pair it with its valid-region blur.

    The target uses only in-source taps, so it is independent of any
    boundary rule by construction.
    """
    if kernel.ndim != 3 or kernel.shape[0] != kernel.shape[1] or kernel.shape[2] != 1:
        raise ValueError(f"kernel must be (k, k, 1), got {kernel.shape}")
    k = kernel.shape[0]
    m = k // 2
    sh, sw = source.shape[0], source.shape[1]
    h, w = sh - 2 * m, sw - 2 * m
    if h < 1 or w < 1:
        raise ValueError(f"source {sh}x{sw} too small for a {k}x{k} kernel")
    input = source[m:m + h, m:m + w, :].copy()
    # per-pixel sums are correctly rounded (fsum), so the target is
    # independent of tap order and commutes exactly with source flips
    products = np.empty((k * k, h, w, source.shape[2]))
    for u in range(k):
        for v in range(k):
            products[u * k + v] = kernel[u, v, 0] * source[u:u + h, v:v + w, :]
    flat = products.reshape(k * k, -1)
    target = np.fromiter(
        (math.fsum(flat[:, i]) for i in range(flat.shape[1])),
        dtype=np.float64, count=flat.shape[1],
    ).reshape(input.shape)
    return BlurTaskSample(input=input, target=target)


def synth_image(height: int, width: int, channels: int, seed: int) -> np.ndarray:
    """Deterministic synthetic image: a linear gradient plus oriented bars
    and filled ellipses, clipped to [0, 1].  Shape centers may lie outside
    the frame so their edges cross the image boundary."""
    rng = np.random.default_rng(seed)
    ys = (np.arange(height, dtype=np.float64) + 0.5) / height
    xs = (np.arange(width, dtype=np.float64) + 0.5) / width
    yy, xx = ys[:, None], xs[None, :]

    img = np.empty((height, width, channels), dtype=np.float64)
    img[:] = rng.uniform(0.15, 0.85, size=channels)

    theta = rng.uniform(0.0, 2.0 * np.pi)
    proj = np.cos(theta) * (xx - 0.5) + np.sin(theta) * (yy - 0.5)
    img += proj[:, :, None] * rng.uniform(-0.6, 0.6, size=channels)

    for _ in range(3):  # oriented bars
        cy, cx = rng.uniform(-0.2, 1.2, size=2)
        theta = rng.uniform(0.0, np.pi)
        halfwidth = rng.uniform(0.03, 0.12)
        dist = np.abs(-np.sin(theta) * (xx - cx) + np.cos(theta) * (yy - cy))
        img[dist < halfwidth] += rng.uniform(-0.7, 0.7, size=channels)

    for _ in range(2):  # filled ellipses
        cy, cx = rng.uniform(-0.1, 1.1, size=2)
        ry, rx = rng.uniform(0.08, 0.35, size=2)
        theta = rng.uniform(0.0, np.pi)
        u = np.cos(theta) * (xx - cx) + np.sin(theta) * (yy - cy)
        v = -np.sin(theta) * (xx - cx) + np.cos(theta) * (yy - cy)
        img[(u / rx) ** 2 + (v / ry) ** 2 < 1.0] += rng.uniform(-0.7, 0.7, size=channels)

    return np.clip(img, 0.0, 1.0)


# --- netpbm ------------------------------------------------------------------

_MAGICS = {b"P2": ("pgm", "ascii"), b"P3": ("ppm", "ascii"),
           b"P5": ("pgm", "binary"), b"P6": ("ppm", "binary")}


class _HeaderScanner:
    """Token reader for netpbm headers that tracks byte offsets and skips
    '#' comments."""

    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def _skip_separators(self):
        while self.pos < len(self.data):
            b = self.data[self.pos]
            if b in b" \t\r\n":
                self.pos += 1
            elif b in b"#":
                while self.pos < len(self.data) and self.data[self.pos] not in b"\n":
                    self.pos += 1
            else:
                return

    def next_int(self, what: str) -> int:
        self._skip_separators()
        start = self.pos
        while self.pos < len(self.data) and self.data[self.pos] in b"0123456789":
            self.pos += 1
        if self.pos == start:
            raise NetpbmError(f"missing {what} at byte {start}")
        return int(self.data[start:self.pos])


def read_netpbm(path) -> np.ndarray:
    """Decode a P2/P3/P5/P6 file into an (H, W, C) tensor in [0, 1]."""
    data = Path(path).read_bytes()
    magic = data[:2]
    if magic not in _MAGICS:
        raise NetpbmError(f"unsupported magic {magic!r} at byte 0")
    kind, encoding = _MAGICS[magic]
    channels = 1 if kind == "pgm" else 3

    scan = _HeaderScanner(data)
    scan.pos = 2
    width = scan.next_int("width")
    height = scan.next_int("height")
    maxval = scan.next_int("maxval")
    if width < 1 or height < 1:
        raise NetpbmError(f"non-positive image size {width}x{height} in header")
    if not 1 <= maxval <= 65535:
        raise NetpbmError(f"maxval {maxval} outside [1, 65535]")

    count = height * width * channels
    if encoding == "binary":
        if scan.pos >= len(data) or data[scan.pos] not in b" \t\r\n":
            raise NetpbmError(f"missing whitespace after maxval at byte {scan.pos}")
        pos = scan.pos + 1
        dtype = ">u2" if maxval > 255 else "u1"
        need = count * (2 if maxval > 255 else 1)
        if len(data) - pos < need:
            raise NetpbmError(
                f"truncated raster: need {need} bytes at byte {pos}, file has {len(data) - pos}"
            )
        raw = np.frombuffer(data, dtype=dtype, count=count, offset=pos).astype(np.float64)
    else:
        raw = np.empty(count, dtype=np.float64)
        for i in range(count):
            raw[i] = scan.next_int(f"sample {i}")
    if raw.max(initial=0.0) > maxval:
        raise NetpbmError(f"sample value {int(raw.max())} exceeds maxval {maxval}")
    return (raw / maxval).reshape(height, width, channels)


def write_netpbm(path, t: np.ndarray, format: str = "P5", maxval: int = 255) -> None:
    """Quantize an (H, W, C) tensor in [0, 1] to a netpbm file.  16-bit
    samples (maxval > 255) are written big-endian per the format."""
    if format not in ("P2", "P3", "P5", "P6"):
        raise ValueError(f"unsupported netpbm format {format!r}")
    if not 1 <= maxval <= 65535:
        raise ValueError(f"maxval {maxval} outside [1, 65535]")
    channels = 1 if format in ("P2", "P5") else 3
    if t.ndim != 3 or t.shape[2] != channels:
        raise ValueError(f"format {format} needs {channels} channel(s), tensor has shape {t.shape}")
    h, w = t.shape[0], t.shape[1]
    q = np.rint(np.clip(t, 0.0, 1.0) * maxval).astype(np.uint16)
    header = f"{format}\n{w} {h}\n{maxval}\n".encode("ascii")
    if format in ("P5", "P6"):
        body = q.astype(">u2" if maxval > 255 else "u1").tobytes()
    else:
        flat = q.reshape(-1)
        lines = []
        for i in range(0, flat.size, 12):  # keep plain-format lines short
            lines.append(" ".join(str(v) for v in flat[i:i + 12]))
        body = ("\n".join(lines) + "\n").encode("ascii")
    Path(path).write_bytes(header + body)


# --- corpus ------------------------------------------------------------------

def sample_seed(corpus_seed: int, index: int) -> int:
    """Per-sample seed; indices are global across splits, so no seed can
    appear in two splits."""
    return corpus_seed * 1_000_003 + index


def generate_corpus(out_dir, *, image_size: int, channels: int, blur_size: int,
                    blur_sigma: float, train_count: int, val_count: int,
                    test_count: int, seed: int) -> dict:
    """Write a synthetic blur corpus (16-bit netpbm) plus manifest.json.
    Fully deterministic in `seed`; returns the manifest dict."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    kernel = gaussian_kernel(blur_size, blur_sigma)
    m = blur_size // 2
    fmt = "P5" if channels == 1 else "P6"
    ext = "pgm" if channels == 1 else "ppm"

    samples = []
    index = 0
    for split, count in (("train", train_count), ("validation", val_count), ("test", test_count)):
        for _ in range(count):
            sseed = sample_seed(seed, index)
            source = synth_image(image_size + 2 * m, image_size + 2 * m, channels, sseed)
            pair = make_blur_sample(source, kernel)
            input_name = f"input_{index:05d}.{ext}"
            target_name = f"target_{index:05d}.{ext}"
            write_netpbm(out / input_name, pair.input, fmt, maxval=65535)
            write_netpbm(out / target_name, pair.target, fmt, maxval=65535)
            samples.append({
                "id": index, "seed": sseed, "split": split,
                "input": input_name, "target": target_name,
            })
            index += 1

    manifest = {
        "image_size": image_size,
        "channels": channels,
        "blur_size": blur_size,
        "blur_sigma": blur_sigma,
        "seed": seed,
        "samples": samples,
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return manifest


def load_corpus(data_dir) -> DatasetSplit:
    """Read a generated corpus back into per-split sample lists, in
    manifest order."""
    root = Path(data_dir)
    manifest_path = root / "manifest.json"
    if not manifest_path.exists():
        raise FileNotFoundError(f"no manifest.json under {root}")
    manifest = json.loads(manifest_path.read_text())
    splits = {"train": [], "validation": [], "test": []}
    for entry in manifest["samples"]:
        pair = BlurTaskSample(
            input=read_netpbm(root / entry["input"]),
            target=read_netpbm(root / entry["target"]),
        )
        splits[entry["split"]].append(pair)
    return DatasetSplit(train=splits["train"], validation=splits["validation"],
                        test=splits["test"], seed=manifest["seed"])
