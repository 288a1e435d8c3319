"""Flat stride-1 convolution networks: n_l layers of n_f features with ReLU,
a linear final layer, MSE loss, backprop, and a binary checkpoint format.
"""

import json
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .conv import KernelSet, conv2d_backward, conv2d_forward, partition_build

CHECKPOINT_MAGIC = b"EDGECONV1"

ACTIVATIONS = ("relu", "none")


class CheckpointError(ValueError):
    """Raised when a checkpoint blob cannot be decoded."""


@dataclass(frozen=True)
class LayerSpec:
    out_features: int
    radius: int = 1
    mode: str = "zero"
    activation: str = "relu"

    def __post_init__(self):
        if self.out_features < 1:
            raise ValueError("out_features must be >= 1")
        if self.radius < 1:
            raise ValueError("radius must be >= 1")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")


@dataclass(frozen=True)
class NetworkConfig:
    layers: tuple[LayerSpec, ...]
    input_channels: int
    seed: int

    def __post_init__(self):
        if len(self.layers) < 1:
            raise ValueError("a network needs at least one layer")
        if self.layers[-1].activation != "none":
            raise ValueError("the final layer must use activation 'none' (regression output)")
        if self.input_channels < 1:
            raise ValueError("input_channels must be >= 1")


@lru_cache(maxsize=64)
def _partition_for(height: int, width: int, radius: int):
    return partition_build(height, width, radius)


class Network:
    """Parameter container plus forward cache for one architecture.

    A single instance must not run forward/backward concurrently: backward
    reads the activations cached by the preceding forward.
    """

    def __init__(self, config: NetworkConfig, params: list[KernelSet], strategy: str = "decompose"):
        self.config = config
        self.params = params
        self.strategy = strategy
        self._cache = None

    def parameter_arrays(self) -> list[np.ndarray]:
        """Flat view [w0, b0, w1, b1, ...] for the optimizer."""
        arrays = []
        for ks in self.params:
            arrays.extend([ks.weights, ks.bias])
        return arrays

    def set_parameter_arrays(self, arrays: list[np.ndarray]) -> None:
        if len(arrays) != 2 * len(self.params):
            raise ValueError("parameter array count does not match the network")
        for i, ks in enumerate(self.params):
            self.params[i] = KernelSet(weights=arrays[2 * i], bias=arrays[2 * i + 1])


def _glorot_bound(kernel_size: int, in_channels: int, out_features: int) -> float:
    fan_in = kernel_size * kernel_size * in_channels
    fan_out = kernel_size * kernel_size * out_features
    return float(np.sqrt(6.0 / (fan_in + fan_out)))


def network_build(config: NetworkConfig, strategy: str = "decompose") -> Network:
    """Deterministic initialization from config.seed.

    Interior kernels are Glorot-uniform with zero bias; in explicit mode all
    region kernels of a layer start as identical copies of that layer's
    interior kernel, so training starts exactly at the zero-padding baseline.
    """
    rng = np.random.default_rng(config.seed)
    params = []
    in_channels = config.input_channels
    for spec in config.layers:
        k = 2 * spec.radius + 1
        bound = _glorot_bound(k, in_channels, spec.out_features)
        interior = rng.uniform(-bound, bound, size=(spec.out_features, k, k, in_channels))
        regions = k * k if spec.mode == "explicit" else 1
        weights = np.repeat(interior[None, :, :, :, :], regions, axis=0)
        params.append(KernelSet(weights=weights, bias=np.zeros(spec.out_features)))
        in_channels = spec.out_features
    return Network(config=config, params=params, strategy=strategy)


def network_forward(net: Network, input: np.ndarray) -> np.ndarray:
    """Run the conv/activation chain, caching activations for backward.
    Accepts a single (H, W, C) image or a stacked (B, H, W, C) batch."""
    if input.shape[-1] != net.config.input_channels:
        raise ValueError(
            f"input has {input.shape[-1]} channels, network expects {net.config.input_channels}"
        )
    h, w = input.shape[-3], input.shape[-2]
    x = input
    cache = []
    for spec, ks in zip(net.config.layers, net.params):
        part = _partition_for(h, w, spec.radius) if spec.mode == "explicit" else None
        pre = conv2d_forward(x, ks, spec.mode, part, net.strategy)
        post = np.maximum(pre, 0.0) if spec.activation == "relu" else pre
        cache.append((x, pre))
        x = post
    net._cache = cache
    return x


def mse_loss_and_grad(pred: np.ndarray, target: np.ndarray):
    """Mean squared error over all entries and its gradient w.r.t. pred."""
    if pred.shape != target.shape:
        raise ValueError(f"shape mismatch: pred {pred.shape} vs target {target.shape}")
    diff = pred - target
    loss = float(np.mean(diff * diff))
    grad = (2.0 / diff.size) * diff
    return loss, grad


def network_backward(net: Network, loss_grad: np.ndarray) -> list[KernelSet]:
    """Chain-rule gradients for every layer, consuming the forward cache.
    ReLU uses subgradient 0 at exactly 0.  Returns KernelSet-shaped grads."""
    if net._cache is None:
        raise RuntimeError("network_backward needs the cache of a preceding network_forward")
    cache, net._cache = net._cache, None
    g = loss_grad
    grads: list[KernelSet] = []
    for spec, ks, (x_in, pre) in zip(reversed(net.config.layers), reversed(net.params), reversed(cache)):
        if spec.activation == "relu":
            g = g * (pre > 0.0)
        h, w = x_in.shape[-3], x_in.shape[-2]
        part = _partition_for(h, w, spec.radius) if spec.mode == "explicit" else None
        g, grad_w, grad_b = conv2d_backward(x_in, ks, spec.mode, part, g)
        grads.append(KernelSet(weights=grad_w, bias=grad_b))
    grads.reverse()
    return grads


# --- checkpoint format -----------------------------------------------------
# magic "EDGECONV1" | u32 LE header length | JSON config echo | per layer:
# weights (region, feature, ky, kx, channel) then bias, little-endian f64.

def _config_to_dict(config: NetworkConfig, strategy: str) -> dict:
    return {
        "input_channels": config.input_channels,
        "seed": config.seed,
        "strategy": strategy,
        "layers": [
            {
                "out_features": s.out_features,
                "radius": s.radius,
                "mode": s.mode,
                "activation": s.activation,
            }
            for s in config.layers
        ],
    }


def _config_from_dict(d: dict) -> tuple[NetworkConfig, str]:
    try:
        layers = tuple(
            LayerSpec(
                out_features=l["out_features"],
                radius=l["radius"],
                mode=l["mode"],
                activation=l["activation"],
            )
            for l in d["layers"]
        )
        config = NetworkConfig(layers=layers, input_channels=d["input_channels"], seed=d["seed"])
        return config, d.get("strategy", "decompose")
    except (KeyError, TypeError, ValueError) as exc:
        raise CheckpointError(f"malformed checkpoint header: {exc}") from exc


def checkpoint_save(net: Network) -> bytes:
    header = json.dumps(_config_to_dict(net.config, net.strategy), sort_keys=True).encode("ascii")
    parts = [CHECKPOINT_MAGIC, len(header).to_bytes(4, "little"), header]
    for ks in net.params:
        parts.append(np.ascontiguousarray(ks.weights, dtype="<f8").tobytes())
        parts.append(np.ascontiguousarray(ks.bias, dtype="<f8").tobytes())
    return b"".join(parts)


def checkpoint_load(blob: bytes) -> Network:
    if blob[: len(CHECKPOINT_MAGIC)] != CHECKPOINT_MAGIC:
        raise CheckpointError(f"bad magic {blob[:len(CHECKPOINT_MAGIC)]!r}, expected {CHECKPOINT_MAGIC!r}")
    pos = len(CHECKPOINT_MAGIC)
    if len(blob) < pos + 4:
        raise CheckpointError("truncated checkpoint: missing header length")
    header_len = int.from_bytes(blob[pos:pos + 4], "little")
    pos += 4
    if len(blob) < pos + header_len:
        raise CheckpointError("truncated checkpoint: incomplete header")
    try:
        header = json.loads(blob[pos:pos + header_len].decode("ascii"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"undecodable checkpoint header: {exc}") from exc
    pos += header_len
    config, strategy = _config_from_dict(header)

    params = []
    in_channels = config.input_channels
    for spec in config.layers:
        k = 2 * spec.radius + 1
        regions = k * k if spec.mode == "explicit" else 1
        w_shape = (regions, spec.out_features, k, k, in_channels)
        w_count = int(np.prod(w_shape))
        need = 8 * (w_count + spec.out_features)
        if len(blob) < pos + need:
            raise CheckpointError(f"truncated checkpoint: parameter block at byte {pos} needs {need} bytes")
        weights = np.frombuffer(blob, dtype="<f8", count=w_count, offset=pos).reshape(w_shape)
        pos += 8 * w_count
        bias = np.frombuffer(blob, dtype="<f8", count=spec.out_features, offset=pos)
        pos += 8 * spec.out_features
        params.append(KernelSet(weights=weights.copy(), bias=bias.copy()))
        in_channels = spec.out_features
    if pos != len(blob):
        raise CheckpointError(f"checkpoint has {len(blob) - pos} trailing bytes after byte {pos}")
    return Network(config=config, params=params, strategy=strategy)
