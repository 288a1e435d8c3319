"""Reproducible experiment drivers: config handling, the training loop,
architecture sweeps, error-map emission, the execution-strategy benchmark,
and checkpoint evaluation.

Every driver is deterministic given its config seed; CSV outputs carry no
timestamps so reruns are byte-identical (wall-clock lives in report.json).
"""

import json
import math
import time
from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path

import numpy as np

from .conv import KernelSet, conv2d_forward, partition_build
from .dataio import DatasetSplit, generate_corpus, load_corpus, write_netpbm
from .metrics import (
    boundary_band_stats,
    dssim,
    error_map_accumulate,
    loss_ratio,
    psnr,
    welch_t_test,
)
from .net import (
    LayerSpec,
    Network,
    NetworkConfig,
    checkpoint_save,
    mse_loss_and_grad,
    network_backward,
    network_build,
    network_forward,
)
from .optim import AdamState, adam_step

SWEEP_MODES = ("zero", "reflect", "explicit")


class TrainingDiverged(RuntimeError):
    """Raised when the loss or parameters stop being finite."""


@dataclass(frozen=True)
class ExperimentConfig:
    # task geometry
    image_size: int = 48
    channels: int = 1
    blur_size: int = 5
    blur_sigma: float = 1.0
    # corpus
    train_count: int = 1000
    val_count: int = 200
    test_count: int = 500
    # architecture
    n_layers: int = 2
    n_features: int = 3
    radius: int = 1
    mode: str = "explicit"
    strategy: str = "decompose"
    # optimizer
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    # run
    epochs: int = 30
    batch_size: int = 10
    seed: int = 0

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def from_json_file(cls, path) -> "ExperimentConfig":
        return cls.from_dict(json.loads(Path(path).read_text()))

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class TrainReport:
    config: dict
    seed: int
    initial_val_mse: float
    epochs: list  # dicts: epoch, train_mse, val_mse, seconds
    selected_epoch: int  # 0 means the initialization
    test_mse: float
    test_psnr: float
    test_dssim: float
    per_image_test_mse: list

    def val_curve(self) -> list[float]:
        return [e["val_mse"] for e in self.epochs]


def network_config_for(cfg: ExperimentConfig) -> NetworkConfig:
    """The n_layers/n_features architecture: every layer but the last emits
    n_features channels with ReLU; the last maps to the target channels
    linearly."""
    layers = []
    for i in range(cfg.n_layers):
        last = i == cfg.n_layers - 1
        layers.append(LayerSpec(
            out_features=cfg.channels if last else cfg.n_features,
            radius=cfg.radius,
            mode=cfg.mode,
            activation="none" if last else "relu",
        ))
    return NetworkConfig(layers=tuple(layers), input_channels=cfg.channels, seed=cfg.seed)


def _stack_split(samples) -> tuple[np.ndarray, np.ndarray]:
    return (np.stack([s.input for s in samples]),
            np.stack([s.target for s in samples]))


def predict_in_chunks(net: Network, inputs: np.ndarray, chunk: int = 50) -> np.ndarray:
    preds = [network_forward(net, inputs[i:i + chunk]) for i in range(0, len(inputs), chunk)]
    net._cache = None
    return np.concatenate(preds, axis=0)


def per_image_mse(preds: np.ndarray, targets: np.ndarray) -> np.ndarray:
    d = preds - targets
    return (d * d).mean(axis=(1, 2, 3))


def _copy_params(net: Network) -> list[np.ndarray]:
    return [a.copy() for a in net.parameter_arrays()]


def train_run(cfg: ExperimentConfig, dataset: DatasetSplit, out_dir=None) -> TrainReport:
    """Train one network per cfg and report per-epoch losses plus test
    metrics at the minimum-validation checkpoint."""
    train_x, train_t = _stack_split(dataset.train)
    val_x, val_t = _stack_split(dataset.validation)
    test_x, test_t = _stack_split(dataset.test)

    net = network_build(network_config_for(cfg), strategy=cfg.strategy)
    state = AdamState.init(net.parameter_arrays(), alpha=cfg.learning_rate,
                           beta1=cfg.beta1, beta2=cfg.beta2, epsilon=cfg.epsilon)
    shuffle_rng = np.random.default_rng([cfg.seed, 1])

    def validation_mse() -> float:
        return float(per_image_mse(predict_in_chunks(net, val_x), val_t).mean())

    initial_val = validation_mse()
    best_val, best_epoch, best_params = initial_val, 0, _copy_params(net)
    epoch_rows = []

    for epoch in range(1, cfg.epochs + 1):
        t0 = time.perf_counter()
        order = shuffle_rng.permutation(len(train_x))
        losses, counts = [], []
        for bi, start in enumerate(range(0, len(order), cfg.batch_size)):
            idx = order[start:start + cfg.batch_size]
            pred = network_forward(net, train_x[idx])
            loss, lg = mse_loss_and_grad(pred, train_t[idx])
            if not math.isfinite(loss):
                raise TrainingDiverged(f"non-finite loss at epoch {epoch}, batch {bi}")
            grads = network_backward(net, lg)
            grad_arrays = []
            for g in grads:
                grad_arrays.extend([g.weights, g.bias])
            try:
                net.set_parameter_arrays(adam_step(net.parameter_arrays(), grad_arrays, state))
            except ValueError as exc:
                raise TrainingDiverged(f"non-finite parameters at epoch {epoch}, batch {bi}") from exc
            losses.append(loss)
            counts.append(len(idx))
        train_mse = float(np.average(losses, weights=counts))
        val_mse = validation_mse()
        epoch_rows.append({
            "epoch": epoch,
            "train_mse": train_mse,
            "val_mse": val_mse,
            "seconds": time.perf_counter() - t0,
        })
        if val_mse < best_val:
            best_val, best_epoch, best_params = val_mse, epoch, _copy_params(net)

    net.set_parameter_arrays(best_params)
    test_preds = predict_in_chunks(net, test_x)
    per_image = per_image_mse(test_preds, test_t)
    test_mse = float(per_image.mean())
    test_dssim = float(np.mean([dssim(p, t) for p, t in zip(test_preds, test_t)]))
    report = TrainReport(
        config=cfg.to_dict(),
        seed=cfg.seed,
        initial_val_mse=initial_val,
        epochs=epoch_rows,
        selected_epoch=best_epoch,
        test_mse=test_mse,
        test_psnr=psnr(test_preds, test_t),
        test_dssim=test_dssim,
        per_image_test_mse=[float(v) for v in per_image],
    )
    if out_dir is not None:
        _write_train_artifacts(out_dir, cfg, net, report)
    return report


def _write_csv(path, header: list[str], rows) -> None:
    lines = [",".join(header)]
    for row in rows:
        lines.append(",".join(_fmt(v) for v in row))
    Path(path).write_text("\n".join(lines) + "\n")


def _fmt(v) -> str:
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _write_train_artifacts(out_dir, cfg: ExperimentConfig, net: Network, report: TrainReport) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.json").write_text(json.dumps(cfg.to_dict(), indent=2, sort_keys=True) + "\n")
    (out / "report.json").write_text(json.dumps(asdict(report), indent=2, sort_keys=True) + "\n")
    (out / "checkpoint.ckpt").write_bytes(checkpoint_save(net))
    _write_csv(out / "epochs.csv", ["epoch", "train_mse", "val_mse"],
               [(e["epoch"], e["train_mse"], e["val_mse"]) for e in report.epochs])
    _write_csv(out / "test_losses.csv", ["sample_index", "mse"],
               list(enumerate(report.per_image_test_mse)))
    series = {"train": [e["train_mse"] for e in report.epochs],
              "validation": [report.initial_val_mse] + report.val_curve()}
    write_line_chart_svg(out / "loss_curve.svg", series, f"MSE per epoch ({cfg.mode})")


def write_line_chart_svg(path, series: dict, title: str = "",
                         width: int = 640, height: int = 400) -> None:
    """Tiny dependency-free SVG line chart (log10 y-axis)."""
    values = [v for ys in series.values() for v in ys if v > 0]
    if not values:
        return
    lo, hi = math.log10(min(values)), math.log10(max(values))
    if hi - lo < 1e-9:
        hi = lo + 1.0
    pad, colors = 45, ("#1b6ca8", "#c23b22", "#3a7d44", "#8e5ba6")
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}">',
        f'<rect width="{width}" height="{height}" fill="white"/>',
        f'<text x="{width / 2}" y="18" text-anchor="middle" font-size="13">{title}</text>',
        f'<line x1="{pad}" y1="{height - pad}" x2="{width - 10}" y2="{height - pad}" stroke="black"/>',
        f'<line x1="{pad}" y1="{height - pad}" x2="{pad}" y2="25" stroke="black"/>',
    ]
    max_len = max(len(ys) for ys in series.values())
    for si, (name, ys) in enumerate(series.items()):
        pts = []
        for i, v in enumerate(ys):
            if v <= 0:
                continue
            x = pad + (width - pad - 10) * (i / max(1, max_len - 1))
            y = (height - pad) - (height - pad - 25) * ((math.log10(v) - lo) / (hi - lo))
            pts.append(f"{x:.1f},{y:.1f}")
        color = colors[si % len(colors)]
        parts.append(f'<polyline points="{" ".join(pts)}" fill="none" stroke="{color}" stroke-width="1.5"/>')
        parts.append(f'<text x="{pad + 8}" y="{38 + 14 * si}" font-size="11" fill="{color}">{name}</text>')
    parts.append(f'<text x="12" y="{height / 2}" font-size="11" transform="rotate(-90 12 {height / 2})">log10 MSE</text>')
    parts.append("</svg>")
    Path(path).write_text("\n".join(parts) + "\n")


# --- sweeps -------------------------------------------------------------------

def sweep_points(axis: str) -> list[tuple[int, int]]:
    """(n_layers, n_features) per operational point."""
    if axis == "depth":
        return [(nl, 3) for nl in range(1, 8)]
    if axis == "features":
        return [(2, nf) for nf in range(1, 8)]
    if axis == "joint":
        return [(k, 3 * k) for k in range(1, 8)]
    raise ValueError(f"unknown sweep axis {axis!r}")


def sweep_run(cfg: ExperimentConfig, dataset: DatasetSplit, axis: str, out_dir=None) -> list[dict]:
    """Train zero / reflect / explicit at every operational point with the
    same seed, so mode comparisons are paired."""
    rows = []
    for step, (n_layers, n_features) in enumerate(sweep_points(axis), start=1):
        for mode in SWEEP_MODES:
            run_cfg = replace(cfg, n_layers=n_layers, n_features=n_features, mode=mode)
            report = train_run(run_cfg, dataset)
            rows.append({
                "axis": axis,
                "step": step,
                "n_layers": n_layers,
                "n_features": n_features,
                "mode": mode,
                "seed": cfg.seed,
                "selected_epoch": report.selected_epoch,
                "test_mse": report.test_mse,
            })
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        _write_csv(out / "sweep.csv",
                   ["axis", "step", "n_layers", "n_features", "mode", "seed",
                    "selected_epoch", "test_mse"],
                   [tuple(r.values()) for r in rows])
        (out / "config.json").write_text(json.dumps(cfg.to_dict(), indent=2, sort_keys=True) + "\n")
    return rows


# --- error maps ----------------------------------------------------------------

def errmap_run(net: Network, dataset: DatasetSplit, band_width: int,
               out_dir=None, oracle: bool = False):
    """Accumulate the per-pixel MAE map over the test split and summarize
    it per boundary band.  `oracle` substitutes targets for predictions."""
    test_x, test_t = _stack_split(dataset.test)
    preds = test_t.copy() if oracle else predict_in_chunks(net, test_x)
    emap = error_map_accumulate(list(preds), list(test_t))
    stats = boundary_band_stats(emap, band_width)
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        peak = float(emap.values.max())
        scale = 1.0 if peak == 0.0 else 1.0 / peak
        write_netpbm(out / "errmap.pgm", emap.values * scale, "P5", maxval=65535)
        h, w = emap.values.shape[:2]
        _write_csv(out / "errmap.csv", ["y", "x", "mean_abs_error"],
                   [(y, x, float(emap.values[y, x, 0])) for y in range(h) for x in range(w)])
        _write_csv(out / "band_stats.csv",
                   ["band_width_px", "corner_mean", "edge_mean", "interior_mean",
                    "corpus_size", "pgm_scale"],
                   [(stats.band_width, stats.corner_mean, stats.edge_mean,
                     stats.interior_mean, emap.corpus_size, scale)])
    return emap, stats


# --- strategy benchmark ---------------------------------------------------------

def bench_run(image_size: int = 512, channels: int = 3, out_features: int = 3,
              radius: int = 1, repeats: int = 21, seed: int = 0, out_dir=None) -> list[dict]:
    """Median wall-clock of one forward pass for the zero-padding baseline
    and both explicit strategies; verifies strategy agreement first."""
    rng = np.random.default_rng(seed)
    k = 2 * radius + 1
    image = rng.uniform(0.0, 1.0, size=(image_size, image_size, channels))
    single = KernelSet(weights=rng.normal(0.0, 0.3, size=(1, out_features, k, k, channels)),
                       bias=rng.normal(0.0, 0.1, size=out_features))
    explicit = KernelSet(weights=rng.normal(0.0, 0.3, size=(k * k, out_features, k, k, channels)),
                         bias=rng.normal(0.0, 0.1, size=out_features))
    part = partition_build(image_size, image_size, radius)

    agree = np.max(np.abs(conv2d_forward(image, explicit, "explicit", part, "compose")
                          - conv2d_forward(image, explicit, "explicit", part, "decompose")))
    if agree >= 1e-12:
        raise RuntimeError(f"strategies disagree by {agree:.3e} before timing")

    variants = [
        ("zero_baseline", lambda: conv2d_forward(image, single, "zero")),
        ("explicit_compose", lambda: conv2d_forward(image, explicit, "explicit", part, "compose")),
        ("explicit_decompose", lambda: conv2d_forward(image, explicit, "explicit", part, "decompose")),
    ]
    rows = []
    for name, fn in variants:
        times = []
        for _ in range(repeats):
            t0 = time.perf_counter()
            fn()
            times.append(time.perf_counter() - t0)
        q25, q50, q75 = np.percentile(times, [25, 50, 75])
        rows.append({"variant": name, "repeats": repeats,
                     "median_seconds": float(q50), "iqr_seconds": float(q75 - q25)})
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        _write_csv(out / "bench.csv", ["variant", "repeats", "median_seconds", "iqr_seconds"],
                   [tuple(r.values()) for r in rows])
    return rows


# --- evaluation ------------------------------------------------------------------

def evaluate_runs(runs: list[tuple[str, Network]], dataset: DatasetSplit,
                  out_dir=None, oracle: bool = False) -> dict:
    """Test-split metrics per run plus pairwise loss ratios and Welch tests
    over per-image losses.  Pairwise rows are omitted for zero-loss runs
    (the ratio is undefined there)."""
    test_x, test_t = _stack_split(dataset.test)
    metrics_rows, losses = [], {}
    for label, net in runs:
        mode = net.config.layers[0].mode
        preds = test_t.copy() if oracle else predict_in_chunks(net, test_x)
        per_image = per_image_mse(preds, test_t)
        losses[label] = per_image
        metrics_rows.append({
            "label": label,
            "mode": mode,
            "mse": float(per_image.mean()),
            "psnr_db": psnr(preds, test_t),
            "dssim": float(np.mean([dssim(p, t) for p, t in zip(preds, test_t)])),
        })
    pairwise_rows = []
    for a in metrics_rows:
        for b in metrics_rows:
            if a is b or a["mse"] == 0.0 or b["mse"] == 0.0:
                continue
            t, p = welch_t_test(losses[a["label"]], losses[b["label"]])
            pairwise_rows.append({
                "label_a": a["label"], "label_b": b["label"],
                "loss_ratio_pct": loss_ratio(a["mse"], b["mse"]),
                "welch_t": t, "p_two_sided": p,
            })
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        _write_csv(out / "metrics.csv", ["label", "mode", "mse", "psnr_db", "dssim"],
                   [tuple(r.values()) for r in metrics_rows])
        labels = [label for label, _ in runs]
        _write_csv(out / "per_image_losses.csv", ["sample_index"] + labels,
                   [(i, *(float(losses[l][i]) for l in labels))
                    for i in range(len(test_t))])
        _write_csv(out / "pairwise.csv",
                   ["label_a", "label_b", "loss_ratio_pct", "welch_t", "p_two_sided"],
                   [tuple(r.values()) for r in pairwise_rows])
    return {"metrics": metrics_rows, "pairwise": pairwise_rows}


# --- data generation --------------------------------------------------------------

def gen_data_run(cfg: ExperimentConfig, out_dir) -> dict:
    return generate_corpus(
        out_dir,
        image_size=cfg.image_size, channels=cfg.channels,
        blur_size=cfg.blur_size, blur_sigma=cfg.blur_sigma,
        train_count=cfg.train_count, val_count=cfg.val_count,
        test_count=cfg.test_count, seed=cfg.seed,
    )


def load_dataset_checked(cfg: ExperimentConfig, data_dir) -> DatasetSplit:
    """Load a corpus and fail fast if its geometry disagrees with cfg."""
    manifest = json.loads((Path(data_dir) / "manifest.json").read_text())
    for key in ("image_size", "channels", "blur_size", "blur_sigma"):
        if manifest[key] != getattr(cfg, key):
            raise ValueError(
                f"dataset {key}={manifest[key]} does not match config {key}={getattr(cfg, key)}"
            )
    return load_corpus(data_dir)
