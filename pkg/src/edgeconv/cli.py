"""Command-line harness: gen-data, train, sweep, eval, errmap, bench,
crop-calc.  Exit code 0 on success; failures print one line
"<ErrorClass>: <message>" to stderr and exit nonzero.
"""

import argparse
import json
import sys
from dataclasses import replace
from pathlib import Path

from .dataio import load_corpus
from .experiments import (
    ExperimentConfig,
    bench_run,
    errmap_run,
    evaluate_runs,
    gen_data_run,
    load_dataset_checked,
    sweep_run,
    train_run,
)
from .metrics import required_crop
from .net import checkpoint_load


def _load_config(args) -> ExperimentConfig:
    cfg = ExperimentConfig.from_json_file(args.config) if args.config else ExperimentConfig()
    if getattr(args, "seed", None) is not None:
        cfg = replace(cfg, seed=args.seed)
    return cfg


def _add_common(parser, *, config=True, out=True, seed=True):
    if config:
        parser.add_argument("--config", help="JSON experiment config (defaults apply if omitted)")
    if seed:
        parser.add_argument("--seed", type=int, help="override the config seed")
    if out:
        parser.add_argument("--out", required=True, help="output directory")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="edgeconv",
                                     description="Boundary-aware convolution experiments")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate the synthetic blur corpus")
    _add_common(p)

    p = sub.add_parser("train", help="train one model and write report + checkpoint")
    _add_common(p)
    p.add_argument("--data", required=True, help="corpus directory from gen-data")

    p = sub.add_parser("sweep", help="train zero/reflect/explicit over an architecture axis")
    _add_common(p)
    p.add_argument("--data", required=True)
    p.add_argument("--axis", choices=("depth", "features", "joint"), required=True)

    p = sub.add_parser("eval", help="test-split metrics and pairwise comparisons")
    _add_common(p, config=False, seed=False)
    p.add_argument("--data", required=True)
    p.add_argument("--checkpoint", action="append", required=True,
                   help="checkpoint file; repeat for pairwise comparisons")
    p.add_argument("--oracle", action="store_true",
                   help="debug: score targets against themselves")

    p = sub.add_parser("errmap", help="corpus mean-absolute-error map and band stats")
    _add_common(p, config=False, seed=False)
    p.add_argument("--data", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--band-width", type=int, default=None,
                   help="boundary band width in pixels (default: blur radius)")
    p.add_argument("--oracle", action="store_true")

    p = sub.add_parser("bench", help="time zero baseline vs compose vs decompose")
    _add_common(p, config=False)
    p.add_argument("--size", type=int, default=512)
    p.add_argument("--channels", type=int, default=3)
    p.add_argument("--features", type=int, default=3)
    p.add_argument("--radius", type=int, default=1)
    p.add_argument("--repeats", type=int, default=21)

    p = sub.add_parser("crop-calc", help="crop size needed to outrun boundary effects")
    p.add_argument("--depth", type=int, required=True)
    p.add_argument("--radius", type=int, required=True)
    p.add_argument("--multi-resolution", action="store_true")
    return parser


def run(args) -> int:
    if args.command == "gen-data":
        manifest = gen_data_run(_load_config(args), args.out)
        print(f"wrote {len(manifest['samples'])} samples to {args.out}")
    elif args.command == "train":
        cfg = _load_config(args)
        dataset = load_dataset_checked(cfg, args.data)
        report = train_run(cfg, dataset, out_dir=args.out)
        print(f"selected epoch {report.selected_epoch}, test MSE {report.test_mse:.6e}")
    elif args.command == "sweep":
        cfg = _load_config(args)
        dataset = load_dataset_checked(cfg, args.data)
        rows = sweep_run(cfg, dataset, args.axis, out_dir=args.out)
        print(f"wrote {len(rows)} sweep rows to {args.out}")
    elif args.command == "eval":
        runs = [(_run_label(path, args.checkpoint), checkpoint_load(Path(path).read_bytes()))
                for path in args.checkpoint]
        dataset = load_corpus(args.data)
        result = evaluate_runs(runs, dataset, out_dir=args.out, oracle=args.oracle)
        for row in result["metrics"]:
            print(f"{row['label']}: mse={row['mse']:.6e} psnr={row['psnr_db']:.2f}dB dssim={row['dssim']:.5f}")
    elif args.command == "errmap":
        net = checkpoint_load(Path(args.checkpoint).read_bytes())
        dataset = load_corpus(args.data)
        band = args.band_width
        if band is None:
            band = json.loads((Path(args.data) / "manifest.json").read_text())["blur_size"] // 2
        _, stats = errmap_run(net, dataset, band, out_dir=args.out, oracle=args.oracle)
        print(f"corner={stats.corner_mean:.6e} edge={stats.edge_mean:.6e} interior={stats.interior_mean:.6e}")
    elif args.command == "bench":
        rows = bench_run(image_size=args.size, channels=args.channels,
                         out_features=args.features, radius=args.radius,
                         repeats=args.repeats, seed=args.seed or 0, out_dir=args.out)
        for row in rows:
            print(f"{row['variant']}: median {row['median_seconds'] * 1e3:.2f} ms")
    elif args.command == "crop-calc":
        print(required_crop(args.depth, args.radius, args.multi_resolution))
    return 0


def _run_label(path, all_paths) -> str:
    stem = Path(path).stem
    if sum(1 for p in all_paths if Path(p).stem == stem) > 1:
        return f"{Path(path).parent.name}_{stem}"
    return stem


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return run(args)
    except Exception as exc:  # one-line, machine-parsable failure
        print(f"{type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
