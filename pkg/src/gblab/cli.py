"""Command-line entry point: ``gblab {gen-data,train,eval,sweep,report}``."""
from __future__ import annotations

import argparse
import json
import logging
import sys


def _gen_data(args):
    from .data import SceneSpec, write_dataset

    spec = SceneSpec(num_sprites_range=(args.min_sprites, args.max_sprites))
    m = write_dataset(args.out, args.num, args.seed, spec, val_count=args.val_count)
    print(json.dumps(m.to_dict(), indent=2))


def _train(args):
    from .harness import RunConfig, train

    res = train(RunConfig.from_file(args.config))
    print(json.dumps({
        "out_dir": str(res.out_dir),
        "checkpoint": str(res.final_checkpoint),
        "steps_to_goal": res.steps_to_goal,
        "final_err_ema": res.final_err_ema,
    }, indent=2))


def _eval(args):
    from .checkpoint import load_model
    from .data import load_dataset
    from .harness import configure_threads
    from .metrics import evaluate

    configure_threads()
    model, _ = load_model(args.ckpt)
    report = evaluate(model, load_dataset(args.data), args.num_images, seed=args.seed)
    print(report.to_json())


def _sweep(args):
    from .harness import load_sweep_config, sweep

    rows = sweep(load_sweep_config(args.config), args.out)
    print(f"wrote {len(rows)} rows to {args.out}")


def _report(args):
    from .reporting import report

    for p in report(args.csv, args.out):
        print(p)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="gblab", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="write a synthetic multi-sprite dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--num", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--min-sprites", type=int, default=2)
    p.add_argument("--max-sprites", type=int, default=4)
    p.add_argument("--val-count", type=int, default=0)
    p.set_defaults(func=_gen_data)

    p = sub.add_parser("train", help="train one model from a RunConfig JSON")
    p.add_argument("--config", required=True)
    p.set_defaults(func=_train)

    p = sub.add_parser("eval", help="segmentation metrics for a checkpoint")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--num-images", type=int, default=300)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=_eval)

    p = sub.add_parser("sweep", help="run a latent-dimension sweep")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_sweep)

    p = sub.add_parser("report", help="plots and tables from a sweep CSV")
    p.add_argument("--csv", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_report)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(asctime)s %(name)s %(levelname)s %(message)s")
    try:
        args.func(args)
    except Exception as e:
        if args.verbose:
            raise
        print(f"error: {type(e).__name__}: {e}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
