"""Command-line entry point: ``gyronet train | eval | verify``."""

from __future__ import annotations

import argparse
import sys

from . import verify
from .models import InitScheme


def _train(args) -> int:
    from .training import load_config, train

    config = load_config(args.config)
    changes = {}
    if args.subset is not None:
        changes["subset"] = args.subset
    if args.bn is not None:
        changes["bn_mode"] = args.bn
    if args.seed is not None:
        changes["seed"] = args.seed
    if args.out_dir is not None:
        changes["out_dir"] = args.out_dir
    config = config.replace(**changes)

    def log(row):
        print(f"epoch {row['epoch']:3d}  loss {row['train_loss']:.4f}  "
              f"train {row['train_acc']:.3f}  test {row['test_acc']:.3f}  "
              f"{row['wall_seconds']:.1f}s", flush=True)

    train(config, log=log)
    return 0


def _eval(args) -> int:
    from .training import evaluate, load_checkpoint, load_cifar10

    ckpt = load_checkpoint(args.checkpoint)
    data = load_cifar10(args.data, "test", args.subset)
    acc = evaluate(ckpt.model, data, args.batch_size, args.bn)
    print(f"accuracy {acc:.4f} on {len(data)} images")
    return 0


def _verify(args) -> int:
    if args.what == "gradcheck":
        rows = verify.gradcheck_all(seed=args.seed, points=args.points)
        ok = all(r.passed for r in rows)
    elif args.what == "norms":
        rows = []
        for scheme in InitScheme:
            rows += verify.norm_sweep(args.depth, args.dim, scheme, args.seed)
        ok = True
    elif args.what == "bn-bench":
        rows = verify.bn_bench(args.batch_sizes, args.dims, args.iters, seed=args.seed)
        ok = True
    else:
        rows = verify.tape_size_bench(seed=args.seed)
        ok = True
    text = verify.write_csv(rows, args.out)
    if args.out is None:
        sys.stdout.write(text)
    return 0 if ok else 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="gyronet", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a Poincare ResNet from a config file")
    p.add_argument("--config", required=True)
    p.add_argument("--subset", type=int)
    p.add_argument("--bn", choices=("midpoint", "frechet"))
    p.add_argument("--seed", type=int)
    p.add_argument("--out-dir")
    p.set_defaults(func=_train)

    p = sub.add_parser("eval", help="test accuracy of a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True, help="CIFAR-10 binary directory or batch file")
    p.add_argument("--subset", type=int)
    p.add_argument("--batch-size", type=int, default=128)
    p.add_argument("--bn", choices=("midpoint", "frechet"), default="midpoint")
    p.set_defaults(func=_eval)

    p = sub.add_parser("verify", help="verification experiments, CSV output")
    p.add_argument("what", choices=("gradcheck", "norms", "bn-bench", "tape-bench"))
    p.add_argument("--out")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--points", type=int, default=100, help="gradcheck samples per op and c")
    p.add_argument("--depth", type=int, default=10)
    p.add_argument("--dim", type=int, default=20)
    p.add_argument("--batch-sizes", type=int, nargs="+", default=[32, 128])
    p.add_argument("--dims", type=int, nargs="+", default=[4, 16])
    p.add_argument("--iters", type=int, default=10)
    p.set_defaults(func=_verify)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
