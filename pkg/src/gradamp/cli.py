"""Command-line entry point.

Exit codes: 0 success, 1 tolerance or assertion failure, 2 configuration
error, 3 I/O or file-format error.

The EGA_THREADS environment variable caps worker parallelism. It is applied
before any numeric module is imported (the BLAS thread pools read their
environment at load time) and again at runtime through threadpoolctl for
pools that are already up.
"""

from __future__ import annotations

import argparse
import os
import sys
from pathlib import Path

_threads = os.environ.get("EGA_THREADS", "").strip()
if _threads:
    for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        os.environ.setdefault(_var, _threads)

SCALE_INVARIANCE_TOL = 1e-12


def _apply_thread_cap() -> None:
    # Re-read the variable here (not the import-time snapshot) so a cap set
    # after import still takes effect on already-running thread pools.
    threads = os.environ.get("EGA_THREADS", "").strip()
    if not threads:
        return
    try:
        n = int(threads)
    except ValueError:
        from .errors import InvalidConfigError

        raise InvalidConfigError(f"EGA_THREADS must be an integer, got {threads!r}")
    if n < 1:
        from .errors import InvalidConfigError

        raise InvalidConfigError(f"EGA_THREADS must be >= 1, got {n}")
    from threadpoolctl import threadpool_limits

    threadpool_limits(limits=n)


def _add_run_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--tau", type=float, default=0.02, help="softmax temperature")
    parser.add_argument("--alpha", type=float, default=20.0, help="hardness scale")
    parser.add_argument(
        "--hardness", choices=("relative", "absolute"), default="relative",
        help="hardness flavor for amplification",
    )
    parser.add_argument(
        "--mode", choices=("baseline", "ega"), default="ega",
        help="plain info-NCE gradients or amplified ones",
    )
    parser.add_argument("--batch", type=int, default=32, help="batch size")
    parser.add_argument("--chunk", type=int, default=8, help="chunk size for gradient caching")
    parser.add_argument("--steps", type=int, default=300, help="training steps")
    parser.add_argument("--lr", type=float, default=2e-3, help="Adam learning rate")
    parser.add_argument("--seed", type=int, default=0, help="run seed")
    parser.add_argument(
        "--widths", default="64,16",
        help="comma-separated hidden widths plus output dimension, e.g. 64,16",
    )
    parser.add_argument("--eval-interval", type=int, default=25, help="steps between metric rows")


def _parse_widths(text: str) -> tuple[int, ...]:
    from .errors import InvalidConfigError

    try:
        widths = tuple(int(part) for part in text.split(",") if part.strip())
    except ValueError:
        raise InvalidConfigError(f"--widths must be comma-separated integers, got {text!r}")
    if not widths:
        raise InvalidConfigError("--widths must name at least the output dimension")
    return widths


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="gradamp",
        description="Contrastive training engine with hardness-amplified gradients",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="materialize a synthetic dataset")
    p.add_argument("--data", required=True, help="synthetic config: inline JSON or .json path")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--seed", type=int, default=None, help="override the config seed")

    p = sub.add_parser("train", help="train an encoder")
    p.add_argument("--data", required=True, help="inline JSON config, .json path, or .egae file")
    p.add_argument("--out", required=True, help="output directory for metrics and checkpoint")
    _add_run_flags(p)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a dataset")
    p.add_argument("--data", required=True, help="dataset to evaluate on")
    p.add_argument("--checkpoint", required=True, help="path to a trained checkpoint")
    p.add_argument("--chunk", type=int, default=8, help="chunk size for embedding")

    p = sub.add_parser("gradcheck", help="run the numerical cross-check suite")
    p.add_argument("--seeds", type=int, default=17, help="number of random instances per size")
    p.add_argument("--tau", type=float, default=0.02)
    p.add_argument("--alpha", type=float, default=20.0)

    p = sub.add_parser("ablate", help="run baseline / ega-absolute / ega-relative")
    p.add_argument("--data", required=True)
    p.add_argument("--out", default=None, help="directory for ablation.csv / ablation.json")
    _add_run_flags(p)
    return parser


def _cmd_gen_data(args) -> int:
    from .data import SyntheticConfig, generate_dataset, write_embeddings

    text = args.data.strip()
    if text.startswith("{"):
        config = SyntheticConfig.from_json(text)
    else:
        config = SyntheticConfig.from_json(Path(args.data).read_text())
    if args.seed is not None:
        config = SyntheticConfig.from_mapping(
            {**{k: getattr(config, k) for k in config.__dataclass_fields__}, "seed": args.seed}
        )
    dataset = generate_dataset(config)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.json").write_text(config.to_json() + "\n")
    write_embeddings(out / "queries.egae", dataset.queries, dataset.labels)
    write_embeddings(out / "targets.egae", dataset.targets, dataset.labels)
    print(
        f"wrote {dataset.num_records} records over {dataset.num_classes} classes to {out}"
    )
    return 0


def _cmd_train(args) -> int:
    from .harness import RunConfig, run_train

    config = RunConfig(
        data=args.data,
        mode=args.mode,
        hardness=args.hardness,
        tau=args.tau,
        alpha=args.alpha,
        batch_size=args.batch,
        chunk_size=args.chunk,
        steps=args.steps,
        lr=args.lr,
        widths=_parse_widths(args.widths),
        seed=args.seed,
        out_dir=args.out,
        eval_interval=args.eval_interval,
    )
    result = run_train(config, log=print)
    final = result.final
    print(
        f"done: loss {final.loss_mean:.4f}  P@1 {final.precision_at_1:.3f}  "
        f"skipped {result.skipped_steps} step(s)  artifacts in {args.out}"
    )
    return 0


def _cmd_eval(args) -> int:
    from .harness import run_eval

    rec = run_eval(args.checkpoint, args.data, chunk_size=args.chunk)
    print(
        f"P@1 {rec.precision_at_1:.4f}  R@5 {rec.recall_at_5:.4f}  "
        f"R@10 {rec.recall_at_10:.4f}  mean rank {rec.mean_rank:.2f}  "
        f"loss {rec.loss_mean:.4f}"
    )
    return 0


def _cmd_gradcheck(args) -> int:
    from .harness import run_gradcheck

    report = run_gradcheck(seeds=range(args.seeds), tau=args.tau, alpha=args.alpha)
    print(report.table())
    if not report.passed:
        for fail in report.failures()[:10]:
            print(
                f"FAIL {fail.family}: {fail.max_err:.3e} > {fail.tolerance:.0e} ({fail.detail})"
            )
        return 1
    print(f"all {len(report.checks)} checks passed across {len(report.families)} families")
    return 0


def _cmd_ablate(args) -> int:
    from .harness import RunConfig, run_ablation

    base = RunConfig(
        data=args.data,
        mode=args.mode,
        hardness=args.hardness,
        tau=args.tau,
        alpha=args.alpha,
        batch_size=args.batch,
        chunk_size=args.chunk,
        steps=args.steps,
        lr=args.lr,
        widths=_parse_widths(args.widths),
        seed=args.seed,
        out_dir=args.out,
        eval_interval=args.eval_interval,
    )
    result = run_ablation(base, log=print)
    if result.pbar_mode_gap > SCALE_INVARIANCE_TOL:
        print(
            f"FAIL: hardness-mode gap {result.pbar_mode_gap:.3e} exceeds "
            f"{SCALE_INVARIANCE_TOL:.0e}"
        )
        return 1
    return 0


_COMMANDS = {
    "gen-data": _cmd_gen_data,
    "train": _cmd_train,
    "eval": _cmd_eval,
    "gradcheck": _cmd_gradcheck,
    "ablate": _cmd_ablate,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    from .errors import FileFormatError, InputError, InvalidConfigError, NonFiniteGradientError

    try:
        _apply_thread_cap()
        return _COMMANDS[args.command](args)
    except (InvalidConfigError, InputError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    except (FileFormatError, OSError) as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return 3
    except NonFiniteGradientError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
