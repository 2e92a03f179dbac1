"""Command line: ``conformal-spectrum run <config>`` and ``conformal-spectrum verify <suite>``."""
from __future__ import annotations

import argparse
import logging
import sys
from concurrent.futures import ThreadPoolExecutor

from threadpoolctl import threadpool_limits

from .config import U64_MAX, load_config
from .exceptions import ConfigurationError

EXIT_OK, EXIT_FAILED, EXIT_USAGE = 0, 1, 2


def _u64(text):
    try:
        v = int(text, 0)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: {text!r}") from None
    if not 0 <= v <= U64_MAX:
        raise argparse.ArgumentTypeError("seed must fit in an unsigned 64-bit integer")
    return v


def _positive_int(text):
    try:
        v = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: {text!r}") from None
    if v < 1:
        raise argparse.ArgumentTypeError("must be >= 1")
    return v


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--out", help="output directory (overrides the config's 'out')")
    common.add_argument("--seed", type=_u64, help="random seed (overrides the config)")
    common.add_argument("--threads", type=_positive_int, default=1, help="BLAS/LAPACK threads (default 1)")
    common.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    p = _Parser(prog="conformal-spectrum", description="Conformal eigenvalue maximization lab.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)
    r = sub.add_parser("run", parents=[common], help="run the full pipeline from a config file")
    r.add_argument("config", help="path to a flat TOML config")
    v = sub.add_parser("verify", parents=[common], help="run a verification suite")
    v.add_argument("suite", nargs="+", help="oracles, gradients, projection, endtoend-k1, endtoend-k2 or all")
    return p


def cmd_run(args) -> int:
    from .pipeline import run_pipeline, write_outputs

    try:
        cfg = load_config(args.config)
        if args.out is not None:
            cfg.out = args.out
        if args.seed is not None:
            cfg.seed = args.seed
        cfg.validate()
    except ConfigurationError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    with threadpool_limits(limits=args.threads):
        result = run_pipeline(cfg)
    report = write_outputs(result, cfg.out)
    if result.failed:
        print(f"run failed: {report['error']} (partial report in {cfg.out})", file=sys.stderr)
        return EXIT_FAILED
    opt = report["optimization"]
    dec = report["decomposition"]
    print(
        f"k={cfg.k} lambda_k={opt['lambda_k']:.6f} ({opt['lambda_k_over_pi']:.4f} pi) "
        f"K={dec['K']} A_r={dec['regular_mass']:.4f} -> {cfg.out}/report.json"
    )
    return EXIT_OK


def cmd_verify(args) -> int:
    from .verification import SUITES, run_suite

    names = list(SUITES) if args.suite == ["all"] else args.suite
    unknown = [n for n in names if n not in SUITES]
    if unknown:
        print(f"unknown suite(s): {', '.join(unknown)}; choose from {', '.join(SUITES)}", file=sys.stderr)
        return EXIT_USAGE
    with threadpool_limits(limits=args.threads):
        if len(names) > 1 and args.threads > 1:
            with ThreadPoolExecutor(max_workers=min(args.threads, len(names))) as pool:
                results = list(pool.map(run_suite, names))
        else:
            results = [run_suite(n) for n in names]
    all_ok = True
    width = max(len(c.name) for checks in results for c in checks)
    for name, checks in zip(names, results):
        print(f"[{name}]")
        for c in checks:
            all_ok &= bool(c.passed)
            flag = "PASS" if c.passed else "FAIL"
            print(f"  {flag}  {c.name:<{width}}  {c.value}  (target {c.target})")
    return EXIT_OK if all_ok else EXIT_FAILED


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(name)s: %(message)s")
    if args.command == "run":
        return cmd_run(args)
    return cmd_verify(args)


if __name__ == "__main__":
    sys.exit(main())
