"""Command-line front end: ``lawlab fit|matrix|plot|checklist|flops``.

Failures print a machine-readable JSON error object to stderr and exit
nonzero; config problems carry the dotted section path of the offending
entry. The LAWLAB_THREADS environment variable caps parallelism.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

from .checklist import write_checklist
from .config import ExperimentConfig, MatrixConfig
from .counting import CountingPolicy, count_params, flops_per_token, load_arch_table, six_nd, training_flops
from .errors import ConfigError, LawLabError, UnknownArch
from .report import load_report, run_experiment, run_matrix, save_report
from .svgplot import AXES, write_allocation_chart


def _threads() -> int:
    try:
        return max(1, int(os.environ.get("LAWLAB_THREADS", "1")))
    except ValueError:
        return 1


def _error_object(exc: Exception) -> dict:
    return {
        "error": {
            "type": type(exc).__name__,
            "message": str(exc),
            "section": getattr(exc, "section", None),
        }
    }


def cmd_fit(args) -> int:
    config = ExperimentConfig.load(args.config)
    report = run_experiment(config, data_path=args.data, threads=_threads())
    save_report(report, args.out)
    best = report["fit"]["best"]
    print(
        f"wrote {args.out}: objective {best['objective']:.6g} "
        f"({'converged' if best['converged'] else 'not converged'}, "
        f"{report['fit']['n_starts']} starts)"
    )
    return 0


def cmd_matrix(args) -> int:
    matrix = MatrixConfig.load(args.config)
    summary = run_matrix(matrix, args.out, data_path=args.data, threads=_threads())
    n_ok = len(summary["variants"])
    n_fail = len(summary["failures"])
    print(f"wrote {args.out}: {n_ok} variants, {n_fail} failures")
    for failure in summary["failures"]:
        print(f"  FAILED {failure['variant']}: {failure['error']}", file=sys.stderr)
    return 0


def cmd_plot(args) -> int:
    reports = [load_report(p) for p in args.reports]
    labels = [Path(p).stem for p in args.reports]
    write_allocation_chart(
        reports, args.out, axis=args.axes, c_lo=args.c_lo, c_hi=args.c_hi, labels=labels
    )
    print(f"wrote {args.out}")
    return 0


def cmd_checklist(args) -> int:
    config = ExperimentConfig.load(args.config)
    report = load_report(args.report)
    write_checklist(config, report, args.out)
    print(f"wrote {args.out}")
    return 0


def cmd_flops(args) -> int:
    with open(args.arch_table, "r", encoding="utf-8") as fh:
        table = load_arch_table(fh)
    if args.arch_id not in table:
        raise UnknownArch(f"arch_id {args.arch_id!r} not in {args.arch_table}")
    arch = table[args.arch_id]
    d = args.tokens

    n_with = count_params(arch, True)
    n_without = count_params(arch, False)
    fwd_with = flops_per_token(arch, True)
    fwd_without = flops_per_token(arch, False)
    detailed_with = training_flops(arch, d, CountingPolicy(True, True, "detailed"))
    detailed_without = training_flops(arch, d, CountingPolicy(True, False, "detailed"))
    six_total = six_nd(n_with, d)
    six_nonembed = six_nd(n_without, d)

    out = {
        "arch_id": args.arch_id,
        "tokens": d,
        "n_total": n_with,
        "n_nonembed": n_without,
        "forward_flops_per_token_with_embeddings": fwd_with,
        "forward_flops_per_token_nonembed": fwd_without,
        "c_detailed_with_embeddings": detailed_with,
        "c_detailed_nonembed": detailed_without,
        "c_six_nd_total": six_total,
        "c_six_nd_nonembed": six_nonembed,
        "ratio_detailed_to_six_nd": detailed_with / six_total,
    }
    if args.json:
        print(json.dumps(out, sort_keys=True, indent=2))
    else:
        print(f"arch {args.arch_id}: {arch}")
        print(f"N (with embeddings):      {n_with}")
        print(f"N (non-embedding):        {n_without}")
        print(f"forward FLOPs/token (with embeddings): {fwd_with:.6e}")
        print(f"forward FLOPs/token (non-embedding):   {fwd_without:.6e}")
        print(f"C detailed, embeddings in C, D={d}: {detailed_with:.6e}")
        print(f"C detailed, embeddings out of C:    {detailed_without:.6e}")
        print(f"C = 6*N*D (N with embeddings):      {six_total}")
        print(f"C = 6*N*D (N non-embedding):        {six_nonembed}")
        print(f"cross-check ratio detailed/6ND:     {detailed_with / six_total:.6f}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="lawlab",
        description="Fit, compare and report scaling laws from training-run records.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_fit = sub.add_parser("fit", help="run one experiment config to a JSON report")
    p_fit.add_argument("--config", required=True, help="experiment config (YAML)")
    p_fit.add_argument("--data", default=None, help="override data.path")
    p_fit.add_argument("--out", required=True, help="output report path (JSON)")
    p_fit.set_defaults(fn=cmd_fit)

    p_matrix = sub.add_parser("matrix", help="run a base config plus named variant overrides")
    p_matrix.add_argument("--config", required=True, help="matrix config (YAML)")
    p_matrix.add_argument("--data", default=None, help="override data.path for all variants")
    p_matrix.add_argument("--out", required=True, help="output directory")
    p_matrix.set_defaults(fn=cmd_matrix)

    p_plot = sub.add_parser("plot", help="render allocation curves from reports to SVG")
    p_plot.add_argument("reports", nargs="+", help="report JSON paths")
    p_plot.add_argument("--out", required=True, help="output SVG path")
    p_plot.add_argument("--axes", choices=AXES, default="c_vs_n")
    p_plot.add_argument("--c-lo", type=float, default=None, help="compute-axis lower bound")
    p_plot.add_argument("--c-hi", type=float, default=None, help="compute-axis upper bound")
    p_plot.set_defaults(fn=cmd_plot)

    p_check = sub.add_parser("checklist", help="emit a filled reproducibility checklist")
    p_check.add_argument("--config", required=True, help="experiment config (YAML)")
    p_check.add_argument("--report", required=True, help="report produced from that config")
    p_check.add_argument("--out", required=True, help="output markdown path")
    p_check.set_defaults(fn=cmd_checklist)

    p_flops = sub.add_parser("flops", help="print parameter/FLOP counts for one architecture")
    p_flops.add_argument("--arch-table", required=True, help="JSON arch table path")
    p_flops.add_argument("--arch-id", required=True)
    p_flops.add_argument("--tokens", type=int, required=True, help="token budget D")
    p_flops.add_argument("--json", action="store_true", help="emit JSON instead of text")
    p_flops.set_defaults(fn=cmd_flops)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except ConfigError as exc:
        print(json.dumps(_error_object(exc)), file=sys.stderr)
        return 2
    except (LawLabError, OSError, ValueError) as exc:
        print(json.dumps(_error_object(exc)), file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
