#!/usr/bin/env python3
"""
netpgd.py — CLI entrypoint for the reconstruction experiments.

Usage:
    python netpgd.py cs  --synthetic --ratios 0.1,0.2 --seeds 0,1,2
    python netpgd.py cpr --image digit.pgm --solver net-pgd,net-gd --workers 4
    python netpgd.py project --synthetic --outer-iters 20
    python netpgd.py rec-check --n-grid 20,50,100,200,400 --trials 200
    python netpgd.py cs --config sweep.cfg --out-dir results/cs
"""
from __future__ import annotations

import argparse
import logging
import sys

from config import CPR_RATIOS, CS_RATIOS, DEFAULT_LOG_LEVEL
from errors import NetPGDError
from harness import build_config, load_config_file, rec_check_cmd, run_experiment

logger = logging.getLogger("netpgd")


def _list(kind):
    def parse(text: str) -> list:
        try:
            return [kind(item) for item in text.split(",") if item.strip()]
        except ValueError as e:
            raise argparse.ArgumentTypeError(f"bad list {text!r}: {e}") from e
    return parse


# ── Output ───────────────────────────────────────────────────────────────────

def print_summary(task: str, summary: list[dict], out_dir):
    print(f"\n{'═'*60}")
    print(f"  {task.upper()} — results in {out_dir}")
    print(f"{'═'*60}")
    print(f"  {'solver':<10}{'ratio':>8}{'n':>7}{'ok':>8}{'nMSE mean':>14}{'± std':>12}")
    for entry in summary:
        mean = "-" if entry["nmse_mean"] is None else f"{entry['nmse_mean']:.4g}"
        std = "-" if entry["nmse_std"] is None else f"{entry['nmse_std']:.2g}"
        ok = f"{entry['ok']}/{entry['runs']}"
        print(f"  {entry['solver']:<10}{entry['ratio']:>8g}{entry['n']:>7}{ok:>8}{mean:>14}{std:>12}")
        if entry["delta_i_mean"] is not None:
            print(f"  {'':<10}δ_i mean over converged runs: {entry['delta_i_mean']:.3f}")
    print(f"{'═'*60}\n")


def print_rec(reports, out_dir):
    print(f"\n{'═'*60}")
    print(f"  REC CHECK — results in {out_dir}")
    print(f"{'═'*60}")
    print(f"  {'n':>6}{'pass rate':>12}{'min ‖Ah‖²/‖h‖²':>18}{'max':>10}")
    for r in reports:
        print(f"  {r.n:>6}{r.pass_rate:>12.3f}{r.min_ratio:>18.3f}{r.max_ratio:>10.3f}")
    print(f"{'═'*60}\n")


# ── CLI ──────────────────────────────────────────────────────────────────────

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        description="Compressive sensing and phase retrieval with an untrained decoder prior."
    )
    parser.add_argument("--log-level", default=DEFAULT_LOG_LEVEL, help=f"(default: {DEFAULT_LOG_LEVEL})")
    sub = parser.add_subparsers(dest="task", required=True)

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="key=value experiment file; flags override its values")
    common.add_argument("--seeds", type=_list(int), help="comma-separated seeds (default: 0)")
    common.add_argument("--spec", help="decoder preset (mnist, rec, celeba-gray) or spec file")
    common.add_argument("--latent-seed", type=int, help="seed of the fixed latent tensor")
    common.add_argument("--out-dir", help="output directory (default: $NETPGD_OUT_DIR or results)")

    solve = argparse.ArgumentParser(add_help=False)
    solve.add_argument("--image", help="8-bit binary PGM ground truth")
    solve.add_argument("--synthetic", action="store_true", default=None,
                       help="use the bundled 28×28 digit as ground truth")
    solve.add_argument("--eta", type=float, help="outer step size (default: 1.5 / ‖A‖²)")
    solve.add_argument("--outer-iters", type=int, help="outer iterations T (default: 100)")
    solve.add_argument("--inner-iters", type=int, help="projection steps per outer step (default: 200)")
    solve.add_argument("--inner-lr", type=float, help="projection learning rate (default: 0.01)")
    solve.add_argument("--tol", type=float, help="relative residual stopping tolerance")
    solve.add_argument("--workers", type=int, help="parallel worker processes")
    solve.add_argument("--no-timing", action="store_true",
                       help="write 0 for wall times so reruns are byte-identical")
    solve.add_argument("--no-images", action="store_true", help="skip writing reconstructions")

    for task, ratios in (("cs", CS_RATIOS), ("cpr", CPR_RATIOS)):
        p = sub.add_parser(task, parents=[common, solve], help=f"{task} recovery sweep")
        p.add_argument("--ratios", type=_list(float),
                       help=f"comma-separated n/d ratios (default: {','.join(map(str, ratios))})")
        p.add_argument("--solver", dest="solvers", type=_list(str),
                       help="net-pgd, net-gd" + (", ista" if task == "cs" else "") + " (default: net-pgd)")
        if task == "cs":
            p.add_argument("--lasso-alpha", type=float, help="ISTA alpha; λ = n·alpha")
            p.add_argument("--ista-iters", type=int, help="ISTA iterations (default: 500)")

    sub.add_parser("project", parents=[common, solve], help="fit the decoder to the image directly")

    rec = sub.add_parser("rec-check", parents=[common], help="empirical Set-REC pass rates")
    rec.add_argument("--alpha", type=float, help="REC tolerance in (0, 1) (default: 0.5)")
    rec.add_argument("--trials", type=int, help="random range vectors per n (default: 200)")
    rec.add_argument("--n-grid", type=_list(int), help="measurement counts (default: 20,50,100,200,400)")
    rec.add_argument("--mode", dest="rec_mode", choices=("range", "difference"),
                     help="test G(w) or G(w₁) − G(w₂) (default: difference)")
    rec.add_argument("--orthonormal", action="store_true", default=None,
                     help="use an exact isometry when n = d")
    return parser


def main(argv: list[str] | None = None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=getattr(logging, str(args.log_level).upper(), logging.INFO),
        format="%(asctime)s  %(levelname)-8s  %(name)s  %(message)s",
    )

    overrides = {k: v for k, v in vars(args).items() if k not in ("config", "log_level", "no_timing", "no_images")}
    if getattr(args, "no_timing", False):
        overrides["record_wall_time"] = False
    if getattr(args, "no_images", False):
        overrides["write_images"] = False

    try:
        file_values = load_config_file(args.config) if args.config else {}
        if args.task in ("cs", "cpr") and args.ratios is None and "ratios" not in file_values:
            overrides["ratios"] = list(CS_RATIOS if args.task == "cs" else CPR_RATIOS)
        cfg = build_config(file_values, overrides)

        if cfg.task == "rec-check":
            print_rec(rec_check_cmd(cfg), cfg.out_dir)
            return

        rows, summary = run_experiment(cfg)
    except NetPGDError as e:
        logger.error(f"[ ❌ main ] {e}")
        sys.exit(2)

    print_summary(cfg.task, summary, cfg.out_dir)
    failed = [r for r in rows if r.status != "ok"]
    if failed:
        print(f"  ⚠️  {len(failed)}/{len(rows)} runs failed (see results.csv)")
    if len(failed) == len(rows):
        sys.exit(1)


if __name__ == "__main__":
    main()
