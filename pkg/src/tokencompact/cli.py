"""Command line entry point.

Exit codes: 0 ok, 2 config error, 3 data error, 4 internal error.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from .config import PipelineConfig, load_config, resolve_output_dir
from .errors import ConfigError, DataError, TokenCompactError
from .features import save_features, synth_features
from .pipeline import parse_sweep_values, render_outputs, run_pipeline, sweep, sweep_csv, write_files_atomically
from .plots import emit_plots

log = logging.getLogger("tokencompact")


def _config(args) -> PipelineConfig:
    return load_config(args.config) if args.config else PipelineConfig()


def cmd_run(args) -> int:
    cfg = _config(args)
    report = run_pipeline(cfg)
    out = resolve_output_dir(cfg, args.out)
    written = write_files_atomically(out, render_outputs(report, cfg.formats))
    tok = report["tokens"]
    print(
        f"tokens {tok['input']} -> {tok['final']} "
        f"({100 * tok['input_ratio']:.2f}% -> {100 * tok['final_ratio']:.2f}% of {tok['base_per_branch']}); "
        f"FLOPs {report['flops']['total_g']:.1f} G ({100 * report['flops']['ratio']:.1f}% of vanilla)"
    )
    for path in written:
        log.info("wrote %s", path)
    return 0


def cmd_sweep(args) -> int:
    cfg = _config(args)
    values = parse_sweep_values(args.axis, args.values)
    rows = sweep(cfg, args.axis, values)
    out = resolve_output_dir(cfg, args.out)
    name = f"sweep_{args.axis.replace(':', '_')}.csv"
    text = sweep_csv(rows)
    write_files_atomically(out, {name: text})
    sys.stdout.write(text)
    return 0


def _grid(text: str):
    try:
        h, w = (int(x) for x in text.lower().split("x"))
    except ValueError:
        raise ConfigError(f"grid must look like 24x24, got {text!r}") from None
    return h, w


def cmd_synth(args) -> int:
    grid = _grid(args.grid)
    main, extra = synth_features(args.seed, grid, args.dim, args.rho)
    out = Path(args.out)
    for fmap, branch in ((main, "main"), (extra, "extra")):
        arr = fmap.tokens.reshape(grid[0], grid[1], fmap.dim)
        path = save_features(out / branch, arr, branch, args.dtype)
        print(path)
    return 0


def cmd_plot(args) -> int:
    out = Path(args.out) if args.out else Path(args.report).parent / "plots"
    try:
        for path in emit_plots(Path(args.report), out):
            print(path)
    except OSError as exc:
        raise DataError(f"cannot read report: {exc}") from None
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="tokencompact", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run the full pipeline and write a report")
    run.add_argument("--config", help="YAML/JSON config (defaults if omitted)")
    run.add_argument("--out", help="output directory (overrides config and environment)")
    run.set_defaults(func=cmd_run)

    sw = sub.add_parser("sweep", help="one pipeline run per value of an axis; writes CSV")
    sw.add_argument("--config")
    sw.add_argument("--axis", required=True, help="drop_rate | k_self | k_cross | omega | k_self:k_cross")
    sw.add_argument("--values", required=True, help="comma-separated, e.g. 0,0.05,0.1 or 0.5:0.4,0.8:0.6")
    sw.add_argument("--out")
    sw.set_defaults(func=cmd_sweep)

    sy = sub.add_parser("synth", help="write a synthetic main/extra feature pair")
    sy.add_argument("--seed", type=int, default=0)
    sy.add_argument("--grid", default="24x24")
    sy.add_argument("--dim", type=int, default=32)
    sy.add_argument("--rho", type=float, default=0.7)
    sy.add_argument("--dtype", choices=("f32", "f64"), default="f32")
    sy.add_argument("--out", required=True)
    sy.set_defaults(func=cmd_synth)

    pl = sub.add_parser("plot", help="render SVG charts from a report.json")
    pl.add_argument("--report", required=True)
    pl.add_argument("--out")
    pl.set_defaults(func=cmd_plot)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 2 if exc.code else 0
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.func(args)
    except TokenCompactError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except Exception as exc:  # noqa: BLE001
        print(f"internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
