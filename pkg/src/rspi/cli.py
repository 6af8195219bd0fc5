"""``rspi <experiment> [--config PATH] [--seed N] [--out PATH] [--workers W]``.

Exit codes: 0 on success, 1 on a config error, 2 when the validation gate
fails.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path
from typing import Optional, Sequence

from .experiments import (
    EXPERIMENTS,
    ConfigError,
    load_config,
    run_fig4,
    run_fig_curves,
    run_leqg_sweep,
    run_validate_mc,
)


def _summary_path(out: Path) -> Path:
    return out.with_name(out.stem + "_summary" + (out.suffix or ".csv"))


def _write(text: str, out: Optional[Path]) -> None:
    if out is None:
        sys.stdout.write(text)
    else:
        out.parent.mkdir(parents=True, exist_ok=True)
        out.write_text(text, encoding="utf-8", newline="")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="rspi", description="Risk-sensitive path integral control experiments.")
    ap.add_argument("experiment", choices=EXPERIMENTS)
    ap.add_argument("--config", type=Path, help="JSON config; omitted keys take their defaults")
    ap.add_argument("--seed", type=int, help="master seed (overrides the config)")
    ap.add_argument("--out", type=Path, help="output CSV (overrides the config; default stdout)")
    ap.add_argument("--workers", type=int, help="simulation threads (overrides the config)")
    return ap


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        raw = {}
        if args.config is not None:
            raw = json.loads(args.config.read_text(encoding="utf-8"))
            if not isinstance(raw, dict):
                raise ConfigError("config must be a JSON object")
        if args.workers is not None:
            raw["workers"] = args.workers
        cfg = load_config(args.experiment, raw, args.seed)
    except (OSError, json.JSONDecodeError, ConfigError) as exc:
        print(f"rspi: config error: {exc}", file=sys.stderr)
        return 1

    out = args.out
    if out is None and cfg.params.get("output"):
        out = Path(cfg.params["output"])

    if args.experiment in ("fig1", "fig2", "fig3"):
        _write(run_fig_curves(cfg), out)
    elif args.experiment == "fig4":
        runs, summary = run_fig4(cfg)
        _write(runs, out)
        if out is None:
            _write("\n" + summary, None)
        else:
            _write(summary, _summary_path(out))
    elif args.experiment == "leqg-sweep":
        _write(run_leqg_sweep(cfg), out)
    else:
        report, ok = run_validate_mc(cfg)
        _write(report, out)
        print(f"validate-mc: {'PASS' if ok else 'FAIL'}", file=sys.stderr)
        if not ok:
            return 2
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
