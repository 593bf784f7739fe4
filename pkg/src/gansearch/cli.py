"""``gansearch search | train | plot``."""

from __future__ import annotations

import argparse
import csv
import datetime as dt
import json
import logging
import os
import sys
from pathlib import Path

from . import __version__
from .config import ConfigError, dump_toml, load_config
from .genome import GenomeError
from .pipeline import SearchContext, SearchError, full_train, resolve_genome, run_search
from .plotting import LogFormatError, render

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 2, 3

log = logging.getLogger("gansearch")


def _now() -> str:
    return dt.datetime.now(dt.timezone.utc).isoformat(timespec="seconds")


def parse_overrides(extra: list[str]) -> dict:
    """Turn leftover ``--key=value`` arguments into config overrides."""
    out = {}
    for item in extra:
        if not item.startswith("--") or "=" not in item:
            raise ConfigError(f"unrecognised argument {item!r}")
        key, value = item[2:].split("=", 1)
        out[key.replace("-", "_")] = value
    return out


def _search_overrides(args) -> dict:
    o = {}
    if args.mode:
        o["mode"] = args.mode
    if args.no_weight_resetting:
        o["weight_resetting"] = False
    if args.stage_order:
        o["stage_order"] = args.stage_order.replace("-", "_")
    for key in ("cycles", "seed", "workers"):
        if getattr(args, key) is not None:
            o[key] = getattr(args, key)
    if args.objectives:
        o["objectives"] = args.objectives
    return o


def default_run_id(cfg) -> str:
    wr = "wr" if cfg.weight_resetting else "nowr"
    return f"{cfg.mode}-{wr}-seed{cfg.seed}"


def default_label(cfg) -> str:
    if cfg.mode == "coupled":
        return "coupled"
    return f"decoupled, WR {'on' if cfg.weight_resetting else 'off'}"


def cmd_search(args, extra) -> int:
    overrides = parse_overrides(extra)
    overrides.update(_search_overrides(args))
    cfg = load_config(args.config, overrides)
    run_id = args.run_id or default_run_id(cfg)
    run_dir = Path(args.out) / run_id
    if run_dir.exists() and any(run_dir.glob("*.jsonl")):
        raise SearchError(f"{run_dir} already holds logs; pick another --run-id")
    run_dir.mkdir(parents=True, exist_ok=True)
    streams = ["coupled"] if cfg.mode == "coupled" else ["stage1", "stage2"]
    manifest = {
        "run_id": run_id,
        "label": args.label or default_label(cfg),
        "version": __version__,
        "seed": cfg.seed,
        "config": cfg.to_dict(),
        "start": _now(),
        "outputs": {
            "config": "config.toml",
            "logs": [f"{s}.jsonl" for s in streams],
            "genomes": "genomes/",
            "checkpoints": "checkpoints/",
            "plots": "plots/",
            "status": "status.json",
        },
    }
    (run_dir / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    (run_dir / "config.toml").write_text(dump_toml(cfg))
    outcome = run_search(cfg, run_dir, do_full_train=not args.no_full_train)
    status = {"end": _now(), "g_hash": outcome.g_genome.hash, "d_hash": outcome.d_genome.hash}
    if outcome.report is not None:
        status["final"] = outcome.report.to_dict()
    (run_dir / "status.json").write_text(json.dumps(status, indent=2, sort_keys=True) + "\n")
    logs = [run_dir / f"{s}.jsonl" for s in streams if (run_dir / f"{s}.jsonl").exists()]
    if logs:
        render(logs, run_dir / "plots" / "curves.svg")
    print(run_dir)
    return EXIT_OK


def cmd_train(args, extra) -> int:
    cfg = load_config(args.config, parse_overrides(extra))
    ctx = SearchContext.build(cfg)
    g = resolve_genome(args.g, ctx.g_space)
    d = resolve_genome(args.d, ctx.d_space)
    report = full_train(ctx, g, d, epochs=args.epochs, n_samples=args.n)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    metrics = {k: v for k, v in report.to_dict().items()}
    (out / "metrics.json").write_text(json.dumps(metrics, indent=2, sort_keys=True) + "\n")
    with open(out / "samples.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["x", "y"])
        w.writerows([repr(float(a)), repr(float(b))] for a, b in report.samples)
    print(json.dumps(metrics, sort_keys=True))
    return EXIT_OK


def cmd_plot(args, extra) -> int:
    if extra:
        raise ConfigError(f"unrecognised arguments {extra}")
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    render(args.logs, out)
    print(out)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="gansearch", description="Two-stage evolutionary GAN architecture search on 2-D mixtures.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="cmd", required=True)

    s = sub.add_parser("search", help="run a search and write a run directory")
    s.add_argument("--config", help="TOML config or a manifest.json to rerun")
    s.add_argument("--mode", choices=["decoupled", "coupled"])
    s.add_argument("--no-weight-resetting", action="store_true")
    s.add_argument("--stage-order", choices=["g-first", "d-first"])
    s.add_argument("--cycles", type=int)
    s.add_argument("--seed", type=int)
    s.add_argument("--objectives", help="comma list from fid,is,size")
    s.add_argument("--workers", type=int, default=os.cpu_count() or 1)
    s.add_argument("--out", default="out")
    s.add_argument("--run-id")
    s.add_argument("--label", help="legend label stored in the manifest")
    s.add_argument("--no-full-train", action="store_true")
    s.set_defaults(fn=cmd_search)

    t = sub.add_parser("train", help="fully train a fixed G/D genome pair")
    t.add_argument("--g", default="default", help="generator genome JSON, or default")
    t.add_argument("--d", default="default", help="discriminator genome JSON, default or simple")
    t.add_argument("--config")
    t.add_argument("--epochs", type=int)
    t.add_argument("--n", type=int, help="number of samples to draw and dump")
    t.add_argument("--out", default="out/train")
    t.set_defaults(fn=cmd_train)

    pl = sub.add_parser("plot", help="overlay best-per-round curves from JSONL logs")
    pl.add_argument("logs", nargs="+")
    pl.add_argument("--out", default="curves.svg")
    pl.set_defaults(fn=cmd_plot)
    return p


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args, extra = parser.parse_known_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.fn(args, extra)
    except (ConfigError, GenomeError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except LogFormatError as exc:
        print(f"malformed log:\n{exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except (SearchError, OSError, ValueError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
