"""Command-line entry point.

Exit codes: 0 success, 1 validation error, 2 I/O error, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .campaign import (
    CampaignConfig,
    CampaignPools,
    analyze_report,
    defense_sweep,
    inject,
    optimize_report,
    run_campaign,
    simulate_report,
    write_csv,
    write_jsonl,
)
from .errors import DomainError, QuadratureError
from .geometry import LayoutKind, PoisonGeometry
from .optimizer import RatioGrid, optimal_geometry
from .simulator import CropPolicy

log = logging.getLogger("cropoison")

EXIT_OK, EXIT_VALIDATION, EXIT_IO, EXIT_NUMERIC = 0, 1, 2, 3


def _load_config(path) -> dict:
    if path is None:
        return {}
    with open(path) as fh:
        return json.load(fh)


def _pick(args, cfg: dict, name: str, default=None):
    v = getattr(args, name, None)
    if v is not None:
        return v
    return cfg.get(name, default)


def _geometry(args, cfg: dict) -> PoisonGeometry:
    raw = args.geometry if args.geometry is not None else cfg.get("geometry")
    if raw is None:
        return optimal_geometry(LayoutKind.LEFT_RIGHT, 100.0, 100.0, 40.0, 2.0)
    if isinstance(raw, str):
        p = Path(raw)
        raw = json.loads(p.read_text()) if p.is_file() else json.loads(raw)
    return PoisonGeometry.from_dict(raw)


def _emit(obj) -> None:
    json.dump(obj, sys.stdout, indent=2, sort_keys=True)
    sys.stdout.write("\n")


def _out_dir(args, cfg) -> Path | None:
    d = _pick(args, cfg, "out_dir")
    if d is None:
        return None
    d = Path(d)
    d.mkdir(parents=True, exist_ok=True)
    return d


def cmd_analyze(args, cfg) -> int:
    rep = analyze_report(_geometry(args, cfg), int(_pick(args, cfg, "points", 50)))
    out = _out_dir(args, cfg)
    if out:
        write_csv(out / "profile.csv", rep["profile"])
        (out / "analyze.json").write_text(json.dumps(rep, indent=2, sort_keys=True) + "\n")
    _emit({k: v for k, v in rep.items() if k != "profile"})
    return EXIT_OK


def cmd_optimize(args, cfg) -> int:
    grid = RatioGrid(
        float(_pick(args, cfg, "lo", 1.0)),
        float(_pick(args, cfg, "hi", 4.0)),
        float(_pick(args, cfg, "step", 0.05)),
    )
    rep = optimize_report(
        float(_pick(args, cfg, "o_w", 100.0)),
        float(_pick(args, cfg, "o_h", 100.0)),
        float(_pick(args, cfg, "l", 40.0)),
        _pick(args, cfg, "layout") or ["left-right"],
        grid,
        int(_pick(args, cfg, "jobs", 1)),
    )
    out = _out_dir(args, cfg)
    if out:
        write_csv(out / "trace.csv", rep["trace"])
        write_jsonl(out / "optimize.jsonl", rep["results"])
    _emit([{k: r[k] for k in ("layout", "ratio_star", "p_star", "unimodal", "geometry")} for r in rep["results"]])
    return EXIT_OK


def _policy(args, cfg) -> CropPolicy:
    kind = _pick(args, cfg, "policy", "random")
    if kind == "localized":
        return CropPolicy.localized(float(_pick(args, cfg, "delta", 0.2)))
    if kind == "scaled":
        return CropPolicy.scaled(float(_pick(args, cfg, "s_min", 0.08)), float(_pick(args, cfg, "s_max", 1.0)))
    return CropPolicy.random()


def cmd_simulate(args, cfg) -> int:
    rep = simulate_report(
        _geometry(args, cfg),
        [_policy(args, cfg)],
        int(_pick(args, cfg, "n", 1_000_000)),
        int(_pick(args, cfg, "seed", 0)),
        int(_pick(args, cfg, "jobs", 1)),
    )
    out = _out_dir(args, cfg)
    if out:
        write_jsonl(out / "simulate.jsonl", rep["records"])
    _emit(rep)
    return EXIT_OK


def cmd_defense_sweep(args, cfg) -> int:
    deltas = _pick(args, cfg, "deltas", [0.1, 0.2, 0.3, 0.5])
    rep = defense_sweep(
        _geometry(args, cfg),
        [float(d) for d in deltas],
        int(_pick(args, cfg, "n", 1_000_000)),
        int(_pick(args, cfg, "seed", 0)),
        int(_pick(args, cfg, "jobs", 1)),
    )
    out = _out_dir(args, cfg)
    if out:
        write_csv(out / "defense_sweep.csv", rep["rows"])
        write_jsonl(out / "defense_sweep.jsonl", [rep])
    _emit(rep)
    return EXIT_OK


def cmd_craft(args, cfg) -> int:
    if args.config is None:
        raise DomainError("craft needs --config")
    config = CampaignConfig.from_dict(cfg, Path(args.config).parent)
    if args.seed is not None:
        config.master_seed = args.seed
    out = _out_dir(args, cfg)
    if out is None:
        raise DomainError("craft needs --out-dir")
    manifest = run_campaign(config, CampaignPools.load(config), out, jobs=int(_pick(args, cfg, "jobs", 1)))
    _emit({"manifest": str(out / "manifest.json"), "counts": manifest.counts, "target_counts": manifest.target_counts})
    return EXIT_OK


def cmd_inject(args, cfg) -> int:
    poisons = _pick(args, cfg, "poisons")
    dataset = _pick(args, cfg, "dataset")
    if poisons is None or dataset is None:
        raise DomainError("inject needs --poisons and --dataset")
    rep = inject(poisons, dataset, _pick(args, cfg, "dataset_layout", "flat"))
    _emit({k: v for k, v in rep.to_dict().items() if k != "files"})
    return EXIT_OK


def _geometry_args(p: argparse.ArgumentParser) -> None:
    p.add_argument(
        "--geometry",
        help="geometry as a JSON object or a path to one "
        "(default: optimal left-right layout, 100px object, 40px trigger, ratio 2)",
    )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cropoison", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, fn, help_):
        p = sub.add_parser(name, help=help_)
        p.add_argument("--config", help="JSON config; flags override its keys")
        p.add_argument("--seed", type=int)
        p.add_argument("--out-dir", dest="out_dir")
        p.add_argument("--jobs", type=int)
        p.set_defaults(func=fn)
        return p

    p = add("analyze", cmd_analyze, "probability profile and total for one geometry")
    _geometry_args(p)
    p.add_argument("--points", type=int, help="crop sides in the profile table")

    p = add("optimize", cmd_optimize, "search the background ratio under optimal placement")
    p.add_argument("--o-w", dest="o_w", type=float)
    p.add_argument("--o-h", dest="o_h", type=float)
    p.add_argument("--l", type=float)
    p.add_argument("--layout", action="append", choices=[k.value for k in LayoutKind])
    p.add_argument("--lo", type=float)
    p.add_argument("--hi", type=float)
    p.add_argument("--step", type=float)

    p = add("simulate", cmd_simulate, "Monte-Carlo estimate of the pair probability")
    _geometry_args(p)
    p.add_argument("--policy", choices=["random", "localized", "scaled"])
    p.add_argument("--delta", type=float)
    p.add_argument("--s-min", dest="s_min", type=float)
    p.add_argument("--s-max", dest="s_max", type=float)
    p.add_argument("--n", type=int)

    p = add("craft", cmd_craft, "craft a poison campaign from a config")

    p = add("inject", cmd_inject, "copy crafted poisons into a dataset directory")
    p.add_argument("--poisons", help="directory holding manifest.json")
    p.add_argument("--dataset", help="target dataset directory")
    p.add_argument("--dataset-layout", dest="dataset_layout", choices=["flat", "class-folder"])

    p = add("defense-sweep", cmd_defense_sweep, "pair probability under localized cropping")
    _geometry_args(p)
    p.add_argument("--deltas", type=float, nargs="+")
    p.add_argument("--n", type=int)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        cfg = _load_config(args.config)
        return args.func(args, cfg)
    except QuadratureError as exc:
        log.error("numeric failure: %s", exc)
        return EXIT_NUMERIC
    except (DomainError, ValueError, KeyError) as exc:
        log.error("invalid input: %s", exc)
        return EXIT_VALIDATION
    except OSError as exc:
        log.error("I/O error: %s", exc)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
