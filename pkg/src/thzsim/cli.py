"""Command-line front end for experiment sweeps and episode export."""

import argparse
import dataclasses
import json
import sys
from pathlib import Path

from thzsim.sim_harness import (
    CONFIG_SCHEMA,
    ExperimentConfig,
    desk_preset,
    export_episodes,
    paper_preset,
    run_experiment,
    summarize,
    write_records_csv,
    write_summary,
    write_timings_csv,
)


def load_config_file(path) -> dict:
    doc = json.loads(Path(path).read_text())
    if doc.pop("schema", None) != CONFIG_SCHEMA:
        raise ValueError(f"config file must declare schema {CONFIG_SCHEMA!r}")
    known = {f.name for f in dataclasses.fields(ExperimentConfig)}
    unknown = set(doc) - known
    if unknown:
        raise ValueError(f"unknown config keys: {sorted(unknown)}")
    return doc


def build_parser():
    p = argparse.ArgumentParser(
        prog="thzsim",
        description="Multi-user THz MIMO semantic beamforming sweeps",
    )
    p.add_argument("--config", type=str, help="JSON config file (thzsim-config/v1)")
    p.add_argument("--schemes", type=str, help="comma-separated scheme list")
    p.add_argument("--users", type=str, help="comma-separated user counts")
    p.add_argument("--seeds", type=int, help="number of seeds (0..N-1)")
    p.add_argument("--steps", type=int, help="active steps per episode")
    p.add_argument("--preset", choices=["desk", "paper"], default="desk")
    p.add_argument("--out", type=str, help="output directory for CSV/JSON results")
    p.add_argument("--export-episodes", type=str, metavar="PATH",
                   help="write an episodes/v1 dataset to PATH and exit")
    return p


def config_from_args(args) -> ExperimentConfig:
    overrides = {}
    if args.config:
        overrides.update(load_config_file(args.config))
    if args.schemes:
        overrides["schemes"] = tuple(s.strip() for s in args.schemes.split(","))
    if args.users:
        overrides["users"] = tuple(int(u) for u in args.users.split(","))
    if args.seeds is not None:
        overrides["seeds"] = tuple(range(args.seeds))
    if args.steps is not None:
        overrides["steps"] = args.steps
    maker = paper_preset if args.preset == "paper" else desk_preset
    return maker(**overrides)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    cfg = config_from_args(args)
    if args.export_episodes:
        out = export_episodes(cfg, args.export_episodes)
        print(f"episodes written to {out}")
        return 0
    if not args.out:
        print("nothing to do: pass --out DIR and/or --export-episodes PATH", file=sys.stderr)
        return 2
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    def progress(scheme, k, seed, dt):
        print(f"[{scheme:>12s}] K={k} seed={seed} done in {dt:.2f}s", flush=True)

    records, timings = run_experiment(cfg, progress=progress)
    write_records_csv(records, out / "records.csv")
    write_timings_csv(timings, out / "timings.csv")
    summary = summarize(records)
    write_summary(summary, out / "summary.csv", out / "summary.json")
    print(f"wrote {len(records)} records to {out}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
