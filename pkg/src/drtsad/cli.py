"""Command line: ``drtsad run | report | validate | synth``."""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from pathlib import Path

from drtsad.dataset_io import (
    KNOWN_MANIFESTS,
    DatasetManifest,
    SyntheticSpec,
    generate_synthetic,
    validate_directory,
    write_dataset,
)
from drtsad.runner import ExperimentGridConfig, ResultStore, latest_records, run_grid, write_report


def _cmd_run(args: argparse.Namespace) -> int:
    cfg = ExperimentGridConfig.read(args.config).with_env_seed()
    if args.out:
        cfg = dataclasses.replace(cfg, output_dir=args.out)
    records = run_grid(cfg, jobs=args.jobs, resume=args.resume or cfg.resume)
    failed = [r for r in records if r.status == "failed"]
    done = [r for r in records if r.status == "done"]
    skipped = [r for r in records if r.status == "skipped"]
    print(f"{len(done)} done, {len(skipped)} skipped, {len(failed)} failed")
    for r in failed:
        print(f"FAILED {r.dataset}/{r.model}/{r.reducer}/d{r.dim}/s{r.seed}: {r.reason}", file=sys.stderr)
    if done:
        out = write_report(records, Path(cfg.output_dir) / "report", cfg.output_dir)
        print(f"report written to {out}")
    return 1 if failed else 0


def _cmd_report(args: argparse.Namespace) -> int:
    store = Path(args.store)
    records = latest_records(ResultStore(store).read())
    out = write_report(records, args.out, store.parent)
    print(f"report written to {out}")
    return 0


def _cmd_validate(args: argparse.Namespace) -> int:
    directory = Path(args.dataset)
    manifest = None
    if args.manifest:
        if args.manifest in KNOWN_MANIFESTS:
            manifest = KNOWN_MANIFESTS[args.manifest]
        else:
            manifest = DatasetManifest.read(args.manifest)
    elif not (directory / "manifest.json").exists() and directory.name in KNOWN_MANIFESTS:
        manifest = KNOWN_MANIFESTS[directory.name]
    report = validate_directory(directory, manifest)
    for line in report.lines():
        print(line)
    return 0 if report.passed else 1


def _cmd_synth(args: argparse.Namespace) -> int:
    spec = SyntheticSpec()
    if args.spec:
        with open(args.spec) as fh:
            spec = SyntheticSpec.from_dict(json.load(fh))
    ds = generate_synthetic(spec)
    write_dataset(ds, args.out)
    print(f"wrote {ds.train.shape[0]} train / {ds.test.shape[0]} test rows x {ds.n_dims} dims to {args.out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="drtsad", description="Dimensionality reduction for time-series anomaly detection.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run an experiment grid")
    run.add_argument("--config", required=True, help="grid JSON")
    run.add_argument("--jobs", type=int, default=1, help="parallel worker processes")
    run.add_argument("--resume", action="store_true", help="keep finished cells from an existing store")
    run.add_argument("--out", help="override the config's output_dir")
    run.set_defaults(func=_cmd_run)

    report = sub.add_parser("report", help="rebuild tables and plots from a result store")
    report.add_argument("--store", required=True, help="results.jsonl")
    report.add_argument("--out", required=True, help="report directory")
    report.set_defaults(func=_cmd_report)

    validate = sub.add_parser("validate", help="check a dataset directory against its manifest")
    validate.add_argument("--dataset", required=True, help="directory with train.csv, test.csv, labels.csv")
    validate.add_argument("--manifest", help="known name (MSL, SMAP, SWaT) or manifest JSON path")
    validate.set_defaults(func=_cmd_validate)

    synth = sub.add_parser("synth", help="write a seeded synthetic dataset")
    synth.add_argument("--spec", help="SyntheticSpec JSON (defaults if omitted)")
    synth.add_argument("--out", required=True, help="output directory")
    synth.set_defaults(func=_cmd_synth)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
