"""Experiment grid: dataset x detector x dimension tier x reducer x seed.

Each cell standardizes its dataset, optionally reduces it, trains one detector
on the train split and evaluates the test scores.  Finished cells are appended
to a JSON-lines store as they complete, so an interrupted grid can resume.
Tables are always rebuilt from the stored records, sorted by cell identity,
which makes them independent of execution order and worker count.
"""

from __future__ import annotations

import csv
import dataclasses
import io
import json
import logging
import os
import platform
import shutil
import time
from concurrent.futures import ProcessPoolExecutor, as_completed
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from drtsad.dataset_io import (
    KNOWN_MANIFESTS,
    DatasetManifest,
    SyntheticSpec,
    TimeSeriesDataset,
    generate_synthetic,
    load_dataset,
    standardize,
)
from drtsad.detectors import mutant, transformer
from drtsad.dimreduce import ReducerSpec, reduce_dataset
from drtsad.dimreduce.base import canonical_technique
from drtsad.errors import ConstraintViolation, PreconditionError
from drtsad.evaluation import EvalReport, ThresholdPolicy, evaluate

logger = logging.getLogger(__name__)

MODELS = ("mutant", "transformer")
MODEL_LABELS = {"mutant": "MUTANT", "transformer": "Anomaly-Transformer"}
REDUCER_ORDER = ("none", "pca", "random_projection", "umap", "tsne")
REDUCER_LABELS = {"none": "Original", "pca": "PCA", "random_projection": "RP", "umap": "UMAP", "tsne": "t-SNE"}
TIERS = ("original", "half", "lowest", "3", "2")
SEED_ENV = "DRTSAD_SEED"


# ---------------------------------------------------------------- config


@dataclass(frozen=True)
class DatasetSource:
    """A dataset directory (with a known or explicit manifest) or a synthetic recipe."""

    name: str
    path: str | None = None
    manifest: str | dict | None = None
    synthetic: dict | None = None

    def __post_init__(self) -> None:
        if (self.path is None) == (self.synthetic is None):
            raise PreconditionError(f"dataset {self.name!r} needs exactly one of 'path' or 'synthetic'")

    def load(self) -> TimeSeriesDataset:
        if self.synthetic is not None:
            ds = generate_synthetic(SyntheticSpec.from_dict(self.synthetic))
            return dataclasses.replace(ds, manifest=dataclasses.replace(ds.manifest, name=self.name))
        manifest = None
        if isinstance(self.manifest, str):
            manifest = KNOWN_MANIFESTS[self.manifest]
        elif isinstance(self.manifest, dict):
            manifest = DatasetManifest.from_dict(self.manifest)
        return load_dataset(self.path, manifest)

    def n_dims(self) -> int:
        if self.synthetic is not None:
            return SyntheticSpec.from_dict(self.synthetic).n_dims
        if isinstance(self.manifest, str):
            return KNOWN_MANIFESTS[self.manifest].n_dims
        if isinstance(self.manifest, dict):
            return int(self.manifest["n_dims"])
        return DatasetManifest.read(Path(self.path) / "manifest.json").n_dims


@dataclass(frozen=True)
class ExperimentGridConfig:
    datasets: tuple[DatasetSource, ...]
    reducers: tuple[dict, ...] = ({"technique": "pca"},)
    tiers: tuple[str, ...] = ("original", "half")
    # per-model tier lists; models not listed use ``tiers``
    model_tiers: dict = field(default_factory=dict)
    models: dict = field(default_factory=lambda: {"mutant": {}, "transformer": {}})
    tier_overrides: dict = field(default_factory=dict)
    policy: dict = field(default_factory=dict)
    adjust: bool = True
    seeds: tuple[int, ...] = (0,)
    standardize: str = "zscore"
    output_dir: str = "runs/grid"
    resume: bool = False

    def __post_init__(self) -> None:
        unknown = [m for m in self.models if m not in MODELS]
        if unknown:
            raise PreconditionError(f"unknown models {unknown}; expected a subset of {MODELS}")
        tiers = (*self.tiers, *(t for ts in self.model_tiers.values() for t in ts))
        bad = [t for t in tiers if t not in TIERS and not (t.isdigit() and int(t) > 0)]
        if bad:
            raise PreconditionError(f"unknown tiers {bad}; expected {TIERS} or a positive integer")
        if not self.seeds:
            raise PreconditionError("at least one seed is required")
        ThresholdPolicy(**self.policy)

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentGridConfig":
        d = dict(d)
        d["datasets"] = tuple(DatasetSource(**s) for s in d["datasets"])
        d["reducers"] = tuple({"technique": r} if isinstance(r, str) else dict(r) for r in d.get("reducers", ()))
        d["tiers"] = tuple(str(t) for t in d.get("tiers", cls.tiers))
        d["model_tiers"] = {m: tuple(str(t) for t in ts) for m, ts in d.get("model_tiers", {}).items()}
        d["seeds"] = tuple(int(s) for s in d.get("seeds", (0,)))
        d.pop("name", None)
        d.pop("description", None)
        return cls(**d)

    @classmethod
    def read(cls, path: str | Path) -> "ExperimentGridConfig":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))

    def with_env_seed(self) -> "ExperimentGridConfig":
        """Apply the ``DRTSAD_SEED`` override, if set."""
        value = os.environ.get(SEED_ENV)
        if value is None or value == "":
            return self
        return dataclasses.replace(self, seeds=(int(value),))


def tier_dim(tier: str, n_dims: int, overrides: dict | None = None) -> int:
    """Target dimension for a tier; "half" is floor(n / 2) unless overridden."""
    if overrides and tier in overrides:
        return int(overrides[tier])
    if tier == "original":
        return n_dims
    if tier == "half":
        return n_dims // 2
    if tier == "lowest":
        return mutant.MIN_DIMS
    return int(tier)


# ---------------------------------------------------------------- cells and records


@dataclass(frozen=True)
class Cell:
    dataset: str
    model: str
    reducer: str
    dim: int
    seed: int
    tier: str = "original"

    @property
    def key(self) -> tuple:
        return (self.dataset, self.model, self.reducer, self.dim, self.seed)

    @property
    def cell_id(self) -> str:
        return f"{self.dataset}__{self.model}__{self.reducer}__d{self.dim}__s{self.seed}"


@dataclass
class ExperimentRecord:
    dataset: str
    model: str
    reducer: str
    dim: int
    seed: int
    tier: str
    status: str
    reason: str = ""
    fit_time_s: float = 0.0
    train_time_s: float = 0.0
    score_time_s: float = 0.0
    report: dict | None = None
    loss_trace: str | None = None
    compute: str = "CPU"
    finished_at: str = ""

    def __post_init__(self) -> None:
        if self.status not in ("done", "failed", "skipped"):
            raise PreconditionError(f"unknown record status {self.status!r}")
        if min(self.fit_time_s, self.train_time_s, self.score_time_s) < 0:
            raise PreconditionError("recorded times must be non-negative")

    @property
    def key(self) -> tuple:
        return (self.dataset, self.model, self.reducer, self.dim, self.seed)

    @property
    def eval_report(self) -> EvalReport | None:
        return None if self.report is None else EvalReport.from_dict(self.report)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentRecord":
        return cls(**d)


def constraint_reason(model: str, reducer: str, dim: int, n_dims: int) -> str | None:
    """Why a cell cannot run, or None.  Mirrors the errors the components raise.

    Every violated constraint is listed, separated by "; ".
    """
    reasons = []
    if model == "mutant" and dim < mutant.MIN_DIMS:
        reasons.append(f"MUTANT needs no fewer than {mutant.MIN_DIMS} input dimensions, got {dim}")
    if reducer == "tsne" and dim > 3:
        reasons.append(f"t-SNE supports at most 3 output dimensions, got {dim}")
    if reducer != "none" and dim >= n_dims:
        reasons.append(f"target dimension {dim} is not below the input dimension {n_dims}")
    return "; ".join(reasons) or None


def enumerate_cells(cfg: ExperimentGridConfig) -> list[tuple[Cell, str | None]]:
    """Every cell of the grid with its skip reason (None for runnable cells).

    The original tier pairs only with reducer "none"; reduced tiers pair with
    every configured reducer.  Tiers resolving to the same dimension collapse
    into the first one.
    """
    reducers = [canonical_technique(r["technique"]) for r in cfg.reducers if r["technique"] != "none"]
    out, seen = [], set()
    for src in cfg.datasets:
        n = src.n_dims()
        overrides = cfg.tier_overrides.get(src.name, {})
        for model in cfg.models:
            for tier in cfg.model_tiers.get(model, cfg.tiers):
                dim = tier_dim(tier, n, overrides)
                for reducer in ["none"] if tier == "original" else reducers:
                    for seed in cfg.seeds:
                        cell = Cell(src.name, model, reducer, dim, seed, tier)
                        if cell.key in seen:
                            continue
                        seen.add(cell.key)
                        out.append((cell, constraint_reason(model, reducer, dim, n)))
    return out


# ---------------------------------------------------------------- execution


def _now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="microseconds")


def _compute_tag() -> str:
    return f"CPU ({platform.machine() or 'unknown'})"


def _reducer_spec(cfg: ExperimentGridConfig, technique: str, dim: int, seed: int) -> ReducerSpec:
    for r in cfg.reducers:
        if canonical_technique(r["technique"]) == technique:
            return ReducerSpec.from_dict({**r, "technique": technique, "target_dim": dim, "seed": seed})
    raise PreconditionError(f"reducer {technique!r} is not configured")


def prepare_dataset(cfg: ExperimentGridConfig, cell: Cell, ds: TimeSeriesDataset) -> tuple[TimeSeriesDataset, float]:
    """Standardize, reduce (timed) and standardize again.  Returns ``(dataset, fit_seconds)``."""
    ds, _ = standardize(ds, cfg.standardize)
    if cell.reducer == "none":
        return ds, 0.0
    spec = _reducer_spec(cfg, cell.reducer, cell.dim, cell.seed)
    start = time.perf_counter()
    ds, _ = reduce_dataset(ds, spec)
    fit = time.perf_counter() - start
    ds, _ = standardize(ds, cfg.standardize)
    return ds, fit


def train_detector(model: str, params: dict, ds: TimeSeriesDataset, seed: int):
    """Train one detector; returns ``(model, training wall seconds)``.

    Only the training call is inside the monotonic-clock interval.
    """
    if model == "mutant":
        config = mutant.MutantTrainConfig.from_dict({**params, "seed": seed})
        start = time.perf_counter()
        fitted = mutant.train_mutant(ds, config)
    else:
        config = transformer.MinimaxConfig.from_dict({**params, "seed": seed})
        start = time.perf_counter()
        fitted = transformer.train_minimax(ds, config)
    return fitted, time.perf_counter() - start


def score_detector(model: str, fitted, ds: TimeSeriesDataset) -> np.ndarray:
    if model == "mutant":
        return mutant.score_mutant(fitted, ds).scores
    return transformer.score_series(fitted, ds).scores


def write_trace(path: Path, trace: list[dict]) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        if not trace:
            return
        writer = csv.DictWriter(fh, fieldnames=list(trace[0]))
        writer.writeheader()
        for row in trace:
            writer.writerow({k: repr(v) if isinstance(v, float) else v for k, v in row.items()})


_DATA_CACHE: dict[str, TimeSeriesDataset] = {}


def _load(src: DatasetSource) -> TimeSeriesDataset:
    key = json.dumps(dataclasses.asdict(src), sort_keys=True)
    if key not in _DATA_CACHE:
        _DATA_CACHE[key] = src.load()
    return _DATA_CACHE[key]


def run_cell(cfg: ExperimentGridConfig, cell: Cell, out_dir: str | Path) -> ExperimentRecord:
    """Execute one cell.  Constraint violations become skips, other errors failures."""
    base = dict(dataset=cell.dataset, model=cell.model, reducer=cell.reducer, dim=cell.dim,
                seed=cell.seed, tier=cell.tier, compute=_compute_tag())
    src = next(s for s in cfg.datasets if s.name == cell.dataset)
    try:
        ds, fit = prepare_dataset(cfg, cell, _load(src))
        fitted, train_s = train_detector(cell.model, cfg.models[cell.model], ds, cell.seed)
        start = time.perf_counter()
        scores = score_detector(cell.model, fitted, ds)
        score_s = time.perf_counter() - start
        report = evaluate(scores, ds.labels, ThresholdPolicy(**cfg.policy), cfg.adjust)
    except ConstraintViolation as exc:
        return ExperimentRecord(**base, status="skipped", reason=str(exc), finished_at=_now())
    except Exception as exc:  # recorded; the grid keeps going
        logger.exception("cell %s failed", cell.cell_id)
        return ExperimentRecord(**base, status="failed", reason=f"{type(exc).__name__}: {exc}", finished_at=_now())
    trace_rel = f"traces/{cell.cell_id}.csv"
    write_trace(Path(out_dir) / trace_rel, fitted.loss_trace)
    return ExperimentRecord(
        **base,
        status="done",
        fit_time_s=round(fit, 3),
        train_time_s=round(train_s, 3),
        score_time_s=round(score_s, 3),
        report=report.to_dict(),
        loss_trace=trace_rel,
        finished_at=_now(),
    )


def _worker(cfg: ExperimentGridConfig, cell: Cell, out_dir: str) -> ExperimentRecord:
    import torch

    torch.set_num_threads(1)
    return run_cell(cfg, cell, out_dir)


class ResultStore:
    """Append-only JSON-lines file; one record per line, written by one process."""

    def __init__(self, path: str | Path) -> None:
        self.path = Path(path)

    def read(self) -> list[ExperimentRecord]:
        if not self.path.exists():
            return []
        with open(self.path) as fh:
            return [ExperimentRecord.from_dict(json.loads(line)) for line in fh if line.strip()]

    def append(self, record: ExperimentRecord) -> None:
        self.path.parent.mkdir(parents=True, exist_ok=True)
        with open(self.path, "a") as fh:
            fh.write(json.dumps(record.to_dict(), sort_keys=True) + "\n")
            fh.flush()
            os.fsync(fh.fileno())

    def truncate(self) -> None:
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self.path.write_text("")


def latest_records(records: list[ExperimentRecord]) -> list[ExperimentRecord]:
    """Last record per cell, sorted by cell identity."""
    latest = {}
    for r in records:
        latest[r.key] = r
    return [latest[k] for k in sorted(latest)]


def run_grid(cfg: ExperimentGridConfig, jobs: int = 1, resume: bool | None = None) -> list[ExperimentRecord]:
    """Run (or resume) the whole grid and return one record per cell, sorted by identity.

    A fresh run truncates the store; with ``resume`` the cells already marked
    done or skipped are kept and only the rest (including failures) are rerun.
    """
    resume = cfg.resume if resume is None else resume
    out_dir = Path(cfg.output_dir)
    store = ResultStore(out_dir / "results.jsonl")
    if resume:
        finished = {r.key: r for r in latest_records(store.read()) if r.status in ("done", "skipped")}
    else:
        store.truncate()
        finished = {}
    pending = []
    for cell, reason in enumerate_cells(cfg):
        if cell.key in finished:
            continue
        if reason is not None:
            record = ExperimentRecord(cell.dataset, cell.model, cell.reducer, cell.dim, cell.seed, cell.tier,
                                      status="skipped", reason=reason, compute=_compute_tag(), finished_at=_now())
            store.append(record)
            finished[cell.key] = record
            continue
        pending.append(cell)
    logger.info("%d cells to run, %d already finished", len(pending), len(finished))
    if jobs <= 1:
        for cell in pending:
            record = run_cell(cfg, cell, out_dir)
            store.append(record)
            logger.info("%s -> %s", cell.cell_id, record.status)
    else:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            futures = {pool.submit(_worker, cfg, cell, str(out_dir)): cell for cell in pending}
            for fut in as_completed(futures):
                record = fut.result()
                store.append(record)
                logger.info("%s -> %s", futures[fut].cell_id, record.status)
    return latest_records(store.read())


# ---------------------------------------------------------------- reports


def _row_sort_key(row: tuple[str, int, str]) -> tuple:
    model, dim, reducer = row
    rank = REDUCER_ORDER.index(reducer) if reducer in REDUCER_ORDER else len(REDUCER_ORDER)
    return (MODELS.index(model) if model in MODELS else len(MODELS), model, -dim, rank, reducer)


def _results_grid(records: list[ExperimentRecord]):
    """``rows``, ``datasets`` and ``{(row, dataset, seed): record}`` for non-skipped cells."""
    cells, rows, datasets, seeds = {}, set(), set(), set()
    for r in latest_records(records):
        if r.status == "skipped" or (r.status == "done" and r.report is None):
            continue
        row = (r.model, r.dim, r.reducer)
        rows.add(row)
        datasets.add(r.dataset)
        seeds.add(r.seed)
        cells[(row, r.dataset, r.seed)] = r
    return sorted(rows, key=_row_sort_key), sorted(datasets), sorted(seeds), cells


def _metrics(record: ExperimentRecord | None) -> tuple[float, float, float] | None:
    if record is None or record.status != "done":
        return None
    rep = record.report
    return (rep["precision"], rep["recall"], rep["f1"])


def results_rows(records: list[ExperimentRecord]) -> tuple[list[str], list[list]]:
    """Header and rows of the results table; one row per seed, plus a mean row when seeds > 1."""
    rows, datasets, seeds, cells = _results_grid(records)
    header = ["model", "dim", "reducer", "seed"]
    for ds in datasets:
        header += [f"{ds}_precision", f"{ds}_recall", f"{ds}_f1"]
    out = []
    for row in rows:
        per_seed = {}
        for seed in seeds:
            values = []
            present = False
            for ds in datasets:
                rec = cells.get((row, ds, seed))
                present |= rec is not None
                m = _metrics(rec)
                values += list(m) if m else [None, None, None]
            if present:
                per_seed[seed] = values
                out.append([row[0], row[1], row[2], str(seed)] + values)
        if len(per_seed) > 1:
            cols = list(zip(*per_seed.values()))
            means = [None if any(v is None for v in c) else float(np.mean(c)) for c in cols]
            out.append([row[0], row[1], row[2], "mean"] + means)
    return header, out


def emit_results_table(records: list[ExperimentRecord]) -> tuple[str, str]:
    """Markdown and CSV renderings of the precision/recall/F1 grid.

    Rows are grouped by model, then dimension (descending), then reducer.  The
    best value of each metric column is bold in the markdown; failed cells show
    as an em-width dash with a footnote giving the reason.
    """
    header, rows = results_rows(records)
    if not rows:
        raise PreconditionError("no records to tabulate")
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([("" if v is None else repr(v) if isinstance(v, float) else v) for v in row])
    csv_text = buf.getvalue()

    # markdown shows the mean row where there is one, otherwise the single seed
    keyed = {}
    for r in rows:
        if r[3] == "mean" or (r[0], r[1], r[2]) not in keyed:
            keyed[(r[0], r[1], r[2])] = r
    shown = [keyed[k] for k in sorted(keyed, key=_row_sort_key)]
    metric_cols = range(4, len(header))
    best = {}
    for c in metric_cols:
        vals = [r[c] for r in shown if r[c] is not None]
        best[c] = max(vals) if vals else None
    labels = ["Model", "Dim.", "Reducer"] + [h.replace("_", " ") for h in header[4:]]
    lines = ["| " + " | ".join(labels) + " |", "|" + "---|" * len(labels)]
    for r in shown:
        cells = [MODEL_LABELS.get(r[0], r[0]), str(r[1]), REDUCER_LABELS.get(r[2], r[2])]
        for c in metric_cols:
            v = r[c]
            if v is None:
                cells.append("—")
            else:
                text = f"{v:.4f}"
                cells.append(f"**{text}**" if v == best[c] else text)
        lines.append("| " + " | ".join(cells) + " |")
    failed = [r for r in latest_records(records) if r.status == "failed"]
    if failed:
        lines.append("")
        for r in failed:
            lines.append(f"— {r.dataset} / {MODEL_LABELS.get(r.model, r.model)} / {r.reducer} / dim {r.dim} / seed {r.seed}: failed ({r.reason})")
    policies = sorted({(r.report["policy"], r.report["oracle_informed"], r.report["point_adjust"])
                       for r in latest_records(records) if r.report})
    for policy, oracle, adjust in policies:
        lines.append("")
        lines.append(f"Threshold policy: {policy}{' (oracle-informed)' if oracle else ''}; point adjustment {'on' if adjust else 'off'}.")
    return "\n".join(lines) + "\n", csv_text


def parse_results_csv(text: str) -> dict[tuple, tuple]:
    """``{(model, dim, reducer, seed, dataset): (precision, recall, f1)}`` from a results CSV."""
    reader = csv.reader(io.StringIO(text))
    header = next(reader)
    datasets = [h[: -len("_precision")] for h in header if h.endswith("_precision")]
    out = {}
    for row in reader:
        model, dim, reducer, seed = row[0], int(row[1]), row[2], row[3]
        for i, ds in enumerate(datasets):
            vals = row[4 + 3 * i : 7 + 3 * i]
            out[(model, dim, reducer, seed, ds)] = None if vals[0] == "" else tuple(float(v) for v in vals)
    return out


def timing_summary(records: list[ExperimentRecord]) -> list[dict]:
    """Mean training time per (model, dataset, dim) over done cells and seeds.

    Reduced cells with several reducers are averaged together, as one tier.
    """
    groups: dict[tuple, list[ExperimentRecord]] = {}
    for r in latest_records(records):
        if r.status == "done":
            groups.setdefault((r.model, r.dataset, r.dim), []).append(r)
    out = []
    for (model, dataset, dim), recs in sorted(groups.items(), key=lambda kv: (kv[0][0], kv[0][1], -kv[0][2])):
        out.append({
            "model": model,
            "dataset": dataset,
            "dim": dim,
            "compute": recs[0].compute,
            "train_time_s": float(np.mean([r.train_time_s for r in recs])),
            "original": all(r.reducer == "none" for r in recs),
        })
    return out


def reduction_ratios(summary: list[dict]) -> list[dict]:
    """Speed-up of each reduced dimension against the original-dims cell.

    ``ratio = t_original / t_reduced``; ``percent = (ratio - 1) * 100``.
    """
    originals = {(s["model"], s["dataset"]): s for s in summary if s["original"]}
    out = []
    for s in summary:
        base = originals.get((s["model"], s["dataset"]))
        if s["original"] or base is None or s["train_time_s"] <= 0:
            continue
        ratio = base["train_time_s"] / s["train_time_s"]
        out.append({"model": s["model"], "dataset": s["dataset"], "dim": s["dim"],
                    "ratio": ratio, "percent": (ratio - 1.0) * 100.0})
    return out


def emit_timing_outputs(records: list[ExperimentRecord], svg_path: str | Path | None = None) -> str:
    """Markdown timing table (hours and seconds) with reduction aggregates; optional SVG bar chart."""
    summary = timing_summary(records)
    if not summary:
        raise PreconditionError("no done records to time")
    lines = ["| Model | Dataset | Dimensionality | Compute | Training time (h) | Training time (s) |",
             "|---|---|---|---|---|---|"]
    for s in summary:
        lines.append(f"| {MODEL_LABELS.get(s['model'], s['model'])} | {s['dataset']} | {s['dim']} | {s['compute']} | "
                     f"{s['train_time_s'] / 3600:.2f} | {s['train_time_s']:.3f} |")
    ratios = reduction_ratios(summary)
    if ratios:
        lines += ["", "| Model | Dataset | Reduced dim | t_original / t_reduced | Reduction (%) |", "|---|---|---|---|---|"]
        for r in ratios:
            lines.append(f"| {MODEL_LABELS.get(r['model'], r['model'])} | {r['dataset']} | {r['dim']} | "
                         f"{r['ratio']:.2f}x | {r['percent']:.1f} |")
        by_model: dict[str, list[float]] = {}
        for r in ratios:
            by_model.setdefault(r["model"], []).append(r["ratio"])
        lines.append("")
        for model, vals in by_model.items():
            mean = float(np.mean(vals))
            lines.append(f"{MODEL_LABELS.get(model, model)}: mean speed-up {mean:.2f}x "
                         f"({(mean - 1) * 100:.1f}% reduction convention) over {len(vals)} reduced cells.")
    if svg_path is not None:
        plot_timing(summary, svg_path)
    return "\n".join(lines) + "\n"


def plot_timing(summary: list[dict], path: str | Path) -> None:
    """Grouped bars: one group per (model, dataset), one bar per dimensionality."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    plt.rcParams["svg.hashsalt"] = "drtsad"
    groups: dict[tuple, list[dict]] = {}
    for s in summary:
        groups.setdefault((s["model"], s["dataset"]), []).append(s)
    fig, ax = plt.subplots(figsize=(max(4.0, 1.8 * len(groups)), 3.5))
    width = 0.8 / max(len(v) for v in groups.values())
    for gi, (key, items) in enumerate(groups.items()):
        for bi, s in enumerate(items):
            x = gi + (bi - (len(items) - 1) / 2) * width
            ax.bar(x, s["train_time_s"], width * 0.9, color=f"C{bi % 10}")
            ax.text(x, s["train_time_s"], str(s["dim"]), ha="center", va="bottom", fontsize=7)
    ax.set_xticks(range(len(groups)))
    ax.set_xticklabels([f"{MODEL_LABELS.get(m, m)}\n{d}" for m, d in groups], fontsize=8)
    ax.set_ylabel("training time (s)")
    ax.set_title("Training time by input dimensionality")
    fig.tight_layout()
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)


def write_report(records: list[ExperimentRecord], out_dir: str | Path, run_dir: str | Path | None = None) -> Path:
    """Write results/timing tables, the timing chart and per-cell loss traces."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    md, csv_text = emit_results_table(records)
    (out / "results_table.md").write_text(md)
    (out / "results_table.csv").write_text(csv_text)
    (out / "timing_table.md").write_text(emit_timing_outputs(records, out / "timing.svg"))
    if run_dir is not None:
        for r in latest_records(records):
            if r.loss_trace and (Path(run_dir) / r.loss_trace).exists():
                target = out / r.loss_trace
                target.parent.mkdir(parents=True, exist_ok=True)
                shutil.copyfile(Path(run_dir) / r.loss_trace, target)
    return out


def import_timing(model: str, dataset: str, dim: int, hours: float, compute: str = "CPU",
                  reducer: str = "none") -> ExperimentRecord:
    """A timing-only record for an externally measured cell.

    ``reducer="none"`` marks the original-dimension baseline.  Such records
    carry no evaluation and never appear in the results table.
    """
    return ExperimentRecord(dataset, model, reducer, dim, 0, "imported", status="done",
                            train_time_s=hours * 3600.0, compute=compute)
