"""End-to-end pipeline: train, snapshot, explain, agree, correlate.

Each stage can run on its own, reading the previous stage's exports from the
output directory; :func:`run_experiment` chains them in memory. Both routes
produce the same bytes because every float is written with 17 significant
digits and parsed back exactly.
"""

from __future__ import annotations

import hashlib
import json
import logging
import platform
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from . import __version__
from . import agreement as agr
from . import attribution as attr
from . import dataset as ds
from . import evaluation as ev
from . import model as mlp
from .io import read_csv, write_csv

log = logging.getLogger(__name__)

MANIFEST = "manifest.json"
DATASET_MANIFEST = "dataset.json"
SNAPSHOTS = "snapshots.json"
AUC_FILE = "auc.csv"
ATTRIBUTIONS = "attributions.csv"
RESULTS = "results.csv"
CORRELATIONS = "correlations.csv"
SCATTER = "scatter.csv"
BOXPLOT = "boxplot.csv"
HEATMAP_DIR = "heatmaps"
FIGURE_DIR = "figures"

HEATMAP_CHOICES = ("all", "best", "none")
TOO_FEW_EPOCHS = "too_few_epochs"


class ConfigError(ValueError):
    pass


class PipelineError(RuntimeError):
    def __init__(self, stage, message, epoch=None, instance_id=None):
        where = [f"stage={stage}"]
        if epoch is not None:
            where.append(f"epoch={epoch}")
        if instance_id is not None:
            where.append(f"instance={instance_id}")
        super().__init__(f"[{' '.join(where)}] {message}")
        self.stage, self.epoch, self.instance_id = stage, epoch, instance_id


class MissingStageOutput(PipelineError):
    pass


def _build(cls, data: dict, section: str):
    known = {f.name for f in fields(cls)}
    unknown = set(data) - known
    if unknown:
        raise ConfigError(f"{section}: unknown keys {sorted(unknown)}")
    try:
        return cls(**data)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{section}: {exc}") from exc


@dataclass
class ExperimentConfig:
    """Everything a run depends on.

    ``dataset`` is one of::

        {"kind": "synthetic", "n": 400, "K": 12, "separation": 6.0, "seed": 0}
        {"kind": "csv", "path": "xAPI-Edu-Data.csv", "recipe": "amrieh"}
        {"kind": "csv", "path": "...", "recipe": "generic", "target_column": "...",
         "positive_label": "...", "drop_columns": [], "exclude_labels": []}

    Seeds left as ``None`` (data, training, attribution) default to ``seed``.
    """

    dataset: dict
    hidden_dims: list = field(default_factory=lambda: [16, 8])
    training: dict = field(default_factory=dict)
    attribution: dict = field(default_factory=dict)
    methods: list = field(default_factory=lambda: list(attr.METHODS))
    metrics: list = field(default_factory=lambda: list(agr.METRICS))
    k_range: list | None = None
    output_dir: str = "out"
    seed: int = 0
    n_jobs: int = 1
    heatmaps: str = "all"
    figures: bool = True
    base_dir: str = field(default=".", repr=False)

    @classmethod
    def from_dict(cls, data: dict, base_dir=".") -> ExperimentConfig:
        if not isinstance(data, dict):
            raise ConfigError("config must be a JSON object")
        if "dataset" not in data:
            raise ConfigError("config needs a 'dataset' section")
        cfg = _build(cls, {**data, "base_dir": str(base_dir)}, "config")
        cfg.validate()
        return cfg

    @classmethod
    def load(cls, path) -> ExperimentConfig:
        path = Path(path)
        try:
            data = json.loads(path.read_text())
        except FileNotFoundError:
            raise ConfigError(f"config file not found: {path}") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: malformed JSON: {exc}") from None
        return cls.from_dict(data, base_dir=path.parent)

    def validate(self) -> None:
        kind = self.dataset.get("kind")
        if kind not in ("synthetic", "csv"):
            raise ConfigError(f"dataset.kind must be 'synthetic' or 'csv', got {kind!r}")
        if kind == "csv" and self.dataset.get("recipe") not in ("amrieh", "generic"):
            raise ConfigError("dataset.recipe must be 'amrieh' or 'generic'")
        try:
            attr.check_methods(self.methods)
        except attr.AttributionError as exc:
            raise ConfigError(str(exc)) from None
        bad = [m for m in self.metrics if m not in agr.METRICS]
        if bad or not self.metrics:
            raise ConfigError(f"metrics must be a non-empty subset of {list(agr.METRICS)}")
        if self.k_range is not None and (
            len(self.k_range) != 2 or not 1 <= self.k_range[0] <= self.k_range[1]
        ):
            raise ConfigError("k_range must be [lo, hi] with 1 <= lo <= hi")
        if self.heatmaps not in HEATMAP_CHOICES:
            raise ConfigError(f"heatmaps must be one of {HEATMAP_CHOICES}")
        if self.n_jobs < 1:
            raise ConfigError("n_jobs must be >= 1")
        self.training_config()
        self.attribution_config()

    def training_config(self) -> mlp.TrainingConfig:
        data = {"seed": self.seed, **{k: v for k, v in self.training.items() if v is not None}}
        cfg = _build(mlp.TrainingConfig, data, "training")
        try:
            cfg.validate()
        except mlp.ModelError as exc:
            raise ConfigError(f"training: {exc}") from None
        return cfg

    def attribution_config(self) -> attr.AttributionConfig:
        data = {"rng_seed": self.seed,
                **{k: v for k, v in self.attribution.items() if v is not None}}
        try:
            return _build(attr.AttributionConfig, data, "attribution")
        except attr.AttributionError as exc:
            raise ConfigError(f"attribution: {exc}") from None

    def ks(self, K: int) -> list[int]:
        if self.k_range is None:
            return list(range(1, K + 1))
        lo, hi = self.k_range
        if hi > K:
            raise ConfigError(f"k_range upper bound {hi} exceeds the {K} features")
        return list(range(lo, hi + 1))

    def data_path(self) -> Path:
        path = Path(self.dataset["path"])
        return path if path.is_absolute() else Path(self.base_dir) / path

    def resolved(self) -> dict:
        """The config with every default filled in, as recorded in the manifest."""
        return {
            "dataset": self.dataset,
            "hidden_dims": list(self.hidden_dims),
            "training": asdict(self.training_config()),
            "attribution": self.attribution_config().to_dict(),
            "methods": list(self.methods),
            "metrics": list(self.metrics),
            "k_range": self.k_range,
            "seed": self.seed,
            "heatmaps": self.heatmaps,
            "figures": self.figures,
        }


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    val_auc: float
    test_auc: float


@dataclass
class ExperimentReport:
    config: ExperimentConfig
    data: ds.PreparedData
    snapshots: list
    epochs: list[EpochRecord]
    attributions: dict = field(default_factory=dict)
    grids: dict = field(default_factory=dict)
    correlations: list = field(default_factory=list)
    notices: list[str] = field(default_factory=list)

    @property
    def ks(self) -> list[int]:
        return self.config.ks(self.data.dataset.K)

    def summary(self, epoch, metric, k) -> agr.AgreementSummary:
        return self.grids[epoch].summary(metric, k)


# -- stages -----------------------------------------------------------------

def load_data(cfg: ExperimentConfig) -> ds.PreparedData:
    source_cfg = dict(cfg.dataset)
    try:
        if source_cfg["kind"] == "synthetic":
            raw = ds.synthetic_blobs(
                int(source_cfg.get("n", 400)), int(source_cfg.get("K", 12)),
                float(source_cfg.get("separation", 6.0)), int(source_cfg.get("seed", cfg.seed)),
            )
            source = {"kind": "synthetic", **{k: source_cfg[k] for k in source_cfg if k != "kind"}}
        else:
            path = cfg.data_path()
            table = ds.load_csv(path)
            if source_cfg["recipe"] == "amrieh":
                raw = ds.preprocess_amrieh(table)
            else:
                raw = ds.preprocess_generic(
                    table, source_cfg["target_column"], str(source_cfg["positive_label"]),
                    source_cfg.get("drop_columns", ()), source_cfg.get("exclude_labels", ()),
                )
            source = {**source_cfg, "sha256": hashlib.sha256(path.read_bytes()).hexdigest()}
        return ds.prepare(raw, cfg.seed, source)
    except (ds.DataError, KeyError) as exc:
        raise PipelineError("data", f"{type(exc).__name__}: {exc}") from exc


def train_stage(cfg: ExperimentConfig, data: ds.PreparedData):
    arch = mlp.MLPArchitecture(data.dataset.K, tuple(cfg.hidden_dims))
    try:
        snapshots = mlp.train(data.dataset, data.splits, arch, cfg.training_config())
    except mlp.TrainingDiverged as exc:
        raise PipelineError("train", str(exc), epoch=exc.epoch) from exc
    except mlp.ModelError as exc:
        raise PipelineError("train", str(exc)) from exc
    return arch, snapshots


def profile_auc(data: ds.PreparedData, snapshots) -> list[EpochRecord]:
    X = data.dataset.features[data.splits.test_idx]
    y = data.dataset.labels[data.splits.test_idx]
    records = []
    for s in snapshots:
        try:
            test_auc = ev.auc(mlp.predict_batch(s, X), y)
        except ValueError as exc:
            raise PipelineError("evaluate", str(exc), epoch=s.epoch) from exc
        records.append(EpochRecord(s.epoch, s.train_loss, s.val_auc, test_auc))
    return records


def explain_stage(cfg: ExperimentConfig, data: ds.PreparedData, snapshots) -> dict:
    X = data.dataset.features[data.splits.test_idx]
    ids = [int(i) for i in data.splits.test_idx]
    acfg = cfg.attribution_config()
    out = {}
    for s in snapshots:
        try:
            out[s.epoch] = attr.explain_all(s, X, cfg.methods, acfg, ids, cfg.n_jobs)
        except attr.AttributionFailures as exc:
            first = exc.failures[0]
            raise PipelineError("explain", str(exc), epoch=s.epoch,
                                instance_id=first[0]) from exc
        log.debug("explained epoch %d", s.epoch)
    return out


def agree_stage(cfg: ExperimentConfig, attributions: dict, K: int) -> dict:
    if len(cfg.methods) < 2:
        return {}
    ks = cfg.ks(K)
    grids = {}
    for epoch, vectors in sorted(attributions.items()):
        try:
            grids[epoch] = agr.agreement_grid(vectors, cfg.methods, cfg.metrics, ks)
        except agr.AgreementError as exc:
            raise PipelineError("agree", str(exc), epoch=epoch) from exc
    return grids


def correlate_stage(metrics, ks, series) -> list[ev.CorrelationReport]:
    """``series[(metric, k)]`` is the list of ``(epoch, auc, mean_agreement)``."""
    reports = []
    for metric in metrics:
        for k in ks:
            points = series[(metric, k)]
            if len(points) < 3:
                reports.append(ev.CorrelationReport(metric, k, None, TOO_FEW_EPOCHS,
                                                    list(points)))
            else:
                reports.append(ev.correlate_agreement_auc(points, metric, k))
    return reports


def _series_from_grids(report: ExperimentReport):
    series = {}
    auc_by_epoch = {r.epoch: r.test_auc for r in report.epochs}
    for metric in report.config.metrics:
        for k in report.ks:
            series[(metric, k)] = [
                (epoch, auc_by_epoch[epoch], grid.summary(metric, k).overall_mean)
                for epoch, grid in sorted(report.grids.items())
            ]
    return series


def run_experiment(cfg: ExperimentConfig) -> ExperimentReport:
    data = load_data(cfg)
    cfg.ks(data.dataset.K)
    _, snapshots = train_stage(cfg, data)
    report = ExperimentReport(cfg, data, snapshots, profile_auc(data, snapshots))
    report.attributions = explain_stage(cfg, data, snapshots)
    report.grids = agree_stage(cfg, report.attributions, data.dataset.K)
    if not report.grids:
        report.notices.append("only one method configured: no pairs, agreement skipped")
    else:
        report.correlations = correlate_stage(cfg.metrics, report.ks,
                                              _series_from_grids(report))
    return report


# -- outputs ----------------------------------------------------------------

def manifest(cfg: ExperimentConfig, data: ds.PreparedData) -> dict:
    resolved = cfg.resolved()
    blob = json.dumps(resolved, sort_keys=True).encode()
    return {
        "config": resolved,
        "config_sha256": hashlib.sha256(blob).hexdigest(),
        "input_sha256": data.source.get("sha256"),
        "n": data.dataset.n,
        "K": data.dataset.K,
        "feature_names": list(data.dataset.feature_names),
        "versions": {
            "xaiagree": __version__,
            "numpy": np.__version__,
            "python": platform.python_version(),
        },
        "float_format": "17 significant digits",
    }


def write_manifest(out: Path, cfg, data) -> None:
    (out / MANIFEST).write_text(json.dumps(manifest(cfg, data), indent=2) + "\n")


def write_train_outputs(out: Path, cfg, data, arch, snapshots, epochs) -> None:
    out.mkdir(parents=True, exist_ok=True)
    write_manifest(out, cfg, data)
    data.write_manifest(out / DATASET_MANIFEST)
    mlp.save_snapshots(out / SNAPSHOTS, snapshots, arch, cfg.training_config().seed)
    write_csv(out / AUC_FILE, ("epoch", "train_loss", "val_auc", "test_auc"),
              ((r.epoch, r.train_loss, r.val_auc, r.test_auc) for r in epochs))
    if cfg.figures:
        from . import plotting
        plotting.auc_curve(_figure_dir(out) / "auc_by_epoch.png", epochs)


def write_attribution_outputs(out: Path, data, attributions: dict) -> None:
    vectors = [v for epoch in sorted(attributions) for v in attributions[epoch]]
    attr.write_attributions(out / ATTRIBUTIONS, vectors, data.dataset.feature_names)


def _best_epoch(epochs: list[EpochRecord]) -> int:
    best = max(r.test_auc for r in epochs)
    return next(r.epoch for r in epochs if r.test_auc == best)


def _figure_dir(out: Path) -> Path:
    path = out / FIGURE_DIR
    path.mkdir(exist_ok=True)
    return path


def write_agreement_outputs(out: Path, cfg, epochs, grids: dict, ks) -> None:
    auc_by_epoch = {r.epoch: r.test_auc for r in epochs}
    rows = []
    for epoch, grid in sorted(grids.items()):
        for metric in cfg.metrics:
            for k in ks:
                rows.append((epoch, auc_by_epoch[epoch], metric, k,
                             grid.summary(metric, k).overall_mean))
    write_csv(out / RESULTS, ("epoch", "auc", "metric", "k", "overall_mean"), rows)
    if not grids:
        write_csv(out / BOXPLOT, ("epoch", "metric", "k", "pair", "instance_id", "value"), [])
        return

    best = _best_epoch([r for r in epochs if r.epoch in grids])
    grid = grids[best]
    box_rows = (
        (best, metric, k, f"{a}|{b}", inst, grid.values[i, j, p, n])
        for i, metric in enumerate(grid.metrics)
        for j, k in enumerate(grid.ks)
        for p, (a, b) in enumerate(grid.pairs)
        for n, inst in enumerate(grid.instance_ids)
    )
    write_csv(out / BOXPLOT, ("epoch", "metric", "k", "pair", "instance_id", "value"), box_rows)

    if cfg.figures:
        from . import plotting
        fig_dir = _figure_dir(out)
        metric = agr.FA if agr.FA in grid.metrics else grid.metrics[0]
        plotting.agreement_boxplots(fig_dir / f"boxplot_{metric}_epoch{best}.png", grid, metric)
        plotting.agreement_heatmaps(fig_dir / f"heatmap_epoch{best}_k{ks[-1]}.png",
                                    [grid.summary(m, ks[-1]) for m in grid.metrics])

    if cfg.heatmaps == "none":
        return
    heat_dir = out / HEATMAP_DIR
    heat_dir.mkdir(exist_ok=True)
    chosen = sorted(grids) if cfg.heatmaps == "all" else [best]
    for epoch in chosen:
        for metric in cfg.metrics:
            for k in ks:
                write_heatmap(heat_dir / f"heatmap_{epoch}_{metric}_{k}.csv",
                              grids[epoch].summary(metric, k))


def write_heatmap(path, summary: agr.AgreementSummary) -> None:
    rows = [[m, *row] for m, row in zip(summary.methods, summary.pair_matrix)]
    write_csv(path, ("method", *summary.methods), rows)


def write_correlation_outputs(out: Path, cfg, reports, metrics, ks) -> None:
    write_csv(out / CORRELATIONS, ("metric", "k", "rho", "n_epochs", "status"),
              ((r.metric, r.k, r.rho, r.n_epochs, r.status) for r in reports))
    write_csv(out / SCATTER, ("metric", "k", "epoch", "auc", "mean_agreement"),
              ((r.metric, r.k, e, a, m) for r in reports for e, a, m in r.points))
    if cfg.figures and reports:
        from . import plotting
        plotting.correlation_grid(_figure_dir(out) / "correlation_grid.png",
                                  reports, metrics, ks)


def emit_outputs(report: ExperimentReport, out_dir=None) -> Path:
    cfg = report.config
    out = Path(out_dir or cfg.output_dir)
    arch = mlp.MLPArchitecture(report.data.dataset.K, tuple(cfg.hidden_dims))
    write_train_outputs(out, cfg, report.data, arch, report.snapshots, report.epochs)
    write_attribution_outputs(out, report.data, report.attributions)
    write_agreement_outputs(out, cfg, report.epochs, report.grids, report.ks)
    write_correlation_outputs(out, cfg, report.correlations, cfg.metrics, report.ks)
    return out


# -- stage-wise entry points (read the previous stage's exports) --------------

def _require(path: Path, what: str, stage: str) -> Path:
    if not path.is_file():
        raise MissingStageOutput(stage, f"missing {what}: {path} (run the earlier stage first)")
    return path


def read_epochs(out: Path, stage: str) -> list[EpochRecord]:
    rows = read_csv(_require(out / AUC_FILE, "AUC profile", stage))
    return [EpochRecord(int(r["epoch"]), float(r["train_loss"]), float(r["val_auc"]),
                        float(r["test_auc"])) for r in rows]


def stage_train(cfg: ExperimentConfig) -> Path:
    out = Path(cfg.output_dir)
    data = load_data(cfg)
    cfg.ks(data.dataset.K)
    arch, snapshots = train_stage(cfg, data)
    write_train_outputs(out, cfg, data, arch, snapshots, profile_auc(data, snapshots))
    return out


def stage_explain(cfg: ExperimentConfig) -> Path:
    out = Path(cfg.output_dir)
    snapshots, _, _ = mlp.load_snapshots(_require(out / SNAPSHOTS, "snapshots", "explain"))
    data = load_data(cfg)
    write_attribution_outputs(out, data, explain_stage(cfg, data, snapshots))
    return out


def stage_agree(cfg: ExperimentConfig) -> Path:
    out = Path(cfg.output_dir)
    path = _require(out / ATTRIBUTIONS, "attributions", "agree")
    epochs = read_epochs(out, "agree")
    K = json.loads(_require(out / DATASET_MANIFEST, "dataset manifest", "agree").read_text())["K"]
    by_epoch: dict = {}
    for v in attr.read_attributions(path):
        by_epoch.setdefault(v.epoch, []).append(v)
    grids = agree_stage(cfg, by_epoch, K)
    write_agreement_outputs(out, cfg, epochs, grids, cfg.ks(K))
    return out


def read_results(out: Path, stage: str):
    rows = read_csv(_require(out / RESULTS, "agreement results", stage))
    series: dict = {}
    for r in rows:
        series.setdefault((r["metric"], int(r["k"])), []).append(
            (int(r["epoch"]), float(r["auc"]), float(r["overall_mean"])))
    return series


def stage_correlate(cfg: ExperimentConfig, metrics=None, ks=None):
    """Correlate from ``results.csv``; returns the output dir and the reports."""
    out = Path(cfg.output_dir)
    series = read_results(out, "correlate")
    K = json.loads(_require(out / DATASET_MANIFEST, "dataset manifest", "correlate")
                   .read_text())["K"]
    metrics = metrics or cfg.metrics
    ks = ks or cfg.ks(K)
    missing = [key for key in ((m, k) for m in metrics for k in ks) if key not in series]
    if missing:
        raise PipelineError("correlate", f"no agreement results for {missing[:5]}")
    reports = correlate_stage(metrics, ks, series)
    write_correlation_outputs(out, cfg, reports, metrics, ks)
    return out, reports
