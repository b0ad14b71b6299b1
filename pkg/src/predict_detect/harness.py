"""Experiment runner: INI configs, seed sweeps, per-run CSVs and summary tables."""
import configparser
import csv
import dataclasses
import logging
import os
import traceback
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from sklearn.metrics import f1_score

from .adversary import AttackConfig
from .dataio import MALICIOUS, Dataset, generate_synthetic, load_csv, normalize
from .detectors import CONFIRMED, DETECTORS, FALSE_ALARM, SUSPECTED, DetectorConfig, make_detector
from .stream import StreamSchedule, dump_stream, load_stream, replay, run_stream

logger = logging.getLogger(__name__)

WORKERS_ENV = "PD_WORKERS"


class ConfigError(ValueError):
    pass


def _literal(text):
    text = text.strip()
    low = text.lower()
    if low in ("none", ""):
        return None
    if low in ("true", "yes", "on"):
        return True
    if low in ("false", "no", "off"):
        return False
    for cast in (int, float):
        try:
            return cast(text)
        except ValueError:
            pass
    return text


def _list(text, cast=str):
    return [cast(v.strip()) for v in text.split(",") if v.strip()]


def parse_seeds(text):
    """``"0-9"``, ``"0,3,5"`` or a mix such as ``"0-2,7"``."""
    seeds = []
    for part in _list(str(text)):
        if "-" in part:
            lo, hi = part.split("-", 1)
            seeds.extend(range(int(lo), int(hi) + 1))
        else:
            seeds.append(int(part))
    if not seeds:
        raise ConfigError("seed list is empty")
    return seeds


def _build(cls, section, where):
    names = {f.name for f in dataclasses.fields(cls)}
    kwargs = {}
    for key, raw in section.items():
        if key not in names:
            raise ConfigError(f"[{where}] unknown key {key!r}; allowed: {', '.join(sorted(names))}")
        kwargs[key] = _literal(raw)
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"[{where}] {exc}") from None


@dataclass
class DataSpec:
    source: str = "synthetic"
    n_per_class: int = 250
    dim: int = 10
    legit_mean: float = 0.75
    malicious_mean: float = 0.25
    sigma: float = 0.05
    label_column: str = "label"
    normalize: bool = True

    def load(self, seed, cache=None) -> Dataset:
        if self.source == "synthetic":
            return generate_synthetic(self.n_per_class, self.dim, seed, self.legit_mean,
                                      self.malicious_mean, self.sigma)
        if cache is not None and self.source in cache:
            return cache[self.source]
        data = load_csv(self.source, self.label_column)
        if self.normalize:
            data, _ = normalize(data)
        if cache is not None:
            cache[self.source] = data
        return data


@dataclass
class RunSpec:
    """One column of a results table: a detector with its own config and schedule."""

    label: str
    kind: str
    detector: DetectorConfig
    schedule: StreamSchedule


@dataclass
class ExperimentConfig:
    name: str = "experiment"
    data: DataSpec = field(default_factory=DataSpec)
    detectors: list = field(default_factory=lambda: list(DETECTORS))
    detector: DetectorConfig = field(default_factory=DetectorConfig)
    overrides: dict = field(default_factory=dict)
    schedule: StreamSchedule = field(default_factory=StreamSchedule)
    attack: AttackConfig = field(default_factory=AttackConfig)
    seeds: list = field(default_factory=lambda: list(range(10)))
    output_dir: str = "results"
    grid: dict = field(default_factory=dict)

    def validate(self):
        if not self.detectors:
            raise ConfigError("at least one detector is required")
        if not self.seeds:
            raise ConfigError("seed list is empty")
        for kind in self.detectors:
            if kind not in DETECTORS:
                raise ConfigError(f"unknown detector {kind!r}; choose from {sorted(DETECTORS)}")
        if self.data.source != "synthetic" and not Path(self.data.source).is_file():
            raise ConfigError(f"data file not found: {self.data.source}")
        return self

    @classmethod
    def from_file(cls, path):
        path = Path(path)
        if not path.is_file():
            raise ConfigError(f"config file not found: {path}")
        cp = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
        cp.read(path)
        cfg = cls()
        known = {"experiment", "data", "stream", "detector", "adversary", "grid"}
        for sec in cp.sections():
            if sec not in known and not sec.startswith("detector."):
                raise ConfigError(f"unknown section [{sec}]")
        if cp.has_section("experiment"):
            exp = dict(cp["experiment"])
            cfg.name = exp.pop("name", cfg.name)
            if "seeds" in exp:
                cfg.seeds = parse_seeds(exp.pop("seeds"))
            cfg.output_dir = exp.pop("output_dir", cfg.output_dir)
            if exp:
                raise ConfigError(f"[experiment] unknown keys: {', '.join(sorted(exp))}")
        if cp.has_section("data"):
            data = dict(cp["data"])
            if data.get("source", "synthetic") != "synthetic":
                src = Path(data["source"])
                data["source"] = str(src if src.is_absolute() else path.parent / src)
            cfg.data = _build(DataSpec, data, "data")
        if cp.has_section("stream"):
            cfg.schedule = _build(StreamSchedule, cp["stream"], "stream")
        if cp.has_section("detector"):
            det = dict(cp["detector"])
            if "detectors" in det:
                cfg.detectors = _list(det.pop("detectors"))
            cfg.detector = _build(DetectorConfig, det, "detector")
        for sec in cp.sections():
            if sec.startswith("detector."):
                kind = sec.split(".", 1)[1]
                cfg.overrides[kind] = {k: _literal(v) for k, v in cp[sec].items()}
        if cp.has_section("adversary"):
            cfg.attack = _build(AttackConfig, cp["adversary"], "adversary")
        if cp.has_section("grid"):
            grid = dict(cp["grid"])
            allowed = {"detector", "imbalance", "labeling_rate", "labeling_policy"}
            extra = set(grid) - allowed
            if extra:
                raise ConfigError(f"[grid] unknown keys: {', '.join(sorted(extra))}")
            cfg.grid = {
                "detector": grid.get("detector", "pd-shuffle").strip(),
                "imbalance": _list(grid.get("imbalance", str(cfg.schedule.imbalance)), float),
                "labeling_rate": _list(grid.get("labeling_rate", "1.0"), float),
                "labeling_policy": _list(grid.get("labeling_policy", "random")),
            }
            cfg.detectors = [cfg.grid["detector"]]
        return cfg.validate()

    def run_specs(self):
        """Expand detectors (or the grid) into labelled run specifications."""
        specs = []
        if self.grid:
            kind = self.grid["detector"]
            base = self._detector_config(kind)
            for imb in self.grid["imbalance"]:
                for rate in self.grid["labeling_rate"]:
                    for policy in self.grid["labeling_policy"]:
                        n_train = max(2, int(round(rate * base.n_unlabeled)))
                        dcfg = replace(base, n_train=n_train, labeling_policy=policy)
                        label = f"{kind}|{policy}|imb={imb:g}|rate={rate:g}"
                        specs.append(RunSpec(label, kind, dcfg, replace(self.schedule, imbalance=imb)))
            return specs
        for kind in self.detectors:
            specs.append(RunSpec(kind, kind, self._detector_config(kind), self.schedule))
        return specs

    def _detector_config(self, kind):
        over = self.overrides.get(kind, {})
        try:
            return replace(self.detector, **over)
        except TypeError as exc:
            raise ConfigError(f"[detector.{kind}] {exc}") from None


@dataclass
class MetricsRecord:
    label: str
    seed: int
    accuracy: float
    f_measure: float
    labeling_pct: float
    suspected: int
    confirmed: int
    false_alarms: int
    malicious_labeled_pct: float
    chunk_accuracy: list
    signal_series: list
    length: int

    def row(self):
        return {k: getattr(self, k) for k in (
            "label", "seed", "accuracy", "f_measure", "labeling_pct", "suspected",
            "confirmed", "false_alarms", "malicious_labeled_pct", "length")}


def compute_stream_metrics(y_true, y_pred, chunk_size):
    """Overall accuracy, f-measure (Malicious positive) and per-chunk accuracy."""
    y_true = np.asarray(y_true)
    y_pred = np.asarray(y_pred)
    if y_true.size == 0:
        raise ValueError("no records")
    correct = y_true == y_pred
    n_chunks = len(correct) // chunk_size
    chunks = correct[: n_chunks * chunk_size].reshape(n_chunks, chunk_size).mean(axis=1)
    return {
        "accuracy": float(correct.mean()),
        "f_measure": float(f1_score(y_true, y_pred, pos_label=MALICIOUS, zero_division=0)),
        "chunk_accuracy": chunks.tolist(),
    }


def record_metrics(label, seed, rec, chunk_size) -> MetricsRecord:
    m = compute_stream_metrics(rec.y_true, rec.y_pred, chunk_size)
    kinds = [e.kind for e in rec.events]
    n = len(rec.t)
    signal = np.asarray(rec.signal)
    series = signal[chunk_size - 1::chunk_size][: n // chunk_size].tolist()
    mal = 100.0 * rec.oracle_malicious / rec.oracle_cost if rec.oracle_cost else 0.0
    return MetricsRecord(label, seed, m["accuracy"], m["f_measure"], 100.0 * rec.labels_spent / n,
                         kinds.count(SUSPECTED), kinds.count(CONFIRMED), kinds.count(FALSE_ALARM),
                         mal, m["chunk_accuracy"], series, n)


def _slug(label):
    return "".join(c if c.isalnum() or c in "-=." else "_" for c in label)


def write_run_files(out, label, seed, rec, metrics: MetricsRecord, chunk_size):
    stem = Path(out) / f"{_slug(label)}_seed{seed}"
    with open(f"{stem}_steps.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "source_tag", "true_label", "predicted", "signal", "phase"])
        for row in zip(rec.t, rec.tags, rec.y_true, rec.y_pred, rec.signal, rec.phases):
            w.writerow([row[0], row[1], row[2], row[3], f"{row[4]:.10g}", row[5]])
    with open(f"{stem}_chunks.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["chunk", "t_end", "accuracy", "signal"])
        for i, (acc, sig) in enumerate(zip(metrics.chunk_accuracy, metrics.signal_series)):
            w.writerow([i, (i + 1) * chunk_size - 1, f"{acc:.6f}", f"{sig:.10g}"])
    with open(f"{stem}_events.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "kind", "signal", "labels_spent", "detail"])
        for e in rec.events:
            w.writerow([e.t, e.kind, f"{e.signal:.10g}", e.labels_spent, e.detail])


def run_one(spec: RunSpec, cfg: ExperimentConfig, seed, out=None, stream=None):
    """Fit one detector on the seed's training data and run it live or on a fixed stream."""
    data = cfg.data.load(seed)
    det = make_detector(spec.kind, spec.detector, seed).fit(data.X, data.y)
    if stream is None:
        rec = run_stream(det, data, spec.schedule, cfg.attack, seed=seed)
    else:
        rec = replay(det, *stream)
    metrics = record_metrics(spec.label, seed, rec, spec.detector.chunk_size)
    if out is not None:
        write_run_files(out, spec.label, seed, rec, metrics, spec.detector.chunk_size)
    return metrics


def _job(args):
    spec, cfg, seed, out, stream_path = args
    try:
        stream = load_stream(stream_path) if stream_path else None
        return run_one(spec, cfg, seed, out, stream), None
    except Exception as exc:  # noqa: BLE001 - one failed cell must not stop the sweep
        logger.error("run %s seed %s failed: %s", spec.label, seed, exc)
        return None, (spec.label, seed, type(exc).__name__, str(exc), traceback.format_exc())


def worker_count():
    try:
        return max(1, int(os.environ.get(WORKERS_ENV, "1")))
    except ValueError:
        return 1


SUMMARY_FIELDS = ["accuracy", "f_measure", "labeling_pct", "suspected", "confirmed",
                  "false_alarms", "malicious_labeled_pct"]


def summarize(records):
    """Per-label mean and sample std across seeds, plus the count of runs with a confirmed drift."""
    by_label = {}
    for r in records:
        by_label.setdefault(r.label, []).append(r)
    rows = []
    for label, rs in by_label.items():
        row = {"label": label, "runs": len(rs), "detected_runs": sum(r.confirmed > 0 for r in rs)}
        for f in SUMMARY_FIELDS:
            v = np.array([getattr(r, f) for r in rs], dtype=float)
            row[f"{f}_mean"] = float(v.mean())
            row[f"{f}_std"] = float(v.std(ddof=1)) if len(v) > 1 else 0.0
        rows.append(row)
    return rows


def _write_rows(path, rows, fields):
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=fields)
        w.writeheader()
        for row in rows:
            w.writerow({k: (f"{v:.6f}" if isinstance(v, float) else v) for k, v in row.items()})


def run_experiment(cfg: ExperimentConfig, stream_path=None, workers=None):
    """Run every (spec, seed) cell and write per-run and summary CSVs.

    Returns ``(records, errors)``. Failed cells land in ``errors.csv``; the
    remaining cells still run.
    """
    cfg.validate()
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    jobs = [(spec, cfg, seed, str(out), stream_path) for spec in cfg.run_specs() for seed in cfg.seeds]
    workers = worker_count() if workers is None else workers
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_job, jobs))
    else:
        results = [_job(j) for j in jobs]
    records = [r for r, _ in results if r is not None]
    errors = [e for _, e in results if e is not None]
    run_fields = list(records[0].row()) if records else ["label", "seed"]
    _write_rows(out / "runs.csv", [r.row() for r in records], run_fields)
    summary = summarize(records)
    if summary:
        _write_rows(out / "summary.csv", summary, list(summary[0]))
    err_path = out / "errors.csv"
    if errors:
        with open(err_path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["label", "seed", "error_type", "message"])
            for label, seed, etype, msg, _ in errors:
                w.writerow([label, seed, etype, msg])
    elif err_path.exists():
        err_path.unlink()
    return records, errors


def generate_stream(cfg: ExperimentConfig, path, seed=None, kind=None):
    """Run the adversarial stream against one detector and dump the sample sequence."""
    seed = cfg.seeds[0] if seed is None else seed
    spec = next(s for s in cfg.run_specs() if kind in (None, s.kind))
    data = cfg.data.load(seed)
    det = make_detector(spec.kind, spec.detector, seed).fit(data.X, data.y)
    rec = run_stream(det, data, spec.schedule, cfg.attack, seed=seed, keep_samples=True)
    X = np.vstack(rec.X)
    dump_stream(path, X, np.asarray(rec.y_true), rec.tags)
    return X, np.asarray(rec.y_true), rec.tags
