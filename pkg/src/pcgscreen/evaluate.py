"""Screening metrics, ROC/PR curves, patient aggregation and ablation protocols."""

from __future__ import annotations

import csv
import enum
import math
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .dsp import PreprocessConfig
from .errors import EmptyDataset, EmptyGroup, EmptySite, LengthMismatch, SingleClass
from .model import Model, NetworkConfig, build_network, replace_head
from .signal_io import DatasetManifest, Label, Quality, Site, SplitSpec, patient_split
from .train import TrainConfig, build_signal_set, fit

THRESHOLD = 0.5


class Level(str, enum.Enum):
    RECORDING = "recording"
    PATIENT = "patient"


@dataclass(frozen=True)
class ScoredRecording:
    patient_id: str
    site: Site
    probability_positive: float
    true_label: Label

    def __post_init__(self):
        p = self.probability_positive
        if not (math.isfinite(p) and 0.0 <= p <= 1.0):
            raise ValueError(f"probability {p} outside [0, 1]")


@dataclass(frozen=True)
class Confusion:
    tp: int
    fp: int
    tn: int
    fn: int

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.tn + self.fn


@dataclass
class MetricsReport:
    tp: int
    fp: int
    tn: int
    fn: int
    accuracy: float
    sensitivity: float
    specificity: float
    auroc: float
    roc_points: list[tuple[float, float]] = field(default_factory=list)
    pr_points: list[tuple[float, float]] = field(default_factory=list)
    level: Level = Level.PATIENT


def _label_index(lab) -> int:
    return lab.index if isinstance(lab, Label) else int(lab)


def _arrays(scores, labels) -> tuple[np.ndarray, np.ndarray]:
    s = np.asarray(scores, dtype=np.float64).ravel()
    y = np.array([_label_index(v) for v in labels], dtype=np.int64)
    if len(s) != len(y):
        raise LengthMismatch(f"{len(s)} scores for {len(y)} labels")
    if y.size and not np.isin(y, (0, 1)).all():
        raise ValueError("labels must be binary")
    return s, y


def aggregate_patient(scores: Sequence[ScoredRecording] | Sequence[float]) -> float:
    """Mean positive probability over one patient's recordings.

    ``math.fsum`` is correctly rounded, so the result does not depend on order.
    """
    values = [s.probability_positive if isinstance(s, ScoredRecording) else float(s) for s in scores]
    if not values:
        raise EmptyGroup("patient has no scored recordings")
    return math.fsum(values) / len(values)


def confusion(scores, labels, threshold: float = THRESHOLD) -> Confusion:
    """Counts with ``score >= threshold`` predicted positive."""
    s, y = _arrays(scores, labels)
    pred = s >= threshold
    pos = y == 1
    return Confusion(
        tp=int(np.sum(pred & pos)),
        fp=int(np.sum(pred & ~pos)),
        tn=int(np.sum(~pred & ~pos)),
        fn=int(np.sum(~pred & pos)),
    )


def _sweep(scores, labels) -> tuple[np.ndarray, np.ndarray, int, int]:
    """Cumulative (tp, fp) counts at each distinct threshold, highest first, with a leading zero."""
    s, y = _arrays(scores, labels)
    n_pos = int(np.sum(y == 1))
    n_neg = len(y) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise SingleClass("need at least one positive and one negative")
    order = np.argsort(-s, kind="stable")
    s, y = s[order], y[order]
    # last index of each run of equal scores
    ends = np.r_[np.flatnonzero(np.diff(s) != 0), len(s) - 1]
    tp = np.r_[0, np.cumsum(y)[ends]]
    fp = np.r_[0, np.cumsum(1 - y)[ends]]
    return tp, fp, n_pos, n_neg


def roc_curve(scores, labels) -> list[tuple[float, float]]:
    """(false-positive rate, true-positive rate) from (0, 0) to (1, 1)."""
    tp, fp, n_pos, n_neg = _sweep(scores, labels)
    return [(f / n_neg, t / n_pos) for t, f in zip(tp.tolist(), fp.tolist())]


def pr_curve(scores, labels) -> list[tuple[float, float]]:
    """(recall, precision) over the same thresholds as the ROC, starting at (0, 1)."""
    tp, fp, n_pos, _ = _sweep(scores, labels)
    points = [(0.0, 1.0)]
    for t, f in zip(tp[1:].tolist(), fp[1:].tolist()):
        points.append((t / n_pos, t / (t + f)))
    return points


def auroc(scores, labels) -> float:
    """Trapezoidal area under the ROC curve.

    The area is accumulated in integer counts and divided once, so it matches
    the tie-corrected pairwise concordance to rounding error.
    """
    tp, fp, n_pos, n_neg = _sweep(scores, labels)
    twice_area = int(np.sum(np.diff(fp) * (tp[1:] + tp[:-1])))
    return twice_area / (2 * n_pos * n_neg)


def trapezoid_area(points: Sequence[tuple[float, float]]) -> float:
    """Trapezoidal integral of y over x for a curve given as points."""
    xs = np.array([p[0] for p in points], dtype=np.float64)
    ys = np.array([p[1] for p in points], dtype=np.float64)
    return float(np.sum(np.diff(xs) * (ys[1:] + ys[:-1]) / 2))


def _ratio(a: int, b: int) -> float:
    return a / b if b else float("nan")


def report_from(scores, labels, level: str = Level.PATIENT, threshold: float = THRESHOLD) -> MetricsReport:
    c = confusion(scores, labels, threshold)
    if c.total == 0:
        raise EmptyDataset("nothing to report on")
    try:
        area, roc, pr = auroc(scores, labels), roc_curve(scores, labels), pr_curve(scores, labels)
    except SingleClass:
        area, roc, pr = float("nan"), [], []
    return MetricsReport(
        tp=c.tp, fp=c.fp, tn=c.tn, fn=c.fn,
        accuracy=(c.tp + c.tn) / c.total,
        sensitivity=_ratio(c.tp, c.tp + c.fn),
        specificity=_ratio(c.tn, c.tn + c.fp),
        auroc=area,
        roc_points=roc,
        pr_points=pr,
        level=level,
    )


def patient_scores(scored: Iterable[ScoredRecording]) -> tuple[list[str], np.ndarray, np.ndarray]:
    """Aggregate recording scores per patient; patients come back sorted by id."""
    groups: dict[str, list[ScoredRecording]] = defaultdict(list)
    for s in scored:
        groups[s.patient_id].append(s)
    ids = sorted(groups)
    probs = np.array([aggregate_patient(groups[i]) for i in ids])
    labels = np.array([groups[i][0].true_label.index for i in ids], dtype=np.int64)
    return ids, probs, labels


def report_from_scored(scored: Sequence[ScoredRecording], level: str = Level.PATIENT) -> MetricsReport:
    level = Level(level)
    if level is Level.PATIENT:
        _, probs, labels = patient_scores(scored)
        return report_from(probs, labels, Level.PATIENT)
    return report_from([s.probability_positive for s in scored], [s.true_label for s in scored], Level.RECORDING)


def score_recordings(
    model: Model, manifest: DatasetManifest, pcfg: PreprocessConfig = PreprocessConfig(), threads: int = 1
) -> list[ScoredRecording]:
    data = build_signal_set(manifest, pcfg, threads, dtype=model.dtype)
    if len(data) == 0:
        raise EmptyDataset("manifest selects no recordings")
    probs = np.clip(model.positive_probability(data.x, threads=threads), 0.0, 1.0)
    labels = [Label.POSITIVE if v else Label.NEGATIVE for v in data.y]
    return [
        ScoredRecording(pid, site, float(p), lab)
        for pid, site, p, lab in zip(data.patient_ids, data.sites, probs, labels)
    ]


def evaluate_cohort(
    model: Model,
    manifest: DatasetManifest,
    level: str = Level.PATIENT,
    pcfg: PreprocessConfig = PreprocessConfig(),
    threads: int = 1,
) -> MetricsReport:
    return report_from_scored(score_recordings(model, manifest, pcfg, threads), level)


def quality_slice(manifest: DatasetManifest, quality: Quality) -> DatasetManifest:
    return manifest.filter_recordings(lambda r: r.quality is quality)


def site_slice(manifest: DatasetManifest, site: Site) -> DatasetManifest:
    return manifest.filter_recordings(lambda r: r.site is site)


# --------------------------------------------------------------- protocols


@dataclass(frozen=True)
class ProtocolConfig:
    network: NetworkConfig
    train: TrainConfig = TrainConfig()
    split: SplitSpec = SplitSpec()
    preprocess: PreprocessConfig = PreprocessConfig()
    seed: int = 0
    threads: int = 1


def _fresh_model(cfg: ProtocolConfig, init: Model | None) -> Model:
    if init is None:
        return build_network(cfg.network, seed=cfg.seed)
    return replace_head(init, cfg.network.num_classes, seed=cfg.seed)


def per_site_protocol(
    manifest: DatasetManifest,
    site: Site | None,
    cfg: ProtocolConfig,
    init: Model | None = None,
    run_dir=None,
) -> MetricsReport:
    """Train a fresh model on one site's recordings and report patient-level test metrics.

    The patient split is computed on the full manifest so every site sees the
    same train/val/test patients. ``site=None`` uses all sites.
    """
    train_m, val_m, test_m = patient_split(manifest, cfg.split)
    if site is not None:
        if not any(r.site is site for _, r in manifest.recordings()):
            raise EmptySite(f"no recordings for site {site.value}")
        train_m, val_m, test_m = (site_slice(m, site) for m in (train_m, val_m, test_m))
    sets = [build_signal_set(m, cfg.preprocess, cfg.threads) for m in (train_m, val_m)]
    model = _fresh_model(cfg, init)
    fit(model, sets[0], sets[1], cfg.train, run_dir=run_dir, threads=cfg.threads)
    return evaluate_cohort(model, test_m, Level.PATIENT, cfg.preprocess, cfg.threads)


def site_ablation(
    manifest: DatasetManifest,
    cfg: ProtocolConfig,
    sites: Sequence[Site],
    init: Model | None = None,
    out_dir=None,
) -> dict[str, MetricsReport]:
    """Per-site reports plus the all-sites report under the key ``"all"``."""
    reports = {}
    for site in list(sites) + [None]:
        key = "all" if site is None else site.value
        sub = None if out_dir is None else Path(out_dir) / key
        reports[key] = per_site_protocol(manifest, site, cfg, init, run_dir=sub)
        if sub is not None:
            write_report(reports[key], sub)
    return reports


# ------------------------------------------------------------------ writers


def report_rows(report: MetricsReport) -> list[tuple[str, str]]:
    rows = [("level", Level(report.level).value)]
    for name in ("tp", "fp", "tn", "fn"):
        rows.append((name, str(getattr(report, name))))
    for name in ("accuracy", "sensitivity", "specificity", "auroc"):
        rows.append((name, repr(float(getattr(report, name)))))
    return rows


def _write_points(path: Path, points) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["x", "y"])
        for x, y in points:
            w.writerow([repr(float(x)), repr(float(y))])


def write_report(report: MetricsReport, out_dir) -> None:
    """Write report.csv, roc.csv and pr.csv into ``out_dir``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "report.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["metric", "value"])
        w.writerows(report_rows(report))
    _write_points(out / "roc.csv", report.roc_points)
    _write_points(out / "pr.csv", report.pr_points)


def read_points(path) -> list[tuple[float, float]]:
    with open(path, newline="") as fh:
        return [(float(r["x"]), float(r["y"])) for r in csv.DictReader(fh)]


def read_report(path) -> dict[str, str]:
    with open(path, newline="") as fh:
        return {r["metric"]: r["value"] for r in csv.DictReader(fh)}
