"""Metrics, multi-run aggregation, truncation sweeps, timing and reports.

Both classes get their own precision/recall pair (T and NT each serve as
the positive class for their pair). A ratio with a zero denominator is
reported as None, never silently as zero, and aggregation excludes such
entries while reporting how many runs actually contributed.
"""

import csv
import dataclasses
import hashlib
import json
import pathlib
import platform
import time

import numpy as np

from .data import CLASS_NT, CLASS_T, clip_batch, truncate
from .errors import ContractError, ParamError
from .tensor import no_grad

REPORT_SCHEMA_VERSION = 1

SWEEP_LENGTHS = (300, 270, 240, 210, 180, 150, 120)

METRIC_NAMES = ("acc", "P_T", "R_T", "P_NT", "R_NT", "seconds_per_video")

METRICS_CSV_COLUMNS = (
    "variant", "runs",
    "acc_mean", "acc_std", "P_T_mean", "P_T_std", "R_T_mean", "R_T_std",
    "P_NT_mean", "P_NT_std", "R_NT_mean", "R_NT_std",
    "seconds_per_video_mean", "seconds_per_video_std",
)

SWEEP_CSV_COLUMNS = ("frames_kept", "acc_mean", "acc_std", "n_videos", "n_skipped")


@dataclasses.dataclass(frozen=True)
class ConfusionCounts:
    """2x2 counts with T as the positive class."""

    tp_T: int
    fp_T: int
    fn_T: int
    tn_T: int

    def __post_init__(self):
        if min(self.tp_T, self.fp_T, self.fn_T, self.tn_T) < 0:
            raise ParamError("confusion counts must be non-negative")

    @property
    def total(self):
        return self.tp_T + self.fp_T + self.fn_T + self.tn_T

    @classmethod
    def from_predictions(cls, predictions, labels):
        predictions = np.asarray(predictions)
        labels = np.asarray(labels)
        if predictions.shape != labels.shape or predictions.ndim != 1:
            raise ContractError(f"predictions {predictions.shape} and labels {labels.shape} "
                                "must be equal-length vectors")
        if predictions.size == 0:
            raise ContractError("cannot build confusion counts from zero samples")
        return cls(
            tp_T=int(np.sum((predictions == CLASS_T) & (labels == CLASS_T))),
            fp_T=int(np.sum((predictions == CLASS_T) & (labels == CLASS_NT))),
            fn_T=int(np.sum((predictions == CLASS_NT) & (labels == CLASS_T))),
            tn_T=int(np.sum((predictions == CLASS_NT) & (labels == CLASS_NT))),
        )


@dataclasses.dataclass(frozen=True)
class RunMetrics:
    """Per-run metric values; None marks an undefined ratio."""

    acc: float
    P_T: float
    R_T: float
    P_NT: float
    R_NT: float
    seconds_per_video: float = None

    def as_dict(self):
        return {name: getattr(self, name) for name in METRIC_NAMES}


def _ratio(num, den):
    return None if den == 0 else num / den


def compute_metrics(predictions, labels, seconds_per_video=None):
    """Accuracy plus both precision/recall pairs from hard predictions."""
    c = ConfusionCounts.from_predictions(predictions, labels)
    return RunMetrics(
        acc=(c.tp_T + c.tn_T) / c.total,
        P_T=_ratio(c.tp_T, c.tp_T + c.fp_T),
        R_T=_ratio(c.tp_T, c.tp_T + c.fn_T),
        P_NT=_ratio(c.tn_T, c.tn_T + c.fn_T),
        R_NT=_ratio(c.tn_T, c.tn_T + c.fp_T),
        seconds_per_video=seconds_per_video,
    )


@dataclasses.dataclass(frozen=True)
class MetricSummary:
    """Mean and sample standard deviation over the defined entries."""

    mean: float
    std: float
    count: int


def aggregate(runs):
    """Per-metric mean and unbiased std over a list of RunMetrics.

    Undefined (None) entries are excluded per metric; a metric with a
    single defined value gets std None, one with none gets mean None.
    """
    runs = list(runs)
    if not runs:
        raise ContractError("aggregate needs at least one run")
    out = {}
    for name in METRIC_NAMES:
        values = [getattr(r, name) for r in runs if getattr(r, name) is not None]
        if not values:
            out[name] = MetricSummary(mean=None, std=None, count=0)
        elif len(values) == 1:
            out[name] = MetricSummary(mean=float(values[0]), std=None, count=1)
        else:
            arr = np.asarray(values, dtype=np.float64)
            out[name] = MetricSummary(mean=float(arr.mean()), std=float(arr.std(ddof=1)),
                                      count=len(values))
    return out


def predict_videos(model, videos, *, clip_len=64, strategy="uniform", batch_size=8):
    """Hard predictions and true labels over a list of videos."""
    if not videos:
        raise ParamError("cannot evaluate an empty list of videos")
    model.eval()
    preds = []
    labels = []
    with no_grad():
        for lo in range(0, len(videos), batch_size):
            chunk = videos[lo:lo + batch_size]
            clips, chunk_labels = clip_batch(chunk, clip_len, strategy)
            chunk_preds, _ = model.predict(clips)
            preds.append(chunk_preds)
            labels.append(chunk_labels)
    return np.concatenate(preds), np.concatenate(labels)


def evaluate_videos(model, videos, **kwargs):
    preds, labels = predict_videos(model, videos, **kwargs)
    return compute_metrics(preds, labels)


@dataclasses.dataclass(frozen=True)
class SweepPoint:
    frames_kept: int
    metrics: RunMetrics
    n_videos: int
    n_skipped: int


def truncation_sweep(model, videos, lengths=SWEEP_LENGTHS, *, clip_len=64,
                     strategy="uniform", batch_size=8):
    """Evaluate one trained model on increasingly truncated videos.

    No retraining happens per length; each point truncates every long
    enough video to its first ``frames_kept`` frames, resamples clips and
    recomputes metrics. Shorter videos are skipped and counted.
    """
    lengths = tuple(int(n) for n in lengths)
    if not lengths:
        raise ParamError("the sweep needs at least one length")
    if any(b >= a for a, b in zip(lengths, lengths[1:])):
        raise ParamError(f"sweep lengths must be strictly decreasing, got {lengths}")
    points = []
    for keep in lengths:
        kept = [truncate(v, keep) for v in videos if v.n_frames >= keep]
        skipped = len(videos) - len(kept)
        if not kept:
            raise ParamError(f"no video has {keep} frames to keep")
        metrics = evaluate_videos(model, kept, clip_len=clip_len,
                                  strategy=strategy, batch_size=batch_size)
        points.append(SweepPoint(frames_kept=keep, metrics=metrics,
                                 n_videos=len(kept), n_skipped=skipped))
    return points


@dataclasses.dataclass(frozen=True)
class TimingResult:
    seconds_mean: float
    repetitions: int
    hardware: str


def time_inference(model, clip, repetitions=1000, warmup=10):
    """Mean wall-clock seconds for one forward pass, after warmup runs."""
    if repetitions < 1:
        raise ParamError(f"repetitions must be >= 1, got {repetitions}")
    model.eval()
    with no_grad():
        for _ in range(warmup):
            model(clip)
        start = time.perf_counter()
        for _ in range(repetitions):
            model(clip)
        elapsed = time.perf_counter() - start
    hardware = f"{platform.machine()} {platform.processor() or platform.system()}".strip()
    return TimingResult(seconds_mean=elapsed / repetitions,
                        repetitions=repetitions, hardware=hardware)


# -- report files --------------------------------------------------------------


def config_hash(mapping):
    """Hash of the canonical JSON form; changes iff any field changes."""
    canon = json.dumps(mapping, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canon.encode("utf-8")).hexdigest()


def _cell(value):
    if value is None:
        return ""
    if isinstance(value, float):
        return f"{value:.6f}"
    return str(value)


def write_metrics_csv(path, variant_rows):
    """One row per variant: ``variant_rows`` maps name -> list of RunMetrics."""
    path = pathlib.Path(path)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(METRICS_CSV_COLUMNS)
        for variant, runs in variant_rows.items():
            summary = aggregate(runs)
            row = [variant, len(runs)]
            for name in METRIC_NAMES:
                row.extend([_cell(summary[name].mean), _cell(summary[name].std)])
            writer.writerow(row)
    return path


def write_sweep_csv(path, sweeps):
    """Sweep curve rows; ``sweeps`` is a list of runs, each a SweepPoint list."""
    if not sweeps:
        raise ContractError("no sweep runs to write")
    lengths = [tuple(p.frames_kept for p in s) for s in sweeps]
    if len(set(lengths)) != 1:
        raise ContractError(f"sweep runs disagree on lengths: {sorted(set(lengths))}")
    path = pathlib.Path(path)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(SWEEP_CSV_COLUMNS)
        for i, keep in enumerate(lengths[0]):
            accs = aggregate([s[i].metrics for s in sweeps])["acc"]
            writer.writerow([keep, _cell(accs.mean), _cell(accs.std),
                             sweeps[0][i].n_videos, sweeps[0][i].n_skipped])
    return path


def write_summary_json(path, payload):
    """JSON summary with a schema version and a config hash for reruns."""
    body = {"schema_version": REPORT_SCHEMA_VERSION}
    body.update(payload)
    if "config" in body and "config_hash" not in body:
        body["config_hash"] = config_hash(body["config"])
    path = pathlib.Path(path)
    path.write_text(json.dumps(body, indent=1, sort_keys=True), encoding="utf-8")
    return path
