"""Confusion matrices, accuracy / per-class precision-recall, and 2-D embedding views."""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass
from pathlib import Path
from typing import NamedTuple, Optional, Sequence, Union

import numpy as np

from .autodiff import Tensor
from .autodiff.random import normal
from .dataset import LABELS, NUM_CLASSES, Label, Manifest, Split, consensus_filter
from .errors import DegenerateData, EmptyMatrix, EmptySplit
from .imaging import FrameLoader, PreprocessConfig
from .model import features as extract_batch_features
from .model import head, labels_from_logits


@dataclass(frozen=True)
class ConfusionMatrix:
    """Counts indexed [true label, predicted label] in ``LABELS`` order."""

    counts: np.ndarray

    def __post_init__(self):
        c = np.asarray(self.counts, dtype=np.int64)
        if c.shape != (NUM_CLASSES, NUM_CLASSES) or (c < 0).any():
            raise ValueError(f"confusion counts must be a non-negative {NUM_CLASSES}x{NUM_CLASSES} grid")
        object.__setattr__(self, "counts", c)

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    @classmethod
    def from_pairs(cls, true: Sequence, pred: Sequence) -> "ConfusionMatrix":
        c = np.zeros((NUM_CLASSES, NUM_CLASSES), dtype=np.int64)
        for t, p in zip(true, pred, strict=True):
            c[Label(t).index, Label(p).index] += 1
        return cls(c)

    def __eq__(self, other):
        return isinstance(other, ConfusionMatrix) and np.array_equal(self.counts, other.counts)


@dataclass(frozen=True)
class ClassMetrics:
    precision: float
    recall: float
    precision_defined: bool
    recall_defined: bool
    frames: int


@dataclass(frozen=True)
class MetricsReport:
    accuracy: float
    per_class: dict
    confusion: ConfusionMatrix

    @property
    def total_frames(self) -> int:
        return self.confusion.total

    def to_dict(self) -> dict:
        return {
            "accuracy": self.accuracy,
            "per_class": {lab.value: {"precision": m.precision, "recall": m.recall,
                                      "precision_defined": m.precision_defined,
                                      "recall_defined": m.recall_defined}
                          for lab, m in self.per_class.items()},
            "confusion": self.confusion.counts.tolist(),
            "total_frames": self.total_frames,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    def format_table(self) -> str:
        """Overall accuracy row, then recall and precision per class, as percentages."""
        rows = [("Overall", "Accuracy", f"{100 * self.accuracy:.2f}%")]
        for lab, m in self.per_class.items():
            rec = f"{100 * m.recall:.2f}%" if m.recall_defined else "n/a"
            prec = f"{100 * m.precision:.2f}%" if m.precision_defined else "n/a"
            rows += [(lab.value, "recall", rec), ("", "precision", prec)]
        head = ("Class", "Metric", "Value")
        widths = [max(len(r[i]) for r in rows + [head]) for i in range(3)]
        line = lambda r: "  ".join(s.ljust(w) for s, w in zip(r, widths)).rstrip()
        return "\n".join([line(head), line(tuple("-" * w for w in widths))] + [line(r) for r in rows])


def metrics(cm: ConfusionMatrix) -> MetricsReport:
    """Accuracy = trace / total; recall over rows, precision over columns.

    A zero denominator yields 0 with the matching ``*_defined`` flag False.
    """
    c = cm.counts
    total = c.sum()
    if total == 0:
        raise EmptyMatrix("confusion matrix has no frames")
    per_class = {}
    for i, lab in enumerate(LABELS):
        row, col, hit = c[i].sum(), c[:, i].sum(), c[i, i]
        per_class[lab] = ClassMetrics(
            precision=float(hit / col) if col else 0.0,
            recall=float(hit / row) if row else 0.0,
            precision_defined=bool(col),
            recall_defined=bool(row),
            frames=int(row),
        )
    return MetricsReport(float(np.trace(c) / total), per_class, cm)


def predict_split(model, manifest: Manifest, split: Union[Split, str], loader: FrameLoader,
                  chunk: int = 64) -> tuple[Manifest, list[Label]]:
    """Predictions for the consensus frames of ``split``, in manifest order."""
    frames = consensus_filter(manifest.select(split))
    if not len(frames):
        raise EmptySplit(f"split {Split(split).value} has no frames")
    preds: list[Label] = []
    paths = [r.image_path for r in frames]
    for i in range(0, len(paths), chunk):
        labels, _ = model.predict(loader.batch(paths[i:i + chunk]))
        preds.extend(Label(lab) for lab in labels)
    return frames, preds


def confusion(model, manifest: Manifest, split: Union[Split, str], preprocess_cfg: PreprocessConfig,
              image_root: Union[str, Path] = ".", loader: Optional[FrameLoader] = None) -> ConfusionMatrix:
    """Predict every consensus frame of ``split`` and tally (true, predicted).

    ``model`` is anything with ``predict(batch) -> (labels, probs)``.
    """
    loader = loader or FrameLoader(image_root, preprocess_cfg)
    frames, preds = predict_split(model, manifest, split, loader)
    return ConfusionMatrix.from_pairs([r.label for r in frames], preds)


class Projection(NamedTuple):
    coords: np.ndarray              # (N, 2)
    explained_variance: np.ndarray  # (2,) variance along each component
    explained_ratio: np.ndarray     # (2,) fraction of total variance
    components: np.ndarray          # (2, dim), orthonormal rows
    mean: np.ndarray                # (dim,)


def _power_iteration(cov: np.ndarray, start: np.ndarray, against: Optional[np.ndarray],
                     tol: float, max_iter: int) -> tuple[np.ndarray, float]:
    v = start.copy()
    if against is not None:
        v -= against * (against @ v)
    v /= np.linalg.norm(v)
    scale = max(np.trace(cov), 1e-300)
    for _ in range(max_iter):
        w = cov @ v
        if against is not None:
            w -= against * (against @ w)
        norm = np.linalg.norm(w)
        if norm <= 1e-14 * scale:
            # remaining spectrum is numerically zero; any orthogonal direction will do
            return v, 0.0
        w /= norm
        if w @ v < 0:
            w = -w
        done = np.linalg.norm(w - v) < tol
        v = w
        if done:
            break
    return v, float(v @ cov @ v)


def project_embeddings_2d(features: np.ndarray, tol: float = 1e-9, max_iter: int = 1000) -> Projection:
    """PCA onto the top two principal directions via power iteration with deflation."""
    x = np.asarray(features, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] < 2:
        raise ValueError(f"need an (N >= 2, dim) feature matrix, got shape {x.shape}")
    mean = x.mean(axis=0)
    xc = x - mean
    cov = xc.T @ xc / x.shape[0]
    total = float(np.trace(cov))
    if total <= 0.0 or np.all(xc == 0):
        raise DegenerateData("all feature rows are identical")
    dim = x.shape[1]
    start = normal((dim,), seed=0, dtype=np.float64) + 1e-3
    v1, l1 = _power_iteration(cov, start, None, tol, max_iter)
    if dim == 1:
        v2, l2 = np.zeros(1), 0.0
    else:
        deflated = cov - l1 * np.outer(v1, v1)
        v2, l2 = _power_iteration(deflated, normal((dim,), seed=1, dtype=np.float64) + 1e-3, v1, tol, max_iter)
        l2 = max(l2, 0.0)
    comps = []
    for v in (v1, v2):
        # sign convention: largest-magnitude entry positive
        if v.size and v[np.argmax(np.abs(v))] < 0:
            v = -v
        comps.append(v)
    components = np.stack(comps)
    ev = np.array([l1, l2])
    return Projection(xc @ components.T, ev, ev / total, components, mean)


def export_embeddings(model, manifest: Manifest, split: Union[Split, str], out_path: Union[str, Path],
                      preprocess_cfg: PreprocessConfig, image_root: Union[str, Path] = ".",
                      chunk: int = 64) -> Projection:
    """CSV of video_id, frame_idx, true_label, predicted_label, x, y in manifest order.

    Only consensus frames are exported, since only they carry a true label.
    """
    loader = FrameLoader(image_root, preprocess_cfg)
    frames = consensus_filter(manifest.select(split))
    if not len(frames):
        raise EmptySplit(f"split {Split(split).value} has no frames")
    paths = [r.image_path for r in frames]
    feats = np.concatenate([extract_batch_features(model, loader.batch(paths[i:i + chunk]))
                            for i in range(0, len(paths), chunk)])
    preds, _ = labels_from_logits(head(model, Tensor(feats)).data)
    proj = project_embeddings_2d(feats)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["video_id", "frame_idx", "true_label", "predicted_label", "x", "y"])
    for r, p, (x, y) in zip(frames, preds, proj.coords):
        w.writerow([r.video_id, r.frame_idx, r.label.value, p.value, f"{x:.6f}", f"{y:.6f}"])
    Path(out_path).write_text(buf.getvalue(), encoding="utf-8")
    return proj
