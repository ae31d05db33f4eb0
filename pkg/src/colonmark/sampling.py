"""Per-class Bernoulli subsampling that pulls the training label mix toward the snapshot mix."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import Mapping, Union

import numpy as np

from .autodiff.random import GOLDEN, make_key, mix64, string_word
from .dataset import LABELS, ClassDistribution, Label, Manifest
from .errors import AllClassesExcluded, MissingTrainClass


@dataclass(frozen=True)
class SamplingPlan:
    """Inclusion probability per label, in ``LABELS`` order."""

    p: tuple[float, ...]

    def __post_init__(self):
        p = tuple(float(v) for v in self.p)
        if len(p) != len(LABELS) or any(not 0.0 <= v <= 1.0 for v in p):
            raise ValueError(f"inclusion probabilities must be {len(LABELS)} values in [0, 1]: {p}")
        object.__setattr__(self, "p", p)

    def __getitem__(self, label: Union[Label, str]) -> float:
        return self.p[Label(label).index]

    @classmethod
    def uniform(cls, value: float = 1.0) -> "SamplingPlan":
        return cls((value,) * len(LABELS))

    def as_dict(self) -> dict[str, float]:
        return {lab.value: v for lab, v in zip(LABELS, self.p)}


def compute_inclusion_probs(train_dist: ClassDistribution, snapshot_dist: ClassDistribution) -> SamplingPlan:
    """``p_j = min(snapshot(j) / train(j), 1)``; labels absent from the snapshots get 0."""
    p = []
    for lab in LABELS:
        s, t = snapshot_dist[lab], train_dist[lab]
        if s == 0:
            p.append(0.0)
        elif t == 0:
            raise MissingTrainClass(f"{lab.value} appears in the snapshots but not in training")
        else:
            p.append(min(s / t, 1.0))
    return SamplingPlan(tuple(p))


def inclusion_draws(manifest: Manifest, epoch_seed: int) -> np.ndarray:
    """Uniform [0, 1) draw per record keyed by (epoch_seed, video_id, frame_idx)."""
    key = np.uint64(make_key(epoch_seed))
    cache: dict[str, int] = {}
    words = np.array([cache.setdefault(r.video_id, string_word(r.video_id)) for r in manifest],
                     dtype=np.uint64)
    frames = np.array([r.frame_idx for r in manifest], dtype=np.uint64)
    with np.errstate(over="ignore"):
        # fold(key, word) then bits(record_key, frame_idx), vectorized
        rec_keys = mix64(key ^ mix64(words + np.uint64(GOLDEN)))
        z = mix64(rec_keys + (frames + np.uint64(1)) * np.uint64(GOLDEN))
    return (z >> np.uint64(11)).astype(np.float64) * (2.0 ** -53)


def sample_epoch(manifest: Manifest, plan: SamplingPlan, epoch_seed: int) -> Manifest:
    """Independent Bernoulli(p[label]) inclusion for every record.

    A record's draw depends only on its own key, so the selected set does
    not depend on manifest order; output keeps input order.
    """
    if not len(manifest):
        return manifest
    u = inclusion_draws(manifest, epoch_seed)
    probs = np.array([plan.p[r.label.index] for r in manifest])
    keep = u < probs
    return Manifest(tuple(r for r, k in zip(manifest, keep) if k))


def expected_post_sampling_distribution(train_dist: ClassDistribution, plan: SamplingPlan) -> ClassDistribution:
    weights = [plan[lab] * train_dist[lab] for lab in LABELS]
    total = math.fsum(weights)
    if total <= 0:
        raise AllClassesExcluded("every label has zero expected inclusion")
    return ClassDistribution(tuple(w / total for w in weights))


def plan_report(plan: SamplingPlan, expected: ClassDistribution) -> str:
    """JSON with 6-decimal values: ``{"p": {...}, "expected_distribution": {...}}``."""

    def fmt(d: Mapping[str, float]) -> str:
        return "{" + ", ".join(f"{json.dumps(k)}: {v:.6f}" for k, v in d.items()) + "}"

    return '{"p": ' + fmt(plan.as_dict()) + ', "expected_distribution": ' + fmt(expected.as_dict()) + "}"
