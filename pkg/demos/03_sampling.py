"""
Matching the training label mix to the snapshot mix
====================================================

Training frames are mostly OTHER; the snapshot set is far more balanced.
Each epoch keeps a frame of class j with probability min(s_j / t_j, 1).
"""

from colonmark.dataset import ClassDistribution, FrameRecord, Label, LABELS, Manifest, Split
from colonmark.sampling import compute_inclusion_probs, expected_post_sampling_distribution, sample_epoch

snapshot = ClassDistribution.from_counts([518, 132, 716, 1050])
train = ClassDistribution((0.02, 0.005, 0.025, 0.95))

plan = compute_inclusion_probs(train, snapshot)
print("inclusion probabilities:", plan.as_dict())
print("expected mix after sampling:", expected_post_sampling_distribution(train, plan).as_dict())

# draws are keyed on (epoch seed, video, frame), so an epoch is reproducible
# and every epoch sees a different subsample
records = [FrameRecord(f"v{i // 50}", i % 50, "f.ppm", lab, lab, Split.TRAIN)
           for i, lab in enumerate([Label.OTHER] * 950 + [Label.AO] * 50)]
pool = Manifest(records)
for epoch_seed in (11, 12):
    kept = sample_epoch(pool, plan, epoch_seed)
    n_other = sum(r.label == Label.OTHER for r in kept)
    print(f"epoch seed {epoch_seed}: kept {len(kept)} frames, {n_other} OTHER")
assert [r.key for r in sample_epoch(pool, plan, 11)] == [r.key for r in sample_epoch(pool, plan, 11)]
print("labels:", [lab.value for lab in LABELS])
