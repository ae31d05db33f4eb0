"""
Synthetic dataset, manifests and video-level splits
===================================================
"""

import tempfile
from pathlib import Path

from colonmark.dataset import Split, class_distribution, consensus_filter, load_manifest, split_by_video
from colonmark.synthetic import SynthConfig, generate_synthetic_dataset

out = Path(tempfile.mkdtemp())
cfg = SynthConfig(counts={"TRAIN": [12, 8, 8, 72], "SNAPSHOT": [10, 3, 14, 20]},
                  image_size=32, frames_per_video=10)
manifest = generate_synthetic_dataset(cfg, seed=0, out_dir=out)
print(len(manifest), "frames written under", out)

# the manifest is JSON Lines, one frame per line
print((out / "manifest.jsonl").read_text().splitlines()[0])

# frames whose two annotators disagree are dropped before training or scoring
agreed = consensus_filter(load_manifest(out / "manifest.jsonl"))
print("after consensus filtering:", len(agreed))
print("TRAIN label mix:", class_distribution(agreed, Split.TRAIN).as_dict())

# whole videos go to one split, so no video leaks across TRAIN/VAL/TEST
resplit = split_by_video(agreed, ratios=(0.6, 0.2, 0.2), seed=1)
for split in (Split.TRAIN, Split.VAL, Split.TEST, Split.SNAPSHOT):
    part = resplit.select(split)
    print(f"{split.value:8s} {len(part.video_ids()):2d} videos {len(part):3d} frames")
