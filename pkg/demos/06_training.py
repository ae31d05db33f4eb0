"""
Training with SAM and a KL loss
===============================

A short run on a small synthetic set. The full acceptance run uses the
same calls with 1,000 training frames and 30 epochs. Four epochs are
enough to watch the loss fall but not for VAL accuracy to leave the
majority-class baseline.
"""

import tempfile
from pathlib import Path

from colonmark.checkpoint import load_checkpoint, save_checkpoint
from colonmark.imaging import PreprocessConfig
from colonmark.model import ViTConfig
from colonmark.synthetic import SynthConfig, generate_synthetic_dataset
from colonmark.training import TrainConfig, train

root = Path(tempfile.mkdtemp())
data = SynthConfig(counts={"TRAIN": [24, 18, 18, 140], "VAL": [6, 4, 4, 16],
                           "SNAPSHOT": [10, 3, 14, 20]}, image_size=32, frames_per_video=10)
manifest = generate_synthetic_dataset(data, seed=0, out_dir=root)

vit = ViTConfig.desk(image_size=32, dim=32, heads=2, mlp_dim=64, head_hidden=(32,))
cfg = TrainConfig(epochs=4, batch_size=16, learning_rate=0.05, sam_rho=0.05, seed=0,
                  preprocess=PreprocessConfig(target_size=(32, 32)))

result = train(manifest, vit, cfg, root, on_epoch=print)
print("best VAL epoch:", result.best.epoch)

path = root / "model.ckpt"
save_checkpoint(result.final, path)
back = load_checkpoint(path)
assert back.same_as(result.final)
print("checkpoint round-trips,", path.stat().st_size, "bytes")
