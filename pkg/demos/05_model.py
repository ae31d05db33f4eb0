"""
The Vision Transformer
======================
"""

import numpy as np

from colonmark.model import ViTConfig, extract_features, forward, init_model, parameter_count, predict

cfg = ViTConfig.desk()
print(cfg)
print("desk parameters:", parameter_count(cfg))
print("ViT-B/16 parameters (no head hidden layer):",
      parameter_count(ViTConfig.b16(head_hidden=())))

model = init_model(cfg, seed=0)
batch = np.random.default_rng(0).uniform(size=(3, 64, 64, 3)).astype(np.float32)

logits = forward(model, batch)
print("logits", logits.shape)
print("class-token features", extract_features(model, batch).shape)

labels, probs = predict(model, batch)
print("untrained predictions", [lab.value for lab in labels], probs.round(3)[0])

# attention maps can be collected for inspection; each row is a distribution
maps = []
forward(model, batch[:1], attn_out=maps)
print("attention", maps[0].shape, "row sums", maps[0].sum(-1).min().round(6))
