"""
Metrics and embedding views
===========================
"""

import numpy as np

from colonmark.dataset import LABELS
from colonmark.evaluation import ConfusionMatrix, metrics, project_embeddings_2d

# rows are true labels, columns predictions, both in LABELS order
cm = ConfusionMatrix(np.array([[8, 2, 0, 0],
                               [1, 9, 0, 0],
                               [0, 0, 10, 0],
                               [1, 1, 0, 8]]))
report = metrics(cm)
print(report.format_table())
print(report.to_json())

# a class nobody predicted gets precision "n/a" rather than a crash
print(metrics(ConfusionMatrix(np.diag([4, 0, 3, 9]))).format_table())

# PCA onto two axes, computed by power iteration
rng = np.random.default_rng(0)
centers = rng.normal(scale=4.0, size=(4, 32))
feats = np.concatenate([c + rng.normal(size=(25, 32)) for c in centers])
proj = project_embeddings_2d(feats)
print("explained variance ratio", proj.explained_ratio.round(3))
for lab, block in zip(LABELS, np.split(proj.coords, 4)):
    print(f"{lab.value:8s} centroid {block.mean(0).round(2)}")
