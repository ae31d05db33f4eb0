"""
Frame preprocessing
===================

Endoscope frames come with a black vignette and wildly varying exposure.
This walks one synthetic frame through the three preprocessing steps.
"""

import numpy as np

from colonmark.dataset import Label
from colonmark.imaging import (PreprocessConfig, adaptive_gamma_correct, apply_crop,
                               detect_border_crop, gamma_parameters, luminance_stats, preprocess,
                               resize_bilinear)
from colonmark.synthetic import render_frame

rng = np.random.default_rng(3)
frame = render_frame(Label.AO, rng, size=96, brightness=(0.4, 0.4), border=True)
print("raw frame", frame.shape, "mean luminance %.3f" % luminance_stats(frame).mu)

# 1. the crop keeps the bounding box of every pixel brighter than the threshold
rect = detect_border_crop(frame, dark_threshold=0.05)
cropped = apply_crop(frame, rect)
print("crop rectangle", tuple(rect))

# 2. the gamma exponent is picked from the frame's own luminance statistics
stats = luminance_stats(cropped)
print("mu=%.3f sigma=%.3f -> gamma=%.3f" % (stats.mu, stats.sigma, gamma_parameters(stats)))
corrected = adaptive_gamma_correct(cropped)
print("mean luminance after gamma %.3f" % luminance_stats(corrected).mu)

# 3. corner-aligned bilinear resize to the model input
small = resize_bilinear(corrected, 64, 64)
print("resized", small.shape)

# preprocess() chains the same three steps
assert np.array_equal(small, preprocess(frame, PreprocessConfig(target_size=(64, 64))))
