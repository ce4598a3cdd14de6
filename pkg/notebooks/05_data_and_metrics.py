"""
Synthetic shapes, Netpbm files and mIoU
=======================================
"""

# %%
import tempfile

import numpy as np

from ssformer.data import load_dataset, save_dataset, synth_dataset
from ssformer.metrics import ConfusionMatrix, miou, pixel_accuracy

samples = synth_dataset(seed=0, n_samples=4, height=64, width=64, n_classes=3)
for s in samples:
    print(s.image.shape, "classes present:", np.unique(s.label).tolist())

# %%
# Datasets live on disk as binary PPM images and PGM label maps.
with tempfile.TemporaryDirectory() as root:
    save_dataset(root, samples)
    back = load_dataset(root)
print("labels survive the roundtrip:", all(np.array_equal(a.label, b.label) for a, b in zip(samples, back)))

# %%
cm = ConfusionMatrix(2)
cm.update(np.array([[0, 1], [1, 1]]), np.array([[0, 0], [1, 1]]))
mean, per_class = miou(cm)
print("per class", per_class, "mIoU", round(mean, 5), "pixel acc", pixel_accuracy(cm))
