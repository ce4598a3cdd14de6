"""
From pixels to logits
=====================

The encoder turns an image into four feature maps at strides 4, 8, 16, 32.
The decoder projects each to a shared width, upsamples to stride 4,
concatenates, fuses and classifies.
"""

# %%
import numpy as np

from ssformer import SSformer
from ssformer.config import profile
from ssformer.tensor import Tensor, no_grad

enc, dec, _ = profile("toy")
model = SSformer(enc, dec, seed=0)
image = Tensor(np.random.default_rng(0).random((64, 96, 3)))

with no_grad():
    features = model.encoder(image)
    for s, f in enumerate(features):
        print(f"stage {s + 1}: {f.shape}")
    logits = model(image)
print("logits", logits.shape)

# %%
# Arbitrary sizes are padded internally and cropped back.
with no_grad():
    print(model(Tensor(np.zeros((37, 50, 3)))).shape)

# %%
print(f"{model.num_parameters():,} parameters")
