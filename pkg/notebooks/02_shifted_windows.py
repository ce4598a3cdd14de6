"""
Windows, shifts and the attention mask
======================================

Partitioning into M x M windows and reversing it is lossless. After a cyclic
shift of M//2 the mask keeps tokens from attending across the seams.
"""

# %%
import numpy as np

from ssformer.encoder import (WindowAttention, attention_mask, window_partition, window_reverse)
from ssformer.ops import cyclic_roll
from ssformer.tensor import Tensor, no_grad

rng = np.random.default_rng(0)
x = rng.normal(size=(8, 8, 4)).astype(np.float32)
windows = window_partition(Tensor(x), 4)
print("windows", windows.shape)
print("roundtrip exact:", np.array_equal(window_reverse(windows, 4, 8, 8).data, x))

# %%
# Region layout of the shifted grid: the mask blocks every pair from
# different regions. Window 3 (bottom right) holds four regions.
mask = attention_mask(8, 8, 4, 2)
blocked = (mask[3] < 0).mean()
print(f"fraction of blocked pairs in the corner window: {blocked:.3f}")

# %%
attn = WindowAttention(4, 2, 4, rng)
shifted = cyclic_roll(Tensor(x[None]), (-2, -2), (1, 2))
with no_grad():
    _, weights = attn(window_partition(shifted, 4), mask, return_attention=True)
leak = weights.data[np.broadcast_to(mask[:, None] < 0, weights.shape)].max()
print(f"largest attention weight on a blocked pair: {leak:.1e}")

# %%
# Maps that are not a multiple of M are padded; padded keys are masked too.
print("6x10 map, M=4 ->", attention_mask(6, 10, 4, 0).shape)
