"""
Training the toy model
======================

AdamW on pixel-wise cross-entropy, scored on a held-out synthetic split.
"""

# %%
import os
import tempfile

from ssformer.checkpoint import load_checkpoint, save_checkpoint
from ssformer.config import TrainConfig, profile
from ssformer.data import synth_dataset
from ssformer.train import evaluate, train

iters = int(os.environ.get("DEMO_ITERS", 150))
enc, dec, _ = profile("toy")
train_set = synth_dataset(0, 256, 64, 64, 3)
held_out = synth_dataset(1, 32, 64, 64, 3)
cfg = TrainConfig(lr=2e-3, batch_size=8, max_iters=iters, eval_interval=50)


def show(event):
    if event["event"] == "eval":
        print(f"iter {event['iter'] + 1:4d}  held-out mIoU {event['miou']:.3f}")


result = train(cfg, enc, dec, train_set, held_out, on_event=show)
print(f"loss {result.losses[0]:.3f} -> {result.losses[-1]:.3f}")

# %%
with tempfile.TemporaryDirectory() as tmp:
    path = os.path.join(tmp, "toy.ssfm")
    save_checkpoint(path, result.checkpoint())
    report = evaluate(load_checkpoint(path), held_out)
print({k: round(v, 4) for k, v in report.items() if k in ("miou", "pixel_acc")})
