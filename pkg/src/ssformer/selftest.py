"""Invariant suite runnable without pytest (``ssformer selftest``)."""
from __future__ import annotations

import time
from fractions import Fraction
from typing import Callable, List, Tuple

import numpy as np

from . import ops
from .checkpoint import dumps, from_model, loads
from .complexity import ComplexityInputs, omega_ssformer
from .decoder import DecoderConfig, SSformer
from .encoder import (EncoderConfig, WindowAttention, attention_mask, padded_size, patch_merging,
                      window_partition, window_reverse)
from .gradcheck import check_function, op_cases
from .metrics import ConfusionMatrix, confusion_update, miou
from .tensor import Tensor, no_grad

Check = Tuple[bool, str]


def check_window_roundtrip(cases: int = 50, seed: int = 0) -> Check:
    rng = np.random.default_rng(seed)
    for _ in range(cases):
        m = int(rng.integers(1, 8))
        h, w = m * int(rng.integers(1, 5)), m * int(rng.integers(1, 5))
        x = rng.normal(size=(h, w, int(rng.integers(1, 6)))).astype(np.float32)
        back = window_reverse(window_partition(Tensor(x), m), m, h, w).data
        if back.tobytes() != x.tobytes():
            return False, f"roundtrip differs for h={h} w={w} M={m}"
    return True, f"{cases} random (h, w, M) cases bit-exact"


def displaced_window_ids(n: int, m: int, shift: int) -> np.ndarray:
    """For each position of the rolled axis, the window (in unrolled coordinates) it came from."""
    p = np.arange(n)
    original = (p + shift) % n
    return np.floor_divide(original - shift, m)


def blocked_pairs(h: int, w: int, m: int, shift: int) -> np.ndarray:
    """Brute-force (nw, N, N) boolean map of pairs that must not attend."""
    hp, wp = padded_size(h, m), padded_size(w, m)
    rid = displaced_window_ids(hp, m, shift)
    cid = displaced_window_ids(wp, m, shift)
    orig_r = (np.arange(hp) + shift) % hp
    orig_c = (np.arange(wp) + shift) % wp
    nw = (hp // m) * (wp // m)
    out = np.zeros((nw, m * m, m * m), dtype=bool)
    for wi in range(hp // m):
        for wj in range(wp // m):
            tokens = [(wi * m + a, wj * m + b) for a in range(m) for b in range(m)]
            k = wi * (wp // m) + wj
            for i, (r1, c1) in enumerate(tokens):
                pad1 = orig_r[r1] >= h or orig_c[c1] >= w
                for j, (r2, c2) in enumerate(tokens):
                    pad2 = orig_r[r2] >= h or orig_c[c2] >= w
                    other = rid[r1] != rid[r2] or cid[c1] != cid[c2]
                    out[k, i, j] = other or (pad2 and not pad1)
    return out


def check_shifted_mask(seed: int = 0) -> Check:
    rng = np.random.default_rng(seed)
    worst = 0.0
    for m in (2, 3, 4):
        for size in (2 * m, 4 * m):
            shift = m // 2
            expect = blocked_pairs(size, size, m, shift)
            mask = attention_mask(size, size, m, shift)
            if not np.array_equal(mask < 0, expect):
                return False, f"mask disagrees with brute force for M={m} size={size}"
            attn = WindowAttention(4, 2, m, rng)
            x = ops.cyclic_roll(Tensor(rng.normal(size=(1, size, size, 4))), (-shift, -shift), (1, 2))
            with no_grad():
                _, weights = attn(window_partition(x, m), mask, return_attention=True)
            blocked = np.broadcast_to(expect[:, None], weights.shape)
            worst = max(worst, float(weights.data[blocked].max(initial=0.0)))
            if not np.allclose(weights.data.sum(-1), 1.0, atol=1e-5):
                return False, "attention rows do not sum to 1"
    return worst < 1e-7, f"max weight across blocked pairs {worst:.2e}"


def check_softmax(seed: int = 0) -> Check:
    rng = np.random.default_rng(seed)
    worst = 0.0
    for scale in (1.0, 1e2, 1e4):
        x = Tensor((rng.uniform(-1, 1, size=(64, 33)) * scale).astype(np.float32))
        worst = max(worst, float(np.abs(ops.softmax(x).data.sum(-1) - 1).max()))
    return worst <= 1e-5, f"max |row sum - 1| = {worst:.2e}"


def check_patch_merging(seed: int = 0) -> Check:
    rng = np.random.default_rng(seed)
    out = patch_merging(Tensor(rng.normal(size=(4, 4, 3))), Tensor(rng.normal(size=(12, 6))),
                        Tensor(np.ones(12)), Tensor(np.zeros(12)))
    return out.shape == (2, 2, 6), f"(4, 4, 3) -> {out.shape}"


def check_gradients(seeds: int = 5) -> Check:
    worst = 0.0
    for seed in range(seeds):
        for _, fn, inputs in op_cases(np.random.default_rng(seed)):
            worst = max(worst, check_function(fn, inputs, seed=seed))
    return worst < 1e-3, f"max relative error {worst:.2e} over {seeds} seeds"


def check_metrics(cases: int = 50, seed: int = 0) -> Check:
    rng = np.random.default_rng(seed)
    n = 5
    for _ in range(cases):
        gt = rng.integers(0, n, size=(16, 16))
        gt[rng.random(gt.shape) < 0.1] = 255
        pred = rng.integers(0, n, size=(16, 16))
        brute = np.zeros((n, n), dtype=np.int64)
        for r in range(16):
            for c in range(16):
                if gt[r, c] != 255:
                    brute[gt[r, c], pred[r, c]] += 1
        cm = confusion_update(ConfusionMatrix(n), pred, gt, 255)
        if not np.array_equal(cm.counts, brute):
            return False, "confusion matrix differs from per-pixel loop"
        ious = []
        for k in range(n):
            inter = int(((gt == k) & (pred == k)).sum())
            union = int((((gt == k) | (pred == k)) & (gt != 255)).sum())
            if union:
                ious.append(Fraction(inter, union))
        if miou(cm)[0] != float(sum(ious) / len(ious)):
            return False, "mIoU differs from brute force"
    return True, f"{cases} random 16x16 mask pairs exact"


def check_formula(cases: int = 1000, seed: int = 0) -> Check:
    rng = np.random.default_rng(seed)
    for _ in range(cases):
        h, w, c, m, n = (int(v) for v in rng.integers(1, 4096, size=5))
        hw = h * w
        terms = [4 * hw * c ** 2, 2 * m ** 2 * hw * c, hw * c ** 2, 4 * hw * c * n]
        if omega_ssformer(ComplexityInputs(h, w, c, m, n)) != sum(terms):
            return False, f"mismatch at {(h, w, c, m, n)}"
    return True, f"{cases} random inputs exact"


def check_checkpoint(seed: int = 0) -> Check:
    enc = EncoderConfig(embed_dim=8, window_size=2, depths=[1, 1, 1, 1], num_heads=[1, 1, 2, 2])
    model = SSformer(enc, DecoderConfig(8, 3), seed=seed)
    ckpt = loads(dumps(from_model(model)))
    same = all(ckpt.params[n].tobytes() == p.data.tobytes() for n, p in model.named_parameters())
    return same, "parameters bit-exact after save/load"


CHECKS: List[Tuple[str, Callable[[], Check]]] = [
    ("window partition/reverse roundtrip", check_window_roundtrip),
    ("shifted-window mask blocks cross-region pairs", check_shifted_mask),
    ("softmax rows sum to 1", check_softmax),
    ("patch merging shape (4,4,3)->(2,2,6)", check_patch_merging),
    ("finite-difference gradients", check_gradients),
    ("confusion matrix / mIoU oracle", check_metrics),
    ("complexity formula oracle", check_formula),
    ("checkpoint roundtrip", check_checkpoint),
]


def run(echo=print) -> bool:
    all_ok = True
    for name, fn in CHECKS:
        start = time.perf_counter()
        try:
            ok, detail = fn()
        except Exception as exc:  # a crashing check is a failing check
            ok, detail = False, f"{type(exc).__name__}: {exc}"
        all_ok &= ok
        echo(f"{'PASS' if ok else 'FAIL'}  {name}: {detail} ({time.perf_counter() - start:.2f}s)")
    return all_ok
