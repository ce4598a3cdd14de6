"""One test per acceptance criterion, each at its stated tolerance and time budget."""
import io
import json
import time
from contextlib import redirect_stdout
from fractions import Fraction

import numpy as np
import pytest

from ssformer import ops
from ssformer.checkpoint import dumps, from_model, load_checkpoint, save_checkpoint
from ssformer.cli import main
from ssformer.complexity import ComplexityInputs, omega_ssformer
from ssformer.config import TrainConfig, profile
from ssformer.data import synth_dataset
from ssformer.decoder import SSformer
from ssformer.gradcheck import check_function, check_model, op_cases
from ssformer.metrics import ConfusionMatrix, confusion_update, miou
from ssformer.tensor import Tensor, default_dtype
from ssformer.train import train


def run_cli(args):
    buf = io.StringIO()
    start = time.perf_counter()
    with redirect_stdout(buf):
        code = main(args)
    return code, buf.getvalue(), time.perf_counter() - start


def test_criterion_1_parameter_count(verdict):
    code, out, secs = run_cli(["analyze", "--profile", "ade20k"])
    params = json.loads(out)["params_total"]
    err = (params - 87.5e6) / 87.5e6
    verdict(1, "params", code == 0 and abs(err) <= 0.03 and secs < 1.0,
            f"params_total={params:,} ({err:+.2%} vs 87.5M, tol 3%), {secs:.2f}s < 1s")


def test_criterion_2_flops(verdict):
    code, out, secs = run_cli(["analyze", "--profile", "ade20k", "--height", "512", "--width", "512"])
    flops = json.loads(out)["flops_detailed"]
    err = (flops - 91.01e9) / 91.01e9
    verdict(2, "flops", code == 0 and abs(err) <= 0.20 and secs < 5.0,
            f"flops_detailed={flops / 1e9:.2f}G ({err:+.2%} vs 91.01G, tol 20%), {secs:.2f}s < 5s")


def test_criterion_3_linear_scaling(verdict):
    start = time.perf_counter()
    small = json.loads(run_cli(["analyze", "--profile", "ade20k", "--height", "512", "--width", "512"])[1])
    large = json.loads(run_cli(["analyze", "--profile", "ade20k", "--height", "1024", "--width", "1024"])[1])
    secs = time.perf_counter() - start
    ratio = large["flops_detailed"] / small["flops_detailed"]
    verdict(3, "scaling", 3.8 <= ratio <= 4.1 and secs < 10.0,
            f"flops(1024^2)/flops(512^2)={ratio:.3f} in [3.8, 4.1], {secs:.2f}s < 10s")


def test_criterion_4_formula_oracle(verdict):
    rng = np.random.default_rng(2024)
    start = time.perf_counter()
    mismatches = 0
    for _ in range(1000):
        h, w, c, m, n = (int(v) for v in rng.integers(1, 2 ** 20, size=5))
        hw = h * w
        terms = [4 * hw * c * c, 2 * m * m * hw * c, hw * c * c, 4 * hw * c * n]
        mismatches += omega_ssformer(ComplexityInputs(h, w, c, m, n)) != sum(terms)
    secs = time.perf_counter() - start
    verdict(4, "formula oracle", mismatches == 0 and secs < 1.0,
            f"{1000 - mismatches}/1000 exact big-integer matches, {secs:.2f}s < 1s")


@pytest.mark.slow
def test_criterion_5_toy_training(verdict):
    enc, dec, _ = profile("toy")
    train_set = synth_dataset(0, 256, 64, 64, 3)
    held_out = synth_dataset(1, 32, 64, 64, 3)
    cfg = TrainConfig(lr=2e-3, weight_decay=0.01, batch_size=8, max_iters=300, eval_interval=100, seed=0)
    start = time.perf_counter()
    result = train(cfg, enc, dec, train_set, held_out)
    secs = time.perf_counter() - start
    evals = [e for e in result.history if e["event"] == "eval"]
    first = next((e["iter"] + 1 for e in evals if e["miou"] >= 0.90), None)
    final = evals[-1]["miou"]
    verdict(5, "toy training", final >= 0.90 and first is not None and secs < 900,
            f"held-out mIoU {final:.4f} >= 0.90 after {cfg.max_iters} iters (first reached at {first}), "
            f"{secs:.0f}s < 900s")


def test_criterion_6_gradients(verdict):
    start = time.perf_counter()
    worst, cases = 0.0, 0
    for seed in range(6):
        for _, fn, inputs in op_cases(np.random.default_rng(seed)):
            worst = max(worst, check_function(fn, inputs, seed=seed))
            cases += 1
    enc, dec, _ = profile("toy")
    with default_dtype(np.float64):
        model = SSformer(enc, dec, seed=0)
        sample = synth_dataset(0, 1, 64, 64, 3)[0]
        image = Tensor(sample.image.astype(np.float64))
        errors = check_model(lambda: ops.cross_entropy(model(image), sample.label), dict(model.named_parameters()))
    model_worst = max(errors.values())
    secs = time.perf_counter() - start
    verdict(6, "gradients", cases >= 100 and worst < 1e-3 and model_worst < 1e-3 and secs < 300,
            f"{cases} op cases max rel err {worst:.1e}; toy model {len(errors)} tensors max rel err "
            f"{model_worst:.1e} (tol 1e-3), {secs:.1f}s < 300s")


def test_criterion_7_selftest(verdict):
    code, out, secs = run_cli(["selftest"])
    lines = out.strip().splitlines()
    passed = sum(line.startswith("PASS") for line in lines)
    verdict(7, "mechanism invariants", code == 0 and passed == len(lines) == 8 and secs < 120,
            f"selftest {passed}/{len(lines)} checks passed, {secs:.2f}s < 120s")


def test_criterion_8_metrics_oracle(verdict):
    rng = np.random.default_rng(8)
    start = time.perf_counter()
    exact = 0
    for _ in range(50):
        n = int(rng.integers(2, 10))
        gt = rng.integers(0, n, size=(16, 16))
        gt[rng.random(gt.shape) < 0.2] = 255
        pred = rng.integers(0, n, size=(16, 16))
        brute = np.zeros((n, n), dtype=np.int64)
        for r in range(16):
            for c in range(16):
                if gt[r, c] != 255:
                    brute[gt[r, c], pred[r, c]] += 1
        ious = []
        for k in range(n):
            inter, union = brute[k, k], brute[k, :].sum() + brute[:, k].sum() - brute[k, k]
            if union:
                ious.append(Fraction(int(inter), int(union)))
        cm = confusion_update(ConfusionMatrix(n), pred, gt, 255)
        exact += np.array_equal(cm.counts, brute) and miou(cm)[0] == float(sum(ious) / len(ious))
    secs = time.perf_counter() - start
    verdict(8, "metrics oracle", exact == 50 and secs < 10,
            f"{exact}/50 random 16x16 pairs exact (with ignore pixels), {secs:.2f}s < 10s")


def test_criterion_9_determinism(verdict, tmp_path):
    enc, dec, _ = profile("toy")
    data = synth_dataset(3, 8, 64, 64, 3)
    cfg = TrainConfig(lr=2e-3, batch_size=4, max_iters=5, eval_interval=5, seed=7)
    a = dumps(train(cfg, enc, dec, data).checkpoint())
    b = dumps(train(cfg, enc, dec, data).checkpoint())
    model = SSformer(enc, dec, seed=5)
    path = tmp_path / "m.ssfm"
    save_checkpoint(path, from_model(model))
    rebuilt = load_checkpoint(path).build_model()
    roundtrip = all(p.data.tobytes() == q.data.tobytes()
                    for (_, p), (_, q) in zip(model.named_parameters(), rebuilt.named_parameters()))
    verdict(9, "determinism", a == b and roundtrip,
            f"identical-seed checkpoints {'bit-identical' if a == b else 'DIFFER'} ({len(a):,} bytes); "
            f"save/load {'bit-exact' if roundtrip else 'NOT bit-exact'}")
