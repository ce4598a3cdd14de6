import statistics

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ssformer import ops
from ssformer.checkpoint import Checkpoint, dumps, from_model, load_checkpoint, loads, save_checkpoint
from ssformer.config import TrainConfig, load_config, model_digest, parse_config, profile
from ssformer.data import synth_dataset
from ssformer.decoder import DecoderConfig, SSformer
from ssformer.encoder import EncoderConfig
from ssformer.errors import ConfigError, ContractError, DivergenceError, FormatError, NumericError
from ssformer.optim import AdamW, AdamWState, adamw_step
from ssformer.tensor import Tensor, backward
from ssformer.train import evaluate, evaluate_model, train

TOY_ENC, TOY_DEC, _ = profile("toy")


def small_data(seed=0, n=16, size=32):
    return synth_dataset(seed, n, size, size, 3)


def reference_adamw(p, g, m, v, t, lr, b1, b2, eps, wd):
    p, g, m, v = (np.asarray(a, dtype=np.float64) for a in (p, g, m, v))
    m = b1 * m + (1 - b1) * g
    v = b2 * v + (1 - b2) * g * g
    mhat = m / (1 - b1 ** t)
    vhat = v / (1 - b2 ** t)
    return p - lr * (mhat / (np.sqrt(vhat) + eps) + wd * p), m, v


class TestAdamW:
    def test_zero_gradient_no_decay_is_identity(self):
        p = {"w": np.array([1.5, -2.0], dtype=np.float32)}
        before = p["w"].copy()
        adamw_step(p, {"w": np.zeros(2, np.float32)}, AdamWState(), lr=1e-3, weight_decay=0.0)
        assert p["w"].tobytes() == before.tobytes()

    def test_zero_gradient_pure_decay(self):
        p = {"w": np.array([1.5, -2.0, 3.25])}
        before = p["w"].copy()
        adamw_step(p, {"w": np.zeros(3)}, AdamWState(), lr=0.1, weight_decay=0.2)
        assert np.array_equal(p["w"], before * (1 - 0.1 * 0.2))

    @pytest.mark.parametrize("g", [3.0, -0.25, 1e-3])
    def test_first_step_is_sign_sized(self, g):
        p = {"w": np.array([0.0])}
        adamw_step(p, {"w": np.array([g])}, AdamWState(), lr=0.01, weight_decay=0.0)
        assert p["w"][0] == pytest.approx(-0.01 * g / (abs(g) + 1e-8), rel=1e-9)

    @settings(max_examples=40, deadline=None)
    @given(st.integers(0, 2 ** 32 - 1), st.integers(1, 6))
    def test_matches_float64_reference(self, seed, steps):
        rng = np.random.default_rng(seed)
        lr, b1, b2, eps = 1e-3, 0.9, 0.999, 1e-8
        p = rng.normal(size=(3, 4)).astype(np.float32)
        params = {"w": p.copy()}
        ref, m, v = p.astype(np.float64), np.zeros((3, 4)), np.zeros((3, 4))
        state = AdamWState()
        for t in range(1, steps + 1):
            g = rng.normal(size=(3, 4)).astype(np.float32)
            adamw_step(params, {"w": g}, state, lr=lr, betas=(b1, b2), eps=eps, weight_decay=0.0)
            ref, m, v = reference_adamw(ref, g, m, v, t, lr, b1, b2, eps, 0.0)
        err = np.abs(params["w"] - ref) / np.maximum(np.abs(ref), 1e-12)
        assert err.max() < 1e-6

    def test_matches_reference_with_decay(self):
        rng = np.random.default_rng(3)
        p = rng.normal(size=5)
        params, state = {"w": p.copy()}, AdamWState()
        ref, m, v = p, np.zeros(5), np.zeros(5)
        for t in range(1, 4):
            g = rng.normal(size=5)
            adamw_step(params, {"w": g}, state, lr=0.01, weight_decay=0.05)
            ref, m, v = reference_adamw(ref, g, m, v, t, 0.01, 0.9, 0.999, 1e-8, 0.05)
        np.testing.assert_allclose(params["w"], ref, rtol=1e-12)

    def test_nan_gradient_names_parameter(self):
        p = {"encoder.x": np.ones(2), "decoder.y": np.ones(2)}
        with pytest.raises(NumericError, match="decoder.y"):
            adamw_step(p, {"encoder.x": np.ones(2), "decoder.y": np.array([0.0, np.nan])}, AdamWState(), lr=1e-3)
        assert np.array_equal(p["encoder.x"], np.ones(2))

    def test_moment_shape_mismatch(self):
        state = AdamWState(m={"w": np.zeros(3)}, v={"w": np.zeros(3)})
        with pytest.raises(ContractError):
            adamw_step({"w": np.ones(2)}, {"w": np.ones(2)}, state, lr=1e-3)

    def test_missing_gradient_is_skipped(self):
        p = {"a": np.ones(2), "b": np.ones(2)}
        state = adamw_step(p, {"a": np.ones(2)}, AdamWState(), lr=0.1)
        assert np.array_equal(p["b"], np.ones(2)) and "b" not in state.m

    def test_wrapper_reads_tensor_grads(self):
        t = Tensor(np.array([1.0, 2.0]), requires_grad=True)
        opt = AdamW({"t": t}, lr=0.1, weight_decay=0.0)
        backward(ops.sum(ops.mul(t, t)))
        opt.step()
        np.testing.assert_allclose(t.data, [0.9, 1.9], rtol=1e-6)


class TestTrainConfig:
    @pytest.mark.parametrize("kwargs", [{"lr": -1.0}, {"betas": (1.0, 0.9)}, {"batch_size": 0},
                                        {"profile": "imagenet"}])
    def test_rejects(self, kwargs):
        with pytest.raises(ConfigError):
            TrainConfig(**kwargs)

    def test_defaults(self):
        cfg = TrainConfig()
        assert (cfg.lr, cfg.betas, cfg.eps, cfg.weight_decay) == (6e-5, (0.9, 0.999), 1e-8, 0.01)

    def test_unknown_key_rejected(self):
        with pytest.raises(ConfigError, match="momentum"):
            parse_config({"train": {"momentum": 0.9}})

    def test_unknown_section_rejected(self):
        with pytest.raises(ConfigError):
            parse_config({"scheduler": {}})

    def test_profile_base_with_overrides(self, tmp_path):
        path = tmp_path / "c.json"
        path.write_text('{"train": {"profile": "toy", "max_iters": 3}, "decoder": {"num_classes": 4}}')
        train_cfg, enc, dec, synth = load_config(path)
        assert train_cfg.max_iters == 3 and enc == TOY_ENC and dec.num_classes == 4

    def test_malformed_json(self, tmp_path):
        path = tmp_path / "c.json"
        path.write_text("{not json")
        with pytest.raises(ConfigError):
            load_config(path)


class TestTraining:
    def test_loss_descends(self):
        finals, starts = [], []
        for seed in range(5):
            cfg = TrainConfig(lr=2e-3, batch_size=4, max_iters=201, eval_interval=1000, seed=seed)
            result = train(cfg, TOY_ENC, TOY_DEC, small_data(seed, n=64))
            starts.append(result.losses[0])
            finals.append(result.losses[200])
        assert statistics.median(finals) < statistics.median(starts)
        assert sum(f < s for f, s in zip(finals, starts)) >= 3

    def test_identical_seeds_identical_checkpoints(self):
        cfg = TrainConfig(lr=1e-3, batch_size=2, max_iters=4, eval_interval=2, seed=11)
        data = small_data()
        a = train(cfg, TOY_ENC, TOY_DEC, data)
        b = train(cfg, TOY_ENC, TOY_DEC, data)
        assert a.losses == b.losses
        assert dumps(a.checkpoint()) == dumps(b.checkpoint())

    def test_different_seeds_differ(self):
        data = small_data()
        a = train(TrainConfig(lr=1e-3, batch_size=2, max_iters=2, seed=1), TOY_ENC, TOY_DEC, data)
        b = train(TrainConfig(lr=1e-3, batch_size=2, max_iters=2, seed=2), TOY_ENC, TOY_DEC, data)
        assert dumps(a.checkpoint()) != dumps(b.checkpoint())

    def test_zero_lr_is_null_optimizer(self):
        cfg = TrainConfig(lr=0.0, weight_decay=0.0, batch_size=2, max_iters=3, seed=4)
        result = train(cfg, TOY_ENC, TOY_DEC, small_data())
        init = SSformer(TOY_ENC, TOY_DEC, seed=4)
        for (name, p), (_, q) in zip(result.model.named_parameters(), init.named_parameters()):
            assert p.data.tobytes() == q.data.tobytes(), name

    def test_events(self):
        events = []
        cfg = TrainConfig(lr=1e-3, batch_size=2, max_iters=5, eval_interval=2)
        train(cfg, TOY_ENC, TOY_DEC, small_data(n=4), small_data(seed=9, n=2), on_event=events.append)
        assert [e["iter"] for e in events if e["event"] == "train"] == list(range(5))
        assert [e["iter"] for e in events if e["event"] == "eval"] == [1, 3, 4]
        assert all(0 <= e["miou"] <= 1 for e in events if e["event"] == "eval")

    def test_ignore_index_respected(self):
        data = small_data(n=4)
        for s in data:
            s.label[:] = 255
            s.label[0, 0] = 1
        cfg = TrainConfig(lr=1e-3, batch_size=2, max_iters=1)
        assert np.isfinite(train(cfg, TOY_ENC, TOY_DEC, data).losses[0])

    def test_divergence_reports_iteration(self):
        cfg = TrainConfig(lr=1e30, weight_decay=0.0, batch_size=2, max_iters=6)
        with pytest.raises(DivergenceError) as info, np.errstate(all="ignore"):
            train(cfg, TOY_ENC, TOY_DEC, small_data(n=4))
        assert 0 <= info.value.iteration < 6
        assert f"iteration {info.value.iteration}" in str(info.value)

    def test_empty_dataset(self):
        with pytest.raises(ContractError):
            train(TrainConfig(max_iters=1), TOY_ENC, TOY_DEC, [])

    def test_every_parameter_gets_gradient(self):
        # 64x64 is the smallest toy input whose stage-4 map spans more than one token
        model = SSformer(TOY_ENC, TOY_DEC, seed=0)
        data = small_data(n=2, size=64)
        images = Tensor(np.stack([s.image for s in data]))
        labels = np.stack([s.label for s in data])
        backward(ops.cross_entropy(model(images), labels))
        norms = {n: float(np.linalg.norm(p.grad)) for n, p in model.named_parameters()}
        assert all(v > 0 for v in norms.values()), [n for n, v in norms.items() if v == 0]


class TestEvaluate:
    def setup_method(self):
        self.data = small_data(n=6)
        self.model = SSformer(TOY_ENC, TOY_DEC, seed=0)

    def test_ground_truth_predictor(self):
        report = evaluate_model(self.model, self.data, predictor=lambda s: s.label)
        assert report["miou"] == 1.0 and report["pixel_acc"] == 1.0

    def test_zero_classifier_predicts_first_class(self):
        self.model.decoder.classifier.weight.data[:] = 0
        self.model.decoder.classifier.bias.data[:] = 0
        report = evaluate_model(self.model, self.data)
        labels = np.concatenate([s.label.ravel() for s in self.data])
        assert report["pixel_acc"] == pytest.approx(np.mean(labels == 0), abs=1e-12)

    def test_dominant_class_accuracy(self):
        labels = np.concatenate([s.label.ravel() for s in self.data])
        dominant = np.bincount(labels).argmax()
        self.model.decoder.classifier.weight.data[:] = 0
        self.model.decoder.classifier.bias.data[:] = 0
        self.model.decoder.classifier.bias.data[dominant] = 1e-3
        report = evaluate_model(self.model, self.data)
        assert report["pixel_acc"] == pytest.approx(np.mean(labels == dominant), abs=1e-12)

    def test_batching_does_not_matter(self):
        whole = evaluate_model(self.model, self.data, batch_size=len(self.data))
        single = evaluate_model(self.model, self.data, batch_size=1)
        assert whole == single

    def test_mixed_sizes(self):
        data = self.data[:2] + synth_dataset(3, 1, 40, 24, 3)
        assert evaluate_model(self.model, data, batch_size=3)["num_pixels"] == 2 * 32 * 32 + 40 * 24

    def test_digest_mismatch(self):
        ckpt = from_model(self.model)
        with pytest.raises(ConfigError):
            evaluate(ckpt, self.data, dec_cfg=DecoderConfig(32, 4))

    def test_from_path(self, tmp_path):
        path = tmp_path / "m.ssfm"
        save_checkpoint(path, from_model(self.model))
        assert evaluate(path, self.data) == evaluate_model(self.model, self.data)


class TestCheckpoint:
    @pytest.mark.parametrize("seed", range(20))
    def test_roundtrip_random_models(self, seed):
        rng = np.random.default_rng(seed)
        enc = EncoderConfig(embed_dim=int(rng.integers(1, 4)) * 4, window_size=int(rng.integers(1, 4)),
                            patch_size=int(rng.integers(1, 5)), depths=[int(v) for v in rng.integers(1, 3, 4)],
                            num_heads=[1, 1, 2, 4])
        model = SSformer(enc, DecoderConfig(int(rng.integers(2, 9)), int(rng.integers(2, 6))), seed=seed)
        back = loads(dumps(from_model(model)))
        assert back.digest == model_digest(enc, model.dec_cfg)
        rebuilt = back.build_model()
        for (name, p), (name2, q) in zip(model.named_parameters(), rebuilt.named_parameters()):
            assert name == name2 and p.data.tobytes() == q.data.tobytes()

    def test_optimizer_state_roundtrip(self, tmp_path):
        cfg = TrainConfig(lr=1e-3, batch_size=2, max_iters=2)
        result = train(cfg, TOY_ENC, TOY_DEC, small_data(n=4))
        path = tmp_path / "c.ssfm"
        save_checkpoint(path, result.checkpoint())
        back = load_checkpoint(path)
        assert back.optimizer.step == 2
        for name, m in result.optimizer.state.m.items():
            assert back.optimizer.m[name].tobytes() == m.tobytes()
        assert back.train_cfg["lr"] == 1e-3

    def test_layout_header(self):
        blob = dumps(from_model(SSformer(TOY_ENC, TOY_DEC)))
        assert blob[:4] == b"SSFM"

    def test_bad_magic(self):
        blob = bytearray(dumps(from_model(SSformer(TOY_ENC, TOY_DEC))))
        blob[:4] = b"XXXX"
        with pytest.raises(FormatError):
            loads(bytes(blob))

    def test_truncated(self):
        blob = dumps(from_model(SSformer(TOY_ENC, TOY_DEC)))
        with pytest.raises(FormatError):
            loads(blob[:-7])

    def test_mismatched_params_rejected(self):
        ckpt = from_model(SSformer(TOY_ENC, TOY_DEC))
        ckpt.params["decoder.classifier.bias"] = np.zeros(5, np.float32)
        with pytest.raises(Exception):
            Checkpoint(ckpt.enc_cfg, ckpt.dec_cfg, ckpt.params).build_model()
