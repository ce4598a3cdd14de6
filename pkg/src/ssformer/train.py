"""Training and evaluation loops."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, List, Optional, Sequence

import numpy as np

from . import ops
from .checkpoint import Checkpoint, from_model, load_checkpoint
from .config import TrainConfig
from .data import Sample
from .decoder import DecoderConfig, SSformer
from .encoder import EncoderConfig
from .errors import ContractError, DataError, DivergenceError, NumericError
from .metrics import ConfusionMatrix, miou, pixel_accuracy
from .optim import AdamW
from .tensor import Tensor, backward, no_grad

logger = logging.getLogger(__name__)


@dataclass
class TrainResult:
    model: SSformer
    optimizer: AdamW
    train_cfg: TrainConfig
    history: List[dict] = field(default_factory=list)

    @property
    def losses(self) -> List[float]:
        return [e["loss"] for e in self.history if e["event"] == "train"]

    def checkpoint(self, include_optimizer: bool = True) -> Checkpoint:
        return from_model(self.model, self.train_cfg.to_dict(),
                          self.optimizer.state if include_optimizer else None)


def stack(samples: Sequence[Sample]):
    shapes = {s.image.shape for s in samples}
    if len(shapes) != 1:
        raise DataError(f"cannot batch samples of different sizes: {sorted(shapes)}")
    return np.stack([s.image for s in samples]), np.stack([s.label for s in samples])


def batches(n: int, batch_size: int, rng: np.random.Generator):
    """Endless stream of index batches, reshuffled every epoch."""
    while True:
        order = rng.permutation(n)
        for start in range(0, n, batch_size):
            chunk = order[start:start + batch_size]
            if len(chunk) < batch_size and n >= batch_size:
                break
            yield chunk


def train(train_cfg: TrainConfig, enc_cfg: EncoderConfig, dec_cfg: DecoderConfig,
          dataset: Sequence[Sample], eval_dataset: Optional[Sequence[Sample]] = None,
          on_event: Optional[Callable[[dict], None]] = None) -> TrainResult:
    """Run ``max_iters`` AdamW steps of pixel-wise cross-entropy.

    Every step logs its pre-update loss; every ``eval_interval`` steps (and
    after the last one) the model is scored on ``eval_dataset``, falling back
    to the training set.
    """
    if not dataset:
        raise ContractError("training dataset is empty")
    model = SSformer(enc_cfg, dec_cfg, seed=train_cfg.seed)
    opt = AdamW(model.named_parameters(), lr=train_cfg.lr, betas=train_cfg.betas,
                eps=train_cfg.eps, weight_decay=train_cfg.weight_decay)
    result = TrainResult(model, opt, train_cfg)
    rng = np.random.default_rng(train_cfg.seed)
    stream = batches(len(dataset), train_cfg.batch_size, rng)
    scoring = eval_dataset if eval_dataset else dataset

    def emit(event: dict):
        result.history.append(event)
        if on_event is not None:
            on_event(event)

    for it in range(train_cfg.max_iters):
        images, labels = stack([dataset[i] for i in next(stream)])
        try:
            loss = ops.cross_entropy(model(Tensor(images)), labels, dec_cfg.ignore_index)
        except NumericError as exc:
            raise DivergenceError(it, str(exc)) from exc
        value = loss.item()
        if not math.isfinite(value):
            raise DivergenceError(it)
        emit({"event": "train", "iter": it, "loss": value})
        opt.zero_grad()
        backward(loss)
        lr = train_cfg.lr * (1.0 - it / train_cfg.max_iters) if train_cfg.lr_decay else train_cfg.lr
        try:
            opt.step(lr)
        except NumericError as exc:
            raise DivergenceError(it, str(exc)) from exc
        last = it == train_cfg.max_iters - 1
        if (it + 1) % train_cfg.eval_interval == 0 or last:
            metrics = evaluate_model(model, scoring, batch_size=train_cfg.batch_size)
            emit({"event": "eval", "iter": it, "miou": metrics["miou"], "pixel_acc": metrics["pixel_acc"]})
            logger.info("iter %d loss %.4f mIoU %.4f", it, value, metrics["miou"])
    opt.zero_grad()
    return result


def _accumulate(cm: ConfusionMatrix, preds: np.ndarray, samples: Sequence[Sample], ignore_index: int):
    for pred, s in zip(preds, samples):
        cm.update(pred, s.label, ignore_index)


def _report(cm: ConfusionMatrix) -> dict:
    mean, per_class = miou(cm)
    return {"miou": mean, "pixel_acc": pixel_accuracy(cm), "per_class": per_class, "num_pixels": cm.total}


def evaluate_model(model: SSformer, dataset: Sequence[Sample], batch_size: int = 8,
                   predictor: Optional[Callable[[Sample], np.ndarray]] = None) -> dict:
    """Accumulate one confusion matrix over ``dataset`` and report mIoU / pixel accuracy.

    ``predictor`` replaces the model (e.g. to feed ground truth back in).
    """
    dec = model.dec_cfg
    cm = ConfusionMatrix(dec.num_classes)
    if predictor is not None:
        for s in dataset:
            cm.update(predictor(s), s.label, dec.ignore_index)
        return _report(cm)
    for start in range(0, len(dataset), batch_size):
        chunk = list(dataset[start:start + batch_size])
        with no_grad():
            try:
                images, _ = stack(chunk)
                preds = model.predict(Tensor(images))
            except DataError:
                preds = [model.predict(Tensor(s.image)) for s in chunk]
        _accumulate(cm, preds, chunk, dec.ignore_index)
    return _report(cm)


def evaluate(checkpoint, dataset: Sequence[Sample], batch_size: int = 8,
             predictor: Optional[Callable[[Sample], np.ndarray]] = None,
             enc_cfg: Optional[EncoderConfig] = None, dec_cfg: Optional[DecoderConfig] = None) -> dict:
    """Score a checkpoint (object or path) on ``dataset``.

    When a model config is passed it must match the checkpoint's digest.
    """
    if not isinstance(checkpoint, Checkpoint):
        checkpoint = load_checkpoint(checkpoint)
    if enc_cfg is not None or dec_cfg is not None:
        checkpoint.check_config(enc_cfg or checkpoint.enc_cfg, dec_cfg or checkpoint.dec_cfg)
    model = checkpoint.build_model()
    return evaluate_model(model, dataset, batch_size, predictor)
