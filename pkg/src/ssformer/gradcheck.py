"""Central finite-difference oracle for analytic gradients.

Everything runs in float64 so the oracle's own rounding error stays far
below the tolerance it checks.
"""
from __future__ import annotations

from typing import Callable, Dict, List, Optional, Sequence

import numpy as np

from . import ops
from .tensor import Tensor, backward, default_dtype, no_grad

DEFAULT_STEP = 1e-3
# relative error is measured against max(|analytic|, |numeric|, REL_FLOOR)
REL_FLOOR = 1e-6


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = REL_FLOOR) -> np.ndarray:
    scale = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return np.abs(analytic - numeric) / scale


def check_function(fn: Callable[..., Tensor], inputs: Sequence[np.ndarray], seed: int = 0,
                   step: float = DEFAULT_STEP, wrt: Optional[Sequence[int]] = None) -> float:
    """Max relative error between backward() and central differences.

    ``fn`` maps tensors to a tensor of any shape; it is reduced to a scalar by
    a fixed random projection so every output element carries weight.
    ``wrt`` selects which inputs are differentiated (default: all).
    """
    wrt = list(range(len(inputs))) if wrt is None else list(wrt)
    inputs = [np.array(a, dtype=np.float64) for a in inputs]
    with default_dtype(np.float64):
        probe = fn(*[Tensor(a) for a in inputs])
        weights = np.random.default_rng(seed).normal(size=probe.shape)

        def scalar(arrays, grad: bool):
            ts = [Tensor(a, requires_grad=grad and i in wrt) for i, a in enumerate(arrays)]
            return ops.sum(ops.mul(fn(*ts), Tensor(weights))), ts

        loss, ts = scalar(inputs, True)
        backward(loss)
        worst = 0.0
        for i in wrt:
            analytic = ts[i].grad
            numeric = np.zeros_like(inputs[i])
            flat = inputs[i].reshape(-1)
            with no_grad():
                for k in range(flat.size):
                    orig = flat[k]
                    flat[k] = orig + step
                    plus = scalar(inputs, False)[0].item()
                    flat[k] = orig - step
                    minus = scalar(inputs, False)[0].item()
                    flat[k] = orig
                    numeric.reshape(-1)[k] = (plus - minus) / (2 * step)
            worst = max(worst, float(relative_error(analytic, numeric).max(initial=0.0)))
        return worst


def check_model(loss_fn: Callable[[], Tensor], named_params: Dict[str, Tensor], per_tensor: int = 3,
                seed: int = 0, step: float = DEFAULT_STEP) -> Dict[str, float]:
    """Spot-check parameter gradients of a float64 model.

    ``loss_fn`` recomputes the scalar loss from the current parameter values.
    ``per_tensor`` random elements of every parameter are perturbed. Returns
    the worst relative error per parameter name.
    """
    rng = np.random.default_rng(seed)
    for p in named_params.values():
        p.grad = None
    backward(loss_fn())
    errors = {}
    for name, p in named_params.items():
        flat = p.data.reshape(-1)
        picks = rng.choice(flat.size, size=min(per_tensor, flat.size), replace=False)
        analytic, numeric = [], []
        for k in picks:
            orig = flat[k]
            with no_grad():
                flat[k] = orig + step
                plus = loss_fn().item()
                flat[k] = orig - step
                minus = loss_fn().item()
            flat[k] = orig
            analytic.append(p.grad.reshape(-1)[k])
            numeric.append((plus - minus) / (2 * step))
        errors[name] = float(relative_error(np.array(analytic), np.array(numeric)).max())
    return errors


def op_cases(rng: np.random.Generator) -> List[tuple]:
    """(name, fn, inputs) for every differentiable op, on small random tensors (<= 64 elements)."""
    r = lambda *s: rng.normal(size=s)  # noqa: E731
    labels = rng.integers(0, 4, size=(3, 2))
    labels[0, 0] = 255
    index = rng.integers(0, 5, size=(6,))
    return [
        ("add", lambda a, b: ops.add(a, b), [r(3, 4), r(4)]),
        ("sub", lambda a, b: ops.sub(a, b), [r(2, 3, 4), r(3, 4)]),
        ("mul", lambda a, b: ops.mul(a, b), [r(3, 4), r(3, 4)]),
        ("matmul", lambda a, b: ops.matmul(a, b), [r(2, 3, 4), r(4, 5)]),
        ("gelu", lambda a: ops.gelu(a), [r(4, 6) * 2]),
        ("reshape", lambda a: ops.reshape(a, (6, 4)), [r(2, 3, 4)]),
        ("permute", lambda a: ops.permute(a, (2, 0, 1)), [r(2, 3, 4)]),
        ("concat", lambda a, b: ops.concat([a, b], axis=1), [r(2, 3, 2), r(2, 2, 2)]),
        ("cyclic_roll", lambda a: ops.cyclic_roll(a, (1, -2), (0, 1)), [r(4, 5, 2)]),
        ("mean", lambda a: ops.mean(a, axis=1), [r(3, 5)]),
        ("sum", lambda a: ops.sum(a, axis=0, keepdims=True), [r(3, 5)]),
        ("softmax", lambda a: ops.softmax(a, axis=-1), [r(4, 5) * 3]),
        ("layernorm", lambda a, g, b: ops.layernorm(a, g, b), [r(3, 2, 6), r(6), r(6)]),
        ("cross_entropy", lambda a: ops.cross_entropy(a, labels, 255), [r(3, 2, 4)]),
        ("bilinear_upsample", lambda a: ops.bilinear_upsample(a, 5, 7), [r(2, 3, 2)]),
        ("getitem", lambda a: a[1:, ::2], [r(4, 5)]),
        ("take", lambda a: ops.take(a, index), [r(5, 3)]),
        ("pad", lambda a: ops.pad(a, [(0, 2), (1, 1), (0, 0)]), [r(3, 3, 2)]),
    ]
