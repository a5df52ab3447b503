"""Finite-difference verification of every operator's backward pass.

Each check builds a scalar loss from random float64 inputs, runs the
analytic backward pass, and compares every input/parameter gradient with
central differences (``h = 1e-5``). The error reported for a tensor is
``max|analytic - numeric| / max(max|analytic|, max|numeric|, 1e-8)``;
a check fails when any tensor's error reaches ``TOLERANCE``.
"""

from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Callable, Iterable

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .autodiff import functional as F
from .baselines import CNNBaseline, MLPBaseline
from .model import DualStreamModel, ModelConfig

STEP = 1e-5
TOLERANCE = 1e-4
SCALE_FLOOR = 1e-8


def numerical_gradient(
    loss_fn: Callable[[], float], array: np.ndarray, h: float = STEP, indices: np.ndarray | None = None
) -> np.ndarray:
    """Central differences of ``loss_fn`` w.r.t. entries of ``array`` (perturbed in place).

    With ``indices`` (flat positions) only those entries are probed and the
    result is a 1-D array aligned with ``indices``.
    """
    flat = array.reshape(-1)
    probe = np.arange(flat.size) if indices is None else np.asarray(indices)
    out = np.zeros(probe.size)
    for n, i in enumerate(probe):
        orig = flat[i]
        flat[i] = orig + h
        up = loss_fn()
        flat[i] = orig - h
        down = loss_fn()
        flat[i] = orig
        out[n] = (up - down) / (2.0 * h)
    return out.reshape(array.shape) if indices is None else out


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = SCALE_FLOOR) -> float:
    scale = max(np.abs(analytic).max(initial=0.0), np.abs(numeric).max(initial=0.0), floor)
    return float(np.abs(analytic - numeric).max(initial=0.0) / scale)


def check_gradients(
    build_loss: Callable[[], Tensor],
    tensors: dict[str, Tensor],
    max_entries: int | None = None,
    rng: np.random.Generator | None = None,
) -> dict[str, float]:
    """Relative error per named tensor for the scalar returned by ``build_loss``.

    ``max_entries`` caps how many entries of each tensor are probed (chosen
    at random with ``rng``); whole tensors are compared otherwise.
    """
    for t in tensors.values():
        t.grad = None
    build_loss().backward()
    analytic = {name: (t.grad if t.grad is not None else np.zeros_like(t.data)).copy() for name, t in tensors.items()}

    def value() -> float:
        with ad.no_grad():
            return build_loss().item()

    errors = {}
    for name, t in tensors.items():
        if max_entries is None or t.size <= max_entries:
            errors[name] = relative_error(analytic[name], numerical_gradient(value, t.data))
        else:
            idx = (rng or np.random.default_rng(0)).choice(t.size, size=max_entries, replace=False)
            numeric = numerical_gradient(value, t.data, indices=idx)
            errors[name] = relative_error(analytic[name].reshape(-1)[idx], numeric)
    return errors


@dataclass
class CheckResult:
    name: str
    max_error: float
    seconds: float

    @property
    def passed(self) -> bool:
        return self.max_error < TOLERANCE


def _leaf(rng: np.random.Generator, *shape: int, low: float | None = None) -> Tensor:
    data = rng.uniform(low, 1.0, size=shape) if low is not None else rng.normal(size=shape)
    return Tensor(data, requires_grad=True)


# individual operator checks --------------------------------------------------

def _conv(rng):
    x, k, b = _leaf(rng, 2, 3, 6, 5), _leaf(rng, 4, 3, 3, 3), _leaf(rng, 4)
    w = rng.normal(size=(2, 4, 6, 5))
    return lambda: (F.conv2d(x, k, b, stride=1, padding=1) * Tensor(w)).sum(), {"input": x, "kernels": k, "bias": b}


def _conv_strided(rng):
    x, k = _leaf(rng, 2, 2, 7, 7), _leaf(rng, 3, 2, 3, 3)
    w = rng.normal(size=(2, 3, 3, 3))
    return lambda: (F.conv2d(x, k, None, stride=2, padding=0) * Tensor(w)).sum(), {"input": x, "kernels": k}


def _maxpool(rng):
    x = _leaf(rng, 2, 3, 6, 6)
    w = rng.normal(size=(2, 3, 3, 3))
    return lambda: (F.maxpool2d(x, 2, 2) * Tensor(w)).sum(), {"input": x}


def _maxpool_overlap(rng):
    x = _leaf(rng, 1, 2, 5, 5)
    w = rng.normal(size=(1, 2, 3, 3))
    return lambda: (F.maxpool2d(x, 3, 1) * Tensor(w)).sum(), {"input": x}


def _batchnorm(training: bool):
    def build(rng):
        x, g, b = _leaf(rng, 3, 2, 4, 3), _leaf(rng, 2), _leaf(rng, 2)
        stats = F.RunningStats(mean=rng.normal(size=2), var=rng.uniform(0.5, 2.0, size=2))
        w = rng.normal(size=(3, 2, 4, 3))

        def loss():
            # training mode would update the running stats; keep a fresh copy per call
            s = F.RunningStats(stats.mean, stats.var)
            return (F.batchnorm(x, g, b, s, training) * Tensor(w)).sum()

        return loss, {"input": x, "gamma": g, "beta": b}

    return build


def _leaky(rng):
    x = _leaf(rng, 4, 5)
    # keep inputs away from the kink so the difference quotient is smooth
    x.data[np.abs(x.data) < 0.05] += 0.1
    w = rng.normal(size=(4, 5))
    return lambda: (F.leaky_relu(x, 0.1) * Tensor(w)).sum(), {"input": x}


def _glu(rng):
    y = _leaf(rng, 2, 6, 3, 2)
    w = rng.normal(size=(2, 3, 3, 2))
    return lambda: (F.gated_linear_unit(y, axis=1) * Tensor(w)).sum(), {"input": y}


def _fc(rng):
    x, w, b = _leaf(rng, 3, 5), _leaf(rng, 5, 4), _leaf(rng, 4)
    r = rng.normal(size=(3, 4))
    return lambda: (F.fully_connected(x, w, b) * Tensor(r)).sum(), {"input": x, "weight": w, "bias": b}


def _softmax_nll(rng):
    logits = _leaf(rng, 4, 5)
    labels = F.one_hot(rng.integers(0, 5, size=4), 5)
    return lambda: F.softmax_nll(logits, labels), {"logits": logits}


def _structural(rng):
    a, b = _leaf(rng, 2, 3, 4), _leaf(rng, 2, 2, 4)
    w = rng.normal(size=(2, 4, 2))

    def loss():
        joined = F.concat([a, b], axis=1)                 # (2, 5, 4)
        picked = joined[:, 1:5, :].reshape((2, 4, 2, 2))  # index + reshape
        return ((picked * picked).sum() + (F.reshape(picked, (2, 4, 4))[:, :, :2] * Tensor(w)).sum()) / 2.0

    return loss, {"a": a, "b": b}


def tiny_model_config(**overrides) -> ModelConfig:
    base = dict(
        m=4, length=8, n_features=8, n_classes=3, lfe_c=3, mfe_c=4, hfe_dim=5, seed=11,
    )
    base.update(overrides)
    return ModelConfig(**base)


# whole networks are probed on a random subset of each parameter's entries
MODEL_ENTRIES = 6


def _model_check(model, inputs: tuple, labels: np.ndarray, n_classes: int):
    targets = F.one_hot(labels, n_classes)
    return lambda: F.softmax_nll(model(*inputs), targets), dict(model.params), MODEL_ENTRIES


def _dual_stream(rng):
    cfg = tiny_model_config()
    model = DualStreamModel(cfg)
    xt = rng.normal(size=(4,) + cfg.input_shape("temporal"))
    xs = rng.normal(size=(4,) + cfg.input_shape("structural"))
    return _model_check(model, (xt, xs), np.array([0, 2, 1, 2]), cfg.n_classes)


def _dual_stream_no_gating(rng):
    cfg = tiny_model_config(enable_gating=False, enable_structural_stream=False)
    model = DualStreamModel(cfg)
    xt = rng.normal(size=(4,) + cfg.input_shape("temporal"))
    return _model_check(model, (xt, None), np.array([1, 0, 0, 2]), cfg.n_classes)


def _mlp(rng):
    model = MLPBaseline((3, 4, 2), 3, hidden=6, seed=5)
    x = rng.normal(size=(3, 3, 4, 2))
    return _model_check(model, (x, None), np.array([0, 1, 2]), 3)


def _cnn(rng):
    model = CNNBaseline((3, 8, 4), 3, channels=(3, 4, 4), seed=5)
    x = rng.normal(size=(2, 3, 8, 4))
    return _model_check(model, (x, None), np.array([2, 1]), 3)


CHECKS: dict[str, Callable] = {
    "conv2d": _conv,
    "conv2d_stride2": _conv_strided,
    "maxpool2d": _maxpool,
    "maxpool2d_overlap": _maxpool_overlap,
    "batchnorm_train": _batchnorm(True),
    "batchnorm_eval": _batchnorm(False),
    "leaky_relu": _leaky,
    "gated_linear_unit": _glu,
    "fully_connected": _fc,
    "softmax_nll": _softmax_nll,
    "concat_index_reshape": _structural,
    "dual_stream_model": _dual_stream,
    "dual_stream_ablated": _dual_stream_no_gating,
    "mlp_baseline": _mlp,
    "cnn_baseline": _cnn,
}


def run_checks(names: Iterable[str] | None = None, seed: int = 0) -> list[CheckResult]:
    results = []
    for i, name in enumerate(CHECKS if names is None else names):
        rng = np.random.Generator(np.random.PCG64([seed, i]))
        start = time.perf_counter()
        loss_fn, tensors, *cap = CHECKS[name](rng)
        errors = check_gradients(loss_fn, tensors, cap[0] if cap else None, rng)
        results.append(CheckResult(name, max(errors.values()), time.perf_counter() - start))
    return results
