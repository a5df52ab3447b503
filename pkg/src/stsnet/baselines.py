"""Reference classifiers: k-nearest neighbours, Gaussian naive Bayes, an MLP and a small CNN.

All of them read the temporal-stream tensor ``(m, T, f)`` of each sequence;
KNN and GNB see it flattened.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import Tensor, flatten, fully_connected, leaky_relu, maxpool2d
from .errors import InputError
from .nn import Module
from .trainer import TensorDataset, TrainConfig, evaluate, train

GNB_VAR_FLOOR = 1e-9


def flat_features(data: TensorDataset) -> np.ndarray:
    return data.tdf.reshape(len(data), -1)


# k-nearest neighbours ----------------------------------------------------------

def _vote(neighbor_labels: np.ndarray) -> int:
    values, counts = np.unique(neighbor_labels, return_counts=True)
    # np.unique sorts, so argmax picks the smallest label among the most frequent
    return int(values[np.argmax(counts)])


def knn_classify(train_x: np.ndarray, train_y: np.ndarray, query: np.ndarray, k: int = 5) -> int:
    """Majority label of the ``k`` Euclidean-nearest training points.

    Distance ties keep the lower training index; vote ties pick the smaller
    label.
    """
    if len(train_x) == 0:
        raise InputError("empty training set")
    if not 1 <= k <= len(train_x):
        raise InputError(f"k must lie in [1, {len(train_x)}], got {k}")
    dist = np.sum((train_x - query) ** 2, axis=1)
    nearest = np.argsort(dist, kind="stable")[:k]
    return _vote(train_y[nearest])


def knn_predict(train_x: np.ndarray, train_y: np.ndarray, queries: np.ndarray, k: int = 5) -> np.ndarray:
    """:func:`knn_classify` applied to every row of ``queries``."""
    return np.array([knn_classify(train_x, train_y, q, k) for q in queries], dtype=np.int64)


# Gaussian naive Bayes ------------------------------------------------------------

@dataclass
class GaussianNB:
    n_classes: int
    var_floor: float = GNB_VAR_FLOOR

    def fit(self, x: np.ndarray, y: np.ndarray) -> "GaussianNB":
        present = set(np.unique(y).tolist())
        missing = [c for c in range(self.n_classes) if c not in present]
        if missing:
            raise InputError(f"classes absent from the training set: {missing}")
        self.means = np.stack([x[y == c].mean(axis=0) for c in range(self.n_classes)])
        self.vars = np.maximum(np.stack([x[y == c].var(axis=0) for c in range(self.n_classes)]), self.var_floor)
        self.log_prior = np.log(np.array([np.mean(y == c) for c in range(self.n_classes)]))
        return self

    def log_likelihood(self, x: np.ndarray) -> np.ndarray:
        out = np.empty((len(x), self.n_classes))
        for c in range(self.n_classes):
            z = (x - self.means[c]) ** 2 / self.vars[c]
            out[:, c] = self.log_prior[c] - 0.5 * np.sum(np.log(2.0 * np.pi * self.vars[c]) + z, axis=1)
        return out

    def predict(self, x: np.ndarray) -> np.ndarray:
        return np.argmax(self.log_likelihood(x), axis=1)


def gnb_fit_predict(train_x: np.ndarray, train_y: np.ndarray, test_x: np.ndarray, n_classes: int | None = None) -> np.ndarray:
    n_classes = int(train_y.max()) + 1 if n_classes is None else n_classes
    return GaussianNB(n_classes).fit(train_x, train_y).predict(test_x)


# neural baselines ----------------------------------------------------------------

class MLPBaseline(Module):
    """FC(hidden) -> LReLU -> FC(n_classes) on the flattened temporal tensor."""

    def __init__(self, input_shape: tuple[int, int, int], n_classes: int, hidden: int = 128, seed: int = 0):
        super().__init__(seed=seed)
        d = int(np.prod(input_shape))
        self.add_fc("mlp.hidden.fc", d, hidden)
        self.add_fc("mlp.out.fc", hidden, n_classes)

    def forward(self, x_tdf, x_dtf=None) -> Tensor:
        x = flatten(x_tdf if isinstance(x_tdf, Tensor) else Tensor(x_tdf))
        p = self.params
        h = leaky_relu(fully_connected(x, p["mlp.hidden.fc.weight"], p["mlp.hidden.fc.bias"]), self.slope)
        return fully_connected(h, p["mlp.out.fc.weight"], p["mlp.out.fc.bias"])

    __call__ = forward


class CNNBaseline(Module):
    """Three conv k3 -> BN -> LReLU layers, max-pooling after the first two, then FC."""

    def __init__(
        self,
        input_shape: tuple[int, int, int],
        n_classes: int,
        channels: tuple[int, int, int] = (16, 32, 32),
        seed: int = 0,
    ):
        super().__init__(seed=seed)
        c_in, h, w = input_shape
        for i, c in enumerate(channels):
            self.add_conv_bn("cnn.body", str(i), c_in, c, 3)
            c_in = c
        for _ in range(2):
            h, w = h // 2, w // 2
        self.add_fc("cnn.out.fc", c_in * h * w, n_classes)

    def forward(self, x_tdf, x_dtf=None) -> Tensor:
        x = x_tdf if isinstance(x_tdf, Tensor) else Tensor(x_tdf)
        for i in range(3):
            x = self.conv_bn_act(x, "cnn.body", str(i))
            if i < 2:
                x = maxpool2d(x, 2, 2)
        p = self.params
        return fully_connected(flatten(x), p["cnn.out.fc.weight"], p["cnn.out.fc.bias"])

    __call__ = forward


def knn_baseline(train_data: TensorDataset, test_data: TensorDataset, k: int = 5) -> float:
    pred = knn_predict(flat_features(train_data), train_data.labels, flat_features(test_data), k)
    return float(np.mean(pred == test_data.labels))


def gnb_baseline(train_data: TensorDataset, test_data: TensorDataset, n_classes: int) -> float:
    pred = gnb_fit_predict(flat_features(train_data), train_data.labels, flat_features(test_data), n_classes)
    return float(np.mean(pred == test_data.labels))


def mlp_baseline(
    train_data: TensorDataset, test_data: TensorDataset, config: TrainConfig, n_classes: int, hidden: int = 128
) -> float:
    model = MLPBaseline(train_data.tdf.shape[1:], n_classes, hidden, seed=config.seed)
    train(model, train_data, config, n_classes)
    return evaluate(model, test_data)


def cnn_baseline(
    train_data: TensorDataset,
    test_data: TensorDataset,
    config: TrainConfig,
    n_classes: int,
    channels: tuple[int, int, int] = (16, 32, 32),
) -> float:
    model = CNNBaseline(train_data.tdf.shape[1:], n_classes, channels, seed=config.seed)
    train(model, train_data, config, n_classes)
    return evaluate(model, test_data)
