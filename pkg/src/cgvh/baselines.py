"""Small electronic reference classifiers on the raw input field.

The network reads the 2N^2 real and imaginary components. With
``activation="square"`` each hidden stage squares an affine map of its input,
i.e. it detects intensities and feeds them to the next affine stage. With
``activation="linear"`` the layers collapse into one affine map and serve as
the control.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .classify import _stack_patterns

__all__ = ["MLPConfig", "MLPClassifier", "nonlinear_baseline", "linear_readout"]

ACTIVATIONS = ("square", "linear")


@dataclass(frozen=True)
class MLPConfig:
    activation: str = "square"
    learning_rate: float = 0.01
    iterations: int = 600
    weight_decay: float = 1e-4
    seed: int = 0
    standardize: bool = True

    def __post_init__(self):
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"activation must be one of {ACTIVATIONS}")
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")
        if self.iterations < 0:
            raise ValueError("iterations must be >= 0")


def _features(X):
    flat = X.reshape(X.shape[0], -1)
    return np.concatenate([flat.real, flat.imag], axis=1)


class MLPClassifier:
    def __init__(self, weights, biases, activation, mean, scale):
        self.weights = weights
        self.biases = biases
        self.activation = activation
        self.mean = mean
        self.scale = scale

    def _act(self, z):
        return z * z if self.activation == "square" else z

    def logits(self, X):
        h = (_features(X) - self.mean) / self.scale
        for W, b in zip(self.weights[:-1], self.biases[:-1]):
            h = self._act(h @ W + b)
        return h @ self.weights[-1] + self.biases[-1]

    def predict(self, X):
        return np.argmax(self.logits(X), axis=1)

    def classify(self, field):
        return int(self.predict(field.data[None])[0])

    def accuracy(self, dataset):
        X, y = _stack_patterns(dataset)
        return float(np.mean(self.predict(X) == y))


def _fit(X, y, n_classes, sizes, config):
    rng = np.random.default_rng(config.seed)
    F = _features(X)
    mean = F.mean(axis=0) if config.standardize else np.zeros(F.shape[1])
    scale = np.ones(F.shape[1])
    if config.standardize:
        std = F.std(axis=0)
        live = std > 1e-12 * max(std.max(), 1e-300)
        scale[live] = std[live]
    H0 = (F - mean) / scale

    dims = [F.shape[1], *sizes, n_classes]
    Ws = [rng.standard_normal((a, b)) / np.sqrt(a) for a, b in zip(dims[:-1], dims[1:])]
    bs = [np.zeros(b) for b in dims[1:]]
    params = Ws + bs
    m = [np.zeros_like(p) for p in params]
    v = [np.zeros_like(p) for p in params]
    S = len(y)
    onehot = np.eye(n_classes)[y]
    square = config.activation == "square"
    beta1, beta2, eps = 0.9, 0.999, 1e-8
    for it in range(1, config.iterations + 1):
        # forward, keeping pre-activations
        acts = [H0]
        pres = []
        h = H0
        for W, b in zip(Ws[:-1], bs[:-1]):
            z = h @ W + b
            pres.append(z)
            h = z * z if square else z
            acts.append(h)
        logits = h @ Ws[-1] + bs[-1]
        logits = logits - logits.max(axis=1, keepdims=True)
        p = np.exp(logits)
        p /= p.sum(axis=1, keepdims=True)
        g = (p - onehot) / S
        gW = [None] * len(Ws)
        gb = [None] * len(bs)
        for l in range(len(Ws) - 1, -1, -1):
            gW[l] = acts[l].T @ g + config.weight_decay * Ws[l]
            gb[l] = g.sum(axis=0)
            if l > 0:
                g = g @ Ws[l].T
                if square:
                    g = g * 2 * pres[l - 1]
        grads = gW + gb
        for i, (pa, gr) in enumerate(zip(params, grads)):
            m[i] = beta1 * m[i] + (1 - beta1) * gr
            v[i] = beta2 * v[i] + (1 - beta2) * gr * gr
            mh = m[i] / (1 - beta1 ** it)
            vh = v[i] / (1 - beta2 ** it)
            pa -= config.learning_rate * mh / (np.sqrt(vh) + eps)
    return MLPClassifier(Ws, bs, config.activation, mean, scale)


def nonlinear_baseline(train, arch=(16,), config=None, n_classes=None):
    """Fully connected network trained with full-batch Adam on cross-entropy.

    ``arch`` lists hidden-layer widths and must contain at least one
    positive width.
    """
    config = config or MLPConfig()
    arch = tuple(int(a) for a in arch)
    if len(arch) == 0 or any(a < 1 for a in arch):
        raise ValueError(f"arch needs at least one hidden layer of width >= 1, got {arch}")
    X, y = _stack_patterns(train)
    n_classes = n_classes or int(y.max()) + 1
    return _fit(X, y, n_classes, arch, config)


def linear_readout(train, config=None, n_classes=None):
    """Single affine layer + softmax: the collapsed form of any linear network."""
    config = config or MLPConfig(activation="linear")
    X, y = _stack_patterns(train)
    n_classes = n_classes or int(y.max()) + 1
    return _fit(X, y, n_classes, (), config)
