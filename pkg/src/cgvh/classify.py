"""Detector-region readout, diffractive classification and phase-mask training.

Training differentiates the region-energy loss through the whole stack with
a hand-written reverse (adjoint) pass: each propagation's adjoint is the same
angular-spectrum step with the conjugated transfer function, and each panel's
adjoint multiplies by the conjugate transmission.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import EmptyClass, EmptyDataset, InvalidField, LabelOutOfRange, ShapeMismatch
from .field import AmplitudeField, intensity
from .optics import MAX_ABSORPTION, DiffractivePanel, _forward_array, _propagate_array

__all__ = [
    "DetectorRegions",
    "LabeledPattern",
    "TrainConfig",
    "default_regions",
    "region_readout",
    "predict",
    "predict_batch",
    "accuracy",
    "loss_and_gradient",
    "train_phase_masks",
    "EuclideanClassifier",
    "euclidean_classifier",
]

LOSSES = ("softmax_region_energy", "margin")


class DetectorRegions:
    """K disjoint pixel sets on the detector (flat row-major indices)."""

    def __init__(self, grid_side, regions):
        self.grid_side = int(grid_side)
        regs = tuple(np.unique(np.asarray(r, dtype=np.int64)) for r in regions)
        if len(regs) < 2:
            raise InvalidField("need at least two detector regions")
        dim = self.grid_side ** 2
        seen = np.zeros(dim, dtype=bool)
        for k, r in enumerate(regs):
            if r.size == 0:
                raise InvalidField(f"region {k} is empty")
            if r[0] < 0 or r[-1] >= dim:
                raise InvalidField(f"region {k} has indices outside [0, {dim})")
            if np.any(seen[r]):
                raise InvalidField(f"region {k} overlaps an earlier region")
            seen[r] = True
        self.regions = regs
        mask = np.zeros((len(regs), dim))
        for k, r in enumerate(regs):
            mask[k, r] = 1.0
        mask.setflags(write=False)
        self.mask = mask

    @property
    def count(self):
        return len(self.regions)

    @property
    def sizes(self):
        return np.array([r.size for r in self.regions])

    def to_lists(self):
        return [r.tolist() for r in self.regions]

    def __repr__(self):
        return f"DetectorRegions(N={self.grid_side}, K={self.count}, sizes={self.sizes.tolist()})"


def default_regions(grid_side, count, tile=None):
    """``count`` equal square tiles, each centred in one cell of a grid layout."""
    cols = math.ceil(math.sqrt(count))
    rows = math.ceil(count / cols)
    cell_h = grid_side / rows
    cell_w = grid_side / cols
    if tile is None:
        tile = max(1, int(min(cell_h, cell_w) // 2))
    if tile > min(cell_h, cell_w):
        raise InvalidField(f"tile {tile} does not fit in a {cell_h:g} x {cell_w:g} cell")
    regions = []
    for k in range(count):
        r, c = divmod(k, cols)
        r0 = int(math.floor((r + 0.5) * cell_h - tile / 2))
        c0 = int(math.floor((c + 0.5) * cell_w - tile / 2))
        rr, cc = np.meshgrid(np.arange(r0, r0 + tile), np.arange(c0, c0 + tile), indexing="ij")
        regions.append((rr * grid_side + cc).ravel())
    return DetectorRegions(grid_side, regions)


@dataclass(frozen=True, eq=False)
class LabeledPattern:
    field: AmplitudeField
    label: int

    def __post_init__(self):
        if abs(np.linalg.norm(self.field.vector) - 1.0) > 1e-12:
            raise InvalidField("pattern field must have unit L2 norm")
        if int(self.label) != self.label or self.label < 0:
            raise LabelOutOfRange(f"bad label {self.label!r}")


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 10.0
    iterations: int = 100
    optimize_absorption: bool = False
    seed: int = 0
    loss: str = "softmax_region_energy"
    temperature: float = 1.0
    margin: float = 0.05

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")
        if self.iterations < 0:
            raise ValueError("iterations must be >= 0")
        if self.loss not in LOSSES:
            raise ValueError(f"loss must be one of {LOSSES}")
        if not self.temperature > 0:
            raise ValueError("temperature must be positive")


def _noise_rng(seed):
    return np.random.default_rng(np.random.SeedSequence(seed))


def region_readout(image, regions, noise_sigma=0.0, rng_seed=0):
    """Sum the (noisy) intensity over each region.

    Noise is i.i.d. Gaussian per detector pixel, drawn from a generator seeded
    with ``rng_seed`` (an int or a sequence of ints).
    """
    if image.grid_side != regions.grid_side:
        raise ShapeMismatch(f"image grid {image.grid_side} != regions grid {regions.grid_side}")
    values = image.vector
    if noise_sigma > 0:
        values = values + _noise_rng(rng_seed).normal(0.0, noise_sigma, values.size)
    return regions.mask @ values


def predict(stack, regions, field, noise_sigma=0.0, seed=0):
    """Index of the brightest region (lowest index on ties) and all scores."""
    if stack.grid_side != regions.grid_side:
        raise ShapeMismatch("stack and regions grids differ")
    scores = region_readout(intensity(_forward_field(stack, field)), regions, noise_sigma, seed)
    return int(np.argmax(scores)), scores


def _forward_field(stack, field):
    if field.grid_side != stack.grid_side:
        raise ShapeMismatch(f"field grid {field.grid_side} != stack grid {stack.grid_side}")
    return field.with_data(_forward_array(stack, field.data))


def _stack_patterns(dataset, n_classes=None):
    if len(dataset) == 0:
        raise EmptyDataset("dataset is empty")
    X = np.stack([p.field.data for p in dataset])
    y = np.array([p.label for p in dataset], dtype=np.int64)
    if n_classes is not None and np.any(y >= n_classes):
        raise LabelOutOfRange(f"label {int(y.max())} >= number of classes {n_classes}")
    return X, y


def predict_batch(stack, regions, X, noise_sigma=0.0, seed=0, repeats=1):
    """Predicted classes for a batch of input arrays, shape ``(repeats, S)``.

    Repeat ``r`` draws its detector noise from the stream ``[seed, r]``.
    """
    S = X.shape[0]
    out = _forward_array(stack, X).reshape(S, -1)
    clean = out.real ** 2 + out.imag ** 2
    preds = np.empty((repeats, S), dtype=np.int64)
    for r in range(repeats):
        img = clean
        if noise_sigma > 0:
            img = clean + _noise_rng([seed, r]).normal(0.0, noise_sigma, clean.shape)
        preds[r] = np.argmax(img @ regions.mask.T, axis=1)
    return preds


def accuracy(stack, regions, dataset, noise_sigma=0.0, seed=0, repeats=1):
    """Fraction of correct predictions over ``repeats`` noise draws per pattern."""
    X, y = _stack_patterns(dataset, regions.count)
    preds = predict_batch(stack, regions, X, noise_sigma, seed, repeats)
    return float(np.mean(preds == y[None, :]))


def _loss_grad_scores(scores, y, config):
    """Mean loss over samples and its derivative with respect to the scores."""
    S, K = scores.shape
    rows = np.arange(S)
    if config.loss == "softmax_region_energy":
        z = scores / config.temperature
        z = z - z.max(axis=1, keepdims=True)
        logp = z - np.log(np.sum(np.exp(z), axis=1, keepdims=True))
        loss = -np.mean(logp[rows, y])
        d = np.exp(logp)
        d[rows, y] -= 1.0
        return loss, d / (config.temperature * S)
    # multiclass hinge on score differences
    gap = config.margin - (scores[rows, y][:, None] - scores)
    gap[rows, y] = 0.0
    active = gap > 0
    loss = np.sum(np.where(active, gap, 0.0)) / S
    d = active.astype(np.float64)
    d[rows, y] = -active.sum(axis=1)
    return loss, d / S


def loss_and_gradient(stack, regions, X, y, config):
    """Loss and its gradients w.r.t. every panel's phase and absorption.

    ``X`` is a batch of input fields ``(S, N, N)``. Returns
    ``(loss, grad_phase, grad_absorption)`` with one ``(N, N)`` array per panel.
    """
    specs = stack.propagations
    u = _propagate_array(X, specs[0])
    stored = []
    for panel, spec in zip(stack.panels, specs[1:]):
        u = u * panel.transmission
        stored.append(u)
        u = _propagate_array(u, spec)
    S = X.shape[0]
    flat = u.reshape(S, -1)
    scores = (flat.real ** 2 + flat.imag ** 2) @ regions.mask.T
    loss, dscores = _loss_grad_scores(scores, y, config)

    # adjoint of |.|^2: 2 * dL/dI * field
    lam = (2.0 * (dscores @ regions.mask)).reshape(u.shape) * u
    grad_b = [None] * stack.depth
    grad_a = [None] * stack.depth
    for l in range(stack.depth - 1, -1, -1):
        lam = _propagate_array(lam, specs[l + 1], adjoint=True)
        z = np.conj(lam) * stored[l]
        grad_b[l] = -np.sum(z.imag, axis=0)
        grad_a[l] = -np.sum(z.real, axis=0)
        lam = lam * np.conj(stack.panels[l].transmission)
    return float(loss), grad_b, grad_a


def train_phase_masks(initial_stack, regions, dataset, config):
    """Plain gradient descent on the panels' phases (and optionally absorptions).

    Returns the trained stack and the loss evaluated before each update.
    Absorptions stay clamped to ``[0, MAX_ABSORPTION]`` so the stack remains
    passive.
    """
    X, y = _stack_patterns(dataset, regions.count)
    if initial_stack.grid_side != regions.grid_side:
        raise ShapeMismatch("stack and regions grids differ")
    stack = initial_stack
    losses = []
    for _ in range(config.iterations):
        loss, gb, ga = loss_and_gradient(stack, regions, X, y, config)
        losses.append(loss)
        panels = []
        for panel, db, da in zip(stack.panels, gb, ga):
            b = panel.phase - config.learning_rate * db
            a = panel.absorption
            if config.optimize_absorption:
                a = np.clip(a - config.learning_rate * da, 0.0, MAX_ABSORPTION)
            panels.append(DiffractivePanel(a, b))
        stack = stack.with_panels(panels)
    return stack, np.array(losses)


class EuclideanClassifier:
    """Nearest class centroid under the complex L2 distance."""

    def __init__(self, centroids):
        self.centroids = np.asarray(centroids, dtype=np.complex128)

    @property
    def n_classes(self):
        return self.centroids.shape[0]

    def distances(self, field):
        return np.linalg.norm(self.centroids - field.vector[None, :], axis=1)

    def classify(self, field):
        return int(np.argmin(self.distances(field)))

    def accuracy(self, dataset):
        hits = sum(self.classify(p.field) == p.label for p in dataset)
        return hits / len(dataset)


def euclidean_classifier(train, n_classes=None):
    X, y = _stack_patterns(train)
    if n_classes is None:
        n_classes = int(y.max()) + 1
    X = X.reshape(len(y), -1)
    centroids = []
    for k in range(n_classes):
        members = X[y == k]
        if members.shape[0] == 0:
            raise EmptyClass(f"class {k} has no training samples")
        centroids.append(members.mean(axis=0))
    return EuclideanClassifier(np.array(centroids))
