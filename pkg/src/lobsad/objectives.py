"""Loss functions for hypersphere training and the anomaly score.

Three ingredients: the one-class hypersphere loss (mean squared distance of
network outputs to a fixed center), its semi-supervised extension that adds an
inverted-distance term for labeled anomalies, and the Euclidean distance score
used at inference. Plus the autoencoder pretraining loss and the center
initializer. The center is always a fixed constant with respect to gradients.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import nnet
from .errors import ConfigError, DataError, ShapeError
from .nnet import Gradients, MlpModel

_CHUNK = 8192


@dataclass(frozen=True)
class Hypersphere:
    center: np.ndarray  # (d_out,), never updated by gradient steps

    def __post_init__(self):
        c = np.asarray(self.center, dtype=np.float64)
        if not np.isfinite(c).all():
            raise DataError("non-finite hypersphere center")
        object.__setattr__(self, "center", c)


@dataclass(frozen=True)
class SadHyper:
    eta: float = 1.0  # weight of the labeled term
    eps: float = 1e-6  # guard inside the inverted distance
    weight_decay: float = 1e-6

    def __post_init__(self):
        if not self.eta > 0:
            raise ConfigError(f"eta must be > 0, got {self.eta}")
        if not (0 < self.eps <= 1e-3):
            raise ConfigError(f"eps must be in (0, 1e-3], got {self.eps}")
        if self.weight_decay < 0:
            raise ConfigError(f"weight_decay must be >= 0, got {self.weight_decay}")


@dataclass(frozen=True)
class LabeledBatch:
    features: np.ndarray  # (m, d)
    labels: np.ndarray  # (m,), values in {-1, +1}; -1 = anomaly

    def __post_init__(self):
        f = np.atleast_2d(np.asarray(self.features, dtype=np.float64))
        y = np.asarray(self.labels, dtype=np.float64).ravel()
        if f.shape[0] != y.shape[0]:
            raise ShapeError(f"{f.shape[0]} feature rows vs {y.shape[0]} labels")
        if y.size and not np.isin(y, (-1.0, 1.0)).all():
            raise DataError(f"labels must be in {{-1, +1}}, got {np.unique(y)}")
        object.__setattr__(self, "features", f)
        object.__setattr__(self, "labels", y)

    def __len__(self) -> int:
        return self.features.shape[0]

    @staticmethod
    def empty(dim: int) -> "LabeledBatch":
        return LabeledBatch(np.zeros((0, dim)), np.zeros(0))


def ae_loss(model: MlpModel, batch: np.ndarray) -> tuple[float, Gradients]:
    """Mean squared reconstruction error, (1/B) sum ||phi(x) - x||^2."""
    if model.input_dim != model.output_dim:
        raise ConfigError(
            f"autoencoder needs input dim == output dim, got "
            f"{model.input_dim} vs {model.output_dim}"
        )
    batch = np.atleast_2d(np.asarray(batch, dtype=np.float64))
    out, tape = nnet.forward(model, batch)
    diff = out - batch
    n = batch.shape[0]
    loss = float(np.sum(diff * diff) / n)
    grads = nnet.backward(model, tape, (2.0 / n) * diff)
    return loss, grads


def init_center(model: MlpModel, features: np.ndarray, nudge: float = 1e-3) -> Hypersphere:
    """Center = mean network output over all rows, computed in one streaming pass.

    Coordinates within `nudge` of zero are pushed out to +-nudge so the sphere
    cannot trivially collapse onto the origin of a dead-ReLU output.
    """
    features = np.atleast_2d(np.asarray(features, dtype=np.float64))
    n = features.shape[0]
    if n == 0:
        raise DataError("cannot initialize center from an empty dataset")
    acc = np.zeros(model.output_dim)
    for lo in range(0, n, _CHUNK):
        out, _ = nnet.forward(model, features[lo:lo + _CHUNK])
        acc += out.sum(axis=0)
    c = acc / n
    small = np.abs(c) < nudge
    c[small] = np.where(c[small] >= 0, nudge, -nudge)
    return Hypersphere(center=c)


def _center_loss(model: MlpModel, batch: np.ndarray, center: np.ndarray,
                 denom: int) -> tuple[float, Gradients]:
    """sum ||phi(x)-c||^2 / denom with exact gradients; shared by both objectives."""
    out, tape = nnet.forward(model, batch)
    if out.shape[1] != center.shape[0]:
        raise ShapeError(f"output dim {out.shape[1]} != center dim {center.shape[0]}")
    diff = out - center
    loss = float(np.sum(diff * diff) / denom)
    grads = nnet.backward(model, tape, (2.0 / denom) * diff)
    return loss, grads


def svdd_loss(model: MlpModel, batch: np.ndarray,
              sphere: Hypersphere) -> tuple[float, Gradients]:
    """One-class loss: (1/n) sum ||phi(x_i) - c||^2 over the batch."""
    batch = np.atleast_2d(np.asarray(batch, dtype=np.float64))
    if batch.shape[0] == 0:
        raise DataError("svdd_loss needs a nonempty batch")
    return _center_loss(model, batch, sphere.center, batch.shape[0])


def sad_loss(model: MlpModel, unlabeled: np.ndarray, labeled: LabeledBatch,
             sphere: Hypersphere, hyper: SadHyper) -> tuple[float, Gradients]:
    """Semi-supervised loss.

    (1/(n+m)) sum_i ||phi(x_i)-c||^2
      + (eta/(n+m)) sum_j (||phi(x~_j)-c||^2 + eps)^(y_j)

    y_j = +1 replicates the unlabeled pull toward c; y_j = -1 inverts the
    distance and pushes the representation away from c. With m = 0 this is
    bit-for-bit the one-class loss on the same batch.
    """
    unlabeled = np.atleast_2d(np.asarray(unlabeled, dtype=np.float64))
    n_b, m = unlabeled.shape[0], len(labeled)
    if n_b + m == 0:
        raise DataError("sad_loss needs at least one sample")
    total = n_b + m
    if n_b:
        loss, grads = _center_loss(model, unlabeled, sphere.center, total)
    else:
        loss, grads = 0.0, Gradients(tuple(
            (np.zeros_like(lp.weights), np.zeros_like(lp.bias))
            for lp in model.layers))
    if m == 0:
        return loss, grads

    out_l, tape_l = nnet.forward(model, labeled.features)
    diff_l = out_l - sphere.center
    d2 = np.sum(diff_l * diff_l, axis=1) + hyper.eps
    y = labeled.labels
    terms = d2 ** y
    loss_l = float(hyper.eta / total * np.sum(terms))
    # d/d(d2) of d2**y is y * d2**(y-1); chain through d2 = ||phi - c||^2
    coeff = (hyper.eta / total) * y * d2 ** (y - 1.0)
    grads_l = nnet.backward(model, tape_l, 2.0 * coeff[:, None] * diff_l)
    return loss + loss_l, grads + grads_l


def anomaly_score(model: MlpModel, points: np.ndarray,
                  sphere: Hypersphere) -> np.ndarray:
    """s(x) = ||phi(x) - c||, the Euclidean (not squared) distance to the center."""
    points = np.atleast_2d(np.asarray(points, dtype=np.float64))
    scores = np.empty(points.shape[0])
    for lo in range(0, points.shape[0], _CHUNK):
        out, _ = nnet.forward(model, points[lo:lo + _CHUNK])
        diff = out - sphere.center
        scores[lo:lo + out.shape[0]] = np.sqrt(np.sum(diff * diff, axis=1))
    return scores
