"""Classification losses on predicted class probabilities.

Both losses take post-softmax probabilities of shape [B, 2] plus the true
classes, reduce by the batch mean, and stay differentiable through the
probabilities (and through softmax back to logits). Class 0 is the
positive/rare class and carries the larger default weight.
"""

import dataclasses

import numpy as np

from . import tensor as T
from .errors import ContractError, ParamError, ShapeError

PROB_CLAMP = 1e-7
ROW_SUM_TOL = 1e-5

DEFAULT_GAMMA = 2.0
DEFAULT_CLASS_WEIGHTS = (1.25, 0.833)


@dataclasses.dataclass(frozen=True)
class FocalParams:
    """Focusing exponent and per-class weights for the focal loss."""

    gamma: float = DEFAULT_GAMMA
    class_weights: tuple = DEFAULT_CLASS_WEIGHTS

    def __post_init__(self):
        if self.gamma < 0:
            raise ParamError(f"focal gamma must be >= 0, got {self.gamma}")
        if len(self.class_weights) != 2 or any(w <= 0 for w in self.class_weights):
            raise ParamError(f"class_weights must be two positive floats, got {self.class_weights!r}")


def _as_onehot(labels, n_classes, batch):
    """Accept integer class ids or explicit one-hot rows; return one-hot."""
    arr = np.asarray(labels)
    if arr.ndim == 1:
        if arr.shape[0] != batch:
            raise ShapeError(f"labels length {arr.shape[0]} vs batch {batch}")
        ids = arr.astype(np.int64)
        if np.any(ids < 0) or np.any(ids >= n_classes):
            raise ParamError(f"label ids must lie in [0, {n_classes}), got {sorted(set(ids.tolist()))}")
        onehot = np.zeros((batch, n_classes), dtype=np.float64)
        onehot[np.arange(batch), ids] = 1.0
        return onehot
    if arr.ndim == 2:
        if arr.shape != (batch, n_classes):
            raise ShapeError(f"one-hot labels shape {arr.shape} vs expected ({batch}, {n_classes})")
        onehot = arr.astype(np.float64)
        ok = np.all(np.isin(onehot, (0.0, 1.0))) and np.all(onehot.sum(axis=1) == 1.0)
        if not ok:
            raise ParamError("one-hot labels must have exactly one 1 per row and zeros elsewhere")
        return onehot
    raise ShapeError(f"labels must be rank 1 ids or rank 2 one-hot, got rank {arr.ndim}")


def _check_probs(probs):
    if not isinstance(probs, T.Tensor):
        raise ParamError(f"probs must be a Tensor, got {type(probs).__name__}")
    if probs.ndim != 2:
        raise ShapeError(f"probs must be [batch, classes], got rank {probs.ndim}")
    sums = probs.data.sum(axis=1, dtype=np.float64)
    bad = np.abs(sums - 1.0) > ROW_SUM_TOL
    if np.any(bad):
        i = int(np.flatnonzero(bad)[0])
        raise ContractError(f"probability row {i} sums to {sums[i]!r}, not 1 within {ROW_SUM_TOL}")
    return probs


def _true_class_prob(probs, onehot):
    """Gather each sample's probability of its true class, clamped for log."""
    mask = T.Tensor(onehot.astype(probs.dtype))
    picked = T.tensor_sum(T.mul(probs, mask), axis=1)
    return T.clamp(picked, PROB_CLAMP, 1.0 - PROB_CLAMP)


def focal_loss(probs, labels, params=None):
    """Mean focal loss: weight * (1 - p)^gamma * (-log p) of the true class.

    With gamma 0 this is exactly the weighted cross entropy. Larger gamma
    discounts samples the model already classifies confidently.
    """
    params = FocalParams() if params is None else params
    probs = _check_probs(probs)
    batch, n_classes = probs.shape
    onehot = _as_onehot(labels, n_classes, batch)
    p = _true_class_prob(probs, onehot)
    weights = np.asarray(params.class_weights, dtype=np.float64)
    w = T.Tensor((onehot @ weights).astype(probs.dtype))
    damp = T.pow(T.add(T.negate(p), 1.0), float(params.gamma))
    per_sample = T.mul(T.mul(w, damp), T.negate(T.log(p)))
    return T.tensor_mean(per_sample)


def cross_entropy(probs, labels, class_weights=None):
    """Mean negative log probability of the true class, optionally weighted."""
    probs = _check_probs(probs)
    batch, n_classes = probs.shape
    onehot = _as_onehot(labels, n_classes, batch)
    p = _true_class_prob(probs, onehot)
    nll = T.negate(T.log(p))
    if class_weights is not None:
        if len(class_weights) != n_classes or any(w <= 0 for w in class_weights):
            raise ParamError(f"class_weights must be {n_classes} positive floats, got {class_weights!r}")
        weights = np.asarray(class_weights, dtype=np.float64)
        nll = T.mul(T.Tensor((onehot @ weights).astype(probs.dtype)), nll)
    return T.tensor_mean(nll)


def build_loss(name, gamma=DEFAULT_GAMMA, class_weights=DEFAULT_CLASS_WEIGHTS, weighted_ce=True):
    """Return ``loss(probs, labels)`` for a loss named in a config.

    Known names: ``focal`` and ``cross_entropy``. The cross entropy uses
    the class weights only when ``weighted_ce`` is set.
    """
    if name == "focal":
        params = FocalParams(gamma=gamma, class_weights=tuple(class_weights))
        return lambda probs, labels: focal_loss(probs, labels, params)
    if name == "cross_entropy":
        cw = tuple(class_weights) if weighted_ce else None
        return lambda probs, labels: cross_entropy(probs, labels, class_weights=cw)
    raise ParamError(f"unknown loss {name!r}; choose 'focal' or 'cross_entropy'")
