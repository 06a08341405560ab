"""Training losses: stable BCE/CE with logits, dice, and the order loss.

The order loss is lam_o * BCE(occlusion logits) + lam_d * CE(depth logits),
averaged per off-diagonal pair, with identical auxiliary copies on every
intermediate decoder layer when auxiliary supervision is on.
"""

from __future__ import annotations

import numpy as np

from . import autograd as ag
from .autograd import Tensor
from .orders import DataError


def _abs(x: Tensor) -> Tensor:
    return ag.relu(x) + ag.relu(-x)


def bce_with_logits(logits: Tensor, targets, weights=None) -> Tensor:
    """Weighted mean of the stable elementwise binary cross-entropy.

    elem = max(x, 0) - x*z + log(1 + exp(-|x|)); weights default to all-ones.
    """
    z = np.asarray(targets, dtype=np.float64)
    elem = ag.relu(logits) - logits * z + ag.log(ag.exp(-_abs(logits)) + 1.0)
    if weights is None:
        return ag.mean(elem.reshape(elem.size))
    w = np.asarray(weights, dtype=np.float64)
    return ag.sum_(elem * w) / float(w.sum())


def ce_with_logits(logits: Tensor, targets, weights=None) -> Tensor:
    """Weighted mean cross-entropy over the last axis, log-sum-exp stabilized."""
    idx = np.asarray(targets, dtype=np.int64)
    shift = logits.data.max(axis=-1, keepdims=True)  # constant shift, gradient-exact
    lse = ag.log(ag.sum_(ag.exp(logits - shift), axis=-1)) + shift[..., 0]
    elem = lse - ag.take_along_last(logits, idx)
    if weights is None:
        return ag.mean(elem.reshape(elem.size))
    w = np.asarray(weights, dtype=np.float64)
    return ag.sum_(elem * w) / float(w.sum())


def dice_loss(mask_logits: Tensor, targets) -> Tensor:
    """1 - mean dice overlap between sigmoid masks and binary targets."""
    probs = ag.sigmoid(mask_logits)
    t = np.asarray(targets, dtype=np.float64)
    inter = ag.sum_(probs * t, axis=-1)
    denom = ag.sum_(probs, axis=-1) + t.sum(axis=-1) + 1e-6
    dice = inter * 2.0 / denom
    return 1.0 - ag.mean(dice)


def _offdiag_weights(n: int) -> np.ndarray:
    w = np.ones((n, n))
    np.fill_diagonal(w, 0.0)
    return w


def _check_gt(entries: np.ndarray, allowed: tuple) -> None:
    n = entries.shape[0]
    off = ~np.eye(n, dtype=bool)
    vals = entries[off]
    if (vals == -1).any():
        raise DataError("ground-truth matrix carries -1 off the diagonal")
    if not np.isin(vals, allowed).all():
        raise DataError(f"ground-truth entries outside {allowed}")


def order_losses(head_out, gt_occ=None, gt_depth=None, lam_o: float = 5.0, lam_d: float = 5.0) -> Tensor:
    """Combined order loss over a HeadOutput, diagonals excluded.

    Auxiliary outputs (``head_out.aux``) are supervised identically and
    summed in; class indices for depth are 0 = not-front, 1 = front,
    2 = overlap, i.e. the matrix entries themselves.
    """
    outputs = [head_out] + list(getattr(head_out, "aux", ()))
    total = None
    for out in outputs:
        term = None
        if out.occ_logits is not None:
            if gt_occ is None:
                raise DataError("occlusion logits produced but no occlusion ground truth given")
            _check_gt(gt_occ.entries, (0, 1))
            n = gt_occ.n
            w = _offdiag_weights(n)
            targets = np.where(np.eye(n, dtype=bool), 0, gt_occ.entries)
            term = bce_with_logits(out.occ_logits, targets, w) * lam_o
        if out.depth_logits is not None:
            if gt_depth is None:
                raise DataError("depth logits produced but no depth ground truth given")
            _check_gt(gt_depth.entries, (0, 1, 2))
            n = gt_depth.n
            w = _offdiag_weights(n)
            targets = np.where(np.eye(n, dtype=bool), 0, gt_depth.entries)
            d_term = ce_with_logits(out.depth_logits, targets, w) * lam_d
            term = d_term if term is None else term + d_term
        if term is None:
            raise DataError("head output carries no task logits")
        total = term if total is None else total + term
    return total
