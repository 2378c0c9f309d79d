"""Components of the normed-embedding objective.

All functions take batched embeddings of shape (B, n) (or single vectors) as
Tensors or arrays and return Tensors, so they can be differentiated on a tape.
``anchor_death`` is a boolean per row (an :class:`Outcome` is also accepted).
The squared norm ``d(x) = ||f(x)||^2`` is the risk score throughout.
"""
from __future__ import annotations

import numpy as np

from ..cohort import Outcome
from ..numerics import Tensor, ops
from .config import LossConfig

REDUCTIONS = ("mean", "sum", "none")


def _rows(x) -> Tensor:
    t = x if isinstance(x, Tensor) else Tensor(x)
    return ops.reshape(t, (1, t.shape[0])) if t.ndim == 1 else t


def _death_mask(anchor_death, n: int) -> np.ndarray:
    if isinstance(anchor_death, (Outcome, str)):
        anchor_death = Outcome(anchor_death) is Outcome.DEATH
    mask = np.broadcast_to(np.asarray(anchor_death, dtype=bool), (n,))
    return mask


def _reduce(per_row: Tensor, reduction: str) -> Tensor:
    if reduction == "mean":
        return ops.mean(per_row)
    if reduction == "sum":
        return ops.sum(per_row)
    if reduction == "none":
        return per_row
    raise ValueError(f"reduction must be one of {REDUCTIONS}")


def squared_norm(emb) -> Tensor:
    return ops.norm_sq(emb if isinstance(emb, Tensor) else Tensor(emb))


def loss_terminal(emb_a, anchor_death, lambda1: float = 0.7, reduction: str = "mean") -> Tensor:
    """(d-1)^2 for death anchors, lambda1 * d for release anchors."""
    a = _rows(emb_a)
    death = _death_mask(anchor_death, a.shape[0]).astype(float)
    d = ops.norm_sq(a)
    per_row = ops.add(ops.mul(ops.square(ops.sub(d, 1.0)), death), ops.mul(d, lambda1 * (1.0 - death)))
    return _reduce(per_row, reduction)


def triplet_loss(emb_a, emb_p, emb_n, margin: float = 0.2, reduction: str = "mean") -> Tensor:
    """max(||a-p|| - ||a-n|| + margin, 0)."""
    a, p, n = _rows(emb_a), _rows(emb_p), _rows(emb_n)
    gap = ops.sub(ops.norm(ops.sub(a, p)), ops.norm(ops.sub(a, n)))
    return _reduce(ops.maximum(ops.add(gap, margin), 0.0), reduction)


def cosine_loss(emb_a, emb_p, y_ap, variant: str = "standard", margin: float = 0.05,
                reduction: str = "mean") -> Tensor:
    """Angular loss between a death anchor and its (non-survivor) positive.

    ``standard``: 1 - cos for same-organ pairs, max(0, cos - margin) otherwise.
    ``inner_product``: <a, p> for different-organ pairs, 0 for same-organ pairs.
    The inner-product form can be negative.
    """
    a, p = _rows(emb_a), _rows(emb_p)
    y = np.broadcast_to(np.asarray(y_ap, dtype=float), (a.shape[0],))
    if variant == "standard":
        cos = ops.cosine(a, p)
        same = ops.mul(ops.sub(1.0, cos), y)
        diff = ops.mul(ops.maximum(ops.sub(cos, margin), 0.0), 1.0 - y)
        per_row = ops.add(same, diff)
    elif variant == "inner_product":
        per_row = ops.mul(ops.dot(a, p), 1.0 - y)
    else:
        raise ValueError(f"unknown cosine variant {variant!r}")
    return _reduce(per_row, reduction)


def _scatter_rows(values: Tensor, rows: np.ndarray, n: int) -> Tensor:
    """Place a (k,) tensor at ``rows`` of a zero (n,) vector via a 0/1 matmul."""
    placement = np.zeros((n, len(rows)))
    placement[rows, np.arange(len(rows))] = 1.0
    col = ops.reshape(values, (len(rows), 1))
    return ops.reshape(ops.matmul(placement, col), (n,))


def loss_contrastive(emb_a, emb_p, emb_n, anchor_death, y_ap, config: LossConfig,
                     reduction: str = "mean") -> Tensor:
    """Triplet loss for release anchors, cosine loss for death anchors."""
    a, p, n = _rows(emb_a), _rows(emb_p), _rows(emb_n)
    size = a.shape[0]
    death = _death_mask(anchor_death, size)
    y = np.broadcast_to(np.asarray(y_ap), (size,))
    parts = []
    rel_rows = np.flatnonzero(~death)
    if len(rel_rows):
        rel = triplet_loss(ops.take(a, rel_rows), ops.take(p, rel_rows), ops.take(n, rel_rows),
                           config.triplet_margin, reduction="none")
        parts.append((rel, rel_rows))
    dead_rows = np.flatnonzero(death)
    if len(dead_rows):
        dead = cosine_loss(ops.take(a, dead_rows), ops.take(p, dead_rows), y[dead_rows],
                           config.cosine_variant, config.cosine_margin, reduction="none")
        parts.append((dead, dead_rows))
    if reduction == "none":
        total = None
        for values, rows in parts:
            placed = _scatter_rows(values, rows, size)
            total = placed if total is None else ops.add(total, placed)
        return total
    total = None
    for values, _ in parts:
        s = ops.sum(values)
        total = s if total is None else ops.add(total, s)
    return ops.div(total, size) if reduction == "mean" else total


def loss_intermediate(emb_p, emb_n, emb_a, anchor_death, config: LossConfig,
                      reduction: str = "mean") -> Tensor:
    """Ball penalty plus pulls of near-terminal states toward boundary/origin.

    lambda2 * (d_p [d_p > 1] + d_n [d_n > 1])
    + lambda3 * (death: exp(-alpha d_p), release: exp(-alpha d_n))
    + lambda4 * (death: d_n, release: d_a or d_p per ``lambda4_release_target``)
    """
    p, n, a = _rows(emb_p), _rows(emb_n), _rows(emb_a)
    death = _death_mask(anchor_death, p.shape[0]).astype(float)
    release = 1.0 - death
    dp, dn, da = ops.norm_sq(p), ops.norm_sq(n), ops.norm_sq(a)
    outside = ops.add(ops.mul(dp, (dp.data > 1.0).astype(float)), ops.mul(dn, (dn.data > 1.0).astype(float)))
    decay = ops.add(ops.mul(ops.exp(ops.mul(dp, -config.alpha)), death),
                    ops.mul(ops.exp(ops.mul(dn, -config.alpha)), release))
    release_d = da if config.lambda4_release_target == "anchor" else dp
    origin = ops.add(ops.mul(dn, death), ops.mul(release_d, release))
    per_row = ops.add(ops.add(ops.mul(outside, config.lambda2), ops.mul(decay, config.lambda3)),
                      ops.mul(origin, config.lambda4))
    return _reduce(per_row, reduction)


def loss_components(emb_a, emb_p, emb_n, anchor_death, y_ap, config: LossConfig) -> dict[str, Tensor]:
    """Batch means of the weighted terms; ``total`` is their sum."""
    a = _rows(emb_a)
    size = a.shape[0]
    terminal = loss_terminal(a, anchor_death, config.lambda1, reduction="sum")
    contrastive = loss_contrastive(a, emb_p, emb_n, anchor_death, y_ap, config, reduction="sum")
    intermediate = loss_intermediate(emb_p, emb_n, a, anchor_death, config, reduction="sum")
    parts = {
        "terminal": ops.mul(terminal, config.beta / size),
        "contrastive": ops.mul(contrastive, (1.0 - config.beta) / size),
        "intermediate": ops.mul(intermediate, 1.0 / size),
    }
    parts["total"] = ops.add(ops.add(parts["terminal"], parts["contrastive"]), parts["intermediate"])
    return parts


def total_loss(emb_a, emb_p, emb_n, anchor_death, y_ap, config: LossConfig) -> Tensor:
    """mean over rows of beta*terminal + (1-beta)*contrastive + intermediate."""
    return loss_components(emb_a, emb_p, emb_n, anchor_death, y_ap, config)["total"]
