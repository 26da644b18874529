"""Detection and masked intention losses.

Both accept batched ``(B, H, W, A, ...)`` or single ``(H, W, A, ...)``
tensors. Sums run over grid cells; batches are averaged per sample for
detection and per masked cell for intention.
"""

from __future__ import annotations

import torch
import torch.nn.functional as F

from pedintent.errors import NumericError

LAMBDA_NOOBJ = 0.5
BOX_WEIGHT = 5.0


def _batched(*tensors):
    if tensors[0].dim() == 4:
        return [t.unsqueeze(0) for t in tensors]
    return list(tensors)


def detection_loss(raw, target, n_classes: int = 4, lambda_noobj: float = LAMBDA_NOOBJ, box_weight: float = BOX_WEIGHT):
    """Return ``(total, terms)`` where ``terms`` holds objectness, class and box parts."""
    if raw.shape != target.shape:
        raise ValueError(f"shape mismatch {tuple(raw.shape)} vs {tuple(target.shape)}")
    if not torch.isfinite(raw).all():
        raise NumericError("non-finite detector output")
    raw, target = _batched(raw, target)
    nc = n_classes
    obj_t = target[..., 0]
    bce = F.binary_cross_entropy_with_logits(raw[..., 0], obj_t, reduction="none")
    weight = obj_t + lambda_noobj * (1.0 - obj_t)
    obj_term = (weight * bce).flatten(1).sum(1)

    log_p = F.log_softmax(raw[..., 1 : 1 + nc], dim=-1)
    cls_term = -(obj_t[..., None] * target[..., 1 : 1 + nc] * log_p).flatten(1).sum(1)

    pred_box = torch.cat([torch.sigmoid(raw[..., 1 + nc : 3 + nc]), raw[..., 3 + nc : 5 + nc]], dim=-1)
    sq = (pred_box - target[..., 1 + nc : 5 + nc]) ** 2
    box_term = box_weight * (obj_t[..., None] * sq).flatten(1).sum(1)

    terms = {"objectness": obj_term.mean(), "class": cls_term.mean(), "box": box_term.mean()}
    total = terms["objectness"] + terms["class"] + terms["box"]
    return total, terms


def intent_loss(logits, target, mask):
    """Two-class softmax cross entropy summed over masked cells, divided by
    the mask count. An empty mask gives exactly zero loss and gradient."""
    if logits.shape != target.shape or logits.shape[:-1] != mask.shape:
        raise ValueError("intent logits, target and mask shapes disagree")
    ce = -(target * F.log_softmax(logits, dim=-1)).sum(-1)
    count = mask.sum()
    total = (mask * ce).sum()
    if count.item() == 0:
        return total * 0.0
    return total / count
