"""Training objective: RBF binary cross-entropy plus two prototype regularizers."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autograd as ag
from .autograd import Node
from .exceptions import ContractError

LOG_CLAMP = 1e-12


@dataclass
class LossBreakdown:
    rbf: float
    dissimilar: float
    entropy: float
    total: float
    loss_weight: float


def one_hot(labels, num_classes: int) -> np.ndarray:
    labels = np.asarray(labels)
    if labels.ndim != 1:
        raise ContractError(f"labels must be 1-D, got shape {labels.shape}")
    if np.any(labels < 0) or np.any(labels >= num_classes):
        bad = labels[(labels < 0) | (labels >= num_classes)][0]
        raise ContractError(f"label {bad} out of range [0, {num_classes})")
    out = np.zeros((len(labels), num_classes))
    out[np.arange(len(labels)), labels] = 1.0
    return out


def rbf_bce_loss(kernels: Node, labels) -> Node:
    """Batch mean of the per-class binary cross-entropy against one-hot labels.

    Kernel values are clamped to ``[1e-12, 1 - 1e-12]`` inside both logs.
    """
    B, C = kernels.shape
    y = one_hot(labels, C)
    if len(y) != B:
        raise ContractError(f"{len(y)} labels for {B} kernel rows")
    k = ag.clip(kernels, LOG_CLAMP, 1.0 - LOG_CLAMP)
    pos = ag.mul(ag.log(k), y)
    neg = ag.mul(ag.log(ag.add_scalar(ag.neg(k), 1.0)), 1.0 - y)
    return ag.scale(ag.sum_all(ag.add(pos, neg)), -1.0 / B)


def dissimilarity_loss(prototypes: Node) -> Node:
    """Mean pairwise cosine similarity of the prototypes.

    Minimizing it spreads the prototypes apart. Lies in ``[-1, 1]``.
    """
    m = prototypes.shape[0]
    if m < 2:
        raise ContractError(f"dissimilarity needs at least 2 prototypes, got {m}")
    sims = ag.cosine_rows(prototypes, prototypes)
    upper = np.triu(np.ones((m, m)), k=1)
    return ag.scale(ag.sum_all(ag.mul(sims, upper)), 2.0 / (m * (m - 1)))


def entropy_reg_loss(d_p: Node) -> Node:
    """Batch mean of ``sum_k s_k log s_k`` with ``s = softmax(d_p)`` row-wise.

    This is the negative entropy of each row, so it lies in ``[-log m, 0]``
    and minimizing it discourages reliance on a single prototype.
    """
    s = ag.softmax_row(d_p)
    log_s = ag.log_softmax_row(d_p)
    return ag.scale(ag.sum_all(ag.mul(s, log_s)), 1.0 / d_p.shape[0])


def total_loss(
    trace,
    labels,
    loss_weight: float,
    use_dissimilar: bool = True,
    use_entropy: bool = True,
) -> tuple[Node, LossBreakdown]:
    """``rbf + loss_weight * (dissimilar + entropy)``.

    ``use_dissimilar`` / ``use_entropy`` switch individual regularizers off
    for ablations; a disabled term is reported as 0.
    """
    if not 0.0 <= loss_weight <= 1.0:
        raise ContractError(f"loss_weight must be in [0, 1], got {loss_weight}")
    rbf = rbf_bce_loss(trace.kernels, labels)
    terms = []
    dis_val = ent_val = 0.0
    if use_dissimilar:
        dis = dissimilarity_loss(trace.leaves["prototypes"])
        dis_val = dis.item()
        terms.append(dis)
    if use_entropy:
        ent = entropy_reg_loss(trace.d_p)
        ent_val = ent.item()
        terms.append(ent)
    total = rbf
    if terms and loss_weight > 0.0:
        reg = terms[0] if len(terms) == 1 else ag.add(terms[0], terms[1])
        total = ag.add(rbf, ag.scale(reg, loss_weight))
    breakdown = LossBreakdown(
        rbf=rbf.item(),
        dissimilar=dis_val,
        entropy=ent_val,
        total=total.item(),
        loss_weight=loss_weight,
    )
    return total, breakdown


def softmax_cross_entropy(logits: Node, labels) -> Node:
    """Batch mean cross-entropy for the softmax baselines."""
    B, C = logits.shape
    y = one_hot(labels, C)
    return ag.scale(ag.sum_all(ag.mul(ag.log_softmax_row(logits), y)), -1.0 / B)
